//! Command-line front end.
//!
//! Every subcommand accepts `--config FILE`, a `key=value` file whose entries
//! act as flags placed before the command-line ones, so explicit flags win.
//! Exit codes: 0 on success, 1 on usage errors, 2 on data or model errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::error::{Error, Result, StageExt};
use crate::explore::{self, DateHistogram, StationAccumulator};
use crate::ftrl::FtrlConfig;
use crate::gbt::{self, Ensemble, GbtConfig};
use crate::ingest::{DatasetFiles, RowSource};
use crate::metrics;
use crate::pipeline::{self, PipelineConfig};
use crate::synth::{self, SynthConfig};
use crate::util::{derive_seed, fmt_num};

#[derive(Debug, Parser)]
#[command(
    name = "failpred",
    version,
    about = "Rare-event failure prediction for production-line data",
    args_override_self = true,
    propagate_version = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted ground truth
    Synth(SynthArgs),
    /// Station statistics, flow-path census and date periodicity
    Explore(ExploreArgs),
    /// Out-of-fold FTRL probability from the categorical columns
    Stack(StackArgs),
    /// Rank columns with a preliminary boosted model and keep the top k
    Select(SelectArgs),
    /// Fit a boosted-tree model
    Train(TrainArgs),
    /// Score rows with a fitted model
    Predict(PredictArgs),
    /// AUC, log-loss, MCC sweep and decile lift of a score file
    Evaluate(EvaluateArgs),
    /// Pick the score cutoff with the highest MCC
    Tune(TuneArgs),
    /// Run stacking, selection, out-of-fold boosting and tuning end to end
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Master seed; every stage derives its own seed from it
    #[arg(long, default_value_t = 2016)]
    pub seed: u64,
    /// Worker threads for split search; -1 uses every core
    #[arg(long, default_value_t = -1, allow_negative_numbers = true)]
    pub threads: i32,
    /// key=value file merged beneath the command-line flags
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FtrlArgs {
    /// FTRL per-coordinate learning rate
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// FTRL learning-rate smoothing
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// FTRL L1 penalty
    #[arg(long, default_value_t = 1.0)]
    pub l1: f64,
    /// FTRL L2 penalty
    #[arg(long, default_value_t = 1.0)]
    pub l2: f64,
    /// Hash space size as a power of two
    #[arg(long, default_value_t = 28)]
    pub hash_bits: u32,
    /// Passes over the training rows
    #[arg(long, default_value_t = 1)]
    pub ftrl_epochs: usize,
}

impl FtrlArgs {
    fn config(&self) -> FtrlConfig {
        FtrlConfig {
            alpha: self.alpha,
            beta: self.beta,
            lambda1: self.l1,
            lambda2: self.l2,
            hash_bits: self.hash_bits,
            epochs: self.ftrl_epochs,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GbtArgs {
    /// Shrinkage applied to every tree
    #[arg(long, default_value_t = 0.01)]
    pub learning_rate: f64,
    /// Number of boosting rounds
    #[arg(long, default_value_t = 100)]
    pub n_estimators: usize,
    /// Maximum tree depth
    #[arg(long, default_value_t = 7)]
    pub max_depth: usize,
    /// Minimum hessian sum in each child
    #[arg(long, default_value_t = 5.0)]
    pub min_child_weight: f64,
    /// L2 penalty on leaf values
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Minimum gain to keep a split
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    /// Row fraction sampled per tree
    #[arg(long, default_value_t = 1.0)]
    pub subsample_rows: f64,
    /// Column fraction sampled per tree
    #[arg(long, default_value_t = 1.0)]
    pub subsample_cols: f64,
    /// Early-stopping patience in rounds, used with a validation set
    #[arg(long, default_value_t = 10)]
    pub early_stopping_rounds: usize,
}

impl GbtArgs {
    fn config(&self, seed: u64, threads: i32) -> GbtConfig {
        GbtConfig {
            learning_rate: self.learning_rate,
            n_estimators: self.n_estimators,
            max_depth: self.max_depth,
            min_child_weight: self.min_child_weight,
            lambda_leaf: self.lambda,
            gamma: self.gamma,
            subsample_rows: self.subsample_rows,
            subsample_cols: self.subsample_cols,
            seed,
            early_stopping_rounds: self.early_stopping_rounds,
            threads,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PrelimArgs {
    /// Shrinkage of the feature-ranking model
    #[arg(long, default_value_t = 0.1)]
    pub prelim_learning_rate: f64,
    /// Rounds of the feature-ranking model
    #[arg(long, default_value_t = 100)]
    pub prelim_n_estimators: usize,
    /// Depth of the feature-ranking model
    #[arg(long, default_value_t = 3)]
    pub prelim_max_depth: usize,
    /// Minimum child hessian of the feature-ranking model
    #[arg(long, default_value_t = 1.0)]
    pub prelim_min_child_weight: f64,
    /// Number of columns to keep
    #[arg(long, default_value_t = 200)]
    pub k: usize,
    /// Rows sampled to rank columns
    #[arg(long, default_value_t = 100_000)]
    pub sample_size: usize,
}

impl PrelimArgs {
    fn config(&self, seed: u64, threads: i32) -> GbtConfig {
        GbtConfig {
            learning_rate: self.prelim_learning_rate,
            n_estimators: self.prelim_n_estimators,
            max_depth: self.prelim_max_depth,
            min_child_weight: self.prelim_min_child_weight,
            seed,
            threads,
            early_stopping_rounds: 0,
            ..GbtConfig::preliminary()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Training rows
    #[arg(long, default_value_t = 50_000)]
    pub rows: usize,
    /// Test rows
    #[arg(long, default_value_t = 50_000)]
    pub test_rows: usize,
    /// Target share of failing parts
    #[arg(long, default_value_t = 0.006)]
    pub positive_rate: f64,
    /// Production lines
    #[arg(long, default_value_t = 4)]
    pub lines: u32,
    /// Stations across all lines
    #[arg(long, default_value_t = 52)]
    pub stations: u32,
    /// Numeric columns
    #[arg(long, default_value_t = 60)]
    pub numeric: usize,
    /// Date columns
    #[arg(long, default_value_t = 40)]
    pub date: usize,
    /// Categorical columns
    #[arg(long, default_value_t = 30)]
    pub categorical: usize,
    /// Distinct station paths
    #[arg(long, default_value_t = 24)]
    pub flow_paths: usize,
    /// Emit full production-scale column counts
    #[arg(long)]
    pub bosch_shape: bool,
    /// Failure probability forced on rows with the fixed category (rule off when unset)
    #[arg(long)]
    pub fixed_category_p: Option<f64>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ExploreArgs {
    /// Directory holding the source files
    #[arg(long)]
    pub train_dir: PathBuf,
    /// File-name prefix of the source files
    #[arg(long, default_value = "train")]
    pub prefix: String,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Bucket width of the record-count series
    #[arg(long, default_value_t = 0.01)]
    pub tick: f64,
    /// Bucket width of the series fed to the autocorrelation
    #[arg(long, default_value_t = 0.25)]
    pub acf_tick: f64,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct StackArgs {
    /// Directory holding train_*.csv
    #[arg(long)]
    pub train_dir: PathBuf,
    /// Directory holding test_*.csv
    #[arg(long)]
    pub test_dir: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Stacking folds
    #[arg(long, default_value_t = 2)]
    pub stack_folds: usize,
    #[command(flatten)]
    pub ftrl: FtrlArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SelectArgs {
    /// Directory holding train_*.csv
    #[arg(long)]
    pub train_dir: PathBuf,
    /// stacked_train.csv from `stack`; omit to leave the stacked column out
    #[arg(long)]
    pub stacked: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub prelim: PrelimArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Directory holding train_*.csv
    #[arg(long)]
    pub train_dir: PathBuf,
    /// stacked_train.csv from `stack`
    #[arg(long)]
    pub stacked: Option<PathBuf>,
    /// Column list from `select`; all columns when omitted
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub gbt: GbtArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    /// Model file from `train`
    #[arg(long)]
    pub model: PathBuf,
    /// Directory holding the rows to score
    #[arg(long)]
    pub test_dir: PathBuf,
    /// File-name prefix of the rows to score
    #[arg(long, default_value = "test")]
    pub prefix: String,
    /// Stacked values for the scored rows
    #[arg(long)]
    pub stacked: Option<PathBuf>,
    /// Add a flag column for scores at or above this cutoff
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Output CSV
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// CSV with Id and score columns
    #[arg(long)]
    pub scores: PathBuf,
    /// CSV with Id and a label or Response column
    #[arg(long)]
    pub labels: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TuneArgs {
    /// CSV with Id and score columns
    #[arg(long)]
    pub scores: PathBuf,
    /// CSV with Id and a label or Response column
    #[arg(long)]
    pub labels: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Directory holding train_*.csv
    #[arg(long)]
    pub train_dir: PathBuf,
    /// Directory holding test_*.csv
    #[arg(long)]
    pub test_dir: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Stacking folds
    #[arg(long, default_value_t = 2)]
    pub stack_folds: usize,
    /// Out-of-fold folds
    #[arg(long, default_value_t = 3)]
    pub oof_folds: usize,
    /// Leave the stacked categorical column out
    #[arg(long)]
    pub no_stack: bool,
    /// Score test rows with the mean of the fold models instead of a refit
    #[arg(long)]
    pub average_folds: bool,
    /// Stop each fold when its held-out log-loss stops improving
    #[arg(long)]
    pub early_stopping: bool,
    #[command(flatten)]
    pub ftrl: FtrlArgs,
    #[command(flatten)]
    pub gbt: GbtArgs,
    #[command(flatten)]
    pub prelim: PrelimArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Splice the entries of any `--config FILE` into `argv` right after the
/// subcommand, so that later command-line flags override them.
fn expand_config(argv: Vec<String>) -> std::result::Result<Vec<String>, String> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else if a == "--config" {
            path = argv.get(i + 1).cloned();
        }
    }
    let Some(path) = path else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).map_err(|e| format!("cannot read config {path}: {e}"))?;
    let mut extra = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("{path}:{}: expected key=value", n + 1))?;
        let key = k.trim().trim_start_matches('-').replace('_', "-");
        let v = v.trim();
        match v {
            "true" => extra.push(format!("--{key}")),
            "false" => {}
            _ => extra.push(format!("--{key}={v}")),
        }
    }
    let sub = argv
        .iter()
        .skip(1)
        .position(|a| !a.starts_with('-'))
        .map_or(argv.len(), |i| i + 2);
    let mut out = argv[..sub.min(argv.len())].to_vec();
    out.extend(extra);
    out.extend(argv[sub.min(argv.len())..].iter().cloned());
    Ok(out)
}

/// Parse `argv` (including the program name), run it and return the exit code.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 1;
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn echo(name: &str, args: &impl std::fmt::Debug, common: &CommonArgs) {
    eprintln!("failpred {name}: {args:?}");
    eprintln!("failpred {name}: master seed {}, threads {}", common.seed, common.threads);
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => run_synth(&a),
        Command::Explore(a) => run_explore(&a),
        Command::Stack(a) => run_stack(&a),
        Command::Select(a) => run_select(&a),
        Command::Train(a) => run_train(&a),
        Command::Predict(a) => run_predict(&a),
        Command::Evaluate(a) => run_evaluate(&a),
        Command::Tune(a) => run_tune(&a),
        Command::Pipeline(a) => run_pipeline(&a),
    }
}

fn run_synth(a: &SynthArgs) -> Result<()> {
    echo("synth", a, &a.common);
    let mut cfg = SynthConfig {
        seed: a.common.seed,
        n_rows: a.rows,
        n_test_rows: a.test_rows,
        positive_rate: a.positive_rate,
        n_lines: a.lines,
        n_stations: a.stations,
        n_numeric: a.numeric,
        n_date: a.date,
        n_categorical: a.categorical,
        n_flow_paths: a.flow_paths,
        fixed_category_p: a.fixed_category_p,
        ..SynthConfig::default()
    };
    if a.bosch_shape {
        cfg = cfg.bosch_shape();
    }
    let data = synth::generate(&cfg).stage("synth")?;
    let out = data.write(&a.out).stage("synth")?;
    eprintln!(
        "failpred synth: {} train rows (positive rate {}), {} test rows -> {}",
        data.train.len(),
        fmt_num(data.manifest.achieved_positive_rate_train),
        data.test.len(),
        out.dir.display()
    );
    Ok(())
}

fn run_explore(a: &ExploreArgs) -> Result<()> {
    echo("explore", a, &a.common);
    let files = DatasetFiles::in_dir(&a.train_dir, &a.prefix).stage("ingest")?;
    let mut stations = StationAccumulator::default();
    let mut census: BTreeMap<explore::FlowPath, u64> = BTreeMap::new();
    let mut counts = DateHistogram::new(a.tick).stage("explore")?;
    let mut coarse = DateHistogram::new(a.acf_tick).stage("explore")?;
    let mut n_rows = 0u64;
    for row in files.rows().stage("ingest")? {
        let row = row.stage("ingest")?;
        stations.add(&row).stage("explore")?;
        *census.entry(explore::flow_path(&row)).or_insert(0) += 1;
        counts.add(&row);
        coarse.add(&row);
        n_rows += 1;
    }
    ensure_dir(&a.out)?;

    let mut s = String::from("station,n_features,n_parts,n_failures,error_rate\n");
    for st in stations.station_stats() {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            st.station,
            st.n_features_nonzero,
            st.n_parts,
            st.n_failures,
            fmt_num(st.error_rate)
        );
    }
    write_text(&a.out.join("stations.csv"), &s)?;

    let mut s = String::from("line,error_rate\n");
    for (line, rate) in stations.line_error_rates() {
        let _ = writeln!(s, "{line},{}", fmt_num(rate));
    }
    write_text(&a.out.join("lines.csv"), &s)?;

    let mut paths: Vec<(&explore::FlowPath, &u64)> = census.iter().collect();
    paths.sort_by(|x, y| y.1.cmp(x.1).then(x.0.cmp(y.0)));
    let mut s = String::from("path,count\n");
    for (p, n) in &paths {
        let _ = writeln!(s, "{p},{n}");
    }
    write_text(&a.out.join("flowpaths.csv"), &s)?;

    let series = counts.series();
    let mut s = String::from("tick,count\n");
    for (t, c) in &series {
        let _ = writeln!(s, "{},{c}", fmt_num(*t));
    }
    write_text(&a.out.join("record_counts.csv"), &s)?;

    let mut summary = format!("n_rows={n_rows}\nn_flow_paths={}\ntick={}\nacf_tick={}\n", census.len(), a.tick, a.acf_tick);
    match explore::period_report(&coarse.series(), a.acf_tick) {
        Ok(report) => {
            let mut s = String::from("lag,value\n");
            for (lag, r) in &report.autocorrelation {
                let _ = writeln!(s, "{},{}", fmt_num(*lag), fmt_num(*r));
            }
            write_text(&a.out.join("acf.csv"), &s)?;
            let _ = writeln!(summary, "dominant_period={}", fmt_num(report.dominant_period));
            let _ = writeln!(summary, "secondary_period={}", fmt_num(report.secondary_period));
        }
        Err(e) => {
            let _ = writeln!(summary, "periods=unavailable ({e})");
        }
    }
    write_text(&a.out.join("periods.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn run_stack(a: &StackArgs) -> Result<()> {
    echo("stack", a, &a.common);
    let seed = derive_seed(a.common.seed, "stack.folds");
    eprintln!("failpred stack: seed stack.folds={seed}");
    let train = DatasetFiles::in_dir(&a.train_dir, "train").stage("ingest")?;
    let test = match &a.test_dir {
        Some(d) => Some(DatasetFiles::in_dir(d, "test").stage("ingest")?),
        None => None,
    };
    let s = pipeline::stack_categorical(
        &train,
        test.as_ref().map(|t| t as &dyn RowSource),
        &a.ftrl.config(),
        a.stack_folds,
        seed,
    )
    .stage("stack")?;
    ensure_dir(&a.out)?;
    pipeline::write_stacked(&a.out.join("stacked_train.csv"), &s.train)?;
    if let Some(t) = &s.test {
        pipeline::write_stacked(&a.out.join("stacked_test.csv"), t)?;
    }
    for (m, model) in s.models.iter().enumerate() {
        model.save(&a.out.join(format!("ftrl_model_{m}.txt")))?;
    }
    let summary = format!(
        "holdout_log_loss={}\nholdout_auc={}\n",
        fmt_num(s.holdout_log_loss),
        s.holdout_auc.map_or("NA".into(), fmt_num)
    );
    write_text(&a.out.join("stack_metrics.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

/// Stacked values by id when a file is given.
fn stacked_lookup(path: Option<&Path>) -> Result<Option<std::collections::HashMap<u64, f64>>> {
    path.map(pipeline::read_stacked).transpose()
}

fn run_select(a: &SelectArgs) -> Result<()> {
    echo("select", a, &a.common);
    let train = DatasetFiles::in_dir(&a.train_dir, "train").stage("ingest")?;
    let stacked = stacked_lookup(a.stacked.as_deref()).stage("select")?;
    let space = pipeline::FeatureSpace::new(&train.schemas().stage("ingest")?, stacked.is_some());
    let full = space.projector(None).stage("select")?;
    let mut n = 0usize;
    for row in train.rows().stage("ingest")? {
        row.stage("ingest")?;
        n += 1;
    }
    let positions = pipeline::sample_positions(n, a.prelim.sample_size, derive_seed(a.common.seed, "select.sample"));
    let mut keep = vec![false; n];
    positions.iter().for_each(|&p| keep[p] = true);
    let lookup = |_: usize, id: u64| stacked.as_ref().and_then(|m| m.get(&id).copied());
    let data = pipeline::build_dataset(&train, &full, &lookup, &|p| keep[p]).stage("select")?;
    let labels = data.labels.ok_or(Error::MissingLabel(0)).stage("select")?;
    let cfg = a.prelim.config(derive_seed(a.common.seed, "select.gbt"), a.common.threads);
    let prelim = gbt::fit(&data.matrix, &labels, &cfg).stage("select")?;
    let selected = gbt::rank_features(&prelim, a.prelim.k);
    ensure_dir(&a.out)?;
    pipeline::write_lines(&a.out.join("selected_features.txt"), &selected)?;
    pipeline::write_importance(&a.out.join("selection_importance.csv"), &gbt::feature_importance(&prelim))?;
    eprintln!("failpred select: kept {} of {} columns", selected.len(), space.width());
    Ok(())
}

fn run_train(a: &TrainArgs) -> Result<()> {
    echo("train", a, &a.common);
    let train = DatasetFiles::in_dir(&a.train_dir, "train").stage("ingest")?;
    let stacked = stacked_lookup(a.stacked.as_deref()).stage("train")?;
    let space = pipeline::FeatureSpace::new(&train.schemas().stage("ingest")?, stacked.is_some());
    let features = a.features.as_deref().map(pipeline::read_lines).transpose().stage("train")?;
    let projector = space.projector(features.as_deref()).stage("train")?;
    let lookup = |_: usize, id: u64| stacked.as_ref().and_then(|m| m.get(&id).copied());
    let data = pipeline::build_dataset(&train, &projector, &lookup, &|_| true).stage("train")?;
    let labels = data.labels.ok_or(Error::MissingLabel(0)).stage("train")?;
    let cfg = a.gbt.config(derive_seed(a.common.seed, "final.gbt"), a.common.threads);
    let model = gbt::fit(&data.matrix, &labels, &cfg).stage("train")?;
    ensure_dir(&a.out)?;
    model.save(&a.out.join("gbt_model.txt"))?;
    pipeline::write_importance(&a.out.join("feature_importance.csv"), &gbt::feature_importance(&model))?;
    eprintln!("failpred train: {} trees on {} rows", model.n_trees(), data.ids.len());
    Ok(())
}

fn run_predict(a: &PredictArgs) -> Result<()> {
    echo("predict", a, &a.common);
    let model = Ensemble::load(&a.model).stage("predict")?;
    let files = DatasetFiles::in_dir(&a.test_dir, &a.prefix).stage("ingest")?;
    let stacked = stacked_lookup(a.stacked.as_deref()).stage("predict")?;
    let space = pipeline::FeatureSpace::new(
        &files.schemas().stage("ingest")?,
        model.feature_names.iter().any(|n| n == pipeline::STACKED_FEATURE),
    );
    let projector = space.projector(Some(&model.feature_names)).stage("predict")?;
    let lookup = |_: usize, id: u64| stacked.as_ref().and_then(|m| m.get(&id).copied());
    let data = pipeline::build_dataset(&files, &projector, &lookup, &|_| true).stage("predict")?;
    let scores = gbt::predict_scores(&model, &data.matrix).stage("predict")?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    pipeline::write_predictions(&a.out, &data.ids, &scores, a.threshold)?;
    Ok(())
}

fn load_scored(scores: &Path, labels: &Path) -> Result<(Vec<u64>, Vec<f64>, Vec<u8>)> {
    let (ids, s) = pipeline::read_scores(scores)?;
    let y = pipeline::align_labels(&ids, &pipeline::read_labels(labels)?)?;
    Ok((ids, s, y))
}

fn run_evaluate(a: &EvaluateArgs) -> Result<()> {
    echo("evaluate", a, &a.common);
    let (_, scores, labels) = load_scored(&a.scores, &a.labels).stage("evaluate")?;
    let auc = metrics::auc(&scores, &labels).stage("evaluate")?;
    let log_loss = metrics::log_loss(&scores, &labels).stage("evaluate")?;
    let threshold = pipeline::tune_threshold(&scores, &labels).stage("evaluate")?;
    ensure_dir(&a.out)?;
    let mut s = String::new();
    let _ = writeln!(s, "n_rows={}", scores.len());
    let _ = writeln!(s, "n_positives={}", labels.iter().filter(|&&y| y == 1).count());
    let _ = writeln!(s, "auc={}", fmt_num(auc));
    let _ = writeln!(s, "log_loss={}", fmt_num(log_loss));
    let _ = writeln!(s, "best_threshold={}", fmt_num(threshold.best_threshold));
    let _ = writeln!(s, "best_mcc={}", fmt_num(threshold.best_mcc));
    let _ = writeln!(s, "n_flagged={}", threshold.n_flagged);
    if let Ok(lift) = metrics::decile_lift(&scores, &labels) {
        pipeline::write_lift(&a.out.join("lift.csv"), &lift)?;
        let _ = writeln!(s, "top_decile_capture={}", fmt_num(lift.rows[0].cumulative_capture));
    }
    pipeline::write_threshold_curve(&a.out.join("threshold_curve.csv"), &threshold)?;
    write_text(&a.out.join("metrics.txt"), &s)?;
    print!("{s}");
    Ok(())
}

fn run_tune(a: &TuneArgs) -> Result<()> {
    echo("tune", a, &a.common);
    let (_, scores, labels) = load_scored(&a.scores, &a.labels).stage("tune")?;
    let t = pipeline::tune_threshold(&scores, &labels).stage("tune")?;
    ensure_dir(&a.out)?;
    pipeline::write_threshold_curve(&a.out.join("threshold_curve.csv"), &t)?;
    let s = format!(
        "best_threshold={}\nbest_mcc={}\nn_flagged={}\n",
        fmt_num(t.best_threshold),
        fmt_num(t.best_mcc),
        t.n_flagged
    );
    write_text(&a.out.join("threshold.txt"), &s)?;
    print!("{s}");
    Ok(())
}

fn run_pipeline(a: &PipelineArgs) -> Result<()> {
    echo("pipeline", a, &a.common);
    let cfg = PipelineConfig {
        seed: a.common.seed,
        ftrl: a.ftrl.config(),
        gbt: a.gbt.config(0, a.common.threads),
        prelim: a.prelim.config(0, a.common.threads),
        stack_folds: a.stack_folds,
        oof_folds: a.oof_folds,
        top_k: a.prelim.k,
        sample_size: a.prelim.sample_size,
        use_stacked: !a.no_stack,
        average_folds: a.average_folds,
        early_stopping: a.early_stopping,
        threads: a.common.threads,
    };
    for (name, seed) in cfg.stage_seeds() {
        eprintln!("failpred pipeline: seed {name}={seed}");
    }
    let train = DatasetFiles::in_dir(&a.train_dir, "train").stage("ingest")?;
    let test = match &a.test_dir {
        Some(d) => Some(DatasetFiles::in_dir(d, "test").stage("ingest")?),
        None => None,
    };
    let report = pipeline::run_full_pipeline(&train, test.as_ref().map(|t| t as &dyn RowSource), &cfg)?;
    pipeline::write_artifacts(&report, &a.out).stage("write")?;
    for (stage, secs) in &report.stage_seconds {
        eprintln!("failpred pipeline: {stage} took {secs:.1}s");
    }
    print!("{}", pipeline::metrics_json(&report));
    Ok(())
}

/// Every long flag of every subcommand, as `(subcommand, flag)`.
pub fn flag_census() -> Vec<(String, String)> {
    let cmd = Cli::command();
    let mut out = Vec::new();
    for sub in cmd.get_subcommands() {
        for arg in sub.get_arguments() {
            if let Some(long) = arg.get_long() {
                out.push((sub.get_name().to_string(), long.to_string()));
            }
        }
    }
    out
}
