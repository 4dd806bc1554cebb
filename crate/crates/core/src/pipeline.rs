//! The two-stage failure model end to end.
//!
//! Stage one compresses every categorical column into a single out-of-fold
//! probability from hashed FTRL models. Stage two assembles that probability
//! with the numeric and date columns and a `time_diff` column, keeps the most
//! important columns under a preliminary boosted model, scores every training
//! row out of fold, and picks the MCC-optimal cutoff on those scores.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result, StageExt};
use crate::explore::time_diff;
use crate::ftrl::{featurize, FtrlConfig, FtrlState};
use crate::gbt::{self, DenseMatrix, Ensemble, FeatureImportance, GbtConfig, Validation};
use crate::ingest::{assign_fold, balanced_fold, RowSource, SchemaSet, SparseRow};
use crate::metrics::{self, auc, mcc, mcc_cmp, row_log_loss, Confusion, LiftTable};
use crate::util::{derive_seed, fmt_num, sigmoid};

pub const STACKED_FEATURE: &str = "ftrl_cat_prob";
pub const TIME_DIFF_FEATURE: &str = "time_diff";

/// Column layout of the assembled matrix: numeric columns, date columns,
/// `time_diff`, then the stacked probability when present.
#[derive(Debug, Clone)]
pub struct FeatureSpace {
    names: Vec<String>,
    with_stacked: bool,
}

impl FeatureSpace {
    pub fn new(schemas: &SchemaSet, with_stacked: bool) -> Self {
        let mut names: Vec<String> = schemas
            .features(crate::FeatureKind::Numeric)
            .iter()
            .chain(schemas.features(crate::FeatureKind::Date))
            .map(|f| f.raw_name.clone())
            .collect();
        names.push(TIME_DIFF_FEATURE.into());
        if with_stacked {
            names.push(STACKED_FEATURE.into());
        }
        FeatureSpace { names, with_stacked }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn with_stacked(&self) -> bool {
        self.with_stacked
    }

    /// Projection onto `selected` (in that order), or onto the whole space.
    pub fn projector(&self, selected: Option<&[String]>) -> Result<Projector> {
        let names: Vec<String> = match selected {
            Some(sel) => {
                for s in sel {
                    if !self.names.contains(s) {
                        return Err(Error::UnknownFeature(s.clone()));
                    }
                }
                sel.to_vec()
            }
            None => self.names.clone(),
        };
        let mut targets = HashMap::new();
        let mut time_diff = None;
        let mut stacked = None;
        for (i, n) in names.iter().enumerate() {
            match n.as_str() {
                TIME_DIFF_FEATURE => time_diff = Some(i),
                STACKED_FEATURE => stacked = Some(i),
                _ => {
                    targets.insert(n.clone(), i);
                }
            }
        }
        Ok(Projector {
            names,
            targets,
            time_diff,
            stacked,
        })
    }
}

/// Maps sparse rows to dense vectors over a fixed column list.
#[derive(Debug, Clone)]
pub struct Projector {
    names: Vec<String>,
    targets: HashMap<String, usize>,
    time_diff: Option<usize>,
    stacked: Option<usize>,
}

impl Projector {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn needs_stacked(&self) -> bool {
        self.stacked.is_some()
    }

    /// Dense vector of `row`; absent cells are NaN.
    pub fn project(&self, row: &SparseRow, stacked: Option<f64>) -> Vec<f64> {
        let mut out = vec![f64::NAN; self.names.len()];
        for (f, v) in row.numeric.iter().chain(&row.date) {
            if let Some(&i) = self.targets.get(f.raw_name.as_str()) {
                out[i] = *v;
            }
        }
        if let Some(i) = self.time_diff {
            out[i] = time_diff(row).unwrap_or(f64::NAN);
        }
        if let (Some(i), Some(s)) = (self.stacked, stacked) {
            out[i] = s;
        }
        out
    }
}

/// Dense feature vector of one row.
pub fn assemble_features(
    space: &FeatureSpace,
    row: &SparseRow,
    stacked: Option<f64>,
    selected: Option<&[String]>,
) -> Result<Vec<f64>> {
    Ok(space.projector(selected)?.project(row, stacked))
}

/// Per-row stacked probability of one dataset, in stream order.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedFeature {
    pub ids: Vec<u64>,
    pub values: Vec<f64>,
    /// Fold of each training row; the row's value comes from the model that skipped this fold.
    pub folds: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct Stacking {
    pub train: StackedFeature,
    pub test: Option<StackedFeature>,
    pub labels: Vec<u8>,
    /// Model `m` learned every row outside fold `m`.
    pub models: Vec<FtrlState>,
    pub holdout_log_loss: f64,
    pub holdout_auc: Option<f64>,
}

/// Out-of-fold categorical probability for every training row, and the mean
/// of all fold models for every test row.
pub fn stack_categorical(
    train: &dyn RowSource,
    test: Option<&dyn RowSource>,
    config: &FtrlConfig,
    k: usize,
    seed: u64,
) -> Result<Stacking> {
    balanced_fold(0, k, seed)?;
    let mut models = (0..k)
        .map(|_| FtrlState::new(config.clone()))
        .collect::<Result<Vec<_>>>()?;
    let dim = config.dim();
    for _ in 0..config.epochs {
        for (pos, row) in train.rows()?.enumerate() {
            let row = row?;
            let y = row.require_label()?;
            let fold = balanced_fold(pos as u64, k, seed)?;
            let x = featurize(&row, dim);
            for (m, model) in models.iter_mut().enumerate() {
                if m != fold {
                    model.update(&x, y);
                }
            }
        }
    }

    let (mut ids, mut values, mut folds, mut labels) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (pos, row) in train.rows()?.enumerate() {
        let row = row?;
        let fold = balanced_fold(pos as u64, k, seed)?;
        ids.push(row.id);
        labels.push(row.require_label()?);
        values.push(models[fold].predict(&featurize(&row, dim)));
        folds.push(fold);
    }
    if ids.is_empty() {
        return Err(Error::EmptyData("no training rows"));
    }
    let holdout_log_loss =
        values.iter().zip(&labels).map(|(&p, &y)| row_log_loss(p, y)).sum::<f64>() / values.len() as f64;
    let holdout_auc = auc(&values, &labels).ok();

    let test = match test {
        Some(source) => {
            let (mut ids, mut values) = (Vec::new(), Vec::new());
            for row in source.rows()? {
                let row = row?;
                let x = featurize(&row, dim);
                ids.push(row.id);
                values.push(models.iter().map(|m| m.predict(&x)).sum::<f64>() / k as f64);
            }
            Some(StackedFeature {
                ids,
                values,
                folds: None,
            })
        }
        None => None,
    };
    Ok(Stacking {
        train: StackedFeature {
            ids,
            values,
            folds: Some(folds),
        },
        test,
        labels,
        models,
        holdout_log_loss,
        holdout_auc,
    })
}

/// Dense rows of a source with their ids and, when every row has one, labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub matrix: DenseMatrix,
    pub ids: Vec<u64>,
    pub labels: Option<Vec<u8>>,
}

/// Densify the rows of `source` whose stream position passes `keep`.
/// `stacked(position, id)` supplies the stacked value when the projector needs one.
pub fn build_dataset(
    source: &dyn RowSource,
    projector: &Projector,
    stacked: &dyn Fn(usize, u64) -> Option<f64>,
    keep: &dyn Fn(usize) -> bool,
) -> Result<Dataset> {
    let mut matrix = DenseMatrix::new(projector.names().to_vec());
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut all_labeled = true;
    for (pos, row) in source.rows()?.enumerate() {
        if !keep(pos) {
            continue;
        }
        let row = row?;
        let s = if projector.needs_stacked() {
            Some(stacked(pos, row.id).ok_or_else(|| {
                Error::InvalidConfig(format!("no {STACKED_FEATURE} value for Id {}", row.id))
            })?)
        } else {
            None
        };
        matrix.push_row(&projector.project(&row, s))?;
        ids.push(row.id);
        match row.label {
            Some(y) => labels.push(y),
            None => all_labeled = false,
        }
    }
    Ok(Dataset {
        matrix,
        ids,
        labels: all_labeled.then_some(labels),
    })
}

/// Sorted positions of a seeded uniform sample of `size` rows out of `n`.
pub fn sample_positions(n: usize, size: usize, seed: u64) -> Vec<usize> {
    if size >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = sample(&mut rng, n, size).into_vec();
    v.sort_unstable();
    v
}

#[derive(Debug, Clone)]
pub struct OofPredictions {
    pub scores: Vec<f64>,
    pub folds: Vec<usize>,
    /// Held-out AUC of each fold; absent when the fold holds one class.
    pub fold_auc: Vec<Option<f64>>,
    pub pooled_auc: Option<f64>,
    pub auc_mean: Option<f64>,
    pub auc_std: Option<f64>,
    pub models: Vec<Ensemble>,
    pub best_rounds: Vec<Option<usize>>,
}

/// Score every row with the model trained on the other `k - 1` folds.
/// Folds are a keyed hash of the row id.
pub fn cross_validate_oof(
    matrix: &DenseMatrix,
    labels: &[u8],
    ids: &[u64],
    config: &GbtConfig,
    k: usize,
    seed: u64,
    early_stopping: bool,
) -> Result<OofPredictions> {
    if ids.len() != matrix.n_rows() || labels.len() != matrix.n_rows() {
        return Err(Error::LengthMismatch {
            left: matrix.n_rows(),
            right: ids.len().min(labels.len()),
        });
    }
    let folds = ids
        .iter()
        .map(|&id| assign_fold(id, k, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (r, &f) in folds.iter().enumerate() {
        members[f].push(r);
    }
    if let Some(j) = members.iter().position(Vec::is_empty) {
        return Err(Error::EmptyFold(j));
    }
    let mut scores = vec![f64::NAN; matrix.n_rows()];
    let mut fold_auc = Vec::with_capacity(k);
    let mut models = Vec::with_capacity(k);
    let mut best_rounds = Vec::with_capacity(k);
    for (j, held_out) in members.iter().enumerate() {
        let train_rows: Vec<usize> = (0..matrix.n_rows()).filter(|&r| folds[r] != j).collect();
        let cfg = GbtConfig {
            seed: derive_seed(config.seed, &format!("fold{j}")),
            early_stopping_rounds: if early_stopping { config.early_stopping_rounds } else { 0 },
            ..config.clone()
        };
        let validation = early_stopping.then_some(Validation {
            matrix,
            labels,
            rows: held_out,
        });
        let report = gbt::fit_rows(matrix, labels, &train_rows, &cfg, validation)?;
        let e = report.ensemble;
        for &r in held_out {
            scores[r] = sigmoid(e.margin(|c| matrix.get(r, c)));
        }
        let s: Vec<f64> = held_out.iter().map(|&r| scores[r]).collect();
        let y: Vec<u8> = held_out.iter().map(|&r| labels[r]).collect();
        fold_auc.push(auc(&s, &y).ok());
        best_rounds.push(report.best_round);
        models.push(e);
    }
    let pooled_auc = auc(&scores, labels).ok();
    let (auc_mean, auc_std) = if fold_auc.iter().all(Option::is_some) {
        let v: Vec<f64> = fold_auc.iter().flatten().copied().collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / v.len() as f64;
        (Some(mean), Some(var.sqrt()))
    } else {
        (None, None)
    };
    Ok(OofPredictions {
        scores,
        folds,
        fold_auc,
        pooled_auc,
        auc_mean,
        auc_std,
        models,
        best_rounds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdReport {
    /// `(threshold, mcc)` for every distinct score, ascending by threshold.
    pub curve: Vec<(f64, f64)>,
    pub best_threshold: f64,
    pub best_mcc: f64,
    pub best_confusion: Confusion,
    pub n_flagged: usize,
}

/// Sweep every distinct score as an inclusive cutoff and keep the one with
/// the highest MCC; ties go to the smaller threshold.
pub fn tune_threshold(scores: &[f64], labels: &[u8]) -> Result<ThresholdReport> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::OneClassOnly);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points: Vec<(f64, Confusion)> = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((
            t,
            Confusion {
                tp,
                fp,
                tn: n_neg - fp,
                fn_: n_pos - tp,
            },
        ));
    }
    points.reverse();
    let curve: Vec<(f64, f64)> = points.iter().map(|(t, c)| (*t, mcc(c))).collect();
    let mut best = 0;
    for j in 1..points.len() {
        if mcc_cmp(&points[j].1, &points[best].1) == Ordering::Greater {
            best = j;
        }
    }
    let c = points[best].1;
    Ok(ThresholdReport {
        best_threshold: curve[best].0,
        best_mcc: curve[best].1,
        best_confusion: c,
        n_flagged: (c.tp + c.fp) as usize,
        curve,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub ftrl: FtrlConfig,
    pub gbt: GbtConfig,
    pub prelim: GbtConfig,
    pub stack_folds: usize,
    pub oof_folds: usize,
    pub top_k: usize,
    pub sample_size: usize,
    /// Include the stacked categorical probability; off for the ablation run.
    pub use_stacked: bool,
    /// Score test rows with the mean of the fold models instead of a refit on all rows.
    pub average_folds: bool,
    pub early_stopping: bool,
    pub threads: i32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 2016,
            ftrl: FtrlConfig::default(),
            gbt: GbtConfig::default(),
            prelim: GbtConfig::preliminary(),
            stack_folds: 2,
            oof_folds: 3,
            top_k: 200,
            sample_size: 100_000,
            use_stacked: true,
            average_folds: false,
            early_stopping: false,
            threads: -1,
        }
    }
}

impl PipelineConfig {
    /// Named per-stage seeds derived from the master seed.
    pub fn stage_seeds(&self) -> Vec<(&'static str, u64)> {
        [
            "stack.folds",
            "select.sample",
            "select.gbt",
            "oof.folds",
            "oof.gbt",
            "final.gbt",
        ]
        .into_iter()
        .map(|n| (n, derive_seed(self.seed, n)))
        .collect()
    }

    fn seed(&self, name: &str) -> u64 {
        derive_seed(self.seed, name)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub seeds: Vec<(&'static str, u64)>,
    pub stacking: Option<Stacking>,
    pub selection_importance: Vec<FeatureImportance>,
    pub selected: Vec<String>,
    pub train_ids: Vec<u64>,
    pub train_labels: Vec<u8>,
    pub oof: OofPredictions,
    pub oof_log_loss: f64,
    pub lift: Option<LiftTable>,
    pub threshold: ThresholdReport,
    /// Refit model, or the fold models when averaging.
    pub final_models: Vec<Ensemble>,
    pub importance: Vec<FeatureImportance>,
    pub test_ids: Vec<u64>,
    pub test_scores: Vec<f64>,
    /// Wall-clock seconds spent in each stage.
    pub stage_seconds: Vec<(&'static str, f64)>,
}

/// Run every stage in order: stack, assemble, select, out-of-fold boosting,
/// final fit, threshold tuning and test scoring.
pub fn run_full_pipeline(
    train: &dyn RowSource,
    test: Option<&dyn RowSource>,
    config: &PipelineConfig,
) -> Result<PipelineReport> {
    let gbt_cfg = GbtConfig {
        threads: config.threads,
        ..config.gbt.clone()
    };
    let prelim_cfg = GbtConfig {
        threads: config.threads,
        seed: config.seed("select.gbt"),
        early_stopping_rounds: 0,
        ..config.prelim.clone()
    };
    gbt_cfg.validate().stage("config")?;
    prelim_cfg.validate().stage("config")?;
    if config.top_k == 0 {
        return Err(Error::InvalidConfig("top_k must be >= 1".into()).in_stage("config"));
    }

    let mut stage_seconds = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str| {
        stage_seconds.push((name, clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };

    let stacking = if config.use_stacked {
        Some(
            stack_categorical(train, test, &config.ftrl, config.stack_folds, config.seed("stack.folds"))
                .stage("stack")?,
        )
    } else {
        None
    };
    lap("stack");
    let train_stacked = stacking.as_ref().map(|s| s.train.values.as_slice());
    let test_stacked = stacking
        .as_ref()
        .and_then(|s| s.test.as_ref())
        .map(|t| t.values.as_slice());

    let schemas = train.schemas().stage("assemble")?;
    let space = FeatureSpace::new(&schemas, config.use_stacked);
    let full = space.projector(None).stage("assemble")?;

    let n_train = match &stacking {
        Some(s) => s.train.ids.len(),
        None => {
            let mut n = 0usize;
            for row in train.rows().stage("assemble")? {
                row.stage("assemble")?;
                n += 1;
            }
            n
        }
    };
    if n_train == 0 {
        return Err(Error::EmptyData("no training rows").in_stage("assemble"));
    }
    let positions = sample_positions(n_train, config.sample_size, config.seed("select.sample"));
    let mut in_sample = vec![false; n_train];
    for &p in &positions {
        in_sample[p] = true;
    }
    let sample_set = build_dataset(train, &full, &|pos, _| train_stacked.and_then(|v| v.get(pos).copied()), &|p| {
        in_sample.get(p).copied().unwrap_or(false)
    })
    .stage("select")?;
    let sample_labels = sample_set
        .labels
        .clone()
        .ok_or(Error::MissingLabel(0))
        .stage("select")?;
    let prelim = gbt::fit(&sample_set.matrix, &sample_labels, &prelim_cfg).stage("select")?;
    let selected = gbt::rank_features(&prelim, config.top_k);
    lap("select");
    let selection_importance = gbt::feature_importance(&prelim);
    drop(sample_set);

    let projector = space.projector(Some(&selected)).stage("assemble")?;
    let data = build_dataset(train, &projector, &|pos, _| train_stacked.and_then(|v| v.get(pos).copied()), &|_| true).stage("assemble")?;
    let labels = match data.labels {
        Some(l) => l,
        None => {
            let missing = data.ids.first().copied().unwrap_or(0);
            return Err(Error::MissingLabel(missing).in_stage("assemble"));
        }
    };

    lap("assemble");
    let oof_cfg = GbtConfig {
        seed: config.seed("oof.gbt"),
        ..gbt_cfg.clone()
    };
    let oof = cross_validate_oof(
        &data.matrix,
        &labels,
        &data.ids,
        &oof_cfg,
        config.oof_folds,
        config.seed("oof.folds"),
        config.early_stopping,
    )
    .stage("oof")?;
    let oof_log_loss = metrics::log_loss(&oof.scores, &labels).stage("oof")?;
    let lift = metrics::decile_lift(&oof.scores, &labels).ok();

    let threshold = tune_threshold(&oof.scores, &labels).stage("tune")?;
    lap("oof");

    let final_models = if config.average_folds {
        oof.models.clone()
    } else {
        let mut cfg = GbtConfig {
            seed: config.seed("final.gbt"),
            early_stopping_rounds: 0,
            ..gbt_cfg.clone()
        };
        if config.early_stopping {
            let rounds: Vec<usize> = oof.best_rounds.iter().flatten().map(|r| r + 1).collect();
            if !rounds.is_empty() {
                cfg.n_estimators = rounds.iter().sum::<usize>() / rounds.len();
            }
        }
        vec![gbt::fit(&data.matrix, &labels, &cfg).stage("final")?]
    };
    let importance = gbt::feature_importance(&final_models[0]);
    lap("final");

    let (test_ids, test_scores) = match test {
        Some(source) => {
            let t = build_dataset(source, &projector, &|pos, _| test_stacked.and_then(|v| v.get(pos).copied()), &|_| true).stage("predict")?;
            let scores = score_with(&final_models, &t.matrix).stage("predict")?;
            (t.ids, scores)
        }
        None => (Vec::new(), Vec::new()),
    };
    lap("predict");

    Ok(PipelineReport {
        seeds: config.stage_seeds(),
        stacking,
        selection_importance,
        selected,
        train_ids: data.ids,
        train_labels: labels,
        oof,
        oof_log_loss,
        lift,
        threshold,
        final_models,
        importance,
        test_ids,
        test_scores,
        stage_seconds,
    })
}

/// Probability from one model, or the mean probability of several.
pub fn score_with(models: &[Ensemble], matrix: &DenseMatrix) -> Result<Vec<f64>> {
    let mut total = vec![0.0; matrix.n_rows()];
    for m in models {
        for (t, s) in total.iter_mut().zip(gbt::predict_scores(m, matrix)?) {
            *t += s;
        }
    }
    let k = models.len().max(1) as f64;
    Ok(total.into_iter().map(|t| t / k).collect())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_stacked(path: &Path, s: &StackedFeature) -> Result<()> {
    let mut out = String::new();
    match &s.folds {
        Some(folds) => {
            let _ = writeln!(out, "Id,{STACKED_FEATURE},fold");
            for ((id, v), f) in s.ids.iter().zip(&s.values).zip(folds) {
                let _ = writeln!(out, "{id},{},{f}", fmt_num(*v));
            }
        }
        None => {
            let _ = writeln!(out, "Id,{STACKED_FEATURE}");
            for (id, v) in s.ids.iter().zip(&s.values) {
                let _ = writeln!(out, "{id},{}", fmt_num(*v));
            }
        }
    }
    write_file(path, &out)
}

/// Two named columns of a CSV with an `Id` column, keyed by id.
fn read_id_column(path: &Path, wanted: &[&str]) -> Result<Vec<(u64, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or(Error::EmptyData("csv has no header"))?
        .trim_start_matches('\u{feff}')
        .split(',')
        .map(str::trim)
        .collect();
    let id_col = header
        .iter()
        .position(|h| *h == crate::ingest::ID_COLUMN)
        .ok_or_else(|| Error::MissingIdColumn(header.join(",")))?;
    let col = header
        .iter()
        .position(|h| wanted.contains(h))
        .ok_or_else(|| Error::UnknownFeature(wanted.join("|")))?;
    lines
        .enumerate()
        .map(|(i, line)| {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != header.len() {
                return Err(Error::ArityMismatch {
                    kind: "csv",
                    line: i as u64 + 2,
                    expected: header.len(),
                    found: cells.len(),
                });
            }
            let id = cells[id_col].trim().parse().map_err(|_| Error::ParseValue {
                line: i as u64 + 2,
                column: "Id".into(),
                value: cells[id_col].into(),
            })?;
            Ok((id, cells[col].trim().to_string()))
        })
        .collect()
}

fn parse_cells<T: std::str::FromStr>(rows: Vec<(u64, String)>, column: &str) -> Result<Vec<(u64, T)>> {
    rows.into_iter()
        .enumerate()
        .map(|(i, (id, v))| {
            v.parse().map(|x| (id, x)).map_err(|_| Error::ParseValue {
                line: i as u64 + 2,
                column: column.into(),
                value: v,
            })
        })
        .collect()
}

/// Stacked values by id from a file written by [`write_stacked`].
pub fn read_stacked(path: &Path) -> Result<HashMap<u64, f64>> {
    Ok(parse_cells(read_id_column(path, &[STACKED_FEATURE])?, STACKED_FEATURE)?
        .into_iter()
        .collect())
}

/// `(ids, scores)` from a CSV with `Id` and `score` columns.
pub fn read_scores(path: &Path) -> Result<(Vec<u64>, Vec<f64>)> {
    Ok(parse_cells::<f64>(read_id_column(path, &["score"])?, "score")?
        .into_iter()
        .unzip())
}

/// Labels by id from a CSV with `Id` and a `label` or `Response` column.
pub fn read_labels(path: &Path) -> Result<HashMap<u64, u8>> {
    let cells = parse_cells::<u8>(
        read_id_column(path, &["label", crate::ingest::LABEL_COLUMN])?,
        "label",
    )?;
    cells
        .into_iter()
        .map(|(id, y)| {
            if y > 1 {
                Err(Error::ParseValue {
                    line: 0,
                    column: "label".into(),
                    value: y.to_string(),
                })
            } else {
                Ok((id, y))
            }
        })
        .collect()
}

/// Labels aligned with `ids`.
pub fn align_labels(ids: &[u64], labels: &HashMap<u64, u8>) -> Result<Vec<u8>> {
    ids.iter()
        .map(|id| labels.get(id).copied().ok_or(Error::MissingLabel(*id)))
        .collect()
}

/// `Id,score[,flag]`; the flag column appears when a threshold is given.
pub fn write_predictions(path: &Path, ids: &[u64], scores: &[f64], threshold: Option<f64>) -> Result<()> {
    let mut out = String::with_capacity(ids.len() * 24);
    match threshold {
        Some(t) => {
            out.push_str("Id,score,flag\n");
            for (id, s) in ids.iter().zip(scores) {
                let _ = writeln!(out, "{id},{},{}", fmt_num(*s), u8::from(*s >= t));
            }
        }
        None => {
            out.push_str("Id,score\n");
            for (id, s) in ids.iter().zip(scores) {
                let _ = writeln!(out, "{id},{}", fmt_num(*s));
            }
        }
    }
    write_file(path, &out)
}

pub fn write_threshold_curve(path: &Path, report: &ThresholdReport) -> Result<()> {
    let mut out = String::from("threshold,mcc\n");
    for (t, m) in &report.curve {
        let _ = writeln!(out, "{},{}", fmt_num(*t), fmt_num(*m));
    }
    write_file(path, &out)
}

/// Importance rows, most important first; ties keep column order.
pub fn write_importance(path: &Path, importance: &[FeatureImportance]) -> Result<()> {
    let mut rows: Vec<&FeatureImportance> = importance.iter().collect();
    rows.sort_by(|a, b| b.gain_sq.total_cmp(&a.gain_sq));
    let mut out = String::from("feature,gain_sq,split_count\n");
    for f in rows {
        let _ = writeln!(out, "{},{},{}", f.name, fmt_num(f.gain_sq), f.split_count);
    }
    write_file(path, &out)
}

pub fn write_lift(path: &Path, lift: &LiftTable) -> Result<()> {
    let mut out = String::from("decile,n_rows,n_positives,cumulative_capture\n");
    for r in &lift.rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.decile,
            r.n_rows,
            r.n_positives,
            fmt_num(r.cumulative_capture)
        );
    }
    write_file(path, &out)
}

pub fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut out = String::new();
    for l in lines {
        out.push_str(l);
        out.push('\n');
    }
    write_file(path, &out)
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

fn json_num(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => fmt_num(v),
        _ => "null".into(),
    }
}

/// Flat JSON object of the run's headline numbers.
pub fn metrics_json(report: &PipelineReport) -> String {
    let mut fields: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: String| fields.push((k.to_string(), v));
    put("n_train_rows", report.train_ids.len().to_string());
    put(
        "n_train_positives",
        report.train_labels.iter().filter(|&&y| y == 1).count().to_string(),
    );
    if let Some(s) = &report.stacking {
        put("stack_holdout_log_loss", json_num(Some(s.holdout_log_loss)));
        put("stack_holdout_auc", json_num(s.holdout_auc));
    }
    put("n_selected_features", report.selected.len().to_string());
    let folds: Vec<String> = report.oof.fold_auc.iter().map(|a| json_num(*a)).collect();
    put("fold_auc", format!("[{}]", folds.join(", ")));
    put("pooled_oof_auc", json_num(report.oof.pooled_auc));
    put("fold_auc_mean", json_num(report.oof.auc_mean));
    put("fold_auc_std", json_num(report.oof.auc_std));
    put("oof_log_loss", json_num(Some(report.oof_log_loss)));
    put("best_threshold", json_num(Some(report.threshold.best_threshold)));
    put("best_mcc", json_num(Some(report.threshold.best_mcc)));
    put("n_flagged", report.threshold.n_flagged.to_string());
    put("n_final_trees", report.final_models.iter().map(Ensemble::n_trees).sum::<usize>().to_string());
    put("n_test_rows", report.test_ids.len().to_string());
    let seeds: Vec<String> = report.seeds.iter().map(|(n, s)| format!("\"{n}\": {s}")).collect();
    put("seeds", format!("{{{}}}", seeds.join(", ")));

    let mut out = String::from("{\n");
    for (i, (k, v)) in fields.iter().enumerate() {
        let comma = if i + 1 < fields.len() { "," } else { "" };
        let _ = writeln!(out, "  \"{k}\": {v}{comma}");
    }
    out.push_str("}\n");
    out
}

/// Write every artifact of a run into `dir`.
pub fn write_artifacts(report: &PipelineReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if let Some(s) = &report.stacking {
        write_stacked(&dir.join("stacked_train.csv"), &s.train)?;
        if let Some(t) = &s.test {
            write_stacked(&dir.join("stacked_test.csv"), t)?;
        }
        for (m, model) in s.models.iter().enumerate() {
            model.save(&dir.join(format!("ftrl_model_{m}.txt")))?;
        }
    }
    write_importance(&dir.join("selection_importance.csv"), &report.selection_importance)?;
    write_lines(&dir.join("selected_features.txt"), &report.selected)?;

    let mut folds = String::from("Id,fold\n");
    for (id, f) in report.train_ids.iter().zip(&report.oof.folds) {
        let _ = writeln!(folds, "{id},{f}");
    }
    write_file(&dir.join("folds.csv"), &folds)?;
    let mut oof = String::from("Id,fold,score,label\n");
    for (((id, f), s), y) in report
        .train_ids
        .iter()
        .zip(&report.oof.folds)
        .zip(&report.oof.scores)
        .zip(&report.train_labels)
    {
        let _ = writeln!(oof, "{id},{f},{},{y}", fmt_num(*s));
    }
    write_file(&dir.join("oof.csv"), &oof)?;
    write_threshold_curve(&dir.join("threshold_curve.csv"), &report.threshold)?;
    if let Some(l) = &report.lift {
        write_lift(&dir.join("lift.csv"), l)?;
    }
    write_importance(&dir.join("feature_importance.csv"), &report.importance)?;
    write_file(&dir.join("metrics.json"), &metrics_json(report))?;
    for (i, m) in report.final_models.iter().enumerate() {
        let name = if report.final_models.len() == 1 {
            "gbt_model.txt".to_string()
        } else {
            format!("gbt_model_fold{i}.txt")
        };
        m.save(&dir.join(name))?;
    }
    if !report.test_ids.is_empty() {
        write_predictions(
            &dir.join("predictions.csv"),
            &report.test_ids,
            &report.test_scores,
            Some(report.threshold.best_threshold),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ftrl::train_routed;
    use crate::ingest::InMemoryRows;
    use crate::synth::{generate, SynthConfig};

    fn small_synth(n: usize) -> crate::synth::SynthData {
        generate(&SynthConfig {
            n_rows: n,
            n_test_rows: n / 4,
            positive_rate: 0.05,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn threshold_perfect_separation() {
        let r = tune_threshold(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap();
        assert_eq!(r.best_threshold, 0.8);
        assert_eq!(r.best_mcc, 1.0);
        assert_eq!(r.n_flagged, 2);
        assert_eq!(r.curve.len(), 4);
        assert!(matches!(tune_threshold(&[0.1, 0.2], &[1, 1]), Err(Error::OneClassOnly)));
    }

    #[test]
    fn threshold_ties_prefer_smaller_cutoff() {
        // cutoffs 0.9 and 0.4 both give MCC 2/sqrt(12)
        let r = tune_threshold(&[0.9, 0.6, 0.4, 0.1], &[1, 0, 1, 0]).unwrap();
        assert_eq!(r.best_threshold, 0.4);
        assert_eq!(r.best_mcc, 2.0 / 12f64.sqrt());
        assert_eq!(r.n_flagged, 3);
    }

    #[test]
    fn stack_folds_balanced_and_test_is_mean() {
        let d = small_synth(1001);
        let train = InMemoryRows::new(d.train.clone());
        let test = InMemoryRows::new(d.test.clone());
        let cfg = FtrlConfig {
            hash_bits: 18,
            ..FtrlConfig::default()
        };
        let s = stack_categorical(&train, Some(&test), &cfg, 2, 11).unwrap();
        let folds = s.train.folds.as_ref().unwrap();
        let n0 = folds.iter().filter(|&&f| f == 0).count() as i64;
        assert!((2 * n0 - folds.len() as i64).abs() <= 1);

        // separately trained models: A learns fold 0, B learns fold 1
        let models = train_routed(&train, &cfg, 2, |pos, _| Some(balanced_fold(pos, 2, 11).unwrap())).unwrap();
        let (a, b) = (&models[0].state, &models[1].state);
        for (row, &v) in d.test.iter().zip(&s.test.as_ref().unwrap().values) {
            let x = featurize(row, cfg.dim());
            assert_eq!(v, (a.predict(&x) + b.predict(&x)) / 2.0);
        }
        // no leakage: each training row is scored by the model that skipped its fold
        for ((row, &v), &f) in d.train.iter().zip(&s.train.values).zip(folds) {
            let other = if f == 0 { b } else { a };
            assert_eq!(v, other.predict(&featurize(row, cfg.dim())));
        }
    }

    #[test]
    fn deterministic_category_is_recovered_by_stacking() {
        let d = generate(&SynthConfig {
            n_rows: 6000,
            n_test_rows: 10,
            positive_rate: 0.12,
            categorical_effect: 0.0,
            numeric_effect: 0.0,
            time_diff_effect: 0.0,
            xor_effect: 0.0,
            fixed_category_p: Some(0.99),
            ..SynthConfig::default()
        })
        .unwrap();
        let s = stack_categorical(&InMemoryRows::new(d.train), None, &FtrlConfig::default(), 2, 3).unwrap();
        assert!(s.holdout_auc.unwrap() >= 0.9, "{:?}", s.holdout_auc);
    }

    #[test]
    fn assembled_width_and_missing_time_diff() {
        let d = generate(&SynthConfig {
            n_rows: 30,
            n_test_rows: 0,
            ..SynthConfig::default().bosch_shape()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.write(dir.path()).unwrap();
        let schemas = crate::ingest::DatasetFiles::in_dir(dir.path(), "train")
            .unwrap()
            .read_schemas()
            .unwrap();
        let space = FeatureSpace::new(&schemas, true);
        assert_eq!(space.width(), 968 + 1156 + 1 + 1);
        let sel: Vec<String> = space.names()[..200].to_vec();
        assert_eq!(assemble_features(&space, &d.train[0], Some(0.1), Some(&sel)).unwrap().len(), 200);

        let no_dates = SparseRow::new(5);
        let v = assemble_features(&space, &no_dates, Some(0.2), None).unwrap();
        let td = space.names().iter().position(|n| n == TIME_DIFF_FEATURE).unwrap();
        assert!(v[td].is_nan());
        assert_eq!(*v.last().unwrap(), 0.2);
        assert!(matches!(
            assemble_features(&space, &no_dates, None, Some(&["nope".to_string()])),
            Err(Error::UnknownFeature(_))
        ));
    }

    #[test]
    fn oof_partition_and_empty_fold() {
        let rows: Vec<Vec<f64>> = (0..60).map(|i| vec![i as f64]).collect();
        let m = DenseMatrix::from_rows(vec!["x".into()], &rows).unwrap();
        let labels: Vec<u8> = (0..60).map(|i| u8::from(i % 3 == 0)).collect();
        let ids: Vec<u64> = (0..60).collect();
        let cfg = GbtConfig {
            n_estimators: 3,
            min_child_weight: 0.0,
            ..GbtConfig::default()
        };
        let oof = cross_validate_oof(&m, &labels, &ids, &cfg, 3, 9, false).unwrap();
        assert!(oof.scores.iter().all(|s| s.is_finite() && *s > 0.0 && *s < 1.0));
        for (r, &f) in oof.folds.iter().enumerate() {
            assert_eq!(f, assign_fold(ids[r], 3, 9).unwrap());
        }
        let m1 = DenseMatrix::from_rows(vec!["x".into()], &rows[..1]).unwrap();
        assert!(matches!(
            cross_validate_oof(&m1, &labels[..1], &ids[..1], &cfg, 3, 9, false),
            Err(Error::EmptyFold(_))
        ));
    }

    #[test]
    fn pipeline_is_deterministic_and_writes_artifacts() {
        let d = small_synth(3000);
        let train = InMemoryRows::new(d.train.clone());
        let test = InMemoryRows::new(d.test.clone());
        let cfg = PipelineConfig {
            gbt: GbtConfig {
                n_estimators: 20,
                ..GbtConfig::default()
            },
            prelim: GbtConfig {
                n_estimators: 10,
                ..GbtConfig::preliminary()
            },
            top_k: 20,
            threads: 1,
            ..PipelineConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let a = run_full_pipeline(&train, Some(&test), &cfg).unwrap();
        write_artifacts(&a, &dir.path().join("a")).unwrap();
        let b = run_full_pipeline(&train, Some(&test), &cfg).unwrap();
        write_artifacts(&b, &dir.path().join("b")).unwrap();
        let pa = fs::read(dir.path().join("a/predictions.csv")).unwrap();
        assert_eq!(pa, fs::read(dir.path().join("b/predictions.csv")).unwrap());
        assert_eq!(a.selected.len(), 20);
        assert_eq!(a.test_ids.len(), d.test.len());
        for name in ["metrics.json", "oof.csv", "threshold_curve.csv", "feature_importance.csv", "gbt_model.txt"] {
            assert!(dir.path().join("a").join(name).is_file(), "{name}");
        }
        let (ids, scores) = read_scores(&dir.path().join("a/predictions.csv")).unwrap();
        assert_eq!(ids, a.test_ids);
        assert_eq!(scores.len(), a.test_scores.len());
    }
}
