//! Seeded generator of production-line datasets with planted ground truth.
//!
//! Parts flow through one of a fixed set of station paths. Every station on a
//! path stamps its date columns and fills its numeric columns, while
//! categorical cells are sparse. Arrival times follow a weekly and daily
//! seasonal intensity. Labels come from a logistic model over a handful of
//! planted rules, and the manifest records everything needed to recompute the
//! Bayes-optimal score of any generated row.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::distributions::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{Error, Result};
use crate::explore::time_diff;
use crate::ingest::{FeatureId, FeatureKind, SparseRow, ID_COLUMN, LABEL_COLUMN};
use crate::util::{derive_seed, fmt_num, sigmoid};

pub const MANIFEST_MAGIC: &str = "failpred-synth v1";
const CATEGORY_VALUES: [&str; 5] = ["T1", "T2", "T4", "T8", "T16"];
const CATEGORY_PRESENCE: f64 = 0.6;
const NOISE_PATH_STATION_PROB: f64 = 0.3;
const MEAN_DWELL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_rows: usize,
    pub n_test_rows: usize,
    pub positive_rate: f64,
    pub n_lines: u32,
    pub n_stations: u32,
    pub n_numeric: usize,
    pub n_date: usize,
    pub n_categorical: usize,
    pub n_flow_paths: usize,
    pub weekly_period: f64,
    pub daily_period: f64,
    pub tick: f64,
    pub horizon: f64,
    pub categorical_effect: f64,
    pub numeric_effect: f64,
    pub time_diff_effect: f64,
    pub xor_effect: f64,
    /// Probability forced on rows carrying the fixed category, if set.
    pub fixed_category_p: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 2016,
            n_rows: 50_000,
            n_test_rows: 50_000,
            positive_rate: 0.006,
            n_lines: 4,
            n_stations: 52,
            n_numeric: 60,
            n_date: 40,
            n_categorical: 30,
            n_flow_paths: 24,
            weekly_period: 16.75,
            daily_period: 2.39,
            tick: 0.01,
            horizon: 1718.48,
            categorical_effect: 3.0,
            numeric_effect: 2.5,
            time_diff_effect: 2.0,
            xor_effect: 2.0,
            fixed_category_p: None,
        }
    }
}

impl SynthConfig {
    /// Full production-scale column counts.
    pub fn bosch_shape(mut self) -> Self {
        self.n_numeric = 968;
        self.n_date = 1156;
        self.n_categorical = 2140;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.positive_rate > 0.0 && self.positive_rate < 0.5) {
            return bad(format!("positive_rate must be in (0, 0.5), got {}", self.positive_rate));
        }
        if !(self.tick > 0.0) || !self.tick.is_finite() {
            return bad(format!("tick must be positive, got {}", self.tick));
        }
        if !(self.weekly_period > self.tick && self.daily_period > self.tick) {
            return bad("periods must exceed the tick".into());
        }
        if !(self.horizon > 10.0 * self.weekly_period) {
            return bad("horizon must span at least ten weekly periods".into());
        }
        if self.n_lines == 0 || self.n_stations < self.n_lines {
            return bad("need at least one station per line".into());
        }
        if self.n_numeric + self.n_date < self.n_stations as usize {
            return bad("every station needs a numeric or date column".into());
        }
        if self.n_categorical < 2 {
            return bad("need at least two categorical columns".into());
        }
        if self.n_flow_paths == 0 || self.n_rows < self.n_flow_paths {
            return bad("n_rows must cover every flow path".into());
        }
        if let Some(p) = self.fixed_category_p {
            if !(p > 0.0 && p < 1.0) {
                return bad(format!("fixed_category_p must be in (0, 1), got {p}"));
            }
        }
        Ok(())
    }

    fn n_core(&self) -> u32 {
        (self.n_stations / 6).max(1)
    }
}

/// One planted effect on the failure log-odds.
#[derive(Debug, Clone, PartialEq)]
pub enum Rule {
    Categorical { column: String, value: String, effect: f64 },
    NumericAbove { column: String, threshold: f64, effect: f64 },
    TimeDiffAbove { threshold: f64, effect: f64 },
    Xor { a: String, ta: f64, b: String, tb: f64, effect: f64 },
    /// Overrides the logistic model: matching rows fail with probability `p`.
    CategoricalFixed { column: String, value: String, p: f64 },
}

impl Rule {
    fn columns(&self) -> Vec<&str> {
        match self {
            Rule::Categorical { column, .. }
            | Rule::NumericAbove { column, .. }
            | Rule::CategoricalFixed { column, .. } => vec![column],
            Rule::TimeDiffAbove { .. } => vec![],
            Rule::Xor { a, b, .. } => vec![a, b],
        }
    }

    fn encode(&self) -> String {
        match self {
            Rule::Categorical { column, value, effect } => {
                format!("categorical column={column} value={value} effect={effect}")
            }
            Rule::NumericAbove { column, threshold, effect } => {
                format!("numeric_above column={column} threshold={threshold} effect={effect}")
            }
            Rule::TimeDiffAbove { threshold, effect } => {
                format!("time_diff_above threshold={threshold} effect={effect}")
            }
            Rule::Xor { a, ta, b, tb, effect } => {
                format!("xor a={a} ta={ta} b={b} tb={tb} effect={effect}")
            }
            Rule::CategoricalFixed { column, value, p } => {
                format!("categorical_fixed column={column} value={value} p={p}")
            }
        }
    }

    fn decode(text: &str) -> Result<Rule> {
        let bad = || Error::ManifestMismatch(format!("bad rule `{text}`"));
        let mut parts = text.split_whitespace();
        let tag = parts.next().ok_or_else(bad)?;
        let fields: HashMap<&str, &str> = parts
            .map(|p| p.split_once('=').ok_or_else(bad))
            .collect::<Result<_>>()?;
        let s = |k: &str| fields.get(k).map(|v| v.to_string()).ok_or_else(bad);
        let f = |k: &str| -> Result<f64> { fields.get(k).and_then(|v| v.parse().ok()).ok_or_else(bad) };
        Ok(match tag {
            "categorical" => Rule::Categorical {
                column: s("column")?,
                value: s("value")?,
                effect: f("effect")?,
            },
            "numeric_above" => Rule::NumericAbove {
                column: s("column")?,
                threshold: f("threshold")?,
                effect: f("effect")?,
            },
            "time_diff_above" => Rule::TimeDiffAbove {
                threshold: f("threshold")?,
                effect: f("effect")?,
            },
            "xor" => Rule::Xor {
                a: s("a")?,
                ta: f("ta")?,
                b: s("b")?,
                tb: f("tb")?,
                effect: f("effect")?,
            },
            "categorical_fixed" => Rule::CategoricalFixed {
                column: s("column")?,
                value: s("value")?,
                p: f("p")?,
            },
            _ => return Err(bad()),
        })
    }
}

/// Ground truth of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub intercept: f64,
    pub rules: Vec<Rule>,
    pub numeric_columns: Vec<String>,
    pub categorical_columns: Vec<String>,
    pub date_columns: Vec<String>,
    pub n_flow_paths: usize,
    pub weekly_period: f64,
    pub daily_period: f64,
    pub tick: f64,
    pub target_positive_rate: f64,
    pub achieved_positive_rate_train: f64,
    pub achieved_positive_rate_test: f64,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MANIFEST_MAGIC}");
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "intercept={}", self.intercept);
        let _ = writeln!(s, "target_positive_rate={}", self.target_positive_rate);
        let _ = writeln!(s, "achieved_positive_rate_train={}", self.achieved_positive_rate_train);
        let _ = writeln!(s, "achieved_positive_rate_test={}", self.achieved_positive_rate_test);
        let _ = writeln!(s, "n_flow_paths={}", self.n_flow_paths);
        let _ = writeln!(s, "weekly_period={}", self.weekly_period);
        let _ = writeln!(s, "daily_period={}", self.daily_period);
        let _ = writeln!(s, "tick={}", self.tick);
        let _ = writeln!(s, "rules={}", self.rules.len());
        for (i, r) in self.rules.iter().enumerate() {
            let _ = writeln!(s, "rule.{i}={}", r.encode());
        }
        let _ = writeln!(s, "numeric_columns={}", self.numeric_columns.join(","));
        let _ = writeln!(s, "categorical_columns={}", self.categorical_columns.join(","));
        let _ = writeln!(s, "date_columns={}", self.date_columns.join(","));
        s
    }

    pub fn parse(text: &str) -> Result<Manifest> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(MANIFEST_MAGIC) {
            return Err(Error::ManifestMismatch("missing manifest header".into()));
        }
        let mut kv: HashMap<&str, &str> = HashMap::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::ManifestMismatch(format!("bad line `{line}`")))?;
            kv.insert(k.trim(), v.trim());
        }
        let get = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| Error::ManifestMismatch(format!("missing key `{k}`")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::ManifestMismatch(format!("bad value for `{k}`: `{v}`")))
        }
        let list = |k: &str| -> Result<Vec<String>> {
            let v = get(k)?;
            Ok(if v.is_empty() {
                Vec::new()
            } else {
                v.split(',').map(str::to_string).collect()
            })
        };
        let n_rules: usize = num("rules", get("rules")?)?;
        let rules = (0..n_rules)
            .map(|i| Rule::decode(get(&format!("rule.{i}"))?))
            .collect::<Result<Vec<_>>>()?;
        let m = Manifest {
            seed: num("seed", get("seed")?)?,
            intercept: num("intercept", get("intercept")?)?,
            rules,
            numeric_columns: list("numeric_columns")?,
            categorical_columns: list("categorical_columns")?,
            date_columns: list("date_columns")?,
            n_flow_paths: num("n_flow_paths", get("n_flow_paths")?)?,
            weekly_period: num("weekly_period", get("weekly_period")?)?,
            daily_period: num("daily_period", get("daily_period")?)?,
            tick: num("tick", get("tick")?)?,
            target_positive_rate: num("target_positive_rate", get("target_positive_rate")?)?,
            achieved_positive_rate_train: num(
                "achieved_positive_rate_train",
                get("achieved_positive_rate_train")?,
            )?,
            achieved_positive_rate_test: num(
                "achieved_positive_rate_test",
                get("achieved_positive_rate_test")?,
            )?,
        };
        let known = m.column_set();
        for r in &m.rules {
            for c in r.columns() {
                if !known.contains(c) {
                    return Err(Error::ManifestMismatch(format!("rule column {c} is not a listed column")));
                }
            }
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Manifest::parse(&text)
    }

    fn column_set(&self) -> HashSet<&str> {
        self.numeric_columns
            .iter()
            .chain(&self.categorical_columns)
            .chain(&self.date_columns)
            .map(String::as_str)
            .collect()
    }

    /// Log-odds of the logistic part, ignoring fixed-probability rules.
    fn logit(&self, row: &SparseRow) -> f64 {
        let num = |c: &str| row.numeric.iter().find(|(f, _)| f.raw_name == c).map(|(_, v)| *v);
        let cat = |c: &str| {
            row.categorical
                .iter()
                .find(|(f, _)| f.raw_name == c)
                .map(|(_, v)| v.as_str())
        };
        let mut z = self.intercept;
        for rule in &self.rules {
            z += match rule {
                Rule::Categorical { column, value, effect } if cat(column) == Some(value) => *effect,
                Rule::NumericAbove { column, threshold, effect }
                    if num(column).is_some_and(|v| v > *threshold) =>
                {
                    *effect
                }
                Rule::TimeDiffAbove { threshold, effect }
                    if time_diff(row).is_some_and(|t| t > *threshold) =>
                {
                    *effect
                }
                Rule::Xor { a, ta, b, tb, effect } => match (num(a), num(b)) {
                    (Some(va), Some(vb)) if (va > *ta) != (vb > *tb) => *effect,
                    _ => 0.0,
                },
                _ => 0.0,
            };
        }
        z
    }

    fn fixed(&self, row: &SparseRow) -> Option<f64> {
        self.rules.iter().find_map(|r| match r {
            Rule::CategoricalFixed { column, value, p } => row
                .categorical
                .iter()
                .any(|(f, v)| f.raw_name == *column && v == value)
                .then_some(*p),
            _ => None,
        })
    }

    /// True failure probability of one row under the planted model.
    pub fn score(&self, row: &SparseRow) -> f64 {
        self.fixed(row).unwrap_or_else(|| sigmoid(self.logit(row)))
    }
}

/// Bayes-optimal failure probability of each row.
pub fn bayes_scores(manifest: &Manifest, rows: &[SparseRow]) -> Result<Vec<f64>> {
    let known = manifest.column_set();
    rows.iter()
        .map(|row| {
            if let Some(f) = row.features().find(|f| !known.contains(f.raw_name.as_str())) {
                return Err(Error::ManifestMismatch(format!(
                    "row {} has column {} absent from the manifest",
                    row.id, f.raw_name
                )));
            }
            Ok(manifest.score(row))
        })
        .collect()
}

/// A generated dataset held in memory.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub config: SynthConfig,
    pub manifest: Manifest,
    pub train: Vec<SparseRow>,
    pub test: Vec<SparseRow>,
    /// Bayes scores aligned with `train` and `test`.
    pub train_scores: Vec<f64>,
    pub test_scores: Vec<f64>,
    /// Flow path index of every train row.
    pub train_paths: Vec<usize>,
    columns: Columns,
}

#[derive(Debug, Clone)]
struct Columns {
    numeric: Vec<Arc<FeatureId>>,
    categorical: Vec<Arc<FeatureId>>,
    date: Vec<Arc<FeatureId>>,
}

impl Columns {
    fn of(&self, kind: FeatureKind) -> &[Arc<FeatureId>] {
        match kind {
            FeatureKind::Numeric => &self.numeric,
            FeatureKind::Categorical => &self.categorical,
            FeatureKind::Date => &self.date,
        }
    }
}

fn layout(cfg: &SynthConfig) -> Columns {
    let s = cfg.n_stations;
    let line_of = |station: u32| station * cfg.n_lines / s;
    // kinds per station: numeric j -> j % S, date j -> (n_numeric + j) % S,
    // categorical j -> S-1 - (j % S) so categoricals crowd the final stations
    let mut per_station: Vec<Vec<FeatureKind>> = vec![Vec::new(); s as usize];
    for j in 0..cfg.n_numeric {
        per_station[j % s as usize].push(FeatureKind::Numeric);
    }
    for j in 0..cfg.n_categorical {
        per_station[s as usize - 1 - j % s as usize].push(FeatureKind::Categorical);
    }
    for j in 0..cfg.n_date {
        per_station[(cfg.n_numeric + j) % s as usize].push(FeatureKind::Date);
    }
    let mut cols = Columns {
        numeric: Vec::new(),
        categorical: Vec::new(),
        date: Vec::new(),
    };
    let mut test_id = 0u32;
    for (station, kinds) in per_station.iter().enumerate() {
        let station = station as u32;
        let mut kinds = kinds.clone();
        kinds.sort_by_key(|k| match k {
            FeatureKind::Numeric => 0,
            FeatureKind::Categorical => 1,
            FeatureKind::Date => 2,
        });
        for kind in kinds {
            let f = Arc::new(FeatureId::new(line_of(station), station, kind, test_id));
            test_id += 1;
            match kind {
                FeatureKind::Numeric => cols.numeric.push(f),
                FeatureKind::Categorical => cols.categorical.push(f),
                FeatureKind::Date => cols.date.push(f),
            }
        }
    }
    cols
}

fn flow_paths(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<u32>>> {
    let core_start = cfg.n_stations - cfg.n_core();
    let mut seen = BTreeSet::new();
    let mut paths = Vec::new();
    let mut attempts = 0;
    while paths.len() < cfg.n_flow_paths {
        attempts += 1;
        if attempts > 100 * cfg.n_flow_paths + 1000 {
            return Err(Error::InvalidConfig(format!(
                "cannot draw {} distinct flow paths over {} stations",
                cfg.n_flow_paths, cfg.n_stations
            )));
        }
        let path: Vec<u32> = (0..cfg.n_stations)
            .filter(|&st| st >= core_start || rng.gen::<f64>() < NOISE_PATH_STATION_PROB)
            .collect();
        if seen.insert(path.clone()) {
            paths.push(path);
        }
    }
    Ok(paths)
}

fn arrival_time(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> f64 {
    use std::f64::consts::TAU;
    let span = cfg.horizon - 2.0;
    loop {
        let t = rng.gen::<f64>() * span;
        let intensity = 1.0 + 0.6 * (TAU * t / cfg.weekly_period).cos() + 0.3 * (TAU * t / cfg.daily_period).cos();
        if rng.gen::<f64>() * 1.9 < intensity {
            return t;
        }
    }
}

fn tick_decimals(tick: f64) -> usize {
    let mut d = 0;
    while d < 12 && ((tick * 10f64.powi(d as i32)).round() - tick * 10f64.powi(d as i32)).abs() > 1e-9 {
        d += 1;
    }
    d
}

/// Raw generated part before labels.
struct Part {
    path: usize,
    numeric: Vec<f64>,
    categorical: Vec<Option<u8>>,
    date: Vec<f64>,
}

fn draw_part(
    cfg: &SynthConfig,
    cols: &Columns,
    paths: &[Vec<u32>],
    path: usize,
    decimals: usize,
    rng: &mut ChaCha8Rng,
) -> Part {
    let visited: HashSet<u32> = paths[path].iter().copied().collect();
    let numeric = cols
        .numeric
        .iter()
        .map(|f| {
            if visited.contains(&f.station) {
                let v: f64 = rng.sample(StandardNormal);
                (v * 1000.0).round() / 1000.0
            } else {
                f64::NAN
            }
        })
        .collect();
    let categorical = cols
        .categorical
        .iter()
        .map(|f| {
            if visited.contains(&f.station) && rng.gen::<f64>() < CATEGORY_PRESENCE {
                Some(rng.gen_range(0..CATEGORY_VALUES.len()) as u8)
            } else {
                None
            }
        })
        .collect();
    let dwell = Exp::new(1.0 / MEAN_DWELL).expect("positive rate");
    let mut t = arrival_time(cfg, rng);
    let mut stamp_of = HashMap::new();
    for &st in &paths[path] {
        t += dwell.sample(rng);
        let stamp = (t / cfg.tick).round() * cfg.tick;
        let stamp: f64 = format!("{stamp:.decimals$}").parse().expect("formatted float");
        stamp_of.insert(st, stamp);
    }
    let date = cols
        .date
        .iter()
        .map(|f| stamp_of.get(&f.station).copied().unwrap_or(f64::NAN))
        .collect();
    Part {
        path,
        numeric,
        categorical,
        date,
    }
}

fn to_row(id: u64, part: &Part, cols: &Columns) -> SparseRow {
    let mut row = SparseRow::new(id);
    for (f, &v) in cols.numeric.iter().zip(&part.numeric) {
        if !v.is_nan() {
            row.numeric.push((Arc::clone(f), v));
        }
    }
    for (f, c) in cols.categorical.iter().zip(&part.categorical) {
        if let Some(c) = c {
            row.categorical.push((Arc::clone(f), CATEGORY_VALUES[*c as usize].to_string()));
        }
    }
    for (f, &v) in cols.date.iter().zip(&part.date) {
        if !v.is_nan() {
            row.date.push((Arc::clone(f), v));
        }
    }
    row
}

fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let i = ((values.len() - 1) as f64 * q).round() as usize;
    values[i]
}

/// Intercept that makes the mean planted probability equal `target`.
fn calibrate_intercept(manifest: &Manifest, rows: &[SparseRow], target: f64) -> Result<f64> {
    let mut m = manifest.clone();
    let offsets: Vec<Option<f64>> = rows
        .iter()
        .map(|r| {
            m.intercept = 0.0;
            m.fixed(r).is_none().then(|| m.logit(r))
        })
        .collect();
    let fixed_mass: f64 = rows.iter().filter_map(|r| manifest.fixed(r)).sum();
    let mean_at = |c: f64| {
        let s: f64 = offsets.iter().flatten().map(|o| sigmoid(c + o)).sum();
        (s + fixed_mass) / rows.len() as f64
    };
    let (mut lo, mut hi) = (-40.0, 40.0);
    if mean_at(lo) > target || mean_at(hi) < target {
        return Err(Error::InvalidConfig(format!(
            "positive_rate {target} is unreachable under the planted rules"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Generate a dataset in memory.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let cols = layout(cfg);
    let core_start = cfg.n_stations - cfg.n_core();
    let core_numeric: Vec<&Arc<FeatureId>> = cols.numeric.iter().filter(|f| f.station >= core_start).collect();
    let core_categorical: Vec<&Arc<FeatureId>> =
        cols.categorical.iter().filter(|f| f.station >= core_start).collect();
    if core_numeric.len() < 3 || core_categorical.len() < 2 {
        return Err(Error::InvalidConfig(
            "the always-visited stations need three numeric and two categorical columns".into(),
        ));
    }

    let mut path_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "synth.paths"));
    let paths = flow_paths(cfg, &mut path_rng)?;
    let weights: Vec<f64> = (0..paths.len()).map(|k| 1.0 / (k as f64 + 1.0)).collect();
    let path_dist = WeightedIndex::new(&weights).expect("positive weights");
    let decimals = tick_decimals(cfg.tick);

    let mut part_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "synth.parts"));
    let total = cfg.n_rows + cfg.n_test_rows;
    let mut parts = Vec::with_capacity(total);
    for i in 0..total {
        let path = if i < paths.len() {
            i
        } else {
            path_dist.sample(&mut part_rng)
        };
        parts.push(draw_part(cfg, &cols, &paths, path, decimals, &mut part_rng));
    }
    // train ids are odd, test ids even
    let ids = |i: usize| -> u64 {
        if i < cfg.n_rows {
            2 * i as u64 + 1
        } else {
            2 * (i - cfg.n_rows) as u64 + 2
        }
    };
    let rows: Vec<SparseRow> = parts.iter().enumerate().map(|(i, p)| to_row(ids(i), p, &cols)).collect();

    let mut diffs: Vec<f64> = rows.iter().filter_map(time_diff).collect();
    let td_threshold = if diffs.is_empty() { 0.0 } else { quantile(&mut diffs, 0.8) };
    let mut rules = vec![
        Rule::Categorical {
            column: core_categorical[0].raw_name.clone(),
            value: CATEGORY_VALUES[3].into(),
            effect: cfg.categorical_effect,
        },
        Rule::NumericAbove {
            column: core_numeric[0].raw_name.clone(),
            threshold: 1.0,
            effect: cfg.numeric_effect,
        },
        Rule::TimeDiffAbove {
            threshold: td_threshold,
            effect: cfg.time_diff_effect,
        },
        Rule::Xor {
            a: core_numeric[1].raw_name.clone(),
            ta: 0.0,
            b: core_numeric[2].raw_name.clone(),
            tb: 0.0,
            effect: cfg.xor_effect,
        },
    ];
    if let Some(p) = cfg.fixed_category_p {
        rules.push(Rule::CategoricalFixed {
            column: core_categorical[1].raw_name.clone(),
            value: CATEGORY_VALUES[4].into(),
            p,
        });
    }
    let names = |v: &[Arc<FeatureId>]| v.iter().map(|f| f.raw_name.clone()).collect::<Vec<_>>();
    let mut manifest = Manifest {
        seed: cfg.seed,
        intercept: 0.0,
        rules,
        numeric_columns: names(&cols.numeric),
        categorical_columns: names(&cols.categorical),
        date_columns: names(&cols.date),
        n_flow_paths: paths.len(),
        weekly_period: cfg.weekly_period,
        daily_period: cfg.daily_period,
        tick: cfg.tick,
        target_positive_rate: cfg.positive_rate,
        achieved_positive_rate_train: 0.0,
        achieved_positive_rate_test: 0.0,
    };
    manifest.intercept = calibrate_intercept(&manifest, &rows, cfg.positive_rate)?;

    let scores: Vec<f64> = rows.iter().map(|r| manifest.score(r)).collect();
    let mut label_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "synth.labels"));
    let mut rows = rows;
    for (row, &p) in rows.iter_mut().zip(&scores) {
        row.label = Some(u8::from(label_rng.gen::<f64>() < p));
    }
    let test = rows.split_off(cfg.n_rows);
    let train = rows;
    let rate = |rs: &[SparseRow]| {
        if rs.is_empty() {
            0.0
        } else {
            rs.iter().filter(|r| r.label == Some(1)).count() as f64 / rs.len() as f64
        }
    };
    manifest.achieved_positive_rate_train = rate(&train);
    manifest.achieved_positive_rate_test = rate(&test);
    let mut scores = scores;
    let test_scores = scores.split_off(cfg.n_rows);
    Ok(SynthData {
        config: cfg.clone(),
        manifest,
        train_paths: parts[..cfg.n_rows].iter().map(|p| p.path).collect(),
        train,
        test,
        train_scores: scores,
        test_scores,
        columns: cols,
    })
}

/// Paths written by [`SynthData::write`].
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    pub files: Vec<PathBuf>,
}

impl SynthData {
    /// Write `train_*.csv`, `test_*.csv`, `manifest.txt` and the truth files into `dir`.
    /// Test files carry no label column; their labels live in `truth_test.csv`.
    pub fn write(&self, dir: &Path) -> Result<SynthOutput> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::new();
        let decimals = tick_decimals(self.config.tick);
        for (prefix, rows, labeled) in [("train", &self.train, true), ("test", &self.test, false)] {
            for kind in [FeatureKind::Numeric, FeatureKind::Categorical, FeatureKind::Date] {
                let path = dir.join(format!("{prefix}_{}.csv", kind.as_str()));
                let with_label = labeled && kind == FeatureKind::Numeric;
                self.write_kind(&path, rows, kind, with_label, decimals)?;
                files.push(path);
            }
        }
        for (name, rows, scores) in [
            ("truth_train.csv", &self.train, &self.train_scores),
            ("truth_test.csv", &self.test, &self.test_scores),
        ] {
            let path = dir.join(name);
            let mut out = String::from("Id,bayes_score,label\n");
            for (r, s) in rows.iter().zip(scores.iter()) {
                let _ = writeln!(out, "{},{},{}", r.id, fmt_num(*s), r.label.unwrap_or(0));
            }
            fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
            files.push(path);
        }
        let manifest = dir.join("manifest.txt");
        fs::write(&manifest, self.manifest.to_text()).map_err(|e| Error::io(&manifest, e))?;
        Ok(SynthOutput {
            dir: dir.to_path_buf(),
            manifest,
            files,
        })
    }

    fn write_kind(
        &self,
        path: &Path,
        rows: &[SparseRow],
        kind: FeatureKind,
        with_label: bool,
        decimals: usize,
    ) -> Result<()> {
        let cols = self.columns.of(kind);
        let index: HashMap<u32, usize> = cols.iter().enumerate().map(|(i, f)| (f.test_id, i)).collect();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::with_capacity(1 << 20, file);
        let io = |e| Error::io(path, e);
        let mut header = String::from(ID_COLUMN);
        for f in cols {
            header.push(',');
            header.push_str(&f.raw_name);
        }
        if with_label {
            header.push(',');
            header.push_str(LABEL_COLUMN);
        }
        writeln!(w, "{header}").map_err(io)?;
        let mut cells: Vec<String> = vec![String::new(); cols.len()];
        let mut line = String::new();
        for row in rows {
            cells.iter_mut().for_each(String::clear);
            match kind {
                FeatureKind::Numeric => {
                    for (f, v) in &row.numeric {
                        let _ = write!(cells[index[&f.test_id]], "{v:.3}");
                    }
                }
                FeatureKind::Date => {
                    for (f, v) in &row.date {
                        let _ = write!(cells[index[&f.test_id]], "{v:.decimals$}");
                    }
                }
                FeatureKind::Categorical => {
                    for (f, v) in &row.categorical {
                        cells[index[&f.test_id]].push_str(v);
                    }
                }
            }
            line.clear();
            let _ = write!(line, "{}", row.id);
            for c in &cells {
                line.push(',');
                line.push_str(c);
            }
            if with_label {
                let _ = write!(line, ",{}", row.label.unwrap_or(0));
            }
            line.push('\n');
            w.write_all(line.as_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}
