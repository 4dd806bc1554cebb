//! Gradient boosted trees for binary classification with logistic loss.
//!
//! Trees act in log-odds space. A prediction is
//! `sigmoid(base_score + learning_rate * sum(tree outputs))`, accumulated tree
//! by tree in fit order so that replaying the ensemble reproduces the
//! training-time margins bit for bit.

mod matrix;
pub mod tree;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::{ThreadPool, ThreadPoolBuilder};

use crate::error::{Error, Result};
use crate::metrics::row_log_loss;
use crate::util::sigmoid;

pub use matrix::DenseMatrix;
pub use tree::{grad_hess, grow_tree, split_gain, TreeNode, TreeParams};
use tree::{Grower, Presorted};

pub const MODEL_MAGIC: &str = "failpred-gbt v1";

#[derive(Debug, Clone, PartialEq)]
pub struct GbtConfig {
    pub learning_rate: f64,
    pub n_estimators: usize,
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub lambda_leaf: f64,
    pub gamma: f64,
    pub subsample_rows: f64,
    pub subsample_cols: f64,
    pub seed: u64,
    /// Patience, in rounds, when a validation set is supplied. 0 disables early stopping.
    pub early_stopping_rounds: usize,
    /// Split-scan parallelism: 1 is sequential, -1 uses every core.
    pub threads: i32,
}

impl Default for GbtConfig {
    /// Final-model settings.
    fn default() -> Self {
        GbtConfig {
            learning_rate: 0.01,
            n_estimators: 100,
            max_depth: 7,
            min_child_weight: 5.0,
            lambda_leaf: 1.0,
            gamma: 0.0,
            subsample_rows: 1.0,
            subsample_cols: 1.0,
            seed: 0,
            early_stopping_rounds: 10,
            threads: 1,
        }
    }
}

impl GbtConfig {
    /// Settings of the quick model used to rank features.
    pub fn preliminary() -> Self {
        GbtConfig {
            learning_rate: 0.1,
            max_depth: 3,
            min_child_weight: 1.0,
            n_estimators: 100,
            ..GbtConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning_rate must be in (0, 1], got {}", self.learning_rate));
        }
        if self.max_depth < 1 {
            return bad("max_depth must be >= 1".into());
        }
        for (name, v) in [
            ("min_child_weight", self.min_child_weight),
            ("lambda", self.lambda_leaf),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        for (name, v) in [
            ("subsample_rows", self.subsample_rows),
            ("subsample_cols", self.subsample_cols),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} must be in (0, 1], got {v}"));
            }
        }
        if self.threads == 0 || self.threads < -1 {
            return bad(format!("threads must be -1 or >= 1, got {}", self.threads));
        }
        Ok(())
    }

    fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_child_weight: self.min_child_weight,
            lambda: self.lambda_leaf,
            gamma: self.gamma,
        }
    }
}

/// Thread pool for a `--threads` value, or `None` for sequential execution.
pub(crate) fn thread_pool(threads: i32) -> Result<Option<ThreadPool>> {
    if threads == 1 {
        return Ok(None);
    }
    let n = if threads < 0 { 0 } else { threads as usize };
    ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map(Some)
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub base_score: f64,
    pub trees: Vec<TreeNode>,
    pub config: GbtConfig,
    pub feature_names: Vec<String>,
}

/// Held-out rows scored after every round.
#[derive(Debug, Clone, Copy)]
pub struct Validation<'a> {
    pub matrix: &'a DenseMatrix,
    pub labels: &'a [u8],
    pub rows: &'a [usize],
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub ensemble: Ensemble,
    /// Margins of the training rows after the last kept round, indexed like the matrix.
    pub train_margins: Vec<f64>,
    /// Training log-loss after each round.
    pub train_loss: Vec<f64>,
    pub valid_loss: Vec<f64>,
    pub best_round: Option<usize>,
}

pub fn fit(matrix: &DenseMatrix, labels: &[u8], config: &GbtConfig) -> Result<Ensemble> {
    let rows: Vec<usize> = (0..matrix.n_rows()).collect();
    Ok(fit_rows(matrix, labels, &rows, config, None)?.ensemble)
}

/// Fit on the subset `rows` of `matrix`.
pub fn fit_rows(
    matrix: &DenseMatrix,
    labels: &[u8],
    rows: &[usize],
    config: &GbtConfig,
    validation: Option<Validation<'_>>,
) -> Result<FitReport> {
    config.validate()?;
    if labels.len() != matrix.n_rows() {
        return Err(Error::LengthMismatch {
            left: matrix.n_rows(),
            right: labels.len(),
        });
    }
    if rows.is_empty() || matrix.n_rows() == 0 {
        return Err(Error::EmptyData("no training rows"));
    }
    let pool = thread_pool(config.threads)?;
    let positives = rows.iter().filter(|&&r| labels[r] == 1).count();
    let rate = (positives as f64 / rows.len() as f64).clamp(1e-7, 1.0 - 1e-7);
    let base_score = (rate / (1.0 - rate)).ln();

    let presorted = Presorted::new(matrix, rows);
    let grower = Grower {
        matrix,
        presorted: &presorted,
        params: config.tree_params(),
        pool: pool.as_ref(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_cols = matrix.n_cols();
    let all_cols: Vec<usize> = (0..n_cols).collect();

    let mut margins = vec![base_score; matrix.n_rows()];
    let mut g = vec![0.0; matrix.n_rows()];
    let mut h = vec![0.0; matrix.n_rows()];
    let mut trees = Vec::with_capacity(config.n_estimators);
    let mut train_loss = Vec::with_capacity(config.n_estimators);
    let mut valid_loss = Vec::new();
    let mut valid_margins = validation.map(|v| vec![base_score; v.matrix.n_rows()]);
    let mut best: Option<(usize, f64)> = None;
    let valid_cols = match validation {
        Some(v) => Some(column_mapping(&matrix.names().to_vec(), v.matrix)?),
        None => None,
    };

    for round in 0..config.n_estimators {
        for &r in rows {
            let (gr, hr) = grad_hess(sigmoid(margins[r]), labels[r]);
            g[r] = gr;
            h[r] = hr;
        }
        let sampled_rows: Vec<usize> = if config.subsample_rows < 1.0 {
            rows.iter()
                .copied()
                .filter(|_| rng.gen::<f64>() < config.subsample_rows)
                .collect()
        } else {
            rows.to_vec()
        };
        let cols: Vec<usize> = if config.subsample_cols < 1.0 && n_cols > 0 {
            let k = ((config.subsample_cols * n_cols as f64).round() as usize).clamp(1, n_cols);
            let mut c = sample(&mut rng, n_cols, k).into_vec();
            c.sort_unstable();
            c
        } else {
            all_cols.clone()
        };
        let tree = grower.grow(&g, &h, &sampled_rows, &cols);

        for &r in rows {
            margins[r] += config.learning_rate * tree.eval_row(matrix, r);
        }
        let loss = rows
            .iter()
            .map(|&r| row_log_loss(sigmoid(margins[r]), labels[r]))
            .sum::<f64>()
            / rows.len() as f64;
        train_loss.push(loss);

        if let (Some(v), Some(vm), Some(map)) = (validation, valid_margins.as_mut(), valid_cols.as_ref()) {
            for &r in v.rows {
                vm[r] += config.learning_rate * tree.eval(|c| v.matrix.get(r, map[c]));
            }
            let vl = v
                .rows
                .iter()
                .map(|&r| row_log_loss(sigmoid(vm[r]), v.labels[r]))
                .sum::<f64>()
                / v.rows.len().max(1) as f64;
            valid_loss.push(vl);
            trees.push(tree);
            if best.map_or(true, |(_, b)| vl < b) {
                best = Some((round, vl));
            } else if config.early_stopping_rounds > 0
                && round - best.map_or(0, |(r, _)| r) >= config.early_stopping_rounds
            {
                break;
            }
        } else {
            trees.push(tree);
        }
    }

    let mut best_round = None;
    if let (Some((b, _)), true) = (best, config.early_stopping_rounds > 0) {
        if b + 1 < trees.len() {
            trees.truncate(b + 1);
            train_loss.truncate(b + 1);
            margins = vec![base_score; matrix.n_rows()];
            for t in &trees {
                for &r in rows {
                    margins[r] += config.learning_rate * t.eval_row(matrix, r);
                }
            }
        }
        best_round = Some(b);
    }

    Ok(FitReport {
        ensemble: Ensemble {
            base_score,
            trees,
            config: config.clone(),
            feature_names: matrix.names().to_vec(),
        },
        train_margins: margins,
        train_loss,
        valid_loss,
        best_round,
    })
}

/// Position in `input` of every model column, by name.
fn column_mapping(model_names: &[String], input: &DenseMatrix) -> Result<Vec<usize>> {
    let index = input.name_index();
    model_names
        .iter()
        .map(|n| {
            index
                .get(n.as_str())
                .copied()
                .ok_or_else(|| Error::UnknownFeature(n.clone()))
        })
        .collect()
}

impl Ensemble {
    /// Log-odds of one row whose model columns are produced by `value_of`.
    pub fn margin(&self, value_of: impl Fn(usize) -> f64) -> f64 {
        let mut m = self.base_score;
        for t in &self.trees {
            m += self.config.learning_rate * t.eval(&value_of);
        }
        m
    }

    pub fn predict_margins(&self, matrix: &DenseMatrix) -> Result<Vec<f64>> {
        let map = column_mapping(&self.feature_names, matrix)?;
        Ok((0..matrix.n_rows())
            .map(|r| self.margin(|c| matrix.get(r, map[c])))
            .collect())
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let c = &self.config;
        writeln!(w, "{MODEL_MAGIC}")?;
        writeln!(w, "learning_rate={}", c.learning_rate)?;
        writeln!(w, "n_estimators={}", c.n_estimators)?;
        writeln!(w, "max_depth={}", c.max_depth)?;
        writeln!(w, "min_child_weight={}", c.min_child_weight)?;
        writeln!(w, "lambda={}", c.lambda_leaf)?;
        writeln!(w, "gamma={}", c.gamma)?;
        writeln!(w, "subsample_rows={}", c.subsample_rows)?;
        writeln!(w, "subsample_cols={}", c.subsample_cols)?;
        writeln!(w, "seed={}", c.seed)?;
        writeln!(w, "early_stopping_rounds={}", c.early_stopping_rounds)?;
        writeln!(w, "base_score={}", self.base_score)?;
        writeln!(w, "features={}", self.feature_names.len())?;
        for n in &self.feature_names {
            writeln!(w, "{n}")?;
        }
        writeln!(w, "trees={}", self.trees.len())?;
        for t in &self.trees {
            writeln!(w, "tree")?;
            write_node(w, t, &self.feature_names)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = move || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::ModelFormat("unexpected end of gbt model".into()))?
                .map_err(|e| Error::ModelFormat(e.to_string()))
        };
        if next()? != MODEL_MAGIC {
            return Err(Error::ModelFormat("missing gbt model magic".into()));
        }
        fn field<T: std::str::FromStr>(line: &str, key: &str) -> Result<T> {
            line.strip_prefix(key)
                .and_then(|s| s.strip_prefix('='))
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::ModelFormat(format!("expected `{key}=...`, got `{line}`")))
        }
        let config = GbtConfig {
            learning_rate: field(&next()?, "learning_rate")?,
            n_estimators: field(&next()?, "n_estimators")?,
            max_depth: field(&next()?, "max_depth")?,
            min_child_weight: field(&next()?, "min_child_weight")?,
            lambda_leaf: field(&next()?, "lambda")?,
            gamma: field(&next()?, "gamma")?,
            subsample_rows: field(&next()?, "subsample_rows")?,
            subsample_cols: field(&next()?, "subsample_cols")?,
            seed: field(&next()?, "seed")?,
            early_stopping_rounds: field(&next()?, "early_stopping_rounds")?,
            threads: 1,
        };
        let base_score = field(&next()?, "base_score")?;
        let n_features: usize = field(&next()?, "features")?;
        let feature_names = (0..n_features).map(|_| next()).collect::<Result<Vec<_>>>()?;
        let index: HashMap<&str, usize> = feature_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let n_trees: usize = field(&next()?, "trees")?;
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            if next()? != "tree" {
                return Err(Error::ModelFormat("expected `tree`".into()));
            }
            trees.push(read_node(&mut next, &index)?);
        }
        Ok(Ensemble {
            base_score,
            trees,
            config,
            feature_names,
        })
    }
}

fn write_node(w: &mut impl Write, node: &TreeNode, names: &[String]) -> std::io::Result<()> {
    match node {
        TreeNode::Leaf { value } => writeln!(w, "L\t{value}"),
        TreeNode::Split {
            feature,
            threshold,
            default_left,
            gain,
            left,
            right,
        } => {
            writeln!(
                w,
                "S\t{}\t{threshold}\t{}\t{gain}",
                names[*feature],
                u8::from(*default_left)
            )?;
            write_node(w, left, names)?;
            write_node(w, right, names)
        }
    }
}

fn read_node(
    next: &mut impl FnMut() -> Result<String>,
    index: &HashMap<&str, usize>,
) -> Result<TreeNode> {
    let line = next()?;
    let bad = || Error::ModelFormat(format!("bad tree line `{line}`"));
    let parts: Vec<&str> = line.split('\t').collect();
    match parts.as_slice() {
        ["L", v] => Ok(TreeNode::Leaf {
            value: v.parse().map_err(|_| bad())?,
        }),
        ["S", name, thr, dl, gain] => {
            let feature = *index
                .get(name)
                .ok_or_else(|| Error::UnknownFeature(name.to_string()))?;
            let threshold = thr.parse().map_err(|_| bad())?;
            let default_left = match *dl {
                "1" => true,
                "0" => false,
                _ => return Err(bad()),
            };
            let gain = gain.parse().map_err(|_| bad())?;
            let left = Box::new(read_node(next, index)?);
            let right = Box::new(read_node(next, index)?);
            Ok(TreeNode::Split {
                feature,
                threshold,
                default_left,
                gain,
                left,
                right,
            })
        }
        _ => Err(bad()),
    }
}

/// Probability scores for every row of `matrix`. Columns are matched by name;
/// extra input columns are ignored.
pub fn predict_scores(ensemble: &Ensemble, matrix: &DenseMatrix) -> Result<Vec<f64>> {
    Ok(ensemble
        .predict_margins(matrix)?
        .into_iter()
        .map(sigmoid)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImportance {
    pub name: String,
    /// Sum of squared split gains divided by the number of trees.
    pub gain_sq: f64,
    pub split_count: usize,
}

/// Importance of every model column, in column order. Empty for an empty ensemble.
pub fn feature_importance(ensemble: &Ensemble) -> Vec<FeatureImportance> {
    if ensemble.trees.is_empty() {
        return Vec::new();
    }
    let mut out: Vec<FeatureImportance> = ensemble
        .feature_names
        .iter()
        .map(|n| FeatureImportance {
            name: n.clone(),
            gain_sq: 0.0,
            split_count: 0,
        })
        .collect();
    for t in &ensemble.trees {
        t.for_each_split(&mut |f, _, _, gain| {
            out[f].gain_sq += gain * gain;
            out[f].split_count += 1;
        });
    }
    let n = ensemble.trees.len() as f64;
    for fi in &mut out {
        fi.gain_sq /= n;
    }
    out
}

/// Names of the `k` most important columns under a preliminary fit, ties
/// broken by column order.
pub fn select_top_k(
    matrix: &DenseMatrix,
    labels: &[u8],
    k: usize,
    prelim: &GbtConfig,
) -> Result<Vec<String>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    let ensemble = fit(matrix, labels, prelim)?;
    Ok(rank_features(&ensemble, k))
}

pub(crate) fn rank_features(ensemble: &Ensemble, k: usize) -> Vec<String> {
    let mut ranked: Vec<(usize, f64)> = if ensemble.trees.is_empty() {
        (0..ensemble.feature_names.len()).map(|i| (i, 0.0)).collect()
    } else {
        feature_importance(ensemble)
            .into_iter()
            .enumerate()
            .map(|(i, f)| (i, f.gain_sq))
            .collect()
    };
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
        .into_iter()
        .take(k)
        .map(|(i, _)| ensemble.feature_names[i].clone())
        .collect()
}
