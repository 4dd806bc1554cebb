//! FTRL-Proximal online logistic regression over hashed categorical tokens.
//!
//! Every present categorical cell becomes the binary token `column=value`,
//! hashed with FNV-1a-64 into a `2^hash_bits` space. Index 0 is reserved for
//! an always-on bias; tokens land in `[1, D)`.
//!
//! Per coordinate the learner keeps the lazy accumulators `(z, n)`; the weight
//! is materialised on demand:
//!
//! ```text
//! w = 0                                         if |z| <= l1
//! w = -(z - sign(z) l1) / ((beta + sqrt(n)) / alpha + l2)   otherwise
//! ```
//!
//! and an update with gradient `g = p - y` applies
//! `sigma = (sqrt(n + g^2) - sqrt(n)) / alpha`, `z += g - sigma w`, `n += g^2`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::{RowSource, SparseRow};
use crate::metrics::row_log_loss;
use crate::util::{fnv1a64, fnv1a64_extend, sigmoid};

pub const MODEL_MAGIC: &str = "failpred-ftrl v1";

/// Logit bound applied before the sigmoid so that `p` stays strictly inside (0, 1).
const MAX_MARGIN: f64 = 35.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FtrlConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub hash_bits: u32,
    pub epochs: usize,
}

impl Default for FtrlConfig {
    fn default() -> Self {
        FtrlConfig {
            alpha: 0.05,
            beta: 1.0,
            lambda1: 1.0,
            lambda2: 1.0,
            hash_bits: 28,
            epochs: 1,
        }
    }
}

impl FtrlConfig {
    pub fn dim(&self) -> u64 {
        1u64 << self.hash_bits
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return bad(format!("ftrl alpha must be > 0, got {}", self.alpha));
        }
        for (name, v) in [
            ("beta", self.beta),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("ftrl {name} must be >= 0, got {v}"));
            }
        }
        if !(8..=30).contains(&self.hash_bits) {
            return bad(format!("ftrl hash_bits must be in [8, 30], got {}", self.hash_bits));
        }
        if self.epochs < 1 {
            return bad("ftrl epochs must be >= 1".into());
        }
        Ok(())
    }
}

/// FNV-1a-64 of `column=value`, reduced into `[0, dim)`. `dim` must be a power of two.
pub fn hash_feature(column: &str, value: &str, dim: u64) -> u64 {
    debug_assert!(dim.is_power_of_two());
    token_hash(column, value) & (dim - 1)
}

fn token_hash(column: &str, value: &str) -> u64 {
    let h = fnv1a64_extend(fnv1a64(column.as_bytes()), b"=");
    fnv1a64_extend(h, value.as_bytes())
}

/// Sorted, distinct active indices of a row: the bias plus one per categorical token.
pub fn featurize(row: &SparseRow, dim: u64) -> Vec<u32> {
    let mut x = Vec::with_capacity(row.categorical.len() + 1);
    x.push(0u32);
    for (f, v) in &row.categorical {
        x.push((1 + token_hash(&f.raw_name, v) % (dim - 1)) as u32);
    }
    x.sort_unstable();
    x.dedup();
    x
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Coord {
    z: f64,
    n: f64,
}

/// Learner state. Untouched coordinates are absent and read as `z = n = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FtrlState {
    config: FtrlConfig,
    coords: HashMap<u32, Coord>,
}

impl FtrlState {
    pub fn new(config: FtrlConfig) -> Result<Self> {
        config.validate()?;
        Ok(FtrlState {
            config,
            coords: HashMap::new(),
        })
    }

    pub fn config(&self) -> &FtrlConfig {
        &self.config
    }

    pub fn z(&self, i: u32) -> f64 {
        self.coords.get(&i).map_or(0.0, |c| c.z)
    }

    pub fn n(&self, i: u32) -> f64 {
        self.coords.get(&i).map_or(0.0, |c| c.n)
    }

    /// Number of coordinates that have received at least one update.
    pub fn n_touched(&self) -> usize {
        self.coords.len()
    }

    pub fn is_touched(&self, i: u32) -> bool {
        self.coords.contains_key(&i)
    }

    /// Set the accumulators of one coordinate directly.
    pub fn set_coordinate(&mut self, i: u32, z: f64, n: f64) {
        self.coords.insert(i, Coord { z, n });
    }

    fn coord_weight(&self, c: Coord) -> f64 {
        let FtrlConfig {
            alpha,
            beta,
            lambda1,
            lambda2,
            ..
        } = self.config;
        if c.z.abs() <= lambda1 {
            0.0
        } else {
            -(c.z - c.z.signum() * lambda1) / ((beta + c.n.sqrt()) / alpha + lambda2)
        }
    }

    pub fn weight(&self, i: u32) -> f64 {
        self.coords
            .get(&i)
            .map_or(0.0, |&c| self.coord_weight(c))
    }

    pub fn margin(&self, x: &[u32]) -> f64 {
        x.iter().map(|&i| self.weight(i)).sum::<f64>()
    }

    pub fn predict(&self, x: &[u32]) -> f64 {
        sigmoid(self.margin(x).clamp(-MAX_MARGIN, MAX_MARGIN))
    }

    pub fn predict_row(&self, row: &SparseRow) -> f64 {
        self.predict(&featurize(row, self.config.dim()))
    }

    /// One online step. Returns the prediction made before the update.
    pub fn update(&mut self, x: &[u32], y: u8) -> f64 {
        let weights: Vec<f64> = x.iter().map(|&i| self.weight(i)).collect();
        let p = sigmoid(weights.iter().sum::<f64>().clamp(-MAX_MARGIN, MAX_MARGIN));
        let g = p - f64::from(y);
        let alpha = self.config.alpha;
        for (&i, &w) in x.iter().zip(&weights) {
            let c = self.coords.entry(i).or_default();
            let sigma = ((c.n + g * g).sqrt() - c.n.sqrt()) / alpha;
            c.z += g - sigma * w;
            c.n += g * g;
        }
        p
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
        writeln!(w, "hash_bits={}", c.hash_bits)?;
        writeln!(w, "alpha={}", c.alpha)?;
        writeln!(w, "beta={}", c.beta)?;
        writeln!(w, "lambda1={}", c.lambda1)?;
        writeln!(w, "lambda2={}", c.lambda2)?;
        writeln!(w, "epochs={}", c.epochs)?;
        writeln!(w, "coords={}", self.coords.len())?;
        let mut idx: Vec<u32> = self.coords.keys().copied().collect();
        idx.sort_unstable();
        for i in idx {
            let c = self.coords[&i];
            writeln!(w, "{i} {} {}", c.z, c.n)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let fmt_err = |m: String| Error::ModelFormat(m);
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| fmt_err("unexpected end of ftrl model".into()))?
                .map_err(|e| fmt_err(e.to_string()))
        };
        if next()? != MODEL_MAGIC {
            return Err(fmt_err("missing ftrl model magic".into()));
        }
        fn field<T: std::str::FromStr>(line: &str, key: &str) -> Result<T> {
            line.strip_prefix(key)
                .and_then(|s| s.strip_prefix('='))
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::ModelFormat(format!("expected `{key}=...`, got `{line}`")))
        }
        let config = FtrlConfig {
            hash_bits: field(&next()?, "hash_bits")?,
            alpha: field(&next()?, "alpha")?,
            beta: field(&next()?, "beta")?,
            lambda1: field(&next()?, "lambda1")?,
            lambda2: field(&next()?, "lambda2")?,
            epochs: field(&next()?, "epochs")?,
        };
        let count: usize = field(&next()?, "coords")?;
        let mut state = FtrlState::new(config)?;
        for _ in 0..count {
            let line = next()?;
            let mut it = line.split(' ');
            let parsed = (|| {
                let i: u32 = it.next()?.parse().ok()?;
                let z: f64 = it.next()?.parse().ok()?;
                let n: f64 = it.next()?.parse().ok()?;
                Some((i, z, n))
            })();
            let (i, z, n) = parsed.ok_or_else(|| fmt_err(format!("bad coordinate line `{line}`")))?;
            if u64::from(i) >= state.config.dim() || n < 0.0 {
                return Err(fmt_err(format!("coordinate out of range `{line}`")));
            }
            state.set_coordinate(i, z, n);
        }
        Ok(state)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: FtrlState,
    /// Progressive (predict-then-update) mean log-loss; absent when no row was used.
    pub mean_log_loss: Option<f64>,
    pub n_updates: u64,
}

/// Train one model per group over a single sequential pass per epoch.
///
/// `route` maps `(stream position, row)` to the model that learns from the
/// row, or `None` to skip it. Models never see rows routed elsewhere.
pub fn train_routed(
    source: &dyn RowSource,
    config: &FtrlConfig,
    n_models: usize,
    route: impl Fn(u64, &SparseRow) -> Option<usize>,
) -> Result<Vec<TrainOutcome>> {
    let mut states = (0..n_models)
        .map(|_| FtrlState::new(config.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut loss = vec![0.0f64; n_models];
    let mut seen = vec![0u64; n_models];
    let dim = config.dim();
    for _ in 0..config.epochs {
        for (pos, row) in source.rows()?.enumerate() {
            let row = row?;
            let Some(m) = route(pos as u64, &row) else {
                continue;
            };
            let y = row.require_label()?;
            let x = featurize(&row, dim);
            let p = states[m].update(&x, y);
            loss[m] += row_log_loss(p, y);
            seen[m] += 1;
        }
    }
    Ok(states
        .into_iter()
        .zip(loss.into_iter().zip(seen))
        .map(|(state, (l, n))| TrainOutcome {
            state,
            mean_log_loss: (n > 0).then(|| l / n as f64),
            n_updates: n,
        })
        .collect())
}

/// Online training over every row accepted by `keep`, in stream order.
pub fn train_stream(
    source: &dyn RowSource,
    config: &FtrlConfig,
    keep: impl Fn(u64, &SparseRow) -> bool,
) -> Result<TrainOutcome> {
    let mut out = train_routed(source, config, 1, |pos, row| keep(pos, row).then_some(0))?;
    Ok(out.remove(0))
}
