//! Independent oracles and seeded instance generators shared by the
//! integration tests. Nothing here calls into the code under test.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Share of (positive, negative) pairs ranked correctly, ties counting half.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Confusion counts `(tp, fp, tn, fn)` for the inclusive cutoff `t`.
pub fn counts_at(scores: &[f64], labels: &[u8], t: f64) -> (u64, u64, u64, u64) {
    let mut c = (0, 0, 0, 0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= t, y == 1) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, false) => c.2 += 1,
            (false, true) => c.3 += 1,
        }
    }
    c
}

pub fn mcc_value((tp, fp, tn, fn_): (u64, u64, u64, u64)) -> f64 {
    let d = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)) as f64;
    if d == 0.0 {
        0.0
    } else {
        (tp as f64 * tn as f64 - fp as f64 * fn_ as f64) / d.sqrt()
    }
}

/// Exact comparison of two MCC values as signed square roots of rationals.
fn mcc_order(a: (u64, u64, u64, u64), b: (u64, u64, u64, u64)) -> Ordering {
    let frac = |(tp, fp, tn, fn_): (u64, u64, u64, u64)| {
        let d = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)) as i128;
        let n = tp as i128 * tn as i128 - fp as i128 * fn_ as i128;
        if d == 0 {
            (0i128, 1i128)
        } else {
            (n, d)
        }
    };
    let ((na, da), (nb, db)) = (frac(a), frac(b));
    // sign(n) * n^2 / d preserves the order of n / sqrt(d)
    (na.signum() * na * na * db).cmp(&(nb.signum() * nb * nb * da))
}

/// Every distinct score tried as a cutoff; highest MCC wins, ties to the smaller cutoff.
pub fn brute_force_threshold(scores: &[f64], labels: &[u8]) -> (f64, (u64, u64, u64, u64)) {
    let mut cuts: Vec<f64> = scores.to_vec();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut best = (cuts[0], counts_at(scores, labels, cuts[0]));
    for &t in &cuts[1..] {
        let c = counts_at(scores, labels, t);
        if mcc_order(c, best.1) == Ordering::Greater {
            best = (t, c);
        }
    }
    best
}

/// Scores on a coarse grid (to force ties) or continuous, with both classes present.
pub fn scores_and_labels(rng: &mut ChaCha8Rng, max_len: usize) -> (Vec<f64>, Vec<u8>) {
    let n = rng.gen_range(2..=max_len);
    let levels = if rng.gen_bool(0.5) { rng.gen_range(1..=6) } else { 0 };
    let scores: Vec<f64> = (0..n)
        .map(|_| {
            if levels > 0 {
                rng.gen_range(0..levels) as f64 / levels as f64
            } else {
                rng.gen::<f64>()
            }
        })
        .collect();
    let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.4))).collect();
    labels[0] = 1;
    labels[1] = 0;
    (scores, labels)
}

/// One exhaustive-split instance: dyadic gradients and small-integer cells
/// keep every sum exact, so the oracle and the learner see identical numbers.
#[derive(Debug, Clone)]
pub struct SplitInstance {
    pub columns: Vec<Vec<f64>>,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub lambda: f64,
    pub gamma: f64,
}

impl SplitInstance {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let n = rng.gen_range(2..=64);
        let f = rng.gen_range(1..=6);
        let columns = (0..f)
            .map(|_| {
                let levels = rng.gen_range(1..=8);
                let missing = if rng.gen_bool(0.5) { 0.25 } else { 0.0 };
                (0..n)
                    .map(|_| {
                        if rng.gen_bool(missing) {
                            f64::NAN
                        } else {
                            rng.gen_range(0..levels) as f64
                        }
                    })
                    .collect()
            })
            .collect();
        SplitInstance {
            columns,
            g: (0..n).map(|_| rng.gen_range(-16..=16) as f64 / 16.0).collect(),
            h: (0..n).map(|_| rng.gen_range(1..=4) as f64 / 16.0).collect(),
            max_depth: rng.gen_range(1..=2),
            min_child_weight: [0.0, 0.25, 0.5, 1.0][rng.gen_range(0..4)],
            lambda: [0.0, 1.0][rng.gen_range(0..2)],
            gamma: [0.0, 0.125][rng.gen_range(0..2)],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.g.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleNode {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        default_left: bool,
        gain: f64,
        left: Box<OracleNode>,
        right: Box<OracleNode>,
    },
}

fn oracle_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    let s = |g: f64, h: f64| g * g / (h + lambda);
    0.5 * (s(gl, hl) + s(gr, hr) - s(gl + gr, hl + hr)) - gamma
}

/// Depth-limited tree found by trying every feature, every cut between
/// consecutive distinct values and both directions for missing cells.
pub fn exhaustive_tree(inst: &SplitInstance) -> OracleNode {
    let rows: Vec<usize> = (0..inst.n_rows()).collect();
    oracle_node(inst, &rows, 0)
}

fn oracle_node(inst: &SplitInstance, rows: &[usize], depth: usize) -> OracleNode {
    let sum = |rs: &[usize], v: &[f64]| rs.iter().map(|&r| v[r]).sum::<f64>();
    let (g, h) = (sum(rows, &inst.g), sum(rows, &inst.h));
    let leaf = OracleNode::Leaf(-g / (h + inst.lambda));
    if depth == inst.max_depth || rows.len() < 2 || h < 2.0 * inst.min_child_weight {
        return leaf;
    }
    let mut best: Option<(usize, f64, bool, f64, Vec<usize>, Vec<usize>)> = None;
    for (f, col) in inst.columns.iter().enumerate() {
        let mut values: Vec<f64> = rows.iter().map(|&r| col[r]).filter(|v| !v.is_nan()).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        let has_missing = rows.iter().any(|&r| col[r].is_nan());
        for w in values.windows(2) {
            let threshold = (w[0] + w[1]) / 2.0;
            let directions: &[bool] = if has_missing { &[true, false] } else { &[true] };
            for &default_left in directions {
                let (left, right): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| {
                    let v = col[r];
                    if v.is_nan() {
                        default_left
                    } else {
                        v < threshold
                    }
                });
                let (hl, hr) = (sum(&left, &inst.h), sum(&right, &inst.h));
                if hl < inst.min_child_weight || hr < inst.min_child_weight {
                    continue;
                }
                let gain = oracle_gain(sum(&left, &inst.g), hl, sum(&right, &inst.g), hr, inst.lambda, inst.gamma);
                if gain > 0.0 && best.as_ref().map_or(true, |b| gain > b.3) {
                    best = Some((f, threshold, default_left, gain, left, right));
                }
            }
        }
    }
    match best {
        None => leaf,
        Some((feature, threshold, default_left, gain, left, right)) => OracleNode::Split {
            feature,
            threshold,
            default_left,
            gain,
            left: Box::new(oracle_node(inst, &left, depth + 1)),
            right: Box::new(oracle_node(inst, &right, depth + 1)),
        },
    }
}

/// Rows of `inst` sent to each child by the split `(feature, threshold, default_left)`.
pub fn route(inst: &SplitInstance, rows: &[usize], feature: usize, threshold: f64, default_left: bool) -> (Vec<usize>, Vec<usize>) {
    rows.iter().partition(|&&r| {
        let v = inst.columns[feature][r];
        if v.is_nan() {
            default_left
        } else {
            v < threshold
        }
    })
}

/// Weekly plus daily cosine intensity sampled every `step` ticks.
pub fn weekly_daily_series(step: f64, n: usize) -> Vec<f64> {
    use std::f64::consts::PI;
    (0..n)
        .map(|i| {
            let t = i as f64 * step;
            100.0 + 30.0 * (2.0 * PI * t / 16.75).cos() + 12.0 * (2.0 * PI * t / 2.39).cos()
        })
        .collect()
}

pub fn failpred_bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_failpred"))
}

/// Numeric value of a top-level `"key": value` line in a flat JSON report.
pub fn json_number(text: &str, key: &str) -> Option<f64> {
    let needle = format!("\"{key}\":");
    text.lines()
        .find_map(|l| l.trim().strip_prefix(&needle))
        .and_then(|v| v.trim().trim_end_matches(',').parse().ok())
}

/// `(Id, bayes_score, label)` columns of a ground-truth file.
pub fn read_truth(path: &std::path::Path) -> (Vec<f64>, Vec<u8>) {
    let text = std::fs::read_to_string(path).expect("truth file");
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        scores.push(cells[1].parse().expect("score"));
        labels.push(cells[2].parse().expect("label"));
    }
    (scores, labels)
}
