//! Exact greedy regression trees on gradient statistics.
//!
//! Trees grow level by level. At every level each candidate column is scanned
//! once in presorted order, and every active node collects its own running
//! gradient sums, so one level costs `O(present cells)` per column. Missing
//! cells follow a learned default direction.

use rayon::prelude::*;
use rayon::ThreadPool;

use super::matrix::DenseMatrix;

const NONE: u32 = u32::MAX;

/// Logistic-loss gradient and hessian at probability `p`.
pub fn grad_hess(p: f64, y: u8) -> (f64, f64) {
    (p - f64::from(y), p * (1.0 - p))
}

/// Loss reduction of splitting a node into the given children.
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + lambda);
    0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr)) - gamma
}

pub fn leaf_value(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        default_left: bool,
        gain: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    /// Leaf value reached by a row whose cells are produced by `value_of(column)`.
    pub fn eval(&self, value_of: impl Fn(usize) -> f64) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                    ..
                } => {
                    let v = value_of(*feature);
                    node = if goes_left(v, *threshold, *default_left) {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    pub fn eval_row(&self, m: &DenseMatrix, row: usize) -> f64 {
        self.eval(|c| m.get(row, c))
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Pre-order visit of every split as `(feature, threshold, default_left, gain)`.
    pub fn for_each_split(&self, f: &mut impl FnMut(usize, f64, bool, f64)) {
        if let TreeNode::Split {
            feature,
            threshold,
            default_left,
            gain,
            left,
            right,
        } = self
        {
            f(*feature, *threshold, *default_left, *gain);
            left.for_each_split(f);
            right.for_each_split(f);
        }
    }
}

#[inline]
pub(crate) fn goes_left(v: f64, threshold: f64, default_left: bool) -> bool {
    if v.is_nan() {
        default_left
    } else {
        v < threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_child_weight: f64,
    pub lambda: f64,
    pub gamma: f64,
}

/// Split between two consecutive distinct values; never equal to the lower one.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid <= lo {
        hi
    } else {
        mid
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    feature: usize,
    threshold: f64,
    default_left: bool,
    gain: f64,
}

/// Per-column `(value, row)` pairs of present cells, sorted by value then row.
pub(crate) struct Presorted {
    columns: Vec<Vec<(f64, u32)>>,
}

impl Presorted {
    pub(crate) fn new(m: &DenseMatrix, rows: &[usize]) -> Self {
        let columns = (0..m.n_cols())
            .map(|c| {
                let col = m.column(c);
                let mut v: Vec<(f64, u32)> = rows
                    .iter()
                    .filter(|&&r| !col[r].is_nan())
                    .map(|&r| (col[r], r as u32))
                    .collect();
                v.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                v
            })
            .collect();
        Presorted { columns }
    }
}

#[derive(Debug, Clone, Copy)]
struct NodeStats {
    g: f64,
    h: f64,
    count: u64,
}

enum Build {
    Leaf(f64),
    Split {
        cand: Candidate,
        left: usize,
        right: usize,
    },
}

pub(crate) struct Grower<'a> {
    pub(crate) matrix: &'a DenseMatrix,
    pub(crate) presorted: &'a Presorted,
    pub(crate) params: TreeParams,
    pub(crate) pool: Option<&'a ThreadPool>,
}

impl Grower<'_> {
    /// Grow one tree over `rows` (the in-sample rows) using columns `cols`.
    pub(crate) fn grow(&self, g: &[f64], h: &[f64], rows: &[usize], cols: &[usize]) -> TreeNode {
        let p = self.params;
        let n_total = self.matrix.n_rows();
        let mut slot_of = vec![NONE; n_total];
        for &r in rows {
            slot_of[r] = 0;
        }
        let mut arena: Vec<Option<Build>> = vec![None];
        let mut frontier: Vec<usize> = vec![0];
        let mut stats = vec![sum_stats(rows.iter().copied(), g, h)];

        for depth in 0..p.max_depth {
            if frontier.is_empty() {
                break;
            }
            // nodes that cannot hold two children are settled now
            let splittable: Vec<bool> = stats
                .iter()
                .map(|s| s.count >= 2 && s.h >= 2.0 * p.min_child_weight)
                .collect();
            for &r in rows {
                let s = slot_of[r];
                if s != NONE && !splittable[s as usize] {
                    slot_of[r] = NONE;
                }
            }

            let best = self.best_splits(g, h, cols, &slot_of, &stats, &splittable);

            let mut next_frontier = Vec::new();
            let mut child_slots = vec![(NONE, NONE); frontier.len()];
            for (s, &node) in frontier.iter().enumerate() {
                match best[s] {
                    Some(cand) => {
                        let l = arena.len();
                        arena.push(None);
                        arena.push(None);
                        arena[node] = Some(Build::Split {
                            cand,
                            left: l,
                            right: l + 1,
                        });
                        child_slots[s] = (next_frontier.len() as u32, next_frontier.len() as u32 + 1);
                        next_frontier.push(l);
                        next_frontier.push(l + 1);
                    }
                    None => {
                        arena[node] = Some(Build::Leaf(leaf_value(stats[s].g, stats[s].h, p.lambda)));
                    }
                }
            }
            for &r in rows {
                let s = slot_of[r];
                if s == NONE {
                    continue;
                }
                slot_of[r] = match best[s as usize] {
                    Some(c) => {
                        let v = self.matrix.get(r, c.feature);
                        let (l, rt) = child_slots[s as usize];
                        if goes_left(v, c.threshold, c.default_left) {
                            l
                        } else {
                            rt
                        }
                    }
                    None => NONE,
                };
            }
            let mut next_stats = vec![
                NodeStats {
                    g: 0.0,
                    h: 0.0,
                    count: 0
                };
                next_frontier.len()
            ];
            for &r in rows {
                let s = slot_of[r];
                if s != NONE {
                    let st = &mut next_stats[s as usize];
                    st.g += g[r];
                    st.h += h[r];
                    st.count += 1;
                }
            }
            frontier = next_frontier;
            stats = next_stats;
            if depth + 1 == p.max_depth {
                break;
            }
        }
        for (s, &node) in frontier.iter().enumerate() {
            arena[node] = Some(Build::Leaf(leaf_value(stats[s].g, stats[s].h, p.lambda)));
        }
        assemble(&mut arena, 0)
    }

    fn best_splits(
        &self,
        g: &[f64],
        h: &[f64],
        cols: &[usize],
        slot_of: &[u32],
        stats: &[NodeStats],
        splittable: &[bool],
    ) -> Vec<Option<Candidate>> {
        let n_slots = stats.len();
        if !splittable.iter().any(|&s| s) {
            return vec![None; n_slots];
        }
        let scan = |&c: &usize| self.scan_column(c, g, h, slot_of, stats);
        let per_col: Vec<Vec<Option<Candidate>>> = match self.pool {
            Some(pool) => pool.install(|| cols.par_iter().map(scan).collect()),
            None => cols.iter().map(scan).collect(),
        };
        // reduce in column order: ties keep the lower column index
        let mut best: Vec<Option<Candidate>> = vec![None; n_slots];
        for col_best in per_col {
            for (b, c) in best.iter_mut().zip(col_best) {
                if let Some(c) = c {
                    if b.map_or(true, |b| c.gain > b.gain) {
                        *b = Some(c);
                    }
                }
            }
        }
        best
    }

    fn scan_column(
        &self,
        col: usize,
        g: &[f64],
        h: &[f64],
        slot_of: &[u32],
        stats: &[NodeStats],
    ) -> Vec<Option<Candidate>> {
        let p = self.params;
        let n_slots = stats.len();
        let sorted = &self.presorted.columns[col];

        let mut present = vec![
            NodeStats {
                g: 0.0,
                h: 0.0,
                count: 0
            };
            n_slots
        ];
        for &(_, r) in sorted.iter() {
            let s = slot_of[r as usize];
            if s == NONE {
                continue;
            }
            let st = &mut present[s as usize];
            st.g += g[r as usize];
            st.h += h[r as usize];
            st.count += 1;
        }

        let mut best: Vec<Option<Candidate>> = vec![None; n_slots];
        let mut gl = vec![0.0f64; n_slots];
        let mut hl = vec![0.0f64; n_slots];
        let mut last = vec![f64::NAN; n_slots];
        for &(v, r) in sorted.iter() {
            let s = slot_of[r as usize];
            if s == NONE {
                continue;
            }
            let s = s as usize;
            if !last[s].is_nan() && v > last[s] {
                let node = stats[s];
                let pres = present[s];
                let (gm, hm) = if pres.count == node.count {
                    (0.0, 0.0)
                } else {
                    (node.g - pres.g, node.h - pres.h)
                };
                let threshold = midpoint(last[s], v);
                let (gr, hr) = (pres.g - gl[s], pres.h - hl[s]);
                let directions: &[bool] = if pres.count == node.count {
                    &[true]
                } else {
                    &[true, false]
                };
                for &default_left in directions {
                    let (l_g, l_h, r_g, r_h) = if default_left {
                        (gl[s] + gm, hl[s] + hm, gr, hr)
                    } else {
                        (gl[s], hl[s], gr + gm, hr + hm)
                    };
                    if l_h < p.min_child_weight || r_h < p.min_child_weight {
                        continue;
                    }
                    let gain = split_gain(l_g, l_h, r_g, r_h, p.lambda, p.gamma);
                    if gain > 0.0 && best[s].map_or(true, |b| gain > b.gain) {
                        best[s] = Some(Candidate {
                            feature: col,
                            threshold,
                            default_left,
                            gain,
                        });
                    }
                }
            }
            gl[s] += g[r as usize];
            hl[s] += h[r as usize];
            last[s] = v;
        }
        best
    }
}

fn sum_stats(rows: impl Iterator<Item = usize>, g: &[f64], h: &[f64]) -> NodeStats {
    let mut st = NodeStats {
        g: 0.0,
        h: 0.0,
        count: 0,
    };
    for r in rows {
        st.g += g[r];
        st.h += h[r];
        st.count += 1;
    }
    st
}

fn assemble(arena: &mut [Option<Build>], node: usize) -> TreeNode {
    match arena[node].take().expect("every arena node is settled") {
        Build::Leaf(value) => TreeNode::Leaf { value },
        Build::Split { cand, left, right } => TreeNode::Split {
            feature: cand.feature,
            threshold: cand.threshold,
            default_left: cand.default_left,
            gain: cand.gain,
            left: Box::new(assemble(arena, left)),
            right: Box::new(assemble(arena, right)),
        },
    }
}

/// Grow a single tree on every row and column, sequentially.
pub fn grow_tree(m: &DenseMatrix, g: &[f64], h: &[f64], params: &TreeParams) -> TreeNode {
    let rows: Vec<usize> = (0..m.n_rows()).collect();
    let cols: Vec<usize> = (0..m.n_cols()).collect();
    let presorted = Presorted::new(m, &rows);
    Grower {
        matrix: m,
        presorted: &presorted,
        params: *params,
        pool: None,
    }
    .grow(g, h, &rows, &cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(max_depth: usize, mcw: f64) -> TreeParams {
        TreeParams {
            max_depth,
            min_child_weight: mcw,
            lambda: 1.0,
            gamma: 0.0,
        }
    }

    #[test]
    fn grad_hess_cases() {
        assert_eq!(grad_hess(0.5, 1), (-0.5, 0.25));
        assert_eq!(grad_hess(0.5, 0), (0.5, 0.25));
    }

    #[test]
    fn gain_worked_example() {
        assert_eq!(split_gain(-2.0, 4.0, 2.0, 4.0, 1.0, 0.0), 0.8);
        assert_eq!(split_gain(0.0, 3.0, 0.0, 3.0, 1.0, 0.25), -0.25);
    }

    #[test]
    fn midpoint_never_collapses_onto_lower_value() {
        let lo = 1.0f64;
        let hi = f64::from_bits(lo.to_bits() + 1);
        let m = midpoint(lo, hi);
        assert!(lo < m && m <= hi);
        assert_eq!(midpoint(1.0, 3.0), 2.0);
    }

    #[test]
    fn separating_feature_splits_at_midpoint() {
        let m = DenseMatrix::from_rows(
            vec!["x".into()],
            &[vec![1.0], vec![2.0], vec![5.0], vec![6.0]],
        )
        .unwrap();
        let labels = [0u8, 0, 1, 1];
        let (g, h): (Vec<f64>, Vec<f64>) = labels.iter().map(|&y| grad_hess(0.5, y)).unzip();
        let t = grow_tree(&m, &g, &h, &params(1, 0.0));
        match t {
            TreeNode::Split {
                threshold,
                ref left,
                ref right,
                ..
            } => {
                assert_eq!(threshold, 3.5);
                let (TreeNode::Leaf { value: l }, TreeNode::Leaf { value: r }) = (&**left, &**right)
                else {
                    panic!("depth-1 tree has leaf children")
                };
                assert!(*l < 0.0 && *r > 0.0);
            }
            _ => panic!("expected a split"),
        }
    }

    #[test]
    fn identical_rows_make_a_leaf() {
        let m = DenseMatrix::from_rows(vec!["x".into()], &[vec![1.0], vec![1.0], vec![1.0]]).unwrap();
        let g = [0.5, -0.5, 0.5];
        let h = [0.25; 3];
        let t = grow_tree(&m, &g, &h, &params(3, 0.0));
        assert_eq!(t, TreeNode::Leaf { value: -0.5 / 1.75 });
    }

    #[test]
    fn heavy_min_child_weight_blocks_splits() {
        let m = DenseMatrix::from_rows(vec!["x".into()], &[vec![1.0], vec![2.0]]).unwrap();
        let t = grow_tree(&m, &[0.5, -0.5], &[0.25, 0.25], &params(3, 1.0));
        assert!(matches!(t, TreeNode::Leaf { .. }));
    }

    #[test]
    fn missing_values_pick_better_direction() {
        // missing rows behave like the positives
        let nan = f64::NAN;
        let m = DenseMatrix::from_rows(
            vec!["x".into()],
            &[vec![1.0], vec![2.0], vec![5.0], vec![6.0], vec![nan], vec![nan]],
        )
        .unwrap();
        let labels = [0u8, 0, 1, 1, 1, 1];
        let (g, h): (Vec<f64>, Vec<f64>) = labels.iter().map(|&y| grad_hess(0.5, y)).unzip();
        let t = grow_tree(&m, &g, &h, &params(1, 0.0));
        let TreeNode::Split {
            threshold,
            default_left,
            ..
        } = t
        else {
            panic!()
        };
        assert_eq!(threshold, 3.5);
        assert!(!default_left);
    }
}
