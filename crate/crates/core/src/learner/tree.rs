//! Leaf-wise regression tree growth on exact, presorted feature values.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

/// Splits must improve the objective by more than this.
pub(crate) const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        /// Direction for missing values; always left, as training data is
        /// complete.
        default_left: bool,
        left: usize,
        right: usize,
        gain: f64,
        /// Gradient/hessian sums of the children at fit time.
        left_grad: f64,
        left_hess: f64,
        right_grad: f64,
        right_hess: f64,
        count: usize,
    },
    Leaf {
        value: f64,
        count: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Boosting round that produced the tree.
    pub round: usize,
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                    ..
                } => {
                    let x = row[*feature];
                    let go_left = if x.is_nan() {
                        *default_left
                    } else {
                        x <= *threshold
                    };
                    i = if go_left { *left } else { *right };
                }
            }
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        match &self.nodes[self.leaf_index(row)] {
            Node::Leaf { value, .. } => *value,
            Node::Split { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = (usize, f64, usize)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n {
            Node::Leaf { value, count } => Some((i, *value, *count)),
            Node::Split { .. } => None,
        })
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves().count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Every feature's row order presorted by value (ties by row index), with
/// the values stored alongside in the same order.
pub(crate) struct ColumnIndex {
    n: usize,
    sorted: Vec<u32>,
    sorted_values: Vec<f64>,
}

impl ColumnIndex {
    pub fn new(x: &Matrix) -> Self {
        let (n, f) = (x.rows(), x.cols());
        let mut sorted = vec![0u32; n * f];
        let mut sorted_values = vec![0.0; n * f];
        sorted
            .par_chunks_mut(n.max(1))
            .zip(sorted_values.par_chunks_mut(n.max(1)))
            .enumerate()
            .for_each(|(c, (rows, vals))| {
                let col: Vec<f64> = (0..n).map(|r| x.get(r, c)).collect();
                for (i, s) in rows.iter_mut().enumerate() {
                    *s = i as u32;
                }
                rows.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                for (v, &r) in vals.iter_mut().zip(rows.iter()) {
                    *v = col[r as usize];
                }
            });
        ColumnIndex {
            n,
            sorted,
            sorted_values,
        }
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn features(&self) -> usize {
        self.sorted.len().checked_div(self.n).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub num_leaves: usize,
    pub max_depth: Option<usize>,
    pub min_child_samples: usize,
    pub lambda_l2: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Copy)]
struct SplitCandidate {
    feature: usize,
    /// Number of rows going left (prefix length in sorted order).
    left_count: usize,
    threshold: f64,
    gain: f64,
    left_grad: f64,
    left_hess: f64,
}

struct OpenLeaf {
    node: usize,
    start: usize,
    end: usize,
    depth: usize,
    grad: f64,
    hess: f64,
    best: Option<SplitCandidate>,
}

#[inline]
fn score(g: f64, h: f64, lambda: f64) -> f64 {
    let d = h + lambda;
    if d > 0.0 {
        g * g / d
    } else {
        0.0
    }
}

pub(crate) fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    let d = h + lambda;
    if d > 0.0 {
        -g / d
    } else {
        0.0
    }
}

/// Split gain `Gl^2/(Hl+l) + Gr^2/(Hr+l) - G^2/(H+l)`.
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64) -> f64 {
    score(gl, hl, lambda) + score(gr, hr, lambda) - score(gl + gr, hl + hr, lambda)
}

fn best_split_for_feature(
    rows: &[u32],
    vals: &[f64],
    feature: usize,
    leaf: (f64, f64),
    grad: &[f64],
    hess: &[f64],
    p: &GrowParams,
) -> Option<SplitCandidate> {
    let (g_total, h_total) = leaf;
    let count = rows.len();
    let lambda = p.lambda_l2;
    let first = p.min_child_samples.max(1) - 1;
    let last = (count - 1).min(count.saturating_sub(p.min_child_samples));
    if first >= last {
        return None;
    }
    let parent = score(g_total, h_total, lambda);
    let (mut gl, mut hl) = (0.0, 0.0);
    for &r in &rows[..first] {
        gl += grad[r as usize];
        hl += hess[r as usize];
    }
    // Children scores are compared as fractions num/den so the scan needs
    // no division; the starting fraction encodes the minimum gain.
    let (mut best_num, mut best_den) = (parent + MIN_GAIN, 1.0);
    let mut best: Option<(usize, f64, f64)> = None;
    let rows = &rows[first..last];
    let pairs = vals[first..=last].windows(2);
    for (i, (&r, w)) in rows.iter().zip(pairs).enumerate() {
        gl += grad[r as usize];
        hl += hess[r as usize];
        if w[0] >= w[1] {
            continue;
        }
        let gr = g_total - gl;
        let a = hl + lambda;
        let b = h_total - hl + lambda;
        let (num, den) = if a > 0.0 && b > 0.0 {
            (gl * gl * b + gr * gr * a, a * b)
        } else {
            (score(gl, hl, lambda) + score(gr, h_total - hl, lambda), 1.0)
        };
        if num * best_den > best_num * den {
            best_num = num;
            best_den = den;
            best = Some((first + i, gl, hl));
        }
    }
    let (i, gl, hl) = best?;
    let (v, v_next) = (vals[i], vals[i + 1]);
    let gain = score(gl, hl, lambda) + score(g_total - gl, h_total - hl, lambda) - parent;
    if gain <= MIN_GAIN {
        return None;
    }
    let mid = v + (v_next - v) / 2.0;
    Some(SplitCandidate {
        feature,
        left_count: i + 1,
        threshold: if mid < v_next { mid } else { v },
        gain,
        left_grad: gl,
        left_hess: hl,
    })
}

/// Scans every feature of a leaf; the merge runs in feature order so the
/// winner does not depend on scheduling.
fn best_split(
    ci: &ColumnIndex,
    order: &[u32],
    values: &[f64],
    leaf: &OpenLeaf,
    grad: &[f64],
    hess: &[f64],
    p: &GrowParams,
) -> Option<SplitCandidate> {
    let count = leaf.end - leaf.start;
    if count < 2 * p.min_child_samples || count < 2 || p.max_depth.is_some_and(|d| leaf.depth >= d)
    {
        return None;
    }
    let n = ci.rows();
    let (s, e) = (leaf.start, leaf.end);
    let per_feature: Vec<Option<SplitCandidate>> = (0..ci.features())
        .into_par_iter()
        .map(|f| {
            let base = f * n;
            let seg = base + s..base + e;
            best_split_for_feature(
                &order[seg.clone()],
                &values[seg],
                f,
                (leaf.grad, leaf.hess),
                grad,
                hess,
                p,
            )
        })
        .collect();
    per_feature
        .into_iter()
        .flatten()
        .fold(None, |acc: Option<SplitCandidate>, c| match acc {
            Some(a) if a.gain >= c.gain => Some(a),
            _ => Some(c),
        })
}

/// Result of growing one tree: the tree and, for every training row, the
/// leaf value it received.
pub(crate) struct Grown {
    pub tree: Tree,
    pub row_values: Vec<f64>,
}

/// Buffers reused across the trees of one fit.
#[derive(Default)]
pub(crate) struct Scratch {
    order: Vec<u32>,
    values: Vec<f64>,
    goes_left: Vec<bool>,
    leaf_of: Vec<usize>,
}

/// Grows one tree leaf-wise on the given gradients. Returns `None` when no
/// split with positive gain exists.
pub(crate) fn grow_tree(
    ci: &ColumnIndex,
    scratch: &mut Scratch,
    grad: &[f64],
    hess: &[f64],
    p: &GrowParams,
    round: usize,
) -> Option<Grown> {
    let n = ci.rows();
    let nf = ci.features();
    if n == 0 || nf == 0 {
        return None;
    }
    let Scratch {
        order,
        values,
        goes_left,
        leaf_of,
    } = scratch;
    order.clear();
    order.extend_from_slice(&ci.sorted);
    values.clear();
    values.extend_from_slice(&ci.sorted_values);
    let g: f64 = grad.iter().sum();
    let h: f64 = hess.iter().sum();
    let mut nodes = vec![Node::Leaf {
        value: 0.0,
        count: n,
    }];
    let mut root = OpenLeaf {
        node: 0,
        start: 0,
        end: n,
        depth: 0,
        grad: g,
        hess: h,
        best: None,
    };
    root.best = best_split(ci, order, values, &root, grad, hess, p);
    root.best?;
    let mut open = vec![root];
    goes_left.clear();
    goes_left.resize(n, false);
    // Leaf node of every row; kept current even when columns are left
    // unpartitioned after the final split.
    leaf_of.clear();
    leaf_of.resize(n, 0);

    while open.len() < p.num_leaves {
        let mut pick: Option<usize> = None;
        for (i, l) in open.iter().enumerate() {
            if let Some(b) = l.best {
                if pick.is_none_or(|j| b.gain > open[j].best.expect("picked has split").gain) {
                    pick = Some(i);
                }
            }
        }
        let Some(i) = pick else { break };
        let leaf = open.swap_remove(i);
        let split = leaf.best.expect("picked has split");
        let (start, end) = (leaf.start, leaf.end);
        let mid = start + split.left_count;

        let left_id = nodes.len();
        let right_id = left_id + 1;
        let chosen = &order[split.feature * n..(split.feature + 1) * n];
        for &r in &chosen[start..mid] {
            goes_left[r as usize] = true;
            leaf_of[r as usize] = left_id;
        }
        for &r in &chosen[mid..end] {
            goes_left[r as usize] = false;
            leaf_of[r as usize] = right_id;
        }
        let scan_children = open.len() + 2 < p.num_leaves;
        let gl = &*goes_left;
        if scan_children {
            order
                .par_chunks_mut(n)
                .zip(values.par_chunks_mut(n))
                .enumerate()
                .for_each(|(f, (col, vcol))| {
                    if f == split.feature {
                        return;
                    }
                    let seg = &mut col[start..end];
                    let vseg = &mut vcol[start..end];
                    let mut right = Vec::with_capacity(end - mid);
                    let mut w = 0;
                    for k in 0..seg.len() {
                        let (r, v) = (seg[k], vseg[k]);
                        if gl[r as usize] {
                            seg[w] = r;
                            vseg[w] = v;
                            w += 1;
                        } else {
                            right.push((r, v));
                        }
                    }
                    for (k, (r, v)) in right.into_iter().enumerate() {
                        seg[w + k] = r;
                        vseg[w + k] = v;
                    }
                });
        }

        let (lg, lh) = (split.left_grad, split.left_hess);
        let (rg, rh) = (leaf.grad - lg, leaf.hess - lh);
        nodes.push(Node::Leaf {
            value: 0.0,
            count: split.left_count,
        });
        nodes.push(Node::Leaf {
            value: 0.0,
            count: end - mid,
        });
        nodes[leaf.node] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            default_left: true,
            left: left_id,
            right: right_id,
            gain: split.gain,
            left_grad: lg,
            left_hess: lh,
            right_grad: rg,
            right_hess: rh,
            count: end - start,
        };
        let mut children = [
            OpenLeaf {
                node: left_id,
                start,
                end: mid,
                depth: leaf.depth + 1,
                grad: lg,
                hess: lh,
                best: None,
            },
            OpenLeaf {
                node: right_id,
                start: mid,
                end,
                depth: leaf.depth + 1,
                grad: rg,
                hess: rh,
                best: None,
            },
        ];
        if scan_children {
            for c in &mut children {
                c.best = best_split(ci, order, values, c, grad, hess, p);
            }
        }
        open.extend(children);
    }

    for l in &open {
        nodes[l.node] = Node::Leaf {
            value: leaf_weight(l.grad, l.hess, p.lambda_l2) * p.learning_rate,
            count: l.end - l.start,
        };
    }
    let row_values = leaf_of
        .iter()
        .map(|&i| match nodes[i] {
            Node::Leaf { value, .. } => value,
            Node::Split { .. } => unreachable!("rows end in leaves"),
        })
        .collect();
    Some(Grown {
        tree: Tree { round, nodes },
        row_values,
    })
}
