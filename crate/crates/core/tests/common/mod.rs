//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use affect_core::data::{GroupName, Task, NUM_CLASSES};
use affect_core::windowing::{Term, WindowSchema, WindowedDataset, WindowedSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// CCC from raw moments: `2 cov / (var_x + var_y + (mean_x - mean_y)^2)`.
pub fn ccc_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..x.len() {
        sx += x[i];
        sy += y[i];
    }
    let (mx, my) = (sx / n, sy / n);
    for i in 0..x.len() {
        sxx += (x[i] - mx).powi(2);
        syy += (y[i] - my).powi(2);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    let vx = sxx / n;
    let vy = syy / n;
    let cov = sxy / n;
    2.0 * cov / (vx + vy + (mx - my).powi(2))
}

pub struct ConfusionScores {
    pub f1: Vec<Option<f64>>,
    pub macro_f1: f64,
    pub accuracy: f64,
}

/// Per-class F1 from a full confusion matrix; classes absent from both
/// truth and prediction are excluded.
pub fn confusion_oracle(pred: &[u8], truth: &[u8]) -> ConfusionScores {
    let mut cm = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    for (&p, &t) in pred.iter().zip(truth) {
        cm[t as usize][p as usize] += 1;
    }
    let mut f1 = Vec::new();
    for c in 0..NUM_CLASSES {
        let tp = cm[c][c];
        let fp: usize = (0..NUM_CLASSES).filter(|&t| t != c).map(|t| cm[t][c]).sum();
        let fneg: usize = (0..NUM_CLASSES).filter(|&p| p != c).map(|p| cm[c][p]).sum();
        if tp + fp + fneg == 0 {
            f1.push(None);
        } else {
            f1.push(Some(2.0 * tp as f64 / (2 * tp + fp + fneg) as f64));
        }
    }
    let present: Vec<f64> = f1.iter().flatten().copied().collect();
    let macro_f1 = present.iter().sum::<f64>() / present.len() as f64;
    let correct: usize = (0..NUM_CLASSES).map(|c| cm[c][c]).sum();
    ConfusionScores {
        f1,
        macro_f1,
        accuracy: correct as f64 / truth.len() as f64,
    }
}

/// Mean, population std, range and least-squares slope by plain loops.
pub fn window_stats_oracle(v: &[f64], t: &[f64]) -> [f64; 4] {
    let n = v.len() as f64;
    let mut mean = 0.0;
    for x in v {
        mean += x;
    }
    mean /= n;
    let mut var = 0.0;
    for x in v {
        var += (x - mean) * (x - mean);
    }
    var /= n;
    let mut lo = v[0];
    let mut hi = v[0];
    for &x in v {
        if x < lo {
            lo = x;
        }
        if x > hi {
            hi = x;
        }
    }
    let mut tm = 0.0;
    for x in t {
        tm += x;
    }
    tm /= n;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..v.len() {
        num += (t[i] - tm) * (v[i] - mean);
        den += (t[i] - tm) * (t[i] - tm);
    }
    [mean, var.sqrt(), hi - lo, num / den]
}

/// Exhaustive best stump under the boosting objective: for every feature
/// and every cut between distinct sorted values with both sides holding at
/// least `min_child` rows, the gain `Gl^2/(Hl+l) + Gr^2/(Hr+l) - G^2/(H+l)`.
/// Returns the first-round prediction for each row.
pub fn stump_oracle(x: &[Vec<f64>], y: &[f64], min_child: usize, lambda: f64, lr: f64) -> Vec<f64> {
    let n = y.len();
    let base = y.iter().sum::<f64>() / n as f64;
    let g: Vec<f64> = y.iter().map(|t| base - t).collect();
    let score = |gs: f64, hs: f64| gs * gs / (hs + lambda);
    let g_all: f64 = g.iter().sum();
    let parent = score(g_all, n as f64);
    let mut best: Option<(f64, usize, f64)> = None;
    let f = x[0].len();
    for j in 0..f {
        let mut vals: Vec<f64> = x.iter().map(|r| r[j]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let thr = w[0] + (w[1] - w[0]) / 2.0;
            let (mut gl, mut nl) = (0.0, 0usize);
            for r in 0..n {
                if x[r][j] <= thr {
                    gl += g[r];
                    nl += 1;
                }
            }
            let nr = n - nl;
            if nl < min_child || nr < min_child {
                continue;
            }
            let gain = score(gl, nl as f64) + score(g_all - gl, nr as f64) - parent;
            if gain > 1e-12 && best.is_none_or(|b| gain > b.0) {
                best = Some((gain, j, thr));
            }
        }
    }
    let Some((_, j, thr)) = best else {
        return vec![base; n];
    };
    let (mut gl, mut nl, mut gr, mut nr) = (0.0, 0.0, 0.0, 0.0);
    for r in 0..n {
        if x[r][j] <= thr {
            gl += g[r];
            nl += 1.0;
        } else {
            gr += g[r];
            nr += 1.0;
        }
    }
    let left = -gl / (nl + lambda) * lr;
    let right = -gr / (nr + lambda) * lr;
    x.iter()
        .map(|r| base + if r[j] <= thr { left } else { right })
        .collect()
}

/// Random windowed dataset with one term, one group, and valence, arousal
/// and expression labels.
pub fn random_windowed(seed: u64, n: usize, videos: usize) -> WindowedDataset {
    let mut r = rng(seed);
    let schema = WindowSchema {
        terms: vec![Term::new("short", 1.0)],
        groups: vec![(GroupName::Gaze, 2)],
        tasks: vec![Task::Valence, Task::Arousal, Task::Expression],
    };
    let mut ds = WindowedDataset::empty(schema);
    for i in 0..n {
        // Labels concentrate near the origin so center regions are busy.
        let v: f64 = (r.random::<f64>() * 2.0 - 1.0) * r.random::<f64>();
        let a: f64 = (r.random::<f64>() * 2.0 - 1.0) * r.random::<f64>();
        let e = if r.random::<f64>() < 0.6 {
            0
        } else {
            r.random_range(1..7u8)
        };
        ds.samples.push(WindowedSample {
            video_id: format!("v{:02}", i % videos.max(1)),
            anchor: i as f64,
            features: (0..8).map(|_| r.random::<f64>()).collect(),
            labels: vec![v, a, e as f64],
        });
    }
    ds
}
