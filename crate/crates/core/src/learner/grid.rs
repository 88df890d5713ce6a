use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit, EvalMetric, GbdtParams, Labeled, Objective};
use crate::error::{Error, Result};

/// Candidate values for the four tuned parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub num_leaves: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub max_depth: Vec<i32>,
    pub min_child_samples: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            num_leaves: vec![15, 31, 63],
            learning_rate: vec![0.05, 0.1],
            max_depth: vec![-1, 6],
            min_child_samples: vec![10, 20],
        }
    }
}

impl GridSpec {
    pub fn size(&self) -> usize {
        self.num_leaves.len()
            * self.learning_rate.len()
            * self.max_depth.len()
            * self.min_child_samples.len()
    }

    /// Cells in enumeration order (`num_leaves` outermost,
    /// `min_child_samples` innermost), other fields taken from `base`.
    pub fn cells(&self, base: &GbdtParams) -> Vec<GbdtParams> {
        let mut out = Vec::with_capacity(self.size());
        for &nl in &self.num_leaves {
            for &lr in &self.learning_rate {
                for &md in &self.max_depth {
                    for &mcs in &self.min_child_samples {
                        out.push(GbdtParams {
                            num_leaves: nl,
                            learning_rate: lr,
                            max_depth: md,
                            min_child_samples: mcs,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub params: GbdtParams,
    /// Best validation metric reached.
    pub score: f64,
    pub best_iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: GbdtParams,
    pub best_score: f64,
    pub cells: Vec<GridCell>,
}

/// Exhaustive search; the first cell (in enumeration order) with the
/// highest validation score wins.
pub fn grid_search(
    grid: &GridSpec,
    base: &GbdtParams,
    objective: Objective,
    train: Labeled,
    valid: Labeled,
) -> Result<GridResult> {
    let cells = grid.cells(base);
    if cells.is_empty() {
        return Err(Error::Parameter("grid search over an empty grid".into()));
    }
    let metric = EvalMetric::default_for(objective);
    let scored = cells
        .into_par_iter()
        .map(|p| {
            let m = fit(objective, train, Some(valid), &p, metric)?;
            Ok(GridCell {
                score: m.best_score.unwrap_or(f64::NEG_INFINITY),
                best_iteration: m.best_iteration,
                params: p,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, c) in scored.iter().enumerate() {
        if c.score > scored[best].score {
            best = i;
        }
    }
    Ok(GridResult {
        best: scored[best].params.clone(),
        best_score: scored[best].score,
        cells: scored,
    })
}
