//! Gradient-boosted decision trees: squared-error regression and 7-class
//! softmax classification, leaf-wise growth on exact split points, early
//! stopping on a validation metric, gain importance and grid search.

mod grid;
mod tree;

pub use grid::{grid_search, GridCell, GridResult, GridSpec};
pub use tree::{split_gain, Node, Tree};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{argmax, custom_regression_metric, expression_score, AbsentClassPolicy};
use tree::{grow_tree, ColumnIndex, GrowParams, Scratch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Regression,
    Multiclass,
}

impl Objective {
    pub fn output_width(self) -> usize {
        match self {
            Objective::Regression => 1,
            Objective::Multiclass => NUM_CLASSES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtParams {
    pub num_leaves: usize,
    pub learning_rate: f64,
    /// `-1` for unlimited depth.
    pub max_depth: i32,
    pub min_child_samples: usize,
    pub num_rounds: usize,
    pub early_stopping_rounds: usize,
    pub lambda_l2: f64,
    /// Recorded with every model. Training is fully deterministic and draws
    /// no random numbers.
    pub seed: u64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            num_leaves: 15,
            learning_rate: 0.1,
            max_depth: -1,
            min_child_samples: 20,
            num_rounds: 200,
            early_stopping_rounds: 20,
            lambda_l2: 1.0,
            seed: 0,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_leaves < 2 {
            return Err(Error::Parameter(format!(
                "num_leaves must be >= 2, got {}",
                self.num_leaves
            )));
        }
        if self.min_child_samples < 1 {
            return Err(Error::Parameter("min_child_samples must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Parameter(format!(
                "learning_rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if self.max_depth == 0 || self.max_depth < -1 {
            return Err(Error::Parameter(format!(
                "max_depth must be -1 or positive, got {}",
                self.max_depth
            )));
        }
        if !(self.lambda_l2 >= 0.0 && self.lambda_l2.is_finite()) {
            return Err(Error::Parameter(format!(
                "lambda_l2 must be >= 0, got {}",
                self.lambda_l2
            )));
        }
        if self.early_stopping_rounds == 0 {
            return Err(Error::Parameter(
                "early_stopping_rounds must be >= 1".into(),
            ));
        }
        Ok(())
    }

    fn grow(&self) -> GrowParams {
        GrowParams {
            num_leaves: self.num_leaves,
            max_depth: (self.max_depth > 0).then_some(self.max_depth as usize),
            min_child_samples: self.min_child_samples,
            lambda_l2: self.lambda_l2,
            learning_rate: self.learning_rate,
        }
    }
}

/// Validation metric used for early stopping; higher is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMetric {
    /// `2 * CCC - MSE`.
    CccMinusMse,
    /// `0.67 * macro F1 + 0.33 * accuracy` of the argmax class.
    ExpressionScore,
}

impl EvalMetric {
    pub fn default_for(objective: Objective) -> Self {
        match objective {
            Objective::Regression => EvalMetric::CccMinusMse,
            Objective::Multiclass => EvalMetric::ExpressionScore,
        }
    }

    /// Scores raw model outputs (`n x width`) against targets. Undefined
    /// values (e.g. CCC of constant vectors) score negative infinity.
    pub fn evaluate(self, outputs: &Matrix, targets: &[f64]) -> f64 {
        let r = match self {
            EvalMetric::CccMinusMse => custom_regression_metric(outputs.as_slice(), targets),
            EvalMetric::ExpressionScore => {
                let pred: Vec<u8> = outputs.iter_rows().map(argmax).collect();
                let truth: Vec<u8> = targets.iter().map(|&y| y as u8).collect();
                expression_score(&pred, &truth, AbsentClassPolicy::Exclude).map(|s| s.expr_score)
            }
        };
        r.unwrap_or(f64::NEG_INFINITY)
    }
}

/// Trained boosted ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub objective: Objective,
    pub params: GbdtParams,
    pub num_features: usize,
    /// Base score per output: mean target, or per-class log prior.
    pub init_scores: Vec<f64>,
    /// One tree list per output.
    pub trees: Vec<Vec<Tree>>,
    /// Gain accumulated per feature over the retained trees.
    pub importance: Vec<f64>,
    /// Rounds kept (trees from later rounds were discarded).
    pub best_iteration: usize,
    pub rounds_trained: usize,
    /// Validation metric at `best_iteration`, when a validation set was used.
    pub best_score: Option<f64>,
    /// Training loss after the initial score and after every kept round.
    #[serde(default)]
    pub train_loss: Vec<f64>,
}

/// Floor applied to class priors so that absent classes keep a finite logit.
const MIN_PRIOR: f64 = 1e-12;

impl GbdtModel {
    pub fn output_width(&self) -> usize {
        self.objective.output_width()
    }

    pub fn num_trees(&self) -> usize {
        self.trees.iter().map(Vec::len).sum()
    }

    fn raw_row(&self, row: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.init_scores[k]
                + self.trees[k]
                    .iter()
                    .filter(|t| t.round < self.best_iteration)
                    .map(|t| t.predict(row))
                    .sum::<f64>();
        }
    }

    /// Predictions: one value per row for regression, seven class
    /// probabilities per row for classification.
    pub fn predict(&self, rows: &Matrix) -> Result<Matrix> {
        if rows.cols() != self.num_features {
            return Err(Error::Shape(format!(
                "model expects {} features, got {}",
                self.num_features,
                rows.cols()
            )));
        }
        let w = self.output_width();
        let mut out = Matrix::zeros(rows.rows(), w);
        for r in 0..rows.rows() {
            let o = out.row_mut(r);
            self.raw_row(rows.row(r), o);
            if self.objective == Objective::Multiclass {
                softmax_in_place(o);
            }
        }
        Ok(out)
    }

    pub fn feature_importance(&self) -> &[f64] {
        &self.importance
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

/// Gain totals per feature over a set of trees.
pub fn importance_of(trees: &[Vec<Tree>], num_features: usize) -> Vec<f64> {
    let mut imp = vec![0.0; num_features];
    for t in trees.iter().flatten() {
        for n in &t.nodes {
            if let Node::Split { feature, gain, .. } = n {
                imp[*feature] += gain;
            }
        }
    }
    imp
}

/// Indices of the `ceil(fraction * n)` highest-gain features (ties to the
/// lower index), sorted ascending.
pub fn select_top_features(importance: &[f64], fraction: f64) -> Result<Vec<usize>> {
    if importance.is_empty() {
        return Err(Error::EmptyInput(
            "no feature importances to select from".into(),
        ));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Parameter(format!(
            "selection fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let keep = ((fraction * importance.len() as f64).ceil() as usize).clamp(1, importance.len());
    let mut idx: Vec<usize> = (0..importance.len()).collect();
    idx.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    idx.truncate(keep);
    idx.sort_unstable();
    Ok(idx)
}

/// A feature matrix with its targets (class ids stored as exact floats for
/// classification).
#[derive(Debug, Clone, Copy)]
pub struct Labeled<'a> {
    pub x: &'a Matrix,
    pub y: &'a [f64],
}

impl<'a> Labeled<'a> {
    pub fn new(x: &'a Matrix, y: &'a [f64]) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::Shape(format!(
                "{} rows vs {} targets",
                x.rows(),
                y.len()
            )));
        }
        Ok(Labeled { x, y })
    }
}

pub fn train_regressor(
    train: Labeled,
    valid: Option<Labeled>,
    params: &GbdtParams,
) -> Result<GbdtModel> {
    fit(
        Objective::Regression,
        train,
        valid,
        params,
        EvalMetric::CccMinusMse,
    )
}

pub fn train_classifier(
    train: Labeled,
    valid: Option<Labeled>,
    params: &GbdtParams,
) -> Result<GbdtModel> {
    fit(
        Objective::Multiclass,
        train,
        valid,
        params,
        EvalMetric::ExpressionScore,
    )
}

fn check_targets(objective: Objective, y: &[f64]) -> Result<()> {
    match objective {
        Objective::Regression => {
            if let Some(v) = y.iter().find(|v| !v.is_finite()) {
                return Err(Error::Range(format!("non-finite regression target {v}")));
            }
        }
        Objective::Multiclass => {
            if let Some(v) = y
                .iter()
                .find(|v| !(v.fract() == 0.0 && (0.0..NUM_CLASSES as f64).contains(*v)))
            {
                return Err(Error::Range(format!(
                    "class label {v} outside 0..{NUM_CLASSES}"
                )));
            }
        }
    }
    Ok(())
}

fn training_loss(objective: Objective, raw: &Matrix, y: &[f64]) -> f64 {
    let n = y.len() as f64;
    match objective {
        Objective::Regression => {
            raw.as_slice()
                .iter()
                .zip(y)
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>()
                / n
        }
        Objective::Multiclass => {
            let mut total = 0.0;
            let mut buf = [0.0; NUM_CLASSES];
            for (r, &t) in y.iter().enumerate() {
                buf.copy_from_slice(raw.row(r));
                softmax_in_place(&mut buf);
                total -= buf[t as usize].max(f64::MIN_POSITIVE).ln();
            }
            total / n
        }
    }
}

/// Boosts trees on `train`, early-stopping on `valid` when given.
///
/// Regression uses squared error (gradient `pred - y`, hessian 1);
/// multiclass uses softmax cross-entropy with one tree per class per round
/// (gradient `p - 1{y=c}`, hessian `p (1 - p)`). Classes absent from the
/// training set get no trees and stay at their prior.
pub fn fit(
    objective: Objective,
    train: Labeled,
    valid: Option<Labeled>,
    params: &GbdtParams,
    metric: EvalMetric,
) -> Result<GbdtModel> {
    params.validate()?;
    let n = train.y.len();
    if n == 0 {
        return Err(Error::EmptyInput("empty training set".into()));
    }
    check_targets(objective, train.y)?;
    let nf = train.x.cols();
    if let Some(v) = &valid {
        if v.x.cols() != nf {
            return Err(Error::Shape(format!(
                "validation has {} features, training has {nf}",
                v.x.cols()
            )));
        }
        check_targets(objective, v.y)?;
    }
    let width = objective.output_width();

    let (init_scores, class_present) = match objective {
        Objective::Regression => (vec![train.y.iter().sum::<f64>() / n as f64], vec![true]),
        Objective::Multiclass => {
            let mut counts = [0usize; NUM_CLASSES];
            for &y in train.y {
                counts[y as usize] += 1;
            }
            (
                counts
                    .iter()
                    .map(|&c| (c as f64 / n as f64).max(MIN_PRIOR).ln())
                    .collect(),
                counts.iter().map(|&c| c > 0).collect::<Vec<_>>(),
            )
        }
    };

    let ci = ColumnIndex::new(train.x);
    let grow = params.grow();
    let mut scratch: Vec<Scratch> = (0..width).map(|_| Scratch::default()).collect();
    let mut raw = Matrix::zeros(n, width);
    for r in 0..n {
        raw.row_mut(r).copy_from_slice(&init_scores);
    }
    let mut valid_raw = valid.map(|v| {
        let mut m = Matrix::zeros(v.x.rows(), width);
        for r in 0..v.x.rows() {
            m.row_mut(r).copy_from_slice(&init_scores);
        }
        m
    });
    let eval_valid = |raw: &Matrix, v: &Labeled| -> f64 {
        match objective {
            Objective::Regression => metric.evaluate(raw, v.y),
            Objective::Multiclass => {
                let mut p = raw.clone();
                for r in 0..p.rows() {
                    softmax_in_place(p.row_mut(r));
                }
                metric.evaluate(&p, v.y)
            }
        }
    };

    let mut trees: Vec<Vec<Tree>> = vec![Vec::new(); width];
    let mut best_score = valid
        .as_ref()
        .zip(valid_raw.as_ref())
        .map(|(v, m)| eval_valid(m, v));
    let mut best_iteration = 0;
    let mut rounds_trained = 0;
    let mut losses = vec![training_loss(objective, &raw, train.y)];

    for round in 0..params.num_rounds {
        let grown: Vec<Option<tree::Grown>> = match objective {
            Objective::Regression => {
                let grad: Vec<f64> = raw
                    .as_slice()
                    .iter()
                    .zip(train.y)
                    .map(|(p, y)| p - y)
                    .collect();
                let hess = vec![1.0; n];
                vec![grow_tree(&ci, &mut scratch[0], &grad, &hess, &grow, round)]
            }
            Objective::Multiclass => {
                let mut prob = raw.clone();
                for r in 0..n {
                    softmax_in_place(prob.row_mut(r));
                }
                scratch
                    .par_iter_mut()
                    .enumerate()
                    .map(|(c, s)| {
                        if !class_present[c] {
                            return None;
                        }
                        let mut grad = Vec::with_capacity(n);
                        let mut hess = Vec::with_capacity(n);
                        for (r, &y) in train.y.iter().enumerate() {
                            let p = prob.get(r, c);
                            grad.push(p - if y as usize == c { 1.0 } else { 0.0 });
                            hess.push(p * (1.0 - p));
                        }
                        grow_tree(&ci, s, &grad, &hess, &grow, round)
                    })
                    .collect()
            }
        };
        if grown.iter().all(Option::is_none) {
            break;
        }
        rounds_trained = round + 1;
        for (k, g) in grown.into_iter().enumerate() {
            let Some(g) = g else { continue };
            for (r, v) in g.row_values.iter().enumerate() {
                let cur = raw.get(r, k);
                raw.set(r, k, cur + v);
            }
            if let (Some(vm), Some(v)) = (valid_raw.as_mut(), valid.as_ref()) {
                for r in 0..v.x.rows() {
                    let cur = vm.get(r, k);
                    vm.set(r, k, cur + g.tree.predict(v.x.row(r)));
                }
            }
            trees[k].push(g.tree);
        }
        losses.push(training_loss(objective, &raw, train.y));

        match (valid.as_ref(), valid_raw.as_ref()) {
            (Some(v), Some(vm)) => {
                let s = eval_valid(vm, v);
                if best_score.is_none_or(|b| s > b) {
                    best_score = Some(s);
                    best_iteration = round + 1;
                } else if round + 1 - best_iteration >= params.early_stopping_rounds {
                    break;
                }
            }
            _ => best_iteration = round + 1,
        }
    }

    for list in &mut trees {
        list.retain(|t| t.round < best_iteration);
    }
    losses.truncate(best_iteration + 1);
    let importance = importance_of(&trees, nf);
    Ok(GbdtModel {
        objective,
        params: params.clone(),
        num_features: nf,
        init_scores,
        trees,
        importance,
        best_iteration,
        rounds_trained,
        best_score,
        train_loss: losses,
    })
}
