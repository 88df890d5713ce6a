//! Challenge scoring: concordance correlation, the valence/arousal total,
//! the expression score, and the boosted-tree training metric.

use serde::{Deserialize, Serialize};

use crate::data::NUM_CLASSES;
use crate::error::{Error, Result};

fn check_pair(x: &[f64], y: &[f64], min_len: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "{} annotations vs {} predictions",
            x.len(),
            y.len()
        )));
    }
    if x.len() < min_len {
        return Err(Error::InsufficientData(format!(
            "need at least {min_len} values, got {}",
            x.len()
        )));
    }
    Ok(())
}

/// Concordance correlation coefficient with population (1/N) moments:
/// `2 s_xy / (s_x^2 + s_y^2 + (mean_x - mean_y)^2)`.
pub fn ccc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxx += da * da;
        syy += db * db;
        sxy += da * db;
    }
    let denom = sxx / n + syy / n + (mx - my) * (mx - my);
    if denom == 0.0 {
        return Err(Error::UndefinedMetric(
            "CCC of two constant vectors with equal means".into(),
        ));
    }
    Ok((2.0 * sxy / n / denom).clamp(-1.0, 1.0))
}

pub fn mse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(truth, pred, 1)?;
    Ok(truth
        .iter()
        .zip(pred)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / truth.len() as f64)
}

/// Mean of the valence and arousal CCCs.
pub fn va_score(ccc_valence: f64, ccc_arousal: f64) -> f64 {
    (ccc_valence + ccc_arousal) / 2.0
}

/// `0.67 * F1 + 0.33 * accuracy`.
pub fn combine_expression(macro_f1: f64, accuracy: f64) -> f64 {
    0.67 * macro_f1 + 0.33 * accuracy
}

/// `2 * CCC - MSE`; higher is better.
pub fn custom_regression_metric(pred: &[f64], truth: &[f64]) -> Result<f64> {
    Ok(2.0 * ccc(truth, pred)? - mse(truth, pred)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AbsentClassPolicy {
    /// Classes absent from both truth and prediction are left out of the
    /// macro average.
    #[default]
    Exclude,
    /// Absent classes contribute an F1 of zero.
    CountAsZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionScore {
    pub macro_f1: f64,
    pub accuracy: f64,
    pub expr_score: f64,
    /// Per-class F1; `None` for classes excluded from the average.
    pub per_class_f1: Vec<Option<f64>>,
}

/// Macro F1 over the seven classes, accuracy, and their weighted score.
pub fn expression_score(
    pred: &[u8],
    truth: &[u8],
    policy: AbsentClassPolicy,
) -> Result<ExpressionScore> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::InsufficientData(
            "expression score of an empty set".into(),
        ));
    }
    if let Some(c) = pred
        .iter()
        .chain(truth)
        .find(|&&c| c as usize >= NUM_CLASSES)
    {
        return Err(Error::Range(format!("class {c} outside 0..{NUM_CLASSES}")));
    }
    let mut tp = [0usize; NUM_CLASSES];
    let mut pred_n = [0usize; NUM_CLASSES];
    let mut true_n = [0usize; NUM_CLASSES];
    for (&p, &t) in pred.iter().zip(truth) {
        pred_n[p as usize] += 1;
        true_n[t as usize] += 1;
        if p == t {
            tp[p as usize] += 1;
        }
    }
    let per_class_f1: Vec<Option<f64>> = (0..NUM_CLASSES)
        .map(|c| {
            if pred_n[c] + true_n[c] == 0 {
                match policy {
                    AbsentClassPolicy::Exclude => None,
                    AbsentClassPolicy::CountAsZero => Some(0.0),
                }
            } else {
                // F1 = 2TP / (2TP + FP + FN)
                Some(2.0 * tp[c] as f64 / (pred_n[c] + true_n[c]) as f64)
            }
        })
        .collect();
    let counted: Vec<f64> = per_class_f1.iter().flatten().copied().collect();
    let macro_f1 = counted.iter().sum::<f64>() / counted.len() as f64;
    let accuracy = tp.iter().sum::<usize>() as f64 / truth.len() as f64;
    Ok(ExpressionScore {
        macro_f1,
        accuracy,
        expr_score: combine_expression(macro_f1, accuracy),
        per_class_f1,
    })
}

/// Index of the largest probability; ties go to the lowest class.
pub fn argmax(probs: &[f64]) -> u8 {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best as u8
}

/// Scores of one evaluation run. Fields for tasks that were not evaluated
/// are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalReport {
    pub ccc_valence: Option<f64>,
    pub ccc_arousal: Option<f64>,
    pub va_score: Option<f64>,
    pub macro_f1: Option<f64>,
    pub accuracy: Option<f64>,
    pub expr_score: Option<f64>,
    pub samples_valence: usize,
    pub samples_arousal: usize,
    pub samples_expression: usize,
}

impl EvalReport {
    pub fn set_va(&mut self) {
        if let (Some(v), Some(a)) = (self.ccc_valence, self.ccc_arousal) {
            self.va_score = Some(va_score(v, a));
        }
    }

    pub fn set_expression(&mut self, s: &ExpressionScore, n: usize) {
        self.macro_f1 = Some(s.macro_f1);
        self.accuracy = Some(s.accuracy);
        self.expr_score = Some(s.expr_score);
        self.samples_expression = n;
    }

    /// `key=value` lines, one per populated field.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: Option<f64>| {
            if let Some(v) = v {
                out.push_str(&format!("{k}={}\n", crate::fmt::sig9(v)));
            }
        };
        put("ccc_valence", self.ccc_valence);
        put("ccc_arousal", self.ccc_arousal);
        put("va_score", self.va_score);
        put("macro_f1", self.macro_f1);
        put("accuracy", self.accuracy);
        put("expr_score", self.expr_score);
        for (k, n) in [
            ("samples_valence", self.samples_valence),
            ("samples_arousal", self.samples_arousal),
            ("samples_expression", self.samples_expression),
        ] {
            if n > 0 {
                out.push_str(&format!("{k}={n}\n"));
            }
        }
        out
    }
}
