//! Stacked ensembles: per-group sub-models, single-term combiners,
//! multi-term combiners and the multi-task fusion model.
//!
//! Every combiner is trained on out-of-fold predictions. Folds are made of
//! whole videos. The fold-`k` version of each stage was fitted without any
//! row of fold `k`, and a row's stacking inputs always come from the fold-`k`
//! versions of the stages below it, so [`Trained::oof`] can be replayed from
//! [`Trained::folds`].

mod bundle;

pub use bundle::{load_bundle, save_bundle, Bundle, BundleManifest, Preprocess, TaskModels};

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{GroupName, Task, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::learner::{
    fit, select_top_features, EvalMetric, GbdtModel, GbdtParams, Labeled, Objective,
};
use crate::matrix::Matrix;
use crate::windowing::{Term, WindowSchema, WindowedDataset};

/// Assignment of videos to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: BTreeMap<String, usize>,
}

impl FoldPlan {
    /// Sorts the distinct ids, shuffles them with `seed` and deals them
    /// round-robin into `k` folds.
    pub fn new<I, S>(videos: I, k: usize, seed: u64) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        if k < 2 {
            return Err(Error::Parameter(format!(
                "fold count must be >= 2, got {k}"
            )));
        }
        let ids: BTreeSet<String> = videos.into_iter().map(Into::into).collect();
        if ids.len() < k {
            return Err(Error::Parameter(format!(
                "{} videos cannot fill {k} folds",
                ids.len()
            )));
        }
        let mut ids: Vec<String> = ids.into_iter().collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let folds = ids
            .into_iter()
            .enumerate()
            .map(|(i, v)| (v, i % k))
            .collect();
        Ok(FoldPlan { k, seed, folds })
    }

    pub fn fold_of(&self, video: &str) -> Result<usize> {
        self.folds
            .get(video)
            .copied()
            .ok_or_else(|| Error::Precondition(format!("video {video} is not in the fold plan")))
    }

    pub fn videos_in(&self, fold: usize) -> Vec<&str> {
        self.folds
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(v, _)| v.as_str())
            .collect()
    }

    /// Fold id of every sample.
    pub fn row_folds(&self, ds: &WindowedDataset) -> Result<Vec<usize>> {
        ds.samples
            .iter()
            .map(|s| self.fold_of(&s.video_id))
            .collect()
    }
}

pub fn make_fold_plan(ds: &WindowedDataset, k: usize, seed: u64) -> Result<FoldPlan> {
    FoldPlan::new(ds.samples.iter().map(|s| s.video_id.as_str()), k, seed)
}

/// Training options shared by every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct StackConfig {
    pub sub_params: GbdtParams,
    pub combiner_params: GbdtParams,
    /// Fraction of each sub-model's features kept after gain ranking;
    /// `None` disables selection.
    pub select_fraction: Option<f64>,
    /// Groups to model; `None` uses every group in the dataset.
    pub groups: Option<Vec<GroupName>>,
}


/// One boosted model and the columns it reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub model: GbdtModel,
    /// Input columns kept by feature selection; `None` reads all columns.
    pub selected: Option<Vec<usize>>,
    /// Videos whose rows were used to fit the model, early-stopping rows
    /// included. Sorted.
    pub videos: Vec<String>,
}

impl Unit {
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        match &self.selected {
            Some(cols) => {
                if let Some(&c) = cols.iter().find(|&&c| c >= x.cols()) {
                    return Err(Error::Shape(format!(
                        "selected column {c} outside {} inputs",
                        x.cols()
                    )));
                }
                self.model.predict(&x.select_cols(cols))
            }
            None => self.model.predict(x),
        }
    }

    pub fn saw(&self, video: &str) -> bool {
        self.videos
            .binary_search_by(|v| v.as_str().cmp(video))
            .is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubModel {
    pub group: GroupName,
    pub unit: Unit,
}

/// Sub-models for every feature group of one term, and the combiner over
/// their outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleTermModel {
    pub task: Task,
    pub term: Term,
    /// Group layout at training time, in sub-model order.
    pub groups: Vec<(GroupName, usize)>,
    pub subs: Vec<SubModel>,
    /// Absent when only the sub-models were trained.
    pub combiner: Option<Unit>,
}

/// Combiner over the single-term models of one task, supervised by the
/// short-term label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiTermModel {
    pub task: Task,
    pub terms: Vec<SingleTermModel>,
    pub combiner: Unit,
}

/// Final model of one task: its own per-term outputs plus the multi-term
/// outputs of the other tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub task: Task,
    pub terms: Vec<SingleTermModel>,
    pub others: Vec<MultiTermModel>,
    pub combiner: Unit,
}

/// Common interface of the trained stages.
pub trait Stage {
    fn task(&self) -> Task;
    /// Every boosted model the stage's output depends on.
    fn units(&self) -> Vec<&Unit>;
    fn predict(&self, ds: &WindowedDataset) -> Result<Matrix>;
}

/// A stage fitted on all rows, its per-fold versions, and its out-of-fold
/// output on the training rows.
#[derive(Debug, Clone)]
pub struct Trained<M> {
    pub full: M,
    pub folds: Vec<M>,
    /// Row `r` holds the output of `folds[fold(r)]` on row `r`.
    pub oof: Matrix,
}

fn width(task: Task) -> usize {
    task.output_width()
}

fn objective(task: Task) -> Objective {
    if task.is_classification() {
        Objective::Multiclass
    } else {
        Objective::Regression
    }
}

/// Column names of a task's output block, prefixed with `tag`.
pub fn output_names(task: Task, tag: &str) -> Vec<String> {
    if task.is_classification() {
        (0..NUM_CLASSES)
            .map(|c| format!("{task}:{tag}:p{c}"))
            .collect()
    } else {
        vec![format!("{task}:{tag}")]
    }
}

fn term_index(schema: &WindowSchema, term: &Term) -> Result<usize> {
    let t = schema
        .term_index(&term.name)
        .ok_or_else(|| Error::Manifest(format!("dataset has no term {}", term.name)))?;
    if (schema.terms[t].seconds - term.seconds).abs() > 1e-9 {
        return Err(Error::Manifest(format!(
            "term {} is {} s in the dataset, model expects {} s",
            term.name, schema.terms[t].seconds, term.seconds
        )));
    }
    Ok(t)
}

fn group_index(schema: &WindowSchema, group: GroupName, dim: usize) -> Result<usize> {
    let g = schema
        .group_index(group)
        .ok_or_else(|| Error::Manifest(format!("dataset has no group {group}")))?;
    if schema.groups[g].1 != dim {
        return Err(Error::Manifest(format!(
            "group {group} has {} channels in the dataset, model expects {dim}",
            schema.groups[g].1
        )));
    }
    Ok(g)
}

impl SingleTermModel {
    pub fn combiner_input_width(&self) -> usize {
        self.subs.len() * width(self.task)
    }

    /// Sub-model outputs, one matrix per group.
    pub fn sub_outputs(&self, ds: &WindowedDataset) -> Result<Vec<Matrix>> {
        let t = term_index(&ds.schema, &self.term)?;
        let idx = self
            .groups
            .iter()
            .map(|&(g, d)| group_index(&ds.schema, g, d))
            .collect::<Result<Vec<_>>>()?;
        self.subs
            .iter()
            .zip(idx)
            .map(|(s, g)| s.unit.predict(&ds.block_matrix(t, g)))
            .collect()
    }

    pub fn combiner_inputs(&self, ds: &WindowedDataset) -> Result<Matrix> {
        let outs = self.sub_outputs(ds)?;
        Matrix::hstack(&outs.iter().collect::<Vec<_>>())
    }
}

impl Stage for SingleTermModel {
    fn task(&self) -> Task {
        self.task
    }

    fn units(&self) -> Vec<&Unit> {
        self.subs
            .iter()
            .map(|s| &s.unit)
            .chain(self.combiner.as_ref())
            .collect()
    }

    /// Combiner output; a model without a combiner returns its single
    /// sub-model's output, or the stacked sub-model outputs when it has
    /// several groups.
    fn predict(&self, ds: &WindowedDataset) -> Result<Matrix> {
        let x = self.combiner_inputs(ds)?;
        match &self.combiner {
            Some(c) => c.predict(&x),
            None => Ok(x),
        }
    }
}

impl MultiTermModel {
    pub fn combiner_inputs(&self, ds: &WindowedDataset) -> Result<Matrix> {
        let outs = self
            .terms
            .iter()
            .map(|t| t.predict(ds))
            .collect::<Result<Vec<_>>>()?;
        Matrix::hstack(&outs.iter().collect::<Vec<_>>())
    }
}

impl Stage for MultiTermModel {
    fn task(&self) -> Task {
        self.task
    }

    fn units(&self) -> Vec<&Unit> {
        self.terms
            .iter()
            .flat_map(|t| t.units())
            .chain([&self.combiner])
            .collect()
    }

    fn predict(&self, ds: &WindowedDataset) -> Result<Matrix> {
        self.combiner.predict(&self.combiner_inputs(ds)?)
    }
}

impl FusionModel {
    /// Names of the combiner inputs, in column order.
    pub fn input_names(&self) -> Vec<String> {
        self.terms
            .iter()
            .flat_map(|t| output_names(self.task, &t.term.name))
            .chain(
                self.others
                    .iter()
                    .flat_map(|o| output_names(o.task, "multi_term")),
            )
            .collect()
    }

    pub fn combiner_inputs(&self, ds: &WindowedDataset) -> Result<Matrix> {
        let mut outs = self
            .terms
            .iter()
            .map(|t| t.predict(ds))
            .collect::<Result<Vec<_>>>()?;
        for o in &self.others {
            outs.push(o.predict(ds)?);
        }
        Matrix::hstack(&outs.iter().collect::<Vec<_>>())
    }
}

impl Stage for FusionModel {
    fn task(&self) -> Task {
        self.task
    }

    fn units(&self) -> Vec<&Unit> {
        self.terms
            .iter()
            .flat_map(|t| t.units())
            .chain(self.others.iter().flat_map(|o| o.units()))
            .chain([&self.combiner])
            .collect()
    }

    fn predict(&self, ds: &WindowedDataset) -> Result<Matrix> {
        self.combiner.predict(&self.combiner_inputs(ds)?)
    }
}

/// Fold id and video of every training row.
struct Rows {
    k: usize,
    fold: Vec<usize>,
    video: Vec<String>,
}

impl Rows {
    fn new(ds: &WindowedDataset, plan: &FoldPlan) -> Result<Self> {
        Ok(Rows {
            k: plan.k,
            fold: plan.row_folds(ds)?,
            video: ds.samples.iter().map(|s| s.video_id.clone()).collect(),
        })
    }

    fn in_fold(&self, j: usize) -> Vec<usize> {
        (0..self.fold.len())
            .filter(|&r| self.fold[r] == j)
            .collect()
    }

    /// Training and early-stopping rows of the fold-`j` model. With three or
    /// more folds the model trains on folds other than `j` and `j + 1` and
    /// stops on fold `j + 1`; with two it trains on the other fold for a
    /// fixed number of rounds.
    fn split(&self, j: usize) -> (Vec<usize>, Vec<usize>) {
        if self.k < 3 {
            return (
                (0..self.fold.len())
                    .filter(|&r| self.fold[r] != j)
                    .collect(),
                Vec::new(),
            );
        }
        let stop = (j + 1) % self.k;
        let train = (0..self.fold.len())
            .filter(|&r| self.fold[r] != j && self.fold[r] != stop)
            .collect();
        (train, self.in_fold(stop))
    }

    fn videos_of(&self, rows: &[usize]) -> Vec<String> {
        let set: BTreeSet<&str> = rows.iter().map(|&r| self.video[r].as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }
}

fn fit_unit(
    objective: Objective,
    x: &Matrix,
    y: &[f64],
    rows: &Rows,
    split: (&[usize], &[usize]),
    params: &GbdtParams,
    select: Option<f64>,
) -> Result<Unit> {
    let (train, valid) = split;
    let xt = x.select_rows(train);
    let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let xv = x.select_rows(valid);
    let yv: Vec<f64> = valid.iter().map(|&i| y[i]).collect();
    let metric = EvalMetric::default_for(objective);
    let run = |xt: &Matrix, xv: &Matrix| -> Result<GbdtModel> {
        let v = if valid.is_empty() {
            None
        } else {
            Some(Labeled::new(xv, &yv)?)
        };
        fit(objective, Labeled::new(xt, &yt)?, v, params, metric)
    };
    let model = run(&xt, &xv)?;
    let (model, selected) = match select {
        None => (model, None),
        Some(f) => {
            let cols = select_top_features(&model.importance, f)?;
            (
                run(&xt.select_cols(&cols), &xv.select_cols(&cols))?,
                Some(cols),
            )
        }
    };
    let used: Vec<usize> = train.iter().chain(valid).copied().collect();
    Ok(Unit {
        model,
        selected,
        videos: rows.videos_of(&used),
    })
}

/// Per-fold units, the full-data unit and the out-of-fold output.
struct Stacked {
    folds: Vec<Unit>,
    full: Unit,
    oof: Matrix,
}

/// Fits the fold models, the out-of-fold predictions and a full-data refit
/// whose round count is the mean of the folds' best iterations.
fn fit_stacked(
    objective: Objective,
    x: &Matrix,
    y: &[f64],
    rows: &Rows,
    params: &GbdtParams,
    select: Option<f64>,
) -> Result<Stacked> {
    let mut folds = Vec::with_capacity(rows.k);
    let mut oof = Matrix::zeros(x.rows(), objective.output_width());
    for j in 0..rows.k {
        let (train, valid) = rows.split(j);
        if train.is_empty() {
            return Err(Error::InsufficientData(format!(
                "fold {j} leaves no training rows; use fewer folds or more videos"
            )));
        }
        let unit = fit_unit(objective, x, y, rows, (&train, &valid), params, select)?;
        let held = rows.in_fold(j);
        let pred = unit.predict(&x.select_rows(&held))?;
        for (i, &r) in held.iter().enumerate() {
            oof.row_mut(r).copy_from_slice(pred.row(i));
        }
        folds.push(unit);
    }
    let mean_iter = folds
        .iter()
        .map(|u| u.model.best_iteration as f64)
        .sum::<f64>()
        / folds.len() as f64;
    let full_params = GbdtParams {
        num_rounds: mean_iter.round() as usize,
        ..params.clone()
    };
    let all: Vec<usize> = (0..x.rows()).collect();
    let full = fit_unit(objective, x, y, rows, (&all, &[]), &full_params, select)?;
    Ok(Stacked { folds, full, oof })
}

fn check_rows(ds: &WindowedDataset) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::EmptyInput("no training samples".into()));
    }
    Ok(())
}

fn groups_to_model(
    ds: &WindowedDataset,
    cfg: &StackConfig,
) -> Result<Vec<(usize, GroupName, usize)>> {
    let wanted: Vec<GroupName> = match &cfg.groups {
        Some(g) => g.clone(),
        None => ds.schema.groups.iter().map(|(g, _)| *g).collect(),
    };
    let mut out = Vec::new();
    for g in wanted {
        match ds.schema.group_index(g) {
            Some(i) => out.push((i, g, ds.schema.groups[i].1)),
            None => log::warn!("group {g} is not in the dataset; skipped"),
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no usable feature groups".into()));
    }
    Ok(out)
}

/// Per-group sub-models of one term, without a combiner. The out-of-fold
/// output is the stacked sub-model predictions.
pub fn train_sub_models(
    ds: &WindowedDataset,
    term: &str,
    task: Task,
    cfg: &StackConfig,
    plan: &FoldPlan,
) -> Result<Trained<SingleTermModel>> {
    check_rows(ds)?;
    let t = ds
        .schema
        .term_index(term)
        .ok_or_else(|| Error::Config(format!("dataset has no term {term}")))?;
    let y = ds.labels(t, task)?;
    let rows = Rows::new(ds, plan)?;
    let groups = groups_to_model(ds, cfg)?;
    let fitted = groups
        .par_iter()
        .map(|&(g, _, _)| {
            fit_stacked(
                objective(task),
                &ds.block_matrix(t, g),
                &y,
                &rows,
                &cfg.sub_params,
                cfg.select_fraction,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let layout: Vec<(GroupName, usize)> = groups.iter().map(|&(_, g, d)| (g, d)).collect();
    let model = |pick: &dyn Fn(&Stacked) -> Unit| SingleTermModel {
        task,
        term: ds.schema.terms[t].clone(),
        groups: layout.clone(),
        subs: groups
            .iter()
            .zip(&fitted)
            .map(|(&(_, g, _), s)| SubModel {
                group: g,
                unit: pick(s),
            })
            .collect(),
        combiner: None,
    };
    let full = model(&|s| s.full.clone());
    let folds = (0..plan.k)
        .map(|j| model(&|s| s.folds[j].clone()))
        .collect();
    let oof = Matrix::hstack(&fitted.iter().map(|s| &s.oof).collect::<Vec<_>>())?;
    Ok(Trained { full, folds, oof })
}

/// Sub-models plus a combiner on their out-of-fold outputs, supervised by
/// the same term label.
pub fn train_single_term(
    ds: &WindowedDataset,
    term: &str,
    task: Task,
    cfg: &StackConfig,
    plan: &FoldPlan,
) -> Result<Trained<SingleTermModel>> {
    let subs = train_sub_models(ds, term, task, cfg, plan)?;
    add_combiner(ds, subs, cfg, plan)
}

/// Fits the single-term combiner over already trained sub-models.
pub fn add_combiner(
    ds: &WindowedDataset,
    subs: Trained<SingleTermModel>,
    cfg: &StackConfig,
    plan: &FoldPlan,
) -> Result<Trained<SingleTermModel>> {
    let task = subs.full.task;
    let t = term_index(&ds.schema, &subs.full.term)?;
    let y = ds.labels(t, task)?;
    let rows = Rows::new(ds, plan)?;
    let st = fit_stacked(
        objective(task),
        &subs.oof,
        &y,
        &rows,
        &cfg.combiner_params,
        None,
    )?;
    let Trained {
        mut full,
        mut folds,
        ..
    } = subs;
    full.combiner = Some(st.full);
    for (f, u) in folds.iter_mut().zip(st.folds) {
        f.combiner = Some(u);
    }
    Ok(Trained {
        full,
        folds,
        oof: st.oof,
    })
}

fn check_term_models(
    ds: &WindowedDataset,
    task: Task,
    terms: &[Trained<SingleTermModel>],
) -> Result<()> {
    for m in terms {
        if m.full.task != task {
            return Err(Error::Config(format!(
                "{} term model for {} given to a {task} stage",
                m.full.term.name, m.full.task
            )));
        }
        if m.full.combiner.is_none() {
            return Err(Error::Config(format!(
                "{} term model has no combiner",
                m.full.term.name
            )));
        }
        if m.oof.rows() != ds.len() {
            return Err(Error::Shape(format!(
                "{} term model has {} out-of-fold rows, dataset has {}",
                m.full.term.name,
                m.oof.rows(),
                ds.len()
            )));
        }
    }
    for t in &ds.schema.terms {
        if !terms.iter().any(|m| m.full.term.name == t.name) {
            return Err(Error::Config(format!(
                "missing {task} term model for term {}",
                t.name
            )));
        }
    }
    if terms.len() != ds.schema.terms.len() {
        return Err(Error::Config(format!(
            "{} term models for {} dataset terms",
            terms.len(),
            ds.schema.terms.len()
        )));
    }
    Ok(())
}

/// Combiner over the out-of-fold outputs of all term models, supervised by
/// the short-term label. Term models are used in the given order.
pub fn train_multi_term(
    ds: &WindowedDataset,
    task: Task,
    terms: &[Trained<SingleTermModel>],
    cfg: &StackConfig,
    plan: &FoldPlan,
) -> Result<Trained<MultiTermModel>> {
    check_rows(ds)?;
    check_term_models(ds, task, terms)?;
    let x = Matrix::hstack(&terms.iter().map(|m| &m.oof).collect::<Vec<_>>())?;
    let y = ds.short_labels(task)?;
    let rows = Rows::new(ds, plan)?;
    let st = fit_stacked(objective(task), &x, &y, &rows, &cfg.combiner_params, None)?;
    let full = MultiTermModel {
        task,
        terms: terms.iter().map(|m| m.full.clone()).collect(),
        combiner: st.full,
    };
    let folds = st
        .folds
        .into_iter()
        .enumerate()
        .map(|(j, u)| MultiTermModel {
            task,
            terms: terms.iter().map(|m| m.folds[j].clone()).collect(),
            combiner: u,
        })
        .collect();
    Ok(Trained {
        full,
        folds,
        oof: st.oof,
    })
}

/// Output of `folds[fold(r)]` on every row `r`.
pub fn predict_by_fold<M: Stage>(
    folds: &[M],
    ds: &WindowedDataset,
    plan: &FoldPlan,
) -> Result<Matrix> {
    let row_folds = plan.row_folds(ds)?;
    let mut out: Option<Matrix> = None;
    for (j, m) in folds.iter().enumerate() {
        let idx: Vec<usize> = (0..ds.len()).filter(|&r| row_folds[r] == j).collect();
        if idx.is_empty() {
            continue;
        }
        let pred = m.predict(&ds.subset(&idx))?;
        let o = out.get_or_insert_with(|| Matrix::zeros(ds.len(), pred.cols()));
        for (i, &r) in idx.iter().enumerate() {
            o.row_mut(r).copy_from_slice(pred.row(i));
        }
    }
    Ok(out.unwrap_or_else(|| Matrix::zeros(0, folds.first().map_or(0, |m| width(m.task())))))
}

/// Fusion combiner for `task` over its term models' out-of-fold outputs and
/// the other tasks' multi-term outputs. Every task other than `task` must
/// have a multi-term model; they are used in task order.
pub fn train_fusion(
    ds: &WindowedDataset,
    task: Task,
    terms: &[Trained<SingleTermModel>],
    others: &[&Trained<MultiTermModel>],
    cfg: &StackConfig,
    plan: &FoldPlan,
) -> Result<Trained<FusionModel>> {
    check_rows(ds)?;
    check_term_models(ds, task, terms)?;
    let mut ordered = Vec::new();
    for other in Task::ALL.into_iter().filter(|&t| t != task) {
        let m = others
            .iter()
            .find(|m| m.full.task == other)
            .ok_or_else(|| {
                Error::Config(format!(
                    "fusion for {task} needs a {other} multi-term model"
                ))
            })?;
        if m.folds.len() != plan.k {
            return Err(Error::Config(format!(
                "{other} multi-term model has {} folds, plan has {}",
                m.folds.len(),
                plan.k
            )));
        }
        ordered.push(*m);
    }
    let mut parts: Vec<Matrix> = terms.iter().map(|m| m.oof.clone()).collect();
    for m in &ordered {
        parts.push(predict_by_fold(&m.folds, ds, plan)?);
    }
    let x = Matrix::hstack(&parts.iter().collect::<Vec<_>>())?;
    let y = ds.short_labels(task)?;
    let rows = Rows::new(ds, plan)?;
    let st = fit_stacked(objective(task), &x, &y, &rows, &cfg.combiner_params, None)?;
    let full = FusionModel {
        task,
        terms: terms.iter().map(|m| m.full.clone()).collect(),
        others: ordered.iter().map(|m| m.full.clone()).collect(),
        combiner: st.full,
    };
    let folds = st
        .folds
        .into_iter()
        .enumerate()
        .map(|(j, u)| FusionModel {
            task,
            terms: terms.iter().map(|m| m.folds[j].clone()).collect(),
            others: ordered.iter().map(|m| m.folds[j].clone()).collect(),
            combiner: u,
        })
        .collect();
    Ok(Trained {
        full,
        folds,
        oof: st.oof,
    })
}

/// Result of checking out-of-fold rows against the videos their producing
/// models were fitted on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub rows: usize,
    pub models_checked: usize,
    /// `(row, video)` pairs whose output came from a model that saw the
    /// row's video.
    pub violations: Vec<(usize, String)>,
}

/// For every training row, checks that no model in the fold chain that
/// produced its out-of-fold output (and hence the next stage's input) was
/// fitted on the row's video.
pub fn audit_leakage<M: Stage>(
    t: &Trained<M>,
    ds: &WindowedDataset,
    plan: &FoldPlan,
) -> Result<LeakageReport> {
    if t.oof.rows() != ds.len() {
        return Err(Error::Shape(format!(
            "{} out-of-fold rows for {} samples",
            t.oof.rows(),
            ds.len()
        )));
    }
    let row_folds = plan.row_folds(ds)?;
    let chains: Vec<Vec<&Unit>> = t.folds.iter().map(Stage::units).collect();
    let mut violations = Vec::new();
    for (r, s) in ds.samples.iter().enumerate() {
        let chain = chains
            .get(row_folds[r])
            .ok_or_else(|| Error::Precondition(format!("no fold-{} model", row_folds[r])))?;
        if chain.iter().any(|u| u.saw(&s.video_id)) {
            violations.push((r, s.video_id.clone()));
        }
    }
    Ok(LeakageReport {
        rows: ds.len(),
        models_checked: chains.iter().map(Vec::len).sum(),
        violations,
    })
}
