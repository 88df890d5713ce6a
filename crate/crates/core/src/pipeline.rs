//! End-to-end orchestration shared by the command-line tool and the tests:
//! frame preprocessing, per-task datasets, staged training, prediction
//! tables and their evaluation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    fit_standardizer, load_labels, load_video_features, standardize, FeatureSchema, FrameSequence,
    GroupName, Task, NUM_CLASSES,
};
use crate::decomposition::{fit_pca, transform_pca};
use crate::ensemble::{
    add_combiner, train_fusion, train_multi_term, train_sub_models, FoldPlan, FusionModel,
    MultiTermModel, Preprocess, SingleTermModel, StackConfig, Stage, TaskModels, Trained,
};
use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::matrix::Matrix;
use crate::metrics::{argmax, ccc, expression_score, AbsentClassPolicy, EvalReport};
use crate::windowing::WindowedDataset;

/// Valence and arousal share one windowed dataset, expression has its own.
pub const VA_SET: &str = "va";
pub const EXPR_SET: &str = "expr";

/// Windowed datasets to build for a task list: `(name, tasks)`.
pub fn task_sets(tasks: &[Task]) -> Vec<(&'static str, Vec<Task>)> {
    let va: Vec<Task> = [Task::Valence, Task::Arousal]
        .into_iter()
        .filter(|t| tasks.contains(t))
        .collect();
    let mut out = Vec::new();
    if !va.is_empty() {
        out.push((VA_SET, va));
    }
    if tasks.contains(&Task::Expression) {
        out.push((EXPR_SET, vec![Task::Expression]));
    }
    out
}

pub fn set_of(task: Task) -> &'static str {
    if task.is_classification() {
        EXPR_SET
    } else {
        VA_SET
    }
}

/// Loads every video directory of one split, sorted by id, attaching the
/// label files that exist for it.
pub fn load_split(
    features_dir: &Path,
    labels_dir: &Path,
    split: &str,
    schema: &FeatureSchema,
    fps: f64,
) -> Result<Vec<FrameSequence>> {
    let root = features_dir.join(split);
    if !root.is_dir() {
        return Err(Error::StageDependency {
            path: root,
            stage: "synth".into(),
        });
    }
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(&root).map_err(|e| Error::io(&root, e))? {
        let entry = entry.map_err(|e| Error::io(&root, e))?;
        if entry.path().is_dir() {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{} holds no video directories",
            root.display()
        )));
    }
    dirs.par_iter()
        .map(|dir| {
            let mut seq = load_video_features(dir, schema, fps)?;
            let ldir = labels_dir.join(split).join(&seq.video_id);
            for task in Task::ALL {
                let path = ldir.join(format!("{task}.csv"));
                if path.exists() {
                    seq.attach_labels(task, load_labels(&path, task)?)?;
                }
            }
            Ok(seq)
        })
        .collect()
}

/// Fits the standardizer on the training videos, then a PCA per reduced
/// group on the standardized usable frames.
pub fn fit_preprocess(
    train: &[FrameSequence],
    pca_dims: &[(GroupName, usize)],
) -> Result<Preprocess> {
    let standardizer = fit_standardizer(train)?;
    let mut pca = Vec::with_capacity(pca_dims.len());
    for &(g, k) in pca_dims {
        let mut rows = Vec::new();
        let mut width = 0;
        for seq in train {
            let m = seq.group(g).ok_or_else(|| {
                Error::Config(format!("PCA requested for group {g}, which is not loaded"))
            })?;
            width = m.cols();
            let z = standardize(seq, &standardizer)?;
            let zm = z.group(g).expect("standardize keeps groups");
            for f in 0..zm.rows() {
                if seq.frame_ok[f] {
                    rows.extend_from_slice(zm.row(f));
                }
            }
        }
        let data = Matrix::from_vec(rows.len() / width.max(1), width, rows)?;
        pca.push((g, fit_pca(&data, k)?));
    }
    Ok(Preprocess { standardizer, pca })
}

pub fn apply_preprocess(seq: &FrameSequence, pre: &Preprocess) -> Result<FrameSequence> {
    let mut out = standardize(seq, &pre.standardizer)?;
    for (g, model) in &pre.pca {
        let slot = out
            .features
            .iter_mut()
            .find(|(name, _)| name == g)
            .ok_or_else(|| {
                Error::Schema(format!("video {} has no group {g} to reduce", seq.video_id))
            })?;
        slot.1 = transform_pca(model, &slot.1)?;
    }
    Ok(out)
}

/// How far training proceeds; each stage includes the ones before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainStage {
    Subgroup,
    SingleTerm,
    MultiTerm,
    Fusion,
}

impl TrainStage {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainStage::Subgroup => "subgroup",
            TrainStage::SingleTerm => "single-term",
            TrainStage::MultiTerm => "multi-term",
            TrainStage::Fusion => "fusion",
        }
    }
}

impl fmt::Display for TrainStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subgroup" => Ok(TrainStage::Subgroup),
            "single-term" => Ok(TrainStage::SingleTerm),
            "multi-term" => Ok(TrainStage::MultiTerm),
            "fusion" | "all" => Ok(TrainStage::Fusion),
            _ => Err(Error::Config(format!(
                "unknown stage {s:?} (expected subgroup, single-term, multi-term, fusion or all)"
            ))),
        }
    }
}

/// Every trained stage of one task, with fold versions.
#[derive(Debug, Clone)]
pub struct TaskTraining {
    pub task: Task,
    pub terms: Vec<Trained<SingleTermModel>>,
    pub multi_term: Option<Trained<MultiTermModel>>,
    pub fusion: Option<Trained<FusionModel>>,
}

#[derive(Debug, Clone)]
pub struct Training {
    pub stage: TrainStage,
    pub plan: FoldPlan,
    pub tasks: Vec<TaskTraining>,
}

impl Training {
    pub fn task(&self, task: Task) -> Option<&TaskTraining> {
        self.tasks.iter().find(|t| t.task == task)
    }

    /// Full-data models of every stage, as stored in a bundle.
    pub fn models(&self) -> Vec<TaskModels> {
        self.tasks
            .iter()
            .map(|t| TaskModels {
                task: t.task,
                single_term: t.terms.iter().map(|m| m.full.clone()).collect(),
                multi_term: t.multi_term.as_ref().map(|m| m.full.clone()),
                fusion: t.fusion.as_ref().map(|m| m.full.clone()),
            })
            .collect()
    }
}

/// Trains every task up to `stage`. `data` pairs each task with its
/// training set; the fold plan covers the union of their videos.
pub fn train_stack(
    data: &[(Task, &WindowedDataset)],
    stage: TrainStage,
    cfg: &StackConfig,
    k: usize,
    seed: u64,
) -> Result<Training> {
    if data.is_empty() {
        return Err(Error::Config("no tasks to train".into()));
    }
    for (i, (t, ds)) in data.iter().enumerate() {
        if data[..i].iter().any(|(u, _)| u == t) {
            return Err(Error::Config(format!("task {t} listed twice")));
        }
        if ds.schema.task_index(*t).is_none() {
            return Err(Error::Schema(format!("{t} training set has no {t} labels")));
        }
    }
    if stage == TrainStage::Fusion {
        if let Some(missing) = Task::ALL
            .into_iter()
            .find(|t| !data.iter().any(|(u, _)| u == t))
        {
            return Err(Error::Config(format!(
                "fusion needs all three tasks; {missing} is not configured"
            )));
        }
    }
    let plan = FoldPlan::new(
        data.iter()
            .flat_map(|(_, ds)| ds.samples.iter().map(|s| s.video_id.as_str())),
        k,
        seed,
    )?;

    let mut tasks = Vec::with_capacity(data.len());
    for &(task, ds) in data {
        let mut terms = Vec::with_capacity(ds.schema.terms.len());
        for term in &ds.schema.terms {
            log::info!("training {task} {} sub-models", term.name);
            let subs = train_sub_models(ds, &term.name, task, cfg, &plan)?;
            terms.push(if stage >= TrainStage::SingleTerm {
                log::info!("training {task} {} combiner", term.name);
                add_combiner(ds, subs, cfg, &plan)?
            } else {
                subs
            });
        }
        let multi_term = if stage >= TrainStage::MultiTerm {
            log::info!("training {task} multi-term combiner");
            Some(train_multi_term(ds, task, &terms, cfg, &plan)?)
        } else {
            None
        };
        tasks.push(TaskTraining {
            task,
            terms,
            multi_term,
            fusion: None,
        });
    }
    if stage == TrainStage::Fusion {
        let mut fused = Vec::with_capacity(tasks.len());
        for (i, &(task, ds)) in data.iter().enumerate() {
            log::info!("training {task} fusion combiner");
            let others: Vec<&Trained<MultiTermModel>> = tasks
                .iter()
                .filter(|t| t.task != task)
                .map(|t| {
                    t.multi_term
                        .as_ref()
                        .expect("multi-term trained before fusion")
                })
                .collect();
            fused.push((
                i,
                train_fusion(ds, task, &tasks[i].terms, &others, cfg, &plan)?,
            ));
        }
        for (i, f) in fused {
            tasks[i].fusion = Some(f);
        }
    }
    Ok(Training { stage, plan, tasks })
}

/// Per-sample prediction table.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub video_ids: Vec<String>,
    pub anchors: Vec<f64>,
    pub columns: Vec<String>,
    pub values: Matrix,
}

impl Predictions {
    pub fn len(&self) -> usize {
        self.video_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.video_ids.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        self.columns
            .iter()
            .position(|c| c == name)
            .map(|i| self.values.column(i))
    }

    /// Joins tables of different sample sets, keeping rows of each table
    /// and filling absent columns with NaN.
    pub fn concat(parts: Vec<Predictions>) -> Result<Predictions> {
        let mut columns: Vec<String> = Vec::new();
        for p in &parts {
            for c in &p.columns {
                if !columns.contains(c) {
                    columns.push(c.clone());
                }
            }
        }
        let mut out = Predictions {
            video_ids: Vec::new(),
            anchors: Vec::new(),
            columns: columns.clone(),
            values: Matrix::zeros(0, columns.len()),
        };
        for p in parts {
            let map: Vec<Option<usize>> = columns
                .iter()
                .map(|c| p.columns.iter().position(|d| d == c))
                .collect();
            for r in 0..p.len() {
                let row: Vec<f64> = map
                    .iter()
                    .map(|m| m.map_or(f64::NAN, |i| p.values.get(r, i)))
                    .collect();
                out.values.push_row(&row)?;
            }
            out.video_ids.extend(p.video_ids);
            out.anchors.extend(p.anchors);
        }
        Ok(out)
    }
}

struct Columns {
    names: Vec<String>,
    blocks: Vec<Matrix>,
}

impl Columns {
    fn push_task_output(&mut self, task: Task, name: &str, out: Matrix) {
        if task.is_classification() {
            let cls: Vec<f64> = out.iter_rows().map(|r| argmax(r) as f64).collect();
            self.names.push(name.to_string());
            self.blocks
                .push(Matrix::from_vec(cls.len(), 1, cls).expect("column"));
        } else {
            self.names.push(name.to_string());
            self.blocks.push(out);
        }
    }
}

/// Column name of the top-stage output of a task.
pub fn top_column(task: Task) -> String {
    task.as_str().to_string()
}

pub fn truth_column(task: Task) -> String {
    format!("truth:{task}")
}

/// Runs every task model over `ds` and lays out the outputs: per task the
/// top-stage prediction (class id plus probabilities for expression), then
/// the lower-stage components, then the short-term truth when the dataset
/// has labels for the task.
pub fn predict_models(
    models: &[TaskModels],
    tasks: &[Task],
    ds: &WindowedDataset,
) -> Result<Predictions> {
    let mut cols = Columns {
        names: Vec::new(),
        blocks: Vec::new(),
    };
    for &task in tasks {
        let tm = models
            .iter()
            .find(|m| m.task == task)
            .ok_or_else(|| Error::Manifest(format!("bundle has no {task} models")))?;
        let mut components = Columns {
            names: Vec::new(),
            blocks: Vec::new(),
        };
        let mut top: Option<Matrix> = None;
        for term in &tm.single_term {
            match &term.combiner {
                Some(_) => {
                    let out = term.predict(ds)?;
                    if top.is_none() {
                        top = Some(out.clone());
                    }
                    components.push_task_output(task, &format!("{task}:{}", term.term.name), out);
                }
                None => {
                    for (sub, out) in term.subs.iter().zip(term.sub_outputs(ds)?) {
                        if top.is_none() {
                            top = Some(out.clone());
                        }
                        components.push_task_output(
                            task,
                            &format!("{task}:{}:{}", term.term.name, sub.group),
                            out,
                        );
                    }
                }
            }
        }
        if let Some(m) = &tm.multi_term {
            let out = m.predict(ds)?;
            top = Some(out.clone());
            components.push_task_output(task, &format!("{task}:multi_term"), out);
        }
        if let Some(f) = &tm.fusion {
            top = Some(f.predict(ds)?);
        }
        let top =
            top.ok_or_else(|| Error::Manifest(format!("bundle has no trained {task} stage")))?;
        if task.is_classification() {
            let probs = top.clone();
            cols.push_task_output(task, &top_column(task), top);
            for c in 0..NUM_CLASSES {
                cols.names.push(format!("{task}:p{c}"));
            }
            cols.blocks.push(probs);
        } else {
            cols.push_task_output(task, &top_column(task), top);
        }
        cols.names.extend(components.names);
        cols.blocks.extend(components.blocks);
        if ds.schema.task_index(task).is_some() {
            let y = ds.short_labels(task)?;
            cols.names.push(truth_column(task));
            cols.blocks.push(Matrix::from_vec(y.len(), 1, y)?);
        }
    }
    let values = if cols.blocks.is_empty() {
        Matrix::zeros(ds.len(), 0)
    } else {
        Matrix::hstack(&cols.blocks.iter().collect::<Vec<_>>())?
    };
    Ok(Predictions {
        video_ids: ds.samples.iter().map(|s| s.video_id.clone()).collect(),
        anchors: ds.samples.iter().map(|s| s.anchor).collect(),
        columns: cols.names,
        values,
    })
}

fn is_probability(last: &str) -> bool {
    last.strip_prefix('p')
        .is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
}

fn is_class_column(name: &str) -> bool {
    name == Task::Expression.as_str()
        || name == truth_column(Task::Expression)
        || (name.starts_with("expression:")
            && !is_probability(name.rsplit(':').next().unwrap_or("")))
}

/// Writes the table with 9 significant digits; class ids are written as
/// integers and missing values as empty cells.
pub fn write_predictions(p: &Predictions, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
    let mut header = vec!["video_id".to_string(), "anchor".to_string()];
    header.extend(p.columns.iter().cloned());
    w.write_record(&header)?;
    let class_col: Vec<bool> = p.columns.iter().map(|c| is_class_column(c)).collect();
    for r in 0..p.len() {
        let mut rec = vec![p.video_ids[r].clone(), sig9(p.anchors[r])];
        for (c, &v) in p.values.row(r).iter().enumerate() {
            rec.push(if v.is_nan() {
                String::new()
            } else if class_col[c] {
                format!("{}", v as u8)
            } else {
                sig9(v)
            });
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Predictions> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Serde(format!("{other:?}")),
    })?;
    let header = r.headers()?.clone();
    if header.len() < 2 || &header[0] != "video_id" || &header[1] != "anchor" {
        return Err(Error::Schema(format!(
            "{} is not a prediction table",
            path.display()
        )));
    }
    let columns: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let mut out = Predictions {
        video_ids: Vec::new(),
        anchors: Vec::new(),
        values: Matrix::zeros(0, columns.len()),
        columns,
    };
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64> {
            if rec[c].is_empty() {
                return Ok(f64::NAN);
            }
            rec[c].parse::<f64>().map_err(|_| Error::Parse {
                row: i + 1,
                column: header[c].to_string(),
                message: format!("{:?} is not a number", &rec[c]),
            })
        };
        out.video_ids.push(rec[0].to_string());
        out.anchors.push(num(1)?);
        let row = (2..header.len()).map(num).collect::<Result<Vec<_>>>()?;
        out.values.push_row(&row)?;
    }
    Ok(out)
}

/// Score of one prediction column against its task's truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentScore {
    pub column: String,
    pub task: Task,
    /// `ccc` for valence/arousal, `expr_score` for expression.
    pub metric: String,
    pub value: f64,
    pub samples: usize,
}

fn paired(pred: &[f64], truth: &[f64]) -> (Vec<f64>, Vec<f64>) {
    pred.iter()
        .zip(truth)
        .filter(|(p, t)| !p.is_nan() && !t.is_nan())
        .map(|(p, t)| (*p, *t))
        .unzip()
}

fn score(task: Task, pred: &[f64], truth: &[f64]) -> Result<(f64, usize)> {
    let (p, t) = paired(pred, truth);
    if task.is_classification() {
        let p: Vec<u8> = p.iter().map(|&x| x as u8).collect();
        let t: Vec<u8> = t.iter().map(|&x| x as u8).collect();
        Ok((
            expression_score(&p, &t, AbsentClassPolicy::Exclude)?.expr_score,
            t.len(),
        ))
    } else {
        Ok((ccc(&t, &p)?, t.len()))
    }
}

/// Challenge scores of the top-stage columns, plus a score per component
/// column.
pub fn evaluate(p: &Predictions) -> Result<(EvalReport, Vec<ComponentScore>)> {
    let mut report = EvalReport::default();
    let mut components = Vec::new();
    for task in Task::ALL {
        let (Some(pred), Some(truth)) =
            (p.column(&top_column(task)), p.column(&truth_column(task)))
        else {
            continue;
        };
        let (pr, tr) = paired(&pred, &truth);
        match task {
            Task::Valence => {
                report.ccc_valence = Some(ccc(&tr, &pr)?);
                report.samples_valence = tr.len();
            }
            Task::Arousal => {
                report.ccc_arousal = Some(ccc(&tr, &pr)?);
                report.samples_arousal = tr.len();
            }
            Task::Expression => {
                let pc: Vec<u8> = pr.iter().map(|&x| x as u8).collect();
                let tc: Vec<u8> = tr.iter().map(|&x| x as u8).collect();
                let s = expression_score(&pc, &tc, AbsentClassPolicy::Exclude)?;
                report.set_expression(&s, tc.len());
            }
        }
        let prefix = format!("{task}:");
        for (i, name) in p.columns.iter().enumerate() {
            let Some(rest) = name.strip_prefix(&prefix) else {
                continue;
            };
            if task.is_classification() && is_probability(rest) {
                continue;
            }
            let (value, samples) = score(task, &p.values.column(i), &truth)?;
            components.push(ComponentScore {
                column: name.clone(),
                task,
                metric: if task.is_classification() {
                    "expr_score"
                } else {
                    "ccc"
                }
                .into(),
                value,
                samples,
            });
        }
    }
    report.set_va();
    if report == EvalReport::default() {
        return Err(Error::Schema(
            "prediction table has no task column with matching truth".into(),
        ));
    }
    Ok((report, components))
}
