//! Model bundle directory: a JSON manifest describing the stage wiring, the
//! frame preprocessing, and one JSON document per boosted model.
//!
//! ```text
//! manifest.json
//! preprocess.json
//! models/{task}/{term}/{group}.json
//! models/{task}/{term}/combiner.json
//! models/{task}/multi_term.json
//! models/{task}/fusion.json
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{FoldPlan, FusionModel, MultiTermModel, SingleTermModel, StackConfig, SubModel, Unit};
use crate::data::{GroupName, StandardizerStats, Task};
use crate::decomposition::PcaModel;
use crate::error::{Error, Result};
use crate::windowing::{Term, WindowSchema};

pub const MANIFEST: &str = "manifest.json";
pub const PREPROCESS: &str = "preprocess.json";

/// Frame-level transforms fitted on the training videos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub standardizer: StandardizerStats,
    /// PCA applied after standardization, per reduced group.
    pub pca: Vec<(GroupName, PcaModel)>,
}

/// All trained stages of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskModels {
    pub task: Task,
    pub single_term: Vec<SingleTermModel>,
    pub multi_term: Option<MultiTermModel>,
    pub fusion: Option<FusionModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupWiring {
    pub group: GroupName,
    pub dim: usize,
    pub path: String,
    /// Feature columns kept by selection, when enabled.
    pub selected: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermWiring {
    pub term: Term,
    pub groups: Vec<GroupWiring>,
    pub combiner: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionWiring {
    pub path: String,
    /// Combiner input columns in order.
    pub inputs: Vec<String>,
    /// Tasks whose multi-term models feed the combiner, in order.
    pub others: Vec<Task>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskWiring {
    pub task: Task,
    pub terms: Vec<TermWiring>,
    pub multi_term: Option<String>,
    pub fusion: Option<FusionWiring>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub format_version: u32,
    /// Highest stage trained.
    pub stage: String,
    /// Window layout the models were trained on (tasks list the labels of
    /// the training data).
    pub schema: WindowSchema,
    pub fold_plan: FoldPlan,
    pub stack: StackConfig,
    pub seeds: BTreeMap<String, u64>,
    pub tasks: Vec<TaskWiring>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub manifest: BundleManifest,
    pub preprocess: Option<Preprocess>,
    pub tasks: Vec<TaskModels>,
}

impl Bundle {
    pub fn task(&self, task: Task) -> Option<&TaskModels> {
        self.tasks.iter().find(|t| t.task == task)
    }
}

const FORMAT_VERSION: u32 = 1;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, value)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
}

/// Writes each relative path at most once.
struct Writer<'a> {
    root: &'a Path,
    written: BTreeSet<String>,
}

impl Writer<'_> {
    fn put<T: Serialize>(&mut self, rel: String, value: &T) -> Result<String> {
        if !self.written.insert(rel.clone()) {
            return Err(Error::Manifest(format!("bundle path {rel} written twice")));
        }
        write_json(&self.root.join(&rel), value)?;
        Ok(rel)
    }
}

fn term_wiring(w: &mut Writer, m: &SingleTermModel) -> Result<TermWiring> {
    let base = format!("models/{}/{}", m.task, m.term.name);
    let mut groups = Vec::with_capacity(m.subs.len());
    for (s, &(g, dim)) in m.subs.iter().zip(&m.groups) {
        groups.push(GroupWiring {
            group: g,
            dim,
            path: w.put(format!("{base}/{g}.json"), &s.unit)?,
            selected: s.unit.selected.clone(),
        });
    }
    let combiner = m
        .combiner
        .as_ref()
        .map(|c| w.put(format!("{base}/combiner.json"), c))
        .transpose()?;
    Ok(TermWiring {
        term: m.term.clone(),
        groups,
        combiner,
    })
}

/// Writes a bundle into `dir`, which must not already hold one.
pub fn save_bundle(dir: &Path, bundle: &Bundle) -> Result<()> {
    if dir.join(MANIFEST).exists() {
        return Err(Error::Precondition(format!(
            "{} already holds a model bundle",
            dir.display()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut w = Writer {
        root: dir,
        written: BTreeSet::new(),
    };
    let mut wiring = Vec::with_capacity(bundle.tasks.len());
    for tm in &bundle.tasks {
        let terms = tm
            .single_term
            .iter()
            .map(|m| term_wiring(&mut w, m))
            .collect::<Result<Vec<_>>>()?;
        let multi_term = tm
            .multi_term
            .as_ref()
            .map(|m| {
                if m.terms != tm.single_term {
                    return Err(Error::Manifest(format!(
                        "{} multi-term model does not wrap the bundled term models",
                        tm.task
                    )));
                }
                w.put(format!("models/{}/multi_term.json", tm.task), &m.combiner)
            })
            .transpose()?;
        let fusion = tm
            .fusion
            .as_ref()
            .map(|f| {
                if f.terms != tm.single_term {
                    return Err(Error::Manifest(format!(
                        "{} fusion model does not wrap the bundled term models",
                        tm.task
                    )));
                }
                for o in &f.others {
                    let bundled = bundle.task(o.task).and_then(|t| t.multi_term.as_ref());
                    if bundled != Some(o) {
                        return Err(Error::Manifest(format!(
                            "{} fusion model uses a {} multi-term model that is not in the bundle",
                            tm.task, o.task
                        )));
                    }
                }
                Ok(FusionWiring {
                    path: w.put(format!("models/{}/fusion.json", tm.task), &f.combiner)?,
                    inputs: f.input_names(),
                    others: f.others.iter().map(|o| o.task).collect(),
                })
            })
            .transpose()?;
        wiring.push(TaskWiring {
            task: tm.task,
            terms,
            multi_term,
            fusion,
        });
    }
    if let Some(p) = &bundle.preprocess {
        w.put(PREPROCESS.to_string(), p)?;
    }
    let manifest = BundleManifest {
        tasks: wiring,
        format_version: FORMAT_VERSION,
        ..bundle.manifest.clone()
    };
    w.put(MANIFEST.to_string(), &manifest)?;
    Ok(())
}

fn load_term(dir: &Path, task: Task, tw: &TermWiring) -> Result<SingleTermModel> {
    let mut subs = Vec::with_capacity(tw.groups.len());
    for g in &tw.groups {
        let unit: Unit = read_json(&dir.join(&g.path))?;
        if unit.selected != g.selected {
            return Err(Error::Manifest(format!(
                "{} feature selection in {} disagrees with the manifest",
                g.group, g.path
            )));
        }
        subs.push(SubModel {
            group: g.group,
            unit,
        });
    }
    Ok(SingleTermModel {
        task,
        term: tw.term.clone(),
        groups: tw.groups.iter().map(|g| (g.group, g.dim)).collect(),
        subs,
        combiner: tw
            .combiner
            .as_ref()
            .map(|p| read_json(&dir.join(p)))
            .transpose()?,
    })
}

/// Reads a bundle written by [`save_bundle`].
pub fn load_bundle(dir: &Path) -> Result<Bundle> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.exists() {
        return Err(Error::StageDependency {
            path: manifest_path,
            stage: "train".into(),
        });
    }
    let manifest: BundleManifest = read_json(&manifest_path)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Manifest(format!(
            "bundle format {} is not supported (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let pre_path: PathBuf = dir.join(PREPROCESS);
    let preprocess = if pre_path.exists() {
        Some(read_json(&pre_path)?)
    } else {
        None
    };

    let mut tasks = Vec::with_capacity(manifest.tasks.len());
    for tw in &manifest.tasks {
        let single_term = tw
            .terms
            .iter()
            .map(|t| load_term(dir, tw.task, t))
            .collect::<Result<Vec<_>>>()?;
        let multi_term = tw
            .multi_term
            .as_ref()
            .map(|p| -> Result<MultiTermModel> {
                Ok(MultiTermModel {
                    task: tw.task,
                    terms: single_term.clone(),
                    combiner: read_json(&dir.join(p))?,
                })
            })
            .transpose()?;
        tasks.push(TaskModels {
            task: tw.task,
            single_term,
            multi_term,
            fusion: None,
        });
    }
    // Fusion models reference other tasks' multi-term models, so they are
    // wired once every task is loaded.
    for (i, tw) in manifest.tasks.iter().enumerate() {
        let Some(fw) = &tw.fusion else { continue };
        let others = fw
            .others
            .iter()
            .map(|o| {
                tasks
                    .iter()
                    .find(|t| t.task == *o)
                    .and_then(|t| t.multi_term.clone())
                    .ok_or_else(|| {
                        Error::Manifest(format!(
                            "{} fusion needs the missing {o} multi-term model",
                            tw.task
                        ))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let fusion = FusionModel {
            task: tw.task,
            terms: tasks[i].single_term.clone(),
            others,
            combiner: read_json(&dir.join(&fw.path))?,
        };
        if fusion.input_names() != fw.inputs {
            return Err(Error::Manifest(format!(
                "{} fusion inputs disagree with the manifest",
                tw.task
            )));
        }
        tasks[i].fusion = Some(fusion);
    }
    Ok(Bundle {
        manifest,
        preprocess,
        tasks,
    })
}
