//! TOML run configuration with strict validation. Scalars are top-level
//! keys; learner, combiner, grid and synthetic-corpus settings are tables.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::balancing::VaGrid;
use crate::data::{FeatureGroupSpec, FeatureSchema, GroupName, Task};
use crate::ensemble::StackConfig;
use crate::error::{Error, Result};
use crate::learner::{GbdtParams, GridSpec};
use crate::synth::SyntheticSpec;
use crate::windowing::{Term, WindowConfig, LONG, MIDDLE, OPTIONAL_MID, SHORT};

fn default_work_dir() -> PathBuf {
    PathBuf::from("work")
}
fn default_fps() -> f64 {
    30.0
}
fn default_tasks() -> Vec<Task> {
    Task::ALL.to_vec()
}
fn default_groups() -> Vec<GroupName> {
    GroupName::ALL[..5].to_vec()
}
fn default_short() -> f64 {
    1.0
}
fn default_middle() -> f64 {
    6.0
}
fn default_long() -> f64 {
    12.0
}
fn default_optional() -> f64 {
    3.0
}
fn default_stride() -> f64 {
    0.2
}
fn default_center_regions() -> Vec<usize> {
    VaGrid::default().center_regions
}
fn default_fraction() -> f64 {
    0.5
}
fn default_k() -> usize {
    5
}
fn default_grid() -> GridSpec {
    GridSpec::default()
}

/// Every key of the run configuration. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// `{features_dir}/{split}/{video}/{openface,pose,deep}.csv`.
    pub features_dir: Option<PathBuf>,
    /// `{labels_dir}/{split}/{video}/{task}.csv`.
    pub labels_dir: Option<PathBuf>,
    #[serde(default = "default_work_dir")]
    pub work_dir: PathBuf,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default = "default_tasks")]
    pub tasks: Vec<Task>,
    #[serde(default = "default_groups")]
    pub groups: Vec<GroupName>,

    pub au_intensity_dim: Option<usize>,
    pub au_occurrence_dim: Option<usize>,
    pub head_pose_dim: Option<usize>,
    pub gaze_dim: Option<usize>,
    pub pose_dim: Option<usize>,
    pub deep_dim: Option<usize>,
    pub au_intensity_columns: Option<Vec<String>>,
    pub au_occurrence_columns: Option<Vec<String>>,
    pub head_pose_columns: Option<Vec<String>>,
    pub gaze_columns: Option<Vec<String>>,
    pub pose_columns: Option<Vec<String>>,
    pub deep_columns: Option<Vec<String>>,
    /// PCA width for the deep group (200 for ResNet50, 300 for
    /// EfficientNet features); absent keeps the raw width.
    pub deep_pca_dim: Option<usize>,

    #[serde(default = "default_short")]
    pub short_seconds: f64,
    #[serde(default = "default_middle")]
    pub middle_seconds: f64,
    #[serde(default = "default_long")]
    pub long_seconds: f64,
    #[serde(default)]
    pub use_3s_term: bool,
    #[serde(default = "default_optional")]
    pub optional_seconds: f64,
    #[serde(default = "default_stride")]
    pub stride: f64,

    #[serde(default)]
    pub balance_expression: bool,
    #[serde(default)]
    pub balance_va: bool,
    #[serde(default = "default_center_regions")]
    pub center_regions: Vec<usize>,
    #[serde(default)]
    pub balance_seed: u64,

    #[serde(default)]
    pub learner: GbdtParams,
    /// Parameters of every combiner; defaults to `learner`.
    pub combiner: Option<GbdtParams>,
    #[serde(default = "default_grid")]
    pub grid: GridSpec,

    #[serde(default)]
    pub feature_selection: bool,
    #[serde(default = "default_fraction")]
    pub selection_fraction: f64,

    #[serde(default = "default_k")]
    pub k_folds: usize,
    #[serde(default)]
    pub fold_seed: u64,

    #[serde(default)]
    pub synth: SyntheticSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

impl PipelineConfig {
    fn dim_key(&self, g: GroupName) -> (Option<usize>, Option<&Vec<String>>) {
        match g {
            GroupName::AuIntensity => (self.au_intensity_dim, self.au_intensity_columns.as_ref()),
            GroupName::AuOccurrence => {
                (self.au_occurrence_dim, self.au_occurrence_columns.as_ref())
            }
            GroupName::HeadPose => (self.head_pose_dim, self.head_pose_columns.as_ref()),
            GroupName::Gaze => (self.gaze_dim, self.gaze_columns.as_ref()),
            GroupName::Pose => (self.pose_dim, self.pose_columns.as_ref()),
            GroupName::Deep => (self.deep_dim, self.deep_columns.as_ref()),
        }
    }

    pub fn feature_schema(&self) -> Result<FeatureSchema> {
        let groups = self
            .groups
            .iter()
            .map(|&g| match self.dim_key(g) {
                (Some(d), Some(cols)) if d != cols.len() => Err(Error::Config(format!(
                    "{g}_dim = {d} but {g}_columns lists {} names",
                    cols.len()
                ))),
                (_, Some(cols)) => Ok(FeatureGroupSpec::with_columns(g, cols.clone())),
                (Some(d), None) => Ok(FeatureGroupSpec::new(g, d)),
                (None, None) => Ok(FeatureGroupSpec::new(g, g.default_dim())),
            })
            .collect::<Result<Vec<_>>>()?;
        FeatureSchema::new(groups).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn window_config(&self) -> Result<WindowConfig> {
        let mut terms = vec![
            Term::new(SHORT, self.short_seconds),
            Term::new(MIDDLE, self.middle_seconds),
            Term::new(LONG, self.long_seconds),
        ];
        if self.use_3s_term {
            terms.push(Term::new(OPTIONAL_MID, self.optional_seconds));
        }
        let cfg = WindowConfig {
            terms,
            stride: self.stride,
            fps: self.fps,
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn pca_dims(&self) -> Vec<(GroupName, usize)> {
        match self.deep_pca_dim {
            Some(k) if self.groups.contains(&GroupName::Deep) => vec![(GroupName::Deep, k)],
            _ => Vec::new(),
        }
    }

    pub fn va_grid(&self) -> Result<VaGrid> {
        VaGrid::new(self.center_regions.clone()).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn stack_config(&self) -> StackConfig {
        StackConfig {
            sub_params: self.learner.clone(),
            combiner_params: self
                .combiner
                .clone()
                .unwrap_or_else(|| self.learner.clone()),
            select_fraction: self.feature_selection.then_some(self.selection_fraction),
            groups: None,
        }
    }

    /// Synthetic corpus spec with the configured fps and group widths.
    pub fn synthetic_spec(&self) -> Result<SyntheticSpec> {
        let schema = self.feature_schema()?;
        Ok(SyntheticSpec {
            fps: self.fps,
            groups: schema.groups.iter().map(|g| (g.name, g.dim)).collect(),
            ..self.synth.clone()
        })
    }

    /// Checks every value; nothing should run on a config that fails here.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        if self.tasks.is_empty() {
            return bad("tasks must list at least one task".into());
        }
        if self.groups.is_empty() {
            return bad("groups must list at least one feature group".into());
        }
        for (i, g) in self.groups.iter().enumerate() {
            if self.groups[..i].contains(g) {
                return bad(format!("group {g} listed twice"));
            }
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if self.tasks[..i].contains(t) {
                return bad(format!("task {t} listed twice"));
            }
        }
        let schema = self.feature_schema()?;
        self.window_config()?;
        if let Some(k) = self.deep_pca_dim {
            let Some(deep) = schema.group(GroupName::Deep) else {
                return bad("deep_pca_dim is set but the deep group is not enabled".into());
            };
            if k == 0 || k > deep.dim {
                return bad(format!(
                    "deep_pca_dim must lie in 1..={}, got {k}",
                    deep.dim
                ));
            }
        }
        self.va_grid()?;
        if self.balance_va
            && !(self.tasks.contains(&Task::Valence) && self.tasks.contains(&Task::Arousal))
        {
            return bad("balance_va needs both valence and arousal in tasks".into());
        }
        if self.balance_expression && !self.tasks.contains(&Task::Expression) {
            return bad("balance_expression needs expression in tasks".into());
        }
        self.learner
            .validate()
            .map_err(|e| Error::Config(format!("learner: {e}")))?;
        if let Some(c) = &self.combiner {
            c.validate()
                .map_err(|e| Error::Config(format!("combiner: {e}")))?;
        }
        if self.grid.size() == 0 {
            return bad("grid has an empty parameter list".into());
        }
        for p in self.grid.cells(&self.learner) {
            p.validate()
                .map_err(|e| Error::Config(format!("grid: {e}")))?;
        }
        if !(self.selection_fraction > 0.0 && self.selection_fraction <= 1.0) {
            return bad(format!(
                "selection_fraction must lie in (0, 1], got {}",
                self.selection_fraction
            ));
        }
        if self.k_folds < 2 {
            return bad(format!("k_folds must be >= 2, got {}", self.k_folds));
        }
        self.synthetic_spec()?
            .validate()
            .map_err(|e| Error::Config(format!("synth: {e}")))?;
        Ok(())
    }

    /// Effective configuration, defaults included, as TOML.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn features_dir(&self) -> Result<&Path> {
        self.features_dir
            .as_deref()
            .ok_or_else(|| Error::Config("missing required key features_dir".into()))
    }

    pub fn labels_dir(&self) -> Result<&Path> {
        self.labels_dir
            .as_deref()
            .ok_or_else(|| Error::Config("missing required key labels_dir".into()))
    }
}

pub fn parse_config_str(text: &str) -> Result<PipelineConfig> {
    let cfg: PipelineConfig =
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and validates a config file. Relative paths inside it resolve
/// against the file's directory.
pub fn parse_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = parse_config_str(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    for p in [&mut cfg.features_dir, &mut cfg.labels_dir].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    if cfg.work_dir.is_relative() {
        cfg.work_dir = base.join(&cfg.work_dir);
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_defaults() {
        let c = parse_config_str("").unwrap();
        let w = c.window_config().unwrap();
        let secs: Vec<f64> = w.terms.iter().map(|t| t.seconds).collect();
        assert_eq!(secs, vec![1.0, 6.0, 12.0]);
        assert_eq!(w.stride, 0.2);
        assert_eq!(c.selection_fraction, 0.5);
        assert!(!c.feature_selection);
        assert_eq!(c.k_folds, 5);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = parse_config_str("strde = 0.5").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        assert!(e.to_string().contains("strde"), "{e}");
    }

    #[test]
    fn optional_term_toggle() {
        let c = parse_config_str("use_3s_term = true").unwrap();
        let w = c.window_config().unwrap();
        assert_eq!(w.terms.len(), 4);
        assert_eq!(w.terms[3].name, OPTIONAL_MID);
        assert_eq!(w.terms[3].seconds, 3.0);
    }

    #[test]
    fn invalid_values() {
        for text in [
            "fps = 0.0",
            "stride = -1.0",
            "k_folds = 1",
            "selection_fraction = 0.0",
            "tasks = []",
            "deep_pca_dim = 10",
            "center_regions = [64]",
            "balance_va = true\ntasks = [\"valence\"]",
            "[learner]\nnum_leaves = 1",
        ] {
            assert!(
                matches!(parse_config_str(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn partial_tables_keep_defaults() {
        let c = parse_config_str("[learner]\nnum_leaves = 31\n[synth]\nnoise = 3.0").unwrap();
        assert_eq!(c.learner.num_leaves, 31);
        assert_eq!(c.learner.learning_rate, GbdtParams::default().learning_rate);
        assert_eq!(c.synth.noise, 3.0);
        assert_eq!(c.synth.train_videos, SyntheticSpec::default().train_videos);
        assert!(parse_config_str("[learner]\nleaves = 31").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let c =
            parse_config_str("use_3s_term = true\ndeep_dim = 16\ngroups = [\"gaze\", \"deep\"]")
                .unwrap();
        let back = parse_config_str(&c.echo()).unwrap();
        assert_eq!(c, back);
    }
}
