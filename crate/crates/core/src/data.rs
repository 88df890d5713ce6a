//! Frame-level dataset representation: feature-group schemas, per-video
//! frame sequences with label tracks, CSV ingestion and per-feature
//! standardization.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Number of expression classes (neutral plus six basic emotions).
pub const NUM_CLASSES: usize = 7;

/// Class id used for neutral expressions.
pub const NEUTRAL: u8 = 0;

/// Named block of input channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupName {
    AuIntensity,
    AuOccurrence,
    HeadPose,
    Gaze,
    Pose,
    Deep,
}

impl GroupName {
    pub const ALL: [GroupName; 6] = [
        GroupName::AuIntensity,
        GroupName::AuOccurrence,
        GroupName::HeadPose,
        GroupName::Gaze,
        GroupName::Pose,
        GroupName::Deep,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupName::AuIntensity => "au_intensity",
            GroupName::AuOccurrence => "au_occurrence",
            GroupName::HeadPose => "head_pose",
            GroupName::Gaze => "gaze",
            GroupName::Pose => "pose",
            GroupName::Deep => "deep",
        }
    }

    /// Column count produced by the usual upstream extractor. The deep
    /// embedding width depends on the backbone and is only a placeholder.
    pub fn default_dim(self) -> usize {
        match self {
            GroupName::AuIntensity => 17,
            GroupName::AuOccurrence => 18,
            GroupName::HeadPose => 6,
            GroupName::Gaze => 8,
            GroupName::Pose => 75,
            GroupName::Deep => 2048,
        }
    }

    /// Feature file (per video) that carries this group.
    pub fn family(self) -> Family {
        match self {
            GroupName::AuIntensity
            | GroupName::AuOccurrence
            | GroupName::HeadPose
            | GroupName::Gaze => Family::OpenFace,
            GroupName::Pose => Family::Pose,
            GroupName::Deep => Family::Deep,
        }
    }

    /// OpenFace/OpenPose-style header names. Falls back to `<group>_<i>`
    /// when `dim` differs from the extractor's native width.
    pub fn default_columns(self, dim: usize) -> Vec<String> {
        const AU_R: [&str; 17] = [
            "01", "02", "04", "05", "06", "07", "09", "10", "12", "14", "15", "17", "20", "23",
            "25", "26", "45",
        ];
        const AU_C: [&str; 18] = [
            "01", "02", "04", "05", "06", "07", "09", "10", "12", "14", "15", "17", "20", "23",
            "25", "26", "28", "45",
        ];
        match (self, dim) {
            (GroupName::AuIntensity, 17) => AU_R.iter().map(|a| format!("AU{a}_r")).collect(),
            (GroupName::AuOccurrence, 18) => AU_C.iter().map(|a| format!("AU{a}_c")).collect(),
            (GroupName::HeadPose, 6) => [
                "pose_Tx", "pose_Ty", "pose_Tz", "pose_Rx", "pose_Ry", "pose_Rz",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            (GroupName::Gaze, 8) => [
                "gaze_0_x",
                "gaze_0_y",
                "gaze_0_z",
                "gaze_1_x",
                "gaze_1_y",
                "gaze_1_z",
                "gaze_angle_x",
                "gaze_angle_y",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            (GroupName::Pose, d) if d % 3 == 0 => (0..d / 3)
                .flat_map(|k| ["x", "y", "c"].map(|a| format!("kp{k}_{a}")))
                .collect(),
            (g, d) => (0..d).map(|i| format!("{}_{i}", g.as_str())).collect(),
        }
    }
}

impl fmt::Display for GroupName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GroupName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GroupName::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature group {s:?}")))
    }
}

/// Per-video feature file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Family {
    OpenFace,
    Pose,
    Deep,
}

impl Family {
    pub fn file_name(self) -> &'static str {
        match self {
            Family::OpenFace => "openface.csv",
            Family::Pose => "pose.csv",
            Family::Deep => "deep.csv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroupSpec {
    pub name: GroupName,
    pub dim: usize,
    /// Header names in the feature CSV, one per channel.
    pub columns: Vec<String>,
}

impl FeatureGroupSpec {
    pub fn new(name: GroupName, dim: usize) -> Self {
        FeatureGroupSpec {
            name,
            dim,
            columns: name.default_columns(dim),
        }
    }

    pub fn with_columns(name: GroupName, columns: Vec<String>) -> Self {
        FeatureGroupSpec {
            name,
            dim: columns.len(),
            columns,
        }
    }
}

/// Ordered list of feature groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub groups: Vec<FeatureGroupSpec>,
}

impl FeatureSchema {
    pub fn new(groups: Vec<FeatureGroupSpec>) -> Result<Self> {
        let schema = FeatureSchema { groups };
        schema.validate()?;
        Ok(schema)
    }

    /// The extractor-native layout: AU intensity, AU occurrence, head pose,
    /// gaze and body pose, plus a deep embedding of the given width.
    pub fn standard(deep_dim: Option<usize>) -> Self {
        let mut groups: Vec<_> = GroupName::ALL[..5]
            .iter()
            .map(|&g| FeatureGroupSpec::new(g, g.default_dim()))
            .collect();
        if let Some(d) = deep_dim {
            groups.push(FeatureGroupSpec::new(GroupName::Deep, d));
        }
        FeatureSchema { groups }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, g) in self.groups.iter().enumerate() {
            if g.dim == 0 {
                return Err(Error::Schema(format!("group {} has zero width", g.name)));
            }
            if g.columns.len() != g.dim {
                return Err(Error::Schema(format!(
                    "group {} declares dim {} but maps {} columns",
                    g.name,
                    g.dim,
                    g.columns.len()
                )));
            }
            if self.groups[..i].iter().any(|h| h.name == g.name) {
                return Err(Error::Schema(format!("group {} listed twice", g.name)));
            }
        }
        Ok(())
    }

    pub fn group(&self, name: GroupName) -> Option<&FeatureGroupSpec> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn names(&self) -> Vec<GroupName> {
        self.groups.iter().map(|g| g.name).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.groups.iter().map(|g| g.dim).sum()
    }

    pub fn families(&self) -> Vec<Family> {
        let mut f: Vec<_> = self.groups.iter().map(|g| g.name.family()).collect();
        f.sort();
        f.dedup();
        f
    }

    /// Groups stored in one feature file.
    pub fn restrict(&self, family: Family) -> FeatureSchema {
        FeatureSchema {
            groups: self
                .groups
                .iter()
                .filter(|g| g.name.family() == family)
                .cloned()
                .collect(),
        }
    }
}

/// Recognition task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Valence,
    Arousal,
    Expression,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Valence, Task::Arousal, Task::Expression];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Valence => "valence",
            Task::Arousal => "arousal",
            Task::Expression => "expression",
        }
    }

    pub fn is_classification(self) -> bool {
        self == Task::Expression
    }

    /// Width of one model output for this task.
    pub fn output_width(self) -> usize {
        if self.is_classification() {
            NUM_CLASSES
        } else {
            1
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown task {s:?}")))
    }
}

/// Per-frame labels for one task. `None` is the invalid marker.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelTrack {
    Continuous(Vec<Option<f64>>),
    Class(Vec<Option<u8>>),
}

impl LabelTrack {
    pub fn len(&self) -> usize {
        match self {
            LabelTrack::Continuous(v) => v.len(),
            LabelTrack::Class(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_valid(&self, frame: usize) -> bool {
        match self {
            LabelTrack::Continuous(v) => v[frame].is_some(),
            LabelTrack::Class(v) => v[frame].is_some(),
        }
    }

    /// Builds a track from raw values, mapping out-of-range entries to the
    /// invalid marker.
    pub fn from_raw(task: Task, raw: &[Option<f64>]) -> Self {
        if task.is_classification() {
            LabelTrack::Class(
                raw.iter()
                    .map(|v| {
                        v.filter(|x| x.fract() == 0.0 && (0.0..NUM_CLASSES as f64).contains(x))
                            .map(|x| x as u8)
                    })
                    .collect(),
            )
        } else {
            LabelTrack::Continuous(
                raw.iter()
                    .map(|v| v.filter(|x| (-1.0..=1.0).contains(x)))
                    .collect(),
            )
        }
    }
}

/// One video's frame-level features and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub video_id: String,
    pub fps: f64,
    pub timestamps: Vec<f64>,
    /// One frames-by-dim matrix per group, in schema order.
    pub features: Vec<(GroupName, Matrix)>,
    /// `false` for frames whose raw features contained non-finite values
    /// (those cells are stored as 0).
    pub frame_ok: Vec<bool>,
    pub labels: BTreeMap<Task, LabelTrack>,
}

impl FrameSequence {
    pub fn frame_count(&self) -> usize {
        self.timestamps.len()
    }

    /// Covered time span, `frames / fps`.
    pub fn duration(&self) -> f64 {
        self.frame_count() as f64 / self.fps
    }

    pub fn group(&self, name: GroupName) -> Option<&Matrix> {
        self.features
            .iter()
            .find(|(g, _)| *g == name)
            .map(|(_, m)| m)
    }

    pub fn group_names(&self) -> Vec<GroupName> {
        self.features.iter().map(|(g, _)| *g).collect()
    }

    pub fn attach_labels(&mut self, task: Task, track: LabelTrack) -> Result<()> {
        if track.len() != self.frame_count() {
            return Err(Error::Shape(format!(
                "{} label track for video {} has {} rows, video has {} frames",
                task,
                self.video_id,
                track.len(),
                self.frame_count()
            )));
        }
        self.labels.insert(task, track);
        Ok(())
    }

    /// Appends the groups of `other` (same video, another feature file).
    pub fn merge(&mut self, other: FrameSequence) -> Result<()> {
        if other.frame_count() != self.frame_count() {
            return Err(Error::Shape(format!(
                "feature files of video {} disagree on frame count ({} vs {})",
                self.video_id,
                self.frame_count(),
                other.frame_count()
            )));
        }
        for (ok, o) in self.frame_ok.iter_mut().zip(&other.frame_ok) {
            *ok &= *o;
        }
        self.features.extend(other.features);
        Ok(())
    }

    /// Reorders groups to follow `schema`.
    fn order_by(&mut self, schema: &FeatureSchema) {
        self.features.sort_by_key(|(g, _)| {
            schema
                .groups
                .iter()
                .position(|s| s.name == *g)
                .unwrap_or(usize::MAX)
        });
    }
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64> {
    let t = raw.trim();
    if t.is_empty() {
        return Ok(f64::NAN);
    }
    t.parse::<f64>().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("{t:?} is not a number"),
    })
}

/// Reads one feature CSV, slicing its columns into the groups of `schema`.
///
/// A `timestamp` column, when present, supplies frame times; otherwise they
/// are synthesized as `index / fps`.
pub fn load_feature_table(
    path: &Path,
    schema: &FeatureSchema,
    fps: f64,
    video_id: &str,
) -> Result<FrameSequence> {
    schema.validate()?;
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::Parameter(format!("fps must be positive, got {fps}")));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Serde(format!("{other:?}")),
        })?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if headers.iter().all(String::is_empty) {
        return Err(Error::EmptyInput(format!(
            "{} has no header",
            path.display()
        )));
    }
    let lookup = |name: &str| headers.iter().position(|h| h == name);
    let mut layout = Vec::with_capacity(schema.groups.len());
    for g in &schema.groups {
        let idx = g
            .columns
            .iter()
            .map(|c| {
                lookup(c).ok_or_else(|| {
                    Error::Schema(format!("missing column {c:?} in {}", path.display()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        layout.push(idx);
    }
    let ts_col = lookup("timestamp");

    let mut data: Vec<Vec<f64>> = vec![Vec::new(); schema.groups.len()];
    let mut timestamps = Vec::new();
    let mut frame_ok = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let mut ok = true;
        for (gi, cols) in layout.iter().enumerate() {
            for &c in cols {
                let v = parse_cell(record.get(c).unwrap_or(""), row, &headers[c])?;
                if v.is_finite() {
                    data[gi].push(v);
                } else {
                    ok = false;
                    data[gi].push(0.0);
                }
            }
        }
        if let Some(c) = ts_col {
            let t = parse_cell(record.get(c).unwrap_or(""), row, "timestamp")?;
            if !t.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: "timestamp".into(),
                    message: "non-finite timestamp".into(),
                });
            }
            timestamps.push(t);
        } else {
            timestamps.push(r as f64 / fps);
        }
        frame_ok.push(ok);
    }
    if timestamps.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{} has no data rows",
            path.display()
        )));
    }
    if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::Precondition(format!(
            "timestamps in {} are not strictly increasing at row {}",
            path.display(),
            i + 2
        )));
    }
    let n = timestamps.len();
    let features = schema
        .groups
        .iter()
        .zip(data)
        .map(|(g, d)| Ok((g.name, Matrix::from_vec(n, g.dim, d)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameSequence {
        video_id: video_id.to_string(),
        fps,
        timestamps,
        features,
        frame_ok,
        labels: BTreeMap::new(),
    })
}

/// Writes the sequence's features as one CSV with a `timestamp` column.
/// Values use shortest round-trip formatting, so reloading is exact.
pub fn save_feature_table(seq: &FrameSequence, schema: &FeatureSchema, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
    let mut header = vec!["timestamp".to_string()];
    let mut blocks = Vec::new();
    for g in &schema.groups {
        let m = seq
            .group(g.name)
            .ok_or_else(|| Error::Schema(format!("sequence has no group {}", g.name)))?;
        if m.cols() != g.dim {
            return Err(Error::Schema(format!(
                "group {} has {} columns, schema says {}",
                g.name,
                m.cols(),
                g.dim
            )));
        }
        header.extend(g.columns.iter().cloned());
        blocks.push(m);
    }
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for r in 0..seq.frame_count() {
        rec.clear();
        rec.push(seq.timestamps[r].to_string());
        for m in &blocks {
            rec.extend(m.row(r).iter().map(|v| v.to_string()));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads every feature file a schema needs from one video directory
/// (`openface.csv`, `pose.csv`, `deep.csv`), joined by frame index.
pub fn load_video_features(dir: &Path, schema: &FeatureSchema, fps: f64) -> Result<FrameSequence> {
    let video_id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut seq: Option<FrameSequence> = None;
    for fam in schema.families() {
        let part = load_feature_table(
            &dir.join(fam.file_name()),
            &schema.restrict(fam),
            fps,
            &video_id,
        )?;
        match seq.as_mut() {
            None => seq = Some(part),
            Some(s) => s.merge(part)?,
        }
    }
    let mut seq = seq.ok_or_else(|| Error::Schema("schema has no feature groups".into()))?;
    seq.order_by(schema);
    Ok(seq)
}

/// Writes one file per feature family of `schema` into `dir`.
pub fn save_video_features(seq: &FrameSequence, schema: &FeatureSchema, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for fam in schema.families() {
        save_feature_table(seq, &schema.restrict(fam), &dir.join(fam.file_name()))?;
    }
    Ok(())
}

/// Writes a label track as a single column with a header; invalid frames
/// are left blank.
pub fn save_labels(track: &LabelTrack, task: Task, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(track.len() * 8 + 16);
    out.push_str(task.as_str());
    out.push('\n');
    match track {
        LabelTrack::Continuous(v) => {
            for x in v {
                if let Some(x) = x {
                    out.push_str(&x.to_string());
                }
                out.push('\n');
            }
        }
        LabelTrack::Class(v) => {
            for x in v {
                if let Some(x) = x {
                    out.push_str(&x.to_string());
                }
                out.push('\n');
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a single-column label file. A non-numeric first row is treated as
/// a header; blank cells and out-of-range values become the invalid marker.
pub fn load_labels(path: &Path, task: Task) -> Result<LabelTrack> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut raw = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let cell = line.split(',').next().unwrap_or("").trim();
        if cell.is_empty() {
            raw.push(None);
            continue;
        }
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => raw.push(Some(v)),
            Ok(_) => raw.push(None),
            Err(_) if i == 0 => {}
            Err(_) => {
                return Err(Error::Parse {
                    row: i + 1,
                    column: task.as_str().into(),
                    message: format!("{cell:?} is not a number"),
                })
            }
        }
    }
    Ok(LabelTrack::from_raw(task, &raw))
}

/// Per-column standardization statistics for one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub name: GroupName,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub constant: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizerStats {
    pub groups: Vec<GroupStats>,
}

/// Relative threshold under which a column's spread counts as zero.
const CONSTANT_TOL: f64 = 1e-12;

/// Per-column mean and population std over all usable frames of the
/// training videos (Welford accumulation, videos in the given order).
pub fn fit_standardizer(train: &[FrameSequence]) -> Result<StandardizerStats> {
    let first = train
        .first()
        .ok_or_else(|| Error::EmptyInput("no training sequences to standardize".into()))?;
    let layout: Vec<(GroupName, usize)> =
        first.features.iter().map(|(g, m)| (*g, m.cols())).collect();
    let mut count = 0usize;
    let mut mean: Vec<Vec<f64>> = layout.iter().map(|&(_, d)| vec![0.0; d]).collect();
    let mut m2: Vec<Vec<f64>> = layout.iter().map(|&(_, d)| vec![0.0; d]).collect();
    for seq in train {
        let seq_layout: Vec<(GroupName, usize)> =
            seq.features.iter().map(|(g, m)| (*g, m.cols())).collect();
        if seq_layout != layout {
            return Err(Error::Schema(format!(
                "video {} has a different group layout than {}",
                seq.video_id, first.video_id
            )));
        }
        for f in 0..seq.frame_count() {
            if !seq.frame_ok[f] {
                continue;
            }
            count += 1;
            let n = count as f64;
            for (gi, (_, m)) in seq.features.iter().enumerate() {
                for (c, &x) in m.row(f).iter().enumerate() {
                    let d = x - mean[gi][c];
                    mean[gi][c] += d / n;
                    m2[gi][c] += d * (x - mean[gi][c]);
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyInput(
            "training sequences contain no usable frames".into(),
        ));
    }
    let groups = layout
        .iter()
        .enumerate()
        .map(|(gi, &(name, _))| {
            let mut std: Vec<f64> = m2[gi]
                .iter()
                .map(|s| (s / count as f64).max(0.0).sqrt())
                .collect();
            let constant: Vec<bool> = std
                .iter()
                .zip(&mean[gi])
                .map(|(s, m)| *s <= CONSTANT_TOL * m.abs().max(1.0))
                .collect();
            for (s, c) in std.iter_mut().zip(&constant) {
                if *c {
                    *s = 0.0;
                }
            }
            GroupStats {
                name,
                mean: mean[gi].clone(),
                std,
                constant,
            }
        })
        .collect();
    Ok(StandardizerStats { groups })
}

/// Applies `(x - mean) / std` to every non-constant column.
pub fn standardize(seq: &FrameSequence, stats: &StandardizerStats) -> Result<FrameSequence> {
    if seq.features.len() != stats.groups.len() {
        return Err(Error::Schema(format!(
            "video {} has {} groups, standardizer has {}",
            seq.video_id,
            seq.features.len(),
            stats.groups.len()
        )));
    }
    let mut out = seq.clone();
    for ((g, m), st) in out.features.iter_mut().zip(&stats.groups) {
        if *g != st.name || m.cols() != st.mean.len() {
            return Err(Error::Schema(format!(
                "group {g} ({} columns) does not match standardizer group {} ({} columns)",
                m.cols(),
                st.name,
                st.mean.len()
            )));
        }
        for r in 0..m.rows() {
            for (c, x) in m.row_mut(r).iter_mut().enumerate() {
                if !st.constant[c] {
                    *x = (*x - st.mean[c]) / st.std[c];
                }
            }
        }
    }
    Ok(out)
}
