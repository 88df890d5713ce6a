//! Multi-term window features.
//!
//! Every sample is anchored at a time `t`; each configured term covers the
//! right-aligned window `[t - length, t]`. For every input channel the window
//! yields four statistics (mean, population std, max - min, least-squares
//! slope against time), and each task gets one aggregated label per term:
//! the mean for valence/arousal and the mode for expression.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FrameSequence, GroupName, LabelTrack, Task, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::matrix::Matrix;

pub const STAT_NAMES: [&str; 4] = ["mean", "std", "max_change", "slope"];
pub const STATS_PER_CHANNEL: usize = STAT_NAMES.len();

pub const SHORT: &str = "short";
pub const MIDDLE: &str = "middle";
pub const LONG: &str = "long";
pub const OPTIONAL_MID: &str = "optional_mid";

/// Tolerance for comparing anchor times against the sequence duration.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub seconds: f64,
}

impl Term {
    pub fn new(name: &str, seconds: f64) -> Self {
        Term {
            name: name.to_string(),
            seconds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub terms: Vec<Term>,
    pub stride: f64,
    pub fps: f64,
}

impl WindowConfig {
    /// short = 1 s, middle = 6 s, long = 12 s, plus the 3 s term when
    /// `optional_mid` is set; 0.2 s stride.
    pub fn standard(fps: f64, optional_mid: bool) -> Result<Self> {
        let mut terms = vec![
            Term::new(SHORT, 1.0),
            Term::new(MIDDLE, 6.0),
            Term::new(LONG, 12.0),
        ];
        if optional_mid {
            terms.push(Term::new(OPTIONAL_MID, 3.0));
        }
        let cfg = WindowConfig {
            terms,
            stride: 0.2,
            fps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Parameter(format!(
                "fps must be positive, got {}",
                self.fps
            )));
        }
        if !(self.stride > 0.0 && self.stride.is_finite()) {
            return Err(Error::Parameter(format!(
                "stride must be positive, got {}",
                self.stride
            )));
        }
        if !self.terms.iter().any(|t| t.name == SHORT) {
            return Err(Error::Parameter(
                "window terms must include \"short\"".into(),
            ));
        }
        for (i, t) in self.terms.iter().enumerate() {
            if !(t.seconds > 0.0 && t.seconds.is_finite()) {
                return Err(Error::Parameter(format!(
                    "term {} has non-positive length",
                    t.name
                )));
            }
            if self.frames(t) < 2 {
                return Err(Error::Parameter(format!(
                    "term {} spans fewer than 2 frames at {} fps",
                    t.name, self.fps
                )));
            }
            if self.terms[..i].iter().any(|u| u.name == t.name) {
                return Err(Error::Parameter(format!("term {} listed twice", t.name)));
            }
        }
        Ok(())
    }

    pub fn frames(&self, term: &Term) -> usize {
        (term.seconds * self.fps).round() as usize
    }

    /// Length of the longest window, in seconds.
    pub fn longest(&self) -> f64 {
        self.terms.iter().map(|t| t.seconds).fold(0.0, f64::max)
    }

    /// Number of anchors for a sequence of the given duration.
    pub fn anchor_count(&self, duration: f64) -> usize {
        let w = self.longest();
        if duration + TIME_EPS < w {
            0
        } else {
            ((duration - w) / self.stride + TIME_EPS).floor() as usize + 1
        }
    }
}

/// The four per-channel window statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowStats {
    pub mean: f64,
    pub std: f64,
    pub max_change: f64,
    pub slope: f64,
}

/// Ordinary least-squares slope of `values` against `timestamps`.
pub fn slope(values: &[f64], timestamps: &[f64]) -> Result<f64> {
    check_window(values, timestamps)?;
    let n = values.len() as f64;
    let t0 = timestamps[0];
    let t_mean = timestamps.iter().map(|t| t - t0).sum::<f64>() / n;
    let y_mean = values.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (&t, &y) in timestamps.iter().zip(values) {
        let dt = t - t0 - t_mean;
        sxy += dt * (y - y_mean);
        sxx += dt * dt;
    }
    if sxx <= 0.0 {
        return Err(Error::Precondition(
            "timestamps in window are degenerate".into(),
        ));
    }
    Ok(sxy / sxx)
}

fn check_window(values: &[f64], timestamps: &[f64]) -> Result<()> {
    if values.len() != timestamps.len() {
        return Err(Error::Shape(format!(
            "{} values against {} timestamps",
            values.len(),
            timestamps.len()
        )));
    }
    if values.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "window statistics need at least 2 frames, got {}",
            values.len()
        )));
    }
    if timestamps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition(
            "timestamps in window are not strictly increasing".into(),
        ));
    }
    Ok(())
}

pub fn window_stats(values: &[f64], timestamps: &[f64]) -> Result<WindowStats> {
    let slope = slope(values, timestamps)?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    Ok(WindowStats {
        mean,
        std: var.sqrt(),
        max_change: hi - lo,
        slope,
    })
}

pub fn aggregate_label_regression(labels: &[f64]) -> f64 {
    labels.iter().sum::<f64>() / labels.len() as f64
}

/// Most frequent class; ties go to the smallest class id.
pub fn aggregate_label_classification(labels: &[u8]) -> u8 {
    let mut counts = [0usize; 256];
    for &l in labels {
        counts[l as usize] += 1;
    }
    let mut best = 0u8;
    for c in 1..256 {
        if counts[c] > counts[best as usize] {
            best = c as u8;
        }
    }
    best
}

/// Column layout shared by every sample of a windowed dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSchema {
    pub terms: Vec<Term>,
    pub groups: Vec<(GroupName, usize)>,
    pub tasks: Vec<Task>,
}

impl WindowSchema {
    pub fn features_per_term(&self) -> usize {
        self.groups.iter().map(|(_, d)| STATS_PER_CHANNEL * d).sum()
    }

    pub fn feature_len(&self) -> usize {
        self.features_per_term() * self.terms.len()
    }

    pub fn term_index(&self, name: &str) -> Option<usize> {
        self.terms.iter().position(|t| t.name == name)
    }

    pub fn group_index(&self, name: GroupName) -> Option<usize> {
        self.groups.iter().position(|(g, _)| *g == name)
    }

    pub fn task_index(&self, task: Task) -> Option<usize> {
        self.tasks.iter().position(|t| *t == task)
    }

    /// Offset and width of one term/group block inside a sample's feature
    /// vector.
    pub fn block(&self, term: usize, group: usize) -> (usize, usize) {
        let inner: usize = self.groups[..group]
            .iter()
            .map(|(_, d)| STATS_PER_CHANNEL * d)
            .sum();
        (
            term * self.features_per_term() + inner,
            STATS_PER_CHANNEL * self.groups[group].1,
        )
    }

    fn label_slot(&self, term: usize, task: usize) -> usize {
        term * self.tasks.len() + task
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.feature_len());
        for t in &self.terms {
            for (g, d) in &self.groups {
                for c in 0..*d {
                    for s in STAT_NAMES {
                        names.push(format!("{}:{}:{c}:{s}", t.name, g));
                    }
                }
            }
        }
        names
    }

    pub fn label_names(&self) -> Vec<String> {
        self.terms
            .iter()
            .flat_map(|t| {
                self.tasks
                    .iter()
                    .map(move |k| format!("label:{}:{}", t.name, k))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSample {
    pub video_id: String,
    /// Window end time in seconds, shared by all terms.
    pub anchor: f64,
    /// Term-major, then group, then channel, then the four statistics.
    pub features: Vec<f64>,
    /// Term-major, then task. Class labels are stored as exact integers.
    pub labels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub schema: WindowSchema,
    pub samples: Vec<WindowedSample>,
    /// Non-fatal notes from extraction (e.g. videos too short to window).
    pub warnings: Vec<String>,
}

impl WindowedDataset {
    pub fn empty(schema: WindowSchema) -> Self {
        WindowedDataset {
            schema,
            samples: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn term_features<'a>(
        &self,
        sample: &'a WindowedSample,
        term: usize,
        group: usize,
    ) -> &'a [f64] {
        let (off, w) = self.schema.block(term, group);
        &sample.features[off..off + w]
    }

    /// Stacks one term/group block of every sample into a matrix.
    pub fn block_matrix(&self, term: usize, group: usize) -> Matrix {
        let (off, w) = self.schema.block(term, group);
        let mut data = Vec::with_capacity(self.len() * w);
        for s in &self.samples {
            data.extend_from_slice(&s.features[off..off + w]);
        }
        Matrix::from_vec(self.len(), w, data).expect("block layout")
    }

    pub fn label(&self, sample: &WindowedSample, term: usize, task: Task) -> Result<f64> {
        let k = self
            .schema
            .task_index(task)
            .ok_or_else(|| Error::Schema(format!("dataset has no {task} labels")))?;
        Ok(sample.labels[self.schema.label_slot(term, k)])
    }

    /// Labels of one term for every sample.
    pub fn labels(&self, term: usize, task: Task) -> Result<Vec<f64>> {
        self.samples
            .iter()
            .map(|s| self.label(s, term, task))
            .collect()
    }

    /// Short-term labels, the supervision target of the multi-term stages.
    pub fn short_labels(&self, task: Task) -> Result<Vec<f64>> {
        let t = self
            .schema
            .term_index(SHORT)
            .ok_or_else(|| Error::Schema("dataset has no short term".into()))?;
        self.labels(t, task)
    }

    pub fn video_ids(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.video_id.as_str()).collect()
    }

    /// Concatenates datasets with identical schemas, sorting by video and
    /// anchor.
    pub fn concat(parts: Vec<WindowedDataset>) -> Result<WindowedDataset> {
        let mut iter = parts.into_iter();
        let mut out = iter
            .next()
            .ok_or_else(|| Error::EmptyInput("no datasets to concatenate".into()))?;
        for p in iter {
            if p.schema != out.schema {
                return Err(Error::Schema(
                    "cannot concatenate datasets with different schemas".into(),
                ));
            }
            out.samples.extend(p.samples);
            out.warnings.extend(p.warnings);
        }
        out.samples.sort_by(|a, b| {
            a.video_id
                .cmp(&b.video_id)
                .then(a.anchor.total_cmp(&b.anchor))
        });
        Ok(out)
    }

    pub fn subset(&self, idx: &[usize]) -> WindowedDataset {
        WindowedDataset {
            schema: self.schema.clone(),
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            warnings: Vec::new(),
        }
    }
}

/// Windows one standardized sequence into multi-term samples.
///
/// Samples whose longest window touches an invalid label (for any requested
/// task) or a flagged feature frame are skipped. A sequence shorter than the
/// longest window yields an empty dataset with a warning.
pub fn extract_multiterm(
    seq: &FrameSequence,
    cfg: &WindowConfig,
    tasks: &[Task],
) -> Result<WindowedDataset> {
    cfg.validate()?;
    if (seq.fps - cfg.fps).abs() > 1e-9 * cfg.fps {
        return Err(Error::Precondition(format!(
            "video {} is at {} fps, window config expects {}",
            seq.video_id, seq.fps, cfg.fps
        )));
    }
    let tracks = tasks
        .iter()
        .map(|t| {
            seq.labels
                .get(t)
                .ok_or_else(|| Error::Schema(format!("video {} has no {t} labels", seq.video_id)))
        })
        .collect::<Result<Vec<&LabelTrack>>>()?;
    let schema = WindowSchema {
        terms: cfg.terms.clone(),
        groups: seq.features.iter().map(|(g, m)| (*g, m.cols())).collect(),
        tasks: tasks.to_vec(),
    };
    let mut ds = WindowedDataset::empty(schema);
    let n = seq.frame_count();
    let count = cfg.anchor_count(seq.duration());
    if count == 0 {
        let msg = format!(
            "video {} lasts {:.3} s, shorter than the {:.3} s window; no samples",
            seq.video_id,
            seq.duration(),
            cfg.longest()
        );
        log::warn!("{msg}");
        ds.warnings.push(msg);
        return Ok(ds);
    }

    // Column-major copies make the per-window scans contiguous.
    let columns: Vec<Vec<Vec<f64>>> = seq
        .features
        .iter()
        .map(|(_, m)| (0..m.cols()).map(|c| m.column(c)).collect())
        .collect();
    let lengths: Vec<usize> = cfg.terms.iter().map(|t| cfg.frames(t)).collect();
    let longest = *lengths.iter().max().expect("at least one term");

    for i in 0..count {
        let anchor = cfg.longest() + i as f64 * cfg.stride;
        let end = ((anchor * cfg.fps).round() as usize).min(n);
        let Some(outer) = end.checked_sub(longest) else {
            continue;
        };
        if !seq.frame_ok[outer..end].iter().all(|&ok| ok)
            || !tracks.iter().all(|tr| (outer..end).all(|f| tr.is_valid(f)))
        {
            continue;
        }
        let mut features = Vec::with_capacity(ds.schema.feature_len());
        let mut labels = Vec::with_capacity(cfg.terms.len() * tasks.len());
        for &len in &lengths {
            let start = end - len;
            let ts = &seq.timestamps[start..end];
            for group in &columns {
                for col in group {
                    let st = window_stats(&col[start..end], ts)?;
                    features.extend([st.mean, st.std, st.max_change, st.slope]);
                }
            }
            for tr in &tracks {
                labels.push(match tr {
                    LabelTrack::Continuous(v) => {
                        let vals: Vec<f64> = v[start..end]
                            .iter()
                            .map(|x| x.expect("validated"))
                            .collect();
                        aggregate_label_regression(&vals)
                    }
                    LabelTrack::Class(v) => {
                        let vals: Vec<u8> = v[start..end]
                            .iter()
                            .map(|x| x.expect("validated"))
                            .collect();
                        aggregate_label_classification(&vals) as f64
                    }
                });
            }
        }
        ds.samples.push(WindowedSample {
            video_id: seq.video_id.clone(),
            anchor,
            features,
            labels,
        });
    }
    Ok(ds)
}

/// Windows many videos in parallel; output is ordered by video id, then
/// anchor, independent of scheduling.
pub fn extract_all(
    seqs: &[FrameSequence],
    cfg: &WindowConfig,
    tasks: &[Task],
) -> Result<WindowedDataset> {
    let parts = seqs
        .par_iter()
        .map(|s| extract_multiterm(s, cfg, tasks))
        .collect::<Result<Vec<_>>>()?;
    WindowedDataset::concat(parts)
}

pub fn schema_sidecar(path: &Path) -> PathBuf {
    path.with_extension("schema.json")
}

/// Writes the dataset as CSV (`video_id`, `anchor`, features, labels) plus
/// a JSON schema manifest next to it.
pub fn write_windowed_csv(ds: &WindowedDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
    let mut header = vec!["video_id".to_string(), "anchor".to_string()];
    header.extend(ds.schema.feature_names());
    header.extend(ds.schema.label_names());
    w.write_record(&header)?;
    let class_slots: Vec<bool> = ds
        .schema
        .terms
        .iter()
        .flat_map(|_| ds.schema.tasks.iter().map(|t| t.is_classification()))
        .collect();
    let mut rec: Vec<String> = Vec::with_capacity(header.len());
    for s in &ds.samples {
        rec.clear();
        rec.push(s.video_id.clone());
        rec.push(sig9(s.anchor));
        rec.extend(s.features.iter().map(|&v| sig9(v)));
        rec.extend(s.labels.iter().zip(&class_slots).map(|(&v, &cls)| {
            if cls {
                format!("{}", v as u8)
            } else {
                sig9(v)
            }
        }));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let sidecar = schema_sidecar(path);
    std::fs::write(&sidecar, serde_json::to_string_pretty(&ds.schema)?)
        .map_err(|e| Error::io(&sidecar, e))
}

pub fn read_windowed_csv(path: &Path) -> Result<WindowedDataset> {
    let sidecar = schema_sidecar(path);
    let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let schema: WindowSchema = serde_json::from_str(&text)?;
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Serde(format!("{other:?}")),
    })?;
    let nf = schema.feature_len();
    let nl = schema.terms.len() * schema.tasks.len();
    let header = r.headers()?.clone();
    if header.len() != 2 + nf + nl {
        return Err(Error::Schema(format!(
            "{} has {} columns, schema expects {}",
            path.display(),
            header.len(),
            2 + nf + nl
        )));
    }
    let mut samples = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64> {
            rec[c].parse::<f64>().map_err(|_| Error::Parse {
                row: i + 1,
                column: header[c].to_string(),
                message: format!("{:?} is not a number", &rec[c]),
            })
        };
        samples.push(WindowedSample {
            video_id: rec[0].to_string(),
            anchor: num(1)?,
            features: (2..2 + nf).map(num).collect::<Result<_>>()?,
            labels: (2 + nf..2 + nf + nl).map(num).collect::<Result<_>>()?,
        });
    }
    Ok(WindowedDataset {
        schema,
        samples,
        warnings: Vec::new(),
    })
}

/// Per-class counts of the short-term expression label.
pub fn class_counts(ds: &WindowedDataset) -> Result<[usize; NUM_CLASSES]> {
    let mut counts = [0usize; NUM_CLASSES];
    for y in ds.short_labels(Task::Expression)? {
        counts[y as usize] += 1;
    }
    Ok(counts)
}

/// Sample counts per video id.
pub fn video_counts(ds: &WindowedDataset) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for s in &ds.samples {
        *m.entry(s.video_id.clone()).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GroupName;

    fn seq(seconds: f64, fps: f64, f: impl Fn(f64) -> f64) -> FrameSequence {
        let n = (seconds * fps).round() as usize;
        let ts: Vec<f64> = (0..n).map(|i| i as f64 / fps).collect();
        let vals: Vec<f64> = ts.iter().map(|&t| f(t)).collect();
        let mut labels = BTreeMap::new();
        labels.insert(
            Task::Valence,
            LabelTrack::Continuous(ts.iter().map(|&t| Some((t / 100.0).sin())).collect()),
        );
        labels.insert(
            Task::Expression,
            LabelTrack::Class(ts.iter().map(|&t| Some(((t * 3.0) as u8) % 7)).collect()),
        );
        FrameSequence {
            video_id: "v".into(),
            fps,
            timestamps: ts,
            features: vec![(GroupName::Gaze, Matrix::from_vec(n, 1, vals).unwrap())],
            frame_ok: vec![true; n],
            labels,
        }
    }

    #[test]
    fn affine_slope() {
        assert_eq!(
            slope(&[0.0, 2.0, 4.0, 6.0], &[0.0, 1.0, 2.0, 3.0]).unwrap(),
            2.0
        );
        assert_eq!(slope(&[3.0; 5], &[0.0, 1.0, 2.0, 3.0, 4.0]).unwrap(), 0.0);
    }

    #[test]
    fn slope_errors() {
        assert!(matches!(
            slope(&[1.0], &[0.0]),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            slope(&[1.0, 2.0], &[1.0, 1.0]),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn three_point_stats() {
        let s = window_stats(&[1.0, 3.0, 2.0], &[0.0, 0.1, 0.2]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(s.max_change, 2.0);
        assert!((s.slope - 5.0).abs() < 1e-12);
        let c = window_stats(&[4.0; 3], &[0.0, 0.1, 0.2]).unwrap();
        assert_eq!((c.mean, c.std, c.max_change, c.slope), (4.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn affine_identities() {
        let ts: Vec<f64> = (0..21).map(|i| 3.0 + i as f64 * 0.05).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 2.0 * t + 1.0).collect();
        let s = window_stats(&ys, &ts).unwrap();
        let span = ts[20] - ts[0];
        assert!((s.mean - (2.0 * (ts[0] + span / 2.0) + 1.0)).abs() < 1e-12);
        assert!((s.max_change - 2.0 * span).abs() < 1e-12);
        assert!((s.slope - 2.0).abs() < 1e-9);
    }

    #[test]
    fn label_aggregation() {
        assert!((aggregate_label_regression(&[0.2, 0.4]) - 0.3).abs() < 1e-15);
        assert_eq!(aggregate_label_regression(&[-1.0, 1.0]), 0.0);
        assert_eq!(aggregate_label_classification(&[0, 0, 3, 3, 3]), 3);
        assert_eq!(aggregate_label_classification(&[1, 1, 2, 2]), 1);
        assert_eq!(aggregate_label_classification(&[2, 2, 1, 1]), 1);
        assert_eq!(aggregate_label_classification(&[5]), 5);
    }

    #[test]
    fn thirteen_second_video() {
        let cfg = WindowConfig::standard(30.0, false).unwrap();
        let s = seq(13.0, 30.0, |t| t);
        let ds = extract_multiterm(&s, &cfg, &[Task::Valence]).unwrap();
        let anchors: Vec<f64> = ds.samples.iter().map(|s| s.anchor).collect();
        assert_eq!(anchors.len(), 6);
        for (a, e) in anchors.iter().zip([12.0, 12.2, 12.4, 12.6, 12.8, 13.0]) {
            assert!((a - e).abs() < 1e-9);
        }
        assert_eq!(ds.samples[0].features.len(), 3 * 4);
    }

    #[test]
    fn too_short_is_empty_with_warning() {
        let cfg = WindowConfig::standard(30.0, false).unwrap();
        let ds = extract_multiterm(&seq(5.0, 30.0, |t| t), &cfg, &[Task::Valence]).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.warnings.len(), 1);
    }

    #[test]
    fn short_term_label_is_last_second_mean() {
        let cfg = WindowConfig::standard(10.0, false).unwrap();
        let s = seq(20.0, 10.0, |t| t.cos());
        let ds = extract_multiterm(&s, &cfg, &[Task::Valence, Task::Expression]).unwrap();
        let sample = &ds.samples[7];
        let end = (sample.anchor * 10.0).round() as usize;
        let LabelTrack::Continuous(v) = &s.labels[&Task::Valence] else {
            unreachable!()
        };
        let mut acc = 0.0;
        for f in end - 10..end {
            acc += v[f].unwrap();
        }
        let expected = acc / 10.0;
        let got = ds.label(sample, 0, Task::Valence).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn invalid_labels_skip_windows() {
        let cfg = WindowConfig::standard(10.0, false).unwrap();
        let mut s = seq(14.0, 10.0, |t| t);
        if let Some(LabelTrack::Continuous(v)) = s.labels.get_mut(&Task::Valence) {
            v[5] = None;
        }
        // frame 5 sits inside the 12 s window of anchors 12.0..=12.4
        let ds = extract_multiterm(&s, &cfg, &[Task::Valence]).unwrap();
        assert_eq!(ds.len(), cfg.anchor_count(14.0) - 3);
        // the same gap does not matter for a task that was not requested
        let ds = extract_multiterm(&s, &cfg, &[Task::Expression]).unwrap();
        assert_eq!(ds.len(), cfg.anchor_count(14.0));
    }

    #[test]
    fn config_validation() {
        assert!(WindowConfig::standard(1.0, false).is_err());
        let mut cfg = WindowConfig::standard(10.0, true).unwrap();
        assert_eq!(cfg.terms.len(), 4);
        cfg.terms.retain(|t| t.name != SHORT);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn csv_round_trip_keeps_layout() {
        let cfg = WindowConfig::standard(10.0, true).unwrap();
        let s = seq(13.0, 10.0, |t| (t * 0.7).sin());
        let ds = extract_multiterm(&s, &cfg, &[Task::Valence, Task::Expression]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.csv");
        write_windowed_csv(&ds, &p).unwrap();
        let back = read_windowed_csv(&p).unwrap();
        assert_eq!(back.schema, ds.schema);
        assert_eq!(back.len(), ds.len());
        for (a, b) in back.samples.iter().zip(&ds.samples) {
            assert_eq!(a.labels[1], b.labels[1]);
            for (x, y) in a.features.iter().zip(&b.features) {
                assert!((x - y).abs() <= 1e-8 * y.abs().max(1e-300) + 1e-300);
            }
        }
    }
}
