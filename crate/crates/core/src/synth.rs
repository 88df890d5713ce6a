//! Seeded synthetic corpus with known multi-scale structure.
//!
//! Each video carries three unit-variance Ornstein-Uhlenbeck latents with
//! time constants of about 1, 6 and 12 seconds. Valence and arousal are
//! fixed mixtures of the latents, expression is a quantization of another
//! mixture with a wide neutral band, and every feature group observes the
//! latents through its own noisy linear mixing.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    save_labels, save_video_features, FeatureGroupSpec, FeatureSchema, FrameSequence, GroupName,
    LabelTrack, Task,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const TIME_CONSTANTS: [f64; 3] = [1.0, 6.0, 12.0];
pub const VALENCE_MIX: [f64; 3] = [0.25, 0.25, 0.3];
pub const AROUSAL_MIX: [f64; 3] = [0.3, 0.3, -0.2];
/// Latent mixture whose magnitude decides between neutral and an emotion.
pub const EXPRESSION_MIX: [f64; 3] = [0.45, 0.6, 0.45];
/// Mixture that picks the emotion once outside the neutral band.
pub const EXPRESSION_SPLIT_MIX: [f64; 3] = [0.7, -0.1, -0.7];
pub const NEUTRAL_BAND: f64 = 0.95;
const LABEL_NOISE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub train_videos: usize,
    pub valid_videos: usize,
    pub seconds: f64,
    pub fps: f64,
    pub seed: u64,
    /// Per-channel observation noise (std) relative to unit signal variance.
    pub noise: f64,
    /// Feature groups and their widths; the deep group is written at this
    /// width before any reduction.
    pub groups: Vec<(GroupName, usize)>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            train_videos: 40,
            valid_videos: 10,
            seconds: 60.0,
            fps: 10.0,
            seed: 7,
            noise: 10.0,
            groups: vec![
                (GroupName::AuIntensity, 8),
                (GroupName::AuOccurrence, 8),
                (GroupName::HeadPose, 6),
                (GroupName::Gaze, 8),
                (GroupName::Pose, 12),
                (GroupName::Deep, 24),
            ],
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train_videos == 0 {
            return Err(Error::Parameter(
                "synthetic corpus needs at least one training video".into(),
            ));
        }
        if !(self.seconds > 0.0
            && self.fps > 0.0
            && self.seconds.is_finite()
            && self.fps.is_finite())
        {
            return Err(Error::Parameter(
                "synthetic duration and fps must be positive".into(),
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Parameter(format!(
                "synthetic noise must be >= 0, got {}",
                self.noise
            )));
        }
        if self.groups.is_empty() {
            return Err(Error::Parameter(
                "synthetic corpus needs at least one feature group".into(),
            ));
        }
        self.schema().validate()
    }

    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema {
            groups: self
                .groups
                .iter()
                .map(|&(g, d)| FeatureGroupSpec::new(g, d))
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticVideo {
    /// Raw features with all three label tracks attached.
    pub seq: FrameSequence,
    /// Fast, medium and slow latent per frame.
    pub latents: [Vec<f64>; 3],
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub schema: FeatureSchema,
    pub train: Vec<SyntheticVideo>,
    pub valid: Vec<SyntheticVideo>,
}

fn mix(w: &[f64; 3], z: [f64; 3]) -> f64 {
    w[0] * z[0] + w[1] * z[1] + w[2] * z[2]
}

/// Noise-free valence as a function of the latents.
pub fn valence_of(z: [f64; 3]) -> f64 {
    mix(&VALENCE_MIX, z).clamp(-1.0, 1.0)
}

pub fn arousal_of(z: [f64; 3]) -> f64 {
    mix(&AROUSAL_MIX, z).clamp(-1.0, 1.0)
}

/// Expression class of a latent state: neutral inside the band, otherwise
/// happiness or surprise on the positive side and anger, disgust, sadness
/// or fear on the negative side.
pub fn expression_of(z: [f64; 3]) -> u8 {
    let s = mix(&EXPRESSION_MIX, z);
    let u = mix(&EXPRESSION_SPLIT_MIX, z);
    if s.abs() < NEUTRAL_BAND {
        0
    } else if s > 0.0 {
        if u > 0.5 {
            6
        } else {
            4
        }
    } else if u < -0.6 {
        1
    } else if u < 0.0 {
        2
    } else if u < 0.6 {
        5
    } else {
        3
    }
}

/// How strongly each group tracks the fast, medium and slow latent.
fn emphasis(g: GroupName) -> [f64; 3] {
    match g {
        GroupName::AuIntensity => [1.0, 0.6, 0.3],
        GroupName::AuOccurrence => [1.0, 0.4, 0.2],
        GroupName::HeadPose => [0.4, 1.0, 0.5],
        GroupName::Gaze => [0.6, 0.6, 0.6],
        GroupName::Pose => [0.2, 0.5, 1.0],
        GroupName::Deep => [0.7, 0.7, 0.7],
    }
}

/// Unit-norm loading vector per channel, shared by all videos.
fn loadings(spec: &SyntheticSpec) -> Vec<Vec<[f64; 3]>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(u64::MAX);
    spec.groups
        .iter()
        .map(|&(g, d)| {
            let e = emphasis(g);
            (0..d)
                .map(|_| {
                    let mut w = [0.0; 3];
                    for (k, wk) in w.iter_mut().enumerate() {
                        let x: f64 = StandardNormal.sample(&mut rng);
                        *wk = e[k] * x;
                    }
                    let norm = (w.iter().map(|x| x * x).sum::<f64>()).sqrt().max(1e-12);
                    w.map(|x| x / norm)
                })
                .collect()
        })
        .collect()
}

fn video(
    spec: &SyntheticSpec,
    load: &[Vec<[f64; 3]>],
    id: String,
    stream: u64,
) -> Result<SyntheticVideo> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let n = (spec.seconds * spec.fps).round() as usize;
    let dt = 1.0 / spec.fps;
    let mut latents: [Vec<f64>; 3] = Default::default();
    for (k, tau) in TIME_CONSTANTS.iter().enumerate() {
        let a = (-dt / tau).exp();
        let b = (1.0 - a * a).sqrt();
        let mut z: f64 = StandardNormal.sample(&mut rng);
        let track = &mut latents[k];
        track.reserve(n);
        for _ in 0..n {
            track.push(z);
            let e: f64 = StandardNormal.sample(&mut rng);
            z = a * z + b * e;
        }
    }
    let state = |f: usize| [latents[0][f], latents[1][f], latents[2][f]];

    let mut features = Vec::with_capacity(spec.groups.len());
    for (&(g, d), w) in spec.groups.iter().zip(load) {
        let mut m = Matrix::zeros(n, d);
        for f in 0..n {
            let z = state(f);
            let row = m.row_mut(f);
            for (c, x) in row.iter_mut().enumerate() {
                let e: f64 = StandardNormal.sample(&mut rng);
                let v = mix(&w[c], z) + spec.noise * e;
                *x = if g == GroupName::AuOccurrence {
                    if v > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    v
                };
            }
        }
        features.push((g, m));
    }

    let mut val = Vec::with_capacity(n);
    let mut aro = Vec::with_capacity(n);
    let mut expr = Vec::with_capacity(n);
    for f in 0..n {
        let z = state(f);
        let nv: f64 = rng.random_range(-LABEL_NOISE..LABEL_NOISE);
        let na: f64 = rng.random_range(-LABEL_NOISE..LABEL_NOISE);
        val.push(Some((valence_of(z) + nv).clamp(-1.0, 1.0)));
        aro.push(Some((arousal_of(z) + na).clamp(-1.0, 1.0)));
        expr.push(Some(expression_of(z)));
    }
    let mut seq = FrameSequence {
        video_id: id,
        fps: spec.fps,
        timestamps: (0..n).map(|i| i as f64 / spec.fps).collect(),
        features,
        frame_ok: vec![true; n],
        labels: BTreeMap::new(),
    };
    seq.attach_labels(Task::Valence, LabelTrack::Continuous(val))?;
    seq.attach_labels(Task::Arousal, LabelTrack::Continuous(aro))?;
    seq.attach_labels(Task::Expression, LabelTrack::Class(expr))?;
    Ok(SyntheticVideo { seq, latents })
}

/// Builds the corpus in memory. Every video has its own random stream, so
/// the result does not depend on generation order.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let load = loadings(spec);
    let make = |prefix: &str, count: usize, offset: usize| -> Result<Vec<SyntheticVideo>> {
        (0..count)
            .into_par_iter()
            .map(|i| video(spec, &load, format!("{prefix}{i:03}"), (offset + i) as u64))
            .collect()
    };
    Ok(SyntheticCorpus {
        schema: spec.schema(),
        train: make("train", spec.train_videos, 0)?,
        valid: make("valid", spec.valid_videos, spec.train_videos)?,
    })
}

pub const SPLITS: [&str; 2] = ["train", "valid"];

/// Writes `{features_dir}/{split}/{video}/*.csv` and
/// `{labels_dir}/{split}/{video}/{task}.csv`.
pub fn write_corpus(
    corpus: &SyntheticCorpus,
    features_dir: &Path,
    labels_dir: &Path,
) -> Result<()> {
    for (split, videos) in SPLITS.iter().zip([&corpus.train, &corpus.valid]) {
        videos.par_iter().try_for_each(|v| -> Result<()> {
            let id = &v.seq.video_id;
            save_video_features(&v.seq, &corpus.schema, &features_dir.join(split).join(id))?;
            let ldir = labels_dir.join(split).join(id);
            std::fs::create_dir_all(&ldir).map_err(|e| Error::io(&ldir, e))?;
            for (task, track) in &v.seq.labels {
                save_labels(track, *task, &ldir.join(format!("{task}.csv")))?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

pub fn gen_synthetic(
    spec: &SyntheticSpec,
    features_dir: &Path,
    labels_dir: &Path,
) -> Result<SyntheticCorpus> {
    let corpus = generate(spec)?;
    write_corpus(&corpus, features_dir, labels_dir)?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            train_videos: 3,
            valid_videos: 1,
            seconds: 20.0,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x.seq, y.seq);
        }
    }

    #[test]
    fn latents_have_unit_scale() {
        let spec = SyntheticSpec {
            train_videos: 20,
            valid_videos: 0,
            seconds: 200.0,
            ..Default::default()
        };
        let c = generate(&spec).unwrap();
        let fast: Vec<f64> = c.train.iter().flat_map(|v| v.latents[0].clone()).collect();
        let var = fast.iter().map(|x| x * x).sum::<f64>() / fast.len() as f64;
        assert!((var - 1.0).abs() < 0.1, "{var}");
    }

    #[test]
    fn expression_covers_all_classes() {
        let mut seen = [false; 7];
        for a in -30..=30 {
            for b in -30..=30 {
                let z = [a as f64 / 10.0, 0.0, b as f64 / 10.0];
                seen[expression_of(z) as usize] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }
}
