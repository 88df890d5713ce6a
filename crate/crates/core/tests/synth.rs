mod common;

use std::path::Path;

use affect_core::data::{LabelTrack, Task};
use affect_core::metrics::ccc;
use affect_core::pipeline::load_split;
use affect_core::synth::{gen_synthetic, generate, SyntheticSpec};
use common::ccc_oracle;
use nalgebra::{DMatrix, DVector};

fn spec(videos: usize) -> SyntheticSpec {
    SyntheticSpec {
        train_videos: videos,
        valid_videos: 2,
        seconds: 60.0,
        fps: 10.0,
        seed: 7,
        ..SyntheticSpec::default()
    }
}

fn continuous(track: &LabelTrack) -> Vec<f64> {
    match track {
        LabelTrack::Continuous(v) => v.iter().map(|x| x.unwrap()).collect(),
        LabelTrack::Class(_) => panic!("expected a continuous track"),
    }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn least_squares_on_latents_recovers_valence() {
    let corpus = generate(&spec(8)).unwrap();
    let (mut rows, mut y) = (Vec::new(), Vec::new());
    for v in &corpus.train {
        let val = continuous(&v.seq.labels[&Task::Valence]);
        for (f, t) in val.iter().enumerate() {
            rows.extend([1.0, v.latents[0][f], v.latents[1][f], v.latents[2][f]]);
            y.push(*t);
        }
    }
    let x = DMatrix::from_row_slice(y.len(), 4, &rows);
    let yv = DVector::from_vec(y.clone());
    let beta = (x.transpose() * &x)
        .lu()
        .solve(&(x.transpose() * &yv))
        .unwrap();
    let fit: Vec<f64> = (&x * beta).iter().copied().collect();
    let c = ccc_oracle(&fit, &y);
    assert!(c > 0.9, "{c}");
    assert!((ccc(&fit, &y).unwrap() - c).abs() < 1e-10);
}

#[test]
fn neutral_dominates_expression() {
    let corpus = generate(&spec(20)).unwrap();
    let (mut neutral, mut total) = (0usize, 0usize);
    let mut seen = [false; 7];
    for v in corpus.train.iter().chain(&corpus.valid) {
        let LabelTrack::Class(c) = &v.seq.labels[&Task::Expression] else {
            panic!()
        };
        for x in c.iter().flatten() {
            seen[*x as usize] = true;
            total += 1;
            neutral += (*x == 0) as usize;
        }
    }
    let frac = neutral as f64 / total as f64;
    assert!(frac > 0.6, "{frac}");
    assert!(seen.iter().filter(|&&s| s).count() >= 5);
}

#[test]
fn corpora_are_byte_identical() {
    let s = SyntheticSpec {
        train_videos: 20,
        valid_videos: 0,
        ..spec(20)
    };
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for d in &dirs {
        gen_synthetic(&s, &d.path().join("features"), &d.path().join("labels")).unwrap();
    }
    let a = files(dirs[0].path());
    let b = files(dirs[1].path());
    assert_eq!(a.len(), 20 * (3 + 3));
    assert!(a == b);

    // A different seed changes the content.
    let other = tempfile::tempdir().unwrap();
    gen_synthetic(
        &SyntheticSpec {
            seed: 8,
            ..s.clone()
        },
        &other.path().join("features"),
        &other.path().join("labels"),
    )
    .unwrap();
    assert!(files(other.path()) != a);
}

#[test]
fn written_corpus_reloads() {
    let s = SyntheticSpec {
        train_videos: 3,
        valid_videos: 1,
        seconds: 10.0,
        ..spec(3)
    };
    let d = tempfile::tempdir().unwrap();
    let (f, l) = (d.path().join("features"), d.path().join("labels"));
    let corpus = gen_synthetic(&s, &f, &l).unwrap();
    let train = load_split(&f, &l, "train", &s.schema(), s.fps).unwrap();
    assert_eq!(train.len(), 3);
    for (got, want) in train.iter().zip(&corpus.train) {
        assert_eq!(got.video_id, want.seq.video_id);
        assert_eq!(got.features, want.seq.features);
        assert_eq!(got.labels, want.seq.labels);
    }
}
