//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use affect_core::balancing::{balance_expression, balance_va, VaGrid};
use affect_core::config::{parse_config, PipelineConfig};
use affect_core::data::{FrameSequence, Task};
use affect_core::decomposition::fit_pca;
use affect_core::ensemble::{
    audit_leakage, load_bundle, save_bundle, Bundle, BundleManifest, Stage, Trained,
};
use affect_core::learner::{train_classifier, train_regressor, GbdtParams, Labeled, Node, Tree};
use affect_core::metrics::{
    ccc, combine_expression, expression_score, va_score, AbsentClassPolicy,
};
use affect_core::pipeline::{
    apply_preprocess, evaluate, fit_preprocess, predict_models, task_sets, train_stack,
    write_predictions, Predictions, TrainStage, Training, VA_SET,
};
use affect_core::synth::{generate, SyntheticSpec};
use affect_core::windowing::{
    extract_all, slope, window_stats, Term, WindowConfig, WindowedDataset,
};
use affect_core::Matrix;
use common::{
    ccc_oracle, confusion_oracle, random_windowed, rng, stump_oracle, window_stats_oracle,
};
use nalgebra::DMatrix;
use rand::Rng;

type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("metric exactness", metric_exactness),
        ("windowing", windowing),
        ("multi-term beats single-term", multi_term_trend),
        ("fusion does not degrade multi-term", fusion_trend),
        ("balancing counts", balancing_counts),
        ("learner soundness", learner_soundness),
        ("pca", pca),
        ("determinism and persistence", determinism),
        ("leakage audit", leakage),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn metric_exactness() -> Check {
    let start = Instant::now();
    let mut r = rng(101);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = r.random_range(2..=500);
        let x: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| 0.6 * v + r.random_range(-1.0..1.0))
            .collect();
        worst = worst.max((ccc(&x, &y).map_err(|e| e.to_string())? - ccc_oracle(&x, &y)).abs());
    }
    ensure!(worst < 1e-10, "ccc deviates by {worst:e}");
    for _ in 0..100 {
        let (v, a): (f64, f64) = (r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        ensure!(va_score(v, a) == (v + a) / 2.0, "va score arithmetic");
        ensure!(
            combine_expression(v, a) == 0.67 * v + 0.33 * a,
            "expression arithmetic"
        );
    }
    for case in 0..100 {
        let classes = if case % 4 == 0 { 5 } else { 7 };
        let truth: Vec<u8> = (0..500).map(|_| r.random_range(0..classes)).collect();
        let pred: Vec<u8> = truth
            .iter()
            .map(|&t| {
                if r.random::<f64>() < 0.4 {
                    t
                } else {
                    r.random_range(0..classes)
                }
            })
            .collect();
        let got = expression_score(&pred, &truth, AbsentClassPolicy::Exclude)
            .map_err(|e| e.to_string())?;
        let want = confusion_oracle(&pred, &truth);
        ensure!(
            got.per_class_f1 == want.f1
                && got.macro_f1 == want.macro_f1
                && got.accuracy == want.accuracy,
            "confusion oracle mismatch in case {case}"
        );
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.1}s");
    Ok(format!(
        "max ccc deviation {worst:.1e}, 100 confusion cases exact"
    ))
}

fn windowing() -> Check {
    let mut r = rng(102);
    for _ in 0..100 {
        let fps = [10.0, 25.0, 30.0][r.random_range(0..3)];
        let stride_frames = r.random_range(1..10);
        let longest = r.random_range(4..60);
        let frames = r.random_range(1..400);
        let cfg = WindowConfig {
            terms: vec![
                Term::new("short", 2.0 / fps),
                Term::new("long", longest as f64 / fps),
            ],
            stride: stride_frames as f64 / fps,
            fps,
        };
        let want = (0..)
            .map(|i| longest + i * stride_frames)
            .take_while(|&end| end <= frames)
            .count();
        let got = cfg.anchor_count(frames as f64 / fps);
        ensure!(
            got == want,
            "{frames} frames, window {longest}, stride {stride_frames}: {got} vs {want}"
        );
    }
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let n = r.random_range(2..300);
        let t: Vec<f64> = (0..n).map(|i| 3.0 + i as f64 / 30.0).collect();
        let v: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let s = window_stats(&v, &t).map_err(|e| e.to_string())?;
        for (g, w) in [s.mean, s.std, s.max_change, s.slope]
            .iter()
            .zip(window_stats_oracle(&v, &t))
        {
            worst = worst.max((g - w).abs());
        }
    }
    ensure!(worst < 1e-10, "window stats deviate by {worst:e}");
    for _ in 0..200 {
        let (a, b): (f64, f64) = (r.random_range(-10.0..10.0), r.random_range(-10.0..10.0));
        let t: Vec<f64> = (0..40).map(|i| 1.0 + i as f64 * 0.1).collect();
        let v: Vec<f64> = t.iter().map(|x| a * x + b).collect();
        let got = slope(&v, &t).map_err(|e| e.to_string())?;
        ensure!((got - a).abs() < 1e-9, "slope {got} vs {a}");
    }
    Ok(format!(
        "100 anchor configurations, stats deviation {worst:.1e}"
    ))
}

fn synthetic_config() -> PipelineConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.toml");
    parse_config(&path).expect("synthetic preset parses")
}

struct Run {
    train_sets: Vec<(&'static str, WindowedDataset)>,
    training: Training,
    bundle: Bundle,
    valid: Vec<(Vec<Task>, WindowedDataset)>,
}

/// In-memory equivalent of synth, extract, train up to fusion.
fn run_pipeline(cfg: &PipelineConfig, spec: &SyntheticSpec, k: usize) -> Run {
    let corpus = generate(spec).unwrap();
    let train: Vec<FrameSequence> = corpus.train.iter().map(|v| v.seq.clone()).collect();
    let valid: Vec<FrameSequence> = corpus.valid.iter().map(|v| v.seq.clone()).collect();
    let pre = fit_preprocess(&train, &cfg.pca_dims()).unwrap();
    let prep = |seqs: &[FrameSequence]| -> Vec<FrameSequence> {
        seqs.iter()
            .map(|s| apply_preprocess(s, &pre).unwrap())
            .collect()
    };
    let (train, valid) = (prep(&train), prep(&valid));
    let wcfg = cfg.window_config().unwrap();
    let mut train_sets = Vec::new();
    let mut valid_sets = Vec::new();
    for (set, tasks) in task_sets(&cfg.tasks) {
        train_sets.push((set, extract_all(&train, &wcfg, &tasks).unwrap()));
        valid_sets.push((tasks.clone(), extract_all(&valid, &wcfg, &tasks).unwrap()));
    }
    let set_for = |t: Task| {
        let want = if t.is_classification() {
            "expr"
        } else {
            VA_SET
        };
        &train_sets.iter().find(|(s, _)| *s == want).unwrap().1
    };
    let data: Vec<(Task, &WindowedDataset)> = cfg.tasks.iter().map(|&t| (t, set_for(t))).collect();
    let stack = cfg.stack_config();
    let training = train_stack(&data, TrainStage::Fusion, &stack, k, cfg.fold_seed).unwrap();
    let mut schema = train_sets[0].1.schema.clone();
    schema.tasks = cfg.tasks.clone();
    let bundle = Bundle {
        manifest: BundleManifest {
            format_version: 1,
            stage: TrainStage::Fusion.as_str().into(),
            schema,
            fold_plan: training.plan.clone(),
            stack,
            seeds: Default::default(),
            tasks: Vec::new(),
        },
        preprocess: Some(pre),
        tasks: training.models(),
    };
    Run {
        train_sets,
        training,
        bundle,
        valid: valid_sets,
    }
}

fn predict_valid(bundle: &Bundle, valid: &[(Vec<Task>, WindowedDataset)]) -> Predictions {
    let parts = valid
        .iter()
        .map(|(tasks, ds)| predict_models(&bundle.tasks, tasks, ds).unwrap())
        .collect();
    Predictions::concat(parts).unwrap()
}

struct TrendScores {
    single_term_valence: Vec<(String, f64)>,
    multi_term_valence: f64,
    multi_term_va: f64,
    fusion_va: f64,
    minutes: f64,
}

fn trend_scores() -> &'static TrendScores {
    static CELL: std::sync::OnceLock<TrendScores> = std::sync::OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let cfg = synthetic_config();
        let spec = cfg.synthetic_spec().unwrap();
        let run = run_pipeline(&cfg, &spec, cfg.k_folds);
        let (report, components) = evaluate(&predict_valid(&run.bundle, &run.valid)).unwrap();
        let score = |col: &str| components.iter().find(|c| c.column == col).unwrap().value;
        let single_term_valence = run.train_sets[0]
            .1
            .schema
            .terms
            .iter()
            .map(|t| (t.name.clone(), score(&format!("valence:{}", t.name))))
            .collect();
        TrendScores {
            single_term_valence,
            multi_term_valence: score("valence:multi_term"),
            multi_term_va: va_score(score("valence:multi_term"), score("arousal:multi_term")),
            fusion_va: report.va_score.unwrap(),
            minutes: start.elapsed().as_secs_f64() / 60.0,
        }
    })
}

fn multi_term_trend() -> Check {
    let s = trend_scores();
    let (best_name, best) = s
        .single_term_valence
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .unwrap();
    let detail = format!(
        "multi-term valence ccc {:.4} vs best single-term ({best_name}) {best:.4}, pipeline {:.1} min",
        s.multi_term_valence, s.minutes
    );
    ensure!(s.multi_term_valence >= best + 0.02, "{detail}");
    ensure!(s.minutes < 5.0, "{detail}");
    Ok(detail)
}

fn fusion_trend() -> Check {
    let s = trend_scores();
    let detail = format!(
        "fusion va {:.4} vs multi-term va {:.4}",
        s.fusion_va, s.multi_term_va
    );
    ensure!(s.fusion_va >= s.multi_term_va - 0.01, "{detail}");
    Ok(detail)
}

fn balancing_counts() -> Check {
    let grid = VaGrid::default();
    let center = [27usize, 28, 35, 36];
    for seed in 0..50u64 {
        let ds = random_windowed(5000 + seed, 120 + 3 * seed as usize, 6);
        let count = |d: &WindowedDataset, f: &dyn Fn(&[f64]) -> usize| {
            let mut c = std::collections::BTreeMap::<usize, usize>::new();
            for s in &d.samples {
                *c.entry(f(&s.labels)).or_default() += 1;
            }
            c
        };
        let class = |l: &[f64]| l[2] as usize;
        let (out, _) = balance_expression(&ds, seed).map_err(|e| e.to_string())?;
        let (before, after) = (count(&ds, &class), count(&out, &class));
        for (&c, &n) in &before {
            let want = if c == 0 { n.div_ceil(2) } else { 2 * n };
            ensure!(
                after[&c] == want,
                "seed {seed} class {c}: {} vs {want}",
                after[&c]
            );
        }
        let bin = |x: f64| (((x + 1.0) / 0.25).floor() as usize).min(7);
        let region = |l: &[f64]| bin(l[1]) * 8 + bin(l[0]);
        let (out, _) = balance_va(&ds, &grid, seed).map_err(|e| e.to_string())?;
        let want: usize = count(&ds, &region)
            .iter()
            .map(|(r, &n)| {
                if center.contains(r) {
                    n.div_ceil(2)
                } else {
                    2 * n
                }
            })
            .sum();
        ensure!(
            out.len() == want,
            "seed {seed}: va total {} vs {want}",
            out.len()
        );
    }
    Ok("50 random datasets recounted".into())
}

fn leaf_rows(tree: &Tree, x: &Matrix) -> Vec<usize> {
    let mut at = vec![0; tree.nodes.len()];
    for r in 0..x.rows() {
        let mut i = 0;
        loop {
            at[i] += 1;
            match &tree.nodes[i] {
                Node::Leaf { .. } => break,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if x.get(r, *feature) <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }
    at
}

fn learner_soundness() -> Check {
    let mut r = rng(103);
    let rows: Vec<Vec<f64>> = (0..500)
        .map(|_| (0..4).map(|_| r.random_range(0..50) as f64 / 5.0).collect())
        .collect();
    let y: Vec<f64> = rows
        .iter()
        .map(|x| (x[0] * 0.6).sin() + 0.2 * x[1] - 0.1 * x[2] * x[3] + r.random_range(-0.3..0.3))
        .collect();
    let x = Matrix::from_rows(&rows).unwrap();
    let p = GbdtParams {
        num_rounds: 100,
        ..GbdtParams::default()
    };
    let m = train_regressor(Labeled::new(&x, &y).unwrap(), None, &p).map_err(|e| e.to_string())?;
    ensure!(
        m.train_loss.len() >= 100,
        "only {} rounds recorded",
        m.train_loss.len()
    );
    ensure!(
        m.train_loss.windows(2).all(|w| w[1] <= w[0] + 1e-12),
        "training loss increased"
    );

    let stump = GbdtParams {
        num_leaves: 2,
        num_rounds: 1,
        ..GbdtParams::default()
    };
    let m =
        train_regressor(Labeled::new(&x, &y).unwrap(), None, &stump).map_err(|e| e.to_string())?;
    let want = stump_oracle(
        &rows,
        &y,
        stump.min_child_samples,
        stump.lambda_l2,
        stump.learning_rate,
    );
    let got = m.predict(&x).map_err(|e| e.to_string())?;
    let dev = got
        .as_slice()
        .iter()
        .zip(&want)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure!(dev < 1e-9, "stump deviates by {dev:e}");

    let labels: Vec<f64> = rows
        .iter()
        .map(|x| ((x[0] + x[1]) as usize % 7) as f64)
        .collect();
    let caps = GbdtParams {
        num_rounds: 30,
        num_leaves: 9,
        min_child_samples: 12,
        ..GbdtParams::default()
    };
    let c = train_classifier(Labeled::new(&x, &labels).unwrap(), None, &caps)
        .map_err(|e| e.to_string())?;
    let probs = c.predict(&x).map_err(|e| e.to_string())?;
    for row in probs.iter_rows() {
        ensure!(
            (row.iter().sum::<f64>() - 1.0).abs() < 1e-9,
            "probabilities sum to {}",
            row.iter().sum::<f64>()
        );
    }
    let mut audited = 0;
    for t in c.trees.iter().flatten() {
        ensure!(
            t.num_leaves() <= caps.num_leaves,
            "tree with {} leaves",
            t.num_leaves()
        );
        let at = leaf_rows(t, &x);
        for (i, _, count) in t.leaves() {
            ensure!(
                count == at[i] && count >= caps.min_child_samples,
                "leaf holds {count} rows"
            );
        }
        audited += 1;
    }
    Ok(format!(
        "stump deviation {dev:.1e}, {audited} classifier trees audited"
    ))
}

fn pca() -> Check {
    let mut r = rng(104);
    let (n, d) = (200, 10);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..3).map(|_| r.random_range(-2.0..2.0)).collect();
            (0..d)
                .map(|c| z[c % 3] * (1.0 + c as f64) / d as f64 + r.random_range(-0.3..0.3))
                .collect()
        })
        .collect();
    let x = Matrix::from_rows(&rows).unwrap();
    let m = fit_pca(&x, d).map_err(|e| e.to_string())?;
    for i in 0..d {
        for j in 0..d {
            let dot: f64 = m
                .components
                .row(i)
                .iter()
                .zip(m.components.row(j))
                .map(|(a, b)| a * b)
                .sum();
            let want = if i == j { 1.0 } else { 0.0 };
            ensure!((dot - want).abs() < 1e-8, "components {i},{j} dot {dot}");
        }
    }
    let a = DMatrix::from_row_slice(n, d, x.as_slice());
    let mean = a.row_mean();
    let mut centered = a.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let eig = (centered.transpose() * &centered / (n as f64 - 1.0)).symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut worst = 0.0f64;
    for (row, &j) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(j);
        let sign = m
            .components
            .row(row)
            .iter()
            .zip(v.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            .signum();
        for (a, b) in m.components.row(row).iter().zip(v.iter()) {
            worst = worst.max((a - sign * b).abs());
        }
    }
    ensure!(worst < 1e-6, "eigenvectors deviate by {worst:e}");

    let line: Vec<Vec<f64>> = (0..100)
        .map(|_| {
            let t: f64 = r.random_range(-3.0..3.0);
            vec![t, 1.5 - 0.8 * t]
        })
        .collect();
    let one = fit_pca(&Matrix::from_rows(&line).unwrap(), 1).map_err(|e| e.to_string())?;
    let ratio = one.explained_ratio()[0];
    ensure!((ratio - 1.0).abs() < 1e-9, "collinear data keeps {ratio}");
    Ok(format!(
        "oracle deviation {worst:.1e}, collinear ratio {ratio}"
    ))
}

fn small_spec(cfg: &PipelineConfig) -> SyntheticSpec {
    SyntheticSpec {
        train_videos: 9,
        valid_videos: 3,
        seconds: 30.0,
        ..cfg.synthetic_spec().unwrap()
    }
}

fn determinism() -> Check {
    let cfg = synthetic_config();
    let spec = small_spec(&cfg);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut csvs = Vec::new();
    for i in 0..2 {
        let run = run_pipeline(&cfg, &spec, 3);
        let pred = predict_valid(&run.bundle, &run.valid);
        let path = dir.path().join(format!("predictions{i}.csv"));
        write_predictions(&pred, &path).map_err(|e| e.to_string())?;
        csvs.push(std::fs::read(&path).map_err(|e| e.to_string())?);

        let bdir = dir.path().join(format!("bundle{i}"));
        save_bundle(&bdir, &run.bundle).map_err(|e| e.to_string())?;
        let back = load_bundle(&bdir).map_err(|e| e.to_string())?;
        let again = predict_valid(&back, &run.valid);
        let same = pred.columns == again.columns
            && pred
                .values
                .as_slice()
                .iter()
                .zip(again.values.as_slice())
                .all(|(a, b)| a.to_bits() == b.to_bits());
        ensure!(same, "reloaded bundle predicts differently");
    }
    ensure!(csvs[0] == csvs[1], "prediction CSVs differ between runs");
    Ok(format!(
        "{} byte prediction tables identical, reload bit-identical",
        csvs[0].len()
    ))
}

fn audit<M: Stage>(
    t: &Trained<M>,
    ds: &WindowedDataset,
    run: &Run,
    what: &str,
) -> Result<usize, String> {
    let rep = audit_leakage(t, ds, &run.training.plan).map_err(|e| e.to_string())?;
    ensure!(
        rep.violations.is_empty(),
        "{what}: {} leaking rows",
        rep.violations.len()
    );
    ensure!(rep.models_checked > 0, "{what}: nothing audited");
    Ok(rep.rows)
}

fn leakage() -> Check {
    let cfg = synthetic_config();
    let spec = SyntheticSpec {
        train_videos: 10,
        valid_videos: 1,
        seconds: 20.0,
        ..cfg.synthetic_spec().unwrap()
    };
    let mut rows = 0;
    for k in [3, 5] {
        let run = run_pipeline(&cfg, &spec, k);
        for t in &run.training.tasks {
            let set = if t.task.is_classification() {
                "expr"
            } else {
                VA_SET
            };
            let ds = &run.train_sets.iter().find(|(s, _)| *s == set).unwrap().1;
            for term in &t.terms {
                rows += audit(
                    term,
                    ds,
                    &run,
                    &format!("k={k} {} {}", t.task, term.full.term.name),
                )?;
            }
            rows += audit(
                t.multi_term.as_ref().unwrap(),
                ds,
                &run,
                &format!("k={k} {} multi-term", t.task),
            )?;
            rows += audit(
                t.fusion.as_ref().unwrap(),
                ds,
                &run,
                &format!("k={k} {} fusion", t.task),
            )?;
        }
    }
    Ok(format!("{rows} stacked rows clean for K in {{3, 5}}"))
}
