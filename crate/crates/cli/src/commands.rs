//! One function per subcommand. Each reads its inputs, refuses to replace
//! existing outputs without `--force`, and records a run manifest under
//! `{work_dir}/runs/`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use affect_core::balancing::{balance_expression, balance_va, BalanceReport};
use affect_core::config::{parse_config, PipelineConfig};
use affect_core::data::{FrameSequence, Task};
use affect_core::ensemble::{load_bundle, save_bundle, Bundle, BundleManifest, Preprocess};
use affect_core::learner::{grid_search, Labeled, Objective};
use affect_core::pipeline::{
    apply_preprocess, evaluate as score_predictions, fit_preprocess, load_split, predict_models,
    read_predictions, task_sets, train_stack, write_predictions, Predictions, TrainStage, EXPR_SET,
    VA_SET,
};
use affect_core::synth::{generate, write_corpus, SPLITS};
use affect_core::windowing::{
    extract_all, read_windowed_csv, schema_sidecar, write_windowed_csv, WindowedDataset,
};
use affect_core::{Error, Matrix, Result};
use serde::Serialize;

use crate::manifest::{digest_paths, sha256_file, RunManifest};

pub struct Ctx {
    pub cfg: PipelineConfig,
    pub config_path: PathBuf,
    pub force: bool,
}

impl Ctx {
    pub fn new(config: &Path, force: bool) -> Result<Self> {
        let cfg = parse_config(config)?;
        log::info!("effective config:\n{}", cfg.echo());
        Ok(Ctx {
            cfg,
            config_path: config.to_path_buf(),
            force,
        })
    }

    fn work(&self, rel: &str) -> PathBuf {
        self.cfg.work_dir.join(rel)
    }

    /// Refuses to overwrite an existing output unless forced; when forced,
    /// removes it.
    fn claim(&self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Ok(());
        }
        if !self.force {
            return Err(Error::Precondition(format!(
                "{} exists; pass --force to replace it",
                path.display()
            )));
        }
        let removed = if path.is_dir() {
            fs::remove_dir_all(path)
        } else {
            fs::remove_file(path)
        };
        removed.map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "csv") {
            let side = schema_sidecar(path);
            if side.exists() {
                fs::remove_file(&side).map_err(|e| Error::io(&side, e))?;
            }
        }
        Ok(())
    }

    fn seeds(&self) -> BTreeMap<String, u64> {
        BTreeMap::from([
            ("balance_seed".to_string(), self.cfg.balance_seed),
            ("fold_seed".to_string(), self.cfg.fold_seed),
            ("learner_seed".to_string(), self.cfg.learner.seed),
            ("synth_seed".to_string(), self.cfg.synth.seed),
        ])
    }

    fn record(
        &self,
        name: &str,
        args: &[(&str, String)],
        inputs: &[PathBuf],
        outputs: &[PathBuf],
    ) -> Result<()> {
        let base = &self.cfg.work_dir;
        let m = RunManifest {
            command: name.split('_').next().unwrap_or(name).to_string(),
            args: args
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
            config_path: self.config_path.display().to_string(),
            config_sha256: sha256_file(&self.config_path)?,
            config_effective: self.cfg.echo(),
            seeds: self.seeds(),
            inputs: digest_paths(inputs, base)?,
            outputs: digest_paths(outputs, base)?,
        };
        write_json(&self.work(&format!("runs/{name}.json")), &m)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, stage: &str) -> Result<T> {
    require(path, stage)?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

fn require(path: &Path, stage: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::StageDependency {
            path: path.to_path_buf(),
            stage: stage.into(),
        })
    }
}

fn read_windows(path: &Path, stage: &str) -> Result<WindowedDataset> {
    require(path, stage)?;
    read_windowed_csv(path)
}

fn with_sidecar(path: &Path) -> Vec<PathBuf> {
    vec![path.to_path_buf(), schema_sidecar(path)]
}

pub fn synth(ctx: &Ctx) -> Result<()> {
    let features = ctx.cfg.features_dir()?.to_path_buf();
    let labels = ctx.cfg.labels_dir()?.to_path_buf();
    for split in SPLITS {
        ctx.claim(&features.join(split))?;
        ctx.claim(&labels.join(split))?;
    }
    let spec = ctx.cfg.synthetic_spec()?;
    let corpus = generate(&spec)?;
    write_corpus(&corpus, &features, &labels)?;
    let (mut neutral, mut total) = (0usize, 0usize);
    for v in corpus.train.iter().chain(&corpus.valid) {
        if let Some(affect_core::data::LabelTrack::Class(c)) = v.seq.labels.get(&Task::Expression) {
            total += c.len();
            neutral += c.iter().filter(|&&x| x == Some(0)).count();
        }
    }
    println!(
        "synth train_videos={} valid_videos={} frames_per_video={} neutral_fraction={:.4}",
        corpus.train.len(),
        corpus.valid.len(),
        corpus.train.first().map_or(0, |v| v.seq.frame_count()),
        neutral as f64 / total.max(1) as f64
    );
    let outputs: Vec<PathBuf> = SPLITS
        .iter()
        .flat_map(|s| [features.join(s), labels.join(s)])
        .collect();
    ctx.record("synth", &[], &[], &outputs)
}

fn splits_of(features: &Path) -> Result<Vec<String>> {
    require(features, "synth")?;
    let mut splits = Vec::new();
    for entry in fs::read_dir(features).map_err(|e| Error::io(features, e))? {
        let entry = entry.map_err(|e| Error::io(features, e))?;
        if entry.path().is_dir() {
            splits.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    splits.sort();
    if !splits.iter().any(|s| s == "train") {
        return Err(Error::StageDependency {
            path: features.join("train"),
            stage: "synth".into(),
        });
    }
    Ok(splits)
}

fn window_path(ctx: &Ctx, split: &str, set: &str) -> PathBuf {
    ctx.work(&format!("windows/{split}_{set}.csv"))
}

pub fn extract(ctx: &Ctx) -> Result<()> {
    let features = ctx.cfg.features_dir()?.to_path_buf();
    let labels = ctx.cfg.labels_dir()?.to_path_buf();
    let schema = ctx.cfg.feature_schema()?;
    let wcfg = ctx.cfg.window_config()?;
    let splits = splits_of(&features)?;
    let pre_path = ctx.work("preprocess.json");
    ctx.claim(&pre_path)?;
    ctx.claim(&ctx.work("windows"))?;

    let load = |split: &str| load_split(&features, &labels, split, &schema, ctx.cfg.fps);
    let train = load("train")?;
    let pre = fit_preprocess(&train, &ctx.cfg.pca_dims())?;
    for (g, m) in &pre.pca {
        let kept: f64 = m.explained_ratio().iter().sum();
        println!(
            "pca group={g} dims={}->{} explained={kept:.4}",
            m.input_dim(),
            m.output_dim()
        );
    }
    write_json(&pre_path, &pre)?;

    let mut outputs = vec![pre_path];
    for split in &splits {
        let raw = if split == "train" {
            train.clone()
        } else {
            load(split)?
        };
        let seqs = raw
            .iter()
            .map(|s| apply_preprocess(s, &pre))
            .collect::<Result<Vec<FrameSequence>>>()?;
        for (set, tasks) in task_sets(&ctx.cfg.tasks) {
            let labelled: Vec<FrameSequence> = seqs
                .iter()
                .filter(|s| tasks.iter().all(|t| s.labels.contains_key(t)))
                .cloned()
                .collect();
            if labelled.is_empty() {
                log::warn!("split {split} has no videos labelled for {set}; skipped");
                continue;
            }
            let ds = extract_all(&labelled, &wcfg, &tasks)?;
            let path = window_path(ctx, split, set);
            ensure_parent(&path)?;
            write_windowed_csv(&ds, &path)?;
            println!(
                "windows split={split} set={set} videos={} samples={} features={}",
                labelled.len(),
                ds.len(),
                ds.schema.feature_len()
            );
            outputs.extend(with_sidecar(&path));
        }
    }
    ctx.record("extract", &[], &[features, labels], &outputs)
}

fn balanced_path(ctx: &Ctx, set: &str) -> PathBuf {
    ctx.work(&format!("balanced/train_{set}.csv"))
}

fn balancing_enabled(cfg: &PipelineConfig, set: &str) -> bool {
    match set {
        VA_SET => cfg.balance_va,
        EXPR_SET => cfg.balance_expression,
        _ => false,
    }
}

fn print_report(set: &str, r: &BalanceReport) {
    let before: usize = r.before.values().sum();
    let after: usize = r.after.values().sum();
    println!("balance set={set} before={before} after={after}");
    for (bucket, n) in &r.before {
        println!(
            "balance set={set} bucket={bucket} before={n} after={}",
            r.after.get(bucket).copied().unwrap_or(0)
        );
    }
}

pub fn balance(ctx: &Ctx) -> Result<()> {
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for (set, _) in task_sets(&ctx.cfg.tasks) {
        if !balancing_enabled(&ctx.cfg, set) {
            println!("balance set={set} disabled");
            continue;
        }
        let input = window_path(ctx, "train", set);
        let ds = read_windows(&input, "extract")?;
        let (out, report) = if set == VA_SET {
            balance_va(&ds, &ctx.cfg.va_grid()?, ctx.cfg.balance_seed)?
        } else {
            balance_expression(&ds, ctx.cfg.balance_seed)?
        };
        let path = balanced_path(ctx, set);
        let report_path = path.with_extension("report.json");
        ctx.claim(&path)?;
        ctx.claim(&report_path)?;
        ensure_parent(&path)?;
        write_windowed_csv(&out, &path)?;
        write_json(&report_path, &report)?;
        print_report(set, &report);
        inputs.extend(with_sidecar(&input));
        outputs.extend(with_sidecar(&path));
        outputs.push(report_path);
    }
    ctx.record("balance", &[], &inputs, &outputs)
}

fn training_set(ctx: &Ctx, set: &str) -> Result<(PathBuf, WindowedDataset)> {
    let path = if balancing_enabled(&ctx.cfg, set) {
        balanced_path(ctx, set)
    } else {
        window_path(ctx, "train", set)
    };
    let stage = if balancing_enabled(&ctx.cfg, set) {
        "balance"
    } else {
        "extract"
    };
    let ds = read_windows(&path, stage)?;
    Ok((path, ds))
}

pub fn train(ctx: &Ctx, stage: TrainStage) -> Result<()> {
    let bundle_dir = ctx.work("bundle");
    let pre_path = ctx.work("preprocess.json");
    let preprocess: Preprocess = read_json(&pre_path, "extract")?;
    let mut inputs = vec![pre_path];
    let mut sets = Vec::new();
    for (set, tasks) in task_sets(&ctx.cfg.tasks) {
        let (path, ds) = training_set(ctx, set)?;
        inputs.extend(with_sidecar(&path));
        sets.push((tasks, ds));
    }
    ctx.claim(&bundle_dir)?;

    let data: Vec<(Task, &WindowedDataset)> = ctx
        .cfg
        .tasks
        .iter()
        .map(|&t| {
            let ds = sets.iter().find(|(ts, _)| ts.contains(&t)).map(|(_, d)| d);
            (t, ds.expect("every configured task has a set"))
        })
        .collect();
    let stack = ctx.cfg.stack_config();
    let training = train_stack(&data, stage, &stack, ctx.cfg.k_folds, ctx.cfg.fold_seed)?;

    let mut schema = sets[0].1.schema.clone();
    schema.tasks = ctx.cfg.tasks.clone();
    let bundle = Bundle {
        manifest: BundleManifest {
            format_version: 1,
            stage: stage.as_str().to_string(),
            schema,
            fold_plan: training.plan.clone(),
            stack,
            seeds: ctx.seeds(),
            tasks: Vec::new(),
        },
        preprocess: Some(preprocess),
        tasks: training.models(),
    };
    save_bundle(&bundle_dir, &bundle)?;
    for t in &training.tasks {
        println!(
            "trained task={} stage={stage} terms={} multi_term={} fusion={}",
            t.task,
            t.terms.len(),
            t.multi_term.is_some(),
            t.fusion.is_some()
        );
    }
    ctx.record(
        "train",
        &[("stage", stage.as_str().to_string())],
        &inputs,
        &[bundle_dir],
    )
}

fn predictions_path(ctx: &Ctx, split: &str) -> PathBuf {
    ctx.work(&format!("predictions_{split}.csv"))
}

pub fn predict(ctx: &Ctx, split: &str) -> Result<()> {
    let bundle_dir = ctx.work("bundle");
    let bundle = load_bundle(&bundle_dir)?;
    let pre_path = ctx.work("preprocess.json");
    let pre: Preprocess = read_json(&pre_path, "extract")?;
    if bundle.preprocess.as_ref() != Some(&pre) {
        return Err(Error::Manifest(
            "windows were extracted with different preprocessing than the bundle was trained on; rerun extract and train"
                .into(),
        ));
    }
    let bundled: Vec<Task> = bundle.tasks.iter().map(|t| t.task).collect();
    let out = predictions_path(ctx, split);
    ctx.claim(&out)?;
    let mut inputs = vec![bundle_dir, pre_path];
    let mut parts: Vec<Predictions> = Vec::new();
    for (set, tasks) in task_sets(&bundled) {
        let path = window_path(ctx, split, set);
        let ds = read_windows(&path, "extract")?;
        parts.push(predict_models(&bundle.tasks, &tasks, &ds)?);
        inputs.extend(with_sidecar(&path));
    }
    let p = Predictions::concat(parts)?;
    ensure_parent(&out)?;
    write_predictions(&p, &out)?;
    println!(
        "predict split={split} samples={} columns={}",
        p.len(),
        p.columns.len()
    );
    ctx.record(
        &format!("predict_{split}"),
        &[("split", split.into())],
        &inputs,
        &[out],
    )
}

#[derive(Serialize)]
struct EvalFile {
    report: affect_core::metrics::EvalReport,
    components: Vec<affect_core::pipeline::ComponentScore>,
}

pub fn evaluate(ctx: &Ctx, split: &str) -> Result<()> {
    let input = predictions_path(ctx, split);
    require(&input, "predict")?;
    let out = ctx.work(&format!("eval_{split}.json"));
    ctx.claim(&out)?;
    let p = read_predictions(&input)?;
    let (report, components) = score_predictions(&p)?;
    print!("{}", report.to_key_values());
    for c in &components {
        println!(
            "component column={} metric={} value={:.9}",
            c.column, c.metric, c.value
        );
    }
    write_json(&out, &EvalFile { report, components })?;
    ctx.record(
        &format!("evaluate_{split}"),
        &[("split", split.into())],
        &[input],
        &[out],
    )
}

/// Short-term features of every group side by side.
fn short_term_matrix(ds: &WindowedDataset) -> Result<Matrix> {
    let blocks: Vec<Matrix> = (0..ds.schema.groups.len())
        .map(|g| ds.block_matrix(0, g))
        .collect();
    Matrix::hstack(&blocks.iter().collect::<Vec<_>>())
}

pub fn gridsearch(ctx: &Ctx, split: &str) -> Result<()> {
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for (set, tasks) in task_sets(&ctx.cfg.tasks) {
        let train_path = window_path(ctx, "train", set);
        let valid_path = window_path(ctx, split, set);
        let train = read_windows(&train_path, "extract")?;
        let valid = read_windows(&valid_path, "extract")?;
        inputs.extend(with_sidecar(&train_path));
        inputs.extend(with_sidecar(&valid_path));
        let (xt, xv) = (short_term_matrix(&train)?, short_term_matrix(&valid)?);
        for task in tasks {
            let out = ctx.work(&format!("gridsearch_{task}.csv"));
            ctx.claim(&out)?;
            let (yt, yv) = (train.short_labels(task)?, valid.short_labels(task)?);
            let objective = if task.is_classification() {
                Objective::Multiclass
            } else {
                Objective::Regression
            };
            let result = grid_search(
                &ctx.cfg.grid,
                &ctx.cfg.learner,
                objective,
                Labeled::new(&xt, &yt)?,
                Labeled::new(&xv, &yv)?,
            )?;
            let mut text = String::from(
                "num_leaves,learning_rate,max_depth,min_child_samples,score,best_iteration\n",
            );
            for c in &result.cells {
                let p = &c.params;
                text.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    p.num_leaves,
                    p.learning_rate,
                    p.max_depth,
                    p.min_child_samples,
                    affect_core::fmt::sig9(c.score),
                    c.best_iteration
                ));
            }
            ensure_parent(&out)?;
            fs::write(&out, text).map_err(|e| Error::io(&out, e))?;
            let b = &result.best;
            println!(
                "gridsearch task={task} cells={} best_score={:.9} num_leaves={} learning_rate={} max_depth={} min_child_samples={}",
                result.cells.len(),
                result.best_score,
                b.num_leaves,
                b.learning_rate,
                b.max_depth,
                b.min_child_samples
            );
            outputs.push(out);
        }
    }
    ctx.record(
        &format!("gridsearch_{split}"),
        &[("split", split.into())],
        &inputs,
        &outputs,
    )
}
