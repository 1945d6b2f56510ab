use std::path::{Path, PathBuf};

use deephetero::data::iowa::raw_files;
use deephetero::data::{
    build_iowa_asos, impute_mean, load_csv, load_dataset, load_ragged_csv, prepare, save_dataset_dir,
    synth_benchmark, truncate_to_min, Dataset, IowaConfig, Provenance, Validation,
};
use deephetero::gradsuite::{check_layer, default_tol, LayerKind};
use deephetero::train::{
    evaluate as eval_model, run_ablation, save_history, train as train_model, Checkpoint, EvalReport,
};
use deephetero::{DeepHeteroIoT, ModelConfig, TrainConfig, Variant};
use serde::Serialize;

use crate::config::{self, AblateRun, EvaluateRun, GradcheckRun, IngestRun, Source, TrainRun};
use crate::{AblateArgs, EvaluateArgs, Failure, GradcheckArgs, IngestArgs, TrainArgs, TrainOptions};

const CHECKPOINT_DIR: &str = "checkpoint";

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::config(e.to_string()))?;
    write(path, &(text + "\n"))
}

pub fn ingest(a: IngestArgs, root: &Path) -> Result<(), Failure> {
    let mut run: IngestRun = match &a.config {
        Some(p) => config::load(p)?,
        None => {
            let source = if a.synth {
                Source::Synth {
                    classes: a.classes.unwrap_or(8),
                    per_class: a.per_class.unwrap_or(125),
                    len: a.len.unwrap_or(168),
                    seed: a.seed.unwrap_or(7),
                }
            } else if a.iowa {
                let d = IowaConfig::default();
                Source::Iowa {
                    raw: a.raw.clone().unwrap_or_default(),
                    window: a.window.unwrap_or(d.window),
                    max_missing: a.max_missing.unwrap_or(d.max_missing),
                }
            } else {
                Source::Csv {
                    path: a.csv.clone().unwrap_or_default(),
                    truncate: a.truncate,
                }
            };
            let name = match &source {
                Source::Synth { .. } => "synth".to_owned(),
                Source::Iowa { .. } => "iowa".to_owned(),
                Source::Csv { path, .. } => {
                    path.file_stem().map_or("csv".into(), |s| s.to_string_lossy().into_owned())
                }
            };
            IngestRun { source, output: root.join(name) }
        }
    };
    if let Some(out) = a.out {
        run.output = out;
    }
    config::echo(&run, &run.output)?;

    let ds = match &run.source {
        &Source::Synth { classes, per_class, len, seed } => synth_benchmark(classes, per_class, len, seed)?,
        Source::Iowa { raw, window, max_missing } => {
            let cfg = IowaConfig { window: *window, max_missing: *max_missing };
            let (ds, report) = build_iowa_asos(&raw_files(raw)?, &cfg)?;
            log::info!(
                "{} files, {} stations, {} windows kept, {} dropped",
                report.files,
                report.stations.len(),
                report.windows_kept,
                report.windows_dropped
            );
            ds
        }
        Source::Csv { path, truncate: true } => {
            let rows = truncate_to_min(load_ragged_csv(path)?);
            let prov = Provenance::new("csv").with("path", path).with("truncated", true);
            Dataset::from_rows(rows.into_iter().map(|r| (r.id, r.label, r.values)), prov)?
        }
        Source::Csv { path, truncate: false } => {
            let mut ds = load_csv(path)?;
            ds.provenance = Provenance::new("csv").with("path", path);
            ds
        }
    };
    ds.check_classes_populated()?;
    let m = save_dataset_dir(&ds, &run.output)?;
    println!(
        "{}: {} samples, t={}, {} classes, {} missing, hash {}",
        run.output.display(),
        m.samples,
        m.seq_len,
        m.num_classes,
        m.missing,
        m.content_hash
    );
    Ok(())
}

fn load(path: &Path) -> Result<Dataset, Failure> {
    Ok(load_dataset(path)?.0)
}

/// Applies command-line overrides on top of a loaded or default setup.
fn apply(opts: &TrainOptions, model: &mut ModelConfig, train: &mut TrainConfig) {
    if let Some(s) = opts.seed {
        train.seed = s;
        train.data.split.seed = s;
        model.seed = s;
        if let Some(a) = train.data.augment.as_mut() {
            a.seed = s;
        }
        if let Some(sm) = train.data.smote.as_mut() {
            sm.seed = s;
        }
    }
    if let Some(e) = opts.epochs {
        train.epochs = e;
    }
    if let Some(lr) = opts.lr {
        train.lr = lr;
    }
    if let Some(b) = opts.batch_size {
        train.batch_size = b;
    }
    if let Some(d) = opts.scale {
        *model = model.clone().scaled(d);
    }
    if opts.swiss_preset {
        *train = train.clone().swiss_preset();
    }
    if opts.validate_on_test {
        train.data.validation = Validation::Test;
    }
    if let Some(f) = opts.val_fraction {
        train.data.validation = Validation::Fraction(f);
    }
    train.data.leak_free_impute |= opts.leak_free_impute;
    train.data.zscore |= opts.zscore;
}

/// Dataset, model and training configuration from `--config` and flags.
fn resolve(
    opts: &TrainOptions,
    variant: Option<Variant>,
    base: Option<(PathBuf, ModelConfig, TrainConfig)>,
) -> Result<(Dataset, PathBuf, ModelConfig, TrainConfig), Failure> {
    let (path, mut model, mut train) = match base {
        Some((path, model, train)) => {
            let path = opts.dataset.clone().unwrap_or(path);
            (path, Some(model), train)
        }
        None => {
            let path = opts.dataset.clone().ok_or_else(|| Failure::config("--dataset or --config is required"))?;
            (path, None, TrainConfig::default())
        }
    };
    let ds = load(&path)?;
    let mut m = model.take().unwrap_or_else(|| {
        ModelConfig::new(variant.unwrap_or(Variant::Full), ds.seq_len(), ds.num_classes()).with_seed(train.seed)
    });
    if let Some(v) = variant {
        m.variant = v;
    }
    apply(opts, &mut m, &mut train);
    if m.input_len != ds.seq_len() || m.num_classes != ds.num_classes() {
        return Err(Failure::config(format!(
            "model expects t={} with {} classes but {} has t={} with {} classes",
            m.input_len,
            m.num_classes,
            path.display(),
            ds.seq_len(),
            ds.num_classes()
        )));
    }
    m.validate()?;
    train.validate()?;
    Ok((ds, path, m, train))
}

fn save_report(dir: &Path, report: &EvalReport) -> Result<(), Failure> {
    write(&dir.join("report.txt"), &report.to_text())?;
    write_json(&dir.join("report.json"), report)
}

pub fn train(a: TrainArgs, root: &Path) -> Result<(), Failure> {
    let loaded: Option<TrainRun> = a.opts.config.as_deref().map(config::load).transpose()?;
    let out = a.opts.out.clone().or_else(|| loaded.as_ref().map(|r| r.output.clone()));
    let (ds, dataset, model_cfg, train_cfg) =
        resolve(&a.opts, a.variant, loaded.map(|r| (r.dataset, r.model, r.train)))?;
    let output = out.unwrap_or_else(|| root.join(format!("train-{}", model_cfg.variant)));
    let run = TrainRun { dataset, output, model: model_cfg, train: train_cfg };
    config::echo(&run, &run.output)?;

    let data = prepare(&ds, &run.train.data)?;
    log::info!(
        "split: {} train, {} validation, {} test (test hash {})",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        data.test_hash
    );
    let mut model = DeepHeteroIoT::new(run.model.clone())?;
    log::info!("{} with {} parameters", run.model.variant, model.num_params());
    let outcome = train_model(&mut model, &data.train, &data.val, &run.train)?;
    outcome.checkpoint.save(&run.output.join(CHECKPOINT_DIR), &run.model)?;
    save_history(&outcome.history, &run.output.join("history.csv"))?;
    let report = eval_model(&model, &data.test)?;
    save_report(&run.output, &report)?;
    println!(
        "{}: best epoch {} (val acc {:.4}); test accuracy {:.4}, weighted F1 {:.4}, macro F1 {:.4}",
        run.model.variant,
        outcome.checkpoint.epoch + 1,
        outcome.checkpoint.val_acc,
        report.accuracy,
        report.weighted_f1,
        report.macro_f1
    );
    Ok(())
}

pub fn evaluate(a: EvaluateArgs, _root: &Path) -> Result<(), Failure> {
    let mut run: EvaluateRun = match &a.config {
        Some(p) => config::load(p)?,
        None => {
            let dir = a.run.clone().unwrap_or_default();
            EvaluateRun { output: dir.join("evaluation"), run: dir, dataset: None }
        }
    };
    if let Some(r) = a.run {
        run.run = r;
    }
    if a.dataset.is_some() {
        run.dataset = a.dataset;
    }
    if let Some(o) = a.out {
        run.output = o;
    }
    config::echo(&run, &run.output)?;

    let trained: TrainRun = config::load(&run.run.join(config::RESOLVED_CONFIG))?;
    let (_, model) = Checkpoint::load(&run.run.join(CHECKPOINT_DIR))?;
    let reference = load(&trained.dataset)?;
    let target = match &run.dataset {
        Some(p) => {
            let ds = load(p)?;
            if ds.missing_count() > 0 {
                impute_mean(&ds).0
            } else {
                ds
            }
        }
        None => prepare(&reference, &trained.train.data)?.test,
    };
    if target.seq_len() != reference.seq_len() || target.class_names() != reference.class_names() {
        return Err(Failure::config(format!(
            "evaluation data (t={}, classes {:?}) does not match the training data (t={}, classes {:?})",
            target.seq_len(),
            target.class_names(),
            reference.seq_len(),
            reference.class_names()
        )));
    }
    let report = eval_model(&model, &target)?;
    save_report(&run.output, &report)?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn ablate(a: AblateArgs, root: &Path) -> Result<(), Failure> {
    let loaded: Option<AblateRun> = a.opts.config.as_deref().map(config::load).transpose()?;
    let out = a.opts.out.clone().or_else(|| loaded.as_ref().map(|r| r.output.clone()));
    let (name, variants) = match &loaded {
        Some(r) => (r.name.clone(), r.variants.clone()),
        None => (String::new(), Variant::ALL.to_vec()),
    };
    let (ds, dataset, model, train) = resolve(&a.opts, None, loaded.map(|r| (r.dataset, r.model, r.train)))?;
    let name = a.name.unwrap_or(if name.is_empty() { dataset_label(&dataset) } else { name });
    let variants = if a.variants.is_empty() { variants } else { a.variants };
    let run = AblateRun {
        dataset,
        name,
        output: out.unwrap_or_else(|| root.join("ablate")),
        variants,
        model,
        train,
    };
    config::echo(&run, &run.output)?;

    let data = prepare(&ds, &run.train.data)?;
    let table = run_ablation(&run.name, &data, &run.model, &run.train, &run.variants)?;
    for row in &table.rows {
        log::info!("{}: test hash {}", row.variant, row.test_hash);
        save_history(&row.history, &run.output.join(format!("history-{}.csv", row.variant)))?;
    }
    let text = table.to_text();
    write(&run.output.join("ablation.txt"), &text)?;
    let path = run.output.join("ablation.csv");
    let f = std::fs::File::create(&path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    table.write_csv(f)?;
    write_json(&run.output.join("ablation.json"), &table)?;
    print!("{text}");
    Ok(())
}

fn dataset_label(path: &Path) -> String {
    let p = if path.extension().is_some() { path.parent().unwrap_or(path) } else { path };
    p.file_name().map_or("dataset".into(), |s| s.to_string_lossy().into_owned())
}

pub fn gradcheck(a: GradcheckArgs, root: &Path) -> Result<(), Failure> {
    let mut run: GradcheckRun = match &a.config {
        Some(p) => config::load(p)?,
        None => GradcheckRun {
            layers: Vec::new(),
            tol: None,
            instances: 20,
            seed: 1,
            output: root.join("gradcheck"),
        },
    };
    if !a.layers.is_empty() {
        run.layers = a.layers;
    }
    if a.tol.is_some() {
        run.tol = a.tol;
    }
    if let Some(n) = a.instances {
        run.instances = n;
    }
    if let Some(s) = a.seed {
        run.seed = s;
    }
    if let Some(o) = a.out {
        run.output = o;
    }
    let kinds: Vec<LayerKind> = if run.layers.is_empty() {
        LayerKind::ALL.to_vec()
    } else {
        run.layers.iter().map(|l| l.parse()).collect::<Result<_, _>>()?
    };
    run.layers = kinds.iter().map(|k| k.to_string()).collect();
    config::echo(&run, &run.output)?;

    let mut text = String::new();
    let mut failed = Vec::new();
    for kind in kinds {
        let tol = run.tol.unwrap_or_else(|| default_tol(kind));
        let c = check_layer(kind, run.instances, tol, run.seed)?;
        let status = if c.passed() { "PASS" } else { "FAIL" };
        let line = format!(
            "{:<11} {status}  tol {tol:.0e}  max rel error {:.3e}  {} entries over {} instances, {} failing\n",
            kind.as_str(),
            c.report.max_rel_error,
            c.report.checked,
            c.instances,
            c.report.failures.len()
        );
        print!("{line}");
        text += &line;
        if !c.passed() {
            failed.push(kind.to_string());
        }
    }
    write(&run.output.join("gradcheck.txt"), &text)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure { code: 4, message: format!("gradient check failed for {}", failed.join(", ")) })
    }
}
