//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria can be selected by number (`cargo test --test acceptance -- 3 7`).
//! Criterion 9 needs raw IEM ASOS files under `DEEPHETERO_IOWA_RAW` and
//! never fails the run.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use deephetero::autodiff::Tensor;
use deephetero::data::{
    bsmote_oversample, build_iowa_asos, prepare, stratified_split, synth_benchmark, AugmentConfig, Dataset,
    IowaConfig, PipelineConfig, Provenance, SmoteConfig, SplitSpec,
};
use deephetero::data::iowa::raw_files;
use deephetero::data::smote::PointKind;
use deephetero::gradsuite::{check_layer, LayerKind};
use deephetero::model::{DeepHeteroIoT, ModelConfig, Variant, POOL_AFTER};
use deephetero::nn::{Mode, ReturnMode, Session};
use deephetero::train::{evaluate, run_ablation, train, write_history, EvalReport, TrainConfig, WEIGHTS_FILE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for kind in LayerKind::ALL.into_iter().filter(|&k| k != LayerKind::Model) {
        let c = check_layer(kind, 20, 1e-4, 1).map_err(err)?;
        ensure(c.instances >= 20, || format!("{kind}: only {} instances", c.instances))?;
        ensure(c.passed(), || {
            format!("{kind}: max rel error {:.3e} ({:?})", c.report.max_rel_error, c.report.failures.first())
        })?;
        worst = worst.max(c.report.max_rel_error);
        checked += c.report.checked;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!("9 layer kinds × 20 instances, {checked} entries, max rel error {worst:.2e}, {elapsed:.1?}"))
}

fn conv_params(k: usize, cin: usize, cout: usize) -> usize {
    k * cin * cout + cout
}

fn gru_params(input: usize, d: usize) -> usize {
    3 * (input * d + d * d + d)
}

/// Per-layer count for the full-width architecture, written out by hand.
fn param_oracle(variant: Variant, t: usize, classes: usize) -> usize {
    let mut n = 0;
    let mut features = 0;
    if variant.has_local() {
        for k in [3, 5, 7, 11] {
            let widths = [1, 128, 128, 128, 64, 64, 64, 64, 64, 64];
            n += widths.windows(2).map(|w| conv_params(k, w[0], w[1])).sum::<usize>();
            features += 64;
        }
    }
    if variant.has_global() {
        let mut input = 1;
        for d in [128, 64, 64] {
            n += 2 * gru_params(input, d) + 2 * (2 * d);
            input = 2 * d;
        }
        features += 128;
    }
    if variant == Variant::MlpOnly {
        features = t;
    }
    let mut input = features;
    for w in [1024, 512, 256, 64] {
        n += input * w + w + 2 * w;
        input = w;
    }
    n + input * classes + classes
}

fn c2_architecture() -> Outcome {
    let m = DeepHeteroIoT::new(ModelConfig::new(Variant::Full, 168, 8)).map_err(err)?;
    ensure(m.blocks.len() == 4, || format!("{} conv blocks", m.blocks.len()))?;
    for (b, k) in m.blocks.iter().zip([3, 5, 7, 11]) {
        let filters: Vec<usize> = b.layers.iter().map(|c| c.out_channels).collect();
        ensure(filters == [128, 128, 128, 64, 64, 64, 64, 64, 64], || format!("block k{k} filters {filters:?}"))?;
        ensure(b.kernel == k && b.layers.iter().all(|c| c.kernel == k), || format!("block k{k} kernels"))?;
        ensure(b.output_dim() == 64, || format!("block k{k} width {}", b.output_dim()))?;
    }
    ensure(POOL_AFTER == [3, 6], || format!("pools after {POOL_AFTER:?}"))?;
    let g = m.gru.as_ref().ok_or("no GRU stack")?;
    let dims: Vec<usize> = g.layers.iter().map(|(l, _)| l.forward_cell.hidden).collect();
    ensure(dims == [128, 64, 64], || format!("GRU dims {dims:?}"))?;
    for (i, (l, bn)) in g.layers.iter().enumerate() {
        ensure(bn.channels == 2 * l.forward_cell.hidden, || format!("bn{} width {}", i + 1, bn.channels))?;
        let want = if i + 1 == g.layers.len() { ReturnMode::Final } else { ReturnMode::Sequence };
        ensure(l.mode == want, || format!("gru{} returns {:?}", i + 1, l.mode))?;
    }
    let widths: Vec<usize> = m.head.hidden.iter().map(|(d, _)| d.outputs).collect();
    ensure(widths == [1024, 512, 256, 64], || format!("MLP widths {widths:?}"))?;
    ensure(m.head.hidden.iter().all(|(d, ln)| ln.features == d.outputs), || "layer norm widths".into())?;
    ensure(m.head.hidden[0].0.inputs == 384, || format!("head input {}", m.head.hidden[0].0.inputs))?;

    let x = Tensor::new([2, 1, 168], (0..336).map(|i| (i as f64 * 0.37).sin()).collect()).map_err(err)?;
    let mut s = Session::new(&m.store, Mode::Infer);
    let xv = s.input(x);
    let f = m.features(&mut s, xv).map_err(err)?;
    ensure(s.graph.shape(f) == [2, 384], || format!("concat shape {:?}", s.graph.shape(f)))?;

    let mut counts = Vec::new();
    for v in Variant::ALL {
        let mv = DeepHeteroIoT::new(ModelConfig::new(v, 168, 8)).map_err(err)?;
        let want = param_oracle(v, 168, 8);
        let got = mv.store.num_trainable();
        ensure(got == want && mv.num_params() == want, || format!("{v}: {got} parameters, oracle {want}"))?;
        counts.push(format!("{v} {got}"));
    }
    Ok(format!("structure matches; parameters {}", counts.join(", ")))
}

fn c3_overfit() -> Outcome {
    let start = Instant::now();
    let data = synth_benchmark(4, 15, 64, 3).map_err(err)?;
    let mut m = DeepHeteroIoT::new(ModelConfig::new(Variant::Full, 64, 4).scaled(4).with_seed(5)).map_err(err)?;
    let cfg = TrainConfig { epochs: 200, lr: 1e-3, ..Default::default() };
    let out = train(&mut m, &data, &data, &cfg).map_err(err)?;
    let elapsed = start.elapsed();
    let hit = out.history.iter().find(|h| h.val_acc == 1.0).map(|h| h.epoch);
    let acc = evaluate(&m, &data).map_err(err)?.accuracy;
    let (first, last) = (out.history[0].train_loss, out.history.last().unwrap().train_loss);
    ensure(acc == 1.0, || format!("train accuracy {acc:.4} after 200 epochs"))?;
    ensure(last < first, || format!("train loss {first:.4} → {last:.4}"))?;
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "100% train accuracy first at epoch {}, loss {first:.3} → {last:.4}, {elapsed:.1?}",
        hit.map_or(0, |e| e + 1)
    ))
}

fn c4_synthetic() -> Outcome {
    let data = synth_benchmark(8, 125, 168, 7).map_err(err)?;
    let prepared = prepare(&data, &PipelineConfig::default()).map_err(err)?;
    let base = ModelConfig::new(Variant::Full, 168, 8).scaled(4).with_seed(1);
    let cfg = TrainConfig { epochs: 30, ..Default::default() };
    let table = run_ablation("Synthetic", &prepared, &base, &cfg, &Variant::ALL).map_err(err)?;
    print!("{}", table.to_text());
    let acc = |v| table.row(v).map(|r| r.report.accuracy).unwrap_or(0.0);
    let (full, mlp) = (acc(Variant::Full), acc(Variant::MlpOnly));
    let summary = format!(
        "full {:.2}%, mlp-only {:.2}%, global-only {:.2}%, local-only {:.2}%",
        100.0 * full,
        100.0 * mlp,
        100.0 * acc(Variant::GlobalOnly),
        100.0 * acc(Variant::LocalOnly)
    );
    ensure(full >= 0.90, || format!("full below 90%: {summary}"))?;
    ensure(full - mlp >= 0.05, || format!("full leads mlp-only by < 5 points: {summary}"))?;
    Ok(summary)
}

/// Four classes of 78/40/20/14 with overlapping clouds, so that every
/// minority class has SAFE, DANGER and NOISE members.
fn swiss_fixture() -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::new();
    for (c, (n, centre)) in [(78, 0.0), (40, 1.2), (20, 2.4), (14, 1.8)].into_iter().enumerate() {
        for i in 0..n {
            let v: Vec<f64> = (0..12).map(|_| centre + noise.sample(&mut rng) + rng.random_range(-0.2..0.2)).collect();
            rows.push((format!("c{c}-{i}"), format!("class{c}"), v));
        }
    }
    Dataset::from_rows(rows, Provenance::new("swiss-like fixture")).unwrap()
}

fn c5_bsmote() -> Outcome {
    let train = swiss_fixture();
    let (out, report) = bsmote_oversample(&train, &SmoteConfig::default()).map_err(err)?;
    let counts = out.class_counts();
    ensure(counts.iter().all(|&c| c == 78), || format!("post counts {counts:?}"))?;
    ensure(out.len() == train.len() + report.synthetic.len(), || "synthetic count".into())?;
    let noise: Vec<usize> = (0..train.len()).filter(|&i| report.kinds[i] == Some(PointKind::Noise)).collect();
    let danger = report.kinds.iter().filter(|k| **k == Some(PointKind::Danger)).count();
    ensure(!noise.is_empty() && danger > 0, || format!("fixture has {} noise, {danger} danger", noise.len()))?;
    for s in &report.synthetic {
        ensure(!noise.contains(&s.seed) && !noise.contains(&s.partner), || format!("noise parent in {s:?}"))?;
        let (p, q, x) = (train.sequence(s.seed), train.sequence(s.partner), out.sequence(s.index));
        ensure(out.labels()[s.index] == train.labels()[s.seed], || format!("label of {s:?}"))?;
        ensure(train.labels()[s.partner] == train.labels()[s.seed], || format!("cross-class partner {s:?}"))?;
        let inside = p.iter().zip(q).zip(x).all(|((a, b), v)| a.min(*b) <= *v && *v <= a.max(*b));
        ensure(inside, || format!("{s:?} leaves its parents' range"))?;
    }
    Ok(format!(
        "counts {:?} → {counts:?}, {} synthetics, {} noise never parents",
        train.class_counts(),
        report.synthetic.len(),
        noise.len()
    ))
}

fn c6_metrics() -> Outcome {
    let names: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
    let truth = [0, 0, 0, 1, 1, 1, 2, 2, 2, 2];
    let pred = [0, 0, 1, 1, 1, 2, 2, 2, 0, 2];
    let r = EvalReport::from_predictions(&truth, &pred, &names).map_err(err)?;
    // per class F1: 2/3, 2/3, 3/4; supports 3, 3, 4
    ensure(r.confusion == vec![vec![2, 1, 0], vec![0, 2, 1], vec![1, 0, 3]], || format!("{:?}", r.confusion))?;
    ensure(r.accuracy == 0.7, || format!("accuracy {:?}", r.accuracy))?;
    ensure(r.weighted_f1 == 0.7, || format!("weighted F1 {:?}", r.weighted_f1))?;
    let macro_f1 = (2.0 / 3.0 + 2.0 / 3.0 + 3.0 / 4.0) / 3.0;
    ensure(r.macro_f1 == macro_f1, || format!("macro F1 {:?}", r.macro_f1))?;
    ensure((r.macro_f1 - 25.0 / 36.0).abs() <= f64::EPSILON, || format!("macro F1 {:?}", r.macro_f1))?;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let l = rng.random_range(2..7);
        let per = rng.random_range(1..20);
        let truth: Vec<usize> = (0..l * per).map(|i| i % l).collect();
        let pred: Vec<usize> = truth.iter().map(|_| rng.random_range(0..l)).collect();
        let names: Vec<String> = (0..l).map(|c| c.to_string()).collect();
        let r = EvalReport::from_predictions(&truth, &pred, &names).map_err(err)?;
        ensure((r.weighted_f1 - r.macro_f1).abs() <= 1e-12, || {
            format!("balanced fixture: weighted {} vs macro {}", r.weighted_f1, r.macro_f1)
        })?;
    }
    Ok("10-sample fixture exact; weighted = macro F1 on 200 balanced fixtures".into())
}

fn c7_split() -> Outcome {
    let data = synth_benchmark(8, 125, 32, 9).map_err(err)?;
    let split_spec = SplitSpec::default();
    ensure(split_spec.seed == 100 && split_spec.train_fraction == 0.7, || format!("{split_spec:?}"))?;
    let a = stratified_split(&data, &split_spec).map_err(err)?;
    let b = stratified_split(&data, &split_spec).map_err(err)?;
    ensure(a == b, || "split differs between identical calls".into())?;
    ensure(a.train.len() == 700 && a.test.len() == 300, || format!("{}/{}", a.train.len(), a.test.len()))?;
    let per_class = data.select(&a.train).class_counts();
    ensure(per_class.iter().all(|&c| c == 87 || c == 88), || format!("train per class {per_class:?}"))?;

    let mut hashes = Vec::new();
    for (aug, smote) in [(false, false), (true, false), (false, true), (true, true)] {
        let cfg = PipelineConfig {
            augment: aug.then(AugmentConfig::default),
            smote: smote.then(SmoteConfig::default),
            ..Default::default()
        };
        let p = prepare(&data, &cfg).map_err(err)?;
        ensure(p.test.content_hash() == p.test_hash, || "stored test hash is stale".into())?;
        hashes.push(p.test_hash);
    }
    ensure(hashes.windows(2).all(|w| w[0] == w[1]), || format!("test hashes {hashes:?}"))?;
    Ok(format!("700/300, train per class {per_class:?}, test hash {}", &hashes[0][..12]))
}

fn c8_determinism() -> Outcome {
    let data = synth_benchmark(4, 20, 32, 4).map_err(err)?;
    let cfg = TrainConfig { epochs: 4, batch_size: 16, ..Default::default() };
    let prepared = prepare(&data, &cfg.data).map_err(err)?;
    let dir = tempfile::tempdir().map_err(err)?;
    let mut artifacts = Vec::new();
    for run in 0..2 {
        let mc = ModelConfig::new(Variant::Full, 32, 4).scaled(8).with_seed(21);
        let mut m = DeepHeteroIoT::new(mc.clone()).map_err(err)?;
        let out = train(&mut m, &prepared.train, &prepared.val, &cfg).map_err(err)?;
        let mut csv = Vec::new();
        write_history(&out.history, &mut csv).map_err(err)?;
        let d = dir.path().join(format!("run{run}"));
        out.checkpoint.save(&d, &mc).map_err(err)?;
        let weights = std::fs::read(d.join(WEIGHTS_FILE)).map_err(err)?;
        artifacts.push((csv, weights));
    }
    ensure(artifacts[0].0 == artifacts[1].0, || "history CSVs differ".into())?;
    ensure(artifacts[0].1 == artifacts[1].1, || "checkpoint weights differ".into())?;
    Ok(format!(
        "history {} bytes and weights {} bytes identical across two runs",
        artifacts[0].0.len(),
        artifacts[0].1.len()
    ))
}

fn c9_iowa() -> Option<Outcome> {
    let dir = PathBuf::from(std::env::var_os("DEEPHETERO_IOWA_RAW")?);
    let epochs = std::env::var("DEEPHETERO_IOWA_EPOCHS").ok().and_then(|s| s.parse().ok()).unwrap_or(30);
    let run = || -> Outcome {
        let files = raw_files(&dir).map_err(err)?;
        let (data, rep) = build_iowa_asos(&files, &IowaConfig::default()).map_err(err)?;
        let footprint = format!(
            "t={}, {} labels, {} samples from {} stations",
            data.seq_len(),
            data.num_classes(),
            data.len(),
            rep.stations.len()
        );
        let prepared = prepare(&data, &PipelineConfig::default()).map_err(err)?;
        let mc = ModelConfig::new(Variant::Full, data.seq_len(), data.num_classes()).scaled(4).with_seed(1);
        let mut m = DeepHeteroIoT::new(mc).map_err(err)?;
        let cfg = TrainConfig { epochs, ..Default::default() };
        train(&mut m, &prepared.train, &prepared.val, &cfg).map_err(err)?;
        let r = evaluate(&m, &prepared.test).map_err(err)?;
        let near = (100.0 * r.accuracy - 96.01).abs() <= 3.0 && (100.0 * r.weighted_f1 - 95.93).abs() <= 3.0;
        Ok(format!(
            "{footprint}; accuracy {:.2}% / F1 {:.2}% vs reference 96.01% / 95.93% ({} ±3 points)",
            100.0 * r.accuracy,
            100.0 * r.weighted_f1,
            if near { "within" } else { "outside" }
        ))
    };
    Some(run())
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let gating: [(usize, &str, fn() -> Outcome); 8] = [
        (1, "gradient suite", c1_gradients),
        (2, "architecture conformance", c2_architecture),
        (3, "overfit fixture", c3_overfit),
        (4, "synthetic separability", c4_synthetic),
        (5, "borderline SMOTE", c5_bsmote),
        (6, "metrics oracle", c6_metrics),
        (7, "split contract", c7_split),
        (8, "determinism", c8_determinism),
    ];
    let mut failed = 0;
    for (n, name, f) in gating {
        if !wanted(n) {
            continue;
        }
        match f() {
            Ok(msg) => println!("criterion {n} ({name}): PASS  {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL  {msg}");
            }
        }
    }
    if wanted(9) {
        match c9_iowa() {
            None => println!("criterion 9 (IOWA ASOS rebuild, non-gating): SKIP  DEEPHETERO_IOWA_RAW not set"),
            Some(Ok(msg)) => println!("criterion 9 (IOWA ASOS rebuild, non-gating): PASS  {msg}"),
            Some(Err(msg)) => println!("criterion 9 (IOWA ASOS rebuild, non-gating): FAIL  {msg}"),
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
