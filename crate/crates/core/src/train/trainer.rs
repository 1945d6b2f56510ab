use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::EvalReport;
use crate::autodiff::{read_snapshot, write_snapshot, Adam, AdamConfig, ParamStore, Tensor};
use crate::data::{AugmentConfig, Dataset, PipelineConfig, SmoteConfig};
use crate::error::{Error, Result};
use crate::model::{DeepHeteroIoT, ModelConfig};
use crate::nn::{apply_updates, softmax_cross_entropy, Mode, Session};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
    pub data: PipelineConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 1e-3,
            batch_size: 32,
            seed: 100,
            data: PipelineConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Augmentation followed by B-SMOTE on the training split.
    pub fn swiss_preset(mut self) -> Self {
        self.data.augment = Some(AugmentConfig { seed: self.seed, ..Default::default() });
        self.data.smote = Some(SmoteConfig { seed: self.seed, ..Default::default() });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be finite and non-negative, got {}", self.lr)));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size must be at least 2 for batch norm"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// Best-validation weights.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub epoch: usize,
    pub val_acc: f64,
    pub val_loss: f64,
    pub params: ParamStore,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    epoch: usize,
    val_acc: f64,
    val_loss: f64,
    model: ModelConfig,
}

pub const WEIGHTS_FILE: &str = "weights.bin";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

impl Checkpoint {
    /// Writes `weights.bin` and `checkpoint.json` into `dir`.
    pub fn save(&self, dir: &Path, model: &ModelConfig) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let wp = dir.join(WEIGHTS_FILE);
        let f = std::fs::File::create(&wp).map_err(|e| Error::io(&wp, e))?;
        write_snapshot(&self.params, std::io::BufWriter::new(f))?;
        let meta = CheckpointMeta {
            epoch: self.epoch,
            val_acc: self.val_acc,
            val_loss: self.val_loss,
            model: model.clone(),
        };
        let mp = dir.join(CHECKPOINT_FILE);
        std::fs::write(&mp, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&mp, e))
    }

    /// Loads a checkpoint and rebuilds its model with the stored weights.
    pub fn load(dir: &Path) -> Result<(Self, DeepHeteroIoT)> {
        let mp = dir.join(CHECKPOINT_FILE);
        let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)?;
        let wp = dir.join(WEIGHTS_FILE);
        let f = std::fs::File::open(&wp).map_err(|e| Error::io(&wp, e))?;
        let params = read_snapshot(std::io::BufReader::new(f))?;
        let mut model = DeepHeteroIoT::new(meta.model)?;
        if params.len() != model.store.len() {
            return Err(Error::Snapshot(format!(
                "{} entries but the model has {}",
                params.len(),
                model.store.len()
            )));
        }
        model.store.load_values(&params)?;
        Ok((
            Self {
                epoch: meta.epoch,
                val_acc: meta.val_acc,
                val_loss: meta.val_loss,
                params,
            },
            model,
        ))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Splits `order` into batches of `size`; a trailing batch of one joins
/// the previous batch.
pub fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let n = order.len();
        out.pop();
        let last = out.pop().expect("at least two batches");
        out.push(&order[n - last.len() - 1..]);
    }
    out
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_shapes(model: &DeepHeteroIoT, ds: &Dataset) -> Result<()> {
    let cfg = model.config();
    if ds.seq_len() != cfg.input_len {
        return Err(Error::ShapeMismatch {
            op: "dataset length",
            left: vec![ds.seq_len()],
            right: vec![cfg.input_len],
        });
    }
    if ds.num_classes() > cfg.num_classes {
        return Err(Error::invalid(format!(
            "dataset has {} classes but the model has {}",
            ds.num_classes(),
            cfg.num_classes
        )));
    }
    Ok(())
}

fn batch_input(ds: &Dataset, idx: &[usize]) -> Result<Tensor> {
    let t = ds.seq_len();
    let mut data = Vec::with_capacity(idx.len() * t);
    for &i in idx {
        data.extend_from_slice(ds.sequence(i));
    }
    Tensor::new([idx.len(), 1, t], data)
}

/// Inference-mode predictions and mean cross-entropy over `ds`.
pub fn predict(model: &DeepHeteroIoT, ds: &Dataset, batch_size: usize) -> Result<(Vec<usize>, f64)> {
    check_shapes(model, ds)?;
    ds.check_complete()?;
    let order: Vec<usize> = (0..ds.len()).collect();
    let mut preds = Vec::with_capacity(ds.len());
    let mut loss_sum = 0.0;
    for idx in order.chunks(batch_size.max(1)) {
        let mut s = Session::new(&model.store, Mode::Infer);
        let x = s.input(batch_input(ds, idx)?);
        let logits = model.forward(&mut s, x)?;
        let labels: Vec<usize> = idx.iter().map(|&i| ds.labels()[i]).collect();
        let (loss, _) = softmax_cross_entropy(&mut s, logits, &labels)?;
        loss_sum += s.graph.value(loss).item() * idx.len() as f64;
        let k = model.config().num_classes;
        preds.extend(s.graph.value(logits).data().chunks_exact(k).map(argmax));
    }
    Ok((preds, loss_sum / ds.len().max(1) as f64))
}

/// Confusion-matrix report for `ds` under the model's current weights.
pub fn evaluate(model: &DeepHeteroIoT, ds: &Dataset) -> Result<EvalReport> {
    if let Some(&bad) = ds.labels().iter().find(|&&l| l >= model.config().num_classes) {
        return Err(Error::invalid(format!(
            "label {bad} outside the model's {} classes",
            model.config().num_classes
        )));
    }
    let (pred, loss) = predict(model, ds, 64)?;
    let mut names = ds.class_names().to_vec();
    names.extend((names.len()..model.config().num_classes).map(|c| format!("class{c}")));
    let mut r = EvalReport::from_predictions(ds.labels(), &pred, &names)?;
    r.loss = Some(loss);
    Ok(r)
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len().max(1) as f64
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn non_finite(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite { .. } => Error::NonFiniteLoss { epoch, batch },
        other => other,
    }
}

/// Mini-batch Adam training with best-validation checkpointing.
///
/// Each epoch shuffles with a seed derived from `cfg.seed` and the epoch
/// index, trains on every batch, then evaluates `val` in inference mode.
/// The checkpoint moves only on a strict validation-accuracy improvement.
/// On return the model holds the checkpoint weights.
pub fn train(model: &mut DeepHeteroIoT, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_shapes(model, train)?;
    check_shapes(model, val)?;
    train.check_complete()?;
    if train.len() < 2 {
        return Err(Error::Dataset("training needs at least two samples".into()));
    }
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..Default::default() });
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<Checkpoint> = None;
    let k = model.config().num_classes;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch)));
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for (b, idx) in batches(&order, cfg.batch_size).into_iter().enumerate() {
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels()[i]).collect();
            model.store.zero_grad();
            let (graph, updates, loss) = {
                let mut s = Session::new(&model.store, Mode::Train);
                let x = s.input(batch_input(train, idx)?);
                let step = (|| {
                    let logits = model.forward(&mut s, x)?;
                    let (loss, probs) = softmax_cross_entropy(&mut s, logits, &labels)?;
                    Ok::<_, Error>((loss, probs))
                })();
                let (loss, probs) = step.map_err(|e| non_finite(e, epoch, b + 1))?;
                hits += probs
                    .data()
                    .chunks_exact(k)
                    .zip(&labels)
                    .filter(|(row, &y)| argmax(row) == y)
                    .count();
                let (mut graph, updates) = s.into_parts();
                let value = graph.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
                }
                graph.backward(loss).map_err(|e| non_finite(e, epoch, b + 1))?;
                (graph, updates, value)
            };
            loss_sum += loss * idx.len() as f64;
            model.store.accumulate_grads(&graph);
            drop(graph);
            adam.step(&mut model.store)?;
            apply_updates(&mut model.store, &updates);
        }
        let (val_pred, val_loss) = predict(model, val, cfg.batch_size.max(64))?;
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: hits as f64 / train.len() as f64,
            val_loss,
            val_acc: accuracy(&val_pred, val.labels()),
        };
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.4}, val loss {:.4} acc {:.4}",
            rec.train_loss,
            rec.train_acc,
            rec.val_loss,
            rec.val_acc
        );
        if best.as_ref().is_none_or(|c| rec.val_acc > c.val_acc) {
            best = Some(Checkpoint {
                epoch,
                val_acc: rec.val_acc,
                val_loss: rec.val_loss,
                params: model.store.clone(),
            });
        }
        history.push(rec);
    }
    let checkpoint = best.expect("at least one epoch");
    model.store.load_values(&checkpoint.params)?;
    Ok(TrainOutcome { checkpoint, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_benchmark;
    use crate::model::Variant;

    fn setup(variant: Variant) -> (DeepHeteroIoT, Dataset) {
        let d = synth_benchmark(3, 6, 16, 4).unwrap();
        let m = DeepHeteroIoT::new(ModelConfig::new(variant, 16, 3).scaled(16).with_seed(2)).unwrap();
        (m, d)
    }

    #[test]
    fn batching_merges_a_trailing_single() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.iter().map(|b| b.len()).collect::<Vec<_>>(), [4, 5]);
        assert_eq!(batches(&order[..8], 4).len(), 2);
        assert_eq!(batches(&order[..3], 4), [&order[..3]]);
    }

    #[test]
    fn zero_learning_rate_freezes_trainable_parameters() {
        let (mut m, d) = setup(Variant::Full);
        let before = m.store.clone();
        let cfg = TrainConfig { epochs: 2, lr: 0.0, batch_size: 6, ..Default::default() };
        train(&mut m, &d, &d, &cfg).unwrap();
        for ((_, a), (_, b)) in before.iter().zip(m.store.iter()) {
            if a.trainable {
                assert_eq!(a.value, b.value, "{}", a.name);
            }
        }
    }

    #[test]
    fn checkpoint_holds_the_best_validation_accuracy() {
        let (mut m, d) = setup(Variant::MlpOnly);
        let cfg = TrainConfig { epochs: 8, batch_size: 4, lr: 0.01, ..Default::default() };
        let out = train(&mut m, &d, &d, &cfg).unwrap();
        assert_eq!(out.history.len(), 8);
        for r in &out.history {
            assert!(out.checkpoint.val_acc >= r.val_acc);
        }
        let first_best = out.history.iter().find(|r| r.val_acc == out.checkpoint.val_acc).unwrap();
        assert_eq!(first_best.epoch, out.checkpoint.epoch);
        let (_, acc) = (predict(&m, &d, 5).unwrap(), evaluate(&m, &d).unwrap().accuracy);
        assert_eq!(acc, out.checkpoint.val_acc);
    }

    #[test]
    fn rejects_bad_config_and_shapes() {
        let (mut m, d) = setup(Variant::MlpOnly);
        let bad = TrainConfig { batch_size: 1, ..Default::default() };
        assert!(train(&mut m, &d, &d, &bad).is_err());
        let short = synth_benchmark(3, 6, 12, 4).unwrap();
        assert!(train(&mut m, &short, &short, &TrainConfig { epochs: 1, ..Default::default() }).is_err());
    }

    #[test]
    fn exploding_inputs_abort_with_epoch_and_batch() {
        let (mut m, mut d) = setup(Variant::MlpOnly);
        d.values_mut().iter_mut().enumerate().for_each(|(i, v)| *v = if i % 2 == 0 { 1e200 } else { -1e200 });
        let cfg = TrainConfig { epochs: 1, batch_size: 6, ..Default::default() };
        match train(&mut m, &d, &d, &cfg) {
            Err(Error::NonFiniteLoss { epoch, batch }) => assert_eq!((epoch, batch), (1, 1)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn evaluation_is_side_effect_free() {
        let (m, d) = setup(Variant::Full);
        let a = evaluate(&m, &d).unwrap();
        let b = evaluate(&m, &d).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_files_round_trip() {
        let (mut m, d) = setup(Variant::GlobalOnly);
        let cfg = TrainConfig { epochs: 1, batch_size: 6, ..Default::default() };
        let out = train(&mut m, &d, &d, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        out.checkpoint.save(dir.path(), m.config()).unwrap();
        let (ck, loaded) = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(ck.epoch, 1);
        assert_eq!(loaded.logits(&m.batch_tensor([d.sequence(0)]).unwrap()).unwrap(), m.logits(&m.batch_tensor([d.sequence(0)]).unwrap()).unwrap());
    }
}
