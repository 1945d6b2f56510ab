//! Finite-difference checks for every layer kind and a tiny full model.
//!
//! Each instance draws random shapes and values, reduces the layer output
//! to a scalar with a fixed random projection, and compares the analytic
//! gradient of every input and parameter against central differences.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{check_gradients, check_gradients_piecewise, GradCheckReport, Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{DeepHeteroIoT, ModelConfig, Variant};
use crate::nn::{
    global_avg_pool, maxpool1d, Activation, BatchNorm, BiGru, Conv1d, Dense, GruCell, LayerNorm, Mode,
    ReturnMode, Session,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv1d,
    MaxPool,
    GlobalAvgPool,
    Dense,
    BatchNorm,
    LayerNorm,
    GruStep,
    BiGru,
    SoftmaxXent,
    Model,
}

impl LayerKind {
    pub const ALL: [LayerKind; 10] = [
        LayerKind::Conv1d,
        LayerKind::MaxPool,
        LayerKind::GlobalAvgPool,
        LayerKind::Dense,
        LayerKind::BatchNorm,
        LayerKind::LayerNorm,
        LayerKind::GruStep,
        LayerKind::BiGru,
        LayerKind::SoftmaxXent,
        LayerKind::Model,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv1d => "conv1d",
            LayerKind::MaxPool => "maxpool",
            LayerKind::GlobalAvgPool => "gap",
            LayerKind::Dense => "dense",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::LayerNorm => "layernorm",
            LayerKind::GruStep => "gru",
            LayerKind::BiGru => "bigru",
            LayerKind::SoftmaxXent => "softmax-ce",
            LayerKind::Model => "model",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LayerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown layer `{s}`")))
    }
}

/// Outcome for one layer kind over all its instances.
#[derive(Clone, Debug)]
pub struct LayerCheck {
    pub layer: LayerKind,
    pub instances: usize,
    pub report: GradCheckReport,
}

impl LayerCheck {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("positive shape")
}

/// `sum(y ⊙ r)` for a fixed random `r` of y's shape.
fn project(g: &mut Graph, y: Var, r: &Tensor) -> Result<Var> {
    let rv = g.constant(r.clone());
    let p = g.mul(y, rv)?;
    g.sum(p)
}

/// Runs `f` in a session over `store` whose parameters `ids` are bound to
/// the graph variables `vars`.
fn with_params<F>(g: &mut Graph, store: &ParamStore, ids: &[ParamId], vars: &[Var], mode: Mode, f: F) -> Result<Var>
where
    F: FnOnce(&mut Session<'_>) -> Result<Var>,
{
    let graph = std::mem::replace(g, Graph::no_grad());
    let mut s = Session::with_graph(graph, store, mode);
    for (&id, &v) in ids.iter().zip(vars) {
        s.bind(id, v);
    }
    let out = f(&mut s);
    *g = s.into_parts().0;
    out
}

fn param_values(store: &ParamStore, ids: &[ParamId]) -> Vec<Tensor> {
    ids.iter().map(|&id| store.value(id).clone()).collect()
}

/// Perturbs stored parameters so that zero-initialized biases and unit
/// norm scales are not special points.
fn jiggle(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for p in store.iter_mut().filter(|p| p.trainable) {
        for v in p.value.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
}

fn trainable_ids(store: &ParamStore) -> Vec<ParamId> {
    store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect()
}

fn instance(kind: LayerKind, seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    match kind {
        LayerKind::Conv1d => {
            let (b, cin, cout) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
            let (t, k) = (rng.random_range(3..10), rng.random_range(1..6));
            let conv = Conv1d::new(&mut store, "conv", cin, cout, k, seed)?;
            jiggle(&mut store, &mut rng);
            let ids = [conv.weight, conv.bias];
            let x = uniform(&mut rng, &[b, cin, t], -1.0, 1.0);
            let r = uniform(&mut rng, &[b, cout, t], -1.0, 1.0);
            let mut inputs = vec![x];
            inputs.extend(param_values(&store, &ids));
            check_gradients(
                |g, v| {
                    let y = with_params(g, &store, &ids, &v[1..], Mode::Train, |s| conv.forward(s, v[0]))?;
                    project(g, y, &r)
                },
                &inputs,
                tol,
                None,
                seed,
            )
        }
        LayerKind::MaxPool => {
            let (b, c, t) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(2..12));
            let x = uniform(&mut rng, &[b, c, t], -1.0, 1.0);
            let r = uniform(&mut rng, &[b, c, t / 2], -1.0, 1.0);
            check_gradients(
                |g, v| {
                    let y = with_params(g, &store, &[], &[], Mode::Train, |s| maxpool1d(s, v[0], 2))?;
                    project(g, y, &r)
                },
                &[x],
                tol,
                None,
                seed,
            )
        }
        LayerKind::GlobalAvgPool => {
            let (b, c, t) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..10));
            let x = uniform(&mut rng, &[b, c, t], -1.0, 1.0);
            let r = uniform(&mut rng, &[b, c], -1.0, 1.0);
            check_gradients(
                |g, v| {
                    let y = with_params(g, &store, &[], &[], Mode::Train, |s| global_avg_pool(s, v[0]))?;
                    project(g, y, &r)
                },
                &[x],
                tol,
                None,
                seed,
            )
        }
        LayerKind::Dense => {
            let (b, i, o) = (rng.random_range(1..4), rng.random_range(1..6), rng.random_range(1..6));
            let act = if rng.random_bool(0.5) { Activation::Relu } else { Activation::None };
            let dense = Dense::new(&mut store, "dense", i, o, act, seed)?;
            jiggle(&mut store, &mut rng);
            let ids = [dense.weight, dense.bias];
            let x = uniform(&mut rng, &[b, i], -1.0, 1.0);
            let r = uniform(&mut rng, &[b, o], -1.0, 1.0);
            let mut inputs = vec![x];
            inputs.extend(param_values(&store, &ids));
            check_gradients(
                |g, v| {
                    let y = with_params(g, &store, &ids, &v[1..], Mode::Train, |s| dense.forward(s, v[0]))?;
                    project(g, y, &r)
                },
                &inputs,
                tol,
                None,
                seed,
            )
        }
        LayerKind::BatchNorm => {
            let c = rng.random_range(1..4);
            let shape: Vec<usize> = if rng.random_bool(0.5) {
                vec![rng.random_range(2..5), c]
            } else {
                vec![rng.random_range(2..4), rng.random_range(1..4), c]
            };
            let bn = BatchNorm::new(&mut store, "bn", c);
            jiggle(&mut store, &mut rng);
            let ids = [bn.gamma, bn.beta];
            let x = uniform(&mut rng, &shape, -2.0, 2.0);
            let r = uniform(&mut rng, &shape, -1.0, 1.0);
            let mut inputs = vec![x];
            inputs.extend(param_values(&store, &ids));
            check_gradients(
                |g, v| {
                    let y = with_params(g, &store, &ids, &v[1..], Mode::Train, |s| bn.forward(s, v[0]))?;
                    project(g, y, &r)
                },
                &inputs,
                tol,
                None,
                seed,
            )
        }
        LayerKind::LayerNorm => {
            let (b, f) = (rng.random_range(1..4), rng.random_range(2..6));
            let ln = LayerNorm::new(&mut store, "ln", f)?;
            jiggle(&mut store, &mut rng);
            let ids = [ln.gamma, ln.beta];
            let x = uniform(&mut rng, &[b, f], -2.0, 2.0);
            let r = uniform(&mut rng, &[b, f], -1.0, 1.0);
            let mut inputs = vec![x];
            inputs.extend(param_values(&store, &ids));
            check_gradients(
                |g, v| {
                    let y = with_params(g, &store, &ids, &v[1..], Mode::Train, |s| ln.forward(s, v[0]))?;
                    project(g, y, &r)
                },
                &inputs,
                tol,
                None,
                seed,
            )
        }
        LayerKind::GruStep => {
            let (b, i, d) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
            let cell = GruCell::new(&mut store, "gru", i, d, seed)?;
            jiggle(&mut store, &mut rng);
            let ids = trainable_ids(&store);
            let x = uniform(&mut rng, &[b, i], -1.0, 1.0);
            let h = uniform(&mut rng, &[b, d], -1.0, 1.0);
            let r = uniform(&mut rng, &[b, d], -1.0, 1.0);
            let mut inputs = vec![x, h];
            inputs.extend(param_values(&store, &ids));
            check_gradients(
                |g, v| {
                    let y = with_params(g, &store, &ids, &v[2..], Mode::Train, |s| {
                        Ok(cell.step(s, v[0], v[1])?.hidden)
                    })?;
                    project(g, y, &r)
                },
                &inputs,
                tol,
                None,
                seed,
            )
        }
        LayerKind::BiGru => {
            let (b, t, i, d) = (
                rng.random_range(1..3),
                rng.random_range(1..5),
                rng.random_range(1..3),
                rng.random_range(1..3),
            );
            let mode = if rng.random_bool(0.5) { ReturnMode::Sequence } else { ReturnMode::Final };
            let layer = BiGru::new(&mut store, "bigru", i, d, mode, seed)?;
            jiggle(&mut store, &mut rng);
            let ids = trainable_ids(&store);
            let x = uniform(&mut rng, &[b, t, i], -1.0, 1.0);
            let out_shape: Vec<usize> = match mode {
                ReturnMode::Sequence => vec![b, t, 2 * d],
                ReturnMode::Final => vec![b, 2 * d],
            };
            let r = uniform(&mut rng, &out_shape, -1.0, 1.0);
            let mut inputs = vec![x];
            inputs.extend(param_values(&store, &ids));
            check_gradients(
                |g, v| {
                    let y = with_params(g, &store, &ids, &v[1..], Mode::Train, |s| layer.forward(s, v[0]))?;
                    project(g, y, &r)
                },
                &inputs,
                tol,
                None,
                seed,
            )
        }
        LayerKind::SoftmaxXent => {
            let (b, k) = (rng.random_range(1..5), rng.random_range(2..6));
            let logits = uniform(&mut rng, &[b, k], -3.0, 3.0);
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
            check_gradients(
                |g, v| Ok(g.softmax_cross_entropy(v[0], &labels)?.0),
                &[logits],
                tol,
                None,
                seed,
            )
        }
        LayerKind::Model => model_instance(seed, tol),
    }
}

/// Tiny full model (t=16, 3 classes, widths ÷8) in training mode: loss
/// gradient against the input and a sample of every parameter tensor.
/// Zero biases put padded conv outputs on the ReLU kink, so parameters
/// are perturbed first; with this many ReLUs the central stencil still
/// straddles the odd kink, which the piecewise check tolerates.
fn model_instance(seed: u64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = DeepHeteroIoT::new(ModelConfig::new(Variant::Full, 16, 3).scaled(8).with_seed(seed))?;
    jiggle(&mut model.store, &mut rng);
    let ids = trainable_ids(&model.store);
    let x = uniform(&mut rng, &[4, 1, 16], -1.0, 1.0);
    let labels: Vec<usize> = (0..4).map(|i| i % 3).collect();
    let mut inputs = vec![x];
    inputs.extend(param_values(&model.store, &ids));
    check_gradients_piecewise(
        |g, v| {
            let logits = with_params(g, &model.store, &ids, &v[1..], Mode::Train, |s| model.forward(s, v[0]))?;
            Ok(g.softmax_cross_entropy(logits, &labels)?.0)
        },
        &inputs,
        tol,
        Some(2),
        seed,
    )
}

/// Checks `instances` random instances of `kind` (one for the model).
pub fn check_layer(kind: LayerKind, instances: usize, tol: f64, seed: u64) -> Result<LayerCheck> {
    let n = if kind == LayerKind::Model { 1 } else { instances };
    let mut report = GradCheckReport::empty(tol);
    for i in 0..n {
        report.merge(instance(kind, seed.wrapping_mul(1000).wrapping_add(i as u64), tol)?);
    }
    Ok(LayerCheck {
        layer: kind,
        instances: n,
        report,
    })
}

/// Default tolerances: 1e-4 per layer, 1e-3 for the whole model.
pub fn default_tol(kind: LayerKind) -> f64 {
    if kind == LayerKind::Model {
        1e-3
    } else {
        1e-4
    }
}
