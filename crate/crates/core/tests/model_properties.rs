use deephetero::autodiff::{ParamId, Tensor};
use deephetero::gradsuite::{check_layer, LayerKind};
use deephetero::model::{DeepHeteroIoT, ModelConfig, Variant};
use deephetero::nn::{Mode, Session};
use proptest::prelude::*;

fn input(b: usize, t: usize) -> Tensor {
    Tensor::new([b, 1, t], (0..b * t).map(|i| (i as f64 * 0.61).sin() * 2.0 + (i % 5) as f64 * 0.1).collect()).unwrap()
}

/// Closed-form trainable parameter count of an arbitrary configuration.
fn count(cfg: &ModelConfig) -> usize {
    let [f1, f2] = cfg.conv_filters;
    let mut n = 0;
    let mut features = 0;
    if cfg.variant.has_local() {
        for &k in &cfg.kernel_sizes {
            n += (k * f1 + f1) + 2 * (k * f1 * f1 + f1) + (k * f1 * f2 + f2) + 5 * (k * f2 * f2 + f2);
            features += f2;
        }
    }
    if cfg.variant.has_global() {
        let mut i = 1;
        for &d in &cfg.gru_dims {
            n += 2 * 3 * (i * d + d * d + d) + 4 * d;
            i = 2 * d;
        }
        features += i;
    }
    if cfg.variant == Variant::MlpOnly {
        features = cfg.input_len;
    }
    let mut i = features;
    for &w in &cfg.mlp_widths {
        n += i * w + 3 * w;
        i = w;
    }
    n + i * cfg.num_classes + cfg.num_classes
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn parameter_count_matches_closed_form(
        v in 0usize..4,
        t in 4usize..200,
        classes in 2usize..10,
        div in 1usize..64,
        kernels in proptest::collection::btree_set(1usize..12, 1..5),
        gru_layers in 1usize..4,
    ) {
        let mut cfg = ModelConfig::new(Variant::ALL[v], t, classes).scaled(div);
        cfg.kernel_sizes = kernels.into_iter().rev().collect();
        cfg.gru_dims.truncate(gru_layers);
        let m = DeepHeteroIoT::new(cfg.clone()).unwrap();
        prop_assert_eq!(m.store.num_trainable(), count(&cfg));
        prop_assert_eq!(m.num_params(), count(&cfg));
    }
}

#[test]
fn duplicate_kernel_sizes_are_rejected() {
    let mut cfg = ModelConfig::new(Variant::LocalOnly, 16, 2).scaled(16);
    cfg.kernel_sizes = vec![5, 3, 5];
    assert!(cfg.validate().is_err());
    assert!(DeepHeteroIoT::new(cfg).is_err());
}

#[test]
fn full_width_counts() {
    let full = DeepHeteroIoT::new(ModelConfig::new(Variant::Full, 168, 8)).unwrap();
    assert_eq!(full.store.num_trainable(), 2_973_128);
    assert_eq!(count(full.config()), 2_973_128);
}

fn find(m: &DeepHeteroIoT, name: &str) -> ParamId {
    m.store.id(name).unwrap_or_else(|| panic!("no parameter {name}"))
}

#[test]
fn global_only_equals_full_with_local_slots_zeroed() {
    let cfg = ModelConfig::new(Variant::Full, 20, 4).scaled(8).with_seed(3);
    let global = DeepHeteroIoT::new(cfg.clone().with_variant(Variant::GlobalOnly)).unwrap();
    let mut full = DeepHeteroIoT::new(cfg).unwrap();
    let gru = full.feature_layout().into_iter().find(|(n, _)| n == "gru3").unwrap().1;
    assert_eq!(gru, full.config().local_width()..full.config().feature_width());

    for (_, p) in global.store.iter() {
        let id = find(&full, &p.name);
        if p.name == "head.dense1.weight" {
            let cols = p.value.shape()[1];
            let w = full.store.value_mut(id).data_mut();
            w.fill(0.0);
            w[gru.start * cols..gru.end * cols].copy_from_slice(p.value.data());
        } else {
            *full.store.value_mut(id) = p.value.clone();
        }
    }

    let x = input(3, 20);
    let a = global.logits(&x).unwrap();
    let b = full.logits(&x).unwrap();
    assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()), "{a:?} vs {b:?}");

    let train_logits = |m: &DeepHeteroIoT| {
        let mut s = Session::new(&m.store, Mode::Train);
        let xv = s.input(x.clone());
        let y = m.forward(&mut s, xv).unwrap();
        s.graph.value(y).data().to_vec()
    };
    let (ta, tb) = (train_logits(&global), train_logits(&full));
    assert!(ta.iter().zip(&tb).all(|(p, q)| p.to_bits() == q.to_bits()));
}

/// Gradients of the F3 block for loss sum(r ⊙ features).
fn f3_grads(m: &DeepHeteroIoT, x: &Tensor, r: &Tensor) -> Vec<Vec<f64>> {
    let mut s = Session::new(&m.store, Mode::Train);
    let xv = s.input(x.clone());
    let f = m.features(&mut s, xv).unwrap();
    let rv = s.input(r.clone());
    let p = s.graph.mul(f, rv).unwrap();
    let loss = s.graph.sum(p).unwrap();
    let vars: Vec<_> = m.blocks[0].layers.iter().flat_map(|l| [l.weight, l.bias]).map(|id| s.param(id)).collect();
    let (mut g, _) = s.into_parts();
    g.backward(loss).unwrap();
    vars.iter().map(|&v| g.grad(v).unwrap().data().to_vec()).collect()
}

#[test]
fn f3_gradients_ignore_other_branches() {
    let m = DeepHeteroIoT::new(ModelConfig::new(Variant::Full, 16, 3).scaled(8).with_seed(4)).unwrap();
    let x = input(3, 16);
    let w = m.config().feature_width();
    let f3 = m.feature_layout()[0].1.clone();
    let r: Vec<f64> = (0..3 * w).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect();
    let masked: Vec<f64> = r.iter().enumerate().map(|(i, &v)| if f3.contains(&(i % w)) { v } else { 0.0 }).collect();
    let a = f3_grads(&m, &x, &Tensor::new([3, w], r).unwrap());
    let b = f3_grads(&m, &x, &Tensor::new([3, w], masked).unwrap());
    assert_eq!(a, b);
    assert!(a.iter().flatten().any(|&g| g != 0.0));
}

#[test]
fn tiny_full_model_passes_finite_differences() {
    let c = check_layer(LayerKind::Model, 1, 1e-3, 8).unwrap();
    assert!(c.passed(), "{:?}", c.report.failures);
    assert!(c.report.checked > 100);
}

#[test]
fn long_sequence_forward() {
    let m = DeepHeteroIoT::new(ModelConfig::new(Variant::Full, 864, 5).scaled(8)).unwrap();
    let y = m.logits(&input(2, 864)).unwrap();
    assert_eq!(y.shape(), [2, 5]);
    assert!(y.data().iter().all(|v| v.is_finite()));
}
