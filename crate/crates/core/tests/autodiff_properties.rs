use deephetero::autodiff::{Graph, Tensor, Var};
use deephetero::model::{DeepHeteroIoT, ModelConfig, Variant};
use deephetero::nn::{softmax_cross_entropy, Mode, Session};
use proptest::prelude::*;

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).unwrap()
}

/// sum(r ⊙ tanh(x·w) ⊙ sigmoid(x·w)) for x (2,3), w (3,2).
fn head(g: &mut Graph, x: Var, w: Var, r: &Tensor) -> Var {
    let z = g.matmul(x, w).unwrap();
    let a = g.tanh(z).unwrap();
    let b = g.sigmoid(z).unwrap();
    let p = g.mul(a, b).unwrap();
    let rv = g.constant(r.clone());
    let q = g.mul(p, rv).unwrap();
    g.sum(q).unwrap()
}

fn grads(xv: &[f64], wv: &[f64], r1: &Tensor, r2: &Tensor, alpha: f64, beta: f64) -> (Vec<f64>, Vec<f64>) {
    let mut g = Graph::new();
    let x = g.variable(tensor(&[2, 3], xv.to_vec()));
    let w = g.variable(tensor(&[3, 2], wv.to_vec()));
    let f1 = head(&mut g, x, w, r1);
    let f2 = head(&mut g, x, w, r2);
    let a = g.affine(f1, alpha, 0.0).unwrap();
    let b = g.affine(f2, beta, 0.0).unwrap();
    let loss = g.add(a, b).unwrap();
    g.backward(loss).unwrap();
    (g.grad(x).unwrap().data().to_vec(), g.grad(w).unwrap().data().to_vec())
}

proptest! {
    #[test]
    fn backward_is_linear_in_the_loss(
        xv in proptest::collection::vec(-2.0f64..2.0, 6),
        wv in proptest::collection::vec(-2.0f64..2.0, 6),
        r1 in proptest::collection::vec(-1.0f64..1.0, 4),
        r2 in proptest::collection::vec(-1.0f64..1.0, 4),
        alpha in -3.0f64..3.0,
        beta in -3.0f64..3.0,
    ) {
        let (r1, r2) = (tensor(&[2, 2], r1), tensor(&[2, 2], r2));
        let (cx, cw) = grads(&xv, &wv, &r1, &r2, alpha, beta);
        let (fx, fw) = grads(&xv, &wv, &r1, &r2, 1.0, 0.0);
        let (gx, gw) = grads(&xv, &wv, &r1, &r2, 0.0, 1.0);
        for (c, (f, g)) in cx.iter().chain(&cw).zip(fx.iter().chain(&fw).zip(gx.iter().chain(&gw))) {
            let want = alpha * f + beta * g;
            prop_assert!((c - want).abs() <= 1e-10 * want.abs().max(1.0), "{c} vs {want}");
        }
    }
}

fn loss_and_grads(model: &DeepHeteroIoT, x: &Tensor, labels: &[usize]) -> (f64, Vec<Vec<f64>>) {
    let mut s = Session::new(&model.store, Mode::Train);
    let xv = s.input(x.clone());
    let logits = model.forward(&mut s, xv).unwrap();
    let (loss, _) = softmax_cross_entropy(&mut s, logits, labels).unwrap();
    let (mut g, _) = s.into_parts();
    g.backward(loss).unwrap();
    let value = g.value(loss).item();
    let grads = g.bindings().iter().map(|&(_, v)| g.grad(v).unwrap().data().to_vec()).collect();
    (value, grads)
}

#[test]
fn forward_and_gradients_are_bit_identical_across_runs() {
    let cfg = ModelConfig::new(Variant::Full, 24, 3).scaled(8).with_seed(17);
    let x = tensor(&[4, 1, 24], (0..96).map(|i| ((i * 7 % 13) as f64 - 6.0) / 3.0).collect());
    let labels = [0, 1, 2, 1];
    let a = loss_and_grads(&DeepHeteroIoT::new(cfg.clone()).unwrap(), &x, &labels);
    let b = loss_and_grads(&DeepHeteroIoT::new(cfg).unwrap(), &x, &labels);
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1.len(), b.1.len());
    for (ga, gb) in a.1.iter().zip(&b.1) {
        assert!(ga.iter().zip(gb).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn inference_records_no_graph_nodes() {
    let model = DeepHeteroIoT::new(ModelConfig::new(Variant::Full, 24, 3).scaled(8)).unwrap();
    let x = tensor(&[2, 1, 24], (0..48).map(|i| (i as f64).cos()).collect());
    let mut s = Session::new(&model.store, Mode::Infer);
    let xv = s.input(x.clone());
    model.forward(&mut s, xv).unwrap();
    assert_eq!(s.graph.num_nodes(), 0);
    assert!(s.graph.bindings().is_empty());

    let mut g = Graph::no_grad();
    let v = g.variable(x);
    let y = g.relu(v).unwrap();
    let z = g.sum(y).unwrap();
    assert_eq!(g.num_nodes(), 0);
    assert!(!g.requires_grad(z));
}
