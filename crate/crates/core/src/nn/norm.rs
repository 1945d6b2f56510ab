use super::{Mode, Session};
use crate::autodiff::{ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Exponential-moving-average update of one batch-norm layer's running
/// statistics: `running = momentum·running + (1 − momentum)·batch`.
#[derive(Clone, Debug)]
pub struct RunningStatUpdate {
    pub mean: ParamId,
    pub var: ParamId,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    pub momentum: f64,
}

impl RunningStatUpdate {
    pub fn apply(&self, store: &mut ParamStore) {
        let m = self.momentum;
        for (r, b) in store.value_mut(self.mean).data_mut().iter_mut().zip(&self.batch_mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, b) in store.value_mut(self.var).data_mut().iter_mut().zip(&self.batch_var) {
            *r = m * *r + (1.0 - m) * b;
        }
    }
}

/// Batch normalization over the last (channel) axis. In training mode the
/// statistics come from every leading position of the batch (batch × time
/// for sequences); in inference mode from the running estimates.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub const DEFAULT_MOMENTUM: f64 = 0.99;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(&format!("{name}.gamma"), Tensor::full([channels], 1.0)),
            beta: store.add(&format!("{name}.beta"), Tensor::zeros([channels])),
            running_mean: store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros([channels])),
            running_var: store.add_buffer(&format!("{name}.running_var"), Tensor::full([channels], 1.0)),
            channels,
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn num_params(&self) -> usize {
        2 * self.channels
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let shape = s.graph.shape(x).to_vec();
        if shape.last() != Some(&self.channels) {
            return Err(Error::ShapeMismatch {
                op: "batch_norm",
                left: shape,
                right: vec![self.channels],
            });
        }
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        match s.mode {
            Mode::Train => {
                if shape.len() < 2 || shape[0] < 2 {
                    return Err(Error::invalid(format!(
                        "batch_norm: training needs a batch of at least 2, got shape {shape:?}"
                    )));
                }
                let (y, stats) = s.graph.batch_norm(x, gamma, beta, self.eps)?;
                s.push_update(RunningStatUpdate {
                    mean: self.running_mean,
                    var: self.running_var,
                    batch_mean: stats.mean,
                    batch_var: stats.var,
                    momentum: self.momentum,
                });
                Ok(y)
            }
            Mode::Infer => {
                let mean = s.store.value(self.running_mean).data().to_vec();
                let var = s.store.value(self.running_var).data().to_vec();
                s.graph.batch_norm_fixed(x, gamma, beta, &mean, &var, self.eps)
            }
        }
    }
}

/// Per-sample normalization over the feature axis.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub features: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, features: usize) -> Result<Self> {
        if features < 2 {
            return Err(Error::invalid(format!("{name}: layer norm needs at least two features")));
        }
        Ok(Self {
            gamma: store.add(&format!("{name}.gamma"), Tensor::full([features], 1.0)),
            beta: store.add(&format!("{name}.beta"), Tensor::zeros([features])),
            features,
            eps: Self::DEFAULT_EPS,
        })
    }

    pub fn num_params(&self) -> usize {
        2 * self.features
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        s.graph.layer_norm(x, gamma, beta, self.eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64, scale: f64, shift: f64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| shift + scale * rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 3);
        let mut s = Session::new(&store, Mode::Train);
        let x = s.input(random(&[4, 5, 3], 1, 3.0, 2.0));
        let y = bn.forward(&mut s, x).unwrap();
        let d = s.graph.value(y).data();
        for c in 0..3 {
            let col: Vec<f64> = d.iter().skip(c).step_by(3).copied().collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / col.len() as f64;
            assert!(m.abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-4, "variance {v}");
        }
    }

    #[test]
    fn infer_mode_with_unit_stats_is_identity() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 2);
        let input = random(&[3, 2], 2, 1.0, 0.0);
        let mut s = Session::new(&store, Mode::Infer);
        let x = s.input(input.clone());
        let y = bn.forward(&mut s, x).unwrap();
        assert!(s.graph.value(y).max_abs_diff(&input) < 1e-5 * 2.0);
        // same sample alone gives the same row
        let mut s2 = Session::new(&store, Mode::Infer);
        let x1 = s2.input(Tensor::new([1, 2], input.row(0).to_vec()).unwrap());
        let y1 = bn.forward(&mut s2, x1).unwrap();
        assert_eq!(s2.graph.value(y1).data(), s.graph.value(y).row(0));
    }

    #[test]
    fn running_mean_one_step_ema() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 1);
        let updates = {
            let mut s = Session::new(&store, Mode::Train);
            let x = s.input(Tensor::new([4, 1], vec![1.0, 3.0, 1.0, 3.0]).unwrap());
            bn.forward(&mut s, x).unwrap();
            s.take_updates()
        };
        crate::nn::apply_updates(&mut store, &updates);
        assert!((store.value(bn.running_mean).item() - 0.02).abs() < 1e-15);
        // batch variance 1 keeps running variance at 1
        assert!((store.value(bn.running_var).item() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn batch_of_one_is_rejected_in_training() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 2);
        let mut s = Session::new(&store, Mode::Train);
        let x = s.input(Tensor::zeros([1, 4, 2]));
        assert!(bn.forward(&mut s, x).is_err());
    }

    #[test]
    fn layer_norm_rows() {
        let mut store = ParamStore::new();
        let ln = LayerNorm::new(&mut store, "ln", 2).unwrap();
        let mut s = Session::new(&store, Mode::Infer);
        let x = s.input(Tensor::new([2, 2], vec![1.0, 3.0, 5.0, 5.0]).unwrap());
        let y = ln.forward(&mut s, x).unwrap();
        let d = s.graph.value(y).data();
        assert!((d[0] + 1.0).abs() < 1e-5 && (d[1] - 1.0).abs() < 1e-5);
        assert_eq!(&d[2..], &[0.0, 0.0]);

        let ln8 = {
            let mut st = ParamStore::new();
            let l = LayerNorm::new(&mut st, "ln", 8).unwrap();
            (st, l)
        };
        let mut s = Session::new(&ln8.0, Mode::Infer);
        let x = s.input(random(&[5, 8], 3, 10.0, 4.0));
        let y = ln8.1.forward(&mut s, x).unwrap();
        for r in 0..5 {
            let m: f64 = s.graph.value(y).row(r).iter().sum::<f64>() / 8.0;
            assert!(m.abs() < 1e-10);
        }
        let mut st = ParamStore::new();
        assert!(LayerNorm::new(&mut st, "ln", 1).is_err());
    }
}
