use super::init::glorot_uniform;
use super::Session;
use crate::autodiff::{ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Causal 1-D convolution: output length equals input length and output
/// step `t` sees only inputs at steps `<= t` (left zero padding of
/// `kernel − 1`). Weights are laid out (kernel, in, out).
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        seed: u64,
    ) -> Result<Self> {
        if kernel < 1 || in_channels < 1 || out_channels < 1 {
            return Err(Error::invalid(format!(
                "{name}: conv1d needs positive kernel and channel counts"
            )));
        }
        let wname = format!("{name}.weight");
        let w = glorot_uniform(
            &[kernel, in_channels, out_channels],
            kernel * in_channels,
            kernel * out_channels,
            seed,
            &wname,
        );
        Ok(Self {
            weight: store.add(&wname, w),
            bias: store.add(&format!("{name}.bias"), Tensor::zeros([out_channels])),
            kernel,
            in_channels,
            out_channels,
        })
    }

    pub fn num_params(&self) -> usize {
        self.kernel * self.in_channels * self.out_channels + self.out_channels
    }

    /// (batch, in, time) → (batch, out, time).
    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let shape = s.graph.shape(x);
        if shape.len() != 3 || shape[1] != self.in_channels {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                left: shape.to_vec(),
                right: vec![self.kernel, self.in_channels, self.out_channels],
            });
        }
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        s.graph.conv1d(x, w, b)
    }
}

/// Non-overlapping max pool over time; the gradient goes to the first
/// maximal element of each window.
pub fn maxpool1d(s: &mut Session<'_>, x: Var, size: usize) -> Result<Var> {
    s.graph.maxpool1d(x, size)
}

/// Mean over the time axis: (batch, ch, time) → (batch, ch).
pub fn global_avg_pool(s: &mut Session<'_>, x: Var) -> Result<Var> {
    s.graph.global_avg_pool(x)
}
