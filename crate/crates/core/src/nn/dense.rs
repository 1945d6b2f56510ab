use serde::{Deserialize, Serialize};

use super::init::glorot_uniform;
use super::Session;
use crate::autodiff::{ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    None,
    Relu,
}

/// `y = act(x·W + b)` with `W` of shape (in, out).
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        if inputs < 1 || outputs < 1 {
            return Err(Error::invalid(format!("{name}: dense widths must be positive")));
        }
        let wname = format!("{name}.weight");
        let w = glorot_uniform(&[inputs, outputs], inputs, outputs, seed, &wname);
        Ok(Self {
            weight: store.add(&wname, w),
            bias: store.add(&format!("{name}.bias"), Tensor::zeros([outputs])),
            inputs,
            outputs,
            activation,
        })
    }

    pub fn num_params(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let shape = s.graph.shape(x);
        if shape.len() != 2 || shape[1] != self.inputs {
            return Err(Error::ShapeMismatch {
                op: "dense",
                left: shape.to_vec(),
                right: vec![self.inputs, self.outputs],
            });
        }
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        let xw = s.graph.matmul(x, w)?;
        let y = s.graph.add(xw, b)?;
        match self.activation {
            Activation::None => Ok(y),
            Activation::Relu => s.graph.relu(y),
        }
    }
}
