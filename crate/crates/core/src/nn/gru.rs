use serde::{Deserialize, Serialize};

use super::init::glorot_uniform;
use super::Session;
use crate::autodiff::{ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Gated recurrent unit in batch-row form:
///
/// ```text
/// u = σ(x·W_u + h·U_u + b_u)
/// r = σ(x·W_r + h·U_r + b_r)
/// c = tanh(x·W_h + (r ⊙ h)·U_h + b_h)
/// h' = (1 − u) ⊙ h + u ⊙ c
/// ```
///
/// `W_*` are (input, hidden), `U_*` are (hidden, hidden).
#[derive(Clone, Debug)]
pub struct GruCell {
    pub w_u: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_u: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_u: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

/// Gate activations and new state of one step.
#[derive(Clone, Copy, Debug)]
pub struct GruStep {
    pub update: Var,
    pub reset: Var,
    pub hidden: Var,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if input_dim < 1 || hidden < 1 {
            return Err(Error::invalid(format!("{name}: GRU dimensions must be positive")));
        }
        let mut w = |suffix: &str, rows: usize| {
            let n = format!("{name}.{suffix}");
            let t = glorot_uniform(&[rows, hidden], rows, hidden, seed, &n);
            store.add(&n, t)
        };
        let (w_u, w_r, w_h) = (w("w_u", input_dim), w("w_r", input_dim), w("w_h", input_dim));
        let (u_u, u_r, u_h) = (w("u_u", hidden), w("u_r", hidden), w("u_h", hidden));
        let mut b = |suffix: &str| store.add(&format!("{name}.{suffix}"), Tensor::zeros([hidden]));
        let (b_u, b_r, b_h) = (b("b_u"), b("b_r"), b("b_h"));
        Ok(Self {
            w_u,
            w_r,
            w_h,
            u_u,
            u_r,
            u_h,
            b_u,
            b_r,
            b_h,
            input_dim,
            hidden,
        })
    }

    pub fn num_params(&self) -> usize {
        3 * (self.hidden * self.input_dim + self.hidden * self.hidden + self.hidden)
    }

    /// Recurrence given the input projections (bias included) for this step.
    fn recur(&self, s: &mut Session<'_>, xu: Var, xr: Var, xh: Var, h: Var) -> Result<GruStep> {
        let (u_u, u_r, u_h) = (s.param(self.u_u), s.param(self.u_r), s.param(self.u_h));
        let g = &mut s.graph;
        let hu = g.matmul(h, u_u)?;
        let zu = g.add(xu, hu)?;
        let update = g.sigmoid(zu)?;
        let hr = g.matmul(h, u_r)?;
        let zr = g.add(xr, hr)?;
        let reset = g.sigmoid(zr)?;
        let rh = g.mul(reset, h)?;
        let rhu = g.matmul(rh, u_h)?;
        let zh = g.add(xh, rhu)?;
        let cand = g.tanh(zh)?;
        let delta = g.sub(cand, h)?;
        let step = g.mul(update, delta)?;
        let hidden = g.add(h, step)?;
        Ok(GruStep {
            update,
            reset,
            hidden,
        })
    }

    fn project(&self, s: &mut Session<'_>, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let (w, b) = (s.param(w), s.param(b));
        let xw = s.graph.matmul(x, w)?;
        s.graph.add(xw, b)
    }

    /// One step: `x_t` (batch, input), `h` (batch, hidden).
    pub fn step(&self, s: &mut Session<'_>, x_t: Var, h: Var) -> Result<GruStep> {
        let (sx, sh) = (s.graph.shape(x_t).to_vec(), s.graph.shape(h).to_vec());
        if sx.len() != 2 || sx[1] != self.input_dim || sh != [sx[0], self.hidden] {
            return Err(Error::ShapeMismatch {
                op: "gru_step",
                left: sx,
                right: sh,
            });
        }
        let xu = self.project(s, x_t, self.w_u, self.b_u)?;
        let xr = self.project(s, x_t, self.w_r, self.b_r)?;
        let xh = self.project(s, x_t, self.w_h, self.b_h)?;
        self.recur(s, xu, xr, xh, h)
    }

    /// Runs over a (batch, time, input) sequence from a zero state. Returns
    /// the hidden states in processing order (reversed time when `reverse`).
    pub fn run(&self, s: &mut Session<'_>, x: Var, reverse: bool) -> Result<Vec<Var>> {
        let shape = s.graph.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "gru",
                left: shape,
                right: vec![self.input_dim, self.hidden],
            });
        }
        let (batch, len) = (shape[0], shape[1]);
        let flat = s.graph.reshape(x, &[batch * len, self.input_dim])?;
        // input projections for all steps at once
        let mut proj = [self.w_u, self.w_r, self.w_h]
            .into_iter()
            .zip([self.b_u, self.b_r, self.b_h])
            .map(|(w, b)| {
                let p = self.project(s, flat, w, b)?;
                s.graph.reshape(p, &[batch, len, self.hidden])
            });
        let (pu, pr, ph) = (proj.next().unwrap()?, proj.next().unwrap()?, proj.next().unwrap()?);
        let mut h = s.graph.constant(Tensor::zeros([batch, self.hidden]));
        let mut states = Vec::with_capacity(len);
        for i in 0..len {
            let t = if reverse { len - 1 - i } else { i };
            let xu = s.graph.select_time(pu, t)?;
            let xr = s.graph.select_time(pr, t)?;
            let xh = s.graph.select_time(ph, t)?;
            h = self.recur(s, xu, xr, xh, h)?.hidden;
            states.push(h);
        }
        Ok(states)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReturnMode {
    /// (batch, time, 2·hidden), backward outputs re-aligned to input time.
    Sequence,
    /// (batch, 2·hidden): forward final state ‖ backward final state.
    Final,
}

/// Two independent GRU cells reading the sequence forward and reversed.
#[derive(Clone, Debug)]
pub struct BiGru {
    pub forward_cell: GruCell,
    pub backward_cell: GruCell,
    pub mode: ReturnMode,
}

impl BiGru {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        mode: ReturnMode,
        seed: u64,
    ) -> Result<Self> {
        Ok(Self {
            forward_cell: GruCell::new(store, &format!("{name}.fwd"), input_dim, hidden, seed)?,
            backward_cell: GruCell::new(store, &format!("{name}.bwd"), input_dim, hidden, seed)?,
            mode,
        })
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward_cell.hidden
    }

    pub fn num_params(&self) -> usize {
        self.forward_cell.num_params() + self.backward_cell.num_params()
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let fwd = self.forward_cell.run(s, x, false)?;
        let mut bwd = self.backward_cell.run(s, x, true)?;
        match self.mode {
            ReturnMode::Final => s.graph.concat(&[*fwd.last().unwrap(), *bwd.last().unwrap()]),
            ReturnMode::Sequence => {
                bwd.reverse();
                let f = s.graph.stack_time(&fwd)?;
                let b = s.graph.stack_time(&bwd)?;
                s.graph.concat(&[f, b])
            }
        }
    }
}
