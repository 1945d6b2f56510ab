//! Layer vocabulary: causal conv, pooling, dense, batch/layer norm, GRU and
//! bidirectional GRU, and softmax cross-entropy. Layers are plain parameter
//! handles; a [`Session`] binds them to one forward pass.

mod conv;
mod dense;
pub mod init;
mod norm;
mod gru;

use std::collections::HashMap;

pub use conv::{global_avg_pool, maxpool1d, Conv1d};
pub use dense::{Activation, Dense};
pub use gru::{BiGru, GruCell, GruStep, ReturnMode};
pub use norm::{BatchNorm, LayerNorm, RunningStatUpdate};

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// One forward pass over a parameter store.
///
/// Training sessions record a differentiable graph and collect batch-norm
/// running-statistic updates; they are applied to the store only after the
/// optimizer step via [`Session::apply_updates`]. Inference sessions
/// record nothing.
pub struct Session<'a> {
    pub graph: Graph,
    pub store: &'a ParamStore,
    pub mode: Mode,
    updates: Vec<RunningStatUpdate>,
    bound: HashMap<ParamId, Var>,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore, mode: Mode) -> Self {
        let graph = match mode {
            Mode::Train => Graph::new(),
            Mode::Infer => Graph::no_grad(),
        };
        Self::with_graph(graph, store, mode)
    }

    pub fn with_graph(graph: Graph, store: &'a ParamStore, mode: Mode) -> Self {
        Self {
            graph,
            store,
            mode,
            updates: Vec::new(),
            bound: HashMap::new(),
        }
    }

    /// The graph variable for a parameter, bound once per session.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.graph.param(self.store, id);
        self.bound.insert(id, v);
        v
    }

    /// Binds `id` to an existing graph variable instead of the stored value.
    pub fn bind(&mut self, id: ParamId, var: Var) {
        self.bound.insert(id, var);
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.graph.constant(t)
    }

    pub(crate) fn push_update(&mut self, u: RunningStatUpdate) {
        self.updates.push(u);
    }

    pub fn pending_updates(&self) -> &[RunningStatUpdate] {
        &self.updates
    }

    pub fn take_updates(&mut self) -> Vec<RunningStatUpdate> {
        std::mem::take(&mut self.updates)
    }

    pub fn into_parts(self) -> (Graph, Vec<RunningStatUpdate>) {
        (self.graph, self.updates)
    }
}

/// Applies collected running-statistic updates in order.
pub fn apply_updates(store: &mut ParamStore, updates: &[RunningStatUpdate]) {
    for u in updates {
        u.apply(store);
    }
}

/// Mean softmax cross-entropy and the class-probability matrix.
pub fn softmax_cross_entropy(s: &mut Session<'_>, logits: Var, labels: &[usize]) -> Result<(Var, Tensor)> {
    s.graph.softmax_cross_entropy(logits, labels)
}
