//! The DeepHeteroIoT network and its ablation variants.
//!
//! Feature layout entering the head (full variant, default widths):
//!
//! ```text
//! [0, 64)    F3   conv block, kernel 3
//! [64, 128)  F5
//! [128, 192) F7
//! [192, 256) F11
//! [256, 384) gru3 (forward final ‖ backward final)
//! ```
//!
//! Parameter names are shared between variants so that components present
//! in two variants receive identical initial values for the same seed.

mod config;

use std::ops::Range;

pub use config::{ModelConfig, Variant};

use crate::autodiff::{ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{
    global_avg_pool, maxpool1d, Activation, BatchNorm, BiGru, Conv1d, Dense, LayerNorm, Mode,
    ReturnMode, Session,
};

/// Conv layers per block; max-pool follows the layers at these 1-based positions.
pub const BLOCK_DEPTH: usize = 9;
pub const POOL_AFTER: [usize; 2] = [3, 6];

/// Nine causal conv layers with ReLU, two max-pools and a global average pool.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub kernel: usize,
    pub layers: Vec<Conv1d>,
}

impl ConvBlock {
    pub fn new(store: &mut ParamStore, name: &str, kernel: usize, filters: [usize; 2], seed: u64) -> Result<Self> {
        let mut layers = Vec::with_capacity(BLOCK_DEPTH);
        let mut cin = 1;
        for i in 1..=BLOCK_DEPTH {
            let cout = if i <= POOL_AFTER[0] { filters[0] } else { filters[1] };
            layers.push(Conv1d::new(store, &format!("{name}.conv{i}"), cin, cout, kernel, seed)?);
            cin = cout;
        }
        Ok(Self { kernel, layers })
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_channels)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Conv1d::num_params).sum()
    }

    /// (batch, 1, time) → (batch, filters[1]).
    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(s, h)?;
            h = s.graph.relu(h)?;
            if POOL_AFTER.contains(&(i + 1)) {
                h = maxpool1d(s, h, 2)?;
            }
        }
        global_avg_pool(s, h)
    }
}

/// Stacked Bi-GRU layers, each followed by batch norm. All but the last
/// return full sequences; the last returns final states.
#[derive(Clone, Debug)]
pub struct GruStack {
    pub layers: Vec<(BiGru, BatchNorm)>,
}

impl GruStack {
    pub fn new(store: &mut ParamStore, dims: &[usize], seed: u64) -> Result<Self> {
        let mut layers = Vec::with_capacity(dims.len());
        let mut input = 1;
        for (i, &d) in dims.iter().enumerate() {
            let mode = if i + 1 == dims.len() { ReturnMode::Final } else { ReturnMode::Sequence };
            let gru = BiGru::new(store, &format!("global.gru{}", i + 1), input, d, mode, seed)?;
            let bn = BatchNorm::new(store, &format!("global.bn{}", i + 1), gru.output_dim());
            input = gru.output_dim();
            layers.push((gru, bn));
        }
        Ok(Self { layers })
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |(g, _)| g.output_dim())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|(g, b)| g.num_params() + b.num_params()).sum()
    }

    /// (batch, time, 1) → (batch, 2·last dim).
    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        for (gru, bn) in &self.layers {
            h = gru.forward(s, h)?;
            h = bn.forward(s, h)?;
        }
        Ok(h)
    }
}

/// Dense → ReLU → LayerNorm per hidden width, then a linear classifier.
#[derive(Clone, Debug)]
pub struct MlpHead {
    pub hidden: Vec<(Dense, LayerNorm)>,
    pub classifier: Dense,
}

impl MlpHead {
    pub fn new(store: &mut ParamStore, inputs: usize, widths: &[usize], classes: usize, seed: u64) -> Result<Self> {
        let mut hidden = Vec::with_capacity(widths.len());
        let mut d = inputs;
        for (i, &w) in widths.iter().enumerate() {
            let dense = Dense::new(store, &format!("head.dense{}", i + 1), d, w, Activation::Relu, seed)?;
            let ln = LayerNorm::new(store, &format!("head.ln{}", i + 1), w)?;
            hidden.push((dense, ln));
            d = w;
        }
        let classifier = Dense::new(store, "head.out", d, classes, Activation::None, seed)?;
        Ok(Self { hidden, classifier })
    }

    pub fn num_params(&self) -> usize {
        self.hidden
            .iter()
            .map(|(d, l)| d.num_params() + l.num_params())
            .sum::<usize>()
            + self.classifier.num_params()
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        for (dense, ln) in &self.hidden {
            h = dense.forward(s, h)?;
            h = ln.forward(s, h)?;
        }
        self.classifier.forward(s, h)
    }
}

#[derive(Clone, Debug)]
pub struct DeepHeteroIoT {
    config: ModelConfig,
    pub store: ParamStore,
    pub blocks: Vec<ConvBlock>,
    pub gru: Option<GruStack>,
    pub head: MlpHead,
}

impl DeepHeteroIoT {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let mut store = ParamStore::new();
        let mut blocks = Vec::new();
        if config.variant.has_local() {
            for &k in &config.kernel_sizes {
                blocks.push(ConvBlock::new(&mut store, &format!("local.k{k}"), k, config.conv_filters, seed)?);
            }
        }
        let gru = if config.variant.has_global() {
            Some(GruStack::new(&mut store, &config.gru_dims, seed)?)
        } else {
            None
        };
        let head = MlpHead::new(
            &mut store,
            config.feature_width(),
            &config.mlp_widths,
            config.num_classes,
            seed,
        )?;
        Ok(Self {
            config,
            store,
            blocks,
            gru,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn num_params(&self) -> usize {
        self.blocks.iter().map(ConvBlock::num_params).sum::<usize>()
            + self.gru.as_ref().map_or(0, GruStack::num_params)
            + self.head.num_params()
    }

    /// Named slices of the feature vector, in concatenation order.
    pub fn feature_layout(&self) -> Vec<(String, Range<usize>)> {
        if self.config.variant == Variant::MlpOnly {
            return vec![("raw".into(), 0..self.config.input_len)];
        }
        let mut out = Vec::new();
        let mut at = 0;
        for b in &self.blocks {
            out.push((format!("F{}", b.kernel), at..at + b.output_dim()));
            at += b.output_dim();
        }
        if let Some(g) = &self.gru {
            out.push(("gru3".into(), at..at + g.output_dim()));
        }
        out
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 3 || shape[1] != 1 || shape[2] != self.config.input_len {
            return Err(Error::ShapeMismatch {
                op: "model input",
                left: shape.to_vec(),
                right: vec![0, 1, self.config.input_len],
            });
        }
        Ok(())
    }

    /// (batch, 1, t) → (batch, feature width).
    pub fn features(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let shape = s.graph.shape(x).to_vec();
        self.check_input(&shape)?;
        let (b, t) = (shape[0], shape[2]);
        if self.config.variant == Variant::MlpOnly {
            return s.graph.reshape(x, &[b, t]);
        }
        let mut parts = Vec::with_capacity(self.blocks.len() + 1);
        for block in &self.blocks {
            parts.push(block.forward(s, x)?);
        }
        if let Some(g) = &self.gru {
            let seq = s.graph.reshape(x, &[b, t, 1])?;
            parts.push(g.forward(s, seq)?);
        }
        if parts.len() == 1 {
            Ok(parts[0])
        } else {
            s.graph.concat(&parts)
        }
    }

    /// (batch, 1, t) → logits (batch, classes).
    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let f = self.features(s, x)?;
        self.head.forward(s, f)
    }

    /// Inference-mode logits for a (batch, 1, t) tensor.
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        let mut s = Session::new(&self.store, Mode::Infer);
        let x = s.input(batch.clone());
        let y = self.forward(&mut s, x)?;
        Ok(s.graph.value(y).clone())
    }

    /// Packs `rows` (each of length t) into a (batch, 1, t) tensor.
    pub fn batch_tensor<'r, I>(&self, rows: I) -> Result<Tensor>
    where
        I: IntoIterator<Item = &'r [f64]>,
    {
        let t = self.config.input_len;
        let mut data = Vec::new();
        let mut n = 0;
        for r in rows {
            if r.len() != t {
                return Err(Error::ShapeMismatch {
                    op: "model input",
                    left: vec![r.len()],
                    right: vec![t],
                });
            }
            data.extend_from_slice(r);
            n += 1;
        }
        Tensor::new([n, 1, t], data)
    }
}
