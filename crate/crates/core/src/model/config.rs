use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which branches feed the MLP head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Convolution ensemble and Bi-GRU stack, concatenated.
    Full,
    /// Bi-GRU stack only.
    GlobalOnly,
    /// Convolution ensemble only.
    LocalOnly,
    /// Raw sequence straight into the head.
    MlpOnly,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::GlobalOnly,
        Variant::LocalOnly,
        Variant::MlpOnly,
        Variant::Full,
    ];

    pub fn has_local(self) -> bool {
        matches!(self, Variant::Full | Variant::LocalOnly)
    }

    pub fn has_global(self) -> bool {
        matches!(self, Variant::Full | Variant::GlobalOnly)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::GlobalOnly => "global-only",
            Variant::LocalOnly => "local-only",
            Variant::MlpOnly => "mlp-only",
        }
    }

    /// Row label used in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "DeepHeteroIoT",
            Variant::GlobalOnly => "Global Features",
            Variant::LocalOnly => "Local Features",
            Variant::MlpOnly => "MLP Head",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "global-only" => Ok(Variant::GlobalOnly),
            "local-only" => Ok(Variant::LocalOnly),
            "mlp-only" => Ok(Variant::MlpOnly),
            other => Err(Error::invalid(format!("unknown variant `{other}`"))),
        }
    }
}

/// Network hyperparameters. Defaults are the published architecture:
/// kernels 3/5/7/11, 128 then 64 filters, Bi-GRU widths 128/64/64 and a
/// 1024/512/256/64 bottleneck head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub input_len: usize,
    pub num_classes: usize,
    #[serde(default = "defaults::kernel_sizes")]
    pub kernel_sizes: Vec<usize>,
    /// Filters before and after the first max-pool of each conv block.
    #[serde(default = "defaults::conv_filters")]
    pub conv_filters: [usize; 2],
    #[serde(default = "defaults::gru_dims")]
    pub gru_dims: Vec<usize>,
    #[serde(default = "defaults::mlp_widths")]
    pub mlp_widths: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn kernel_sizes() -> Vec<usize> {
        vec![3, 5, 7, 11]
    }
    pub fn conv_filters() -> [usize; 2] {
        [128, 64]
    }
    pub fn gru_dims() -> Vec<usize> {
        vec![128, 64, 64]
    }
    pub fn mlp_widths() -> Vec<usize> {
        vec![1024, 512, 256, 64]
    }
}

impl ModelConfig {
    pub fn new(variant: Variant, input_len: usize, num_classes: usize) -> Self {
        Self {
            variant,
            input_len,
            num_classes,
            kernel_sizes: defaults::kernel_sizes(),
            conv_filters: defaults::conv_filters(),
            gru_dims: defaults::gru_dims(),
            mlp_widths: defaults::mlp_widths(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// Divides every filter count and width by `divisor` (floored at 2).
    pub fn scaled(mut self, divisor: usize) -> Self {
        let div = |v: usize| (v / divisor.max(1)).max(2);
        self.conv_filters = self.conv_filters.map(div);
        self.gru_dims.iter_mut().for_each(|v| *v = div(*v));
        self.mlp_widths.iter_mut().for_each(|v| *v = div(*v));
        self
    }

    /// Width of the local feature vector (one GAP output per block).
    pub fn local_width(&self) -> usize {
        if self.variant.has_local() {
            self.kernel_sizes.len() * self.conv_filters[1]
        } else {
            0
        }
    }

    pub fn global_width(&self) -> usize {
        if self.variant.has_global() {
            2 * self.gru_dims.last().copied().unwrap_or(0)
        } else {
            0
        }
    }

    /// Width of the vector entering the MLP head.
    pub fn feature_width(&self) -> usize {
        match self.variant {
            Variant::MlpOnly => self.input_len,
            _ => self.local_width() + self.global_width(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.input_len < 1 {
            return bad("input_len must be positive".into());
        }
        if self.mlp_widths.is_empty() || self.mlp_widths.iter().any(|&w| w < 2) {
            return bad(format!("mlp widths must be >= 2, got {:?}", self.mlp_widths));
        }
        if self.variant.has_local() {
            if self.kernel_sizes.is_empty() || self.kernel_sizes.contains(&0) {
                return bad(format!("invalid kernel sizes {:?}", self.kernel_sizes));
            }
            // Branch parameters are named by kernel size.
            let mut sorted = self.kernel_sizes.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != self.kernel_sizes.len() {
                return bad(format!("duplicate kernel sizes {:?}", self.kernel_sizes));
            }
            if self.conv_filters.contains(&0) {
                return bad(format!("invalid conv filters {:?}", self.conv_filters));
            }
            if self.input_len < 4 {
                return bad(format!(
                    "conv blocks pool twice and need input_len >= 4, got {}",
                    self.input_len
                ));
            }
        }
        if self.variant.has_global() && (self.gru_dims.is_empty() || self.gru_dims.contains(&0)) {
            return bad(format!("invalid GRU dims {:?}", self.gru_dims));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
