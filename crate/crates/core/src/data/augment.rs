use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};

/// Jitter plus global scaling. Each original sample gains one jittered
/// copy (noise σ = `jitter`·sequence std) and one copy scaled by a factor
/// drawn from N(1, `scale`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub jitter: f64,
    pub scale: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            jitter: 0.05,
            scale: 0.1,
            seed: 0,
        }
    }
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Jittered copy with noise σ = `jitter · std(v)`. A constant sequence
/// uses unit std so that it is not copied verbatim.
pub fn jitter(v: &[f64], jitter: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sd = std_dev(v);
    let sigma = jitter * if sd > 0.0 { sd } else { 1.0 };
    let noise = Normal::new(0.0, sigma).expect("finite sigma");
    v.iter().map(|&x| x + noise.sample(rng)).collect()
}

/// Returns the originals followed by all jittered copies, then all scaled
/// copies (3N samples); labels are preserved.
pub fn augment_timeseries(train: &Dataset, cfg: &AugmentConfig) -> Result<Dataset> {
    train.check_complete()?;
    if !(cfg.jitter >= 0.0 && cfg.scale >= 0.0) {
        return Err(Error::invalid("augmentation sigmas must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = train.clone();
    for i in 0..train.len() {
        let v = jitter(train.sequence(i), cfg.jitter, &mut rng);
        out.push(format!("{}~jit", train.ids()[i]), train.labels()[i], &v)?;
    }
    let factor = Normal::new(1.0, cfg.scale).expect("finite sigma");
    for i in 0..train.len() {
        let f = factor.sample(&mut rng);
        let v: Vec<f64> = train.sequence(i).iter().map(|x| x * f).collect();
        out.push(format!("{}~scl", train.ids()[i]), train.labels()[i], &v)?;
    }
    Ok(out)
}
