//! Borderline-SMOTE (borderline-1) oversampling to equal class counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoteConfig {
    /// Same-class neighbours a synthetic partner is drawn from.
    pub k: usize,
    /// Neighbours (any class) inspected to classify a sample.
    pub m: usize,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        Self { k: 5, m: 5, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointKind {
    Safe,
    Danger,
    Noise,
}

/// Classifies a sample from the number of other-class samples among its
/// `m` nearest neighbours.
pub fn classify(other_class: usize, m: usize) -> PointKind {
    if other_class >= m {
        PointKind::Noise
    } else if 2 * other_class >= m {
        PointKind::Danger
    } else {
        PointKind::Safe
    }
}

/// How a minority class was brought up to the majority count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Already at the majority count.
    None,
    /// Seeds were the DANGER samples.
    Borderline,
    /// No DANGER samples; seeds were the SAFE samples.
    SafeSeeds,
    /// Too few usable samples; existing samples were repeated.
    Duplication,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    pub before: usize,
    pub after: usize,
    pub safe: usize,
    pub danger: usize,
    pub noise: usize,
    pub strategy: Strategy,
}

/// Provenance of one appended sample: output index and its two parents
/// (input indices). Duplicates have `seed == partner`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Synthetic {
    pub index: usize,
    pub seed: usize,
    pub partner: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoteReport {
    pub classes: Vec<ClassReport>,
    /// Per input sample; `None` for majority-class samples.
    pub kinds: Vec<Option<PointKind>>,
    pub synthetic: Vec<Synthetic>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `n` nearest members of `pool` to sample `i` (excluding `i`), by
/// Euclidean distance with ties to the lower index.
fn nearest(ds: &Dataset, i: usize, pool: &[usize], n: usize) -> Vec<usize> {
    let p = ds.sequence(i);
    let mut d: Vec<(f64, usize)> = pool
        .iter()
        .filter(|&&j| j != i)
        .map(|&j| (sq_dist(p, ds.sequence(j)), j))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.truncate(n);
    d.into_iter().map(|(_, j)| j).collect()
}

/// Appends synthetic samples until every class has the majority count.
///
/// Each minority sample is SAFE, DANGER or NOISE by its `m` nearest
/// neighbours. Seeds are the DANGER samples (SAFE if none); a synthetic is
/// `p + g·(q − p)` with `g ~ U[0, 1)` and `q` one of the `k` nearest
/// non-NOISE same-class samples. NOISE samples are never parents. Classes
/// with fewer than `k + 1` samples, or without any usable pair, are padded
/// by repetition with a warning.
pub fn bsmote_oversample(train: &Dataset, cfg: &SmoteConfig) -> Result<(Dataset, SmoteReport)> {
    train.check_complete()?;
    if cfg.k == 0 || cfg.m == 0 {
        return Err(Error::invalid("smote: k and m must be positive"));
    }
    let counts = train.class_counts();
    let target = counts.iter().copied().max().unwrap_or(0);
    let all: Vec<usize> = (0..train.len()).collect();
    let by_class = train.class_indices();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = train.clone();
    let mut kinds = vec![None; train.len()];
    let mut classes = Vec::new();
    let mut synthetic = Vec::new();

    for (c, members) in by_class.iter().enumerate() {
        let mut rep = ClassReport {
            class: train.class_names()[c].clone(),
            before: members.len(),
            after: members.len(),
            safe: 0,
            danger: 0,
            noise: 0,
            strategy: Strategy::None,
        };
        let need = target - members.len();
        if need == 0 || members.is_empty() {
            classes.push(rep);
            continue;
        }
        let mut danger = Vec::new();
        let mut safe = Vec::new();
        for &i in members {
            let others = nearest(train, i, &all, cfg.m)
                .into_iter()
                .filter(|&j| train.labels()[j] != c)
                .count();
            let kind = classify(others, cfg.m);
            kinds[i] = Some(kind);
            match kind {
                PointKind::Safe => safe.push(i),
                PointKind::Danger => danger.push(i),
                PointKind::Noise => {}
            }
        }
        rep.safe = safe.len();
        rep.danger = danger.len();
        rep.noise = members.len() - safe.len() - danger.len();
        let mut usable: Vec<usize> = danger.iter().chain(&safe).copied().collect();
        usable.sort_unstable();

        let (seeds, strategy) = if members.len() < cfg.k + 1 || usable.len() < 2 {
            (Vec::new(), Strategy::Duplication)
        } else if !danger.is_empty() {
            (danger, Strategy::Borderline)
        } else {
            (safe, Strategy::SafeSeeds)
        };
        rep.strategy = strategy;
        match strategy {
            Strategy::Duplication => {
                log::warn!(
                    "smote: class `{}` has {} samples ({} usable), padding by duplication",
                    rep.class,
                    members.len(),
                    usable.len()
                );
                let pool = if usable.is_empty() { members } else { &usable };
                for n in 0..need {
                    let p = pool[n % pool.len()];
                    let idx = out.len();
                    out.push(format!("{}~dup{n}", train.ids()[p]), c, train.sequence(p))?;
                    synthetic.push(Synthetic { index: idx, seed: p, partner: p });
                }
            }
            _ => {
                if strategy == Strategy::SafeSeeds {
                    log::warn!("smote: class `{}` has no borderline samples, seeding from safe ones", rep.class);
                }
                let partners: Vec<Vec<usize>> =
                    seeds.iter().map(|&p| nearest(train, p, &usable, cfg.k)).collect();
                let mut buf = vec![0.0; train.seq_len()];
                for n in 0..need {
                    let s = n % seeds.len();
                    let p = seeds[s];
                    let q = partners[s][rng.random_range(0..partners[s].len())];
                    let g: f64 = rng.random();
                    let (a, b) = (train.sequence(p), train.sequence(q));
                    for ((o, &x), &y) in buf.iter_mut().zip(a).zip(b) {
                        *o = (x + g * (y - x)).clamp(x.min(y), x.max(y));
                    }
                    let idx = out.len();
                    out.push(format!("{}~smote{n}", train.ids()[p]), c, &buf)?;
                    synthetic.push(Synthetic { index: idx, seed: p, partner: q });
                }
            }
        }
        rep.after = target;
        classes.push(rep);
    }
    Ok((
        out,
        SmoteReport {
            classes,
            kinds,
            synthetic,
        },
    ))
}
