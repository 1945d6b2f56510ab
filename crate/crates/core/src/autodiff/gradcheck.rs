//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so that gradients that are
/// zero up to round-off are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradMismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tol: f64,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Entries accepted only by a one-sided difference.
    pub one_sided: usize,
    pub failures: Vec<GradMismatch>,
}

impl GradCheckReport {
    pub fn empty(tol: f64) -> Self {
        Self {
            tol,
            checked: 0,
            max_rel_error: 0.0,
            one_sided: 0,
            failures: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// Folds another report into this one (same tolerance assumed).
    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.one_sided += other.one_sided;
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.failures.extend(other.failures);
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::no_grad();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item())
}

/// Checks d f / d inputs for a scalar-valued `f` against central
/// differences with step `1e-5·max(1, |x|)`. When `max_entries` is set, at
/// most that many coordinates per input are probed (chosen with `seed`).
pub fn check_gradients<F>(
    f: F,
    inputs: &[Tensor],
    tol: f64,
    max_entries: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    check(f, inputs, tol, max_entries, seed, false)
}

/// [`check_gradients`] for piecewise-smooth functions: an entry whose
/// central difference disagrees still passes when the forward or the
/// backward difference agrees, since the central stencil may straddle a
/// kink that the analytic gradient does not see.
pub fn check_gradients_piecewise<F>(
    f: F,
    inputs: &[Tensor],
    tol: f64,
    max_entries: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    check(f, inputs, tol, max_entries, seed, true)
}

fn check<F>(
    f: F,
    inputs: &[Tensor],
    tol: f64,
    max_entries: Option<usize>,
    seed: u64,
    piecewise: bool,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(Error::NonScalarLoss(g.value(out).shape().to_vec()));
    }
    let analytic: Vec<Tensor> = if g.requires_grad(out) {
        g.backward(out)?;
        vars.iter()
            .zip(inputs)
            .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    } else {
        inputs.iter().map(|t| Tensor::zeros(t.shape())).collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::empty(tol);
    let mut base = None;
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.len();
        let idx: Vec<usize> = match max_entries {
            Some(k) if k < n => {
                let mut v = sample(&mut rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        for j in idx {
            let x = input.data()[j];
            let h = 1e-5 * x.abs().max(1.0);
            probe[i].data_mut()[j] = x + h;
            let up = eval(&f, &probe)?;
            probe[i].data_mut()[j] = x - h;
            let down = eval(&f, &probe)?;
            probe[i].data_mut()[j] = x;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[i].data()[j];
            let mut rel = rel_error(a, numeric);
            if piecewise && rel > tol {
                let y = match base {
                    Some(y) => y,
                    None => *base.insert(eval(&f, inputs)?),
                };
                let one_sided = rel_error(a, (up - y) / h).min(rel_error(a, (y - down) / h));
                if one_sided <= tol {
                    report.one_sided += 1;
                    rel = one_sided;
                }
            }
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel > tol {
                report.failures.push(GradMismatch {
                    input: i,
                    index: j,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
        }
    }
    Ok(report)
}

/// Single-input form of [`check_gradients`] probing every coordinate.
pub fn finite_diff_check<F>(f: F, x: &Tensor, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    check_gradients(|g, v| f(g, v[0]), std::slice::from_ref(x), tol, None, 0)
}
