use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::benchmarks::{latin_hypercube, uniform};
use crate::error::{CpboError, Result};
use crate::normal;
use crate::space::Config;

const LENGTHSCALES: [f64; 6] = [0.05, 0.1, 0.2, 0.3, 0.5, 1.0];
const NOISES: [f64; 4] = [1e-6, 1e-3, 1e-2, 1e-1];
const N_RANDOM: usize = 1000;
const N_TOP: usize = 5;
const PERTURB_SD: [f64; 3] = [0.02, 0.05, 0.1];
const PER_SCALE: usize = 20;
/// Values this close to zero are rounding residue and compare as equal.
pub const VALUE_FLOOR: f64 = 1e-12;

fn denoise(v: f64) -> f64 {
    if v.abs() < VALUE_FLOOR {
        0.0
    } else {
        v
    }
}

/// Every evaluation the inner optimizer made, in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub points: Vec<Config>,
    pub values: Vec<f64>,
    pub n_initial: usize,
}

impl OptimizerTrace {
    /// Best evaluated point; the earliest wins among values equal after
    /// rounding residue is zeroed.
    pub fn best(&self) -> Option<(&Config, f64)> {
        self.values
            .iter()
            .enumerate()
            .fold(None, |acc: Option<(usize, f64)>, (i, &v)| match acc {
                Some((j, _)) if denoise(self.values[j]) >= denoise(v) => acc,
                _ => Some((i, v)),
            })
            .map(|(i, v)| (&self.points[i], v))
    }
}

/// Exact GP regression with an isotropic RBF kernel on standardized targets.
struct SmallGp {
    x: Vec<Config>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
    lengthscale: f64,
}

fn rbf(a: &[f64], b: &[f64], ls: f64) -> f64 {
    let q: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-0.5 * q / (ls * ls)).exp()
}

impl SmallGp {
    fn fit(x: &[Config], y: &[f64]) -> Option<Self> {
        let n = x.len();
        let yv = DVector::from_column_slice(y);
        let mut best: Option<(f64, Self)> = None;
        for &ls in &LENGTHSCALES {
            let base = DMatrix::from_fn(n, n, |i, j| rbf(&x[i].0, &x[j].0, ls));
            for &noise in &NOISES {
                let mut k = base.clone();
                for i in 0..n {
                    k[(i, i)] += noise;
                }
                let Some(chol) = k.cholesky() else { continue };
                let alpha = chol.solve(&yv);
                let logdet: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
                let lml = -0.5 * yv.dot(&alpha) - logdet;
                if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                    best = Some((
                        lml,
                        Self {
                            x: x.to_vec(),
                            chol,
                            alpha,
                            lengthscale: ls,
                        },
                    ));
                }
            }
        }
        best.map(|(_, gp)| gp)
    }

    fn predict(&self, p: &[f64]) -> (f64, f64) {
        let k = DVector::from_iterator(
            self.x.len(),
            self.x.iter().map(|xi| rbf(&xi.0, p, self.lengthscale)),
        );
        let mean = k.dot(&self.alpha);
        let v = self.chol.solve(&k);
        let var = (1.0 - k.dot(&v)).max(1e-12);
        (mean, var.sqrt())
    }
}

fn expected_improvement(mean: f64, sd: f64, best: f64) -> f64 {
    let z = (mean - best) / sd;
    (mean - best) * normal::cdf(z) + sd * normal::pdf(z)
}

/// Maximizes a noisy black-box function on the unit cube: a Latin hypercube
/// batch of `n_initial` points, then `n_refine` expected-improvement steps
/// on a GP fitted to the evaluations so far. Returns the best evaluated point.
pub fn maximize<F, R>(
    mut f: F,
    dim: usize,
    n_initial: usize,
    n_refine: usize,
    rng: &mut R,
) -> Result<(Config, f64, OptimizerTrace)>
where
    F: FnMut(&Config) -> f64,
    R: Rng + ?Sized,
{
    if n_initial == 0 {
        return Err(CpboError::InvalidParameter("need at least one initial point".into()));
    }
    let mut trace = OptimizerTrace {
        n_initial,
        ..Default::default()
    };
    for x in latin_hypercube(n_initial, dim, rng.random())? {
        let v = f(&x);
        trace.points.push(x);
        trace.values.push(v);
    }
    for _ in 0..n_refine {
        let x = propose(&trace, dim, rng);
        let v = f(&x);
        trace.points.push(x);
        trace.values.push(v);
    }
    let (x, v) = trace
        .best()
        .map(|(x, v)| (x.clone(), v))
        .ok_or_else(|| CpboError::Degenerate("no evaluations".into()))?;
    if !v.is_finite() {
        return Err(CpboError::NonFinite("acquisition value"));
    }
    Ok((x, v, trace))
}

fn propose<R: Rng + ?Sized>(trace: &OptimizerTrace, dim: usize, rng: &mut R) -> Config {
    let vals: Vec<f64> = trace.values.iter().map(|&v| denoise(v)).collect();
    let n = vals.len() as f64;
    let mu = vals.iter().sum::<f64>() / n;
    let sd = (vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n).sqrt();
    let sd = if sd > VALUE_FLOOR { sd } else { 1.0 };
    let y: Vec<f64> = vals.iter().map(|v| (v - mu) / sd).collect();
    let best = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut candidates = uniform(N_RANDOM, dim, rng);
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[b].total_cmp(&y[a]));
    for &i in order.iter().take(N_TOP) {
        for &s in &PERTURB_SD {
            for _ in 0..PER_SCALE {
                let c = trace.points[i]
                    .0
                    .iter()
                    .map(|&v| v + s * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                candidates.push(Config::clamped(c));
            }
        }
    }
    let Some(gp) = SmallGp::fit(&trace.points, &y) else {
        return candidates.swap_remove(0);
    };
    let mut best_ei = f64::NEG_INFINITY;
    let mut best_idx = 0;
    for (i, c) in candidates.iter().enumerate() {
        let (m, s) = gp.predict(&c.0);
        let ei = expected_improvement(m, s, best);
        if ei > best_ei {
            best_ei = ei;
            best_idx = i;
        }
    }
    candidates.swap_remove(best_idx)
}
