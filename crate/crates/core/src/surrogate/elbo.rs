//! Negative ELBO and its gradient in whitened coordinates.
//!
//! The optimizer works with `v ~ N(m_v, S Sᵀ)` where `u = m + L_K v` and
//! `L_K` is the Cholesky factor of the training kernel matrix. The identity
//! initialization of `S` then coincides with the prior.

use nalgebra::{DMatrix, DVector};

use super::kernel::KernelParams;
use super::model::{sigmoid, softplus, GammaPrior, SurrogateModel, VariationalState};
use crate::error::{CpboError, Result};
use crate::linalg::cholesky_with_jitter;
use crate::preference::{label_prob_and_grad, Comparison, PROB_EPS};

/// Offsets of each parameter block inside the flat unconstrained vector:
/// raw lengthscales, mean constant, whitened mean, packed lower triangle of
/// `S` (raw diagonal), raw gamma.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub d: usize,
    pub t: usize,
}

impl Layout {
    pub fn ls(&self) -> usize {
        0
    }
    pub fn mean(&self) -> usize {
        self.d
    }
    pub fn mv(&self) -> usize {
        self.d + 1
    }
    pub fn chol(&self) -> usize {
        self.d + 1 + self.t
    }
    pub fn gamma(&self) -> usize {
        self.chol() + self.t * (self.t + 1) / 2
    }
    pub fn len(&self) -> usize {
        self.gamma() + 1
    }
    #[inline]
    pub fn row(&self, i: usize) -> usize {
        self.chol() + i * (i + 1) / 2
    }
}

/// Unconstrained parameters at the standard initialization: the model's
/// lengthscales, mean and gamma with `m_v = 0`, `S = I`.
pub(crate) fn initial_theta(model: &SurrogateModel) -> Vec<f64> {
    let lay = Layout {
        d: model.dim(),
        t: model.train_configs.len(),
    };
    let mut theta = vec![0.0; lay.len()];
    for (k, &l) in model.kernel.lengthscales().iter().enumerate() {
        theta[lay.ls() + k] = super::model::inv_softplus(l);
    }
    theta[lay.mean()] = model.mean_const;
    let one = super::model::inv_softplus(1.0);
    for i in 0..lay.t {
        theta[lay.row(i) + i] = one;
    }
    theta[lay.gamma()] = model.raw_gamma;
    theta
}

fn whitened_factor(theta: &[f64], lay: Layout) -> DMatrix<f64> {
    let mut s = DMatrix::<f64>::zeros(lay.t, lay.t);
    for i in 0..lay.t {
        for j in 0..i {
            s[(i, j)] = theta[lay.row(i) + j];
        }
        s[(i, i)] = softplus(theta[lay.row(i) + i]);
    }
    s
}

/// Writes `theta` back into the model in `(m_u, L)` form.
pub(crate) fn unpack(theta: &[f64], model: &mut SurrogateModel) -> Result<()> {
    let lay = Layout {
        d: model.dim(),
        t: model.train_configs.len(),
    };
    let ls: Vec<f64> = (0..lay.d).map(|k| softplus(theta[lay.ls() + k])).collect();
    model.kernel = KernelParams::with_output_scale(ls, model.kernel.output_scale())?;
    model.mean_const = theta[lay.mean()];
    model.raw_gamma = theta[lay.gamma()];
    if lay.t == 0 {
        model.variational = VariationalState::standard(0);
        return Ok(());
    }
    let k = super::kernel::kernel_matrix(&model.train_configs, &model.train_configs, &model.kernel)?;
    let (chol, _) = cholesky_with_jitter(&k, model.jitter)?;
    let lk = chol.l();
    let mv = DVector::from_column_slice(&theta[lay.mv()..lay.mv() + lay.t]);
    let mu = (&lk * mv).add_scalar(model.mean_const);
    let l = &lk * whitened_factor(theta, lay);
    model.variational = VariationalState {
        mean: mu.iter().copied().collect(),
        chol_factor: (0..lay.t)
            .map(|i| (0..lay.t).map(|j| if j <= i { l[(i, j)] } else { 0.0 }).collect())
            .collect(),
    };
    Ok(())
}

/// Inverse of [`unpack`]: the unconstrained vector for the model's current
/// `(m_u, L)`, recovering `m_v = L_K⁻¹ (m_u - m)` and `S = L_K⁻¹ L`.
pub(crate) fn pack(model: &SurrogateModel) -> Result<Vec<f64>> {
    let lay = Layout {
        d: model.dim(),
        t: model.train_configs.len(),
    };
    let mut theta = initial_theta(model);
    if lay.t == 0 {
        return Ok(theta);
    }
    let k = super::kernel::kernel_matrix(&model.train_configs, &model.train_configs, &model.kernel)?;
    let (chol, _) = cholesky_with_jitter(&k, model.jitter)?;
    let lk = chol.l();
    let mu = model.variational.mean_vector().add_scalar(-model.mean_const);
    let mv = lk
        .solve_lower_triangular(&mu)
        .ok_or(CpboError::NonFinite("whitened mean"))?;
    let s = lk
        .solve_lower_triangular(&model.variational.factor_matrix())
        .ok_or(CpboError::NonFinite("whitened factor"))?;
    for i in 0..lay.t {
        theta[lay.mv() + i] = mv[i];
        for j in 0..i {
            theta[lay.row(i) + j] = s[(i, j)];
        }
        if !(s[(i, i)] > 0.0) {
            return Err(CpboError::NonFinite("whitened factor diagonal"));
        }
        theta[lay.row(i) + i] = super::model::inv_softplus(s[(i, i)]);
    }
    Ok(theta)
}

/// Analytic and central-difference derivative of the training loss with
/// respect to one unconstrained parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEntry {
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradientEntry {
    /// `|a - n| / max(1, |a|, |n|)`, so near-zero derivatives are judged in
    /// absolute terms.
    pub fn relative_error(&self) -> f64 {
        let scale = 1.0_f64.max(self.analytic.abs()).max(self.numeric.abs());
        (self.analytic - self.numeric).abs() / scale
    }
}

/// Checks the loss gradient at the model's current parameters against
/// central differences of step `h`, with `n_samples` base draws from `seed`
/// held fixed. Covers every trainable parameter (gamma only when learnable).
pub fn gradient_check(
    model: &SurrogateModel,
    comparisons: &[Comparison],
    n_samples: usize,
    h: f64,
    seed: u64,
) -> Result<Vec<GradientEntry>> {
    use rand::Rng;
    if !(h > 0.0) || n_samples == 0 {
        return Err(CpboError::InvalidParameter("step and sample count must be positive".into()));
    }
    let t = model.train_configs.len();
    for c in comparisons {
        if c.prev >= t {
            return Err(CpboError::MissingLatent(c.prev));
        }
        if c.curr >= t {
            return Err(CpboError::MissingLatent(c.curr));
        }
    }
    let theta = pack(model)?;
    let obj = Objective::new(comparisons, model);
    let lay = obj.lay;
    let mut r = crate::rng::stream(seed, &[crate::rng::tag("gradient-check")]);
    let z: Vec<f64> = (0..n_samples * t).map(|_| r.sample(rand_distr::StandardNormal)).collect();
    let mut grad = vec![0.0; theta.len()];
    obj.loss_and_grad(&theta, &z, &mut grad)?;

    let mut names = Vec::with_capacity(theta.len());
    for k in 0..lay.d {
        names.push(format!("lengthscale[{k}]"));
    }
    names.push("mean".to_string());
    for i in 0..t {
        names.push(format!("whitened_mean[{i}]"));
    }
    for i in 0..t {
        for j in 0..=i {
            names.push(format!("whitened_factor[{i},{j}]"));
        }
    }
    names.push("gamma".to_string());

    let mut scratch = vec![0.0; theta.len()];
    let mut out = Vec::with_capacity(theta.len());
    for (k, name) in names.into_iter().enumerate() {
        if k == lay.gamma() && model.gamma_frozen {
            continue;
        }
        let mut tp = theta.clone();
        tp[k] = theta[k] + h;
        let fp = obj.loss_and_grad(&tp, &z, &mut scratch)?;
        tp[k] = theta[k] - h;
        let fm = obj.loss_and_grad(&tp, &z, &mut scratch)?;
        out.push(GradientEntry {
            name,
            analytic: grad[k],
            numeric: (fp - fm) / (2.0 * h),
        });
    }
    Ok(out)
}

/// Everything the objective needs besides the parameters.
pub(crate) struct Objective<'a> {
    pub comparisons: &'a [Comparison],
    pub sigma: f64,
    pub output_scale: f64,
    pub jitter: f64,
    pub gamma_frozen: bool,
    pub prior: Option<GammaPrior>,
    pub lay: Layout,
    /// Squared coordinate differences per dimension, `t × t` each.
    sq_diff: Vec<DMatrix<f64>>,
}

impl<'a> Objective<'a> {
    pub fn new(comparisons: &'a [Comparison], model: &SurrogateModel) -> Self {
        let configs = &model.train_configs;
        let t = configs.len();
        let d = model.dim();
        let sq_diff = (0..d)
            .map(|k| {
                DMatrix::from_fn(t, t, |i, j| {
                    let diff = configs[i].0[k] - configs[j].0[k];
                    diff * diff
                })
            })
            .collect();
        Self {
            comparisons,
            sigma: model.sigma,
            output_scale: model.kernel.output_scale(),
            jitter: model.jitter,
            gamma_frozen: model.gamma_frozen,
            prior: model.lengthscale_prior,
            lay: Layout { d, t },
            sq_diff,
        }
    }

    /// Negative ELBO (minus the lengthscale log-prior if present) and its
    /// gradient. `z` holds `S` standard-normal vectors of length `t`, row by row.
    pub fn loss_and_grad(&self, theta: &[f64], z: &[f64], grad: &mut [f64]) -> Result<f64> {
        let Layout { d, t } = self.lay;
        let lay = self.lay;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let ls: Vec<f64> = (0..d).map(|k| softplus(theta[lay.ls() + k])).collect();
        let mv = &theta[lay.mv()..lay.mv() + t];
        let gamma = if self.gamma_frozen {
            0.0
        } else {
            softplus(theta[lay.gamma()])
        };
        let s = whitened_factor(theta, lay);

        // KL(N(m_v, S Sᵀ) || N(0, I))
        let mut kl = 0.0;
        for i in 0..t {
            kl += mv[i] * mv[i];
            for j in 0..=i {
                kl += s[(i, j)] * s[(i, j)];
            }
            kl -= 2.0 * s[(i, i)].ln();
        }
        kl = 0.5 * (kl - t as f64);
        for i in 0..t {
            grad[lay.mv() + i] = mv[i];
            for j in 0..=i {
                grad[lay.row(i) + j] = s[(i, j)];
            }
            grad[lay.row(i) + i] -= 1.0 / s[(i, i)];
        }

        let mut ell = 0.0;
        let mut g_gamma = 0.0;
        let n_samples = z.len() / t.max(1);
        if !self.comparisons.is_empty() && t > 0 && n_samples > 0 {
            let mut kern = DMatrix::<f64>::zeros(t, t);
            for i in 0..t {
                kern[(i, i)] = self.output_scale;
                for j in 0..i {
                    let mut q = 0.0;
                    for k in 0..d {
                        q += self.sq_diff[k][(i, j)] / (ls[k] * ls[k]);
                    }
                    let v = self.output_scale * (-0.5 * q).exp();
                    kern[(i, j)] = v;
                    kern[(j, i)] = v;
                }
            }
            let (chol, _) = cholesky_with_jitter(&kern, self.jitter)?;
            let lk = chol.l();
            let inv_s = 1.0 / n_samples as f64;
            let mut w = DVector::<f64>::zeros(t);
            let mut gu = DVector::<f64>::zeros(t);
            // G = Σ_s g_s w_sᵀ, for the lengthscale gradient through L_K
            let mut big_g = DMatrix::<f64>::zeros(t, t);
            for smp in 0..n_samples {
                let zs = &z[smp * t..(smp + 1) * t];
                for i in 0..t {
                    let mut acc = mv[i];
                    for j in 0..=i {
                        acc += s[(i, j)] * zs[j];
                    }
                    w[i] = acc;
                }
                let u = &lk * &w;
                gu.fill(0.0);
                for c in self.comparisons {
                    let delta = u[c.curr] - u[c.prev];
                    let (p, dp_dd, dp_dg) = label_prob_and_grad(delta, c.label, gamma, self.sigma);
                    let denom = p + PROB_EPS;
                    ell += denom.ln();
                    let g = dp_dd / denom;
                    gu[c.curr] += g;
                    gu[c.prev] -= g;
                    g_gamma += dp_dg / denom;
                }
                let gw = lk.tr_mul(&gu);
                for i in 0..t {
                    let gi = gw[i] * inv_s;
                    grad[lay.mv() + i] -= gi;
                    let row = lay.row(i);
                    for j in 0..=i {
                        grad[row + j] -= gi * zs[j];
                    }
                }
                big_g.ger(inv_s, &gu, &w, 1.0);
            }
            ell *= inv_s;
            g_gamma *= inv_s;

            // d<G, L_K>/dK via the Cholesky derivative dL = L Φ(L⁻¹ dK L⁻ᵀ)
            let mut phi = lk.tr_mul(&big_g);
            for i in 0..t {
                for j in i + 1..t {
                    phi[(i, j)] = 0.0;
                }
                phi[(i, i)] *= 0.5;
            }
            let a = lk
                .tr_solve_lower_triangular(&phi)
                .expect("nonsingular Cholesky factor");
            let h = lk
                .tr_solve_lower_triangular(&a.transpose())
                .expect("nonsingular Cholesky factor");
            let hs = (&h + h.transpose()) * 0.5;
            for k in 0..d {
                let l3 = ls[k] * ls[k] * ls[k];
                let mut acc = 0.0;
                for j in 0..t {
                    for i in 0..t {
                        if i != j {
                            acc += hs[(i, j)] * kern[(i, j)] * self.sq_diff[k][(i, j)];
                        }
                    }
                }
                grad[lay.ls() + k] -= acc / l3;
            }
        }

        let mut log_prior = 0.0;
        if let Some(prior) = self.prior {
            for k in 0..d {
                log_prior += prior.log_pdf(ls[k]);
                grad[lay.ls() + k] -= prior.d_log_pdf(ls[k]);
            }
        }

        for k in 0..d {
            grad[lay.ls() + k] *= sigmoid(theta[lay.ls() + k]);
        }
        for i in 0..t {
            grad[lay.row(i) + i] *= sigmoid(theta[lay.row(i) + i]);
        }
        grad[lay.gamma()] = if self.gamma_frozen {
            0.0
        } else {
            -g_gamma * sigmoid(theta[lay.gamma()])
        };

        let loss = kl - ell - log_prior;
        if !loss.is_finite() {
            return Err(CpboError::NonFinite("negative ELBO"));
        }
        Ok(loss)
    }
}
