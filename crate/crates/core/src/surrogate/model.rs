use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::kernel::{kernel_matrix, KernelParams};
use crate::error::{CpboError, Result};
use crate::linalg::{cholesky_with_jitter, symmetrize};
use crate::space::Config;

pub const DEFAULT_JITTER: f64 = 1e-4;

/// Gamma(shape, rate) prior placed on every lengthscale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl Default for GammaPrior {
    fn default() -> Self {
        Self {
            shape: 1.0,
            rate: 0.05,
        }
    }
}

impl GammaPrior {
    pub fn log_pdf(&self, x: f64) -> f64 {
        self.shape * self.rate.ln() - libm::lgamma(self.shape) + (self.shape - 1.0) * x.ln()
            - self.rate * x
    }

    pub fn d_log_pdf(&self, x: f64) -> f64 {
        (self.shape - 1.0) / x - self.rate
    }
}

/// `q(u) = N(mean, L Lᵀ)` over the latent utilities at the training configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub mean: Vec<f64>,
    /// Row-major lower-triangular factor.
    pub chol_factor: Vec<Vec<f64>>,
}

impl VariationalState {
    /// Standard initialization `m_u = 0`, `L = I`.
    pub fn standard(t: usize) -> Self {
        Self {
            mean: vec![0.0; t],
            chol_factor: (0..t)
                .map(|i| (0..t).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.mean.len();
        if self.chol_factor.len() != t || self.chol_factor.iter().any(|r| r.len() != t) {
            return Err(CpboError::InvalidParameter(
                "variational factor must be square and match the mean length".into(),
            ));
        }
        for (i, row) in self.chol_factor.iter().enumerate() {
            if !(row[i] > 0.0) {
                return Err(CpboError::InvalidParameter(format!(
                    "variational factor diagonal entry {i} is not positive"
                )));
            }
            if row[i + 1..].iter().any(|&v| v != 0.0) {
                return Err(CpboError::InvalidParameter(
                    "variational factor is not lower-triangular".into(),
                ));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(CpboError::NonFinite("variational factor"));
            }
        }
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(CpboError::NonFinite("variational mean"));
        }
        Ok(())
    }

    pub fn mean_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mean)
    }

    pub fn factor_matrix(&self) -> DMatrix<f64> {
        let t = self.len();
        DMatrix::from_fn(t, t, |i, j| self.chol_factor[i][j])
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let l = self.factor_matrix();
        &l * l.transpose()
    }
}

/// Variational GP surrogate of the latent utility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub kernel: KernelParams,
    pub mean_const: f64,
    pub variational: VariationalState,
    /// Unconstrained JND threshold; the threshold itself is `softplus(raw)`.
    pub raw_gamma: f64,
    pub gamma_frozen: bool,
    pub sigma: f64,
    pub jitter: f64,
    pub train_configs: Vec<Config>,
    pub lengthscale_prior: Option<GammaPrior>,
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn inv_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl SurrogateModel {
    /// Untrained model at the standard initialization.
    pub fn prior(
        train_configs: Vec<Config>,
        dim: usize,
        lengthscale: f64,
        sigma: f64,
        initial_gamma: f64,
        gamma_frozen: bool,
    ) -> Result<Self> {
        if train_configs.iter().any(|c| c.dim() != dim) {
            return Err(CpboError::DimensionMismatch {
                expected: dim,
                got: train_configs.iter().map(Config::dim).find(|&d| d != dim).unwrap_or(dim),
            });
        }
        let t = train_configs.len();
        Ok(Self {
            kernel: KernelParams::new(vec![lengthscale; dim])?,
            mean_const: 0.0,
            variational: VariationalState::standard(t),
            raw_gamma: inv_softplus(initial_gamma),
            gamma_frozen,
            sigma,
            jitter: DEFAULT_JITTER,
            train_configs,
            lengthscale_prior: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    /// Learned JND threshold, exactly zero when frozen.
    pub fn gamma(&self) -> f64 {
        if self.gamma_frozen {
            0.0
        } else {
            softplus(self.raw_gamma)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.variational.validate()?;
        if self.variational.len() != self.train_configs.len() {
            return Err(CpboError::InvalidParameter(format!(
                "variational dimension {} != number of training configs {}",
                self.variational.len(),
                self.train_configs.len()
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(CpboError::InvalidParameter("sigma must be positive".into()));
        }
        Ok(())
    }

    /// Precomputes the quantities shared by all posterior queries.
    pub fn posterior(&self) -> Result<Posterior<'_>> {
        self.validate()?;
        let t = self.train_configs.len();
        if t == 0 {
            return Ok(Posterior {
                model: self,
                chol: None,
                alpha: DVector::zeros(0),
                b_mat: DMatrix::zeros(0, 0),
            });
        }
        let k = kernel_matrix(&self.train_configs, &self.train_configs, &self.kernel)?;
        let (chol, _) = cholesky_with_jitter(&k, self.jitter)?;
        let r = self.variational.mean_vector().add_scalar(-self.mean_const);
        let alpha = chol.solve(&r);
        let kinv = chol.inverse();
        let w = &kinv * self.variational.factor_matrix();
        let mut b_mat = kinv - &w * w.transpose();
        symmetrize(&mut b_mat);
        Ok(Posterior {
            model: self,
            chol: Some(chol),
            alpha,
            b_mat,
        })
    }

    /// Posterior mean and covariance of the latent utility at `query`.
    pub fn posterior_joint(&self, query: &[Config]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.posterior()?.joint(query)
    }

    /// `n` joint draws of the latent utility at `query`.
    pub fn sample_posterior<R: Rng + ?Sized>(
        &self,
        query: &[Config],
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<DVector<f64>>> {
        self.posterior()?.sample(query, n, rng)
    }
}

/// A model with its training-set factorization cached.
pub struct Posterior<'a> {
    pub model: &'a SurrogateModel,
    pub(crate) chol: Option<Cholesky<f64, Dyn>>,
    /// `K⁻¹ (m_u - m·1)`
    pub alpha: DVector<f64>,
    /// `K⁻¹ - K⁻¹ S K⁻¹`, so that `cov(a, b) = k(a, b) - k_aᵀ B k_b`.
    pub b_mat: DMatrix<f64>,
}

impl<'a> Posterior<'a> {
    pub fn kernel(&self) -> &KernelParams {
        &self.model.kernel
    }

    /// Kernel vector against the training configs.
    pub fn kt(&self, x: &[f64]) -> DVector<f64> {
        self.model.kernel.row(x, &self.model.train_configs)
    }

    pub fn mean_at(&self, x: &[f64]) -> f64 {
        if self.alpha.is_empty() {
            return self.model.mean_const;
        }
        self.model.mean_const + self.kt(x).dot(&self.alpha)
    }

    /// `aᵀ B b`
    pub fn quad(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        if a.is_empty() {
            return 0.0;
        }
        a.dot(&(&self.b_mat * b))
    }

    pub fn variance_at(&self, x: &[f64]) -> f64 {
        let k = self.kt(x);
        (self.model.kernel.output_scale() - self.quad(&k, &k)).max(0.0)
    }

    pub fn joint(&self, query: &[Config]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let kern = &self.model.kernel;
        let mut cov = kernel_matrix(query, query, kern)?;
        let mut mean = DVector::from_element(query.len(), self.model.mean_const);
        if !self.alpha.is_empty() {
            let kqt = kernel_matrix(query, &self.model.train_configs, kern)?;
            mean += &kqt * &self.alpha;
            cov -= &kqt * &self.b_mat * kqt.transpose();
        }
        symmetrize(&mut cov);
        for i in 0..query.len() {
            cov[(i, i)] += self.model.jitter;
        }
        Ok((mean, cov))
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        query: &[Config],
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<DVector<f64>>> {
        if n == 0 {
            return Err(CpboError::InvalidParameter("sample count must be positive".into()));
        }
        let (mean, cov) = self.joint(query)?;
        let (chol, _) = cholesky_with_jitter(&cov, 0.0)?;
        let l = chol.l();
        let q = query.len();
        Ok((0..n)
            .map(|_| {
                let z = DVector::from_iterator(q, (0..q).map(|_| rng.sample::<f64, _>(StandardNormal)));
                &mean + &l * z
            })
            .collect())
    }

    /// Log-determinant of the jittered training kernel.
    pub fn log_det_k(&self) -> f64 {
        self.chol
            .as_ref()
            .map(|c| 2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
            .unwrap_or(0.0)
    }
}
