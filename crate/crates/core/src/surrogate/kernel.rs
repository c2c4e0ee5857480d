use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CpboError, Result};
use crate::space::Config;

/// Fixed signal variance of the latent utility prior.
pub const OUTPUT_SCALE: f64 = 10.0;

/// RBF kernel with one lengthscale per input dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    lengthscales: Vec<f64>,
    output_scale: f64,
}

impl KernelParams {
    pub fn new(lengthscales: Vec<f64>) -> Result<Self> {
        Self::with_output_scale(lengthscales, OUTPUT_SCALE)
    }

    pub fn with_output_scale(lengthscales: Vec<f64>, output_scale: f64) -> Result<Self> {
        if lengthscales.is_empty() || lengthscales.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(CpboError::InvalidParameter(format!(
                "lengthscales must be positive and finite, got {lengthscales:?}"
            )));
        }
        if !(output_scale > 0.0) {
            return Err(CpboError::InvalidParameter("output scale must be positive".into()));
        }
        Ok(Self {
            lengthscales,
            output_scale,
        })
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Half the scaled squared distance, `½ Σ (a_d - b_d)² / ℓ_d²`.
    #[inline]
    pub fn half_sq_dist(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut q = 0.0;
        for ((x, y), l) in a.iter().zip(b).zip(&self.lengthscales) {
            let d = (x - y) / l;
            q += d * d;
        }
        0.5 * q
    }

    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        self.output_scale * (-self.half_sq_dist(a, b)).exp()
    }

    /// `k(a, a) - k(a, b)`, computed without cancellation for nearby points.
    #[inline]
    pub fn eval_gap(&self, a: &[f64], b: &[f64]) -> f64 {
        -self.output_scale * (-self.half_sq_dist(a, b)).exp_m1()
    }

    /// Kernel vector between one point and a list.
    pub fn row(&self, x: &[f64], others: &[Config]) -> DVector<f64> {
        DVector::from_iterator(others.len(), others.iter().map(|o| self.eval(x, &o.0)))
    }
}

/// Cross-covariance matrix `K(X, X2)`.
pub fn kernel_matrix(x: &[Config], x2: &[Config], params: &KernelParams) -> Result<DMatrix<f64>> {
    for p in x.iter().chain(x2) {
        if p.dim() != params.dim() {
            return Err(CpboError::DimensionMismatch {
                expected: params.dim(),
                got: p.dim(),
            });
        }
    }
    Ok(DMatrix::from_fn(x.len(), x2.len(), |i, j| {
        params.eval(&x[i].0, &x2[j].0)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_is_output_scale() {
        let p = KernelParams::new(vec![0.3, 2.0]).unwrap();
        let x = vec![Config(vec![0.1, 0.7]), Config(vec![0.4, 0.2])];
        let k = kernel_matrix(&x, &x, &p).unwrap();
        assert_eq!(k[(0, 0)], 10.0);
        assert_eq!(k[(1, 1)], 10.0);
        assert_eq!(k[(0, 1)], k[(1, 0)]);
    }

    #[test]
    fn unit_lengthscale_value() {
        let p = KernelParams::new(vec![1.0, 1.0]).unwrap();
        let v = p.eval(&[0.0, 0.0], &[1.0, 0.0]);
        assert!((v - 10.0 * (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 6.065_307).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(KernelParams::new(vec![0.0]).is_err());
        let p = KernelParams::new(vec![1.0]).unwrap();
        let err = kernel_matrix(&[Config(vec![0.1, 0.2])], &[], &p);
        assert!(matches!(err, Err(CpboError::DimensionMismatch { .. })));
    }
}
