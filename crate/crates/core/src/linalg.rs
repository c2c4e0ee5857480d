//! Dense factorizations used by the surrogate and the samplers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{CpboError, Result};

/// Largest jitter tried before a factorization is declared failed.
pub const MAX_JITTER: f64 = 1e-1;

/// Cholesky of `a + jitter * I`, multiplying the jitter by ten on failure
/// until [`MAX_JITTER`]. Returns the factorization and the jitter used.
pub fn cholesky_with_jitter(a: &DMatrix<f64>, jitter: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut j = jitter;
    loop {
        let mut m = a.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += j;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok((c, j));
        }
        if j >= MAX_JITTER {
            return Err(CpboError::Factorization { jitter: j });
        }
        j = (j * 10.0).min(MAX_JITTER);
    }
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Low-rank-plus-diagonal Gaussian from a partial pivoted Cholesky.
///
/// `cov ≈ F Fᵀ + diag(residual)`, exact on the diagonal.
#[derive(Debug, Clone)]
pub struct LowRankGaussian {
    pub mean: DVector<f64>,
    /// `n × rank`
    pub factor: DMatrix<f64>,
    pub residual_sd: DVector<f64>,
}

/// Partial pivoted Cholesky of a covariance given by its diagonal and a
/// column oracle. Stops when the largest remaining diagonal entry drops
/// below `tol` or `max_rank` columns have been taken; `extra_diag` is added
/// to the residual variance (jitter).
pub fn pivoted_cholesky(
    mean: DVector<f64>,
    diag: Vec<f64>,
    mut column: impl FnMut(usize) -> DVector<f64>,
    tol: f64,
    max_rank: usize,
    extra_diag: f64,
) -> LowRankGaussian {
    let n = diag.len();
    let mut d = diag;
    let mut cols: Vec<DVector<f64>> = Vec::new();
    while cols.len() < max_rank.min(n) {
        let (piv, &dmax) = d
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty");
        if dmax <= tol {
            break;
        }
        let mut c = column(piv);
        for l in &cols {
            let lp = l[piv];
            c.axpy(-lp, l, 1.0);
        }
        let s = dmax.sqrt();
        c /= s;
        // exact zero at the pivot keeps the residual from going negative there
        for i in 0..n {
            d[i] -= c[i] * c[i];
        }
        d[piv] = 0.0;
        cols.push(c);
    }
    let rank = cols.len();
    let mut factor = DMatrix::zeros(n, rank);
    for (k, c) in cols.iter().enumerate() {
        factor.set_column(k, c);
    }
    let residual_sd = DVector::from_iterator(n, d.iter().map(|&v| (v.max(0.0) + extra_diag).sqrt()));
    LowRankGaussian {
        mean,
        factor,
        residual_sd,
    }
}

impl LowRankGaussian {
    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }

    /// Draws `n` samples as the columns of a matrix, from standard normals
    /// `z_low` (`rank × n`) and `z_res` (`dim × n`).
    pub fn samples_from(&self, z_low: &DMatrix<f64>, z_res: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.factor * z_low;
        for (mut col, zr) in out.column_iter_mut().zip(z_res.column_iter()) {
            for i in 0..col.len() {
                col[i] += self.mean[i] + self.residual_sd[i] * zr[i];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jitter_escalates_for_singular_input() {
        let a = DMatrix::from_element(3, 3, 1.0);
        let (_, j) = cholesky_with_jitter(&a, 1e-12).unwrap();
        assert!(j >= 1e-12);
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -5.0]));
        assert!(matches!(
            cholesky_with_jitter(&bad, 1e-4),
            Err(CpboError::Factorization { .. })
        ));
    }

    #[test]
    fn pivoted_cholesky_reconstructs_low_rank() {
        // rank-2 covariance
        let f = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.5, 1.0, -0.3, 2.0, 0.0, 0.7]);
        let cov = &f * f.transpose();
        let lr = pivoted_cholesky(
            DVector::zeros(4),
            (0..4).map(|i| cov[(i, i)]).collect(),
            |j| cov.column(j).into_owned(),
            1e-12,
            10,
            0.0,
        );
        assert_eq!(lr.rank(), 2);
        let rec = &lr.factor * lr.factor.transpose();
        assert!((rec - cov).abs().max() < 1e-12);
    }
}
