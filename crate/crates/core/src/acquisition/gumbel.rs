use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CpboError, Result};
use crate::linalg::pivoted_cholesky;
use crate::space::Config;
use crate::surrogate::Posterior;

pub const RANK_LOW: f64 = 0.25;
pub const RANK_HIGH: f64 = 0.75;
pub const RANK_MID: f64 = 0.5;

/// Gumbel distribution `F(y) = exp(-exp(-(y - a) / b))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GumbelFit {
    pub location: f64,
    pub scale: f64,
}

impl GumbelFit {
    pub fn new(location: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) || !location.is_finite() {
            return Err(CpboError::InvalidParameter(format!(
                "Gumbel scale must be positive and finite, got ({location}, {scale})"
            )));
        }
        Ok(Self { location, scale })
    }

    /// Fit through the quantiles at ranks 0.25, 0.75 and 0.5.
    pub fn from_quantiles(y1: f64, y2: f64, y3: f64) -> Result<Self> {
        let denom = (-RANK_HIGH.ln()).ln() - (-RANK_LOW.ln()).ln();
        let b = (y1 - y2) / denom;
        if !(b > 0.0) {
            return Err(CpboError::Degenerate(format!(
                "max-value quantiles do not spread: q25 = {y1}, q75 = {y2}"
            )));
        }
        let a = y3 + b * (-RANK_MID.ln()).ln();
        Self::new(a, b)
    }

    pub fn cdf(&self, y: f64) -> f64 {
        (-(-(y - self.location) / self.scale).exp()).exp()
    }

    pub fn quantile(&self, r: f64) -> f64 {
        self.location - self.scale * (-r.ln()).ln()
    }
}

/// Subtracts each vector's own mean.
pub fn zero_center(samples: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    samples
        .iter()
        .map(|s| {
            if s.is_empty() {
                return Err(CpboError::InvalidParameter("cannot center an empty sample".into()));
            }
            let m = s.iter().sum::<f64>() / s.len() as f64;
            Ok(s.iter().map(|v| v - m).collect())
        })
        .collect()
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], r: f64) -> f64 {
    let pos = r * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Fits a Gumbel to quantiles of sample maxima.
pub fn fit_from_maxima(maxima: &[f64]) -> Result<GumbelFit> {
    if maxima.len() < 2 {
        return Err(CpboError::Degenerate("need at least two maxima".into()));
    }
    let mut sorted = maxima.to_vec();
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(CpboError::NonFinite("posterior maximum"));
    }
    sorted.sort_by(f64::total_cmp);
    GumbelFit::from_quantiles(
        quantile_sorted(&sorted, RANK_LOW),
        quantile_sorted(&sorted, RANK_HIGH),
        quantile_sorted(&sorted, RANK_MID),
    )
}

// Pivoted Cholesky settings for joint draws over the grid.
const GRID_TOL: f64 = 1e-6;
const GRID_MAX_RANK: usize = 512;

/// Maxima of `n` zero-centered joint posterior draws over `grid`.
pub fn grid_maxima<R: Rng + ?Sized>(
    post: &Posterior<'_>,
    grid: &[Config],
    n: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, usize)> {
    if grid.is_empty() {
        return Err(CpboError::InvalidParameter("candidate grid is empty".into()));
    }
    if n == 0 {
        return Err(CpboError::InvalidParameter("need at least one posterior draw".into()));
    }
    let model = post.model;
    let kern = &model.kernel;
    let g = grid.len();
    let t = model.train_configs.len();
    let ktg: Vec<_> = grid.iter().map(|x| post.kt(&x.0)).collect();
    let mean = nalgebra::DVector::from_iterator(g, grid.iter().map(|x| post.mean_at(&x.0)));
    // rows of K_gt B
    let proj: Vec<_> = if t > 0 {
        ktg.iter().map(|k| &post.b_mat * k).collect()
    } else {
        Vec::new()
    };
    let diag: Vec<f64> = (0..g)
        .map(|i| {
            let red = if t > 0 { ktg[i].dot(&proj[i]) } else { 0.0 };
            (kern.output_scale() - red).max(0.0)
        })
        .collect();
    let low = pivoted_cholesky(
        mean,
        diag,
        |j| {
            let xj = &grid[j].0;
            nalgebra::DVector::from_iterator(
                g,
                (0..g).map(|i| {
                    let red = if t > 0 { proj[i].dot(&ktg[j]) } else { 0.0 };
                    kern.eval(&grid[i].0, xj) - red
                }),
            )
        },
        GRID_TOL,
        GRID_MAX_RANK,
        model.jitter,
    );
    let r = low.rank();
    let z_low = DMatrix::from_fn(r, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let z_res = DMatrix::from_fn(g, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let draws = low.samples_from(&z_low, &z_res);
    let maxima = draws
        .column_iter()
        .map(|c| {
            let m = c.mean();
            c.max() - m
        })
        .collect();
    Ok((maxima, r))
}

/// Gumbel fit over the posterior max value on `grid`.
pub fn fit_gumbel<R: Rng + ?Sized>(
    post: &Posterior<'_>,
    grid: &[Config],
    n_max_samples: usize,
    rng: &mut R,
) -> Result<GumbelFit> {
    let (maxima, _) = grid_maxima(post, grid, n_max_samples, rng)?;
    fit_from_maxima(&maxima)
}

/// Max-value samples with ranks confined to `[clip, 1 - clip]`.
pub fn sample_maxima<R: Rng + ?Sized>(
    fit: &GumbelFit,
    n: usize,
    rank_clip: f64,
    rng: &mut R,
) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let r = rank_clip + (1.0 - 2.0 * rank_clip) * rng.random::<f64>();
            fit.quantile(r)
        })
        .collect()
}

/// One bin of max-value samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxBin {
    pub value: f64,
    pub weight: f64,
}

/// Equal-width bins over `[min, max]`; each non-empty bin gives its mean and
/// its share of the samples.
pub fn bin_maxima(samples: &[f64], n_bins: usize) -> Result<Vec<MaxBin>> {
    if samples.is_empty() || n_bins == 0 {
        return Err(CpboError::InvalidParameter(
            "binning needs samples and at least one bin".into(),
        ));
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / n_bins as f64;
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for &s in samples {
        let k = if width > 0.0 {
            (((s - lo) / width) as usize).min(n_bins - 1)
        } else {
            0
        };
        sums[k] += s;
        counts[k] += 1;
    }
    let total = samples.len() as f64;
    Ok(sums
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c > 0)
        .map(|(s, &c)| MaxBin {
            value: s / c as f64,
            weight: c as f64 / total,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn quantile_fit_reference_values() {
        let g = GumbelFit::from_quantiles(0.0, 1.0, 0.5).unwrap();
        assert!((g.location - 0.266928).abs() < 1e-6);
        assert!((g.scale - 0.635917).abs() < 1e-6);
        assert!((g.cdf(0.5) - 0.5).abs() < 1e-15);
        assert!((g.quantile(0.5) - (g.location + 0.366513 * g.scale)).abs() < 1e-6);
        assert!(GumbelFit::from_quantiles(1.0, 1.0, 1.0).is_err());
        let shifted = GumbelFit::from_quantiles(2.0, 3.0, 2.5).unwrap();
        assert!((shifted.location - g.location - 2.0).abs() < 1e-12);
        assert!((shifted.scale - g.scale).abs() < 1e-12);
    }

    #[test]
    fn zero_center_behaviour() {
        let out = zero_center(&[vec![1.0, 3.0]]).unwrap();
        assert_eq!(out[0], vec![-1.0, 1.0]);
        let again = zero_center(&out).unwrap();
        assert_eq!(again, out);
        assert!(zero_center(&[vec![]]).is_err());
    }

    #[test]
    fn binning_examples() {
        let b = bin_maxima(&[2.5; 7], 20).unwrap();
        assert_eq!(b, vec![MaxBin { value: 2.5, weight: 1.0 }]);
        let b = bin_maxima(&[0.0, 1.0], 2).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!((b[0].value, b[0].weight), (0.0, 0.5));
        assert_eq!((b[1].value, b[1].weight), (1.0, 0.5));
    }

    #[test]
    fn clipped_samples_in_range() {
        let g = GumbelFit::new(0.3, 0.2).unwrap();
        let s = sample_maxima(&g, 5000, 0.01, &mut rng::stream(1, &[]));
        let lo = g.quantile(0.01);
        let hi = g.quantile(0.99);
        assert!(s.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }
}
