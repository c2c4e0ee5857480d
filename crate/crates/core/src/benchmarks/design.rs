//! Space-filling designs on the unit hypercube.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{CpboError, Result};
use crate::rng;
use crate::space::Config;

/// Latin hypercube sample: each of the `n` equal strata of every axis holds
/// exactly one point.
pub fn latin_hypercube(n: usize, dim: usize, seed: u64) -> Result<Vec<Config>> {
    if n == 0 || dim == 0 {
        return Err(CpboError::InvalidParameter(format!(
            "latin hypercube needs n >= 1 and dim >= 1, got n={n}, dim={dim}"
        )));
    }
    let mut rng = rng::stream(seed, &[rng::tag("lhs")]);
    let mut columns = Vec::with_capacity(dim);
    for _ in 0..dim {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let col: Vec<f64> = perm
            .into_iter()
            .map(|stratum| {
                let u: f64 = rng.random();
                ((stratum as f64 + u) / n as f64).min(next_below(stratum + 1, n))
            })
            .collect();
        columns.push(col);
    }
    Ok((0..n)
        .map(|i| Config(columns.iter().map(|c| c[i]).collect()))
        .collect())
}

// Largest float strictly below the stratum's upper edge, so rounding never
// pushes a point into the next stratum.
fn next_below(edge: usize, n: usize) -> f64 {
    let x = edge as f64 / n as f64;
    if edge == n {
        1.0
    } else {
        f64::from_bits(x.to_bits() - 1)
    }
}

/// The first `n` points of an Owen-scrambled Sobol sequence.
pub fn sobol(n: usize, dim: usize, seed: u32) -> Result<Vec<Config>> {
    if dim == 0 || dim > sobol_burley::NUM_DIMENSIONS as usize {
        return Err(CpboError::InvalidParameter(format!(
            "sobol dimension must be in 1..={}, got {dim}",
            sobol_burley::NUM_DIMENSIONS
        )));
    }
    Ok((0..n as u32)
        .map(|i| {
            Config(
                (0..dim as u32)
                    .map(|d| sobol_burley::sample(i, d, seed) as f64)
                    .collect(),
            )
        })
        .collect())
}

/// Uniformly random points in the unit cube.
pub fn uniform<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Vec<Config> {
    (0..n)
        .map(|_| Config((0..dim).map(|_| rng.random::<f64>()).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strata_counts(points: &[Config], dim: usize, n: usize) -> Vec<usize> {
        let mut counts = vec![0; n];
        for p in points {
            let k = (p.0[dim] * n as f64).floor() as usize;
            counts[k.min(n - 1)] += 1;
        }
        counts
    }

    #[test]
    fn four_points_one_per_quarter() {
        let pts = latin_hypercube(4, 1, 3).unwrap();
        assert_eq!(pts.len(), 4);
        assert_eq!(strata_counts(&pts, 0, 4), vec![1, 1, 1, 1]);
    }

    #[test]
    fn fifteen_points_three_dims_reproducible() {
        let a = latin_hypercube(15, 3, 11).unwrap();
        let b = latin_hypercube(15, 3, 11).unwrap();
        assert_eq!(a, b);
        for d in 0..3 {
            assert_eq!(strata_counts(&a, d, 15), vec![1; 15]);
        }
        let c = latin_hypercube(15, 3, 12).unwrap();
        assert_ne!(a, c);
        for d in 0..3 {
            assert_eq!(strata_counts(&c, d, 15), vec![1; 15]);
        }
    }

    #[test]
    fn rejects_empty_design() {
        assert!(latin_hypercube(0, 2, 0).is_err());
        assert!(sobol(4, 0, 0).is_err());
    }

    #[test]
    fn sobol_points_in_cube() {
        let pts = sobol(1024, 6, 0).unwrap();
        assert!(pts.iter().all(|p| p.0.iter().all(|v| (0.0..1.0).contains(v))));
    }
}
