//! Standard normal CDF and density.

use std::f64::consts::FRAC_1_SQRT_2;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF, evaluated through `erfc` so both tails keep
/// relative precision.
#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - cdf(x)` without cancellation.
#[inline]
pub fn sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

#[inline]
pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `cdf(hi) - cdf(lo)` for `lo <= hi`, picking the tail that avoids
/// subtracting two numbers close to one.
#[inline]
pub fn interval(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 {
        (sf(lo) - sf(hi)).max(0.0)
    } else {
        (cdf(hi) - cdf(lo)).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        // high-precision references for the standard normal CDF
        let cases = [
            (0.0, 0.5),
            (1.0, 0.841_344_746_068_542_9),
            (-1.0, 0.158_655_253_931_457_05),
            (FRAC_1_SQRT_2, 0.760_249_938_906_523_3),
            (-8.0, 6.220_960_574_271_785e-16),
            (3.0, 0.998_650_101_968_369_9),
        ];
        for (x, want) in cases {
            assert!((cdf(x) - want).abs() < 1e-15, "cdf({x}) = {}", cdf(x));
        }
    }

    #[test]
    fn tails_are_complementary() {
        for i in -80..=80 {
            let x = i as f64 / 10.0;
            assert!((cdf(x) + sf(x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn interval_matches_difference() {
        assert!((interval(-1.0, 1.0) - 0.682_689_492_137_085_9).abs() < 1e-15);
        assert!(interval(5.0, 6.0) > 0.0);
        assert!((interval(5.0, 6.0) - (sf(5.0) - sf(6.0))).abs() < 1e-20);
    }
}
