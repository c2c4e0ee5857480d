//! Regret and accuracy metrics against a known utility.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::benchmarks::{sobol, uniform, NormalizedUtility};
use crate::error::{CpboError, Result};
use crate::space::Config;
use crate::surrogate::Posterior;

pub const DEFAULT_PAIRS: usize = 2000;
const POLISH_EVALS: usize = 100;
const POLISH_STEP: f64 = 0.05;
const RECOMMEND_SEED: u32 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub simple_regret: f64,
    pub inference_regret: f64,
    pub ordinal_accuracy: f64,
    pub choice_accuracy: f64,
    pub recommendation: Config,
}

/// `1 - max f(x_i)` over the produced configs.
pub fn simple_regret(utility: &NormalizedUtility, produced: &[Config]) -> Result<f64> {
    if produced.is_empty() {
        return Err(CpboError::InvalidParameter("no produced configs".into()));
    }
    let best = produced
        .iter()
        .map(|x| utility.eval_config(x))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(1.0 - best)
}

/// Evaluation-set size used for the posterior-mean argmax.
pub fn recommend_grid_size(dim: usize) -> usize {
    if dim <= 3 {
        1 << 14
    } else {
        1 << 16
    }
}

/// Maximizer of `score` over a Sobol set followed by a coordinate search.
/// Ties keep the earliest point.
pub fn argmax_with_polish<F: Fn(&[f64]) -> f64>(score: F, dim: usize, n_grid: usize) -> Result<Config> {
    let grid = sobol(n_grid, dim, RECOMMEND_SEED)?;
    let mut best = grid[0].0.clone();
    let mut best_v = score(&best);
    for x in &grid[1..] {
        let v = score(&x.0);
        if v > best_v {
            best_v = v;
            best = x.0.clone();
        }
    }
    let mut step = POLISH_STEP;
    let mut evals = 0;
    'outer: while evals < POLISH_EVALS {
        let mut improved = false;
        for k in 0..dim {
            for sign in [1.0, -1.0] {
                if evals >= POLISH_EVALS {
                    break 'outer;
                }
                let mut cand = best.clone();
                cand[k] = (cand[k] + sign * step).clamp(0.0, 1.0);
                evals += 1;
                let v = score(&cand);
                if v > best_v {
                    best_v = v;
                    best = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(Config(best))
}

/// Argmax of the posterior mean.
pub fn recommend(post: &Posterior<'_>) -> Result<Config> {
    let d = post.model.dim();
    argmax_with_polish(|x| post.mean_at(x), d, recommend_grid_size(d))
}

pub fn inference_regret(utility: &NormalizedUtility, recommendation: &Config) -> f64 {
    1.0 - utility.eval_config(recommendation)
}

pub fn random_pairs<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Vec<(Config, Config)> {
    let a = uniform(n, dim, rng);
    let b = uniform(n, dim, rng);
    a.into_iter().zip(b).collect()
}

/// Fraction of pairs ranked the same way by `predict` and `truth`. Exact
/// ties in the truth count as agreement.
pub fn ordinal_accuracy_with<P, T>(predict: P, truth: T, pairs: &[(Config, Config)]) -> f64
where
    P: Fn(&[f64]) -> f64,
    T: Fn(&[f64]) -> f64,
{
    if pairs.is_empty() {
        return 0.0;
    }
    let hits = pairs
        .iter()
        .filter(|(a, b)| {
            let dt = truth(&a.0) - truth(&b.0);
            if dt == 0.0 {
                return true;
            }
            let dp = predict(&a.0) - predict(&b.0);
            dp != 0.0 && (dp > 0.0) == (dt > 0.0)
        })
        .count();
    hits as f64 / pairs.len() as f64
}

fn outcome(delta: f64, gamma: f64) -> i8 {
    if delta.abs() <= gamma {
        0
    } else if delta > 0.0 {
        1
    } else {
        -1
    }
}

/// Fraction of pairs whose three-way outcome is predicted correctly. When
/// `has_indifference` is false no pair with a true indifference outcome can
/// be matched.
pub fn choice_accuracy_with<P, T>(
    predict: P,
    truth: T,
    gamma_hat: f64,
    gamma_true: f64,
    has_indifference: bool,
    pairs: &[(Config, Config)],
) -> f64
where
    P: Fn(&[f64]) -> f64,
    T: Fn(&[f64]) -> f64,
{
    if pairs.is_empty() {
        return 0.0;
    }
    let hits = pairs
        .iter()
        .filter(|(a, b)| {
            let want = outcome(truth(&a.0) - truth(&b.0), gamma_true);
            if want == 0 && !has_indifference {
                return false;
            }
            outcome(predict(&a.0) - predict(&b.0), gamma_hat) == want
        })
        .count();
    hits as f64 / pairs.len() as f64
}

pub fn ordinal_accuracy<R: Rng + ?Sized>(
    post: &Posterior<'_>,
    utility: &NormalizedUtility,
    n_pairs: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_pairs == 0 {
        return Err(CpboError::InvalidParameter("n_pairs must be positive".into()));
    }
    let pairs = random_pairs(n_pairs, post.model.dim(), rng);
    Ok(ordinal_accuracy_with(|x| post.mean_at(x), |x| utility.eval(x), &pairs))
}

pub fn choice_accuracy<R: Rng + ?Sized>(
    post: &Posterior<'_>,
    utility: &NormalizedUtility,
    gamma_true: f64,
    n_pairs: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_pairs == 0 {
        return Err(CpboError::InvalidParameter("n_pairs must be positive".into()));
    }
    let pairs = random_pairs(n_pairs, post.model.dim(), rng);
    Ok(choice_accuracy_with(
        |x| post.mean_at(x),
        |x| utility.eval(x),
        post.model.gamma(),
        gamma_true,
        !post.model.gamma_frozen,
        &pairs,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::utility;
    use crate::rng;
    use crate::surrogate::SurrogateModel;

    #[test]
    fn regret_examples() {
        let u = utility("branin").unwrap();
        let opt = u.optimizer().unwrap();
        assert!(simple_regret(&u, &[opt.clone()]).unwrap().abs() < 1e-9);
        assert!(simple_regret(&u, &[]).is_err());
    }

    #[test]
    fn flat_model_recommends_first_grid_point() {
        let m = SurrogateModel::prior(vec![], 2, 0.5, 0.04, 0.01, false).unwrap();
        let post = m.posterior().unwrap();
        let r = recommend(&post).unwrap();
        assert_eq!(r, sobol(1 << 14, 2, RECOMMEND_SEED).unwrap()[0]);
        let u = utility("branin").unwrap();
        assert_eq!(inference_regret(&u, &r), 1.0 - u.eval_config(&r));
    }

    #[test]
    fn accuracy_extremes() {
        let u = utility("branin").unwrap();
        let pairs = random_pairs(500, 2, &mut rng::stream(1, &[]));
        let f = |x: &[f64]| u.eval(x);
        assert_eq!(ordinal_accuracy_with(f, f, &pairs), 1.0);
        assert_eq!(ordinal_accuracy_with(|x| -f(x), f, &pairs), 0.0);
        assert_eq!(choice_accuracy_with(f, f, 0.04, 0.04, true, &pairs), 1.0);
        assert_eq!(choice_accuracy_with(f, f, 0.0, 1e9, false, &pairs), 0.0);
        assert_eq!(
            choice_accuracy_with(|x| f(x) * 0.9, f, 0.0, 0.0, true, &pairs),
            ordinal_accuracy_with(|x| f(x) * 0.9, f, &pairs)
        );
    }
}
