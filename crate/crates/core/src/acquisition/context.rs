use std::borrow::Cow;
use std::cell::Cell;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::gumbel::{bin_maxima, fit_from_maxima, grid_maxima, sample_maxima, GumbelFit, MaxBin};
use super::AcquisitionConfig;
use crate::benchmarks::sobol;
use crate::error::{CpboError, Result};
use crate::preference::{outcome_probs_unchecked, OutcomeProbs};
use crate::rng::{self, Stream};
use crate::space::Config;
use crate::surrogate::Posterior;

/// Which batch mean is subtracted from a pair before truncation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// The posterior mean over the candidate grid, the same batch the max
    /// values are centered against.
    #[default]
    GridMean,
    /// The pair's own mean.
    Pair,
}

/// Scope over which acquisition evaluations reuse the same normals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SampleSharing {
    /// One set per step, shared by every candidate and by the marginal and
    /// conditional terms.
    Step,
    /// Fresh per candidate pair, shared by its marginal and conditional terms.
    Evaluation,
    /// Fresh per candidate pair, per term and per bin.
    #[default]
    None,
}

/// Normals used by one acquisition evaluation.
pub struct EvalDraws<'c> {
    salt: u64,
    marginal: Cow<'c, [(f64, f64)]>,
    /// Round zero of each bin reuses the marginal draws.
    reuse: bool,
}

/// Bivariate Gaussian over `(f(x_ref) - c, f(x) - f(x_ref))`, `c` being the
/// centering term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairGaussian {
    pub mean_ref: f64,
    pub mean_delta: f64,
    pub var_ref: f64,
    pub var_delta: f64,
    pub cov: f64,
}

impl PairGaussian {
    /// Maps standard normals to `(ref, delta)` through a lower factor that
    /// drops negative variance left by rounding.
    #[inline]
    pub fn transform(&self, z1: f64, z2: f64) -> (f64, f64) {
        let l11 = self.var_ref.max(0.0).sqrt();
        let l21 = if l11 > 0.0 { self.cov / l11 } else { 0.0 };
        let l22 = (self.var_delta - l21 * l21).max(0.0).sqrt();
        (self.mean_ref + l11 * z1, self.mean_delta + l21 * z1 + l22 * z2)
    }
}

/// Quantities that depend on one reference config.
struct RefStats {
    kt: DVector<f64>,
    mean: f64,
    var: f64,
    kbar: f64,
}

/// Everything shared by acquisition evaluations within one step: the grid,
/// its summary statistics, the max-value bins and the common random numbers.
pub struct StepContext<'a> {
    pub post: &'a Posterior<'a>,
    pub cfg: AcquisitionConfig,
    pub grid: Vec<Config>,
    pub gumbel: GumbelFit,
    pub bins: Vec<MaxBin>,
    pub grid_rank: usize,
    seed: u64,
    base: Vec<(f64, f64)>,
    b_kbar_t: DVector<f64>,
    mean_fbar: f64,
    var_fbar: f64,
    fallbacks: Cell<usize>,
}

impl<'a> StepContext<'a> {
    pub fn new<R: Rng + ?Sized>(
        post: &'a Posterior<'a>,
        cfg: &AcquisitionConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let dim = post.model.dim();
        let grid = sobol(cfg.n_candidate_grid, dim, rng.random::<u32>())?;
        let (maxima, grid_rank) = grid_maxima(post, &grid, cfg.n_max_samples, rng)?;
        let gumbel = fit_from_maxima(&maxima)?;
        let fstar = sample_maxima(&gumbel, cfg.n_gumbel_samples, cfg.rank_clip, rng);
        let bins = bin_maxima(&fstar, cfg.n_bins)?;
        Self::with_fit(post, cfg, grid, gumbel, bins, grid_rank, rng.random::<u64>())
    }

    /// Builds a context from an existing fit, e.g. to reuse bins across calls.
    pub fn with_fit(
        post: &'a Posterior<'a>,
        cfg: &AcquisitionConfig,
        grid: Vec<Config>,
        gumbel: GumbelFit,
        bins: Vec<MaxBin>,
        grid_rank: usize,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if grid.is_empty() {
            return Err(CpboError::InvalidParameter("candidate grid is empty".into()));
        }
        let model = post.model;
        let t = model.train_configs.len();
        let g = grid.len() as f64;
        let mut kbar_t = DVector::zeros(t);
        if t > 0 {
            for x in &grid {
                kbar_t += post.kt(&x.0);
            }
            kbar_t /= g;
        }
        let b_kbar_t = if t > 0 { &post.b_mat * &kbar_t } else { DVector::zeros(0) };
        let mean_fbar = model.mean_const + if t > 0 { kbar_t.dot(&post.alpha) } else { 0.0 };
        let mut kk = 0.0;
        for (i, a) in grid.iter().enumerate() {
            for b in &grid[..i] {
                kk += 2.0 * model.kernel.eval(&a.0, &b.0);
            }
            kk += model.kernel.output_scale() + model.jitter;
        }
        let var_fbar = (kk / (g * g) - if t > 0 { kbar_t.dot(&b_kbar_t) } else { 0.0 }).max(0.0);
        let n_base = cfg.n_uncond_samples.max(cfg.n_trunc_samples);
        let mut base_rng = rng::stream(seed, &[rng::tag("base")]);
        let base = (0..n_base)
            .map(|_| (base_rng.sample(StandardNormal), base_rng.sample(StandardNormal)))
            .collect();
        Ok(Self {
            post,
            cfg: *cfg,
            grid,
            gumbel,
            bins,
            grid_rank,
            seed,
            base,
            b_kbar_t,
            mean_fbar,
            var_fbar,
            fallbacks: Cell::new(0),
        })
    }

    /// Number of truncated batches that needed the clamping fallback.
    pub fn fallback_count(&self) -> usize {
        self.fallbacks.get()
    }

    pub fn gamma(&self) -> f64 {
        self.post.model.gamma()
    }

    fn kbar(&self, x: &[f64]) -> f64 {
        let k = &self.post.model.kernel;
        self.grid.iter().map(|g| k.eval(&g.0, x)).sum::<f64>() / self.grid.len() as f64
    }

    fn ref_stats(&self, x_ref: &[f64]) -> RefStats {
        let kt = self.post.kt(x_ref);
        let mean = self.post.mean_at(x_ref);
        let var = self.post.model.kernel.output_scale() + self.post.model.jitter
            - self.post.quad(&kt, &kt);
        RefStats {
            mean,
            var,
            kbar: self.kbar(x_ref),
            kt,
        }
    }

    fn pair_with(&self, x: &[f64], x_ref: &[f64], r: &RefStats) -> PairGaussian {
        let post = self.post;
        let kern = &post.model.kernel;
        let kx = post.kt(x);
        let d = &kx - &r.kt;
        let mean_delta = if d.is_empty() { 0.0 } else { d.dot(&post.alpha) };
        let var_delta = (2.0 * kern.eval_gap(x, x_ref) - post.quad(&d, &d)).max(0.0);
        match self.cfg.centering {
            Centering::Pair => PairGaussian {
                mean_ref: -0.5 * mean_delta,
                mean_delta,
                var_ref: 0.25 * var_delta,
                var_delta,
                cov: -0.5 * var_delta,
            },
            Centering::GridMean => {
                let cov_fbar_ref = r.kbar - r.kt.dot(&self.b_kbar_t);
                let var_ref = r.var + self.var_fbar - 2.0 * cov_fbar_ref;
                let b_d = if d.is_empty() { 0.0 } else { self.b_kbar_t.dot(&d) };
                let cov_fbar_delta = (self.kbar(x) - r.kbar) - b_d;
                let cov = -kern.eval_gap(x, x_ref) - post.quad(&r.kt, &d) - cov_fbar_delta;
                PairGaussian {
                    mean_ref: r.mean - self.mean_fbar,
                    mean_delta,
                    var_ref,
                    var_delta,
                    cov,
                }
            }
        }
    }

    pub fn pair(&self, x: &Config, x_ref: &Config) -> PairGaussian {
        let r = self.ref_stats(&x_ref.0);
        self.pair_with(&x.0, &x_ref.0, &r)
    }

    fn round_stream(&self, bin: usize, round: usize, salt: u64) -> Stream {
        rng::stream(self.seed, &[rng::tag("trunc"), bin as u64, round as u64, salt])
    }

    /// Base normals for one evaluation. The marginal term and round zero of
    /// every bin always share them; across points they are shared only under
    /// common random numbers, otherwise they are keyed by the pair.
    pub fn draws(&self, x: &Config, x_ref: &Config) -> EvalDraws<'_> {
        if self.cfg.sharing == SampleSharing::Step {
            return EvalDraws { salt: 0, marginal: Cow::Borrowed(&self.base), reuse: true };
        }
        let bits: Vec<u64> = x.identity_key().into_iter().chain(x_ref.identity_key()).collect();
        let salt = rng::derive_seed(self.seed, &bits) | 1;
        let fresh = |t: &str| -> Vec<(f64, f64)> {
            let mut s = rng::stream(self.seed, &[rng::tag(t), salt]);
            (0..self.base.len())
                .map(|_| (s.sample(StandardNormal), s.sample(StandardNormal)))
                .collect()
        };
        let reuse = self.cfg.sharing == SampleSharing::Evaluation;
        EvalDraws { salt, marginal: Cow::Owned(fresh("base")), reuse }
    }

    /// `n` pairs `(f(x), f(x_ref))`, centered, with `max <= f_star`.
    /// Round zero reuses the step's base normals.
    pub fn truncated_pairs(
        &self,
        pair: &PairGaussian,
        f_star: f64,
        bin: usize,
        draws: &EvalDraws,
    ) -> Vec<(f64, f64)> {
        let n = self.cfg.n_trunc_samples;
        let mut out = Vec::with_capacity(n);
        let mut rejected: Vec<(f64, f64)> = Vec::new();
        for round in 0..self.cfg.max_rejection_rounds {
            rejected.clear();
            let mut accept = |z1: f64, z2: f64, out: &mut Vec<(f64, f64)>| {
                let (r, d) = pair.transform(z1, z2);
                let fx = r + d;
                if fx.max(r) <= f_star {
                    out.push((fx, r));
                } else {
                    rejected.push((fx, r));
                }
            };
            if round == 0 && draws.reuse {
                for &(z1, z2) in &draws.marginal[..n] {
                    accept(z1, z2, &mut out);
                    if out.len() == n {
                        break;
                    }
                }
            } else {
                let mut s = self.round_stream(bin, round, draws.salt);
                for _ in 0..n {
                    let z1 = s.sample(StandardNormal);
                    let z2 = s.sample(StandardNormal);
                    accept(z1, z2, &mut out);
                    if out.len() == n {
                        break;
                    }
                }
            }
            if out.len() == n {
                return out;
            }
        }
        self.fallbacks.set(self.fallbacks.get() + 1);
        for &(fx, r) in rejected.iter().cycle().take(n - out.len()) {
            out.push((fx.min(f_star), r.min(f_star)));
        }
        out
    }

    fn floored(&self, p: OutcomeProbs) -> OutcomeProbs {
        p.floored(self.cfg.prob_floor)
    }

    fn mean_probs<I: Iterator<Item = f64>>(&self, deltas: I) -> OutcomeProbs {
        self.floored(self.mean_probs_raw(deltas))
    }

    fn mean_probs_raw<I: Iterator<Item = f64>>(&self, deltas: I) -> OutcomeProbs {
        let gamma = self.gamma();
        let sigma = self.post.model.sigma;
        let mut acc = OutcomeProbs {
            plus: 0.0,
            zero: 0.0,
            minus: 0.0,
        };
        let mut n = 0usize;
        for d in deltas {
            let p = outcome_probs_unchecked(d, gamma, sigma);
            acc.plus += p.plus;
            acc.zero += p.zero;
            acc.minus += p.minus;
            n += 1;
        }
        let n = n.max(1) as f64;
        OutcomeProbs {
            plus: acc.plus / n,
            zero: acc.zero / n,
            minus: acc.minus / n,
        }
    }

    /// Marginal predictive outcome distribution for the pair.
    pub fn predictive_unconditional(&self, pair: &PairGaussian, draws: &EvalDraws) -> OutcomeProbs {
        let n = self.cfg.n_uncond_samples;
        self.mean_probs(draws.marginal[..n].iter().map(|&(z1, z2)| pair.transform(z1, z2).1))
    }

    /// Predictive distribution given the max value `f_star`.
    pub fn predictive_truncated(
        &self,
        pair: &PairGaussian,
        f_star: f64,
        bin: usize,
        draws: &EvalDraws,
    ) -> OutcomeProbs {
        let pairs = self.truncated_pairs(pair, f_star, bin, draws);
        self.mean_probs(pairs.iter().map(|&(fx, r)| fx - r))
    }

    /// Information gain about the max value from comparing `x` with `x_ref`.
    pub fn information_gain(&self, x: &Config, x_ref: &Config) -> f64 {
        let r = self.ref_stats(&x_ref.0);
        self.information_gain_with(x, x_ref, &r)
    }

    fn information_gain_with(&self, x: &Config, x_ref: &Config, r: &RefStats) -> f64 {
        let pair = self.pair_with(&x.0, &x_ref.0, r);
        let draws = self.draws(x, x_ref);
        let h_marg = self.predictive_unconditional(&pair, &draws).entropy();
        let h_cond: f64 = self
            .bins
            .iter()
            .enumerate()
            .map(|(j, b)| b.weight * self.predictive_truncated(&pair, b.value, j, &draws).entropy())
            .sum();
        h_marg - h_cond
    }

    /// Acquisition function with the reference statistics computed once.
    pub fn objective_for<'s>(&'s self, x_ref: &'s Config) -> impl Fn(&Config) -> f64 + 's {
        let r = self.ref_stats(&x_ref.0);
        move |x: &Config| self.information_gain_with(x, x_ref, &r)
    }

    /// Untruncated, unfloored indifference probability of each point against
    /// `x_ref`.
    pub fn indifference_map(&self, x_ref: &Config, points: &[Config]) -> Vec<f64> {
        let r = self.ref_stats(&x_ref.0);
        points
            .iter()
            .map(|x| {
                let pair = self.pair_with(&x.0, &x_ref.0, &r);
                let draws = self.draws(x, x_ref);
                let n = self.cfg.n_uncond_samples;
                self.mean_probs_raw(draws.marginal[..n].iter().map(|&(z1, z2)| pair.transform(z1, z2).1))
                    .zero
            })
            .collect()
    }
}
