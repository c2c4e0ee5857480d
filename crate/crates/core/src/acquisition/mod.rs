//! Max-value entropy search for three-outcome comparisons.

mod context;
mod gumbel;
mod inner;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use context::{Centering, EvalDraws, PairGaussian, SampleSharing, StepContext};
pub use gumbel::{
    bin_maxima, fit_from_maxima, fit_gumbel, grid_maxima, quantile_sorted, sample_maxima,
    zero_center, GumbelFit, MaxBin,
};
pub use inner::{maximize, OptimizerTrace};

use crate::error::{CpboError, Result};
use crate::preference::OutcomeProbs;
use crate::space::Config;
use crate::surrogate::Posterior;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcquisitionConfig {
    pub n_candidate_grid: usize,
    /// Joint posterior draws over the grid used to fit the Gumbel.
    pub n_max_samples: usize,
    pub n_gumbel_samples: usize,
    pub n_bins: usize,
    pub n_trunc_samples: usize,
    pub n_uncond_samples: usize,
    pub rank_clip: f64,
    pub prob_floor: f64,
    pub max_rejection_rounds: usize,
    pub n_initial: usize,
    pub n_refine: usize,
    pub centering: Centering,
    pub sharing: SampleSharing,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            n_candidate_grid: 1024,
            n_max_samples: 1000,
            n_gumbel_samples: 25_000,
            n_bins: 20,
            n_trunc_samples: 1000,
            n_uncond_samples: 1000,
            rank_clip: 0.01,
            prob_floor: 1e-5,
            max_rejection_rounds: 50,
            n_initial: 10,
            n_refine: 25,
            centering: Centering::GridMean,
            sharing: SampleSharing::default(),
        }
    }
}

impl AcquisitionConfig {
    /// Monte Carlo widths divided by five; everything else unchanged.
    pub fn desk() -> Self {
        Self::default().scaled_down(5)
    }

    pub fn scaled_down(mut self, factor: usize) -> Self {
        let f = factor.max(1);
        self.n_max_samples = (self.n_max_samples / f).max(1);
        self.n_gumbel_samples = (self.n_gumbel_samples / f).max(1);
        self.n_trunc_samples = (self.n_trunc_samples / f).max(1);
        self.n_uncond_samples = (self.n_uncond_samples / f).max(1);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.n_candidate_grid,
            self.n_max_samples,
            self.n_gumbel_samples,
            self.n_bins,
            self.n_trunc_samples,
            self.n_uncond_samples,
            self.max_rejection_rounds,
            self.n_initial,
        ];
        if counts.contains(&0) {
            return Err(CpboError::InvalidParameter(
                "acquisition sample counts must be positive".into(),
            ));
        }
        if self.n_max_samples < 2 {
            return Err(CpboError::InvalidParameter(
                "Gumbel fit needs at least two posterior draws".into(),
            ));
        }
        if !(self.rank_clip > 0.0 && self.rank_clip < 0.5) {
            return Err(CpboError::InvalidParameter("rank_clip must lie in (0, 0.5)".into()));
        }
        if !(self.prob_floor > 0.0 && self.prob_floor < 1.0 / 3.0) {
            return Err(CpboError::InvalidParameter("prob_floor must lie in (0, 1/3)".into()));
        }
        Ok(())
    }
}

/// Per-iteration record of one acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionTelemetry {
    pub gumbel: GumbelFit,
    pub bins: Vec<MaxBin>,
    pub grid_rank: usize,
    pub fallback_count: usize,
    pub best_value: f64,
    pub optimizer: OptimizerTrace,
}

/// Information-gain maximizer given the reference `x_ref`.
pub fn maximize_acquisition<R: Rng + ?Sized>(
    post: &Posterior<'_>,
    x_ref: &Config,
    cfg: &AcquisitionConfig,
    rng: &mut R,
) -> Result<(Config, AcquisitionTelemetry)> {
    let ctx = StepContext::new(post, cfg, rng)?;
    maximize_in(&ctx, x_ref, rng)
}

pub fn maximize_in<R: Rng + ?Sized>(
    ctx: &StepContext<'_>,
    x_ref: &Config,
    rng: &mut R,
) -> Result<(Config, AcquisitionTelemetry)> {
    if x_ref.dim() != ctx.post.model.dim() {
        return Err(CpboError::DimensionMismatch {
            expected: ctx.post.model.dim(),
            got: x_ref.dim(),
        });
    }
    let before = ctx.fallback_count();
    let (x, best, trace) = {
        let obj = ctx.objective_for(x_ref);
        maximize(&obj, x_ref.dim(), ctx.cfg.n_initial, ctx.cfg.n_refine, rng)?
    };
    Ok((
        x,
        AcquisitionTelemetry {
            gumbel: ctx.gumbel,
            bins: ctx.bins.clone(),
            grid_rank: ctx.grid_rank,
            fallback_count: ctx.fallback_count() - before,
            best_value: best,
            optimizer: trace,
        },
    ))
}

/// Two fresh configs maximizing the information gain of their comparison,
/// by alternating over the two arguments starting from `start`.
pub fn maximize_pair<R: Rng + ?Sized>(
    post: &Posterior<'_>,
    start: &Config,
    cfg: &AcquisitionConfig,
    rounds: usize,
    rng: &mut R,
) -> Result<(Config, Config, AcquisitionTelemetry)> {
    let ctx = StepContext::new(post, cfg, rng)?;
    let (mut a, mut tel) = maximize_in(&ctx, start, rng)?;
    let mut b = start.clone();
    for _ in 0..rounds.max(1) {
        let (nb, tb) = maximize_in(&ctx, &a, rng)?;
        b = nb;
        let (na, ta) = maximize_in(&ctx, &b, rng)?;
        a = na;
        tel.fallback_count += tb.fallback_count + ta.fallback_count;
        tel.best_value = ta.best_value;
        tel.optimizer = ta.optimizer;
    }
    Ok((a, b, tel))
}

/// Truncated pair samples `(f(x), f(x_ref))` with `max <= f_star`.
pub fn truncated_pair_samples<R: Rng + ?Sized>(
    post: &Posterior<'_>,
    x: &Config,
    x_ref: &Config,
    f_star: f64,
    cfg: &AcquisitionConfig,
    rng: &mut R,
) -> Result<(Vec<(f64, f64)>, usize)> {
    let ctx = light_context(post, cfg, rng)?;
    let pair = ctx.pair(x, x_ref);
    let out = ctx.truncated_pairs(&pair, f_star, 0, &ctx.draws(x, x_ref));
    Ok((out, ctx.fallback_count()))
}

/// Predictive distribution of the comparison outcome, optionally conditioned
/// on the max value.
pub fn predictive_response_dist<R: Rng + ?Sized>(
    post: &Posterior<'_>,
    x: &Config,
    x_ref: &Config,
    f_star: Option<f64>,
    cfg: &AcquisitionConfig,
    rng: &mut R,
) -> Result<OutcomeProbs> {
    let ctx = light_context(post, cfg, rng)?;
    let pair = ctx.pair(x, x_ref);
    Ok(match f_star {
        Some(f) => ctx.predictive_truncated(&pair, f, 0, &ctx.draws(x, x_ref)),
        None => ctx.predictive_unconditional(&pair, &ctx.draws(x, x_ref)),
    })
}

/// Information gain of comparing `x` against `x_ref`, fitting the Gumbel
/// from scratch.
pub fn information_gain<R: Rng + ?Sized>(
    post: &Posterior<'_>,
    x: &Config,
    x_ref: &Config,
    cfg: &AcquisitionConfig,
    rng: &mut R,
) -> Result<f64> {
    let ctx = StepContext::new(post, cfg, rng)?;
    Ok(ctx.information_gain(x, x_ref))
}

/// Untruncated indifference probability against `x_ref` at each grid point.
pub fn indifference_probability_map<R: Rng + ?Sized>(
    post: &Posterior<'_>,
    x_ref: &Config,
    grid: &[Config],
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let cfg = AcquisitionConfig {
        n_uncond_samples: n_samples,
        ..AcquisitionConfig::default()
    };
    let ctx = light_context(post, &cfg, rng)?;
    Ok(ctx.indifference_map(x_ref, grid))
}

// Context without a max-value fit, for the standalone sampling operations.
fn light_context<'a, R: Rng + ?Sized>(
    post: &'a Posterior<'a>,
    cfg: &AcquisitionConfig,
    rng: &mut R,
) -> Result<StepContext<'a>> {
    let grid = crate::benchmarks::sobol(cfg.n_candidate_grid, post.model.dim(), rng.random())?;
    let placeholder = GumbelFit::new(0.0, 1.0)?;
    StepContext::with_fit(
        post,
        cfg,
        grid,
        placeholder,
        vec![MaxBin {
            value: f64::INFINITY,
            weight: 1.0,
        }],
        0,
        rng.random(),
    )
}
