//! Three-outcome Thurstone preference model with a just-noticeable-difference
//! band, the simulated oracles built on it, and the expected-indifference
//! calibration.

use std::f64::consts::SQRT_2;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::benchmarks::NormalizedUtility;
use crate::error::{CpboError, Result};
use crate::normal;
use crate::space::Config;

/// Default perceptual noise scale.
pub const DEFAULT_SIGMA: f64 = 0.04;

/// Stabilizer added to every probability before taking a logarithm.
pub const PROB_EPS: f64 = 1e-5;

/// A preference response; `Plus` means the current (newer) candidate won.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum PreferenceLabel {
    Minus,
    Zero,
    Plus,
}

impl PreferenceLabel {
    pub fn value(self) -> i8 {
        match self {
            Self::Minus => -1,
            Self::Zero => 0,
            Self::Plus => 1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Self::Minus => Self::Plus,
            Self::Zero => Self::Zero,
            Self::Plus => Self::Minus,
        }
    }
}

impl TryFrom<i8> for PreferenceLabel {
    type Error = CpboError;

    fn try_from(v: i8) -> Result<Self> {
        match v {
            -1 => Ok(Self::Minus),
            0 => Ok(Self::Zero),
            1 => Ok(Self::Plus),
            other => Err(CpboError::InvalidParameter(format!(
                "preference label must be -1, 0 or 1, got {other}"
            ))),
        }
    }
}

impl From<PreferenceLabel> for i8 {
    fn from(l: PreferenceLabel) -> i8 {
        l.value()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodParams {
    pub sigma: f64,
    pub gamma: f64,
}

impl LikelihoodParams {
    pub fn new(sigma: f64, gamma: f64) -> Result<Self> {
        let p = Self { sigma, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(CpboError::InvalidParameter(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.gamma >= 0.0) {
            return Err(CpboError::InvalidParameter(format!(
                "gamma must be nonnegative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Outcome probabilities for a latent difference `f(current) - f(previous)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeProbs {
    pub plus: f64,
    pub zero: f64,
    pub minus: f64,
}

impl OutcomeProbs {
    pub fn get(&self, label: PreferenceLabel) -> f64 {
        match label {
            PreferenceLabel::Plus => self.plus,
            PreferenceLabel::Zero => self.zero,
            PreferenceLabel::Minus => self.minus,
        }
    }

    pub fn sum(&self) -> f64 {
        self.plus + self.zero + self.minus
    }

    /// Floors every entry at `eps` and renormalizes.
    pub fn floored(&self, eps: f64) -> Self {
        let p = self.plus.max(eps);
        let z = self.zero.max(eps);
        let m = self.minus.max(eps);
        let s = p + z + m;
        Self {
            plus: p / s,
            zero: z / s,
            minus: m / s,
        }
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        [self.plus, self.zero, self.minus]
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    }
}

/// Closed-form probabilities of the three outcomes.
pub fn outcome_probabilities(delta_f: f64, params: &LikelihoodParams) -> Result<OutcomeProbs> {
    if !delta_f.is_finite() {
        return Err(CpboError::NonFinite("utility difference"));
    }
    Ok(outcome_probs_unchecked(delta_f, params.gamma, params.sigma))
}

#[inline]
pub(crate) fn outcome_probs_unchecked(delta_f: f64, gamma: f64, sigma: f64) -> OutcomeProbs {
    let s = SQRT_2 * sigma;
    let hi = (gamma - delta_f) / s;
    let lo = (-gamma - delta_f) / s;
    OutcomeProbs {
        // Φ((Δ-γ)/s) is the upper tail above `hi`
        plus: normal::sf(hi),
        zero: normal::interval(lo, hi),
        minus: normal::cdf(lo),
    }
}

/// Probability of one label and its derivatives with respect to the latent
/// difference and to gamma.
#[inline]
pub(crate) fn label_prob_and_grad(
    delta_f: f64,
    label: PreferenceLabel,
    gamma: f64,
    sigma: f64,
) -> (f64, f64, f64) {
    let s = SQRT_2 * sigma;
    let hi = (gamma - delta_f) / s;
    let lo = (-gamma - delta_f) / s;
    match label {
        PreferenceLabel::Plus => {
            let d = normal::pdf(hi) / s;
            (normal::sf(hi), d, -d)
        }
        PreferenceLabel::Minus => {
            let d = normal::pdf(lo) / s;
            (normal::cdf(lo), -d, -d)
        }
        PreferenceLabel::Zero => {
            let ph = normal::pdf(hi) / s;
            let pl = normal::pdf(lo) / s;
            (normal::interval(lo, hi), pl - ph, ph + pl)
        }
    }
}

/// One observed comparison between two configs, referenced by index into
/// a dataset's config list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comparison {
    pub prev: usize,
    pub curr: usize,
    pub label: PreferenceLabel,
}

/// Preference observations over a deduplicated config list.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDataset {
    pub configs: Vec<Config>,
    pub comparisons: Vec<Comparison>,
}

impl PreferenceDataset {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index of `x`, inserting it if unseen.
    pub fn add_config(&mut self, x: Config) -> usize {
        if let Some(i) = self.index_of(&x) {
            return i;
        }
        self.configs.push(x);
        self.configs.len() - 1
    }

    pub fn index_of(&self, x: &Config) -> Option<usize> {
        let key = x.identity_key();
        self.configs.iter().position(|c| c.identity_key() == key)
    }

    pub fn push(&mut self, prev: usize, curr: usize, label: PreferenceLabel) -> Result<()> {
        let n = self.configs.len();
        if prev >= n {
            return Err(CpboError::MissingLatent(prev));
        }
        if curr >= n {
            return Err(CpboError::MissingLatent(curr));
        }
        self.comparisons.push(Comparison { prev, curr, label });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.comparisons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comparisons.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.configs.first().map(Config::dim)
    }

    pub fn count_label(&self, label: PreferenceLabel) -> usize {
        self.comparisons.iter().filter(|c| c.label == label).count()
    }
}

/// `Σ log(P(r_i | Δf_i) + ε)` over all comparisons.
pub fn log_likelihood(
    dataset: &PreferenceDataset,
    f_values: &[f64],
    params: &LikelihoodParams,
) -> Result<f64> {
    params.validate()?;
    let mut total = 0.0;
    for c in &dataset.comparisons {
        let fp = *f_values.get(c.prev).ok_or(CpboError::MissingLatent(c.prev))?;
        let fc = *f_values.get(c.curr).ok_or(CpboError::MissingLatent(c.curr))?;
        let p = outcome_probabilities(fc - fp, params)?.get(c.label);
        total += (p + PROB_EPS).ln();
    }
    Ok(total)
}

/// Simulated evaluator drawing Thurstone noise `δ ~ N(0, 2σ²)`.
pub fn sample_response_three<R: Rng + ?Sized>(
    delta_f: f64,
    params: &LikelihoodParams,
    rng: &mut R,
) -> PreferenceLabel {
    let z: f64 = StandardNormal.sample(rng);
    let perceived = delta_f + SQRT_2 * params.sigma * z;
    if perceived > params.gamma {
        PreferenceLabel::Plus
    } else if perceived < -params.gamma {
        PreferenceLabel::Minus
    } else {
        PreferenceLabel::Zero
    }
}

/// Binary oracle: in-band responses become a fair coin flip.
pub fn sample_response_binary<R: Rng + ?Sized>(
    delta_f: f64,
    params: &LikelihoodParams,
    rng: &mut R,
) -> PreferenceLabel {
    let z: f64 = StandardNormal.sample(rng);
    let perceived = delta_f + SQRT_2 * params.sigma * z;
    if perceived > params.gamma {
        PreferenceLabel::Plus
    } else if perceived < -params.gamma {
        PreferenceLabel::Minus
    } else if rng.random::<bool>() {
        PreferenceLabel::Plus
    } else {
        PreferenceLabel::Minus
    }
}

/// What kind of simulated evaluator answers comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    #[default]
    ThreeOutcome,
    BinaryTieBreak,
}

impl OracleKind {
    pub fn respond<R: Rng + ?Sized>(
        self,
        delta_f: f64,
        params: &LikelihoodParams,
        rng: &mut R,
    ) -> PreferenceLabel {
        match self {
            Self::ThreeOutcome => sample_response_three(delta_f, params, rng),
            Self::BinaryTieBreak => sample_response_binary(delta_f, params, rng),
        }
    }
}

/// Fraction of uniformly random config pairs whose true utility difference
/// lies inside the band `|Δf| <= γ`.
///
/// This is the noiseless indifference ratio; [`expected_perceived_indifference`]
/// averages the noisy `p_zero` instead.
pub fn expected_indifference_ratio<R: Rng + ?Sized>(
    utility: &NormalizedUtility,
    params: &LikelihoodParams,
    n_pairs: usize,
    rng: &mut R,
) -> Result<f64> {
    params.validate()?;
    if n_pairs == 0 {
        return Err(CpboError::InvalidParameter("n_pairs must be positive".into()));
    }
    if params.gamma == 0.0 {
        return Ok(0.0);
    }
    let dim = utility.dim();
    let mut hits = 0usize;
    let mut a = vec![0.0; dim];
    let mut b = vec![0.0; dim];
    for _ in 0..n_pairs {
        a.iter_mut().for_each(|v| *v = rng.random());
        b.iter_mut().for_each(|v| *v = rng.random());
        if (utility.eval(&a) - utility.eval(&b)).abs() <= params.gamma {
            hits += 1;
        }
    }
    Ok(hits as f64 / n_pairs as f64)
}

/// Monte Carlo mean of the perceived-indifference probability `p_zero` over
/// uniformly random config pairs.
pub fn expected_perceived_indifference<R: Rng + ?Sized>(
    utility: &NormalizedUtility,
    params: &LikelihoodParams,
    n_pairs: usize,
    rng: &mut R,
) -> Result<f64> {
    params.validate()?;
    if n_pairs == 0 {
        return Err(CpboError::InvalidParameter("n_pairs must be positive".into()));
    }
    let dim = utility.dim();
    let mut total = 0.0;
    let mut a = vec![0.0; dim];
    let mut b = vec![0.0; dim];
    for _ in 0..n_pairs {
        a.iter_mut().for_each(|v| *v = rng.random());
        b.iter_mut().for_each(|v| *v = rng.random());
        let d = utility.eval(&a) - utility.eval(&b);
        total += outcome_probs_unchecked(d, params.gamma, params.sigma).zero;
    }
    Ok(total / n_pairs as f64)
}
