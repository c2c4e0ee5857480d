use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionConfig;
use crate::cost::{iteration_cost, CostModel, Strategy};
use crate::error::{CpboError, Result};
use crate::preference::{OracleKind, DEFAULT_SIGMA};
use crate::surrogate::TrainingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GammaMode {
    #[default]
    Learnable,
    FrozenZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScalePreset {
    #[default]
    Full,
    /// Acquisition Monte Carlo widths divided by five.
    Desk,
}

/// One simulated optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub benchmark: String,
    pub strategy: Strategy,
    pub cost_model: CostModel,
    /// Total produced candidates, initial design included.
    pub iterations: Option<usize>,
    /// Budget for the post-initial iterations; the initial design is free.
    pub budget: Option<f64>,
    pub gamma_true: f64,
    pub sigma: f64,
    pub oracle_kind: OracleKind,
    pub n_init: usize,
    pub seed: u64,
    pub gamma_mode: GammaMode,
    pub acquisition: AcquisitionConfig,
    pub training: TrainingConfig,
    pub scale_preset: ScalePreset,
    pub lengthscale_prior: bool,
    pub metric_pairs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            benchmark: "branin".into(),
            strategy: Strategy::Consecutive,
            cost_model: CostModel::default(),
            iterations: Some(30),
            budget: None,
            gamma_true: 0.04,
            sigma: DEFAULT_SIGMA,
            oracle_kind: OracleKind::ThreeOutcome,
            n_init: 4,
            seed: 0,
            gamma_mode: GammaMode::Learnable,
            acquisition: AcquisitionConfig::default(),
            training: TrainingConfig::default(),
            scale_preset: ScalePreset::Full,
            lengthscale_prior: false,
            metric_pairs: crate::metrics::DEFAULT_PAIRS,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        match (self.iterations, self.budget) {
            (Some(_), Some(_)) => {
                return Err(CpboError::InvalidRunConfig(
                    "set either iterations or budget, not both".into(),
                ))
            }
            (None, None) => {
                return Err(CpboError::InvalidRunConfig(
                    "one of iterations or budget is required".into(),
                ))
            }
            (Some(n), None) if n < self.n_init => {
                return Err(CpboError::InvalidRunConfig(format!(
                    "iterations ({n}) must be at least n_init ({})",
                    self.n_init
                )))
            }
            (None, Some(b)) if !(b > 0.0 && b.is_finite()) => {
                return Err(CpboError::InvalidRunConfig(format!(
                    "budget must be positive, got {b}"
                )))
            }
            _ => {}
        }
        if self.n_init < 2 {
            return Err(CpboError::InvalidRunConfig("n_init must be at least 2".into()));
        }
        if !(self.gamma_true >= 0.0 && self.gamma_true.is_finite()) {
            return Err(CpboError::InvalidRunConfig("gamma_true must be nonnegative".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(CpboError::InvalidRunConfig("sigma must be positive".into()));
        }
        if self.metric_pairs == 0 {
            return Err(CpboError::InvalidRunConfig("metric_pairs must be positive".into()));
        }
        self.cost_model.validate()?;
        self.strategy.validate()?;
        if self.budget.is_some() && !(iteration_cost(&self.strategy, &self.cost_model) > 0.0) {
            return Err(CpboError::InvalidRunConfig(
                "a budget needs a positive iteration cost".into(),
            ));
        }
        self.training.validate()?;
        self.effective_acquisition().validate()
    }

    /// Acquisition settings after the scale preset is applied.
    pub fn effective_acquisition(&self) -> AcquisitionConfig {
        match self.scale_preset {
            ScalePreset::Full => self.acquisition,
            ScalePreset::Desk => self.acquisition.scaled_down(5),
        }
    }

    /// Desk-scale consecutive run with the given benchmark and seed.
    pub fn desk(benchmark: &str, seed: u64) -> Self {
        Self {
            benchmark: benchmark.into(),
            seed,
            scale_preset: ScalePreset::Desk,
            ..Self::default()
        }
    }

    pub fn strategy_label(&self) -> String {
        let mut s = self.strategy.name();
        if self.gamma_mode == GammaMode::FrozenZero {
            s.push_str("-gamma0");
        }
        s
    }
}
