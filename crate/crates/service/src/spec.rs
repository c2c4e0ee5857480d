use serde::{Deserialize, Serialize};

use cpbo_core::acquisition::AcquisitionConfig;
use cpbo_core::experiment::ScalePreset;
use cpbo_core::preference::DEFAULT_SIGMA;
use cpbo_core::surrogate::TrainingConfig;
use cpbo_core::{Axis, Bounds};

/// One optimized parameter in native units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    #[serde(default)]
    pub name: String,
    pub low: f64,
    pub high: f64,
    /// Resolution of the operator's controls; absent means continuous.
    #[serde(default)]
    pub step: Option<f64>,
}

/// What a client posts to open a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionSpec {
    pub name: String,
    /// Optional cross-check against the number of axes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    pub axes: Vec<AxisSpec>,
    pub n_init: usize,
    pub total_iterations: usize,
    /// History indices at which the posterior-mean maximizer is produced.
    pub recommendation_steps: Vec<usize>,
    pub lengthscale_prior_enabled: bool,
    pub seed: u64,
    pub sigma: f64,
    /// Halves training iterations.
    pub fast: bool,
    pub training: TrainingConfig,
    pub acquisition: AcquisitionConfig,
    pub scale_preset: ScalePreset,
}

impl Default for SessionSpec {
    fn default() -> Self {
        Self {
            name: "session".into(),
            dim: None,
            axes: Vec::new(),
            n_init: 15,
            total_iterations: 30,
            recommendation_steps: vec![24, 29],
            lengthscale_prior_enabled: true,
            seed: 0,
            sigma: DEFAULT_SIGMA,
            fast: false,
            training: TrainingConfig::default(),
            acquisition: AcquisitionConfig::default(),
            scale_preset: ScalePreset::Full,
        }
    }
}

impl SessionSpec {
    pub fn bounds(&self) -> Bounds {
        Bounds(
            self.axes
                .iter()
                .map(|a| Axis { low: a.low, high: a.high, step: a.step })
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.axes.is_empty() {
            return Err("at least one axis is required".into());
        }
        if let Some(d) = self.dim {
            if d != self.axes.len() {
                return Err(format!("dim is {d} but {} axes were given", self.axes.len()));
            }
        }
        self.bounds().validate().map_err(|e| e.to_string())?;
        if self.n_init < 2 {
            return Err("n_init must be at least 2".into());
        }
        if self.n_init > self.total_iterations {
            return Err(format!(
                "n_init ({}) exceeds total_iterations ({})",
                self.n_init, self.total_iterations
            ));
        }
        for &s in &self.recommendation_steps {
            if s >= self.total_iterations {
                return Err(format!("recommendation step {s} is not below total_iterations"));
            }
            if s < self.n_init {
                return Err(format!("recommendation step {s} falls inside the initial design"));
            }
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err("sigma must be positive".into());
        }
        self.training.validate().map_err(|e| e.to_string())?;
        self.effective_acquisition().validate().map_err(|e| e.to_string())?;
        Ok(())
    }

    pub fn effective_training(&self) -> TrainingConfig {
        let mut t = self.training;
        if self.fast {
            t.iterations = (t.iterations / 2).max(1);
        }
        t
    }

    pub fn effective_acquisition(&self) -> AcquisitionConfig {
        match self.scale_preset {
            ScalePreset::Full => self.acquisition,
            ScalePreset::Desk => self.acquisition.scaled_down(5),
        }
    }
}
