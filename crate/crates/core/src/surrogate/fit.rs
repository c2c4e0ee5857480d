use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::elbo::{initial_theta, unpack, Objective};
use super::model::{softplus, GammaPrior, SurrogateModel, DEFAULT_JITTER};
use crate::error::{CpboError, Result};
use crate::preference::{PreferenceDataset, DEFAULT_SIGMA};

/// Optimizer settings for the variational fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Monte Carlo samples of `u` per iteration.
    pub n_samples: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            learning_rate: 1e-2,
            n_samples: 50,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.n_samples == 0 {
            return Err(CpboError::InvalidParameter(
                "iterations and n_samples must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(CpboError::InvalidParameter("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Model options chosen by the caller rather than learned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub sigma: f64,
    pub initial_gamma: f64,
    pub initial_lengthscale: f64,
    /// Fix gamma at zero, reducing the likelihood to a threshold-free model.
    pub gamma_frozen: bool,
    pub lengthscale_prior: Option<GammaPrior>,
    pub jitter: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_SIGMA,
            initial_gamma: 0.01,
            initial_lengthscale: softplus(0.0),
            gamma_frozen: false,
            lengthscale_prior: None,
            jitter: DEFAULT_JITTER,
        }
    }
}

/// Loss history of one fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub losses: Vec<f64>,
    pub gammas: Vec<f64>,
    pub best_iteration: usize,
    pub best_loss: f64,
}

/// Fits a fresh model to `dataset`, returning the lowest-loss iterate.
pub fn fit<R: Rng + ?Sized>(
    dataset: &PreferenceDataset,
    dim: usize,
    training: &TrainingConfig,
    options: &FitOptions,
    rng: &mut R,
) -> Result<(SurrogateModel, FitTrace)> {
    training.validate()?;
    if !(options.sigma > 0.0) {
        return Err(CpboError::InvalidParameter("sigma must be positive".into()));
    }
    let mut model = SurrogateModel::prior(
        dataset.configs.clone(),
        dim,
        options.initial_lengthscale,
        options.sigma,
        options.initial_gamma,
        options.gamma_frozen,
    )?;
    model.lengthscale_prior = options.lengthscale_prior;
    model.jitter = options.jitter;
    let n = dataset.configs.len();
    if n < 2 {
        return Err(CpboError::Degenerate(format!(
            "fitting needs at least two distinct configs, got {n}"
        )));
    }
    for c in &dataset.comparisons {
        if c.prev >= n {
            return Err(CpboError::MissingLatent(c.prev));
        }
        if c.curr >= n {
            return Err(CpboError::MissingLatent(c.curr));
        }
    }

    let objective = Objective::new(&dataset.comparisons, &model);
    let mut theta = initial_theta(&model);
    let p = theta.len();
    let mut grad = vec![0.0; p];
    let mut m1 = vec![0.0; p];
    let mut m2 = vec![0.0; p];
    let mut z = vec![0.0; training.n_samples * n];
    let mut best = theta.clone();
    let mut trace = FitTrace {
        losses: Vec::with_capacity(training.iterations),
        gammas: Vec::with_capacity(training.iterations),
        best_iteration: 0,
        best_loss: f64::INFINITY,
    };
    let (b1, b2) = (training.beta1, training.beta2);
    let gamma_slot = p - 1;
    for it in 0..training.iterations {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let loss = objective
            .loss_and_grad(&theta, &z, &mut grad)
            .map_err(|e| match e {
                CpboError::NonFinite(_) => CpboError::NonFiniteLoss { iteration: it },
                other => other,
            })?;
        trace.losses.push(loss);
        trace.gammas.push(if model.gamma_frozen {
            0.0
        } else {
            softplus(theta[gamma_slot])
        });
        if loss < trace.best_loss {
            trace.best_loss = loss;
            trace.best_iteration = it;
            best.copy_from_slice(&theta);
        }
        let bc1 = 1.0 - b1.powi(it as i32 + 1);
        let bc2 = 1.0 - b2.powi(it as i32 + 1);
        for k in 0..p {
            m1[k] = b1 * m1[k] + (1.0 - b1) * grad[k];
            m2[k] = b2 * m2[k] + (1.0 - b2) * grad[k] * grad[k];
            let mhat = m1[k] / bc1;
            let vhat = m2[k] / bc2;
            theta[k] -= training.learning_rate * mhat / (vhat.sqrt() + training.adam_eps);
        }
    }
    unpack(&best, &mut model)?;
    model.validate()?;
    Ok((model, trace))
}
