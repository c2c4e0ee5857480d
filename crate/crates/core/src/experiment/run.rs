use serde::{Deserialize, Serialize};

use super::config::{GammaMode, RunConfig};
use crate::acquisition::{maximize_acquisition, maximize_pair, AcquisitionTelemetry};
use crate::benchmarks::{latin_hypercube, utility, NormalizedUtility};
use crate::cost::{comparisons_for_step, Charge, CostLedger};
use crate::error::{CpboError, Result};
use crate::metrics::{
    choice_accuracy_with, inference_regret, ordinal_accuracy_with, random_pairs, recommend,
    simple_regret, MetricReport,
};
use crate::preference::{
    expected_indifference_ratio, LikelihoodParams, PreferenceDataset, PreferenceLabel,
};
use crate::rng::{self, tag};
use crate::space::Config;
use crate::surrogate::{fit, Checkpoint, FitOptions, FitTrace, GammaPrior, SurrogateModel};

const INDIFFERENCE_PAIRS: usize = 20_000;

/// One post-initial step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub step: usize,
    pub produced: Vec<Config>,
    /// History index of each comparison's earlier config.
    pub references: Vec<usize>,
    pub labels: Vec<PreferenceLabel>,
    pub cumulative_cost: f64,
    pub gamma_hat: f64,
    pub acquisition: AcquisitionTelemetry,
}

/// Metrics of the model fitted after `n_produced` candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n_produced: usize,
    pub cumulative_cost: f64,
    pub simple_regret: f64,
    pub inference_regret: f64,
    pub ordinal_accuracy: f64,
    pub choice_accuracy: f64,
    pub gamma_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: RunConfig,
    pub initial_design: Vec<Config>,
    pub history: Vec<Config>,
    pub dataset: PreferenceDataset,
    pub records: Vec<IterationRecord>,
    pub curve: Vec<CurvePoint>,
    pub gamma_trajectory: Vec<f64>,
    pub ledger: Option<CostLedger>,
    pub final_model: Option<Checkpoint>,
    pub metrics: Option<MetricReport>,
    /// Noiseless fraction of random pairs inside the true band.
    pub expected_indifference: f64,
}

impl RunResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn count_label(&self, label: PreferenceLabel) -> usize {
        self.dataset.count_label(label)
    }
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    utility: NormalizedUtility,
    params: LikelihoodParams,
    pairs: Vec<(Config, Config)>,
    oracle: rng::Stream,
    result: RunResult,
}

/// Runs one simulated optimization loop to completion.
pub fn run_once(cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    let utility = utility(&cfg.benchmark)?;
    let params = LikelihoodParams::new(cfg.sigma, cfg.gamma_true)?;
    let dim = utility.dim();
    let pairs = random_pairs(cfg.metric_pairs, dim, &mut rng::stream(cfg.seed, &[tag("metrics")]));
    let expected_indifference = expected_indifference_ratio(
        &utility,
        &params,
        INDIFFERENCE_PAIRS,
        &mut rng::stream(cfg.seed, &[tag("indifference")]),
    )?;
    let ledger = cfg.budget.map(CostLedger::new).transpose()?;
    let mut runner = Runner {
        cfg,
        utility,
        params,
        pairs,
        oracle: rng::stream(cfg.seed, &[tag("oracle")]),
        result: RunResult {
            config: cfg.clone(),
            initial_design: Vec::new(),
            history: Vec::new(),
            dataset: PreferenceDataset::new(),
            records: Vec::new(),
            curve: Vec::new(),
            gamma_trajectory: Vec::new(),
            ledger,
            final_model: None,
            metrics: None,
            expected_indifference,
        },
    };
    let mut step = 0;
    match runner.execute(&mut step) {
        Ok(()) => Ok(runner.result),
        Err(e) => Err(CpboError::RunAborted {
            iteration: step,
            partial: runner.result.to_json().ok(),
            source: Box::new(e),
        }),
    }
}

impl Runner<'_> {
    fn dim(&self) -> usize {
        self.utility.dim()
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions {
            sigma: self.cfg.sigma,
            gamma_frozen: self.cfg.gamma_mode == GammaMode::FrozenZero,
            lengthscale_prior: self.cfg.lengthscale_prior.then(GammaPrior::default),
            ..FitOptions::default()
        }
    }

    fn produce(&mut self, x: Config) -> (usize, usize) {
        let data_idx = self.result.dataset.add_config(x.clone());
        self.result.history.push(x);
        (self.result.history.len() - 1, data_idx)
    }

    fn compare(&mut self, prev: &Config, curr: &Config) -> Result<PreferenceLabel> {
        let delta = self.utility.eval_config(curr) - self.utility.eval_config(prev);
        let label = self.cfg.oracle_kind.respond(delta, &self.params, &mut self.oracle);
        let p = self.result.dataset.add_config(prev.clone());
        let c = self.result.dataset.add_config(curr.clone());
        self.result.dataset.push(p, c, label)?;
        Ok(label)
    }

    fn spent(&self) -> f64 {
        self.result.ledger.as_ref().map_or(0.0, |l| l.spent)
    }

    fn fit_model(&mut self, step: usize) -> Result<(SurrogateModel, FitTrace)> {
        let mut r = rng::stream(self.cfg.seed, &[tag("fit"), step as u64]);
        let (model, trace) = fit(
            &self.result.dataset,
            self.dim(),
            &self.cfg.training,
            &self.fit_options(),
            &mut r,
        )?;
        self.result.gamma_trajectory.push(model.gamma());
        Ok((model, trace))
    }

    fn snapshot(&mut self, model: &SurrogateModel) -> Result<(Config, CurvePoint)> {
        let post = model.posterior()?;
        let rec = recommend(&post)?;
        let truth = |x: &[f64]| self.utility.eval(x);
        let pred = |x: &[f64]| post.mean_at(x);
        let point = CurvePoint {
            n_produced: self.result.history.len(),
            cumulative_cost: self.spent(),
            simple_regret: simple_regret(&self.utility, &self.result.history)?,
            inference_regret: inference_regret(&self.utility, &rec),
            ordinal_accuracy: ordinal_accuracy_with(pred, truth, &self.pairs),
            choice_accuracy: choice_accuracy_with(
                pred,
                truth,
                model.gamma(),
                self.cfg.gamma_true,
                !model.gamma_frozen,
                &self.pairs,
            ),
            gamma_hat: model.gamma(),
        };
        self.result.curve.push(point.clone());
        Ok((rec, point))
    }

    fn finished(&self) -> bool {
        match (self.cfg.iterations, &self.result.ledger) {
            (Some(n), _) => self.result.history.len() >= n,
            (None, Some(l)) => !l.can_afford(&self.cfg.strategy, &self.cfg.cost_model),
            (None, None) => true,
        }
    }

    fn execute(&mut self, step: &mut usize) -> Result<()> {
        let design = latin_hypercube(self.cfg.n_init, self.dim(), rng::derive_seed(self.cfg.seed, &[tag("init")]))?;
        self.result.initial_design = design.clone();
        for (i, x) in design.into_iter().enumerate() {
            self.produce(x.clone());
            if i > 0 {
                let prev = self.result.history[i - 1].clone();
                self.compare(&prev, &x)?;
            }
        }
        if let Some(l) = self.result.ledger.as_mut() {
            l.mark_produced(&self.result.initial_design);
        }
        let acq_cfg = self.cfg.effective_acquisition();
        let strategy = self.cfg.strategy;
        while !self.finished() {
            let (model, _) = self.fit_model(*step)?;
            self.snapshot(&model)?;
            let post = model.posterior()?;
            let mut ar = rng::stream(self.cfg.seed, &[tag("acquisition"), *step as u64]);
            let (n_new, refs) = comparisons_for_step(&strategy, self.result.history.len())?;
            let (produced, references, labels, telemetry) = if n_new == 2 {
                let start = self.result.history.last().cloned().expect("non-empty history");
                let (a, b, tel) = maximize_pair(&post, &start, &acq_cfg, 1, &mut ar)?;
                let label = self.compare(&a, &b)?;
                let (ia, _) = self.produce(a.clone());
                self.produce(b.clone());
                (vec![a, b], vec![ia], vec![label], tel)
            } else {
                let latest = self.result.history[refs[0]].clone();
                let (x, tel) = maximize_acquisition(&post, &latest, &acq_cfg, &mut ar)?;
                let mut labels = Vec::with_capacity(refs.len());
                for &r in &refs {
                    let prev = self.result.history[r].clone();
                    labels.push(self.compare(&prev, &x)?);
                }
                self.produce(x.clone());
                (vec![x], refs, labels, tel)
            };
            if let Some(l) = self.result.ledger.as_mut() {
                let charged = l.charge_step(&strategy, &self.cfg.cost_model, &produced, labels.len());
                if charged == Charge::Exhausted {
                    return Err(CpboError::InvalidRunConfig(
                        "iteration exceeded the remaining budget".into(),
                    ));
                }
            }
            self.result.records.push(IterationRecord {
                step: *step,
                produced,
                references,
                labels,
                cumulative_cost: self.spent(),
                gamma_hat: model.gamma(),
                acquisition: telemetry,
            });
            *step += 1;
        }
        let (model, trace) = self.fit_model(*step)?;
        let (rec, point) = self.snapshot(&model)?;
        self.result.metrics = Some(MetricReport {
            simple_regret: point.simple_regret,
            inference_regret: point.inference_regret,
            ordinal_accuracy: point.ordinal_accuracy,
            choice_accuracy: point.choice_accuracy,
            recommendation: rec,
        });
        self.result.final_model = Some(Checkpoint::new(model, Some(self.cfg.seed), Some(&trace)));
        Ok(())
    }
}
