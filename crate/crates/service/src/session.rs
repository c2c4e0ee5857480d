//! Session state machine. Everything here is synchronous and free of I/O;
//! the HTTP layer persists each [`Event`] before applying it.

use serde::{Deserialize, Serialize};

use cpbo_core::acquisition::{indifference_probability_map, maximize_acquisition};
use cpbo_core::benchmarks::latin_hypercube;
use cpbo_core::metrics::recommend;
use cpbo_core::rng::{self, tag};
use cpbo_core::surrogate::{fit, Checkpoint, FitOptions, GammaPrior, SurrogateModel};
use cpbo_core::{Config, CpboError, PreferenceDataset, PreferenceLabel};

use crate::error::ApiError;
use crate::spec::SessionSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Interactive,
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Initial,
    Acquisition,
    Recommendation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub index: usize,
    pub native: Vec<f64>,
    pub unit: Config,
    pub kind: EntryKind,
    pub produced_at_ms: u64,
}

/// One recorded judgment of `curr` against `prev` (history indices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub prev: usize,
    pub curr: usize,
    pub label: PreferenceLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Operator aborted the run on flawed material.
    #[serde(default)]
    pub flawed: bool,
    pub at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub best_loss: f64,
    pub best_iteration: usize,
    pub training_iterations: usize,
    pub lengthscales: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iteration: usize,
    pub kind: EntryKind,
    /// History index the new config will be compared against.
    pub reference: usize,
    pub reference_native: Vec<f64>,
    pub gamma_hat: f64,
    pub posterior_mean: f64,
    pub posterior_sd: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub information_gain: Option<f64>,
    pub rejection_fallbacks: usize,
    pub fit: FitDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Created {
        id: String,
        spec: SessionSpec,
        design: Vec<HistoryEntry>,
        at_ms: u64,
    },
    Labeled(LabelEntry),
    Produced {
        entry: HistoryEntry,
        model: Box<Checkpoint>,
        diagnostics: Diagnostics,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub spec: SessionSpec,
    pub phase: Phase,
    pub created_at_ms: u64,
    pub history: Vec<HistoryEntry>,
    pub labels: Vec<LabelEntry>,
    /// History index awaiting a label.
    pub pending: Option<usize>,
    pub current_model: Option<Checkpoint>,
    pub gamma_trajectory: Vec<f64>,
    pub diagnostics: Vec<Diagnostics>,
}

/// Snapshot of what a refit needs, detached from the session lock.
#[derive(Debug, Clone)]
pub struct NextInput {
    spec: SessionSpec,
    history: Vec<HistoryEntry>,
    labels: Vec<LabelEntry>,
    now_ms: u64,
}

pub fn design(spec: &SessionSpec, now_ms: u64) -> Result<Vec<HistoryEntry>, CpboError> {
    let bounds = spec.bounds();
    let lhs = latin_hypercube(spec.n_init, spec.dim(), rng::derive_seed(spec.seed, &[tag("init")]))?;
    Ok(lhs
        .iter()
        .enumerate()
        .map(|(index, x)| {
            let (native, unit) = bounds.snap_unit(x);
            HistoryEntry { index, native, unit, kind: EntryKind::Initial, produced_at_ms: now_ms }
        })
        .collect())
}

impl Session {
    /// The creation event; apply it to [`Session::from_created`].
    pub fn create_event(id: String, spec: SessionSpec, now_ms: u64) -> Result<Event, ApiError> {
        spec.validate().map_err(ApiError::invalid)?;
        let design = design(&spec, now_ms).map_err(|e| ApiError::invalid(e.to_string()))?;
        Ok(Event::Created { id, spec, design, at_ms: now_ms })
    }

    pub fn from_created(ev: &Event) -> Option<Session> {
        let Event::Created { id, spec, design, at_ms } = ev else {
            return None;
        };
        Some(Session {
            id: id.clone(),
            spec: spec.clone(),
            phase: Phase::Init,
            created_at_ms: *at_ms,
            history: design.clone(),
            labels: Vec::new(),
            pending: Some(1),
            current_model: None,
            gamma_trajectory: Vec::new(),
            diagnostics: Vec::new(),
        })
    }

    /// Validates a label against the protocol without mutating anything.
    pub fn label_event(
        &self,
        label: PreferenceLabel,
        note: Option<String>,
        flawed: bool,
        now_ms: u64,
    ) -> Result<Event, ApiError> {
        if self.phase == Phase::Finished {
            return Err(ApiError::protocol("session is finished"));
        }
        let Some(curr) = self.pending else {
            return Err(ApiError::protocol("no comparison is pending; request the next configuration"));
        };
        Ok(Event::Labeled(LabelEntry { prev: curr - 1, curr, label, note, flawed, at_ms: now_ms }))
    }

    pub fn next_input(&self, now_ms: u64) -> Result<NextInput, ApiError> {
        match self.phase {
            Phase::Init => return Err(ApiError::protocol("initial design still awaits labels")),
            Phase::Finished => return Err(ApiError::protocol("session is finished")),
            Phase::Interactive => {}
        }
        if self.pending.is_some() {
            return Err(ApiError::protocol("the pending configuration has not been labeled"));
        }
        if self.history.len() >= self.spec.total_iterations {
            return Err(ApiError::protocol("all iterations have been produced"));
        }
        Ok(NextInput {
            spec: self.spec.clone(),
            history: self.history.clone(),
            labels: self.labels.clone(),
            now_ms,
        })
    }

    /// Applies an already validated and persisted event.
    pub fn apply(&mut self, ev: &Event) {
        match ev {
            Event::Created { .. } => {}
            Event::Labeled(l) => {
                self.labels.push(l.clone());
                self.pending = None;
                if self.phase == Phase::Init {
                    if l.curr + 1 < self.spec.n_init {
                        self.pending = Some(l.curr + 1);
                    } else {
                        self.phase = Phase::Interactive;
                    }
                }
                if self.phase == Phase::Interactive
                    && self.history.len() >= self.spec.total_iterations
                {
                    self.phase = Phase::Finished;
                }
            }
            Event::Produced { entry, model, diagnostics } => {
                self.history.push(entry.clone());
                self.pending = Some(entry.index);
                self.gamma_trajectory.push(model.gamma);
                self.current_model = Some((**model).clone());
                self.diagnostics.push(diagnostics.clone());
            }
        }
    }

    pub fn gamma_hat(&self) -> Option<f64> {
        self.current_model.as_ref().map(|m| m.gamma)
    }
}

fn dataset(history: &[HistoryEntry], labels: &[LabelEntry]) -> Result<PreferenceDataset, CpboError> {
    let mut d = PreferenceDataset::new();
    let idx: Vec<usize> = history.iter().map(|h| d.add_config(h.unit.clone())).collect();
    for l in labels {
        d.push(idx[l.prev], idx[l.curr], l.label)?;
    }
    Ok(d)
}

fn fit_session(
    spec: &SessionSpec,
    history: &[HistoryEntry],
    labels: &[LabelEntry],
) -> Result<(SurrogateModel, cpbo_core::surrogate::FitTrace), CpboError> {
    let data = dataset(history, labels)?;
    let options = FitOptions {
        sigma: spec.sigma,
        lengthscale_prior: spec.lengthscale_prior_enabled.then(GammaPrior::default),
        ..FitOptions::default()
    };
    let mut r = rng::stream(spec.seed, &[tag("fit"), history.len() as u64]);
    fit(&data, spec.dim(), &spec.effective_training(), &options, &mut r)
}

/// Refits and picks the next configuration. Long-running.
pub fn compute_next(input: NextInput) -> Result<Event, CpboError> {
    let NextInput { spec, history, labels, now_ms } = input;
    let (model, trace) = fit_session(&spec, &history, &labels)?;
    let post = model.posterior()?;
    let index = history.len();
    let latest = history.last().expect("initial design is never empty");
    let is_rec = spec.recommendation_steps.contains(&index);
    let (x, information_gain, fallbacks) = if is_rec {
        (recommend(&post)?, None, 0)
    } else {
        let mut r = rng::stream(spec.seed, &[tag("acquisition"), index as u64]);
        let (x, tel) = maximize_acquisition(&post, &latest.unit, &spec.effective_acquisition(), &mut r)?;
        (x, Some(tel.best_value), tel.fallback_count)
    };
    let (native, unit) = spec.bounds().snap_unit(&x);
    let kind = if is_rec { EntryKind::Recommendation } else { EntryKind::Acquisition };
    let diagnostics = Diagnostics {
        iteration: index,
        kind,
        reference: latest.index,
        reference_native: latest.native.clone(),
        gamma_hat: model.gamma(),
        posterior_mean: post.mean_at(&unit.0),
        posterior_sd: post.variance_at(&unit.0).max(0.0).sqrt(),
        information_gain,
        rejection_fallbacks: fallbacks,
        fit: FitDiagnostics {
            best_loss: trace.best_loss,
            best_iteration: trace.best_iteration,
            training_iterations: spec.effective_training().iterations,
            lengthscales: model.kernel.lengthscales().to_vec(),
        },
    };
    let entry = HistoryEntry { index, native, unit, kind, produced_at_ms: now_ms };
    let model = Checkpoint::new(model, Some(spec.seed), Some(&trace));
    Ok(Event::Produced { entry, model: Box::new(model), diagnostics })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub native: Vec<f64>,
    pub unit: Config,
    pub posterior_mean: f64,
}

/// Posterior-mean maximizer of a stored model, snapped to the control grid.
pub fn best_recommendation(spec: &SessionSpec, model: &SurrogateModel) -> Result<Recommendation, CpboError> {
    let post = model.posterior()?;
    let x = recommend(&post)?;
    let (native, unit) = spec.bounds().snap_unit(&x);
    let posterior_mean = post.mean_at(&unit.0);
    Ok(Recommendation { native, unit, posterior_mean })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMaximizer {
    pub native: Vec<f64>,
    /// Maximizer coordinates on the two swept axes.
    pub slice_coords: Vec<f64>,
    pub posterior_mean: f64,
    pub p_zero: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlicePayload {
    pub fixed_axis: usize,
    pub fixed_value: f64,
    /// Swept axis indices; the grid is `values[1].len()` rows by
    /// `values[0].len()` columns.
    pub swept_axes: Vec<usize>,
    pub values: Vec<Vec<f64>>,
    pub mean: Vec<Vec<f64>>,
    pub p_zero: Vec<Vec<f64>>,
    pub gamma_hat: f64,
    pub maximizer: SliceMaximizer,
}

pub const SLICE_SAMPLES: usize = 1000;

/// Posterior mean and indifference probability against the posterior
/// maximizer over a grid of two axes, with `fixed_axis` held at
/// `fixed_value`. Axes beyond the swept pair sit at the maximizer.
pub fn posterior_slice(
    spec: &SessionSpec,
    model: &SurrogateModel,
    fixed_axis: usize,
    fixed_value: f64,
    n: usize,
) -> Result<SlicePayload, ApiError> {
    let dim = spec.dim();
    if dim < 2 {
        return Err(ApiError::invalid("slices need at least two dimensions"));
    }
    if fixed_axis >= dim {
        return Err(ApiError::invalid(format!("axis {fixed_axis} out of range for dim {dim}")));
    }
    if !(2..=200).contains(&n) {
        return Err(ApiError::invalid("n must be between 2 and 200"));
    }
    let bounds = spec.bounds();
    let axis = bounds.0[fixed_axis];
    if !(fixed_value >= axis.low && fixed_value <= axis.high) {
        return Err(ApiError::invalid(format!(
            "value {fixed_value} outside [{}, {}]",
            axis.low, axis.high
        )));
    }
    let post = model.posterior().map_err(ApiError::compute)?;
    let best = recommend(&post).map_err(ApiError::compute)?;
    let swept: Vec<usize> = (0..dim).filter(|&k| k != fixed_axis).take(2).collect();
    let steps: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let rows: &[f64] = if swept.len() == 2 { &steps } else { &[0.0] };
    let mut grid = Vec::with_capacity(n * rows.len());
    for &v in rows {
        for &u in &steps {
            let mut x = best.0.clone();
            x[fixed_axis] = axis.to_unit(fixed_value);
            x[swept[0]] = u;
            if swept.len() == 2 {
                x[swept[1]] = v;
            }
            grid.push(Config(x));
        }
    }
    grid.push(best.clone());
    let mut r = rng::stream(spec.seed, &[tag("slice")]);
    let pz = indifference_probability_map(&post, &best, &grid, SLICE_SAMPLES, &mut r)
        .map_err(ApiError::compute)?;
    let means: Vec<f64> = grid.iter().map(|x| post.mean_at(&x.0)).collect();
    let chunk = |v: &[f64]| v[..grid.len() - 1].chunks(n).map(<[f64]>::to_vec).collect::<Vec<_>>();
    let values = swept
        .iter()
        .map(|&k| steps.iter().map(|&u| bounds.0[k].to_native(u)).collect())
        .collect();
    let native_best = bounds.to_native(&best);
    Ok(SlicePayload {
        fixed_axis,
        fixed_value,
        swept_axes: swept.clone(),
        values,
        mean: chunk(&means),
        p_zero: chunk(&pz),
        gamma_hat: model.gamma(),
        maximizer: SliceMaximizer {
            slice_coords: swept.iter().map(|&k| native_best[k]).collect(),
            native: native_best,
            posterior_mean: *means.last().expect("grid holds the maximizer"),
            p_zero: *pz.last().expect("grid holds the maximizer"),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::AxisSpec;

    fn spec() -> SessionSpec {
        SessionSpec {
            axes: vec![
                AxisSpec { name: "a".into(), low: 0.0, high: 10.0, step: Some(1.0) },
                AxisSpec { name: "b".into(), low: -1.0, high: 1.0, step: None },
            ],
            n_init: 3,
            total_iterations: 4,
            recommendation_steps: vec![3],
            ..SessionSpec::default()
        }
    }

    fn label(s: &Session, l: PreferenceLabel) -> Event {
        s.label_event(l, None, false, 0).unwrap()
    }

    #[test]
    fn init_phase_walks_the_design() {
        let ev = Session::create_event("x".into(), spec(), 0).unwrap();
        let mut s = Session::from_created(&ev).unwrap();
        assert_eq!(s.history.len(), 3);
        assert_eq!(s.pending, Some(1));
        assert!(s.next_input(0).is_err());
        let e = label(&s, PreferenceLabel::Plus);
        s.apply(&e);
        assert_eq!((s.phase, s.pending), (Phase::Init, Some(2)));
        let e = label(&s, PreferenceLabel::Zero);
        s.apply(&e);
        assert_eq!((s.phase, s.pending), (Phase::Interactive, None));
        assert!(s.label_event(PreferenceLabel::Plus, None, false, 0).is_err());
        assert_eq!(s.labels[1].label, PreferenceLabel::Zero);
        assert_eq!((s.labels[1].prev, s.labels[1].curr), (1, 2));
    }

    #[test]
    fn design_is_on_grid() {
        let d = design(&spec(), 0).unwrap();
        for h in &d {
            assert_eq!(h.native[0], h.native[0].round());
            assert!((-1.0..=1.0).contains(&h.native[1]));
        }
    }

    #[test]
    fn rejects_recommendation_inside_init() {
        let mut s = spec();
        s.recommendation_steps = vec![1];
        assert!(s.validate().is_err());
        s.recommendation_steps = vec![4];
        assert!(s.validate().is_err());
    }
}
