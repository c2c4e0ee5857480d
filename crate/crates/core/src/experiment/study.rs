use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::run::{run_once, RunResult};
use crate::cost::{CostModel, Strategy};
use crate::error::{CpboError, Result};

/// Runs every config, in parallel, returning results in input order.
pub fn run_all(configs: &[RunConfig]) -> Vec<Result<RunResult>> {
    configs.par_iter().map(run_once).collect()
}

/// One run per (regime, strategy, seed) at a fixed budget.
pub fn cost_study_configs(
    base: &RunConfig,
    regimes: &[CostModel],
    strategies: &[Strategy],
    budget: f64,
    seeds: &[u64],
) -> Result<Vec<RunConfig>> {
    if !(budget > 0.0) {
        return Err(CpboError::InvalidRunConfig(format!("budget must be positive, got {budget}")));
    }
    let mut out = Vec::new();
    for regime in regimes {
        for strategy in strategies {
            for &seed in seeds {
                out.push(RunConfig {
                    cost_model: *regime,
                    strategy: *strategy,
                    budget: Some(budget),
                    iterations: None,
                    seed,
                    ..base.clone()
                });
            }
        }
    }
    Ok(out)
}

pub fn run_cost_study(
    base: &RunConfig,
    regimes: &[CostModel],
    strategies: &[Strategy],
    budget: f64,
    seeds: &[u64],
) -> Result<Vec<RunResult>> {
    let cfgs = cost_study_configs(base, regimes, strategies, budget, seeds)?;
    run_all(&cfgs).into_iter().collect()
}

pub fn gamma_sweep_configs(base: &RunConfig, gammas: &[f64], seeds: &[u64]) -> Result<Vec<RunConfig>> {
    if gammas.is_empty() || seeds.is_empty() {
        return Err(CpboError::InvalidRunConfig("gamma sweep needs gammas and seeds".into()));
    }
    Ok(gammas
        .iter()
        .flat_map(|&g| {
            seeds.iter().map(move |&seed| RunConfig {
                gamma_true: g,
                seed,
                ..base.clone()
            })
        })
        .collect())
}

pub fn run_gamma_sweep(base: &RunConfig, gammas: &[f64], seeds: &[u64]) -> Result<Vec<RunResult>> {
    let cfgs = gamma_sweep_configs(base, gammas, seeds)?;
    run_all(&cfgs).into_iter().collect()
}

/// One row of the aggregate CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub benchmark: String,
    pub strategy: String,
    pub gamma_true: f64,
    pub seed: u64,
    pub iteration: usize,
    pub cumulative_cost: f64,
    pub simple_regret: f64,
    pub inference_regret: f64,
    pub ordinal_acc: f64,
    pub choice_acc: f64,
    pub gamma_hat: f64,
}

pub fn curve_rows(result: &RunResult) -> Vec<CurveRow> {
    let cfg = &result.config;
    result
        .curve
        .iter()
        .map(|p| CurveRow {
            benchmark: cfg.benchmark.clone(),
            strategy: cfg.strategy_label(),
            gamma_true: cfg.gamma_true,
            seed: cfg.seed,
            iteration: p.n_produced,
            cumulative_cost: p.cumulative_cost,
            simple_regret: p.simple_regret,
            inference_regret: p.inference_regret,
            ordinal_acc: p.ordinal_accuracy,
            choice_acc: p.choice_accuracy,
            gamma_hat: p.gamma_hat,
        })
        .collect()
}

pub fn run_file_name(cfg: &RunConfig) -> String {
    format!(
        "{}_{}_{}_g{}_seed{}.json",
        cfg.benchmark,
        cfg.strategy_label(),
        cost_tag(&cfg.cost_model),
        cfg.gamma_true,
        cfg.seed
    )
}

fn cost_tag(c: &CostModel) -> String {
    format!("cp{}ce{}", c.c_p, c.c_e)
}

/// Writes one JSON per run and `results.csv` into `dir`.
pub fn write_results(dir: &Path, results: &[RunResult]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    for r in results {
        fs::write(dir.join(run_file_name(&r.config)), r.to_json()?)?;
    }
    let csv_path = dir.join("results.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    for r in results {
        for row in curve_rows(r) {
            w.serialize(row)?;
        }
    }
    w.flush()?;
    Ok(csv_path)
}

pub fn read_rows<R: Read>(reader: R) -> Result<Vec<CurveRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for row in rdr.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

/// Mean and standard error of one metric within a group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self { mean: f64::NAN, se: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        let se = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
        } else {
            0.0
        };
        Self { mean, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub benchmark: String,
    pub strategy: String,
    pub gamma_true: f64,
    pub n_seeds: usize,
    pub simple_regret: MeanSe,
    pub inference_regret: MeanSe,
    pub ordinal_acc: MeanSe,
    pub choice_acc: MeanSe,
    pub gamma_hat: MeanSe,
}

/// Final-iteration statistics per (benchmark, strategy, gamma_true).
pub fn summarize(rows: &[CurveRow]) -> Vec<SummaryRow> {
    let mut last: BTreeMap<(String, String, u64, u64), &CurveRow> = BTreeMap::new();
    for r in rows {
        let key = (r.benchmark.clone(), r.strategy.clone(), r.gamma_true.to_bits(), r.seed);
        match last.get(&key) {
            Some(prev) if prev.iteration >= r.iteration => {}
            _ => {
                last.insert(key, r);
            }
        }
    }
    let mut groups: BTreeMap<(String, String, u64), Vec<&CurveRow>> = BTreeMap::new();
    for ((b, s, g, _), r) in last {
        groups.entry((b, s, g)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((benchmark, strategy, g), rs)| {
            let col = |f: fn(&CurveRow) -> f64| MeanSe::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            SummaryRow {
                benchmark,
                strategy,
                gamma_true: f64::from_bits(g),
                n_seeds: rs.len(),
                simple_regret: col(|r| r.simple_regret),
                inference_regret: col(|r| r.inference_regret),
                ordinal_acc: col(|r| r.ordinal_acc),
                choice_acc: col(|r| r.choice_acc),
                gamma_hat: col(|r| r.gamma_hat),
            }
        })
        .collect()
}

/// Plain-text table of [`summarize`] output.
pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut s = format!(
        "{:<12} {:<20} {:>7} {:>5}  {:>17}  {:>17}  {:>13}  {:>13}  {:>13}\n",
        "benchmark", "strategy", "gamma", "n", "simple_regret", "inference_regret", "ordinal", "choice", "gamma_hat"
    );
    let f = |m: &MeanSe, w: usize| format!("{:>w$}", format!("{:.3} ± {:.3}", m.mean, m.se), w = w);
    for r in rows {
        s.push_str(&format!(
            "{:<12} {:<20} {:>7} {:>5}  {}  {}  {}  {}  {}\n",
            r.benchmark,
            r.strategy,
            r.gamma_true,
            r.n_seeds,
            f(&r.simple_regret, 17),
            f(&r.inference_regret, 17),
            f(&r.ordinal_acc, 13),
            f(&r.choice_acc, 13),
            f(&r.gamma_hat, 13),
        ));
    }
    s
}
