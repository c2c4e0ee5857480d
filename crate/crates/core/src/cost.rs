//! Cost regimes, strategies and budget accounting.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{CpboError, Result};
use crate::space::Config;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub c_p: f64,
    pub c_e: f64,
    /// Retrieval cost; logged only.
    #[serde(default)]
    pub c_r: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self::new(1.0, 1.0)
    }
}

impl CostModel {
    pub fn new(c_p: f64, c_e: f64) -> Self {
        Self { c_p, c_e, c_r: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("c_p", self.c_p), ("c_e", self.c_e), ("c_r", self.c_r)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CpboError::InvalidParameter(format!(
                    "{name} must be nonnegative and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// How each iteration forms its comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Strategy {
    /// Two fresh configs compared with each other.
    Standard,
    /// One fresh config compared with the latest one.
    Consecutive,
    /// One fresh config compared with the last `l` ones.
    Multiple { l: usize },
}

impl Strategy {
    pub fn validate(&self) -> Result<()> {
        match self {
            Strategy::Multiple { l } if *l < 1 => Err(CpboError::InvalidParameter(
                "Multiple needs at least one reference".into(),
            )),
            _ => Ok(()),
        }
    }

    /// `(w_p, w_e)`: productions and evaluations per iteration.
    pub fn weights(&self) -> (f64, f64) {
        match *self {
            Strategy::Standard => (2.0, 1.0),
            Strategy::Consecutive => (1.0, 1.0),
            Strategy::Multiple { l } => (1.0, l as f64),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Strategy::Standard => "standard".into(),
            Strategy::Consecutive => "consecutive".into(),
            Strategy::Multiple { l } => format!("multiple{l}"),
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = CpboError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "standard" => Ok(Strategy::Standard),
            "consecutive" => Ok(Strategy::Consecutive),
            _ => {
                let digits = lower
                    .strip_prefix("multiple")
                    .map(|r| r.trim_start_matches([':', '(', '=']).trim_end_matches(')'));
                match digits.and_then(|d| d.parse::<usize>().ok()) {
                    Some(l) if l >= 1 => Ok(Strategy::Multiple { l }),
                    _ => Err(CpboError::InvalidParameter(format!("unknown strategy {s:?}"))),
                }
            }
        }
    }
}

pub fn iteration_cost(strategy: &Strategy, cost: &CostModel) -> f64 {
    let (wp, we) = strategy.weights();
    cost.c_p * wp + cost.c_e * we
}

/// Reference indices into the produced history for the next step, and how
/// many fresh configs it produces. For `Standard`, the single comparison is
/// between the two fresh configs and no references are returned.
pub fn comparisons_for_step(strategy: &Strategy, history_len: usize) -> Result<(usize, Vec<usize>)> {
    if history_len == 0 {
        return Err(CpboError::InvalidParameter(
            "no history to compare against; use the initial design".into(),
        ));
    }
    Ok(match *strategy {
        Strategy::Standard => (2, Vec::new()),
        Strategy::Consecutive => (1, vec![history_len - 1]),
        Strategy::Multiple { l } => (1, (history_len.saturating_sub(l)..history_len).rev().collect()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub strategy: Strategy,
    pub charge: f64,
    pub cumulative: f64,
}

/// Budget tracker; productions are charged once per distinct config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub budget: f64,
    pub spent: f64,
    pub entries: Vec<LedgerEntry>,
    #[serde(skip)]
    produced: HashSet<Vec<u64>>,
}

/// Outcome of a charge attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Charge {
    Accepted(f64),
    Exhausted,
}

impl CostLedger {
    pub fn new(budget: f64) -> Result<Self> {
        if !(budget > 0.0 && budget.is_finite()) {
            return Err(CpboError::InvalidParameter(format!(
                "budget must be positive and finite, got {budget}"
            )));
        }
        Ok(Self {
            budget,
            spent: 0.0,
            entries: Vec::new(),
            produced: HashSet::new(),
        })
    }

    pub fn remaining(&self) -> f64 {
        self.budget - self.spent
    }

    /// Whether a full iteration of `strategy` still fits.
    pub fn can_afford(&self, strategy: &Strategy, cost: &CostModel) -> bool {
        self.spent + iteration_cost(strategy, cost) <= self.budget + 1e-12
    }

    /// Charges the nominal iteration cost.
    pub fn charge(&mut self, strategy: &Strategy, cost: &CostModel) -> Charge {
        let c = iteration_cost(strategy, cost);
        self.charge_amount(*strategy, c)
    }

    /// Charges an iteration that produced `configs` and made `evaluations`
    /// comparisons; configs seen before cost nothing to produce.
    pub fn charge_step(
        &mut self,
        strategy: &Strategy,
        cost: &CostModel,
        configs: &[Config],
        evaluations: usize,
    ) -> Charge {
        let mut fresh = HashSet::new();
        for c in configs {
            let k = c.identity_key();
            if !self.produced.contains(&k) {
                fresh.insert(k);
            }
        }
        let c = cost.c_p * fresh.len() as f64 + cost.c_e * evaluations as f64;
        let out = self.charge_amount(*strategy, c);
        if matches!(out, Charge::Accepted(_)) {
            self.produced.extend(fresh);
        }
        out
    }

    /// Registers configs produced outside the budget (the initial design).
    pub fn mark_produced(&mut self, configs: &[Config]) {
        self.produced.extend(configs.iter().map(Config::identity_key));
    }

    fn charge_amount(&mut self, strategy: Strategy, c: f64) -> Charge {
        if self.spent + c > self.budget + 1e-12 {
            return Charge::Exhausted;
        }
        self.spent += c;
        self.entries.push(LedgerEntry {
            strategy,
            charge: c,
            cumulative: self.spent,
        });
        Charge::Accepted(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_and_costs() {
        assert_eq!(iteration_cost(&Strategy::Standard, &CostModel::new(0.0, 1.0)), 1.0);
        assert_eq!(iteration_cost(&Strategy::Consecutive, &CostModel::new(1.0, 1.0)), 2.0);
        assert_eq!(iteration_cost(&Strategy::Multiple { l: 5 }, &CostModel::new(1.0, 0.0)), 1.0);
        assert_eq!(
            Strategy::Multiple { l: 1 }.weights(),
            Strategy::Consecutive.weights()
        );
    }

    #[test]
    fn budget_counts() {
        let cm = CostModel::new(1.0, 1.0);
        for (s, n) in [(Strategy::Consecutive, 15), (Strategy::Standard, 10)] {
            let mut l = CostLedger::new(30.0).unwrap();
            let mut k = 0;
            while let Charge::Accepted(_) = l.charge(&s, &cm) {
                k += 1;
            }
            assert_eq!(k, n);
            assert_eq!(l.spent, l.entries.iter().map(|e| e.charge).sum::<f64>());
        }
        let mut l = CostLedger::new(0.5).unwrap();
        assert_eq!(l.charge(&Strategy::Consecutive, &cm), Charge::Exhausted);
        assert!(l.entries.is_empty());
    }

    #[test]
    fn schedule() {
        assert_eq!(comparisons_for_step(&Strategy::Consecutive, 7).unwrap(), (1, vec![6]));
        assert_eq!(
            comparisons_for_step(&Strategy::Multiple { l: 5 }, 3).unwrap(),
            (1, vec![2, 1, 0])
        );
        assert_eq!(comparisons_for_step(&Strategy::Standard, 4).unwrap(), (2, vec![]));
        assert!(comparisons_for_step(&Strategy::Consecutive, 0).is_err());
    }

    #[test]
    fn production_charged_once() {
        let cm = CostModel::new(1.0, 1.0);
        let mut l = CostLedger::new(100.0).unwrap();
        let a = Config(vec![0.5]);
        l.mark_produced(std::slice::from_ref(&a));
        assert_eq!(
            l.charge_step(&Strategy::Standard, &cm, &[a.clone(), Config(vec![0.1])], 1),
            Charge::Accepted(2.0)
        );
    }

    #[test]
    fn parse_strategy() {
        assert_eq!("multiple5".parse::<Strategy>().unwrap(), Strategy::Multiple { l: 5 });
        assert_eq!("Multiple(3)".parse::<Strategy>().unwrap(), Strategy::Multiple { l: 3 });
        assert!("bogus".parse::<Strategy>().is_err());
    }
}
