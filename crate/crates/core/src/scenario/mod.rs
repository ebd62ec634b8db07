//! Scenario files: one auction plus trade, with a scripted strategy for
//! every party.

pub mod fairness;
pub mod reference;
pub mod runner;
pub mod strategy;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ladder::min_segments;
use crate::ledger::Coin;

pub use fairness::{check_fairness, FairnessReport, FairnessVerdict, PartyReport};
pub use reference::{cross_check, reference_allocate_price, ReferenceOutcome};
pub use runner::{run, RunOutput, ServiceRecord};
pub use strategy::{ProviderStrategy, UserStrategy};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    pub sid: u64,
    pub adjudicated: bool,
    pub guaranty: u64,
    pub deadlines: DeadlineSpec,
    pub nonce_seed: u64,
    pub provider: ProviderSpec,
    #[serde(default = "default_adjudicator")]
    pub adjudicator: String,
    #[serde(default)]
    pub ladder: Option<LadderSpec>,
    pub users: Vec<UserSpec>,
}

fn default_adjudicator() -> String {
    "adjudicator".into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeadlineSpec {
    pub tau1: u64,
    pub tau2: u64,
    pub tau3: u64,
    pub tau4: u64,
    pub tau5: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSpec {
    pub seed: String,
    pub balance: u64,
    pub capacities: Vec<u64>,
    pub weights: Vec<u64>,
    pub base_price: u64,
    #[serde(default)]
    pub strategy: ProviderStrategy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderSpec {
    pub segments: u32,
    pub usage_total: u64,
    #[serde(default)]
    pub tolerate: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    pub seed: String,
    pub balance: u64,
    pub bundle: Vec<u64>,
    pub price: u64,
    #[serde(default)]
    pub strategy: UserStrategy,
}

/// A scenario problem, tagged with the offending field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenarioError {
    pub field: String,
    pub message: String,
}

impl ScenarioError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ScenarioError {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl std::error::Error for ScenarioError {}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ScenarioError::new(path.display().to_string(), e.to_string()))?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario =
        serde_json::from_str(text).map_err(|e| ScenarioError::new("json", e.to_string()))?;
    scenario.validate()?;
    Ok(scenario)
}

impl Scenario {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| format!("sid-{}", self.sid))
    }

    pub fn types(&self) -> usize {
        self.provider.capacities.len()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let d = &self.deadlines;
        let seq = [
            ("tau2", d.tau1, d.tau2),
            ("tau3", d.tau2, d.tau3),
            ("tau4", d.tau3, d.tau4),
            ("tau5", d.tau4, d.tau5),
        ];
        if d.tau1 < 1 {
            return Err(ScenarioError::new("deadlines.tau1", "must be at least 1"));
        }
        for (name, prev, cur) in seq {
            if cur <= prev {
                return Err(ScenarioError::new(
                    format!("deadlines.{name}"),
                    format!("{cur} does not exceed the previous deadline {prev}"),
                ));
            }
        }

        let p = &self.provider;
        let m = p.capacities.len();
        if m == 0 {
            return Err(ScenarioError::new("provider.capacities", "no VM types"));
        }
        if p.weights.len() != m {
            return Err(ScenarioError::new(
                "provider.weights",
                format!("{} weights for {m} VM types", p.weights.len()),
            ));
        }
        if p.weights.contains(&0) {
            return Err(ScenarioError::new("provider.weights", "weights must be positive"));
        }
        if p.seed.is_empty() {
            return Err(ScenarioError::new("provider.seed", "empty seed"));
        }
        let weighted: u128 = p
            .capacities
            .iter()
            .zip(&p.weights)
            .map(|(k, w)| u128::from(*k) * u128::from(*w))
            .sum();
        let deposit = weighted * u128::from(p.base_price);
        if deposit > u128::from(p.balance) {
            return Err(ScenarioError::new(
                "provider.balance",
                format!("cannot fund deposit {deposit}"),
            ));
        }
        p.strategy
            .check_mode(self.adjudicated)
            .map_err(|e| ScenarioError::new("provider.strategy", e))?;

        match (&self.ladder, self.adjudicated) {
            (Some(_), true) => {
                return Err(ScenarioError::new("ladder", "adjudicated scenarios have no ladder"))
            }
            (None, false) => {
                return Err(ScenarioError::new("ladder", "ladder trade needs ladder terms"))
            }
            (Some(l), false) => {
                if l.segments == 0 {
                    return Err(ScenarioError::new("ladder.segments", "must be positive"));
                }
                if l.usage_total < u64::from(l.segments) {
                    return Err(ScenarioError::new(
                        "ladder.usage_total",
                        "segments must last at least one tick",
                    ));
                }
                if d.tau4.checked_add(l.usage_total).is_none_or(|end| end > d.tau5) {
                    return Err(ScenarioError::new(
                        "ladder.usage_total",
                        "usage must end by tau5",
                    ));
                }
                if let Some(tol) = l.tolerate {
                    let max_price = self.users.iter().map(|u| u.price).max().unwrap_or(0);
                    let min = min_segments(Coin(max_price), Coin(tol))
                        .map_err(|e| ScenarioError::new("ladder.tolerate", e.to_string()))?;
                    if u64::from(l.segments) < min {
                        return Err(ScenarioError::new(
                            "ladder.segments",
                            format!("tolerance {tol} needs at least {min} segments"),
                        ));
                    }
                }
            }
            (None, true) => {}
        }

        let mut seeds = BTreeSet::new();
        seeds.insert(p.seed.as_str());
        if !seeds.insert(self.adjudicator.as_str()) || self.adjudicator.is_empty() {
            return Err(ScenarioError::new("adjudicator", "seed empty or reused"));
        }
        for (i, u) in self.users.iter().enumerate() {
            let field = |f: &str| format!("users[{i}].{f}");
            if u.seed.is_empty() || !seeds.insert(u.seed.as_str()) {
                return Err(ScenarioError::new(field("seed"), "seed empty or reused"));
            }
            if u.bundle.len() != m {
                return Err(ScenarioError::new(
                    field("bundle"),
                    format!("{} entries for {m} VM types", u.bundle.len()),
                ));
            }
            if u.bundle.iter().all(|&k| k == 0) {
                return Err(ScenarioError::new(field("bundle"), "requests nothing"));
            }
            if u.price == 0 {
                return Err(ScenarioError::new(field("price"), "must be positive"));
            }
            u.strategy
                .check_mode(self.adjudicated, m)
                .map_err(|e| ScenarioError::new(field("strategy"), e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "sid": 1, "adjudicated": true, "guaranty": 5,
        "deadlines": {"tau1": 10, "tau2": 20, "tau3": 30, "tau4": 40, "tau5": 60},
        "nonce_seed": 1,
        "provider": {"seed": "p", "balance": 100, "capacities": [2], "weights": [1], "base_price": 1},
        "users": [{"seed": "u1", "balance": 50, "bundle": [1], "price": 10}]
    }"#;

    fn edit(f: impl FnOnce(&mut serde_json::Value)) -> Result<Scenario, ScenarioError> {
        let mut v: serde_json::Value = serde_json::from_str(BASE).unwrap();
        f(&mut v);
        parse_scenario(&v.to_string())
    }

    #[test]
    fn well_formed_file_parses() {
        let s = parse_scenario(BASE).unwrap();
        assert_eq!(s.users[0].strategy, UserStrategy::Honest);
        assert_eq!(s.adjudicator, "adjudicator");
    }

    #[test]
    fn non_increasing_deadline_is_named() {
        let err = edit(|v| v["deadlines"]["tau2"] = 10.into()).unwrap_err();
        assert_eq!(err.field, "deadlines.tau2");
    }

    #[test]
    fn bundle_length_mismatch_is_named() {
        let err = edit(|v| v["users"][0]["bundle"] = serde_json::json!([1, 1])).unwrap_err();
        assert_eq!(err.field, "users[0].bundle");
    }

    #[test]
    fn unknown_strategy_and_fields_fail() {
        assert!(edit(|v| v["users"][0]["strategy"] = "Bribe".into()).is_err());
        assert!(edit(|v| v["colour"] = "red".into()).is_err());
    }

    #[test]
    fn strategy_must_fit_mode() {
        let err = edit(|v| v["users"][0]["strategy"] = "NeverConfirm".into()).unwrap_err();
        assert_eq!(err.field, "users[0].strategy");
    }
}
