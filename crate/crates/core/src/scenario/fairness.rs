//! Per-party outcome accounting and fairness verdicts.
//!
//! A party's value delta is its balance change plus the value of service it
//! received (users) or minus the value of service it rendered (provider),
//! both at the trade price. Honest parties may lose at most their bound:
//! nothing in adjudicated trades, one segment's worth per ladder trade.

use std::collections::BTreeMap;
use std::fmt;

use super::runner::ServiceRecord;
use super::Scenario;
use crate::ledger::{replay, Address, Coin, LedgerEvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FairnessVerdict {
    Protected,
    /// A deviating party; no loss bound applies.
    Penalized,
    Violation,
}

impl fmt::Display for FairnessVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FairnessVerdict::Protected => "protected",
            FairnessVerdict::Penalized => "penalized",
            FairnessVerdict::Violation => "violation",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartyReport {
    pub label: String,
    pub role: &'static str,
    pub address: Address,
    pub strategy: &'static str,
    pub honest: bool,
    pub balance_delta: i128,
    pub service_value: i128,
    pub value_delta: i128,
    /// Largest loss an honest party may suffer.
    pub bound: i128,
    pub verdict: FairnessVerdict,
    pub clause: &'static str,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FairnessReport {
    pub scenario: String,
    /// Replay kept the supply fixed at every step and never overdrew.
    pub conservation: bool,
    pub conservation_note: String,
    pub parties: Vec<PartyReport>,
}

impl FairnessReport {
    pub fn party(&self, address: Address) -> Option<&PartyReport> {
        self.parties.iter().find(|p| p.address == address)
    }

    pub fn violations(&self) -> usize {
        let broken = usize::from(!self.conservation);
        broken
            + self
                .parties
                .iter()
                .filter(|p| p.verdict == FairnessVerdict::Violation)
                .count()
    }

    /// Line-oriented rendering.
    pub fn render(&self) -> String {
        let mut out = format!("scenario={}\n", self.scenario);
        out.push_str(&format!(
            "conservation={} note={}\n",
            if self.conservation { "ok" } else { "violated" },
            self.conservation_note
        ));
        for p in &self.parties {
            out.push_str(&format!(
                "party={} role={} address={} strategy={} balance_delta={} service_value={} value_delta={} bound={} verdict={} clause={}\n",
                p.label,
                p.role,
                p.address,
                p.strategy,
                p.balance_delta,
                p.service_value,
                p.value_delta,
                p.bound,
                p.verdict,
                p.clause
            ));
        }
        out.push_str(&format!("violations={}\n", self.violations()));
        out
    }
}

/// Starting balances implied by the scenario.
pub fn scenario_genesis(scenario: &Scenario) -> BTreeMap<Address, Coin> {
    let mut g = BTreeMap::new();
    g.insert(
        Address::from_seed(scenario.provider.seed.as_bytes()),
        Coin(scenario.provider.balance),
    );
    g.insert(Address::from_seed(scenario.adjudicator.as_bytes()), Coin::ZERO);
    for u in &scenario.users {
        g.insert(Address::from_seed(u.seed.as_bytes()), Coin(u.balance));
    }
    g
}

/// Final balances from the trace by naive summation, used when replay fails.
fn summed(genesis: &BTreeMap<Address, Coin>, trace: &[LedgerEvent]) -> BTreeMap<Address, i128> {
    let mut out: BTreeMap<Address, i128> = genesis.iter().map(|(a, c)| (*a, i128::from(c.0))).collect();
    for e in trace.iter().filter(|e| e.kind.moves_coins()) {
        *out.entry(e.from).or_default() -= i128::from(e.amount.0);
        *out.entry(e.to).or_default() += i128::from(e.amount.0);
    }
    out
}

pub fn check_fairness(
    trace: &[LedgerEvent],
    scenario: &Scenario,
    service: &[ServiceRecord],
) -> FairnessReport {
    let mut genesis = scenario_genesis(scenario);
    // Contract accounts start empty; pick them up from the trace.
    for e in trace {
        for a in [e.from, e.to] {
            genesis.entry(a).or_insert(Coin::ZERO);
        }
    }
    let (conservation, conservation_note) = match replay(&genesis, trace) {
        Ok(_) => (true, "replay exact".to_string()),
        Err(e) => (false, e.to_string().replace(' ', "_")),
    };
    let finals = summed(&genesis, trace);
    let delta = |a: Address| finals[&a] - i128::from(genesis[&a].0);
    let adjudicated = scenario.adjudicated;

    let mut parties = Vec::new();
    let provider = Address::from_seed(scenario.provider.seed.as_bytes());
    let rendered: i128 = service.iter().map(|s| i128::from(s.value())).sum();
    let honest = scenario.provider.strategy.is_honest();
    let bound: i128 = if adjudicated {
        0
    } else {
        service
            .iter()
            .map(|s| i128::from(s.price.0.div_ceil(u64::from(s.segments))))
            .sum()
    };
    parties.push(classify(
        PartyReport {
            label: scenario.provider.seed.clone(),
            role: "provider",
            address: provider,
            strategy: scenario.provider.strategy.name(),
            honest,
            balance_delta: delta(provider),
            service_value: -rendered,
            value_delta: delta(provider) - rendered,
            bound,
            verdict: FairnessVerdict::Protected,
            clause: if adjudicated {
                "adjudicated: honest provider is paid for valid goods"
            } else {
                "ladder: honest provider loses at most one segment per trade"
            },
        },
    ));

    for u in &scenario.users {
        let addr = Address::from_seed(u.seed.as_bytes());
        let received: i128 = service
            .iter()
            .filter(|s| s.winner == addr)
            .map(|s| i128::from(s.value()))
            .sum();
        let won = service.iter().any(|s| s.winner == addr);
        let clause = match (won, adjudicated) {
            (false, _) => "commitment: opener recovers at least its guaranty",
            (true, true) => "adjudicated: honest winner gets goods or refund plus compensation",
            (true, false) => "ladder: honest winner pays only for segments served",
        };
        parties.push(classify(PartyReport {
            label: u.seed.clone(),
            role: "user",
            address: addr,
            strategy: u.strategy.name(),
            honest: u.strategy.is_honest(),
            balance_delta: delta(addr),
            service_value: received,
            value_delta: delta(addr) + received,
            bound: 0,
            verdict: FairnessVerdict::Protected,
            clause,
        }));
    }

    FairnessReport {
        scenario: scenario.label(),
        conservation,
        conservation_note,
        parties,
    }
}

fn classify(mut p: PartyReport) -> PartyReport {
    p.verdict = if !p.honest {
        FairnessVerdict::Penalized
    } else if p.value_delta >= -p.bound {
        FairnessVerdict::Protected
    } else {
        FairnessVerdict::Violation
    };
    if !p.honest {
        p.clause = "deviator: no protection claimed";
    }
    p
}

/// A deviator's value delta against the same scenario with that party
/// playing honestly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeviationGain {
    pub label: String,
    pub strategy: &'static str,
    pub deviated: i128,
    pub honest: i128,
}

impl DeviationGain {
    pub fn gain(&self) -> i128 {
        self.deviated - self.honest
    }
}

pub fn deviation_gains(scenario: &Scenario) -> Vec<DeviationGain> {
    let base = super::run(scenario);
    let mut out = Vec::new();
    if !scenario.provider.strategy.is_honest() {
        let mut cf = scenario.clone();
        cf.provider.strategy = Default::default();
        let addr = Address::from_seed(scenario.provider.seed.as_bytes());
        out.push(gain_for(&base.report, &super::run(&cf).report, addr));
    }
    for (i, u) in scenario.users.iter().enumerate() {
        if u.strategy.is_honest() {
            continue;
        }
        let mut cf = scenario.clone();
        cf.users[i].strategy = Default::default();
        let addr = Address::from_seed(u.seed.as_bytes());
        out.push(gain_for(&base.report, &super::run(&cf).report, addr));
    }
    out
}

fn gain_for(base: &FairnessReport, cf: &FairnessReport, addr: Address) -> DeviationGain {
    let dev = base.party(addr).expect("party in scenario");
    DeviationGain {
        label: dev.label.clone(),
        strategy: dev.strategy,
        deviated: dev.value_delta,
        honest: cf.party(addr).expect("party in scenario").value_delta,
    }
}
