//! Deterministic execution of a scenario through every phase.
//!
//! Each party acts at fixed points of the timeline: commitments at `t = 1`,
//! openings right after `tau1`, the auction after `tau2`, delivery after
//! `tau3`, defaults and disputes after `tau4`, ladder confirmations at each
//! segment deadline and settlement after `tau5`. Rejected actions are trace
//! events, never run failures.

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::fairness::{check_fairness, FairnessReport};
use super::strategy::UserStrategy;
use super::Scenario;
use crate::adjudicated::{ProviderConfig, SealedGrant, VMGrant};
use crate::auction::ProviderSupply;
use crate::commitment::Bid;
use crate::ladder::LadderState;
use crate::ledger::{commit_hash, Address, Coin, Ledger, LedgerEvent, Signer, Time, NONCE_LEN};
use crate::session::{
    ContractSession, Deadlines, LadderTerms, SessionConfig, TradeMode, TradeStatus,
};
use crate::state::{ContractPhase, ParticipantState};

/// What was actually served outside the ledger for one winner.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServiceRecord {
    pub winner: Address,
    pub price: Coin,
    /// Segment count; 1 for adjudicated trades.
    pub segments: u32,
    /// Segments during which valid instances ran for the winner.
    pub served: u32,
}

impl ServiceRecord {
    /// `floor(served * P / segments)`.
    pub fn value(&self) -> u64 {
        let v = u128::from(self.price.0) * u128::from(self.served) / u128::from(self.segments);
        u64::try_from(v).expect("bounded by price")
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trace: Vec<LedgerEvent>,
    pub genesis: BTreeMap<Address, Coin>,
    pub session: ContractSession,
    pub service: Vec<ServiceRecord>,
    /// Supply unchanged and escrow book consistent after every action.
    pub stepwise_conservation: bool,
    pub report: FairnessReport,
}

impl RunOutput {
    pub fn trace_text(&self) -> String {
        crate::ledger::render_trace(&self.trace)
    }
}

struct User {
    signer: Signer,
    strategy: UserStrategy,
    bid: Bid,
    nonce: Vec<u8>,
    grant: Option<VMGrant>,
}

struct Sim<'a> {
    scenario: &'a Scenario,
    ledger: Ledger,
    session: ContractSession,
    provider: Signer,
    adjudicator: Signer,
    users: Vec<User>,
    supply: u128,
    conserved: bool,
}

pub fn run(scenario: &Scenario) -> RunOutput {
    let mut sim = Sim::setup(scenario);
    sim.execute();
    let service = sim.service_records();
    let trace = sim.ledger.events().to_vec();
    let genesis = sim.ledger.genesis().clone();
    let report = check_fairness(&trace, scenario, &service);
    RunOutput {
        trace,
        genesis,
        session: sim.session,
        service,
        stepwise_conservation: sim.conserved,
        report,
    }
}

pub(crate) fn session_config(scenario: &Scenario) -> SessionConfig {
    let p = &scenario.provider;
    let supply = ProviderSupply::new(p.capacities.clone(), p.weights.clone())
        .expect("validated scenario");
    let d = scenario.deadlines;
    SessionConfig {
        sid: scenario.sid,
        guaranty: Coin(scenario.guaranty),
        deadlines: Deadlines {
            tau1: Time(d.tau1),
            tau2: Time(d.tau2),
            tau3: Time(d.tau3),
            tau4: Time(d.tau4),
            tau5: Time(d.tau5),
        },
        expected_users: scenario.users.len(),
        provider: ProviderConfig::new(
            Address::from_seed(p.seed.as_bytes()),
            supply,
            Coin(p.base_price),
        ),
        adjudicator: Address::from_seed(scenario.adjudicator.as_bytes()),
        mode: match scenario.ladder {
            None => TradeMode::Adjudicated,
            Some(l) => TradeMode::Ladder(LadderTerms {
                segments: l.segments,
                usage_total: l.usage_total,
                tolerate: l.tolerate.map(Coin),
            }),
        },
    }
}

impl<'a> Sim<'a> {
    fn setup(scenario: &'a Scenario) -> Self {
        let mut ledger = Ledger::new();
        let provider = Signer::new(&scenario.provider.seed);
        let adjudicator = Signer::new(&scenario.adjudicator);
        ledger
            .create_account(&scenario.provider.seed, Coin(scenario.provider.balance))
            .expect("validated seeds");
        ledger
            .create_account(&scenario.adjudicator, Coin::ZERO)
            .expect("validated seeds");
        let mut rng = ChaCha20Rng::seed_from_u64(scenario.nonce_seed);
        let users = scenario
            .users
            .iter()
            .map(|u| {
                ledger
                    .create_account(&u.seed, Coin(u.balance))
                    .expect("validated seeds");
                let mut nonce = vec![0u8; NONCE_LEN];
                rng.fill_bytes(&mut nonce);
                User {
                    signer: Signer::new(&u.seed),
                    strategy: u.strategy.clone(),
                    bid: Bid::new(u.bundle.clone(), Coin(u.price)),
                    nonce,
                    grant: None,
                }
            })
            .collect();
        let session = ContractSession::deploy(&mut ledger, &provider, session_config(scenario))
            .expect("validated scenario deploys");
        let supply = ledger.total_supply();
        Sim {
            scenario,
            ledger,
            session,
            provider,
            adjudicator,
            users,
            supply,
            conserved: true,
        }
    }

    fn check(&mut self) {
        let ok = self.ledger.total_supply() == self.supply
            && self.session.escrow_consistent(&self.ledger);
        self.conserved &= ok;
    }

    fn at(&mut self, t: u64) {
        let t = Time(t.max(self.ledger.now().0));
        self.ledger.advance_time(t).expect("monotone timeline");
    }

    fn act<T>(
        &mut self,
        f: impl FnOnce(&mut ContractSession, &mut Ledger) -> Result<T, crate::session::ProtocolError>,
    ) -> Option<T> {
        let out = f(&mut self.session, &mut self.ledger);
        self.check();
        if let Err(e) = &out {
            log::debug!("action rejected: {e}");
        }
        out.ok()
    }

    fn poke(&mut self) {
        let p = self.provider.clone();
        self.act(|s, l| s.phase_advance(l, &p));
    }

    fn execute(&mut self) {
        let d = self.scenario.deadlines;
        let sid = self.scenario.sid;
        let a = Coin(self.scenario.guaranty);

        self.at(1);
        for i in 0..self.users.len() {
            let u = &self.users[i];
            let signer = u.signer.clone();
            let digest = commit_hash(&u.bid.to_bytes(), &u.nonce, signer.address(), sid)
                .expect("nonce length");
            self.act(|s, l| s.submit_commitment(l, &signer, digest, a));
        }

        self.at(d.tau1 + 1);
        if self.session.phase() == ContractPhase::UserSendsCommitment {
            self.poke();
        }
        for i in 0..self.users.len() {
            let u = &self.users[i];
            let signer = u.signer.clone();
            let nonce = u.nonce.clone();
            let opened = match &u.strategy {
                UserStrategy::AbortAfterCommit => continue,
                UserStrategy::OpenAltered { bundle, price } => {
                    Bid::new(bundle.clone(), Coin(*price))
                }
                _ => u.bid.clone(),
            };
            self.act(|s, l| s.open_commitment(l, &signer, &opened, &nonce, opened.price));
        }

        self.at(d.tau2 + 1);
        if self.session.phase() == ContractPhase::UserOpensCommitment {
            self.poke();
        }
        if self.session.phase() == ContractPhase::Auction {
            let p = self.provider.clone();
            self.act(|s, l| s.run_auction(l, &p));
        }

        self.at(d.tau3 + 1);
        self.deliver();

        self.at(d.tau4 + 1);
        if self.session.phase() == ContractPhase::ProviderSendsGoods {
            self.poke();
        }
        match self.scenario.ladder {
            None => self.dispute_round(false),
            Some(terms) => {
                self.disaffirm_bad_grants();
                for i in 1..=terms.segments {
                    let offset = u64::from(i) * terms.usage_total / u64::from(terms.segments);
                    self.at(d.tau4 + offset);
                    self.confirm_round(i);
                }
            }
        }

        self.at(d.tau5 + 1);
        if self.scenario.ladder.is_none() {
            self.dispute_round(true);
        }
        if !self.session.phase().is_terminal() {
            self.poke();
        }
        if !self.session.phase().is_terminal() {
            self.reclaim_all();
        }
    }

    fn deliver(&mut self) {
        if self.session.phase() != ContractPhase::ProviderSendsGoods {
            return;
        }
        let strategy = self.scenario.provider.strategy.clone();
        if strategy.delivers() {
            let segments = self.scenario.ladder.map_or(1, |l| l.segments);
            let trades: Vec<(Address, Vec<u64>)> = self
                .session
                .trades()
                .map(|t| (t.winner, t.bundle.clone()))
                .collect();
            for (winner, bundle) in trades {
                let grant = VMGrant {
                    recipient: winner,
                    bundle,
                    config_ok: strategy.first_grant_ok(),
                    active_until_segment: strategy.active_until(segments),
                };
                let p = self.provider.clone();
                self.act(|s, l| s.provider_deliver(l, &p, winner, SealedGrant::seal(winner, grant)));
            }
        }
        for i in 0..self.users.len() {
            let signer = self.users[i].signer.clone();
            let has_goods = self
                .session
                .trade(signer.address())
                .is_some_and(|t| t.status == TradeStatus::Delivered);
            if has_goods {
                self.users[i].grant = self.act(|s, l| s.pickup_grant(l, &signer));
            }
        }
    }

    /// Adjudicated trades: winners complain, the provider answers and the
    /// adjudicator rules. With `late` set, pending disputes are ruled on as
    /// unanswered.
    fn dispute_round(&mut self, late: bool) {
        if !late {
            for i in 0..self.users.len() {
                let u = &self.users[i];
                let Some(grant) = &u.grant else { continue };
                let complain = u.strategy == UserStrategy::FalseDispute
                    || !grant.valid_for(&u.bid.bundle);
                if complain {
                    let signer = u.signer.clone();
                    self.act(|s, l| s.raise_dispute(l, &signer));
                }
            }
            let disputed = self.disputed();
            let strategy = self.scenario.provider.strategy.clone();
            for winner in &disputed {
                let Some(valid) = strategy.reseal() else { continue };
                let bundle = self.session.trade(*winner).expect("trade").bundle.clone();
                let copy = VMGrant {
                    recipient: self.adjudicator.address(),
                    bundle,
                    config_ok: valid,
                    active_until_segment: 1,
                };
                let p = self.provider.clone();
                let adj = self.adjudicator.address();
                self.act(|s, l| s.provider_reseal(l, &p, *winner, SealedGrant::seal(adj, copy)));
            }
        }
        for winner in self.disputed() {
            let has_copy = self
                .session
                .trade(winner)
                .is_some_and(|t| t.resealed.is_some());
            if !has_copy && !late {
                continue;
            }
            let adj = self.adjudicator.clone();
            let verdict = self.act(|s, l| s.adjudicate(l, &adj, winner));
            if verdict == Some(crate::adjudicated::Verdict::Valid) {
                let idx = self
                    .users
                    .iter()
                    .position(|u| u.signer.address() == winner)
                    .expect("winner is a user");
                let bundle = self.session.trade(winner).expect("trade").bundle.clone();
                self.users[idx].grant = Some(VMGrant {
                    recipient: winner,
                    bundle,
                    config_ok: true,
                    active_until_segment: 1,
                });
            }
        }
    }

    fn disputed(&self) -> Vec<Address> {
        self.session
            .trades()
            .filter(|t| t.status == TradeStatus::Disputed)
            .map(|t| t.winner)
            .collect()
    }

    fn disaffirm_bad_grants(&mut self) {
        for i in 0..self.users.len() {
            let u = &self.users[i];
            let Some(grant) = &u.grant else { continue };
            if grant.valid_for(&u.bid.bundle) {
                continue;
            }
            let signer = u.signer.clone();
            let addr = signer.address();
            let p = self.provider.clone();
            self.act(|s, l| s.disaffirm(l, &signer));
            self.act(|s, l| s.settle_ladder(l, &p, addr));
        }
    }

    fn confirm_round(&mut self, index: u32) {
        for i in 0..self.users.len() {
            let u = &self.users[i];
            let Some(grant) = &u.grant else { continue };
            let signer = u.signer.clone();
            let wants = grant.valid_for(&u.bid.bundle)
                && index <= grant.active_until_segment
                && index <= u.strategy.confirm_limit()
                && self.session.state_of(signer.address()) == Some(ParticipantState::Using(index));
            if wants {
                self.act(|s, l| s.confirm_segment(l, &signer, index));
            }
        }
    }

    fn reclaim_all(&mut self) {
        let mut signers: Vec<Signer> = self.users.iter().map(|u| u.signer.clone()).collect();
        signers.push(self.provider.clone());
        for signer in signers {
            self.act(|s, l| s.reclaim_after_timeout(l, &signer));
        }
    }

    fn service_records(&self) -> Vec<ServiceRecord> {
        let segments = self.scenario.ladder.map_or(1, |l| l.segments);
        self.session
            .trades()
            .map(|t| {
                let grant = self
                    .users
                    .iter()
                    .find(|u| u.signer.address() == t.winner)
                    .and_then(|u| u.grant.as_ref());
                let valid = grant.is_some_and(|g| g.valid_for(&t.bundle));
                let served = match (valid, &t.ladder) {
                    (false, _) => 0,
                    (true, None) => u32::from(self.scenario.ladder.is_none()),
                    (true, Some(l)) => ladder_served(l, grant.expect("valid").active_until_segment),
                };
                ServiceRecord {
                    winner: t.winner,
                    price: t.price,
                    segments,
                    served,
                }
            })
            .collect()
    }
}

/// The provider keeps serving until a segment goes unconfirmed or its
/// instances stop.
fn ladder_served(l: &LadderState, active_until: u32) -> u32 {
    if l.disaffirmed {
        return 0;
    }
    let ran = if l.confirmed == l.e { l.e } else { l.confirmed + 1 };
    ran.min(active_until)
}
