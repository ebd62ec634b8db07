//! Participant and contract states, and the guard that admits or rejects
//! every protocol action.
//!
//! An action is admitted iff the sender is authenticated as the acting
//! address, the contract is in a required phase, the actor is in a required
//! state, the action-specific predicate holds, and the deadline (if any) has
//! not passed. Rejections carry the first violated condition in that order.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::ledger::{Address, Ledger, Time};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParticipantState {
    UserInitState,
    UserSentCommitment,
    UserOpenedCommitment,
    UserFailsToOpenCommitment,
    UserWinsAtTheAuction,
    UserFailsInTheAuction,
    UserReceivedGoods,
    WrongGoods,
    /// Using the `i`-th time segment (1-based).
    Using(u32),
    ProviderInitState,
    ProviderSentGoods,
}

impl fmt::Display for ParticipantState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParticipantState::Using(i) => write!(f, "Using_{i}"),
            other => fmt::Debug::fmt(other, f),
        }
    }
}

/// Whether `from -> to` is an edge of the protocol state graph.
pub fn is_edge(from: ParticipantState, to: ParticipantState) -> bool {
    use ParticipantState::*;
    matches!(
        (from, to),
        (UserInitState, UserSentCommitment)
            | (UserSentCommitment, UserOpenedCommitment)
            | (UserSentCommitment, UserFailsToOpenCommitment)
            | (UserOpenedCommitment, UserWinsAtTheAuction)
            | (UserOpenedCommitment, UserFailsInTheAuction)
            | (UserWinsAtTheAuction, UserReceivedGoods)
            | (UserWinsAtTheAuction, Using(1))
            | (UserReceivedGoods, WrongGoods)
            | (WrongGoods, Using(1))
            | (ProviderInitState, ProviderSentGoods)
    ) || matches!((from, to), (Using(i), Using(j)) if i >= 1 && j == i + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ContractPhase {
    UserSendsCommitment,
    UserOpensCommitment,
    Auction,
    ProviderSendsGoods,
    Trading,
    Dispute,
    Settled,
    Aborted,
}

impl ContractPhase {
    /// Position on the protocol timeline. `Aborted` sits past everything.
    pub fn rank(self) -> u8 {
        match self {
            ContractPhase::UserSendsCommitment => 0,
            ContractPhase::UserOpensCommitment => 1,
            ContractPhase::Auction => 2,
            ContractPhase::ProviderSendsGoods => 3,
            ContractPhase::Trading => 4,
            ContractPhase::Dispute => 5,
            ContractPhase::Settled => 6,
            ContractPhase::Aborted => 7,
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, ContractPhase::Settled | ContractPhase::Aborted)
    }
}

impl fmt::Display for ContractPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Everything the guard looks at for one attempted action.
#[derive(Clone, Debug)]
pub struct GuardEnv {
    pub sid: u64,
    pub contract_addr: Address,
    pub actor_addr: Address,
    /// Authenticated sender, `None` if the signer failed to prove ownership.
    pub sender: Option<Address>,
    pub contract_phase: ContractPhase,
    pub actor_state: Option<ParticipantState>,
    pub now: Time,
    pub deadline: Option<Time>,
    /// Admissible contract phases. Empty admits any phase.
    pub required_phases: Vec<ContractPhase>,
    /// Admissible actor states. Empty admits any state.
    pub required_states: Vec<ParticipantState>,
    /// Outcome of the action-specific predicate.
    pub extra: Result<(), String>,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum Rejection {
    #[error("sender is not {claimed}")]
    NotSender { claimed: Address },
    #[error("contract phase {actual} not in {expected:?}")]
    PhaseMismatch {
        expected: Vec<ContractPhase>,
        actual: ContractPhase,
    },
    #[error("actor state {actual:?} not in {expected:?}")]
    StateMismatch {
        expected: Vec<ParticipantState>,
        actual: Option<ParticipantState>,
    },
    #[error("extra condition failed: {0}")]
    ExtraCondition(String),
    #[error("deadline {deadline} passed (now {now})")]
    DeadlinePassed { deadline: Time, now: Time },
}

pub fn check_guard(env: &GuardEnv) -> Result<(), Rejection> {
    if env.sender != Some(env.actor_addr) {
        return Err(Rejection::NotSender {
            claimed: env.actor_addr,
        });
    }
    if !env.required_phases.is_empty() && !env.required_phases.contains(&env.contract_phase) {
        return Err(Rejection::PhaseMismatch {
            expected: env.required_phases.clone(),
            actual: env.contract_phase,
        });
    }
    if !env.required_states.is_empty()
        && !env
            .actor_state
            .is_some_and(|s| env.required_states.contains(&s))
    {
        return Err(Rejection::StateMismatch {
            expected: env.required_states.clone(),
            actual: env.actor_state,
        });
    }
    if let Err(reason) = &env.extra {
        return Err(Rejection::ExtraCondition(reason.clone()));
    }
    if let Some(deadline) = env.deadline {
        if env.now > deadline {
            return Err(Rejection::DeadlinePassed {
                deadline,
                now: env.now,
            });
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum TransitionError {
    #[error("unknown actor {0}")]
    UnknownActor(Address),
    #[error("illegal transition {from} -> {to}")]
    Illegal {
        from: ParticipantState,
        to: ParticipantState,
    },
}

/// Per-address participant states for one session.
#[derive(Clone, Debug, Default)]
pub struct StateTable {
    states: BTreeMap<Address, ParticipantState>,
}

impl StateTable {
    pub fn get(&self, addr: Address) -> Option<ParticipantState> {
        self.states.get(&addr).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Address, ParticipantState)> + '_ {
        self.states.iter().map(|(a, s)| (*a, *s))
    }

    pub(crate) fn enroll(&mut self, addr: Address, initial: ParticipantState) {
        self.states.entry(addr).or_insert(initial);
    }

    /// Moves `actor` along a graph edge and logs the change.
    pub fn transition(
        &mut self,
        ledger: &mut Ledger,
        contract: Address,
        actor: Address,
        to: ParticipantState,
    ) -> Result<(), TransitionError> {
        let from = self
            .states
            .get(&actor)
            .copied()
            .ok_or(TransitionError::UnknownActor(actor))?;
        if !is_edge(from, to) {
            return Err(TransitionError::Illegal { from, to });
        }
        self.states.insert(actor, to);
        ledger.record_state(actor, contract, &format!("state {from} -> {to}"));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ParticipantState::*;

    fn env(phase: ContractPhase, state: ParticipantState, now: u64) -> GuardEnv {
        let actor = Address::from_seed(b"u1");
        GuardEnv {
            sid: 1,
            contract_addr: Address::from_seed(b"sc"),
            actor_addr: actor,
            sender: Some(actor),
            contract_phase: phase,
            actor_state: Some(state),
            now: Time(now),
            deadline: Some(Time(10)),
            required_phases: vec![ContractPhase::UserSendsCommitment],
            required_states: vec![UserInitState],
            extra: Ok(()),
        }
    }

    #[test]
    fn commit_before_deadline_is_admitted() {
        assert_eq!(
            check_guard(&env(ContractPhase::UserSendsCommitment, UserInitState, 3)),
            Ok(())
        );
    }

    #[test]
    fn second_open_is_a_state_mismatch() {
        let mut e = env(ContractPhase::UserOpensCommitment, UserOpenedCommitment, 3);
        e.required_phases = vec![ContractPhase::UserOpensCommitment];
        e.required_states = vec![UserSentCommitment];
        assert!(matches!(
            check_guard(&e),
            Err(Rejection::StateMismatch { .. })
        ));
    }

    #[test]
    fn late_action_hits_deadline() {
        assert_eq!(
            check_guard(&env(ContractPhase::UserSendsCommitment, UserInitState, 11)),
            Err(Rejection::DeadlinePassed {
                deadline: Time(10),
                now: Time(11)
            })
        );
    }

    #[test]
    fn first_violated_condition_wins() {
        let mut e = env(ContractPhase::Auction, UserOpenedCommitment, 99);
        e.sender = None;
        assert!(matches!(check_guard(&e), Err(Rejection::NotSender { .. })));
        e.sender = Some(e.actor_addr);
        assert!(matches!(
            check_guard(&e),
            Err(Rejection::PhaseMismatch { .. })
        ));
        e.contract_phase = ContractPhase::UserSendsCommitment;
        assert!(matches!(
            check_guard(&e),
            Err(Rejection::StateMismatch { .. })
        ));
        e.actor_state = Some(UserInitState);
        e.extra = Err("guaranty".into());
        assert!(matches!(
            check_guard(&e),
            Err(Rejection::ExtraCondition(_))
        ));
    }

    #[test]
    fn graph_edges() {
        assert!(is_edge(UserInitState, UserSentCommitment));
        assert!(is_edge(UserSentCommitment, UserFailsToOpenCommitment));
        assert!(is_edge(Using(2), Using(3)));
        assert!(!is_edge(Using(2), Using(4)));
        assert!(!is_edge(UserInitState, UserOpenedCommitment));
        assert!(!is_edge(UserOpenedCommitment, UserSentCommitment));
    }

    #[test]
    fn transitions_follow_edges_and_log() {
        let mut ledger = Ledger::new();
        let sc = ledger.deploy_contract("sc").unwrap();
        let a = Address::from_seed(b"u1");
        let mut table = StateTable::default();
        assert_eq!(
            table.transition(&mut ledger, sc, a, UserSentCommitment),
            Err(TransitionError::UnknownActor(a))
        );
        table.enroll(a, UserInitState);
        table
            .transition(&mut ledger, sc, a, UserSentCommitment)
            .unwrap();
        table
            .transition(&mut ledger, sc, a, UserFailsToOpenCommitment)
            .unwrap();
        assert!(table
            .transition(&mut ledger, sc, a, UserWinsAtTheAuction)
            .is_err());
        assert_eq!(ledger.events().len(), 2);
        assert_eq!(
            ledger.events()[0].note,
            "state UserInitState -> UserSentCommitment"
        );
    }
}
