//! One auction-and-trade instance bound to a contract account.
//!
//! The session owns the participant state table, the commitments, the escrow
//! book and the trade records. Every public operation runs the guard first;
//! a rejected action appends a `Reject` line to the ledger and changes
//! nothing else.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::adjudicated::{ProviderConfig, SealedGrant};
use crate::auction::AuctionOutcome;
use crate::commitment::{CommitmentRecord, RefundPlan};
use crate::ladder::LadderState;
use crate::ledger::{Address, Coin, Ledger, LedgerError, Signer, Time};
use crate::state::{
    check_guard, ContractPhase, GuardEnv, ParticipantState, Rejection, StateTable,
    TransitionError,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Deadlines {
    pub tau1: Time,
    pub tau2: Time,
    pub tau3: Time,
    pub tau4: Time,
    pub tau5: Time,
}

impl Deadlines {
    /// Name of the first deadline that does not exceed its predecessor.
    pub fn first_non_increasing(&self) -> Option<&'static str> {
        let seq = [
            ("tau2", self.tau1, self.tau2),
            ("tau3", self.tau2, self.tau3),
            ("tau4", self.tau3, self.tau4),
            ("tau5", self.tau4, self.tau5),
        ];
        seq.iter()
            .find(|(_, prev, cur)| cur <= prev)
            .map(|(name, _, _)| *name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LadderTerms {
    pub segments: u32,
    pub usage_total: u64,
    pub tolerate: Option<Coin>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TradeMode {
    Adjudicated,
    Ladder(LadderTerms),
}

#[derive(Clone, Debug)]
pub struct SessionConfig {
    pub sid: u64,
    /// Guaranty `a` posted with each commitment.
    pub guaranty: Coin,
    pub deadlines: Deadlines,
    /// Number of users expected to commit; reaching it advances the phase early.
    pub expected_users: usize,
    pub provider: ProviderConfig,
    pub adjudicator: Address,
    pub mode: TradeMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EscrowSlot {
    Guaranty,
    Deposit,
    ProviderDeposit,
    ForfeitPool,
    /// Pool flooring dust and undistributed pool, owed to the provider.
    ProviderCarry,
}

/// Who each escrowed coin belongs to. Its total always equals the contract
/// account's balance.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EscrowBook {
    entries: BTreeMap<(Address, EscrowSlot), Coin>,
}

impl EscrowBook {
    pub fn get(&self, owner: Address, slot: EscrowSlot) -> Coin {
        self.entries
            .get(&(owner, slot))
            .copied()
            .unwrap_or(Coin::ZERO)
    }

    pub fn total(&self) -> Coin {
        self.entries.values().copied().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Address, EscrowSlot, Coin)> + '_ {
        self.entries.iter().map(|((a, s), c)| (*a, *s, *c))
    }

    fn credit(&mut self, owner: Address, slot: EscrowSlot, amount: Coin) {
        if amount.is_zero() {
            return;
        }
        *self.entries.entry((owner, slot)).or_default() += amount;
    }

    fn debit(&mut self, owner: Address, slot: EscrowSlot, amount: Coin) -> Result<(), ProtocolError> {
        let held = self.get(owner, slot);
        let left = held
            .checked_sub(amount)
            .ok_or(ProtocolError::InsufficientEscrow {
                owner,
                slot,
                held,
                needed: amount,
            })?;
        if left.is_zero() {
            self.entries.remove(&(owner, slot));
        } else {
            self.entries.insert((owner, slot), left);
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("rejected: {0}")]
    Rejected(#[from] Rejection),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("escrow of {owner} in {slot:?} holds {held}, needs {needed}")]
    InsufficientEscrow {
        owner: Address,
        slot: EscrowSlot,
        held: Coin,
        needed: Coin,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TradeStatus {
    AwaitingDelivery,
    Delivered,
    Disputed,
    /// The adjudicator found the resealed grant valid.
    Accepted,
    /// Payment returned plus compensation from the provider deposit.
    Compensated,
    Paid,
    LadderSettled,
}

/// Per-winner trade state.
#[derive(Clone, Debug)]
pub struct TradeRecord {
    pub winner: Address,
    pub price: Coin,
    pub bundle: Vec<u64>,
    /// `S_j = sum_i k_j^i * w_i`.
    pub weighted_size: u64,
    pub status: TradeStatus,
    pub(crate) sealed: Option<SealedGrant>,
    pub(crate) resealed: Option<(SealedGrant, Time)>,
    pub ladder: Option<LadderState>,
}

impl TradeRecord {
    pub fn compensation(&self, beta: Coin) -> Coin {
        Coin(beta.0.checked_mul(self.weighted_size).expect("compensation overflow"))
    }
}

#[derive(Clone, Debug)]
pub struct ContractSession {
    pub(crate) config: SessionConfig,
    pub(crate) contract: Address,
    pub(crate) phase: ContractPhase,
    pub(crate) states: StateTable,
    pub(crate) commitments: BTreeMap<Address, CommitmentRecord>,
    pub(crate) book: EscrowBook,
    pub(crate) refunds: Option<RefundPlan>,
    pub(crate) opening_started: bool,
    pub(crate) outcome: Option<AuctionOutcome>,
    pub(crate) trades: BTreeMap<Address, TradeRecord>,
}

impl ContractSession {
    /// Deploys the contract for `config.sid` and escrows the provider deposit.
    pub fn deploy(
        ledger: &mut Ledger,
        provider: &Signer,
        config: SessionConfig,
    ) -> Result<Self, ProtocolError> {
        if let Some(field) = config.deadlines.first_non_increasing() {
            return Err(ProtocolError::Config(format!(
                "deadline {field} must exceed its predecessor"
            )));
        }
        if provider.address() != config.provider.addr {
            return Err(ProtocolError::Config(
                "deploying signer is not the configured provider".into(),
            ));
        }
        if let TradeMode::Ladder(terms) = config.mode {
            if terms.segments == 0 {
                return Err(ProtocolError::Config("ladder needs at least one segment".into()));
            }
        }
        let contract = ledger.deploy_contract(&format!("session/{}", config.sid))?;
        let mut session = ContractSession {
            contract,
            phase: ContractPhase::UserSendsCommitment,
            states: StateTable::default(),
            commitments: BTreeMap::new(),
            book: EscrowBook::default(),
            refunds: None,
            opening_started: false,
            outcome: None,
            trades: BTreeMap::new(),
            config,
        };
        let deposit = session.config.provider.deposit;
        let provider_addr = session.config.provider.addr;
        session.lock(
            ledger,
            provider,
            EscrowSlot::ProviderDeposit,
            deposit,
            &format!(
                "provider deposit = beta*sum(k_i*w_i) = {}*{}",
                session.config.provider.base_price,
                session.config.provider.supply.weighted_total()
            ),
        )?;
        session
            .states
            .enroll(provider_addr, ParticipantState::ProviderInitState);
        Ok(session)
    }

    pub fn sid(&self) -> u64 {
        self.config.sid
    }

    pub fn contract(&self) -> Address {
        self.contract
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn phase(&self) -> ContractPhase {
        self.phase
    }

    pub fn state_of(&self, addr: Address) -> Option<ParticipantState> {
        self.states.get(addr)
    }

    pub fn states(&self) -> &StateTable {
        &self.states
    }

    pub fn commitment(&self, addr: Address) -> Option<&CommitmentRecord> {
        self.commitments.get(&addr)
    }

    pub fn book(&self) -> &EscrowBook {
        &self.book
    }

    pub fn refund_plan(&self) -> Option<&RefundPlan> {
        self.refunds.as_ref()
    }

    pub fn outcome(&self) -> Option<&AuctionOutcome> {
        self.outcome.as_ref()
    }

    pub fn trade(&self, winner: Address) -> Option<&TradeRecord> {
        self.trades.get(&winner)
    }

    pub fn trades(&self) -> impl Iterator<Item = &TradeRecord> {
        self.trades.values()
    }

    /// Escrow book agrees with the contract's ledger balance.
    pub fn escrow_consistent(&self, ledger: &Ledger) -> bool {
        ledger.balance(self.contract) == Some(self.book.total())
    }

    pub(crate) fn is_ladder(&self) -> bool {
        matches!(self.config.mode, TradeMode::Ladder(_))
    }

    /// Runs the guard for `signer` and logs a rejection if it fails.
    pub(crate) fn admit(
        &self,
        ledger: &mut Ledger,
        signer: &Signer,
        phases: &[ContractPhase],
        states: &[ParticipantState],
        deadline: Option<Time>,
        extra: Result<(), String>,
    ) -> Result<Address, ProtocolError> {
        let actor = signer.address();
        let env = GuardEnv {
            sid: self.config.sid,
            contract_addr: self.contract,
            actor_addr: actor,
            sender: ledger.authenticate(signer),
            contract_phase: self.phase,
            actor_state: Some(
                self.states
                    .get(actor)
                    .unwrap_or(ParticipantState::UserInitState),
            ),
            now: ledger.now(),
            deadline,
            required_phases: phases.to_vec(),
            required_states: states.to_vec(),
            extra,
        };
        match check_guard(&env) {
            Ok(()) => Ok(actor),
            Err(rejection) => {
                ledger.reject(actor, self.contract, Coin::ZERO, &rejection.to_string());
                Err(rejection.into())
            }
        }
    }

    pub(crate) fn reject_internal(&self, ledger: &mut Ledger, rejection: Rejection) -> ProtocolError {
        ledger.reject(self.contract, self.contract, Coin::ZERO, &rejection.to_string());
        rejection.into()
    }

    pub(crate) fn transition(
        &mut self,
        ledger: &mut Ledger,
        actor: Address,
        to: ParticipantState,
    ) -> Result<(), ProtocolError> {
        Ok(self.states.transition(ledger, self.contract, actor, to)?)
    }

    pub(crate) fn set_phase(&mut self, ledger: &mut Ledger, to: ContractPhase) {
        let from = self.phase;
        if from == to {
            return;
        }
        debug_assert!(
            !from.is_terminal() && (to == ContractPhase::Aborted || to.rank() > from.rank()),
            "phase {from} -> {to} runs backwards"
        );
        self.phase = to;
        ledger.record_state(
            self.contract,
            self.contract,
            &format!("phase {from} -> {to}"),
        );
    }

    pub(crate) fn lock(
        &mut self,
        ledger: &mut Ledger,
        signer: &Signer,
        slot: EscrowSlot,
        amount: Coin,
        note: &str,
    ) -> Result<(), ProtocolError> {
        ledger.escrow_in(signer, self.contract, amount, note)?;
        self.book.credit(signer.address(), slot, amount);
        Ok(())
    }

    /// Pays `amount` out of `owner`'s `slot` to `to`. Zero is a no-op.
    pub(crate) fn release(
        &mut self,
        ledger: &mut Ledger,
        owner: Address,
        slot: EscrowSlot,
        to: Address,
        amount: Coin,
        note: &str,
    ) -> Result<(), ProtocolError> {
        if amount.is_zero() {
            return Ok(());
        }
        self.book.debit(owner, slot, amount)?;
        ledger.escrow_out(self.contract, to, amount, note)?;
        Ok(())
    }

    /// Re-labels escrowed coins inside the book; no ledger movement.
    pub(crate) fn reassign(
        &mut self,
        from: (Address, EscrowSlot),
        to: (Address, EscrowSlot),
        amount: Coin,
    ) -> Result<(), ProtocolError> {
        if amount.is_zero() {
            return Ok(());
        }
        self.book.debit(from.0, from.1, amount)?;
        self.book.credit(to.0, to.1, amount);
        Ok(())
    }

    pub(crate) fn committed_users(&self) -> impl Iterator<Item = Address> + '_ {
        self.commitments.keys().copied()
    }

    fn all_committed(&self) -> bool {
        self.config.expected_users > 0 && self.commitments.len() >= self.config.expected_users
    }

    pub(crate) fn all_opened(&self) -> bool {
        self.committed_users().all(|a| {
            matches!(
                self.states.get(a),
                Some(
                    ParticipantState::UserOpenedCommitment
                        | ParticipantState::UserFailsToOpenCommitment
                )
            )
        })
    }

    pub(crate) fn after_commit(&mut self, ledger: &mut Ledger) {
        if self.all_committed() {
            self.set_phase(ledger, ContractPhase::UserOpensCommitment);
            self.opening_started = true;
        }
    }

    pub(crate) fn after_open(&mut self, ledger: &mut Ledger) -> Result<(), ProtocolError> {
        if self.all_committed() && self.all_opened() {
            self.enter_auction(ledger)?;
        }
        Ok(())
    }

    fn enter_auction(&mut self, ledger: &mut Ledger) -> Result<(), ProtocolError> {
        self.set_phase(ledger, ContractPhase::Auction);
        self.settle_refunds(ledger)?;
        Ok(())
    }

    /// Advances the contract phase when its trigger holds: everybody acted, or
    /// the phase deadline passed and someone pokes the contract.
    pub fn phase_advance(
        &mut self,
        ledger: &mut Ledger,
        signer: &Signer,
    ) -> Result<ContractPhase, ProtocolError> {
        let now = ledger.now();
        let d = self.config.deadlines;
        let trigger = match self.phase {
            ContractPhase::UserSendsCommitment => self.all_committed() || now > d.tau1,
            ContractPhase::UserOpensCommitment => {
                (self.all_committed() && self.all_opened()) || now > d.tau2
            }
            ContractPhase::Auction => now > d.tau3,
            ContractPhase::ProviderSendsGoods => now > d.tau4,
            ContractPhase::Trading | ContractPhase::Dispute => now > d.tau5,
            ContractPhase::Settled | ContractPhase::Aborted => true,
        };
        let extra = if trigger {
            Ok(())
        } else {
            Err(format!("no trigger for leaving {}", self.phase))
        };
        self.admit(ledger, signer, &[], &[], None, extra)?;
        match self.phase {
            ContractPhase::UserSendsCommitment => {
                self.set_phase(ledger, ContractPhase::UserOpensCommitment);
                self.opening_started = true;
            }
            ContractPhase::UserOpensCommitment => self.enter_auction(ledger)?,
            ContractPhase::Auction => self.abort(ledger)?,
            ContractPhase::ProviderSendsGoods => {
                if self.unserved().next().is_some() {
                    self.default_settlement(ledger, signer)?;
                } else {
                    self.set_phase(ledger, ContractPhase::Trading);
                }
            }
            ContractPhase::Trading | ContractPhase::Dispute => {
                self.finalize_trade(ledger, signer)?;
            }
            ContractPhase::Settled | ContractPhase::Aborted => {}
        }
        Ok(self.phase)
    }

    /// Terminal abort: the auction never ran before its deadline.
    pub(crate) fn abort(&mut self, ledger: &mut Ledger) -> Result<(), ProtocolError> {
        self.set_phase(ledger, ContractPhase::Aborted);
        self.settle_refunds(ledger)?;
        Ok(())
    }

    pub(crate) fn open_trade(&mut self, winner: Address, price: Coin, bundle: Vec<u64>) {
        let weighted_size =
            crate::auction::weighted_size(&bundle, &self.config.provider.supply.weights);
        self.trades.insert(
            winner,
            TradeRecord {
                winner,
                price,
                bundle,
                weighted_size,
                status: TradeStatus::AwaitingDelivery,
                sealed: None,
                resealed: None,
                ladder: None,
            },
        );
    }

    pub(crate) fn unserved(&self) -> impl Iterator<Item = Address> + '_ {
        self.trades
            .values()
            .filter(|t| t.status == TradeStatus::AwaitingDelivery)
            .map(|t| t.winner)
    }

    /// Worst-case compensation never exceeds the provider deposit.
    pub(crate) fn check_escrow_sufficiency(&self) -> Result<(), ProtocolError> {
        let beta = self.config.provider.base_price;
        let owed: Coin = self.trades.values().map(|t| t.compensation(beta)).sum();
        let held = self
            .book
            .get(self.config.provider.addr, EscrowSlot::ProviderDeposit);
        if owed > held {
            return Err(ProtocolError::InsufficientEscrow {
                owner: self.config.provider.addr,
                slot: EscrowSlot::ProviderDeposit,
                held,
                needed: owed,
            });
        }
        Ok(())
    }

    pub(crate) fn advance_if_all_delivered(&mut self, ledger: &mut Ledger) {
        if self.phase == ContractPhase::ProviderSendsGoods && self.unserved().next().is_none() {
            self.set_phase(ledger, ContractPhase::Trading);
        }
    }
}
