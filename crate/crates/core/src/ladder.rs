//! Ladder payment: usage split into `e` equal segments, each acknowledged by
//! an in-order confirmation before its deadline. The provider is paid for the
//! confirmed prefix.

use thiserror::Error;

use crate::ledger::{Address, Coin, Ledger, Signer, Time};
use crate::session::{ContractSession, EscrowSlot, ProtocolError, TradeStatus};
use crate::state::{ContractPhase, ParticipantState};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LadderError {
    #[error("ladder needs at least one segment")]
    NoSegments,
    #[error("{e} segments leave more than {tolerate} at risk for price {price}; need {min}")]
    TooFewSegments {
        e: u32,
        min: u64,
        price: Coin,
        tolerate: Coin,
    },
    #[error("tolerance must be positive")]
    ZeroTolerance,
    #[error("expected confirmation {expected}, got {got}")]
    OutOfOrder { expected: u32, got: u32 },
    #[error("segment {index} deadline {deadline} passed")]
    Lapsed { index: u32, deadline: Time },
    #[error("ladder already ended")]
    Ended,
    #[error("disaffirmation after {0} confirmations")]
    AlreadyConfirmed(u32),
    #[error("ladder still running")]
    Live,
}

/// Smallest segment count keeping each segment's value within `tolerate`.
pub fn min_segments(price: Coin, tolerate: Coin) -> Result<u64, LadderError> {
    if tolerate.is_zero() {
        return Err(LadderError::ZeroTolerance);
    }
    Ok(price.0.div_ceil(tolerate.0).max(1))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LadderState {
    pub winner: Address,
    pub price: Coin,
    pub e: u32,
    pub usage_total: u64,
    pub start: Time,
    pub confirmed: u32,
    pub disaffirmed: bool,
    pub tolerate: Option<Coin>,
    pub settled: bool,
}

impl LadderState {
    pub fn init(
        winner: Address,
        price: Coin,
        e: u32,
        usage_total: u64,
        start: Time,
        tolerate: Option<Coin>,
    ) -> Result<Self, LadderError> {
        if e == 0 {
            return Err(LadderError::NoSegments);
        }
        if let Some(tol) = tolerate {
            let min = min_segments(price, tol)?;
            if u64::from(e) < min {
                return Err(LadderError::TooFewSegments {
                    e,
                    min,
                    price,
                    tolerate: tol,
                });
            }
        }
        Ok(LadderState {
            winner,
            price,
            e,
            usage_total,
            start,
            confirmed: 0,
            disaffirmed: false,
            tolerate,
            settled: false,
        })
    }

    /// `T_i = start + floor(i * usage_total / e)`.
    pub fn deadline(&self, i: u32) -> Time {
        let offset = u128::from(i) * u128::from(self.usage_total) / u128::from(self.e);
        self.start + u64::try_from(offset).expect("deadline overflow")
    }

    pub fn is_ended(&self, now: Time) -> bool {
        self.confirmed == self.e || self.disaffirmed || now > self.deadline(self.confirmed + 1)
    }

    pub fn confirm(&mut self, index: u32, now: Time) -> Result<(), LadderError> {
        if self.disaffirmed || self.confirmed == self.e {
            return Err(LadderError::Ended);
        }
        let expected = self.confirmed + 1;
        if index != expected {
            return Err(LadderError::OutOfOrder {
                expected,
                got: index,
            });
        }
        let deadline = self.deadline(index);
        if now > deadline {
            return Err(LadderError::Lapsed { index, deadline });
        }
        self.confirmed = index;
        Ok(())
    }

    /// Returns whether this call changed anything.
    pub fn disaffirm(&mut self) -> Result<bool, LadderError> {
        if self.confirmed > 0 {
            return Err(LadderError::AlreadyConfirmed(self.confirmed));
        }
        let changed = !self.disaffirmed;
        self.disaffirmed = true;
        Ok(changed)
    }

    /// `(floor(i * P / e), P - that)`.
    pub fn settlement_split(&self) -> (Coin, Coin) {
        split(self.price, self.confirmed, self.e)
    }
}

pub fn split(price: Coin, confirmed: u32, e: u32) -> (Coin, Coin) {
    let paid = u128::from(price.0) * u128::from(confirmed) / u128::from(e);
    let paid = Coin(u64::try_from(paid).expect("bounded by price"));
    (paid, price - paid)
}

impl ContractSession {
    fn ladder_of(&self, winner: Address) -> Option<&LadderState> {
        self.trades.get(&winner).and_then(|t| t.ladder.as_ref())
    }

    /// Confirms segment `index`, which must be the next unconfirmed one.
    pub fn confirm_segment(
        &mut self,
        ledger: &mut Ledger,
        signer: &Signer,
        index: u32,
    ) -> Result<(), ProtocolError> {
        let actor = signer.address();
        let now = ledger.now();
        let (extra, deadline) = match self.ladder_of(actor) {
            None => (Err("no ladder".to_string()), None),
            Some(l) if l.settled || l.disaffirmed || l.confirmed == l.e => {
                (Err(LadderError::Ended.to_string()), None)
            }
            Some(l) if index != l.confirmed + 1 => (
                Err(LadderError::OutOfOrder {
                    expected: l.confirmed + 1,
                    got: index,
                }
                .to_string()),
                None,
            ),
            Some(l) => (Ok(()), Some(l.deadline(index))),
        };
        self.admit(
            ledger,
            signer,
            &[ContractPhase::ProviderSendsGoods, ContractPhase::Trading],
            &[ParticipantState::Using(index)],
            deadline,
            extra,
        )?;
        let trade = self.trades.get_mut(&actor).expect("ladder exists");
        let ladder = trade.ladder.as_mut().expect("ladder exists");
        ladder.confirm(index, now).expect("guard checked");
        let (e, d) = (ladder.e, ladder.deadline(index));
        ledger.record_state(
            actor,
            self.contract,
            &format!("confirm i={index} e={e} deadline={d}"),
        );
        if index < e {
            self.transition(ledger, actor, ParticipantState::Using(index + 1))?;
        }
        Ok(())
    }

    pub fn disaffirm(&mut self, ledger: &mut Ledger, signer: &Signer) -> Result<(), ProtocolError> {
        let actor = signer.address();
        let extra = match self.ladder_of(actor) {
            None => Err("no ladder".to_string()),
            Some(l) if l.confirmed > 0 => {
                Err(LadderError::AlreadyConfirmed(l.confirmed).to_string())
            }
            Some(l) if l.settled => Err("ladder settled".into()),
            Some(_) => Ok(()),
        };
        self.admit(
            ledger,
            signer,
            &[ContractPhase::ProviderSendsGoods, ContractPhase::Trading],
            &[ParticipantState::Using(1)],
            None,
            extra,
        )?;
        let ladder = self
            .trades
            .get_mut(&actor)
            .and_then(|t| t.ladder.as_mut())
            .expect("checked");
        if ladder.disaffirm().expect("checked") {
            ledger.record_state(actor, self.contract, "disaffirm");
        }
        Ok(())
    }

    /// Pays out an ended ladder. Anyone may trigger it.
    pub fn settle_ladder(
        &mut self,
        ledger: &mut Ledger,
        signer: &Signer,
        winner: Address,
    ) -> Result<(Coin, Coin), ProtocolError> {
        let now = ledger.now();
        let extra = match self.ladder_of(winner) {
            None => Err(format!("{winner} has no ladder")),
            Some(l) if l.settled => Err("ladder settled".into()),
            Some(l) if !l.is_ended(now) => Err(LadderError::Live.to_string()),
            Some(_) => Ok(()),
        };
        self.admit(
            ledger,
            signer,
            &[
                ContractPhase::ProviderSendsGoods,
                ContractPhase::Trading,
                ContractPhase::Dispute,
            ],
            &[],
            None,
            extra,
        )?;
        self.settle_ladder_inner(ledger, winner)
    }

    /// Splits the winner's escrowed price. A delivered trade whose grant was
    /// never picked up settles as zero confirmations.
    pub(crate) fn settle_ladder_inner(
        &mut self,
        ledger: &mut Ledger,
        winner: Address,
    ) -> Result<(Coin, Coin), ProtocolError> {
        let trade = &self.trades[&winner];
        let e = self.ladder_terms_segments();
        let (confirmed, e) = match &trade.ladder {
            Some(l) => (l.confirmed, l.e),
            None => (0, e),
        };
        let (to_provider, to_winner) = split(trade.price, confirmed, e);
        let provider = self.config.provider.addr;
        let note = format!("ladder settle i={confirmed} e={e} provider={to_provider} winner={to_winner}");
        ledger.record_state(winner, self.contract, &note);
        self.release(
            ledger,
            winner,
            EscrowSlot::Deposit,
            provider,
            to_provider,
            "ladder payment floor(i*P_j/e)",
        )?;
        self.release(
            ledger,
            winner,
            EscrowSlot::Deposit,
            winner,
            to_winner,
            "ladder remainder P_j - payment",
        )?;
        let trade = self.trades.get_mut(&winner).expect("trade");
        if let Some(l) = trade.ladder.as_mut() {
            l.settled = true;
        }
        trade.status = TradeStatus::LadderSettled;
        Ok((to_provider, to_winner))
    }

    fn ladder_terms_segments(&self) -> u32 {
        match self.config.mode {
            crate::session::TradeMode::Ladder(t) => t.segments,
            crate::session::TradeMode::Adjudicated => 1,
        }
    }
}
