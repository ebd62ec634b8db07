//! Delivery of sealed VM grants, default compensation, adjudicated disputes
//! and final settlement.

use crate::auction::ProviderSupply;
use crate::ladder::LadderState;
use crate::ledger::{Address, Coin, Ledger, Signer};
use crate::session::{ContractSession, EscrowSlot, ProtocolError, TradeMode, TradeStatus};
use crate::state::{ContractPhase, ParticipantState};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProviderConfig {
    pub addr: Address,
    pub supply: ProviderSupply,
    /// Deposit per weight unit `beta`.
    pub base_price: Coin,
    pub deposit: Coin,
}

impl ProviderConfig {
    pub fn new(addr: Address, supply: ProviderSupply, base_price: Coin) -> Self {
        let deposit = Coin(
            base_price
                .0
                .checked_mul(supply.weighted_total())
                .expect("provider deposit overflow"),
        );
        ProviderConfig {
            addr,
            supply,
            base_price,
            deposit,
        }
    }
}

/// Access information for a set of VM instances.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VMGrant {
    pub recipient: Address,
    pub bundle: Vec<u64>,
    /// Whether the instances meet the advertised configuration.
    pub config_ok: bool,
    /// Last ladder segment during which the instances stay up.
    pub active_until_segment: u32,
}

impl VMGrant {
    pub fn valid_for(&self, bundle: &[u64]) -> bool {
        self.config_ok && self.bundle == bundle
    }
}

/// A grant only its recipient can open.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SealedGrant {
    recipient: Address,
    payload: VMGrant,
}

impl SealedGrant {
    pub fn seal(recipient: Address, grant: VMGrant) -> Self {
        SealedGrant {
            recipient,
            payload: grant,
        }
    }

    pub fn recipient(&self) -> Address {
        self.recipient
    }

    pub fn open(&self, ledger: &Ledger, signer: &Signer) -> Option<&VMGrant> {
        (ledger.authenticate(signer) == Some(self.recipient)).then_some(&self.payload)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    /// Grant was fine; it is forwarded and payment proceeds.
    Valid,
    /// Grant was wrong or never resealed; the winner is compensated.
    Invalid,
}

impl ContractSession {
    pub fn provider_deliver(
        &mut self,
        ledger: &mut Ledger,
        signer: &Signer,
        winner: Address,
        sealed: SealedGrant,
    ) -> Result<(), ProtocolError> {
        let extra = match self.trades.get(&winner) {
            None => Err(format!("{winner} did not win")),
            Some(t) if t.status != TradeStatus::AwaitingDelivery => {
                Err(format!("{winner} already served"))
            }
            Some(_) if self.states.get(winner) != Some(ParticipantState::UserWinsAtTheAuction) => {
                Err(format!("{winner} not awaiting goods"))
            }
            Some(_) if sealed.recipient() != winner => Err("grant sealed for someone else".into()),
            Some(_) if signer.address() != self.config.provider.addr => {
                Err("only the provider delivers".into())
            }
            Some(_) => Ok(()),
        };
        self.admit(
            ledger,
            signer,
            &[ContractPhase::ProviderSendsGoods],
            &[
                ParticipantState::ProviderInitState,
                ParticipantState::ProviderSentGoods,
            ],
            Some(self.config.deadlines.tau4),
            extra,
        )?;
        let trade = self.trades.get_mut(&winner).expect("checked");
        trade.sealed = Some(sealed);
        trade.status = TradeStatus::Delivered;
        ledger.record_state(
            self.config.provider.addr,
            self.contract,
            &format!("deliver sealed grant to {winner}"),
        );
        if self.unserved().next().is_none() {
            self.mark_provider_sent(ledger)?;
        }
        self.advance_if_all_delivered(ledger);
        Ok(())
    }

    fn mark_provider_sent(&mut self, ledger: &mut Ledger) -> Result<(), ProtocolError> {
        let p = self.config.provider.addr;
        if self.states.get(p) == Some(ParticipantState::ProviderInitState) {
            self.transition(ledger, p, ParticipantState::ProviderSentGoods)?;
        }
        Ok(())
    }

    /// Winner opens the delivered grant. Adjudicated trades move to
    /// `UserReceivedGoods`; ladder trades start the first segment.
    pub fn pickup_grant(
        &mut self,
        ledger: &mut Ledger,
        signer: &Signer,
    ) -> Result<VMGrant, ProtocolError> {
        let actor = signer.address();
        let extra = match self.trades.get(&actor) {
            Some(t) if t.sealed.is_some() => Ok(()),
            _ => Err("no grant delivered".to_string()),
        };
        self.admit(
            ledger,
            signer,
            &[ContractPhase::ProviderSendsGoods, ContractPhase::Trading],
            &[ParticipantState::UserWinsAtTheAuction],
            None,
            extra,
        )?;
        let trade = &self.trades[&actor];
        let grant = trade
            .sealed
            .as_ref()
            .and_then(|s| s.open(ledger, signer))
            .cloned()
            .expect("sealed for the winner");
        match self.config.mode {
            TradeMode::Adjudicated => {
                self.transition(ledger, actor, ParticipantState::UserReceivedGoods)?;
            }
            TradeMode::Ladder(terms) => {
                let ladder = LadderState::init(
                    actor,
                    trade.price,
                    terms.segments,
                    terms.usage_total,
                    self.config.deadlines.tau4,
                    terms.tolerate,
                )
                .map_err(|e| ProtocolError::Config(e.to_string()))?;
                self.trades.get_mut(&actor).expect("trade").ladder = Some(ladder);
                self.transition(ledger, actor, ParticipantState::Using(1))?;
            }
        }
        Ok(grant)
    }

    /// Refunds and compensates every winner the provider failed to serve by
    /// `tau4`, then opens trading.
    pub fn default_settlement(
        &mut self,
        ledger: &mut Ledger,
        signer: &Signer,
    ) -> Result<(), ProtocolError> {
        let extra = if ledger.now() <= self.config.deadlines.tau4 {
            Err(format!("delivery open until {}", self.config.deadlines.tau4))
        } else if self.unserved().next().is_none() {
            Err("every winner was served".into())
        } else {
            Ok(())
        };
        self.admit(
            ledger,
            signer,
            &[ContractPhase::ProviderSendsGoods],
            &[],
            None,
            extra,
        )?;
        let unserved: Vec<Address> = self.unserved().collect();
        for w in unserved {
            self.compensate(ledger, w)?;
        }
        if self
            .trades
            .values()
            .any(|t| t.sealed.is_some())
        {
            self.mark_provider_sent(ledger)?;
        }
        self.set_phase(ledger, ContractPhase::Trading);
        Ok(())
    }

    /// Payment back plus `beta * S_j` out of the provider deposit.
    fn compensate(&mut self, ledger: &mut Ledger, winner: Address) -> Result<(), ProtocolError> {
        let trade = &self.trades[&winner];
        let beta = self.config.provider.base_price;
        let price = trade.price;
        let size = trade.weighted_size;
        let comp = trade.compensation(beta);
        self.release(
            ledger,
            winner,
            EscrowSlot::Deposit,
            winner,
            price,
            &format!("payment back P_j = {price}"),
        )?;
        self.release(
            ledger,
            self.config.provider.addr,
            EscrowSlot::ProviderDeposit,
            winner,
            comp,
            &format!("compensation = beta*S_j = {beta}*{size}"),
        )?;
        self.trades.get_mut(&winner).expect("trade").status = TradeStatus::Compensated;
        Ok(())
    }

    pub fn raise_dispute(&mut self, ledger: &mut Ledger, signer: &Signer) -> Result<(), ProtocolError> {
        let extra = if self.is_ladder() {
            Err("ladder trades have no adjudicator".to_string())
        } else {
            Ok(())
        };
        let actor = self.admit(
            ledger,
            signer,
            &[ContractPhase::Trading, ContractPhase::Dispute],
            &[ParticipantState::UserReceivedGoods],
            Some(self.config.deadlines.tau5),
            extra,
        )?;
        self.transition(ledger, actor, ParticipantState::WrongGoods)?;
        self.trades.get_mut(&actor).expect("winner").status = TradeStatus::Disputed;
        self.set_phase(ledger, ContractPhase::Dispute);
        Ok(())
    }

    /// Provider hands the adjudicator a copy of the grant for `winner`.
    pub fn provider_reseal(
        &mut self,
        ledger: &mut Ledger,
        signer: &Signer,
        winner: Address,
        sealed: SealedGrant,
    ) -> Result<(), ProtocolError> {
        let extra = match self.trades.get(&winner) {
            Some(t) if t.status != TradeStatus::Disputed => Err(format!("{winner} not in dispute")),
            None => Err(format!("{winner} did not win")),
            Some(t) if t.resealed.is_some() => Err("already resealed".into()),
            Some(_) if sealed.recipient() != self.config.adjudicator => {
                Err("copy not sealed for the adjudicator".into())
            }
            Some(_) => Ok(()),
        };
        self.admit(
            ledger,
            signer,
            &[ContractPhase::Dispute],
            &[ParticipantState::ProviderSentGoods],
            Some(self.config.deadlines.tau5),
            extra,
        )?;
        let now = ledger.now();
        self.trades.get_mut(&winner).expect("checked").resealed = Some((sealed, now));
        ledger.record_state(
            self.config.provider.addr,
            self.contract,
            &format!("reseal grant of {winner} for adjudicator"),
        );
        Ok(())
    }

    /// Adjudicator inspects the resealed grant. Without a copy the verdict
    /// waits until `tau5`, after which silence counts as an invalid grant.
    pub fn adjudicate(
        &mut self,
        ledger: &mut Ledger,
        signer: &Signer,
        winner: Address,
    ) -> Result<Verdict, ProtocolError> {
        let now = ledger.now();
        let extra = if signer.address() != self.config.adjudicator {
            Err("only the adjudicator rules".to_string())
        } else {
            match self.trades.get(&winner) {
                Some(t) if t.status == TradeStatus::Disputed => {
                    if t.resealed.is_none() && now <= self.config.deadlines.tau5 {
                        Err("provider may still reseal".into())
                    } else {
                        Ok(())
                    }
                }
                _ => Err(format!("{winner} not in dispute")),
            }
        };
        self.admit(ledger, signer, &[ContractPhase::Dispute], &[], None, extra)?;
        let trade = &self.trades[&winner];
        let grant = trade
            .resealed
            .as_ref()
            .and_then(|(s, _)| s.open(ledger, signer))
            .cloned();
        let valid = grant.as_ref().is_some_and(|g| g.valid_for(&trade.bundle));
        if let (true, Some(grant)) = (valid, grant) {
            ledger.record_state(
                self.config.adjudicator,
                self.contract,
                &format!("verdict valid for {winner}; grant forwarded"),
            );
            let forwarded = SealedGrant::seal(winner, VMGrant { recipient: winner, ..grant });
            let trade = self.trades.get_mut(&winner).expect("trade");
            trade.sealed = Some(forwarded);
            trade.status = TradeStatus::Accepted;
            self.transition(ledger, winner, ParticipantState::Using(1))?;
            Ok(Verdict::Valid)
        } else {
            ledger.record_state(
                self.config.adjudicator,
                self.contract,
                &format!("verdict invalid for {winner}"),
            );
            self.compensate(ledger, winner)?;
            Ok(Verdict::Invalid)
        }
    }

    /// Pays the provider for every undisputed trade, settles open ladders,
    /// returns the remaining provider deposit and closes the session.
    pub fn finalize_trade(&mut self, ledger: &mut Ledger, signer: &Signer) -> Result<(), ProtocolError> {
        let extra = if ledger.now() <= self.config.deadlines.tau5 {
            Err(format!("service runs until {}", self.config.deadlines.tau5))
        } else if self.trades.values().any(|t| t.status == TradeStatus::Disputed) {
            Err("dispute still open".into())
        } else {
            Ok(())
        };
        self.admit(
            ledger,
            signer,
            &[ContractPhase::Trading, ContractPhase::Dispute],
            &[],
            None,
            extra,
        )?;
        let provider = self.config.provider.addr;
        let open: Vec<Address> = self
            .trades
            .values()
            .filter(|t| matches!(t.status, TradeStatus::Delivered | TradeStatus::Accepted))
            .map(|t| t.winner)
            .collect();
        for w in open {
            if self.is_ladder() {
                self.settle_ladder_inner(ledger, w)?;
            } else {
                let price = self.trades[&w].price;
                self.release(
                    ledger,
                    w,
                    EscrowSlot::Deposit,
                    provider,
                    price,
                    &format!("payment P_j = {price} from {w}"),
                )?;
                self.trades.get_mut(&w).expect("trade").status = TradeStatus::Paid;
            }
        }
        for slot in [EscrowSlot::ProviderDeposit, EscrowSlot::ProviderCarry] {
            let held = self.book.get(provider, slot);
            self.release(ledger, provider, slot, provider, held, "provider deposit returned")?;
        }
        debug_assert!(self.book.total().is_zero(), "escrow left after settlement");
        self.set_phase(ledger, ContractPhase::Settled);
        Ok(())
    }
}
