//! Timed bid commitments with guaranties and the non-uniform refund of
//! forfeited guaranties.
//!
//! A user commits to `H(bid || nonce || address || sid)` with guaranty `a`,
//! then opens by revealing the bid and paying its price as deposit. Users who
//! never open lose `a`; the pool of lost guaranties is shared among openers
//! whose density reaches the provider's base price, in proportion to density.

use std::collections::BTreeMap;

use num_bigint::BigUint;

use crate::auction::{bid_density, Density};
use crate::ledger::{commit_hash, Address, Coin, Hash256, Ledger, Signer};
use crate::session::{ContractSession, EscrowSlot, ProtocolError};
use crate::state::{ContractPhase, ParticipantState, Rejection};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Bid {
    /// Requested count per VM type.
    pub bundle: Vec<u64>,
    pub price: Coin,
}

impl Bid {
    pub fn new(bundle: Vec<u64>, price: Coin) -> Self {
        Bid { bundle, price }
    }

    pub fn validate(&self, types: usize) -> Result<(), String> {
        if self.bundle.len() != types {
            return Err(format!(
                "bundle has {} entries, expected {types}",
                self.bundle.len()
            ));
        }
        if self.bundle.iter().all(|&k| k == 0) {
            return Err("bundle requests nothing".into());
        }
        if self.price.is_zero() {
            return Err("price must be positive".into());
        }
        Ok(())
    }

    /// Canonical encoding hashed into the commitment.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 8 * (self.bundle.len() + 1));
        out.extend_from_slice(&(self.bundle.len() as u32).to_be_bytes());
        for k in &self.bundle {
            out.extend_from_slice(&k.to_be_bytes());
        }
        out.extend_from_slice(&self.price.0.to_be_bytes());
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommitmentRecord {
    pub owner: Address,
    pub digest: Hash256,
    pub guaranty: Coin,
    pub opened_bid: Option<Bid>,
    pub nonce: Option<Vec<u8>>,
    pub density: Option<Density>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefundPlan {
    /// Guaranty refund per committed user, bonus included.
    pub refunds: BTreeMap<Address, Coin>,
    /// `n_f * a`.
    pub forfeit_pool: Coin,
    pub n_f: usize,
    pub beta: Coin,
    /// Pool left after flooring, or the whole pool if no opener is eligible.
    pub remainder: Coin,
}

impl RefundPlan {
    pub fn total_refunded(&self) -> Coin {
        self.refunds.values().copied().sum()
    }
}

/// Splits the forfeited pool among eligible openers.
///
/// Openers get `a` back plus `floor(pool * d_j / sum d_y)` over openers with
/// `d >= beta`. Densities enter through their `2^64` fixed-point values, which
/// are exact for dyadic densities.
pub fn compute_refund_plan(
    guaranty: Coin,
    beta: Coin,
    openers: &[(Address, Density)],
    non_openers: &[Address],
) -> RefundPlan {
    let n_f = non_openers.len();
    let forfeit_pool = Coin(
        guaranty
            .0
            .checked_mul(n_f as u64)
            .expect("forfeit pool overflow"),
    );
    let weights: Vec<(Address, BigUint)> = openers
        .iter()
        .filter(|(_, d)| d.at_least(beta))
        .map(|(a, d)| (*a, d.scaled()))
        .filter(|(_, w)| *w > BigUint::ZERO)
        .collect();
    let total: BigUint = weights.iter().map(|(_, w)| w).sum();

    let mut refunds: BTreeMap<Address, Coin> = non_openers.iter().map(|a| (*a, Coin::ZERO)).collect();
    for (a, _) in openers {
        refunds.insert(*a, guaranty);
    }
    let mut distributed = Coin::ZERO;
    if total > BigUint::ZERO {
        for (a, w) in &weights {
            let share = BigUint::from(forfeit_pool.0) * w / &total;
            let bonus = Coin(u64::try_from(share).expect("share bounded by pool"));
            distributed += bonus;
            *refunds.get_mut(a).expect("opener listed") += bonus;
        }
    }
    RefundPlan {
        refunds,
        forfeit_pool,
        n_f,
        beta,
        remainder: forfeit_pool - distributed,
    }
}

/// Result of an admitted open.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OpenVerdict {
    Opened(Density),
    /// The reveal did not match; the guaranty is forfeited.
    Failed(String),
}

impl ContractSession {
    pub fn submit_commitment(
        &mut self,
        ledger: &mut Ledger,
        signer: &Signer,
        digest: Hash256,
        guaranty: Coin,
    ) -> Result<(), ProtocolError> {
        let actor = signer.address();
        let a = self.config.guaranty;
        let extra = if digest.is_zero() {
            Err("empty digest".to_string())
        } else if guaranty != a {
            Err(format!("guaranty {guaranty} != {a}"))
        } else if actor == self.config.provider.addr || actor == self.config.adjudicator {
            Err("provider and adjudicator cannot bid".to_string())
        } else {
            Ok(())
        };
        self.admit(
            ledger,
            signer,
            &[ContractPhase::UserSendsCommitment],
            &[ParticipantState::UserInitState],
            Some(self.config.deadlines.tau1),
            extra,
        )?;
        self.lock(
            ledger,
            signer,
            EscrowSlot::Guaranty,
            guaranty,
            &format!("commit digest={}", digest.to_hex()),
        )?;
        self.states.enroll(actor, ParticipantState::UserInitState);
        self.transition(ledger, actor, ParticipantState::UserSentCommitment)?;
        self.commitments.insert(
            actor,
            CommitmentRecord {
                owner: actor,
                digest,
                guaranty,
                opened_bid: None,
                nonce: None,
                density: None,
            },
        );
        self.after_commit(ledger);
        Ok(())
    }

    /// Reveals a committed bid and escrows its price.
    ///
    /// A reveal that does not match the digest, or whose deposit differs from
    /// the bid price, moves the user to `UserFailsToOpenCommitment`. A user who
    /// cannot fund the deposit is rejected and may retry before the deadline.
    pub fn open_commitment(
        &mut self,
        ledger: &mut Ledger,
        signer: &Signer,
        bid: &Bid,
        nonce: &[u8],
        deposit: Coin,
    ) -> Result<OpenVerdict, ProtocolError> {
        let actor = self.admit(
            ledger,
            signer,
            &[ContractPhase::UserOpensCommitment],
            &[ParticipantState::UserSentCommitment],
            Some(self.config.deadlines.tau2),
            Ok(()),
        )?;
        let record = &self.commitments[&actor];
        let types = self.config.provider.supply.types();
        let check = bid
            .validate(types)
            .and_then(|_| {
                commit_hash(&bid.to_bytes(), nonce, actor, self.config.sid)
                    .map_err(|e| e.to_string())
            })
            .and_then(|h| {
                if h == record.digest {
                    Ok(())
                } else {
                    Err(format!("digest mismatch {}", h.to_hex()))
                }
            })
            .and_then(|_| {
                if deposit == bid.price {
                    Ok(())
                } else {
                    Err(format!("deposit {deposit} != price {}", bid.price))
                }
            });
        if let Err(reason) = check {
            ledger.record_state(actor, self.contract, &format!("open failed: {reason}"));
            self.transition(ledger, actor, ParticipantState::UserFailsToOpenCommitment)?;
            self.after_open(ledger)?;
            return Ok(OpenVerdict::Failed(reason));
        }
        let density =
            bid_density(bid, &self.config.provider.supply.weights).expect("bid validated");
        self.lock(
            ledger,
            signer,
            EscrowSlot::Deposit,
            deposit,
            &format!(
                "open digest={} bundle={:?} price={}",
                self.commitments[&actor].digest.to_hex(),
                bid.bundle,
                bid.price
            ),
        )?;
        let record = self.commitments.get_mut(&actor).expect("committed");
        record.opened_bid = Some(bid.clone());
        record.nonce = Some(nonce.to_vec());
        record.density = Some(density);
        self.transition(ledger, actor, ParticipantState::UserOpenedCommitment)?;
        self.after_open(ledger)?;
        Ok(OpenVerdict::Opened(density))
    }

    /// Bids revealed so far, by owner address.
    pub fn opened_bids(&self) -> Vec<(Address, Bid)> {
        self.commitments
            .values()
            .filter_map(|r| r.opened_bid.clone().map(|b| (r.owner, b)))
            .collect()
    }

    /// Returns guaranties and distributes the forfeit pool. Runs once; later
    /// calls return the stored plan and move nothing.
    pub fn settle_refunds(&mut self, ledger: &mut Ledger) -> Result<RefundPlan, ProtocolError> {
        if let Some(plan) = &self.refunds {
            return Ok(plan.clone());
        }
        if self.phase.rank() < ContractPhase::Auction.rank() {
            return Err(self.reject_internal(
                ledger,
                Rejection::PhaseMismatch {
                    expected: vec![
                        ContractPhase::Auction,
                        ContractPhase::ProviderSendsGoods,
                        ContractPhase::Trading,
                        ContractPhase::Dispute,
                        ContractPhase::Settled,
                        ContractPhase::Aborted,
                    ],
                    actual: self.phase,
                },
            ));
        }
        let a = self.config.guaranty;
        let beta = self.config.provider.base_price;
        let users: Vec<Address> = self.committed_users().collect();

        let plan = if !self.opening_started {
            // Aborted before anyone could open: nobody forfeits.
            RefundPlan {
                refunds: users.iter().map(|u| (*u, a)).collect(),
                forfeit_pool: Coin::ZERO,
                n_f: 0,
                beta,
                remainder: Coin::ZERO,
            }
        } else {
            for u in &users {
                if self.states.get(*u) == Some(ParticipantState::UserSentCommitment) {
                    self.transition(ledger, *u, ParticipantState::UserFailsToOpenCommitment)?;
                }
            }
            let mut openers = Vec::new();
            let mut non_openers = Vec::new();
            for u in &users {
                match self.commitments[u].density {
                    Some(d) => openers.push((*u, d)),
                    None => non_openers.push(*u),
                }
            }
            compute_refund_plan(a, beta, &openers, &non_openers)
        };

        let pool = (self.contract, EscrowSlot::ForfeitPool);
        for u in &users {
            let held = self.book.get(*u, EscrowSlot::Guaranty);
            let refund = plan.refunds[u];
            if refund <= held {
                self.release(ledger, *u, EscrowSlot::Guaranty, *u, refund, "guaranty refund")?;
                self.reassign((*u, EscrowSlot::Guaranty), pool, held - refund)?;
            }
        }
        for u in &users {
            let refund = plan.refunds[u];
            let held = self.book.get(*u, EscrowSlot::Guaranty);
            if refund > a {
                self.release(ledger, *u, EscrowSlot::Guaranty, *u, held, "guaranty refund")?;
                self.release(
                    ledger,
                    pool.0,
                    pool.1,
                    *u,
                    refund - held,
                    "forfeit pool share",
                )?;
            }
        }
        let left = self.book.get(pool.0, pool.1);
        debug_assert_eq!(left, plan.remainder);
        self.reassign(
            pool,
            (self.config.provider.addr, EscrowSlot::ProviderCarry),
            left,
        )?;
        ledger.record_state(
            self.contract,
            self.contract,
            &format!(
                "refunds settled n_f={} pool={} remainder={}",
                plan.n_f, plan.forfeit_pool, plan.remainder
            ),
        );
        self.refunds = Some(plan.clone());
        Ok(plan)
    }

    /// After `tau3` with no auction, aborts the session and returns what the
    /// caller still has in escrow. Returns the coins credited in this call.
    pub fn reclaim_after_timeout(
        &mut self,
        ledger: &mut Ledger,
        signer: &Signer,
    ) -> Result<Coin, ProtocolError> {
        let extra = if self.outcome.is_some() {
            Err("auction already ran".to_string())
        } else if ledger.now() <= self.config.deadlines.tau3 {
            Err(format!("reclaim opens after {}", self.config.deadlines.tau3))
        } else {
            Ok(())
        };
        let actor = self.admit(ledger, signer, &[], &[], None, extra)?;
        let before = ledger.balance(actor).unwrap_or(Coin::ZERO);
        if self.phase != ContractPhase::Aborted {
            self.abort(ledger)?;
        }
        let slots: &[EscrowSlot] = if actor == self.config.provider.addr {
            &[EscrowSlot::ProviderDeposit, EscrowSlot::ProviderCarry]
        } else {
            &[EscrowSlot::Deposit]
        };
        for slot in slots {
            let held = self.book.get(actor, *slot);
            self.release(ledger, actor, *slot, actor, held, "reclaim after timeout")?;
        }
        let after = ledger.balance(actor).unwrap_or(Coin::ZERO);
        Ok(after - before)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(price: u64, size: u64) -> Density {
        Density { price, size }
    }

    fn addr(s: &str) -> Address {
        Address::from_seed(s.as_bytes())
    }

    #[test]
    fn empty_pool_returns_guaranty() {
        let plan = compute_refund_plan(Coin(5), Coin(1), &[(addr("a"), d(4, 1))], &[]);
        assert_eq!(plan.refunds[&addr("a")], Coin(5));
        assert_eq!(plan.remainder, Coin::ZERO);
    }

    #[test]
    fn ineligible_opener_gets_only_guaranty() {
        // densities 5 and 0.5 = 1/sqrt(4)
        let plan = compute_refund_plan(
            Coin(5),
            Coin(1),
            &[(addr("a"), d(5, 1)), (addr("b"), d(1, 4))],
            &[addr("c")],
        );
        assert_eq!(plan.refunds[&addr("a")], Coin(10));
        assert_eq!(plan.refunds[&addr("b")], Coin(5));
        assert_eq!(plan.refunds[&addr("c")], Coin::ZERO);
        assert_eq!(plan.remainder, Coin::ZERO);
    }

    #[test]
    fn flooring_dust_is_remainder() {
        let plan = compute_refund_plan(
            Coin(5),
            Coin(1),
            &[(addr("a"), d(3, 1)), (addr("b"), d(1, 1))],
            &[addr("c"), addr("e")],
        );
        assert_eq!(plan.refunds[&addr("a")], Coin(12));
        assert_eq!(plan.refunds[&addr("b")], Coin(7));
        assert_eq!(plan.remainder, Coin(1));
        assert_eq!(plan.total_refunded() + plan.remainder, Coin(20));
    }

    #[test]
    fn no_eligible_opener_keeps_pool() {
        let plan = compute_refund_plan(Coin(5), Coin(10), &[(addr("a"), d(3, 1))], &[addr("c")]);
        assert_eq!(plan.refunds[&addr("a")], Coin(5));
        assert_eq!(plan.remainder, Coin(5));
    }

    #[test]
    fn bid_encoding_is_length_prefixed() {
        let bid = Bid::new(vec![1, 2], Coin(9));
        let bytes = bid.to_bytes();
        assert_eq!(bytes.len(), 4 + 8 * 3);
        assert_eq!(&bytes[..4], &[0, 0, 0, 2]);
        assert_ne!(bytes, Bid::new(vec![1, 2, 0], Coin(9)).to_bytes());
    }

    #[test]
    fn bid_validation() {
        assert!(Bid::new(vec![1, 0], Coin(3)).validate(2).is_ok());
        assert!(Bid::new(vec![0, 0], Coin(3)).validate(2).is_err());
        assert!(Bid::new(vec![1], Coin(3)).validate(2).is_err());
        assert!(Bid::new(vec![1, 0], Coin(0)).validate(2).is_err());
    }
}
