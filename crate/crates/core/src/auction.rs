//! Combinatorial auction: density ranking, greedy allocation and
//! critical-value pricing.
//!
//! Densities `b / sqrt(S)` are never materialised as floats. A density is the
//! exact pair `(b, S)` and two densities compare by `b1^2 * S2` against
//! `b2^2 * S1`. Prices are the floor of the exact real value.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigUint;
use thiserror::Error;

use crate::commitment::Bid;
use crate::ledger::{Address, Coin, Ledger, Signer};
use crate::session::{ContractSession, EscrowSlot, ProtocolError};
use crate::state::{ContractPhase, ParticipantState};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuctionError {
    #[error("bundle has {actual} entries, supply has {expected} types")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("bundle requests nothing")]
    EmptyBundle,
    #[error("weights must be strictly positive")]
    ZeroWeight,
    #[error("supply needs at least one VM type")]
    NoTypes,
}

/// What the provider offers: per-type capacities and weights.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProviderSupply {
    pub capacities: Vec<u64>,
    pub weights: Vec<u64>,
}

impl ProviderSupply {
    pub fn new(capacities: Vec<u64>, weights: Vec<u64>) -> Result<Self, AuctionError> {
        if capacities.is_empty() {
            return Err(AuctionError::NoTypes);
        }
        if capacities.len() != weights.len() {
            return Err(AuctionError::LengthMismatch {
                expected: capacities.len(),
                actual: weights.len(),
            });
        }
        if weights.contains(&0) {
            return Err(AuctionError::ZeroWeight);
        }
        Ok(ProviderSupply {
            capacities,
            weights,
        })
    }

    pub fn types(&self) -> usize {
        self.capacities.len()
    }

    /// `sum_i k_i * w_i` over the whole supply.
    pub fn weighted_total(&self) -> u64 {
        weighted_size(&self.capacities, &self.weights)
    }
}

/// `sum_i k_i * w_i`.
pub fn weighted_size(bundle: &[u64], weights: &[u64]) -> u64 {
    bundle
        .iter()
        .zip(weights)
        .map(|(k, w)| k.checked_mul(*w).expect("weighted size overflow"))
        .fold(0u64, |acc, v| acc.checked_add(v).expect("weighted size overflow"))
}

/// Exact bid density `price / sqrt(size)`.
#[derive(Clone, Copy, Debug)]
pub struct Density {
    pub price: u64,
    pub size: u64,
}

impl Density {
    /// `self >= beta` evaluated as `price^2 >= beta^2 * size`.
    pub fn at_least(&self, beta: Coin) -> bool {
        let beta_sq = (beta.0 as u128) * (beta.0 as u128);
        cmp_products(square(self.price), 1, beta_sq, self.size) != Ordering::Less
    }

    /// `floor(density * 2^64)`, the fixed-point form used for pro-rata splits.
    pub fn scaled(&self) -> BigUint {
        let num = (BigUint::from(self.price) * BigUint::from(self.price)) << 128u32;
        (num / BigUint::from(self.size)).sqrt()
    }

    pub fn approx(&self) -> f64 {
        self.price as f64 / (self.size as f64).sqrt()
    }
}

impl PartialEq for Density {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Density {}

impl PartialOrd for Density {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Density {
    fn cmp(&self, other: &Self) -> Ordering {
        cmp_products(square(self.price), other.size, square(other.price), self.size)
    }
}

impl fmt::Display for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/sqrt({})", self.price, self.size)
    }
}

fn square(v: u64) -> u128 {
    (v as u128) * (v as u128)
}

/// Compares `a * b` with `c * d` without overflow.
fn cmp_products(a: u128, b: u64, c: u128, d: u64) -> Ordering {
    match (a.checked_mul(b as u128), c.checked_mul(d as u128)) {
        (Some(l), Some(r)) => l.cmp(&r),
        _ => (BigUint::from(a) * b).cmp(&(BigUint::from(c) * d)),
    }
}

/// `floor(sqrt(b^2 * num / den))`, exact.
pub fn floor_sqrt_ratio(b: u64, num: u64, den: u64) -> u64 {
    assert!(den > 0, "zero denominator");
    let value = match square(b).checked_mul(num as u128) {
        Some(p) => (p / den as u128).isqrt(),
        None => {
            let p = BigUint::from(b) * BigUint::from(b) * BigUint::from(num);
            let root = (p / BigUint::from(den)).sqrt();
            return u64::try_from(root).expect("price exceeds u64");
        }
    };
    u64::try_from(value).expect("price exceeds u64")
}

pub fn bid_density(bid: &Bid, weights: &[u64]) -> Result<Density, AuctionError> {
    if bid.bundle.len() != weights.len() {
        return Err(AuctionError::LengthMismatch {
            expected: weights.len(),
            actual: bid.bundle.len(),
        });
    }
    let size = weighted_size(&bid.bundle, weights);
    if size == 0 {
        return Err(AuctionError::EmptyBundle);
    }
    Ok(Density {
        price: bid.price.0,
        size,
    })
}

/// An opened bid as seen by the auction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Candidate {
    pub addr: Address,
    pub bundle: Vec<u64>,
    pub price: Coin,
    pub density: Density,
}

impl Candidate {
    pub fn new(addr: Address, bid: &Bid, supply: &ProviderSupply) -> Result<Self, AuctionError> {
        let density = bid_density(bid, &supply.weights)?;
        Ok(Candidate {
            addr,
            bundle: bid.bundle.clone(),
            price: bid.price,
            density,
        })
    }
}

/// Descending density; ties go to the smaller address.
pub fn rank(candidates: &mut [Candidate]) {
    candidates.sort_by(|a, b| b.density.cmp(&a.density).then(a.addr.cmp(&b.addr)));
}

fn fits(used: &[u64], bundle: &[u64], capacities: &[u64]) -> bool {
    used.iter()
        .zip(bundle)
        .zip(capacities)
        .all(|((u, k), cap)| u + k <= *cap)
}

fn add_into(used: &mut [u64], bundle: &[u64]) {
    for (u, k) in used.iter_mut().zip(bundle) {
        *u += k;
    }
}

/// Greedy scan in rank order: a bid wins iff its bundle fits what earlier
/// winners left over in every dimension.
pub fn allocate(ordered: &[Candidate], supply: &ProviderSupply) -> Vec<bool> {
    let mut used = vec![0u64; supply.types()];
    ordered
        .iter()
        .map(|c| {
            let ok = fits(&used, &c.bundle, &supply.capacities);
            if ok {
                add_into(&mut used, &c.bundle);
            }
            ok
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pricing {
    pub price: Coin,
    /// Rank index of the critical user, if any.
    pub critical: Option<usize>,
}

/// Critical-value prices for an allocation.
///
/// For winner `j` the counter starts at what earlier winners consume; lower
/// ranked users are added in order when they fit, and the first one whose
/// admission leaves no room for `j` is `j`'s critical user `s`. The price is
/// `floor(d_s * sqrt(S_j))`. Losers and winners without a critical user pay 0.
pub fn price(ordered: &[Candidate], x: &[bool], supply: &ProviderSupply) -> Vec<Pricing> {
    let caps = &supply.capacities;
    let mut before = vec![0u64; supply.types()];
    let mut out = Vec::with_capacity(ordered.len());
    for (j, cand) in ordered.iter().enumerate() {
        let mut pricing = Pricing {
            price: Coin::ZERO,
            critical: None,
        };
        if x[j] {
            let mut ins = before.clone();
            for (s, other) in ordered.iter().enumerate().skip(j + 1) {
                if !fits(&ins, &other.bundle, caps) {
                    continue;
                }
                add_into(&mut ins, &other.bundle);
                if !fits(&ins, &cand.bundle, caps) {
                    let d = other.density;
                    pricing = Pricing {
                        price: Coin(floor_sqrt_ratio(d.price, cand.density.size, d.size)),
                        critical: Some(s),
                    };
                    break;
                }
            }
            add_into(&mut before, &cand.bundle);
        }
        out.push(pricing);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuctionOutcome {
    /// Addresses in rank order.
    pub order: Vec<Address>,
    /// Allocation indicator per rank position.
    pub x: Vec<bool>,
    /// Prices, winners only.
    pub prices: BTreeMap<Address, Coin>,
    /// Critical user per winner.
    pub critical: BTreeMap<Address, Option<Address>>,
}

impl AuctionOutcome {
    pub fn winners(&self) -> impl Iterator<Item = Address> + '_ {
        self.order
            .iter()
            .zip(&self.x)
            .filter(|(_, won)| **won)
            .map(|(a, _)| *a)
    }

    pub fn is_winner(&self, addr: Address) -> bool {
        self.prices.contains_key(&addr)
    }
}

/// Ranks, allocates and prices.
pub fn solve(mut candidates: Vec<Candidate>, supply: &ProviderSupply) -> AuctionOutcome {
    rank(&mut candidates);
    let x = allocate(&candidates, supply);
    let pricing = price(&candidates, &x, supply);
    let mut prices = BTreeMap::new();
    let mut critical = BTreeMap::new();
    for (i, c) in candidates.iter().enumerate() {
        if x[i] {
            prices.insert(c.addr, pricing[i].price);
            critical.insert(c.addr, pricing[i].critical.map(|s| candidates[s].addr));
        }
    }
    AuctionOutcome {
        order: candidates.iter().map(|c| c.addr).collect(),
        x,
        prices,
        critical,
    }
}

impl ContractSession {
    /// Runs the auction over the opened bids, refunds losers in full and
    /// winners' over-deposit, and moves to `ProviderSendsGoods`.
    pub fn run_auction(
        &mut self,
        ledger: &mut Ledger,
        signer: &Signer,
    ) -> Result<AuctionOutcome, ProtocolError> {
        let tau3 = self.config.deadlines.tau3;
        self.admit(
            ledger,
            signer,
            &[ContractPhase::Auction],
            &[],
            Some(tau3),
            Ok(()),
        )?;
        self.settle_refunds(ledger)?;

        let supply = self.config.provider.supply.clone();
        let candidates: Vec<Candidate> = self
            .commitments
            .values()
            .filter_map(|rec| {
                let bid = rec.opened_bid.as_ref()?;
                Some(Candidate::new(rec.owner, bid, &supply).expect("validated at open"))
            })
            .collect();
        let outcome = solve(candidates.clone(), &supply);

        for (rank, addr) in outcome.order.iter().enumerate() {
            let won = outcome.x[rank];
            let line = if won {
                let critical = outcome.critical[addr]
                    .map(|c| c.to_hex())
                    .unwrap_or_else(|| "none".into());
                format!(
                    "auction rank={} user={} x=1 price={} critical={}",
                    rank + 1,
                    addr,
                    outcome.prices[addr],
                    critical
                )
            } else {
                format!("auction rank={} user={} x=0", rank + 1, addr)
            };
            ledger.record_state(self.contract, self.contract, &line);
            let to = if won {
                ParticipantState::UserWinsAtTheAuction
            } else {
                ParticipantState::UserFailsInTheAuction
            };
            self.transition(ledger, *addr, to)?;
        }

        for cand in &candidates {
            let deposit = self.book.get(cand.addr, EscrowSlot::Deposit);
            match outcome.prices.get(&cand.addr) {
                Some(price) => {
                    let excess = deposit - *price;
                    self.release(
                        ledger,
                        cand.addr,
                        EscrowSlot::Deposit,
                        cand.addr,
                        excess,
                        &format!("over-deposit refund b={} P={}", cand.price, price),
                    )?;
                    self.open_trade(cand.addr, *price, cand.bundle.clone());
                }
                None => {
                    self.release(
                        ledger,
                        cand.addr,
                        EscrowSlot::Deposit,
                        cand.addr,
                        deposit,
                        "loser deposit refund",
                    )?;
                }
            }
        }
        self.check_escrow_sufficiency()?;
        self.outcome = Some(outcome.clone());
        self.set_phase(ledger, ContractPhase::ProviderSendsGoods);
        self.advance_if_all_delivered(ledger);
        Ok(outcome)
    }
}
