//! Brute-force auction used to cross-check the engine on small instances.
//!
//! Prices are found as thresholds: the highest integer bid at which the
//! winner would lose if every tie went against it, located by binary search
//! over re-runs of the allocation with the winner moved through the ranking.
//! That value is checked against the critical-user formula.

use std::cmp::Ordering;

use rand::Rng;

use crate::auction::{solve, Candidate, ProviderSupply};
use crate::commitment::Bid;
use crate::ledger::{Address, Coin};

/// Instances above this size still run but may be slow.
pub const SOFT_LIMIT: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReferenceOutcome {
    /// Allocation per input position.
    pub x: Vec<bool>,
    /// Price per input position; 0 for losers.
    pub prices: Vec<Coin>,
    /// Whether the threshold search and the critical-user formula agreed for
    /// every winner.
    pub consistent: bool,
}

#[derive(Clone, Copy)]
struct Entry<'a> {
    addr: Address,
    bundle: &'a [u64],
    b: u64,
    s: u64,
    /// Loses every tie regardless of address.
    yields: bool,
}

fn size(bundle: &[u64], weights: &[u64]) -> u64 {
    bundle.iter().zip(weights).map(|(k, w)| k * w).sum()
}

/// Orders `p` before `q` by density `b / sqrt(s)`, then tie rules.
fn before(p: &Entry, q: &Entry) -> Ordering {
    let lhs = u128::from(p.b) * u128::from(p.b) * u128::from(q.s);
    let rhs = u128::from(q.b) * u128::from(q.b) * u128::from(p.s);
    rhs.cmp(&lhs)
        .then(p.yields.cmp(&q.yields))
        .then(p.addr.cmp(&q.addr))
}

fn greedy(entries: &[Entry], caps: &[u64]) -> Vec<bool> {
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&i, &j| before(&entries[i], &entries[j]));
    let mut used = vec![0u64; caps.len()];
    let mut x = vec![false; entries.len()];
    for i in order {
        let b = entries[i].bundle;
        if fits(&used, b, caps) {
            for (u, k) in used.iter_mut().zip(b) {
                *u += k;
            }
            x[i] = true;
        }
    }
    x
}

/// The other bidders of `j` in rank order, with the greedy usage after each
/// prefix. `j` placed behind the first `k` of them wins iff its bundle fits
/// on top of `prefix[k]`.
struct Field<'a> {
    others: Vec<Entry<'a>>,
    /// Row `k` (of width `caps.len()`) is the usage after `k` others.
    prefix: Vec<u64>,
    caps: &'a [u64],
}

fn fits(used: &[u64], bundle: &[u64], caps: &[u64]) -> bool {
    used.iter().zip(bundle).zip(caps).all(|((u, k), c)| u + k <= *c)
}

impl<'a> Field<'a> {
    fn new(entries: &[Entry<'a>], caps: &'a [u64], j: usize) -> Self {
        let mut others: Vec<Entry> = entries
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != j)
            .map(|(_, e)| *e)
            .collect();
        others.sort_by(before);
        let m = caps.len();
        let mut prefix = vec![0u64; m * (others.len() + 1)];
        for (k, o) in others.iter().enumerate() {
            let (done, rest) = prefix.split_at_mut(m * (k + 1));
            let used = &done[m * k..];
            let take = fits(used, o.bundle, caps);
            for (i, next) in rest[..m].iter_mut().enumerate() {
                *next = used[i] + if take { o.bundle[i] } else { 0 };
            }
        }
        Field {
            others,
            prefix,
            caps,
        }
    }

    fn row(&self, k: usize) -> &[u64] {
        let m = self.caps.len();
        &self.prefix[m * k..m * (k + 1)]
    }

    /// Whether `j` wins bidding `b` when every tie goes against it.
    fn wins_at(&self, j: &Entry, b: u64) -> bool {
        let probe = Entry {
            b,
            yields: true,
            ..*j
        };
        let ahead = self
            .others
            .iter()
            .take_while(|o| before(o, &probe) == Ordering::Less)
            .count();
        fits(self.row(ahead), j.bundle, self.caps)
    }

    /// Highest bid at which `j` loses, or `None` if it wins even at zero.
    fn threshold(&self, j: &Entry) -> Option<u64> {
        if self.wins_at(j, 0) {
            return None;
        }
        let (mut lo, mut hi) = (0u64, j.b);
        if !self.wins_at(j, hi) {
            // Only a favourable tie at its own bid lets j win.
            return Some(hi);
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.wins_at(j, mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(lo)
    }

    /// `floor(d_s * sqrt(S_j))` for the first lower-ranked bidder `s` whose
    /// admission leaves no room for `j`, or 0.
    fn critical_formula(&self, j: &Entry) -> u64 {
        let rank = self
            .others
            .iter()
            .take_while(|o| before(o, j) == Ordering::Less)
            .count();
        for k in rank..self.others.len() {
            if !fits(self.row(k + 1), j.bundle, self.caps) {
                let s = &self.others[k];
                let num = u128::from(s.b) * u128::from(s.b) * u128::from(j.s);
                let v = (num / u128::from(s.s)).isqrt();
                return u64::try_from(v).expect("bounded by the critical bid");
            }
        }
        0
    }
}

/// Allocation and prices for `bids`, recomputed from scratch.
pub fn reference_allocate_price(bids: &[(Address, Bid)], supply: &ProviderSupply) -> ReferenceOutcome {
    if bids.len() > SOFT_LIMIT {
        log::warn!(
            "reference auction over {} bids exceeds the soft limit of {SOFT_LIMIT}",
            bids.len()
        );
    }
    let entries: Vec<Entry> = bids
        .iter()
        .map(|(addr, bid)| Entry {
            addr: *addr,
            bundle: &bid.bundle,
            b: bid.price.0,
            s: size(&bid.bundle, &supply.weights),
            yields: false,
        })
        .collect();
    let x = greedy(&entries, &supply.capacities);
    let mut consistent = true;
    let prices = (0..entries.len())
        .map(|j| {
            if !x[j] {
                return Coin::ZERO;
            }
            let field = Field::new(&entries, &supply.capacities, j);
            let p = field.threshold(&entries[j]).unwrap_or(0);
            consistent &= p == field.critical_formula(&entries[j]);
            Coin(p)
        })
        .collect();
    ReferenceOutcome {
        x,
        prices,
        consistent,
    }
}

/// Runs the engine and the reference on the same bids and reports the first
/// disagreement.
pub fn cross_check(bids: &[(Address, Bid)], supply: &ProviderSupply) -> Result<(), String> {
    let candidates = bids
        .iter()
        .map(|(a, b)| Candidate::new(*a, b, supply))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let engine = solve(candidates, supply);
    let reference = reference_allocate_price(bids, supply);
    if !reference.consistent {
        return Err("threshold search and critical formula disagree".into());
    }
    for (i, (addr, bid)) in bids.iter().enumerate() {
        let won = engine.is_winner(*addr);
        let price = engine.prices.get(addr).copied().unwrap_or(Coin::ZERO);
        if won != reference.x[i] || price != reference.prices[i] {
            return Err(format!(
                "bid {i} {:?}@{}: engine x={} P={}, reference x={} P={}",
                bid.bundle,
                bid.price,
                u8::from(won),
                price,
                u8::from(reference.x[i]),
                reference.prices[i]
            ));
        }
    }
    Ok(())
}

/// A small random instance: up to 6 bids over up to 3 VM types.
pub fn random_instance(rng: &mut impl Rng) -> (Vec<(Address, Bid)>, ProviderSupply) {
    let m = rng.random_range(1..=3);
    let capacities = (0..m).map(|_| rng.random_range(1..=4)).collect();
    let weights = (0..m).map(|_| rng.random_range(1..=3)).collect();
    let supply = ProviderSupply::new(capacities, weights).expect("positive weights");
    let n = rng.random_range(0..=6);
    let bids = (0..n)
        .map(|i| {
            let mut bundle: Vec<u64> = (0..m).map(|_| rng.random_range(0..=3)).collect();
            if bundle.iter().all(|&k| k == 0) {
                bundle[rng.random_range(0..m)] = 1;
            }
            let addr = Address::from_seed(format!("fuzz-{i}").as_bytes());
            (addr, Bid::new(bundle, Coin(rng.random_range(1..=20))))
        })
        .collect();
    (bids, supply)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bids(spec: &[(&str, &[u64], u64)]) -> Vec<(Address, Bid)> {
        spec.iter()
            .map(|(s, k, b)| (Address::from_seed(s.as_bytes()), Bid::new(k.to_vec(), Coin(*b))))
            .collect()
    }

    #[test]
    fn single_type_example() {
        let supply = ProviderSupply::new(vec![2], vec![1]).unwrap();
        let out = reference_allocate_price(
            &bids(&[("u1", &[1], 10), ("u2", &[2], 6), ("u3", &[1], 4)]),
            &supply,
        );
        assert_eq!(out.x, vec![true, false, true]);
        assert_eq!(out.prices, vec![Coin(4), Coin(0), Coin(0)]);
        assert!(out.consistent);
    }

    #[test]
    fn empty_and_single_bidder() {
        let supply = ProviderSupply::new(vec![2], vec![1]).unwrap();
        let out = reference_allocate_price(&[], &supply);
        assert!(out.x.is_empty() && out.prices.is_empty());
        let out = reference_allocate_price(&bids(&[("u1", &[2], 3)]), &supply);
        assert_eq!(out.x, vec![true]);
        assert_eq!(out.prices, vec![Coin(0)]);
    }

    #[test]
    fn integer_threshold_goes_to_the_tie() {
        // u2 density 3 = 6/sqrt(4); u1 needs b/1 > 3 or a favourable tie.
        let supply = ProviderSupply::new(vec![4], vec![1]).unwrap();
        let out = reference_allocate_price(&bids(&[("u1", &[1], 5), ("u2", &[4], 6)]), &supply);
        assert_eq!(out.x, vec![true, false]);
        assert_eq!(out.prices[0], Coin(3));
        assert!(out.consistent);
    }
}
