//! Acceptance checks, one line per criterion. Exits non-zero if any fails.

mod common;

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use fairvm::auction::{allocate, rank, weighted_size, Candidate, Density};
use fairvm::commitment::compute_refund_plan;
use fairvm::ladder::{split, LadderState};
use fairvm::scenario::{cross_check, run, ProviderStrategy, Scenario, UserStrategy};
use fairvm::{Address, Bid, Coin, ContractPhase, ParticipantState, Time};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn user_addr(u: &fairvm::scenario::UserSpec) -> Address {
    Address::from_seed(u.seed.as_bytes())
}

fn provider_addr(s: &Scenario) -> Address {
    Address::from_seed(s.provider.seed.as_bytes())
}

/// Whether `j` of the ranked `ordered` wins when its bid alone changes to
/// `price`.
fn wins_with(ordered: &[Candidate], j: usize, price: u64, supply: &fairvm::ProviderSupply) -> bool {
    let mut c = ordered.to_vec();
    let moved = c.remove(j);
    let bid = Bid::new(moved.bundle, Coin(price));
    let addr = moved.addr;
    let probe = Candidate::new(addr, &bid, supply).expect("valid rebid");
    c.push(probe);
    rank(&mut c);
    let at = c.iter().position(|o| o.addr == addr).expect("present");
    allocate(&c, supply)[at]
}

/// Criteria 1 and 2 share one pass over the grid.
fn grid() -> (Outcome, Outcome) {
    let start = Instant::now();
    let mut mismatches = 0u64;
    let mut first = String::new();
    let mut rebids = 0u64;
    let mut rebid_failures = 0u64;
    let stats = common::for_each_instance(|bids, supply| {
        if let Err(e) = cross_check(bids, supply) {
            mismatches += 1;
            if first.is_empty() {
                first = format!(" first: caps={:?} {e}", supply.capacities);
            }
        }
    });
    let elapsed = start.elapsed();

    // Rebids on the whole grid plus every shipped scenario.
    let mut rebid = |bids: &[(Address, Bid)], supply: &fairvm::ProviderSupply| {
        let mut ordered: Vec<Candidate> = bids
            .iter()
            .map(|(a, b)| Candidate::new(*a, b, supply).unwrap())
            .collect();
        rank(&mut ordered);
        let x = allocate(&ordered, supply);
        let prices = fairvm::auction::price(&ordered, &x, supply);
        for (j, p) in prices.iter().enumerate() {
            if !x[j] || p.price.is_zero() {
                continue;
            }
            rebids += 1;
            let p = p.price.0;
            if !wins_with(&ordered, j, p + 1, supply) || wins_with(&ordered, j, p - 1, supply) {
                rebid_failures += 1;
            }
        }
    };
    let rebid_start = Instant::now();
    common::for_each_instance(&mut rebid);
    for (_, s) in common::corpus() {
        let out = run(&s);
        rebid(&out.session.opened_bids(), &out.session.config().provider.supply);
    }
    let rebid_elapsed = rebid_start.elapsed();

    let c1 = outcome(
        mismatches == 0 && elapsed < Duration::from_secs(60),
        format!(
            "{} instances, {mismatches} mismatches, {:.1}s{first}",
            stats.instances,
            elapsed.as_secs_f64()
        ),
    );
    let c2 = outcome(
        rebid_failures == 0 && rebids > 0,
        format!(
            "{rebids} winners rebid at P+1 and P-1, {rebid_failures} failures, {:.1}s",
            rebid_elapsed.as_secs_f64()
        ),
    );
    (c1, c2)
}

fn conservation(corpus: &[(String, Scenario)]) -> Outcome {
    let mut users = BTreeSet::new();
    let mut providers = BTreeSet::new();
    let mut broken = Vec::new();
    for (name, s) in corpus {
        providers.insert(s.provider.strategy.name());
        users.extend(s.users.iter().map(|u| u.strategy.name()));
        let out = run(s);
        if !out.stepwise_conservation || !out.report.conservation {
            broken.push(name.clone());
        }
    }
    let catalog_ok = users.len() == 6 && providers.len() == 6;
    outcome(
        broken.is_empty() && corpus.len() >= 20 && catalog_ok,
        format!(
            "{} scenarios, {} user and {} provider strategies exercised, broken: {broken:?}",
            corpus.len(),
            users.len(),
            providers.len()
        ),
    )
}

/// `pool * d_j / sum d` in floating point; the engine floor must match it
/// except within rounding distance of an integer.
fn refunds_match(guaranty: Coin, beta: Coin, openers: &[(Address, Density)], non_openers: &[Address]) -> Result<(), String> {
    let plan = compute_refund_plan(guaranty, beta, openers, non_openers);
    let pool = guaranty.0 * non_openers.len() as u64;
    if plan.forfeit_pool.0 != pool {
        return Err(format!("pool {} != {pool}", plan.forfeit_pool));
    }
    let eligible: Vec<&(Address, Density)> = openers
        .iter()
        .filter(|(_, d)| d.price * d.price >= beta.0 * beta.0 * d.size && d.price > 0)
        .collect();
    let total: f64 = eligible.iter().map(|(_, d)| d.approx()).sum();
    let mut bonuses = 0u64;
    for (a, _) in openers {
        let refund = plan.refunds[a];
        let bonus = refund.0.checked_sub(guaranty.0).ok_or("refund below guaranty")?;
        bonuses += bonus;
        let expected = match eligible.iter().find(|(b, _)| b == a) {
            Some((_, d)) => pool as f64 * d.approx() / total,
            None => 0.0,
        };
        let near = (expected - expected.round()).abs() < 1e-9;
        let ok = bonus == expected.floor() as u64
            || (near && (bonus == expected.round() as u64 || bonus + 1 == expected.round() as u64));
        if !ok {
            return Err(format!("bonus {bonus} vs expected {expected}"));
        }
    }
    for a in non_openers {
        if !plan.refunds[a].is_zero() {
            return Err("non-opener refunded".into());
        }
    }
    if bonuses + plan.remainder.0 != pool {
        return Err("pool not fully accounted".into());
    }
    let dust_ok = if eligible.is_empty() {
        plan.remainder.0 == pool
    } else {
        plan.remainder.0 < eligible.len() as u64
    };
    if !dust_ok {
        return Err(format!("remainder {} with {} eligible", plan.remainder, eligible.len()));
    }
    Ok(())
}

fn auction_fairness(corpus: &[(String, Scenario)]) -> Outcome {
    let mut problems = Vec::new();
    let (mut aborters, mut alterers, mut plans) = (0, 0, 0);
    for (name, s) in corpus {
        let out = run(s);
        for u in &s.users {
            let a = user_addr(u);
            let party = out.report.party(a).expect("user reported");
            match &u.strategy {
                UserStrategy::AbortAfterCommit => {
                    aborters += 1;
                    if party.balance_delta != -i128::from(s.guaranty) {
                        problems.push(format!("{name}: aborter delta {}", party.balance_delta));
                    }
                }
                UserStrategy::OpenAltered { bundle, price } => {
                    if *bundle == u.bundle && *price == u.price {
                        continue;
                    }
                    alterers += 1;
                    if out.session.state_of(a) != Some(ParticipantState::UserFailsToOpenCommitment) {
                        problems.push(format!("{name}: altered open accepted"));
                    }
                }
                _ => {}
            }
        }
        let Some(plan) = out.session.refund_plan() else {
            continue;
        };
        if plan.n_f == 0 {
            continue;
        }
        plans += 1;
        let supply = &out.session.config().provider.supply;
        let openers: Vec<(Address, Density)> = out
            .session
            .opened_bids()
            .iter()
            .map(|(a, b)| (*a, Candidate::new(*a, b, supply).unwrap().density))
            .collect();
        let non_openers: Vec<Address> = plan
            .refunds
            .keys()
            .filter(|a| !openers.iter().any(|(o, _)| o == *a))
            .copied()
            .collect();
        let fresh = compute_refund_plan(Coin(s.guaranty), plan.beta, &openers, &non_openers);
        if fresh != *plan {
            problems.push(format!("{name}: session plan differs from recomputation"));
        }
        if let Err(e) = refunds_match(Coin(s.guaranty), plan.beta, &openers, &non_openers) {
            problems.push(format!("{name}: {e}"));
        }
    }

    // Independent refund instances: every density pair up to 12 over sizes
    // 1..=4, with one to three forfeits.
    let mut instances = 0;
    let addrs = common::addresses(5);
    for n_f in 1..=3usize {
        for b1 in 0..=12u64 {
            for s1 in 1..=4u64 {
                for b2 in 0..=12u64 {
                    for s2 in 1..=4u64 {
                        for beta in 0..=3u64 {
                            instances += 1;
                            let openers = [
                                (addrs[0], Density { price: b1, size: s1 }),
                                (addrs[1], Density { price: b2, size: s2 }),
                            ];
                            if let Err(e) = refunds_match(Coin(5), Coin(beta), &openers, &addrs[2..2 + n_f]) {
                                problems.push(format!("b=({b1},{b2}) S=({s1},{s2}) beta={beta}: {e}"));
                            }
                        }
                    }
                }
            }
        }
    }
    // The corpus case with an altered opener pays 12 and 7 and keeps 1.
    let dust = common::corpus_scenario("adj_refund_pool_dust");
    let out = run(&dust);
    let dust_plan = out.session.refund_plan().unwrap();
    let shares: Vec<u64> = dust
        .users
        .iter()
        .take(2)
        .map(|u| dust_plan.refunds[&user_addr(u)].0)
        .collect();
    if shares != [12, 7] || dust_plan.remainder != Coin(1) {
        problems.push(format!("dust case refunds {shares:?} remainder {}", dust_plan.remainder));
    }

    outcome(
        problems.is_empty() && aborters > 0 && alterers > 0 && plans > 0,
        format!(
            "{aborters} aborters, {alterers} altered opens, {plans} corpus refund splits, {instances} refund instances; problems: {problems:?}"
        ),
    )
}

fn with_strategies(mut s: Scenario, provider: ProviderStrategy, user: UserStrategy) -> Scenario {
    s.provider.strategy = provider;
    for u in &mut s.users {
        u.strategy = user.clone();
    }
    s
}

fn adjudicated_fairness() -> Outcome {
    let bases = ["adj_honest_single_type", "adj_honest_two_types", "adj_twenty_users_nine_types"];
    let mut problems = Vec::new();
    let mut runs = 0;
    for base in bases {
        let base = common::corpus_scenario(base);
        let beta = base.provider.base_price;
        for strategy in [
            ProviderStrategy::NoDelivery,
            ProviderStrategy::InvalidGrant,
            ProviderStrategy::SilentInDispute,
            ProviderStrategy::RepairInDispute,
        ] {
            let s = with_strategies(base.clone(), strategy.clone(), UserStrategy::Honest);
            let out = run(&s);
            runs += 1;
            for u in &s.users {
                let a = user_addr(u);
                let party = out.report.party(a).unwrap();
                if party.value_delta < 0 {
                    problems.push(format!("{} {}: value delta {}", base.label(), strategy.name(), party.value_delta));
                }
                let compensated = strategy != ProviderStrategy::RepairInDispute;
                if compensated && out.session.outcome().is_some_and(|o| o.is_winner(a)) {
                    let size = weighted_size(&u.bundle, &s.provider.weights);
                    if party.balance_delta != i128::from(beta * size) {
                        problems.push(format!(
                            "{} {}: compensation {} != {}",
                            base.label(),
                            strategy.name(),
                            party.balance_delta,
                            beta * size
                        ));
                    }
                }
            }
        }

        let s = with_strategies(base.clone(), ProviderStrategy::Honest, UserStrategy::FalseDispute);
        let out = run(&s);
        runs += 1;
        let paid: u64 = out.session.outcome().unwrap().prices.values().map(|p| p.0).sum();
        let provider = out.report.party(provider_addr(&s)).unwrap();
        if provider.balance_delta != i128::from(paid) {
            problems.push(format!(
                "{} FalseDispute: provider delta {} != {paid}",
                base.label(),
                provider.balance_delta
            ));
        }
        if out.session.phase() != ContractPhase::Settled {
            problems.push(format!("{} FalseDispute: not settled", base.label()));
        }
    }
    outcome(problems.is_empty(), format!("{runs} runs; problems: {problems:?}"))
}

fn ladder_loop() -> Outcome {
    let mut problems = Vec::new();
    let mut cases = 0;
    let winner = Address::from_seed(b"ladder");
    for p in 1..=20u64 {
        for e in 1..=10u32 {
            let step = p.div_ceil(u64::from(e));
            for i in 0..=e {
                cases += 1;
                let (paid, back) = split(Coin(p), i, e);
                if paid.0 + back.0 != p {
                    problems.push(format!("P={p} e={e} i={i}: split does not sum"));
                }
                // Provider honest through segment i + 1, user stops confirming at i.
                let served = (i + 1).min(e);
                let rendered = u64::from(served) * p / u64::from(e);
                if rendered.saturating_sub(paid.0) > step {
                    problems.push(format!("P={p} e={e} i={i}: provider shortfall"));
                }
                // User honest, provider stops after i segments: pays for i only.
                let received = u64::from(i) * p / u64::from(e);
                if paid.0 > received {
                    problems.push(format!("P={p} e={e} i={i}: user shortfall"));
                }
                // The state machine stops at i confirmations and then ends.
                let mut st = LadderState::init(winner, Coin(p), e, 10 * u64::from(e), Time(100), None).unwrap();
                for k in 1..=i {
                    let at = st.deadline(k);
                    if st.confirm(k, at).is_err() {
                        problems.push(format!("P={p} e={e}: confirm {k} refused"));
                    }
                }
                let after = st.deadline((i + 1).min(e)) + 1;
                if !st.is_ended(after) || st.settlement_split() != (paid, back) {
                    problems.push(format!("P={p} e={e} i={i}: state machine disagrees"));
                }
            }
        }
        for tol in 1..=p {
            let e = u32::try_from(p.div_ceil(tol)).unwrap();
            for i in 0..=e {
                let (paid, _) = split(Coin(p), i, e);
                let rendered = u64::from((i + 1).min(e)) * p / u64::from(e);
                if rendered.saturating_sub(paid.0) > tol {
                    problems.push(format!("P={p} tol={tol} i={i}: shortfall above tolerance"));
                }
            }
            if LadderState::init(winner, Coin(p), e, 100, Time(0), Some(Coin(tol))).is_err() {
                problems.push(format!("P={p} tol={tol}: minimum e refused"));
            }
            if e > 1 && LadderState::init(winner, Coin(p), e - 1, 100, Time(0), Some(Coin(tol))).is_ok() {
                problems.push(format!("P={p} tol={tol}: too few segments accepted"));
            }
        }
    }
    outcome(problems.is_empty(), format!("{cases} (P, e, i) cases; problems: {problems:?}"))
}

fn determinism(corpus: &[(String, Scenario)]) -> Outcome {
    let differing: Vec<&str> = corpus
        .iter()
        .filter(|(_, s)| {
            let (a, b) = (run(s), run(s));
            a.trace_text() != b.trace_text() || a.report.render() != b.report.render()
        })
        .map(|(n, _)| n.as_str())
        .collect();
    outcome(
        differing.is_empty(),
        format!("{} scenarios run twice, differing: {differing:?}", corpus.len()),
    )
}

fn performance() -> Outcome {
    let s = common::corpus_scenario("adj_twenty_users_nine_types");
    let start = Instant::now();
    let out = run(&s);
    let elapsed = start.elapsed();
    let shape = s.users.len() == 20 && s.types() == 9;
    outcome(
        shape && elapsed < Duration::from_secs(1) && out.report.violations() == 0,
        format!("{} users, {} types, {:.3}s", s.users.len(), s.types(), elapsed.as_secs_f64()),
    )
}

fn main() -> ExitCode {
    let corpus = common::corpus();
    let mut failed = 0;
    let mut report = |n: u32, name: &str, o: Outcome| {
        println!(
            "criterion {n}: {name} ... {} ({})",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    };
    let (c1, c2) = grid();
    report(1, "exhaustive oracle equivalence", c1);
    report(2, "critical price is the win/lose threshold", c2);
    report(3, "conservation over the scenario corpus", conservation(&corpus));
    report(4, "auction-phase fairness", auction_fairness(&corpus));
    report(5, "adjudicated trade fairness", adjudicated_fairness());
    report(6, "ladder loss bound", ladder_loop());
    report(7, "deterministic traces", determinism(&corpus));
    report(8, "twenty users over nine types", performance());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
