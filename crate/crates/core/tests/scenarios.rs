mod common;

use fairvm::ledger::{parse_trace, EventKind};
use fairvm::scenario::fairness::{check_fairness, deviation_gains};
use fairvm::scenario::{parse_scenario, run, FairnessVerdict, UserStrategy};

#[test]
fn corpus_has_no_violations() {
    for (name, s) in common::corpus() {
        let out = run(&s);
        assert!(out.stepwise_conservation, "{name}");
        assert_eq!(out.report.violations(), 0, "{name}:\n{}", out.report.render());
        for p in &out.report.parties {
            let expected = if p.honest {
                FairnessVerdict::Protected
            } else {
                FairnessVerdict::Penalized
            };
            assert_eq!(p.verdict, expected, "{name} {}", p.label);
        }
    }
}

#[test]
fn deviating_never_pays_beyond_one_segment() {
    for (name, s) in common::corpus() {
        for g in deviation_gains(&s) {
            let ladder_user = s.ladder.is_some()
                && matches!(
                    s.users.iter().find(|u| u.seed == g.label).map(|u| &u.strategy),
                    Some(UserStrategy::NeverConfirm | UserStrategy::StopAfterSegment(_))
                );
            let allowance = if ladder_user {
                let u = s.users.iter().find(|u| u.seed == g.label).unwrap();
                let out = run(&s);
                let addr = common::addr(&u.seed);
                out.service
                    .iter()
                    .find(|r| r.winner == addr)
                    .map_or(0, |r| i128::from(r.price.0.div_ceil(u64::from(r.segments))))
            } else {
                0
            };
            assert!(
                g.gain() <= allowance,
                "{name}: {} playing {} gains {} (allowed {allowance})",
                g.label,
                g.strategy,
                g.gain()
            );
        }
    }
}

#[test]
fn trace_text_replays_to_the_same_report() {
    for (name, s) in common::corpus() {
        let out = run(&s);
        let parsed = parse_trace(&out.trace_text()).unwrap();
        assert_eq!(parsed, out.trace, "{name}");
        assert_eq!(check_fairness(&parsed, &s, &out.service), out.report, "{name}");
    }
}

#[test]
fn redirected_payout_is_caught() {
    let s = common::corpus_scenario("adj_provider_no_delivery");
    let out = run(&s);
    let mut trace = out.trace.clone();
    let provider = common::addr(&s.provider.seed);
    let victim = trace
        .iter_mut()
        .find(|e| e.kind == EventKind::EscrowOut && e.to != provider && !e.amount.is_zero())
        .expect("a payout to a user");
    victim.to = provider;
    let report = check_fairness(&trace, &s, &out.service);
    assert!(report.violations() > 0, "{}", report.render());
}

#[test]
fn inflated_payout_breaks_conservation() {
    let s = common::corpus_scenario("adj_honest_two_types");
    let out = run(&s);
    let mut trace = out.trace.clone();
    let e = trace
        .iter_mut()
        .rev()
        .find(|e| e.kind == EventKind::EscrowOut && !e.amount.is_zero())
        .unwrap();
    e.amount += fairvm::Coin(1);
    let report = check_fairness(&trace, &s, &out.service);
    assert!(!report.conservation);
    assert!(report.violations() > 0);
}

#[test]
fn malformed_scenarios_name_the_field() {
    let base = std::fs::read_to_string(common::corpus_dir().join("adj_honest_two_types.json")).unwrap();
    let edit = |f: &dyn Fn(&mut serde_json::Value)| {
        let mut v: serde_json::Value = serde_json::from_str(&base).unwrap();
        f(&mut v);
        parse_scenario(&v.to_string()).unwrap_err()
    };
    assert_eq!(edit(&|v| v["deadlines"]["tau4"] = 10.into()).field, "deadlines.tau4");
    assert_eq!(edit(&|v| v["users"][1]["bundle"] = serde_json::json!([1])).field, "users[1].bundle");
    assert_eq!(edit(&|v| v["users"][2]["seed"] = "alice".into()).field, "users[2].seed");
    assert_eq!(edit(&|v| v["provider"]["weights"] = serde_json::json!([1])).field, "provider.weights");
    assert_eq!(edit(&|v| v["provider"]["balance"] = 1.into()).field, "provider.balance");
    assert_eq!(
        edit(&|v| v["provider"]["strategy"] = serde_json::json!({"ShutdownAfterSegment": 1})).field,
        "provider.strategy"
    );
    assert_eq!(edit(&|v| v["mystery"] = 1.into()).field, "json");
    assert!(fairvm::scenario::load_scenario(std::path::Path::new("/nonexistent.json")).is_err());
}

#[test]
fn ladder_terms_are_checked() {
    let base = std::fs::read_to_string(common::corpus_dir().join("ladder_honest.json")).unwrap();
    let edit = |f: &dyn Fn(&mut serde_json::Value)| {
        let mut v: serde_json::Value = serde_json::from_str(&base).unwrap();
        f(&mut v);
        parse_scenario(&v.to_string()).map(|_| ()).map_err(|e| e.field)
    };
    assert_eq!(edit(&|v| v["ladder"]["segments"] = 0.into()), Err("ladder.segments".into()));
    assert_eq!(edit(&|v| v["ladder"]["usage_total"] = 100_000.into()), Err("ladder.usage_total".into()));
    assert_eq!(edit(&|v| v["ladder"]["tolerate"] = 1.into()), Err("ladder.segments".into()));
    assert_eq!(edit(&|v| v["adjudicated"] = true.into()), Err("ladder".into()));
}
