//! Shared instance grids for the integration tests.

#![allow(dead_code)]

use fairvm::{Address, Bid, Coin, ProviderSupply};

pub fn addresses(n: usize) -> Vec<Address> {
    let mut a: Vec<Address> = (0..n)
        .map(|i| Address::from_seed(format!("grid-{i}").as_bytes()))
        .collect();
    a.sort();
    a
}

/// Every (bundle, bid) pair with entries in `0..=2` (not all zero) and bids
/// in `1..=6`.
pub fn options(m: usize) -> Vec<(Vec<u64>, u64)> {
    let mut bundles: Vec<Vec<u64>> = vec![vec![]];
    for _ in 0..m {
        bundles = bundles
            .into_iter()
            .flat_map(|b| {
                (0..=2).map(move |k| {
                    let mut b = b.clone();
                    b.push(k);
                    b
                })
            })
            .collect();
    }
    bundles.retain(|b| b.iter().any(|&k| k > 0));
    bundles
        .into_iter()
        .flat_map(|b| (1..=6).map(move |p| (b.clone(), p)))
        .collect()
}

fn visit_tuples(k: usize, n: usize, min: usize, ordered: bool, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    if cur.len() == n {
        f(cur);
        return;
    }
    let start = if ordered { 0 } else { min };
    for i in start..k {
        cur.push(i);
        visit_tuples(k, n, i, ordered, cur, f);
        cur.pop();
    }
}

/// Counts of instances per grid block, in visiting order.
#[derive(Default, Debug)]
pub struct GridStats {
    pub instances: u64,
}

/// Calls `f` on every grid instance.
///
/// m = 1: capacities 1..=3, ordered bid tuples for n <= 5.
/// m = 2: capacity pairs in 1..=3, ordered tuples for n <= 3 and multisets
/// for n = 4, 5 (addresses assigned in sorted order); for n = 5 only
/// capacity pairs with c1 <= c2, the swapped pair being the same instance
/// with the VM types relabelled.
pub fn for_each_instance(mut f: impl FnMut(&[(Address, Bid)], &ProviderSupply)) -> GridStats {
    let mut stats = GridStats::default();
    let addrs = addresses(5);
    for m in 1..=2usize {
        let opts = options(m);
        let caps: Vec<Vec<u64>> = if m == 1 {
            (1..=3).map(|c| vec![c]).collect()
        } else {
            (1..=3).flat_map(|a| (1..=3).map(move |b| vec![a, b])).collect()
        };
        for cap in &caps {
            let supply = ProviderSupply::new(cap.clone(), vec![1; m]).unwrap();
            for n in 0..=5usize {
                let ordered = m == 1 || n <= 3;
                if m == 2 && n == 5 && cap[0] > cap[1] {
                    continue;
                }
                let mut cur = Vec::with_capacity(n);
                let mut bids: Vec<(Address, Bid)> = Vec::with_capacity(n);
                visit_tuples(opts.len(), n, 0, ordered, &mut cur, &mut |idx| {
                    bids.clear();
                    for (pos, &o) in idx.iter().enumerate() {
                        let (bundle, price) = &opts[o];
                        bids.push((addrs[pos], Bid::new(bundle.clone(), Coin(*price))));
                    }
                    stats.instances += 1;
                    f(&bids, &supply);
                });
            }
        }
    }
    stats
}

pub fn corpus_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// Every shipped scenario, sorted by file name.
pub fn corpus() -> Vec<(String, fairvm::scenario::Scenario)> {
    let mut files: Vec<_> = std::fs::read_dir(corpus_dir())
        .expect("scenario directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let s = fairvm::scenario::load_scenario(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            (p.file_stem().unwrap().to_string_lossy().into_owned(), s)
        })
        .collect()
}

pub fn corpus_scenario(name: &str) -> fairvm::scenario::Scenario {
    fairvm::scenario::load_scenario(&corpus_dir().join(format!("{name}.json"))).unwrap()
}

pub fn addr(seed: &str) -> Address {
    Address::from_seed(seed.as_bytes())
}
