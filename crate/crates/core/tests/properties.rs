mod support;

use proptest::prelude::*;

use reentrancy_core::adversary::{enumerate_tapes, ChoiceTape, GasMode, HavocPools};
use reentrancy_core::contracts::{self, AuctionVariant, Call, Isolated, TokenConfig, TokenVariant};
use reentrancy_core::explorer::{
    explore, explore_partition, merge, minimize, replay, CheckPoint, CheckPoints, Invariant,
    Mode, Partition, Scenario, Schedule, Transaction, Verdict,
};
use reentrancy_core::machine::{Address, Gas, Genesis, Msg, WorldState, U256};

use support::{Flavor, Tok, World};

fn addr(i: usize) -> Address {
    Address::new(i).unwrap()
}

fn pools(addrs: usize, amounts: &[u64]) -> HavocPools {
    HavocPools::new(
        (0..addrs).map(addr).collect(),
        amounts.iter().map(|a| U256::from(*a)).collect(),
        vec![U256::ZERO],
    )
    .unwrap()
}

fn buggy(check_points: CheckPoints) -> Scenario {
    let mut s = Scenario::token(TokenVariant::OpenBuggy, 6);
    s.prefix = vec![s.parse_prefix_call("mint:A:10").unwrap()];
    s.check_points = check_points;
    s
}

#[test]
fn tape_count_single_address_gas_two() {
    let w = WorldState::new(&Genesis::new(1)).unwrap();
    let tapes = enumerate_tapes(&pools(1, &[0]), 2, TokenConfig::new(TokenVariant::Open), &w).unwrap();
    assert_eq!(tapes.len(), 4);
}

#[test]
fn enumerated_tapes_match_brute_force_tree() {
    for (addrs, amounts, minted) in [(1, vec![0], 0u64), (2, vec![0, 1], 0), (2, vec![0, 1, 2], 3)] {
        for variant in [TokenVariant::Open, TokenVariant::OpenBuggy] {
            let cfg = TokenConfig::new(variant);
            let mut state = WorldState::new(&Genesis::new(addrs)).unwrap();
            let mut tok = Tok::empty();
            if minted > 0 {
                contracts::mint(&mut state, &cfg, addr(0), U256::from(minted), Msg::new(addr(0), U256::ZERO), Gas(1), &mut Isolated(()))
                    .unwrap();
                tok.bal.insert(0, minted as u128);
                tok.minted = minted as u128;
            }
            let flavor = if variant == TokenVariant::Open { Flavor::Open } else { Flavor::Buggy };
            let w = World {
                flavor,
                addrs,
                amounts: amounts.iter().map(|a| *a as u128).collect(),
                gas_bound: 0,
                minter: 0,
            };
            for gas_bound in 1..=4 {
                let got: Vec<Vec<u64>> = enumerate_tapes(&pools(addrs, &amounts), gas_bound, cfg, &state)
                    .unwrap()
                    .iter()
                    .map(|t| t.steps().to_vec())
                    .collect();
                let want: Vec<Vec<u64>> = w.external(&tok, gas_bound - 1).into_iter().map(|l| l.tape).collect();
                assert_eq!(got, want, "{addrs} addresses, {amounts:?}, gas {gas_bound}");
            }
        }
    }
}

#[test]
fn check_point_discipline() {
    let early = explore(&buggy(CheckPoints::EXTERNAL_CALL_SITE)).unwrap();
    let c = early.counterexample().expect("flagged at the call site");
    assert_eq!(c.violation.at, CheckPoint::ExternalCallSite);
    assert_eq!(c.violation.invariant, Invariant::GlobalInvariant);

    let late = explore(&buggy(CheckPoints::TX_END)).unwrap();
    let c = late.counterexample().expect("flagged at transaction end");
    assert_eq!(c.violation.at, CheckPoint::TxEnd);
    assert_eq!(c.violation.invariant, Invariant::GlobalInvariant);
}

#[test]
fn buggy_counterexample_replays_to_same_violation() {
    let s = buggy(CheckPoints::ALL);
    let v = explore(&s).unwrap();
    let c = v.counterexample().unwrap();
    let r = replay(&s, &c.schedule).unwrap();
    assert_eq!(r.violation.as_ref(), Some(&c.violation));
    assert_eq!(r.trace, c.trace);
}

#[test]
fn tx_end_counterexample_has_one_nested_transfer() {
    let mut s = buggy(CheckPoints::TX_END);
    s.pools = pools(3, &[0, 1, 2, 10]);
    let v = explore(&s).unwrap();
    let min = minimize(&s, v.counterexample().unwrap()).unwrap();
    let nested = min.trace.iter().filter(|e| e.depth > 0 && matches!(e.call, Call::Transfer { .. })).count();
    assert_eq!(nested, 1);
    assert_eq!(min.violation.state.total_minted.to_string(), "10");
}

#[test]
fn strict_and_faithful_gas_visit_the_same_calls() {
    let mut s = buggy(CheckPoints::ALL);
    let c = explore(&s).unwrap().counterexample().unwrap().clone();
    s.gas_mode = GasMode::ResetOnStop;
    let other = replay(&s, &c.schedule).unwrap();
    let calls = |t: &[reentrancy_core::explorer::CallEvent]| t.iter().map(|e| (e.depth, e.call, e.gas_in)).collect::<Vec<_>>();
    assert_eq!(calls(&other.trace), calls(&c.trace));
}

#[test]
fn worker_count_does_not_change_the_result() {
    for s in [
        {
            let mut s = Scenario::token(TokenVariant::Open, 4);
            s.prefix = vec![s.parse_prefix_call("mint:A:2").unwrap()];
            s.max_transactions = 2;
            s.pools = pools(2, &[0, 1]);
            s
        },
        buggy(CheckPoints::ALL),
        Scenario::auction(AuctionVariant::ResettingEnd, 3),
    ] {
        let whole = explore(&s).unwrap();
        for workers in 2..=4 {
            let parts = (0..workers).map(|worker| explore_partition(&s, Partition { worker, workers }).unwrap());
            assert_eq!(merge(parts), whole, "{workers} workers");
        }
    }
}

#[test]
fn random_mode_splits_trials_across_workers() {
    let mut s = buggy(CheckPoints::ALL);
    s.contract = reentrancy_core::explorer::ContractKind::Token(TokenConfig::new(TokenVariant::Open));
    s.max_transactions = 2;
    s.mode = Mode::Random { trials: 200, seed: 3 };
    let whole = explore(&s).unwrap();
    let parts = (0..3).map(|worker| explore_partition(&s, Partition { worker, workers: 3 }).unwrap());
    assert_eq!(merge(parts), whole);
}

#[test]
fn minimizing_a_minimal_counterexample_is_a_fixpoint() {
    let s = buggy(CheckPoints::ALL);
    let c = explore(&s).unwrap().counterexample().unwrap().clone();
    let once = minimize(&s, &c).unwrap();
    let twice = minimize(&s, &once).unwrap();
    assert_eq!(once, twice);
}

#[test]
fn auction_mutant_is_caught_with_history() {
    let s = Scenario::auction(AuctionVariant::ResettingEnd, 3);
    let mut s = s.with_pools(pools(2, &[0]));
    s.max_transactions = 3;
    let c = explore(&s).unwrap().counterexample().unwrap().clone();
    assert_eq!(c.violation.invariant, Invariant::EndedMonotone);
    let h = &c.violation.state.ended_history;
    assert!(h.windows(2).any(|w| w[0] && !w[1]), "{h:?}");
}

fn tx_strategy() -> impl Strategy<Value = (usize, u64, Vec<u64>)> {
    (0usize..1000, 1u64..=6, proptest::collection::vec(0u64..6, 0..24))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn explored_holds_never_reaches_bad_state(txs in proptest::collection::vec(tx_strategy(), 1..4)) {
        let mut s = Scenario::token(TokenVariant::Open, 6);
        s.prefix = vec![s.parse_prefix_call("mint:A:10").unwrap()];
        let mut world = s.initial_state().unwrap();
        let mut schedule = Schedule::default();
        for (pick, gas, tape) in txs {
            let calls = s.top_calls(&world);
            let call = reentrancy_core::explorer::TopCall::new(calls[pick % calls.len()].call, Gas(gas));
            let mut src = reentrancy_core::adversary::Recording::new(ChoiceTape::new(tape));
            let mut probe = reentrancy_core::explorer::Probe::new(&s, call.gas, false);
            reentrancy_core::explorer::run_transaction(&s, &mut world, &call, &mut src, &mut probe).unwrap();
            prop_assert!(probe.violation.is_none(), "{:?}", probe.violation);
            let read = src.log.len().min(src.inner.len());
            schedule.txs.push(Transaction { call, tape: ChoiceTape::new(src.inner.steps()[..read].to_vec()) });
        }
        let r = replay(&s, &schedule).unwrap();
        prop_assert!(r.violation.is_none());
        prop_assert!(r.state.same_storage(&world));
        prop_assert_eq!(r.state.token.total_minted, world.token.total_minted);
    }

    #[test]
    fn snapshot_restore_round_trips(mints in proptest::collection::vec((0usize..3, 0u64..50), 0..6), later in proptest::collection::vec((0usize..3, 0usize..3, 0u64..50), 0..6)) {
        let cfg = TokenConfig::new(TokenVariant::Guarded);
        let env = &mut Isolated(());
        let mut w = WorldState::new(&Genesis::new(3)).unwrap();
        for (to, a) in mints {
            contracts::mint(&mut w, &cfg, addr(to), U256::from(a), Msg::new(addr(0), U256::ZERO), Gas(2), env).unwrap();
        }
        let before = w.clone();
        let snap = w.snapshot();
        for (f, t, a) in later {
            contracts::transfer(&mut w, &cfg, addr(f), addr(t), U256::from(a), Msg::new(addr(f), U256::ZERO), Gas(2), env).unwrap();
            contracts::auction_bid(&mut w, Msg::new(addr(t), U256::from(a)), Gas(2), env).unwrap();
        }
        w.restore(&snap).unwrap();
        w.commit(snap).unwrap();
        prop_assert!(w.same_storage(&before));
    }
}

#[test]
fn verdict_of_guarded_single_transaction_counts_every_call() {
    let s = Scenario::token(TokenVariant::Guarded, 4);
    let v = explore(&s).unwrap();
    // 3 x 3 x 4 transfers plus 3 x 4 mints, each with 3 senders and 4 gas values
    assert_eq!(v, Verdict::Holds { schedules_explored: (36 + 12) * 3 * 4, max_depth: 0 });
}
