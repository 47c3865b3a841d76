//! Acceptance suite. Each test prints one `[PASS]`/`[FAIL]` line per
//! criterion; run with `cargo test --test acceptance -- --nocapture
//! --test-threads=1` to see them in order.

mod support;

use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reentrancy_core::adversary::{enumerate_tapes, Adversary, ChoiceTape, GasMode, HavocPools};
use reentrancy_core::contracts::{
    self, AuctionVariant, Call, Environment, Isolated, Monitor, TokenConfig, TokenVariant,
};
use reentrancy_core::explorer::{
    explore, minimize, replay, run_transaction, CheckPoints, Invariant, Scenario, Schedule,
    TopCall, Transaction, Verdict,
};
use reentrancy_core::machine::{Address, Gas, Genesis, Msg, Nat, Outcome, WorldState, U256};

use support::{Flavor, Plain, Summary, Tok, World};

fn report(id: u32, what: &str, ok: bool, detail: impl std::fmt::Display) -> bool {
    let tag = if ok { "PASS" } else { "FAIL" };
    println!("[{tag}] criterion {id}: {what} ({detail})");
    ok
}

fn addr(i: usize) -> Address {
    Address::new(i).unwrap()
}

fn u(v: u64) -> U256 {
    U256::from(v)
}

fn pools(addrs: usize, amounts: &[U256], values: &[u64]) -> HavocPools {
    HavocPools::new(
        (0..addrs).map(addr).collect(),
        amounts.to_vec(),
        values.iter().map(|v| u(*v)).collect(),
    )
    .unwrap()
}

fn buggy_scenario(variant: TokenVariant) -> Scenario {
    let mut s = Scenario::token(variant, 6);
    s.prefix = vec![s.parse_prefix_call("mint:A:10").unwrap()];
    s
}

#[test]
fn criterion_1_guarded_soundness() {
    let mut s = Scenario::token(TokenVariant::Guarded, 4)
        .with_pools(pools(3, &[u(0), u(1), u(2), U256::MAX], &[0]));
    s.max_transactions = 3;
    s.check_points = CheckPoints {
        external_call_site: false,
        method_exit: true,
        tx_end: true,
    };
    s.check_revert_frame = true;
    s.dedup = true;
    let start = Instant::now();
    let v = explore(&s).unwrap();
    let took = start.elapsed();
    let ok = v.is_holds() && took < Duration::from_secs(10);
    assert!(report(1, "guarded token, 3 transactions, GInv + revert frame", ok, format!("{v:?} in {took:?}")));
}

#[test]
fn criterion_2_open_soundness() {
    let s = buggy_scenario(TokenVariant::Open);
    assert_eq!(s.check_points, CheckPoints::ALL);
    let start = Instant::now();
    let v = explore(&s).unwrap();
    let took = start.elapsed();
    let ok = v.is_holds() && took < Duration::from_secs(60);
    assert!(report(2, "open token, gas 6, all check points", ok, format!("{v:?} in {took:?}")));
}

#[test]
fn criterion_3_buggy_detection() {
    let s = buggy_scenario(TokenVariant::OpenBuggy);
    let v = explore(&s).unwrap();
    let found = v.counterexample().cloned();
    let violated = report(3, "open-buggy is Violated", found.is_some(), format!("{:?}", found.as_ref().map(|c| c.violation.invariant)));
    let Some(found) = found else { panic!("no violation") };
    let min = minimize(&s, &found).unwrap();
    let digest = &min.violation.state;
    let twenty = report(
        3,
        "minimized digest shows sum 20 vs total_minted 10",
        digest.sum_balances == Nat::from_u64(20) && digest.total_minted == Nat::from_u64(10),
        format!("sum {} vs total_minted {}", digest.sum_balances, digest.total_minted),
    );
    let nested = min
        .trace
        .iter()
        .filter(|e| e.depth > 0 && matches!(e.call, Call::Transfer { .. }))
        .count();
    let one_nested = report(3, "exactly one nested re-entrant transfer", nested == 1, format!("{nested} nested transfers"));
    let again = replay(&s, &min.schedule).unwrap();
    let identical = report(
        3,
        "replay is bit-identical",
        again.trace == min.trace && again.violation.as_ref() == Some(&min.violation),
        format!("{} events", again.trace.len()),
    );
    assert!(violated && twenty && one_nested && identical);
}

/// Independent checker for the machine-level properties.
struct Meter {
    tx_gas: u64,
    depth: u64,
    max_depth: u64,
    steps: u64,
    bad: Option<String>,
}

impl Monitor for Meter {
    fn enter(&mut self, _: &WorldState, _: &Call, _: Gas) {
        self.steps += 1;
        self.max_depth = self.max_depth.max(self.depth);
        self.depth += 1;
    }

    fn exit(&mut self, _: &WorldState, call: &Call, gas_in: Gas, gas_out: Gas, _: Outcome<()>) {
        self.depth -= 1;
        let (i, o) = (gas_in.remaining(), gas_out.remaining());
        if !(o == 0 || o < i) && self.bad.is_none() {
            self.bad = Some(format!("{call} returned {o} from {i}"));
        }
    }
}

#[test]
fn criterion_4_gas_and_termination() {
    let cases = 10_000u32;
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (
        0usize..3,
        any::<bool>(),
        proptest::collection::vec((0usize..10_000, 1u64..=8, proptest::collection::vec(0u64..12, 0..48)), 1..4),
    );
    let runs = std::cell::Cell::new(0u64);
    let outcome = runner.run(&strategy, |(variant, faithful, txs)| {
        let variant = [TokenVariant::Guarded, TokenVariant::Open, TokenVariant::OpenBuggy][variant];
        let mut s = Scenario::token(variant, 8);
        s.prefix = vec![s.parse_prefix_call("mint:A:10").unwrap()];
        s.check_points = CheckPoints::TX_END;
        if faithful {
            s.gas_mode = GasMode::ResetOnStop;
        }
        let mut world = s.initial_state().unwrap();
        for (pick, gas, tape) in txs {
            let calls = s.top_calls(&world);
            let call = TopCall::new(calls[pick % calls.len()].call, Gas(gas));
            let mut meter = Meter {
                tx_gas: gas,
                depth: 0,
                max_depth: 0,
                steps: 0,
                bad: None,
            };
            run_transaction(&s, &mut world, &call, ChoiceTape::new(tape), &mut meter).unwrap();
            prop_assert!(meter.bad.is_none(), "{:?}", meter.bad);
            prop_assert!(meter.max_depth <= meter.tx_gas, "depth {} > gas {}", meter.max_depth, meter.tx_gas);
            prop_assert!(meter.steps <= 10 * meter.tx_gas, "steps {} > 10 x {}", meter.steps, meter.tx_gas);
            runs.set(runs.get() + 1);
        }
        Ok(())
    });
    let ok = outcome.is_ok();
    assert!(report(4, "gas contract, depth <= gas, steps <= 10 x gas", ok, format!("{cases} schedules, {} transactions, {outcome:?}", runs.get())));
}

#[test]
fn criterion_5_revert_frame() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let token_cfgs = [
        TokenConfig::new(TokenVariant::Guarded),
        TokenConfig::new(TokenVariant::Open),
        TokenConfig::new(TokenVariant::OpenBuggy),
    ];
    let mut checked = 0;
    let mut failures = Vec::new();
    while checked < 1000 {
        let mut w = WorldState::new(&Genesis::new(3)).unwrap();
        let cfg = token_cfgs[rng.gen_range(0..3)];
        let env = &mut Isolated(());
        for _ in 0..rng.gen_range(0..6) {
            let to = addr(rng.gen_range(0..3));
            let amount = if rng.gen_bool(0.1) { U256::MAX } else { u(rng.gen_range(0..20)) };
            contracts::mint(&mut w, &cfg, to, amount, Msg::new(addr(0), U256::ZERO), Gas(3), env).unwrap();
            let bidder = addr(rng.gen_range(0..3));
            contracts::auction_bid(&mut w, Msg::new(bidder, u(rng.gen_range(0..30))), Gas(3), env).unwrap();
        }
        let before = w.clone();
        let ghosts = w.ghost_history().len();
        let ended = w.auction.ended_history.len();
        let a = addr(rng.gen_range(0..3));
        let b = addr(rng.gen_range(0..3));
        let gas = Gas(rng.gen_range(0..4));
        let (r, auction) = match rng.gen_range(0..6) {
            0 => (contracts::transfer(&mut w, &cfg, a, b, u(rng.gen_range(0..40)), Msg::new(b, U256::ZERO), gas, env), false),
            1 => (contracts::transfer(&mut w, &cfg, a, b, u(rng.gen_range(0..40)), Msg::new(a, u(rng.gen_range(0..3))), gas, env), false),
            2 => (contracts::mint(&mut w, &cfg, b, U256::MAX, Msg::new(a, U256::ZERO), gas, env), false),
            3 => (contracts::auction_bid(&mut w, Msg::new(a, u(rng.gen_range(0..2000))), gas, env), true),
            4 => (contracts::auction_end(&mut w, AuctionVariant::Correct, Msg::new(a, U256::ZERO), gas, env), true),
            _ => (contracts::auction_withdraw(&mut w, Msg::new(a, U256::ZERO), gas, env), true),
        };
        let (_, outcome) = r.unwrap();
        if outcome.is_success() {
            continue;
        }
        checked += 1;
        let diff = [
            ("accounts", before.accounts != w.accounts),
            ("token", before.token.storage() != w.token.storage()),
            ("total_minted", before.token.total_minted != w.token.total_minted),
            ("auction", before.auction.storage != w.auction.storage),
            ("ghost growth", w.ghost_history().len() != ghosts + 1),
            ("ended_history growth", w.auction.ended_history.len() != ended + usize::from(auction)),
        ];
        for (field, changed) in diff {
            if changed {
                failures.push(format!("{field} after a reverted call"));
            }
        }
    }
    assert!(report(5, "reverting calls leave non-ghost state untouched", failures.is_empty(), format!("{checked} reverts, {} diffs {:?}", failures.len(), failures.first())));
}

#[derive(Default)]
struct Shape {
    stack: Vec<Call>,
    mints_under_root: usize,
    mint_in_transfer: bool,
    transfer_in_transfer: bool,
}

impl Monitor for Shape {
    fn enter(&mut self, _: &WorldState, call: &Call, _: Gas) {
        let in_transfer = self.stack.iter().any(|c| matches!(c, Call::Transfer { .. }));
        match call {
            Call::Mint { .. } if in_transfer => self.mint_in_transfer = true,
            Call::Mint { .. } => self.mints_under_root += 1,
            Call::Transfer { .. } if in_transfer => self.transfer_in_transfer = true,
            _ => {}
        }
        self.stack.push(*call);
    }

    fn exit(&mut self, _: &WorldState, _: &Call, _: Gas, _: Gas, _: Outcome<()>) {
        self.stack.pop();
    }
}

#[test]
fn criterion_6_adversary_expressiveness() {
    let s = buggy_scenario(TokenVariant::Open);
    let base = s.initial_state().unwrap();
    let tapes = enumerate_tapes(&s.pools, 5, TokenConfig::new(TokenVariant::Open), &base).unwrap();
    let (mut seq, mut mint_nested, mut transfer_nested) = (false, false, false);
    for tape in &tapes {
        let mut w = base.clone();
        let mut shape = Shape::default();
        let mut adv = Adversary::new(tape.clone(), &mut shape, &s.pools, TokenConfig::new(TokenVariant::Open), GasMode::Strict);
        adv.external_call(&mut w, Gas(4)).unwrap();
        seq |= shape.mints_under_root >= 2;
        mint_nested |= shape.mint_in_transfer;
        transfer_nested |= shape.transfer_in_transfer;
    }
    let ok = seq && mint_nested && transfer_nested;
    assert!(report(6, "mint;mint, mint in transfer, transfer in transfer", ok, format!("{} tapes: {seq} {mint_nested} {transfer_nested}", tapes.len())));
}

#[test]
fn criterion_7_auction_monotone() {
    let p = pools(2, &[u(0)], &[0, 1, 2]);
    let mut s = Scenario::auction(AuctionVariant::Correct, 5).with_pools(p.clone());
    s.max_transactions = 4;
    s.dedup = true;
    let correct = explore(&s).unwrap();
    s.contract = reentrancy_core::explorer::ContractKind::Auction(AuctionVariant::ResettingEnd);
    let mutant = explore(&s).unwrap();
    let caught = mutant
        .counterexample()
        .is_some_and(|c| c.violation.invariant == Invariant::EndedMonotone);
    let ok = correct.is_holds() && caught;
    assert!(report(7, "auction ended-monotone holds, resetting mutant caught", ok, format!("{correct:?}; mutant caught: {caught}")));
}

fn plain(tx: &Transaction, amounts: &[U256]) -> (Plain, Vec<u64>) {
    let idx = |a: U256| amounts.iter().position(|x| *x == a).unwrap();
    let p = match tx.call.call {
        Call::Transfer { from, to, amount, msg } => (false, from.index(), to.index(), idx(amount), msg.sender.index(), tx.call.gas.remaining()),
        Call::Mint { to, amount, msg } => (true, 0, to.index(), idx(amount), msg.sender.index(), tx.call.gas.remaining()),
        _ => unreachable!(),
    };
    (p, tx.tape.steps().to_vec())
}

#[test]
fn criterion_8_oracle_equivalence() {
    let mut all = true;
    for (variant, flavor) in [
        (TokenVariant::Guarded, Flavor::Guarded),
        (TokenVariant::Open, Flavor::Open),
        (TokenVariant::OpenBuggy, Flavor::Buggy),
    ] {
        for txs in 1..=3 {
            let amounts = [u(0), u(1)];
            let mut s = Scenario::token(variant, 3).with_pools(pools(1, &amounts, &[0]));
            s.max_transactions = txs;
            let got = explore(&s).unwrap();
            let w = World {
                flavor,
                addrs: 1,
                amounts: vec![0, 1],
                gas_bound: 3,
                minter: 0,
            };
            let want = support::schedules(&w, &Tok::empty(), txs);
            let same = match (&got, &want) {
                (Verdict::Holds { schedules_explored, .. }, Summary::Clean(n)) => schedules_explored == n,
                (Verdict::Violated(c), Summary::Broken(path)) => {
                    c.schedule.txs.iter().map(|t| plain(t, &amounts)).collect::<Vec<_>>() == *path
                }
                _ => false,
            };
            all &= report(8, &format!("{} with {txs} transaction(s) matches the reference", variant.name()), same, format!("{got:?} vs {want:?}"));
        }
    }
    assert!(all);
}

#[test]
fn holds_replay_is_clean() {
    let s = buggy_scenario(TokenVariant::Open);
    let schedule = Schedule {
        txs: vec![Transaction {
            call: s.parse_prefix_call("transfer:A:B:5").unwrap(),
            tape: ChoiceTape::new(vec![0, 0, 1, 1, 0, 0]),
        }],
    };
    assert!(replay(&s, &schedule).unwrap().violation.is_none());
}
