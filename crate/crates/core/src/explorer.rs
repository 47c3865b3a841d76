//! Bounded exploration of transaction schedules and adversary tapes.
//!
//! A schedule is a sequence of top-level transactions, each a method call
//! with arguments drawn from the havoc pools, a gas budget in
//! `1..=gas_bound`, and the adversary tape it ran with. Exhaustive mode
//! walks every schedule up to `max_transactions` in lexicographic order and
//! stops at the first one that breaks an enabled check.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adversary::{
    Adversary, ChoiceSource, ChoiceTape, Decision, GasMode, HavocPools, Options, Recording,
    TapeEnumerator,
};
use crate::contracts::{
    self, ended_monotone, ginv_holds, sum_balances, AuctionStorage, AuctionVariant, Call,
    CallResult, Isolated, Method, Monitor, TokenConfig, TokenStorage, TokenVariant,
};
use crate::error::HarnessError;
use crate::machine::{Account, Address, AddressMap, Gas, Genesis, Msg, Nat, Outcome, WorldState, U256};

/// Step budget per transaction, as a multiple of its gas.
pub const STEP_BUDGET_FACTOR: u64 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ContractKind {
    Token(TokenConfig),
    Auction(AuctionVariant),
}

impl ContractKind {
    pub fn name(self) -> &'static str {
        match self {
            ContractKind::Token(_) => "token",
            ContractKind::Auction(_) => "auction",
        }
    }

    pub fn variant_name(self) -> &'static str {
        match self {
            ContractKind::Token(cfg) => cfg.variant.name(),
            ContractKind::Auction(v) => v.name(),
        }
    }
}

/// Where invariants are checked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CheckPoints {
    /// Right before a contract calls out.
    pub external_call_site: bool,
    /// On return from every public contract method, nested ones included.
    pub method_exit: bool,
    /// After each top-level transaction, once any revert has been applied.
    pub tx_end: bool,
}

impl CheckPoints {
    pub const ALL: CheckPoints = CheckPoints {
        external_call_site: true,
        method_exit: true,
        tx_end: true,
    };

    pub const TX_END: CheckPoints = CheckPoints {
        external_call_site: false,
        method_exit: false,
        tx_end: true,
    };

    pub const EXTERNAL_CALL_SITE: CheckPoints = CheckPoints {
        external_call_site: true,
        method_exit: false,
        tx_end: false,
    };

    pub fn is_empty(self) -> bool {
        !(self.external_call_site || self.method_exit || self.tx_end)
    }

    pub fn names(self) -> Vec<&'static str> {
        let mut v = Vec::new();
        for (on, name) in [
            (self.external_call_site, CheckPoint::ExternalCallSite.name()),
            (self.method_exit, CheckPoint::MethodExit.name()),
            (self.tx_end, CheckPoint::TxEnd.name()),
        ] {
            if on {
                v.push(name);
            }
        }
        v
    }

    pub fn parse<'a>(names: impl IntoIterator<Item = &'a str>) -> Result<Self, HarnessError> {
        let mut c = CheckPoints {
            external_call_site: false,
            method_exit: false,
            tx_end: false,
        };
        for name in names {
            match CheckPoint::from_name(name.trim()) {
                Some(CheckPoint::ExternalCallSite) => c.external_call_site = true,
                Some(CheckPoint::MethodExit) => c.method_exit = true,
                Some(CheckPoint::TxEnd) => c.tx_end = true,
                _ => return Err(HarnessError::Parse("unknown check point")),
            }
        }
        Ok(c)
    }
}

/// The place a violation was detected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CheckPoint {
    ExternalCallSite,
    MethodExit,
    TxEnd,
    /// Machine-level properties checked on every call regardless of
    /// configuration.
    Always,
}

impl CheckPoint {
    pub fn name(self) -> &'static str {
        match self {
            CheckPoint::ExternalCallSite => "external-call-site",
            CheckPoint::MethodExit => "method-exit",
            CheckPoint::TxEnd => "tx-end",
            CheckPoint::Always => "always",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "external-call-site" => CheckPoint::ExternalCallSite,
            "method-exit" => CheckPoint::MethodExit,
            "tx-end" => CheckPoint::TxEnd,
            "always" => CheckPoint::Always,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Invariant {
    /// `total_minted == sum(balances)`
    GlobalInvariant,
    /// `ended` never goes from true back to false.
    EndedMonotone,
    /// A reverted call left non-ghost state changed.
    RevertFrame,
    /// A call returned more gas than `gas_in - 1`.
    GasContract,
    /// Call nesting deeper than the transaction's gas.
    DepthBound,
    /// More calls than [`STEP_BUDGET_FACTOR`] times the transaction's gas.
    StepBudget,
}

impl Invariant {
    pub fn name(self) -> &'static str {
        match self {
            Invariant::GlobalInvariant => "GInv",
            Invariant::EndedMonotone => "ended-monotone",
            Invariant::RevertFrame => "revert-frame",
            Invariant::GasContract => "gas-contract",
            Invariant::DepthBound => "depth-bound",
            Invariant::StepBudget => "step-budget",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            Invariant::GlobalInvariant,
            Invariant::EndedMonotone,
            Invariant::RevertFrame,
            Invariant::GasContract,
            Invariant::DepthBound,
            Invariant::StepBudget,
        ]
        .into_iter()
        .find(|i| i.name() == name)
    }
}

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Exhaustive,
    Random { trials: u64, seed: u64 },
}

/// A top-level call with the gas its transaction carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TopCall {
    pub call: Call,
    pub gas: Gas,
}

impl TopCall {
    pub fn new(call: Call, gas: Gas) -> Self {
        TopCall { call, gas }
    }
}

impl fmt::Display for TopCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} gas={}", self.call, self.gas)
    }
}

/// Everything that defines an exploration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scenario {
    pub contract: ContractKind,
    pub pools: HavocPools,
    pub gas_bound: u64,
    /// Length of the explored transaction sequences.
    pub max_transactions: usize,
    /// Fixed setup transactions run (with a quiescent environment) before
    /// anything is explored.
    pub prefix: Vec<TopCall>,
    pub check_points: CheckPoints,
    pub mode: Mode,
    pub gas_mode: GasMode,
    /// Compare each reverted call's non-ghost state with its entry state.
    pub check_revert_frame: bool,
    /// Reuse results for states already explored with the same number of
    /// remaining transactions. Counts stay exact.
    pub dedup: bool,
    pub genesis: Genesis,
}

impl Scenario {
    pub fn token(variant: TokenVariant, gas_bound: u64) -> Self {
        Scenario::new(ContractKind::Token(TokenConfig::new(variant)), gas_bound)
    }

    pub fn auction(variant: AuctionVariant, gas_bound: u64) -> Self {
        Scenario::new(ContractKind::Auction(variant), gas_bound)
    }

    pub fn new(contract: ContractKind, gas_bound: u64) -> Self {
        Scenario {
            contract,
            pools: HavocPools::default(),
            gas_bound,
            max_transactions: 1,
            prefix: Vec::new(),
            check_points: CheckPoints::ALL,
            mode: Mode::Exhaustive,
            gas_mode: GasMode::Strict,
            check_revert_frame: false,
            dedup: false,
            genesis: Genesis::new(3),
        }
    }

    /// Sizes the world to cover every pool address.
    pub fn with_pools(mut self, pools: HavocPools) -> Self {
        self.genesis.pool_size = self.genesis.pool_size.max(pools.address_span());
        self.pools = pools;
        self
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.gas_bound == 0 {
            return Err(HarnessError::Config("gas bound must be at least 1"));
        }
        if self.max_transactions == 0 {
            return Err(HarnessError::Config("at least one transaction must be explored"));
        }
        if self.check_points.is_empty() {
            return Err(HarnessError::Config("at least one check point must be enabled"));
        }
        if self.pools.address_span() > self.genesis.pool_size {
            return Err(HarnessError::Config("havoc pool names an address outside the world"));
        }
        if let Mode::Random { trials: 0, .. } = self.mode {
            return Err(HarnessError::Config("random mode needs at least one trial"));
        }
        for tx in &self.prefix {
            self.check_call(&tx.call)?;
        }
        Ok(())
    }

    fn check_call(&self, call: &Call) -> Result<(), HarnessError> {
        let fits = matches!(
            (self.contract, call.method()),
            (ContractKind::Token(_), Method::Transfer | Method::Mint)
                | (ContractKind::Auction(_), Method::Bid | Method::Withdraw | Method::End)
        );
        if !fits {
            return Err(HarnessError::ScheduleMismatch("method does not belong to the contract"));
        }
        if call.addresses().iter().any(|a| a.index() >= self.genesis.pool_size) {
            return Err(HarnessError::ScheduleMismatch("address outside the world"));
        }
        Ok(())
    }

    /// Genesis world with the prefix applied.
    pub fn initial_state(&self) -> Result<WorldState, HarnessError> {
        let mut state = WorldState::new(&self.genesis)?;
        for tx in &self.prefix {
            let mut probe = Probe::new(self, tx.gas, false);
            let outcome = run_transaction(self, &mut state, tx, ChoiceTape::default(), &mut probe)?;
            if outcome.is_revert() {
                return Err(HarnessError::Config("a prefix transaction reverted"));
            }
        }
        Ok(state)
    }

    /// Parses a setup call such as `mint:A:10`, `transfer:A:B:5`, `bid:B:2`,
    /// `withdraw:B` or `end:A`. Token calls are sent by the minter (mint) or
    /// by `from` (transfer); every call carries zero value unless a value is
    /// given for `bid`. The call gets `gas_bound` gas.
    pub fn parse_prefix_call(&self, text: &str) -> Result<TopCall, HarnessError> {
        let parts: Vec<&str> = text.split(':').map(str::trim).collect();
        let zero = U256::ZERO;
        let call = match (self.contract, parts.as_slice()) {
            (ContractKind::Token(_), ["mint", to, amount]) => Call::Mint {
                to: to.parse()?,
                amount: amount.parse()?,
                msg: Msg::new(self.genesis.token_deployer.sender, zero),
            },
            (ContractKind::Token(_), ["transfer", from, to, amount]) => {
                let from: Address = from.parse()?;
                Call::Transfer {
                    from,
                    to: to.parse()?,
                    amount: amount.parse()?,
                    msg: Msg::new(from, zero),
                }
            }
            (ContractKind::Auction(_), ["bid", sender, value]) => Call::Bid {
                msg: Msg::new(sender.parse()?, value.parse()?),
            },
            (ContractKind::Auction(_), ["withdraw", sender]) => Call::Withdraw {
                msg: Msg::new(sender.parse()?, zero),
            },
            (ContractKind::Auction(_), ["end", sender]) => Call::End {
                msg: Msg::new(sender.parse()?, zero),
            },
            _ => return Err(HarnessError::Parse("unrecognized prefix call")),
        };
        let tx = TopCall::new(call, Gas(self.gas_bound));
        self.check_call(&tx.call)?;
        Ok(tx)
    }

    /// Every top-level call available in `state`, in exploration order.
    /// Closed-token calls are only issued when their preconditions hold.
    pub fn top_calls(&self, state: &WorldState) -> Vec<TopCall> {
        let p = &self.pools;
        let mut calls = Vec::new();
        let mut push = |call: Call| {
            for g in 1..=self.gas_bound {
                let gas = Gas(g);
                if let ContractKind::Token(cfg) = self.contract {
                    if cfg.variant == TokenVariant::Closed && !closed_precondition(state, &cfg, &call, gas) {
                        continue;
                    }
                }
                calls.push(TopCall::new(call, gas));
            }
        };
        let msgs = || {
            p.addresses()
                .iter()
                .flat_map(move |s| p.values().iter().map(move |v| Msg::new(*s, *v)))
        };
        match self.contract {
            ContractKind::Token(_) => {
                for &from in p.addresses() {
                    for &to in p.addresses() {
                        for &amount in p.amounts() {
                            for msg in msgs() {
                                push(Call::Transfer {
                                    from,
                                    to,
                                    amount,
                                    msg,
                                });
                            }
                        }
                    }
                }
                for &to in p.addresses() {
                    for &amount in p.amounts() {
                        for msg in msgs() {
                            push(Call::Mint { to, amount, msg });
                        }
                    }
                }
            }
            ContractKind::Auction(_) => {
                for msg in msgs() {
                    push(Call::Bid { msg });
                }
                for msg in msgs() {
                    push(Call::Withdraw { msg });
                }
                for msg in msgs() {
                    push(Call::End { msg });
                }
            }
        }
        calls
    }
}

fn closed_precondition(state: &WorldState, cfg: &TokenConfig, call: &Call, gas: Gas) -> bool {
    match *call {
        Call::Transfer {
            from,
            to,
            amount,
            msg,
        } => contracts::transfer_guard(&state.token, cfg, from, to, amount, msg, gas),
        Call::Mint { to, amount, msg } => contracts::mint_guard(&state.token, to, amount, msg, gas),
        _ => false,
    }
}

/// One explored transaction.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Transaction {
    pub call: TopCall,
    pub tape: ChoiceTape,
}

/// The explored part of a run: the transactions after the scenario prefix.
/// Ordering is the exploration order.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Schedule {
    pub txs: Vec<Transaction>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CallEvent {
    /// 0 for the top-level call.
    pub depth: u32,
    pub call: Call,
    pub gas_in: Gas,
    pub gas_out: Gas,
    pub outcome: Outcome<()>,
}

/// Observable contract state at the moment a violation was detected.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateDigest {
    pub balances: Vec<(Address, U256)>,
    pub sum_balances: Nat,
    pub total_minted: Nat,
    pub ended_history: Vec<bool>,
}

impl StateDigest {
    pub fn of(state: &WorldState) -> Self {
        StateDigest {
            balances: state.token.balances.iter().map(|(a, v)| (a, *v)).collect(),
            sum_balances: sum_balances(&state.token.balances),
            total_minted: state.token.total_minted.clone(),
            ended_history: state.auction.ended_history.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub invariant: Invariant,
    pub at: CheckPoint,
    pub state: StateDigest,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Counterexample {
    pub schedule: Schedule,
    /// Calls of every transaction in the schedule, in execution order.
    pub trace: Vec<CallEvent>,
    pub violation: Violation,
}

impl Counterexample {
    /// Tape of the transaction that broke the invariant.
    pub fn tape(&self) -> Option<&ChoiceTape> {
        self.schedule.txs.last().map(|t| &t.tape)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Holds { schedules_explored: u64, max_depth: u32 },
    Violated(Box<Counterexample>),
}

impl Verdict {
    pub fn is_holds(&self) -> bool {
        matches!(self, Verdict::Holds { .. })
    }

    pub fn counterexample(&self) -> Option<&Counterexample> {
        match self {
            Verdict::Violated(c) => Some(c),
            Verdict::Holds { .. } => None,
        }
    }
}

/// Monitor that enforces the enabled checks and optionally records a
/// trace.
pub struct Probe {
    kind: ContractKind,
    checks: CheckPoints,
    revert_frame: bool,
    depth_limit: u64,
    step_budget: u64,
    frames: Vec<Frame>,
    pub steps: u64,
    pub max_depth: u32,
    pub trace: Option<Vec<CallEvent>>,
    pub violation: Option<Violation>,
}

struct Frame {
    trace_index: usize,
    entry: Option<(AddressMap<Account>, TokenStorage, AuctionStorage)>,
}

impl Probe {
    pub fn new(scenario: &Scenario, tx_gas: Gas, trace: bool) -> Self {
        Probe {
            kind: scenario.contract,
            checks: scenario.check_points,
            revert_frame: scenario.check_revert_frame,
            depth_limit: tx_gas.remaining(),
            step_budget: STEP_BUDGET_FACTOR * tx_gas.remaining(),
            frames: Vec::new(),
            steps: 0,
            max_depth: 0,
            trace: trace.then(Vec::new),
            violation: None,
        }
    }

    fn flag(&mut self, state: &WorldState, invariant: Invariant, at: CheckPoint) {
        if self.violation.is_none() {
            self.violation = Some(Violation {
                invariant,
                at,
                state: StateDigest::of(state),
            });
        }
    }

    fn check_contract(&mut self, state: &WorldState, at: CheckPoint) {
        match self.kind {
            ContractKind::Token(_) => {
                if !ginv_holds(&state.token) {
                    self.flag(state, Invariant::GlobalInvariant, at);
                }
            }
            ContractKind::Auction(_) => {
                if !ended_monotone(&state.auction.ended_history) {
                    self.flag(state, Invariant::EndedMonotone, at);
                }
            }
        }
    }

}

impl Monitor for Probe {
    fn enter(&mut self, state: &WorldState, call: &Call, gas: Gas) {
        let depth = self.frames.len() as u32;
        self.steps += 1;
        self.max_depth = self.max_depth.max(depth);
        if u64::from(depth) > self.depth_limit {
            self.flag(state, Invariant::DepthBound, CheckPoint::Always);
        }
        if self.steps > self.step_budget {
            self.flag(state, Invariant::StepBudget, CheckPoint::Always);
        }
        let trace_index = match &mut self.trace {
            Some(t) => {
                t.push(CallEvent {
                    depth,
                    call: *call,
                    gas_in: gas,
                    gas_out: Gas(0),
                    outcome: Outcome::Success(()),
                });
                t.len() - 1
            }
            None => 0,
        };
        let entry = (self.revert_frame && *call != Call::ExternalCall).then(|| {
            (
                state.accounts.clone(),
                state.token.storage(),
                state.auction.storage.clone(),
            )
        });
        self.frames.push(Frame { trace_index, entry });
    }

    fn exit(&mut self, state: &WorldState, call: &Call, gas_in: Gas, gas_out: Gas, outcome: Outcome<()>) {
        let frame = self.frames.pop().expect("exit without enter");
        if let Some(t) = &mut self.trace {
            let ev = &mut t[frame.trace_index];
            ev.gas_out = gas_out;
            ev.outcome = outcome;
        }
        if !gas_out.returned_within(gas_in) {
            self.flag(state, Invariant::GasContract, CheckPoint::Always);
        }
        if let (Some((accounts, token, auction)), Outcome::Revert) = (frame.entry, outcome) {
            if accounts != state.accounts || token != state.token.storage() || auction != state.auction.storage {
                self.flag(state, Invariant::RevertFrame, CheckPoint::Always);
            }
        }
        if self.checks.method_exit && *call != Call::ExternalCall {
            self.check_contract(state, CheckPoint::MethodExit);
        }
    }

    fn external_call_site(&mut self, state: &WorldState) {
        if self.checks.external_call_site {
            self.check_contract(state, CheckPoint::ExternalCallSite);
        }
    }

    fn transaction_end(&mut self, state: &WorldState) {
        if self.checks.tx_end {
            self.check_contract(state, CheckPoint::TxEnd);
        }
    }
}

impl<M: Monitor + ?Sized> Monitor for &mut M {
    fn enter(&mut self, state: &WorldState, call: &Call, gas: Gas) {
        (**self).enter(state, call, gas)
    }

    fn exit(&mut self, state: &WorldState, call: &Call, gas_in: Gas, gas_out: Gas, r: Outcome<()>) {
        (**self).exit(state, call, gas_in, gas_out, r)
    }

    fn external_call_site(&mut self, state: &WorldState) {
        (**self).external_call_site(state)
    }

    fn transaction_end(&mut self, state: &WorldState) {
        (**self).transaction_end(state)
    }
}

/// Executes one top-level transaction. A top-level revert rolls the world
/// back to the transaction's entry state.
pub fn run_transaction<S: ChoiceSource, M: Monitor>(
    scenario: &Scenario,
    state: &mut WorldState,
    tx: &TopCall,
    source: S,
    monitor: &mut M,
) -> Result<Outcome<()>, HarnessError> {
    let snap = state.snapshot();
    let (_, outcome) = dispatch(scenario, state, tx, source, &mut *monitor)?;
    if outcome.is_revert() {
        state.restore(&snap)?;
    }
    state.commit(snap)?;
    monitor.transaction_end(state);
    Ok(outcome)
}

fn dispatch<S: ChoiceSource, M: Monitor>(
    scenario: &Scenario,
    state: &mut WorldState,
    tx: &TopCall,
    source: S,
    probe: M,
) -> CallResult {
    let gas = tx.gas;
    match (scenario.contract, tx.call) {
        (ContractKind::Token(cfg), call) if cfg.variant.makes_external_calls() => {
            let mut env = Adversary::new(source, probe, &scenario.pools, cfg, scenario.gas_mode);
            token_call(state, &cfg, call, gas, &mut env)
        }
        (ContractKind::Token(cfg), call) => token_call(state, &cfg, call, gas, &mut Isolated(probe)),
        (ContractKind::Auction(variant), call) => {
            let env = &mut Isolated(probe);
            match call {
                Call::Bid { msg } => contracts::auction_bid(state, msg, gas, env),
                Call::Withdraw { msg } => contracts::auction_withdraw(state, msg, gas, env),
                Call::End { msg } => contracts::auction_end(state, variant, msg, gas, env),
                _ => Err(HarnessError::ScheduleMismatch("method does not belong to the contract")),
            }
        }
    }
}

fn token_call<E: contracts::Environment>(
    state: &mut WorldState,
    cfg: &TokenConfig,
    call: Call,
    gas: Gas,
    env: &mut E,
) -> CallResult {
    match call {
        Call::Transfer {
            from,
            to,
            amount,
            msg,
        } => contracts::transfer(state, cfg, from, to, amount, msg, gas, env),
        Call::Mint { to, amount, msg } => contracts::mint(state, cfg, to, amount, msg, gas, env),
        _ => Err(HarnessError::ScheduleMismatch("method does not belong to the contract")),
    }
}

/// Result of re-executing a schedule.
#[derive(Clone, Debug)]
pub struct Replay {
    pub trace: Vec<CallEvent>,
    pub state: WorldState,
    pub violation: Option<Violation>,
    /// Each transaction's tape reduced to the decisions actually read.
    pub consumed: Schedule,
}

/// Deterministically re-executes `schedule` on top of the scenario prefix.
/// Stops after the first transaction that breaks a check.
pub fn replay(scenario: &Scenario, schedule: &Schedule) -> Result<Replay, HarnessError> {
    scenario.validate()?;
    let mut state = scenario.initial_state()?;
    let mut trace = Vec::new();
    let mut consumed = Schedule::default();
    let mut violation = None;
    for tx in &schedule.txs {
        scenario.check_call(&tx.call.call)?;
        if tx.call.gas.remaining() == 0 {
            return Err(HarnessError::ScheduleMismatch("transaction without gas"));
        }
        if let ContractKind::Token(cfg) = scenario.contract {
            if cfg.variant == TokenVariant::Closed && !closed_precondition(&state, &cfg, &tx.call.call, tx.call.gas) {
                return Err(HarnessError::ScheduleMismatch("closed call issued without its precondition"));
            }
        }
        let mut probe = Probe::new(scenario, tx.call.gas, true);
        let mut source = Recording::new(tx.tape.clone());
        run_transaction(scenario, &mut state, &tx.call, &mut source, &mut probe)?;
        if source.inner.unread() > 0 {
            return Err(HarnessError::ScheduleMismatch("tape has entries the transaction never read"));
        }
        let read = tx.tape.len().min(source.log.len());
        consumed.txs.push(Transaction {
            call: tx.call,
            tape: ChoiceTape::new(tx.tape.steps()[..read].to_vec()),
        });
        trace.extend(probe.trace.take().unwrap_or_default());
        if probe.violation.is_some() {
            violation = probe.violation;
            break;
        }
    }
    Ok(Replay {
        trace,
        state,
        violation,
        consumed,
    })
}

fn counterexample(scenario: &Scenario, schedule: Schedule) -> Result<Counterexample, HarnessError> {
    let r = replay(scenario, &schedule)?;
    let violation = r
        .violation
        .ok_or(HarnessError::ScheduleMismatch("violation did not reproduce"))?;
    Ok(Counterexample {
        schedule: r.consumed,
        trace: r.trace,
        violation,
    })
}

/// Key for count-preserving memoization: everything future behavior and
/// checks can depend on.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
struct StateKey {
    accounts: AddressMap<Account>,
    token: TokenStorage,
    total_minted: Nat,
    auction: AuctionStorage,
    ever_ended: bool,
}

impl StateKey {
    fn of(state: &WorldState) -> Self {
        StateKey {
            accounts: state.accounts.clone(),
            token: state.token.storage(),
            total_minted: state.token.total_minted.clone(),
            auction: state.auction.storage.clone(),
            ever_ended: state.auction.ended_history.contains(&true),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Summary {
    count: u64,
    max_depth: u32,
}

enum Stop {
    Found(Schedule),
    Harness(HarnessError),
}

impl From<HarnessError> for Stop {
    fn from(e: HarnessError) -> Self {
        Stop::Harness(e)
    }
}

/// A slice of the first transaction's call space: calls whose index is
/// congruent to `worker` modulo `workers`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Partition {
    pub worker: usize,
    pub workers: usize,
}

impl Partition {
    pub const WHOLE: Partition = Partition {
        worker: 0,
        workers: 1,
    };

    fn owns(self, index: usize) -> bool {
        index % self.workers == self.worker
    }
}

struct Search<'s> {
    scenario: &'s Scenario,
    partition: Partition,
    memo: BTreeMap<(usize, StateKey), Summary>,
}

impl Search<'_> {
    fn dfs(&mut self, state: &WorldState, remaining: usize, path: &mut Schedule) -> Result<Summary, Stop> {
        let first = path.txs.is_empty();
        let key = (self.scenario.dedup && !first).then(|| (remaining, StateKey::of(state)));
        if let Some(hit) = key.as_ref().and_then(|k| self.memo.get(k)) {
            return Ok(*hit);
        }
        let calls = self.scenario.top_calls(state);
        let mut summary = Summary::default();
        if calls.is_empty() {
            summary.count = 1;
        }
        for (index, call) in calls.iter().enumerate() {
            if first && !self.partition.owns(index) {
                continue;
            }
            let mut walker = TapeEnumerator::new();
            loop {
                let mut world = state.clone();
                let mut probe = Probe::new(self.scenario, call.gas, false);
                run_transaction(self.scenario, &mut world, call, walker.guide(), &mut probe)?;
                let tx = Transaction {
                    call: *call,
                    tape: walker.tape(),
                };
                summary.max_depth = summary.max_depth.max(probe.max_depth);
                path.txs.push(tx);
                if probe.violation.is_some() {
                    return Err(Stop::Found(path.clone()));
                }
                if remaining > 1 {
                    let sub = self.dfs(&world, remaining - 1, path)?;
                    summary.count += sub.count;
                    summary.max_depth = summary.max_depth.max(sub.max_depth);
                } else {
                    summary.count += 1;
                }
                path.txs.pop();
                if !walker.advance() {
                    break;
                }
            }
        }
        if let Some(k) = key {
            self.memo.insert(k, summary);
        }
        Ok(summary)
    }
}

/// Runs the scenario's exploration mode over the whole schedule space.
pub fn explore(scenario: &Scenario) -> Result<Verdict, HarnessError> {
    explore_partition(scenario, Partition::WHOLE)
}

/// Explores only the part of the space owned by `partition`. Random mode
/// splits its trials instead.
pub fn explore_partition(scenario: &Scenario, partition: Partition) -> Result<Verdict, HarnessError> {
    scenario.validate()?;
    if partition.workers == 0 || partition.worker >= partition.workers {
        return Err(HarnessError::Config("invalid worker partition"));
    }
    let base = scenario.initial_state()?;
    match scenario.mode {
        Mode::Exhaustive => {
            let mut search = Search {
                scenario,
                partition,
                memo: BTreeMap::new(),
            };
            match search.dfs(&base, scenario.max_transactions, &mut Schedule::default()) {
                Ok(s) => Ok(Verdict::Holds {
                    schedules_explored: s.count,
                    max_depth: s.max_depth,
                }),
                Err(Stop::Found(schedule)) => Ok(Verdict::Violated(Box::new(counterexample(scenario, schedule)?))),
                Err(Stop::Harness(e)) => Err(e),
            }
        }
        Mode::Random { trials, seed } => explore_random(scenario, &base, trials, seed, partition),
    }
}

/// Uniform choice among each decision's options.
struct RandomSource<'r>(&'r mut ChaCha8Rng);

impl ChoiceSource for RandomSource<'_> {
    fn choose(&mut self, _decision: Decision, options: Options) -> u64 {
        options.value(self.0.gen_range(0..options.len()))
    }
}

fn explore_random(
    scenario: &Scenario,
    base: &WorldState,
    trials: u64,
    seed: u64,
    partition: Partition,
) -> Result<Verdict, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut explored = 0;
    let mut max_depth = 0;
    for trial in 0..trials {
        // every worker draws the same stream and keeps only its own trials
        let mut world = base.clone();
        let mut schedule = Schedule::default();
        let mut found = false;
        for _ in 0..scenario.max_transactions {
            let calls = scenario.top_calls(&world);
            if calls.is_empty() {
                break;
            }
            let call = calls[rng.gen_range(0..calls.len())];
            let mut source = Recording::new(RandomSource(&mut rng));
            let mut probe = Probe::new(scenario, call.gas, false);
            run_transaction(scenario, &mut world, &call, &mut source, &mut probe)?;
            max_depth = max_depth.max(probe.max_depth);
            schedule.txs.push(Transaction {
                call,
                tape: source.tape(),
            });
            if probe.violation.is_some() {
                found = true;
                break;
            }
        }
        if !partition.owns(trial as usize) {
            continue;
        }
        explored += 1;
        if found {
            return Ok(Verdict::Violated(Box::new(counterexample(scenario, schedule)?)));
        }
    }
    Ok(Verdict::Holds {
        schedules_explored: explored,
        max_depth,
    })
}

/// Combines per-partition verdicts: the least violating schedule wins,
/// otherwise counts add up.
pub fn merge(verdicts: impl IntoIterator<Item = Verdict>) -> Verdict {
    let mut count = 0;
    let mut depth = 0;
    let mut best: Option<Box<Counterexample>> = None;
    for v in verdicts {
        match v {
            Verdict::Holds {
                schedules_explored,
                max_depth,
            } => {
                count += schedules_explored;
                depth = depth.max(max_depth);
            }
            Verdict::Violated(c) => {
                if best.as_ref().is_none_or(|b| c.schedule < b.schedule) {
                    best = Some(c);
                }
            }
        }
    }
    match best {
        Some(c) => Verdict::Violated(c),
        None => Verdict::Holds {
            schedules_explored: count,
            max_depth: depth,
        },
    }
}

/// Size of a counterexample for shrinking: largest gas, then number of
/// transactions, total tape length, tapes, and calls.
fn shrink_key(s: &Schedule) -> (u64, usize, usize, Vec<&[u64]>, Vec<&Call>) {
    (
        s.txs.iter().map(|t| t.call.gas.remaining()).max().unwrap_or(0),
        s.txs.len(),
        s.txs.iter().map(|t| t.tape.len()).sum(),
        s.txs.iter().map(|t| t.tape.steps()).collect(),
        s.txs.iter().map(|t| &t.call.call).collect(),
    )
}

fn shrink_candidates(scenario: &Scenario, s: &Schedule) -> Vec<Schedule> {
    let mut out = Vec::new();
    let n = s.txs.len();
    // drop earlier transactions
    for i in 0..n.saturating_sub(1) {
        let mut c = s.clone();
        c.txs.remove(i);
        out.push(c);
    }
    for i in 0..n {
        let tx = &s.txs[i];
        // lower gas
        for g in 1..tx.call.gas.remaining() {
            let mut c = s.clone();
            c.txs[i].call.gas = Gas(g);
            out.push(c);
        }
        // drop tape suffixes
        for len in 0..tx.tape.len() {
            let mut c = s.clone();
            c.txs[i].tape = ChoiceTape::new(tx.tape.steps()[..len].to_vec());
            out.push(c);
        }
        // shrink tape entries toward 0/1
        for (pos, &v) in tx.tape.steps().iter().enumerate() {
            for smaller in [0, 1, v.saturating_sub(1)] {
                if smaller < v {
                    let mut steps = tx.tape.steps().to_vec();
                    steps[pos] = smaller;
                    let mut c = s.clone();
                    c.txs[i].tape = ChoiceTape::new(steps);
                    out.push(c);
                }
            }
        }
        // shrink call arguments toward the front of their pools
        for call in smaller_calls(&scenario.pools, &tx.call.call) {
            let mut c = s.clone();
            c.txs[i].call.call = call;
            out.push(c);
        }
    }
    out
}

fn smaller_calls(pools: &HavocPools, call: &Call) -> Vec<Call> {
    fn below<T: Copy + Ord>(pool: &[T], v: T) -> impl Iterator<Item = T> + '_ {
        pool.iter().copied().filter(move |p| *p < v).take(2)
    }
    let mut out = Vec::new();
    let msgs = |msg: Msg| -> Vec<Msg> {
        below(pools.addresses(), msg.sender)
            .map(|s| Msg { sender: s, ..msg })
            .chain(below(pools.values(), msg.value).map(|v| Msg { value: v, ..msg }))
            .collect()
    };
    match *call {
        Call::Transfer {
            from,
            to,
            amount,
            msg,
        } => {
            for f in below(pools.addresses(), from) {
                // keep the sender tied to the source when it was
                let m = if msg.sender == from { Msg { sender: f, ..msg } } else { msg };
                out.push(Call::Transfer { from: f, to, amount, msg: m });
            }
            for t in below(pools.addresses(), to) {
                out.push(Call::Transfer { from, to: t, amount, msg });
            }
            for a in below(pools.amounts(), amount) {
                out.push(Call::Transfer { from, to, amount: a, msg });
            }
            for m in msgs(msg) {
                out.push(Call::Transfer { from, to, amount, msg: m });
            }
        }
        Call::Mint { to, amount, msg } => {
            for t in below(pools.addresses(), to) {
                out.push(Call::Mint { to: t, amount, msg });
            }
            for a in below(pools.amounts(), amount) {
                out.push(Call::Mint { to, amount: a, msg });
            }
            for m in msgs(msg) {
                out.push(Call::Mint { to, amount, msg: m });
            }
        }
        Call::Bid { msg } => out.extend(msgs(msg).into_iter().map(|m| Call::Bid { msg: m })),
        Call::Withdraw { msg } => out.extend(msgs(msg).into_iter().map(|m| Call::Withdraw { msg: m })),
        Call::End { msg } => out.extend(msgs(msg).into_iter().map(|m| Call::End { msg: m })),
        Call::ExternalCall => {}
    }
    out
}

/// Greedily shrinks a counterexample. A candidate is accepted only if it
/// replays to a violation of the same invariant and is strictly smaller;
/// the result is a fixpoint of the shrink steps.
pub fn minimize(scenario: &Scenario, found: &Counterexample) -> Result<Counterexample, HarnessError> {
    let mut best = found.clone();
    'outer: loop {
        for cand in shrink_candidates(scenario, &best.schedule) {
            if shrink_key(&cand) >= shrink_key(&best.schedule) {
                continue;
            }
            let Ok(r) = replay(scenario, &cand) else {
                continue;
            };
            if let Some(v) = r.violation {
                if v.invariant == best.violation.invariant && shrink_key(&r.consumed) < shrink_key(&best.schedule) {
                    best = Counterexample {
                        schedule: r.consumed,
                        trace: r.trace,
                        violation: v,
                    };
                    continue 'outer;
                }
            }
        }
        return Ok(best);
    }
}
