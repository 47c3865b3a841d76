//! A deterministic, replayable model of an arbitrary external callee.
//!
//! Every nondeterministic decision the callee makes is read from a
//! [`ChoiceSource`]. A [`ChoiceTape`] replays a fixed decision sequence; a
//! [`TapeEnumerator`] walks every decision sequence the executor can reach,
//! in lexicographic order.
//!
//! Decisions are naturals decoded by modulus: re-entry kind is `k % 3`
//! (0 transfer, 1 mint, 2 none), booleans are odd/even, arguments index
//! into the [`HavocPools`].

use alloc::vec::Vec;
use core::fmt;

use crate::contracts::{self, Call, CallResult, Environment, Monitor, TokenConfig};
use crate::error::HarnessError;
use crate::machine::{Address, Gas, Msg, Outcome, WorldState, U256};

/// What a single tape entry decides.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Decision {
    /// `k`: re-enter `transfer` (0), `mint` (1) or nothing (2).
    Reentry,
    /// `b`: make a further external call.
    Continue,
    /// Havoced status of a call that ends without recursing.
    Status,
    From,
    To,
    Amount,
    Sender,
    Value,
}

impl Decision {
    /// Value assumed when the tape is exhausted: no re-entry, no further
    /// call, success, first pool element.
    pub fn quiescent(self) -> u64 {
        match self {
            Decision::Reentry => 2,
            _ => 0,
        }
    }
}

/// Raw values the enumerator branches over at a decision point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Options {
    /// `0..n`
    Range(u64),
    /// A single forced value.
    Only(u64),
}

impl Options {
    pub fn len(self) -> u64 {
        match self {
            Options::Range(n) => n,
            Options::Only(_) => 1,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }

    pub fn value(self, index: u64) -> u64 {
        match self {
            Options::Range(_) => index,
            Options::Only(v) => v,
        }
    }
}

pub trait ChoiceSource {
    fn choose(&mut self, decision: Decision, options: Options) -> u64;
}

impl<S: ChoiceSource + ?Sized> ChoiceSource for &mut S {
    fn choose(&mut self, decision: Decision, options: Options) -> u64 {
        (**self).choose(decision, options)
    }
}

/// A finite decision sequence with a read cursor. Reading past the end
/// yields [`Decision::quiescent`].
#[derive(Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChoiceTape {
    steps: Vec<u64>,
    cursor: usize,
}

impl ChoiceTape {
    pub fn new(steps: Vec<u64>) -> Self {
        ChoiceTape { steps, cursor: 0 }
    }

    pub fn steps(&self) -> &[u64] {
        &self.steps
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Entries not yet read.
    pub fn unread(&self) -> usize {
        self.steps.len().saturating_sub(self.cursor)
    }

    pub fn rewind(&mut self) {
        self.cursor = 0;
    }
}

impl fmt::Debug for ChoiceTape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.steps).finish()
    }
}

impl ChoiceSource for ChoiceTape {
    fn choose(&mut self, decision: Decision, _options: Options) -> u64 {
        let v = self
            .steps
            .get(self.cursor)
            .copied()
            .unwrap_or_else(|| decision.quiescent());
        self.cursor += 1;
        v
    }
}

/// One decision as it was actually taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Choice {
    pub decision: Decision,
    pub options: Options,
    pub value: u64,
}

/// Wraps a source and logs every decision it hands out.
#[derive(Debug)]
pub struct Recording<S> {
    pub inner: S,
    pub log: Vec<Choice>,
}

impl<S> Recording<S> {
    pub fn new(inner: S) -> Self {
        Recording {
            inner,
            log: Vec::new(),
        }
    }

    /// The decisions taken, as a tape that replays to the same behavior.
    pub fn tape(&self) -> ChoiceTape {
        ChoiceTape::new(self.log.iter().map(|c| c.value).collect())
    }
}

impl<S: ChoiceSource> ChoiceSource for Recording<S> {
    fn choose(&mut self, decision: Decision, options: Options) -> u64 {
        let value = self.inner.choose(decision, options);
        self.log.push(Choice {
            decision,
            options,
            value,
        });
        value
    }
}

/// Depth-first walk over every decision sequence an executor reads.
///
/// Use [`TapeEnumerator::guide`] as the choice source for one run, then
/// [`TapeEnumerator::advance`] to move to the next sequence. Unvisited
/// decision points default to their first option, so the tree is expanded
/// lazily along the branches the run actually takes.
#[derive(Debug, Default)]
pub struct TapeEnumerator {
    path: Vec<(u64, Options)>,
    cursor: usize,
}

impl TapeEnumerator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn guide(&mut self) -> &mut Self {
        self.cursor = 0;
        self
    }

    /// Tape of the run just guided.
    pub fn tape(&self) -> ChoiceTape {
        ChoiceTape::new(
            self.path[..self.cursor]
                .iter()
                .map(|(i, o)| o.value(*i))
                .collect(),
        )
    }

    /// Moves to the lexicographically next unexplored sequence.
    pub fn advance(&mut self) -> bool {
        self.path.truncate(self.cursor);
        while let Some((index, options)) = self.path.last_mut() {
            if *index + 1 < options.len() {
                *index += 1;
                return true;
            }
            self.path.pop();
        }
        false
    }
}

impl ChoiceSource for TapeEnumerator {
    fn choose(&mut self, _decision: Decision, options: Options) -> u64 {
        let pos = self.cursor;
        self.cursor += 1;
        match self.path.get(pos) {
            Some(&(index, recorded)) => {
                debug_assert_eq!(recorded, options, "executor is not deterministic");
                options.value(index)
            }
            None => {
                self.path.push((0, options));
                options.value(0)
            }
        }
    }
}

/// Finite value domains the adversary havocs arguments from. Each pool is
/// kept sorted and free of duplicates.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HavocPools {
    addresses: Vec<Address>,
    amounts: Vec<U256>,
    values: Vec<U256>,
}

impl HavocPools {
    pub fn new(
        mut addresses: Vec<Address>,
        mut amounts: Vec<U256>,
        mut values: Vec<U256>,
    ) -> Result<Self, HarnessError> {
        for v in [&mut amounts, &mut values] {
            v.sort_unstable();
            v.dedup();
        }
        addresses.sort_unstable();
        addresses.dedup();
        if addresses.is_empty() || amounts.is_empty() || values.is_empty() {
            return Err(HarnessError::Config("havoc pools must be nonempty"));
        }
        Ok(HavocPools {
            addresses,
            amounts,
            values,
        })
    }

    /// The first `n` addresses, amounts `{0, 1, 2, MAX}`, values `{0}`.
    pub fn with_addresses(n: usize) -> Result<Self, HarnessError> {
        let addresses = (0..n).map(Address::new).collect::<Result<Vec<_>, _>>()?;
        HavocPools::new(
            addresses,
            alloc::vec![U256::ZERO, U256::from(1), U256::from(2), U256::MAX],
            alloc::vec![U256::ZERO],
        )
    }

    pub fn addresses(&self) -> &[Address] {
        &self.addresses
    }

    pub fn amounts(&self) -> &[U256] {
        &self.amounts
    }

    pub fn values(&self) -> &[U256] {
        &self.values
    }

    /// Largest address index plus one.
    pub fn address_span(&self) -> usize {
        self.addresses.last().map_or(0, |a| a.index() + 1)
    }
}

impl Default for HavocPools {
    fn default() -> Self {
        HavocPools::with_addresses(3).expect("default pools are valid")
    }
}

/// How an external call that does not recurse reports its remaining gas.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum GasMode {
    /// Whatever is left after any re-entrant call, minus one unit.
    #[default]
    Strict,
    /// `gas - 1` computed from the gas the external call was given, ignoring
    /// what a re-entrant call consumed.
    ResetOnStop,
}

/// The external world seen by an open token: re-enters `transfer`/`mint`
/// with havoced arguments as dictated by its choice source. It can only
/// touch contract state through those entry points.
pub struct Adversary<'p, S, M> {
    pub source: S,
    pub monitor: M,
    pools: &'p HavocPools,
    token: TokenConfig,
    gas_mode: GasMode,
}

impl<'p, S: ChoiceSource, M: Monitor> Adversary<'p, S, M> {
    pub fn new(source: S, monitor: M, pools: &'p HavocPools, token: TokenConfig, gas_mode: GasMode) -> Self {
        Adversary {
            source,
            monitor,
            pools,
            token,
            gas_mode,
        }
    }

    fn pick<T: Copy>(&mut self, decision: Decision, pool: &[T]) -> T {
        let n = pool.len() as u64;
        let raw = self.source.choose(decision, Options::Range(n));
        pool[(raw % n) as usize]
    }

    fn havoc_msg(&mut self) -> Msg {
        let pools = self.pools;
        let sender = self.pick(Decision::Sender, pools.addresses());
        let value = self.pick(Decision::Value, pools.values());
        Msg::new(sender, value)
    }
}

impl<S, M: Monitor> Monitor for Adversary<'_, S, M> {
    fn enter(&mut self, state: &WorldState, call: &Call, gas: Gas) {
        self.monitor.enter(state, call, gas)
    }

    fn exit(&mut self, state: &WorldState, call: &Call, gas_in: Gas, gas_out: Gas, r: Outcome<()>) {
        self.monitor.exit(state, call, gas_in, gas_out, r)
    }

    fn external_call_site(&mut self, state: &WorldState) {
        self.monitor.external_call_site(state)
    }

    fn transaction_end(&mut self, state: &WorldState) {
        self.monitor.transaction_end(state)
    }
}

impl<S: ChoiceSource, M: Monitor> Environment for Adversary<'_, S, M> {
    fn external_call(&mut self, state: &mut WorldState, gas: Gas) -> CallResult {
        self.monitor.enter(state, &Call::ExternalCall, gas);
        let pools = self.pools;
        let token = self.token;
        let mut g = gas;
        let has_gas = |g: Gas| g.remaining() >= 1;

        let k_options = if has_gas(g) {
            Options::Range(3)
        } else {
            Options::Only(2)
        };
        match self.source.choose(Decision::Reentry, k_options) % 3 {
            0 if has_gas(g) => {
                let from = self.pick(Decision::From, pools.addresses());
                let to = self.pick(Decision::To, pools.addresses());
                let amount = self.pick(Decision::Amount, pools.amounts());
                let msg = self.havoc_msg();
                (g, _) = contracts::transfer(state, &token, from, to, amount, msg, g.saturating_dec(), self)?;
            }
            1 if has_gas(g) => {
                let to = self.pick(Decision::To, pools.addresses());
                let amount = self.pick(Decision::Amount, pools.amounts());
                let msg = self.havoc_msg();
                (g, _) = contracts::mint(state, &token, to, amount, msg, g.saturating_dec(), self)?;
            }
            _ => {}
        }

        let b_options = if has_gas(g) {
            Options::Range(2)
        } else {
            Options::Only(0)
        };
        let again = self.source.choose(Decision::Continue, b_options) % 2 == 1;
        let r;
        if again && has_gas(g) {
            (g, r) = self.external_call(state, g.saturating_dec())?;
        } else {
            g = match self.gas_mode {
                GasMode::Strict => g.saturating_dec(),
                GasMode::ResetOnStop => gas.saturating_dec(),
            };
            r = if self.source.choose(Decision::Status, Options::Only(0)) % 2 == 1 {
                Outcome::Revert
            } else {
                Outcome::Success(())
            };
        }
        self.monitor.exit(state, &Call::ExternalCall, gas, g, r);
        Ok((g, r))
    }
}

/// Every tape an external call made with `gas_bound - 1` units (that is,
/// from inside a method that was given `gas_bound`) can read from `state`.
pub fn enumerate_tapes(
    pools: &HavocPools,
    gas_bound: u64,
    token: TokenConfig,
    state: &WorldState,
) -> Result<Vec<ChoiceTape>, HarnessError> {
    if gas_bound == 0 {
        return Err(HarnessError::Config("gas bound must be at least 1"));
    }
    let mut tapes = Vec::new();
    let mut walker = TapeEnumerator::new();
    loop {
        let mut world = state.clone();
        let mut adversary = Adversary::new(walker.guide(), (), pools, token, GasMode::Strict);
        adversary.external_call(&mut world, Gas(gas_bound - 1))?;
        tapes.push(walker.tape());
        if !walker.advance() {
            return Ok(tapes);
        }
    }
}
