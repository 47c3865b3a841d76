//! Example contracts: a token in closed, guarded and open (re-entrant)
//! variants, and a minimal open auction carrying a history invariant.
//!
//! Every public entry point runs inside a revert frame: non-ghost state is
//! snapshotted on entry and restored if the call returns
//! [`Outcome::Revert`]. Ghost data (`total_minted`, `ended_history`, the
//! world's observation log) is never rolled back.

use alloc::vec::Vec;
use core::fmt;

use crate::error::HarnessError;
use crate::machine::{
    Address, AddressMap, Gas, Msg, Nat, Observation, Outcome, WorldState, U256,
};

pub type CallResult = Result<(Gas, Outcome<()>), HarnessError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Transfer,
    Mint,
    ExternalCall,
    Bid,
    Withdraw,
    End,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Transfer => "transfer",
            Method::Mint => "mint",
            Method::ExternalCall => "externalCall",
            Method::Bid => "bid",
            Method::Withdraw => "withdraw",
            Method::End => "auctionEnd",
        }
    }

    pub fn from_name(name: &str) -> Option<Method> {
        Some(match name {
            "transfer" => Method::Transfer,
            "mint" => Method::Mint,
            "externalCall" => Method::ExternalCall,
            "bid" => Method::Bid,
            "withdraw" => Method::Withdraw,
            "auctionEnd" | "end" => Method::End,
            _ => return None,
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A concrete method invocation with all arguments bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Call {
    Transfer {
        from: Address,
        to: Address,
        amount: U256,
        msg: Msg,
    },
    Mint {
        to: Address,
        amount: U256,
        msg: Msg,
    },
    ExternalCall,
    Bid {
        msg: Msg,
    },
    Withdraw {
        msg: Msg,
    },
    End {
        msg: Msg,
    },
}

impl Call {
    pub fn method(&self) -> Method {
        match self {
            Call::Transfer { .. } => Method::Transfer,
            Call::Mint { .. } => Method::Mint,
            Call::ExternalCall => Method::ExternalCall,
            Call::Bid { .. } => Method::Bid,
            Call::Withdraw { .. } => Method::Withdraw,
            Call::End { .. } => Method::End,
        }
    }

    pub fn msg(&self) -> Option<Msg> {
        match *self {
            Call::Transfer { msg, .. }
            | Call::Mint { msg, .. }
            | Call::Bid { msg }
            | Call::Withdraw { msg }
            | Call::End { msg } => Some(msg),
            Call::ExternalCall => None,
        }
    }

    /// Addresses mentioned by the call, for pool-membership checks.
    pub fn addresses(&self) -> Vec<Address> {
        match *self {
            Call::Transfer { from, to, msg, .. } => alloc::vec![from, to, msg.sender],
            Call::Mint { to, msg, .. } => alloc::vec![to, msg.sender],
            Call::Bid { msg } | Call::Withdraw { msg } | Call::End { msg } => {
                alloc::vec![msg.sender]
            }
            Call::ExternalCall => Vec::new(),
        }
    }
}

impl fmt::Display for Call {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Call::Transfer {
                from,
                to,
                amount,
                msg,
            } => write!(
                f,
                "transfer({from}, {to}, {amount:?}, msg=({}, {:?}))",
                msg.sender, msg.value
            ),
            Call::Mint { to, amount, msg } => write!(
                f,
                "mint({to}, {amount:?}, msg=({}, {:?}))",
                msg.sender, msg.value
            ),
            Call::ExternalCall => f.write_str("externalCall()"),
            Call::Bid { msg } | Call::Withdraw { msg } | Call::End { msg } => write!(
                f,
                "{}(msg=({}, {:?}))",
                self.method(),
                msg.sender,
                msg.value
            ),
        }
    }
}

/// Hooks fired by contract code. All default to no-ops.
pub trait Monitor {
    fn enter(&mut self, _state: &WorldState, _call: &Call, _gas: Gas) {}

    fn exit(
        &mut self,
        _state: &WorldState,
        _call: &Call,
        _gas_in: Gas,
        _gas_out: Gas,
        _outcome: Outcome<()>,
    ) {
    }

    /// Fired immediately before a contract hands control to an external
    /// callee.
    fn external_call_site(&mut self, _state: &WorldState) {}

    /// Fired once a top-level transaction has finished, after any rollback.
    fn transaction_end(&mut self, _state: &WorldState) {}
}

impl Monitor for () {}

/// Whatever sits on the other side of an external call.
pub trait Environment: Monitor {
    fn external_call(&mut self, state: &mut WorldState, gas: Gas) -> CallResult;
}

/// An environment whose external callees never call back: each external
/// call consumes one unit and succeeds.
#[derive(Debug, Default)]
pub struct Isolated<M = ()>(pub M);

impl<M: Monitor> Monitor for Isolated<M> {
    fn enter(&mut self, state: &WorldState, call: &Call, gas: Gas) {
        self.0.enter(state, call, gas)
    }

    fn exit(&mut self, state: &WorldState, call: &Call, gas_in: Gas, gas_out: Gas, r: Outcome<()>) {
        self.0.exit(state, call, gas_in, gas_out, r)
    }

    fn external_call_site(&mut self, state: &WorldState) {
        self.0.external_call_site(state)
    }

    fn transaction_end(&mut self, state: &WorldState) {
        self.0.transaction_end(state)
    }
}

impl<M: Monitor> Environment for Isolated<M> {
    fn external_call(&mut self, state: &mut WorldState, gas: Gas) -> CallResult {
        self.0.enter(state, &Call::ExternalCall, gas);
        let out = gas.saturating_dec();
        self.0
            .exit(state, &Call::ExternalCall, gas, out, Outcome::Success(()));
        Ok((out, Outcome::Success(())))
    }
}

// ---------------------------------------------------------------------------
// Token
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TokenVariant {
    /// No runtime guards; callers must satisfy the preconditions.
    Closed,
    /// Preconditions turned into runtime guards that revert.
    Guarded,
    /// Guarded, plus an external call after all effects.
    Open,
    /// Like `Open`, but the external call happens between crediting `to`
    /// and the (stale) write to `from`.
    OpenBuggy,
}

impl TokenVariant {
    pub fn name(self) -> &'static str {
        match self {
            TokenVariant::Closed => "closed",
            TokenVariant::Guarded => "guarded",
            TokenVariant::Open => "open",
            TokenVariant::OpenBuggy => "open-buggy",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "closed" => TokenVariant::Closed,
            "guarded" => TokenVariant::Guarded,
            "open" => TokenVariant::Open,
            "open-buggy" => TokenVariant::OpenBuggy,
            _ => return None,
        })
    }

    pub fn makes_external_calls(self) -> bool {
        matches!(self, TokenVariant::Open | TokenVariant::OpenBuggy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TokenConfig {
    pub variant: TokenVariant,
    /// Reject `transfer` calls carrying native value. Closed transfers always
    /// require `msg.value == 0`.
    pub msg_value_guard: bool,
}

impl TokenConfig {
    pub fn new(variant: TokenVariant) -> Self {
        TokenConfig {
            variant,
            msg_value_guard: true,
        }
    }
}

/// Non-ghost token storage.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenStorage {
    pub minter: Address,
    pub balances: AddressMap<U256>,
    pub native_balance: U256,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenState {
    minter: Address,
    pub balances: AddressMap<U256>,
    pub native_balance: U256,
    /// Ghost: every token ever minted.
    pub total_minted: Nat,
}

impl TokenState {
    pub fn minter(&self) -> Address {
        self.minter
    }

    pub fn storage(&self) -> TokenStorage {
        TokenStorage {
            minter: self.minter,
            balances: self.balances.clone(),
            native_balance: self.native_balance,
        }
    }

    pub(crate) fn set_storage(&mut self, storage: &TokenStorage) {
        self.minter = storage.minter;
        self.balances = storage.balances.clone();
        self.native_balance = storage.native_balance;
    }

    fn balance(&self, who: Address) -> U256 {
        self.balances.get(who).copied().unwrap_or(U256::ZERO)
    }

    /// `to !in balances || balances[to] + amount <= MAX_UINT256`
    fn credit_fits(&self, to: Address, amount: U256) -> bool {
        self.balance(to).checked_add(amount).is_some()
    }

    fn credit(&mut self, to: Address, amount: U256) -> Outcome<()> {
        match self.balance(to).checked_add(amount) {
            Some(v) => {
                self.balances.insert(to, v);
                Outcome::Success(())
            }
            None => Outcome::Revert,
        }
    }
}

/// Constructor. Payable: the creator may deposit native value.
pub fn token_new(msg: Msg, pool_size: usize) -> TokenState {
    TokenState {
        minter: msg.sender,
        balances: AddressMap::new(pool_size),
        native_balance: msg.value,
        total_minted: Nat::zero(),
    }
}

/// Exact sum of the map's values.
pub fn sum_balances(balances: &AddressMap<U256>) -> Nat {
    balances.values().fold(Nat::zero(), |acc, v| acc + *v)
}

/// Global invariant: `total_minted == sum(balances)`.
pub fn ginv_holds(token: &TokenState) -> bool {
    sum_balances(&token.balances) == token.total_minted
}

/// Transfer guard, evaluated on entry state.
pub fn transfer_guard(
    token: &TokenState,
    cfg: &TokenConfig,
    from: Address,
    to: Address,
    amount: U256,
    msg: Msg,
    gas: Gas,
) -> bool {
    let value_ok = !(cfg.msg_value_guard || cfg.variant == TokenVariant::Closed)
        || msg.value.is_zero();
    token.balances.get(from).is_some_and(|b| *b >= amount)
        && msg.sender == from
        && gas.remaining() >= 1
        && token.credit_fits(to, amount)
        && value_ok
}

/// Mint guard, evaluated on entry state.
pub fn mint_guard(token: &TokenState, to: Address, amount: U256, msg: Msg, gas: Gas) -> bool {
    msg.sender == token.minter && gas.remaining() >= 1 && token.credit_fits(to, amount)
}

fn closed_precondition(method: &'static str, ok: bool) -> Result<(), HarnessError> {
    if ok {
        Ok(())
    } else {
        Err(HarnessError::Precondition {
            method,
            reason: "caller-side requirements do not hold",
        })
    }
}

/// Runs `body` as one public call: hooks, revert frame, ghost record.
fn public_call<E, F>(state: &mut WorldState, env: &mut E, call: Call, gas: Gas, body: F) -> CallResult
where
    E: Environment + ?Sized,
    F: FnOnce(&mut WorldState, &mut E) -> CallResult,
{
    env.enter(state, &call, gas);
    let snap = state.snapshot();
    let (gas_out, outcome) = body(state, env)?;
    if outcome.is_revert() {
        state.restore(&snap)?;
    }
    state.commit(snap)?;
    state.observe(Observation {
        method: call.method(),
        outcome,
    });
    env.exit(state, &call, gas, gas_out, outcome);
    Ok((gas_out, outcome))
}

fn reverted(gas: Gas) -> CallResult {
    Ok((gas.saturating_dec(), Outcome::Revert))
}

/// `transfer(from, to, amount)`.
///
/// Updates happen as: compute `new_amount = balances[from] - amount`, then
/// write `from`, then credit `to` from its current balance. With
/// `from == to` this is a no-op. The buggy open variant credits `to`, calls
/// out, and only then writes the stale `new_amount` into `from`.
#[allow(clippy::too_many_arguments)]
pub fn transfer<E: Environment + ?Sized>(
    state: &mut WorldState,
    cfg: &TokenConfig,
    from: Address,
    to: Address,
    amount: U256,
    msg: Msg,
    gas: Gas,
    env: &mut E,
) -> CallResult {
    if cfg.variant == TokenVariant::Closed {
        closed_precondition(
            "transfer",
            transfer_guard(&state.token, cfg, from, to, amount, msg, gas),
        )?;
    }
    let call = Call::Transfer {
        from,
        to,
        amount,
        msg,
    };
    public_call(state, env, call, gas, |state, env| {
        if !transfer_guard(&state.token, cfg, from, to, amount, msg, gas) {
            return reverted(gas);
        }
        let token = &mut state.token;
        if WorldState::move_native(&mut state.accounts, msg.sender, &mut token.native_balance, msg.value)
            .is_revert()
        {
            return reverted(gas);
        }
        let gas = gas.saturating_dec();
        let new_amount = token
            .balance(from)
            .checked_sub(amount)
            .expect("guard checked the balance");
        match cfg.variant {
            TokenVariant::Closed | TokenVariant::Guarded => {
                token.balances.insert(from, new_amount);
                if token.credit(to, amount).is_revert() {
                    return reverted(gas);
                }
                Ok((gas, Outcome::Success(())))
            }
            TokenVariant::Open => {
                token.balances.insert(from, new_amount);
                if token.credit(to, amount).is_revert() {
                    return reverted(gas);
                }
                env.external_call_site(state);
                let (g1, _) = env.external_call(state, gas)?;
                Ok((g1.saturating_dec(), Outcome::Success(())))
            }
            TokenVariant::OpenBuggy => {
                if token.credit(to, amount).is_revert() {
                    return reverted(gas);
                }
                env.external_call_site(state);
                let (g1, _) = env.external_call(state, gas)?;
                state.token.balances.insert(from, new_amount);
                Ok((g1.saturating_dec(), Outcome::Success(())))
            }
        }
    })
}

/// `mint(to, amount)`; identical for every variant apart from the closed
/// precondition check.
pub fn mint<E: Environment + ?Sized>(
    state: &mut WorldState,
    cfg: &TokenConfig,
    to: Address,
    amount: U256,
    msg: Msg,
    gas: Gas,
    env: &mut E,
) -> CallResult {
    if cfg.variant == TokenVariant::Closed {
        closed_precondition("mint", mint_guard(&state.token, to, amount, msg, gas))?;
    }
    public_call(state, env, Call::Mint { to, amount, msg }, gas, |state, _| {
        if !mint_guard(&state.token, to, amount, msg, gas) {
            return reverted(gas);
        }
        let token = &mut state.token;
        if WorldState::move_native(&mut state.accounts, msg.sender, &mut token.native_balance, msg.value)
            .is_revert()
            || token.credit(to, amount).is_revert()
        {
            return reverted(gas);
        }
        token.total_minted = core::mem::take(&mut token.total_minted) + amount;
        Ok((gas.saturating_dec(), Outcome::Success(())))
    })
}

// ---------------------------------------------------------------------------
// Auction
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AuctionVariant {
    Correct,
    /// Mutant: calling `auctionEnd` on an ended auction clears `ended`.
    ResettingEnd,
}

impl AuctionVariant {
    pub fn name(self) -> &'static str {
        match self {
            AuctionVariant::Correct => "correct",
            AuctionVariant::ResettingEnd => "resetting-end",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "correct" => AuctionVariant::Correct,
            "resetting-end" => AuctionVariant::ResettingEnd,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AuctionStorage {
    pub beneficiary: Address,
    pub highest_bid: U256,
    pub highest_bidder: Option<Address>,
    pub ended: bool,
    pub pending_returns: AddressMap<U256>,
    pub native_balance: U256,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AuctionState {
    pub storage: AuctionStorage,
    /// Ghost: value of `ended` at the entry of every public call.
    pub ended_history: Vec<bool>,
}

impl AuctionState {
    pub fn new(beneficiary: Address, pool_size: usize) -> Self {
        AuctionState {
            storage: AuctionStorage {
                beneficiary,
                highest_bid: U256::ZERO,
                highest_bidder: None,
                ended: false,
                pending_returns: AddressMap::new(pool_size),
                native_balance: U256::ZERO,
            },
            ended_history: Vec::new(),
        }
    }
}

/// Once `true` appears in the history, nothing after it is `false`.
pub fn ended_monotone(history: &[bool]) -> bool {
    history
        .iter()
        .skip_while(|e| !**e)
        .all(|e| *e)
}

fn auction_call<E, F>(
    state: &mut WorldState,
    env: &mut E,
    call: Call,
    gas: Gas,
    guard: bool,
    body: F,
) -> CallResult
where
    E: Environment + ?Sized,
    F: FnOnce(&mut WorldState) -> Outcome<()>,
{
    let ended = state.auction.storage.ended;
    state.auction.ended_history.push(ended);
    public_call(state, env, call, gas, |state, _| {
        if !guard || gas.remaining() == 0 {
            return reverted(gas);
        }
        let msg = call.msg().expect("auction calls carry a message");
        let auction = &mut state.auction.storage;
        if WorldState::move_native(&mut state.accounts, msg.sender, &mut auction.native_balance, msg.value)
            .is_revert()
        {
            return reverted(gas);
        }
        match body(state) {
            Outcome::Success(()) => Ok((gas.saturating_dec(), Outcome::Success(()))),
            Outcome::Revert => reverted(gas),
        }
    })
}

fn pay_out(state: &mut WorldState, to: Address, amount: U256) -> Outcome<()> {
    let auction = &mut state.auction.storage;
    let Some(account) = state.accounts.get_mut(to) else {
        return Outcome::Revert;
    };
    match (
        auction.native_balance.checked_sub(amount),
        account.native_balance.checked_add(amount),
    ) {
        (Some(pool), Some(credited)) => {
            auction.native_balance = pool;
            account.native_balance = credited;
            Outcome::Success(())
        }
        _ => Outcome::Revert,
    }
}

/// Succeeds iff the auction is open and `msg.value` beats the highest bid.
pub fn auction_bid<E: Environment + ?Sized>(
    state: &mut WorldState,
    msg: Msg,
    gas: Gas,
    env: &mut E,
) -> CallResult {
    let open = !state.auction.storage.ended && msg.value > state.auction.storage.highest_bid;
    auction_call(state, env, Call::Bid { msg }, gas, open, |state| {
        let auction = &mut state.auction.storage;
        if let Some(prev) = auction.highest_bidder {
            let owed = auction
                .pending_returns
                .get(prev)
                .copied()
                .unwrap_or(U256::ZERO)
                .checked_add(auction.highest_bid);
            match owed {
                Some(v) => {
                    auction.pending_returns.insert(prev, v);
                }
                None => return Outcome::Revert,
            }
        }
        auction.highest_bid = msg.value;
        auction.highest_bidder = Some(msg.sender);
        Outcome::Success(())
    })
}

/// Pays the caller's pending returns back to their account.
pub fn auction_withdraw<E: Environment + ?Sized>(
    state: &mut WorldState,
    msg: Msg,
    gas: Gas,
    env: &mut E,
) -> CallResult {
    auction_call(state, env, Call::Withdraw { msg }, gas, true, |state| {
        let owed = state
            .auction
            .storage
            .pending_returns
            .get(msg.sender)
            .copied()
            .unwrap_or(U256::ZERO);
        if owed.is_zero() {
            return Outcome::Success(());
        }
        state
            .auction
            .storage
            .pending_returns
            .insert(msg.sender, U256::ZERO);
        pay_out(state, msg.sender, owed)
    })
}

/// Succeeds iff the auction is open and the caller is the beneficiary.
pub fn auction_end<E: Environment + ?Sized>(
    state: &mut WorldState,
    variant: AuctionVariant,
    msg: Msg,
    gas: Gas,
    env: &mut E,
) -> CallResult {
    let storage = &state.auction.storage;
    let allowed = msg.sender == storage.beneficiary
        && (!storage.ended || variant == AuctionVariant::ResettingEnd);
    auction_call(state, env, Call::End { msg }, gas, allowed, |state| {
        let auction = &mut state.auction.storage;
        if auction.ended {
            // only reachable in the mutant
            auction.ended = false;
            return Outcome::Success(());
        }
        auction.ended = true;
        let prize = auction.highest_bid;
        let beneficiary = auction.beneficiary;
        pay_out(state, beneficiary, prize)
    })
}
