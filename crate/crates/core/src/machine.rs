//! Abstract execution substrate: addresses, accounts, message context, gas
//! metering and transactional snapshot/rollback.

use alloc::vec::Vec;
use core::fmt;
use core::ops::Add;
use core::str::FromStr;
use core::sync::atomic::{AtomicU64, Ordering};

use num_bigint::BigUint;

use crate::contracts::{AuctionState, AuctionStorage, Method, TokenState, TokenStorage};
use crate::error::HarnessError;

/// Largest number of addresses a run may configure.
pub const MAX_POOL: usize = 26;

type Word = ruint::aliases::U256;

/// Full-width 256-bit unsigned value. Only checked arithmetic is exposed.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct U256(Word);

impl U256 {
    pub const ZERO: U256 = U256(Word::ZERO);
    pub const MAX: U256 = U256(Word::MAX);

    pub const fn from_u64(v: u64) -> Self {
        U256(Word::from_limbs([v, 0, 0, 0]))
    }

    pub fn checked_add(self, rhs: U256) -> Option<U256> {
        self.0.checked_add(rhs.0).map(U256)
    }

    pub fn checked_sub(self, rhs: U256) -> Option<U256> {
        self.0.checked_sub(rhs.0).map(U256)
    }

    pub fn is_zero(self) -> bool {
        self.0.is_zero()
    }

    pub fn to_nat(self) -> Nat {
        Nat(BigUint::from_bytes_le(&self.0.to_le_bytes::<32>()))
    }

    pub fn as_u64_saturating(self) -> u64 {
        self.0.try_into().unwrap_or(u64::MAX)
    }
}

impl From<u64> for U256 {
    fn from(v: u64) -> Self {
        U256::from_u64(v)
    }
}

impl fmt::Display for U256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl fmt::Debug for U256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == U256::MAX {
            f.write_str("MAX")
        } else {
            fmt::Display::fmt(&self.0, f)
        }
    }
}

impl FromStr for U256 {
    type Err = HarnessError;

    /// Accepts decimal digits or the literal `max`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("max") {
            return Ok(U256::MAX);
        }
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(HarnessError::Parse("U256 must be a decimal string"));
        }
        Word::from_str_radix(s, 10)
            .map(U256)
            .map_err(|_| HarnessError::Parse("U256 out of range"))
    }
}

/// Unbounded natural number, used for ghost totals and exact sums.
#[derive(Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Nat(BigUint);

impl Nat {
    pub fn zero() -> Self {
        Nat(BigUint::default())
    }

    pub fn from_u64(v: u64) -> Self {
        Nat(BigUint::from(v))
    }
}

impl Add<&Nat> for Nat {
    type Output = Nat;

    fn add(self, rhs: &Nat) -> Nat {
        Nat(self.0 + &rhs.0)
    }
}

impl Add<U256> for Nat {
    type Output = Nat;

    fn add(self, rhs: U256) -> Nat {
        Nat(self.0 + rhs.to_nat().0)
    }
}

impl fmt::Display for Nat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl fmt::Debug for Nat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl FromStr for Nat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BigUint::from_str(s.trim())
            .map(Nat)
            .map_err(|_| HarnessError::Parse("natural must be a decimal string"))
    }
}

/// Account identity: an index into the run's finite address pool.
///
/// Rendered as a capital letter (`A`, `B`, ...).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address(u8);

impl Address {
    pub fn new(index: usize) -> Result<Self, HarnessError> {
        if index < MAX_POOL {
            Ok(Address(index as u8))
        } else {
            Err(HarnessError::AddressOutOfPool(index))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", (b'A' + self.0) as char)
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Address {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().as_bytes() {
            [c] if c.is_ascii_uppercase() => Address::new((c - b'A') as usize),
            _ => Err(HarnessError::Parse("address must be a single letter A-Z")),
        }
    }
}

/// Finite map keyed by [`Address`]. Presence of a key is observable
/// (`from in balances`), so absent and zero are distinct.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AddressMap<V> {
    slots: Vec<Option<V>>,
}

impl<V> AddressMap<V> {
    pub fn new(pool_size: usize) -> Self {
        let mut slots = Vec::with_capacity(pool_size);
        slots.resize_with(pool_size, || None);
        AddressMap { slots }
    }

    pub fn get(&self, key: Address) -> Option<&V> {
        self.slots.get(key.index()).and_then(Option::as_ref)
    }

    pub fn get_mut(&mut self, key: Address) -> Option<&mut V> {
        self.slots.get_mut(key.index()).and_then(Option::as_mut)
    }

    pub fn contains(&self, key: Address) -> bool {
        self.get(key).is_some()
    }

    /// Panics if `key` lies outside the pool the map was created for.
    pub fn insert(&mut self, key: Address, value: V) -> Option<V> {
        self.slots[key.index()].replace(value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Address, &V)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.as_ref().map(|v| (Address(i as u8), v)))
    }

    pub fn values(&self) -> impl Iterator<Item = &V> {
        self.slots.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.values().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }
}

impl<V: fmt::Debug> fmt::Debug for AddressMap<V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.iter()).finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AccountKind {
    User,
    Contract,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Account {
    kind: AccountKind,
    pub native_balance: U256,
}

impl Account {
    pub fn new(kind: AccountKind, native_balance: U256) -> Self {
        Account {
            kind,
            native_balance,
        }
    }

    pub fn kind(&self) -> AccountKind {
        self.kind
    }
}

/// Call context.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Msg {
    pub sender: Address,
    pub value: U256,
}

impl Msg {
    pub fn new(sender: Address, value: U256) -> Self {
        Msg { sender, value }
    }
}

/// Remaining fuel for a call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Gas(pub u64);

impl Gas {
    pub fn remaining(self) -> u64 {
        self.0
    }

    /// `if gas >= 1 then gas - 1 else 0`
    pub fn saturating_dec(self) -> Gas {
        Gas(self.0.saturating_sub(1))
    }

    /// Post-condition every call must satisfy on return:
    /// `out == 0 || out <= in - 1`.
    pub fn returned_within(self, gas_in: Gas) -> bool {
        self.0 == 0 || (gas_in.0 >= 1 && self.0 < gas_in.0)
    }
}

impl fmt::Display for Gas {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Result of every method call.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Outcome<T> {
    Revert,
    Success(T),
}

impl<T> Outcome<T> {
    pub fn is_success(&self) -> bool {
        matches!(self, Outcome::Success(_))
    }

    pub fn is_revert(&self) -> bool {
        matches!(self, Outcome::Revert)
    }

    pub fn success(self) -> Option<T> {
        match self {
            Outcome::Success(v) => Some(v),
            Outcome::Revert => None,
        }
    }

    /// Drops the carried value.
    pub fn unit(&self) -> Outcome<()> {
        match self {
            Outcome::Success(_) => Outcome::Success(()),
            Outcome::Revert => Outcome::Revert,
        }
    }
}

impl<T> From<Option<T>> for Outcome<T> {
    fn from(v: Option<T>) -> Self {
        v.map_or(Outcome::Revert, Outcome::Success)
    }
}

/// Every method entry consumes one unit; zero gas reverts.
pub fn charge_entry(gas: Gas) -> Outcome<Gas> {
    if gas.0 >= 1 {
        Outcome::Success(Gas(gas.0 - 1))
    } else {
        Outcome::Revert
    }
}

pub fn checked_add(a: U256, b: U256) -> Outcome<U256> {
    a.checked_add(b).into()
}

pub fn checked_sub(a: U256, b: U256) -> Outcome<U256> {
    a.checked_sub(b).into()
}

/// One ghost record per public call, appended on exit (reverted calls too).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Observation {
    pub method: Method,
    pub outcome: Outcome<()>,
}

/// Initial conditions of a world.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Genesis {
    pub pool_size: usize,
    /// Native balance every user account starts with.
    pub endowment: U256,
    /// Creator of the token; becomes `minter`.
    pub token_deployer: Msg,
    pub auction_beneficiary: Address,
}

impl Genesis {
    pub fn new(pool_size: usize) -> Self {
        let first = Address(0);
        Genesis {
            pool_size,
            endowment: U256::from_u64(1_000),
            token_deployer: Msg::new(first, U256::ZERO),
            auction_beneficiary: first,
        }
    }
}

static NEXT_WORLD_ID: AtomicU64 = AtomicU64::new(1);

/// The whole mutable universe of one run.
#[derive(Debug, PartialEq, Eq)]
pub struct WorldState {
    id: u64,
    next_seq: u64,
    live: Vec<u64>,
    pub accounts: AddressMap<Account>,
    pub token: TokenState,
    pub auction: AuctionState,
    ghost_history: Vec<Observation>,
}

impl Clone for WorldState {
    /// A clone is an independent world: snapshots taken on the original do
    /// not restore into it.
    fn clone(&self) -> Self {
        WorldState {
            id: NEXT_WORLD_ID.fetch_add(1, Ordering::Relaxed),
            next_seq: 0,
            live: Vec::new(),
            accounts: self.accounts.clone(),
            token: self.token.clone(),
            auction: self.auction.clone(),
            ghost_history: self.ghost_history.clone(),
        }
    }
}

impl WorldState {
    pub fn new(genesis: &Genesis) -> Result<Self, HarnessError> {
        if genesis.pool_size == 0 || genesis.pool_size > MAX_POOL {
            return Err(HarnessError::Config("address pool size must be within 1..=26"));
        }
        let deployer = genesis.token_deployer;
        for a in [deployer.sender, genesis.auction_beneficiary] {
            if a.index() >= genesis.pool_size {
                return Err(HarnessError::AddressOutOfPool(a.index()));
            }
        }
        let mut accounts = AddressMap::new(genesis.pool_size);
        for i in 0..genesis.pool_size {
            accounts.insert(Address(i as u8), Account::new(AccountKind::User, genesis.endowment));
        }
        let deployer_account = accounts.get_mut(deployer.sender).expect("deployer in pool");
        deployer_account.native_balance = deployer_account
            .native_balance
            .checked_sub(deployer.value)
            .ok_or(HarnessError::Config("deployer cannot fund the constructor value"))?;
        Ok(WorldState {
            id: NEXT_WORLD_ID.fetch_add(1, Ordering::Relaxed),
            next_seq: 0,
            live: Vec::new(),
            accounts,
            token: crate::contracts::token_new(deployer, genesis.pool_size),
            auction: AuctionState::new(genesis.auction_beneficiary, genesis.pool_size),
            ghost_history: Vec::new(),
        })
    }

    pub fn pool_size(&self) -> usize {
        self.accounts.capacity()
    }

    pub fn ghost_history(&self) -> &[Observation] {
        &self.ghost_history
    }

    pub fn observe(&mut self, record: Observation) {
        self.ghost_history.push(record);
    }

    pub fn native_balance(&self, who: Address) -> Option<U256> {
        self.accounts.get(who).map(|a| a.native_balance)
    }

    /// Moves `amount` of native currency out of a user account into a
    /// contract balance. Reverts on insufficient funds or overflow and leaves
    /// both sides untouched in that case.
    pub fn move_native(
        accounts: &mut AddressMap<Account>,
        from: Address,
        contract_balance: &mut U256,
        amount: U256,
    ) -> Outcome<()> {
        if amount.is_zero() {
            return Outcome::Success(());
        }
        let Some(account) = accounts.get_mut(from) else {
            return Outcome::Revert;
        };
        match (
            account.native_balance.checked_sub(amount),
            contract_balance.checked_add(amount),
        ) {
            (Some(debited), Some(credited)) => {
                account.native_balance = debited;
                *contract_balance = credited;
                Outcome::Success(())
            }
            _ => Outcome::Revert,
        }
    }

    /// Total native currency held by users and contracts.
    pub fn native_supply(&self) -> Nat {
        self.accounts
            .values()
            .fold(Nat::zero(), |acc, a| acc + a.native_balance)
            + self.token.native_balance
            + self.auction.storage.native_balance
    }

    /// Saves all non-ghost state.
    pub fn snapshot(&mut self) -> Snapshot {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.live.push(seq);
        Snapshot {
            owner: self.id,
            seq,
            accounts: self.accounts.clone(),
            token: self.token.storage(),
            auction: self.auction.storage.clone(),
        }
    }

    /// Rolls non-ghost state back to `snap`. Snapshots taken after `snap`
    /// become stale; `snap` itself stays usable.
    pub fn restore(&mut self, snap: &Snapshot) -> Result<(), HarnessError> {
        let pos = self.live_position(snap)?;
        self.live.truncate(pos + 1);
        self.accounts = snap.accounts.clone();
        self.token.set_storage(&snap.token);
        self.auction.storage = snap.auction.clone();
        Ok(())
    }

    /// Discards `snap` (and anything taken after it) without rolling back.
    pub fn commit(&mut self, snap: Snapshot) -> Result<(), HarnessError> {
        let pos = self.live_position(&snap)?;
        self.live.truncate(pos);
        Ok(())
    }

    fn live_position(&self, snap: &Snapshot) -> Result<usize, HarnessError> {
        if snap.owner != self.id {
            return Err(HarnessError::ForeignSnapshot);
        }
        self.live
            .iter()
            .rposition(|&s| s == snap.seq)
            .ok_or(HarnessError::StaleSnapshot)
    }

    /// True when every non-ghost field matches `other`.
    pub fn same_storage(&self, other: &WorldState) -> bool {
        self.accounts == other.accounts
            && self.token.storage() == other.token.storage()
            && self.auction.storage == other.auction.storage
    }
}

/// Opaque saved copy of a [`WorldState`] minus ghost data.
#[derive(Debug)]
pub struct Snapshot {
    owner: u64,
    seq: u64,
    accounts: AddressMap<Account>,
    token: TokenStorage,
    auction: AuctionStorage,
}
