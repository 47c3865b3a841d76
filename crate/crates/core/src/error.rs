use core::fmt;

use crate::machine::Address;

/// Failures of the harness itself, as opposed to contract reverts. Any of
/// these aborts the run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HarnessError {
    /// A snapshot taken from a different world.
    ForeignSnapshot,
    /// A snapshot already committed or discarded by an outer restore.
    StaleSnapshot,
    AddressOutOfPool(usize),
    /// A closed-variant call was issued without its preconditions.
    Precondition {
        method: &'static str,
        reason: &'static str,
    },
    /// An address was used that has no account.
    UnknownAccount(Address),
    Config(&'static str),
    Parse(&'static str),
    /// A tape or schedule does not fit the scenario it is replayed against.
    ScheduleMismatch(&'static str),
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessError::ForeignSnapshot => f.write_str("snapshot belongs to a different world"),
            HarnessError::StaleSnapshot => f.write_str("snapshot is stale"),
            HarnessError::AddressOutOfPool(i) => write!(f, "address index {i} is outside the pool"),
            HarnessError::Precondition { method, reason } => {
                write!(f, "closed {method} called without its precondition: {reason}")
            }
            HarnessError::UnknownAccount(a) => write!(f, "no account for address {a}"),
            HarnessError::Config(m) => write!(f, "invalid configuration: {m}"),
            HarnessError::Parse(m) => write!(f, "parse error: {m}"),
            HarnessError::ScheduleMismatch(m) => write!(f, "schedule does not match scenario: {m}"),
        }
    }
}

impl core::error::Error for HarnessError {}
