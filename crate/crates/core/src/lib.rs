//! Executable semantics for a small family of contracts with gas and
//! revert, plus a bounded explorer that searches for re-entrant
//! interleavings breaking their invariants.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod adversary;
pub mod contracts;
pub mod error;
pub mod explorer;
pub mod machine;

pub use error::HarnessError;
