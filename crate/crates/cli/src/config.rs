//! Textual run configuration, shared by flags and scenario files.

use std::path::PathBuf;

use reentrancy_core::adversary::{GasMode, HavocPools};
use reentrancy_core::contracts::{AuctionVariant, TokenConfig, TokenVariant};
use reentrancy_core::explorer::{CheckPoints, ContractKind, Mode, Scenario};
use reentrancy_core::machine::{Address, MAX_POOL, U256};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub contract: String,
    /// Defaults to `guarded` for the token and `correct` for the auction.
    pub variant: Option<String>,
    pub gas: u64,
    pub txs: usize,
    pub prefix: Vec<String>,
    pub addresses: usize,
    pub amounts: Vec<String>,
    pub values: Vec<String>,
    pub check: Vec<String>,
    pub mode: String,
    pub trials: u64,
    pub seed: u64,
    pub workers: usize,
    pub listing_faithful_gas: bool,
    pub msg_value_guard: bool,
    pub dedup: bool,
    pub revert_frame: bool,
    pub minimize: bool,
    pub output: Option<PathBuf>,
    pub verbose: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            contract: "token".into(),
            variant: None,
            gas: 4,
            txs: 1,
            prefix: Vec::new(),
            addresses: 3,
            amounts: ["0", "1", "2", "max"].map(String::from).to_vec(),
            values: vec!["0".into()],
            check: CheckPoints::ALL.names().into_iter().map(String::from).collect(),
            mode: "exhaustive".into(),
            trials: 1000,
            seed: 0,
            workers: 1,
            listing_faithful_gas: false,
            msg_value_guard: true,
            dedup: false,
            revert_frame: false,
            minimize: true,
            output: None,
            verbose: false,
        }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_values(texts: &[String], what: &str) -> Result<Vec<U256>, CliError> {
    texts
        .iter()
        .map(|t| t.trim().parse::<U256>().map_err(|_| bad(format!("invalid {what} `{t}`"))))
        .collect()
}

impl RunConfig {
    pub fn contract_kind(&self) -> Result<ContractKind, CliError> {
        match self.contract.as_str() {
            "token" => {
                let name = self.variant.as_deref().unwrap_or("guarded");
                let variant = TokenVariant::from_name(name).ok_or_else(|| bad(format!("unknown token variant `{name}`")))?;
                Ok(ContractKind::Token(TokenConfig {
                    variant,
                    msg_value_guard: self.msg_value_guard,
                }))
            }
            "auction" => {
                let name = self.variant.as_deref().unwrap_or("correct");
                let variant = AuctionVariant::from_name(name).ok_or_else(|| bad(format!("unknown auction variant `{name}`")))?;
                Ok(ContractKind::Auction(variant))
            }
            other => Err(bad(format!("unknown contract `{other}`"))),
        }
    }

    pub fn scenario(&self) -> Result<Scenario, CliError> {
        if self.addresses == 0 || self.addresses > MAX_POOL {
            return Err(bad(format!("--addresses must be between 1 and {}", MAX_POOL)));
        }
        if self.workers == 0 {
            return Err(bad("--workers must be at least 1"));
        }
        let addresses = (0..self.addresses).map(Address::new).collect::<Result<Vec<_>, _>>()?;
        let pools = HavocPools::new(addresses, parse_values(&self.amounts, "amount")?, parse_values(&self.values, "value")?)?;
        let mut s = Scenario::new(self.contract_kind()?, self.gas).with_pools(pools);
        s.max_transactions = self.txs;
        s.check_points = CheckPoints::parse(self.check.iter().map(String::as_str))?;
        s.mode = match self.mode.as_str() {
            "exhaustive" => Mode::Exhaustive,
            "random" => Mode::Random {
                trials: self.trials,
                seed: self.seed,
            },
            other => return Err(bad(format!("unknown mode `{other}`"))),
        };
        s.gas_mode = if self.listing_faithful_gas {
            GasMode::ResetOnStop
        } else {
            GasMode::Strict
        };
        s.check_revert_frame = self.revert_frame;
        s.dedup = self.dedup;
        s.prefix = self
            .prefix
            .iter()
            .map(|p| s.parse_prefix_call(p))
            .collect::<Result<_, _>>()?;
        s.validate()?;
        Ok(s)
    }
}
