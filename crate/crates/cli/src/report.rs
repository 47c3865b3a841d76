//! JSON report, schema version 1.

use std::collections::BTreeMap;

use reentrancy_core::adversary::ChoiceTape;
use reentrancy_core::contracts::Call;
use reentrancy_core::explorer::{CallEvent, Counterexample, Scenario, Schedule, TopCall, Transaction, Verdict};
use reentrancy_core::machine::{Address, Gas, Msg, Outcome, U256};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

pub const SCHEMA: u32 = 1;

pub type Args = BTreeMap<String, String>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub schema: u32,
    pub verdict: String,
    /// Unknown for a violation: the search stops at the first one.
    pub schedules_explored: Option<u64>,
    pub max_depth: u32,
    pub counterexample: Option<CounterexampleJson>,
    pub scenario: RunConfig,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterexampleJson {
    /// Tape of the violating transaction.
    pub tape: Vec<u64>,
    /// The violating transaction itself.
    pub call: CallJson,
    /// Every transaction before it, setup calls first.
    pub prefix: Vec<CallJson>,
    pub trace: Vec<EventJson>,
    pub violated_invariant: String,
    pub final_state: FinalState,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallJson {
    pub method: String,
    pub args: Args,
    pub gas: u64,
    #[serde(default)]
    pub tape: Vec<u64>,
    #[serde(default)]
    pub setup: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventJson {
    pub depth: u32,
    pub method: String,
    pub args: Args,
    pub gas_in: u64,
    pub gas_out: u64,
    pub outcome: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalState {
    pub balances: BTreeMap<String, String>,
    pub total_minted: String,
    pub sum_balances: String,
    pub ended_history: Vec<bool>,
    pub check_point: String,
}

pub fn args_of(call: &Call) -> Args {
    let mut a = Args::new();
    let mut put = |k: &str, v: String| {
        a.insert(k.to_string(), v);
    };
    match *call {
        Call::Transfer { from, to, amount, msg } => {
            put("from", from.to_string());
            put("to", to.to_string());
            put("amount", amount.to_string());
            put("sender", msg.sender.to_string());
            put("value", msg.value.to_string());
        }
        Call::Mint { to, amount, msg } => {
            put("to", to.to_string());
            put("amount", amount.to_string());
            put("sender", msg.sender.to_string());
            put("value", msg.value.to_string());
        }
        Call::Bid { msg } | Call::Withdraw { msg } | Call::End { msg } => {
            put("sender", msg.sender.to_string());
            put("value", msg.value.to_string());
        }
        Call::ExternalCall => {}
    }
    a
}

fn arg<T: std::str::FromStr>(args: &Args, key: &str) -> Result<T, CliError> {
    args.get(key)
        .ok_or_else(|| CliError::Report(format!("missing argument `{key}`")))?
        .parse()
        .map_err(|_| CliError::Report(format!("malformed argument `{key}`")))
}

pub fn call_of(method: &str, args: &Args) -> Result<Call, CliError> {
    let msg = || -> Result<Msg, CliError> { Ok(Msg::new(arg::<Address>(args, "sender")?, arg::<U256>(args, "value")?)) };
    Ok(match method {
        "transfer" => Call::Transfer {
            from: arg(args, "from")?,
            to: arg(args, "to")?,
            amount: arg(args, "amount")?,
            msg: msg()?,
        },
        "mint" => Call::Mint {
            to: arg(args, "to")?,
            amount: arg(args, "amount")?,
            msg: msg()?,
        },
        "bid" => Call::Bid { msg: msg()? },
        "withdraw" => Call::Withdraw { msg: msg()? },
        "auctionEnd" => Call::End { msg: msg()? },
        other => return Err(CliError::Report(format!("unknown method `{other}`"))),
    })
}

fn call_json(tx: &TopCall, tape: &ChoiceTape, setup: bool) -> CallJson {
    CallJson {
        method: tx.call.method().name().to_string(),
        args: args_of(&tx.call),
        gas: tx.gas.remaining(),
        tape: tape.steps().to_vec(),
        setup,
    }
}

fn event_json(e: &CallEvent) -> EventJson {
    EventJson {
        depth: e.depth,
        method: e.call.method().name().to_string(),
        args: args_of(&e.call),
        gas_in: e.gas_in.remaining(),
        gas_out: e.gas_out.remaining(),
        outcome: match e.outcome {
            Outcome::Success(()) => "success",
            Outcome::Revert => "revert",
        }
        .to_string(),
    }
}

pub fn trace_json(trace: &[CallEvent]) -> Vec<EventJson> {
    trace.iter().map(event_json).collect()
}

fn counterexample_json(scenario: &Scenario, c: &Counterexample) -> CounterexampleJson {
    let (last, earlier) = c.schedule.txs.split_last().expect("a counterexample has a transaction");
    let empty = ChoiceTape::default();
    let prefix = scenario
        .prefix
        .iter()
        .map(|tx| call_json(tx, &empty, true))
        .chain(earlier.iter().map(|t| call_json(&t.call, &t.tape, false)))
        .collect();
    let state = &c.violation.state;
    CounterexampleJson {
        tape: last.tape.steps().to_vec(),
        call: call_json(&last.call, &last.tape, false),
        prefix,
        trace: trace_json(&c.trace),
        violated_invariant: c.violation.invariant.name().to_string(),
        final_state: FinalState {
            balances: state.balances.iter().map(|(a, v)| (a.to_string(), v.to_string())).collect(),
            total_minted: state.total_minted.to_string(),
            sum_balances: state.sum_balances.to_string(),
            ended_history: state.ended_history.clone(),
            check_point: c.violation.at.name().to_string(),
        },
    }
}

pub fn build(config: &RunConfig, scenario: &Scenario, verdict: &Verdict) -> Report {
    match verdict {
        Verdict::Holds {
            schedules_explored,
            max_depth,
        } => Report {
            schema: SCHEMA,
            verdict: "holds".into(),
            schedules_explored: Some(*schedules_explored),
            max_depth: *max_depth,
            counterexample: None,
            scenario: config.clone(),
        },
        Verdict::Violated(c) => Report {
            schema: SCHEMA,
            verdict: "violated".into(),
            schedules_explored: None,
            max_depth: c.trace.iter().map(|e| e.depth).max().unwrap_or(0),
            counterexample: Some(counterexample_json(scenario, c)),
            scenario: config.clone(),
        },
    }
}

fn transaction(c: &CallJson) -> Result<Transaction, CliError> {
    Ok(Transaction {
        call: TopCall::new(call_of(&c.method, &c.args)?, Gas(c.gas)),
        tape: ChoiceTape::new(c.tape.clone()),
    })
}

/// The explored schedule a counterexample describes. Setup entries must
/// match the scenario's prefix.
pub fn schedule_of(scenario: &Scenario, c: &CounterexampleJson) -> Result<Schedule, CliError> {
    let setup: Vec<&CallJson> = c.prefix.iter().filter(|p| p.setup).collect();
    let matches = setup.len() == scenario.prefix.len()
        && setup
            .iter()
            .zip(&scenario.prefix)
            .all(|(j, tx)| transaction(j).is_ok_and(|t| t.call == *tx && t.tape.is_empty()));
    if !matches {
        return Err(CliError::Report("setup calls do not match the scenario prefix".into()));
    }
    if c.tape != c.call.tape {
        return Err(CliError::Report("counterexample tape disagrees with its call".into()));
    }
    let mut txs = c
        .prefix
        .iter()
        .filter(|p| !p.setup)
        .map(transaction)
        .collect::<Result<Vec<_>, _>>()?;
    txs.push(transaction(&c.call)?);
    Ok(Schedule { txs })
}
