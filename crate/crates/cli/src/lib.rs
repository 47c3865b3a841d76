//! Command-line front end for the re-entrancy explorer.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use reentrancy_core::explorer::{self, minimize, replay, Partition, Scenario, Verdict};
use reentrancy_core::HarnessError;

pub mod config;
pub mod report;

use config::RunConfig;
use report::Report;

pub const EXIT_HOLDS: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_VIOLATED: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("report: {0}")]
    Report(String),
    #[error("worker panicked")]
    Worker,
}

#[derive(Debug, Parser)]
#[command(name = "reentrancy", version, about = "Bounded re-entrancy explorer for small contracts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Explore every schedule up to the bounds and check invariants.
    Explore(ExploreArgs),
    /// Re-run the counterexample stored in a JSON report.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct ExploreArgs {
    /// JSON run configuration; flags given on the command line win.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// token | auction
    #[arg(long)]
    pub contract: Option<String>,
    /// closed | guarded | open | open-buggy (token), correct | resetting-end (auction)
    #[arg(long)]
    pub variant: Option<String>,
    /// Gas bound for every top-level transaction.
    #[arg(long)]
    pub gas: Option<u64>,
    /// Number of explored transactions per schedule.
    #[arg(long)]
    pub txs: Option<usize>,
    /// Setup call run before exploring, e.g. `mint:A:10`. Repeatable.
    #[arg(long)]
    pub prefix: Vec<String>,
    /// Size of the address pool (A, B, ...).
    #[arg(long)]
    pub addresses: Option<usize>,
    /// Comma-separated amount pool; `max` is 2^256-1.
    #[arg(long, value_delimiter = ',')]
    pub amounts: Option<Vec<String>>,
    /// Comma-separated msg.value pool.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<String>>,
    /// Comma-separated check points: external-call-site, method-exit, tx-end.
    #[arg(long, value_delimiter = ',')]
    pub check: Option<Vec<String>>,
    /// exhaustive | random
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Reset gas from the call's budget on the adversary's stop branch.
    #[arg(long)]
    pub listing_faithful_gas: bool,
    /// Allow token transfers that carry native value.
    #[arg(long)]
    pub no_msg_value_guard: bool,
    /// Memoize explored states.
    #[arg(long)]
    pub dedup: bool,
    /// Check that every reverted call leaves non-ghost state untouched.
    #[arg(long)]
    pub revert_frame: bool,
    /// Report the first counterexample as found.
    #[arg(long)]
    pub no_minimize: bool,
    /// Write the JSON report here.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(short, long)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub report: PathBuf,
    /// Must match the contract recorded in the report.
    #[arg(long)]
    pub contract: Option<String>,
    /// Must match the variant recorded in the report.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(short, long)]
    pub verbose: bool,
}

impl ExploreArgs {
    pub fn config(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.scenario {
            Some(path) => read_json::<RunConfig>(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.contract {
            c.contract = v.clone();
        }
        if let Some(v) = &self.variant {
            c.variant = Some(v.clone());
        }
        macro_rules! take {
            ($($field:ident => $target:ident),*) => {
                $(if let Some(v) = &self.$field {
                    c.$target = v.clone();
                })*
            };
        }
        take!(gas => gas, txs => txs, addresses => addresses, amounts => amounts, values => values,
              check => check, mode => mode, trials => trials, seed => seed, workers => workers);
        if !self.prefix.is_empty() {
            c.prefix = self.prefix.clone();
        }
        c.listing_faithful_gas |= self.listing_faithful_gas;
        c.msg_value_guard &= !self.no_msg_value_guard;
        c.dedup |= self.dedup;
        c.revert_frame |= self.revert_frame;
        c.minimize &= !self.no_minimize;
        c.verbose |= self.verbose;
        if self.json.is_some() {
            c.output = self.json.clone();
        }
        Ok(c)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Splits the first transaction's calls across `workers` threads.
pub fn explore_parallel(scenario: &Scenario, workers: usize) -> Result<Verdict, CliError> {
    if workers <= 1 {
        return Ok(explorer::explore(scenario)?);
    }
    let results: Vec<_> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|worker| scope.spawn(move || explorer::explore_partition(scenario, Partition { worker, workers })))
            .collect();
        handles.into_iter().map(|h| h.join()).collect()
    });
    let mut verdicts = Vec::with_capacity(workers);
    for r in results {
        verdicts.push(r.map_err(|_| CliError::Worker)??);
    }
    Ok(explorer::merge(verdicts))
}

fn print_trace(out: &mut impl Write, trace: &[explorer::CallEvent]) -> std::io::Result<()> {
    for e in trace {
        let outcome = if e.outcome.is_success() { "ok" } else { "revert" };
        writeln!(
            out,
            "  {:indent$}{} gas {} -> {} {outcome}",
            "",
            e.call,
            e.gas_in,
            e.gas_out,
            indent = 2 * e.depth as usize
        )?;
    }
    Ok(())
}

fn summarize(out: &mut impl Write, verdict: &Verdict, verbose: bool) -> std::io::Result<()> {
    match verdict {
        Verdict::Holds {
            schedules_explored,
            max_depth,
        } => writeln!(out, "holds: {schedules_explored} schedules explored, max depth {max_depth}"),
        Verdict::Violated(c) => {
            let v = &c.violation;
            writeln!(out, "violated: {} at {}", v.invariant, v.at.name())?;
            if v.invariant == explorer::Invariant::GlobalInvariant {
                writeln!(out, "  sum_balances {} vs total_minted {}", v.state.sum_balances, v.state.total_minted)?;
            }
            if !v.state.ended_history.is_empty() {
                writeln!(out, "  ended_history {:?}", v.state.ended_history)?;
            }
            for (i, tx) in c.schedule.txs.iter().enumerate() {
                writeln!(out, "  tx {i}: {} tape {:?}", tx.call, tx.tape)?;
            }
            if verbose || c.trace.len() <= 12 {
                writeln!(out, "  trace:")?;
                print_trace(out, &c.trace)?;
            }
            Ok(())
        }
    }
}

fn write_report(path: &Path, report: &Report) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(path, text + "\n").map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn cmd_explore(args: &ExploreArgs) -> Result<i32, CliError> {
    let config = args.config()?;
    let scenario = config.scenario()?;
    let mut verdict = explore_parallel(&scenario, config.workers)?;
    if config.minimize {
        if let Verdict::Violated(c) = &verdict {
            verdict = Verdict::Violated(Box::new(minimize(&scenario, c)?));
        }
    }
    let mut out = std::io::stdout().lock();
    summarize(&mut out, &verdict, config.verbose).map_err(|source| CliError::Io {
        path: "<stdout>".into(),
        source,
    })?;
    if let Some(path) = &config.output {
        write_report(path, &report::build(&config, &scenario, &verdict))?;
    }
    Ok(if verdict.is_holds() { EXIT_HOLDS } else { EXIT_VIOLATED })
}

pub fn cmd_replay(args: &ReplayArgs) -> Result<i32, CliError> {
    let stored: Report = read_json(&args.report)?;
    if stored.schema != report::SCHEMA {
        return Err(CliError::Report(format!("unsupported schema {}", stored.schema)));
    }
    let config = &stored.scenario;
    if args.contract.as_ref().is_some_and(|c| *c != config.contract) {
        return Err(CliError::Usage(format!("report was produced for contract `{}`", config.contract)));
    }
    let kind = config.contract_kind()?;
    if args.variant.as_ref().is_some_and(|v| v != kind.variant_name()) {
        return Err(CliError::Usage(format!("report was produced for variant `{}`", kind.variant_name())));
    }
    let scenario = config.scenario()?;
    let Some(cx) = &stored.counterexample else {
        if stored.verdict != "holds" {
            return Err(CliError::Report("violated report without a counterexample".into()));
        }
        println!("holds: nothing to replay");
        return Ok(EXIT_HOLDS);
    };
    let schedule = report::schedule_of(&scenario, cx)?;
    let r = replay(&scenario, &schedule)?;
    let mut out = std::io::stdout().lock();
    let io = |source| CliError::Io {
        path: "<stdout>".into(),
        source,
    };
    if args.verbose {
        print_trace(&mut out, &r.trace).map_err(io)?;
    }
    let Some(v) = r.violation else {
        eprintln!("warning: the stored violation did not reproduce; replay is not deterministic");
        return Ok(EXIT_HOLDS);
    };
    if v.invariant.name() != cx.violated_invariant || report::trace_json(&r.trace) != cx.trace {
        return Err(CliError::Report("replay diverged from the stored trace".into()));
    }
    writeln!(out, "violated: {} at {} (trace identical, {} events)", v.invariant, v.at.name(), r.trace.len()).map_err(io)?;
    Ok(EXIT_VIOLATED)
}

/// Parses `args` and runs the chosen command, returning the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_HOLDS };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Explore(a) => cmd_explore(a),
        Command::Replay(a) => cmd_replay(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
