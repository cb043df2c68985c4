use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};
use serde::Deserialize;

use gridtrade::clearing::{build_demand_curve, build_supply_curve, clear_market, Ask, Bid};
use gridtrade::harness::Simulation;
use gridtrade::ledger::verify_jsonl;
use gridtrade::report::{emit_reports, LEDGER_JSONL};
use gridtrade::scenario::load_scenario;

const EXIT_INVALID: u8 = 2;
const EXIT_FAILED_HOURS: u8 = 3;
const EXIT_VERIFY: u8 = 4;

/// Peer-to-peer electricity market simulator.
#[derive(Parser)]
#[command(name = "gridtrade", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario hour by hour and write the result tables and ledger.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run only the first N hours.
        #[arg(long)]
        hours: Option<usize>,
        /// Seed for simulated meter noise.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Re-read the written ledger and verify it.
        #[arg(long)]
        verify: bool,
    },
    /// Recompute every block hash of a ledger file.
    Verify {
        #[arg(long)]
        ledger: PathBuf,
    },
    /// Clear a single order book and print the outcome as JSON.
    Clear {
        #[arg(long)]
        book: PathBuf,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OrderBook {
    bids: Vec<Bid>,
    asks: Vec<Ask>,
}

fn verify(path: &Path) -> ExitCode {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) => {
            error!("cannot open {}: {e}", path.display());
            return ExitCode::from(EXIT_VERIFY);
        }
    };
    match verify_jsonl(BufReader::new(file)) {
        Ok(report) if report.is_valid() => {
            println!("{report}");
            ExitCode::SUCCESS
        }
        Ok(report) => {
            println!("{report}");
            ExitCode::from(EXIT_VERIFY)
        }
        Err(e) => {
            error!("cannot read {}: {e}", path.display());
            ExitCode::from(EXIT_VERIFY)
        }
    }
}

fn simulate(scenario: &Path, out: &Path, hours: Option<usize>, seed: u64, check: bool) -> ExitCode {
    let scenario = match load_scenario(scenario) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("invalid scenario: {e}");
            return ExitCode::from(EXIT_INVALID);
        }
    };
    let name = scenario.name.clone();
    let mut sim = match Simulation::new(scenario, seed) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("invalid scenario: {e}");
            return ExitCode::from(EXIT_INVALID);
        }
    };
    let reports = match sim.run(hours) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("simulation aborted: {e}");
            return ExitCode::FAILURE;
        }
    };
    if let Err(e) = emit_reports(&reports, sim.chain(), out) {
        eprintln!("cannot write outputs to {}: {e}", out.display());
        return ExitCode::FAILURE;
    }
    let failed: Vec<u64> = reports.iter().filter(|r| r.status.failed()).map(|r| r.window).collect();
    info!("{name}: {} hours, {} blocks, head {}", reports.len(), sim.chain().blocks().len(), sim.chain().head().map(|b| b.block_hash.to_string()).unwrap_or_default());
    if check {
        let code = verify(&out.join(LEDGER_JSONL));
        if code != ExitCode::SUCCESS {
            return code;
        }
    }
    if !failed.is_empty() {
        eprintln!("failed hours: {failed:?}");
        return ExitCode::from(EXIT_FAILED_HOURS);
    }
    ExitCode::SUCCESS
}

fn clear(path: &Path) -> ExitCode {
    let book: OrderBook = match std::fs::read_to_string(path).map_err(|e| e.to_string()).and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string())) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("invalid order book {}: {e}", path.display());
            return ExitCode::from(EXIT_INVALID);
        }
    };
    let outcome = build_demand_curve(&book.bids).and_then(|d| build_supply_curve(&book.asks).and_then(|s| clear_market(&d, &s)));
    match outcome {
        Ok(o) => {
            println!("{}", serde_json::to_string_pretty(&o).expect("outcome serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("invalid order book {}: {e}", path.display());
            ExitCode::from(EXIT_INVALID)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Simulate { scenario, out, hours, seed, verify } => simulate(&scenario, &out, hours, seed, verify),
        Command::Verify { ledger } => verify(&ledger),
        Command::Clear { book } => clear(&book),
    }
}
