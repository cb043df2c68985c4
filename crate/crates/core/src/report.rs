//! CSV and JSONL outputs of a simulation run.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::harness::HourReport;
use crate::ledger::Chain;

pub const MCP_CSV: &str = "mcp.csv";
pub const WELFARE_CSV: &str = "welfare.csv";
pub const PRODUCTION_CSV: &str = "production.csv";
pub const RECEIPTS_CSV: &str = "receipts.csv";
pub const LEDGER_JSONL: &str = "ledger.jsonl";

fn writer(path: &Path) -> std::io::Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(BufWriter::new(File::create(path)?)))
}

fn num(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" { "0.000000".to_string() } else { s }
}

/// Writes the five run outputs into `out_dir`, creating it if needed, and
/// returns their paths. Hours without a price leave the field empty.
pub fn emit_reports(reports: &[HourReport], chain: &Chain, out_dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let paths: Vec<PathBuf> = [MCP_CSV, WELFARE_CSV, PRODUCTION_CSV, RECEIPTS_CSV, LEDGER_JSONL].iter().map(|f| out_dir.join(f)).collect();

    let mut w = writer(&paths[0])?;
    w.write_record(["window", "mcp"])?;
    for r in reports {
        w.write_record([r.window.to_string(), r.mcp.map(|p| p.to_string()).unwrap_or_default()])?;
    }
    w.flush()?;

    let mut w = writer(&paths[1])?;
    w.write_record(["window", "social_welfare"])?;
    for r in reports {
        w.write_record([r.window.to_string(), r.social_welfare.map(num).unwrap_or_default()])?;
    }
    w.flush()?;

    let mut w = writer(&paths[2])?;
    w.write_record(["window", "prosumer", "predicted", "optimal", "settled"])?;
    for r in reports {
        for p in &r.prosumers {
            w.write_record([
                r.window.to_string(),
                p.name.clone(),
                p.predicted_production.to_string(),
                num(p.optimal_production),
                p.settled_quantity.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let mut w = writer(&paths[3])?;
    w.write_record(["status", "tx_hash", "block_hash", "block_number", "from", "to", "gas", "transaction_cost", "execution_cost"])?;
    for receipt in chain.receipts() {
        w.write_record([
            receipt.status.describe().to_string(),
            receipt.tx_hash.to_string(),
            receipt.block_hash.map(|h| h.to_string()).unwrap_or_default(),
            receipt.block_number.to_string(),
            receipt.from().to_string(),
            receipt.to_descriptor(),
            receipt.gas_limit().to_string(),
            receipt.gas_used.to_string(),
            receipt.execution_cost.to_string(),
        ])?;
    }
    w.flush()?;

    let mut ledger = BufWriter::new(File::create(&paths[4])?);
    chain.write_jsonl(&mut ledger)?;
    ledger.flush()?;
    Ok(paths)
}
