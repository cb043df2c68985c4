//! Single-validator, hash-chained ledger with gas-metered receipts.
//!
//! Block hashes cover the block number, the previous block hash, the
//! timestamp, the ordered transaction hashes and a digest of the full
//! receipt list, so any edit to a sealed block changes its hash and, through
//! the `prev_hash` link, every hash after it.

mod call;
mod gas;
mod primitives;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use call::{Arg, ContractCall, Function};
pub use gas::{gas_limit_with_headroom, GasSchedule, Metering};
pub use primitives::{canonical_digest, canonical_json, Address, Digest, ADDRESS_LEN, DIGEST_LEN};

use crate::contract::{CallContext, ContractError, ElectricityMarket};
use crate::fixed::Wei;

/// Name the contract address is derived from.
pub const CONTRACT_NAME: &str = "ElectricityMarket";

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("unknown account {0}")]
    UnknownAccount(Address),
    #[error("account {0} already exists")]
    DuplicateAccount(Address),
    #[error("gas limit must be positive")]
    ZeroGasLimit,
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transaction {
    pub from: Address,
    pub to: Address,
    pub nonce: u64,
    pub value: Wei,
    pub gas_limit: u64,
    pub call: ContractCall,
}

impl Transaction {
    pub fn hash(&self) -> Digest {
        canonical_digest(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TxStatus {
    Success,
    Reverted,
}

impl TxStatus {
    /// Status line in the vocabulary of Ethereum tooling.
    pub fn describe(self) -> &'static str {
        match self {
            TxStatus::Success => "0x1 Transaction mined and execution succeeded",
            TxStatus::Reverted => "0x0 Transaction mined but execution failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Receipt {
    pub status: TxStatus,
    pub revert_reason: Option<String>,
    pub tx_hash: Digest,
    pub block_number: u64,
    /// Filled in when the containing block is sealed.
    pub block_hash: Option<Digest>,
    pub gas_used: u64,
    pub execution_cost: u64,
    pub tx: Transaction,
}

impl Receipt {
    pub fn succeeded(&self) -> bool {
        self.status == TxStatus::Success
    }

    pub fn from(&self) -> Address {
        self.tx.from
    }

    pub fn gas_limit(&self) -> u64 {
        self.tx.gas_limit
    }

    /// `ElectricityMarket.transferEther(address) 0x…`: the payee for
    /// transfers, the contract for everything else.
    pub fn to_descriptor(&self) -> String {
        let target = match (self.tx.call.function, self.tx.call.args.first()) {
            (Function::TransferEther, Some(Arg::Address(a))) => *a,
            _ => self.tx.to,
        };
        format!("{CONTRACT_NAME}.{} {target}", self.tx.call.function.signature())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub number: u64,
    pub prev_hash: Digest,
    pub block_hash: Digest,
    pub timestamp: u64,
    pub transactions: Vec<Receipt>,
}

#[derive(Serialize)]
struct BlockHeader<'a> {
    number: u64,
    prev_hash: &'a Digest,
    timestamp: u64,
    tx_hashes: Vec<&'a Digest>,
    receipts_root: Digest,
}

/// Digest of the receipt list with each receipt's `block_hash` blanked.
fn receipts_root(receipts: &[Receipt]) -> Digest {
    let stripped: Vec<Receipt> = receipts.iter().cloned().map(|r| Receipt { block_hash: None, ..r }).collect();
    canonical_digest(&stripped)
}

pub fn compute_block_hash(number: u64, prev_hash: &Digest, timestamp: u64, receipts: &[Receipt]) -> Digest {
    canonical_digest(&BlockHeader {
        number,
        prev_hash,
        timestamp,
        tx_hashes: receipts.iter().map(|r| &r.tx_hash).collect(),
        receipts_root: receipts_root(receipts),
    })
}

impl Block {
    pub fn recompute_hash(&self) -> Digest {
        compute_block_hash(self.number, &self.prev_hash, self.timestamp, &self.transactions)
    }

    pub fn to_canonical_json(&self) -> String {
        canonical_json(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IssueKind {
    Malformed { detail: String },
    NonCanonical,
    /// An earlier block could not be checked, so this one cannot be linked.
    UnverifiedPredecessor,
    NumberMismatch { expected: u64, found: u64 },
    PrevHashMismatch { expected: Digest, found: Digest },
    BlockHashMismatch { expected: Digest, found: Digest },
    TxHashMismatch { index: usize, expected: Digest, found: Digest },
    ReceiptBlockMismatch { index: usize },
    EmptyChain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Issue {
    pub block: u64,
    #[serde(flatten)]
    pub kind: IssueKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct VerificationReport {
    pub blocks_checked: usize,
    pub issues: Vec<Issue>,
}

impl VerificationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn first_divergence(&self) -> Option<u64> {
        self.issues.iter().map(|i| i.block).min()
    }

    /// Blocks with at least one issue, ascending.
    pub fn flagged_blocks(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.issues.iter().map(|i| i.block).collect();
        v.dedup();
        v
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            return write!(f, "chain valid: {} blocks", self.blocks_checked);
        }
        writeln!(f, "chain INVALID: {} issue(s) across {} blocks", self.issues.len(), self.blocks_checked)?;
        for issue in &self.issues {
            writeln!(f, "  block {}: {:?}", issue.block, issue.kind)?;
        }
        Ok(())
    }
}

/// Checks each block's internal consistency and its link to the hash the
/// verifier recomputed for the previous block, so one altered block flags
/// itself and every block after it.
fn verify_blocks<'a>(blocks: impl IntoIterator<Item = Option<&'a Block>>, report: &mut VerificationReport) {
    let mut expected_prev = Some(Digest::ZERO);
    for (index, block) in blocks.into_iter().enumerate() {
        let index = index as u64;
        report.blocks_checked += 1;
        let Some(block) = block else {
            expected_prev = None;
            continue;
        };
        let mut push = |kind| report.issues.push(Issue { block: index, kind });
        if block.number != index {
            push(IssueKind::NumberMismatch { expected: index, found: block.number });
        }
        for (i, r) in block.transactions.iter().enumerate() {
            let expected = r.tx.hash();
            if expected != r.tx_hash {
                push(IssueKind::TxHashMismatch { index: i, expected, found: r.tx_hash });
            }
            if r.block_number != block.number || r.block_hash != Some(block.block_hash) {
                push(IssueKind::ReceiptBlockMismatch { index: i });
            }
        }
        match expected_prev {
            Some(prev) => {
                if block.prev_hash != prev {
                    push(IssueKind::PrevHashMismatch { expected: prev, found: block.prev_hash });
                }
                let recomputed = compute_block_hash(block.number, &prev, block.timestamp, &block.transactions);
                if recomputed != block.block_hash {
                    push(IssueKind::BlockHashMismatch { expected: recomputed, found: block.block_hash });
                }
                expected_prev = Some(recomputed);
            }
            None => push(IssueKind::UnverifiedPredecessor),
        }
    }
    if report.blocks_checked == 0 {
        report.issues.push(Issue { block: 0, kind: IssueKind::EmptyChain });
    }
}

pub fn verify_blocks_slice(blocks: &[Block]) -> VerificationReport {
    let mut report = VerificationReport::default();
    verify_blocks(blocks.iter().map(Some), &mut report);
    report
}

/// Verifies a persisted ledger, one canonical block per line. Lines that do
/// not parse, or are not byte-identical to their canonical re-encoding, are
/// flagged along with every later block.
pub fn verify_jsonl<R: BufRead>(reader: R) -> std::io::Result<VerificationReport> {
    let mut parsed: Vec<Option<Block>> = Vec::new();
    let mut early = Vec::new();
    let mut content = Vec::new();
    let mut reader = reader;
    std::io::Read::read_to_end(&mut reader, &mut content)?;
    if !content.is_empty() && !content.ends_with(b"\n") {
        let last = content.iter().filter(|&&b| b == b'\n').count() as u64;
        early.push(Issue { block: last, kind: IssueKind::Malformed { detail: "missing trailing newline".into() } });
    }
    let body = content.strip_suffix(b"\n").unwrap_or(&content);
    let lines: Vec<&[u8]> = if content.is_empty() { Vec::new() } else { body.split(|&b| b == b'\n').collect() };
    for (index, line) in lines.into_iter().enumerate() {
        let index = index as u64;
        let parsed_line = std::str::from_utf8(line)
            .map_err(|e| e.to_string())
            .and_then(|text| serde_json::from_str::<Block>(text).map(|b| (text, b)).map_err(|e| e.to_string()));
        match parsed_line {
            Ok((text, block)) => {
                if block.to_canonical_json() != text {
                    early.push(Issue { block: index, kind: IssueKind::NonCanonical });
                }
                parsed.push(Some(block));
            }
            Err(detail) => {
                early.push(Issue { block: index, kind: IssueKind::Malformed { detail } });
                parsed.push(None);
            }
        }
    }
    let mut report = VerificationReport::default();
    verify_blocks(parsed.iter().map(Option::as_ref), &mut report);
    report.issues.extend(early);
    report.issues.sort_by_key(|i| i.block);
    Ok(report)
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<Block>, String> {
    let mut blocks = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        blocks.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(blocks)
}

pub fn write_jsonl<W: Write>(blocks: &[Block], mut writer: W) -> std::io::Result<()> {
    for block in blocks {
        writer.write_all(block.to_canonical_json().as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

/// The ledger plus the market contract it executes.
#[derive(Debug, Clone)]
pub struct Chain {
    balances: BTreeMap<Address, Wei>,
    nonces: BTreeMap<Address, u64>,
    contract: ElectricityMarket,
    contract_address: Address,
    gas: GasSchedule,
    blocks: Vec<Block>,
    pending: Vec<Receipt>,
}

impl Chain {
    pub fn new(oracle: Address, gas: GasSchedule) -> Self {
        let mut chain = Chain {
            balances: BTreeMap::new(),
            nonces: BTreeMap::new(),
            contract: ElectricityMarket::new(oracle),
            contract_address: Address::derive(CONTRACT_NAME),
            gas,
            blocks: Vec::new(),
            pending: Vec::new(),
        };
        chain.balances.insert(oracle, Wei::ZERO);
        chain
    }

    /// Funds an account outside of any transaction (genesis allocation).
    pub fn open_account(&mut self, address: Address, balance: Wei) -> Result<(), LedgerError> {
        if self.balances.contains_key(&address) && address != self.contract.oracle() {
            return Err(LedgerError::DuplicateAccount(address));
        }
        self.balances.insert(address, balance);
        Ok(())
    }

    pub fn balance(&self, address: &Address) -> Option<Wei> {
        self.balances.get(address).copied()
    }

    pub fn balances(&self) -> &BTreeMap<Address, Wei> {
        &self.balances
    }

    pub fn total_balance(&self) -> u128 {
        self.balances.values().map(|w| w.0).sum()
    }

    pub fn contract(&self) -> &ElectricityMarket {
        &self.contract
    }

    pub fn contract_address(&self) -> Address {
        self.contract_address
    }

    pub fn gas_schedule(&self) -> &GasSchedule {
        &self.gas
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn pending(&self) -> &[Receipt] {
        &self.pending
    }

    pub fn head(&self) -> Option<&Block> {
        self.blocks.last()
    }

    pub fn next_block_number(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn estimate_gas(&self, call: &ContractCall) -> u64 {
        self.gas.estimate(call)
    }

    /// Meters and executes one call and appends its receipt to the pending
    /// block. Calls that run out of gas or fail inside the contract are
    /// included as reverted, consume gas, and leave every balance and all
    /// contract state exactly as before.
    pub fn submit_transaction(&mut self, from: Address, call: ContractCall, value: Wei, gas_limit: u64) -> Result<Receipt, LedgerError> {
        if !self.balances.contains_key(&from) {
            return Err(LedgerError::UnknownAccount(from));
        }
        if gas_limit == 0 {
            return Err(LedgerError::ZeroGasLimit);
        }
        let nonce = self.nonces.entry(from).or_insert(0);
        let tx = Transaction { from, to: self.contract_address, nonce: *nonce, value, gas_limit, call };
        *nonce += 1;

        let metering = Metering::charge(&self.gas, &tx.call, gas_limit);
        let outcome = if metering.out_of_gas {
            Err("out of gas".to_string())
        } else {
            let snapshot = (self.contract.clone(), self.balances.clone());
            let ctx = CallContext { from, value, window: tx.call.window };
            match self.contract.execute(&ctx, &tx.call, &mut self.balances) {
                Ok(()) => Ok(()),
                Err(e) => {
                    (self.contract, self.balances) = snapshot;
                    Err(e.to_string())
                }
            }
        };

        let (status, revert_reason) = match outcome {
            Ok(()) => (TxStatus::Success, None),
            Err(reason) => (TxStatus::Reverted, Some(reason)),
        };
        let receipt = Receipt {
            status,
            revert_reason,
            tx_hash: tx.hash(),
            block_number: self.next_block_number(),
            block_hash: None,
            gas_used: metering.gas_used,
            execution_cost: metering.execution_cost,
            tx,
        };
        self.pending.push(receipt.clone());
        Ok(receipt)
    }

    /// End-of-window housekeeping run by the validator, outside any transaction.
    pub fn close_window(&mut self, window: u64) -> Result<(), LedgerError> {
        self.contract.close_window(window)?;
        Ok(())
    }

    /// Seals pending receipts into the next block. The first seal is the
    /// genesis block with an all-zero `prev_hash`.
    pub fn seal_block(&mut self, timestamp: u64) -> &Block {
        let number = self.next_block_number();
        let prev_hash = self.blocks.last().map_or(Digest::ZERO, |b| b.block_hash);
        let mut transactions = std::mem::take(&mut self.pending);
        let block_hash = compute_block_hash(number, &prev_hash, timestamp, &transactions);
        for r in &mut transactions {
            r.block_hash = Some(block_hash);
        }
        self.blocks.push(Block { number, prev_hash, block_hash, timestamp, transactions });
        self.blocks.last().expect("just pushed")
    }

    pub fn verify_chain(&self) -> VerificationReport {
        verify_blocks_slice(&self.blocks)
    }

    pub fn write_jsonl<W: Write>(&self, writer: W) -> std::io::Result<()> {
        write_jsonl(&self.blocks, writer)
    }

    /// Sealed receipts in chain order.
    pub fn receipts(&self) -> impl Iterator<Item = &Receipt> {
        self.blocks.iter().flat_map(|b| b.transactions.iter())
    }

    #[cfg(test)]
    pub(crate) fn blocks_mut(&mut self) -> &mut Vec<Block> {
        &mut self.blocks
    }
}
