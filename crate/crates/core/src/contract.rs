//! The ElectricityMarket contract: oracle price push, energy registration,
//! smart-meter validation and meter-gated payment.
//!
//! Every window moves through the same lifecycle:
//!
//! ```text
//! setPricePerUnit ─► sell/buyElectricity ─► validateMeter ─► transferEther* ─► closed
//! ```
//!
//! Contract code only runs inside [`Chain::submit_transaction`], which
//! snapshots contract state and balances and restores them on revert.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixed::{Fixed, Wei};
use crate::ledger::{gas_limit_with_headroom, Address, Arg, Chain, ContractCall, Function, LedgerError, Receipt};

/// Delivery shortfall still counted as full delivery.
pub const METER_TOLERANCE: Fixed = Fixed::from_micros(1_000);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContractError {
    #[error("caller {0} is not the oracle")]
    NotOracle(Address),
    #[error("window {0} is already settled")]
    WindowSettled(u64),
    #[error("window {0} has no price set")]
    NoPrice(u64),
    #[error("window {0} meter readings already submitted")]
    AlreadyValidated(u64),
    #[error("window {0} has not been validated")]
    NotValidated(u64),
    #[error("quantity must be positive")]
    NonPositiveQuantity,
    #[error("price must be positive")]
    NonPositivePrice,
    #[error("allocation for {0} must be non-negative")]
    NegativeAllocation(Address),
    #[error("duplicate entry for {0}")]
    DuplicateEntry(Address),
    #[error("sell of {requested} exceeds remaining allocation {remaining}")]
    ExceedsAllocation { requested: Fixed, remaining: Fixed },
    #[error("insufficient funds: need {needed}, have {available}")]
    InsufficientFunds { needed: Wei, available: Wei },
    #[error("no validated trade from {buyer} to {seller} in window {window}")]
    NoTrade { buyer: Address, seller: Address, window: u64 },
    #[error("attached value {attached} does not match payment {expected}")]
    ValueMismatch { attached: Wei, expected: Wei },
    #[error("malformed arguments for {0}")]
    BadArguments(Function),
    #[error("amount overflow")]
    Overflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TradeStatus {
    Pending,
    Validated,
    Settled,
    /// Validated but the payment reverted.
    Failed,
    /// Never validated, or nothing delivered.
    Voided,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trade {
    pub buyer: Address,
    pub seller: Address,
    /// Quantity committed at registration.
    pub quantity: Fixed,
    /// Quantity confirmed by the meters; payment is for this amount.
    pub validated_quantity: Option<Fixed>,
    pub status: TradeStatus,
}

impl Trade {
    pub fn validated(&self) -> bool {
        self.validated_quantity.is_some()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowState {
    pub price_per_unit: Option<Fixed>,
    pub allocations: BTreeMap<Address, Fixed>,
    /// Registered sell quantities per address.
    pub offered: BTreeMap<Address, Fixed>,
    /// Registered buy quantities per address.
    pub requested: BTreeMap<Address, Fixed>,
    pub open_sells: VecDeque<(Address, Fixed)>,
    pub open_buys: VecDeque<(Address, Fixed)>,
    pub trades: Vec<Trade>,
    pub meter_readings: Option<BTreeMap<Address, Fixed>>,
    pub settled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OraclePush {
    pub window: u64,
    pub mcp: Fixed,
    pub allocations: Vec<(Address, Fixed)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeterReading {
    pub address: Address,
    pub window: u64,
    /// Positive for energy injected, negative for energy consumed.
    pub delivered: Fixed,
}

/// Typed view of a [`ContractCall`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MarketCall {
    SetPricePerUnit { mcp: Fixed, allocations: Vec<(Address, Fixed)> },
    SellElectricity { quantity: Fixed },
    BuyElectricity { quantity: Fixed },
    ValidateMeter { readings: Vec<(Address, Fixed)> },
    TransferEther { seller: Address },
}

fn fixed_arg(v: Fixed) -> Arg {
    Arg::Int(v.micros() as i128)
}

fn pairs_arg(pairs: &[(Address, Fixed)]) -> Arg {
    Arg::List(pairs.iter().map(|(a, q)| Arg::List(vec![Arg::Address(*a), fixed_arg(*q)])).collect())
}

impl MarketCall {
    pub fn function(&self) -> Function {
        match self {
            MarketCall::SetPricePerUnit { .. } => Function::SetPricePerUnit,
            MarketCall::SellElectricity { .. } => Function::SellElectricity,
            MarketCall::BuyElectricity { .. } => Function::BuyElectricity,
            MarketCall::ValidateMeter { .. } => Function::ValidateMeter,
            MarketCall::TransferEther { .. } => Function::TransferEther,
        }
    }

    pub fn encode(&self, window: u64) -> ContractCall {
        let args = match self {
            MarketCall::SetPricePerUnit { mcp, allocations } => vec![fixed_arg(*mcp), pairs_arg(allocations)],
            MarketCall::SellElectricity { quantity } | MarketCall::BuyElectricity { quantity } => vec![fixed_arg(*quantity)],
            MarketCall::ValidateMeter { readings } => vec![pairs_arg(readings)],
            MarketCall::TransferEther { seller } => vec![Arg::Address(*seller)],
        };
        ContractCall::new(self.function(), args, window)
    }

    pub fn decode(call: &ContractCall) -> Result<MarketCall, ContractError> {
        let bad = || ContractError::BadArguments(call.function);
        let fixed = |a: &Arg| -> Result<Fixed, ContractError> {
            let v = a.as_int().ok_or_else(bad)?;
            i64::try_from(v).map(Fixed::from_micros).map_err(|_| bad())
        };
        let pairs = |a: &Arg| -> Result<Vec<(Address, Fixed)>, ContractError> {
            a.as_list()
                .ok_or_else(bad)?
                .iter()
                .map(|pair| match pair.as_list() {
                    Some([addr, q]) => Ok((addr.as_address().ok_or_else(bad)?, fixed(q)?)),
                    _ => Err(bad()),
                })
                .collect()
        };
        let args = call.args.as_slice();
        Ok(match (call.function, args) {
            (Function::SetPricePerUnit, [mcp, allocs]) => MarketCall::SetPricePerUnit { mcp: fixed(mcp)?, allocations: pairs(allocs)? },
            (Function::SellElectricity, [q]) => MarketCall::SellElectricity { quantity: fixed(q)? },
            (Function::BuyElectricity, [q]) => MarketCall::BuyElectricity { quantity: fixed(q)? },
            (Function::ValidateMeter, [readings]) => MarketCall::ValidateMeter { readings: pairs(readings)? },
            (Function::TransferEther, [seller]) => MarketCall::TransferEther { seller: seller.as_address().ok_or_else(bad)? },
            _ => return Err(bad()),
        })
    }
}

/// Who is calling, with how much value attached, in which window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CallContext {
    pub from: Address,
    pub value: Wei,
    pub window: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElectricityMarket {
    oracle: Address,
    windows: BTreeMap<u64, WindowState>,
}

impl ElectricityMarket {
    pub fn new(oracle: Address) -> Self {
        ElectricityMarket { oracle, windows: BTreeMap::new() }
    }

    pub fn oracle(&self) -> Address {
        self.oracle
    }

    pub fn window(&self, window: u64) -> Option<&WindowState> {
        self.windows.get(&window)
    }

    pub fn windows(&self) -> &BTreeMap<u64, WindowState> {
        &self.windows
    }

    fn open_window(&mut self, window: u64) -> Result<&mut WindowState, ContractError> {
        let state = self.windows.entry(window).or_default();
        if state.settled {
            return Err(ContractError::WindowSettled(window));
        }
        Ok(state)
    }

    fn priced_window(&mut self, window: u64) -> Result<(&mut WindowState, Fixed), ContractError> {
        let state = self.open_window(window)?;
        let price = state.price_per_unit.ok_or(ContractError::NoPrice(window))?;
        if state.meter_readings.is_some() {
            return Err(ContractError::AlreadyValidated(window));
        }
        Ok((state, price))
    }

    /// Runs one call. The caller is responsible for rolling back on `Err`.
    pub fn execute(&mut self, ctx: &CallContext, call: &ContractCall, balances: &mut BTreeMap<Address, Wei>) -> Result<(), ContractError> {
        let decoded = MarketCall::decode(call)?;
        if !matches!(decoded, MarketCall::TransferEther { .. }) && ctx.value != Wei::ZERO {
            return Err(ContractError::ValueMismatch { attached: ctx.value, expected: Wei::ZERO });
        }
        match decoded {
            MarketCall::SetPricePerUnit { mcp, allocations } => self.set_price_per_unit(ctx, mcp, allocations),
            MarketCall::SellElectricity { quantity } => self.sell_electricity(ctx, quantity),
            MarketCall::BuyElectricity { quantity } => self.buy_electricity(ctx, quantity, balances),
            MarketCall::ValidateMeter { readings } => self.validate_meter(ctx, readings),
            MarketCall::TransferEther { seller } => self.transfer_ether(ctx, seller, balances),
        }
    }

    fn set_price_per_unit(&mut self, ctx: &CallContext, mcp: Fixed, allocations: Vec<(Address, Fixed)>) -> Result<(), ContractError> {
        if ctx.from != self.oracle {
            return Err(ContractError::NotOracle(ctx.from));
        }
        if !mcp.is_positive() {
            return Err(ContractError::NonPositivePrice);
        }
        let mut table = BTreeMap::new();
        for (addr, q) in allocations {
            if q.is_negative() {
                return Err(ContractError::NegativeAllocation(addr));
            }
            if table.insert(addr, q).is_some() {
                return Err(ContractError::DuplicateEntry(addr));
            }
        }
        let state = self.open_window(ctx.window)?;
        // last write wins until the window closes
        state.price_per_unit = Some(mcp);
        state.allocations = table;
        Ok(())
    }

    fn sell_electricity(&mut self, ctx: &CallContext, quantity: Fixed) -> Result<(), ContractError> {
        if !quantity.is_positive() {
            return Err(ContractError::NonPositiveQuantity);
        }
        let (state, _) = self.priced_window(ctx.window)?;
        let allocation = state.allocations.get(&ctx.from).copied().unwrap_or(Fixed::ZERO);
        let already = state.offered.get(&ctx.from).copied().unwrap_or(Fixed::ZERO);
        let remaining = allocation - already;
        if quantity > remaining {
            return Err(ContractError::ExceedsAllocation { requested: quantity, remaining });
        }
        *state.offered.entry(ctx.from).or_default() += quantity;
        let mut left = quantity;
        while left.is_positive() {
            let Some((buyer, want)) = state.open_buys.front_mut() else { break };
            let q = left.min(*want);
            state.trades.push(Trade { buyer: *buyer, seller: ctx.from, quantity: q, validated_quantity: None, status: TradeStatus::Pending });
            *want -= q;
            left -= q;
            if !want.is_positive() {
                state.open_buys.pop_front();
            }
        }
        if left.is_positive() {
            state.open_sells.push_back((ctx.from, left));
        }
        Ok(())
    }

    fn buy_electricity(&mut self, ctx: &CallContext, quantity: Fixed, balances: &BTreeMap<Address, Wei>) -> Result<(), ContractError> {
        if !quantity.is_positive() {
            return Err(ContractError::NonPositiveQuantity);
        }
        let (state, price) = self.priced_window(ctx.window)?;
        let needed = price.times(quantity).ok_or(ContractError::Overflow)?;
        let available = balances.get(&ctx.from).copied().unwrap_or(Wei::ZERO);
        if available < needed {
            return Err(ContractError::InsufficientFunds { needed, available });
        }
        *state.requested.entry(ctx.from).or_default() += quantity;
        let mut left = quantity;
        while left.is_positive() {
            let Some((seller, offer)) = state.open_sells.front_mut() else { break };
            let q = left.min(*offer);
            state.trades.push(Trade { buyer: ctx.from, seller: *seller, quantity: q, validated_quantity: None, status: TradeStatus::Pending });
            *offer -= q;
            left -= q;
            if !offer.is_positive() {
                state.open_sells.pop_front();
            }
        }
        if left.is_positive() {
            state.open_buys.push_back((ctx.from, left));
        }
        Ok(())
    }

    /// Confirms each pending trade against delivered energy, in trade order.
    ///
    /// A party's reading is drawn down across its trades. A trade whose
    /// seller injection and buyer consumption both cover it within
    /// [`METER_TOLERANCE`] validates at full quantity; otherwise it shrinks
    /// to what both sides covered, or is voided when that is nothing.
    /// Trades with a party lacking a reading stay pending and are voided
    /// when the window closes.
    fn validate_meter(&mut self, ctx: &CallContext, readings: Vec<(Address, Fixed)>) -> Result<(), ContractError> {
        if ctx.from != self.oracle {
            return Err(ContractError::NotOracle(ctx.from));
        }
        let (state, _) = self.priced_window(ctx.window)?;
        let mut table = BTreeMap::new();
        for (addr, delivered) in readings {
            if table.insert(addr, delivered).is_some() {
                return Err(ContractError::DuplicateEntry(addr));
            }
        }
        let mut injected: BTreeMap<Address, Fixed> = table.iter().map(|(a, d)| (*a, (*d).max(Fixed::ZERO))).collect();
        let mut consumed: BTreeMap<Address, Fixed> = table.iter().map(|(a, d)| (*a, (-*d).max(Fixed::ZERO))).collect();
        for trade in state.trades.iter_mut().filter(|t| t.status == TradeStatus::Pending) {
            let (Some(inj), Some(con)) = (injected.get(&trade.seller).copied(), consumed.get(&trade.buyer).copied()) else {
                continue;
            };
            let covered = inj.min(con);
            let confirmed = if covered + METER_TOLERANCE >= trade.quantity { trade.quantity } else { covered };
            let draw = confirmed.min(covered);
            injected.insert(trade.seller, inj - draw);
            consumed.insert(trade.buyer, con - draw);
            if confirmed.is_positive() {
                trade.validated_quantity = Some(confirmed);
                trade.status = TradeStatus::Validated;
            } else {
                trade.status = TradeStatus::Voided;
            }
        }
        state.meter_readings = Some(table);
        Ok(())
    }

    fn transfer_ether(&mut self, ctx: &CallContext, seller: Address, balances: &mut BTreeMap<Address, Wei>) -> Result<(), ContractError> {
        let window = ctx.window;
        let state = self.open_window(window)?;
        if state.meter_readings.is_none() {
            return Err(ContractError::NotValidated(window));
        }
        let price = state.price_per_unit.ok_or(ContractError::NoPrice(window))?;
        let trade = state
            .trades
            .iter_mut()
            .find(|t| t.buyer == ctx.from && t.seller == seller && t.status == TradeStatus::Validated)
            .ok_or(ContractError::NoTrade { buyer: ctx.from, seller, window })?;
        let quantity = trade.validated_quantity.ok_or(ContractError::NotValidated(window))?;
        let amount = price.times(quantity).ok_or(ContractError::Overflow)?;
        if ctx.value != amount {
            return Err(ContractError::ValueMismatch { attached: ctx.value, expected: amount });
        }
        let available = balances.get(&ctx.from).copied().unwrap_or(Wei::ZERO);
        let debited = available.checked_sub(amount).ok_or(ContractError::InsufficientFunds { needed: amount, available })?;
        let seller_balance = balances.get(&seller).copied().unwrap_or(Wei::ZERO);
        let credited = seller_balance.checked_add(amount).ok_or(ContractError::Overflow)?;
        balances.insert(ctx.from, debited);
        balances.insert(seller, credited);
        trade.status = TradeStatus::Settled;
        Ok(())
    }

    /// Freezes a window: validated trades whose payment never went through
    /// become `Failed`, unvalidated ones `Voided`.
    pub fn close_window(&mut self, window: u64) -> Result<&WindowState, ContractError> {
        let state = self.open_window(window)?;
        for trade in &mut state.trades {
            trade.status = match trade.status {
                TradeStatus::Pending => TradeStatus::Voided,
                TradeStatus::Validated => TradeStatus::Failed,
                s => s,
            };
        }
        state.settled = true;
        Ok(state)
    }
}

/// Submits market calls through a [`Chain`], attaching gas limits with
/// headroom over the schedule's estimate.
pub struct MarketClient<'a> {
    chain: &'a mut Chain,
}

impl<'a> MarketClient<'a> {
    pub fn new(chain: &'a mut Chain) -> Self {
        MarketClient { chain }
    }

    pub fn chain(&self) -> &Chain {
        self.chain
    }

    pub fn call(&mut self, from: Address, window: u64, call: MarketCall, value: Wei) -> Result<Receipt, LedgerError> {
        let call = call.encode(window);
        let limit = gas_limit_with_headroom(self.chain.estimate_gas(&call));
        self.chain.submit_transaction(from, call, value, limit)
    }

    pub fn set_price_per_unit(&mut self, push: &OraclePush) -> Result<Receipt, LedgerError> {
        let oracle = self.chain.contract().oracle();
        self.call(oracle, push.window, MarketCall::SetPricePerUnit { mcp: push.mcp, allocations: push.allocations.clone() }, Wei::ZERO)
    }

    pub fn sell_electricity(&mut self, seller: Address, window: u64, quantity: Fixed) -> Result<Receipt, LedgerError> {
        self.call(seller, window, MarketCall::SellElectricity { quantity }, Wei::ZERO)
    }

    pub fn buy_electricity(&mut self, buyer: Address, window: u64, quantity: Fixed) -> Result<Receipt, LedgerError> {
        self.call(buyer, window, MarketCall::BuyElectricity { quantity }, Wei::ZERO)
    }

    pub fn validate_meter(&mut self, window: u64, readings: &[MeterReading]) -> Result<Receipt, LedgerError> {
        let mut seen = BTreeSet::new();
        let pairs = readings
            .iter()
            .filter(|r| r.window == window && seen.insert(r.address))
            .map(|r| (r.address, r.delivered))
            .collect();
        let oracle = self.chain.contract().oracle();
        self.call(oracle, window, MarketCall::ValidateMeter { readings: pairs }, Wei::ZERO)
    }

    /// Pays every validated trade of `window` from its buyer, one
    /// transaction per trade in trade order, then closes the window.
    pub fn transfer_ether(&mut self, window: u64) -> Result<Vec<Receipt>, LedgerError> {
        let (price, trades) = match self.chain.contract().window(window) {
            Some(state) => (
                state.price_per_unit,
                state
                    .trades
                    .iter()
                    .filter(|t| t.status == TradeStatus::Validated)
                    .map(|t| (t.buyer, t.seller, t.validated_quantity.unwrap_or(Fixed::ZERO)))
                    .collect::<Vec<_>>(),
            ),
            None => (None, Vec::new()),
        };
        let mut receipts = Vec::with_capacity(trades.len());
        for (buyer, seller, quantity) in trades {
            let value = price.and_then(|p| p.times(quantity)).unwrap_or(Wei::ZERO);
            receipts.push(self.call(buyer, window, MarketCall::TransferEther { seller }, value)?);
        }
        self.chain.close_window(window)?;
        Ok(receipts)
    }
}
