//! Hourly market pipeline.
//!
//! For each window: assign roles from net position, build the order book,
//! clear it, allocate the cleared quantity across sellers with dual ascent,
//! push price and allocations through the oracle, register sells and buys,
//! validate against smart-meter readings, pay, and seal one block.
//! Block `w + 1` always belongs to window `w`; block 0 is genesis.

use std::collections::BTreeMap;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::clearing::{build_demand_curve, build_supply_curve, clear_market, Ask, Bid, ClearingError, ClearingOutcome};
use crate::contract::{MarketClient, MeterReading, OraclePush, TradeStatus};
use crate::dispatch::{run_dual_ascent, social_welfare, DispatchError};
use crate::fixed::{apportion, Fixed};
use crate::ledger::{Address, Chain, Digest, LedgerError};
use crate::scenario::Scenario;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("window {requested} requested but window {expected} is next")]
    OutOfOrder { requested: usize, expected: usize },
    #[error("window {0} is beyond the scenario's hours")]
    NoSuchWindow(usize),
    #[error(transparent)]
    Clearing(#[from] ClearingError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Buyer,
    Seller,
    Inactive,
}

/// Role and traded quantity from net position `production − demand`.
pub fn assign_role(production: Fixed, demand: Fixed) -> (Role, Fixed) {
    let net = production - demand;
    if net.is_positive() {
        (Role::Seller, net)
    } else if net.is_negative() {
        (Role::Buyer, -net)
    } else {
        (Role::Inactive, Fixed::ZERO)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HourStatus {
    Settled,
    /// One side of the book was empty; nothing to clear.
    Idle,
    NoCross,
    NotConverged,
}

impl HourStatus {
    pub fn failed(self) -> bool {
        matches!(self, HourStatus::NoCross | HourStatus::NotConverged)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProsumerHour {
    pub name: String,
    pub role: Role,
    pub predicted_production: Fixed,
    pub demand: Fixed,
    /// Demand plus optimal export for dispatched sellers; predicted otherwise.
    pub optimal_production: f64,
    /// Energy moved in settled trades, either direction.
    pub settled_quantity: Fixed,
    /// Balance change in wei.
    pub ether_delta: i128,
}

/// Inputs and output of the hour's allocation, kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispatchDetail {
    /// Prosumer indices of the producers (sellers), in allocation order.
    pub producers: Vec<usize>,
    pub allocations: Vec<f64>,
    /// Allocations after rounding to micro-units so they sum to the cleared quantity.
    pub committed: Vec<Fixed>,
    /// Each seller's offered surplus at predicted production.
    pub predicted_offers: Vec<Fixed>,
    /// Prosumer indices of the consumers (buyers).
    pub consumers: Vec<usize>,
    pub demands: Vec<Fixed>,
    pub lambda: f64,
    pub iterations: usize,
    pub imbalance: f64,
    pub converged: bool,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HourReport {
    pub window: u64,
    pub status: HourStatus,
    pub mcp: Option<Fixed>,
    pub cleared_quantity: Fixed,
    pub social_welfare: Option<f64>,
    pub converged: bool,
    pub dispatch: Option<DispatchDetail>,
    pub prosumers: Vec<ProsumerHour>,
    pub block_number: u64,
    pub block_hash: Digest,
}

impl HourReport {
    pub fn settled_sold(&self) -> Fixed {
        self.prosumers.iter().filter(|p| p.role == Role::Seller).map(|p| p.settled_quantity).sum()
    }

    pub fn settled_bought(&self) -> Fixed {
        self.prosumers.iter().filter(|p| p.role == Role::Buyer).map(|p| p.settled_quantity).sum()
    }

    pub fn ether_delta_sum(&self) -> i128 {
        self.prosumers.iter().map(|p| p.ether_delta).sum()
    }
}

/// A scenario bound to its ledger, run one window at a time.
pub struct Simulation {
    scenario: Scenario,
    chain: Chain,
    addresses: Vec<Address>,
    rng: ChaCha8Rng,
    next_window: usize,
    meter_overrides: BTreeMap<(usize, usize), Option<Fixed>>,
}

impl Simulation {
    /// Funds every prosumer and seals the genesis block.
    pub fn new(scenario: Scenario, seed: u64) -> Result<Self, HarnessError> {
        let oracle = Address::derive(&scenario.oracle);
        let mut chain = Chain::new(oracle, scenario.gas);
        let addresses: Vec<Address> = scenario.prosumers.iter().map(|p| Address::derive(&p.name)).collect();
        for (p, a) in scenario.prosumers.iter().zip(&addresses) {
            chain.open_account(*a, p.balance)?;
        }
        chain.seal_block(0);
        Ok(Simulation {
            scenario,
            chain,
            addresses,
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_window: 0,
            meter_overrides: BTreeMap::new(),
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn address(&self, prosumer: usize) -> Address {
        self.addresses[prosumer]
    }

    /// Replaces prosumer `i`'s meter reading in window `w`; `None` drops
    /// the reading entirely.
    pub fn override_meter(&mut self, window: usize, prosumer: usize, reading: Option<Fixed>) {
        self.meter_overrides.insert((window, prosumer), reading);
    }

    /// Runs the first `hours` windows (all when `None`), stopping at the
    /// first hard error. Failed hours are reported, not raised.
    pub fn run(&mut self, hours: Option<usize>) -> Result<Vec<HourReport>, HarnessError> {
        let total = hours.unwrap_or(self.scenario.hours.len()).min(self.scenario.hours.len());
        let mut reports = Vec::with_capacity(total);
        for w in self.next_window..total {
            reports.push(self.run_hour(w)?);
        }
        Ok(reports)
    }

    pub fn run_hour(&mut self, window: usize) -> Result<HourReport, HarnessError> {
        if window >= self.scenario.hours.len() {
            return Err(HarnessError::NoSuchWindow(window));
        }
        if window != self.next_window {
            return Err(HarnessError::OutOfOrder { requested: window, expected: self.next_window });
        }
        self.next_window += 1;
        let w = window as u64;
        let hour = self.scenario.hours[window].clone();
        let n = self.scenario.prosumers.len();

        let roles: Vec<(Role, Fixed)> = (0..n).map(|i| assign_role(hour.production[i], hour.demand[i])).collect();
        let mut prosumers: Vec<ProsumerHour> = (0..n)
            .map(|i| ProsumerHour {
                name: self.scenario.prosumers[i].name.clone(),
                role: roles[i].0,
                predicted_production: hour.production[i],
                demand: hour.demand[i],
                optimal_production: hour.production[i].to_f64(),
                settled_quantity: Fixed::ZERO,
                ether_delta: 0,
            })
            .collect();

        let mut bids = Vec::new();
        let mut asks = Vec::new();
        for (i, (role, qty)) in roles.iter().enumerate() {
            let name = &self.scenario.prosumers[i].name;
            match role {
                Role::Buyer => bids.push(Bid::new(name.clone(), self.scenario.bid_price(window, i), *qty)),
                Role::Seller => asks.push(Ask::new(name.clone(), self.scenario.ask_price(window, i), *qty)),
                Role::Inactive => {}
            }
        }

        let idle = |status, mcp, cleared, detail, chain: &mut Chain, prosumers| {
            let block = chain.seal_block(w);
            HourReport {
                window: w,
                status,
                mcp,
                cleared_quantity: cleared,
                social_welfare: None,
                converged: false,
                dispatch: detail,
                prosumers,
                block_number: block.number,
                block_hash: block.block_hash,
            }
        };

        if bids.is_empty() || asks.is_empty() {
            info!("window {w}: one-sided book ({} bids, {} asks), sealing empty block", bids.len(), asks.len());
            return Ok(idle(HourStatus::Idle, None, Fixed::ZERO, None, &mut self.chain, prosumers));
        }
        let demand_curve = build_demand_curve(&bids)?;
        let supply_curve = build_supply_curve(&asks)?;
        let cleared = match clear_market(&demand_curve, &supply_curve)? {
            ClearingOutcome::Cleared(r) => r,
            ClearingOutcome::NoCross { best_bid, best_ask } => {
                warn!("window {w}: no cross (best bid {best_bid} < best ask {best_ask})");
                return Ok(idle(HourStatus::NoCross, None, Fixed::ZERO, None, &mut self.chain, prosumers));
            }
        };
        let mcp = cleared.price;

        let index_of = |name: &str| self.scenario.prosumers.iter().position(|p| p.name == name).expect("order from known prosumer");
        let sellers: Vec<usize> = (0..n).filter(|&i| roles[i].0 == Role::Seller).collect();
        let buyers: Vec<usize> = (0..n).filter(|&i| roles[i].0 == Role::Buyer).collect();
        let mut fills = vec![Fixed::ZERO; n];
        for f in &cleared.matched_buy_orders {
            fills[index_of(&f.participant)] += f.quantity;
        }
        let demands: Vec<Fixed> = buyers.iter().map(|&j| fills[j]).collect();
        let producer_params: Vec<_> = sellers.iter().map(|&i| self.scenario.prosumers[i].producer).collect();
        let consumer_params: Vec<_> = buyers.iter().map(|&j| self.scenario.prosumers[j].consumer).collect();
        let demand_f64: Vec<f64> = demands.iter().map(|d| d.to_f64()).collect();

        let result = run_dual_ascent(mcp.to_f64(), &producer_params, &demand_f64, &consumer_params, &self.scenario.solver)?;
        let committed = apportion(cleared.quantity, &result.allocations);
        let mut detail = DispatchDetail {
            producers: sellers.clone(),
            allocations: result.allocations.clone(),
            committed: committed.clone(),
            predicted_offers: sellers.iter().map(|&i| roles[i].1).collect(),
            consumers: buyers.clone(),
            demands: demands.clone(),
            lambda: result.lambda_final,
            iterations: result.iterations,
            imbalance: result.imbalance_final,
            converged: result.converged,
            diagnostic: result.diagnostic.clone(),
        };
        if !result.converged {
            warn!("window {w}: dispatch did not converge: {}", result.diagnostic.as_deref().unwrap_or("?"));
            detail.committed = Vec::new();
            return Ok(idle(HourStatus::NotConverged, Some(mcp), cleared.quantity, Some(detail), &mut self.chain, prosumers));
        }
        for (k, &i) in sellers.iter().enumerate() {
            prosumers[i].optimal_production = hour.demand[i].to_f64() + result.allocations[k];
        }

        let balances_before: Vec<u128> = self.addresses.iter().map(|a| self.chain.balance(a).map_or(0, |b| b.0)).collect();

        let mut client = MarketClient::new(&mut self.chain);
        let push = OraclePush {
            window: w,
            mcp,
            allocations: sellers
                .iter()
                .zip(&committed)
                .filter(|(_, q)| q.is_positive())
                .map(|(&i, q)| (self.addresses[i], *q))
                .collect(),
        };
        let pushed = client.set_price_per_unit(&push)?;
        if !pushed.succeeded() {
            warn!("window {w}: setPricePerUnit reverted: {:?}", pushed.revert_reason);
        }
        for (&i, q) in sellers.iter().zip(&committed) {
            if q.is_positive() {
                let r = client.sell_electricity(self.addresses[i], w, *q)?;
                if !r.succeeded() {
                    warn!("window {w}: sellElectricity for {} reverted: {:?}", prosumers[i].name, r.revert_reason);
                }
            }
        }
        for (&j, q) in buyers.iter().zip(&demands) {
            if q.is_positive() {
                let r = client.buy_electricity(self.addresses[j], w, *q)?;
                if !r.succeeded() {
                    warn!("window {w}: buyElectricity for {} reverted: {:?}", prosumers[j].name, r.revert_reason);
                }
            }
        }

        let mut readings = Vec::new();
        let noise = self.scenario.meter_noise;
        for i in 0..n {
            let committed_qty = match roles[i].0 {
                Role::Seller => sellers.iter().position(|&s| s == i).map(|k| committed[k]).unwrap_or(Fixed::ZERO),
                Role::Buyer => -fills[i],
                Role::Inactive => Fixed::ZERO,
            };
            let default = if noise > 0.0 && committed_qty.is_positive() {
                let shortfall: f64 = self.rng.gen_range(0.0..=noise);
                Fixed::from_f64(committed_qty.to_f64() * (1.0 - shortfall)).unwrap_or(committed_qty)
            } else {
                committed_qty
            };
            let scenario_override = hour.metered.as_ref().and_then(|m| m[i]);
            let reading = match self.meter_overrides.get(&(window, i)) {
                Some(o) => *o,
                None => Some(scenario_override.unwrap_or(default)),
            };
            if let Some(delivered) = reading {
                readings.push(MeterReading { address: self.addresses[i], window: w, delivered });
            }
        }
        client.validate_meter(w, &readings)?;
        client.transfer_ether(w)?;

        let block = self.chain.seal_block(w);
        let (block_number, block_hash) = (block.number, block.block_hash);

        let window_state = self.chain.contract().window(w).expect("window was priced");
        for trade in window_state.trades.iter().filter(|t| t.status == TradeStatus::Settled) {
            let q = trade.validated_quantity.unwrap_or(Fixed::ZERO);
            for (i, a) in self.addresses.iter().enumerate() {
                if *a == trade.seller || *a == trade.buyer {
                    prosumers[i].settled_quantity += q;
                }
            }
        }
        for (i, a) in self.addresses.iter().enumerate() {
            let after = self.chain.balance(a).map_or(0, |b| b.0);
            prosumers[i].ether_delta = after as i128 - balances_before[i] as i128;
        }

        let welfare = social_welfare(mcp.to_f64(), &result.allocations, &demand_f64, &producer_params, &consumer_params)?;
        info!("window {w}: mcp {mcp}, q* {}, welfare {welfare:.6}, lambda {:.6} after {} iterations", cleared.quantity, result.lambda_final, result.iterations);
        Ok(HourReport {
            window: w,
            status: HourStatus::Settled,
            mcp: Some(mcp),
            cleared_quantity: cleared.quantity,
            social_welfare: Some(welfare),
            converged: true,
            dispatch: Some(detail),
            prosumers,
            block_number,
            block_hash,
        })
    }
}
