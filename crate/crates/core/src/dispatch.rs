//! Producer cost, consumer utility, social welfare and the decentralized
//! dual-ascent allocation.
//!
//! Every producer answers a shared multiplier `λ` with its own best
//! response `p_i = max(0, (π* − β_i + λ) / 2α_i)`; a coordinator moves `λ`
//! against the supply/demand imbalance until the imbalance falls below the
//! tolerance. Increasing `λ` raises every response, so oversupply lowers it.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DispatchError {
    #[error("producer {index}: alpha must be positive and finite, got {value}")]
    Alpha { index: usize, value: f64 },
    #[error("producer {index}: {field} must be non-negative and finite, got {value}")]
    CostCoefficient { index: usize, field: &'static str, value: f64 },
    #[error("consumer {index}: theta must be positive and finite, got {value}")]
    Theta { index: usize, value: f64 },
    #[error("consumer {index}: bid coefficient must be finite, got {value}")]
    BidCoefficient { index: usize, value: f64 },
    #[error("{what} must be non-negative and finite, got {value}")]
    NegativeQuantity { what: &'static str, value: f64 },
    #[error("invalid solver config: {0}")]
    Config(&'static str),
    #[error("at least one producer is required")]
    NoProducers,
    #[error("expected {expected} {what}, got {got}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
}

/// Quadratic production cost `α p² + β p + γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProducerParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl ProducerParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        ProducerParams { alpha, beta, gamma }
    }

    pub fn validate(&self, index: usize) -> Result<(), DispatchError> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(DispatchError::Alpha { index, value: self.alpha });
        }
        for (field, value) in [("beta", self.beta), ("gamma", self.gamma)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(DispatchError::CostCoefficient { index, field, value });
            }
        }
        Ok(())
    }

    pub fn marginal_cost(&self, p: f64) -> f64 {
        2.0 * self.alpha * p + self.beta
    }
}

/// Quadratic consumer utility `b d − (θ/2) d²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsumerParams {
    pub bid_coeff: f64,
    pub theta: f64,
}

impl ConsumerParams {
    pub fn new(bid_coeff: f64, theta: f64) -> Self {
        ConsumerParams { bid_coeff, theta }
    }

    pub fn validate(&self, index: usize) -> Result<(), DispatchError> {
        if !(self.theta.is_finite() && self.theta > 0.0) {
            return Err(DispatchError::Theta { index, value: self.theta });
        }
        if !self.bid_coeff.is_finite() {
            return Err(DispatchError::BidCoefficient { index, value: self.bid_coeff });
        }
        Ok(())
    }

    pub fn marginal_utility(&self, d: f64) -> f64 {
        self.bid_coeff - self.theta * d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub step_size: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub lambda_init: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { step_size: 0.05, tolerance: 1e-6, max_iterations: 10_000, lambda_init: 0.0 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), DispatchError> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(DispatchError::Config("step_size must be positive"));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(DispatchError::Config("tolerance must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(DispatchError::Config("max_iterations must be at least 1"));
        }
        if !self.lambda_init.is_finite() {
            return Err(DispatchError::Config("lambda_init must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub lambda: f64,
    pub imbalance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchResult {
    pub allocations: Vec<f64>,
    pub lambda_final: f64,
    pub iterations: usize,
    pub imbalance_final: f64,
    pub converged: bool,
    /// Social welfare at the final allocation.
    pub welfare: f64,
    pub trace: Vec<TracePoint>,
    /// Why the run stopped without converging.
    pub diagnostic: Option<String>,
}

impl DispatchResult {
    pub fn total_production(&self) -> f64 {
        self.allocations.iter().sum()
    }

    /// `iteration,lambda,imbalance` with a header row.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,lambda,imbalance\n");
        for t in &self.trace {
            let _ = writeln!(out, "{},{:.12},{:.12}", t.iteration, t.lambda, t.imbalance);
        }
        out
    }
}

fn check_quantity(what: &'static str, v: f64) -> Result<(), DispatchError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(DispatchError::NegativeQuantity { what, value: v })
    }
}

pub fn producer_cost(p: f64, params: &ProducerParams) -> Result<f64, DispatchError> {
    check_quantity("production", p)?;
    Ok(params.alpha * p * p + params.beta * p + params.gamma)
}

pub fn consumer_utility(d: f64, params: &ConsumerParams) -> Result<f64, DispatchError> {
    check_quantity("demand", d)?;
    Ok(params.bid_coeff * d - 0.5 * params.theta * d * d)
}

/// Profit-maximizing output at effective price `mcp + lambda`, clamped at zero.
pub fn local_best_response(mcp: f64, lambda: f64, params: &ProducerParams) -> f64 {
    ((mcp - params.beta + lambda) / (2.0 * params.alpha)).max(0.0)
}

/// Consumer surplus plus producer surplus at a uniform price.
pub fn social_welfare(
    mcp: f64,
    allocations: &[f64],
    demands: &[f64],
    producers: &[ProducerParams],
    consumers: &[ConsumerParams],
) -> Result<f64, DispatchError> {
    if allocations.len() != producers.len() {
        return Err(DispatchError::LengthMismatch { what: "allocations", expected: producers.len(), got: allocations.len() });
    }
    if demands.len() != consumers.len() {
        return Err(DispatchError::LengthMismatch { what: "demands", expected: consumers.len(), got: demands.len() });
    }
    let mut welfare = 0.0;
    for (d, c) in demands.iter().zip(consumers) {
        welfare += consumer_utility(*d, c)? - mcp * d;
    }
    welfare += producer_surplus(mcp, allocations, producers)?;
    Ok(welfare)
}

/// `Σ (π* p_i − C_i(p_i))`.
pub fn producer_surplus(mcp: f64, allocations: &[f64], producers: &[ProducerParams]) -> Result<f64, DispatchError> {
    let mut surplus = 0.0;
    for (p, params) in allocations.iter().zip(producers) {
        surplus += mcp * p - producer_cost(*p, params)?;
    }
    Ok(surplus)
}

/// Runs the coordinator loop until the aggregate best response meets
/// total demand within `config.tolerance`.
///
/// Each iteration collects every producer's best response to the current
/// multiplier, measures `Σ p_i − Σ d_j`, and stops if it is small enough;
/// otherwise the multiplier steps by `−step_size × imbalance`. Running out
/// of iterations is reported through `converged = false`, not an error.
pub fn run_dual_ascent(
    mcp: f64,
    producers: &[ProducerParams],
    demands: &[f64],
    consumers: &[ConsumerParams],
    config: &SolverConfig,
) -> Result<DispatchResult, DispatchError> {
    if producers.is_empty() {
        return Err(DispatchError::NoProducers);
    }
    for (i, p) in producers.iter().enumerate() {
        p.validate(i)?;
    }
    if demands.len() != consumers.len() {
        return Err(DispatchError::LengthMismatch { what: "demands", expected: consumers.len(), got: demands.len() });
    }
    for (i, c) in consumers.iter().enumerate() {
        c.validate(i)?;
    }
    for d in demands {
        check_quantity("demand", *d)?;
    }
    config.validate()?;
    if !mcp.is_finite() {
        return Err(DispatchError::Config("market clearing price must be finite"));
    }

    let total_demand: f64 = demands.iter().sum();
    let mut lambda = config.lambda_init;
    let mut allocations = vec![0.0; producers.len()];
    let mut trace = Vec::new();
    let mut imbalance = f64::NAN;

    for iteration in 1..=config.max_iterations {
        for (p, params) in allocations.iter_mut().zip(producers) {
            *p = local_best_response(mcp, lambda, params);
        }
        imbalance = allocations.iter().sum::<f64>() - total_demand;
        trace.push(TracePoint { iteration, lambda, imbalance });
        if imbalance.abs() < config.tolerance {
            return Ok(DispatchResult {
                welfare: social_welfare(mcp, &allocations, demands, producers, consumers)?,
                allocations,
                lambda_final: lambda,
                iterations: iteration,
                imbalance_final: imbalance,
                converged: true,
                trace,
                diagnostic: None,
            });
        }
        lambda -= config.step_size * imbalance;
        if !lambda.is_finite() {
            break;
        }
    }

    let diagnostic = if !lambda.is_finite() {
        "multiplier diverged; step size too large for this instance".to_string()
    } else {
        let lipschitz: f64 = producers.iter().map(|p| 0.5 / p.alpha).sum();
        format!(
            "imbalance {imbalance:.3e} after {} iterations (lambda {lambda:.6}); step size {} vs stability bound {:.6}",
            config.max_iterations,
            config.step_size,
            1.0 / lipschitz
        )
    };
    Ok(DispatchResult {
        welfare: social_welfare(mcp, &allocations, demands, producers, consumers)?,
        iterations: trace.len(),
        allocations,
        lambda_final: lambda,
        imbalance_final: imbalance,
        converged: false,
        trace,
        diagnostic: Some(diagnostic),
    })
}
