//! Scenario files: prosumers, hourly inputs, solver and gas settings.
//!
//! ```json
//! {
//!   "name": "two_party_trade",
//!   "prosumers": [
//!     {"name": "seller", "alpha": 1.0, "beta": 2, "gamma": 3, "bid_coeff": 4, "theta": 0.5, "balance": 0}
//!   ],
//!   "hours": [
//!     {"production": [5], "demand": [3], "bid_price": [3], "ask_price": [3]}
//!   ],
//!   "solver": {"step_size": 0.05},
//!   "gas": {"transfer_ether": 12015}
//! }
//! ```
//!
//! Per-hour arrays are indexed like `prosumers`. `bid_price` and
//! `ask_price` are optional; when absent they are derived from marginal
//! utility at the hour's demand and marginal cost at its predicted
//! production. `metered` optionally overrides a prosumer's smart-meter
//! reading for the hour (signed; `null` keeps the default).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::{ConsumerParams, ProducerParams, SolverConfig};
use crate::fixed::{ether_literal, Fixed, Wei};
use crate::ledger::GasSchedule;

pub const MAX_HOURS: usize = 8760;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    /// Syntax, schema and per-record invariant failures, with line and column.
    #[error("{0}")]
    Parse(#[from] serde_json::Error),
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { field: field.into(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProsumer", into = "RawProsumer")]
pub struct Prosumer {
    pub name: String,
    pub producer: ProducerParams,
    pub consumer: ConsumerParams,
    pub balance: Wei,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProsumer {
    name: String,
    alpha: f64,
    beta: f64,
    gamma: f64,
    bid_coeff: f64,
    theta: f64,
    #[serde(with = "ether_literal")]
    balance: Wei,
}

impl TryFrom<RawProsumer> for Prosumer {
    type Error = String;

    fn try_from(raw: RawProsumer) -> Result<Self, String> {
        let name = raw.name;
        if name.is_empty() {
            return Err("prosumer name must not be empty".into());
        }
        let producer = ProducerParams::new(raw.alpha, raw.beta, raw.gamma);
        let consumer = ConsumerParams::new(raw.bid_coeff, raw.theta);
        producer.validate(0).map_err(|e| format!("prosumer `{name}`: {}", strip_index(&e.to_string())))?;
        consumer.validate(0).map_err(|e| format!("prosumer `{name}`: {}", strip_index(&e.to_string())))?;
        Ok(Prosumer { name, producer, consumer, balance: raw.balance })
    }
}

fn strip_index(msg: &str) -> &str {
    msg.split_once(": ").map_or(msg, |(_, rest)| rest)
}

impl From<Prosumer> for RawProsumer {
    fn from(p: Prosumer) -> Self {
        RawProsumer {
            name: p.name,
            alpha: p.producer.alpha,
            beta: p.producer.beta,
            gamma: p.producer.gamma,
            bid_coeff: p.consumer.bid_coeff,
            theta: p.consumer.theta,
            balance: p.balance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HourInput {
    pub production: Vec<Fixed>,
    pub demand: Vec<Fixed>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bid_price: Option<Vec<Fixed>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ask_price: Option<Vec<Fixed>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metered: Option<Vec<Option<Fixed>>>,
}

fn default_oracle() -> String {
    "oracle".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    /// Name the oracle address is derived from.
    #[serde(default = "default_oracle")]
    pub oracle: String,
    pub prosumers: Vec<Prosumer>,
    pub hours: Vec<HourInput>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub gas: GasSchedule,
    /// Largest relative shortfall of simulated seller meter readings,
    /// drawn uniformly per reading from the run's seed. Zero disables it.
    #[serde(default)]
    pub meter_noise: f64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let n = self.prosumers.len();
        if n < 2 {
            return Err(invalid("prosumers", format!("need at least 2 prosumers, got {n}")));
        }
        for (i, p) in self.prosumers.iter().enumerate() {
            p.producer.validate(i).map_err(|e| invalid(format!("prosumers[{i}] ({})", p.name), e.to_string()))?;
            p.consumer.validate(i).map_err(|e| invalid(format!("prosumers[{i}] ({})", p.name), e.to_string()))?;
            if self.prosumers[..i].iter().any(|q| q.name == p.name) {
                return Err(invalid(format!("prosumers[{i}].name"), format!("duplicate prosumer `{}`", p.name)));
            }
            if p.name == self.oracle {
                return Err(invalid(format!("prosumers[{i}].name"), "collides with the oracle name"));
            }
        }
        if self.hours.is_empty() || self.hours.len() > MAX_HOURS {
            return Err(invalid("hours", format!("need 1..={MAX_HOURS} hours, got {}", self.hours.len())));
        }
        self.solver.validate().map_err(|e| invalid("solver", e.to_string()))?;
        if !(self.meter_noise.is_finite() && (0.0..=1.0).contains(&self.meter_noise)) {
            return Err(invalid("meter_noise", "must lie in [0, 1]"));
        }
        for (h, hour) in self.hours.iter().enumerate() {
            let check_len = |field: &str, len: usize| {
                if len == n {
                    Ok(())
                } else {
                    Err(invalid(format!("hours[{h}].{field}"), format!("expected {n} entries, got {len}")))
                }
            };
            check_len("production", hour.production.len())?;
            check_len("demand", hour.demand.len())?;
            if let Some(v) = &hour.bid_price {
                check_len("bid_price", v.len())?;
            }
            if let Some(v) = &hour.ask_price {
                check_len("ask_price", v.len())?;
            }
            if let Some(v) = &hour.metered {
                check_len("metered", v.len())?;
            }
            for i in 0..n {
                let name = &self.prosumers[i].name;
                if hour.production[i].is_negative() {
                    return Err(invalid(format!("hours[{h}].production[{i}]"), format!("negative production for `{name}`")));
                }
                if hour.demand[i].is_negative() {
                    return Err(invalid(format!("hours[{h}].demand[{i}]"), format!("negative demand for `{name}`")));
                }
                let net = hour.production[i] - hour.demand[i];
                if net.is_negative() && !self.bid_price(h, i).is_positive() {
                    return Err(invalid(format!("hours[{h}].bid_price[{i}]"), format!("buyer `{name}` needs a positive bid price")));
                }
                if net.is_positive() && !self.ask_price(h, i).is_positive() {
                    return Err(invalid(format!("hours[{h}].ask_price[{i}]"), format!("seller `{name}` needs a positive ask price")));
                }
            }
        }
        Ok(())
    }

    /// Bid price of prosumer `i` in hour `h`: explicit, or marginal utility
    /// `b − θ·d` at the hour's demand.
    pub fn bid_price(&self, h: usize, i: usize) -> Fixed {
        let hour = &self.hours[h];
        match &hour.bid_price {
            Some(v) => v[i],
            None => {
                let c = &self.prosumers[i].consumer;
                Fixed::from_f64(c.marginal_utility(hour.demand[i].to_f64())).unwrap_or(Fixed::ZERO)
            }
        }
    }

    /// Ask price of prosumer `i` in hour `h`: explicit, or marginal cost
    /// `2α·p + β` at the hour's predicted production.
    pub fn ask_price(&self, h: usize, i: usize) -> Fixed {
        let hour = &self.hours[h];
        match &hour.ask_price {
            Some(v) => v[i],
            None => {
                let p = &self.prosumers[i].producer;
                Fixed::from_f64(p.marginal_cost(hour.production[i].to_f64())).unwrap_or(Fixed::ZERO)
            }
        }
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Read { path: path.display().to_string(), source })?;
    Scenario::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "prosumers": [
            {"name": "a", "alpha": 1.0, "beta": 2, "gamma": 3, "bid_coeff": 4, "theta": 0.5, "balance": 10},
            {"name": "b", "alpha": 1.1, "beta": 2.5, "gamma": 3.5, "bid_coeff": 4, "theta": 0.2, "balance": 0.5}
        ],
        "hours": [{"production": [5, 1], "demand": [3, 3]}]
    }"#;

    #[test]
    fn minimal_scenario_loads_with_defaults() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(s.oracle, "oracle");
        assert_eq!(s.solver, SolverConfig::default());
        assert_eq!(s.gas, GasSchedule::default());
        assert_eq!(s.prosumers[1].balance, Wei(500_000_000_000_000_000));
        // 2·1.0·5 + 2 and 4 − 0.2·3
        assert_eq!(s.ask_price(0, 0), Fixed::from_int(12));
        assert_eq!(s.bid_price(0, 1), Fixed::from_micros(3_400_000));
    }

    #[test]
    fn zero_alpha_names_the_prosumer_and_line() {
        let text = MINIMAL.replace(r#""alpha": 1.1"#, r#""alpha": 0"#);
        let err = Scenario::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("prosumer `b`"), "{err}");
        assert!(err.contains("alpha"), "{err}");
        assert!(err.contains("line 5"), "{err}");
    }

    #[test]
    fn empty_hours_rejected() {
        let text = MINIMAL.replace(r#"[{"production": [5, 1], "demand": [3, 3]}]"#, "[]");
        let err = Scenario::from_json(&text).unwrap_err();
        assert!(matches!(err, ScenarioError::Invalid { ref field, .. } if field == "hours"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = MINIMAL.replace(r#""hours""#, r#""extra": 1, "hours""#);
        assert!(matches!(Scenario::from_json(&text), Err(ScenarioError::Parse(_))));
        let text = MINIMAL.replace(r#""theta": 0.5,"#, r#""theta": 0.5, "kappa": 1,"#);
        assert!(matches!(Scenario::from_json(&text), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn hour_arrays_must_match_prosumers() {
        let text = MINIMAL.replace(r#""demand": [3, 3]"#, r#""demand": [3]"#);
        let err = Scenario::from_json(&text).unwrap_err();
        assert!(matches!(err, ScenarioError::Invalid { ref field, .. } if field == "hours[0].demand"));
    }

    #[test]
    fn needs_two_prosumers_and_unique_names() {
        let one = r#"{"prosumers": [{"name": "a", "alpha": 1, "beta": 0, "gamma": 0, "bid_coeff": 1, "theta": 1, "balance": 0}],
                      "hours": [{"production": [1], "demand": [0]}]}"#;
        assert!(matches!(Scenario::from_json(one), Err(ScenarioError::Invalid { .. })));
        let dup = MINIMAL.replace(r#""name": "b""#, r#""name": "a""#);
        assert!(matches!(Scenario::from_json(&dup), Err(ScenarioError::Invalid { .. })));
    }

    #[test]
    fn buyer_with_non_positive_derived_bid_rejected() {
        // b − θ·d = 4 − 0.2·30 < 0 for prosumer b
        let text = MINIMAL.replace(r#""demand": [3, 3]"#, r#""demand": [3, 30]"#);
        let err = Scenario::from_json(&text).unwrap_err();
        assert!(matches!(err, ScenarioError::Invalid { ref field, .. } if field == "hours[0].bid_price[1]"));
    }
}
