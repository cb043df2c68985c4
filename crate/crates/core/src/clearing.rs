//! Uniform-price double auction over inverse demand and supply step curves.
//!
//! Bids are stacked by price descending into the inverse demand curve and
//! asks by price ascending into the inverse supply curve. Both curves are
//! left-continuous step functions of cumulative quantity: step `k` covers
//! `(end_{k-1}, end_k]`. The cleared quantity is the largest `q` where the
//! demand price is still at least the supply price.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixed::{apportion_exact, Fixed};

pub type ParticipantId = String;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bid {
    pub buyer_id: ParticipantId,
    pub price: Fixed,
    pub quantity: Fixed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ask {
    pub seller_id: ParticipantId,
    pub price: Fixed,
    pub quantity: Fixed,
}

impl Bid {
    pub fn new(buyer_id: impl Into<String>, price: Fixed, quantity: Fixed) -> Self {
        Bid { buyer_id: buyer_id.into(), price, quantity }
    }
}

impl Ask {
    pub fn new(seller_id: impl Into<String>, price: Fixed, quantity: Fixed) -> Self {
        Ask { seller_id: seller_id.into(), price, quantity }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    Demand,
    Supply,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClearingError {
    #[error("invalid {kind:?} order #{index} from `{participant}`: {reason}")]
    InvalidOrder {
        kind: CurveKind,
        index: usize,
        participant: ParticipantId,
        reason: &'static str,
    },
    #[error("{0:?} curve is empty")]
    EmptyCurve(CurveKind),
    #[error("cumulative quantity overflow")]
    Overflow,
}

/// One segment of a step curve: `price` on `(previous cum_qty, cum_qty]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub price: Fixed,
    pub cum_qty: Fixed,
    #[serde(skip)]
    pub participant: ParticipantId,
}

impl Step {
    pub fn new(participant: impl Into<String>, price: Fixed, cum_qty: Fixed) -> Self {
        Step { price, cum_qty, participant: participant.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepCurve {
    kind: CurveKind,
    steps: Vec<Step>,
}

/// Serializes as the ordered array of `{price, cum_qty}` segments.
impl Serialize for StepCurve {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.steps.serialize(serializer)
    }
}

impl StepCurve {
    pub fn kind(&self) -> CurveKind {
        self.kind
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_quantity(&self) -> Fixed {
        self.steps.last().map_or(Fixed::ZERO, |s| s.cum_qty)
    }

    /// Quantity of step `k` alone.
    pub fn step_quantity(&self, k: usize) -> Fixed {
        let prev = if k == 0 { Fixed::ZERO } else { self.steps[k - 1].cum_qty };
        self.steps[k].cum_qty - prev
    }

    /// Curve price at quantity `q`, `None` outside `(0, total]`.
    pub fn price_at(&self, q: Fixed) -> Option<Fixed> {
        if !q.is_positive() {
            return None;
        }
        self.steps.iter().find(|s| q <= s.cum_qty).map(|s| s.price)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.steps).expect("step curve serializes")
    }
}

fn validate(kind: CurveKind, index: usize, participant: &str, price: Fixed, quantity: Fixed) -> Result<(), ClearingError> {
    let reason = if !price.is_positive() {
        "price must be positive"
    } else if !quantity.is_positive() {
        "quantity must be positive"
    } else {
        return Ok(());
    };
    Err(ClearingError::InvalidOrder { kind, index, participant: participant.to_string(), reason })
}

fn stack(kind: CurveKind, mut orders: Vec<(&str, Fixed, Fixed)>) -> Result<StepCurve, ClearingError> {
    // price priority, then participant id ascending; stable for repeated ids
    orders.sort_by(|a, b| {
        let by_price = match kind {
            CurveKind::Demand => b.1.cmp(&a.1),
            CurveKind::Supply => a.1.cmp(&b.1),
        };
        by_price.then_with(|| a.0.cmp(b.0))
    });
    let mut cum = Fixed::ZERO;
    let mut steps = Vec::with_capacity(orders.len());
    for (participant, price, quantity) in orders {
        cum = cum.checked_add(quantity).ok_or(ClearingError::Overflow)?;
        steps.push(Step::new(participant, price, cum));
    }
    Ok(StepCurve { kind, steps })
}

/// Inverse demand curve: bids by price descending.
pub fn build_demand_curve(bids: &[Bid]) -> Result<StepCurve, ClearingError> {
    for (i, b) in bids.iter().enumerate() {
        validate(CurveKind::Demand, i, &b.buyer_id, b.price, b.quantity)?;
    }
    stack(CurveKind::Demand, bids.iter().map(|b| (b.buyer_id.as_str(), b.price, b.quantity)).collect())
}

/// Inverse supply curve: asks by price ascending.
pub fn build_supply_curve(asks: &[Ask]) -> Result<StepCurve, ClearingError> {
    for (i, a) in asks.iter().enumerate() {
        validate(CurveKind::Supply, i, &a.seller_id, a.price, a.quantity)?;
    }
    stack(CurveKind::Supply, asks.iter().map(|a| (a.seller_id.as_str(), a.price, a.quantity)).collect())
}

/// Filled quantity of one order, in curve order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fill {
    pub participant: ParticipantId,
    pub price: Fixed,
    pub quantity: Fixed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClearingResult {
    pub price: Fixed,
    pub quantity: Fixed,
    /// Demand price at the cleared quantity.
    pub marginal_bid: Fixed,
    /// Supply price at the cleared quantity.
    pub marginal_ask: Fixed,
    pub matched_buy_orders: Vec<Fill>,
    pub matched_sell_orders: Vec<Fill>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ClearingOutcome {
    Cleared(ClearingResult),
    /// Best bid below best ask: nothing trades and no price forms.
    NoCross { best_bid: Fixed, best_ask: Fixed },
}

impl ClearingOutcome {
    pub fn quantity(&self) -> Fixed {
        match self {
            ClearingOutcome::Cleared(r) => r.quantity,
            ClearingOutcome::NoCross { .. } => Fixed::ZERO,
        }
    }

    pub fn price(&self) -> Option<Fixed> {
        match self {
            ClearingOutcome::Cleared(r) => Some(r.price),
            ClearingOutcome::NoCross { .. } => None,
        }
    }

    pub fn cleared(&self) -> Option<&ClearingResult> {
        match self {
            ClearingOutcome::Cleared(r) => Some(r),
            ClearingOutcome::NoCross { .. } => None,
        }
    }
}

/// Clears the market at the intersection of the two curves.
///
/// The price is the common value when both curves sit at the same price at
/// the cleared quantity, and otherwise the midpoint of the demand and supply
/// prices there (truncated to micro resolution). Orders strictly inside the
/// cleared range fill completely; orders sharing the marginal price on either
/// side split the residual pro-rata by offered quantity.
pub fn clear_market(demand: &StepCurve, supply: &StepCurve) -> Result<ClearingOutcome, ClearingError> {
    if demand.is_empty() {
        return Err(ClearingError::EmptyCurve(CurveKind::Demand));
    }
    if supply.is_empty() {
        return Err(ClearingError::EmptyCurve(CurveKind::Supply));
    }
    let d = demand.steps();
    let s = supply.steps();

    let (mut i, mut j) = (0usize, 0usize);
    let mut cleared: Option<(Fixed, usize, usize)> = None;
    while i < d.len() && j < s.len() {
        if d[i].price < s[j].price {
            break;
        }
        let end = d[i].cum_qty.min(s[j].cum_qty);
        cleared = Some((end, i, j));
        if d[i].cum_qty == end {
            i += 1;
        }
        if s[j].cum_qty == end {
            j += 1;
        }
    }

    let Some((quantity, di, sj)) = cleared else {
        return Ok(ClearingOutcome::NoCross { best_bid: d[0].price, best_ask: s[0].price });
    };
    let marginal_bid = d[di].price;
    let marginal_ask = s[sj].price;
    let price = if marginal_bid == marginal_ask { marginal_bid } else { marginal_bid.midpoint(marginal_ask) };

    Ok(ClearingOutcome::Cleared(ClearingResult {
        price,
        quantity,
        marginal_bid,
        marginal_ask,
        matched_buy_orders: fills(demand, quantity, marginal_bid),
        matched_sell_orders: fills(supply, quantity, marginal_ask),
    }))
}

fn fills(curve: &StepCurve, quantity: Fixed, marginal_price: Fixed) -> Vec<Fill> {
    let steps = curve.steps();
    let mut out = Vec::new();
    let mut inside = Fixed::ZERO;
    let mut tied = Vec::new();
    for (k, step) in steps.iter().enumerate() {
        if step.price == marginal_price {
            tied.push(k);
        } else if tied.is_empty() {
            // strictly better than the marginal price, wholly inside q*
            let q = curve.step_quantity(k);
            inside += q;
            out.push(Fill { participant: step.participant.clone(), price: step.price, quantity: q });
        } else {
            break;
        }
    }
    let weights: Vec<Fixed> = tied.iter().map(|&k| curve.step_quantity(k)).collect();
    let shares = apportion_exact(quantity - inside, &weights);
    for (&k, share) in tied.iter().zip(shares) {
        if share.is_positive() {
            out.push(Fill { participant: steps[k].participant.clone(), price: steps[k].price, quantity: share });
        }
    }
    out
}
