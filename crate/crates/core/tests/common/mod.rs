//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use gridtrade::clearing::{Ask, Bid};
use gridtrade::dispatch::{ConsumerParams, ProducerParams};
use gridtrade::fixed::Fixed;
use proptest::prelude::*;
use rand::Rng;

pub const SCENARIO_DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios");

pub fn scenario_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(SCENARIO_DIR).join(name)
}

/// Clearing result by scanning every breakpoint of both curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BruteClear {
    Cleared { price: i64, quantity: i64 },
    NoCross,
}

/// Price of a step curve at quantity `q > 0`, given `(price, qty)` orders in
/// curve order. Curves are left-continuous: a breakpoint belongs to the step
/// that ends there.
fn price_at(orders: &[(i64, i64)], q: i64) -> Option<i64> {
    let mut cum = 0;
    for &(p, qty) in orders {
        cum += qty;
        if q <= cum {
            return Some(p);
        }
    }
    None
}

/// Works in raw micro-units. Bids are `(id, price, qty)`.
pub fn brute_force_clear(bids: &[(String, i64, i64)], asks: &[(String, i64, i64)]) -> BruteClear {
    let mut d: Vec<_> = bids.to_vec();
    d.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut s: Vec<_> = asks.to_vec();
    s.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)));
    let d: Vec<(i64, i64)> = d.iter().map(|o| (o.1, o.2)).collect();
    let s: Vec<(i64, i64)> = s.iter().map(|o| (o.1, o.2)).collect();

    let mut lattice = Vec::new();
    for curve in [&d, &s] {
        let mut cum = 0;
        for &(_, q) in curve.iter() {
            cum += q;
            lattice.push(cum);
        }
    }
    lattice.sort_unstable();
    lattice.dedup();

    let mut best: Option<i64> = None;
    for &q in &lattice {
        if let (Some(dp), Some(sp)) = (price_at(&d, q), price_at(&s, q)) {
            if dp >= sp {
                best = Some(best.map_or(q, |b: i64| b.max(q)));
            }
        }
    }
    match best {
        None => BruteClear::NoCross,
        Some(q) => {
            let dp = price_at(&d, q).unwrap();
            let sp = price_at(&s, q).unwrap();
            let price = if dp == sp { dp } else { (dp + sp).div_euclid(2) };
            BruteClear::Cleared { price, quantity: q }
        }
    }
}

pub fn to_bids(raw: &[(String, i64, i64)]) -> Vec<Bid> {
    raw.iter().map(|(id, p, q)| Bid::new(id.clone(), Fixed::from_micros(*p), Fixed::from_micros(*q))).collect()
}

pub fn to_asks(raw: &[(String, i64, i64)]) -> Vec<Ask> {
    raw.iter().map(|(id, p, q)| Ask::new(id.clone(), Fixed::from_micros(*p), Fixed::from_micros(*q))).collect()
}

const M: i64 = 1_000_000;

/// Random side of a book with integer prices 1..=10 and quantities 1..=5.
/// Participant ids may repeat so tie-breaking on equal prices is exercised.
pub fn random_side<R: Rng>(rng: &mut R, prefix: &str, n: usize) -> Vec<(String, i64, i64)> {
    (0..n).map(|_| (format!("{prefix}{}", rng.gen_range(0..6)), rng.gen_range(1..=10) * M, rng.gen_range(1..=5) * M)).collect()
}

/// One side of a random book for proptest; `fine` draws prices and
/// quantities at micro resolution instead of whole units.
pub fn side_strategy(prefix: &'static str, fine: bool) -> impl Strategy<Value = Vec<(String, i64, i64)>> {
    let order = if fine {
        (0u8..6, 1i64..=10 * M, 1i64..=5 * M).boxed()
    } else {
        (0u8..6, (1i64..=10).prop_map(|p| p * M), (1i64..=5).prop_map(|q| q * M)).boxed()
    };
    prop::collection::vec(order.prop_map(move |(id, p, q)| (format!("{prefix}{id}"), p, q)), 1..=10)
}

/// Solves the linear system `a x = b` by Gaussian elimination with partial
/// pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                let (upper, lower) = a.split_at_mut(row);
                for (x, y) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                    *x -= f * y;
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Optimal dispatch for `max Σ (π p_i − α_i p_i² − β_i p_i)` subject to
/// `Σ p_i = total`, `p_i ≥ 0`, by an active-set method over the dense KKT
/// system. Returns the allocations and the multiplier on the balance row,
/// expressed as the offset added to the price.
pub fn kkt_dispatch(mcp: f64, producers: &[ProducerParams], total: f64) -> (Vec<f64>, f64) {
    let n = producers.len();
    let mut free = vec![true; n];
    for _ in 0..4 * n + 4 {
        let idx: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
        let m = idx.len();
        // unknowns: p for each free producer, then the multiplier
        let mut a = vec![vec![0.0; m + 1]; m + 1];
        let mut b = vec![0.0; m + 1];
        for (r, &i) in idx.iter().enumerate() {
            a[r][r] = 2.0 * producers[i].alpha;
            a[r][m] = -1.0;
            b[r] = mcp - producers[i].beta;
        }
        a[m][..m].fill(1.0);
        b[m] = total;
        let x = gauss_solve(a, b);
        let lambda = x[m];
        let mut p = vec![0.0; n];
        for (r, &i) in idx.iter().enumerate() {
            p[i] = x[r];
        }
        // drop the most negative free producer, or re-admit a clamped one
        // whose marginal profit at zero output is positive
        let worst = idx.iter().copied().filter(|&i| p[i] < 0.0).min_by(|&i, &j| p[i].total_cmp(&p[j]));
        if let Some(i) = worst {
            free[i] = false;
            continue;
        }
        let wants_in = (0..n).filter(|&i| !free[i]).find(|&i| mcp - producers[i].beta + lambda > 1e-12);
        if let Some(i) = wants_in {
            free[i] = true;
            continue;
        }
        return (p, lambda);
    }
    panic!("active set cycled");
}

pub fn random_producers<R: Rng>(rng: &mut R, n: usize) -> Vec<ProducerParams> {
    (0..n)
        .map(|_| ProducerParams::new(rng.gen_range(0.5..2.0), rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0)))
        .collect()
}

pub fn random_consumers<R: Rng>(rng: &mut R, n: usize) -> Vec<ConsumerParams> {
    (0..n).map(|_| ConsumerParams::new(rng.gen_range(10.0..20.0), rng.gen_range(0.1..1.0))).collect()
}

/// Uniform point on the simplex scaled to `total`.
pub fn random_simplex<R: Rng>(rng: &mut R, n: usize, total: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| -rng.gen_range(f64::EPSILON..1.0f64).ln()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s * total).collect()
}
