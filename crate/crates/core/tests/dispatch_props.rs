mod common;

use common::{kkt_dispatch, random_simplex};
use gridtrade::dispatch::{local_best_response, producer_cost, run_dual_ascent, ConsumerParams, ProducerParams, SolverConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn producers_strategy() -> impl Strategy<Value = Vec<ProducerParams>> {
    prop::collection::vec((0.5f64..2.0, 0.0f64..5.0, 0.0f64..5.0).prop_map(|(a, b, g)| ProducerParams::new(a, b, g)), 2..=8)
}

fn instance() -> impl Strategy<Value = (f64, Vec<ProducerParams>, Vec<f64>)> {
    (1.0f64..15.0, producers_strategy(), prop::collection::vec(0.1f64..4.0, 1..=4))
}

fn consumers(n: usize) -> Vec<ConsumerParams> {
    vec![ConsumerParams::new(20.0, 0.5); n]
}

fn cost(allocations: &[f64], producers: &[ProducerParams]) -> f64 {
    allocations.iter().zip(producers).map(|(p, c)| producer_cost(*p, c).unwrap()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_kkt_solution((mcp, producers, demands) in instance()) {
        let r = run_dual_ascent(mcp, &producers, &demands, &consumers(demands.len()), &SolverConfig::default()).unwrap();
        prop_assert!(r.converged, "{:?}", r.diagnostic);
        let (expected, lambda) = kkt_dispatch(mcp, &producers, demands.iter().sum());
        for (got, want) in r.allocations.iter().zip(&expected) {
            prop_assert!((got - want).abs() <= 1e-6, "{got} vs {want}");
        }
        prop_assert!((r.lambda_final - lambda).abs() <= 1e-4);
    }

    #[test]
    fn converged_allocation_is_stationary((mcp, producers, demands) in instance()) {
        let r = run_dual_ascent(mcp, &producers, &demands, &consumers(demands.len()), &SolverConfig::default()).unwrap();
        prop_assert!(r.imbalance_final.abs() < 1e-6);
        for (p, c) in r.allocations.iter().zip(&producers) {
            prop_assert!(*p >= 0.0);
            let effective = mcp + r.lambda_final;
            if *p > 0.0 {
                prop_assert!((c.marginal_cost(*p) - effective).abs() < 1e-9);
            } else {
                prop_assert!(c.beta >= effective - 1e-9);
            }
        }
    }

    #[test]
    fn no_random_split_is_cheaper((mcp, producers, demands) in instance(), seed in any::<u64>()) {
        let total: f64 = demands.iter().sum();
        let r = run_dual_ascent(mcp, &producers, &demands, &consumers(demands.len()), &SolverConfig::default()).unwrap();
        // rescale onto the exact balance before comparing
        let s: f64 = r.allocations.iter().sum();
        let optimal: Vec<f64> = r.allocations.iter().map(|p| p * total / s).collect();
        let best = cost(&optimal, &producers);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..1000 {
            let other = random_simplex(&mut rng, producers.len(), total);
            prop_assert!(cost(&other, &producers) >= best - 1e-9);
        }
    }

    #[test]
    fn best_response_rises_with_price(a in 0.5f64..2.0, b in 0.0f64..5.0, mcp in 0.0f64..15.0, dp in 0.0f64..5.0, lambda in -5.0f64..5.0) {
        let c = ProducerParams::new(a, b, 1.0);
        prop_assert!(local_best_response(mcp + dp, lambda, &c) >= local_best_response(mcp, lambda, &c));
        prop_assert!(local_best_response(mcp, lambda, &c) >= 0.0);
    }

    #[test]
    fn imbalance_shrinks_under_small_steps((mcp, producers, demands) in instance()) {
        let bound = 1.0 / producers.iter().map(|p| 0.5 / p.alpha).sum::<f64>();
        let config = SolverConfig { step_size: 0.9 * bound.min(1.0), ..SolverConfig::default() };
        let r = run_dual_ascent(mcp, &producers, &demands, &consumers(demands.len()), &config).unwrap();
        for w in r.trace.windows(2) {
            prop_assert!(w[1].imbalance.abs() <= w[0].imbalance.abs() + 1e-12);
        }
    }
}

#[test]
fn five_reference_producers_share_five_units_at_price_three() {
    let producers = vec![
        ProducerParams::new(1.0, 2.0, 3.0),
        ProducerParams::new(1.1, 2.5, 3.5),
        ProducerParams::new(0.9, 1.0, 4.0),
        ProducerParams::new(1.2, 1.5, 2.0),
        ProducerParams::new(1.3, 1.0, 5.0),
    ];
    let r = run_dual_ascent(3.0, &producers, &[5.0], &[ConsumerParams::new(10.0, 0.5)], &SolverConfig::default()).unwrap();
    assert!(r.converged);
    let (expected, lambda) = kkt_dispatch(3.0, &producers, 5.0);
    for (got, want) in r.allocations.iter().zip(&expected) {
        assert!((got - want).abs() <= 1e-6, "{got} vs {want}");
    }
    assert!((r.allocations.iter().sum::<f64>() - 5.0).abs() < 1e-6);
    assert!((r.lambda_final - lambda).abs() < 1e-5);
}
