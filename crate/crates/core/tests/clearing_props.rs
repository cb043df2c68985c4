mod common;

use common::{brute_force_clear, side_strategy, to_asks, to_bids, BruteClear};
use gridtrade::clearing::{build_demand_curve, build_supply_curve, clear_market, ClearingOutcome};
use gridtrade::fixed::Fixed;
use proptest::prelude::*;

type Side = Vec<(String, i64, i64)>;

fn clear(bids: &Side, asks: &Side) -> ClearingOutcome {
    let d = build_demand_curve(&to_bids(bids)).unwrap();
    let s = build_supply_curve(&to_asks(asks)).unwrap();
    clear_market(&d, &s).unwrap()
}

fn as_brute(o: &ClearingOutcome) -> BruteClear {
    match o {
        ClearingOutcome::Cleared(r) => BruteClear::Cleared { price: r.price.micros(), quantity: r.quantity.micros() },
        ClearingOutcome::NoCross { .. } => BruteClear::NoCross,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn matches_breakpoint_scan(bids in side_strategy("b", false), asks in side_strategy("s", false)) {
        prop_assert_eq!(as_brute(&clear(&bids, &asks)), brute_force_clear(&bids, &asks));
    }

    #[test]
    fn matches_breakpoint_scan_at_micro_resolution(bids in side_strategy("b", true), asks in side_strategy("s", true)) {
        prop_assert_eq!(as_brute(&clear(&bids, &asks)), brute_force_clear(&bids, &asks));
    }

    #[test]
    fn extra_orders_never_shrink_volume(
        bids in side_strategy("b", false),
        asks in side_strategy("s", false),
        extra in side_strategy("x", false),
    ) {
        let base = clear(&bids, &asks).quantity();
        let (id, p, q) = extra[0].clone();
        let mut more_bids = bids.clone();
        more_bids.push((id.clone(), p, q));
        prop_assert!(clear(&more_bids, &asks).quantity() >= base);
        let mut more_asks = asks.clone();
        more_asks.push((id, p, q));
        prop_assert!(clear(&bids, &more_asks).quantity() >= base);
    }

    #[test]
    fn fills_conserve_and_respect_limits(bids in side_strategy("b", true), asks in side_strategy("s", true)) {
        if let ClearingOutcome::Cleared(r) = clear(&bids, &asks) {
            let bought: Fixed = r.matched_buy_orders.iter().map(|f| f.quantity).sum();
            let sold: Fixed = r.matched_sell_orders.iter().map(|f| f.quantity).sum();
            prop_assert_eq!(bought, r.quantity);
            prop_assert_eq!(sold, r.quantity);
            for f in &r.matched_buy_orders {
                prop_assert!(f.price >= r.price, "buyer {} pays above its bid", f.participant);
                prop_assert!(f.quantity.is_positive());
            }
            for f in &r.matched_sell_orders {
                prop_assert!(f.price <= r.price, "seller {} paid below its ask", f.participant);
                prop_assert!(f.quantity.is_positive());
            }
        }
    }

    #[test]
    fn no_order_fills_beyond_its_size(bids in side_strategy("b", true), asks in side_strategy("s", true)) {
        if let ClearingOutcome::Cleared(r) = clear(&bids, &asks) {
            for (side, fills) in [(&bids, &r.matched_buy_orders), (&asks, &r.matched_sell_orders)] {
                for f in fills {
                    let offered: i64 = side.iter().filter(|o| o.0 == f.participant && o.1 == f.price.micros()).map(|o| o.2).sum();
                    prop_assert!(f.quantity.micros() <= offered);
                }
            }
        }
    }
}

#[test]
fn vertical_gap_takes_the_midpoint() {
    let m = 1_000_000;
    let bids = vec![("b".to_string(), 5 * m, 2 * m)];
    let asks = vec![("s1".to_string(), 2 * m, m), ("s2".to_string(), 4 * m, 2 * m)];
    let expected = BruteClear::Cleared { price: 4_500_000, quantity: 2 * m };
    assert_eq!(brute_force_clear(&bids, &asks), expected);
    assert_eq!(as_brute(&clear(&bids, &asks)), expected);
}
