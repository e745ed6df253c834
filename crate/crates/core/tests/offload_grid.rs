mod common;

use common::*;
use overbook::offload::{breakpoint, evaluate_optimal, optimal_lambda};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid_max(p: &overbook::Params, g: f64, gamma: f64) -> f64 {
    (0..=100_000)
        .map(|i| offload_utility(p, g, i as f64 * 1e-5, gamma))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn optimal_rate_beats_fine_grid() {
    let p = reference();
    let top = 2.0 * p.p_mem_max();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..500 {
        let g = rng.gen_range(0.0..top);
        let gamma = rng.gen_range(p.gamma_low..=p.gamma_high);
        let lam = optimal_lambda(&p, g, gamma);
        assert!(lam == 0.0 || lam == 1.0 || lam == breakpoint(&p, gamma));
        let best = grid_max(&p, g, gamma);
        let got = offload_utility(&p, g, lam, gamma);
        assert!(got >= best - 1e-4 * best.abs(), "g={g:e} gamma={gamma}: {got} < {best}");
    }
}

#[test]
fn rate_regimes_at_reference_channel() {
    let p = reference();
    let gamma = 300.0;
    let c8 = breakpoint(&p, gamma);
    assert!((0.9..1.0).contains(&c8));
    assert_eq!(optimal_lambda(&p, 1e-10, gamma), 1.0);
    assert_eq!(optimal_lambda(&p, 1e-9, gamma), c8);
    assert_eq!(optimal_lambda(&p, 2e-9, gamma), 0.0);
}

#[test]
fn utility_reported_with_rate_is_positive_or_zero() {
    let p = reference();
    for k in 0..400 {
        let g = k as f64 * 5e-12;
        let e = evaluate_optimal(&p, g, 250.0);
        if e.lambda == 0.0 {
            assert_eq!(e.utility, 0.0);
        } else {
            assert!(e.utility > 0.0);
            assert!((e.utility - offload_utility(&p, g, e.lambda, 250.0)).abs() < 1e-15);
        }
    }
}

proptest! {
    #[test]
    fn higher_price_never_raises_offloading(
        g1 in 0.0f64..3e-9,
        dg in 0.0f64..1e-9,
        gamma in 100.0f64..500.0,
    ) {
        let p = reference();
        prop_assert!(optimal_lambda(&p, g1 + dg, gamma) <= optimal_lambda(&p, g1, gamma));
    }

    #[test]
    fn chosen_rate_is_never_worse_than_the_candidates(g in 0.0f64..3e-9, gamma in 100.0f64..500.0) {
        let p = reference();
        let lam = optimal_lambda(&p, g, gamma);
        let u = offload_utility(&p, g, lam, gamma);
        for c in [0.0, 1.0, breakpoint(&p, gamma)] {
            prop_assert!(u >= offload_utility(&p, g, c, gamma) - 1e-15);
        }
    }
}
