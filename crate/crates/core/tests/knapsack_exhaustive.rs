mod common;

use common::*;
use overbook::knapsack::{solve_binary, solve_grouped, KnapsackItem};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Items on the 1e-4 weight grid; `narrow` draws weights near one slot, as spot rates are.
fn item(rng: &mut ChaCha8Rng, narrow: bool) -> KnapsackItem<f64> {
    let w = if narrow {
        rng.gen_range(9_000..=10_000)
    } else {
        rng.gen_range(1..=10_000)
    };
    KnapsackItem {
        weight: w as f64 / 1e4,
        value: rng.gen_range(0.01..10.0),
        owner: 0,
        price: 0.0,
    }
}

#[test]
fn binary_matches_exhaustive() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for t in 0..400 {
        let narrow = t % 2 == 0;
        let n = rng.gen_range(1..=13);
        let items: Vec<_> = (0..n).map(|_| item(&mut rng, narrow)).collect();
        let cap = rng.gen_range(0..=n * 7_000) as f64 / 1e4;
        let s = solve_binary(&items, cap);
        let best = exhaustive_binary(&items, cap);
        assert!((s.value - best).abs() < 1e-9, "instance {t}: {} vs {best}", s.value);
        assert!(s.weight <= cap + 1e-12);
        let recount: f64 = items.iter().zip(&s.chosen).filter(|(_, &c)| c).map(|(i, _)| i.value).sum();
        assert!((recount - s.value).abs() < 1e-12);
    }
}

#[test]
fn grouped_matches_exhaustive() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for t in 0..400 {
        let narrow = t % 2 == 0;
        let groups: Vec<Vec<_>> = (0..rng.gen_range(1..=7))
            .map(|_| (0..rng.gen_range(1..=5)).map(|_| item(&mut rng, narrow)).collect())
            .collect();
        let cap = rng.gen_range(0..=groups.len() * 7_000) as f64 / 1e4;
        let s = solve_grouped(&groups, cap);
        let best = exhaustive_grouped(&groups, cap);
        assert!((s.value - best).abs() < 1e-9, "instance {t}: {} vs {best}", s.value);
        assert!(s.weight <= cap + 1e-12);
        for (g, c) in s.choice.iter().enumerate() {
            if let Some(i) = c {
                assert!(*i < groups[g].len());
            }
        }
    }
}

/// The best choice fills a capacity whose grid product rounds just below a whole unit.
#[test]
fn exact_fit_at_awkward_capacity() {
    let opt = |w: f64, v: f64| KnapsackItem {
        weight: w,
        value: v,
        owner: 0,
        price: 0.0,
    };
    let groups = vec![
        vec![opt(0.0347, 7.86), opt(0.9633, 9.14)],
        vec![opt(0.213, 9.18), opt(0.7471, 8.19)],
        vec![opt(0.1728, 5.73)],
        vec![opt(0.5919, 9.12), opt(0.5014, 5.5)],
        vec![opt(0.2022, 4.31)],
    ];
    let s = solve_grouped(&groups, 1.2146);
    assert!((s.value - exhaustive_grouped(&groups, 1.2146)).abs() < 1e-12);
    assert_eq!(s.choice, vec![Some(0), Some(0), Some(0), Some(0), Some(0)]);
    let flat: Vec<_> = groups.iter().map(|g| g[0]).collect();
    assert!(solve_binary(&flat, 1.2146).chosen.iter().all(|&c| c));
}

#[test]
fn off_grid_weights_stay_feasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..300 {
        let items: Vec<_> = (0..rng.gen_range(1..=10))
            .map(|_| KnapsackItem {
                weight: rng.gen_range(0.0..1.0),
                value: rng.gen_range(0.0..1.0),
                owner: 0,
                price: 0.0,
            })
            .collect();
        let cap = rng.gen_range(0.0..5.0);
        let s = solve_binary(&items, cap);
        assert!(s.weight <= cap);
        // Rounding weights up can only lose value relative to the true optimum.
        let mut best: f64 = 0.0;
        for mask in 0u32..(1 << items.len()) {
            let (w, v) = items
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .fold((0.0, 0.0), |a, (_, it)| (a.0 + it.weight, a.1 + it.value));
            if w <= cap {
                best = best.max(v);
            }
        }
        assert!(s.value <= best + 1e-12);
    }
}

proptest! {
    #[test]
    fn value_grows_with_capacity(seed in 0u64..1000, cap in 0.0f64..4.0, extra in 0.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items: Vec<_> = (0..8).map(|_| item(&mut rng, false)).collect();
        let a = solve_binary(&items, cap).value;
        let b = solve_binary(&items, cap + extra).value;
        prop_assert!(b >= a - 1e-12);
    }

    #[test]
    fn grouped_with_singletons_equals_binary(seed in 0u64..1000, cap in 0.0f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items: Vec<_> = (0..8).map(|_| item(&mut rng, seed % 2 == 0)).collect();
        let groups: Vec<Vec<_>> = items.iter().map(|i| vec![*i]).collect();
        let a = solve_binary(&items, cap).value;
        let b = solve_grouped(&groups, cap).value;
        prop_assert!((a - b).abs() < 1e-9);
    }
}
