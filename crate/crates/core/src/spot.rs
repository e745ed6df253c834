//! Per-round spot sessions between the seller and the non-members.
//!
//! Both pricing rules raise a price ladder from `p^Sel_min` in steps of `Δp`.
//! Under uniform pricing every tasked non-member is quoted the same price at
//! each step and the seller packs the offered rates into the residual
//! capacity; the ladder ends once nobody offloads anything. Under differential
//! pricing each non-member gets a private ladder that ends at its first
//! refusal, and the seller then picks at most one accepted (price, rate) pair
//! per buyer.

use serde::{Deserialize, Serialize};

use crate::knapsack::{solve_binary, solve_grouped, KnapsackItem};
use crate::model::{MarketParams, SpotOutcome, TradingRealization};
use crate::offload::LambdaChooser;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PricingRule {
    Uniform,
    Differential,
}

/// Ladder length beyond which a session is abandoned as runaway.
///
/// A buyer declines once the price exceeds its per-cycle savings, so real
/// ladders are a few hundred steps; this only guards degenerate inputs.
pub const MAX_LADDER_STEPS: u64 = 10_000_000;

fn ladder_price<T: Real>(params: &MarketParams<T>, k: u64) -> T {
    params.seller_min_price + T::of(k as f64) * params.delta_p
}

/// Positions in `nonmembers` whose buyer has a task this round.
fn tasked_positions<T: Real>(realization: &TradingRealization<T>, nonmembers: &[usize]) -> Vec<usize> {
    (0..nonmembers.len()).filter(|&i| realization.alpha[nonmembers[i]]).collect()
}

pub fn spot_session<T: Real>(
    rule: PricingRule,
    params: &MarketParams<T>,
    realization: &TradingRealization<T>,
    nonmembers: &[usize],
    capacity: usize,
) -> SpotOutcome<T> {
    match rule {
        PricingRule::Uniform => spot_uniform(params, realization, nonmembers, capacity),
        PricingRule::Differential => spot_differential(params, realization, nonmembers, capacity),
    }
}

/// A run of ladder steps during which every buyer's rate stays the same.
struct Segment<T> {
    last_step: u64,
    lambdas: Vec<T>,
}

/// Uniform pricing: one price for all non-members.
pub fn spot_uniform<T: Real>(
    params: &MarketParams<T>,
    realization: &TradingRealization<T>,
    nonmembers: &[usize],
    capacity: usize,
) -> SpotOutcome<T> {
    let mut out = SpotOutcome::empty(nonmembers);
    let tasked = tasked_positions(realization, nonmembers);
    if capacity == 0 || tasked.is_empty() {
        return out;
    }
    let choosers: Vec<LambdaChooser<T>> = tasked
        .iter()
        .map(|&i| LambdaChooser::new(params, realization.gamma[nonmembers[i]]))
        .collect();

    let mut segments: Vec<Segment<T>> = Vec::new();
    let mut steps = 0u64;
    loop {
        let g = ladder_price(params, steps);
        steps += 1;
        let lambdas: Vec<T> = choosers.iter().map(|c| c.choose(g).0).collect();
        if lambdas.iter().all(|&l| l == T::zero()) || steps >= MAX_LADDER_STEPS {
            break;
        }
        match segments.last_mut() {
            Some(seg) if seg.lambdas == lambdas => seg.last_step = steps - 1,
            _ => segments.push(Segment {
                last_step: steps - 1,
                lambdas,
            }),
        }
    }
    for &i in &tasked {
        out.quote_counts[i] = steps;
    }
    if segments.is_empty() {
        return out;
    }

    // Within a segment the packing is fixed and revenue grows with the price,
    // so only each segment's last step can be optimal. Segments are visited
    // from the most expensive down and skipped when even a full packing could
    // not beat the incumbent.
    let d = params.compute_demand;
    let cap_t = T::of_usize(capacity);
    let bound_margin = T::one() + T::of(1e-12);
    let mut best: Option<(usize, T, Vec<bool>)> = None;
    for (si, seg) in segments.iter().enumerate().rev() {
        let g = ladder_price(params, seg.last_step);
        let total = seg.lambdas.iter().fold(T::zero(), |a, &b| a + b);
        let bound = g * d * total.min(cap_t) * bound_margin;
        if let Some((_, u, _)) = &best {
            if bound < *u {
                continue;
            }
        }
        let items: Vec<KnapsackItem<T>> = seg
            .lambdas
            .iter()
            .enumerate()
            .map(|(k, &l)| KnapsackItem {
                weight: l,
                value: l,
                owner: tasked[k],
                price: g,
            })
            .collect();
        let sel = solve_binary(&items, cap_t);
        let u = g * d * sel.value;
        // Visiting in descending price order, `>=` keeps the cheaper of two equal revenues.
        if best.as_ref().is_none_or(|(_, b, _)| u >= *b) {
            best = Some((si, u, sel.chosen));
        }
    }
    let (si, u, chosen) = best.expect("at least one segment");
    let seg = &segments[si];
    let g = ladder_price(params, seg.last_step);
    for (k, &i) in tasked.iter().enumerate() {
        out.prices[i] = g;
        out.offload_rates[i] = seg.lambdas[k];
        out.trade_decision[i] = chosen[k];
    }
    out.seller_utility = u;
    out
}

/// Differential pricing: a private ladder per non-member.
pub fn spot_differential<T: Real>(
    params: &MarketParams<T>,
    realization: &TradingRealization<T>,
    nonmembers: &[usize],
    capacity: usize,
) -> SpotOutcome<T> {
    let mut out = SpotOutcome::empty(nonmembers);
    let tasked = tasked_positions(realization, nonmembers);
    if capacity == 0 || tasked.is_empty() {
        return out;
    }
    let d = params.compute_demand;
    let groups: Vec<Vec<KnapsackItem<T>>> = tasked
        .iter()
        .map(|&i| {
            let chooser = LambdaChooser::new(params, realization.gamma[nonmembers[i]]);
            let mut options = Vec::new();
            for k in 0..MAX_LADDER_STEPS {
                let g = ladder_price(params, k);
                let (lambda, _) = chooser.choose(g);
                if lambda == T::zero() {
                    break;
                }
                options.push(KnapsackItem {
                    weight: lambda,
                    value: g * lambda * d,
                    owner: i,
                    price: g,
                });
            }
            options
        })
        .collect();
    for (k, &i) in tasked.iter().enumerate() {
        out.quote_counts[i] = groups[k].len() as u64;
    }
    let sel = solve_grouped(&groups, T::of_usize(capacity));
    for (k, &i) in tasked.iter().enumerate() {
        if let Some(o) = sel.choice[k] {
            let opt = &groups[k][o];
            out.trade_decision[i] = true;
            out.prices[i] = opt.price;
            out.offload_rates[i] = opt.weight;
        }
    }
    out.seller_utility = sel.value;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{reference_config, round_rng, sample_realization, validate_params};
    use crate::offload::nonmember_utility;

    fn params() -> MarketParams<f64> {
        validate_params(&reference_config()).unwrap()
    }

    #[test]
    fn no_tasks_no_session() {
        let p = params();
        let mut r = sample_realization(&p, &mut round_rng(3, 0));
        r.alpha.iter_mut().for_each(|a| *a = false);
        let nm: Vec<usize> = (0..30).collect();
        for rule in [PricingRule::Uniform, PricingRule::Differential] {
            let o = spot_session(rule, &p, &r, &nm, 15);
            assert_eq!(o.traded(), 0);
            assert_eq!(o.total_quotes(), 0);
        }
    }

    #[test]
    fn zero_capacity_skips_market() {
        let p = params();
        let r = sample_realization(&p, &mut round_rng(3, 1));
        let nm: Vec<usize> = (10..30).collect();
        let o = spot_uniform(&p, &r, &nm, 0);
        assert_eq!(o.total_quotes(), 0);
        assert_eq!(o.seller_utility, 0.0);
    }

    #[test]
    fn outcomes_are_feasible_and_individually_rational() {
        let p = params();
        let nm: Vec<usize> = (12..30).collect();
        for round in 0..40 {
            let r = sample_realization(&p, &mut round_rng(11, round));
            for cap in [1usize, 3, 7] {
                for rule in [PricingRule::Uniform, PricingRule::Differential] {
                    let o = spot_session(rule, &p, &r, &nm, cap);
                    assert!(o.traded_load() <= cap as f64);
                    for (k, &b) in nm.iter().enumerate() {
                        if o.trade_decision[k] {
                            assert!(r.alpha[b] && o.offload_rates[k] > 0.0);
                            assert!(o.prices[k] >= p.seller_min_price);
                            let u = nonmember_utility(&p, o.prices[k], o.offload_rates[k], true, r.gamma[b]);
                            assert!(u > 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn differential_dominates_uniform() {
        let p = params();
        let nm: Vec<usize> = (15..30).collect();
        for round in 0..40 {
            let r = sample_realization(&p, &mut round_rng(5, round));
            let u = spot_uniform(&p, &r, &nm, 4).seller_utility;
            let dv = spot_differential(&p, &r, &nm, 4).seller_utility;
            assert!(dv >= u * (1.0 - 1e-12), "round {round}: {dv} < {u}");
        }
    }
}
