//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use overbook::knapsack::KnapsackItem;
use overbook::model::{reference_config, validate_params, ForwardContract, TradingRealization};
use overbook::simulator::TradingMetrics;
use overbook::Params;

pub fn reference() -> Params {
    validate_params(&reference_config()).unwrap()
}

pub fn rat(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap()
}

pub fn int(x: usize) -> BigRational {
    BigRational::from_integer(BigInt::from(x))
}

pub fn float(x: &BigRational) -> f64 {
    x.to_f64().unwrap()
}

/// Exact binomial probabilities `Pr(Bin(n, a) = k)`, `k = 0..=n`.
pub fn exact_binomial(n: usize, a: &BigRational) -> Vec<BigRational> {
    let b = BigRational::one() - a;
    let mut out = Vec::with_capacity(n + 1);
    let mut choose = BigInt::one();
    for k in 0..=n {
        if k > 0 {
            choose = choose * BigInt::from(n - k + 1) / BigInt::from(k);
        }
        let mut p = BigRational::from_integer(choose.clone());
        for _ in 0..k {
            p *= a;
        }
        for _ in 0..n - k {
            p *= &b;
        }
        out.push(p);
    }
    out
}

/// Seller futures utility with `x` performers, exactly.
pub fn seller_utility_exact(
    p: &BigRational,
    q: &BigRational,
    r: &BigRational,
    d: &BigRational,
    kappa: usize,
    s: usize,
    x: usize,
) -> BigRational {
    q * d * int(kappa) - (q + r) * d * int(x) + (p + r) * d * int(x.min(s))
}

pub fn sum_exact<'a>(xs: impl IntoIterator<Item = &'a BigRational>) -> BigRational {
    xs.into_iter().fold(BigRational::zero(), |a, b| a + b)
}

/// Weight in whole 1e-4 units; test instances are drawn on that grid.
pub fn units(w: f64) -> u64 {
    (w * 1e4).round() as u64
}

pub fn exhaustive_binary(items: &[KnapsackItem<f64>], cap: f64) -> f64 {
    let cap = units(cap);
    let w: Vec<u64> = items.iter().map(|i| units(i.weight)).collect();
    let mut best = 0.0f64;
    for mask in 0u32..(1 << items.len()) {
        let (mut wt, mut v) = (0u64, 0.0);
        for i in 0..items.len() {
            if mask >> i & 1 == 1 {
                wt += w[i];
                v += items[i].value;
            }
        }
        if wt <= cap && v > best {
            best = v;
        }
    }
    best
}

pub fn exhaustive_grouped(groups: &[Vec<KnapsackItem<f64>>], cap: f64) -> f64 {
    fn go(groups: &[Vec<KnapsackItem<f64>>], left: i64, v: f64) -> f64 {
        if left < 0 {
            return f64::NEG_INFINITY;
        }
        match groups.split_first() {
            None => v,
            Some((g, rest)) => g
                .iter()
                .map(|o| go(rest, left - units(o.weight) as i64, v + o.value))
                .fold(go(rest, left, v), f64::max),
        }
    }
    go(groups, units(cap) as i64, 0.0)
}

/// Upload rate written out from the channel model.
fn rate(p: &Params, gamma: f64) -> f64 {
    p.bandwidth * (1.0 + p.tx_power * gamma).log2()
}

/// Buyer utility when offloading `lambda` of the task at unit price `g`.
pub fn offload_utility(p: &Params, g: f64, lambda: f64, gamma: f64) -> f64 {
    let d = p.compute_demand;
    let up = lambda * p.data_size / rate(p, gamma);
    let t_loc = d / p.buyer_cpu;
    let t = (up + lambda * d / p.seller_cpu).max((1.0 - lambda) * t_loc);
    let e = p.tx_power * up + p.local_power * (1.0 - lambda) * t_loc;
    p.weight_time * (t_loc - t) + p.weight_energy * (p.local_power * t_loc - e) - g * lambda * d
}

/// Recomputes every utility of a round from its decisions, line by line.
///
/// Returns `(seller utility, buyer utilities)`.
pub fn replay_round(
    p: &Params,
    contract: Option<&ForwardContract<f64>>,
    r: &TradingRealization<f64>,
    m: &TradingMetrics<f64>,
) -> (f64, Vec<f64>) {
    let d = p.compute_demand;
    let kappa = contract.map_or(0, |c| c.members);
    let mut buyers = vec![0.0; p.num_buyers];
    let mut seller = 0.0;

    // Volunteers: the worst channels among performing members.
    let mut perf: Vec<usize> = (0..kappa).filter(|&i| r.alpha[i]).collect();
    perf.sort_by(|&a, &b| r.gamma[a].partial_cmp(&r.gamma[b]).unwrap().then(a.cmp(&b)));
    let excess = perf.len().saturating_sub(p.seller_capacity);
    let mut vol: Vec<usize> = perf[..excess].to_vec();
    vol.sort();
    assert_eq!(vol, m.volunteer_ids);

    if let Some(c) = contract {
        for (i, u) in buyers.iter_mut().enumerate().take(kappa) {
            if !r.alpha[i] {
                *u = -c.penalty * d;
                seller += c.penalty * d;
            } else if vol.contains(&i) {
                *u = c.compensation * d;
                seller -= c.compensation * d;
            } else {
                *u = offload_utility(p, c.price, 1.0, r.gamma[i]);
                seller += c.price * d;
            }
        }
    }
    for (k, b) in (kappa..p.num_buyers).enumerate() {
        if m.spot.trade_decision[k] {
            let (g, l) = (m.spot.prices[k], m.spot.offload_rates[k]);
            buyers[b] = offload_utility(p, g, l, r.gamma[b]);
            seller += g * l * d;
        }
    }
    (seller, buyers)
}

/// Binomial probabilities in plain floating point, by the multiplicative recurrence.
pub fn binomial(n: usize, a: f64) -> Vec<f64> {
    let mut v = vec![0.0; n + 1];
    if a >= 1.0 {
        v[n] = 1.0;
        return v;
    }
    v[0] = (1.0 - a).powi(n as i32);
    for k in 0..n {
        v[k + 1] = v[k] * (n - k) as f64 / (k + 1) as f64 * a / (1.0 - a);
    }
    v
}

/// Seller, member and volunteer risk of a contract, by enumeration and bisection.
pub fn independent_risks(p: &Params, c: &ForwardContract<f64>) -> (f64, f64, f64) {
    let (s, k, d, a) = (p.seller_capacity, c.members, p.compute_demand, p.arrival_prob);
    let u = |x: usize| {
        c.penalty * d * k as f64 - (c.penalty + c.compensation) * d * x as f64 + (c.price + c.compensation) * d * x.min(s) as f64
    };
    let pmf = binomial(k, a);
    let eu: f64 = (0..=k).map(|x| pmf[x] * u(x)).sum();
    let thr = p.xi2 * eu;
    let srisk: f64 = (0..=k).filter(|&x| u(x) <= thr + 1e-9 * thr.abs().max(1.0)).map(|x| pmf[x]).sum();

    let others = binomial(k - 1, a);
    let vrisk = a * (s..k).map(|x| others[x]).sum::<f64>();

    // Performer utility rises with the channel; find where it crosses the threshold.
    let limit = p.xi1 * p.u_min;
    let perf = |g: f64| offload_utility(p, c.price, 1.0, g);
    let share = if perf(p.gamma_high) <= limit {
        1.0
    } else if perf(p.gamma_low) > limit {
        0.0
    } else {
        let (mut lo, mut hi) = (p.gamma_low, p.gamma_high);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if perf(mid) <= limit {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo - p.gamma_low) / (p.gamma_high - p.gamma_low)
    };
    let defaulter = if -c.penalty * d <= limit { 1.0 } else { 0.0 };
    let mrisk = (1.0 - a) * defaulter + a * share;
    (srisk, mrisk, vrisk)
}

/// Every constraint a signed contract must meet, re-derived from the parameters.
pub fn contract_violations(p: &Params, c: &ForwardContract<f64>) -> Vec<String> {
    let mut bad = Vec::new();
    let (sr, mr, vr) = independent_risks(p, c);
    if sr > p.xi_seller {
        bad.push(format!("seller risk {sr}"));
    }
    if mr > p.xi_member {
        bad.push(format!("member risk {mr}"));
    }
    if vr > p.xi_volunteer {
        bad.push(format!("volunteer risk {vr}"));
    }
    if !(1..=p.num_buyers).contains(&c.members) {
        bad.push(format!("member count {}", c.members));
    }
    if !(c.price > c.penalty && c.penalty > 0.0 && c.compensation > 0.0) {
        bad.push("p > q > 0, r > 0".into());
    }
    // Break-even price for the worst channel, written out directly.
    let worst = offload_utility(p, 0.0, 1.0, p.gamma_low) / p.compute_demand;
    if c.price < p.seller_min_price * (1.0 - 1e-12) || c.price >= worst {
        bad.push(format!("price {:e} outside [{:e}, {:e})", c.price, p.seller_min_price, worst));
    }
    bad
}

/// Ten (p, q) points. Five lie between the break-even prices of the worst
/// and the best channel, where the performer part of the member risk is
/// strictly between 0 and 1.
pub fn mc_points(p: &overbook::Params) -> Vec<(f64, f64)> {
    let lo = p.p_mem_max();
    let hi = offload_utility(p, 0.0, 1.0, p.gamma_high) / p.compute_demand;
    let prices = [0.5 * lo, 0.75 * lo, 0.95 * lo, 0.999 * lo]
        .into_iter()
        .chain([0.1, 0.3, 0.5, 0.7, 0.9].map(|t| lo + t * (hi - lo)))
        .chain([1.05 * hi]);
    prices
        .enumerate()
        .map(|(k, price)| (price, price * 0.08 * (k + 1) as f64))
        .collect()
}
