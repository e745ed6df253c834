//! Self-checks run by `overbook validate`.
//!
//! Each suite recomputes a family of results by an independent, slower route
//! (enumeration, sampling, grid search, exhaustive search) and reports the
//! largest disagreement against a tolerance. Tolerances can be overridden in
//! the config with `tol_*` keys.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analytics::Analytics;
use crate::knapsack::{solve_binary, solve_grouped, KnapsackItem};
use crate::model::{round_rng, sample_realization, MarketParams, RawConfig, Violation, TOLERANCE_PREFIX};
use crate::offload::{breakpoint, nonmember_utility, optimal_lambda, pp_utility};
use crate::spot::{spot_differential, spot_uniform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Absolute, closed forms against enumeration.
    pub closed_form: f64,
    /// Standard errors, analytics against sampling.
    pub sigma: f64,
    /// Relative to the grid maximum, λ* against a fine grid.
    pub lambda_grid: f64,
    /// Absolute, solver value against exhaustive search.
    pub knapsack: f64,
    /// Relative shortfall of differential against uniform revenue.
    pub dominance: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            closed_form: 1e-10,
            sigma: 3.0,
            lambda_grid: 1e-4,
            knapsack: 1e-9,
            dominance: 1e-12,
        }
    }
}

pub const TOLERANCE_KEYS: [&str; 5] = ["tol_closed_form", "tol_sigma", "tol_lambda_grid", "tol_knapsack", "tol_dominance"];

impl Tolerances {
    pub fn from_config(raw: &RawConfig) -> Result<Self, Vec<Violation>> {
        let mut t = Tolerances::default();
        let mut bad = Vec::new();
        for (k, &v) in raw.range(TOLERANCE_PREFIX.to_string()..) {
            if !k.starts_with(TOLERANCE_PREFIX) {
                break;
            }
            let slot = match k.as_str() {
                "tol_closed_form" => &mut t.closed_form,
                "tol_sigma" => &mut t.sigma,
                "tol_lambda_grid" => &mut t.lambda_grid,
                "tol_knapsack" => &mut t.knapsack,
                "tol_dominance" => &mut t.dominance,
                _ => {
                    bad.push(Violation {
                        key: k.clone(),
                        message: format!("unknown tolerance (expected one of {})", TOLERANCE_KEYS.join(", ")),
                    });
                    continue;
                }
            };
            if v.is_finite() {
                *slot = v;
            } else {
                bad.push(Violation {
                    key: k.clone(),
                    message: "must be finite".into(),
                });
            }
        }
        if bad.is_empty() {
            Ok(t)
        } else {
            Err(bad)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub cases: u64,
    /// Where the largest deviation occurred.
    pub worst_case: String,
}

struct Worst {
    dev: f64,
    case: String,
    cases: u64,
}

impl Worst {
    fn new() -> Self {
        Worst {
            dev: 0.0,
            case: String::new(),
            cases: 0,
        }
    }

    fn see(&mut self, dev: f64, case: impl FnOnce() -> String) {
        self.cases += 1;
        // NaN counts as the worst possible deviation.
        if !(dev <= self.dev) {
            self.dev = if dev.is_nan() { f64::INFINITY } else { dev };
            self.case = case();
        }
    }

    fn report(self, name: &'static str, tolerance: f64) -> SuiteReport {
        SuiteReport {
            name,
            passed: self.dev <= tolerance,
            max_deviation: self.dev,
            tolerance,
            cases: self.cases,
            worst_case: self.case,
        }
    }
}

/// Binomial probabilities by the multiplicative recurrence, without logs.
fn binomial_by_recurrence(n: usize, a: f64) -> Vec<f64> {
    if a >= 1.0 {
        let mut v = vec![0.0; n + 1];
        v[n] = 1.0;
        return v;
    }
    if a <= 0.0 {
        let mut v = vec![0.0; n + 1];
        v[0] = 1.0;
        return v;
    }
    // Start from the mode to stay clear of underflow, then normalise.
    let mode = ((n as f64 + 1.0) * a).floor().min(n as f64) as usize;
    let mut v = vec![0.0; n + 1];
    v[mode] = 1.0;
    for k in mode..n {
        v[k + 1] = v[k] * (n - k) as f64 / (k + 1) as f64 * a / (1.0 - a);
    }
    for k in (0..mode).rev() {
        v[k] = v[k + 1] * (k + 1) as f64 / (n - k) as f64 * (1.0 - a) / a;
    }
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    v
}

/// Expected volunteers, volunteer risk, expected seller utility and seller risk
/// against sums over every outcome of the number of performers.
pub fn closed_forms(params: &MarketParams<f64>, tol: f64) -> SuiteReport {
    let mut w = Worst::new();
    let an = match Analytics::new(params) {
        Ok(an) => an,
        Err(e) => {
            w.see(f64::INFINITY, || e.to_string());
            return w.report("closed-form", tol);
        }
    };
    let s = params.seller_capacity;
    let d = params.compute_demand;
    let pmm = params.p_mem_max();
    let terms = [(0.95, 0.4, 0.9), (0.8, 0.1, 0.5), (0.6, 0.55, 1.0), (0.99, 0.98, 0.01)];
    for kappa in 1..=params.num_buyers {
        let pmf = binomial_by_recurrence(kappa, params.arrival_prob);
        let ev: f64 = (0..=kappa).map(|k| pmf[k] * k.saturating_sub(s) as f64).sum();
        w.see((an.kappa(kappa).expected_volunteers - ev).abs(), || format!("E[V], kappa={kappa}"));

        let others = binomial_by_recurrence(kappa - 1, params.arrival_prob);
        let vr = params.arrival_prob * (s..kappa).map(|k| others[k]).sum::<f64>();
        w.see((an.volunteer_risk(kappa) - vr).abs(), || format!("VRisk, kappa={kappa}"));

        for &(fp, fq, fr) in &terms {
            let p = fp * pmm;
            let q = fq * p;
            let r = fr * pmm;
            let u = |x: usize| q * d * kappa as f64 - (q + r) * d * x as f64 + (p + r) * d * x.min(s) as f64;
            let eu: f64 = (0..=kappa).map(|k| pmf[k] * u(k)).sum();
            let got = an.seller_utility(p, q, r, kappa);
            w.see((got - eu).abs(), || format!("seller EU, kappa={kappa}, p={p:e}"));
            let thr = params.xi2 * got;
            let slack = 1e-9 * thr.abs().max(1.0);
            let sr: f64 = (0..=kappa).filter(|&k| u(k) <= thr + slack).map(|k| pmf[k]).sum();
            w.see((an.seller_risk(p, q, r, kappa) - sr).abs(), || {
                format!("SRisk, kappa={kappa}, p={p:e}, q={q:e}, r={r:e}")
            });
        }
    }
    w.report("closed-form", tol)
}

/// Member risk and expected performer utility against sampling.
///
/// All ten (p, q) points reuse one sample of channels and arrivals.
pub fn monte_carlo(params: &MarketParams<f64>, samples: u64, sigmas: f64) -> SuiteReport {
    let mut w = Worst::new();
    let pmm = params.p_mem_max();
    let d = params.compute_demand;
    let thr = params.xi1 * params.u_min;
    let n = samples.max(2) as f64;
    // Half of the prices lie where only some channels break even.
    let hi = pp_utility(params, 0.0, params.gamma_high) / d;
    let points: Vec<(f64, f64)> = [0.5 * pmm, 0.75 * pmm, 0.95 * pmm, 0.999 * pmm]
        .into_iter()
        .chain([0.1, 0.3, 0.5, 0.7, 0.9].map(|t| pmm + t * (hi - pmm)))
        .chain([1.05 * hi])
        .enumerate()
        .map(|(k, p)| (p, p * 0.08 * (k + 1) as f64))
        .collect();
    let mut hits = vec![0u64; points.len()];
    let (mut sum, mut sq) = (0.0, 0.0);
    let mut rng = round_rng(0x6d63, 0);
    // U^PP(p, γ) = U^PP(0, γ) − p·d, so one running mean serves every price.
    for _ in 0..samples {
        let g = rng.gen_range(params.gamma_low..=params.gamma_high);
        let performs = rng.gen_bool(params.arrival_prob);
        let base = pp_utility(params, 0.0, g);
        sum += base;
        sq += base * base;
        for (h, &(p, q)) in hits.iter_mut().zip(&points) {
            let u = if performs { base - p * d } else { -q * d };
            if u <= thr {
                *h += 1;
            }
        }
    }
    let mean = sum / n;
    let se = ((sq / n - mean * mean).max(0.0) * n / (n - 1.0)).sqrt() / n.sqrt();
    for (&(p, q), &h) in points.iter().zip(&hits) {
        let analytic = crate::analytics::expected_pp_utility(params, p);
        w.see(z(analytic - (mean - p * d), se), || format!("E[U^PP], p={p:e}"));
        let freq = h as f64 / n;
        let mr = crate::analytics::member_risk(params, p, q);
        let se = (mr * (1.0 - mr) / n).sqrt();
        w.see(z(mr - freq, se), || format!("MRisk, p={p:e}, q={q:e}"));
    }
    w.report("monte-carlo", sigmas)
}

/// Deviation in standard errors; a zero standard error demands exact agreement.
fn z(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff.abs() / se
    } else if diff.abs() <= 1e-12 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// The offloading rule against a grid search over λ with step 1e-5.
pub fn lambda_grid(params: &MarketParams<f64>, pairs: u64, tol: f64) -> SuiteReport {
    let mut w = Worst::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6c61);
    let top = 2.0 * params.p_mem_max().max(params.seller_min_price);
    for _ in 0..pairs {
        let g = rng.gen_range(0.0..top);
        let gamma = rng.gen_range(params.gamma_low..=params.gamma_high);
        let lam = optimal_lambda(params, g, gamma);
        let c8 = breakpoint(params, gamma);
        if !(lam == 0.0 || lam == 1.0 || lam == c8) {
            w.see(f64::INFINITY, || format!("λ*={lam} outside {{0, C8, 1}} at g={g:e}"));
            continue;
        }
        let u_star = nonmember_utility(params, g, lam, true, gamma);
        let grid_max = (0..=100_000)
            .map(|i| nonmember_utility(params, g, i as f64 * 1e-5, true, gamma))
            .fold(f64::NEG_INFINITY, f64::max);
        let shortfall = (grid_max - u_star).max(0.0);
        let rel = if grid_max != 0.0 { shortfall / grid_max.abs() } else { shortfall };
        w.see(rel, || format!("g={g:e}, gamma={gamma}"));
    }
    w.report("lambda-grid", tol)
}

/// Weight in whole 1e-4 units; instances are drawn on that grid.
fn units(w: f64) -> u64 {
    (w * 1e4).round() as u64
}

fn exhaustive_binary(items: &[KnapsackItem<f64>], cap: f64) -> f64 {
    let n = items.len();
    let cap = units(cap);
    let mut best: f64 = 0.0;
    for mask in 0u32..(1 << n) {
        let (mut wt, mut v) = (0, 0.0);
        for (i, it) in items.iter().enumerate() {
            if mask >> i & 1 == 1 {
                wt += units(it.weight);
                v += it.value;
            }
        }
        if wt <= cap {
            best = best.max(v);
        }
    }
    best
}

fn exhaustive_grouped(groups: &[Vec<KnapsackItem<f64>>], cap: f64) -> f64 {
    fn go(groups: &[Vec<KnapsackItem<f64>>], cap: u64, wt: u64, v: f64) -> f64 {
        match groups.split_first() {
            None => {
                if wt <= cap {
                    v
                } else {
                    f64::NEG_INFINITY
                }
            }
            Some((g, rest)) => {
                let mut best = go(rest, cap, wt, v);
                for o in g {
                    best = best.max(go(rest, cap, wt + units(o.weight), v + o.value));
                }
                best
            }
        }
    }
    go(groups, units(cap), 0, 0.0)
}

/// Weights on a 1e-4 grid, so that exhaustive search and the solvers agree on feasibility.
fn grid_item(rng: &mut ChaCha8Rng, owner: usize) -> KnapsackItem<f64> {
    KnapsackItem {
        weight: rng.gen_range(1..=10_000) as f64 / 1e4,
        value: rng.gen_range(0.01..10.0),
        owner,
        price: 0.0,
    }
}

/// Both knapsack solvers against exhaustive search.
pub fn knapsack(instances: u64, tol: f64) -> SuiteReport {
    let mut w = Worst::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6b6e);
    for t in 0..instances {
        let n = rng.gen_range(1..=12);
        let items: Vec<_> = (0..n).map(|i| grid_item(&mut rng, i)).collect();
        let cap = rng.gen_range(0..=n * 6000) as f64 / 1e4;
        let sel = solve_binary(&items, cap);
        let over = (sel.weight - cap - 1e-12).max(0.0);
        let best = exhaustive_binary(&items, cap);
        w.see((sel.value - best).abs().max(over), || format!("binary instance {t}"));

        let groups: Vec<Vec<_>> = (0..rng.gen_range(1..=6))
            .map(|g| (0..rng.gen_range(1..=4)).map(|_| grid_item(&mut rng, g)).collect())
            .collect();
        let cap = rng.gen_range(0..=groups.len() * 6000) as f64 / 1e4;
        let sel = solve_grouped(&groups, cap);
        let over = (sel.weight - cap - 1e-12).max(0.0);
        let best = exhaustive_grouped(&groups, cap);
        w.see((sel.value - best).abs().max(over), || format!("grouped instance {t}"));
    }
    w.report("knapsack", tol)
}

/// Differential pricing earns at least as much as uniform pricing on the same round.
pub fn spot_dominance(params: &MarketParams<f64>, rounds: u64, tol: f64) -> SuiteReport {
    let mut w = Worst::new();
    let mut pick = ChaCha8Rng::seed_from_u64(0x7370);
    let mut buyers: Vec<usize> = (0..params.num_buyers).collect();
    for round in 0..rounds {
        let r = sample_realization(params, &mut round_rng(0x7370, round));
        buyers.shuffle(&mut pick);
        let k = pick.gen_range(0..=params.num_buyers);
        let cap = pick.gen_range(0..=params.seller_capacity);
        let nonmembers = &buyers[k..];
        let u = spot_uniform(params, &r, nonmembers, cap).seller_utility;
        let dv = spot_differential(params, &r, nonmembers, cap).seller_utility;
        let shortfall = if u > 0.0 { (u - dv).max(0.0) / u } else { (u - dv).max(0.0) };
        w.see(shortfall, || format!("round {round}, capacity {cap}"));
    }
    w.report("spot-dominance", tol)
}

/// Sizes of the sampled and searched families.
#[derive(Debug, Clone, Copy)]
pub struct Effort {
    pub mc_samples: u64,
    pub lambda_pairs: u64,
    pub knapsack_instances: u64,
    pub spot_rounds: u64,
}

impl Default for Effort {
    fn default() -> Self {
        Effort {
            mc_samples: 1_000_000,
            lambda_pairs: 1_000,
            knapsack_instances: 500,
            spot_rounds: 300,
        }
    }
}

pub fn run_all(params: &MarketParams<f64>, tol: &Tolerances, effort: Effort) -> Vec<SuiteReport> {
    vec![
        closed_forms(params, tol.closed_form),
        monte_carlo(params, effort.mc_samples, tol.sigma),
        lambda_grid(params, effort.lambda_pairs, tol.lambda_grid),
        knapsack(effort.knapsack_instances, tol.knapsack),
        spot_dominance(params, effort.spot_rounds, tol.dominance),
    ]
}
