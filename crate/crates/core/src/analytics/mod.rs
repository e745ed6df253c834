//! Closed-form expectations and risks of the futures market.
//!
//! Everything here is a function of the scenario and the contract terms only.
//! [`Analytics`] caches the binomial tables and the price-independent part of
//! the performer's expected utility so the negotiation can evaluate millions
//! of candidate terms cheaply. The free functions are one-shot conveniences.

mod binomial;
mod quadrature;

pub use binomial::{binom_pmf, BinomialTable};
pub use quadrature::{adaptive_simpson, exp_integral, EXP_INTEGRAL_TOL, MAX_DEPTH};

use serde::Serialize;
use thiserror::Error;

use crate::model::{ForwardContract, MarketParams};
use crate::offload;
use crate::scalar::{ceil_snap, floor_snap, tie_slack, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("index {k} outside 0..={n}")]
    Index { k: usize, n: usize },
    #[error("member count {kappa} outside 0..={max}")]
    Kappa { kappa: usize, max: usize },
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("lower integration limit {0} must be positive")]
    IntegralLimit(f64),
    #[error("integration limits out of order ({0} > {1})")]
    IntegralOrder(f64, f64),
}

/// Probabilities behind the three risk constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskReport<T> {
    pub seller_risk: T,
    pub member_risk: T,
    pub volunteer_risk: T,
}

impl<T: Real> RiskReport<T> {
    /// Whether every risk is within its threshold.
    pub fn acceptable(&self, params: &MarketParams<T>) -> bool {
        self.seller_risk <= params.xi_seller && self.member_risk <= params.xi_member && self.volunteer_risk <= params.xi_volunteer
    }
}

/// Highest per-cycle price at which a member with the worst channel still breaks even.
pub fn p_mem_max<T: Real>(params: &MarketParams<T>) -> T {
    let (w1, w2) = (params.weight_time, params.weight_energy);
    (w1 + w2 * params.local_power) / params.buyer_cpu
        - w1 / params.seller_cpu
        - (w1 + w2 * params.tx_power) * params.data_size
            / (params.bandwidth * params.compute_demand * (T::one() + params.tx_power * params.gamma_low).log2())
}

/// `E[d^size / R(γ)]` over the uniform channel distribution.
fn expected_upload_time<T: Real>(params: &MarketParams<T>) -> T {
    let e = params.tx_power;
    if params.gamma_high <= params.gamma_low {
        return params.data_size / params.uplink_rate(params.gamma_low);
    }
    let c1 = (T::one() + e * params.gamma_low).ln();
    let c2 = (T::one() + e * params.gamma_high).ln();
    let integral = exp_integral(c1, c2).expect("channel bounds are positive and ordered");
    T::LN_2() * params.data_size * integral / (params.bandwidth * e * (params.gamma_high - params.gamma_low))
}

/// Expected utility of a performer at contract price `price`, averaged over the channel.
pub fn expected_pp_utility<T: Real>(params: &MarketParams<T>, price: T) -> T {
    pp_utility_base(params) - price * params.compute_demand
}

fn pp_utility_base<T: Real>(params: &MarketParams<T>) -> T {
    if params.gamma_high <= params.gamma_low {
        return offload::pp_utility(params, T::zero(), params.gamma_low);
    }
    let (w1, w2) = (params.weight_time, params.weight_energy);
    let d = params.compute_demand;
    ((w1 + w2 * params.local_power) / params.buyer_cpu - w1 / params.seller_cpu) * d
        - (w1 + w2 * params.tx_power) * expected_upload_time(params)
}

/// Expected number of volunteers when `kappa` members hold contracts.
pub fn expected_volunteers<T: Real>(params: &MarketParams<T>, kappa: usize) -> Result<T, AnalyticsError> {
    Analytics::new(params)?.checked_kappa(kappa).map(|k| k.expected_volunteers)
}

/// Probability that a given member performs and is displaced.
pub fn volunteer_risk<T: Real>(params: &MarketParams<T>, kappa: usize) -> Result<T, AnalyticsError> {
    Analytics::new(params)?.checked_kappa(kappa).map(|k| k.volunteer_risk)
}

pub fn expected_member_utility<T: Real>(params: &MarketParams<T>, contract: &ForwardContract<T>) -> T {
    let an = Analytics::new(params).expect("valid parameters");
    an.member_utility(contract.price, contract.penalty, contract.compensation, contract.members)
}

pub fn expected_seller_utility<T: Real>(params: &MarketParams<T>, contract: &ForwardContract<T>) -> T {
    let an = Analytics::new(params).expect("valid parameters");
    an.seller_utility(contract.price, contract.penalty, contract.compensation, contract.members)
}

/// Probability that a member's utility falls to `ξ1 · U_min` or below.
pub fn member_risk<T: Real>(params: &MarketParams<T>, price: T, penalty: T) -> T {
    let (w1, w2) = (params.weight_time, params.weight_energy);
    let d = params.compute_demand;
    let e = params.tx_power;
    let a = params.arrival_prob;
    let c3 = (w1 + w2 * params.local_power) * d / params.buyer_cpu - w1 * d / params.seller_cpu + penalty * d - price * d;
    let c4 = (w1 + w2 * e) * params.data_size / params.bandwidth;
    let c5 = params.xi1 * params.u_min + penalty * d;

    // A defaulter earns −q·d; a performer earns c3 − c4/log2(1 + eγ) − q·d.
    let defaulter = if c5 >= T::zero() { T::one() } else { T::zero() };
    let lo = c3 - c4 / (T::one() + e * params.gamma_low).log2();
    let hi = c3 - c4 / (T::one() + e * params.gamma_high).log2();
    let performer = if c5 < lo {
        T::zero()
    } else if c5 >= hi {
        T::one()
    } else {
        let gamma = ((c4 / (c3 - c5)).exp2() - T::one()) / e;
        ((gamma - params.gamma_low) / (params.gamma_high - params.gamma_low))
            .max(T::zero())
            .min(T::one())
    };
    (T::one() - a) * defaulter + a * performer
}

/// Probability that the seller's realised utility is at most `ξ2` times its expectation.
pub fn seller_risk<T: Real>(params: &MarketParams<T>, contract: &ForwardContract<T>) -> T {
    let an = Analytics::new(params).expect("valid parameters");
    an.seller_risk(contract.price, contract.penalty, contract.compensation, contract.members)
}

/// All three risks of a contract.
pub fn risk_report<T: Real>(params: &MarketParams<T>, contract: &ForwardContract<T>) -> RiskReport<T> {
    let an = Analytics::new(params).expect("valid parameters");
    an.risks(contract.price, contract.penalty, contract.compensation, contract.members)
}

/// Per-κ quantities that do not depend on prices.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaStats<T> {
    pub kappa: usize,
    /// `E[min(X1, S)]`, the expected number of practical performers.
    pub expected_served: T,
    pub expected_volunteers: T,
    pub volunteer_risk: T,
}

/// Cached closed forms for one scenario.
#[derive(Debug, Clone)]
pub struct Analytics<T> {
    params: MarketParams<T>,
    tables: Vec<BinomialTable<T>>,
    stats: Vec<KappaStats<T>>,
    pp_base: T,
}

impl<T: Real> Analytics<T> {
    pub fn new(params: &MarketParams<T>) -> Result<Self, AnalyticsError> {
        let n = params.num_buyers;
        let s = params.seller_capacity;
        let a = params.arrival_prob;
        let tables = BinomialTable::family(n, a)?;
        let stats = (0..=n)
            .map(|kappa| {
                let t = &tables[kappa];
                let expected_served = t.expected_min(s);
                let (expected_volunteers, volunteer_risk) = if kappa <= s {
                    (T::zero(), T::zero())
                } else {
                    let ev = (T::of_usize(kappa) * a - expected_served).max(T::zero());
                    // a · Pr(at least S of the other κ−1 members perform).
                    (ev, (a * tables[kappa - 1].sf(s as i64)).min(T::one()))
                };
                KappaStats {
                    kappa,
                    expected_served,
                    expected_volunteers,
                    volunteer_risk,
                }
            })
            .collect();
        Ok(Self {
            params: params.clone(),
            tables,
            stats,
            pp_base: pp_utility_base(params),
        })
    }

    pub fn params(&self) -> &MarketParams<T> {
        &self.params
    }

    pub fn table(&self, kappa: usize) -> &BinomialTable<T> {
        &self.tables[kappa]
    }

    pub fn kappa(&self, kappa: usize) -> &KappaStats<T> {
        &self.stats[kappa]
    }

    pub fn checked_kappa(&self, kappa: usize) -> Result<&KappaStats<T>, AnalyticsError> {
        self.stats.get(kappa).ok_or(AnalyticsError::Kappa {
            kappa,
            max: self.params.num_buyers,
        })
    }

    pub fn expected_pp_utility(&self, price: T) -> T {
        self.pp_base - price * self.params.compute_demand
    }

    /// Sum of the members' expected utilities.
    pub fn member_utility(&self, p: T, q: T, r: T, kappa: usize) -> T {
        let st = &self.stats[kappa];
        let d = self.params.compute_demand;
        let a = self.params.arrival_prob;
        let k = T::of_usize(kappa);
        let ev = st.expected_volunteers;
        (k * a - ev) * self.expected_pp_utility(p) - k * q * d + k * a * q * d + r * d * ev
    }

    pub fn seller_utility(&self, p: T, q: T, r: T, kappa: usize) -> T {
        let d = self.params.compute_demand;
        let a = self.params.arrival_prob;
        let k = T::of_usize(kappa);
        if kappa <= self.params.seller_capacity {
            k * d * (q - a * q + a * p)
        } else {
            k * d * (q - a * q - a * r) + (p + r) * d * self.stats[kappa].expected_served
        }
    }

    pub fn member_risk(&self, p: T, q: T) -> T {
        member_risk(&self.params, p, q)
    }

    pub fn volunteer_risk(&self, kappa: usize) -> T {
        self.stats[kappa].volunteer_risk
    }

    /// Seller risk given a precomputed expected seller utility.
    ///
    /// Boundaries are compared on the scale of performer counts, so a
    /// threshold that is integral in exact arithmetic counts as reached.
    pub fn seller_risk_with(&self, p: T, q: T, r: T, kappa: usize, expected: T) -> T {
        let s = self.params.seller_capacity;
        let d = self.params.compute_demand;
        let table = &self.tables[kappa];
        let k = T::of_usize(kappa);
        let margin = p - q;
        if kappa <= s {
            let c6 = self.params.xi2 * expected / (d * margin) - q * k / margin;
            return table.cdf(index(floor_snap(c6)));
        }
        let st = T::of_usize(s);
        let x = (self.params.xi2 * expected / d - q * k) / margin;
        let lowest = T::zero().min(st - (k - st) * (q + r) / margin);
        if x < lowest - tie_slack(lowest) {
            return T::zero();
        }
        if x > st + tie_slack(st) {
            return T::one();
        }
        let below = index(floor_snap(x)).min(s as i64 - 1);
        let above = index(ceil_snap(st + (st - x) * margin / (q + r)));
        let first = if below < 0 { T::zero() } else { table.cdf(below) };
        (first + table.sf(above)).max(T::zero()).min(T::one())
    }

    pub fn seller_risk(&self, p: T, q: T, r: T, kappa: usize) -> T {
        let eu = self.seller_utility(p, q, r, kappa);
        self.seller_risk_with(p, q, r, kappa, eu)
    }

    pub fn risks(&self, p: T, q: T, r: T, kappa: usize) -> RiskReport<T> {
        RiskReport {
            seller_risk: self.seller_risk(p, q, r, kappa),
            member_risk: self.member_risk(p, q),
            volunteer_risk: self.volunteer_risk(kappa),
        }
    }
}

/// Converts a snapped index to `i64`, saturating far outside any table.
fn index<T: Real>(x: T) -> i64 {
    let v = x.as_f64();
    if v.is_nan() {
        -1
    } else {
        v.clamp(-1e15, 1e15) as i64
    }
}
