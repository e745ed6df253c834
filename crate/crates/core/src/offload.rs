//! Per-buyer completion time, energy and utility, and the optimal offloading rate.

use serde::Serialize;

use crate::model::MarketParams;
use crate::scalar::Real;

/// One buyer's operating point at a given offloading rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OffloadEvaluation<T> {
    pub lambda: T,
    pub edge_time: T,
    pub edge_energy: T,
    pub utility: T,
}

/// Completion time when a fraction `lambda` of the task runs at the edge.
///
/// The edge part (upload then remote compute) and the local remainder run in
/// parallel, so the slower of the two determines completion.
pub fn edge_time<T: Real>(params: &MarketParams<T>, lambda: T, gamma: T) -> T {
    let rate = params.uplink_rate(gamma);
    let remote = lambda * params.data_size / rate + lambda * params.compute_demand / params.seller_cpu;
    let local = (T::one() - lambda) * params.compute_demand / params.buyer_cpu;
    remote.max(local)
}

/// Energy spent by the buyer: radio for the offloaded share, CPU for the rest.
pub fn edge_energy<T: Real>(params: &MarketParams<T>, lambda: T, gamma: T) -> T {
    let rate = params.uplink_rate(gamma);
    params.tx_power * lambda * params.data_size / rate + params.local_power * (T::one() - lambda) * params.compute_demand / params.buyer_cpu
}

/// Weighted time and energy saved relative to full local execution, before payment.
pub fn savings<T: Real>(params: &MarketParams<T>, lambda: T, gamma: T) -> T {
    params.weight_time * (params.local_time() - edge_time(params, lambda, gamma))
        + params.weight_energy * (params.local_energy() - edge_energy(params, lambda, gamma))
}

/// Utility of a performer offloading its whole task at contract price `price`.
pub fn pp_utility<T: Real>(params: &MarketParams<T>, price: T, gamma: T) -> T {
    savings(params, T::one(), gamma) - price * params.compute_demand
}

/// Spot-market utility of a non-member buying a fraction `lambda` at price `price`.
pub fn nonmember_utility<T: Real>(params: &MarketParams<T>, price: T, lambda: T, alpha: bool, gamma: T) -> T {
    if !alpha {
        return T::zero();
    }
    savings(params, lambda, gamma) - price * lambda * params.compute_demand
}

/// Offloading rate at which the remote and local branches finish together.
pub fn breakpoint<T: Real>(params: &MarketParams<T>, gamma: T) -> T {
    let rate = params.uplink_rate(gamma);
    let (d, fs, fb) = (params.compute_demand, params.seller_cpu, params.buyer_cpu);
    d * fs / (params.data_size * fs * fb / rate + d * fb + d * fs)
}

/// Precomputed candidate operating points of one buyer at a fixed channel.
///
/// Utility is concave and piecewise linear in the offloading rate with a single
/// kink at the breakpoint, so the optimum over `[0, 1]` is attained at one of
/// `{0, breakpoint, 1}`. The savings of each candidate do not depend on the
/// price and are evaluated once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaChooser<T> {
    pub breakpoint: T,
    savings_at_breakpoint: T,
    savings_at_full: T,
    compute_demand: T,
}

impl<T: Real> LambdaChooser<T> {
    pub fn new(params: &MarketParams<T>, gamma: T) -> Self {
        let c8 = breakpoint(params, gamma);
        Self {
            breakpoint: c8,
            savings_at_breakpoint: savings(params, c8, gamma),
            savings_at_full: savings(params, T::one(), gamma),
            compute_demand: params.compute_demand,
        }
    }

    /// Best offloading rate and its utility at price `price`.
    ///
    /// Ties go to the smaller rate. A best utility that is not strictly positive
    /// means the buyer declines, returning `(0, 0)`.
    pub fn choose(&self, price: T) -> (T, T) {
        let d = self.compute_demand;
        let mut best = (T::zero(), T::zero());
        for (lambda, saved) in [(self.breakpoint, self.savings_at_breakpoint), (T::one(), self.savings_at_full)] {
            let u = saved - price * lambda * d;
            if u > best.1 {
                best = (lambda, u);
            }
        }
        best
    }
}

/// Utility-maximising offloading rate for a non-member quoted price `price`.
pub fn optimal_lambda<T: Real>(params: &MarketParams<T>, price: T, gamma: T) -> T {
    LambdaChooser::new(params, gamma).choose(price).0
}

/// Full operating point at the optimal offloading rate.
pub fn evaluate_optimal<T: Real>(params: &MarketParams<T>, price: T, gamma: T) -> OffloadEvaluation<T> {
    let (lambda, utility) = LambdaChooser::new(params, gamma).choose(price);
    OffloadEvaluation {
        lambda,
        edge_time: edge_time(params, lambda, gamma),
        edge_energy: edge_energy(params, lambda, gamma),
        utility,
    }
}

/// Slopes of the non-member utility on `[0, breakpoint]` and `[breakpoint, 1]`.
pub fn utility_slopes<T: Real>(params: &MarketParams<T>, price: T, gamma: T) -> (T, T) {
    let rate = params.uplink_rate(gamma);
    let (w1, w2) = (params.weight_time, params.weight_energy);
    let t_loc = params.local_time();
    let d = params.compute_demand;
    let common = w2 * params.local_power * t_loc - w2 * params.tx_power * params.data_size / rate - price * d;
    let below = w1 * t_loc + common;
    let above = -w1 * (params.data_size / rate + d / params.seller_cpu) + common;
    (below, above)
}
