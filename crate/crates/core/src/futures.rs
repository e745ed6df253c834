//! Alternating bilateral negotiation of the forward contract.
//!
//! The seller quotes price, penalty and compensation on fixed grids. For each
//! quotation it computes the member counts it can accept at its risk level,
//! the buyers' agent checks the member risk, and any member count both sides
//! accept is stored as a candidate. The seller finally signs the candidate with
//! the highest expected utility.
//!
//! Loop control follows the published pseudo-code literally, including its
//! jumps: an empty seller set advances the penalty and restarts the
//! compensation loop in place, a member-risk violation abandons the current
//! price, and a seller set disjoint from the members' set abandons the current
//! penalty. One guard is added: the compensation loop stops as soon as the
//! penalty leaves its grid or reaches the price.
//!
//! Price rows are independent, so they are scanned in parallel and merged in
//! grid order; the result does not depend on the worker count.

use rayon::prelude::*;
use serde::Serialize;

use crate::analytics::{Analytics, AnalyticsError, RiskReport};
use crate::model::{ForwardContract, MarketParams};
use crate::scalar::{tie_slack, Real};

/// Member counts the negotiation may consider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum KappaPolicy {
    /// Any `κ ∈ [1, |B|]`.
    Any,
    /// A single member count, e.g. `κ = S` for equal booking.
    Exactly(usize),
}

impl KappaPolicy {
    fn allows(&self, kappa: usize) -> bool {
        match *self {
            KappaPolicy::Any => true,
            KappaPolicy::Exactly(k) => k == kappa,
        }
    }
}

/// One stored candidate, as grid indices (price index from 0, penalty and
/// compensation indices from 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CandidateIndex {
    pub price: u32,
    pub penalty: u32,
    pub compensation: u32,
    pub kappa: u32,
}

/// A candidate expanded to its terms, expected utilities and risks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CandidateTerm<T> {
    pub p: T,
    pub q: T,
    pub r: T,
    pub kappa: usize,
    pub seller_eu: T,
    pub member_eu: T,
    pub srisk: T,
    pub mrisk: T,
    pub vrisk: T,
}

/// Everything the negotiation produced.
#[derive(Debug, Clone)]
pub struct NegotiationTrace<T> {
    pub candidates: Vec<CandidateIndex>,
    /// Number of quotations exchanged.
    pub quotation_count: u64,
    /// Signed contract, or `None` when no candidate was found.
    pub outcome: Option<ForwardContract<T>>,
    pub member_range: Vec<usize>,
    pub policy: KappaPolicy,
}

impl<T: Real> NegotiationTrace<T> {
    pub fn succeeded(&self) -> bool {
        self.outcome.is_some()
    }

    /// Expands every stored candidate.
    pub fn expand<'a>(&'a self, an: &'a Analytics<T>) -> impl Iterator<Item = CandidateTerm<T>> + 'a {
        self.candidates.iter().map(move |c| expand(an, c))
    }
}

/// Grid price of index `i` (starting at 0).
pub fn price_at<T: Real>(params: &MarketParams<T>, i: u32) -> T {
    params.seller_min_price + T::of(i as f64) * params.delta_p
}

pub fn penalty_at<T: Real>(params: &MarketParams<T>, j: u32) -> T {
    T::of(j as f64) * params.delta_q
}

pub fn compensation_at<T: Real>(params: &MarketParams<T>, l: u32) -> T {
    T::of(l as f64) * params.delta_r
}

pub fn expand<T: Real>(an: &Analytics<T>, c: &CandidateIndex) -> CandidateTerm<T> {
    let params = an.params();
    let p = price_at(params, c.price);
    let q = penalty_at(params, c.penalty);
    let r = compensation_at(params, c.compensation);
    let kappa = c.kappa as usize;
    let RiskReport {
        seller_risk,
        member_risk,
        volunteer_risk,
    } = an.risks(p, q, r, kappa);
    CandidateTerm {
        p,
        q,
        r,
        kappa,
        seller_eu: an.seller_utility(p, q, r, kappa),
        member_eu: an.member_utility(p, q, r, kappa),
        srisk: seller_risk,
        mrisk: member_risk,
        vrisk: volunteer_risk,
    }
}

/// Member counts the buyers' agent accepts: volunteer risk within `ξ^V`.
pub fn member_kappa_range<T: Real>(params: &MarketParams<T>) -> Result<Vec<usize>, AnalyticsError> {
    let an = Analytics::new(params)?;
    Ok(member_range(&an))
}

fn member_range<T: Real>(an: &Analytics<T>) -> Vec<usize> {
    let xi = an.params().xi_volunteer;
    (1..=an.params().num_buyers).filter(|&k| an.volunteer_risk(k) <= xi).collect()
}

/// Member counts the seller accepts at `(p, q, r)`: seller risk within `ξ^S`.
pub fn seller_kappa_range<T: Real>(params: &MarketParams<T>, p: T, q: T, r: T) -> Result<Vec<usize>, AnalyticsError> {
    let an = Analytics::new(params)?;
    Ok(seller_range(&an, p, q, r, KappaPolicy::Any))
}

fn seller_range<T: Real>(an: &Analytics<T>, p: T, q: T, r: T, policy: KappaPolicy) -> Vec<usize> {
    let xi = an.params().xi_seller;
    (1..=an.params().num_buyers)
        .filter(|&k| policy.allows(k) && an.seller_risk(p, q, r, k) <= xi)
        .collect()
}

/// Number of price rows strictly below `p_mem_max`.
pub fn price_rows<T: Real>(params: &MarketParams<T>) -> u32 {
    let pmm = params.p_mem_max();
    if !(params.seller_min_price < pmm) || !(params.delta_p > T::zero()) {
        return 0;
    }
    let steps = ((pmm - params.seller_min_price) / params.delta_p).as_f64();
    let mut n = steps.ceil().max(0.0) as u32;
    // Step back over a last row that equals p_mem_max up to rounding.
    while n > 0 && price_at(params, n - 1) >= pmm - tie_slack(pmm) * T::of(1e-3) {
        n -= 1;
    }
    while price_at(params, n) < pmm - tie_slack(pmm) * T::of(1e-3) {
        n += 1;
    }
    n
}

struct RowResult {
    candidates: Vec<CandidateIndex>,
    count: u64,
}

struct Scanner<'a, T> {
    an: &'a Analytics<T>,
    kmem_max: usize,
    members: Vec<bool>,
    policy: KappaPolicy,
}

impl<'a, T: Real> Scanner<'a, T> {
    /// Best member count for the members among those the seller accepts.
    ///
    /// Returns `(seller set empty, chosen κ)`.
    fn quote(&self, p: T, q: T, r: T) -> (bool, Option<usize>) {
        let params = self.an.params();
        let mut seller_empty = true;
        let mut best: Option<(usize, T)> = None;
        for k in 1..=params.num_buyers {
            if !self.policy.allows(k) {
                continue;
            }
            if self.an.seller_risk(p, q, r, k) > params.xi_seller {
                continue;
            }
            seller_empty = false;
            if k > self.kmem_max || !self.members[k] {
                continue;
            }
            let u = self.an.member_utility(p, q, r, k);
            if best.is_none_or(|(_, b)| u > b) {
                best = Some((k, u));
            }
        }
        (seller_empty, best.map(|(k, _)| k))
    }

    fn row(&self, i: u32) -> RowResult {
        let params = self.an.params();
        let p = price_at(params, i);
        let c1 = params.penalty_steps as u32;
        let c2 = params.refund_steps as u32;
        let mut out = RowResult {
            candidates: Vec::new(),
            count: 0,
        };
        let (mut j, mut l) = (1u32, 1u32);
        let q_ok = |j: u32| j <= c1 && penalty_at(params, j) < p;
        let mut mrisk_cache: Option<(u32, bool)> = None;
        'penalty: while q_ok(j) {
            while l <= c2 {
                if !q_ok(j) {
                    break;
                }
                let q = penalty_at(params, j);
                let r = compensation_at(params, l);
                let (seller_empty, chosen) = self.quote(p, q, r);
                let member_ok = match mrisk_cache {
                    Some((jj, ok)) if jj == j => ok,
                    _ => {
                        let ok = self.an.member_risk(p, q) <= params.xi_member;
                        mrisk_cache = Some((j, ok));
                        ok
                    }
                };
                if !member_ok {
                    break 'penalty;
                }
                if let Some(kappa) = chosen {
                    out.candidates.push(CandidateIndex {
                        price: i,
                        penalty: j,
                        compensation: l,
                        kappa: kappa as u32,
                    });
                } else if seller_empty {
                    l = 1;
                    j += 1;
                    out.count += 1;
                } else {
                    out.count += 1;
                    break;
                }
                l += 1;
                out.count += 1;
            }
            l = 1;
            j += 1;
            out.count += 1;
        }
        out.count += 1;
        out
    }
}

/// Runs the negotiation over every member count.
pub fn negotiate<T: Real>(params: &MarketParams<T>) -> Result<NegotiationTrace<T>, AnalyticsError> {
    negotiate_with(params, KappaPolicy::Any)
}

/// Runs the negotiation restricted to the member counts allowed by `policy`.
pub fn negotiate_with<T: Real>(params: &MarketParams<T>, policy: KappaPolicy) -> Result<NegotiationTrace<T>, AnalyticsError> {
    let an = Analytics::new(params)?;
    Ok(negotiate_analytics(&an, policy))
}

pub fn negotiate_analytics<T: Real>(an: &Analytics<T>, policy: KappaPolicy) -> NegotiationTrace<T> {
    let params = an.params();
    let member_range = member_range(an);
    let mut members = vec![false; params.num_buyers + 1];
    for &k in &member_range {
        members[k] = true;
    }
    let scanner = Scanner {
        an,
        kmem_max: member_range.last().copied().unwrap_or(0),
        members,
        policy,
    };
    let rows = price_rows(params);
    let results: Vec<RowResult> = (0..rows).into_par_iter().map(|i| scanner.row(i)).collect();

    let mut candidates = Vec::with_capacity(results.iter().map(|r| r.candidates.len()).sum());
    let mut quotation_count = 0u64;
    for r in results {
        quotation_count += r.count;
        candidates.extend(r.candidates);
    }
    let outcome = best_candidate(an, &candidates).map(|c| {
        let t = expand(an, &c);
        ForwardContract {
            price: t.p,
            penalty: t.q,
            compensation: t.r,
            members: t.kappa,
        }
    });
    NegotiationTrace {
        candidates,
        quotation_count,
        outcome,
        member_range,
        policy,
    }
}

/// Candidate with the highest seller expected utility; the first in grid order wins ties.
pub fn best_candidate<T: Real>(an: &Analytics<T>, candidates: &[CandidateIndex]) -> Option<CandidateIndex> {
    let params = an.params();
    let mut best: Option<(CandidateIndex, T)> = None;
    for c in candidates {
        let u = an.seller_utility(
            price_at(params, c.price),
            penalty_at(params, c.penalty),
            compensation_at(params, c.compensation),
            c.kappa as usize,
        );
        if best.is_none_or(|(_, b)| u > b) {
            best = Some((*c, u));
        }
    }
    best.map(|(c, _)| c)
}

/// Re-checks the constraints a signed contract must satisfy.
///
/// Returns the list of violated conditions; empty means the contract is admissible.
pub fn check_contract<T: Real>(an: &Analytics<T>, contract: &ForwardContract<T>) -> Vec<String> {
    let params = an.params();
    let mut bad = Vec::new();
    let (p, q, r, k) = (contract.price, contract.penalty, contract.compensation, contract.members);
    if !(p > q && q > T::zero() && r > T::zero()) {
        bad.push(format!("p > q > 0 and r > 0 violated (p={p:e}, q={q:e}, r={r:e})"));
    }
    if k < 1 || k > params.num_buyers {
        bad.push(format!("member count {k} outside [1, {}]", params.num_buyers));
        return bad;
    }
    let pmm = params.p_mem_max();
    if p < params.seller_min_price - tie_slack(params.seller_min_price) * T::of(1e-3) || p >= pmm {
        bad.push(format!("price {p:e} outside [p_sel_min, p_mem_max)"));
    }
    let risks = an.risks(p, q, r, k);
    if risks.seller_risk > params.xi_seller {
        bad.push(format!("seller risk {:e} above {:e}", risks.seller_risk, params.xi_seller));
    }
    if risks.member_risk > params.xi_member {
        bad.push(format!("member risk {:e} above {:e}", risks.member_risk, params.xi_member));
    }
    if risks.volunteer_risk > params.xi_volunteer {
        bad.push(format!("volunteer risk {:e} above {:e}", risks.volunteer_risk, params.xi_volunteer));
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{reference_config, validate_params};

    fn params() -> MarketParams<f64> {
        validate_params(&reference_config()).unwrap()
    }

    #[test]
    fn price_rows_stay_below_cap() {
        let p = params();
        let n = price_rows(&p);
        assert_eq!(n, 200);
        assert!(price_at(&p, n - 1) < p.p_mem_max());
    }

    #[test]
    fn member_range_extremes() {
        let mut p = params();
        p.xi_volunteer = 1.0;
        assert_eq!(member_kappa_range(&p).unwrap(), (1..=30).collect::<Vec<_>>());
        p.xi_volunteer = 0.0;
        assert_eq!(member_kappa_range(&p).unwrap(), (1..=15).collect::<Vec<_>>());
    }

    #[test]
    fn seller_range_extremes() {
        let mut p = params();
        p.xi_seller = 1.0;
        let pm = p.p_mem_max();
        assert_eq!(seller_kappa_range(&p, 0.5 * pm, 0.1 * pm, 0.1 * pm).unwrap().len(), 30);
        p.xi_seller = 0.33;
        p.xi2 = 1e-12;
        assert_eq!(seller_kappa_range(&p, 0.5 * pm, 0.1 * pm, 0.1 * pm).unwrap().len(), 30);
    }

    #[test]
    fn zero_thresholds_fail() {
        let mut p = params();
        p.xi_seller = 0.0;
        p.xi_member = 0.0;
        p.xi_volunteer = 0.0;
        let t = negotiate(&p).unwrap();
        assert!(!t.succeeded());
        assert!(t.candidates.is_empty());
    }
}
