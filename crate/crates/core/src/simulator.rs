//! Whole trading rounds and multi-round campaigns.
//!
//! Buyers `0..κ` are members, the rest are non-members. A round settles the
//! forward contract (performers, defaulters, volunteers), hands the residual
//! capacity to a spot session, and scores every buyer.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{Analytics, AnalyticsError};
use crate::futures::{negotiate_analytics, KappaPolicy, NegotiationTrace};
use crate::model::{round_rng, sample_realization, ForwardContract, MarketParams, SpotOutcome, TradingRealization};
use crate::offload::{edge_time, nonmember_utility, pp_utility};
use crate::scalar::{CompensatedSum, Real};
use crate::spot::{spot_session, PricingRule};

/// Market configuration of a campaign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "overbook-uniform")]
    OverbookUniform,
    #[serde(rename = "overbook-diff")]
    OverbookDiff,
    #[serde(rename = "equal-uniform")]
    EqualUniform,
    #[serde(rename = "equal-diff")]
    EqualDiff,
    #[serde(rename = "spot-uniform")]
    SpotUniform,
    #[serde(rename = "spot-diff")]
    SpotDiff,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::OverbookUniform,
        Mode::OverbookDiff,
        Mode::EqualUniform,
        Mode::EqualDiff,
        Mode::SpotUniform,
        Mode::SpotDiff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::OverbookUniform => "overbook-uniform",
            Mode::OverbookDiff => "overbook-diff",
            Mode::EqualUniform => "equal-uniform",
            Mode::EqualDiff => "equal-diff",
            Mode::SpotUniform => "spot-uniform",
            Mode::SpotDiff => "spot-diff",
        }
    }

    pub fn pricing(self) -> PricingRule {
        match self {
            Mode::OverbookUniform | Mode::EqualUniform | Mode::SpotUniform => PricingRule::Uniform,
            _ => PricingRule::Differential,
        }
    }

    /// Member counts the futures negotiation may use, or `None` for spot-only trading.
    pub fn kappa_policy(self, capacity: usize) -> Option<KappaPolicy> {
        match self {
            Mode::OverbookUniform | Mode::OverbookDiff => Some(KappaPolicy::Any),
            Mode::EqualUniform | Mode::EqualDiff => Some(KappaPolicy::Exactly(capacity)),
            Mode::SpotUniform | Mode::SpotDiff => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown mode '{0}' (expected one of overbook-uniform, overbook-diff, equal-uniform, equal-diff, spot-uniform, spot-diff)")]
pub struct UnknownMode(pub String);

impl FromStr for Mode {
    type Err = UnknownMode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| UnknownMode(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("futures negotiation failed for mode {mode}: no admissible contract terms")]
    NegotiationFailed { mode: Mode, quotations: u64 },
    #[error("num_rounds must be at least 1")]
    NoRounds,
}

/// Everything measured in one round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradingMetrics<T> {
    pub round: u64,
    pub members: usize,
    /// Members with a task.
    pub performers: usize,
    pub volunteers: usize,
    pub spot_capacity: usize,
    pub tasked_nonmembers: usize,
    pub traded: usize,
    pub seller_futures_utility: T,
    pub seller_spot_utility: T,
    pub seller_utility: T,
    pub member_utility: T,
    pub nonmember_utility: T,
    /// Quotations exchanged in the spot market.
    pub dmc: u64,
    pub dml: T,
    pub tct: T,
    pub tur: T,
    pub rur: T,
    /// `Σ x_n λ_n`, slots sold on the spot market.
    pub traded_load: T,
    #[serde(skip)]
    pub buyer_utility: Vec<T>,
    #[serde(skip)]
    pub buyer_tct: Vec<T>,
    #[serde(skip)]
    pub buyer_dml: Vec<T>,
    #[serde(skip)]
    pub volunteer_ids: Vec<usize>,
    /// Spot session, indexed by position among the non-members `κ..|B|`.
    #[serde(skip)]
    pub spot: SpotOutcome<T>,
}

impl<T: Real> TradingMetrics<T> {
    /// Drops the per-buyer detail, keeping the scalars.
    pub fn without_detail(mut self) -> Self {
        self.buyer_utility = Vec::new();
        self.buyer_tct = Vec::new();
        self.buyer_dml = Vec::new();
        self.volunteer_ids = Vec::new();
        self.spot = SpotOutcome::default();
        self
    }
}

/// Performers displaced when more than `capacity` members have a task.
///
/// The displaced ones are those with the worst channels; equal channels are
/// broken by position. Returned positions are ascending.
pub fn select_volunteers<T: Real>(alphas: &[bool], gammas: &[T], capacity: usize) -> Vec<usize> {
    let mut performers: Vec<usize> = (0..alphas.len()).filter(|&i| alphas[i]).collect();
    if performers.len() <= capacity {
        return Vec::new();
    }
    let excess = performers.len() - capacity;
    performers.sort_by(|&i, &j| {
        gammas[i]
            .partial_cmp(&gammas[j])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut out: Vec<usize> = performers[..excess].to_vec();
    out.sort_unstable();
    out
}

fn sum<T: Real>(xs: impl IntoIterator<Item = T>) -> T {
    xs.into_iter().collect::<CompensatedSum<T>>().value()
}

/// Plays one round.
///
/// `contract` is `None` for spot-only trading.
pub fn run_trading<T: Real>(
    params: &MarketParams<T>,
    contract: Option<&ForwardContract<T>>,
    realization: &TradingRealization<T>,
    rule: PricingRule,
) -> TradingMetrics<T> {
    let n = params.num_buyers;
    let s = params.seller_capacity;
    let d = params.compute_demand;
    let kappa = contract.map_or(0, |c| c.members.min(n));
    let alpha = &realization.alpha;
    let gamma = &realization.gamma;

    let mut utility = vec![T::zero(); n];
    let mut tct = vec![T::zero(); n];
    let mut dml = vec![T::zero(); n];

    // Futures side.
    let volunteer_ids = select_volunteers(&alpha[..kappa], &gamma[..kappa], s);
    let mut is_volunteer = vec![false; kappa];
    for &v in &volunteer_ids {
        is_volunteer[v] = true;
    }
    let performers = alpha[..kappa].iter().filter(|&&a| a).count();
    let volunteers = volunteer_ids.len();
    let mut seller_futures = T::zero();
    if let Some(c) = contract {
        for m in 0..kappa {
            utility[m] = if !alpha[m] {
                -c.penalty * d
            } else if is_volunteer[m] {
                c.compensation * d
            } else {
                pp_utility(params, c.price, gamma[m])
            };
            tct[m] = if is_volunteer[m] {
                params.local_time()
            } else if alpha[m] {
                params.data_size / params.uplink_rate(gamma[m]) + d / params.seller_cpu
            } else {
                T::zero()
            };
        }
        let x1 = T::of_usize(performers);
        seller_futures =
            c.price * d * x1 + c.penalty * d * (T::of_usize(kappa) - x1) - (c.price + c.compensation) * d * T::of_usize(volunteers);
    }

    // Spot side.
    let served = performers.min(s);
    let spot_capacity = s - served;
    let nonmembers: Vec<usize> = (kappa..n).collect();
    let spot = spot_session(rule, params, realization, &nonmembers, spot_capacity);
    for (k, &b) in nonmembers.iter().enumerate() {
        let x = spot.trade_decision[k];
        if x {
            let lambda = spot.offload_rates[k];
            utility[b] = nonmember_utility(params, spot.prices[k], lambda, alpha[b], gamma[b]);
        }
        let count = T::of(spot.quote_counts[k] as f64);
        dml[b] = if alpha[b] { count * realization.e2e_delay[b] } else { T::zero() };
        tct[b] = if x {
            edge_time(params, spot.offload_rates[k], gamma[b])
        } else {
            params.local_time()
        } + dml[b];
    }

    let dml_sum = sum(dml.iter().copied());
    let tct_sum = sum(tct.iter().copied());
    let tur = if tct_sum > T::zero() {
        T::one() - dml_sum / tct_sum
    } else {
        T::one()
    };
    let traded_load = spot.traded_load();
    let spot_seller = spot.seller_utility;
    let traded = spot.traded();
    let dmc = spot.total_quotes();
    let rur = (T::of_usize(served) + traded_load) / T::of_usize(s);
    let member_utility = sum(utility[..kappa].iter().copied());
    let nonmember_utility = sum(utility[kappa..].iter().copied());

    TradingMetrics {
        round: 0,
        members: kappa,
        performers,
        volunteers,
        spot_capacity,
        tasked_nonmembers: alpha[kappa..].iter().filter(|&&a| a).count(),
        traded,
        seller_futures_utility: seller_futures,
        seller_spot_utility: spot_seller,
        seller_utility: seller_futures + spot_seller,
        member_utility,
        nonmember_utility,
        dmc,
        dml: dml_sum,
        tct: tct_sum,
        tur,
        rur,
        traded_load,
        buyer_utility: utility,
        buyer_tct: tct,
        buyer_dml: dml,
        volunteer_ids,
        spot,
    }
}

/// Contract used by a mode, with the negotiation that produced it.
#[derive(Debug, Clone)]
pub struct PreparedMarket<T> {
    pub mode: Mode,
    pub contract: Option<ForwardContract<T>>,
    pub negotiation: Option<NegotiationTrace<T>>,
}

/// Negotiates the forward contract a mode needs (none for spot-only modes).
pub fn prepare_market<T: Real>(params: &MarketParams<T>, mode: Mode) -> Result<PreparedMarket<T>, SimError> {
    let Some(policy) = mode.kappa_policy(params.seller_capacity) else {
        return Ok(PreparedMarket {
            mode,
            contract: None,
            negotiation: None,
        });
    };
    let an = Analytics::new(params)?;
    let trace = negotiate_analytics(&an, policy);
    match trace.outcome {
        Some(c) => Ok(PreparedMarket {
            mode,
            contract: Some(c),
            negotiation: Some(trace),
        }),
        None => Err(SimError::NegotiationFailed {
            mode,
            quotations: trace.quotation_count,
        }),
    }
}

/// Totals over a campaign.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignTotals<T> {
    pub seller_utility: T,
    pub seller_futures_utility: T,
    pub seller_spot_utility: T,
    pub member_utility: T,
    pub nonmember_utility: T,
    pub dmc: u64,
    pub dml: T,
    pub tct: T,
    pub tur: T,
    pub rur: T,
    pub volunteers: u64,
    pub traded: u64,
}

/// Per-round averages over a campaign.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignMeans<T> {
    pub seller_utility: T,
    pub seller_futures_utility: T,
    pub seller_spot_utility: T,
    pub member_utility: T,
    pub nonmember_utility: T,
    pub dmc: T,
    pub dml: T,
    pub tct: T,
    pub tur: T,
    pub rur: T,
    pub volunteers: T,
    pub traded: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignSummary<T> {
    pub mode: Mode,
    pub seed: u64,
    pub rounds: u64,
    pub contract: Option<ForwardContract<T>>,
    pub negotiation_quotations: Option<u64>,
    pub sums: CampaignTotals<T>,
    pub means: CampaignMeans<T>,
    /// Mean of `t^E2E` over all buyers and rounds.
    pub mean_e2e_delay: T,
    #[serde(skip)]
    pub records: Vec<TradingMetrics<T>>,
}

impl<T: Real> CampaignSummary<T> {
    /// Folds per-round records into totals.
    pub fn from_records(
        mode: Mode,
        seed: u64,
        contract: Option<ForwardContract<T>>,
        negotiation_quotations: Option<u64>,
        records: Vec<TradingMetrics<T>>,
        mean_e2e_delay: T,
    ) -> Self {
        let n = records.len().max(1);
        let nt = T::of_usize(n);
        let col = |f: &dyn Fn(&TradingMetrics<T>) -> T| sum(records.iter().map(f));
        let sums = CampaignTotals {
            seller_utility: col(&|r| r.seller_utility),
            seller_futures_utility: col(&|r| r.seller_futures_utility),
            seller_spot_utility: col(&|r| r.seller_spot_utility),
            member_utility: col(&|r| r.member_utility),
            nonmember_utility: col(&|r| r.nonmember_utility),
            dmc: records.iter().map(|r| r.dmc).sum(),
            dml: col(&|r| r.dml),
            tct: col(&|r| r.tct),
            tur: col(&|r| r.tur),
            rur: col(&|r| r.rur),
            volunteers: records.iter().map(|r| r.volunteers as u64).sum(),
            traded: records.iter().map(|r| r.traded as u64).sum(),
        };
        let count = |x: u64| T::of(x as f64) / nt;
        let means = CampaignMeans {
            seller_utility: sums.seller_utility / nt,
            seller_futures_utility: sums.seller_futures_utility / nt,
            seller_spot_utility: sums.seller_spot_utility / nt,
            member_utility: sums.member_utility / nt,
            nonmember_utility: sums.nonmember_utility / nt,
            dmc: count(sums.dmc),
            dml: sums.dml / nt,
            tct: sums.tct / nt,
            tur: sums.tur / nt,
            rur: sums.rur / nt,
            volunteers: count(sums.volunteers),
            traded: count(sums.traded),
        };
        Self {
            mode,
            seed,
            rounds: records.len() as u64,
            contract,
            negotiation_quotations,
            sums,
            means,
            mean_e2e_delay,
            records,
        }
    }

    /// Whether the stored totals equal a fresh fold of the stored records.
    pub fn is_consistent(&self) -> bool {
        let again = Self::from_records(
            self.mode,
            self.seed,
            self.contract,
            self.negotiation_quotations,
            self.records.clone(),
            self.mean_e2e_delay,
        );
        again.sums == self.sums && again.means == self.means
    }
}

/// Plays `rounds` independent rounds of an already prepared market.
///
/// Records keep only the per-round scalars.
/// Round `i` draws from the substream `(seed, i)`, so results do not depend
/// on the execution order or on the number of worker threads.
pub fn run_prepared<T: Real>(
    params: &MarketParams<T>,
    market: &PreparedMarket<T>,
    rounds: u64,
    seed: u64,
) -> Result<CampaignSummary<T>, SimError> {
    if rounds == 0 {
        return Err(SimError::NoRounds);
    }
    let rule = market.mode.pricing();
    let out: Vec<(TradingMetrics<T>, T)> = (0..rounds)
        .into_par_iter()
        .map(|round| {
            let realization = sample_realization(params, &mut round_rng(seed, round));
            let mut m = run_trading(params, market.contract.as_ref(), &realization, rule);
            m.round = round;
            (m.without_detail(), sum(realization.e2e_delay.iter().copied()))
        })
        .collect();
    let e2e_total = sum(out.iter().map(|x| x.1));
    let mean_e2e = e2e_total / (T::of(rounds as f64) * T::of_usize(params.num_buyers));
    let records = out.into_iter().map(|x| x.0).collect();
    Ok(CampaignSummary::from_records(
        market.mode,
        seed,
        market.contract,
        market.negotiation.as_ref().map(|t| t.quotation_count),
        records,
        mean_e2e,
    ))
}

/// Negotiates (if the mode needs it) and plays a campaign.
pub fn run_campaign<T: Real>(params: &MarketParams<T>, mode: Mode, rounds: u64, seed: u64) -> Result<CampaignSummary<T>, SimError> {
    if rounds == 0 {
        return Err(SimError::NoRounds);
    }
    let market = prepare_market(params, mode)?;
    run_prepared(params, &market, rounds, seed)
}
