//! Domain types, scenario configuration and per-round uncertainty sampling.
//!
//! Prices (`p`, `q`, `r`, `g`) are stored per CPU cycle. The payment for a
//! whole task is always `price × compute_demand`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::distributions::{Bernoulli, Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::analytics;
use crate::scalar::Real;

/// Static scenario constants of one market.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarketParams<T> {
    /// Seller capacity in task slots (`S`).
    pub seller_capacity: usize,
    pub num_buyers: usize,
    /// Per-round task arrival probability of every buyer.
    pub arrival_prob: T,
    /// Lower bound of the uniform channel-quality distribution.
    pub gamma_low: T,
    /// Upper bound of the uniform channel-quality distribution.
    pub gamma_high: T,
    /// Channel bandwidth in Hz.
    pub bandwidth: T,
    /// Task input size in bits.
    pub data_size: T,
    /// CPU cycles required per task.
    pub compute_demand: T,
    pub buyer_cpu: T,
    pub seller_cpu: T,
    /// Local computing power draw (W).
    pub local_power: T,
    /// Transmission power (W).
    pub tx_power: T,
    /// Utility per second saved.
    pub weight_time: T,
    /// Utility per Joule saved.
    pub weight_energy: T,
    pub xi_seller: T,
    pub xi_member: T,
    pub xi_volunteer: T,
    /// Member-risk threshold coefficient (multiplies `u_min`).
    pub xi1: T,
    /// Seller-risk threshold coefficient (fraction of expected utility).
    pub xi2: T,
    pub u_min: T,
    pub seller_min_price: T,
    pub delta_p: T,
    pub delta_q: T,
    pub delta_r: T,
    /// Maximum number of penalty steps scanned by the futures negotiation.
    pub penalty_steps: usize,
    /// Maximum number of compensation steps scanned by the futures negotiation.
    pub refund_steps: usize,
    /// Per-quotation end-to-end delay range (s).
    pub e2e_low: T,
    pub e2e_high: T,
}

impl<T: Real> MarketParams<T> {
    /// Local completion time `d^comp / f^b`.
    pub fn local_time(&self) -> T {
        self.compute_demand / self.buyer_cpu
    }

    /// Local energy `e^loc · d^comp / f^b`.
    pub fn local_energy(&self) -> T {
        self.local_power * self.local_time()
    }

    /// Uplink rate `W · log2(1 + e^tran · γ)` in bits/s.
    pub fn uplink_rate(&self, gamma: T) -> T {
        self.bandwidth * (T::one() + self.tx_power * gamma).log2()
    }

    /// Mean of the end-to-end delay distribution.
    pub fn mean_e2e_delay(&self) -> T {
        (self.e2e_low + self.e2e_high) / T::of(2.0)
    }

    /// Largest per-cycle price a member tolerates (individual rationality at the worst channel).
    pub fn p_mem_max(&self) -> T {
        analytics::p_mem_max(self)
    }

    /// Residual spot capacity once `member_demand` member tasks are served.
    pub fn spot_capacity(&self, member_demand: usize) -> usize {
        self.seller_capacity - member_demand.min(self.seller_capacity)
    }

    /// Converts every scalar field to another precision.
    pub fn cast<U: Real>(&self) -> MarketParams<U> {
        let c = |x: T| U::of(x.as_f64());
        MarketParams {
            seller_capacity: self.seller_capacity,
            num_buyers: self.num_buyers,
            arrival_prob: c(self.arrival_prob),
            gamma_low: c(self.gamma_low),
            gamma_high: c(self.gamma_high),
            bandwidth: c(self.bandwidth),
            data_size: c(self.data_size),
            compute_demand: c(self.compute_demand),
            buyer_cpu: c(self.buyer_cpu),
            seller_cpu: c(self.seller_cpu),
            local_power: c(self.local_power),
            tx_power: c(self.tx_power),
            weight_time: c(self.weight_time),
            weight_energy: c(self.weight_energy),
            xi_seller: c(self.xi_seller),
            xi_member: c(self.xi_member),
            xi_volunteer: c(self.xi_volunteer),
            xi1: c(self.xi1),
            xi2: c(self.xi2),
            u_min: c(self.u_min),
            seller_min_price: c(self.seller_min_price),
            delta_p: c(self.delta_p),
            delta_q: c(self.delta_q),
            delta_r: c(self.delta_r),
            penalty_steps: self.penalty_steps,
            refund_steps: self.refund_steps,
            e2e_low: c(self.e2e_low),
            e2e_high: c(self.e2e_high),
        }
    }
}

/// Negotiated futures terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ForwardContract<T> {
    /// Unit price per cycle paid by performers.
    pub price: T,
    /// Unit penalty per cycle paid by defaulters.
    pub penalty: T,
    /// Unit compensation per cycle paid to volunteers.
    pub compensation: T,
    pub members: usize,
}

impl<T: Real> ForwardContract<T> {
    /// `(κ − S) / S`.
    pub fn overbooking_rate(&self, params: &MarketParams<T>) -> T {
        let s = T::of_usize(params.seller_capacity);
        (T::of_usize(self.members) - s) / s
    }

    pub fn is_overbooked(&self, params: &MarketParams<T>) -> bool {
        self.members > params.seller_capacity
    }
}

/// One round of sampled uncertainty.
#[derive(Debug, Clone, PartialEq)]
pub struct TradingRealization<T> {
    /// Task arrival indicator per buyer.
    pub alpha: Vec<bool>,
    /// Channel quality per buyer.
    pub gamma: Vec<T>,
    /// End-to-end delay per buyer (s), drawn once per round.
    pub e2e_delay: Vec<T>,
}

impl<T: Real> TradingRealization<T> {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// Number of buyers with a task among `indices`.
    pub fn tasked(&self, indices: std::ops::Range<usize>) -> usize {
        self.alpha[indices].iter().filter(|&&a| a).count()
    }
}

/// Result of one spot session over the non-members of a round.
///
/// All vectors are indexed like the `nonmember_indices` slice the session was run on.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpotOutcome<T> {
    pub buyers: Vec<usize>,
    pub trade_decision: Vec<bool>,
    pub prices: Vec<T>,
    pub offload_rates: Vec<T>,
    pub quote_counts: Vec<u64>,
    pub seller_utility: T,
}

impl<T: Real> SpotOutcome<T> {
    /// Outcome of a session that never started.
    pub fn empty(buyers: &[usize]) -> Self {
        let n = buyers.len();
        Self {
            buyers: buyers.to_vec(),
            trade_decision: vec![false; n],
            prices: vec![T::zero(); n],
            offload_rates: vec![T::zero(); n],
            quote_counts: vec![0; n],
            seller_utility: T::zero(),
        }
    }

    pub fn total_quotes(&self) -> u64 {
        self.quote_counts.iter().sum()
    }

    /// `Λᵀ·X`.
    pub fn traded_load(&self) -> T {
        self.trade_decision
            .iter()
            .zip(&self.offload_rates)
            .filter(|(x, _)| **x)
            .map(|(_, &l)| l)
            .fold(T::zero(), |a, b| a + b)
    }

    pub fn traded(&self) -> usize {
        self.trade_decision.iter().filter(|&&x| x).count()
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Flat key-value scenario description before validation.
pub type RawConfig = BTreeMap<String, f64>;

/// Keys every configuration must define.
pub const REQUIRED_KEYS: &[&str] = &[
    "seller_capacity_S",
    "num_buyers",
    "task_arrival_prob_a",
    "gamma_low_eps1",
    "gamma_high_eps2",
    "bandwidth_W",
    "data_size_dsize",
    "compute_demand_dcomp",
    "buyer_cpu_fb",
    "seller_cpu_fs",
    "local_power_eloc",
    "tx_power_etran",
    "risk_threshold_xiS",
    "risk_threshold_xiM",
    "risk_threshold_xiV",
    "e2e_delay_low",
    "e2e_delay_high",
];

/// Keys with a documented default.
pub const OPTIONAL_KEYS: &[&str] = &[
    "weight_w1",
    "weight_w2",
    "risk_coeff_xi1",
    "risk_coeff_xi2",
    "u_min",
    "seller_min_price",
    "granularity_dp",
    "granularity_dq",
    "granularity_dr",
    "loop_cap_penalty",
    "loop_cap_refund",
];

/// Prefix of keys reserved for the `validate` command's tolerance overrides.
pub const TOLERANCE_PREFIX: &str = "tol_";

pub const DEFAULT_WEIGHT: f64 = 1.0;
pub const DEFAULT_XI1: f64 = 1.0;
pub const DEFAULT_XI2: f64 = 0.99;
pub const DEFAULT_U_MIN: f64 = 1e-6;
/// Default seller reserve price as a fraction of `p_mem_max`.
pub const DEFAULT_SELLER_MIN_FRACTION: f64 = 0.15;
/// Default number of price steps between the reserve price and `p_mem_max`.
pub const DEFAULT_PRICE_STEPS: f64 = 200.0;

/// A single rejected configuration entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub key: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

impl ConfigError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ConfigError::Invalid(v) => v,
            _ => &[],
        }
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Parses a TOML document whose top-level entries are all numbers.
pub fn parse_config_str(text: &str, origin: &str) -> Result<RawConfig, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    let mut raw = RawConfig::new();
    let mut bad = Vec::new();
    for (key, value) in table {
        match value {
            toml::Value::Integer(i) => {
                raw.insert(key, i as f64);
            }
            toml::Value::Float(x) => {
                raw.insert(key, x);
            }
            other => bad.push(Violation {
                key,
                message: format!("expected a number, found {}", other.type_str()),
            }),
        }
    }
    if bad.is_empty() {
        Ok(raw)
    } else {
        Err(ConfigError::Invalid(bad))
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RawConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_str(&text, &path.display().to_string())
}

/// The reference scenario shipped with the repository.
pub fn reference_config() -> RawConfig {
    parse_config_str(REFERENCE_CONFIG, "reference.toml").expect("reference config parses")
}

/// Text of `config/reference.toml`.
pub const REFERENCE_CONFIG: &str = include_str!("../../../config/reference.toml");

struct Checker<'a> {
    raw: &'a RawConfig,
    violations: Vec<Violation>,
}

impl<'a> Checker<'a> {
    fn fail(&mut self, key: &str, message: impl Into<String>) {
        self.violations.push(Violation {
            key: key.to_string(),
            message: message.into(),
        });
    }

    fn required(&mut self, key: &str) -> f64 {
        match self.raw.get(key) {
            Some(&v) if v.is_finite() => v,
            Some(_) => {
                self.fail(key, "value must be finite");
                f64::NAN
            }
            None => {
                self.fail(key, "missing key");
                f64::NAN
            }
        }
    }

    fn optional(&mut self, key: &str) -> Option<f64> {
        match self.raw.get(key) {
            Some(&v) if v.is_finite() => Some(v),
            Some(_) => {
                self.fail(key, "value must be finite");
                None
            }
            None => None,
        }
    }

    fn positive(&mut self, key: &str, v: f64) {
        if !v.is_nan() && v <= 0.0 {
            self.fail(key, format!("must be > 0 (got {v})"));
        }
    }

    fn within(&mut self, key: &str, v: f64, lo: f64, hi: f64) {
        if !v.is_nan() && !(lo..=hi).contains(&v) {
            self.fail(key, format!("must lie in [{lo}, {hi}] (got {v})"));
        }
    }

    fn integer(&mut self, key: &str, v: f64, min: usize) -> usize {
        if v.is_nan() {
            return min;
        }
        if v.fract() != 0.0 || v < min as f64 {
            self.fail(key, format!("must be an integer >= {min} (got {v})"));
            min
        } else {
            v as usize
        }
    }
}

/// Validates a raw key-value configuration and fills documented defaults.
///
/// Every problem found is reported, each naming its key.
pub fn validate_params<T: Real>(raw: &RawConfig) -> Result<MarketParams<T>, ConfigError> {
    let mut ck = Checker {
        raw,
        violations: Vec::new(),
    };
    for key in raw.keys() {
        let known = REQUIRED_KEYS.contains(&key.as_str()) || OPTIONAL_KEYS.contains(&key.as_str()) || key.starts_with(TOLERANCE_PREFIX);
        if !known {
            ck.fail(key, "unknown key");
        }
    }

    let s_raw = ck.required("seller_capacity_S");
    let b_raw = ck.required("num_buyers");
    let s = ck.integer("seller_capacity_S", s_raw, 1);
    let b = ck.integer("num_buyers", b_raw, 1);
    if !s_raw.is_nan() && !b_raw.is_nan() && s >= b {
        ck.fail("seller_capacity_S", format!("S < |B| violated (S={s}, |B|={b})"));
    }

    let a = ck.required("task_arrival_prob_a");
    ck.within("task_arrival_prob_a", a, 0.0, 1.0);

    let eps1 = ck.required("gamma_low_eps1");
    let eps2 = ck.required("gamma_high_eps2");
    ck.positive("gamma_low_eps1", eps1);
    if !eps1.is_nan() && !eps2.is_nan() && eps1 >= eps2 {
        ck.fail("gamma_high_eps2", format!("ε1 < ε2 violated (ε1={eps1}, ε2={eps2})"));
    }

    let pos = |ck: &mut Checker, key: &str| {
        let v = ck.required(key);
        ck.positive(key, v);
        v
    };
    let w = pos(&mut ck, "bandwidth_W");
    let dsize = pos(&mut ck, "data_size_dsize");
    let dcomp = pos(&mut ck, "compute_demand_dcomp");
    let fb = pos(&mut ck, "buyer_cpu_fb");
    let fs = pos(&mut ck, "seller_cpu_fs");
    let eloc = pos(&mut ck, "local_power_eloc");
    let etran = pos(&mut ck, "tx_power_etran");

    let prob = |ck: &mut Checker, key: &str| {
        let v = ck.required(key);
        ck.within(key, v, 0.0, 1.0);
        v
    };
    let xi_s = prob(&mut ck, "risk_threshold_xiS");
    let xi_m = prob(&mut ck, "risk_threshold_xiM");
    let xi_v = prob(&mut ck, "risk_threshold_xiV");

    let e2e_lo = ck.required("e2e_delay_low");
    let e2e_hi = ck.required("e2e_delay_high");
    if !e2e_lo.is_nan() && e2e_lo < 0.0 {
        ck.fail("e2e_delay_low", format!("must be >= 0 (got {e2e_lo})"));
    }
    if !e2e_lo.is_nan() && !e2e_hi.is_nan() && e2e_hi < e2e_lo {
        ck.fail("e2e_delay_high", "e2e_delay_low <= e2e_delay_high violated");
    }

    let opt_pos = |ck: &mut Checker, key: &str, default: f64| {
        let v = ck.optional(key).unwrap_or(default);
        ck.positive(key, v);
        v
    };
    let w1 = opt_pos(&mut ck, "weight_w1", DEFAULT_WEIGHT);
    let w2 = opt_pos(&mut ck, "weight_w2", DEFAULT_WEIGHT);
    let xi1 = opt_pos(&mut ck, "risk_coeff_xi1", DEFAULT_XI1);
    let xi2 = opt_pos(&mut ck, "risk_coeff_xi2", DEFAULT_XI2);
    let u_min = opt_pos(&mut ck, "u_min", DEFAULT_U_MIN);

    if !ck.violations.is_empty() {
        return Err(ConfigError::Invalid(ck.violations));
    }

    let mut params = MarketParams::<T> {
        seller_capacity: s,
        num_buyers: b,
        arrival_prob: T::of(a),
        gamma_low: T::of(eps1),
        gamma_high: T::of(eps2),
        bandwidth: T::of(w),
        data_size: T::of(dsize),
        compute_demand: T::of(dcomp),
        buyer_cpu: T::of(fb),
        seller_cpu: T::of(fs),
        local_power: T::of(eloc),
        tx_power: T::of(etran),
        weight_time: T::of(w1),
        weight_energy: T::of(w2),
        xi_seller: T::of(xi_s),
        xi_member: T::of(xi_m),
        xi_volunteer: T::of(xi_v),
        xi1: T::of(xi1),
        xi2: T::of(xi2),
        u_min: T::of(u_min),
        seller_min_price: T::zero(),
        delta_p: T::zero(),
        delta_q: T::zero(),
        delta_r: T::zero(),
        penalty_steps: 1,
        refund_steps: 1,
        e2e_low: T::of(e2e_lo),
        e2e_high: T::of(e2e_hi),
    };

    // Pricing grid: explicit values win, the rest derive from p_mem_max.
    let pmm = params.p_mem_max().as_f64();
    let needs_pmm = ["seller_min_price", "granularity_dp", "granularity_dq", "granularity_dr"]
        .iter()
        .any(|k| !raw.contains_key(*k))
        || !raw.contains_key("loop_cap_penalty")
        || !raw.contains_key("loop_cap_refund");
    if needs_pmm && !(pmm > 0.0) {
        ck.fail(
            "seller_min_price",
            format!("p_mem_max = {pmm:e} is not positive; seller_min_price, granularities and loop caps must be given explicitly"),
        );
        return Err(ConfigError::Invalid(ck.violations));
    }

    let psm = ck.optional("seller_min_price").unwrap_or(DEFAULT_SELLER_MIN_FRACTION * pmm);
    if psm < 0.0 {
        ck.fail("seller_min_price", format!("must be >= 0 (got {psm})"));
    }
    let dp_default = (pmm - psm) / DEFAULT_PRICE_STEPS;
    let dp = ck.optional("granularity_dp").unwrap_or(dp_default);
    let dq = ck.optional("granularity_dq").unwrap_or(dp);
    let dr = ck.optional("granularity_dr").unwrap_or(dp);
    ck.positive("granularity_dp", dp);
    ck.positive("granularity_dq", dq);
    ck.positive("granularity_dr", dr);
    if !ck.violations.is_empty() {
        return Err(ConfigError::Invalid(ck.violations));
    }

    // Penalty grid stays strictly below p_mem_max, compensation grid reaches it.
    let c1_default = ((pmm / dq) - 1e-9).ceil() - 1.0;
    let c2_default = ((pmm / dr) + 1e-9).floor();
    let c1_raw = ck.optional("loop_cap_penalty").unwrap_or(c1_default.max(1.0));
    let c2_raw = ck.optional("loop_cap_refund").unwrap_or(c2_default.max(1.0));
    let c1 = ck.integer("loop_cap_penalty", c1_raw, 1);
    let c2 = ck.integer("loop_cap_refund", c2_raw, 1);
    if !ck.violations.is_empty() {
        return Err(ConfigError::Invalid(ck.violations));
    }

    params.seller_min_price = T::of(psm);
    params.delta_p = T::of(dp);
    params.delta_q = T::of(dq);
    params.delta_r = T::of(dr);
    params.penalty_steps = c1;
    params.refund_steps = c2;
    Ok(params)
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Random stream of round `round` in a campaign seeded with `seed`.
///
/// Streams are counter-selected, so any subset of rounds can be replayed
/// independently and in any order.
pub fn round_rng(seed: u64, round: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round);
    rng
}

/// Draws task arrivals, channel qualities and end-to-end delays for every buyer.
pub fn sample_realization<T: Real, R: Rng + ?Sized>(params: &MarketParams<T>, rng: &mut R) -> TradingRealization<T> {
    let n = params.num_buyers;
    let a = params.arrival_prob.as_f64().clamp(0.0, 1.0);
    let arrivals = Bernoulli::new(a).expect("probability in [0, 1]");
    let alpha: Vec<bool> = (0..n).map(|_| arrivals.sample(rng)).collect();
    let gamma = uniform_draws(params.gamma_low, params.gamma_high, n, rng);
    let e2e_delay = uniform_draws(params.e2e_low, params.e2e_high, n, rng);
    TradingRealization { alpha, gamma, e2e_delay }
}

fn uniform_draws<T: Real, R: Rng + ?Sized>(lo: T, hi: T, n: usize, rng: &mut R) -> Vec<T> {
    let (lo, hi) = (lo.as_f64(), hi.as_f64());
    if hi <= lo {
        return vec![T::of(lo); n];
    }
    let dist = Uniform::new_inclusive(lo, hi);
    (0..n).map(|_| T::of(dist.sample(rng))).collect()
}
