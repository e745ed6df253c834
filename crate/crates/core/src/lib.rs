//! Overbooking-enabled futures and spot trading of edge computing resources.
//!
//! One edge server sells `S` task slots per round to `|B|` devices. Part of the
//! buyers sign a forward contract negotiated once in advance (possibly for more
//! tasks than the server can hold); the rest buy residual capacity in a per-round
//! spot market. The crate computes the closed-form risks that drive the
//! negotiation, runs both markets, and simulates whole campaigns.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`); the aliases at the
//! crate root fix the scalar to `f64`.

// `!(x > 0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod futures;
pub mod io;
pub mod knapsack;
pub mod model;
pub mod offload;
pub mod oracle;
pub mod scalar;
pub mod simulator;
pub mod spot;

pub use analytics::{AnalyticsError, RiskReport};
pub use model::{ConfigError, RawConfig, Violation};
pub use scalar::Real;
pub use simulator::{Mode, SimError};

pub type Params = model::MarketParams<f64>;
pub type Contract = model::ForwardContract<f64>;
pub type Realization = model::TradingRealization<f64>;
pub type Spot = model::SpotOutcome<f64>;
pub type Risks = analytics::RiskReport<f64>;
pub type Metrics = simulator::TradingMetrics<f64>;
pub type Summary = simulator::CampaignSummary<f64>;
