//! CSV and JSON artifacts.
//!
//! Every CSV starts with a `#` line naming its layout and version, followed by
//! a header row. Reals are written with 12 significant digits.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::analytics::Analytics;
use crate::futures::{CandidateTerm, NegotiationTrace};
use crate::model::ForwardContract;
use crate::simulator::{CampaignSummary, TradingMetrics};

pub const SCHEMA_VERSION: u32 = 1;
pub const ROUNDS_LAYOUT: &str = "# overbook-rounds v1";
pub const TRACE_LAYOUT: &str = "# overbook-cterm v1";
pub const SWEEP_LAYOUT: &str = "# overbook-lambda-sweep v1";
pub const RISK_LAYOUT: &str = "# overbook-risk-table v1";

pub const ROUND_COLUMNS: [&str; 18] = [
    "round",
    "members",
    "performers",
    "volunteers",
    "spot_capacity",
    "tasked_nonmembers",
    "traded",
    "seller_futures_utility",
    "seller_spot_utility",
    "seller_utility",
    "member_utility",
    "nonmember_utility",
    "dmc",
    "dml",
    "tct",
    "tur",
    "rur",
    "traded_load",
];

pub const TRACE_COLUMNS: [&str; 9] = ["p", "q", "r", "kappa", "seller_eu", "member_eu", "srisk", "mrisk", "vrisk"];
pub const SWEEP_COLUMNS: [&str; 4] = ["g", "gamma", "lambda", "utility"];
pub const RISK_COLUMNS: [&str; 7] = ["p", "q", "r", "kappa", "srisk", "mrisk", "vrisk"];

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("expected layout line '{expected}', found '{found}'")]
    Layout { expected: String, found: String },
}

/// A real with 12 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.11e}")
}

/// `x` rounded to the value `fmt_real` would print.
pub fn round_real(x: f64) -> f64 {
    if x.is_finite() {
        fmt_real(x).parse().unwrap_or(x)
    } else {
        x
    }
}

/// One parsed row of a rounds CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: u64,
    pub members: usize,
    pub performers: usize,
    pub volunteers: usize,
    pub spot_capacity: usize,
    pub tasked_nonmembers: usize,
    pub traded: usize,
    pub seller_futures_utility: f64,
    pub seller_spot_utility: f64,
    pub seller_utility: f64,
    pub member_utility: f64,
    pub nonmember_utility: f64,
    pub dmc: u64,
    pub dml: f64,
    pub tct: f64,
    pub tur: f64,
    pub rur: f64,
    pub traded_load: f64,
}

impl From<&TradingMetrics<f64>> for RoundRow {
    fn from(m: &TradingMetrics<f64>) -> Self {
        RoundRow {
            round: m.round,
            members: m.members,
            performers: m.performers,
            volunteers: m.volunteers,
            spot_capacity: m.spot_capacity,
            tasked_nonmembers: m.tasked_nonmembers,
            traded: m.traded,
            seller_futures_utility: m.seller_futures_utility,
            seller_spot_utility: m.seller_spot_utility,
            seller_utility: m.seller_utility,
            member_utility: m.member_utility,
            nonmember_utility: m.nonmember_utility,
            dmc: m.dmc,
            dml: m.dml,
            tct: m.tct,
            tur: m.tur,
            rur: m.rur,
            traded_load: m.traded_load,
        }
    }
}

impl RoundRow {
    fn fields(&self) -> Vec<String> {
        vec![
            self.round.to_string(),
            self.members.to_string(),
            self.performers.to_string(),
            self.volunteers.to_string(),
            self.spot_capacity.to_string(),
            self.tasked_nonmembers.to_string(),
            self.traded.to_string(),
            fmt_real(self.seller_futures_utility),
            fmt_real(self.seller_spot_utility),
            fmt_real(self.seller_utility),
            fmt_real(self.member_utility),
            fmt_real(self.nonmember_utility),
            self.dmc.to_string(),
            fmt_real(self.dml),
            fmt_real(self.tct),
            fmt_real(self.tur),
            fmt_real(self.rur),
            fmt_real(self.traded_load),
        ]
    }

    /// The row with every real rounded as it is written.
    pub fn rounded(&self) -> Self {
        RoundRow {
            seller_futures_utility: round_real(self.seller_futures_utility),
            seller_spot_utility: round_real(self.seller_spot_utility),
            seller_utility: round_real(self.seller_utility),
            member_utility: round_real(self.member_utility),
            nonmember_utility: round_real(self.nonmember_utility),
            dml: round_real(self.dml),
            tct: round_real(self.tct),
            tur: round_real(self.tur),
            rur: round_real(self.rur),
            traded_load: round_real(self.traded_load),
            ..self.clone()
        }
    }
}

fn start<W: Write>(mut w: W, layout: &str, columns: &[&str]) -> Result<csv::Writer<W>, IoError> {
    writeln!(w, "{layout}")?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(columns)?;
    Ok(out)
}

pub fn write_rounds<W: Write>(w: W, records: &[TradingMetrics<f64>]) -> Result<(), IoError> {
    write_round_rows(w, records.iter().map(RoundRow::from))
}

pub fn write_round_rows<W: Write>(w: W, rows: impl IntoIterator<Item = RoundRow>) -> Result<(), IoError> {
    let mut out = start(w, ROUNDS_LAYOUT, &ROUND_COLUMNS)?;
    for r in rows {
        out.write_record(r.fields())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a CSV written by one of the writers here, checking its layout line.
fn read_csv<R: Read, D: for<'de> Deserialize<'de>>(r: R, layout: &str) -> Result<Vec<D>, IoError> {
    let mut text = String::new();
    let mut r = r;
    r.read_to_string(&mut text)?;
    let first = text.lines().next().unwrap_or("");
    if first != layout {
        return Err(IoError::Layout {
            expected: layout.to_string(),
            found: first.to_string(),
        });
    }
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let rows = rd.deserialize().collect::<Result<Vec<D>, _>>()?;
    Ok(rows)
}

pub fn read_rounds<R: Read>(r: R) -> Result<Vec<RoundRow>, IoError> {
    read_csv(r, ROUNDS_LAYOUT)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub kappa: usize,
    pub seller_eu: f64,
    pub member_eu: f64,
    pub srisk: f64,
    pub mrisk: f64,
    pub vrisk: f64,
}

fn trace_fields(c: &CandidateTerm<f64>) -> [String; 9] {
    [
        fmt_real(c.p),
        fmt_real(c.q),
        fmt_real(c.r),
        c.kappa.to_string(),
        fmt_real(c.seller_eu),
        fmt_real(c.member_eu),
        fmt_real(c.srisk),
        fmt_real(c.mrisk),
        fmt_real(c.vrisk),
    ]
}

/// Streams every candidate of a negotiation, in discovery order.
pub fn write_trace<W: Write>(w: W, an: &Analytics<f64>, trace: &NegotiationTrace<f64>) -> Result<u64, IoError> {
    let mut out = start(w, TRACE_LAYOUT, &TRACE_COLUMNS)?;
    let mut n = 0;
    for c in trace.expand(an) {
        out.write_record(trace_fields(&c))?;
        n += 1;
    }
    out.flush()?;
    Ok(n)
}

pub fn read_trace<R: Read>(r: R) -> Result<Vec<TraceRow>, IoError> {
    read_csv(r, TRACE_LAYOUT)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub g: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub utility: f64,
}

pub fn write_sweep<W: Write>(w: W, rows: &[SweepRow]) -> Result<(), IoError> {
    let mut out = start(w, SWEEP_LAYOUT, &SWEEP_COLUMNS)?;
    for r in rows {
        out.write_record([fmt_real(r.g), fmt_real(r.gamma), fmt_real(r.lambda), fmt_real(r.utility)])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_sweep<R: Read>(r: R) -> Result<Vec<SweepRow>, IoError> {
    read_csv(r, SWEEP_LAYOUT)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub kappa: usize,
    pub srisk: f64,
    pub mrisk: f64,
    pub vrisk: f64,
}

pub fn write_risks<W: Write>(w: W, rows: &[RiskRow]) -> Result<(), IoError> {
    let mut out = start(w, RISK_LAYOUT, &RISK_COLUMNS)?;
    for r in rows {
        out.write_record([
            fmt_real(r.p),
            fmt_real(r.q),
            fmt_real(r.r),
            r.kappa.to_string(),
            fmt_real(r.srisk),
            fmt_real(r.mrisk),
            fmt_real(r.vrisk),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_risks<R: Read>(r: R) -> Result<Vec<RiskRow>, IoError> {
    read_csv(r, RISK_LAYOUT)
}

/// Rounds every non-integer number in a JSON tree to 12 significant digits.
fn round_json(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64().and_then(|x| serde_json::Number::from_f64(round_real(x))) {
                *n = x;
            }
        }
        Value::Array(xs) => xs.iter_mut().for_each(round_json),
        Value::Object(m) => m.values_mut().for_each(round_json),
        _ => {}
    }
}

/// Pretty JSON with a `schema_version` field first.
pub fn document<S: Serialize>(body: &S) -> Result<String, IoError> {
    let mut v = serde_json::to_value(body)?;
    round_json(&mut v);
    let mut doc = serde_json::Map::new();
    doc.insert("schema_version".into(), SCHEMA_VERSION.into());
    match v {
        Value::Object(m) => doc.extend(m),
        other => {
            doc.insert("data".into(), other);
        }
    }
    Ok(serde_json::to_string_pretty(&Value::Object(doc))? + "\n")
}

pub fn summary_document(summary: &CampaignSummary<f64>) -> Result<String, IoError> {
    document(summary)
}

/// What `negotiate` reports about its outcome.
#[derive(Debug, Clone, Serialize)]
pub struct ContractReport {
    pub contract: ForwardContract<f64>,
    pub kappa: usize,
    pub overbooking_rate: f64,
    pub seller_eu: f64,
    pub member_eu: f64,
    pub seller_risk: f64,
    pub member_risk: f64,
    pub volunteer_risk: f64,
    pub quotations: u64,
    pub candidates: u64,
    pub member_kappa_range: Vec<usize>,
}

impl ContractReport {
    pub fn new(an: &Analytics<f64>, trace: &NegotiationTrace<f64>, contract: ForwardContract<f64>) -> Self {
        let (p, q, r, k) = (contract.price, contract.penalty, contract.compensation, contract.members);
        let risks = an.risks(p, q, r, k);
        ContractReport {
            contract,
            kappa: k,
            overbooking_rate: contract.overbooking_rate(an.params()),
            seller_eu: an.seller_utility(p, q, r, k),
            member_eu: an.member_utility(p, q, r, k),
            seller_risk: risks.seller_risk,
            member_risk: risks.member_risk,
            volunteer_risk: risks.volunteer_risk,
            quotations: trace.quotation_count,
            candidates: trace.candidates.len() as u64,
            member_kappa_range: trace.member_range.clone(),
        }
    }
}

/// File stem for campaign artifacts.
pub fn campaign_stem(mode: &str, seed: u64, rounds: u64) -> String {
    format!("{mode}_{seed}_{rounds}")
}
