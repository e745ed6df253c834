use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use overbook::analytics::Analytics;
use overbook::futures::{negotiate_analytics, KappaPolicy};
use overbook::io::{self, ContractReport, RiskRow, SweepRow};
use overbook::model::{load_config, reference_config, validate_params, RawConfig};
use overbook::offload::evaluate_optimal;
use overbook::oracle::{self, Effort, Tolerances};
use overbook::simulator::{run_campaign, Mode, SimError};
use overbook::{ConfigError, Params};

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NEGOTIATION: u8 = 3;
const EXIT_VALIDATION: u8 = 4;

#[derive(Parser)]
#[command(
    name = "overbook",
    version,
    about = "Overbooking-enabled futures and spot trading of edge computing resources"
)]
struct Cli {
    /// Worker threads for parallel scans (defaults to all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat TOML config; the built-in reference config when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Negotiate the forward contract and write it with the candidate trace.
    Negotiate {
        #[command(flatten)]
        common: Common,
        /// Force the member count (e.g. S for equal booking).
        #[arg(long)]
        kappa: Option<usize>,
        /// Skip the candidate trace CSV.
        #[arg(long)]
        no_trace: bool,
    },
    /// Run a multi-round campaign.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "overbook-uniform")]
        mode: Mode,
        #[arg(long, default_value_t = 100)]
        rounds: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Tabulate the offloading decision over prices and channel qualities.
    LambdaSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 200)]
        prices: usize,
        #[arg(long, default_value_t = 9)]
        gammas: usize,
    },
    /// Tabulate the three risks over a (p, q, r, κ) grid.
    RiskTable {
        #[command(flatten)]
        common: Common,
        /// Grid points per price axis.
        #[arg(long, default_value_t = 8)]
        points: usize,
    },
    /// Run every oracle suite against the config.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// A failure with its exit status.
struct Failure(u8, String);

impl From<io::IoError> for Failure {
    fn from(e: io::IoError) -> Self {
        Failure(EXIT_IO, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure(EXIT_IO, e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match &e {
            ConfigError::Io { .. } => Failure(EXIT_IO, e.to_string()),
            ConfigError::Invalid(v) => {
                let lines: Vec<String> = v.iter().map(|x| format!("  {x}")).collect();
                Failure(EXIT_CONFIG, format!("invalid configuration:\n{}", lines.join("\n")))
            }
            ConfigError::Parse { .. } => Failure(EXIT_CONFIG, e.to_string()),
        }
    }
}

fn raw_config(path: Option<&Path>) -> Result<RawConfig, Failure> {
    match path {
        Some(p) => Ok(load_config(p)?),
        None => Ok(reference_config()),
    }
}

fn params(path: Option<&Path>) -> Result<(RawConfig, Params), Failure> {
    let raw = raw_config(path)?;
    let p = validate_params(&raw)?;
    Ok((raw, p))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure(EXIT_IO, format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| Failure(EXIT_IO, format!("cannot write {}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn analytics(p: &Params) -> Result<Analytics<f64>, Failure> {
    Analytics::new(p).map_err(|e| Failure(EXIT_CONFIG, e.to_string()))
}

fn negotiate(common: &Common, kappa: Option<usize>, no_trace: bool) -> Result<(), Failure> {
    let (_, p) = params(common.config.as_deref())?;
    let an = analytics(&p)?;
    let policy = kappa.map_or(KappaPolicy::Any, KappaPolicy::Exactly);
    let trace = negotiate_analytics(&an, policy);
    if !no_trace {
        let mut w = create(&common.out, "cterm.csv")?;
        io::write_trace(&mut w, &an, &trace)?;
        w.flush()?;
    }
    let Some(contract) = trace.outcome else {
        return Err(Failure(
            EXIT_NEGOTIATION,
            format!(
                "negotiation failed: no contract terms satisfy all constraints ({} quotations, member range {:?})",
                trace.quotation_count, trace.member_range
            ),
        ));
    };
    let report = ContractReport::new(&an, &trace, contract);
    let mut w = create(&common.out, "contract.json")?;
    w.write_all(io::document(&report)?.as_bytes())?;
    w.flush()?;
    println!("kappa*            {}", report.kappa);
    println!("p                 {}", io::fmt_real(contract.price));
    println!("q                 {}", io::fmt_real(contract.penalty));
    println!("r                 {}", io::fmt_real(contract.compensation));
    println!("overbooking rate  {}", io::fmt_real(report.overbooking_rate));
    println!("seller EU         {}", io::fmt_real(report.seller_eu));
    println!("member EU         {}", io::fmt_real(report.member_eu));
    println!(
        "SRisk MRisk VRisk {} {} {}",
        io::fmt_real(report.seller_risk),
        io::fmt_real(report.member_risk),
        io::fmt_real(report.volunteer_risk)
    );
    println!("quotations        {}", report.quotations);
    println!("candidates        {}", report.candidates);
    Ok(())
}

fn simulate(common: &Common, mode: Mode, rounds: u64, seed: u64) -> Result<(), Failure> {
    let (_, p) = params(common.config.as_deref())?;
    let summary = run_campaign(&p, mode, rounds, seed).map_err(|e| match e {
        SimError::NegotiationFailed { .. } => Failure(EXIT_NEGOTIATION, e.to_string()),
        SimError::NoRounds => Failure(EXIT_CONFIG, e.to_string()),
        SimError::Analytics(_) => Failure(EXIT_CONFIG, e.to_string()),
    })?;
    let stem = io::campaign_stem(mode.name(), seed, rounds);
    let mut w = create(&common.out, &format!("{stem}.csv"))?;
    io::write_rounds(&mut w, &summary.records)?;
    w.flush()?;
    let mut w = create(&common.out, &format!("{stem}.json"))?;
    w.write_all(io::summary_document(&summary)?.as_bytes())?;
    w.flush()?;

    let (s, m) = (&summary.sums, &summary.means);
    println!("mode                     {mode}");
    println!("rounds                   {rounds}");
    println!("seller utility (avg)     {}", io::fmt_real(m.seller_utility));
    println!("member utility (avg)     {}", io::fmt_real(m.member_utility));
    println!("non-member utility (avg) {}", io::fmt_real(m.nonmember_utility));
    println!("DMC (sum)                {}", s.dmc);
    println!("DML (sum)                {}", io::fmt_real(s.dml));
    println!("TCT (sum)                {}", io::fmt_real(s.tct));
    println!("TUR (avg)                {}", io::fmt_real(m.tur));
    println!("RUR (avg)                {}", io::fmt_real(m.rur));
    Ok(())
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
    (0..n).map(move |i| lo + step * i as f64)
}

fn lambda_sweep(common: &Common, prices: usize, gammas: usize) -> Result<(), Failure> {
    let (_, p) = params(common.config.as_deref())?;
    let top = 1.5 * p.p_mem_max();
    let mut rows = Vec::with_capacity(prices * gammas);
    for gamma in linspace(p.gamma_low, p.gamma_high, gammas) {
        for g in linspace(0.0, top, prices) {
            let e = evaluate_optimal(&p, g, gamma);
            rows.push(SweepRow {
                g,
                gamma,
                lambda: e.lambda,
                utility: e.utility,
            });
        }
    }
    let mut w = create(&common.out, "lambda_sweep.csv")?;
    io::write_sweep(&mut w, &rows)?;
    w.flush()?;
    println!("{} rows written to {}", rows.len(), common.out.join("lambda_sweep.csv").display());
    Ok(())
}

fn risk_table(common: &Common, points: usize) -> Result<(), Failure> {
    let (_, p) = params(common.config.as_deref())?;
    let an = analytics(&p)?;
    let pmm = p.p_mem_max();
    let mut rows = Vec::new();
    for price in linspace(p.seller_min_price, pmm, points) {
        for j in 1..points {
            let q = price * j as f64 / points as f64;
            for r in linspace(pmm / points as f64, pmm, points) {
                for kappa in 1..=p.num_buyers {
                    let risks = an.risks(price, q, r, kappa);
                    rows.push(RiskRow {
                        p: price,
                        q,
                        r,
                        kappa,
                        srisk: risks.seller_risk,
                        mrisk: risks.member_risk,
                        vrisk: risks.volunteer_risk,
                    });
                }
            }
        }
    }
    let mut w = create(&common.out, "risk_table.csv")?;
    io::write_risks(&mut w, &rows)?;
    w.flush()?;
    println!("{} rows written to {}", rows.len(), common.out.join("risk_table.csv").display());
    Ok(())
}

fn validate(config: Option<&Path>) -> Result<(), Failure> {
    let (raw, p) = params(config)?;
    let tol = Tolerances::from_config(&raw).map_err(|v| Failure::from(ConfigError::Invalid(v)))?;
    let reports = oracle::run_all(&p, &tol, Effort::default());
    let mut failed = Vec::new();
    for r in &reports {
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {:<15} max deviation {:.3e} (tolerance {:.3e}, {} cases){}",
            r.name,
            r.max_deviation,
            r.tolerance,
            r.cases,
            if r.worst_case.is_empty() {
                String::new()
            } else {
                format!(" worst: {}", r.worst_case)
            }
        );
        if !r.passed {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure(EXIT_VALIDATION, format!("failed suites: {}", failed.join(", "))))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Failure(EXIT_CONFIG, format!("cannot start {n} workers: {e}")))?;
    }
    match &cli.command {
        Command::Negotiate { common, kappa, no_trace } => negotiate(common, *kappa, *no_trace),
        Command::Simulate {
            common,
            mode,
            rounds,
            seed,
        } => simulate(common, *mode, *rounds, *seed),
        Command::LambdaSweep { common, prices, gammas } => lambda_sweep(common, *prices, *gammas),
        Command::RiskTable { common, points } => risk_table(common, *points),
        Command::Validate { config } => validate(config.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
