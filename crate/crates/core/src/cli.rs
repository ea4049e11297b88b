//! Command-line workflows.
//!
//! Each command returns a [`Report`]: the primary document, diagnostics for
//! stderr, and whether every check passed. Output depends only on the
//! arguments, never on wall-clock time or thread scheduling.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::channel::ChannelModel;
use crate::error::{Error, Result};
use crate::keyrate::{qber_for_rate, rate_improved, threshold, Bound, KeyRateReport};
use crate::matrix::{build_matrix, qber_from_matrix, round_sig12, sample_matrix, MAX_FULL_DIM};
use crate::protocol::{run_session, SessionConfig};

/// Default number of sampled cells when the full matrix is too large.
pub const DEFAULT_SAMPLES: u64 = 1500;

/// Agreement required between recomputed and published key rates.
pub const PUBLISHED_RATE_TOL: f64 = 0.002;

/// Measured QBER and the key rate (improved bound) reported for each dimension
/// in the OAM round-robin DPS experiment.
pub const PUBLISHED: [(usize, f64, f64); 9] = [
    (3, 0.016, 0.188),
    (4, 0.019, 0.310),
    (5, 0.034, 0.322),
    (6, 0.039, 0.358),
    (7, 0.053, 0.339),
    (8, 0.056, 0.359),
    (16, 0.069, 0.440),
    (32, 0.139, 0.301),
    (64, 0.315, 0.032),
];

#[derive(Debug, Parser)]
#[command(name = "rrdps", version, about = "Round-robin DPS QKD over OAM modes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a Monte Carlo key exchange and summarize the sifted key.
    Simulate(SimulateArgs),
    /// Compute a probability-of-detection matrix (full, or sampled for large L).
    Matrix(MatrixArgs),
    /// Key rates and thresholds for (L, e_b) pairs.
    Rates(RatesArgs),
    /// Error thresholds of both bounds for a list of dimensions.
    Thresholds(ThresholdArgs),
    /// Recompute the published key rates and threshold claims.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

fn parse_dim(s: &str) -> std::result::Result<usize, String> {
    let dim: usize = s.parse().map_err(|_| format!("{s:?} is not an integer"))?;
    if dim < 2 {
        return Err(format!("L must be at least 2, got {dim}"));
    }
    Ok(dim)
}

fn parse_probability(s: &str) -> std::result::Result<f64, String> {
    let p: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if !(0.0..=1.0).contains(&p) {
        return Err(format!("{p} is outside [0, 1]"));
    }
    Ok(p)
}

fn parse_channel(s: &str) -> std::result::Result<ChannelModel, String> {
    ChannelModel::from_descriptor(s).map_err(|e| e.to_string())
}

fn parse_rate_pair(s: &str) -> std::result::Result<(usize, f64), String> {
    let (l, e) = s
        .split_once(':')
        .ok_or_else(|| format!("expected L:e_b, got {s:?}"))?;
    let dim = l.trim().parse().map_err(|_| format!("bad L in {s:?}"))?;
    let e_b = e.trim().parse().map_err(|_| format!("bad e_b in {s:?}"))?;
    Ok((dim, e_b))
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long = "L", value_parser = parse_dim)]
    pub dim: usize,
    #[arg(long, default_value_t = 10_000)]
    pub rounds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Channel descriptor, `kind[:key=value,...]`.
    #[arg(long, default_value = "identity", value_parser = parse_channel)]
    pub channel: ChannelModel,
    #[arg(long = "pbg", default_value_t = 0.0, value_parser = parse_probability)]
    pub p_bg: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the per-round transcript here.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct MatrixArgs {
    #[arg(long = "L", value_parser = parse_dim)]
    pub dim: usize,
    #[arg(long, default_value = "identity", value_parser = parse_channel)]
    pub channel: ChannelModel,
    #[arg(long = "pbg", default_value_t = 0.0, value_parser = parse_probability)]
    pub p_bg: f64,
    /// Number of sampled cells; defaults to 1500 when L > 12, full enumeration otherwise.
    #[arg(long)]
    pub samples: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct RatesArgs {
    /// `L:e_b`, repeatable. Defaults to the published measurements.
    #[arg(long = "pair", value_parser = parse_rate_pair)]
    pub pairs: Vec<(usize, f64)>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ThresholdArgs {
    /// Dimension, repeatable. Defaults to 3..=8, 16, 32, 64.
    #[arg(long = "L", value_parser = parse_dim)]
    pub dims: Vec<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReproduceArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Command {
    pub fn out_path(&self) -> Option<&PathBuf> {
        match self {
            Command::Simulate(a) => a.out.as_ref(),
            Command::Matrix(a) => a.out.as_ref(),
            Command::Rates(a) => a.out.as_ref(),
            Command::Thresholds(a) => a.out.as_ref(),
            Command::Reproduce(a) => a.out.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub body: String,
    pub diagnostics: Vec<String>,
    /// Extra files to write, e.g. the simulation transcript.
    pub side_files: Vec<(PathBuf, String)>,
    pub ok: bool,
}

fn num(x: f64) -> String {
    round_sig12(x).to_string()
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn run(command: &Command) -> Result<Report> {
    match command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Matrix(a) => cmd_matrix(a),
        Command::Rates(a) => cmd_rates(a),
        Command::Thresholds(a) => cmd_thresholds(a),
        Command::Reproduce(_) => cmd_reproduce(),
    }
}

#[derive(Debug, Serialize)]
struct SessionSummary {
    #[serde(rename = "L")]
    dim: usize,
    rounds: u64,
    seed: u64,
    channel: String,
    p_bg: f64,
    clicks: usize,
    sifted: usize,
    errors: usize,
    qber: Option<f64>,
    r_original: Option<f64>,
    r_improved: Option<f64>,
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<Report> {
    let session = run_session(&SessionConfig {
        dim: a.dim,
        rounds: a.rounds,
        channel: a.channel.clone(),
        p_bg: a.p_bg,
        seed: a.seed,
    })?;
    let qber = session.key.qber();
    let mut diagnostics = Vec::new();
    let rate = |bound: Bound| -> Option<f64> {
        let e = qber.filter(|&e| e <= 0.5)?;
        bound.rate(a.dim, e).ok()
    };
    let summary = SessionSummary {
        dim: a.dim,
        rounds: a.rounds,
        seed: a.seed,
        channel: a.channel.to_string(),
        p_bg: round_sig12(a.p_bg),
        clicks: session.clicks(),
        sifted: session.sifted(),
        errors: session.key.errors(),
        qber: qber.map(round_sig12),
        r_original: rate(Bound::Original).map(round_sig12),
        r_improved: rate(Bound::Improved).map(round_sig12),
    };
    if qber.is_none() {
        diagnostics.push("warning: no rounds survived sifting; QBER is undefined".to_string());
    } else if summary.r_improved.is_none() {
        diagnostics.push("warning: QBER above 0.5; key rates are undefined".to_string());
    }
    let body = match a.format {
        Format::Json => serde_json::to_string_pretty(&summary)? + "\n",
        Format::Csv => {
            let mut s = String::from(
                "L,rounds,seed,channel,p_bg,clicks,sifted,errors,qber,R_original,R_improved\n",
            );
            let _ = writeln!(
                s,
                "{},{},{},\"{}\",{},{},{},{},{},{},{}",
                summary.dim,
                summary.rounds,
                summary.seed,
                summary.channel,
                num(summary.p_bg),
                summary.clicks,
                summary.sifted,
                summary.errors,
                opt_num(summary.qber),
                opt_num(summary.r_original),
                opt_num(summary.r_improved)
            );
            s
        }
    };
    let side_files = a
        .transcript
        .iter()
        .map(|p| (p.clone(), session.transcript()))
        .collect();
    Ok(Report {
        body,
        diagnostics,
        side_files,
        ok: true,
    })
}

pub fn cmd_matrix(a: &MatrixArgs) -> Result<Report> {
    let samples = a
        .samples
        .or((a.dim > MAX_FULL_DIM).then_some(DEFAULT_SAMPLES));
    let m = match samples {
        Some(n) => sample_matrix(a.dim, n, &a.channel, a.p_bg, a.seed)?,
        None => build_matrix(a.dim, &a.channel, a.p_bg)?,
    };
    let diagnostics = match qber_from_matrix(&m) {
        Ok(q) => vec![format!("qber = {}", num(q))],
        Err(e) => vec![format!("warning: {e}")],
    };
    let body = match a.format {
        Format::Json => m.to_json_string(),
        Format::Csv => m.to_csv_string()?,
    };
    Ok(Report {
        body,
        diagnostics,
        side_files: Vec::new(),
        ok: true,
    })
}

pub fn cmd_rates(a: &RatesArgs) -> Result<Report> {
    let pairs: Vec<(usize, f64)> = if a.pairs.is_empty() {
        PUBLISHED.iter().map(|&(l, e, _)| (l, e)).collect()
    } else {
        a.pairs.clone()
    };
    let mut body =
        String::from("L,e_b,R_original_raw,R_improved,threshold_original,threshold_improved\n");
    let mut diagnostics = Vec::new();
    let mut ok = true;
    for (dim, e_b) in pairs {
        match KeyRateReport::compute(dim, e_b) {
            Ok(r) => {
                let _ = writeln!(
                    body,
                    "{},{},{},{},{},{}",
                    dim,
                    num(e_b),
                    num(r.r_original_raw),
                    num(r.r_improved_raw),
                    num(r.threshold_original),
                    num(r.threshold_improved)
                );
            }
            Err(e) => {
                ok = false;
                diagnostics.push(format!("error: L={dim} e_b={e_b}: {e}"));
            }
        }
    }
    Ok(Report {
        body,
        diagnostics,
        side_files: Vec::new(),
        ok,
    })
}

pub fn cmd_thresholds(a: &ThresholdArgs) -> Result<Report> {
    let dims: Vec<usize> = if a.dims.is_empty() {
        (3..=8).chain([16, 32, 64]).collect()
    } else {
        a.dims.clone()
    };
    let mut body = String::from("L,threshold_original,threshold_improved\n");
    for dim in dims {
        let _ = writeln!(
            body,
            "{},{},{}",
            dim,
            num(threshold(dim, Bound::Original)?),
            num(threshold(dim, Bound::Improved)?)
        );
    }
    Ok(Report {
        body,
        diagnostics: Vec::new(),
        side_files: Vec::new(),
        ok: true,
    })
}

/// One published key-rate comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct RateCheck {
    pub dim: usize,
    pub e_b: f64,
    pub published: f64,
    pub recomputed: f64,
    /// QBER that would reproduce the published rate exactly.
    pub implied_e_b: Option<f64>,
}

impl RateCheck {
    pub fn delta(&self) -> f64 {
        self.recomputed - self.published
    }

    pub fn passes(&self) -> bool {
        self.delta().abs() <= PUBLISHED_RATE_TOL
    }
}

/// One threshold comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdCheck {
    pub dim: usize,
    pub e_b: f64,
    pub threshold_original: f64,
    pub threshold_improved: f64,
    /// Whether the measured QBER is expected to exceed the original threshold,
    /// where a claim exists (L = 3..8).
    pub expect_exceeds_original: Option<bool>,
}

impl ThresholdCheck {
    pub fn exceeds_original(&self) -> bool {
        self.e_b > self.threshold_original
    }

    pub fn below_improved(&self) -> bool {
        self.e_b < self.threshold_improved
    }

    pub fn passes(&self) -> bool {
        self.below_improved()
            && self
                .expect_exceeds_original
                .is_none_or(|want| want == self.exceeds_original())
    }
}

pub fn published_rate_checks() -> Result<Vec<RateCheck>> {
    PUBLISHED
        .iter()
        .map(|&(dim, e_b, published)| {
            Ok(RateCheck {
                dim,
                e_b,
                published,
                recomputed: rate_improved(dim, e_b)?,
                implied_e_b: qber_for_rate(dim, Bound::Improved, published).ok(),
            })
        })
        .collect()
}

pub fn published_threshold_checks() -> Result<Vec<ThresholdCheck>> {
    PUBLISHED
        .iter()
        .map(|&(dim, e_b, _)| {
            Ok(ThresholdCheck {
                dim,
                e_b,
                threshold_original: threshold(dim, Bound::Original)?,
                threshold_improved: threshold(dim, Bound::Improved)?,
                expect_exceeds_original: (dim <= 8).then_some(dim <= 5),
            })
        })
        .collect()
}

pub fn cmd_reproduce() -> Result<Report> {
    let rates = published_rate_checks()?;
    let thresholds = published_threshold_checks()?;
    let status = |ok: bool| if ok { "PASS" } else { "FAIL" };
    let yn = |b: bool| if b { "yes" } else { "no" };

    let mut body = String::new();
    let _ = writeln!(body, "# key rates, improved bound, tolerance {PUBLISHED_RATE_TOL}");
    body.push_str("L,e_b,R_published,R_recomputed,delta,e_b_implied,status\n");
    for c in &rates {
        let _ = writeln!(
            body,
            "{},{},{},{:.6},{:+.6},{},{}",
            c.dim,
            num(c.e_b),
            num(c.published),
            c.recomputed,
            c.delta(),
            c.implied_e_b.map(|e| format!("{e:.6}")).unwrap_or_default(),
            status(c.passes())
        );
    }
    body.push('\n');
    body.push_str("# error thresholds\n");
    body.push_str(
        "L,e_b,threshold_original,threshold_improved,exceeds_original,expected_exceeds_original,below_improved,status\n",
    );
    for c in &thresholds {
        let _ = writeln!(
            body,
            "{},{},{:.9},{:.9},{},{},{},{}",
            c.dim,
            num(c.e_b),
            c.threshold_original,
            c.threshold_improved,
            yn(c.exceeds_original()),
            c.expect_exceeds_original.map(yn).unwrap_or("-"),
            yn(c.below_improved()),
            status(c.passes())
        );
    }
    let failed_rates = rates.iter().filter(|c| !c.passes()).count();
    let failed_thresholds = thresholds.iter().filter(|c| !c.passes()).count();
    let ok = failed_rates == 0 && failed_thresholds == 0;
    body.push('\n');
    let _ = writeln!(
        body,
        "# overall: {} ({} of {} rate checks failed, {} of {} threshold checks failed)",
        status(ok),
        failed_rates,
        rates.len(),
        failed_thresholds,
        thresholds.len()
    );
    let diagnostics = rates
        .iter()
        .filter(|c| !c.passes())
        .map(|c| {
            format!(
                "L={}: recomputed {:.6} at e_b={} vs published {}; the published value needs e_b={}",
                c.dim,
                c.recomputed,
                c.e_b,
                c.published,
                c.implied_e_b.map(|e| format!("{e:.5}")).unwrap_or_else(|| "none".into()),
            )
        })
        .collect();
    Ok(Report {
        body,
        diagnostics,
        side_files: Vec::new(),
        ok,
    })
}

/// Parses `args`, runs the command and writes its outputs. Returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli.command).and_then(|report| emit(&cli.command, report)) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn emit(command: &Command, report: Report) -> Result<bool> {
    match command.out_path() {
        Some(p) => std::fs::write(p, &report.body)?,
        None => print!("{}", report.body),
    }
    for (path, text) in &report.side_files {
        std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    }
    for d in &report.diagnostics {
        eprintln!("{d}");
    }
    Ok(report.ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Command {
        Cli::try_parse_from(std::iter::once("rrdps").chain(args.iter().copied()))
            .unwrap()
            .command
    }

    #[test]
    fn rejects_bad_arguments() {
        for args in [
            &["simulate", "--L", "1"][..],
            &["simulate", "--L", "4", "--channel", "warp:speed=9"],
            &["simulate", "--L", "4", "--pbg", "1.5"],
            &["rates", "--pair", "16"],
        ] {
            let err = Cli::try_parse_from(std::iter::once("rrdps").chain(args.iter().copied()))
                .unwrap_err();
            assert_eq!(err.exit_code(), 2, "{args:?}");
        }
        let err = Cli::try_parse_from(["rrdps", "simulate", "--L", "4", "--channel", "warp:speed=9"])
            .unwrap_err()
            .to_string();
        assert!(err.contains("warp"), "{err}");
    }

    #[test]
    fn ideal_simulation_summary() {
        let report = run(&parse(&[
            "simulate", "--L", "4", "--rounds", "10000", "--channel", "identity", "--seed", "7",
        ]))
        .unwrap();
        let row: Vec<&str> = report.body.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row[8], "0");
        let want = num(rate_improved(4, 0.0).unwrap());
        assert_eq!(row[10], want);
        assert!(report.ok);
    }

    #[test]
    fn rates_rows() {
        let report = run(&parse(&["rates", "--pair", "16:0.069", "--pair", "64:0.315", "--pair", "3:0"]))
            .unwrap();
        let rows: Vec<Vec<f64>> = report
            .body
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        assert!((rows[0][3] - 0.440).abs() <= 0.002);
        assert!((rows[1][3] - 0.032).abs() <= 0.002);
        assert_eq!(rows[2][2], 0.0);

        let report = run(&parse(&["rates", "--pair", "4:0.7", "--pair", "1:0.1"])).unwrap();
        assert!(!report.ok);
        assert_eq!(report.diagnostics.len(), 2);
    }

    #[test]
    fn reproduce_report_contents() {
        let report = cmd_reproduce().unwrap();
        assert!(report.body.contains("3,0.016,0.188,0.187408"));
        let l32 = report.body.lines().find(|l| l.starts_with("32,0.139,0.301")).unwrap();
        assert!(l32.ends_with("PASS"));
        let l5 = report
            .body
            .lines()
            .find(|l| l.starts_with("5,0.034,0.0"))
            .unwrap();
        assert!(l5.contains(",yes,yes,yes,PASS"), "{l5}");
    }

    #[test]
    fn default_matrix_sampling_above_full_limit() {
        let report = run(&parse(&["matrix", "--L", "16", "--seed", "3"])).unwrap();
        let v: serde_json::Value = serde_json::from_str(&report.body).unwrap();
        assert_eq!(v["n_samples"], 1500);
        assert_eq!(v["sampled"], true);
    }
}
