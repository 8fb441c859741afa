//! Command-line front end for the KFDA two-sample test.
//!
//! `run` is the whole program; `main` only forwards the exit code. Exit codes:
//! 0 accept, 3 reject, 64 usage, 65 data, 70 numeric, 74 output.

pub mod data;
pub mod error;
pub mod table;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use kfda_core::rng::{derive_seed, stream};
use kfda_core::{
    build_bundle, empirical_power_curve, median_heuristic, roc_curve, run_kfda_test, AlternativeModel,
    CalibrationMethod, CalibrationResult, GammaSchedule, Generator, KernelSpec, Points, Scenario, StudyConfig,
    TestConfig, TestStatisticValue, TwoSample,
};

pub use error::CliError;
use table::Cell;

pub const EXIT_ACCEPT: i32 = 0;
pub const EXIT_REJECT: i32 = 3;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Test two samples read from CSV.
    Test,
    /// Power curves under Fourier-contamination alternatives.
    Power,
    /// Monte-Carlo ROC points on a synthetic scenario.
    Roc,
    /// Empirical level of each calibration method under a built-in null.
    Calibrate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Linear,
    Gaussian,
    Spline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Tsv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlternativeArg {
    Fixed,
    Directional,
    Nondirectional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    /// Three-cluster 2-d Gaussian mixture against a shifted copy.
    Speaker,
    /// Uniform against 1 + η c_q on the circle.
    Contamination,
}

#[derive(Debug, Clone, Parser)]
#[command(name = "kfda", version, about = "Regularized kernel Fisher discriminant two-sample test")]
pub struct Args {
    #[arg(long, value_enum)]
    pub command: Command,

    /// CSV with a label column marking samples 1 and 2.
    #[arg(long, conflicts_with_all = ["sample1", "sample2"])]
    pub input: Option<PathBuf>,
    #[arg(long, requires = "sample2")]
    pub sample1: Option<PathBuf>,
    #[arg(long, requires = "sample1")]
    pub sample2: Option<PathBuf>,
    #[arg(long, default_value = "sample")]
    pub label_column: String,

    /// Default: gaussian for test/roc/calibrate, spline for power.
    #[arg(long, value_enum)]
    pub kernel: Option<KernelArg>,
    /// Gaussian bandwidth. Default: median heuristic for test, 1 otherwise.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long, default_value_t = 2)]
    pub spline_order: u32,

    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
    /// `fixed` or `decaying:EXPONENT[:SCALE]`, giving γ = SCALE·n^(−EXPONENT).
    #[arg(long, default_value = "fixed")]
    pub gamma_schedule: String,

    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Default: mixture (calibrate runs every method unless one is given).
    #[arg(long, value_enum)]
    pub calibration: Option<CalibrationArg>,
    /// Only with block-bootstrap. Default ⌈min(n1, n2)^(1/3)⌉.
    #[arg(long)]
    pub block_length: Option<usize>,
    /// Monte-Carlo draws or resamples per test.
    #[arg(long)]
    pub replicates: Option<usize>,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Default: json for test/calibrate, tsv for power/roc.
    #[arg(long, value_enum)]
    pub format: Option<Format>,

    #[arg(long, value_enum, default_value = "directional")]
    pub alternative: AlternativeArg,
    #[arg(long, value_delimiter = ',', default_value = "5")]
    pub q: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub eta: f64,
    #[arg(long, default_value_t = 5.0)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub q_scale: f64,
    #[arg(long, default_value_t = 0.25)]
    pub q_exponent: f64,
    #[arg(long)]
    pub n1: Option<usize>,
    #[arg(long)]
    pub n2: Option<usize>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "1,1e-1,1e-2,1e-3,1e-4,1e-5,1e-6,1e-7,1e-8,1e-9"
    )]
    pub gammas: Vec<f64>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.02,0.05,0.1,0.2,0.3,0.5,0.7,0.9")]
    pub alpha_grid: Vec<f64>,
    #[arg(long, value_enum, default_value = "speaker")]
    pub scenario: ScenarioArg,
    /// Location shift of the speaker scenario's alternative.
    #[arg(long, default_value_t = 0.5)]
    pub shift: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CalibrationArg {
    Mixture,
    Normal,
    Permutation,
    Bootstrap,
    BlockBootstrap,
}

impl From<CalibrationArg> for CalibrationMethod {
    fn from(c: CalibrationArg) -> Self {
        match c {
            CalibrationArg::Mixture => CalibrationMethod::MixtureMc,
            CalibrationArg::Normal => CalibrationMethod::Normal,
            CalibrationArg::Permutation => CalibrationMethod::Permutation,
            CalibrationArg::Bootstrap => CalibrationMethod::Bootstrap,
            CalibrationArg::BlockBootstrap => CalibrationMethod::BlockBootstrap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Reject,
    Accept,
}

/// Result of `--command test`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    #[serde(flatten)]
    pub statistic: TestStatisticValue,
    #[serde(flatten)]
    pub calibration: CalibrationResult,
    pub decision: Decision,
    pub n1: usize,
    pub n2: usize,
    pub kernel: KernelSpec,
    pub gamma: f64,
    pub gamma_schedule: GammaSchedule,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodLevel {
    pub method: CalibrationMethod,
    pub replicates: usize,
    pub rejections: usize,
    pub level: f64,
    pub se: f64,
}

/// Result of `--command calibrate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub alpha: f64,
    pub n1: usize,
    pub n2: usize,
    pub replications: usize,
    pub kernel: KernelSpec,
    pub null_generator: Generator,
    pub gamma: f64,
    pub gamma_schedule: GammaSchedule,
    pub seed: u64,
    pub methods: Vec<MethodLevel>,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PowerRow {
    gamma: f64,
    q: usize,
    n: usize,
    theoretical_power: Option<f64>,
    empirical_power_kfda: f64,
    empirical_power_mmd: Option<f64>,
    se: f64,
}

pub fn parse_schedule(s: &str) -> Result<GammaSchedule, CliError> {
    let bad = || CliError::Usage(format!("--gamma-schedule: expected 'fixed' or 'decaying:EXPONENT[:SCALE]', got '{s}'"));
    let schedule = match s.split(':').collect::<Vec<_>>().as_slice() {
        ["fixed"] => GammaSchedule::Fixed,
        ["decaying", a] => GammaSchedule::Decaying { exponent: a.parse().map_err(|_| bad())?, scale: 1.0 },
        ["decaying", a, c] => {
            GammaSchedule::Decaying { exponent: a.parse().map_err(|_| bad())?, scale: c.parse().map_err(|_| bad())? }
        }
        _ => return Err(bad()),
    };
    schedule.validate().map_err(CliError::from_config)?;
    Ok(schedule)
}

/// Output of one command: the rendered text and the exit code on success.
struct Rendered {
    text: String,
    code: i32,
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn kernel_for(args: &Args, default: KernelArg, pooled: Option<&Points>) -> Result<KernelSpec, CliError> {
    let spec = match args.kernel.unwrap_or(default) {
        KernelArg::Linear => KernelSpec::Linear,
        KernelArg::Spline => KernelSpec::PeriodicSpline { order: args.spline_order },
        KernelArg::Gaussian => {
            let bandwidth = match (args.bandwidth, pooled) {
                (Some(b), _) => b,
                (None, Some(points)) => median_heuristic(points).map_err(CliError::from_compute)?,
                (None, None) => 1.0,
            };
            if !(bandwidth.is_finite() && bandwidth > 0.0) {
                return Err(CliError::Numeric(format!(
                    "median heuristic bandwidth is {bandwidth}; pass --bandwidth"
                )));
            }
            KernelSpec::Gaussian { bandwidth }
        }
    };
    spec.validate().map_err(CliError::from_config)?;
    Ok(spec)
}

fn method_of(args: &Args) -> CalibrationMethod {
    args.calibration.map_or(CalibrationMethod::MixtureMc, Into::into)
}

fn check_block_length(args: &Args, methods: &[CalibrationMethod]) -> Result<(), CliError> {
    if let Some(l) = args.block_length {
        if !methods.contains(&CalibrationMethod::BlockBootstrap) {
            return Err(CliError::Usage("--block-length applies only to block-bootstrap calibration".into()));
        }
        if l == 0 {
            return Err(CliError::Usage("--block-length must be >= 1".into()));
        }
    }
    Ok(())
}

fn gamma_for(args: &Args, schedule: &GammaSchedule, n: usize) -> Result<f64, CliError> {
    let gamma = schedule.gamma_at(n).unwrap_or(args.gamma);
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(CliError::Usage(format!("gamma must be > 0, got {gamma}")));
    }
    Ok(gamma)
}

fn warn_linear(spec: &KernelSpec, stderr: &mut dyn Write) {
    if !spec.is_bounded() {
        let _ = writeln!(stderr, "kfda: warning: the linear kernel is unbounded; calibrated p-values may be unreliable");
    }
}

fn cmd_test(args: &Args, stderr: &mut dyn Write) -> Result<Rendered, CliError> {
    let (s1, s2) = match (&args.input, &args.sample1, &args.sample2) {
        (Some(path), None, None) => data::load_labeled(path, &args.label_column)?,
        (None, Some(a), Some(b)) => (data::load_points(a)?, data::load_points(b)?),
        _ => return Err(CliError::Usage("test needs --input or both --sample1 and --sample2".into())),
    };
    if s1.dim() != s2.dim() {
        return Err(CliError::Data(format!("samples have {} and {} columns", s1.dim(), s2.dim())));
    }
    let sample = TwoSample::new(&s1, &s2).map_err(CliError::from_compute)?;
    let spec = kernel_for(args, KernelArg::Gaussian, Some(sample.points()))?;
    warn_linear(&spec, stderr);
    let schedule = parse_schedule(&args.gamma_schedule)?;
    let gamma = gamma_for(args, &schedule, sample.n())?;
    let method = method_of(args);
    check_block_length(args, &[method])?;
    let mut cfg = TestConfig::new(gamma, args.alpha, method, args.seed);
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    cfg.block_length = args.block_length;
    cfg.validate().map_err(CliError::from_config)?;

    let bundle = build_bundle(&sample, &spec).map_err(CliError::from_compute)?;
    let result = run_kfda_test(&bundle, &cfg).map_err(CliError::from_compute)?;
    let decision = if result.rejects() { Decision::Reject } else { Decision::Accept };
    let outcome = TestOutcome {
        statistic: result.statistic,
        calibration: result.calibration,
        decision,
        n1: sample.n1(),
        n2: sample.n2(),
        kernel: spec,
        gamma,
        gamma_schedule: schedule,
        version: VERSION.to_string(),
    };
    let text = match args.format.unwrap_or(Format::Json) {
        Format::Json => json(&outcome),
        Format::Tsv => test_tsv(&outcome),
    };
    let code = if decision == Decision::Reject { EXIT_REJECT } else { EXIT_ACCEPT };
    Ok(Rendered { text, code })
}

fn test_tsv(o: &TestOutcome) -> String {
    let s = &o.statistic;
    let c = &o.calibration;
    let decision = match o.decision {
        Decision::Reject => "reject",
        Decision::Accept => "accept",
    };
    let cols: Vec<(&str, Cell)> = vec![
        ("raw_quadratic", s.raw_quadratic.into()),
        ("normalized", s.normalized.into()),
        ("d1", s.d1.into()),
        ("d2", s.d2.into()),
        ("method", c.method.name().into()),
        ("alpha", c.alpha.into()),
        ("critical_value", c.critical_value.into()),
        ("p_value", c.p_value.into()),
        ("mc_replicates", c.mc_replicates.into()),
        ("seed", c.seed.into()),
        ("decision", decision.into()),
        ("n1", o.n1.into()),
        ("n2", o.n2.into()),
        ("kernel", o.kernel.label().into()),
        ("gamma", o.gamma.into()),
        ("version", o.version.as_str().into()),
    ];
    let (header, row): (Vec<&str>, Vec<Cell>) = cols.into_iter().unzip();
    table::render(&header, &[row])
}

fn study_config(args: &Args, n1: usize, n2: usize, replications: usize) -> Result<StudyConfig, CliError> {
    let method = method_of(args);
    check_block_length(args, &[method])?;
    let mut cfg = StudyConfig::new(n1, n2, args.alpha, replications, method, args.seed);
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    cfg.block_length = args.block_length;
    // validates alpha and the replicate count for the method
    TestConfig { gamma: 1.0, alpha: cfg.alpha, method, replicates: cfg.replicates, block_length: None, seed: 0 }
        .validate()
        .map_err(CliError::from_config)?;
    if replications < 100 {
        return Err(CliError::Usage(format!("--replications must be >= 100, got {replications}")));
    }
    if n1 < 2 || n2 < 2 {
        return Err(CliError::Usage("--n1 and --n2 must be >= 2".into()));
    }
    Ok(cfg)
}

fn check_gammas(gammas: &[f64]) -> Result<(), CliError> {
    if gammas.is_empty() || gammas.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
        return Err(CliError::Usage("--gammas must be a non-empty list of positive numbers".into()));
    }
    Ok(())
}

fn cmd_power(args: &Args, stderr: &mut dyn Write) -> Result<Rendered, CliError> {
    let (n1, n2) = (args.n1.unwrap_or(100), args.n2.unwrap_or(100));
    let mut cfg = study_config(args, n1, n2, args.replications.unwrap_or(200))?;
    cfg.with_mmd = true;
    let spec = kernel_for(args, KernelArg::Spline, None)?;
    warn_linear(&spec, stderr);
    check_gammas(&args.gammas)?;
    let models: Vec<AlternativeModel> = match args.alternative {
        AlternativeArg::Fixed => args.q.iter().map(|&q| AlternativeModel::Fixed { q, eta: args.eta }).collect(),
        AlternativeArg::Directional => {
            args.q.iter().map(|&q| AlternativeModel::Directional { q, amplitude: args.amplitude }).collect()
        }
        AlternativeArg::Nondirectional => vec![AlternativeModel::NonDirectional {
            delta: args.delta,
            q_scale: args.q_scale,
            q_exponent: args.q_exponent,
        }],
    };
    if models.is_empty() {
        return Err(CliError::Usage("--q needs at least one component".into()));
    }
    for m in &models {
        m.validate(n1 + n2).map_err(CliError::from_config)?;
    }
    let mut rows = Vec::new();
    for model in &models {
        let points = empirical_power_curve(model, &spec, &args.gammas, &cfg).map_err(|e| {
            CliError::from_compute(e.context(format!("power study {model:?}")))
        })?;
        rows.extend(points.iter().map(|p| PowerRow {
            gamma: p.gamma,
            q: p.q,
            n: p.n,
            theoretical_power: p.theoretical_power,
            empirical_power_kfda: p.empirical_power,
            empirical_power_mmd: p.empirical_power_mmd,
            se: p.standard_error(),
        }));
    }
    let text = match args.format.unwrap_or(Format::Tsv) {
        Format::Json => json(&rows),
        Format::Tsv => table::render(
            &["gamma", "q", "n", "theoretical_power", "empirical_power_kfda", "empirical_power_mmd", "se"],
            &rows
                .iter()
                .map(|r| {
                    vec![
                        r.gamma.into(),
                        r.q.into(),
                        r.n.into(),
                        r.theoretical_power.into(),
                        r.empirical_power_kfda.into(),
                        r.empirical_power_mmd.into(),
                        r.se.into(),
                    ]
                })
                .collect::<Vec<_>>(),
        ),
    };
    Ok(Rendered { text, code: EXIT_ACCEPT })
}

fn cmd_roc(args: &Args, stderr: &mut dyn Write) -> Result<Rendered, CliError> {
    let scenario = match args.scenario {
        ScenarioArg::Speaker => {
            let (null, alternative) = Generator::speaker_proxy(args.shift);
            Scenario { null, alternative }
        }
        ScenarioArg::Contamination => {
            let q = *args.q.first().ok_or_else(|| CliError::Usage("--q needs a component".into()))?;
            Scenario { null: Generator::Uniform, alternative: Generator::Contaminated { q, eta: args.eta } }
        }
    };
    scenario.alternative.validate().map_err(CliError::from_config)?;
    let default_kernel = match args.scenario {
        ScenarioArg::Speaker => KernelArg::Gaussian,
        ScenarioArg::Contamination => KernelArg::Spline,
    };
    let spec = kernel_for(args, default_kernel, None)?;
    warn_linear(&spec, stderr);
    let schedule = parse_schedule(&args.gamma_schedule)?;
    let (n1, n2) = (args.n1.unwrap_or(100), args.n2.unwrap_or(100));
    let gamma = gamma_for(args, &schedule, n1 + n2)?;
    let cfg = study_config(args, n1, n2, args.replications.unwrap_or(200))?;
    let points =
        roc_curve(&scenario, &spec, gamma, &args.alpha_grid, &cfg).map_err(|e| match e {
            kfda_core::Error::InvalidInput(_) => CliError::Usage(e.to_string()),
            e => CliError::from_compute(e),
        })?;
    let text = match args.format.unwrap_or(Format::Tsv) {
        Format::Json => json(&points),
        Format::Tsv => table::render(
            &["alpha", "fpr", "tpr"],
            &points.iter().map(|p| vec![p.alpha.into(), p.fpr.into(), p.tpr.into()]).collect::<Vec<_>>(),
        ),
    };
    Ok(Rendered { text, code: EXIT_ACCEPT })
}

fn cmd_calibrate(args: &Args, stderr: &mut dyn Write) -> Result<Rendered, CliError> {
    let (n1, n2) = (args.n1.unwrap_or(100), args.n2.unwrap_or(100));
    let replications = args.replications.unwrap_or(200);
    if replications < 100 {
        return Err(CliError::Usage(format!("--replications must be >= 100, got {replications}")));
    }
    if let Some(r) = args.replicates {
        if r < 100 {
            return Err(CliError::Usage(format!("--replicates must be >= 100, got {r}")));
        }
    }
    if n1 < 2 || n2 < 2 {
        return Err(CliError::Usage("--n1 and --n2 must be >= 2".into()));
    }
    let spec = kernel_for(args, KernelArg::Gaussian, None)?;
    warn_linear(&spec, stderr);
    let generator = match spec {
        KernelSpec::PeriodicSpline { .. } => Generator::Uniform,
        _ => Generator::GaussianMixture { means: vec![0.0], sd: 1.0, shift: 0.0, dim: 1 },
    };
    let schedule = parse_schedule(&args.gamma_schedule)?;
    let gamma = gamma_for(args, &schedule, n1 + n2)?;
    let methods: Vec<CalibrationMethod> = match args.calibration {
        Some(c) => vec![c.into()],
        None => CalibrationMethod::ALL.to_vec(),
    };
    check_block_length(args, &methods)?;
    let configs: Vec<TestConfig> = methods
        .iter()
        .map(|&method| {
            let replicates = match (args.replicates, method) {
                (Some(r), _) => r,
                (None, m) if m.is_resampling() => kfda_core::calibration::MIN_RESAMPLE_REPLICATES,
                (None, m) => m.default_replicates(),
            };
            let cfg = TestConfig { gamma, alpha: args.alpha, method, replicates, block_length: args.block_length, seed: 0 };
            cfg.validate().map_err(CliError::from_config)?;
            Ok(cfg)
        })
        .collect::<Result<_, CliError>>()?;

    // rejections[r][m]: did method m reject on data set r
    let rejections: Vec<Vec<bool>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(args.seed, "calibrate-data", r as u64);
            let s1 = generator.draw(n1, &mut rng)?;
            let s2 = generator.draw(n2, &mut rng)?;
            let bundle = build_bundle(&TwoSample::new(&s1, &s2)?, &spec)?;
            let seed = derive_seed(args.seed, &format!("calibration/{r}"));
            configs
                .iter()
                .map(|cfg| Ok(run_kfda_test(&bundle, &TestConfig { seed, ..*cfg })?.rejects()))
                .collect::<kfda_core::Result<Vec<bool>>>()
                .map_err(|e| e.context(format!("replication {r}")))
        })
        .collect::<kfda_core::Result<_>>()
        .map_err(CliError::from_compute)?;

    let reps = replications as f64;
    let methods = configs
        .iter()
        .enumerate()
        .map(|(m, cfg)| {
            let count = rejections.iter().filter(|row| row[m]).count();
            let level = count as f64 / reps;
            MethodLevel {
                method: cfg.method,
                replicates: cfg.replicates,
                rejections: count,
                level,
                se: (level * (1.0 - level) / reps).sqrt(),
            }
        })
        .collect();
    let report = CalibrationReport {
        alpha: args.alpha,
        n1,
        n2,
        replications,
        kernel: spec,
        null_generator: generator,
        gamma,
        gamma_schedule: schedule,
        seed: args.seed,
        methods,
        version: VERSION.to_string(),
    };
    let text = match args.format.unwrap_or(Format::Json) {
        Format::Json => json(&report),
        Format::Tsv => table::render(
            &["method", "replicates", "rejections", "level", "se"],
            &report
                .methods
                .iter()
                .map(|m| {
                    vec![
                        m.method.name().into(),
                        m.replicates.into(),
                        m.rejections.into(),
                        m.level.into(),
                        m.se.into(),
                    ]
                })
                .collect::<Vec<_>>(),
        ),
    };
    Ok(Rendered { text, code: EXIT_ACCEPT })
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("KFDA_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|t| *t > 0)
        .ok_or_else(|| CliError::Usage(format!("KFDA_THREADS must be a positive integer, got '{raw}'")))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn execute(args: &Args, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, CliError> {
    configure_threads()?;
    let rendered = match args.command {
        Command::Test => cmd_test(args, stderr),
        Command::Power => cmd_power(args, stderr),
        Command::Roc => cmd_roc(args, stderr),
        Command::Calibrate => cmd_calibrate(args, stderr),
    }?;
    match &args.out {
        Some(path) => std::fs::write(path, rendered.text.as_bytes())
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?,
        None => stdout.write_all(rendered.text.as_bytes()).map_err(|e| CliError::Io(e.to_string()))?,
    }
    Ok(rendered.code)
}

/// Parse `argv` (program name first), run, and return the exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            use clap::error::ErrorKind;
            return if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                0
            } else {
                let _ = write!(stderr, "{e}");
                64
            };
        }
    };
    match execute(&args, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "kfda: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_parsing() {
        assert_eq!(parse_schedule("fixed").unwrap(), GammaSchedule::Fixed);
        assert_eq!(
            parse_schedule("decaying:0.25").unwrap(),
            GammaSchedule::Decaying { exponent: 0.25, scale: 1.0 }
        );
        assert_eq!(
            parse_schedule("decaying:0.3:2").unwrap(),
            GammaSchedule::Decaying { exponent: 0.3, scale: 2.0 }
        );
        for bad in ["", "decaying", "decaying:x", "decaying:0.7", "exp:0.2"] {
            assert!(matches!(parse_schedule(bad), Err(CliError::Usage(_))), "{bad}");
        }
    }

    #[test]
    fn help_and_version_exit_zero() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(run(["kfda", "--help"], &mut out, &mut err), 0);
        assert!(String::from_utf8(out).unwrap().contains("--command"));
        let mut out = Vec::new();
        assert_eq!(run(["kfda", "--version"], &mut out, &mut err), 0);
    }

    #[test]
    fn block_length_needs_block_bootstrap() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(
            ["kfda", "--command", "calibrate", "--calibration", "permutation", "--block-length", "3"],
            &mut out,
            &mut err,
        );
        assert_eq!(code, 64);
    }

    #[test]
    fn outcome_round_trip() {
        let outcome = TestOutcome {
            statistic: TestStatisticValue { raw_quadratic: 0.1 + 0.2, normalized: -1.0 / 3.0, d1: 7.25, d2: 2.0f64.sqrt() },
            calibration: CalibrationResult {
                method: CalibrationMethod::BlockBootstrap,
                alpha: 0.05,
                critical_value: std::f64::consts::E,
                p_value: 1.0 / 1000.0,
                mc_replicates: 999,
                seed: u64::MAX,
            },
            decision: Decision::Reject,
            n1: 3,
            n2: 4,
            kernel: KernelSpec::Gaussian { bandwidth: 0.123456789 },
            gamma: 1e-7,
            gamma_schedule: GammaSchedule::Decaying { exponent: 0.25, scale: 1.0 },
            version: VERSION.into(),
        };
        let back: TestOutcome = serde_json::from_str(&json(&outcome)).unwrap();
        assert_eq!(back, outcome);
    }
}
