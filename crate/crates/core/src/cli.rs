//! `driftkf` command-line front end.
//!
//! Exit codes: 0 success, 1 numerical divergence flagged, 2 usage or I/O
//! error.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::enkf::{enkf_run, init_ensemble, EnkfConfig, InflationSchedule, DEFAULT_ENSEMBLE_SIZE, DEFAULT_INFLATION_LAMBDA, DEFAULT_INFLATION_STEP, DEFAULT_SUBSET_FRACTION};
use crate::error::{Error, Result};
use crate::harness::{
    force_error, grid_search, run_experiment, run_rls, BenchmarkSpec, ExperimentConfig, GridSpec, Method,
    OrderingReport, DEFAULT_N_INIT,
};
use crate::mill::{CoefficientBounds, CoefficientSet, Cutter, MillingDirection, ProcessSpec, ToolSpec};
use crate::rng::{derive_seed, Stream};
use crate::signal::{
    add_noise, noise_level, ploughing_filter, read_csv, simulate_run, write_csv, CaseKind, NoiseSpec, SignalSample,
    TrajectoryCase, DEFAULT_REVOLUTIONS, PLOUGHING_THRESHOLD,
};

pub const SEED_ENV: &str = "DRIFTKF_SEED";
const DEFAULT_SEED: u64 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DIVERGED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "driftkf", version, about = "Identify trending milling force coefficients")]
pub struct Cli {
    /// Flat `key = value` configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a force signal and write it as CSV.
    Simulate(SimulateArgs),
    /// Identify coefficients from a signal CSV with one estimator.
    Identify(IdentifyArgs),
    /// Monte Carlo over initial ensembles; writes error and coefficient envelopes.
    Montecarlo(MonteCarloArgs),
    /// Inflation step/λ grid search; writes rms_table.csv.
    Gridsearch(GridArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CaseArg {
    Static,
    Ascending,
    Alternating,
}

impl From<CaseArg> for CaseKind {
    fn from(c: CaseArg) -> Self {
        match c {
            CaseArg::Static => CaseKind::Static,
            CaseArg::Ascending => CaseKind::Ascending,
            CaseArg::Alternating => CaseKind::Alternating,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Rls,
    Enkf,
    #[value(name = "enkf_star")]
    EnkfStar,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "static")]
    pub case: CaseArg,
    #[arg(long)]
    pub revs: Option<usize>,
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[arg(long)]
    pub step: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Signal CSV written by `simulate`.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// S/N used to derive the observation noise covariance.
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub ensemble_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MonteCarloArgs {
    #[arg(long)]
    pub n_init: Option<usize>,
    #[arg(long, value_enum, default_value = "static")]
    pub case: CaseArg,
    #[arg(long, value_enum, default_value = "enkf_star")]
    pub method: MethodArg,
    #[arg(long)]
    pub step: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub revs: Option<usize>,
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub ensemble_size: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Base seed of the grid (initial ensembles, noise, perturbations).
    #[arg(long, alias = "seeds")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_init: Option<usize>,
    #[arg(long)]
    pub revs: Option<usize>,
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub cases: Option<Vec<CaseArg>>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Settings shared by all commands, loaded from the config file and then
/// overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub tool: ToolSpec,
    pub process: ProcessSpec,
    pub coefficients: CoefficientSet,
    pub bounds: CoefficientBounds,
    pub snr: f64,
    pub revs: usize,
    pub seed: Option<u64>,
    pub ensemble_size: usize,
    pub subset_fraction: f64,
    pub n_init: usize,
    pub step: usize,
    pub lambda: f64,
    pub h_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tool: ToolSpec::reference(),
            process: ProcessSpec::reference(),
            coefficients: CoefficientSet::X5CRNI18_10,
            bounds: CoefficientBounds::X5CRNI18_10,
            snr: 15.0,
            revs: DEFAULT_REVOLUTIONS,
            seed: None,
            ensemble_size: DEFAULT_ENSEMBLE_SIZE,
            subset_fraction: DEFAULT_SUBSET_FRACTION,
            n_init: DEFAULT_N_INIT,
            step: DEFAULT_INFLATION_STEP,
            lambda: DEFAULT_INFLATION_LAMBDA,
            h_threshold: PLOUGHING_THRESHOLD,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("line {line}: cannot parse `{value}` for `{key}`")))
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {line_no}: expected `key = value`")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "D" | "diameter" => cfg.tool.diameter = parse_value(key, value, line_no)?,
                "N_z" | "teeth" => cfg.tool.teeth = parse_value(key, value, line_no)?,
                "beta" | "helix_angle" => cfg.tool.helix_deg = parse_value(key, value, line_no)?,
                "gamma" | "rake_angle" => cfg.tool.rake_deg = parse_value(key, value, line_no)?,
                "disk_count" => cfg.tool.disk_count = parse_value(key, value, line_no)?,
                "f" | "f_z" => cfg.process.feed_per_tooth = parse_value(key, value, line_no)?,
                "v_c" => cfg.process.cutting_velocity = parse_value(key, value, line_no)?,
                "a_p" => cfg.process.depth_of_cut = parse_value(key, value, line_no)?,
                "a_e" => cfg.process.width_of_cut = parse_value(key, value, line_no)?,
                "f_s" => cfg.process.sample_rate = parse_value(key, value, line_no)?,
                "direction" => cfg.process.direction = value.parse::<MillingDirection>()?,
                "k_t" | "kt" => cfg.coefficients.kt = parse_value(key, value, line_no)?,
                "m_t" | "mt" => cfg.coefficients.mt = parse_value(key, value, line_no)?,
                "k_r" | "kr" => cfg.coefficients.kr = parse_value(key, value, line_no)?,
                "m_r" | "mr" => cfg.coefficients.mr = parse_value(key, value, line_no)?,
                "k_t_lb" => cfg.bounds.lower.kt = parse_value(key, value, line_no)?,
                "m_t_lb" => cfg.bounds.lower.mt = parse_value(key, value, line_no)?,
                "k_r_lb" => cfg.bounds.lower.kr = parse_value(key, value, line_no)?,
                "m_r_lb" => cfg.bounds.lower.mr = parse_value(key, value, line_no)?,
                "k_t_ub" => cfg.bounds.upper.kt = parse_value(key, value, line_no)?,
                "m_t_ub" => cfg.bounds.upper.mt = parse_value(key, value, line_no)?,
                "k_r_ub" => cfg.bounds.upper.kr = parse_value(key, value, line_no)?,
                "m_r_ub" => cfg.bounds.upper.mr = parse_value(key, value, line_no)?,
                "snr" => cfg.snr = parse_value(key, value, line_no)?,
                "revs" => cfg.revs = parse_value(key, value, line_no)?,
                "seed" => cfg.seed = Some(parse_value(key, value, line_no)?),
                "J" | "ensemble_size" => cfg.ensemble_size = parse_value(key, value, line_no)?,
                "subset_fraction" => cfg.subset_fraction = parse_value(key, value, line_no)?,
                "n_init" => cfg.n_init = parse_value(key, value, line_no)?,
                "step" => cfg.step = parse_value(key, value, line_no)?,
                "lambda" => cfg.lambda = parse_value(key, value, line_no)?,
                "h_th" => cfg.h_threshold = parse_value(key, value, line_no)?,
                other => return Err(Error::InvalidConfig(format!("line {line_no}: unknown key `{other}`"))),
            }
        }
        cfg.process.validate(&cfg.tool)?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::parse(&fs::read_to_string(p)?),
            None => Ok(Self::default()),
        }
    }

    /// Flag, then `DRIFTKF_SEED`, then config file, then the default.
    pub fn resolve_seed(&self, flag: Option<u64>) -> Result<u64> {
        if let Some(s) = flag {
            return Ok(s);
        }
        if let Ok(v) = std::env::var(SEED_ENV) {
            return v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}=`{v}` is not an unsigned integer")));
        }
        Ok(self.seed.unwrap_or(DEFAULT_SEED))
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn benchmark(&self, kind: CaseKind) -> BenchmarkSpec {
        BenchmarkSpec {
            tool: self.tool.clone(),
            process: self.process.clone(),
            case: TrajectoryCase::new(kind),
            base: self.coefficients,
            n_rev: self.revs,
            snr: self.snr,
            h_threshold: self.h_threshold,
        }
    }
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    version: &'a str,
    config_digest: String,
    seed: u64,
    tool: &'a ToolSpec,
    process: &'a ProcessSpec,
    outputs: Vec<String>,
    elapsed_ms: u128,
    extra: BTreeMap<&'a str, String>,
}

struct Outcome {
    divergent: bool,
}

fn write_manifest(path: &Path, cfg: &RunConfig, command: &str, seed: u64, outputs: &[PathBuf], started: Instant, extra: BTreeMap<&str, String>) -> Result<()> {
    let manifest = RunManifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config_digest: cfg.digest(),
        seed,
        tool: &cfg.tool,
        process: &cfg.process,
        outputs: outputs
            .iter()
            .map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
            .collect(),
        elapsed_ms: started.elapsed().as_millis(),
        extra,
    };
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, &manifest).map_err(|e| Error::Io(e.into()))?;
    writeln!(f)?;
    Ok(())
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

fn create_csv(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn cmd_simulate(cfg: &RunConfig, args: &SimulateArgs) -> Result<Outcome> {
    let started = Instant::now();
    let mut cfg = cfg.clone();
    if let Some(r) = args.revs {
        cfg.revs = r;
    }
    if let Some(s) = args.snr {
        cfg.snr = s;
    }
    let seed = cfg.resolve_seed(args.seed)?;
    let kind: CaseKind = args.case.into();
    let cutter = Cutter::new(&cfg.tool, &cfg.process)?;
    let clean = simulate_run(&cutter, &TrajectoryCase::new(kind), &cfg.coefficients, cfg.revs)?;
    let (series, level) = add_noise(
        clean,
        &NoiseSpec {
            snr: cfg.snr,
            seed: derive_seed(seed, Stream::Noise, 0),
        },
    )?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_csv(create_csv(&args.out)?, &series)?;
    let mut manifest_path = args.out.clone().into_os_string();
    manifest_path.push(".manifest.json");
    let extra = BTreeMap::from([
        ("case", kind.to_string()),
        ("samples", series.len().to_string()),
        ("sigma_t", level.tangential.to_string()),
        ("sigma_r", level.radial.to_string()),
    ]);
    write_manifest(Path::new(&manifest_path), &cfg, "simulate", seed, &[args.out.clone()], started, extra)?;
    Ok(Outcome { divergent: false })
}

fn resolve_method(method: MethodArg, step: Option<usize>, lambda: Option<f64>, cfg: &RunConfig) -> Result<Method> {
    match method {
        MethodArg::Rls => {
            if step.is_some() || lambda.is_some() {
                return Err(usage("--step/--lambda do not apply to --method rls"));
            }
            Ok(Method::Rls)
        }
        MethodArg::Enkf => {
            if step.is_some() || lambda.is_some() {
                log::warn!("--step/--lambda are ignored by the classic filter");
                eprintln!("warning: --step/--lambda are ignored with --method enkf");
            }
            Ok(Method::Enkf)
        }
        MethodArg::EnkfStar => Ok(Method::EnkfStar {
            step: step.unwrap_or(cfg.step),
            lambda: lambda.unwrap_or(cfg.lambda),
        }),
    }
}

#[derive(Serialize)]
struct TraceRow {
    sample: usize,
    kt: f64,
    mt: f64,
    kr: f64,
    mr: f64,
    #[serde(rename = "dFt")]
    dft: f64,
    #[serde(rename = "dFr")]
    dfr: f64,
}

fn cmd_identify(cfg: &RunConfig, args: &IdentifyArgs) -> Result<Outcome> {
    let started = Instant::now();
    let method = resolve_method(args.method, args.step, args.lambda, cfg)?;
    let mut cfg = cfg.clone();
    if let Some(s) = args.snr {
        cfg.snr = s;
    }
    if let Some(j) = args.ensemble_size {
        cfg.ensemble_size = j;
    }
    let seed = cfg.resolve_seed(args.seed)?;
    let cutter = Cutter::new(&cfg.tool, &cfg.process)?;
    let records = read_csv(BufReader::new(File::open(&args.input)?))?;
    let series: Vec<SignalSample> = records.into_iter().map(|r| r.into_sample(&cutter)).collect();
    if series.is_empty() {
        return Err(usage("input signal is empty"));
    }
    let noise = noise_level(&series, cfg.snr);
    let samples = ploughing_filter(&series, cfg.h_threshold);
    if samples.is_empty() {
        return Err(usage("no sample passes the ploughing filter"));
    }

    let (initial, _) = init_ensemble(&cfg.bounds, cfg.ensemble_size, derive_seed(seed, Stream::InitialEnsemble, 0))?;
    let filter_seed = derive_seed(seed, Stream::Filter, 0);
    let (coefficients, divergence): (Vec<CoefficientSet>, Option<usize>) = match method {
        Method::Rls => {
            let out = run_rls(&samples, &initial.coefficient_mean());
            (out.coefficients, out.divergence)
        }
        Method::Enkf | Method::EnkfStar { .. } => {
            let config = match method {
                Method::EnkfStar { step, lambda } => EnkfConfig::inflated(
                    &noise,
                    filter_seed,
                    InflationSchedule {
                        step,
                        lambda,
                        subset_fraction: cfg.subset_fraction,
                    },
                ),
                _ => EnkfConfig::classic(&noise, filter_seed),
            };
            let trace = enkf_run(&samples, &initial, &config)?;
            ((0..trace.len()).map(|k| trace.coefficients(k)).collect(), trace.divergence.map(|d| d.0))
        }
    };

    fs::create_dir_all(&args.out)?;
    let path = args.out.join(format!("trace_{}.csv", method.name()));
    let mut w = csv::Writer::from_writer(create_csv(&path)?);
    for (k, (s, c)) in samples.iter().zip(&coefficients).enumerate() {
        let d = force_error(c, &s.true_coeffs, &s.engagement);
        w.serialize(TraceRow {
            sample: k,
            kt: c.kt,
            mt: c.mt,
            kr: c.kr,
            mr: c.mr,
            dft: d.tangential,
            dfr: d.radial,
        })
        .map_err(crate::signal::csv_error)?;
    }
    w.flush()?;
    let mut extra = BTreeMap::from([("method", method.name().to_string()), ("samples", samples.len().to_string())]);
    if let Method::EnkfStar { step, lambda } = method {
        extra.insert("step", step.to_string());
        extra.insert("lambda", lambda.to_string());
    }
    if let Some(k) = divergence {
        extra.insert("diverged_at", k.to_string());
    }
    write_manifest(&args.out.join("manifest.json"), &cfg, "identify", seed, &[path], started, extra)?;
    Ok(Outcome {
        divergent: divergence.is_some(),
    })
}

fn cmd_montecarlo(cfg: &RunConfig, args: &MonteCarloArgs) -> Result<Outcome> {
    let started = Instant::now();
    let method = resolve_method(args.method, args.step, args.lambda, cfg)?;
    let mut cfg = cfg.clone();
    if let Some(n) = args.n_init {
        cfg.n_init = n;
    }
    if let Some(r) = args.revs {
        cfg.revs = r;
    }
    if let Some(s) = args.snr {
        cfg.snr = s;
    }
    if let Some(j) = args.ensemble_size {
        cfg.ensemble_size = j;
    }
    let seed = cfg.resolve_seed(args.seed)?;
    let kind: CaseKind = args.case.into();
    let exp = ExperimentConfig {
        benchmark: cfg.benchmark(kind),
        method,
        n_init: cfg.n_init,
        seed,
        ensemble_size: cfg.ensemble_size,
        subset_fraction: cfg.subset_fraction,
        bounds: cfg.bounds,
    };
    let result = run_experiment(&exp)?;

    fs::create_dir_all(&args.out)?;
    let tag = format!("{}_{}", method.name(), kind);
    let mut outputs = Vec::new();
    for (prefix, env) in [("eF", &result.error_t), ("ki", &result.kt), ("mi", &result.mt)] {
        let path = args.out.join(format!("{prefix}_{tag}.csv"));
        env.write_csv(create_csv(&path)?)?;
        outputs.push(path);
    }
    let extra = BTreeMap::from([
        ("method", method.name().to_string()),
        ("case", kind.to_string()),
        ("n_init", cfg.n_init.to_string()),
        ("samples", result.n_samples.to_string()),
        ("divergent_runs", result.divergent_runs.to_string()),
        ("rms_t", result.rms_t().to_string()),
    ]);
    write_manifest(&args.out.join(format!("manifest_{tag}.json")), &cfg, "montecarlo", seed, &outputs, started, extra)?;
    println!(
        "{} {}: n_init={} samples={} rms_t={:.4} divergent_runs={}",
        method.name(),
        kind,
        cfg.n_init,
        result.n_samples,
        result.rms_t(),
        result.divergent_runs
    );
    Ok(Outcome {
        divergent: result.divergent_runs > 0,
    })
}

fn cmd_gridsearch(cfg: &RunConfig, args: &GridArgs) -> Result<Outcome> {
    let started = Instant::now();
    let mut cfg = cfg.clone();
    if let Some(n) = args.n_init {
        cfg.n_init = n;
    }
    if let Some(r) = args.revs {
        cfg.revs = r;
    }
    if let Some(s) = args.snr {
        cfg.snr = s;
    }
    let seed = cfg.resolve_seed(args.seed)?;
    let mut spec = GridSpec::full(cfg.n_init, seed);
    spec.ensemble_size = cfg.ensemble_size;
    spec.subset_fraction = cfg.subset_fraction;
    spec.n_rev = cfg.revs;
    spec.snr = cfg.snr;
    if let Some(cases) = &args.cases {
        spec.cases = cases.iter().map(|&c| c.into()).collect();
    }
    let grid = grid_search(&spec)?;

    fs::create_dir_all(&args.out)?;
    let path = args.out.join("rms_table.csv");
    grid.table.write_csv(create_csv(&path)?)?;
    let mut extra = BTreeMap::from([("n_init", cfg.n_init.to_string()), ("rows", grid.table.rows.len().to_string())]);
    match OrderingReport::evaluate(&grid.table, &spec.steps, &spec.lambdas) {
        Some(r) => {
            let line = |ok: bool| if ok { "PASS" } else { "FAIL" };
            println!("(a) classic lowest static RMS:         {}", line(r.classic_best_static));
            println!("(b) classic highest alternating RMS:   {}", line(r.classic_worst_alternating));
            println!("(c) alternating RMS grows with step:   {}", line(r.alternating_grows_with_step));
            println!("(d) static RMS shrinks with step:      {}", line(r.static_shrinks_with_step));
            extra.insert("ordering", serde_json::to_string(&r).expect("report serializes"));
        }
        None => println!("ordering checks need both the static and the alternating case"),
    }
    write_manifest(&args.out.join("manifest.json"), &cfg, "gridsearch", seed, &[path], started, extra)?;
    Ok(Outcome { divergent: false })
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = RunConfig::load(cli.config.as_deref()).and_then(|cfg| match &cli.command {
        Command::Simulate(a) => cmd_simulate(&cfg, a),
        Command::Identify(a) => cmd_identify(&cfg, a),
        Command::Montecarlo(a) => cmd_montecarlo(&cfg, a),
        Command::Gridsearch(a) => cmd_gridsearch(&cfg, a),
    });
    match result {
        Ok(Outcome { divergent: false }) => EXIT_OK,
        Ok(Outcome { divergent: true }) => {
            eprintln!("warning: numerical divergence flagged");
            EXIT_DIVERGED
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    run(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_parses_table_names() {
        let cfg = RunConfig::parse(
            "# reference tool\nD = 12\nN_z = 3\nbeta = 30\nf = 0.05\na_e = 4 # radial\ndirection = down\nk_t = 1600\nseed = 9\n",
        )
        .unwrap();
        assert_eq!(cfg.tool.diameter, 12.0);
        assert_eq!(cfg.tool.teeth, 3);
        assert_eq!(cfg.tool.helix_deg, 30.0);
        assert_eq!(cfg.process.feed_per_tooth, 0.05);
        assert_eq!(cfg.process.width_of_cut, 4.0);
        assert_eq!(cfg.process.direction, MillingDirection::Down);
        assert_eq!(cfg.coefficients.kt, 1600.0);
        assert_eq!(cfg.seed, Some(9));
    }

    #[test]
    fn config_file_errors() {
        assert!(RunConfig::parse("bogus = 1").is_err());
        assert!(RunConfig::parse("D = ten").is_err());
        assert!(RunConfig::parse("no equals sign").is_err());
        assert!(RunConfig::parse("a_e = 11").is_err());
    }

    #[test]
    fn digest_tracks_config() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.snr = 20.0;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn inflation_flags_with_rls_are_rejected() {
        let cfg = RunConfig::default();
        assert!(resolve_method(MethodArg::Rls, Some(50), None, &cfg).is_err());
        assert_eq!(resolve_method(MethodArg::Enkf, Some(50), Some(2.0), &cfg).unwrap(), Method::Enkf);
        assert_eq!(
            resolve_method(MethodArg::EnkfStar, None, None, &cfg).unwrap(),
            Method::EnkfStar { step: 50, lambda: 10.0 }
        );
    }

    #[test]
    fn unknown_case_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("s.csv");
        let code = run(["driftkf", "simulate", "--case", "wobbly", "--out", out.to_str().unwrap()]);
        assert_eq!(code, EXIT_USAGE);
        assert!(!out.exists());
    }
}
