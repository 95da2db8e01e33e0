//! Monte Carlo experiments over initial ensembles, force-error envelopes
//! and the inflation step/λ grid search.

use std::io::Write;

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::enkf::{enkf_run, init_ensemble, EnkfConfig, Ensemble, InflationSchedule, DEFAULT_ENSEMBLE_SIZE, DEFAULT_SUBSET_FRACTION};
use crate::error::{Error, Result};
use crate::mill::{CoefficientBounds, CoefficientSet, Cutter, EngagementSample, Forces, ProcessSpec, ToolSpec};
use crate::rls::{rls_step, RlsState, DEFAULT_FORGETTING, DEFAULT_P0_SCALE};
use crate::rng::{derive_seed, Stream};
use crate::signal::{
    add_noise, ploughing_filter, simulate_run, CaseKind, NoiseLevel, NoiseSpec, SignalSample, TrajectoryCase,
    DEFAULT_REVOLUTIONS, PLOUGHING_THRESHOLD,
};

/// Envelope values of divergent RLS runs are clipped to this magnitude.
pub const DIVERGENCE_CLIP: f64 = 1e6;

pub const DEFAULT_N_INIT: usize = 50;
pub const GRID_STEPS: [usize; 3] = [50, 100, 200];
pub const GRID_LAMBDAS: [f64; 5] = [1.0, 1.5, 2.0, 5.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Rls,
    Enkf,
    EnkfStar { step: usize, lambda: f64 },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Rls => "rls",
            Self::Enkf => "enkf",
            Self::EnkfStar { .. } => "enkf_star",
        }
    }

    pub fn enkf_star() -> Self {
        let d = InflationSchedule::default();
        Self::EnkfStar {
            step: d.step,
            lambda: d.lambda,
        }
    }
}

/// Everything needed to regenerate one benchmark signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub tool: ToolSpec,
    pub process: ProcessSpec,
    pub case: TrajectoryCase,
    pub base: CoefficientSet,
    pub n_rev: usize,
    pub snr: f64,
    pub h_threshold: f64,
}

impl BenchmarkSpec {
    pub fn reference(kind: CaseKind) -> Self {
        Self {
            tool: ToolSpec::reference(),
            process: ProcessSpec::reference(),
            case: TrajectoryCase::new(kind),
            base: CoefficientSet::X5CRNI18_10,
            n_rev: DEFAULT_REVOLUTIONS,
            snr: 15.0,
            h_threshold: PLOUGHING_THRESHOLD,
        }
    }
}

/// Corrected samples of one simulated, noisy run.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub samples: Vec<SignalSample>,
    pub noise: NoiseLevel,
    pub raw_len: usize,
}

impl Benchmark {
    /// `seed` drives the measurement noise only.
    pub fn generate(spec: &BenchmarkSpec, seed: u64) -> Result<Self> {
        let cutter = Cutter::new(&spec.tool, &spec.process)?;
        let clean = simulate_run(&cutter, &spec.case, &spec.base, spec.n_rev)?;
        let raw_len = clean.len();
        let (noisy, noise) = add_noise(clean, &NoiseSpec { snr: spec.snr, seed })?;
        let samples = ploughing_filter(&noisy, spec.h_threshold);
        if samples.is_empty() {
            return Err(Error::InvalidConfig("no sample passes the ploughing filter".into()));
        }
        Ok(Self { samples, noise, raw_len })
    }
}

/// Force error of estimated against true coefficients on one chip geometry.
pub fn force_error(est: &CoefficientSet, truth: &CoefficientSet, eng: &EngagementSample) -> Forces {
    let mut d = Forces::default();
    let b = eng.b_disk;
    for h in eng.engaged() {
        d.tangential += est.kt * b * h.powf(1.0 - est.mt) - truth.kt * b * h.powf(1.0 - truth.mt);
        d.radial += est.kr * b * h.powf(1.0 - est.mr) - truth.kr * b * h.powf(1.0 - truth.mr);
    }
    d
}

/// Result of identifying one benchmark from one initial ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub coefficients: Vec<CoefficientSet>,
    pub error_t: Vec<f64>,
    pub error_r: Vec<f64>,
    /// Corrected sample at which the run diverged.
    pub divergence: Option<usize>,
}

fn outcome(samples: &[SignalSample], coefficients: Vec<CoefficientSet>, divergence: Option<usize>) -> RunOutcome {
    let (error_t, error_r) = samples
        .iter()
        .zip(&coefficients)
        .map(|(s, c)| {
            let d = force_error(c, &s.true_coeffs, &s.engagement);
            (d.tangential, d.radial)
        })
        .unzip();
    RunOutcome {
        coefficients,
        error_t,
        error_r,
        divergence,
    }
}

/// Runs both RLS channels independently; a diverged channel keeps its last
/// valid estimate.
pub fn run_rls(samples: &[SignalSample], start: &CoefficientSet) -> RunOutcome {
    let mut t = RlsState::new(Vector2::new(start.kt, start.mt), DEFAULT_P0_SCALE, DEFAULT_FORGETTING).expect("valid");
    let mut r = RlsState::new(Vector2::new(start.kr, start.mr), DEFAULT_P0_SCALE, DEFAULT_FORGETTING).expect("valid");
    let (mut t_live, mut r_live) = (true, true);
    let mut divergence = None;
    let mut coefficients = Vec::with_capacity(samples.len());
    for (k, s) in samples.iter().enumerate() {
        if s.engagement.is_engaged() {
            if t_live {
                match rls_step(&t, s.ft_noisy, &s.engagement) {
                    Ok(next) => t = next,
                    Err(e) => {
                        log::debug!("tangential RLS stopped at sample {k}: {e}");
                        t_live = false;
                        divergence.get_or_insert(k);
                    }
                }
            }
            if r_live {
                match rls_step(&r, s.fr_noisy, &s.engagement) {
                    Ok(next) => r = next,
                    Err(e) => {
                        log::debug!("radial RLS stopped at sample {k}: {e}");
                        r_live = false;
                        divergence.get_or_insert(k);
                    }
                }
            }
        }
        coefficients.push(CoefficientSet::new(t.estimate[0], t.estimate[1], r.estimate[0], r.estimate[1]));
    }
    outcome(samples, coefficients, divergence)
}

pub fn run_enkf(benchmark: &Benchmark, initial: &Ensemble, method: Method, seed: u64, subset_fraction: f64) -> Result<RunOutcome> {
    let config = match method {
        Method::Enkf => EnkfConfig::classic(&benchmark.noise, seed),
        Method::EnkfStar { step, lambda } => EnkfConfig::inflated(
            &benchmark.noise,
            seed,
            InflationSchedule {
                step,
                lambda,
                subset_fraction,
            },
        ),
        Method::Rls => return Err(Error::InvalidConfig("RLS is not an ensemble method".into())),
    };
    let trace = enkf_run(&benchmark.samples, initial, &config)?;
    let coefficients = (0..trace.len()).map(|k| trace.coefficients(k)).collect();
    Ok(outcome(&benchmark.samples, coefficients, trace.divergence.map(|(k, _)| k)))
}

pub fn run_method(benchmark: &Benchmark, initial: &Ensemble, method: Method, seed: u64, subset_fraction: f64) -> Result<RunOutcome> {
    match method {
        Method::Rls => Ok(run_rls(&benchmark.samples, &initial.coefficient_mean())),
        _ => run_enkf(benchmark, initial, method, seed, subset_fraction),
    }
}

/// Per-sample Monte Carlo mean with a `mean ± 2σ` band (sample standard
/// deviation, zero for a single run).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Envelope {
    pub fn from_runs<'a>(runs: impl IntoIterator<Item = &'a [f64]>, clip: Option<f64>) -> Self {
        let runs: Vec<&[f64]> = runs.into_iter().collect();
        let Some(len) = runs.iter().map(|r| r.len()).min() else {
            return Self::default();
        };
        let n = runs.len() as f64;
        let mut env = Self {
            mean: Vec::with_capacity(len),
            lo: Vec::with_capacity(len),
            hi: Vec::with_capacity(len),
        };
        for k in 0..len {
            let value = |r: &&[f64]| match clip {
                Some(c) => r[k].clamp(-c, c),
                None => r[k],
            };
            let mean = runs.iter().map(value).sum::<f64>() / n;
            let sd = if runs.len() > 1 {
                (runs.iter().map(|r| (value(r) - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            env.mean.push(mean);
            env.lo.push(mean - 2.0 * sd);
            env.hi.push(mean + 2.0 * sd);
        }
        env
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn width(&self, k: usize) -> f64 {
        self.hi[k] - self.lo[k]
    }

    /// Writes `sample,mean,lo,hi`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["sample", "mean", "lo", "hi"]).map_err(crate::signal::csv_error)?;
        for k in 0..self.len() {
            w.serialize((k, self.mean[k], self.lo[k], self.hi[k])).map_err(crate::signal::csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub benchmark: BenchmarkSpec,
    pub method: Method,
    pub n_init: usize,
    pub seed: u64,
    pub ensemble_size: usize,
    pub subset_fraction: f64,
    pub bounds: CoefficientBounds,
}

impl ExperimentConfig {
    pub fn new(kind: CaseKind, method: Method, n_init: usize, seed: u64) -> Self {
        Self {
            benchmark: BenchmarkSpec::reference(kind),
            method,
            n_init,
            seed,
            ensemble_size: DEFAULT_ENSEMBLE_SIZE,
            subset_fraction: DEFAULT_SUBSET_FRACTION,
            bounds: CoefficientBounds::X5CRNI18_10,
        }
    }
}

/// Initial ensembles shared by every method and case of one experiment.
pub fn initial_ensembles(bounds: &CoefficientBounds, n_init: usize, size: usize, seed: u64) -> Result<Vec<Ensemble>> {
    (0..n_init as u64)
        .map(|r| init_ensemble(bounds, size, derive_seed(seed, Stream::InitialEnsemble, r)).map(|(e, _)| e))
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub error_t: Envelope,
    pub error_r: Envelope,
    pub kt: Envelope,
    pub mt: Envelope,
    pub kr: Envelope,
    pub mr: Envelope,
    /// Tangential force error of every run, in run order.
    pub runs_t: Vec<Vec<f64>>,
    pub divergent_runs: usize,
    pub n_samples: usize,
}

impl ExperimentResult {
    /// RMS of the Monte Carlo mean tangential error.
    pub fn rms_t(&self) -> f64 {
        rms(&self.error_t.mean)
    }
}

/// Runs `n_init` identifications in parallel and aggregates them in run order.
pub fn run_monte_carlo(benchmark: &Benchmark, initials: &[Ensemble], method: Method, seed: u64, subset_fraction: f64) -> Result<Vec<RunOutcome>> {
    initials
        .par_iter()
        .enumerate()
        .map(|(r, init)| run_method(benchmark, init, method, derive_seed(seed, Stream::Filter, r as u64), subset_fraction))
        .collect()
}

fn aggregate(runs: &[RunOutcome], clip: Option<f64>) -> ExperimentResult {
    let pick = |f: fn(&CoefficientSet) -> f64| -> Vec<Vec<f64>> {
        runs.iter().map(|r| r.coefficients.iter().map(f).collect()).collect()
    };
    let env = |v: &[Vec<f64>]| Envelope::from_runs(v.iter().map(Vec::as_slice), clip);
    let runs_t: Vec<Vec<f64>> = runs.iter().map(|r| r.error_t.clone()).collect();
    let runs_r: Vec<Vec<f64>> = runs.iter().map(|r| r.error_r.clone()).collect();
    ExperimentResult {
        error_t: env(&runs_t),
        error_r: env(&runs_r),
        kt: env(&pick(|c| c.kt)),
        mt: env(&pick(|c| c.mt)),
        kr: env(&pick(|c| c.kr)),
        mr: env(&pick(|c| c.mr)),
        n_samples: runs_t.first().map_or(0, Vec::len),
        runs_t,
        divergent_runs: runs.iter().filter(|r| r.divergence.is_some()).count(),
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    if cfg.n_init == 0 {
        return Err(Error::InvalidConfig("at least one initial ensemble is required".into()));
    }
    let benchmark = Benchmark::generate(&cfg.benchmark, derive_seed(cfg.seed, Stream::Noise, 0))?;
    let initials = initial_ensembles(&cfg.bounds, cfg.n_init, cfg.ensemble_size, cfg.seed)?;
    let runs = run_monte_carlo(&benchmark, &initials, cfg.method, cfg.seed, cfg.subset_fraction)?;
    let clip = matches!(cfg.method, Method::Rls).then_some(DIVERGENCE_CLIP);
    let mut result = aggregate(&runs, clip);
    if clip.is_some() {
        // RMS is reported from the unclipped mean.
        result.error_t.mean = Envelope::from_runs(result.runs_t.iter().map(Vec::as_slice), None).mean;
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsRow {
    pub method: String,
    /// `None` for the classic filter (never inflated).
    pub step: Option<usize>,
    pub lambda: Option<f64>,
    pub rms_static: Option<f64>,
    pub rms_ascending: Option<f64>,
    pub rms_alternating: Option<f64>,
}

impl RmsRow {
    pub fn get(&self, kind: CaseKind) -> Option<f64> {
        match kind {
            CaseKind::Static => self.rms_static,
            CaseKind::Ascending => self.rms_ascending,
            CaseKind::Alternating => self.rms_alternating,
        }
    }

    fn set(&mut self, kind: CaseKind, v: f64) {
        match kind {
            CaseKind::Static => self.rms_static = Some(v),
            CaseKind::Ascending => self.rms_ascending = Some(v),
            CaseKind::Alternating => self.rms_alternating = Some(v),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RmsTable {
    pub rows: Vec<RmsRow>,
}

impl RmsTable {
    pub fn classic(&self) -> Option<&RmsRow> {
        self.rows.iter().find(|r| r.step.is_none())
    }

    pub fn cell(&self, step: usize, lambda: f64) -> Option<&RmsRow> {
        self.rows.iter().find(|r| r.step == Some(step) && r.lambda == Some(lambda))
    }

    /// Writes `method,step,lambda,static,ascending,alternating`; the classic
    /// row has step `inf` and lambda `-`, missing cases are left empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["method", "step", "lambda", "static", "ascending", "alternating"])
            .map_err(crate::signal::csv_error)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.method.clone(),
                r.step.map_or("inf".to_string(), |s| s.to_string()),
                r.lambda.map_or("-".to_string(), |l| l.to_string()),
                opt(r.rms_static),
                opt(r.rms_ascending),
                opt(r.rms_alternating),
            ])
            .map_err(crate::signal::csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GridSpec {
    pub steps: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub cases: Vec<CaseKind>,
    pub n_init: usize,
    pub seed: u64,
    pub ensemble_size: usize,
    pub subset_fraction: f64,
    pub n_rev: usize,
    pub snr: f64,
}

impl GridSpec {
    pub fn full(n_init: usize, seed: u64) -> Self {
        Self {
            steps: GRID_STEPS.to_vec(),
            lambdas: GRID_LAMBDAS.to_vec(),
            cases: CaseKind::ALL.to_vec(),
            n_init,
            seed,
            ensemble_size: DEFAULT_ENSEMBLE_SIZE,
            subset_fraction: DEFAULT_SUBSET_FRACTION,
            n_rev: DEFAULT_REVOLUTIONS,
            snr: 15.0,
        }
    }

    pub fn methods(&self) -> Vec<Method> {
        let mut out = Vec::new();
        for &step in &self.steps {
            for &lambda in &self.lambdas {
                out.push(Method::EnkfStar { step, lambda });
            }
        }
        out.push(Method::Enkf);
        out
    }
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub table: RmsTable,
    /// Monte Carlo mean tangential error per `(row, case)`.
    pub mean_errors: Vec<(usize, CaseKind, Vec<f64>)>,
}

/// RMS of the mean tangential error for every inflation cell plus the
/// classic filter, using the same noise and initial ensembles throughout.
pub fn grid_search(spec: &GridSpec) -> Result<GridResult> {
    let methods = spec.methods();
    let mut table = RmsTable {
        rows: methods
            .iter()
            .map(|m| {
                let (step, lambda) = match *m {
                    Method::EnkfStar { step, lambda } => (Some(step), Some(lambda)),
                    _ => (None, None),
                };
                RmsRow {
                    method: m.name().to_string(),
                    step,
                    lambda,
                    rms_static: None,
                    rms_ascending: None,
                    rms_alternating: None,
                }
            })
            .collect(),
    };
    let initials = initial_ensembles(&CoefficientBounds::X5CRNI18_10, spec.n_init, spec.ensemble_size, spec.seed)?;
    let mut mean_errors = Vec::new();
    for &kind in &spec.cases {
        let mut bspec = BenchmarkSpec::reference(kind);
        bspec.n_rev = spec.n_rev;
        bspec.snr = spec.snr;
        let benchmark = Benchmark::generate(&bspec, derive_seed(spec.seed, Stream::Noise, 0))?;
        for (row, &method) in methods.iter().enumerate() {
            let runs = run_monte_carlo(&benchmark, &initials, method, spec.seed, spec.subset_fraction)?;
            let mean = Envelope::from_runs(runs.iter().map(|r| r.error_t.as_slice()), None).mean;
            table.rows[row].set(kind, rms(&mean));
            mean_errors.push((row, kind, mean));
        }
    }
    Ok(GridResult { table, mean_errors })
}

/// Qualitative orderings of the RMS table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderingReport {
    /// Classic filter has the lowest static RMS.
    pub classic_best_static: bool,
    /// Classic filter has the highest alternating RMS.
    pub classic_worst_alternating: bool,
    /// For every λ, alternating RMS increases with the inflation step.
    pub alternating_grows_with_step: bool,
    /// For every λ, static RMS decreases with the inflation step.
    pub static_shrinks_with_step: bool,
}

impl OrderingReport {
    /// `None` when the table lacks the static or alternating column.
    pub fn evaluate(table: &RmsTable, steps: &[usize], lambdas: &[f64]) -> Option<Self> {
        let classic = table.classic()?;
        let cs = classic.rms_static?;
        let ca = classic.rms_alternating?;
        let inflated: Vec<&RmsRow> = table.rows.iter().filter(|r| r.step.is_some()).collect();
        let mut steps = steps.to_vec();
        steps.sort_unstable();
        let series = |lambda: f64, kind: CaseKind| -> Option<Vec<f64>> {
            steps.iter().map(|&s| table.cell(s, lambda)?.get(kind)).collect()
        };
        let mut grows = true;
        let mut shrinks = true;
        for &l in lambdas {
            let alt = series(l, CaseKind::Alternating)?;
            let sta = series(l, CaseKind::Static)?;
            grows &= alt.windows(2).all(|w| w[0] < w[1]);
            shrinks &= sta.windows(2).all(|w| w[0] > w[1]);
        }
        Some(Self {
            classic_best_static: inflated.iter().all(|r| r.rms_static.is_some_and(|v| cs < v)),
            classic_worst_alternating: inflated.iter().all(|r| r.rms_alternating.is_some_and(|v| ca > v)),
            alternating_grows_with_step: grows,
            static_shrinks_with_step: shrinks,
        })
    }
}
