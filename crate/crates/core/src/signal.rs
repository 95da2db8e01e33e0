//! Simulated benchmark signals: coefficient trajectories, clean and noisy
//! force traces, and the ploughing filter that yields the corrected samples
//! used by every estimator.

use std::f64::consts::TAU;
use std::io::{Read, Write};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mill::{CoefficientSet, Cutter, EngagementSample};
use crate::rng::rng_from_seed;

/// Samples whose summed chip thickness falls below this value (mm) are
/// treated as ploughing and dropped.
pub const PLOUGHING_THRESHOLD: f64 = 0.01;

/// Revolutions that give roughly 1150 corrected samples with the reference
/// tool and process.
pub const DEFAULT_REVOLUTIONS: usize = 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseKind {
    Static,
    Ascending,
    Alternating,
}

impl CaseKind {
    pub const ALL: [CaseKind; 3] = [CaseKind::Static, CaseKind::Ascending, CaseKind::Alternating];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Static => "static",
            Self::Ascending => "ascending",
            Self::Alternating => "alternating",
        }
    }
}

impl std::fmt::Display for CaseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "static" | "sta" => Ok(Self::Static),
            "ascending" | "asc" => Ok(Self::Ascending),
            "alternating" | "alt" => Ok(Self::Alternating),
            other => Err(Error::InvalidConfig(format!("unknown case `{other}`"))),
        }
    }
}

/// How the true coefficients evolve over the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryCase {
    pub kind: CaseKind,
    pub relative_amplitude: f64,
    /// Full sine periods over the run; only used by the alternating case.
    pub periods: f64,
}

impl TrajectoryCase {
    pub fn new(kind: CaseKind) -> Self {
        Self {
            kind,
            relative_amplitude: 0.2,
            periods: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.relative_amplitude > 0.0 && self.relative_amplitude < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "relative amplitude must lie in (0, 1), got {}",
                self.relative_amplitude
            )));
        }
        if !(self.periods > 0.0) {
            return Err(Error::InvalidConfig(format!("periods must be positive, got {}", self.periods)));
        }
        Ok(())
    }

    /// Coefficients at normalized time `t` in [0, 1]. All four coefficients
    /// follow the same relative trajectory.
    pub fn coefficient_at(&self, base: &CoefficientSet, t: f64) -> CoefficientSet {
        let t = t.clamp(0.0, 1.0);
        match self.kind {
            CaseKind::Static => *base,
            CaseKind::Ascending => base.scaled(1.0 + self.relative_amplitude * t),
            CaseKind::Alternating => {
                base.scaled(1.0 + self.relative_amplitude * (TAU * self.periods * t).sin())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalSample {
    pub index: usize,
    pub spindle_angle: f64,
    pub h_sum: f64,
    pub ft_clean: f64,
    pub fr_clean: f64,
    pub ft_noisy: f64,
    pub fr_noisy: f64,
    pub true_coeffs: CoefficientSet,
    pub engagement: EngagementSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Ratio of signal RMS to noise standard deviation (linear, not dB).
    pub snr: f64,
    pub seed: u64,
}

/// Per-channel standard deviation of the added noise.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevel {
    pub tangential: f64,
    pub radial: f64,
}

/// Number of samples covering `n_rev` revolutions at the process sample rate.
pub fn sample_count(cutter: &Cutter, n_rev: usize) -> usize {
    let per_rev = cutter.process().samples_per_rev(cutter.tool());
    (n_rev as f64 * per_rev).round() as usize
}

/// Clean force signal over `n_rev` revolutions; noisy channels start out
/// equal to the clean ones.
pub fn simulate_run(
    cutter: &Cutter,
    case: &TrajectoryCase,
    base: &CoefficientSet,
    n_rev: usize,
) -> Result<Vec<SignalSample>> {
    if n_rev == 0 {
        return Err(Error::InvalidConfig("at least one revolution is required".into()));
    }
    case.validate()?;
    let process = cutter.process();
    let omega = TAU * process.spindle_speed(cutter.tool());
    let n = sample_count(cutter, n_rev).max(1);
    let last = (n - 1).max(1) as f64;
    Ok((0..n)
        .map(|index| {
            let spindle_angle = omega * index as f64 / process.sample_rate;
            let true_coeffs = case.coefficient_at(base, index as f64 / last);
            let (f, engagement) = cutter.force(&true_coeffs, spindle_angle);
            SignalSample {
                index,
                spindle_angle,
                h_sum: engagement.h_sum,
                ft_clean: f.tangential,
                fr_clean: f.radial,
                ft_noisy: f.tangential,
                fr_noisy: f.radial,
                true_coeffs,
                engagement,
            }
        })
        .collect())
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Noise level implied by `snr` for a clean series.
pub fn noise_level(series: &[SignalSample], snr: f64) -> NoiseLevel {
    NoiseLevel {
        tangential: rms(series.iter().map(|s| s.ft_clean)) / snr,
        radial: rms(series.iter().map(|s| s.fr_clean)) / snr,
    }
}

/// Adds i.i.d. Gaussian noise to each channel, overwriting the noisy columns.
pub fn add_noise(mut series: Vec<SignalSample>, spec: &NoiseSpec) -> Result<(Vec<SignalSample>, NoiseLevel)> {
    if series.is_empty() {
        return Err(Error::InvalidConfig("cannot add noise to an empty series".into()));
    }
    if !(spec.snr > 0.0) {
        return Err(Error::InvalidConfig(format!("snr must be positive, got {}", spec.snr)));
    }
    let level = noise_level(&series, spec.snr);
    let mut rng = rng_from_seed(spec.seed);
    for s in &mut series {
        let et: f64 = StandardNormal.sample(&mut rng);
        let er: f64 = StandardNormal.sample(&mut rng);
        s.ft_noisy = s.ft_clean + level.tangential * et;
        s.fr_noisy = s.fr_clean + level.radial * er;
    }
    Ok((series, level))
}

/// Keeps samples with `h_sum >= h_th` in order and renumbers them from 0.
pub fn ploughing_filter(series: &[SignalSample], h_th: f64) -> Vec<SignalSample> {
    series
        .iter()
        .filter(|s| s.h_sum >= h_th)
        .enumerate()
        .map(|(i, s)| SignalSample { index: i, ..s.clone() })
        .collect()
}

/// One row of the signal CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalRecord {
    pub index: usize,
    pub angle: f64,
    pub h_sum: f64,
    #[serde(rename = "Ft_clean")]
    pub ft_clean: f64,
    #[serde(rename = "Fr_clean")]
    pub fr_clean: f64,
    #[serde(rename = "Ft_noisy")]
    pub ft_noisy: f64,
    #[serde(rename = "Fr_noisy")]
    pub fr_noisy: f64,
    pub kt: f64,
    pub kr: f64,
    pub mt: f64,
    pub mr: f64,
}

impl From<&SignalSample> for SignalRecord {
    fn from(s: &SignalSample) -> Self {
        Self {
            index: s.index,
            angle: s.spindle_angle,
            h_sum: s.h_sum,
            ft_clean: s.ft_clean,
            fr_clean: s.fr_clean,
            ft_noisy: s.ft_noisy,
            fr_noisy: s.fr_noisy,
            kt: s.true_coeffs.kt,
            kr: s.true_coeffs.kr,
            mt: s.true_coeffs.mt,
            mr: s.true_coeffs.mr,
        }
    }
}

impl SignalRecord {
    pub fn true_coeffs(&self) -> CoefficientSet {
        CoefficientSet::new(self.kt, self.mt, self.kr, self.mr)
    }

    /// Rebuilds the full sample by recomputing the chip geometry at the
    /// recorded angle.
    pub fn into_sample(self, cutter: &Cutter) -> SignalSample {
        let engagement = cutter.engagement(self.angle);
        SignalSample {
            index: self.index,
            spindle_angle: self.angle,
            h_sum: self.h_sum,
            ft_clean: self.ft_clean,
            fr_clean: self.fr_clean,
            ft_noisy: self.ft_noisy,
            fr_noisy: self.fr_noisy,
            true_coeffs: self.true_coeffs(),
            engagement,
        }
    }
}

pub fn write_csv<W: Write>(writer: W, series: &[SignalSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for s in series {
        w.serialize(SignalRecord::from(s)).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<SignalRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize().map(|rec| rec.map_err(csv_error)).collect()
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Csv {
            line,
            reason: format!("{other:?}"),
        },
    }
}
