//! Ensemble Kalman filter over the augmented milling state
//! `[F_t, F_r, k_t, k_r, m_t, m_r]`.
//!
//! Members are the columns of an `n × J` matrix. Parameters follow identity
//! dynamics; the forecast only recomputes the force entries from each
//! member's coefficients and the current chip geometry. The analysis uses
//! perturbed observations and one gain shared by all members. Empirical
//! covariances are normalized by `1/J`.
//!
//! Repeated ensemble inflation (EnKF*) periodically replaces a random
//! subset of members with Gaussian draws around the subset mean with
//! covariance `P0 / λ`, where `P0` is the covariance of the initial ensemble.

use nalgebra::{Cholesky, DMatrix, DVector, Matrix6, SymmetricEigen, Vector6};
use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::mill::{CoefficientBounds, CoefficientSet, EngagementSample};
use crate::rng::{rng_from_seed, Rng};
use crate::signal::{NoiseLevel, SignalSample};

pub const STATE_DIM: usize = 6;
pub const FT: usize = 0;
pub const FR: usize = 1;
pub const KT: usize = 2;
pub const KR: usize = 3;
pub const MT: usize = 4;
pub const MR: usize = 5;

pub const DEFAULT_ENSEMBLE_SIZE: usize = 100;
pub const DEFAULT_INFLATION_STEP: usize = 50;
pub const DEFAULT_INFLATION_LAMBDA: f64 = 10.0;
pub const DEFAULT_SUBSET_FRACTION: f64 = 0.1;

/// Diagonal jitter added once when the innovation covariance is singular.
pub const INNOVATION_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: DMatrix<f64>,
}

impl Ensemble {
    pub fn new(members: DMatrix<f64>) -> Result<Self> {
        if members.ncols() < 2 {
            return Err(Error::InvalidConfig(format!(
                "ensemble needs at least 2 members, got {}",
                members.ncols()
            )));
        }
        if members.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("ensemble members must be finite".into()));
        }
        Ok(Self { members })
    }

    pub fn size(&self) -> usize {
        self.members.ncols()
    }

    pub fn dim(&self) -> usize {
        self.members.nrows()
    }

    pub fn members(&self) -> &DMatrix<f64> {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.members
    }

    pub fn mean(&self) -> DVector<f64> {
        column_mean(&self.members)
    }

    /// Empirical covariance with `1/J` normalization.
    pub fn covariance(&self) -> DMatrix<f64> {
        let a = anomalies(&self.members);
        &a * a.transpose() / self.size() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.members.iter().all(|v| v.is_finite())
    }

    /// Mean coefficients of a milling ensemble.
    pub fn coefficient_mean(&self) -> CoefficientSet {
        let m = self.mean();
        CoefficientSet::new(m[KT], m[MT], m[KR], m[MR])
    }
}

fn column_mean(x: &DMatrix<f64>) -> DVector<f64> {
    x.column_sum() / x.ncols() as f64
}

fn anomalies(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = column_mean(x);
    let mut a = x.clone();
    for mut col in a.column_iter_mut() {
        col -= &mean;
    }
    a
}

/// Square-root factor `L` with `L Lᵀ = p` for a symmetric positive
/// semidefinite matrix. Rows and columns with zero diagonal stay exactly
/// zero in `L`.
pub fn psd_factor(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = p.nrows();
    if p.ncols() != n {
        return Err(Error::Dimension(format!("expected a square matrix, got {}×{}", n, p.ncols())));
    }
    let active: Vec<usize> = (0..n).filter(|&i| p[(i, i)] > 0.0).collect();
    let mut out = DMatrix::zeros(n, n);
    if active.is_empty() {
        return Ok(out);
    }
    let sub = DMatrix::from_fn(active.len(), active.len(), |r, c| p[(active[r], active[c])]);
    let factor = match Cholesky::new(sub.clone()) {
        Some(ch) => ch.l(),
        None => {
            let eig = SymmetricEigen::new(sub);
            let min = eig.eigenvalues.min();
            if min < -1e-9 * eig.eigenvalues.amax() {
                return Err(Error::InvalidConfig(format!(
                    "matrix is not positive semidefinite (eigenvalue {min:e})"
                )));
            }
            let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
            &eig.eigenvectors * DMatrix::from_diagonal(&sqrt) * eig.eigenvectors.transpose()
        }
    };
    for (r, &i) in active.iter().enumerate() {
        for (c, &j) in active.iter().enumerate() {
            out[(i, j)] = factor[(r, c)];
        }
    }
    Ok(out)
}

/// Initial ensemble with coefficients drawn uniformly inside `bounds` and
/// zero forces, together with its empirical covariance `P0`.
pub fn init_ensemble(bounds: &CoefficientBounds, size: usize, seed: u64) -> Result<(Ensemble, DMatrix<f64>)> {
    if size < 2 {
        return Err(Error::InvalidConfig(format!("ensemble needs at least 2 members, got {size}")));
    }
    let (lo, hi) = (bounds.lower, bounds.upper);
    for (l, u) in [(lo.kt, hi.kt), (lo.kr, hi.kr), (lo.mt, hi.mt), (lo.mr, hi.mr)] {
        if !(l < u) {
            return Err(Error::InvalidConfig(format!("lower bound {l} is not below upper bound {u}")));
        }
    }
    let mut rng = rng_from_seed(seed);
    let mut members = DMatrix::zeros(STATE_DIM, size);
    for mut col in members.column_iter_mut() {
        col[KT] = rng.random_range(lo.kt..hi.kt);
        col[KR] = rng.random_range(lo.kr..hi.kr);
        col[MT] = rng.random_range(lo.mt..hi.mt);
        col[MR] = rng.random_range(lo.mr..hi.mr);
    }
    let ens = Ensemble::new(members)?;
    let p0 = ens.covariance();
    Ok((ens, p0))
}

/// Componentwise bounds; infinite entries are unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxConstraints {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxConstraints {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension("bound vectors differ in length".into()));
        }
        for (l, u) in lower.iter().zip(upper.iter()) {
            if !(l < u) {
                return Err(Error::InvalidConfig(format!("lower bound {l} is not below upper bound {u}")));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Bounds on `[F_t, F_r, k_t, k_r, m_t, m_r]` for the milling state.
    pub fn milling() -> Self {
        let inf = f64::INFINITY;
        Self {
            lower: DVector::from_vec(vec![-inf, -inf, 500.0, 100.0, 0.1, 0.1]),
            upper: DVector::from_vec(vec![inf, inf, 3500.0, 2100.0, 1.0, 1.0]),
        }
    }

    pub fn unbounded(dim: usize) -> Self {
        Self {
            lower: DVector::from_element(dim, f64::NEG_INFINITY),
            upper: DVector::from_element(dim, f64::INFINITY),
        }
    }
}

/// Clamps every member onto the box. Returns the number of clamped entries.
pub fn project_box(ens: &mut Ensemble, bc: &BoxConstraints) -> usize {
    let rows: Vec<usize> = (0..bc.lower.len())
        .filter(|&i| bc.lower[i].is_finite() || bc.upper[i].is_finite())
        .collect();
    let mut clamped = 0;
    for mut col in ens.members.column_iter_mut() {
        for &i in &rows {
            let v = col[i];
            let c = v.clamp(bc.lower[i], bc.upper[i]);
            if c != v {
                clamped += 1;
                col[i] = c;
            }
        }
    }
    clamped
}

/// Linear observation operator and the covariance of the observation
/// perturbations.
#[derive(Debug, Clone)]
pub struct MeasurementModel {
    h: DMatrix<f64>,
    gamma: DMatrix<f64>,
    gamma_sqrt: DMatrix<f64>,
}

impl MeasurementModel {
    pub fn new(h: DMatrix<f64>, gamma: DMatrix<f64>) -> Result<Self> {
        if gamma.nrows() != h.nrows() || gamma.ncols() != h.nrows() {
            return Err(Error::Dimension(format!(
                "noise covariance is {}×{} but H has {} rows",
                gamma.nrows(),
                gamma.ncols(),
                h.nrows()
            )));
        }
        if (&gamma - gamma.transpose()).amax() > 1e-12 * gamma.amax().max(1.0) {
            return Err(Error::InvalidConfig("noise covariance must be symmetric".into()));
        }
        let gamma_sqrt = psd_factor(&gamma)?;
        Ok(Self { h, gamma, gamma_sqrt })
    }

    /// Selects the two force entries; `Γ = diag(σ_t², σ_r²)`.
    pub fn milling(noise: &NoiseLevel) -> Self {
        let mut h = DMatrix::zeros(2, STATE_DIM);
        h[(0, FT)] = 1.0;
        h[(1, FR)] = 1.0;
        let gamma = DMatrix::from_diagonal(&DVector::from_vec(vec![
            noise.tangential * noise.tangential,
            noise.radial * noise.radial,
        ]));
        Self::new(h, gamma).expect("diagonal noise covariance is valid")
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }
}

/// Recomputes the force entries of every member from its coefficients.
/// Coefficients are left untouched.
pub fn forecast(ens: &mut Ensemble, eng: &EngagementSample) {
    let ln_h: Vec<f64> = eng.engaged().map(f64::ln).collect();
    let b = eng.b_disk;
    for mut col in ens.members.column_iter_mut() {
        let (mut ft, mut fr) = (0.0, 0.0);
        let (et, er) = (1.0 - col[MT], 1.0 - col[MR]);
        for &l in &ln_h {
            ft += (et * l).exp();
            fr += (er * l).exp();
        }
        col[FT] = col[KT] * b * ft;
        col[FR] = col[KR] * b * fr;
    }
}

/// `J` perturbed copies of `y` and the empirical perturbation covariance
/// `(1/J) Σ ε εᵀ`.
pub fn perturb_measurements(
    y: &DVector<f64>,
    model: &MeasurementModel,
    size: usize,
    rng: &mut Rng,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let m = y.len();
    if m != model.gamma.nrows() {
        return Err(Error::Dimension(format!("measurement has {m} entries, model expects {}", model.gamma.nrows())));
    }
    if size < 2 {
        return Err(Error::InvalidConfig(format!("ensemble needs at least 2 members, got {size}")));
    }
    let xi = DMatrix::from_fn(m, size, |_, _| StandardNormal.sample(rng));
    let eps = &model.gamma_sqrt * xi;
    let r_bar = &eps * eps.transpose() / size as f64;
    let mut z = eps;
    for mut col in z.column_iter_mut() {
        col += y;
    }
    Ok((z, r_bar))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AnalysisInfo {
    /// The innovation covariance needed diagonal jitter.
    pub jittered: bool,
}

fn factor_innovation(s: DMatrix<f64>) -> Result<(Cholesky<f64, nalgebra::Dyn>, bool)> {
    if let Some(ch) = Cholesky::new(s.clone()) {
        return Ok((ch, false));
    }
    let n = s.nrows();
    let jittered = s + DMatrix::identity(n, n) * INNOVATION_JITTER;
    Cholesky::new(jittered)
        .map(|ch| (ch, true))
        .ok_or(Error::SingularInnovation)
}

/// Kalman analysis `x_j += G (z_j - H x_j)` with
/// `G = P Hᵀ (H P Hᵀ + R̄)⁻¹` shared by all members.
pub fn analysis_update(
    ens: &mut Ensemble,
    z: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r_bar: &DMatrix<f64>,
) -> Result<AnalysisInfo> {
    let j = ens.size();
    if h.ncols() != ens.dim() || z.nrows() != h.nrows() || z.ncols() != j {
        return Err(Error::Dimension(format!(
            "H is {}×{}, Z is {}×{}, ensemble is {}×{}",
            h.nrows(),
            h.ncols(),
            z.nrows(),
            z.ncols(),
            ens.dim(),
            j
        )));
    }
    let hx = h * &ens.members;
    let ax = anomalies(&ens.members);
    let ay = anomalies(&hx);
    let jf = j as f64;
    let pht = &ax * ay.transpose() / jf;
    let s = &ay * ay.transpose() / jf + r_bar;
    let (ch, jittered) = factor_innovation(s)?;
    let weights = ch.solve(&(z - hx));
    ens.members += pht * weights;
    Ok(AnalysisInfo { jittered })
}

/// Inverse-problem form of the analysis,
/// `X += Cxy (Cyy + Γ)⁻¹ (Z - Ŷ)`, where `Cxy` is the state/prediction
/// cross-covariance and `Cyy` the prediction covariance of the ensemble.
pub fn analysis_update_ip(
    ens: &mut Ensemble,
    predictions: &DMatrix<f64>,
    z: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
) -> Result<AnalysisInfo> {
    let (n, j) = (ens.dim(), ens.size());
    let m = predictions.nrows();
    if predictions.ncols() != j || z.shape() != predictions.shape() || gamma.shape() != (m, m) {
        return Err(Error::Dimension("predictions, measurements and Γ disagree in shape".into()));
    }
    let jf = j as f64;
    let x_mean = ens.mean();
    let y_mean = column_mean(predictions);
    let mut cxy = DMatrix::zeros(n, m);
    let mut cyy = DMatrix::zeros(m, m);
    for k in 0..j {
        let dx = ens.members.column(k) - &x_mean;
        let dy = predictions.column(k) - &y_mean;
        cxy += &dx * dy.transpose();
        cyy += &dy * dy.transpose();
    }
    cxy /= jf;
    cyy /= jf;
    let (ch, jittered) = factor_innovation(cyy + gamma)?;
    for k in 0..j {
        let w = ch.solve(&(z.column(k) - predictions.column(k)));
        let delta = &cxy * w;
        let mut col = ens.members.column_mut(k);
        col += delta;
    }
    Ok(AnalysisInfo { jittered })
}

/// Repeated ensemble inflation settings.
#[derive(Debug, Clone)]
pub struct InflationPolicy {
    pub step: usize,
    pub lambda: f64,
    pub subset_fraction: f64,
    p0: DMatrix<f64>,
    draw_factor: DMatrix<f64>,
}

impl InflationPolicy {
    pub fn new(step: usize, lambda: f64, subset_fraction: f64, p0: DMatrix<f64>) -> Result<Self> {
        if step == 0 {
            return Err(Error::InvalidConfig("inflation step must be at least 1".into()));
        }
        if !(lambda >= 1.0) {
            return Err(Error::InvalidConfig(format!("inflation factor must be at least 1, got {lambda}")));
        }
        if !(subset_fraction > 0.0 && subset_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!("subset fraction must lie in (0, 1], got {subset_fraction}")));
        }
        let draw_factor = if lambda.is_infinite() {
            DMatrix::zeros(p0.nrows(), p0.ncols())
        } else {
            psd_factor(&(&p0 / lambda))?
        };
        Ok(Self {
            step,
            lambda,
            subset_fraction,
            p0,
            draw_factor,
        })
    }

    pub fn p0(&self) -> &DMatrix<f64> {
        &self.p0
    }

    pub fn subset_size(&self, ensemble_size: usize) -> usize {
        (self.subset_fraction * ensemble_size as f64).round() as usize
    }
}

/// Replaces a random subset of members with draws from
/// `N(subset mean, P0 / λ)`, then projects onto `constraints`.
/// Returns the replaced member indices.
pub fn inflate(
    ens: &mut Ensemble,
    policy: &InflationPolicy,
    constraints: Option<&BoxConstraints>,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    let (n, j) = (ens.dim(), ens.size());
    if policy.p0.nrows() != n {
        return Err(Error::Dimension(format!("P0 is {}×{}, ensemble dimension is {n}", policy.p0.nrows(), policy.p0.ncols())));
    }
    let m = policy.subset_size(j);
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut chosen = index::sample(rng, j, m).into_vec();
    chosen.sort_unstable();
    let mut mean = DVector::zeros(n);
    for &k in &chosen {
        mean += ens.members.column(k);
    }
    mean /= m as f64;
    for &k in &chosen {
        let xi = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        let draw = &mean + &policy.draw_factor * xi;
        ens.members.set_column(k, &draw);
    }
    if let Some(bc) = constraints {
        project_box(ens, bc);
    }
    Ok(chosen)
}

/// Inflation schedule as configured before `P0` is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InflationSchedule {
    pub step: usize,
    pub lambda: f64,
    pub subset_fraction: f64,
}

impl Default for InflationSchedule {
    fn default() -> Self {
        Self {
            step: DEFAULT_INFLATION_STEP,
            lambda: DEFAULT_INFLATION_LAMBDA,
            subset_fraction: DEFAULT_SUBSET_FRACTION,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnkfConfig {
    pub seed: u64,
    pub constraints: Option<BoxConstraints>,
    pub measurement: MeasurementModel,
    /// `None` runs the classic filter.
    pub inflation: Option<InflationSchedule>,
    pub record_covariance: bool,
}

impl EnkfConfig {
    pub fn classic(noise: &NoiseLevel, seed: u64) -> Self {
        Self {
            seed,
            constraints: Some(BoxConstraints::milling()),
            measurement: MeasurementModel::milling(noise),
            inflation: None,
            record_covariance: false,
        }
    }

    pub fn inflated(noise: &NoiseLevel, seed: u64, schedule: InflationSchedule) -> Self {
        Self {
            inflation: Some(schedule),
            ..Self::classic(noise, seed)
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EnkfTrace {
    /// Ensemble mean after each corrected sample.
    pub means: Vec<Vector6<f64>>,
    /// Ensemble covariance after each corrected sample, when recorded.
    pub covariances: Vec<Matrix6<f64>>,
    /// Sample indices after which the ensemble was inflated.
    pub inflations: Vec<usize>,
    /// Sample indices whose analysis needed jitter.
    pub jittered: Vec<usize>,
    /// First sample at which the ensemble became non-finite, with the
    /// reason. Later means repeat the last finite mean.
    pub divergence: Option<(usize, String)>,
}

impl EnkfTrace {
    pub fn coefficients(&self, k: usize) -> CoefficientSet {
        let m = &self.means[k];
        CoefficientSet::new(m[KT], m[MT], m[KR], m[MR])
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }
}

fn to_vector6(v: &DVector<f64>) -> Vector6<f64> {
    Vector6::from_iterator(v.iter().copied())
}

fn to_matrix6(m: &DMatrix<f64>) -> Matrix6<f64> {
    Matrix6::from_iterator(m.iter().copied())
}

/// Runs the filter over corrected samples starting from `initial`.
///
/// Per sample: forecast, perturb the noisy force pair, analysis, box
/// projection; every `step` samples the ensemble is inflated.
pub fn enkf_run(samples: &[SignalSample], initial: &Ensemble, config: &EnkfConfig) -> Result<EnkfTrace> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("no corrected samples to identify from".into()));
    }
    if initial.dim() != STATE_DIM {
        return Err(Error::Dimension(format!("milling ensemble must have dimension {STATE_DIM}, got {}", initial.dim())));
    }
    let policy = config
        .inflation
        .map(|s| InflationPolicy::new(s.step, s.lambda, s.subset_fraction, initial.covariance()))
        .transpose()?;

    let mut rng = rng_from_seed(config.seed);
    let mut ens = initial.clone();
    let mut trace = EnkfTrace {
        means: Vec::with_capacity(samples.len()),
        ..Default::default()
    };
    let j = ens.size();
    let mut y = DVector::zeros(2);

    for (k, s) in samples.iter().enumerate() {
        if trace.divergence.is_none() {
            forecast(&mut ens, &s.engagement);
            y[0] = s.ft_noisy;
            y[1] = s.fr_noisy;
            let (z, r_bar) = perturb_measurements(&y, &config.measurement, j, &mut rng)?;
            match analysis_update(&mut ens, &z, config.measurement.h(), &r_bar) {
                Ok(info) => {
                    if info.jittered {
                        log::debug!("innovation covariance jittered at sample {k}");
                        trace.jittered.push(k);
                    }
                }
                Err(e) => trace.divergence = Some((k, e.to_string())),
            }
            if trace.divergence.is_none() {
                if let Some(bc) = &config.constraints {
                    project_box(&mut ens, bc);
                }
                if let Some(p) = &policy {
                    if (k + 1) % p.step == 0 {
                        inflate(&mut ens, p, config.constraints.as_ref(), &mut rng)?;
                        trace.inflations.push(k);
                    }
                }
                if !ens.is_finite() {
                    trace.divergence = Some((k, "non-finite ensemble member".into()));
                }
            }
        }
        if trace.divergence.is_some() {
            let last = trace.means.last().copied().unwrap_or_else(|| to_vector6(&initial.mean()));
            trace.means.push(last);
            if config.record_covariance {
                let c = trace.covariances.last().copied().unwrap_or_else(Matrix6::zeros);
                trace.covariances.push(c);
            }
            continue;
        }
        trace.means.push(to_vector6(&ens.mean()));
        if config.record_covariance {
            trace.covariances.push(to_matrix6(&ens.covariance()));
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mill::Cutter;
    use crate::mill::{ProcessSpec, ToolSpec};
    use approx::assert_relative_eq;

    fn ens_from(cols: &[[f64; 6]]) -> Ensemble {
        Ensemble::new(DMatrix::from_fn(6, cols.len(), |r, c| cols[c][r])).unwrap()
    }

    #[test]
    fn ensemble_rejects_too_small_or_nan() {
        assert!(Ensemble::new(DMatrix::zeros(6, 1)).is_err());
        let mut m = DMatrix::zeros(6, 3);
        m[(2, 1)] = f64::NAN;
        assert!(Ensemble::new(m).is_err());
    }

    #[test]
    fn init_within_bounds_and_reproducible() {
        let b = CoefficientBounds::X5CRNI18_10;
        let (e1, p0) = init_ensemble(&b, 500, 4).unwrap();
        for col in e1.members().column_iter() {
            assert!((800.0..=1800.0).contains(&col[KT]));
            assert!((0.05..=0.6).contains(&col[MT]));
            assert!((600.0..=1200.0).contains(&col[KR]));
            assert!((0.01..=0.3).contains(&col[MR]));
            assert_eq!(col[FT], 0.0);
            assert_eq!(col[FR], 0.0);
        }
        assert_eq!(p0[(FT, FT)], 0.0);
        assert_eq!(p0, e1.covariance());
        let (a, _) = init_ensemble(&b, 2, 11).unwrap();
        let (c, _) = init_ensemble(&b, 2, 11).unwrap();
        assert_eq!(a, c);
        assert!(init_ensemble(&b, 1, 0).is_err());
    }

    #[test]
    fn forecast_examples() {
        let mut e = ens_from(&[[5.0, 5.0, 1700.0, 350.0, 0.18, 0.55], [1.0, 2.0, 900.0, 700.0, 0.3, 0.2]]);
        let before = e.clone();
        let disengaged = EngagementSample {
            spindle_angle: 0.0,
            per_disk_h: vec![0.0; 4],
            h_sum: 0.0,
            b_disk: 0.5,
        };
        forecast(&mut e, &disengaged);
        for k in 0..2 {
            assert_eq!(e.members()[(FT, k)], 0.0);
            assert_eq!(e.members()[(FR, k)], 0.0);
            for i in KT..=MR {
                assert_eq!(e.members()[(i, k)], before.members()[(i, k)]);
            }
        }

        let eng = EngagementSample {
            spindle_angle: 0.0,
            per_disk_h: vec![0.07],
            h_sum: 0.07,
            b_disk: 0.3,
        };
        forecast(&mut e, &eng);
        let f = crate::mill::kienzle_force(&CoefficientSet::new(1700.0, 0.18, 350.0, 0.55), 0.3, 0.07).unwrap();
        assert_relative_eq!(e.members()[(FT, 0)], f.tangential, max_relative = 1e-12);
        assert_relative_eq!(e.members()[(FR, 0)], f.radial, max_relative = 1e-12);
    }

    #[test]
    fn identical_members_stay_identical() {
        let cutter = Cutter::new(&ToolSpec::reference(), &ProcessSpec::reference()).unwrap();
        let eng = cutter.engagement(0.6);
        let col = [0.0, 0.0, 1500.0, 800.0, 0.2, 0.3];
        let mut e = ens_from(&[col, col, col]);
        forecast(&mut e, &eng);
        assert!(e.covariance().amax() < 1e-20);
        let m = e.members();
        assert!((0..6).all(|i| m[(i, 0)] == m[(i, 1)] && m[(i, 1)] == m[(i, 2)]));
    }

    #[test]
    fn zero_gamma_gives_exact_copies() {
        let model = MeasurementModel::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 2)).unwrap();
        let y = DVector::from_vec(vec![3.0, -1.0]);
        let (z, r) = perturb_measurements(&y, &model, 5, &mut rng_from_seed(1)).unwrap();
        for col in z.column_iter() {
            assert_eq!(col, y);
        }
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_spread_leaves_ensemble_unchanged() {
        let col = [10.0, 20.0, 1500.0, 800.0, 0.2, 0.3];
        let mut e = ens_from(&[col, col, col, col]);
        let before = e.clone();
        let model = MeasurementModel::milling(&NoiseLevel { tangential: 2.0, radial: 3.0 });
        let y = DVector::from_vec(vec![12.0, 18.0]);
        let (z, r) = perturb_measurements(&y, &model, 4, &mut rng_from_seed(2)).unwrap();
        analysis_update(&mut e, &z, model.h(), &r).unwrap();
        assert_eq!(e, before);

        let mut e2 = before.clone();
        analysis_update_ip(&mut e2, &(model.h() * before.members()), &z, model.gamma()).unwrap();
        assert_eq!(e2, before);
    }

    #[test]
    fn zero_noise_moves_observed_entries_onto_measurements() {
        // State [y1, y2, θ1, θ2, θ3] with H selecting the first two entries.
        let mut rng = rng_from_seed(5);
        let members = DMatrix::from_fn(5, 50, |_, _| StandardNormal.sample(&mut rng));
        let mut e = Ensemble::new(members).unwrap();
        let h = DMatrix::from_fn(2, 5, |r, c| if r == c { 1.0 } else { 0.0 });
        let z = DMatrix::from_fn(2, 50, |r, c| 0.3 * r as f64 - 0.01 * c as f64);
        analysis_update(&mut e, &z, &h, &DMatrix::zeros(2, 2)).unwrap();
        let hx = &h * e.members();
        assert!((hx - z).amax() < 1e-9);
    }

    #[test]
    fn scalar_update_matches_closed_form_kalman() {
        // One-dimensional state observed directly: x_j += P/(P+R) (z_j - x_j).
        let xs = [1.0, 2.5, -0.5, 4.0, 3.0];
        let zs = [2.0, 2.2, 1.9, 2.4, 2.1];
        let j = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / j;
        let p = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / j;
        let r = 0.7;
        let k = p / (p + r);
        let expected_mean = xs.iter().zip(&zs).map(|(x, z)| x + k * (z - x)).sum::<f64>() / j;

        let mut e = Ensemble::new(DMatrix::from_row_slice(1, 5, &xs)).unwrap();
        let z = DMatrix::from_row_slice(1, 5, &zs);
        analysis_update(&mut e, &z, &DMatrix::identity(1, 1), &DMatrix::from_element(1, 1, r)).unwrap();
        assert_relative_eq!(e.mean()[0], expected_mean, epsilon = 1e-12);
    }

    #[test]
    fn singular_innovation_is_jittered() {
        let col = [10.0, 20.0, 1500.0, 800.0, 0.2, 0.3];
        let mut e = ens_from(&[col, col]);
        let model = MeasurementModel::new(
            DMatrix::from_fn(2, 6, |r, c| if r == c { 1.0 } else { 0.0 }),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let z = DMatrix::from_element(2, 2, 1.0);
        let info = analysis_update(&mut e, &z, model.h(), &DMatrix::zeros(2, 2)).unwrap();
        assert!(info.jittered);
    }

    #[test]
    fn huge_gamma_means_no_update() {
        let mut rng = rng_from_seed(8);
        let members = DMatrix::from_fn(3, 6, |_, _| StandardNormal.sample(&mut rng));
        let mut e = Ensemble::new(members).unwrap();
        let before = e.clone();
        let preds = DMatrix::from_fn(1, 6, |_, c| e.members()[(0, c)] * 2.0);
        let z = DMatrix::from_element(1, 6, 5.0);
        analysis_update_ip(&mut e, &preds, &z, &DMatrix::from_element(1, 1, 1e30)).unwrap();
        assert!((e.members() - before.members()).amax() < 1e-25);
    }

    #[test]
    fn project_box_examples() {
        let bc = BoxConstraints::milling();
        let mut e = ens_from(&[
            [1e6, -1e6, 4000.0, 800.0, 0.05, 0.3],
            [0.0, 0.0, 1500.0, 800.0, 0.2, 0.3],
        ]);
        let inside = e.members().column(1).clone_owned();
        assert_eq!(project_box(&mut e, &bc), 2);
        assert_eq!(e.members()[(KT, 0)], 3500.0);
        assert_eq!(e.members()[(MT, 0)], 0.1);
        assert_eq!(e.members()[(FT, 0)], 1e6);
        assert_eq!(e.members()[(FR, 0)], -1e6);
        assert_eq!(e.members().column(1), inside);
    }

    #[test]
    fn subset_inflation_replaces_ten_percent() {
        let (mut e, p0) = init_ensemble(&CoefficientBounds::X5CRNI18_10, 100, 3).unwrap();
        let before = e.clone();
        let policy = InflationPolicy::new(50, 10.0, 0.1, p0).unwrap();
        let replaced = inflate(&mut e, &policy, None, &mut rng_from_seed(9)).unwrap();
        assert_eq!(replaced.len(), 10);
        let changed = (0..100).filter(|&k| e.members().column(k) != before.members().column(k)).count();
        assert_eq!(changed, 10);
    }

    #[test]
    fn infinite_lambda_collapses_onto_mean() {
        let (mut e, p0) = init_ensemble(&CoefficientBounds::X5CRNI18_10, 40, 3).unwrap();
        let mean = e.mean();
        let policy = InflationPolicy::new(1, f64::INFINITY, 1.0, p0).unwrap();
        inflate(&mut e, &policy, None, &mut rng_from_seed(1)).unwrap();
        assert!((e.mean() - mean).amax() < 1e-10);
        assert!(e.covariance().amax() < 1e-20);
    }

    #[test]
    fn inflation_policy_validation() {
        let p0 = DMatrix::identity(6, 6);
        assert!(InflationPolicy::new(0, 10.0, 0.1, p0.clone()).is_err());
        assert!(InflationPolicy::new(50, 0.5, 0.1, p0.clone()).is_err());
        assert!(InflationPolicy::new(50, 10.0, 0.0, p0.clone()).is_err());
        assert!(InflationPolicy::new(50, 10.0, 1.5, p0).is_err());
    }

    #[test]
    fn psd_factor_keeps_zero_rows() {
        let mut p = DMatrix::zeros(3, 3);
        p[(1, 1)] = 4.0;
        p[(2, 2)] = 1.0;
        p[(1, 2)] = 1.0;
        p[(2, 1)] = 1.0;
        let l = psd_factor(&p).unwrap();
        assert!(l.row(0).iter().all(|&v| v == 0.0));
        assert!((&l * l.transpose() - &p).amax() < 1e-12);

        let mut singular = DMatrix::from_element(2, 2, 1.0);
        let l = psd_factor(&singular).unwrap();
        assert!((&l * l.transpose() - &singular).amax() < 1e-12);
        singular[(0, 1)] = 2.0;
        singular[(1, 0)] = 2.0;
        assert!(psd_factor(&singular).is_err());
    }
}

#[cfg(test)]
mod properties {
    use super::*;
    use crate::mill::{Cutter, ProcessSpec, ToolSpec};
    use crate::signal::{add_noise, ploughing_filter, simulate_run, CaseKind, NoiseSpec, TrajectoryCase};
    use proptest::prelude::*;

    fn members(n: usize, j: usize) -> impl Strategy<Value = DMatrix<f64>> {
        prop::collection::vec(-5000.0..5000.0f64, n * j).prop_map(move |v| DMatrix::from_vec(n, j, v))
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_non_expansive(a in members(6, 4), b in members(6, 4)) {
            let bc = BoxConstraints::milling();
            let (mut ea, mut eb) = (Ensemble::new(a.clone()).unwrap(), Ensemble::new(b.clone()).unwrap());
            project_box(&mut ea, &bc);
            project_box(&mut eb, &bc);
            let once = ea.clone();
            prop_assert_eq!(project_box(&mut ea, &bc), 0);
            prop_assert_eq!(&ea, &once);
            for k in 0..4 {
                let before = (a.column(k) - b.column(k)).norm();
                let after = (ea.members().column(k) - eb.members().column(k)).norm();
                prop_assert!(after <= before + 1e-9);
            }
        }

        #[test]
        fn inflation_keeps_untouched_members(seed in 0u64..1000, frac in 0.05..1.0f64) {
            let (ens, p0) = init_ensemble(&CoefficientBounds::X5CRNI18_10, 40, seed).unwrap();
            let policy = InflationPolicy::new(1, 5.0, frac, p0).unwrap();
            let mut out = ens.clone();
            let chosen = inflate(&mut out, &policy, Some(&BoxConstraints::milling()), &mut rng_from_seed(seed)).unwrap();
            prop_assert_eq!(chosen.len(), policy.subset_size(40));
            // Untouched members only see the projection.
            let mut reference = ens.clone();
            project_box(&mut reference, &BoxConstraints::milling());
            for k in (0..40).filter(|k| !chosen.contains(k)) {
                prop_assert_eq!(out.members().column(k), reference.members().column(k));
            }
        }
    }

    fn stats(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        (mean, v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
    }

    #[test]
    fn uniform_initial_variance() {
        let (ens, p0) = init_ensemble(&CoefficientBounds::X5CRNI18_10, 100_000, 17).unwrap();
        assert_eq!(ens.size(), 100_000);
        let target = 1000.0f64.powi(2) / 12.0;
        assert!((p0[(KT, KT)] / target - 1.0).abs() < 0.02);
        let kt: Vec<f64> = ens.members().row(KT).iter().copied().collect();
        let (mean, _) = stats(&kt);
        assert!((mean - 1300.0).abs() < 5.0);
    }

    #[test]
    fn perturbations_match_gamma() {
        let gamma = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let model = MeasurementModel::new(DMatrix::identity(2, 2), gamma.clone()).unwrap();
        let y = DVector::from_vec(vec![10.0, -3.0]);
        let j = 100_000;
        let (z, r_bar) = perturb_measurements(&y, &model, j, &mut rng_from_seed(5)).unwrap();
        let zm = z.column_sum() / j as f64;
        for i in 0..2 {
            assert!((zm[i] - y[i]).abs() < 3.0 * (gamma[(i, i)] / j as f64).sqrt() + 1e-12);
        }
        for (a, b) in r_bar.iter().zip(gamma.iter()) {
            assert!((a / b - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn inflation_preserves_mean_on_average() {
        let (ens, p0) = init_ensemble(&CoefficientBounds::X5CRNI18_10, 100, 3).unwrap();
        let policy = InflationPolicy::new(1, 10.0, 0.1, p0.clone()).unwrap();
        let mut rng = rng_from_seed(8);
        let reps = 200;
        let mut shift = DVector::zeros(6);
        for _ in 0..reps {
            let mut e = ens.clone();
            inflate(&mut e, &policy, None, &mut rng).unwrap();
            shift += e.mean() - ens.mean();
        }
        shift /= reps as f64;
        // The subset mean is itself random; allow its spread plus the draws.
        for i in [KT, KR, MT, MR] {
            let sd = (p0[(i, i)] * 0.1 / 100.0 * 2.0 / reps as f64).sqrt();
            assert!(shift[i].abs() < 4.0 * sd, "row {i}: {} vs {}", shift[i], sd);
        }
    }

    fn benchmark_samples(kind: CaseKind) -> (Vec<crate::signal::SignalSample>, NoiseLevel) {
        let cutter = Cutter::new(&ToolSpec::reference(), &ProcessSpec::reference()).unwrap();
        let clean = simulate_run(&cutter, &TrajectoryCase::new(kind), &CoefficientSet::X5CRNI18_10, 3).unwrap();
        let (noisy, level) = add_noise(clean, &NoiseSpec { snr: 15.0, seed: 2 }).unwrap();
        (ploughing_filter(&noisy, 0.01), level)
    }

    #[test]
    fn inflation_jumps_only_at_schedule() {
        let (samples, noise) = benchmark_samples(CaseKind::Static);
        let (initial, _) = init_ensemble(&CoefficientBounds::X5CRNI18_10, 50, 1).unwrap();
        let mut cfg = EnkfConfig::inflated(&noise, 4, InflationSchedule::default());
        cfg.record_covariance = true;
        let trace = enkf_run(&samples, &initial, &cfg).unwrap();
        let expected: Vec<usize> = (0..samples.len()).filter(|k| (k + 1) % 50 == 0).collect();
        assert_eq!(trace.inflations, expected);
        for &k in &expected {
            if k + 1 < samples.len() {
                assert!(trace.covariances[k][(KT, KT)] > trace.covariances[k - 1][(KT, KT)]);
            }
        }
    }

    #[test]
    fn runs_are_bit_reproducible() {
        let (samples, noise) = benchmark_samples(CaseKind::Alternating);
        let (initial, _) = init_ensemble(&CoefficientBounds::X5CRNI18_10, 30, 6).unwrap();
        let cfg = EnkfConfig::inflated(&noise, 11, InflationSchedule::default());
        let a = enkf_run(&samples, &initial, &cfg).unwrap();
        let b = enkf_run(&samples, &initial, &cfg).unwrap();
        assert_eq!(a.means, b.means);
        let c = enkf_run(&samples, &initial, &EnkfConfig::inflated(&noise, 12, InflationSchedule::default())).unwrap();
        assert_ne!(a.means, c.means);
    }
}
