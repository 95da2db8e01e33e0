//! Milling kinematics and the mechanistic force law.
//!
//! The helical flute is approximated by a staircase of straight disk
//! elements stacked along the axial depth of cut. Each disk of each tooth
//! sees its own immersion angle (spindle angle, tooth pitch offset, helix
//! lag) and therefore its own undeformed chip thickness. Forces are summed
//! over the engaged disks and reported in the cutting-edge frame
//! (tangential/radial).

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MillingDirection {
    Up,
    Down,
}

impl std::str::FromStr for MillingDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "up" => Ok(Self::Up),
            "down" => Ok(Self::Down),
            other => Err(Error::InvalidProcess(format!("unknown milling direction `{other}`"))),
        }
    }
}

impl std::fmt::Display for MillingDirection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Up => "up",
            Self::Down => "down",
        })
    }
}

/// Flat end mill geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    /// Diameter in mm.
    pub diameter: f64,
    pub teeth: u32,
    /// Helix angle in degrees.
    pub helix_deg: f64,
    /// Rake angle in degrees. Not used by the force law.
    pub rake_deg: f64,
    /// Number of straight disk elements approximating the helix.
    pub disk_count: usize,
}

impl ToolSpec {
    /// Two-fluted 10 mm solid carbide end mill, 45° helix, 23 disks.
    pub fn reference() -> Self {
        Self {
            diameter: 10.0,
            teeth: 2,
            helix_deg: 45.0,
            rake_deg: 20.0,
            disk_count: 23,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.diameter > 0.0) {
            return Err(Error::InvalidTool(format!("diameter must be positive, got {}", self.diameter)));
        }
        if self.teeth == 0 {
            return Err(Error::InvalidTool("tooth count must be at least 1".into()));
        }
        if !(0.0..90.0).contains(&self.helix_deg) {
            return Err(Error::InvalidTool(format!("helix angle must lie in [0, 90) deg, got {}", self.helix_deg)));
        }
        if self.disk_count == 0 {
            return Err(Error::InvalidTool("disk count must be at least 1".into()));
        }
        Ok(())
    }

    pub fn tooth_pitch(&self) -> f64 {
        TAU / self.teeth as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    /// Feed per tooth in mm.
    pub feed_per_tooth: f64,
    /// Cutting velocity in m/s.
    pub cutting_velocity: f64,
    /// Axial depth of cut in mm.
    pub depth_of_cut: f64,
    /// Radial width of cut in mm.
    pub width_of_cut: f64,
    /// Sample rate in Hz.
    pub sample_rate: f64,
    pub direction: MillingDirection,
}

impl ProcessSpec {
    /// Side milling of X5CrNi18-10: f_z = 0.1 mm, v_c = 2.44 m/s,
    /// a_p = 2 mm, a_e = 3 mm, sampled at 10 kHz.
    pub fn reference() -> Self {
        Self {
            feed_per_tooth: 0.1,
            cutting_velocity: 2.44,
            depth_of_cut: 2.0,
            width_of_cut: 3.0,
            sample_rate: 10_000.0,
            direction: MillingDirection::Up,
        }
    }

    pub fn validate(&self, tool: &ToolSpec) -> Result<()> {
        tool.validate()?;
        for (name, v) in [
            ("feed per tooth", self.feed_per_tooth),
            ("cutting velocity", self.cutting_velocity),
            ("depth of cut", self.depth_of_cut),
            ("width of cut", self.width_of_cut),
            ("sample rate", self.sample_rate),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidProcess(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.width_of_cut > tool.diameter {
            return Err(Error::WidthExceedsDiameter {
                a_e: self.width_of_cut,
                diameter: tool.diameter,
            });
        }
        Ok(())
    }

    /// Spindle speed in revolutions per second, n = v_c / (π D).
    pub fn spindle_speed(&self, tool: &ToolSpec) -> f64 {
        self.cutting_velocity * 1000.0 / (PI * tool.diameter)
    }

    pub fn samples_per_rev(&self, tool: &ToolSpec) -> f64 {
        self.sample_rate / self.spindle_speed(tool)
    }

    pub fn disk_width(&self, tool: &ToolSpec) -> f64 {
        self.depth_of_cut / tool.disk_count as f64
    }
}

/// Kienzle coefficients for the tangential and radial direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub kt: f64,
    pub mt: f64,
    pub kr: f64,
    pub mr: f64,
}

impl CoefficientSet {
    pub const fn new(kt: f64, mt: f64, kr: f64, mr: f64) -> Self {
        Self { kt, mt, kr, mr }
    }

    /// Tabulated coefficients for X5CrNi18-10.
    pub const X5CRNI18_10: Self = Self::new(1700.0, 0.18, 350.0, 0.55);

    pub fn is_finite(&self) -> bool {
        self.kt.is_finite() && self.mt.is_finite() && self.kr.is_finite() && self.mr.is_finite()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.kt * factor, self.mt * factor, self.kr * factor, self.mr * factor)
    }
}

/// Lower/upper rows used to draw initial ensembles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientBounds {
    pub lower: CoefficientSet,
    pub upper: CoefficientSet,
}

impl CoefficientBounds {
    pub const X5CRNI18_10: Self = Self {
        lower: CoefficientSet::new(800.0, 0.05, 600.0, 0.01),
        upper: CoefficientSet::new(1800.0, 0.6, 1200.0, 0.3),
    };

    pub fn midpoint(&self) -> CoefficientSet {
        CoefficientSet::new(
            0.5 * (self.lower.kt + self.upper.kt),
            0.5 * (self.lower.mt + self.upper.mt),
            0.5 * (self.lower.kr + self.upper.kr),
            0.5 * (self.lower.mr + self.upper.mr),
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Forces {
    pub tangential: f64,
    pub radial: f64,
}

/// Angular interval in which a cutting edge removes material.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngagementArc {
    pub entry: f64,
    pub exit: f64,
}

impl EngagementArc {
    pub const FULL_SLOT: Self = Self { entry: 0.0, exit: PI };

    /// `angle` is taken modulo 2π.
    pub fn contains(&self, angle: f64) -> bool {
        let a = angle.rem_euclid(TAU);
        a >= self.entry && a <= self.exit
    }
}

/// Undeformed chip thickness `f_z sin φ` inside the engagement arc, zero outside.
pub fn chip_thickness(angle: f64, feed_per_tooth: f64, arc: EngagementArc) -> f64 {
    if arc.contains(angle) {
        (feed_per_tooth * angle.rem_euclid(TAU).sin()).max(0.0)
    } else {
        0.0
    }
}

pub fn engagement_arc(process: &ProcessSpec, tool: &ToolSpec) -> Result<EngagementArc> {
    if process.width_of_cut > tool.diameter {
        return Err(Error::WidthExceedsDiameter {
            a_e: process.width_of_cut,
            diameter: tool.diameter,
        });
    }
    if !(process.width_of_cut > 0.0) {
        return Err(Error::InvalidProcess(format!(
            "width of cut must be positive, got {}",
            process.width_of_cut
        )));
    }
    let sweep = (1.0 - 2.0 * process.width_of_cut / tool.diameter).clamp(-1.0, 1.0).acos();
    Ok(match process.direction {
        MillingDirection::Up => EngagementArc { entry: 0.0, exit: sweep },
        MillingDirection::Down => EngagementArc { entry: PI - sweep, exit: PI },
    })
}

/// Angular lag of the cutting edge at axial height `z` above the tool tip.
pub fn helix_lag(tool: &ToolSpec, z: f64) -> f64 {
    2.0 * tool.helix_deg.to_radians().tan() * z / tool.diameter
}

/// `F_i = k_i b h^(1 - m_i)` for both directions.
pub fn kienzle_force(c: &CoefficientSet, b: f64, h: f64) -> Result<Forces> {
    if !(h > 0.0) {
        return Err(Error::NonPositiveChip(h));
    }
    if !(b > 0.0) {
        return Err(Error::InvalidProcess(format!("chip width must be positive, got {b}")));
    }
    Ok(Forces {
        tangential: c.kt * b * h.powf(1.0 - c.mt),
        radial: c.kr * b * h.powf(1.0 - c.mr),
    })
}

/// Linear edge/cutting force model `b (K_e + K_c h)`.
pub fn altintas_force(k_edge: f64, k_cut: f64, b: f64, h: f64) -> f64 {
    b * (k_edge + k_cut * h)
}

/// Chip geometry of every disk of every tooth at one spindle angle.
#[derive(Debug, Clone, PartialEq)]
pub struct EngagementSample {
    pub spindle_angle: f64,
    /// Indexed `tooth * disk_count + disk`; zero where disengaged.
    pub per_disk_h: Vec<f64>,
    pub h_sum: f64,
    pub b_disk: f64,
}

impl EngagementSample {
    pub fn engaged(&self) -> impl Iterator<Item = f64> + '_ {
        self.per_disk_h.iter().copied().filter(|&h| h > 0.0)
    }

    pub fn is_engaged(&self) -> bool {
        self.per_disk_h.iter().any(|&h| h > 0.0)
    }

    /// Disk-summed Kienzle force. Disengaged disks contribute nothing.
    pub fn force(&self, c: &CoefficientSet) -> Forces {
        let mut out = Forces::default();
        for h in self.engaged() {
            out.tangential += c.kt * self.b_disk * h.powf(1.0 - c.mt);
            out.radial += c.kr * self.b_disk * h.powf(1.0 - c.mr);
        }
        out
    }
}

/// Precomputed tool/process geometry for repeated force evaluation.
#[derive(Debug, Clone)]
pub struct Cutter {
    tool: ToolSpec,
    process: ProcessSpec,
    arc: EngagementArc,
    disk_lag: Vec<f64>,
    b_disk: f64,
}

impl Cutter {
    pub fn new(tool: &ToolSpec, process: &ProcessSpec) -> Result<Self> {
        process.validate(tool)?;
        let arc = engagement_arc(process, tool)?;
        let b_disk = process.disk_width(tool);
        let disk_lag = (0..tool.disk_count)
            .map(|i| helix_lag(tool, (i as f64 + 0.5) * b_disk))
            .collect();
        Ok(Self {
            tool: tool.clone(),
            process: process.clone(),
            arc,
            disk_lag,
            b_disk,
        })
    }

    pub fn tool(&self) -> &ToolSpec {
        &self.tool
    }

    pub fn process(&self) -> &ProcessSpec {
        &self.process
    }

    pub fn arc(&self) -> EngagementArc {
        self.arc
    }

    pub fn b_disk(&self) -> f64 {
        self.b_disk
    }

    pub fn engagement(&self, spindle_angle: f64) -> EngagementSample {
        let pitch = self.tool.tooth_pitch();
        let mut per_disk_h = Vec::with_capacity(self.disk_lag.len() * self.tool.teeth as usize);
        for tooth in 0..self.tool.teeth {
            let offset = tooth as f64 * pitch;
            for lag in &self.disk_lag {
                let local = spindle_angle + offset - lag;
                per_disk_h.push(chip_thickness(local, self.process.feed_per_tooth, self.arc));
            }
        }
        let h_sum = per_disk_h.iter().sum();
        EngagementSample {
            spindle_angle,
            per_disk_h,
            h_sum,
            b_disk: self.b_disk,
        }
    }

    pub fn force(&self, c: &CoefficientSet, spindle_angle: f64) -> (Forces, EngagementSample) {
        let eng = self.engagement(spindle_angle);
        (eng.force(c), eng)
    }
}

/// One-shot convenience wrapper around [`Cutter::force`].
pub fn total_force(
    tool: &ToolSpec,
    process: &ProcessSpec,
    c: &CoefficientSet,
    spindle_angle: f64,
) -> Result<(Forces, EngagementSample)> {
    Ok(Cutter::new(tool, process)?.force(c, spindle_angle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn slot(helix: f64, disks: usize) -> (ToolSpec, ProcessSpec) {
        let tool = ToolSpec {
            helix_deg: helix,
            disk_count: disks,
            ..ToolSpec::reference()
        };
        let process = ProcessSpec {
            width_of_cut: tool.diameter,
            ..ProcessSpec::reference()
        };
        (tool, process)
    }

    #[test]
    fn chip_thickness_examples() {
        let arc = EngagementArc::FULL_SLOT;
        assert_relative_eq!(chip_thickness(FRAC_PI_2, 0.1, arc), 0.1);
        assert_eq!(chip_thickness(0.0, 0.1, arc), 0.0);
        assert_relative_eq!(chip_thickness(PI / 4.0, 0.1, arc), 0.070711, epsilon = 1e-6);
        assert_eq!(chip_thickness(1.5 * PI, 0.1, arc), 0.0);
    }

    #[test]
    fn engagement_arc_examples() {
        let tool = ToolSpec::reference();
        let mut p = ProcessSpec::reference();
        p.width_of_cut = 5.0;
        let a = engagement_arc(&p, &tool).unwrap();
        assert_eq!(a.entry, 0.0);
        assert_relative_eq!(a.exit, FRAC_PI_2, epsilon = 1e-12);
        p.width_of_cut = 10.0;
        assert_relative_eq!(engagement_arc(&p, &tool).unwrap().exit, PI, epsilon = 1e-12);
        p.width_of_cut = 3.0;
        assert_relative_eq!(engagement_arc(&p, &tool).unwrap().exit, 1.15928, epsilon = 1e-5);
        p.direction = MillingDirection::Down;
        let d = engagement_arc(&p, &tool).unwrap();
        assert_relative_eq!(d.entry, PI - 1.159279480727, epsilon = 1e-9);
        assert_eq!(d.exit, PI);
        p.width_of_cut = 10.5;
        assert!(matches!(engagement_arc(&p, &tool), Err(Error::WidthExceedsDiameter { .. })));
    }

    #[test]
    fn helix_lag_examples() {
        let mut tool = ToolSpec::reference();
        tool.helix_deg = 0.0;
        assert_eq!(helix_lag(&tool, 2.0), 0.0);
        tool.helix_deg = 45.0;
        assert_relative_eq!(helix_lag(&tool, 2.0), 0.4, epsilon = 1e-12);
        assert_eq!(helix_lag(&tool, 0.0), 0.0);
    }

    #[test]
    fn kienzle_examples() {
        let c = CoefficientSet::new(1700.0, 0.18, 1000.0, 1.0);
        assert_relative_eq!(kienzle_force(&c, 1.0, 1.0).unwrap().tangential, 1700.0);
        assert_relative_eq!(kienzle_force(&c, 2.0, 0.5).unwrap().radial, 2000.0);
        // 1700 * 0.1^0.82
        assert_relative_eq!(kienzle_force(&c, 1.0, 0.1).unwrap().tangential, 257.30, epsilon = 1e-2);
        assert!(kienzle_force(&c, 1.0, 0.0).is_err());
        assert!(kienzle_force(&c, 1.0, -0.1).is_err());
    }

    #[test]
    fn altintas_examples() {
        assert_eq!(altintas_force(0.0, 0.0, 1.0, 1.0), 0.0);
        assert_eq!(altintas_force(10.0, 0.0, 2.0, 0.3), 20.0);
        assert_relative_eq!(altintas_force(10.0, 2000.0, 2.0, 0.1), 420.0, epsilon = 1e-9);
    }

    #[test]
    fn kienzle_tends_to_linear_model() {
        let c = CoefficientSet::new(1500.0, 1e-12, 800.0, 1e-12);
        for h in [0.01, 0.05, 0.2] {
            let f = kienzle_force(&c, 0.7, h).unwrap();
            assert_relative_eq!(f.tangential, altintas_force(0.0, 1500.0, 0.7, h), max_relative = 1e-9);
        }
    }

    #[test]
    fn disengaged_angle_gives_zero_force() {
        let cutter = Cutter::new(&ToolSpec::reference(), &ProcessSpec::reference()).unwrap();
        // Tooth 0 lags behind the spindle angle; tooth 1 sits half a turn ahead.
        let (f, eng) = cutter.force(&CoefficientSet::X5CRNI18_10, 2.5);
        assert_eq!(f, Forces::default());
        assert_eq!(eng.h_sum, 0.0);
        assert!(!eng.is_engaged());
    }

    #[test]
    fn straight_single_disk_slot_is_one_edge() {
        let (tool, process) = slot(0.0, 1);
        let c = CoefficientSet::X5CRNI18_10;
        let (f, eng) = total_force(&tool, &process, &c, FRAC_PI_2).unwrap();
        let direct = kienzle_force(&c, process.depth_of_cut, process.feed_per_tooth).unwrap();
        assert_eq!(f, direct);
        assert_eq!(eng.h_sum, process.feed_per_tooth);
    }

    #[test]
    fn brute_force_disk_loop_matches() {
        let tool = ToolSpec::reference();
        let process = ProcessSpec::reference();
        let c = CoefficientSet::X5CRNI18_10;
        let (f, _) = total_force(&tool, &process, &c, 0.8).unwrap();

        // Independent loop: explicit angle wrap and arc test per disk.
        let b = 2.0 / 23.0;
        let exit = (1.0f64 - 0.6).acos();
        let (mut ft, mut fr) = (0.0, 0.0);
        for tooth in 0..2 {
            for i in 0..23 {
                let z = (i as f64 + 0.5) * b;
                let mut phi = 0.8 + tooth as f64 * PI - 2.0 * z / 10.0;
                while phi < 0.0 {
                    phi += 2.0 * PI;
                }
                while phi >= 2.0 * PI {
                    phi -= 2.0 * PI;
                }
                if phi <= exit {
                    let h = 0.1 * phi.sin();
                    if h > 0.0 {
                        ft += 1700.0 * b * h.powf(0.82);
                        fr += 350.0 * b * h.powf(0.45);
                    }
                }
            }
        }
        assert!(ft > 0.0);
        assert_relative_eq!(f.tangential, ft, max_relative = 1e-12);
        assert_relative_eq!(f.radial, fr, max_relative = 1e-12);
    }

    #[test]
    fn force_is_periodic_in_tooth_pitch() {
        let cutter = Cutter::new(&ToolSpec::reference(), &ProcessSpec::reference()).unwrap();
        let c = CoefficientSet::X5CRNI18_10;
        for i in 0..200 {
            let a = i as f64 * 0.0314;
            let (f0, _) = cutter.force(&c, a);
            let (f1, _) = cutter.force(&c, a + PI);
            assert_relative_eq!(f0.tangential, f1.tangential, epsilon = 1e-9);
            assert_relative_eq!(f0.radial, f1.radial, epsilon = 1e-9);
        }
    }

    #[test]
    fn finite_difference_derivative_in_h() {
        let c = CoefficientSet::X5CRNI18_10;
        let b = 0.5;
        for i in 0..=20 {
            let h = 0.01 + 0.09 * i as f64 / 20.0;
            let step = 1e-6 * h;
            let fd = (kienzle_force(&c, b, h + step).unwrap().tangential
                - kienzle_force(&c, b, h - step).unwrap().tangential)
                / (2.0 * step);
            let analytic = c.kt * b * (1.0 - c.mt) * h.powf(-c.mt);
            assert!(((fd - analytic) / analytic).abs() < 1e-6);
        }
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let mut tool = ToolSpec::reference();
        tool.teeth = 0;
        assert!(tool.validate().is_err());
        let mut tool = ToolSpec::reference();
        tool.helix_deg = 90.0;
        assert!(tool.validate().is_err());
        let mut p = ProcessSpec::reference();
        p.feed_per_tooth = 0.0;
        assert!(p.validate(&ToolSpec::reference()).is_err());
    }

    #[test]
    fn reference_spindle_speed() {
        let tool = ToolSpec::reference();
        let p = ProcessSpec::reference();
        assert_relative_eq!(p.spindle_speed(&tool), 77.6676, epsilon = 1e-4);
        assert_eq!(p.samples_per_rev(&tool).round(), 129.0);
    }
}
