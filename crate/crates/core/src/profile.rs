//! Versioned device-profile schema.
//!
//! A profile is a TOML document describing how cell parameters of one DRAM
//! module are distributed and how they respond to the wordline voltage.

use crate::circuit::{calibration, saturation_voltage, CircuitParams};
use crate::dist::Dist;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const PROFILE_SCHEMA_VERSION: u32 = 1;

/// Hammer count per aggressor used for BER measurements and factor anchoring.
pub const REFERENCE_HAMMER_COUNT: f64 = 300_000.0;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("invalid profile {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("unsupported profile schema version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("failed to parse profile: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("failed to serialize profile: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("unknown preset {0}")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Manufacturer {
    A,
    B,
    C,
}

impl Manufacturer {
    pub const ALL: [Manufacturer; 3] = [Manufacturer::A, Manufacturer::B, Manufacturer::C];

    pub fn letter(self) -> char {
        match self {
            Manufacturer::A => 'A',
            Manufacturer::B => 'B',
            Manufacturer::C => 'C',
        }
    }
}

impl std::fmt::Display for Manufacturer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Three-way mixture for a per-row factor at `vpp_min`: a point mass at one,
/// a component below one and a component above one. The weight of the
/// opposite-trend component is stored next to the mixture in the owning profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorMixture {
    pub unity_fraction: f64,
    pub below: Dist,
    pub above: Dist,
}

impl FactorMixture {
    pub fn point(v: f64) -> Self {
        Self { unity_fraction: 0.0, below: Dist::point(v), above: Dist::point(v) }
    }

    /// Sample with the given weight on the `below` component.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, below_weight: f64) -> f64 {
        let u: f64 = rng.gen();
        let x = if u < below_weight {
            self.below.sample(rng)
        } else if u < below_weight + self.unity_fraction {
            1.0
        } else {
            self.above.sample(rng)
        };
        // Draw count must not depend on the branch taken for reproducibility of later draws.
        let _: f64 = rng.gen();
        x
    }

    pub fn support(&self) -> (f64, f64) {
        let lo = self.below.lower_bound().min(if self.unity_fraction > 0.0 { 1.0 } else { f64::INFINITY });
        let hi = upper_bound(&self.above).max(if self.unity_fraction > 0.0 { 1.0 } else { f64::NEG_INFINITY });
        (lo.min(self.above.lower_bound()), hi.max(upper_bound(&self.below)))
    }

    fn validate(&self, name: &str) -> Result<(), String> {
        self.below.validate()?;
        self.above.validate()?;
        if !(0.0..=1.0).contains(&self.unity_fraction) {
            return Err(format!("{name}.unity_fraction must lie in [0, 1]"));
        }
        let (lo, _) = self.support();
        if lo <= 0.0 {
            return Err(format!("{name} must produce strictly positive factors"));
        }
        Ok(())
    }
}

fn upper_bound(d: &Dist) -> f64 {
    match *d {
        Dist::Point { value } => value,
        Dist::Uniform { hi, .. } => hi,
        Dist::TruncNormal { hi, .. } => hi,
        _ => f64::INFINITY,
    }
}

/// Per-epoch measurement noise on hammer thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct NoiseProfile {
    /// Median over rows of the log-space sigma of the per-epoch threshold multiplier.
    pub sigma_median: f64,
    /// Log-space spread of that sigma across rows.
    pub sigma_log_spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HammerProfile {
    /// Row HC_first at nominal VPP (the row's weakest cell under its worst pattern).
    pub hc_first_nominal_dist: Dist,
    /// Mean row BER at the reference hammer count and nominal VPP.
    pub ber_nominal: f64,
    /// Module-wide floor on row HC_first at `vpp_min`, if the module is known to have one.
    #[serde(default)]
    pub hc_min_vpp_min: Option<f64>,
    pub hc_vpp_factor_dist: FactorMixture,
    /// Weight of the below-one component of `hc_vpp_factor_dist`.
    pub opposite_trend_fraction_hc: f64,
    pub ber_vpp_factor_dist: FactorMixture,
    /// Weight of the above-one component of `ber_vpp_factor_dist`.
    pub opposite_trend_fraction_ber: f64,
    /// Threshold multiplier for stored patterns other than the row's worst pattern.
    pub pattern_factor: f64,
    /// Relative weights of the six pattern ids as a row's worst pattern.
    pub worst_pattern_dist: [f64; 6],
    #[serde(default)]
    pub noise: NoiseProfile,
}

/// A population of weak cells placed in a fraction of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakCells {
    /// Retention time range at `vpp_min`, seconds.
    pub retention_lo: f64,
    pub retention_hi: f64,
    pub row_fraction: f64,
    pub cells_per_row: u32,
    /// Fraction of affected rows that instead carry `rare_cells_per_row` cells.
    #[serde(default)]
    pub rare_fraction: f64,
    #[serde(default)]
    pub rare_cells_per_row: u32,
    /// Exclusive populations never share a row with each other.
    #[serde(default)]
    pub exclusive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionProfile {
    /// Scale retention by saturation_voltage(vpp)/vdd of the restoring activation.
    pub saturation_coupling: bool,
    /// Bulk cell retention time at nominal VPP, seconds.
    pub retention_nominal_dist: Dist,
    /// Relative retention reduction per volt of VPP below nominal.
    pub retention_vpp_slope: f64,
    #[serde(default)]
    pub weak: Vec<WeakCells>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrcdProfile {
    /// Row activation-latency requirement at nominal VPP, ns.
    pub trcd_min_nominal_dist: Dist,
    /// Requirement increase per volt of VPP reduction, ns/V.
    pub trcd_vpp_slope_dist: Dist,
    /// Columns other than the slowest need up to this much less, ns.
    pub column_spread_ns: f64,
}

/// Circuit calibration constants carried with the profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitCalibration {
    pub vth0: f64,
    pub body_coefficient: f64,
    pub access_kp: f64,
    pub senseamp_gain: f64,
    pub sense_margin: f64,
    pub sense_enable_ns: f64,
}

impl Default for CircuitCalibration {
    fn default() -> Self {
        Self {
            vth0: calibration::VTH0,
            body_coefficient: calibration::BODY_COEFFICIENT,
            access_kp: calibration::ACCESS_KP,
            senseamp_gain: calibration::SENSEAMP_GAIN,
            sense_margin: calibration::SENSE_MARGIN,
            sense_enable_ns: calibration::SENSE_ENABLE_NS,
        }
    }
}

impl CircuitCalibration {
    pub fn apply(&self, p: &mut CircuitParams) {
        p.vth0 = self.vth0;
        p.body_coefficient = self.body_coefficient;
        p.access_kp = self.access_kp;
        p.senseamp_gain = self.senseamp_gain;
        p.sense_margin = self.sense_margin;
        p.sense_enable_ns = self.sense_enable_ns;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub schema_version: u32,
    pub id: String,
    pub manufacturer_id: Manufacturer,
    #[serde(default = "default_chips")]
    pub chips: u32,
    pub rows_per_bank: u32,
    pub bits_per_row: u32,
    pub banks: u32,
    pub vdd: f64,
    pub vpp_nominal: f64,
    pub vpp_min: f64,
    pub temperature_label: String,
    pub hammer: HammerProfile,
    pub retention: RetentionProfile,
    pub trcd: TrcdProfile,
    #[serde(default)]
    pub circuit: CircuitCalibration,
}

fn default_chips() -> u32 {
    8
}

impl DeviceProfile {
    pub fn from_toml(s: &str) -> Result<Self, ProfileError> {
        #[derive(Deserialize)]
        struct Version {
            schema_version: u32,
        }
        let v: Version = toml::from_str(s)?;
        if v.schema_version != PROFILE_SCHEMA_VERSION {
            return Err(ProfileError::Version { found: v.schema_version, expected: PROFILE_SCHEMA_VERSION });
        }
        let p: DeviceProfile = toml::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml(&self) -> Result<String, ProfileError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        let s = std::fs::read_to_string(path).map_err(|source| ProfileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&s)
    }

    fn invalid(&self, reason: impl Into<String>) -> ProfileError {
        ProfileError::Invalid { id: self.id.clone(), reason: reason.into() }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        if self.rows_per_bank < 3 || self.banks == 0 || self.bits_per_row == 0 {
            return Err(self.invalid("rows_per_bank >= 3, banks > 0 and bits_per_row > 0 required"));
        }
        if self.bits_per_row % 64 != 0 || self.bits_per_row > 65_536 {
            return Err(self.invalid("bits_per_row must be a multiple of 64 and at most 65536"));
        }
        if !(self.vdd > 0.0 && self.vpp_min > 0.0) {
            return Err(self.invalid("voltages must be positive"));
        }
        if self.vpp_min >= self.vpp_nominal {
            return Err(self.invalid("vpp_min must be below vpp_nominal"));
        }
        if self.vdd >= self.vpp_nominal {
            return Err(self.invalid("vdd must be below vpp_nominal"));
        }
        let h = &self.hammer;
        let dists = [
            ("hc_first_nominal_dist", &h.hc_first_nominal_dist),
            ("retention_nominal_dist", &self.retention.retention_nominal_dist),
            ("trcd_min_nominal_dist", &self.trcd.trcd_min_nominal_dist),
        ];
        for (name, d) in dists {
            d.validate().map_err(|e| self.invalid(format!("{name}: {e}")))?;
            if d.lower_bound() <= 0.0 {
                return Err(self.invalid(format!("{name} must produce strictly positive samples")));
            }
        }
        self.trcd.trcd_vpp_slope_dist.validate().map_err(|e| self.invalid(e))?;
        h.hc_vpp_factor_dist.validate("hc_vpp_factor_dist").map_err(|e| self.invalid(e))?;
        h.ber_vpp_factor_dist.validate("ber_vpp_factor_dist").map_err(|e| self.invalid(e))?;
        for (name, f) in [
            ("opposite_trend_fraction_hc", h.opposite_trend_fraction_hc),
            ("opposite_trend_fraction_ber", h.opposite_trend_fraction_ber),
            ("ber_nominal", h.ber_nominal),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(self.invalid(format!("{name} must lie in [0, 1]")));
            }
        }
        if h.opposite_trend_fraction_hc + h.hc_vpp_factor_dist.unity_fraction > 1.0 + 1e-12
            || h.opposite_trend_fraction_ber + h.ber_vpp_factor_dist.unity_fraction > 1.0 + 1e-12
        {
            return Err(self.invalid("mixture weights exceed one"));
        }
        if h.pattern_factor < 1.0 {
            return Err(self.invalid("pattern_factor must be at least 1"));
        }
        if h.worst_pattern_dist.iter().any(|&w| w < 0.0) || h.worst_pattern_dist.iter().sum::<f64>() <= 0.0 {
            return Err(self.invalid("worst_pattern_dist needs non-negative weights with positive sum"));
        }
        if h.noise.sigma_median < 0.0 || h.noise.sigma_log_spread < 0.0 {
            return Err(self.invalid("noise parameters must be non-negative"));
        }
        let words = self.bits_per_row / 64;
        let mut exclusive = 0.0;
        for w in &self.retention.weak {
            if !(w.retention_lo > 0.0 && w.retention_lo < w.retention_hi) {
                return Err(self.invalid("weak cell retention range must be positive and non-empty"));
            }
            if !(0.0..=1.0).contains(&w.row_fraction) || !(0.0..=1.0).contains(&w.rare_fraction) {
                return Err(self.invalid("weak cell fractions must lie in [0, 1]"));
            }
            if w.cells_per_row > words || w.rare_cells_per_row > words {
                return Err(self.invalid("weak cells per row cannot exceed the number of 64-bit words"));
            }
            if w.exclusive {
                exclusive += w.row_fraction;
            }
        }
        if exclusive > 1.0 + 1e-12 {
            return Err(self.invalid("exclusive weak populations cover more than all rows"));
        }
        if self.trcd.column_spread_ns < 0.0 {
            return Err(self.invalid("column_spread_ns must be non-negative"));
        }
        Ok(())
    }

    pub fn circuit_params(&self) -> CircuitParams {
        let mut p = CircuitParams { vdd: self.vdd, vpp: self.vpp_nominal, ..Default::default() };
        self.circuit.apply(&mut p);
        p
    }

    pub fn saturation_voltage(&self, vpp: f64) -> f64 {
        saturation_voltage(&self.circuit_params().with_vpp(vpp))
    }

    /// Multiplier on nominal retention time for a cell restored at `vpp`.
    pub fn retention_scale(&self, vpp: f64) -> f64 {
        let r = &self.retention;
        let drop = (self.vpp_nominal - vpp).max(0.0);
        let mut s = (1.0 - r.retention_vpp_slope * drop).max(1e-3);
        if r.saturation_coupling {
            s *= self.saturation_voltage(vpp) / self.vdd;
        }
        s
    }

    /// Interpolation weight of `vpp_min` behaviour at `vpp` (0 at nominal, 1 at and below `vpp_min`).
    pub fn vpp_weight(&self, vpp: f64) -> f64 {
        ((self.vpp_nominal - vpp) / (self.vpp_nominal - self.vpp_min)).clamp(0.0, 1.0)
    }
}
