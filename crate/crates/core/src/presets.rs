//! The 30 shipped module presets.
//!
//! `presets/modules.toml` holds per-module characterization data and
//! `presets/manufacturers.toml` holds the per-manufacturer statistics used to
//! expand each module into a full [`DeviceProfile`].

use crate::dist::{norm_cdf, norm_ppf, Dist};
use crate::profile::{
    CircuitCalibration, DeviceProfile, FactorMixture, HammerProfile, Manufacturer, NoiseProfile, ProfileError,
    RetentionProfile, TrcdProfile, WeakCells, PROFILE_SCHEMA_VERSION, REFERENCE_HAMMER_COUNT,
};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::sync::OnceLock;

const MODULES: &str = include_str!("../presets/modules.toml");
const MANUFACTURERS: &str = include_str!("../presets/manufacturers.toml");

/// Published per-module numbers a preset is built from.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ModuleData {
    pub id: String,
    #[serde(default = "default_org")]
    pub org: String,
    #[serde(default = "default_chips")]
    pub chips: u32,
    /// Minimum HC_first and BER at nominal VPP.
    pub hc: f64,
    pub ber: f64,
    pub vpp_min: f64,
    pub hc_min: f64,
    pub ber_min: f64,
    pub vpp_rec: f64,
    #[serde(default)]
    hc_rec: Option<f64>,
    #[serde(default)]
    ber_rec: Option<f64>,
    pub trcd: [f64; 2],
    #[serde(default)]
    pub early_retention: bool,
}

fn default_org() -> String {
    "x8".into()
}

fn default_chips() -> u32 {
    8
}

impl ModuleData {
    pub fn manufacturer(&self) -> Manufacturer {
        match self.id.as_bytes()[0] {
            b'A' => Manufacturer::A,
            b'B' => Manufacturer::B,
            _ => Manufacturer::C,
        }
    }

    /// Minimum HC_first and BER at the recommended VPP.
    pub fn rec(&self) -> (f64, f64) {
        match (self.hc_rec, self.ber_rec) {
            (Some(h), Some(b)) => (h, b),
            _ if (self.vpp_rec - 2.5).abs() < 1e-9 => (self.hc, self.ber),
            _ => (self.hc_min, self.ber_min),
        }
    }
}

#[derive(Debug, Deserialize)]
struct ModuleFile {
    module: Vec<ModuleData>,
}

#[derive(Debug, Clone, Deserialize)]
struct Weak {
    lo: f64,
    hi: f64,
    row_fraction: f64,
    cells: u32,
    #[serde(default)]
    rare_fraction: f64,
    #[serde(default)]
    rare_cells: u32,
}

impl Weak {
    fn cells(&self) -> WeakCells {
        WeakCells {
            retention_lo: self.lo,
            retention_hi: self.hi,
            row_fraction: self.row_fraction,
            cells_per_row: self.cells,
            rare_fraction: self.rare_fraction,
            rare_cells_per_row: self.rare_cells,
            exclusive: true,
        }
    }
}

#[derive(Debug, Deserialize)]
struct Common {
    pattern_factor: f64,
    noise_sigma_median: f64,
    noise_sigma_log_spread: f64,
    retention_floor: f64,
    retention_vpp_slope: f64,
    column_spread_ns: f64,
    trcd_row_spread: [f64; 2],
    retention_window: f64,
    retention_test_vpp: f64,
    weak256: Weak,
}

#[derive(Debug, Deserialize)]
struct MfrStats {
    hc_mean_excess: f64,
    hc_below: f64,
    hc_unity: f64,
    hc_below_dist: Dist,
    hc_above_dist: Dist,
    ber_range: [f64; 2],
    ber_unity: f64,
    ber_above_rising: f64,
    ber_above_falling: f64,
    ber_scale: f64,
    ber_below_std: f64,
    ber_above_dist: Dist,
    /// Retention BER at the reference window, at nominal VPP and at the test VPP.
    retention_ber: [f64; 2],
    weak128: Weak,
    #[serde(default)]
    weak64: Option<Weak>,
    #[serde(default)]
    weak128_early: Option<Weak>,
}

#[derive(Debug, Deserialize)]
struct MfrFile {
    common: Common,
    #[serde(rename = "A")]
    a: MfrStats,
    #[serde(rename = "B")]
    b: MfrStats,
    #[serde(rename = "C")]
    c: MfrStats,
}

impl MfrFile {
    fn get(&self, m: Manufacturer) -> &MfrStats {
        match m {
            Manufacturer::A => &self.a,
            Manufacturer::B => &self.b,
            Manufacturer::C => &self.c,
        }
    }
}

struct Tables {
    modules: Vec<ModuleData>,
    mfr: MfrFile,
    profiles: BTreeMap<String, DeviceProfile>,
}

fn tables() -> &'static Tables {
    static T: OnceLock<Tables> = OnceLock::new();
    T.get_or_init(|| {
        let modules = toml::from_str::<ModuleFile>(MODULES).expect("bundled module table parses").module;
        let mfr: MfrFile = toml::from_str(MANUFACTURERS).expect("bundled manufacturer table parses");
        let profiles = modules
            .iter()
            .map(|m| (m.id.clone(), compose(m, &modules, &mfr)))
            .collect();
        Tables { modules, mfr, profiles }
    })
}

/// Ids of all shipped presets, in table order.
pub fn preset_ids() -> Vec<&'static str> {
    tables().modules.iter().map(|m| m.id.as_str()).collect()
}

pub fn preset(id: &str) -> Result<DeviceProfile, ProfileError> {
    tables().profiles.get(id).cloned().ok_or_else(|| ProfileError::UnknownPreset(id.to_string()))
}

pub fn all_presets() -> Vec<DeviceProfile> {
    preset_ids().into_iter().map(|id| preset(id).expect("listed")).collect()
}

pub fn module_data(id: &str) -> Option<&'static ModuleData> {
    tables().modules.iter().find(|m| m.id == id)
}

/// VPP at which retention is characterized for a module.
pub fn retention_test_vpp(profile: &DeviceProfile) -> f64 {
    tables().mfr.common.retention_test_vpp.max(profile.vpp_min)
}

/// Reference retention window the retention targets are stated at, seconds.
pub fn retention_reference_window() -> f64 {
    tables().mfr.common.retention_window
}

fn ber_ratio(m: &ModuleData, s: &MfrStats) -> f64 {
    (m.ber_min / m.ber).clamp(s.ber_range[0], s.ber_range[1])
}

fn compose(m: &ModuleData, all: &[ModuleData], f: &MfrFile) -> DeviceProfile {
    let mfr = m.manufacturer();
    let s = f.get(mfr);
    let c = &f.common;
    let bits = 8192u32;

    // Row HC_first: module minimum plus an exponential excess. When fewer than
    // two flipped bits per row are expected at the reference count, the
    // excess is widened so that only a few rows flip there at all.
    let mut mean_excess = s.hc_mean_excess * m.hc;
    if (bits as f64) * m.ber < 2.0 && m.hc < REFERENCE_HAMMER_COUNT {
        let p = bits as f64 * m.ber / 2.0;
        mean_excess = (REFERENCE_HAMMER_COUNT - m.hc) / -(-p).ln_1p();
    }

    let peers: Vec<&ModuleData> = all.iter().filter(|x| x.manufacturer() == mfr).collect();
    let r_mean = peers.iter().map(|x| ber_ratio(x, s)).sum::<f64>() / peers.len() as f64;
    let r = ber_ratio(m, s);
    let target = s.ber_scale * r / r_mean;
    let w_above = if m.ber_min >= m.ber { s.ber_above_rising } else { s.ber_above_falling }.min(1.0 - s.ber_unity);
    let w_below = 1.0 - s.ber_unity - w_above;
    let below_at = |mu: f64| Dist::TruncNormal { mean: mu, std: s.ber_below_std, lo: s.ber_range[0], hi: 0.999 };
    let mix_mean = |mu: f64| w_below * below_at(mu).mean() + s.ber_unity + w_above * s.ber_above_dist.mean();
    let (mut lo, mut hi) = (s.ber_range[0] - 1.0, 1.5);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mix_mean(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let mut weak = vec![c.weak256.cells()];
    match (m.early_retention, &s.weak64, &s.weak128_early) {
        (true, Some(w64), Some(w128)) => {
            weak.push(w64.cells());
            weak.push(w128.cells());
        }
        _ => weak.push(s.weak128.cells()),
    }

    let slope = (m.trcd[1] - m.trcd[0]) / (2.5 - m.vpp_min);
    let mut p = DeviceProfile {
        schema_version: PROFILE_SCHEMA_VERSION,
        id: m.id.clone(),
        manufacturer_id: mfr,
        chips: m.chips,
        rows_per_bank: 65_536,
        bits_per_row: bits,
        banks: 16,
        vdd: 1.2,
        vpp_nominal: 2.5,
        vpp_min: m.vpp_min,
        temperature_label: "50C (RowHammer, tRCD); 80C (retention)".into(),
        hammer: HammerProfile {
            hc_first_nominal_dist: Dist::ShiftedExponential { location: m.hc, mean_excess },
            ber_nominal: m.ber,
            hc_min_vpp_min: Some(m.hc_min),
            hc_vpp_factor_dist: FactorMixture {
                unity_fraction: s.hc_unity,
                below: s.hc_below_dist.clone(),
                above: s.hc_above_dist.clone(),
            },
            opposite_trend_fraction_hc: s.hc_below,
            ber_vpp_factor_dist: FactorMixture {
                unity_fraction: s.ber_unity,
                below: below_at(0.5 * (lo + hi)),
                above: s.ber_above_dist.clone(),
            },
            opposite_trend_fraction_ber: w_above,
            pattern_factor: c.pattern_factor,
            worst_pattern_dist: [1.0; 6],
            noise: NoiseProfile { sigma_median: c.noise_sigma_median, sigma_log_spread: c.noise_sigma_log_spread },
        },
        retention: RetentionProfile {
            saturation_coupling: true,
            retention_nominal_dist: Dist::point(1.0),
            retention_vpp_slope: c.retention_vpp_slope,
            weak,
        },
        trcd: TrcdProfile {
            trcd_min_nominal_dist: Dist::Uniform {
                lo: m.trcd[0] - c.trcd_row_spread[0],
                hi: m.trcd[0] - c.trcd_row_spread[1],
            },
            trcd_vpp_slope_dist: Dist::point(slope),
            column_spread_ns: c.column_spread_ns,
        },
        circuit: CircuitCalibration::default(),
    };

    // Bulk retention: log-normal whose spread reproduces the manufacturer's BER
    // ratio between nominal and test VPP, and whose median puts the module's BER
    // at the reference window on target at its own test VPP.
    let test_vpp = c.retention_test_vpp.max(m.vpp_min);
    let ratio = p.retention_scale(p.vpp_nominal) / p.retention_scale(c.retention_test_vpp);
    let sigma = ratio.ln() / (norm_ppf(s.retention_ber[1]) - norm_ppf(s.retention_ber[0]));
    let t = c.retention_window / p.retention_scale(test_vpp);
    let mut median = t / (sigma * norm_ppf(s.retention_ber[1])).exp();
    for _ in 0..20 {
        let zf = (c.retention_floor / median).ln() / sigma;
        let q = s.retention_ber[1] * (1.0 - norm_cdf(zf)) + norm_cdf(zf);
        median = t / (sigma * norm_ppf(q)).exp();
    }
    p.retention.retention_nominal_dist = Dist::LogNormal { median, sigma, floor: c.retention_floor };
    p
}
