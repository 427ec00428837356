//! Cell / bitline / sense-amplifier activation model.
//!
//! One DRAM cell is connected to a precharged bitline through its access
//! transistor. The access transistor uses a square-law model whose threshold
//! rises linearly with its source voltage (body effect); this is what limits
//! the voltage a cell can be restored to when the wordline voltage drops.
//! Once the bitline deviates from the precharge level by more than the sensing
//! margin, a cross-coupled sense amplifier regenerates it toward the rail.
//!
//! Integration is a fixed-step explicit Heun scheme (1 ps by default).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

const NS: f64 = 1e-9;

/// Nominal activation-to-read latency of DDR4 parts, in ns.
pub const NOMINAL_TRCD_NS: f64 = 13.5;

#[derive(Debug, Error)]
pub enum CircuitError {
    #[error("invalid circuit parameter: {0}")]
    InvalidParams(String),
    #[error("invalid Monte-Carlo configuration: {0}")]
    InvalidConfig(String),
    #[error("{latency} not reached within {duration_ns} ns")]
    NonConvergence {
        latency: Latency,
        duration_ns: f64,
        partial: Box<ActivationResult>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Latency {
    Trcd,
    Tras,
}

impl std::fmt::Display for Latency {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Latency::Trcd => "tRCD",
            Latency::Tras => "tRAS",
        })
    }
}

/// Transistor geometry in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub width: f64,
    pub length: f64,
}

impl Geometry {
    pub const fn new(width: f64, length: f64) -> Self {
        Self { width, length }
    }

    pub fn aspect(&self) -> f64 {
        self.width / self.length
    }
}

/// Component values and calibration constants for one activation.
///
/// Capacitances in farads, resistances in ohms, voltages in volts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CircuitParams {
    pub cell_capacitance: f64,
    pub cell_resistance: f64,
    pub bitline_capacitance: f64,
    pub bitline_resistance: f64,
    pub access_nmos: Geometry,
    pub senseamp_nmos: Geometry,
    pub senseamp_pmos: Geometry,
    pub vdd: f64,
    pub vpp: f64,
    /// Access-transistor threshold at zero source voltage.
    pub vth0: f64,
    /// Threshold increase per volt of source voltage.
    pub body_coefficient: f64,
    /// Process transconductance of the access device, A/V^2 per unit W/L.
    pub access_kp: f64,
    /// Regeneration transconductance of the latch, A/V per unit sqrt(W/L_n * W/L_p).
    pub senseamp_gain: f64,
    /// Bitline deviation from precharge that fires the sense amplifier.
    pub sense_margin: f64,
    /// Earliest time after activation at which the sense amplifier may fire, in ns.
    pub sense_enable_ns: f64,
    pub v_readable_fraction: f64,
    pub restoration_completion_fraction: f64,
    pub sense_amp_enabled: bool,
    /// Cell voltage before activation; `None` means the saturation voltage at `vpp`.
    pub v_cell_initial: Option<f64>,
    /// Bitline precharge level; `None` means `vdd / 2`.
    pub v_precharge: Option<f64>,
}

impl Default for CircuitParams {
    fn default() -> Self {
        Self {
            cell_capacitance: 16.8e-15,
            cell_resistance: 698.0,
            bitline_capacitance: 100.5e-15,
            bitline_resistance: 6980.0,
            access_nmos: Geometry::new(55e-9, 85e-9),
            senseamp_nmos: Geometry::new(1.3e-6, 0.1e-6),
            senseamp_pmos: Geometry::new(0.9e-6, 0.1e-6),
            vdd: 1.2,
            vpp: 2.5,
            vth0: calibration::VTH0,
            body_coefficient: calibration::BODY_COEFFICIENT,
            access_kp: calibration::ACCESS_KP,
            senseamp_gain: calibration::SENSEAMP_GAIN,
            sense_margin: calibration::SENSE_MARGIN,
            sense_enable_ns: calibration::SENSE_ENABLE_NS,
            v_readable_fraction: 0.75,
            restoration_completion_fraction: 0.99,
            sense_amp_enabled: true,
            v_cell_initial: None,
            v_precharge: None,
        }
    }
}

/// Frozen calibration constants. See `examples/calibrate_circuit.rs` for the
/// fitting procedure that produced them.
pub mod calibration {
    /// Saturation anchors: (VPP, relative reduction of the restored cell voltage below VDD).
    pub const SATURATION_ANCHORS: [(f64, f64); 3] = [(1.9, 0.041), (1.8, 0.110), (1.7, 0.181)];
    pub const VTH0: f64 = 0.529_52;
    pub const BODY_COEFFICIENT: f64 = 0.190_476;
    pub const ACCESS_KP: f64 = 137.02e-6;
    pub const SENSEAMP_GAIN: f64 = 2.336_2e-6;
    pub const SENSE_MARGIN: f64 = 0.047_35;
    pub const SENSE_ENABLE_NS: f64 = 3.260_7;
}

impl CircuitParams {
    pub fn with_vpp(mut self, vpp: f64) -> Self {
        self.vpp = vpp;
        self
    }

    pub fn validate(&self) -> Result<(), CircuitError> {
        let positive = [
            ("cell_capacitance", self.cell_capacitance),
            ("cell_resistance", self.cell_resistance),
            ("bitline_capacitance", self.bitline_capacitance),
            ("bitline_resistance", self.bitline_resistance),
            ("access_nmos.width", self.access_nmos.width),
            ("access_nmos.length", self.access_nmos.length),
            ("senseamp_nmos.width", self.senseamp_nmos.width),
            ("senseamp_nmos.length", self.senseamp_nmos.length),
            ("senseamp_pmos.width", self.senseamp_pmos.width),
            ("senseamp_pmos.length", self.senseamp_pmos.length),
            ("vdd", self.vdd),
            ("vpp", self.vpp),
            ("access_kp", self.access_kp),
            ("senseamp_gain", self.senseamp_gain),
            ("sense_margin", self.sense_margin),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(CircuitError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.v_readable_fraction) || self.v_readable_fraction <= 0.5 {
            return Err(CircuitError::InvalidParams("v_readable_fraction must lie in (0.5, 1)".into()));
        }
        if !(self.sense_enable_ns.is_finite() && self.sense_enable_ns >= 0.0) {
            return Err(CircuitError::InvalidParams("sense_enable_ns must be non-negative".into()));
        }
        if !(self.restoration_completion_fraction > 0.0 && self.restoration_completion_fraction < 1.0) {
            return Err(CircuitError::InvalidParams(
                "restoration_completion_fraction must lie in (0, 1)".into(),
            ));
        }
        if self.vth_access(0.0) >= self.vpp {
            return Err(CircuitError::InvalidParams(format!(
                "access threshold {} must be below vpp {}",
                self.vth_access(0.0),
                self.vpp
            )));
        }
        Ok(())
    }

    /// Access-transistor threshold at the given source voltage.
    pub fn vth_access(&self, v_source: f64) -> f64 {
        self.vth0 + self.body_coefficient * v_source
    }

    pub fn precharge(&self) -> f64 {
        self.v_precharge.unwrap_or(self.vdd / 2.0)
    }

    pub fn v_readable(&self) -> f64 {
        self.v_readable_fraction * self.vdd
    }

    fn access_beta(&self) -> f64 {
        self.access_kp * self.access_nmos.aspect()
    }

    fn latch_gain(&self) -> f64 {
        self.senseamp_gain * (self.senseamp_nmos.aspect() * self.senseamp_pmos.aspect()).sqrt()
    }

    /// Current through cell resistor and access channel, positive from bitline into the cell.
    fn access_current(&self, beta: f64, v_cell: f64, v_bl: f64) -> f64 {
        let (v_s, v_d, sign) = if v_bl >= v_cell {
            (v_cell, v_bl, 1.0)
        } else {
            (v_bl, v_cell, -1.0)
        };
        let v_ds = v_d - v_s;
        let v_ov = self.vpp - v_s - self.vth_access(v_s);
        if v_ov <= 0.0 || v_ds <= 0.0 {
            return 0.0;
        }
        let i_ch = if v_ds < v_ov {
            beta * (v_ov * v_ds - 0.5 * v_ds * v_ds)
        } else {
            0.5 * beta * v_ov * v_ov
        };
        // Channel and cell resistor in series.
        let r_ch = v_ds / i_ch;
        sign * v_ds / (r_ch + self.cell_resistance)
    }

    /// Latch current into the bitline once the amplifier has fired.
    fn latch_current(&self, gain: f64, v_bl: f64) -> f64 {
        let v_ref = self.precharge();
        let x = v_bl - v_ref;
        let (span, headroom) = if x >= 0.0 {
            (self.vdd - v_ref, (self.vdd - v_bl).max(0.0))
        } else {
            (v_ref, v_bl.max(0.0))
        };
        let regen = gain * x.abs() * headroom / span;
        // The pull-up/pull-down path cannot source more than the bitline resistance allows.
        let limit = headroom / self.bitline_resistance;
        x.signum() * regen.min(limit)
    }
}

/// Saturation voltage the cell can be restored to: the source voltage at which
/// the access device's overdrive vanishes, capped at VDD.
pub fn saturation_voltage(params: &CircuitParams) -> f64 {
    let v = (params.vpp - params.vth0) / (1.0 + params.body_coefficient);
    v.clamp(0.0, params.vdd)
}

/// Shared bitline voltage after full charge sharing (charge conservation).
pub fn charge_sharing_voltage(params: &CircuitParams, v_cell_initial: f64, v_precharge: f64) -> f64 {
    let cb = params.bitline_capacitance;
    let cc = params.cell_capacitance;
    (cb * v_precharge + cc * v_cell_initial) / (cb + cc)
}

/// Least-squares fit of the two threshold constants to saturation anchors
/// `(vpp, reduction)`, where `reduction` is the fractional drop below VDD.
///
/// Returns `(vth0, body_coefficient)`.
pub fn fit_saturation(anchors: &[(f64, f64)], vdd: f64) -> Result<(f64, f64), CircuitError> {
    if anchors.len() < 2 {
        return Err(CircuitError::InvalidParams("need at least two anchors".into()));
    }
    // v_sat = (vpp - vth0) / (1 + body) is linear in vpp: v_sat = a * vpp + b.
    let n = anchors.len() as f64;
    let xs: Vec<f64> = anchors.iter().map(|a| a.0).collect();
    let ys: Vec<f64> = anchors.iter().map(|a| vdd * (1.0 - a.1)).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(CircuitError::InvalidParams("anchors need distinct vpp values".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let a = sxy / sxx;
    let b = my - a * mx;
    if a <= 0.0 {
        return Err(CircuitError::InvalidParams("saturation must increase with vpp".into()));
    }
    let body = 1.0 / a - 1.0;
    let vth0 = -b / a;
    Ok((vth0, body))
}

/// One sampled point of an activation waveform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveformPoint {
    pub time_ns: f64,
    pub v_bitline: f64,
    pub v_cell: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationResult {
    pub waveform: Vec<WaveformPoint>,
    /// First time the bitline reaches the readable threshold, in ns.
    pub trcd_min: Option<f64>,
    /// First time the cell is back above the completion fraction of saturation, in ns.
    pub tras_min: Option<f64>,
    pub v_saturation: f64,
}

impl ActivationResult {
    pub fn bitline_at(&self, time_ns: f64) -> Option<f64> {
        interpolate(&self.waveform, time_ns, |p| p.v_bitline)
    }

    pub fn cell_at(&self, time_ns: f64) -> Option<f64> {
        interpolate(&self.waveform, time_ns, |p| p.v_cell)
    }

    /// CSV with header `time_ns,v_bitline,v_cell`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "time_ns,v_bitline,v_cell")?;
        for p in &self.waveform {
            writeln!(out, "{:.4},{:.6},{:.6}", p.time_ns, p.v_bitline, p.v_cell)?;
        }
        Ok(())
    }
}

fn interpolate(w: &[WaveformPoint], t: f64, f: impl Fn(&WaveformPoint) -> f64) -> Option<f64> {
    let i = w.partition_point(|p| p.time_ns < t);
    if i == 0 {
        return w.first().filter(|p| (p.time_ns - t).abs() < 1e-9).map(&f);
    }
    let b = w.get(i)?;
    let a = &w[i - 1];
    let s = (t - a.time_ns) / (b.time_ns - a.time_ns);
    Some(f(a) + s * (f(b) - f(a)))
}

/// Integration options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integration {
    /// Fixed step in ns.
    pub step_ns: f64,
    pub duration_ns: f64,
    /// Waveform sampling interval in ns; `None` disables capture.
    pub sample_ns: Option<f64>,
    /// Stop once both latencies are known.
    pub stop_early: bool,
    /// Stop as soon as tRCD is known.
    pub stop_at_trcd: bool,
}

impl Integration {
    pub fn new(duration_ns: f64) -> Self {
        Self {
            step_ns: 1e-3,
            duration_ns,
            sample_ns: Some(0.01),
            stop_early: false,
            stop_at_trcd: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Outcome {
    trcd: Option<f64>,
    tras: Option<f64>,
}

fn integrate(p: &CircuitParams, opts: &Integration, mut capture: Option<&mut Vec<WaveformPoint>>) -> Outcome {
    let dt = opts.step_ns * NS;
    let steps = (opts.duration_ns / opts.step_ns).round() as usize;
    let cc = p.cell_capacitance;
    let cb = p.bitline_capacitance;
    let beta = p.access_beta();
    let gain = p.latch_gain();
    let v_sat = saturation_voltage(p);
    let v_pre = p.precharge();
    let v_read = p.v_readable();
    let restore_target = p.restoration_completion_fraction * v_sat;

    let mut vc = p.v_cell_initial.unwrap_or(v_sat);
    let mut vb = v_pre;
    let mut fired = false;
    let mut dipped = vc < restore_target;
    let mut out = Outcome { trcd: None, tras: None };

    let sample_every = opts
        .sample_ns
        .map(|s| ((s / opts.step_ns).round() as usize).max(1));
    if let (Some(buf), Some(_)) = (capture.as_deref_mut(), sample_every) {
        buf.push(WaveformPoint { time_ns: 0.0, v_bitline: vb, v_cell: vc });
    }

    let deriv = |vc: f64, vb: f64, fired: bool| -> (f64, f64) {
        let i_acc = p.access_current(beta, vc, vb);
        let i_sa = if fired && p.sense_amp_enabled {
            p.latch_current(gain, vb)
        } else {
            0.0
        };
        (i_acc / cc, (i_sa - i_acc) / cb)
    };

    let mut settled_steps = 0usize;
    for k in 1..=steps {
        let (k1c, k1b) = deriv(vc, vb, fired);
        let (pc, pb) = (vc + dt * k1c, vb + dt * k1b);
        let (k2c, k2b) = deriv(pc, pb, fired);
        let nc = vc + 0.5 * dt * (k1c + k2c);
        let nb = vb + 0.5 * dt * (k1b + k2b);
        let t_prev = (k - 1) as f64 * opts.step_ns;

        if out.trcd.is_none() && vb < v_read && nb >= v_read {
            out.trcd = Some(t_prev + opts.step_ns * (v_read - vb) / (nb - vb));
        }
        if !dipped && nc < restore_target {
            dipped = true;
        } else if dipped && out.tras.is_none() && vc < restore_target && nc >= restore_target {
            out.tras = Some(t_prev + opts.step_ns * (restore_target - vc) / (nc - vc));
        }
        // A bitline that has stopped moving before the latch fires will never fire it.
        if !fired && (nb - vb).abs() < 1e-9 * opts.step_ns {
            settled_steps += 1;
        } else {
            settled_steps = 0;
        }

        vc = nc;
        vb = nb;
        if !fired && (vb - v_pre).abs() >= p.sense_margin && k as f64 * opts.step_ns >= p.sense_enable_ns {
            fired = true;
        }
        if let (Some(buf), Some(every)) = (capture.as_deref_mut(), sample_every) {
            if k % every == 0 {
                buf.push(WaveformPoint {
                    time_ns: k as f64 * opts.step_ns,
                    v_bitline: vb,
                    v_cell: vc,
                });
            }
        }
        if opts.stop_at_trcd && out.trcd.is_some() {
            break;
        }
        if opts.stop_early {
            if out.trcd.is_some() && out.tras.is_some() {
                break;
            }
            if !fired && settled_steps > 2000 {
                break;
            }
        }
    }
    out
}

/// Simulate one activation of a charged cell for `duration_ns`.
pub fn simulate_activation(params: &CircuitParams, duration_ns: f64) -> Result<ActivationResult, CircuitError> {
    simulate_with(params, &Integration::new(duration_ns))
}

pub fn simulate_with(params: &CircuitParams, opts: &Integration) -> Result<ActivationResult, CircuitError> {
    params.validate()?;
    if opts.duration_ns < 40.0 {
        return Err(CircuitError::InvalidParams(format!(
            "duration must be at least 40 ns, got {}",
            opts.duration_ns
        )));
    }
    if !(opts.step_ns > 0.0 && opts.step_ns <= 1e-3 + 1e-12) {
        return Err(CircuitError::InvalidParams("step must be in (0, 1 ps]".into()));
    }
    let mut waveform = Vec::new();
    let o = integrate(params, opts, Some(&mut waveform));
    let result = ActivationResult {
        waveform,
        trcd_min: o.trcd,
        tras_min: o.tras,
        v_saturation: saturation_voltage(params),
    };
    let missing = if params.sense_amp_enabled && result.trcd_min.is_none() {
        Some(Latency::Trcd)
    } else if params.sense_amp_enabled && result.tras_min.is_none() {
        Some(Latency::Tras)
    } else {
        None
    };
    match missing {
        Some(latency) => Err(CircuitError::NonConvergence {
            latency,
            duration_ns: opts.duration_ns,
            partial: Box::new(result),
        }),
        None => Ok(result),
    }
}

/// Monte-Carlo sweep configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonteCarloConfig {
    /// Half-width of the uniform relative perturbation applied to each component.
    pub variation_fraction: f64,
    pub runs_per_vpp: usize,
    pub vpp_grid: Vec<f64>,
    pub seed: u64,
    pub duration_ns: f64,
    pub step_ns: f64,
    pub histogram_bin_ns: f64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            variation_fraction: 0.05,
            runs_per_vpp: 10_000,
            vpp_grid: (0..=10).map(|i| 1.5 + 0.1 * i as f64).map(round_decivolt).collect(),
            seed: 0,
            duration_ns: 150.0,
            step_ns: 1e-3,
            histogram_bin_ns: 0.1,
        }
    }
}

pub(crate) fn round_decivolt(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

impl MonteCarloConfig {
    pub fn validate(&self) -> Result<(), CircuitError> {
        if !(0.0..=0.2).contains(&self.variation_fraction) {
            return Err(CircuitError::InvalidConfig("variation_fraction must lie in [0, 0.2]".into()));
        }
        if self.runs_per_vpp == 0 {
            return Err(CircuitError::InvalidConfig("runs_per_vpp must be positive".into()));
        }
        if self.vpp_grid.is_empty() || self.vpp_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CircuitError::InvalidConfig("vpp grid must be non-empty and strictly increasing".into()));
        }
        if self.duration_ns < 40.0 || !(self.step_ns > 0.0 && self.step_ns <= 1e-3 + 1e-12) {
            return Err(CircuitError::InvalidConfig("duration >= 40 ns and step in (0, 1 ps] required".into()));
        }
        Ok(())
    }
}

/// Relative perturbations for one Monte-Carlo run; identical across the VPP grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation(pub [f64; 11]);

impl Perturbation {
    pub fn sample(seed: u64, run: u64, variation: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(run);
        let mut f = [1.0; 11];
        if variation > 0.0 {
            for x in &mut f {
                *x = 1.0 + rng.gen_range(-variation..=variation);
            }
        }
        Perturbation(f)
    }

    pub fn apply(&self, base: &CircuitParams) -> CircuitParams {
        let f = &self.0;
        let mut p = base.clone();
        p.cell_capacitance *= f[0];
        p.cell_resistance *= f[1];
        p.bitline_capacitance *= f[2];
        p.bitline_resistance *= f[3];
        p.access_nmos.width *= f[4];
        p.access_nmos.length *= f[5];
        p.senseamp_nmos.width *= f[6];
        p.senseamp_nmos.length *= f[7];
        p.senseamp_pmos.width *= f[8];
        p.senseamp_pmos.length *= f[9];
        p.vth0 *= f[10];
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn build(values: &[f64], bin_width: f64) -> Self {
        if values.is_empty() {
            return Self { lo: 0.0, bin_width, counts: Vec::new() };
        }
        let lo = (values.iter().cloned().fold(f64::INFINITY, f64::min) / bin_width).floor() * bin_width;
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let n = (((hi - lo) / bin_width).floor() as usize) + 1;
        let mut counts = vec![0u64; n];
        for v in values {
            let i = (((v - lo) / bin_width).floor() as usize).min(n - 1);
            counts[i] += 1;
        }
        Self { lo, bin_width, counts }
    }

    /// Normalized density per bin (integrates to one).
    pub fn density(&self) -> Vec<f64> {
        let total: u64 = self.counts.iter().sum();
        self.counts
            .iter()
            .map(|&c| c as f64 / (total.max(1) as f64 * self.bin_width))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub histogram: Histogram,
}

impl Summary {
    pub fn of(values: &[f64], bin_width: f64) -> Self {
        let n = values.len();
        let mean = if n > 0 { values.iter().sum::<f64>() / n as f64 } else { f64::NAN };
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            count: n,
            mean,
            std: var.sqrt(),
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            histogram: Histogram::build(values, bin_width),
        }
    }
}

/// Distributions at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VppDistribution {
    pub vpp: f64,
    pub runs: usize,
    pub trcd: Summary,
    pub tras: Summary,
    pub v_saturation: Summary,
    pub trcd_failures: usize,
    pub tras_failures: usize,
    /// Largest tRCD over converged runs.
    pub worst_trcd: f64,
    /// False when more than 0.1% of runs never became readable.
    pub reliable: bool,
    /// Per-run tRCD, indexed by run; `None` where the run did not converge.
    #[serde(skip)]
    pub trcd_samples: Vec<Option<f64>>,
    #[serde(skip)]
    pub tras_samples: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub config: MonteCarloConfig,
    pub points: Vec<VppDistribution>,
}

impl MonteCarloReport {
    pub fn at(&self, vpp: f64) -> Option<&VppDistribution> {
        self.points.iter().find(|p| (p.vpp - vpp).abs() < 1e-6)
    }

    /// Histogram records `vpp,metric,bin_lo_ns,bin_hi_ns,count,density`.
    pub fn write_histogram_csv<W: Write>(&self, mut out: W, tras: bool) -> std::io::Result<()> {
        writeln!(out, "vpp,metric,bin_lo_ns,bin_hi_ns,count,density")?;
        for p in &self.points {
            let (name, s) = if tras { ("tras_min", &p.tras) } else { ("trcd_min", &p.trcd) };
            let h = &s.histogram;
            for (i, (c, d)) in h.counts.iter().zip(h.density()).enumerate() {
                let lo = h.lo + i as f64 * h.bin_width;
                writeln!(out, "{:.2},{},{:.4},{:.4},{},{:.6}", p.vpp, name, lo, lo + h.bin_width, c, d)?;
            }
        }
        Ok(())
    }
}

/// Latencies of one perturbed run, without waveform capture.
pub fn run_once(params: &CircuitParams, duration_ns: f64, step_ns: f64) -> (Option<f64>, Option<f64>) {
    let opts = Integration {
        step_ns,
        duration_ns,
        sample_ns: None,
        stop_early: true,
        stop_at_trcd: false,
    };
    let o = integrate(params, &opts, None);
    (o.trcd, o.tras)
}

/// tRCD of one run, integrating only until the bitline becomes readable.
pub fn trcd_once(params: &CircuitParams, duration_ns: f64, step_ns: f64) -> Option<f64> {
    let opts = Integration {
        step_ns,
        duration_ns,
        sample_ns: None,
        stop_early: true,
        stop_at_trcd: true,
    };
    integrate(params, &opts, None).trcd
}

/// Run the Monte-Carlo study. Run `i` uses the same component perturbation at
/// every grid point, so results are paired across VPP and independent of
/// thread scheduling.
pub fn monte_carlo(base: &CircuitParams, config: &MonteCarloConfig) -> Result<MonteCarloReport, CircuitError> {
    config.validate()?;
    base.clone().with_vpp(*config.vpp_grid.last().unwrap()).validate()?;
    let perturbations: Vec<Perturbation> = (0..config.runs_per_vpp as u64)
        .map(|i| Perturbation::sample(config.seed, i, config.variation_fraction))
        .collect();

    let mut points = Vec::with_capacity(config.vpp_grid.len());
    for &vpp in &config.vpp_grid {
        let p0 = base.clone().with_vpp(vpp);
        if p0.vth_access(0.0) >= vpp {
            return Err(CircuitError::InvalidParams(format!("vpp {vpp} below access threshold")));
        }
        let results: Vec<(Option<f64>, Option<f64>, f64)> = perturbations
            .par_iter()
            .map(|pert| {
                let p = pert.apply(&p0);
                let (trcd, tras) = run_once(&p, config.duration_ns, config.step_ns);
                (trcd, tras, saturation_voltage(&p))
            })
            .collect();
        let trcd: Vec<f64> = results.iter().filter_map(|r| r.0).collect();
        let tras: Vec<f64> = results.iter().filter_map(|r| r.1).collect();
        let vsat: Vec<f64> = results.iter().map(|r| r.2).collect();
        let n = results.len();
        let trcd_failures = n - trcd.len();
        let tras_failures = n - tras.len();
        let allowed = n as f64 * 0.001;
        points.push(VppDistribution {
            vpp,
            runs: n,
            worst_trcd: trcd.iter().cloned().fold(f64::NAN, f64::max),
            trcd: Summary::of(&trcd, config.histogram_bin_ns),
            tras: Summary::of(&tras, config.histogram_bin_ns),
            v_saturation: Summary::of(&vsat, 0.01),
            trcd_failures,
            tras_failures,
            reliable: (trcd_failures as f64) <= allowed,
            trcd_samples: results.iter().map(|r| r.0).collect(),
            tras_samples: results.iter().map(|r| r.1).collect(),
        });
    }
    Ok(MonteCarloReport { config: config.clone(), points })
}

/// Relative tRCD guardband against the nominal 13.5 ns.
pub fn guardband(trcd_ns: f64) -> f64 {
    (NOMINAL_TRCD_NS - trcd_ns) / NOMINAL_TRCD_NS
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn saturation_clamps_at_vdd() {
        let p = CircuitParams::default();
        assert_abs_diff_eq!(saturation_voltage(&p), 1.2);
    }

    #[test]
    fn saturation_at_1v7() {
        let p = CircuitParams::default().with_vpp(1.7);
        assert_abs_diff_eq!(saturation_voltage(&p), 0.98, epsilon = 0.01);
    }

    #[test]
    fn fitted_constants_match_frozen_defaults() {
        let (vth0, body) = fit_saturation(&calibration::SATURATION_ANCHORS, 1.2).unwrap();
        assert_abs_diff_eq!(vth0, calibration::VTH0, epsilon = 1e-4);
        assert_abs_diff_eq!(body, calibration::BODY_COEFFICIENT, epsilon = 1e-4);
    }

    #[test]
    fn fit_recovers_exact_line() {
        // Anchors generated from vth0 = 0.6, body = 0.25.
        let anchors: Vec<(f64, f64)> = [1.6, 1.7, 1.9]
            .iter()
            .map(|&v| (v, 1.0 - (v - 0.6) / 1.25 / 1.2))
            .collect();
        let (vth0, body) = fit_saturation(&anchors, 1.2).unwrap();
        assert_abs_diff_eq!(vth0, 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(body, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn charge_sharing_closed_form() {
        let p = CircuitParams::default();
        assert_abs_diff_eq!(charge_sharing_voltage(&p, 1.2, 0.6), 0.686, epsilon = 5e-4);
        assert_abs_diff_eq!(charge_sharing_voltage(&p, 0.6, 0.6), 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(charge_sharing_voltage(&p, 0.0, 0.6), 0.514, epsilon = 5e-4);
    }

    #[test]
    fn rejects_short_duration_and_low_vpp() {
        let p = CircuitParams::default();
        assert!(simulate_activation(&p, 10.0).is_err());
        let low = CircuitParams::default().with_vpp(0.4);
        assert!(matches!(simulate_activation(&low, 50.0), Err(CircuitError::InvalidParams(_))));
    }

    #[test]
    fn latencies_ordered_and_saturation_bounded() {
        let r = simulate_activation(&CircuitParams::default(), 60.0).unwrap();
        let (trcd, tras) = (r.trcd_min.unwrap(), r.tras_min.unwrap());
        assert!(trcd <= tras, "{trcd} {tras}");
        assert!(r.v_saturation <= 1.2);
    }

    #[test]
    fn charge_conserved_without_sense_amp() {
        let mut p = CircuitParams::default();
        p.sense_amp_enabled = false;
        let r = simulate_activation(&p, 40.0).unwrap();
        let q = |w: &WaveformPoint| p.cell_capacitance * w.v_cell + p.bitline_capacitance * w.v_bitline;
        let q0 = q(&r.waveform[0]);
        for w in &r.waveform {
            assert!(((q(w) - q0) / q0).abs() < 1e-3);
        }
    }

    #[test]
    fn degenerate_monte_carlo_has_zero_spread() {
        let cfg = MonteCarloConfig {
            variation_fraction: 0.0,
            runs_per_vpp: 4,
            vpp_grid: vec![2.0, 2.5],
            step_ns: 2e-3 / 2.0,
            ..Default::default()
        };
        let r = monte_carlo(&CircuitParams::default(), &cfg).unwrap();
        for p in &r.points {
            assert_eq!(p.trcd.std, 0.0);
            assert_eq!(p.trcd.count, 4);
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = MonteCarloConfig { variation_fraction: 0.3, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = MonteCarloConfig { vpp_grid: vec![2.0, 1.9], ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn histogram_density_integrates_to_one() {
        let h = Histogram::build(&[1.0, 1.05, 1.3, 2.0, 2.01], 0.1);
        let mass: f64 = h.density().iter().map(|d| d * h.bin_width).sum();
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-12);
    }
}
