//! Per-row cell populations.
//!
//! Row-level parameters are cheap to derive from the device seed and are
//! computed on first touch. Cell populations (hammer thresholds, retention
//! times) are materialized only when a row actually needs them, and only up
//! to a coverage bound that grows on demand. Every cell value is a pure
//! function of (seed, bank, row, bit), so growing the bound never changes
//! cells that were already materialized.

use super::REFERENCE;
use crate::dist::{norm_cdf, norm_ppf, Dist};
use crate::pattern::DataPattern;
use crate::profile::{DeviceProfile, WeakCells};
use crate::rng::{derive, rng_for, unit};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;

const TAG_ROW: u64 = 0x524f_57;
const ATTR_HC: u64 = 1;
const ATTR_HC_FACTOR: u64 = 2;
const ATTR_BER_FACTOR: u64 = 3;
const ATTR_PATTERN: u64 = 4;
const ATTR_NOISE: u64 = 5;
const ATTR_TRCD: u64 = 6;
const ATTR_WEAK: u64 = 7;
const ATTR_MISC: u64 = 8;

/// Injected cell parameters for a deterministic row. Values hold at every VPP.
#[derive(Debug, Clone, PartialEq)]
pub struct RowFixture {
    /// `(bit, hammer threshold)` pairs; threshold is the per-aggressor count under the worst pattern.
    pub hammer: Vec<(u16, f64)>,
    pub worst_pattern: DataPattern,
    /// `(bit, retention time in seconds)` pairs.
    pub retention: Vec<(u16, f64)>,
    pub trcd_ns: f64,
    pub true_bit: bool,
}

impl RowFixture {
    pub fn new(worst_pattern: DataPattern) -> Self {
        Self { hammer: Vec::new(), worst_pattern, retention: Vec::new(), trcd_ns: 10.0, true_bit: true }
    }
}

/// Module-wide quantities derived once per device.
#[derive(Debug, Clone)]
pub(crate) struct ModelConstants {
    /// Scale of the exponential tail of non-weakest cell thresholds (infinite: no tail cells).
    pub tail_scale: f64,
    /// Largest HC factor the floor clamp may impose.
    pub hc_hi_safe: f64,
    pub retention_floor: f64,
    pub bits: u32,
}

impl ModelConstants {
    pub fn new(p: &DeviceProfile) -> Self {
        let h = &p.hammer;
        let bits = p.bits_per_row;
        Self {
            tail_scale: solve_tail_scale(&h.hc_first_nominal_dist, h.ber_nominal, bits, crate::rng::hash_str(&p.id)),
            hc_hi_safe: h.hc_vpp_factor_dist.support().1,
            retention_floor: p.retention.retention_nominal_dist.lower_bound(),
            bits,
        }
    }
}

/// Expected row BER at the reference count for weakest-cell threshold `h` and tail scale `s`.
fn row_ber(h: f64, s: f64, bits: u32) -> f64 {
    if h > REFERENCE {
        return 0.0;
    }
    let tail = if s.is_finite() { -(-(REFERENCE - h) / s).exp_m1() } else { 0.0 };
    (1.0 + (bits - 1) as f64 * tail) / bits as f64
}

/// Tail scale such that the mean row BER over the HC_first distribution hits `target`.
pub(crate) fn solve_tail_scale(hc: &Dist, target: f64, bits: u32, key: u64) -> f64 {
    let mut rng = rng_for(key, &[0x7a11]);
    let hs: Vec<f64> = (0..4096).map(|_| hc.sample(&mut rng)).collect();
    let mean = |s: f64| hs.iter().map(|&h| row_ber(h, s, bits)).sum::<f64>() / hs.len() as f64;
    if mean(f64::INFINITY) >= target {
        return f64::INFINITY;
    }
    let (mut lo, mut hi) = (0.0f64, 60.0f64); // natural log of scale
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if mean(m.exp()) > target {
            lo = m;
        } else {
            hi = m;
        }
    }
    (0.5 * (lo + hi)).exp()
}

/// Cheap per-row parameters.
#[derive(Debug, Clone)]
pub(crate) struct RowParams {
    pub fixture: bool,
    /// Nominal threshold of the weakest cell.
    pub h_row: f64,
    pub weakest_bit: u16,
    /// HC factor at `vpp_min`, after the module floor clamp.
    pub f_hc: f64,
    pub f_ber: f64,
    pub ber_round: f64,
    pub worst_pattern: DataPattern,
    pub true_bit: bool,
    pub sigma: f64,
    pub noise_key: u64,
    pub trcd_nominal: f64,
    pub trcd_slope: f64,
    pub column_key: u64,
    pub slow_column: u32,
    pub cell_key: u64,
    /// Indices into the profile's weak populations present in this row.
    pub weak: Vec<(usize, bool)>,
}

impl RowParams {
    pub fn sample(p: &DeviceProfile, k: &ModelConstants, seed: u64, bank: u32, row: u32) -> Self {
        let h = &p.hammer;
        let r = |attr: u64| rng_for(seed, &[TAG_ROW, bank as u64, row as u64, attr]);

        let mut g = r(ATTR_HC);
        let h_row = h.hc_first_nominal_dist.sample(&mut g).max(1.0);
        let weakest_bit = g.gen_range(0..p.bits_per_row) as u16;

        let mut g = r(ATTR_HC_FACTOR);
        let mut f_hc = h.hc_vpp_factor_dist.sample(&mut g, h.opposite_trend_fraction_hc);
        if let Some(floor) = h.hc_min_vpp_min {
            f_hc = f_hc.max((floor / h_row).min(k.hc_hi_safe));
        }

        let mut g = r(ATTR_BER_FACTOR);
        let below = (1.0 - h.ber_vpp_factor_dist.unity_fraction - h.opposite_trend_fraction_ber).max(0.0);
        let f_ber = h.ber_vpp_factor_dist.sample(&mut g, below);
        let ber_round = g.gen::<f64>();

        let mut g = r(ATTR_PATTERN);
        let total: f64 = h.worst_pattern_dist.iter().sum();
        let mut u = g.gen::<f64>() * total;
        let mut worst = 5;
        for (i, w) in h.worst_pattern_dist.iter().enumerate() {
            if u < *w {
                worst = i;
                break;
            }
            u -= w;
        }

        let mut g = r(ATTR_NOISE);
        let z: f64 = g.sample(StandardNormal);
        let sigma = if h.noise.sigma_median > 0.0 {
            (h.noise.sigma_median * (h.noise.sigma_log_spread * z).exp()).min(0.5)
        } else {
            0.0
        };
        let noise_key = g.gen();

        let mut g = r(ATTR_TRCD);
        let trcd_nominal = p.trcd.trcd_min_nominal_dist.sample(&mut g);
        let trcd_slope = p.trcd.trcd_vpp_slope_dist.sample(&mut g);
        let column_key = g.gen();
        let slow_column = g.gen_range(0..p.bits_per_row / 64);

        let mut g = r(ATTR_WEAK);
        let mut weak = Vec::new();
        let u_excl: f64 = g.gen();
        let mut acc = 0.0;
        let mut taken = false;
        for (i, w) in p.retention.weak.iter().enumerate() {
            let rare_u: f64 = g.gen();
            let u_own: f64 = g.gen();
            let hit = if w.exclusive {
                let hit = !taken && u_excl >= acc && u_excl < acc + w.row_fraction;
                acc += w.row_fraction;
                taken |= hit;
                hit
            } else {
                u_own < w.row_fraction
            };
            if hit {
                weak.push((i, rare_u < w.rare_fraction));
            }
        }

        let mut g = r(ATTR_MISC);
        Self {
            fixture: false,
            h_row,
            weakest_bit,
            f_hc,
            f_ber,
            ber_round,
            worst_pattern: DataPattern::ALL[worst],
            true_bit: g.gen(),
            sigma,
            noise_key,
            trcd_nominal,
            trcd_slope,
            column_key,
            slow_column,
            cell_key: g.gen(),
            weak,
        }
    }

    pub fn from_fixture(f: &RowFixture) -> Self {
        let h_row = f.hammer.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        Self {
            fixture: true,
            h_row,
            weakest_bit: 0,
            f_hc: 1.0,
            f_ber: 1.0,
            ber_round: 0.0,
            worst_pattern: f.worst_pattern,
            true_bit: f.true_bit,
            sigma: 0.0,
            noise_key: 0,
            trcd_nominal: f.trcd_ns,
            trcd_slope: 0.0,
            column_key: 0,
            slow_column: 0,
            cell_key: 0,
            weak: Vec::new(),
        }
    }

    /// Smallest threshold any cell of the row can have at any VPP (before pattern and noise).
    pub fn threshold_floor(&self) -> f64 {
        self.h_row * self.f_hc.min(1.0)
    }

    /// Threshold of the weakest cell at interpolation weight `s`.
    pub fn weakest_at(&self, s: f64) -> f64 {
        self.h_row * (1.0 + (self.f_hc - 1.0) * s)
    }

    /// Per-epoch threshold multiplier: log-normal clipped at one, so half the
    /// epochs see the intrinsic thresholds and noise only ever delays a flip.
    pub fn noise(&self, epoch: u64) -> f64 {
        if self.sigma == 0.0 {
            return 1.0;
        }
        let u = unit(derive(self.noise_key, &[epoch]));
        if u <= 0.5 {
            return 1.0;
        }
        (self.sigma * norm_ppf(u)).exp()
    }

    /// Activation latency the column needs at interpolation weight `s` and VPP drop `dv`.
    pub fn column_trcd(&self, col: u32, dv: f64, spread: f64) -> f64 {
        let row = self.trcd_nominal + self.trcd_slope * dv.max(0.0);
        if self.fixture || col == self.slow_column {
            return row;
        }
        row - spread * unit(derive(self.column_key, &[col as u64]))
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct HammerCell {
    pub nominal: f64,
    pub mult: f64,
    pub bit: u16,
}

impl HammerCell {
    pub fn at(&self, s: f64) -> f64 {
        self.nominal * (1.0 + (self.mult - 1.0) * s)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct HammerCells {
    /// Sorted by threshold; the order is the same at every VPP.
    pub cells: Vec<HammerCell>,
    /// All cells with nominal threshold at or below this bound are present.
    pub coverage: f64,
    /// Smallest per-cell VPP multiplier.
    pub min_mult: f64,
}

impl HammerCells {
    pub fn fixture(f: &RowFixture) -> Self {
        let mut cells: Vec<HammerCell> =
            f.hammer.iter().map(|&(bit, t)| HammerCell { nominal: t, mult: 1.0, bit }).collect();
        cells.sort_by(|a, b| a.nominal.total_cmp(&b.nominal).then(a.bit.cmp(&b.bit)));
        Self { cells, coverage: f64::INFINITY, min_mult: 1.0 }
    }

    /// Materialize cells with nominal threshold up to at least `bound`.
    pub fn materialize(rp: &RowParams, k: &ModelConstants, bound: f64) -> Self {
        let mut bound = bound.max(2.0 * REFERENCE);
        loop {
            let mut cells = vec![HammerCell { nominal: rp.h_row, mult: 1.0, bit: rp.weakest_bit }];
            let s = k.tail_scale;
            if s.is_finite() {
                let p_max = if bound.is_finite() { -(-(bound - rp.h_row) / s).exp_m1() } else { 1.0 };
                for bit in 0..k.bits {
                    if bit as u16 == rp.weakest_bit {
                        continue;
                    }
                    let u = unit(derive(rp.cell_key, &[bit as u64]));
                    if u < p_max {
                        cells.push(HammerCell { nominal: rp.h_row - s * (-u).ln_1p(), mult: 1.0, bit: bit as u16 });
                    }
                }
            }
            cells.sort_by(|a, b| a.nominal.total_cmp(&b.nominal).then(a.bit.cmp(&b.bit)));
            let all = cells.len() as u32 == k.bits || !s.is_finite() || bound.is_infinite();
            match assign_multipliers(rp, &mut cells, all) {
                Some(min_mult) => return Self { cells, coverage: if all { f64::INFINITY } else { bound }, min_mult },
                None => bound *= 4.0,
            }
        }
    }

    /// Number of cells whose threshold at weight `s`, scaled by `scale`, is at most `count / 2`.
    pub fn flipped(&self, s: f64, scale: f64, counter: f64) -> usize {
        self.cells.partition_point(|c| 2.0 * c.at(s) * scale <= counter)
    }

    /// Whether every cell that could flip under `counter` is materialized.
    pub fn covers(&self, counter: f64) -> bool {
        self.coverage.is_infinite() || counter <= 2.0 * self.coverage * self.min_mult.min(1.0)
    }
}

/// Piecewise log-linear VPP multipliers anchoring the weakest cell at `f_hc` and
/// the reference-count cell count at `f_ber` times its nominal value. Returns
/// `None` if more cells are needed to place the upper anchor.
fn assign_multipliers(rp: &RowParams, cells: &mut [HammerCell], all: bool) -> Option<f64> {
    let t_min = rp.h_row;
    let n = cells.partition_point(|c| c.nominal <= REFERENCE);
    let mut n_target = (rp.f_ber * n as f64 + rp.ber_round).floor() as usize;
    if t_min * rp.f_hc <= REFERENCE {
        n_target = n_target.max(1);
    } else {
        n_target = 0;
    }
    if n_target >= cells.len() && !all {
        return None;
    }
    let n_target = n_target.min(cells.len());
    if n_target == 0 {
        for c in cells.iter_mut() {
            c.mult = rp.f_hc;
        }
        return Some(rp.f_hc);
    }
    let last = cells[n_target - 1].nominal;
    let q = match cells.get(n_target) {
        Some(next) => (last * next.nominal).sqrt(),
        None => last * 1.5,
    };
    let q = q.max(t_min * (1.0 + 1e-9));
    let (lt, lq) = (t_min.ln(), q.ln());
    let (lf, lm) = (rp.f_hc.ln(), (REFERENCE / q).ln());
    let mut min_mult = f64::INFINITY;
    for c in cells.iter_mut() {
        let x = ((c.nominal.ln() - lt) / (lq - lt)).clamp(0.0, 1.0);
        c.mult = (lf + (lm - lf) * x).exp();
        min_mult = min_mult.min(c.mult);
    }
    Some(min_mult.min(rp.f_hc).min(REFERENCE / q))
}

#[derive(Debug, Clone)]
pub(crate) struct RetentionCells {
    /// `(nominal retention seconds, bit)`, sorted.
    pub cells: Vec<(f64, u16)>,
    pub coverage: f64,
}

impl RetentionCells {
    pub fn fixture(f: &RowFixture) -> Self {
        let mut cells = f.retention.clone().into_iter().map(|(b, t)| (t, b)).collect::<Vec<_>>();
        cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Self { cells, coverage: f64::INFINITY }
    }

    pub fn materialize(p: &DeviceProfile, rp: &RowParams, bound: f64) -> Self {
        let bits = p.bits_per_row;
        let bulk_cdf = bulk_sampler(&p.retention.retention_nominal_dist);
        let p_max = bulk_cdf.cdf(bound);
        let mut cells: Vec<(f64, u16)> = Vec::new();
        if p_max > 0.0 {
            for bit in 0..bits {
                let u = unit(derive(rp.cell_key, &[0x7e7e, bit as u64]));
                if u < p_max {
                    cells.push((bulk_cdf.quantile(u), bit as u16));
                }
            }
        }
        let scale_min = p.retention_scale(p.vpp_min);
        for &(i, rare) in &rp.weak {
            let w: &WeakCells = &p.retention.weak[i];
            let count = if rare { w.rare_cells_per_row } else { w.cells_per_row } as usize;
            let mut g = rng_for(rp.cell_key, &[0x3ea4, i as u64]);
            let words = (bits / 64) as usize;
            for word in sample_indices(&mut g, words, count.min(words)) {
                let bit = (word * 64 + g.gen_range(0..64)) as u16;
                let t = g.gen_range(w.retention_lo..w.retention_hi) / scale_min;
                if t <= bound {
                    match cells.iter_mut().find(|c| c.1 == bit) {
                        Some(c) => c.0 = c.0.min(t),
                        None => cells.push((t, bit)),
                    }
                }
            }
        }
        cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Self { cells, coverage: bound }
    }
}

/// Inverse-CDF view of a retention distribution.
struct BulkSampler {
    dist: Dist,
    lo_cdf: f64,
}

fn bulk_sampler(d: &Dist) -> BulkSampler {
    let lo_cdf = match *d {
        Dist::LogNormal { median, sigma, floor } if sigma > 0.0 && floor > 0.0 => {
            norm_cdf((floor / median).ln() / sigma)
        }
        _ => 0.0,
    };
    BulkSampler { dist: d.clone(), lo_cdf }
}

impl BulkSampler {
    fn cdf(&self, t: f64) -> f64 {
        if t.is_infinite() {
            return 1.0;
        }
        match self.dist {
            Dist::LogNormal { median, sigma, floor } => {
                if t < floor {
                    0.0
                } else if sigma == 0.0 {
                    if t >= median.max(floor) { 1.0 } else { 0.0 }
                } else {
                    ((norm_cdf((t / median).ln() / sigma) - self.lo_cdf) / (1.0 - self.lo_cdf)).clamp(0.0, 1.0)
                }
            }
            Dist::Point { value } => (t >= value) as u8 as f64,
            Dist::Uniform { lo, hi } => ((t - lo) / (hi - lo)).clamp(0.0, 1.0),
            Dist::ShiftedExponential { location, mean_excess } => {
                if t < location { 0.0 } else { -(-(t - location) / mean_excess).exp_m1() }
            }
            Dist::TruncNormal { mean, std, lo, hi } => {
                let (a, b) = (norm_cdf((lo - mean) / std), norm_cdf((hi - mean) / std));
                ((norm_cdf((t.clamp(lo, hi) - mean) / std) - a) / (b - a)).clamp(0.0, 1.0)
            }
        }
    }

    fn quantile(&self, u: f64) -> f64 {
        match self.dist {
            Dist::LogNormal { median, sigma, floor } => {
                if sigma == 0.0 {
                    return median.max(floor);
                }
                let p = self.lo_cdf + u * (1.0 - self.lo_cdf);
                (median * (sigma * norm_ppf(p.clamp(1e-300, 1.0 - 1e-16))).exp()).max(floor)
            }
            Dist::Point { value } => value,
            Dist::Uniform { lo, hi } => lo + u * (hi - lo),
            Dist::ShiftedExponential { location, mean_excess } => location - mean_excess * (-u).ln_1p(),
            Dist::TruncNormal { mean, std, lo, hi } => {
                let (a, b) = (norm_cdf((lo - mean) / std), norm_cdf((hi - mean) / std));
                (mean + std * norm_ppf(a + u * (b - a))).clamp(lo, hi)
            }
        }
    }
}
