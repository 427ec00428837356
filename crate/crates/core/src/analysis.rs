//! Reductions from per-row measurements to fleet statistics.

use crate::circuit::NOMINAL_TRCD_NS;
use crate::rng::rng_for;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const BOOTSTRAP_RESAMPLES: usize = 2000;
pub const DENSITY_BIN_WIDTH: f64 = 0.02;
pub const WORD_BITS: u32 = 64;

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let (i, f) = (h.floor() as usize, h.fract());
    if i + 1 < sorted.len() {
        sorted[i] + f * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPoint {
    pub vpp: f64,
    pub rows: usize,
    pub mean: f64,
    pub band_lo: f64,
    pub band_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedSweep {
    pub points: Vec<NormalizedPoint>,
    /// Rows left out because their nominal value was missing or zero.
    pub excluded_rows: usize,
}

fn vpp_key(v: f64) -> i64 {
    (v * 1000.0).round() as i64
}

/// Per-row ratios to the row's own value at `nominal`: `row -> [(vpp, ratio)]`.
///
/// Rows with no usable nominal value are dropped; missing values at other
/// VPPs are skipped.
pub fn normalize_rows(values: &[(u32, f64, Option<f64>)], nominal: f64) -> (BTreeMap<u32, Vec<(f64, f64)>>, usize) {
    let mut by_row: BTreeMap<u32, Vec<(f64, Option<f64>)>> = BTreeMap::new();
    for &(row, vpp, v) in values {
        by_row.entry(row).or_default().push((vpp, v));
    }
    let mut out = BTreeMap::new();
    let mut excluded = 0;
    for (row, pts) in by_row {
        let base = pts.iter().find(|p| vpp_key(p.0) == vpp_key(nominal)).and_then(|p| p.1);
        match base {
            Some(b) if b > 0.0 => {
                let ratios = pts.iter().filter_map(|&(vpp, v)| v.map(|v| (vpp, v / b))).collect();
                out.insert(row, ratios);
            }
            _ => excluded += 1,
        }
    }
    (out, excluded)
}

/// Mean of per-row normalized values per VPP with a 90% percentile-bootstrap band across rows.
pub fn normalize_and_band(values: &[(u32, f64, Option<f64>)], nominal: f64, seed: u64) -> NormalizedSweep {
    let (rows, excluded_rows) = normalize_rows(values, nominal);
    let mut by_vpp: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for ratios in rows.values() {
        for &(vpp, r) in ratios {
            by_vpp.entry(vpp_key(vpp)).or_default().push(r);
        }
    }
    let points = by_vpp
        .into_iter()
        .map(|(k, v)| {
            let (lo, hi) = bootstrap_band(&v, 0.90, seed ^ k as u64);
            NormalizedPoint { vpp: k as f64 / 1000.0, rows: v.len(), mean: mean(&v), band_lo: lo, band_hi: hi }
        })
        .collect();
    NormalizedSweep { points, excluded_rows }
}

/// Percentile bootstrap interval of the mean.
pub fn bootstrap_band(v: &[f64], level: f64, seed: u64) -> (f64, f64) {
    if v.len() <= 1 {
        let m = v.first().copied().unwrap_or(f64::NAN);
        return (m, m);
    }
    let mut rng = rng_for(seed, &[0xb007]);
    let mut means: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| (0..v.len()).map(|_| v[rng.gen_range(0..v.len())]).sum::<f64>() / v.len() as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let a = (1.0 - level) / 2.0;
    (quantile(&means, a), quantile(&means, 1.0 - a))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    pub bin_width: f64,
    /// Lower edge of the first bin.
    pub lo: f64,
    pub counts: Vec<u64>,
    pub min: f64,
    pub max: f64,
    pub fraction_above_one: f64,
    pub fraction_below_one: f64,
}

impl Density {
    /// Probability density per bin; sums to one after multiplying by the bin width.
    pub fn density(&self) -> Vec<f64> {
        let n: u64 = self.counts.iter().sum();
        self.counts.iter().map(|&c| c as f64 / n as f64 / self.bin_width).collect()
    }
}

/// Histogram of normalized values with bins aligned to multiples of `bin_width`.
pub fn population_density(values: &[f64], bin_width: f64) -> Density {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = values.len() as f64;
    if values.is_empty() {
        return Density { bin_width, lo: 0.0, counts: vec![], min, max, fraction_above_one: 0.0, fraction_below_one: 0.0 };
    }
    let first = (min / bin_width + 1e-9).floor() as i64;
    let last = (max / bin_width + 1e-9).floor() as i64;
    let mut counts = vec![0u64; (last - first + 1) as usize];
    for &v in values {
        counts[((v / bin_width + 1e-9).floor() as i64 - first) as usize] += 1;
    }
    Density {
        bin_width,
        lo: first as f64 * bin_width,
        counts,
        min,
        max,
        fraction_above_one: values.iter().filter(|&&v| v > 1.0 + 1e-12).count() as f64 / n,
        fraction_below_one: values.iter().filter(|&&v| v < 1.0 - 1e-12).count() as f64 / n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
    pub measurements: usize,
    /// Measurements left out for a zero mean or fewer than two iterations.
    pub excluded: usize,
}

/// Coefficient of variation with the population standard deviation.
pub fn coefficient_of_variation(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v);
    if m == 0.0 {
        return None;
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
    Some(var.sqrt() / m.abs())
}

/// Percentiles of the per-measurement CV across iterations.
pub fn cv_percentiles<'a>(measurements: impl IntoIterator<Item = &'a [f64]>) -> CvReport {
    let mut cvs = Vec::new();
    let mut excluded = 0;
    for m in measurements {
        match coefficient_of_variation(m) {
            Some(c) => cvs.push(c),
            None => excluded += 1,
        }
    }
    cvs.sort_by(f64::total_cmp);
    CvReport {
        p90: quantile(&cvs, 0.90),
        p95: quantile(&cvs, 0.95),
        p99: quantile(&cvs, 0.99),
        measurements: cvs.len(),
        excluded,
    }
}

/// Word-level flip counts of one row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correctability {
    /// Words with exactly 0, exactly 1, and 2 or more flips.
    pub words: [u32; 3],
}

impl Correctability {
    pub fn erroneous(&self) -> bool {
        self.words[1] + self.words[2] > 0
    }

    /// Every word has at most one flip, so single-error correction fixes the row.
    pub fn correctable(&self) -> bool {
        self.words[2] == 0
    }
}

/// Partition a row into words and count flips per word.
pub fn secded_analysis(row_bits: u32, flips: &[u32], word_bits: u32) -> Correctability {
    assert!(word_bits > 0 && row_bits % word_bits == 0, "row length must be a multiple of the word size");
    let mut per_word = vec![0u32; (row_bits / word_bits) as usize];
    for &b in flips {
        per_word[(b / word_bits) as usize] += 1;
    }
    let mut words = [0u32; 3];
    for c in per_word {
        words[c.min(2) as usize] += 1;
    }
    Correctability { words }
}

/// Summary over rows at one refresh window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectabilityReport {
    pub window_s: f64,
    pub rows: usize,
    pub erroneous_fraction: f64,
    /// All rows correctable by SECDED.
    pub correctable: bool,
    /// Rows by number of single-flip words.
    pub single_flip_words: BTreeMap<u32, usize>,
}

pub fn correctability_report(window_s: f64, rows: &[Correctability]) -> CorrectabilityReport {
    let mut single = BTreeMap::new();
    for r in rows.iter().filter(|r| r.erroneous()) {
        *single.entry(r.words[1]).or_insert(0) += 1;
    }
    CorrectabilityReport {
        window_s,
        rows: rows.len(),
        erroneous_fraction: rows.iter().filter(|r| r.erroneous()).count() as f64 / rows.len().max(1) as f64,
        correctable: rows.iter().all(Correctability::correctable),
        single_flip_words: single,
    }
}

/// Fraction of rows erroneous at `window` but clean at half of it.
///
/// `rows[i]` maps window (ms, integer) to the row's correctability there.
/// Returns `None` when any row lacks the half window.
pub fn selective_refresh_fraction(rows: &[BTreeMap<u64, Correctability>], window_ms: u64) -> Option<f64> {
    let half = window_ms / 2;
    let mut hit = 0usize;
    for r in rows {
        let now = r.get(&window_ms)?;
        let before = r.get(&half)?;
        if now.erroneous() && !before.erroneous() {
            hit += 1;
        }
    }
    Some(hit as f64 / rows.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleGuardband {
    pub module: String,
    pub trcd_nominal_ns: f64,
    pub trcd_vpp_min_ns: f64,
    pub guardband_nominal: f64,
    pub guardband_vpp_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardbandReport {
    pub modules: Vec<ModuleGuardband>,
    /// Mean relative guardband reduction over modules that stay within the nominal tRCD.
    pub mean_reduction: f64,
    pub exceeding_nominal: Vec<String>,
}

/// Relative tRCD guardband against the nominal 13.5 ns.
pub fn guardband(trcd_ns: f64) -> f64 {
    (NOMINAL_TRCD_NS - trcd_ns) / NOMINAL_TRCD_NS
}

/// `(module, tRCD_min at nominal VPP, tRCD_min at VPPmin)` per module.
pub fn guardband_report(modules: &[(String, f64, f64)]) -> GuardbandReport {
    let rows: Vec<ModuleGuardband> = modules
        .iter()
        .map(|(m, a, b)| ModuleGuardband {
            module: m.clone(),
            trcd_nominal_ns: *a,
            trcd_vpp_min_ns: *b,
            guardband_nominal: guardband(*a),
            guardband_vpp_min: guardband(*b),
        })
        .collect();
    let reductions: Vec<f64> = rows
        .iter()
        .filter(|g| g.trcd_vpp_min_ns <= NOMINAL_TRCD_NS + 1e-9 && g.guardband_nominal > 0.0)
        .map(|g| (g.guardband_nominal - g.guardband_vpp_min) / g.guardband_nominal)
        .collect();
    GuardbandReport {
        mean_reduction: if reductions.is_empty() { 0.0 } else { mean(&reductions) },
        exceeding_nominal: rows
            .iter()
            .filter(|g| g.trcd_vpp_min_ns > NOMINAL_TRCD_NS + 1e-9)
            .map(|g| g.module.clone())
            .collect(),
        modules: rows,
    }
}

/// One VPP level of a module's sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModuleLevel {
    pub vpp: f64,
    /// Smallest HC_first over rows.
    pub hc_first: Option<f64>,
    /// Largest BER over rows.
    pub ber: f64,
}

/// Highest HC_first wins; ties go to the lower BER, then to the higher VPP.
pub fn recommended_vpp(levels: &[ModuleLevel]) -> Option<f64> {
    levels
        .iter()
        .filter(|l| l.hc_first.is_some())
        .max_by(|a, b| {
            a.hc_first
                .partial_cmp(&b.hc_first)
                .unwrap()
                .then(b.ber.total_cmp(&a.ber))
                .then(a.vpp.total_cmp(&b.vpp))
        })
        .map(|l| l.vpp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn single_row_band_collapses() {
        let s = normalize_and_band(&[(1, 2.5, Some(10.0)), (1, 1.8, Some(12.0))], 2.5, 7);
        let p = &s.points[0];
        assert_eq!((p.vpp, p.mean, p.band_lo, p.band_hi), (1.8, 1.2, 1.2, 1.2));
        assert_eq!(s.points[1].mean, 1.0);
    }

    #[test]
    fn rows_without_baseline_are_counted() {
        let s = normalize_and_band(&[(1, 1.8, Some(1.0)), (2, 2.5, Some(0.0)), (3, 2.5, Some(2.0))], 2.5, 1);
        assert_eq!(s.excluded_rows, 2);
        assert_eq!(s.points.len(), 1);
    }

    #[test]
    fn bootstrap_band_covers_true_mean() {
        // Exponential samples with mean 1: the 90% band should cover 1 about 90% of the time.
        let mut covered = 0;
        for seed in 0..500u64 {
            let mut rng = rng_for(seed, &[1]);
            let v: Vec<f64> = (0..200).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
            let (lo, hi) = bootstrap_band(&v, 0.90, seed);
            if lo <= 1.0 && 1.0 <= hi {
                covered += 1;
            }
        }
        assert!(covered as f64 / 500.0 >= 0.88, "{covered}");
    }

    #[test]
    fn point_mass_fills_one_bin() {
        let d = population_density(&[1.07; 50], DENSITY_BIN_WIDTH);
        assert_eq!(d.counts, vec![50]);
        assert_abs_diff_eq!(d.density()[0] * d.bin_width, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cv_closed_form() {
        let m = [9.0, 10.0, 11.0];
        let r = cv_percentiles(std::iter::repeat(&m[..]).take(100));
        assert_abs_diff_eq!(r.p90, 0.0816, epsilon = 1e-4);
        let c = coefficient_of_variation(&m).unwrap();
        assert_abs_diff_eq!(r.p99, c, epsilon = 1e-12);
        assert_eq!(coefficient_of_variation(&[4.0; 10]), Some(0.0));
        assert_eq!(cv_percentiles([&[0.0, 0.0][..], &[1.0][..]]).excluded, 2);
    }

    #[test]
    fn secded_verdicts() {
        let clean = secded_analysis(8192, &[], 64);
        assert!(clean.correctable() && !clean.erroneous());
        assert_eq!(clean.words, [128, 0, 0]);
        assert!(!secded_analysis(8192, &[5, 60], 64).correctable());
        assert_eq!(secded_analysis(8192, &[5, 64, 200, 201], 64).words, [125, 2, 1]);
    }

    #[test]
    fn selective_refresh_counts_new_failures_only() {
        let c = |e: u32| Correctability { words: [128 - e, e, 0] };
        let row = |w64: u32, w128: u32| BTreeMap::from([(32, c(0)), (64, c(w64)), (128, c(w128))]);
        let rows = vec![row(0, 1), row(0, 0), row(1, 1), row(0, 0)];
        assert_eq!(selective_refresh_fraction(&rows, 128), Some(0.25));
        assert_eq!(selective_refresh_fraction(&rows, 64), Some(0.25));
        assert_eq!(selective_refresh_fraction(&rows, 256), None);
        assert_eq!(selective_refresh_fraction(&[row(0, 0)], 64), Some(0.0));
    }

    #[test]
    fn guardband_arithmetic() {
        let r = guardband_report(&[("X".into(), 12.0, 13.0), ("Y".into(), 13.5, 13.5), ("Z".into(), 12.0, 24.0)]);
        assert_abs_diff_eq!(r.modules[0].guardband_nominal, 1.5 / 13.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.mean_reduction, 2.0 / 3.0, epsilon = 1e-12);
        assert_eq!(r.exceeding_nominal, vec!["Z".to_string()]);
    }

    #[test]
    fn recommendation_rule() {
        let l = |vpp, hc: Option<f64>, ber| ModuleLevel { vpp, hc_first: hc, ber };
        assert_eq!(recommended_vpp(&[l(2.5, Some(39_800.0), 1.24e-3), l(1.4, Some(42_200.0), 1.0e-3)]), Some(1.4));
        assert_eq!(recommended_vpp(&[l(2.5, Some(10.0), 0.2), l(2.0, Some(10.0), 0.1), l(1.9, Some(10.0), 0.1)]), Some(2.0));
        assert_eq!(recommended_vpp(&[l(2.5, None, 0.0)]), None);
    }

    proptest! {
        #[test]
        fn nominal_normalizes_to_one(vals in prop::collection::vec(1e-6f64..1e6, 1..40)) {
            let recs: Vec<_> = vals.iter().enumerate().map(|(i, &v)| (i as u32, 2.5, Some(v))).collect();
            let s = normalize_and_band(&recs, 2.5, 3);
            prop_assert!((s.points[0].mean - 1.0).abs() < 1e-12);
            let (rows, _) = normalize_rows(&recs, 2.5);
            prop_assert!(rows.values().all(|r| r[0].1 == 1.0));
        }

        #[test]
        fn density_integrates_to_one(vals in prop::collection::vec(0.3f64..2.0, 1..300)) {
            let d = population_density(&vals, DENSITY_BIN_WIDTH);
            let total: f64 = d.density().iter().map(|x| x * d.bin_width).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn cv_is_scale_invariant(vals in prop::collection::vec(0.1f64..100.0, 2..12), c in 1e-3f64..1e3) {
            let scaled: Vec<f64> = vals.iter().map(|v| v * c).collect();
            let (a, b) = (coefficient_of_variation(&vals).unwrap(), coefficient_of_variation(&scaled).unwrap());
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }

        #[test]
        fn secded_matches_popcount(flips in prop::collection::btree_set(0u32..1024, 0..40)) {
            let flips: Vec<u32> = flips.into_iter().collect();
            let r = secded_analysis(1024, &flips, 64);
            let mut mask = [0u64; 16];
            for &b in &flips {
                mask[(b / 64) as usize] |= 1 << (b % 64);
            }
            prop_assert_eq!(r.correctable(), mask.iter().all(|w| w.count_ones() <= 1));
            prop_assert_eq!(r.words.iter().sum::<u32>(), 16);
        }
    }
}
