//! Measurement procedures run against a [`DramDevice`] through its command
//! interface: worst-case data pattern selection, HC_first search, BER, tRCD_min
//! and retention sweeps, row sampling and adjacency probing.

use crate::device::{DeviceError, DramDevice, HAMMER_CAP};
use crate::mapping::{AdjacencyMapping, MappingError, MappingKind};
use crate::pattern::DataPattern;
use crate::profile::REFERENCE_HAMMER_COUNT;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CharError {
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error("row {0} has fewer than two physical neighbours")]
    EdgeRow(u32),
    #[error("row {row} still faulty at the tRCD ceiling of {ceiling_ns} ns")]
    TrcdCeiling { row: u32, ceiling_ns: f64 },
}

/// Knobs shared by all procedures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub iterations: u32,
    pub hc_start: u64,
    pub hc_step: u64,
    /// The HC search stops once the step is at or below this.
    pub hc_min_step: u64,
    pub hc_cap: u64,
    /// Hammer count used for BER measurements.
    pub ber_hc: u64,
    /// Activation latency used when reading back characterization data.
    pub read_trcd_ns: f64,
    pub trcd_anchor_ns: f64,
    pub trcd_step_ns: f64,
    pub trcd_ceiling_ns: f64,
    /// Refresh windows tested for retention, seconds.
    pub windows: Vec<f64>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            iterations: 10,
            hc_start: 300_000,
            hc_step: 150_000,
            hc_min_step: 100,
            hc_cap: HAMMER_CAP,
            ber_hc: REFERENCE_HAMMER_COUNT as u64,
            read_trcd_ns: 30.0,
            trcd_anchor_ns: 13.5,
            trcd_step_ns: 1.5,
            trcd_ceiling_ns: 30.0,
            windows: retention_windows(),
        }
    }
}

/// 16 ms, 32 ms, ... 16.384 s.
pub fn retention_windows() -> Vec<f64> {
    (0..11).map(|k| 0.016 * f64::from(1u32 << k)).collect()
}

/// Rows tested per bank: four equal chunks starting at the bank quarters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSample {
    pub bank: u32,
    pub rows: Vec<u32>,
}

impl RowSample {
    pub const CHUNK: u32 = 1024;

    pub fn new(bank: u32, rows_per_bank: u32) -> Self {
        Self::with_chunk(bank, rows_per_bank, Self::CHUNK)
    }

    /// Same layout with shorter chunks, for quick runs.
    pub fn with_chunk(bank: u32, rows_per_bank: u32, chunk: u32) -> Self {
        let chunk = chunk.min(rows_per_bank / 4).max(1);
        let rows = (0..4u32)
            .flat_map(|q| {
                let start = (rows_per_bank as u64 * q as u64 / 4) as u32;
                start..start + chunk
            })
            .collect();
        Self { bank, rows }
    }
}

fn aggressors(dev: &DramDevice, row: u32) -> Result<(u32, u32), CharError> {
    dev.mapping().aggressors(row)?.ok_or(CharError::EdgeRow(row))
}

fn flipped_bits(read: &[u64], expected: u64) -> u32 {
    read.iter().map(|w| (w ^ expected).count_ones()).sum()
}

/// Double-sided hammer `victim` `hc` times per aggressor; fraction of victim bits flipped.
pub fn measure_ber(
    dev: &mut DramDevice,
    bank: u32,
    victim: u32,
    pattern: DataPattern,
    hc: u64,
    read_trcd_ns: f64,
) -> Result<f64, CharError> {
    let (a, b) = aggressors(dev, victim)?;
    dev.fill_row(bank, a, pattern.aggressor_word())?;
    dev.fill_row(bank, b, pattern.aggressor_word())?;
    dev.fill_row(bank, victim, pattern.victim_word())?;
    dev.hammer(bank, &[a, b], hc)?;
    let read = dev.read_row(bank, victim, read_trcd_ns)?;
    Ok(f64::from(flipped_bits(&read, pattern.victim_word())) / f64::from(dev.bits_per_row()))
}

fn max_ber(dev: &mut DramDevice, bank: u32, row: u32, p: DataPattern, hc: u64, s: &Settings) -> Result<f64, CharError> {
    let mut m = 0.0f64;
    for _ in 0..s.iterations.max(1) {
        m = m.max(measure_ber(dev, bank, row, p, hc, s.read_trcd_ns)?);
    }
    Ok(m)
}

/// One probed hammer count of the HC_first search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub hc: u64,
    pub max_ber: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HcSearch {
    /// Final hammer count of the search; `None` when no probe flipped a bit.
    pub hc_first: Option<u64>,
    /// Largest flip-free and smallest flipping hammer counts probed.
    pub bracket: (Option<u64>, Option<u64>),
    pub probes: Vec<Probe>,
}

/// Halving search for the smallest hammer count that flips a bit.
///
/// Starts at `hc_start`, moves up by the step when no iteration flipped and
/// down when one did, halves the step and stops once it reaches `hc_min_step`.
/// The final count is reported as is, without a confirming measurement.
pub fn measure_hc_first(
    dev: &mut DramDevice,
    bank: u32,
    victim: u32,
    pattern: DataPattern,
    s: &Settings,
) -> Result<HcSearch, CharError> {
    aggressors(dev, victim)?;
    let mut hc = s.hc_start;
    let mut step = s.hc_step;
    let mut probes = Vec::new();
    while step > s.hc_min_step {
        let ber = max_ber(dev, bank, victim, pattern, hc, s)?;
        probes.push(Probe { hc, max_ber: ber });
        if ber == 0.0 {
            hc += step;
        } else {
            hc = hc.saturating_sub(step);
        }
        step /= 2;
    }
    let lo = probes.iter().filter(|p| p.max_ber == 0.0).map(|p| p.hc).max();
    let hi = probes.iter().filter(|p| p.max_ber > 0.0).map(|p| p.hc).min();
    let hc_first = (hi.is_some() && hc <= s.hc_cap).then_some(hc.max(1));
    Ok(HcSearch { hc_first, bracket: (lo, hi), probes })
}

/// HC_first and BER of one row at the current VPP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HammerResult {
    pub row: u32,
    pub vpp: f64,
    pub wcdp: u8,
    pub hc_first: Option<u64>,
    pub ber: f64,
    /// BER of each iteration at the reference hammer count.
    pub ber_iterations: Vec<f64>,
    pub bracket: (Option<u64>, Option<u64>),
}

pub fn measure_row(
    dev: &mut DramDevice,
    bank: u32,
    row: u32,
    wcdp: DataPattern,
    s: &Settings,
) -> Result<HammerResult, CharError> {
    let search = measure_hc_first(dev, bank, row, wcdp, s)?;
    let ber_iterations = (0..s.iterations.max(1))
        .map(|_| measure_ber(dev, bank, row, wcdp, s.ber_hc, s.read_trcd_ns))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(HammerResult {
        row,
        vpp: dev.vpp(),
        wcdp: wcdp.id(),
        hc_first: search.hc_first,
        ber: ber_iterations.iter().copied().fold(0.0, f64::max),
        ber_iterations,
        bracket: search.bracket,
    })
}

/// Per-pattern evidence behind a WCDP choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WcdpChoice {
    pub pattern: Option<u8>,
    pub hc_first: [Option<u64>; 6],
    pub ber: [f64; 6],
}

/// Lowest HC_first wins; ties go to the larger BER at the reference count, then the lower id.
pub fn pick_wcdp(hc: &[Option<u64>; 6], ber: &[f64; 6]) -> Option<u8> {
    (0..6u8)
        .filter(|&i| hc[i as usize].is_some())
        .min_by(|&i, &j| {
            let (i, j) = (i as usize, j as usize);
            hc[i].cmp(&hc[j]).then(ber[j].total_cmp(&ber[i])).then(i.cmp(&j))
        })
}

/// Worst-case data pattern for RowHammer, meant to run at nominal VPP.
pub fn determine_wcdp_rowhammer(
    dev: &mut DramDevice,
    bank: u32,
    row: u32,
    s: &Settings,
) -> Result<WcdpChoice, CharError> {
    let mut hc = [None; 6];
    let mut ber = [0.0; 6];
    for p in DataPattern::ALL {
        let i = p.id() as usize;
        hc[i] = measure_hc_first(dev, bank, row, p, s)?.hc_first;
        ber[i] = max_ber(dev, bank, row, p, s.ber_hc, s)?;
    }
    let pattern = pick_wcdp(&hc, &ber);
    if pattern.is_none() {
        tracing::debug!(row, "no data pattern flips a bit below the hammer cap");
    }
    Ok(WcdpChoice { pattern, hc_first: hc, ber })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrcdResult {
    pub row: u32,
    pub vpp: f64,
    pub trcd_min_ns: f64,
    /// Reliable at the lowest grid point, so the real requirement may be lower.
    pub unbounded_below: bool,
}

/// One full-row pass at `trcd_ns`: every column is read after its own activation.
fn trcd_pass(dev: &mut DramDevice, bank: u32, row: u32, p: DataPattern, trcd_ns: f64) -> Result<bool, CharError> {
    dev.fill_row(bank, row, p.victim_word())?;
    for col in 0..dev.words_per_row() {
        dev.act(bank, row, trcd_ns)?;
        let v = dev.rd(bank, col)?;
        dev.pre(bank)?;
        if v != p.victim_word() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Walk the tRCD grid down from the anchor until a pass fails, or up until one succeeds.
fn trcd_walk(dev: &mut DramDevice, bank: u32, row: u32, p: DataPattern, s: &Settings) -> Result<(f64, bool), CharError> {
    let grid = |k: i64| s.trcd_anchor_ns + k as f64 * s.trcd_step_ns;
    let mut k = 0i64;
    if trcd_pass(dev, bank, row, p, grid(0))? {
        while grid(k - 1) > 0.0 {
            if !trcd_pass(dev, bank, row, p, grid(k - 1))? {
                return Ok((grid(k), false));
            }
            k -= 1;
        }
        return Ok((grid(k), true));
    }
    loop {
        k += 1;
        if grid(k) > s.trcd_ceiling_ns + 1e-9 {
            return Err(CharError::TrcdCeiling { row, ceiling_ns: s.trcd_ceiling_ns });
        }
        if trcd_pass(dev, bank, row, p, grid(k))? {
            return Ok((grid(k), false));
        }
    }
}

/// Smallest grid tRCD with no faulty read; the largest over the iterations is reported.
pub fn measure_trcd_min(
    dev: &mut DramDevice,
    bank: u32,
    row: u32,
    pattern: DataPattern,
    s: &Settings,
) -> Result<TrcdResult, CharError> {
    let mut worst = (f64::MIN, true);
    for _ in 0..s.iterations.max(1) {
        let (t, unbounded) = trcd_walk(dev, bank, row, pattern, s)?;
        if t > worst.0 {
            worst = (t, unbounded);
        }
    }
    Ok(TrcdResult { row, vpp: dev.vpp(), trcd_min_ns: worst.0, unbounded_below: worst.1 })
}

/// Flip summary of one row after one retention window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionPoint {
    pub window_s: f64,
    pub ber: f64,
    /// Number of 64-bit words with exactly 0, exactly 1 and 2 or more flips.
    pub words: [u32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionResult {
    pub row: u32,
    pub vpp: f64,
    pub pattern: u8,
    pub points: Vec<RetentionPoint>,
}

impl RetentionResult {
    /// Smallest tested window with any flip.
    pub fn first_failing_window(&self) -> Option<f64> {
        self.points.iter().find(|p| p.ber > 0.0).map(|p| p.window_s)
    }
}

pub(crate) fn word_histogram(read: &[u64], expected: u64) -> [u32; 3] {
    let mut h = [0u32; 3];
    for w in read {
        h[((w ^ expected).count_ones() as usize).min(2)] += 1;
    }
    h
}

/// Write the pattern, wait one window, read back; worst iteration per window is kept.
pub fn retention_sweep(
    dev: &mut DramDevice,
    bank: u32,
    row: u32,
    pattern: DataPattern,
    s: &Settings,
) -> Result<RetentionResult, CharError> {
    let bits = f64::from(dev.bits_per_row());
    let mut points = Vec::with_capacity(s.windows.len());
    for &w in &s.windows {
        let mut worst: Option<RetentionPoint> = None;
        for _ in 0..s.iterations.max(1) {
            dev.fill_row(bank, row, pattern.victim_word())?;
            dev.wait(w)?;
            let read = dev.read_row(bank, row, s.read_trcd_ns)?;
            let flips = flipped_bits(&read, pattern.victim_word());
            let pt = RetentionPoint { window_s: w, ber: f64::from(flips) / bits, words: word_histogram(&read, pattern.victim_word()) };
            if worst.as_ref().map_or(true, |b| pt.ber > b.ber) {
                worst = Some(pt);
            }
        }
        points.extend(worst);
    }
    Ok(RetentionResult { row, vpp: dev.vpp(), pattern: pattern.id(), points })
}

/// Retention WCDP: fails at the smallest window, then largest BER at the longest window, then lowest id.
pub fn determine_wcdp_retention(
    dev: &mut DramDevice,
    bank: u32,
    row: u32,
    s: &Settings,
) -> Result<(u8, RetentionResult), CharError> {
    let mut best: Option<RetentionResult> = None;
    for p in DataPattern::ALL {
        let r = retention_sweep(dev, bank, row, p, s)?;
        let key = |r: &RetentionResult| {
            (r.first_failing_window().unwrap_or(f64::INFINITY), -r.points.last().map_or(0.0, |x| x.ber))
        };
        let better = best.as_ref().map_or(true, |b| {
            let (k, kb) = (key(&r), key(b));
            k.0 < kb.0 || (k.0 == kb.0 && k.1 < kb.1)
        });
        if better {
            best = Some(r);
        }
    }
    let best = best.expect("six patterns");
    Ok((best.pattern, best))
}

/// Retention sweep over a set of rows, each with its own pattern.
pub fn measure_retention(
    dev: &mut DramDevice,
    bank: u32,
    rows: &[(u32, DataPattern)],
    s: &Settings,
) -> Result<Vec<RetentionResult>, CharError> {
    rows.iter().map(|&(r, p)| retention_sweep(dev, bank, r, p, s)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyProbe {
    pub mapping: AdjacencyMapping,
    /// Observed neighbour pairs, smaller logical id first.
    pub pairs: BTreeSet<(u32, u32)>,
    /// Rows whose observed neighbour count differs from what the declared mapping implies.
    pub flagged: Vec<u32>,
    /// False when the observations did not form a single chain and the declared mapping was kept.
    pub recovered: bool,
}

/// Reverse-engineer physical adjacency by single-sided hammering of every row.
///
/// Each row in turn is hammered `hc` times with every other row holding the
/// victim fill; the (up to) two rows with the most flips are taken as its
/// neighbours. Pairs seen from either side are merged. If the pairs chain all
/// rows into one line it becomes the result, otherwise `declared` is kept.
pub fn probe_adjacency(
    dev: &mut DramDevice,
    bank: u32,
    declared: &AdjacencyMapping,
    hc: u64,
    s: &Settings,
) -> Result<AdjacencyProbe, CharError> {
    let n = dev.rows_per_bank();
    let p = DataPattern::ALL[0];
    let mut pairs = BTreeSet::new();
    for r in 0..n {
        for v in 0..n {
            dev.fill_row(bank, v, if v == r { p.aggressor_word() } else { p.victim_word() })?;
        }
        dev.hammer(bank, &[r], hc)?;
        let mut hits: Vec<(u32, u32)> = Vec::new();
        for v in (0..n).filter(|&v| v != r) {
            let f = flipped_bits(&dev.read_row(bank, v, s.read_trcd_ns)?, p.victim_word());
            if f > 0 {
                hits.push((f, v));
            }
        }
        hits.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, v) in hits.iter().take(2) {
            pairs.insert((r.min(v), r.max(v)));
        }
    }

    let mut adj: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for &(a, b) in &pairs {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }
    let degree = |r: u32| adj.get(&r).map_or(0, |v| v.len());
    let flagged: Vec<u32> = (0..n)
        .filter(|&r| {
            let expected = declared.neighbors_at(r, 1).map_or(0, |v| v.len());
            degree(r) != expected
        })
        .collect();

    let chain = chain_order(n, &adj);
    let recovered = chain.is_some();
    let mapping = match chain {
        Some(mut order) => {
            // Orient the chain like the declared mapping.
            if declared.physical(order[0])? > declared.physical(order[n as usize - 1])? {
                order.reverse();
            }
            let mut table = vec![0u32; n as usize];
            for (phys, &l) in order.iter().enumerate() {
                table[l as usize] = phys as u32;
            }
            AdjacencyMapping::new(MappingKind::Explicit { table }, n)?
        }
        None => {
            tracing::warn!(flagged = flagged.len(), "adjacency probe ambiguous; keeping the declared mapping");
            declared.clone()
        }
    };
    Ok(AdjacencyProbe { mapping, pairs, flagged, recovered })
}

/// Order rows along a single path covering all of them, if the graph is one.
fn chain_order(n: u32, adj: &BTreeMap<u32, Vec<u32>>) -> Option<Vec<u32>> {
    if n == 1 {
        return Some(vec![0]);
    }
    if (0..n).any(|r| adj.get(&r).map_or(true, |v| v.len() > 2)) {
        return None;
    }
    let start = (0..n).find(|r| adj[r].len() == 1)?;
    let mut order = vec![start];
    let mut prev = u32::MAX;
    let mut cur = start;
    while let Some(&next) = adj[&cur].iter().find(|&&x| x != prev) {
        if order.len() as u32 >= n {
            return None;
        }
        order.push(next);
        prev = cur;
        cur = next;
    }
    (order.len() as u32 == n).then_some(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::RowFixture;
    use crate::presets::preset;

    pub(crate) fn small_device(rows: u32, seed: u64) -> DramDevice {
        let mut p = preset("B3").unwrap();
        p.rows_per_bank = rows;
        p.hammer.noise.sigma_median = 0.0;
        DramDevice::new(p, seed, AdjacencyMapping::identity(rows)).unwrap()
    }

    fn fixture(threshold: f64) -> RowFixture {
        let mut f = RowFixture::new(DataPattern::ALL[0]);
        f.hammer = vec![(3, threshold), (700, threshold * 1.5), (4000, threshold * 3.0)];
        f
    }

    #[test]
    fn sample_has_four_quarter_chunks() {
        let s = RowSample::new(0, 65_536);
        assert_eq!(s.rows.len(), 4096);
        for q in 0..4 {
            assert_eq!(s.rows[q * 1024], q as u32 * 16_384);
        }
        assert_eq!(RowSample::with_chunk(1, 65_536, 64).rows.len(), 256);
    }

    #[test]
    fn ber_matches_threshold_count() {
        let mut d = small_device(64, 1);
        d.set_fixture(0, 10, fixture(50_000.0)).unwrap();
        let p = DataPattern::ALL[0];
        let s = Settings::default();
        assert_eq!(measure_ber(&mut d, 0, 10, p, 0, s.read_trcd_ns).unwrap(), 0.0);
        assert_eq!(measure_ber(&mut d, 0, 10, p, 49_999, s.read_trcd_ns).unwrap(), 0.0);
        assert_eq!(measure_ber(&mut d, 0, 10, p, 80_000, s.read_trcd_ns).unwrap(), 2.0 / 8192.0);
        assert_eq!(measure_ber(&mut d, 0, 10, p, 150_000, s.read_trcd_ns).unwrap(), 3.0 / 8192.0);
        // Non-worst pattern raises every threshold.
        let q = DataPattern::ALL[2];
        assert_eq!(measure_ber(&mut d, 0, 10, q, 60_000, s.read_trcd_ns).unwrap(), 0.0);
        assert!(matches!(measure_ber(&mut d, 0, 0, p, 10, 30.0), Err(CharError::EdgeRow(0))));
    }

    #[test]
    fn hc_search_lands_near_threshold() {
        let mut d = small_device(64, 2);
        let s = Settings { iterations: 1, ..Settings::default() };
        for (row, t) in [(5u32, 42_200.0), (6, 300_000.0), (7, 5_000.0), (8, 517_000.0)] {
            d.set_fixture(0, row, fixture(t)).unwrap();
            let r = measure_hc_first(&mut d, 0, row, DataPattern::ALL[0], &s).unwrap();
            assert_eq!(r.probes.len(), 11);
            let hc = r.hc_first.unwrap() as f64;
            assert!((hc - t).abs() <= 300.0, "{t}: {hc}");
            let (lo, hi) = r.bracket;
            assert!(lo.map_or(true, |l| (l as f64) < t) && (hi.unwrap() as f64) >= t);
        }
        d.set_fixture(0, 9, fixture(5_000_000.0)).unwrap();
        assert_eq!(measure_hc_first(&mut d, 0, 9, DataPattern::ALL[0], &s).unwrap().hc_first, None);
    }

    #[test]
    fn wcdp_tie_breaks() {
        let hc = [Some(10), Some(9), Some(9), None, Some(9), Some(12)];
        assert_eq!(pick_wcdp(&hc, &[0.0, 0.1, 0.2, 0.0, 0.3, 0.0]), Some(4));
        assert_eq!(pick_wcdp(&hc, &[0.0, 0.2, 0.2, 0.0, 0.1, 0.0]), Some(1));
        assert_eq!(pick_wcdp(&[Some(5); 6], &[0.1; 6]), Some(0));
        assert_eq!(pick_wcdp(&[None; 6], &[0.0; 6]), None);
    }

    #[test]
    fn wcdp_finds_injected_pattern() {
        let mut d = small_device(64, 3);
        let mut f = fixture(60_000.0);
        f.worst_pattern = DataPattern::ALL[2];
        d.set_fixture(0, 20, f).unwrap();
        let s = Settings { iterations: 1, ..Settings::default() };
        assert_eq!(determine_wcdp_rowhammer(&mut d, 0, 20, &s).unwrap().pattern, Some(2));
    }

    #[test]
    fn trcd_grid_walk() {
        let mut d = small_device(64, 4);
        let s = Settings { iterations: 2, ..Settings::default() };
        for (req, want) in [(11.9, 12.0), (12.0, 12.0), (13.6, 15.0), (25.0, 25.5)] {
            let mut f = RowFixture::new(DataPattern::ALL[0]);
            f.trcd_ns = req;
            d.set_fixture(0, 30, f).unwrap();
            let r = measure_trcd_min(&mut d, 0, 30, DataPattern::ALL[1], &s).unwrap();
            assert_eq!(r.trcd_min_ns, want, "{req}");
            assert!(!r.unbounded_below);
        }
        let mut f = RowFixture::new(DataPattern::ALL[0]);
        f.trcd_ns = 0.5;
        d.set_fixture(0, 31, f).unwrap();
        let r = measure_trcd_min(&mut d, 0, 31, DataPattern::ALL[1], &s).unwrap();
        assert!(r.unbounded_below);
        assert_eq!(r.trcd_min_ns, 1.5);
        let mut f = RowFixture::new(DataPattern::ALL[0]);
        f.trcd_ns = 31.0;
        d.set_fixture(0, 32, f).unwrap();
        assert!(matches!(measure_trcd_min(&mut d, 0, 32, DataPattern::ALL[1], &s), Err(CharError::TrcdCeiling { .. })));
    }

    #[test]
    fn single_weak_cell_shows_up_at_128ms() {
        let mut d = small_device(64, 5);
        let mut f = RowFixture::new(DataPattern::ALL[0]);
        f.retention = vec![(17, 0.100)];
        d.set_fixture(0, 40, f).unwrap();
        let s = Settings { iterations: 1, ..Settings::default() };
        let r = retention_sweep(&mut d, 0, 40, DataPattern::ALL[0], &s).unwrap();
        assert_eq!(r.first_failing_window(), Some(0.128));
        let pt = &r.points[3];
        assert_eq!(pt.ber, 1.0 / 8192.0);
        assert_eq!(pt.words, [127, 1, 0]);
        // A pattern storing the opposite value in that cell never fails.
        let (wcdp, _) = determine_wcdp_retention(&mut d, 0, 40, &s).unwrap();
        assert_eq!(wcdp, 0);
    }

    fn probe_fixture(kind: MappingKind, rows: u32, dead: f64) -> (DramDevice, AdjacencyMapping) {
        let mut p = preset("B3").unwrap();
        p.rows_per_bank = rows;
        let truth = AdjacencyMapping::new(kind, rows).unwrap();
        let mut d = DramDevice::new(p, 11, truth.clone()).unwrap();
        for r in 0..rows {
            if crate::rng::unit(crate::rng::derive(99, &[r as u64])) < dead {
                d.set_fixture(0, r, RowFixture::new(DataPattern::ALL[0])).unwrap();
            }
        }
        (d, truth)
    }

    fn true_pairs(m: &AdjacencyMapping) -> BTreeSet<(u32, u32)> {
        (1..m.rows())
            .map(|p| {
                let (a, b) = (m.logical(p - 1).unwrap(), m.logical(p).unwrap());
                (a.min(b), a.max(b))
            })
            .collect()
    }

    #[test]
    fn probe_recovers_identity_and_inversion() {
        let s = Settings::default();
        for kind in [MappingKind::Identity, MappingKind::LowBitInversion] {
            let (mut d, truth) = probe_fixture(kind, 64, 0.0);
            let r = probe_adjacency(&mut d, 0, &AdjacencyMapping::identity(64), HAMMER_CAP, &s).unwrap();
            assert!(r.recovered);
            assert_eq!(r.pairs, true_pairs(&truth));
            assert_eq!(r.mapping.table(), truth.table());
        }
    }
}
