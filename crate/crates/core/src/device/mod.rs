//! Command-level behavioural DRAM model.
//!
//! Cell disturbance and leakage are evaluated lazily: a row's pending
//! RowHammer flips and retention failures are applied whenever the row is
//! next activated (or when VPP changes), which is observationally the same as
//! applying them eagerly because counters only grow and thresholds only
//! depend on VPP between two restores of the row.
//!
//! Logical row ids are used everywhere; the adjacency mapping translates them
//! to physical positions when disturbance is propagated.

mod row;

pub use row::RowFixture;

use crate::circuit::NOMINAL_TRCD_NS;
use crate::mapping::{AdjacencyMapping, MappingError};
use crate::pattern::DataPattern;
use crate::profile::{DeviceProfile, ProfileError, REFERENCE_HAMMER_COUNT};
use crate::rng::{derive, hash_str, mix};
use row::{HammerCells, ModelConstants, RetentionCells, RowParams};
use std::collections::HashMap;
use std::sync::Arc;
use thiserror::Error;

pub(crate) const REFERENCE: f64 = REFERENCE_HAMMER_COUNT;

/// Hammer count beyond which measurements report "no flip found".
pub const HAMMER_CAP: u64 = 3_000_000;

/// Legal VPP range accepted by `set_vpp`.
pub const VPP_RANGE: (f64, f64) = (1.0, 2.6);

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("bank {bank} already has row {row} open")]
    BankOpen { bank: u32, row: u32 },
    #[error("bank {0} has no open row")]
    BankClosed(u32),
    #[error("{what} {index} out of range (limit {limit})")]
    OutOfRange { what: &'static str, index: u64, limit: u64 },
    #[error("vpp {0} V outside the legal range [1.0, 2.6]")]
    VppOutOfRange(f64),
    #[error("invalid blast radius configuration: {0}")]
    BlastRadius(String),
    #[error("invalid wait duration {0}")]
    InvalidWait(f64),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Command {
    Act { bank: u32, row: u32, trcd_ns: f64 },
    Rd { bank: u32, col: u32 },
    Wr { bank: u32, col: u32, data: u64 },
    Pre { bank: u32 },
    Wait { seconds: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandResult {
    Done,
    Data(u64),
}

#[derive(Debug, Clone, Copy)]
struct OpenRow {
    row: u32,
    trcd_ns: f64,
}

#[derive(Debug, Clone)]
struct RowState {
    params: Arc<RowParams>,
    data: Option<Box<[u64]>>,
    counter: f64,
    last_restore: f64,
    restore_vpp: f64,
    /// Restore intervals in which the row was evaluated with a non-zero counter.
    epochs: u64,
    /// Noise multiplier drawn for the current restore interval.
    interval_noise: Option<f64>,
    /// Pattern multiplier of the data stored in the current restore interval.
    pattern_scale: Option<f64>,
    /// Hammer cells already flipped in the current restore interval (a prefix).
    flipped: usize,
    hammer: Option<Box<HammerCells>>,
    retention: Option<Box<RetentionCells>>,
}

/// Threshold multiplier for the data currently stored in a row.
fn pattern_scale(st: &RowState, pattern_factor: f64) -> f64 {
    let uniform = st.data.as_ref().map_or(Some(0u64), |d| d.iter().all(|&w| w == d[0]).then_some(d[0]));
    match uniform.and_then(DataPattern::from_victim_word) {
        Some(p) if p == st.params.worst_pattern => 1.0,
        _ => pattern_factor,
    }
}

/// A seeded behavioural DRAM rank.
#[derive(Debug, Clone)]
pub struct DramDevice {
    profile: Arc<DeviceProfile>,
    constants: Arc<ModelConstants>,
    seed: u64,
    /// Seed mixed with the module id, so modules sharing a seed are independent.
    key: u64,
    mapping: Arc<AdjacencyMapping>,
    vpp: f64,
    time: f64,
    open: Vec<Option<OpenRow>>,
    /// Attenuation per physical distance, starting at distance 1.
    attenuation: Vec<f64>,
    rows: HashMap<(u32, u32), RowState>,
    fixtures: HashMap<(u32, u32), Arc<RowFixture>>,
    reads: u64,
}

impl DramDevice {
    pub fn new(profile: DeviceProfile, seed: u64, mapping: AdjacencyMapping) -> Result<Self, DeviceError> {
        profile.validate()?;
        if mapping.rows() != profile.rows_per_bank {
            return Err(DeviceError::OutOfRange {
                what: "mapping rows",
                index: mapping.rows() as u64,
                limit: profile.rows_per_bank as u64,
            });
        }
        let constants = Arc::new(ModelConstants::new(&profile));
        let key = derive(seed, &[hash_str(&profile.id)]);
        Ok(Self {
            key,
            vpp: profile.vpp_nominal,
            open: vec![None; profile.banks as usize],
            profile: Arc::new(profile),
            constants,
            seed,
            mapping: Arc::new(mapping),
            time: 0.0,
            attenuation: vec![1.0],
            rows: HashMap::new(),
            fixtures: HashMap::new(),
            reads: 0,
        })
    }

    pub fn profile(&self) -> &DeviceProfile {
        &self.profile
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mapping(&self) -> &AdjacencyMapping {
        &self.mapping
    }

    pub fn vpp(&self) -> f64 {
        self.vpp
    }

    /// Simulated time in seconds.
    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn rows_per_bank(&self) -> u32 {
        self.profile.rows_per_bank
    }

    pub fn words_per_row(&self) -> u32 {
        self.profile.bits_per_row / 64
    }

    pub fn bits_per_row(&self) -> u32 {
        self.profile.bits_per_row
    }

    /// Below `vpp_min` reads return seeded random corruption.
    pub fn is_unreliable(&self) -> bool {
        self.vpp < self.profile.vpp_min - 1e-9
    }

    pub fn open_row(&self, bank: u32) -> Option<u32> {
        self.open.get(bank as usize).copied().flatten().map(|o| o.row)
    }

    pub fn disturbance_counter(&self, bank: u32, row: u32) -> f64 {
        self.rows.get(&(bank, row)).map_or(0.0, |r| r.counter)
    }

    /// Replace the sampled cells of one row with injected values.
    pub fn set_fixture(&mut self, bank: u32, row: u32, fixture: RowFixture) -> Result<(), DeviceError> {
        self.check_row(bank, row)?;
        self.rows.remove(&(bank, row));
        self.fixtures.insert((bank, row), Arc::new(fixture));
        Ok(())
    }

    /// Propagate disturbance to rows up to `distance` away. `attenuation[i]` is the
    /// rate at distance `i + 2` relative to an adjacent row.
    pub fn set_blast_radius(&mut self, distance: u32, attenuation: &[f64]) -> Result<(), DeviceError> {
        if distance == 0 {
            return Err(DeviceError::BlastRadius("distance must be at least 1".into()));
        }
        if attenuation.len() + 1 != distance as usize {
            return Err(DeviceError::BlastRadius(format!(
                "distance {distance} needs {} attenuation factors",
                distance - 1
            )));
        }
        if attenuation.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(DeviceError::BlastRadius("attenuation factors must lie in [0, 1]".into()));
        }
        self.attenuation = std::iter::once(1.0).chain(attenuation.iter().copied()).collect();
        Ok(())
    }

    pub fn set_vpp(&mut self, vpp: f64) -> Result<(), DeviceError> {
        if !(VPP_RANGE.0..=VPP_RANGE.1).contains(&vpp) || !vpp.is_finite() {
            return Err(DeviceError::VppOutOfRange(vpp));
        }
        let mut pending: Vec<(u32, u32)> =
            self.rows.iter().filter(|(_, r)| r.counter > 0.0).map(|(k, _)| *k).collect();
        pending.sort_unstable();
        for (bank, row) in pending {
            self.commit(bank, row);
        }
        if vpp < self.profile.vpp_min - 1e-9 {
            tracing::warn!(vpp, vpp_min = self.profile.vpp_min, "device entering unreliable mode");
        }
        self.vpp = vpp;
        Ok(())
    }

    pub fn execute(&mut self, cmd: Command) -> Result<CommandResult, DeviceError> {
        match cmd {
            Command::Act { bank, row, trcd_ns } => self.act(bank, row, trcd_ns).map(|_| CommandResult::Done),
            Command::Rd { bank, col } => self.rd(bank, col).map(CommandResult::Data),
            Command::Wr { bank, col, data } => self.wr(bank, col, data).map(|_| CommandResult::Done),
            Command::Pre { bank } => self.pre(bank).map(|_| CommandResult::Done),
            Command::Wait { seconds } => self.wait(seconds).map(|_| CommandResult::Done),
        }
    }

    pub fn act(&mut self, bank: u32, row: u32, trcd_ns: f64) -> Result<(), DeviceError> {
        self.check_row(bank, row)?;
        if let Some(o) = self.open[bank as usize] {
            return Err(DeviceError::BankOpen { bank, row: o.row });
        }
        self.activate(bank, row);
        self.open[bank as usize] = Some(OpenRow { row, trcd_ns });
        Ok(())
    }

    pub fn pre(&mut self, bank: u32) -> Result<(), DeviceError> {
        self.check_bank(bank)?;
        if let Some(o) = self.open[bank as usize].take() {
            let pf = self.profile.hammer.pattern_factor;
            let st = self.state(bank, o.row);
            st.pattern_scale = Some(pattern_scale(st, pf));
        }
        Ok(())
    }

    pub fn rd(&mut self, bank: u32, col: u32) -> Result<u64, DeviceError> {
        let o = self.open_or_err(bank)?;
        self.check_col(col)?;
        let words = self.words_per_row();
        let spread = self.profile.trcd.column_spread_ns;
        let dv = self.profile.vpp_nominal - self.vpp;
        let unreliable = self.is_unreliable();
        self.reads += 1;
        let seed = self.key;
        let reads = self.reads;
        let st = self.state(bank, o.row);
        let mut v = st.data.as_ref().map_or(0, |d| d[col as usize]);
        debug_assert!(col < words);
        if o.trcd_ns < st.params.column_trcd(col, dv, spread) {
            v ^= mix(derive(seed, &[0x7c0d, bank as u64, o.row as u64, col as u64, reads])) | 1;
        }
        if unreliable {
            v ^= mix(derive(seed, &[0xbad, bank as u64, o.row as u64, col as u64, reads])) | 1 << 63;
        }
        Ok(v)
    }

    pub fn wr(&mut self, bank: u32, col: u32, data: u64) -> Result<(), DeviceError> {
        let o = self.open_or_err(bank)?;
        self.check_col(col)?;
        let words = self.words_per_row() as usize;
        let st = self.state(bank, o.row);
        st.data.get_or_insert_with(|| vec![0; words].into_boxed_slice())[col as usize] = data;
        Ok(())
    }

    pub fn wait(&mut self, seconds: f64) -> Result<(), DeviceError> {
        if !(seconds >= 0.0 && seconds.is_finite()) {
            return Err(DeviceError::InvalidWait(seconds));
        }
        self.time += seconds;
        Ok(())
    }

    /// ACT, write every column with `word`, PRE.
    pub fn fill_row(&mut self, bank: u32, row: u32, word: u64) -> Result<(), DeviceError> {
        self.act(bank, row, NOMINAL_TRCD_NS)?;
        let words = self.words_per_row() as usize;
        self.state(bank, row).data = Some(vec![word; words].into_boxed_slice());
        self.pre(bank)
    }

    /// ACT with `trcd_ns`, read every column, PRE.
    pub fn read_row(&mut self, bank: u32, row: u32, trcd_ns: f64) -> Result<Vec<u64>, DeviceError> {
        self.act(bank, row, trcd_ns)?;
        let out = (0..self.words_per_row()).map(|c| self.rd(bank, c)).collect::<Result<Vec<_>, _>>();
        self.pre(bank)?;
        out
    }

    /// Current contents of a row with pending flips applied, without activating it.
    pub fn peek_row(&mut self, bank: u32, row: u32) -> Result<Vec<u64>, DeviceError> {
        self.check_row(bank, row)?;
        self.commit(bank, row);
        let words = self.words_per_row() as usize;
        Ok(self.rows.get(&(bank, row)).and_then(|r| r.data.as_ref()).map_or(vec![0; words], |d| d.to_vec()))
    }

    /// Activate `aggressors` in order, `rounds` times, each followed by PRE.
    ///
    /// Equivalent to issuing the commands one by one; when no aggressor can
    /// disturb another aggressor past its weakest cell, all but the first
    /// round are applied in closed form.
    pub fn hammer(&mut self, bank: u32, aggressors: &[u32], rounds: u64) -> Result<(), DeviceError> {
        self.check_bank(bank)?;
        if let Some(o) = self.open[bank as usize] {
            return Err(DeviceError::BankOpen { bank, row: o.row });
        }
        for &a in aggressors {
            self.check_row(bank, a)?;
        }
        if rounds == 0 || aggressors.is_empty() {
            return Ok(());
        }
        let phys: Vec<u32> = aggressors.iter().map(|&a| self.mapping.physical(a)).collect::<Result<_, _>>()?;
        let cross: Vec<f64> = phys
            .iter()
            .map(|&p| phys.iter().map(|&q| self.atten(p.abs_diff(q))).sum())
            .collect();
        let closed_form = aggressors.iter().zip(&cross).all(|(&a, &c)| {
            let floor = self.state(bank, a).params.threshold_floor();
            c < 2.0 * floor
        });
        let literal_rounds = if closed_form { 1 } else { rounds };
        for _ in 0..literal_rounds {
            for &a in aggressors {
                self.activate(bank, a);
            }
        }
        if closed_form && rounds > 1 {
            let extra = (rounds - 1) as f64;
            let mut add: HashMap<u32, f64> = HashMap::new();
            for &p in &phys {
                for d in 1..=self.attenuation.len() as u32 {
                    let w = self.attenuation[d as usize - 1];
                    if w == 0.0 {
                        continue;
                    }
                    for q in [p.checked_sub(d), p.checked_add(d).filter(|&q| q < self.rows_per_bank())]
                        .into_iter()
                        .flatten()
                    {
                        if !phys.contains(&q) {
                            *add.entry(q).or_default() += w * extra;
                        }
                    }
                }
            }
            let mut add: Vec<(u32, f64)> = add.into_iter().collect();
            add.sort_unstable_by_key(|a| a.0);
            for (q, c) in add {
                let l = self.mapping.logical(q)?;
                self.state(bank, l).counter += c;
            }
            for (&a, &c) in aggressors.iter().zip(&cross) {
                if c > 0.0 {
                    self.state(bank, a).epochs += rounds - 1;
                }
            }
        }
        Ok(())
    }

    /// Effective hammer thresholds of a row at the current VPP for a stored
    /// pattern, excluding measurement noise: `(bit, threshold)` sorted by threshold.
    pub fn hammer_thresholds(&mut self, bank: u32, row: u32, pattern: DataPattern, limit: f64) -> Vec<(u16, f64)> {
        let s = self.profile.vpp_weight(self.vpp);
        let pf = if pattern == self.state(bank, row).params.worst_pattern { 1.0 } else { self.profile.hammer.pattern_factor };
        self.ensure_hammer(bank, row, 2.0 * limit);
        let st = self.state(bank, row);
        st.hammer
            .as_ref()
            .unwrap()
            .cells
            .iter()
            .map(|c| (c.bit, c.at(s) * pf))
            .take_while(|c| c.1 <= limit)
            .collect()
    }

    /// The row's weakest-pattern id.
    pub fn worst_pattern(&mut self, bank: u32, row: u32) -> DataPattern {
        self.state(bank, row).params.worst_pattern
    }

    /// Activation latency the row's slowest column needs at the current VPP.
    pub fn trcd_requirement(&mut self, bank: u32, row: u32) -> f64 {
        let dv = self.profile.vpp_nominal - self.vpp;
        let spread = self.profile.trcd.column_spread_ns;
        let p = self.state(bank, row).params.clone();
        (0..self.words_per_row()).map(|c| p.column_trcd(c, dv, spread)).fold(f64::MIN, f64::max)
    }

    /// Row-level HC_first at the current VPP under the worst pattern (no noise).
    pub fn row_hc_first(&mut self, bank: u32, row: u32) -> f64 {
        let s = self.profile.vpp_weight(self.vpp);
        let p = self.state(bank, row).params.clone();
        if p.fixture {
            return p.h_row;
        }
        p.weakest_at(s)
    }

    fn atten(&self, d: u32) -> f64 {
        if d == 0 {
            return 0.0;
        }
        self.attenuation.get(d as usize - 1).copied().unwrap_or(0.0)
    }

    fn check_bank(&self, bank: u32) -> Result<(), DeviceError> {
        if bank >= self.profile.banks {
            return Err(DeviceError::OutOfRange { what: "bank", index: bank as u64, limit: self.profile.banks as u64 });
        }
        Ok(())
    }

    fn check_row(&self, bank: u32, row: u32) -> Result<(), DeviceError> {
        self.check_bank(bank)?;
        if row >= self.profile.rows_per_bank {
            return Err(DeviceError::OutOfRange { what: "row", index: row as u64, limit: self.profile.rows_per_bank as u64 });
        }
        Ok(())
    }

    fn check_col(&self, col: u32) -> Result<(), DeviceError> {
        if col >= self.words_per_row() {
            return Err(DeviceError::OutOfRange { what: "column", index: col as u64, limit: self.words_per_row() as u64 });
        }
        Ok(())
    }

    fn open_or_err(&self, bank: u32) -> Result<OpenRow, DeviceError> {
        self.check_bank(bank)?;
        self.open[bank as usize].ok_or(DeviceError::BankClosed(bank))
    }

    fn state(&mut self, bank: u32, row: u32) -> &mut RowState {
        let key = (bank, row);
        if !self.rows.contains_key(&key) {
            let params = match self.fixtures.get(&key) {
                Some(f) => RowParams::from_fixture(f),
                None => RowParams::sample(&self.profile, &self.constants, self.key, bank, row),
            };
            self.rows.insert(
                key,
                RowState {
                    params: Arc::new(params),
                    data: None,
                    counter: 0.0,
                    last_restore: 0.0,
                    restore_vpp: self.profile.vpp_nominal,
                    epochs: 0,
                    interval_noise: None,
                    pattern_scale: None,
                    flipped: 0,
                    hammer: None,
                    retention: None,
                },
            );
        }
        self.rows.get_mut(&key).unwrap()
    }

    fn ensure_hammer(&mut self, bank: u32, row: u32, counter: f64) {
        let fixture = self.fixtures.get(&(bank, row)).cloned();
        let k = self.constants.clone();
        let st = self.state(bank, row);
        while !st.hammer.as_ref().is_some_and(|h| h.covers(counter)) {
            let cells = match &fixture {
                Some(f) => HammerCells::fixture(f),
                None => {
                    let prev = st.hammer.as_ref().map_or(0.0, |h| h.coverage);
                    let need = counter / 2.0 / st.hammer.as_ref().map_or(0.5, |h| h.min_mult.min(1.0));
                    HammerCells::materialize(&st.params, &k, need.max(prev * 2.0).max(HAMMER_CAP as f64 / 0.8))
                }
            };
            st.hammer = Some(Box::new(cells));
        }
    }

    fn ensure_retention(&mut self, bank: u32, row: u32, nominal_bound: f64) {
        let fixture = self.fixtures.get(&(bank, row)).cloned();
        let profile = self.profile.clone();
        let st = self.state(bank, row);
        let ok = st.retention.as_ref().is_some_and(|r| r.coverage >= nominal_bound);
        if !ok {
            let cells = match &fixture {
                Some(f) => RetentionCells::fixture(f),
                None => {
                    let prev = st.retention.as_ref().map_or(0.0, |r| r.coverage);
                    RetentionCells::materialize(&profile, &st.params, nominal_bound.max(prev * 2.0).max(40.0))
                }
            };
            st.retention = Some(Box::new(cells));
        }
    }

    /// Apply pending hammer flips and retention failures of a row.
    fn commit(&mut self, bank: u32, row: u32) {
        let s = self.profile.vpp_weight(self.vpp);
        let words = self.words_per_row() as usize;
        let pattern_factor = self.profile.hammer.pattern_factor;
        let now = self.time;

        // RowHammer.
        let (counter, floor) = {
            let st = self.state(bank, row);
            (st.counter, st.params.threshold_floor())
        };
        if counter > 0.0 {
            let st = self.state(bank, row);
            let noise = match st.interval_noise {
                Some(x) => x,
                None => {
                    let x = st.params.noise(st.epochs);
                    st.epochs += 1;
                    st.interval_noise = Some(x);
                    x
                }
            };
            if counter >= 2.0 * floor {
                let pf = match st.pattern_scale {
                    Some(x) => x,
                    None => pattern_scale(st, pattern_factor),
                };
                let scale = pf * noise;
                self.ensure_hammer(bank, row, counter / scale);
                let st = self.state(bank, row);
                let cells = st.hammer.as_ref().unwrap();
                let k = cells.flipped(s, scale, counter);
                if k > st.flipped {
                    let data = st.data.get_or_insert_with(|| vec![0; words].into_boxed_slice());
                    for c in &cells.cells[st.flipped..k] {
                        data[c.bit as usize / 64] ^= 1u64 << (c.bit % 64);
                    }
                    st.flipped = k;
                }
            }
        }

        // Retention.
        let (elapsed, restore_vpp) = {
            let st = self.state(bank, row);
            (now - st.last_restore, st.restore_vpp)
        };
        let fixture = self.fixtures.contains_key(&(bank, row));
        let c = if fixture { 1.0 } else { self.profile.retention_scale(restore_vpp) };
        let has_weak = !self.state(bank, row).params.weak.is_empty();
        if elapsed > 0.0 && (fixture || has_weak || elapsed > self.constants.retention_floor * c) {
            let bound = elapsed / c;
            self.ensure_retention(bank, row, bound);
            let st = self.state(bank, row);
            let cells = st.retention.as_ref().unwrap();
            let true_bit = st.params.true_bit as u64;
            let n = cells.cells.partition_point(|x| x.0 * c < elapsed);
            if n > 0 {
                let data = st.data.get_or_insert_with(|| vec![0; words].into_boxed_slice());
                for &(_, bit) in &cells.cells[..n] {
                    let w = &mut data[bit as usize / 64];
                    let m = 1u64 << (bit % 64);
                    if (*w & m != 0) as u64 == true_bit {
                        *w ^= m;
                    }
                }
            }
        }
    }

    /// Activation: settle pending effects, restore the row, disturb its neighbours.
    fn activate(&mut self, bank: u32, row: u32) {
        self.commit(bank, row);
        let now = self.time;
        let vpp = self.vpp;
        let st = self.state(bank, row);
        st.counter = 0.0;
        st.flipped = 0;
        st.interval_noise = None;
        st.pattern_scale = None;
        st.last_restore = now;
        st.restore_vpp = vpp;
        let p = self.mapping.physical(row).expect("row checked");
        let rows = self.rows_per_bank();
        for d in 1..=self.attenuation.len() as u32 {
            let w = self.attenuation[d as usize - 1];
            if w == 0.0 {
                continue;
            }
            for q in [p.checked_sub(d), p.checked_add(d).filter(|&q| q < rows)].into_iter().flatten() {
                let l = self.mapping.logical(q).expect("in range");
                self.state(bank, l).counter += w;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn small_profile() -> DeviceProfile {
        let mut p = presets::preset("A0").unwrap();
        p.rows_per_bank = 64;
        p.banks = 2;
        p.hammer.noise.sigma_median = 0.0;
        p
    }

    fn device() -> DramDevice {
        DramDevice::new(small_profile(), 1, AdjacencyMapping::identity(64)).unwrap()
    }

    #[test]
    fn rejects_illegal_commands() {
        let mut d = device();
        assert!(matches!(d.rd(0, 0), Err(DeviceError::BankClosed(0))));
        d.act(0, 3, 13.5).unwrap();
        assert!(matches!(d.act(0, 4, 13.5), Err(DeviceError::BankOpen { bank: 0, row: 3 })));
        assert!(d.act(1, 4, 13.5).is_ok());
        assert!(d.rd(0, 128).is_err());
        assert!(d.set_vpp(0.9).is_err());
        assert!(d.set_vpp(2.7).is_err());
        assert!(d.wait(-1.0).is_err());
    }

    #[test]
    fn act_disturbs_neighbours_and_clears_own_counter() {
        let mut d = device();
        d.act(0, 10, 13.5).unwrap();
        d.pre(0).unwrap();
        assert_eq!(d.disturbance_counter(0, 9), 1.0);
        assert_eq!(d.disturbance_counter(0, 11), 1.0);
        assert_eq!(d.disturbance_counter(0, 12), 0.0);
        d.act(0, 11, 13.5).unwrap();
        d.pre(0).unwrap();
        assert_eq!(d.disturbance_counter(0, 11), 0.0);
        assert_eq!(d.disturbance_counter(0, 10), 1.0);
    }

    #[test]
    fn fresh_row_reads_back_intact() {
        let mut d = device();
        d.fill_row(0, 20, 0xDEAD_BEEF).unwrap();
        let r = d.read_row(0, 20, NOMINAL_TRCD_NS).unwrap();
        assert!(r.iter().all(|&w| w == 0xDEAD_BEEF));
    }

    #[test]
    fn blast_radius_attenuation() {
        let mut d = device();
        d.set_blast_radius(2, &[0.5]).unwrap();
        d.act(0, 10, 13.5).unwrap();
        d.pre(0).unwrap();
        assert_eq!(d.disturbance_counter(0, 8), 0.5);
        assert_eq!(d.disturbance_counter(0, 12), 0.5);
        let mut e = device();
        e.set_blast_radius(2, &[0.0]).unwrap();
        e.act(0, 10, 13.5).unwrap();
        assert_eq!(e.disturbance_counter(0, 8), 0.0);
        assert!(d.set_blast_radius(3, &[0.5]).is_err());
    }

    #[test]
    fn closed_form_hammer_matches_literal() {
        let mut a = device();
        let mut b = device();
        let mut f = RowFixture::new(DataPattern::ALL[0]);
        f.hammer = vec![(3, 40.0), (70, 55.0), (100, 90.0)];
        for d in [&mut a, &mut b] {
            d.set_fixture(0, 10, f.clone()).unwrap();
            d.set_blast_radius(2, &[0.5]).unwrap();
            d.fill_row(0, 10, DataPattern::ALL[0].victim_word()).unwrap();
        }
        a.hammer(0, &[9, 11], 50).unwrap();
        for _ in 0..50 {
            for r in [9, 11] {
                b.act(0, r, 13.5).unwrap();
                b.pre(0).unwrap();
            }
        }
        assert_eq!(a.peek_row(0, 10).unwrap(), b.peek_row(0, 10).unwrap());
        for r in 5..16 {
            assert_eq!(a.disturbance_counter(0, r), b.disturbance_counter(0, r), "row {r}");
        }
    }

    #[test]
    fn unreliable_below_vpp_min() {
        let mut d = device();
        d.set_vpp(1.3).unwrap();
        assert!(d.is_unreliable());
        let r = d.read_row(0, 30, 30.0).unwrap();
        assert!(r.iter().any(|&w| w != 0));
    }

    #[test]
    fn retention_fixture_flips_exactly_one_cell() {
        let mut d = device();
        let mut f = RowFixture::new(DataPattern::ALL[0]);
        f.retention = vec![(5, 0.1), (9, 0.3)];
        d.set_fixture(0, 7, f).unwrap();
        d.fill_row(0, 7, u64::MAX).unwrap();
        d.wait(0.128).unwrap();
        let r = d.read_row(0, 7, 30.0).unwrap();
        assert_eq!(r[0], u64::MAX ^ (1 << 5));
        assert!(r[1..].iter().all(|&w| w == u64::MAX));
    }
}
