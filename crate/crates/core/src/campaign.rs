//! End-to-end characterization campaigns over module profiles.
//!
//! Output layout under the campaign directory:
//!
//! ```text
//! profiles/<id>.toml             profile used for each module
//! records/<id>/wcdp.jsonl        worst-case patterns chosen at nominal VPP
//! records/<id>/vpp-<v>.jsonl     per-row results at one VPP
//! records/<id>/*.done            completion markers used by --resume
//! records.jsonl                  all of the above merged in (module, stage, vpp, row) order
//! ```

use crate::charlib::{
    determine_wcdp_retention, determine_wcdp_rowhammer, measure_row, measure_trcd_min, retention_sweep, CharError,
    RowSample, Settings,
};
use crate::circuit::{monte_carlo, simulate_activation, CircuitError, MonteCarloConfig, MonteCarloReport};
use crate::device::{DeviceError, DramDevice, VPP_RANGE};
use crate::mapping::AdjacencyMapping;
use crate::pattern::DataPattern;
use crate::profile::{DeviceProfile, ProfileError};
use crate::record::{read_records, write_records, Payload, RecordError, SweepRecord};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use thiserror::Error;

/// Environment variable that overrides the output directory.
pub const OUT_DIR_ENV: &str = "VPPLAB_OUT";

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("invalid campaign configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("{module} at {vpp} V: {source}")]
    Measurement { module: String, vpp: f64, source: CharError },
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error("{path}: {source}")]
    Record { path: String, source: RecordError },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("campaign stopped after {0} units; rerun with --resume")]
    Interrupted(usize),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CampaignError + '_ {
    move |source| CampaignError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Test {
    Rowhammer,
    Trcd,
    Retention,
    Circuit,
}

impl FromStr for Test {
    type Err = CampaignError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "rowhammer" => Ok(Test::Rowhammer),
            "trcd" => Ok(Test::Trcd),
            "retention" => Ok(Test::Retention),
            "circuit" => Ok(Test::Circuit),
            other => Err(CampaignError::Config(format!("unknown test {other:?}"))),
        }
    }
}

/// Default sweep: 2.5 V down to 1.0 V in 0.1 V steps; each module stops at its VPPmin.
pub fn default_vpp_grid() -> Vec<f64> {
    (0..=15).map(|i| round_mv(2.5 - 0.1 * i as f64)).collect()
}

fn round_mv(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

#[derive(Debug, Clone)]
pub struct CampaignConfig {
    pub profiles: Vec<DeviceProfile>,
    pub seed: u64,
    pub vpp_grid: Vec<f64>,
    pub tests: BTreeSet<Test>,
    pub settings: Settings,
    /// Rows per chunk of the four-chunk row sample.
    pub rows_per_chunk: u32,
    pub bank: u32,
    pub out: PathBuf,
    pub jobs: usize,
    pub resume: bool,
    /// Stop after this many units of work (used to exercise resumption).
    pub max_units: Option<usize>,
}

impl CampaignConfig {
    pub fn new(profiles: Vec<DeviceProfile>, out: impl Into<PathBuf>) -> Self {
        Self {
            profiles,
            seed: 0,
            vpp_grid: default_vpp_grid(),
            tests: [Test::Rowhammer, Test::Trcd, Test::Retention].into(),
            settings: Settings::default(),
            rows_per_chunk: RowSample::CHUNK,
            bank: 0,
            out: out.into(),
            jobs: 1,
            resume: false,
            max_units: None,
        }
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        if self.tests.is_empty() {
            return Err(CampaignError::Config("select at least one test".into()));
        }
        if self.profiles.is_empty() {
            return Err(CampaignError::Config("no profiles given".into()));
        }
        if self.vpp_grid.is_empty() || self.vpp_grid.iter().any(|v| !(VPP_RANGE.0..=VPP_RANGE.1).contains(v)) {
            return Err(CampaignError::Config("vpp grid must be non-empty and within [1.0, 2.6] V".into()));
        }
        if self.settings.iterations == 0 {
            return Err(CampaignError::Config("iterations must be positive".into()));
        }
        let mut ids = BTreeSet::new();
        for p in &self.profiles {
            p.validate()?;
            if !ids.insert(&p.id) {
                return Err(CampaignError::Config(format!("profile {} given twice", p.id)));
            }
        }
        Ok(())
    }

    /// Grid points a module is swept at: nominal first, then descending, none below VPPmin.
    pub fn module_grid(&self, p: &DeviceProfile) -> Vec<f64> {
        let mut g: Vec<f64> = self
            .vpp_grid
            .iter()
            .copied()
            .map(round_mv)
            .filter(|&v| v >= p.vpp_min - 1e-9 && v <= p.vpp_nominal + 1e-9)
            .chain(std::iter::once(p.vpp_nominal))
            .collect();
        g.sort_by(|a, b| b.total_cmp(a));
        g.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        g
    }
}

fn module_dir(out: &Path, id: &str) -> PathBuf {
    out.join("records").join(id)
}

fn vpp_stem(vpp: f64) -> String {
    format!("vpp-{vpp:.2}")
}

#[derive(Debug, Clone)]
enum Unit {
    Wcdp(usize),
    Sweep(usize, f64),
}

impl Unit {
    fn stem(&self) -> String {
        match self {
            Unit::Wcdp(_) => "wcdp".into(),
            Unit::Sweep(_, v) => vpp_stem(*v),
        }
    }

    fn module(&self) -> usize {
        match self {
            Unit::Wcdp(m) | Unit::Sweep(m, _) => *m,
        }
    }
}

/// Write `records` then a completion marker; the records file appears atomically.
fn persist(dir: &Path, stem: &str, records: &[SweepRecord]) -> Result<(), CampaignError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tmp = dir.join(format!("{stem}.jsonl.tmp"));
    let fin = dir.join(format!("{stem}.jsonl"));
    {
        let f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        let mut w = BufWriter::new(f);
        write_records(&mut w, records).map_err(|source| CampaignError::Record { path: tmp.display().to_string(), source })?;
        w.flush().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, &fin).map_err(io_err(&fin))?;
    let done = dir.join(format!("{stem}.done"));
    fs::write(&done, b"").map_err(io_err(&done))
}

pub fn load_records(path: &Path) -> Result<Vec<SweepRecord>, CampaignError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    read_records(BufReader::new(f)).map_err(|source| CampaignError::Record { path: path.display().to_string(), source })
}

/// Per-row worst-case patterns read back from a module's WCDP stage.
#[derive(Debug, Clone, Default)]
struct Wcdps {
    rowhammer: BTreeMap<u32, Option<u8>>,
    retention: BTreeMap<u32, Option<u8>>,
}

fn wcdp_unit(cfg: &CampaignConfig, p: &DeviceProfile, rows: &[u32]) -> Result<Vec<SweepRecord>, CampaignError> {
    let mut dev = DramDevice::new(p.clone(), cfg.seed, AdjacencyMapping::identity(p.rows_per_bank))?;
    let meas = |source| CampaignError::Measurement { module: p.id.clone(), vpp: p.vpp_nominal, source };
    let mut out = Vec::with_capacity(rows.len());
    for &row in rows {
        let mut rh = None;
        let mut ret = None;
        if cfg.tests.contains(&Test::Rowhammer) || cfg.tests.contains(&Test::Trcd) {
            match determine_wcdp_rowhammer(&mut dev, cfg.bank, row, &cfg.settings) {
                Ok(c) => rh = c.pattern,
                Err(CharError::EdgeRow(_)) => {}
                Err(e) => return Err(meas(e)),
            }
        }
        if cfg.tests.contains(&Test::Retention) {
            ret = Some(determine_wcdp_retention(&mut dev, cfg.bank, row, &cfg.settings).map_err(meas)?.0);
        }
        out.push(SweepRecord::new(&p.id, cfg.seed, p.vpp_nominal, cfg.bank, Payload::Wcdp { row, rowhammer: rh, retention: ret }));
    }
    Ok(out)
}

fn sweep_unit(
    cfg: &CampaignConfig,
    p: &DeviceProfile,
    vpp: f64,
    rows: &[u32],
    w: &Wcdps,
) -> Result<Vec<SweepRecord>, CampaignError> {
    let mut dev = DramDevice::new(p.clone(), cfg.seed, AdjacencyMapping::identity(p.rows_per_bank))?;
    dev.set_vpp(vpp)?;
    let meas = |source| CampaignError::Measurement { module: p.id.clone(), vpp, source };
    let rec = |payload| SweepRecord::new(&p.id, cfg.seed, vpp, cfg.bank, payload);
    let skip = |row, test: &str, reason: String| rec(Payload::Skipped { row, test: test.into(), reason });
    let mut out = Vec::new();
    for &row in rows {
        let rh = w.rowhammer.get(&row).copied().flatten();
        if cfg.tests.contains(&Test::Rowhammer) {
            match rh {
                Some(id) => match measure_row(&mut dev, cfg.bank, row, DataPattern::ALL[id as usize], &cfg.settings) {
                    Ok(h) => out.push(rec(Payload::Hammer(h))),
                    Err(CharError::EdgeRow(_)) => out.push(skip(row, "rowhammer", "edge row".into())),
                    Err(e) => return Err(meas(e)),
                },
                None => out.push(skip(row, "rowhammer", "no worst-case pattern at nominal VPP".into())),
            }
        }
        if cfg.tests.contains(&Test::Trcd) {
            let pat = DataPattern::ALL[rh.unwrap_or(0) as usize];
            match measure_trcd_min(&mut dev, cfg.bank, row, pat, &cfg.settings) {
                Ok(t) => out.push(rec(Payload::Trcd(t))),
                Err(e @ CharError::TrcdCeiling { .. }) => out.push(skip(row, "trcd", e.to_string())),
                Err(e) => return Err(meas(e)),
            }
        }
        if cfg.tests.contains(&Test::Retention) {
            let pat = DataPattern::ALL[w.retention.get(&row).copied().flatten().unwrap_or(0) as usize];
            out.push(rec(Payload::Retention(retention_sweep(&mut dev, cfg.bank, row, pat, &cfg.settings).map_err(meas)?)));
        }
    }
    Ok(out)
}

fn read_wcdps(path: &Path) -> Result<Wcdps, CampaignError> {
    let mut w = Wcdps::default();
    for r in load_records(path)? {
        if let Payload::Wcdp { row, rowhammer, retention } = r.result {
            w.rowhammer.insert(row, rowhammer);
            w.retention.insert(row, retention);
        }
    }
    Ok(w)
}

/// Summary of a finished characterization run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharacterizeOutcome {
    pub units_run: usize,
    pub units_skipped: usize,
    pub records: usize,
}

/// Run (or resume) a characterization campaign and merge its records.
pub fn characterize(cfg: &CampaignConfig) -> Result<CharacterizeOutcome, CampaignError> {
    cfg.validate()?;
    let tests: BTreeSet<Test> = cfg.tests.iter().copied().filter(|t| *t != Test::Circuit).collect();
    if tests.is_empty() {
        return Err(CampaignError::Config("characterize needs rowhammer, trcd or retention".into()));
    }
    let cfg = &CampaignConfig { tests, ..cfg.clone() };
    let pdir = cfg.out.join("profiles");
    fs::create_dir_all(&pdir).map_err(io_err(&pdir))?;
    for p in &cfg.profiles {
        let path = pdir.join(format!("{}.toml", p.id));
        fs::write(&path, p.to_toml()?).map_err(io_err(&path))?;
    }

    let samples: Vec<Vec<u32>> = cfg
        .profiles
        .iter()
        .map(|p| RowSample::with_chunk(cfg.bank, p.rows_per_bank, cfg.rows_per_chunk).rows)
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| CampaignError::Config(e.to_string()))?;
    let started = AtomicUsize::new(0);
    let ran = AtomicUsize::new(0);
    let skipped = AtomicUsize::new(0);

    let run_unit = |u: &Unit| -> Result<(), CampaignError> {
        let p = &cfg.profiles[u.module()];
        let dir = module_dir(&cfg.out, &p.id);
        if cfg.resume && dir.join(format!("{}.done", u.stem())).exists() {
            skipped.fetch_add(1, Ordering::Relaxed);
            return Ok(());
        }
        let n = started.fetch_add(1, Ordering::SeqCst);
        if cfg.max_units.is_some_and(|m| n >= m) {
            return Err(CampaignError::Interrupted(n));
        }
        let records = match u {
            Unit::Wcdp(_) => wcdp_unit(cfg, p, &samples[u.module()])?,
            Unit::Sweep(_, vpp) => {
                let w = read_wcdps(&dir.join("wcdp.jsonl"))?;
                sweep_unit(cfg, p, *vpp, &samples[u.module()], &w)?
            }
        };
        tracing::info!(module = %p.id, unit = %u.stem(), records = records.len(), "unit done");
        persist(&dir, &u.stem(), &records)?;
        ran.fetch_add(1, Ordering::Relaxed);
        Ok(())
    };

    let wcdp: Vec<Unit> = (0..cfg.profiles.len()).map(Unit::Wcdp).collect();
    let sweeps: Vec<Unit> = cfg
        .profiles
        .iter()
        .enumerate()
        .flat_map(|(m, p)| cfg.module_grid(p).into_iter().map(move |v| Unit::Sweep(m, v)))
        .collect();
    let first_error = |rs: Vec<Result<(), CampaignError>>| -> Result<(), CampaignError> {
        let mut interrupted = None;
        for r in rs {
            match r {
                Err(CampaignError::Interrupted(n)) => interrupted = Some(interrupted.map_or(n, |m: usize| m.min(n))),
                Err(e) => return Err(e),
                Ok(()) => {}
            }
        }
        interrupted.map_or(Ok(()), |n| Err(CampaignError::Interrupted(n)))
    };
    pool.install(|| first_error(wcdp.par_iter().map(run_unit).collect()))?;
    pool.install(|| first_error(sweeps.par_iter().map(run_unit).collect()))?;

    let merged = merge(cfg)?;
    Ok(CharacterizeOutcome {
        units_run: ran.into_inner(),
        units_skipped: skipped.into_inner(),
        records: merged,
    })
}

/// Concatenate unit files into `records.jsonl` in deterministic order.
fn merge(cfg: &CampaignConfig) -> Result<usize, CampaignError> {
    let path = cfg.out.join("records.jsonl");
    let mut w = BufWriter::new(fs::File::create(&path).map_err(io_err(&path))?);
    let mut n = 0;
    for p in &cfg.profiles {
        let dir = module_dir(&cfg.out, &p.id);
        let stems = std::iter::once("wcdp".to_string()).chain(cfg.module_grid(p).into_iter().map(vpp_stem));
        for stem in stems {
            let text = fs::read_to_string(dir.join(format!("{stem}.jsonl"))).map_err(io_err(&dir))?;
            n += text.lines().count();
            w.write_all(text.as_bytes()).map_err(io_err(&path))?;
        }
    }
    w.flush().map_err(io_err(&path))?;
    Ok(n)
}

/// Circuit study settings.
#[derive(Debug, Clone)]
pub struct CircuitCampaign {
    pub profile: DeviceProfile,
    pub monte_carlo: MonteCarloConfig,
    pub out: PathBuf,
    pub jobs: usize,
}

/// Monte-Carlo tRCD/tRAS distributions plus one nominal waveform per grid point.
pub fn circuit(c: &CircuitCampaign) -> Result<MonteCarloReport, CampaignError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(c.jobs.max(1))
        .build()
        .map_err(|e| CampaignError::Config(e.to_string()))?;
    let base = c.profile.circuit_params();
    let report = pool.install(|| monte_carlo(&base, &c.monte_carlo))?;
    let dir = c.out.join("circuit");
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    for &vpp in &c.monte_carlo.vpp_grid {
        let path = dir.join(format!("waveform-{vpp:.2}.csv"));
        let f = BufWriter::new(fs::File::create(&path).map_err(io_err(&path))?);
        match simulate_activation(&base.clone().with_vpp(vpp), 60.0) {
            Ok(r) => r.write_csv(f).map_err(io_err(&path))?,
            Err(CircuitError::NonConvergence { partial, .. }) => partial.write_csv(f).map_err(io_err(&path))?,
            Err(e) => return Err(e.into()),
        }
    }
    let path = dir.join("monte_carlo.json");
    let json = serde_json::to_string_pretty(&report).map_err(|e| CampaignError::Config(e.to_string()))?;
    fs::write(&path, json + "\n").map_err(io_err(&path))?;
    crate::report::write_circuit_figures(&report, &c.out.join("figures"))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::preset;

    #[test]
    fn grid_stops_at_vpp_min() {
        let cfg = CampaignConfig::new(vec![], "/tmp/x");
        let g = cfg.module_grid(&preset("A0").unwrap());
        assert_eq!(g.first(), Some(&2.5));
        assert_eq!(g.last(), Some(&1.4));
        assert_eq!(g.len(), 12);
        let g = cfg.module_grid(&preset("A5").unwrap());
        assert_eq!(g, vec![2.5, 2.4]);
    }

    #[test]
    fn empty_test_set_is_rejected() {
        let mut cfg = CampaignConfig::new(vec![preset("A0").unwrap()], "/tmp/x");
        cfg.tests.clear();
        assert!(matches!(cfg.validate(), Err(CampaignError::Config(_))));
        assert!("bogus".parse::<Test>().is_err());
    }
}
