//! Reduce a campaign directory into summary tables and per-figure CSV series.

use crate::analysis::{
    bootstrap_band, correctability_report, cv_percentiles, guardband, guardband_report, normalize_and_band, normalize_rows,
    population_density, recommended_vpp, selective_refresh_fraction, Correctability, CorrectabilityReport, CvReport,
    Density, GuardbandReport, ModuleLevel, NormalizedSweep, DENSITY_BIN_WIDTH,
};
use crate::campaign::{load_records, CampaignError};
use crate::charlib::{HammerResult, RetentionResult, TrcdResult};
use crate::circuit::MonteCarloReport;
use crate::presets;
use crate::profile::{DeviceProfile, Manufacturer};
use crate::record::{Payload, SweepRecord};
use crate::rng::hash_str;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// VPP used for retention characterization when a module allows it.
pub const RETENTION_TEST_VPP: f64 = 1.5;

fn key(v: f64) -> i64 {
    (v * 1000.0).round() as i64
}

fn unkey(k: i64) -> f64 {
    k as f64 / 1000.0
}

fn window_ms(w: f64) -> u64 {
    (w * 1000.0).round() as u64
}

/// All measurements of one module, indexed by VPP (millivolts).
#[derive(Debug, Clone)]
pub struct ModuleRecords {
    pub profile: DeviceProfile,
    pub seed: u64,
    pub hammer: BTreeMap<i64, Vec<HammerResult>>,
    pub trcd: BTreeMap<i64, Vec<TrcdResult>>,
    pub retention: BTreeMap<i64, Vec<RetentionResult>>,
    pub skipped: usize,
}

impl ModuleRecords {
    fn vpps(&self) -> Vec<i64> {
        let mut v: Vec<i64> =
            self.hammer.keys().chain(self.trcd.keys()).chain(self.retention.keys()).copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn lowest_vpp(&self) -> Option<f64> {
        self.vpps().first().map(|&k| unkey(k))
    }

    fn hc_values(&self) -> Vec<(u32, f64, Option<f64>)> {
        self.hammer
            .iter()
            .flat_map(|(&k, rs)| rs.iter().map(move |h| (h.row, unkey(k), h.hc_first.map(|x| x as f64))))
            .collect()
    }

    fn ber_values(&self) -> Vec<(u32, f64, Option<f64>)> {
        self.hammer.iter().flat_map(|(&k, rs)| rs.iter().map(move |h| (h.row, unkey(k), Some(h.ber)))).collect()
    }

    /// Lowest tested VPP at or above the retention test voltage.
    pub fn retention_test_vpp(&self) -> Option<f64> {
        self.retention.keys().copied().filter(|&k| k >= key(RETENTION_TEST_VPP)).min().map(unkey)
    }
}

/// Group records by module, using profiles saved with the campaign or the shipped presets.
pub fn group_records(records: &[SweepRecord], profiles: &BTreeMap<String, DeviceProfile>) -> Result<Vec<ModuleRecords>, CampaignError> {
    let mut order: Vec<String> = Vec::new();
    let mut by: BTreeMap<String, ModuleRecords> = BTreeMap::new();
    for r in records {
        if !by.contains_key(&r.profile_id) {
            let profile = match profiles.get(&r.profile_id) {
                Some(p) => p.clone(),
                None => presets::preset(&r.profile_id)?,
            };
            order.push(r.profile_id.clone());
            by.insert(
                r.profile_id.clone(),
                ModuleRecords {
                    profile,
                    seed: r.seed,
                    hammer: BTreeMap::new(),
                    trcd: BTreeMap::new(),
                    retention: BTreeMap::new(),
                    skipped: 0,
                },
            );
        }
        let m = by.get_mut(&r.profile_id).unwrap();
        let k = key(r.vpp);
        match &r.result {
            Payload::Hammer(h) => m.hammer.entry(k).or_default().push(h.clone()),
            Payload::Trcd(t) => m.trcd.entry(k).or_default().push(*t),
            Payload::Retention(x) => m.retention.entry(k).or_default().push(x.clone()),
            Payload::Skipped { .. } => m.skipped += 1,
            Payload::Wcdp { .. } => {}
        }
    }
    Ok(order.into_iter().map(|id| by.remove(&id).unwrap()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub vpp: f64,
    pub rows: usize,
    /// Smallest HC_first over rows.
    pub hc_first: Option<f64>,
    /// Mean BER over rows at the reference hammer count.
    pub ber: f64,
    /// Largest tRCD_min over rows.
    pub trcd_min_ns: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleReport {
    pub id: String,
    pub manufacturer: Manufacturer,
    pub lowest_vpp: Option<f64>,
    pub levels: Vec<LevelSummary>,
    pub recommended_vpp: Option<f64>,
    /// Rows without a usable nominal HC_first / BER.
    pub missing_hc_baseline: usize,
    pub missing_ber_baseline: usize,
    pub skipped: usize,
    /// Smallest refresh window (ms) with a retention flip at the lowest tested VPP.
    pub first_failing_window_ms: Option<u64>,
    /// Same at the retention test VPP.
    pub first_failing_window_ms_test_vpp: Option<u64>,
    /// SECDED verdict at the lowest tested VPP and the smallest failing window.
    pub secded: Option<CorrectabilityReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetChange {
    pub rows: usize,
    /// Mean of per-row VPPmin/nominal ratios, minus one.
    pub mean_change: f64,
    pub fraction_increase: f64,
    pub fraction_decrease: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManufacturerReport {
    pub manufacturer: Manufacturer,
    pub hc: Option<Density>,
    pub ber: Option<Density>,
    /// Mean retention BER at about 4 s: at nominal VPP and at the retention test VPP.
    pub retention_4s_nominal: Option<f64>,
    pub retention_4s_test: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionSummary {
    /// Modules with any flip at 64 ms at the retention test VPP.
    pub failing_64ms_test_vpp: Vec<String>,
    /// Modules with any flip at 64 ms at their lowest tested VPP.
    pub failing_64ms_vpp_min: Vec<String>,
    /// No flips at windows below 64 ms anywhere.
    pub clean_below_64ms: bool,
    /// Every module is SECDED-correctable at its smallest failing window.
    pub secded_all_correctable: bool,
    /// Over modules failing at 64 ms at VPPmin: rows needing 2x refresh at 64 ms / 128 ms.
    pub selective_64ms: Option<f64>,
    pub selective_128ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub modules: Vec<ModuleReport>,
    pub hc_change: Option<FleetChange>,
    pub ber_change: Option<FleetChange>,
    pub manufacturers: Vec<ManufacturerReport>,
    pub cv: Option<CvReport>,
    pub guardband: Option<GuardbandReport>,
    pub retention: Option<RetentionSummary>,
}

/// Ratios at the lowest tested VPP over rows with a usable baseline.
fn vpp_min_ratios(m: &ModuleRecords, values: &[(u32, f64, Option<f64>)]) -> (Vec<f64>, usize) {
    let (rows, excluded) = normalize_rows(values, m.profile.vpp_nominal);
    let Some(lo) = m.hammer.keys().next().copied() else { return (vec![], excluded) };
    if lo == key(m.profile.vpp_nominal) {
        return (vec![], excluded);
    }
    let r = rows.values().filter_map(|v| v.iter().find(|p| key(p.0) == lo).map(|p| p.1)).collect();
    (r, excluded)
}

fn change(ratios: &[f64]) -> Option<FleetChange> {
    if ratios.is_empty() {
        return None;
    }
    let n = ratios.len() as f64;
    Some(FleetChange {
        rows: ratios.len(),
        mean_change: ratios.iter().sum::<f64>() / n - 1.0,
        fraction_increase: ratios.iter().filter(|&&r| r > 1.0 + 1e-12).count() as f64 / n,
        fraction_decrease: ratios.iter().filter(|&&r| r < 1.0 - 1e-12).count() as f64 / n,
    })
}

fn correctability(r: &RetentionResult) -> BTreeMap<u64, Correctability> {
    r.points.iter().map(|p| (window_ms(p.window_s), Correctability { words: p.words })).collect()
}

fn first_failing(rs: &[RetentionResult]) -> Option<u64> {
    rs.iter().filter_map(|r| r.first_failing_window()).map(window_ms).min()
}

/// Mean retention BER over rows at the window closest to 4 s.
fn retention_4s(rs: &[&RetentionResult]) -> Option<f64> {
    let vals: Vec<f64> = rs
        .iter()
        .filter_map(|r| r.points.iter().min_by(|a, b| (a.window_s - 4.0).abs().total_cmp(&(b.window_s - 4.0).abs())))
        .map(|p| p.ber)
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

pub fn build_report(modules: &[ModuleRecords]) -> Report {
    let mut out = Vec::new();
    let mut hc_all = Vec::new();
    let mut ber_all = Vec::new();
    let mut hc_mfr: BTreeMap<Manufacturer, Vec<f64>> = BTreeMap::new();
    let mut ber_mfr: BTreeMap<Manufacturer, Vec<f64>> = BTreeMap::new();
    let mut cv_inputs: Vec<&[f64]> = Vec::new();
    let mut trcd_modules = Vec::new();
    let mut ret_nominal: BTreeMap<Manufacturer, Vec<&RetentionResult>> = BTreeMap::new();
    let mut ret_test: BTreeMap<Manufacturer, Vec<&RetentionResult>> = BTreeMap::new();
    let mut retention = RetentionSummary {
        failing_64ms_test_vpp: vec![],
        failing_64ms_vpp_min: vec![],
        clean_below_64ms: true,
        secded_all_correctable: true,
        selective_64ms: None,
        selective_128ms: None,
    };
    let mut early_rows: Vec<BTreeMap<u64, Correctability>> = Vec::new();
    let mut any_retention = false;

    for m in modules {
        let p = &m.profile;
        let mfr = p.manufacturer_id;
        let (hc_r, missing_hc) = vpp_min_ratios(m, &m.hc_values());
        let (ber_r, missing_ber) = vpp_min_ratios(m, &m.ber_values());
        hc_mfr.entry(mfr).or_default().extend(&hc_r);
        ber_mfr.entry(mfr).or_default().extend(&ber_r);
        hc_all.extend(hc_r);
        ber_all.extend(ber_r);
        for rs in m.hammer.values() {
            cv_inputs.extend(rs.iter().map(|h| h.ber_iterations.as_slice()));
        }

        let mut levels: Vec<LevelSummary> = m
            .vpps()
            .into_iter()
            .rev()
            .map(|k| {
                let h = m.hammer.get(&k).map(Vec::as_slice).unwrap_or(&[]);
                let t = m.trcd.get(&k).map(Vec::as_slice).unwrap_or(&[]);
                LevelSummary {
                    vpp: unkey(k),
                    rows: h.len().max(t.len()),
                    hc_first: h.iter().filter_map(|x| x.hc_first).min().map(|x| x as f64),
                    ber: if h.is_empty() { 0.0 } else { h.iter().map(|x| x.ber).sum::<f64>() / h.len() as f64 },
                    trcd_min_ns: t.iter().map(|x| x.trcd_min_ns).reduce(f64::max),
                }
            })
            .collect();
        levels.retain(|l| l.rows > 0);
        let rec = if m.hammer.is_empty() {
            None
        } else {
            recommended_vpp(
                &levels.iter().map(|l| ModuleLevel { vpp: l.vpp, hc_first: l.hc_first, ber: l.ber }).collect::<Vec<_>>(),
            )
        };
        let trcd_nom = m.trcd.get(&key(p.vpp_nominal)).and_then(|t| t.iter().map(|x| x.trcd_min_ns).reduce(f64::max));
        let trcd_lo = m.trcd.iter().next().and_then(|(_, t)| t.iter().map(|x| x.trcd_min_ns).reduce(f64::max));
        if let (Some(a), Some(b)) = (trcd_nom, trcd_lo) {
            trcd_modules.push((p.id.clone(), a, b));
        }

        let mut first = None;
        let mut first_test = None;
        let mut secded = None;
        if let Some((&lo, rs)) = m.retention.iter().next() {
            any_retention = true;
            first = first_failing(rs);
            if let Some(w) = first {
                let at: Vec<Correctability> = rs
                    .iter()
                    .filter_map(|r| r.points.iter().find(|x| window_ms(x.window_s) == w))
                    .map(|x| Correctability { words: x.words })
                    .collect();
                let rep = correctability_report(w as f64 / 1000.0, &at);
                retention.secded_all_correctable &= rep.correctable;
                secded = Some(rep);
            }
            if first.is_some_and(|w| w < 64) {
                retention.clean_below_64ms = false;
            }
            if first == Some(64) {
                retention.failing_64ms_vpp_min.push(p.id.clone());
                early_rows.extend(rs.iter().map(correctability));
            }
            let _ = lo;
            if let Some(tv) = m.retention_test_vpp() {
                let rt = &m.retention[&key(tv)];
                first_test = first_failing(rt);
                if first_test.is_some_and(|w| w <= 64) {
                    retention.failing_64ms_test_vpp.push(p.id.clone());
                }
                if first_test.is_some_and(|w| w < 64) {
                    retention.clean_below_64ms = false;
                }
                ret_test.entry(mfr).or_default().extend(rt.iter());
            }
            if let Some(rn) = m.retention.get(&key(p.vpp_nominal)) {
                ret_nominal.entry(mfr).or_default().extend(rn.iter());
            }
        }

        out.push(ModuleReport {
            id: p.id.clone(),
            manufacturer: mfr,
            lowest_vpp: m.lowest_vpp(),
            levels,
            recommended_vpp: rec,
            missing_hc_baseline: missing_hc,
            missing_ber_baseline: missing_ber,
            skipped: m.skipped,
            first_failing_window_ms: first,
            first_failing_window_ms_test_vpp: first_test,
            secded,
        });
    }

    if !early_rows.is_empty() {
        retention.selective_64ms = selective_refresh_fraction(&early_rows, 64);
        retention.selective_128ms = selective_refresh_fraction(&early_rows, 128);
    }
    let manufacturers = Manufacturer::ALL
        .iter()
        .filter(|m| modules.iter().any(|x| x.profile.manufacturer_id == **m))
        .map(|&mf| ManufacturerReport {
            manufacturer: mf,
            hc: hc_mfr.get(&mf).filter(|v| !v.is_empty()).map(|v| population_density(v, DENSITY_BIN_WIDTH)),
            ber: ber_mfr.get(&mf).filter(|v| !v.is_empty()).map(|v| population_density(v, DENSITY_BIN_WIDTH)),
            retention_4s_nominal: ret_nominal.get(&mf).and_then(|v| retention_4s(v)),
            retention_4s_test: ret_test.get(&mf).and_then(|v| retention_4s(v)),
        })
        .collect();
    Report {
        modules: out,
        hc_change: change(&hc_all),
        ber_change: change(&ber_all),
        manufacturers,
        cv: (!cv_inputs.is_empty()).then(|| cv_percentiles(cv_inputs)),
        guardband: (!trcd_modules.is_empty()).then(|| guardband_report(&trcd_modules)),
        retention: any_retention.then_some(retention),
    }
}

fn write(path: &Path, text: String) -> Result<(), CampaignError> {
    fs::write(path, text).map_err(|source| CampaignError::Io { path: path.display().to_string(), source })
}

fn density_rows(s: &mut String, label: &str, d: &Density) {
    for (i, (c, v)) in d.counts.iter().zip(d.density()).enumerate() {
        let lo = d.lo + i as f64 * d.bin_width;
        let _ = writeln!(s, "{label},{lo:.4},{:.4},{c},{v:.6}", lo + d.bin_width);
    }
}

fn sweep_rows(s: &mut String, id: &str, sw: &NormalizedSweep) {
    for p in sw.points.iter().rev() {
        let _ = writeln!(s, "{id},{:.2},{},{:.6},{:.6},{:.6}", p.vpp, p.rows, p.mean, p.band_lo, p.band_hi);
    }
}

/// Write fig2 through fig6, fig9 and fig10 series for a characterization run.
pub fn write_figures(modules: &[ModuleRecords], report: &Report, dir: &Path) -> Result<(), CampaignError> {
    fs::create_dir_all(dir).map_err(|source| CampaignError::Io { path: dir.display().to_string(), source })?;
    let header = "module,vpp,rows,mean,band_lo,band_hi\n";
    let (mut f2, mut f4) = (header.to_string(), header.to_string());
    let mut f6 = String::from("module,vpp,trcd_min_ns,guardband\n");
    for m in modules {
        let seed = m.seed ^ hash_str(&m.profile.id);
        if !m.hammer.is_empty() {
            sweep_rows(&mut f2, &m.profile.id, &normalize_and_band(&m.ber_values(), m.profile.vpp_nominal, seed));
            sweep_rows(&mut f4, &m.profile.id, &normalize_and_band(&m.hc_values(), m.profile.vpp_nominal, seed));
        }
        for (&k, t) in m.trcd.iter().rev() {
            if let Some(x) = t.iter().map(|x| x.trcd_min_ns).reduce(f64::max) {
                let _ = writeln!(f6, "{},{:.2},{x:.2},{:.6}", m.profile.id, unkey(k), guardband(x));
            }
        }
    }
    let dh = "manufacturer,bin_lo,bin_hi,count,density\n";
    let (mut f3, mut f5) = (dh.to_string(), dh.to_string());
    for mr in &report.manufacturers {
        let l = mr.manufacturer.to_string();
        if let Some(d) = &mr.ber {
            density_rows(&mut f3, &l, d);
        }
        if let Some(d) = &mr.hc {
            density_rows(&mut f5, &l, d);
        }
    }

    // Retention BER per manufacturer, VPP and window, with a bootstrap band across rows.
    let mut f9 = String::from("manufacturer,vpp,window_s,rows,mean_ber,band_lo,band_hi\n");
    let mut f10 = String::from("window_ms,manufacturer,single_flip_words,rows,fraction\n");
    for mf in Manufacturer::ALL {
        let ms: Vec<&ModuleRecords> = modules.iter().filter(|m| m.profile.manufacturer_id == mf).collect();
        let mut by: BTreeMap<(i64, u64), Vec<f64>> = BTreeMap::new();
        let mut lowest: Vec<BTreeMap<u64, Correctability>> = Vec::new();
        for m in &ms {
            for (&k, rs) in &m.retention {
                for r in rs {
                    for p in &r.points {
                        by.entry((k, window_ms(p.window_s))).or_default().push(p.ber);
                    }
                }
            }
            if let Some((_, rs)) = m.retention.iter().next() {
                lowest.extend(rs.iter().map(correctability));
            }
        }
        for (&(k, w), v) in by.iter().rev() {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let (lo, hi) = bootstrap_band(v, 0.90, k as u64 ^ w);
            let _ = writeln!(f9, "{mf},{:.2},{:.3},{},{mean:.6e},{lo:.6e},{hi:.6e}", unkey(k), w as f64 / 1000.0, v.len());
        }
        for w in [64u64, 128] {
            let mut hist: BTreeMap<u32, usize> = BTreeMap::new();
            for r in &lowest {
                if let (Some(now), Some(before)) = (r.get(&w), r.get(&(w / 2))) {
                    if now.erroneous() && !before.erroneous() {
                        *hist.entry(now.words[1]).or_default() += 1;
                    }
                }
            }
            for (words, n) in hist {
                let _ = writeln!(f10, "{w},{mf},{words},{n},{:.6}", n as f64 / lowest.len() as f64);
            }
        }
    }
    for (name, text) in [("fig2", f2), ("fig3", f3), ("fig4", f4), ("fig5", f5), ("fig6", f6), ("fig9", f9), ("fig10", f10)] {
        write(&dir.join(format!("{name}.csv")), text)?;
    }
    Ok(())
}

/// fig7b (tRCD) and fig8b (tRAS) histogram series plus the per-VPP worst-case table.
pub fn write_circuit_figures(mc: &MonteCarloReport, dir: &Path) -> Result<(), CampaignError> {
    fs::create_dir_all(dir).map_err(|source| CampaignError::Io { path: dir.display().to_string(), source })?;
    for (name, tras) in [("fig7b", false), ("fig8b", true)] {
        let mut buf = Vec::new();
        mc.write_histogram_csv(&mut buf, tras).expect("in-memory write");
        write(&dir.join(format!("{name}.csv")), String::from_utf8(buf).expect("ascii"))?;
    }
    let mut s = String::from("vpp,runs,trcd_failures,mean_trcd_ns,std_trcd_ns,worst_trcd_ns,guardband,mean_tras_ns,mean_v_saturation\n");
    for p in &mc.points {
        let _ = writeln!(
            s,
            "{:.2},{},{},{:.4},{:.4},{:.4},{:.6},{:.4},{:.4}",
            p.vpp,
            p.runs,
            p.trcd_failures,
            p.trcd.mean,
            p.trcd.std,
            p.worst_trcd,
            guardband(p.worst_trcd),
            p.tras.mean,
            p.v_saturation.mean
        );
    }
    write(&dir.join("fig7b_summary.csv"), s)
}

/// Module table with the measured counterpart of the published per-module columns.
pub fn module_table(report: &Report) -> String {
    let mut s = String::from("module,vpp_min,hc_nominal,ber_nominal,hc_vpp_min,ber_vpp_min,vpp_rec,hc_rec,ber_rec,trcd_nominal_ns,trcd_vpp_min_ns\n");
    let f = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v}"));
    for m in &report.modules {
        let (Some(first), Some(last)) = (m.levels.first(), m.levels.last()) else { continue };
        let rec = m.recommended_vpp.and_then(|v| m.levels.iter().find(|l| (l.vpp - v).abs() < 1e-9));
        let _ = writeln!(
            s,
            "{},{:.2},{},{:.3e},{},{:.3e},{},{},{},{},{}",
            m.id,
            last.vpp,
            f(first.hc_first),
            first.ber,
            f(last.hc_first),
            last.ber,
            f(m.recommended_vpp),
            f(rec.and_then(|l| l.hc_first)),
            rec.map_or(String::new(), |l| format!("{:.3e}", l.ber)),
            f(first.trcd_min_ns),
            f(last.trcd_min_ns),
        );
    }
    s
}

/// Load a campaign directory: merged records plus the profiles saved with it.
pub fn load_campaign(dir: &Path) -> Result<Vec<ModuleRecords>, CampaignError> {
    let records = load_records(&dir.join("records.jsonl"))?;
    let mut profiles = BTreeMap::new();
    let pdir = dir.join("profiles");
    if pdir.is_dir() {
        let entries = fs::read_dir(&pdir).map_err(|source| CampaignError::Io { path: pdir.display().to_string(), source })?;
        for e in entries.flatten() {
            if e.path().extension().is_some_and(|x| x == "toml") {
                let p = DeviceProfile::load(&e.path())?;
                profiles.insert(p.id.clone(), p);
            }
        }
    }
    group_records(&records, &profiles)
}

/// Analyze `input` and write `summary.json`, `modules.csv` and figure series into `out`.
pub fn report(input: &Path, out: &Path) -> Result<Report, CampaignError> {
    let modules = load_campaign(input)?;
    let rep = build_report(&modules);
    fs::create_dir_all(out).map_err(|source| CampaignError::Io { path: out.display().to_string(), source })?;
    for m in rep.modules.iter().filter(|m| m.missing_hc_baseline + m.missing_ber_baseline > 0) {
        tracing::warn!(module = %m.id, hc = m.missing_hc_baseline, ber = m.missing_ber_baseline, "rows without nominal baseline");
    }
    let json = serde_json::to_string_pretty(&rep).map_err(|e| CampaignError::Config(e.to_string()))?;
    write(&out.join("summary.json"), json + "\n")?;
    write(&out.join("modules.csv"), module_table(&rep))?;
    write_figures(&modules, &rep, &out.join("figures"))?;
    Ok(rep)
}
