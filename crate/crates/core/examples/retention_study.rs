//! Retention failures of one module at its retention test voltage.
//!
//! cargo run --release --example retention_study -- [preset] [rows] [seed]
//!
//! Sweeps every refresh window for `rows` evenly spaced rows using each row's
//! worst retention pattern, then prints the per-window BER, the share of rows
//! failing for the first time, and whether single-error correction covers them.

use std::collections::BTreeMap;
use vpplab::charlib::{determine_wcdp_retention, Settings};
use vpplab::device::DramDevice;
use vpplab::mapping::AdjacencyMapping;
use vpplab::presets::{preset, retention_test_vpp};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let id = args.first().map_or("B6", String::as_str);
    let rows: u32 = args.get(1).map_or(Ok(512), |s| s.parse())?;
    let seed: u64 = args.get(2).map_or(Ok(0), |s| s.parse())?;

    let p = preset(id)?;
    let vpp = retention_test_vpp(&p);
    let mut dev = DramDevice::new(p.clone(), seed, AdjacencyMapping::identity(p.rows_per_bank))?;
    dev.set_vpp(vpp)?;
    let s = Settings { iterations: 1, ..Settings::default() };
    let stride = (p.rows_per_bank / rows.max(1)).max(1);

    // window (ms) -> (sum of BER, rows first failing here, of which correctable)
    let mut by_window: BTreeMap<u64, (f64, u32, u32)> = BTreeMap::new();
    let mut sampled = 0u32;
    for row in (0..p.rows_per_bank).step_by(stride as usize).take(rows as usize) {
        let (_, r) = determine_wcdp_retention(&mut dev, 0, row, &s)?;
        sampled += 1;
        let first = r.first_failing_window();
        for pt in &r.points {
            let ms = (pt.window_s * 1000.0).round() as u64;
            let e = by_window.entry(ms).or_default();
            e.0 += pt.ber;
            if first == Some(pt.window_s) {
                e.1 += 1;
                if pt.words[2] == 0 {
                    e.2 += 1;
                }
            }
        }
    }

    println!("{id} at {vpp:.2} V, {sampled} rows");
    println!("window_ms  mean_ber     first_fail  correctable");
    for (ms, (ber, first, ok)) in by_window {
        println!("{ms:>9}  {:.4e}  {first:>10}  {ok:>11}", ber / f64::from(sampled));
    }
    Ok(())
}
