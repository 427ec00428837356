//! Bitline and cell voltage after activation at a few wordline voltages.
//!
//! cargo run --release --example activation_waveform -- [vpp...]
//!
//! Prints a coarse table and the latencies; set `CSV_DIR` to also dump the
//! full waveforms as `waveform-<vpp>.csv`.

use std::fs::File;
use std::io::BufWriter;
use vpplab::circuit::{charge_sharing_voltage, saturation_voltage, simulate_activation, CircuitError, CircuitParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut grid: Vec<f64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    if grid.is_empty() {
        grid = vec![2.5, 2.0, 1.8, 1.7, 1.6];
    }
    let base = CircuitParams::default();
    let shared = charge_sharing_voltage(&base, base.vdd, base.precharge());
    println!("charge sharing with a full cell: {shared:.4} V, readable above {:.4} V", base.v_readable());
    println!("vpp   v_sat   bl@5ns  bl@10ns bl@20ns cell@35ns  tRCD    tRAS");
    let dump = std::env::var_os("CSV_DIR");
    for vpp in grid {
        let p = base.clone().with_vpp(vpp);
        let r = match simulate_activation(&p, 60.0) {
            Ok(r) => r,
            Err(CircuitError::NonConvergence { partial, .. }) => *partial,
            Err(e) => return Err(e.into()),
        };
        let at = |f: Option<f64>| f.map_or("   -   ".to_string(), |v| format!("{v:.4}"));
        let lat = |t: Option<f64>| t.map_or("never".to_string(), |v| format!("{v:.2}"));
        println!(
            "{vpp:.2}  {:.4}  {}  {}  {}  {}    {:>6}  {:>6}",
            saturation_voltage(&p),
            at(r.bitline_at(5.0)),
            at(r.bitline_at(10.0)),
            at(r.bitline_at(20.0)),
            at(r.cell_at(35.0)),
            lat(r.trcd_min),
            lat(r.tras_min),
        );
        if let Some(dir) = &dump {
            let path = std::path::Path::new(dir).join(format!("waveform-{vpp:.2}.csv"));
            r.write_csv(BufWriter::new(File::create(path)?))?;
        }
    }
    Ok(())
}
