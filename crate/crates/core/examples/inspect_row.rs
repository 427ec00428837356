//! Ground-truth view of one row across the VPP grid, next to what the HC_first search measures.
//!
//! cargo run --release --example inspect_row -- A4 16435 [seed]

use vpplab::charlib::{measure_row, Settings};
use vpplab::device::DramDevice;
use vpplab::mapping::AdjacencyMapping;
use vpplab::presets::preset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let id = args.first().map_or("A0", String::as_str);
    let row: u32 = args.get(1).map_or(Ok(100), |s| s.parse())?;
    let seed: u64 = args.get(2).map_or(Ok(0), |s| s.parse())?;
    let p = preset(id)?;
    let s = Settings::default();
    println!("vpp   true_hc   measured  ber_max   trcd_req");
    let mut v = p.vpp_nominal;
    while v >= p.vpp_min - 1e-9 {
        let mut dev = DramDevice::new(p.clone(), seed, AdjacencyMapping::identity(p.rows_per_bank))?;
        dev.set_vpp(v)?;
        let worst = dev.worst_pattern(0, row);
        let truth = dev.row_hc_first(0, row);
        let m = measure_row(&mut dev, 0, row, worst, &s)?;
        let hc = m.hc_first.map_or("-".to_string(), |h| h.to_string());
        println!("{v:.2}  {truth:8.0}  {hc:>8}  {:.5}  {:.2}", m.ber, dev.trcd_requirement(0, row));
        v = ((v - 0.1) * 1000.0).round() / 1000.0;
    }
    Ok(())
}
