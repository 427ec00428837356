//! Characterize a handful of presets at light row sampling and print the fleet summary.
//!
//! cargo run --release --example small_fleet -- [out_dir] [preset...]
//!
//! Defaults to one module per manufacturer and 16 rows per chunk, which takes
//! seconds. The output directory keeps the records, so running again with
//! the same arguments resumes instead of recomputing.

use vpplab::campaign::{characterize, CampaignConfig};
use vpplab::presets::preset;
use vpplab::report::{module_table, report};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = std::path::PathBuf::from(args.first().map_or("small-fleet", String::as_str));
    let ids: Vec<&str> = if args.len() > 1 { args[1..].iter().map(String::as_str).collect() } else { vec!["A0", "B6", "C3"] };
    let profiles = ids.iter().map(|id| preset(id)).collect::<Result<Vec<_>, _>>()?;

    let mut cfg = CampaignConfig::new(profiles, &out);
    cfg.rows_per_chunk = 16;
    cfg.settings.iterations = 5;
    cfg.resume = true;
    let o = characterize(&cfg)?;
    println!("{} units run, {} resumed", o.units_run, o.units_skipped);

    let r = report(&out, &out.join("report"))?;
    print!("{}", module_table(&r));
    if let (Some(hc), Some(ber)) = (&r.hc_change, &r.ber_change) {
        println!(
            "HC_first at VPPmin: {:+.1}% mean, {:.1}% of rows lower; BER: {:+.1}% mean, {:.1}% of rows higher",
            100.0 * hc.mean_change,
            100.0 * hc.fraction_decrease,
            100.0 * ber.mean_change,
            100.0 * ber.fraction_increase
        );
    }
    if let Some(cv) = &r.cv {
        println!("BER coefficient of variation p90/p95/p99: {:.3} {:.3} {:.3}", cv.p90, cv.p95, cv.p99);
    }
    for m in &r.modules {
        if let Some(w) = m.first_failing_window_ms_test_vpp {
            println!("{}: first retention failure at {w} ms", m.id);
        }
    }
    Ok(())
}
