//! Fit the sense-amplifier knobs against Monte-Carlo tRCD targets.
//!
//! Prints mean, std and worst-case tRCD per VPP for the given knobs:
//!
//! cargo run --release --example calibrate_circuit -- <runs> <kp> <margin> <gain> <enable_ns> [vpp...]
//!
//! Without arguments it evaluates the frozen defaults at 2000 runs.

use rayon::prelude::*;
use vpplab::circuit::{trcd_once, CircuitParams, MonteCarloConfig, Perturbation};

fn main() {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    let runs = args.first().copied().unwrap_or(2000.0) as u64;
    let mut p = CircuitParams::default();
    if args.len() >= 5 {
        p.access_kp = args[1];
        p.sense_margin = args[2];
        p.senseamp_gain = args[3];
        p.sense_enable_ns = args[4];
    }
    let grid = if args.len() > 5 {
        args[5..].to_vec()
    } else {
        vec![1.7, 1.8, 1.9, 2.5]
    };
    let cfg = MonteCarloConfig::default();
    let perts: Vec<Perturbation> = (0..runs)
        .map(|i| Perturbation::sample(cfg.seed, i, cfg.variation_fraction))
        .collect();
    println!("vpp   mean   std    worst  fail");
    for vpp in grid {
        let base = p.clone().with_vpp(vpp);
        let t: Vec<Option<f64>> = perts
            .par_iter()
            .map(|x| trcd_once(&x.apply(&base), cfg.duration_ns, cfg.step_ns))
            .collect();
        let ok: Vec<f64> = t.iter().flatten().copied().collect();
        let n = ok.len() as f64;
        let mean = ok.iter().sum::<f64>() / n;
        let std = (ok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let worst = ok.iter().cloned().fold(f64::NAN, f64::max);
        println!("{vpp:.1}  {mean:6.3} {std:5.3} {worst:6.3} {:5}", t.len() - ok.len());
    }
}
