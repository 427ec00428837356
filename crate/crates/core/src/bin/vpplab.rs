use clap::{Args, Parser, Subcommand};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use vpplab::campaign::{self, CampaignConfig, CampaignError, CircuitCampaign, Test, OUT_DIR_ENV};
use vpplab::circuit::MonteCarloConfig;
use vpplab::presets;
use vpplab::profile::DeviceProfile;

#[derive(Parser)]
#[command(name = "vpplab", version, about = "DRAM characterization under reduced wordline voltage")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = "vpplab-out")]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sweep VPP over module profiles and record RowHammer, tRCD and retention results.
    Characterize {
        /// Preset id, profile TOML path, or `all`; repeat or comma-separate.
        #[arg(long, value_delimiter = ',', default_value = "all")]
        profile: Vec<String>,
        /// `2.5,2.0,1.5` or `start:stop:step`.
        #[arg(long)]
        vpp_grid: Option<String>,
        #[arg(long, value_delimiter = ',', default_value = "rowhammer,trcd,retention")]
        tests: Vec<Test>,
        /// Repetitions per measurement.
        #[arg(long, default_value_t = 10)]
        iterations: u32,
        /// Rows per chunk of the four-chunk row sample.
        #[arg(long, default_value_t = 1024)]
        rows_per_chunk: u32,
        /// Skip units whose completion markers exist.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Monte-Carlo activation and restoration study of the bitline circuit.
    Circuit {
        /// Preset id or profile TOML path supplying the circuit parameters.
        #[arg(long, default_value = "A0")]
        profile: String,
        #[arg(long, default_value = "1.5:2.5:0.1")]
        vpp_grid: String,
        /// Monte-Carlo runs per VPP.
        #[arg(long, default_value_t = 10_000)]
        iterations: usize,
        /// Relative half-width of component variation.
        #[arg(long, default_value_t = 0.05)]
        variation: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Analyze a characterization directory into summary tables and figure series.
    Report {
        /// Campaign directory; defaults to the output directory.
        input: Option<PathBuf>,
        #[arg(long, env = OUT_DIR_ENV, default_value = "vpplab-out")]
        out: PathBuf,
    },
    /// Print the shipped module presets.
    ListPresets,
    /// Check a profile TOML file against the schema and its invariants.
    ValidateProfile { path: PathBuf },
}

fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("bad voltage {x:?}: {e}"));
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [a, b, step] => {
            let (a, b, step) = (num(a)?, num(b)?, num(step)?.abs());
            if step == 0.0 {
                return Err("grid step must be non-zero".into());
            }
            let n = ((b - a).abs() / step + 1e-9).floor() as usize;
            let dir = if b >= a { 1.0 } else { -1.0 };
            Ok((0..=n).map(|i| ((a + dir * step * i as f64) * 1000.0).round() / 1000.0).collect())
        }
        [_] => s.split(',').map(num).collect(),
        _ => Err(format!("bad grid {s:?}")),
    }
}

fn load_profile(arg: &str) -> Result<DeviceProfile, CampaignError> {
    let path = Path::new(arg);
    if arg.ends_with(".toml") || path.is_file() {
        Ok(DeviceProfile::load(path)?)
    } else {
        Ok(presets::preset(arg)?)
    }
}

fn run(cli: Cli) -> Result<(), CampaignError> {
    match cli.cmd {
        Cmd::Characterize { profile, vpp_grid, tests, iterations, rows_per_chunk, resume, common } => {
            let mut profiles = Vec::new();
            for p in &profile {
                if p == "all" {
                    profiles.extend(presets::all_presets());
                } else {
                    profiles.push(load_profile(p)?);
                }
            }
            let mut cfg = CampaignConfig::new(profiles, &common.out);
            if let Some(g) = vpp_grid {
                cfg.vpp_grid = parse_grid(&g).map_err(CampaignError::Config)?;
            }
            cfg.tests = tests.into_iter().collect::<BTreeSet<_>>();
            cfg.settings.iterations = iterations;
            cfg.rows_per_chunk = rows_per_chunk;
            cfg.seed = common.seed;
            cfg.jobs = common.jobs;
            cfg.resume = resume;
            let run_circuit = cfg.tests.remove(&Test::Circuit);
            if !cfg.tests.is_empty() {
                let o = campaign::characterize(&cfg)?;
                println!("{} units run, {} resumed, {} records in {}", o.units_run, o.units_skipped, o.records, common.out.display());
            }
            if run_circuit {
                let mut mc = MonteCarloConfig { seed: common.seed, ..MonteCarloConfig::default() };
                mc.runs_per_vpp = iterations as usize;
                let profile = cfg.profiles[0].clone();
                campaign::circuit(&CircuitCampaign { profile, monte_carlo: mc, out: common.out.clone(), jobs: common.jobs })?;
            }
        }
        Cmd::Circuit { profile, vpp_grid, iterations, variation, common } => {
            let mut grid = parse_grid(&vpp_grid).map_err(CampaignError::Config)?;
            grid.sort_by(f64::total_cmp);
            grid.dedup();
            let mc = MonteCarloConfig {
                seed: common.seed,
                runs_per_vpp: iterations,
                variation_fraction: variation,
                vpp_grid: grid,
                ..MonteCarloConfig::default()
            };
            let c = CircuitCampaign { profile: load_profile(&profile)?, monte_carlo: mc, out: common.out.clone(), jobs: common.jobs };
            let r = campaign::circuit(&c)?;
            println!("vpp   mean_trcd  std    worst  failures");
            for p in &r.points {
                println!("{:.2}  {:8.3}  {:.3}  {:6.3}  {}", p.vpp, p.trcd.mean, p.trcd.std, p.worst_trcd, p.trcd_failures);
            }
        }
        Cmd::Report { input, out } => {
            let input = input.unwrap_or_else(|| out.clone());
            let dest = input.join("report");
            let r = vpplab::report::report(&input, &dest)?;
            print!("{}", vpplab::report::module_table(&r));
            eprintln!("report written to {}", dest.display());
        }
        Cmd::ListPresets => {
            println!("id  mfr org chips vpp_nominal vpp_min");
            for p in presets::all_presets() {
                let org = presets::module_data(&p.id).map_or(String::new(), |m| format!("x{}", m.org));
                println!("{:<3} {:<3} {:<3} {:<5} {:<11.1} {:.1}", p.id, p.manufacturer_id, org, p.chips, p.vpp_nominal, p.vpp_min);
            }
        }
        Cmd::ValidateProfile { path } => {
            let p = DeviceProfile::load(&path)?;
            p.validate()?;
            println!("{}: ok ({})", path.display(), p.id);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_env_filter(
        tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
    ).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
