use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use vpplab::presets::preset;
use vpplab::record::read_records;

fn vpplab(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_vpplab"));
    c.args(args).env_remove("VPPLAB_OUT");
    if let Some(p) = env_out {
        c.env("VPPLAB_OUT", p);
    }
    c.output().expect("binary runs")
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

#[test]
fn list_presets_shows_thirty_modules() {
    let out = ok(&vpplab(&["list-presets"], None));
    let ids: Vec<&str> = out.lines().skip(1).filter_map(|l| l.split_whitespace().next()).collect();
    assert_eq!(ids.len(), 30);
    assert_eq!(ids[0], "A0");
    assert!(ids.contains(&"C9"));
}

#[test]
fn validate_profile_accepts_presets_and_rejects_other_versions() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("b3.toml");
    fs::write(&good, preset("B3").unwrap().to_toml().unwrap()).unwrap();
    assert!(ok(&vpplab(&["validate-profile", good.to_str().unwrap()], None)).contains("ok (B3)"));

    let text = fs::read_to_string(&good).unwrap().replace("schema_version = 1", "schema_version = 2");
    let bad = dir.path().join("v2.toml");
    fs::write(&bad, text).unwrap();
    let o = vpplab(&["validate-profile", bad.to_str().unwrap()], None);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));

    let swapped = preset("B3").unwrap().to_toml().unwrap().replace("vpp_min = 1.6", "vpp_min = 2.6");
    let bad = dir.path().join("range.toml");
    fs::write(&bad, swapped).unwrap();
    assert!(!vpplab(&["validate-profile", bad.to_str().unwrap()], None).status.success());
}

#[test]
fn characterize_and_report_through_env_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let args = [
        "characterize", "--profile", "A0", "--vpp-grid", "2.5,2.0,1.4", "--tests", "rowhammer,trcd",
        "--iterations", "2", "--rows-per-chunk", "2", "--seed", "4",
    ];
    ok(&vpplab(&args, Some(&out)));
    let records = read_records(fs::File::open(out.join("records.jsonl")).map(std::io::BufReader::new).unwrap()).unwrap();
    assert!(!records.is_empty());
    assert!(records.iter().all(|r| r.profile_id == "A0" && r.seed == 4));

    let table = ok(&vpplab(&["report"], Some(&out)));
    assert!(table.starts_with("module,"));
    assert!(table.lines().nth(1).unwrap().starts_with("A0,1.40,"));
    let rep = out.join("report");
    assert!(rep.join("summary.json").is_file());
    assert_eq!(header(&rep.join("figures/fig4.csv")), "module,vpp,rows,mean,band_lo,band_hi");
    assert_eq!(header(&rep.join("figures/fig5.csv")), "manufacturer,bin_lo,bin_hi,count,density");
    assert_eq!(header(&rep.join("figures/fig6.csv")), "module,vpp,trcd_min_ns,guardband");

    // A flag beats the environment variable.
    let other = dir.path().join("flag");
    let mut flagged = args.to_vec();
    flagged.extend(["--out", other.to_str().unwrap()]);
    ok(&vpplab(&flagged, Some(&out)));
    assert_eq!(fs::read(other.join("records.jsonl")).unwrap(), fs::read(out.join("records.jsonl")).unwrap());
}

#[test]
fn tampered_record_is_reported_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(&vpplab(
        &["characterize", "--profile", "C5", "--vpp-grid", "2.5,1.7", "--tests", "rowhammer", "--iterations", "1",
          "--rows-per-chunk", "1", "--out", out.to_str().unwrap()],
        None,
    ));
    let path = out.join("records.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    assert!(lines.len() >= 3);
    lines[2] = lines[2].replacen("\"bank\":0", "\"bank\":1", 1);
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let o = vpplab(&["report", out.to_str().unwrap()], None);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("checksum mismatch"), "{err}");
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn single_level_campaign_reports_without_a_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(&vpplab(
        &["characterize", "--profile", "B3", "--vpp-grid", "2.5", "--tests", "rowhammer", "--iterations", "1",
          "--rows-per-chunk", "1", "--out", out.to_str().unwrap()],
        None,
    ));
    let table = ok(&vpplab(&["report", out.to_str().unwrap()], None));
    let row = table.lines().nth(1).unwrap();
    assert!(row.starts_with("B3,2.50,"), "{row}");
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["modules"][0]["lowest_vpp"], 2.5);
}

#[test]
fn circuit_writes_waveforms_and_histograms() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let table = ok(&vpplab(
        &["circuit", "--vpp-grid", "2.5,1.7", "--iterations", "40", "--out", out.to_str().unwrap()],
        None,
    ));
    assert_eq!(table.lines().count(), 3);
    for v in ["2.50", "1.70"] {
        let w = fs::read_to_string(out.join(format!("circuit/waveform-{v}.csv"))).unwrap();
        let mut lines = w.lines();
        assert_eq!(lines.next(), Some("time_ns,v_bitline,v_cell"));
        let first: Vec<f64> = lines.next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(first.len(), 3);
        assert_eq!(first[0], 0.0);
    }
    assert_eq!(header(&out.join("figures/fig7b.csv")), "vpp,metric,bin_lo_ns,bin_hi_ns,count,density");
    assert_eq!(header(&out.join("figures/fig8b.csv")), "vpp,metric,bin_lo_ns,bin_hi_ns,count,density");
    assert!(out.join("circuit/monte_carlo.json").is_file());
}

#[test]
fn bad_arguments_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for args in [
        vec!["characterize", "--profile", "Z9", "--out", out],
        vec!["characterize", "--profile", "A0", "--vpp-grid", "3.0", "--out", out],
        vec!["characterize", "--profile", "A0", "--tests", "bogus", "--out", out],
        vec!["report", "/nonexistent/vpplab"],
    ] {
        let o = vpplab(&args, None);
        assert!(!o.status.success(), "{args:?}");
    }
}
