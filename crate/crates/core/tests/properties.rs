use proptest::prelude::*;
use vpplab::analysis::secded_analysis;
use vpplab::charlib::{measure_ber, measure_hc_first, retention_sweep, Settings};
use vpplab::device::{DramDevice, RowFixture};
use vpplab::mapping::{AdjacencyMapping, MappingKind};
use vpplab::pattern::DataPattern;
use vpplab::presets::{all_presets, preset};
use vpplab::profile::DeviceProfile;

const ROWS: u32 = 32;

fn quiet(id: &str, vpp: f64, seed: u64) -> DramDevice {
    let mut p = preset(id).unwrap();
    p.rows_per_bank = ROWS;
    p.hammer.noise.sigma_median = 0.0;
    let mut d = DramDevice::new(p, seed, AdjacencyMapping::identity(ROWS)).unwrap();
    d.set_vpp(vpp).unwrap();
    d
}

fn snapshot(d: &mut DramDevice) -> Vec<Vec<u64>> {
    (0..ROWS).map(|r| d.read_row(0, r, 30.0).unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hc_search_brackets_injected_threshold(t in 5_000.0f64..300_000.0, row in 2u32..30, iters in 1u32..4) {
        let mut d = quiet("A0", 2.5, 1);
        let mut f = RowFixture::new(DataPattern::ALL[0]);
        f.hammer = vec![(11, t)];
        d.set_fixture(0, row, f).unwrap();
        let s = Settings { iterations: iters, ..Settings::default() };
        let r = measure_hc_first(&mut d, 0, row, DataPattern::ALL[0], &s).unwrap();
        prop_assert_eq!(r.probes.len(), 11);
        prop_assert!((r.hc_first.unwrap() as f64 - t).abs() <= 300.0);
        let (lo, hi) = r.bracket;
        prop_assert!(lo.map_or(true, |l| (l as f64) < t));
        prop_assert!(hi.unwrap() as f64 >= t);
    }

    #[test]
    fn ber_is_monotone_in_hammer_count(id in prop::sample::select(vec!["A0", "B3", "C0"]), row in 2u32..30, a in 0u64..400_000, b in 0u64..400_000) {
        let mut d = quiet(id, 1.8f64.max(preset(id).unwrap().vpp_min), 5);
        let p = DataPattern::ALL[row as usize % 6];
        let (lo, hi) = (a.min(b), a.max(b));
        let x = measure_ber(&mut d, 0, row, p, lo, 30.0).unwrap();
        let y = measure_ber(&mut d, 0, row, p, hi, 30.0).unwrap();
        prop_assert!(x <= y, "{} at {} > {} at {}", x, lo, y, hi);
    }

    #[test]
    fn hc_search_stays_within_blast_radius(row in 3u32..29, seed in 0u64..1000) {
        let mut d = quiet("B6", 2.5, seed);
        for r in 0..ROWS {
            d.fill_row(0, r, 0x5555_5555_5555_5555).unwrap();
        }
        let before = snapshot(&mut d);
        let s = Settings { iterations: 1, ..Settings::default() };
        measure_hc_first(&mut d, 0, row, DataPattern::ALL[0], &s).unwrap();
        let after = snapshot(&mut d);
        for r in 0..ROWS {
            if r.abs_diff(row) > 3 {
                prop_assert_eq!(&before[r as usize], &after[r as usize], "row {} changed", r);
            }
        }
    }

    #[test]
    fn retention_ber_grows_with_window(id in prop::sample::select(vec!["A0", "B6", "C3"]), row in 0u32..ROWS, pat in 0usize..6) {
        let mut d = quiet(id, 1.5f64.max(preset(id).unwrap().vpp_min), 2);
        let s = Settings { iterations: 1, ..Settings::default() };
        let r = retention_sweep(&mut d, 0, row, DataPattern::ALL[pat], &s).unwrap();
        for w in r.points.windows(2) {
            prop_assert!(w[0].window_s < w[1].window_s);
            prop_assert!(w[0].ber <= w[1].ber);
        }
    }

    #[test]
    fn secded_counts_match_brute_force(flips in prop::collection::btree_set(0u32..1024, 0..40)) {
        let flips: Vec<u32> = flips.into_iter().collect();
        let c = secded_analysis(1024, &flips, 64);
        let mut want = [0u32; 3];
        for w in 0..16u32 {
            let n = flips.iter().filter(|&&b| b >= w * 64 && b < (w + 1) * 64).count();
            want[n.min(2)] += 1;
        }
        prop_assert_eq!(c.words, want);
        prop_assert_eq!(c.correctable(), flips.iter().all(|&b| flips.iter().filter(|&&x| x / 64 == b / 64).count() == 1));
    }

    #[test]
    fn mappings_are_bijective(blocks in 1u32..64, kind in prop::sample::select(vec![MappingKind::Identity, MappingKind::LowBitInversion, MappingKind::BlockSwizzle])) {
        let rows = blocks * 16;
        let m = AdjacencyMapping::new(kind, rows).unwrap();
        for l in 0..rows {
            prop_assert_eq!(m.logical(m.physical(l).unwrap()).unwrap(), l);
        }
    }
}

#[test]
fn presets_roundtrip_through_toml() {
    let all = all_presets();
    assert_eq!(all.len(), 30);
    for p in all {
        p.validate().unwrap();
        let back = DeviceProfile::from_toml(&p.to_toml().unwrap()).unwrap();
        assert_eq!(back, p, "{}", p.id);
        assert!(p.vpp_min <= p.vpp_nominal);
    }
}
