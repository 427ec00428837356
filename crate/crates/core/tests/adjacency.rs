use std::collections::BTreeSet;
use vpplab::charlib::{probe_adjacency, Settings};
use vpplab::device::{DramDevice, RowFixture, HAMMER_CAP};
use vpplab::mapping::{AdjacencyMapping, MappingKind};
use vpplab::pattern::DataPattern;
use vpplab::presets::preset;
use vpplab::rng::{derive, unit};

const ROWS: u32 = 256;

fn true_pairs(m: &AdjacencyMapping) -> BTreeSet<(u32, u32)> {
    (1..m.rows())
        .map(|p| {
            let (a, b) = (m.logical(p - 1).unwrap(), m.logical(p).unwrap());
            (a.min(b), a.max(b))
        })
        .collect()
}

#[test]
fn block_swizzle_with_dead_rows() {
    let mut p = preset("B3").unwrap();
    p.rows_per_bank = ROWS;
    let truth = AdjacencyMapping::new(MappingKind::BlockSwizzle, ROWS).unwrap();
    let mut dev = DramDevice::new(p, 3, truth.clone()).unwrap();
    // Rows with an empty fixture hold no vulnerable cells and never flip.
    let dead: BTreeSet<u32> = (0..ROWS).filter(|&r| unit(derive(41, &[r as u64])) < 0.03).collect();
    assert!(!dead.is_empty());
    for &r in &dead {
        dev.set_fixture(0, r, RowFixture::new(DataPattern::ALL[0])).unwrap();
    }

    let declared = AdjacencyMapping::new(MappingKind::BlockSwizzle, ROWS).unwrap();
    let probe = probe_adjacency(&mut dev, 0, &declared, HAMMER_CAP, &Settings::default()).unwrap();

    let want = true_pairs(&truth);
    let found = want.intersection(&probe.pairs).count();
    assert!(found as f64 >= 0.97 * want.len() as f64, "{found} of {} pairs", want.len());

    // Every missed or spurious pair touches a flagged row.
    let flagged: BTreeSet<u32> = probe.flagged.iter().copied().collect();
    for &(a, b) in want.symmetric_difference(&probe.pairs) {
        assert!(flagged.contains(&a) || flagged.contains(&b), "pair ({a}, {b}) not flagged");
    }
    if !probe.recovered {
        assert_eq!(probe.mapping, declared);
    }
}

#[test]
fn low_bit_inversion_is_recovered_exactly() {
    let mut p = preset("A0").unwrap();
    p.rows_per_bank = 64;
    let truth = AdjacencyMapping::new(MappingKind::LowBitInversion, 64).unwrap();
    let mut dev = DramDevice::new(p, 8, truth.clone()).unwrap();
    let probe = probe_adjacency(&mut dev, 0, &AdjacencyMapping::identity(64), HAMMER_CAP, &Settings::default()).unwrap();
    assert!(probe.recovered);
    assert_eq!(probe.mapping.table(), truth.table());
    assert!(probe.flagged.iter().all(|&r| truth.neighbors_at(r, 1).unwrap().len() != AdjacencyMapping::identity(64).neighbors_at(r, 1).unwrap().len()));
}
