//! Logical to physical row mapping inside a bank.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MappingError {
    #[error("mapping is not a bijection over {0} rows")]
    NotBijective(u32),
    #[error("row {row} out of range (rows = {rows})")]
    OutOfRange { row: u32, rows: u32 },
}

/// Named mapping schemes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum MappingKind {
    Identity,
    /// When logical bit 3 is set, bits 1 and 2 are inverted.
    LowBitInversion,
    /// Within blocks of 8 rows, the last two rows of each half are swapped.
    BlockSwizzle,
    Explicit { table: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyMapping {
    kind: MappingKind,
    to_phys: Vec<u32>,
    to_logical: Vec<u32>,
}

const SWIZZLE: [u32; 8] = [0, 1, 3, 2, 4, 5, 7, 6];

impl AdjacencyMapping {
    pub fn new(kind: MappingKind, rows: u32) -> Result<Self, MappingError> {
        let to_phys: Vec<u32> = match &kind {
            MappingKind::Identity => (0..rows).collect(),
            MappingKind::LowBitInversion => (0..rows)
                .map(|r| if r & 0b1000 != 0 { r ^ 0b110 } else { r })
                .collect(),
            MappingKind::BlockSwizzle => (0..rows).map(|r| (r & !7) | SWIZZLE[(r & 7) as usize]).collect(),
            MappingKind::Explicit { table } => table.clone(),
        };
        if to_phys.len() != rows as usize {
            return Err(MappingError::NotBijective(rows));
        }
        let mut to_logical = vec![u32::MAX; rows as usize];
        for (l, &p) in to_phys.iter().enumerate() {
            if p >= rows || to_logical[p as usize] != u32::MAX {
                return Err(MappingError::NotBijective(rows));
            }
            to_logical[p as usize] = l as u32;
        }
        Ok(Self { kind, to_phys, to_logical })
    }

    pub fn identity(rows: u32) -> Self {
        Self::new(MappingKind::Identity, rows).expect("identity is bijective")
    }

    pub fn kind(&self) -> &MappingKind {
        &self.kind
    }

    pub fn rows(&self) -> u32 {
        self.to_phys.len() as u32
    }

    pub fn physical(&self, logical: u32) -> Result<u32, MappingError> {
        self.to_phys
            .get(logical as usize)
            .copied()
            .ok_or(MappingError::OutOfRange { row: logical, rows: self.rows() })
    }

    pub fn logical(&self, physical: u32) -> Result<u32, MappingError> {
        self.to_logical
            .get(physical as usize)
            .copied()
            .ok_or(MappingError::OutOfRange { row: physical, rows: self.rows() })
    }

    /// Logical rows at physical distance `d` on either side (edge rows have fewer).
    pub fn neighbors_at(&self, logical: u32, d: u32) -> Result<Vec<u32>, MappingError> {
        let p = self.physical(logical)?;
        let mut out = Vec::with_capacity(2);
        if p >= d {
            out.push(self.to_logical[(p - d) as usize]);
        }
        if p + d < self.rows() {
            out.push(self.to_logical[(p + d) as usize]);
        }
        Ok(out)
    }

    /// Both immediate physical neighbours, or `None` for an edge row.
    pub fn aggressors(&self, victim: u32) -> Result<Option<(u32, u32)>, MappingError> {
        let n = self.neighbors_at(victim, 1)?;
        Ok((n.len() == 2).then(|| (n[0], n[1])))
    }

    pub fn table(&self) -> &[u32] {
        &self.to_phys
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn presets_are_bijective() {
        for k in [MappingKind::Identity, MappingKind::LowBitInversion, MappingKind::BlockSwizzle] {
            let m = AdjacencyMapping::new(k, 1024).unwrap();
            for l in 0..1024 {
                assert_eq!(m.logical(m.physical(l).unwrap()).unwrap(), l);
            }
        }
    }

    #[test]
    fn low_bit_inversion_example() {
        let m = AdjacencyMapping::new(MappingKind::LowBitInversion, 64).unwrap();
        assert_eq!(m.physical(8).unwrap(), 14);
        assert_eq!(m.physical(7).unwrap(), 7);
    }

    #[test]
    fn rejects_duplicates() {
        let e = AdjacencyMapping::new(MappingKind::Explicit { table: vec![0, 0, 1] }, 3);
        assert_eq!(e.unwrap_err(), MappingError::NotBijective(3));
    }

    #[test]
    fn edge_rows_have_one_neighbor() {
        let m = AdjacencyMapping::identity(16);
        assert!(m.aggressors(0).unwrap().is_none());
        assert!(m.aggressors(15).unwrap().is_none());
        assert_eq!(m.aggressors(5).unwrap(), Some((4, 6)));
    }

    proptest! {
        #[test]
        fn explicit_permutations_roundtrip(mut v in Just((0u32..64).collect::<Vec<_>>()).prop_shuffle()) {
            v.truncate(64);
            let m = AdjacencyMapping::new(MappingKind::Explicit { table: v.clone() }, 64).unwrap();
            for l in 0..64 {
                prop_assert_eq!(m.physical(l).unwrap(), v[l as usize]);
                prop_assert_eq!(m.logical(v[l as usize]).unwrap(), l);
            }
        }
    }
}
