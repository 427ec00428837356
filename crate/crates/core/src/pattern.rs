use serde::{Deserialize, Serialize};

/// One of the six victim/aggressor fills.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DataPattern(u8);

pub const PATTERN_COUNT: usize = 6;

const VICTIM_BYTES: [u8; PATTERN_COUNT] = [0xFF, 0x00, 0xAA, 0x55, 0xCC, 0x33];

impl DataPattern {
    pub const ALL: [DataPattern; PATTERN_COUNT] = [
        DataPattern(0),
        DataPattern(1),
        DataPattern(2),
        DataPattern(3),
        DataPattern(4),
        DataPattern(5),
    ];

    pub fn new(id: u8) -> Option<Self> {
        (usize::from(id) < PATTERN_COUNT).then_some(DataPattern(id))
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn name(self) -> &'static str {
        ["rowstripe", "rowstripe_inv", "checkerboard", "checkerboard_inv", "thickchecker", "thickchecker_inv"][self.0 as usize]
    }

    pub fn victim_byte(self) -> u8 {
        VICTIM_BYTES[self.0 as usize]
    }

    pub fn aggressor_byte(self) -> u8 {
        !self.victim_byte()
    }

    pub fn victim_word(self) -> u64 {
        u64::from_ne_bytes([self.victim_byte(); 8])
    }

    pub fn aggressor_word(self) -> u64 {
        !self.victim_word()
    }

    /// Identify a uniform row fill as a victim pattern.
    pub fn from_victim_word(w: u64) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.victim_word() == w)
    }
}

impl std::fmt::Display for DataPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggressor_is_inverse() {
        for p in DataPattern::ALL {
            assert_eq!(p.aggressor_byte(), !p.victim_byte());
            assert_eq!(DataPattern::from_victim_word(p.victim_word()), Some(p));
        }
        assert_eq!(DataPattern::ALL.len(), 6);
        assert!(DataPattern::new(6).is_none());
    }

    #[test]
    fn patterns_come_in_inverse_pairs() {
        for i in (0..6).step_by(2) {
            assert_eq!(DataPattern::ALL[i].victim_byte(), !DataPattern::ALL[i + 1].victim_byte());
        }
    }
}
