//! Asset subsets as bitmasks and enumeration of the feasible space.
//!
//! The feasible space is every nonzero N-bit mask. Enumeration runs in
//! reflected-Gray-code order so consecutive subsets differ in exactly
//! one asset, which lets the screening pass maintain a running column
//! sum instead of recomputing each portfolio series from scratch.

use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::panel::MAX_ASSETS;

/// Nonzero subset of an N-asset universe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SelectionMask {
    bits: u32,
    n_assets: u8,
}

impl SelectionMask {
    pub fn new(bits: u32, n_assets: usize) -> Result<Self> {
        if n_assets == 0 || n_assets > MAX_ASSETS {
            return Err(Error::BadAssetCount {
                n: n_assets,
                max: MAX_ASSETS,
            });
        }
        if bits == 0 {
            return Err(Error::BadMask("empty selection".into()));
        }
        if bits >= 1u32 << n_assets {
            return Err(Error::BadMask(format!(
                "0x{bits:x} out of range for {n_assets} assets"
            )));
        }
        Ok(SelectionMask {
            bits,
            n_assets: n_assets as u8,
        })
    }

    /// Single-asset selection {j}.
    pub fn singleton(asset: usize, n_assets: usize) -> Result<Self> {
        if asset >= n_assets {
            return Err(Error::BadMask(format!(
                "asset {asset} out of range for {n_assets} assets"
            )));
        }
        Self::new(1u32 << asset, n_assets)
    }

    /// All assets selected.
    pub fn full(n_assets: usize) -> Result<Self> {
        if n_assets == 0 || n_assets > MAX_ASSETS {
            return Err(Error::BadAssetCount {
                n: n_assets,
                max: MAX_ASSETS,
            });
        }
        Self::new(((1u64 << n_assets) - 1) as u32, n_assets)
    }

    #[inline]
    pub fn bits(&self) -> u32 {
        self.bits
    }

    #[inline]
    pub fn n_assets(&self) -> usize {
        self.n_assets as usize
    }

    /// Number of selected assets; always >= 1.
    #[inline]
    pub fn weight(&self) -> u32 {
        self.bits.count_ones()
    }

    #[inline]
    pub fn contains(&self, asset: usize) -> bool {
        self.bits >> asset & 1 == 1
    }

    /// Indices of selected assets, ascending.
    pub fn assets(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_assets()).filter(|&j| self.contains(j))
    }

    /// True iff support(self) is a strict subset of support(other).
    pub fn is_strict_subset(&self, other: &SelectionMask) -> Result<bool> {
        if self.n_assets != other.n_assets {
            return Err(Error::UniverseMismatch {
                a: self.n_assets(),
                b: other.n_assets(),
            });
        }
        Ok(self.bits != other.bits && self.bits & other.bits == self.bits)
    }

    /// Serialized form: lowercase hex plus universe size, e.g. "0x5b/17".
    pub fn to_hex(&self) -> String {
        format!("0x{:x}/{}", self.bits, self.n_assets)
    }

    pub fn from_hex(text: &str) -> Result<Self> {
        let (hex, n) = text
            .split_once('/')
            .ok_or_else(|| Error::BadMask(format!("expected '0x<hex>/<N>', got {text:?}")))?;
        let hex = hex
            .strip_prefix("0x")
            .ok_or_else(|| Error::BadMask(format!("missing 0x prefix in {text:?}")))?;
        let bits = u32::from_str_radix(hex, 16)
            .map_err(|_| Error::BadMask(format!("bad hex in {text:?}")))?;
        let n: usize = n
            .parse()
            .map_err(|_| Error::BadMask(format!("bad universe size in {text:?}")))?;
        Self::new(bits, n)
    }

    /// Human-readable label list for a given universe labeling.
    pub fn label_list(&self, labels: &[String]) -> String {
        self.assets()
            .map(|j| labels.get(j).map(String::as_str).unwrap_or("?"))
            .collect::<Vec<_>>()
            .join("+")
    }
}

impl fmt::Display for SelectionMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for SelectionMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for SelectionMask {
    fn deserialize<D: Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        SelectionMask::from_hex(&text).map_err(D::Error::custom)
    }
}

/// One step of the Gray-code stream: the mask plus the single bit that
/// changed relative to the previous mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GrayStep {
    pub mask: SelectionMask,
    pub flipped_asset: usize,
    pub added: bool,
}

/// Binary reflected Gray code of `k`.
#[inline]
pub fn gray_code(k: u32) -> u32 {
    k ^ (k >> 1)
}

/// Bit flipped between gray_code(k-1) and gray_code(k), and whether it
/// was set or cleared.
#[inline]
pub fn gray_flip(k: u32) -> (usize, bool) {
    debug_assert!(k >= 1);
    let bit = k.trailing_zeros() as usize;
    let added = gray_code(k) >> bit & 1 == 1;
    (bit, added)
}

/// Stream of all 2^N - 1 nonzero masks in reflected-Gray-code order,
/// starting from mask 1. Consecutive masks differ in exactly one bit.
pub fn enumerate_gray(n_assets: usize) -> Result<GrayIter> {
    if n_assets == 0 || n_assets > MAX_ASSETS {
        return Err(Error::BadAssetCount {
            n: n_assets,
            max: MAX_ASSETS,
        });
    }
    Ok(GrayIter {
        next_k: 1,
        end_k: 1u32 << n_assets,
        n_assets,
    })
}

#[derive(Debug, Clone)]
pub struct GrayIter {
    next_k: u32,
    end_k: u32,
    n_assets: usize,
}

impl Iterator for GrayIter {
    type Item = GrayStep;

    fn next(&mut self) -> Option<GrayStep> {
        if self.next_k >= self.end_k {
            return None;
        }
        let k = self.next_k;
        self.next_k += 1;
        let (flipped_asset, added) = gray_flip(k);
        let mask = SelectionMask {
            bits: gray_code(k),
            n_assets: self.n_assets as u8,
        };
        Some(GrayStep {
            mask,
            flipped_asset,
            added,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.end_k - self.next_k) as usize;
        (left, Some(left))
    }
}

impl ExactSizeIterator for GrayIter {}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn gray_order_n2() {
        let masks: Vec<u32> = enumerate_gray(2).unwrap().map(|s| s.mask.bits()).collect();
        assert_eq!(masks, vec![0b01, 0b11, 0b10]);
    }

    #[test]
    fn gray_n1_single_mask() {
        let steps: Vec<GrayStep> = enumerate_gray(1).unwrap().collect();
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].mask.bits(), 1);
        assert_eq!(steps[0].flipped_asset, 0);
        assert!(steps[0].added);
    }

    #[test]
    fn gray_n10_complete_and_distinct() {
        let masks: Vec<u32> = enumerate_gray(10).unwrap().map(|s| s.mask.bits()).collect();
        assert_eq!(masks.len(), 1023);
        let set: HashSet<u32> = masks.iter().copied().collect();
        assert_eq!(set, (1u32..1024).collect::<HashSet<u32>>());
    }

    #[test]
    fn gray_steps_describe_single_bit_flips() {
        let mut prev = 0u32;
        for step in enumerate_gray(6).unwrap() {
            let bits = step.mask.bits();
            assert_eq!((prev ^ bits).count_ones(), 1);
            let flipped = (prev ^ bits).trailing_zeros() as usize;
            assert_eq!(step.flipped_asset, flipped);
            assert_eq!(step.added, bits >> flipped & 1 == 1);
            prev = bits;
        }
    }

    #[test]
    fn strict_subset_cases() {
        let m = |bits| SelectionMask::new(bits, 3).unwrap();
        assert!(m(0b001).is_strict_subset(&m(0b011)).unwrap());
        assert!(!m(0b011).is_strict_subset(&m(0b011)).unwrap());
        assert!(!m(0b101).is_strict_subset(&m(0b011)).unwrap());
    }

    #[test]
    fn strict_subset_universe_mismatch() {
        let a = SelectionMask::new(1, 3).unwrap();
        let b = SelectionMask::new(1, 4).unwrap();
        assert!(matches!(
            a.is_strict_subset(&b).unwrap_err(),
            crate::error::Error::UniverseMismatch { .. }
        ));
    }

    #[test]
    fn weight_popcount() {
        assert_eq!(SelectionMask::new(0b1011, 4).unwrap().weight(), 3);
        assert_eq!(SelectionMask::new(0b0001, 4).unwrap().weight(), 1);
        assert_eq!(SelectionMask::full(17).unwrap().weight(), 17);
    }

    #[test]
    fn hex_round_trip() {
        let m = SelectionMask::new(0x5b, 17).unwrap();
        assert_eq!(m.to_hex(), "0x5b/17");
        assert_eq!(SelectionMask::from_hex("0x5b/17").unwrap(), m);
    }

    #[test]
    fn rejects_empty_and_oversized_masks() {
        assert!(SelectionMask::new(0, 4).is_err());
        assert!(SelectionMask::new(0b10000, 4).is_err());
        assert!(enumerate_gray(0).is_err());
        assert!(enumerate_gray(MAX_ASSETS + 1).is_err());
    }

    proptest! {
        #[test]
        fn gray_consecutive_hamming_distance_one(n in 1usize..=12) {
            let mut prev = 0u32;
            let mut count = 0usize;
            for step in enumerate_gray(n).unwrap() {
                prop_assert_eq!((prev ^ step.mask.bits()).count_ones(), 1);
                prev = step.mask.bits();
                count += 1;
            }
            prop_assert_eq!(count, (1usize << n) - 1);
        }

        #[test]
        fn strict_subset_is_irreflexive_and_transitive(
            a in 1u32..=255, b in 1u32..=255, c in 1u32..=255
        ) {
            let m = |bits| SelectionMask::new(bits, 8).unwrap();
            let (ma, mb, mc) = (m(a), m(b), m(c));
            prop_assert!(!ma.is_strict_subset(&ma).unwrap());
            if ma.is_strict_subset(&mb).unwrap() && mb.is_strict_subset(&mc).unwrap() {
                prop_assert!(ma.is_strict_subset(&mc).unwrap());
            }
        }
    }
}
