//! Symmetry-related features of a structure matrix.
//!
//! Relation patterns `r` are grouped by `(x, y)`: `x` zero entries and `y`
//! distinct nonzero absolute values. For each group, one bit records whether
//! some pattern in it makes the signature symmetric (`alpha`) and another
//! whether some pattern makes it skew-symmetric (`beta`).

use serde::{Deserialize, Serialize};

use crate::structure::{distinct_abs, for_each_pattern, symmetry_flags, StructureMatrix};

/// Number of valid `(x, y)` groups: `k(k+1)/2`.
pub fn group_count(k: usize) -> usize {
    k * (k + 1) / 2
}

/// Position of group `(x, y)` in lexicographic order, with `x` in `0..k` and
/// `y` in `1..=k-x`.
pub fn group_index(k: usize, x: usize, y: usize) -> usize {
    debug_assert!(x < k && y >= 1 && y <= k - x);
    (0..x).map(|x0| k - x0).sum::<usize>() + (y - 1)
}

/// `[vec(alpha); vec(beta)]`, each half of length `k(k+1)/2`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SrfVector {
    k: usize,
    bits: Vec<u8>,
}

impl SrfVector {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn alpha(&self) -> &[u8] {
        &self.bits[..group_count(self.k)]
    }

    pub fn beta(&self) -> &[u8] {
        &self.bits[group_count(self.k)..]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| b as f64).collect()
    }
}

impl std::fmt::Display for SrfVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let half = |s: &[u8]| s.iter().map(|b| b.to_string()).collect::<String>();
        write!(f, "alpha={} beta={}", half(self.alpha()), half(self.beta()))
    }
}

/// Enumerates all `(2k+1)^k - 1` nonzero patterns and sets group bits.
pub fn srf_features(a: &StructureMatrix) -> SrfVector {
    let k = a.k();
    let groups = group_count(k);
    let mut bits = vec![0u8; 2 * groups];
    for_each_pattern(k, |r| {
        let x = r.iter().filter(|&&v| v == 0).count();
        let y = distinct_abs(r);
        let idx = group_index(k, x, y);
        if bits[idx] == 1 && bits[groups + idx] == 1 {
            return;
        }
        let (sym, skew, _) = symmetry_flags(a, r);
        if sym {
            bits[idx] = 1;
        }
        if skew {
            bits[groups + idx] = 1;
        }
    });
    SrfVector { k, bits }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::builtin_structure;

    #[test]
    fn group_indices_are_dense() {
        for k in 2..=5 {
            let mut seen = vec![false; group_count(k)];
            for x in 0..k {
                for y in 1..=k - x {
                    let i = group_index(k, x, y);
                    assert!(!seen[i]);
                    seen[i] = true;
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn lengths() {
        for k in 3..=5 {
            let a = StructureMatrix::diagonal(&(1..=k as i8).collect::<Vec<_>>()).unwrap();
            assert_eq!(srf_features(&a).len(), k * (k + 1));
        }
    }

    #[test]
    fn distmult_beta_is_zero() {
        let srf = srf_features(&builtin_structure("distmult").unwrap());
        assert!(srf.beta().iter().all(|&b| b == 0));
        assert!(srf.alpha().iter().all(|&b| b == 1));
    }

    #[test]
    fn zero_matrix_sets_every_bit() {
        let srf = srf_features(&StructureMatrix::zeros(4).unwrap());
        assert!(srf.bits().iter().all(|&b| b == 1));
    }

    #[test]
    fn complex_has_skew_bits() {
        let srf = srf_features(&builtin_structure("complex").unwrap());
        // [0,0,3,4]: two zeros, two distinct values
        assert_eq!(srf.beta()[group_index(4, 2, 2)], 1);
        assert_eq!(srf.alpha()[group_index(4, 2, 2)], 1);
    }
}
