//! Integer algebra over structure matrices.
//!
//! A structure matrix `A` is a `k x k` integer matrix with entries in
//! `{-k, ..., k}`. Entry `A[i][j] = s * m` (with `m` in `1..=k`) says that the
//! pair (head chunk `i`, tail chunk `j`) contributes `s * <h_i, r_m, t_j>` to
//! the bilinear score; zero entries contribute nothing.
//!
//! Everything here is exact: degeneracy is decided with fraction-free integer
//! elimination, and equivalence classes are enumerated explicitly from the
//! three score-preserving transform families (row/column permutation, value
//! permutation, and sign flips of a value class).

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 4;

/// Largest block count accepted. Orbit enumeration costs `(k!)^2 * 2^k`.
pub const MAX_K: usize = 6;

/// A `k x k` structure matrix stored row-major.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "StructureJson", into = "StructureJson")]
pub struct StructureMatrix {
    k: usize,
    entries: Vec<i8>,
}

#[derive(Serialize, Deserialize)]
struct StructureJson {
    k: usize,
    entries: Vec<Vec<i64>>,
}

impl TryFrom<StructureJson> for StructureMatrix {
    type Error = Error;

    fn try_from(json: StructureJson) -> Result<Self> {
        if json.entries.len() != json.k {
            return Err(Error::invalid(format!(
                "expected {} rows, found {}",
                json.k,
                json.entries.len()
            )));
        }
        StructureMatrix::from_rows(&json.entries)
    }
}

impl From<StructureMatrix> for StructureJson {
    fn from(a: StructureMatrix) -> Self {
        StructureJson {
            k: a.k,
            entries: a
                .rows()
                .map(|row| row.iter().map(|&v| v as i64).collect())
                .collect(),
        }
    }
}

/// One nonzero entry of a structure matrix, decoded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Term {
    pub row: usize,
    pub col: usize,
    /// Zero-based relation chunk index (`|A[i][j]| - 1`).
    pub chunk: usize,
    pub negative: bool,
}

fn check_k(k: usize) -> Result<()> {
    if !(2..=MAX_K).contains(&k) {
        return Err(Error::invalid(format!(
            "block count k must be in 2..={MAX_K}, got {k}"
        )));
    }
    Ok(())
}

impl StructureMatrix {
    /// Builds a matrix from row-major entries.
    pub fn new(k: usize, entries: Vec<i8>) -> Result<Self> {
        check_k(k)?;
        if entries.len() != k * k {
            return Err(Error::invalid(format!(
                "expected {} entries for k={k}, got {}",
                k * k,
                entries.len()
            )));
        }
        if let Some(&bad) = entries.iter().find(|e| e.unsigned_abs() as usize > k) {
            return Err(Error::invalid(format!(
                "entry {bad} outside {{-{k}, ..., {k}}}"
            )));
        }
        Ok(StructureMatrix { k, entries })
    }

    pub fn from_rows<T: Copy + Into<i64>>(rows: &[Vec<T>]) -> Result<Self> {
        let k = rows.len();
        let mut entries = Vec::with_capacity(k * k);
        for row in rows {
            if row.len() != k {
                return Err(Error::invalid("structure matrix must be square"));
            }
            for &v in row {
                let v: i64 = v.into();
                let v = i8::try_from(v)
                    .map_err(|_| Error::invalid(format!("entry {v} out of range")))?;
                entries.push(v);
            }
        }
        Self::new(k, entries)
    }

    pub fn zeros(k: usize) -> Result<Self> {
        Self::new(k, vec![0; k * k])
    }

    /// Diagonal matrix with the given values.
    pub fn diagonal(values: &[i8]) -> Result<Self> {
        let k = values.len();
        let mut entries = vec![0; k * k];
        for (i, &v) in values.iter().enumerate() {
            entries[i * k + i] = v;
        }
        Self::new(k, entries)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn entries(&self) -> &[i8] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> i8 {
        self.entries[i * self.k + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: i8) -> Result<()> {
        if i >= self.k || j >= self.k {
            return Err(Error::invalid(format!("cell ({i}, {j}) out of range")));
        }
        if value.unsigned_abs() as usize > self.k {
            return Err(Error::invalid(format!("entry {value} out of range")));
        }
        self.entries[i * self.k + j] = value;
        Ok(())
    }

    pub fn rows(&self) -> impl Iterator<Item = &[i8]> + '_ {
        self.entries.chunks(self.k)
    }

    pub fn nnz(&self) -> usize {
        self.entries.iter().filter(|&&e| e != 0).count()
    }

    /// Nonzero entries in row-major order.
    pub fn terms(&self) -> Vec<Term> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, &e)| e != 0)
            .map(|(idx, &e)| Term {
                row: idx / self.k,
                col: idx % self.k,
                chunk: e.unsigned_abs() as usize - 1,
                negative: e < 0,
            })
            .collect()
    }

    /// Row-major entries offset by `+k`, so every byte is nonnegative.
    pub fn encoding(&self) -> Vec<u8> {
        let k = self.k as i8;
        self.entries.iter().map(|&e| (e + k) as u8).collect()
    }

    pub fn transpose(&self) -> Self {
        let k = self.k;
        let mut entries = vec![0; k * k];
        for i in 0..k {
            for j in 0..k {
                entries[j * k + i] = self.entries[i * k + j];
            }
        }
        StructureMatrix { k, entries }
    }

    /// Exact determinant (Bareiss fraction-free elimination).
    pub fn determinant(&self) -> i128 {
        let k = self.k;
        let mut m: Vec<i128> = self.entries.iter().map(|&e| e as i128).collect();
        let mut sign = 1i128;
        let mut prev = 1i128;
        for p in 0..k {
            if m[p * k + p] == 0 {
                match (p + 1..k).find(|&r| m[r * k + p] != 0) {
                    Some(r) => {
                        for c in 0..k {
                            m.swap(p * k + c, r * k + c);
                        }
                        sign = -sign;
                    }
                    None => return 0,
                }
            }
            let pivot = m[p * k + p];
            for r in p + 1..k {
                for c in p + 1..k {
                    m[r * k + c] = (m[r * k + c] * pivot - m[r * k + p] * m[p * k + c]) / prev;
                }
                m[r * k + p] = 0;
            }
            prev = pivot;
        }
        sign * m[k * k - 1]
    }

    /// Rank over the rationals.
    pub fn rank(&self) -> usize {
        let data = self.entries.iter().map(|&e| e as i128).collect();
        integer_rank(self.k, self.k, data)
    }

    /// True when every value `1..=k` appears (up to sign) somewhere in the matrix.
    pub fn covers_all_values(&self) -> bool {
        let mut seen = vec![false; self.k + 1];
        for &e in &self.entries {
            seen[e.unsigned_abs() as usize] = true;
        }
        seen[1..].iter().all(|&s| s)
    }

    /// Degeneracy by the rank/coverage criterion: a matrix is kept only when
    /// `det(A) != 0` and all values `1..=k` occur.
    ///
    /// This is the criterion used by [`filter_check`]. Note that it is stricter
    /// than [`StructureMatrix::is_degenerate_exact`]: an integer matrix can be
    /// singular even though no embedding is annihilated for every relation.
    pub fn is_degenerate(&self) -> bool {
        !self.covers_all_values() || self.determinant() == 0
    }

    /// Degeneracy decided directly from the score function: true when some
    /// nonzero head (or tail) chunk combination scores zero for every relation
    /// and partner, or some relation chunk never enters the score.
    ///
    /// Let `S_m` be the signed indicator of value class `m`. A nonzero head
    /// vector `h` with `h^T S_m = 0` for all `m` exists iff `[S_1 | ... | S_k]`
    /// has rank `< k`; the tail side uses the vertical stack.
    pub fn is_degenerate_exact(&self) -> bool {
        if !self.covers_all_values() {
            return true;
        }
        let k = self.k;
        let mut wide = vec![0i128; k * k * k];
        let mut tall = vec![0i128; k * k * k];
        for t in self.terms() {
            let s = if t.negative { -1 } else { 1 };
            // wide: k rows, k*k cols; column block = chunk
            wide[t.row * (k * k) + t.chunk * k + t.col] = s;
            // tall: k*k rows, k cols; row block = chunk
            tall[(t.chunk * k + t.row) * k + t.col] = s;
        }
        integer_rank(k, k * k, wide) < k || integer_rank(k * k, k, tall) < k
    }

    /// `A' = P^T A P`: `A'[i][j] = A[perm[i]][perm[j]]`.
    pub fn permute_rows_cols(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.k)?;
        let k = self.k;
        let mut entries = vec![0; k * k];
        for i in 0..k {
            for j in 0..k {
                entries[i * k + j] = self.entries[perm[i] * k + perm[j]];
            }
        }
        Ok(StructureMatrix { k, entries })
    }

    /// Relabels value classes: `|A'[i][j]| = sigma[|A[i][j]| - 1] + 1`, signs kept.
    /// `sigma` is a zero-based permutation of `0..k`.
    pub fn permute_values(&self, sigma: &[usize]) -> Result<Self> {
        check_permutation(sigma, self.k)?;
        let entries = self
            .entries
            .iter()
            .map(|&e| {
                if e == 0 {
                    0
                } else {
                    e.signum() * (sigma[e.unsigned_abs() as usize - 1] as i8 + 1)
                }
            })
            .collect();
        Ok(StructureMatrix { k: self.k, entries })
    }

    /// Flips the sign of every entry in value class `m` where `signs[m-1] < 0`.
    pub fn flip_signs(&self, signs: &[i8]) -> Result<Self> {
        if signs.len() != self.k || signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::invalid("sign vector must have k entries of +1/-1"));
        }
        let entries = self
            .entries
            .iter()
            .map(|&e| {
                if e == 0 {
                    0
                } else {
                    signs[e.unsigned_abs() as usize - 1] * e
                }
            })
            .collect();
        Ok(StructureMatrix { k: self.k, entries })
    }

    /// Every matrix reachable by composing a row/column permutation, a value
    /// permutation and a sign flip; deduplicated and sorted by encoding.
    pub fn equivalence_orbit(&self) -> Vec<StructureMatrix> {
        let k = self.k;
        let perms = permutations(k);
        let mut seen: BTreeSet<Vec<i8>> = BTreeSet::new();
        let mut scratch = vec![0i8; k * k];
        for pi in &perms {
            let permuted = self
                .permute_rows_cols(pi)
                .expect("generated permutation is valid");
            for sigma in &perms {
                for mask in 0u32..(1 << k) {
                    for (dst, &e) in scratch.iter_mut().zip(&permuted.entries) {
                        *dst = if e == 0 {
                            0
                        } else {
                            let m = e.unsigned_abs() as usize - 1;
                            let flip = if mask & (1 << sigma[m]) != 0 { -1 } else { 1 };
                            flip * e.signum() * (sigma[m] as i8 + 1)
                        };
                    }
                    if !seen.contains(&scratch) {
                        seen.insert(scratch.clone());
                    }
                }
            }
        }
        seen.into_iter()
            .map(|entries| StructureMatrix { k, entries })
            .collect()
    }

    pub fn orbit_size(&self) -> usize {
        self.equivalence_orbit().len()
    }

    /// Encoding of the lexicographically smallest member of the orbit.
    ///
    /// For a fixed row/column permutation the optimal value relabeling is
    /// greedy: scanning row-major, the first occurrence of each new value class
    /// takes the most negative unused value. Only the `k!` row/column
    /// permutations are therefore enumerated.
    pub fn canonical_key(&self) -> CanonicalKey {
        let k = self.k;
        let mut best: Option<Vec<i8>> = None;
        let mut candidate = vec![0i8; k * k];
        for pi in permutations(k) {
            let mut mapped = [0i8; MAX_K + 1];
            let mut next = k as i8;
            for i in 0..k {
                for j in 0..k {
                    let e = self.entries[pi[i] * k + pi[j]];
                    candidate[i * k + j] = if e == 0 {
                        0
                    } else {
                        let m = e.unsigned_abs() as usize;
                        if mapped[m] == 0 {
                            mapped[m] = -next * e.signum();
                            next -= 1;
                        }
                        e.signum() * mapped[m]
                    };
                }
            }
            if best.as_ref().is_none_or(|b| candidate < *b) {
                best = Some(candidate.clone());
            }
        }
        let best = best.expect("k >= 2 gives at least one permutation");
        CanonicalKey(best.iter().map(|&e| (e + k as i8) as u8).collect())
    }
}

impl fmt::Debug for StructureMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StructureMatrix(k={}, ", self.k)?;
        f.debug_list().entries(self.rows()).finish()?;
        write!(f, ")")
    }
}

impl fmt::Display for StructureMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, row) in self.rows().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>3}")).collect();
            write!(f, "[{}]", cells.join(""))?;
        }
        Ok(())
    }
}

fn check_permutation(perm: &[usize], k: usize) -> Result<()> {
    let mut seen = vec![false; k];
    if perm.len() != k {
        return Err(Error::invalid("permutation length must equal k"));
    }
    for &p in perm {
        if p >= k || seen[p] {
            return Err(Error::invalid(format!("{perm:?} is not a permutation")));
        }
        seen[p] = true;
    }
    Ok(())
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut current: Vec<usize> = (0..n).collect();
    let mut out = vec![current.clone()];
    loop {
        let Some(i) = (1..n).rev().find(|&i| current[i - 1] < current[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| current[j] > current[i - 1]).unwrap();
        current.swap(i - 1, j);
        current[i..].reverse();
        out.push(current.clone());
    }
}

/// Rank of a `rows x cols` integer matrix over the rationals.
fn integer_rank(rows: usize, cols: usize, mut m: Vec<i128>) -> usize {
    let mut rank = 0;
    for c in 0..cols {
        let Some(p) = (rank..rows).find(|&r| m[r * cols + c] != 0) else {
            continue;
        };
        for x in 0..cols {
            m.swap(rank * cols + x, p * cols + x);
        }
        let pivot = m[rank * cols + c];
        for r in rank + 1..rows {
            let f = m[r * cols + c];
            if f == 0 {
                continue;
            }
            let mut g = 0i128;
            for x in 0..cols {
                let v = m[r * cols + x] * pivot - m[rank * cols + x] * f;
                m[r * cols + x] = v;
                g = gcd(g, v);
            }
            if g > 1 {
                for x in 0..cols {
                    m[r * cols + x] /= g;
                }
            }
        }
        rank += 1;
        if rank == rows {
            break;
        }
    }
    rank
}

fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Canonical orbit representative encoding; equal keys iff equivalent matrices.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct CanonicalKey(Vec<u8>);

impl CanonicalKey {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Filter used by every search loop: accept iff non-degenerate and not
/// equivalent to anything already in `history`.
pub fn filter_check(a: &StructureMatrix, history: &HashSet<CanonicalKey>) -> bool {
    !a.is_degenerate() && !history.contains(&a.canonical_key())
}

/// A nonzero relation pattern with entries in `{-k, ..., k}`.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct RelationPattern {
    values: Vec<i8>,
}

impl RelationPattern {
    pub fn new(values: Vec<i8>) -> Result<Self> {
        let k = values.len();
        if values.iter().all(|&v| v == 0) {
            return Err(Error::invalid("relation pattern must have a nonzero entry"));
        }
        if values.iter().any(|v| v.unsigned_abs() as usize > k) {
            return Err(Error::invalid(format!(
                "pattern {values:?} has entries outside {{-{k}, ..., {k}}}"
            )));
        }
        Ok(RelationPattern { values })
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of zero entries.
    pub fn zeros(&self) -> usize {
        self.values.iter().filter(|&&v| v == 0).count()
    }

    /// Number of distinct nonzero absolute values.
    pub fn distinct_abs(&self) -> usize {
        distinct_abs(&self.values)
    }
}

impl fmt::Display for RelationPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.values.iter().map(|v| v.to_string()).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

pub(crate) fn distinct_abs(values: &[i8]) -> usize {
    let mut seen = [false; MAX_K + 1];
    let mut count = 0;
    for &v in values {
        let a = v.unsigned_abs() as usize;
        if a != 0 && !seen[a] {
            seen[a] = true;
            count += 1;
        }
    }
    count
}

/// Calls `f` on every nonzero pattern in `{-k, ..., k}^k`, in odometer order.
pub(crate) fn for_each_pattern(k: usize, mut f: impl FnMut(&[i8])) {
    let k8 = k as i8;
    let mut r = vec![-k8; k];
    loop {
        if r.iter().any(|&v| v != 0) {
            f(&r);
        }
        let mut pos = k;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            if r[pos] < k8 {
                r[pos] += 1;
                break;
            }
            r[pos] = -k8;
        }
    }
}

/// Scalar realization of the block relation matrix for a given pattern.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SignatureMatrix {
    k: usize,
    values: Vec<i64>,
}

impl SignatureMatrix {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> i64 {
        self.values[i * self.k + j]
    }

    pub fn values(&self) -> &[i64] {
        &self.values
    }

    pub fn is_symmetric(&self) -> bool {
        let k = self.k;
        (0..k).all(|i| (i + 1..k).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn is_skew_symmetric(&self) -> bool {
        let k = self.k;
        (0..k).all(|i| (i..k).all(|j| self.get(i, j) == -self.get(j, i)))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0)
    }
}

/// `out[i][j] = sign(A[i][j]) * r[|A[i][j]|]`, with `r[0] = 0`.
pub fn signature_matrix(a: &StructureMatrix, r: &RelationPattern) -> Result<SignatureMatrix> {
    if r.len() != a.k() {
        return Err(Error::invalid(format!(
            "pattern length {} does not match k={}",
            r.len(),
            a.k()
        )));
    }
    Ok(SignatureMatrix {
        k: a.k(),
        values: a
            .entries()
            .iter()
            .map(|&e| signed_lookup(e, r.values()) as i64)
            .collect(),
    })
}

#[inline]
fn signed_lookup(e: i8, r: &[i8]) -> i8 {
    if e == 0 {
        0
    } else {
        e.signum() * r[e.unsigned_abs() as usize - 1]
    }
}

/// Symmetric / skew-symmetric / all-zero flags of the signature for `r`,
/// without materializing it.
pub(crate) fn symmetry_flags(a: &StructureMatrix, r: &[i8]) -> (bool, bool, bool) {
    let k = a.k();
    let e = a.entries();
    let mut sym = true;
    let mut skew = true;
    let mut zero = true;
    for i in 0..k {
        let d = signed_lookup(e[i * k + i], r);
        if d != 0 {
            skew = false;
            zero = false;
        }
        for j in i + 1..k {
            let x = signed_lookup(e[i * k + j], r);
            let y = signed_lookup(e[j * k + i], r);
            if x != y {
                sym = false;
            }
            if x != -y {
                skew = false;
            }
            if x != 0 || y != 0 {
                zero = false;
            }
            if !(sym || skew || zero) {
                return (false, false, false);
            }
        }
    }
    (sym, skew, zero)
}

/// Symmetric and skew-symmetric realizations found for a structure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Witnesses {
    pub symmetric: Option<RelationPattern>,
    pub skew: Option<RelationPattern>,
}

impl Witnesses {
    /// Both witnesses present: the structure is certified fully expressive.
    pub fn certified(&self) -> bool {
        self.symmetric.is_some() && self.skew.is_some()
    }
}

/// Ordering used to pick one witness among many: larger support first, then
/// more coordinates with `r[i] == i+1`, then lexicographic with positive
/// values before negative ones.
fn witness_rank(r: &[i8]) -> (usize, usize, Vec<u8>) {
    let k = r.len() as i8;
    let support = r.iter().filter(|&&v| v != 0).count();
    let aligned = r
        .iter()
        .enumerate()
        .filter(|(i, &v)| v == *i as i8 + 1)
        .count();
    let lex = r
        .iter()
        .map(|&v| if v >= 0 { v as u8 } else { (k - v) as u8 })
        .collect();
    (k as usize - support, k as usize - aligned, lex)
}

/// Searches all `(2k+1)^k - 1` patterns for a symmetric and a skew-symmetric
/// nonzero signature.
///
/// A signature that is identically zero is not accepted as a witness; this only
/// matters for structures missing some value class.
pub fn find_witnesses(a: &StructureMatrix) -> Witnesses {
    let mut best_sym: Option<((usize, usize, Vec<u8>), Vec<i8>)> = None;
    let mut best_skew: Option<((usize, usize, Vec<u8>), Vec<i8>)> = None;
    for_each_pattern(a.k(), |r| {
        let (sym, skew, zero) = symmetry_flags(a, r);
        if zero {
            return;
        }
        for (flag, slot) in [(sym, &mut best_sym), (skew, &mut best_skew)] {
            if flag {
                let rank = witness_rank(r);
                if slot.as_ref().is_none_or(|(b, _)| rank < *b) {
                    *slot = Some((rank, r.to_vec()));
                }
            }
        }
    });
    let wrap = |s: Option<(_, Vec<i8>)>| s.map(|(_, v)| RelationPattern { values: v });
    Witnesses {
        symmetric: wrap(best_sym),
        skew: wrap(best_skew),
    }
}

/// The `(symmetric, skew)` witness pair, or `None` if either is missing.
pub fn expressiveness_witnesses(a: &StructureMatrix) -> Option<(RelationPattern, RelationPattern)> {
    let w = find_witnesses(a);
    Some((w.symmetric?, w.skew?))
}

/// Classical bilinear models expressible with `k = 4`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuiltinModel {
    DistMult,
    ComplEx,
    SimplE,
    Analogy,
    QuatE,
}

impl BuiltinModel {
    pub const ALL: [BuiltinModel; 5] = [
        BuiltinModel::DistMult,
        BuiltinModel::ComplEx,
        BuiltinModel::SimplE,
        BuiltinModel::Analogy,
        BuiltinModel::QuatE,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BuiltinModel::DistMult => "distmult",
            BuiltinModel::ComplEx => "complex",
            BuiltinModel::SimplE => "simple",
            BuiltinModel::Analogy => "analogy",
            BuiltinModel::QuatE => "quate",
        }
    }

    pub fn structure(self) -> StructureMatrix {
        let rows: [[i8; 4]; 4] = match self {
            BuiltinModel::DistMult => [[1, 0, 0, 0], [0, 2, 0, 0], [0, 0, 3, 0], [0, 0, 0, 4]],
            // real parts are chunks 1,2; imaginary parts are chunks 3,4
            BuiltinModel::ComplEx => [[1, 0, 3, 0], [0, 2, 0, 4], [-3, 0, 1, 0], [0, -4, 0, 2]],
            BuiltinModel::SimplE => [[0, 0, 1, 0], [0, 0, 0, 2], [3, 0, 0, 0], [0, 4, 0, 0]],
            BuiltinModel::Analogy => [[1, 0, 0, 0], [0, 2, 0, 0], [0, 0, 3, 4], [0, 0, -4, 3]],
            BuiltinModel::QuatE => [
                [1, -2, -3, -4],
                [2, 1, 4, -3],
                [3, -4, 1, 2],
                [4, 3, -2, 1],
            ],
        };
        StructureMatrix {
            k: 4,
            entries: rows.iter().flatten().copied().collect(),
        }
    }
}

impl FromStr for BuiltinModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "distmult" => Ok(BuiltinModel::DistMult),
            "complex" | "hole" => Ok(BuiltinModel::ComplEx),
            "simple" | "cp" => Ok(BuiltinModel::SimplE),
            "analogy" => Ok(BuiltinModel::Analogy),
            "quate" => Ok(BuiltinModel::QuatE),
            other => Err(Error::invalid(format!("unknown builtin structure '{other}'"))),
        }
    }
}

impl fmt::Display for BuiltinModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Looks up a builtin structure by name.
pub fn builtin_structure(name: &str) -> Result<StructureMatrix> {
    Ok(name.parse::<BuiltinModel>()?.structure())
}
