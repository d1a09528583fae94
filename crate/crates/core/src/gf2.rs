//! Linear algebra over GF(2) for ambient dimensions up to 128.
//!
//! A vector of `F_2^λ` is a `u128` whose bit `j` is coordinate `j`. Bases are
//! kept in reduced row echelon form: each row's lowest set bit is its pivot,
//! pivots strictly increase down the rows, and every pivot column is clear in
//! all other rows. Equal subspaces therefore have equal bases.

use alloc::sync::Arc;
use alloc::vec::Vec;
use rand_core::RngCore;

use crate::codec::{DecodeError, Reader, Writer};

pub const MAX_LAMBDA: u16 = 128;

/// Mask selecting the low `lambda` coordinates.
pub fn mask(lambda: u16) -> u128 {
    if lambda >= 128 {
        u128::MAX
    } else {
        (1u128 << lambda) - 1
    }
}

pub fn dot(a: u128, b: u128) -> bool {
    (a & b).count_ones() & 1 == 1
}

pub fn random_vector<R: RngCore + ?Sized>(rng: &mut R, lambda: u16) -> u128 {
    // draw only the words the mask keeps
    match lambda {
        0 => 0,
        1..=32 => u128::from(rng.next_u32()) & mask(lambda),
        33..=64 => u128::from(rng.next_u64()) & mask(lambda),
        _ => (u128::from(rng.next_u64()) | (u128::from(rng.next_u64()) << 64)) & mask(lambda),
    }
}

/// `offset` plus a uniformly random combination of `rows`. Uniform over the
/// coset whenever `rows` are linearly independent.
pub fn random_combination<R: RngCore + ?Sized>(rng: &mut R, rows: &[u128], offset: u128) -> u128 {
    let coeffs = random_vector(rng, rows.len() as u16);
    rows.iter().enumerate().fold(offset, |acc, (i, &b)| {
        acc ^ (b & 0u128.wrapping_sub((coeffs >> i) & 1))
    })
}

fn pivot(row: u128) -> u32 {
    row.trailing_zeros()
}

/// Bernoulli draw with probability `(2^m - 2^(m-k)) / (2^m - 1)`, exactly.
///
/// Draws `u` uniform on `[0, 2^m - 1)`; the column is a pivot unless the top
/// `k` bits of `u` are all set. The low bits are only drawn in that case.
fn column_is_pivot<R: RngCore + ?Sized>(rng: &mut R, m: u32, k: u32) -> bool {
    debug_assert!(1 <= k && k <= m && k <= 64);
    let top = mask(k as u16);
    loop {
        if random_vector(rng, k as u16) != top {
            return true;
        }
        let low = (m - k) as u16;
        if random_vector(rng, low) != mask(low) {
            return false;
        }
    }
}

/// Reduced row echelon form of the span of `rows`; zero rows are dropped.
pub fn rref(rows: &[u128]) -> Vec<u128> {
    let mut basis: Vec<u128> = Vec::with_capacity(rows.len());
    for &row in rows {
        insert(&mut basis, row);
    }
    basis
}

/// Adds `row` to an RREF basis in place; false if it was already spanned.
fn insert(basis: &mut Vec<u128>, row: u128) -> bool {
    let v = reduce(basis, row);
    if v == 0 {
        return false;
    }
    let p = pivot(v);
    let bit = v & v.wrapping_neg();
    for b in basis.iter_mut() {
        *b ^= v & 0u128.wrapping_sub(u128::from(*b & bit != 0));
    }
    let at = basis.partition_point(|&b| pivot(b) < p);
    basis.insert(at, v);
    true
}

/// Reduces `v` against an RREF basis; the result is zero iff `v` is in the span.
///
/// Each row is clear in every other row's pivot column, so whether a row is
/// needed depends only on the original `v`.
pub fn reduce(basis: &[u128], v: u128) -> u128 {
    basis.iter().fold(v, |acc, &b| {
        let hit = v & b & b.wrapping_neg();
        acc ^ (b & 0u128.wrapping_sub(u128::from(hit != 0)))
    })
}

/// Whether `rows` is already a reduced row echelon basis without zero rows.
pub fn is_rref(rows: &[u128]) -> bool {
    let pivots = rows
        .iter()
        .fold(0u128, |acc, &r| acc | (r & r.wrapping_neg()));
    rows.iter()
        .all(|&r| r != 0 && r & pivots == r & r.wrapping_neg())
        && rows.windows(2).all(|w| pivot(w[0]) < pivot(w[1]))
}

pub fn rank(rows: &[u128]) -> usize {
    rref(rows).len()
}

/// Linear subspace of `F_2^λ` held as a canonical basis.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Subspace {
    lambda: u16,
    basis: Vec<u128>,
}

impl Subspace {
    /// Span of `rows`, which may be dependent. Returns `None` when a row has
    /// coordinates outside the ambient space or `lambda` is out of range.
    pub fn span(lambda: u16, rows: &[u128]) -> Option<Self> {
        if lambda == 0 || lambda > MAX_LAMBDA || rows.iter().any(|&r| r & !mask(lambda) != 0) {
            return None;
        }
        Some(Self {
            lambda,
            basis: rref(rows),
        })
    }

    /// Wraps rows that are already canonical, skipping the elimination.
    pub fn from_rref(lambda: u16, rows: Vec<u128>) -> Option<Self> {
        if lambda == 0
            || lambda > MAX_LAMBDA
            || rows.iter().any(|&r| r & !mask(lambda) != 0)
            || !is_rref(&rows)
        {
            return None;
        }
        Some(Self {
            lambda,
            basis: rows,
        })
    }

    /// Uniformly random `λ/2`-dimensional subspace, drawn directly in
    /// reduced form.
    ///
    /// Scanning columns upward with `m` columns and `k` pivots left, the
    /// current column is a pivot with probability
    /// `(2^m - 2^(m-k)) / (2^m - 1)`, the ratio of Gaussian binomials counting
    /// the subspaces on either branch. The non-pivot entries above each pivot
    /// are then uniform.
    pub fn sample<R: RngCore + ?Sized>(rng: &mut R, lambda: u16) -> Self {
        assert!(
            lambda >= 4 && lambda % 2 == 0 && lambda <= MAX_LAMBDA,
            "lambda must be even and in 4..=128"
        );
        let n = u32::from(lambda);
        let mut k = n / 2;
        let mut pivots = 0u128;
        for c in 0..n {
            if k == 0 {
                break;
            }
            if column_is_pivot(rng, n - c, k) {
                pivots |= 1 << c;
                k -= 1;
            }
        }
        let free = mask(lambda) & !pivots;
        let mut basis = Vec::with_capacity(usize::from(lambda / 2));
        let mut rest = pivots;
        while rest != 0 {
            let bit = rest & rest.wrapping_neg();
            let above = !(bit | (bit - 1));
            basis.push(bit | (random_vector(rng, lambda) & free & above));
            rest ^= bit;
        }
        Self { lambda, basis }
    }

    pub fn lambda(&self) -> u16 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[u128] {
        &self.basis
    }

    pub fn contains(&self, v: u128) -> bool {
        v & !mask(self.lambda) == 0 && reduce(&self.basis, v) == 0
    }

    /// The orthogonal complement under the standard GF(2) inner product.
    pub fn perp(&self) -> Subspace {
        Subspace {
            lambda: self.lambda,
            basis: rref(&self.perp_rows()),
        }
    }

    /// A basis of the orthogonal complement, not reduced: the row for each
    /// free column `f` is `e_f` plus `e_p` for every basis row with pivot `p`
    /// that has bit `f` set.
    pub fn perp_rows(&self) -> Vec<u128> {
        let pivots: u128 = self
            .basis
            .iter()
            .fold(0, |acc, &b| acc | (b & b.wrapping_neg()));
        let free = mask(self.lambda) & !pivots;
        let mut rows = [0u128; 128];
        let mut rest = free;
        while rest != 0 {
            let f = rest.trailing_zeros() as usize;
            rows[f] = 1u128 << f;
            rest &= rest - 1;
        }
        for &b in &self.basis {
            let p = b & b.wrapping_neg();
            let mut hits = b & free;
            while hits != 0 {
                rows[hits.trailing_zeros() as usize] |= p;
                hits &= hits - 1;
            }
        }
        rows.into_iter().filter(|&r| r != 0).collect()
    }

    /// Uniform element of the coset `self + offset`.
    pub fn random_coset_element<R: RngCore + ?Sized>(&self, rng: &mut R, offset: u128) -> u128 {
        random_combination(rng, &self.basis, offset)
    }

    /// Every element of the subspace. Only sensible for small dimensions.
    pub fn elements(&self) -> Vec<u128> {
        assert!(self.basis.len() <= 20, "subspace too large to enumerate");
        (0u32..(1 << self.basis.len()))
            .map(|c| {
                self.basis
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| (c >> i) & 1 == 1)
                    .fold(0u128, |acc, (_, &b)| acc ^ b)
            })
            .collect()
    }

    pub fn encode(&self, w: &mut Writer) {
        w.u16(self.lambda);
        encode_rows(w, self.lambda, &self.basis);
    }

    /// Decodes and re-canonicalizes; a non-canonical basis is rejected.
    pub fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let lambda = r.u16()?;
        if lambda == 0 || lambda > MAX_LAMBDA {
            return Err(DecodeError::Invalid("lambda"));
        }
        let rows = decode_rows(r, lambda)?;
        let s = Subspace::span(lambda, &rows).ok_or(DecodeError::Invalid("subspace"))?;
        if s.basis != rows {
            return Err(DecodeError::Invalid("subspace basis not canonical"));
        }
        Ok(s)
    }
}

/// A subspace together with a spanning set of its complement, built on
/// first use. Enough to sample either coset without reducing the complement.
#[derive(Debug)]
pub struct PairedSubspace {
    subspace: Subspace,
    perp_rows: spin::Once<Vec<u128>>,
}

impl PairedSubspace {
    pub fn new(subspace: Subspace) -> Self {
        Self {
            subspace,
            perp_rows: spin::Once::new(),
        }
    }

    pub fn subspace(&self) -> &Subspace {
        &self.subspace
    }

    pub fn perp_rows(&self) -> &[u128] {
        self.perp_rows.call_once(|| self.subspace.perp_rows())
    }
}

pub fn vector_bytes(lambda: u16) -> usize {
    usize::from(lambda).div_ceil(8)
}

/// One vector, `⌈λ/8⌉` bytes, coordinate `j` at bit `j % 8` of byte `j / 8`.
pub fn encode_vector(w: &mut Writer, lambda: u16, v: u128) {
    w.raw(&v.to_le_bytes()[..vector_bytes(lambda)]);
}

pub fn decode_vector(r: &mut Reader<'_>, lambda: u16) -> Result<u128, DecodeError> {
    let n = vector_bytes(lambda);
    let mut buf = [0u8; 16];
    buf[..n].copy_from_slice(r.raw(n)?);
    let v = u128::from_le_bytes(buf);
    if v & !mask(lambda) != 0 {
        return Err(DecodeError::Invalid("vector padding"));
    }
    Ok(v)
}

/// `u16` row count followed by bit-packed rows, row-major.
pub fn encode_rows(w: &mut Writer, lambda: u16, rows: &[u128]) {
    w.u16(rows.len() as u16);
    for &row in rows {
        encode_vector(w, lambda, row);
    }
}

pub fn decode_rows(r: &mut Reader<'_>, lambda: u16) -> Result<Vec<u128>, DecodeError> {
    let n = r.u16()?;
    (0..n).map(|_| decode_vector(r, lambda)).collect()
}

/// How a [`CosetChecker`] describes its subspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CheckerForm {
    /// Rows span the subspace; `v` is accepted if `v - offset` reduces to zero.
    Span,
    /// Rows are parity checks; `v` is accepted if its syndrome matches.
    Kernel,
}

/// Membership test for an affine subspace, given by a canonical basis and a
/// canonical offset (the reduced coset representative for the span form, the
/// syndrome for the kernel form).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CosetChecker {
    lambda: u16,
    form: CheckerForm,
    basis: Arc<[u128]>,
    offset: u128,
}

fn syndrome(checks: &[u128], v: u128) -> u128 {
    checks
        .iter()
        .enumerate()
        .fold(0, |acc, (i, &c)| acc | (u128::from(dot(v, c)) << i))
}

impl CosetChecker {
    /// Checker for `span(rows) + offset`.
    pub fn new(lambda: u16, rows: &[u128], offset: u128) -> Self {
        Self::with_basis(lambda, rref(rows).into(), offset)
    }

    /// Checker for `{v : v·c = point·c for every c in checks}`, the coset of
    /// the orthogonal complement of `span(checks)` through `point`.
    pub fn kernel(lambda: u16, checks: &[u128], point: u128) -> Self {
        Self::kernel_with_basis(lambda, rref(checks).into(), point)
    }

    /// Shares an existing canonical basis between checkers.
    pub(crate) fn with_basis(lambda: u16, basis: Arc<[u128]>, offset: u128) -> Self {
        let offset = reduce(&basis, offset & mask(lambda));
        Self {
            lambda,
            form: CheckerForm::Span,
            basis,
            offset,
        }
    }

    pub(crate) fn kernel_with_basis(lambda: u16, checks: Arc<[u128]>, point: u128) -> Self {
        let offset = syndrome(&checks, point & mask(lambda));
        Self {
            lambda,
            form: CheckerForm::Kernel,
            basis: checks,
            offset,
        }
    }

    pub fn lambda(&self) -> u16 {
        self.lambda
    }

    pub fn form(&self) -> CheckerForm {
        self.form
    }

    pub fn accepts(&self, v: u128) -> bool {
        if v & !mask(self.lambda) != 0 {
            return false;
        }
        match self.form {
            CheckerForm::Span => reduce(&self.basis, v ^ self.offset) == 0,
            CheckerForm::Kernel => syndrome(&self.basis, v) == self.offset,
        }
    }

    /// `form || rows || offset`.
    pub fn encode(&self, w: &mut Writer) {
        w.u8(match self.form {
            CheckerForm::Span => 0,
            CheckerForm::Kernel => 1,
        });
        encode_rows(w, self.lambda, &self.basis);
        encode_vector(w, self.lambda, self.offset);
    }

    pub fn decode(r: &mut Reader<'_>, lambda: u16) -> Result<Self, DecodeError> {
        let form = match r.u8()? {
            0 => CheckerForm::Span,
            1 => CheckerForm::Kernel,
            _ => return Err(DecodeError::Invalid("coset checker form")),
        };
        let rows = decode_rows(r, lambda)?;
        if !is_rref(&rows) {
            return Err(DecodeError::Invalid("coset checker not canonical"));
        }
        let basis: Arc<[u128]> = rows.into();
        Self::with_decoded_offset(r, lambda, form, basis)
    }

    /// Writes only the offset, for a checker stored next to one with the
    /// same form and basis.
    pub(crate) fn encode_offset(&self, w: &mut Writer) {
        encode_vector(w, self.lambda, self.offset);
    }

    /// Reads an offset written by [`CosetChecker::encode_offset`].
    pub(crate) fn decode_sibling(&self, r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Self::with_decoded_offset(r, self.lambda, self.form, self.basis.clone())
    }

    pub(crate) fn same_subspace(&self, other: &Self) -> bool {
        self.form == other.form
            && (Arc::ptr_eq(&self.basis, &other.basis) || self.basis == other.basis)
    }

    fn with_decoded_offset(
        r: &mut Reader<'_>,
        lambda: u16,
        form: CheckerForm,
        basis: Arc<[u128]>,
    ) -> Result<Self, DecodeError> {
        let offset = decode_vector(r, lambda)?;
        let canonical = match form {
            CheckerForm::Span => reduce(&basis, offset) == offset,
            CheckerForm::Kernel => basis.len() >= 128 || offset >> basis.len() == 0,
        };
        if !canonical {
            return Err(DecodeError::Invalid("coset checker not canonical"));
        }
        Ok(Self {
            lambda,
            form,
            basis,
            offset,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn e(i: u32) -> u128 {
        1 << i
    }

    #[test]
    fn rref_is_canonical() {
        let a = rref(&[0b0110, 0b0011]);
        let b = rref(&[0b0101, 0b0110]);
        assert_eq!(a, b);
        assert_eq!(a, alloc::vec![0b0101, 0b0110]);
    }

    #[test]
    fn coordinate_perp() {
        let s = Subspace::span(4, &[e(0), e(1)]).unwrap();
        let p = s.perp();
        assert_eq!(p, Subspace::span(4, &[e(2), e(3)]).unwrap());
    }

    #[test]
    fn sampled_dimension() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let s = Subspace::sample(&mut rng, 4);
        assert_eq!(s.dim(), 2);
        assert_eq!(s.basis().len(), 2);
        for _ in 0..1000 {
            assert_eq!(Subspace::sample(&mut rng, 8).dim(), 4);
        }
    }

    #[test]
    fn perp_is_involution() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for lambda in [4u16, 8, 32, 128] {
            for _ in 0..250 {
                let s = Subspace::sample(&mut rng, lambda);
                let p = s.perp();
                assert_eq!(p.dim(), usize::from(lambda / 2));
                assert_eq!(p.perp(), s);
            }
        }
    }

    #[test]
    fn perp_pairing_exhaustive_lambda8() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..20 {
            let s = Subspace::sample(&mut rng, 8);
            let p = s.perp();
            for v in s.elements() {
                for w in p.elements() {
                    assert!(!dot(v, w));
                }
            }
            // and nothing outside S⊥ is orthogonal to all of S
            for w in 0u128..256 {
                let orth = s.elements().iter().all(|&v| !dot(v, w));
                assert_eq!(orth, p.contains(w));
            }
        }
    }

    #[test]
    fn coset_checker_membership() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let s = Subspace::sample(&mut rng, 8);
        let x = random_vector(&mut rng, 8);
        let c = CosetChecker::new(8, s.basis(), x);
        for v in 0u128..256 {
            assert_eq!(c.accepts(v), s.contains(v ^ x));
        }
        assert!(!c.accepts(1 << 9));
    }

    #[test]
    fn coset_sampling_lands_in_coset() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let s = Subspace::sample(&mut rng, 32);
        let x = random_vector(&mut rng, 32);
        for _ in 0..1000 {
            let v = s.random_coset_element(&mut rng, x);
            assert!(s.contains(v ^ x));
        }
    }

    #[test]
    fn subspace_codec_rejects_noncanonical() {
        let s = Subspace::span(8, &[0b11, 0b110]).unwrap();
        let mut w = Writer::new();
        s.encode(&mut w);
        let buf = w.finish();
        let mut r = Reader::new(&buf);
        assert_eq!(Subspace::decode(&mut r).unwrap(), s);

        let mut w = Writer::new();
        w.u16(8);
        encode_rows(&mut w, 8, &[0b110, 0b11]);
        let buf = w.finish();
        assert!(Subspace::decode(&mut Reader::new(&buf)).is_err());
    }

    #[test]
    fn kernel_checker_matches_perp_coset() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..20 {
            let s = Subspace::sample(&mut rng, 8);
            let z = random_vector(&mut rng, 8);
            let k = CosetChecker::kernel(8, s.basis(), z);
            let span = CosetChecker::new(8, s.perp().basis(), z);
            assert_eq!(k.form(), CheckerForm::Kernel);
            for v in 0u128..256 {
                assert_eq!(k.accepts(v), span.accepts(v));
            }
            let mut w = Writer::new();
            k.encode(&mut w);
            let bytes = w.finish();
            assert_eq!(
                CosetChecker::decode(&mut Reader::new(&bytes), 8).unwrap(),
                k
            );
        }
    }

    #[test]
    fn perp_rows_span_the_complement() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        for lambda in [8u16, 64, 128] {
            let s = Subspace::sample(&mut rng, lambda);
            let rows = s.perp_rows();
            assert_eq!(rank(&rows), rows.len());
            assert_eq!(Subspace::span(lambda, &rows).unwrap(), s.perp());
            let v = random_combination(&mut rng, &rows, 0);
            assert!(s.basis().iter().all(|&b| !dot(v, b)));
        }
    }

    #[test]
    fn sampled_basis_is_canonical() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        for lambda in [4u16, 6, 32, 64, 128] {
            for _ in 0..50 {
                let s = Subspace::sample(&mut rng, lambda);
                assert!(is_rref(s.basis()));
                assert_eq!(s.basis(), rref(s.basis()).as_slice());
                assert!(s.basis().iter().all(|&b| b & !mask(lambda) == 0));
            }
        }
    }
}
