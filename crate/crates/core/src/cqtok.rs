//! Semi-quantum tokenized signatures with a classical sender.
//!
//! The sender holds a hidden `λ/2`-dimensional subspace `S`. The receiver's
//! hardware prepares the coset state `|S⟩_{x,z}` from the padded public key
//! and returns a tag carrying `(x, z)` sealed under the pad. The sender then
//! publishes three coset checkers as the evaluation key, and a token signs
//! bit 0 by measuring in the computational basis and bit 1 by measuring in
//! the Hadamard basis.
//!
//! Two parts are transparent stand-ins: the pad plays the role of the
//! homomorphic encryption that hides `S` from the receiver, and the checkers
//! play the role of obfuscated membership programs. Both preserve the honest
//! information flow; neither is meant to be cryptographically hiding.

use alloc::sync::Arc;
use alloc::vec::Vec;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_core::{CryptoRng, RngCore};
use spin::Once;

use crate::codec::{DecodeError, Reader, Writer};
use crate::crypt::PadCipher;
use crate::gf2::{
    decode_rows, decode_vector, encode_rows, encode_vector, random_vector, vector_bytes,
    CosetChecker, PairedSubspace, Subspace, MAX_LAMBDA,
};
use crate::qhw::{Basis, Hardware, HwError, TokenHandle, TokenState};

pub const TOKEN_VERSION: u8 = 1;
const TAG_AAD: &[u8] = b"semiq-tag";

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum TokError {
    #[error("malformed token public key")]
    MalformedPk,
    #[error("tag does not decode under the sender's pad")]
    TagDecodeFailure,
    #[error("receiver offset lies in the hidden subspace")]
    XInSubspaceAbort,
    #[error(transparent)]
    Hardware(#[from] HwError),
}

/// Sender secret: the hidden subspace and the pad key.
#[derive(Clone)]
pub struct TokenSecretKey {
    subspace: Subspace,
    pad_key: [u8; 32],
    // built on first use, since most derived keys only ever publish a pk
    sender: Arc<Once<SenderSide>>,
}

// Pad cipher plus the checker bases shared by every evaluation key.
struct SenderSide {
    cipher: PadCipher,
    s0_basis: Arc<[u128]>,
    basis: Arc<[u128]>,
}

impl core::fmt::Debug for TokenSecretKey {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("TokenSecretKey")
            .field("lambda", &self.lambda())
            .finish_non_exhaustive()
    }
}

impl TokenSecretKey {
    pub fn generate<R: RngCore + CryptoRng + ?Sized>(rng: &mut R, lambda: u16) -> Self {
        let subspace = Subspace::sample(rng, lambda);
        let mut pad_key = [0u8; 32];
        rng.fill_bytes(&mut pad_key);
        Self::from_parts(subspace, pad_key)
    }

    pub fn from_parts(subspace: Subspace, pad_key: [u8; 32]) -> Self {
        Self {
            subspace,
            pad_key,
            sender: Arc::new(Once::new()),
        }
    }

    fn sender(&self) -> &SenderSide {
        self.sender.call_once(|| SenderSide {
            cipher: PadCipher::new(&self.pad_key),
            s0_basis: self.subspace.basis()[1..].into(),
            basis: self.subspace.basis().into(),
        })
    }

    pub fn lambda(&self) -> u16 {
        self.subspace.lambda()
    }

    pub fn subspace(&self) -> &Subspace {
        &self.subspace
    }
}

fn pad_stream(pad_key: &[u8; 32]) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::from_seed(*pad_key);
    rng.set_stream(1);
    rng
}

#[derive(Clone)]
struct Unpadded {
    space: Arc<PairedSubspace>,
    cipher: PadCipher,
}

/// Padded basis of `S` plus the pad itself, which only the hardware reads.
#[derive(Clone)]
pub struct TokenPublicKey {
    lambda: u16,
    padded_rows: Vec<u128>,
    pad_ct: [u8; 32],
    // hardware-side memo of the unpadded subspace and its complement
    unpadded: Arc<Once<Option<Unpadded>>>,
}

impl PartialEq for TokenPublicKey {
    fn eq(&self, other: &Self) -> bool {
        (self.lambda, &self.padded_rows, &self.pad_ct)
            == (other.lambda, &other.padded_rows, &other.pad_ct)
    }
}

impl Eq for TokenPublicKey {}

impl core::hash::Hash for TokenPublicKey {
    fn hash<H: core::hash::Hasher>(&self, state: &mut H) {
        (self.lambda, &self.padded_rows, &self.pad_ct).hash(state)
    }
}

impl core::fmt::Debug for TokenPublicKey {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("TokenPublicKey")
            .field("lambda", &self.lambda)
            .finish_non_exhaustive()
    }
}

impl TokenPublicKey {
    pub fn lambda(&self) -> u16 {
        self.lambda
    }

    fn new(lambda: u16, padded_rows: Vec<u128>, pad_ct: [u8; 32]) -> Self {
        Self {
            lambda,
            padded_rows,
            pad_ct,
            unpadded: Arc::new(Once::new()),
        }
    }

    /// Hardware-side unpadding of the basis, with its complement.
    fn unpad(&self) -> Result<&Unpadded, TokError> {
        self.unpadded
            .call_once(|| {
                let mut stream = pad_stream(&self.pad_ct);
                let rows: Vec<u128> = self
                    .padded_rows
                    .iter()
                    .map(|&r| r ^ random_vector(&mut stream, self.lambda))
                    .collect();
                let s = Subspace::from_rref(self.lambda, rows)?;
                Some(Unpadded {
                    space: Arc::new(PairedSubspace::new(s)),
                    cipher: PadCipher::new(&self.pad_ct),
                })
            })
            .as_ref()
            .ok_or(TokError::MalformedPk)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(&mut w);
        w.finish()
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        w.u8(TOKEN_VERSION).u16(self.lambda);
        encode_rows(w, self.lambda, &self.padded_rows);
        w.raw(&self.pad_ct);
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let pk = Self::read(&mut r)?;
        r.finish()?;
        Ok(pk)
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.version(TOKEN_VERSION)?;
        let lambda = read_lambda(r)?;
        let padded_rows = decode_rows(r, lambda)?;
        if padded_rows.len() != usize::from(lambda / 2) {
            return Err(DecodeError::Invalid("token public key rank"));
        }
        let pad_ct = r.array()?;
        Ok(Self::new(lambda, padded_rows, pad_ct))
    }
}

fn read_lambda(r: &mut Reader<'_>) -> Result<u16, DecodeError> {
    let lambda = r.u16()?;
    if lambda < 4 || lambda % 2 != 0 || lambda > MAX_LAMBDA {
        return Err(DecodeError::Invalid("lambda"));
    }
    Ok(lambda)
}

/// The receiver's single message: `(x, z)` sealed under the pad.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenTag {
    lambda: u16,
    sealed: Vec<u8>,
}

impl TokenTag {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(&mut w);
        w.finish()
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        w.u8(TOKEN_VERSION).u16(self.lambda).bytes(&self.sealed);
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let tag = Self::read(&mut r)?;
        r.finish()?;
        Ok(tag)
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.version(TOKEN_VERSION)?;
        let lambda = read_lambda(r)?;
        let sealed = r.bytes()?.to_vec();
        Ok(Self { lambda, sealed })
    }

    /// Raw sealed bytes, exposed so tests and adversaries can tamper with them.
    pub fn sealed_bytes_mut(&mut self) -> &mut Vec<u8> {
        &mut self.sealed
    }
}

fn tag_aad(lambda: u16) -> [u8; 11] {
    let mut aad = [0u8; 11];
    aad[..9].copy_from_slice(TAG_AAD);
    aad[9..].copy_from_slice(&lambda.to_le_bytes());
    aad
}

fn seal_tag<R: RngCore + ?Sized>(
    cipher: &PadCipher,
    lambda: u16,
    x: u128,
    z: u128,
    rng: &mut R,
) -> TokenTag {
    let n = vector_bytes(lambda);
    let mut msg = Vec::with_capacity(2 * n);
    msg.extend_from_slice(&x.to_le_bytes()[..n]);
    msg.extend_from_slice(&z.to_le_bytes()[..n]);
    TokenTag {
        lambda,
        sealed: cipher.seal(&tag_aad(lambda), &msg, rng),
    }
}

fn open_tag(cipher: &PadCipher, lambda: u16, tag: &TokenTag) -> Result<(u128, u128), TokError> {
    if tag.lambda != lambda {
        return Err(TokError::TagDecodeFailure);
    }
    let msg = cipher
        .open(&tag_aad(lambda), &tag.sealed)
        .map_err(|_| TokError::TagDecodeFailure)?;
    let mut r = Reader::new(&msg);
    let parts = (|| -> Result<_, DecodeError> {
        let x = decode_vector(&mut r, lambda)?;
        let z = decode_vector(&mut r, lambda)?;
        Ok((x, z))
    })();
    let (x, z) = parts.map_err(|_| TokError::TagDecodeFailure)?;
    r.finish().map_err(|_| TokError::TagDecodeFailure)?;
    Ok((x, z))
}

/// Sender's reply: membership checkers for `S_0 + x`, `S_0 + w + x` and
/// `S⊥ + z`, where `w` is the first basis row of `S` and `S_0` the rest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalKey {
    lambda: u16,
    checker_a: CosetChecker,
    checker_b: CosetChecker,
    checker_perp: CosetChecker,
}

impl EvalKey {
    pub fn lambda(&self) -> u16 {
        self.lambda
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(&mut w);
        w.finish()
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        w.u8(TOKEN_VERSION).u16(self.lambda);
        // the two computational checkers share `S_0`, written once
        debug_assert!(self.checker_a.same_subspace(&self.checker_b));
        self.checker_a.encode(w);
        self.checker_b.encode_offset(w);
        self.checker_perp.encode(w);
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let ek = Self::read(&mut r)?;
        r.finish()?;
        Ok(ek)
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.version(TOKEN_VERSION)?;
        let lambda = read_lambda(r)?;
        let checker_a = CosetChecker::decode(r, lambda)?;
        let checker_b = checker_a.decode_sibling(r)?;
        Ok(Self {
            lambda,
            checker_a,
            checker_b,
            checker_perp: CosetChecker::decode(r, lambda)?,
        })
    }
}

/// A measured token: one `λ`-bit vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature {
    pub lambda: u16,
    pub value: u128,
}

impl Signature {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(&mut w);
        w.finish()
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        w.u16(self.lambda);
        encode_vector(w, self.lambda, self.value);
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let lambda = r.u16()?;
        if lambda == 0 || lambda > MAX_LAMBDA {
            return Err(DecodeError::Invalid("lambda"));
        }
        let value = decode_vector(&mut r, lambda)?;
        r.finish()?;
        Ok(Self { lambda, value })
    }
}

/// Deterministic in `sk`.
pub fn tok_setup(sk: &TokenSecretKey) -> TokenPublicKey {
    let lambda = sk.lambda();
    let mut stream = pad_stream(&sk.pad_key);
    let padded_rows = sk
        .subspace
        .basis()
        .iter()
        .map(|&r| r ^ random_vector(&mut stream, lambda))
        .collect();
    TokenPublicKey::new(lambda, padded_rows, sk.pad_key)
}

/// Receiver: prepares `|S⟩_{x,z}` in `hw` and returns the handle with its tag.
pub fn tok_rec<R: RngCore + ?Sized>(
    pk: &TokenPublicKey,
    rng: &mut R,
    hw: &Hardware,
) -> Result<(TokenHandle, TokenTag), TokError> {
    let view = pk.unpad()?;
    let x = random_vector(rng, pk.lambda);
    let z = random_vector(rng, pk.lambda);
    let tag = seal_tag(&view.cipher, pk.lambda, x, z, rng);
    let handle = hw.register(TokenState {
        space: view.space.clone(),
        x,
        z,
        p_fail: hw.p_fail(),
    });
    Ok((handle, tag))
}

/// Sender: opens the tag and publishes the evaluation key.
pub fn tok_sen(
    sk: &TokenSecretKey,
    pk: &TokenPublicKey,
    tag: &TokenTag,
) -> Result<EvalKey, TokError> {
    let lambda = sk.lambda();
    if pk.lambda != lambda {
        return Err(TokError::MalformedPk);
    }
    let side = sk.sender();
    let (x, z) = open_tag(&side.cipher, lambda, tag)?;
    if sk.subspace.contains(x) {
        return Err(TokError::XInSubspaceAbort);
    }
    let w = sk.subspace.basis()[0];
    Ok(EvalKey {
        lambda,
        checker_a: CosetChecker::with_basis(lambda, side.s0_basis.clone(), x),
        checker_b: CosetChecker::with_basis(lambda, side.s0_basis.clone(), w ^ x),
        checker_perp: CosetChecker::kernel_with_basis(lambda, side.basis.clone(), z),
    })
}

/// Consumes the token: bit 0 measures computationally, bit 1 in the
/// Hadamard basis.
pub fn tok_sign<R: RngCore + ?Sized>(
    hw: &Hardware,
    h: &TokenHandle,
    b: bool,
    rng: &mut R,
) -> Result<Signature, TokError> {
    let basis = if b {
        Basis::Hadamard
    } else {
        Basis::Computational
    };
    let (lambda, value) = hw.measure_sized(h, basis, rng)?;
    Ok(Signature { lambda, value })
}

/// Classical verification; a signature of the wrong length is rejected.
pub fn tok_cv(ek: &EvalKey, sig: &Signature, b: bool) -> bool {
    if sig.lambda != ek.lambda {
        return false;
    }
    if b {
        ek.checker_perp.accepts(sig.value)
    } else {
        ek.checker_a.accepts(sig.value) || ek.checker_b.accepts(sig.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn instance(r: &mut ChaCha20Rng, lambda: u16) -> (TokenSecretKey, TokenPublicKey) {
        let sk = TokenSecretKey::generate(r, lambda);
        let pk = tok_setup(&sk);
        (sk, pk)
    }

    /// Runs rec and sen, retrying the rare `x ∈ S` abort.
    fn issue(
        r: &mut ChaCha20Rng,
        hw: &Hardware,
        sk: &TokenSecretKey,
        pk: &TokenPublicKey,
    ) -> (TokenHandle, TokenTag, EvalKey) {
        loop {
            let (h, tag) = tok_rec(pk, r, hw).unwrap();
            match tok_sen(sk, pk, &tag) {
                Ok(ek) => return (h, tag, ek),
                Err(TokError::XInSubspaceAbort) => hw.discard(&h).unwrap(),
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn setup_is_deterministic_and_keys_are_distinct() {
        let mut r = rng(1);
        let (sk, pk) = instance(&mut r, 32);
        assert_eq!(tok_setup(&sk), pk);
        assert_eq!(*pk.unpad().unwrap().space.subspace(), sk.subspace);
        assert_eq!(pk.unpad().unwrap().space.subspace().dim(), 16);
        let pks: BTreeSet<Vec<u8>> = (0..1000).map(|_| instance(&mut r, 32).1.encode()).collect();
        assert_eq!(pks.len(), 1000);
    }

    #[test]
    fn rec_registers_honest_state_and_tag_round_trips() {
        let mut r = rng(2);
        let hw = Hardware::noiseless();
        let (sk, pk) = instance(&mut r, 8);
        let (h1, tag1) = tok_rec(&pk, &mut r, &hw).unwrap();
        let (h2, tag2) = tok_rec(&pk, &mut r, &hw).unwrap();
        assert_ne!(h1, h2);
        let st = hw.peek(&h1).unwrap();
        assert_eq!(*st.space.subspace(), sk.subspace);
        assert_eq!(
            open_tag(&sk.sender().cipher, 8, &tag1).unwrap(),
            (st.x, st.z)
        );
        let st2 = hw.peek(&h2).unwrap();
        assert_ne!((st.x, st.z), (st2.x, st2.z));
        assert_eq!(TokenTag::decode(&tag2.encode()).unwrap(), tag2);
    }

    #[test]
    fn malformed_pk_is_rejected() {
        let mut r = rng(3);
        let (_, pk) = instance(&mut r, 8);
        let mut rows = pk.padded_rows.clone();
        rows[1] = rows[0];
        let pk = TokenPublicKey::new(8, rows, pk.pad_ct);
        assert_eq!(
            tok_rec(&pk, &mut r, &Hardware::noiseless()).unwrap_err(),
            TokError::MalformedPk
        );
    }

    #[test]
    fn checkers_cover_the_coset_exhaustively() {
        let mut r = rng(4);
        let hw = Hardware::noiseless();
        let (sk, pk) = instance(&mut r, 8);
        let (h, _, ek) = issue(&mut r, &hw, &sk, &pk);
        let st = hw.peek(&h).unwrap();
        let coset: Vec<u128> = sk.subspace.elements().iter().map(|v| v ^ st.x).collect();
        assert_eq!(coset.len(), 16);
        for &v in &coset {
            assert!(tok_cv(
                &ek,
                &Signature {
                    lambda: 8,
                    value: v
                },
                false
            ));
        }
        // the two checkers split the coset in half
        let a = coset.iter().filter(|&&v| ek.checker_a.accepts(v)).count();
        let b = coset.iter().filter(|&&v| ek.checker_b.accepts(v)).count();
        assert_eq!((a, b), (8, 8));
        // nothing outside S + x passes for bit 0
        let accepted = (0u128..256)
            .filter(|&v| {
                tok_cv(
                    &ek,
                    &Signature {
                        lambda: 8,
                        value: v,
                    },
                    false,
                )
            })
            .count();
        assert_eq!(accepted, 16);
    }

    #[test]
    fn forged_tags_fail_and_x_in_s_aborts() {
        let mut r = rng(5);
        let hw = Hardware::noiseless();
        let (sk, pk) = instance(&mut r, 8);
        let (_, mut tag) = tok_rec(&pk, &mut r, &hw).unwrap();
        tag.sealed_bytes_mut()[14] ^= 1;
        assert_eq!(tok_sen(&sk, &pk, &tag), Err(TokError::TagDecodeFailure));
        let x = sk.subspace.basis()[0];
        let crafted = seal_tag(&sk.sender().cipher, 8, x, 0, &mut r);
        assert_eq!(tok_sen(&sk, &pk, &crafted), Err(TokError::XInSubspaceAbort));
        let (sk2, _) = instance(&mut r, 8);
        let (_, tag) = tok_rec(&pk, &mut r, &hw).unwrap();
        assert_eq!(tok_sen(&sk2, &pk, &tag), Err(TokError::TagDecodeFailure));
    }

    #[test]
    fn noiseless_signatures_verify_for_both_bits() {
        let mut r = rng(6);
        let hw = Hardware::noiseless();
        let (sk, pk) = instance(&mut r, 32);
        for i in 0..1000 {
            let b = i % 2 == 1;
            let (h, _, ek) = issue(&mut r, &hw, &sk, &pk);
            let sig = tok_sign(&hw, &h, b, &mut r).unwrap();
            assert!(tok_cv(&ek, &sig, b));
            assert_eq!(Signature::decode(&sig.encode()).unwrap(), sig);
        }
    }

    #[test]
    fn double_sign_fails() {
        let mut r = rng(7);
        let hw = Hardware::noiseless();
        let (sk, pk) = instance(&mut r, 32);
        let (h, _, _) = issue(&mut r, &hw, &sk, &pk);
        tok_sign(&hw, &h, false, &mut r).unwrap();
        assert_eq!(
            tok_sign(&hw, &h, true, &mut r),
            Err(TokError::Hardware(HwError::AlreadyConsumed))
        );
    }

    #[test]
    fn random_vectors_do_not_verify() {
        let mut r = rng(8);
        let hw = Hardware::noiseless();
        let (sk, pk) = instance(&mut r, 32);
        let (_, _, ek) = issue(&mut r, &hw, &sk, &pk);
        let hits = (0..10_000)
            .filter(|_| {
                let sig = Signature {
                    lambda: 32,
                    value: random_vector(&mut r, 32),
                };
                tok_cv(&ek, &sig, false)
            })
            .count();
        assert_eq!(hits, 0);
        assert!(!tok_cv(
            &ek,
            &Signature {
                lambda: 30,
                value: 0
            },
            false
        ));
    }

    #[test]
    fn hadamard_results_reject_for_bit_zero_when_cosets_are_disjoint() {
        let mut r = rng(9);
        let hw = Hardware::noiseless();
        let mut checked = 0;
        while checked < 20 {
            let (sk, pk) = instance(&mut r, 8);
            let (h, _, ek) = issue(&mut r, &hw, &sk, &pk);
            let st = hw.peek(&h).unwrap();
            let s_x: BTreeSet<u128> = sk.subspace.elements().iter().map(|v| v ^ st.x).collect();
            let perp_z: Vec<u128> = sk
                .subspace
                .perp()
                .elements()
                .iter()
                .map(|v| v ^ st.z)
                .collect();
            if perp_z.iter().any(|v| s_x.contains(v)) {
                hw.discard(&h).unwrap();
                continue;
            }
            let sig = tok_sign(&hw, &h, true, &mut r).unwrap();
            assert!(!tok_cv(&ek, &sig, false));
            assert!(tok_cv(&ek, &sig, true));
            checked += 1;
        }
    }

    #[test]
    fn eval_key_codec() {
        let mut r = rng(10);
        let hw = Hardware::noiseless();
        let (sk, pk) = instance(&mut r, 32);
        let (_, _, ek) = issue(&mut r, &hw, &sk, &pk);
        let enc = ek.encode();
        assert_eq!(EvalKey::decode(&enc).unwrap(), ek);
        assert!(EvalKey::decode(&enc[..enc.len() - 1]).is_err());
        assert_eq!(TokenPublicKey::decode(&pk.encode()).unwrap(), pk);
    }
}
