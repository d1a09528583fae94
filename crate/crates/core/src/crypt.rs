//! Classical primitives: a keyed PRF and an authenticated public-key
//! encryption scheme whose ciphertext integrity stands in for
//! non-malleability.
//!
//! The PRF is HMAC-SHA256. Integer indices are encoded as 8-byte big-endian
//! messages; labeled evaluations use a subkey derived from the label domain so
//! they never collide with an index.
//!
//! Sealed payloads are X25519 ephemeral-static key agreement followed by
//! ChaCha20-Poly1305. Wire form:
//!
//! ```text
//! version (1) || u32 LE len || ephemeral public key || nonce (12) || ciphertext+tag
//! ```

use alloc::vec::Vec;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hmac::{Hmac, Mac};
use rand_core::{CryptoRng, RngCore};
use sha2::Sha256;
use x25519_dalek::{PublicKey, StaticSecret};

use crate::codec::{DecodeError, Reader, Writer};

pub const SEALED_VERSION: u8 = 1;
const NONCE_LEN: usize = 12;
const KEM_LEN: usize = 32;

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum CryptError {
    /// Tampered ciphertext, wrong key, or malformed framing. Callers treat
    /// all of these identically.
    #[error("integrity failure")]
    IntegrityFailure,
    #[error("plaintext must be non-empty")]
    EmptyPlaintext,
}

fn hmac(key: &[u8], parts: &[&[u8]]) -> [u8; 32] {
    let mut mac = <HmacSha256 as Mac>::new_from_slice(key).expect("HMAC accepts any key length");
    for p in parts {
        mac.update(p);
    }
    mac.finalize().into_bytes().into()
}

/// 32-byte PRF key.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PrfKey([u8; 32]);

impl core::fmt::Debug for PrfKey {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str("PrfKey(..)")
    }
}

impl PrfKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn generate<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> Self {
        let mut k = [0u8; 32];
        rng.fill_bytes(&mut k);
        Self(k)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// `HMAC-SHA256(key, be64(index))`.
    pub fn prf(&self, index: u64) -> [u8; 32] {
        hmac(&self.0, &[&index.to_be_bytes()])
    }

    /// PRF over an arbitrary label, domain separated from [`PrfKey::prf`].
    pub fn prf_labeled(&self, label: &[u8]) -> [u8; 32] {
        let sub = hmac(&self.0, &[b"semiq/labeled-prf"]);
        hmac(&sub, &[label])
    }

    /// The key `prf(index)` reinterpreted as a fresh PRF key.
    pub fn derive(&self, index: u64) -> PrfKey {
        PrfKey(self.prf(index))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MasterPublicKey(pub [u8; 32]);

/// Decryption key pair for sealed payloads. Only the oracle holds one.
#[derive(Clone)]
pub struct MasterKeypair {
    secret: StaticSecret,
    public: MasterPublicKey,
}

impl MasterKeypair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        let secret = StaticSecret::from(seed);
        let public = MasterPublicKey(PublicKey::from(&secret).to_bytes());
        Self { secret, public }
    }

    pub fn generate<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed)
    }

    pub fn public(&self) -> MasterPublicKey {
        self.public
    }
}

/// Authenticated public-key ciphertext.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SealedPayload(Vec<u8>);

impl core::fmt::Debug for SealedPayload {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "SealedPayload({} bytes)", self.0.len())
    }
}

impl SealedPayload {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn aead_key(shared: &[u8; 32], eph: &[u8; 32], recipient: &[u8; 32]) -> Key {
    Key::from(hmac(shared, &[b"semiq/seal", eph, recipient]))
}

pub fn pk_encrypt<R: RngCore + CryptoRng + ?Sized>(
    mpk: &MasterPublicKey,
    plaintext: &[u8],
    rng: &mut R,
) -> Result<SealedPayload, CryptError> {
    if plaintext.is_empty() {
        return Err(CryptError::EmptyPlaintext);
    }
    let mut eph_seed = [0u8; 32];
    rng.fill_bytes(&mut eph_seed);
    let eph = StaticSecret::from(eph_seed);
    let eph_pub = PublicKey::from(&eph).to_bytes();
    let shared = eph.diffie_hellman(&PublicKey::from(mpk.0));
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);

    let cipher = ChaCha20Poly1305::new(&aead_key(shared.as_bytes(), &eph_pub, &mpk.0));
    let body = cipher
        .encrypt(
            Nonce::from_slice(&nonce),
            Payload {
                msg: plaintext,
                aad: &[SEALED_VERSION],
            },
        )
        .expect("chacha20poly1305 encryption is infallible for in-range lengths");

    let mut w = Writer::new();
    w.u8(SEALED_VERSION).bytes(&eph_pub).raw(&nonce).raw(&body);
    Ok(SealedPayload(w.finish()))
}

pub fn pk_decrypt(keypair: &MasterKeypair, payload: &SealedPayload) -> Result<Vec<u8>, CryptError> {
    let parse = || -> Result<([u8; 32], [u8; NONCE_LEN], &[u8]), DecodeError> {
        let mut r = Reader::new(payload.as_bytes());
        r.version(SEALED_VERSION)?;
        let kem = r.bytes()?;
        if kem.len() != KEM_LEN {
            return Err(DecodeError::Invalid("kem length"));
        }
        let mut eph = [0u8; 32];
        eph.copy_from_slice(kem);
        let nonce = r.array::<NONCE_LEN>()?;
        let body = r.raw(r.remaining())?;
        Ok((eph, nonce, body))
    };
    let (eph, nonce, body) = parse().map_err(|_| CryptError::IntegrityFailure)?;
    let shared = keypair.secret.diffie_hellman(&PublicKey::from(eph));
    if !shared.was_contributory() {
        return Err(CryptError::IntegrityFailure);
    }
    let cipher = ChaCha20Poly1305::new(&aead_key(shared.as_bytes(), &eph, &keypair.public.0));
    cipher
        .decrypt(
            Nonce::from_slice(&nonce),
            Payload {
                msg: body,
                aad: &[SEALED_VERSION],
            },
        )
        .map_err(|_| CryptError::IntegrityFailure)
}

/// Seals three already-encoded components as one bound plaintext.
pub fn seal_triple<R: RngCore + CryptoRng + ?Sized>(
    mpk: &MasterPublicKey,
    program: &[u8],
    pk: &[u8],
    ek: &[u8],
    rng: &mut R,
) -> Result<SealedPayload, CryptError> {
    let mut w = Writer::new();
    w.bytes(program).bytes(pk).bytes(ek);
    pk_encrypt(mpk, &w.finish(), rng)
}

/// Opened triple `(program, pk, ek)` as raw encodings.
pub fn open_triple(
    keypair: &MasterKeypair,
    payload: &SealedPayload,
) -> Result<(Vec<u8>, Vec<u8>, Vec<u8>), CryptError> {
    let plain = pk_decrypt(keypair, payload)?;
    let mut r = Reader::new(&plain);
    let parts = (|| -> Result<_, DecodeError> {
        let p = r.bytes()?.to_vec();
        let pk = r.bytes()?.to_vec();
        let ek = r.bytes()?.to_vec();
        Ok((p, pk, ek))
    })()
    .map_err(|_| CryptError::IntegrityFailure)?;
    r.finish().map_err(|_| CryptError::IntegrityFailure)?;
    Ok(parts)
}

/// Encrypt-then-MAC for short messages under a 32-byte key, built from a
/// pre-keyed HMAC: the keystream is `HMAC(k, 1 || aad || nonce)` and the tag
/// is the first 16 bytes of `HMAC(k, 2 || aad || nonce || ct)`.
///
/// Wire form: `nonce (16) || ciphertext || tag (16)`. Messages are at most 32
/// bytes. Used for token tags, where an AEAD key schedule per message would
/// dominate the cost of a token.
#[derive(Clone)]
pub(crate) struct PadCipher {
    mac: HmacSha256,
}

const PAD_NONCE: usize = 16;
const PAD_TAG: usize = 16;

impl PadCipher {
    pub fn new(key: &[u8; 32]) -> Self {
        Self {
            mac: <HmacSha256 as Mac>::new_from_slice(key).expect("HMAC accepts any key length"),
        }
    }

    fn keyed(&self, domain: u8, aad: &[u8], parts: &[&[u8]]) -> HmacSha256 {
        let mut m = self.mac.clone();
        m.update(&[domain, aad.len() as u8]);
        m.update(aad);
        for p in parts {
            m.update(p);
        }
        m
    }

    pub fn seal<R: RngCore + ?Sized>(&self, aad: &[u8], msg: &[u8], rng: &mut R) -> Vec<u8> {
        assert!(msg.len() <= 32 && aad.len() <= 255);
        let mut nonce = [0u8; PAD_NONCE];
        rng.fill_bytes(&mut nonce);
        let ks = self.keyed(1, aad, &[&nonce]).finalize().into_bytes();
        let mut out = Vec::with_capacity(PAD_NONCE + msg.len() + PAD_TAG);
        out.extend_from_slice(&nonce);
        out.extend(msg.iter().zip(ks.iter()).map(|(m, k)| m ^ k));
        let tag = self.keyed(2, aad, &[&out]).finalize().into_bytes();
        out.extend_from_slice(&tag[..PAD_TAG]);
        out
    }

    pub fn open(&self, aad: &[u8], sealed: &[u8]) -> Result<Vec<u8>, CryptError> {
        if sealed.len() < PAD_NONCE + PAD_TAG
            || sealed.len() > PAD_NONCE + 32 + PAD_TAG
            || aad.len() > 255
        {
            return Err(CryptError::IntegrityFailure);
        }
        let (body, tag) = sealed.split_at(sealed.len() - PAD_TAG);
        self.keyed(2, aad, &[body])
            .verify_truncated_left(tag)
            .map_err(|_| CryptError::IntegrityFailure)?;
        let (nonce, ct) = body.split_at(PAD_NONCE);
        let ks = self.keyed(1, aad, &[nonce]).finalize().into_bytes();
        Ok(ct.iter().zip(ks.iter()).map(|(c, k)| c ^ k).collect())
    }
}

/// SHA-256 of the concatenated parts.
pub fn sha256(parts: &[&[u8]]) -> [u8; 32] {
    use sha2::Digest;
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn test_key() -> PrfKey {
        let mut k = [0u8; 32];
        for (i, b) in k.iter_mut().enumerate() {
            *b = i as u8;
        }
        PrfKey::from_bytes(k)
    }

    fn hex(bytes: &[u8]) -> alloc::string::String {
        bytes.iter().map(|b| alloc::format!("{b:02x}")).collect()
    }

    #[test]
    fn pad_cipher_round_trip_and_tamper() {
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let c = PadCipher::new(&[9; 32]);
        let sealed = c.seal(b"ctx", b"sixteen byte msg", &mut rng);
        assert_eq!(c.open(b"ctx", &sealed).unwrap(), b"sixteen byte msg");
        assert!(c.open(b"other", &sealed).is_err());
        assert!(PadCipher::new(&[8; 32]).open(b"ctx", &sealed).is_err());
        for i in 0..sealed.len() * 8 {
            let mut t = sealed.clone();
            t[i / 8] ^= 1 << (i % 8);
            assert!(c.open(b"ctx", &t).is_err());
        }
        assert_ne!(
            c.seal(b"ctx", b"m", &mut rng),
            c.seal(b"ctx", b"m", &mut rng)
        );
    }

    #[test]
    fn prf_golden_vectors() {
        // computed with an independent HMAC-SHA256 implementation
        let k = test_key();
        assert_eq!(
            hex(&k.prf(0)),
            "9f0cd9b94097fe4929918d2b8942b34439574261a35dc50163f06c67d4e48899"
        );
        assert_eq!(
            hex(&k.prf(1)),
            "c432e059c378eef7fe2f1181a4050836f51e0856fd74937be81784fa0efa7a1c"
        );
    }

    #[test]
    fn prf_determinism_and_separation() {
        let k = test_key();
        assert_eq!(k.prf(5), k.prf(5));
        assert_ne!(k.prf(0), k.prf(1));
        assert_ne!(k.prf_labeled(&0u64.to_be_bytes()), k.prf(0));
    }

    #[test]
    fn prf_chain_keys_distinct() {
        let k = test_key();
        let keys: BTreeSet<[u8; 32]> = (0..=1000).map(|i| k.prf(i)).collect();
        assert_eq!(keys.len(), 1001);
    }

    #[test]
    fn encrypt_round_trip_1kib() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let kp = MasterKeypair::generate(&mut rng);
        let msg: Vec<u8> = (0..1024).map(|i| (i * 31) as u8).collect();
        let ct = pk_encrypt(&kp.public(), &msg, &mut rng).unwrap();
        assert_eq!(pk_decrypt(&kp, &ct).unwrap(), msg);
        assert_eq!(ct.as_bytes()[0], SEALED_VERSION);
        assert_eq!(&ct.as_bytes()[1..5], &32u32.to_le_bytes());
    }

    #[test]
    fn empty_plaintext_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let kp = MasterKeypair::generate(&mut rng);
        assert_eq!(
            pk_encrypt(&kp.public(), &[], &mut rng),
            Err(CryptError::EmptyPlaintext)
        );
    }

    #[test]
    fn bit_flip_and_wrong_key_fail() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let kp = MasterKeypair::generate(&mut rng);
        let other = MasterKeypair::generate(&mut rng);
        let ct = pk_encrypt(&kp.public(), b"payload", &mut rng).unwrap();
        for bit in 0..ct.len() * 8 {
            let mut bytes = ct.as_bytes().to_vec();
            bytes[bit / 8] ^= 1 << (bit % 8);
            assert_eq!(
                pk_decrypt(&kp, &SealedPayload::from_bytes(bytes)),
                Err(CryptError::IntegrityFailure),
                "bit {bit}"
            );
        }
        assert_eq!(pk_decrypt(&other, &ct), Err(CryptError::IntegrityFailure));
    }

    #[test]
    fn encryption_is_probabilistic() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let kp = MasterKeypair::generate(&mut rng);
        let cts: BTreeSet<Vec<u8>> = (0..1000)
            .map(|_| {
                pk_encrypt(&kp.public(), b"same", &mut rng)
                    .unwrap()
                    .into_bytes()
            })
            .collect();
        assert_eq!(cts.len(), 1000);
    }

    #[test]
    fn triple_round_trip_and_splice() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let kp = MasterKeypair::generate(&mut rng);
        let a = seal_triple(&kp.public(), b"prog", b"pk-a", b"ek-a", &mut rng).unwrap();
        let b = seal_triple(&kp.public(), b"prog", b"pk-a", b"ek-b", &mut rng).unwrap();
        assert_eq!(
            open_triple(&kp, &a).unwrap(),
            (b"prog".to_vec(), b"pk-a".to_vec(), b"ek-a".to_vec())
        );
        // the ek sits at the tail of the plaintext; graft b's tail onto a
        let (ab, bb) = (a.as_bytes(), b.as_bytes());
        let mut spliced = ab[..ab.len() - 20].to_vec();
        spliced.extend_from_slice(&bb[bb.len() - 20..]);
        assert_eq!(
            open_triple(&kp, &SealedPayload::from_bytes(spliced)),
            Err(CryptError::IntegrityFailure)
        );
        let other = MasterKeypair::generate(&mut rng);
        assert_eq!(open_triple(&other, &a), Err(CryptError::IntegrityFailure));
    }
}
