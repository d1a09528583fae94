//! Semi-quantum one-time programs behind a stateless classical oracle.
//!
//! The sender seals `[P, pk, ek]` under the oracle's public key. The receiver
//! holds one fault-tolerant token per input bit and evaluates by signing each
//! bit of its input and handing the signatures to the oracle, which checks
//! every signature against the sealed `ek` before running `P`.
//!
//! The oracle keeps no state between queries. Randomness it needs (sealing
//! the next link of a RAM chain) is derived from the query bytes, so an
//! identical query always receives an identical answer.

use alloc::vec::Vec;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_core::{CryptoRng, RngCore};

use crate::bits::BitString;
use crate::codec::{DecodeError, Reader, Writer};
use crate::cqtok::TokError;
use crate::crypt::{
    open_triple, seal_triple, sha256, CryptError, MasterKeypair, MasterPublicKey, PrfKey,
    SealedPayload,
};
use crate::ftlift::{
    ft_cv, ft_discard, ft_rec, ft_sen, ft_setup, ft_sign, FtEvalKey, FtPublicKey, FtSecretKey,
    FtSignature, FtTag, FtToken,
};
use crate::progvm::{eval_program, Program, RamImage};
use crate::qhw::Hardware;
use crate::ramobf::{eval_wrapper, RecursiveWrapper};

pub const QUERY_VERSION: u8 = 1;
const PROGRAM_PLAIN: u8 = 0;
const PROGRAM_CHAIN: u8 = 1;
const ANSWER_BOTTOM: u8 = 0;
const ANSWER_OUTPUT: u8 = 1;
const ANSWER_CHAIN: u8 = 2;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OtpError {
    #[error(transparent)]
    Token(#[from] TokError),
    #[error("tag bundle has {got} entries, program signs {expected} bits")]
    TagCount { expected: usize, got: usize },
    #[error(transparent)]
    Crypt(#[from] CryptError),
    #[error("one-time program already evaluated")]
    AlreadyEvaluated,
    #[error("sender reply not received yet")]
    NotReady,
    #[error("input has {got} bits, program expects {expected}")]
    InputLength { expected: usize, got: usize },
    #[error("oracle returned bottom")]
    Bottom,
    #[error(transparent)]
    Access(#[from] AccessError),
}

/// Failure to reach the oracle at all, as opposed to a `⊥` answer.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AccessError {
    #[error("oracle unreachable: {0}")]
    Unreachable(alloc::string::String),
    #[error("malformed oracle answer")]
    MalformedAnswer,
}

macro_rules! bundle {
    ($(#[$m:meta])* $name:ident, $item:ident) => {
        $(#[$m])*
        #[derive(Debug, Clone, PartialEq, Eq)]
        pub struct $name(pub Vec<$item>);

        impl $name {
            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            /// `u16` count, then length-prefixed entries.
            pub fn encode(&self) -> Vec<u8> {
                let mut w = Writer::new();
                self.write(&mut w);
                w.finish()
            }

            pub fn write(&self, w: &mut Writer) {
                w.u16(u16::try_from(self.0.len()).expect("at most 65535 entries"));
                for it in &self.0 {
                    w.nested(|w| it.write(w));
                }
            }

            /// Entry count of an encoding, checking its framing only.
            pub fn count(bytes: &[u8]) -> Result<usize, DecodeError> {
                let mut r = Reader::new(bytes);
                let n = r.u16()?;
                for _ in 0..n {
                    r.bytes()?;
                }
                r.finish()?;
                Ok(usize::from(n))
            }

            pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
                let mut r = Reader::new(bytes);
                let v = Self::read(&mut r)?;
                r.finish()?;
                Ok(v)
            }

            pub fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
                let n = r.u16()?;
                (0..n).map(|_| $item::decode(r.bytes()?)).collect::<Result<_, _>>().map(Self)
            }
        }
    };
}

bundle!(
    /// One fault-tolerant public key per signed input bit.
    PkBundle,
    FtPublicKey
);
bundle!(
    /// One fault-tolerant evaluation key per signed input bit.
    EkBundle,
    FtEvalKey
);
bundle!(
    /// The receiver's message `z = (z_1, ..., z_n)`.
    TagBundle,
    FtTag
);
bundle!(SigBundle, FtSignature);

/// Sender secret: one fault-tolerant key per signed input bit.
#[derive(Debug, Clone)]
pub struct SkBundle(pub Vec<FtSecretKey>);

impl SkBundle {
    pub fn generate<R: RngCore + CryptoRng + ?Sized>(
        rng: &mut R,
        n: usize,
        lambda: u16,
        w: u64,
    ) -> Self {
        Self(
            (0..n)
                .map(|_| FtSecretKey::generate(rng, lambda, w))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// What the oracle runs: a plain program or a link of a RAM chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleProgram {
    Plain(Program),
    Chain(RecursiveWrapper),
}

impl OracleProgram {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            OracleProgram::Plain(p) => w.u8(PROGRAM_PLAIN).raw(&p.encode()),
            OracleProgram::Chain(c) => w.u8(PROGRAM_CHAIN).raw(&c.encode()),
        };
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let (&kind, rest) = bytes.split_first().ok_or(DecodeError::Truncated)?;
        match kind {
            PROGRAM_PLAIN => Program::decode(rest)
                .map(OracleProgram::Plain)
                .map_err(|_| DecodeError::Invalid("program")),
            PROGRAM_CHAIN => RecursiveWrapper::decode(rest).map(OracleProgram::Chain),
            _ => Err(DecodeError::Invalid("oracle program kind")),
        }
    }

    /// Bits the receiver signs: the program input, plus the tag digest for
    /// chain links.
    pub fn signed_bits(&self) -> usize {
        match self {
            OracleProgram::Plain(p) => p.n_input_bits(),
            OracleProgram::Chain(c) => c.signed_bits(),
        }
    }
}

/// First `bits` bits of SHA-256 over the encoded tag bundle, MSB first.
///
/// Chain links sign `x || digest(next tags)` so the oracle hands out the next
/// link only for the tags the receiver committed to when signing.
pub fn tag_digest(tags: &TagBundle, bits: usize) -> BitString {
    assert!(bits <= 256);
    BitString::from_bytes(&sha256(&[b"semiq/tag-digest", &tags.encode()])).slice(0, bits)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleQuery {
    pub x: BitString,
    pub ct: SealedPayload,
    pub sigs: SigBundle,
    /// Round `i+1` tags when querying a chain link; empty otherwise.
    pub next_tags: TagBundle,
}

impl OracleQuery {
    /// `version || u16 n || packed x || lp ct || sigs || next tags`, where
    /// both bundles are a `u16` count followed by length-prefixed entries.
    pub fn encode(&self) -> Vec<u8> {
        let (head, tail) = self.framing();
        let mut w = Writer::new();
        w.raw(&head).raw(self.ct.as_bytes()).raw(&tail);
        w.finish()
    }

    /// SHA-256 of the encoding, without copying the ciphertext.
    pub fn digest(&self) -> [u8; 32] {
        let (head, tail) = self.framing();
        sha256(&[&head, self.ct.as_bytes(), &tail])
    }

    // everything before and after the ciphertext bytes
    fn framing(&self) -> (Vec<u8>, Vec<u8>) {
        let mut head = Writer::new();
        head.u8(QUERY_VERSION)
            .u16(u16::try_from(self.x.len()).expect("input fits u16"))
            .raw(&self.x.pack())
            .u32(u32::try_from(self.ct.len()).expect("ciphertext exceeds u32 length prefix"));
        let mut tail = Writer::new();
        self.sigs.write(&mut tail);
        self.next_tags.write(&mut tail);
        (head.finish(), tail.finish())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        r.version(QUERY_VERSION)?;
        let n = usize::from(r.u16()?);
        let x = BitString::unpack(r.raw(n.div_ceil(8))?, n)
            .ok_or(DecodeError::Invalid("input padding"))?;
        let ct = SealedPayload::from_bytes(r.bytes()?.to_vec());
        let sigs = SigBundle::read(&mut r)?;
        let next_tags = TagBundle::read(&mut r)?;
        r.finish()?;
        Ok(Self {
            x,
            ct,
            sigs,
            next_tags,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleAnswer {
    Bottom,
    Output(BitString),
    Chain {
        y: BitString,
        ct_next: SealedPayload,
        pk_after_next: PkBundle,
    },
}

impl OracleAnswer {
    pub fn is_bottom(&self) -> bool {
        matches!(self, OracleAnswer::Bottom)
    }

    fn write_bits(w: &mut Writer, y: &BitString) {
        w.u16(u16::try_from(y.len()).expect("output fits u16"))
            .raw(&y.pack());
    }

    fn read_bits(r: &mut Reader<'_>) -> Result<BitString, DecodeError> {
        let m = usize::from(r.u16()?);
        BitString::unpack(r.raw(m.div_ceil(8))?, m).ok_or(DecodeError::Invalid("output padding"))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(QUERY_VERSION);
        match self {
            OracleAnswer::Bottom => {
                w.u8(ANSWER_BOTTOM);
            }
            OracleAnswer::Output(y) => {
                w.u8(ANSWER_OUTPUT);
                Self::write_bits(&mut w, y);
            }
            OracleAnswer::Chain {
                y,
                ct_next,
                pk_after_next,
            } => {
                w.u8(ANSWER_CHAIN);
                Self::write_bits(&mut w, y);
                w.bytes(ct_next.as_bytes()).bytes(&pk_after_next.encode());
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        r.version(QUERY_VERSION)?;
        let answer = match r.u8()? {
            ANSWER_BOTTOM => OracleAnswer::Bottom,
            ANSWER_OUTPUT => OracleAnswer::Output(Self::read_bits(&mut r)?),
            ANSWER_CHAIN => {
                let y = Self::read_bits(&mut r)?;
                let ct_next = SealedPayload::from_bytes(r.bytes()?.to_vec());
                let pk_after_next = PkBundle::decode(r.bytes()?)?;
                OracleAnswer::Chain {
                    y,
                    ct_next,
                    pk_after_next,
                }
            }
            _ => return Err(DecodeError::Invalid("answer kind")),
        };
        r.finish()?;
        Ok(answer)
    }
}

/// Anything that can answer oracle queries: the in-process oracle or a
/// remote connection to one.
pub trait OracleAccess {
    fn query(&self, q: &OracleQuery) -> Result<OracleAnswer, AccessError>;
}

/// The global oracle. Holds the master secret and nothing else that changes.
pub struct Oracle {
    keypair: MasterKeypair,
    derand: PrfKey,
}

impl core::fmt::Debug for Oracle {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Oracle")
            .field("mpk", &self.keypair.public())
            .finish_non_exhaustive()
    }
}

impl Oracle {
    pub fn mpk(&self) -> MasterPublicKey {
        self.keypair.public()
    }

    /// Answers a query. Every failure cause yields the same `⊥`.
    pub fn answer(&self, q: &OracleQuery) -> OracleAnswer {
        self.try_answer(q).unwrap_or(OracleAnswer::Bottom)
    }

    /// Wire-level entry point used by transports.
    pub fn answer_bytes(&self, query: &[u8]) -> Vec<u8> {
        match OracleQuery::decode(query) {
            Ok(q) => self.answer(&q),
            Err(_) => OracleAnswer::Bottom,
        }
        .encode()
    }

    fn try_answer(&self, q: &OracleQuery) -> Option<OracleAnswer> {
        let (program, pk, ek) = open_triple(&self.keypair, &q.ct).ok()?;
        let program = OracleProgram::decode(&program).ok()?;
        // the oracle never reads the keys themselves, only their number
        let pk_len = PkBundle::count(&pk).ok()?;
        let ek = EkBundle::decode(&ek).ok()?;
        let n = program.signed_bits();
        if ek.len() != n || pk_len != n || q.sigs.len() != n {
            return None;
        }
        let signed = match &program {
            OracleProgram::Plain(_) => {
                if !q.next_tags.is_empty() {
                    return None;
                }
                q.x.clone()
            }
            OracleProgram::Chain(c) => q.x.concat(&tag_digest(&q.next_tags, c.digest_bits())),
        };
        if signed.len() != n {
            return None;
        }
        let all_valid =
            ek.0.iter()
                .zip(&q.sigs.0)
                .zip(signed.iter())
                .all(|((k, s), b)| ft_cv(k, s, b));
        if !all_valid {
            return None;
        }
        match program {
            OracleProgram::Plain(p) => {
                let (_, y) = eval_program(&p, &RamImage::zeroed(p.ram_len()), &q.x).ok()?;
                Some(OracleAnswer::Output(y))
            }
            OracleProgram::Chain(wrapper) => {
                let mut rng = self.query_rng(q);
                let (y, ct_next, pk_after_next) =
                    eval_wrapper(&wrapper, &q.x, &q.next_tags, &mut rng).ok()?;
                Some(OracleAnswer::Chain {
                    y,
                    ct_next,
                    pk_after_next,
                })
            }
        }
    }

    #[cfg(test)]
    pub(crate) fn keypair(&self) -> &MasterKeypair {
        &self.keypair
    }

    fn query_rng(&self, q: &OracleQuery) -> ChaCha20Rng {
        let digest = q.digest();
        ChaCha20Rng::from_seed(self.derand.prf_labeled(&digest))
    }
}

impl OracleAccess for Oracle {
    fn query(&self, q: &OracleQuery) -> Result<OracleAnswer, AccessError> {
        Ok(self.answer(q))
    }
}

/// Freely copyable public half of the global setup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AuxPublic {
    pub mpk: MasterPublicKey,
}

impl AuxPublic {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(QUERY_VERSION).raw(&self.mpk.0);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        r.version(QUERY_VERSION)?;
        let mpk = MasterPublicKey(r.array()?);
        r.finish()?;
        Ok(Self { mpk })
    }
}

#[derive(Debug)]
pub struct GlobalSetup {
    pub oracle: Oracle,
    pub aux: AuxPublic,
}

impl GlobalSetup {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        let root = PrfKey::from_bytes(seed);
        let keypair = MasterKeypair::from_seed(root.prf_labeled(b"master-keypair"));
        let derand = root.derive(0);
        let aux = AuxPublic {
            mpk: keypair.public(),
        };
        Self {
            oracle: Oracle { keypair, derand },
            aux,
        }
    }

    pub fn generate<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed)
    }

    pub fn mpk(&self) -> MasterPublicKey {
        self.aux.mpk
    }

    #[cfg(test)]
    pub(crate) fn oracle_keypair_for_tests(&self) -> &MasterKeypair {
        self.oracle.keypair()
    }
}

pub fn global_setup<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> GlobalSetup {
    GlobalSetup::generate(rng)
}

/// Deterministic in `sk`.
pub fn otp_setup(sk: &SkBundle) -> PkBundle {
    PkBundle(sk.0.iter().map(ft_setup).collect())
}

/// Receiver half of a one-time program.
#[derive(Debug, Clone)]
pub struct OtpReceiverState {
    tokens: Vec<FtToken>,
    pk: PkBundle,
    ct: Option<SealedPayload>,
    used: bool,
}

impl OtpReceiverState {
    /// Stores the sender's reply.
    pub fn receive(&mut self, ct: SealedPayload) {
        self.ct = Some(ct);
    }

    pub fn ct(&self) -> Option<&SealedPayload> {
        self.ct.as_ref()
    }

    pub fn pk(&self) -> &PkBundle {
        &self.pk
    }

    pub fn tokens(&self) -> &[FtToken] {
        &self.tokens
    }

    pub fn n(&self) -> usize {
        self.tokens.len()
    }
}

/// Receiver's single message: prepares one fault-tolerant token per bit.
pub fn otp_gen_receiver_msg<R: RngCore + ?Sized>(
    pk: &PkBundle,
    hw: &Hardware,
    rng: &mut R,
) -> Result<(OtpReceiverState, TagBundle), OtpError> {
    let (tokens, tags) = rec_bundle(pk, hw, rng)?;
    let state = OtpReceiverState {
        tokens,
        pk: pk.clone(),
        ct: None,
        used: false,
    };
    Ok((state, tags))
}

/// Prepares tokens for every entry of `pk`; on error nothing stays live.
pub(crate) fn rec_bundle<R: RngCore + ?Sized>(
    pk: &PkBundle,
    hw: &Hardware,
    rng: &mut R,
) -> Result<(Vec<FtToken>, TagBundle), OtpError> {
    let mut tokens = Vec::with_capacity(pk.len());
    let mut tags = Vec::with_capacity(pk.len());
    for p in &pk.0 {
        match ft_rec(p, rng, hw) {
            Ok((t, z)) => {
                tokens.push(t);
                tags.push(z);
            }
            Err(e) => {
                discard_all(hw, &tokens);
                return Err(e.into());
            }
        }
    }
    Ok((tokens, TagBundle(tags)))
}

pub(crate) fn discard_all(hw: &Hardware, tokens: &[FtToken]) {
    for t in tokens {
        let _ = ft_discard(hw, t);
    }
}

/// Runs the token sender on every tag bundle entry.
pub fn sen_bundle(sk: &SkBundle, pk: &PkBundle, z: &TagBundle) -> Result<EkBundle, OtpError> {
    if z.len() != sk.len() || pk.len() != sk.len() {
        return Err(OtpError::TagCount {
            expected: sk.len(),
            got: z.len(),
        });
    }
    sk.0.iter()
        .zip(&pk.0)
        .zip(&z.0)
        .map(|((s, p), t)| ft_sen(s, p, t).map_err(OtpError::from))
        .collect::<Result<Vec<_>, _>>()
        .map(EkBundle)
}

/// Sender's reply: `ct = Enc(mpk, [P, pk, ek])`.
pub fn otp_gen_sender_reply<R: RngCore + CryptoRng + ?Sized>(
    p: &OracleProgram,
    sk: &SkBundle,
    pk: &PkBundle,
    z: &TagBundle,
    mpk: &MasterPublicKey,
    rng: &mut R,
) -> Result<SealedPayload, OtpError> {
    let n = p.signed_bits();
    if z.len() != n || sk.len() != n {
        return Err(OtpError::TagCount {
            expected: n,
            got: z.len(),
        });
    }
    let ek = sen_bundle(sk, pk, z)?;
    Ok(seal_triple(
        mpk,
        &p.encode(),
        &pk.encode(),
        &ek.encode(),
        rng,
    )?)
}

/// Signs every bit of `bits` with the matching token. Every token is
/// consumed; if any was already used the whole evaluation is void.
pub fn sign_bits<R: RngCore + ?Sized>(
    tokens: &[FtToken],
    bits: &BitString,
    hw: &Hardware,
    rng: &mut R,
) -> Result<SigBundle, OtpError> {
    let mut sigs = Vec::with_capacity(tokens.len());
    let mut failure = None;
    for (t, b) in tokens.iter().zip(bits.iter()) {
        match ft_sign(hw, t, b, rng) {
            Ok(s) => sigs.push(s),
            Err(e) => failure = failure.or(Some(e)),
        }
    }
    for t in tokens.iter().skip(bits.len()) {
        let _ = ft_discard(hw, t);
    }
    match failure {
        None => Ok(SigBundle(sigs)),
        Some(e) => Err(e.into()),
    }
}

/// Evaluates once. Tokens are consumed whatever the outcome.
pub fn otp_eval<R: RngCore + ?Sized>(
    state: &mut OtpReceiverState,
    x: &BitString,
    oracle: &dyn OracleAccess,
    hw: &Hardware,
    rng: &mut R,
) -> Result<BitString, OtpError> {
    if state.used {
        return Err(OtpError::AlreadyEvaluated);
    }
    let ct = state.ct.clone().ok_or(OtpError::NotReady)?;
    if x.len() != state.tokens.len() {
        return Err(OtpError::InputLength {
            expected: state.tokens.len(),
            got: x.len(),
        });
    }
    state.used = true;
    let sigs = sign_bits(&state.tokens, x, hw, rng)?;
    let q = OracleQuery {
        x: x.clone(),
        ct,
        sigs,
        next_tags: TagBundle(Vec::new()),
    };
    match oracle.query(&q)? {
        OracleAnswer::Output(y) => Ok(y),
        _ => Err(OtpError::Bottom),
    }
}
