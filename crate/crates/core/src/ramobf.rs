//! RAM-blackbox obfuscation by chaining one-time programs.
//!
//! Round `i` of a chain is a one-time program for the wrapper `P̄_i`. Run by
//! the oracle on `(x, tag_{i+1})`, the wrapper evaluates the inner program on
//! its current RAM and seals the round `i+1` wrapper, carrying the updated
//! RAM, for the token tags the receiver just prepared. Round keys are
//! `sk_i = PRF(sk, i)`, so the oracle rebuilds any round's keys from the chain
//! key sealed inside the wrapper and nothing else.
//!
//! The receiver holds quantum state for one round at a time: round `i+1`
//! tokens are prepared right before round `i` is evaluated.

use alloc::vec::Vec;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_core::{CryptoRng, RngCore};

use crate::bits::BitString;
use crate::codec::{DecodeError, Reader, Writer};
use crate::cotp::{
    discard_all, otp_setup, rec_bundle, sen_bundle, sign_bits, tag_digest, AccessError,
    OracleAccess, OracleAnswer, OracleProgram, OracleQuery, OtpError, PkBundle, SkBundle,
    TagBundle,
};
use crate::crypt::{seal_triple, MasterPublicKey, PrfKey, SealedPayload};
use crate::ftlift::FtToken;
use crate::progvm::{eval_program, Program, RamImage};
use crate::qhw::Hardware;

pub const WRAPPER_VERSION: u8 = 1;
pub const DEFAULT_DIGEST_BITS: u16 = 128;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RamError {
    #[error(transparent)]
    Otp(#[from] OtpError),
    #[error("RAM image has {got} bytes, program expects {expected}")]
    RamLength { expected: usize, got: usize },
    #[error("input has {got} bits, program expects {expected}")]
    InputLength { expected: usize, got: usize },
    #[error("chain parameters out of range")]
    Params,
    #[error("inner program failed")]
    Program,
    #[error("chain broken")]
    Bottom,
    #[error("chain already broken at an earlier round")]
    Dead,
}

impl From<AccessError> for RamError {
    fn from(e: AccessError) -> Self {
        RamError::Otp(e.into())
    }
}

/// Public chain parameters: token security, repetitions per bit, and the
/// number of digest bits binding each round to the next round's tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChainParams {
    pub lambda: u16,
    pub w: u64,
    pub digest_bits: u16,
}

impl Default for ChainParams {
    fn default() -> Self {
        Self {
            lambda: 64,
            w: 1,
            digest_bits: DEFAULT_DIGEST_BITS,
        }
    }
}

impl ChainParams {
    fn validate(&self) -> Result<(), RamError> {
        let lambda_ok = self.lambda >= 4 && self.lambda <= 128 && self.lambda % 2 == 0;
        if !lambda_ok || self.w == 0 || self.w > u64::from(u16::MAX) || self.digest_bits > 256 {
            return Err(RamError::Params);
        }
        Ok(())
    }

    fn write(&self, w: &mut Writer) {
        w.u16(self.lambda).u64(self.w).u16(self.digest_bits);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let p = Self {
            lambda: r.u16()?,
            w: r.u64()?,
            digest_bits: r.u16()?,
        };
        p.validate()
            .map_err(|_| DecodeError::Invalid("chain parameters"))?;
        Ok(p)
    }
}

/// Token keys for one round, derived from `sk_i`.
pub fn round_keys(sk_i: &PrfKey, n: usize, params: &ChainParams) -> SkBundle {
    let mut rng = ChaCha20Rng::from_seed(sk_i.prf_labeled(b"token-keys"));
    SkBundle::generate(&mut rng, n, params.lambda, params.w)
}

/// The wrapper program `P̄` for one round of a chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecursiveWrapper {
    inner: Program,
    chain_key: PrfKey,
    round: u64,
    ram: RamImage,
    params: ChainParams,
    mpk: MasterPublicKey,
}

impl RecursiveWrapper {
    pub fn new(
        inner: Program,
        chain_key: PrfKey,
        ram: RamImage,
        params: ChainParams,
        mpk: MasterPublicKey,
    ) -> Result<Self, RamError> {
        params.validate()?;
        if ram.len() != inner.ram_len() {
            return Err(RamError::RamLength {
                expected: inner.ram_len(),
                got: ram.len(),
            });
        }
        inner.validate().map_err(|_| RamError::Program)?;
        Ok(Self {
            inner,
            chain_key,
            round: 0,
            ram,
            params,
            mpk,
        })
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn ram(&self) -> &RamImage {
        &self.ram
    }

    pub fn inner(&self) -> &Program {
        &self.inner
    }

    pub fn params(&self) -> &ChainParams {
        &self.params
    }

    pub fn digest_bits(&self) -> usize {
        usize::from(self.params.digest_bits)
    }

    pub fn signed_bits(&self) -> usize {
        self.inner.n_input_bits() + self.digest_bits()
    }

    /// `sk_j = PRF(chain key, j)`.
    pub(crate) fn round_secret(&self, j: u64) -> SkBundle {
        round_keys(&self.chain_key.derive(j), self.signed_bits(), &self.params)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(WRAPPER_VERSION)
            .bytes(&self.inner.encode())
            .raw(self.chain_key.as_bytes())
            .u64(self.round)
            .bytes(&self.ram.0);
        self.params.write(&mut w);
        w.raw(&self.mpk.0);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        r.version(WRAPPER_VERSION)?;
        let inner =
            Program::decode(r.bytes()?).map_err(|_| DecodeError::Invalid("inner program"))?;
        let chain_key = PrfKey::from_bytes(r.array()?);
        let round = r.u64()?;
        let ram = RamImage(r.bytes()?.to_vec());
        let params = ChainParams::read(&mut r)?;
        let mpk = MasterPublicKey(r.array()?);
        r.finish()?;
        if ram.len() != inner.ram_len() {
            return Err(DecodeError::Invalid("ram length"));
        }
        Ok(Self {
            inner,
            chain_key,
            round,
            ram,
            params,
            mpk,
        })
    }
}

/// Runs one round inside the oracle: `(y, ct_{i+1}, pk_{i+2})`.
pub fn eval_wrapper<R: RngCore + CryptoRng + ?Sized>(
    wrapper: &RecursiveWrapper,
    x: &BitString,
    next_tags: &TagBundle,
    rng: &mut R,
) -> Result<(BitString, SealedPayload, PkBundle), RamError> {
    let (ram, y) = eval_program(&wrapper.inner, &wrapper.ram, x).map_err(|_| RamError::Program)?;
    let i1 = wrapper.round + 1;
    let sk1 = wrapper.round_secret(i1);
    let pk1 = otp_setup(&sk1);
    let ek1 = sen_bundle(&sk1, &pk1, next_tags)?;
    let next = RecursiveWrapper {
        round: i1,
        ram,
        ..wrapper.clone()
    };
    let ct = seal_triple(
        &wrapper.mpk,
        &OracleProgram::Chain(next).encode(),
        &pk1.encode(),
        &ek1.encode(),
        rng,
    )
    .map_err(OtpError::from)?;
    let pk2 = otp_setup(&wrapper.round_secret(i1 + 1));
    Ok((y, ct, pk2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    SenderToReceiver,
    ReceiverToSender,
    ReceiverToOracle,
    OracleToReceiver,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::SenderToReceiver => "sender->receiver",
            Direction::ReceiverToSender => "receiver->sender",
            Direction::ReceiverToOracle => "receiver->oracle",
            Direction::OracleToReceiver => "oracle->receiver",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageType {
    /// Public chain parameters with `pk_0`, `pk_1`. Published, not a protocol round.
    Announce,
    Tags,
    Sealed,
    Query,
    Answer,
}

impl MessageType {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageType::Announce => "announce",
            MessageType::Tags => "tags",
            MessageType::Sealed => "sealed",
            MessageType::Query => "query",
            MessageType::Answer => "answer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Ok,
    Bottom,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Ok => "ok",
            Outcome::Bottom => "bottom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub round: u64,
    pub direction: Direction,
    pub message_type: MessageType,
    pub byte_length: usize,
    pub outcome: Outcome,
}

/// Append-only log of the classical messages of one chain.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(
        &mut self,
        round: u64,
        direction: Direction,
        message_type: MessageType,
        byte_length: usize,
        outcome: Outcome,
    ) {
        self.entries.push(TranscriptEntry {
            round,
            direction,
            message_type,
            byte_length,
            outcome,
        });
    }

    pub fn count(&self, direction: Direction) -> usize {
        self.entries
            .iter()
            .filter(|e| e.direction == direction)
            .count()
    }
}

/// What the sender publishes before the single setup round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainAnnouncement {
    pub params: ChainParams,
    pub input_bits: u16,
    pub pk0: PkBundle,
    pub pk1: PkBundle,
}

impl ChainAnnouncement {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(WRAPPER_VERSION);
        self.params.write(&mut w);
        w.u16(self.input_bits)
            .bytes(&self.pk0.encode())
            .bytes(&self.pk1.encode());
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        r.version(WRAPPER_VERSION)?;
        let params = ChainParams::read(&mut r)?;
        let input_bits = r.u16()?;
        let pk0 = PkBundle::decode(r.bytes()?)?;
        let pk1 = PkBundle::decode(r.bytes()?)?;
        r.finish()?;
        Ok(Self {
            params,
            input_bits,
            pk0,
            pk1,
        })
    }

    fn signed_bits(&self) -> usize {
        usize::from(self.input_bits) + usize::from(self.params.digest_bits)
    }
}

/// Classical sender. Holds the chain key until its one reply.
pub struct ChainSender {
    wrapper: RecursiveWrapper,
    sk0: SkBundle,
    announcement: ChainAnnouncement,
}

impl core::fmt::Debug for ChainSender {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ChainSender")
            .field("params", &self.wrapper.params)
            .finish_non_exhaustive()
    }
}

impl ChainSender {
    pub fn new<R: RngCore + CryptoRng + ?Sized>(
        inner: Program,
        ram0: RamImage,
        params: ChainParams,
        mpk: MasterPublicKey,
        rng: &mut R,
    ) -> Result<Self, RamError> {
        let input_bits = u16::try_from(inner.n_input_bits()).map_err(|_| RamError::Params)?;
        let wrapper = RecursiveWrapper::new(inner, PrfKey::generate(rng), ram0, params, mpk)?;
        if wrapper.signed_bits() > usize::from(u16::MAX) {
            return Err(RamError::Params);
        }
        let sk0 = wrapper.round_secret(0);
        let announcement = ChainAnnouncement {
            params,
            input_bits,
            pk0: otp_setup(&sk0),
            pk1: otp_setup(&wrapper.round_secret(1)),
        };
        Ok(Self {
            wrapper,
            sk0,
            announcement,
        })
    }

    pub fn announcement(&self) -> &ChainAnnouncement {
        &self.announcement
    }

    /// Seals the round 0 wrapper for the receiver's tags. Consumes the
    /// sender: nothing about the chain survives on its side.
    pub fn reply<R: RngCore + CryptoRng + ?Sized>(
        self,
        tags0: &TagBundle,
        rng: &mut R,
    ) -> Result<SealedPayload, RamError> {
        let ek0 = sen_bundle(&self.sk0, &self.announcement.pk0, tags0)?;
        let mpk = self.wrapper.mpk;
        let program = OracleProgram::Chain(self.wrapper).encode();
        Ok(seal_triple(
            &mpk,
            &program,
            &self.announcement.pk0.encode(),
            &ek0.encode(),
            rng,
        )
        .map_err(OtpError::from)?)
    }
}

/// Receiver between the setup message and the sender's reply.
#[derive(Debug)]
pub struct PendingChain {
    tokens: Vec<FtToken>,
    next_pk: PkBundle,
    input_bits: usize,
    digest_bits: usize,
}

impl PendingChain {
    /// Prepares round 0 tokens; the returned tags are the only message.
    pub fn start<R: RngCore + ?Sized>(
        announcement: &ChainAnnouncement,
        hw: &Hardware,
        rng: &mut R,
    ) -> Result<(Self, TagBundle), RamError> {
        if announcement.pk0.len() != announcement.signed_bits()
            || announcement.pk1.len() != announcement.signed_bits()
        {
            return Err(OtpError::TagCount {
                expected: announcement.signed_bits(),
                got: announcement.pk0.len(),
            }
            .into());
        }
        let (tokens, tags) = rec_bundle(&announcement.pk0, hw, rng)?;
        let pending = Self {
            tokens,
            next_pk: announcement.pk1.clone(),
            input_bits: usize::from(announcement.input_bits),
            digest_bits: usize::from(announcement.params.digest_bits),
        };
        Ok((pending, tags))
    }

    pub fn finish(self, ct0: SealedPayload) -> ChainReceiverState {
        ChainReceiverState {
            ct: ct0,
            tokens: self.tokens,
            next_pk: self.next_pk,
            round: 0,
            input_bits: self.input_bits,
            digest_bits: self.digest_bits,
            broken: false,
        }
    }
}

/// Receiver's hold on a live chain: round `i` ciphertext and tokens, plus
/// the classical key material for round `i+1`.
///
/// Cloning copies only classical data and handles; the tokens behind the
/// handles can still be used once.
#[derive(Debug, Clone)]
pub struct ChainReceiverState {
    ct: SealedPayload,
    tokens: Vec<FtToken>,
    next_pk: PkBundle,
    round: u64,
    input_bits: usize,
    digest_bits: usize,
    broken: bool,
}

impl ChainReceiverState {
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn is_broken(&self) -> bool {
        self.broken
    }

    pub fn input_bits(&self) -> usize {
        self.input_bits
    }

    /// Bits signed per round: input plus tag digest.
    pub fn signed_bits(&self) -> usize {
        self.input_bits + self.digest_bits
    }

    pub fn tokens(&self) -> &[FtToken] {
        &self.tokens
    }

    pub fn current_ct(&self) -> &SealedPayload {
        &self.ct
    }

    pub fn next_pk(&self) -> &PkBundle {
        &self.next_pk
    }

    /// Live underlying handles held by this chain.
    pub fn live_handles(&self, hw: &Hardware) -> usize {
        self.tokens
            .iter()
            .flat_map(|t| &t.0)
            .filter(|h| hw.is_live(h))
            .count()
    }

    /// Tags for the next round, then the query bytes; exposed for strategies
    /// that drive the oracle by hand.
    pub fn prepare_next<R: RngCore + ?Sized>(
        &self,
        hw: &Hardware,
        rng: &mut R,
    ) -> Result<(Vec<FtToken>, TagBundle), RamError> {
        Ok(rec_bundle(&self.next_pk, hw, rng)?)
    }

    /// Signs `x || digest(next_tags)` with this round's tokens and builds
    /// the oracle query. Consumes this round's tokens.
    pub fn build_query<R: RngCore + ?Sized>(
        &self,
        x: &BitString,
        next_tags: &TagBundle,
        hw: &Hardware,
        rng: &mut R,
    ) -> Result<OracleQuery, RamError> {
        let signed = x.concat(&tag_digest(next_tags, self.digest_bits));
        let sigs = sign_bits(&self.tokens, &signed, hw, rng)?;
        Ok(OracleQuery {
            x: x.clone(),
            ct: self.ct.clone(),
            sigs,
            next_tags: next_tags.clone(),
        })
    }

    /// Moves to round `i+1` after a successful answer.
    pub fn advance(&mut self, tokens: Vec<FtToken>, ct: SealedPayload, pk_after_next: PkBundle) {
        self.tokens = tokens;
        self.ct = ct;
        self.next_pk = pk_after_next;
        self.round += 1;
    }
}

/// Single-round setup run in process: announcement, tags, sealed reply.
pub fn ro_send<R: RngCore + CryptoRng + ?Sized>(
    p: Program,
    ram0: RamImage,
    params: ChainParams,
    mpk: MasterPublicKey,
    hw: &Hardware,
    rng: &mut R,
    log: Option<&mut Transcript>,
) -> Result<ChainReceiverState, RamError> {
    let sender = ChainSender::new(p, ram0, params, mpk, rng)?;
    let (pending, tags) = PendingChain::start(sender.announcement(), hw, rng)?;
    let announce_len = log.as_ref().map(|_| sender.announcement().encode().len());
    let ct = match sender.reply(&tags, rng) {
        Ok(ct) => ct,
        Err(e) => {
            discard_all(hw, &pending.tokens);
            return Err(e);
        }
    };
    if let (Some(log), Some(announce_len)) = (log, announce_len) {
        log.push(
            0,
            Direction::SenderToReceiver,
            MessageType::Announce,
            announce_len,
            Outcome::Ok,
        );
        log.push(
            0,
            Direction::ReceiverToSender,
            MessageType::Tags,
            tags.encode().len(),
            Outcome::Ok,
        );
        log.push(
            0,
            Direction::SenderToReceiver,
            MessageType::Sealed,
            ct.len(),
            Outcome::Ok,
        );
    }
    Ok(pending.finish(ct))
}

/// Evaluates round `i` on `x`. Any `⊥` breaks the chain for good.
pub fn ro_eval<R: RngCore + ?Sized>(
    state: &mut ChainReceiverState,
    x: &BitString,
    oracle: &dyn OracleAccess,
    hw: &Hardware,
    rng: &mut R,
) -> Result<BitString, RamError> {
    ro_eval_logged(state, x, oracle, hw, rng, None)
}

pub fn ro_eval_logged<R: RngCore + ?Sized>(
    state: &mut ChainReceiverState,
    x: &BitString,
    oracle: &dyn OracleAccess,
    hw: &Hardware,
    rng: &mut R,
    mut log: Option<&mut Transcript>,
) -> Result<BitString, RamError> {
    if state.broken {
        return Err(RamError::Dead);
    }
    if x.len() != state.input_bits {
        return Err(RamError::InputLength {
            expected: state.input_bits,
            got: x.len(),
        });
    }
    state.broken = true;
    let round = state.round;
    let (tokens, tags) = state.prepare_next(hw, rng)?;
    let query = match state.build_query(x, &tags, hw, rng) {
        Ok(q) => q,
        Err(e) => {
            discard_all(hw, &tokens);
            return Err(match e {
                RamError::Otp(OtpError::Token(_)) => RamError::Bottom,
                e => e,
            });
        }
    };
    let answer = oracle.query(&query);
    if let Some(log) = log.as_deref_mut() {
        log.push(
            round,
            Direction::ReceiverToOracle,
            MessageType::Query,
            query.encode().len(),
            Outcome::Ok,
        );
    }
    let answer = match answer {
        Ok(a) => a,
        Err(e) => {
            discard_all(hw, &tokens);
            return Err(e.into());
        }
    };
    if let Some(log) = log {
        let outcome = if answer.is_bottom() {
            Outcome::Bottom
        } else {
            Outcome::Ok
        };
        log.push(
            round,
            Direction::OracleToReceiver,
            MessageType::Answer,
            answer.encode().len(),
            outcome,
        );
    }
    match answer {
        OracleAnswer::Chain {
            y,
            ct_next,
            pk_after_next,
        } => {
            state.advance(tokens, ct_next, pk_after_next);
            state.broken = false;
            Ok(y)
        }
        _ => {
            discard_all(hw, &tokens);
            Err(RamError::Bottom)
        }
    }
}
