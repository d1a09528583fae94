//! Fault-tolerant tokens: `w` independent copies, majority verification.
//!
//! `w` is the smallest odd count whose exact binomial failure tail meets the
//! target, computed in log space. The Hoeffding bound `exp(-2wδ²)` bounds the
//! search from above and doubles as a sanity check.

use alloc::vec::Vec;

use rand_core::{CryptoRng, RngCore};

use crate::codec::{DecodeError, Reader, Writer};
use crate::cqtok::{
    tok_cv, tok_rec, tok_sen, tok_setup, tok_sign, EvalKey, Signature, TokError, TokenPublicKey,
    TokenSecretKey, TokenTag,
};
use crate::qhw::{Hardware, HwError, TokenHandle};

/// `Pr[Bin(n, p) <= k]`.
pub fn binomial_cdf(n: u64, p: f64, k: u64) -> f64 {
    if k >= n {
        return 1.0;
    }
    if p <= 0.0 {
        return 1.0;
    }
    if p >= 1.0 {
        return 0.0;
    }
    let (lp, lq) = (libm::log(p), libm::log1p(-p));
    let ln_n1 = libm::lgamma(n as f64 + 1.0);
    let terms = (0..=k).map(|i| {
        let i_f = i as f64;
        ln_n1 - libm::lgamma(i_f + 1.0) - libm::lgamma((n - i) as f64 + 1.0)
            + i_f * lp
            + (n - i) as f64 * lq
    });
    let logs: Vec<f64> = terms.collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|&l| libm::exp(l - max)).sum();
    (libm::exp(max) * sum).min(1.0)
}

/// Probability that a majority of `w` copies, each correct with
/// probability `1/2 + δ`, fails: `Pr[Bin(w, 1/2 + δ) <= ⌊w/2⌋]`.
pub fn majority_failure(w: u64, delta: f64) -> f64 {
    binomial_cdf(w, 0.5 + delta, w / 2)
}

/// Hoeffding upper bound on [`majority_failure`].
pub fn hoeffding_bound(w: u64, delta: f64) -> f64 {
    libm::exp(-2.0 * w as f64 * delta * delta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FtParams {
    pub w: u64,
    pub delta: f64,
    pub eps_tok: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum ParamError {
    #[error("delta must lie in (0, 1/2], got {0}")]
    Delta(f64),
    #[error("epsilon must lie in (0, 1), got {0}")]
    Epsilon(f64),
}

impl FtParams {
    /// Minimal odd `w` with `majority_failure(w, δ) <= ε`.
    pub fn calibrate(delta: f64, eps_tok: f64) -> Result<Self, ParamError> {
        if !(delta > 0.0 && delta <= 0.5) {
            return Err(ParamError::Delta(delta));
        }
        if !(eps_tok > 0.0 && eps_tok < 1.0) {
            return Err(ParamError::Epsilon(eps_tok));
        }
        // odd w = 2j + 1; Hoeffding guarantees j_hi is feasible
        let hoeffding_w = libm::ceil(libm::log(1.0 / eps_tok) / (2.0 * delta * delta)) as u64;
        let mut hi = hoeffding_w / 2 + 1;
        let mut lo = 0u64;
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if majority_failure(2 * mid + 1, delta) <= eps_tok {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        Ok(Self {
            w: 2 * lo + 1,
            delta,
            eps_tok,
        })
    }

    /// Fixed repetition count, bypassing calibration.
    pub fn with_repetitions(w: u64, delta: f64) -> Self {
        assert!(w % 2 == 1, "w must be odd");
        Self {
            w,
            delta,
            eps_tok: majority_failure(w, delta),
        }
    }

    pub fn tail(&self) -> f64 {
        majority_failure(self.w, self.delta)
    }

    /// Votes needed to accept.
    pub fn threshold(&self) -> usize {
        (self.w / 2 + 1) as usize
    }
}

pub fn ft_params(delta: f64, eps_tok: f64) -> Result<FtParams, ParamError> {
    FtParams::calibrate(delta, eps_tok)
}

#[derive(Debug, Clone)]
pub struct FtSecretKey(pub Vec<TokenSecretKey>);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FtPublicKey(pub Vec<TokenPublicKey>);

/// `w` live token handles. Signing consumes all of them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FtToken(pub Vec<TokenHandle>);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FtTag(pub Vec<TokenTag>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FtEvalKey(pub Vec<EvalKey>);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FtSignature(pub Vec<Signature>);

impl FtSecretKey {
    pub fn generate<R: RngCore + CryptoRng + ?Sized>(rng: &mut R, lambda: u16, w: u64) -> Self {
        Self(
            (0..w)
                .map(|_| TokenSecretKey::generate(rng, lambda))
                .collect(),
        )
    }

    pub fn w(&self) -> usize {
        self.0.len()
    }
}

fn write_list<T>(w: &mut Writer, items: &[T], f: impl Fn(&T, &mut Writer)) {
    w.u16(u16::try_from(items.len()).expect("at most 65535 components"));
    for it in items {
        w.nested(|w| f(it, w));
    }
}

fn read_list<T>(
    r: &mut Reader<'_>,
    f: impl Fn(&[u8]) -> Result<T, DecodeError>,
) -> Result<Vec<T>, DecodeError> {
    let n = r.u16()?;
    (0..n).map(|_| f(r.bytes()?)).collect()
}

macro_rules! list_codec {
    ($ty:ident, $item:ident) => {
        impl $ty {
            /// `u16` count, then length-prefixed components.
            pub fn encode(&self) -> Vec<u8> {
                let mut w = Writer::new();
                self.write(&mut w);
                w.finish()
            }

            pub fn write(&self, w: &mut Writer) {
                write_list(w, &self.0, |c, w| c.write(w));
            }

            pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
                let mut r = Reader::new(bytes);
                let v = Self::read(&mut r)?;
                r.finish()?;
                Ok(v)
            }

            pub fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
                read_list(r, $item::decode).map(Self)
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }
        }
    };
}

list_codec!(FtPublicKey, TokenPublicKey);
list_codec!(FtTag, TokenTag);
list_codec!(FtEvalKey, EvalKey);
list_codec!(FtSignature, Signature);

pub fn ft_setup(sk: &FtSecretKey) -> FtPublicKey {
    FtPublicKey(sk.0.iter().map(tok_setup).collect())
}

/// Receiver: one token per component key. On error the tokens already
/// prepared are discarded.
pub fn ft_rec<R: RngCore + ?Sized>(
    pk: &FtPublicKey,
    rng: &mut R,
    hw: &Hardware,
) -> Result<(FtToken, FtTag), TokError> {
    let mut handles = Vec::with_capacity(pk.0.len());
    let mut tags = Vec::with_capacity(pk.0.len());
    for c in &pk.0 {
        match tok_rec(c, rng, hw) {
            Ok((h, t)) => {
                handles.push(h);
                tags.push(t);
            }
            Err(e) => {
                for h in &handles {
                    let _ = hw.discard(h);
                }
                return Err(e);
            }
        }
    }
    Ok((FtToken(handles), FtTag(tags)))
}

/// Sender: component-wise. Any component failure fails the whole key.
pub fn ft_sen(sk: &FtSecretKey, pk: &FtPublicKey, tag: &FtTag) -> Result<FtEvalKey, TokError> {
    if sk.0.len() != pk.0.len() || tag.0.len() != pk.0.len() {
        return Err(TokError::TagDecodeFailure);
    }
    sk.0.iter()
        .zip(&pk.0)
        .zip(&tag.0)
        .map(|((s, p), t)| tok_sen(s, p, t))
        .collect::<Result<Vec<_>, _>>()
        .map(FtEvalKey)
}

/// Signs `b` on every copy. All handles are consumed even when one of them
/// was already used, in which case the token is void and an error returned.
pub fn ft_sign<R: RngCore + ?Sized>(
    hw: &Hardware,
    tok: &FtToken,
    b: bool,
    rng: &mut R,
) -> Result<FtSignature, TokError> {
    let mut sigs = Vec::with_capacity(tok.0.len());
    let mut failure = None;
    for h in &tok.0 {
        match tok_sign(hw, h, b, rng) {
            Ok(s) => sigs.push(s),
            Err(e) => failure = failure.or(Some(e)),
        }
    }
    match failure {
        None => Ok(FtSignature(sigs)),
        Some(e) => Err(e),
    }
}

/// Component verdicts, for inspection.
pub fn ft_votes(ek: &FtEvalKey, sig: &FtSignature, b: bool) -> Option<Vec<bool>> {
    if sig.0.len() != ek.0.len() {
        return None;
    }
    Some(
        ek.0.iter()
            .zip(&sig.0)
            .map(|(k, s)| tok_cv(k, s, b))
            .collect(),
    )
}

/// Accepts iff at least `⌊w/2⌋ + 1` components verify.
pub fn majority(votes: &[bool]) -> bool {
    votes.iter().filter(|&&v| v).count() > votes.len() / 2
}

pub fn ft_cv(ek: &FtEvalKey, sig: &FtSignature, b: bool) -> bool {
    !ek.0.is_empty() && ft_votes(ek, sig, b).is_some_and(|v| majority(&v))
}

/// Releases the handles of a token that will never be signed.
pub fn ft_discard(hw: &Hardware, tok: &FtToken) -> Result<(), HwError> {
    tok.0
        .iter()
        .map(|h| hw.discard(h))
        .fold(Ok(()), |acc, r| acc.and(r))
}
