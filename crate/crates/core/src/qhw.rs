//! Simulated consumable quantum hardware.
//!
//! Token states are kept symbolically as a subspace coset description
//! `(S, x, z)`. The registry hands out opaque [`TokenHandle`]s; measuring a
//! handle removes its state, so every handle yields at most one result no
//! matter how callers clone or share it.

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use core::sync::atomic::{AtomicU64, Ordering};

use rand_core::RngCore;
use spin::Mutex;

use crate::gf2::{random_combination, random_vector, PairedSubspace, Subspace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum HwError {
    #[error("token already consumed")]
    AlreadyConsumed,
    #[error("unknown token handle")]
    UnknownHandle,
}

/// Opaque reference to a token state held by a [`Hardware`] registry.
///
/// Deliberately not `Copy`: handles are moved into signing calls. Cloning is
/// allowed but buys nothing, since the registry consumes the state itself.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenHandle {
    id: u64,
}

impl TokenHandle {
    pub fn id(&self) -> u64 {
        self.id
    }
}

#[derive(Debug, Clone)]
pub(crate) struct TokenState {
    pub space: Arc<PairedSubspace>,
    pub x: u128,
    pub z: u128,
    pub p_fail: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    Computational,
    Hadamard,
}

/// Bernoulli draw with 53 bits of resolution.
pub fn bernoulli<R: RngCore + ?Sized>(rng: &mut R, p: f64) -> bool {
    if p <= 0.0 {
        return false;
    }
    let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    u < p
}

/// Registry of live token states.
pub struct Hardware {
    states: Mutex<BTreeMap<u64, TokenState>>,
    next_id: AtomicU64,
    consumed: AtomicU64,
    p_fail: f64,
}

impl Default for Hardware {
    fn default() -> Self {
        Self::noiseless()
    }
}

impl core::fmt::Debug for Hardware {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Hardware")
            .field("live", &self.live())
            .field("consumed", &self.consumed())
            .field("p_fail", &self.p_fail)
            .finish()
    }
}

impl Hardware {
    pub fn noiseless() -> Self {
        Self::with_noise(0.0)
    }

    /// Every token prepared through the protocol APIs gets corruption
    /// probability `p_fail`.
    pub fn with_noise(p_fail: f64) -> Self {
        assert!((0.0..1.0).contains(&p_fail), "p_fail must lie in [0, 1)");
        Self {
            states: Mutex::new(BTreeMap::new()),
            next_id: AtomicU64::new(0),
            consumed: AtomicU64::new(0),
            p_fail,
        }
    }

    pub fn p_fail(&self) -> f64 {
        self.p_fail
    }

    /// Registers the coset state for `(S, x, z)` with its own noise level.
    pub fn prepare_coset_state(
        &self,
        subspace: Subspace,
        x: u128,
        z: u128,
        p_fail: f64,
    ) -> TokenHandle {
        assert!((0.0..1.0).contains(&p_fail), "p_fail must lie in [0, 1)");
        self.register(TokenState {
            space: Arc::new(PairedSubspace::new(subspace)),
            x,
            z,
            p_fail,
        })
    }

    pub(crate) fn register(&self, state: TokenState) -> TokenHandle {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        self.states.lock().insert(id, state);
        TokenHandle { id }
    }

    fn take(&self, h: &TokenHandle) -> Result<TokenState, HwError> {
        let taken = self.states.lock().remove(&h.id);
        match taken {
            Some(state) => {
                self.consumed.fetch_add(1, Ordering::Relaxed);
                Ok(state)
            }
            None if h.id < self.next_id.load(Ordering::Relaxed) => Err(HwError::AlreadyConsumed),
            None => Err(HwError::UnknownHandle),
        }
    }

    /// Measures and destroys the state. With probability `p_fail` the result
    /// is a uniform vector; otherwise a uniform element of `S + x`
    /// (computational) or `S⊥ + z` (Hadamard).
    pub fn measure<R: RngCore + ?Sized>(
        &self,
        h: &TokenHandle,
        basis: Basis,
        rng: &mut R,
    ) -> Result<u128, HwError> {
        self.measure_sized(h, basis, rng).map(|(_, v)| v)
    }

    /// Like [`Hardware::measure`], also reporting the ambient dimension.
    pub(crate) fn measure_sized<R: RngCore + ?Sized>(
        &self,
        h: &TokenHandle,
        basis: Basis,
        rng: &mut R,
    ) -> Result<(u16, u128), HwError> {
        let state = self.take(h)?;
        let lambda = state.space.subspace().lambda();
        if bernoulli(rng, state.p_fail) {
            return Ok((lambda, random_vector(rng, lambda)));
        }
        let v = match basis {
            Basis::Computational => state.space.subspace().random_coset_element(rng, state.x),
            Basis::Hadamard => random_combination(rng, state.space.perp_rows(), state.z),
        };
        Ok((lambda, v))
    }

    pub fn measure_computational<R: RngCore + ?Sized>(
        &self,
        h: &TokenHandle,
        rng: &mut R,
    ) -> Result<u128, HwError> {
        self.measure(h, Basis::Computational, rng)
    }

    pub fn measure_hadamard<R: RngCore + ?Sized>(
        &self,
        h: &TokenHandle,
        rng: &mut R,
    ) -> Result<u128, HwError> {
        self.measure(h, Basis::Hadamard, rng)
    }

    /// Destroys a state without measuring it, e.g. tokens orphaned by an
    /// aborted round.
    pub fn discard(&self, h: &TokenHandle) -> Result<(), HwError> {
        self.take(h).map(|_| ())
    }

    pub fn is_live(&self, h: &TokenHandle) -> bool {
        self.states.lock().contains_key(&h.id)
    }

    pub fn live(&self) -> usize {
        self.states.lock().len()
    }

    pub fn consumed(&self) -> u64 {
        self.consumed.load(Ordering::Relaxed)
    }

    pub fn registered(&self) -> u64 {
        self.next_id.load(Ordering::Relaxed)
    }

    #[cfg(test)]
    pub(crate) fn peek(&self, h: &TokenHandle) -> Option<TokenState> {
        self.states.lock().get(&h.id).cloned()
    }
}
