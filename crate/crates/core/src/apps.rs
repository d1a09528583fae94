//! Applications of RAM chains: long-lived one-time memories and copy
//! protection, plus the pirate game used to test the latter.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use rand::distributions::{Distribution, WeightedIndex};
use rand_core::{CryptoRng, RngCore};

use crate::bits::BitString;
use crate::cotp::{OracleAccess, OtpError};
use crate::cqtok::TokError;
use crate::crypt::{MasterPublicKey, PrfKey};
use crate::progvm::{corpus, eval_program, Program, ProgramKind, RamImage, CP_TOKEN_BITS};
use crate::qhw::Hardware;
use crate::ramobf::{ro_eval, ro_send, ChainParams, ChainReceiverState, RamError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Chain(#[from] RamError),
    #[error("one-time memory secrets differ in length")]
    SecretLength,
    #[error("circuit is not a stateless bytecode program")]
    Circuit,
    #[error("input has {got} bits, circuit expects {expected}")]
    InputLength { expected: usize, got: usize },
    #[error("invalid pirate game spec: {0}")]
    Spec(&'static str),
}

/// A one-time memory held as a live RAM chain.
#[derive(Debug, Clone)]
pub struct OtmState {
    chain: ChainReceiverState,
    secret_len: usize,
}

impl OtmState {
    pub fn chain(&self) -> &ChainReceiverState {
        &self.chain
    }

    pub fn secret_len(&self) -> usize {
        self.secret_len
    }
}

pub fn otm_prep_state<R: RngCore + CryptoRng + ?Sized>(
    s0: &[u8],
    s1: &[u8],
    params: ChainParams,
    mpk: MasterPublicKey,
    hw: &Hardware,
    rng: &mut R,
) -> Result<OtmState, AppError> {
    let program = Program::one_time_memory(s0, s1).map_err(|_| AppError::SecretLength)?;
    let chain = ro_send(program, RamImage::zeroed(1), params, mpk, hw, rng, None)?;
    Ok(OtmState {
        chain,
        secret_len: s0.len(),
    })
}

/// Reads `s_alpha`, or makes an empty read for `alpha = None`. `Ok(None)` is
/// the program's own `⊥`; chain failures are errors.
pub fn otm_read_state<R: RngCore + ?Sized>(
    state: &mut OtmState,
    alpha: Option<bool>,
    oracle: &dyn OracleAccess,
    hw: &Hardware,
    rng: &mut R,
) -> Result<Option<Vec<u8>>, AppError> {
    let input = BitString::from_bits(alloc::vec![alpha.is_some(), alpha.unwrap_or(false)]);
    let out = ro_eval(&mut state.chain, &input, oracle, hw, rng)?;
    if out.get(0) != Some(true) {
        return Ok(None);
    }
    Ok(Some(out.slice(1, out.len()).to_bytes()))
}

/// A copy-protected circuit held as a live RAM chain.
#[derive(Debug, Clone)]
pub struct CpState {
    chain: ChainReceiverState,
    n_input_bits: usize,
    m_output_bits: usize,
}

impl CpState {
    pub fn chain(&self) -> &ChainReceiverState {
        &self.chain
    }

    pub fn n_input_bits(&self) -> usize {
        self.n_input_bits
    }

    pub fn m_output_bits(&self) -> usize {
        self.m_output_bits
    }
}

pub type CpToken = [u8; 32];

pub fn cp_protect<R: RngCore + CryptoRng + ?Sized>(
    circuit: &Program,
    params: ChainParams,
    mpk: MasterPublicKey,
    hw: &Hardware,
    rng: &mut R,
) -> Result<(CpState, CpToken), AppError> {
    let key = PrfKey::generate(rng);
    cp_protect_with_key(circuit, &key, params, mpk, hw, rng)
}

pub fn cp_protect_with_key<R: RngCore + CryptoRng + ?Sized>(
    circuit: &Program,
    key: &PrfKey,
    params: ChainParams,
    mpk: MasterPublicKey,
    hw: &Hardware,
    rng: &mut R,
) -> Result<(CpState, CpToken), AppError> {
    let program = Program::copy_protected(circuit, key).map_err(|_| AppError::Circuit)?;
    let chain = ro_send(
        program,
        RamImage(0i64.to_le_bytes().to_vec()),
        params,
        mpk,
        hw,
        rng,
        None,
    )?;
    let state = CpState {
        chain,
        n_input_bits: circuit.n_input_bits(),
        m_output_bits: circuit.m_output_bits(),
    };
    Ok((state, key.prf(0)))
}

/// One round: `Ok(Some((C(x), t_next)))`, or `Ok(None)` when the program
/// answers `⊥` (wrong token or bricked). Chain failures are errors.
pub fn cp_eval<R: RngCore + ?Sized>(
    state: &mut CpState,
    x: &BitString,
    t: &CpToken,
    oracle: &dyn OracleAccess,
    hw: &Hardware,
    rng: &mut R,
) -> Result<Option<(BitString, CpToken)>, AppError> {
    if x.len() != state.n_input_bits {
        return Err(AppError::InputLength {
            expected: state.n_input_bits,
            got: x.len(),
        });
    }
    let input = x.concat(&BitString::from_bytes(t));
    let out = ro_eval(&mut state.chain, &input, oracle, hw, rng)?;
    if out.get(0) != Some(true) {
        return Ok(None);
    }
    let m = state.m_output_bits;
    let y = out.slice(1, 1 + m);
    let mut next = [0u8; 32];
    next.copy_from_slice(&out.slice(1 + m, 1 + m + CP_TOKEN_BITS).to_bytes());
    Ok(Some((y, next)))
}

/// Weighted input pair `(x1, x2)` handed to the two freeloaders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Challenge {
    pub x1: u64,
    pub x2: u64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameCircuit {
    pub id: String,
    pub program: Program,
    pub weight: f64,
    pub challenges: Vec<Challenge>,
}

impl GameCircuit {
    pub fn answer(&self, x: u64) -> BitString {
        let input = BitString::from_uint(x, self.program.n_input_bits());
        eval_program(&self.program, &RamImage::default(), &input)
            .expect("validated game circuit evaluates")
            .1
    }
}

/// Finite distribution over circuits, each with its own finite distribution
/// over challenge pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PirateGameSpec {
    pub circuits: Vec<GameCircuit>,
}

const WEIGHT_TOLERANCE: f64 = 1e-9;

fn check_weights(weights: impl Iterator<Item = f64>) -> Result<(), AppError> {
    let mut total = 0.0;
    let mut any = false;
    for w in weights {
        if !(w.is_finite() && w > 0.0) {
            return Err(AppError::Spec("weights must be positive and finite"));
        }
        total += w;
        any = true;
    }
    if !any {
        return Err(AppError::Spec("empty support"));
    }
    if (total - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(AppError::Spec("weights must sum to 1"));
    }
    Ok(())
}

impl PirateGameSpec {
    pub fn validate(&self) -> Result<(), AppError> {
        check_weights(self.circuits.iter().map(|c| c.weight))?;
        for c in &self.circuits {
            let p = &c.program;
            if p.kind() != ProgramKind::Bytecode || p.ram_len() != 0 || p.validate().is_err() {
                return Err(AppError::Circuit);
            }
            let n = p.n_input_bits();
            if n > 64 {
                return Err(AppError::Spec("circuit input wider than 64 bits"));
            }
            check_weights(c.challenges.iter().map(|ch| ch.weight))?;
            let fits = |x: u64| n == 64 || x >> n == 0;
            if !c.challenges.iter().all(|ch| fits(ch.x1) && fits(ch.x2)) {
                return Err(AppError::Spec("challenge input wider than the circuit"));
            }
            for ch in &c.challenges {
                for x in [ch.x1, ch.x2] {
                    eval_program(p, &RamImage::default(), &BitString::from_uint(x, n))
                        .map_err(|_| AppError::Spec("circuit fails on a challenge input"))?;
                }
            }
        }
        Ok(())
    }

    /// All 256 point functions on 8 bits, uniformly weighted. The challenge
    /// pair is uniform over `{a, a ^ 0x5A}²`, so each freeloader's answer is
    /// an unbiased bit independent of its own input.
    pub fn point_functions() -> Self {
        let circuits = (0..=255u8)
            .map(|a| {
                let (a, d) = (u64::from(a), u64::from(a ^ 0x5A));
                GameCircuit {
                    id: alloc::format!("pf-{a:02x}"),
                    program: corpus::point_function(8, a as u8),
                    weight: 1.0 / 256.0,
                    challenges: [(a, a), (a, d), (d, a), (d, d)]
                        .into_iter()
                        .map(|(x1, x2)| Challenge {
                            x1,
                            x2,
                            weight: 0.25,
                        })
                        .collect(),
                }
            })
            .collect();
        Self { circuits }
    }

    /// Three point functions with skewed weights, for which the first
    /// freeloader's best blind guess is `1` with mass 59/72.
    pub fn skewed() -> Self {
        let pf = |id: &str, target: u8, weight: f64, pairs: &[(u64, u64, f64)]| GameCircuit {
            id: id.into(),
            program: corpus::point_function(8, target),
            weight,
            challenges: pairs
                .iter()
                .map(|&(x1, x2, weight)| Challenge { x1, x2, weight })
                .collect(),
        };
        Self {
            circuits: alloc::vec![
                pf(
                    "pf-00",
                    0x00,
                    1.0 / 2.0,
                    &[(0x00, 0x00, 0.5), (0x00, 0x01, 0.25), (0x01, 0x01, 0.25)]
                ),
                pf("pf-0f", 0x0F, 1.0 / 3.0, &[(0x0F, 0x10, 1.0)]),
                pf(
                    "pf-f0",
                    0xF0,
                    1.0 / 6.0,
                    &[(0x01, 0x02, 1.0 / 3.0), (0xF0, 0x03, 2.0 / 3.0)]
                ),
            ],
        }
    }

    /// Mass of each distinct answer for freeloader `i` (0 or 1).
    fn answer_masses(&self, i: usize) -> Vec<(BitString, f64)> {
        let mut masses: Vec<(BitString, f64)> = Vec::new();
        for c in &self.circuits {
            for ch in &c.challenges {
                let b = c.answer(if i == 0 { ch.x1 } else { ch.x2 });
                let mass = c.weight * ch.weight;
                match masses.iter_mut().find(|(seen, _)| *seen == b) {
                    Some((_, m)) => *m += mass,
                    None => masses.push((b, mass)),
                }
            }
        }
        masses
    }

    /// Best blind guess for freeloader `i` and its success probability.
    pub fn argmax_guess(&self, i: usize) -> (BitString, f64) {
        assert!(i < 2, "freeloader index is 0 or 1");
        self.answer_masses(i).into_iter().fold(
            (BitString::new(), f64::NEG_INFINITY),
            |best, cur| if cur.1 > best.1 { cur } else { best },
        )
    }

    fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> (usize, Challenge) {
        let ci = WeightedIndex::new(self.circuits.iter().map(|c| c.weight))
            .expect("validated weights")
            .sample(rng);
        let c = &self.circuits[ci];
        let pi = WeightedIndex::new(c.challenges.iter().map(|ch| ch.weight))
            .expect("validated weights")
            .sample(rng);
        (ci, c.challenges[pi])
    }
}

/// Largest probability with which one freeloader answers correctly without
/// seeing the program: the maximum over freeloaders and answers `b` of the
/// total mass of `(C, x1, x2)` with `C(x_i) = b`.
pub fn trivial_win_probability(spec: &PirateGameSpec) -> f64 {
    (0..2).map(|i| spec.argmax_guess(i).1).fold(0.0, f64::max)
}

/// Everything needed to run a protected program: the chain and the current
/// round token.
#[derive(Debug, Clone)]
pub struct CpHolding {
    pub state: CpState,
    pub token: CpToken,
}

/// Shared capabilities while playing: the stateless oracle and the
/// hardware. Neither lets one freeloader talk to the other.
pub struct GameContext<'a> {
    pub oracle: &'a dyn OracleAccess,
    pub hw: &'a Hardware,
}

/// Each party's line to the oracle. In process they may all be the same
/// object; over a socket each party holds its own session.
#[derive(Clone, Copy)]
pub struct GameSessions<'a> {
    pub pirate: &'a dyn OracleAccess,
    pub f1: &'a dyn OracleAccess,
    pub f2: &'a dyn OracleAccess,
}

impl<'a> GameSessions<'a> {
    pub fn shared(oracle: &'a dyn OracleAccess) -> Self {
        Self {
            pirate: oracle,
            f1: oracle,
            f2: oracle,
        }
    }
}

/// Splits one copy-protected program into material for two freeloaders.
pub trait PirateStrategy {
    fn name(&self) -> &str;

    fn split(
        &self,
        holding: CpHolding,
        ctx: &GameContext<'_>,
        rng: &mut dyn RngCore,
    ) -> (Option<CpHolding>, Option<CpHolding>);
}

/// Gives the whole program to the first freeloader.
#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardToF1;

impl PirateStrategy for ForwardToF1 {
    fn name(&self) -> &str {
        "forward"
    }

    fn split(
        &self,
        holding: CpHolding,
        _: &GameContext<'_>,
        _: &mut dyn RngCore,
    ) -> (Option<CpHolding>, Option<CpHolding>) {
        (Some(holding), None)
    }
}

/// Runs round 0 on a fixed input, then hands the first freeloader a copy
/// of the stale pre-round material and the second the live chain with the
/// fresh token.
#[derive(Debug, Clone, Copy, Default)]
pub struct SplitStale;

impl PirateStrategy for SplitStale {
    fn name(&self) -> &str {
        "split"
    }

    fn split(
        &self,
        holding: CpHolding,
        ctx: &GameContext<'_>,
        rng: &mut dyn RngCore,
    ) -> (Option<CpHolding>, Option<CpHolding>) {
        let stale = holding.clone();
        let mut live = holding;
        let x = BitString::zeros(live.state.n_input_bits());
        match cp_eval(&mut live.state, &x, &live.token, ctx.oracle, ctx.hw, rng) {
            Ok(Some((_, next))) => {
                live.token = next;
                (Some(stale), Some(live))
            }
            _ => (Some(stale), None),
        }
    }
}

/// Gives both freeloaders the same classical copy of the chain and token.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReplaySame;

impl PirateStrategy for ReplaySame {
    fn name(&self) -> &str {
        "replay"
    }

    fn split(
        &self,
        holding: CpHolding,
        _: &GameContext<'_>,
        _: &mut dyn RngCore,
    ) -> (Option<CpHolding>, Option<CpHolding>) {
        (Some(holding.clone()), Some(holding))
    }
}

pub fn builtin_strategies() -> Vec<Box<dyn PirateStrategy>> {
    alloc::vec![
        Box::new(ForwardToF1),
        Box::new(SplitStale),
        Box::new(ReplaySame)
    ]
}

pub fn strategy_by_name(name: &str) -> Option<Box<dyn PirateStrategy>> {
    builtin_strategies().into_iter().find(|s| s.name() == name)
}

/// A freeloader's answer and whether it came from a non-`⊥` evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreeloaderAnswer {
    pub bits: BitString,
    pub evaluated: bool,
}

pub trait Freeloader {
    fn answer(
        &self,
        material: Option<CpHolding>,
        x: &BitString,
        blind_guess: &BitString,
        ctx: &GameContext<'_>,
        rng: &mut dyn RngCore,
    ) -> FreeloaderAnswer;
}

/// Evaluates the program if it can, else falls back to the blind guess.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOrGuess;

impl Freeloader for EvalOrGuess {
    fn answer(
        &self,
        material: Option<CpHolding>,
        x: &BitString,
        blind_guess: &BitString,
        ctx: &GameContext<'_>,
        rng: &mut dyn RngCore,
    ) -> FreeloaderAnswer {
        if let Some(mut h) = material {
            if let Ok(Some((y, _))) = cp_eval(&mut h.state, x, &h.token, ctx.oracle, ctx.hw, rng) {
                return FreeloaderAnswer {
                    bits: y,
                    evaluated: true,
                };
            }
        }
        FreeloaderAnswer {
            bits: blind_guess.clone(),
            evaluated: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GameRecord {
    pub trial: u64,
    pub circuit_id: String,
    pub x1: u64,
    pub x2: u64,
    pub b1: BitString,
    pub b2: BitString,
    pub win: bool,
    pub non_bottom: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameOutcome {
    pub records: Vec<GameRecord>,
    pub wins: u64,
}

impl GameOutcome {
    pub fn trials(&self) -> u64 {
        self.records.len() as u64
    }

    pub fn win_rate(&self) -> f64 {
        if self.records.is_empty() {
            0.0
        } else {
            self.wins as f64 / self.records.len() as f64
        }
    }
}

/// Hardware and chain settings for each trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameParams {
    pub chain: ChainParams,
    pub p_fail: f64,
}

const SETUP_ATTEMPTS: u32 = 8;

/// Plays one trial; `blind_guesses` are the freeloaders' fallback answers,
/// normally [`PirateGameSpec::argmax_guess`]. Each trial runs on its own hardware, so nothing from one
/// game survives into the next.
#[allow(clippy::too_many_arguments)]
pub fn play_pirate_game<R: RngCore + CryptoRng>(
    spec: &PirateGameSpec,
    blind_guesses: &[BitString; 2],
    pirate: &dyn PirateStrategy,
    f1: &dyn Freeloader,
    f2: &dyn Freeloader,
    trial: u64,
    sessions: GameSessions<'_>,
    mpk: MasterPublicKey,
    params: &GameParams,
    rng: &mut R,
) -> Result<GameRecord, AppError> {
    let hw = Hardware::with_noise(params.p_fail);
    let ctx = GameContext {
        oracle: sessions.pirate,
        hw: &hw,
    };
    let (ci, ch) = spec.sample(rng);
    let circuit = &spec.circuits[ci];
    // the challenger restarts a protection that aborted during setup
    let mut attempts = 0;
    let (state, token) = loop {
        attempts += 1;
        match cp_protect(&circuit.program, params.chain, mpk, &hw, rng) {
            Err(AppError::Chain(RamError::Otp(OtpError::Token(TokError::XInSubspaceAbort))))
                if attempts < SETUP_ATTEMPTS => {}
            other => break other?,
        }
    };
    let (m1, m2) = pirate.split(CpHolding { state, token }, &ctx, rng);
    let (ctx1, ctx2) = (
        GameContext {
            oracle: sessions.f1,
            hw: &hw,
        },
        GameContext {
            oracle: sessions.f2,
            hw: &hw,
        },
    );
    let n = circuit.program.n_input_bits();
    let (x1, x2) = (
        BitString::from_uint(ch.x1, n),
        BitString::from_uint(ch.x2, n),
    );
    let [g1, g2] = blind_guesses;
    // the two freeloaders act in an unpredictable order
    let (a1, a2) = if rng.next_u32() & 1 == 0 {
        let a1 = f1.answer(m1, &x1, g1, &ctx1, rng);
        (a1, f2.answer(m2, &x2, g2, &ctx2, rng))
    } else {
        let a2 = f2.answer(m2, &x2, g2, &ctx2, rng);
        (f1.answer(m1, &x1, g1, &ctx1, rng), a2)
    };
    let win = a1.bits == circuit.answer(ch.x1) && a2.bits == circuit.answer(ch.x2);
    Ok(GameRecord {
        trial,
        circuit_id: circuit.id.clone(),
        x1: ch.x1,
        x2: ch.x2,
        b1: a1.bits,
        b2: a2.bits,
        win,
        non_bottom: u8::from(a1.evaluated) + u8::from(a2.evaluated),
    })
}

#[allow(clippy::too_many_arguments)]
pub fn run_pirate_game<R: RngCore + CryptoRng>(
    spec: &PirateGameSpec,
    pirate: &dyn PirateStrategy,
    f1: &dyn Freeloader,
    f2: &dyn Freeloader,
    trials: u64,
    sessions: GameSessions<'_>,
    mpk: MasterPublicKey,
    params: &GameParams,
    rng: &mut R,
) -> Result<GameOutcome, AppError> {
    spec.validate()?;
    let guesses = [spec.argmax_guess(0).0, spec.argmax_guess(1).0];
    let mut records = Vec::with_capacity(trials as usize);
    for trial in 0..trials {
        records.push(play_pirate_game(
            spec, &guesses, pirate, f1, f2, trial, sessions, mpk, params, rng,
        )?);
    }
    let wins = records.iter().filter(|r| r.win).count() as u64;
    Ok(GameOutcome { records, wins })
}
