use crate::config::{ConfigError, ExperimentConfig};
use crate::stats::{Gate, StatReport, Tally};
use crate::testbed::Testbed;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use semiq_core::apps::{
    cp_eval, cp_protect, otm_prep_state, otm_read_state, play_pirate_game, strategy_by_name,
    trivial_win_probability, AppError, EvalOrGuess, GameParams, GameRecord, GameSessions,
    PirateGameSpec,
};
use semiq_core::bits::BitString;
use semiq_core::cotp::{
    otp_eval, otp_gen_receiver_msg, otp_gen_sender_reply, otp_setup, sign_bits, AccessError,
    OracleAccess, OracleAnswer, OracleProgram, OracleQuery, OtpError, SkBundle, TagBundle,
};
use semiq_core::cqtok::{tok_cv, tok_rec, tok_sen, tok_setup, tok_sign, EvalKey, Signature, TokError, TokenPublicKey, TokenSecretKey};
use semiq_core::crypt::SealedPayload;
use semiq_core::ftlift::{
    ft_cv, ft_discard, ft_params, ft_rec, ft_sen, ft_setup, ft_sign, FtEvalKey, FtParams,
    FtPublicKey, FtSecretKey, FtSignature, FtToken, ParamError,
};
use semiq_core::progvm::{corpus, eval_program, Program, RamImage, VmError};
use semiq_core::qhw::{Hardware, HwError, TokenHandle};
use semiq_core::ramobf::{
    ro_eval, ro_eval_logged, ro_send, ChainParams, Direction, MessageType, Outcome, RamError,
    Transcript, TranscriptEntry, DEFAULT_DIGEST_BITS,
};
use std::collections::BTreeSet;
use std::sync::Mutex;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Token(#[from] TokError),
    #[error(transparent)]
    Hardware(#[from] HwError),
    #[error(transparent)]
    Otp(#[from] OtpError),
    #[error(transparent)]
    Chain(#[from] RamError),
    #[error(transparent)]
    App(#[from] AppError),
    #[error(transparent)]
    Program(#[from] VmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("unknown pirate strategy {0:?}")]
    Strategy(String),
}

/// Digest width used by the short chains of the application experiments.
pub const APP_DIGEST_BITS: u16 = 32;

/// A report plus whatever logs the experiment produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: StatReport,
    pub games: Vec<GameRecord>,
    pub transcript: Transcript,
    pub summary: Vec<String>,
}

impl RunOutput {
    fn new(report: StatReport) -> Self {
        Self {
            report,
            games: Vec::new(),
            transcript: Transcript::new(),
            summary: Vec::new(),
        }
    }

    fn note(mut self, line: String) -> Self {
        self.summary.push(line);
        self
    }
}

type Result<T> = std::result::Result<T, HarnessError>;

/// Runs `n` independent trials on the worker pool, results in trial order.
fn trials<T: Send>(n: u64, f: impl Fn(u64) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..n).into_par_iter().map(f).collect()
}

/// Rec then Sen, restarting the token whenever the sender aborts.
fn issue_token(
    sk: &TokenSecretKey,
    pk: &TokenPublicKey,
    hw: &Hardware,
    rng: &mut ChaCha20Rng,
) -> Result<(TokenHandle, EvalKey)> {
    loop {
        let (h, tag) = tok_rec(pk, rng, hw)?;
        match tok_sen(sk, pk, &tag) {
            Ok(ek) => return Ok((h, ek)),
            Err(TokError::XInSubspaceAbort) => hw.discard(&h)?,
            Err(e) => return Err(e.into()),
        }
    }
}

fn issue_ft_token(
    sk: &FtSecretKey,
    pk: &FtPublicKey,
    hw: &Hardware,
    rng: &mut ChaCha20Rng,
) -> Result<(FtToken, FtEvalKey)> {
    loop {
        let (tok, tag) = ft_rec(pk, rng, hw)?;
        match ft_sen(sk, pk, &tag) {
            Ok(ek) => return Ok((tok, ek)),
            Err(TokError::XInSubspaceAbort) => ft_discard(hw, &tok)?,
            Err(e) => return Err(e.into()),
        }
    }
}

fn is_setup_abort(e: &HarnessError) -> bool {
    const ABORT: RamError = RamError::Otp(OtpError::Token(TokError::XInSubspaceAbort));
    matches!(e, HarnessError::Chain(c) | HarnessError::App(AppError::Chain(c)) if *c == ABORT)
}

/// Reruns a chain setup the sender aborted; the aborted round's tokens are
/// already discarded.
fn setup<T>(mut f: impl FnMut() -> Result<T>) -> Result<T> {
    loop {
        match f() {
            Err(e) if is_setup_abort(&e) => {}
            r => return r,
        }
    }
}

fn random_bits(rng: &mut ChaCha20Rng, n: usize) -> BitString {
    (0..n).map(|_| rng.gen::<bool>()).collect()
}

/// Random input that differs from `x` in at least one bit.
fn other_input(rng: &mut ChaCha20Rng, x: &BitString) -> BitString {
    let flip = rng.gen_range(0..x.len());
    x.iter().enumerate().map(|(i, b)| b ^ (i == flip)).collect()
}

/// Honest sign and verify of single tokens with `pFail = 1/2 - δ`.
pub fn tok_correctness(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let accepted = trials(cfg.trials, |t| {
        let mut rng = cfg.trial_rng(t);
        let hw = Hardware::with_noise(cfg.p_fail());
        let sk = TokenSecretKey::generate(&mut rng, cfg.lambda);
        let pk = tok_setup(&sk);
        let (h, ek) = issue_token(&sk, &pk, &hw, &mut rng)?;
        let b = rng.gen::<bool>();
        let sig = tok_sign(&hw, &h, b, &mut rng)?;
        Ok(tok_cv(&ek, &sig, b))
    })?;
    // a corrupted signature still lands in an accepting coset w.p. <= 2^(1 - λ/2)
    let slack = cfg.p_fail() * (1.0 - f64::from(cfg.lambda) / 2.0).exp2();
    let report = StatReport::gate(
        "tok-correctness",
        cfg,
        Tally::count(accepted),
        Gate::TwoSided,
        0.5 + cfg.delta,
        slack,
    );
    Ok(RunOutput::new(report))
}

pub const SWEEP_DELTAS: [f64; 10] = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5];
pub const SWEEP_EPSILONS: [f64; 6] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

/// Repetition count Hoeffding's inequality alone would demand, rounded up
/// to odd.
pub fn hoeffding_w(delta: f64, eps: f64) -> u64 {
    let w = ((1.0 / eps).ln() / (2.0 * delta * delta)).ceil() as u64;
    w.max(1) | 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCheck {
    pub points: Vec<FtParams>,
    /// `tail(w) <= ε < tail(w - 2)` everywhere.
    pub minimal: bool,
    /// `w` nonincreasing in δ and nondecreasing in `1/ε`.
    pub monotone: bool,
    /// `w` never exceeds the Hoeffding count.
    pub below_hoeffding: bool,
    /// Smallest `c` with `w <= c·ln(1/ε)/δ²` over the grid.
    pub fitted_c: f64,
}

pub fn ft_grid() -> Result<GridCheck> {
    let mut points = Vec::new();
    for &d in &SWEEP_DELTAS {
        for &e in &SWEEP_EPSILONS {
            points.push(ft_params(d, e)?);
        }
    }
    let minimal = points
        .iter()
        .all(|p| p.tail() <= p.eps_tok && (p.w == 1 || FtParams::with_repetitions(p.w - 2, p.delta).tail() > p.eps_tok));
    let at = |di: usize, ei: usize| points[di * SWEEP_EPSILONS.len() + ei].w;
    let mut monotone = true;
    for di in 0..SWEEP_DELTAS.len() {
        for ei in 0..SWEEP_EPSILONS.len() {
            if di + 1 < SWEEP_DELTAS.len() {
                monotone &= at(di + 1, ei) <= at(di, ei);
            }
            if ei + 1 < SWEEP_EPSILONS.len() {
                monotone &= at(di, ei + 1) >= at(di, ei);
            }
        }
    }
    let below_hoeffding = points.iter().all(|p| p.w <= hoeffding_w(p.delta, p.eps_tok));
    let fitted_c = points
        .iter()
        .map(|p| p.w as f64 * p.delta * p.delta / (1.0 / p.eps_tok).ln())
        .fold(0.0, f64::max);
    Ok(GridCheck {
        points,
        minimal,
        monotone,
        below_hoeffding,
        fitted_c,
    })
}

/// Signs sharing one FT key set. Only correctness is measured, and fresh
/// tokens under one key are independent, so key generation is amortised.
pub const FT_KEY_BLOCK: u64 = 1_000;

/// FT signs at the calibrated `w`; the failure rate should match the exact
/// binomial tail.
pub fn ft_sign_rate(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let params = ft_params(cfg.delta, cfg.eps_target)?;
    let blocks = cfg.trials.div_ceil(FT_KEY_BLOCK);
    let counts = trials(blocks, |k| {
        let mut rng = cfg.trial_rng(k);
        let sk = FtSecretKey::generate(&mut rng, cfg.lambda, params.w);
        let pk = ft_setup(&sk);
        let size = FT_KEY_BLOCK.min(cfg.trials - k * FT_KEY_BLOCK);
        let mut failed = 0;
        for _ in 0..size {
            let hw = Hardware::with_noise(cfg.p_fail());
            let (tok, ek) = issue_ft_token(&sk, &pk, &hw, &mut rng)?;
            let b = rng.gen::<bool>();
            let sig = ft_sign(&hw, &tok, b, &mut rng)?;
            failed += u64::from(!ft_cv(&ek, &sig, b));
        }
        Ok(failed)
    })?;
    let tally = Tally::new(counts.iter().sum(), cfg.trials);
    let report = StatReport::gate("ft-sign", cfg, tally, Gate::TwoSided, params.tail(), 0.0);
    Ok(RunOutput::new(report).note(format!("w={} tail={:.6e}", params.w, params.tail())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Move {
    Sign(bool),
    Computational,
    Hadamard,
    Discard,
    /// Signs through a cloned handle, hoping the copy is a second state.
    CloneSign(bool),
}

const MOVES: [Move; 7] = [
    Move::Sign(false),
    Move::Sign(true),
    Move::Computational,
    Move::Hadamard,
    Move::Discard,
    Move::CloneSign(false),
    Move::CloneSign(true),
];

fn apply(m: Move, hw: &Hardware, h: &TokenHandle, lambda: u16, rng: &mut ChaCha20Rng) -> Option<Signature> {
    let value = match m {
        Move::Sign(b) => return tok_sign(hw, h, b, rng).ok(),
        Move::CloneSign(b) => return tok_sign(hw, &h.clone(), b, rng).ok(),
        Move::Computational => hw.measure_computational(h, rng).ok()?,
        Move::Hadamard => hw.measure_hadamard(h, rng).ok()?,
        Move::Discard => {
            let _ = hw.discard(h);
            return None;
        }
    };
    Some(Signature { lambda, value })
}

/// Does any harvested vector verify for 0 and any for 1?
fn both_bits(ek: &EvalKey, sigs: &[Signature]) -> bool {
    sigs.iter().any(|s| tok_cv(ek, s, false)) && sigs.iter().any(|s| tok_cv(ek, s, true))
}

fn single_schedule(t: u64, cfg: &ExperimentConfig, rng: &mut ChaCha20Rng) -> Result<bool> {
    let hw = Hardware::noiseless();
    let sk = TokenSecretKey::generate(rng, cfg.lambda);
    let pk = tok_setup(&sk);
    let (h, ek) = issue_token(&sk, &pk, &hw, rng)?;
    let pairs = (MOVES.len() * MOVES.len()) as u64;
    let mut sigs = Vec::new();
    if t / 2 < pairs {
        // every ordered pair of moves once
        let k = (t / 2) as usize;
        for m in [MOVES[k / MOVES.len()], MOVES[k % MOVES.len()]] {
            sigs.extend(apply(m, &hw, &h, cfg.lambda, rng));
        }
    } else if t % 10 == 0 {
        // two threads race to sign opposite bits
        let seeds: [u64; 2] = rng.gen();
        let raced: Vec<Option<Signature>> = std::thread::scope(|s| {
            let joins: Vec<_> = [false, true]
                .into_iter()
                .zip(seeds)
                .map(|(b, seed)| {
                    let (hw, h) = (&hw, h.clone());
                    s.spawn(move || tok_sign(hw, &h, b, &mut crate::config::stream_rng(seed, 0)).ok())
                })
                .collect();
            joins.into_iter().map(|j| j.join().unwrap_or(None)).collect()
        });
        if raced.iter().flatten().count() != 1 {
            return Ok(true);
        }
        sigs.extend(raced.into_iter().flatten());
    } else {
        for _ in 0..rng.gen_range(2..=4) {
            let m = MOVES[rng.gen_range(0..MOVES.len())];
            sigs.extend(apply(m, &hw, &h, cfg.lambda, rng));
        }
    }
    Ok(both_bits(&ek, &sigs))
}

fn ft_schedule(cfg: &ExperimentConfig, rng: &mut ChaCha20Rng) -> Result<bool> {
    let hw = Hardware::noiseless();
    let w = [1, 3, 5, 7][rng.gen_range(0..4)];
    let sk = FtSecretKey::generate(rng, cfg.lambda, w);
    let pk = ft_setup(&sk);
    let (tok, ek) = issue_ft_token(&sk, &pk, &hw, rng)?;
    if rng.gen::<bool>() {
        // whole-token signing twice
        let first = rng.gen::<bool>();
        let s0 = ft_sign(&hw, &tok, first, rng).ok();
        let s1 = ft_sign(&hw, &tok, !first, rng).ok();
        let harvested: Vec<&FtSignature> = s0.iter().chain(s1.iter()).collect();
        let ok0 = harvested.iter().any(|s| ft_cv(&ek, s, false));
        let ok1 = harvested.iter().any(|s| ft_cv(&ek, s, true));
        return Ok(ok0 && ok1);
    }
    // component by component with mixed bits, then the best assembly
    let mut comps = Vec::with_capacity(tok.0.len());
    for h in &tok.0 {
        let m = MOVES[rng.gen_range(0..MOVES.len())];
        let sig = apply(m, &hw, h, cfg.lambda, rng).unwrap_or(Signature {
            lambda: cfg.lambda,
            value: 0,
        });
        comps.push(sig);
    }
    let assembled = FtSignature(comps);
    Ok(ft_cv(&ek, &assembled, false) && ft_cv(&ek, &assembled, true))
}

/// Adversarial schedules against single and FT tokens; counts schedules
/// that end up with accepted signatures for both bits.
pub fn double_sign(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let broken = trials(cfg.trials, |t| {
        let mut rng = cfg.trial_rng(t);
        if t % 2 == 0 {
            single_schedule(t, cfg, &mut rng)
        } else {
            ft_schedule(cfg, &mut rng)
        }
    })?;
    let report = StatReport::gate("double-sign", cfg, Tally::count(broken), Gate::Cap, 0.0, 0.0);
    Ok(RunOutput::new(report))
}

/// Passes queries through while keeping a copy, as a receiver watching its
/// own traffic would.
struct Recorder<'a> {
    inner: &'a dyn OracleAccess,
    seen: Mutex<Vec<OracleQuery>>,
}

impl<'a> Recorder<'a> {
    fn new(inner: &'a dyn OracleAccess) -> Self {
        Self {
            inner,
            seen: Mutex::new(Vec::new()),
        }
    }

    fn last(&self) -> Option<OracleQuery> {
        self.seen.lock().unwrap().last().cloned()
    }
}

impl OracleAccess for Recorder<'_> {
    fn query(&self, q: &OracleQuery) -> std::result::Result<OracleAnswer, AccessError> {
        self.seen.lock().unwrap().push(q.clone());
        self.inner.query(q)
    }
}

fn entry(direction: Direction, message_type: MessageType, byte_length: usize, outcome: Outcome) -> TranscriptEntry {
    TranscriptEntry {
        round: 0,
        direction,
        message_type,
        byte_length,
        outcome,
    }
}

/// One generation up to the sender's reply; restarts the receiver message
/// if the sender aborts.
fn generate_otp(
    program: &OracleProgram,
    sk: &SkBundle,
    bed: &Testbed,
    hw: &Hardware,
    rng: &mut ChaCha20Rng,
) -> Result<(semiq_core::cotp::OtpReceiverState, TagBundle, SealedPayload)> {
    let pk = otp_setup(sk);
    loop {
        let (state, tags) = otp_gen_receiver_msg(&pk, hw, rng)?;
        match otp_gen_sender_reply(program, sk, &pk, &tags, &bed.mpk(), rng) {
            Ok(ct) => return Ok((state, tags, ct)),
            Err(OtpError::Token(TokError::XInSubspaceAbort)) => {
                for t in state.tokens() {
                    let _ = ft_discard(hw, t);
                }
            }
            Err(e) => return Err(e.into()),
        }
    }
}

struct OtpTrial {
    honest: bool,
    sound: bool,
    transcript: Vec<TranscriptEntry>,
}

/// Noisy one-time programs: honest evaluation succeeds, and every second
/// attempt on a different input fails.
pub fn otp_run(cfg: &ExperimentConfig, bed: &Testbed) -> Result<RunOutput> {
    cfg.validate()?;
    let n = cfg.n;
    let params = ft_params(cfg.delta, cfg.eps_target / n as f64)?;
    let runs = trials(cfg.trials, |t| {
        let mut rng = cfg.trial_rng(t);
        let hw = Hardware::with_noise(cfg.p_fail());
        let program = corpus::random_program(&mut rng, n as u16, 4, 0);
        let sealed = OracleProgram::Plain(program.clone());
        let sk = SkBundle::generate(&mut rng, n, cfg.lambda, params.w);
        let (mut state, tags, ct) = generate_otp(&sealed, &sk, bed, &hw, &mut rng)?;
        let ct_len = ct.len();
        state.receive(ct);
        let session = bed.session();
        let recorder = Recorder::new(session.as_ref());
        let x = random_bits(&mut rng, n);
        let (_, expected) = eval_program(&program, &RamImage::default(), &x)?;
        let got = otp_eval(&mut state, &x, &recorder, &hw, &mut rng);
        let honest = got.as_ref().is_ok_and(|y| *y == expected);
        let x2 = other_input(&mut rng, &x);
        let again = otp_eval(&mut state, &x2, &recorder, &hw, &mut rng);
        let replay = recorder.last().map(|mut q| {
            q.x = x2.clone();
            session.query(&q)
        });
        let sound = again.is_err() && matches!(replay, Some(Ok(OracleAnswer::Bottom)));
        let query_len = recorder.last().map_or(0, |q| q.encode().len());
        let outcome = if honest { Outcome::Ok } else { Outcome::Bottom };
        let transcript = vec![
            entry(Direction::ReceiverToSender, MessageType::Tags, tags.encode().len(), Outcome::Ok),
            entry(Direction::SenderToReceiver, MessageType::Sealed, ct_len, Outcome::Ok),
            entry(Direction::ReceiverToOracle, MessageType::Query, query_len, Outcome::Ok),
            entry(Direction::OracleToReceiver, MessageType::Answer, 0, outcome),
        ];
        Ok(OtpTrial {
            honest,
            sound,
            transcript,
        })
    })?;
    let sound = runs.iter().all(|r| r.sound);
    let report = StatReport::gate(
        "otp-run",
        cfg,
        Tally::count(runs.iter().map(|r| r.honest)),
        Gate::AtLeast,
        1.0 - cfg.eps_target,
        0.0,
    )
    .and(sound);
    let mut out = RunOutput::new(report).note(format!(
        "n={} w={} second attempts rejected: {}",
        n,
        params.w,
        runs.iter().filter(|r| r.sound).count()
    ));
    out.transcript.entries = runs.into_iter().next().map(|r| r.transcript).unwrap_or_default();
    Ok(out)
}

/// Byte-level surgery on sealed payloads between two generations; every
/// forged query must come back `⊥`.
pub fn splice(cfg: &ExperimentConfig, bed: &Testbed) -> Result<RunOutput> {
    cfg.validate()?;
    let n = cfg.n.min(8);
    let runs = trials(cfg.trials, |t| {
        let mut rng = cfg.trial_rng(t);
        let hw = Hardware::noiseless();
        let oracle = bed.session();
        let gen = |rng: &mut ChaCha20Rng| -> Result<_> {
            let program = corpus::random_program(rng, n as u16, 4, 0);
            let sk = SkBundle::generate(rng, n, cfg.lambda, 1);
            let (state, _, ct) = generate_otp(&OracleProgram::Plain(program), &sk, bed, &hw, rng)?;
            Ok((state, ct))
        };
        let (a, ct_a) = gen(&mut rng)?;
        let (_, ct_b) = gen(&mut rng)?;
        let x = random_bits(&mut rng, n);
        let sigs = sign_bits(a.tokens(), &x, &hw, &mut rng)?;
        let query = |ct: Vec<u8>| OracleQuery {
            x: x.clone(),
            ct: SealedPayload::from_bytes(ct),
            sigs: sigs.clone(),
            next_tags: TagBundle(Vec::new()),
        };
        let control = !oracle.query(&query(ct_a.as_bytes().to_vec())).map_or(true, |a| a.is_bottom());
        let (a_bytes, b_bytes) = (ct_a.as_bytes(), ct_b.as_bytes());
        let forged = match t % 4 {
            0 => {
                // A's head, B's tail
                let cut = rng.gen_range(1..a_bytes.len().min(b_bytes.len()));
                [&a_bytes[..cut], &b_bytes[cut..]].concat()
            }
            1 => b_bytes.to_vec(),
            2 => {
                let mut v = a_bytes.to_vec();
                let i = rng.gen_range(0..v.len());
                v[i] ^= 1 << rng.gen_range(0..8);
                v
            }
            _ => {
                let mut v = a_bytes.to_vec();
                if rng.gen::<bool>() {
                    v.truncate(rng.gen_range(0..v.len()));
                } else {
                    v.extend_from_slice(&b_bytes[..rng.gen_range(1..b_bytes.len())]);
                }
                v
            }
        };
        let accepted = !oracle.query(&query(forged)).map_or(true, |a| a.is_bottom());
        Ok((control, accepted))
    })?;
    let controls = runs.iter().all(|r| r.0);
    let report = StatReport::gate("splice", cfg, Tally::count(runs.iter().map(|r| r.1)), Gate::Cap, 0.0, 0.0).and(controls);
    Ok(RunOutput::new(report))
}

fn app_params(lambda: u16, w: u64) -> ChainParams {
    ChainParams {
        lambda,
        w,
        digest_bits: APP_DIGEST_BITS,
    }
}

/// Noiseless accumulator chain of `ell` rounds adding 1 each round.
pub fn ram_accumulator(cfg: &ExperimentConfig, bed: &Testbed) -> Result<RunOutput> {
    cfg.validate()?;
    let mut rng = cfg.trial_rng(0);
    let hw = Hardware::noiseless();
    let n = cfg.n.min(8) as u16;
    let params = ChainParams {
        lambda: cfg.lambda,
        w: 1,
        digest_bits: DEFAULT_DIGEST_BITS,
    };
    let mut log = Transcript::new();
    let mut state = setup(|| {
        log.entries.clear();
        Ok(ro_send(corpus::accumulator(n), RamImage::zeroed(1), params, bed.mpk(), &hw, &mut rng, Some(&mut log))?)
    })?;
    let per_round = state.signed_bits() * params.w as usize;
    let oracle = bed.session();
    let one = BitString::from_uint(1, n as usize);
    let mut outputs = Vec::new();
    let mut live_ok = true;
    for _ in 0..cfg.ell {
        match ro_eval_logged(&mut state, &one, oracle.as_ref(), &hw, &mut rng, Some(&mut log)) {
            Ok(y) => outputs.push(y.to_uint()),
            Err(_) => break,
        }
        live_ok &= hw.live() == per_round;
    }
    let expected: Vec<u64> = (1..=cfg.ell).map(|i| i % 256).collect();
    let matched = outputs.iter().zip(&expected).filter(|(a, b)| a == b).count() as u64;
    let report = StatReport::gate("ram-run", cfg, Tally::new(matched, cfg.ell), Gate::AtLeast, 1.0, 0.0).and(live_ok);
    let mut out = RunOutput::new(report).note(format!(
        "outputs: {}",
        outputs.iter().map(u64::to_string).collect::<Vec<_>>().join(" ")
    ));
    out.transcript = log;
    Ok(out)
}

/// Random corpus programs run through the chain and the reference
/// interpreter side by side.
pub fn ram_equivalence(cfg: &ExperimentConfig, bed: &Testbed) -> Result<RunOutput> {
    cfg.validate()?;
    let params = ChainParams {
        lambda: cfg.lambda,
        w: 1,
        digest_bits: DEFAULT_DIGEST_BITS,
    };
    let runs = trials(cfg.trials, |t| {
        let mut rng = cfg.trial_rng(t);
        let hw = Hardware::noiseless();
        let n = rng.gen_range(1..=8u16);
        let m = rng.gen_range(1..=8u16);
        let ram_len = rng.gen_range(1..=8u16);
        let program = corpus::random_program(&mut rng, n, m, ram_len);
        let mut ram = RamImage::zeroed(ram_len as usize);
        let mut state = setup(|| Ok(ro_send(program.clone(), ram.clone(), params, bed.mpk(), &hw, &mut rng, None)?))?;
        let per_round = state.signed_bits() * params.w as usize;
        let oracle = bed.session();
        let mut same = true;
        let mut live_ok = hw.live() == per_round;
        for _ in 0..cfg.ell {
            let x = random_bits(&mut rng, n as usize);
            let (next, want) = eval_program(&program, &ram, &x)?;
            ram = next;
            same &= ro_eval(&mut state, &x, oracle.as_ref(), &hw, &mut rng).is_ok_and(|y| y == want);
            live_ok &= hw.live() == per_round;
            if !same {
                break;
            }
        }
        Ok((same, live_ok))
    })?;
    let live_ok = runs.iter().all(|r| r.1);
    let report = StatReport::gate(
        "ram-equivalence",
        cfg,
        Tally::count(runs.iter().map(|r| r.0)),
        Gate::AtLeast,
        1.0,
        0.0,
    )
    .and(live_ok);
    Ok(RunOutput::new(report))
}

/// Per-token corruption making one evaluation of `signed` tokens fail with
/// probability `p_eval` when `w = 1`.
pub fn per_token_noise(p_eval: f64, signed: usize) -> f64 {
    1.0 - (1.0 - p_eval).powf(1.0 / signed as f64)
}

/// Chains of `ell` rounds whose evaluations each fail with probability
/// `epsTarget`; the chain failure rate should stay below `ell·epsTarget`.
pub fn ram_failure(cfg: &ExperimentConfig, bed: &Testbed) -> Result<RunOutput> {
    cfg.validate()?;
    let n = cfg.n.min(8) as u16;
    let params = app_params(cfg.lambda, 1);
    let signed = n as usize + APP_DIGEST_BITS as usize;
    let p_fail = per_token_noise(cfg.eps_target, signed);
    let failed = trials(cfg.trials, |t| {
        let mut rng = cfg.trial_rng(t);
        let hw = Hardware::with_noise(p_fail);
        let mut state = setup(|| Ok(ro_send(corpus::accumulator(n), RamImage::zeroed(1), params, bed.mpk(), &hw, &mut rng, None)?))?;
        let oracle = bed.session();
        for _ in 0..cfg.ell {
            let x = random_bits(&mut rng, n as usize);
            if ro_eval(&mut state, &x, oracle.as_ref(), &hw, &mut rng).is_err() {
                return Ok(true);
            }
        }
        Ok(false)
    })?;
    let bound = (cfg.ell as f64 * cfg.eps_target).min(1.0);
    let report = StatReport::gate("ram-failure", cfg, Tally::count(failed), Gate::AtMost, bound, 0.0);
    Ok(RunOutput::new(report).note(format!("per-token pFail={p_fail:.6e} over {signed} signed bits")))
}

/// Noisy FT chains sized for an overall failure target; counts the
/// underlying tokens each completed chain consumed.
pub fn ram_overhead(cfg: &ExperimentConfig, bed: &Testbed) -> Result<RunOutput> {
    cfg.validate()?;
    let n = cfg.n.min(8) as u16;
    let signed = n as u64 + u64::from(APP_DIGEST_BITS);
    let ft = ft_params(cfg.delta, cfg.eps_target / (cfg.ell * signed) as f64)?;
    let params = app_params(cfg.lambda, ft.w);
    let expected = cfg.ell * signed * ft.w;
    let runs = trials(cfg.trials, |t| {
        let mut rng = cfg.trial_rng(t);
        let hw = Hardware::with_noise(cfg.p_fail());
        let mut state = setup(|| Ok(ro_send(corpus::accumulator(n), RamImage::zeroed(1), params, bed.mpk(), &hw, &mut rng, None)?))?;
        let oracle = bed.session();
        for _ in 0..cfg.ell {
            let x = random_bits(&mut rng, n as usize);
            if ro_eval(&mut state, &x, oracle.as_ref(), &hw, &mut rng).is_err() {
                return Ok((true, true));
            }
        }
        let accounted = hw.consumed() == expected && hw.live() as u64 == signed * ft.w;
        Ok((false, accounted))
    })?;
    let accounted = runs.iter().all(|r| r.1);
    let report = StatReport::gate(
        "ram-overhead",
        cfg,
        Tally::count(runs.iter().map(|r| r.0)),
        Gate::AtMost,
        cfg.eps_target,
        0.0,
    )
    .and(accounted);
    Ok(RunOutput::new(report).note(format!("w={} tokens per chain={expected}", ft.w)))
}

fn secrets(rng: &mut ChaCha20Rng) -> ([u8; 4], [u8; 4]) {
    let s0: [u8; 4] = rng.gen();
    let mut s1: [u8; 4] = rng.gen();
    s1[0] = !s0[0];
    (s0, s1)
}

/// Honest one-time memory reads under noise, FT sized for `epsTarget`.
pub fn otm_demo(cfg: &ExperimentConfig, bed: &Testbed) -> Result<RunOutput> {
    cfg.validate()?;
    let signed = 2 + APP_DIGEST_BITS as usize;
    let ft = ft_params(cfg.delta, cfg.eps_target / signed as f64)?;
    let params = app_params(cfg.lambda, ft.w);
    let read = trials(cfg.trials, |t| {
        let mut rng = cfg.trial_rng(t);
        let hw = Hardware::with_noise(cfg.p_fail());
        let (s0, s1) = secrets(&mut rng);
        let mut state = setup(|| Ok(otm_prep_state(&s0, &s1, params, bed.mpk(), &hw, &mut rng)?))?;
        let alpha = rng.gen::<bool>();
        let want = if alpha { s1 } else { s0 };
        let session = bed.session();
        let got = otm_read_state(&mut state, Some(alpha), session.as_ref(), &hw, &mut rng);
        Ok(matches!(got, Ok(Some(s)) if s == want))
    })?;
    let report = StatReport::gate("otm-demo", cfg, Tally::count(read), Gate::AtLeast, 1.0 - cfg.eps_target, 0.0);
    Ok(RunOutput::new(report).note(format!("w={}", ft.w)))
}

/// Scripted attacks on noiseless one-time memories. Counts memories that
/// gave up both secrets; empty reads must leave the memory readable.
pub fn otm_adversary(cfg: &ExperimentConfig, bed: &Testbed) -> Result<RunOutput> {
    cfg.validate()?;
    let params = app_params(cfg.lambda, 1);
    let runs = trials(cfg.trials, |t| {
        let mut rng = cfg.trial_rng(t);
        let hw = Hardware::noiseless();
        let (s0, s1) = secrets(&mut rng);
        let mut state = setup(|| Ok(otm_prep_state(&s0, &s1, params, bed.mpk(), &hw, &mut rng)?))?;
        let session = bed.session();
        let recorder = Recorder::new(session.as_ref());
        let a = rng.gen::<bool>();
        let mut got: BTreeSet<Vec<u8>> = BTreeSet::new();
        let mut preserved = true;
        let read = |st: &mut _, alpha, rng: &mut ChaCha20Rng| {
            otm_read_state(st, alpha, &recorder, &hw, rng).ok().flatten()
        };
        match t % 5 {
            0 => {
                got.extend(read(&mut state, Some(a), &mut rng));
                got.extend(read(&mut state, Some(!a), &mut rng));
            }
            1 => {
                let mut copy = state.clone();
                got.extend(read(&mut state, Some(a), &mut rng));
                got.extend(read(&mut copy, Some(!a), &mut rng));
            }
            2 => {
                for _ in 0..rng.gen_range(1..=3) {
                    preserved &= read(&mut state, None, &mut rng).is_none();
                }
                let first = read(&mut state, Some(a), &mut rng);
                preserved &= first.as_deref() == Some(if a { &s1[..] } else { &s0[..] });
                got.extend(first);
                got.extend(read(&mut state, Some(!a), &mut rng));
            }
            3 => {
                got.extend(read(&mut state, Some(a), &mut rng));
                if let Some(mut q) = recorder.last() {
                    q.x = BitString::from_bits(vec![true, !a]);
                    if let Ok(OracleAnswer::Chain { y, .. }) = session.query(&q) {
                        if y.get(0) == Some(true) {
                            got.insert(y.slice(1, y.len()).to_bytes());
                        }
                    }
                }
            }
            _ => {
                preserved &= read(&mut state, None, &mut rng).is_none();
                let mut copy = state.clone();
                got.extend(read(&mut state, Some(a), &mut rng));
                got.extend(read(&mut copy, Some(!a), &mut rng));
            }
        }
        let both = got.contains(&s0[..]) && got.contains(&s1[..]);
        Ok((both, preserved))
    })?;
    let preserved = runs.iter().all(|r| r.1);
    let report = StatReport::gate(
        "otm-adversary",
        cfg,
        Tally::count(runs.iter().map(|r| r.0)),
        Gate::Cap,
        0.0,
        0.0,
    )
    .and(preserved);
    Ok(RunOutput::new(report))
}

fn random_point_function(rng: &mut ChaCha20Rng) -> Program {
    corpus::point_function(8, rng.gen())
}

/// Honest token-threaded chains of `ell` rounds, plus chains bricked by a
/// wrong token that must never answer again.
pub fn cp_chain(cfg: &ExperimentConfig, bed: &Testbed) -> Result<RunOutput> {
    cfg.validate()?;
    let params = ChainParams {
        lambda: cfg.lambda,
        w: 1,
        digest_bits: DEFAULT_DIGEST_BITS,
    };
    let runs = trials(cfg.trials, |t| {
        let mut rng = cfg.trial_rng(t);
        let hw = Hardware::noiseless();
        let circuit = random_point_function(&mut rng);
        let oracle = bed.session();
        let eval = |x: u64| eval_program(&circuit, &RamImage::default(), &BitString::from_uint(x, 8)).map(|r| r.1);
        let (mut state, mut token) = setup(|| Ok(cp_protect(&circuit, params, bed.mpk(), &hw, &mut rng)?))?;
        let mut correct = 0u64;
        for _ in 0..cfg.ell {
            let x: u8 = rng.gen();
            let want = eval(u64::from(x))?;
            match cp_eval(&mut state, &BitString::from_uint(u64::from(x), 8), &token, oracle.as_ref(), &hw, &mut rng) {
                Ok(Some((y, next))) if y == want => {
                    correct += 1;
                    token = next;
                }
                _ => break,
            }
        }
        // a second chain: a few honest rounds, one wrong token, then the right ones
        let (mut state, mut token) = setup(|| Ok(cp_protect(&circuit, params, bed.mpk(), &hw, &mut rng)?))?;
        let honest_rounds = rng.gen_range(0..3);
        let mut bricked = true;
        for _ in 0..honest_rounds {
            match cp_eval(&mut state, &BitString::zeros(8), &token, oracle.as_ref(), &hw, &mut rng) {
                Ok(Some((_, next))) => token = next,
                _ => bricked = false,
            }
        }
        let wrong: [u8; 32] = rng.gen();
        bricked &= matches!(cp_eval(&mut state, &BitString::zeros(8), &wrong, oracle.as_ref(), &hw, &mut rng), Ok(None));
        for _ in 0..3 {
            bricked &= matches!(cp_eval(&mut state, &BitString::zeros(8), &token, oracle.as_ref(), &hw, &mut rng), Ok(None));
        }
        Ok((correct, bricked))
    })?;
    let correct: u64 = runs.iter().map(|r| r.0).sum();
    let bricked = runs.iter().all(|r| r.1);
    let report = StatReport::gate(
        "cp-chain",
        cfg,
        Tally::new(correct, cfg.trials * cfg.ell),
        Gate::AtLeast,
        1.0,
        0.0,
    )
    .and(bricked);
    Ok(RunOutput::new(report))
}

/// Plays the pirate game with a built-in strategy. Passes when the win
/// rate stays within `0.02` of the trivial probability and no trial ever
/// produced two non-`⊥` answers.
pub fn cp_pirate(cfg: &ExperimentConfig, bed: &Testbed, strategy: &str) -> Result<RunOutput> {
    cfg.validate()?;
    strategy_by_name(strategy).ok_or_else(|| HarnessError::Strategy(strategy.to_string()))?;
    let spec = PirateGameSpec::point_functions();
    spec.validate()?;
    let p_triv = trivial_win_probability(&spec);
    let guesses = [spec.argmax_guess(0).0, spec.argmax_guess(1).0];
    let params = GameParams {
        chain: app_params(cfg.lambda, 1),
        p_fail: 0.0,
    };
    let games = trials(cfg.trials, |t| {
        let mut rng = cfg.trial_rng(t);
        let pirate = strategy_by_name(strategy).expect("checked above");
        let (p, f1, f2) = (bed.session(), bed.session(), bed.session());
        let sessions = GameSessions {
            pirate: p.as_ref(),
            f1: f1.as_ref(),
            f2: f2.as_ref(),
        };
        Ok(play_pirate_game(
            &spec,
            &guesses,
            pirate.as_ref(),
            &EvalOrGuess,
            &EvalOrGuess,
            t,
            sessions,
            bed.mpk(),
            &params,
            &mut rng,
        )?)
    })?;
    let single = games.iter().all(|g| g.non_bottom <= 1);
    let report = StatReport::gate(
        "cp-pirate",
        cfg,
        Tally::count(games.iter().map(|g| g.win)),
        Gate::Cap,
        p_triv + 0.02,
        0.0,
    )
    .and(single);
    let mut out = RunOutput::new(report).note(format!("strategy={strategy} pTriv={p_triv}"));
    out.games = games;
    Ok(out)
}
