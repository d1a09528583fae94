//! Deterministic programs evaluated by the oracle.
//!
//! A [`Program`] maps `(RAM, input bits)` to `(RAM', output bits)`. Most
//! programs are stack bytecode; the native kinds cover the one-time memory
//! and copy-protection RAM programs, which need PRF evaluation the bytecode
//! does not expose.
//!
//! Canonical encoding:
//!
//! ```text
//! version (1) || kind (1) || u16 LE n_input_bits || u16 LE m_output_bits
//!   || u16 LE ram_len || u32 LE code_len || code
//! ```

use alloc::vec::Vec;
use rand_core::RngCore;

use crate::bits::BitString;
use crate::codec::{DecodeError, Reader, Writer};
use crate::crypt::PrfKey;

pub const PROGRAM_VERSION: u8 = 1;
pub const DEFAULT_STEP_BUDGET: u64 = 1_000_000;
const MAX_STACK: usize = 256;

/// Width of the copy-protection chaining token in bits.
pub const CP_TOKEN_BITS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum VmError {
    #[error("step budget exceeded")]
    StepBudgetExceeded,
    #[error("malformed program: {0}")]
    MalformedProgram(&'static str),
    #[error("input has {got} bits, program expects {expected}")]
    InputLength { expected: usize, got: usize },
    #[error("RAM image has {got} bytes, program expects {expected}")]
    RamLength { expected: usize, got: usize },
}

impl From<DecodeError> for VmError {
    fn from(_: DecodeError) -> Self {
        VmError::MalformedProgram("encoding")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ProgramKind {
    Bytecode = 0,
    NativeOtm = 1,
    NativeCopyProt = 2,
    NativeNull = 3,
}

impl ProgramKind {
    fn from_u8(b: u8) -> Option<Self> {
        Some(match b {
            0 => Self::Bytecode,
            1 => Self::NativeOtm,
            2 => Self::NativeCopyProt,
            3 => Self::NativeNull,
            _ => return None,
        })
    }
}

/// Stack machine instructions. Values are bytes; jump targets are
/// instruction indices, and jumping to `len` halts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Halt,
    Push(u8),
    LoadIn(u16),
    LoadRam(u16),
    StoreRam(u16),
    And,
    Or,
    Xor,
    Not,
    Add8,
    Eq,
    Lt,
    /// Pops `v`, pushes bit `k` of `v`.
    Bit(u8),
    /// Pops `v`, jumps when `v == 0`.
    Jz(u16),
    Jmp(u16),
    /// Pops `v`, appends its low bit to the output.
    Emit,
    Dup,
    Swap,
    Drop,
}

impl Op {
    fn encode(&self, w: &mut Writer) {
        match *self {
            Op::Halt => w.u8(0x00),
            Op::Push(v) => w.u8(0x01).u8(v),
            Op::LoadIn(i) => w.u8(0x02).u16(i),
            Op::LoadRam(a) => w.u8(0x03).u16(a),
            Op::StoreRam(a) => w.u8(0x04).u16(a),
            Op::And => w.u8(0x05),
            Op::Or => w.u8(0x06),
            Op::Xor => w.u8(0x07),
            Op::Not => w.u8(0x08),
            Op::Add8 => w.u8(0x09),
            Op::Eq => w.u8(0x0a),
            Op::Lt => w.u8(0x0b),
            Op::Bit(k) => w.u8(0x0c).u8(k),
            Op::Jz(t) => w.u8(0x0d).u16(t),
            Op::Jmp(t) => w.u8(0x0e).u16(t),
            Op::Emit => w.u8(0x0f),
            Op::Dup => w.u8(0x10),
            Op::Swap => w.u8(0x11),
            Op::Drop => w.u8(0x12),
        };
    }

    fn decode(r: &mut Reader<'_>) -> Result<Op, DecodeError> {
        Ok(match r.u8()? {
            0x00 => Op::Halt,
            0x01 => Op::Push(r.u8()?),
            0x02 => Op::LoadIn(r.u16()?),
            0x03 => Op::LoadRam(r.u16()?),
            0x04 => Op::StoreRam(r.u16()?),
            0x05 => Op::And,
            0x06 => Op::Or,
            0x07 => Op::Xor,
            0x08 => Op::Not,
            0x09 => Op::Add8,
            0x0a => Op::Eq,
            0x0b => Op::Lt,
            0x0c => Op::Bit(r.u8()?),
            0x0d => Op::Jz(r.u16()?),
            0x0e => Op::Jmp(r.u16()?),
            0x0f => Op::Emit,
            0x10 => Op::Dup,
            0x11 => Op::Swap,
            0x12 => Op::Drop,
            _ => return Err(DecodeError::Invalid("opcode")),
        })
    }
}

/// Fixed-length RAM image.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct RamImage(pub Vec<u8>);

impl RamImage {
    pub fn zeroed(len: usize) -> Self {
        Self(alloc::vec![0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Program {
    kind: ProgramKind,
    code: Vec<u8>,
    n_input_bits: u16,
    m_output_bits: u16,
    ram_len: u16,
}

impl Program {
    pub fn bytecode(
        n_input_bits: u16,
        m_output_bits: u16,
        ram_len: u16,
        ops: &[Op],
    ) -> Result<Self, VmError> {
        let mut w = Writer::new();
        for op in ops {
            op.encode(&mut w);
        }
        let p = Self {
            kind: ProgramKind::Bytecode,
            code: w.finish(),
            n_input_bits,
            m_output_bits,
            ram_len,
        };
        p.validate()?;
        Ok(p)
    }

    /// Outputs `m` zero bits and leaves RAM untouched.
    pub fn null(n_input_bits: u16, m_output_bits: u16, ram_len: u16) -> Self {
        Self {
            kind: ProgramKind::NativeNull,
            code: Vec::new(),
            n_input_bits,
            m_output_bits,
            ram_len,
        }
    }

    /// One-time memory over two equal-length secrets.
    ///
    /// Input is two bits `[valid, b]`; `valid = 0` encodes the empty query.
    /// RAM is one byte, `0` while unread. Output is a flag bit followed by
    /// the secret bits (all zero when the flag is clear).
    pub fn one_time_memory(s0: &[u8], s1: &[u8]) -> Result<Self, VmError> {
        if s0.len() != s1.len() {
            return Err(VmError::MalformedProgram(
                "one-time memory secrets differ in length",
            ));
        }
        let m = 1 + 8 * s0.len();
        let m = u16::try_from(m).map_err(|_| VmError::MalformedProgram("secret too long"))?;
        let mut w = Writer::new();
        w.bytes(s0).bytes(s1);
        Ok(Self {
            kind: ProgramKind::NativeOtm,
            code: w.finish(),
            n_input_bits: 2,
            m_output_bits: m,
            ram_len: 1,
        })
    }

    /// Token-chained copy-protection wrapper around `circuit`.
    ///
    /// Input is `x || t` with `t` a 256-bit token; RAM is the round counter as
    /// an `i64`, `-1` once bricked. Output is a flag bit, then `C(x)`, then
    /// the next token.
    pub fn copy_protected(circuit: &Program, key: &PrfKey) -> Result<Self, VmError> {
        if circuit.kind != ProgramKind::Bytecode || circuit.ram_len != 0 {
            return Err(VmError::MalformedProgram(
                "copy-protected circuit must be stateless bytecode",
            ));
        }
        let n = usize::from(circuit.n_input_bits) + CP_TOKEN_BITS;
        let m = 1 + usize::from(circuit.m_output_bits) + CP_TOKEN_BITS;
        let too_wide = || VmError::MalformedProgram("circuit too wide");
        let mut w = Writer::new();
        w.raw(key.as_bytes()).bytes(&circuit.encode());
        Ok(Self {
            kind: ProgramKind::NativeCopyProt,
            code: w.finish(),
            n_input_bits: u16::try_from(n).map_err(|_| too_wide())?,
            m_output_bits: u16::try_from(m).map_err(|_| too_wide())?,
            ram_len: 8,
        })
    }

    pub fn kind(&self) -> ProgramKind {
        self.kind
    }

    pub fn n_input_bits(&self) -> usize {
        usize::from(self.n_input_bits)
    }

    pub fn m_output_bits(&self) -> usize {
        usize::from(self.m_output_bits)
    }

    pub fn ram_len(&self) -> usize {
        usize::from(self.ram_len)
    }

    pub fn ops(&self) -> Result<Vec<Op>, VmError> {
        if self.kind != ProgramKind::Bytecode {
            return Err(VmError::MalformedProgram("not bytecode"));
        }
        let mut r = Reader::new(&self.code);
        let mut ops = Vec::new();
        while r.remaining() > 0 {
            ops.push(Op::decode(&mut r)?);
        }
        Ok(ops)
    }

    fn otm_secrets(&self) -> Result<(&[u8], &[u8]), VmError> {
        let mut r = Reader::new(&self.code);
        let s0 = r.bytes()?;
        let s1 = r.bytes()?;
        r.finish()?;
        Ok((s0, s1))
    }

    fn cp_parts(&self) -> Result<(PrfKey, Program), VmError> {
        let mut r = Reader::new(&self.code);
        let key = PrfKey::from_bytes(r.array()?);
        let circuit = Program::decode(r.bytes()?)?;
        r.finish()?;
        Ok((key, circuit))
    }

    /// Structural checks shared by construction and decoding.
    pub fn validate(&self) -> Result<(), VmError> {
        match self.kind {
            ProgramKind::Bytecode => {
                let ops = self.ops()?;
                let len = ops.len();
                if len > usize::from(u16::MAX) {
                    return Err(VmError::MalformedProgram("too many instructions"));
                }
                for op in &ops {
                    match *op {
                        Op::LoadIn(i) if i >= self.n_input_bits => {
                            return Err(VmError::MalformedProgram("input index out of range"))
                        }
                        Op::LoadRam(a) | Op::StoreRam(a) if a >= self.ram_len => {
                            return Err(VmError::MalformedProgram("RAM address out of range"))
                        }
                        Op::Jz(t) | Op::Jmp(t) if usize::from(t) > len => {
                            return Err(VmError::MalformedProgram("jump target out of range"))
                        }
                        Op::Bit(k) if k > 7 => {
                            return Err(VmError::MalformedProgram("bit index out of range"))
                        }
                        _ => {}
                    }
                }
                Ok(())
            }
            ProgramKind::NativeOtm => {
                let (s0, s1) = self.otm_secrets()?;
                if s0.len() != s1.len()
                    || self.n_input_bits != 2
                    || self.ram_len != 1
                    || self.m_output_bits() != 1 + 8 * s0.len()
                {
                    return Err(VmError::MalformedProgram("one-time memory shape"));
                }
                Ok(())
            }
            ProgramKind::NativeCopyProt => {
                let (_, c) = self.cp_parts()?;
                if c.kind != ProgramKind::Bytecode
                    || c.ram_len != 0
                    || self.n_input_bits() != c.n_input_bits() + CP_TOKEN_BITS
                    || self.m_output_bits() != 1 + c.m_output_bits() + CP_TOKEN_BITS
                    || self.ram_len != 8
                {
                    return Err(VmError::MalformedProgram("copy-protection shape"));
                }
                Ok(())
            }
            ProgramKind::NativeNull => {
                if self.code.is_empty() {
                    Ok(())
                } else {
                    Err(VmError::MalformedProgram("null program carries code"))
                }
            }
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(PROGRAM_VERSION)
            .u8(self.kind as u8)
            .u16(self.n_input_bits)
            .u16(self.m_output_bits)
            .u16(self.ram_len)
            .bytes(&self.code);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, VmError> {
        let mut r = Reader::new(bytes);
        r.version(PROGRAM_VERSION)?;
        let kind =
            ProgramKind::from_u8(r.u8()?).ok_or(VmError::MalformedProgram("unknown kind"))?;
        let n_input_bits = r.u16()?;
        let m_output_bits = r.u16()?;
        let ram_len = r.u16()?;
        let code = r.bytes()?.to_vec();
        r.finish()?;
        let p = Self {
            kind,
            code,
            n_input_bits,
            m_output_bits,
            ram_len,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Evaluates with the default step budget.
pub fn eval_program(
    p: &Program,
    ram: &RamImage,
    input: &BitString,
) -> Result<(RamImage, BitString), VmError> {
    eval_program_with_budget(p, ram, input, DEFAULT_STEP_BUDGET)
}

pub fn eval_program_with_budget(
    p: &Program,
    ram: &RamImage,
    input: &BitString,
    budget: u64,
) -> Result<(RamImage, BitString), VmError> {
    if input.len() != p.n_input_bits() {
        return Err(VmError::InputLength {
            expected: p.n_input_bits(),
            got: input.len(),
        });
    }
    if ram.len() != p.ram_len() {
        return Err(VmError::RamLength {
            expected: p.ram_len(),
            got: ram.len(),
        });
    }
    match p.kind {
        ProgramKind::Bytecode => run_bytecode(p, ram, input, budget),
        ProgramKind::NativeNull => Ok((ram.clone(), BitString::zeros(p.m_output_bits()))),
        ProgramKind::NativeOtm => run_otm(p, ram, input),
        ProgramKind::NativeCopyProt => run_copy_protected(p, ram, input, budget),
    }
}

fn run_bytecode(
    p: &Program,
    ram: &RamImage,
    input: &BitString,
    budget: u64,
) -> Result<(RamImage, BitString), VmError> {
    let ops = p.ops()?;
    let mut ram = ram.clone();
    let mut out = BitString::new();
    let mut stack: Vec<u8> = Vec::with_capacity(16);
    let mut pc = 0usize;
    let mut steps = 0u64;

    fn pop(stack: &mut Vec<u8>) -> Result<u8, VmError> {
        stack
            .pop()
            .ok_or(VmError::MalformedProgram("stack underflow"))
    }
    fn push(stack: &mut Vec<u8>, v: u8) -> Result<(), VmError> {
        if stack.len() >= MAX_STACK {
            return Err(VmError::MalformedProgram("stack overflow"));
        }
        stack.push(v);
        Ok(())
    }

    while pc < ops.len() {
        steps += 1;
        if steps > budget {
            return Err(VmError::StepBudgetExceeded);
        }
        let op = ops[pc];
        pc += 1;
        match op {
            Op::Halt => break,
            Op::Push(v) => push(&mut stack, v)?,
            Op::LoadIn(i) => {
                let bit = input
                    .get(usize::from(i))
                    .ok_or(VmError::MalformedProgram("input index out of range"))?;
                push(&mut stack, u8::from(bit))?
            }
            Op::LoadRam(a) => {
                let v = *ram
                    .0
                    .get(usize::from(a))
                    .ok_or(VmError::MalformedProgram("RAM address out of range"))?;
                push(&mut stack, v)?
            }
            Op::StoreRam(a) => {
                let v = pop(&mut stack)?;
                *ram.0
                    .get_mut(usize::from(a))
                    .ok_or(VmError::MalformedProgram("RAM address out of range"))? = v;
            }
            Op::And | Op::Or | Op::Xor | Op::Add8 | Op::Eq | Op::Lt => {
                let b = pop(&mut stack)?;
                let a = pop(&mut stack)?;
                let v = match op {
                    Op::And => a & b,
                    Op::Or => a | b,
                    Op::Xor => a ^ b,
                    Op::Add8 => a.wrapping_add(b),
                    Op::Eq => u8::from(a == b),
                    _ => u8::from(a < b),
                };
                push(&mut stack, v)?
            }
            Op::Not => {
                let v = pop(&mut stack)?;
                push(&mut stack, !v)?
            }
            Op::Bit(k) => {
                let v = pop(&mut stack)?;
                push(&mut stack, (v >> (k & 7)) & 1)?
            }
            Op::Jz(t) => {
                if pop(&mut stack)? == 0 {
                    pc = usize::from(t);
                }
            }
            Op::Jmp(t) => pc = usize::from(t),
            Op::Emit => {
                let v = pop(&mut stack)?;
                if out.len() >= p.m_output_bits() {
                    return Err(VmError::MalformedProgram("too many output bits"));
                }
                out.push(v & 1 == 1)
            }
            Op::Dup => {
                let v = *stack
                    .last()
                    .ok_or(VmError::MalformedProgram("stack underflow"))?;
                push(&mut stack, v)?
            }
            Op::Swap => {
                let b = pop(&mut stack)?;
                let a = pop(&mut stack)?;
                stack.push(b);
                stack.push(a);
            }
            Op::Drop => {
                pop(&mut stack)?;
            }
        }
    }
    if out.len() != p.m_output_bits() {
        return Err(VmError::MalformedProgram("too few output bits"));
    }
    Ok((ram, out))
}

fn run_otm(
    p: &Program,
    ram: &RamImage,
    input: &BitString,
) -> Result<(RamImage, BitString), VmError> {
    let (s0, s1) = p.otm_secrets()?;
    let unread = ram.0[0] == 0;
    let valid = input.get(0) == Some(true);
    if unread && valid {
        let secret = if input.get(1) == Some(true) { s1 } else { s0 };
        let mut out = BitString::from_bits(alloc::vec![true]);
        out.extend_from(&BitString::from_bytes(secret));
        Ok((RamImage(alloc::vec![1]), out))
    } else {
        Ok((ram.clone(), BitString::zeros(p.m_output_bits())))
    }
}

fn run_copy_protected(
    p: &Program,
    ram: &RamImage,
    input: &BitString,
    budget: u64,
) -> Result<(RamImage, BitString), VmError> {
    let (key, circuit) = p.cp_parts()?;
    let mut counter = [0u8; 8];
    counter.copy_from_slice(&ram.0);
    let round = i64::from_le_bytes(counter);
    let bottom = BitString::zeros(p.m_output_bits());
    if round < 0 {
        return Ok((ram.clone(), bottom));
    }
    let n = circuit.n_input_bits();
    let x = input.slice(0, n);
    let t = input.slice(n, n + CP_TOKEN_BITS).to_bytes();
    if t[..] != key.prf(round as u64)[..] {
        return Ok((RamImage((-1i64).to_le_bytes().to_vec()), bottom));
    }
    let (_, y) = run_bytecode(&circuit, &RamImage::default(), &x, budget)?;
    let mut out = BitString::from_bits(alloc::vec![true]);
    out.extend_from(&y);
    out.extend_from(&BitString::from_bytes(&key.prf(round as u64 + 1)));
    Ok((RamImage((round + 1).to_le_bytes().to_vec()), out))
}

/// Programs used by the tests, the harness and the pirate game.
pub mod corpus {
    use super::*;

    /// `n` bits in, the same `n` bits out.
    pub fn identity(n: u16) -> Program {
        let ops: Vec<Op> = (0..n)
            .flat_map(|i| [Op::LoadIn(i), Op::Emit])
            .chain([Op::Halt])
            .collect();
        Program::bytecode(n, n, 0, &ops).expect("identity program is well formed")
    }

    /// Pushes the input read MSB-first as an integer (mod 256).
    fn push_input_value(n: u16, ops: &mut Vec<Op>) {
        ops.push(Op::Push(0));
        for i in 0..n {
            ops.extend([Op::Dup, Op::Add8, Op::LoadIn(i), Op::Add8]);
        }
    }

    /// One RAM byte; `RAM += int(input)`, output is the new RAM byte MSB-first.
    pub fn accumulator(n: u16) -> Program {
        let mut ops = alloc::vec![Op::LoadRam(0)];
        push_input_value(n, &mut ops);
        ops.extend([Op::Add8, Op::StoreRam(0)]);
        for k in (0..8).rev() {
            ops.extend([Op::LoadRam(0), Op::Bit(k), Op::Emit]);
        }
        ops.push(Op::Halt);
        Program::bytecode(n, 8, 1, &ops).expect("accumulator program is well formed")
    }

    /// Outputs `1` iff the `n`-bit input (MSB-first, `n <= 8`) equals `target`.
    pub fn point_function(n: u16, target: u8) -> Program {
        assert!(n <= 8);
        let mut ops = Vec::new();
        push_input_value(n, &mut ops);
        ops.extend([Op::Push(target), Op::Eq, Op::Emit, Op::Halt]);
        Program::bytecode(n, 1, 0, &ops).expect("point function is well formed")
    }

    /// Spins forever; only the step budget stops it.
    pub fn infinite_loop(n: u16) -> Program {
        Program::bytecode(n, 0, 0, &[Op::Jmp(0)]).expect("loop program is well formed")
    }

    fn random_expr<R: RngCore + ?Sized>(
        rng: &mut R,
        n: u16,
        ram_len: u16,
        depth: u32,
        ops: &mut Vec<Op>,
    ) {
        let choice = if depth == 0 {
            rng.next_u32() % 3
        } else {
            rng.next_u32() % 6
        };
        match choice {
            0 => ops.push(Op::Push(rng.next_u32() as u8)),
            1 if n > 0 => ops.push(Op::LoadIn((rng.next_u32() % u32::from(n)) as u16)),
            2 if ram_len > 0 => ops.push(Op::LoadRam((rng.next_u32() % u32::from(ram_len)) as u16)),
            3 => {
                random_expr(rng, n, ram_len, depth - 1, ops);
                ops.push(if rng.next_u32() % 2 == 0 {
                    Op::Not
                } else {
                    Op::Bit((rng.next_u32() % 8) as u8)
                });
            }
            4 | 5 => {
                random_expr(rng, n, ram_len, depth - 1, ops);
                random_expr(rng, n, ram_len, depth - 1, ops);
                const BIN: [Op; 6] = [Op::And, Op::Or, Op::Xor, Op::Add8, Op::Eq, Op::Lt];
                ops.push(BIN[(rng.next_u32() % 6) as usize]);
            }
            _ => ops.push(Op::Push(rng.next_u32() as u8)),
        }
    }

    /// Random terminating program: straight-line statements plus forward
    /// conditional skips over RAM updates. Emits exactly `m` bits.
    pub fn random_program<R: RngCore + ?Sized>(
        rng: &mut R,
        n: u16,
        m: u16,
        ram_len: u16,
    ) -> Program {
        let mut ops = Vec::new();
        let mut emitted = 0u16;
        let statements = 4 + rng.next_u32() % 8;
        for _ in 0..statements {
            match rng.next_u32() % 3 {
                0 if ram_len > 0 => {
                    random_expr(rng, n, ram_len, 3, &mut ops);
                    ops.push(Op::StoreRam((rng.next_u32() % u32::from(ram_len)) as u16));
                }
                1 if ram_len > 0 => {
                    // if (cond) { RAM[a] = expr }
                    random_expr(rng, n, ram_len, 2, &mut ops);
                    let jz_at = ops.len();
                    ops.push(Op::Jz(0));
                    random_expr(rng, n, ram_len, 2, &mut ops);
                    ops.push(Op::StoreRam((rng.next_u32() % u32::from(ram_len)) as u16));
                    ops[jz_at] = Op::Jz(ops.len() as u16);
                }
                _ if emitted < m => {
                    random_expr(rng, n, ram_len, 3, &mut ops);
                    ops.push(Op::Emit);
                    emitted += 1;
                }
                _ => {}
            }
        }
        while emitted < m {
            random_expr(rng, n, ram_len, 2, &mut ops);
            ops.push(Op::Emit);
            emitted += 1;
        }
        ops.push(Op::Halt);
        Program::bytecode(n, m, ram_len, &ops).expect("generated program is well formed")
    }
}

#[cfg(test)]
mod tests {
    use super::corpus::*;
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn bits(s: &str) -> BitString {
        BitString::parse(s).unwrap()
    }

    #[test]
    fn identity_program() {
        let p = identity(4);
        let (ram, out) = eval_program(&p, &RamImage::default(), &bits("1010")).unwrap();
        assert_eq!(ram, RamImage::default());
        assert_eq!(out, bits("1010"));
    }

    #[test]
    fn accumulator_program() {
        let p = accumulator(4);
        let (ram, out) = eval_program(&p, &RamImage(alloc::vec![0]), &bits("0001")).unwrap();
        assert_eq!(ram.0, [1]);
        assert_eq!(out, bits("00000001"));
    }

    #[test]
    fn accumulator_sequence() {
        let p = accumulator(4);
        let mut ram = RamImage(alloc::vec![0]);
        let mut seen = Vec::new();
        for _ in 0..3 {
            let (next, _) = eval_program(&p, &ram, &bits("0001")).unwrap();
            ram = next;
            seen.push(ram.0[0]);
        }
        assert_eq!(seen, [1, 2, 3]);
    }

    #[test]
    fn point_function_program() {
        let p = point_function(8, 0x5a);
        for x in 0u64..256 {
            let (_, out) =
                eval_program(&p, &RamImage::default(), &BitString::from_uint(x, 8)).unwrap();
            assert_eq!(out.get(0), Some(x == 0x5a));
        }
    }

    #[test]
    fn step_budget_stops_loops() {
        let p = infinite_loop(1);
        assert_eq!(
            eval_program(&p, &RamImage::default(), &bits("0")),
            Err(VmError::StepBudgetExceeded)
        );
        assert_eq!(
            eval_program_with_budget(&p, &RamImage::default(), &bits("0"), 10),
            Err(VmError::StepBudgetExceeded)
        );
    }

    #[test]
    fn shape_errors() {
        let p = identity(4);
        assert!(matches!(
            eval_program(&p, &RamImage::default(), &bits("101")),
            Err(VmError::InputLength {
                expected: 4,
                got: 3
            })
        ));
        assert!(matches!(
            eval_program(&p, &RamImage(alloc::vec![0]), &bits("1010")),
            Err(VmError::RamLength { .. })
        ));
        assert!(Program::bytecode(1, 1, 0, &[Op::LoadIn(1), Op::Emit]).is_err());
        assert!(Program::bytecode(1, 1, 0, &[Op::Jmp(5)]).is_err());
        let underflow = Program::bytecode(1, 1, 0, &[Op::Emit]).unwrap();
        assert!(matches!(
            eval_program(&underflow, &RamImage::default(), &bits("1")),
            Err(VmError::MalformedProgram(_))
        ));
    }

    #[test]
    fn codec_round_trips_and_rejects_truncation() {
        for p in [identity(4), accumulator(4), Program::null(3, 2, 1)] {
            let enc = p.encode();
            assert_eq!(Program::decode(&enc).unwrap(), p);
            for cut in 0..enc.len() {
                assert!(Program::decode(&enc[..cut]).is_err(), "cut at {cut}");
            }
        }
        let mut enc = identity(2).encode();
        enc[0] = 9;
        assert!(Program::decode(&enc).is_err());
    }

    #[test]
    fn otm_program_semantics() {
        let p = Program::one_time_memory(b"A", b"B").unwrap();
        let fresh = RamImage(alloc::vec![0]);
        let (ram, out) = eval_program(&p, &fresh, &bits("11")).unwrap();
        assert_eq!(ram.0, [1]);
        assert_eq!(out, bits("1").concat(&BitString::from_bytes(b"B")));
        // empty query leaves state alone
        let (ram, out) = eval_program(&p, &fresh, &bits("01")).unwrap();
        assert_eq!(ram, fresh);
        assert_eq!(out.get(0), Some(false));
        // read after read
        let (_, out) = eval_program(&p, &RamImage(alloc::vec![1]), &bits("10")).unwrap();
        assert_eq!(out, BitString::zeros(9));
        assert!(Program::one_time_memory(b"A", b"BC").is_err());
    }

    #[test]
    fn copy_protected_semantics() {
        let key = PrfKey::from_bytes([3; 32]);
        let p = Program::copy_protected(&point_function(8, 7), &key).unwrap();
        let t0 = BitString::from_bytes(&key.prf(0));
        let x = BitString::from_uint(7, 8);
        let (ram, out) = eval_program(&p, &RamImage::zeroed(8), &x.concat(&t0)).unwrap();
        assert_eq!(i64::from_le_bytes(ram.0.clone().try_into().unwrap()), 1);
        assert_eq!(out.get(0), Some(true));
        assert_eq!(out.get(1), Some(true));
        assert_eq!(out.slice(2, 2 + 256).to_bytes(), key.prf(1));
        // replaying the stale token bricks the program for good
        let (bricked, out) = eval_program(&p, &ram, &x.concat(&t0)).unwrap();
        assert_eq!(
            i64::from_le_bytes(bricked.0.clone().try_into().unwrap()),
            -1
        );
        assert_eq!(out.get(0), Some(false));
        let t1 = BitString::from_bytes(&key.prf(1));
        let (still, out) = eval_program(&p, &bricked, &x.concat(&t1)).unwrap();
        assert_eq!(still, bricked);
        assert_eq!(out.get(0), Some(false));
        assert_eq!(Program::decode(&p.encode()).unwrap(), p);
    }

    #[test]
    fn random_corpus_is_pure() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        for _ in 0..50 {
            let p = random_program(&mut rng, 4, 4, 3);
            assert_eq!(Program::decode(&p.encode()).unwrap(), p);
            for _ in 0..20 {
                let ram = RamImage((0..3).map(|_| rng.next_u32() as u8).collect());
                let x = BitString::from_uint(u64::from(rng.next_u32() % 16), 4);
                let a = eval_program(&p, &ram, &x).unwrap();
                let b = eval_program(&p, &ram, &x).unwrap();
                assert_eq!(a, b);
            }
        }
    }
}
