//! Straight-line kernel IR.
//!
//! A program is a sequence of phases separated by barriers. Each phase holds
//! independent work items; a work item is a branch-free instruction list that
//! reads and writes a shared arena of `f64` slots and keeps intermediates in
//! private registers.

use serde::Serialize;

use crate::schedule::Algorithm;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Operand {
    Slot(u32),
    Reg(u32),
    Imm(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Dest {
    Slot(u32),
    Reg(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Op {
    /// `dst = imm`, kept opaque to folding (used for select flags).
    LoadConst,
    Mov,
    Add,
    Sub,
    Mul,
    /// `a * b + c`, rounded after the product and after the sum.
    Fma,
    Neg,
    Sin,
    Cos,
    Recip,
    /// `flag * a + (1 − flag) * b` with `flag ∈ {0, 1}`.
    Select,
}

impl Op {
    pub const ALL: [Op; 11] =
        [Op::LoadConst, Op::Mov, Op::Add, Op::Sub, Op::Mul, Op::Fma, Op::Neg, Op::Sin, Op::Cos, Op::Recip, Op::Select];

    pub fn arity(self) -> usize {
        match self {
            Op::LoadConst | Op::Mov | Op::Neg | Op::Sin | Op::Cos | Op::Recip => 1,
            Op::Add | Op::Sub | Op::Mul => 2,
            Op::Fma | Op::Select => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Op::LoadConst => "load_const",
            Op::Mov => "mov",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Fma => "fma",
            Op::Neg => "neg",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::Recip => "recip",
            Op::Select => "select",
        }
    }

    pub fn from_name(s: &str) -> Option<Op> {
        Op::ALL.into_iter().find(|op| op.name() == s)
    }

    pub fn is_commutative(self) -> bool {
        matches!(self, Op::Add | Op::Mul)
    }

    /// Numeric semantics shared by constant folding and the interpreter.
    /// `select` is not checked here; see [`Op::select_flag_ok`].
    #[inline]
    pub fn eval(self, a: f64, b: f64, c: f64) -> f64 {
        match self {
            Op::LoadConst | Op::Mov => a,
            Op::Add => a + b,
            Op::Sub => a - b,
            Op::Mul => a * b,
            Op::Fma => a * b + c,
            Op::Neg => -a,
            Op::Sin => crate::scalar::sin(a),
            Op::Cos => crate::scalar::cos(a),
            Op::Recip => 1.0 / a,
            Op::Select => a * b + (1.0 - a) * c,
        }
    }

    pub fn select_flag_ok(flag: f64) -> bool {
        flag == 0.0 || flag == 1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Instr {
    pub op: Op,
    pub dst: Dest,
    /// Only the first `op.arity()` entries are meaningful; the rest are `Imm(0)`.
    pub args: [Operand; 3],
}

impl Instr {
    pub fn new(op: Op, dst: Dest, args: &[Operand]) -> Self {
        assert_eq!(args.len(), op.arity(), "{} takes {} operands", op.name(), op.arity());
        let mut a = [Operand::Imm(0.0); 3];
        a[..args.len()].copy_from_slice(args);
        Instr { op, dst, args: a }
    }

    pub fn operands(&self) -> &[Operand] {
        &self.args[..self.op.arity()]
    }
}

/// What a work item computes: a kind label plus the frame and column it
/// belongs to, where those apply.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ItemTag {
    pub kind: String,
    pub frame: Option<usize>,
    pub column: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WorkItem {
    pub tag: ItemTag,
    pub instrs: Vec<Instr>,
    pub n_regs: u32,
}

impl WorkItem {
    pub fn reads(&self) -> impl Iterator<Item = u32> + '_ {
        self.instrs.iter().flat_map(|ins| ins.operands().iter()).filter_map(|o| match o {
            Operand::Slot(s) => Some(*s),
            _ => None,
        })
    }

    pub fn writes(&self) -> impl Iterator<Item = u32> + '_ {
        self.instrs.iter().filter_map(|ins| match ins.dst {
            Dest::Slot(s) => Some(s),
            Dest::Reg(_) => None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Phase {
    pub label: String,
    pub items: Vec<WorkItem>,
}

/// A named range of arena slots the caller fills or reads back.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IoSegment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KernelMeta {
    pub model: String,
    pub algorithm: Algorithm,
    pub n_dof: usize,
    /// Parent frame of each frame. Serial chains are flagged so emitted code
    /// can write parent references as `i − 1` instead of using a table.
    pub parents: Vec<Option<usize>>,
    pub serial_chain: bool,
    pub fused_cross: bool,
    pub compressed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KernelProgram {
    pub meta: KernelMeta,
    pub arena_size: usize,
    pub inputs: Vec<IoSegment>,
    pub outputs: Vec<IoSegment>,
    pub phases: Vec<Phase>,
}

impl KernelProgram {
    pub fn instruction_count(&self) -> usize {
        self.items().map(|w| w.instrs.len()).sum()
    }

    pub fn items(&self) -> impl Iterator<Item = &WorkItem> {
        self.phases.iter().flat_map(|p| p.items.iter())
    }

    pub fn max_regs(&self) -> usize {
        self.items().map(|w| w.n_regs as usize).max().unwrap_or(0)
    }

    pub fn input(&self, name: &str) -> Option<&IoSegment> {
        self.inputs.iter().find(|s| s.name == name)
    }

    pub fn output(&self, name: &str) -> Option<&IoSegment> {
        self.outputs.iter().find(|s| s.name == name)
    }

    /// Items in the widest phase; an upper bound on useful parallelism.
    pub fn max_phase_width(&self) -> usize {
        self.phases.iter().map(|p| p.items.len()).max().unwrap_or(0)
    }

    /// Number of times each op appears.
    pub fn op_histogram(&self) -> Vec<(Op, usize)> {
        Op::ALL
            .into_iter()
            .map(|op| (op, self.items().flat_map(|w| &w.instrs).filter(|i| i.op == op).count()))
            .collect()
    }
}
