//! Straight-line kernels: IR, tracing, generation, checks, interpretation
//! and serialization.

pub mod check;
pub mod codegen;
pub mod emit;
pub mod interp;
pub mod ir;
pub mod text;
pub mod trace;

pub use check::{check_dataflow, check_races, Violation};
pub use codegen::{generate, generate_with_layout, GenError, GenOptions, LayoutChoice};
pub use emit::{emit_source, Dialect};
pub use interp::{interpret, Evaluator, InterpError, Named};
pub use ir::{Dest, Instr, ItemTag, KernelProgram, Op, Operand, Phase, WorkItem};
