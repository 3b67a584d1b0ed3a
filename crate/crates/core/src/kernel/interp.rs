//! Reference interpreter for kernel programs.
//!
//! With one thread, phases and items run in order on a plain arena. With
//! more, scoped threads claim items of the current phase from a shared
//! counter and meet at a barrier between phases; the arena is then a slice
//! of atomics so concurrent access stays defined even for a racy program.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Barrier, Mutex};

use thiserror::Error;

use super::ir::{Dest, KernelProgram, Op, Operand, WorkItem};

/// Named input or output vectors.
pub type Named = BTreeMap<String, Vec<f64>>;

/// Inputs that default to zeros when not supplied.
pub const OPTIONAL_INPUTS: [&str; 1] = ["fext"];

#[derive(Debug, Error, PartialEq)]
pub enum InterpError {
    #[error("missing input `{0}`")]
    MissingInput(String),
    #[error("program has no input named `{0}`")]
    UnknownInput(String),
    #[error("input `{name}` has {got} values, expected {expected}")]
    Extent { name: String, expected: usize, got: usize },
    #[error("select flag {value} is neither 0 nor 1 (phase {phase}, item {item})")]
    SelectFlag { phase: usize, item: usize, value: f64 },
    #[error("thread count must be at least 1")]
    NoThreads,
}

trait Mem {
    fn get(&self, i: usize) -> f64;
    fn set(&mut self, i: usize, v: f64);
}

impl Mem for [f64] {
    #[inline]
    fn get(&self, i: usize) -> f64 {
        self[i]
    }

    #[inline]
    fn set(&mut self, i: usize, v: f64) {
        self[i] = v;
    }
}

struct Shared<'a>(&'a [AtomicU64]);

impl Mem for Shared<'_> {
    #[inline]
    fn get(&self, i: usize) -> f64 {
        f64::from_bits(self.0[i].load(Ordering::Relaxed))
    }

    #[inline]
    fn set(&mut self, i: usize, v: f64) {
        self.0[i].store(v.to_bits(), Ordering::Relaxed);
    }
}

/// Runs one item; on a bad select flag returns the flag value.
#[inline]
fn exec_item<M: Mem + ?Sized>(item: &WorkItem, mem: &mut M, regs: &mut [f64]) -> Result<(), f64> {
    for ins in &item.instrs {
        let val = |o: Operand, mem: &M, regs: &[f64]| match o {
            Operand::Slot(s) => mem.get(s as usize),
            Operand::Reg(r) => regs[r as usize],
            Operand::Imm(x) => x,
        };
        let a = val(ins.args[0], mem, regs);
        let b = val(ins.args[1], mem, regs);
        let c = val(ins.args[2], mem, regs);
        if ins.op == Op::Select && !Op::select_flag_ok(a) {
            return Err(a);
        }
        let v = ins.op.eval(a, b, c);
        match ins.dst {
            Dest::Slot(s) => mem.set(s as usize, v),
            Dest::Reg(r) => regs[r as usize] = v,
        }
    }
    Ok(())
}

/// Reusable single-threaded evaluator: the arena and register file are
/// allocated once.
pub struct Evaluator<'p> {
    program: &'p KernelProgram,
    arena: Vec<f64>,
    regs: Vec<f64>,
}

impl<'p> Evaluator<'p> {
    pub fn new(program: &'p KernelProgram) -> Self {
        Evaluator { program, arena: vec![0.0; program.arena_size], regs: vec![0.0; program.max_regs()] }
    }

    pub fn set_inputs(&mut self, inputs: &Named) -> Result<(), InterpError> {
        write_inputs(self.program, inputs, &mut self.arena)
    }

    /// Set one input by name from a slice, without building a map.
    pub fn set_input(&mut self, name: &str, values: &[f64]) -> Result<(), InterpError> {
        let seg = self.program.input(name).ok_or_else(|| InterpError::UnknownInput(name.to_string()))?;
        if values.len() != seg.len {
            return Err(InterpError::Extent { name: name.to_string(), expected: seg.len, got: values.len() });
        }
        self.arena[seg.offset..seg.offset + seg.len].copy_from_slice(values);
        Ok(())
    }

    pub fn run(&mut self) -> Result<(), InterpError> {
        for (p, phase) in self.program.phases.iter().enumerate() {
            for (k, item) in phase.items.iter().enumerate() {
                exec_item(item, self.arena.as_mut_slice(), &mut self.regs)
                    .map_err(|value| InterpError::SelectFlag { phase: p, item: k, value })?;
            }
        }
        Ok(())
    }

    pub fn output(&self, name: &str) -> Option<&[f64]> {
        self.program.output(name).map(|s| &self.arena[s.offset..s.offset + s.len])
    }

    pub fn outputs(&self) -> Named {
        self.program.outputs.iter().map(|s| (s.name.clone(), self.arena[s.offset..s.offset + s.len].to_vec())).collect()
    }

    /// The whole arena after the last run, for inspecting temporaries.
    pub fn arena(&self) -> &[f64] {
        &self.arena
    }

    pub fn eval(&mut self, inputs: &Named) -> Result<Named, InterpError> {
        self.set_inputs(inputs)?;
        self.run()?;
        Ok(self.outputs())
    }
}

fn write_inputs(program: &KernelProgram, inputs: &Named, arena: &mut [f64]) -> Result<(), InterpError> {
    for name in inputs.keys() {
        if program.input(name).is_none() {
            return Err(InterpError::UnknownInput(name.clone()));
        }
    }
    for seg in &program.inputs {
        let dst = &mut arena[seg.offset..seg.offset + seg.len];
        match inputs.get(&seg.name) {
            Some(v) if v.len() == seg.len => dst.copy_from_slice(v),
            Some(v) => return Err(InterpError::Extent { name: seg.name.clone(), expected: seg.len, got: v.len() }),
            None if OPTIONAL_INPUTS.contains(&seg.name.as_str()) => dst.fill(0.0),
            None => return Err(InterpError::MissingInput(seg.name.clone())),
        }
    }
    Ok(())
}

/// Run `program` once on a fresh zeroed arena and return its outputs.
pub fn interpret(program: &KernelProgram, inputs: &Named, thread_count: usize) -> Result<Named, InterpError> {
    if thread_count == 0 {
        return Err(InterpError::NoThreads);
    }
    if thread_count == 1 {
        return Evaluator::new(program).eval(inputs);
    }
    let mut plain = vec![0.0; program.arena_size];
    write_inputs(program, inputs, &mut plain)?;
    let arena: Vec<AtomicU64> = plain.iter().map(|x| AtomicU64::new(x.to_bits())).collect();
    let next: Vec<AtomicUsize> = program.phases.iter().map(|_| AtomicUsize::new(0)).collect();
    let barrier = Barrier::new(thread_count);
    let failed = AtomicBool::new(false);
    let error: Mutex<Option<InterpError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..thread_count {
            scope.spawn(|| {
                let mut regs = vec![0.0; program.max_regs()];
                let mut mem = Shared(&arena);
                for (p, phase) in program.phases.iter().enumerate() {
                    loop {
                        let k = next[p].fetch_add(1, Ordering::Relaxed);
                        if k >= phase.items.len() || failed.load(Ordering::Relaxed) {
                            break;
                        }
                        if let Err(value) = exec_item(&phase.items[k], &mut mem, &mut regs) {
                            failed.store(true, Ordering::Relaxed);
                            let mut e = error.lock().unwrap();
                            e.get_or_insert(InterpError::SelectFlag { phase: p, item: k, value });
                        }
                    }
                    barrier.wait();
                }
            });
        }
    });
    if let Some(e) = error.into_inner().unwrap() {
        return Err(e);
    }
    Ok(program
        .outputs
        .iter()
        .map(|s| {
            let v = arena[s.offset..s.offset + s.len].iter().map(|x| f64::from_bits(x.load(Ordering::Relaxed))).collect();
            (s.name.clone(), v)
        })
        .collect())
}
