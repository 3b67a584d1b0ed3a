//! Static checks on kernel programs: no two items of a phase touch the same
//! slot unless both only read it, and every slot is written before it is read.

use std::collections::{HashMap, HashSet};
use std::fmt;

use super::ir::{Dest, KernelProgram, Operand};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    /// Two items of one phase write the same slot.
    WriteWrite { phase: usize, slot: usize, items: (usize, usize) },
    /// One item reads a slot another item of the same phase writes.
    ReadWrite { phase: usize, slot: usize, reader: usize, writer: usize },
    /// A temporary or output is read before any earlier phase wrote it.
    ReadBeforeWrite { phase: usize, item: usize, slot: usize },
    /// An item writes into an input segment.
    WritesInput { phase: usize, item: usize, slot: usize },
    /// A slot or register index outside the arena or register file.
    OutOfRange { phase: usize, item: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::WriteWrite { phase, slot, items } => {
                write!(f, "phase {phase}: items {} and {} both write slot {slot}", items.0, items.1)
            }
            Violation::ReadWrite { phase, slot, reader, writer } => {
                write!(f, "phase {phase}: item {reader} reads slot {slot} written by item {writer}")
            }
            Violation::ReadBeforeWrite { phase, item, slot } => {
                write!(f, "phase {phase}: item {item} reads slot {slot} before it is written")
            }
            Violation::WritesInput { phase, item, slot } => write!(f, "phase {phase}: item {item} writes input slot {slot}"),
            Violation::OutOfRange { phase, item } => write!(f, "phase {phase}: item {item} indexes out of range"),
        }
    }
}

/// Intra-phase conflicts.
pub fn check_races(program: &KernelProgram) -> Vec<Violation> {
    let mut out = Vec::new();
    for (p, phase) in program.phases.iter().enumerate() {
        let mut writer: HashMap<u32, usize> = HashMap::new();
        for (k, item) in phase.items.iter().enumerate() {
            for s in item.writes().collect::<HashSet<_>>() {
                if let Some(&other) = writer.get(&s) {
                    out.push(Violation::WriteWrite { phase: p, slot: s as usize, items: (other, k) });
                } else {
                    writer.insert(s, k);
                }
            }
        }
        for (k, item) in phase.items.iter().enumerate() {
            for s in item.reads().collect::<HashSet<_>>() {
                if let Some(&w) = writer.get(&s) {
                    if w != k {
                        out.push(Violation::ReadWrite { phase: p, slot: s as usize, reader: k, writer: w });
                    }
                }
            }
        }
    }
    out
}

/// Ordering across phases and index ranges.
pub fn check_dataflow(program: &KernelProgram) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut is_input = vec![false; program.arena_size];
    for seg in &program.inputs {
        for s in seg.offset..(seg.offset + seg.len).min(program.arena_size) {
            is_input[s] = true;
        }
    }
    let mut written = vec![false; program.arena_size];
    for (p, phase) in program.phases.iter().enumerate() {
        let mut this_phase = Vec::new();
        for (k, item) in phase.items.iter().enumerate() {
            let regs_ok = item.instrs.iter().all(|ins| {
                let dst_ok = match ins.dst {
                    Dest::Reg(r) => r < item.n_regs,
                    Dest::Slot(s) => (s as usize) < program.arena_size,
                };
                dst_ok
                    && ins.operands().iter().all(|o| match o {
                        Operand::Reg(r) => *r < item.n_regs,
                        Operand::Slot(s) => (*s as usize) < program.arena_size,
                        Operand::Imm(_) => true,
                    })
            });
            if !regs_ok {
                out.push(Violation::OutOfRange { phase: p, item: k });
                continue;
            }
            for s in item.reads().collect::<HashSet<_>>() {
                let s = s as usize;
                if !is_input[s] && !written[s] {
                    out.push(Violation::ReadBeforeWrite { phase: p, item: k, slot: s });
                }
            }
            for s in item.writes() {
                let s = s as usize;
                if is_input[s] {
                    out.push(Violation::WritesInput { phase: p, item: k, slot: s });
                }
                this_phase.push(s);
            }
        }
        for s in this_phase {
            written[s] = true;
        }
    }
    out
}
