//! Source emission. Two dialects: a portable C-like translation unit with one
//! function per work item, and an annotated listing for reading.

use std::fmt::Write;
use std::str::FromStr;

use super::ir::{Dest, Instr, KernelProgram, Op, Operand, WorkItem};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dialect {
    PortableC,
    Listing,
}

impl FromStr for Dialect {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "c" | "portable-c" => Ok(Dialect::PortableC),
            "listing" | "annotated" => Ok(Dialect::Listing),
            _ => Err(format!("unknown dialect `{s}` (expected `c` or `listing`)")),
        }
    }
}

pub fn emit_source(program: &KernelProgram, dialect: Dialect) -> String {
    match dialect {
        Dialect::PortableC => emit_c(program),
        Dialect::Listing => emit_listing(program),
    }
}

fn c_operand(o: &Operand) -> String {
    match o {
        Operand::Slot(s) => format!("ws[{s}]"),
        Operand::Reg(r) => format!("r{r}"),
        Operand::Imm(x) if x.is_nan() => "NAN".into(),
        Operand::Imm(x) if x.is_infinite() => if *x > 0.0 { "INFINITY" } else { "-INFINITY" }.into(),
        Operand::Imm(x) => {
            let s = format!("{x:?}");
            if *x < 0.0 {
                format!("({s})")
            } else {
                s
            }
        }
    }
}

fn c_expr(ins: &Instr) -> String {
    let a: Vec<String> = ins.operands().iter().map(c_operand).collect();
    match ins.op {
        Op::LoadConst | Op::Mov => a[0].clone(),
        Op::Add => format!("{} + {}", a[0], a[1]),
        Op::Sub => format!("{} - {}", a[0], a[1]),
        Op::Mul => format!("{} * {}", a[0], a[1]),
        // two roundings, matching the interpreter
        Op::Fma => format!("RBD_FMA({}, {}, {})", a[0], a[1], a[2]),
        Op::Neg => format!("-{}", a[0]),
        Op::Sin => format!("sin({})", a[0]),
        Op::Cos => format!("cos({})", a[0]),
        Op::Recip => format!("1.0 / {}", a[0]),
        Op::Select => format!("{0} * {1} + (1.0 - {0}) * {2}", a[0], a[1], a[2]),
    }
}

/// Parent reference as the generated code spells it.
fn parent_ref(program: &KernelProgram, frame: usize) -> String {
    match program.meta.parents.get(frame).copied().flatten() {
        None => "base".into(),
        Some(_) if program.meta.serial_chain => format!("{frame} - 1"),
        Some(_) => format!("PARENT[{frame}]"),
    }
}

fn item_comment(program: &KernelProgram, item: &WorkItem) -> String {
    let t = &item.tag;
    let mut s = t.kind.clone();
    if let Some(f) = t.frame {
        let _ = write!(s, ", frame {f} (parent {})", parent_ref(program, f));
    }
    if let Some(c) = t.column {
        let _ = write!(s, ", column {c}");
    }
    s
}

fn emit_c(program: &KernelProgram) -> String {
    let m = &program.meta;
    let mut out = String::new();
    let _ = writeln!(out, "/* {} kernel for {} ({} dof) */", m.algorithm.name(), m.model.replace("*/", "* /"), m.n_dof);
    let _ = writeln!(out, "#include <math.h>\n");
    let _ = writeln!(out, "#define RBD_FMA(a, b, c) ((double)((a) * (b)) + (c))");
    let _ = writeln!(out, "#define RBD_ARENA {}", program.arena_size);
    for s in program.inputs.iter().chain(&program.outputs) {
        let _ = writeln!(out, "#define RBD_{}_OFFSET {}", s.name.to_uppercase().replace('.', "_"), s.offset);
    }
    if !m.serial_chain {
        let table: Vec<String> = m.parents.iter().map(|p| p.map_or(-1, |p| p as i64).to_string()).collect();
        let _ = writeln!(out, "\nstatic const int PARENT[{}] = {{{}}};", m.parents.len().max(1), table.join(", "));
    }
    out.push('\n');
    for (p, phase) in program.phases.iter().enumerate() {
        let _ = writeln!(out, "/* phase {p}: {} */", phase.label);
        for (k, item) in phase.items.iter().enumerate() {
            let _ = writeln!(out, "/* {} */", item_comment(program, item));
            let _ = writeln!(out, "static void p{p}_i{k}(double *restrict ws) {{");
            for ins in &item.instrs {
                match ins.dst {
                    Dest::Reg(r) => {
                        let _ = writeln!(out, "    const double r{r} = {};", c_expr(ins));
                    }
                    Dest::Slot(s) => {
                        let _ = writeln!(out, "    ws[{s}] = {};", c_expr(ins));
                    }
                }
            }
            let _ = writeln!(out, "}}\n");
        }
    }
    let _ = writeln!(out, "typedef void (*rbd_item)(double *restrict);\n");
    for (p, phase) in program.phases.iter().enumerate() {
        let names: Vec<String> = (0..phase.items.len()).map(|k| format!("p{p}_i{k}")).collect();
        let _ = writeln!(out, "static const rbd_item PHASE{p}[{}] = {{{}}};", names.len(), names.join(", "));
    }
    let counts: Vec<String> = program.phases.iter().map(|p| p.items.len().to_string()).collect();
    let tables: Vec<String> = (0..program.phases.len()).map(|p| format!("PHASE{p}")).collect();
    let _ = writeln!(out, "\nconst int RBD_PHASES = {};", program.phases.len());
    let _ = writeln!(out, "const int RBD_PHASE_ITEMS[{}] = {{{}}};", counts.len().max(1), counts.join(", "));
    let _ = writeln!(out, "const rbd_item *const RBD_PHASE_TABLE[{}] = {{{}}};", tables.len().max(1), tables.join(", "));
    out
}

fn listing_operand(o: &Operand) -> String {
    match o {
        Operand::Slot(s) => format!("[{s}]"),
        Operand::Reg(r) => format!("%{r}"),
        Operand::Imm(x) => format!("{x:?}"),
    }
}

fn emit_listing(program: &KernelProgram) -> String {
    let m = &program.meta;
    let mut out = String::new();
    let shape = if m.serial_chain { "serial chain" } else { "branched tree" };
    let _ = writeln!(out, "; {} on {} ({} dof, {shape})", m.algorithm.name(), m.model, m.n_dof);
    let _ = writeln!(
        out,
        "; arena {} slots, {} columns, cross products {}",
        program.arena_size,
        if m.compressed { "compressed" } else { "dense" },
        if m.fused_cross { "fused" } else { "materialized" }
    );
    if !m.serial_chain {
        let table: Vec<String> = m.parents.iter().map(|p| p.map_or("-".into(), |p| p.to_string())).collect();
        let _ = writeln!(out, "; PARENT = [{}]", table.join(" "));
    }
    for s in &program.inputs {
        let _ = writeln!(out, "; in  {:<10} [{}..{})", s.name, s.offset, s.offset + s.len);
    }
    for s in &program.outputs {
        let _ = writeln!(out, "; out {:<10} [{}..{})", s.name, s.offset, s.offset + s.len);
    }
    for (p, phase) in program.phases.iter().enumerate() {
        let _ = writeln!(out, "\nphase {p} ({} items): {}", phase.items.len(), phase.label);
        for (k, item) in phase.items.iter().enumerate() {
            let _ = writeln!(out, "  item {k}: {}, {} regs", item_comment(program, item), item.n_regs);
            for ins in &item.instrs {
                let d = match ins.dst {
                    Dest::Slot(s) => format!("[{s}]"),
                    Dest::Reg(r) => format!("%{r}"),
                };
                let a: Vec<String> = ins.operands().iter().map(listing_operand).collect();
                let _ = writeln!(out, "    {d:>8} = {:<10} {}", ins.op.name(), a.join(", "));
            }
        }
    }
    out
}
