//! Line-oriented text form of a kernel program.
//!
//! ```text
//! rbdkernel v1
//! model chain7
//! algorithm ID
//! n_dof 7
//! parents - 0 1 2 3 4 5
//! flags serial_chain=1 fused_cross=0 compressed=1
//! arena 190
//! input q 0 7
//! output tau 183 7
//! phase joint transforms
//! item xform 0 - 3
//! sin r0 s0
//! ...
//! end
//! ```
//!
//! Operands are `s<slot>`, `r<reg>` or `#<number>`; numbers use shortest
//! round-trip formatting.

use std::fmt::Write;

use thiserror::Error;

use super::ir::{Dest, Instr, IoSegment, ItemTag, KernelMeta, KernelProgram, Op, Operand, Phase, WorkItem};
use crate::schedule::Algorithm;

pub const HEADER: &str = "rbdkernel v1";

#[derive(Debug, Error, PartialEq, Eq)]
#[error("kernel text line {line}: {message}")]
pub struct TextError {
    pub line: usize,
    pub message: String,
}

fn opt(x: Option<usize>) -> String {
    x.map_or_else(|| "-".to_string(), |v| v.to_string())
}

fn operand(o: &Operand) -> String {
    match o {
        Operand::Slot(s) => format!("s{s}"),
        Operand::Reg(r) => format!("r{r}"),
        Operand::Imm(x) => format!("#{x:?}"),
    }
}

fn dest(d: &Dest) -> String {
    match d {
        Dest::Slot(s) => format!("s{s}"),
        Dest::Reg(r) => format!("r{r}"),
    }
}

pub fn dump(program: &KernelProgram) -> String {
    let m = &program.meta;
    let mut out = String::new();
    let _ = writeln!(out, "{HEADER}");
    let _ = writeln!(out, "model {}", m.model.replace(['\n', '\r'], " "));
    let _ = writeln!(out, "algorithm {}", m.algorithm.name());
    let _ = writeln!(out, "n_dof {}", m.n_dof);
    let parents: Vec<String> = m.parents.iter().map(|p| opt(*p)).collect();
    let _ = writeln!(out, "parents {}", parents.join(" ").trim_end());
    let _ = writeln!(
        out,
        "flags serial_chain={} fused_cross={} compressed={}",
        m.serial_chain as u8, m.fused_cross as u8, m.compressed as u8
    );
    let _ = writeln!(out, "arena {}", program.arena_size);
    for s in &program.inputs {
        let _ = writeln!(out, "input {} {} {}", s.name, s.offset, s.len);
    }
    for s in &program.outputs {
        let _ = writeln!(out, "output {} {} {}", s.name, s.offset, s.len);
    }
    for phase in &program.phases {
        let _ = writeln!(out, "phase {}", phase.label);
        for item in &phase.items {
            let t = &item.tag;
            let _ = writeln!(out, "item {} {} {} {}", t.kind, opt(t.frame), opt(t.column), item.n_regs);
            for ins in &item.instrs {
                let _ = write!(out, "{} {}", ins.op.name(), dest(&ins.dst));
                for o in ins.operands() {
                    let _ = write!(out, " {}", operand(o));
                }
                out.push('\n');
            }
        }
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    it: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, TextError> {
        Err(TextError { line: self.last, message: message.into() })
    }

    fn next(&mut self) -> Result<&'a str, TextError> {
        match self.it.next() {
            Some((k, l)) => {
                self.last = k + 1;
                Ok(l)
            }
            None => self.err("unexpected end of input"),
        }
    }

    fn peek_word(&mut self) -> Option<&'a str> {
        self.it.peek().map(|(_, l)| l.split(' ').next().unwrap_or(""))
    }

    /// The rest of a line starting with `word `.
    fn keyed(&mut self, word: &str) -> Result<&'a str, TextError> {
        let line = self.next()?;
        match line.strip_prefix(word).and_then(|r| r.strip_prefix(' ')) {
            Some(rest) => Ok(rest),
            None if line == word => Ok(""),
            None => self.err(format!("expected `{word}`")),
        }
    }

    fn number<T: std::str::FromStr>(&self, s: &str, what: &str) -> Result<T, TextError> {
        s.parse().or_else(|_| self.err(format!("bad {what} `{s}`")))
    }

    fn opt_number(&self, s: &str, what: &str) -> Result<Option<usize>, TextError> {
        if s == "-" {
            Ok(None)
        } else {
            self.number(s, what).map(Some)
        }
    }
}

fn parse_flag(lines: &Lines, field: &str, name: &str) -> Result<bool, TextError> {
    match field.strip_prefix(name).and_then(|r| r.strip_prefix('=')) {
        Some("0") => Ok(false),
        Some("1") => Ok(true),
        _ => lines.err(format!("expected `{name}=0|1`")),
    }
}

fn parse_operand(lines: &Lines, s: &str) -> Result<Operand, TextError> {
    if let Some(v) = s.strip_prefix('#') {
        return Ok(Operand::Imm(lines.number(v, "immediate")?));
    }
    match parse_dest(lines, s)? {
        Dest::Slot(x) => Ok(Operand::Slot(x)),
        Dest::Reg(x) => Ok(Operand::Reg(x)),
    }
}

fn parse_dest(lines: &Lines, s: &str) -> Result<Dest, TextError> {
    if let Some(v) = s.strip_prefix('s') {
        Ok(Dest::Slot(lines.number(v, "slot")?))
    } else if let Some(v) = s.strip_prefix('r') {
        Ok(Dest::Reg(lines.number(v, "register")?))
    } else {
        lines.err(format!("bad operand `{s}`"))
    }
}

fn parse_segment(lines: &Lines, rest: &str, arena: usize) -> Result<IoSegment, TextError> {
    let f: Vec<&str> = rest.split(' ').collect();
    if f.len() != 3 || f[0].is_empty() {
        return lines.err("segment needs `name offset len`");
    }
    let offset: usize = lines.number(f[1], "offset")?;
    let len: usize = lines.number(f[2], "length")?;
    if offset.checked_add(len).is_none_or(|end| end > arena) {
        return lines.err("segment outside the arena");
    }
    Ok(IoSegment { name: f[0].to_string(), offset, len })
}

/// Parse and validate a dumped program. Everything the interpreter indexes
/// is bounds-checked here, so a program that loads can always be run.
pub fn load(text: &str) -> Result<KernelProgram, TextError> {
    let mut lines = Lines { it: text.lines().enumerate().peekable(), last: 0 };
    if lines.next()? != HEADER {
        return lines.err(format!("expected header `{HEADER}`"));
    }
    let model = lines.keyed("model")?.to_string();
    let alg = lines.keyed("algorithm")?;
    let algorithm: Algorithm = match alg.parse() {
        Ok(a) => a,
        Err(_) => return lines.err(format!("unknown algorithm `{alg}`")),
    };
    let n_dof: usize = {
        let s = lines.keyed("n_dof")?;
        lines.number(s, "dof count")?
    };
    let parents_text = lines.keyed("parents")?;
    let mut parents = Vec::new();
    for (i, w) in parents_text.split(' ').filter(|w| !w.is_empty()).enumerate() {
        let p = lines.opt_number(w, "parent")?;
        if p.is_some_and(|p| p >= i) {
            return lines.err("parent must precede its child");
        }
        parents.push(p);
    }
    if parents.len() != n_dof {
        return lines.err("parent list length differs from dof count");
    }
    let flags: Vec<&str> = lines.keyed("flags")?.split(' ').collect();
    if flags.len() != 3 {
        return lines.err("expected three flags");
    }
    let serial_chain = parse_flag(&lines, flags[0], "serial_chain")?;
    let fused_cross = parse_flag(&lines, flags[1], "fused_cross")?;
    let compressed = parse_flag(&lines, flags[2], "compressed")?;
    let arena_size: usize = {
        let s = lines.keyed("arena")?;
        lines.number(s, "arena size")?
    };
    if arena_size > u32::MAX as usize {
        return lines.err("arena too large");
    }
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    while let Some(w @ ("input" | "output")) = lines.peek_word() {
        let rest = lines.keyed(w)?;
        let seg = parse_segment(&lines, rest, arena_size)?;
        if w == "input" { &mut inputs } else { &mut outputs }.push(seg);
    }
    let mut phases = Vec::new();
    loop {
        match lines.peek_word() {
            Some("phase") => {
                let label = lines.keyed("phase")?.to_string();
                phases.push(Phase { label, items: Vec::new() });
            }
            Some("item") => {
                let rest = lines.keyed("item")?;
                let Some(phase) = phases.last_mut() else { return lines.err("item outside a phase") };
                let f: Vec<&str> = rest.split(' ').collect();
                if f.len() != 4 || f[0].is_empty() {
                    return lines.err("item needs `kind frame column n_regs`");
                }
                let tag = ItemTag {
                    kind: f[0].to_string(),
                    frame: lines.opt_number(f[1], "frame")?,
                    column: lines.opt_number(f[2], "column")?,
                };
                let n_regs: u32 = lines.number(f[3], "register count")?;
                if n_regs > 1 << 24 {
                    return lines.err("register count too large");
                }
                phase.items.push(WorkItem { tag, instrs: Vec::new(), n_regs });
            }
            Some("end") => {
                lines.next()?;
                break;
            }
            Some(_) => {
                let line = lines.next()?;
                let Some(item) = phases.last_mut().and_then(|p| p.items.last_mut()) else {
                    return lines.err("instruction outside an item");
                };
                let f: Vec<&str> = line.split(' ').collect();
                let Some(op) = Op::from_name(f[0]) else { return lines.err(format!("unknown op `{}`", f[0])) };
                if f.len() != 2 + op.arity() {
                    return lines.err(format!("{} takes {} operands", op.name(), op.arity()));
                }
                let dst = parse_dest(&lines, f[1])?;
                let mut args = [Operand::Imm(0.0); 3];
                for (k, s) in f[2..].iter().enumerate() {
                    args[k] = parse_operand(&lines, s)?;
                }
                let slot_ok = |s: u32| (s as usize) < arena_size;
                let ok = match dst {
                    Dest::Slot(s) => slot_ok(s),
                    Dest::Reg(r) => r < item.n_regs,
                } && args.iter().all(|a| match a {
                    Operand::Slot(s) => slot_ok(*s),
                    Operand::Reg(r) => *r < item.n_regs,
                    Operand::Imm(_) => true,
                });
                if !ok {
                    return lines.err("slot or register out of range");
                }
                item.instrs.push(Instr { op, dst, args });
            }
            None => return lines.err("missing `end`"),
        }
    }
    if lines.it.any(|(_, l)| !l.trim().is_empty()) {
        return lines.err("text after `end`");
    }
    Ok(KernelProgram {
        meta: KernelMeta { model, algorithm, n_dof, parents, serial_chain, fused_cross, compressed },
        arena_size,
        inputs,
        outputs,
        phases,
    })
}
