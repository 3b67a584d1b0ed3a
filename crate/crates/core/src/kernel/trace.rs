//! Tracing scalar: running a recurrence over [`Sym`] records IR instead of
//! computing numbers.
//!
//! A builder is installed per work item with [`trace_item`]. While it is
//! active, arithmetic on `Sym` folds constants, reuses identical expressions
//! and appends the rest to the item's instruction list. Arena reads are plain
//! slot operands; a read of a slot the item already stored is forwarded to
//! the stored value.

use std::cell::RefCell;
use std::collections::HashMap;
use std::ops::{Add, Mul, Neg, Sub};

use super::ir::{Dest, Instr, ItemTag, Op, Operand, WorkItem};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sym(pub Operand);

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Key {
    Slot(u32),
    Reg(u32),
    Imm(u64),
}

fn key(o: Operand) -> Key {
    match o {
        Operand::Slot(s) => Key::Slot(s),
        Operand::Reg(r) => Key::Reg(r),
        Operand::Imm(x) => Key::Imm(x.to_bits()),
    }
}

#[derive(Default)]
struct Builder {
    instrs: Vec<Instr>,
    n_regs: u32,
    cse: HashMap<(Op, [Key; 3]), u32>,
    stored: HashMap<u32, Operand>,
    read: std::collections::HashSet<u32>,
}

thread_local! {
    static BUILDER: RefCell<Option<Builder>> = const { RefCell::new(None) };
}

fn with_builder<R>(f: impl FnOnce(&mut Builder) -> R) -> R {
    BUILDER.with(|b| f(b.borrow_mut().as_mut().expect("Sym arithmetic outside of trace_item")))
}

fn imm(o: Operand) -> Option<f64> {
    match o {
        Operand::Imm(x) => Some(x),
        _ => None,
    }
}

impl Builder {
    fn emit(&mut self, op: Op, mut args: [Operand; 3]) -> Operand {
        let n = op.arity();
        if op != Op::LoadConst && op != Op::Select && args[..n].iter().all(|a| imm(*a).is_some()) {
            let v = |k: usize| imm(args[k]).unwrap_or(0.0);
            return Operand::Imm(op.eval(v(0), v(1), v(2)));
        }
        if let Some(o) = simplify(op, &args) {
            return o;
        }
        if op.is_commutative() && key_order(args[1]) < key_order(args[0]) {
            args.swap(0, 1);
        }
        let k = (op, [key(args[0]), key(args[1]), key(args[2])]);
        if let Some(&r) = self.cse.get(&k) {
            return Operand::Reg(r);
        }
        let r = self.n_regs;
        self.n_regs += 1;
        self.instrs.push(Instr { op, dst: Dest::Reg(r), args });
        self.cse.insert(k, r);
        Operand::Reg(r)
    }
}

fn key_order(o: Operand) -> (u8, u64) {
    match o {
        Operand::Imm(x) => (0, x.to_bits()),
        Operand::Slot(s) => (1, s as u64),
        Operand::Reg(r) => (2, r as u64),
    }
}

/// Identities that hold exactly in IEEE arithmetic for finite operands.
fn simplify(op: Op, a: &[Operand; 3]) -> Option<Operand> {
    let is = |o: Operand, x: f64| imm(o) == Some(x);
    match op {
        Op::Add if is(a[1], 0.0) => Some(a[0]),
        Op::Add if is(a[0], 0.0) => Some(a[1]),
        Op::Sub if is(a[1], 0.0) => Some(a[0]),
        Op::Mul if is(a[0], 0.0) || is(a[1], 0.0) => Some(Operand::Imm(0.0)),
        Op::Mul if is(a[1], 1.0) => Some(a[0]),
        Op::Mul if is(a[0], 1.0) => Some(a[1]),
        Op::Select if a[1] == a[2] => Some(a[1]),
        _ => None,
    }
}

fn unary(op: Op, a: Sym) -> Sym {
    Sym(with_builder(|b| b.emit(op, [a.0, Operand::Imm(0.0), Operand::Imm(0.0)])))
}

fn binary(op: Op, a: Sym, c: Sym) -> Sym {
    Sym(with_builder(|b| b.emit(op, [a.0, c.0, Operand::Imm(0.0)])))
}

impl Sym {
    /// Read arena slot `slot`.
    pub fn load(slot: usize) -> Sym {
        let s = slot as u32;
        with_builder(|b| match b.stored.get(&s) {
            Some(&o) => Sym(o),
            None => {
                b.read.insert(s);
                Sym(Operand::Slot(s))
            }
        })
    }

    /// Write `value` to arena slot `slot`.
    ///
    /// # Panics
    /// If the item already read or wrote the slot: items never update in place.
    pub fn store(slot: usize, value: Sym) {
        let s = slot as u32;
        with_builder(|b| {
            assert!(!b.read.contains(&s), "work item overwrites slot {s} it has read");
            assert!(b.stored.insert(s, value.0).is_none(), "work item stores slot {s} twice");
            b.instrs.push(Instr { op: Op::Mov, dst: Dest::Slot(s), args: [value.0, Operand::Imm(0.0), Operand::Imm(0.0)] });
        })
    }
}

impl Add for Sym {
    type Output = Sym;
    fn add(self, o: Sym) -> Sym {
        binary(Op::Add, self, o)
    }
}

impl Sub for Sym {
    type Output = Sym;
    fn sub(self, o: Sym) -> Sym {
        if imm(self.0) == Some(0.0) {
            return -o;
        }
        binary(Op::Sub, self, o)
    }
}

impl Mul for Sym {
    type Output = Sym;
    fn mul(self, o: Sym) -> Sym {
        binary(Op::Mul, self, o)
    }
}

impl Neg for Sym {
    type Output = Sym;
    fn neg(self) -> Sym {
        unary(Op::Neg, self)
    }
}

impl Scalar for Sym {
    fn lit(x: f64) -> Self {
        Sym(Operand::Imm(x))
    }

    fn sin(self) -> Self {
        unary(Op::Sin, self)
    }

    fn cos(self) -> Self {
        unary(Op::Cos, self)
    }

    fn recip(self) -> Self {
        unary(Op::Recip, self)
    }

    fn choose(flag: bool, a: Self, b: Self) -> Self {
        let f = unary(Op::LoadConst, Sym(Operand::Imm(if flag { 1.0 } else { 0.0 })));
        Sym(with_builder(|bd| bd.emit(Op::Select, [f.0, a.0, b.0])))
    }
}

/// Record one work item by running `body` with a fresh builder, then clean
/// up the instruction list with [`optimize`].
pub fn trace_item(tag: ItemTag, body: impl FnOnce()) -> WorkItem {
    BUILDER.with(|b| {
        let mut slot = b.borrow_mut();
        assert!(slot.is_none(), "trace_item does not nest");
        *slot = Some(Builder::default());
    });
    // restore the empty state even if the body panics
    struct Reset;
    impl Drop for Reset {
        fn drop(&mut self) {
            BUILDER.with(|b| *b.borrow_mut() = None);
        }
    }
    let guard = Reset;
    body();
    let built = BUILDER.with(|b| b.borrow_mut().take()).expect("builder vanished");
    drop(guard);
    let (instrs, n_regs) = optimize(built.instrs);
    WorkItem { tag, instrs, n_regs }
}

/// Dead-code elimination, fma fusion, store retargeting and register
/// renumbering, in that order. Input must be in SSA form over registers.
pub fn optimize(instrs: Vec<Instr>) -> (Vec<Instr>, u32) {
    let instrs = fuse_fma(eliminate_dead(instrs));
    let instrs = retarget_stores(eliminate_dead(instrs));
    renumber(instrs)
}

fn reg_uses(instrs: &[Instr]) -> HashMap<u32, usize> {
    let mut uses = HashMap::new();
    for ins in instrs {
        for o in ins.operands() {
            if let Operand::Reg(r) = o {
                *uses.entry(*r).or_insert(0) += 1;
            }
        }
    }
    uses
}

pub fn eliminate_dead(instrs: Vec<Instr>) -> Vec<Instr> {
    let mut live = std::collections::HashSet::new();
    let mut keep = vec![false; instrs.len()];
    for (k, ins) in instrs.iter().enumerate().rev() {
        let needed = match ins.dst {
            Dest::Slot(_) => true,
            Dest::Reg(r) => live.contains(&r),
        };
        if needed {
            keep[k] = true;
            for o in ins.operands() {
                if let Operand::Reg(r) = o {
                    live.insert(*r);
                }
            }
        }
    }
    instrs.into_iter().zip(keep).filter_map(|(i, k)| k.then_some(i)).collect()
}

/// `add(mul(a, b), c)` with a single-use product becomes `fma(a, b, c)`. The
/// fused op rounds twice, so results do not change.
pub fn fuse_fma(mut instrs: Vec<Instr>) -> Vec<Instr> {
    let uses = reg_uses(&instrs);
    let mut def: HashMap<u32, usize> = HashMap::new();
    for (k, ins) in instrs.iter().enumerate() {
        if let Dest::Reg(r) = ins.dst {
            def.insert(r, k);
        }
    }
    let single_mul = |instrs: &[Instr], o: Operand| -> Option<usize> {
        let Operand::Reg(r) = o else { return None };
        let k = *def.get(&r)?;
        (instrs[k].op == Op::Mul && uses.get(&r) == Some(&1)).then_some(k)
    };
    for k in 0..instrs.len() {
        if instrs[k].op != Op::Add {
            continue;
        }
        let [x, y, _] = instrs[k].args;
        let (m, other) = match (single_mul(&instrs, x), single_mul(&instrs, y)) {
            (Some(m), _) => (m, y),
            (None, Some(m)) => (m, x),
            (None, None) => continue,
        };
        let [a, b, _] = instrs[m].args;
        instrs[k].op = Op::Fma;
        instrs[k].args = [a, b, other];
        // the product is now unused and goes away in the next dead-code pass
    }
    instrs
}

/// A register whose only use is a store is written to the slot directly.
pub fn retarget_stores(instrs: Vec<Instr>) -> Vec<Instr> {
    let uses = reg_uses(&instrs);
    let mut def: HashMap<u32, usize> = HashMap::new();
    for (k, ins) in instrs.iter().enumerate() {
        if let Dest::Reg(r) = ins.dst {
            def.insert(r, k);
        }
    }
    let mut out = instrs.clone();
    let mut drop = vec![false; instrs.len()];
    for (k, ins) in instrs.iter().enumerate() {
        if let (Op::Mov, Dest::Slot(s), Operand::Reg(r)) = (ins.op, ins.dst, ins.args[0]) {
            if uses.get(&r) == Some(&1) {
                out[def[&r]].dst = Dest::Slot(s);
                drop[k] = true;
            }
        }
    }
    out.into_iter().zip(drop).filter_map(|(i, d)| (!d).then_some(i)).collect()
}

/// Dense register numbering in definition order.
pub fn renumber(mut instrs: Vec<Instr>) -> (Vec<Instr>, u32) {
    let mut map: HashMap<u32, u32> = HashMap::new();
    for ins in &mut instrs {
        for o in ins.args.iter_mut() {
            if let Operand::Reg(r) = o {
                *r = map[r];
            }
        }
        if let Dest::Reg(r) = ins.dst {
            let next = map.len() as u32;
            map.insert(r, next);
            ins.dst = Dest::Reg(next);
        }
    }
    (instrs, map.len() as u32)
}
