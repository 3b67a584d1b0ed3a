//! Scalar abstraction shared by the numeric reference path and the kernel tracer.
//!
//! Every recurrence in this crate is written once against [`Scalar`]. With
//! `f64` it evaluates directly; with [`crate::kernel::trace::Sym`] the same
//! code records straight-line IR instructions instead.

use std::fmt::Debug;
use std::ops::{Add, Mul, Neg, Sub};

pub trait Scalar:
    Copy + Debug + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    /// A compile-time constant.
    fn lit(x: f64) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn recip(self) -> Self;

    /// Branch-free choice between `a` and `b`.
    ///
    /// `f64` resolves the choice directly; traced scalars emit a `select`
    /// instruction so every work item built from the same template runs the
    /// same instruction stream.
    fn choose(flag: bool, a: Self, b: Self) -> Self;

    fn zero() -> Self {
        Self::lit(0.0)
    }

    fn one() -> Self {
        Self::lit(1.0)
    }
}

/// `sin` kept out of line, as is [`cos`]. When the optimizer sees both of the
/// same argument in one function it may merge them into a single `sincos`
/// call, which rounds differently from `cos` alone in rare near-tie cases.
/// The interpreter evaluates the two as separate instructions, so the
/// reference path must not be merged either.
#[inline(never)]
pub fn sin(x: f64) -> f64 {
    x.sin()
}

#[inline(never)]
pub fn cos(x: f64) -> f64 {
    x.cos()
}

impl Scalar for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }

    #[inline]
    fn sin(self) -> Self {
        sin(self)
    }

    #[inline]
    fn cos(self) -> Self {
        cos(self)
    }

    #[inline]
    fn recip(self) -> Self {
        1.0 / self
    }

    #[inline]
    fn choose(flag: bool, a: Self, b: Self) -> Self {
        if flag {
            a
        } else {
            b
        }
    }
}
