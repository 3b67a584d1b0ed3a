//! Per-frame recurrence steps written once over [`Scalar`].
//!
//! The reference algorithms in [`crate::refdyn`] call these with `f64`; the
//! kernel generator calls them with traced scalars, one work item at a time.
//! Keeping a single definition is what makes generated kernels reproduce the
//! reference to the last bit in the common case.
//!
//! Lists of children are always passed in descending frame order, which is
//! the order a push-style backward sweep (`f_λ += Xᵀ f`, frames `n-1..0`)
//! accumulates them in.

use crate::scalar::Scalar;
use crate::spatial::{Mat6, RigidInertia, SpatialVec, Transform};

/// Fictitious base acceleration: gravity enters as an upward acceleration of
/// the base, angular part zero.
pub fn base_acceleration<S: Scalar>(gravity: [f64; 3]) -> SpatialVec<S> {
    SpatialVec::lit([0.0, 0.0, 0.0, -gravity[0], -gravity[1], -gravity[2]])
}

/// Forward-sweep quantities of one frame. `xv` and `xa` are the parent
/// velocity and acceleration carried into this frame; `iv = I v`.
#[derive(Clone, Copy, Debug)]
pub struct FrameMotion<S> {
    pub v: SpatialVec<S>,
    pub a: SpatialVec<S>,
    pub f: SpatialVec<S>,
    pub xv: SpatialVec<S>,
    pub xa: SpatialVec<S>,
    pub iv: SpatialVec<S>,
}

/// One frame of the outward sweep. `parent_v` is `None` for frames attached
/// to the base (`v_0 = 0`); `parent_a` is then the base acceleration.
#[allow(clippy::too_many_arguments)]
pub fn rnea_forward<S: Scalar>(
    x: &Transform<S>,
    s: &SpatialVec<S>,
    inertia: &RigidInertia<S>,
    parent_v: Option<&SpatialVec<S>>,
    parent_a: &SpatialVec<S>,
    qd: S,
    qdd: S,
    fext: &SpatialVec<S>,
) -> FrameMotion<S> {
    let xv = match parent_v {
        Some(v) => x.apply_motion(v),
        None => SpatialVec::zero(),
    };
    let vj = s.scale(qd);
    let v = xv + vj;
    let xa = x.apply_motion(parent_a);
    let a = xa + s.scale(qdd) + v.cross_motion(&vj);
    let iv = inertia.mul_vec(&v);
    let f = inertia.mul_vec(&a) + v.cross_force(&iv) - *fext;
    FrameMotion { v, a, f, xv, xa, iv }
}

/// Inward accumulation `f_i + Σ_c X_cᵀ f_c`.
pub fn accumulate_force<S: Scalar>(f: &SpatialVec<S>, children: &[(Transform<S>, SpatialVec<S>)]) -> SpatialVec<S> {
    children.iter().fold(*f, |acc, (x, fc)| acc + x.tr_apply_force(fc))
}

/// `v ×* y`, either from the compact formula or from a materialized `crm(v)`
/// (as `−crm(v)ᵀ y`).
pub fn force_cross<S: Scalar>(v: &SpatialVec<S>, crm_v: Option<&Mat6<S>>, y: &SpatialVec<S>) -> SpatialVec<S> {
    match crm_v {
        None => v.cross_force(y),
        Some(m) => -m.tr_mul_vec(y),
    }
}

/// Which input the derivative column differentiates by, relative to one
/// frame: its own joint position, its own joint velocity, or neither.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ColumnRole {
    pub own_q: bool,
    pub own_qd: bool,
}

/// Column-only terms of the forward derivative sweep that do not depend on
/// the column: `xv × S`, `xa × S` and `v × S`.
#[derive(Clone, Copy, Debug)]
pub struct SelfTerms<S> {
    pub xv_s: SpatialVec<S>,
    pub xa_s: SpatialVec<S>,
    pub v_s: SpatialVec<S>,
}

pub fn self_terms<S: Scalar>(m: &FrameMotion<S>, s: &SpatialVec<S>) -> SelfTerms<S> {
    SelfTerms { xv_s: m.xv.cross_motion(s), xa_s: m.xa.cross_motion(s), v_s: m.v.cross_motion(s) }
}

/// Derivatives of `(v, a, f)` of one frame along one column.
///
/// With `X(q)` depending on `q_i` through `dX/dq_i = −(S×) X`, the position
/// column of the frame's own joint contributes `X v_λ × S` and `X a_λ × S`;
/// the velocity column contributes `S` and `v × S`.
///
/// `crm_dv` may materialize `crm(dv)` (for instance into workspace slots);
/// when it returns a matrix the cross products with `dv` go through it.
#[allow(clippy::too_many_arguments)]
pub fn grad_forward<S: Scalar>(
    x: &Transform<S>,
    s: &SpatialVec<S>,
    inertia: &RigidInertia<S>,
    m: &FrameMotion<S>,
    terms: &SelfTerms<S>,
    crm_v: Option<&Mat6<S>>,
    qd: S,
    parent: Option<(&SpatialVec<S>, &SpatialVec<S>)>,
    role: ColumnRole,
    crm_dv: &mut dyn FnMut(&SpatialVec<S>) -> Option<Mat6<S>>,
) -> (SpatialVec<S>, SpatialVec<S>, SpatialVec<S>) {
    let zero = SpatialVec::zero();
    let (dv_in, da_in) = match parent {
        Some((dv, da)) => (x.apply_motion(dv), x.apply_motion(da)),
        None => (zero, zero),
    };
    let dv = dv_in + select(role.own_q, &terms.xv_s, &zero) + select(role.own_qd, s, &zero);
    let vj = s.scale(qd);
    let dv_mat = crm_dv(&dv);
    let dv_vj = match &dv_mat {
        Some(mat) => mat.mul_vec(&vj),
        None => dv.cross_motion(&vj),
    };
    let da = da_in + select(role.own_q, &terms.xa_s, &zero) + dv_vj + select(role.own_qd, &terms.v_s, &zero);
    let df = inertia.mul_vec(&da) + force_cross(&dv, dv_mat.as_ref(), &m.iv) + force_cross(&m.v, crm_v, &inertia.mul_vec(&dv));
    (dv, da, df)
}

fn select<S: Scalar>(flag: bool, a: &SpatialVec<S>, b: &SpatialVec<S>) -> SpatialVec<S> {
    SpatialVec(std::array::from_fn(|k| S::choose(flag, a.0[k], b.0[k])))
}

/// Position-derivative term a child hands its parent: `X_cᵀ (S_c ×* f_c)`.
pub fn child_position_term<S: Scalar>(x: &Transform<S>, s: &SpatialVec<S>, ftot: &SpatialVec<S>) -> SpatialVec<S> {
    x.tr_apply_force(&s.cross_force(ftot))
}

/// Derivative of the accumulated force of one frame along one column.
/// Each child contributes `X_cᵀ df_c` plus, when the column is the child's
/// own position, its [`child_position_term`].
pub fn grad_accumulate<S: Scalar>(
    df: &SpatialVec<S>,
    children: &[(Transform<S>, Option<SpatialVec<S>>, bool, SpatialVec<S>)],
) -> SpatialVec<S> {
    let zero = SpatialVec::zero();
    children.iter().fold(*df, |acc, (x, dftot_c, own_q, g)| {
        let moved = match dftot_c {
            Some(d) => acc + x.tr_apply_force(d),
            None => acc,
        };
        moved + select(*own_q, g, &zero)
    })
}

/// Backward step of the direct inverse: articulated inertia, `U = IA S`,
/// `D⁻¹`, and the inertia handed to the parent `IA − U D⁻¹ Uᵀ`.
#[derive(Clone, Copy, Debug)]
pub struct Articulated<S> {
    pub u: SpatialVec<S>,
    pub dinv: S,
    pub ia_out: Mat6<S>,
}

pub fn minv_backward<S: Scalar>(
    inertia: &RigidInertia<S>,
    s: &SpatialVec<S>,
    children: &[(Transform<S>, Mat6<S>)],
) -> Articulated<S> {
    let ia = children.iter().fold(inertia.to_mat6(), |acc, (x, ia_c)| acc.add(&x.congruence(ia_c)));
    let u = ia.mul_vec(s);
    let dinv = s.dot(&u).recip();
    let ia_out = ia.sub_outer(&u.scale(dinv), &u);
    Articulated { u, dinv, ia_out }
}

/// Force-like column `F_i[j]` for `j` in the strict subtree of `i`, through
/// the child `c` that contains `j`: `X_cᵀ (F_c[j] + U_c M_c,j)`. `F_c[j]` is
/// absent when `j = c`.
pub fn minv_column_force<S: Scalar>(
    x_c: &Transform<S>,
    f_c: Option<&SpatialVec<S>>,
    u_c: &SpatialVec<S>,
    partial_cj: S,
) -> SpatialVec<S> {
    let pushed = u_c.scale(partial_cj);
    let total = match f_c {
        Some(f) => *f + pushed,
        None => pushed,
    };
    x_c.tr_apply_force(&total)
}

/// Backward-sweep value of row `i` of the inverse in column `j`: `D⁻¹` on the
/// diagonal, `−D⁻¹ Sᵀ F_i[j]` below it in the subtree.
pub fn minv_partial<S: Scalar>(dinv: S, s: &SpatialVec<S>, f: Option<&SpatialVec<S>>) -> S {
    match f {
        None => dinv,
        Some(f) => -(dinv * s.dot(f)),
    }
}

/// Forward step of the direct inverse for entry `(i, j)`, `j ≥ i`:
/// `m = partial − D⁻¹ Uᵀ X P_λ[j]`, `P_i[j] = X P_λ[j] + S m`.
pub fn minv_forward<S: Scalar>(
    x: &Transform<S>,
    p_parent: Option<&SpatialVec<S>>,
    partial: Option<S>,
    dinv: S,
    u: &SpatialVec<S>,
    s: &SpatialVec<S>,
) -> (S, SpatialVec<S>) {
    let carried = match p_parent {
        Some(p) => x.apply_motion(p),
        None => SpatialVec::zero(),
    };
    let base = partial.unwrap_or_else(S::zero);
    let m = match p_parent {
        Some(_) => base - dinv * u.dot(&carried),
        None => base,
    };
    (m, carried + s.scale(m))
}

/// `Σ_k a_k b_k`, accumulated left to right starting from the first product.
pub fn dot_ascending<S: Scalar>(terms: &[(S, S)]) -> S {
    let mut it = terms.iter();
    match it.next() {
        None => S::zero(),
        Some((a, b)) => it.fold(*a * *b, |acc, (a, b)| acc + *a * *b),
    }
}
