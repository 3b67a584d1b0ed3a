//! Spatial (6-D) algebra.
//!
//! Vectors are ordered `[angular; linear]`. A transform `X = (E, r)` maps
//! quantities from a parent frame into a child frame, where `E` rotates parent
//! coordinates into child coordinates and `r` is the child origin expressed in
//! parent coordinates. As a dense Plücker matrix,
//!
//! ```text
//! X = [ E        0 ]
//!     [ -E r×    E ]
//! ```
//!
//! All types are generic over [`Scalar`] so the same code serves the `f64`
//! reference algorithms and the kernel tracer. Dense `nalgebra` conversions are
//! provided for `f64` only and are meant for oracles.

use std::ops::{Add, Neg, Sub};

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use crate::scalar::Scalar;
use crate::urdf::{JointKind, JointSpec, LinkInertia};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec3<S = f64>(pub [S; 3]);

impl<S: Scalar> Vec3<S> {
    pub fn new(x: S, y: S, z: S) -> Self {
        Vec3([x, y, z])
    }

    pub fn zero() -> Self {
        Vec3([S::zero(); 3])
    }

    pub fn lit(v: [f64; 3]) -> Self {
        Vec3([S::lit(v[0]), S::lit(v[1]), S::lit(v[2])])
    }

    pub fn dot(&self, o: &Self) -> S {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    pub fn cross(&self, o: &Self) -> Self {
        let [a0, a1, a2] = self.0;
        let [b0, b1, b2] = o.0;
        Vec3([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0])
    }

    pub fn scale(&self, k: S) -> Self {
        Vec3(self.0.map(|x| x * k))
    }
}

impl<S: Scalar> Add for Vec3<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl<S: Scalar> Sub for Vec3<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl<S: Scalar> Neg for Vec3<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Vec3(self.0.map(|x| -x))
    }
}

impl Vec3<f64> {
    pub fn to_na(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn from_na(v: &Vector3<f64>) -> Self {
        Vec3([v.x, v.y, v.z])
    }
}

/// Row-major 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3<S = f64>(pub [[S; 3]; 3]);

impl<S: Scalar> Mat3<S> {
    pub fn zero() -> Self {
        Mat3([[S::zero(); 3]; 3])
    }

    pub fn identity() -> Self {
        let mut m = Self::zero();
        for i in 0..3 {
            m.0[i][i] = S::one();
        }
        m
    }

    pub fn lit(m: [[f64; 3]; 3]) -> Self {
        Mat3(m.map(|row| row.map(S::lit)))
    }

    /// The cross-product matrix `[v]×`, so that `skew(v) * w = v × w`.
    pub fn skew(v: &Vec3<S>) -> Self {
        let [x, y, z] = v.0;
        let o = S::zero();
        Mat3([[o, -z, y], [z, o, -x], [-y, x, o]])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn mul_vec(&self, v: &Vec3<S>) -> Vec3<S> {
        let m = &self.0;
        let v = &v.0;
        Vec3([
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ])
    }

    /// `selfᵀ v` without materializing the transpose.
    pub fn tr_mul_vec(&self, v: &Vec3<S>) -> Vec3<S> {
        let m = &self.0;
        let v = &v.0;
        Vec3([
            m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
            m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
            m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
        ])
    }

    pub fn mul(&self, o: &Self) -> Self {
        let mut out = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                out.0[i][j] =
                    self.0[i][0] * o.0[0][j] + self.0[i][1] * o.0[1][j] + self.0[i][2] * o.0[2][j];
            }
        }
        out
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut out = *self;
        for i in 0..3 {
            for j in 0..3 {
                out.0[i][j] = self.0[i][j] + o.0[i][j];
            }
        }
        out
    }

    pub fn sub(&self, o: &Self) -> Self {
        let mut out = *self;
        for i in 0..3 {
            for j in 0..3 {
                out.0[i][j] = self.0[i][j] - o.0[i][j];
            }
        }
        out
    }
}

impl Mat3<f64> {
    pub fn to_na(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.0[i][j])
    }

    pub fn from_na(m: &Matrix3<f64>) -> Self {
        Mat3(std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)])))
    }
}

/// A spatial motion or force vector, `[angular; linear]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialVec<S = f64>(pub [S; 6]);

impl<S: Scalar> SpatialVec<S> {
    pub fn zero() -> Self {
        SpatialVec([S::zero(); 6])
    }

    pub fn lit(v: [f64; 6]) -> Self {
        SpatialVec(v.map(S::lit))
    }

    pub fn from_parts(ang: Vec3<S>, lin: Vec3<S>) -> Self {
        let [a0, a1, a2] = ang.0;
        let [l0, l1, l2] = lin.0;
        SpatialVec([a0, a1, a2, l0, l1, l2])
    }

    pub fn angular(&self) -> Vec3<S> {
        Vec3([self.0[0], self.0[1], self.0[2]])
    }

    pub fn linear(&self) -> Vec3<S> {
        Vec3([self.0[3], self.0[4], self.0[5]])
    }

    pub fn scale(&self, k: S) -> Self {
        SpatialVec(self.0.map(|x| x * k))
    }

    pub fn dot(&self, o: &Self) -> S {
        let mut acc = self.0[0] * o.0[0];
        for k in 1..6 {
            acc = acc + self.0[k] * o.0[k];
        }
        acc
    }

    /// Motion cross product `self × m`, equal to `crm(self) * m`.
    pub fn cross_motion(&self, m: &Self) -> Self {
        let w = self.angular();
        let v = self.linear();
        let mw = m.angular();
        let mv = m.linear();
        Self::from_parts(w.cross(&mw), w.cross(&mv) + v.cross(&mw))
    }

    /// Force cross product `self ×* f`, equal to `crf(self) * f`.
    pub fn cross_force(&self, f: &Self) -> Self {
        let w = self.angular();
        let v = self.linear();
        let n = f.angular();
        let fl = f.linear();
        Self::from_parts(w.cross(&n) + v.cross(&fl), w.cross(&fl))
    }
}

impl<S: Scalar> Add for SpatialVec<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        SpatialVec(std::array::from_fn(|k| self.0[k] + o.0[k]))
    }
}

impl<S: Scalar> Sub for SpatialVec<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        SpatialVec(std::array::from_fn(|k| self.0[k] - o.0[k]))
    }
}

impl<S: Scalar> Neg for SpatialVec<S> {
    type Output = Self;
    fn neg(self) -> Self {
        SpatialVec(self.0.map(|x| -x))
    }
}

impl SpatialVec<f64> {
    pub fn to_na(&self) -> Vector6<f64> {
        Vector6::from_column_slice(&self.0)
    }

    pub fn from_na(v: &Vector6<f64>) -> Self {
        SpatialVec(std::array::from_fn(|k| v[k]))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Row-major 6×6 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat6<S = f64>(pub [[S; 6]; 6]);

impl<S: Scalar> Mat6<S> {
    pub fn zero() -> Self {
        Mat6([[S::zero(); 6]; 6])
    }

    pub fn mul_vec(&self, v: &SpatialVec<S>) -> SpatialVec<S> {
        SpatialVec(std::array::from_fn(|r| {
            let row = &self.0[r];
            let mut acc = row[0] * v.0[0];
            for k in 1..6 {
                acc = acc + row[k] * v.0[k];
            }
            acc
        }))
    }

    /// `selfᵀ v`.
    pub fn tr_mul_vec(&self, v: &SpatialVec<S>) -> SpatialVec<S> {
        SpatialVec(std::array::from_fn(|c| {
            let mut acc = self.0[0][c] * v.0[0];
            for k in 1..6 {
                acc = acc + self.0[k][c] * v.0[k];
            }
            acc
        }))
    }

    pub fn block(&self, r: usize, c: usize) -> Mat3<S> {
        Mat3(std::array::from_fn(|i| std::array::from_fn(|j| self.0[r + i][c + j])))
    }

    pub fn from_blocks(a: &Mat3<S>, b: &Mat3<S>, c: &Mat3<S>, d: &Mat3<S>) -> Self {
        let mut m = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = a.0[i][j];
                m.0[i][j + 3] = b.0[i][j];
                m.0[i + 3][j] = c.0[i][j];
                m.0[i + 3][j + 3] = d.0[i][j];
            }
        }
        m
    }

    pub fn transpose(&self) -> Self {
        Mat6(std::array::from_fn(|i| std::array::from_fn(|j| self.0[j][i])))
    }

    /// `self − u wᵀ`.
    pub fn sub_outer(&self, u: &SpatialVec<S>, w: &SpatialVec<S>) -> Self {
        Mat6(std::array::from_fn(|i| {
            std::array::from_fn(|j| self.0[i][j] - u.0[i] * w.0[j])
        }))
    }

    pub fn add(&self, o: &Self) -> Self {
        Mat6(std::array::from_fn(|i| std::array::from_fn(|j| self.0[i][j] + o.0[i][j])))
    }
}

impl Mat6<f64> {
    pub fn to_na(&self) -> Matrix6<f64> {
        Matrix6::from_fn(|i, j| self.0[i][j])
    }

    pub fn from_na(m: &Matrix6<f64>) -> Self {
        Mat6(std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)])))
    }
}

/// The motion cross-product operator `v×`, laid out entry by entry.
pub fn crm<S: Scalar>(v: &SpatialVec<S>) -> Mat6<S> {
    let o = S::zero();
    let [v0, v1, v2, v3, v4, v5] = v.0;
    Mat6([
        [o, -v2, v1, o, o, o],
        [v2, o, -v0, o, o, o],
        [-v1, v0, o, o, o, o],
        [o, -v5, v4, o, -v2, v1],
        [v5, o, -v3, v2, o, -v0],
        [-v4, v3, o, -v1, v0, o],
    ])
}

/// The force cross-product operator `v×* = −(v×)ᵀ`.
pub fn crf<S: Scalar>(v: &SpatialVec<S>) -> Mat6<S> {
    let m = crm(v);
    Mat6(std::array::from_fn(|i| std::array::from_fn(|j| -m.0[j][i])))
}

/// Compact Plücker transform from a parent frame to a child frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform<S = f64> {
    /// Rotates parent coordinates into child coordinates.
    pub rot: Mat3<S>,
    /// Child origin in parent coordinates.
    pub trans: Vec3<S>,
}

impl<S: Scalar> Transform<S> {
    pub fn identity() -> Self {
        Transform { rot: Mat3::identity(), trans: Vec3::zero() }
    }

    /// `X m`: motion vector from parent to child coordinates.
    pub fn apply_motion(&self, m: &SpatialVec<S>) -> SpatialVec<S> {
        let w = m.angular();
        let v = m.linear();
        let lin = v - self.trans.cross(&w);
        SpatialVec::from_parts(self.rot.mul_vec(&w), self.rot.mul_vec(&lin))
    }

    /// `X⁻¹ m`: motion vector from child to parent coordinates.
    pub fn inv_apply_motion(&self, m: &SpatialVec<S>) -> SpatialVec<S> {
        let w = self.rot.tr_mul_vec(&m.angular());
        let v = self.rot.tr_mul_vec(&m.linear());
        SpatialVec::from_parts(w, v + self.trans.cross(&w))
    }

    /// `X* f`: force vector from parent to child coordinates.
    pub fn apply_force(&self, f: &SpatialVec<S>) -> SpatialVec<S> {
        let n = f.angular();
        let fl = f.linear();
        let moment = n - self.trans.cross(&fl);
        SpatialVec::from_parts(self.rot.mul_vec(&moment), self.rot.mul_vec(&fl))
    }

    /// `Xᵀ f`: force vector from child to parent coordinates.
    pub fn tr_apply_force(&self, f: &SpatialVec<S>) -> SpatialVec<S> {
        let fl = self.rot.tr_mul_vec(&f.linear());
        let n = self.rot.tr_mul_vec(&f.angular());
        SpatialVec::from_parts(n + self.trans.cross(&fl), fl)
    }

    /// `self · inner`: first apply `inner` (a → b), then `self` (b → c).
    pub fn compose(&self, inner: &Self) -> Self {
        Transform {
            rot: self.rot.mul(&inner.rot),
            trans: inner.trans + inner.rot.tr_mul_vec(&self.trans),
        }
    }

    pub fn inverse(&self) -> Self {
        let rot = self.rot.transpose();
        Transform { rot, trans: -(self.rot.mul_vec(&self.trans)) }
    }

    /// `Xᵀ M X`: a child-frame inertia (or any symmetric spatial operator
    /// mapping motion to force) expressed in the parent frame.
    pub fn congruence(&self, m: &Mat6<S>) -> Mat6<S> {
        let et = self.rot.transpose();
        // rotate: J = diag(E)ᵀ M diag(E)
        let a = et.mul(&m.block(0, 0).mul(&self.rot));
        let b = et.mul(&m.block(0, 3).mul(&self.rot));
        let bt = et.mul(&m.block(3, 0).mul(&self.rot));
        let c = et.mul(&m.block(3, 3).mul(&self.rot));
        // translate: [1 r×; 0 1] J [1 0; -r× 1]
        let rx = Mat3::skew(&self.trans);
        let top_right = b.add(&rx.mul(&c));
        let top_left = a.add(&rx.mul(&bt)).sub(&top_right.mul(&rx));
        let bottom_left = bt.sub(&c.mul(&rx));
        Mat6::from_blocks(&top_left, &top_right, &bottom_left, &c)
    }
}

impl Transform<f64> {
    /// Dense 6×6 Plücker matrix for motion vectors.
    pub fn to_matrix(&self) -> Matrix6<f64> {
        let e = self.rot.to_na();
        let rx = Mat3::skew(&self.trans).to_na();
        let mut x = Matrix6::zeros();
        x.fixed_view_mut::<3, 3>(0, 0).copy_from(&e);
        x.fixed_view_mut::<3, 3>(3, 3).copy_from(&e);
        x.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-e * rx));
        x
    }

    pub fn is_proper(&self, tol: f64) -> bool {
        let e = self.rot.to_na();
        (e.transpose() * e - Matrix3::identity()).amax() <= tol && (e.determinant() - 1.0).abs() <= tol
    }
}

/// Rigid-body spatial inertia stored compactly about the body frame origin:
/// mass `m`, first moment `h = m c`, and rotational inertia about the origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidInertia<S = f64> {
    pub mass: S,
    pub h: Vec3<S>,
    pub rot: Mat3<S>,
}

impl RigidInertia<f64> {
    pub fn from_link(li: &LinkInertia) -> Self {
        let c = Vec3(li.com);
        let cx = Mat3::skew(&c);
        // parallel axis: I_O = I_c + m [c]× [c]×ᵀ
        let shift = cx.mul(&cx.transpose());
        let mut rot = Mat3(li.inertia_about_com);
        for i in 0..3 {
            for j in 0..3 {
                rot.0[i][j] += li.mass * shift.0[i][j];
            }
        }
        RigidInertia { mass: li.mass, h: c.scale(li.mass), rot }
    }

    pub fn lift<S: Scalar>(&self) -> RigidInertia<S> {
        RigidInertia { mass: S::lit(self.mass), h: Vec3::lit(self.h.0), rot: Mat3::lit(self.rot.0) }
    }

    pub fn to_matrix(&self) -> Matrix6<f64> {
        self.to_mat6().to_na()
    }
}

impl<S: Scalar> RigidInertia<S> {
    /// `I v = [Ī ω + h × v; m v − h × ω]`.
    pub fn mul_vec(&self, v: &SpatialVec<S>) -> SpatialVec<S> {
        let w = v.angular();
        let lin = v.linear();
        let ang = self.rot.mul_vec(&w) + self.h.cross(&lin);
        let lin_out = lin.scale(self.mass) - self.h.cross(&w);
        SpatialVec::from_parts(ang, lin_out)
    }

    pub fn to_mat6(&self) -> Mat6<S> {
        let hx = Mat3::skew(&self.h);
        let mut m1 = Mat3::zero();
        for i in 0..3 {
            m1.0[i][i] = self.mass;
        }
        Mat6::from_blocks(&self.rot, &hx, &hx.transpose(), &m1)
    }
}

/// Plücker transform across joint `spec` at position `q`.
///
/// Composes the fixed origin transform with a rotation about (revolute) or a
/// translation along (prismatic) the joint axis, both expressed in the joint
/// frame. Fixed joints ignore `q`.
pub fn xform_from_joint<S: Scalar>(spec: &JointSpec, q: S) -> Transform<S> {
    // origin_rotation maps joint-frame coordinates to parent coordinates
    let r_origin = Mat3::<S>::lit(spec.origin_rotation);
    let p_origin = Vec3::<S>::lit(spec.origin_translation);
    let axis = spec.axis;
    match spec.kind {
        JointKind::Fixed => Transform { rot: r_origin.transpose(), trans: p_origin },
        JointKind::Prismatic => {
            let offset = r_origin.mul_vec(&Vec3::lit(axis).scale(q));
            Transform { rot: r_origin.transpose(), trans: p_origin + offset }
        }
        JointKind::Revolute => {
            let (s, c) = (q.sin(), q.cos());
            // Rot(a, q)ᵀ = c 1 − s [a]× + (1 − c) a aᵀ
            let omc = S::one() - c;
            let mut rt = Mat3::<S>::zero();
            for i in 0..3 {
                for j in 0..3 {
                    let outer = S::lit(axis[i] * axis[j]);
                    let diag = if i == j { c } else { S::zero() };
                    rt.0[i][j] = diag + omc * outer;
                }
            }
            let skew = Mat3::<S>::skew(&Vec3::lit(axis));
            for i in 0..3 {
                for j in 0..3 {
                    rt.0[i][j] = rt.0[i][j] - s * skew.0[i][j];
                }
            }
            Transform { rot: rt.mul(&r_origin.transpose()), trans: p_origin }
        }
    }
}

/// Motion subspace of a single-dof joint in its child frame.
///
/// # Panics
/// On a fixed joint, which has no motion subspace.
pub fn motion_subspace(spec: &JointSpec) -> SpatialVec<f64> {
    let a = spec.axis;
    match spec.kind {
        JointKind::Revolute => SpatialVec([a[0], a[1], a[2], 0.0, 0.0, 0.0]),
        JointKind::Prismatic => SpatialVec([0.0, 0.0, 0.0, a[0], a[1], a[2]]),
        JointKind::Fixed => panic!("fixed joint `{}` has no motion subspace", spec.name),
    }
}
