//! Reference dynamics algorithms and their oracles.
//!
//! Everything here favors clarity over speed: dense loops over all frames and
//! all derivative columns. Generated kernels are checked against these
//! functions, and these functions are in turn checked against independent
//! oracles (composite-rigid-body mass matrix, finite differences, closed-form
//! pendulum dynamics, geometric Jacobians) in the tests.
//!
//! Torques follow `M q̈ + C q̇ + G = τ + Jᵀ F`: an external force reduces the
//! torque required for a given motion by its generalized force.

use nalgebra::{DMatrix, Matrix6, Vector6};

use crate::recur::{self, ColumnRole, FrameMotion};
use crate::spatial::{motion_subspace, xform_from_joint, RigidInertia, SpatialVec, Transform};
use crate::urdf::RobotModel;

/// `∂out/∂q` and `∂out/∂q̇`, both `n × n`.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsGradients {
    pub dq: DMatrix<f64>,
    pub dqd: DMatrix<f64>,
}

/// Joint-position-dependent quantities of every frame.
pub(crate) struct Kinematics {
    pub xs: Vec<Transform>,
    pub s: Vec<SpatialVec>,
    pub inertia: Vec<RigidInertia>,
    pub children_desc: Vec<Vec<usize>>,
}

pub(crate) fn kinematics(model: &RobotModel, q: &[f64]) -> Kinematics {
    let n = model.n_frames();
    assert_eq!(q.len(), n, "q has length {}, model has {n} dof", q.len());
    let tree = model.tree();
    Kinematics {
        xs: model.joints.iter().zip(q).map(|(j, &qi)| xform_from_joint(j, qi)).collect(),
        s: model.joints.iter().map(motion_subspace).collect(),
        inertia: model.inertias.iter().map(RigidInertia::from_link).collect(),
        children_desc: tree.children.iter().map(|c| c.iter().rev().copied().collect()).collect(),
    }
}

fn check_len(name: &str, v: &[f64], n: usize) {
    assert_eq!(v.len(), n, "{name} has length {}, model has {n} dof", v.len());
}

fn check_fext(fext: Option<&[SpatialVec]>, n: usize) {
    if let Some(f) = fext {
        assert_eq!(f.len(), n, "f_ext has {} entries, model has {n} frames", f.len());
    }
}

struct RneaPass {
    motion: Vec<FrameMotion<f64>>,
    ftot: Vec<SpatialVec>,
    tau: Vec<f64>,
}

fn rnea_pass(model: &RobotModel, k: &Kinematics, qd: &[f64], qdd: &[f64], fext: Option<&[SpatialVec]>) -> RneaPass {
    let n = model.n_frames();
    let a0 = recur::base_acceleration::<f64>(model.gravity);
    let mut motion: Vec<FrameMotion<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let fe = fext.map_or(SpatialVec::zero(), |f| f[i]);
        let (pv, pa) = match model.parent[i] {
            Some(p) => (Some(&motion[p].v), motion[p].a),
            None => (None, a0),
        };
        let m = recur::rnea_forward(&k.xs[i], &k.s[i], &k.inertia[i], pv, &pa, qd[i], qdd[i], &fe);
        motion.push(m);
    }
    let mut ftot = vec![SpatialVec::zero(); n];
    for i in (0..n).rev() {
        let children: Vec<_> = k.children_desc[i].iter().map(|&c| (k.xs[c], ftot[c])).collect();
        ftot[i] = recur::accumulate_force(&motion[i].f, &children);
    }
    let tau = (0..n).map(|i| k.s[i].dot(&ftot[i])).collect();
    RneaPass { motion, ftot, tau }
}

/// Inverse dynamics by the recursive Newton-Euler algorithm.
///
/// `fext[i]` is a spatial force on frame `i`, in frame-`i` coordinates about
/// the frame origin.
pub fn rnea(model: &RobotModel, q: &[f64], qd: &[f64], qdd: &[f64], fext: Option<&[SpatialVec]>) -> Vec<f64> {
    let n = model.n_frames();
    check_len("qd", qd, n);
    check_len("qdd", qdd, n);
    check_fext(fext, n);
    let k = kinematics(model, q);
    rnea_pass(model, &k, qd, qdd, fext).tau
}

/// Per-frame forward-sweep quantities and accumulated forces of the
/// sequential RNEA loops, for comparing against other execution orders.
pub fn rnea_frames(
    model: &RobotModel,
    q: &[f64],
    qd: &[f64],
    qdd: &[f64],
    fext: Option<&[SpatialVec]>,
) -> (Vec<FrameMotion<f64>>, Vec<SpatialVec>) {
    let n = model.n_frames();
    check_len("qd", qd, n);
    check_len("qdd", qdd, n);
    check_fext(fext, n);
    let k = kinematics(model, q);
    let pass = rnea_pass(model, &k, qd, qdd, fext);
    (pass.motion, pass.ftot)
}

/// `C q̇ + G − Jᵀ F`, i.e. inverse dynamics at zero acceleration.
pub fn bias_force(model: &RobotModel, q: &[f64], qd: &[f64], fext: Option<&[SpatialVec]>) -> Vec<f64> {
    rnea(model, q, qd, &vec![0.0; model.n_frames()], fext)
}

/// Mass matrix by composite-rigid-body accumulation with dense 6×6 matrices.
pub fn crba_mass_matrix(model: &RobotModel, q: &[f64]) -> DMatrix<f64> {
    let n = model.n_frames();
    let k = kinematics(model, q);
    let xm: Vec<Matrix6<f64>> = k.xs.iter().map(Transform::to_matrix).collect();
    let s: Vec<Vector6<f64>> = k.s.iter().map(SpatialVec::to_na).collect();
    let mut ic: Vec<Matrix6<f64>> = k.inertia.iter().map(RigidInertia::to_matrix).collect();
    for i in (0..n).rev() {
        if let Some(p) = model.parent[i] {
            let moved = xm[i].transpose() * ic[i] * xm[i];
            ic[p] += moved;
        }
    }
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut f = ic[i] * s[i];
        m[(i, i)] = s[i].dot(&f);
        let mut j = i;
        while let Some(p) = model.parent[j] {
            f = xm[j].transpose() * f;
            j = p;
            m[(i, j)] = s[j].dot(&f);
            m[(j, i)] = m[(i, j)];
        }
    }
    m
}

/// Mass matrix one column at a time: `M e_j = RNEA(q, 0, e_j)` without gravity.
pub fn mass_matrix_by_columns(model: &RobotModel, q: &[f64]) -> DMatrix<f64> {
    let n = model.n_frames();
    let mut weightless = model.clone();
    weightless.gravity = [0.0; 3];
    let zero = vec![0.0; n];
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = rnea(&weightless, q, &zero, &e, None);
        for i in 0..n {
            m[(i, j)] = col[i];
        }
    }
    m
}

/// Inverse mass matrix by the direct articulated-body recursion: one inward
/// sweep builds the articulated inertias and the partial rows, one outward
/// sweep completes the upper triangle, which is then mirrored.
pub fn minv_direct(model: &RobotModel, q: &[f64]) -> DMatrix<f64> {
    let n = model.n_frames();
    let k = kinematics(model, q);
    let tree = model.tree();
    let mut art: Vec<Option<recur::Articulated<f64>>> = vec![None; n];
    // f_cols[i][j]: F_i[j] for j in the strict subtree of i
    let mut f_cols: Vec<Vec<Option<SpatialVec>>> = vec![vec![None; n]; n];
    let mut partial: Vec<Vec<Option<f64>>> = vec![vec![None; n]; n];
    for i in (0..n).rev() {
        let children: Vec<_> = k.children_desc[i].iter().map(|&c| (k.xs[c], art[c].unwrap().ia_out)).collect();
        let a = recur::minv_backward(&k.inertia[i], &k.s[i], &children);
        for j in tree.subtree(i) {
            if j == i {
                partial[i][j] = Some(recur::minv_partial(a.dinv, &k.s[i], None));
                continue;
            }
            let c = *k.children_desc[i].iter().find(|&&c| tree.is_ancestor_or_self(c, j)).unwrap();
            let ac = art[c].unwrap();
            let f = recur::minv_column_force(&k.xs[c], f_cols[c][j].as_ref(), &ac.u, partial[c][j].unwrap());
            partial[i][j] = Some(recur::minv_partial(a.dinv, &k.s[i], Some(&f)));
            f_cols[i][j] = Some(f);
        }
        art[i] = Some(a);
    }
    let mut minv = DMatrix::zeros(n, n);
    let mut p_cols: Vec<Vec<SpatialVec>> = vec![vec![SpatialVec::zero(); n]; n];
    for i in 0..n {
        let a = art[i].unwrap();
        for j in i..n {
            if !tree.same_limb(i, j) {
                continue;
            }
            let pp = model.parent[i].map(|p| &p_cols[p][j]);
            let (m, p) = recur::minv_forward(&k.xs[i], pp, partial[i][j], a.dinv, &a.u, &k.s[i]);
            minv[(i, j)] = m;
            minv[(j, i)] = m;
            p_cols[i][j] = p;
        }
    }
    minv
}

/// `Σ_k m[(r, k)] v[k]` in ascending `k`.
fn row_times(m: &DMatrix<f64>, r: usize, v: impl Fn(usize) -> f64) -> f64 {
    let terms: Vec<(f64, f64)> = (0..m.ncols()).map(|k| (m[(r, k)], v(k))).collect();
    recur::dot_ascending(&terms)
}

/// `q̈ = M⁻¹ (τ − bias)`.
pub fn forward_dynamics(
    model: &RobotModel,
    q: &[f64],
    qd: &[f64],
    tau: &[f64],
    fext: Option<&[SpatialVec]>,
) -> Vec<f64> {
    let n = model.n_frames();
    check_len("tau", tau, n);
    let c = bias_force(model, q, qd, fext);
    let minv = minv_direct(model, q);
    let rhs: Vec<f64> = (0..n).map(|k| tau[k] - c[k]).collect();
    (0..n).map(|r| row_times(&minv, r, |k| rhs[k])).collect()
}

/// Analytical `∂τ/∂q` and `∂τ/∂q̇` of inverse dynamics.
///
/// Each column is an independent forward/backward sweep of the differentiated
/// recursion; column `c < n` is `∂/∂q_c`, column `n + c` is `∂/∂q̇_c`.
pub fn rnea_grad(
    model: &RobotModel,
    q: &[f64],
    qd: &[f64],
    qdd: &[f64],
    fext: Option<&[SpatialVec]>,
) -> DynamicsGradients {
    let n = model.n_frames();
    check_len("qd", qd, n);
    check_len("qdd", qdd, n);
    check_fext(fext, n);
    let k = kinematics(model, q);
    let pass = rnea_pass(model, &k, qd, qdd, fext);
    let terms: Vec<_> = (0..n).map(|i| recur::self_terms(&pass.motion[i], &k.s[i])).collect();
    let g: Vec<SpatialVec> = (0..n).map(|i| recur::child_position_term(&k.xs[i], &k.s[i], &pass.ftot[i])).collect();

    let mut dq = DMatrix::zeros(n, n);
    let mut dqd = DMatrix::zeros(n, n);
    for col in 0..2 * n {
        let j = col % n;
        let by_q = col < n;
        let mut dv = vec![SpatialVec::zero(); n];
        let mut da = vec![SpatialVec::zero(); n];
        let mut df = vec![SpatialVec::zero(); n];
        for i in 0..n {
            let role = ColumnRole { own_q: by_q && i == j, own_qd: !by_q && i == j };
            let parent = model.parent[i].map(|p| (&dv[p], &da[p]));
            let (v, a, f) = recur::grad_forward(
                &k.xs[i],
                &k.s[i],
                &k.inertia[i],
                &pass.motion[i],
                &terms[i],
                None,
                qd[i],
                parent,
                role,
                &mut |_| None,
            );
            dv[i] = v;
            da[i] = a;
            df[i] = f;
        }
        let mut dftot = vec![SpatialVec::zero(); n];
        for i in (0..n).rev() {
            let children: Vec<_> =
                k.children_desc[i].iter().map(|&c| (k.xs[c], Some(dftot[c]), by_q && c == j, g[c])).collect();
            dftot[i] = recur::grad_accumulate(&df[i], &children);
        }
        let out = if by_q { &mut dq } else { &mut dqd };
        for i in 0..n {
            out[(i, j)] = k.s[i].dot(&dftot[i]);
        }
    }
    let _ = pass.tau;
    DynamicsGradients { dq, dqd }
}

/// `∂q̈/∂u = −M⁻¹ ∂τ/∂u` evaluated at `q̈ = forward_dynamics(q, q̇, τ)`.
pub fn fd_grad(
    model: &RobotModel,
    q: &[f64],
    qd: &[f64],
    tau: &[f64],
    fext: Option<&[SpatialVec]>,
) -> DynamicsGradients {
    let n = model.n_frames();
    let qdd = forward_dynamics(model, q, qd, tau, fext);
    let g = rnea_grad(model, q, qd, &qdd, fext);
    let minv = minv_direct(model, q);
    let apply = |d: &DMatrix<f64>| DMatrix::from_fn(n, n, |r, c| -row_times(&minv, r, |k| d[(k, c)]));
    DynamicsGradients { dq: apply(&g.dq), dqd: apply(&g.dqd) }
}

/// Central differences, one column per input coordinate.
pub fn finite_diff_oracle(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> DMatrix<f64> {
    assert!(h > 0.0, "step must be positive");
    let base = f(x);
    let mut jac = DMatrix::zeros(base.len(), x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        xp[j] = x[j] + h;
        let plus = f(&xp);
        xp[j] = x[j] - h;
        let minus = f(&xp);
        xp[j] = x[j];
        for i in 0..base.len() {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    jac
}

/// Largest violation of `|a − b| ≤ abs + rel |b|`, as a multiple of the
/// allowed error (≤ 1 means within tolerance).
pub fn tolerance_ratio(a: &DMatrix<f64>, b: &DMatrix<f64>, abs: f64, rel: f64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs() / (abs + rel * y.abs())).fold(0.0, f64::max)
}

/// Base-to-frame transforms of every frame.
pub fn frame_poses(model: &RobotModel, q: &[f64]) -> Vec<Transform> {
    let k = kinematics(model, q);
    let mut poses: Vec<Transform> = Vec::with_capacity(model.n_frames());
    for (i, x) in k.xs.iter().enumerate() {
        let pose = match model.parent[i] {
            Some(p) => x.compose(&poses[p]),
            None => *x,
        };
        poses.push(pose);
    }
    poses
}

/// A world-frame force and moment acting at `point` (frame coordinates),
/// re-expressed as a spatial force in frame coordinates about the frame
/// origin. `pose` is the base-to-frame transform from [`frame_poses`].
pub fn world_wrench_to_frame(pose: &Transform, point: [f64; 3], force: [f64; 3], moment: [f64; 3]) -> SpatialVec {
    use crate::spatial::Vec3;
    let f = pose.rot.mul_vec(&Vec3(force));
    let n = pose.rot.mul_vec(&Vec3(moment)) + Vec3(point).cross(&f);
    SpatialVec::from_parts(n, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
    }

    /// Single revolute-z link with a unit point mass one meter along x.
    fn unit_pendulum_z() -> RobotModel {
        let mut m = models::link1();
        m.joints[0].axis = [0.0, 0.0, 1.0];
        m.inertias[0] = crate::urdf::LinkInertia { mass: 1.0, com: [1.0, 0.0, 0.0], inertia_about_com: [[0.0; 3]; 3] };
        m.gravity = [0.0; 3];
        m
    }

    #[test]
    fn pendulum_at_rest_needs_no_torque() {
        let m = unit_pendulum_z();
        assert_eq!(rnea(&m, &[0.3], &[0.0], &[0.0], None), vec![0.0]);
    }

    #[test]
    fn pendulum_torque_is_inertia_times_acceleration() {
        let m = unit_pendulum_z();
        for alpha in [-2.0, 0.5, 3.0] {
            let tau = rnea(&m, &[0.7], &[0.0], &[alpha], None);
            assert!((tau[0] - alpha).abs() < 1e-14);
        }
        assert!((crba_mass_matrix(&m, &[0.2])[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((minv_direct(&m, &[0.2])[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((forward_dynamics(&m, &[0.2], &[0.0], &[2.0], None)[0] - 2.0).abs() < 1e-14);
        let g = rnea_grad(&m, &[0.4], &[0.3], &[0.1], None);
        assert_eq!(g.dq[(0, 0)], 0.0);
        assert_eq!(fd_grad(&m, &[0.4], &[0.3], &[0.1], None).dq[(0, 0)], 0.0);
    }

    #[test]
    fn bias_without_gravity_or_velocity_is_zero() {
        let mut m = models::chain7();
        m.gravity = [0.0; 3];
        let (q, _, _) = models::random_state(7, 3);
        assert!(bias_force(&m, &q, &[0.0; 7], None).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn bias_is_rnea_at_zero_acceleration() {
        let m = models::quad12();
        let (q, qd, _) = models::random_state(12, 9);
        assert_eq!(bias_force(&m, &q, &qd, None), rnea(&m, &q, &qd, &[0.0; 12], None));
    }

    /// About `y`, with the link along `x` and gravity along `−z`, the height of
    /// a point at distance `L` is `−L sin q`, so the gravity torque to hold it
    /// is `−m g L cos q`.
    #[test]
    fn pendulum_gravity_torque_matches_closed_form() {
        let m = models::link1();
        let li = &m.inertias[0];
        let g = 9.81;
        let l = li.com[0];
        let iyy = li.inertia_about_com[1][1];
        for q in [-1.0, 0.0, 0.4, 2.5] {
            let tau = rnea(&m, &[q], &[0.0], &[0.0], None)[0];
            assert!((tau - (-li.mass * g * l * f64::cos(q))).abs() < 1e-12);
            let qdd = 0.7;
            let tau = rnea(&m, &[q], &[1.3], &[qdd], None)[0];
            let expected = (iyy + li.mass * l * l) * qdd - li.mass * g * l * f64::cos(q);
            assert!((tau - expected).abs() < 1e-12);
        }
    }

    /// Closed-form equations of motion of the planar double pendulum.
    ///
    /// Joint axes are `y`, so with angles measured from `x` a point at
    /// distance `r` along link 1 sits at `(r cos θ, 0, −r sin θ)`.
    /// Returns `(M, h)` with `τ = M q̈ + h`.
    fn double_pendulum(m: &RobotModel, q: &[f64], qd: &[f64]) -> ([[f64; 2]; 2], [f64; 2]) {
        let (m1, m2) = (m.inertias[0].mass, m.inertias[1].mass);
        let (c1, c2) = (m.inertias[0].com[0], m.inertias[1].com[0]);
        let (i1, i2) = (m.inertias[0].inertia_about_com[1][1], m.inertias[1].inertia_about_com[1][1]);
        let l1 = m.joints[1].origin_translation[0];
        let g = -m.gravity[2];
        let (t1, t2) = (q[0], q[1]);
        let cos2 = t2.cos();
        let sin2 = t2.sin();
        let m11 = i1 + i2 + m1 * c1 * c1 + m2 * (l1 * l1 + c2 * c2 + 2.0 * l1 * c2 * cos2);
        let m12 = i2 + m2 * (c2 * c2 + l1 * c2 * cos2);
        let m22 = i2 + m2 * c2 * c2;
        let k = m2 * l1 * c2 * sin2;
        let cor = [-k * (2.0 * qd[0] * qd[1] + qd[1] * qd[1]), k * qd[0] * qd[0]];
        // potential V = −g (m1 c1 sin t1 + m2 (l1 sin t1 + c2 sin(t1+t2)))
        let grav = [
            -g * (m1 * c1 * t1.cos() + m2 * (l1 * t1.cos() + c2 * (t1 + t2).cos())),
            -g * m2 * c2 * (t1 + t2).cos(),
        ];
        ([[m11, m12], [m12, m22]], [cor[0] + grav[0], cor[1] + grav[1]])
    }

    #[test]
    fn double_pendulum_matches_lagrangian() {
        let m = models::planar2();
        for seed in 0..50 {
            let (q, qd, qdd) = models::random_state(2, seed);
            let (mm, h) = double_pendulum(&m, &q, &qd);
            let tau = rnea(&m, &q, &qd, &qdd, None);
            for r in 0..2 {
                let expected = mm[r][0] * qdd[0] + mm[r][1] * qdd[1] + h[r];
                assert!((tau[r] - expected).abs() < 1e-10, "seed {seed} row {r}: {} vs {expected}", tau[r]);
            }
        }
    }

    #[test]
    fn double_pendulum_gradient_matches_lagrangian_jacobian() {
        let m = models::planar2();
        let (m1, m2) = (m.inertias[0].mass, m.inertias[1].mass);
        let (c1, c2) = (m.inertias[0].com[0], m.inertias[1].com[0]);
        let l1 = m.joints[1].origin_translation[0];
        let g = -m.gravity[2];
        for seed in 0..50 {
            let (q, qd, qdd) = models::random_state(2, 100 + seed);
            let grad = rnea_grad(&m, &q, &qd, &qdd, None);
            let (t1, t2) = (q[0], q[1]);
            let (s2, c2t) = (t2.sin(), t2.cos());
            let s1 = t1.sin();
            let s12 = (t1 + t2).sin();
            // differentiate τ = M q̈ + h by hand
            let dm11 = -2.0 * m2 * l1 * c2 * s2;
            let dm12 = -m2 * l1 * c2 * s2;
            let dk = m2 * l1 * c2 * c2t;
            let cor_q2 = [-dk * (2.0 * qd[0] * qd[1] + qd[1] * qd[1]), dk * qd[0] * qd[0]];
            let dq = [
                [
                    g * (m1 * c1 * s1 + m2 * (l1 * s1 + c2 * s12)),
                    dm11 * qdd[0] + dm12 * qdd[1] + cor_q2[0] + g * m2 * c2 * s12,
                ],
                [g * m2 * c2 * s12, dm12 * qdd[0] + cor_q2[1] + g * m2 * c2 * s12],
            ];
            let k = m2 * l1 * c2 * s2;
            let dqd = [[-k * 2.0 * qd[1], -k * (2.0 * qd[0] + 2.0 * qd[1])], [2.0 * k * qd[0], 0.0]];
            for r in 0..2 {
                for c in 0..2 {
                    assert!((grad.dq[(r, c)] - dq[r][c]).abs() < 1e-8, "dq ({r},{c}) seed {seed}");
                    assert!((grad.dqd[(r, c)] - dqd[r][c]).abs() < 1e-8, "dqd ({r},{c}) seed {seed}");
                }
            }
        }
    }

    #[test]
    fn mass_matrix_paths_agree() {
        for seed in 0..20 {
            let m = models::random_model(7, seed);
            let (q, _, _) = models::random_state(7, seed);
            let a = crba_mass_matrix(&m, &q);
            let b = mass_matrix_by_columns(&m, &q);
            assert!((&a - &b).amax() < 1e-10);
            assert!((&a - a.transpose()).amax() < 1e-12);
        }
    }

    #[test]
    fn finite_difference_oracle_is_exact_on_linear_maps() {
        // dyadic point and power-of-two step keep x ± h exact
        let id = finite_diff_oracle(|x| x.to_vec(), &[0.5, -1.0, 2.0], 2f64.powi(-20));
        assert!((id - DMatrix::identity(3, 3)).amax() < 1e-12);
        let a = DMatrix::from_fn(4, 3, |r, c| (r as f64 + 1.0) * 0.3 - c as f64 * 0.7);
        let lin = finite_diff_oracle(|x| (&a * nalgebra::DVector::from_column_slice(x)).as_slice().to_vec(), &[0.1, 0.2, 0.3], 1e-6);
        assert!((lin - a).amax() < 1e-9);
    }

    fn gradient_checks(m: &RobotModel, seed: u64) {
        let n = m.n_dof();
        let (q, qd, u) = models::random_state(n, seed);
        let g = rnea_grad(m, &q, &qd, &u, None);
        let fq = finite_diff_oracle(|x| rnea(m, x, &qd, &u, None), &q, 1e-6);
        let fqd = finite_diff_oracle(|x| rnea(m, &q, x, &u, None), &qd, 1e-6);
        assert!(tolerance_ratio(&g.dq, &fq, 1e-7, 1e-5) <= 1.0, "{} dτ/dq", m.name);
        assert!(tolerance_ratio(&g.dqd, &fqd, 1e-7, 1e-5) <= 1.0, "{} dτ/dq̇", m.name);

        let fdg = fd_grad(m, &q, &qd, &u, None);
        let fq = finite_diff_oracle(|x| forward_dynamics(m, x, &qd, &u, None), &q, 1e-6);
        let fqd = finite_diff_oracle(|x| forward_dynamics(m, &q, x, &u, None), &qd, 1e-6);
        assert!(tolerance_ratio(&fdg.dq, &fq, 1e-7, 1e-5) <= 1.0, "{} dq̈/dq", m.name);
        assert!(tolerance_ratio(&fdg.dqd, &fqd, 1e-7, 1e-5) <= 1.0, "{} dq̈/dq̇", m.name);

        // −M ∂q̈/∂q = ∂τ/∂q at the forward-dynamics acceleration
        let qdd = forward_dynamics(m, &q, &qd, &u, None);
        let at = rnea_grad(m, &q, &qd, &qdd, None);
        let mm = crba_mass_matrix(m, &q);
        assert!((-(&mm * &fdg.dq) - &at.dq).amax() < 1e-8 * (1.0 + at.dq.amax()));
    }

    #[test]
    fn gradients_match_finite_differences_on_bundled_models() {
        for (_, m) in models::bundled() {
            gradient_checks(&m, 11);
        }
        gradient_checks(&models::fig2_model(), 5);
    }

    #[test]
    fn gradients_match_finite_differences_with_external_forces() {
        let m = models::chain7();
        let (q, qd, qdd) = models::random_state(7, 21);
        let fext: Vec<SpatialVec> =
            (0..7).map(|i| SpatialVec([0.1 * i as f64, -0.2, 0.3, 1.0, -2.0, 0.5 * i as f64])).collect();
        let g = rnea_grad(&m, &q, &qd, &qdd, Some(&fext));
        let fq = finite_diff_oracle(|x| rnea(&m, x, &qd, &qdd, Some(&fext)), &q, 1e-6);
        assert!(tolerance_ratio(&g.dq, &fq, 1e-7, 1e-5) <= 1.0);
    }

    #[test]
    fn gradients_match_finite_differences_on_random_trees() {
        for seed in 0..10 {
            gradient_checks(&models::random_model(9, seed), seed);
        }
    }

    #[test]
    fn limbs_do_not_couple() {
        let m = models::quad12();
        let tree = m.tree();
        let (q, qd, qdd) = models::random_state(12, 4);
        let g = rnea_grad(&m, &q, &qd, &qdd, None);
        let minv = minv_direct(&m, &q);
        for r in 0..12 {
            for c in 0..12 {
                if !tree.same_limb(r, c) {
                    assert_eq!(g.dq[(r, c)], 0.0);
                    assert_eq!(g.dqd[(r, c)], 0.0);
                    assert_eq!(minv[(r, c)], 0.0);
                }
            }
        }
    }

    #[test]
    fn equilibrium_torque_gives_zero_acceleration() {
        let m = models::humanoid30();
        let (q, qd, _) = models::random_state(30, 2);
        let tau = bias_force(&m, &q, &qd, None);
        let qdd = forward_dynamics(&m, &q, &qd, &tau, None);
        assert!(qdd.iter().all(|x| x.abs() < 1e-10));
    }

    /// World-frame poses by plain rotation matrices, independent of the
    /// Plücker transform code.
    fn world_frames(m: &RobotModel, q: &[f64]) -> Vec<(nalgebra::Matrix3<f64>, nalgebra::Vector3<f64>)> {
        use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
        let mut out: Vec<(Matrix3<f64>, Vector3<f64>)> = Vec::new();
        for (i, j) in m.joints.iter().enumerate() {
            let (rp, pp) = match m.parent[i] {
                Some(p) => out[p],
                None => (Matrix3::identity(), Vector3::zeros()),
            };
            let ro = Matrix3::from_fn(|a, b| j.origin_rotation[a][b]);
            let axis = Vector3::from(j.axis);
            let mut r = rp * ro;
            let mut p = pp + rp * Vector3::from(j.origin_translation);
            match j.kind {
                crate::urdf::JointKind::Revolute => {
                    r *= Rotation3::from_axis_angle(&Unit::new_normalize(axis), q[i]).matrix();
                }
                crate::urdf::JointKind::Prismatic => p += r * axis * q[i],
                crate::urdf::JointKind::Fixed => unreachable!(),
            }
            out.push((r, p));
        }
        out
    }

    #[test]
    fn tip_force_maps_through_jacobian_transpose() {
        use nalgebra::{DVector, Vector3};
        let m = models::chain7();
        let n = 7;
        let tip = n - 1;
        for seed in 0..20 {
            let (q, qd, qdd) = models::random_state(n, seed);
            let frames = world_frames(&m, &q);
            let point = [0.01, -0.02, 0.05];
            let (rt, pt) = frames[tip];
            let tip_world = pt + rt * Vector3::from(point);
            let mut jac = DMatrix::zeros(6, n);
            for i in 0..n {
                let (r, p) = frames[i];
                let z = r * Vector3::from(m.joints[i].axis);
                let lin = z.cross(&(tip_world - p));
                for k in 0..3 {
                    jac[(k, i)] = z[k];
                    jac[(3 + k, i)] = lin[k];
                }
            }
            let force = [3.0, -1.0, 2.0];
            let moment = [0.5, 0.2, -0.4];
            let pose = frame_poses(&m, &q)[tip];
            let mut fext = vec![SpatialVec::zero(); n];
            fext[tip] = world_wrench_to_frame(&pose, point, force, moment);
            let base = rnea(&m, &q, &qd, &qdd, None);
            let loaded = rnea(&m, &q, &qd, &qdd, Some(&fext));
            let wrench = DVector::from_column_slice(&[moment[0], moment[1], moment[2], force[0], force[1], force[2]]);
            let jtf = jac.transpose() * wrench;
            for i in 0..n {
                assert!(((base[i] - loaded[i]) - jtf[i]).abs() < 1e-9, "joint {i}");
            }
        }
    }

    #[test]
    fn shuffled_declarations_preserve_dynamics() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let xml = models::quad12_urdf();
        let reference = crate::urdf::parse_urdf(&xml).unwrap();
        let (q, qd, qdd) = models::random_state(12, 8);
        let tau = rnea(&reference, &q, &qd, &qdd, None);
        let lines: Vec<&str> = xml.lines().collect();
        let (head, body): (Vec<&str>, Vec<&str>) = lines.iter().partition(|l| !l.trim_start().starts_with("<link") && !l.trim_start().starts_with("<joint"));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let mut shuffled = body.clone();
            shuffled.shuffle(&mut rng);
            let mut text = head[..head.len() - 1].join("\n");
            text.push('\n');
            text.push_str(&shuffled.join("\n"));
            text.push_str("\n</robot>\n");
            let m = crate::urdf::parse_urdf(&text).unwrap();
            // map each frame of the shuffled model to the reference numbering
            let perm: Vec<usize> =
                m.joints.iter().map(|j| reference.frame_of_joint(&j.name).unwrap()).collect();
            let qp: Vec<f64> = perm.iter().map(|&r| q[r]).collect();
            let qdp: Vec<f64> = perm.iter().map(|&r| qd[r]).collect();
            let qddp: Vec<f64> = perm.iter().map(|&r| qdd[r]).collect();
            let t = rnea(&m, &qp, &qdp, &qddp, None);
            for (k, &r) in perm.iter().enumerate() {
                assert!((t[k] - tau[r]).abs() <= 1e-12 * (1.0 + tau[r].abs()));
            }
        }
    }

    fn arb_case() -> impl Strategy<Value = (RobotModel, u64)> {
        (1usize..=12, any::<u64>()).prop_map(|(n, seed)| (models::random_model(n, seed), seed))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn id_fd_round_trips((m, seed) in arb_case()) {
            let n = m.n_dof();
            let (q, qd, u) = models::random_state(n, seed ^ 0x5eed);
            let qdd = forward_dynamics(&m, &q, &qd, &u, None);
            prop_assert!(close(&rnea(&m, &q, &qd, &qdd, None), &u, 1e-8));
            let tau = rnea(&m, &q, &qd, &u, None);
            prop_assert!(close(&forward_dynamics(&m, &q, &qd, &tau, None), &u, 1e-8));
        }

        #[test]
        fn minv_inverts_mass_matrix((m, seed) in arb_case()) {
            let n = m.n_dof();
            let (q, _, _) = models::random_state(n, seed);
            let mm = crba_mass_matrix(&m, &q);
            let minv = minv_direct(&m, &q);
            prop_assert!((&minv * &mm - DMatrix::identity(n, n)).amax() < 1e-8);
            prop_assert!((&minv - minv.transpose()).amax() < 1e-8);
            prop_assert!(mm.clone().cholesky().is_some());
        }
    }
}
