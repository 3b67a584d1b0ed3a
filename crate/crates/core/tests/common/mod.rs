//! Helpers shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rbdgen::kernel::Named;
use rbdgen::models;
use rbdgen::refdyn;
use rbdgen::schedule::Algorithm;
use rbdgen::spatial::SpatialVec;
use rbdgen::urdf::RobotModel;

pub struct State {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub u: Vec<f64>,
    pub fext: Vec<f64>,
}

pub fn state(n: usize, seed: u64, with_force: bool) -> State {
    let (q, qd, u) = models::random_state(n, seed);
    let (a, b, _) = models::random_state(n, seed ^ 0x5eed);
    let fext = if with_force {
        (0..6 * n).map(|k| if k % 2 == 0 { a[k / 6] * 3.0 } else { b[k / 6] * 2.0 }).collect()
    } else {
        vec![0.0; 6 * n]
    };
    State { q, qd, u, fext }
}

pub fn fext_vecs(s: &State) -> Vec<SpatialVec> {
    s.fext.chunks(6).map(|c| SpatialVec(std::array::from_fn(|k| c[k]))).collect()
}

pub fn inputs(alg: Algorithm, s: &State) -> Named {
    let mut m = Named::new();
    m.insert("q".into(), s.q.clone());
    match alg {
        Algorithm::Minv => {}
        Algorithm::Id | Algorithm::GradId => {
            m.insert("qd".into(), s.qd.clone());
            m.insert("qdd".into(), s.u.clone());
            m.insert("fext".into(), s.fext.clone());
        }
        Algorithm::Fd | Algorithm::GradFd => {
            m.insert("qd".into(), s.qd.clone());
            m.insert("tau".into(), s.u.clone());
            m.insert("fext".into(), s.fext.clone());
        }
    }
    m
}

/// Reference outputs under the kernel's output names, matrices row-major.
pub fn reference(model: &RobotModel, alg: Algorithm, s: &State) -> Named {
    let n = model.n_frames();
    let f = fext_vecs(s);
    let flat = |m: &DMatrix<f64>| (0..n * n).map(|k| m[(k / n, k % n)]).collect::<Vec<_>>();
    let mut out = Named::new();
    match alg {
        Algorithm::Id => {
            out.insert("tau".into(), refdyn::rnea(model, &s.q, &s.qd, &s.u, Some(&f)));
        }
        Algorithm::Minv => {
            out.insert("minv".into(), flat(&refdyn::minv_direct(model, &s.q)));
        }
        Algorithm::Fd => {
            out.insert("qdd".into(), refdyn::forward_dynamics(model, &s.q, &s.qd, &s.u, Some(&f)));
        }
        Algorithm::GradId => {
            let g = refdyn::rnea_grad(model, &s.q, &s.qd, &s.u, Some(&f));
            out.insert("dtau_dq".into(), flat(&g.dq));
            out.insert("dtau_dqd".into(), flat(&g.dqd));
        }
        Algorithm::GradFd => {
            out.insert("qdd".into(), refdyn::forward_dynamics(model, &s.q, &s.qd, &s.u, Some(&f)));
            let g = refdyn::fd_grad(model, &s.q, &s.qd, &s.u, Some(&f));
            out.insert("dqdd_dq".into(), flat(&g.dq));
            out.insert("dqdd_dqd".into(), flat(&g.dqd));
        }
    }
    out
}

pub fn max_diff(a: &Named, b: &Named) -> f64 {
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    a.iter()
        .flat_map(|(k, v)| v.iter().zip(&b[k]).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

pub fn all_models() -> Vec<(String, RobotModel)> {
    let mut v: Vec<(String, RobotModel)> = models::bundled().into_iter().map(|(n, m)| (n.to_string(), m)).collect();
    v.push(("tree7".into(), models::fig2_model()));
    v
}

