//! Bundled robot descriptions and random model generators.
//!
//! The bundled models are written out as URDF text and go through the regular
//! parser, so they also exercise fixed-joint fusion.

use std::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::urdf::{parse_urdf, rpy_to_matrix, JointKind, JointSpec, LinkInertia, RobotModel, DEFAULT_GRAVITY};

struct Body {
    mass: f64,
    com: [f64; 3],
    diag: [f64; 3],
}

fn body(mass: f64, com: [f64; 3], diag: [f64; 3]) -> Body {
    Body { mass, com, diag }
}

/// Slender rod along `dir` with length `len`, centered halfway.
fn rod(mass: f64, len: f64, dir: usize) -> Body {
    let mut com = [0.0; 3];
    com[dir] = len / 2.0;
    let long = mass * len * len / 12.0 + mass * 0.0025;
    let mut diag = [long; 3];
    diag[dir] = mass * 0.005;
    body(mass, com, diag)
}

struct Builder {
    name: String,
    base: String,
    links: String,
    joints: String,
}

impl Builder {
    fn new(name: &str, base: &str) -> Self {
        Builder { name: name.into(), base: base.into(), links: String::new(), joints: String::new() }
    }

    fn link(&mut self, name: &str, b: Option<Body>) {
        match b {
            None => {
                let _ = writeln!(self.links, "  <link name=\"{name}\"/>");
            }
            Some(b) => {
                let _ = writeln!(
                    self.links,
                    "  <link name=\"{name}\"><inertial><origin xyz=\"{} {} {}\"/><mass value=\"{}\"/>\
                     <inertia ixx=\"{}\" ixy=\"0\" ixz=\"0\" iyy=\"{}\" iyz=\"0\" izz=\"{}\"/></inertial></link>",
                    b.com[0], b.com[1], b.com[2], b.mass, b.diag[0], b.diag[1], b.diag[2]
                );
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn joint(&mut self, name: &str, kind: &str, parent: &str, child: &str, xyz: [f64; 3], rpy: [f64; 3], axis: [f64; 3]) {
        let _ = writeln!(
            self.joints,
            "  <joint name=\"{name}\" type=\"{kind}\"><parent link=\"{parent}\"/><child link=\"{child}\"/>\
             <origin xyz=\"{} {} {}\" rpy=\"{} {} {}\"/><axis xyz=\"{} {} {}\"/></joint>",
            xyz[0], xyz[1], xyz[2], rpy[0], rpy[1], rpy[2], axis[0], axis[1], axis[2]
        );
    }

    /// Link plus the joint that attaches it.
    #[allow(clippy::too_many_arguments)]
    fn add(&mut self, joint: &str, kind: &str, parent: &str, child: &str, xyz: [f64; 3], axis: [f64; 3], b: Body) {
        self.link(child, Some(b));
        self.joint(joint, kind, parent, child, xyz, [0.0; 3], axis);
    }

    fn finish(&self) -> String {
        format!(
            "<?xml version=\"1.0\"?>\n<robot name=\"{}\">\n  <link name=\"{}\"/>\n{}{}</robot>\n",
            self.name, self.base, self.links, self.joints
        )
    }
}

const X: [f64; 3] = [1.0, 0.0, 0.0];
const Y: [f64; 3] = [0.0, 1.0, 0.0];
const Z: [f64; 3] = [0.0, 0.0, 1.0];

fn parse_bundled(xml: &str) -> RobotModel {
    parse_urdf(xml).expect("bundled model parses")
}

/// Single revolute link about `y`, center of mass 0.5 m along `x`.
pub fn link1_urdf() -> String {
    let mut b = Builder::new("link1", "base");
    b.add("joint1", "revolute", "base", "link1", [0.0; 3], Y, body(1.0, [0.5, 0.0, 0.0], [0.01, 0.02, 0.03]));
    b.finish()
}

pub fn link1() -> RobotModel {
    parse_bundled(&link1_urdf())
}

/// Planar double pendulum: both joints about `y`, links along `x` (1.0 m and
/// 0.8 m) with point-like masses at their midpoints.
pub fn planar2_urdf() -> String {
    let mut b = Builder::new("planar2", "base");
    b.add("shoulder", "revolute", "base", "upper", [0.0; 3], Y, body(1.2, [0.5, 0.0, 0.0], [0.004, 0.11, 0.11]));
    b.add("elbow", "revolute", "upper", "lower", [1.0, 0.0, 0.0], Y, body(0.9, [0.4, 0.0, 0.0], [0.003, 0.05, 0.05]));
    b.finish()
}

pub fn planar2() -> RobotModel {
    parse_bundled(&planar2_urdf())
}

/// Seven-dof serial arm with alternating joint axes, proportioned like common
/// collaborative manipulators, plus a fixed flange.
pub fn chain7_urdf() -> String {
    let mut b = Builder::new("chain7", "world");
    let spec: [(&str, [f64; 3], [f64; 3], f64, f64); 7] = [
        ("a1", [0.0, 0.0, 0.1575], Z, 4.0, 0.2025),
        ("a2", [0.0, 0.0, 0.2025], Y, 4.0, 0.2045),
        ("a3", [0.0, 0.0, 0.2045], Z, 3.0, 0.2155),
        ("a4", [0.0, 0.0, 0.2155], Y, 2.7, 0.1845),
        ("a5", [0.0, 0.0, 0.1845], Z, 1.7, 0.2155),
        ("a6", [0.0, 0.0, 0.2155], Y, 1.8, 0.081),
        ("a7", [0.0, 0.0, 0.081], Z, 0.3, 0.045),
    ];
    let mut parent = "world".to_string();
    for (k, (name, xyz, axis, mass, len)) in spec.iter().enumerate() {
        let child = format!("link{}", k + 1);
        let mut body = rod(*mass, *len, 2);
        // slight offsets keep the arm from being axially symmetric
        body.com[1] = 0.01 * (k as f64 - 3.0);
        b.add(name, "revolute", &parent, &child, *xyz, *axis, body);
        parent = child;
    }
    b.link("flange", Some(body(0.2, [0.0, 0.0, 0.02], [0.0002, 0.0002, 0.0003])));
    b.joint("flange_mount", "fixed", &parent, "flange", [0.0, 0.0, 0.045], [0.0, 0.0, 0.3], Z);
    b.finish()
}

pub fn chain7() -> RobotModel {
    parse_bundled(&chain7_urdf())
}

/// Quadruped legs on a fixed trunk: hip abduction about `x`, hip and knee
/// flexion about `y`, and a fixed foot mass on each leg.
pub fn quad12_urdf() -> String {
    let mut b = Builder::new("quad12", "trunk");
    for (leg, (sx, sy)) in [("FR", (1.0, -1.0)), ("FL", (1.0, 1.0)), ("RR", (-1.0, -1.0)), ("RL", (-1.0, 1.0))] {
        let hip = format!("{leg}_hip");
        let thigh = format!("{leg}_thigh");
        let calf = format!("{leg}_calf");
        let foot = format!("{leg}_foot");
        b.add(
            &format!("{leg}_hip_joint"),
            "revolute",
            "trunk",
            &hip,
            [0.1881 * sx, 0.04675 * sy, 0.0],
            X,
            body(0.68, [-0.0034 * sx, 0.0108 * sy, 0.0], [0.0005, 0.0008, 0.0006]),
        );
        b.add(
            &format!("{leg}_thigh_joint"),
            "revolute",
            &hip,
            &thigh,
            [0.0, 0.08 * sy, 0.0],
            Y,
            body(1.01, [-0.0032, -0.0216 * sy, -0.0274], [0.0055, 0.0054, 0.0011]),
        );
        b.add(
            &format!("{leg}_calf_joint"),
            "revolute",
            &thigh,
            &calf,
            [0.0, 0.0, -0.213],
            Y,
            body(0.19, [0.006, 0.0, -0.1071], [0.0011, 0.0011, 0.00004]),
        );
        b.link(&foot, Some(body(0.06, [0.0; 3], [0.00001, 0.00001, 0.00001])));
        b.joint(&format!("{leg}_foot_fixed"), "fixed", &calf, &foot, [0.0, 0.0, -0.213], [0.0; 3], X);
    }
    b.finish()
}

pub fn quad12() -> RobotModel {
    parse_bundled(&quad12_urdf())
}

/// Thirty-dof humanoid on a fixed pelvis: three-dof back, one-dof neck,
/// two seven-dof arms and two six-dof legs. Head, hands and feet are fixed
/// links.
pub fn humanoid30_urdf() -> String {
    let mut b = Builder::new("humanoid30", "pelvis");
    b.add("back_z", "revolute", "pelvis", "ltorso", [0.0, 0.0, 0.09], Z, body(2.3, [0.0, 0.0, 0.05], [0.006, 0.005, 0.006]));
    b.add("back_y", "revolute", "ltorso", "mtorso", [0.0, 0.0, 0.1], Y, body(0.7, [0.0, 0.0, 0.04], [0.0005, 0.0007, 0.0006]));
    b.add("back_x", "revolute", "mtorso", "utorso", [0.0, 0.0, 0.05], X, body(28.0, [0.0, 0.0, 0.3], [1.4, 1.1, 0.7]));
    b.add("neck_y", "revolute", "utorso", "neck", [0.2, 0.0, 0.5], Y, body(1.4, [0.0, 0.0, 0.05], [0.004, 0.004, 0.003]));
    b.link("head", Some(body(3.0, [0.05, 0.0, 0.1], [0.02, 0.02, 0.015])));
    b.joint("head_mount", "fixed", "neck", "head", [0.0, 0.0, 0.1], [0.0; 3], X);

    let arm: [(&str, [f64; 3], [f64; 3], Body); 7] = [
        ("shz", [0.1, 0.22, 0.45], Z, body(3.0, [0.0, 0.0, 0.0], [0.007, 0.005, 0.006])),
        ("shx", [0.0, 0.1, 0.0], X, body(3.9, [0.0, 0.1, 0.0], [0.02, 0.005, 0.02])),
        ("ely", [0.0, 0.19, 0.0], Y, body(3.4, [0.0, 0.06, 0.0], [0.006, 0.004, 0.006])),
        ("elx", [0.0, 0.12, 0.0], X, body(2.5, [0.0, 0.09, 0.0], [0.007, 0.003, 0.007])),
        ("wry", [0.0, 0.19, 0.0], Y, body(1.1, [0.0, 0.05, 0.0], [0.001, 0.001, 0.001])),
        ("wrx", [0.0, 0.1, 0.0], X, body(0.9, [0.0, 0.05, 0.0], [0.001, 0.0008, 0.001])),
        ("wrz", [0.0, 0.05, 0.0], Z, body(0.5, [0.0, 0.03, 0.0], [0.0004, 0.0003, 0.0004])),
    ];
    let leg: [(&str, [f64; 3], [f64; 3], Body); 6] = [
        ("hpz", [0.0, 0.09, 0.0], Z, body(0.7, [0.0, 0.0, -0.02], [0.0007, 0.0006, 0.0005])),
        ("hpx", [0.0, 0.0, -0.05], X, body(1.5, [0.0, 0.0, -0.02], [0.002, 0.002, 0.001])),
        ("hpy", [0.05, 0.0, -0.05], Y, body(9.2, [0.0, 0.0, -0.2], [0.09, 0.09, 0.02])),
        ("kny", [-0.05, 0.0, -0.37], Y, body(4.5, [0.0, 0.0, -0.2], [0.08, 0.08, 0.01])),
        ("aky", [0.0, 0.0, -0.42], Y, body(0.6, [0.0, 0.0, 0.0], [0.0004, 0.0004, 0.0004])),
        ("akx", [0.0, 0.0, 0.0], X, body(1.6, [0.03, 0.0, -0.05], [0.002, 0.007, 0.008])),
    ];
    for (side, s) in [("l", 1.0), ("r", -1.0)] {
        let mut parent = "utorso".to_string();
        for (name, xyz, axis, bd) in &arm {
            let child = format!("{side}_arm_{name}_link");
            let mirrored = body(bd.mass, [bd.com[0], s * bd.com[1], bd.com[2]], bd.diag);
            b.add(&format!("{side}_arm_{name}"), "revolute", &parent, &child, [xyz[0], s * xyz[1], xyz[2]], *axis, mirrored);
            parent = child;
        }
        let hand = format!("{side}_hand");
        b.link(&hand, Some(body(0.8, [0.0, s * 0.08, 0.0], [0.002, 0.001, 0.002])));
        b.joint(&format!("{side}_hand_mount"), "fixed", &parent, &hand, [0.0, s * 0.06, 0.0], [0.0; 3], X);
    }
    for (side, s) in [("l", 1.0), ("r", -1.0)] {
        let mut parent = "pelvis".to_string();
        for (name, xyz, axis, bd) in &leg {
            let child = format!("{side}_leg_{name}_link");
            let mirrored = body(bd.mass, [bd.com[0], s * bd.com[1], bd.com[2]], bd.diag);
            b.add(&format!("{side}_leg_{name}"), "revolute", &parent, &child, [xyz[0], s * xyz[1], xyz[2]], *axis, mirrored);
            parent = child;
        }
        let foot = format!("{side}_foot");
        b.link(&foot, Some(body(0.4, [0.04, 0.0, -0.03], [0.0005, 0.002, 0.002])));
        b.joint(&format!("{side}_foot_mount"), "fixed", &parent, &foot, [0.0, 0.0, -0.05], [0.0; 3], X);
    }
    b.finish()
}

pub fn humanoid30() -> RobotModel {
    parse_bundled(&humanoid30_urdf())
}

/// Seven-frame branched tree with parents `[-, 0, 1, 2, 1, 0, 5]`.
pub fn fig2_model() -> RobotModel {
    let parents: [Option<usize>; 7] = [None, Some(0), Some(1), Some(2), Some(1), Some(0), Some(5)];
    let axes = [Z, Y, Y, X, Z, Y, X];
    let mut b = Builder::new("tree7", "base");
    for (i, p) in parents.iter().enumerate() {
        let parent = p.map_or("base".to_string(), |p| format!("b{p}"));
        let xyz = if i == 5 { [0.0, 0.3, 0.2] } else { [0.0, 0.0, 0.25] };
        b.add(&format!("j{i}"), "revolute", &parent, &format!("b{i}"), xyz, axes[i], rod(1.0 + 0.1 * i as f64, 0.25, 2));
    }
    parse_bundled(&b.finish())
}

/// Names accepted by [`by_name`], smallest first.
pub const BUNDLED: [&str; 5] = ["link1", "planar2", "chain7", "quad12", "humanoid30"];

pub fn by_name(name: &str) -> Option<RobotModel> {
    Some(match name {
        "link1" => link1(),
        "planar2" => planar2(),
        "chain7" => chain7(),
        "quad12" => quad12(),
        "humanoid30" => humanoid30(),
        "tree7" => fig2_model(),
        _ => return None,
    })
}

pub fn urdf_by_name(name: &str) -> Option<String> {
    Some(match name {
        "link1" => link1_urdf(),
        "planar2" => planar2_urdf(),
        "chain7" => chain7_urdf(),
        "quad12" => quad12_urdf(),
        "humanoid30" => humanoid30_urdf(),
        "tree7" => to_urdf_text(&fig2_model()),
        _ => return None,
    })
}

fn to_urdf_text(m: &RobotModel) -> String {
    crate::urdf::to_urdf(m)
}

pub fn bundled() -> Vec<(&'static str, RobotModel)> {
    BUNDLED.iter().map(|n| (*n, by_name(n).unwrap())).collect()
}

/// A random valid model with `n` frames.
///
/// Roughly half of the frames continue the previous one, the rest attach to a
/// random earlier frame or (rarely) to the base, so both chains and branched
/// trees appear. One joint in five is prismatic.
pub fn random_model(n: usize, seed: u64) -> RobotModel {
    assert!(n > 0, "a model needs at least one frame");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parent = Vec::with_capacity(n);
    let mut joints = Vec::with_capacity(n);
    let mut inertias = Vec::with_capacity(n);
    let mut link_names = Vec::with_capacity(n);
    for i in 0..n {
        let p = if i == 0 || rng.gen_bool(0.08) {
            None
        } else if rng.gen_bool(0.5) {
            Some(i - 1)
        } else {
            Some(rng.gen_range(0..i))
        };
        parent.push(p);
        let axis = loop {
            let a: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let norm = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
            if norm > 0.2 {
                break a.map(|x| x / norm);
            }
        };
        let rpy: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-3.0..3.0));
        let kind = if rng.gen_bool(0.2) { JointKind::Prismatic } else { JointKind::Revolute };
        joints.push(JointSpec {
            kind,
            axis,
            origin_rotation: rpy_to_matrix(rpy),
            origin_translation: std::array::from_fn(|_| rng.gen_range(-0.5..0.5)),
            name: format!("j{i}"),
            position_index: Some(i),
        });
        let diag: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.01..0.2));
        let r = rpy_to_matrix(std::array::from_fn(|_| rng.gen_range(-3.0..3.0)));
        let ic: [[f64; 3]; 3] =
            std::array::from_fn(|a| std::array::from_fn(|b| (0..3).map(|k| r[a][k] * diag[k] * r[b][k]).sum()));
        // exact symmetry
        let ic = std::array::from_fn(|a| std::array::from_fn(|b| if a <= b { ic[a][b] } else { ic[b][a] }));
        inertias.push(LinkInertia {
            mass: rng.gen_range(0.5..3.0),
            com: std::array::from_fn(|_| rng.gen_range(-0.3..0.3)),
            inertia_about_com: ic,
        });
        link_names.push(format!("l{i}"));
    }
    RobotModel { name: format!("random{n}"), base_link: "base".into(), parent, joints, inertias, link_names, gravity: DEFAULT_GRAVITY }
}

/// Random joint state `(q, qd, qdd or tau)` with components in `[-1, 1]`.
pub fn random_state(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = || (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    (v(), v(), v())
}
