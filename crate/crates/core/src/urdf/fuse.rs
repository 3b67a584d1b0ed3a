use nalgebra::{Matrix3, Vector3};

use super::{JointKind, JointSpec, LinkInertia, RobotModel, UrdfError, DEFAULT_GRAVITY};

/// A topologically ordered model that may still contain fixed joints. One
/// frame per URDF joint; `inertias[k]` belongs to the child link of joint `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnfusedModel {
    pub name: String,
    pub base_link: String,
    pub parent: Vec<Option<usize>>,
    pub joints: Vec<JointSpec>,
    pub inertias: Vec<LinkInertia>,
    pub link_names: Vec<String>,
}

#[derive(Clone, Copy)]
struct Pose {
    rot: Matrix3<f64>,
    pos: Vector3<f64>,
}

impl Pose {
    fn identity() -> Self {
        Pose { rot: Matrix3::identity(), pos: Vector3::zeros() }
    }

    /// `self ∘ (rot, pos)`: a frame given relative to `self`, re-expressed in
    /// the frame `self` is given in.
    fn then(&self, rot: &Matrix3<f64>, pos: &Vector3<f64>) -> Pose {
        Pose { rot: self.rot * rot, pos: self.rot * pos + self.pos }
    }
}

/// Mass, first moment and rotational inertia about a body origin; these add
/// linearly across fused links.
#[derive(Clone, Copy)]
struct Composite {
    mass: f64,
    h: Vector3<f64>,
    about_origin: Matrix3<f64>,
}

impl Composite {
    fn of(li: &LinkInertia, pose: &Pose) -> Self {
        let ic = Matrix3::from_fn(|a, b| li.inertia_about_com[a][b]);
        let c = pose.rot * Vector3::from(li.com) + pose.pos;
        let ic = pose.rot * ic * pose.rot.transpose();
        Composite { mass: li.mass, h: c * li.mass, about_origin: ic + li.mass * shift(&c) }
    }

    fn add(&mut self, o: &Composite) {
        self.mass += o.mass;
        self.h += o.h;
        self.about_origin += o.about_origin;
    }

    fn to_link(self) -> LinkInertia {
        let c = if self.mass > 0.0 { self.h / self.mass } else { Vector3::zeros() };
        let ic = self.about_origin - self.mass * shift(&c);
        let ic = (ic + ic.transpose()) * 0.5;
        LinkInertia {
            mass: self.mass,
            com: [c.x, c.y, c.z],
            inertia_about_com: std::array::from_fn(|a| std::array::from_fn(|b| ic[(a, b)])),
        }
    }
}

/// `[c]× [c]×ᵀ = |c|² 1 − c cᵀ`.
fn shift(c: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::identity() * c.norm_squared() - c * c.transpose()
}

/// Fold every fixed joint into its moving parent.
///
/// Child link inertias are transformed into the parent body frame and summed;
/// joint origins downstream of a fixed joint are re-expressed relative to the
/// nearest moving ancestor. Links rigidly attached to the base disappear with
/// the base.
pub fn fuse_fixed(raw: &UnfusedModel) -> Result<RobotModel, UrdfError> {
    let n = raw.joints.len();
    let mut body: Vec<Option<usize>> = vec![None; n];
    let mut pose = vec![Pose::identity(); n];
    let mut parent = Vec::new();
    let mut joints = Vec::new();
    let mut link_names = Vec::new();
    // contributions per body; a lone untransformed link is copied verbatim
    let mut parts: Vec<Vec<(usize, Pose)>> = Vec::new();

    for k in 0..n {
        if let Some(p) = raw.parent[k] {
            if p >= k {
                return Err(UrdfError::Validation(format!("frame {k} has parent {p} >= {k}")));
            }
        }
        let (owner, attach) = match raw.parent[k] {
            Some(p) => (body[p], pose[p]),
            None => (None, Pose::identity()),
        };
        let spec = &raw.joints[k];
        let r_o = Matrix3::from_fn(|a, b| spec.origin_rotation[a][b]);
        let p_o = Vector3::from(spec.origin_translation);
        let joint_frame = attach.then(&r_o, &p_o);
        match spec.kind {
            JointKind::Fixed => {
                body[k] = owner;
                pose[k] = joint_frame;
                if let Some(b) = owner {
                    parts[b].push((k, joint_frame));
                }
            }
            JointKind::Revolute | JointKind::Prismatic => {
                let index = joints.len();
                body[k] = Some(index);
                pose[k] = Pose::identity();
                parent.push(owner);
                joints.push(JointSpec {
                    kind: spec.kind,
                    axis: spec.axis,
                    origin_rotation: std::array::from_fn(|a| std::array::from_fn(|b| joint_frame.rot[(a, b)])),
                    origin_translation: [joint_frame.pos.x, joint_frame.pos.y, joint_frame.pos.z],
                    name: spec.name.clone(),
                    position_index: Some(index),
                });
                link_names.push(raw.link_names[k].clone());
                parts.push(vec![(k, Pose::identity())]);
            }
        }
    }
    if joints.is_empty() {
        return Err(UrdfError::Validation(format!("robot `{}` has no revolute or prismatic joints", raw.name)));
    }

    let inertias = parts
        .iter()
        .map(|links| match links.as_slice() {
            [(k, _)] => raw.inertias[*k].clone(),
            many => {
                let mut acc = Composite { mass: 0.0, h: Vector3::zeros(), about_origin: Matrix3::zeros() };
                for (k, pose) in many {
                    acc.add(&Composite::of(&raw.inertias[*k], pose));
                }
                acc.to_link()
            }
        })
        .collect();

    Ok(RobotModel {
        name: raw.name.clone(),
        base_link: raw.base_link.clone(),
        parent,
        joints,
        inertias,
        link_names,
        gravity: DEFAULT_GRAVITY,
    })
}
