use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use nalgebra::Matrix3;
use roxmltree::{Document, Node};

use super::{JointKind, JointSpec, LinkInertia, UnfusedModel, UrdfError};

/// URDF roll-pitch-yaw convention: `Rz(yaw) * Ry(pitch) * Rx(roll)`.
pub fn rpy_to_matrix(rpy: [f64; 3]) -> [[f64; 3]; 3] {
    let (sr, cr) = rpy[0].sin_cos();
    let (sp, cp) = rpy[1].sin_cos();
    let (sy, cy) = rpy[2].sin_cos();
    [
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ]
}

struct RawLink {
    name: String,
    inertia: LinkInertia,
}

struct RawJoint {
    spec: JointSpec,
    parent: String,
    child: String,
    line: u32,
}

fn line_of(doc: &Document, node: Node) -> u32 {
    doc.text_pos_at(node.range().start).row
}

fn numbers<const N: usize>(text: &str, line: u32, what: &str) -> Result<[f64; N], UrdfError> {
    let parsed: Result<Vec<f64>, _> = text.split_whitespace().map(str::parse::<f64>).collect();
    let values = parsed.map_err(|e| UrdfError::Invalid { line, message: format!("{what}: {e}") })?;
    if values.len() != N || values.iter().any(|v| !v.is_finite()) {
        return Err(UrdfError::Invalid {
            line,
            message: format!("{what}: expected {N} finite numbers, got `{text}`"),
        });
    }
    Ok(std::array::from_fn(|i| values[i]))
}

fn attr_numbers<const N: usize>(
    doc: &Document,
    node: Node,
    attr: &str,
    default: [f64; N],
) -> Result<[f64; N], UrdfError> {
    match node.attribute(attr) {
        Some(text) => numbers(text, line_of(doc, node), &format!("<{}> attribute `{attr}`", node.tag_name().name())),
        None => Ok(default),
    }
}

fn required_attr<'a>(doc: &Document, node: Node<'a, '_>, attr: &str) -> Result<&'a str, UrdfError> {
    node.attribute(attr).ok_or_else(|| UrdfError::Invalid {
        line: line_of(doc, node),
        message: format!("<{}> is missing attribute `{attr}`", node.tag_name().name()),
    })
}

fn child<'a, 'i>(node: Node<'a, 'i>, tag: &str) -> Option<Node<'a, 'i>> {
    node.children().find(|c| c.is_element() && c.tag_name().name() == tag)
}

fn origin(doc: &Document, node: Node) -> Result<([f64; 3], [[f64; 3]; 3]), UrdfError> {
    match child(node, "origin") {
        Some(o) => {
            let xyz = attr_numbers(doc, o, "xyz", [0.0; 3])?;
            let rpy = attr_numbers(doc, o, "rpy", [0.0; 3])?;
            Ok((xyz, rpy_to_matrix(rpy)))
        }
        None => Ok(([0.0; 3], rpy_to_matrix([0.0; 3]))),
    }
}

fn parse_link(doc: &Document, node: Node) -> Result<RawLink, UrdfError> {
    let name = required_attr(doc, node, "name")?.to_string();
    let inertia = match child(node, "inertial") {
        None => LinkInertia::zero(),
        Some(inertial) => {
            let (com, rot) = origin(doc, inertial)?;
            let mass = match child(inertial, "mass") {
                Some(m) => numbers::<1>(required_attr(doc, m, "value")?, line_of(doc, m), "mass")?[0],
                None => 0.0,
            };
            if mass < 0.0 {
                return Err(UrdfError::Invalid {
                    line: line_of(doc, inertial),
                    message: format!("link `{name}` has negative mass"),
                });
            }
            let mut vals = [0.0; 6];
            if let Some(i) = child(inertial, "inertia") {
                for (k, key) in ["ixx", "ixy", "ixz", "iyy", "iyz", "izz"].iter().enumerate() {
                    vals[k] = attr_numbers::<1>(doc, i, key, [0.0])?[0];
                }
            }
            let [ixx, ixy, ixz, iyy, iyz, izz] = vals;
            let local = Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz);
            let r = Matrix3::from_fn(|a, b| rot[a][b]);
            let rotated = r * local * r.transpose();
            // symmetrize away rounding so the symmetry invariant holds exactly
            let sym = (rotated + rotated.transpose()) * 0.5;
            LinkInertia {
                mass,
                com,
                inertia_about_com: std::array::from_fn(|a| std::array::from_fn(|b| sym[(a, b)])),
            }
        }
    };
    Ok(RawLink { name, inertia })
}

fn parse_joint(doc: &Document, node: Node) -> Result<RawJoint, UrdfError> {
    let line = line_of(doc, node);
    let name = required_attr(doc, node, "name")?.to_string();
    let ty = required_attr(doc, node, "type")?;
    let kind = match ty {
        "revolute" | "continuous" => JointKind::Revolute,
        "prismatic" => JointKind::Prismatic,
        "fixed" => JointKind::Fixed,
        other => {
            return Err(UrdfError::Unsupported { joint: name, feature: format!("joint type `{other}`") });
        }
    };
    if child(node, "mimic").is_some() {
        return Err(UrdfError::Unsupported { joint: name, feature: "mimic joints".into() });
    }
    let parent = child(node, "parent")
        .ok_or_else(|| UrdfError::Invalid { line, message: format!("joint `{name}` has no <parent>") })
        .and_then(|p| required_attr(doc, p, "link"))?
        .to_string();
    let child_link = child(node, "child")
        .ok_or_else(|| UrdfError::Invalid { line, message: format!("joint `{name}` has no <child>") })
        .and_then(|c| required_attr(doc, c, "link"))?
        .to_string();
    let (origin_translation, origin_rotation) = origin(doc, node)?;
    let mut axis = match child(node, "axis") {
        Some(a) => attr_numbers(doc, a, "xyz", [1.0, 0.0, 0.0])?,
        None => [1.0, 0.0, 0.0],
    };
    let norm = axis.iter().map(|a| a * a).sum::<f64>().sqrt();
    if kind != JointKind::Fixed {
        if norm < 1e-12 {
            return Err(UrdfError::Invalid { line, message: format!("joint `{name}` has a zero axis") });
        }
        axis = axis.map(|a| a / norm);
    }
    // limits do not enter the dynamics; only check that they are numbers
    if let Some(limit) = child(node, "limit") {
        for key in ["lower", "upper", "effort", "velocity"] {
            attr_numbers::<1>(doc, limit, key, [0.0])?;
        }
    }
    Ok(RawJoint {
        spec: JointSpec { kind, axis, origin_rotation, origin_translation, name, position_index: None },
        parent,
        child: child_link,
        line,
    })
}

/// Parse URDF text into a topologically ordered model that still contains
/// fixed joints.
///
/// Frames are numbered by a topological sort of the joints that, among all
/// joints whose parent link is already placed, always picks the one declared
/// first. This guarantees `parent[i] < i` deterministically.
pub fn parse_unfused(xml: &str) -> Result<UnfusedModel, UrdfError> {
    let doc = Document::parse(xml).map_err(|e| UrdfError::Xml { line: e.pos().row, message: e.to_string() })?;
    let robot = doc.root_element();
    if robot.tag_name().name() != "robot" {
        return Err(UrdfError::Invalid {
            line: line_of(&doc, robot),
            message: format!("root element is <{}>, expected <robot>", robot.tag_name().name()),
        });
    }
    let name = robot.attribute("name").unwrap_or("robot").to_string();

    let mut links = Vec::new();
    let mut joints = Vec::new();
    let mut link_index = HashMap::new();
    let mut joint_names = HashMap::new();
    for node in robot.children().filter(Node::is_element) {
        match node.tag_name().name() {
            "link" => {
                let link = parse_link(&doc, node)?;
                if link_index.insert(link.name.clone(), links.len()).is_some() {
                    return Err(UrdfError::Invalid {
                        line: line_of(&doc, node),
                        message: format!("duplicate link name `{}`", link.name),
                    });
                }
                links.push(link);
            }
            "joint" => {
                let joint = parse_joint(&doc, node)?;
                if joint_names.insert(joint.spec.name.clone(), joints.len()).is_some() {
                    return Err(UrdfError::Invalid {
                        line: joint.line,
                        message: format!("duplicate joint name `{}`", joint.spec.name),
                    });
                }
                joints.push(joint);
            }
            _ => {}
        }
    }
    if links.is_empty() {
        return Err(UrdfError::Topology("robot has no links".into()));
    }

    let lookup = |link: &str, joint: &RawJoint| {
        link_index.get(link).copied().ok_or_else(|| UrdfError::Invalid {
            line: joint.line,
            message: format!("joint `{}` references unknown link `{link}`", joint.spec.name),
        })
    };
    let mut parent_joint: Vec<Option<usize>> = vec![None; links.len()];
    let mut outgoing: Vec<Vec<usize>> = vec![Vec::new(); links.len()];
    let mut ends = Vec::with_capacity(joints.len());
    for (k, joint) in joints.iter().enumerate() {
        let p = lookup(&joint.parent, joint)?;
        let c = lookup(&joint.child, joint)?;
        if let Some(prev) = parent_joint[c] {
            return Err(UrdfError::Topology(format!(
                "link `{}` is the child of both `{}` and `{}`",
                joint.child, joints[prev].spec.name, joint.spec.name
            )));
        }
        parent_joint[c] = Some(k);
        outgoing[p].push(k);
        ends.push((p, c));
    }

    let roots: Vec<usize> = (0..links.len()).filter(|&l| parent_joint[l].is_none()).collect();
    let base = match roots.as_slice() {
        [] => return Err(UrdfError::Topology("no root link; the joints form a loop".into())),
        [only] => *only,
        many => {
            let names: Vec<&str> = many.iter().map(|&l| links[l].name.as_str()).collect();
            return Err(UrdfError::Topology(format!("links are not connected to a single tree: roots {names:?}")));
        }
    };

    // link -> raw frame index of the joint that moves it
    let mut frame_of_link: Vec<Option<usize>> = vec![None; links.len()];
    let mut order = Vec::with_capacity(joints.len());
    let mut ready: BinaryHeap<Reverse<usize>> = outgoing[base].iter().map(|&k| Reverse(k)).collect();
    while let Some(Reverse(k)) = ready.pop() {
        let (_, c) = ends[k];
        frame_of_link[c] = Some(order.len());
        order.push(k);
        ready.extend(outgoing[c].iter().map(|&k2| Reverse(k2)));
    }
    if order.len() != joints.len() {
        let stray: Vec<&str> = (0..links.len())
            .filter(|&l| l != base && frame_of_link[l].is_none())
            .map(|l| links[l].name.as_str())
            .collect();
        return Err(UrdfError::Topology(format!("links unreachable from `{}`: {stray:?}", links[base].name)));
    }

    let mut parent = Vec::with_capacity(order.len());
    let mut specs = Vec::with_capacity(order.len());
    let mut inertias = Vec::with_capacity(order.len());
    let mut link_names = Vec::with_capacity(order.len());
    let mut next_index = 0;
    for &k in &order {
        let (p, c) = ends[k];
        parent.push(frame_of_link[p]);
        let mut spec = joints[k].spec.clone();
        if spec.kind != JointKind::Fixed {
            spec.position_index = Some(next_index);
            next_index += 1;
        }
        specs.push(spec);
        inertias.push(links[c].inertia.clone());
        link_names.push(links[c].name.clone());
    }

    Ok(UnfusedModel {
        name,
        base_link: links[base].name.clone(),
        parent,
        joints: specs,
        inertias,
        link_names,
    })
}
