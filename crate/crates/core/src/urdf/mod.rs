//! URDF loading and the validated kinematic-tree robot model.
//!
//! Only the dynamics-relevant subset of URDF is understood: `robot`, `link`
//! with `inertial` (origin, mass, inertia) and `joint` with origin, axis and
//! type. Visual and collision geometry, transmissions and vendor extensions are
//! skipped. Links attached through fixed joints are fused into their moving
//! parent, so every frame of a [`RobotModel`] carries exactly one degree of
//! freedom.

mod emit;
mod fuse;
mod parse;

use std::path::Path;

use nalgebra::Matrix3;
use thiserror::Error;

pub use emit::to_urdf;
pub use fuse::{fuse_fixed, UnfusedModel};
pub use parse::{parse_unfused, rpy_to_matrix};

/// Default gravity vector, m/s².
pub const DEFAULT_GRAVITY: [f64; 3] = [0.0, 0.0, -9.81];

#[derive(Debug, Error)]
pub enum UrdfError {
    #[error("malformed XML at line {line}: {message}")]
    Xml { line: u32, message: String },
    #[error("joint `{joint}` uses unsupported feature: {feature}")]
    Unsupported { joint: String, feature: String },
    #[error("topology error: {0}")]
    Topology(String),
    #[error("invalid model (line {line}): {message}")]
    Invalid { line: u32, message: String },
    #[error("model validation failed: {0}")]
    Validation(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum JointKind {
    Revolute,
    Prismatic,
    Fixed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointSpec {
    pub kind: JointKind,
    /// Unit axis in the joint frame.
    pub axis: [f64; 3],
    /// Orientation of the joint frame in parent coordinates (maps joint-frame
    /// coordinates to parent coordinates).
    pub origin_rotation: [[f64; 3]; 3],
    /// Joint frame origin in parent coordinates, meters.
    pub origin_translation: [f64; 3],
    pub name: String,
    /// Index into `q`; `None` for fixed joints.
    pub position_index: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkInertia {
    pub mass: f64,
    /// Center of mass in the link frame.
    pub com: [f64; 3],
    /// Rotational inertia about the center of mass, link-frame axes.
    pub inertia_about_com: [[f64; 3]; 3],
}

impl LinkInertia {
    pub fn zero() -> Self {
        LinkInertia { mass: 0.0, com: [0.0; 3], inertia_about_com: [[0.0; 3]; 3] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobotModel {
    pub name: String,
    /// Name of the fixed base link.
    pub base_link: String,
    /// `parent[i] < i`, `None` for frames attached to the base.
    pub parent: Vec<Option<usize>>,
    pub joints: Vec<JointSpec>,
    pub inertias: Vec<LinkInertia>,
    /// Child link name of each frame.
    pub link_names: Vec<String>,
    pub gravity: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum Topology {
    SerialChain,
    BranchedTree,
}

#[derive(Clone, Debug)]
pub struct ParseOptions {
    pub gravity: [f64; 3],
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions { gravity: DEFAULT_GRAVITY }
    }
}

/// Parse URDF text into a validated, fixed-joint-free model.
pub fn parse_urdf(xml: &str) -> Result<RobotModel, UrdfError> {
    parse_urdf_with(xml, &ParseOptions::default())
}

pub fn parse_urdf_with(xml: &str, options: &ParseOptions) -> Result<RobotModel, UrdfError> {
    let raw = parse_unfused(xml)?;
    let mut model = fuse_fixed(&raw)?;
    model.gravity = options.gravity;
    model.validate()?;
    Ok(model)
}

pub fn load_urdf(path: impl AsRef<Path>, options: &ParseOptions) -> Result<RobotModel, UrdfError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| UrdfError::Io { path: path.display().to_string(), source })?;
    parse_urdf_with(&text, options)
}

pub fn classify_topology(model: &RobotModel) -> Topology {
    let chain = model
        .parent
        .iter()
        .enumerate()
        .all(|(i, p)| if i == 0 { p.is_none() } else { *p == Some(i - 1) });
    if chain {
        Topology::SerialChain
    } else {
        Topology::BranchedTree
    }
}

impl RobotModel {
    pub fn n_frames(&self) -> usize {
        self.parent.len()
    }

    pub fn n_dof(&self) -> usize {
        self.joints.iter().filter(|j| j.kind != JointKind::Fixed).count()
    }

    pub fn frame_of_joint(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn tree(&self) -> Tree {
        Tree::new(&self.parent)
    }

    pub fn total_mass(&self) -> f64 {
        self.inertias.iter().map(|i| i.mass).sum()
    }

    pub fn validate(&self) -> Result<(), UrdfError> {
        let n = self.parent.len();
        if self.joints.len() != n || self.inertias.len() != n || self.link_names.len() != n {
            return Err(UrdfError::Validation("per-frame arrays have inconsistent lengths".into()));
        }
        if n == 0 {
            return Err(UrdfError::Validation("model has no moving frames".into()));
        }
        for (i, p) in self.parent.iter().enumerate() {
            if let Some(p) = p {
                if *p >= i {
                    return Err(UrdfError::Validation(format!("frame {i} has parent {p} >= {i}")));
                }
            }
        }
        for (i, j) in self.joints.iter().enumerate() {
            if j.kind == JointKind::Fixed {
                return Err(UrdfError::Validation(format!("joint `{}` is fixed after fusion", j.name)));
            }
            if j.position_index != Some(i) {
                return Err(UrdfError::Validation(format!(
                    "joint `{}` has position index {:?}, expected {i}",
                    j.name, j.position_index
                )));
            }
            let norm = j.axis.iter().map(|a| a * a).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(UrdfError::Validation(format!("joint `{}` axis is not unit length", j.name)));
            }
            let r = Matrix3::from_fn(|a, b| j.origin_rotation[a][b]);
            if (r.transpose() * r - Matrix3::identity()).amax() > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
                return Err(UrdfError::Validation(format!("joint `{}` origin rotation is not proper", j.name)));
            }
            if !j.axis.iter().chain(j.origin_translation.iter()).all(|x| x.is_finite()) {
                return Err(UrdfError::Validation(format!("joint `{}` has non-finite geometry", j.name)));
            }
        }
        for (i, li) in self.inertias.iter().enumerate() {
            let name = &self.link_names[i];
            if !(li.mass >= 0.0) || !li.mass.is_finite() {
                return Err(UrdfError::Validation(format!("link `{name}` has invalid mass {}", li.mass)));
            }
            let m = Matrix3::from_fn(|a, b| li.inertia_about_com[a][b]);
            if !m.iter().chain(li.com.iter()).all(|x| x.is_finite()) {
                return Err(UrdfError::Validation(format!("link `{name}` has non-finite inertia")));
            }
            if (m - m.transpose()).amax() > 1e-12 {
                return Err(UrdfError::Validation(format!("link `{name}` inertia is not symmetric")));
            }
            if m.symmetric_eigen().eigenvalues.min() < -1e-12 {
                return Err(UrdfError::Validation(format!("link `{name}` inertia is not positive semidefinite")));
            }
        }
        Ok(())
    }
}

/// Derived tree relations over a parent array with `parent[i] < i`.
#[derive(Clone, Debug)]
pub struct Tree {
    pub parent: Vec<Option<usize>>,
    /// Children of each frame, ascending.
    pub children: Vec<Vec<usize>>,
    pub depth: Vec<usize>,
    /// Root frame (a frame attached to the base) of each frame's limb.
    pub root: Vec<usize>,
    anc: Vec<Vec<bool>>,
}

impl Tree {
    pub fn new(parent: &[Option<usize>]) -> Self {
        let n = parent.len();
        let mut children = vec![Vec::new(); n];
        let mut depth = vec![0; n];
        let mut root = vec![0; n];
        let mut anc = vec![vec![false; n]; n];
        for i in 0..n {
            anc[i][i] = true;
            match parent[i] {
                Some(p) => {
                    children[p].push(i);
                    depth[i] = depth[p] + 1;
                    root[i] = root[p];
                    let (head, tail) = anc.split_at_mut(i);
                    for (dst, src) in tail[0].iter_mut().zip(&head[p]) {
                        *dst |= *src;
                    }
                }
                None => root[i] = i,
            }
        }
        Tree { parent: parent.to_vec(), children, depth, root, anc }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    /// True iff `j` lies on the path from the base to `i` (inclusive).
    pub fn is_ancestor_or_self(&self, j: usize, i: usize) -> bool {
        self.anc[i][j]
    }

    /// Frames in the subtree rooted at `i`, ascending (includes `i`).
    pub fn subtree(&self, i: usize) -> Vec<usize> {
        (i..self.len()).filter(|&k| self.anc[k][i]).collect()
    }

    pub fn ancestors_or_self(&self, i: usize) -> Vec<usize> {
        (0..=i).filter(|&k| self.anc[i][k]).collect()
    }

    pub fn same_limb(&self, a: usize, b: usize) -> bool {
        self.root[a] == self.root[b]
    }

    pub fn max_depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;

    const SINGLE: &str = r#"<robot name="one">
      <link name="base"/>
      <link name="l1"><inertial><mass value="1"/><inertia ixx="0" ixy="0" ixz="0" iyy="0" iyz="0" izz="0"/></inertial></link>
      <joint name="j1" type="revolute"><parent link="base"/><child link="l1"/><axis xyz="0 0 1"/>
        <limit lower="-1" upper="1" effort="10" velocity="1"/></joint>
    </robot>"#;

    #[test]
    fn single_link() {
        let m = parse_urdf(SINGLE).unwrap();
        assert_eq!(m.n_frames(), 1);
        assert_eq!(m.n_dof(), 1);
        assert_eq!(m.parent, vec![None]);
        assert_eq!(m.name, "one");
        assert_eq!(m.gravity, DEFAULT_GRAVITY);
        assert_eq!(classify_topology(&m), Topology::SerialChain);
    }

    #[test]
    fn gravity_override() {
        let m = parse_urdf_with(SINGLE, &ParseOptions { gravity: [0.0, -1.62, 0.0] }).unwrap();
        assert_eq!(m.gravity, [0.0, -1.62, 0.0]);
    }

    #[test]
    fn seven_dof_chain() {
        let m = parse_urdf(&models::chain7_urdf()).unwrap();
        assert_eq!(m.n_dof(), 7);
        assert_eq!(classify_topology(&m), Topology::SerialChain);
    }

    #[test]
    fn floating_joint_is_unsupported() {
        let xml = SINGLE.replace("type=\"revolute\"", "type=\"floating\"");
        match parse_urdf(&xml) {
            Err(UrdfError::Unsupported { joint, .. }) => assert_eq!(joint, "j1"),
            other => panic!("expected unsupported-feature error, got {other:?}"),
        }
    }

    #[test]
    fn continuous_maps_to_revolute() {
        let xml = SINGLE.replace("type=\"revolute\"", "type=\"continuous\"");
        let m = parse_urdf(&xml).unwrap();
        assert_eq!(m.joints[0].kind, JointKind::Revolute);
    }

    #[test]
    fn malformed_xml_reports_line() {
        let xml = "<robot name=\"x\">\n<link name=\"a\">\n</robot>";
        match parse_urdf(xml) {
            Err(UrdfError::Xml { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected xml error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let xml = SINGLE.replace("<link name=\"l1\">", "<link name=\"base\">").replace("link=\"l1\"", "link=\"base\"");
        assert!(matches!(parse_urdf(&xml), Err(UrdfError::Invalid { .. })));
        let dup_joint = SINGLE.replace(
            "</robot>",
            r#"<link name="l2"/><joint name="j1" type="revolute"><parent link="l1"/><child link="l2"/></joint></robot>"#,
        );
        assert!(matches!(parse_urdf(&dup_joint), Err(UrdfError::Invalid { .. })));
    }

    #[test]
    fn disconnected_link_rejected() {
        let xml = SINGLE.replace("</robot>", "<link name=\"orphan\"/></robot>");
        assert!(matches!(parse_urdf(&xml), Err(UrdfError::Topology(_))));
    }

    #[test]
    fn cycle_rejected() {
        let xml = SINGLE.replace(
            "</robot>",
            r#"<joint name="j2" type="revolute"><parent link="l1"/><child link="base"/></joint></robot>"#,
        );
        assert!(matches!(parse_urdf(&xml), Err(UrdfError::Topology(_))));
    }

    #[test]
    fn unknown_link_reference_rejected() {
        let xml = SINGLE.replace("<parent link=\"base\"/>", "<parent link=\"nope\"/>");
        assert!(parse_urdf(&xml).is_err());
    }

    #[test]
    fn figure_topology_is_branched() {
        let m = models::fig2_model();
        assert_eq!(classify_topology(&m), Topology::BranchedTree);
        assert_eq!(classify_topology(&models::link1()), Topology::SerialChain);
    }

    #[test]
    fn tree_relations() {
        let t = Tree::new(&models::fig2_model().parent);
        assert_eq!(t.children[0], vec![1, 5]);
        assert_eq!(t.subtree(1), vec![1, 2, 3, 4]);
        assert_eq!(t.ancestors_or_self(3), vec![0, 1, 2, 3]);
        assert!(t.is_ancestor_or_self(5, 6));
        assert!(!t.is_ancestor_or_self(1, 6));
        assert_eq!(t.max_depth(), 3);
    }

    #[test]
    fn bundled_models_validate() {
        for (name, m) in models::bundled() {
            m.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }
}
