use std::fmt::Write;

use super::{JointKind, RobotModel};

/// Roll-pitch-yaw angles reproducing `r` under [`super::rpy_to_matrix`].
pub(crate) fn matrix_to_rpy(r: &[[f64; 3]; 3]) -> [f64; 3] {
    let pitch = (-r[2][0]).atan2((r[0][0] * r[0][0] + r[1][0] * r[1][0]).sqrt());
    if r[0][0].abs() < 1e-12 && r[1][0].abs() < 1e-12 {
        // gimbal lock: only roll ± yaw is observable, put it all in yaw
        let yaw = (-r[0][1]).atan2(r[1][1]);
        [0.0, pitch, yaw]
    } else {
        [r[2][1].atan2(r[2][2]), pitch, r[1][0].atan2(r[0][0])]
    }
}

fn triple(v: [f64; 3]) -> String {
    format!("{:?} {:?} {:?}", v[0], v[1], v[2])
}

/// Canonical URDF for a fused model. Numbers are written with shortest
/// round-trip formatting, so parsing the output reproduces the model up to the
/// rounding of the rpy conversion.
pub fn to_urdf(model: &RobotModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "<?xml version=\"1.0\"?>");
    let _ = writeln!(out, "<robot name=\"{}\">", escape(&model.name));
    let _ = writeln!(out, "  <link name=\"{}\"/>", escape(&model.base_link));
    for (name, li) in model.link_names.iter().zip(&model.inertias) {
        let i = li.inertia_about_com;
        let _ = writeln!(out, "  <link name=\"{}\">", escape(name));
        let _ = writeln!(out, "    <inertial>");
        let _ = writeln!(out, "      <origin xyz=\"{}\" rpy=\"0 0 0\"/>", triple(li.com));
        let _ = writeln!(out, "      <mass value=\"{:?}\"/>", li.mass);
        let _ = writeln!(
            out,
            "      <inertia ixx=\"{:?}\" ixy=\"{:?}\" ixz=\"{:?}\" iyy=\"{:?}\" iyz=\"{:?}\" izz=\"{:?}\"/>",
            i[0][0], i[0][1], i[0][2], i[1][1], i[1][2], i[2][2]
        );
        let _ = writeln!(out, "    </inertial>");
        let _ = writeln!(out, "  </link>");
    }
    for (k, j) in model.joints.iter().enumerate() {
        let kind = match j.kind {
            JointKind::Revolute => "revolute",
            JointKind::Prismatic => "prismatic",
            JointKind::Fixed => "fixed",
        };
        let parent = match model.parent[k] {
            Some(p) => &model.link_names[p],
            None => &model.base_link,
        };
        let _ = writeln!(out, "  <joint name=\"{}\" type=\"{kind}\">", escape(&j.name));
        let _ = writeln!(out, "    <parent link=\"{}\"/>", escape(parent));
        let _ = writeln!(out, "    <child link=\"{}\"/>", escape(&model.link_names[k]));
        let _ = writeln!(
            out,
            "    <origin xyz=\"{}\" rpy=\"{}\"/>",
            triple(j.origin_translation),
            triple(matrix_to_rpy(&j.origin_rotation))
        );
        let _ = writeln!(out, "    <axis xyz=\"{}\"/>", triple(j.axis));
        let _ = writeln!(out, "  </joint>");
    }
    out.push_str("</robot>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models;
    use crate::urdf::{parse_urdf, rpy_to_matrix};
    use proptest::prelude::*;

    fn max_model_diff(a: &RobotModel, b: &RobotModel) -> f64 {
        assert_eq!(a.parent, b.parent);
        assert_eq!(a.link_names, b.link_names);
        let mut d: f64 = 0.0;
        for (x, y) in a.joints.iter().zip(&b.joints) {
            assert_eq!(x.kind, y.kind);
            assert_eq!(x.name, y.name);
            assert_eq!(x.position_index, y.position_index);
            for r in 0..3 {
                d = d.max((x.axis[r] - y.axis[r]).abs());
                d = d.max((x.origin_translation[r] - y.origin_translation[r]).abs());
                for c in 0..3 {
                    d = d.max((x.origin_rotation[r][c] - y.origin_rotation[r][c]).abs());
                }
            }
        }
        for (x, y) in a.inertias.iter().zip(&b.inertias) {
            d = d.max((x.mass - y.mass).abs());
            for r in 0..3 {
                d = d.max((x.com[r] - y.com[r]).abs());
                for c in 0..3 {
                    d = d.max((x.inertia_about_com[r][c] - y.inertia_about_com[r][c]).abs());
                }
            }
        }
        d
    }

    #[test]
    fn bundled_models_round_trip() {
        for (name, m) in models::bundled() {
            let again = parse_urdf(&to_urdf(&m)).unwrap();
            assert!(max_model_diff(&m, &again) <= 1e-12, "{name}");
        }
    }

    #[test]
    fn gimbal_lock_rotation_round_trips() {
        for rpy in [[0.3, std::f64::consts::FRAC_PI_2, -0.2], [0.1, -std::f64::consts::FRAC_PI_2, 0.7]] {
            let r = rpy_to_matrix(rpy);
            let back = rpy_to_matrix(matrix_to_rpy(&r));
            for i in 0..3 {
                for j in 0..3 {
                    assert!((r[i][j] - back[i][j]).abs() < 1e-12);
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn random_models_round_trip(n in 1usize..20, seed in any::<u64>()) {
            let m = models::random_model(n, seed);
            let again = parse_urdf(&to_urdf(&m)).unwrap();
            prop_assert!(max_model_diff(&m, &again) <= 1e-12);
        }

        #[test]
        fn rpy_extraction_inverts(rpy in prop::array::uniform3(-3.1f64..3.1)) {
            let r = rpy_to_matrix(rpy);
            let back = rpy_to_matrix(matrix_to_rpy(&r));
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((r[i][j] - back[i][j]).abs() < 1e-12);
                }
            }
        }
    }
}
