//! Procedural capsule humanoid in A-pose with the 24-joint skeleton.
//!
//! The surface is the zero level set of a smooth union of capsules, extracted
//! with marching tetrahedra on a lattice whose spacing halves with each level.
//! Skinning weights blend the two nearest bone segments by inverse squared
//! distance.

use super::{part_label, BodyModel, SkinWeights, NUM_JOINTS, PARENTS};
use crate::math::{Aabb, Vec3};
use crate::mesh::isosurface::TetLattice;

const BASE_CELL: f64 = 0.012;
const SMOOTH_UNION: f64 = 0.025;
/// Lattice values closer to zero than this fraction of a cell are pushed away
/// so that no surface vertex lands on a lattice corner.
const SNAP: f64 = 0.02;

fn v(x: f64, y: f64, z: f64) -> Vec3 {
    Vec3::new(x, y, z)
}

/// A-pose arm direction for the body's left side (+x).
fn arm_dir() -> Vec3 {
    let a = (-40.0f64).to_radians();
    v(a.cos(), a.sin(), 0.0)
}

pub(crate) fn rest_joints() -> [Vec3; NUM_JOINTS] {
    let d = arm_dir();
    let ls = v(0.13, 0.29, 0.0);
    let le = ls + d * 0.16;
    let lw = le + d * 0.14;
    let lh = lw + d * 0.035;
    let mirror = |p: Vec3| v(-p.x, p.y, p.z);
    [
        v(0.0, 0.0, 0.0),       // pelvis
        v(0.07, -0.05, 0.0),    // left_hip
        v(-0.07, -0.05, 0.0),   // right_hip
        v(0.0, 0.08, 0.0),      // spine1
        v(0.075, -0.27, 0.01),  // left_knee
        v(-0.075, -0.27, 0.01), // right_knee
        v(0.0, 0.16, 0.0),      // spine2
        v(0.08, -0.48, 0.0),    // left_ankle
        v(-0.08, -0.48, 0.0),   // right_ankle
        v(0.0, 0.22, 0.0),      // spine3
        v(0.08, -0.52, 0.06),   // left_foot
        v(-0.08, -0.52, 0.06),  // right_foot
        v(0.0, 0.32, 0.0),      // neck
        v(0.03, 0.27, 0.0),     // left_collar
        v(-0.03, 0.27, 0.0),    // right_collar
        v(0.0, 0.39, 0.0),      // head
        ls,
        mirror(ls),
        le,
        mirror(le),
        lw,
        mirror(lw),
        lh,
        mirror(lh),
    ]
}

/// Bone segment each joint's weights are measured against.
fn skin_segments(j: &[Vec3; NUM_JOINTS]) -> [(Vec3, Vec3); NUM_JOINTS] {
    let d = arm_dir();
    let md = v(-d.x, d.y, d.z);
    let toe = |foot: Vec3| foot + v(0.0, -0.005, 0.07);
    [
        (j[0], j[3]),
        (j[1], j[4]),
        (j[2], j[5]),
        (j[3], j[6]),
        (j[4], j[7]),
        (j[5], j[8]),
        (j[6], j[9]),
        (j[7], j[10]),
        (j[8], j[11]),
        (j[9], j[12]),
        (j[10], toe(j[10])),
        (j[11], toe(j[11])),
        // the neck bone stops at the base of the skull so the head joint
        // itself lies in the head region
        (j[12], v(0.0, 0.345, 0.0)),
        (j[13], j[16]),
        (j[14], j[17]),
        (j[15], v(0.0, 0.47, 0.01)),
        (j[16], j[18]),
        (j[17], j[19]),
        (j[18], j[20]),
        (j[19], j[21]),
        (j[20], j[22]),
        (j[21], j[23]),
        (j[22], j[22] + d * 0.06),
        (j[23], j[23] + md * 0.06),
    ]
}

struct Capsule {
    a: Vec3,
    b: Vec3,
    r: f64,
}

fn capsules(j: &[Vec3; NUM_JOINTS]) -> Vec<Capsule> {
    let c = |a: Vec3, b: Vec3, r: f64| Capsule { a, b, r };
    let d = arm_dir();
    let md = v(-d.x, d.y, d.z);
    let mut out = vec![
        // torso
        c(v(0.0, -0.03, 0.0), v(0.0, 0.25, 0.0), 0.095),
        c(v(-0.065, -0.04, 0.0), v(0.065, -0.04, 0.0), 0.085),
        c(v(-0.045, 0.09, 0.0), v(0.045, 0.09, 0.0), 0.085),
        c(v(-0.07, 0.22, 0.0), v(0.07, 0.22, 0.0), 0.08),
        // neck and head
        c(v(0.0, 0.28, 0.0), v(0.0, 0.37, 0.0), 0.042),
        c(v(0.0, 0.395, 0.01), v(0.0, 0.435, 0.01), 0.07),
    ];
    for (side, dir) in [(1usize, d), (0, md)] {
        let pick = |l: usize, r: usize| if side == 1 { j[l] } else { j[r] };
        let hand = pick(22, 23);
        out.extend([
            c(pick(13, 14), pick(16, 17), 0.045),
            c(pick(16, 17), pick(18, 19), 0.036),
            c(pick(18, 19), pick(20, 21), 0.031),
            c(pick(20, 21), hand + dir * 0.05, 0.028),
            c(pick(1, 2), pick(4, 5), 0.06),
            c(pick(4, 5), pick(7, 8), 0.044),
        ]);
        let ankle = pick(7, 8);
        out.push(c(ankle + v(0.0, -0.035, -0.03), pick(10, 11) + v(0.0, -0.005, 0.06), 0.03));
    }
    out
}

fn capsule_sdf(p: &Vec3, cap: &Capsule) -> f64 {
    segment_distance(p, &cap.a, &cap.b) - cap.r
}

fn segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

fn segment_param(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0)
}

fn smooth_min(a: f64, b: f64, k: f64) -> f64 {
    let h = (k - (a - b).abs()).max(0.0) / k;
    a.min(b) - h * h * k * 0.25
}

fn body_sdf(p: &Vec3, caps: &[Capsule]) -> f64 {
    caps.iter()
        .map(|c| capsule_sdf(p, c))
        .reduce(|a, b| smooth_min(a, b, SMOOTH_UNION))
        .unwrap_or(f64::INFINITY)
}

/// Skinning weights from the two nearest bone segments.
fn skin_weights(p: &Vec3, segs: &[(Vec3, Vec3); NUM_JOINTS]) -> SkinWeights {
    let mut d: Vec<(f64, usize)> = segs
        .iter()
        .enumerate()
        .map(|(i, (a, b))| (segment_distance(p, a, b), i))
        .collect();
    d.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let inv = |x: f64| 1.0 / (x * x + 1e-10);
    let (w0, w1) = (inv(d[0].0), inv(d[1].0));
    let mut w = [0.0; NUM_JOINTS];
    w[d[0].1] = w0 / (w0 + w1);
    w[d[1].1] = 1.0 - w[d[0].1];
    w
}

/// Cylindrical unwrap around the part's bone segment.
fn cylindrical_uv(p: &Vec3, a: &Vec3, b: &Vec3) -> [f64; 2] {
    let axis = (b - a).normalize();
    let helper = if axis.z.abs() < 0.9 { Vec3::z() } else { Vec3::x() };
    let e1 = axis.cross(&helper).normalize();
    let e2 = axis.cross(&e1);
    let r = p - a;
    let angle = r.dot(&e2).atan2(r.dot(&e1));
    [
        (angle / std::f64::consts::TAU + 0.5).clamp(0.0, 1.0),
        segment_param(p, a, b),
    ]
}

/// Deterministic capsule humanoid; `level` (0..=3) halves the lattice spacing each step.
pub fn generate_template(level: u32) -> BodyModel {
    assert!(level <= 3, "template level must be in 0..=3");
    let joints = rest_joints();
    let caps = capsules(&joints);
    let segs = skin_segments(&joints);

    let cell = BASE_CELL / (1u32 << level) as f64;
    let mut bounds = Aabb::empty();
    for c in &caps {
        bounds = bounds.union(&Aabb::from_points(&[c.a, c.b]).dilate(c.r));
    }
    let lattice = TetLattice::covering(&bounds.dilate(3.0 * cell), cell);
    let positions = lattice.positions();
    let snap = SNAP * cell;
    let values: Vec<f64> = positions
        .iter()
        .map(|p| {
            let d = body_sdf(p, &caps);
            if d.abs() < snap {
                if d < 0.0 {
                    -snap
                } else {
                    snap
                }
            } else {
                d
            }
        })
        .collect();
    let mesh = lattice.march(&positions, &values).mesh;

    let skin: Vec<SkinWeights> = mesh.vertices.iter().map(|p| skin_weights(p, &segs)).collect();
    let labels: Vec<u8> = skin
        .iter()
        .map(|w| {
            let j = (0..NUM_JOINTS)
                .reduce(|a, b| if w[b] > w[a] { b } else { a })
                .unwrap();
            part_label(j)
        })
        .collect();
    let uv = mesh
        .vertices
        .iter()
        .zip(&labels)
        .map(|(p, &l)| {
            let (a, b) = segs[l as usize - 1];
            cylindrical_uv(p, &a, &b)
        })
        .collect();

    BodyModel::new(mesh.vertices, mesh.faces, skin, joints, PARENTS, labels, uv)
        .expect("procedural template is valid by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_is_closed_manifold() {
        let m = generate_template(0);
        assert_eq!(m.joint_rest.len(), 24);
        assert!(m.mesh().edge_face_counts().values().all(|&c| c == 2));
        for w in &m.skin_weights {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn template_is_deterministic() {
        let a = generate_template(0);
        let b = generate_template(0);
        assert_eq!(a.vertices, b.vertices);
        assert_eq!(a.faces, b.faces);
    }

    #[test]
    fn template_fits_a_one_metre_box() {
        let b = generate_template(0).bounds();
        let e = b.extent();
        assert!(e.y > 0.95 && e.y < 1.1, "height {}", e.y);
        assert!(e.x < 1.0);
    }
}
