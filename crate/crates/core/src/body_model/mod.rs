//! Parametric articulated body: template mesh, forward kinematics, forward and
//! inverse linear blend skinning, body signed distance, and part cameras.

mod joints;
mod motion;
mod posed;
mod template;

use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{affine, axis_angle, transform_point, translation, Aabb, Mat4, Vec3};
use crate::mesh::{MeshSdf, TriMesh};
use crate::volume_renderer::CameraSpec;

pub use joints::{joint_index, part_label, BodyPart, HEAD, JOINT_NAMES, NUM_JOINTS, PARENTS};
pub use motion::{joint_limit, Motion, PoseLibrary, PoseRecord};
pub use posed::{InverseHit, PointTree, PosedBody};
pub use template::generate_template;

pub type SkinWeights = [f64; NUM_JOINTS];

/// Tolerance on a skin weight row summing to one, for externally supplied weights.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-4;

/// Template mesh with skeleton, skinning weights, part labels and surface coordinates.
#[derive(Clone, Debug)]
pub struct BodyModel {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub skin_weights: Vec<SkinWeights>,
    pub joint_rest: [Vec3; NUM_JOINTS],
    pub parents: [usize; NUM_JOINTS],
    /// Per-vertex part label in `1..=24`.
    pub part_labels: Vec<u8>,
    pub uv: Vec<[f64; 2]>,
    sdf: OnceLock<MeshSdf>,
}

/// On-disk JSON layout.
#[derive(Serialize, Deserialize)]
struct BodyModelJson {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[u32; 3]>,
    weights: Vec<Vec<f64>>,
    joints: Vec<[f64; 3]>,
    parents: Vec<usize>,
    parts: Vec<u8>,
    uv: Vec<[f64; 2]>,
}

impl BodyModel {
    pub fn new(
        vertices: Vec<Vec3>,
        faces: Vec<[u32; 3]>,
        skin_weights: Vec<SkinWeights>,
        joint_rest: [Vec3; NUM_JOINTS],
        parents: [usize; NUM_JOINTS],
        part_labels: Vec<u8>,
        uv: Vec<[f64; 2]>,
    ) -> Result<Self> {
        let model = Self {
            vertices,
            faces,
            skin_weights,
            joint_rest,
            parents,
            part_labels,
            uv,
            sdf: OnceLock::new(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.skin_weights.len() != n || self.part_labels.len() != n || self.uv.len() != n {
            return bad("per-vertex arrays disagree in length".into());
        }
        for (row, w) in self.skin_weights.iter().enumerate() {
            let sum: f64 = w.iter().sum();
            if w.iter().any(|&x| x < 0.0 || !x.is_finite()) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::WeightSum { row, sum });
            }
        }
        for f in &self.faces {
            if f.iter().any(|&i| i as usize >= n) {
                return bad(format!("face {f:?} indexes past {n} vertices"));
            }
        }
        if self.parents[0] != 0 {
            return bad("joint 0 must be the root".into());
        }
        for j in 1..NUM_JOINTS {
            // walk to the root; a cycle would never reach joint 0
            let mut k = j;
            for _ in 0..NUM_JOINTS {
                if k == 0 {
                    break;
                }
                k = self.parents[k];
            }
            if k != 0 {
                return bad(format!("joint {j} does not reach the root"));
            }
        }
        if self.part_labels.iter().any(|&p| p == 0 || p as usize > NUM_JOINTS) {
            return bad("part labels must lie in 1..=24".into());
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn mesh(&self) -> TriMesh {
        TriMesh::new(self.vertices.clone(), self.faces.clone())
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    pub fn centroid(&self) -> Vec3 {
        self.bounds().center()
    }

    fn sdf(&self) -> &MeshSdf {
        self.sdf.get_or_init(|| MeshSdf::new(self.mesh()))
    }

    /// Signed distance to the canonical body surface (negative inside).
    pub fn signed_distance(&self, x: &Vec3) -> f64 {
        self.sdf().signed_distance(x)
    }

    pub fn signed_distance_and_gradient(&self, x: &Vec3) -> (f64, Vec3) {
        self.sdf().signed_distance_and_gradient(x)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let j: BodyModelJson = serde_json::from_str(s)?;
        if j.joints.len() != NUM_JOINTS || j.parents.len() != NUM_JOINTS {
            return Err(Error::InvalidInput(format!(
                "expected {NUM_JOINTS} joints, got {}",
                j.joints.len()
            )));
        }
        let mut skin_weights = Vec::with_capacity(j.weights.len());
        for (row, w) in j.weights.iter().enumerate() {
            let w: SkinWeights = w.as_slice().try_into().map_err(|_| {
                Error::InvalidInput(format!("weight row {row} has {} entries", w.len()))
            })?;
            skin_weights.push(w);
        }
        Self::new(
            j.vertices.iter().map(|v| Vec3::from(*v)).collect(),
            j.faces,
            skin_weights,
            std::array::from_fn(|i| Vec3::from(j.joints[i])),
            std::array::from_fn(|i| j.parents[i]),
            j.parts,
            j.uv,
        )
    }

    pub fn to_json_string(&self) -> Result<String> {
        let j = BodyModelJson {
            vertices: self.vertices.iter().map(|v| [v.x, v.y, v.z]).collect(),
            faces: self.faces.clone(),
            weights: self.skin_weights.iter().map(|w| w.to_vec()).collect(),
            joints: self.joint_rest.iter().map(|v| [v.x, v.y, v.z]).collect(),
            parents: self.parents.to_vec(),
            parts: self.part_labels.clone(),
            uv: self.uv.clone(),
        };
        Ok(serde_json::to_string(&j)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }
}

/// Joint rotations (axis-angle, radians), root offset, and per-joint bone scales.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub joint_rot: [Vec3; NUM_JOINTS],
    pub root_translation: Vec3,
    pub bone_scale: [f64; NUM_JOINTS],
}

impl Default for Pose {
    fn default() -> Self {
        Self::canonical()
    }
}

impl Pose {
    /// The canonical A-pose the template is modelled in.
    pub fn canonical() -> Self {
        Self {
            joint_rot: [Vec3::zeros(); NUM_JOINTS],
            root_translation: Vec3::zeros(),
            bone_scale: [1.0; NUM_JOINTS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bone_scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput("bone scales must be positive".into()));
        }
        if self
            .joint_rot
            .iter()
            .chain(std::iter::once(&self.root_translation))
            .any(|v| !v.iter().all(|x| x.is_finite()))
        {
            return Err(Error::InvalidInput("pose has non-finite entries".into()));
        }
        Ok(())
    }
}

/// Per-joint affine maps from canonical to deformed space.
#[derive(Clone, Debug, PartialEq)]
pub struct BoneTransforms {
    pub world: [Mat4; NUM_JOINTS],
}

impl BoneTransforms {
    pub fn identity() -> Self {
        Self {
            world: [Mat4::identity(); NUM_JOINTS],
        }
    }

    /// Blended 3×4 skinning transform `Σ wᵢ·Bᵢ` (returned as 4×4).
    #[inline]
    pub fn blend(&self, weights: &SkinWeights) -> Mat4 {
        let mut g = Mat4::zeros();
        for (w, b) in weights.iter().zip(&self.world) {
            if *w != 0.0 {
                g += b * *w;
            }
        }
        g[(3, 3)] = 1.0;
        g
    }

    /// Applies `transform` on the left of every bone transform.
    pub fn compose_left(&self, transform: &Mat4) -> Self {
        Self {
            world: self.world.map(|b| transform * b),
        }
    }
}

/// Global joint frames `G_i` for a joint tree.
fn global_frames(joint_rest: &[Vec3; NUM_JOINTS], parents: &[usize; NUM_JOINTS], pose: &Pose) -> [Mat4; NUM_JOINTS] {
    let mut g = [Mat4::identity(); NUM_JOINTS];
    for i in 0..NUM_JOINTS {
        let local_linear = axis_angle(&pose.joint_rot[i]) * pose.bone_scale[i];
        if i == 0 {
            g[0] = affine(&local_linear, &(joint_rest[0] + pose.root_translation));
        } else {
            let p = parents[i];
            debug_assert!(p < i, "joint tree must be topologically ordered");
            g[i] = g[p] * affine(&local_linear, &(joint_rest[i] - joint_rest[p]));
        }
    }
    g
}

/// `Bᵢ = Gᵢ(pose) · Gᵢ(rest)⁻¹`, with bone scales folded into the linear part.
pub fn bone_transforms(model: &BodyModel, pose: &Pose) -> BoneTransforms {
    skeleton_transforms(&model.joint_rest, &model.parents, pose)
}

pub fn skeleton_transforms(joint_rest: &[Vec3; NUM_JOINTS], parents: &[usize; NUM_JOINTS], pose: &Pose) -> BoneTransforms {
    let g = global_frames(joint_rest, parents, pose);
    BoneTransforms {
        world: std::array::from_fn(|i| g[i] * translation(&-joint_rest[i])),
    }
}

/// Posed joint positions.
pub fn posed_joints(model: &BodyModel, pose: &Pose) -> [Vec3; NUM_JOINTS] {
    let b = bone_transforms(model, pose);
    std::array::from_fn(|i| transform_point(&b.world[i], &model.joint_rest[i]))
}

/// Forward skinning `x_d = (Σ wᵢ·Bᵢ)·x_c` per point.
pub fn deform_points(points: &[Vec3], weights: &[SkinWeights], transforms: &BoneTransforms) -> Result<Vec<Vec3>> {
    if points.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} points, {} weight rows",
            points.len(),
            weights.len()
        )));
    }
    points
        .iter()
        .zip(weights)
        .enumerate()
        .map(|(row, (p, w))| {
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                return Err(Error::WeightSum { row, sum });
            }
            Ok(transform_point(&transforms.blend(w), p))
        })
        .collect()
}

/// Canonical correspondence of a deformed-space point. Builds the posed
/// acceleration structure on every call; use [`PosedBody`] for batches.
pub fn inverse_deform(x_d: &Vec3, model: &BodyModel, pose: &Pose) -> Result<Vec3> {
    Ok(PosedBody::new(model, pose)?.inverse_deform(x_d)?.canonical)
}

/// Crop camera centred on a body part's joints.
pub fn part_camera(model: &BodyModel, pose: &Pose, part: BodyPart, base: &CameraSpec) -> CameraSpec {
    let joints = posed_joints(model, pose);
    let ids = part.joints();
    let target = ids.iter().map(|&j| joints[j]).sum::<Vec3>() / ids.len() as f64;
    CameraSpec {
        radius: base.radius * part.zoom(),
        look_at: target,
        ..base.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn chain_model() -> ([Vec3; NUM_JOINTS], [usize; NUM_JOINTS]) {
        // joint 1 one unit above the root; the remaining joints hang off joint 1
        let mut rest = [Vec3::new(0.0, 1.0, 0.0); NUM_JOINTS];
        rest[0] = Vec3::zeros();
        let mut parents = [1usize; NUM_JOINTS];
        parents[0] = 0;
        parents[1] = 0;
        (rest, parents)
    }

    #[test]
    fn rest_pose_gives_identity() {
        let model = generate_template(0);
        let b = bone_transforms(&model, &Pose::canonical());
        for m in &b.world {
            assert!((m - Mat4::identity()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn two_joint_chain_rotation() {
        let (rest, parents) = chain_model();
        let mut pose = Pose::canonical();
        pose.joint_rot[0] = Vec3::new(0.0, 0.0, FRAC_PI_2);
        let b = skeleton_transforms(&rest, &parents, &pose);
        let child = transform_point(&b.world[1], &rest[1]);
        assert!((child - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn root_translation_shifts_joints() {
        let model = generate_template(0);
        let mut pose = Pose::canonical();
        pose.root_translation = Vec3::new(0.0, 0.0, 0.5);
        let j = posed_joints(&model, &pose);
        for (a, b) in j.iter().zip(&model.joint_rest) {
            assert!((a - b - Vec3::new(0.0, 0.0, 0.5)).norm() < 1e-12);
        }
    }

    #[test]
    fn bone_scale_enters_determinant() {
        let (rest, parents) = chain_model();
        let mut pose = Pose::canonical();
        pose.bone_scale[0] = 1.5;
        pose.bone_scale[1] = 2.0;
        pose.joint_rot[1] = Vec3::new(0.3, -0.2, 0.1);
        let b = skeleton_transforms(&rest, &parents, &pose);
        let det = crate::math::linear_part(&b.world[1]).determinant();
        assert!((det - (1.5f64 * 2.0).powi(3)).abs() < 1e-9);
    }

    #[test]
    fn deform_examples() {
        let mut t = BoneTransforms::identity();
        let p = [Vec3::new(0.3, -0.2, 0.7)];
        let mut w = [0.0; NUM_JOINTS];
        w[0] = 1.0;
        assert_eq!(deform_points(&p, &[w], &t).unwrap()[0], p[0]);

        t.world[0] = crate::math::affine(&axis_angle(&Vec3::new(0.0, 0.0, FRAC_PI_2)), &Vec3::zeros());
        let out = deform_points(&[Vec3::new(1.0, 0.0, 0.0)], &[w], &t).unwrap()[0];
        assert!((out - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);

        let mut t = BoneTransforms::identity();
        t.world[1] = translation(&Vec3::new(1.0, 0.0, 0.0));
        let mut w = [0.0; NUM_JOINTS];
        w[0] = 0.5;
        w[1] = 0.5;
        let out = deform_points(&p, &[w], &t).unwrap()[0];
        assert!((out - p[0] - Vec3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn deform_rejects_unnormalized_rows() {
        let mut w = [0.0; NUM_JOINTS];
        w[0] = 0.9;
        let err = deform_points(&[Vec3::zeros()], &[w], &BoneTransforms::identity()).unwrap_err();
        assert!(matches!(err, Error::WeightSum { row: 0, .. }));
    }

    #[test]
    fn json_round_trip() {
        let model = generate_template(0);
        let back = BodyModel::from_json_str(&model.to_json_string().unwrap()).unwrap();
        assert_eq!(back.vertices, model.vertices);
        assert_eq!(back.skin_weights, model.skin_weights);
        assert_eq!(back.parents, model.parents);
    }

    #[test]
    fn part_camera_targets_head() {
        let model = generate_template(0);
        let base = CameraSpec {
            radius: 1.5,
            ..CameraSpec::default()
        };
        let cam = part_camera(&model, &Pose::canonical(), BodyPart::Head, &base);
        assert!((cam.radius - 0.45).abs() < 1e-12);
        assert!((cam.look_at - model.joint_rest[HEAD]).norm() < 1e-12);
        assert_eq!(cam.azimuth, base.azimuth);
    }

    #[test]
    fn signed_distance_vertex_is_zero() {
        let model = generate_template(0);
        for v in model.vertices.iter().step_by(97) {
            assert!(model.signed_distance(v).abs() < 1e-6);
        }
    }
}
