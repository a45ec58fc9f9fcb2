use std::sync::Arc;

use crate::body_model::{bone_transforms, deform_points, BodyModel, Pose};
use crate::error::Result;
use crate::guidance::MockTargetGuidance;
use crate::imaging::Image;
use crate::math::Vec3;
use crate::rasterizer::rasterize;
use crate::volume_renderer::{Camera, CameraSpec};

/// The template body with a smooth procedural albedo, rendered over a flat
/// background. Serves as the oracle target for mock guidance.
#[derive(Clone, Debug)]
pub struct ReferenceAvatar {
    pub body: Arc<BodyModel>,
    pub background: [f64; 3],
}

impl ReferenceAvatar {
    pub fn new(body: Arc<BodyModel>) -> Self {
        Self {
            body,
            background: [0.85, 0.85, 0.85],
        }
    }

    /// Albedo at a canonical surface point.
    pub fn albedo(x: &Vec3) -> [f64; 3] {
        [
            0.5 + 0.3 * (4.0 * x.y + 1.3 * x.x).sin(),
            0.45 + 0.25 * (5.0 * x.x + 0.7).cos(),
            0.5 + 0.3 * (3.0 * x.y - 4.0 * x.z + 2.0).sin(),
        ]
    }

    pub fn render(&self, pose: &Pose, spec: &CameraSpec) -> Result<Image> {
        let cam = Camera::from_spec(spec)?;
        let body = &self.body;
        let posed = deform_points(&body.vertices, &body.skin_weights, &bone_transforms(body, pose))?;
        let gbuf = rasterize(&posed, &body.faces, &cam);
        let canonical = gbuf.interpolate(&body.faces, &body.vertices);
        let mut img = Image::new(spec.width, spec.height, 3);
        for (i, c) in canonical.iter().enumerate() {
            let rgb = c.as_ref().map_or(self.background, Self::albedo);
            img.data[3 * i..3 * i + 3].copy_from_slice(&rgb);
        }
        Ok(img)
    }

    pub fn into_guidance(self) -> MockTargetGuidance {
        MockTargetGuidance::new(Box::new(move |pose, spec| self.render(pose, spec)))
    }
}
