use std::path::Path;

use super::{rasterize, GBuffer};
use crate::body_model::{bone_transforms, deform_points, BodyModel, Pose};
use crate::error::Result;
use crate::imaging::Image;
use crate::volume_renderer::Camera;

/// Per-pixel body part (0 = background, 1..=24) and surface coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct IuvImage {
    pub width: usize,
    pub height: usize,
    pub part: Vec<u8>,
    pub uv: Vec<[f64; 2]>,
}

impl IuvImage {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            part: vec![0; width * height],
            uv: vec![[0.0; 2]; width * height],
        }
    }

    pub fn mask(&self) -> Image {
        let data = self.part.iter().map(|p| if *p > 0 { 1.0 } else { 0.0 }).collect();
        Image::from_data(self.width, self.height, 1, data).expect("sized by construction")
    }

    pub fn part_at(&self, x: usize, y: usize) -> u8 {
        self.part[y * self.width + x]
    }

    /// RGB packing `(part/24, u, v)`, zero on background.
    pub fn visualization(&self) -> Image {
        let mut img = Image::new(self.width, self.height, 3);
        for (i, (p, uv)) in self.part.iter().zip(&self.uv).enumerate() {
            if *p > 0 {
                img.data[3 * i..3 * i + 3].copy_from_slice(&[*p as f64 / 24.0, uv[0], uv[1]]);
            }
        }
        img
    }

    /// Raw 16-bit export: channels are `part`, `u·65535`, `v·65535`.
    pub fn save_png16(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut img = Image::new(self.width, self.height, 3);
        for (i, (p, uv)) in self.part.iter().zip(&self.uv).enumerate() {
            img.data[3 * i..3 * i + 3].copy_from_slice(&[*p as f64, uv[0], uv[1]]);
        }
        img.save_png16(path, [1.0, 65535.0, 65535.0])
    }
}

/// Majority label of a face; with three distinct labels, the corner with the
/// largest barycentric weight decides.
fn face_part(labels: [u8; 3], bary: &[f64; 3]) -> u8 {
    if labels[0] == labels[1] || labels[0] == labels[2] {
        labels[0]
    } else if labels[1] == labels[2] {
        labels[1]
    } else {
        let k = (0..3).fold(0, |m, k| if bary[k] > bary[m] { k } else { m });
        labels[k]
    }
}

/// Builds IUV from a g-buffer over the body's own face list.
pub fn iuv_from_gbuffer(body: &BodyModel, gbuf: &GBuffer) -> IuvImage {
    let mut iuv = IuvImage::empty(gbuf.width, gbuf.height);
    for (i, (&f, b)) in gbuf.face.iter().zip(&gbuf.bary).enumerate() {
        if f < 0 {
            continue;
        }
        let idx = body.faces[f as usize].map(|v| v as usize);
        iuv.part[i] = face_part(idx.map(|v| body.part_labels[v]), b);
        let mut uv = [0.0; 2];
        for k in 0..3 {
            for c in 0..2 {
                uv[c] += b[k] * body.uv[idx[k]][c];
            }
        }
        iuv.uv[i] = uv.map(|x| x.clamp(0.0, 1.0));
    }
    iuv
}

/// Poses the body by forward skinning and rasterizes its part map from `camera`.
pub fn render_densepose(body: &BodyModel, pose: &Pose, camera: &Camera) -> Result<(IuvImage, GBuffer)> {
    pose.validate()?;
    let tf = bone_transforms(body, pose);
    let verts = deform_points(&body.vertices, &body.skin_weights, &tf)?;
    let gbuf = rasterize(&verts, &body.faces, camera);
    Ok((iuv_from_gbuffer(body, &gbuf), gbuf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_then_largest_weight() {
        assert_eq!(face_part([3, 3, 5], &[0.1, 0.1, 0.8]), 3);
        assert_eq!(face_part([5, 3, 3], &[0.8, 0.1, 0.1]), 3);
        assert_eq!(face_part([1, 2, 3], &[0.2, 0.5, 0.3]), 2);
        assert_eq!(face_part([1, 2, 3], &[0.4, 0.3, 0.3]), 1);
    }
}
