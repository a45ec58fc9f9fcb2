use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Mat3, Mat4, Vec3};

/// Orbit camera around `look_at`: right-handed, y-up; azimuth 0 sits on +z.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub radius: f64,
    /// Degrees above the horizontal plane.
    pub elevation: f64,
    /// Degrees, counter-clockwise seen from above, starting at +z.
    pub azimuth: f64,
    /// Vertical field of view in degrees.
    pub fov: f64,
    pub width: usize,
    pub height: usize,
    pub look_at: Vec3,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            radius: 1.5,
            elevation: 0.0,
            azimuth: 0.0,
            fov: 60.0,
            width: 64,
            height: 64,
            look_at: Vec3::zeros(),
        }
    }
}

impl CameraSpec {
    pub fn position(&self) -> Vec3 {
        let (el, az) = (self.elevation.to_radians(), self.azimuth.to_radians());
        self.look_at + Vec3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos()) * self.radius
    }

    pub fn with_resolution(&self, width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ..self.clone()
        }
    }
}

/// Pinhole camera; looks down its local −z with +y up and image rows going down.
#[derive(Clone, Debug)]
pub struct Camera {
    pub position: Vec3,
    /// Columns are the camera's right, up and backward axes in world space.
    pub rotation: Mat3,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn from_spec(spec: &CameraSpec) -> Result<Self> {
        if !(spec.fov > 0.0 && spec.fov < 180.0) {
            return Err(Error::InvalidInput(format!("fov {} outside (0, 180)", spec.fov)));
        }
        if spec.width == 0 || spec.height == 0 {
            return Err(Error::InvalidInput("camera image must be non-empty".into()));
        }
        if !(spec.radius > 0.0) {
            return Err(Error::InvalidInput("camera radius must be positive".into()));
        }
        let position = spec.position();
        let back = (position - spec.look_at).normalize();
        let world_up = if back.cross(&Vec3::y()).norm() < 1e-9 {
            -Vec3::z() * back.y.signum()
        } else {
            Vec3::y()
        };
        let right = world_up.cross(&back).normalize();
        let up = back.cross(&right);
        Ok(Self {
            position,
            rotation: Mat3::from_columns(&[right, up, back]),
            focal: 0.5 * spec.height as f64 / (spec.fov.to_radians() * 0.5).tan(),
            cx: spec.width as f64 * 0.5,
            cy: spec.height as f64 * 0.5,
            width: spec.width,
            height: spec.height,
        })
    }

    /// World-to-camera 4×4.
    pub fn extrinsic(&self) -> Mat4 {
        let rt = self.rotation.transpose();
        crate::math::affine(&rt, &(-(rt * self.position)))
    }

    pub fn intrinsic(&self) -> Mat3 {
        Mat3::new(self.focal, 0.0, self.cx, 0.0, self.focal, self.cy, 0.0, 0.0, 1.0)
    }

    /// Unit ray through the centre of pixel `(x, y)`.
    #[inline]
    pub fn ray(&self, x: usize, y: usize) -> (Vec3, Vec3) {
        let d = Vec3::new(
            (x as f64 + 0.5 - self.cx) / self.focal,
            -(y as f64 + 0.5 - self.cy) / self.focal,
            -1.0,
        );
        (self.position, (self.rotation * d).normalize())
    }

    /// Pixel coordinates and view depth of a world point.
    #[inline]
    pub fn project(&self, p: &Vec3) -> (f64, f64, f64) {
        let c = self.rotation.transpose() * (p - self.position);
        let depth = -c.z;
        (
            self.cx + self.focal * c.x / depth,
            self.cy - self.focal * c.y / depth,
            depth,
        )
    }
}

/// Extrinsic (world-to-camera) and intrinsic matrices of an orbit camera.
pub fn camera_from_spec(spec: &CameraSpec) -> Result<(Mat4, Mat3)> {
    let cam = Camera::from_spec(spec)?;
    Ok((cam.extrinsic(), cam.intrinsic()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(radius: f64, elevation: f64, azimuth: f64) -> CameraSpec {
        CameraSpec {
            radius,
            elevation,
            azimuth,
            ..CameraSpec::default()
        }
    }

    #[test]
    fn azimuth_convention() {
        let p = Camera::from_spec(&spec(2.0, 0.0, 0.0)).unwrap().position;
        assert!((p - Vec3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
        let p = Camera::from_spec(&spec(2.0, 0.0, 180.0)).unwrap().position;
        assert!((p - Vec3::new(0.0, 0.0, -2.0)).norm() < 1e-12);
    }

    #[test]
    fn focal_length() {
        let s = CameraSpec {
            fov: 60.0,
            height: 512,
            width: 512,
            ..CameraSpec::default()
        };
        let (_, k) = camera_from_spec(&s).unwrap();
        assert!((k[(0, 0)] - 256.0 / 30f64.to_radians().tan()).abs() < 1e-9);
        assert!((k[(0, 0)] - 443.405).abs() < 1e-3);
    }

    #[test]
    fn rejects_bad_fov() {
        assert!(camera_from_spec(&CameraSpec {
            fov: 180.0,
            ..CameraSpec::default()
        })
        .is_err());
    }

    #[test]
    fn projection_inverts_rays() {
        let cam = Camera::from_spec(&spec(1.7, 25.0, 70.0)).unwrap();
        let (o, d) = cam.ray(13, 41);
        let (u, v, depth) = cam.project(&(o + d * 1.3));
        assert!((u - 13.5).abs() < 1e-9 && (v - 41.5).abs() < 1e-9 && depth > 0.0);
        let e = cam.extrinsic();
        let c = crate::math::transform_point(&e, &cam.position);
        assert!(c.norm() < 1e-12);
    }

    #[test]
    fn straight_down_view_is_well_defined() {
        let cam = Camera::from_spec(&spec(1.0, 90.0, 0.0)).unwrap();
        assert!(cam.rotation.determinant() > 0.99);
    }
}
