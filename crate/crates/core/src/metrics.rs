//! Image, pose-control and mesh-quality measurements.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::mesh::TriMesh;
use crate::rasterizer::IuvImage;

/// Reported for identical images.
pub const PSNR_CAP: f64 = 99.0;
const DEGENERATE_AREA: f64 = 1e-14;

/// Peak signal-to-noise ratio in dB for images in `[0, 1]`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    if a.data.is_empty() {
        return Err(Error::InvalidInput("psnr of an empty image".into()));
    }
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).clamp(0.0, PSNR_CAP))
}

/// Intersection over union per part id (1..=24) present in either map.
/// Parts absent from both are reported as 1.
pub fn densepose_part_iou(pred: &IuvImage, reference: &IuvImage) -> Result<BTreeMap<u8, f64>> {
    if (pred.width, pred.height) != (reference.width, reference.height) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            pred.width, pred.height, reference.width, reference.height
        )));
    }
    let mut inter = [0usize; 25];
    let mut union = [0usize; 25];
    for (&p, &r) in pred.part.iter().zip(&reference.part) {
        if p == r {
            inter[p as usize] += 1;
            union[p as usize] += 1;
        } else {
            union[p as usize] += 1;
            union[r as usize] += 1;
        }
    }
    Ok((1..=24u8)
        .map(|k| {
            let u = union[k as usize];
            (k, if u == 0 { 1.0 } else { inter[k as usize] as f64 / u as f64 })
        })
        .collect())
}

/// Mean IoU over parts present in the reference.
pub fn mean_present_iou(ious: &BTreeMap<u8, f64>, reference: &IuvImage) -> f64 {
    let mut present = [false; 25];
    for &p in &reference.part {
        present[p as usize] = true;
    }
    let vals: Vec<f64> = ious.iter().filter(|(k, _)| present[**k as usize]).map(|(_, v)| *v).collect();
    if vals.is_empty() {
        1.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeshStats {
    pub vertices: usize,
    pub faces: usize,
    pub boundary_edges: usize,
    pub non_manifold_edges: usize,
    pub degenerate_faces: usize,
}

impl MeshStats {
    pub fn is_watertight(&self) -> bool {
        self.faces > 0 && self.boundary_edges == 0 && self.non_manifold_edges == 0
    }
}

pub fn mesh_audit(mesh: &TriMesh) -> MeshStats {
    let counts = mesh.edge_face_counts();
    MeshStats {
        vertices: mesh.vertices.len(),
        faces: mesh.faces.len(),
        boundary_edges: counts.values().filter(|c| **c == 1).count(),
        non_manifold_edges: counts.values().filter(|c| **c > 2).count(),
        degenerate_faces: (0..mesh.faces.len())
            .filter(|&f| {
                let [a, b, c] = mesh.faces[f];
                a == b || b == c || a == c || !(mesh.face_area(f) > DEGENERATE_AREA)
            })
            .count(),
    }
}

/// Evaluation summary. `external` holds scores merged in from other tools.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub psnr: Vec<f64>,
    pub mean_psnr: f64,
    pub part_iou: BTreeMap<u8, f64>,
    pub mean_part_iou: f64,
    pub mesh: MeshStats,
    #[serde(default)]
    pub external: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn summary(&self) -> String {
        format!(
            "psnr {:.2} dB over {} views (min {:.2}), part IoU {:.3}, mesh {} faces, {} boundary edges",
            self.mean_psnr,
            self.psnr.len(),
            self.psnr.iter().cloned().fold(f64::INFINITY, f64::min),
            self.mean_part_iou,
            self.mesh.faces,
            self.mesh.boundary_edges
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;
    use crate::mesh::icosphere;

    #[test]
    fn psnr_reference_values() {
        let a = Image::filled(8, 8, 3, 0.3);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        let b = Image::filled(8, 8, 3, 0.4);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let c = Image::filled(8, 8, 3, 0.8);
        assert!((psnr(&a, &c).unwrap() - 10.0 * 4f64.log10()).abs() < 1e-9);
        assert!((psnr(&a, &c).unwrap() - 6.0206).abs() < 1e-4);
        assert_eq!(psnr(&a, &c).unwrap(), psnr(&c, &a).unwrap());
        assert!(psnr(&a, &Image::new(4, 4, 3)).is_err());
    }

    fn disc(w: usize, h: usize, cx: f64, cy: f64, r: f64, part: u8) -> IuvImage {
        let mut m = IuvImage::empty(w, h);
        for y in 0..h {
            for x in 0..w {
                if (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2) < r * r {
                    m.part[y * w + x] = part;
                }
            }
        }
        m
    }

    #[test]
    fn iou_edge_cases() {
        let a = disc(32, 32, 16.0, 16.0, 8.0, 16);
        let same = densepose_part_iou(&a, &a).unwrap();
        assert!(same.values().all(|v| *v == 1.0));
        let empty = IuvImage::empty(32, 32);
        let none = densepose_part_iou(&empty, &a).unwrap();
        assert_eq!(none[&16], 0.0);
        assert_eq!(none[&3], 1.0);
        assert_eq!(mean_present_iou(&none, &a), 0.0);
    }

    #[test]
    fn shifted_disc_matches_pixel_sets() {
        let (w, r) = (48, 8.0);
        let a = disc(w, w, 20.0, 24.0, r, 16);
        let b = disc(w, w, 20.0 + r, 24.0, r, 16);
        let sa: std::collections::HashSet<usize> = (0..w * w).filter(|i| a.part[*i] == 16).collect();
        let sb: std::collections::HashSet<usize> = (0..w * w).filter(|i| b.part[*i] == 16).collect();
        let want = sa.intersection(&sb).count() as f64 / sa.union(&sb).count() as f64;
        let got = densepose_part_iou(&a, &b).unwrap();
        assert_eq!(got[&16], want);
        assert_eq!(densepose_part_iou(&b, &a).unwrap()[&16], want);
        assert!(want > 0.2 && want < 0.5);
    }

    #[test]
    fn audits() {
        let s = mesh_audit(&icosphere(2));
        assert_eq!((s.boundary_edges, s.non_manifold_edges, s.degenerate_faces), (0, 0, 0));
        assert!(s.is_watertight());
        let tri = TriMesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]]);
        assert_eq!(mesh_audit(&tri).boundary_edges, 3);
        let flat = TriMesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0], vec![[0, 1, 2]]);
        assert_eq!(mesh_audit(&flat).degenerate_faces, 1);
    }
}
