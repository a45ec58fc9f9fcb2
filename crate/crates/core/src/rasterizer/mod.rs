//! Tile-based software rasterizer with perspective-correct barycentrics,
//! canonical-coordinate shading, and dense body-part (IUV) condition maps.

mod densepose;

use rayon::prelude::*;

use crate::coarse_field::{CoarseField, FieldTrace};
use crate::imaging::Image;
use crate::math::Vec3;
use crate::mesh::TriMesh;
use crate::volume_renderer::{Background, Camera};

pub use densepose::{iuv_from_gbuffer, render_densepose, IuvImage};

const TILE: usize = 16;
/// Faces with a vertex closer to the camera plane than this are dropped.
const NEAR: f64 = 1e-3;

/// Per-pixel visibility: face index (−1 for background), barycentrics in the
/// face's own vertex order, and view depth.
#[derive(Clone, Debug, PartialEq)]
pub struct GBuffer {
    pub width: usize,
    pub height: usize,
    pub face: Vec<i32>,
    pub bary: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
}

impl GBuffer {
    pub fn empty(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            face: vec![-1; n],
            bary: vec![[0.0; 3]; n],
            depth: vec![f64::INFINITY; n],
        }
    }

    pub fn mask(&self) -> Image {
        let data = self.face.iter().map(|f| if *f >= 0 { 1.0 } else { 0.0 }).collect();
        Image::from_data(self.width, self.height, 1, data).expect("sized by construction")
    }

    pub fn covered(&self) -> usize {
        self.face.iter().filter(|f| **f >= 0).count()
    }

    /// Barycentric interpolation of a per-vertex attribute; `None` on background.
    pub fn interpolate(&self, faces: &[[u32; 3]], attr: &[Vec3]) -> Vec<Option<Vec3>> {
        self.face
            .iter()
            .zip(&self.bary)
            .map(|(&f, b)| {
                (f >= 0).then(|| {
                    let [i, j, k] = faces[f as usize].map(|v| v as usize);
                    attr[i] * b[0] + attr[j] * b[1] + attr[k] * b[2]
                })
            })
            .collect()
    }
}

/// A triangle in pixel coordinates (y down), wound so its doubled area is positive.
struct ScreenTri {
    face: u32,
    p: [[f64; 2]; 3],
    inv_z: [f64; 3],
    /// `order[k]` is the face-local index of screen vertex `k`.
    order: [usize; 3],
    area: f64,
    top_left: [bool; 3],
    bbox: [f64; 4],
}

#[inline]
fn edge(a: &[f64; 2], b: &[f64; 2], p: &[f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

fn setup(face: u32, pts: [(f64, f64, f64); 3]) -> Option<ScreenTri> {
    if pts.iter().any(|p| !(p.2 > NEAR) || !p.0.is_finite() || !p.1.is_finite()) {
        return None;
    }
    let mut order = [0, 1, 2];
    let mut p = pts.map(|q| [q.0, q.1]);
    let mut area = edge(&p[0], &p[1], &p[2]);
    if area == 0.0 {
        return None;
    }
    if area < 0.0 {
        p.swap(1, 2);
        order.swap(1, 2);
        area = -area;
    }
    // Edge k runs from vertex k+1 to k+2 and is opposite vertex k.
    let top_left = [0, 1, 2].map(|k| {
        let (a, b) = (p[(k + 1) % 3], p[(k + 2) % 3]);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        dy < 0.0 || (dy == 0.0 && dx > 0.0)
    });
    let xs = p.map(|q| q[0]);
    let ys = p.map(|q| q[1]);
    Some(ScreenTri {
        face,
        inv_z: order.map(|o| 1.0 / pts[o].2),
        p,
        order,
        area,
        top_left,
        bbox: [
            xs.iter().cloned().fold(f64::INFINITY, f64::min),
            ys.iter().cloned().fold(f64::INFINITY, f64::min),
            xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        ],
    })
}

/// Rasterizes triangles given as `(x, y, depth)` in pixel coordinates, with
/// pixel centres at half-integers. Nearest depth wins; ties go to the lower face index.
pub fn rasterize_screen(points: &[(f64, f64, f64)], faces: &[[u32; 3]], width: usize, height: usize) -> GBuffer {
    let tris: Vec<ScreenTri> = faces
        .iter()
        .enumerate()
        .filter_map(|(f, idx)| setup(f as u32, idx.map(|i| points[i as usize])))
        .collect();
    let tiles_x = width.div_ceil(TILE);
    let tiles_y = height.div_ceil(TILE);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (t, tri) in tris.iter().enumerate() {
        let [x0, y0, x1, y1] = tri.bbox;
        if x1 < 0.0 || y1 < 0.0 || x0 > width as f64 || y0 > height as f64 {
            continue;
        }
        let px0 = ((x0 - 0.5).ceil().max(0.0)) as usize;
        let py0 = ((y0 - 0.5).ceil().max(0.0)) as usize;
        let px1 = ((x1 - 0.5).floor().min(width as f64 - 1.0)).max(-1.0);
        let py1 = ((y1 - 0.5).floor().min(height as f64 - 1.0)).max(-1.0);
        if px1 < px0 as f64 || py1 < py0 as f64 {
            continue;
        }
        for ty in py0 / TILE..=(py1 as usize) / TILE {
            for tx in px0 / TILE..=(px1 as usize) / TILE {
                bins[ty * tiles_x + tx].push(t as u32);
            }
        }
    }

    type Hit = (usize, i32, [f64; 3], f64);
    let tiles: Vec<Vec<Hit>> = (0..tiles_x * tiles_y)
        .into_par_iter()
        .map(|tile| {
            let (tx, ty) = (tile % tiles_x, tile / tiles_x);
            let mut hits = Vec::new();
            if bins[tile].is_empty() {
                return hits;
            }
            for y in ty * TILE..((ty + 1) * TILE).min(height) {
                for x in tx * TILE..((tx + 1) * TILE).min(width) {
                    let p = [x as f64 + 0.5, y as f64 + 0.5];
                    let mut best: Option<(i32, [f64; 3], f64)> = None;
                    for &t in &bins[tile] {
                        let tri = &tris[t as usize];
                        if p[0] < tri.bbox[0] || p[0] > tri.bbox[2] || p[1] < tri.bbox[1] || p[1] > tri.bbox[3] {
                            continue;
                        }
                        let mut e = [0.0; 3];
                        let mut inside = true;
                        for k in 0..3 {
                            e[k] = edge(&tri.p[(k + 1) % 3], &tri.p[(k + 2) % 3], &p);
                            if e[k] < 0.0 || (e[k] == 0.0 && !tri.top_left[k]) {
                                inside = false;
                                break;
                            }
                        }
                        if !inside {
                            continue;
                        }
                        let w = [0, 1, 2].map(|k| e[k] / tri.area * tri.inv_z[k]);
                        let s = w[0] + w[1] + w[2];
                        let depth = 1.0 / s;
                        if best.is_none_or(|b| depth < b.2) {
                            let mut bary = [0.0; 3];
                            for k in 0..3 {
                                bary[tri.order[k]] = w[k] / s;
                            }
                            best = Some((tri.face as i32, bary, depth));
                        }
                    }
                    if let Some((f, b, d)) = best {
                        hits.push((y * width + x, f, b, d));
                    }
                }
            }
            hits
        })
        .collect();

    let mut g = GBuffer::empty(width, height);
    for (i, f, b, d) in tiles.into_iter().flatten() {
        g.face[i] = f;
        g.bary[i] = b;
        g.depth[i] = d;
    }
    g
}

/// Rasterizes world-space vertices seen through `camera`.
pub fn rasterize(vertices: &[Vec3], faces: &[[u32; 3]], camera: &Camera) -> GBuffer {
    let pts: Vec<(f64, f64, f64)> = vertices.par_iter().map(|v| camera.project(v)).collect();
    rasterize_screen(&pts, faces, camera.width, camera.height)
}

pub fn rasterize_mesh(mesh: &TriMesh, camera: &Camera) -> GBuffer {
    rasterize(&mesh.vertices, &mesh.faces, camera)
}

/// Background color of every pixel ray.
pub fn background_image(bg: &Background, camera: &Camera) -> Image {
    let mut img = Image::new(camera.width, camera.height, 3);
    let rows: Vec<Vec<[f64; 3]>> = (0..camera.height)
        .into_par_iter()
        .map(|y| (0..camera.width).map(|x| bg.color(&camera.ray(x, y).1)).collect())
        .collect();
    for (y, row) in rows.into_iter().enumerate() {
        for (x, c) in row.into_iter().enumerate() {
            img.pixel_mut(x, y).copy_from_slice(&c);
        }
    }
    img
}

/// Accumulates background gradients for `∂L/∂rgb` on uncovered pixels.
pub fn background_backward(bg: &Background, camera: &Camera, gbuf: &GBuffer, d_rgb: &Image, grad: &mut Background) {
    for y in 0..camera.height {
        for x in 0..camera.width {
            let i = y * camera.width + x;
            let g = d_rgb.pixel(x, y);
            if gbuf.face[i] >= 0 || g.iter().all(|v| *v == 0.0) {
                continue;
            }
            bg.backward(&camera.ray(x, y).1, [g[0], g[1], g[2]], grad);
        }
    }
}

/// Colors covered pixels by looking up `color_net` at the interpolated
/// canonical coordinate, and composites over `background`.
pub fn shade(gbuf: &GBuffer, faces: &[[u32; 3]], canonical: &[Vec3], color_net: &CoarseField, background: &Image) -> Image {
    let coords = gbuf.interpolate(faces, canonical);
    let colors: Vec<Option<[f64; 3]>> = coords.par_iter().map(|c| c.map(|x| color_net.color(&x))).collect();
    let mut out = background.clone();
    for (i, c) in colors.into_iter().enumerate() {
        if let Some(c) = c {
            out.data[i * 3..i * 3 + 3].copy_from_slice(&c);
        }
    }
    out
}

/// Back-propagates `∂L/∂rgb` of [`shade`] into `grad` (color-net parameters)
/// and returns per-vertex gradients of the canonical coordinates.
pub fn shade_backward(
    gbuf: &GBuffer,
    faces: &[[u32; 3]],
    canonical: &[Vec3],
    color_net: &CoarseField,
    d_rgb: &Image,
    grad: &mut CoarseField,
) -> Vec<Vec3> {
    let coords = gbuf.interpolate(faces, canonical);
    let mut dverts = vec![Vec3::zeros(); canonical.len()];
    let mut trace = FieldTrace::default();
    for (i, c) in coords.iter().enumerate() {
        let Some(x) = c else { continue };
        let g = &d_rgb.data[i * 3..i * 3 + 3];
        if g.iter().all(|v| *v == 0.0) {
            continue;
        }
        color_net.forward(x, f64::INFINITY, &mut trace);
        let dx = color_net.backward_full(x, &trace, 0.0, [g[0], g[1], g[2]], grad, true);
        let f = faces[gbuf.face[i] as usize];
        for k in 0..3 {
            dverts[f[k] as usize] += dx * gbuf.bary[i][k];
        }
    }
    dverts
}

/// Rasterizes and shades in one call.
pub fn render_mesh(
    vertices: &[Vec3],
    faces: &[[u32; 3]],
    canonical: &[Vec3],
    color_net: &CoarseField,
    bg: &Background,
    camera: &Camera,
) -> (Image, GBuffer) {
    let gbuf = rasterize(vertices, faces, camera);
    let background = background_image(bg, camera);
    (shade(&gbuf, faces, canonical, color_net, &background), gbuf)
}
