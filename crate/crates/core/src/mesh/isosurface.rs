//! Marching tetrahedra over arbitrary tet lists and over regular lattices
//! split into six tetrahedra per cube.
//!
//! A surface vertex is created on every tet edge whose endpoint values have
//! opposite signs, at `(d_b·p_a − d_a·p_b) / (d_b − d_a)`. Vertices are shared
//! between tets through their lattice edge key, so extraction from a conforming
//! tet mesh is watertight.

use std::collections::HashMap;

use rayon::prelude::*;

use super::{edge_key, TriMesh};
use crate::math::{Aabb, Vec3};

/// Values exactly equal to zero are nudged to this before the sign test.
pub const ZERO_NUDGE: f64 = 1e-10;

const CHUNK: usize = 8192;

/// A regular lattice of cubes, each split into six positively oriented tets
/// sharing the cube's main diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct TetLattice {
    pub origin: Vec3,
    pub cell: f64,
    /// Cube counts per axis.
    pub dims: [usize; 3],
}

/// Kuhn split of the unit cube; corner `b` sits at `(b&1, b>>1&1, b>>2&1)`.
fn kuhn_tets() -> [[usize; 4]; 6] {
    let perms = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let corner = |b: usize| Vec3::new((b & 1) as f64, ((b >> 1) & 1) as f64, ((b >> 2) & 1) as f64);
    let mut out = [[0; 4]; 6];
    for (k, p) in perms.iter().enumerate() {
        let v1 = 1 << p[0];
        let v2 = v1 | (1 << p[1]);
        let mut tet = [0, v1, v2, 7];
        let (a, b, c, d) = (corner(tet[0]), corner(tet[1]), corner(tet[2]), corner(tet[3]));
        if (b - a).cross(&(c - a)).dot(&(d - a)) < 0.0 {
            tet.swap(1, 2);
        }
        out[k] = tet;
    }
    out
}

impl TetLattice {
    /// Smallest lattice with cubic cells of size `cell` covering `bounds`.
    pub fn covering(bounds: &Aabb, cell: f64) -> Self {
        let e = bounds.extent();
        let dims = [0, 1, 2].map(|i| ((e[i] / cell).ceil() as usize).max(1));
        let size = Vec3::new(dims[0] as f64, dims[1] as f64, dims[2] as f64) * cell;
        let origin = bounds.center() - size * 0.5;
        Self { origin, cell, dims }
    }

    /// Lattice whose longest axis has `resolution` cubes.
    pub fn with_resolution(bounds: &Aabb, resolution: usize) -> Self {
        let e = bounds.extent();
        let cell = e.x.max(e.y).max(e.z) / resolution as f64;
        Self::covering(bounds, cell)
    }

    pub fn bounds(&self) -> Aabb {
        Aabb {
            min: self.origin,
            max: self.origin
                + Vec3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64) * self.cell,
        }
    }

    pub fn vertex_dims(&self) -> [usize; 3] {
        self.dims.map(|d| d + 1)
    }

    pub fn vertex_count(&self) -> usize {
        let [a, b, c] = self.vertex_dims();
        a * b * c
    }

    pub fn cube_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn tet_count(&self) -> usize {
        self.cube_count() * 6
    }

    #[inline]
    pub fn vertex_index(&self, i: usize, j: usize, k: usize) -> usize {
        let [nx, ny, _] = self.vertex_dims();
        i + nx * (j + ny * k)
    }

    #[inline]
    pub fn vertex_position(&self, idx: usize) -> Vec3 {
        let [nx, ny, _] = self.vertex_dims();
        let i = idx % nx;
        let j = (idx / nx) % ny;
        let k = idx / (nx * ny);
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.cell
    }

    pub fn positions(&self) -> Vec<Vec3> {
        (0..self.vertex_count()).map(|i| self.vertex_position(i)).collect()
    }

    /// Vertex indices of tet `t` (cube-major, six per cube).
    #[inline]
    pub fn tet(&self, t: usize, table: &[[usize; 4]; 6]) -> [u32; 4] {
        let cube = t / 6;
        let [dx, dy, _] = self.dims;
        let i = cube % dx;
        let j = (cube / dx) % dy;
        let k = cube / (dx * dy);
        table[t % 6].map(|b| self.vertex_index(i + (b & 1), j + ((b >> 1) & 1), k + ((b >> 2) & 1)) as u32)
    }

    pub fn tets(&self) -> Vec<[u32; 4]> {
        let table = kuhn_tets();
        (0..self.tet_count()).map(|t| self.tet(t, &table)).collect()
    }

    /// Extracts the zero level set of per-vertex `values`.
    pub fn march(&self, positions: &[Vec3], values: &[f64]) -> Extraction {
        let table = kuhn_tets();
        march_with(positions, values, self.tet_count(), |t| self.tet(t, &table))
    }
}

/// Surface vertex source: lattice edge `(a, b)` with `a < b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EdgeSource {
    pub a: u32,
    pub b: u32,
}

#[derive(Clone, Debug, Default)]
pub struct Extraction {
    pub mesh: TriMesh,
    /// Per output vertex, the tet-mesh edge it was interpolated on.
    pub sources: Vec<EdgeSource>,
    /// Per output face, the tet it came from.
    pub face_tets: Vec<u32>,
}

#[inline]
fn nudged(v: f64) -> f64 {
    if v == 0.0 {
        ZERO_NUDGE
    } else {
        v
    }
}

/// Zero-crossing position on edge `(a, b)`.
#[inline]
pub fn crossing(pa: &Vec3, pb: &Vec3, da: f64, db: f64) -> Vec3 {
    (pa * db - pb * da) / (db - da)
}

/// Marching tetrahedra over an explicit tet list.
pub fn march_tets(positions: &[Vec3], values: &[f64], tets: &[[u32; 4]]) -> Extraction {
    march_with(positions, values, tets.len(), |t| tets[t])
}

type TriKeys = (u32, [(u32, u32); 3]);

fn march_with<F>(positions: &[Vec3], values: &[f64], tet_count: usize, tet: F) -> Extraction
where
    F: Fn(usize) -> [u32; 4] + Sync,
{
    let chunks: Vec<Vec<TriKeys>> = (0..tet_count.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut out = Vec::new();
            for t in c * CHUNK..((c + 1) * CHUNK).min(tet_count) {
                march_one(positions, values, t as u32, tet(t), &mut out);
            }
            out
        })
        .collect();

    let mut index: HashMap<(u32, u32), u32> = HashMap::new();
    let mut ex = Extraction::default();
    for (t, keys) in chunks.into_iter().flatten() {
        let mut face = [0u32; 3];
        for (slot, key) in face.iter_mut().zip(keys) {
            *slot = *index.entry(key).or_insert_with(|| {
                let (a, b) = key;
                let (pa, pb) = (positions[a as usize], positions[b as usize]);
                let (da, db) = (nudged(values[a as usize]), nudged(values[b as usize]));
                ex.mesh.vertices.push(crossing(&pa, &pb, da, db));
                ex.sources.push(EdgeSource { a, b });
                (ex.mesh.vertices.len() - 1) as u32
            });
        }
        ex.mesh.faces.push(face);
        ex.face_tets.push(t);
    }
    ex
}

fn march_one(positions: &[Vec3], values: &[f64], t: u32, tet: [u32; 4], out: &mut Vec<TriKeys>) {
    let d = tet.map(|v| nudged(values[v as usize]));
    let mask = (0..4).fold(0u8, |m, i| m | (((d[i] < 0.0) as u8) << i));
    if mask == 0 || mask == 0b1111 {
        return;
    }
    let neg: Vec<usize> = (0..4).filter(|&i| mask & (1 << i) != 0).collect();
    let pos: Vec<usize> = (0..4).filter(|&i| mask & (1 << i) == 0).collect();
    let p = tet.map(|v| positions[v as usize]);
    let mean = |ids: &[usize]| ids.iter().map(|&i| p[i]).sum::<Vec3>() / ids.len() as f64;
    let outward = mean(&pos) - mean(&neg);
    let vertex = |i: usize, j: usize| crossing(&p[i], &p[j], d[i], d[j]);
    let key = |i: usize, j: usize| edge_key(tet[i], tet[j]);

    let mut emit = |tri: [(usize, usize); 3]| {
        let [a, b, c] = tri.map(|(i, j)| vertex(i, j));
        let mut keys = tri.map(|(i, j)| key(i, j));
        if (b - a).cross(&(c - a)).dot(&outward) < 0.0 {
            keys.swap(1, 2);
        }
        out.push((t, keys));
    };

    match neg.len() {
        1 | 3 => {
            let lone = if neg.len() == 1 { neg[0] } else { pos[0] };
            let others: Vec<usize> = (0..4).filter(|&i| i != lone).collect();
            emit([(lone, others[0]), (lone, others[1]), (lone, others[2])]);
        }
        _ => {
            let (a, b, c, e) = (neg[0], neg[1], pos[0], pos[1]);
            emit([(a, c), (a, e), (b, e)]);
            emit([(a, c), (b, e), (b, c)]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_lattice(n: usize) -> TetLattice {
        TetLattice::covering(
            &Aabb {
                min: Vec3::repeat(-1.0),
                max: Vec3::repeat(1.0),
            },
            2.0 / n as f64,
        )
    }

    #[test]
    fn kuhn_split_fills_the_cube_with_positive_tets() {
        let lat = unit_lattice(1);
        let pos = lat.positions();
        let vol: f64 = lat
            .tets()
            .iter()
            .map(|t| {
                let [a, b, c, d] = t.map(|i| pos[i as usize]);
                let v = (b - a).cross(&(c - a)).dot(&(d - a)) / 6.0;
                assert!(v > 0.0);
                v
            })
            .sum();
        assert!((vol - 8.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_sign_gives_nothing() {
        let lat = unit_lattice(4);
        let pos = lat.positions();
        let vals = vec![1.0; pos.len()];
        assert!(lat.march(&pos, &vals).mesh.is_empty());
    }

    #[test]
    fn sphere_is_watertight_and_outward() {
        let lat = unit_lattice(16);
        let pos = lat.positions();
        let vals: Vec<f64> = pos.iter().map(|p| p.norm() - 0.5).collect();
        let ex = lat.march(&pos, &vals);
        let m = &ex.mesh;
        assert!(m.edge_face_counts().values().all(|&c| c == 2));
        for f in 0..m.faces.len() {
            let [a, b, c] = m.corners(f);
            assert!(m.face_cross(f).dot(&((a + b + c) / 3.0)) > 0.0);
        }
    }

    #[test]
    fn single_tet_midpoints() {
        let positions = vec![
            Vec3::zeros(),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        let ex = march_tets(&positions, &[-1.0, 1.0, 1.0, 1.0], &[[0, 1, 2, 3]]);
        assert_eq!(ex.mesh.faces.len(), 1);
        for v in &ex.mesh.vertices {
            assert_eq!(v.norm(), 0.5);
        }
    }
}
