use std::collections::HashMap;

use super::{edge_key, TriMesh};
use crate::math::{Aabb, Vec3};

const LEAF_SIZE: usize = 4;

#[derive(Clone, Debug)]
struct Node {
    bounds: Aabb,
    /// Leaf: `start..start + count` into `order`. Inner: children at `start`, `start + 1`.
    start: u32,
    count: u32,
}

/// Which part of the closest triangle the closest point lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feature {
    Face,
    /// Edge `k` runs from corner `k` to corner `(k + 1) % 3`.
    Edge(u8),
    Vertex(u8),
}

#[derive(Clone, Copy, Debug)]
pub struct ClosestHit {
    pub point: Vec3,
    pub face: usize,
    pub distance_squared: f64,
    pub feature: Feature,
}

/// Closest-point and signed-distance queries against a closed triangle mesh.
/// Signs come from angle-weighted pseudo-normals of the closest feature.
#[derive(Clone, Debug)]
pub struct MeshSdf {
    mesh: TriMesh,
    nodes: Vec<Node>,
    order: Vec<u32>,
    face_normals: Vec<Vec3>,
    edge_normals: Vec<[Vec3; 3]>,
    vertex_normals: Vec<Vec3>,
}

impl MeshSdf {
    pub fn new(mesh: TriMesh) -> Self {
        let nf = mesh.faces.len();
        let face_normals: Vec<Vec3> = (0..nf)
            .map(|f| mesh.face_cross(f).try_normalize(0.0).unwrap_or_else(Vec3::zeros))
            .collect();

        let mut vertex_normals = vec![Vec3::zeros(); mesh.vertices.len()];
        let mut edge_sum: HashMap<(u32, u32), Vec3> = HashMap::with_capacity(nf * 3 / 2);
        for (fi, f) in mesh.faces.iter().enumerate() {
            let p = mesh.corners(fi);
            for k in 0..3 {
                let e1 = p[(k + 1) % 3] - p[k];
                let e2 = p[(k + 2) % 3] - p[k];
                let denom = e1.norm() * e2.norm();
                if denom > 0.0 {
                    let angle = (e1.dot(&e2) / denom).clamp(-1.0, 1.0).acos();
                    vertex_normals[f[k] as usize] += face_normals[fi] * angle;
                }
                *edge_sum.entry(edge_key(f[k], f[(k + 1) % 3])).or_insert_with(Vec3::zeros) +=
                    face_normals[fi];
            }
        }
        let edge_normals = mesh
            .faces
            .iter()
            .map(|f| [0, 1, 2].map(|k| edge_sum[&edge_key(f[k], f[(k + 1) % 3])]))
            .collect();

        let mut sdf = Self {
            nodes: Vec::new(),
            order: (0..nf as u32).collect(),
            face_normals,
            edge_normals,
            vertex_normals,
            mesh,
        };
        sdf.build();
        sdf
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn into_mesh(self) -> TriMesh {
        self.mesh
    }

    fn face_bounds(&self, f: u32) -> Aabb {
        Aabb::from_points(&self.mesh.corners(f as usize))
    }

    fn build(&mut self) {
        if self.order.is_empty() {
            return;
        }
        let centroids: Vec<Vec3> = (0..self.mesh.faces.len())
            .map(|f| self.mesh.corners(f).iter().sum::<Vec3>() / 3.0)
            .collect();
        self.nodes.push(Node {
            bounds: Aabb::empty(),
            start: 0,
            count: self.order.len() as u32,
        });
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let (start, count) = (self.nodes[ni].start as usize, self.nodes[ni].count as usize);
            let range = start..start + count;
            let mut bounds = Aabb::empty();
            let mut cbounds = Aabb::empty();
            for &f in &self.order[range.clone()] {
                bounds = bounds.union(&self.face_bounds(f));
                cbounds.grow(&centroids[f as usize]);
            }
            self.nodes[ni].bounds = bounds;
            if count <= LEAF_SIZE {
                continue;
            }
            let ext = cbounds.extent();
            let axis = if ext.x >= ext.y && ext.x >= ext.z {
                0
            } else if ext.y >= ext.z {
                1
            } else {
                2
            };
            let mid = count / 2;
            self.order[range].select_nth_unstable_by(mid, |&a, &b| {
                centroids[a as usize][axis]
                    .total_cmp(&centroids[b as usize][axis])
                    .then(a.cmp(&b))
            });
            let left = self.nodes.len();
            self.nodes.push(Node {
                bounds: Aabb::empty(),
                start: start as u32,
                count: mid as u32,
            });
            self.nodes.push(Node {
                bounds: Aabb::empty(),
                start: (start + mid) as u32,
                count: (count - mid) as u32,
            });
            self.nodes[ni].start = left as u32;
            self.nodes[ni].count = 0;
            stack.push(left);
            stack.push(left + 1);
        }
    }

    /// Closest point on the mesh. Ties resolve to the lowest face index.
    pub fn closest(&self, p: &Vec3) -> Option<ClosestHit> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<ClosestHit> = None;
        let mut best_d2 = f64::INFINITY;
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if node.bounds.distance_squared(p) > best_d2 {
                continue;
            }
            if node.count > 0 {
                for &f in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    let [a, b, c] = self.mesh.corners(f as usize);
                    let (q, feature) = closest_on_triangle(p, &a, &b, &c);
                    let d2 = (p - q).norm_squared();
                    let better = match &best {
                        None => true,
                        Some(h) => d2 < best_d2 || (d2 == best_d2 && (f as usize) < h.face),
                    };
                    if better {
                        best_d2 = d2;
                        best = Some(ClosestHit {
                            point: q,
                            face: f as usize,
                            distance_squared: d2,
                            feature,
                        });
                    }
                }
            } else {
                let (l, r) = (node.start, node.start + 1);
                let dl = self.nodes[l as usize].bounds.distance_squared(p);
                let dr = self.nodes[r as usize].bounds.distance_squared(p);
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best
    }

    fn pseudo_normal(&self, hit: &ClosestHit) -> Vec3 {
        let f = &self.mesh.faces[hit.face];
        match hit.feature {
            Feature::Face => self.face_normals[hit.face],
            Feature::Edge(k) => self.edge_normals[hit.face][k as usize],
            Feature::Vertex(k) => self.vertex_normals[f[k as usize] as usize],
        }
    }

    /// Signed distance (negative inside) and the unit gradient direction.
    pub fn signed_distance_and_gradient(&self, p: &Vec3) -> (f64, Vec3) {
        let Some(hit) = self.closest(p) else {
            return (f64::INFINITY, Vec3::zeros());
        };
        let n = self.pseudo_normal(&hit);
        let diff = p - hit.point;
        let d = hit.distance_squared.sqrt();
        let inside = diff.dot(&n) < 0.0;
        let signed = if inside { -d } else { d };
        let grad = if d > 0.0 {
            let g = diff / d;
            if inside {
                -g
            } else {
                g
            }
        } else {
            n.try_normalize(0.0).unwrap_or_else(Vec3::zeros)
        };
        (signed, grad)
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.signed_distance_and_gradient(p).0
    }
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision Detection §5.1.5).
pub(crate) fn closest_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, Feature) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, Feature::Vertex(0));
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, Feature::Vertex(1));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, Feature::Edge(0));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, Feature::Vertex(2));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, Feature::Edge(2));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, Feature::Edge(1));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, Feature::Face)
}
