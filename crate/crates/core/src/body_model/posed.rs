use super::{bone_transforms, BodyModel, BoneTransforms, Pose};
use crate::error::{Error, Result};
use crate::math::{linear_part, transform_point, Aabb, Vec3};

/// Below this |det| the blended skinning transform is treated as singular.
const SINGULAR_DET: f64 = 1e-12;

/// Leaf size of the k-d tree.
const LEAF: usize = 8;

/// Static k-d tree over a point set for exact nearest-point queries.
/// Ties are broken by the lowest point index.
#[derive(Clone, Debug)]
pub struct PointTree {
    /// Point indices, permuted so every node owns a contiguous range.
    order: Vec<u32>,
    nodes: Vec<Node>,
}

#[derive(Clone, Copy, Debug)]
struct Node {
    start: u32,
    end: u32,
    /// Split axis and value; `children[0] == u32::MAX` marks a leaf.
    axis: u8,
    split: f64,
    children: [u32; 2],
}

impl PointTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut tree = Self {
            order: (0..points.len() as u32).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(points, 0, points.len());
        }
        tree
    }

    fn build(&mut self, points: &[Vec3], start: usize, end: usize) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            start: start as u32,
            end: end as u32,
            axis: 0,
            split: 0.0,
            children: [u32::MAX; 2],
        });
        if end - start <= LEAF {
            return id;
        }
        let b = Aabb::from_points(&self.order[start..end].iter().map(|&i| points[i as usize]).collect::<Vec<_>>());
        let e = b.extent();
        let axis = if e.x >= e.y && e.x >= e.z { 0 } else if e.y >= e.z { 1 } else { 2 };
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a as usize][axis].total_cmp(&points[b as usize][axis]).then(a.cmp(&b))
        });
        let split = points[self.order[mid] as usize][axis];
        let left = self.build(points, start, mid);
        let right = self.build(points, mid, end);
        let n = &mut self.nodes[id as usize];
        n.axis = axis as u8;
        n.split = split;
        n.children = [left, right];
        id
    }

    /// Index of the nearest point and its squared distance.
    pub fn nearest(&self, points: &[Vec3], p: &Vec3) -> Option<(usize, f64)> {
        self.nearest_from(points, p, None)
    }

    /// Like [`Self::nearest`], seeded with a candidate (e.g. the previous sample's
    /// answer) whose distance prunes the search. The result does not depend on the hint.
    pub fn nearest_from(&self, points: &[Vec3], p: &Vec3, hint: Option<usize>) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = hint.map_or((usize::MAX, f64::INFINITY), |h| (h, (points[h] - p).norm_squared()));
        self.search(points, 0, p, &mut best);
        Some(best)
    }

    fn search(&self, points: &[Vec3], node: u32, p: &Vec3, best: &mut (usize, f64)) {
        let n = &self.nodes[node as usize];
        if n.children[0] == u32::MAX {
            for &i in &self.order[n.start as usize..n.end as usize] {
                let d2 = (points[i as usize] - p).norm_squared();
                if d2 < best.1 || (d2 == best.1 && (i as usize) < best.0) {
                    *best = (i as usize, d2);
                }
            }
            return;
        }
        let diff = p[n.axis as usize] - n.split;
        let (near, far) = if diff < 0.0 { (n.children[0], n.children[1]) } else { (n.children[1], n.children[0]) };
        self.search(points, near, p, best);
        // `<=` keeps equidistant points on the far side in play for the index tie-break
        if diff * diff <= best.1 {
            self.search(points, far, p, best);
        }
    }
}

/// Result of mapping a deformed-space point back to canonical space.
#[derive(Clone, Copy, Debug)]
pub struct InverseHit {
    pub canonical: Vec3,
    /// Nearest deformed body vertex whose skinning weights were used.
    pub vertex: usize,
}

/// A body in a fixed pose with a nearest-vertex index over its deformed vertices.
#[derive(Clone, Debug)]
pub struct PosedBody<'a> {
    pub model: &'a BodyModel,
    pub pose: Pose,
    pub transforms: BoneTransforms,
    pub vertices: Vec<Vec3>,
    grid: PointTree,
}

impl<'a> PosedBody<'a> {
    pub fn new(model: &'a BodyModel, pose: &Pose) -> Result<Self> {
        pose.validate()?;
        let transforms = bone_transforms(model, pose);
        let vertices: Vec<Vec3> = model
            .vertices
            .iter()
            .zip(&model.skin_weights)
            .map(|(v, w)| transform_point(&transforms.blend(w), v))
            .collect();
        let grid = PointTree::new(&vertices);
        Ok(Self {
            model,
            pose: pose.clone(),
            transforms,
            vertices,
            grid,
        })
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    pub fn nearest_vertex(&self, x: &Vec3) -> usize {
        self.grid
            .nearest(&self.vertices, x)
            .map(|(i, _)| i)
            .expect("body has vertices")
    }

    /// `x_c = G⁻¹·x_d` with `G` blended from the nearest deformed vertex's weights.
    pub fn inverse_deform(&self, x_d: &Vec3) -> Result<InverseHit> {
        self.inverse_deform_from(x_d, None)
    }

    /// [`Self::inverse_deform`] with a nearby vertex as a search hint.
    pub fn inverse_deform_from(&self, x_d: &Vec3, hint: Option<usize>) -> Result<InverseHit> {
        let vertex = self
            .grid
            .nearest_from(&self.vertices, x_d, hint)
            .map(|(i, _)| i)
            .expect("body has vertices");
        let g = self.transforms.blend(&self.model.skin_weights[vertex]);
        let lin = linear_part(&g);
        let det = lin.determinant();
        if det.abs() < SINGULAR_DET || !det.is_finite() {
            return Err(Error::DegeneratePose { det });
        }
        let inv = lin.try_inverse().ok_or(Error::DegeneratePose { det })?;
        let t = Vec3::new(g[(0, 3)], g[(1, 3)], g[(2, 3)]);
        Ok(InverseHit {
            canonical: inv * (x_d - t),
            vertex,
        })
    }
}
