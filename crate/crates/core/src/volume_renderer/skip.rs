use crate::body_model::{PointTree, PosedBody};
use crate::math::{linear_part, transform_point, Aabb, Vec3};

/// Extra padding, in posed cells, around every forward-mapped occupied region.
/// Covers points whose nearest posed vertex has other weights than the
/// canonical neighbour used for the forward map.
const PAD_CELLS: f64 = 2.0;

/// Posed-space image of the canonical occupancy, used to skip the
/// nearest-vertex pull-back for samples that cannot land in occupied space.
#[derive(Clone, Debug)]
pub struct PosedSkip {
    bounds: Aabb,
    dims: [usize; 3],
    cell: f64,
    occupied: Vec<bool>,
}

impl PosedSkip {
    /// `centers` are canonical occupied cell centres, each covering a ball of `radius`.
    pub fn new(posed: &PosedBody, bounds: &Aabb, centers: &[Vec3], radius: f64, cell: f64) -> Self {
        let e = bounds.extent();
        let dims = [0, 1, 2].map(|a| ((e[a] / cell).ceil() as usize).max(1));
        let mut skip = Self {
            bounds: *bounds,
            dims,
            cell,
            occupied: vec![false; dims[0] * dims[1] * dims[2]],
        };
        let model = posed.model;
        let tree = PointTree::new(&model.vertices);
        for c in centers {
            let Some((v, _)) = tree.nearest(&model.vertices, c) else { break };
            let g = posed.transforms.blend(&model.skin_weights[v]);
            // Frobenius norm bounds the stretch of the blended map
            let r = radius * linear_part(&g).norm() + PAD_CELLS * cell;
            skip.mark(&transform_point(&g, c), r);
        }
        skip
    }

    fn index(&self, p: &Vec3, a: usize) -> isize {
        ((p[a] - self.bounds.min[a]) / self.cell).floor() as isize
    }

    fn mark(&mut self, p: &Vec3, r: f64) {
        let lo = p - Vec3::repeat(r);
        let hi = p + Vec3::repeat(r);
        let range = |a: usize| {
            let d = self.dims[a] as isize;
            (self.index(&lo, a).max(0), self.index(&hi, a).min(d - 1))
        };
        let (x, y, z) = (range(0), range(1), range(2));
        for k in z.0..=z.1 {
            for j in y.0..=y.1 {
                for i in x.0..=x.1 {
                    let c = i as usize + self.dims[0] * (j as usize + self.dims[1] * k as usize);
                    self.occupied[c] = true;
                }
            }
        }
    }

    pub fn may_be_occupied(&self, p: &Vec3) -> bool {
        let mut c = 0;
        let mut stride = 1;
        for a in 0..3 {
            let i = self.index(p, a);
            if i < 0 || i >= self.dims[a] as isize {
                return false;
            }
            c += i as usize * stride;
            stride *= self.dims[a];
        }
        self.occupied[c]
    }

    pub fn occupied_fraction(&self) -> f64 {
        self.occupied.iter().filter(|o| **o).count() as f64 / self.occupied.len() as f64
    }
}
