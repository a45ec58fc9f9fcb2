use rayon::prelude::*;

use super::{CoarseField, SdfPrior};
use crate::math::{mix_seed, unit_from_bits, Aabb, Vec3};

/// Cells whose centre lies this close to the prior surface are never pruned.
pub const SURFACE_GUARD: f64 = 0.05;
const DECAY: f64 = 0.95;
/// Fraction of the surface density `1/(2α)` a cell must reach to stay occupied.
const THRESHOLD_FRACTION: f64 = 0.01;

/// Boolean lattice of non-empty space with a decaying density cache.
#[derive(Clone, Debug)]
pub struct OccupancyGrid {
    pub resolution: usize,
    pub bounds: Aabb,
    pub threshold: f64,
    pub cache: Vec<f64>,
    pub occupied: Vec<bool>,
    guard: Vec<bool>,
    cell_sdf: Vec<f64>,
}

impl OccupancyGrid {
    /// Every cell starts occupied until the first update.
    pub fn new(field: &CoarseField, prior: &dyn SdfPrior, resolution: usize) -> Self {
        let bounds = *field.bounds();
        let n = resolution;
        let mut grid = Self {
            resolution,
            bounds,
            threshold: THRESHOLD_FRACTION * field.iso_level(),
            cache: vec![0.0; n * n * n],
            occupied: vec![true; n * n * n],
            guard: Vec::new(),
            cell_sdf: Vec::new(),
        };
        grid.cell_sdf = (0..n * n * n)
            .into_par_iter()
            .map(|c| prior.sdf(&grid.cell_point(c, [0.5; 3])))
            .collect();
        grid.guard = grid.cell_sdf.iter().map(|d| d.abs() <= SURFACE_GUARD).collect();
        grid
    }

    pub fn cell_size(&self) -> Vec3 {
        self.bounds.extent() / self.resolution as f64
    }

    fn cell_point(&self, cell: usize, frac: [f64; 3]) -> Vec3 {
        let n = self.resolution;
        let idx = [cell % n, (cell / n) % n, cell / (n * n)];
        let h = self.cell_size();
        Vec3::from_fn(|a, _| self.bounds.min[a] + (idx[a] as f64 + frac[a]) * h[a])
    }

    pub fn cell_of(&self, x: &Vec3) -> Option<usize> {
        if !self.bounds.contains(x) {
            return None;
        }
        let n = self.resolution;
        let h = self.cell_size();
        let mut idx = [0usize; 3];
        for a in 0..3 {
            idx[a] = (((x[a] - self.bounds.min[a]) / h[a]) as usize).min(n - 1);
        }
        Some(idx[0] + n * (idx[1] + n * idx[2]))
    }

    pub fn is_occupied(&self, x: &Vec3) -> bool {
        self.cell_of(x).is_some_and(|c| self.occupied[c])
    }

    /// Decays the cache, folds in the density at one jittered point per cell,
    /// and re-derives occupancy. The jitter is a pure function of `(seed, step, cell)`.
    pub fn update(&mut self, field: &CoarseField, prior: &dyn SdfPrior, step: u64, seed: u64) {
        let salt = mix_seed(seed, step);
        let n3 = self.cache.len();
        let fresh: Vec<f64> = (0..n3)
            .into_par_iter()
            .map(|c| {
                let r = mix_seed(salt, c as u64);
                let frac = [
                    unit_from_bits(r),
                    unit_from_bits(mix_seed(r, 1)),
                    unit_from_bits(mix_seed(r, 2)),
                ];
                let x = self.cell_point(c, frac);
                let d = if self.cell_sdf[c].abs() > 2.0 * self.cell_size().norm() + 0.2 {
                    // Far from the surface the prior term underflows anyway.
                    self.cell_sdf[c]
                } else {
                    prior.sdf(&x)
                };
                field.sample_with_sdf(&x, d).sigma
            })
            .collect();
        for c in 0..n3 {
            self.cache[c] = (DECAY * self.cache[c]).max(fresh[c]);
            self.occupied[c] = self.cache[c] > self.threshold || self.guard[c];
        }
    }

    /// Bounds of the cells kept by density alone (the surface guard is ignored);
    /// empty if there are none.
    pub fn occupied_bounds(&self) -> Aabb {
        let h = self.cell_size();
        let mut b = Aabb::empty();
        for (c, v) in self.cache.iter().enumerate() {
            if *v > self.threshold {
                let lo = self.cell_point(c, [0.0; 3]);
                b.grow(&lo);
                b.grow(&(lo + h));
            }
        }
        b
    }

    pub fn occupied_centers(&self) -> Vec<Vec3> {
        (0..self.occupied.len())
            .filter(|&c| self.occupied[c])
            .map(|c| self.cell_point(c, [0.5; 3]))
            .collect()
    }

    pub fn occupied_fraction(&self) -> f64 {
        self.occupied.iter().filter(|o| **o).count() as f64 / self.occupied.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coarse_field::{FieldConfig, GridConfig, NoPrior, SphereSdf};

    fn field() -> CoarseField {
        let cfg = FieldConfig {
            grid: GridConfig {
                levels: 2,
                log2_table_size: 10,
                ..GridConfig::default()
            },
            hidden: 8,
            alpha: 0.001,
        };
        CoarseField::new(
            &cfg,
            Aabb {
                min: Vec3::repeat(-1.0),
                max: Vec3::repeat(1.0),
            },
            0,
        )
    }

    #[test]
    fn empty_field_without_prior_prunes_everything() {
        let f = field();
        let mut g = OccupancyGrid::new(&f, &NoPrior, 16);
        for step in 0..200 {
            g.update(&f, &NoPrior, step, 1);
        }
        assert_eq!(g.occupied_fraction(), 0.0);
    }

    #[test]
    fn surface_cells_stay_occupied() {
        let f = field();
        let prior = SphereSdf {
            center: Vec3::zeros(),
            radius: 0.5,
        };
        // Cells of 0.05 m: every cell the surface passes through has its centre within the guard.
        let mut g = OccupancyGrid::new(&f, &prior, 40);
        for step in 0..3 {
            g.update(&f, &prior, step, 1);
        }
        for k in 0..100 {
            let a = k as f64 * 0.7;
            let p = Vec3::new(a.cos() * (0.3 * a).sin(), (0.3 * a).cos(), a.sin() * (0.3 * a).sin()) * 0.5;
            assert!(g.is_occupied(&p));
        }
        assert!(g.is_occupied(&Vec3::zeros()));
        assert!(!g.is_occupied(&Vec3::new(0.95, 0.95, 0.95)));
    }

    #[test]
    fn deterministic_updates() {
        let f = field();
        let prior = SphereSdf {
            center: Vec3::zeros(),
            radius: 0.5,
        };
        let mut a = OccupancyGrid::new(&f, &prior, 12);
        let mut b = a.clone();
        a.update(&f, &prior, 3, 9);
        b.update(&f, &prior, 3, 9);
        assert_eq!(a.cache, b.cache);
    }
}
