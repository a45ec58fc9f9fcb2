use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::{Aabb, Vec3};

const PRIMES: [u64; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub levels: usize,
    pub base_resolution: usize,
    pub growth: f64,
    pub features: usize,
    pub log2_table_size: u32,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            levels: 8,
            base_resolution: 16,
            growth: 1.5,
            features: 2,
            log2_table_size: 19,
        }
    }
}

/// Multi-resolution feature lattice. Coarse levels are stored densely; a level
/// whose lattice would overflow the table is indexed by a spatial hash.
#[derive(Clone, Debug, PartialEq)]
pub struct GridEncoder {
    pub config: GridConfig,
    pub bounds: Aabb,
    resolutions: Vec<usize>,
    offsets: Vec<usize>,
    sizes: Vec<usize>,
    hashed: Vec<bool>,
    /// `entries × features`, level after level.
    pub table: Vec<f64>,
}

/// The eight lattice corners around a point on one level.
#[derive(Clone, Copy, Debug)]
pub struct Corners {
    pub entry: [usize; 8],
    pub weight: [f64; 8],
}

impl GridEncoder {
    pub fn new<R: Rng>(config: GridConfig, bounds: Aabb, rng: &mut R) -> Self {
        let mut enc = Self::zeroed(config, bounds);
        for v in &mut enc.table {
            *v = rng.random_range(-1e-4..1e-4);
        }
        enc
    }

    pub fn zeroed(config: GridConfig, bounds: Aabb) -> Self {
        let cap = 1usize << config.log2_table_size;
        let mut resolutions = Vec::new();
        let mut offsets = Vec::new();
        let mut sizes = Vec::new();
        let mut hashed = Vec::new();
        let mut total = 0;
        for l in 0..config.levels {
            let n = ((config.base_resolution as f64) * config.growth.powi(l as i32)).floor() as usize;
            let n = n.max(1);
            let dense = (n + 1).pow(3);
            let size = dense.min(cap);
            resolutions.push(n);
            offsets.push(total);
            sizes.push(size);
            hashed.push(dense > cap);
            total += size;
        }
        Self {
            table: vec![0.0; total * config.features],
            config,
            bounds,
            resolutions,
            offsets,
            sizes,
            hashed,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.config.levels * self.config.features
    }

    pub fn resolution(&self, level: usize) -> usize {
        self.resolutions[level]
    }

    pub fn is_hashed(&self, level: usize) -> bool {
        self.hashed[level]
    }

    fn entry(&self, level: usize, i: usize, j: usize, k: usize) -> usize {
        let local = if self.hashed[level] {
            let h = (i as u64).wrapping_mul(PRIMES[0])
                ^ (j as u64).wrapping_mul(PRIMES[1])
                ^ (k as u64).wrapping_mul(PRIMES[2]);
            (h % self.sizes[level] as u64) as usize
        } else {
            let n1 = self.resolutions[level] + 1;
            i + n1 * (j + n1 * k)
        };
        self.offsets[level] + local
    }

    /// Corner entries and trilinear weights; points outside the bounds are clamped.
    pub fn corners(&self, level: usize, x: &Vec3) -> Corners {
        let n = self.resolutions[level];
        let ext = self.bounds.extent();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let u = ((x[a] - self.bounds.min[a]) / ext[a]).clamp(0.0, 1.0);
            let s = u * n as f64;
            let i = (s.floor() as usize).min(n - 1);
            base[a] = i;
            frac[a] = s - i as f64;
        }
        let mut c = Corners {
            entry: [0; 8],
            weight: [0.0; 8],
        };
        for (b, (e, w)) in c.entry.iter_mut().zip(c.weight.iter_mut()).enumerate() {
            let (bx, by, bz) = (b & 1, (b >> 1) & 1, (b >> 2) & 1);
            *e = self.entry(level, base[0] + bx, base[1] + by, base[2] + bz);
            let f = |bit: usize, t: f64| if bit == 1 { t } else { 1.0 - t };
            *w = f(bx, frac[0]) * f(by, frac[1]) * f(bz, frac[2]);
        }
        c
    }

    /// `∂(dout·encode(x))/∂x`. Zero along axes where `x` is clamped to the bounds.
    pub fn input_gradient(&self, x: &Vec3, dout: &[f64]) -> Vec3 {
        let nf = self.config.features;
        let ext = self.bounds.extent();
        let mut grad = Vec3::zeros();
        for l in 0..self.config.levels {
            let g = &dout[l * nf..(l + 1) * nf];
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            let n = self.resolutions[l];
            let mut base = [0usize; 3];
            let mut frac = [0.0; 3];
            let mut scale = [0.0; 3];
            for a in 0..3 {
                let u = (x[a] - self.bounds.min[a]) / ext[a];
                let inside = (0.0..=1.0).contains(&u);
                let s = u.clamp(0.0, 1.0) * n as f64;
                let i = (s.floor() as usize).min(n - 1);
                base[a] = i;
                frac[a] = s - i as f64;
                scale[a] = if inside { n as f64 / ext[a] } else { 0.0 };
            }
            for b in 0..8usize {
                let bits = [b & 1, (b >> 1) & 1, (b >> 2) & 1];
                let e = self.entry(l, base[0] + bits[0], base[1] + bits[1], base[2] + bits[2]);
                let proj: f64 = (0..nf).map(|f| self.table[e * nf + f] * g[f]).sum();
                if proj == 0.0 {
                    continue;
                }
                let f1 = |a: usize| if bits[a] == 1 { frac[a] } else { 1.0 - frac[a] };
                let df = |a: usize| if bits[a] == 1 { 1.0 } else { -1.0 };
                grad.x += proj * df(0) * f1(1) * f1(2) * scale[0];
                grad.y += proj * f1(0) * df(1) * f1(2) * scale[1];
                grad.z += proj * f1(0) * f1(1) * df(2) * scale[2];
            }
        }
        grad
    }

    pub fn encode(&self, x: &Vec3, out: &mut [f64]) {
        let nf = self.config.features;
        for l in 0..self.config.levels {
            let c = self.corners(l, x);
            let dst = &mut out[l * nf..(l + 1) * nf];
            dst.fill(0.0);
            for (e, w) in c.entry.iter().zip(&c.weight) {
                let src = &self.table[e * nf..(e + 1) * nf];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }

    /// Scatters `dout` (one value per output feature) into a table-shaped gradient.
    pub fn backward(&self, x: &Vec3, dout: &[f64], grad_table: &mut [f64]) {
        let nf = self.config.features;
        for l in 0..self.config.levels {
            let g = &dout[l * nf..(l + 1) * nf];
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            let c = self.corners(l, x);
            for (e, w) in c.entry.iter().zip(&c.weight) {
                for (f, gv) in g.iter().enumerate() {
                    grad_table[e * nf + f] += w * gv;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn unit_box() -> Aabb {
        Aabb {
            min: Vec3::zeros(),
            max: Vec3::repeat(1.0),
        }
    }

    fn encoder() -> GridEncoder {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let cfg = GridConfig {
            levels: 3,
            base_resolution: 4,
            growth: 2.0,
            features: 2,
            log2_table_size: 8,
        };
        let mut e = GridEncoder::new(cfg, unit_box(), &mut rng);
        for v in &mut e.table {
            *v = rng.random_range(-1.0..1.0);
        }
        e
    }

    #[test]
    fn weights_sum_to_one() {
        let e = encoder();
        for p in [Vec3::new(0.13, 0.77, 0.5), Vec3::new(0.999, 0.0, 0.31), Vec3::new(2.0, -1.0, 0.5)] {
            for l in 0..3 {
                let s: f64 = e.corners(l, &p).weight.iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn corner_returns_its_feature_and_midpoint_averages() {
        let e = encoder();
        assert!(!e.is_hashed(0) && e.is_hashed(2));
        let n = e.resolution(1) as f64;
        let (i, j, k) = (3usize, 5usize, 2usize);
        let corner = Vec3::new(i as f64 / n, j as f64 / n, k as f64 / n);
        let mut out = vec![0.0; e.output_dim()];
        e.encode(&corner, &mut out);
        let idx = e.entry(1, i, j, k);
        assert_eq!(&out[2..4], &e.table[idx * 2..idx * 2 + 2]);

        let mid = Vec3::new((i as f64 + 0.5) / n, j as f64 / n, k as f64 / n);
        e.encode(&mid, &mut out);
        let other = e.entry(1, i + 1, j, k);
        for f in 0..2 {
            let want = 0.5 * (e.table[idx * 2 + f] + e.table[other * 2 + f]);
            assert!((out[2 + f] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let e = encoder();
        let dout: Vec<f64> = (0..e.output_dim()).map(|i| (i as f64 * 1.3).cos()).collect();
        let f = |p: &Vec3| {
            let mut out = vec![0.0; e.output_dim()];
            e.encode(p, &mut out);
            out.iter().zip(&dout).map(|(a, b)| a * b).sum::<f64>()
        };
        let x = Vec3::new(0.311, 0.627, 0.934);
        let g = e.input_gradient(&x, &dout);
        let fd = crate::coarse_field::central_gradient(f, &x, 1e-7);
        assert!((g - fd).norm() < 1e-5 * (1.0 + g.norm()), "{g} vs {fd}");
    }

    #[test]
    fn backward_is_adjoint_of_encode() {
        let e = encoder();
        let x = Vec3::new(0.31, 0.62, 0.93);
        let dout: Vec<f64> = (0..e.output_dim()).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut g = vec![0.0; e.table.len()];
        e.backward(&x, &dout, &mut g);
        let mut out = vec![0.0; e.output_dim()];
        e.encode(&x, &mut out);
        let lhs: f64 = out.iter().zip(&dout).map(|(a, b)| a * b).sum();
        let rhs: f64 = g.iter().zip(&e.table).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
