//! Fine stage geometry: an isosurface of the coarse field seeds a signed
//! distance sampler, and a deformable tetrahedral lattice carries a learned
//! residual on top of it. The surface is re-extracted by marching tetrahedra.

mod losses;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body_model::{BodyModel, BoneTransforms, PointTree};
use crate::coarse_field::{CoarseField, FieldTrace, OccupancyGrid, SdfPrior};
use crate::error::{Error, Result};
use crate::math::{logit, transform_point, Aabb, Vec3};
use crate::mesh::isosurface::{EdgeSource, TetLattice, ZERO_NUDGE};
use crate::mesh::{MeshSdf, TriMesh};
use crate::nn::{prefixed, Mlp, MlpTrace, Parameters};

pub use losses::{laplacian_loss, laplacian_terms, normal_consistency_loss, LossGrad};

/// Surface values closer to zero than this fraction of a cell are pushed away
/// from zero before extraction, so no face collapses to a point.
const SNAP_FRACTION: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TetConfig {
    /// Cubes along the longest axis of the grid box.
    pub resolution: usize,
    pub hidden: usize,
    /// Per-axis vertex displacement limit, in cells.
    pub offset_clamp: f64,
    /// Output scale of the residual perceptron, in cells. Keeps one optimizer
    /// step from moving the whole surface by more than a fraction of a cell.
    pub residual_scale: f64,
    /// Empty cells kept around the coarse surface.
    pub padding_cells: f64,
    /// Half-width, in cells, of the band where the coarse distance is re-evaluated exactly.
    pub band_cells: f64,
}

impl Default for TetConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            hidden: 64,
            offset_clamp: 0.45,
            residual_scale: 0.1,
            padding_cells: 3.0,
            band_cells: 5.0,
        }
    }
}

/// Exact signed distance to the coarse-stage surface.
#[derive(Clone, Debug)]
pub struct CoarseSdfSampler {
    sdf: MeshSdf,
}

impl CoarseSdfSampler {
    pub fn new(mesh: TriMesh) -> Result<Self> {
        if mesh.is_empty() {
            return Err(Error::EmptyGeometry);
        }
        Ok(Self { sdf: MeshSdf::new(mesh) })
    }

    pub fn mesh(&self) -> &TriMesh {
        self.sdf.mesh()
    }

    pub fn sdf(&self, x: &Vec3) -> f64 {
        self.sdf.signed_distance(x)
    }

    pub fn sdf_and_gradient(&self, x: &Vec3) -> (f64, Vec3) {
        self.sdf.signed_distance_and_gradient(x)
    }
}

impl SdfPrior for CoarseSdfSampler {
    fn sdf(&self, x: &Vec3) -> f64 {
        CoarseSdfSampler::sdf(self, x)
    }

    fn sdf_gradient(&self, x: &Vec3) -> Vec3 {
        self.sdf_and_gradient(x).1
    }
}

/// Extracted surface in canonical space.
#[derive(Clone, Debug, Default)]
pub struct SurfaceMesh {
    pub mesh: TriMesh,
    /// Per vertex, the lattice edge it was interpolated on.
    pub sources: Vec<EdgeSource>,
    pub colors: Vec<[f64; 3]>,
}

impl SurfaceMesh {
    /// Canonical coordinate of every vertex.
    pub fn canonical(&self) -> &[Vec3] {
        &self.mesh.vertices
    }
}

/// Pushes values within `eps` of zero out to `±eps`, keeping the sign (zero goes positive).
pub fn snap_values(values: &mut [f64], eps: f64) {
    for v in values {
        if v.abs() < eps {
            *v = if *v < 0.0 { -eps } else { eps };
        }
    }
}

/// Maps a density onto a signed-distance-like scale by inverting the prior's
/// logistic link, so linear interpolation on a lattice lands close to the true
/// crossing. The zero level is the surface density `1/(2α)`; inside is negative.
pub fn density_to_distance(sigma: f64, alpha: f64) -> f64 {
    let q = (alpha * sigma).clamp(1e-12, 1.0 - 1e-12);
    -alpha * logit(q)
}

/// Isosurface of the coarse field at the surface density `1/(2α)`, on a lattice
/// with `resolution` cubes along the longest side of the occupied region.
pub fn extract_coarse_surface(
    field: &CoarseField,
    prior: &dyn SdfPrior,
    occupancy: Option<&OccupancyGrid>,
    resolution: usize,
) -> Result<TriMesh> {
    let region = occupancy
        .map(|o| o.occupied_bounds())
        .filter(|b| b.min.x <= b.max.x)
        .unwrap_or(*field.bounds());
    let cell = {
        let e = region.extent();
        e.x.max(e.y).max(e.z) / resolution.max(1) as f64
    };
    let lattice = TetLattice::covering(&region.dilate(cell), cell);
    let positions = lattice.positions();
    let outside = density_to_distance(0.0, field.alpha);
    let mut values: Vec<f64> = positions
        .par_iter()
        .map(|p| {
            if !field.bounds().contains(p) || occupancy.is_some_and(|o| !o.is_occupied(p)) {
                return outside;
            }
            density_to_distance(field.density(prior, p), field.alpha)
        })
        .collect();
    snap_values(&mut values, SNAP_FRACTION * cell);
    let mesh = lattice.march(&positions, &values).mesh;
    if mesh.is_empty() {
        return Err(Error::EmptyGeometry);
    }
    Ok(mesh)
}

/// Deformable tetrahedral lattice with a residual distance perceptron.
#[derive(Clone, Debug)]
pub struct TetGrid {
    pub lattice: TetLattice,
    /// Per-vertex displacement in cells, flattened xyz.
    pub offsets: Vec<f64>,
    /// Normalized position → Δd.
    pub residual: Mlp,
    pub config: TetConfig,
    /// Coarse distance at the undisplaced lattice vertices.
    d_rest: Vec<f64>,
}

/// Values of the fine distance at every lattice vertex for one extraction.
#[derive(Clone, Debug)]
pub struct GridState {
    pub positions: Vec<Vec3>,
    pub values: Vec<f64>,
    /// Coarse distance gradient; zero outside the exact band.
    pub coarse_gradient: Vec<Vec3>,
    pub max_residual: f64,
    /// Values pushed off zero by snapping; they carry no gradient.
    pub snapped: Vec<bool>,
}

impl TetGrid {
    /// Grid on the sampler surface's bounds, with zero residual and offsets.
    pub fn new(sampler: &CoarseSdfSampler, config: &TetConfig, seed: u64) -> Self {
        let b = sampler.mesh().bounds();
        let e = b.extent();
        let longest = e.x.max(e.y).max(e.z);
        let res = config.resolution.max(1) as f64;
        let cell = longest / (res - 2.0 * config.padding_cells).max(1.0);
        let lattice = TetLattice::covering(&b.dilate(config.padding_cells * cell), cell);
        let d_rest = lattice.positions().par_iter().map(|p| sampler.sdf(p)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            offsets: vec![0.0; lattice.vertex_count() * 3],
            residual: Mlp::new(3, config.hidden, 1, &mut rng),
            lattice,
            config: config.clone(),
            d_rest,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            lattice: self.lattice.clone(),
            offsets: vec![0.0; self.offsets.len()],
            residual: self.residual.zeros_like(),
            config: self.config.clone(),
            d_rest: Vec::new(),
        }
    }

    pub fn cell(&self) -> f64 {
        self.lattice.cell
    }

    pub fn bounds(&self) -> Aabb {
        self.lattice.bounds()
    }

    pub fn vertex_count(&self) -> usize {
        self.lattice.vertex_count()
    }

    pub fn position(&self, i: usize) -> Vec3 {
        let o = &self.offsets[3 * i..3 * i + 3];
        self.lattice.vertex_position(i) + Vec3::new(o[0], o[1], o[2]) * self.cell()
    }

    fn normalized(&self, x: &Vec3) -> [f64; 3] {
        let b = self.bounds();
        let e = b.extent();
        [0, 1, 2].map(|a| 2.0 * (x[a] - b.min[a]) / e[a] - 1.0)
    }

    fn residual_unit(&self) -> f64 {
        self.config.residual_scale * self.cell()
    }

    pub fn residual_at(&self, x: &Vec3) -> f64 {
        self.residual_unit() * self.residual.eval(&self.normalized(x))[0]
    }

    /// `d_coarse(x) + Δd(x)`.
    pub fn fine_sdf(&self, sampler: &CoarseSdfSampler, x: &Vec3) -> f64 {
        sampler.sdf(x) + self.residual_at(x)
    }

    /// Fine distance at every displaced lattice vertex. Far from the surface the
    /// coarse distance is taken at the undisplaced vertex, which cannot change its sign.
    pub fn evaluate(&self, sampler: &CoarseSdfSampler) -> GridState {
        let n = self.vertex_count();
        let positions: Vec<Vec3> = (0..n).map(|i| self.position(i)).collect();
        let residual: Vec<f64> = positions.par_iter().map(|p| self.residual_at(p)).collect();
        let max_residual = residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        let band = self.config.band_cells * self.cell() + 3.0 * max_residual;
        let coarse: Vec<(f64, Vec3)> = (0..n)
            .into_par_iter()
            .map(|i| {
                if self.d_rest[i].abs() <= band {
                    sampler.sdf_and_gradient(&positions[i])
                } else {
                    (self.d_rest[i], Vec3::zeros())
                }
            })
            .collect();
        let mut values: Vec<f64> = coarse.iter().zip(&residual).map(|((d, _), r)| d + r).collect();
        let eps = SNAP_FRACTION * self.cell();
        let snapped = values.iter().map(|v| v.abs() < eps).collect();
        snap_values(&mut values, eps);
        GridState {
            snapped,
            positions,
            values,
            coarse_gradient: coarse.into_iter().map(|(_, g)| g).collect(),
            max_residual,
        }
    }

    /// Extracts the fine surface (colors left empty).
    pub fn marching_tets(&self, sampler: &CoarseSdfSampler) -> (SurfaceMesh, GridState) {
        let state = self.evaluate(sampler);
        let ex = self.lattice.march(&state.positions, &state.values);
        (
            SurfaceMesh {
                mesh: ex.mesh,
                sources: ex.sources,
                colors: Vec::new(),
            },
            state,
        )
    }

    /// Back-propagates `∂L/∂v` of surface vertices into the residual
    /// perceptron and the vertex offsets of `grad`.
    pub fn backward(&self, state: &GridState, surface: &SurfaceMesh, dverts: &[Vec3], grad: &mut TetGrid) {
        let n = self.vertex_count();
        let mut dvalue = vec![0.0; n];
        let mut dpos = vec![Vec3::zeros(); n];
        for (src, g) in surface.sources.iter().zip(dverts) {
            if *g == Vec3::zeros() {
                continue;
            }
            let (a, b) = (src.a as usize, src.b as usize);
            let (pa, pb) = (state.positions[a], state.positions[b]);
            let da = nudge(state.values[a]);
            let db = nudge(state.values[b]);
            let c = crossing_jacobian(&pa, &pb, da, db);
            dvalue[a] += g.dot(&c.d_da);
            dvalue[b] += g.dot(&c.d_db);
            dpos[a] += g * c.w_a;
            dpos[b] += g * (1.0 - c.w_a);
        }
        let b = self.bounds();
        let unit = self.residual_unit();
        // dx already carries the unit from dout
        let scale = b.extent().map(|e| 2.0 / e);
        let mut trace = MlpTrace::default();
        let mut out = [0.0];
        for i in 0..n {
            if dvalue[i] != 0.0 && !state.snapped[i] {
                let x = self.normalized(&state.positions[i]);
                self.residual.forward(&x, &mut trace, &mut out);
                let mut dx = [0.0; 3];
                self.residual
                    .backward(&x, &trace, &[dvalue[i] * unit], &mut grad.residual, Some(&mut dx));
                let dres = Vec3::new(dx[0] * scale.x, dx[1] * scale.y, dx[2] * scale.z);
                dpos[i] += state.coarse_gradient[i] * dvalue[i] + dres;
            }
            if dpos[i] != Vec3::zeros() {
                for a in 0..3 {
                    grad.offsets[3 * i + a] += dpos[i][a] * self.cell();
                }
            }
        }
    }

    /// Keeps every offset component within the configured fraction of a cell.
    pub fn clamp_offsets(&mut self) {
        let lim = self.config.offset_clamp;
        for o in &mut self.offsets {
            *o = o.clamp(-lim, lim);
        }
    }

    /// Largest displacement component in world units.
    pub fn max_offset(&self) -> f64 {
        self.cell() * self.offsets.iter().fold(0.0f64, |m, o| m.max(o.abs()))
    }

    pub fn add_assign(&mut self, other: &TetGrid) {
        for (a, b) in self.offsets.iter_mut().zip(&other.offsets) {
            *a += b;
        }
        self.residual.add_assign(&other.residual);
    }
}

/// Derivatives of the zero crossing `v = p_a + t·(p_b − p_a)`, `t = d_a/(d_a − d_b)`.
#[derive(Clone, Copy, Debug)]
pub struct CrossingJacobian {
    pub d_da: Vec3,
    pub d_db: Vec3,
    /// `∂v/∂p_a = w_a·I` and `∂v/∂p_b = (1 − w_a)·I`.
    pub w_a: f64,
}

pub fn crossing_jacobian(pa: &Vec3, pb: &Vec3, da: f64, db: f64) -> CrossingJacobian {
    let denom = da - db;
    let t = da / denom;
    let e = pb - pa;
    CrossingJacobian {
        d_da: e * (-db / (denom * denom)),
        d_db: e * (da / (denom * denom)),
        w_a: 1.0 - t,
    }
}

#[inline]
fn nudge(v: f64) -> f64 {
    if v == 0.0 {
        ZERO_NUDGE
    } else {
        v
    }
}

impl Parameters for TetGrid {
    fn sections(&self) -> Vec<(String, &[f64])> {
        let mut v: Vec<_> = prefixed("residual", self.residual.sections()).collect();
        v.push(("offsets".into(), &self.offsets[..]));
        v
    }

    fn sections_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut v: Vec<_> = prefixed("residual", self.residual.sections_mut()).collect();
        v.push(("offsets".into(), &mut self.offsets[..]));
        v
    }
}

/// Coarse isosurface, its distance sampler, and a fresh tet grid around it.
pub fn init_from_coarse(
    field: &CoarseField,
    prior: &dyn SdfPrior,
    occupancy: Option<&OccupancyGrid>,
    mc_resolution: usize,
    config: &TetConfig,
    seed: u64,
) -> Result<(SurfaceMesh, CoarseSdfSampler, TetGrid)> {
    let mesh = extract_coarse_surface(field, prior, occupancy, mc_resolution)?;
    let sampler = CoarseSdfSampler::new(mesh)?;
    let grid = TetGrid::new(&sampler, config, seed);
    let (mut surface, _) = grid.marching_tets(&sampler);
    if surface.mesh.is_empty() {
        return Err(Error::EmptyGeometry);
    }
    surface.colors = surface_color(field, &surface.mesh.vertices);
    Ok((surface, sampler, grid))
}

/// Per-vertex color looked up at canonical coordinates.
pub fn surface_color(color_net: &CoarseField, canonical: &[Vec3]) -> Vec<[f64; 3]> {
    canonical.par_iter().map(|x| color_net.color(x)).collect()
}

/// Color and its trace at one canonical point, for shading backward passes.
pub fn traced_color(color_net: &CoarseField, x: &Vec3, trace: &mut FieldTrace) -> [f64; 3] {
    color_net.forward(x, f64::INFINITY, trace).rgb
}

/// Binds surface vertices to their nearest canonical body vertex so the
/// surface can be posed with the body's skinning weights.
#[derive(Clone, Debug)]
pub struct Skinner {
    grid: PointTree,
}

impl Skinner {
    pub fn new(body: &BodyModel) -> Self {
        Self {
            grid: PointTree::new(&body.vertices),
        }
    }

    pub fn bind(&self, body: &BodyModel, canonical: &[Vec3]) -> Vec<usize> {
        canonical
            .par_iter()
            .map(|p| self.grid.nearest(&body.vertices, p).map_or(0, |(i, _)| i))
            .collect()
    }

    /// Forward skinning of canonical points with their bound vertices' weights.
    pub fn pose(&self, body: &BodyModel, transforms: &BoneTransforms, canonical: &[Vec3], binding: &[usize]) -> Vec<Vec3> {
        canonical
            .par_iter()
            .zip(binding)
            .map(|(p, &v)| transform_point(&transforms.blend(&body.skin_weights[v]), p))
            .collect()
    }
}
