//! Canonical-space volumetric field for the coarse stage: a multi-resolution
//! feature grid decoded into a density residual over a body SDF prior, plus color.

mod encoder;
mod occupancy;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::body_model::BodyModel;
use crate::math::{sigmoid, Aabb, Vec3};
use crate::nn::{prefixed, Mlp, MlpTrace, Parameters};

pub use encoder::{Corners, GridConfig, GridEncoder};
pub use occupancy::OccupancyGrid;

/// Finite-difference step used for field normals.
pub const NORMAL_STEP: f64 = 1e-3;

/// Signed distance prior the residual density is added to.
pub trait SdfPrior: Sync {
    fn sdf(&self, x: &Vec3) -> f64;

    fn sdf_gradient(&self, x: &Vec3) -> Vec3 {
        central_gradient(|p| self.sdf(p), x, NORMAL_STEP)
    }
}

impl SdfPrior for BodyModel {
    fn sdf(&self, x: &Vec3) -> f64 {
        self.signed_distance(x)
    }

    fn sdf_gradient(&self, x: &Vec3) -> Vec3 {
        self.signed_distance_and_gradient(x).1
    }
}

/// Analytic sphere, mostly for tests and calibration.
/// Central-difference gradient of a scalar function.
pub fn central_gradient(f: impl Fn(&Vec3) -> f64, x: &Vec3, h: f64) -> Vec3 {
    let mut g = Vec3::zeros();
    for a in 0..3 {
        let mut e = Vec3::zeros();
        e[a] = h;
        g[a] = (f(&(x + e)) - f(&(x - e))) / (2.0 * h);
    }
    g
}

#[derive(Clone, Copy, Debug)]
pub struct SphereSdf {
    pub center: Vec3,
    pub radius: f64,
}

impl SdfPrior for SphereSdf {
    fn sdf(&self, x: &Vec3) -> f64 {
        (x - self.center).norm() - self.radius
    }

    fn sdf_gradient(&self, x: &Vec3) -> Vec3 {
        (x - self.center).try_normalize(1e-12).unwrap_or_else(Vec3::y)
    }
}

/// No prior at all: the base density vanishes everywhere.
#[derive(Clone, Copy, Debug)]
pub struct NoPrior;

impl SdfPrior for NoPrior {
    fn sdf(&self, _x: &Vec3) -> f64 {
        f64::INFINITY
    }

    fn sdf_gradient(&self, _x: &Vec3) -> Vec3 {
        Vec3::zeros()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    pub grid: GridConfig,
    pub hidden: usize,
    pub alpha: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig::default(),
            hidden: 64,
            alpha: 0.001,
        }
    }
}

/// Density and color at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldSample {
    pub sigma: f64,
    pub rgb: [f64; 3],
}

/// Intermediate values of one field evaluation, kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct FieldTrace {
    pub features: Vec<f64>,
    pub mlp: MlpTrace,
    pub raw: [f64; 4],
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoarseField {
    pub encoder: GridEncoder,
    /// Features → (Δσ, three color logits).
    pub decoder: Mlp,
    pub alpha: f64,
}

impl CoarseField {
    pub fn new(config: &FieldConfig, bounds: Aabb, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = GridEncoder::new(config.grid.clone(), bounds, &mut rng);
        let decoder = Mlp::new(encoder.output_dim(), config.hidden, 4, &mut rng);
        Self {
            encoder,
            decoder,
            alpha: config.alpha,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut encoder = self.encoder.clone();
        encoder.table.fill(0.0);
        Self {
            encoder,
            decoder: self.decoder.zeros_like(),
            alpha: self.alpha,
        }
    }

    pub fn bounds(&self) -> &Aabb {
        &self.encoder.bounds
    }

    /// Density of the prior alone: `(1/α)·sigmoid(−d/α)`.
    pub fn base_density(&self, d: f64) -> f64 {
        sigmoid(-d / self.alpha) / self.alpha
    }

    /// Density at which the prior surface sits, `1/(2α)`.
    pub fn iso_level(&self) -> f64 {
        0.5 / self.alpha
    }

    pub fn forward(&self, x: &Vec3, d: f64, trace: &mut FieldTrace) -> FieldSample {
        trace.features.resize(self.encoder.output_dim(), 0.0);
        self.encoder.encode(x, &mut trace.features);
        self.decoder.forward(&trace.features, &mut trace.mlp, &mut trace.raw);
        trace.tau = self.base_density(d);
        FieldSample {
            sigma: (trace.tau + trace.raw[0]).max(0.0),
            rgb: [sigmoid(trace.raw[1]), sigmoid(trace.raw[2]), sigmoid(trace.raw[3])],
        }
    }

    /// Density and color given the prior's signed distance at `x`; zero density outside the bounds.
    pub fn sample_with_sdf(&self, x: &Vec3, d: f64) -> FieldSample {
        let s = self.forward(x, d, &mut FieldTrace::default());
        if self.bounds().contains(x) {
            s
        } else {
            FieldSample { sigma: 0.0, ..s }
        }
    }

    pub fn sample(&self, prior: &dyn SdfPrior, x: &Vec3) -> FieldSample {
        if !self.bounds().contains(x) {
            return FieldSample {
                sigma: 0.0,
                rgb: self.color(x),
            };
        }
        self.sample_with_sdf(x, prior.sdf(x))
    }

    pub fn density(&self, prior: &dyn SdfPrior, x: &Vec3) -> f64 {
        if !self.bounds().contains(x) {
            return 0.0;
        }
        self.sample_with_sdf(x, prior.sdf(x)).sigma
    }

    pub fn color(&self, x: &Vec3) -> [f64; 3] {
        self.forward(x, f64::INFINITY, &mut FieldTrace::default()).rgb
    }

    /// `−∇σ/‖∇σ‖`. The prior distance and the residual are differenced with
    /// step [`NORMAL_STEP`]; the logistic link between them is applied analytically,
    /// since its width α is comparable to the step. Falls back to the prior's gradient.
    pub fn normal(&self, prior: &dyn SdfPrior, x: &Vec3) -> Vec3 {
        let d = prior.sdf(x);
        let s = sigmoid(-d / self.alpha);
        let dtau_dd = -s * (1.0 - s) / (self.alpha * self.alpha);
        let mut g = Vec3::zeros();
        if dtau_dd != 0.0 && d.is_finite() {
            g += central_gradient(|p| prior.sdf(p), x, NORMAL_STEP) * dtau_dd;
        }
        g += central_gradient(|p| self.residual(p), x, NORMAL_STEP);
        if let Some(n) = (-g).try_normalize(1e-8) {
            return n;
        }
        prior.sdf_gradient(x).try_normalize(1e-12).unwrap_or_else(Vec3::y)
    }

    /// Accumulates parameter gradients given `∂L/∂σ` and `∂L/∂rgb` of a traced sample.
    pub fn backward(&self, x: &Vec3, trace: &FieldTrace, dsigma: f64, drgb: [f64; 3], grad: &mut CoarseField) {
        self.backward_full(x, trace, dsigma, drgb, grad, false);
    }

    /// Like [`backward`](Self::backward); when `input` is set also returns the
    /// gradient with respect to the query position through the feature grid
    /// (the prior distance is held fixed).
    pub fn backward_full(
        &self,
        x: &Vec3,
        trace: &FieldTrace,
        dsigma: f64,
        drgb: [f64; 3],
        grad: &mut CoarseField,
        input: bool,
    ) -> Vec3 {
        let mut dout = [0.0; 4];
        if trace.tau + trace.raw[0] > 0.0 {
            dout[0] = dsigma;
        }
        for c in 0..3 {
            let s = sigmoid(trace.raw[c + 1]);
            dout[c + 1] = drgb[c] * s * (1.0 - s);
        }
        if dout.iter().all(|v| *v == 0.0) {
            return Vec3::zeros();
        }
        let mut dfeat = vec![0.0; trace.features.len()];
        self.decoder
            .backward(&trace.features, &trace.mlp, &dout, &mut grad.decoder, Some(&mut dfeat));
        self.encoder.backward(x, &dfeat, &mut grad.encoder.table);
        if input {
            self.encoder.input_gradient(x, &dfeat)
        } else {
            Vec3::zeros()
        }
    }

    /// The learned density residual Δσ alone.
    pub fn residual(&self, x: &Vec3) -> f64 {
        let mut trace = FieldTrace::default();
        self.forward(x, f64::INFINITY, &mut trace);
        trace.raw[0]
    }

    pub fn add_assign(&mut self, other: &CoarseField) {
        for (a, b) in self.encoder.table.iter_mut().zip(&other.encoder.table) {
            *a += b;
        }
        self.decoder.add_assign(&other.decoder);
    }
}

impl Parameters for CoarseField {
    fn sections(&self) -> Vec<(String, &[f64])> {
        let mut v = vec![("encoder.table".to_string(), &self.encoder.table[..])];
        v.extend(prefixed("decoder", self.decoder.sections()));
        v
    }

    fn sections_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut v = vec![("encoder.table".to_string(), &mut self.encoder.table[..])];
        v.extend(prefixed("decoder", self.decoder.sections_mut()));
        v
    }
}
