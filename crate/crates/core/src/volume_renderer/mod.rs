//! Ray marching through a canonical-space field, optionally seen through a
//! posed body, with transmittance, mask accumulation and a learned background.

mod background;
mod camera;
mod skip;

use rayon::prelude::*;

use crate::body_model::{BodyModel, Pose, PosedBody};
use crate::coarse_field::{CoarseField, FieldTrace, OccupancyGrid, SdfPrior};
use crate::error::Result;
use crate::imaging::Image;
use crate::math::{linear_part, mix_seed, unit_from_bits, Aabb, Vec3};

pub use background::{encode_direction, Background, ENCODING_DIM};
pub use camera::{camera_from_spec, Camera, CameraSpec};
pub use skip::PosedSkip;

/// Upper bound on samples per ray.
pub const MAX_SAMPLES: usize = 192;

/// What a field returns at one canonical point. `aux` is carried back
/// unchanged to the backward pass (the coarse field stores its prior distance there).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointSample {
    pub sigma: f64,
    pub rgb: [f64; 3],
    pub aux: f64,
}

pub trait VolumeField: Sync {
    /// Canonical-space support.
    fn bounds(&self) -> Aabb;

    fn occupied(&self, _x: &Vec3) -> bool {
        true
    }

    /// Canonical centres of occupied cells and the radius each covers, if the
    /// field prunes space. Lets deformed rays skip samples cheaply.
    fn occupied_regions(&self) -> Option<(Vec<Vec3>, f64)> {
        None
    }

    fn query(&self, x: &Vec3) -> PointSample;

    fn normal(&self, _x: &Vec3) -> Vec3 {
        Vec3::zeros()
    }
}

/// The coarse field over a signed distance prior, with optional pruning.
pub struct CoarseScene<'a> {
    pub field: &'a CoarseField,
    pub prior: &'a dyn SdfPrior,
    pub occupancy: Option<&'a OccupancyGrid>,
}

impl VolumeField for CoarseScene<'_> {
    fn bounds(&self) -> Aabb {
        *self.field.bounds()
    }

    fn occupied(&self, x: &Vec3) -> bool {
        self.occupancy.is_none_or(|o| o.is_occupied(x))
    }

    fn occupied_regions(&self) -> Option<(Vec<Vec3>, f64)> {
        self.occupancy.map(|o| (o.occupied_centers(), 0.5 * o.cell_size().norm()))
    }

    fn query(&self, x: &Vec3) -> PointSample {
        let d = self.prior.sdf(x);
        let s = self.field.sample_with_sdf(x, d);
        PointSample {
            sigma: s.sigma,
            rgb: s.rgb,
            aux: d,
        }
    }

    fn normal(&self, x: &Vec3) -> Vec3 {
        self.field.normal(self.prior, x)
    }
}

/// Gradient of the loss with respect to one field sample.
#[derive(Clone, Copy, Debug)]
pub struct SampleGrad {
    pub x: Vec3,
    pub aux: f64,
    pub dsigma: f64,
    pub drgb: [f64; 3],
}

impl CoarseScene<'_> {
    /// Pushes sample gradients into field parameter gradients, in order.
    pub fn accumulate(&self, grads: &[SampleGrad], out: &mut CoarseField) {
        let mut trace = FieldTrace::default();
        for g in grads {
            self.field.forward(&g.x, g.aux, &mut trace);
            self.field.backward(&g.x, &trace, g.dsigma, g.drgb, out);
        }
    }
}

/// Which space camera rays live in.
#[derive(Clone, Copy)]
pub enum RaySpace<'a> {
    Canonical,
    /// Rays are marched in the posed body's space and samples are pulled
    /// back to canonical space before the field is queried.
    Deformed(&'a PosedBody<'a>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOptions {
    pub max_samples: usize,
    pub seed: u64,
    pub normals: bool,
    /// Marching stops once transmittance drops below this.
    pub min_transmittance: f64,
    /// Padding around the posed body bounds when marching deformed rays.
    pub deformed_margin: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            max_samples: MAX_SAMPLES,
            seed: 0,
            normals: false,
            min_transmittance: 1e-4,
            deformed_margin: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct VolumeRender {
    /// `fg + (1 − mask)·bg`.
    pub rgb: Image,
    /// Premultiplied foreground.
    pub fg: Image,
    pub mask: Image,
    pub background: Image,
    pub normal: Option<Image>,
}

struct Marched {
    x: Vec3,
    sample: PointSample,
    weight: f64,
    t_after: f64,
}

struct RayResult {
    rgb: [f64; 3],
    mask: f64,
    normal: Vec3,
    delta: f64,
    samples: Vec<Marched>,
}

fn march_box(field: &dyn VolumeField, space: &RaySpace, opts: &RenderOptions) -> (Aabb, Option<PosedSkip>) {
    match space {
        RaySpace::Canonical => (field.bounds(), None),
        RaySpace::Deformed(p) => {
            let bounds = p.bounds().dilate(opts.deformed_margin);
            let skip = field.occupied_regions().map(|(centers, radius)| {
                PosedSkip::new(p, &bounds, &centers, radius, (2.0 * radius).max(1e-3))
            });
            (bounds, skip)
        }
    }
}

fn march(
    field: &dyn VolumeField,
    space: &RaySpace,
    bounds: &Aabb,
    skip: Option<&PosedSkip>,
    origin: &Vec3,
    dir: &Vec3,
    ray_seed: u64,
    opts: &RenderOptions,
    keep: bool,
) -> Result<RayResult> {
    let mut out = RayResult {
        rgb: [0.0; 3],
        mask: 0.0,
        normal: Vec3::zeros(),
        delta: 0.0,
        samples: Vec::new(),
    };
    let Some((t0, t1)) = bounds.intersect_ray(origin, dir) else {
        return Ok(out);
    };
    if t1 <= t0 || opts.max_samples == 0 {
        return Ok(out);
    }
    let n = opts.max_samples;
    let delta = (t1 - t0) / n as f64;
    out.delta = delta;
    let mut transmittance = 1.0;
    let mut hint = None;
    for i in 0..n {
        let u = unit_from_bits(mix_seed(ray_seed, i as u64));
        let p = origin + dir * (t0 + (i as f64 + u) * delta);
        let (x, lin) = match space {
            RaySpace::Canonical => (p, None),
            RaySpace::Deformed(posed) => {
                if skip.is_some_and(|s| !s.may_be_occupied(&p)) {
                    continue;
                }
                let hit = posed.inverse_deform_from(&p, hint)?;
                hint = Some(hit.vertex);
                let lin = opts.normals.then(|| {
                    linear_part(&posed.transforms.blend(&posed.model.skin_weights[hit.vertex]))
                });
                (hit.canonical, lin)
            }
        };
        if !field.occupied(&x) {
            continue;
        }
        let sample = field.query(&x);
        if sample.sigma <= 0.0 {
            continue;
        }
        let alpha = 1.0 - (-sample.sigma * delta).exp();
        let weight = transmittance * alpha;
        transmittance *= 1.0 - alpha;
        for c in 0..3 {
            out.rgb[c] += weight * sample.rgb[c];
        }
        if opts.normals {
            let mut nrm = field.normal(&x);
            if let Some(l) = lin {
                nrm = l.try_inverse().map(|m| m.transpose() * nrm).unwrap_or(nrm);
                nrm = nrm.try_normalize(1e-12).unwrap_or(nrm);
            }
            out.normal += nrm * weight;
        }
        if keep {
            out.samples.push(Marched {
                x,
                sample,
                weight,
                t_after: transmittance,
            });
        }
        if transmittance < opts.min_transmittance {
            break;
        }
    }
    out.mask = 1.0 - transmittance;
    Ok(out)
}

fn pixel_seed(seed: u64, x: usize, y: usize, width: usize) -> u64 {
    mix_seed(seed, (y * width + x) as u64)
}

/// Renders any volume field.
pub fn render_field(
    field: &dyn VolumeField,
    space: &RaySpace,
    bg: &Background,
    spec: &CameraSpec,
    opts: &RenderOptions,
) -> Result<VolumeRender> {
    let cam = Camera::from_spec(spec)?;
    let (w, h) = (spec.width, spec.height);
    let (bounds, skip) = march_box(field, space, opts);
    let rows: Vec<Result<Vec<(RayResult, [f64; 3])>>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let (o, d) = cam.ray(x, y);
                    let r = march(field, space, &bounds, skip.as_ref(), &o, &d, pixel_seed(opts.seed, x, y, w), opts, false)?;
                    Ok((r, bg.color(&d)))
                })
                .collect()
        })
        .collect();
    let mut out = VolumeRender {
        rgb: Image::new(w, h, 3),
        fg: Image::new(w, h, 3),
        mask: Image::new(w, h, 1),
        background: Image::new(w, h, 3),
        normal: opts.normals.then(|| Image::new(w, h, 3)),
    };
    for (y, row) in rows.into_iter().enumerate() {
        for (x, (r, b)) in row?.into_iter().enumerate() {
            out.mask.pixel_mut(x, y)[0] = r.mask;
            for c in 0..3 {
                out.fg.pixel_mut(x, y)[c] = r.rgb[c];
                out.background.pixel_mut(x, y)[c] = b[c];
                out.rgb.pixel_mut(x, y)[c] = r.rgb[c] + (1.0 - r.mask) * b[c];
            }
            if let Some(n) = out.normal.as_mut() {
                // Encoded into [0, 1] for viewing.
                for c in 0..3 {
                    n.pixel_mut(x, y)[c] = 0.5 * (r.normal[c] + r.mask);
                }
            }
        }
    }
    Ok(out)
}

/// Convenience entry point for the coarse field over the body prior; `pose`
/// selects deformed-space rendering.
pub fn render(
    field: &CoarseField,
    body: &BodyModel,
    pose: Option<&Pose>,
    occupancy: Option<&OccupancyGrid>,
    bg: &Background,
    spec: &CameraSpec,
    opts: &RenderOptions,
) -> Result<VolumeRender> {
    let scene = CoarseScene {
        field,
        prior: body,
        occupancy,
    };
    match pose {
        None => render_field(&scene, &RaySpace::Canonical, bg, spec, opts),
        Some(p) => {
            let posed = PosedBody::new(body, p)?;
            render_field(&scene, &RaySpace::Deformed(&posed), bg, spec, opts)
        }
    }
}

/// Back-propagates `∂L/∂rgb` (and optionally `∂L/∂mask`) of a render made with
/// the same arguments. Returns per-sample field gradients in pixel order and
/// accumulates background gradients into `bg_grad`.
pub fn backward(
    field: &dyn VolumeField,
    space: &RaySpace,
    bg: &Background,
    spec: &CameraSpec,
    opts: &RenderOptions,
    d_rgb: &Image,
    d_mask: Option<&Image>,
    bg_grad: &mut Background,
) -> Result<Vec<SampleGrad>> {
    let cam = Camera::from_spec(spec)?;
    let (w, h) = (spec.width, spec.height);
    let (bounds, skip) = march_box(field, space, opts);
    let rows: Vec<Result<Vec<(Vec<SampleGrad>, [f64; 3], Vec3)>>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(w);
            for x in 0..w {
                let g = d_rgb.pixel(x, y);
                let gm = d_mask.map_or(0.0, |m| m.pixel(x, y)[0]);
                let (o, d) = cam.ray(x, y);
                if g.iter().all(|v| *v == 0.0) && gm == 0.0 {
                    continue;
                }
                let r = march(field, space, &bounds, skip.as_ref(), &o, &d, pixel_seed(opts.seed, x, y, w), opts, true)?;
                let b = bg.color(&d);
                // out = C + (1 − M)·bg
                let dmask = gm - (0..3).map(|c| g[c] * b[c]).sum::<f64>();
                let dbg = [g[0] * (1.0 - r.mask), g[1] * (1.0 - r.mask), g[2] * (1.0 - r.mask)];
                let t_final = 1.0 - r.mask;
                let mut grads = Vec::with_capacity(r.samples.len());
                // Colour accumulated behind the current sample.
                let mut behind = [0.0; 3];
                for s in r.samples.iter().rev() {
                    let mut dsigma = 0.0;
                    let mut drgb = [0.0; 3];
                    for c in 0..3 {
                        dsigma += g[c] * (s.t_after * s.sample.rgb[c] - behind[c]);
                        drgb[c] = g[c] * s.weight;
                    }
                    dsigma = (dsigma + dmask * t_final) * r.delta;
                    for c in 0..3 {
                        behind[c] += s.weight * s.sample.rgb[c];
                    }
                    grads.push(SampleGrad {
                        x: s.x,
                        aux: s.sample.aux,
                        dsigma,
                        drgb,
                    });
                }
                grads.reverse();
                row.push((grads, dbg, d));
            }
            Ok(row)
        })
        .collect();
    let mut out = Vec::new();
    for row in rows {
        for (grads, dbg, d) in row? {
            out.extend(grads);
            bg.backward(&d, dbg, bg_grad);
        }
    }
    Ok(out)
}

/// `fg + (1 − mask)·bg` with a premultiplied foreground.
pub fn composite(fg: &Image, mask: &Image, bg: &Image) -> Result<Image> {
    fg.ensure_same_shape(bg)?;
    if mask.width != fg.width || mask.height != fg.height || mask.channels != 1 {
        return Err(crate::Error::ShapeMismatch(format!(
            "mask {}x{}x{} vs image {}x{}",
            mask.width, mask.height, mask.channels, fg.width, fg.height
        )));
    }
    let mut out = fg.clone();
    for y in 0..fg.height {
        for x in 0..fg.width {
            let m = mask.pixel(x, y)[0];
            let b = bg.pixel(x, y);
            for (c, v) in out.pixel_mut(x, y).iter_mut().enumerate() {
                *v += (1.0 - m) * b[c];
            }
        }
    }
    Ok(out)
}
