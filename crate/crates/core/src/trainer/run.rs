use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{sample_iteration_context, view_prompt, AdamState, IterationContext, PromptSpec, Space, TrainConfig};
use super::optim::{adamw_step, all_finite};
use crate::body_model::{bone_transforms, BodyModel, Pose, PoseLibrary, PosedBody};
use crate::checkpoint::Checkpoint;
use crate::coarse_field::{CoarseField, OccupancyGrid, SdfPrior};
use crate::error::{Error, Result};
use crate::guidance::{sds_pixel_gradient, DiffusionSchedule, ScoreModel, SdsInput, SdsOutput, Stage, ViewTarget};
use crate::imaging::Image;
use crate::math::{mix_seed, Aabb, Vec3};
use crate::mesh::{io::write_ply, TriMesh};
use crate::nn::Parameters;
use crate::rasterizer::{
    background_backward, background_image, iuv_from_gbuffer, rasterize, render_densepose, shade, shade_backward, GBuffer,
    IuvImage,
};
use crate::tet_field::{
    init_from_coarse, laplacian_loss, normal_consistency_loss, surface_color, CoarseSdfSampler, Skinner, SurfaceMesh,
    TetGrid,
};
use crate::volume_renderer::{backward, render_field, Background, Camera, CameraSpec, CoarseScene, RaySpace, RenderOptions};

/// Box the coarse field lives in.
pub fn field_bounds(body: &BodyModel, cfg: &TrainConfig) -> Aabb {
    body.bounds().dilate(cfg.field_margin)
}

/// Fixed view used for progress probes and as the first held-out camera.
pub fn probe_camera(body: &BodyModel, resolution: usize) -> CameraSpec {
    CameraSpec {
        radius: 1.8,
        elevation: 10.0,
        azimuth: 30.0,
        fov: 60.0,
        width: resolution,
        height: resolution,
        look_at: body.bounds().center(),
    }
}

fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len().max(1) as f64)
}

/// Volumetric stage state.
#[derive(Clone, Debug)]
pub struct CoarseModel {
    pub field: CoarseField,
    pub background: Background,
    pub occupancy: OccupancyGrid,
}

impl CoarseModel {
    pub fn new(cfg: &TrainConfig, body: &BodyModel) -> Self {
        let field = CoarseField::new(&cfg.field, field_bounds(body, cfg), mix_seed(cfg.seed, 1));
        let mut occupancy = OccupancyGrid::new(&field, body, cfg.occupancy_resolution);
        occupancy.update(&field, body, 0, cfg.seed);
        Self {
            field,
            background: Background::new(cfg.background_hidden, mix_seed(cfg.seed, 2)),
            occupancy,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        c.add("field", &self.field);
        c.add("background", &self.background);
        c
    }

    /// Restores parameters; the occupancy grid is rebuilt from the field.
    pub fn from_checkpoint(ck: &Checkpoint, cfg: &TrainConfig, body: &BodyModel) -> Result<Self> {
        let mut m = Self::new(cfg, body);
        ck.load_into("field", &mut m.field)?;
        ck.load_into("background", &mut m.background)?;
        m.occupancy = OccupancyGrid::new(&m.field, body, cfg.occupancy_resolution);
        m.occupancy.update(&m.field, body, 0, cfg.seed);
        Ok(m)
    }

    pub fn render(&self, body: &BodyModel, pose: Option<&Pose>, spec: &CameraSpec, seed: u64) -> Result<Image> {
        let opts = RenderOptions {
            seed,
            ..RenderOptions::default()
        };
        Ok(crate::volume_renderer::render(&self.field, body, pose, Some(&self.occupancy), &self.background, spec, &opts)?.rgb)
    }
}

/// A posed, shaded view of the fine mesh.
pub struct FineRender {
    pub image: Image,
    pub gbuf: GBuffer,
    pub surface: SurfaceMesh,
    /// Body vertex each surface vertex takes its skinning weights (and part label) from.
    pub binding: Vec<usize>,
}

/// Mesh stage state.
#[derive(Clone, Debug)]
pub struct FineModel {
    pub sampler: CoarseSdfSampler,
    pub grid: TetGrid,
    pub color: CoarseField,
    pub background: Background,
}

impl FineModel {
    pub fn surface(&self) -> Result<SurfaceMesh> {
        let (mut s, _) = self.grid.marching_tets(&self.sampler);
        if s.mesh.is_empty() {
            return Err(Error::EmptyGeometry);
        }
        s.colors = surface_color(&self.color, &s.mesh.vertices);
        Ok(s)
    }

    pub fn render(&self, body: &BodyModel, skinner: &Skinner, pose: &Pose, spec: &CameraSpec) -> Result<FineRender> {
        let surface = self.surface()?;
        let cam = Camera::from_spec(spec)?;
        let binding = skinner.bind(body, &surface.mesh.vertices);
        let posed = skinner.pose(body, &bone_transforms(body, pose), &surface.mesh.vertices, &binding);
        let gbuf = rasterize(&posed, &surface.mesh.faces, &cam);
        let bg = background_image(&self.background, &cam);
        let image = shade(&gbuf, &surface.mesh.faces, &surface.mesh.vertices, &self.color, &bg);
        Ok(FineRender {
            image,
            gbuf,
            surface,
            binding,
        })
    }

    /// Part map of the avatar, labelling each surface vertex with its bound body vertex's part.
    pub fn densepose(&self, body: &BodyModel, skinner: &Skinner, pose: &Pose, spec: &CameraSpec) -> Result<IuvImage> {
        let r = self.render(body, skinner, pose, spec)?;
        let labels: Vec<u8> = r.binding.iter().map(|&v| body.part_labels[v]).collect();
        let uv: Vec<[f64; 2]> = r.binding.iter().map(|&v| body.uv[v]).collect();
        let proxy = BodyModel::new(
            r.surface.mesh.vertices.clone(),
            r.surface.mesh.faces.clone(),
            r.binding.iter().map(|&v| body.skin_weights[v]).collect(),
            body.joint_rest,
            body.parents,
            labels,
            uv,
        )?;
        Ok(iuv_from_gbuffer(&proxy, &r.gbuf))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        c.add("grid", &self.grid);
        c.add("color", &self.color);
        c.add("background", &self.background);
        let m = self.sampler.mesh();
        c.push("coarse_mesh.vertices", &m.vertices.iter().flat_map(|v| [v.x, v.y, v.z]).collect::<Vec<_>>());
        c.push("coarse_mesh.faces", &m.faces.iter().flat_map(|f| f.map(|i| i as f64)).collect::<Vec<_>>());
        c
    }

    pub fn from_checkpoint(ck: &Checkpoint, cfg: &TrainConfig, body: &BodyModel) -> Result<Self> {
        let v = ck.require("coarse_mesh.vertices")?;
        let f = ck.require("coarse_mesh.faces")?;
        if v.len() % 3 != 0 || f.len() % 3 != 0 {
            return Err(Error::Checkpoint("coarse mesh sections are not triples".into()));
        }
        let vertices: Vec<Vec3> = v.chunks_exact(3).map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64)).collect();
        let faces: Vec<[u32; 3]> = f.chunks_exact(3).map(|c| [c[0] as u32, c[1] as u32, c[2] as u32]).collect();
        if faces.iter().flatten().any(|i| *i as usize >= vertices.len()) {
            return Err(Error::Checkpoint("coarse mesh face index out of range".into()));
        }
        let sampler = CoarseSdfSampler::new(TriMesh::new(vertices, faces))?;
        let mut grid = TetGrid::new(&sampler, &cfg.tet, mix_seed(cfg.seed, 3));
        ck.load_into("grid", &mut grid)?;
        let mut color = CoarseField::new(&cfg.field, field_bounds(body, cfg), mix_seed(cfg.seed, 1));
        ck.load_into("color", &mut color)?;
        let mut background = Background::new(cfg.background_hidden, mix_seed(cfg.seed, 2));
        ck.load_into("background", &mut background)?;
        Ok(Self {
            sampler,
            grid,
            color,
            background,
        })
    }
}

/// One line of the metrics log. Contains no wall-clock data, so equal seeds give equal logs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: Stage,
    pub step: usize,
    pub space: Space,
    pub part: Option<String>,
    pub resolution: usize,
    pub t: f64,
    pub sds: f64,
    pub laplacian: f64,
    pub normal: f64,
    pub total: f64,
    pub skipped: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_mse: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub complete: bool,
    pub coarse_steps: usize,
    pub fine_steps: usize,
    pub skipped_steps: usize,
    pub files: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub coarse_checkpoint: PathBuf,
    pub fine_checkpoint: PathBuf,
    pub mesh: PathBuf,
    pub metrics_log: PathBuf,
    pub manifest: Manifest,
    pub coarse: CoarseModel,
    pub fine: FineModel,
    pub surface: SurfaceMesh,
}

fn retryable(e: &Error) -> bool {
    matches!(
        e,
        Error::Timeout(_) | Error::Transport(_) | Error::Server { .. } | Error::Protocol(_) | Error::ShapeMismatch(_)
    )
}

/// Step-level training driver shared by both stages.
pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub body: &'a BodyModel,
    pub library: PoseLibrary,
    pub prompt: PromptSpec,
    pub guidance: &'a dyn ScoreModel,
    pub schedule: DiffusionSchedule,
    skinner: Skinner,
    skipped_in_row: usize,
    pub skipped_total: usize,
}

struct CoarseGrads {
    field: CoarseField,
    background: Background,
    adam_field: AdamState,
    adam_background: AdamState,
}

struct FineGrads {
    grid: TetGrid,
    color: CoarseField,
    background: Background,
    adam_grid: AdamState,
    adam_color: AdamState,
    adam_background: AdamState,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, body: &'a BodyModel, prompt: PromptSpec, guidance: &'a dyn ScoreModel) -> Result<Self> {
        cfg.validate()?;
        if prompt.name.trim().is_empty() {
            return Err(Error::InvalidInput("prompt name must not be empty".into()));
        }
        Ok(Self {
            cfg,
            body,
            library: PoseLibrary::builtin(),
            prompt,
            guidance,
            schedule: DiffusionSchedule::default(),
            skinner: Skinner::new(body),
            skipped_in_row: 0,
            skipped_total: 0,
        })
    }

    pub fn context(&self, stage: Stage, step: usize) -> IterationContext {
        sample_iteration_context(&self.cfg, self.body, &self.library, stage, step)
    }

    fn guide(&self, ctx: &IterationContext, image: &Image, condition: &IuvImage) -> Result<SdsOutput> {
        let (positive, negative) = view_prompt(&self.prompt, &ctx.camera, ctx.part);
        let view = ViewTarget {
            pose: ctx.pose.clone(),
            camera: ctx.camera.clone(),
        };
        let input = SdsInput {
            image,
            condition,
            prompt: &positive,
            negative_prompt: &negative,
            view: Some(&view),
        };
        let call = || sds_pixel_gradient(self.guidance, &self.schedule, &input, ctx.t, ctx.seed, &self.cfg.guidance);
        match call() {
            Err(e) if retryable(&e) => {
                log::warn!("guidance failed ({e}); retrying once");
                call()
            }
            other => other,
        }
    }

    /// Books a skipped step and aborts after too many in a row.
    fn skip(&mut self, what: &str) -> Result<()> {
        self.skipped_in_row += 1;
        self.skipped_total += 1;
        log::warn!("non-finite {what}; step skipped ({} in a row)", self.skipped_in_row);
        if self.skipped_in_row > self.cfg.max_skipped {
            return Err(Error::Aborted(format!("{} consecutive non-finite steps", self.skipped_in_row)));
        }
        Ok(())
    }

    fn scaled(&self, sds: &SdsOutput) -> Image {
        let mut g = sds.grad.clone();
        g.data.iter_mut().for_each(|v| *v *= self.cfg.lambda_sds);
        g
    }

    fn record(&self, ctx: &IterationContext, sds: f64, laplacian: f64, normal: f64, skipped: bool) -> StepRecord {
        StepRecord {
            stage: ctx.stage,
            step: ctx.step,
            space: ctx.space,
            part: ctx.part.map(|p| p.name().to_string()),
            resolution: ctx.camera.width,
            t: ctx.t,
            sds,
            laplacian,
            normal,
            total: self.cfg.lambda_sds * sds + self.cfg.lambda_laplacian * laplacian + self.cfg.lambda_normal * normal,
            skipped,
            probe_mse: None,
        }
    }

    fn coarse_step(&mut self, model: &mut CoarseModel, g: &mut CoarseGrads, step: usize) -> Result<StepRecord> {
        let ctx = self.context(Stage::Coarse, step);
        let body = self.body;
        let posed = match ctx.space {
            Space::Deformed => Some(PosedBody::new(body, &ctx.pose)?),
            Space::Canonical => None,
        };
        let space = posed.as_ref().map_or(RaySpace::Canonical, RaySpace::Deformed);
        let opts = RenderOptions {
            max_samples: self.cfg.max_samples,
            seed: ctx.seed,
            ..RenderOptions::default()
        };
        let scene = CoarseScene {
            field: &model.field,
            prior: body as &dyn SdfPrior,
            occupancy: Some(&model.occupancy),
        };
        let render = render_field(&scene, &space, &model.background, &ctx.camera, &opts)?;
        let (condition, _) = render_densepose(body, &ctx.pose, &Camera::from_spec(&ctx.camera)?)?;
        let sds = self.guide(&ctx, &render.rgb, &condition)?;
        let grad_img = self.scaled(&sds);
        if !grad_img.data.iter().all(|v| v.is_finite()) {
            self.skip("guidance gradient")?;
            return Ok(self.record(&ctx, f64::NAN, 0.0, 0.0, true));
        }
        g.field.zero();
        g.background.zero();
        let samples = backward(&scene, &space, &model.background, &ctx.camera, &opts, &grad_img, None, &mut g.background)?;
        scene.accumulate(&samples, &mut g.field);
        if !all_finite(&g.field) || !all_finite(&g.background) {
            self.skip("parameter gradient")?;
            return Ok(self.record(&ctx, sds.loss(), 0.0, 0.0, true));
        }
        self.skipped_in_row = 0;
        adamw_step(&mut model.field, &g.field, &mut g.adam_field, self.cfg.lr, &self.cfg.adam)?;
        adamw_step(&mut model.background, &g.background, &mut g.adam_background, self.cfg.lr, &self.cfg.adam)?;
        if self.cfg.occupancy_every > 0 && (step + 1) % self.cfg.occupancy_every == 0 {
            model.occupancy.update(&model.field, body, step as u64, self.cfg.seed);
        }
        Ok(self.record(&ctx, sds.loss(), 0.0, 0.0, false))
    }

    fn fine_step(&mut self, model: &mut FineModel, g: &mut FineGrads, step: usize) -> Result<StepRecord> {
        let ctx = self.context(Stage::Fine, step);
        let body = self.body;
        let (surface, state) = model.grid.marching_tets(&model.sampler);
        if surface.mesh.is_empty() {
            return Err(Error::EmptyGeometry);
        }
        let canonical = &surface.mesh.vertices;
        let faces = &surface.mesh.faces;
        let posed = match ctx.space {
            Space::Canonical => canonical.clone(),
            Space::Deformed => {
                let binding = self.skinner.bind(body, canonical);
                self.skinner.pose(body, &bone_transforms(body, &ctx.pose), canonical, &binding)
            }
        };
        let cam = Camera::from_spec(&ctx.camera)?;
        let gbuf = rasterize(&posed, faces, &cam);
        let bg = background_image(&model.background, &cam);
        let image = shade(&gbuf, faces, canonical, &model.color, &bg);
        let (condition, _) = render_densepose(body, &ctx.pose, &cam)?;
        let sds = self.guide(&ctx, &image, &condition)?;
        let lap = laplacian_loss(&surface.mesh);
        let nc = normal_consistency_loss(&surface.mesh);
        let grad_img = self.scaled(&sds);
        if !grad_img.data.iter().all(|v| v.is_finite()) {
            self.skip("guidance gradient")?;
            return Ok(self.record(&ctx, f64::NAN, lap.value, nc.value, true));
        }
        g.grid.zero();
        g.color.zero();
        g.background.zero();
        let mut dverts = shade_backward(&gbuf, faces, canonical, &model.color, &grad_img, &mut g.color);
        background_backward(&model.background, &cam, &gbuf, &grad_img, &mut g.background);
        for (i, d) in dverts.iter_mut().enumerate() {
            *d += lap.grad[i] * self.cfg.lambda_laplacian + nc.grad[i] * self.cfg.lambda_normal;
        }
        model.grid.backward(&state, &surface, &dverts, &mut g.grid);
        if !all_finite(&g.grid) || !all_finite(&g.color) || !all_finite(&g.background) {
            self.skip("parameter gradient")?;
            return Ok(self.record(&ctx, sds.loss(), lap.value, nc.value, true));
        }
        self.skipped_in_row = 0;
        let (lr, adam) = (self.cfg.lr, self.cfg.adam);
        adamw_step(&mut model.grid, &g.grid, &mut g.adam_grid, lr, &adam)?;
        adamw_step(&mut model.color, &g.color, &mut g.adam_color, lr, &adam)?;
        adamw_step(&mut model.background, &g.background, &mut g.adam_background, lr, &adam)?;
        model.grid.clamp_offsets();
        Ok(self.record(&ctx, sds.loss(), lap.value, nc.value, false))
    }

    fn probe(&self, stage: Stage, render: impl FnOnce(&CameraSpec) -> Result<Image>) -> Result<Option<f64>> {
        let spec = probe_camera(self.body, self.cfg.resolution(stage, 0));
        let view = ViewTarget {
            pose: Pose::canonical(),
            camera: spec.clone(),
        };
        match self.guidance.reference(&view) {
            None => Ok(None),
            Some(target) => Ok(Some(mse(&render(&spec)?, &target?)?)),
        }
    }

    fn probing(&self, step: usize, steps: usize) -> bool {
        self.cfg.probe_every > 0 && ((step + 1) % self.cfg.probe_every == 0 || step + 1 == steps)
    }

    /// Runs the volumetric stage, calling `log` after every step.
    pub fn train_coarse(&mut self, model: &mut CoarseModel, mut log: impl FnMut(&StepRecord, f64) -> Result<()>) -> Result<()> {
        let mut g = CoarseGrads {
            field: model.field.zeros_like(),
            background: model.background.zeros_like(),
            adam_field: AdamState::new(),
            adam_background: AdamState::new(),
        };
        for step in 0..self.cfg.coarse_steps {
            let clock = Instant::now();
            let mut rec = self.coarse_step(model, &mut g, step)?;
            if self.probing(step, self.cfg.coarse_steps) {
                rec.probe_mse = self.probe(Stage::Coarse, |s| model.render(self.body, None, s, 0))?;
            }
            log(&rec, clock.elapsed().as_secs_f64())?;
        }
        Ok(())
    }

    pub fn init_fine(&self, coarse: &CoarseModel) -> Result<FineModel> {
        let (_, sampler, grid) = init_from_coarse(
            &coarse.field,
            self.body,
            Some(&coarse.occupancy),
            self.cfg.surface_resolution,
            &self.cfg.tet,
            mix_seed(self.cfg.seed, 3),
        )?;
        Ok(FineModel {
            sampler,
            grid,
            color: coarse.field.clone(),
            background: coarse.background.clone(),
        })
    }

    pub fn train_fine(&mut self, model: &mut FineModel, mut log: impl FnMut(&StepRecord, f64) -> Result<()>) -> Result<()> {
        let mut g = FineGrads {
            grid: model.grid.zeros_like(),
            color: model.color.zeros_like(),
            background: model.background.zeros_like(),
            adam_grid: AdamState::new(),
            adam_color: AdamState::new(),
            adam_background: AdamState::new(),
        };
        for step in 0..self.cfg.fine_steps {
            let clock = Instant::now();
            let mut rec = self.fine_step(model, &mut g, step)?;
            if self.probing(step, self.cfg.fine_steps) {
                let skinner = &self.skinner;
                rec.probe_mse = self.probe(Stage::Fine, |s| Ok(model.render(self.body, skinner, &Pose::canonical(), s)?.image))?;
            }
            log(&rec, clock.elapsed().as_secs_f64())?;
        }
        Ok(())
    }

    pub fn skinner(&self) -> &Skinner {
        &self.skinner
    }
}

struct Logs {
    metrics: BufWriter<File>,
    timing: BufWriter<File>,
}

impl Logs {
    fn write(&mut self, rec: &StepRecord, seconds: f64) -> Result<()> {
        serde_json::to_writer(&mut self.metrics, rec)?;
        self.metrics.write_all(b"\n")?;
        let t = serde_json::json!({ "stage": rec.stage, "step": rec.step, "seconds": seconds });
        serde_json::to_writer(&mut self.timing, &t)?;
        self.timing.write_all(b"\n")?;
        if rec.step % 50 == 0 {
            log::info!("{:?} step {} sds {:.4e} total {:.4e}", rec.stage, rec.step, rec.sds, rec.total);
        }
        Ok(())
    }
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(m)?)?;
    Ok(())
}

/// Full coarse-to-fine optimization, writing checkpoints, meshes and logs into `out`.
/// On failure the manifest records how far the run got.
pub fn run(cfg: &TrainConfig, prompt: &PromptSpec, guidance: &dyn ScoreModel, body: &BodyModel, out: &Path) -> Result<RunArtifacts> {
    std::fs::create_dir_all(out)?;
    let mut manifest = Manifest::default();
    let result = run_inner(cfg, prompt, guidance, body, out, &mut manifest);
    if let Err(e) = &result {
        manifest.complete = false;
        manifest.error = Some(e.to_string());
    }
    write_manifest(out, &manifest)?;
    result
}

fn run_inner(
    cfg: &TrainConfig,
    prompt: &PromptSpec,
    guidance: &dyn ScoreModel,
    body: &BodyModel,
    out: &Path,
    manifest: &mut Manifest,
) -> Result<RunArtifacts> {
    let mut trainer = Trainer::new(cfg.clone(), body, prompt.clone(), guidance)?;
    std::fs::write(out.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    std::fs::write(out.join("prompt.json"), serde_json::to_string_pretty(prompt)?)?;
    manifest.files = vec!["config.json".into(), "prompt.json".into(), "metrics.jsonl".into(), "timing.jsonl".into()];
    write_manifest(out, manifest)?;
    let metrics_log = out.join("metrics.jsonl");
    let mut logs = Logs {
        metrics: BufWriter::new(File::create(&metrics_log)?),
        timing: BufWriter::new(File::create(out.join("timing.jsonl"))?),
    };

    let mut coarse = CoarseModel::new(cfg, body);
    let res = trainer.train_coarse(&mut coarse, |r, s| {
        manifest.coarse_steps = r.step + 1;
        logs.write(r, s)
    });
    manifest.skipped_steps = trainer.skipped_total;
    logs.metrics.flush()?;
    logs.timing.flush()?;
    res?;
    let coarse_checkpoint = out.join("coarse.avsc");
    coarse.checkpoint().save(&coarse_checkpoint)?;
    manifest.files.push("coarse.avsc".into());
    write_manifest(out, manifest)?;

    let mut fine = trainer.init_fine(&coarse)?;
    write_ply(out.join("coarse_mesh.ply"), fine.sampler.mesh(), None)?;
    manifest.files.push("coarse_mesh.ply".into());
    let res = trainer.train_fine(&mut fine, |r, s| {
        manifest.fine_steps = r.step + 1;
        logs.write(r, s)
    });
    manifest.skipped_steps = trainer.skipped_total;
    logs.metrics.flush()?;
    logs.timing.flush()?;
    res?;

    let fine_checkpoint = out.join("fine.avsc");
    fine.checkpoint().save(&fine_checkpoint)?;
    let surface = fine.surface()?;
    let mesh = out.join("avatar.ply");
    write_ply(&mesh, &surface.mesh, Some(&surface.colors))?;
    manifest.files.extend(["fine.avsc".into(), "avatar.ply".into()]);
    manifest.complete = true;
    Ok(RunArtifacts {
        dir: out.to_path_buf(),
        coarse_checkpoint,
        fine_checkpoint,
        mesh,
        metrics_log,
        manifest: manifest.clone(),
        coarse,
        fine,
        surface,
    })
}

/// Part label of every surface vertex through its skinning binding.
pub fn surface_parts(body: &BodyModel, binding: &[usize]) -> Vec<u8> {
    binding.iter().map(|&v| body.part_labels[v]).collect()
}

/// Configuration, body and fine model of a finished run directory.
pub fn load_run(dir: &Path) -> Result<(TrainConfig, BodyModel, FineModel)> {
    let cfg: TrainConfig = serde_json::from_str(&std::fs::read_to_string(dir.join("config.json"))?)?;
    cfg.validate()?;
    let body = crate::body_model::generate_template(cfg.template_level);
    let fine = FineModel::from_checkpoint(&Checkpoint::load(dir.join("fine.avsc"))?, &cfg, &body)?;
    Ok((cfg, body, fine))
}
