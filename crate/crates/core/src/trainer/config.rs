use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::body_model::{joint_limit, part_camera, BodyModel, BodyPart, Pose, PoseLibrary, NUM_JOINTS};
use crate::coarse_field::FieldConfig;
use crate::error::{Error, Result};
use crate::guidance::{GuidanceConfig, Stage, TimestepConfig};
use crate::math::{mix_seed, Vec3};
use crate::tet_field::TetConfig;
use crate::volume_renderer::CameraSpec;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 0.01,
            eps: 1e-15,
        }
    }
}

/// Sampling ranges for orbit cameras; degrees for angles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraRanges {
    pub radius: [f64; 2],
    pub elevation: [f64; 2],
    pub azimuth: [f64; 2],
    pub fov: [f64; 2],
}

impl Default for CameraRanges {
    fn default() -> Self {
        Self {
            radius: [1.0, 2.0],
            elevation: [-10.0, 60.0],
            azimuth: [0.0, 360.0],
            fov: [55.0, 65.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub coarse_steps: usize,
    pub fine_steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub adam: AdamConfig,
    pub lambda_sds: f64,
    pub lambda_normal: f64,
    pub lambda_laplacian: f64,
    pub coarse_resolution: usize,
    pub coarse_resolution_late: usize,
    pub resolution_switch_step: usize,
    pub fine_resolution: usize,
    pub part_sr_every: usize,
    pub canonical_prob: f64,
    /// Standard deviation (radians) of per-component jitter on library poses.
    pub pose_jitter: f64,
    pub cameras: CameraRanges,
    pub guidance: GuidanceConfig,
    pub timesteps: TimestepConfig,
    pub field: FieldConfig,
    pub background_hidden: usize,
    /// Padding around the template's canonical bounds for the coarse field box.
    pub field_margin: f64,
    pub occupancy_resolution: usize,
    pub occupancy_every: usize,
    pub max_samples: usize,
    pub tet: TetConfig,
    /// Lattice resolution for extracting the coarse surface.
    pub surface_resolution: usize,
    pub template_level: u32,
    /// Consecutive non-finite steps tolerated before aborting.
    pub max_skipped: usize,
    /// Steps between fixed-view probe renders against the guidance reference (0 = off).
    pub probe_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            coarse_steps: 10_000,
            fine_steps: 3_000,
            batch: 1,
            lr: 0.01,
            adam: AdamConfig::default(),
            lambda_sds: 1.0,
            lambda_normal: 10_000.0,
            lambda_laplacian: 10_000.0,
            coarse_resolution: 64,
            coarse_resolution_late: 256,
            resolution_switch_step: 5_000,
            fine_resolution: 512,
            part_sr_every: 3,
            canonical_prob: 0.5,
            pose_jitter: 0.1,
            cameras: CameraRanges::default(),
            guidance: GuidanceConfig::default(),
            timesteps: TimestepConfig::default(),
            field: FieldConfig::default(),
            background_hidden: 32,
            field_margin: 0.1,
            occupancy_resolution: 64,
            occupancy_every: 16,
            max_samples: 192,
            tet: TetConfig::default(),
            surface_resolution: 128,
            template_level: 0,
            max_skipped: 50,
            probe_every: 0,
        }
    }
}

impl TrainConfig {
    /// Small configuration that runs on a laptop CPU against the mock oracle.
    pub fn desk() -> Self {
        let mut tet = TetConfig::default();
        tet.resolution = 48;
        Self {
            coarse_steps: 500,
            fine_steps: 300,
            fine_resolution: 128,
            tet,
            surface_resolution: 96,
            guidance: GuidanceConfig {
                cfg_scale: 1.0,
                ..GuidanceConfig::default()
            },
            probe_every: 50,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.batch != 1 {
            return bad("only batch size 1 is supported");
        }
        if !(self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.canonical_prob) {
            return bad("canonical_prob must lie in [0, 1]");
        }
        let c = &self.cameras;
        for (name, r) in [("radius", c.radius), ("elevation", c.elevation), ("azimuth", c.azimuth), ("fov", c.fov)] {
            if !(r[0] < r[1]) {
                return Err(Error::InvalidInput(format!("camera {name} range is empty")));
            }
        }
        if c.radius[0] <= 0.0 || c.fov[0] <= 0.0 || c.fov[1] >= 180.0 {
            return bad("camera radius and fov ranges must be physical");
        }
        if self.coarse_resolution == 0 || self.coarse_resolution_late == 0 || self.fine_resolution == 0 {
            return bad("resolutions must be positive");
        }
        if self.template_level > 3 {
            return bad("template_level must be in 0..=3");
        }
        if !(0.0..=1.0).contains(&self.guidance.rescale) {
            return bad("rescale factor must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn resolution(&self, stage: Stage, step: usize) -> usize {
        match stage {
            Stage::Coarse if step < self.resolution_switch_step => self.coarse_resolution,
            Stage::Coarse => self.coarse_resolution_late,
            Stage::Fine => self.fine_resolution,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptSpec {
    pub name: String,
    pub positive_suffix: String,
    pub negative: String,
}

impl Default for PromptSpec {
    fn default() -> Self {
        Self {
            name: "a person".into(),
            positive_suffix: "high quality, 8k uhd, realistic".into(),
            negative: "lowres, bad anatomy, bad hands, cropped, worst quality".into(),
        }
    }
}

impl PromptSpec {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_string(),
            ..Self::default()
        }
    }
}

fn part_phrase(part: BodyPart, name: &str) -> String {
    match part {
        BodyPart::Head => format!("The headshot of {name}"),
        BodyPart::LeftHand => format!("The left hand of {name}"),
        BodyPart::RightHand => format!("The right hand of {name}"),
        BodyPart::UpperBody => format!("The upper body of {name}"),
        BodyPart::LowerBody => format!("The lower body of {name}"),
        BodyPart::LeftArm => format!("The left arm of {name}"),
        BodyPart::RightArm => format!("The right arm of {name}"),
    }
}

/// Positive and negative prompt for a camera, with view-dependent wording.
pub fn view_prompt(spec: &PromptSpec, camera: &CameraSpec, part: Option<BodyPart>) -> (String, String) {
    let base = part.map_or_else(|| spec.name.clone(), |p| part_phrase(p, &spec.name));
    let az = (camera.azimuth + 180.0).rem_euclid(360.0) - 180.0;
    let view = if camera.elevation >= 50.0 {
        "overhead view"
    } else if (-45.0..45.0).contains(&az) {
        "front view"
    } else if !(-135.0..135.0).contains(&az) {
        "back view"
    } else {
        "side view"
    };
    let mut positive = format!("{base}, {view}");
    if !spec.positive_suffix.is_empty() {
        positive.push_str(", ");
        positive.push_str(&spec.positive_suffix);
    }
    (positive, spec.negative.clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Canonical,
    Deformed,
}

/// Everything drawn at random for one optimization step.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationContext {
    pub stage: Stage,
    pub step: usize,
    pub space: Space,
    pub pose: Pose,
    /// Camera at the stage's rendering resolution.
    pub camera: CameraSpec,
    pub part: Option<BodyPart>,
    pub t: f64,
    /// Seeds the diffusion noise and the renderer's sample jitter.
    pub seed: u64,
}

fn stage_salt(stage: Stage) -> u64 {
    match stage {
        Stage::Coarse => 0x636f61727365,
        Stage::Fine => 0x66696e65,
    }
}

fn uniform<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    rng.random_range(r[0]..r[1])
}

/// Library pose plus clamped gaussian jitter; jittered A-pose if the library is empty.
pub fn jittered_pose<R: Rng>(library: &PoseLibrary, sigma: f64, rng: &mut R) -> Pose {
    let mut pose = if library.is_empty() {
        log::warn!("pose library is empty; jittering the canonical pose");
        Pose::canonical()
    } else {
        library.poses[rng.random_range(0..library.len())].clone()
    };
    if sigma > 0.0 {
        let n = Normal::new(0.0, sigma).expect("positive sigma");
        for j in 0..NUM_JOINTS {
            let lim = joint_limit(j);
            let r = &mut pose.joint_rot[j];
            *r = Vec3::from_fn(|a, _| (r[a] + n.sample(rng)).clamp(-lim, lim));
        }
    }
    pose
}

pub fn sample_iteration_context(
    cfg: &TrainConfig,
    body: &BodyModel,
    library: &PoseLibrary,
    stage: Stage,
    step: usize,
) -> IterationContext {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(cfg.seed, stage_salt(stage)), step as u64));
    let canonical = rng.random::<f64>() < cfg.canonical_prob;
    let (space, pose) = if canonical {
        (Space::Canonical, Pose::canonical())
    } else {
        (Space::Deformed, jittered_pose(library, cfg.pose_jitter, &mut rng))
    };
    let res = cfg.resolution(stage, step);
    let c = &cfg.cameras;
    let mut camera = CameraSpec {
        radius: uniform(&mut rng, c.radius),
        elevation: uniform(&mut rng, c.elevation),
        azimuth: uniform(&mut rng, c.azimuth),
        fov: uniform(&mut rng, c.fov),
        width: res,
        height: res,
        look_at: body.bounds().center(),
    };
    let part = (cfg.part_sr_every > 0 && step % cfg.part_sr_every == 0).then(|| {
        let p = BodyPart::ALL[rng.random_range(0..BodyPart::ALL.len())];
        camera = part_camera(body, &pose, p, &camera);
        p
    });
    let t = crate::guidance::sample_timestep(&cfg.timesteps, step, stage, &mut rng);
    IterationContext {
        stage,
        step,
        space,
        pose,
        camera,
        part,
        t,
        seed: rng.random(),
    }
}
