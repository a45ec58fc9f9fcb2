use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use avatar_core::body_model::{bone_transforms, generate_template, Motion, PoseRecord};
use avatar_core::guidance::{RemoteGuidance, ScoreModel};
use avatar_core::imaging::Image;
use avatar_core::mesh::io::{write_obj, write_ply};
use avatar_core::mesh::TriMesh;
use avatar_core::metrics::psnr;
use avatar_core::rasterizer::render_densepose;
use avatar_core::tet_field::Skinner;
use avatar_core::trainer::{evaluate, held_out_cameras, held_out_pose_view, load_run, run, PromptSpec, ReferenceAvatar, TrainConfig};
use avatar_core::volume_renderer::{Camera, CameraSpec};
use avatar_core::{Error, Result};

#[derive(Parser)]
#[command(name = "avatar", version, about = "Text-guided articulated avatar optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum GuidanceKind {
    /// Pulls renders toward the built-in reference avatar; needs no server.
    Mock,
    /// Queries a noise-prediction server over HTTP.
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum MeshFormat {
    Ply,
    Obj,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize an avatar for a prompt and write checkpoints, meshes and logs.
    Generate {
        #[arg(long)]
        prompt: String,
        /// JSON training config; missing keys take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Start from the small CPU configuration instead of the full schedule.
        #[arg(long)]
        desk: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "mock")]
        guidance: GuidanceKind,
        #[arg(long, env = "AVATAR_GUIDANCE_ENDPOINT", default_value = "http://127.0.0.1:8000")]
        endpoint: String,
        /// Seconds per guidance request.
        #[arg(long, default_value_t = 120)]
        timeout: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pose a trained avatar through a motion file.
    Animate {
        /// Run directory written by `generate`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also render every frame from this camera (JSON).
        #[arg(long)]
        camera: Option<PathBuf>,
    },
    /// Render the body's part map for a pose as a 16-bit PNG.
    Densepose {
        #[arg(long)]
        pose: Option<PathBuf>,
        #[arg(long)]
        camera: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        level: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR between two PNG images.
    Psnr { a: PathBuf, b: PathBuf },
    /// Score a run against the reference avatar on held-out views.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 128)]
        resolution: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the canonical avatar mesh.
    Export {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value = "ply")]
        format: MeshFormat,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn camera_or_default(path: Option<&Path>, look_at: avatar_core::math::Vec3) -> Result<CameraSpec> {
    match path {
        Some(p) => read_json(p),
        None => Ok(CameraSpec {
            radius: 1.8,
            width: 256,
            height: 256,
            look_at,
            ..CameraSpec::default()
        }),
    }
}

fn generate(
    prompt: String,
    config: Option<PathBuf>,
    desk: bool,
    seed: Option<u64>,
    guidance: GuidanceKind,
    endpoint: String,
    timeout: u64,
    out: PathBuf,
) -> Result<()> {
    let mut cfg = match (config, desk) {
        (Some(p), _) => read_json::<TrainConfig>(&p)?,
        (None, true) => TrainConfig::desk(),
        (None, false) => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let body = Arc::new(generate_template(cfg.template_level));
    let model: Box<dyn ScoreModel> = match guidance {
        GuidanceKind::Mock => Box::new(ReferenceAvatar::new(body.clone()).into_guidance()),
        GuidanceKind::Remote => Box::new(RemoteGuidance::new(&endpoint, Duration::from_secs(timeout))),
    };
    let artifacts = run(&cfg, &PromptSpec::named(&prompt), model.as_ref(), &body, &out)?;
    println!(
        "wrote {} ({} vertices, {} skipped steps)",
        artifacts.mesh.display(),
        artifacts.surface.mesh.vertices.len(),
        artifacts.manifest.skipped_steps
    );
    Ok(())
}

fn animate(run_dir: &Path, motion: &Path, out: &Path, camera: Option<&Path>) -> Result<()> {
    let (_, body, fine) = load_run(run_dir)?;
    let motion = Motion::load(motion)?;
    let surface = fine.surface()?;
    let skinner = Skinner::new(&body);
    let binding = skinner.bind(&body, &surface.mesh.vertices);
    let spec = camera.map(|p| camera_or_default(Some(p), body.bounds().center())).transpose()?;
    std::fs::create_dir_all(out)?;
    for (i, pose) in motion.poses()?.iter().enumerate() {
        let posed = skinner.pose(&body, &bone_transforms(&body, pose), &surface.mesh.vertices, &binding);
        let mesh = TriMesh::new(posed, surface.mesh.faces.clone());
        write_ply(out.join(format!("frame_{i:04}.ply")), &mesh, Some(&surface.colors))?;
        if let Some(spec) = &spec {
            fine.render(&body, &skinner, pose, spec)?.image.save_png(out.join(format!("frame_{i:04}.png")))?;
        }
    }
    println!("wrote {} frames to {}", motion.frames.len(), out.display());
    Ok(())
}

fn densepose(pose: Option<&Path>, camera: Option<&Path>, level: u32, out: &Path) -> Result<()> {
    if level > 3 {
        return Err(Error::InvalidInput("template level must be in 0..=3".into()));
    }
    let body = generate_template(level);
    let pose = match pose {
        Some(p) => PoseRecord::load(p)?,
        None => avatar_core::body_model::Pose::canonical(),
    };
    let spec = camera_or_default(camera, body.bounds().center())?;
    let (iuv, _) = render_densepose(&body, &pose, &Camera::from_spec(&spec)?)?;
    iuv.save_png16(out)?;
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate {
            prompt,
            config,
            desk,
            seed,
            guidance,
            endpoint,
            timeout,
            out,
        } => generate(prompt, config, desk, seed, guidance, endpoint, timeout, out),
        Command::Animate { run, motion, out, camera } => animate(&run, &motion, &out, camera.as_deref()),
        Command::Densepose { pose, camera, level, out } => densepose(pose.as_deref(), camera.as_deref(), level, &out),
        Command::Psnr { a, b } => Image::load_png_rgb(&a)
            .and_then(|ia| psnr(&ia, &Image::load_png_rgb(&b)?))
            .map(|v| println!("{v:.4}")),
        Command::Evaluate { run, resolution, out } => (|| {
            let (_, body, fine) = load_run(&run)?;
            let reference = ReferenceAvatar::new(Arc::new(body.clone()));
            let report = evaluate(
                &fine,
                &body,
                &reference,
                &held_out_cameras(&body, resolution),
                &[held_out_pose_view(&body, resolution)],
            )?;
            println!("{}", report.summary());
            if let Some(p) = out {
                std::fs::write(p, report.to_json()?)?;
            }
            Ok(())
        })(),
        Command::Export { run, format, out } => load_run(&run).and_then(|(_, _, fine)| {
            let s = fine.surface()?;
            match format {
                MeshFormat::Ply => write_ply(&out, &s.mesh, Some(&s.colors)),
                MeshFormat::Obj => write_obj(&out, &s.mesh),
            }
        }),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
