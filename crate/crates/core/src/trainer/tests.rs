use super::*;
use crate::body_model::{generate_template, joint_limit, BodyPart, Pose, PoseLibrary, NUM_JOINTS};
use crate::guidance::Stage;
use crate::nn::Parameters;
use crate::volume_renderer::CameraSpec;

struct Flat(Vec<f64>);

impl Parameters for Flat {
    fn sections(&self) -> Vec<(String, &[f64])> {
        vec![("p".into(), &self.0[..])]
    }
    fn sections_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![("p".into(), &mut self.0[..])]
    }
}

fn cam(azimuth: f64, elevation: f64) -> CameraSpec {
    CameraSpec {
        azimuth,
        elevation,
        ..CameraSpec::default()
    }
}

#[test]
fn prompts_carry_view_and_part() {
    let spec = PromptSpec::named("Spiderman");
    let (pos, neg) = view_prompt(&spec, &cam(10.0, 0.0), Some(BodyPart::Head));
    assert_eq!(pos, "The headshot of Spiderman, front view, high quality, 8k uhd, realistic");
    assert_eq!(neg, "lowres, bad anatomy, bad hands, cropped, worst quality");
    assert_eq!(view_prompt(&spec, &cam(180.0, 0.0), None).0, "Spiderman, back view, high quality, 8k uhd, realistic");
    assert!(view_prompt(&spec, &cam(90.0, 0.0), None).0.contains("side view"));
    assert!(view_prompt(&spec, &cam(-100.0, 0.0), None).0.contains("side view"));
    assert!(view_prompt(&spec, &cam(200.0, 0.0), None).0.contains("back view"));
    assert!(view_prompt(&spec, &cam(0.0, 55.0), None).0.contains("overhead view"));
    let (pos, _) = view_prompt(&spec, &cam(0.0, 0.0), Some(BodyPart::LeftHand));
    assert!(pos.starts_with("The left hand of Spiderman"));
}

#[test]
fn part_views_follow_the_cadence() {
    let body = generate_template(0);
    let cfg = TrainConfig::default();
    let lib = PoseLibrary::builtin();
    for step in 0..30 {
        let ctx = sample_iteration_context(&cfg, &body, &lib, Stage::Coarse, step);
        assert_eq!(ctx.part.is_some(), step % 3 == 0, "step {step}");
        if ctx.space == Space::Canonical {
            assert_eq!(ctx.pose, Pose::canonical());
        }
        assert!((0.02..=0.98).contains(&ctx.t));
    }
}

#[test]
fn contexts_are_deterministic_per_step() {
    let body = generate_template(0);
    let cfg = TrainConfig::default();
    let lib = PoseLibrary::builtin();
    let a = sample_iteration_context(&cfg, &body, &lib, Stage::Fine, 17);
    let b = sample_iteration_context(&cfg, &body, &lib, Stage::Fine, 17);
    assert_eq!(a, b);
    let c = sample_iteration_context(&cfg, &body, &lib, Stage::Coarse, 17);
    assert_ne!(a.seed, c.seed);
}

#[test]
fn camera_draws_stay_in_range() {
    let body = generate_template(0);
    let mut cfg = TrainConfig::default();
    cfg.part_sr_every = 0;
    let lib = PoseLibrary::builtin();
    let mut canonical = 0;
    let n = 10_000;
    for step in 0..n {
        let ctx = sample_iteration_context(&cfg, &body, &lib, Stage::Coarse, step);
        let c = &ctx.camera;
        assert!((1.0..2.0).contains(&c.radius));
        assert!((-10.0..60.0).contains(&c.elevation));
        assert!((0.0..360.0).contains(&c.azimuth));
        assert!((55.0..65.0).contains(&c.fov));
        assert_eq!(c.width, if step < 5000 { 64 } else { 256 });
        canonical += (ctx.space == Space::Canonical) as usize;
        for j in 0..NUM_JOINTS {
            let lim = joint_limit(j);
            assert!(ctx.pose.joint_rot[j].iter().all(|v| v.abs() <= lim));
        }
    }
    let frac = canonical as f64 / n as f64;
    // binomial std at n = 10⁴ is 0.005
    assert!((frac - 0.5).abs() < 0.025, "{frac}");
}

#[test]
fn empty_library_falls_back_to_a_pose() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    assert_eq!(jittered_pose(&PoseLibrary::empty(), 0.0, &mut rng), Pose::canonical());
}

#[test]
fn resolution_schedule() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.resolution(Stage::Coarse, 0), 64);
    assert_eq!(cfg.resolution(Stage::Coarse, 4999), 64);
    assert_eq!(cfg.resolution(Stage::Coarse, 5000), 256);
    assert_eq!(cfg.resolution(Stage::Fine, 0), 512);
    assert_eq!((cfg.coarse_steps, cfg.fine_steps), (10_000, 3_000));
    assert_eq!((cfg.lambda_normal, cfg.lambda_laplacian, cfg.lambda_sds), (1e4, 1e4, 1.0));
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    assert!(TrainConfig::desk().validate().is_ok());
    let mut c = TrainConfig::default();
    c.batch = 2;
    assert!(c.validate().is_err());
    let mut c = TrainConfig::default();
    c.cameras.fov = [60.0, 50.0];
    assert!(c.validate().is_err());
    let json = serde_json::to_string(&TrainConfig::desk()).unwrap();
    let back: TrainConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(serde_json::to_string(&back).unwrap(), json);
    // missing keys take defaults
    let partial: TrainConfig = serde_json::from_str(r#"{"seed": 9}"#).unwrap();
    assert_eq!((partial.seed, partial.coarse_steps), (9, 10_000));
}

#[test]
fn adamw_first_step_moves_by_lr_times_sign() {
    let cfg = AdamConfig::default();
    let lr = 0.01;
    let mut p = Flat(vec![0.5, -0.25, 2.0]);
    let g = Flat(vec![3.0, -1e-3, 0.0]);
    let mut st = AdamState::new();
    adamw_step(&mut p, &g, &mut st, lr, &cfg).unwrap();
    let decay = 1.0 - lr * 0.01;
    assert!((p.0[0] - (0.5 * decay - lr)).abs() < 1e-12);
    assert!((p.0[1] - (-0.25 * decay + lr)).abs() < 1e-9);
    // zero gradient: only decoupled decay acts
    assert_eq!(p.0[2], 2.0 * decay);
}

#[test]
fn adamw_second_step_matches_hand_recurrence() {
    let cfg = AdamConfig::default();
    let (lr, g1, g2) = (0.05, 0.4, -1.2);
    let mut p = Flat(vec![1.0]);
    let mut st = AdamState::new();
    adamw_step(&mut p, &Flat(vec![g1]), &mut st, lr, &cfg).unwrap();
    adamw_step(&mut p, &Flat(vec![g2]), &mut st, lr, &cfg).unwrap();

    let (b1, b2, wd, eps) = (0.9, 0.99, 0.01, 1e-15);
    let mut x: f64 = 1.0;
    let (mut m, mut v) = (0.0, 0.0);
    for (t, g) in [(1, g1), (2, g2)] {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - f64::powi(b1, t));
        let vh = v / (1.0 - f64::powi(b2, t));
        x = x * (1.0 - lr * wd) - lr * mh / (vh.sqrt() + eps);
    }
    assert!((p.0[0] - x).abs() < 1e-14);
    assert_eq!(st.step, 2);
}

#[test]
fn adamw_rejects_mismatched_layouts() {
    let mut p = Flat(vec![0.0; 3]);
    let g = Flat(vec![0.0; 2]);
    assert!(adamw_step(&mut p, &g, &mut AdamState::new(), 0.1, &AdamConfig::default()).is_err());
    assert!(all_finite(&p));
    p.0[1] = f64::NAN;
    assert!(!all_finite(&p));
}

#[test]
fn invalid_run_still_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let body = generate_template(0);
    let guidance = ReferenceAvatar::new(std::sync::Arc::new(body.clone())).into_guidance();
    let mut cfg = TrainConfig::desk();
    cfg.batch = 4;
    assert!(run(&cfg, &PromptSpec::named("x"), &guidance, &body, dir.path()).is_err());
    let m: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert!(!m.complete);
    assert!(m.error.unwrap().contains("batch"));
}

#[test]
fn coarse_checkpoint_round_trip() {
    let body = generate_template(0);
    let mut cfg = TrainConfig::desk();
    cfg.occupancy_resolution = 16;
    let m = CoarseModel::new(&cfg, &body);
    let ck = m.checkpoint();
    let back = CoarseModel::from_checkpoint(&crate::checkpoint::Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), &cfg, &body).unwrap();
    // parameters are stored as f32
    for ((_, a), (_, b)) in m.field.sections().iter().zip(back.field.sections()) {
        assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-6 * x.abs().max(1.0)));
    }
}
