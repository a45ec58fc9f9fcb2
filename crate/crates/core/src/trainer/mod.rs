//! Coarse-to-fine optimization: context sampling, prompts, AdamW, and the
//! training loop with its on-disk artifacts.

mod config;
mod eval;
mod optim;
mod reference;
mod run;

pub use config::{
    jittered_pose, sample_iteration_context, view_prompt, AdamConfig, CameraRanges, IterationContext, PromptSpec, Space,
    TrainConfig,
};
pub use eval::{evaluate, held_out_cameras, held_out_pose, held_out_pose_view, held_out_views, View};
pub use optim::{adamw_step, all_finite, AdamState};
pub use reference::ReferenceAvatar;
pub use run::{
    field_bounds, load_run, probe_camera, run, surface_parts, CoarseModel, FineModel, FineRender, Manifest, RunArtifacts, StepRecord,
    Trainer,
};

#[cfg(test)]
mod tests;
