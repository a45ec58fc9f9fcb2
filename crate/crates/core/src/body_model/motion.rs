//! Pose files, motion sequences, and the named pose library.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{joint_index, Pose, NUM_JOINTS};
use crate::error::{Error, Result};
use crate::math::Vec3;

/// One pose as stored in pose and motion files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub rot: Vec<[f64; 3]>,
    #[serde(default)]
    pub trans: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Vec<f64>>,
}

impl PoseRecord {
    pub fn to_pose(&self) -> Result<Pose> {
        if self.rot.len() != NUM_JOINTS {
            return Err(Error::InvalidInput(format!(
                "pose needs {NUM_JOINTS} rotations, got {}",
                self.rot.len()
            )));
        }
        let mut pose = Pose::canonical();
        for (i, r) in self.rot.iter().enumerate() {
            pose.joint_rot[i] = Vec3::from(*r);
        }
        pose.root_translation = Vec3::from(self.trans);
        if let Some(s) = &self.scale {
            if s.len() != NUM_JOINTS {
                return Err(Error::InvalidInput("bone scale needs 24 entries".into()));
            }
            pose.bone_scale.copy_from_slice(s);
        }
        pose.validate()?;
        Ok(pose)
    }

    pub fn from_pose(pose: &Pose) -> Self {
        let unit = pose.bone_scale.iter().all(|&s| s == 1.0);
        Self {
            rot: pose.joint_rot.iter().map(|r| [r.x, r.y, r.z]).collect(),
            trans: [pose.root_translation.x, pose.root_translation.y, pose.root_translation.z],
            scale: (!unit).then(|| pose.bone_scale.to_vec()),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Pose> {
        let rec: PoseRecord = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        rec.to_pose()
    }
}

/// Motion file: `{"fps": f, "frames": [{"rot": [[ax,ay,az]×24], "trans": [x,y,z]}, ...]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Motion {
    pub fps: f64,
    pub frames: Vec<PoseRecord>,
}

impl Motion {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: Motion = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if !(m.fps > 0.0) {
            return Err(Error::InvalidInput("motion fps must be positive".into()));
        }
        Ok(m)
    }

    pub fn poses(&self) -> Result<Vec<Pose>> {
        self.frames.iter().map(PoseRecord::to_pose).collect()
    }
}

#[derive(Deserialize)]
struct LibraryEntry {
    name: String,
    joints: BTreeMap<String, [f64; 3]>,
}

#[derive(Deserialize)]
struct LibraryFile {
    poses: Vec<LibraryEntry>,
}

/// Named poses used for deformed-space training, plus per-joint rotation limits.
#[derive(Clone, Debug)]
pub struct PoseLibrary {
    pub names: Vec<String>,
    pub poses: Vec<Pose>,
}

static BUILTIN: &str = include_str!("../../assets/poses.json");

impl PoseLibrary {
    pub fn builtin() -> Self {
        Self::from_json_str(BUILTIN).expect("bundled pose library parses")
    }

    pub fn empty() -> Self {
        Self {
            names: Vec::new(),
            poses: Vec::new(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: LibraryFile = serde_json::from_str(s)?;
        let mut names = Vec::new();
        let mut poses = Vec::new();
        for e in file.poses {
            let mut pose = Pose::canonical();
            for (joint, r) in &e.joints {
                let j = joint_index(joint)
                    .ok_or_else(|| Error::InvalidInput(format!("unknown joint {joint:?} in pose {}", e.name)))?;
                pose.joint_rot[j] = Vec3::from(*r);
            }
            names.push(e.name);
            poses.push(pose);
        }
        Ok(Self { names, poses })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Pose> {
        self.names.iter().position(|n| n == name).map(|i| &self.poses[i])
    }
}

/// Per-component rotation limit (radians) applied after jittering library poses.
pub fn joint_limit(joint: usize) -> f64 {
    match joint {
        0 => std::f64::consts::PI,
        3 | 6 | 9 => 0.6,
        12 | 15 => 0.8,
        13 | 14 => 0.5,
        7 | 8 | 10 | 11 | 20 | 21 | 22 | 23 => 0.9,
        _ => 2.2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_library_has_enough_poses() {
        let lib = PoseLibrary::builtin();
        assert!(lib.len() >= 20);
        assert!(lib.get("t_pose").is_some());
        for p in &lib.poses {
            p.validate().unwrap();
        }
    }

    #[test]
    fn pose_record_requires_all_joints() {
        let rec = PoseRecord {
            rot: vec![[0.0; 3]; 3],
            trans: [0.0; 3],
            scale: None,
        };
        assert!(rec.to_pose().is_err());
    }
}
