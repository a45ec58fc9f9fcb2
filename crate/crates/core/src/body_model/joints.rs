//! The 24-joint skeleton topology and body-part groupings.

use serde::{Deserialize, Serialize};

pub const NUM_JOINTS: usize = 24;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
];

/// Parent of each joint; the root is its own parent.
pub const PARENTS: [usize; NUM_JOINTS] = [
    0, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
];

pub const HEAD: usize = 15;

pub fn joint_index(name: &str) -> Option<usize> {
    JOINT_NAMES.iter().position(|n| *n == name)
}

/// Part label (1-based, 0 is background) for the region skinned mostly to `joint`.
#[inline]
pub fn part_label(joint: usize) -> u8 {
    joint as u8 + 1
}

/// Body regions used for zoomed-in crop cameras and part prompts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyPart {
    Head,
    LeftHand,
    RightHand,
    UpperBody,
    LowerBody,
    LeftArm,
    RightArm,
}

impl BodyPart {
    pub const ALL: [BodyPart; 7] = [
        BodyPart::Head,
        BodyPart::LeftHand,
        BodyPart::RightHand,
        BodyPart::UpperBody,
        BodyPart::LowerBody,
        BodyPart::LeftArm,
        BodyPart::RightArm,
    ];

    /// Joints whose centroid is the crop-camera target.
    pub fn joints(self) -> &'static [usize] {
        match self {
            BodyPart::Head => &[15],
            BodyPart::LeftHand => &[20, 22],
            BodyPart::RightHand => &[21, 23],
            BodyPart::UpperBody => &[3, 6, 9, 12, 13, 14],
            BodyPart::LowerBody => &[0, 1, 2, 4, 5, 7, 8, 10, 11],
            BodyPart::LeftArm => &[16, 18, 20],
            BodyPart::RightArm => &[17, 19, 21],
        }
    }

    /// Default multiplier applied to the base camera radius.
    pub fn zoom(self) -> f64 {
        match self {
            BodyPart::Head => 0.3,
            BodyPart::LeftHand | BodyPart::RightHand => 0.25,
            _ => 0.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BodyPart::Head => "head",
            BodyPart::LeftHand => "left_hand",
            BodyPart::RightHand => "right_hand",
            BodyPart::UpperBody => "upper_body",
            BodyPart::LowerBody => "lower_body",
            BodyPart::LeftArm => "left_arm",
            BodyPart::RightArm => "right_arm",
        }
    }
}

impl std::str::FromStr for BodyPart {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BodyPart::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown body part {s:?}"))
    }
}
