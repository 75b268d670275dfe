//! Scene configuration: the JSON description a synthesis run starts from.
//! Unknown fields are rejected so typos fail loudly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{SynthesisOptions, TrajectorySpec};
use crate::error::{Error, Result};
use crate::field::{AnalyticScene, Primitive};
use crate::math::Vec3;
use crate::render::Intrinsics;
use crate::se3::Pose;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSpec {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    #[serde(default = "default_up")]
    pub up: [f64; 3],
}

fn default_up() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

impl PoseSpec {
    pub fn to_pose(&self) -> Pose {
        Pose::look_at(
            Vec3::from_array(self.position),
            Vec3::from_array(self.look_at),
            Vec3::from_array(self.up),
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlPose {
    pub time: f64,
    #[serde(flatten)]
    pub pose: PoseSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub gap_rows: f64,
    pub control: Vec<ControlPose>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

fn default_synth_steps() -> usize {
    512
}

fn default_spp() -> usize {
    4
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub name: String,
    pub seed: u64,
    pub frame_count: usize,
    /// (width, height) in pixels.
    pub image_size: [usize; 2],
    pub intrinsics: IntrinsicsConfig,
    pub near: f64,
    pub far: f64,
    #[serde(default = "default_synth_steps")]
    pub synth_n_steps: usize,
    #[serde(default = "default_spp")]
    pub spp: usize,
    /// Twist-space scale of the uniform noise applied to the initial poses.
    #[serde(default)]
    pub noise_scale: f64,
    pub primitives: Vec<Primitive>,
    pub trajectory: TrajectoryConfig,
    #[serde(default)]
    pub out_views: Vec<PoseSpec>,
}

impl SceneConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let config: SceneConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_count == 0 {
            return Err(Error::InvalidConfig("frame_count must be >= 1".into()));
        }
        if self.image_size[0] == 0 || self.image_size[1] == 0 {
            return Err(Error::InvalidConfig("image_size must be positive".into()));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::InvalidConfig("need 0 < near < far".into()));
        }
        if self.trajectory.control.len() < 2 {
            return Err(Error::InvalidConfig("trajectory needs at least 2 control poses".into()));
        }
        self.scene().validate()?;
        self.intrinsics().validate()?;
        Ok(())
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fx: self.intrinsics.fx,
            fy: self.intrinsics.fy,
            cx: self.intrinsics.cx,
            cy: self.intrinsics.cy,
            width: self.image_size[0],
            height: self.image_size[1],
        }
    }

    pub fn scene(&self) -> AnalyticScene {
        AnalyticScene { primitives: self.primitives.clone() }
    }

    pub fn trajectory_spec(&self) -> TrajectorySpec {
        TrajectorySpec {
            control: self
                .trajectory
                .control
                .iter()
                .map(|c| (c.time, c.pose.to_pose()))
                .collect(),
            gap_rows: self.trajectory.gap_rows,
        }
    }

    pub fn synthesis_options(&self) -> SynthesisOptions {
        SynthesisOptions {
            n_steps: self.synth_n_steps,
            spp: self.spp,
            near: self.near,
            far: self.far,
            seed: self.seed,
            frame_count: self.frame_count,
            out_views: self.out_views.iter().map(|p| p.to_pose()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "t",
        "seed": 1,
        "frame_count": 2,
        "image_size": [16, 16],
        "intrinsics": {"fx": 14.0, "fy": 14.0, "cx": 8.0, "cy": 8.0},
        "near": 0.3,
        "far": 2.0,
        "primitives": [
            {"shape": "box", "center": [0,0,0.4], "size": [0.5,0.5,0.05],
             "density": 30.0, "color": [0.5,0.5,0.5]}
        ],
        "trajectory": {
            "gap_rows": 8.0,
            "control": [
                {"time": 0.0, "position": [0,0,-1.2], "look_at": [0,0,0]},
                {"time": 100.0, "position": [0.05,0,-1.2], "look_at": [0,0,0]}
            ]
        }
    }"#;

    #[test]
    fn minimal_config_parses() {
        let config: SceneConfig = serde_json::from_str(MINIMAL).unwrap();
        config.validate().unwrap();
        assert_eq!(config.intrinsics().width, 16);
        assert_eq!(config.synth_n_steps, 512);
        assert_eq!(config.spp, 4);
        assert_eq!(config.trajectory_spec().control.len(), 2);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let with_extra = MINIMAL.replacen("\"name\"", "\"bogus\": 1, \"name\"", 1);
        assert!(serde_json::from_str::<SceneConfig>(&with_extra).is_err());
    }

    #[test]
    fn zero_frames_rejected() {
        let zero = MINIMAL.replacen("\"frame_count\": 2", "\"frame_count\": 0", 1);
        let config: SceneConfig = serde_json::from_str(&zero).unwrap();
        assert!(matches!(config.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn look_at_points_camera_at_target() {
        let spec = PoseSpec { position: [0.0, 0.0, -2.0], look_at: [0.0, 0.0, 1.0], up: default_up() };
        let pose = spec.to_pose();
        let forward = pose.rotate(Vec3::new(0.0, 0.0, 1.0));
        assert!((forward - Vec3::new(0.0, 0.0, 1.0)).max_abs() < 1e-12);
        assert!(pose.rotation.orthonormality_error() < 1e-12);
    }
}
