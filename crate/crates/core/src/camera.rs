//! Rolling-shutter image formation and dataset synthesis.
//!
//! An RS frame is composed row by row: row i comes from the global-shutter
//! render at that row's pose. Readout is top-to-bottom with instantaneous
//! per-row exposure. Time is measured in row-readout units; frame k starts at
//! k * (H + gap), so adjacent frames never overlap in time.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::AnalyticScene;
use crate::io::{self, Image};
use crate::math::Vec3;
use crate::multisample::FlowField;
use crate::render::{
    generate_ray, render_gs_image, render_ray, render_row, subpixel_offsets, Intrinsics,
    RenderOptions,
};
use crate::rng::{derive_seed, Rng64};
use crate::se3::{exp, floats_from_le_bytes, floats_to_le_bytes, log, Pose, Twist};

/// Continuous camera trajectory: piecewise-geodesic between control poses
/// (linear in twist space on each segment), timestamps in row-time units.
#[derive(Clone, Debug)]
pub struct TrajectorySpec {
    pub control: Vec<(f64, Pose)>,
    pub gap_rows: f64,
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        if self.control.len() < 2 {
            return Err(Error::InvalidConfig("trajectory needs at least 2 control poses".into()));
        }
        if self.gap_rows < 0.0 {
            return Err(Error::InvalidConfig("inter-frame gap must be >= 0 rows".into()));
        }
        for pair in self.control.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::InvalidConfig(
                    "trajectory timestamps must be strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn t_min(&self) -> f64 {
        self.control.first().map(|c| c.0).unwrap_or(0.0)
    }

    pub fn t_max(&self) -> f64 {
        self.control.last().map(|c| c.0).unwrap_or(0.0)
    }

    /// Pose at time `t` by geodesic interpolation within the containing
    /// segment.
    pub fn pose_at(&self, t: f64) -> Result<Pose> {
        let (t0, t1) = (self.t_min(), self.t_max());
        if t < t0 || t > t1 {
            return Err(Error::TrajectoryTooShort { time: t, t_min: t0, t_max: t1 });
        }
        let seg = self
            .control
            .windows(2)
            .position(|pair| t <= pair[1].0)
            .unwrap_or(self.control.len() - 2);
        let (ta, pa) = &self.control[seg];
        let (tb, pb) = &self.control[seg + 1];
        let tau = (t - ta) / (tb - ta);
        let delta = log(&pa.inverse().compose(pb))?;
        Ok(pa.compose(&exp(delta.scaled(tau))))
    }
}

/// One rolling-shutter frame: the composed image, the frozen optimization
/// anchor, and (synthetic data) the ground-truth endpoint poses.
#[derive(Clone, Debug)]
pub struct RSFrame {
    pub image: Image,
    pub init_pose: Pose,
    pub gt_start_pose: Option<Pose>,
    pub gt_end_pose: Option<Pose>,
}

/// Held-out evaluation view: a pose and its ground-truth GS render.
#[derive(Clone, Debug)]
pub struct EvalView {
    pub pose: Pose,
    pub gt: Image,
}

/// Forward (k -> k+1) and backward (k -> k-1) flow for frame k, where they
/// exist.
#[derive(Clone, Debug, Default)]
pub struct FrameFlows {
    pub fwd: Option<FlowField>,
    pub bwd: Option<FlowField>,
}

#[derive(Clone, Debug)]
pub struct RSDataset {
    pub frames: Vec<RSFrame>,
    pub intrinsics: Intrinsics,
    pub near: f64,
    pub far: f64,
    pub gap_rows: f64,
    pub flows: Vec<FrameFlows>,
    /// Ground-truth camera centers, frame-major then row-major.
    pub gt_row_centers: Option<Vec<Vec3>>,
    pub eval_on: Vec<EvalView>,
    pub eval_out: Vec<EvalView>,
    pub seed: u64,
}

impl RSDataset {
    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }
}

pub struct SynthesisOptions {
    /// Quadrature steps for ground-truth renders; higher than training.
    pub n_steps: usize,
    /// Sub-pixel samples per pixel for all ground-truth renders.
    pub spp: usize,
    pub near: f64,
    pub far: f64,
    pub seed: u64,
    pub frame_count: usize,
    /// Held-out poses for out-of-trajectory evaluation.
    pub out_views: Vec<Pose>,
}

/// Stacks H single-row renders into an image: output row i is input i.
/// Inputs must each carry exactly one row of 3 * width samples, rendered at
/// the i-th row's pose.
pub fn compose_rs(rows: &[Vec<f32>], width: usize, height: usize) -> Result<Image> {
    if rows.len() != height {
        return Err(Error::RowCountMismatch { expected: height, got: rows.len() });
    }
    let mut image = Image::new(width, height);
    for (v, row) in rows.iter().enumerate() {
        if row.len() != 3 * width {
            return Err(Error::RowCountMismatch { expected: 3 * width, got: row.len() });
        }
        image.set_row(v, row);
    }
    Ok(image)
}

fn row_time(h: usize, gap_rows: f64, frame: usize, row: f64) -> f64 {
    frame as f64 * (h as f64 + gap_rows) + row
}

/// Flow of one source pixel into an adjacent frame. The target pose depends
/// on the target row, which depends on the projection; a fixed-point
/// iteration over the target row resolves the implicit projection.
/// Returns None when the pixel sees no surface, the iteration diverges, or
/// the target lands outside the frame.
#[allow(clippy::too_many_arguments)]
fn flow_at_pixel(
    scene: &AnalyticScene,
    traj: &TrajectorySpec,
    k: &Intrinsics,
    opts: &RenderOptions,
    gap_rows: f64,
    src_frame: usize,
    dst_frame: usize,
    u: usize,
    v: usize,
    depth_seed: u64,
) -> Option<(f64, f64)> {
    let h = k.height;
    let src_pose = traj.pose_at(row_time(h, gap_rows, src_frame, v as f64)).ok()?;
    let ray = generate_ray(k, &src_pose, u, v, opts).ok()?;
    let res = render_ray(scene, &ray, opts.n_steps, depth_seed);
    if res.opacity < 0.5 {
        return None;
    }
    let point = ray.origin + ray.direction * res.expected_depth;

    let mut v_target = v as f64;
    for _ in 0..20 {
        let pose = traj.pose_at(row_time(h, gap_rows, dst_frame, v_target)).ok()?;
        let cam = pose.inverse().transform_point(point);
        if cam.z <= 1e-9 {
            return None;
        }
        let u_target = k.fx * cam.x / cam.z + k.cx - 0.5;
        let v_new = k.fy * cam.y / cam.z + k.cy - 0.5;
        let step = v_new - v_target;
        v_target = v_new;
        if step.abs() < 0.01 {
            // Small margin so border pixels that re-project onto the border
            // itself (within rounding) stay valid.
            let eps = 1e-6;
            let in_frame = u_target >= -eps
                && u_target <= (k.width - 1) as f64 + eps
                && v_target >= -eps
                && v_target <= (h - 1) as f64 + eps;
            if !in_frame {
                return None;
            }
            return Some((u_target - u as f64, v_target - v as f64));
        }
    }
    None
}

/// Dense oracle flow from `src_frame` toward `dst_frame` (must be adjacent).
pub fn oracle_flow(
    scene: &AnalyticScene,
    traj: &TrajectorySpec,
    k: &Intrinsics,
    opts: &RenderOptions,
    gap_rows: f64,
    src_frame: usize,
    dst_frame: usize,
    depth_seed: u64,
) -> FlowField {
    let mut field = FlowField::new(k.width, k.height);
    let rows: Vec<Vec<Option<(f64, f64)>>> = (0..k.height)
        .into_par_iter()
        .map(|v| {
            (0..k.width)
                .map(|u| {
                    flow_at_pixel(
                        scene, traj, k, opts, gap_rows, src_frame, dst_frame, u, v, depth_seed,
                    )
                })
                .collect()
        })
        .collect();
    for (v, row) in rows.iter().enumerate() {
        for (u, entry) in row.iter().enumerate() {
            match entry {
                Some((dcol, drow)) => field.set(u, v, *dcol as f32, *drow as f32, true),
                None => field.set(u, v, 0.0, 0.0, false),
            }
        }
    }
    field
}

/// Renders a complete RS dataset from an analytic scene along a ground-truth
/// trajectory: RS frames (each row at its own pose), middle-row pose
/// initializations, endpoint poses, per-row camera centers, oracle flows,
/// and ground-truth renders for both evaluation view sets.
pub fn synthesize_dataset(
    scene: &AnalyticScene,
    traj: &TrajectorySpec,
    k: &Intrinsics,
    opts: &SynthesisOptions,
) -> Result<RSDataset> {
    scene.validate()?;
    traj.validate()?;
    k.validate()?;
    if opts.frame_count == 0 {
        return Err(Error::InvalidConfig("frame count must be positive".into()));
    }
    let h = k.height;
    let last_time = row_time(h, traj.gap_rows, opts.frame_count - 1, (h - 1) as f64);
    if last_time > traj.t_max() || traj.t_min() > 0.0 {
        return Err(Error::TrajectoryTooShort {
            time: last_time,
            t_min: traj.t_min(),
            t_max: traj.t_max(),
        });
    }

    let render_opts = RenderOptions { n_steps: opts.n_steps, t_near: opts.near, t_far: opts.far };
    let offsets = subpixel_offsets(opts.spp);
    let synth_seed = derive_seed(opts.seed, "synth", 0);

    let mut frames = Vec::with_capacity(opts.frame_count);
    let mut gt_centers = Vec::with_capacity(opts.frame_count * h);
    for frame in 0..opts.frame_count {
        let row_poses: Result<Vec<Pose>> = (0..h)
            .map(|i| traj.pose_at(row_time(h, traj.gap_rows, frame, i as f64)))
            .collect();
        let row_poses = row_poses?;
        let rows: Vec<Vec<f32>> = (0..h)
            .into_par_iter()
            .map(|i| render_row(scene, &row_poses[i], k, i, &render_opts, &offsets, synth_seed))
            .collect();
        let image = compose_rs(&rows, k.width, h)?;
        let init_pose = traj.pose_at(row_time(h, traj.gap_rows, frame, (h - 1) as f64 / 2.0))?;
        for pose in &row_poses {
            gt_centers.push(pose.camera_center());
        }
        frames.push(RSFrame {
            image,
            init_pose,
            gt_start_pose: Some(row_poses[0]),
            gt_end_pose: Some(row_poses[h - 1]),
        });
    }

    let mut flows = vec![FrameFlows::default(); opts.frame_count];
    for frame in 0..opts.frame_count {
        if frame + 1 < opts.frame_count {
            flows[frame].fwd = Some(oracle_flow(
                scene, traj, k, &render_opts, traj.gap_rows, frame, frame + 1, synth_seed,
            ));
        }
        if frame > 0 {
            flows[frame].bwd = Some(oracle_flow(
                scene, traj, k, &render_opts, traj.gap_rows, frame, frame - 1, synth_seed,
            ));
        }
    }

    let eval_on = frames
        .iter()
        .map(|f| EvalView {
            pose: f.init_pose,
            gt: render_gs_image(scene, &f.init_pose, k, &render_opts, opts.spp, synth_seed),
        })
        .collect();
    let eval_out = opts
        .out_views
        .iter()
        .map(|pose| EvalView {
            pose: *pose,
            gt: render_gs_image(scene, pose, k, &render_opts, opts.spp, synth_seed),
        })
        .collect();

    Ok(RSDataset {
        frames,
        intrinsics: *k,
        near: opts.near,
        far: opts.far,
        gap_rows: traj.gap_rows,
        flows,
        gt_row_centers: Some(gt_centers),
        eval_on,
        eval_out,
        seed: opts.seed,
    })
}

/// Composes each frame's init pose with exp of a uniform twist in
/// [-scale, scale]^6. Ground truth is untouched.
pub fn perturb_init_poses(dataset: &RSDataset, scale: f64, seed: u64) -> RSDataset {
    let mut out = dataset.clone();
    if scale == 0.0 {
        return out;
    }
    let mut rng = Rng64::new(derive_seed(seed, "perturb", 0));
    for frame in out.frames.iter_mut() {
        let mut eps = [0.0; 6];
        for e in eps.iter_mut() {
            *e = rng.uniform_range(-scale, scale);
        }
        frame.init_pose = frame.init_pose.compose(&exp(Twist::from_array(eps)));
    }
    out
}

// --- on-disk format -------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct FrameEntry {
    image_png: String,
    image_pfm: String,
    init_pose: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_start_pose: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_end_pose: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct FlowEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fwd: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bwd: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct EvalEntry {
    pose: String,
    image_pfm: String,
    image_png: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    intrinsics: Intrinsics,
    near: f64,
    far: f64,
    gap_rows: f64,
    seed: u64,
    frames: Vec<FrameEntry>,
    flows: Vec<FlowEntry>,
    eval_on: Vec<EvalEntry>,
    eval_out: Vec<EvalEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_row_centers: Option<String>,
}

fn pose_to_b64(pose: &Pose) -> String {
    BASE64.encode(floats_to_le_bytes(&pose.to_floats()))
}

fn pose_from_b64(s: &str, path: &Path) -> Result<Pose> {
    let bytes = BASE64.decode(s).map_err(|e| Error::MalformedFile {
        path: path.display().to_string(),
        reason: format!("bad pose base64: {e}"),
    })?;
    Pose::from_floats(&floats_from_le_bytes(&bytes)?)
}

pub fn save_dataset(dataset: &RSDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut frames = Vec::new();
    for (i, frame) in dataset.frames.iter().enumerate() {
        let png = format!("rs_{i:03}.png");
        let pfm = format!("rs_{i:03}.pfm");
        io::write_png(&dir.join(&png), &frame.image)?;
        io::write_image_pfm(&dir.join(&pfm), &frame.image)?;
        frames.push(FrameEntry {
            image_png: png,
            image_pfm: pfm,
            init_pose: pose_to_b64(&frame.init_pose),
            gt_start_pose: frame.gt_start_pose.as_ref().map(pose_to_b64),
            gt_end_pose: frame.gt_end_pose.as_ref().map(pose_to_b64),
        });
    }
    let mut flows = Vec::new();
    for (i, flow) in dataset.flows.iter().enumerate() {
        let mut entry = FlowEntry { fwd: None, bwd: None };
        if let Some(f) = &flow.fwd {
            let name = format!("flow_{i:03}_fwd.pfm");
            f.save(&dir.join(&name))?;
            entry.fwd = Some(name);
        }
        if let Some(f) = &flow.bwd {
            let name = format!("flow_{i:03}_bwd.pfm");
            f.save(&dir.join(&name))?;
            entry.bwd = Some(name);
        }
        flows.push(entry);
    }
    let save_views = |views: &[EvalView], stem: &str| -> Result<Vec<EvalEntry>> {
        let mut out = Vec::new();
        for (i, view) in views.iter().enumerate() {
            let pfm = format!("{stem}_{i:02}.pfm");
            let png = format!("{stem}_{i:02}.png");
            io::write_image_pfm(&dir.join(&pfm), &view.gt)?;
            io::write_png(&dir.join(&png), &view.gt)?;
            out.push(EvalEntry { pose: pose_to_b64(&view.pose), image_pfm: pfm, image_png: png });
        }
        Ok(out)
    };
    let eval_on = save_views(&dataset.eval_on, "eval_on")?;
    let eval_out = save_views(&dataset.eval_out, "eval_out")?;

    let gt_row_centers = match &dataset.gt_row_centers {
        Some(centers) => {
            let name = "gt_row_centers.bin".to_string();
            let mut bytes = Vec::with_capacity(centers.len() * 24);
            for c in centers {
                for coord in c.to_array() {
                    bytes.extend_from_slice(&coord.to_le_bytes());
                }
            }
            fs::write(dir.join(&name), bytes)?;
            Some(name)
        }
        None => None,
    };

    let manifest = Manifest {
        intrinsics: dataset.intrinsics,
        near: dataset.near,
        far: dataset.far,
        gap_rows: dataset.gap_rows,
        seed: dataset.seed,
        frames,
        flows,
        eval_on,
        eval_out,
        gt_row_centers,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<RSDataset> {
    let manifest_path = dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    let mut frames = Vec::new();
    for entry in &manifest.frames {
        frames.push(RSFrame {
            image: io::read_image_pfm(&dir.join(&entry.image_pfm))?,
            init_pose: pose_from_b64(&entry.init_pose, &manifest_path)?,
            gt_start_pose: entry
                .gt_start_pose
                .as_ref()
                .map(|s| pose_from_b64(s, &manifest_path))
                .transpose()?,
            gt_end_pose: entry
                .gt_end_pose
                .as_ref()
                .map(|s| pose_from_b64(s, &manifest_path))
                .transpose()?,
        });
    }
    let mut flows = Vec::new();
    for entry in &manifest.flows {
        flows.push(FrameFlows {
            fwd: entry.fwd.as_ref().map(|n| FlowField::load(&dir.join(n))).transpose()?,
            bwd: entry.bwd.as_ref().map(|n| FlowField::load(&dir.join(n))).transpose()?,
        });
    }
    let load_views = |entries: &[EvalEntry]| -> Result<Vec<EvalView>> {
        entries
            .iter()
            .map(|e| {
                Ok(EvalView {
                    pose: pose_from_b64(&e.pose, &manifest_path)?,
                    gt: io::read_image_pfm(&dir.join(&e.image_pfm))?,
                })
            })
            .collect()
    };
    let eval_on = load_views(&manifest.eval_on)?;
    let eval_out = load_views(&manifest.eval_out)?;
    let gt_row_centers = match &manifest.gt_row_centers {
        Some(name) => {
            let bytes = fs::read(dir.join(name))?;
            if bytes.len() % 24 != 0 {
                return Err(Error::MalformedFile {
                    path: name.clone(),
                    reason: "center blob not a multiple of 24 bytes".into(),
                });
            }
            Some(
                bytes
                    .chunks_exact(24)
                    .map(|c| {
                        Vec3::new(
                            f64::from_le_bytes(c[0..8].try_into().unwrap()),
                            f64::from_le_bytes(c[8..16].try_into().unwrap()),
                            f64::from_le_bytes(c[16..24].try_into().unwrap()),
                        )
                    })
                    .collect(),
            )
        }
        None => None,
    };
    Ok(RSDataset {
        frames,
        intrinsics: manifest.intrinsics,
        near: manifest.near,
        far: manifest.far,
        gap_rows: manifest.gap_rows,
        flows,
        gt_row_centers,
        eval_on,
        eval_out,
        seed: manifest.seed,
    })
}
