//! Joint optimization of the radiance grid and the per-frame endpoint twists.
//!
//! Each iteration samples rows and pixels from every frame, renders the batch
//! at the (possibly multi-sampled) row poses, adds the trajectory smoothness
//! term, and takes one Adam step. All randomness derives from the config
//! seed, and every reduction is ordered, so a run is bit-reproducible
//! regardless of worker count.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::camera::RSDataset;
use crate::error::{Error, Result};
use crate::field::RadianceGrid;
use crate::math::{Aabb, Vec3};
use crate::metrics::mste;
use crate::multisample::{
    build_ppratio_map, lk_flow, sample_pose_index, FlowField, LkConfig, PPRatioConfig, PPRatioMap,
};
use crate::optim::{adam_step, AdamMoments};
use crate::render::{render_batch_with_grads, BatchRay, BatchRenderInputs, RenderOptions};
use crate::rng::{derive_seed, Rng64};
use crate::se3::{
    exp_translation_jacobian, floats_from_le_bytes, floats_to_le_bytes, interpolate_row_pose,
    trajectory_vector, FramePoseParams, Pose, Twist,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowSource {
    Oracle,
    Lk,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: u64,
    pub rows_per_image: usize,
    pub pixels_per_row: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    /// The voxel substitution for the MLP needs larger steps than the pose
    /// twists; grid updates use lr * grid_lr_scale.
    pub grid_lr_scale: f64,
    /// Pose twists take lr * pose_lr_scale steps.
    pub pose_lr_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lambda_smooth: f64,
    /// Poses per frame; None means one per row (H).
    pub n_pose: Option<usize>,
    pub ms_enabled: bool,
    pub ms_disable_fraction: f64,
    /// PP-ratio cap; None means H.
    pub rho_max: Option<usize>,
    pub flow_source: FlowSource,
    pub n_steps: usize,
    pub grid_resolution: [usize; 3],
    pub grid_bounds_min: [f64; 3],
    pub grid_bounds_max: [f64; 3],
    pub init_raw_density: f64,
    pub freeze_poses: bool,
    pub fd_step: f64,
    pub log_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 20_000,
            rows_per_image: 64,
            pixels_per_row: 2,
            lr_init: 5e-4,
            lr_final: 5e-6,
            grid_lr_scale: 20.0,
            pose_lr_scale: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            lambda_smooth: 0.1,
            n_pose: None,
            ms_enabled: true,
            ms_disable_fraction: 0.75,
            rho_max: None,
            flow_source: FlowSource::Oracle,
            n_steps: 128,
            grid_resolution: [64, 64, 64],
            grid_bounds_min: [-0.5, -0.5, -0.5],
            grid_bounds_max: [0.5, 0.5, 0.5],
            init_raw_density: -2.0,
            freeze_poses: false,
            fd_step: 1e-5,
            log_every: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows_per_image == 0 || self.pixels_per_row == 0 || self.n_steps == 0 {
            return Err(Error::InvalidConfig("counts must be positive".into()));
        }
        if !(self.ms_disable_fraction > 0.0 && self.ms_disable_fraction <= 1.0) {
            return Err(Error::InvalidConfig("ms_disable_fraction must be in (0, 1]".into()));
        }
        if self.lambda_smooth < 0.0 {
            return Err(Error::InvalidConfig("lambda_smooth must be >= 0".into()));
        }
        if self.lr_init <= 0.0 || self.lr_final <= 0.0 {
            return Err(Error::InvalidConfig("learning rates must be positive".into()));
        }
        if let Some(n) = self.n_pose {
            if n == 0 {
                return Err(Error::InvalidConfig("n_pose must be >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn grid_bounds(&self) -> Aabb {
        Aabb::new(Vec3::from_array(self.grid_bounds_min), Vec3::from_array(self.grid_bounds_max))
    }

    pub fn lr_at(&self, iteration: u64) -> f64 {
        if self.iterations == 0 {
            return self.lr_init;
        }
        let t = iteration as f64 / self.iterations as f64;
        self.lr_init * (self.lr_final / self.lr_init).powf(t)
    }
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub grid: RadianceGrid,
    pub pose_params: Vec<FramePoseParams>,
    pub iteration: u64,
    density_moments: AdamMoments,
    color_moments: AdamMoments,
    pose_moments: AdamMoments,
}

impl TrainState {
    /// Replaces the grid (e.g. with a scene-matched initialization) and
    /// resets the optimizer moments to match its shape.
    pub fn set_grid(&mut self, grid: RadianceGrid) {
        let n = grid.node_count();
        self.density_moments = AdamMoments::zeros(n);
        self.color_moments = AdamMoments::zeros(3 * n);
        self.grid = grid;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: u64,
    pub photometric_loss: f64,
    pub smoothness_loss: f64,
    pub lr: f64,
    pub mste: Option<f64>,
}

pub fn init_state(dataset: &RSDataset, config: &TrainConfig) -> Result<TrainState> {
    config.validate()?;
    if dataset.frames.is_empty() {
        return Err(Error::InvalidConfig("dataset has no frames".into()));
    }
    let grid = RadianceGrid::new(config.grid_resolution, config.grid_bounds(), config.init_raw_density)?;
    let pose_params: Vec<FramePoseParams> = dataset
        .frames
        .iter()
        .map(|f| FramePoseParams::at_anchor(f.init_pose))
        .collect();
    let n = grid.node_count();
    Ok(TrainState {
        density_moments: AdamMoments::zeros(n),
        color_moments: AdamMoments::zeros(3 * n),
        pose_moments: AdamMoments::zeros(12 * pose_params.len()),
        grid,
        pose_params,
        iteration: 0,
    })
}

/// Builds per-frame PP-ratio maps from the configured flow source, loading
/// per-frame caches from `cache_dir` when present and writing them otherwise.
pub fn build_ppratio_maps(
    dataset: &RSDataset,
    config: &TrainConfig,
    cache_dir: Option<&Path>,
) -> Result<Vec<PPRatioMap>> {
    let h = dataset.height();
    let rho_max = config.rho_max.unwrap_or(h);
    let tag = match config.flow_source {
        FlowSource::Oracle => "oracle",
        FlowSource::Lk => "lk",
    };
    let mut maps = Vec::with_capacity(dataset.frames.len());
    for k in 0..dataset.frames.len() {
        let cache = cache_dir.map(|d| d.join(format!("ppratio_{k:03}_{tag}.pfm")));
        if let Some(path) = &cache {
            if path.exists() {
                maps.push(PPRatioMap::load(path)?);
                continue;
            }
        }
        let (fwd, bwd): (Option<FlowField>, Option<FlowField>) = match config.flow_source {
            FlowSource::Oracle => {
                let flows = dataset.flows.get(k).ok_or_else(|| {
                    Error::InvalidConfig("dataset has no oracle flows; use the lk flow source".into())
                })?;
                (flows.fwd.clone(), flows.bwd.clone())
            }
            FlowSource::Lk => {
                let lk_cfg = LkConfig::default();
                let fwd = if k + 1 < dataset.frames.len() {
                    Some(lk_flow(&dataset.frames[k].image, &dataset.frames[k + 1].image, &lk_cfg)?)
                } else {
                    None
                };
                let bwd = if k > 0 {
                    Some(lk_flow(&dataset.frames[k].image, &dataset.frames[k - 1].image, &lk_cfg)?)
                } else {
                    None
                };
                (fwd, bwd)
            }
        };
        let map = match (fwd.as_ref(), bwd.as_ref()) {
            (None, None) => PPRatioMap::zeros(dataset.width(), h),
            _ => build_ppratio_map(fwd.as_ref(), bwd.as_ref(), h, &PPRatioConfig { rho_max })?,
        };
        if let Some(path) = &cache {
            map.save(path)?;
        }
        maps.push(map);
    }
    Ok(maps)
}

/// Draws the per-iteration batch: `rows_per_image` distinct rows per frame
/// (all rows when H is smaller), `pixels_per_row` pixels per row. Targets
/// always come from the pixel's own row; only the pose index moves under
/// multi-sampling.
pub fn sample_batch(
    dataset: &RSDataset,
    maps: Option<&[PPRatioMap]>,
    config: &TrainConfig,
    rng: &mut Rng64,
    ms_active: bool,
) -> Vec<BatchRay> {
    let h = dataset.height();
    let w = dataset.width();
    let rows = config.rows_per_image.min(h);
    let mut batch = Vec::with_capacity(dataset.frames.len() * rows * config.pixels_per_row);
    for (frame, fr) in dataset.frames.iter().enumerate() {
        let chosen = rng.sample_without_replacement(h, rows);
        for v in chosen {
            for _ in 0..config.pixels_per_row {
                let u = rng.uniform_int(0, w as i64 - 1) as usize;
                let pose_row = if ms_active {
                    let (rho_bwd, rho_fwd) = maps
                        .and_then(|m| m.get(frame))
                        .map(|m| m.get(u, v))
                        .unwrap_or((0, 0));
                    sample_pose_index(v, rho_bwd, rho_fwd, h, rng)
                } else {
                    v
                };
                let t = fr.image.pixel(u, v);
                batch.push(BatchRay {
                    frame,
                    u,
                    v,
                    pose_row,
                    target: [t[0] as f64, t[1] as f64, t[2] as f64],
                });
            }
        }
    }
    batch
}

fn normalize_with_grad(d: Vec3) -> Option<(Vec3, [[f64; 3]; 3])> {
    let len = d.norm();
    if len < 1e-8 {
        return None;
    }
    let n = d / len;
    let mut jac = [[0.0; 3]; 3];
    let n_arr = n.to_array();
    for (i, row) in jac.iter_mut().enumerate() {
        for (j, e) in row.iter_mut().enumerate() {
            let delta = if i == j { 1.0 } else { 0.0 };
            *e = (delta - n_arr[i] * n_arr[j]) / len;
        }
    }
    Some((n, jac))
}

/// Transpose-multiply: J^T v for a 3x3 row-major matrix.
fn mat_t_vec3(m: &[[f64; 3]; 3], v: Vec3) -> Vec3 {
    Vec3::new(
        m[0][0] * v.x + m[1][0] * v.y + m[2][0] * v.z,
        m[0][1] * v.x + m[1][1] * v.y + m[2][1] * v.z,
        m[0][2] * v.x + m[1][2] * v.y + m[2][2] * v.z,
    )
}

/// Camera centers of the endpoint rows with their derivatives w.r.t. the
/// owning twist (3x6, through anchor rotation and the exp translation).
fn endpoint_center_with_jacobian(anchor: &Pose, xi: Twist) -> (Vec3, [[f64; 6]; 3]) {
    let t_local = crate::se3::exp(xi).translation;
    let center = anchor.transform_point(t_local);
    let local_jac = exp_translation_jacobian(xi);
    // Rotate each column into world frame.
    let mut jac = [[0.0; 6]; 3];
    for col in 0..6 {
        let c = anchor.rotation.mul_vec(Vec3::new(
            local_jac[0][col],
            local_jac[1][col],
            local_jac[2][col],
        ));
        let arr = c.to_array();
        for (row, jrow) in jac.iter_mut().enumerate() {
            jrow[col] = arr[row];
        }
    }
    (center, jac)
}

/// Trajectory smoothness term: for each adjacent frame pair, the unit
/// mid-exposure direction must match the mean of the two unit intra-frame
/// directions. Returns the mean per-pair squared error and its analytic
/// gradient w.r.t. every endpoint twist. Pairs with any near-zero direction
/// contribute nothing.
pub fn smoothness_loss(pose_params: &[FramePoseParams]) -> Result<(f64, Vec<[f64; 12]>)> {
    if pose_params.len() < 2 {
        return Err(Error::TooFewFrames);
    }
    let n_frames = pose_params.len();
    let mut grads = vec![[0.0f64; 12]; n_frames];
    let mut total = 0.0;
    let n_pairs = (n_frames - 1) as f64;

    // Precompute endpoint centers and their twist Jacobians.
    let mut starts = Vec::with_capacity(n_frames);
    let mut ends = Vec::with_capacity(n_frames);
    for p in pose_params {
        starts.push(endpoint_center_with_jacobian(&p.anchor, p.xi_start));
        ends.push(endpoint_center_with_jacobian(&p.anchor, p.xi_end));
    }

    for k in 0..n_frames - 1 {
        let d_k = trajectory_vector(&pose_params[k]);
        let d_next = trajectory_vector(&pose_params[k + 1]);
        let d_mid = starts[k + 1].0 - ends[k].0;
        let (Some((n_k, j_k)), Some((n_next, j_next)), Some((n_mid, j_mid))) = (
            normalize_with_grad(d_k),
            normalize_with_grad(d_next),
            normalize_with_grad(d_mid),
        ) else {
            continue;
        };
        let e = n_mid - (n_k + n_next) * 0.5;
        total += e.norm_squared();

        // d loss_pair / d n_mid = 2 e ; d / d n_k = d / d n_{k+1} = -e.
        let g_mid = mat_t_vec3(&j_mid, e * 2.0);
        let g_k = mat_t_vec3(&j_k, -e);
        let g_next = mat_t_vec3(&j_next, -e);

        // Scatter through the direction definitions:
        //   d_k   = end_k   - start_k
        //   d_mid = start_{k+1} - end_k
        //   d_{k+1} = end_{k+1} - start_{k+1}
        let mut scatter = |frame: usize, endpoint_start: bool, g: Vec3| {
            let jac = if endpoint_start { &starts[frame].1 } else { &ends[frame].1 };
            let offset = if endpoint_start { 0 } else { 6 };
            let g_arr = g.to_array();
            for col in 0..6 {
                let mut acc = 0.0;
                for (row, jrow) in jac.iter().enumerate() {
                    acc += jrow[col] * g_arr[row];
                }
                grads[frame][offset + col] += acc;
            }
        };
        scatter(k, false, g_k * 1.0 + g_mid * -1.0); // end_k appears in d_k (+) and d_mid (-)
        scatter(k, true, -g_k); // start_k in d_k (-)
        scatter(k + 1, false, g_next); // end_{k+1} in d_{k+1} (+)
        scatter(k + 1, true, g_mid + g_next * -1.0); // start_{k+1} in d_mid (+), d_{k+1} (-)
    }

    let scale = 1.0 / n_pairs;
    for g in grads.iter_mut() {
        for e in g.iter_mut() {
            *e *= scale;
        }
    }
    Ok((total * scale, grads))
}

/// Camera centers of every (frame, row) pair under the current estimates,
/// frame-major then row-major, matching the ground-truth layout.
pub fn estimated_row_centers(
    pose_params: &[FramePoseParams],
    h: usize,
    n_pose: usize,
) -> Result<Vec<Vec3>> {
    let mut centers = Vec::with_capacity(pose_params.len() * h);
    for params in pose_params {
        for i in 0..h {
            centers.push(interpolate_row_pose(params, i, h, n_pose)?.camera_center());
        }
    }
    Ok(centers)
}

/// Runs the optimization loop on an initialized state. `maps` overrides the
/// PP-ratio maps (tests use zeroed maps to force degeneration); None builds
/// them from the config's flow source when multi-sampling is on.
pub fn train_loop(
    dataset: &RSDataset,
    config: &TrainConfig,
    state: &mut TrainState,
    maps: Option<Vec<PPRatioMap>>,
    cache_dir: Option<&Path>,
) -> Result<Vec<LogRow>> {
    config.validate()?;
    let h = dataset.height();
    let n_pose = config.n_pose.unwrap_or(h).min(h);
    let maps = match (config.ms_enabled, maps) {
        (false, _) => None,
        (true, Some(m)) => Some(m),
        (true, None) => Some(build_ppratio_maps(dataset, config, cache_dir)?),
    };
    let render_opts = RenderOptions {
        n_steps: config.n_steps,
        t_near: dataset.near,
        t_far: dataset.far,
    };
    let ms_cutoff = (config.ms_disable_fraction * config.iterations as f64).floor() as u64;
    let mut log = Vec::new();

    for t in 0..config.iterations {
        let lr = config.lr_at(t);
        let ms_active = config.ms_enabled && t < ms_cutoff;
        let mut batch_rng = Rng64::new(derive_seed(config.seed, "batch", t));
        let batch = sample_batch(dataset, maps.as_deref(), config, &mut batch_rng, ms_active);

        let inputs = BatchRenderInputs {
            grid: &state.grid,
            pose_params: &state.pose_params,
            intrinsics: &dataset.intrinsics,
            options: &render_opts,
            n_pose,
            jitter_seed: derive_seed(config.seed, "jitter", t),
            fd_step: config.fd_step,
            compute_pose_grads: !config.freeze_poses,
        };
        let grads = render_batch_with_grads(&inputs, &batch)?;

        let (smooth, smooth_grads) = if config.lambda_smooth > 0.0 && state.pose_params.len() >= 2 {
            smoothness_loss(&state.pose_params)?
        } else {
            (0.0, vec![[0.0; 12]; state.pose_params.len()])
        };

        let total = grads.loss + config.lambda_smooth * smooth;
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: t });
        }

        let step = t + 1;
        adam_step(
            &mut state.grid.raw_density,
            &grads.grid_grad.d_raw_density,
            &mut state.density_moments,
            step,
            lr * config.grid_lr_scale,
            config.beta1,
            config.beta2,
            config.epsilon,
        );
        adam_step(
            &mut state.grid.raw_color,
            &grads.grid_grad.d_raw_color,
            &mut state.color_moments,
            step,
            lr * config.grid_lr_scale,
            config.beta1,
            config.beta2,
            config.epsilon,
        );
        if !config.freeze_poses {
            let mut flat_params = Vec::with_capacity(12 * state.pose_params.len());
            let mut flat_grads = Vec::with_capacity(12 * state.pose_params.len());
            for (k, p) in state.pose_params.iter().enumerate() {
                flat_params.extend_from_slice(&p.twists_to_array());
                for c in 0..12 {
                    flat_grads
                        .push(grads.pose_grads[k][c] + config.lambda_smooth * smooth_grads[k][c]);
                }
            }
            adam_step(
                &mut flat_params,
                &flat_grads,
                &mut state.pose_moments,
                step,
                lr * config.pose_lr_scale,
                config.beta1,
                config.beta2,
                config.epsilon,
            );
            for (k, p) in state.pose_params.iter_mut().enumerate() {
                let mut arr = [0.0; 12];
                arr.copy_from_slice(&flat_params[12 * k..12 * (k + 1)]);
                p.set_twists_from_array(&arr);
            }
        }
        state.iteration = t + 1;

        if t % config.log_every == 0 || t + 1 == config.iterations {
            let mste_val = match &dataset.gt_row_centers {
                Some(gt) => {
                    let est = estimated_row_centers(&state.pose_params, h, n_pose)?;
                    Some(mste(&est, gt)?)
                }
                None => None,
            };
            log.push(LogRow {
                iteration: t,
                photometric_loss: grads.loss,
                smoothness_loss: smooth,
                lr,
                mste: mste_val,
            });
        }
    }
    Ok(log)
}

/// Initializes and trains; the usual entry point.
pub fn train(dataset: &RSDataset, config: &TrainConfig) -> Result<(TrainState, Vec<LogRow>)> {
    let mut state = init_state(dataset, config)?;
    let log = train_loop(dataset, config, &mut state, None, None)?;
    Ok((state, log))
}

pub fn write_log_csv(log: &[LogRow], path: &Path) -> Result<()> {
    let mut out = String::from("iteration,photometric_loss,smoothness_loss,lr,mste\n");
    for row in log {
        let mste = row.mste.map(|m| format!("{m:.12e}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{:.12e},{:.12e},{:.12e},{}\n",
            row.iteration, row.photometric_loss, row.smoothness_loss, row.lr, mste
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

// --- checkpoints -----------------------------------------------------------

/// Trained artifacts: the grid plus per-frame pose parameterizations.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub grid: RadianceGrid,
    pub pose_params: Vec<FramePoseParams>,
    pub n_pose: usize,
}

#[derive(Serialize, Deserialize)]
struct PoseEntry {
    anchor: String,
    xi_start: [f64; 6],
    xi_end: [f64; 6],
}

#[derive(Serialize, Deserialize)]
struct PosesFile {
    n_pose: usize,
    frames: Vec<PoseEntry>,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState, dataset: &RSDataset, config: &TrainConfig) -> Self {
        Checkpoint {
            grid: state.grid.clone(),
            pose_params: state.pose_params.clone(),
            n_pose: config.n_pose.unwrap_or(dataset.height()).min(dataset.height()),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.grid.save(&dir.join("grid.rsfgrid"))?;
        let frames = self
            .pose_params
            .iter()
            .map(|p| PoseEntry {
                anchor: BASE64.encode(floats_to_le_bytes(&p.anchor.to_floats())),
                xi_start: p.xi_start.to_array(),
                xi_end: p.xi_end.to_array(),
            })
            .collect();
        let file = PosesFile { n_pose: self.n_pose, frames };
        fs::write(dir.join("poses.json"), serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let grid = RadianceGrid::load(&dir.join("grid.rsfgrid"))?;
        let poses_path = dir.join("poses.json");
        let file: PosesFile = serde_json::from_str(&fs::read_to_string(&poses_path)?)?;
        let mut pose_params = Vec::with_capacity(file.frames.len());
        for entry in &file.frames {
            let bytes = BASE64.decode(&entry.anchor).map_err(|e| Error::MalformedFile {
                path: poses_path.display().to_string(),
                reason: format!("bad anchor base64: {e}"),
            })?;
            pose_params.push(FramePoseParams {
                anchor: Pose::from_floats(&floats_from_le_bytes(&bytes)?)?,
                xi_start: Twist::from_array(entry.xi_start),
                xi_end: Twist::from_array(entry.xi_end),
            });
        }
        Ok(Checkpoint { grid, pose_params, n_pose: file.n_pose })
    }
}
