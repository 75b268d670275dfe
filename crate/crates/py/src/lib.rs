//! Python bindings for the rolling-shutter radiance field toolkit.
//!
//! Exposes the pipeline stages (synthesize, train, evaluate, render) plus the
//! small numeric primitives that are handy to poke at from Python: SE(3)
//! exp/log, pose-shift / PP-ratio arithmetic, and PSNR between float images.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rsfield::camera::{load_dataset, perturb_init_poses, save_dataset, synthesize_dataset};
use rsfield::config::SceneConfig;
use rsfield::io::read_image_pfm;
use rsfield::metrics::{evaluate, EvalOptions, ViewSet};
use rsfield::multisample::FlowDirection;
use rsfield::rng::derive_seed;
use rsfield::se3::{FramePoseParams, Pose, Twist};
use rsfield::trainer::{init_state, train_loop, Checkpoint, FlowSource, TrainConfig};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse_direction(direction: &str) -> PyResult<FlowDirection> {
    match direction {
        "forward" => Ok(FlowDirection::Forward),
        "backward" => Ok(FlowDirection::Backward),
        other => Err(PyValueError::new_err(format!(
            "direction must be 'forward' or 'backward', got '{other}'"
        ))),
    }
}

/// Camera pose shift between a row event and its correspondence in the
/// adjacent frame: H + drow forward, H - drow backward.
#[pyfunction]
fn pose_shift(h: usize, drow: f64, direction: &str) -> PyResult<f64> {
    Ok(rsfield::multisample::pose_shift(h, drow, parse_direction(direction)?))
}

/// PP-ratio: floor(pose shift / max(|dcol|, |drow|, 1)), clamped to
/// [0, rho_max] (rho_max defaults to H).
#[pyfunction]
#[pyo3(signature = (h, dcol, drow, direction, rho_max = None))]
fn pp_ratio(h: usize, dcol: f64, drow: f64, direction: &str, rho_max: Option<usize>) -> PyResult<usize> {
    Ok(rsfield::multisample::pp_ratio(
        h,
        dcol,
        drow,
        parse_direction(direction)?,
        rho_max.unwrap_or(h),
    ))
}

/// SE(3) exponential: 6 twist components -> 12 floats (row-major rotation,
/// then translation).
#[pyfunction]
fn se3_exp(xi: [f64; 6]) -> [f64; 12] {
    rsfield::se3::exp(Twist::from_array(xi)).to_floats()
}

/// SE(3) logarithm: 12 pose floats -> 6 twist components.
#[pyfunction]
fn se3_log(pose: [f64; 12]) -> PyResult<[f64; 6]> {
    let pose = Pose::from_floats(&pose).map_err(err)?;
    Ok(rsfield::se3::log(&pose).map_err(err)?.to_array())
}

/// PSNR in dB between two float PFM images.
#[pyfunction]
fn psnr_pfm(path_a: PathBuf, path_b: PathBuf) -> PyResult<f64> {
    let a = read_image_pfm(&path_a).map_err(err)?;
    let b = read_image_pfm(&path_b).map_err(err)?;
    rsfield::metrics::psnr(&a, &b).map_err(err)
}

/// Synthesizes an RS dataset from a scene config JSON into `out_dir`.
#[pyfunction]
#[pyo3(signature = (scene_config, out_dir, seed = None))]
fn synthesize(scene_config: PathBuf, out_dir: PathBuf, seed: Option<u64>) -> PyResult<usize> {
    let mut config = SceneConfig::from_path(&scene_config).map_err(err)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let scene = config.scene();
    let traj = config.trajectory_spec();
    let k = config.intrinsics();
    let opts = config.synthesis_options();
    let mut dataset = synthesize_dataset(&scene, &traj, &k, &opts).map_err(err)?;
    if config.noise_scale > 0.0 {
        dataset = perturb_init_poses(
            &dataset,
            config.noise_scale,
            derive_seed(config.seed, "init-noise", 0),
        );
    }
    save_dataset(&dataset, &out_dir).map_err(err)?;
    Ok(dataset.frames.len())
}

fn train_config_from_json(config_json: Option<&str>) -> PyResult<TrainConfig> {
    match config_json {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string())),
        None => Ok(TrainConfig::default()),
    }
}

/// Trains a reconstruction. `config_json` holds a TrainConfig document;
/// keyword flags mirror the CLI ablation switches. Returns a summary dict.
#[pyfunction]
#[pyo3(signature = (dataset_dir, out_dir, config_json = None, no_smooth = false, no_ms = false,
                    n_pose = None, flow = None, iterations = None))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    dataset_dir: PathBuf,
    out_dir: PathBuf,
    config_json: Option<&str>,
    no_smooth: bool,
    no_ms: bool,
    n_pose: Option<usize>,
    flow: Option<&str>,
    iterations: Option<u64>,
) -> PyResult<Py<PyDict>> {
    let mut config = train_config_from_json(config_json)?;
    if no_smooth {
        config.lambda_smooth = 0.0;
    }
    if no_ms {
        config.ms_enabled = false;
    }
    if let Some(n) = n_pose {
        config.n_pose = Some(n);
    }
    match flow {
        Some("oracle") => config.flow_source = FlowSource::Oracle,
        Some("lk") => config.flow_source = FlowSource::Lk,
        Some(other) => {
            return Err(PyValueError::new_err(format!("flow must be oracle or lk, got '{other}'")))
        }
        None => {}
    }
    if let Some(it) = iterations {
        config.iterations = it;
    }
    config.validate().map_err(err)?;

    let dataset = load_dataset(&dataset_dir).map_err(err)?;
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(
        out_dir.join("resolved_config.json"),
        serde_json::to_string_pretty(&config).map_err(err)?,
    )?;
    let mut state = init_state(&dataset, &config).map_err(err)?;
    let log = train_loop(&dataset, &config, &mut state, None, Some(dataset_dir.as_path()))
        .map_err(err)?;
    let checkpoint = Checkpoint::from_state(&state, &dataset, &config);
    checkpoint.save(&out_dir).map_err(err)?;
    rsfield::trainer::write_log_csv(&log, &out_dir.join("train_log.csv")).map_err(err)?;

    let dict = PyDict::new(py);
    dict.set_item("iterations", state.iteration)?;
    if let Some(last) = log.last() {
        dict.set_item("photometric_loss", last.photometric_loss)?;
        dict.set_item("smoothness_loss", last.smoothness_loss)?;
        if let Some(m) = last.mste {
            dict.set_item("mste", m)?;
        }
    }
    Ok(dict.into())
}

/// Scores a checkpoint on both evaluation view sets; returns a nested dict.
#[pyfunction]
#[pyo3(signature = (checkpoint_dir, dataset_dir, n_steps = 192))]
fn evaluate_checkpoint(
    py: Python<'_>,
    checkpoint_dir: PathBuf,
    dataset_dir: PathBuf,
    n_steps: usize,
) -> PyResult<Py<PyDict>> {
    let checkpoint = Checkpoint::load(&checkpoint_dir).map_err(err)?;
    let dataset = load_dataset(&dataset_dir).map_err(err)?;
    let opts = EvalOptions { n_steps, ..EvalOptions::default() };
    let out = PyDict::new(py);
    for (name, set) in [("on", ViewSet::OnTrajectory), ("out", ViewSet::OutTrajectory)] {
        let (report, _) = evaluate(&checkpoint, &dataset, set, &opts).map_err(err)?;
        let entry = PyDict::new(py);
        entry.set_item("mean_psnr", report.mean_psnr)?;
        entry.set_item("mean_ssim", report.mean_ssim)?;
        entry.set_item("views", report.views.len())?;
        if let Some(m) = report.mste {
            out.set_item("mste", m)?;
        }
        out.set_item(name, entry)?;
    }
    Ok(out.into())
}

/// Renders a GS image at a 12-float pose into a PNG.
#[pyfunction]
#[pyo3(signature = (checkpoint_dir, pose, out_png, width = 64, height = 64,
                    near = 0.7, far = 2.6, n_steps = 192))]
#[allow(clippy::too_many_arguments)]
fn render_pose(
    checkpoint_dir: PathBuf,
    pose: [f64; 12],
    out_png: PathBuf,
    width: usize,
    height: usize,
    near: f64,
    far: f64,
    n_steps: usize,
) -> PyResult<()> {
    let checkpoint = Checkpoint::load(&checkpoint_dir).map_err(err)?;
    let pose = Pose::from_floats(&pose).map_err(err)?;
    let k = rsfield::render::Intrinsics {
        fx: width as f64,
        fy: width as f64,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        width,
        height,
    };
    let opts = rsfield::render::RenderOptions { n_steps, t_near: near, t_far: far };
    let image = rsfield::render::render_gs_image(&checkpoint.grid, &pose, &k, &opts, 4, 0);
    rsfield::io::write_png(&out_png, &image).map_err(err)
}

/// Interpolated row pose (12 floats) from a checkpoint's frame parameters.
#[pyfunction]
fn row_pose(checkpoint_dir: PathBuf, frame: usize, row: usize, height: usize) -> PyResult<[f64; 12]> {
    let checkpoint = Checkpoint::load(&checkpoint_dir).map_err(err)?;
    let params: &FramePoseParams = checkpoint
        .pose_params
        .get(frame)
        .ok_or_else(|| PyValueError::new_err(format!("frame {frame} out of range")))?;
    let pose = rsfield::se3::interpolate_row_pose(params, row, height, checkpoint.n_pose)
        .map_err(err)?;
    Ok(pose.to_floats())
}

fn dataset_exists(dir: &Path) -> bool {
    dir.join("manifest.json").exists()
}

/// Frame count of a dataset on disk, or -1 when absent.
#[pyfunction]
fn dataset_frames(dataset_dir: PathBuf) -> PyResult<i64> {
    if !dataset_exists(&dataset_dir) {
        return Ok(-1);
    }
    let ds = load_dataset(&dataset_dir).map_err(err)?;
    Ok(ds.frames.len() as i64)
}

#[pymodule]
fn rsfield_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(pose_shift, m)?)?;
    m.add_function(wrap_pyfunction!(pp_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(se3_exp, m)?)?;
    m.add_function(wrap_pyfunction!(se3_log, m)?)?;
    m.add_function(wrap_pyfunction!(psnr_pfm, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_checkpoint, m)?)?;
    m.add_function(wrap_pyfunction!(render_pose, m)?)?;
    m.add_function(wrap_pyfunction!(row_pose, m)?)?;
    m.add_function(wrap_pyfunction!(dataset_frames, m)?)?;
    Ok(())
}
