//! Command-line pipeline: synth, train, eval, render, flow.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rsfield::camera::{load_dataset, perturb_init_poses, save_dataset, synthesize_dataset};
use rsfield::config::SceneConfig;
use rsfield::error::Error;
use rsfield::io::{write_image_pfm, write_png, Image};
use rsfield::metrics::{evaluate, write_report_csv, write_trajectory_csv, EvalOptions, ViewSet};
use rsfield::multisample::lk_flow;
use rsfield::render::{render_gs_image, RenderOptions};
use rsfield::rng::derive_seed;
use rsfield::se3::{interpolate_row_pose, Pose};
use rsfield::trainer::{
    build_ppratio_maps, init_state, train_loop, write_log_csv, Checkpoint, FlowSource, TrainConfig,
};

#[derive(Parser)]
#[command(name = "rsfield", about = "Rolling-shutter radiance field toolkit", version)]
struct Cli {
    /// Overrides the seed found in scene or train configs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps the worker thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize an RS dataset from a scene config.
    Synth {
        /// Scene config JSON.
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a reconstruction on a dataset.
    Train(TrainArgs),
    /// Score a checkpoint against a dataset's evaluation views.
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ray-march steps for evaluation renders.
        #[arg(long, default_value_t = 192)]
        n_steps: usize,
    },
    /// Render a GS image from a checkpoint at a requested pose.
    Render {
        checkpoint: PathBuf,
        /// Either 12 comma-separated floats (row-major rotation then
        /// translation) or frame:<k>:row:<v> referencing checkpoint poses.
        pose: String,
        #[arg(long)]
        out: PathBuf,
        /// Also write a float PFM next to the PNG.
        #[arg(long)]
        pfm: bool,
        #[arg(long, default_value_t = 192)]
        n_steps: usize,
        #[arg(long, default_value_t = 0.2)]
        near: f64,
        #[arg(long, default_value_t = 3.0)]
        far: f64,
        /// Image size as WxH; defaults to 64x64.
        #[arg(long, default_value = "64x64")]
        size: String,
    },
    /// Compute and cache optical flow and PP-ratio maps for a dataset.
    Flow {
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = FlowArg::Oracle)]
        method: FlowArg,
    },
}

#[derive(Args)]
struct TrainArgs {
    dataset: PathBuf,
    /// Train config JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Disable the trajectory smoothness regularizer.
    #[arg(long)]
    no_smooth: bool,
    /// Disable PP-ratio multi-sampling.
    #[arg(long)]
    no_ms: bool,
    /// Number of poses per frame (default: one per row).
    #[arg(long)]
    n_pose: Option<usize>,
    /// Flow provider for the PP-ratio maps.
    #[arg(long, value_enum)]
    flow: Option<FlowArg>,
    #[arg(long)]
    iterations: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FlowArg {
    Oracle,
    Lk,
}

impl From<FlowArg> for FlowSource {
    fn from(f: FlowArg) -> FlowSource {
        match f {
            FlowArg::Oracle => FlowSource::Oracle,
            FlowArg::Lk => FlowSource::Lk,
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) | Error::Json(_) | Error::MalformedFile { .. } => 2,
        Error::Synthesis(_) | Error::TrajectoryTooShort { .. } => 3,
        Error::NonFiniteLoss { .. } => 4,
        Error::IncompatibleCheckpoint(_) | Error::CountMismatch { .. } => 5,
        _ => 1,
    }
}

fn cmd_synth(scene_path: &Path, out: &Path, seed: Option<u64>) -> rsfield::Result<()> {
    let mut config = SceneConfig::from_path(scene_path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let scene = config.scene();
    let traj = config.trajectory_spec();
    let k = config.intrinsics();
    let opts = config.synthesis_options();
    let mut dataset = synthesize_dataset(&scene, &traj, &k, &opts)?;
    if config.noise_scale > 0.0 {
        dataset = perturb_init_poses(&dataset, config.noise_scale, derive_seed(config.seed, "init-noise", 0));
    }
    save_dataset(&dataset, out)?;
    let span = traj.t_max() - traj.t_min();
    println!(
        "synthesized '{}': {} frames at {}x{}, gap {} rows, trajectory span {:.1} row-times, {} out-trajectory views -> {}",
        config.name,
        dataset.frames.len(),
        k.width,
        k.height,
        dataset.gap_rows,
        span,
        dataset.eval_out.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train(args: &TrainArgs, seed: Option<u64>) -> rsfield::Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str::<TrainConfig>(&text)?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    if args.no_smooth {
        config.lambda_smooth = 0.0;
    }
    if args.no_ms {
        config.ms_enabled = false;
    }
    if let Some(n) = args.n_pose {
        config.n_pose = Some(n);
    }
    if let Some(f) = args.flow {
        config.flow_source = f.into();
    }
    if let Some(it) = args.iterations {
        config.iterations = it;
    }
    config.validate()?;

    if !args.dataset.exists() {
        return Err(Error::InvalidConfig(format!(
            "dataset directory not found: {}",
            args.dataset.display()
        )));
    }
    let dataset = load_dataset(&args.dataset)?;
    std::fs::create_dir_all(&args.out)?;
    // Resolved config first: provenance even for aborted runs.
    std::fs::write(args.out.join("resolved_config.json"), serde_json::to_string_pretty(&config)?)?;
    let started = std::time::SystemTime::now();

    let mut state = init_state(&dataset, &config)?;
    let log = train_loop(&dataset, &config, &mut state, None, Some(args.dataset.as_path()))?;
    let checkpoint = Checkpoint::from_state(&state, &dataset, &config);
    checkpoint.save(&args.out)?;
    write_log_csv(&log, &args.out.join("train_log.csv"))?;

    // Timestamps stay out of the reproducible outputs.
    let elapsed = started.elapsed().map(|d| d.as_secs_f64()).unwrap_or(0.0);
    std::fs::write(
        args.out.join("run_info.txt"),
        format!("wall_seconds: {elapsed:.1}\n"),
    )?;
    if let Some(last) = log.last() {
        println!(
            "trained {} iterations: photometric {:.5e}, smoothness {:.5e}{} -> {}",
            state.iteration,
            last.photometric_loss,
            last.smoothness_loss,
            last.mste.map(|m| format!(", mste {m:.5e}")).unwrap_or_default(),
            args.out.display()
        );
    } else {
        println!("trained 0 iterations -> {}", args.out.display());
    }
    Ok(())
}

fn cmd_eval(checkpoint_dir: &Path, dataset_dir: &Path, out: &Path, n_steps: usize) -> rsfield::Result<()> {
    let checkpoint = Checkpoint::load(checkpoint_dir)?;
    let dataset = load_dataset(dataset_dir)?;
    std::fs::create_dir_all(out)?;
    let opts = EvalOptions { n_steps, ..EvalOptions::default() };

    let mut reports = Vec::new();
    for set in [ViewSet::OnTrajectory, ViewSet::OutTrajectory] {
        let (report, renders) = evaluate(&checkpoint, &dataset, set, &opts)?;
        let views = match set {
            ViewSet::OnTrajectory => &dataset.eval_on,
            ViewSet::OutTrajectory => &dataset.eval_out,
        };
        for (i, render) in renders.iter().enumerate() {
            let stem = format!("{}_{i:02}", set.label());
            write_png(&out.join(format!("{stem}_render.png")), render)?;
            write_image_pfm(&out.join(format!("{stem}_render.pfm")), render)?;
            write_png(&out.join(format!("{stem}_strip.png")), &comparison_strip(&views[i].gt, render))?;
        }
        println!(
            "{}-trajectory: mean psnr {:.2} dB, mean ssim {:.4} over {} views",
            set.label(),
            report.mean_psnr,
            report.mean_ssim,
            report.views.len()
        );
        reports.push(report);
    }
    write_report_csv(&[&reports[0], &reports[1]], &out.join("report.csv"))?;
    write_trajectory_csv(&reports[0], &out.join("trajectory_report.csv"))?;
    if let Some(m) = reports[0].mste {
        println!("trajectory mste {m:.6e}");
    }
    Ok(())
}

/// Side-by-side [ground truth | render | 4x abs difference].
fn comparison_strip(gt: &Image, render: &Image) -> Image {
    let mut strip = Image::new(gt.width * 3, gt.height);
    for v in 0..gt.height {
        for u in 0..gt.width {
            let g = gt.pixel(u, v);
            let r = render.pixel(u, v);
            strip.set_pixel(u, v, g);
            strip.set_pixel(u + gt.width, v, r);
            let d = [
                ((g[0] - r[0]).abs() * 4.0).min(1.0),
                ((g[1] - r[1]).abs() * 4.0).min(1.0),
                ((g[2] - r[2]).abs() * 4.0).min(1.0),
            ];
            strip.set_pixel(u + 2 * gt.width, v, d);
        }
    }
    strip
}

fn parse_pose_spec(spec: &str, checkpoint: &Checkpoint, height: usize) -> rsfield::Result<Pose> {
    if let Some(rest) = spec.strip_prefix("frame:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 || parts[1] != "row" {
            return Err(Error::InvalidConfig(format!(
                "pose reference must be frame:<k>:row:<v>, got '{spec}'"
            )));
        }
        let frame: usize = parts[0]
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad frame index '{}'", parts[0])))?;
        let row: usize = parts[2]
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad row index '{}'", parts[2])))?;
        let params = checkpoint
            .pose_params
            .get(frame)
            .ok_or_else(|| Error::InvalidConfig(format!("frame {frame} out of range")))?;
        return interpolate_row_pose(params, row, height, checkpoint.n_pose);
    }
    let floats: Vec<f64> = spec
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidConfig(format!("pose spec is not a float list: '{spec}'")))?;
    if floats.len() != 12 {
        return Err(Error::InvalidConfig(format!(
            "pose spec needs 12 floats, got {}",
            floats.len()
        )));
    }
    let mut arr = [0.0; 12];
    arr.copy_from_slice(&floats);
    Pose::from_floats(&arr)
}

#[allow(clippy::too_many_arguments)]
fn cmd_render(
    checkpoint_dir: &Path,
    pose_spec: &str,
    out: &Path,
    pfm: bool,
    n_steps: usize,
    near: f64,
    far: f64,
    size: &str,
) -> rsfield::Result<()> {
    let checkpoint = Checkpoint::load(checkpoint_dir)?;
    let (width, height) = size
        .split_once('x')
        .and_then(|(w, h)| Some((w.parse().ok()?, h.parse().ok()?)))
        .ok_or_else(|| Error::InvalidConfig(format!("bad --size '{size}'")))?;
    let pose = parse_pose_spec(pose_spec, &checkpoint, height)?;
    let k = rsfield::render::Intrinsics {
        fx: width as f64,
        fy: width as f64,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        width,
        height,
    };
    let opts = RenderOptions { n_steps, t_near: near, t_far: far };
    let image = render_gs_image(&checkpoint.grid, &pose, &k, &opts, 4, 0);
    write_png(out, &image)?;
    if pfm {
        write_image_pfm(&out.with_extension("pfm"), &image)?;
    }
    println!("rendered {}x{} -> {}", width, height, out.display());
    Ok(())
}

fn cmd_flow(dataset_dir: &Path, method: FlowArg) -> rsfield::Result<()> {
    let dataset = load_dataset(dataset_dir)?;
    if matches!(method, FlowArg::Lk) {
        let lk_cfg = rsfield::multisample::LkConfig::default();
        for k in 0..dataset.frames.len().saturating_sub(1) {
            let fwd = lk_flow(&dataset.frames[k].image, &dataset.frames[k + 1].image, &lk_cfg)?;
            fwd.save(&dataset_dir.join(format!("flow_lk_{k:03}_fwd.pfm")))?;
            let bwd = lk_flow(&dataset.frames[k + 1].image, &dataset.frames[k].image, &lk_cfg)?;
            bwd.save(&dataset_dir.join(format!("flow_lk_{:03}_bwd.pfm", k + 1)))?;
        }
    }
    let config = TrainConfig {
        flow_source: method.into(),
        ..TrainConfig::default()
    };
    let maps = build_ppratio_maps(&dataset, &config, Some(dataset_dir))?;
    println!(
        "cached {} pp-ratio maps ({}) next to {}",
        maps.len(),
        match method {
            FlowArg::Oracle => "oracle flow",
            FlowArg::Lk => "lucas-kanade flow",
        },
        dataset_dir.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> rsfield::Result<()> {
    match &cli.command {
        Command::Synth { scene, out } => cmd_synth(scene, out, cli.seed),
        Command::Train(args) => cmd_train(args, cli.seed),
        Command::Eval { checkpoint, dataset, out, n_steps } => {
            cmd_eval(checkpoint, dataset, out, *n_steps)
        }
        Command::Render { checkpoint, pose, out, pfm, n_steps, near, far, size } => {
            cmd_render(checkpoint, pose, out, *pfm, *n_steps, *near, *far, size)
        }
        Command::Flow { dataset, method } => cmd_flow(dataset, *method),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: could not configure {threads} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
