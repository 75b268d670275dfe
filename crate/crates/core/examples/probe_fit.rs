//! Diagnostic: photometric residual of the ideal model (true scene, ground
//! truth poses) under the training ray/batch path, split by cause.

use std::path::Path;

use rsfield::camera::load_dataset;
use rsfield::config::SceneConfig;
use rsfield::field::{Field, RadianceGrid};
use rsfield::render::{generate_ray, render_ray_color, RenderOptions};
use rsfield::rng::hash_u64;
use rsfield::se3::log;
use rsfield::trainer::TrainConfig;

fn frame_mse<F: Field>(
    field: &F,
    ds: &rsfield::camera::RSDataset,
    scene: &SceneConfig,
    opts: &RenderOptions,
    frame: usize,
) -> f64 {
    let traj = scene.trajectory_spec();
    let h = ds.height();
    let period = h as f64 + ds.gap_rows;
    let mut total = 0.0;
    let mut n = 0;
    for v in (0..h).step_by(2) {
        let pose = traj.pose_at(frame as f64 * period + v as f64).unwrap();
        for u in (0..ds.width()).step_by(2) {
            let ray = generate_ray(&ds.intrinsics, &pose, u, v, opts).unwrap();
            let rgb = render_ray_color(field, &ray, opts.n_steps, hash_u64(3, (v * 64 + u) as u64));
            let t = ds.frames[frame].image.pixel(u, v);
            for ch in 0..3 {
                let e = rgb[ch] - t[ch] as f64;
                total += e * e;
            }
            n += 1;
        }
    }
    total / n as f64
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let ds = load_dataset(Path::new(&args[1])).unwrap();
    let scene = SceneConfig::from_path(Path::new(&args[2])).unwrap();
    let text = std::fs::read_to_string("configs/train_boxes.json").unwrap();
    let config: TrainConfig = serde_json::from_str(&text).unwrap();

    let train_opts = RenderOptions { n_steps: config.n_steps, t_near: ds.near, t_far: ds.far };
    let hi_opts = RenderOptions { n_steps: 640, t_near: ds.near, t_far: ds.far };

    let analytic = scene.scene();
    println!("analytic field, train n_steps={}: frame0 mse {:.5e}", config.n_steps, frame_mse(&analytic, &ds, &scene, &train_opts, 0));
    println!("analytic field, synth n_steps=640: frame0 mse {:.5e}", frame_mse(&analytic, &ds, &scene, &hi_opts, 0));

    for res in [[64usize, 64, 32], [96, 96, 40], [160, 160, 56]] {
        let grid = RadianceGrid::bake_from_scene(&analytic, res, config.grid_bounds(), 3).unwrap();
        println!(
            "baked {res:?}, train n_steps: frame0 mse {:.5e}",
            frame_mse(&grid, &ds, &scene, &train_opts, 0)
        );
    }

    // How far are the GT endpoint twists from the anchors?
    for k in [0usize, 1, 5] {
        let f = &ds.frames[k];
        let xs = log(&f.init_pose.inverse().compose(f.gt_start_pose.as_ref().unwrap())).unwrap();
        let xe = log(&f.init_pose.inverse().compose(f.gt_end_pose.as_ref().unwrap())).unwrap();
        println!("frame {k}: |xi_start| {:.4}, |xi_end| {:.4}", xs.max_abs(), xe.max_abs());
    }
}
