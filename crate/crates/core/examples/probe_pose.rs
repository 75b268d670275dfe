//! Diagnostic: optimize poses only, against a grid baked from the true
//! scene, to isolate the pose-estimation signal from joint-training effects.

use std::path::Path;

use rsfield::camera::load_dataset;
use rsfield::config::SceneConfig;
use rsfield::field::RadianceGrid;
use rsfield::trainer::{init_state, train_loop, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let ds_dir = &args[1];
    let scene_cfg = &args[2];
    let iters: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let pose_scale: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);

    let ds = load_dataset(Path::new(ds_dir)).unwrap();
    let scene = SceneConfig::from_path(Path::new(scene_cfg)).unwrap();
    let text = std::fs::read_to_string("configs/train_boxes.json").unwrap();
    let mut config: TrainConfig = serde_json::from_str(&text).unwrap();
    config.iterations = iters;
    config.pose_lr_scale = pose_scale;
    config.grid_lr_scale = 0.0; // grid frozen
    config.log_every = 250;
    config.ms_enabled = false;
    config.lambda_smooth = 0.0;

    let mut state = init_state(&ds, &config).unwrap();
    state.set_grid(
        RadianceGrid::bake_from_scene(&scene.scene(), [96, 96, 40], config.grid_bounds(), 3).unwrap(),
    );
    let log = train_loop(&ds, &config, &mut state, None, None).unwrap();
    for row in &log {
        println!(
            "iter {:5}  photo {:.4e}  mste {:.4e}",
            row.iteration,
            row.photometric_loss,
            row.mste.unwrap()
        );
    }
}
