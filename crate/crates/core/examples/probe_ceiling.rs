use rsfield::config::SceneConfig;
use rsfield::field::RadianceGrid;
use rsfield::metrics::{evaluate, EvalOptions, ViewSet};
use rsfield::se3::FramePoseParams;
use rsfield::trainer::{Checkpoint, TrainConfig};
use rsfield::camera::synthesize_dataset;
use std::path::Path;

fn main() {
    let scene = SceneConfig::from_path(Path::new("configs/boxes.json")).unwrap();
    let config: TrainConfig =
        serde_json::from_str(&std::fs::read_to_string("configs/train_boxes.json").unwrap()).unwrap();
    let ds = synthesize_dataset(
        &scene.scene(),
        &scene.trajectory_spec(),
        &scene.intrinsics(),
        &scene.synthesis_options(),
    )
    .unwrap();
    for res in [[256usize, 256, 72], [336, 336, 96]] {
        let grid = RadianceGrid::bake_from_scene(&scene.scene(), res, config.grid_bounds(), 3).unwrap();
        let ckpt = Checkpoint {
            grid,
            pose_params: ds.frames.iter().map(|f| FramePoseParams::at_anchor(f.init_pose)).collect(),
            n_pose: ds.height(),
        };
        let opts = EvalOptions { n_steps: scene.synth_n_steps, spp: scene.spp };
        let mut min = f64::INFINITY;
        let mut mean = 0.0;
        let mut n = 0;
        for set in [ViewSet::OnTrajectory, ViewSet::OutTrajectory] {
            let (report, _) = evaluate(&ckpt, &ds, set, &opts).unwrap();
            for v in &report.views {
                min = min.min(v.psnr_db);
                mean += v.psnr_db;
                n += 1;
            }
        }
        println!("bake {res:?}: min {min:.2} dB, mean {:.2} dB over {n} views", mean / n as f64);
    }
}
