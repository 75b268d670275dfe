use rsfield::config::SceneConfig;
use rsfield::field::{Field, RadianceGrid};
use rsfield::math::Vec3;
use rsfield::trainer::TrainConfig;
use std::path::Path;

fn main() {
    let scene = SceneConfig::from_path(Path::new("configs/boxes.json")).unwrap();
    let config: TrainConfig =
        serde_json::from_str(&std::fs::read_to_string("configs/train_boxes.json").unwrap()).unwrap();
    let analytic = scene.scene();
    let grid = RadianceGrid::bake_from_scene(&analytic, [96, 96, 40], config.grid_bounds(), 1).unwrap();
    println!("z-profile along the optical axis (x=y=0):");
    for i in 0..24 {
        let z = 0.35 + 0.01 * i as f64;
        let p = Vec3::new(0.0, 0.0, z);
        let (sa, ca) = analytic.query(p);
        let (sg, cg) = grid.query(p);
        println!(
            "z={z:.2}: analytic sigma {sa:7.2} rgb ({:.2},{:.2},{:.2}) | grid sigma {sg:9.2} rgb ({:.2},{:.2},{:.2})",
            ca[0], ca[1], ca[2], cg[0], cg[1], cg[2]
        );
    }
    println!("\nsphere center probe:");
    for p in [Vec3::new(-0.15, -0.05, 0.10), Vec3::new(0.28, 0.02, 0.22), Vec3::new(0.6, 0.6, 0.48)] {
        let (sa, ca) = analytic.query(p);
        let (sg, cg) = grid.query(p);
        println!(
            "p=({:.2},{:.2},{:.2}): analytic {sa:7.2} ({:.2},{:.2},{:.2}) | grid {sg:9.2} ({:.2},{:.2},{:.2})",
            p.x, p.y, p.z, ca[0], ca[1], ca[2], cg[0], cg[1], cg[2]
        );
    }
}
