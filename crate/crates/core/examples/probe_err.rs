use rsfield::camera::synthesize_dataset;
use rsfield::config::SceneConfig;
use rsfield::field::RadianceGrid;
use rsfield::metrics::psnr;
use rsfield::render::{render_gs_image, RenderOptions};
use rsfield::rng::derive_seed;
use rsfield::trainer::TrainConfig;
use std::path::Path;

fn main() {
    let scene = SceneConfig::from_path(Path::new("configs/boxes.json")).unwrap();
    let config: TrainConfig =
        serde_json::from_str(&std::fs::read_to_string("configs/train_boxes.json").unwrap()).unwrap();
    let ds = synthesize_dataset(
        &scene.scene(), &scene.trajectory_spec(), &scene.intrinsics(), &scene.synthesis_options(),
    ).unwrap();
    let grid = RadianceGrid::bake_from_scene(&scene.scene(), [336, 336, 96], config.grid_bounds(), 3).unwrap();
    // Find the worst view.
    let opts = RenderOptions { n_steps: scene.synth_n_steps, t_near: ds.near, t_far: ds.far };
    let seed = derive_seed(ds.seed, "synth", 0);
    let mut worst = (f64::INFINITY, 0usize);
    for (i, view) in ds.eval_on.iter().enumerate() {
        let render = render_gs_image(&grid, &view.pose, &ds.intrinsics, &opts, scene.spp, seed);
        let p = psnr(&render, &view.gt).unwrap();
        if p < worst.0 { worst = (p, i); }
    }
    println!("worst on-view {} at {:.2} dB", worst.1, worst.0);
    let view = &ds.eval_on[worst.1];
    let render = render_gs_image(&grid, &view.pose, &ds.intrinsics, &opts, scene.spp, seed);
    // Error histogram by location.
    let mut errors: Vec<(f64, usize, usize)> = Vec::new();
    for v in 0..64 {
        for u in 0..64 {
            let a = render.pixel(u, v);
            let b = view.gt.pixel(u, v);
            let e: f64 = (0..3).map(|c| ((a[c] - b[c]) as f64).powi(2)).sum();
            errors.push((e, u, v));
        }
    }
    // Dump strip for visual inspection.
    let mut strip = rsfield::io::Image::new(64 * 3, 64);
    for v in 0..64 {
        for u in 0..64 {
            let g = view.gt.pixel(u, v);
            let r = render.pixel(u, v);
            strip.set_pixel(u, v, g);
            strip.set_pixel(u + 64, v, r);
            let d = [
                ((g[0] - r[0]).abs() * 6.0).min(1.0),
                ((g[1] - r[1]).abs() * 6.0).min(1.0),
                ((g[2] - r[2]).abs() * 6.0).min(1.0),
            ];
            strip.set_pixel(u + 128, v, d);
        }
    }
    rsfield::io::write_png(std::path::Path::new("/tmp/worst_strip.png"), &strip).unwrap();
    errors.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
    let total: f64 = errors.iter().map(|e| e.0).sum();
    let top50: f64 = errors.iter().take(50).map(|e| e.0).sum();
    println!("top-50 pixels carry {:.1}% of squared error", 100.0 * top50 / total);
    for (e, u, v) in errors.iter().take(12) {
        let a = render.pixel(*u, *v);
        let b = view.gt.pixel(*u, *v);
        println!("({u:2},{v:2}) err {e:.4}: render ({:.2},{:.2},{:.2}) gt ({:.2},{:.2},{:.2})",
            a[0], a[1], a[2], b[0], b[1], b[2]);
    }
}
