use rsfield::camera::load_dataset;
use rsfield::metrics::psnr;

fn main() {
    let dir = std::env::args().nth(1).unwrap();
    let ds = load_dataset(std::path::Path::new(&dir)).unwrap();
    println!("frames {} size {}x{}", ds.frames.len(), ds.width(), ds.height());
    // RS input vs GS ground truth at the same (middle-row) pose.
    let mut total = 0.0;
    for (k, (frame, view)) in ds.frames.iter().zip(&ds.eval_on).enumerate() {
        let p = psnr(&frame.image, &view.gt).unwrap();
        total += p;
        if k < 4 {
            println!("frame {k}: rs-vs-gs psnr {p:.2} dB");
        }
    }
    println!("mean rs-vs-gs psnr {:.2} dB", total / ds.frames.len() as f64);
    for (k, flows) in ds.flows.iter().enumerate().take(3) {
        if let Some(f) = &flows.fwd {
            let mut max_dc = 0.0f32;
            let mut max_dr = 0.0f32;
            let mut sum_dc = 0.0;
            let mut n = 0usize;
            for v in 0..ds.height() {
                for u in 0..ds.width() {
                    let (dc, dr, valid) = f.get(u, v);
                    if valid {
                        max_dc = max_dc.max(dc.abs());
                        max_dr = max_dr.max(dr.abs());
                        sum_dc += dc.abs() as f64;
                        n += 1;
                    }
                }
            }
            println!(
                "flow {k} fwd: valid {:.3}, mean|dcol| {:.2}, max|dcol| {:.2}, max|drow| {:.2}",
                f.valid_fraction(),
                sum_dc / n as f64,
                max_dc,
                max_dr
            );
        }
    }
}
