//! Quantitative evaluation: PSNR, SSIM, mean square trajectory error, and
//! checkpoint scoring against a dataset's ground-truth views.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::RSDataset;
use crate::error::{Error, Result};
use crate::io::Image;
use crate::math::Vec3;
use crate::render::{render_gs_image, RenderOptions};
use crate::rng::derive_seed;
use crate::trainer::{estimated_row_centers, Checkpoint};

/// PSNR in dB over all channels; identical images cap at 99.0.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let mut mse = 0.0f64;
    for (x, y) in a.data.iter().zip(&b.data) {
        let d = *x as f64 - *y as f64;
        mse += d * d;
    }
    mse /= a.data.len() as f64;
    if mse == 0.0 {
        return Ok(99.0);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(99.0))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut total = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        total += *v;
    }
    for v in k.iter_mut() {
        *v /= total;
    }
    k
}

/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), dynamic range
/// 1, computed per channel over every pixel where the window fits, then
/// averaged.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let r = SSIM_WINDOW / 2;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::DimensionMismatch("image smaller than the ssim window".into()));
    }
    let kernel = gaussian_kernel();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);

    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..3 {
        // Separable Gaussian over the five window statistics.
        let plane_a: Vec<f64> = a.data.iter().skip(ch).step_by(3).map(|&v| v as f64).collect();
        let plane_b: Vec<f64> = b.data.iter().skip(ch).step_by(3).map(|&v| v as f64).collect();
        let w = a.width;
        let h = a.height;
        let mut stats = vec![[0.0f64; 5]; w * h]; // a, b, aa, bb, ab (horizontal pass)
        for y in 0..h {
            for x in r..w - r {
                let mut s = [0.0; 5];
                for (t, &kv) in kernel.iter().enumerate() {
                    let xa = plane_a[y * w + x + t - r];
                    let xb = plane_b[y * w + x + t - r];
                    s[0] += kv * xa;
                    s[1] += kv * xb;
                    s[2] += kv * xa * xa;
                    s[3] += kv * xb * xb;
                    s[4] += kv * xa * xb;
                }
                stats[y * w + x] = s;
            }
        }
        for y in r..h - r {
            for x in r..w - r {
                let mut s = [0.0; 5];
                for (t, &kv) in kernel.iter().enumerate() {
                    let row = &stats[(y + t - r) * w + x];
                    for (acc, v) in s.iter_mut().zip(row.iter()) {
                        *acc += kv * v;
                    }
                }
                let (mu_a, mu_b) = (s[0], s[1]);
                let var_a = s[2] - mu_a * mu_a;
                let var_b = s[3] - mu_b * mu_b;
                let cov = s[4] - mu_a * mu_b;
                let val = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                    / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                total += val;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Mean squared Euclidean distance between estimated and ground-truth camera
/// centers, in the shared world frame (no alignment step).
pub fn mste(estimated: &[Vec3], ground_truth: &[Vec3]) -> Result<f64> {
    if estimated.len() != ground_truth.len() {
        return Err(Error::CountMismatch {
            estimated: estimated.len(),
            ground_truth: ground_truth.len(),
        });
    }
    if estimated.is_empty() {
        return Err(Error::CountMismatch { estimated: 0, ground_truth: 0 });
    }
    let total: f64 = estimated
        .iter()
        .zip(ground_truth)
        .map(|(e, g)| (*e - *g).norm_squared())
        .sum();
    Ok(total / estimated.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewSet {
    OnTrajectory,
    OutTrajectory,
}

impl ViewSet {
    pub fn label(&self) -> &'static str {
        match self {
            ViewSet::OnTrajectory => "on",
            ViewSet::OutTrajectory => "out",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ViewScore {
    pub view_id: usize,
    pub kind: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricReport {
    pub views: Vec<ViewScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Squared world units over all (frame, row) pairs; None without ground
    /// truth.
    pub mste: Option<f64>,
    /// Per-frame MSTE breakdown matching the trajectory report.
    pub mste_per_frame: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub n_steps: usize,
    pub spp: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { n_steps: 192, spp: 4 }
    }
}

/// Renders every view of the chosen set as a GS image from the checkpoint and
/// scores it against the stored ground-truth render. Returned images pair
/// with `report.views` by index.
pub fn evaluate(
    checkpoint: &Checkpoint,
    dataset: &RSDataset,
    set: ViewSet,
    opts: &EvalOptions,
) -> Result<(MetricReport, Vec<Image>)> {
    if checkpoint.pose_params.len() != dataset.frames.len() {
        return Err(Error::IncompatibleCheckpoint(format!(
            "checkpoint has {} frames, dataset {}",
            checkpoint.pose_params.len(),
            dataset.frames.len()
        )));
    }
    if checkpoint.n_pose == 0 || checkpoint.n_pose > dataset.height() {
        return Err(Error::IncompatibleCheckpoint(format!(
            "n_pose {} invalid for height {}",
            checkpoint.n_pose,
            dataset.height()
        )));
    }
    let views = match set {
        ViewSet::OnTrajectory => &dataset.eval_on,
        ViewSet::OutTrajectory => &dataset.eval_out,
    };
    let render_opts = RenderOptions {
        n_steps: opts.n_steps,
        t_near: dataset.near,
        t_far: dataset.far,
    };
    // Same jitter stream as the synthesizer's ground-truth renders.
    let seed = derive_seed(dataset.seed, "synth", 0);
    let mut scores = Vec::with_capacity(views.len());
    let mut renders = Vec::with_capacity(views.len());
    for (i, view) in views.iter().enumerate() {
        let render = render_gs_image(
            &checkpoint.grid,
            &view.pose,
            &dataset.intrinsics,
            &render_opts,
            opts.spp,
            seed,
        );
        scores.push(ViewScore {
            view_id: i,
            kind: set.label().to_string(),
            psnr_db: psnr(&render, &view.gt)?,
            ssim: ssim(&render, &view.gt)?,
        });
        renders.push(render);
    }
    let n = scores.len().max(1) as f64;
    let mean_psnr = scores.iter().map(|s| s.psnr_db).sum::<f64>() / n;
    let mean_ssim = scores.iter().map(|s| s.ssim).sum::<f64>() / n;

    let (mste_val, mste_per_frame) = match &dataset.gt_row_centers {
        Some(gt) => {
            let h = dataset.height();
            let est = estimated_row_centers(&checkpoint.pose_params, h, checkpoint.n_pose)?;
            let total = mste(&est, gt)?;
            let per_frame = est
                .chunks(h)
                .zip(gt.chunks(h))
                .map(|(e, g)| mste(e, g))
                .collect::<Result<Vec<f64>>>()?;
            (Some(total), per_frame)
        }
        None => (None, Vec::new()),
    };
    Ok((
        MetricReport { views: scores, mean_psnr, mean_ssim, mste: mste_val, mste_per_frame },
        renders,
    ))
}

/// Report CSV: per-view rows then aggregate footer rows. The lpips column is
/// reserved and left empty.
pub fn write_report_csv(reports: &[&MetricReport], path: &Path) -> Result<()> {
    let mut out = String::from("view_id,kind,psnr_db,ssim,lpips\n");
    for report in reports {
        for v in &report.views {
            out.push_str(&format!("{},{},{:.6},{:.6},\n", v.view_id, v.kind, v.psnr_db, v.ssim));
        }
    }
    for report in reports {
        if let Some(first) = report.views.first() {
            out.push_str(&format!(
                "aggregate,{},{:.6},{:.6},\n",
                first.kind, report.mean_psnr, report.mean_ssim
            ));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_trajectory_csv(report: &MetricReport, path: &Path) -> Result<()> {
    let mut out = String::from("frame,mste\n");
    for (i, v) in report.mste_per_frame.iter().enumerate() {
        out.push_str(&format!("{i},{v:.12e}\n"));
    }
    if let Some(total) = report.mste {
        out.push_str(&format!("all,{total:.12e}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng64;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = Rng64::new(seed);
        let mut img = Image::new(w, h);
        for p in img.data.iter_mut() {
            *p = rng.uniform() as f32;
        }
        img
    }

    #[test]
    fn psnr_identical_caps_at_99() {
        let img = random_image(16, 16, 1);
        assert_eq!(psnr(&img, &img).unwrap(), 99.0);
    }

    #[test]
    fn psnr_constant_offset_closed_form() {
        let mut a = Image::new(8, 8);
        let mut b = Image::new(8, 8);
        a.data.iter_mut().for_each(|v| *v = 0.25);
        b.data.iter_mut().for_each(|v| *v = 0.75);
        let got = psnr(&a, &b).unwrap();
        let expected = 10.0 * (1.0f64 / 0.25).log10();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn psnr_matches_naive_loop() {
        let a = random_image(24, 16, 2);
        let b = random_image(24, 16, 3);
        // Naive oracle: scalar double loop over pixels and channels.
        let mut acc = 0.0f64;
        let mut n = 0usize;
        for v in 0..16 {
            for u in 0..24 {
                let pa = a.pixel(u, v);
                let pb = b.pixel(u, v);
                for ch in 0..3 {
                    let d = pa[ch] as f64 - pb[ch] as f64;
                    acc += d * d;
                    n += 1;
                }
            }
        }
        let expected = 10.0 * (1.0 / (acc / n as f64)).log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-9);
        assert!(matches!(psnr(&a, &random_image(8, 8, 4)), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn psnr_and_ssim_are_symmetric() {
        let a = random_image(20, 20, 5);
        let b = random_image(20, 20, 6);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let d = (ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs();
        assert!(d < 1e-12);
    }

    #[test]
    fn ssim_identical_is_one() {
        let img = random_image(16, 16, 7);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_negative_image_scores_low() {
        let mut a = Image::new(16, 16);
        a.data.iter_mut().for_each(|v| *v = 0.75);
        // Add mild texture so variances are nonzero.
        for v in 0..16 {
            for u in 0..16 {
                let t = 0.05 * (((u * 7 + v * 3) % 5) as f32 / 5.0);
                let val = 0.7 + t;
                a.set_pixel(u, v, [val, val, val]);
            }
        }
        let mut b = a.clone();
        for p in b.data.iter_mut() {
            *p = 1.0 - *p;
        }
        let s = ssim(&a, &b).unwrap();
        assert!(s < 0.5, "ssim {s}");
    }

    #[test]
    fn ssim_matches_naive_windowed_loop() {
        let a = random_image(18, 14, 8);
        let b = {
            let mut img = a.clone();
            let mut rng = Rng64::new(9);
            for p in img.data.iter_mut() {
                *p = (*p + 0.1 * rng.uniform() as f32).min(1.0);
            }
            img
        };
        // Naive oracle: direct 2D Gaussian-windowed statistics per pixel.
        let kernel = gaussian_kernel();
        let r = SSIM_WINDOW / 2;
        let c1 = 0.01f64 * 0.01;
        let c2 = 0.03f64 * 0.03;
        let mut total = 0.0;
        let mut count = 0;
        for ch in 0..3 {
            for y in r..14 - r {
                for x in r..18 - r {
                    let (mut ma, mut mb, mut maa, mut mbb, mut mab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in 0..SSIM_WINDOW {
                        for dx in 0..SSIM_WINDOW {
                            let w = kernel[dy] * kernel[dx];
                            let pa = a.pixel(x + dx - r, y + dy - r)[ch] as f64;
                            let pb = b.pixel(x + dx - r, y + dy - r)[ch] as f64;
                            ma += w * pa;
                            mb += w * pb;
                            maa += w * pa * pa;
                            mbb += w * pb * pb;
                            mab += w * pa * pb;
                        }
                    }
                    let va = maa - ma * ma;
                    let vb = mbb - mb * mb;
                    let cov = mab - ma * mb;
                    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
        }
        let expected = total / count as f64;
        let got = ssim(&a, &b).unwrap();
        assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
    }

    #[test]
    fn mste_closed_forms_and_oracle() {
        let gt: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        assert_eq!(mste(&gt, &gt).unwrap(), 0.0);
        let offset: Vec<Vec3> = gt.iter().map(|c| *c + Vec3::new(0.1, 0.0, 0.0)).collect();
        assert!((mste(&offset, &gt).unwrap() - 0.01).abs() < 1e-15);
        // Random trajectories against a naive double loop.
        let mut rng = Rng64::new(10);
        let est: Vec<Vec3> = (0..50)
            .map(|_| Vec3::new(rng.uniform(), rng.uniform(), rng.uniform()))
            .collect();
        let gt: Vec<Vec3> = (0..50)
            .map(|_| Vec3::new(rng.uniform(), rng.uniform(), rng.uniform()))
            .collect();
        let mut acc = 0.0;
        for i in 0..est.len() {
            let d = est[i] - gt[i];
            acc += d.x * d.x + d.y * d.y + d.z * d.z;
        }
        let expected = acc / est.len() as f64;
        assert!((mste(&est, &gt).unwrap() - expected).abs() < 1e-12);
        assert!(matches!(
            mste(&est[..10], &gt),
            Err(Error::CountMismatch { estimated: 10, ground_truth: 50 })
        ));
    }

    #[test]
    fn mste_invariant_under_joint_permutation() {
        let mut rng = Rng64::new(11);
        let est: Vec<Vec3> = (0..20)
            .map(|_| Vec3::new(rng.uniform(), rng.uniform(), rng.uniform()))
            .collect();
        let gt: Vec<Vec3> = (0..20)
            .map(|_| Vec3::new(rng.uniform(), rng.uniform(), rng.uniform()))
            .collect();
        let base = mste(&est, &gt).unwrap();
        let perm: Vec<usize> = (0..20).rev().collect();
        let est_p: Vec<Vec3> = perm.iter().map(|&i| est[i]).collect();
        let gt_p: Vec<Vec3> = perm.iter().map(|&i| gt[i]).collect();
        assert!((mste(&est_p, &gt_p).unwrap() - base).abs() < 1e-15);
    }
}
