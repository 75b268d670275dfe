//! PP-ratio multi-sampling: how many neighboring row poses may legitimately
//! reuse a pixel's color, and the pose-index sampling built on it.
//!
//! For a pixel displacement (dcol, drow) between adjacent frames, the camera
//! traverses H + drow (forward) or H - drow (backward) row poses, assuming
//! non-overlapping exposures. The PP-ratio divides that pose shift by the
//! pixel displacement; sampling the training pose index uniformly inside
//! [v - rho_bwd, v + rho_fwd] multiplies the data each intermediate pose
//! sees.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_pfm, write_pfm, Image};
use crate::rng::Rng64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowDirection {
    Forward,
    Backward,
}

/// Dense per-pixel displacement field; drow positive points down.
#[derive(Clone, Debug)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    dcol: Vec<f32>,
    drow: Vec<f32>,
    valid: Vec<bool>,
}

impl FlowField {
    pub fn new(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            dcol: vec![0.0; width * height],
            drow: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> (f32, f32, bool) {
        let i = v * self.width + u;
        (self.dcol[i], self.drow[i], self.valid[i])
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, dcol: f32, drow: f32, valid: bool) {
        let i = v * self.width + u;
        self.dcol[i] = dcol;
        self.drow[i] = drow;
        self.valid[i] = valid;
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid.iter().filter(|&&v| v).count() as f64 / self.valid.len().max(1) as f64
    }

    /// Two-channel PFM: channel 0 = dcol, channel 1 = drow, invalid = NaN.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut data = vec![0.0f32; self.width * self.height * 2];
        for i in 0..self.width * self.height {
            if self.valid[i] {
                data[2 * i] = self.dcol[i];
                data[2 * i + 1] = self.drow[i];
            } else {
                data[2 * i] = f32::NAN;
                data[2 * i + 1] = f32::NAN;
            }
        }
        write_pfm(path, self.width, self.height, 2, &data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (width, height, channels, data) = read_pfm(path)?;
        if channels != 2 {
            return Err(Error::MalformedFile {
                path: path.display().to_string(),
                reason: format!("flow pfm must have 2 channels, got {channels}"),
            });
        }
        let mut flow = FlowField::new(width, height);
        for i in 0..width * height {
            let (dc, dr) = (data[2 * i], data[2 * i + 1]);
            if dc.is_nan() || dr.is_nan() {
                flow.valid[i] = false;
            } else {
                flow.dcol[i] = dc;
                flow.drow[i] = dr;
                flow.valid[i] = true;
            }
        }
        Ok(flow)
    }
}

/// Camera pose shift between the source row event and its correspondence in
/// the adjacent frame: H + drow forward, H - drow backward (signed drow).
pub fn pose_shift(h: usize, drow: f64, direction: FlowDirection) -> f64 {
    match direction {
        FlowDirection::Forward => h as f64 + drow,
        FlowDirection::Backward => h as f64 - drow,
    }
}

/// PP-ratio: pose shift over pixel displacement, floored to an integer count
/// and clamped to [0, rho_max]. Zero-displacement pixels use denominator 1.
pub fn pp_ratio(h: usize, dcol: f64, drow: f64, direction: FlowDirection, rho_max: usize) -> usize {
    let shift = pose_shift(h, drow, direction);
    let denom = dcol.abs().max(drow.abs()).max(1.0);
    let rho = (shift / denom).floor();
    if rho <= 0.0 {
        0
    } else {
        (rho as usize).min(rho_max)
    }
}

/// Per-pixel forward/backward PP-ratios; invalid flow means 0 (no reuse).
#[derive(Clone, Debug)]
pub struct PPRatioMap {
    pub width: usize,
    pub height: usize,
    rho_fwd: Vec<u32>,
    rho_bwd: Vec<u32>,
}

impl PPRatioMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        PPRatioMap {
            width,
            height,
            rho_fwd: vec![0; width * height],
            rho_bwd: vec![0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> (u32, u32) {
        let i = v * self.width + u;
        (self.rho_bwd[i], self.rho_fwd[i])
    }

    /// Two-channel PFM cache: channel 0 = rho_bwd, channel 1 = rho_fwd.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut data = vec![0.0f32; self.width * self.height * 2];
        for i in 0..self.width * self.height {
            data[2 * i] = self.rho_bwd[i] as f32;
            data[2 * i + 1] = self.rho_fwd[i] as f32;
        }
        write_pfm(path, self.width, self.height, 2, &data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (width, height, channels, data) = read_pfm(path)?;
        if channels != 2 {
            return Err(Error::MalformedFile {
                path: path.display().to_string(),
                reason: format!("pp-ratio pfm must have 2 channels, got {channels}"),
            });
        }
        let mut map = PPRatioMap::zeros(width, height);
        for i in 0..width * height {
            map.rho_bwd[i] = data[2 * i] as u32;
            map.rho_fwd[i] = data[2 * i + 1] as u32;
        }
        Ok(map)
    }
}

pub struct PPRatioConfig {
    pub rho_max: usize,
}

/// Applies `pp_ratio` per pixel in both directions. A missing flow (first
/// frame's backward, last frame's forward) contributes zero everywhere.
pub fn build_ppratio_map(
    flow_fwd: Option<&FlowField>,
    flow_bwd: Option<&FlowField>,
    h: usize,
    config: &PPRatioConfig,
) -> Result<PPRatioMap> {
    let dims = |f: &FlowField| (f.width, f.height);
    let (width, height) = match (flow_fwd, flow_bwd) {
        (Some(a), Some(b)) => {
            if dims(a) != dims(b) {
                return Err(Error::DimensionMismatch(format!(
                    "forward flow {}x{} vs backward {}x{}",
                    a.width, a.height, b.width, b.height
                )));
            }
            dims(a)
        }
        (Some(a), None) => dims(a),
        (None, Some(b)) => dims(b),
        (None, None) => return Err(Error::DimensionMismatch("no flow fields given".into())),
    };
    let mut map = PPRatioMap::zeros(width, height);
    for v in 0..height {
        for u in 0..width {
            let i = v * width + u;
            if let Some(f) = flow_fwd {
                let (dcol, drow, valid) = f.get(u, v);
                if valid {
                    map.rho_fwd[i] =
                        pp_ratio(h, dcol as f64, drow as f64, FlowDirection::Forward, config.rho_max)
                            as u32;
                }
            }
            if let Some(f) = flow_bwd {
                let (dcol, drow, valid) = f.get(u, v);
                if valid {
                    map.rho_bwd[i] =
                        pp_ratio(h, dcol as f64, drow as f64, FlowDirection::Backward, config.rho_max)
                            as u32;
                }
            }
        }
    }
    Ok(map)
}

/// Samples the training pose index uniformly over the integer interval
/// [v - rho_bwd, v + rho_fwd] intersected with [0, H-1]. A (0, 0) ratio
/// returns v without consuming randomness, so zeroed maps replay the vanilla
/// stream bit-for-bit.
pub fn sample_pose_index(v: usize, rho_bwd: u32, rho_fwd: u32, h: usize, rng: &mut Rng64) -> usize {
    debug_assert!(v < h);
    if rho_bwd == 0 && rho_fwd == 0 {
        return v;
    }
    let lo = (v as i64 - rho_bwd as i64).max(0);
    let hi = (v as i64 + rho_fwd as i64).min(h as i64 - 1);
    if lo == hi {
        return lo as usize;
    }
    rng.uniform_int(lo, hi) as usize
}

#[derive(Clone, Copy, Debug)]
pub struct LkConfig {
    pub levels: usize,
    pub window: usize,
    pub iterations: usize,
    /// Minimum smaller eigenvalue of the structure tensor (per pixel of
    /// window area) before the aperture problem invalidates the estimate.
    pub min_eigenvalue: f64,
    /// Maximum ratio of the structure tensor eigenvalues.
    pub max_eigenvalue_ratio: f64,
    /// Maximum mean absolute residual after convergence.
    pub max_residual: f64,
}

impl Default for LkConfig {
    fn default() -> Self {
        LkConfig {
            levels: 3,
            window: 7,
            iterations: 10,
            min_eigenvalue: 1e-4,
            max_eigenvalue_ratio: 1e4,
            max_residual: 0.08,
        }
    }
}

struct GrayLevel {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayLevel {
    #[inline]
    fn at(&self, x: i64, y: i64) -> f64 {
        let x = x.clamp(0, self.width as i64 - 1) as usize;
        let y = y.clamp(0, self.height as i64 - 1) as usize;
        self.data[y * self.width + x]
    }

    fn bilinear(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as i64;
        let y0 = y.floor() as i64;
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        self.at(x0, y0) * (1.0 - fx) * (1.0 - fy)
            + self.at(x0 + 1, y0) * fx * (1.0 - fy)
            + self.at(x0, y0 + 1) * (1.0 - fx) * fy
            + self.at(x0 + 1, y0 + 1) * fx * fy
    }

    fn downsample(&self) -> GrayLevel {
        let width = (self.width / 2).max(1);
        let height = (self.height / 2).max(1);
        let mut data = vec![0.0; width * height];
        for y in 0..height {
            for x in 0..width {
                let (x2, y2) = (2 * x as i64, 2 * y as i64);
                data[y * width + x] = 0.25
                    * (self.at(x2, y2)
                        + self.at(x2 + 1, y2)
                        + self.at(x2, y2 + 1)
                        + self.at(x2 + 1, y2 + 1));
            }
        }
        GrayLevel { width, height, data }
    }
}

fn pyramid(image: &Image, levels: usize) -> Vec<GrayLevel> {
    let base = GrayLevel {
        width: image.width,
        height: image.height,
        data: image.to_luma(),
    };
    let mut out = vec![base];
    for _ in 1..levels {
        let next = out.last().unwrap().downsample();
        out.push(next);
    }
    out
}

/// Dense pyramidal Lucas-Kanade flow, the classical stand-in for a learned
/// estimator. Pixels failing the eigenvalue or residual checks are invalid.
pub fn lk_flow(img_a: &Image, img_b: &Image, config: &LkConfig) -> Result<FlowField> {
    if img_a.width != img_b.width || img_a.height != img_b.height {
        return Err(Error::ImagesMismatch(format!(
            "{}x{} vs {}x{}",
            img_a.width, img_a.height, img_b.width, img_b.height
        )));
    }
    let pyr_a = pyramid(img_a, config.levels);
    let pyr_b = pyramid(img_b, config.levels);
    let radius = (config.window / 2) as i64;
    let window_area = (config.window * config.window) as f64;

    let mut flow = FlowField::new(img_a.width, img_a.height);
    for v in 0..img_a.height {
        for u in 0..img_a.width {
            let mut g = (0.0f64, 0.0f64);
            let mut ok = true;
            let mut residual = 0.0f64;
            for level in (0..config.levels).rev() {
                let a = &pyr_a[level];
                let b = &pyr_b[level];
                let scale = 1 << level;
                let px = u as f64 / scale as f64;
                let py = v as f64 / scale as f64;
                if px < 1.0
                    || py < 1.0
                    || px > (a.width as i64 - 2) as f64
                    || py > (a.height as i64 - 2) as f64
                {
                    // Too close to the border at this level; keep the coarser
                    // estimate and move on.
                    if level == 0 {
                        ok = false;
                    }
                    g = (g.0 * 2.0, g.1 * 2.0);
                    continue;
                }
                // Structure tensor from central differences around (px, py).
                let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
                let mut gx = vec![0.0; (2 * radius as usize + 1).pow(2)];
                let mut gy = vec![0.0; gx.len()];
                let mut g0 = vec![0.0; gx.len()];
                let mut idx = 0;
                for wy in -radius..=radius {
                    for wx in -radius..=radius {
                        let x = px + wx as f64;
                        let y = py + wy as f64;
                        let ix = 0.5 * (a.bilinear(x + 1.0, y) - a.bilinear(x - 1.0, y));
                        let iy = 0.5 * (a.bilinear(x, y + 1.0) - a.bilinear(x, y - 1.0));
                        gx[idx] = ix;
                        gy[idx] = iy;
                        g0[idx] = a.bilinear(x, y);
                        sxx += ix * ix;
                        sxy += ix * iy;
                        syy += iy * iy;
                        idx += 1;
                    }
                }
                let trace = sxx + syy;
                let det = sxx * syy - sxy * sxy;
                let disc = (trace * trace / 4.0 - det).max(0.0).sqrt();
                let lam_min = trace / 2.0 - disc;
                let lam_max = trace / 2.0 + disc;
                if lam_min / window_area < config.min_eigenvalue
                    || lam_max > config.max_eigenvalue_ratio * lam_min.max(1e-12)
                {
                    ok = false;
                    break;
                }
                // Iterative refinement of the displacement at this level.
                let mut d = g;
                for _ in 0..config.iterations {
                    let (mut bx, mut by) = (0.0, 0.0);
                    let mut idx = 0;
                    for wy in -radius..=radius {
                        for wx in -radius..=radius {
                            let x = px + wx as f64 + d.0;
                            let y = py + wy as f64 + d.1;
                            let it = g0[idx] - b.bilinear(x, y);
                            bx += it * gx[idx];
                            by += it * gy[idx];
                            idx += 1;
                        }
                    }
                    let inv_det = 1.0 / det;
                    let step = (
                        inv_det * (syy * bx - sxy * by),
                        inv_det * (sxx * by - sxy * bx),
                    );
                    d = (d.0 + step.0, d.1 + step.1);
                    if step.0.abs() < 1e-3 && step.1.abs() < 1e-3 {
                        break;
                    }
                }
                if level == 0 {
                    let mut err = 0.0;
                    let mut idx = 0;
                    for wy in -radius..=radius {
                        for wx in -radius..=radius {
                            let x = px + wx as f64 + d.0;
                            let y = py + wy as f64 + d.1;
                            err += (g0[idx] - b.bilinear(x, y)).abs();
                            idx += 1;
                        }
                    }
                    residual = err / window_area;
                    g = d;
                } else {
                    g = (d.0 * 2.0, d.1 * 2.0);
                }
            }
            if ok && residual <= config.max_residual {
                flow.set(u, v, g.0 as f32, g.1 as f32, true);
            } else {
                flow.set(u, v, 0.0, 0.0, false);
            }
        }
    }
    Ok(flow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use FlowDirection::{Backward, Forward};

    #[test]
    fn pose_shift_paper_numbers() {
        assert_eq!(pose_shift(400, -8.0, Forward), 392.0);
        assert_eq!(pose_shift(400, 0.0, Forward), 400.0);
        assert_eq!(pose_shift(400, 0.0, Backward), 400.0);
        assert_eq!(pose_shift(400, 8.0, Backward), 392.0);
    }

    #[test]
    fn pp_ratio_paper_example() {
        assert_eq!(pp_ratio(400, 18.0, -8.0, Forward, 400), 21);
    }

    #[test]
    fn pp_ratio_zero_displacement_caps_at_rho_max() {
        assert_eq!(pp_ratio(400, 0.0, 0.0, Forward, 400), 400);
        assert_eq!(pp_ratio(400, 0.0, 0.0, Forward, 64), 64);
    }

    /// Independent reimplementation used as the randomized oracle: the
    /// two-step definition spelled out literally, with a separate flooring
    /// path.
    fn pp_ratio_brute(h: usize, dcol: f64, drow: f64, dir: FlowDirection, rho_max: usize) -> usize {
        let travelled = match dir {
            // Rows v..end of source frame, then 0..(v + drow) of the target:
            // v + drow + (h - v) = h + drow.
            Forward => {
                let v = 100.0_f64.min(h as f64 / 2.0);
                (v + drow) + (h as f64 - v)
            }
            Backward => {
                let v = 100.0_f64.min(h as f64 / 2.0);
                (h as f64 - (v + drow)) + v
            }
        };
        let denom = if dcol.abs() >= drow.abs() { dcol.abs() } else { drow.abs() };
        let denom = if denom < 1.0 { 1.0 } else { denom };
        let mut count = 0usize;
        // Flooring by repeated subtraction.
        let mut remaining = travelled;
        while remaining >= denom && count < rho_max {
            remaining -= denom;
            count += 1;
        }
        if travelled <= 0.0 {
            0
        } else {
            count
        }
    }

    #[test]
    fn pp_ratio_matches_brute_force_over_random_table() {
        let mut rng = crate::rng::Rng64::new(404);
        for _ in 0..10_000 {
            let h = rng.uniform_int(1, 500) as usize;
            let dcol = rng.uniform_range(-40.0, 40.0);
            let drow = rng.uniform_range(-40.0, 40.0);
            let dir = if rng.uniform() < 0.5 { Forward } else { Backward };
            let rho_max = rng.uniform_int(1, 600) as usize;
            let got = pp_ratio(h, dcol, drow, dir, rho_max);
            let want = pp_ratio_brute(h, dcol, drow, dir, rho_max);
            assert_eq!(got, want, "h={h} dcol={dcol} drow={drow} dir={dir:?}");
        }
    }

    #[test]
    fn pp_ratio_monotone_in_displacement() {
        let mut prev = usize::MAX;
        for step in 1..40 {
            let d = step as f64;
            let rho = pp_ratio(400, d, 0.0, Forward, 400);
            assert!(rho <= prev);
            prev = rho;
        }
    }

    #[test]
    fn ppratio_map_from_single_pixel_flows() {
        let h = 400;
        let mut fwd = FlowField::new(3, 3);
        let mut bwd = FlowField::new(3, 3);
        fwd.set(1, 1, 18.0, -8.0, true);
        bwd.set(1, 1, -18.0, 8.0, true);
        let map = build_ppratio_map(Some(&fwd), Some(&bwd), h, &PPRatioConfig { rho_max: h }).unwrap();
        let (rho_bwd, rho_fwd) = map.get(1, 1);
        // Forward: floor((400 - 8) / 18) = 21. Backward via the same
        // arithmetic: floor((400 - 8) / 18) = 21.
        assert_eq!(rho_fwd, 21);
        assert_eq!(rho_bwd, 21);
        // Invalid pixels give zero in both directions.
        assert_eq!(map.get(0, 0), (0, 0));
    }

    #[test]
    fn zero_flow_map_is_uniform_rho_max() {
        let mut fwd = FlowField::new(4, 4);
        let mut bwd = FlowField::new(4, 4);
        for v in 0..4 {
            for u in 0..4 {
                fwd.set(u, v, 0.0, 0.0, true);
                bwd.set(u, v, 0.0, 0.0, true);
            }
        }
        let map = build_ppratio_map(Some(&fwd), Some(&bwd), 400, &PPRatioConfig { rho_max: 64 }).unwrap();
        for v in 0..4 {
            for u in 0..4 {
                assert_eq!(map.get(u, v), (64, 64));
            }
        }
        // All-invalid flow degenerates to the vanilla strategy.
        let dead = FlowField::new(4, 4);
        let map = build_ppratio_map(Some(&dead), None, 400, &PPRatioConfig { rho_max: 64 }).unwrap();
        for v in 0..4 {
            for u in 0..4 {
                assert_eq!(map.get(u, v), (0, 0));
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let fwd = FlowField::new(4, 4);
        let bwd = FlowField::new(5, 4);
        assert!(matches!(
            build_ppratio_map(Some(&fwd), Some(&bwd), 400, &PPRatioConfig { rho_max: 64 }),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn sample_pose_index_vanilla_when_zero() {
        let mut rng = Rng64::new(1);
        let before = rng.clone().next_u64();
        for v in [0usize, 5, 399] {
            assert_eq!(sample_pose_index(v, 0, 0, 400, &mut rng), v);
        }
        // No randomness consumed.
        assert_eq!(rng.next_u64(), before);
    }

    #[test]
    fn sample_pose_index_uniform_over_clamped_interval() {
        // v = 0, rho = (5, 5): interval clamps to {0..5}; chi-squared
        // uniformity at alpha = 0.01 (df = 5, critical value 15.086).
        let mut rng = Rng64::new(77);
        let draws = 100_000;
        let mut counts = [0usize; 6];
        for _ in 0..draws {
            let v = sample_pose_index(0, 5, 5, 400, &mut rng);
            assert!(v <= 5);
            counts[v] += 1;
        }
        let expected = draws as f64 / 6.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 15.086, "chi-squared {chi2}, counts {counts:?}");
    }

    #[test]
    fn sample_pose_index_attains_interval_bounds() {
        let mut rng = Rng64::new(3);
        let (v, rho_bwd, rho_fwd, h) = (200usize, 21u32, 22u32, 400usize);
        let (mut saw_lo, mut saw_hi) = (false, false);
        for _ in 0..100_000 {
            let s = sample_pose_index(v, rho_bwd, rho_fwd, h, &mut rng);
            assert!((179..=222).contains(&s));
            saw_lo |= s == 179;
            saw_hi |= s == 222;
        }
        assert!(saw_lo && saw_hi);
    }

    fn noise_image(width: usize, height: usize, seed: u64) -> Image {
        let mut rng = Rng64::new(seed);
        let mut img = Image::new(width, height);
        // Smooth-ish random texture: random base plus a low-frequency ramp so
        // gradients stay informative after bilinear shifts.
        let mut values = vec![0.0f32; width * height];
        for v in values.iter_mut() {
            *v = rng.uniform() as f32;
        }
        for v in 0..height {
            for u in 0..width {
                // 3x3 box blur of the noise.
                let mut acc = 0.0;
                let mut n = 0.0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let x = (u as i64 + dx).clamp(0, width as i64 - 1) as usize;
                        let y = (v as i64 + dy).clamp(0, height as i64 - 1) as usize;
                        acc += values[y * width + x];
                        n += 1.0;
                    }
                }
                let g = acc / n;
                img.set_pixel(u, v, [g, g, g]);
            }
        }
        img
    }

    fn shift_image(img: &Image, dx: f64, dy: f64) -> Image {
        let mut out = Image::new(img.width, img.height);
        for v in 0..img.height {
            for u in 0..img.width {
                let s = img.sample_bilinear(u as f64 - dx, v as f64 - dy);
                out.set_pixel(u, v, [s[0] as f32, s[1] as f32, s[2] as f32]);
            }
        }
        out
    }

    #[test]
    fn lk_flow_zero_for_identical_images() {
        let img = noise_image(48, 48, 5);
        let flow = lk_flow(&img, &img, &LkConfig::default()).unwrap();
        let mut any_valid = false;
        for v in 8..40 {
            for u in 8..40 {
                let (dc, dr, valid) = flow.get(u, v);
                if valid {
                    any_valid = true;
                    assert!(dc.abs() < 0.05 && dr.abs() < 0.05, "({dc},{dr}) at ({u},{v})");
                }
            }
        }
        assert!(any_valid, "textured region should validate");
    }

    #[test]
    fn lk_flow_recovers_synthetic_shift() {
        let img = noise_image(48, 48, 6);
        let shifted = shift_image(&img, 2.0, 0.0);
        let flow = lk_flow(&img, &shifted, &LkConfig::default()).unwrap();
        let mut count = 0;
        for v in 10..38 {
            for u in 10..38 {
                let (dc, dr, valid) = flow.get(u, v);
                if !valid {
                    continue;
                }
                assert!((dc - 2.0).abs() < 0.25, "dcol {dc} at ({u},{v})");
                assert!(dr.abs() < 0.25, "drow {dr} at ({u},{v})");
                count += 1;
            }
        }
        assert!(count > 300, "only {count} valid interior pixels");
    }

    #[test]
    fn lk_flow_invalidates_flat_images() {
        let flat = Image::new(32, 32);
        let flow = lk_flow(&flat, &flat, &LkConfig::default()).unwrap();
        assert_eq!(flow.valid_fraction(), 0.0);
    }

    #[test]
    fn lk_flow_rejects_mismatched_images() {
        let a = Image::new(32, 32);
        let b = Image::new(16, 32);
        assert!(matches!(lk_flow(&a, &b, &LkConfig::default()), Err(Error::ImagesMismatch(_))));
    }

    #[test]
    fn flow_field_roundtrip_preserves_invalid() {
        let mut flow = FlowField::new(5, 4);
        flow.set(1, 1, 1.5, -2.5, true);
        flow.set(2, 3, 0.0, 0.0, false);
        let dir = std::env::temp_dir().join(format!("rsfield_flow_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("f.pfm");
        flow.save(&path).unwrap();
        let back = FlowField::load(&path).unwrap();
        assert_eq!(back.get(1, 1), (1.5, -2.5, true));
        assert_eq!(back.get(2, 3).2, false);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
