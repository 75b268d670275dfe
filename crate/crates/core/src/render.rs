//! Differentiable emission-absorption ray marching.
//!
//! Rays are marched with stratified jitter derived from a stateless hash, so
//! any ray can be re-rendered with identical sample positions. The batch
//! gradient path exploits that: grid gradients are the exact analytic adjoint
//! of the quadrature, while the 12 endpoint-twist components per frame are
//! differentiated by central finite differences under common random numbers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{sigmoid, Field, GridGradient, RadianceGrid};
use crate::math::Vec3;
use crate::rng::{hash01, hash_u64};
use crate::se3::{interpolate_row_pose, FramePoseParams, Pose};

/// Transmittance below this ends the march; the remaining weights are zero.
const EARLY_STOP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("intrinsics need positive focals and size".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

/// March interval and step count; near/far come from the dataset config.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RenderOptions {
    pub n_steps: usize,
    pub t_near: f64,
    pub t_far: f64,
}

#[derive(Clone, Debug)]
pub struct RenderResult {
    pub rgb: [f64; 3],
    pub expected_depth: f64,
    pub opacity: f64,
    pub weights: Vec<f64>,
}

/// Ray through continuous image coordinates (x, y), where pixel (u, v) has
/// its center at (u + 0.5, v + 0.5).
pub fn ray_through(k: &Intrinsics, pose: &Pose, x: f64, y: f64, opts: &RenderOptions) -> Ray {
    let dir_cam = Vec3::new((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
    Ray {
        origin: pose.camera_center(),
        direction: pose.rotate(dir_cam).normalized(),
        t_near: opts.t_near,
        t_far: opts.t_far,
    }
}

/// Pixel-center ray for integer pixel (u, v).
pub fn generate_ray(k: &Intrinsics, pose: &Pose, u: usize, v: usize, opts: &RenderOptions) -> Result<Ray> {
    if u >= k.width || v >= k.height {
        return Err(Error::PixelOutOfRange { u, v, width: k.width, height: k.height });
    }
    Ok(ray_through(k, pose, u as f64 + 0.5, v as f64 + 0.5, opts))
}

#[inline]
fn stratified_t(ray: &Ray, n_steps: usize, jitter_seed: u64, j: usize) -> f64 {
    let dt = (ray.t_far - ray.t_near) / n_steps as f64;
    ray.t_near + (j as f64 + hash01(jitter_seed, j as u64, 0)) * dt
}

/// Forward-only march returning the composited color.
pub fn render_ray_color<F: Field + ?Sized>(
    field: &F,
    ray: &Ray,
    n_steps: usize,
    jitter_seed: u64,
) -> [f64; 3] {
    let mut rgb = [0.0; 3];
    let mut trans = 1.0;
    let mut t = stratified_t(ray, n_steps, jitter_seed, 0);
    for j in 0..n_steps {
        let t_next = if j + 1 < n_steps {
            stratified_t(ray, n_steps, jitter_seed, j + 1)
        } else {
            ray.t_far
        };
        let delta = t_next - t;
        let (sigma, color) = field.query(ray.origin + ray.direction * t);
        let alpha = 1.0 - (-sigma * delta).exp();
        let w = trans * alpha;
        rgb[0] += w * color[0];
        rgb[1] += w * color[1];
        rgb[2] += w * color[2];
        trans *= 1.0 - alpha;
        if trans < EARLY_STOP {
            break;
        }
        t = t_next;
    }
    rgb
}

/// Full march with per-sample weights kept for adjoint reuse. Background is
/// black; no background term is added.
pub fn render_ray<F: Field + ?Sized>(
    field: &F,
    ray: &Ray,
    n_steps: usize,
    jitter_seed: u64,
) -> RenderResult {
    debug_assert!(n_steps >= 1);
    debug_assert!((ray.direction.norm() - 1.0).abs() < 1e-9);
    let mut rgb = [0.0; 3];
    let mut depth_sum = 0.0;
    let mut opacity = 0.0;
    let mut weights = Vec::with_capacity(n_steps);
    let mut trans = 1.0;
    let mut t = stratified_t(ray, n_steps, jitter_seed, 0);
    for j in 0..n_steps {
        let t_next = if j + 1 < n_steps {
            stratified_t(ray, n_steps, jitter_seed, j + 1)
        } else {
            ray.t_far
        };
        let delta = t_next - t;
        let (sigma, color) = field.query(ray.origin + ray.direction * t);
        let alpha = 1.0 - (-sigma * delta).exp();
        let w = trans * alpha;
        weights.push(w);
        rgb[0] += w * color[0];
        rgb[1] += w * color[1];
        rgb[2] += w * color[2];
        depth_sum += w * t;
        opacity += w;
        trans *= 1.0 - alpha;
        if trans < EARLY_STOP {
            break;
        }
        t = t_next;
    }
    RenderResult {
        rgb,
        expected_depth: depth_sum / opacity.max(1e-8),
        opacity,
        weights,
    }
}

/// One sampled point kept for the backward pass.
#[derive(Clone, Copy)]
struct SampleRecord {
    position: Vec3,
    delta: f64,
    color: [f64; 3],
    weight: f64,
    /// Transmittance after this sample, T_{j+1} = T_j (1 - alpha_j).
    trans_after: f64,
}

fn render_ray_recording(
    grid: &RadianceGrid,
    ray: &Ray,
    n_steps: usize,
    jitter_seed: u64,
    records: &mut Vec<SampleRecord>,
) -> [f64; 3] {
    records.clear();
    let mut rgb = [0.0; 3];
    let mut trans = 1.0;
    let mut t = stratified_t(ray, n_steps, jitter_seed, 0);
    for j in 0..n_steps {
        let t_next = if j + 1 < n_steps {
            stratified_t(ray, n_steps, jitter_seed, j + 1)
        } else {
            ray.t_far
        };
        let delta = t_next - t;
        let position = ray.origin + ray.direction * t;
        let (sigma, color) = grid.query(position);
        let alpha = 1.0 - (-sigma * delta).exp();
        let weight = trans * alpha;
        trans *= 1.0 - alpha;
        rgb[0] += weight * color[0];
        rgb[1] += weight * color[1];
        rgb[2] += weight * color[2];
        records.push(SampleRecord { position, delta, color, weight, trans_after: trans });
        if trans < EARLY_STOP {
            break;
        }
        t = t_next;
    }
    rgb
}

/// Sparse grid-gradient entries: node index, then (density, rgb) cotangents
/// already multiplied through the activations and trilinear weights.
type SparseGrad = Vec<(u32, [f64; 4])>;

/// Backpropagates d(loss)/d(rgb) through the recorded march into sparse grid
/// cotangents. Mirrors `RadianceGrid::accumulate_sample_gradient`.
fn backprop_ray(
    grid: &RadianceGrid,
    records: &[SampleRecord],
    d_rgb_out: [f64; 3],
    sparse: &mut SparseGrad,
) {
    // Suffix color sum S_c = sum_{m > j} w_m c_m, built back-to-front.
    let mut suffix = [0.0f64; 3];
    for rec in records.iter().rev() {
        // d out_c / d c_j = w_j ; d out_c / d sigma_j = delta_j (T_{j+1} c_j - S_c).
        let d_color = [
            d_rgb_out[0] * rec.weight,
            d_rgb_out[1] * rec.weight,
            d_rgb_out[2] * rec.weight,
        ];
        let mut d_sigma = 0.0;
        for ch in 0..3 {
            d_sigma += d_rgb_out[ch] * rec.delta * (rec.trans_after * rec.color[ch] - suffix[ch]);
        }
        for ch in 0..3 {
            suffix[ch] += rec.weight * rec.color[ch];
        }
        if d_sigma == 0.0 && d_color == [0.0; 3] {
            continue;
        }
        let Some((idx, wts)) = grid.stencil_weights(rec.position) else { continue };
        let (raw_d, raw_c) = grid.raw_at_weights(&idx, &wts);
        let act_d = sigmoid(raw_d);
        let act_c = [
            sigmoid(raw_c[0]) * (1.0 - sigmoid(raw_c[0])),
            sigmoid(raw_c[1]) * (1.0 - sigmoid(raw_c[1])),
            sigmoid(raw_c[2]) * (1.0 - sigmoid(raw_c[2])),
        ];
        for (&i, &w) in idx.iter().zip(wts.iter()) {
            sparse.push((
                i as u32,
                [
                    d_sigma * act_d * w,
                    d_color[0] * act_c[0] * w,
                    d_color[1] * act_c[1] * w,
                    d_color[2] * act_c[2] * w,
                ],
            ));
        }
    }
}

/// One training ray: pixel (u, v) of `frame` supervised by `target`, rendered
/// from the pose of row `pose_row` (differs from v only under multi-sampling).
#[derive(Clone, Copy, Debug)]
pub struct BatchRay {
    pub frame: usize,
    pub u: usize,
    pub v: usize,
    pub pose_row: usize,
    pub target: [f64; 3],
}

pub struct BatchRenderInputs<'a> {
    pub grid: &'a RadianceGrid,
    pub pose_params: &'a [FramePoseParams],
    pub intrinsics: &'a Intrinsics,
    pub options: &'a RenderOptions,
    pub n_pose: usize,
    /// Base seed for this batch's stratified jitter; ray i hashes it with i.
    pub jitter_seed: u64,
    /// Step for the pose finite differences.
    pub fd_step: f64,
    pub compute_pose_grads: bool,
}

pub struct BatchGradients {
    /// Mean over the batch of the squared rgb error.
    pub loss: f64,
    pub grid_grad: GridGradient,
    /// d loss / d (xi_start, xi_end) per frame, 12 components each.
    pub pose_grads: Vec<[f64; 12]>,
    pub per_ray_sq_err: Vec<f64>,
}

struct FrameWork {
    frame: usize,
    /// Indices into the batch slice, in batch order.
    rays: Vec<usize>,
}

fn frame_sq_err_sum(
    grid: &RadianceGrid,
    params: &FramePoseParams,
    inputs: &BatchRenderInputs,
    batch: &[BatchRay],
    rays: &[usize],
) -> Result<f64> {
    let k = inputs.intrinsics;
    let mut total = 0.0;
    for &ri in rays {
        let b = &batch[ri];
        let pose = interpolate_row_pose(params, b.pose_row, k.height, inputs.n_pose)?;
        let ray = generate_ray(k, &pose, b.u, b.v, inputs.options)?;
        let rgb = render_ray_color(grid, &ray, inputs.options.n_steps, hash_u64(inputs.jitter_seed, ri as u64));
        for ch in 0..3 {
            let e = rgb[ch] - b.target[ch];
            total += e * e;
        }
    }
    Ok(total)
}

/// Renders a training batch and returns the photometric loss with gradients
/// for the grid (analytic adjoint) and the endpoint twists (central finite
/// differences re-rendering only the owning frame's rays, with the same
/// jitter). Deterministic for a fixed seed regardless of worker count: rays
/// are grouped per frame and merged in frame order.
pub fn render_batch_with_grads(
    inputs: &BatchRenderInputs,
    batch: &[BatchRay],
) -> Result<BatchGradients> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let k = inputs.intrinsics;
    k.validate()?;
    for b in batch {
        if b.frame >= inputs.pose_params.len() {
            return Err(Error::InvalidConfig(format!("batch frame {} out of range", b.frame)));
        }
        if b.u >= k.width || b.v >= k.height || b.pose_row >= k.height {
            return Err(Error::PixelOutOfRange { u: b.u, v: b.v, width: k.width, height: k.height });
        }
    }

    // Group rays by frame, preserving batch order within each group.
    let mut groups: Vec<FrameWork> = Vec::new();
    for (i, b) in batch.iter().enumerate() {
        match groups.iter_mut().find(|g| g.frame == b.frame) {
            Some(g) => g.rays.push(i),
            None => groups.push(FrameWork { frame: b.frame, rays: vec![i] }),
        }
    }

    let inv_batch = 1.0 / batch.len() as f64;
    struct FrameOut {
        sparse: SparseGrad,
        pose_grad: [f64; 12],
        sq_errs: Vec<(usize, f64)>,
    }

    let outs: Vec<Result<FrameOut>> = groups
        .par_iter()
        .map(|group| {
            let params = &inputs.pose_params[group.frame];
            let mut sparse: SparseGrad = Vec::new();
            let mut records = Vec::with_capacity(inputs.options.n_steps);
            let mut sq_errs = Vec::with_capacity(group.rays.len());
            for &ri in &group.rays {
                let b = &batch[ri];
                let pose = interpolate_row_pose(params, b.pose_row, k.height, inputs.n_pose)?;
                let ray = generate_ray(k, &pose, b.u, b.v, inputs.options)?;
                let seed = hash_u64(inputs.jitter_seed, ri as u64);
                let rgb = render_ray_recording(inputs.grid, &ray, inputs.options.n_steps, seed, &mut records);
                let mut err = 0.0;
                let mut d_rgb = [0.0; 3];
                for ch in 0..3 {
                    let e = rgb[ch] - b.target[ch];
                    err += e * e;
                    d_rgb[ch] = 2.0 * e * inv_batch;
                }
                sq_errs.push((ri, err));
                backprop_ray(inputs.grid, &records, d_rgb, &mut sparse);
            }

            let mut pose_grad = [0.0; 12];
            if inputs.compute_pose_grads {
                let h = inputs.fd_step;
                let base = params.twists_to_array();
                for comp in 0..12 {
                    let mut plus = params.clone();
                    let mut minus = params.clone();
                    let mut arr = base;
                    arr[comp] = base[comp] + h;
                    plus.set_twists_from_array(&arr);
                    arr[comp] = base[comp] - h;
                    minus.set_twists_from_array(&arr);
                    let lp = frame_sq_err_sum(inputs.grid, &plus, inputs, batch, &group.rays)?;
                    let lm = frame_sq_err_sum(inputs.grid, &minus, inputs, batch, &group.rays)?;
                    pose_grad[comp] = (lp - lm) / (2.0 * h) * inv_batch;
                }
            }
            Ok(FrameOut { sparse, pose_grad, sq_errs })
        })
        .collect();

    let mut grid_grad = GridGradient::zeros_like(inputs.grid);
    let mut pose_grads = vec![[0.0; 12]; inputs.pose_params.len()];
    let mut per_ray_sq_err = vec![0.0; batch.len()];
    for (group, out) in groups.iter().zip(outs) {
        let out = out?;
        for (idx, vals) in out.sparse {
            let i = idx as usize;
            grid_grad.d_raw_density[i] += vals[0];
            let ci = 3 * i;
            grid_grad.d_raw_color[ci] += vals[1];
            grid_grad.d_raw_color[ci + 1] += vals[2];
            grid_grad.d_raw_color[ci + 2] += vals[3];
        }
        pose_grads[group.frame] = out.pose_grad;
        for (ri, err) in out.sq_errs {
            per_ray_sq_err[ri] = err;
        }
    }
    // Summation in batch order, independent of the parallel schedule.
    let loss = per_ray_sq_err.iter().sum::<f64>() * inv_batch;
    Ok(BatchGradients { loss, grid_grad, pose_grads, per_ray_sq_err })
}

/// Sub-pixel sample offsets for `spp` samples per pixel (1 or a square grid).
pub fn subpixel_offsets(spp: usize) -> Vec<(f64, f64)> {
    let side = (spp as f64).sqrt().round() as usize;
    if side * side == spp && side > 1 {
        let mut offsets = Vec::with_capacity(spp);
        for sy in 0..side {
            for sx in 0..side {
                offsets.push((
                    (sx as f64 + 0.5) / side as f64,
                    (sy as f64 + 0.5) / side as f64,
                ));
            }
        }
        offsets
    } else {
        vec![(0.5, 0.5)]
    }
}

/// Renders one image row at a fixed pose. The jitter is keyed by pixel and
/// subsample only, so identical poses produce identical pixels no matter
/// which row or frame is being composed.
pub fn render_row<F: Field>(
    field: &F,
    pose: &Pose,
    k: &Intrinsics,
    v: usize,
    opts: &RenderOptions,
    offsets: &[(f64, f64)],
    seed: u64,
) -> Vec<f32> {
    let mut row = vec![0.0f32; 3 * k.width];
    let inv = 1.0 / offsets.len() as f64;
    for u in 0..k.width {
        let mut acc = [0.0f64; 3];
        for (s, &(ox, oy)) in offsets.iter().enumerate() {
            let ray = ray_through(k, pose, u as f64 + ox, v as f64 + oy, opts);
            let jitter = hash_u64(seed, ((v * k.width + u) * offsets.len() + s) as u64);
            let rgb = render_ray_color(field, &ray, opts.n_steps, jitter);
            for ch in 0..3 {
                acc[ch] += rgb[ch];
            }
        }
        for ch in 0..3 {
            row[3 * u + ch] = (acc[ch] * inv) as f32;
        }
    }
    row
}

/// Global-shutter render: every row from the same pose, rows in parallel.
pub fn render_gs_image<F: Field>(
    field: &F,
    pose: &Pose,
    k: &Intrinsics,
    opts: &RenderOptions,
    spp: usize,
    seed: u64,
) -> crate::io::Image {
    let offsets = subpixel_offsets(spp);
    let rows: Vec<Vec<f32>> = (0..k.height)
        .into_par_iter()
        .map(|v| render_row(field, pose, k, v, opts, &offsets, seed))
        .collect();
    let mut image = crate::io::Image::new(k.width, k.height);
    for (v, row) in rows.iter().enumerate() {
        image.set_row(v, row);
    }
    image
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{AnalyticScene, Primitive, PrimitiveShape};
    use crate::math::{Aabb, Vec3};
    use crate::rng::Rng64;
    use crate::se3::{exp, Twist};

    struct SlabField {
        z0: f64,
        z1: f64,
        sigma: f64,
        color: [f64; 3],
    }

    impl Field for SlabField {
        fn query(&self, p: Vec3) -> (f64, [f64; 3]) {
            if p.z >= self.z0 && p.z <= self.z1 {
                (self.sigma, self.color)
            } else {
                (0.0, [0.0; 3])
            }
        }
    }

    struct EmptyField;
    impl Field for EmptyField {
        fn query(&self, _p: Vec3) -> (f64, [f64; 3]) {
            (0.0, [0.0; 3])
        }
    }

    fn test_intrinsics() -> Intrinsics {
        // Half-integer principal point so pixel centers land on it exactly.
        Intrinsics { fx: 50.0, fy: 50.0, cx: 32.5, cy: 32.5, width: 128, height: 64 }
    }

    fn z_ray() -> Ray {
        Ray {
            origin: Vec3::new(0.0, 0.0, -1.0),
            direction: Vec3::new(0.0, 0.0, 1.0),
            t_near: 0.1,
            t_far: 3.0,
        }
    }

    #[test]
    fn ray_through_principal_point_is_optical_axis() {
        let k = test_intrinsics();
        let opts = RenderOptions { n_steps: 8, t_near: 0.1, t_far: 2.0 };
        // Pixel center at the principal point: u + 0.5 == cx.
        let ray = generate_ray(&k, &Pose::IDENTITY, 32, 32, &opts).unwrap();
        assert!((ray.direction - Vec3::new(0.0, 0.0, 1.0)).max_abs() < 1e-12);
    }

    #[test]
    fn ray_45_degrees() {
        let k = test_intrinsics();
        let opts = RenderOptions { n_steps: 8, t_near: 0.1, t_far: 2.0 };
        // u + 0.5 - cx == fx gives a (1, 0, 1) direction before normalization.
        let u = (k.cx + k.fx - 0.5) as usize;
        let v = (k.cy - 0.5) as usize;
        let ray = generate_ray(&k, &Pose::IDENTITY, u, v, &opts).unwrap();
        let expected = Vec3::new(1.0, 0.0, 1.0).normalized();
        assert!((ray.direction - expected).max_abs() < 1e-12);
    }

    #[test]
    fn rotated_pose_rotates_ray() {
        let k = test_intrinsics();
        let opts = RenderOptions { n_steps: 8, t_near: 0.1, t_far: 2.0 };
        let pose = exp(Twist::from_array([0.0, 0.0, 0.0, 0.2, -0.4, 0.1]));
        let base = generate_ray(&k, &Pose::IDENTITY, 10, 50, &opts).unwrap();
        let rotated = generate_ray(&k, &pose, 10, 50, &opts).unwrap();
        let expected = pose.rotate(base.direction);
        assert!((rotated.direction - expected).max_abs() < 1e-12);
        assert!(generate_ray(&k, &pose, k.width, 0, &opts).is_err());
    }

    #[test]
    fn empty_field_renders_black() {
        let res = render_ray(&EmptyField, &z_ray(), 64, 1);
        assert_eq!(res.rgb, [0.0; 3]);
        assert_eq!(res.opacity, 0.0);
    }

    #[test]
    fn slab_matches_closed_form() {
        // rgb -> c (1 - exp(-sigma L)) for a homogeneous slab of thickness L.
        let slab = SlabField { z0: 0.0, z1: 0.5, sigma: 3.0, color: [0.8, 0.4, 0.2] };
        let expected_alpha = 1.0 - (-3.0f64 * 0.5).exp();
        let res = render_ray(&slab, &z_ray(), 512, 7);
        for ch in 0..3 {
            let expected = slab.color[ch] * expected_alpha;
            let rel = (res.rgb[ch] - expected).abs() / expected;
            assert!(rel < 0.01, "channel {ch}: rel err {rel}");
        }
    }

    #[test]
    fn quadrature_error_halves_when_steps_double() {
        let slab = SlabField { z0: 0.05, z1: 0.55, sigma: 4.0, color: [1.0, 1.0, 1.0] };
        let expected = 1.0 - (-4.0f64 * 0.5).exp();
        let mean_err = |n_steps: usize| -> f64 {
            (0..400)
                .map(|s| {
                    let res = render_ray_color(&slab, &z_ray(), n_steps, 1000 + s);
                    (res[0] - expected).abs()
                })
                .sum::<f64>()
                / 400.0
        };
        let e1 = mean_err(64);
        let e2 = mean_err(128);
        let ratio = e1 / e2;
        assert!((1.5..=3.0).contains(&ratio), "error ratio {ratio} (e1={e1}, e2={e2})");
    }

    #[test]
    fn opaque_wall_dominates() {
        let wall = SlabField { z0: 0.5, z1: 0.6, sigma: 1e4, color: [0.9, 0.1, 0.3] };
        let res = render_ray(&wall, &z_ray(), 256, 3);
        // Wall starts 1.5 units from the origin along the ray.
        assert!((res.opacity - 1.0).abs() < 1e-6);
        assert!((res.expected_depth - 1.5).abs() < 0.02);
        for ch in 0..3 {
            assert!((res.rgb[ch] - wall.color[ch]).abs() < 1e-6);
        }
    }

    #[test]
    fn weights_are_a_valid_partition() {
        let slab = SlabField { z0: -0.2, z1: 0.9, sigma: 2.5, color: [0.5, 0.5, 0.5] };
        let res = render_ray(&slab, &z_ray(), 128, 11);
        let mut total = 0.0;
        for &w in &res.weights {
            assert!(w >= 0.0);
            total += w;
        }
        assert!(total <= 1.0 + 1e-9);
        assert!((total - res.opacity).abs() < 1e-12);
        // Transmittance monotonicity: cumulative weights never decrease, and
        // the implied transmittance never increases.
        let mut trans = 1.0;
        for &w in &res.weights {
            let next = trans - w;
            assert!(next <= trans + 1e-12);
            trans = next;
        }
    }

    fn tiny_grid_setup() -> (RadianceGrid, Vec<FramePoseParams>, Intrinsics, RenderOptions) {
        let mut rng = Rng64::new(21);
        let mut grid = RadianceGrid::new([8, 8, 8], Aabb::unit_cube(), 0.0).unwrap();
        for d in grid.raw_density.iter_mut() {
            *d = rng.uniform_range(-1.0, 2.0);
        }
        for c in grid.raw_color.iter_mut() {
            *c = rng.uniform_range(-2.0, 2.0);
        }
        let anchor = Pose::look_at(Vec3::new(0.0, 0.0, -1.5), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0));
        let params = vec![FramePoseParams {
            anchor,
            xi_start: Twist::from_array([0.01, 0.0, 0.0, 0.0, 0.005, 0.0]),
            xi_end: Twist::from_array([-0.01, 0.005, 0.0, 0.005, 0.0, 0.0]),
        }];
        let k = Intrinsics { fx: 40.0, fy: 40.0, cx: 16.0, cy: 16.0, width: 32, height: 32 };
        let opts = RenderOptions { n_steps: 48, t_near: 0.5, t_far: 2.5 };
        (grid, params, k, opts)
    }

    fn tiny_batch(k: &Intrinsics, rng: &mut Rng64, n: usize) -> Vec<BatchRay> {
        (0..n)
            .map(|_| {
                let v = rng.uniform_int(0, k.height as i64 - 1) as usize;
                BatchRay {
                    frame: 0,
                    u: rng.uniform_int(0, k.width as i64 - 1) as usize,
                    v,
                    pose_row: v,
                    target: [rng.uniform(), rng.uniform(), rng.uniform()],
                }
            })
            .collect()
    }

    #[test]
    fn zero_residual_means_zero_loss_and_gradients() {
        let (grid, params, k, opts) = tiny_grid_setup();
        let mut rng = Rng64::new(5);
        let mut batch = tiny_batch(&k, &mut rng, 8);
        let inputs = BatchRenderInputs {
            grid: &grid,
            pose_params: &params,
            intrinsics: &k,
            options: &opts,
            n_pose: k.height,
            jitter_seed: 99,
            fd_step: 1e-5,
            compute_pose_grads: true,
        };
        // First pass to observe the rendered colors, then feed them back as
        // targets.
        let first = render_batch_with_grads(&inputs, &batch).unwrap();
        let _ = first;
        for (i, b) in batch.iter_mut().enumerate() {
            let pose = interpolate_row_pose(&params[0], b.pose_row, k.height, k.height).unwrap();
            let ray = generate_ray(&k, &pose, b.u, b.v, &opts).unwrap();
            b.target = render_ray_color(&grid, &ray, opts.n_steps, hash_u64(99, i as u64));
        }
        let out = render_batch_with_grads(&inputs, &batch).unwrap();
        assert!(out.loss < 1e-28);
        assert!(out.grid_grad.d_raw_density.iter().all(|&g| g.abs() < 1e-14));
        assert!(out.pose_grads[0].iter().all(|&g| g.abs() < 1e-9));
    }

    #[test]
    fn grid_gradient_matches_finite_differences_through_renderer() {
        let (grid, params, k, opts) = tiny_grid_setup();
        let mut rng = Rng64::new(6);
        let batch = tiny_batch(&k, &mut rng, 12);
        let inputs = BatchRenderInputs {
            grid: &grid,
            pose_params: &params,
            intrinsics: &k,
            options: &opts,
            n_pose: k.height,
            jitter_seed: 1234,
            fd_step: 1e-5,
            compute_pose_grads: false,
        };
        let out = render_batch_with_grads(&inputs, &batch).unwrap();
        let h = 1e-4;
        let mut checked = 0;
        let mut attempts = 0;
        while checked < 20 && attempts < 4000 {
            attempts += 1;
            let i = rng.uniform_int(0, grid.node_count() as i64 - 1) as usize;
            let density = rng.uniform() < 0.5;
            let analytic = if density {
                out.grid_grad.d_raw_density[i]
            } else {
                out.grid_grad.d_raw_color[3 * i]
            };
            if analytic.abs() < 1e-7 {
                continue; // probe voxels the batch actually touches
            }
            let mut gp = grid.clone();
            let mut gm = grid.clone();
            if density {
                gp.raw_density[i] += h;
                gm.raw_density[i] -= h;
            } else {
                gp.raw_color[3 * i] += h;
                gm.raw_color[3 * i] -= h;
            }
            let loss_of = |g: &RadianceGrid| {
                let inputs = BatchRenderInputs { grid: g, ..inputs };
                render_batch_with_grads(&inputs, &batch).unwrap().loss
            };
            let fd = (loss_of(&gp) - loss_of(&gm)) / (2.0 * h);
            let rel = (analytic - fd).abs() / fd.abs().max(1e-9);
            assert!(rel < 1e-3, "node {i} density={density}: analytic {analytic} fd {fd} rel {rel}");
            checked += 1;
        }
        assert_eq!(checked, 20, "not enough touched voxels found");
    }

    #[test]
    fn pose_gradient_points_toward_brighter_target() {
        // A red wall ahead of the camera; targets are brighter red than the
        // render, so moving the camera toward the wall must lower the loss:
        // the directional derivative along +z translation is negative.
        let scene = AnalyticScene {
            primitives: vec![Primitive {
                shape: PrimitiveShape::Box,
                center: [0.0, 0.0, 0.4],
                size: [0.5, 0.5, 0.1],
                density: 4.0,
                color: [0.9, 0.05, 0.05],
            }],
        };
        let grid = RadianceGrid::bake_from_scene(&scene, [24, 24, 24], Aabb::unit_cube(), 1).unwrap();
        let anchor = Pose::look_at(Vec3::new(0.0, 0.0, -1.2), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0));
        let params = vec![FramePoseParams::at_anchor(anchor)];
        let k = Intrinsics { fx: 40.0, fy: 40.0, cx: 16.0, cy: 16.0, width: 32, height: 32 };
        let opts = RenderOptions { n_steps: 64, t_near: 0.4, t_far: 2.5 };
        let mut batch = Vec::new();
        for v in (4..28).step_by(4) {
            for u in (4..28).step_by(4) {
                batch.push(BatchRay { frame: 0, u, v, pose_row: v, target: [0.0; 3] });
            }
        }
        let inputs = BatchRenderInputs {
            grid: &grid,
            pose_params: &params,
            intrinsics: &k,
            options: &opts,
            n_pose: k.height,
            jitter_seed: 31,
            fd_step: 1e-5,
            compute_pose_grads: true,
        };
        // Observe renders, brighten the red channel, use as target.
        for (i, b) in batch.iter_mut().enumerate() {
            let pose = interpolate_row_pose(&params[0], b.pose_row, k.height, k.height).unwrap();
            let ray = generate_ray(&k, &pose, b.u, b.v, &opts).unwrap();
            let rgb = render_ray_color(&grid, &ray, opts.n_steps, hash_u64(31, i as u64));
            b.target = [(rgb[0] + 0.08).min(1.0), rgb[1], rgb[2]];
        }
        let out = render_batch_with_grads(&inputs, &batch).unwrap();
        // Moving toward the wall means +z translation on both endpoint
        // twists (camera-local z is the viewing axis). The loss gradient
        // along that direction must be negative.
        let dir_deriv = out.pose_grads[0][2] + out.pose_grads[0][8];
        assert!(dir_deriv < 0.0, "directional derivative {dir_deriv}");
    }

    #[test]
    fn batch_loss_is_deterministic() {
        let (grid, params, k, opts) = tiny_grid_setup();
        let mut rng = Rng64::new(9);
        let batch = tiny_batch(&k, &mut rng, 32);
        let inputs = BatchRenderInputs {
            grid: &grid,
            pose_params: &params,
            intrinsics: &k,
            options: &opts,
            n_pose: k.height,
            jitter_seed: 5,
            fd_step: 1e-5,
            compute_pose_grads: false,
        };
        let a = render_batch_with_grads(&inputs, &batch).unwrap();
        let b = render_batch_with_grads(&inputs, &batch).unwrap();
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        // Single-threaded pool must agree bit-for-bit with the default pool.
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| render_batch_with_grads(&inputs, &batch).unwrap());
        assert_eq!(a.loss.to_bits(), c.loss.to_bits());
        for (x, y) in a.grid_grad.d_raw_density.iter().zip(&c.grid_grad.d_raw_density) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let (grid, params, k, opts) = tiny_grid_setup();
        let inputs = BatchRenderInputs {
            grid: &grid,
            pose_params: &params,
            intrinsics: &k,
            options: &opts,
            n_pose: k.height,
            jitter_seed: 0,
            fd_step: 1e-5,
            compute_pose_grads: false,
        };
        assert!(matches!(render_batch_with_grads(&inputs, &[]), Err(Error::EmptyBatch)));
    }
}
