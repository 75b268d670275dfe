//! SE(3) twists, rigid poses, and the per-row pose interpolation used by the
//! rolling-shutter trajectory model.
//!
//! Poses are camera-to-world: a ray through the camera center starts at the
//! pose translation, and directions are rotated from camera into world frame.
//! Each frame keeps a fixed anchor pose (its initialization) and learns two
//! twists for the first and last row; intermediate rows interpolate the twist
//! linearly and map through `exp`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};

/// Below this angle the trig coefficient ratios switch to series expansions.
const SMALL_ANGLE: f64 = 1e-4;
/// Rotations closer than this to pi are rejected by `log`.
const PI_MARGIN: f64 = 1e-6;

/// Element of se(3): translational part `v`, rotational part `w` (axis-angle).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    pub v: Vec3,
    pub w: Vec3,
}

impl Twist {
    pub const ZERO: Twist = Twist { v: Vec3::ZERO, w: Vec3::ZERO };

    pub fn new(v: Vec3, w: Vec3) -> Self {
        Twist { v, w }
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Twist {
            v: Vec3::new(a[0], a[1], a[2]),
            w: Vec3::new(a[3], a[4], a[5]),
        }
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.v.x, self.v.y, self.v.z, self.w.x, self.w.y, self.w.z]
    }

    pub fn scaled(self, s: f64) -> Twist {
        Twist { v: self.v * s, w: self.w * s }
    }

    pub fn add(self, o: Twist) -> Twist {
        Twist { v: self.v + o.v, w: self.w + o.w }
    }

    pub fn is_finite(self) -> bool {
        self.v.is_finite() && self.w.is_finite()
    }

    pub fn max_abs(self) -> f64 {
        self.v.max_abs().max(self.w.max_abs())
    }
}

/// Rigid transform: orthonormal rotation plus translation, camera-to-world.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        rotation: Mat3::IDENTITY,
        translation: Vec3::ZERO,
    };

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Pose { rotation, translation }
    }

    /// Composition: `self` applied after `other` as point maps,
    /// i.e. (self * other)(p) = self(other(p)).
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.mul_mat(&other.rotation),
            translation: self.rotation.mul_vec(other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -rt.mul_vec(self.translation),
        }
    }

    /// World-space camera center. Camera-to-world convention, so this is the
    /// translation itself.
    pub fn camera_center(&self) -> Vec3 {
        self.translation
    }

    pub fn transform_point(&self, p: Vec3) -> Vec3 {
        self.rotation.mul_vec(p) + self.translation
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        self.rotation.mul_vec(v)
    }

    /// 12-float serialization: row-major rotation, then translation.
    pub fn to_floats(&self) -> [f64; 12] {
        let m = &self.rotation.m;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
            self.translation.x, self.translation.y, self.translation.z,
        ]
    }

    /// Parses the 12-float form, validating the rotation block.
    pub fn from_floats(f: &[f64; 12]) -> Result<Pose> {
        let rotation = Mat3::from_rows([f[0], f[1], f[2]], [f[3], f[4], f[5]], [f[6], f[7], f[8]]);
        let pose = Pose {
            rotation,
            translation: Vec3::new(f[9], f[10], f[11]),
        };
        if rotation.orthonormality_error() > 1e-9 {
            return Err(Error::MalformedFile {
                path: String::new(),
                reason: "pose rotation block is not orthonormal".into(),
            });
        }
        Ok(pose)
    }

    /// Look-at constructor: camera at `eye` with +z toward `target`.
    /// Uses the usual right-handed basis with image +y pointing down, so `up`
    /// is the world direction that should map to -y in the image.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Pose {
        let forward = (target - eye).normalized();
        let right = forward.cross(up).normalized();
        let down = forward.cross(right);
        Pose {
            rotation: Mat3::from_rows(
                [right.x, down.x, forward.x],
                [right.y, down.y, forward.y],
                [right.z, down.z, forward.z],
            ),
            translation: eye,
        }
    }
}

/// Learnable per-frame pose parameterization: `anchor` is the frozen
/// initialization pose; only the endpoint twists are optimized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramePoseParams {
    pub anchor: Pose,
    pub xi_start: Twist,
    pub xi_end: Twist,
}

impl FramePoseParams {
    pub fn at_anchor(anchor: Pose) -> Self {
        FramePoseParams {
            anchor,
            xi_start: Twist::ZERO,
            xi_end: Twist::ZERO,
        }
    }

    pub fn twists_to_array(&self) -> [f64; 12] {
        let s = self.xi_start.to_array();
        let e = self.xi_end.to_array();
        [s[0], s[1], s[2], s[3], s[4], s[5], e[0], e[1], e[2], e[3], e[4], e[5]]
    }

    pub fn set_twists_from_array(&mut self, a: &[f64; 12]) {
        self.xi_start = Twist::from_array([a[0], a[1], a[2], a[3], a[4], a[5]]);
        self.xi_end = Twist::from_array([a[6], a[7], a[8], a[9], a[10], a[11]]);
    }

    /// Pose of row 0 (start of exposure).
    pub fn start_pose(&self) -> Pose {
        self.anchor.compose(&exp(self.xi_start))
    }

    /// Pose of row H-1 (end of exposure).
    pub fn end_pose(&self) -> Pose {
        self.anchor.compose(&exp(self.xi_end))
    }
}

/// Trig coefficient a = sin(t)/t with series fallback.
fn coef_a(theta: f64) -> f64 {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        1.0 - t2 / 6.0 + t2 * t2 / 120.0
    } else {
        theta.sin() / theta
    }
}

/// b = (1 - cos(t)) / t^2.
fn coef_b(theta: f64) -> f64 {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        0.5 - t2 / 24.0 + t2 * t2 / 720.0
    } else {
        (1.0 - theta.cos()) / (theta * theta)
    }
}

/// c = (t - sin(t)) / t^3.
fn coef_c(theta: f64) -> f64 {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    } else {
        (theta - theta.sin()) / (theta * theta * theta)
    }
}

/// SE(3) exponential map. Total on finite twists; exp(0) is the identity.
pub fn exp(xi: Twist) -> Pose {
    debug_assert!(xi.is_finite());
    let theta = xi.w.norm();
    let wx = Mat3::skew(xi.w);
    let wx2 = wx.mul_mat(&wx);
    let rotation = Mat3::IDENTITY
        .add_mat(&wx.scaled(coef_a(theta)))
        .add_mat(&wx2.scaled(coef_b(theta)));
    let v_mat = Mat3::IDENTITY
        .add_mat(&wx.scaled(coef_b(theta)))
        .add_mat(&wx2.scaled(coef_c(theta)));
    Pose {
        rotation,
        translation: v_mat.mul_vec(xi.v),
    }
}

/// SE(3) logarithm, principal branch. Fails for rotations within 1e-6 of pi,
/// where the branch is ill-conditioned; rolling-shutter exposure motions
/// never get there.
pub fn log(pose: &Pose) -> Result<Twist> {
    let r = &pose.rotation;
    // sin(theta) * axis from the skew part, cos(theta) from the trace:
    // atan2 of the pair is well conditioned over the whole principal branch.
    let skew_vec = Vec3::new(
        0.5 * (r.m[2][1] - r.m[1][2]),
        0.5 * (r.m[0][2] - r.m[2][0]),
        0.5 * (r.m[1][0] - r.m[0][1]),
    );
    let sin_theta = skew_vec.norm();
    let cos_theta = 0.5 * (r.m[0][0] + r.m[1][1] + r.m[2][2] - 1.0);
    let theta = sin_theta.atan2(cos_theta);
    if theta > std::f64::consts::PI - PI_MARGIN {
        return Err(Error::RotationNearPi);
    }
    let w = if sin_theta < 1e-12 {
        // theta ~ 0 here (pi was rejected above); skew_vec already ~ w.
        skew_vec
    } else {
        skew_vec * (theta / sin_theta)
    };
    let theta2 = theta * theta;
    let wx = Mat3::skew(w);
    let wx2 = wx.mul_mat(&wx);
    // V^-1 = I - W/2 + beta(theta) W^2.
    let beta = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0
    } else {
        (1.0 - 0.5 * theta * (1.0 + cos_theta) / sin_theta) / theta2
    };
    let v_inv = Mat3::IDENTITY.add_mat(&wx.scaled(-0.5)).add_mat(&wx2.scaled(beta));
    Ok(Twist {
        v: v_inv.mul_vec(pose.translation),
        w,
    })
}

/// Interpolation coefficient for row `i`: with `n_pose == h` this is
/// i/(H-1); with fewer poses, rows share the coefficient of their bucket's
/// center row (row i belongs to bucket floor(i * n_pose / H)).
pub fn row_interp_coeff(i: usize, h: usize, n_pose: usize) -> Result<f64> {
    if i >= h {
        return Err(Error::InvalidRow { row: i, height: h });
    }
    if n_pose < 1 || n_pose > h {
        return Err(Error::InvalidPoseCount { n_pose, height: h });
    }
    if h == 1 {
        return Ok(0.0);
    }
    let center = if n_pose == h {
        i as f64
    } else {
        let bucket = i * n_pose / h;
        // First and last row of the bucket, in exact integer arithmetic.
        let first = (bucket * h).div_ceil(n_pose);
        let last = ((bucket + 1) * h).div_ceil(n_pose) - 1;
        0.5 * (first + last) as f64
    };
    Ok(center / (h - 1) as f64)
}

/// Interpolated twist for row `i`. Linear in both endpoint twists: the
/// derivative w.r.t. each xi_start component is (1 - rho) and w.r.t. each
/// xi_end component is rho.
pub fn interpolate_row_twist(
    params: &FramePoseParams,
    i: usize,
    h: usize,
    n_pose: usize,
) -> Result<Twist> {
    let rho = row_interp_coeff(i, h, n_pose)?;
    Ok(params.xi_start.scaled(1.0 - rho).add(params.xi_end.scaled(rho)))
}

/// Pose of row `i`: anchor composed with exp of the interpolated twist.
pub fn interpolate_row_pose(
    params: &FramePoseParams,
    i: usize,
    h: usize,
    n_pose: usize,
) -> Result<Pose> {
    let xi = interpolate_row_twist(params, i, h, n_pose)?;
    Ok(params.anchor.compose(&exp(xi)))
}

/// Camera-center displacement over the exposure: center of the last row's
/// pose minus center of the first row's pose, in world units.
pub fn trajectory_vector(params: &FramePoseParams) -> Vec3 {
    params.end_pose().camera_center() - params.start_pose().camera_center()
}

/// Derivative of the translation part of exp(xi) w.r.t. the six twist
/// components, as a 3x6 matrix (columns: v then w). The rotation part is not
/// needed by callers: the smoothness loss only reads camera centers.
pub fn exp_translation_jacobian(xi: Twist) -> [[f64; 6]; 3] {
    let theta = xi.w.norm();
    let wx = Mat3::skew(xi.w);
    let wx2 = wx.mul_mat(&wx);
    let b = coef_b(theta);
    let c = coef_c(theta);
    // d(coef)/d(theta) divided by theta, finite at zero.
    let (db_over_theta, dc_over_theta) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (-1.0 / 12.0 + t2 / 180.0, -1.0 / 60.0 + t2 / 1260.0)
    } else {
        let t2 = theta * theta;
        let db = theta.sin() / t2 - 2.0 * (1.0 - theta.cos()) / (t2 * theta);
        let dc = (1.0 - theta.cos()) / (t2 * theta) - 3.0 * (theta - theta.sin()) / (t2 * t2);
        (db / theta, dc / theta)
    };

    let mut jac = [[0.0; 6]; 3];
    // d t / d v = V(w) = I + b W + c W^2.
    let v_mat = Mat3::IDENTITY.add_mat(&wx.scaled(b)).add_mat(&wx2.scaled(c));
    for (row, jrow) in jac.iter_mut().enumerate() {
        for col in 0..3 {
            jrow[col] = v_mat.m[row][col];
        }
    }
    // d t / d w_i = (b' / theta) w_i (W v) + b (E_i v)
    //            + (c' / theta) w_i (W^2 v) + c (E_i W + W E_i) v.
    let wv = wx.mul_vec(xi.v);
    let w2v = wx2.mul_vec(xi.v);
    let w_arr = xi.w.to_array();
    for i in 0..3 {
        let mut axis = [0.0; 3];
        axis[i] = 1.0;
        let e_i = Mat3::skew(Vec3::from_array(axis));
        let term_b = wv * (db_over_theta * w_arr[i]) + e_i.mul_vec(xi.v) * b;
        let term_c = w2v * (dc_over_theta * w_arr[i])
            + (e_i.mul_mat(&wx).add_mat(&wx.mul_mat(&e_i))).mul_vec(xi.v) * c;
        let d = term_b + term_c;
        let d_arr = d.to_array();
        for (row, jrow) in jac.iter_mut().enumerate() {
            jrow[3 + i] = d_arr[row];
        }
    }
    jac
}

pub fn floats_to_le_bytes(f: &[f64; 12]) -> Vec<u8> {
    let mut out = Vec::with_capacity(96);
    for x in f {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn floats_from_le_bytes(bytes: &[u8]) -> Result<[f64; 12]> {
    if bytes.len() != 96 {
        return Err(Error::MalformedFile {
            path: String::new(),
            reason: format!("pose blob has {} bytes, expected 96", bytes.len()),
        });
    }
    let mut out = [0.0; 12];
    for (i, chunk) in bytes.chunks_exact(8).enumerate() {
        out[i] = f64::from_le_bytes(chunk.try_into().unwrap());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng64;

    /// Independent oracle: matrix exponential of the 4x4 twist matrix by
    /// scaling-and-squaring with a Taylor series on the scaled-down input.
    fn matrix_exp_oracle(xi: Twist) -> ([[f64; 4]; 4], ()) {
        let mut a = [[0.0f64; 4]; 4];
        a[0][1] = -xi.w.z;
        a[0][2] = xi.w.y;
        a[1][0] = xi.w.z;
        a[1][2] = -xi.w.x;
        a[2][0] = -xi.w.y;
        a[2][1] = xi.w.x;
        a[0][3] = xi.v.x;
        a[1][3] = xi.v.y;
        a[2][3] = xi.v.z;

        let squarings = 12u32;
        let scale = 1.0 / (1u64 << squarings) as f64;
        for row in a.iter_mut() {
            for e in row.iter_mut() {
                *e *= scale;
            }
        }
        fn matmul4(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
            let mut out = [[0.0; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    for (k, bk) in b.iter().enumerate() {
                        out[i][j] += a[i][k] * bk[j];
                    }
                }
            }
            out
        }
        // Taylor series of the scaled matrix.
        let mut result = [[0.0; 4]; 4];
        for (i, row) in result.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        let mut term = result;
        for k in 1..15 {
            term = matmul4(&term, &a);
            for row in term.iter_mut() {
                for e in row.iter_mut() {
                    *e /= k as f64;
                }
            }
            for i in 0..4 {
                for j in 0..4 {
                    result[i][j] += term[i][j];
                }
            }
        }
        for _ in 0..squarings {
            result = matmul4(&result, &result);
        }
        (result, ())
    }

    fn assert_pose_close(p: &Pose, mat: &[[f64; 4]; 4], tol: f64) {
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (p.rotation.m[i][j] - mat[i][j]).abs() < tol,
                    "rotation[{i}][{j}]: {} vs {}",
                    p.rotation.m[i][j],
                    mat[i][j]
                );
            }
        }
        let t = p.translation.to_array();
        for (i, ti) in t.iter().enumerate() {
            assert!((ti - mat[i][3]).abs() < tol, "translation[{i}]");
        }
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let p = exp(Twist::ZERO);
        assert_eq!(p, Pose::IDENTITY);
    }

    #[test]
    fn exp_of_pure_translation() {
        let p = exp(Twist::from_array([1.0, 2.0, 3.0, 0.0, 0.0, 0.0]));
        assert_eq!(p.rotation, Mat3::IDENTITY);
        assert_eq!(p.translation, Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn exp_quarter_turn_about_x_matches_matrix_exponential() {
        let xi = Twist::from_array([0.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2, 0.0, 0.0]);
        let p = exp(xi);
        let (oracle, ()) = matrix_exp_oracle(xi);
        assert_pose_close(&p, &oracle, 1e-10);
        assert!((p.translation.norm()) < 1e-15);
        // 90 degrees about x maps +y to +z.
        let mapped = p.rotate(Vec3::new(0.0, 1.0, 0.0));
        assert!((mapped - Vec3::new(0.0, 0.0, 1.0)).max_abs() < 1e-12);
    }

    #[test]
    fn exp_matches_matrix_exponential_on_random_twists() {
        let mut rng = Rng64::new(42);
        for _ in 0..200 {
            let mut a = [0.0; 6];
            for e in a.iter_mut() {
                *e = rng.uniform_range(-1.5, 1.5);
            }
            let xi = Twist::from_array(a);
            let (oracle, ()) = matrix_exp_oracle(xi);
            assert_pose_close(&exp(xi), &oracle, 1e-9);
        }
    }

    #[test]
    fn log_of_identity_is_zero() {
        let xi = log(&Pose::IDENTITY).unwrap();
        assert_eq!(xi.max_abs(), 0.0);
    }

    #[test]
    fn log_of_pure_translation() {
        let p = Pose::new(Mat3::IDENTITY, Vec3::new(5.0, -1.0, 2.0));
        let xi = log(&p).unwrap();
        assert!((xi.v - Vec3::new(5.0, -1.0, 2.0)).max_abs() < 1e-15);
        assert_eq!(xi.w.max_abs(), 0.0);
    }

    #[test]
    fn exp_log_roundtrip_over_random_twists() {
        let mut rng = Rng64::new(7);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let v = Vec3::new(
                rng.uniform_range(-10.0, 10.0),
                rng.uniform_range(-10.0, 10.0),
                rng.uniform_range(-10.0, 10.0),
            );
            // |w| <= 3 keeps us inside the principal branch with margin.
            let axis = Vec3::new(
                rng.uniform_range(-1.0, 1.0),
                rng.uniform_range(-1.0, 1.0),
                rng.uniform_range(-1.0, 1.0),
            );
            let w = if axis.norm() < 1e-6 {
                Vec3::ZERO
            } else {
                axis.normalized() * rng.uniform_range(0.0, 3.0)
            };
            let xi = Twist::new(v, w);
            let back = log(&exp(xi)).unwrap();
            worst = worst
                .max((back.v - xi.v).max_abs())
                .max((back.w - xi.w).max_abs());
        }
        assert!(worst < 1e-9, "worst roundtrip error {worst}");
    }

    #[test]
    fn log_rejects_rotation_at_pi() {
        let xi = Twist::new(Vec3::ZERO, Vec3::new(std::f64::consts::PI, 0.0, 0.0));
        assert!(matches!(log(&exp(xi)), Err(Error::RotationNearPi)));
    }

    #[test]
    fn interpolation_hits_endpoints_exactly() {
        let anchor = exp(Twist::from_array([0.1, -0.2, 0.4, 0.3, 0.1, -0.2]));
        let params = FramePoseParams {
            anchor,
            xi_start: Twist::from_array([0.01, 0.02, -0.01, 0.005, -0.01, 0.02]),
            xi_end: Twist::from_array([-0.03, 0.01, 0.02, -0.01, 0.02, 0.01]),
        };
        let h = 400;
        let p0 = interpolate_row_pose(&params, 0, h, h).unwrap();
        let p_end = interpolate_row_pose(&params, h - 1, h, h).unwrap();
        assert_eq!(p0, anchor.compose(&exp(params.xi_start)));
        assert_eq!(p_end, anchor.compose(&exp(params.xi_end)));
    }

    #[test]
    fn interpolation_midpoint_pure_translation() {
        let params = FramePoseParams {
            anchor: Pose::IDENTITY,
            xi_start: Twist::ZERO,
            xi_end: Twist::from_array([2.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        };
        let p = interpolate_row_pose(&params, 200, 401, 401).unwrap();
        assert!((p.translation - Vec3::new(1.0, 0.0, 0.0)).max_abs() < 1e-15);
    }

    #[test]
    fn interpolation_rejects_bad_indices() {
        let params = FramePoseParams::at_anchor(Pose::IDENTITY);
        assert!(matches!(
            interpolate_row_pose(&params, 400, 400, 400),
            Err(Error::InvalidRow { .. })
        ));
        assert!(matches!(
            interpolate_row_pose(&params, 0, 400, 0),
            Err(Error::InvalidPoseCount { .. })
        ));
        assert!(matches!(
            interpolate_row_pose(&params, 0, 400, 401),
            Err(Error::InvalidPoseCount { .. })
        ));
    }

    #[test]
    fn bucketing_shares_poses_within_buckets() {
        let h = 64;
        // n_pose == 1: all rows share one coefficient.
        let c0 = row_interp_coeff(0, h, 1).unwrap();
        for i in 1..h {
            assert_eq!(row_interp_coeff(i, h, 1).unwrap(), c0);
        }
        assert!((c0 - 0.5).abs() < 1e-15);
        // n_pose == h: all coefficients distinct.
        let mut coeffs: Vec<f64> = (0..h).map(|i| row_interp_coeff(i, h, h).unwrap()).collect();
        coeffs.dedup();
        assert_eq!(coeffs.len(), h);
        // n_pose == 16: exactly 16 distinct values, 4 rows each.
        let coeffs: Vec<f64> = (0..h).map(|i| row_interp_coeff(i, h, 16).unwrap()).collect();
        let mut unique = coeffs.clone();
        unique.dedup();
        assert_eq!(unique.len(), 16);
        for chunk in coeffs.chunks(4) {
            assert!(chunk.iter().all(|&c| c == chunk[0]));
        }
    }

    #[test]
    fn interpolation_is_linear_in_endpoint_twists() {
        // Central differences on each of the 12 components must match the
        // analytic coefficients (1 - rho) and rho exactly (linear map).
        let h = 400;
        let i = 123;
        let rho = row_interp_coeff(i, h, h).unwrap();
        let base = FramePoseParams {
            anchor: Pose::IDENTITY,
            xi_start: Twist::from_array([0.02, -0.01, 0.03, 0.01, 0.0, -0.02]),
            xi_end: Twist::from_array([-0.01, 0.02, 0.0, 0.02, -0.01, 0.01]),
        };
        let h_step = 1e-6;
        for comp in 0..12 {
            let mut plus = base.clone();
            let mut minus = base.clone();
            let mut arr_p = plus.twists_to_array();
            let mut arr_m = minus.twists_to_array();
            arr_p[comp] += h_step;
            arr_m[comp] -= h_step;
            plus.set_twists_from_array(&arr_p);
            minus.set_twists_from_array(&arr_m);
            let tw_p = interpolate_row_twist(&plus, i, h, h).unwrap().to_array();
            let tw_m = interpolate_row_twist(&minus, i, h, h).unwrap().to_array();
            let expected = if comp < 6 { 1.0 - rho } else { rho };
            let fd = (tw_p[comp % 6] - tw_m[comp % 6]) / (2.0 * h_step);
            assert!(
                (fd - expected).abs() < 1e-9,
                "component {comp}: fd {fd} vs {expected}"
            );
        }
    }

    #[test]
    fn trajectory_vector_zero_for_static_frame() {
        let params = FramePoseParams {
            anchor: exp(Twist::from_array([0.3, 0.1, -0.2, 0.2, -0.1, 0.3])),
            xi_start: Twist::from_array([0.01, 0.0, 0.0, 0.0, 0.01, 0.0]),
            xi_end: Twist::from_array([0.01, 0.0, 0.0, 0.0, 0.01, 0.0]),
        };
        assert!(trajectory_vector(&params).max_abs() < 1e-15);
    }

    #[test]
    fn trajectory_vector_matches_explicit_centers() {
        // Brute-force oracle: build both endpoint poses and subtract their
        // camera centers directly.
        let cases = [
            Pose::IDENTITY,
            exp(Twist::from_array([0.0, 0.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2, 0.0])),
        ];
        for anchor in cases {
            let params = FramePoseParams {
                anchor,
                xi_start: Twist::ZERO,
                xi_end: Twist::from_array([0.0, 0.0, -1.0, 0.0, 0.0, 0.0]),
            };
            let start = anchor.compose(&exp(params.xi_start));
            let end = anchor.compose(&exp(params.xi_end));
            let expected = end.translation - start.translation;
            let got = trajectory_vector(&params);
            assert!((got - expected).max_abs() < 1e-15);
            // Identity anchor: pure -z twist moves the center along -z.
            if anchor == Pose::IDENTITY {
                assert!((got - Vec3::new(0.0, 0.0, -1.0)).max_abs() < 1e-15);
            }
        }
    }

    #[test]
    fn exp_translation_jacobian_matches_finite_differences() {
        let mut rng = Rng64::new(99);
        for _ in 0..100 {
            let mut a = [0.0; 6];
            for e in a.iter_mut() {
                *e = rng.uniform_range(-0.8, 0.8);
            }
            let xi = Twist::from_array(a);
            let jac = exp_translation_jacobian(xi);
            let h = 1e-6;
            for comp in 0..6 {
                let mut ap = a;
                let mut am = a;
                ap[comp] += h;
                am[comp] -= h;
                let tp = exp(Twist::from_array(ap)).translation;
                let tm = exp(Twist::from_array(am)).translation;
                let fd = (tp - tm) / (2.0 * h);
                let fd_arr = fd.to_array();
                for (row, jrow) in jac.iter().enumerate() {
                    let scale = fd_arr[row].abs().max(1.0);
                    assert!(
                        (jrow[comp] - fd_arr[row]).abs() / scale < 1e-8,
                        "d t[{row}] / d xi[{comp}]: analytic {} fd {}",
                        jrow[comp],
                        fd_arr[row]
                    );
                }
            }
        }
    }

    #[test]
    fn pose_float_roundtrip() {
        let p = exp(Twist::from_array([0.4, -0.3, 1.2, 0.5, -0.2, 0.8]));
        let f = p.to_floats();
        let q = Pose::from_floats(&f).unwrap();
        assert_eq!(p, q);
        let bytes = floats_to_le_bytes(&f);
        let f2 = floats_from_le_bytes(&bytes).unwrap();
        assert_eq!(f, f2);
    }
}
