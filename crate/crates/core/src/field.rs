//! Scene representations: the trainable dense voxel radiance grid and the
//! analytic primitive scenes used to synthesize ground truth.
//!
//! The grid stores raw (unconstrained) density and color parameters at voxel
//! nodes. Queries interpolate the raw values trilinearly and then activate:
//! softplus for density, sigmoid per color channel. Interpolating before
//! activation is the crate-wide convention; the adjoint in
//! `accumulate_sample_gradient` assumes it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Aabb, Vec3};

pub const GRID_MAGIC: &[u8; 8] = b"RSFGRID1";

/// Anything a ray marcher can query for (density, rgb) at a world point.
pub trait Field: Sync {
    fn query(&self, p: Vec3) -> (f64, [f64; 3]);
}

/// Numerically stable softplus.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// d softplus / dx, which is the logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus_inverse(y: f64) -> f64 {
    // ln(e^y - 1), stable for large y.
    if y > 30.0 {
        y
    } else {
        y.exp_m1().max(1e-300).ln()
    }
}

pub fn sigmoid_inverse(y: f64) -> f64 {
    let y = y.clamp(1e-7, 1.0 - 1e-7);
    (y / (1.0 - y)).ln()
}

/// Dense voxel field of raw density/color parameters.
#[derive(Clone, Debug)]
pub struct RadianceGrid {
    pub resolution: [usize; 3],
    pub bounds: Aabb,
    /// One raw density per node, x-fastest.
    pub raw_density: Vec<f64>,
    /// Three raw color channels per node, interleaved rgb, x-fastest.
    pub raw_color: Vec<f64>,
}

/// The eight corner indices and trilinear weights for a point, or None when
/// the point falls outside the grid bounds.
struct TrilinearStencil {
    idx: [usize; 8],
    weight: [f64; 8],
}

impl RadianceGrid {
    pub fn new(resolution: [usize; 3], bounds: Aabb, init_raw_density: f64) -> Result<Self> {
        if resolution.iter().any(|&n| n < 2) {
            return Err(Error::InvalidConfig(format!(
                "grid resolution components must be >= 2, got {resolution:?}"
            )));
        }
        if !bounds.is_valid() {
            return Err(Error::InvalidConfig("grid bounds min must be < max".into()));
        }
        let n = resolution[0] * resolution[1] * resolution[2];
        Ok(RadianceGrid {
            resolution,
            bounds,
            raw_density: vec![init_raw_density; n],
            raw_color: vec![0.0; 3 * n],
        })
    }

    pub fn node_count(&self) -> usize {
        self.raw_density.len()
    }

    #[inline]
    pub fn node_index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.resolution[0] * (y + self.resolution[1] * z)
    }

    pub fn node_position(&self, x: usize, y: usize, z: usize) -> Vec3 {
        let ext = self.bounds.extent();
        Vec3::new(
            self.bounds.min.x + ext.x * x as f64 / (self.resolution[0] - 1) as f64,
            self.bounds.min.y + ext.y * y as f64 / (self.resolution[1] - 1) as f64,
            self.bounds.min.z + ext.z * z as f64 / (self.resolution[2] - 1) as f64,
        )
    }

    #[inline]
    fn stencil(&self, p: Vec3) -> Option<TrilinearStencil> {
        if !self.bounds.contains(p) {
            return None;
        }
        let ext = self.bounds.extent();
        let gx = (p.x - self.bounds.min.x) / ext.x * (self.resolution[0] - 1) as f64;
        let gy = (p.y - self.bounds.min.y) / ext.y * (self.resolution[1] - 1) as f64;
        let gz = (p.z - self.bounds.min.z) / ext.z * (self.resolution[2] - 1) as f64;
        let ix = (gx as usize).min(self.resolution[0] - 2);
        let iy = (gy as usize).min(self.resolution[1] - 2);
        let iz = (gz as usize).min(self.resolution[2] - 2);
        let fx = gx - ix as f64;
        let fy = gy - iy as f64;
        let fz = gz - iz as f64;
        let base = self.node_index(ix, iy, iz);
        let sx = 1;
        let sy = self.resolution[0];
        let sz = self.resolution[0] * self.resolution[1];
        let idx = [
            base,
            base + sx,
            base + sy,
            base + sx + sy,
            base + sz,
            base + sx + sz,
            base + sy + sz,
            base + sx + sy + sz,
        ];
        let weight = [
            (1.0 - fx) * (1.0 - fy) * (1.0 - fz),
            fx * (1.0 - fy) * (1.0 - fz),
            (1.0 - fx) * fy * (1.0 - fz),
            fx * fy * (1.0 - fz),
            (1.0 - fx) * (1.0 - fy) * fz,
            fx * (1.0 - fy) * fz,
            (1.0 - fx) * fy * fz,
            fx * fy * fz,
        ];
        Some(TrilinearStencil { idx, weight })
    }

    /// Corner indices and trilinear weights for `p`, or None outside bounds.
    pub(crate) fn stencil_weights(&self, p: Vec3) -> Option<([usize; 8], [f64; 8])> {
        self.stencil(p).map(|s| (s.idx, s.weight))
    }

    /// Raw density and color interpolated with a precomputed stencil.
    pub(crate) fn raw_at_weights(&self, idx: &[usize; 8], weight: &[f64; 8]) -> (f64, [f64; 3]) {
        let mut d = 0.0;
        let mut c = [0.0; 3];
        for (&i, &w) in idx.iter().zip(weight.iter()) {
            d += w * self.raw_density[i];
            let ci = 3 * i;
            c[0] += w * self.raw_color[ci];
            c[1] += w * self.raw_color[ci + 1];
            c[2] += w * self.raw_color[ci + 2];
        }
        (d, c)
    }

    /// Trilinear raw interpolation followed by activation. Points outside the
    /// bounds are empty space: (0, black), bypassing the activations.
    pub fn sample(&self, p: Vec3) -> (f64, [f64; 3]) {
        match self.stencil(p) {
            None => (0.0, [0.0; 3]),
            Some(s) => {
                let mut d = 0.0;
                let mut c = [0.0; 3];
                for (&i, &w) in s.idx.iter().zip(s.weight.iter()) {
                    d += w * self.raw_density[i];
                    let ci = 3 * i;
                    c[0] += w * self.raw_color[ci];
                    c[1] += w * self.raw_color[ci + 1];
                    c[2] += w * self.raw_color[ci + 2];
                }
                (
                    softplus(d),
                    [sigmoid(c[0]), sigmoid(c[1]), sigmoid(c[2])],
                )
            }
        }
    }

    /// Adjoint of `sample`: adds the chain-rule product of the trilinear
    /// weights, the activation derivatives, and the incoming cotangents into
    /// `out`. Exact for every point where `sample` is differentiable.
    pub fn accumulate_sample_gradient(
        &self,
        p: Vec3,
        d_sigma: f64,
        d_rgb: [f64; 3],
        out: &mut GridGradient,
    ) {
        let Some(s) = self.stencil(p) else { return };
        let mut d = 0.0;
        let mut c = [0.0; 3];
        for (&i, &w) in s.idx.iter().zip(s.weight.iter()) {
            d += w * self.raw_density[i];
            let ci = 3 * i;
            c[0] += w * self.raw_color[ci];
            c[1] += w * self.raw_color[ci + 1];
            c[2] += w * self.raw_color[ci + 2];
        }
        let d_act = sigmoid(d); // softplus'
        let c_act = [
            sigmoid(c[0]) * (1.0 - sigmoid(c[0])),
            sigmoid(c[1]) * (1.0 - sigmoid(c[1])),
            sigmoid(c[2]) * (1.0 - sigmoid(c[2])),
        ];
        for (&i, &w) in s.idx.iter().zip(s.weight.iter()) {
            out.d_raw_density[i] += d_sigma * d_act * w;
            let ci = 3 * i;
            out.d_raw_color[ci] += d_rgb[0] * c_act[0] * w;
            out.d_raw_color[ci + 1] += d_rgb[1] * c_act[1] * w;
            out.d_raw_color[ci + 2] += d_rgb[2] * c_act[2] * w;
        }
    }

    /// Bakes raw parameters so the activated grid reproduces `scene` at the
    /// voxel nodes. Used for the renderer-fidelity ceiling and for
    /// scene-matched initializations in tests.
    ///
    /// With `supersample` = 1 each node takes the scene value at its exact
    /// position. Larger values average `supersample`^3 points over the
    /// node's cell, which band-limits the field: partial coverage scales the
    /// density, so the interpolated surface tracks the true face instead of
    /// bloating to the neighboring node.
    ///
    /// Colors are dilated a few nodes into empty space afterward: raw
    /// density and raw color interpolate independently, so without dilation
    /// a surface would wear a shell of positive density with the
    /// empty-space (black) color.
    pub fn bake_from_scene(
        scene: &AnalyticScene,
        resolution: [usize; 3],
        bounds: Aabb,
        supersample: usize,
    ) -> Result<Self> {
        let supersample = supersample.max(1);
        let mut grid = RadianceGrid::new(resolution, bounds, 0.0)?;
        let n = grid.node_count();
        let mut colored = vec![false; n];
        let ext = bounds.extent();
        let cell = Vec3::new(
            ext.x / (resolution[0] - 1) as f64,
            ext.y / (resolution[1] - 1) as f64,
            ext.z / (resolution[2] - 1) as f64,
        );
        let taps: Vec<f64> = (0..supersample)
            .map(|s| (s as f64 + 0.5) / supersample as f64 - 0.5)
            .collect();
        for z in 0..resolution[2] {
            for y in 0..resolution[1] {
                for x in 0..resolution[0] {
                    let p = grid.node_position(x, y, z);
                    let i = grid.node_index(x, y, z);
                    let mut sigma_acc = 0.0;
                    let mut rgb_acc = [0.0; 3];
                    let mut hits = 0usize;
                    for tz in &taps {
                        for ty in &taps {
                            for tx in &taps {
                                let q = Vec3::new(
                                    p.x + tx * cell.x,
                                    p.y + ty * cell.y,
                                    p.z + tz * cell.z,
                                );
                                let (sigma, rgb) = scene.query(q);
                                sigma_acc += sigma;
                                if sigma > 0.0 {
                                    hits += 1;
                                    for ch in 0..3 {
                                        rgb_acc[ch] += rgb[ch];
                                    }
                                }
                            }
                        }
                    }
                    let taps_total = (supersample * supersample * supersample) as f64;
                    let sigma = sigma_acc / taps_total;
                    grid.raw_density[i] = softplus_inverse(sigma.max(1e-6));
                    if hits > 0 {
                        colored[i] = true;
                        for ch in 0..3 {
                            grid.raw_color[3 * i + ch] =
                                sigmoid_inverse(rgb_acc[ch] / hits as f64);
                        }
                    }
                }
            }
        }
        let [nx, ny, nz] = resolution;
        for _ in 0..3 {
            let prev = colored.clone();
            let snapshot = grid.raw_color.clone();
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        let i = grid.node_index(x, y, z);
                        if prev[i] {
                            continue;
                        }
                        let mut acc = [0.0f64; 3];
                        let mut count = 0usize;
                        let mut visit = |xx: usize, yy: usize, zz: usize| {
                            let j = grid.node_index(xx, yy, zz);
                            if prev[j] {
                                for (a, c) in acc.iter_mut().zip(&snapshot[3 * j..3 * j + 3]) {
                                    *a += c;
                                }
                                count += 1;
                            }
                        };
                        if x > 0 {
                            visit(x - 1, y, z);
                        }
                        if x + 1 < nx {
                            visit(x + 1, y, z);
                        }
                        if y > 0 {
                            visit(x, y - 1, z);
                        }
                        if y + 1 < ny {
                            visit(x, y + 1, z);
                        }
                        if z > 0 {
                            visit(x, y, z - 1);
                        }
                        if z + 1 < nz {
                            visit(x, y, z + 1);
                        }
                        if count > 0 {
                            for ch in 0..3 {
                                grid.raw_color[3 * i + ch] = acc[ch] / count as f64;
                            }
                            colored[i] = true;
                        }
                    }
                }
            }
        }
        // Whatever stayed unpainted is far from any surface; mid-gray keeps
        // the raw values bounded.
        for (i, painted) in colored.iter().enumerate() {
            if !painted {
                for ch in 0..3 {
                    grid.raw_color[3 * i + ch] = 0.0;
                }
            }
        }
        Ok(grid)
    }

    /// Writes the checkpoint format: magic, resolution (3 x u32 LE), bounds
    /// (6 x f64 LE), then raw density and raw color as f32 LE, x-fastest.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(GRID_MAGIC)?;
        for &n in &self.resolution {
            w.write_all(&(n as u32).to_le_bytes())?;
        }
        for v in [
            self.bounds.min.x,
            self.bounds.min.y,
            self.bounds.min.z,
            self.bounds.max.x,
            self.bounds.max.y,
            self.bounds.max.z,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for &d in &self.raw_density {
            w.write_all(&(d as f32).to_le_bytes())?;
        }
        for &c in &self.raw_color {
            w.write_all(&(c as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let malformed = |reason: &str| Error::MalformedFile {
            path: path.display().to_string(),
            reason: reason.into(),
        };
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != GRID_MAGIC {
            return Err(malformed("bad magic"));
        }
        let mut resolution = [0usize; 3];
        for n in resolution.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *n = u32::from_le_bytes(b) as usize;
        }
        let mut bf = [0f64; 6];
        for v in bf.iter_mut() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        let bounds = Aabb::new(Vec3::new(bf[0], bf[1], bf[2]), Vec3::new(bf[3], bf[4], bf[5]));
        let n = resolution[0]
            .checked_mul(resolution[1])
            .and_then(|v| v.checked_mul(resolution[2]))
            .ok_or_else(|| malformed("resolution overflow"))?;
        if resolution.iter().any(|&d| d < 2) || !bounds.is_valid() {
            return Err(malformed("invalid resolution or bounds"));
        }
        let read_f32s = |r: &mut BufReader<File>, count: usize| -> Result<Vec<f64>> {
            let mut bytes = vec![0u8; count * 4];
            r.read_exact(&mut bytes)?;
            Ok(bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect())
        };
        let raw_density = read_f32s(&mut r, n)?;
        let raw_color = read_f32s(&mut r, 3 * n)?;
        Ok(RadianceGrid { resolution, bounds, raw_density, raw_color })
    }
}

impl Field for RadianceGrid {
    fn query(&self, p: Vec3) -> (f64, [f64; 3]) {
        self.sample(p)
    }
}

/// Gradient buffer matching a grid's parameter shapes. One buffer per worker;
/// merge by summation afterward.
#[derive(Clone, Debug)]
pub struct GridGradient {
    pub d_raw_density: Vec<f64>,
    pub d_raw_color: Vec<f64>,
}

impl GridGradient {
    pub fn zeros_like(grid: &RadianceGrid) -> Self {
        GridGradient {
            d_raw_density: vec![0.0; grid.raw_density.len()],
            d_raw_color: vec![0.0; grid.raw_color.len()],
        }
    }

    pub fn clear(&mut self) {
        self.d_raw_density.iter_mut().for_each(|v| *v = 0.0);
        self.d_raw_color.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn add_assign(&mut self, other: &GridGradient) {
        for (a, b) in self.d_raw_density.iter_mut().zip(&other.d_raw_density) {
            *a += b;
        }
        for (a, b) in self.d_raw_color.iter_mut().zip(&other.d_raw_color) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.d_raw_density.iter_mut().for_each(|v| *v *= s);
        self.d_raw_color.iter_mut().for_each(|v| *v *= s);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveShape {
    Sphere,
    Box,
}

/// One primitive of a procedural ground-truth scene. For spheres `size.x` is
/// the radius; for boxes `size` holds half-extents.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: PrimitiveShape,
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub density: f64,
    pub color: [f64; 3],
}

impl Primitive {
    fn contains(&self, p: Vec3) -> bool {
        let c = Vec3::from_array(self.center);
        match self.shape {
            PrimitiveShape::Sphere => (p - c).norm_squared() <= self.size[0] * self.size[0],
            PrimitiveShape::Box => {
                (p.x - c.x).abs() <= self.size[0]
                    && (p.y - c.y).abs() <= self.size[1]
                    && (p.z - c.z).abs() <= self.size[2]
            }
        }
    }
}

/// Procedural ground-truth scene. Earlier primitives take precedence in
/// overlaps.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AnalyticScene {
    pub primitives: Vec<Primitive>,
}

impl AnalyticScene {
    pub fn validate(&self) -> Result<()> {
        for (i, prim) in self.primitives.iter().enumerate() {
            if prim.density < 0.0 {
                return Err(Error::InvalidConfig(format!("primitive {i} has negative density")));
            }
            if prim.color.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
                return Err(Error::InvalidConfig(format!(
                    "primitive {i} color outside [0,1]"
                )));
            }
        }
        Ok(())
    }

    pub fn sample(&self, p: Vec3) -> (f64, [f64; 3]) {
        for prim in &self.primitives {
            if prim.contains(p) {
                return (prim.density, prim.color);
            }
        }
        (0.0, [0.0; 3])
    }
}

impl Field for AnalyticScene {
    fn query(&self, p: Vec3) -> (f64, [f64; 3]) {
        self.sample(p)
    }
}
