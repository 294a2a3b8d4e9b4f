//! Terrain pose mapping: for every planar pose (x, y, θ) the height of the
//! chassis and its upward body axis on the terrain surface.
//!
//! The mapping is fitted per pose by iterated ellipsoid plane fitting on the
//! point cloud, materialized on a dense SE(2) grid and queried by trilinear
//! interpolation. The body axis `z_b = (a, b, c)` is stored through the unit
//! disk chart `(a, b)`, `c = sqrt(1 - a² - b²)`, which keeps it on the upper
//! hemisphere under interpolation since the disk is convex.

use std::f64::consts::{PI, TAU};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pointcloud::PointCloud;

/// Largest possible surface variation, reached for isotropic neighborhoods.
pub const SIGMA_UPPER: f64 = 1.0 / 3.0;

const GRID_MAGIC: &[u8; 4] = b"TPM1";

/// Wrap an angle into `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(TAU) - PI
}

/// Planar pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SE2State {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl SE2State {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    /// Plane-fit iterations per pose.
    pub n_iter: usize,
    /// Ellipsoid semi-axes along the body x, y and z axes, meters.
    pub semi_axes: [f64; 3],
}

impl Default for FitParams {
    fn default() -> Self {
        Self {
            n_iter: 3,
            semi_axes: [0.4, 0.3, 0.3],
        }
    }
}

/// One fitted grid value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerrainSample {
    pub z: f64,
    /// Unit-disk chart of the body z axis.
    pub a: f64,
    pub b: f64,
    /// Surface variation λ0 / (λ0 + λ1 + λ2).
    pub sigma: f64,
    pub valid: bool,
}

impl TerrainSample {
    pub fn flat(z: f64) -> Self {
        Self {
            z,
            a: 0.0,
            b: 0.0,
            sigma: 0.0,
            valid: true,
        }
    }

    /// Placeholder for poses where the fit failed: level body axis and the
    /// largest possible surface variation, which no traversability bound admits.
    pub fn invalid(z: f64) -> Self {
        Self {
            z,
            a: 0.0,
            b: 0.0,
            sigma: SIGMA_UPPER,
            valid: false,
        }
    }

    pub fn from_normal(z: f64, normal: Vector3<f64>, sigma: f64) -> Self {
        let n = normal.normalize();
        let n = if n.z < 0.0 { -n } else { n };
        Self {
            z,
            a: n.x,
            b: n.y,
            sigma,
            valid: true,
        }
    }

    pub fn normal(&self) -> Vector3<f64> {
        Vector3::new(
            self.a,
            self.b,
            (1.0 - self.a * self.a - self.b * self.b).max(0.0).sqrt(),
        )
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TerrainError {
    #[error("ellipsoid region holds {found} points at iteration {iteration}, need at least 3")]
    EmptyRegion { iteration: usize, found: usize },
    #[error("fitted normal is horizontal")]
    DegenerateNormal,
    #[error("state ({x:.3}, {y:.3}) is outside the grid")]
    OutOfBounds { x: f64, y: f64 },
    #[error("invalid grid geometry: {0}")]
    BadGeometry(String),
}

/// Body frame of the robot standing at `(x, y, θ)` with body z axis `zb`:
/// columns are `x_b`, `y_b`, `z_b`.
pub fn body_frame(theta: f64, zb: &Vector3<f64>) -> Matrix3<f64> {
    let x_yaw = Vector3::new(theta.cos(), theta.sin(), 0.0);
    let cross = zb.cross(&x_yaw);
    let norm = cross.norm();
    assert!(norm > 1e-6, "body z axis parallel to heading");
    let yb = cross / norm;
    let xb = yb.cross(zb);
    Matrix3::from_columns(&[xb, yb, *zb])
}

struct PlaneFit {
    mean: Vector3<f64>,
    normal: Vector3<f64>,
    sigma: f64,
}

/// Mean, smallest-eigenvalue normal and surface variation of a point set.
/// When the two smallest eigenvalues coincide the normal is the direction in
/// their eigenspace closest to `previous`.
fn fit_plane(
    cloud: &PointCloud,
    indices: &[usize],
    previous: &Vector3<f64>,
) -> Result<PlaneFit, TerrainError> {
    let pts = cloud.points();
    let n = indices.len() as f64;
    let mut sum = Vector3::zeros();
    for &i in indices {
        sum += pts[i].to_vector();
    }
    let mean = sum / n;
    let mut cov = Matrix3::zeros();
    for &i in indices {
        let e = pts[i].to_vector() - mean;
        cov += e * e.transpose();
    }
    cov /= n;

    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let lambda = order.map(|i| eig.eigenvalues[i].max(0.0));
    let vecs = order.map(|i| eig.eigenvectors.column(i).into_owned());

    let scale = lambda[2].max(f64::MIN_POSITIVE);
    let mut normal = if lambda[1] - lambda[0] <= 1e-9 * scale {
        let projected = vecs[0] * vecs[0].dot(previous) + vecs[1] * vecs[1].dot(previous);
        if projected.norm() > 1e-9 {
            projected.normalize()
        } else if vecs[0].dot(previous).abs() >= vecs[1].dot(previous).abs() {
            vecs[0]
        } else {
            vecs[1]
        }
    } else {
        vecs[0]
    };
    if normal.z < 0.0 {
        normal = -normal;
    }
    if normal.z <= 1e-9 {
        return Err(TerrainError::DegenerateNormal);
    }
    let total = lambda[0] + lambda[1] + lambda[2];
    let sigma = if total > 0.0 {
        (lambda[0] / total).clamp(0.0, SIGMA_UPPER)
    } else {
        0.0
    };
    Ok(PlaneFit {
        mean,
        normal,
        sigma,
    })
}

/// Fit height, body axis and surface variation at one planar pose.
///
/// Starts from the level body axis at the height of the XY-nearest point, then
/// repeatedly gathers the points inside the body-aligned ellipsoid and refits
/// the plane through them.
pub fn fit_state(
    cloud: &PointCloud,
    state: SE2State,
    params: &FitParams,
) -> Result<TerrainSample, TerrainError> {
    let mut zb = Vector3::z();
    let mut z = cloud.nearest_xy_z([state.x, state.y]);
    let mut sigma = 0.0;
    for iteration in 0..params.n_iter.max(1) {
        let frame = body_frame(state.theta, &zb);
        let center = Vector3::new(state.x, state.y, z);
        let region = cloud.ellipsoid_indices(center, &frame, params.semi_axes);
        if region.len() < 3 {
            return Err(TerrainError::EmptyRegion {
                iteration,
                found: region.len(),
            });
        }
        let fit = fit_plane(cloud, &region, &zb)?;
        zb = fit.normal;
        z = fit.mean.z;
        sigma = fit.sigma;
    }
    Ok(TerrainSample::from_normal(z, zb, sigma))
}

/// Geometry of the SE(2) grid. Node `(i, j, k)` sits at
/// `(x0 + iΔ, y0 + jΔ, -π + kΔθ)` with `Δθ = 2π / nθ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: [f64; 2],
    pub resolution: f64,
    /// `[nx, ny, nθ]`
    pub dims: [usize; 3],
}

impl GridSpec {
    /// Smallest grid with nodes covering `[min, max]`.
    pub fn covering(min: [f64; 2], max: [f64; 2], resolution: f64, theta_bins: usize) -> Self {
        let count = |lo: f64, hi: f64| (((hi - lo) / resolution - 1e-9).ceil().max(1.0)) as usize + 1;
        Self {
            origin: min,
            resolution,
            dims: [count(min[0], max[0]), count(min[1], max[1]), theta_bins],
        }
    }

    pub fn theta_resolution(&self) -> f64 {
        TAU / self.dims[2] as f64
    }

    pub fn cell_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn max_xy(&self) -> [f64; 2] {
        [
            self.origin[0] + (self.dims[0] - 1) as f64 * self.resolution,
            self.origin[1] + (self.dims[1] - 1) as f64 * self.resolution,
        ]
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> SE2State {
        SE2State {
            x: self.origin[0] + i as f64 * self.resolution,
            y: self.origin[1] + j as f64 * self.resolution,
            theta: -PI + k as f64 * self.theta_resolution(),
        }
    }

    fn flat_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    fn unflatten(&self, idx: usize) -> (usize, usize, usize) {
        let k = idx % self.dims[2];
        let rest = idx / self.dims[2];
        (rest / self.dims[1], rest % self.dims[1], k)
    }

    fn validate(&self) -> Result<(), TerrainError> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(TerrainError::BadGeometry("resolution must be positive".into()));
        }
        if self.dims[0] < 2 || self.dims[1] < 2 || self.dims[2] < 1 {
            return Err(TerrainError::BadGeometry(format!(
                "dims {:?}: need at least 2 x 2 x 1",
                self.dims
            )));
        }
        if !(self.origin[0].is_finite() && self.origin[1].is_finite()) {
            return Err(TerrainError::BadGeometry("origin must be finite".into()));
        }
        Ok(())
    }
}

/// Interpolated mapping value with derivatives of the interpolant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerrainQuery {
    pub z: f64,
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
    /// Unit body z axis `(a, b, sqrt(1 - a² - b²))`.
    pub zb: Vector3<f64>,
    /// Gradients with respect to `(x, y, θ)`.
    pub grad_z: [f64; 3],
    pub grad_a: [f64; 3],
    pub grad_b: [f64; 3],
    pub grad_sigma: [f64; 3],
}

/// Summary of a grid build.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildStats {
    pub cells: usize,
    pub invalid_cells: usize,
}

/// The materialized terrain pose mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainGrid {
    spec: GridSpec,
    samples: Vec<TerrainSample>,
}

impl TerrainGrid {
    pub fn from_samples(spec: GridSpec, samples: Vec<TerrainSample>) -> Result<Self, TerrainError> {
        spec.validate()?;
        if samples.len() != spec.cell_count() {
            return Err(TerrainError::BadGeometry(format!(
                "{} samples for {} cells",
                samples.len(),
                spec.cell_count()
            )));
        }
        for s in &samples {
            if s.valid && !(s.a * s.a + s.b * s.b < 1.0 && (0.0..=SIGMA_UPPER).contains(&s.sigma)) {
                return Err(TerrainError::BadGeometry(format!("invalid sample {s:?}")));
            }
        }
        Ok(Self { spec, samples })
    }

    /// Grid with every node set by `f`, for synthetic terrains.
    pub fn from_fn(
        spec: GridSpec,
        f: impl Fn(SE2State) -> TerrainSample + Sync,
    ) -> Result<Self, TerrainError> {
        spec.validate()?;
        let samples = (0..spec.cell_count())
            .into_par_iter()
            .map(|idx| {
                let (i, j, k) = spec.unflatten(idx);
                f(spec.node(i, j, k))
            })
            .collect();
        Self::from_samples(spec, samples)
    }

    /// Fit every grid node from the cloud. Nodes whose fit fails are stored as
    /// invalid samples; the build itself never fails on them.
    pub fn build(cloud: &PointCloud, spec: GridSpec, params: &FitParams) -> Result<Self, TerrainError> {
        spec.validate()?;
        let samples = (0..spec.cell_count())
            .into_par_iter()
            .map(|idx| {
                let (i, j, k) = spec.unflatten(idx);
                let node = spec.node(i, j, k);
                fit_state(cloud, node, params)
                    .unwrap_or_else(|_| TerrainSample::invalid(cloud.nearest_xy_z([node.x, node.y])))
            })
            .collect();
        Ok(Self { spec, samples })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn samples(&self) -> &[TerrainSample] {
        &self.samples
    }

    pub fn sample(&self, i: usize, j: usize, k: usize) -> &TerrainSample {
        &self.samples[self.spec.flat_index(i, j, k)]
    }

    pub fn stats(&self) -> BuildStats {
        BuildStats {
            cells: self.samples.len(),
            invalid_cells: self.samples.iter().filter(|s| !s.valid).count(),
        }
    }

    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        let max = self.spec.max_xy();
        x >= self.spec.origin[0] && x <= max[0] && y >= self.spec.origin[1] && y <= max[1]
    }

    /// Sample nearest to `state` on the grid, if inside.
    pub fn nearest_sample(&self, state: SE2State) -> Option<&TerrainSample> {
        if !self.contains_xy(state.x, state.y) {
            return None;
        }
        let spec = &self.spec;
        let i = ((state.x - spec.origin[0]) / spec.resolution).round() as usize;
        let j = ((state.y - spec.origin[1]) / spec.resolution).round() as usize;
        let k = ((wrap_angle(state.theta) + PI) / spec.theta_resolution()).round() as usize
            % spec.dims[2];
        Some(self.sample(i.min(spec.dims[0] - 1), j.min(spec.dims[1] - 1), k))
    }

    /// Trilinear interpolation of `(z, a, b, σ)` with the θ axis periodic.
    /// Positions outside the XY node range are rejected, not clamped.
    pub fn query(&self, x: f64, y: f64, theta: f64) -> Result<TerrainQuery, TerrainError> {
        if !(x.is_finite() && y.is_finite() && theta.is_finite()) || !self.contains_xy(x, y) {
            return Err(TerrainError::OutOfBounds { x, y });
        }
        let spec = &self.spec;
        let [nx, ny, nt] = spec.dims;
        let locate = |u: f64, n: usize| {
            let cell = u.floor().clamp(0.0, (n - 2) as f64);
            (cell as usize, u - cell)
        };
        let (i0, tx) = locate((x - spec.origin[0]) / spec.resolution, nx);
        let (j0, ty) = locate((y - spec.origin[1]) / spec.resolution, ny);
        let dtheta = spec.theta_resolution();
        let ut = (wrap_angle(theta) + PI) / dtheta;
        let kf = ut.floor();
        let tt = ut - kf;
        let k0 = (kf as usize) % nt;
        let k1 = (k0 + 1) % nt;

        // corner[ci][cj][ck] = [z, a, b, σ]
        let mut corner = [[[[0.0f64; 4]; 2]; 2]; 2];
        for (ci, i) in [i0, i0 + 1].into_iter().enumerate() {
            for (cj, j) in [j0, j0 + 1].into_iter().enumerate() {
                for (ck, k) in [k0, k1].into_iter().enumerate() {
                    let s = self.sample(i, j, k);
                    corner[ci][cj][ck] = [s.z, s.a, s.b, s.sigma];
                }
            }
        }
        let wx = [1.0 - tx, tx];
        let wy = [1.0 - ty, ty];
        let wt = [1.0 - tt, tt];
        let dwx = [-1.0 / spec.resolution, 1.0 / spec.resolution];
        let dwt = [-1.0 / dtheta, 1.0 / dtheta];

        let mut value = [0.0; 4];
        let mut grad = [[0.0; 3]; 4];
        for ci in 0..2 {
            for cj in 0..2 {
                for ck in 0..2 {
                    let w = wx[ci] * wy[cj] * wt[ck];
                    let gx = dwx[ci] * wy[cj] * wt[ck];
                    let gy = wx[ci] * dwx[cj] * wt[ck];
                    let gt = wx[ci] * wy[cj] * dwt[ck];
                    for (f, v) in corner[ci][cj][ck].iter().enumerate() {
                        value[f] += w * v;
                        grad[f][0] += gx * v;
                        grad[f][1] += gy * v;
                        grad[f][2] += gt * v;
                    }
                }
            }
        }
        let [z, a, b, sigma] = value;
        let c = (1.0 - a * a - b * b).max(0.0).sqrt();
        Ok(TerrainQuery {
            z,
            a,
            b,
            sigma,
            zb: Vector3::new(a, b, c),
            grad_z: grad[0],
            grad_a: grad[1],
            grad_b: grad[2],
            grad_sigma: grad[3],
        })
    }

    /// Write the little-endian `TPM1` grid file.
    pub fn write(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(GRID_MAGIC)?;
        for v in [
            self.spec.origin[0],
            self.spec.origin[1],
            self.spec.resolution,
            self.spec.theta_resolution(),
        ] {
            out.write_all(&v.to_le_bytes())?;
        }
        for d in self.spec.dims {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for s in &self.samples {
            for v in [s.z, s.a, s.b, s.sigma] {
                out.write_all(&v.to_le_bytes())?;
            }
            out.write_all(&[s.valid as u8])?;
        }
        out.flush()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, GridFileError> {
        let mut input = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != GRID_MAGIC {
            return Err(GridFileError::BadMagic);
        }
        let mut f64_buf = [0u8; 8];
        let mut next_f64 = |r: &mut BufReader<File>| -> std::io::Result<f64> {
            r.read_exact(&mut f64_buf)?;
            Ok(f64::from_le_bytes(f64_buf))
        };
        let origin = [next_f64(&mut input)?, next_f64(&mut input)?];
        let resolution = next_f64(&mut input)?;
        let dtheta = next_f64(&mut input)?;
        let mut dims = [0usize; 3];
        for d in &mut dims {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let spec = GridSpec {
            origin,
            resolution,
            dims,
        };
        if dims[2] == 0 || (dtheta * dims[2] as f64 - TAU).abs() > 1e-9 {
            return Err(GridFileError::Geometry(TerrainError::BadGeometry(format!(
                "θ resolution {dtheta} does not divide 2π into {} bins",
                dims[2]
            ))));
        }
        spec.validate()?;
        let mut samples = Vec::with_capacity(spec.cell_count());
        let mut rec = [0u8; 33];
        for _ in 0..spec.cell_count() {
            input.read_exact(&mut rec)?;
            let v = |o: usize| f64::from_le_bytes(rec[o..o + 8].try_into().unwrap());
            samples.push(TerrainSample {
                z: v(0),
                a: v(8),
                b: v(16),
                sigma: v(24),
                valid: rec[32] != 0,
            });
        }
        Ok(Self::from_samples(spec, samples)?)
    }
}

#[derive(Debug, Error)]
pub enum GridFileError {
    #[error("cannot read grid file: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a TPM1 grid file")]
    BadMagic,
    #[error(transparent)]
    Geometry(#[from] TerrainError),
}
