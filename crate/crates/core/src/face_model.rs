//! Multi-linear face model: mean geometry and reflectance plus orthonormal
//! shape, expression and reflectance bases scaled by per-mode standard deviations.
//!
//! The bases are generated procedurally: per-vertex Gaussian fields, smoothed
//! over the mesh adjacency and orthonormalized with modified Gram-Schmidt. The
//! mean geometry is a half-ellipsoid shell with a nose bump and two eye sockets.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};
use crate::params::{ParamLayout, ParameterVector, N_ILLUM};

const MODEL_MAGIC: &[u8; 4] = b"IFNM";
const MODEL_VERSION: u32 = 1;

/// Half-extents of the face shell in mm (190 tall, 140 wide, 80 deep).
const HALF_WIDTH: f64 = 70.0;
const HALF_HEIGHT: f64 = 95.0;
const DEPTH: f64 = 80.0;
/// Angular extent of the grid on the ellipsoid, as a fraction of a quarter turn.
const GRID_EXTENT: f64 = 0.9;
const NOSE_HEIGHT: f64 = 25.0;
const NOSE_SIGMA: (f64, f64) = (9.0, 16.0);
const EYE_DEPTH: f64 = 6.0;
const EYE_SIGMA: f64 = 10.0;
const EYE_CENTER: (f64, f64) = (30.0, 25.0);

const SMOOTHING_PASSES: usize = 10;
const SIGMA_DECAY: f64 = -0.7;
const SHAPE_SIGMA0: f64 = 10.0;
const EXPR_SIGMA0: f64 = 6.0;
const REFL_SIGMA0: f64 = 0.05;
const MEAN_ALBEDO: [f64; 3] = [0.75, 0.55, 0.45];
const ALBEDO_VARIATION: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub n_shape: usize,
    pub n_expr: usize,
    pub n_refl: usize,
    /// Mesh grid as (rows, cols); V = rows * cols.
    pub mesh_grid: (usize, usize),
    pub rng_seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelSpec {
    /// Desk-scale dimensions: m = 70, V = 2304.
    pub fn desk() -> Self {
        Self {
            n_shape: 16,
            n_expr: 8,
            n_refl: 16,
            mesh_grid: (48, 48),
            rng_seed: 7,
        }
    }

    /// Full-size dimensions: m = 350.
    pub fn full() -> Self {
        Self {
            n_shape: 128,
            n_expr: 64,
            n_refl: 128,
            ..Self::desk()
        }
    }

    pub fn n_illum(&self) -> usize {
        N_ILLUM
    }

    pub fn n_vertices(&self) -> usize {
        self.mesh_grid.0 * self.mesh_grid.1
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self.n_shape, self.n_expr, self.n_refl)
    }

    pub fn validate(&self) -> Result<()> {
        let (rows, cols) = self.mesh_grid;
        if rows < 8 || cols < 8 {
            return Err(Error::InvalidSpec(format!(
                "mesh grid {rows}x{cols} is smaller than 8x8"
            )));
        }
        let dim = 3 * self.n_vertices();
        if dim < self.n_shape + self.n_expr {
            return Err(Error::InvalidSpec(format!(
                "3V = {dim} cannot hold {} orthonormal geometry modes",
                self.n_shape + self.n_expr
            )));
        }
        if dim < self.n_refl {
            return Err(Error::InvalidSpec(format!(
                "3V = {dim} cannot hold {} orthonormal reflectance modes",
                self.n_refl
            )));
        }
        if self.n_vertices() > u32::MAX as usize {
            return Err(Error::InvalidSpec("too many vertices".into()));
        }
        Ok(())
    }
}

/// Flattened orthonormal basis: `count` rows of length `dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Basis {
    dim: usize,
    data: Vec<f32>,
}

impl Basis {
    fn new(dim: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len() % dim.max(1), 0);
        Self { dim, data }
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FaceModel {
    pub spec: ModelSpec,
    /// a^[g], 3V values in mm.
    pub mean_geometry: Vec<f32>,
    /// a^[r], 3V RGB values in [0, 1].
    pub mean_reflectance: Vec<f32>,
    pub shape_basis: Basis,
    pub expr_basis: Basis,
    pub refl_basis: Basis,
    pub shape_sigma: Vec<f32>,
    pub expr_sigma: Vec<f32>,
    pub refl_sigma: Vec<f32>,
    pub triangles: Vec<[u32; 3]>,
}

/// Euler rotation R = Rz(gamma) * Ry(beta) * Rx(alpha): rotate about x first, then y, then z.
pub fn rotation_matrix(alpha: f64, beta: f64, gamma: f64) -> Mat3 {
    let rx = rotation_x(alpha);
    let ry = rotation_y(beta);
    let rz = rotation_z(gamma);
    crate::math::mat_mul(&rz, &crate::math::mat_mul(&ry, &rx))
}

pub fn rotation_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

pub fn rotation_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

pub fn rotation_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn power_law_sigmas(leading: f64, n: usize) -> Vec<f32> {
    (1..=n)
        .map(|i| (leading * (i as f64).powf(SIGMA_DECAY)) as f32)
        .collect()
}

/// Row-major grid triangulation, counter-clockwise when seen from +z.
/// The quad diagonal flips at the vertical centerline so the mesh stays mirror symmetric.
fn grid_triangles(rows: usize, cols: usize) -> Vec<[u32; 3]> {
    let mut tris = Vec::with_capacity(2 * (rows - 1) * (cols - 1));
    let idx = |r: usize, c: usize| (r * cols + c) as u32;
    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            let (v00, v01, v10, v11) = (idx(r, c), idx(r, c + 1), idx(r + 1, c), idx(r + 1, c + 1));
            if 2 * c + 1 < cols - 1 {
                tris.push([v00, v10, v11]);
                tris.push([v00, v11, v01]);
            } else {
                tris.push([v00, v10, v01]);
                tris.push([v01, v10, v11]);
            }
        }
    }
    tris
}

fn mean_shell(rows: usize, cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * rows * cols);
    let extent = GRID_EXTENT * std::f64::consts::FRAC_PI_2;
    for r in 0..rows {
        // integer numerators keep mirrored rows/columns exact negatives
        let v = ((rows - 1) as f64 - 2.0 * r as f64) / (rows - 1) as f64;
        let b = v * extent;
        for c in 0..cols {
            let u = (2.0 * c as f64 - (cols - 1) as f64) / (cols - 1) as f64;
            let a = u * extent;
            let x = HALF_WIDTH * a.sin() * b.cos();
            let y = HALF_HEIGHT * b.sin();
            let mut z = DEPTH * a.cos() * b.cos();
            z += NOSE_HEIGHT
                * (-(x * x) / (2.0 * NOSE_SIGMA.0 * NOSE_SIGMA.0)
                    - (y * y) / (2.0 * NOSE_SIGMA.1 * NOSE_SIGMA.1))
                    .exp();
            let eye = |cx: f64| {
                let (dx, dy) = (x - cx, y - EYE_CENTER.1);
                (-(dx * dx + dy * dy) / (2.0 * EYE_SIGMA * EYE_SIGMA)).exp()
            };
            z -= EYE_DEPTH * (eye(-EYE_CENTER.0) + eye(EYE_CENTER.0));
            out.extend_from_slice(&[x, y, z]);
        }
    }
    out
}

fn vertex_neighbors(n_vertices: usize, triangles: &[[u32; 3]]) -> Vec<Vec<usize>> {
    let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); n_vertices];
    for t in triangles {
        for k in 0..3 {
            let a = t[k] as usize;
            let b = t[(k + 1) % 3] as usize;
            nbrs[a].push(b);
            nbrs[b].push(a);
        }
    }
    for n in &mut nbrs {
        n.sort_unstable();
        n.dedup();
    }
    nbrs
}

/// Umbrella-operator smoothing of a field with `channels` values per vertex.
fn smooth_field(field: &mut [f64], channels: usize, nbrs: &[Vec<usize>], passes: usize) {
    let mut next = vec![0.0; field.len()];
    for _ in 0..passes {
        for (v, vn) in nbrs.iter().enumerate() {
            for ch in 0..channels {
                let avg = if vn.is_empty() {
                    field[v * channels + ch]
                } else {
                    vn.iter().map(|&n| field[n * channels + ch]).sum::<f64>() / vn.len() as f64
                };
                next[v * channels + ch] = 0.5 * field[v * channels + ch] + 0.5 * avg;
            }
        }
        field.copy_from_slice(&next);
    }
}

fn gaussian_field(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Modified Gram-Schmidt with one re-orthogonalization pass.
fn orthonormalize(vectors: &mut [Vec<f64>]) -> Result<()> {
    for i in 0..vectors.len() {
        let (done, rest) = vectors.split_at_mut(i);
        let v = &mut rest[0];
        for _ in 0..2 {
            for q in done.iter() {
                let p = dot64(v, q);
                v.iter_mut().zip(q).for_each(|(x, qx)| *x -= p * qx);
            }
        }
        let n = dot64(v, v).sqrt();
        if n.is_nan() || n <= 1e-12 {
            return Err(Error::InvalidSpec(format!(
                "basis vector {i} is linearly dependent"
            )));
        }
        v.iter_mut().for_each(|x| *x /= n);
    }
    Ok(())
}

fn flatten_f32(vectors: &[Vec<f64>]) -> Vec<f32> {
    vectors.iter().flatten().map(|&v| v as f32).collect()
}

/// Deterministically generates the procedural face model for `spec`.
pub fn generate_model(spec: &ModelSpec) -> Result<FaceModel> {
    spec.validate()?;
    let (rows, cols) = spec.mesh_grid;
    let n_vertices = spec.n_vertices();
    let dim = 3 * n_vertices;
    let triangles = grid_triangles(rows, cols);
    let nbrs = vertex_neighbors(n_vertices, &triangles);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);

    let smooth_random = |rng: &mut ChaCha8Rng, channels: usize| {
        let mut f = gaussian_field(rng, n_vertices * channels);
        smooth_field(&mut f, channels, &nbrs, SMOOTHING_PASSES);
        f
    };

    // Shape and expression are orthonormalized jointly so the two families are
    // also mutually orthogonal.
    let mut geometry_modes: Vec<Vec<f64>> = (0..spec.n_shape + spec.n_expr)
        .map(|_| smooth_random(&mut rng, 3))
        .collect();
    orthonormalize(&mut geometry_modes)?;
    let expr_modes = geometry_modes.split_off(spec.n_shape);

    let mut refl_modes: Vec<Vec<f64>> = (0..spec.n_refl).map(|_| smooth_random(&mut rng, 3)).collect();
    orthonormalize(&mut refl_modes)?;

    let albedo_field = smooth_random(&mut rng, 1);
    let peak = albedo_field.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let mean_reflectance = albedo_field
        .iter()
        .flat_map(|&f| MEAN_ALBEDO.map(|base| (base + ALBEDO_VARIATION * f / peak) as f32))
        .collect();

    Ok(FaceModel {
        spec: *spec,
        mean_geometry: mean_shell(rows, cols).into_iter().map(|v| v as f32).collect(),
        mean_reflectance,
        shape_basis: Basis::new(dim, flatten_f32(&geometry_modes)),
        expr_basis: Basis::new(dim, flatten_f32(&expr_modes)),
        refl_basis: Basis::new(dim, flatten_f32(&refl_modes)),
        shape_sigma: power_law_sigmas(SHAPE_SIGMA0, spec.n_shape),
        expr_sigma: power_law_sigmas(EXPR_SIGMA0, spec.n_expr),
        refl_sigma: power_law_sigmas(REFL_SIGMA0, spec.n_refl),
        triangles,
    })
}

fn accumulate_modes(out: &mut [f64], basis: &Basis, sigma: &[f32], coeffs: &[f64]) {
    for (i, (&s, &c)) in sigma.iter().zip(coeffs).enumerate() {
        let w = s as f64 * c;
        if w == 0.0 {
            continue;
        }
        for (o, &b) in out.iter_mut().zip(basis.vector(i)) {
            *o += w * b as f64;
        }
    }
}

impl FaceModel {
    pub fn layout(&self) -> ParamLayout {
        self.spec.layout()
    }

    pub fn n_vertices(&self) -> usize {
        self.spec.n_vertices()
    }

    fn check_layout(&self, theta: &ParameterVector) -> Result<()> {
        if theta.layout() != self.layout() {
            return Err(Error::mismatch(
                "parameter vector",
                self.layout().len(),
                theta.layout().len(),
            ));
        }
        Ok(())
    }

    /// Unposed vertex positions (3V, mm): a^[g] + sum b^[s] s^[s] t^[s] + sum b^[e] s^[e] t^[e].
    pub fn evaluate_geometry(&self, theta: &ParameterVector) -> Result<Vec<f64>> {
        self.check_layout(theta)?;
        let mut out: Vec<f64> = self.mean_geometry.iter().map(|&v| v as f64).collect();
        accumulate_modes(&mut out, &self.shape_basis, &self.shape_sigma, theta.shape());
        accumulate_modes(&mut out, &self.expr_basis, &self.expr_sigma, theta.expression());
        Ok(out)
    }

    /// Per-vertex RGB reflectance before clamping.
    pub fn evaluate_reflectance_raw(&self, theta: &ParameterVector) -> Result<Vec<f64>> {
        self.check_layout(theta)?;
        let mut out: Vec<f64> = self.mean_reflectance.iter().map(|&v| v as f64).collect();
        accumulate_modes(&mut out, &self.refl_basis, &self.refl_sigma, theta.reflectance());
        Ok(out)
    }

    /// Per-vertex RGB reflectance, clamped to [0, 1].
    pub fn evaluate_reflectance(&self, theta: &ParameterVector) -> Result<Vec<f64>> {
        let mut out = self.evaluate_reflectance_raw(theta)?;
        out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(out)
    }

    /// Centroid of the mean geometry; the renderer rotates about this point.
    pub fn mean_centroid(&self) -> Vec3 {
        let mut c = [0.0; 3];
        for p in self.mean_geometry.chunks_exact(3) {
            for k in 0..3 {
                c[k] += p[k] as f64;
            }
        }
        let n = self.n_vertices() as f64;
        [c[0] / n, c[1] / n, c[2] / n]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dim = 3 * self.n_vertices();
        let mut w = ByteWriter::with_capacity(
            64 + 4 * dim * (2 + self.shape_basis.len() + self.expr_basis.len() + self.refl_basis.len()),
        );
        w.bytes(MODEL_MAGIC);
        w.u32(MODEL_VERSION);
        let s = &self.spec;
        w.u32(s.n_shape as u32);
        w.u32(s.n_expr as u32);
        w.u32(s.n_refl as u32);
        w.u32(N_ILLUM as u32);
        w.u32(s.n_vertices() as u32);
        w.u32(s.mesh_grid.0 as u32);
        w.u32(s.mesh_grid.1 as u32);
        w.u64(s.rng_seed);
        w.f32_slice(&self.mean_geometry);
        w.f32_slice(&self.mean_reflectance);
        w.f32_slice(self.shape_basis.as_flat());
        w.f32_slice(self.expr_basis.as_flat());
        w.f32_slice(self.refl_basis.as_flat());
        w.f32_slice(&self.shape_sigma);
        w.f32_slice(&self.expr_sigma);
        w.f32_slice(&self.refl_sigma);
        w.u32(self.triangles.len() as u32);
        for t in &self.triangles {
            t.iter().for_each(|&i| w.u32(i));
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "IFNM");
        r.header(MODEL_MAGIC, MODEL_VERSION)?;
        let n_shape = r.usize32()?;
        let n_expr = r.usize32()?;
        let n_refl = r.usize32()?;
        let n_illum = r.usize32()?;
        let n_vertices = r.usize32()?;
        let rows = r.usize32()?;
        let cols = r.usize32()?;
        let rng_seed = r.u64()?;
        let spec = ModelSpec {
            n_shape,
            n_expr,
            n_refl,
            mesh_grid: (rows, cols),
            rng_seed,
        };
        if n_illum != N_ILLUM {
            return Err(Error::mismatch("illumination dimension", N_ILLUM, n_illum));
        }
        if rows.checked_mul(cols) != Some(n_vertices) {
            return Err(Error::Malformed {
                format: "IFNM",
                reason: format!("{rows}x{cols} grid does not have {n_vertices} vertices"),
            });
        }
        let dim = 3 * n_vertices;
        let mean_geometry = r.f32_vec(dim)?;
        let mean_reflectance = r.f32_vec(dim)?;
        let shape_basis = Basis::new(dim, r.f32_vec(n_shape * dim)?);
        let expr_basis = Basis::new(dim, r.f32_vec(n_expr * dim)?);
        let refl_basis = Basis::new(dim, r.f32_vec(n_refl * dim)?);
        let shape_sigma = r.f32_vec(n_shape)?;
        let expr_sigma = r.f32_vec(n_expr)?;
        let refl_sigma = r.f32_vec(n_refl)?;
        let n_tris = r.usize32()?;
        let raw = r.take(n_tris.checked_mul(12).ok_or(Error::Truncated("IFNM"))?)?;
        let triangles: Vec<[u32; 3]> = raw
            .chunks_exact(12)
            .map(|c| {
                [0, 4, 8].map(|o| u32::from_le_bytes(c[o..o + 4].try_into().unwrap()))
            })
            .collect();
        r.finish()?;
        if triangles.iter().flatten().any(|&i| i as usize >= n_vertices) {
            return Err(Error::Malformed {
                format: "IFNM",
                reason: "triangle index out of range".into(),
            });
        }
        Ok(Self {
            spec,
            mean_geometry,
            mean_reflectance,
            shape_basis,
            expr_basis,
            refl_basis,
            shape_sigma,
            expr_sigma,
            refl_sigma,
            triangles,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
