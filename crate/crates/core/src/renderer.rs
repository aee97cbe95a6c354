//! Perspective rasterizer with per-pixel Lambertian SH shading.
//!
//! Camera sits at the origin looking down -z (right-handed, y up). The face is
//! rotated about the mean-geometry centroid, which is then placed at
//! `(0, 0, -face_distance)`. Pixels are covered when their center lies inside a
//! projected triangle; ties on an edge follow the top-left rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face_model::{rotation_matrix, FaceModel};
use crate::illumination::{irradiance_from_basis, sh_basis_unchecked, ShCoefficients};
use crate::image::{Mask, RgbImage};
use crate::math::{self, Vec3};
use crate::params::ParameterVector;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSpec {
    pub image_width: usize,
    pub image_height: usize,
    /// Vertical field of view in degrees.
    pub vertical_fov: f64,
    /// Distance from the camera to the face centroid in mm.
    pub face_distance: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            image_width: 128,
            image_height: 128,
            vertical_fov: 30.0,
            face_distance: 600.0,
        }
    }
}

impl CameraSpec {
    pub fn square(resolution: usize) -> Self {
        Self {
            image_width: resolution,
            image_height: resolution,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_width == 0 || self.image_width != self.image_height {
            return Err(Error::InvalidCamera(format!(
                "image must be square and non-empty, got {}x{}",
                self.image_width, self.image_height
            )));
        }
        if !(self.vertical_fov > 5.0 && self.vertical_fov < 90.0) {
            return Err(Error::InvalidCamera(format!(
                "vertical fov {} outside (5, 90) degrees",
                self.vertical_fov
            )));
        }
        if !(self.face_distance.is_finite() && self.face_distance > 0.0) {
            return Err(Error::InvalidCamera("face distance must be positive".into()));
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        (self.image_height as f64 / 2.0) / (self.vertical_fov.to_radians() / 2.0).tan()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected {
    pub u: f64,
    pub v: f64,
    /// Positive distance along the viewing axis, mm.
    pub depth: f64,
}

/// Projects a camera-space point (mm) to pixel coordinates.
pub fn project(camera: &CameraSpec, p: Vec3) -> Result<Projected> {
    project_with(camera, camera.focal(), p)
}

#[inline]
fn project_with(camera: &CameraSpec, f: f64, p: Vec3) -> Result<Projected> {
    let depth = -p[2];
    if depth.is_nan() || depth <= 0.0 {
        return Err(Error::BehindCamera(p[2]));
    }
    Ok(Projected {
        u: camera.image_width as f64 / 2.0 + f * p[0] / depth,
        v: camera.image_height as f64 / 2.0 - f * p[1] / depth,
        depth,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedSample {
    pub image: RgbImage,
    pub mask: Mask,
    /// Per-pixel depth in mm; `f32::INFINITY` outside the mask.
    pub depth: Vec<f32>,
    pub params: ParameterVector,
}

/// Area-weighted vertex normals of an unposed vertex array.
pub fn vertex_normals(positions: &[f64], triangles: &[[u32; 3]]) -> Vec<Vec3> {
    let n_vertices = positions.len() / 3;
    let vert = |i: u32| {
        let i = i as usize * 3;
        [positions[i], positions[i + 1], positions[i + 2]]
    };
    let mut acc = vec![[0.0; 3]; n_vertices];
    for t in triangles {
        let [a, b, c] = t.map(vert);
        // cross product length is twice the triangle area
        let n = math::cross(math::sub(b, a), math::sub(c, a));
        for &i in t {
            acc[i as usize] = math::add(acc[i as usize], n);
        }
    }
    acc.into_iter()
        .map(|n| math::normalize_or(n, [0.0, 0.0, 1.0]))
        .collect()
}

#[inline]
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Top-left rule for the canonical (positive `edge`) orientation in y-down screen space.
#[inline]
fn is_top_left(a: [f64; 2], b: [f64; 2]) -> bool {
    let top = a[1] == b[1] && b[0] > a[0];
    let left = b[1] < a[1];
    top || left
}

#[inline]
fn covers(w: f64, top_left: bool) -> bool {
    w > 0.0 || (w == 0.0 && top_left)
}

const NO_TRIANGLE: u32 = u32::MAX;

/// Visibility buffer: nearest triangle and its perspective-correct barycentrics per pixel.
struct Visibility {
    depth: Vec<f64>,
    triangle: Vec<u32>,
    bary: Vec<[f64; 3]>,
}

fn rasterize(
    width: usize,
    height: usize,
    screen: &[[f64; 2]],
    depths: &[f64],
    camera_pos: &[Vec3],
    triangles: &[[u32; 3]],
) -> Visibility {
    let n = width * height;
    let mut vis = Visibility {
        depth: vec![f64::INFINITY; n],
        triangle: vec![NO_TRIANGLE; n],
        bary: vec![[0.0; 3]; n],
    };
    for (ti, t) in triangles.iter().enumerate() {
        let [i0, i1, i2] = t.map(|i| i as usize);
        let (p0, p1, p2) = (camera_pos[i0], camera_pos[i1], camera_pos[i2]);
        let face_normal = math::cross(math::sub(p1, p0), math::sub(p2, p0));
        if math::dot(face_normal, p0) > 0.0 {
            continue;
        }
        let mut idx = [i0, i1, i2];
        let mut s = [screen[i0], screen[i1], screen[i2]];
        let mut area = edge(s[0], s[1], s[2]);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        if area < 0.0 {
            s.swap(1, 2);
            idx.swap(1, 2);
            area = -area;
        }
        let tl = [
            is_top_left(s[1], s[2]),
            is_top_left(s[2], s[0]),
            is_top_left(s[0], s[1]),
        ];
        let min_u = s.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let max_u = s.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let min_v = s.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let max_v = s.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        let x0 = (min_u - 0.5).ceil().max(0.0) as usize;
        let y0 = (min_v - 0.5).ceil().max(0.0) as usize;
        let x1 = (max_u - 0.5).floor().min(width as f64 - 1.0);
        let y1 = (max_v - 0.5).floor().min(height as f64 - 1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        let (x1, y1) = (x1 as usize, y1 as usize);
        let inv_d = idx.map(|i| 1.0 / depths[i]);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let p = [x as f64 + 0.5, y as f64 + 0.5];
                let w = [edge(s[1], s[2], p), edge(s[2], s[0], p), edge(s[0], s[1], p)];
                if !(covers(w[0], tl[0]) && covers(w[1], tl[1]) && covers(w[2], tl[2])) {
                    continue;
                }
                let l = w.map(|wi| wi / area);
                let pw = [l[0] * inv_d[0], l[1] * inv_d[1], l[2] * inv_d[2]];
                let inv = pw[0] + pw[1] + pw[2];
                let d = 1.0 / inv;
                let pix = y * width + x;
                if d < vis.depth[pix] {
                    vis.depth[pix] = d;
                    vis.triangle[pix] = ti as u32;
                    // barycentrics in the triangle's original vertex order
                    let mut b = [0.0; 3];
                    for k in 0..3 {
                        let slot = t.iter().position(|&v| v as usize == idx[k]).unwrap();
                        b[slot] = pw[k] / inv;
                    }
                    vis.bary[pix] = b;
                }
            }
        }
    }
    vis
}

/// Renders the face described by `theta` into an image, coverage mask and depth map.
pub fn render(model: &FaceModel, camera: &CameraSpec, theta: &ParameterVector) -> Result<RenderedSample> {
    camera.validate()?;
    let geometry = model.evaluate_geometry(theta)?;
    let reflectance = model.evaluate_reflectance(theta)?;
    let coeffs = ShCoefficients::from_slice(theta.illumination())?;
    let normals = vertex_normals(&geometry, &model.triangles);

    let [alpha, beta, gamma] = theta.rotation();
    let rot = rotation_matrix(alpha, beta, gamma);
    let centroid = model.mean_centroid();
    let offset = [0.0, 0.0, -camera.face_distance];
    let f = camera.focal();

    let n_vertices = model.n_vertices();
    let mut camera_pos = Vec::with_capacity(n_vertices);
    let mut screen = Vec::with_capacity(n_vertices);
    let mut depths = Vec::with_capacity(n_vertices);
    for p in geometry.chunks_exact(3) {
        let local = math::sub([p[0], p[1], p[2]], centroid);
        let q = math::add(math::mat_vec(&rot, local), offset);
        let proj = project_with(camera, f, q)?;
        camera_pos.push(q);
        screen.push([proj.u, proj.v]);
        depths.push(proj.depth);
    }
    let posed_normals: Vec<Vec3> = normals.iter().map(|&n| math::mat_vec(&rot, n)).collect();

    let (w, h) = (camera.image_width, camera.image_height);
    let vis = rasterize(w, h, &screen, &depths, &camera_pos, &model.triangles);

    let mut image = RgbImage::black(w, h);
    let mut mask = Mask::empty(w, h);
    let mut depth = vec![f32::INFINITY; w * h];
    for (pix, d) in depth.iter_mut().enumerate() {
        let ti = vis.triangle[pix];
        if ti == NO_TRIANGLE {
            continue;
        }
        let t = model.triangles[ti as usize];
        let b = vis.bary[pix];
        let mut albedo = [0.0; 3];
        let mut n = [0.0; 3];
        for k in 0..3 {
            let v = t[k] as usize;
            for c in 0..3 {
                albedo[c] += b[k] * reflectance[3 * v + c];
            }
            n = math::add(n, math::scale(posed_normals[v], b[k]));
        }
        let n = math::normalize_or(n, posed_normals[t[0] as usize]);
        let e = irradiance_from_basis(&coeffs, &sh_basis_unchecked(n));
        let rgb = [0, 1, 2].map(|c| {
            let value = (albedo[c] * e[c]).clamp(0.0, 1.0);
            (255.0 * value).round() as u8
        });
        image.data[3 * pix..3 * pix + 3].copy_from_slice(&rgb);
        mask.bits[pix] = true;
        *d = vis.depth[pix] as f32;
    }

    Ok(RenderedSample {
        image,
        mask,
        depth,
        params: theta.clone(),
    })
}
