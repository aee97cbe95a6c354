//! The convolutional parameter regressor and its input pre-processing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::autodiff::{conv_output_size, Graph, Var};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::params::ParamLayout;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvSpec {
    /// Padding is `kernel / 2` on every side.
    pub fn pad(&self) -> usize {
        self.kernel / 2
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_resolution: usize,
    pub conv: Vec<ConvSpec>,
    pub hidden: usize,
    /// Group sizes of the predicted parameter vector. Set from the face model
    /// rather than read from configuration files.
    #[serde(skip)]
    pub layout: ParamLayout,
    pub init_seed: u64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self::desk(ParamLayout::new(16, 8, 16))
    }
}

impl NetworkSpec {
    pub fn desk(layout: ParamLayout) -> Self {
        let c = |out_channels, kernel| ConvSpec {
            out_channels,
            kernel,
            stride: 2,
        };
        Self {
            input_resolution: 64,
            conv: vec![c(16, 5), c(32, 3), c(64, 3), c(64, 3)],
            hidden: 256,
            layout,
            init_seed: 11,
        }
    }

    /// Width of the output layer.
    pub fn output(&self) -> usize {
        self.layout.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.input_resolution == 0 || self.conv.is_empty() || self.hidden == 0 {
            return bad("network sizes must be positive and at least one conv layer is required".into());
        }
        let mut size = self.input_resolution;
        for (i, c) in self.conv.iter().enumerate() {
            if c.out_channels == 0 || c.kernel == 0 || c.stride == 0 {
                return bad(format!("conv layer {i} has a zero size"));
            }
            if size + 2 * c.pad() < c.kernel {
                return bad(format!("conv layer {i} kernel exceeds its input"));
            }
            size = conv_output_size(size, c.kernel, c.stride, c.pad());
        }
        Ok(())
    }

    /// Side length of the last conv feature map.
    pub fn feature_size(&self) -> usize {
        self.conv.iter().fold(self.input_resolution, |s, c| {
            conv_output_size(s, c.kernel, c.stride, c.pad())
        })
    }

    pub fn flat_features(&self) -> usize {
        let s = self.feature_size();
        s * s * self.conv.last().map_or(3, |c| c.out_channels)
    }

    /// Shapes of all parameter tensors, weight then bias per layer.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        let mut in_c = 3;
        for c in &self.conv {
            shapes.push(vec![c.out_channels, in_c, c.kernel, c.kernel]);
            shapes.push(vec![c.out_channels]);
            in_c = c.out_channels;
        }
        shapes.push(vec![self.hidden, self.flat_features()]);
        shapes.push(vec![self.hidden]);
        shapes.push(vec![self.output(), self.hidden]);
        shapes.push(vec![self.output()]);
        shapes
    }

    pub fn n_weights(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    pub spec: NetworkSpec,
    /// Weight and bias tensors, in the order of [`NetworkSpec::param_shapes`].
    pub params: Vec<Tensor<T>>,
}

impl<T: Scalar> Network<T> {
    /// Hidden layers use fan-in scaled Gaussians (std sqrt(2 / fan_in)); the
    /// output layer uses N(0, 0.01) weights; every bias starts at 0.
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
        let shapes = spec.param_shapes();
        let n_layers = shapes.len() / 2;
        let mut params = Vec::with_capacity(shapes.len());
        for (layer, pair) in shapes.chunks(2).enumerate() {
            let (ws, bs) = (&pair[0], &pair[1]);
            let fan_in: usize = ws[1..].iter().product();
            let std = if layer + 1 == n_layers {
                0.01
            } else {
                (2.0 / fan_in as f64).sqrt()
            };
            let normal = Normal::new(0.0, std).unwrap();
            let n: usize = ws.iter().product();
            let w = (0..n).map(|_| T::of(normal.sample(&mut rng))).collect();
            params.push(Tensor::from_vec(ws, w));
            params.push(Tensor::zeros(bs));
        }
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<Tensor<T>>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::mismatch("network tensors", shapes.len(), params.len()));
        }
        for (s, p) in shapes.iter().zip(&params) {
            if *s != p.shape {
                return Err(Error::mismatch("network tensor size", s.iter().product(), p.len()));
            }
        }
        Ok(Self { spec, params })
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    /// Records the forward pass on `graph`; returns the parameter leaves and the output.
    pub fn build(&self, graph: &mut Graph<T>, input: Var, requires_grad: bool) -> (Vec<Var>, Var) {
        let leaves: Vec<Var> = self
            .params
            .iter()
            .map(|p| graph.leaf(p.clone(), requires_grad))
            .collect();
        let mut h = input;
        for (i, c) in self.spec.conv.iter().enumerate() {
            h = graph.conv2d(h, leaves[2 * i], leaves[2 * i + 1], c.stride, c.pad());
            h = graph.relu(h);
        }
        let l = self.spec.conv.len();
        h = graph.flatten(h);
        h = graph.linear(h, leaves[2 * l], leaves[2 * l + 1]);
        h = graph.relu(h);
        let out = graph.linear(h, leaves[2 * l + 2], leaves[2 * l + 3]);
        (leaves, out)
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let r = self.spec.input_resolution;
        if input.shape.len() != 4 || input.shape[1..] != [3, r, r] {
            return Err(Error::InvalidConfig(format!(
                "network input must be [B, 3, {r}, {r}], got {:?}",
                input.shape
            )));
        }
        Ok(())
    }

    /// Predictions `[B, output]` for a normalized batch `[B, 3, R, R]`.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let mut graph = Graph::new();
        let x = graph.leaf(input.clone(), false);
        let (_, out) = self.build(&mut graph, x, false);
        Ok(graph.value(out).clone())
    }

    /// Runs forward and backward. `objective` maps the predictions to a loss
    /// value and its gradient with respect to the predictions.
    pub fn gradients<F>(&self, input: Tensor<T>, objective: F) -> Result<(f64, Vec<Vec<T>>)>
    where
        F: FnOnce(&Tensor<T>) -> Result<(f64, Vec<T>)>,
    {
        self.check_input(&input)?;
        let mut graph = Graph::new();
        let x = graph.leaf(input, false);
        let (leaves, out) = self.build(&mut graph, x, true);
        let (loss, seed) = objective(graph.value(out))?;
        graph.backward(out, seed);
        let grads = leaves
            .into_iter()
            .map(|v| graph.take_grad(v).unwrap_or_default())
            .collect();
        Ok((loss, grads))
    }
}

/// Area-averaging weights mapping `src` samples onto `dst` samples along one axis.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let (lo, hi) = (i as f64 * scale, (i + 1) as f64 * scale);
            let mut taps = Vec::new();
            let mut j = lo.floor() as usize;
            while (j as f64) < hi && j < src {
                let overlap = (hi.min(j as f64 + 1.0) - lo.max(j as f64)).max(0.0);
                if overlap > 0.0 {
                    taps.push((j, overlap / scale));
                }
                j += 1;
            }
            taps
        })
        .collect()
}

/// Area-resamples `image` to `resolution x resolution` and maps each channel
/// value `v` to `v / 255 - 0.5`. Output is CHW.
pub fn normalize_input(image: &RgbImage, resolution: usize) -> Result<Vec<f32>> {
    if image.width == 0 || image.height == 0 || resolution == 0 {
        return Err(Error::InvalidConfig("cannot normalize an empty image".into()));
    }
    let r = resolution;
    let mut out = vec![0f32; 3 * r * r];
    if image.width == r && image.height == r {
        for (i, px) in image.data.chunks(3).enumerate() {
            for c in 0..3 {
                out[c * r * r + i] = (px[c] as f64 / 255.0 - 0.5) as f32;
            }
        }
        return Ok(out);
    }
    if image.width.is_multiple_of(r) && image.height.is_multiple_of(r) {
        // integer factor: plain block means
        let (fx, fy) = (image.width / r, image.height / r);
        let scale = 1.0 / (fx * fy) as f64 / 255.0;
        let mut sums = vec![0u32; 3 * r * r];
        for y in 0..image.height {
            let row = &image.data[y * image.width * 3..(y + 1) * image.width * 3];
            let oy = y / fy;
            for (x, px) in row.chunks_exact(3).enumerate() {
                let o = oy * r + x / fx;
                for c in 0..3 {
                    sums[c * r * r + o] += px[c] as u32;
                }
            }
        }
        for (o, s) in out.iter_mut().zip(&sums) {
            *o = (*s as f64 * scale - 0.5) as f32;
        }
        return Ok(out);
    }
    let wx = area_weights(image.width, r);
    let wy = area_weights(image.height, r);
    // horizontal pass into f64 rows
    let mut rows = vec![0f64; image.height * r * 3];
    for y in 0..image.height {
        for (ox, taps) in wx.iter().enumerate() {
            for c in 0..3 {
                rows[(y * r + ox) * 3 + c] = taps
                    .iter()
                    .map(|&(x, w)| w * image.data[(y * image.width + x) * 3 + c] as f64)
                    .sum();
            }
        }
    }
    for (oy, taps) in wy.iter().enumerate() {
        for ox in 0..r {
            for c in 0..3 {
                let v: f64 = taps.iter().map(|&(y, w)| w * rows[(y * r + ox) * 3 + c]).sum();
                out[c * r * r + oy * r + ox] = (v / 255.0 - 0.5) as f32;
            }
        }
    }
    Ok(out)
}

/// Stacks normalized images into a `[B, 3, R, R]` batch.
pub fn normalize_batch<'a>(
    images: impl IntoIterator<Item = &'a RgbImage>,
    resolution: usize,
) -> Result<Tensor<f32>> {
    let mut data = Vec::new();
    let mut n = 0;
    for img in images {
        data.extend(normalize_input(img, resolution)?);
        n += 1;
    }
    Ok(Tensor::from_vec(&[n, 3, resolution, resolution], data))
}
