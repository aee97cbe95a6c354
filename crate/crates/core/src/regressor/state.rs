//! Trainable regressor state and its `IFNW` file format.

use std::path::Path;

use rayon::prelude::*;

use super::network::{normalize_batch, ConvSpec, Network, NetworkSpec};
use super::optim::Accumulators;
use super::tensor::Tensor;
use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::params::ParamLayout;

const WEIGHTS_MAGIC: &[u8; 4] = b"IFNW";
const WEIGHTS_VERSION: u32 = 1;

/// Images per forward pass during batch inference.
const INFER_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct RegressorState {
    pub network: Network<f32>,
    pub accumulators: Accumulators,
    /// Optimizer steps taken so far.
    pub iteration: u64,
}

impl RegressorState {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        let network = Network::new(spec)?;
        let accumulators = Accumulators::zeros(network.params.iter().map(Tensor::len));
        Ok(Self {
            network,
            accumulators,
            iteration: 0,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.network.spec
    }

    pub fn output_dim(&self) -> usize {
        self.network.spec.output()
    }

    /// Predicts one parameter row per image. Rows do not depend on how the
    /// images are grouped, and chunks run in parallel.
    pub fn predict(&self, images: &[&RgbImage]) -> Result<Vec<Vec<f32>>> {
        let m = self.output_dim();
        let r = self.spec().input_resolution;
        let chunks: Vec<Result<Vec<Vec<f32>>>> = images
            .par_chunks(INFER_CHUNK)
            .map(|chunk| {
                let batch = normalize_batch(chunk.iter().copied(), r)?;
                let out = self.network.forward(&batch)?;
                Ok(out.data.chunks(m).map(<[f32]>::to_vec).collect())
            })
            .collect();
        let mut rows = Vec::with_capacity(images.len());
        for c in chunks {
            rows.extend(c?);
        }
        Ok(rows)
    }

    pub fn predict_one(&self, image: &RgbImage) -> Result<Vec<f32>> {
        Ok(self.predict(&[image])?.remove(0))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let spec = self.spec();
        let n = spec.n_weights();
        let mut w = ByteWriter::with_capacity(64 + 16 * spec.conv.len() + 12 * n);
        w.bytes(WEIGHTS_MAGIC);
        w.u32(WEIGHTS_VERSION);
        w.u32(spec.input_resolution as u32);
        w.u32(spec.conv.len() as u32);
        for c in &spec.conv {
            w.u32(c.out_channels as u32);
            w.u32(c.kernel as u32);
            w.u32(c.stride as u32);
        }
        w.u32(spec.hidden as u32);
        w.u32(spec.layout.n_shape as u32);
        w.u32(spec.layout.n_expr as u32);
        w.u32(spec.layout.n_refl as u32);
        w.u64(spec.init_seed);
        w.u64(self.iteration);
        self.network.params.iter().for_each(|p| w.f32_slice(&p.data));
        self.accumulators.sq_grad.iter().for_each(|a| w.f32_slice(a));
        self.accumulators.sq_update.iter().for_each(|a| w.f32_slice(a));
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "IFNW");
        r.header(WEIGHTS_MAGIC, WEIGHTS_VERSION)?;
        let input_resolution = r.usize32()?;
        let n_conv = r.usize32()?;
        if n_conv > r.remaining() / 12 {
            return Err(Error::Truncated("IFNW"));
        }
        let conv = (0..n_conv)
            .map(|_| {
                Ok(ConvSpec {
                    out_channels: r.usize32()?,
                    kernel: r.usize32()?,
                    stride: r.usize32()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = NetworkSpec {
            input_resolution,
            conv,
            hidden: r.usize32()?,
            layout: ParamLayout::new(r.usize32()?, r.usize32()?, r.usize32()?),
            init_seed: r.u64()?,
        };
        let iteration = r.u64()?;
        spec.validate().map_err(|e| Error::Malformed {
            format: "IFNW",
            reason: e.to_string(),
        })?;
        let shapes = spec.param_shapes();
        let sizes: Vec<usize> = shapes.iter().map(|s| s.iter().product()).collect();
        if sizes.iter().sum::<usize>().saturating_mul(12) > r.remaining() {
            return Err(Error::Truncated("IFNW"));
        }
        let params = shapes
            .iter()
            .zip(&sizes)
            .map(|(s, &n)| Ok(Tensor::from_vec(s, r.f32_vec(n)?)))
            .collect::<Result<Vec<_>>>()?;
        let sq_grad = sizes.iter().map(|&n| r.f32_vec(n)).collect::<Result<Vec<_>>>()?;
        let sq_update = sizes.iter().map(|&n| r.f32_vec(n)).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Ok(Self {
            network: Network::from_params(spec, params)?,
            accumulators: Accumulators { sq_grad, sq_update },
            iteration,
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
