//! Reconstruction error measures and aggregate reports.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::CorpusShard;
use crate::error::{Error, Result};
use crate::face_model::FaceModel;
use crate::image::{Mask, RgbImage};
use crate::params::ParameterVector;
use crate::regressor::{LossMetric, RegressorState};
use crate::renderer::{render, CameraSpec};

/// RGB RMSE in 8-bit units over the pixels inside `mask`.
pub fn photometric_error(input: &RgbImage, mask: &Mask, predicted: &RgbImage) -> Result<f64> {
    if input.width != predicted.width || input.height != predicted.height {
        return Err(Error::mismatch("image width", input.width, predicted.width));
    }
    if mask.width != input.width || mask.height != input.height {
        return Err(Error::mismatch("mask width", input.width, mask.width));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, _) in mask.bits.iter().enumerate().filter(|(_, &b)| b) {
        for c in 0..3 {
            let d = input.data[3 * i + c] as f64 - predicted.data[3 * i + c] as f64;
            sum += d * d;
        }
        n += 3;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok((sum / n as f64).sqrt())
}

/// RMSE in mm over per-vertex distances between two unposed geometries.
pub fn geometric_error(model: &FaceModel, truth: &ParameterVector, pred: &ParameterVector) -> Result<f64> {
    let a = model.evaluate_geometry(truth)?;
    let b = model.evaluate_geometry(pred)?;
    let sq: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sq / model.n_vertices() as f64).sqrt())
}

/// Intersection over union in percent; 100 when both masks are empty.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::mismatch("mask width", a.width, b.width));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 {
        100.0
    } else {
        100.0 * inter as f64 / union as f64
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleMetrics {
    pub weighted_loss: f64,
    pub photometric: f64,
    pub geometric: f64,
    pub iou: f64,
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count().max(1) as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub samples: Vec<SampleMetrics>,
    pub weighted_loss: Stat,
    pub photometric: Stat,
    pub geometric: Stat,
    pub iou: Stat,
}

impl EvalReport {
    fn from_samples(samples: Vec<SampleMetrics>) -> Self {
        let s = &samples;
        Self {
            weighted_loss: Stat::of(s.iter().map(|m| m.weighted_loss)),
            photometric: Stat::of(s.iter().map(|m| m.photometric)),
            geometric: Stat::of(s.iter().map(|m| m.geometric)),
            iou: Stat::of(s.iter().map(|m| m.iou)),
            samples,
        }
    }

    /// One row per sample, then `mean` and `std` footer rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("sample,weighted_loss,photometric,geometric,iou\n");
        for (i, m) in self.samples.iter().enumerate() {
            writeln!(s, "{i},{},{},{},{}", m.weighted_loss, m.photometric, m.geometric, m.iou).unwrap();
        }
        let stats = [self.weighted_loss, self.photometric, self.geometric, self.iou];
        writeln!(s, "mean,{}", stats.map(|t| t.mean.to_string()).join(",")).unwrap();
        writeln!(s, "std,{}", stats.map(|t| t.std.to_string()).join(",")).unwrap();
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        format!(
            "samples: {}\n\
             photometric error (8-bit RMSE): {:.2} ± {:.2}\n\
             geometric error (mm RMSE):      {:.3} ± {:.3}\n\
             IOU (%):                        {:.2} ± {:.2}\n\
             weighted model-space loss:      {:.1} ± {:.1}\n",
            self.samples.len(),
            self.photometric.mean,
            self.photometric.std,
            self.geometric.mean,
            self.geometric.std,
            self.iou.mean,
            self.iou.std,
            self.weighted_loss.mean,
            self.weighted_loss.std,
        )
    }
}

/// Scores `predictions` (one row per record) against the ground truth stored
/// in `shard`. A prediction that cannot be rendered scores as a black image
/// with an empty mask.
pub fn evaluate(
    model: &FaceModel,
    camera: &CameraSpec,
    shard: &CorpusShard,
    predictions: &[Vec<f32>],
    metric: &LossMetric,
) -> Result<EvalReport> {
    if shard.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if predictions.len() != shard.len() {
        return Err(Error::mismatch("predictions", shard.len(), predictions.len()));
    }
    let layout = model.layout();
    shard.ensure_m(layout.len())?;
    let samples = shard
        .records
        .par_iter()
        .zip(predictions)
        .map(|(rec, pred)| {
            let truth = rec.parameters(layout)?;
            let pred = ParameterVector::from_f32(layout, pred)?;
            let (image, mask) = match render(model, camera, &pred) {
                Ok(s) => (s.image, s.mask),
                Err(_) => (
                    RgbImage::black(camera.image_width, camera.image_height),
                    Mask::empty(camera.image_width, camera.image_height),
                ),
            };
            Ok(SampleMetrics {
                weighted_loss: metric.eval(pred.as_slice(), truth.as_slice())?,
                photometric: photometric_error(&rec.image, &rec.mask, &image)?,
                geometric: geometric_error(model, &truth, &pred)?,
                iou: iou(&rec.mask, &mask)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_samples(samples))
}

/// Runs the regressor over `shard` and scores its predictions.
pub fn evaluate_state(
    state: &RegressorState,
    model: &FaceModel,
    camera: &CameraSpec,
    shard: &CorpusShard,
    metric: &LossMetric,
) -> Result<EvalReport> {
    let images: Vec<&RgbImage> = shard.records.iter().map(|r| &r.image).collect();
    evaluate(model, camera, shard, &state.predict(&images)?, metric)
}

/// Per-dimension mean of the stored parameters, the constant-predictor baseline.
pub fn mean_parameters(shard: &CorpusShard) -> Result<Vec<f32>> {
    if shard.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut sum = vec![0f64; shard.header.m];
    for r in &shard.records {
        sum.iter_mut().zip(&r.params).for_each(|(s, &v)| *s += v as f64);
    }
    Ok(sum.iter().map(|s| (s / shard.len() as f64) as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full(w: usize, h: usize) -> Mask {
        Mask {
            width: w,
            height: h,
            bits: vec![true; w * h],
        }
    }

    #[test]
    fn photometric_extremes() {
        let black = RgbImage::black(3, 2);
        let white = RgbImage::from_raw(3, 2, vec![255; 18]).unwrap();
        assert_eq!(photometric_error(&black, &full(3, 2), &white).unwrap(), 255.0);
        assert_eq!(photometric_error(&black, &full(3, 2), &black).unwrap(), 0.0);
        let plus = RgbImage::from_raw(3, 2, vec![10; 18]).unwrap();
        assert_eq!(photometric_error(&black, &full(3, 2), &plus).unwrap(), 10.0);
        assert!(matches!(
            photometric_error(&black, &Mask::empty(3, 2), &white),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn photometric_only_counts_masked_pixels() {
        let a = RgbImage::black(2, 1);
        let mut b = RgbImage::black(2, 1);
        b.set_pixel(1, 0, [255, 255, 255]);
        let mask = Mask {
            width: 2,
            height: 1,
            bits: vec![true, false],
        };
        assert_eq!(photometric_error(&a, &mask, &b).unwrap(), 0.0);
    }

    #[test]
    fn iou_cases() {
        let f = full(4, 4);
        let mut top = Mask::empty(4, 4);
        top.bits[..8].fill(true);
        let mut bottom = Mask::empty(4, 4);
        bottom.bits[8..].fill(true);
        assert_eq!(iou(&f, &f).unwrap(), 100.0);
        assert_eq!(iou(&top, &f).unwrap(), 50.0);
        assert_eq!(iou(&top, &bottom).unwrap(), 0.0);
        assert_eq!(iou(&Mask::empty(4, 4), &Mask::empty(4, 4)).unwrap(), 100.0);
        assert!(iou(&f, &full(4, 3)).is_err());
    }

    #[test]
    fn population_std() {
        let s = Stat::of([1.0, 3.0].into_iter());
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
    }
}
