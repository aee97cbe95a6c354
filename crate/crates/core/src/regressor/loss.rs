//! Model-space loss: a diagonal quadratic form on parameter differences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face_model::FaceModel;
use crate::params::{ParamGroup, ParamLayout};

/// Per-group scale factors of the diagonal metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub rotation: f64,
    pub shape: f64,
    pub expression: f64,
    pub reflectance: f64,
    pub illumination: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rotation: 400.0,
            shape: 50.0,
            expression: 50.0,
            reflectance: 100.0,
            illumination: 20.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.rotation,
            self.shape,
            self.expression,
            self.reflectance,
            self.illumination,
        ];
        if all.iter().all(|w| w.is_finite() && *w > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidConfig("loss weights must be positive".into()))
        }
    }
}

/// `L = (p - t)^T S^T S (p - t)` with diagonal `S`, averaged over a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct LossMetric {
    /// Diagonal of `S`.
    pub diag: Vec<f64>,
}

impl LossMetric {
    /// Group weights times the per-mode standard deviations of `model`.
    pub fn weighted(model: &FaceModel, w: &LossWeights) -> Result<Self> {
        w.validate()?;
        let layout = model.layout();
        let mut diag = vec![0.0; layout.len()];
        for group in ParamGroup::ALL {
            let range = layout.range(group);
            let out = &mut diag[range];
            match group {
                ParamGroup::Rotation => out.fill(w.rotation),
                ParamGroup::Illumination => out.fill(w.illumination),
                ParamGroup::Shape => scale_into(out, w.shape, &model.shape_sigma),
                ParamGroup::Expression => scale_into(out, w.expression, &model.expr_sigma),
                ParamGroup::Reflectance => scale_into(out, w.reflectance, &model.refl_sigma),
            }
        }
        Ok(Self { diag })
    }

    /// Identity metric.
    pub fn euclidean(layout: ParamLayout) -> Self {
        Self {
            diag: vec![1.0; layout.len()],
        }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Loss of a single parameter pair.
    pub fn eval(&self, p: &[f64], t: &[f64]) -> Result<f64> {
        self.check(p.len())?;
        self.check(t.len())?;
        Ok(p.iter()
            .zip(t)
            .zip(&self.diag)
            .map(|((a, b), s)| (s * (a - b)).powi(2))
            .sum())
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::mismatch("loss parameter vector", self.dim(), len));
        }
        Ok(())
    }

    /// Batch-mean loss over row-major `[B, m]` predictions and targets, and
    /// its gradient `2 S^T S (p - t) / B` with respect to the predictions.
    pub fn batch<T: Copy + Into<f64>>(&self, pred: &[T], target: &[f32]) -> Result<(f64, Vec<f64>)> {
        let m = self.dim();
        if pred.len() != target.len() {
            return Err(Error::mismatch("loss batch", pred.len(), target.len()));
        }
        if m == 0 || !pred.len().is_multiple_of(m) || pred.is_empty() {
            return Err(Error::mismatch("loss batch width", m, pred.len()));
        }
        let b = (pred.len() / m) as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; pred.len()];
        for (i, (&p, &t)) in pred.iter().zip(target).enumerate() {
            let s2 = self.diag[i % m].powi(2);
            let d = p.into() - t as f64;
            loss += s2 * d * d;
            grad[i] = 2.0 * s2 * d / b;
        }
        Ok((loss / b, grad))
    }
}

fn scale_into(out: &mut [f64], w: f64, sigma: &[f32]) {
    for (o, s) in out.iter_mut().zip(sigma) {
        *o = w * *s as f64;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::face_model::{generate_model, ModelSpec};

    fn model() -> FaceModel {
        generate_model(&ModelSpec {
            n_shape: 5,
            n_expr: 3,
            n_refl: 4,
            mesh_grid: (12, 12),
            rng_seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn rotation_deviation() {
        let metric = LossMetric::weighted(&model(), &LossWeights::default()).unwrap();
        let t = vec![0.0; metric.dim()];
        let mut p = t.clone();
        p[0] = 0.01;
        let l = metric.eval(&p, &t).unwrap();
        assert!((l - (400.0f64 * 0.01).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn shape_weights_decrease_with_mode() {
        let m = model();
        let metric = LossMetric::weighted(&m, &LossWeights::default()).unwrap();
        let t = vec![0.0; metric.dim()];
        let mut prev = f64::INFINITY;
        for i in 0..5 {
            let mut p = t.clone();
            p[3 + i] = 0.3;
            let l = metric.eval(&p, &t).unwrap();
            let expected = (50.0 * m.shape_sigma[i] as f64 * 0.3).powi(2);
            assert!((l - expected).abs() < 1e-9 * expected);
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn zero_at_target_and_mismatch() {
        let metric = LossMetric::euclidean(ParamLayout::new(1, 1, 1));
        let t = vec![0.5f32; 2 * metric.dim()];
        let (l, g) = metric.batch(&t, &t).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(metric.batch(&t[1..], &t[1..]).is_err());
        assert!(metric.eval(&[0.0], &[0.0]).is_err());
    }

    #[test]
    fn batch_mean_and_gradient_scaling() {
        let metric = LossMetric {
            diag: vec![2.0, 3.0],
        };
        let p = [1.0f32, 0.0, 0.0, 1.0];
        let t = [0.0f32; 4];
        let (l, g) = metric.batch(&p, &t).unwrap();
        assert_eq!(l, (4.0 + 9.0) / 2.0);
        assert_eq!(g, [4.0, 0.0, 0.0, 9.0]);
    }

    #[test]
    fn rejects_non_positive_weights() {
        let w = LossWeights {
            shape: 0.0,
            ..LossWeights::default()
        };
        assert!(LossMetric::weighted(&model(), &w).is_err());
    }
}
