//! Adapting the regressor to an unlabeled target image distribution by
//! repeatedly reconstructing the targets, perturbing the reconstructions,
//! re-rendering them and fine-tuning on the resulting labeled pairs.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{stream_rng, CorpusShard, Record};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_state, EvalReport};
use crate::face_model::FaceModel;
use crate::image::RgbImage;
use crate::params::{ParamGroup, ParamLayout, ParameterVector};
use crate::regressor::{train, LossMetric, RegressorState, TrainConfig};
use crate::renderer::{render, CameraSpec};

/// Perturbation scales. Rotation is uniform in degrees; the rest are Gaussian std devs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub rotation_deg: f64,
    pub shape: f64,
    pub expression: f64,
    pub reflectance: f64,
    pub illumination: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            rotation_deg: 5.0,
            shape: 0.05,
            expression: 0.1,
            reflectance: 0.2,
            illumination: 0.02,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BreedingConfig {
    pub warmup_iterations: usize,
    pub n_breed: usize,
    pub finetune_iterations: usize,
    pub perturbations_per_seed: usize,
    pub noise: NoiseSpec,
    pub rng_seed: u64,
    /// Records taken from the end of the target shard for per-round evaluation
    /// (used by the command line front end).
    pub holdout_count: usize,
}

impl Default for BreedingConfig {
    fn default() -> Self {
        Self {
            warmup_iterations: 1000,
            n_breed: 4,
            finetune_iterations: 500,
            perturbations_per_seed: 2,
            noise: NoiseSpec::default(),
            rng_seed: 13,
            holdout_count: 200,
        }
    }
}

impl BreedingConfig {
    pub fn validate(&self) -> Result<()> {
        let n = &self.noise;
        let scales = [n.rotation_deg, n.shape, n.expression, n.reflectance, n.illumination];
        if scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidConfig("noise scales must be non-negative".into()));
        }
        if self.perturbations_per_seed == 0 {
            return Err(Error::InvalidConfig("perturbations_per_seed must be positive".into()));
        }
        Ok(())
    }
}

/// Predicted parameters for every target image. Only the images are read.
pub fn infer_corpus(state: &RegressorState, target: &CorpusShard) -> Result<Vec<Vec<f32>>> {
    if target.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let images: Vec<&RgbImage> = target.records.iter().map(|r| &r.image).collect();
    state.predict(&images)
}

/// Perturbs one seed vector; replicate `k` of record `i` in `round` always
/// receives the same noise.
pub fn perturb_one(
    seed: &ParameterVector,
    noise: &NoiseSpec,
    rng_seed: u64,
    round: u64,
    record: u64,
    replicate: u64,
) -> ParameterVector {
    let mut rng = stream_rng(rng_seed ^ round.wrapping_mul(0x2545_f491_4f6c_dd1d), record, replicate);
    let mut out = seed.clone();
    let gaussian = |std: f64| Normal::new(0.0, std).unwrap();
    for group in ParamGroup::ALL {
        let values = out.group_mut(group);
        if group == ParamGroup::Rotation {
            let r = noise.rotation_deg.to_radians();
            for v in values {
                if r > 0.0 {
                    *v += rng.gen_range(-r..=r);
                }
            }
            continue;
        }
        let std = match group {
            ParamGroup::Shape => noise.shape,
            ParamGroup::Expression => noise.expression,
            ParamGroup::Reflectance => noise.reflectance,
            _ => noise.illumination,
        };
        if std > 0.0 {
            let d = gaussian(std);
            values.iter_mut().for_each(|v| *v += d.sample(&mut rng));
        }
    }
    out.quantized()
}

/// `per_seed` perturbed copies of every seed row, replicate-minor.
pub fn perturb(
    seeds: &[Vec<f32>],
    layout: ParamLayout,
    config: &BreedingConfig,
    round: u64,
) -> Result<Vec<ParameterVector>> {
    let mut out = Vec::with_capacity(seeds.len() * config.perturbations_per_seed);
    for (i, row) in seeds.iter().enumerate() {
        let seed = ParameterVector::from_f32(layout, row)?;
        for k in 0..config.perturbations_per_seed {
            out.push(perturb_one(&seed, &config.noise, config.rng_seed, round, i as u64, k as u64));
        }
    }
    Ok(out)
}

/// Renders labeled pairs for `params`; vectors that cannot be rendered are dropped.
pub fn synthesize(
    model: &FaceModel,
    camera: &CameraSpec,
    params: &[ParameterVector],
    global_seed: u64,
) -> Result<CorpusShard> {
    let records: Vec<Record> = params
        .par_iter()
        .filter_map(|theta| {
            render(model, camera, theta).ok().map(|s| Record {
                params: theta.to_f32(),
                image: s.image,
                mask: s.mask,
            })
        })
        .collect();
    CorpusShard::from_records(
        model.layout().len(),
        camera.image_width,
        camera.image_height,
        global_seed,
        records,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    /// Mean fine-tuning loss over the round's final trace window.
    pub finetune_loss: f64,
    pub eval: Option<EvalReport>,
}

pub fn rounds_csv(rounds: &[RoundMetrics]) -> String {
    let mut s = String::from("round,weighted_loss,photometric,geometric,iou\n");
    for r in rounds {
        match &r.eval {
            Some(e) => writeln!(
                s,
                "{},{},{},{},{}",
                r.round, e.weighted_loss.mean, e.photometric.mean, e.geometric.mean, e.iou.mean
            ),
            None => writeln!(s, "{},,,,", r.round),
        }
        .unwrap();
    }
    s
}

pub fn save_rounds_csv(rounds: &[RoundMetrics], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, rounds_csv(rounds))?;
    Ok(())
}

/// Everything a breeding run needs besides the state and the target.
pub struct BreedingContext<'a> {
    pub model: &'a FaceModel,
    pub camera: &'a CameraSpec,
    pub metric: &'a LossMetric,
    pub train: &'a TrainConfig,
    pub config: &'a BreedingConfig,
}

/// One round: infer, perturb, re-render, fine-tune. Returns the bred corpus
/// and the mean loss of the last fine-tuning trace window.
pub fn breed_round(
    state: &mut RegressorState,
    target: &CorpusShard,
    ctx: &BreedingContext,
    round: usize,
) -> Result<(CorpusShard, f64)> {
    let seeds = infer_corpus(state, target)?;
    let params = perturb(&seeds, ctx.model.layout(), ctx.config, round as u64)?;
    let bred = synthesize(ctx.model, ctx.camera, &params, ctx.config.rng_seed)?;
    let trace = train(state, &bred, ctx.metric, ctx.train, ctx.config.finetune_iterations)
        .map_err(|e| match e {
            Error::NonFiniteGradient(_) => Error::NonFiniteLoss { round },
            other => other,
        })?;
    let last = trace.rows.last().map_or(f64::NAN, |r| r.1);
    Ok((bred, last))
}

/// Runs `config.n_breed` rounds, each replacing the previous bred corpus.
/// `holdout` is only used to report metrics after every round.
pub fn breed(
    state: &mut RegressorState,
    target: &CorpusShard,
    ctx: &BreedingContext,
    holdout: Option<&CorpusShard>,
    mut on_round: impl FnMut(&RoundMetrics, &CorpusShard),
) -> Result<Vec<RoundMetrics>> {
    ctx.config.validate()?;
    target.ensure_m(ctx.model.layout().len())?;
    if state.iteration < ctx.config.warmup_iterations as u64 {
        return Err(Error::NotWarmedUp {
            iterations: state.iteration,
            required: ctx.config.warmup_iterations,
        });
    }
    let mut rounds = Vec::with_capacity(ctx.config.n_breed);
    for round in 0..ctx.config.n_breed {
        let (bred, finetune_loss) = breed_round(state, target, ctx, round)?;
        let eval = holdout
            .map(|h| evaluate_state(state, ctx.model, ctx.camera, h, ctx.metric))
            .transpose()?;
        let metrics = RoundMetrics {
            round: round + 1,
            finetune_loss,
            eval,
        };
        on_round(&metrics, &bred);
        rounds.push(metrics);
    }
    Ok(rounds)
}
