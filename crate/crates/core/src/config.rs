//! JSON experiment configuration tying every stage together.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::breeding::BreedingConfig;
use crate::corpus::PriorSpec;
use crate::error::{Error, Result};
use crate::face_model::{FaceModel, ModelSpec};
use crate::regressor::{LossMetric, LossWeights, NetworkSpec, TrainConfig};
use crate::renderer::CameraSpec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Per-dimension weights from the group factors and mode deviations.
    #[default]
    Weighted,
    /// Identity metric.
    Euclidean,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    pub weights: LossWeights,
}

impl LossConfig {
    pub fn metric(&self, model: &FaceModel) -> Result<LossMetric> {
        match self.kind {
            LossKind::Weighted => LossMetric::weighted(model, &self.weights),
            LossKind::Euclidean => Ok(LossMetric::euclidean(model.layout())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub camera: CameraSpec,
    pub base_prior: PriorSpec,
    pub target_prior: PriorSpec,
    pub network: NetworkSpec,
    pub training: TrainConfig,
    pub loss: LossConfig,
    pub breeding: BreedingConfig,
    /// When set, replaces every component seed with one derived from it.
    pub seed: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let model = ModelSpec::desk();
        Self {
            model,
            camera: CameraSpec::default(),
            base_prior: PriorSpec::default(),
            target_prior: PriorSpec::shifted_target(2),
            network: NetworkSpec::desk(model.layout()),
            training: TrainConfig::default(),
            loss: LossConfig::default(),
            breeding: BreedingConfig::default(),
            seed: None,
        }
    }
}

fn derive_seed(global: u64, component: u64) -> u64 {
    let mut rng = crate::corpus::stream_rng(global, component, 0);
    rand::RngCore::next_u64(&mut rng)
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut config: Self = serde_json::from_str(text)?;
        config.resolve();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Binds the network output to the model and applies the global seed.
    pub fn resolve(&mut self) {
        self.network.layout = self.model.layout();
        if let Some(g) = self.seed {
            self.model.rng_seed = derive_seed(g, 1);
            self.base_prior.rng_seed = derive_seed(g, 2);
            self.target_prior.rng_seed = derive_seed(g, 3);
            self.network.init_seed = derive_seed(g, 4);
            self.training.seed = derive_seed(g, 5);
            self.breeding.rng_seed = derive_seed(g, 6);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.camera.validate()?;
        self.base_prior.validate()?;
        self.target_prior.validate()?;
        self.network.validate()?;
        if self.network.layout != self.model.layout() {
            return Err(Error::mismatch(
                "network output",
                self.model.layout().len(),
                self.network.output(),
            ));
        }
        self.training.validate()?;
        self.loss.weights.validate()?;
        self.breeding.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_desk_default() {
        let c = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.network.output(), 70);
    }

    #[test]
    fn json_round_trip() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn network_follows_model() {
        let c = ExperimentConfig::from_json(r#"{"model": {"n_shape": 4}}"#).unwrap();
        assert_eq!(c.network.output(), 3 + 4 + 8 + 16 + 27);
    }

    #[test]
    fn global_seed_overrides_components() {
        let a = ExperimentConfig::from_json(r#"{"seed": 1}"#).unwrap();
        let b = ExperimentConfig::from_json(r#"{"seed": 2}"#).unwrap();
        assert_ne!(a.model.rng_seed, b.model.rng_seed);
        assert_ne!(a.base_prior.rng_seed, a.target_prior.rng_seed);
        assert_eq!(a, ExperimentConfig::from_json(r#"{"seed": 1}"#).unwrap());
    }

    #[test]
    fn rejects_bad_sections() {
        assert!(ExperimentConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"camera": {"vertical_fov": 0}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"training": {"batch_size": 0}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"loss": {"kind": "l1"}}"#).is_err());
    }
}
