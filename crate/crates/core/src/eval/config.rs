use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::method::Method;
use super::record::Setting;
use crate::corruption::{
    CorruptionConfig, CorruptionStrategy, DonorSource, IndexSelection, IndexSharing, MarginalSupport, ViewPolicy,
};
use crate::data::ScalingKind;
use crate::error::{Result, ScarfError};
use crate::nn::AdamConfig;
use crate::training::{
    ArchConfig, AutoencoderVariant, CotrainConfig, CotrainObjective, FinetuneConfig, PretrainConfig, PretrainLoss,
    ValidationMetric,
};

/// Flat experiment configuration. Every key has a default, so an empty file
/// is valid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub dataset_id: Option<String>,
    pub method: String,
    pub setting: Setting,
    pub trials: usize,
    pub seed: u64,
    pub jobs: usize,
    pub out: PathBuf,

    pub scaling: ScalingKind,
    pub hidden_width: usize,
    pub encoder_layers: usize,
    pub head_layers: usize,
    pub embedding_width: usize,

    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub patience: usize,
    pub pretrain_max_epochs: usize,
    pub finetune_max_epochs: usize,
    pub val_build_epochs: usize,

    pub temperature: f64,
    pub corruption_rate: f64,
    pub corruption_strategy: CorruptionStrategy,
    pub index_selection: IndexSelection,
    pub view_policy: ViewPolicy,
    pub index_sharing: IndexSharing,
    pub donor: DonorSource,
    pub gaussian_sigma: f64,
    pub marginal_support: MarginalSupport,
    pub pretrain_loss: PretrainLoss,
    pub validation_metric: ValidationMetric,
    pub barlow_lambda: f64,
    pub align_weight: f64,
    pub uniform_weight: f64,
    pub uniform_cross_pairs: bool,

    pub label_smoothing: f64,
    pub dropout: f64,
    pub mixup_alpha: f64,
    pub self_train_threshold: f64,
    pub self_train_iterations: usize,
    pub tri_train_iterations: usize,
    pub cotrain_lambda: f64,
    pub cotrain_ae_variant: AutoencoderVariant,

    pub label_noise: f64,
    pub labeled_fraction: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let arch = ArchConfig::default();
        let adam = AdamConfig::default();
        let pre = PretrainConfig::default();
        let c = CorruptionConfig::default();
        Self {
            dataset: None,
            schema: None,
            dataset_id: None,
            method: "control".into(),
            setting: Setting::Full,
            trials: 30,
            seed: 0,
            jobs: 1,
            out: PathBuf::from("out"),
            scaling: ScalingKind::Zscore,
            hidden_width: arch.hidden_width,
            encoder_layers: arch.encoder_layers,
            head_layers: arch.head_layers,
            embedding_width: arch.embedding_width,
            batch_size: 128,
            learning_rate: adam.learning_rate,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_epsilon: adam.epsilon,
            patience: 3,
            pretrain_max_epochs: 1000,
            finetune_max_epochs: 200,
            val_build_epochs: 10,
            temperature: pre.temperature,
            corruption_rate: c.rate,
            corruption_strategy: c.strategy,
            index_selection: c.index_selection,
            view_policy: c.view_policy,
            index_sharing: c.index_sharing,
            donor: c.donor,
            gaussian_sigma: c.gaussian_sigma,
            marginal_support: c.marginal_support,
            pretrain_loss: pre.loss,
            validation_metric: pre.validation_metric,
            barlow_lambda: pre.barlow_lambda,
            align_weight: pre.align_weight,
            uniform_weight: pre.uniform_weight,
            uniform_cross_pairs: pre.uniform_cross_pairs,
            label_smoothing: 0.1,
            dropout: 0.04,
            mixup_alpha: 0.2,
            self_train_threshold: 0.75,
            self_train_iterations: 10,
            tri_train_iterations: 10,
            cotrain_lambda: 0.1,
            cotrain_ae_variant: AutoencoderVariant::NoNoise,
            label_noise: 0.3,
            labeled_fraction: 0.25,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ScarfError::Config(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ScarfError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| ScarfError::Config(format!("config: {e}")))
    }

    pub fn parsed_method(&self) -> Result<Method> {
        self.method.parse()
    }

    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            hidden_width: self.hidden_width,
            encoder_layers: self.encoder_layers,
            head_layers: self.head_layers,
            embedding_width: self.embedding_width,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn corruption(&self) -> CorruptionConfig {
        CorruptionConfig {
            strategy: self.corruption_strategy,
            rate: self.corruption_rate,
            index_selection: self.index_selection,
            view_policy: self.view_policy,
            index_sharing: self.index_sharing,
            donor: self.donor,
            gaussian_sigma: self.gaussian_sigma,
            marginal_support: self.marginal_support,
        }
    }

    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            batch_size: self.batch_size,
            temperature: self.temperature,
            corruption: self.corruption(),
            max_epochs: self.pretrain_max_epochs,
            patience: self.patience,
            val_build_epochs: self.val_build_epochs,
            loss: self.pretrain_loss,
            validation_metric: self.validation_metric,
            barlow_lambda: self.barlow_lambda,
            align_weight: self.align_weight,
            uniform_weight: self.uniform_weight,
            uniform_cross_pairs: self.uniform_cross_pairs,
            adam: self.adam(),
        }
    }

    /// Fine-tuning settings with the regularizers `method` asks for.
    pub fn finetune(&self, method: &Method) -> FinetuneConfig {
        FinetuneConfig {
            batch_size: self.batch_size,
            max_epochs: self.finetune_max_epochs,
            patience: self.patience,
            label_smoothing: if method.label_smoothing { self.label_smoothing } else { 0.0 },
            dropout: if method.dropout { self.dropout } else { 0.0 },
            mixup_alpha: method.mixup.then_some(self.mixup_alpha),
            scarf_augmentation: method.scarf_augmentation,
            augmentation: CorruptionConfig {
                view_policy: ViewPolicy::CorruptOne,
                ..self.corruption()
            },
            adam: self.adam(),
        }
    }

    pub fn cotrain(&self, objective: CotrainObjective) -> CotrainConfig {
        CotrainConfig {
            lambda: self.cotrain_lambda,
            objective,
        }
    }

    /// Checks everything that can be checked without data.
    pub fn validate(&self) -> Result<()> {
        let method = self.parsed_method()?;
        if self.trials == 0 {
            return Err(ScarfError::Config("trials must be at least 1".into()));
        }
        if self.jobs == 0 {
            return Err(ScarfError::Config("jobs must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(ScarfError::Config(format!("label_noise must lie in [0, 1], got {}", self.label_noise)));
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return Err(ScarfError::Config(format!(
                "labeled_fraction must lie in (0, 1], got {}",
                self.labeled_fraction
            )));
        }
        if !(self.self_train_threshold > 0.0 && self.self_train_threshold <= 1.0) {
            return Err(ScarfError::Config(format!(
                "self_train_threshold must lie in (0, 1], got {}",
                self.self_train_threshold
            )));
        }
        if !(self.cotrain_lambda >= 0.0) {
            return Err(ScarfError::Config("cotrain_lambda must be non-negative".into()));
        }
        self.pretrain().validate()?;
        self.finetune(&method).validate()?;
        let arch = self.arch();
        if arch.hidden_width == 0 || arch.embedding_width == 0 || arch.encoder_layers == 0 || arch.head_layers == 0 {
            return Err(ScarfError::Config("network sizes must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!((c.batch_size, c.patience, c.trials), (128, 3, 30));
        assert_eq!(c.pretrain().corruption.rate, 0.6);
        c.validate().unwrap();
    }

    #[test]
    fn round_trips_through_toml() {
        let c = ExperimentConfig {
            method: "scarf+mixup".into(),
            setting: Setting::Semi25,
            dataset: Some("a.csv".into()),
            ..ExperimentConfig::default()
        };
        let text = c.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
        let c = ExperimentConfig::from_toml_str("corruption_rate = 1.5").unwrap();
        assert!(c.validate().is_err());
        let c = ExperimentConfig::from_toml_str("method = \"nope\"").unwrap();
        assert!(c.validate().is_err());
    }
}
