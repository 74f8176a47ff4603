//! TOML experiment configuration: one file describes the synthetic task,
//! the victim, pretraining, the extraction loop, and the campaign grid.
//! Unknown keys are rejected; omitted keys take defaults.

use crate::data::Regime;
use crate::error::{Error, Result};
use crate::extraction::Selector;
use crate::nn::arch::ARCH_NAMES;
use crate::oracle::ResponseMode;
use crate::ssl::{SslConfig, SslMethod};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub task: TaskConfig,
    pub victim: VictimConfig,
    pub pretrain: SslConfig,
    pub extraction: ExtractionSection,
    pub campaign: CampaignSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub num_classes: usize,
    /// (channels, height, width)
    pub image_shape: Vec<usize>,
    pub victim_per_class: usize,
    pub proxy_per_class: usize,
    pub test_per_class: usize,
    pub regime: Regime,
    /// Price per charged query, in campaign currency units.
    pub unit_price: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VictimConfig {
    pub arch: String,
    pub latent_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub mode: ResponseMode,
    /// Classes returned per query in top-k mode.
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractionSection {
    pub itera: u32,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub head_reinit: bool,
    pub encoder_finetune: bool,
    pub selector: Selector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignSection {
    pub methods: Vec<String>,
    pub budgets: Vec<u64>,
    pub seeds: Vec<u64>,
    /// When non-empty, the largest-budget substitute of each method is
    /// swept over these perturbation steps.
    pub epsilons: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            task: TaskConfig::default(),
            victim: VictimConfig::default(),
            pretrain: SslConfig::default(),
            extraction: ExtractionSection::default(),
            campaign: CampaignSection::default(),
        }
    }
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            num_classes: 8,
            image_shape: vec![1, 16, 16],
            victim_per_class: 40,
            proxy_per_class: 60,
            test_per_class: 12,
            regime: Regime::Iid,
            unit_price: 0.002,
        }
    }
}

impl Default for VictimConfig {
    fn default() -> Self {
        VictimConfig {
            arch: "cnn-s".into(),
            latent_dim: 32,
            learning_rate: 0.2,
            batch_size: 16,
            epochs: 30,
            mode: ResponseMode::TopkPosterior,
            // clipped to num_classes at serving time: full posterior
            k: 1_000_000,
        }
    }
}

impl Default for ExtractionSection {
    fn default() -> Self {
        ExtractionSection {
            itera: 4,
            learning_rate: 0.2,
            batch_size: 16,
            epochs: 30,
            head_reinit: true,
            encoder_finetune: true,
            selector: Selector::Entropy,
        }
    }
}

impl Default for CampaignSection {
    fn default() -> Self {
        CampaignSection {
            methods: vec!["rs".into(), "simclr".into()],
            budgets: vec![100, 200, 400],
            seeds: vec![0, 1, 2, 3, 4],
            epsilons: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "schema_version {} unsupported, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        let t = &self.task;
        if t.num_classes < 2 {
            return Err(Error::InvalidConfig("task.num_classes must be at least 2".into()));
        }
        if t.image_shape.len() != 3 {
            return Err(Error::InvalidConfig(format!(
                "task.image_shape must be (channels, height, width), got {:?}",
                t.image_shape
            )));
        }
        for (name, n) in [
            ("victim_per_class", t.victim_per_class),
            ("proxy_per_class", t.proxy_per_class),
            ("test_per_class", t.test_per_class),
        ] {
            if n == 0 {
                return Err(Error::InvalidConfig(format!("task.{name} must be positive")));
            }
        }
        if !(t.unit_price >= 0.0 && t.unit_price.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "task.unit_price must be non-negative, got {}",
                t.unit_price
            )));
        }
        let v = &self.victim;
        if !ARCH_NAMES.contains(&v.arch.as_str()) {
            return Err(Error::InvalidConfig(format!(
                "victim.arch '{}' unknown, known: {ARCH_NAMES:?}",
                v.arch
            )));
        }
        if v.latent_dim == 0 || v.batch_size == 0 || v.epochs == 0 {
            return Err(Error::InvalidConfig(
                "victim latent_dim, batch_size and epochs must be positive".into(),
            ));
        }
        if v.learning_rate <= 0.0 || !v.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "victim.learning_rate must be positive, got {}",
                v.learning_rate
            )));
        }
        if v.mode == ResponseMode::TopkPosterior && v.k == 0 {
            return Err(Error::InvalidConfig("victim.k must be at least 1".into()));
        }
        self.pretrain.validate()?;
        let e = &self.extraction;
        if e.itera == 0 || e.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "extraction itera and batch_size must be positive".into(),
            ));
        }
        if e.learning_rate <= 0.0 || !e.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "extraction.learning_rate must be positive, got {}",
                e.learning_rate
            )));
        }
        let c = &self.campaign;
        if c.methods.is_empty() || c.budgets.is_empty() || c.seeds.is_empty() {
            return Err(Error::InvalidConfig(
                "campaign methods, budgets and seeds must be non-empty".into(),
            ));
        }
        for m in &c.methods {
            m.parse::<SslMethod>()?;
        }
        let pool = (t.num_classes * t.proxy_per_class) as u64;
        for &b in &c.budgets {
            if b == 0 || b % e.itera as u64 != 0 {
                return Err(Error::InvalidConfig(format!(
                    "budget {b} is not divisible into {} rounds",
                    e.itera
                )));
            }
            if b > pool {
                return Err(Error::InvalidConfig(format!(
                    "budget {b} exceeds the proxy pool of {pool}"
                )));
            }
        }
        let mut seeds = c.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != c.seeds.len() {
            return Err(Error::InvalidConfig("campaign.seeds contains duplicates".into()));
        }
        for &eps in &c.epsilons {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "epsilon {eps} must be positive"
                )));
            }
        }
        Ok(())
    }

    pub fn methods(&self) -> Result<Vec<SslMethod>> {
        self.campaign.methods.iter().map(|m| m.parse()).collect()
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg: ExperimentConfig = toml::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn empty_toml_takes_all_defaults() {
        let cfg: ExperimentConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("warp_speed = 9\n").is_err());
        assert!(toml::from_str::<ExperimentConfig>("[task]\nwarp_speed = 9\n").is_err());
    }

    #[test]
    fn indivisible_budget_is_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.campaign.budgets = vec![101];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn budget_above_pool_is_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.campaign.budgets = vec![100_000];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_method_name_is_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.campaign.methods = vec!["distillation".into()];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
