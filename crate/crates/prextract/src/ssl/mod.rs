//! Encoder pretraining on the unlabeled proxy pool.
//!
//! Five strategies produce an [`EncoderArtifact`]: random initialization,
//! plain and denoising autoencoders, momentum-contrast, and in-batch
//! contrastive pretraining. The artifact carries only `enc.*` parameters
//! plus provenance (proxy hash, seed, config, final loss) and round-trips
//! through a binary checkpoint with a JSON sidecar.

pub mod augment;
pub mod autoencoder;
pub mod losses;
pub mod moco;
pub mod simclr;

pub use augment::{augment, AugmentConfig};

use crate::data::{dataset_hash, Sample};
use crate::error::{Error, Result};
use crate::model::ENCODER_PREFIX;
use crate::nn::arch::{encoder, ARCH_NAMES};
use crate::nn::{checkpoint, Network, ParamSet};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SslMethod {
    /// Random initialization, no pretraining.
    Rs,
    /// Basic autoencoder: reconstruct the clean input.
    Bae,
    /// Denoising autoencoder: reconstruct from block-masked input.
    Dae,
    /// Momentum contrast with a FIFO key queue.
    Moco,
    /// In-batch contrastive pretraining over augmented view pairs.
    Simclr,
}

pub const SSL_METHOD_NAMES: &[&str] = &["rs", "bae", "dae", "moco", "simclr"];

impl SslMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            SslMethod::Rs => "rs",
            SslMethod::Bae => "bae",
            SslMethod::Dae => "dae",
            SslMethod::Moco => "moco",
            SslMethod::Simclr => "simclr",
        }
    }
}

impl FromStr for SslMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rs" => Ok(SslMethod::Rs),
            "bae" => Ok(SslMethod::Bae),
            "dae" => Ok(SslMethod::Dae),
            "moco" => Ok(SslMethod::Moco),
            "simclr" => Ok(SslMethod::Simclr),
            other => Err(Error::InvalidArgument(format!(
                "unknown pretraining method '{other}', known: {SSL_METHOD_NAMES:?}"
            ))),
        }
    }
}

/// Pretraining hyper-parameters shared by every strategy; each trainer
/// reads the fields it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SslConfig {
    pub arch: String,
    pub latent_dim: usize,
    /// Contrastive temperature.
    pub tau: f64,
    /// Key-encoder momentum.
    pub momentum: f64,
    /// FIFO queue length of detached key embeddings.
    pub queue_size: usize,
    /// Block-mask area fraction for denoising pretraining.
    pub noise_level: f64,
    /// Samples per batch (pairs of views for contrastive trainers).
    pub batch_n: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl Default for SslConfig {
    fn default() -> Self {
        SslConfig {
            arch: "cnn-s".into(),
            latent_dim: 64,
            tau: 0.5,
            // desk-scale timescales: with only ~1-2k optimizer steps per
            // run, a 0.999 momentum would leave the key encoder frozen
            momentum: 0.99,
            queue_size: 256,
            noise_level: 0.3,
            batch_n: 16,
            epochs: 10,
            learning_rate: 0.01,
            seed: 0,
            augment: AugmentConfig::default(),
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        if !ARCH_NAMES.contains(&self.arch.as_str()) {
            return Err(Error::InvalidConfig(format!(
                "unknown architecture '{}', known: {ARCH_NAMES:?}",
                self.arch
            )));
        }
        if self.latent_dim == 0 {
            return Err(Error::InvalidConfig("latent_dim must be positive".into()));
        }
        if self.tau <= 0.0 || !self.tau.is_finite() {
            return Err(Error::InvalidConfig(format!("tau must be positive, got {}", self.tau)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.queue_size == 0 {
            return Err(Error::InvalidConfig("queue_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::InvalidConfig(format!(
                "noise_level must be in [0, 1], got {}",
                self.noise_level
            )));
        }
        if self.batch_n == 0 {
            return Err(Error::InvalidConfig("batch_n must be positive".into()));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        self.augment.validate()
    }
}

/// Provenance of one pretraining run. `final_loss` is the last epoch's
/// mean objective; absent for random initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub proxy_hash: String,
    pub seed: u64,
    pub final_loss: Option<f64>,
    pub config: SslConfig,
}

/// A pretrained encoder: `enc.*` parameters only, ready to be assembled
/// under a fresh classification head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderArtifact {
    pub method: SslMethod,
    pub arch: String,
    pub input_shape: Vec<usize>,
    pub latent_dim: usize,
    pub params: ParamSet,
    pub provenance: Provenance,
}

impl EncoderArtifact {
    /// The encoder must compress: latent dimension strictly below the
    /// flat input dimension. Parameters must be exactly the `enc.*` set
    /// of the named architecture.
    pub fn validate(&self) -> Result<()> {
        let flat: usize = self.input_shape.iter().product();
        if self.latent_dim >= flat {
            return Err(Error::InvalidArgument(format!(
                "latent_dim {} does not compress a {}-dim input",
                self.latent_dim, flat
            )));
        }
        let reference = Network::init(
            encoder(&self.arch, &self.input_shape, self.latent_dim)?,
            0,
        )?;
        if self.params.len() != reference.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} encoder parameters, found {}",
                reference.params.len(),
                self.params.len()
            )));
        }
        for (name, tensor) in self.params.iter() {
            if !name.starts_with(ENCODER_PREFIX) {
                return Err(Error::Checkpoint(format!(
                    "non-encoder parameter '{name}' in artifact"
                )));
            }
            let expected = reference.params.get(name)?;
            if expected.shape() != tensor.shape() {
                return Err(Error::ShapeMismatch {
                    context: format!("encoder artifact parameter '{name}'"),
                    expected: expected.shape().to_vec(),
                    got: tensor.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Instantiate the encoder as a runnable network.
    pub fn network(&self) -> Result<Network> {
        self.validate()?;
        let mut net = Network::init(encoder(&self.arch, &self.input_shape, self.latent_dim)?, 0)?;
        net.params.overwrite_from(&self.params)?;
        Ok(net)
    }

    fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".meta.json");
        PathBuf::from(s)
    }

    /// Write the parameter checkpoint at `path` and a JSON metadata
    /// sidecar at `path + ".meta.json"`.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        checkpoint::save(path, &self.arch, &self.params)?;
        let meta = SidecarMeta {
            method: self.method,
            arch: self.arch.clone(),
            input_shape: self.input_shape.clone(),
            latent_dim: self.latent_dim,
            provenance: self.provenance.clone(),
        };
        std::fs::write(Self::sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<EncoderArtifact> {
        let (arch, params) = checkpoint::load(path)?;
        let meta: SidecarMeta =
            serde_json::from_str(&std::fs::read_to_string(Self::sidecar_path(path))?)?;
        if meta.arch != arch {
            return Err(Error::Checkpoint(format!(
                "sidecar architecture '{}' disagrees with checkpoint '{arch}'",
                meta.arch
            )));
        }
        let artifact = EncoderArtifact {
            method: meta.method,
            arch,
            input_shape: meta.input_shape,
            latent_dim: meta.latent_dim,
            params,
            provenance: meta.provenance,
        };
        artifact.validate()?;
        Ok(artifact)
    }
}

#[derive(Serialize, Deserialize)]
struct SidecarMeta {
    method: SslMethod,
    arch: String,
    input_shape: Vec<usize>,
    latent_dim: usize,
    provenance: Provenance,
}

/// Shared preflight for all trainers; returns the proxy hash.
pub(crate) fn check_pretrain_inputs(
    proxy: &[Sample],
    input_shape: &[usize],
    cfg: &SslConfig,
) -> Result<String> {
    cfg.validate()?;
    let flat: usize = input_shape.iter().product();
    if cfg.latent_dim >= flat {
        return Err(Error::InvalidConfig(format!(
            "latent_dim {} does not compress a {flat}-dim input",
            cfg.latent_dim
        )));
    }
    if proxy.is_empty() {
        return Err(Error::InvalidArgument("pretraining on an empty proxy pool".into()));
    }
    for s in proxy {
        if s.image.shape() != input_shape {
            return Err(Error::ShapeMismatch {
                context: format!("proxy sample {}", s.id),
                expected: input_shape.to_vec(),
                got: s.image.shape().to_vec(),
            });
        }
    }
    Ok(dataset_hash(proxy))
}

pub(crate) fn finish_artifact(
    method: SslMethod,
    net: &Network,
    input_shape: &[usize],
    cfg: &SslConfig,
    proxy_hash: String,
    final_loss: Option<f64>,
) -> Result<EncoderArtifact> {
    let artifact = EncoderArtifact {
        method,
        arch: cfg.arch.clone(),
        input_shape: input_shape.to_vec(),
        latent_dim: cfg.latent_dim,
        params: net.params.filtered(|n| n.starts_with(ENCODER_PREFIX)),
        provenance: Provenance {
            proxy_hash,
            seed: cfg.seed,
            final_loss,
            config: cfg.clone(),
        },
    };
    artifact.validate()?;
    Ok(artifact)
}

/// Random-initialization baseline: a fresh encoder, no proxy training.
pub fn rs_encoder(
    proxy: &[Sample],
    input_shape: &[usize],
    cfg: &SslConfig,
) -> Result<EncoderArtifact> {
    let proxy_hash = check_pretrain_inputs(proxy, input_shape, cfg)?;
    let net = Network::init(encoder(&cfg.arch, input_shape, cfg.latent_dim)?, cfg.seed)?;
    finish_artifact(SslMethod::Rs, &net, input_shape, cfg, proxy_hash, None)
}

/// Dispatch a pretraining run by method.
pub fn pretrain(
    method: SslMethod,
    proxy: &[Sample],
    input_shape: &[usize],
    cfg: &SslConfig,
) -> Result<EncoderArtifact> {
    match method {
        SslMethod::Rs => rs_encoder(proxy, input_shape, cfg),
        SslMethod::Bae => autoencoder::train_bae(proxy, input_shape, cfg),
        SslMethod::Dae => autoencoder::train_dae(proxy, input_shape, cfg),
        SslMethod::Moco => moco::train_moco(proxy, input_shape, cfg),
        SslMethod::Simclr => simclr::train_simclr(proxy, input_shape, cfg),
    }
}
