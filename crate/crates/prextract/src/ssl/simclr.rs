//! In-batch contrastive pretraining: two augmented views per sample, a
//! projection head on top of the encoder, and the normalized-temperature
//! cross-entropy over all 2N views. The projection head is discarded from
//! the returned artifact.

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::nn::arch::{encoder, projection_head};
use crate::nn::{sgd_step, Network, Tensor};
use crate::ssl::losses::{nt_xent, nt_xent_grad};
use crate::ssl::{
    augment, check_pretrain_inputs, finish_artifact, EncoderArtifact, SslConfig, SslMethod,
};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn train_simclr(
    proxy: &[Sample],
    input_shape: &[usize],
    cfg: &SslConfig,
) -> Result<EncoderArtifact> {
    let proxy_hash = check_pretrain_inputs(proxy, input_shape, cfg)?;
    if cfg.batch_n < 2 {
        return Err(Error::InvalidConfig(format!(
            "in-batch contrastive training needs batch_n >= 2, got {}",
            cfg.batch_n
        )));
    }
    if proxy.len() < 2 {
        return Err(Error::InvalidArgument(
            "in-batch contrastive training needs at least 2 proxy samples".into(),
        ));
    }
    let arch = encoder(&cfg.arch, input_shape, cfg.latent_dim)?
        .chain(&projection_head(cfg.latent_dim))?;
    let mut net = Network::init(arch, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let batch_size = cfg.batch_n.min(proxy.len());
    let mut order: Vec<usize> = (0..proxy.len()).collect();
    let mut final_loss = None;
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch_size) {
            if chunk.len() < 2 {
                // a trailing singleton has no in-batch negatives
                continue;
            }
            // views interleaved as (2i, 2i+1) positive pairs
            let mut views = Vec::with_capacity(2 * chunk.len());
            for &i in chunk {
                views.push(augment(&proxy[i], &cfg.augment, &mut rng)?.image);
                views.push(augment(&proxy[i], &cfg.augment, &mut rng)?.image);
            }
            let refs: Vec<&Tensor> = views.iter().collect();
            let trace = net.forward_trace(&Tensor::stack(&refs)?)?;
            let mut embeddings: Vec<Vec<f64>> = trace
                .output()
                .data()
                .chunks(cfg.latent_dim)
                .map(|c| c.to_vec())
                .collect();
            // cosine similarity is undefined for an all-zero projection;
            // nudge such rows off the origin
            for e in embeddings.iter_mut() {
                if e.iter().all(|&v| v == 0.0) {
                    e[0] = 1e-9;
                }
            }
            let pairs: Vec<(usize, usize)> =
                (0..chunk.len()).map(|i| (2 * i, 2 * i + 1)).collect();
            epoch_loss += nt_xent(&embeddings, &pairs, cfg.tau)?;
            batches += 1;
            let grad_rows = nt_xent_grad(&embeddings, &pairs, cfg.tau)?;
            let grad_out = Tensor::new(
                vec![2 * chunk.len(), cfg.latent_dim],
                grad_rows.into_iter().flatten().collect(),
            )?;
            let (grads, _) = net.backward(&trace, &grad_out)?;
            // the loss is already a mean over anchors
            net.params = sgd_step(&net.params, &grads, cfg.learning_rate, 1)?;
        }
        if batches > 0 {
            final_loss = Some(epoch_loss / batches as f64);
        }
    }
    finish_artifact(SslMethod::Simclr, &net, input_shape, cfg, proxy_hash, final_loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_generate;

    fn proxy() -> Vec<Sample> {
        synth_generate(4, 4, &[1, 8, 8], 0, 9)
            .unwrap()
            .into_iter()
            .map(|l| l.sample)
            .collect()
    }

    fn cfg() -> SslConfig {
        SslConfig {
            arch: "mlp-s".into(),
            latent_dim: 8,
            tau: 0.5,
            batch_n: 8,
            epochs: 2,
            // in-batch contrastive descent overshoots into the uniform
            // plateau at higher rates
            learning_rate: 0.01,
            ..SslConfig::default()
        }
    }

    #[test]
    fn batch_of_one_pair_is_rejected() {
        let c = SslConfig { batch_n: 1, ..cfg() };
        assert!(train_simclr(&proxy(), &[1, 8, 8], &c).is_err());
    }

    #[test]
    fn projection_head_is_discarded_from_artifact() {
        let art = train_simclr(&proxy(), &[1, 8, 8], &cfg()).unwrap();
        assert!(art.params.names().all(|n| n.starts_with("enc.")));
        art.validate().unwrap();
    }

    #[test]
    fn training_changes_encoder_parameters() {
        let c = cfg();
        let art = train_simclr(&proxy(), &[1, 8, 8], &c).unwrap();
        let init = crate::ssl::rs_encoder(&proxy(), &[1, 8, 8], &c).unwrap();
        assert_ne!(art.params, init.params);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let c = cfg();
        let a = train_simclr(&proxy(), &[1, 8, 8], &c).unwrap();
        let b = train_simclr(&proxy(), &[1, 8, 8], &c).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.provenance.final_loss, b.provenance.final_loss);
    }

    #[test]
    fn contrastive_loss_decreases_on_average() {
        let c = SslConfig { epochs: 60, ..cfg() };
        let long = train_simclr(&proxy(), &[1, 8, 8], &c).unwrap();
        let short = train_simclr(&proxy(), &[1, 8, 8], &SslConfig { epochs: 1, ..c }).unwrap();
        assert!(
            long.provenance.final_loss.unwrap() < short.provenance.final_loss.unwrap(),
            "loss should fall over epochs"
        );
    }
}
