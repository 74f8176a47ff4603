//! Momentum-contrast pretraining. A query encoder is trained against a
//! slow key encoder updated as `theta_k <- m*theta_k + (1-m)*theta_q`;
//! negatives come from a FIFO queue of detached key embeddings, seeded
//! from the initial key encoder before the first step.

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::nn::arch::encoder;
use crate::nn::{sgd_step, Network, ParamSet, Tensor};
use crate::ssl::losses::{info_nce, info_nce_grad_q, l2_normalize_backward};
use crate::ssl::{
    augment, check_pretrain_inputs, finish_artifact, EncoderArtifact, SslConfig, SslMethod,
};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;

/// Momentum update of the key parameters toward the query parameters.
pub fn moco_momentum_update(
    theta_k: &ParamSet,
    theta_q: &ParamSet,
    momentum: f64,
) -> Result<ParamSet> {
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::InvalidArgument(format!(
            "momentum must be in [0, 1), got {momentum}"
        )));
    }
    let mut out = ParamSet::new();
    for (name, k) in theta_k.iter() {
        let q = theta_q.get(name)?;
        if q.shape() != k.shape() {
            return Err(Error::ShapeMismatch {
                context: format!("momentum update of '{name}'"),
                expected: k.shape().to_vec(),
                got: q.shape().to_vec(),
            });
        }
        let data: Vec<f64> = k
            .data()
            .iter()
            .zip(q.data())
            .map(|(&kv, &qv)| momentum * kv + (1.0 - momentum) * qv)
            .collect();
        out.insert(name.clone(), Tensor::new(k.shape().to_vec(), data)?)?;
    }
    if theta_q.len() != theta_k.len() {
        return Err(Error::InvalidArgument(
            "momentum update over mismatched parameter sets".into(),
        ));
    }
    Ok(out)
}

/// Normalize each row; all-zero rows stay zero (their gradient is zero).
fn normalize_rows(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                r.clone()
            } else {
                r.iter().map(|v| v / n).collect()
            }
        })
        .collect()
}

fn embed_rows(output: &Tensor) -> Vec<Vec<f64>> {
    let dim = *output.shape().last().unwrap();
    output.data().chunks(dim).map(|c| c.to_vec()).collect()
}

pub fn train_moco(
    proxy: &[Sample],
    input_shape: &[usize],
    cfg: &SslConfig,
) -> Result<EncoderArtifact> {
    let proxy_hash = check_pretrain_inputs(proxy, input_shape, cfg)?;
    if cfg.queue_size < cfg.batch_n {
        return Err(Error::InvalidConfig(format!(
            "queue_size {} smaller than batch_n {}",
            cfg.queue_size, cfg.batch_n
        )));
    }
    let mut q_net = Network::init(encoder(&cfg.arch, input_shape, cfg.latent_dim)?, cfg.seed)?;
    let mut k_net = q_net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // seed the queue with initial key-encoder embeddings of random proxy
    // samples, so the first batch already has negatives
    let mut queue: VecDeque<Vec<f64>> = VecDeque::with_capacity(cfg.queue_size);
    while queue.len() < cfg.queue_size {
        let i = rng.gen_range(0..proxy.len());
        let out = k_net.forward(&Tensor::stack(&[&proxy[i].image])?)?;
        queue.extend(normalize_rows(&embed_rows(&out)));
    }

    let batch_size = cfg.batch_n.min(proxy.len());
    let mut order: Vec<usize> = (0..proxy.len()).collect();
    let mut final_loss = None;
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut anchors = 0usize;
        for chunk in order.chunks(batch_size) {
            let mut views_q = Vec::with_capacity(chunk.len());
            let mut views_k = Vec::with_capacity(chunk.len());
            for &i in chunk {
                views_q.push(augment(&proxy[i], &cfg.augment, &mut rng)?.image);
                views_k.push(augment(&proxy[i], &cfg.augment, &mut rng)?.image);
            }
            let q_refs: Vec<&Tensor> = views_q.iter().collect();
            let k_refs: Vec<&Tensor> = views_k.iter().collect();
            let trace = q_net.forward_trace(&Tensor::stack(&q_refs)?)?;
            let q_raw = embed_rows(trace.output());
            let q_hat = normalize_rows(&q_raw);
            // keys are detached: computed by the key encoder, never
            // backpropagated through
            let k_hat = normalize_rows(&embed_rows(&k_net.forward(&Tensor::stack(&k_refs)?)?));

            let negs: Vec<&[f64]> = queue.iter().map(|v| v.as_slice()).collect();
            let scale = 1.0 / chunk.len() as f64;
            let mut grad_data = Vec::with_capacity(chunk.len() * cfg.latent_dim);
            for (qi, (qh, kh)) in q_hat.iter().zip(&k_hat).enumerate() {
                epoch_loss += info_nce(qh, kh, &negs, cfg.tau)?;
                anchors += 1;
                let g_hat = info_nce_grad_q(qh, kh, &negs, cfg.tau)?;
                let norm = q_raw[qi].iter().map(|v| v * v).sum::<f64>().sqrt();
                let g_raw = if norm == 0.0 {
                    vec![0.0; cfg.latent_dim]
                } else {
                    l2_normalize_backward(&q_raw[qi], &g_hat)
                };
                grad_data.extend(g_raw.into_iter().map(|g| g * scale));
            }
            let grad_out = Tensor::new(vec![chunk.len(), cfg.latent_dim], grad_data)?;
            let (grads, _) = q_net.backward(&trace, &grad_out)?;
            // gradient already carries the batch mean
            q_net.params = sgd_step(&q_net.params, &grads, cfg.learning_rate, 1)?;
            k_net.params = moco_momentum_update(&k_net.params, &q_net.params, cfg.momentum)?;
            for kh in k_hat {
                queue.push_back(kh);
                if queue.len() > cfg.queue_size {
                    queue.pop_front();
                }
            }
        }
        final_loss = Some(epoch_loss / anchors as f64);
    }
    finish_artifact(SslMethod::Moco, &q_net, input_shape, cfg, proxy_hash, final_loss)
}
