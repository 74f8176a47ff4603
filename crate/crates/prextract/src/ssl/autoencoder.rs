//! Autoencoder pretraining: encoder plus a small dense decoder trained to
//! reconstruct the clean image under MSE. The denoising variant corrupts
//! the input with a square block mask redrawn every epoch; the plain
//! variant is the same trainer with corruption disabled.

use crate::data::Sample;
use crate::error::Result;
use crate::nn::arch::{decoder, encoder};
use crate::nn::loss::{mse, mse_grad};
use crate::nn::{sgd_step, Network, Tensor};
use crate::ssl::{check_pretrain_inputs, finish_artifact, EncoderArtifact, SslConfig, SslMethod};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn train_bae(
    proxy: &[Sample],
    input_shape: &[usize],
    cfg: &SslConfig,
) -> Result<EncoderArtifact> {
    train_autoencoder(SslMethod::Bae, proxy, input_shape, cfg, 0.0)
}

pub fn train_dae(
    proxy: &[Sample],
    input_shape: &[usize],
    cfg: &SslConfig,
) -> Result<EncoderArtifact> {
    train_autoencoder(SslMethod::Dae, proxy, input_shape, cfg, cfg.noise_level)
}

/// Zero a square block covering roughly `fraction` of the image area,
/// across all channels. Position is drawn from `rng`.
pub fn block_mask(image: &Tensor, fraction: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if fraction <= 0.0 {
        return Ok(image.clone());
    }
    let shape = image.shape().to_vec();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let side_h = ((h as f64 * fraction.sqrt()).round() as usize).clamp(1, h);
    let side_w = ((w as f64 * fraction.sqrt()).round() as usize).clamp(1, w);
    let y0 = rng.gen_range(0..=(h - side_h));
    let x0 = rng.gen_range(0..=(w - side_w));
    let mut data = image.data().to_vec();
    for ch in 0..c {
        for y in y0..y0 + side_h {
            for x in x0..x0 + side_w {
                data[(ch * h + y) * w + x] = 0.0;
            }
        }
    }
    Tensor::new(shape, data)
}

fn train_autoencoder(
    method: SslMethod,
    proxy: &[Sample],
    input_shape: &[usize],
    cfg: &SslConfig,
    noise_level: f64,
) -> Result<EncoderArtifact> {
    let proxy_hash = check_pretrain_inputs(proxy, input_shape, cfg)?;
    let arch = encoder(&cfg.arch, input_shape, cfg.latent_dim)?
        .chain(&decoder(cfg.latent_dim, input_shape)?)?;
    let mut net = Network::init(arch, cfg.seed)?;
    let flat: usize = input_shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..proxy.len()).collect();
    let batch_size = cfg.batch_n.min(proxy.len());
    let mut final_loss = None;
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch_size) {
            let mut inputs = Vec::with_capacity(chunk.len());
            let mut target_data = Vec::with_capacity(chunk.len() * flat);
            for &i in chunk {
                target_data.extend_from_slice(proxy[i].image.data());
                inputs.push(if noise_level > 0.0 {
                    block_mask(&proxy[i].image, noise_level, &mut rng)?
                } else {
                    proxy[i].image.clone()
                });
            }
            let refs: Vec<&Tensor> = inputs.iter().collect();
            let batch = Tensor::stack(&refs)?;
            let targets = Tensor::new(vec![chunk.len(), flat], target_data)?;
            let trace = net.forward_trace(&batch)?;
            epoch_loss += mse(trace.output(), &targets)?;
            batches += 1;
            let grad_out = mse_grad(trace.output(), &targets)?;
            let (grads, _) = net.backward(&trace, &grad_out)?;
            net.params = sgd_step(&net.params, &grads, cfg.learning_rate, chunk.len())?;
        }
        final_loss = Some(epoch_loss / batches as f64);
    }
    finish_artifact(method, &net, input_shape, cfg, proxy_hash, final_loss)
}
