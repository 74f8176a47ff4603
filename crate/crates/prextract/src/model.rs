//! Classifier wrapper shared by victims and substitutes, plus the
//! supervised fit loop both sides use.

use crate::error::{Error, Result};
use crate::nn::loss::{cross_entropy, cross_entropy_grad};
use crate::nn::{sgd_step, Network, Tensor, TrainConfig};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Encoder parameters carry the `enc.` prefix by construction (see
/// [`crate::nn::arch`]); the classification head is `head.fc`.
pub const ENCODER_PREFIX: &str = "enc.";

/// A classifier network plus a trained marker. Victims must be trained
/// before they can be sealed behind an oracle.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub net: Network,
    pub trained: bool,
}

impl ClassifierModel {
    pub fn num_classes(&self) -> Result<usize> {
        Ok(self.net.arch.output_shape()?[0])
    }

    /// Softmax posterior rows for a batch of images.
    pub fn predict_posterior(&self, images: &[&Tensor]) -> Result<Vec<Vec<f64>>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let batch = Tensor::stack(images)?;
        self.net.predict_posterior(&batch)
    }

    /// Argmax labels, ties broken by lowest class index.
    pub fn predict_labels(&self, images: &[&Tensor]) -> Result<Vec<usize>> {
        Ok(self
            .predict_posterior(images)?
            .iter()
            .map(|p| argmax_lowest(p))
            .collect())
    }
}

/// Argmax with ties broken by the lowest index.
pub fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mini-batch SGD over (image, target-row) pairs with cross-entropy loss.
/// `freeze` selects parameter names whose gradients are zeroed. Returns
/// the fitted network and the per-epoch mean training loss.
pub fn fit(
    net: Network,
    examples: &[(Tensor, Vec<f64>)],
    cfg: &TrainConfig,
    freeze: &dyn Fn(&str) -> bool,
) -> Result<(Network, Vec<f64>)> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::InvalidArgument("fit called with no examples".into()));
    }
    if cfg.batch_size > examples.len() {
        return Err(Error::InvalidConfig(format!(
            "batch_size {} exceeds dataset size {}",
            cfg.batch_size,
            examples.len()
        )));
    }
    let num_classes = net.arch.output_shape()?[0];
    let mut net = net;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let images: Vec<&Tensor> = chunk.iter().map(|&i| &examples[i].0).collect();
            let batch = Tensor::stack(&images)?;
            let mut targets = Vec::with_capacity(chunk.len() * num_classes);
            for &i in chunk {
                targets.extend_from_slice(&examples[i].1);
            }
            let targets = Tensor::new(vec![chunk.len(), num_classes], targets)?;
            let trace = net.forward_trace(&batch)?;
            epoch_loss += cross_entropy(trace.output(), &targets)?;
            batches += 1;
            let grad_out = cross_entropy_grad(trace.output(), &targets)?;
            let (mut grads, _) = net.backward(&trace, &grad_out)?;
            zero_frozen(&mut grads, freeze)?;
            net.params = sgd_step(&net.params, &grads, cfg.learning_rate, chunk.len())?;
        }
        curve.push(epoch_loss / batches as f64);
    }
    Ok((net, curve))
}

fn zero_frozen(grads: &mut crate::nn::ParamSet, freeze: &dyn Fn(&str) -> bool) -> Result<()> {
    let frozen: Vec<String> = grads.names().filter(|n| freeze(n)).cloned().collect();
    for name in frozen {
        let g = grads.get_mut(&name)?;
        g.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(())
}

/// One-hot target row.
pub fn one_hot(num_classes: usize, label: usize) -> Vec<f64> {
    let mut v = vec![0.0; num_classes];
    v[label] = 1.0;
    v
}
