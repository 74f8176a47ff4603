//! Gradient-sign attacks crafted on the substitute and transferred to the
//! victim. The perturbation is `x' = clip_[0,1](x + eps * sign(grad_x L))`
//! with `sign(0) = 0`; attack success rate is measured only over samples
//! the victim classifies correctly before perturbation.

use crate::data::{LabeledSample, Sample};
use crate::error::{Error, Result};
use crate::model::{one_hot, ClassifierModel};
use crate::nn::loss::cross_entropy_grad;
use crate::nn::Tensor;
use crate::oracle::{Oracle, QueryLedger};
use serde::{Deserialize, Serialize};

/// Step grid used by the transfer sweep.
pub const EPSILON_GRID: &[f64] = &[0.03, 0.06, 0.09, 0.12, 0.15, 0.18, 0.21, 0.24];

/// One-step gradient-sign perturbation of a batch, crafted against
/// `labels` using the substitute's own gradients.
pub fn fgsm_batch(
    model: &ClassifierModel,
    images: &[&Tensor],
    labels: &[usize],
    epsilon: f64,
) -> Result<Vec<Tensor>> {
    if images.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} images for {} labels",
            images.len(),
            labels.len()
        )));
    }
    if images.is_empty() {
        return Ok(Vec::new());
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let num_classes = model.num_classes()?;
    let mut targets = Vec::with_capacity(labels.len() * num_classes);
    for &l in labels {
        if l >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "label {l} out of range for {num_classes} classes"
            )));
        }
        targets.extend_from_slice(&one_hot(num_classes, l));
    }
    let batch = Tensor::stack(images)?;
    let trace = model.net.forward_trace(&batch)?;
    let targets = Tensor::new(vec![labels.len(), num_classes], targets)?;
    let grad_logits = cross_entropy_grad(trace.output(), &targets)?;
    let (_, grad_input) = model.net.backward(&trace, &grad_logits)?;
    let per_sample = images[0].len();
    let mut out = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let g = &grad_input.data()[i * per_sample..(i + 1) * per_sample];
        let data: Vec<f64> = img
            .data()
            .iter()
            .zip(g)
            .map(|(&x, &gv)| (x + epsilon * sign(gv)).clamp(0.0, 1.0))
            .collect();
        out.push(Tensor::new(img.shape().to_vec(), data)?);
    }
    Ok(out)
}

/// Single-image convenience wrapper over [`fgsm_batch`].
pub fn fgsm(
    model: &ClassifierModel,
    image: &Tensor,
    label: usize,
    epsilon: f64,
) -> Result<Tensor> {
    Ok(fgsm_batch(model, &[image], &[label], epsilon)?.remove(0))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Originals paired with their perturbed versions; construction enforces
/// the infinity-norm bound.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdvBatch {
    pub originals: Vec<Sample>,
    pub adversarial: Vec<Sample>,
    pub epsilon: f64,
}

impl AdvBatch {
    pub fn new(originals: Vec<Sample>, adversarial: Vec<Sample>, epsilon: f64) -> Result<Self> {
        if originals.len() != adversarial.len() {
            return Err(Error::InvalidArgument(format!(
                "{} originals for {} adversarial samples",
                originals.len(),
                adversarial.len()
            )));
        }
        for (o, a) in originals.iter().zip(&adversarial) {
            if o.image.shape() != a.image.shape() {
                return Err(Error::ShapeMismatch {
                    context: format!("adversarial pair {}", o.id),
                    expected: o.image.shape().to_vec(),
                    got: a.image.shape().to_vec(),
                });
            }
            let max_diff = o
                .image
                .data()
                .iter()
                .zip(a.image.data())
                .map(|(&x, &y)| (x - y).abs())
                .fold(0.0, f64::max);
            if max_diff > epsilon + 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "pair {}: perturbation {max_diff} exceeds epsilon {epsilon}",
                    o.id
                )));
            }
        }
        Ok(AdvBatch { originals, adversarial, epsilon })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AsrReport {
    pub epsilon: f64,
    /// Samples the victim got right before perturbation.
    pub n_clean_correct: usize,
    /// Of those, how many the victim gets wrong after perturbation.
    pub n_flipped: usize,
    pub asr: f64,
}

/// Craft perturbations on the substitute and score their transfer to the
/// victim. Scoring uses uncharged measurement unless a ledger is given,
/// in which case the adversarial queries are billed as attack traffic.
pub fn transfer_asr(
    substitute: &ClassifierModel,
    victim: &dyn Oracle,
    test: &[LabeledSample],
    epsilon: f64,
    mut ledger: Option<&mut QueryLedger>,
) -> Result<AsrReport> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("transfer scoring over an empty set".into()));
    }
    let originals: Vec<Sample> = test.iter().map(|l| l.sample.clone()).collect();
    let clean = victim.measure_batch(&originals)?;
    let keep: Vec<usize> = clean
        .iter()
        .zip(test)
        .enumerate()
        .filter(|(_, (r, l))| r.label == l.label)
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Ok(AsrReport { epsilon, n_clean_correct: 0, n_flipped: 0, asr: 0.0 });
    }
    let images: Vec<&Tensor> = keep.iter().map(|&i| &test[i].sample.image).collect();
    let labels: Vec<usize> = keep.iter().map(|&i| test[i].label).collect();
    let perturbed = fgsm_batch(substitute, &images, &labels, epsilon)?;
    let adv: Vec<Sample> = keep
        .iter()
        .zip(perturbed)
        .map(|(&i, img)| Sample::new(test[i].sample.id, img))
        .collect::<Result<_>>()?;
    let batch = AdvBatch::new(
        keep.iter().map(|&i| test[i].sample.clone()).collect(),
        adv,
        epsilon,
    )?;
    let verdicts = match ledger.as_deref_mut() {
        Some(l) => victim.query_batch(&batch.adversarial, l)?,
        None => victim.measure_batch(&batch.adversarial)?,
    };
    let n_flipped = verdicts
        .iter()
        .zip(&labels)
        .filter(|(r, &l)| r.label != l)
        .count();
    Ok(AsrReport {
        epsilon,
        n_clean_correct: keep.len(),
        n_flipped,
        asr: n_flipped as f64 / keep.len() as f64,
    })
}

/// Sweep the epsilon grid; returns the reports and a CSV rendering
/// (`epsilon,asr,n_clean_correct,n_flipped`).
pub fn asr_sweep(
    substitute: &ClassifierModel,
    victim: &dyn Oracle,
    test: &[LabeledSample],
    epsilons: &[f64],
) -> Result<(Vec<AsrReport>, String)> {
    let mut reports = Vec::with_capacity(epsilons.len());
    let mut csv = String::from("epsilon,asr,n_clean_correct,n_flipped\n");
    for &eps in epsilons {
        let r = transfer_asr(substitute, victim, test, eps, None)?;
        csv.push_str(&format!(
            "{:.4},{:.6},{},{}\n",
            r.epsilon, r.asr, r.n_clean_correct, r.n_flipped
        ));
        reports.push(r);
    }
    Ok((reports, csv))
}
