//! Loss functions with analytic gradients in the batch-summed convention.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// Row-wise softmax via log-sum-exp; rows are the last dimension of a
/// (batch, classes) tensor.
pub fn softmax_rows(logits: &Tensor) -> Vec<Vec<f64>> {
    let n = *logits.shape().last().unwrap();
    logits
        .data()
        .chunks(n)
        .map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            exps.iter().map(|e| e / z).collect()
        })
        .collect()
}

fn log_softmax_rows(logits: &Tensor) -> Vec<Vec<f64>> {
    let n = *logits.shape().last().unwrap();
    logits
        .data()
        .chunks(n)
        .map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            row.iter().map(|&v| v - lse).collect()
        })
        .collect()
}

fn check_ce_inputs(logits: &Tensor, targets: &Tensor) -> Result<(usize, usize)> {
    if logits.shape() != targets.shape() {
        return Err(Error::ShapeMismatch {
            context: "cross_entropy".into(),
            expected: logits.shape().to_vec(),
            got: targets.shape().to_vec(),
        });
    }
    if logits.shape().len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "cross_entropy expects (batch, classes) logits, got {:?}",
            logits.shape()
        )));
    }
    let (b, n) = (logits.shape()[0], logits.shape()[1]);
    for (i, row) in targets.data().chunks(n).enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "target row {i} sums to {s}, expected 1"
            )));
        }
    }
    Ok((b, n))
}

/// Mean over the batch of `-sum_i y_i * log softmax(logits)_i`.
/// Targets may be one-hot or soft; each row must sum to 1 (±1e-6).
pub fn cross_entropy(logits: &Tensor, targets: &Tensor) -> Result<f64> {
    let (b, n) = check_ce_inputs(logits, targets)?;
    let logp = log_softmax_rows(logits);
    let mut total = 0.0;
    for (bi, trow) in targets.data().chunks(n).enumerate() {
        for (i, &y) in trow.iter().enumerate() {
            if y != 0.0 {
                total -= y * logp[bi][i];
            }
        }
    }
    Ok(total / b as f64)
}

/// Gradient of the batch-summed cross-entropy w.r.t. the logits:
/// `softmax(logits) - y` per row.
pub fn cross_entropy_grad(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let (_, n) = check_ce_inputs(logits, targets)?;
    let p = softmax_rows(logits);
    let mut g = Vec::with_capacity(logits.len());
    for (bi, trow) in targets.data().chunks(n).enumerate() {
        for i in 0..n {
            g.push(p[bi][i] - trow[i]);
        }
    }
    Tensor::new(logits.shape().to_vec(), g)
}

/// Mean over batch and elements of squared error.
pub fn mse(prediction: &Tensor, target: &Tensor) -> Result<f64> {
    if prediction.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            context: "mse".into(),
            expected: prediction.shape().to_vec(),
            got: target.shape().to_vec(),
        });
    }
    let n = prediction.len() as f64;
    Ok(prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Gradient of the batch-summed per-sample-mean squared error w.r.t.
/// the prediction: `2 (pred - target) / elements_per_sample`.
pub fn mse_grad(prediction: &Tensor, target: &Tensor) -> Result<Tensor> {
    if prediction.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            context: "mse_grad".into(),
            expected: prediction.shape().to_vec(),
            got: target.shape().to_vec(),
        });
    }
    let per_sample = (prediction.len() / prediction.shape()[0]) as f64;
    let g: Vec<f64> = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| 2.0 * (a - b) / per_sample)
        .collect();
    Tensor::new(prediction.shape().to_vec(), g)
}

/// Shannon entropy `-sum p ln p` of a probability vector, in nats.
pub fn entropy(posterior: &[f64]) -> f64 {
    posterior
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(n: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    #[test]
    fn uniform_logits_give_ln_n() {
        let logits = Tensor::new(vec![1, 10], vec![0.7; 10]).unwrap();
        let targets = Tensor::new(vec![1, 10], one_hot(10, 3)).unwrap();
        let l = cross_entropy(&logits, &targets).unwrap();
        assert!((l - (10.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_correct_logit_gives_near_zero_loss() {
        let mut row = vec![0.0; 4];
        row[2] = 50.0;
        let logits = Tensor::new(vec![1, 4], row).unwrap();
        let targets = Tensor::new(vec![1, 4], one_hot(4, 2)).unwrap();
        assert!(cross_entropy(&logits, &targets).unwrap() < 1e-6);
    }

    #[test]
    fn random_instance_matches_log_sum_exp_by_hand() {
        // Oracle: direct formula evaluation, written out term by term.
        let logits = vec![0.3f64, -1.2, 2.1, 0.0];
        let targets = vec![0.1, 0.2, 0.6, 0.1];
        let lse = logits.iter().map(|v| v.exp()).sum::<f64>().ln();
        let expected: f64 = -targets
            .iter()
            .zip(&logits)
            .map(|(&y, &z)| y * (z - lse))
            .sum::<f64>();
        let l = cross_entropy(
            &Tensor::new(vec![1, 4], logits).unwrap(),
            &Tensor::new(vec![1, 4], targets).unwrap(),
        )
        .unwrap();
        assert!((l - expected).abs() < 1e-12);
    }

    #[test]
    fn non_normalized_target_row_is_rejected() {
        let logits = Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap();
        let targets = Tensor::new(vec![1, 3], vec![0.5, 0.4, 0.2]).unwrap();
        assert!(cross_entropy(&logits, &targets).is_err());
    }

    #[test]
    fn softmax_rows_are_normalized_and_nonnegative() {
        let logits = Tensor::new(vec![2, 3], vec![5.0, -3.0, 700.0, -700.0, 0.0, 1.0]).unwrap();
        for row in softmax_rows(&logits) {
            assert!(row.iter().all(|&p| p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gibbs_inequality_on_random_instances() {
        // CE(logits, softmax(logits)) <= CE(logits, y) for any y.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let z: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let logits = Tensor::new(vec![1, 5], z).unwrap();
            let p = softmax_rows(&logits)[0].clone();
            let mut y: Vec<f64> = (0..5).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = y.iter().sum();
            y.iter_mut().for_each(|v| *v /= s);
            let self_ce =
                cross_entropy(&logits, &Tensor::new(vec![1, 5], p).unwrap()).unwrap();
            let other_ce =
                cross_entropy(&logits, &Tensor::new(vec![1, 5], y).unwrap()).unwrap();
            assert!(self_ce <= other_ce + 1e-12);
        }
    }

    #[test]
    fn entropy_of_uniform_and_one_hot() {
        let u = vec![0.1; 10];
        assert!((entropy(&u) - (10.0f64).ln()).abs() < 1e-12);
        let mut h = vec![0.0; 10];
        h[4] = 1.0;
        assert_eq!(entropy(&h), 0.0);
    }
}
