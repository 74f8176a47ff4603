//! Contrastive losses with analytic gradients.
//!
//! `info_nce` works on raw dot products of pre-normalized vectors (the
//! caller decides whether to normalize); `nt_xent` takes raw embeddings
//! and applies cosine similarity internally, so its gradient includes the
//! normalization backward pass.

use crate::error::{Error, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn check_tau(tau: f64) -> Result<()> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// InfoNCE: `-log( exp(q.k+ / tau) / (exp(q.k+ / tau) + sum exp(q.k- / tau)) )`,
/// stabilized via log-sum-exp. With no negatives the loss is 0.
pub fn info_nce(q: &[f64], k_pos: &[f64], k_negs: &[&[f64]], tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let dim = q.len();
    if k_pos.len() != dim || k_negs.iter().any(|k| k.len() != dim) {
        return Err(Error::InvalidArgument("info_nce: mismatched vector dimensions".into()));
    }
    let pos = dot(q, k_pos) / tau;
    let mut logits = Vec::with_capacity(1 + k_negs.len());
    logits.push(pos);
    for k in k_negs {
        logits.push(dot(q, k) / tau);
    }
    Ok(log_sum_exp(&logits) - pos)
}

/// Gradient of [`info_nce`] with respect to `q` (keys treated as
/// constants, matching the detached key/queue convention).
pub fn info_nce_grad_q(q: &[f64], k_pos: &[f64], k_negs: &[&[f64]], tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    let dim = q.len();
    let mut logits = Vec::with_capacity(1 + k_negs.len());
    logits.push(dot(q, k_pos) / tau);
    for k in k_negs {
        logits.push(dot(q, k) / tau);
    }
    let lse = log_sum_exp(&logits);
    let probs: Vec<f64> = logits.iter().map(|&l| (l - lse).exp()).collect();
    // dL/dq = (sum_m p_m k_m - k+) / tau
    let mut grad = vec![0.0; dim];
    for (i, g) in grad.iter_mut().enumerate() {
        let mut acc = probs[0] * k_pos[i];
        for (m, k) in k_negs.iter().enumerate() {
            acc += probs[m + 1] * k[i];
        }
        *g = (acc - k_pos[i]) / tau;
    }
    Ok(grad)
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// NT-Xent over `2N` embeddings arranged in `pairs` of positive indices.
/// Mean over all 2N anchors of
/// `-log( exp(sim(z_i, z_j)/tau) / sum_{k != i} exp(sim(z_i, z_k)/tau) )`
/// with cosine similarity. With a single pair (zero negatives) the loss
/// is exactly 0.
pub fn nt_xent(embeddings: &[Vec<f64>], pairs: &[(usize, usize)], tau: f64) -> Result<f64> {
    let (sims, partner, _) = nt_xent_setup(embeddings, pairs, tau)?;
    let n = embeddings.len();
    if n == 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..n {
        let logits: Vec<f64> = (0..n)
            .filter(|&k| k != i)
            .map(|k| sims[i * n + k] / tau)
            .collect();
        total += log_sum_exp(&logits) - sims[i * n + partner[i]] / tau;
    }
    Ok(total / n as f64)
}

/// Gradient of [`nt_xent`] with respect to the raw (un-normalized)
/// embeddings.
pub fn nt_xent_grad(
    embeddings: &[Vec<f64>],
    pairs: &[(usize, usize)],
    tau: f64,
) -> Result<Vec<Vec<f64>>> {
    let (sims, partner, hats) = nt_xent_setup(embeddings, pairs, tau)?;
    let n = embeddings.len();
    let dim = embeddings[0].len();
    if n == 2 {
        return Ok(vec![vec![0.0; dim]; n]);
    }
    // coefficient of each similarity s_{ik} in the mean loss
    let mut coef = vec![0.0; n * n];
    for i in 0..n {
        let logits: Vec<f64> = (0..n)
            .filter(|&k| k != i)
            .map(|k| sims[i * n + k] / tau)
            .collect();
        let lse = log_sum_exp(&logits);
        for k in 0..n {
            if k == i {
                continue;
            }
            let mut c = (sims[i * n + k] / tau - lse).exp();
            if k == partner[i] {
                c -= 1.0;
            }
            coef[i * n + k] += c / (tau * n as f64);
        }
    }
    // grad wrt normalized embeddings: s_{ik} contributes to both sides
    let mut grad_hat = vec![vec![0.0; dim]; n];
    for i in 0..n {
        for k in 0..n {
            if k == i {
                continue;
            }
            let c = coef[i * n + k];
            if c == 0.0 {
                continue;
            }
            for d in 0..dim {
                grad_hat[i][d] += c * hats[k][d];
                grad_hat[k][d] += c * hats[i][d];
            }
        }
    }
    // backprop through L2 normalization
    let mut grad = vec![vec![0.0; dim]; n];
    for i in 0..n {
        let nz = norm(&embeddings[i]);
        let proj = dot(&grad_hat[i], &hats[i]);
        for d in 0..dim {
            grad[i][d] = (grad_hat[i][d] - proj * hats[i][d]) / nz;
        }
    }
    Ok(grad)
}

#[allow(clippy::type_complexity)]
fn nt_xent_setup(
    embeddings: &[Vec<f64>],
    pairs: &[(usize, usize)],
    tau: f64,
) -> Result<(Vec<f64>, Vec<usize>, Vec<Vec<f64>>)> {
    check_tau(tau)?;
    let n = embeddings.len();
    if n < 2 || n % 2 != 0 || pairs.len() * 2 != n {
        return Err(Error::InvalidArgument(format!(
            "nt_xent: {n} embeddings must form {} positive pairs",
            n / 2
        )));
    }
    let dim = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != dim) {
        return Err(Error::InvalidArgument("nt_xent: mismatched embedding dimensions".into()));
    }
    let mut partner = vec![usize::MAX; n];
    for &(a, b) in pairs {
        if a >= n || b >= n || a == b || partner[a] != usize::MAX || partner[b] != usize::MAX {
            return Err(Error::InvalidArgument("nt_xent: invalid pair map".into()));
        }
        partner[a] = b;
        partner[b] = a;
    }
    let mut hats = Vec::with_capacity(n);
    for (i, e) in embeddings.iter().enumerate() {
        let nz = norm(e);
        if nz == 0.0 || !nz.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "nt_xent: embedding {i} has zero or non-finite norm"
            )));
        }
        hats.push(e.iter().map(|&v| v / nz).collect::<Vec<f64>>());
    }
    let mut sims = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            sims[i * n + k] = dot(&hats[i], &hats[k]);
        }
    }
    Ok((sims, partner, hats))
}

/// L2-normalize, erroring on zero norm.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let nz = norm(v);
    if nz == 0.0 || !nz.is_finite() {
        return Err(Error::NonFinite("l2_normalize of zero-norm vector".into()));
    }
    Ok(v.iter().map(|&x| x / nz).collect())
}

/// Backprop through `z_hat = z / ||z||`: given dL/dz_hat, return dL/dz.
pub fn l2_normalize_backward(z: &[f64], grad_hat: &[f64]) -> Vec<f64> {
    let nz = norm(z);
    let hat: Vec<f64> = z.iter().map(|&v| v / nz).collect();
    let proj = dot(grad_hat, &hat);
    z.iter()
        .enumerate()
        .map(|(d, _)| (grad_hat[d] - proj * hat[d]) / nz)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn info_nce_no_negatives_is_zero() {
        let q = [0.3, -0.4, 0.5];
        assert_eq!(info_nce(&q, &[0.1, 0.2, 0.3], &[], 0.5).unwrap(), 0.0);
    }

    #[test]
    fn info_nce_equal_logits_is_ln_one_plus_k() {
        // all dot products equal -> softmax uniform over 1+K candidates
        let q = vec![1.0, 0.0];
        let k = vec![0.5, 0.5];
        for kn in [1usize, 4, 16] {
            let negs: Vec<Vec<f64>> = (0..kn).map(|_| k.clone()).collect();
            let refs: Vec<&[f64]> = negs.iter().map(|v| v.as_slice()).collect();
            let l = info_nce(&q, &k, &refs, 0.07).unwrap();
            assert!((l - (1.0 + kn as f64).ln()).abs() < 1e-9, "K={kn}: {l}");
        }
    }

    #[test]
    fn info_nce_matches_unstabilized_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let rv = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()
            };
            let q = rv(&mut rng);
            let kp = rv(&mut rng);
            let negs = [rv(&mut rng), rv(&mut rng)];
            let refs: Vec<&[f64]> = negs.iter().map(|v| v.as_slice()).collect();
            let tau = 0.3;
            let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            let num = (d(&q, &kp) / tau).exp();
            let den = num + refs.iter().map(|k| (d(&q, k) / tau).exp()).sum::<f64>();
            let expected = -(num / den).ln();
            let got = info_nce(&q, &kp, &refs, tau).unwrap();
            assert!((got - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn info_nce_rejects_nonpositive_temperature() {
        assert!(info_nce(&[1.0], &[1.0], &[], 0.0).is_err());
    }

    #[test]
    fn info_nce_grad_matches_finite_differences() {
        use crate::nn::gradcheck::grad_check_vec;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let q: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let kp: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let negs: Vec<Vec<f64>> =
                (0..3).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let refs: Vec<&[f64]> = negs.iter().map(|v| v.as_slice()).collect();
            let analytic = info_nce_grad_q(&q, &kp, &refs, 0.2).unwrap();
            let report = grad_check_vec(
                &q,
                &analytic,
                |x| info_nce(x, &kp, &refs, 0.2),
                1e-6,
            )
            .unwrap();
            assert!(report.passes(1e-4), "rel err {}", report.max_rel_error);
        }
    }

    #[test]
    fn nt_xent_single_pair_is_zero() {
        let emb = vec![vec![0.3, 0.7], vec![-0.2, 0.5]];
        assert_eq!(nt_xent(&emb, &[(0, 1)], 0.5).unwrap(), 0.0);
    }

    #[test]
    fn nt_xent_identical_embeddings_is_ln_2n_minus_1() {
        for n in [2usize, 4, 8] {
            let emb: Vec<Vec<f64>> = (0..2 * n).map(|_| vec![0.6, 0.8]).collect();
            let pairs: Vec<(usize, usize)> = (0..n).map(|i| (2 * i, 2 * i + 1)).collect();
            let l = nt_xent(&emb, &pairs, 0.5).unwrap();
            assert!((l - ((2 * n - 1) as f64).ln()).abs() < 1e-9, "n={n}: {l}");
        }
    }

    #[test]
    fn nt_xent_matches_direct_formula_for_n2() {
        let emb = vec![
            vec![0.2f64, 0.9],
            vec![0.4, 0.5],
            vec![-0.3, 0.8],
            vec![0.7, -0.1],
        ];
        let pairs = [(0, 1), (2, 3)];
        let tau = 0.5;
        // direct evaluation in f64 without stabilization
        let normed: Vec<Vec<f64>> = emb
            .iter()
            .map(|e| {
                let n = (e[0] * e[0] + e[1] * e[1]).sqrt();
                vec![e[0] / n, e[1] / n]
            })
            .collect();
        let sim = |a: usize, b: usize| normed[a][0] * normed[b][0] + normed[a][1] * normed[b][1];
        let partner = [1, 0, 3, 2];
        let mut expected = 0.0;
        for i in 0..4 {
            let den: f64 = (0..4)
                .filter(|&k| k != i)
                .map(|k| (sim(i, k) / tau).exp())
                .sum();
            expected += -((sim(i, partner[i]) / tau).exp() / den).ln();
        }
        expected /= 4.0;
        let got = nt_xent(&emb, &pairs, tau).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn nt_xent_rejects_zero_norm_embedding() {
        let emb = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        assert!(nt_xent(&emb, &[(0, 1), (2, 3)], 0.5).is_err());
    }

    #[test]
    fn nt_xent_invariant_to_per_vector_positive_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let emb: Vec<Vec<f64>> =
            (0..6).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let pairs = [(0, 1), (2, 3), (4, 5)];
        let base = nt_xent(&emb, &pairs, 0.4).unwrap();
        let mut scaled = emb.clone();
        scaled[2].iter_mut().for_each(|v| *v *= 7.3);
        let l = nt_xent(&scaled, &pairs, 0.4).unwrap();
        assert!((l - base).abs() < 1e-12);
    }

    #[test]
    fn nt_xent_grad_matches_finite_differences() {
        use crate::nn::gradcheck::grad_check_vec;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let dim = 3;
            let n = 6;
            let emb: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..dim).map(|_| rng.gen_range(0.2..1.0)).collect())
                .collect();
            let pairs = [(0, 1), (2, 3), (4, 5)];
            let analytic = nt_xent_grad(&emb, &pairs, 0.5).unwrap();
            let flat: Vec<f64> = emb.iter().flatten().cloned().collect();
            let flat_grad: Vec<f64> = analytic.iter().flatten().cloned().collect();
            let report = grad_check_vec(
                &flat,
                &flat_grad,
                |x| {
                    let e: Vec<Vec<f64>> = x.chunks(dim).map(|c| c.to_vec()).collect();
                    nt_xent(&e, &pairs, 0.5)
                },
                1e-6,
            )
            .unwrap();
            assert!(report.passes(1e-4), "rel err {}", report.max_rel_error);
        }
    }
}
