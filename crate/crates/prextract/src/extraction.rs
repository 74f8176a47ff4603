//! Active extraction loop: rank the unlabeled pool by substitute
//! prediction entropy, query a per-round slice of the budget, accumulate
//! the answered samples and retrain the substitute from the pretrained
//! encoder plus a fresh head. Selection is without replacement and the
//! loop spends exactly its budget.

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::eval::fidelity;
use crate::model::{fit, one_hot, ClassifierModel, ENCODER_PREFIX};
use crate::nn::arch::classifier;
use crate::nn::loss::entropy;
use crate::nn::{Network, Tensor, TrainConfig};
use crate::oracle::{Oracle, OracleResponse, QueryLedger};
use crate::ssl::{EncoderArtifact, SslMethod};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    /// Highest substitute prediction entropy first.
    Entropy,
    /// Uniform random, the ablation baseline.
    Random,
}

/// One extraction run. `budget` must divide evenly into `itera` rounds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtractionConfig {
    pub budget: u64,
    pub itera: u32,
    pub train: TrainConfig,
    /// Retrain from the pretrained encoder plus a fresh head each round;
    /// when false, training continues from the previous round's weights.
    pub head_reinit: bool,
    /// Allow encoder weights to move during substitute training.
    pub encoder_finetune: bool,
    pub selector: Selector,
    pub seed: u64,
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.budget == 0 {
            return Err(Error::InvalidConfig("budget must be positive".into()));
        }
        if self.itera == 0 {
            return Err(Error::InvalidConfig("itera must be positive".into()));
        }
        if self.budget % self.itera as u64 != 0 {
            return Err(Error::InvalidConfig(format!(
                "budget {} is not divisible into {} rounds",
                self.budget, self.itera
            )));
        }
        Ok(())
    }
}

/// The stolen model plus the encoder it was assembled from.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubstituteModel {
    pub model: ClassifierModel,
    pub encoder_method: SslMethod,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub queried: Vec<u64>,
    pub spent_after: u64,
    pub train_loss: f64,
    /// Uncharged validation fidelity, when an evaluation set was given.
    pub fidelity: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub rounds: Vec<RoundRecord>,
    pub total_spent: u64,
}

impl RunRecord {
    /// CSV of the query schedule, one row per charged query.
    pub fn query_log_csv(&self) -> String {
        let mut out = String::from("round,sample_id\n");
        for r in &self.rounds {
            for id in &r.queried {
                out.push_str(&format!("{},{}\n", r.round, id));
            }
        }
        out
    }
}

/// Pretrained encoder under a freshly initialized classification head.
pub fn assemble_substitute(
    artifact: &EncoderArtifact,
    num_classes: usize,
    seed: u64,
) -> Result<SubstituteModel> {
    artifact.validate()?;
    let arch = classifier(&artifact.arch, &artifact.input_shape, artifact.latent_dim, num_classes)?;
    let mut net = Network::init(arch, seed)?;
    net.params.overwrite_from(&artifact.params)?;
    Ok(SubstituteModel {
        model: ClassifierModel { net, trained: false },
        encoder_method: artifact.method,
    })
}

/// Prediction entropy of the substitute on each sample.
pub fn entropy_scores(model: &ClassifierModel, samples: &[Sample]) -> Result<Vec<f64>> {
    let mut scores = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(256) {
        let images: Vec<&Tensor> = chunk.iter().map(|s| &s.image).collect();
        for row in model.predict_posterior(&images)? {
            scores.push(entropy(&row));
        }
    }
    Ok(scores)
}

/// Indices of the `k` highest scores, ties broken by ascending sample id.
pub fn select_topk(scores: &[f64], samples: &[Sample], k: usize) -> Result<Vec<usize>> {
    if scores.len() != samples.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores for {} samples",
            scores.len(),
            samples.len()
        )));
    }
    if k > samples.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot select {k} of {} samples",
            samples.len()
        )));
    }
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(samples[a].id.cmp(&samples[b].id))
    });
    idx.truncate(k);
    Ok(idx)
}

/// Uniform selection of `k` indices without replacement.
pub fn random_select(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if k > n {
        return Err(Error::InvalidArgument(format!("cannot select {k} of {n} samples")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.truncate(k);
    Ok(idx)
}

/// Soft target row from an oracle response: renormalized top-k scores
/// when a posterior was returned, otherwise one-hot on the label.
pub fn response_target(response: &OracleResponse, num_classes: usize) -> Result<Vec<f64>> {
    if response.label >= num_classes {
        return Err(Error::InvalidArgument(format!(
            "oracle label {} out of range for {num_classes} classes",
            response.label
        )));
    }
    match &response.posterior {
        None => Ok(one_hot(num_classes, response.label)),
        Some(pairs) => {
            let mut row = vec![0.0; num_classes];
            let mut total = 0.0;
            for &(index, p) in pairs {
                if index >= num_classes {
                    return Err(Error::InvalidArgument(format!(
                        "oracle class index {index} out of range for {num_classes} classes"
                    )));
                }
                if !(p.is_finite() && p >= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "oracle probability {p} for class {index} is not a probability"
                    )));
                }
                row[index] += p;
                total += p;
            }
            if total <= 0.0 {
                return Err(Error::InvalidArgument(
                    "oracle posterior has zero total mass".into(),
                ));
            }
            row.iter_mut().for_each(|v| *v /= total);
            Ok(row)
        }
    }
}

/// Retrain the substitute on all accumulated (image, target) pairs.
/// Returns the updated model and its final epoch mean loss.
pub fn train_substitute(
    substitute: &SubstituteModel,
    artifact: &EncoderArtifact,
    examples: &[(Tensor, Vec<f64>)],
    cfg: &ExtractionConfig,
    round: u32,
) -> Result<(SubstituteModel, f64)> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("retraining with no labeled examples".into()));
    }
    let num_classes = substitute.model.num_classes()?;
    let start = if cfg.head_reinit {
        // fresh head, pretrained (or current) encoder, per-round seed
        let mut fresh =
            assemble_substitute(artifact, num_classes, cfg.seed ^ (round as u64 + 1))?;
        if substitute.model.trained {
            // keep a finetuned encoder across rounds
            fresh.model.net.params.overwrite_from(
                &substitute.model.net.params.filtered(|n| n.starts_with(ENCODER_PREFIX)),
            )?;
        }
        fresh.model.net
    } else {
        substitute.model.net.clone()
    };
    let train = TrainConfig {
        batch_size: cfg.train.batch_size.min(examples.len()),
        seed: cfg.train.seed ^ (round as u64),
        ..cfg.train.clone()
    };
    let freeze = |name: &str| !cfg.encoder_finetune && name.starts_with(ENCODER_PREFIX);
    let (net, curve) = fit(start, examples, &train, &freeze)?;
    let loss = curve.last().copied().unwrap_or(f64::NAN);
    Ok((
        SubstituteModel {
            model: ClassifierModel { net, trained: true },
            encoder_method: substitute.encoder_method,
        },
        loss,
    ))
}

/// Full active extraction. Queries exactly `cfg.budget` pool samples in
/// `cfg.itera` equal rounds, without replacement, and retrains after each
/// round. `eval_set` (if given) is scored unchargedly after every round.
pub fn run_extraction(
    artifact: &EncoderArtifact,
    oracle: &dyn Oracle,
    pool: &[Sample],
    eval_set: Option<&[Sample]>,
    cfg: &ExtractionConfig,
    ledger: &mut QueryLedger,
) -> Result<(SubstituteModel, RunRecord)> {
    cfg.validate()?;
    if (pool.len() as u64) < cfg.budget {
        return Err(Error::InvalidArgument(format!(
            "pool of {} cannot supply a budget of {}",
            pool.len(),
            cfg.budget
        )));
    }
    let per_round = (cfg.budget / cfg.itera as u64) as usize;
    let num_classes = oracle.num_classes();
    let mut substitute = assemble_substitute(artifact, num_classes, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut remaining: Vec<Sample> = pool.to_vec();
    let mut accumulated: Vec<(Tensor, Vec<f64>)> = Vec::with_capacity(cfg.budget as usize);
    let mut rounds = Vec::with_capacity(cfg.itera as usize);
    for round in 0..cfg.itera {
        let picked = match cfg.selector {
            Selector::Entropy => {
                let scores = entropy_scores(&substitute.model, &remaining)?;
                select_topk(&scores, &remaining, per_round)?
            }
            Selector::Random => random_select(remaining.len(), per_round, &mut rng)?,
        };
        let mut picked = picked;
        picked.sort_unstable_by(|a, b| b.cmp(a));
        let mut batch = Vec::with_capacity(per_round);
        for i in picked {
            batch.push(remaining.swap_remove(i));
        }
        batch.sort_by_key(|s| s.id);
        ledger.begin_round(round);
        let responses = oracle.query_batch(&batch, ledger)?;
        for (sample, response) in batch.iter().zip(&responses) {
            accumulated.push((sample.image.clone(), response_target(response, num_classes)?));
        }
        let (next, train_loss) =
            train_substitute(&substitute, artifact, &accumulated, cfg, round)?;
        substitute = next;
        let round_fidelity = match eval_set {
            Some(set) => Some(fidelity(&substitute.model, oracle, set)?.fidelity),
            None => None,
        };
        rounds.push(RoundRecord {
            round,
            queried: batch.iter().map(|s| s.id).collect(),
            spent_after: ledger.spent(),
            train_loss,
            fidelity: round_fidelity,
        });
    }
    Ok((substitute, RunRecord { rounds, total_spent: ledger.spent() }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_generate;
    use crate::oracle::{make_local_victim, LocalVictim, OracleConfig, ResponseMode};
    use crate::ssl::{rs_encoder, SslConfig};

    const SHAPE: [usize; 3] = [1, 8, 8];

    fn pool(per_class: usize) -> Vec<Sample> {
        synth_generate(4, per_class, &SHAPE, 0, 11)
            .unwrap()
            .into_iter()
            .map(|l| l.sample)
            .collect()
    }

    fn victim() -> LocalVictim {
        let data = synth_generate(4, 10, &SHAPE, 0, 99).unwrap();
        let net = Network::init(classifier("mlp-s", &SHAPE, 16, 4).unwrap(), 3).unwrap();
        let examples: Vec<(Tensor, Vec<f64>)> = data
            .iter()
            .map(|l| (l.sample.image.clone(), one_hot(4, l.label)))
            .collect();
        let t = TrainConfig { learning_rate: 0.3, batch_size: 8, epochs: 40, seed: 0 };
        let (net, _) = fit(net, &examples, &t, &|_| false).unwrap();
        make_local_victim(ClassifierModel { net, trained: true }, OracleConfig::default())
            .unwrap()
    }

    fn artifact() -> crate::ssl::EncoderArtifact {
        let cfg = SslConfig { arch: "mlp-s".into(), latent_dim: 16, ..SslConfig::default() };
        rs_encoder(&pool(2), &SHAPE, &cfg).unwrap()
    }

    fn extraction_cfg(budget: u64, itera: u32) -> ExtractionConfig {
        ExtractionConfig {
            budget,
            itera,
            train: TrainConfig { learning_rate: 0.2, batch_size: 8, epochs: 15, seed: 0 },
            head_reinit: true,
            encoder_finetune: true,
            selector: Selector::Entropy,
            seed: 7,
        }
    }

    #[test]
    fn budget_must_divide_into_rounds() {
        assert!(extraction_cfg(10, 3).validate().is_err());
        assert!(extraction_cfg(12, 3).validate().is_ok());
    }

    #[test]
    fn select_topk_orders_by_score_then_id() {
        let samples: Vec<Sample> = (0..4)
            .map(|i| Sample::new(i, Tensor::zeros(SHAPE.to_vec())).unwrap())
            .collect();
        let scores = [0.5, 0.9, 0.5, 0.1];
        let picked = select_topk(&scores, &samples, 3).unwrap();
        assert_eq!(picked, vec![1, 0, 2]);
    }

    #[test]
    fn response_target_one_hot_for_label_only() {
        let r = OracleResponse { sample_id: 0, label: 2, posterior: None };
        assert_eq!(response_target(&r, 4).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn response_target_renormalizes_truncated_posterior() {
        let r = OracleResponse {
            sample_id: 0,
            label: 1,
            posterior: Some(vec![(1, 0.6), (3, 0.2)]),
        };
        let t = response_target(&r, 4).unwrap();
        assert!((t[1] - 0.75).abs() < 1e-12);
        assert!((t[3] - 0.25).abs() < 1e-12);
        assert_eq!((t[0], t[2]), (0.0, 0.0));
    }

    #[test]
    fn extraction_spends_exactly_the_budget_without_replacement() {
        let v = victim();
        let mut ledger = QueryLedger::new(1000, 0.0);
        let cfg = extraction_cfg(24, 4);
        let (_, record) =
            run_extraction(&artifact(), &v, &pool(10), None, &cfg, &mut ledger).unwrap();
        assert_eq!(ledger.spent(), 24);
        assert_eq!(record.total_spent, 24);
        let mut all: Vec<u64> = record.rounds.iter().flat_map(|r| r.queried.clone()).collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), n, "queried ids must be unique");
        for r in &record.rounds {
            assert_eq!(r.queried.len(), 6);
        }
    }

    #[test]
    fn extraction_is_deterministic_per_seed() {
        let v = victim();
        let cfg = extraction_cfg(16, 4);
        let run = || {
            let mut ledger = QueryLedger::new(1000, 0.0);
            run_extraction(&artifact(), &v, &pool(10), None, &cfg, &mut ledger).unwrap()
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(a.model.net.params, b.model.net.params);
        assert_eq!(ra.query_log_csv(), rb.query_log_csv());
    }

    #[test]
    fn fidelity_is_tracked_per_round() {
        let v = victim();
        let eval: Vec<Sample> = synth_generate(4, 5, &SHAPE, 0, 123)
            .unwrap()
            .into_iter()
            .map(|l| l.sample)
            .collect();
        let mut ledger = QueryLedger::new(1000, 0.0);
        let cfg = extraction_cfg(16, 2);
        let (_, record) =
            run_extraction(&artifact(), &v, &pool(10), Some(&eval), &cfg, &mut ledger).unwrap();
        assert!(record.rounds.iter().all(|r| r.fidelity.is_some()));
        // evaluation must not be billed
        assert_eq!(ledger.spent(), 16);
    }

    #[test]
    fn label_only_oracle_trains_on_hard_labels() {
        let data = synth_generate(4, 10, &SHAPE, 0, 99).unwrap();
        let net = Network::init(classifier("mlp-s", &SHAPE, 16, 4).unwrap(), 3).unwrap();
        let examples: Vec<(Tensor, Vec<f64>)> = data
            .iter()
            .map(|l| (l.sample.image.clone(), one_hot(4, l.label)))
            .collect();
        let t = TrainConfig { learning_rate: 0.3, batch_size: 8, epochs: 40, seed: 0 };
        let (net, _) = fit(net, &examples, &t, &|_| false).unwrap();
        let v = make_local_victim(
            ClassifierModel { net, trained: true },
            OracleConfig { mode: ResponseMode::LabelOnly, ..Default::default() },
        )
        .unwrap();
        let mut ledger = QueryLedger::new(1000, 0.0);
        let cfg = extraction_cfg(16, 2);
        let (sub, _) =
            run_extraction(&artifact(), &v, &pool(10), None, &cfg, &mut ledger).unwrap();
        assert!(sub.model.trained);
    }

    #[test]
    fn frozen_encoder_stays_bitwise_identical() {
        let v = victim();
        let art = artifact();
        let mut cfg = extraction_cfg(16, 2);
        cfg.encoder_finetune = false;
        let mut ledger = QueryLedger::new(1000, 0.0);
        let (sub, _) = run_extraction(&art, &v, &pool(10), None, &cfg, &mut ledger).unwrap();
        let enc = sub.model.net.params.filtered(|n| n.starts_with(ENCODER_PREFIX));
        assert_eq!(enc, art.params);
    }

    #[test]
    fn pool_smaller_than_budget_is_rejected() {
        let v = victim();
        let mut ledger = QueryLedger::new(1000, 0.0);
        let cfg = extraction_cfg(100, 4);
        assert!(run_extraction(&artifact(), &v, &pool(2), None, &cfg, &mut ledger).is_err());
    }
}
