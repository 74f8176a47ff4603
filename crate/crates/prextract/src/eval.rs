//! Substitute scoring: fidelity (label agreement with the victim),
//! accuracy against ground truth, and the budgeted-fidelity check.

use crate::data::{LabeledSample, Sample};
use crate::error::{Error, Result};
use crate::model::ClassifierModel;
use crate::nn::Tensor;
use crate::oracle::{Oracle, QueryLedger};
use serde::{Deserialize, Serialize};

/// Agreement summary over one evaluation set. `matrix[v][s]` counts
/// samples the victim labels `v` and the substitute labels `s`; fidelity
/// is the trace mass.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FidelityReport {
    pub fidelity: f64,
    pub accuracy: Option<f64>,
    pub n: usize,
    pub matrix: Vec<Vec<usize>>,
}

/// Label-agreement fraction between victim and substitute on `samples`.
/// Victim labels come from uncharged measurement; this is experimenter
/// scoring, not attacker querying.
pub fn fidelity(
    substitute: &ClassifierModel,
    victim: &dyn Oracle,
    samples: &[Sample],
) -> Result<FidelityReport> {
    fidelity_with_truth(substitute, victim, samples, None)
}

/// As [`fidelity`], also scoring accuracy when ground-truth labels are
/// supplied (aligned with `samples`).
pub fn fidelity_with_truth(
    substitute: &ClassifierModel,
    victim: &dyn Oracle,
    samples: &[Sample],
    truth: Option<&[usize]>,
) -> Result<FidelityReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("fidelity over an empty sample set".into()));
    }
    if let Some(t) = truth {
        if t.len() != samples.len() {
            return Err(Error::InvalidArgument(format!(
                "{} truth labels for {} samples",
                t.len(),
                samples.len()
            )));
        }
    }
    let num_classes = victim.num_classes();
    if substitute.num_classes()? != num_classes {
        return Err(Error::InvalidArgument(format!(
            "substitute has {} classes, victim has {num_classes}",
            substitute.num_classes()?
        )));
    }
    let images: Vec<&Tensor> = samples.iter().map(|s| &s.image).collect();
    let sub_labels = substitute.predict_labels(&images)?;
    let vic_labels: Vec<usize> = victim
        .measure_batch(samples)?
        .into_iter()
        .map(|r| r.label)
        .collect();
    let mut matrix = vec![vec![0usize; num_classes]; num_classes];
    let mut agree = 0usize;
    let mut correct = 0usize;
    for (i, (&v, &s)) in vic_labels.iter().zip(&sub_labels).enumerate() {
        matrix[v][s] += 1;
        if v == s {
            agree += 1;
        }
        if let Some(t) = truth {
            if s == t[i] {
                correct += 1;
            }
        }
    }
    Ok(FidelityReport {
        fidelity: agree as f64 / samples.len() as f64,
        accuracy: truth.map(|_| correct as f64 / samples.len() as f64),
        n: samples.len(),
        matrix,
    })
}

/// Ground-truth accuracy of a classifier over a labeled set.
pub fn accuracy(model: &ClassifierModel, test: &[LabeledSample]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("accuracy over an empty test set".into()));
    }
    let images: Vec<&Tensor> = test.iter().map(|l| &l.sample.image).collect();
    let predicted = model.predict_labels(&images)?;
    let correct = predicted
        .iter()
        .zip(test)
        .filter(|(&p, l)| p == l.label)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Did the extraction reach fidelity `t` within query budget `q`?
pub fn check_tq_mea(report: &FidelityReport, ledger: &QueryLedger, t: f64, q: u64) -> bool {
    report.fidelity >= t && ledger.spent() <= q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::one_hot;
    use crate::nn::arch::classifier;
    use crate::nn::{Network, TrainConfig};
    use crate::oracle::{make_local_victim, OracleConfig};

    fn trained(seed: u64) -> ClassifierModel {
        let net =
            Network::init(classifier("mlp-s", &[1, 8, 8], 8, 3).unwrap(), seed).unwrap();
        let mut examples = Vec::new();
        for i in 0..6 {
            let mut img = Tensor::zeros(vec![1, 8, 8]);
            img.data_mut()[i * 9] = 1.0;
            examples.push((img, one_hot(3, i % 3)));
        }
        let cfg = TrainConfig { learning_rate: 0.5, batch_size: 3, epochs: 120, seed: 0 };
        let (net, _) = crate::model::fit(net, &examples, &cfg, &|_| false).unwrap();
        ClassifierModel { net, trained: true }
    }

    fn samples(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let mut img = Tensor::zeros(vec![1, 8, 8]);
                img.data_mut()[(i * 9) % 64] = 1.0;
                Sample::new(i as u64, img).unwrap()
            })
            .collect()
    }

    #[test]
    fn self_fidelity_is_one() {
        let model = trained(1);
        let victim = make_local_victim(model.clone(), OracleConfig::default()).unwrap();
        let report = fidelity(&model, &victim, &samples(12)).unwrap();
        assert_eq!(report.fidelity, 1.0);
        assert_eq!(report.n, 12);
        let trace: usize = (0..3).map(|i| report.matrix[i][i]).sum();
        assert_eq!(trace, 12);
    }

    #[test]
    fn matrix_row_sums_count_victim_labels() {
        let sub = trained(2);
        let victim = make_local_victim(trained(1), OracleConfig::default()).unwrap();
        let report = fidelity(&sub, &victim, &samples(20)).unwrap();
        let total: usize = report.matrix.iter().flatten().sum();
        assert_eq!(total, 20);
        let diag: usize = (0..3).map(|i| report.matrix[i][i]).sum();
        assert!((report.fidelity - diag as f64 / 20.0).abs() < 1e-12);
    }

    #[test]
    fn accuracy_against_known_labels() {
        let model = trained(1);
        let images = samples(6);
        let refs: Vec<&Tensor> = images.iter().map(|s| &s.image).collect();
        let predicted = model.predict_labels(&refs).unwrap();
        let test: Vec<LabeledSample> = images
            .iter()
            .zip(&predicted)
            .map(|(s, &p)| LabeledSample::new(s.clone(), p, None).unwrap())
            .collect();
        assert_eq!(accuracy(&model, &test).unwrap(), 1.0);
    }

    #[test]
    fn tq_check_combines_threshold_and_budget() {
        let report = FidelityReport { fidelity: 0.8, accuracy: None, n: 10, matrix: vec![] };
        let mut ledger = QueryLedger::new(100, 0.0);
        ledger.charge(&[1, 2, 3]).unwrap();
        assert!(check_tq_mea(&report, &ledger, 0.8, 3));
        assert!(!check_tq_mea(&report, &ledger, 0.81, 3));
        assert!(!check_tq_mea(&report, &ledger, 0.8, 2));
    }

    #[test]
    fn empty_sample_set_is_rejected() {
        let model = trained(1);
        let victim = make_local_victim(model.clone(), OracleConfig::default()).unwrap();
        assert!(fidelity(&model, &victim, &[]).is_err());
    }
}
