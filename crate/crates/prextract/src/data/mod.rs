//! Dataset ingestion, deterministic splits, and synthetic desk-scale
//! generators for the IID and OOD proxy regimes.
//!
//! Datasets are immutable after construction and safe to share across
//! threads.

mod io;
mod synth;

pub use io::{ingest_directory, read_packed, write_packed};
pub use synth::synth_generate;

use crate::error::{Error, Result};
use crate::nn::Tensor;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// An unlabeled image sample with a stable id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    /// (channels, height, width), values in [0, 1].
    pub image: Tensor,
}

impl Sample {
    pub fn new(id: u64, image: Tensor) -> Result<Self> {
        if image.shape().len() != 3 {
            return Err(Error::Dataset(format!(
                "sample {id}: expected (channels, height, width) image, got {:?}",
                image.shape()
            )));
        }
        if image.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Dataset(format!("sample {id}: values outside [0, 1]")));
        }
        Ok(Sample { id, image })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub sample: Sample,
    pub label: usize,
    /// Optional soft target, summing to 1 with argmax equal to `label`.
    pub posterior: Option<Vec<f64>>,
}

impl LabeledSample {
    pub fn new(sample: Sample, label: usize, posterior: Option<Vec<f64>>) -> Result<Self> {
        if let Some(p) = &posterior {
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::Dataset(format!(
                    "sample {}: posterior sums to {s}",
                    sample.id
                )));
            }
            let argmax = p
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i);
            if argmax != Some(label) {
                return Err(Error::Dataset(format!(
                    "sample {}: posterior argmax disagrees with label {label}",
                    sample.id
                )));
            }
        }
        Ok(LabeledSample { sample, label, posterior })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Regime {
    Iid,
    Ood,
}

/// The attacker/experimenter view of one task: labeled victim training
/// data, an unlabeled proxy pool, and a labeled test set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub victim_train: Vec<LabeledSample>,
    pub proxy: Vec<Sample>,
    pub test: Vec<LabeledSample>,
    pub regime: Regime,
}

impl DatasetSplit {
    /// Proxy and test ids must be disjoint.
    pub fn validate(&self) -> Result<()> {
        let proxy_ids: std::collections::BTreeSet<u64> =
            self.proxy.iter().map(|s| s.id).collect();
        if proxy_ids.len() != self.proxy.len() {
            return Err(Error::Dataset("duplicate ids in proxy split".into()));
        }
        for t in &self.test {
            if proxy_ids.contains(&t.sample.id) {
                return Err(Error::Dataset(format!(
                    "id {} appears in both proxy and test splits",
                    t.sample.id
                )));
            }
        }
        Ok(())
    }
}

/// Deterministic shuffle-and-partition. Fractions must sum to 1 (±1e-9);
/// sizes are floored with the remainder assigned to the first split.
pub fn split(
    dataset: &[LabeledSample],
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<Vec<LabeledSample>>> {
    if dataset.is_empty() {
        return Err(Error::Dataset("split of empty dataset".into()));
    }
    if fractions.is_empty() {
        return Err(Error::InvalidArgument("no fractions given".into()));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "fractions sum to {total}, expected 1"
        )));
    }
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut sizes: Vec<usize> = fractions.iter().map(|f| (f * n as f64).floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    sizes[0] += n - assigned;

    let mut out = Vec::with_capacity(sizes.len());
    let mut cursor = 0;
    for size in sizes {
        out.push(order[cursor..cursor + size].iter().map(|&i| dataset[i].clone()).collect());
        cursor += size;
    }
    Ok(out)
}

/// Content hash of a sample collection (ids + pixel bytes), used as
/// provenance for encoder artifacts.
pub fn dataset_hash(samples: &[Sample]) -> String {
    let mut hasher = Sha256::new();
    for s in samples {
        hasher.update(s.id.to_le_bytes());
        for &v in s.image.data() {
            hasher.update(v.to_le_bytes());
        }
    }
    format!("{:x}", hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dummy(n: usize) -> Vec<LabeledSample> {
        (0..n)
            .map(|i| {
                let img = Tensor::zeros(vec![1, 8, 8]);
                LabeledSample::new(Sample::new(i as u64, img).unwrap(), 0, None).unwrap()
            })
            .collect()
    }

    #[test]
    fn single_fraction_takes_everything() {
        let parts = split(&dummy(7), &[1.0], 3).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].len(), 7);
    }

    #[test]
    fn eighty_twenty_on_ten_items() {
        let parts = split(&dummy(10), &[0.8, 0.2], 3).unwrap();
        assert_eq!((parts[0].len(), parts[1].len()), (8, 2));
    }

    #[test]
    fn traffic_recognition_split_arithmetic() {
        // 39,209 items at 80/20 must land on 31,368 / 7,841.
        let parts = split(&dummy(39_209), &[0.8, 0.2], 0).unwrap();
        assert_eq!((parts[0].len(), parts[1].len()), (31_368, 7_841));
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let data = dummy(20);
        let a = split(&data, &[0.5, 0.5], 9).unwrap();
        let b = split(&data, &[0.5, 0.5], 9).unwrap();
        let ids = |p: &Vec<LabeledSample>| p.iter().map(|s| s.sample.id).collect::<Vec<_>>();
        assert_eq!(ids(&a[0]), ids(&b[0]));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(split(&[], &[1.0], 0).is_err());
    }

    #[test]
    fn posterior_must_match_label() {
        let s = Sample::new(0, Tensor::zeros(vec![1, 8, 8])).unwrap();
        assert!(LabeledSample::new(s, 1, Some(vec![0.9, 0.1])).is_err());
    }
}
