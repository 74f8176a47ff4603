//! Randomized invariant checks over the public surface: selection,
//! perturbation bounds, momentum interpolation, metering, entropy
//! bounds, split partitioning, and checkpoint round-trips.

use prextract::data::{split, LabeledSample, Sample};
use prextract::extraction::select_topk;
use prextract::model::ClassifierModel;
use prextract::nn::arch::classifier;
use prextract::nn::loss::entropy;
use prextract::nn::{checkpoint, Network, ParamSet, Tensor};
use prextract::oracle::QueryLedger;
use prextract::ssl::moco::moco_momentum_update;
use proptest::prelude::*;

fn samples_with_ids(ids: &[u64]) -> Vec<Sample> {
    ids.iter()
        .map(|&id| Sample::new(id, Tensor::zeros(vec![1, 2, 2])).unwrap())
        .collect()
}

/// Reference selector: full stable sort by (score desc, id asc), first k.
fn select_topk_reference(scores: &[f64], ids: &[u64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(ids[a].cmp(&ids[b]))
    });
    idx.truncate(k);
    idx
}

proptest! {
    #[test]
    fn topk_selection_matches_sort_reference(
        // coarse scores force heavy ties
        raw in prop::collection::vec((0u8..8, 0u64..1000), 1..200),
        k_frac in 0.0f64..1.0,
    ) {
        let mut ids: Vec<u64> = raw.iter().map(|&(_, id)| id).collect();
        ids.sort_unstable();
        ids.dedup();
        let scores: Vec<f64> = raw.iter().take(ids.len()).map(|&(s, _)| s as f64 / 7.0).collect();
        let k = ((scores.len() as f64) * k_frac) as usize;
        let samples = samples_with_ids(&ids);
        let got = select_topk(&scores, &samples, k).unwrap();
        prop_assert_eq!(got, select_topk_reference(&scores, &ids, k));
    }

    #[test]
    fn momentum_update_stays_between_endpoints(
        a in prop::collection::vec(-10.0f64..10.0, 4),
        b in prop::collection::vec(-10.0f64..10.0, 4),
        m in 0.0f64..0.999,
    ) {
        let mut theta_k = ParamSet::new();
        theta_k.insert("w", Tensor::new(vec![4], a.clone()).unwrap()).unwrap();
        let mut theta_q = ParamSet::new();
        theta_q.insert("w", Tensor::new(vec![4], b.clone()).unwrap()).unwrap();
        let out = moco_momentum_update(&theta_k, &theta_q, m).unwrap();
        for ((&x, &y), &z) in a.iter().zip(&b).zip(out.get("w").unwrap().data()) {
            prop_assert!(z >= x.min(y) - 1e-12 && z <= x.max(y) + 1e-12);
            prop_assert!((z - (m * x + (1.0 - m) * y)).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_is_bounded_by_ln_k(
        weights in prop::collection::vec(0.001f64..1.0, 1..20),
    ) {
        let z: f64 = weights.iter().sum();
        let p: Vec<f64> = weights.iter().map(|w| w / z).collect();
        let h = entropy(&p);
        prop_assert!(h >= -1e-12);
        prop_assert!(h <= (p.len() as f64).ln() + 1e-9);
    }

    #[test]
    fn ledger_charges_are_all_or_nothing(
        budget in 0u64..50,
        batches in prop::collection::vec(0usize..20, 1..10),
    ) {
        let mut ledger = QueryLedger::new(budget, 0.5);
        let mut next_id = 0u64;
        for n in batches {
            let ids: Vec<u64> = (next_id..next_id + n as u64).collect();
            next_id += n as u64;
            let before = ledger.spent();
            match ledger.charge(&ids) {
                Ok(()) => prop_assert_eq!(ledger.spent(), before + n as u64),
                Err(_) => prop_assert_eq!(ledger.spent(), before),
            }
            prop_assert!(ledger.spent() <= budget);
            prop_assert_eq!(ledger.log().len() as u64, ledger.spent());
        }
    }

    #[test]
    fn split_partitions_without_loss(
        n in 1usize..60,
        cut in 0.0f64..1.0,
        seed in 0u64..1000,
    ) {
        let data: Vec<LabeledSample> = (0..n)
            .map(|i| {
                LabeledSample::new(
                    Sample::new(i as u64, Tensor::zeros(vec![1, 2, 2])).unwrap(),
                    0,
                    None,
                )
                .unwrap()
            })
            .collect();
        let parts = split(&data, &[cut, 1.0 - cut], seed).unwrap();
        prop_assert_eq!(parts.len(), 2);
        let mut seen: Vec<u64> = parts
            .iter()
            .flatten()
            .map(|l| l.sample.id)
            .collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n as u64).collect::<Vec<u64>>());
    }

    #[test]
    fn checkpoint_bytes_round_trip(
        values in prop::collection::vec(-1e6f64..1e6, 1..40),
    ) {
        let mut params = ParamSet::new();
        let half = values.len() / 2;
        params.insert("a.w", Tensor::new(vec![values.len() - half], values[half..].to_vec()).unwrap()).unwrap();
        if half > 0 {
            params.insert("b.w", Tensor::new(vec![half], values[..half].to_vec()).unwrap()).unwrap();
        }
        let bytes = checkpoint::to_bytes("arch", &params);
        let (name, loaded) = checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(name, "arch");
        prop_assert_eq!(&loaded, &params);
        // byte-identical re-serialization
        prop_assert_eq!(checkpoint::to_bytes("arch", &loaded), bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fgsm_respects_infinity_ball_and_pixel_range(
        pixels in prop::collection::vec(0.0f64..1.0, 16),
        label in 0usize..3,
        eps_idx in 0usize..8,
    ) {
        let epsilon = prextract::adversarial::EPSILON_GRID[eps_idx];
        let net = Network::init(classifier("mlp-s", &[1, 4, 4], 4, 3).unwrap(), 11).unwrap();
        let model = ClassifierModel { net, trained: true };
        let image = Tensor::new(vec![1, 4, 4], pixels).unwrap();
        let adv = prextract::adversarial::fgsm_batch(&model, &[&image], &[label], epsilon)
            .unwrap()
            .remove(0);
        for (&x, &a) in image.data().iter().zip(adv.data()) {
            prop_assert!((a - x).abs() <= epsilon + 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
