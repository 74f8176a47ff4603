//! Metered black-box victims.
//!
//! The oracle surface is the only channel between attacker and victim:
//! it exposes prediction queries and nothing else — no parameters, no
//! gradients. Every attack query passes through a [`QueryLedger`] that
//! enforces the budget and accumulates billing.

pub mod wire;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{argmax_lowest, ClassifierModel};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One victim prediction. In top-k mode `posterior` holds (class index,
/// probability) pairs in descending probability order; `label` is always
/// the top-1 class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub sample_id: u64,
    pub label: usize,
    pub posterior: Option<Vec<(usize, f64)>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseMode {
    LabelOnly,
    TopkPosterior,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleConfig {
    pub mode: ResponseMode,
    pub k: usize,
    /// Serving-side noise hook; defaults off so the victim is a stable
    /// deterministic function.
    pub noise_level: f64,
    pub noise_seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            mode: ResponseMode::TopkPosterior,
            k: usize::MAX,
            noise_level: 0.0,
            noise_seed: 0,
        }
    }
}

/// Budget and billing record of all charged oracle interactions.
/// `spent` is monotone, never exceeds the budget, and always equals the
/// log length.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QueryLedger {
    budget: u64,
    spent: u64,
    unit_price: f64,
    log: Vec<(u32, u64)>,
    current_round: u32,
}

impl QueryLedger {
    pub fn new(budget: u64, unit_price: f64) -> Self {
        QueryLedger { budget, spent: 0, unit_price, log: Vec::new(), current_round: 0 }
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn spent(&self) -> u64 {
        self.spent
    }

    pub fn unit_price(&self) -> f64 {
        self.unit_price
    }

    pub fn log(&self) -> &[(u32, u64)] {
        &self.log
    }

    pub fn begin_round(&mut self, round: u32) {
        self.current_round = round;
    }

    /// Atomic all-or-nothing charge: either the whole batch fits in the
    /// remaining budget or the ledger is left untouched.
    pub fn charge(&mut self, sample_ids: &[u64]) -> Result<()> {
        let n = sample_ids.len() as u64;
        if self.spent + n > self.budget {
            return Err(Error::BudgetExhausted {
                spent: self.spent,
                budget: self.budget,
                requested: n,
            });
        }
        for &id in sample_ids {
            self.log.push((self.current_round, id));
        }
        self.spent += n;
        Ok(())
    }
}

/// Billing summary: (queries, currency), with currency = spent x unit price.
pub fn cost_report(ledger: &QueryLedger) -> (u64, f64) {
    (ledger.spent, ledger.spent as f64 * ledger.unit_price)
}

/// The black-box query surface. Implementations expose predictions only;
/// there is no operation returning parameters or gradients.
pub trait Oracle: Send + Sync {
    fn num_classes(&self) -> usize;

    /// Charged query: bills the ledger (all-or-nothing) and returns
    /// responses aligned with the input order.
    fn query_batch(
        &self,
        samples: &[Sample],
        ledger: &mut QueryLedger,
    ) -> Result<Vec<OracleResponse>>;

    /// Uncharged experimenter measurement, used for validation fidelity
    /// and ASR scoring outside the attacker's budget.
    fn measure_batch(&self, samples: &[Sample]) -> Result<Vec<OracleResponse>>;
}

/// A local victim model sealed behind the oracle trait. The wrapped
/// network is private; nothing on the public surface reaches it.
pub struct LocalVictim {
    model: ClassifierModel,
    cfg: OracleConfig,
    num_classes: usize,
}

/// Seal a trained classifier as a metered black box.
pub fn make_local_victim(model: ClassifierModel, cfg: OracleConfig) -> Result<LocalVictim> {
    if !model.trained {
        return Err(Error::InvalidArgument(
            "cannot expose an untrained model as a victim oracle".into(),
        ));
    }
    let num_classes = model.num_classes()?;
    if cfg.mode == ResponseMode::TopkPosterior && cfg.k == 0 {
        return Err(Error::InvalidConfig("top-k mode requires k >= 1".into()));
    }
    Ok(LocalVictim { model, cfg, num_classes })
}

impl LocalVictim {
    fn respond(&self, samples: &[Sample]) -> Result<Vec<OracleResponse>> {
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        let images: Vec<&crate::nn::Tensor> = samples.iter().map(|s| &s.image).collect();
        let mut posteriors = self.model.predict_posterior(&images)?;
        if self.cfg.noise_level > 0.0 {
            for (s, row) in samples.iter().zip(posteriors.iter_mut()) {
                // per-sample seeded so repeated queries stay deterministic
                let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.noise_seed ^ s.id);
                for v in row.iter_mut() {
                    *v = (*v + rng.gen_range(-self.cfg.noise_level..self.cfg.noise_level)).max(0.0);
                }
                let z: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= z);
            }
        }
        Ok(samples
            .iter()
            .zip(posteriors)
            .map(|(s, row)| build_response(s.id, &row, &self.cfg, self.num_classes))
            .collect())
    }
}

fn build_response(
    sample_id: u64,
    posterior: &[f64],
    cfg: &OracleConfig,
    num_classes: usize,
) -> OracleResponse {
    let label = argmax_lowest(posterior);
    let topk = match cfg.mode {
        ResponseMode::LabelOnly => None,
        ResponseMode::TopkPosterior => {
            let mut indexed: Vec<(usize, f64)> =
                posterior.iter().cloned().enumerate().collect();
            // descending probability, ascending index on ties
            indexed.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            indexed.truncate(cfg.k.min(num_classes));
            Some(indexed)
        }
    };
    OracleResponse { sample_id, label, posterior: topk }
}

impl Oracle for LocalVictim {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn query_batch(
        &self,
        samples: &[Sample],
        ledger: &mut QueryLedger,
    ) -> Result<Vec<OracleResponse>> {
        let ids: Vec<u64> = samples.iter().map(|s| s.id).collect();
        ledger.charge(&ids)?;
        self.respond(samples)
    }

    fn measure_batch(&self, samples: &[Sample]) -> Result<Vec<OracleResponse>> {
        self.respond(samples)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::one_hot;
    use crate::nn::arch::classifier;
    use crate::nn::{Network, Tensor, TrainConfig};

    fn trained_victim(num_classes: usize) -> ClassifierModel {
        let net = Network::init(classifier("mlp-s", &[1, 8, 8], 8, num_classes).unwrap(), 5)
            .unwrap();
        let examples = vec![(Tensor::zeros(vec![1, 8, 8]), one_hot(num_classes, 0))];
        let cfg = TrainConfig { learning_rate: 0.1, batch_size: 1, epochs: 1, seed: 0 };
        let (net, _) = crate::model::fit(net, &examples, &cfg, &|_| false).unwrap();
        ClassifierModel { net, trained: true }
    }

    fn samples(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let mut img = Tensor::zeros(vec![1, 8, 8]);
                img.data_mut()[i % 64] = 1.0;
                Sample::new(i as u64, img).unwrap()
            })
            .collect()
    }

    #[test]
    fn untrained_model_is_rejected() {
        let mut model = trained_victim(3);
        model.trained = false;
        assert!(make_local_victim(model, OracleConfig::default()).is_err());
    }

    #[test]
    fn label_only_mode_carries_no_posterior() {
        let cfg = OracleConfig { mode: ResponseMode::LabelOnly, ..Default::default() };
        let victim = make_local_victim(trained_victim(3), cfg).unwrap();
        let mut ledger = QueryLedger::new(10, 0.0);
        let rs = victim.query_batch(&samples(2), &mut ledger).unwrap();
        assert!(rs.iter().all(|r| r.posterior.is_none()));
    }

    #[test]
    fn full_topk_posterior_sums_to_one_and_descends() {
        let victim = make_local_victim(trained_victim(4), OracleConfig::default()).unwrap();
        let rs = victim.measure_batch(&samples(3)).unwrap();
        for r in rs {
            let p = r.posterior.unwrap();
            assert_eq!(p.len(), 4);
            let sum: f64 = p.iter().map(|(_, v)| v).sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(p.windows(2).all(|w| w[0].1 >= w[1].1));
            assert_eq!(r.label, p[0].0);
        }
    }

    #[test]
    fn repeated_queries_are_identical() {
        let victim = make_local_victim(trained_victim(3), OracleConfig::default()).unwrap();
        let batch = samples(4);
        let mut ledger = QueryLedger::new(100, 0.0);
        let a = victim.query_batch(&batch, &mut ledger).unwrap();
        let b = victim.query_batch(&batch, &mut ledger).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn budget_boundary_is_all_or_nothing() {
        let victim = make_local_victim(trained_victim(3), OracleConfig::default()).unwrap();
        let mut ledger = QueryLedger::new(100, 0.0);
        let batch = samples(100);
        victim.query_batch(&batch, &mut ledger).unwrap();
        assert_eq!(ledger.spent(), 100);
        let err = victim.query_batch(&samples(1), &mut ledger).unwrap_err();
        assert!(matches!(err, Error::BudgetExhausted { .. }));
        assert_eq!(ledger.spent(), 100);
        assert_eq!(ledger.log().len(), 100);
    }

    #[test]
    fn empty_batch_costs_nothing() {
        let victim = make_local_victim(trained_victim(3), OracleConfig::default()).unwrap();
        let mut ledger = QueryLedger::new(5, 1.0);
        let rs = victim.query_batch(&[], &mut ledger).unwrap();
        assert!(rs.is_empty());
        assert_eq!(ledger.spent(), 0);
    }

    #[test]
    fn billing_matches_published_pricing_arithmetic() {
        let mut ledger = QueryLedger::new(10_000, 0.002);
        ledger.charge(&(0..4000).collect::<Vec<u64>>()).unwrap();
        let (q, cost) = cost_report(&ledger);
        assert_eq!(q, 4000);
        assert!((cost - 8.00).abs() < 1e-9);

        let mut ledger = QueryLedger::new(10_000, 0.0012);
        ledger.charge(&(0..1080).collect::<Vec<u64>>()).unwrap();
        let (q, cost) = cost_report(&ledger);
        assert_eq!(q, 1080);
        assert!((cost - 1.296).abs() < 1e-9);
    }

    #[test]
    fn responses_align_with_input_order() {
        let victim = make_local_victim(trained_victim(3), OracleConfig::default()).unwrap();
        let mut batch = samples(5);
        batch.reverse();
        let rs = victim.measure_batch(&batch).unwrap();
        for (s, r) in batch.iter().zip(&rs) {
            assert_eq!(s.id, r.sample_id);
        }
    }
}
