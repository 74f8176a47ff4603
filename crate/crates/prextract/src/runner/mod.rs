//! Campaign orchestration: build the synthetic task per seed, train the
//! victim once, pretrain each encoder once, then run every
//! (method, budget) cell. Cells that fail are recorded and the campaign
//! continues. All output files are written atomically (temp + rename) and
//! byte-identical across reruns of the same config.

pub mod config;

pub use config::{load_config, ExperimentConfig, SCHEMA_VERSION};

use crate::adversarial::asr_sweep;
use crate::data::{dataset_hash, DatasetSplit, LabeledSample, Regime, Sample};
use crate::error::{Error, Result};
use crate::eval::fidelity_with_truth;
use crate::extraction::{run_extraction, ExtractionConfig, SubstituteModel};
use crate::model::{fit, one_hot, ClassifierModel};
use crate::nn::arch::classifier;
use crate::nn::{Network, Tensor, TrainConfig};
use crate::oracle::{cost_report, make_local_victim, LocalVictim, OracleConfig, QueryLedger};
use crate::ssl::{pretrain, EncoderArtifact, SslConfig, SslMethod};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

pub const THREADS_ENV: &str = "PREXTRACT_THREADS";

/// Id offsets keeping the three synthetic splits disjoint.
const PROXY_ID_BASE: u64 = 1_000_000;
const TEST_ID_BASE: u64 = 2_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignRow {
    pub method: String,
    pub budget: u64,
    pub seed: u64,
    pub fidelity: f64,
    pub accuracy: f64,
    pub spent: u64,
    pub currency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignFailure {
    pub method: String,
    pub budget: u64,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsrRow {
    pub method: String,
    pub seed: u64,
    pub epsilon: f64,
    pub asr: f64,
    pub n_clean_correct: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignOutput {
    pub rows: Vec<CampaignRow>,
    pub failures: Vec<CampaignFailure>,
    pub asr_rows: Vec<AsrRow>,
}

fn seed_mix(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(1000).wrapping_add(stream)
}

fn offset_ids(mut samples: Vec<LabeledSample>, base: u64) -> Vec<LabeledSample> {
    for s in samples.iter_mut() {
        s.sample.id += base;
    }
    samples
}

/// Synthetic task for one seed: labeled victim data, unlabeled proxy pool
/// (same or disjoint class family, per regime) and a labeled test set.
pub fn build_task(cfg: &ExperimentConfig, seed: u64) -> Result<DatasetSplit> {
    let t = &cfg.task;
    // The disjoint proxy family should be related to the victim's classes
    // the way a public unlabeled corpus relates to a private training set:
    // different semantics, shared low-level statistics. Offset 18 lands on
    // generator classes whose orientations and frequency bands sit near the
    // victim family's while identities stay disjoint; a bare num_classes
    // offset would scatter orientations and leave no transferable signal.
    let proxy_offset = match t.regime {
        Regime::Iid => 0,
        Regime::Ood => 18usize.max(t.num_classes),
    };
    let victim_train = crate::data::synth_generate(
        t.num_classes,
        t.victim_per_class,
        &t.image_shape,
        0,
        seed_mix(seed, 1),
    )?;
    let proxy = offset_ids(
        crate::data::synth_generate(
            t.num_classes,
            t.proxy_per_class,
            &t.image_shape,
            proxy_offset,
            seed_mix(seed, 2),
        )?,
        PROXY_ID_BASE,
    )
    .into_iter()
    .map(|l| l.sample)
    .collect();
    let test = offset_ids(
        crate::data::synth_generate(
            t.num_classes,
            t.test_per_class,
            &t.image_shape,
            0,
            seed_mix(seed, 3),
        )?,
        TEST_ID_BASE,
    );
    let split = DatasetSplit { victim_train, proxy, test, regime: t.regime };
    split.validate()?;
    Ok(split)
}

/// Train the victim classifier on its labeled split and seal it behind
/// the metered oracle.
pub fn train_victim(
    cfg: &ExperimentConfig,
    split: &DatasetSplit,
    seed: u64,
) -> Result<LocalVictim> {
    let v = &cfg.victim;
    let arch = classifier(&v.arch, &cfg.task.image_shape, v.latent_dim, cfg.task.num_classes)?;
    let net = Network::init(arch, seed_mix(seed, 4))?;
    let examples: Vec<(Tensor, Vec<f64>)> = split
        .victim_train
        .iter()
        .map(|l| (l.sample.image.clone(), one_hot(cfg.task.num_classes, l.label)))
        .collect();
    let train = TrainConfig {
        learning_rate: v.learning_rate,
        batch_size: v.batch_size.min(examples.len()),
        epochs: v.epochs,
        seed: seed_mix(seed, 5),
    };
    let (net, _) = fit(net, &examples, &train, &|_| false)?;
    make_local_victim(
        ClassifierModel { net, trained: true },
        OracleConfig { mode: v.mode, k: v.k, noise_level: 0.0, noise_seed: 0 },
    )
}

fn pretrain_for_seed(
    cfg: &ExperimentConfig,
    method: SslMethod,
    proxy: &[Sample],
    seed: u64,
) -> Result<EncoderArtifact> {
    let ssl = SslConfig { seed: seed_mix(seed, 6), ..cfg.pretrain.clone() };
    pretrain(method, proxy, &cfg.task.image_shape, &ssl)
}

/// One (method, budget, seed) cell: fresh ledger, full extraction run,
/// fidelity and accuracy on the test set.
pub fn run_cell(
    cfg: &ExperimentConfig,
    victim: &LocalVictim,
    split: &DatasetSplit,
    artifact: &EncoderArtifact,
    method: SslMethod,
    budget: u64,
    seed: u64,
) -> Result<(CampaignRow, SubstituteModel)> {
    let e = &cfg.extraction;
    let extraction = ExtractionConfig {
        budget,
        itera: e.itera,
        train: TrainConfig {
            learning_rate: e.learning_rate,
            batch_size: e.batch_size,
            epochs: e.epochs,
            seed: seed_mix(seed, 7),
        },
        head_reinit: e.head_reinit,
        encoder_finetune: e.encoder_finetune,
        selector: e.selector,
        seed: seed_mix(seed, 8),
    };
    let mut ledger = QueryLedger::new(budget, cfg.task.unit_price);
    let (substitute, _record) =
        run_extraction(artifact, victim, &split.proxy, None, &extraction, &mut ledger)?;
    let test_samples: Vec<Sample> = split.test.iter().map(|l| l.sample.clone()).collect();
    let truth: Vec<usize> = split.test.iter().map(|l| l.label).collect();
    let report = fidelity_with_truth(&substitute.model, victim, &test_samples, Some(&truth))?;
    let (spent, currency) = cost_report(&ledger);
    Ok((
        CampaignRow {
            method: method.as_str().into(),
            budget,
            seed,
            fidelity: report.fidelity,
            accuracy: report.accuracy.unwrap_or(f64::NAN),
            spent,
            currency,
        },
        substitute,
    ))
}

fn thread_cap(tasks: usize) -> usize {
    let configured = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        });
    configured.min(tasks).max(1)
}

/// Run every seed of the campaign grid. Seeds run in parallel, capped by
/// the `PREXTRACT_THREADS` environment variable; cells within a seed run
/// sequentially. Output ordering is deterministic regardless of thread
/// interleaving.
pub fn run_campaign(cfg: &ExperimentConfig) -> Result<CampaignOutput> {
    cfg.validate()?;
    let methods = cfg.methods()?;
    let seeds = cfg.campaign.seeds.clone();
    let results: Mutex<Vec<CampaignOutput>> = Mutex::new(Vec::new());
    let next = AtomicUsize::new(0);
    let workers = thread_cap(seeds.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= seeds.len() {
                    break;
                }
                let out = run_seed(cfg, &methods, seeds[i]);
                results.lock().unwrap().push(out);
            });
        }
    });
    let mut merged = CampaignOutput::default();
    for part in results.into_inner().unwrap() {
        merged.rows.extend(part.rows);
        merged.failures.extend(part.failures);
        merged.asr_rows.extend(part.asr_rows);
    }
    merged
        .rows
        .sort_by(|a, b| (&a.method, a.budget, a.seed).cmp(&(&b.method, b.budget, b.seed)));
    merged
        .failures
        .sort_by(|a, b| (&a.method, a.budget, a.seed).cmp(&(&b.method, b.budget, b.seed)));
    merged.asr_rows.sort_by(|a, b| {
        (&a.method, a.seed)
            .cmp(&(&b.method, b.seed))
            .then(a.epsilon.partial_cmp(&b.epsilon).unwrap())
    });
    Ok(merged)
}

fn run_seed(cfg: &ExperimentConfig, methods: &[SslMethod], seed: u64) -> CampaignOutput {
    let mut out = CampaignOutput::default();
    let fail_all = |out: &mut CampaignOutput, error: String| {
        for m in methods {
            for &b in &cfg.campaign.budgets {
                out.failures.push(CampaignFailure {
                    method: m.as_str().into(),
                    budget: b,
                    seed,
                    error: error.clone(),
                });
            }
        }
    };
    let split = match build_task(cfg, seed) {
        Ok(s) => s,
        Err(e) => {
            fail_all(&mut out, format!("task construction: {e}"));
            return out;
        }
    };
    let victim = match train_victim(cfg, &split, seed) {
        Ok(v) => v,
        Err(e) => {
            fail_all(&mut out, format!("victim training: {e}"));
            return out;
        }
    };
    let max_budget = cfg.campaign.budgets.iter().copied().max().unwrap_or(0);
    for &method in methods {
        let artifact = match pretrain_for_seed(cfg, method, &split.proxy, seed) {
            Ok(a) => a,
            Err(e) => {
                for &b in &cfg.campaign.budgets {
                    out.failures.push(CampaignFailure {
                        method: method.as_str().into(),
                        budget: b,
                        seed,
                        error: format!("pretraining: {e}"),
                    });
                }
                continue;
            }
        };
        for &budget in &cfg.campaign.budgets {
            match run_cell(cfg, &victim, &split, &artifact, method, budget, seed) {
                Ok((row, substitute)) => {
                    out.rows.push(row);
                    if budget == max_budget && !cfg.campaign.epsilons.is_empty() {
                        match asr_sweep(
                            &substitute.model,
                            &victim,
                            &split.test,
                            &cfg.campaign.epsilons,
                        ) {
                            Ok((reports, _)) => {
                                for r in reports {
                                    out.asr_rows.push(AsrRow {
                                        method: method.as_str().into(),
                                        seed,
                                        epsilon: r.epsilon,
                                        asr: r.asr,
                                        n_clean_correct: r.n_clean_correct,
                                    });
                                }
                            }
                            Err(e) => out.failures.push(CampaignFailure {
                                method: method.as_str().into(),
                                budget,
                                seed,
                                error: format!("adversarial sweep: {e}"),
                            }),
                        }
                    }
                }
                Err(e) => out.failures.push(CampaignFailure {
                    method: method.as_str().into(),
                    budget,
                    seed,
                    error: e.to_string(),
                }),
            }
        }
    }
    out
}

/// Atomic file write: temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path
        .parent()
        .ok_or_else(|| Error::InvalidArgument(format!("no parent dir for {}", path.display())))?;
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out")
    ));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn summary_csv(rows: &[CampaignRow]) -> String {
    let mut out = String::from("method,budget,seed,fidelity,accuracy,spent,currency\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{},{:.6}\n",
            r.method, r.budget, r.seed, r.fidelity, r.accuracy, r.spent, r.currency
        ));
    }
    out
}

pub fn failures_csv(failures: &[CampaignFailure]) -> String {
    let mut out = String::from("method,budget,seed,error\n");
    for f in failures {
        out.push_str(&format!(
            "{},{},{},\"{}\"\n",
            f.method,
            f.budget,
            f.seed,
            f.error.replace('"', "'")
        ));
    }
    out
}

pub fn asr_csv(rows: &[AsrRow]) -> String {
    let mut out = String::from("method,seed,epsilon,asr,n_clean_correct\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.4},{:.6},{}\n",
            r.method, r.seed, r.epsilon, r.asr, r.n_clean_correct
        ));
    }
    out
}

/// Write `summary.csv` (always), `failures.csv` and `asr.csv` (when
/// non-empty) under `out_dir`.
pub fn write_campaign(output: &CampaignOutput, out_dir: &Path) -> Result<()> {
    write_atomic(&out_dir.join("summary.csv"), &summary_csv(&output.rows))?;
    if !output.failures.is_empty() {
        write_atomic(&out_dir.join("failures.csv"), &failures_csv(&output.failures))?;
    }
    if !output.asr_rows.is_empty() {
        write_atomic(&out_dir.join("asr.csv"), &asr_csv(&output.asr_rows))?;
    }
    Ok(())
}

pub fn parse_summary_csv(text: &str) -> Result<Vec<CampaignRow>> {
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if ln == 0 {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 7 {
            return Err(Error::Dataset(format!("summary line {}: {line}", ln + 1)));
        }
        let field = |i: usize| -> &str { parts[i] };
        rows.push(CampaignRow {
            method: field(0).to_string(),
            budget: field(1).parse().map_err(|_| bad_line(ln, line))?,
            seed: field(2).parse().map_err(|_| bad_line(ln, line))?,
            fidelity: field(3).parse().map_err(|_| bad_line(ln, line))?,
            accuracy: field(4).parse().map_err(|_| bad_line(ln, line))?,
            spent: field(5).parse().map_err(|_| bad_line(ln, line))?,
            currency: field(6).parse().map_err(|_| bad_line(ln, line))?,
        });
    }
    Ok(rows)
}

pub fn parse_asr_csv(text: &str) -> Result<Vec<AsrRow>> {
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if ln == 0 {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(Error::Dataset(format!("asr line {}: {line}", ln + 1)));
        }
        rows.push(AsrRow {
            method: parts[0].to_string(),
            seed: parts[1].parse().map_err(|_| bad_line(ln, line))?,
            epsilon: parts[2].parse().map_err(|_| bad_line(ln, line))?,
            asr: parts[3].parse().map_err(|_| bad_line(ln, line))?,
            n_clean_correct: parts[4].parse().map_err(|_| bad_line(ln, line))?,
        });
    }
    Ok(rows)
}

fn bad_line(ln: usize, line: &str) -> Error {
    Error::Dataset(format!("unparseable CSV line {}: {line}", ln + 1))
}

/// Aggregate plot-ready series: per-method fidelity over budget and (when
/// present) per-method attack success over epsilon.
pub fn emit_plot_data(
    rows: &[CampaignRow],
    asr_rows: &[AsrRow],
    out_dir: &Path,
) -> Result<()> {
    let mut by_cell: std::collections::BTreeMap<(String, u64), Vec<f64>> =
        std::collections::BTreeMap::new();
    for r in rows {
        by_cell
            .entry((r.method.clone(), r.budget))
            .or_default()
            .push(r.fidelity);
    }
    let mut out = String::from("method,budget,mean_fidelity,min_fidelity,max_fidelity,n_seeds\n");
    for ((method, budget), vals) in &by_cell {
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        out.push_str(&format!(
            "{method},{budget},{mean:.6},{min:.6},{max:.6},{}\n",
            vals.len()
        ));
    }
    write_atomic(&out_dir.join("fidelity_vs_budget.csv"), &out)?;

    if !asr_rows.is_empty() {
        let mut by_eps: std::collections::BTreeMap<(String, String), Vec<f64>> =
            std::collections::BTreeMap::new();
        for r in asr_rows {
            // epsilon keyed by its fixed-point rendering for a stable order
            by_eps
                .entry((r.method.clone(), format!("{:.4}", r.epsilon)))
                .or_default()
                .push(r.asr);
        }
        let mut out = String::from("method,epsilon,mean_asr,n_seeds\n");
        for ((method, eps), vals) in &by_eps {
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            out.push_str(&format!("{method},{eps},{mean:.6},{}\n", vals.len()));
        }
        write_atomic(&out_dir.join("asr_vs_epsilon.csv"), &out)?;
    }
    Ok(())
}

/// Content hash of the proxy pool for a seed, exposed for provenance
/// logging by the command-line front end.
pub fn proxy_hash(cfg: &ExperimentConfig, seed: u64) -> Result<String> {
    Ok(dataset_hash(&build_task(cfg, seed)?.proxy))
}
