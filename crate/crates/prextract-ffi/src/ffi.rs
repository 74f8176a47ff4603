//! C ABI over the extraction pipeline. All state crosses the boundary as
//! opaque handles; every fallible call returns a status code and stores a
//! message retrievable with `px_last_error_message`.

use prextract::data::{DatasetSplit, Sample};
use prextract::error::Error;
use prextract::eval::fidelity_with_truth;
use prextract::extraction::{run_extraction, ExtractionConfig, SubstituteModel};
use prextract::nn::TrainConfig;
use prextract::oracle::{LocalVictim, Oracle, QueryLedger};
use prextract::runner::{
    build_task, emit_plot_data, load_config, run_campaign, train_victim, write_campaign,
    ExperimentConfig,
};
use prextract::ssl::{pretrain, EncoderArtifact, SslConfig, SslMethod};
use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::path::{Path, PathBuf};

/// Status codes returned by every fallible call.
pub const PX_OK: i32 = 0;
pub const PX_ERR_RUNTIME: i32 = 1;
pub const PX_ERR_INVALID: i32 = 2;
pub const PX_ERR_BUDGET: i32 = 3;
pub const PX_ERR_REMOTE: i32 = 4;
pub const PX_ERR_NULL: i32 = 5;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(e: &Error) -> i32 {
    let code = match e {
        Error::InvalidArgument(_) | Error::InvalidConfig(_) => PX_ERR_INVALID,
        Error::BudgetExhausted { .. } => PX_ERR_BUDGET,
        Error::RemoteUnavailable(_) => PX_ERR_REMOTE,
        _ => PX_ERR_RUNTIME,
    };
    LAST_ERROR.with(|s| *s.borrow_mut() = e.to_string());
    code
}

fn set_null_error(what: &str) -> i32 {
    LAST_ERROR.with(|s| *s.borrow_mut() = format!("null {what} handle"));
    PX_ERR_NULL
}

/// Copy the last error message (UTF-8, NUL-terminated, truncated to fit)
/// into `buf`. Returns the full message length in bytes.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null (query mode).
#[no_mangle]
pub unsafe extern "C" fn px_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|s| {
        let msg = s.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

// Opaque handle types and their destructors are written out explicitly
// (not via a macro) so the header generator sees every declaration.
pub struct PxConfig(pub(crate) ExperimentConfig);
pub struct PxTask(pub(crate) DatasetSplit);
pub struct PxVictim(pub(crate) LocalVictim);
pub struct PxEncoder(pub(crate) EncoderArtifact);
pub struct PxSubstitute(pub(crate) SubstituteModel);
pub struct PxLedger(pub(crate) QueryLedger);

/// Release a handle previously returned by this library. Null is a
/// no-op.
///
/// # Safety
/// `h` must be a pointer returned by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn px_config_free(h: *mut PxConfig) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Release a handle previously returned by this library. Null is a
/// no-op.
///
/// # Safety
/// `h` must be a pointer returned by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn px_task_free(h: *mut PxTask) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Release a handle previously returned by this library. Null is a
/// no-op.
///
/// # Safety
/// `h` must be a pointer returned by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn px_victim_free(h: *mut PxVictim) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Release a handle previously returned by this library. Null is a
/// no-op.
///
/// # Safety
/// `h` must be a pointer returned by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn px_encoder_free(h: *mut PxEncoder) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Release a handle previously returned by this library. Null is a
/// no-op.
///
/// # Safety
/// `h` must be a pointer returned by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn px_substitute_free(h: *mut PxSubstitute) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Release a handle previously returned by this library. Null is a
/// no-op.
///
/// # Safety
/// `h` must be a pointer returned by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn px_ledger_free(h: *mut PxLedger) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

unsafe fn cstr_path(p: *const c_char) -> Result<PathBuf, i32> {
    if p.is_null() {
        return Err(set_null_error("path"));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            LAST_ERROR.with(|s| *s.borrow_mut() = "path is not valid UTF-8".to_string());
            Err(PX_ERR_INVALID)
        }
    }
}

/// Load and validate a TOML experiment config.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn px_config_load(path: *const c_char, out: *mut *mut PxConfig) -> i32 {
    if out.is_null() {
        return set_null_error("output");
    }
    let path = match cstr_path(path) {
        Ok(p) => p,
        Err(code) => return code,
    };
    match load_config(&path) {
        Ok(cfg) => {
            *out = Box::into_raw(Box::new(PxConfig(cfg)));
            PX_OK
        }
        Err(e) => set_error(&e),
    }
}

/// Build the synthetic task (victim data, proxy pool, test set) for one
/// seed.
///
/// # Safety
/// `cfg` must be a live config handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn px_task_build(
    cfg: *const PxConfig,
    seed: u64,
    out: *mut *mut PxTask,
) -> i32 {
    if out.is_null() {
        return set_null_error("output");
    }
    let Some(cfg) = cfg.as_ref() else {
        return set_null_error("config");
    };
    match build_task(&cfg.0, seed) {
        Ok(split) => {
            *out = Box::into_raw(Box::new(PxTask(split)));
            PX_OK
        }
        Err(e) => set_error(&e),
    }
}

/// Train the victim and seal it behind the metered oracle.
///
/// # Safety
/// `cfg` and `task` must be live handles; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn px_victim_train(
    cfg: *const PxConfig,
    task: *const PxTask,
    seed: u64,
    out: *mut *mut PxVictim,
) -> i32 {
    if out.is_null() {
        return set_null_error("output");
    }
    let (Some(cfg), Some(task)) = (cfg.as_ref(), task.as_ref()) else {
        return set_null_error("config or task");
    };
    match train_victim(&cfg.0, &task.0, seed) {
        Ok(v) => {
            *out = Box::into_raw(Box::new(PxVictim(v)));
            PX_OK
        }
        Err(e) => set_error(&e),
    }
}

/// Pretrain an encoder on the task's proxy pool. `method` is one of
/// "rs", "bae", "dae", "moco", "simclr".
///
/// # Safety
/// `cfg` and `task` must be live handles; `method` NUL-terminated; `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn px_pretrain(
    cfg: *const PxConfig,
    task: *const PxTask,
    method: *const c_char,
    seed: u64,
    out: *mut *mut PxEncoder,
) -> i32 {
    if out.is_null() {
        return set_null_error("output");
    }
    let (Some(cfg), Some(task)) = (cfg.as_ref(), task.as_ref()) else {
        return set_null_error("config or task");
    };
    if method.is_null() {
        return set_null_error("method");
    }
    let method: SslMethod = match CStr::from_ptr(method).to_str().map(|s| s.parse()) {
        Ok(Ok(m)) => m,
        Ok(Err(e)) => return set_error(&e),
        Err(_) => {
            return set_error(&Error::InvalidArgument("method is not valid UTF-8".into()))
        }
    };
    let ssl = SslConfig {
        seed: seed.wrapping_mul(1000).wrapping_add(6),
        ..cfg.0.pretrain.clone()
    };
    match pretrain(method, &task.0.proxy, &cfg.0.task.image_shape, &ssl) {
        Ok(a) => {
            *out = Box::into_raw(Box::new(PxEncoder(a)));
            PX_OK
        }
        Err(e) => set_error(&e),
    }
}

/// Save an encoder artifact (checkpoint plus JSON sidecar).
///
/// # Safety
/// `enc` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn px_encoder_save(enc: *const PxEncoder, path: *const c_char) -> i32 {
    let Some(enc) = enc.as_ref() else {
        return set_null_error("encoder");
    };
    let path = match cstr_path(path) {
        Ok(p) => p,
        Err(code) => return code,
    };
    match enc.0.save(&path) {
        Ok(()) => PX_OK,
        Err(e) => set_error(&e),
    }
}

/// Load an encoder artifact saved by `px_encoder_save`.
///
/// # Safety
/// `path` must be NUL-terminated; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn px_encoder_load(path: *const c_char, out: *mut *mut PxEncoder) -> i32 {
    if out.is_null() {
        return set_null_error("output");
    }
    let path = match cstr_path(path) {
        Ok(p) => p,
        Err(code) => return code,
    };
    match EncoderArtifact::load(&path) {
        Ok(a) => {
            *out = Box::into_raw(Box::new(PxEncoder(a)));
            PX_OK
        }
        Err(e) => set_error(&e),
    }
}

/// Fresh query ledger with the given budget and unit price.
#[no_mangle]
pub extern "C" fn px_ledger_new(budget: u64, unit_price: f64) -> *mut PxLedger {
    Box::into_raw(Box::new(PxLedger(QueryLedger::new(budget, unit_price))))
}

/// Queries charged so far.
///
/// # Safety
/// `ledger` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn px_ledger_spent(ledger: *const PxLedger) -> u64 {
    ledger.as_ref().map(|l| l.0.spent()).unwrap_or(0)
}

/// Run the active extraction loop against the victim, spending exactly
/// `budget` queries from `ledger`.
///
/// # Safety
/// All handles must be live; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn px_extract(
    cfg: *const PxConfig,
    victim: *const PxVictim,
    task: *const PxTask,
    encoder: *const PxEncoder,
    budget: u64,
    seed: u64,
    ledger: *mut PxLedger,
    out: *mut *mut PxSubstitute,
) -> i32 {
    if out.is_null() {
        return set_null_error("output");
    }
    let (Some(cfg), Some(victim), Some(task), Some(encoder)) =
        (cfg.as_ref(), victim.as_ref(), task.as_ref(), encoder.as_ref())
    else {
        return set_null_error("config, victim, task or encoder");
    };
    let Some(ledger) = ledger.as_mut() else {
        return set_null_error("ledger");
    };
    let e = &cfg.0.extraction;
    let extraction = ExtractionConfig {
        budget,
        itera: e.itera,
        train: TrainConfig {
            learning_rate: e.learning_rate,
            batch_size: e.batch_size,
            epochs: e.epochs,
            seed: seed.wrapping_mul(1000).wrapping_add(7),
        },
        head_reinit: e.head_reinit,
        encoder_finetune: e.encoder_finetune,
        selector: e.selector,
        seed: seed.wrapping_mul(1000).wrapping_add(8),
    };
    match run_extraction(&encoder.0, &victim.0, &task.0.proxy, None, &extraction, &mut ledger.0) {
        Ok((substitute, _)) => {
            *out = Box::into_raw(Box::new(PxSubstitute(substitute)));
            PX_OK
        }
        Err(e) => set_error(&e),
    }
}

/// Fidelity and accuracy of a substitute on the task's test set.
/// `accuracy` may be null if not wanted.
///
/// # Safety
/// Handles must be live; `fidelity` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn px_substitute_score(
    substitute: *const PxSubstitute,
    victim: *const PxVictim,
    task: *const PxTask,
    fidelity: *mut f64,
    accuracy: *mut f64,
) -> i32 {
    let (Some(substitute), Some(victim), Some(task)) =
        (substitute.as_ref(), victim.as_ref(), task.as_ref())
    else {
        return set_null_error("substitute, victim or task");
    };
    if fidelity.is_null() {
        return set_null_error("fidelity output");
    }
    let samples: Vec<Sample> = task.0.test.iter().map(|l| l.sample.clone()).collect();
    let truth: Vec<usize> = task.0.test.iter().map(|l| l.label).collect();
    match fidelity_with_truth(&substitute.0.model, &victim.0 as &dyn Oracle, &samples, Some(&truth))
    {
        Ok(report) => {
            *fidelity = report.fidelity;
            if !accuracy.is_null() {
                *accuracy = report.accuracy.unwrap_or(f64::NAN);
            }
            PX_OK
        }
        Err(e) => set_error(&e),
    }
}

/// One-call campaign: load the config at `config_path`, run the full
/// grid, write the CSV outputs under `out_dir`.
///
/// # Safety
/// Both strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn px_campaign_run(
    config_path: *const c_char,
    out_dir: *const c_char,
) -> i32 {
    let (config_path, out_dir) = match (cstr_path(config_path), cstr_path(out_dir)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(code), _) | (_, Err(code)) => return code,
    };
    match campaign_impl(&config_path, &out_dir) {
        Ok(()) => PX_OK,
        Err(e) => set_error(&e),
    }
}

fn campaign_impl(config_path: &Path, out_dir: &Path) -> Result<(), Error> {
    let cfg = load_config(config_path)?;
    let output = run_campaign(&cfg)?;
    write_campaign(&output, out_dir)?;
    emit_plot_data(&output.rows, &output.asr_rows, out_dir)?;
    if !output.failures.is_empty() {
        return Err(Error::Runtime(format!(
            "{} campaign cells failed, see failures.csv",
            output.failures.len()
        )));
    }
    Ok(())
}
