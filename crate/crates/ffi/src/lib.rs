//! C ABI over the `trajdistill` core.
//!
//! Every fallible function returns a [`TdStatus`]; on failure the message
//! is available from [`td_last_error`] on the same thread. Trainers are
//! opaque handles released with [`td_trainer_free`]. Panics never cross
//! the boundary; they surface as [`TdStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use trajdistill::distill::{LabConfig, Trainer};
use trajdistill::error::Error;
use trajdistill::eval::{
    consistency_gap_for, endpoint_eval_for, start_batch, student_sample, verify_theorem,
    TheoremSweep,
};
use trajdistill::nn::Checkpoint;
use trajdistill::rng::{seeded, Stream};
use trajdistill::schedule::NoiseSchedule;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    TimestepOrder = 4,
    Bank = 5,
    NonFinite = 6,
    Config = 7,
    Checkpoint = 8,
    Csv = 9,
    Io = 10,
    Utf8 = 11,
    Panic = 12,
}

/// Opaque trainer handle.
pub struct TdTrainer {
    inner: Trainer,
}

/// Summary of the last main-loop iteration.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TdIterationStats {
    /// Zero-based index of the iteration.
    pub iteration: u64,
    pub l_std: f64,
    pub l_adv_g: f64,
    pub l_adv_d: f64,
    pub solver_steps: u64,
    pub teacher_evals: u64,
    pub bank_occupancy: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Failure {
    Core(Error),
    Null(&'static str),
    Utf8(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn status_of(err: &Error) -> TdStatus {
    match err {
        Error::InvalidArgument(_) => TdStatus::InvalidArgument,
        Error::DimensionMismatch { .. } => TdStatus::DimensionMismatch,
        Error::TimestepOrder(_) => TdStatus::TimestepOrder,
        Error::Bank(_) => TdStatus::Bank,
        Error::NonFinite { .. } => TdStatus::NonFinite,
        Error::Config { .. } => TdStatus::Config,
        Error::Checkpoint(_) => TdStatus::Checkpoint,
        Error::Csv(_) => TdStatus::Csv,
        Error::Io { .. } => TdStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TdStatus::Ok
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("{what} is null"));
            TdStatus::NullPointer
        }
        Ok(Err(Failure::Utf8(what))) => {
            set_error(&format!("{what} is not valid UTF-8"));
            TdStatus::Utf8
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            TdStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Utf8(what))
}

unsafe fn handle<'a>(h: *const TdTrainer) -> Result<&'a TdTrainer, Failure> {
    h.as_ref().ok_or(Failure::Null("trainer"))
}

unsafe fn handle_mut<'a>(h: *mut TdTrainer) -> Result<&'a mut TdTrainer, Failure> {
    h.as_mut().ok_or(Failure::Null("trainer"))
}

unsafe fn put<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

fn boxed(tr: Trainer) -> *mut TdTrainer {
    Box::into_raw(Box::new(TdTrainer { inner: tr }))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn td_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or "" after a success.
/// Valid until the next call into the library from this thread.
#[no_mangle]
pub extern "C" fn td_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// New trainer from configuration text (`[section]` / `key = value`);
/// null or empty text selects the defaults.
///
/// # Safety
/// `config` is null or a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn td_trainer_new(
    config: *const c_char,
    out: *mut *mut TdTrainer,
) -> TdStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let lab = if config.is_null() {
            LabConfig::default()
        } else {
            trajdistill::toolkit::config::parse(text(config, "config")?, "config text")?
        };
        let tr = Trainer::new(lab)?;
        put(out, boxed(tr), "out")
    })
}

/// Trainer restored from a checkpoint file.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn td_trainer_load(
    path: *const c_char,
    out: *mut *mut TdTrainer,
) -> TdStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let path = PathBuf::from(text(path, "path")?);
        let tr = Trainer::from_checkpoint(&Checkpoint::load(&path)?)?;
        put(out, boxed(tr), "out")
    })
}

/// # Safety
/// `trainer` is a live handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn td_trainer_save(
    trainer: *const TdTrainer,
    path: *const c_char,
) -> TdStatus {
    guard(|| {
        let tr = handle(trainer)?;
        let path = PathBuf::from(text(path, "path")?);
        tr.inner.to_checkpoint()?.save(&path)?;
        Ok(())
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `trainer` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn td_trainer_free(trainer: *mut TdTrainer) {
    if !trainer.is_null() {
        drop(Box::from_raw(trainer));
    }
}

/// Runs the remaining warmup steps. `last_loss` may be null.
///
/// # Safety
/// `trainer` is a live handle; `last_loss` is null or writable.
#[no_mangle]
pub unsafe extern "C" fn td_trainer_warmup(
    trainer: *mut TdTrainer,
    last_loss: *mut f64,
) -> TdStatus {
    guard(|| {
        let tr = handle_mut(trainer)?;
        let losses = tr.inner.warmup()?;
        if !last_loss.is_null() {
            last_loss.write(losses.last().copied().unwrap_or(f64::NAN));
        }
        Ok(())
    })
}

/// Runs `iterations` main-loop iterations (finishing warmup first if
/// needed). `last` may be null.
///
/// # Safety
/// `trainer` is a live handle; `last` is null or writable.
#[no_mangle]
pub unsafe extern "C" fn td_trainer_train(
    trainer: *mut TdTrainer,
    iterations: u64,
    last: *mut TdIterationStats,
) -> TdStatus {
    guard(|| {
        let tr = handle_mut(trainer)?;
        tr.inner.warmup()?;
        let mut stats = TdIterationStats::default();
        for _ in 0..iterations {
            let r = tr.inner.train_iteration()?;
            stats = TdIterationStats {
                iteration: r.iteration,
                l_std: r.l_std,
                l_adv_g: r.l_g,
                l_adv_d: r.l_d,
                solver_steps: r.solver_steps,
                teacher_evals: r.teacher_evals,
                bank_occupancy: r.bank_occupancy as u64,
            };
        }
        if !last.is_null() {
            last.write(stats);
        }
        Ok(())
    })
}

/// Main-loop iterations completed; 0 for a null handle.
///
/// # Safety
/// `trainer` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn td_trainer_iteration(trainer: *const TdTrainer) -> u64 {
    trainer.as_ref().map_or(0, |t| t.inner.iteration())
}

/// Data dimension; 0 for a null handle.
///
/// # Safety
/// `trainer` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn td_trainer_dim(trainer: *const TdTrainer) -> usize {
    trainer.as_ref().map_or(0, |t| t.inner.spec().dim())
}

/// `n` student endpoints with `nfe` jumps from fresh noised starts.
/// Writes `n * dim` coordinates row-major into `points` and, when not
/// null, `n` class labels into `labels`.
///
/// # Safety
/// `trainer` is a live handle; `points` holds `n * dim` doubles; `labels`
/// is null or holds `n` values.
#[no_mangle]
pub unsafe extern "C" fn td_trainer_sample(
    trainer: *const TdTrainer,
    nfe: usize,
    n: usize,
    seed: u64,
    points: *mut f64,
    labels: *mut i64,
) -> TdStatus {
    guard(|| {
        let tr = &handle(trainer)?.inner;
        if points.is_null() {
            return Err(Failure::Null("points"));
        }
        let mut rng = seeded(seed, Stream::Eval);
        let start = start_batch(tr.spec(), n, tr.grid().start(), tr.schedule(), &mut rng)?;
        let x = student_sample(tr.net(), tr.theta(), &start, tr.grid(), nfe, tr.schedule())?;
        ptr::copy_nonoverlapping(x.data().as_ptr(), points, x.data().len());
        if !labels.is_null() {
            for (i, c) in start.cond.iter().enumerate() {
                labels.add(i).write(c.code());
            }
        }
        Ok(())
    })
}

/// Consistency gap of the current student.
///
/// # Safety
/// `trainer` is a live handle; `gap` is writable.
#[no_mangle]
pub unsafe extern "C" fn td_trainer_consistency_gap(
    trainer: *const TdTrainer,
    gap: *mut f64,
) -> TdStatus {
    guard(|| {
        let g = consistency_gap_for(&handle(trainer)?.inner)?;
        put(gap, g, "gap")
    })
}

/// Sliced Wasserstein distance between `nfe`-jump student endpoints and
/// full teacher rollouts, with the teacher-vs-teacher floor.
///
/// # Safety
/// `trainer` is a live handle; `distance` and `floor` are writable.
#[no_mangle]
pub unsafe extern "C" fn td_trainer_endpoint_distance(
    trainer: *const TdTrainer,
    nfe: usize,
    distance: *mut f64,
    floor: *mut f64,
) -> TdStatus {
    guard(|| {
        let rows = endpoint_eval_for(&handle(trainer)?.inner, &[nfe])?;
        put(distance, rows[0].distance, "distance")?;
        put(floor, rows[0].noise_floor, "floor")
    })
}

/// Sweeps the one-step residual identity on a `steps`-step grid with
/// `trials` draws per case. Failed rows are reported through `failures`,
/// not the status.
///
/// # Safety
/// `max_error` and `failures` are writable.
#[no_mangle]
pub unsafe extern "C" fn td_verify_theorem(
    steps: usize,
    trials: usize,
    seed: u64,
    max_error: *mut f64,
    failures: *mut usize,
) -> TdStatus {
    guard(|| {
        let lab = LabConfig::default();
        let schedule = NoiseSchedule::new(lab.schedule.kind, lab.schedule.total_steps)?;
        let mut sweep = TheoremSweep::standard(&schedule, steps, seed)?;
        sweep.trials = trials;
        let report = verify_theorem(&sweep, &schedule)?;
        put(max_error, report.max_identity_error(), "max_error")?;
        put(failures, report.failures().len(), "failures")
    })
}
