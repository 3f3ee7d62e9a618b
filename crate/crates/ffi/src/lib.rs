//! C ABI over `dyncap`: opaque schedule and trainer handles, status codes,
//! and a per-thread last-error message.
//!
//! Every function returns a [`DyncapStatus`]; outputs go through pointer
//! arguments. Panics never cross the boundary.

use dyncap::config::{parse_pairs, ExperimentConfig};
use dyncap::container::Container;
use dyncap::metrics::{fit_gaussian, frechet_distance};
use dyncap::schedule::{CapacitySchedule, ScheduleMode};
use dyncap::selfcheck::{run_gradcheck, GRADCHECK_SEEDS};
use dyncap::tensor::{OpKind, Tensor};
use dyncap::trainer::{TrainError, Trainer};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DyncapStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Diverged = 4,
    Io = 5,
    CheckFailed = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DyncapMode {
    Increase = 0,
    Decrease = 1,
    Fixed = 2,
}

/// One training iteration.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DyncapRecord {
    pub step: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub d_real_mean: f64,
    pub d_fake_mean: f64,
    pub coeff: f64,
    pub active_params: u64,
    pub active_flops: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DyncapMetrics {
    pub step: u64,
    pub toy_frechet: f64,
    pub overfit_gap: f64,
    pub modes_covered: u64,
}

/// Opaque capacity schedule.
pub struct DyncapSchedule(CapacitySchedule);

/// Opaque training run.
pub struct DyncapTrainer(Trainer);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(DyncapStatus, String);

impl Failure {
    fn invalid(msg: impl Into<String>) -> Self {
        Failure(DyncapStatus::InvalidArgument, msg.into())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let status = match e {
            TrainError::Divergence { .. } => DyncapStatus::Diverged,
            TrainError::Config(_) | TrainError::Schedule(_) => DyncapStatus::Config,
            TrainError::Container(_) => DyncapStatus::Io,
            _ => DyncapStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DyncapStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DyncapStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            DyncapStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(DyncapStatus::NullPointer, format!("`{what}` is null")))
    } else {
        Ok(())
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::invalid(format!("`{what}` is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, len))
}

/// Length in bytes of the calling thread's last error message (0 if none).
#[no_mangle]
pub extern "C" fn dyncap_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |c| c.as_bytes().len()))
}

/// Copies the last error message, NUL-terminated and truncated to `cap`
/// bytes, into `buf`. Returns the number of bytes written before the NUL.
///
/// # Safety
/// `buf` must be valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn dyncap_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    if buf.is_null() || cap == 0 {
        return 0;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map_or(&[][..], |c| c.as_bytes());
        let n = bytes.len().min(cap - 1);
        std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
        *buf.add(n) = 0;
        n
    })
}

/// Builds a schedule over `n_layers` base widths. `excluded` only applies
/// to decrease mode and may be null when `n_excluded` is 0.
///
/// # Safety
/// Array arguments must hold the stated number of elements; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn dyncap_schedule_new(
    mode: DyncapMode,
    coeff_start: f64,
    coeff_end: f64,
    total_steps: u64,
    update_interval: u64,
    base_widths: *const usize,
    n_layers: usize,
    excluded: *const usize,
    n_excluded: usize,
    out: *mut *mut DyncapSchedule,
) -> DyncapStatus {
    guard(|| {
        non_null(out, "out")?;
        let base = slice_arg(base_widths, n_layers, "base_widths")?.to_vec();
        let excluded = slice_arg(excluded, n_excluded, "excluded")?.iter().copied().collect();
        let mode = match mode {
            DyncapMode::Increase => ScheduleMode::Increase,
            DyncapMode::Decrease => ScheduleMode::Decrease,
            DyncapMode::Fixed => ScheduleMode::Fixed,
        };
        let s = CapacitySchedule::new(mode, coeff_start, coeff_end, total_steps, update_interval, excluded, base)
            .map_err(|e| Failure(DyncapStatus::Config, e.to_string()))?;
        *out = Box::into_raw(Box::new(DyncapSchedule(s)));
        Ok(())
    })
}

/// # Safety
/// `schedule` must come from [`dyncap_schedule_new`] (or be null).
#[no_mangle]
pub unsafe extern "C" fn dyncap_schedule_free(schedule: *mut DyncapSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

/// # Safety
/// `schedule` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dyncap_schedule_num_layers(schedule: *const DyncapSchedule, out: *mut usize) -> DyncapStatus {
    guard(|| {
        non_null(schedule, "schedule")?;
        non_null(out, "out")?;
        *out = (*schedule).0.base_widths().len();
        Ok(())
    })
}

/// # Safety
/// `schedule` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dyncap_schedule_coefficient(
    schedule: *const DyncapSchedule,
    step: u64,
    out: *mut f64,
) -> DyncapStatus {
    guard(|| {
        non_null(schedule, "schedule")?;
        non_null(out, "out")?;
        *out = (*schedule).0.coefficient_at(step);
        Ok(())
    })
}

/// Writes the per-layer widths at `step`; `len` must equal the layer count.
///
/// # Safety
/// `schedule` must be a live handle; `out` writable for `len` elements.
#[no_mangle]
pub unsafe extern "C" fn dyncap_schedule_widths(
    schedule: *const DyncapSchedule,
    step: u64,
    out: *mut usize,
    len: usize,
) -> DyncapStatus {
    guard(|| {
        non_null(schedule, "schedule")?;
        non_null(out, "out")?;
        let w = (*schedule).0.widths_at(step);
        if w.len() != len {
            return Err(Failure::invalid(format!("schedule has {} layers, buffer holds {len}", w.len())));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&w);
        Ok(())
    })
}

fn trainer_from_text(text: &str) -> Result<Trainer, Failure> {
    let cfg = parse_pairs(text)
        .and_then(|p| ExperimentConfig::from_pairs(&p))
        .map_err(|e| Failure(DyncapStatus::Config, e.to_string()))?;
    Ok(Trainer::new(cfg.train)?)
}

/// Creates a trainer from config text in the CLI's `key = value` format
/// (an empty string gives the defaults).
///
/// # Safety
/// `config` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dyncap_trainer_new(config: *const c_char, out: *mut *mut DyncapTrainer) -> DyncapStatus {
    guard(|| {
        non_null(out, "out")?;
        let t = trainer_from_text(str_arg(config, "config")?)?;
        *out = Box::into_raw(Box::new(DyncapTrainer(t)));
        Ok(())
    })
}

/// Like [`dyncap_trainer_new`], then restores the state saved at `path`.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dyncap_trainer_resume(
    config: *const c_char,
    path: *const c_char,
    out: *mut *mut DyncapTrainer,
) -> DyncapStatus {
    guard(|| {
        non_null(out, "out")?;
        let text = str_arg(config, "config")?;
        let path = str_arg(path, "path")?;
        let c = Container::load(Path::new(path)).map_err(|e| Failure(DyncapStatus::Io, e.to_string()))?;
        let fresh = trainer_from_text(text)?;
        let t = Trainer::resume(fresh.config, &c)?;
        *out = Box::into_raw(Box::new(DyncapTrainer(t)));
        Ok(())
    })
}

/// # Safety
/// `trainer` must come from this library (or be null).
#[no_mangle]
pub unsafe extern "C" fn dyncap_trainer_free(trainer: *mut DyncapTrainer) {
    if !trainer.is_null() {
        drop(Box::from_raw(trainer));
    }
}

/// Runs one iteration. Returns `DYNCAP_STATUS_DIVERGED` on a non-finite
/// loss, with the diagnostic record still written to `out`.
///
/// # Safety
/// `trainer` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dyncap_trainer_step(trainer: *mut DyncapTrainer, out: *mut DyncapRecord) -> DyncapStatus {
    guard(|| {
        non_null(trainer, "trainer")?;
        non_null(out, "out")?;
        let t = &mut (*trainer).0;
        if t.is_done() {
            return Err(Failure::invalid("all iterations already ran"));
        }
        let write = |r: &dyncap::trainer::IterationRecord| DyncapRecord {
            step: r.step,
            loss_d: r.loss_d,
            loss_g: r.loss_g,
            d_real_mean: r.d_real_mean,
            d_fake_mean: r.d_fake_mean,
            coeff: r.coeff,
            active_params: r.active_params,
            active_flops: r.active_flops,
        };
        match t.step() {
            Ok(r) => {
                *out = write(&r);
                Ok(())
            }
            Err(TrainError::Divergence { step, record }) => {
                *out = write(&record);
                Err(TrainError::Divergence { step, record }.into())
            }
            Err(e) => Err(e.into()),
        }
    })
}

/// Iterations completed so far.
///
/// # Safety
/// `trainer` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dyncap_trainer_current_step(trainer: *const DyncapTrainer, out: *mut u64) -> DyncapStatus {
    guard(|| {
        non_null(trainer, "trainer")?;
        non_null(out, "out")?;
        *out = (*trainer).0.state.step;
        Ok(())
    })
}

/// # Safety
/// `trainer` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dyncap_trainer_evaluate(trainer: *const DyncapTrainer, out: *mut DyncapMetrics) -> DyncapStatus {
    guard(|| {
        non_null(trainer, "trainer")?;
        non_null(out, "out")?;
        let m = (*trainer).0.evaluate()?;
        *out = DyncapMetrics {
            step: m.step,
            toy_frechet: m.toy_frechet,
            overfit_gap: m.overfit_gap,
            modes_covered: m.modes_covered as u64,
        };
        Ok(())
    })
}

/// Writes a checkpoint in the library's binary container format.
///
/// # Safety
/// `trainer` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dyncap_trainer_save(trainer: *const DyncapTrainer, path: *const c_char) -> DyncapStatus {
    guard(|| {
        non_null(trainer, "trainer")?;
        let path = str_arg(path, "path")?;
        (*trainer)
            .0
            .state
            .to_container()
            .save(Path::new(path))
            .map_err(|e| Failure(DyncapStatus::Io, e.to_string()))
    })
}

/// Runs the finite-difference suite. `fault` names an op whose backward is
/// deliberately doubled (null for none). Returns
/// `DYNCAP_STATUS_CHECK_FAILED` if any op misses the bar; the message names
/// the failing ops.
///
/// # Safety
/// `fault` must be null or NUL-terminated; `max_rel_error` writable or null.
#[no_mangle]
pub unsafe extern "C" fn dyncap_gradcheck(fault: *const c_char, max_rel_error: *mut f64) -> DyncapStatus {
    guard(|| {
        let fault = if fault.is_null() {
            None
        } else {
            let name = str_arg(fault, "fault")?;
            Some(OpKind::from_name(name).ok_or_else(|| Failure::invalid(format!("unknown op `{name}`")))?)
        };
        let report = run_gradcheck(GRADCHECK_SEEDS, fault).map_err(|e| Failure::invalid(e.to_string()))?;
        if !max_rel_error.is_null() {
            *max_rel_error = report.max_rel_error();
        }
        if report.passed() {
            Ok(())
        } else {
            let names: Vec<String> = report.failing().iter().map(|g| g.group.clone()).collect();
            Err(Failure(DyncapStatus::CheckFailed, format!("gradient check failed for: {}", names.join(", "))))
        }
    })
}

/// Fréchet distance between Gaussian fits of two row-major sample sets of
/// dimension `dim`.
///
/// # Safety
/// `a` must hold `n_a * dim` values, `b` `n_b * dim`; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dyncap_frechet_distance(
    a: *const f64,
    n_a: usize,
    b: *const f64,
    n_b: usize,
    dim: usize,
    out: *mut f64,
) -> DyncapStatus {
    guard(|| {
        non_null(out, "out")?;
        let to_tensor = |p, n: usize, what| -> Result<Tensor, Failure> {
            let s = slice_arg(p, n * dim, what)?;
            Tensor::new(&[n, dim], s.to_vec()).map_err(|e| Failure::invalid(e.to_string()))
        };
        let fa = fit_gaussian(&to_tensor(a, n_a, "a")?).map_err(|e| Failure::invalid(e.to_string()))?;
        let fb = fit_gaussian(&to_tensor(b, n_b, "b")?).map_err(|e| Failure::invalid(e.to_string()))?;
        *out = frechet_distance(&fa, &fb).map_err(|e| Failure::invalid(e.to_string()))?;
        Ok(())
    })
}
