//! C ABI over the distillation losses, the procedural mock generator and
//! trained text classifiers.
//!
//! Every fallible function returns a [`GenprivStatus`]; on failure the
//! message is available from [`genpriv_last_error`] on the same thread.
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use genpriv::architectures::ModelOutput;
use genpriv::distill::{self, DistillConfig};
use genpriv::genimage::{mock_generate, ImageSize};
use genpriv::harness::DeployedModel;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenprivStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidUtf8 = 3,
    BufferTooSmall = 4,
    LossError = 5,
    GenerateError = 6,
    ModelError = 7,
    Panic = 99,
}

/// Mirror of the distillation hyperparameters.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GenprivDistillConfig {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub soften_student: bool,
    pub normalize_sqdist: bool,
}

impl From<GenprivDistillConfig> for DistillConfig {
    fn from(c: GenprivDistillConfig) -> Self {
        Self {
            alpha: c.alpha,
            beta: c.beta,
            tau: c.tau,
            soften_student: c.soften_student,
            normalize_sqdist: c.normalize_sqdist,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GenprivLossBreakdown {
    pub total: f64,
    pub ce_hard: f64,
    pub ce_soft: f64,
    pub emb_sqdist: f64,
}

/// Opaque text classifier restored from a checkpoint.
pub struct GenprivModel {
    inner: DeployedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(GenprivStatus, String);

type FfiResult = Result<(), Failure>;

fn fail<T>(status: GenprivStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard(f: impl FnOnce() -> FfiResult) -> GenprivStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GenprivStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GenprivStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(GenprivStatus::NullPointer, format!("{what} is null"));
    }
    Ok(unsafe { std::slice::from_raw_parts(p, n) })
}

unsafe fn slice_mut<'a>(p: *mut f64, n: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return fail(GenprivStatus::NullPointer, format!("{what} is null"));
    }
    Ok(unsafe { std::slice::from_raw_parts_mut(p, n) })
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    unsafe { p.as_mut() }.ok_or_else(|| Failure(GenprivStatus::NullPointer, format!("{what} is null")))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(GenprivStatus::NullPointer, format!("{what} is null"));
    }
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure(GenprivStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn loss_err(e: distill::DistillError) -> Failure {
    Failure(GenprivStatus::LossError, e.to_string())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn genpriv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn genpriv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn genpriv_distill_config_default() -> GenprivDistillConfig {
    let d = DistillConfig::default();
    GenprivDistillConfig {
        alpha: d.alpha,
        beta: d.beta,
        tau: d.tau,
        soften_student: d.soften_student,
        normalize_sqdist: d.normalize_sqdist,
    }
}

/// `-sum(target * ln(pred))` over `k` entries; both must be distributions.
///
/// # Safety
/// `target` and `pred` point to `k` doubles; `out` to one.
#[no_mangle]
pub unsafe extern "C" fn genpriv_cross_entropy(
    target: *const f64,
    pred: *const f64,
    k: usize,
    out: *mut f64,
) -> GenprivStatus {
    guard(|| unsafe {
        let v = distill::cross_entropy(slice(target, k, "target")?, slice(pred, k, "pred")?).map_err(loss_err)?;
        *out_ref(out, "out")? = v;
        Ok(())
    })
}

/// `softmax(logits / tau)` into `out`.
///
/// # Safety
/// `logits` and `out` point to `k` doubles.
#[no_mangle]
pub unsafe extern "C" fn genpriv_soften(logits: *const f64, k: usize, tau: f64, out: *mut f64) -> GenprivStatus {
    guard(|| unsafe {
        let p = distill::soften(slice(logits, k, "logits")?, tau).map_err(loss_err)?;
        slice_mut(out, k, "out")?.copy_from_slice(&p);
        Ok(())
    })
}

/// Squared Euclidean distance, divided by `d` when `normalize`.
///
/// # Safety
/// `teacher` and `student` point to `d` doubles; `out` to one.
#[no_mangle]
pub unsafe extern "C" fn genpriv_embedding_sqdist(
    teacher: *const f64,
    student: *const f64,
    d: usize,
    normalize: bool,
    out: *mut f64,
) -> GenprivStatus {
    guard(|| unsafe {
        let v = distill::embedding_sqdist(slice(teacher, d, "teacher")?, slice(student, d, "student")?, normalize)
            .map_err(loss_err)?;
        *out_ref(out, "out")? = v;
        Ok(())
    })
}

/// The joint distillation objective for one sample. Optionally writes the
/// gradient with respect to the student logits (`k` doubles) and embedding
/// (`d` doubles); pass null to skip either.
///
/// # Safety
/// Array arguments point to `k` or `d` doubles as named; `cfg` and `out`
/// to one struct each.
#[no_mangle]
pub unsafe extern "C" fn genpriv_kd_loss(
    target: *const f64,
    teacher_logits: *const f64,
    student_logits: *const f64,
    k: usize,
    teacher_embedding: *const f64,
    student_embedding: *const f64,
    d: usize,
    cfg: *const GenprivDistillConfig,
    out: *mut GenprivLossBreakdown,
    grad_logits: *mut f64,
    grad_embedding: *mut f64,
) -> GenprivStatus {
    guard(|| unsafe {
        let cfg: DistillConfig = (*cfg.as_ref().ok_or(Failure(GenprivStatus::NullPointer, "cfg is null".into()))?).into();
        let teacher = ModelOutput::from_logits(
            slice(teacher_logits, k, "teacher_logits")?.to_vec(),
            slice(teacher_embedding, d, "teacher_embedding")?.to_vec(),
        );
        let student = ModelOutput::from_logits(
            slice(student_logits, k, "student_logits")?.to_vec(),
            slice(student_embedding, d, "student_embedding")?.to_vec(),
        );
        let (loss, grad) =
            distill::kd_loss_with_grad(slice(target, k, "target")?, &teacher, &student, &cfg).map_err(loss_err)?;
        *out_ref(out, "out")? = GenprivLossBreakdown {
            total: loss.total,
            ce_hard: loss.ce_hard,
            ce_soft: loss.ce_soft,
            emb_sqdist: loss.emb_sqdist,
        };
        if !grad_logits.is_null() {
            slice_mut(grad_logits, k, "grad_logits")?.copy_from_slice(&grad.logits);
        }
        if !grad_embedding.is_null() {
            slice_mut(grad_embedding, d, "grad_embedding")?.copy_from_slice(&grad.embedding);
        }
        Ok(())
    })
}

/// Renders the deterministic mock image for `prompt` as packed RGB8 rows.
/// `buf_len` must be at least `width * height * 3`.
///
/// # Safety
/// `prompt` is a NUL-terminated string; `buf` points to `buf_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn genpriv_mock_generate(
    prompt: *const c_char,
    seed: u64,
    width: u32,
    height: u32,
    buf: *mut u8,
    buf_len: usize,
) -> GenprivStatus {
    guard(|| unsafe {
        let prompt = string(prompt, "prompt")?;
        let need = width as usize * height as usize * 3;
        if buf.is_null() {
            return fail(GenprivStatus::NullPointer, "buf is null");
        }
        if buf_len < need {
            return fail(GenprivStatus::BufferTooSmall, format!("need {need} bytes, got {buf_len}"));
        }
        let img = mock_generate(prompt, seed, ImageSize { width, height })
            .map_err(|e| Failure(GenprivStatus::GenerateError, e.to_string()))?;
        std::slice::from_raw_parts_mut(buf, need).copy_from_slice(img.pixels.as_raw());
        Ok(())
    })
}

/// Loads a baseline or student checkpoint written by the pipeline.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` points to writable storage for
/// one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn genpriv_model_load(path: *const c_char, out: *mut *mut GenprivModel) -> GenprivStatus {
    guard(|| unsafe {
        let slot = out_ref(out, "out")?;
        *slot = ptr::null_mut();
        let path = string(path, "path")?;
        let inner = DeployedModel::load(Path::new(path)).map_err(|e| Failure(GenprivStatus::ModelError, e.to_string()))?;
        *slot = Box::into_raw(Box::new(GenprivModel { inner }));
        Ok(())
    })
}

/// Number of classes, or 0 for a null handle.
///
/// # Safety
/// `model` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn genpriv_model_num_classes(model: *const GenprivModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.inner.class_names.len())
}

/// Class probabilities for `text` into `probs` (`k` doubles, `k` equal to
/// the class count) and the arg-max class into `label`.
///
/// # Safety
/// `model` is a live handle, `text` NUL-terminated, `probs` points to `k`
/// doubles and `label` to one `size_t`; `label` may be null.
#[no_mangle]
pub unsafe extern "C" fn genpriv_model_predict(
    model: *const GenprivModel,
    text: *const c_char,
    probs: *mut f64,
    k: usize,
    label: *mut usize,
) -> GenprivStatus {
    guard(|| unsafe {
        let m = model.as_ref().ok_or(Failure(GenprivStatus::NullPointer, "model is null".into()))?;
        let text = string(text, "text")?;
        let n = m.inner.class_names.len();
        if k != n {
            return fail(GenprivStatus::InvalidArgument, format!("model has {n} classes, buffer holds {k}"));
        }
        let p = m.inner.predict(text).map_err(|e| Failure(GenprivStatus::ModelError, e.to_string()))?;
        slice_mut(probs, k, "probs")?.copy_from_slice(&p);
        if let Some(l) = label.as_mut() {
            *l = (0..n).fold(0, |best, i| if p[i] > p[best] { i } else { best });
        }
        Ok(())
    })
}

/// Releases a handle from [`genpriv_model_load`]. Null is ignored.
///
/// # Safety
/// `model` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn genpriv_model_free(model: *mut GenprivModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}
