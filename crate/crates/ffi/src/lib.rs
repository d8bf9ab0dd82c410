//! C ABI over the vidbench library.
//!
//! Every fallible call returns a `VbStatus`; on failure the message is kept
//! per thread and read back with `vb_last_error`. Models are opaque
//! `VbModel` pointers owned by the caller and released with `vb_model_free`.
//! Panics never cross the boundary: they surface as `VB_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use vidbench::augmentation::{augment_sequence, sample_params, AugmentationParams};
use vidbench::data::{decode_frames, sample_frame_indices, FrameSequence, Label, FRAMES, FRAME_LEN, SEQUENCE_LEN, SEQUENCE_SHAPE};
use vidbench::evaluation::{confusion_matrix, metrics_from_confusion};
use vidbench::experiment::{run_experiment, ExperimentConfig};
use vidbench::nn::Tensor;
use vidbench::training::exponential_lr;
use vidbench::zoo::{build_model, load_checkpoint, BuildOptions, ModelFamily, ModelHandle, ModelSpec};
use vidbench::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VbStatus {
    Ok = 0,
    NullPointer = 1,
    /// Argument the C side got wrong: bad enum value, non-UTF-8 string, short buffer.
    InvalidArgument = 2,
    InvalidInput = 3,
    InvalidParameter = 4,
    Shape = 5,
    Config = 6,
    Decode = 7,
    Weights = 8,
    DatasetSize = 9,
    Divergence = 10,
    OutOfMemory = 11,
    IncompleteGrid = 12,
    Io = 13,
    Format = 14,
    Panic = 15,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VbFamily {
    Cnn3d = 0,
    Cnn2dBilstm = 1,
    InceptionV3Bilstm = 2,
    MobileNetV2Bilstm = 3,
}

impl From<VbFamily> for ModelFamily {
    fn from(f: VbFamily) -> Self {
        match f {
            VbFamily::Cnn3d => ModelFamily::Cnn3d,
            VbFamily::Cnn2dBilstm => ModelFamily::Cnn2dBilstm,
            VbFamily::InceptionV3Bilstm => ModelFamily::InceptionV3Bilstm,
            VbFamily::MobileNetV2Bilstm => ModelFamily::MobileNetV2Bilstm,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VbAugmentParams {
    pub zoom: f32,
    pub brightness: f32,
    pub sigma: f32,
    pub seed: u64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VbMetrics {
    pub accuracy: f64,
    pub f1_class0: f64,
    pub f1_class1: f64,
    /// Row-major `[[TN, FP], [FN, TP]]`, class 1 = violent.
    pub confusion: [u64; 4],
}

/// Opaque model handle.
pub struct VbModel(ModelHandle);

/// Floats in one `15 × 100 × 100 × 3` clip.
pub const VB_CLIP_LEN: usize = 15 * 100 * 100 * 3;
const _: () = assert!(VB_CLIP_LEN == SEQUENCE_LEN);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(VbStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) => VbStatus::Config,
            Error::InvalidInput(_) => VbStatus::InvalidInput,
            Error::InvalidParameter(_) => VbStatus::InvalidParameter,
            Error::Decode { .. } => VbStatus::Decode,
            Error::Shape { .. } | Error::Spec(_) => VbStatus::Shape,
            Error::WeightsMissing { .. } | Error::WeightsIncompatible { .. } => VbStatus::Weights,
            Error::Size(_) => VbStatus::DatasetSize,
            Error::Divergence { .. } => VbStatus::Divergence,
            Error::Memory { .. } => VbStatus::OutOfMemory,
            Error::IncompleteGrid(_) => VbStatus::IncompleteGrid,
            Error::Io { .. } => VbStatus::Io,
            Error::Json(_) | Error::Csv(_) => VbStatus::Format,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: VbStatus, message: impl Into<String>) -> Failure {
    Failure(status, message.into())
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            VbStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal panic: {message}"));
            VbStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(fail(VbStatus::NullPointer, format!("{what} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| fail(VbStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(VbStatus::NullPointer, format!("{what} is NULL")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut_arg<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(VbStatus::NullPointer, format!("{what} is NULL")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(VbStatus::NullPointer, format!("{what} is NULL")))
}

/// Message of the last failed call on this thread ("" after a success).
/// Valid until the next vidbench call on the same thread.
#[no_mangle]
pub extern "C" fn vb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn vb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Evenly spaced frame indices: writes `target` indices into `out`.
///
/// # Safety
/// `out` must point to `out_len` writable elements.
#[no_mangle]
pub unsafe extern "C" fn vb_sample_frame_indices(total: usize, target: usize, out: *mut usize, out_len: usize) -> VbStatus {
    guard(|| {
        let out = slice_mut_arg(out, out_len, "out")?;
        if out_len < target {
            return Err(fail(VbStatus::InvalidArgument, format!("out holds {out_len} of {target} indices")));
        }
        let idx = sample_frame_indices(total, target)?;
        out[..idx.len()].copy_from_slice(&idx);
        Ok(())
    })
}

/// Augmentation parameters drawn deterministically from `seed`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vb_augment_params(seed: u64, out: *mut VbAugmentParams) -> VbStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let p = sample_params(seed);
        *out = VbAugmentParams {
            zoom: p.zoom,
            brightness: p.brightness,
            sigma: p.sigma,
            seed: p.seed,
        };
        Ok(())
    })
}

/// Zoom, brightness and blur one clip (`VB_CLIP_LEN` floats) into `out`.
///
/// # Safety
/// `clip` and `out` must each point to `VB_CLIP_LEN` floats; they may alias.
#[no_mangle]
pub unsafe extern "C" fn vb_augment_clip(clip: *const f32, params: *const VbAugmentParams, out: *mut f32) -> VbStatus {
    guard(|| {
        let p = params.as_ref().ok_or_else(|| fail(VbStatus::NullPointer, "params is NULL"))?;
        let params = AugmentationParams {
            zoom: p.zoom,
            brightness: p.brightness,
            sigma: p.sigma,
            seed: p.seed,
        };
        params.validate()?;
        let frames = slice_arg(clip, VB_CLIP_LEN, "clip")?.to_vec();
        let seq = FrameSequence::new("clip", frames, Label::NonViolent)?;
        let augmented = augment_sequence(&seq, &params)?;
        slice_mut_arg(out, VB_CLIP_LEN, "out")?.copy_from_slice(&augmented.frames);
        Ok(())
    })
}

/// Decode a video into 15 evenly spaced 100×100 RGB frames in `[0, 1]`.
///
/// # Safety
/// `path` must be a NUL-terminated string, `out` must hold `VB_CLIP_LEN`
/// floats and `frame_count` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn vb_decode_video(path: *const c_char, out: *mut f32, frame_count: *mut usize) -> VbStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let out = slice_mut_arg(out, VB_CLIP_LEN, "out")?;
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let decoded = decode_frames(&path, &id, None, FRAMES)?;
        for (dst, frame) in out.chunks_exact_mut(FRAME_LEN).zip(&decoded.frames) {
            dst.copy_from_slice(frame);
        }
        if let Some(count) = frame_count.as_mut() {
            *count = decoded.frame_count;
        }
        Ok(())
    })
}

/// Accuracy, per-class F1 and the confusion matrix of `n` labels (0 or 1).
///
/// # Safety
/// `preds` and `truths` must point to `n` bytes each; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn vb_metrics(preds: *const u8, truths: *const u8, n: usize, out: *mut VbMetrics) -> VbStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let preds: Vec<usize> = slice_arg(preds, n, "preds")?.iter().map(|&v| v as usize).collect();
        let truths: Vec<usize> = slice_arg(truths, n, "truths")?.iter().map(|&v| v as usize).collect();
        let cm = confusion_matrix(&preds, &truths)?;
        let m = metrics_from_confusion(&cm)?;
        *out = VbMetrics {
            accuracy: m.accuracy,
            f1_class0: m.f1_class0,
            f1_class1: m.f1_class1,
            confusion: [cm[0][0], cm[0][1], cm[1][0], cm[1][1]].map(|v| v as u64),
        };
        Ok(())
    })
}

/// `initial_lr · rate^epoch` (epochs count from zero).
#[no_mangle]
pub extern "C" fn vb_exponential_lr(initial_lr: f64, epoch: usize, rate: f64) -> f64 {
    exponential_lr(initial_lr, epoch, rate)
}

/// Build a model with the family's default architecture.
///
/// `weights_dir` may be NULL for the default location. Backbone families
/// fail with `VB_STATUS_WEIGHTS` when the ImageNet files are absent unless
/// `allow_random_init` is non-zero.
///
/// # Safety
/// `weights_dir` must be NULL or NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn vb_model_build(
    family: VbFamily,
    seed: u64,
    weights_dir: *const c_char,
    allow_random_init: i32,
    out: *mut *mut VbModel,
) -> VbStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let mut options = BuildOptions::new(seed);
        if !weights_dir.is_null() {
            options.weights_dir = path_arg(weights_dir, "weights_dir")?;
        }
        options.allow_random_init = allow_random_init != 0;
        let handle = build_model(&ModelSpec::new(family.into()), &options)?;
        *out = Box::into_raw(Box::new(VbModel(handle)));
        Ok(())
    })
}

/// Load a checkpoint directory written by `vb_model_save` or training.
///
/// # Safety
/// `dir` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn vb_model_load(dir: *const c_char, out: *mut *mut VbModel) -> VbStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let handle = load_checkpoint(&path_arg(dir, "dir")?)?;
        *out = Box::into_raw(Box::new(VbModel(handle)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn vb_model_save(model: *const VbModel, dir: *const c_char) -> VbStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| fail(VbStatus::NullPointer, "model is NULL"))?;
        model.0.save_checkpoint(&path_arg(dir, "dir")?)?;
        Ok(())
    })
}

/// Total and trainable parameter counts; either pointer may be NULL.
///
/// # Safety
/// `model` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn vb_model_param_count(model: *const VbModel, total: *mut usize, trainable: *mut usize) -> VbStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| fail(VbStatus::NullPointer, "model is NULL"))?;
        if let Some(t) = total.as_mut() {
            *t = model.0.parameter_count;
        }
        if let Some(t) = trainable.as_mut() {
            *t = model.0.trainable_parameter_count;
        }
        Ok(())
    })
}

/// Class probabilities for `n` clips: `clips` holds `n · VB_CLIP_LEN`
/// floats, `probs` receives `n · 2` (non-violent, violent).
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn vb_model_predict(model: *const VbModel, clips: *const f32, n: usize, probs: *mut f32) -> VbStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| fail(VbStatus::NullPointer, "model is NULL"))?;
        if n == 0 {
            return Ok(());
        }
        let data = slice_arg(clips, n * VB_CLIP_LEN, "clips")?;
        let out = slice_mut_arg(probs, n * 2, "probs")?;
        let mut shape = vec![n];
        shape.extend_from_slice(&SEQUENCE_SHAPE);
        let batch = Tensor::new(shape, data.to_vec())?;
        let y = model.0.forward(&batch)?;
        out.copy_from_slice(y.data());
        Ok(())
    })
}

/// Release a model; NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn vb_model_free(model: *mut VbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Run the experiment described by a JSON config file. `failed_cells`
/// (nullable) receives the number of grid cells that failed.
///
/// # Safety
/// `config_path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn vb_run_experiment(config_path: *const c_char, failed_cells: *mut usize) -> VbStatus {
    guard(|| {
        let config = ExperimentConfig::load(&path_arg(config_path, "config_path")?)?;
        let outcome = run_experiment(&config)?;
        if let Some(f) = failed_cells.as_mut() {
            *f = outcome.failed();
        }
        Ok(())
    })
}
