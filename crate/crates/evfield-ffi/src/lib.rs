//! C ABI for loading a trained checkpoint and encoding raw waveforms.
//!
//! Handles are opaque; every function returns a status code and writes
//! results through out-pointers. No function panics across the boundary.

use std::ffi::CStr;
use std::os::raw::c_char;
use std::path::Path;
use std::ptr;

use evfield::eval::extract_embedding;
use evfield::rng::stream;
use evfield::synthgen::Waveform;
use evfield::trainer::{load_checkpoint, Model, TrainConfig};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvfStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    LoadFailed = 3,
    ShapeMismatch = 4,
    EncodeFailed = 5,
    BufferTooSmall = 6,
}

/// Opaque model handle: a loaded checkpoint plus its training config.
pub struct EvfModel {
    cfg: TrainConfig,
    model: Model,
}

/// Load a model from a checkpoint file. On success writes a handle that
/// must be released with `evf_model_free`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must be a valid
/// pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn evf_model_load(
    path: *const c_char,
    out: *mut *mut EvfModel,
) -> EvfStatus {
    if path.is_null() || out.is_null() {
        return EvfStatus::NullArgument;
    }
    *out = ptr::null_mut();
    let Ok(path) = CStr::from_ptr(path).to_str() else {
        return EvfStatus::InvalidUtf8;
    };
    let loaded = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
        load_checkpoint(Path::new(path))
    }));
    match loaded {
        Ok(Ok((cfg, model, _, _))) => {
            *out = Box::into_raw(Box::new(EvfModel { cfg, model }));
            EvfStatus::Ok
        }
        _ => EvfStatus::LoadFailed,
    }
}

/// Release a handle returned by `evf_model_load`. Null is a no-op.
///
/// # Safety
/// `model` must be null or a handle previously returned by this library,
/// released at most once.
#[no_mangle]
pub unsafe extern "C" fn evf_model_free(model: *mut EvfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Embedding width of a loaded model, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle from `evf_model_load`.
#[no_mangle]
pub unsafe extern "C" fn evf_embedding_dim(model: *const EvfModel) -> usize {
    model.as_ref().map_or(0, |m| m.cfg.encoder.model_dim)
}

/// Expected input channel count of a loaded model, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle from `evf_model_load`.
#[no_mangle]
pub unsafe extern "C" fn evf_input_channels(model: *const EvfModel) -> usize {
    model.as_ref().map_or(0, |m| m.cfg.encoder.input_channels)
}

/// Encode one recording of `channels` x `len` row-major f64 samples into a
/// unit-norm embedding; `out_embedding` must hold `embedding_capacity` >=
/// embedding_dim values. `seg_samples` segmentations (seeded by `seed`) are
/// averaged; the across-segmentation variance lands in `out_variance` when
/// non-null.
///
/// # Safety
/// `model` must be a live handle; `samples` must point to `channels * len`
/// f64 values; `out_embedding` must point to `embedding_capacity` writable
/// f64 values; `out_variance` must be null or a valid f64 pointer.
#[no_mangle]
pub unsafe extern "C" fn evf_encode(
    model: *const EvfModel,
    samples: *const f64,
    channels: usize,
    len: usize,
    seg_samples: usize,
    seed: u64,
    out_embedding: *mut f64,
    embedding_capacity: usize,
    out_variance: *mut f64,
) -> EvfStatus {
    let Some(handle) = model.as_ref() else {
        return EvfStatus::NullArgument;
    };
    if samples.is_null() || out_embedding.is_null() {
        return EvfStatus::NullArgument;
    }
    let dim = handle.cfg.encoder.model_dim;
    if embedding_capacity < dim {
        return EvfStatus::BufferTooSmall;
    }
    if channels != handle.cfg.encoder.input_channels
        || len == 0
        || len % handle.cfg.encoder.downsample() != 0
    {
        return EvfStatus::ShapeMismatch;
    }
    let data = std::slice::from_raw_parts(samples, channels * len).to_vec();
    let x = Waveform {
        channels,
        len,
        sample_rate: 1.0,
        data,
        subject_id: 0,
        modality_id: 0,
        label: None,
    };
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
        let mut rng = stream(seed, "ffi-encode", 0);
        extract_embedding(
            &x,
            &handle.model.encoders[0],
            &handle.cfg.seg,
            seg_samples.max(1),
            &mut rng,
        )
    }));
    match result {
        Ok(Ok((z, var))) => {
            ptr::copy_nonoverlapping(z.as_ptr(), out_embedding, dim);
            if !out_variance.is_null() {
                *out_variance = var;
            }
            EvfStatus::Ok
        }
        _ => EvfStatus::EncodeFailed,
    }
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn evf_status_message(status: EvfStatus) -> *const c_char {
    let msg: &'static [u8] = match status {
        EvfStatus::Ok => b"ok\0",
        EvfStatus::NullArgument => b"null argument\0",
        EvfStatus::InvalidUtf8 => b"path is not valid UTF-8\0",
        EvfStatus::LoadFailed => b"checkpoint load failed\0",
        EvfStatus::ShapeMismatch => b"input shape incompatible with model\0",
        EvfStatus::EncodeFailed => b"encoding failed\0",
        EvfStatus::BufferTooSmall => b"embedding buffer too small\0",
    };
    msg.as_ptr() as *const c_char
}
