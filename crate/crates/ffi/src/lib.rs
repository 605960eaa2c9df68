//! C interface to a trained model.
//!
//! Every fallible call returns an [`LdamStatus`]. On failure the message is
//! kept per thread and read back with [`ldam_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ldam_core::data::TaskSchema;
use ldam_core::embeddings::EmbeddingProvider;
use ldam_core::model::{Checkpoint, ForwardOutput, Ldam, NameEmbeddings, META_EMBEDDINGS};
use ldam_core::numerics::Tensor;
use ldam_core::LdamError;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LdamStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    CorruptCheckpoint = 4,
    UnsupportedVersion = 5,
    Dimension = 6,
    Config = 7,
    Embedding = 8,
    BufferTooSmall = 9,
    Runtime = 10,
    Panic = 11,
}

impl From<&LdamError> for LdamStatus {
    fn from(e: &LdamError) -> Self {
        match e {
            LdamError::Io { .. } => Self::Io,
            LdamError::CorruptCheckpoint(_) => Self::CorruptCheckpoint,
            LdamError::CheckpointVersion { .. } => Self::UnsupportedVersion,
            LdamError::Dimension(_) => Self::Dimension,
            LdamError::Config(_) | LdamError::Empty(_) => Self::Config,
            LdamError::Embedding(_) => Self::Embedding,
            _ => Self::Runtime,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(LdamStatus, String);

impl From<LdamError> for Failure {
    fn from(e: LdamError) -> Self {
        Failure(LdamStatus::from(&e), e.to_string())
    }
}

fn null_arg(what: &str) -> Failure {
    Failure(LdamStatus::NullArgument, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic for [`ldam_last_error`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LdamStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LdamStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            LdamStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null_arg(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(LdamStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// A loaded model with its schema and embeddings.
pub struct LdamModel {
    model: Ldam,
    provider: EmbeddingProvider,
    names: NameEmbeddings,
    label_names: Vec<CString>,
    indicator_names: Vec<CString>,
}

impl LdamModel {
    fn new(ck: Checkpoint, provider: EmbeddingProvider) -> Result<Self, LdamError> {
        let schema: TaskSchema = ck.schema()?;
        let model = Ldam::from_parts(ck.config, ck.params)?;
        if provider.dim() != model.config.embed_dim {
            return Err(LdamError::Dimension(format!(
                "embedding dim {} differs from model dim {}",
                provider.dim(),
                model.config.embed_dim
            )));
        }
        let names = NameEmbeddings::from_schema(&provider, &schema)?;
        names.check(&model.config)?;
        let c = |v: &[String]| v.iter().map(|s| CString::new(s.replace('\0', " ")).expect("no interior nul")).collect();
        Ok(Self {
            label_names: c(&schema.label_names),
            indicator_names: c(&schema.indicator_names),
            model,
            provider,
            names,
        })
    }

    unsafe fn run(
        &self,
        tokens: *const *const c_char,
        n_tokens: usize,
        series: *const f64,
        series_len: usize,
    ) -> Result<ForwardOutput, Failure> {
        let cfg = &self.model.config;
        let note = if cfg.mode.uses_text() {
            if tokens.is_null() {
                return Err(null_arg("tokens"));
            }
            let words = std::slice::from_raw_parts(tokens, n_tokens)
                .iter()
                .map(|&t| str_arg(t, "token").map(str::to_string))
                .collect::<Result<Vec<_>, _>>()?;
            Some(self.model.embed_note(&self.provider, &words)?)
        } else {
            None
        };
        let want = cfg.n_indicators * cfg.time_steps;
        let series = if cfg.mode.uses_timeseries() {
            if series.is_null() {
                return Err(null_arg("series"));
            }
            if series_len != want {
                return Err(Failure(
                    LdamStatus::Dimension,
                    format!("series has {series_len} values, model expects {want}"),
                ));
            }
            std::slice::from_raw_parts(series, series_len).to_vec()
        } else {
            vec![0.0; want]
        };
        let series = Tensor::new(&[cfg.n_indicators, cfg.time_steps], series)?;
        Ok(self.model.forward(note.as_ref(), &series, &self.names)?)
    }
}

unsafe fn copy_out(src: &[f64], dst: *mut f64, dst_len: usize, what: &str) -> Result<(), Failure> {
    if dst.is_null() {
        return Err(null_arg(what));
    }
    if dst_len < src.len() {
        return Err(Failure(LdamStatus::BufferTooSmall, format!("{what} holds {dst_len}, need {}", src.len())));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ldam_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn ldam_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint using the embedding source recorded in it.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ldam_model_load(path: *const c_char, out: *mut *mut LdamModel) -> LdamStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_arg("out"));
        }
        *out = ptr::null_mut();
        let ck = Checkpoint::load(Path::new(str_arg(path, "path")?))?;
        let source = ck
            .metadata
            .get(META_EMBEDDINGS)
            .ok_or_else(|| LdamError::Config("checkpoint names no embeddings".into()))?;
        let provider = EmbeddingProvider::from_source(source)?;
        *out = Box::into_raw(Box::new(LdamModel::new(ck, provider)?));
        Ok(())
    })
}

/// Loads a checkpoint with embeddings read from a TSV file.
///
/// # Safety
/// `path` and `embeddings` must be NUL-terminated strings and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ldam_model_load_with_embeddings(
    path: *const c_char,
    embeddings: *const c_char,
    out: *mut *mut LdamModel,
) -> LdamStatus {
    guard(|| {
        if out.is_null() {
            return Err(null_arg("out"));
        }
        *out = ptr::null_mut();
        let ck = Checkpoint::load(Path::new(str_arg(path, "path")?))?;
        let provider = EmbeddingProvider::from_file(Path::new(str_arg(embeddings, "embeddings")?))?;
        *out = Box::into_raw(Box::new(LdamModel::new(ck, provider)?));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from a load call and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ldam_model_free(model: *mut LdamModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ldam_model_num_labels(model: *const LdamModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config.n_labels)
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ldam_model_num_indicators(model: *const LdamModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config.n_indicators)
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ldam_model_time_steps(model: *const LdamModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config.time_steps)
}

/// Name of label `index`, or null when out of range. Owned by the model.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ldam_model_label_name(model: *const LdamModel, index: usize) -> *const c_char {
    model.as_ref().and_then(|m| m.label_names.get(index)).map_or(ptr::null(), |c| c.as_ptr())
}

/// Name of indicator `index`, or null when out of range. Owned by the model.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ldam_model_indicator_name(model: *const LdamModel, index: usize) -> *const c_char {
    model.as_ref().and_then(|m| m.indicator_names.get(index)).map_or(ptr::null(), |c| c.as_ptr())
}

/// Label probabilities for one sample.
///
/// `tokens` holds `n_tokens` note tokens; `series` holds the indicator
/// matrix row by row, `num_indicators × time_steps` values. An input the
/// model's mode does not use may be null. `out` receives `num_labels` values.
///
/// # Safety
/// Every non-null pointer must be valid for the stated length.
#[no_mangle]
pub unsafe extern "C" fn ldam_model_predict(
    model: *const LdamModel,
    tokens: *const *const c_char,
    n_tokens: usize,
    series: *const f64,
    series_len: usize,
    out: *mut f64,
    out_len: usize,
) -> LdamStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null_arg("model"))?;
        let result = m.run(tokens, n_tokens, series, series_len)?;
        copy_out(&result.y_hat, out, out_len, "out")
    })
}

/// Attention weights for one sample.
///
/// `token_weights` receives one weight per retained token (the note is cut to
/// the model's maximum length) and `channel_weights` one per indicator. The
/// counts written are stored in `n_token_weights` and `n_channel_weights`;
/// a branch the model does not run writes zero. Output pointers for an
/// unused branch may be null.
///
/// # Safety
/// Every non-null pointer must be valid for the stated length.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ldam_model_attention(
    model: *const LdamModel,
    tokens: *const *const c_char,
    n_tokens: usize,
    series: *const f64,
    series_len: usize,
    token_weights: *mut f64,
    token_weights_len: usize,
    n_token_weights: *mut usize,
    channel_weights: *mut f64,
    channel_weights_len: usize,
    n_channel_weights: *mut usize,
) -> LdamStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null_arg("model"))?;
        if n_token_weights.is_null() || n_channel_weights.is_null() {
            return Err(null_arg("count pointer"));
        }
        let result = m.run(tokens, n_tokens, series, series_len)?;
        *n_token_weights = 0;
        *n_channel_weights = 0;
        if let Some(beta) = &result.beta {
            copy_out(beta, token_weights, token_weights_len, "token_weights")?;
            *n_token_weights = beta.len();
        }
        if let Some(alpha) = &result.alpha {
            copy_out(alpha, channel_weights, channel_weights_len, "channel_weights")?;
            *n_channel_weights = alpha.len();
        }
        Ok(())
    })
}
