//! C ABI over `saev-core`.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function. Every fallible call returns a
//! [`SaevStatus`]; on failure, [`saev_last_error`] describes what went
//! wrong on the calling thread. Outputs are written through pointers only
//! on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use saev_core::corpus::{read_shard, DataItem};
use saev_core::patchfilter::{make_mask, score_patches, PatchMethod};
use saev_core::ranking::{
    average_model_score, collect_activations, cross_modal_weight, rank, CrossModalWeights,
    RankMethod, RankedManifest, DEFAULT_MAX_TOKENS_PER_FEATURE,
};
use saev_core::sae::SaeModel;
use saev_core::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaevStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Dimension = 5,
    EmptyInput = 6,
    Degenerate = 7,
    Precondition = 8,
    MissingInput = 9,
    BufferTooSmall = 10,
    Panic = 11,
    Other = 12,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaevRankMethod {
    Cosine = 0,
    L0 = 1,
    Cooccur = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaevPatchMethod {
    L0 = 0,
    L1 = 1,
    Cooccur = 2,
    Cosine = 3,
}

/// A trained sparse autoencoder.
pub struct SaevModel(SaeModel<f32>);

/// Items read from one activation shard.
pub struct SaevCorpus(Vec<DataItem>);

/// Per-feature cross-modal weights.
pub struct SaevWeights(CrossModalWeights);

/// Items sorted by score.
pub struct SaevManifest(RankedManifest);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SaevStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => SaevStatus::Io,
            Error::Format(_) | Error::Corruption { .. } | Error::Config(_) => SaevStatus::Format,
            Error::Dimension { .. } => SaevStatus::Dimension,
            Error::InvalidArgument(_) | Error::OutOfRange { .. } => SaevStatus::InvalidArgument,
            Error::EmptyInput(_) => SaevStatus::EmptyInput,
            Error::Degenerate(_) => SaevStatus::Degenerate,
            Error::Precondition(_) => SaevStatus::Precondition,
            Error::MissingInput(_) => SaevStatus::MissingInput,
            _ => SaevStatus::Other,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SaevStatus::NullPointer, format!("{what} is null"))
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> SaevStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => SaevStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            SaevStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| {
        Failure(
            SaevStatus::InvalidArgument,
            "path is not valid UTF-8".into(),
        )
    })?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn saev_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn saev_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn saev_model_load(
    path: *const c_char,
    out_model: *mut *mut SaevModel,
) -> SaevStatus {
    guard(|| {
        let path = path_arg(path)?;
        let slot = out(out_model, "out_model")?;
        *slot = boxed(SaevModel(SaeModel::load(path)?));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `saev_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn saev_model_free(model: *mut SaevModel) {
    free(model)
}

/// Writes the dictionary size `n` and input width `m`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn saev_model_dims(
    model: *const SaevModel,
    n: *mut usize,
    m: *mut usize,
) -> SaevStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        let (n, m) = (out(n, "n")?, out(m, "m")?);
        *n = model.n();
        *m = model.m();
        Ok(())
    })
}

/// Encodes `rows` hidden vectors of width `m` (row-major) into
/// `rows * n` activations.
///
/// # Safety
/// `hidden` must hold `rows * m` floats and `out_z` `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn saev_model_encode(
    model: *const SaevModel,
    hidden: *const f32,
    rows: usize,
    out_z: *mut f32,
    out_len: usize,
) -> SaevStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        if rows == 0 {
            return Ok(());
        }
        if hidden.is_null() {
            return Err(null("hidden"));
        }
        if out_z.is_null() {
            return Err(null("out_z"));
        }
        let need = rows * model.n();
        if out_len < need {
            return Err(Failure(
                SaevStatus::BufferTooSmall,
                format!("out_z needs {need} floats, got {out_len}"),
            ));
        }
        let h = std::slice::from_raw_parts(hidden, rows * model.m());
        let h =
            ndarray::ArrayView2::from_shape((rows, model.m()), h).expect("shape matches length");
        let z = model.encode(h)?;
        std::slice::from_raw_parts_mut(out_z, need)
            .copy_from_slice(z.as_slice().expect("standard layout"));
        Ok(())
    })
}

/// # Safety
/// `path` must be a nul-terminated string and `out_corpus` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn saev_corpus_read_shard(
    path: *const c_char,
    out_corpus: *mut *mut SaevCorpus,
) -> SaevStatus {
    guard(|| {
        let path = path_arg(path)?;
        let slot = out(out_corpus, "out_corpus")?;
        *slot = boxed(SaevCorpus(read_shard(path)?));
        Ok(())
    })
}

/// # Safety
/// `corpus` must come from `saev_corpus_read_shard` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn saev_corpus_free(corpus: *mut SaevCorpus) {
    free(corpus)
}

/// Number of items.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn saev_corpus_len(corpus: *const SaevCorpus, len: *mut usize) -> SaevStatus {
    guard(|| {
        let corpus = &handle(corpus, "corpus")?.0;
        *out(len, "len")? = corpus.len();
        Ok(())
    })
}

/// Id and token count of the item at `index`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn saev_corpus_item(
    corpus: *const SaevCorpus,
    index: usize,
    item_id: *mut u64,
    token_count: *mut usize,
) -> SaevStatus {
    guard(|| {
        let corpus = &handle(corpus, "corpus")?.0;
        let item = corpus.get(index).ok_or_else(|| {
            Failure(
                SaevStatus::InvalidArgument,
                format!("item index {index} out of range ({})", corpus.len()),
            )
        })?;
        *out(item_id, "item_id")? = item.item_id;
        *out(token_count, "token_count")? = item.len();
        Ok(())
    })
}

/// Samples `sample_size` items, collects activations above `delta` and
/// computes one cross-modal weight per feature from the top `top_k` tokens.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn saev_weights_compute(
    corpus: *const SaevCorpus,
    model: *const SaevModel,
    delta: f64,
    top_k: usize,
    sample_size: usize,
    seed: u64,
    out_weights: *mut *mut SaevWeights,
) -> SaevStatus {
    guard(|| {
        let corpus = &handle(corpus, "corpus")?.0;
        let model = &handle(model, "model")?.0;
        let slot = out(out_weights, "out_weights")?;
        let sample = collect_activations(
            corpus,
            model,
            delta,
            sample_size,
            seed,
            DEFAULT_MAX_TOKENS_PER_FEATURE,
        )?;
        *slot = boxed(SaevWeights(cross_modal_weight(&sample, top_k)?));
        Ok(())
    })
}

/// # Safety
/// `path` must be a nul-terminated string and `out_weights` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn saev_weights_load(
    path: *const c_char,
    out_weights: *mut *mut SaevWeights,
) -> SaevStatus {
    guard(|| {
        let path = path_arg(path)?;
        let slot = out(out_weights, "out_weights")?;
        *slot = boxed(SaevWeights(CrossModalWeights::load(path)?));
        Ok(())
    })
}

/// # Safety
/// `weights` must be valid and `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn saev_weights_save(
    weights: *const SaevWeights,
    path: *const c_char,
) -> SaevStatus {
    guard(|| {
        let weights = &handle(weights, "weights")?.0;
        weights.save(path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `weights` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn saev_weights_free(weights: *mut SaevWeights) {
    free(weights)
}

/// Copies the weights into `out_omega`, which must hold `n` values.
///
/// # Safety
/// `out_omega` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn saev_weights_get(
    weights: *const SaevWeights,
    out_omega: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> SaevStatus {
    guard(|| {
        let omega = &handle(weights, "weights")?.0.omega;
        *out(out_len, "out_len")? = omega.len();
        if capacity < omega.len() {
            return Err(Failure(
                SaevStatus::BufferTooSmall,
                format!("out_omega needs {} doubles, got {capacity}", omega.len()),
            ));
        }
        if !omega.is_empty() {
            if out_omega.is_null() {
                return Err(null("out_omega"));
            }
            std::slice::from_raw_parts_mut(out_omega, omega.len()).copy_from_slice(omega);
        }
        Ok(())
    })
}

/// Mean of the nonzero weights.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn saev_average_model_score(
    weights: *const SaevWeights,
    score: *mut f64,
) -> SaevStatus {
    guard(|| {
        let weights = &handle(weights, "weights")?.0;
        let slot = out(score, "score")?;
        *slot = average_model_score(weights)?;
        Ok(())
    })
}

/// Scores and sorts every item. `weights` may be null unless `method` is
/// cosine.
///
/// # Safety
/// All non-optional pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn saev_rank(
    corpus: *const SaevCorpus,
    model: *const SaevModel,
    method: SaevRankMethod,
    weights: *const SaevWeights,
    delta: f64,
    out_manifest: *mut *mut SaevManifest,
) -> SaevStatus {
    guard(|| {
        let corpus = &handle(corpus, "corpus")?.0;
        let model = &handle(model, "model")?.0;
        let slot = out(out_manifest, "out_manifest")?;
        let method = match method {
            SaevRankMethod::Cosine => RankMethod::Cosine,
            SaevRankMethod::L0 => RankMethod::L0,
            SaevRankMethod::Cooccur => RankMethod::Cooccur,
        };
        let weights = weights.as_ref().map(|w| &w.0);
        *slot = boxed(SaevManifest(rank(corpus, model, method, weights, delta)?));
        Ok(())
    })
}

/// # Safety
/// `manifest` must come from `saev_rank` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn saev_manifest_free(manifest: *mut SaevManifest) {
    free(manifest)
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn saev_manifest_len(
    manifest: *const SaevManifest,
    len: *mut usize,
) -> SaevStatus {
    guard(|| {
        let manifest = &handle(manifest, "manifest")?.0;
        *out(len, "len")? = manifest.len();
        Ok(())
    })
}

/// Item id and score at 0-based rank `index`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn saev_manifest_get(
    manifest: *const SaevManifest,
    index: usize,
    item_id: *mut u64,
    score: *mut f64,
) -> SaevStatus {
    guard(|| {
        let manifest = &handle(manifest, "manifest")?.0;
        let e = manifest.entries.get(index).ok_or_else(|| {
            Failure(
                SaevStatus::InvalidArgument,
                format!("rank {index} out of range ({})", manifest.len()),
            )
        })?;
        *out(item_id, "item_id")? = e.item_id;
        *out(score, "score")? = e.score;
        Ok(())
    })
}

/// Scores the vision patches of item `index` and writes the kept token
/// indices (ascending) into `out_kept`. `*out_len` receives the kept count
/// even when `capacity` is too small.
///
/// # Safety
/// `out_kept` must hold `capacity` values; other pointers must be valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn saev_patch_mask(
    corpus: *const SaevCorpus,
    index: usize,
    model: *const SaevModel,
    method: SaevPatchMethod,
    weights: *const SaevWeights,
    delta: f64,
    gamma: f64,
    out_kept: *mut u32,
    capacity: usize,
    out_len: *mut usize,
) -> SaevStatus {
    guard(|| {
        let corpus = &handle(corpus, "corpus")?.0;
        let model = &handle(model, "model")?.0;
        let out_len = out(out_len, "out_len")?;
        let item = corpus.get(index).ok_or_else(|| {
            Failure(
                SaevStatus::InvalidArgument,
                format!("item index {index} out of range ({})", corpus.len()),
            )
        })?;
        let method = match method {
            SaevPatchMethod::L0 => PatchMethod::L0,
            SaevPatchMethod::L1 => PatchMethod::L1,
            SaevPatchMethod::Cooccur => PatchMethod::Cooccur,
            SaevPatchMethod::Cosine => PatchMethod::Cosine,
        };
        let scores = score_patches(item, model, method, delta, weights.as_ref().map(|w| &w.0))?;
        let mask = make_mask(&scores, gamma)?;
        *out_len = mask.kept.len();
        if capacity < mask.kept.len() {
            return Err(Failure(
                SaevStatus::BufferTooSmall,
                format!("out_kept needs {} slots, got {capacity}", mask.kept.len()),
            ));
        }
        if !mask.kept.is_empty() {
            if out_kept.is_null() {
                return Err(null("out_kept"));
            }
            std::slice::from_raw_parts_mut(out_kept, mask.kept.len()).copy_from_slice(&mask.kept);
        }
        Ok(())
    })
}
