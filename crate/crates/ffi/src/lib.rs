//! C ABI over the vgpmil library.
//!
//! Every fallible call returns a [`VgpmilStatus`]; on failure the message is
//! kept per thread and read with [`vgpmil_last_error_message`]. Handles are
//! opaque and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vgpmil::data::{self, MilDataset, SynthConfig};
use vgpmil::gsm::GsmDensity;
use vgpmil::inference::{self, ModelConfig};
use vgpmil::kernel::{KernelParams, NormMode};
use vgpmil::metrics;
use vgpmil::model::TrainedModel;
use vgpmil::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VgpmilStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Malformed CSV, inconsistent dataset or model file.
    Data = 3,
    /// Factorization or quadrature failure.
    Numerical = 4,
    Io = 5,
    /// A Rust panic was caught at the boundary.
    Internal = 6,
}

/// Mixing family for the augmented likelihood.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VgpmilPsi {
    HyperbolicSecant = 0,
    GammaMix = 1,
}

/// Training options. Obtain defaults from [`vgpmil_train_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VgpmilTrainOptions {
    pub inducing: usize,
    pub psi: VgpmilPsi,
    /// Only read when `psi` is `GammaMix`.
    pub alpha: f64,
    pub beta: f64,
    pub h: f64,
    pub variance: f64,
    /// Values `<= 0` select the feature dimension.
    pub lengthscale: f64,
    /// True selects `exp(-|x - x'| / 2l)` instead of the squared distance.
    pub unsquared_norm: bool,
    pub max_epochs: usize,
    pub patience: usize,
    pub samples: usize,
    pub hyperopt: bool,
    pub seed: u64,
}

/// Opaque bag dataset.
pub struct VgpmilDataset(MilDataset);

/// Opaque trained model.
pub struct VgpmilModel(TrainedModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    let c = CString::new(msg).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn status_of(e: &Error) -> VgpmilStatus {
    match e {
        Error::InvalidParameter { .. } | Error::DimensionMismatch { .. } | Error::Metric(_) => {
            VgpmilStatus::InvalidArgument
        }
        Error::Factorization { .. } | Error::Quadrature(_) => VgpmilStatus::Numerical,
        Error::Data { .. } | Error::Dataset(_) | Error::Model(_) | Error::Json(_) => VgpmilStatus::Data,
        Error::Io(_) => VgpmilStatus::Io,
    }
}

struct Failure(VgpmilStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(VgpmilStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(VgpmilStatus::InvalidArgument, msg.into())
}

/// Runs `body`, translating errors and panics into a status.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> VgpmilStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => VgpmilStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_last_error(format!("internal error: {msg}"));
            VgpmilStatus::Internal
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{what}` is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_slot<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn vgpmil_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vgpmil_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads a bag CSV.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn vgpmil_dataset_load_csv(path: *const c_char, out: *mut *mut VgpmilDataset) -> VgpmilStatus {
    guard(|| {
        let slot = out_slot(out, "out")?;
        let path = path_arg(path, "path")?;
        let data = data::load_csv(path)?;
        *slot = Box::into_raw(Box::new(VgpmilDataset(data)));
        Ok(())
    })
}

/// Draws a synthetic dataset with default generator settings apart from the
/// bag count and seed.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn vgpmil_dataset_generate(n_bags: usize, seed: u64, out: *mut *mut VgpmilDataset) -> VgpmilStatus {
    guard(|| {
        let slot = out_slot(out, "out")?;
        let cfg = SynthConfig {
            num_bags: n_bags,
            seed,
            ..SynthConfig::default()
        };
        *slot = Box::into_raw(Box::new(VgpmilDataset(data::gen_synth(&cfg)?)));
        Ok(())
    })
}

/// Writes a dataset as bag CSV.
///
/// # Safety
/// `data` must come from this library and `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn vgpmil_dataset_save_csv(data: *const VgpmilDataset, path: *const c_char) -> VgpmilStatus {
    guard(|| {
        let d = handle(data, "data")?;
        let path = path_arg(path, "path")?;
        data::save_csv(&d.0, path)?;
        Ok(())
    })
}

/// Number of bags, or 0 for a null handle.
///
/// # Safety
/// `data` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn vgpmil_dataset_n_bags(data: *const VgpmilDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.n_bags())
}

/// Number of instances, or 0 for a null handle.
///
/// # Safety
/// `data` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn vgpmil_dataset_n_instances(data: *const VgpmilDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.n_instances())
}

/// Feature dimension, or 0 for a null handle.
///
/// # Safety
/// `data` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn vgpmil_dataset_dim(data: *const VgpmilDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.dim())
}

/// Releases a dataset. Null is a no-op.
///
/// # Safety
/// `data` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vgpmil_dataset_free(data: *mut VgpmilDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Default training options.
#[no_mangle]
pub extern "C" fn vgpmil_train_options_default() -> VgpmilTrainOptions {
    let c = ModelConfig::default();
    VgpmilTrainOptions {
        inducing: c.inducing,
        psi: VgpmilPsi::HyperbolicSecant,
        alpha: 1.0,
        beta: 4.0,
        h: c.h,
        variance: 0.5,
        lengthscale: 0.0,
        unsquared_norm: false,
        max_epochs: c.max_epochs,
        patience: c.patience,
        samples: c.samples,
        hyperopt: c.hyperopt,
        seed: c.seed,
    }
}

fn build_setup(o: &VgpmilTrainOptions, data: &MilDataset) -> Result<(ModelConfig, KernelParams, GsmDensity), Failure> {
    let psi = match o.psi {
        VgpmilPsi::HyperbolicSecant => GsmDensity::HyperbolicSecant,
        VgpmilPsi::GammaMix => GsmDensity::gamma_mix(o.alpha, o.beta)?,
    };
    let l = if o.lengthscale > 0.0 { o.lengthscale } else { data.dim() as f64 };
    let mode = if o.unsquared_norm { NormMode::Unsquared } else { NormMode::Squared };
    let kernel = KernelParams::new(o.variance, l, mode)?;
    let config = ModelConfig {
        h: o.h,
        inducing: o.inducing.min(data.n_instances()),
        max_epochs: o.max_epochs,
        patience: o.patience,
        samples: o.samples,
        hyperopt: o.hyperopt,
        seed: o.seed,
        ..ModelConfig::default()
    };
    Ok((config, kernel, psi))
}

/// Trains a model. `validation` may be null; when given it drives early
/// stopping. `options` may be null for defaults.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vgpmil_train(
    data: *const VgpmilDataset,
    validation: *const VgpmilDataset,
    options: *const VgpmilTrainOptions,
    out: *mut *mut VgpmilModel,
) -> VgpmilStatus {
    guard(|| {
        let slot = out_slot(out, "out")?;
        let d = handle(data, "data")?;
        let val = validation.as_ref().map(|v| &v.0);
        let opts = options.as_ref().copied().unwrap_or_else(|| vgpmil_train_options_default());
        let (config, kernel, psi) = build_setup(&opts, &d.0)?;
        let model = inference::train(&d.0, val, &config, kernel, &psi)?;
        *slot = Box::into_raw(Box::new(VgpmilModel(model)));
        Ok(())
    })
}

/// Loads a model file.
///
/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vgpmil_model_load(path: *const c_char, out: *mut *mut VgpmilModel) -> VgpmilStatus {
    guard(|| {
        let slot = out_slot(out, "out")?;
        let path = path_arg(path, "path")?;
        *slot = Box::into_raw(Box::new(VgpmilModel(TrainedModel::load(path)?)));
        Ok(())
    })
}

/// Saves a model file.
///
/// # Safety
/// `model` must be live and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn vgpmil_model_save(model: *const VgpmilModel, path: *const c_char) -> VgpmilStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let path = path_arg(path, "path")?;
        m.0.save(path)?;
        Ok(())
    })
}

/// Releases a model. Null is a no-op.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vgpmil_model_free(model: *mut VgpmilModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Predicts every bag and instance of `data`.
///
/// `bag_mean` and `bag_std` need room for `n_bags` values, in dataset bag
/// order. `instance_mean` and `instance_std` need `n_instances` values in
/// row order; either instance pointer may be null to skip them. `capacity`
/// arguments guard against short buffers.
///
/// # Safety
/// Non-null buffers must hold at least their stated capacity.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn vgpmil_predict(
    model: *const VgpmilModel,
    data: *const VgpmilDataset,
    samples: usize,
    seed: u64,
    bag_mean: *mut f64,
    bag_std: *mut f64,
    bag_capacity: usize,
    instance_mean: *mut f64,
    instance_std: *mut f64,
    instance_capacity: usize,
) -> VgpmilStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let d = handle(data, "data")?;
        if bag_mean.is_null() {
            return Err(null("bag_mean"));
        }
        if bag_std.is_null() {
            return Err(null("bag_std"));
        }
        let (nb, ni) = (d.0.n_bags(), d.0.n_instances());
        if bag_capacity < nb {
            return Err(invalid(format!("bag buffers hold {bag_capacity}, need {nb}")));
        }
        let want_instances = !instance_mean.is_null() || !instance_std.is_null();
        if want_instances && instance_capacity < ni {
            return Err(invalid(format!("instance buffers hold {instance_capacity}, need {ni}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let preds = metrics::predict_dataset(&m.0, &d.0, samples, &mut rng)?;
        let bm = std::slice::from_raw_parts_mut(bag_mean, nb);
        let bs = std::slice::from_raw_parts_mut(bag_std, nb);
        let mut im = (!instance_mean.is_null()).then(|| std::slice::from_raw_parts_mut(instance_mean, ni));
        let mut is = (!instance_std.is_null()).then(|| std::slice::from_raw_parts_mut(instance_std, ni));
        for (b, p) in preds.iter().enumerate() {
            bm[b] = p.mean;
            bs[b] = p.std;
            for (&n, ip) in d.0.bag(b).iter().zip(&p.instances) {
                if let Some(buf) = im.as_deref_mut() {
                    buf[n] = ip.mean;
                }
                if let Some(buf) = is.as_deref_mut() {
                    buf[n] = ip.std;
                }
            }
        }
        Ok(())
    })
}
