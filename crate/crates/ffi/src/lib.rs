//! C interface to `corrsched-core`.
//!
//! Every function returns a [`CsStatus`]. On failure a description is kept
//! per thread and can be read with [`cs_last_error_message`]. Handles are
//! opaque and must be released with the matching `*_free` function.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use corrsched_core::penalty::{
    build_f_table, JointCost, JointPenalty, PenaltyMode, PenaltyTable, Provenance, TabulatedCost,
    TruncationConfig,
};
use corrsched_core::policies::{
    LambdaMode, Maf, Mgf, RandomPolicy, RoundRobin, Scheduler, TieBreak,
};
use corrsched_core::relaxed_mdp::{cyclic_search, value_iteration, ViOptions};
use corrsched_core::sim_engine::{SimConfig, Simulation};
use corrsched_core::{Error, GaussMarkovModel};
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidModel = 3,
    Numerical = 4,
    Unsupported = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsPenaltyMode {
    ModelDerived = 0,
    ClosedForm = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsPolicy {
    Mgf = 0,
    Maf = 1,
    Random = 2,
    RoundRobin = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CsCycle {
    pub tau1: usize,
    pub tau2: usize,
    pub l_opt: f64,
    pub touches_cap: bool,
}

/// Opaque signal model.
pub struct CsModel {
    inner: GaussMarkovModel,
}

/// Opaque simulation with its scheduler.
pub struct CsSim {
    sim: Simulation,
    policy: Box<dyn Scheduler>,
    counts: Vec<u64>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> CsStatus {
    match err {
        Error::InvalidArgument(_)
        | Error::Config(_)
        | Error::EmptyDataset
        | Error::InsufficientSamples { .. } => CsStatus::InvalidArgument,
        Error::InvalidModel(_) | Error::Nonstationary { .. } | Error::UnboundedEntropy { .. } => {
            CsStatus::InvalidModel
        }
        Error::Unsupported(_) | Error::StateSpaceTooLarge { .. } => CsStatus::Unsupported,
        _ => CsStatus::Numerical,
    }
}

struct Fail(CsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(CsStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            CsStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn model_ref<'a>(model: *const CsModel) -> Result<&'a GaussMarkovModel, Fail> {
    model
        .as_ref()
        .map(|m| &m.inner)
        .ok_or_else(|| null("model"))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// The last error message raised on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds the carrier model: `m` sources with AR coefficients `sqrt(a_squared)`,
/// unit noise, and source 0 piggybacking every other source with
/// probability `p`.
#[no_mangle]
pub unsafe extern "C" fn cs_model_new_default(
    a_squared: *const f64,
    m: usize,
    p: f64,
    out: *mut *mut CsModel,
) -> CsStatus {
    guard(|| {
        let a2 = slice(a_squared, m, "a_squared")?;
        let inner = GaussMarkovModel::default_model(a2, p)?;
        put(out, Box::into_raw(Box::new(CsModel { inner })), "out")
    })
}

/// Builds a general model. `noise_cov` and `piggyback` are row-major
/// `m × m` matrices; `piggyback[n][k]` is the probability that a packet of
/// source `k` carries source `n`.
#[no_mangle]
pub unsafe extern "C" fn cs_model_new(
    m: usize,
    ar_coeffs: *const f64,
    noise_cov: *const f64,
    piggyback: *const f64,
    out: *mut *mut CsModel,
) -> CsStatus {
    guard(|| {
        let a = slice(ar_coeffs, m, "ar_coeffs")?.to_vec();
        let q = DMatrix::from_row_slice(m, m, slice(noise_cov, m * m, "noise_cov")?);
        let pb = DMatrix::from_row_slice(m, m, slice(piggyback, m * m, "piggyback")?);
        let inner = GaussMarkovModel::new(a, q, pb)?;
        put(out, Box::into_raw(Box::new(CsModel { inner })), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn cs_model_free(model: *mut CsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub unsafe extern "C" fn cs_model_num_sources(model: *const CsModel, out: *mut usize) -> CsStatus {
    guard(|| put(out, model_ref(model)?.num_sources(), "out"))
}

#[no_mangle]
pub unsafe extern "C" fn cs_model_stationary_variance(
    model: *const CsModel,
    m: usize,
    out: *mut f64,
) -> CsStatus {
    guard(|| {
        let model = model_ref(model)?;
        if m >= model.num_sources() {
            return Err(Fail(
                CsStatus::InvalidArgument,
                format!("source {m} out of range"),
            ));
        }
        put(out, model.stationary_variance(m)?, "out")
    })
}

/// Writes `f_m(1..=delta_bound)` into `out`, which must hold `delta_bound`
/// values.
#[no_mangle]
pub unsafe extern "C" fn cs_penalty_table(
    model: *const CsModel,
    m: usize,
    delta_bound: usize,
    mode: CsPenaltyMode,
    out: *mut f64,
) -> CsStatus {
    guard(|| {
        let model = model_ref(model)?;
        let mode = match mode {
            CsPenaltyMode::ModelDerived => PenaltyMode::ModelDerived,
            CsPenaltyMode::ClosedForm => PenaltyMode::ClosedForm,
        };
        let table = build_f_table(model, m, TruncationConfig::new(delta_bound)?, mode)?;
        slice_mut(out, delta_bound, "out")?.copy_from_slice(table.values());
        Ok(())
    })
}

/// `g_m` at the AoI vector `ages` (one entry per source, each at least 1).
#[no_mangle]
pub unsafe extern "C" fn cs_joint_penalty(
    model: *const CsModel,
    m: usize,
    ages: *const usize,
    len: usize,
    out: *mut f64,
) -> CsStatus {
    guard(|| {
        let model = model_ref(model)?;
        let ages = slice(ages, len, "ages")?;
        if len != model.num_sources() || m >= len || ages.contains(&0) {
            return Err(Fail(
                CsStatus::InvalidArgument,
                "ages must have one entry ≥ 1 per source and m must be in range".into(),
            ));
        }
        let g = JointPenalty::new(model.clone())?;
        put(out, g.cost(m, ages), "out")
    })
}

/// Solves the single-source relaxed problem for the penalty `f[0..len]`
/// (ages `1..=len`) and writes `J` into `out_j` (`len` values).
#[no_mangle]
pub unsafe extern "C" fn cs_value_iteration(
    f: *const f64,
    len: usize,
    gamma: f64,
    lambda: f64,
    out_j: *mut f64,
) -> CsStatus {
    guard(|| {
        let table = PenaltyTable::new(0, slice(f, len, "f")?.to_vec(), Provenance::External)?;
        let j = value_iteration(&table, gamma, lambda, ViOptions::default())?;
        slice_mut(out_j, len, "out_j")?.copy_from_slice(j.values());
        Ok(())
    })
}

/// Best cyclic schedule for a two-source model on one channel.
#[no_mangle]
pub unsafe extern "C" fn cs_cyclic_search(
    model: *const CsModel,
    delta_bound: usize,
    cap: usize,
    out: *mut CsCycle,
) -> CsStatus {
    guard(|| {
        let model = model_ref(model)?;
        if model.num_sources() != 2 {
            return Err(Fail(
                CsStatus::Unsupported,
                "cyclic search needs exactly two sources".into(),
            ));
        }
        let g = JointPenalty::new(model.clone())?;
        let table = TabulatedCost::from_fn(2, delta_bound, |m, ages| g.cost(m, ages))?;
        let r = cyclic_search(&table, delta_bound, cap)?;
        put(
            out,
            CsCycle {
                tau1: r.tau1,
                tau2: r.tau2,
                l_opt: r.l_opt,
                touches_cap: r.touches_cap,
            },
            "out",
        )
    })
}

/// Creates a simulation of `model` driven by `policy` on `channels`
/// channels. MGF uses model-derived penalties with subgradient λ updates.
#[no_mangle]
pub unsafe extern "C" fn cs_sim_new(
    model: *const CsModel,
    policy: CsPolicy,
    channels: usize,
    gamma: f64,
    delta_bound: usize,
    episode_len: usize,
    seed: u64,
    out: *mut *mut CsSim,
) -> CsStatus {
    guard(|| {
        let model = model_ref(model)?.clone();
        let nsrc = model.num_sources();
        if channels == 0 || channels > nsrc {
            return Err(Fail(
                CsStatus::InvalidArgument,
                format!("channels must be in 1..={nsrc}"),
            ));
        }
        let policy: Box<dyn Scheduler> = match policy {
            CsPolicy::Mgf => {
                let cfg = TruncationConfig::new(delta_bound)?;
                let tables = (0..nsrc)
                    .map(|m| build_f_table(&model, m, cfg, PenaltyMode::ModelDerived))
                    .collect::<Result<Vec<_>, _>>()?;
                Box::new(Mgf::new(
                    tables,
                    channels,
                    gamma,
                    1.0,
                    TieBreak::LowestIndex,
                    LambdaMode::Subgradient,
                )?)
            }
            CsPolicy::Maf => Box::new(Maf::new(channels, TieBreak::LowestIndex)),
            CsPolicy::Random => Box::new(RandomPolicy::uniform(nsrc, channels)?),
            CsPolicy::RoundRobin => Box::new(RoundRobin::new(nsrc, channels)?),
        };
        let cfg = SimConfig {
            gamma,
            delta_bound,
            episode_len,
            record_slots: false,
        };
        let sim = Simulation::new(model, cfg, seed)?;
        put(
            out,
            Box::into_raw(Box::new(CsSim {
                sim,
                policy,
                counts: vec![0; nsrc],
            })),
            "out",
        )
    })
}

/// Runs one episode and writes its discounted loss.
#[no_mangle]
pub unsafe extern "C" fn cs_sim_run_episode(sim: *mut CsSim, out_loss: *mut f64) -> CsStatus {
    guard(|| {
        let s = sim.as_mut().ok_or_else(|| null("sim"))?;
        let log = s.sim.run_episode(s.policy.as_mut())?;
        s.counts = log.schedule_counts.clone();
        put(out_loss, log.discounted_loss, "out_loss")
    })
}

/// Per-source schedule counts of the last episode; `out` holds one value
/// per source.
#[no_mangle]
pub unsafe extern "C" fn cs_sim_schedule_counts(
    sim: *const CsSim,
    out: *mut u64,
    len: usize,
) -> CsStatus {
    guard(|| {
        let s = sim.as_ref().ok_or_else(|| null("sim"))?;
        if len != s.counts.len() {
            return Err(Fail(
                CsStatus::InvalidArgument,
                format!("expected {} slots, got {len}", s.counts.len()),
            ));
        }
        slice_mut(out, len, "out")?.copy_from_slice(&s.counts);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cs_sim_free(sim: *mut CsSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}
