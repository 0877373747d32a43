//! C interface to mflab.
//!
//! Objects are opaque heap handles. Each constructor has a matching
//! `*_free`. Every fallible call returns an [`MflabStatus`];
//! on failure [`mflab_last_error`] describes the problem for the calling
//! thread. Panics are caught at the boundary and reported as
//! `MFLAB_STATUS_PANIC`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use mflab::dynamics::{self, FlowSpec, IntegratorConfig};
use mflab::meanfield::{ExactSolution, Family, MeanField, RadialMeasure};
use mflab::modenergy;
use mflab::particles::ParticleSystem;
use mflab::{Error, KernelSpec};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MflabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidSpec = 2,
    Singularity = 3,
    Collision = 4,
    OutOfRegime = 5,
    Integrator = 6,
    Cfl = 7,
    Shock = 8,
    Extrapolation = 9,
    GridMismatch = 10,
    Config = 11,
    Schema = 12,
    Io = 13,
    Panic = 14,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MflabFlow {
    Gradient = 0,
    Conservative = 1,
    Newton = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MflabFamily {
    ExpandingBall = 0,
    Barenblatt = 1,
    RadialVortexPatch = 2,
    UniformBallStatic = 3,
}

/// Interaction kernel.
pub struct MflabKernel(KernelSpec);

/// Particle positions (and velocities for second-order flows).
pub struct MflabParticles(ParticleSystem);

/// Radial reference density.
pub struct MflabMeasure(RadialMeasure);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

/// Failure inside an exported call.
enum Fail {
    Null,
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MflabStatus {
    match e {
        Error::Singularity => MflabStatus::Singularity,
        Error::Collision { .. } => MflabStatus::Collision,
        Error::InvalidSpec(_) => MflabStatus::InvalidSpec,
        Error::OutOfRegime(_) => MflabStatus::OutOfRegime,
        Error::Integrator { .. } => MflabStatus::Integrator,
        Error::Cfl { .. } => MflabStatus::Cfl,
        Error::Shock { .. } => MflabStatus::Shock,
        Error::Extrapolation => MflabStatus::Extrapolation,
        Error::GridMismatch(_) => MflabStatus::GridMismatch,
        Error::Config { .. } => MflabStatus::Config,
        Error::Schema { .. } => MflabStatus::Schema,
        Error::Io(_) => MflabStatus::Io,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> MflabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MflabStatus::Ok,
        Ok(Err(Fail::Null)) => {
            set_error("null pointer argument".into());
            MflabStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            MflabStatus::Panic
        }
    }
}

fn null() -> Fail {
    Fail::Null
}

unsafe fn deref<'a, T>(p: *const T) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(null)
}

unsafe fn write<T>(out: *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null());
    }
    out.write(v);
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mflab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mflab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Riesz kernel `|x|^{-s}`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mflab_kernel_riesz(d: usize, s: f64, out: *mut *mut MflabKernel) -> MflabStatus {
    guard(|| {
        let k = KernelSpec::riesz(d, s)?;
        write(out, Box::into_raw(Box::new(MflabKernel(k))))
    })
}

/// Logarithmic kernel `-log|x|` (d = 1, 2).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mflab_kernel_log(d: usize, out: *mut *mut MflabKernel) -> MflabStatus {
    guard(|| {
        let k = KernelSpec::log(d)?;
        write(out, Box::into_raw(Box::new(MflabKernel(k))))
    })
}

/// # Safety
/// `k` must come from a kernel constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mflab_kernel_free(k: *mut MflabKernel) {
    if !k.is_null() {
        drop(Box::from_raw(k));
    }
}

/// `g(r)`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mflab_kernel_eval(k: *const MflabKernel, r: f64, out: *mut f64) -> MflabStatus {
    guard(|| {
        let k = deref(k)?;
        if !(r > 0.0) {
            return Err(Error::Singularity.into());
        }
        write(out, k.0.g_r(r))
    })
}

/// Normalization constant of the kernel's extension.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mflab_kernel_constant(k: *const MflabKernel, out: *mut f64) -> MflabStatus {
    guard(|| write(out, deref(k)?.0.normalization_constant()))
}

/// Particles from `n * d` row-major positions; `velocities` may be NULL.
///
/// # Safety
/// `positions` (and `velocities` when given) must hold `n * d` doubles.
#[no_mangle]
pub unsafe extern "C" fn mflab_particles_new(
    d: usize,
    n: usize,
    positions: *const f64,
    velocities: *const f64,
    out: *mut *mut MflabParticles,
) -> MflabStatus {
    guard(|| {
        if positions.is_null() {
            return Err(null());
        }
        let pos = std::slice::from_raw_parts(positions, n * d).to_vec();
        let sys = if velocities.is_null() {
            ParticleSystem::new(d, pos)?
        } else {
            ParticleSystem::with_velocities(d, pos, std::slice::from_raw_parts(velocities, n * d).to_vec())?
        };
        write(out, Box::into_raw(Box::new(MflabParticles(sys))))
    })
}

/// # Safety
/// `p` must come from [`mflab_particles_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mflab_particles_free(p: *mut MflabParticles) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Number of particles; 0 for NULL.
///
/// # Safety
/// `p` must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn mflab_particles_len(p: *const MflabParticles) -> usize {
    p.as_ref().map_or(0, |p| p.0.n())
}

/// Copies positions into `buf`, which holds `len` doubles (at least `n * d`).
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mflab_particles_positions(p: *const MflabParticles, buf: *mut f64, len: usize) -> MflabStatus {
    guard(|| {
        let p = deref(p)?;
        let src = p.0.positions();
        if buf.is_null() {
            return Err(null());
        }
        if len < src.len() {
            return Err(Fail::Core(Error::invalid(format!("buffer holds {len} values, need {}", src.len()))));
        }
        std::ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
        Ok(())
    })
}

/// Advances the particles in place by `steps` RK4 steps of size `dt`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mflab_particles_advance(
    p: *mut MflabParticles,
    k: *const MflabKernel,
    flow: MflabFlow,
    dt: f64,
    steps: usize,
) -> MflabStatus {
    guard(|| {
        let p = p.as_mut().ok_or_else(null)?;
        let k = deref(k)?;
        let d = k.0.d();
        let flow = match flow {
            MflabFlow::Gradient => FlowSpec::gradient(d),
            MflabFlow::Conservative => FlowSpec::conservative(d),
            MflabFlow::Newton => FlowSpec::newton(d),
        };
        let traj = dynamics::run(&p.0, &flow, &k.0, &IntegratorConfig::fixed(dt), dt * steps as f64, steps.max(1), &mut [])?;
        p.0 = traj.snapshots.last().cloned().expect("trajectory has a final state");
        Ok(())
    })
}

/// `sum_{i != j} g(x_i - x_j)`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mflab_interaction_energy(p: *const MflabParticles, k: *const MflabKernel, out: *mut f64) -> MflabStatus {
    guard(|| {
        let e = mflab::particles::interaction_energy(&deref(p)?.0, &deref(k)?.0)?;
        write(out, e)
    })
}

/// Uniform ball of the given radius centered at `center` (`d` doubles, or NULL for the origin).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mflab_uniform_ball(k: *const MflabKernel, center: *const f64, radius: f64, out: *mut *mut MflabMeasure) -> MflabStatus {
    guard(|| {
        let k = deref(k)?;
        let d = k.0.d();
        let c = if center.is_null() { vec![0.0; d] } else { std::slice::from_raw_parts(center, d).to_vec() };
        let mu = RadialMeasure::uniform_ball(k.0, c, radius)?;
        write(out, Box::into_raw(Box::new(MflabMeasure(mu))))
    })
}

/// Closed-form solution of `family` at time `t`, coupling `kappa`, centered at the origin.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mflab_exact_solution(
    k: *const MflabKernel,
    family: MflabFamily,
    r0: f64,
    p: f64,
    kappa: f64,
    t: f64,
    out: *mut *mut MflabMeasure,
) -> MflabStatus {
    guard(|| {
        let k = deref(k)?;
        let family = match family {
            MflabFamily::ExpandingBall => Family::ExpandingBall,
            MflabFamily::Barenblatt => Family::Barenblatt,
            MflabFamily::RadialVortexPatch => Family::RadialVortexPatch,
            MflabFamily::UniformBallStatic => Family::UniformBallStatic,
        };
        let sol = ExactSolution::new(family, k.0, r0, p)?.with_coupling(kappa)?;
        write(out, Box::into_raw(Box::new(MflabMeasure(sol.at(t)?))))
    })
}

/// # Safety
/// `m` must come from a measure constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mflab_measure_free(m: *mut MflabMeasure) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Support radius of a radial measure.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mflab_measure_radius(m: *const MflabMeasure, out: *mut f64) -> MflabStatus {
    guard(|| write(out, deref(m)?.0.radius()))
}

/// Potential `h = g * mu` at `x` (`d` doubles).
///
/// # Safety
/// Pointers must be valid; `x` must hold `d` doubles.
#[no_mangle]
pub unsafe extern "C" fn mflab_measure_potential(m: *const MflabMeasure, x: *const f64, out: *mut f64) -> MflabStatus {
    guard(|| {
        let m = deref(m)?;
        if x.is_null() {
            return Err(null());
        }
        let x = std::slice::from_raw_parts(x, m.0.dim());
        write(out, m.0.potential(x)?)
    })
}

/// Modulated energy of the particles relative to `m`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mflab_modulated_energy(p: *const MflabParticles, m: *const MflabMeasure, out: *mut f64) -> MflabStatus {
    guard(|| write(out, modenergy::modulated_energy(&deref(p)?.0, &deref(m)?.0)?))
}

/// Truncated energy at the minimal distances, with `sum g(r_i)` and `min r_i`.
/// Any of the output pointers may be NULL.
///
/// # Safety
/// Non-NULL pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mflab_truncated_energy(
    p: *const MflabParticles,
    m: *const MflabMeasure,
    te: *mut f64,
    sum_g_r: *mut f64,
    min_r: *mut f64,
) -> MflabStatus {
    guard(|| {
        let r = modenergy::truncated_energy_at_r(&deref(p)?.0, &deref(m)?.0)?;
        for (ptr, v) in [(te, r.te_r), (sum_g_r, r.sum_g_r), (min_r, r.min_r)] {
            if !ptr.is_null() {
                ptr.write(v);
            }
        }
        Ok(())
    })
}

/// Runs the `simulate` command for a config file, writing under `out_dir`
/// (NULL: the config's output directory).
///
/// # Safety
/// Strings must be NUL-terminated UTF-8.
#[no_mangle]
pub unsafe extern "C" fn mflab_simulate(config_path: *const c_char, out_dir: *const c_char) -> MflabStatus {
    guard(|| {
        if config_path.is_null() {
            return Err(null());
        }
        let utf8 = |p: *const c_char| CStr::from_ptr(p).to_str().map(str::to_owned).map_err(|_| Error::invalid("path is not UTF-8"));
        let cfg = mflab::harness::ExperimentConfig::load(Path::new(&utf8(config_path)?))?;
        let out = if out_dir.is_null() { cfg.output.dir.clone() } else { utf8(out_dir)? };
        let summary = mflab::harness::simulate(&cfg, Path::new(&out))?;
        if summary.failures > 0 {
            return Err(Error::Integrator {
                t: f64::NAN,
                reason: format!("{} run(s) failed; see runs.jsonl", summary.failures),
            }
            .into());
        }
        Ok(())
    })
}
