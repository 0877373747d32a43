//! Reference mean-field solutions: exact radial families and grid solvers.

pub mod bounds;
pub mod euler_poisson;
pub mod exact;
pub mod fft;
pub mod grid;
pub mod radial;
pub mod transport;

pub use bounds::{field_bounds, FieldBounds};
pub use euler_poisson::{EulerPoisson, MarkerState, RadialLagrangian};
pub use exact::{ExactSolution, Family};
pub use fft::{GridField, PotentialSolver};
pub use grid::{GridGeometry, MeasureGrid, VelocityGrid};
pub use radial::RadialMeasure;
pub use transport::{Evolver, TransportKind};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::quad::{gl, gl_rule};
use std::f64::consts::PI;

/// A probability density together with its potential `h = g * mu`.
pub trait MeanField: Send + Sync {
    fn dim(&self) -> usize;
    fn kernel(&self) -> &KernelSpec;
    fn density(&self, x: &[f64]) -> f64;
    fn potential(&self, x: &[f64]) -> Result<f64>;
    fn grad_potential(&self, x: &[f64]) -> Result<Vec<f64>>;
    /// `iint g(x - y) dmu dmu`.
    fn self_energy(&self) -> Result<f64>;
    fn sup_density(&self) -> f64;
    /// `int f_eta(x - x0) dmu(x)`.
    fn local_f_integral(&self, x0: &[f64], eta: f64) -> Result<f64> {
        shell_f_integral(self, x0, eta)
    }
}

/// Sphere average of the density around `x0` at radius `r`, times the sphere area.
fn shell_density<M: MeanField + ?Sized>(mu: &M, x0: &[f64], r: f64) -> f64 {
    match x0.len() {
        1 => mu.density(&[x0[0] + r]) + mu.density(&[x0[0] - r]),
        2 => {
            let m = 64;
            let step = 2.0 * PI / m as f64;
            (0..m)
                .map(|k| {
                    let th = step * (k as f64 + 0.5);
                    mu.density(&[x0[0] + r * th.cos(), x0[1] + r * th.sin()])
                })
                .sum::<f64>()
                * step
        }
        _ => {
            let m = 32;
            let step = 2.0 * PI / m as f64;
            let mut acc = 0.0;
            for &(c, w) in gl_rule(16) {
                let sn = (1.0 - c * c).sqrt();
                for k in 0..m {
                    let ph = step * (k as f64 + 0.5);
                    let p = [x0[0] + r * sn * ph.cos(), x0[1] + r * sn * ph.sin(), x0[2] + r * c];
                    acc += w * step * mu.density(&p);
                }
            }
            acc
        }
    }
}

/// Shell-by-shell quadrature of `int f_eta(x - x0) dmu(x)`.
pub fn shell_f_integral<M: MeanField + ?Sized>(mu: &M, x0: &[f64], eta: f64) -> Result<f64> {
    let d = x0.len();
    if d > 3 {
        return Err(Error::OutOfRegime("local integrals implemented for d <= 3".into()));
    }
    if !(eta > 0.0) {
        return Err(Error::invalid("truncation radius must be positive"));
    }
    let spec = *mu.kernel();
    let f = |r: f64| spec.f_eta_r(r, eta) * r.powi(d as i32 - 1) * shell_density(mu, x0, r);
    // dyadic panels toward the singular point, then an analytic tail with the
    // density frozen
    const LEVELS: i32 = 40;
    let mut acc = 0.0;
    let mut hi = eta;
    for _ in 0..LEVELS {
        let lo = 0.5 * hi;
        acc += gl(lo, hi, 6, f);
        hi = lo;
    }
    let df = d as f64;
    let tail = match spec.mode() {
        crate::kernel::Mode::Riesz(s) => hi.powf(df - s) / (df - s) - eta.powf(-s) * hi.powf(df) / df,
        crate::kernel::Mode::Log => hi.powf(df) / df * ((eta / hi).ln() + 1.0 / df),
    };
    Ok(acc + tail * shell_density(mu, x0, 0.5 * hi))
}

/// Velocity of a mean-field flow with mobility `kappa (alpha I + beta J)`.
pub fn mobility_velocity(grad: &[f64], kappa: f64, alpha: f64, beta: f64, j: &[f64]) -> Vec<f64> {
    let d = grad.len();
    (0..d)
        .map(|a| {
            let mut v = alpha * grad[a];
            if beta != 0.0 {
                for b in 0..d {
                    v += beta * j[a * d + b] * grad[b];
                }
            }
            -kappa * v
        })
        .collect()
}

/// Gauss-Legendre average of `f` over a box, `n` points per axis.
pub(crate) fn box_gl<F: FnMut(&[f64]) -> f64>(lo: &[f64], hi: &[f64], n: usize, mut f: F) -> f64 {
    let d = lo.len();
    let mut p = vec![0.0; d];
    fn rec<F: FnMut(&[f64]) -> f64>(k: usize, lo: &[f64], hi: &[f64], n: usize, p: &mut Vec<f64>, f: &mut F) -> f64 {
        if k == lo.len() {
            return f(p);
        }
        gl(lo[k], hi[k], n, |x| {
            p[k] = x;
            rec(k + 1, lo, hi, n, p, f)
        })
    }
    rec(0, lo, hi, n, &mut p, &mut f)
}
