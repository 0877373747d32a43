//! Radially symmetric probability densities `A (1 - |x-c|^2/R^2)_+^p`.

use super::MeanField;
use crate::error::{Error, Result};
use crate::kernel::{KernelSpec, Mode};
use crate::quad::{gl, gl_panels, tanh_sinh, unit_sphere_area};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::gamma;
use std::f64::consts::{LN_2, PI};
use std::sync::OnceLock;

const TOL: f64 = 1e-12;

#[derive(Debug)]
pub struct RadialMeasure {
    spec: KernelSpec,
    center: Vec<f64>,
    radius: f64,
    p: f64,
    amplitude: f64,
    self_energy: OnceLock<f64>,
}

impl Clone for RadialMeasure {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec,
            center: self.center.clone(),
            radius: self.radius,
            p: self.p,
            amplitude: self.amplitude,
            self_energy: self.self_energy.clone(),
        }
    }
}

/// `int_0^len f` for `f ~ t^e` near 0 with `e > -1`: dyadic panels down to
/// `len 2^-40`, then the pure power law. The far half may have an endpoint
/// singularity of its own and goes to tanh-sinh.
fn toward_zero<F: Fn(f64) -> f64>(len: f64, e: f64, f: F) -> f64 {
    if len <= 0.0 {
        return 0.0;
    }
    let mut hi = 0.5 * len;
    let mut acc = tanh_sinh(hi, len, TOL, &f);
    for _ in 0..40 {
        let lo = 0.5 * hi;
        acc += gl(lo, hi, 8, &f);
        hi = lo;
    }
    acc + hi * f(hi) / (1.0 + e)
}

/// Mass of `(1 - |x|^2)_+^p` on R^d.
pub fn profile_mass(d: usize, p: f64) -> f64 {
    let h = d as f64 / 2.0;
    PI.powf(h) * gamma(p + 1.0) / gamma(h + p + 1.0)
}

/// `g * (1-|x|^2)_+^p` is `c_b (1 - (s/d)|x|^2)` inside the unit ball when
/// `p = (s-d+2)/2`; returns `c_b`.
pub fn barenblatt_constant(d: usize, s: f64) -> f64 {
    let a = d as f64 - s;
    PI.powf(d as f64 / 2.0) * gamma(a / 2.0) * gamma(2.0 - a / 2.0) / gamma(d as f64 / 2.0)
}

impl RadialMeasure {
    pub fn new(spec: KernelSpec, center: Vec<f64>, radius: f64, p: f64) -> Result<Self> {
        if center.len() != spec.d() {
            return Err(Error::invalid("center dimension does not match kernel"));
        }
        if !(radius > 0.0) || !(p >= 0.0) || !radius.is_finite() {
            return Err(Error::invalid("radial profile needs R > 0 and p >= 0"));
        }
        let amplitude = 1.0 / (radius.powi(spec.d() as i32) * profile_mass(spec.d(), p));
        Ok(Self {
            spec,
            center,
            radius,
            p,
            amplitude,
            self_energy: OnceLock::new(),
        })
    }

    pub fn uniform_ball(spec: KernelSpec, center: Vec<f64>, radius: f64) -> Result<Self> {
        Self::new(spec, center, radius, 0.0)
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn exponent(&self) -> f64 {
        self.p
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn density_r(&self, rho: f64) -> f64 {
        if rho >= self.radius {
            return 0.0;
        }
        if self.p == 0.0 {
            return self.amplitude;
        }
        let u = rho / self.radius;
        self.amplitude * (1.0 - u * u).powf(self.p)
    }

    /// Mass inside radius `rho`.
    pub fn enclosed_mass(&self, rho: f64) -> f64 {
        if rho >= self.radius {
            return 1.0;
        }
        let u = (rho / self.radius).powi(2);
        if self.p == 0.0 {
            return u.powf(self.spec.d() as f64 / 2.0);
        }
        beta_reg(self.spec.d() as f64 / 2.0, self.p + 1.0, u)
    }

    fn rho(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    /// True when the profile is the self-similar one with a closed-form potential.
    fn barenblatt_exponent(&self) -> bool {
        let s = self.spec.s();
        (self.p - (s - self.spec.d() as f64 + 2.0) / 2.0).abs() < 1e-14
    }

    pub fn potential_r(&self, rho: f64) -> Result<f64> {
        let d = self.spec.d();
        let r = self.radius;
        if self.spec.is_coulomb() {
            if rho >= r {
                return Ok(self.spec.g_r(rho));
            }
            let inner = gl_panels(rho, r, 20, 4, |t| -self.enclosed_mass(t) * self.spec.dg_r(t));
            return Ok(self.spec.g_r(r) + inner);
        }
        if d == 1 && self.p == 0.0 {
            return Ok(self.uniform_1d(rho));
        }
        if self.barenblatt_exponent() && rho <= r {
            let eta2 = (rho / r).powi(2);
            return Ok(match self.spec.mode() {
                Mode::Riesz(s) => {
                    let cb = barenblatt_constant(d, s);
                    self.amplitude * r.powf(d as f64 - s) * cb * (1.0 - s / d as f64 * eta2)
                }
                // d = 1 semicircle
                Mode::Log => -r.ln() + 0.5 + LN_2 - eta2,
            });
        }
        self.potential_quadrature(rho)
    }

    fn uniform_1d(&self, x: f64) -> f64 {
        let r = self.radius;
        let lam = self.amplitude;
        match self.spec.mode() {
            Mode::Riesz(s) => {
                let f = |a: f64| a.powf(1.0 - s) / (1.0 - s);
                if x <= r {
                    lam * (f(r + x) + f(r - x))
                } else {
                    lam * (f(x + r) - f(x - r))
                }
            }
            Mode::Log => {
                let f = |a: f64| if a == 0.0 { 0.0 } else { a - a * a.ln() };
                if x <= r {
                    lam * (f(r - x) + f(r + x))
                } else {
                    lam * (f(x + r) - f(x - r))
                }
            }
        }
    }

    /// Integral of `g(rho e - r w)` over the unit sphere `w`, with `r = rho + t`.
    /// Taking the offset `t` keeps `|rho - r|` exact near the singular shell.
    fn shell_kernel(&self, rho: f64, t: f64) -> f64 {
        let spec = &self.spec;
        let r = rho + t;
        match spec.d() {
            1 => spec.g_r(t.abs()) + spec.g_r(rho + r),
            2 => {
                // |rho e - r w|^2 = t^2 + 4 rho r sin^2(th/2)
                let f = |th: f64| {
                    let sn = (0.5 * th).sin();
                    spec.g_r2(t * t + 4.0 * rho * r * sn * sn)
                };
                if rho * r == 0.0 {
                    return 2.0 * PI * spec.g_r(rho.max(r));
                }
                // near-singular at th ~ knee; panels double in width from there
                let knee = (t.abs() / (rho * r).sqrt()).clamp(PI * 2f64.powi(-60), PI);
                let mut acc = gl(0.0, knee, 16, f);
                let mut lo = knee;
                while lo < PI {
                    let hi = (2.0 * lo).min(PI);
                    acc += gl(lo, hi, 12, f);
                    lo = hi;
                }
                2.0 * acc
            }
            3 => {
                if rho == 0.0 || r == 0.0 {
                    return 4.0 * PI * spec.g_r(rho.max(r));
                }
                let s = spec.s();
                if (s - 2.0).abs() < 1e-14 {
                    2.0 * PI / (rho * r) * ((rho + r) / t.abs()).ln()
                } else {
                    2.0 * PI / ((2.0 - s) * rho * r) * ((rho + r).powf(2.0 - s) - t.abs().powf(2.0 - s))
                }
            }
            _ => f64::NAN,
        }
    }

    fn potential_quadrature(&self, rho: f64) -> Result<f64> {
        let d = self.spec.d();
        if d > 3 {
            return Err(Error::OutOfRegime("radial quadrature implemented for d <= 3".into()));
        }
        let big_r = self.radius;
        let f = |t: f64| {
            let r = rho + t;
            self.shell_kernel(rho, t) * self.density_r(r) * r.powi(d as i32 - 1)
        };
        if rho >= big_r {
            return Ok(tanh_sinh(-rho, big_r - rho, TOL, f));
        }
        // the shell kernel behaves like |t|^e at t = 0 on both sides
        let e = match self.spec.mode() {
            Mode::Riesz(s) => (d as f64 - 1.0 - s).min(0.0),
            Mode::Log => 0.0,
        };
        Ok(toward_zero(rho, e, |u| f(-u)) + toward_zero(big_r - rho, e, f))
    }

    /// Radial derivative of the potential.
    pub fn potential_dr(&self, rho: f64) -> Result<f64> {
        let d = self.spec.d();
        let r = self.radius;
        if rho == 0.0 {
            return Ok(0.0);
        }
        if self.spec.is_coulomb() {
            return Ok(self.enclosed_mass(rho) * self.spec.dg_r(rho));
        }
        if d == 1 && self.p == 0.0 {
            let lam = self.amplitude;
            let x = rho;
            return Ok(match self.spec.mode() {
                Mode::Riesz(s) => {
                    if x < r {
                        lam * ((r + x).powf(-s) - (r - x).powf(-s))
                    } else {
                        lam * ((x + r).powf(-s) - (x - r).powf(-s))
                    }
                }
                Mode::Log => {
                    if x < r {
                        lam * ((r - x).ln() - (r + x).ln())
                    } else {
                        lam * ((x - r).ln() - (x + r).ln())
                    }
                }
            });
        }
        if self.barenblatt_exponent() && rho <= r {
            return Ok(match self.spec.mode() {
                Mode::Riesz(s) => {
                    -2.0 * self.amplitude * r.powf(d as f64 - s) * barenblatt_constant(d, s) * (s / d as f64) * rho / (r * r)
                }
                Mode::Log => -2.0 * rho / (r * r),
            });
        }
        // five-point stencil; the potential is even in rho
        let h = 1e-3 * r.max(rho);
        let v = |t: f64| self.potential_r(t.abs());
        Ok((v(rho - 2.0 * h)? - 8.0 * v(rho - h)? + 8.0 * v(rho + h)? - v(rho + 2.0 * h)?) / (12.0 * h))
    }

    fn compute_self_energy(&self) -> Result<f64> {
        let d = self.spec.d();
        let r = self.radius;
        let p = self.p;
        if self.spec.is_coulomb() {
            if p == 0.0 && self.spec.is_log() {
                return Ok(0.25 - r.ln());
            }
            let tail = gl_panels(0.0, r, 20, 8, |t| {
                let m = self.enclosed_mass(t);
                -m * m * self.spec.dg_r(t)
            });
            return Ok(self.spec.g_r(r) + tail);
        }
        if d == 1 && p == 0.0 {
            return Ok(match self.spec.mode() {
                Mode::Riesz(s) => 2.0 * (2.0 * r).powf(-s) / ((1.0 - s) * (2.0 - s)),
                Mode::Log => 1.5 - (2.0 * r).ln(),
            });
        }
        if self.barenblatt_exponent() {
            return Ok(match self.spec.mode() {
                Mode::Riesz(s) => {
                    r.powf(-s) * barenblatt_constant(d, s) * (1.0 - s / (d as f64 + 2.0 * p + 2.0)) / profile_mass(d, p)
                }
                Mode::Log => 0.25 + LN_2 - r.ln(),
            });
        }
        let area = unit_sphere_area(d);
        let err = std::cell::RefCell::new(None);
        let tol = 1e-9 * self.potential_r(0.0)?.abs().max(1.0);
        let v = tanh_sinh(0.0, r, tol, |t| match self.potential_r(t) {
            Ok(h) => h * self.density_r(t) * area * t.powi(d as i32 - 1),
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                0.0
            }
        });
        match err.into_inner() {
            Some(e) => Err(e),
            None => Ok(v),
        }
    }
}

impl MeanField for RadialMeasure {
    fn dim(&self) -> usize {
        self.spec.d()
    }

    fn kernel(&self) -> &KernelSpec {
        &self.spec
    }

    fn density(&self, x: &[f64]) -> f64 {
        self.density_r(self.rho(x))
    }

    fn potential(&self, x: &[f64]) -> Result<f64> {
        self.potential_r(self.rho(x))
    }

    fn grad_potential(&self, x: &[f64]) -> Result<Vec<f64>> {
        let rho = self.rho(x);
        if rho == 0.0 {
            return Ok(vec![0.0; x.len()]);
        }
        let dh = self.potential_dr(rho)?;
        Ok(x.iter().zip(&self.center).map(|(a, b)| dh * (a - b) / rho).collect())
    }

    fn self_energy(&self) -> Result<f64> {
        if let Some(v) = self.self_energy.get() {
            return Ok(*v);
        }
        let v = self.compute_self_energy()?;
        Ok(*self.self_energy.get_or_init(|| v))
    }

    fn sup_density(&self) -> f64 {
        self.amplitude
    }

    fn local_f_integral(&self, x0: &[f64], eta: f64) -> Result<f64> {
        // constant density on the whole ball: exact
        let rho = self.rho(x0);
        if self.p == 0.0 && rho + eta < self.radius {
            return Ok(self.amplitude * self.spec.integral_f_eta(eta));
        }
        if rho - eta >= self.radius {
            return Ok(0.0);
        }
        super::shell_f_integral(self, x0, eta)
    }
}
