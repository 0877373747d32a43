//! Riesz and logarithmic interaction kernels, truncations and constants.

mod cells;

pub use cells::{cell_integral, cell_integral_at, cell_integral_grad, face_integral};

use crate::error::{Error, Result};
use crate::quad::unit_sphere_area;
use statrs::function::gamma::gamma;
use std::f64::consts::PI;

/// Interaction law: `|x|^{-s}` or `-log|x|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    Riesz(f64),
    Log,
}

/// Kernel description with the derived extension parameters `k`, `gamma`
/// and the normalization constant `c_ds`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec {
    d: usize,
    mode: Mode,
    k: usize,
    gamma: f64,
    c_ds: f64,
}

impl KernelSpec {
    /// Riesz kernel `|x|^{-s}` with `max(d-2, 0) <= s < d`.
    ///
    /// `s = 0` is rejected: the kernel is constant, produces no force, and its
    /// normalization constant vanishes.
    pub fn riesz(d: usize, s: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        let lo = (d as f64 - 2.0).max(0.0);
        if !s.is_finite() || s < lo || s >= d as f64 {
            return Err(Error::invalid(format!(
                "Riesz exponent s = {s} outside [{lo}, {d}) for d = {d}"
            )));
        }
        if s == 0.0 {
            return Err(Error::invalid("s = 0 gives a constant kernel; use LOG mode"));
        }
        Ok(Self::build(d, Mode::Riesz(s)))
    }

    /// Logarithmic kernel `-log|x|`, available for d = 1, 2.
    pub fn log(d: usize) -> Result<Self> {
        if d != 1 && d != 2 {
            return Err(Error::invalid(format!("LOG mode requires d in {{1, 2}}, got {d}")));
        }
        Ok(Self::build(d, Mode::Log))
    }

    /// Coulomb kernel: `-log|x|` in d = 2, `|x|^{2-d}` in d >= 3.
    pub fn coulomb(d: usize) -> Result<Self> {
        match d {
            2 => Self::log(2),
            d if d >= 3 => Self::riesz(d, d as f64 - 2.0),
            _ => Err(Error::invalid("no Coulomb kernel of the supported form in d = 1")),
        }
    }

    fn build(d: usize, mode: Mode) -> Self {
        let df = d as f64;
        let (s, coulomb) = match mode {
            Mode::Riesz(s) => (s, d >= 3 && s == df - 2.0),
            Mode::Log => (0.0, d == 2),
        };
        let k = if coulomb { 0 } else { 1 };
        let gamma_w = s - df + 2.0 - k as f64;
        let prefactor = match mode {
            Mode::Riesz(s) => s,
            Mode::Log => 1.0,
        };
        // Flux of |z|^gamma grad(|X|^{-s}) through the unit sphere of R^{d+k}.
        // For k = 1, writing the extra coordinate as cos(phi):
        //   int_{S^d} |z|^gamma = |S^{d-1}| B((gamma+1)/2, d/2)
        //                       = 2 pi^{d/2} G((gamma+1)/2) / G((d+1+gamma)/2).
        let sphere_weight = if k == 0 {
            unit_sphere_area(d)
        } else {
            2.0 * PI.powf(df / 2.0) * gamma((gamma_w + 1.0) / 2.0)
                / gamma((df + 1.0 + gamma_w) / 2.0)
        };
        Self {
            d,
            mode,
            k,
            gamma: gamma_w,
            c_ds: prefactor * sphere_weight,
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Exponent s, read as 0 in LOG mode.
    pub fn s(&self) -> f64 {
        match self.mode {
            Mode::Riesz(s) => s,
            Mode::Log => 0.0,
        }
    }

    pub fn is_log(&self) -> bool {
        matches!(self.mode, Mode::Log)
    }

    pub fn is_coulomb(&self) -> bool {
        self.k == 0
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn normalization_constant(&self) -> f64 {
        self.c_ds
    }

    /// g as a function of the radius; `+inf` at r = 0.
    #[inline]
    pub fn g_r(&self, r: f64) -> f64 {
        match self.mode {
            Mode::Riesz(s) => r.powf(-s),
            Mode::Log => -r.ln(),
        }
    }

    /// g as a function of the squared radius.
    #[inline]
    pub fn g_r2(&self, r2: f64) -> f64 {
        match self.mode {
            Mode::Riesz(s) => r2.powf(-0.5 * s),
            Mode::Log => -0.5 * r2.ln(),
        }
    }

    /// Radial derivative g'(r).
    #[inline]
    pub fn dg_r(&self, r: f64) -> f64 {
        match self.mode {
            Mode::Riesz(s) => -s * r.powf(-s - 1.0),
            Mode::Log => -1.0 / r,
        }
    }

    /// Factor `c` with `grad g(x) = c x`, given `r2 = |x|^2`.
    #[inline]
    pub fn grad_factor(&self, r2: f64) -> f64 {
        match self.mode {
            Mode::Riesz(s) => -s * r2.powf(-0.5 * s - 1.0),
            Mode::Log => -1.0 / r2,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::invalid(format!(
                "point has dimension {}, kernel has {}",
                x.len(),
                self.d
            )));
        }
        Ok(())
    }

    pub fn eval_g(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let r2 = norm2(x);
        if r2 == 0.0 {
            return Err(Error::Singularity);
        }
        Ok(self.g_r2(r2))
    }

    pub fn eval_grad_g(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let r2 = norm2(x);
        if r2 == 0.0 {
            return Err(Error::Singularity);
        }
        let c = self.grad_factor(r2);
        Ok(x.iter().map(|v| c * v).collect())
    }

    /// `min(g(x), g(eta))`, finite at the origin.
    pub fn g_eta_r(&self, r: f64, eta: f64) -> f64 {
        self.g_r(r.max(eta))
    }

    pub fn eval_g_eta(&self, x: &[f64], eta: f64) -> f64 {
        self.g_eta_r(norm2(x).sqrt(), eta)
    }

    /// `f_eta = g - g_eta`, nonnegative and supported in the closed ball of radius eta.
    pub fn f_eta_r(&self, r: f64, eta: f64) -> f64 {
        if r >= eta {
            0.0
        } else {
            self.g_r(r) - self.g_r(eta)
        }
    }

    pub fn eval_f_eta(&self, x: &[f64], eta: f64) -> f64 {
        self.f_eta_r(norm2(x).sqrt(), eta)
    }

    /// `f_{alpha,eta} = g_eta - g_alpha`; has the sign of `alpha - eta`.
    pub fn eval_f_alpha_eta(&self, x: &[f64], alpha: f64, eta: f64) -> f64 {
        let r = norm2(x).sqrt();
        self.g_eta_r(r, eta) - self.g_eta_r(r, alpha)
    }

    /// Exact value of the integral of `f_eta` over R^d.
    pub fn integral_f_eta(&self, eta: f64) -> f64 {
        let d = self.d as f64;
        let area = unit_sphere_area(self.d);
        match self.mode {
            Mode::Riesz(s) => area * eta.powf(d - s) * s / (d * (d - s)),
            Mode::Log => area * eta.powf(d) / (d * d),
        }
    }
}

#[inline]
pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// The canonical antisymmetric matrix: pi/2 rotations on coordinate pairs,
/// last coordinate fixed when d is odd. Row-major d x d.
pub fn default_j(d: usize) -> Vec<f64> {
    let mut j = vec![0.0; d * d];
    let mut i = 0;
    while i + 1 < d {
        j[i * d + i + 1] = -1.0;
        j[(i + 1) * d + i] = 1.0;
        i += 2;
    }
    j
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn eval_examples() {
        let k31 = KernelSpec::riesz(3, 1.0).unwrap();
        assert_eq!(k31.eval_g(&[1.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(k31.eval_grad_g(&[1.0, 0.0, 0.0]).unwrap(), vec![-1.0, 0.0, 0.0]);
        let l2 = KernelSpec::log(2).unwrap();
        assert_eq!(l2.eval_g(&[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(l2.eval_grad_g(&[0.0, 1.0]).unwrap(), vec![0.0, -1.0]);
        let k1 = KernelSpec::riesz(1, 0.5).unwrap();
        assert!(close(k1.eval_g(&[4.0]).unwrap(), 0.5, 1e-15));
        assert!(close(k1.eval_grad_g(&[1.0]).unwrap()[0], -0.5, 1e-15));
    }

    #[test]
    fn origin_is_singular() {
        let k = KernelSpec::log(2).unwrap();
        assert!(matches!(k.eval_g(&[0.0, 0.0]), Err(Error::Singularity)));
        assert!(matches!(k.eval_grad_g(&[0.0, 0.0]), Err(Error::Singularity)));
    }

    #[test]
    fn truncation_examples() {
        let k = KernelSpec::riesz(3, 1.0).unwrap();
        assert_eq!(k.eval_g_eta(&[0.25, 0.0, 0.0], 0.5), 2.0);
        assert!(close(k.eval_g_eta(&[0.75, 0.0, 0.0], 0.5), 4.0 / 3.0, 1e-15));
        assert_eq!(k.eval_g_eta(&[0.0, 0.0, 0.0], 0.5), 2.0);
        let l = KernelSpec::log(2).unwrap();
        assert!(close(l.eval_g_eta(&[2.0, 0.0], 1.0), -(2f64.ln()), 1e-15));
        assert!(close(k.eval_f_alpha_eta(&[0.3, 0.0, 0.0], 0.5, 0.25), 1.0 / 0.3 - 2.0, 1e-14));
        assert_eq!(k.eval_f_alpha_eta(&[0.6, 0.0, 0.0], 0.5, 0.25), 0.0);
        assert!(close(k.eval_f_alpha_eta(&[0.1, 0.0, 0.0], 0.5, 0.25), 2.0, 1e-14));
    }

    #[test]
    fn parameter_ranges() {
        assert!(KernelSpec::riesz(3, 0.5).is_err());
        assert!(KernelSpec::riesz(2, 2.0).is_err());
        assert!(KernelSpec::riesz(1, 0.0).is_err());
        assert!(KernelSpec::log(3).is_err());
        assert!(KernelSpec::coulomb(1).is_err());
        let c3 = KernelSpec::coulomb(3).unwrap();
        assert_eq!((c3.k(), c3.gamma()), (0, 0.0));
        let c2 = KernelSpec::coulomb(2).unwrap();
        assert_eq!((c2.k(), c2.gamma()), (0, 0.0));
        let l1 = KernelSpec::log(1).unwrap();
        assert_eq!((l1.k(), l1.gamma()), (1, 0.0));
        let r = KernelSpec::riesz(2, 1.5).unwrap();
        assert_eq!(r.k(), 1);
        assert!(close(r.gamma(), 0.5, 1e-15));
    }

    #[test]
    fn coulomb_constants() {
        assert!(close(KernelSpec::riesz(3, 1.0).unwrap().normalization_constant(), 4.0 * PI, 1e-14));
        assert!(close(KernelSpec::log(2).unwrap().normalization_constant(), 2.0 * PI, 1e-14));
        // (d - 2) |S^{d-1}| in d = 5: 3 * 8 pi^2 / 3
        assert!(close(KernelSpec::coulomb(5).unwrap().normalization_constant(), 8.0 * PI * PI, 1e-13));
    }

    #[test]
    fn default_j_is_antisymmetric() {
        for d in 1..6 {
            let j = default_j(d);
            for a in 0..d {
                for b in 0..d {
                    assert_eq!(j[a * d + b], -j[b * d + a]);
                }
            }
        }
        assert_eq!(default_j(2), vec![0.0, -1.0, 1.0, 0.0]);
    }
}
