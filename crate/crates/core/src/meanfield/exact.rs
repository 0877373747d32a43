//! Closed-form solutions of the limiting equations.
//!
//! The dissipative equation is `d_t mu = kappa div(mu grad h)`. For the
//! profiles `(1 - |x|^2/R^2)_+^p` with `p = (s - d + 2)/2` the velocity is
//! linear inside the support, so the profile is transported self-similarly
//! and `R^(s+2)` grows linearly in time.

use super::grid::{GridGeometry, MeasureGrid};
use super::radial::{barenblatt_constant, profile_mass, RadialMeasure};
use super::{mobility_velocity, MeanField};
use crate::error::{Error, Result};
use crate::kernel::{default_j, KernelSpec, Mode};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    ExpandingBall,
    Barenblatt,
    RadialVortexPatch,
    UniformBallStatic,
}

#[derive(Clone, Debug)]
pub struct ExactSolution {
    family: Family,
    spec: KernelSpec,
    center: Vec<f64>,
    r0: f64,
    p: f64,
    coupling: f64,
}

impl ExactSolution {
    pub fn new(family: Family, spec: KernelSpec, r0: f64, p: f64) -> Result<Self> {
        let d = spec.d();
        let natural = (spec.s() - d as f64 + 2.0) / 2.0;
        let p = match family {
            Family::ExpandingBall => {
                if !spec.is_coulomb() {
                    return Err(Error::invalid("expanding_ball requires a Coulomb kernel"));
                }
                0.0
            }
            Family::Barenblatt => natural,
            Family::RadialVortexPatch => {
                if d != 2 {
                    return Err(Error::invalid("radial_vortex_patch requires d = 2"));
                }
                p
            }
            Family::UniformBallStatic => 0.0,
        };
        if !(r0 > 0.0) {
            return Err(Error::invalid("initial radius must be positive"));
        }
        if !(p >= 0.0) {
            return Err(Error::invalid("profile exponent must be nonnegative"));
        }
        Ok(Self {
            family,
            spec,
            center: vec![0.0; d],
            r0,
            p,
            coupling: 1.0,
        })
    }

    pub fn expanding_ball(spec: KernelSpec, r0: f64) -> Result<Self> {
        Self::new(Family::ExpandingBall, spec, r0, 0.0)
    }

    pub fn barenblatt(spec: KernelSpec, r0: f64) -> Result<Self> {
        Self::new(Family::Barenblatt, spec, r0, 0.0)
    }

    pub fn radial_vortex_patch(spec: KernelSpec, r0: f64, p: f64) -> Result<Self> {
        Self::new(Family::RadialVortexPatch, spec, r0, p)
    }

    pub fn uniform_ball_static(spec: KernelSpec, r0: f64) -> Result<Self> {
        Self::new(Family::UniformBallStatic, spec, r0, 0.0)
    }

    pub fn with_center(mut self, center: Vec<f64>) -> Result<Self> {
        if center.len() != self.spec.d() {
            return Err(Error::invalid("center dimension does not match kernel"));
        }
        self.center = center;
        Ok(self)
    }

    /// Multiplies the mean-field velocity by `kappa`.
    pub fn with_coupling(mut self, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(Error::invalid("coupling must be positive"));
        }
        self.coupling = kappa;
        Ok(self)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn exponent(&self) -> f64 {
        self.p
    }

    pub fn is_conservative(&self) -> bool {
        self.family == Family::RadialVortexPatch
    }

    fn evolving(&self) -> bool {
        matches!(self.family, Family::ExpandingBall | Family::Barenblatt)
    }

    /// `q` and `c` in `R(t)^q = R0^q + c t`.
    pub fn growth_law(&self) -> (f64, f64) {
        let d = self.spec.d();
        let s = self.spec.s();
        let q = s + 2.0;
        if !self.evolving() {
            return (q, 0.0);
        }
        // inside the support g * profile = const - slope |x|^2
        let slope = match self.spec.mode() {
            Mode::Riesz(s) => barenblatt_constant(d, s) * s / d as f64,
            Mode::Log => FRAC_PI_2,
        };
        (q, self.coupling * 2.0 * q * slope / profile_mass(d, self.p))
    }

    pub fn radius(&self, t: f64) -> f64 {
        let (q, c) = self.growth_law();
        (self.r0.powf(q) + c * t).powf(1.0 / q)
    }

    /// `(a, b, t0)` with density `T^(-d/q) (a - b |x|^2 T^(-2/q))_+^p`, `T = t + t0`.
    pub fn barenblatt_ab(&self) -> Result<(f64, f64, f64)> {
        if self.family != Family::Barenblatt {
            return Err(Error::invalid("(a, b) parameters exist only for barenblatt"));
        }
        let d = self.spec.d() as f64;
        let (q, c) = self.growth_law();
        let b_over_a = c.powf(-2.0 / q);
        let a = if self.p == 0.0 {
            1.0
        } else {
            (c.powf(-d / q) / profile_mass(self.spec.d(), self.p)).powf(1.0 / self.p)
        };
        Ok((a, a * b_over_a, self.r0.powf(q) / c))
    }

    pub fn at(&self, t: f64) -> Result<RadialMeasure> {
        if !(t >= 0.0) {
            return Err(Error::invalid("time must be nonnegative"));
        }
        RadialMeasure::new(self.spec, self.center.clone(), self.radius(t), self.p)
    }

    /// Mean-field velocity at time `t`.
    pub fn velocity(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let grad = self.at(t)?.grad_potential(x)?;
        let d = self.spec.d();
        Ok(if self.is_conservative() {
            mobility_velocity(&grad, self.coupling, 0.0, 1.0, &default_j(d))
        } else {
            mobility_velocity(&grad, self.coupling, 1.0, 0.0, &[])
        })
    }

    /// Cell averages at time `t`, renormalized to unit mass.
    pub fn rasterize(&self, t: f64, geom: GridGeometry) -> Result<MeasureGrid> {
        if geom.d != self.spec.d() {
            return Err(Error::GridMismatch("grid and kernel dimensions differ".into()));
        }
        let mu = self.at(t)?;
        let sub = match geom.d {
            1 => 16,
            2 => 6,
            _ => 3,
        };
        let mut grid = MeasureGrid::rasterize(geom, sub, |x| mu.density(x));
        grid.normalize()?;
        grid.time = t;
        Ok(grid)
    }
}
