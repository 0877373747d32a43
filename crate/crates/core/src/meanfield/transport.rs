//! Finite-volume transport `d_t mu + div(mu v) = 0` with `v = -kappa M grad h`.
//!
//! Face velocities come from compact differences of the cell-center
//! potential. The antisymmetric part differentiates edge averages, so its
//! discrete divergence vanishes identically. Reconstruction is MUSCL with a
//! minmod limiter, time stepping is SSP-RK2, and the box walls carry no flux.

use super::fft::PotentialSolver;
use super::grid::{GridGeometry, MeasureGrid};
use crate::dynamics::{FlowKind, FlowSpec, Forcing};
use crate::error::{Error, Result};
use crate::kernel::{default_j, KernelSpec};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TransportKind {
    Dissipative,
    Conservative,
    Mixed { alpha: f64, beta: f64 },
}

#[derive(Debug)]
pub struct Evolver {
    solver: PotentialSolver,
    kappa: f64,
    alpha: f64,
    beta: f64,
    j: Vec<f64>,
    forcing: Forcing,
    cfl: f64,
    second_order: bool,
}

fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

impl Evolver {
    pub fn new(geom: GridGeometry, spec: KernelSpec, kind: TransportKind, kappa: f64) -> Result<Self> {
        let (alpha, beta) = match kind {
            TransportKind::Dissipative => (1.0, 0.0),
            TransportKind::Conservative => (0.0, 1.0),
            TransportKind::Mixed { alpha, beta } => (alpha, beta),
        };
        if !(kappa > 0.0) {
            return Err(Error::invalid("coupling must be positive"));
        }
        Ok(Self {
            solver: PotentialSolver::new(geom, spec)?,
            kappa,
            alpha,
            beta,
            j: default_j(geom.d),
            forcing: Forcing::Zero,
            cfl: 0.4,
            second_order: true,
        })
    }

    pub fn dissipative(geom: GridGeometry, spec: KernelSpec, kappa: f64) -> Result<Self> {
        Self::new(geom, spec, TransportKind::Dissipative, kappa)
    }

    pub fn conservative(geom: GridGeometry, spec: KernelSpec, kappa: f64) -> Result<Self> {
        Self::new(geom, spec, TransportKind::Conservative, kappa)
    }

    /// Mean-field counterpart of a first-order particle flow.
    pub fn from_flow(geom: GridGeometry, spec: KernelSpec, flow: &FlowSpec, kappa: f64) -> Result<Self> {
        let kind = match flow.kind() {
            FlowKind::Gradient => TransportKind::Dissipative,
            FlowKind::Conservative => TransportKind::Conservative,
            FlowKind::Mixed => TransportKind::Mixed {
                alpha: flow.alpha(),
                beta: flow.beta(),
            },
            FlowKind::Newton => return Err(Error::invalid("Newton flows use the Euler-Poisson solver")),
        };
        let mut e = Self::new(geom, spec, kind, kappa)?;
        e.j = flow.j().to_vec();
        e.forcing = flow.forcing().clone();
        Ok(e)
    }

    pub fn with_cfl(mut self, cfl: f64) -> Result<Self> {
        if !(cfl > 0.0 && cfl <= 0.5) {
            return Err(Error::invalid("cfl factor must lie in (0, 0.5]"));
        }
        self.cfl = cfl;
        Ok(self)
    }

    /// Donor-cell reconstruction instead of MUSCL.
    pub fn first_order(mut self) -> Self {
        self.second_order = false;
        self
    }

    pub fn solver(&self) -> &PotentialSolver {
        &self.solver
    }

    pub fn geometry(&self) -> GridGeometry {
        self.solver.geometry()
    }

    /// Normal velocity on the face between cell `c` and `c + e_a`, for every
    /// cell and axis (`d` entries per cell; wall faces are zero).
    pub fn face_velocities(&self, mu: &MeasureGrid) -> Result<Vec<f64>> {
        let geom = self.geometry();
        let d = geom.d;
        let n = geom.n;
        let hg = geom.h();
        let h = self.solver.potential(mu)?;
        let j = &self.j;
        let (kappa, alpha, beta) = (self.kappa, self.alpha, self.beta);
        let rows: Vec<Vec<f64>> = crate::reduce::map_rows(geom.len(), |c| {
            let idx = geom.multi_index(c);
            let mut out = vec![0.0; d];
            for a in 0..d {
                if idx[a] + 1 >= n {
                    continue;
                }
                let ca = c + geom.stride(a);
                let mut m = alpha * (h[ca] - h[c]) / hg;
                if beta != 0.0 {
                    for b in (0..d).filter(|&b| b != a && j[a * d + b] != 0.0) {
                        let sb = geom.stride(b);
                        let up = if idx[b] + 1 < n { sb as isize } else { 0 };
                        let dn = if idx[b] > 0 { -(sb as isize) } else { 0 };
                        let at = |base: usize, off: isize| h[(base as isize + off) as usize];
                        let e_up = 0.25 * (h[c] + h[ca] + at(c, up) + at(ca, up));
                        let e_dn = 0.25 * (h[c] + h[ca] + at(c, dn) + at(ca, dn));
                        let width = if up != 0 && dn != 0 { 2.0 } else { 1.0 };
                        m += beta * j[a * d + b] * 2.0 * (e_up - e_dn) / (width * hg);
                    }
                }
                let mut v = -kappa * m;
                if !self.forcing.is_zero() {
                    let mut x = geom.center(c);
                    x[a] += 0.5 * hg;
                    let mut f = vec![0.0; d];
                    self.forcing.add_to(&x, &mut f);
                    v += f[a];
                }
                out[a] = v;
            }
            out
        });
        Ok(rows.concat())
    }

    fn max_rate(&self, faces: &[f64]) -> f64 {
        let geom = self.geometry();
        let d = geom.d;
        (0..d)
            .map(|a| faces.iter().skip(a).step_by(d).fold(0.0f64, |m, v| m.max(v.abs())))
            .sum::<f64>()
            / geom.h()
    }

    /// Largest step the CFL condition allows for `mu`.
    pub fn stable_dt(&self, mu: &MeasureGrid) -> Result<f64> {
        let rate = self.max_rate(&self.face_velocities(mu)?);
        Ok(if rate == 0.0 { f64::INFINITY } else { self.cfl / rate })
    }

    fn rate_of_change(&self, mu: &[f64], faces: &[f64]) -> Vec<f64> {
        let geom = self.geometry();
        let d = geom.d;
        let n = geom.n;
        let hg = geom.h();
        let second = self.second_order;
        // flux through the face between c and c + e_a
        let flux = |c: usize, a: usize, idx: &[usize; 3]| -> f64 {
            if idx[a] + 1 >= n {
                return 0.0;
            }
            let s = geom.stride(a);
            let u = faces[c * d + a];
            let (l, r) = (mu[c], mu[c + s]);
            let val = if u >= 0.0 {
                if second && idx[a] >= 1 {
                    l + 0.5 * minmod(l - mu[c - s], r - l)
                } else {
                    l
                }
            } else if second && idx[a] + 2 < n {
                r - 0.5 * minmod(r - l, mu[c + 2 * s] - r)
            } else {
                r
            };
            u * val
        };
        crate::reduce::map_rows(geom.len(), |c| {
            let idx = geom.multi_index(c);
            let mut div = 0.0;
            for a in 0..d {
                div += flux(c, a, &idx);
                if idx[a] > 0 {
                    let s = geom.stride(a);
                    let mut prev = idx;
                    prev[a] -= 1;
                    div -= flux(c - s, a, &prev);
                }
            }
            -div / hg
        })
    }

    /// One SSP-RK2 step; rejects steps that violate the CFL bound.
    pub fn step(&self, mu: &MeasureGrid, dt: f64) -> Result<MeasureGrid> {
        self.geometry().same_as(&mu.geom)?;
        let faces = self.face_velocities(mu)?;
        let rate = self.max_rate(&faces);
        if dt * rate > self.cfl * (1.0 + 1e-12) {
            return Err(Error::Cfl {
                required_dt: self.cfl / rate,
            });
        }
        let l0 = self.rate_of_change(&mu.values, &faces);
        let stage: Vec<f64> = mu.values.iter().zip(&l0).map(|(m, l)| m + dt * l).collect();
        let mid = MeasureGrid {
            geom: mu.geom,
            values: stage,
            time: mu.time + dt,
        };
        let faces1 = self.face_velocities(&mid)?;
        let l1 = self.rate_of_change(&mid.values, &faces1);
        let values = mu
            .values
            .iter()
            .zip(&mid.values)
            .zip(&l1)
            .map(|((m0, m1), l)| (0.5 * m0 + 0.5 * (m1 + dt * l)).max(0.0))
            .collect();
        Ok(MeasureGrid {
            geom: mu.geom,
            values,
            time: mu.time + dt,
        })
    }

    /// Advances to `t_end` with steps no larger than `dt_max`, shrinking them to
    /// satisfy CFL (the second stage may need a smaller step than the first).
    pub fn advance(&self, mu: &MeasureGrid, t_end: f64, dt_max: f64) -> Result<MeasureGrid> {
        let mut cur = mu.clone();
        while cur.time < t_end - 1e-12 {
            let mut dt = dt_max.min(t_end - cur.time).min(0.9 * self.stable_dt(&cur)?);
            loop {
                match self.step(&cur, dt) {
                    Ok(next) => {
                        let target = cur.time + dt;
                        cur = next;
                        cur.time = target;
                        break;
                    }
                    Err(Error::Cfl { required_dt }) if required_dt > 1e-14 => dt = 0.9 * required_dt,
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(cur)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump(geom: GridGeometry) -> MeasureGrid {
        let mut mu = MeasureGrid::rasterize(geom, 2, |x| {
            let r2 = (x[0] - 0.2).powi(2) + x[1] * x[1];
            (1.0 - r2 / 0.25).max(0.0)
        });
        mu.normalize().unwrap();
        mu
    }

    #[test]
    fn conserves_mass_and_positivity() {
        let geom = GridGeometry::new(2, 32, 1.5).unwrap();
        let mu = bump(geom);
        for kind in [TransportKind::Dissipative, TransportKind::Conservative, TransportKind::Mixed { alpha: 0.5, beta: -1.0 }] {
            let e = Evolver::new(geom, KernelSpec::log(2).unwrap(), kind, 1.0).unwrap();
            let dt = 0.9 * e.stable_dt(&mu).unwrap();
            let next = e.step(&mu, dt).unwrap();
            assert!((next.mass() - mu.mass()).abs() < 1e-12);
            assert!(next.values.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn cfl_violation_reports_required_step() {
        let geom = GridGeometry::new(2, 32, 1.5).unwrap();
        let mu = bump(geom);
        let e = Evolver::dissipative(geom, KernelSpec::log(2).unwrap(), 1.0).unwrap();
        let dt = e.stable_dt(&mu).unwrap();
        match e.step(&mu, 3.0 * dt) {
            Err(Error::Cfl { required_dt }) => assert!((required_dt - dt).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn conservative_faces_are_divergence_free() {
        let geom = GridGeometry::new(2, 24, 1.0).unwrap();
        let mu = bump(geom);
        let e = Evolver::conservative(geom, KernelSpec::riesz(2, 0.5).unwrap(), 1.0).unwrap();
        let faces = e.face_velocities(&mu).unwrap();
        // interior cells away from the walls
        for c in 0..geom.len() {
            let idx = geom.multi_index(c);
            if idx[0] < 2 || idx[1] < 2 || idx[0] > 21 || idx[1] > 21 {
                continue;
            }
            let div = faces[2 * c] - faces[2 * (c - geom.stride(0))] + faces[2 * c + 1] - faces[2 * (c - geom.stride(1)) + 1];
            assert!(div.abs() < 1e-12, "{div}");
        }
    }
}
