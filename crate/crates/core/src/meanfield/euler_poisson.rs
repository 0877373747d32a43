//! Pressureless Euler-Poisson: `d_t mu + div(mu u) = 0`,
//! `d_t u + u . grad u = -kappa grad h`, solved along characteristics.

use super::fft::PotentialSolver;
use super::grid::{GridGeometry, MeasureGrid, VelocityGrid};
use super::radial::RadialMeasure;
use super::MeanField;
use crate::error::{Error, Result};
use crate::kernel::{KernelSpec, Mode};
use crate::quad::unit_sphere_area;

/// Marker solver on a uniform grid. Each cell carries `k^d` markers on a
/// lattice; density is rebuilt by cloud-in-cell deposition and the
/// Jacobian of the lattice map is monitored for shell crossing.
#[derive(Debug)]
pub struct EulerPoisson {
    solver: PotentialSolver,
    kappa: f64,
    per_axis: usize,
    jacobian_floor: f64,
    cfl: f64,
}

#[derive(Clone, Debug)]
pub struct MarkerState {
    pub t: f64,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub masses: Vec<f64>,
    lattice: usize,
    spacing: f64,
    accel: Vec<f64>,
}

impl MarkerState {
    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }
}

fn det(m: &[f64], d: usize) -> f64 {
    match d {
        1 => m[0],
        2 => m[0] * m[3] - m[1] * m[2],
        _ => {
            m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) + m[2] * (m[3] * m[7] - m[4] * m[6])
        }
    }
}

impl EulerPoisson {
    pub fn new(geom: GridGeometry, spec: KernelSpec, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(Error::invalid("coupling must be positive"));
        }
        Ok(Self {
            solver: PotentialSolver::new(geom, spec)?,
            kappa,
            per_axis: 2,
            jacobian_floor: 0.05,
            cfl: 0.5,
        })
    }

    pub fn with_markers_per_axis(mut self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("need at least one marker per cell"));
        }
        self.per_axis = k;
        Ok(self)
    }

    pub fn with_jacobian_floor(mut self, floor: f64) -> Self {
        self.jacobian_floor = floor;
        self
    }

    pub fn solver(&self) -> &PotentialSolver {
        &self.solver
    }

    pub fn geometry(&self) -> GridGeometry {
        self.solver.geometry()
    }

    pub fn init(&self, mu: &MeasureGrid, u: &VelocityGrid) -> Result<MarkerState> {
        let geom = self.geometry();
        geom.same_as(&mu.geom)?;
        geom.same_as(&u.geom)?;
        let d = geom.d;
        let k = self.per_axis;
        let lattice = geom.n * k;
        let spacing = geom.h() / k as f64;
        let count = lattice.pow(d as u32);
        let mut positions = Vec::with_capacity(count * d);
        let mut masses = Vec::with_capacity(count);
        let mut velocities = Vec::with_capacity(count * d);
        let mvol = spacing.powi(d as i32);
        for q in 0..count {
            let mut r = q;
            let mut x = vec![0.0; d];
            for a in (0..d).rev() {
                x[a] = -geom.half_width + ((r % lattice) as f64 + 0.5) * spacing;
                r /= lattice;
            }
            masses.push(mu.value_at(&x) * mvol);
            velocities.extend(u.sample(&x)?);
            positions.extend(x);
        }
        let mut st = MarkerState {
            t: mu.time,
            positions,
            velocities,
            masses,
            lattice,
            spacing,
            accel: vec![],
        };
        st.accel = self.acceleration(&st)?;
        Ok(st)
    }

    /// Cloud-in-cell weights of `x`, clamped to the grid.
    fn cic(&self, x: &[f64]) -> Option<Vec<(usize, f64)>> {
        let geom = self.geometry();
        let d = geom.d;
        let n = geom.n as isize;
        let h = geom.h();
        let mut base = [0isize; 3];
        let mut frac = [0.0; 3];
        for a in 0..d {
            if !(x[a].abs() <= geom.half_width) {
                return None;
            }
            let t = (x[a] + geom.half_width) / h - 0.5;
            let f = t.floor();
            base[a] = f as isize;
            frac[a] = t - f;
        }
        let mut out = Vec::with_capacity(1 << d);
        for corner in 0..(1usize << d) {
            let mut idx = [0usize; 3];
            let mut w = 1.0;
            for a in 0..d {
                let up = corner >> a & 1 == 1;
                let i = base[a] + up as isize;
                idx[a] = i.clamp(0, n - 1) as usize;
                w *= if up { frac[a] } else { 1.0 - frac[a] };
            }
            out.push((geom.flat_index(&idx), w));
        }
        Some(out)
    }

    pub fn density(&self, st: &MarkerState) -> Result<MeasureGrid> {
        let geom = self.geometry();
        let d = geom.d;
        let mut grid = MeasureGrid::zeros(geom);
        let vol = geom.cell_volume();
        for (p, &m) in st.masses.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let w = self.cic(&st.positions[p * d..(p + 1) * d]).ok_or(Error::Extrapolation)?;
            for (c, wt) in w {
                grid.values[c] += m * wt / vol;
            }
        }
        grid.time = st.t;
        Ok(grid)
    }

    /// Mass-weighted deposit of marker velocities; zero where there is no mass.
    pub fn velocity(&self, st: &MarkerState) -> Result<VelocityGrid> {
        let geom = self.geometry();
        let d = geom.d;
        let mut mass = vec![0.0; geom.len()];
        let mut out = VelocityGrid::zeros(geom);
        for (p, &m) in st.masses.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let w = self.cic(&st.positions[p * d..(p + 1) * d]).ok_or(Error::Extrapolation)?;
            for (c, wt) in w {
                mass[c] += m * wt;
                for a in 0..d {
                    out.values[c * d + a] += m * wt * st.velocities[p * d + a];
                }
            }
        }
        for c in 0..geom.len() {
            if mass[c] > 0.0 {
                for a in 0..d {
                    out.values[c * d + a] /= mass[c];
                }
            }
        }
        out.time = st.t;
        Ok(out)
    }

    fn acceleration(&self, st: &MarkerState) -> Result<Vec<f64>> {
        let geom = self.geometry();
        let d = geom.d;
        let grad = self.solver.gradient(&self.density(st)?)?;
        let kappa = self.kappa;
        let rows: Vec<Vec<f64>> = crate::reduce::map_rows(st.len(), |p| {
            let x = &st.positions[p * d..(p + 1) * d];
            let mut a = vec![0.0; d];
            // massless markers that left the box drift freely
            if let Some(w) = self.cic(x) {
                for (c, wt) in w {
                    for k in 0..d {
                        a[k] -= kappa * wt * grad[c * d + k];
                    }
                }
            }
            a
        });
        Ok(rows.concat())
    }

    /// Smallest Jacobian determinant of the lattice map over massive markers,
    /// relative to the initial lattice.
    pub fn min_jacobian(&self, st: &MarkerState) -> f64 {
        let d = self.geometry().d;
        let lat = st.lattice;
        let stride = |a: usize| lat.pow((d - 1 - a) as u32);
        let mut min = f64::INFINITY;
        for p in 0..st.len() {
            if st.masses[p] == 0.0 {
                continue;
            }
            let mut idx = [0usize; 3];
            let mut r = p;
            for a in (0..d).rev() {
                idx[a] = r % lat;
                r /= lat;
            }
            let mut jac = vec![0.0; d * d];
            for b in 0..d {
                let s = stride(b);
                let (lo, hi) = (if idx[b] > 0 { p - s } else { p }, if idx[b] + 1 < lat { p + s } else { p });
                let width = (hi - lo) / s;
                for a in 0..d {
                    jac[a * d + b] = (st.positions[hi * d + a] - st.positions[lo * d + a]) / (width as f64 * st.spacing);
                }
            }
            min = min.min(det(&jac, d));
        }
        min
    }

    /// Velocity Verlet step of all markers.
    pub fn step(&self, st: &mut MarkerState, dt: f64) -> Result<()> {
        let geom = self.geometry();
        let d = geom.d;
        let vmax = st.velocities.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if dt * vmax * d as f64 > self.cfl * geom.h() {
            return Err(Error::Cfl {
                required_dt: self.cfl * geom.h() / (vmax * d as f64),
            });
        }
        for i in 0..st.velocities.len() {
            st.velocities[i] += 0.5 * dt * st.accel[i];
            st.positions[i] += dt * st.velocities[i];
        }
        for p in 0..st.len() {
            if st.masses[p] > 0.0 && st.positions[p * d..(p + 1) * d].iter().any(|x| x.abs() > geom.half_width) {
                return Err(Error::Extrapolation);
            }
        }
        st.accel = self.acceleration(st)?;
        for i in 0..st.velocities.len() {
            st.velocities[i] += 0.5 * dt * st.accel[i];
        }
        st.t += dt;
        let j = self.min_jacobian(st);
        if j < self.jacobian_floor {
            return Err(Error::Shock { t: st.t, min_jacobian: j });
        }
        Ok(())
    }

    /// One step from grid data, returning grid data.
    pub fn evolve(&self, mu: &MeasureGrid, u: &VelocityGrid, dt: f64) -> Result<(MeasureGrid, VelocityGrid)> {
        let mut st = self.init(mu, u)?;
        self.step(&mut st, dt)?;
        Ok((self.density(&st)?, self.velocity(&st)?))
    }

    pub fn advance(&self, st: &mut MarkerState, t_end: f64, dt: f64) -> Result<()> {
        while st.t < t_end - 1e-12 {
            let h = dt.min(t_end - st.t);
            self.step(st, h)?;
        }
        Ok(())
    }
}

/// Shell-by-shell solution for radial Coulomb data: shells do not cross
/// before the shock, so each one feels only the fixed mass it encloses.
#[derive(Clone, Debug)]
pub struct RadialLagrangian {
    spec: KernelSpec,
    kappa: f64,
    /// Lagrangian labels (initial radii), uniform on `[0, R]`.
    labels: Vec<f64>,
    mass: Vec<f64>,
    dmass: Vec<f64>,
    t: f64,
    r: Vec<f64>,
    v: Vec<f64>,
    ra: Vec<f64>,
    va: Vec<f64>,
}

impl RadialLagrangian {
    /// `mu0` radial density; `u0(a)` and `u0'(a)` radial initial velocity and
    /// its derivative.
    pub fn new<U, DU>(mu0: &RadialMeasure, u0: U, du0: DU, shells: usize, kappa: f64) -> Result<Self>
    where
        U: Fn(f64) -> f64,
        DU: Fn(f64) -> f64,
    {
        let spec = *mu0.spec();
        if !spec.is_coulomb() || spec.d() < 2 {
            return Err(Error::invalid("radial Lagrangian reference needs a Coulomb kernel with d >= 2"));
        }
        if mu0.center().iter().any(|c| *c != 0.0) {
            return Err(Error::invalid("radial Lagrangian reference expects a centered profile"));
        }
        let d = spec.d();
        let big_r = mu0.radius();
        let area = unit_sphere_area(d);
        let labels: Vec<f64> = (0..=shells).map(|k| big_r * k as f64 / shells as f64).collect();
        let mass = labels.iter().map(|&a| mu0.enclosed_mass(a)).collect();
        // density at the outer label is the limit from inside
        let dmass = labels
            .iter()
            .map(|&a| mu0.density_r(a.min(big_r * (1.0 - 1e-12))) * area * a.powi(d as i32 - 1))
            .collect();
        Ok(Self {
            spec,
            kappa,
            r: labels.clone(),
            v: labels.iter().map(|&a| u0(a)).collect(),
            ra: vec![1.0; labels.len()],
            va: labels.iter().map(|&a| du0(a)).collect(),
            labels,
            mass,
            dmass,
            t: 0.0,
        })
    }

    fn strength(&self) -> f64 {
        self.kappa
            * match self.spec.mode() {
                Mode::Log => 1.0,
                Mode::Riesz(s) => s,
            }
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// RK4 in each shell, `steps` substeps up to `t_end`.
    pub fn advance(&mut self, t_end: f64, steps: usize) -> Result<()> {
        let d = self.spec.d() as i32;
        let c = self.strength();
        let dt = (t_end - self.t) / steps.max(1) as f64;
        if dt <= 0.0 {
            return Ok(());
        }
        let rhs = |m: f64, dm: f64, y: [f64; 4]| -> [f64; 4] {
            let [r, v, ra, va] = y;
            if r == 0.0 {
                return [v, 0.0, va, 0.0];
            }
            [v, c * m / r.powi(d - 1), va, c * (dm / r.powi(d - 1) - (d - 1) as f64 * m * ra / r.powi(d))]
        };
        for k in 1..self.labels.len() {
            let (m, dm) = (self.mass[k], self.dmass[k]);
            let mut y = [self.r[k], self.v[k], self.ra[k], self.va[k]];
            for _ in 0..steps.max(1) {
                let add = |y: [f64; 4], k: [f64; 4], h: f64| [y[0] + h * k[0], y[1] + h * k[1], y[2] + h * k[2], y[3] + h * k[3]];
                let k1 = rhs(m, dm, y);
                let k2 = rhs(m, dm, add(y, k1, 0.5 * dt));
                let k3 = rhs(m, dm, add(y, k2, 0.5 * dt));
                let k4 = rhs(m, dm, add(y, k3, dt));
                for i in 0..4 {
                    y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
            [self.r[k], self.v[k], self.ra[k], self.va[k]] = y;
        }
        // the center shell stays put; its stretch follows the linear field
        self.ra[0] = self.ra[1];
        self.va[0] = self.va[1];
        self.t = t_end;
        let min_ra = self.ra.iter().cloned().fold(f64::INFINITY, f64::min);
        let monotone = self.r.windows(2).all(|w| w[1] > w[0]);
        if min_ra <= 0.0 || !monotone {
            return Err(Error::Shock {
                t: self.t,
                min_jacobian: min_ra,
            });
        }
        Ok(())
    }

    /// Frozen snapshot usable as a mean-field reference.
    pub fn snapshot(&self) -> RadialSnapshot {
        let d = self.spec.d();
        let n = self.labels.len();
        let density: Vec<f64> = (0..n)
            .map(|k| {
                if k == 0 || self.r[k] == 0.0 {
                    self.dmass[1] / (unit_sphere_area(d) * self.labels[1].powi(d as i32 - 1)) / self.ra[0].powi(d as i32)
                } else {
                    self.dmass[k] / (unit_sphere_area(d) * self.r[k].powi(d as i32 - 1) * self.ra[k])
                }
            })
            .collect();
        // tail[k] = int_{a_k}^{R} g(r(a)) m'(a) da, trapezoid
        let mut tail = vec![0.0; n];
        for k in (0..n - 1).rev() {
            let da = self.labels[k + 1] - self.labels[k];
            let f = |i: usize| if self.dmass[i] == 0.0 { 0.0 } else { self.spec.g_r(self.r[i]) * self.dmass[i] };
            tail[k] = tail[k + 1] + 0.5 * da * (f(k) + f(k + 1));
        }
        let self_energy = {
            let h = |k: usize| {
                if k == 0 {
                    tail[0]
                } else {
                    self.mass[k] * self.spec.g_r(self.r[k]) + tail[k]
                }
            };
            (0..n - 1)
                .map(|k| 0.5 * (self.labels[k + 1] - self.labels[k]) * (h(k) * self.dmass[k] + h(k + 1) * self.dmass[k + 1]))
                .sum()
        };
        RadialSnapshot {
            spec: self.spec,
            r: self.r.clone(),
            v: self.v.clone(),
            mass: self.mass.clone(),
            density,
            tail,
            self_energy,
            kappa: self.kappa,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RadialSnapshot {
    spec: KernelSpec,
    r: Vec<f64>,
    v: Vec<f64>,
    mass: Vec<f64>,
    density: Vec<f64>,
    tail: Vec<f64>,
    self_energy: f64,
    kappa: f64,
}

impl RadialSnapshot {
    /// `(k, w)` with `rho` between shells `k` and `k+1`.
    fn locate(&self, rho: f64) -> Option<(usize, f64)> {
        let last = *self.r.last()?;
        if rho >= last {
            return None;
        }
        let k = self.r.partition_point(|&r| r <= rho).saturating_sub(1);
        let w = (rho - self.r[k]) / (self.r[k + 1] - self.r[k]);
        Some((k, w))
    }

    fn lerp(v: &[f64], k: usize, w: f64) -> f64 {
        (1.0 - w) * v[k] + w * v[k + 1]
    }

    pub fn outer_radius(&self) -> f64 {
        *self.r.last().unwrap()
    }

    pub fn radial_velocity(&self, rho: f64) -> f64 {
        match self.locate(rho) {
            Some((k, w)) => Self::lerp(&self.v, k, w),
            None => 0.0,
        }
    }

    /// Velocity field `u(x)`; zero outside the support.
    pub fn velocity(&self, x: &[f64]) -> Vec<f64> {
        let rho = crate::kernel::norm2(x).sqrt();
        if rho == 0.0 {
            return vec![0.0; x.len()];
        }
        let v = self.radial_velocity(rho);
        x.iter().map(|c| v * c / rho).collect()
    }

    pub fn enclosed_mass(&self, rho: f64) -> f64 {
        match self.locate(rho) {
            Some((k, w)) => Self::lerp(&self.mass, k, w),
            None => 1.0,
        }
    }

    pub fn coupling(&self) -> f64 {
        self.kappa
    }
}

impl MeanField for RadialSnapshot {
    fn dim(&self) -> usize {
        self.spec.d()
    }

    fn kernel(&self) -> &KernelSpec {
        &self.spec
    }

    fn density(&self, x: &[f64]) -> f64 {
        match self.locate(crate::kernel::norm2(x).sqrt()) {
            Some((k, w)) => Self::lerp(&self.density, k, w),
            None => 0.0,
        }
    }

    fn potential(&self, x: &[f64]) -> Result<f64> {
        let rho = crate::kernel::norm2(x).sqrt();
        Ok(match self.locate(rho) {
            Some((k, w)) => {
                let tail = Self::lerp(&self.tail, k, w);
                let m = Self::lerp(&self.mass, k, w);
                if m == 0.0 {
                    tail
                } else {
                    m * self.spec.g_r(rho) + tail
                }
            }
            None => self.spec.g_r(rho),
        })
    }

    fn grad_potential(&self, x: &[f64]) -> Result<Vec<f64>> {
        let r2 = crate::kernel::norm2(x);
        if r2 == 0.0 {
            return Ok(vec![0.0; x.len()]);
        }
        let m = self.enclosed_mass(r2.sqrt());
        let f = m * self.spec.grad_factor(r2);
        Ok(x.iter().map(|c| f * c).collect())
    }

    fn self_energy(&self) -> Result<f64> {
        Ok(self.self_energy)
    }

    fn sup_density(&self) -> f64 {
        self.density.iter().cloned().fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radial_reference_reproduces_expanding_disk() {
        let spec = KernelSpec::log(2).unwrap();
        let ball = RadialMeasure::uniform_ball(spec, vec![0.0; 2], 1.0).unwrap();
        let mut rl = RadialLagrangian::new(&ball, |_| 0.0, |_| 0.0, 400, 1.0).unwrap();
        rl.advance(0.3, 300).unwrap();
        let snap = rl.snapshot();
        // uniform data at rest stays uniform: r(a) = a * lambda(t)
        let lam = snap.outer_radius();
        let dens = snap.density(&[0.3 * lam, 0.0]);
        assert!((dens - 1.0 / (std::f64::consts::PI * lam * lam)).abs() < 1e-6, "{dens}");
        // self energy of a uniform disk
        assert!((snap.self_energy().unwrap() - (0.25 - lam.ln())).abs() < 1e-4);
        let pot = snap.potential(&[0.2, 0.1]).unwrap();
        let exact = RadialMeasure::uniform_ball(spec, vec![0.0; 2], lam).unwrap().potential(&[0.2, 0.1]).unwrap();
        assert!((pot - exact).abs() < 1e-4, "{pot} {exact}");
    }

    #[test]
    fn marker_solver_starts_outward_and_conserves_mass() {
        let spec = KernelSpec::log(2).unwrap();
        let geom = GridGeometry::new(2, 32, 2.0).unwrap();
        let ball = RadialMeasure::uniform_ball(spec, vec![0.0; 2], 1.0).unwrap();
        let mut mu = MeasureGrid::rasterize(geom, 4, |x| ball.density(x));
        mu.normalize().unwrap();
        let u = VelocityGrid::zeros(geom);
        let ep = EulerPoisson::new(geom, spec, 1.0).unwrap();
        let (mu1, u1) = ep.evolve(&mu, &u, 0.01).unwrap();
        assert!((mu1.mass() - 1.0).abs() < 1e-12);
        let c = geom.locate(&[0.5, 0.02]).unwrap();
        assert!(u1.at_cell(c)[0] > 0.0);
    }
}
