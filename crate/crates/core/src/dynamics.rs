//! RK4 integration of the gradient, conservative, mixed and Newton flows.

use crate::error::{Error, Result};
use crate::kernel::{default_j, KernelSpec};
use crate::particles::{interaction_energy_raw, nearest_neighbor_raw, pairwise_force_raw, ParticleSystem};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowKind {
    Gradient,
    Conservative,
    Mixed,
    Newton,
}

/// Named Lipschitz vector fields added to the particle velocity.
#[derive(Clone, Debug, PartialEq)]
pub enum Forcing {
    Zero,
    ConstantDrift(Vec<f64>),
    /// `F(x) = -lambda x`
    LinearConfinement(f64),
}

impl Forcing {
    pub fn is_zero(&self) -> bool {
        match self {
            Forcing::Zero => true,
            Forcing::ConstantDrift(w) => w.iter().all(|v| *v == 0.0),
            Forcing::LinearConfinement(l) => *l == 0.0,
        }
    }

    /// Adds `F(x)` to `out`.
    #[inline]
    pub fn add_to(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Forcing::Zero => {}
            Forcing::ConstantDrift(w) => {
                for (o, w) in out.iter_mut().zip(w) {
                    *o += w;
                }
            }
            Forcing::LinearConfinement(l) => {
                for (o, x) in out.iter_mut().zip(x) {
                    *o -= l * x;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowSpec {
    kind: FlowKind,
    d: usize,
    j: Vec<f64>,
    alpha: f64,
    beta: f64,
    forcing: Forcing,
}

impl FlowSpec {
    pub fn gradient(d: usize) -> Self {
        Self {
            kind: FlowKind::Gradient,
            d,
            j: vec![0.0; d * d],
            alpha: 1.0,
            beta: 0.0,
            forcing: Forcing::Zero,
        }
    }

    pub fn conservative(d: usize) -> Self {
        Self {
            kind: FlowKind::Conservative,
            j: default_j(d),
            alpha: 0.0,
            beta: 1.0,
            ..Self::gradient(d)
        }
    }

    pub fn mixed(d: usize, alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0) || !beta.is_finite() {
            return Err(Error::invalid("mixed flow needs alpha > 0 and finite beta"));
        }
        Ok(Self {
            kind: FlowKind::Mixed,
            j: default_j(d),
            alpha,
            beta,
            ..Self::gradient(d)
        })
    }

    pub fn newton(d: usize) -> Self {
        Self {
            kind: FlowKind::Newton,
            ..Self::gradient(d)
        }
    }

    /// Replaces J (row-major d x d); must be antisymmetric.
    pub fn with_j(mut self, j: Vec<f64>) -> Result<Self> {
        let d = self.d;
        if j.len() != d * d {
            return Err(Error::invalid("J must be d x d"));
        }
        for a in 0..d {
            for b in 0..d {
                if j[a * d + b] + j[b * d + a] != 0.0 {
                    return Err(Error::invalid("J must be antisymmetric"));
                }
            }
        }
        self.j = j;
        Ok(self)
    }

    pub fn with_forcing(mut self, forcing: Forcing) -> Result<Self> {
        if let Forcing::ConstantDrift(w) = &forcing {
            if w.len() != self.d {
                return Err(Error::invalid("drift vector has wrong dimension"));
            }
        }
        self.forcing = forcing;
        Ok(self)
    }

    pub fn kind(&self) -> FlowKind {
        self.kind
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn j(&self) -> &[f64] {
        &self.j
    }

    pub fn forcing(&self) -> &Forcing {
        &self.forcing
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Mobility `M` with particle velocity `M f_i + F(x_i)`, `f_i = -(1/N) grad_i H_N`.
    /// Row-major d x d. Newton flows use the identity for the acceleration.
    pub fn mobility(&self) -> Vec<f64> {
        let d = self.d;
        let mut m = vec![0.0; d * d];
        let (a, b) = match self.kind {
            FlowKind::Gradient | FlowKind::Newton => (1.0, 0.0),
            FlowKind::Conservative => (0.0, 1.0),
            FlowKind::Mixed => (self.alpha, self.beta),
        };
        for r in 0..d {
            for c in 0..d {
                m[r * d + c] = b * self.j[r * d + c] + if r == c { a } else { 0.0 };
            }
        }
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub adaptive: bool,
    pub dt_floor: f64,
    pub collision_fraction: f64,
}

impl IntegratorConfig {
    pub fn fixed(dt: f64) -> Self {
        Self {
            dt,
            adaptive: false,
            dt_floor: dt * 1e-6,
            collision_fraction: 0.5,
        }
    }

    pub fn adaptive(dt: f64) -> Self {
        Self {
            adaptive: true,
            ..Self::fixed(dt)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > self.dt_floor && self.dt_floor > 0.0) {
            return Err(Error::invalid("need dt > dt_floor > 0"));
        }
        if !(self.collision_fraction > 0.0 && self.collision_fraction < 1.0) {
            return Err(Error::invalid("collision_fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Right-hand side of the ODE on the flat state (positions, then velocities for Newton).
struct Rhs<'a> {
    d: usize,
    n: usize,
    flow: &'a FlowSpec,
    spec: &'a KernelSpec,
    mobility: Vec<f64>,
    force: Vec<f64>,
}

impl<'a> Rhs<'a> {
    fn new(flow: &'a FlowSpec, spec: &'a KernelSpec, n: usize) -> Self {
        let d = flow.d;
        Self {
            d,
            n,
            flow,
            spec,
            mobility: flow.mobility(),
            force: vec![0.0; n * d],
        }
    }

    fn eval(&mut self, state: &[f64], out: &mut [f64]) -> Result<()> {
        let (d, nd) = (self.d, self.n * self.d);
        let pos = &state[..nd];
        pairwise_force_raw(d, pos, self.spec, &mut self.force)?;
        match self.flow.kind {
            FlowKind::Newton => {
                out[..nd].copy_from_slice(&state[nd..]);
                out[nd..].copy_from_slice(&self.force);
                if !self.flow.forcing.is_zero() {
                    for i in 0..self.n {
                        self.flow.forcing.add_to(&pos[i * d..(i + 1) * d], &mut out[nd + i * d..nd + (i + 1) * d]);
                    }
                }
            }
            FlowKind::Gradient => {
                out[..nd].copy_from_slice(&self.force);
                self.add_forcing(pos, out);
            }
            _ => {
                let m = &self.mobility;
                for i in 0..self.n {
                    let f = &self.force[i * d..(i + 1) * d];
                    for r in 0..d {
                        out[i * d + r] = (0..d).map(|c| m[r * d + c] * f[c]).sum();
                    }
                }
                self.add_forcing(pos, out);
            }
        }
        Ok(())
    }

    fn add_forcing(&self, pos: &[f64], out: &mut [f64]) {
        if self.flow.forcing.is_zero() {
            return;
        }
        let d = self.d;
        for i in 0..self.n {
            self.flow.forcing.add_to(&pos[i * d..(i + 1) * d], &mut out[i * d..(i + 1) * d]);
        }
    }
}

fn pack(sys: &ParticleSystem) -> Vec<f64> {
    let mut s = sys.positions().to_vec();
    if let Some(v) = sys.velocities() {
        s.extend_from_slice(v);
    }
    s
}

fn unpack(template: &ParticleSystem, state: &[f64]) -> Result<ParticleSystem> {
    let nd = template.positions().len();
    let mut out = ParticleSystem::new(template.d(), state[..nd].to_vec())?;
    if template.velocities().is_some() {
        out.set_velocities(Some(state[nd..].to_vec()))?;
    }
    Ok(out)
}

fn rk4(rhs: &mut Rhs, y: &[f64], dt: f64) -> Result<Vec<f64>> {
    let m = y.len();
    let mut k1 = vec![0.0; m];
    let mut k2 = vec![0.0; m];
    let mut k3 = vec![0.0; m];
    let mut k4 = vec![0.0; m];
    let mut tmp = vec![0.0; m];
    rhs.eval(y, &mut k1)?;
    for i in 0..m {
        tmp[i] = y[i] + 0.5 * dt * k1[i];
    }
    rhs.eval(&tmp, &mut k2)?;
    for i in 0..m {
        tmp[i] = y[i] + 0.5 * dt * k2[i];
    }
    rhs.eval(&tmp, &mut k3)?;
    for i in 0..m {
        tmp[i] = y[i] + dt * k3[i];
    }
    rhs.eval(&tmp, &mut k4)?;
    Ok((0..m)
        .map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

fn check_state(sys: &ParticleSystem, flow: &FlowSpec, spec: &KernelSpec) -> Result<()> {
    if sys.d() != spec.d() || flow.d != spec.d() {
        return Err(Error::invalid("particles, flow and kernel dimensions differ"));
    }
    let newton = flow.kind == FlowKind::Newton;
    if newton != sys.velocities().is_some() {
        return Err(Error::invalid("velocities must be present exactly for Newton flows"));
    }
    Ok(())
}

/// Advances `state` over `[t, t + h]`, halving on excessive displacement when adaptive.
fn advance(rhs: &mut Rhs, state: &[f64], t: f64, h: f64, cfg: &IntegratorConfig) -> Result<Vec<f64>> {
    if !cfg.adaptive {
        return rk4(rhs, state, h).map_err(|e| attach_time(e, t));
    }
    let (d, nd) = (rhs.d, rhs.n * rhs.d);
    let mut done = 0.0;
    let mut cur = state.to_vec();
    let mut nn = nearest_neighbor_raw(d, &cur[..nd]);
    let mut sub = h;
    while done < h {
        sub = sub.min(h - done);
        let trial = match rk4(rhs, &cur, sub) {
            Ok(next) => Some(next),
            Err(Error::Collision { .. }) => None,
            Err(e) => return Err(attach_time(e, t + done)),
        };
        let accepted = trial.filter(|next| {
            (0..rhs.n).all(|i| {
                let m2: f64 = (0..d).map(|k| (next[i * d + k] - cur[i * d + k]).powi(2)).sum();
                m2.sqrt() <= cfg.collision_fraction * nn[i]
            })
        });
        match accepted {
            Some(next) => {
                cur = next;
                done += sub;
                if done < h {
                    nn = nearest_neighbor_raw(d, &cur[..nd]);
                    sub *= 2.0;
                }
            }
            None => {
                sub *= 0.5;
                if sub < cfg.dt_floor {
                    return Err(Error::Integrator {
                        t: t + done,
                        reason: format!("timestep fell below floor {}", cfg.dt_floor),
                    });
                }
            }
        }
    }
    Ok(cur)
}

fn attach_time(e: Error, t: f64) -> Error {
    match e {
        Error::Collision { i, j } => Error::Integrator {
            t,
            reason: format!("particles {i} and {j} collide"),
        },
        other => other,
    }
}

/// One RK4 step of size `cfg.dt`.
pub fn step(sys: &ParticleSystem, flow: &FlowSpec, spec: &KernelSpec, cfg: &IntegratorConfig) -> Result<ParticleSystem> {
    step_by(sys, flow, spec, cfg, cfg.dt, 0.0)
}

fn step_by(sys: &ParticleSystem, flow: &FlowSpec, spec: &KernelSpec, cfg: &IntegratorConfig, h: f64, t: f64) -> Result<ParticleSystem> {
    cfg.validate()?;
    check_state(sys, flow, spec)?;
    let mut rhs = Rhs::new(flow, spec, sys.n());
    let next = advance(&mut rhs, &pack(sys), t, h, cfg)?;
    unpack(sys, &next)
}

/// Receives the state at observation times.
pub trait Observer {
    fn observe(&mut self, t: f64, sys: &ParticleSystem) -> Result<()>;
}

impl<F: FnMut(f64, &ParticleSystem) -> Result<()>> Observer for F {
    fn observe(&mut self, t: f64, sys: &ParticleSystem) -> Result<()> {
        self(t, sys)
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<ParticleSystem>,
}

/// Integrates to time `t_end`, observing every `every` steps and at the end.
///
/// Step k covers `[k dt, min((k+1) dt, T)]`, so there are `ceil(T/dt)` steps.
pub fn run(
    sys: &ParticleSystem,
    flow: &FlowSpec,
    spec: &KernelSpec,
    cfg: &IntegratorConfig,
    t_end: f64,
    every: usize,
    observers: &mut [&mut dyn Observer],
) -> Result<Trajectory> {
    cfg.validate()?;
    check_state(sys, flow, spec)?;
    if !(t_end >= 0.0) {
        return Err(Error::invalid("T must be nonnegative"));
    }
    let every = every.max(1);
    let steps = step_count(t_end, cfg.dt);
    let mut traj = Trajectory {
        times: vec![0.0],
        snapshots: vec![sys.clone()],
    };
    for o in observers.iter_mut() {
        o.observe(0.0, sys)?;
    }
    let mut rhs = Rhs::new(flow, spec, sys.n());
    let mut state = pack(sys);
    for k in 0..steps {
        let t0 = k as f64 * cfg.dt;
        let t1 = if k + 1 == steps { t_end } else { (k + 1) as f64 * cfg.dt };
        state = advance(&mut rhs, &state, t0, t1 - t0, cfg)?;
        if (k + 1) % every == 0 || k + 1 == steps {
            let snap = unpack(sys, &state)?;
            for o in observers.iter_mut() {
                o.observe(t1, &snap).map_err(|e| attach_time(e, t1))?;
            }
            traj.times.push(t1);
            traj.snapshots.push(snap);
        }
    }
    Ok(traj)
}

pub fn step_count(t_end: f64, dt: f64) -> usize {
    if t_end <= 0.0 {
        0
    } else {
        ((t_end / dt) - 1e-9).ceil().max(1.0) as usize
    }
}

/// `(1/(2N)) sum |v_i|^2 + (1/N^2) sum_{i != j} g(x_i - x_j)`: conserved by
/// `v' = -(1/N) grad_i H_N` with the ordered-pair energy.
pub fn newton_energy(sys: &ParticleSystem, spec: &KernelSpec) -> Result<f64> {
    let v = sys
        .velocities()
        .ok_or_else(|| Error::invalid("Newton energy needs velocities"))?;
    let n = sys.n() as f64;
    let kin: f64 = v.iter().map(|x| x * x).sum::<f64>() / (2.0 * n);
    Ok(kin + interaction_energy_raw(sys.d(), sys.positions(), spec)? / (n * n))
}
