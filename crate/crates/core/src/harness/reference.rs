//! Reference solutions paired with particle runs.

use super::config::{ExperimentConfig, FlowName, InitFamily, ReferenceChoice, VelocityName};
use super::sampling::Source;
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::meanfield::{
    EulerPoisson, Evolver, ExactSolution, GridGeometry, MarkerState, MeanField, MeasureGrid, RadialLagrangian, RadialMeasure,
    VelocityGrid,
};

/// Coupling of references that particles are compared against.
pub const PARTICLE_COUPLING: f64 = 2.0;

/// Initial density of an experiment.
#[derive(Clone, Debug)]
pub enum InitDensity {
    Radial(RadialMeasure),
    Grid(MeasureGrid),
}

impl InitDensity {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let spec = cfg.kernel_spec()?;
        let center = cfg.center();
        let init = &cfg.init;
        if let Some(f) = cfg.exact_family() {
            let sol = ExactSolution::new(f, spec, init.r0, init.p)?.with_center(center)?;
            return Ok(Self::Radial(sol.at(0.0)?));
        }
        match init.family {
            InitFamily::RadialProfile => Ok(Self::Radial(RadialMeasure::new(spec, center, init.r0, init.p)?)),
            InitFamily::Gaussian => Ok(Self::Grid(gaussian(cfg.geometry()?, &center, init.width)?)),
            _ => unreachable!("exact families handled above"),
        }
    }

    pub fn source(&self) -> Source<'_> {
        match self {
            Self::Radial(mu) => Source::Radial(mu),
            Self::Grid(mu) => Source::Grid(mu),
        }
    }

    pub fn rasterize(&self, geom: GridGeometry) -> Result<MeasureGrid> {
        match self {
            Self::Radial(mu) => rasterize_field(mu, geom),
            Self::Grid(mu) => {
                geom.same_as(&mu.geom)?;
                Ok(mu.clone())
            }
        }
    }
}

pub fn gaussian(geom: GridGeometry, center: &[f64], width: f64) -> Result<MeasureGrid> {
    // cut at 1e-12 of the peak so the support is compact
    let cut = 2.0 * 1e12f64.ln();
    let mut mu = MeasureGrid::rasterize(geom, 2, |x| {
        let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
        let q = r2 / (width * width);
        if q < cut {
            (-0.5 * q).exp()
        } else {
            0.0
        }
    });
    mu.normalize()?;
    Ok(mu)
}

pub fn rasterize_field(mu: &dyn MeanField, geom: GridGeometry) -> Result<MeasureGrid> {
    let sub = match geom.d {
        1 => 16,
        2 => 6,
        _ => 3,
    };
    let mut g = MeasureGrid::rasterize(geom, sub, |x| mu.density(x));
    g.normalize()?;
    Ok(g)
}

/// Initial velocity field.
pub fn initial_velocity(cfg: &ExperimentConfig) -> impl Fn(&[f64]) -> Vec<f64> + Sync + Send + Clone {
    let c = cfg.center();
    let u = cfg.init.u0.clone();
    move |x: &[f64]| match u.name {
        VelocityName::Zero => vec![0.0; x.len()],
        VelocityName::Linear => x.iter().zip(&c).map(|(a, c)| u.strength * (a - c)).collect(),
        VelocityName::Rotation => vec![-u.strength * (x[1] - c[1]), u.strength * (x[0] - c[0])],
    }
}

/// Mean-field state co-evolved with a particle run.
pub enum Reference {
    Exact { sol: ExactSolution, t: f64 },
    Grid { evolver: Evolver, mu: MeasureGrid, dt_max: f64 },
    RadialEp { lag: RadialLagrangian, dt: f64 },
    GridEp { ep: EulerPoisson, state: MarkerState, dt: f64 },
}

/// Reference frozen at one time.
pub struct Snapshot {
    pub field: Box<dyn MeanField>,
    pub velocity: Option<Box<dyn Fn(&[f64]) -> Result<Vec<f64>> + Sync + Send>>,
}

impl Reference {
    /// Reference for particle runs of `cfg`, with the particle coupling.
    pub fn for_particles(cfg: &ExperimentConfig, init: &InitDensity) -> Result<Self> {
        let spec = cfg.kernel_spec()?;
        let flow = cfg.flow_spec()?;
        let kappa = PARTICLE_COUPLING;
        if cfg.flow.kind == FlowName::Newton {
            let radial_ok = cfg.pde.reference != ReferenceChoice::Grid
                && spec.is_coulomb()
                && cfg.init.u0.name != VelocityName::Rotation
                && cfg.center().iter().all(|c| *c == 0.0);
            if let (true, InitDensity::Radial(mu)) = (radial_ok, init) {
                let a = cfg.init.u0.strength * if cfg.init.u0.name == VelocityName::Linear { 1.0 } else { 0.0 };
                let lag = RadialLagrangian::new(mu, move |r| a * r, move |_| a, cfg.pde.shells, kappa)?;
                return Ok(Self::RadialEp {
                    lag,
                    dt: cfg.time.dt.min(1e-3),
                });
            }
            return Self::grid_ep(cfg, init, spec, kappa);
        }
        let use_exact = match cfg.pde.reference {
            ReferenceChoice::Exact => true,
            ReferenceChoice::Auto => cfg.exact_reference_available(),
            ReferenceChoice::Grid => false,
        };
        if use_exact {
            let family = cfg.exact_family().ok_or_else(|| Error::config("pde.reference", "no closed form for this family"))?;
            let sol = ExactSolution::new(family, spec, cfg.init.r0, cfg.init.p)?
                .with_center(cfg.center())?
                .with_coupling(kappa)?;
            return Ok(Self::Exact { sol, t: 0.0 });
        }
        let geom = cfg.geometry()?;
        let evolver = Evolver::from_flow(geom, spec, &flow, kappa)?.with_cfl(cfg.pde.cfl)?;
        Ok(Self::Grid {
            evolver,
            mu: init.rasterize(geom)?,
            dt_max: cfg.time.dt,
        })
    }

    /// Grid solver of the configured flow with the stand-alone coupling.
    pub fn for_pde(cfg: &ExperimentConfig, init: &InitDensity) -> Result<Self> {
        let spec = cfg.kernel_spec()?;
        let kappa = cfg.pde.coupling;
        if cfg.flow.kind == FlowName::Newton {
            return Self::grid_ep(cfg, init, spec, kappa);
        }
        let geom = cfg.geometry()?;
        let evolver = Evolver::from_flow(geom, spec, &cfg.flow_spec()?, kappa)?.with_cfl(cfg.pde.cfl)?;
        Ok(Self::Grid {
            evolver,
            mu: init.rasterize(geom)?,
            dt_max: cfg.time.dt,
        })
    }

    fn grid_ep(cfg: &ExperimentConfig, init: &InitDensity, spec: KernelSpec, kappa: f64) -> Result<Self> {
        let geom = cfg.geometry()?;
        let ep = EulerPoisson::new(geom, spec, kappa)?;
        let u0 = initial_velocity(cfg);
        let u = VelocityGrid::from_fn(geom, |x| u0(x));
        let state = ep.init(&init.rasterize(geom)?, &u)?;
        Ok(Self::GridEp {
            ep,
            state,
            dt: cfg.time.dt,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Exact { .. } => "exact",
            Self::Grid { .. } => "grid",
            Self::RadialEp { .. } => "radial_lagrangian",
            Self::GridEp { .. } => "grid_euler_poisson",
        }
    }

    pub fn time(&self) -> f64 {
        match self {
            Self::Exact { t, .. } => *t,
            Self::Grid { mu, .. } => mu.time,
            Self::RadialEp { lag, .. } => lag.time(),
            Self::GridEp { state, .. } => state.t,
        }
    }

    pub fn advance_to(&mut self, t_end: f64) -> Result<()> {
        if t_end <= self.time() + 1e-14 {
            return Ok(());
        }
        match self {
            Self::Exact { t, .. } => *t = t_end,
            Self::Grid { evolver, mu, dt_max } => *mu = evolver.advance(mu, t_end, *dt_max)?,
            Self::RadialEp { lag, dt } => {
                let steps = ((t_end - lag.time()) / *dt).ceil().max(1.0) as usize;
                lag.advance(t_end, steps)?;
            }
            Self::GridEp { ep, state, dt } => {
                while state.t < t_end - 1e-12 {
                    let h = dt.min(t_end - state.t);
                    match ep.step(state, h) {
                        Ok(()) => {}
                        Err(Error::Cfl { required_dt }) => ep.step(state, 0.9 * required_dt)?,
                        Err(e) => return Err(e),
                    }
                }
            }
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Result<Snapshot> {
        Ok(match self {
            Self::Exact { sol, t } => {
                let sol2 = sol.clone();
                let t = *t;
                Snapshot {
                    field: Box::new(sol.at(t)?),
                    velocity: Some(Box::new(move |x: &[f64]| sol2.velocity(t, x))),
                }
            }
            Self::Grid { evolver, mu, .. } => Snapshot {
                field: Box::new(evolver.solver().field(mu)?),
                velocity: None,
            },
            Self::RadialEp { lag, .. } => {
                let snap = lag.snapshot();
                let vel = snap.clone();
                Snapshot {
                    field: Box::new(snap),
                    velocity: Some(Box::new(move |x: &[f64]| Ok(vel.velocity(x)))),
                }
            }
            Self::GridEp { ep, state, .. } => {
                let mu = ep.density(state)?;
                let u = ep.velocity(state)?;
                Snapshot {
                    field: Box::new(ep.solver().field(&mu)?),
                    velocity: Some(Box::new(move |x: &[f64]| u.sample(x))),
                }
            }
        })
    }

    /// Grid density of the reference at its current time.
    pub fn grid_density(&self, geom: GridGeometry) -> Result<MeasureGrid> {
        match self {
            Self::Exact { sol, t } => sol.rasterize(*t, geom),
            Self::Grid { mu, .. } => Ok(mu.clone()),
            Self::RadialEp { lag, .. } => rasterize_field(&lag.snapshot(), geom),
            Self::GridEp { ep, state, .. } => ep.density(state),
        }
    }
}
