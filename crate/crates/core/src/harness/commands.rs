//! Subcommand implementations; all outputs go under one directory.

use super::config::{ExperimentConfig, FlowName, GapMode};
use super::reference::{rasterize_field, InitDensity, Reference, Snapshot};
use super::sampling::sample;
use crate::dynamics::{newton_energy, run};
use crate::error::{Error, Result};
use crate::meanfield::{field_bounds, GridGeometry, MeanField, MeasureGrid, VelocityGrid};
use crate::modenergy::{
    bounded_lipschitz_distance, euler_poisson_gap, fit_rate, kinetic_modulation, load_records, modulated_energy, sample_velocities,
    truncated_energy_at_r, weak_strong_gap, write_records, DiagnosticsRecord, RateFit,
};
use crate::particles::ParticleSystem;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub fn version_string() -> String {
    match option_env!("MFLAB_GIT_REV") {
        Some(rev) => format!("v{}-g{}", env!("CARGO_PKG_VERSION"), rev),
        None => format!("v{}", env!("CARGO_PKG_VERSION")),
    }
}

/// Writes CSV rows after a `# config_hash=...` comment line.
pub fn write_csv_with_hash(path: &Path, hash: &str, records: &[DiagnosticsRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# config_hash={hash}")?;
    write_records(&mut w, records)?;
    w.flush()?;
    Ok(())
}

/// One diagnostics row for `sys` against a frozen reference.
pub fn diagnostics_row(cfg: &ExperimentConfig, sys: &ParticleSystem, snap: &Snapshot, grid: Option<&MeasureGrid>, seed: u64, t: f64) -> Result<DiagnosticsRecord> {
    let n = sys.n();
    let nf = n as f64;
    let field: &dyn MeanField = snap.field.as_ref();
    let spec = *field.kernel();
    let (f_n, te_r, sum_g_r, min_r) = if cfg.diagnostics.truncated {
        let tr = truncated_energy_at_r(sys, field)?;
        (tr.f_n, tr.te_r, tr.sum_g_r, tr.min_r)
    } else {
        (modulated_energy(sys, field)?, f64::NAN, f64::NAN, f64::NAN)
    };
    let newton = cfg.flow.kind == FlowName::Newton;
    let kinetic_mod = match (newton, cfg.diagnostics.kinetic, &snap.velocity) {
        (false, _, _) => 0.0,
        (true, true, Some(u)) => kinetic_modulation(sys, |x| u(x))?,
        _ => f64::NAN,
    };
    let h_n = kinetic_mod + f_n;
    let bl_dist = match grid {
        Some(g) => bounded_lipschitz_distance(sys, g, seed)?,
        None => f64::NAN,
    };
    let en = if newton { newton_energy(sys, &spec)? } else { f64::NAN };
    Ok(DiagnosticsRecord {
        t,
        n,
        seed,
        f_n,
        f_n_per_n2: f_n / (nf * nf),
        kinetic_mod,
        h_n_total: h_n,
        sum_g_r,
        min_r,
        te_r,
        bl_dist,
        hn_per_n2: h_n / (nf * nf),
        en_per_n: en,
    })
}

/// Result of one (N, seed) cell.
pub struct CellOutput {
    pub records: Vec<DiagnosticsRecord>,
    pub final_particles: Option<ParticleSystem>,
    pub reference: &'static str,
    pub error: Option<Error>,
}

pub fn initial_particles(cfg: &ExperimentConfig, init: &InitDensity, n: usize, seed: u64) -> Result<ParticleSystem> {
    let mut sys = sample(&init.source(), n, seed, cfg.init.sampling)?;
    if cfg.flow.kind == FlowName::Newton {
        let u0 = super::reference::initial_velocity(cfg);
        let v = sample_velocities(&sys, |x| Ok(u0(x)))?;
        sys.set_velocities(Some(v))?;
    }
    Ok(sys)
}

/// Runs one (N, seed) cell, keeping the rows produced before any failure.
pub fn run_cell(cfg: &ExperimentConfig, n: usize, seed: u64) -> CellOutput {
    let mut records = vec![];
    let mut reference_name = "none";
    let result = (|| -> Result<ParticleSystem> {
        let spec = cfg.kernel_spec()?;
        let flow = cfg.flow_spec()?;
        let init = InitDensity::build(cfg)?;
        let sys = initial_particles(cfg, &init, n, seed)?;
        let mut reference = Reference::for_particles(cfg, &init)?;
        reference_name = reference.name();
        let geom = cfg.geometry()?;
        let mut observer = |t: f64, s: &ParticleSystem| -> Result<()> {
            reference.advance_to(t)?;
            let snap = reference.snapshot()?;
            let grid = if cfg.diagnostics.bl { Some(reference.grid_density(geom)?) } else { None };
            records.push(diagnostics_row(cfg, s, &snap, grid.as_ref(), seed, t)?);
            Ok(())
        };
        let traj = run(&sys, &flow, &spec, &cfg.integrator(), cfg.time.t_end, cfg.diagnostics.every, &mut [&mut observer])?;
        Ok(traj.snapshots.last().cloned().unwrap_or(sys))
    })();
    match result {
        Ok(sys) => CellOutput {
            records,
            final_particles: Some(sys),
            reference: reference_name,
            error: None,
        },
        Err(e) => CellOutput {
            records,
            final_particles: None,
            reference: reference_name,
            error: Some(e),
        },
    }
}

#[derive(Debug, Default)]
pub struct SimulateSummary {
    pub records: Vec<DiagnosticsRecord>,
    pub failures: usize,
    pub csv: PathBuf,
}

/// Runs every (N, seed) cell; cells run concurrently and write their own
/// files, then the rows are merged in (N_list, seeds) order.
pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<SimulateSummary> {
    fs::create_dir_all(out)?;
    let hash = cfg.hash();
    let cells: Vec<(usize, u64)> = cfg.n_list.iter().flat_map(|&n| cfg.seeds.iter().map(move |&s| (n, s))).collect();
    let results: Vec<(usize, u64, CellOutput, f64)> = cells
        .par_iter()
        .map(|&(n, seed)| {
            let start = Instant::now();
            let cell = run_cell(cfg, n, seed);
            (n, seed, cell, start.elapsed().as_secs_f64())
        })
        .collect();
    let mut meta = BufWriter::new(File::create(out.join("runs.jsonl"))?);
    let mut summary = SimulateSummary {
        csv: out.join("diagnostics.csv"),
        ..Default::default()
    };
    for (n, seed, cell, wall) in &results {
        let stem = format!("cell_N{n}_seed{seed}");
        let csv = out.join(format!("{stem}.csv"));
        write_csv_with_hash(&csv, &hash, &cell.records)?;
        if let Some(sys) = &cell.final_particles {
            sys.save_csv_with_hash(&out.join(format!("{stem}_final_particles.csv")), &hash)?;
        }
        let line = json!({
            "command": "simulate",
            "config_hash": hash,
            "version": version_string(),
            "N": n,
            "seed": seed,
            "reference": cell.reference,
            "rows": cell.records.len(),
            "csv": csv.file_name().map(|s| s.to_string_lossy().to_string()),
            "status": if cell.error.is_none() { "ok" } else { "error" },
            "error": cell.error.as_ref().map(|e| e.to_string()),
            "wall_time_s": wall,
        });
        writeln!(meta, "{line}")?;
        if cell.error.is_some() {
            summary.failures += 1;
        }
        summary.records.extend(cell.records.iter().cloned());
    }
    meta.flush()?;
    write_csv_with_hash(&summary.csv, &hash, &summary.records)?;
    fs::write(out.join("config.json"), cfg.to_json_with_hash())?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
struct RateFitOutput<'a> {
    config_hash: &'a str,
    version: String,
    sources: Vec<String>,
    #[serde(flatten)]
    fit: &'a RateFit,
}

pub fn write_fit(path: &Path, fit: &RateFit, hash: &str, sources: &[PathBuf]) -> Result<()> {
    let out = RateFitOutput {
        config_hash: hash,
        version: version_string(),
        sources: sources.iter().map(|p| p.display().to_string()).collect(),
        fit,
    };
    fs::write(path, serde_json::to_string_pretty(&out).expect("fit serializes"))?;
    Ok(())
}

/// Simulation followed by the rate fit.
pub fn sweep(cfg: &ExperimentConfig, out: &Path) -> Result<(SimulateSummary, Result<RateFit>)> {
    let summary = simulate(cfg, out)?;
    let fit = fit_rate(&summary.records);
    if let Ok(f) = &fit {
        write_fit(&out.join("rate_fit.json"), f, &cfg.hash(), std::slice::from_ref(&summary.csv))?;
    }
    Ok((summary, fit))
}

/// Fits records gathered from several CSV files.
pub fn fit_files(paths: &[PathBuf], out: &Path) -> Result<RateFit> {
    let mut records = vec![];
    let mut hashes = vec![];
    for p in paths {
        records.extend(load_records(p)?);
        if let Some(h) = read_hash(p)? {
            hashes.push(h);
        }
    }
    let fit = fit_rate(&records)?;
    hashes.dedup();
    fs::create_dir_all(out)?;
    write_fit(&out.join("rate_fit.json"), &fit, &hashes.join(","), paths)?;
    Ok(fit)
}

fn read_hash(path: &Path) -> Result<Option<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# config_hash="))
        .map(|s| s.trim().to_string()))
}

/// Diagnostics of a stored particle configuration at time `t`.
pub fn diagnose(cfg: &ExperimentConfig, particles: &Path, t: f64, seed: u64, out: &Path) -> Result<DiagnosticsRecord> {
    let sys = ParticleSystem::load_csv(particles)?;
    if sys.d() != cfg.kernel.d {
        return Err(Error::config("kernel.d", "particle file dimension differs"));
    }
    let init = InitDensity::build(cfg)?;
    let mut reference = Reference::for_particles(cfg, &init)?;
    reference.advance_to(t)?;
    let snap = reference.snapshot()?;
    let grid = if cfg.diagnostics.bl { Some(reference.grid_density(cfg.geometry()?)?) } else { None };
    let rec = diagnostics_row(cfg, &sys, &snap, grid.as_ref(), seed, t)?;
    fs::create_dir_all(out)?;
    write_csv_with_hash(&out.join("diagnose.csv"), &cfg.hash(), std::slice::from_ref(&rec))?;
    Ok(rec)
}

/// Observation times `0, every*dt, ..., T`.
pub fn sample_times(cfg: &ExperimentConfig) -> Vec<f64> {
    let steps = crate::dynamics::step_count(cfg.time.t_end, cfg.time.dt);
    let every = cfg.diagnostics.every;
    let mut out = vec![0.0];
    for k in 1..=steps {
        if k % every == 0 || k == steps {
            out.push(if k == steps { cfg.time.t_end } else { k as f64 * cfg.time.dt });
        }
    }
    out
}

/// Largest distance from `center` of a cell holding more than `frac` of the peak density.
pub fn front_radius(mu: &MeasureGrid, center: &[f64], frac: f64) -> f64 {
    let peak = mu.max();
    (0..mu.geom.len())
        .filter(|&c| mu.values[c] > frac * peak)
        .map(|c| {
            mu.geom
                .center(c)
                .iter()
                .zip(center)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Serialize)]
pub struct PdeRow {
    pub t: f64,
    pub mass: f64,
    pub sup_density: f64,
    pub front_radius: f64,
    /// L1 distance to the closed-form solution, when one exists.
    pub l1_exact: f64,
}

/// Grid solve of the configured flow with the stand-alone coupling.
pub fn pde_solve(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PdeRow>> {
    let geom = cfg.geometry()?;
    let init = InitDensity::build(cfg)?;
    let mut reference = Reference::for_pde(cfg, &init)?;
    let exact = match cfg.exact_family() {
        Some(f) if cfg.flow.kind != FlowName::Newton => {
            let sol = crate::meanfield::ExactSolution::new(f, cfg.kernel_spec()?, cfg.init.r0, cfg.init.p)?
                .with_center(cfg.center())?
                .with_coupling(cfg.pde.coupling)?;
            let matches = match cfg.flow.kind {
                FlowName::Gradient => !sol.is_conservative() && f != crate::meanfield::Family::UniformBallStatic,
                FlowName::Conservative => sol.is_conservative() || f == crate::meanfield::Family::UniformBallStatic,
                _ => false,
            };
            matches.then_some(sol)
        }
        _ => None,
    };
    let center = cfg.center();
    let mut rows = vec![];
    for t in sample_times(cfg) {
        reference.advance_to(t)?;
        let mu = reference.grid_density(geom)?;
        let l1 = match &exact {
            Some(sol) => mu.l1_distance(&sol.rasterize(t, geom)?)?,
            None => f64::NAN,
        };
        rows.push(PdeRow {
            t,
            mass: mu.mass(),
            sup_density: mu.max(),
            front_radius: front_radius(&mu, &center, 1e-3),
            l1_exact: l1,
        });
    }
    fs::create_dir_all(out)?;
    let hash = cfg.hash();
    let mut w = BufWriter::new(File::create(out.join("pde.csv"))?);
    writeln!(w, "# config_hash={hash}")?;
    {
        let mut wr = csv::Writer::from_writer(&mut w);
        for r in &rows {
            wr.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        }
        wr.flush()?;
    }
    w.flush()?;
    let last = reference.grid_density(geom)?;
    last.save_with_hash(&out.join("mu_final"), &hash)?;
    let mut prof = BufWriter::new(File::create(out.join("profile_final.csv"))?);
    writeln!(prof, "# config_hash={hash}")?;
    last.write_radial_profile_csv(&center, geom.n / 2, &mut prof)?;
    prof.flush()?;
    if let Reference::GridEp { ep, state, .. } = &reference {
        ep.velocity(state)?.save_with_hash(&out.join("u_final"), &hash)?;
    }
    Ok(rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct GapRow {
    pub t: f64,
    pub gap: f64,
    /// Largest Hessian norm of the second potential.
    pub sup_hessian_h2: f64,
    /// Largest velocity-gradient norm of the second solution (Euler-Poisson runs).
    pub sup_grad_u2: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GapFit {
    /// Smallest `c` with `gap(t) <= gap(0) exp(c * S(t) * t)`, `S(t)` the running
    /// sup of the rate column (Hessian, or velocity gradient for Euler-Poisson).
    pub c_hat: f64,
    pub rate_column: &'static str,
}

/// Largest spectral norm of the velocity gradient over cells with mass.
pub fn sup_velocity_gradient(u: &VelocityGrid, mu: &MeasureGrid) -> f64 {
    let geom = u.geom;
    let d = geom.d;
    let h = geom.h();
    let peak = mu.max();
    let mut best: f64 = 0.0;
    for c in 0..geom.len() {
        let idx = geom.multi_index(c);
        if mu.values[c] <= 1e-3 * peak || (0..d).any(|a| idx[a] == 0 || idx[a] + 1 == geom.n) {
            continue;
        }
        let mut frob = 0.0;
        for b in 0..d {
            let s = geom.stride(b);
            for a in 0..d {
                let g = (u.values[(c + s) * d + a] - u.values[(c - s) * d + a]) / (2.0 * h);
                frob += g * g;
            }
        }
        best = best.max(frob.sqrt());
    }
    best
}

/// Second configuration of a gap run: the initial data shifted and rescaled.
pub fn perturbed(cfg: &ExperimentConfig) -> ExperimentConfig {
    let mut c2 = cfg.clone();
    let g = cfg.gap.clone().unwrap_or(super::config::GapConfig {
        mode: GapMode::Dissipative,
        offset: vec![],
        width_scale: 1.0,
    });
    let mut center = cfg.center();
    for (c, o) in center.iter_mut().zip(&g.offset) {
        *c += o;
    }
    c2.init.center = Some(center);
    c2.init.width *= g.width_scale;
    c2.init.r0 *= g.width_scale;
    c2
}

/// Co-evolves two densities and records their weak-strong gap.
pub fn gap(cfg: &ExperimentConfig, out: &Path) -> Result<(Vec<GapRow>, GapFit)> {
    let geom = cfg.geometry()?;
    let mode = cfg.gap.as_ref().map(|g| g.mode).unwrap_or_default();
    let mut c1 = cfg.clone();
    let mut c2 = perturbed(cfg);
    let newton = mode == GapMode::EulerPoisson;
    for c in [&mut c1, &mut c2] {
        if newton {
            c.flow.kind = FlowName::Newton;
        }
    }
    let mut r1 = Reference::for_pde(&c1, &InitDensity::build(&c1)?)?;
    let mut r2 = Reference::for_pde(&c2, &InitDensity::build(&c2)?)?;
    let solver = crate::meanfield::PotentialSolver::new(geom, cfg.kernel_spec()?)?;
    let mut rows = vec![];
    for t in sample_times(cfg) {
        r1.advance_to(t)?;
        r2.advance_to(t)?;
        let mu1 = r1.grid_density(geom)?;
        let mu2 = r2.grid_density(geom)?;
        let field2 = solver.field(&mu2)?;
        let sup_hessian_h2 = field_bounds(&field2, 0.5).sup_hessian;
        let (gap, sup_grad_u2) = match (&r1, &r2) {
            (Reference::GridEp { ep: e1, state: s1, .. }, Reference::GridEp { ep: e2, state: s2, .. }) => {
                let u1 = e1.velocity(s1)?;
                let u2 = e2.velocity(s2)?;
                (euler_poisson_gap(&mu1, &u1, &mu2, &u2, &solver)?, sup_velocity_gradient(&u2, &mu2))
            }
            _ => (weak_strong_gap(&mu1, &mu2, &solver)?, f64::NAN),
        };
        rows.push(GapRow {
            t,
            gap,
            sup_hessian_h2,
            sup_grad_u2,
        });
    }
    let fit = gronwall_constant(&rows, newton);
    fs::create_dir_all(out)?;
    let hash = cfg.hash();
    let mut w = BufWriter::new(File::create(out.join("gap.csv"))?);
    writeln!(w, "# config_hash={hash}")?;
    {
        let mut wr = csv::Writer::from_writer(&mut w);
        for r in &rows {
            wr.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        }
        wr.flush()?;
    }
    w.flush()?;
    fs::write(
        out.join("gap_fit.json"),
        serde_json::to_string_pretty(&json!({"config_hash": hash, "version": version_string(), "c_hat": fit.c_hat, "rate_column": fit.rate_column}))
            .expect("json"),
    )?;
    Ok((rows, fit))
}

/// `max_t log(gap(t)/gap(0)) / (S(t) t)` with `S(t)` the running sup of the rate column.
pub fn gronwall_constant(rows: &[GapRow], velocity_rate: bool) -> GapFit {
    let rate = |r: &GapRow| if velocity_rate { r.sup_grad_u2 } else { r.sup_hessian_h2 };
    let g0 = rows.first().map(|r| r.gap).unwrap_or(0.0);
    let mut running: f64 = 0.0;
    let mut c_hat = f64::NEG_INFINITY;
    for r in rows {
        running = running.max(rate(r));
        if r.t > 0.0 && g0 > 0.0 && r.gap > 0.0 && running > 0.0 {
            c_hat = c_hat.max((r.gap / g0).ln() / (running * r.t));
        }
    }
    GapFit {
        c_hat: if c_hat.is_finite() { c_hat } else { 0.0 },
        rate_column: if velocity_rate { "sup_grad_u2" } else { "sup_hessian_h2" },
    }
}

/// Rasterized initial density, for inspection.
pub fn initial_grid(cfg: &ExperimentConfig, geom: GridGeometry) -> Result<MeasureGrid> {
    match InitDensity::build(cfg)? {
        InitDensity::Radial(mu) => rasterize_field(&mu, geom),
        InitDensity::Grid(mu) => Ok(mu),
    }
}
