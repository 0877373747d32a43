//! Modulated-energy diagnostics.

use crate::dynamics::{FlowKind, FlowSpec};
use crate::error::{Error, Result};
use crate::kernel::{default_j, KernelSpec};
use crate::meanfield::{Evolver, GridField, MeanField, MeasureGrid, PotentialSolver, VelocityGrid};
use crate::particles::{interaction_energy_raw, minimal_distances, ParticleSystem};
use crate::reduce;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

fn check(sys: &ParticleSystem, mu: &dyn MeanField) -> Result<()> {
    if sys.d() != mu.dim() {
        return Err(Error::invalid("particle and measure dimensions differ"));
    }
    if sys.n() == 0 {
        return Err(Error::invalid("empty particle system"));
    }
    Ok(())
}

/// `sum_i h(x_i)`.
fn potential_sum(sys: &ParticleSystem, mu: &dyn MeanField) -> Result<f64> {
    let vals: Vec<f64> = reduce::map_rows(sys.n(), |i| mu.potential(sys.point(i)))
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(reduce::sum(&vals))
}

/// `F_N = sum_{i != j} g(x_i - x_j) - 2N sum_i h(x_i) + N^2 iint g dmu dmu`.
pub fn modulated_energy(sys: &ParticleSystem, mu: &dyn MeanField) -> Result<f64> {
    check(sys, mu)?;
    let n = sys.n() as f64;
    let pairs = interaction_energy_raw(sys.d(), sys.positions(), mu.kernel())?;
    let cross = potential_sum(sys, mu)?;
    Ok(pairs - 2.0 * n * cross + n * n * mu.self_energy()?)
}

pub fn self_energy(mu: &dyn MeanField) -> Result<f64> {
    mu.self_energy()
}

/// `F_N + sum g(eta_i) + 2N sum_i int f_{eta_i}(x - x_i) dmu`; requires `eta_i <= r_i`.
pub fn truncated_energy(sys: &ParticleSystem, mu: &dyn MeanField, eta: &[f64]) -> Result<f64> {
    check(sys, mu)?;
    if eta.len() != sys.n() {
        return Err(Error::invalid("one truncation radius per particle"));
    }
    let md = minimal_distances(sys);
    if md.degenerate {
        return Err(Error::OutOfRegime("coincident particles have no truncation radius".into()));
    }
    for (i, (&e, &r)) in eta.iter().zip(&md.r).enumerate() {
        if !(e > 0.0) {
            return Err(Error::invalid(format!("eta[{i}] must be positive")));
        }
        if e > r * (1.0 + 1e-12) {
            return Err(Error::OutOfRegime(format!("eta[{i}] = {e} exceeds r[{i}] = {r}")));
        }
    }
    let f = modulated_energy(sys, mu)?;
    Ok(f + truncation_terms(sys, mu, eta)?)
}

fn truncation_terms(sys: &ParticleSystem, mu: &dyn MeanField, eta: &[f64]) -> Result<f64> {
    let n = sys.n() as f64;
    let spec = *mu.kernel();
    let corr: Vec<f64> = reduce::map_rows(sys.n(), |i| -> Result<f64> {
        Ok(spec.g_r(eta[i]) + 2.0 * n * mu.local_f_integral(sys.point(i), eta[i])?)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    Ok(reduce::sum(&corr))
}

/// Truncated energy at the minimal distances, with `sum g(r_i)` and `min r_i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncatedAtR {
    pub f_n: f64,
    pub te_r: f64,
    pub sum_g_r: f64,
    pub min_r: f64,
}

pub fn truncated_energy_at_r(sys: &ParticleSystem, mu: &dyn MeanField) -> Result<TruncatedAtR> {
    check(sys, mu)?;
    let md = minimal_distances(sys);
    if md.degenerate {
        return Err(Error::OutOfRegime("coincident particles have no truncation radius".into()));
    }
    let spec = *mu.kernel();
    let f_n = modulated_energy(sys, mu)?;
    let te_r = f_n + truncation_terms(sys, mu, &md.r)?;
    let sum_g_r = reduce::sum(&md.r.iter().map(|&r| spec.g_r(r)).collect::<Vec<_>>());
    let min_r = md.r.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(TruncatedAtR {
        f_n,
        te_r,
        sum_g_r,
        min_r,
    })
}

/// `N sum_i |u(x_i) - v_i|^2`.
pub fn kinetic_modulation<U>(sys: &ParticleSystem, u: U) -> Result<f64>
where
    U: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let v = sys
        .velocities()
        .ok_or_else(|| Error::invalid("monokinetic energy needs velocities"))?;
    let d = sys.d();
    let terms: Vec<f64> = reduce::map_rows(sys.n(), |i| -> Result<f64> {
        let ui = u(sys.point(i))?;
        Ok((0..d).map(|k| (ui[k] - v[i * d + k]).powi(2)).sum())
    })
    .into_iter()
    .collect::<Result<_>>()?;
    Ok(sys.n() as f64 * reduce::sum(&terms))
}

/// `H_N = N sum |u(x_i) - v_i|^2 + F_N`.
pub fn monokinetic_energy<U>(sys: &ParticleSystem, mu: &dyn MeanField, u: U) -> Result<f64>
where
    U: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    Ok(kinetic_modulation(sys, u)? + modulated_energy(sys, mu)?)
}

/// `iint g d(mu1 - mu2) d(mu1 - mu2)` by a grid double sum.
pub fn weak_strong_gap(mu1: &MeasureGrid, mu2: &MeasureGrid, solver: &PotentialSolver) -> Result<f64> {
    mu1.geom.same_as(&mu2.geom)?;
    let diff = MeasureGrid {
        geom: mu1.geom,
        values: mu1.values.iter().zip(&mu2.values).map(|(a, b)| a - b).collect(),
        time: mu1.time,
    };
    let h = solver.potential(&diff)?;
    let terms: Vec<f64> = diff.values.iter().zip(&h).map(|(m, p)| m * p).collect();
    Ok(reduce::sum(&terms) * mu1.geom.cell_volume())
}

/// `int |u1 - u2|^2 dmu1 + iint g d(mu1 - mu2)^2`.
pub fn euler_poisson_gap(
    mu1: &MeasureGrid,
    u1: &VelocityGrid,
    mu2: &MeasureGrid,
    u2: &VelocityGrid,
    solver: &PotentialSolver,
) -> Result<f64> {
    mu1.geom.same_as(&u1.geom)?;
    mu1.geom.same_as(&u2.geom)?;
    let d = mu1.geom.d;
    let kin: Vec<f64> = (0..mu1.geom.len())
        .map(|c| {
            let a = u1.at_cell(c);
            let b = u2.at_cell(c);
            mu1.values[c] * (0..d).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>()
        })
        .collect();
    Ok(reduce::sum(&kin) * mu1.geom.cell_volume() + weak_strong_gap(mu1, mu2, solver)?)
}

/// Both sides of the energy balance along one step.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BalanceCheck {
    /// Finite-difference time derivative of F_N.
    pub lhs: f64,
    /// Identity evaluated at the step midpoint (average of both ends).
    pub rhs: f64,
    /// Dissipation part `-2N sum |G_i - grad h(x_i)|^2` (times coupling and alpha).
    pub dissipation: f64,
    /// `|lhs - rhs| / (|lhs| + |rhs| + N)`.
    pub relative_error: f64,
}

struct RhsParts {
    dissipation: f64,
    total: f64,
}

/// Matrix-vector product, row-major.
fn matvec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..d).map(|a| (0..d).map(|b| m[a * d + b] * v[b]).sum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Evaluates the right-hand side of the balance identity at one time.
///
/// With `G_i = (1/N) sum_{j != i} grad g(x_i - x_j)` and `M` a mobility,
/// `comm(M) = iint_{off-diagonal} M(grad h(x) - grad h(y)) . grad g(x - y) d(mu_N - mu)^2`
/// expands into a pair sum, a particle/field cross term and `2 int grad h . M grad h dmu`.
/// The dissipative identity reads `-2N sum|G_i - grad h_i|^2 - N^2 comm(I)`, the
/// conservative one `-N^2 comm(J)`.
fn balance_rhs(sys: &ParticleSystem, field: &GridField, spec: &KernelSpec, kappa: f64, alpha: f64, beta: f64, j: &[f64]) -> Result<RhsParts> {
    let d = sys.d();
    let n = sys.n();
    let nf = n as f64;
    let geom = field.geometry();
    let vol = geom.cell_volume();
    let mu = &field.measure().values;
    let grad_c = field.gradient_at_centers();
    // per-particle quantities
    let per: Vec<Result<(Vec<f64>, Vec<f64>, f64, f64)>> = reduce::map_rows(n, |i| {
        let xi = sys.point(i);
        let mut g = vec![0.0; d];
        for jx in 0..n {
            if jx == i {
                continue;
            }
            let z: Vec<f64> = xi.iter().zip(sys.point(jx)).map(|(a, b)| a - b).collect();
            let c = spec.grad_factor(crate::kernel::norm2(&z));
            for k in 0..d {
                g[k] += c * z[k] / nf;
            }
        }
        let cells = field.cell_gradient_integrals(xi)?;
        let mut gh = vec![0.0; d];
        let mut phi_i = 0.0;
        let mut phi_j = 0.0;
        for c in 0..geom.len() {
            if mu[c] == 0.0 {
                continue;
            }
            let w = &cells[c * d..(c + 1) * d];
            let hc = &grad_c[c * d..(c + 1) * d];
            for k in 0..d {
                gh[k] += mu[c] * w[k];
            }
            phi_i += mu[c] * dot(hc, w);
            if beta != 0.0 {
                phi_j += mu[c] * dot(&matvec(j, hc), w);
            }
        }
        Ok((g, gh, phi_i, phi_j))
    });
    let per: Vec<(Vec<f64>, Vec<f64>, f64, f64)> = per.into_iter().collect::<Result<_>>()?;
    let mut int_i = 0.0;
    let mut int_j = 0.0;
    for c in 0..geom.len() {
        let hc = &grad_c[c * d..(c + 1) * d];
        int_i += mu[c] * dot(hc, hc) * vol;
        if beta != 0.0 {
            int_j += mu[c] * dot(hc, &matvec(j, hc)) * vol;
        }
    }
    let mut diss = 0.0;
    let (mut pair_i, mut pair_j, mut cross_i, mut cross_j) = (0.0, 0.0, 0.0, 0.0);
    for (g, gh, phi_i, phi_j) in &per {
        diss += g.iter().zip(gh).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        pair_i += 2.0 / nf * dot(gh, g);
        cross_i -= 2.0 / nf * (dot(gh, gh) - phi_i);
        if beta != 0.0 {
            let jgh = matvec(j, gh);
            pair_j += 2.0 / nf * dot(&jgh, g);
            cross_j -= 2.0 / nf * (dot(gh, &jgh) - phi_j);
        }
    }
    let comm_i = pair_i + cross_i + 2.0 * int_i;
    let comm_j = pair_j + cross_j + 2.0 * int_j;
    let dissipation = -2.0 * nf * diss;
    let total = kappa * (alpha * (dissipation - nf * nf * comm_i) + beta * (-nf * nf * comm_j));
    Ok(RhsParts {
        dissipation: kappa * alpha * dissipation,
        total,
    })
}

fn grid_modulated_energy(sys: &ParticleSystem, field: &GridField, spec: &KernelSpec) -> Result<f64> {
    let n = sys.n() as f64;
    let pairs = interaction_energy_raw(sys.d(), sys.positions(), spec)?;
    let cross: Vec<f64> = reduce::map_rows(sys.n(), |i| field.potential_direct(sys.point(i)))
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(pairs - 2.0 * n * reduce::sum(&cross) + n * n * field.self_energy()?)
}

/// Checks the energy balance along one step of size `dt`: particles follow
/// `flow` (velocity `-2 M G_i`), the grid density follows `evolver`, which must
/// carry the same mobility with coupling 2.
pub fn f1_balance_check(
    sys: &ParticleSystem,
    mu: &MeasureGrid,
    flow: &FlowSpec,
    spec: &KernelSpec,
    evolver: &Evolver,
    dt: f64,
) -> Result<BalanceCheck> {
    if spec.s() >= spec.d() as f64 - 1.0 {
        return Err(Error::OutOfRegime("the balance check needs s < d - 1".into()));
    }
    if !flow.forcing().is_zero() {
        return Err(Error::invalid("the balance check assumes no forcing"));
    }
    let (alpha, beta) = match flow.kind() {
        FlowKind::Gradient => (1.0, 0.0),
        FlowKind::Conservative => (0.0, 1.0),
        FlowKind::Mixed => (flow.alpha(), flow.beta()),
        FlowKind::Newton => return Err(Error::invalid("the balance check is for first-order flows")),
    };
    let j = if beta != 0.0 { flow.j().to_vec() } else { default_j(spec.d()) };
    let kappa = 2.0;
    let solver = evolver.solver();
    let f0 = solver.field(mu)?;
    let sys1 = crate::dynamics::step(sys, flow, spec, &crate::dynamics::IntegratorConfig::fixed(dt))?;
    let mu1 = evolver.step(mu, dt)?;
    let f1 = solver.field(&mu1)?;
    let e0 = grid_modulated_energy(sys, &f0, spec)?;
    let e1 = grid_modulated_energy(&sys1, &f1, spec)?;
    let lhs = (e1 - e0) / dt;
    let r0 = balance_rhs(sys, &f0, spec, kappa, alpha, beta, &j)?;
    let r1 = balance_rhs(&sys1, &f1, spec, kappa, alpha, beta, &j)?;
    let rhs = 0.5 * (r0.total + r1.total);
    let n = sys.n() as f64;
    Ok(BalanceCheck {
        lhs,
        rhs,
        dissipation: 0.5 * (r0.dissipation + r1.dissipation),
        relative_error: (lhs - rhs).abs() / (lhs.abs() + rhs.abs() + n),
    })
}

/// Optimal assignment (minimum total cost) for a square cost matrix.
/// Returns `assignment[row] = column`.
pub fn min_cost_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    // shortest augmenting paths with potentials, 1-based internally
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Mean cost `min(|x - y|, 2)` of an optimal matching between two equal-mass
/// point clouds, replicated to a common size.
pub fn empirical_bl_distance(a: &[f64], b: &[f64], d: usize) -> f64 {
    let (na, nb) = (a.len() / d, b.len() / d);
    let l = na / gcd(na, nb) * nb;
    let (ra, rb) = (l / na, l / nb);
    let pt = |pts: &[f64], i: usize| pts[i * d..(i + 1) * d].to_vec();
    let mut cost = vec![0.0; l * l];
    for i in 0..l {
        let x = pt(a, i / ra);
        for j in 0..l {
            let y = pt(b, j / rb);
            let dist = x.iter().zip(&y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
            cost[i * l + j] = dist.min(2.0);
        }
    }
    let asg = min_cost_assignment(&cost, l);
    asg.iter().enumerate().map(|(i, &j)| cost[i * l + j]).sum::<f64>() / l as f64
}

/// Exact 1-Wasserstein distance between particles and a one-dimensional grid density.
fn w1_grid_1d(sys: &ParticleSystem, mu: &MeasureGrid) -> f64 {
    let geom = mu.geom;
    let h = geom.h();
    let mass = mu.mass();
    let mut xs: Vec<f64> = sys.positions().to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    // breakpoints: cell edges and particles
    let mut pts: Vec<f64> = (0..=geom.n).map(|k| -geom.half_width + k as f64 * h).collect();
    pts.extend(xs.iter().cloned());
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cdf_mu = |x: f64| -> f64 {
        if x <= -geom.half_width {
            return 0.0;
        }
        let t = ((x + geom.half_width) / h).min(geom.n as f64);
        let k = (t.floor() as usize).min(geom.n);
        let full: f64 = mu.values[..k].iter().sum::<f64>() * h;
        let part = if k < geom.n { mu.values[k] * (t - k as f64) * h } else { 0.0 };
        (full + part) / mass
    };
    let mut total = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let mid = 0.5 * (a + b);
        let fn_ = xs.partition_point(|&x| x <= mid) as f64 / n;
        // |linear - const| integrated exactly
        let (da, db) = (cdf_mu(a) - fn_, cdf_mu(b) - fn_);
        total += if da * db >= 0.0 {
            0.5 * (da.abs() + db.abs()) * (b - a)
        } else {
            let z = a + (b - a) * da.abs() / (da.abs() + db.abs());
            0.5 * da.abs() * (z - a) + 0.5 * db.abs() * (b - z)
        };
    }
    // particles outside the box
    for &x in &xs {
        if x < -geom.half_width {
            total += (-geom.half_width - x) / n;
        } else if x > geom.half_width {
            total += (x - geom.half_width) / n;
        }
    }
    total
}

/// Quantile-stratified samples of a grid density: systematic sampling of
/// cells by cumulative mass, uniform within the cell.
pub fn stratified_samples(mu: &MeasureGrid, m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let geom = mu.geom;
    let d = geom.d;
    let total: f64 = mu.values.iter().sum();
    let shift: f64 = rng.gen();
    let mut out = Vec::with_capacity(m * d);
    let mut acc = 0.0;
    let mut c = 0;
    for k in 0..m {
        let target = (k as f64 + shift) / m as f64 * total;
        while c + 1 < geom.len() && acc + mu.values[c] <= target {
            acc += mu.values[c];
            c += 1;
        }
        let (lo, hi) = geom.cell_box(c);
        for a in 0..d {
            out.push(lo[a] + rng.gen::<f64>() * (hi[a] - lo[a]));
        }
    }
    out
}

pub const BL_SAMPLES: usize = 512;
pub const BL_DRAWS: usize = 4;

/// Weak-convergence indicator. In d = 1 the exact 1-Wasserstein distance to
/// the grid density; otherwise the mean capped matching cost against
/// stratified samples, averaged over draws.
pub fn bounded_lipschitz_distance(sys: &ParticleSystem, mu: &MeasureGrid, seed: u64) -> Result<f64> {
    if sys.d() != mu.geom.d {
        return Err(Error::invalid("particle and measure dimensions differ"));
    }
    if sys.d() == 1 {
        return Ok(w1_grid_1d(sys, mu));
    }
    let n = sys.n();
    let m = if n / gcd(n, BL_SAMPLES) * BL_SAMPLES <= 2048 { BL_SAMPLES } else { n };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    for _ in 0..BL_DRAWS {
        let samples = stratified_samples(mu, m, &mut rng);
        acc += empirical_bl_distance(sys.positions(), &samples, sys.d());
    }
    Ok(acc / BL_DRAWS as f64)
}

/// Power-law and Gronwall fits of modulated energies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub beta_hat: f64,
    #[serde(rename = "C1_hat")]
    pub c1_hat: f64,
    #[serde(rename = "C2_hat")]
    pub c2_hat: f64,
    /// Root-mean-square residual of the log-log fit.
    pub residual: f64,
    pub r_squared: f64,
    /// Amount added to each energy before taking logs (0 when all positive).
    pub shift: Vec<f64>,
    pub n_values: Vec<usize>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Least-squares line `y = a + b x`; returns `(a, b, rms, r^2)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(u, v)| (v - a - b * u).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    (a, b, (ss_res / n).sqrt(), r2)
}

/// Fits `H(T) ~ C1 N^beta` across N (median over seeds at the final time)
/// and `H(t) ~ H(0) e^{C2 t}` for the largest N, where `H` is the modulated
/// total energy (`F_N` for first-order flows).
///
/// When some energy is not positive, every value is shifted by
/// `TE_r - F_N = sum g(r_i) + correction`, which makes it nonnegative.
pub fn fit_rate(records: &[DiagnosticsRecord]) -> Result<RateFit> {
    let mut ns: Vec<usize> = records.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 4 {
        return Err(Error::invalid("rate fits need at least 4 distinct N values"));
    }
    let shifted = records.iter().any(|r| !(r.h_n_total > 0.0));
    if shifted && records.iter().any(|r| r.te_r.is_nan()) {
        return Err(Error::invalid(
            "energies are not all positive and TE_r is missing; enable diagnostics.truncated",
        ));
    }
    let value = |r: &DiagnosticsRecord| if shifted { r.h_n_total + r.te_r - r.f_n } else { r.h_n_total };
    let t_end = records.iter().map(|r| r.t).fold(f64::NEG_INFINITY, f64::max);
    let mut xs = vec![];
    let mut ys = vec![];
    let mut shift = vec![];
    for &n in &ns {
        let mut last: Vec<f64> = records
            .iter()
            .filter(|r| r.n == n && (r.t - t_end).abs() <= 1e-9 * t_end.abs().max(1.0))
            .map(value)
            .collect();
        if last.is_empty() {
            return Err(Error::invalid(format!("N = {n} has no record at the final time")));
        }
        let mut sh: Vec<f64> = records
            .iter()
            .filter(|r| r.n == n && (r.t - t_end).abs() <= 1e-9 * t_end.abs().max(1.0))
            .map(|r| if shifted { r.te_r - r.f_n } else { 0.0 })
            .collect();
        let v = median(&mut last);
        if !(v > 0.0) {
            return Err(Error::invalid(format!("nonpositive energy at N = {n} after shifting")));
        }
        xs.push((n as f64).ln());
        ys.push(v.ln());
        shift.push(median(&mut sh));
    }
    let (a, beta, rms, r2) = linear_fit(&xs, &ys);
    // Gronwall rate for the largest N: median series over seeds
    let nmax = *ns.last().unwrap();
    let mut times: Vec<f64> = records.iter().filter(|r| r.n == nmax).map(|r| r.t).collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let series: Vec<(f64, f64)> = times
        .iter()
        .map(|&t| {
            let mut v: Vec<f64> = records
                .iter()
                .filter(|r| r.n == nmax && (r.t - t).abs() < 1e-12)
                .map(value)
                .collect();
            (t, median(&mut v))
        })
        .collect();
    let c2 = gronwall_rate(&series);
    Ok(RateFit {
        beta_hat: beta,
        c1_hat: a.exp(),
        c2_hat: c2,
        residual: rms,
        r_squared: r2,
        shift,
        n_values: ns,
    })
}

/// Least-squares slope through the origin of `log(F(t)/F(t0))` against `t - t0`.
pub fn gronwall_rate(series: &[(f64, f64)]) -> f64 {
    let Some(&(t0, f0)) = series.first() else {
        return f64::NAN;
    };
    let (mut num, mut den) = (0.0, 0.0);
    for &(t, f) in &series[1..] {
        if f > 0.0 && f0 > 0.0 {
            let dt = t - t0;
            num += dt * (f / f0).ln();
            den += dt * dt;
        }
    }
    if den == 0.0 {
        f64::NAN
    } else {
        num / den
    }
}

/// One row of the diagnostics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    #[serde(rename = "F_N")]
    pub f_n: f64,
    #[serde(rename = "F_N_per_N2")]
    pub f_n_per_n2: f64,
    pub kinetic_mod: f64,
    #[serde(rename = "H_N_total")]
    pub h_n_total: f64,
    pub sum_g_r: f64,
    pub min_r: f64,
    #[serde(rename = "TE_r")]
    pub te_r: f64,
    pub bl_dist: f64,
    pub hn_per_n2: f64,
    pub en_per_n: f64,
}

pub const CSV_HEADER: [&str; 13] = [
    "t", "N", "seed", "F_N", "F_N_per_N2", "kinetic_mod", "H_N_total", "sum_g_r", "min_r", "TE_r", "bl_dist", "hn_per_n2", "en_per_n",
];

pub fn write_records<W: Write>(w: W, records: &[DiagnosticsRecord]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in records {
        wr.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    }
    if records.is_empty() {
        wr.write_record(CSV_HEADER).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(r: R, source: &Path) -> Result<Vec<DiagnosticsRecord>> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let headers = rd.headers().map_err(|e| Error::Schema {
        file: source.to_path_buf(),
        line: 1,
        message: e.to_string(),
    })?;
    for col in CSV_HEADER {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Schema {
                file: source.to_path_buf(),
                line: 1,
                message: format!("missing column {col}"),
            });
        }
    }
    let mut out = vec![];
    for rec in rd.deserialize() {
        let rec: DiagnosticsRecord = rec.map_err(|e| Error::Schema {
            file: source.to_path_buf(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_records(path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    read_records(std::fs::File::open(path)?, path)
}

/// Particle velocities from mean-field velocities: used for monokinetic data.
pub fn sample_velocities<U>(sys: &ParticleSystem, u: U) -> Result<Vec<f64>>
where
    U: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut out = Vec::with_capacity(sys.positions().len());
    for i in 0..sys.n() {
        out.extend(u(sys.point(i))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanfield::{GridGeometry, RadialMeasure};

    #[test]
    fn single_particle_in_uniform_interval() {
        let spec = KernelSpec::riesz(1, 0.5).unwrap();
        let mu = RadialMeasure::uniform_ball(spec, vec![0.5], 0.5).unwrap();
        let sys = ParticleSystem::new(1, vec![0.5]).unwrap();
        let f = modulated_energy(&sys, &mu).unwrap();
        assert!((f - (8.0 / 3.0 - 4.0 * 2f64.sqrt())).abs() < 1e-12, "{f}");
    }

    #[test]
    fn truncated_energy_rejects_overlap() {
        let spec = KernelSpec::riesz(3, 1.0).unwrap();
        let mu = RadialMeasure::uniform_ball(spec, vec![0.0; 3], 1.0).unwrap();
        let sys = ParticleSystem::new(3, vec![0.0, 0.0, 0.0, 0.4, 0.0, 0.0]).unwrap();
        assert!(matches!(truncated_energy(&sys, &mu, &[0.2, 0.05]), Err(Error::OutOfRegime(_))));
        let te = truncated_energy(&sys, &mu, &[0.1, 0.1]).unwrap();
        assert!(te >= 0.0);
    }

    #[test]
    fn monokinetic_reductions() {
        let spec = KernelSpec::log(2).unwrap();
        let mu = RadialMeasure::uniform_ball(spec, vec![0.0; 2], 1.0).unwrap();
        let mut sys = ParticleSystem::new(2, vec![0.1, 0.2, -0.3, 0.4]).unwrap();
        let u = |x: &[f64]| -> Result<Vec<f64>> { Ok(vec![x[1], -x[0]]) };
        let v = sample_velocities(&sys, u).unwrap();
        sys.set_velocities(Some(v.clone())).unwrap();
        let f = modulated_energy(&sys, &mu).unwrap();
        assert!((monokinetic_energy(&sys, &mu, u).unwrap() - f).abs() < 1e-12);
        let zero = |_: &[f64]| -> Result<Vec<f64>> { Ok(vec![0.0, 0.0]) };
        let speed2: f64 = v.iter().map(|x| x * x).sum();
        assert!((monokinetic_energy(&sys, &mu, zero).unwrap() - (2.0 * speed2 + f)).abs() < 1e-12);
        // boost both
        let boosted: Vec<f64> = v.iter().enumerate().map(|(k, x)| x + if k % 2 == 0 { 0.3 } else { -0.1 }).collect();
        sys.set_velocities(Some(boosted)).unwrap();
        let ub = |x: &[f64]| -> Result<Vec<f64>> { Ok(vec![x[1] + 0.3, -x[0] - 0.1]) };
        assert!((monokinetic_energy(&sys, &mu, ub).unwrap() - f).abs() < 1e-12);
    }

    #[test]
    fn assignment_is_optimal_on_small_cases() {
        // brute force over permutations of 5
        let n = 5;
        let cost: Vec<f64> = (0..n * n).map(|k| ((k * 37 % 11) as f64).sin().abs()).collect();
        let asg = min_cost_assignment(&cost, n);
        let best = permutations(n)
            .into_iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let got: f64 = asg.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
        assert!((got - best).abs() < 1e-12);
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 1 {
            return vec![vec![0]];
        }
        let mut out = vec![];
        for p in permutations(n - 1) {
            for k in 0..n {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn bl_basics() {
        let pts = [0.3, -0.2];
        assert_eq!(empirical_bl_distance(&pts, &pts, 2), 0.0);
        let geom = GridGeometry::new(1, 64, 1.0).unwrap();
        let mut mu = MeasureGrid::rasterize(geom, 4, |x| if x[0].abs() < 0.5 { 1.0 } else { 0.0 });
        mu.normalize().unwrap();
        // quantile midpoints
        let n = 32;
        let sys = ParticleSystem::new(1, (0..n).map(|k| -0.5 + (k as f64 + 0.5) / n as f64).collect()).unwrap();
        let w = bounded_lipschitz_distance(&sys, &mu, 0).unwrap();
        assert!(w <= geom.h(), "{w}");
    }

    #[test]
    fn fits_recover_synthetic_laws() {
        let mut recs = vec![];
        for n in [64usize, 128, 256, 512] {
            for (k, t) in [0.0f64, 0.25, 0.5].iter().enumerate() {
                let f = 7.0 * (n as f64).powf(1.5) * (2.0 * t).exp();
                recs.push(DiagnosticsRecord {
                    t: *t,
                    n,
                    seed: k as u64,
                    f_n: f,
                    f_n_per_n2: f / (n * n) as f64,
                    kinetic_mod: 0.0,
                    h_n_total: f,
                    sum_g_r: 0.0,
                    min_r: 0.1,
                    te_r: f,
                    bl_dist: 0.0,
                    hn_per_n2: 0.0,
                    en_per_n: 0.0,
                });
            }
        }
        let fit = fit_rate(&recs).unwrap();
        assert!((fit.beta_hat - 1.5).abs() < 1e-6);
        assert!((fit.c2_hat - 2.0).abs() < 1e-6);
        assert!((fit.c1_hat - 7.0 * 1f64.exp()).abs() < 1e-6);
        let mut buf = vec![];
        write_records(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&CSV_HEADER.join(",")));
        assert_eq!(read_records(&buf[..], Path::new("x.csv")).unwrap(), recs);
    }
}

#[cfg(test)]
mod balance_tests {
    use super::*;
    use crate::meanfield::GridGeometry;

    fn disk(n: usize) -> (MeasureGrid, GridGeometry) {
        let geom = GridGeometry::new(2, n, 1.25).unwrap();
        let mut mu = MeasureGrid::rasterize(geom, 4, |x| if x[0] * x[0] + x[1] * x[1] < 0.64 { 1.0 } else { 0.0 });
        mu.normalize().unwrap();
        (mu, geom)
    }

    fn particles(n: usize) -> ParticleSystem {
        let pts: Vec<f64> = (0..n)
            .flat_map(|k| {
                let a = 2.399963 * k as f64;
                let r = 0.8 * ((k as f64 + 0.5) / n as f64).sqrt();
                [r * a.cos(), r * a.sin()]
            })
            .collect();
        ParticleSystem::new(2, pts).unwrap()
    }

    #[test]
    fn balance_closes_for_all_mobilities() {
        let spec = KernelSpec::log(2).unwrap();
        let (mu, geom) = disk(128);
        let sys = particles(8);
        for flow in [FlowSpec::gradient(2), FlowSpec::conservative(2), FlowSpec::mixed(2, 0.7, 0.4).unwrap()] {
            let ev = Evolver::from_flow(geom, spec, &flow, 2.0).unwrap();
            let b = f1_balance_check(&sys, &mu, &flow, &spec, &ev, 1e-4).unwrap();
            eprintln!("{:?} {b:?}", flow.kind());
            assert!(b.relative_error < 1e-2, "{b:?}");
        }
    }
}
