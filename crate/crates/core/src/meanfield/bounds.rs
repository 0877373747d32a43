//! Regularity reports for reference densities and PDE residuals of exact families.

use super::exact::ExactSolution;
use super::fft::GridField;
use super::radial::RadialMeasure;
use super::MeanField;
use crate::error::Result;
use serde::Serialize;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct FieldBounds {
    pub sup_grad: f64,
    /// Largest spectral norm of the Hessian of the potential.
    pub sup_hessian: f64,
    pub sup_density: f64,
    pub holder_exponent: f64,
    pub holder_seminorm: f64,
}

fn spectral_norm_sym(m: &[f64], d: usize) -> f64 {
    // symmetrize, then power iteration on M^2
    let s: Vec<f64> = (0..d * d).map(|k| 0.5 * (m[k] + m[(k % d) * d + k / d])).collect();
    match d {
        1 => s[0].abs(),
        2 => {
            let tr = s[0] + s[3];
            let det = s[0] * s[3] - s[1] * s[2];
            let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
            (0.5 * tr + disc).abs().max((0.5 * tr - disc).abs())
        }
        _ => {
            let mut v = vec![1.0, 0.7, 0.3];
            let mut lam = 0.0;
            for _ in 0..200 {
                let w: Vec<f64> = (0..d).map(|i| (0..d).map(|j| s[i * d + j] * v[j]).sum()).collect();
                let nrm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                if nrm == 0.0 {
                    return 0.0;
                }
                lam = nrm;
                v = w.into_iter().map(|x| x / nrm).collect();
            }
            lam
        }
    }
}

/// Finite-difference bounds of a grid field.
pub fn field_bounds(field: &GridField, sigma: f64) -> FieldBounds {
    let geom = field.geometry();
    let d = geom.d;
    let n = geom.n;
    let h = geom.h();
    let grad = field.gradient_at_centers();
    let mu = field.measure();
    let mut out = FieldBounds {
        holder_exponent: sigma,
        sup_density: mu.max(),
        ..Default::default()
    };
    for c in 0..geom.len() {
        let g = &grad[c * d..(c + 1) * d];
        out.sup_grad = out.sup_grad.max(g.iter().map(|v| v * v).sum::<f64>().sqrt());
        let idx = geom.multi_index(c);
        if (0..d).any(|a| idx[a] == 0 || idx[a] + 1 == n) {
            continue;
        }
        let mut hess = vec![0.0; d * d];
        for b in 0..d {
            let s = geom.stride(b);
            for a in 0..d {
                hess[a * d + b] = (grad[(c + s) * d + a] - grad[(c - s) * d + a]) / (2.0 * h);
            }
        }
        out.sup_hessian = out.sup_hessian.max(spectral_norm_sym(&hess, d));
        let mut shift = 1;
        while shift < n {
            for a in 0..d {
                if idx[a] + shift < n {
                    let diff = (mu.values[c + shift * geom.stride(a)] - mu.values[c]).abs();
                    out.holder_seminorm = out.holder_seminorm.max(diff / (shift as f64 * h).powf(sigma));
                }
            }
            shift *= 2;
        }
    }
    out
}

/// Bounds of an exact radial density from sampled radial derivatives on `[0, 2R]`.
pub fn radial_field_bounds(mu: &RadialMeasure, samples: usize) -> Result<FieldBounds> {
    let r_max = 2.0 * mu.radius();
    let mut out = FieldBounds {
        sup_density: mu.sup_density(),
        ..Default::default()
    };
    let step = r_max / samples as f64;
    for k in 1..=samples {
        let rho = k as f64 * step;
        let g = mu.potential_dr(rho)?;
        out.sup_grad = out.sup_grad.max(g.abs());
        let e = 1e-4 * mu.radius();
        let g2 = (mu.potential_dr(rho + e)? - mu.potential_dr((rho - e).max(0.0))?) / (rho + e - (rho - e).max(0.0));
        out.sup_hessian = out.sup_hessian.max(g2.abs()).max((g / rho).abs());
    }
    // the boundary radius itself
    out.sup_grad = out.sup_grad.max(mu.potential_dr(mu.radius())?.abs());
    Ok(out)
}

/// Largest residual of `d_t mu = kappa div(mu grad h)` at interior
/// collocation points, by centered differences with spacing `delta` in space
/// and time, relative to the largest `|d_t mu|`.
pub fn pde_residual(sol: &ExactSolution, t: f64, delta: f64) -> Result<f64> {
    let d = sol.spec().d();
    let kappa = sol.coupling();
    let before = sol.at((t - delta).max(0.0))?;
    let after = sol.at(t + delta)?;
    let dt = t + delta - (t - delta).max(0.0);
    let now = sol.at(t)?;
    let r = now.radius();
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for frac in [0.0, 0.2, 0.45, 0.7] {
        for dir in 0..d.min(2) {
            let mut x = vec![0.0; d];
            x[0] = frac * r * if dir == 0 { 1.0 } else { 0.6 };
            if d > 1 && dir == 1 {
                x[1] = frac * r * 0.8;
            }
            let dmu = (after.density(&x) - before.density(&x)) / dt;
            let mut div = 0.0;
            for a in 0..d {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[a] += 0.5 * delta;
                xm[a] -= 0.5 * delta;
                let fp = now.density(&xp) * now.grad_potential(&xp)?[a];
                let fm = now.density(&xm) * now.grad_potential(&xm)?[a];
                div += (fp - fm) / delta;
            }
            worst = worst.max((dmu - kappa * div).abs());
            scale = scale.max(dmu.abs());
        }
    }
    Ok(worst / scale.max(f64::MIN_POSITIVE))
}
