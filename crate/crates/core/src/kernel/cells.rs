//! Exact integrals of g over axis-aligned boxes.
//!
//! `x . grad g = -s g` (Riesz) and `x . grad g = -1` (log) turn a box
//! integral into a sum of face integrals weighted by the face offsets, and
//! those face integrals stay finite even when the box contains the origin.

use super::{KernelSpec, Mode};
use crate::error::{Error, Result};
use crate::quad::{gl, tanh_sinh_split};
use std::f64::consts::FRAC_PI_2;

const FACE_TOL: f64 = 1e-13;

/// Integral of `g(sqrt(a^2 + |t|^2))` over the (d-1)-box `[lo, hi]`.
pub fn face_integral(spec: &KernelSpec, a: f64, lo: &[f64], hi: &[f64]) -> f64 {
    debug_assert_eq!(lo.len(), hi.len());
    match lo.len() {
        0 => spec.g_r(a.abs()),
        1 => segment_integral(spec, a, lo[0], hi[0]),
        2 => {
            let (u0, u1, v0, v1) = (lo[0], hi[0], lo[1], hi[1]);
            corner(spec, a, u1, v1) - corner(spec, a, u0, v1) - corner(spec, a, u1, v0)
                + corner(spec, a, u0, v0)
        }
        _ => panic!("face integrals implemented for d <= 3"),
    }
}

fn segment_integral(spec: &KernelSpec, a: f64, t0: f64, t1: f64) -> f64 {
    if t0 == t1 {
        return 0.0;
    }
    match spec.mode() {
        Mode::Log => {
            let prim = |t: f64| -> f64 {
                if a == 0.0 {
                    if t == 0.0 {
                        0.0
                    } else {
                        -(t * t.abs().ln() - t)
                    }
                } else {
                    -(0.5 * t * (a * a + t * t).ln() - t + a * (t / a).atan())
                }
            };
            prim(t1) - prim(t0)
        }
        Mode::Riesz(s) => {
            if a == 0.0 {
                let prim = |t: f64| t.signum() * t.abs().powf(1.0 - s) / (1.0 - s);
                return prim(t1) - prim(t0);
            }
            let a2 = a * a;
            tanh_sinh_split(t0, t1, &[0.0], FACE_TOL, |t| (a2 + t * t).powf(-0.5 * s))
        }
    }
}

/// Integral over the rectangle with corners (0,0) and (u,v), any signs.
fn corner(spec: &KernelSpec, a: f64, u: f64, v: f64) -> f64 {
    if u == 0.0 || v == 0.0 {
        return 0.0;
    }
    let sign = u.signum() * v.signum();
    let (u, v) = (u.abs(), v.abs());
    let s = match spec.mode() {
        Mode::Riesz(s) => s,
        Mode::Log => panic!("log kernel has no three-dimensional faces"),
    };
    let a2 = a * a;
    // int_0^rho (a^2 + r^2)^{-s/2} r dr
    let radial = |rho: f64| -> f64 {
        if (s - 2.0).abs() < 1e-14 {
            0.5 * ((a2 + rho * rho) / a2).ln()
        } else {
            ((a2 + rho * rho).powf(1.0 - 0.5 * s) - a2.powf(1.0 - 0.5 * s)) / (2.0 - s)
        }
    };
    let split = (v / u).atan();
    let n = 24;
    let t1 = gl(0.0, split, n, |th| radial(u / th.cos()));
    let t2 = gl(split, FRAC_PI_2, n, |th| radial(v / th.sin()));
    sign * (t1 + t2)
}

/// Integral of g over the box `[lo, hi]` (the origin may lie anywhere).
pub fn cell_integral(spec: &KernelSpec, lo: &[f64], hi: &[f64]) -> f64 {
    let d = spec.d();
    assert!(d <= 3 && lo.len() == d && hi.len() == d);
    let mut sum = 0.0;
    let mut flo = Vec::with_capacity(d - 1);
    let mut fhi = Vec::with_capacity(d - 1);
    for k in 0..d {
        flo.clear();
        fhi.clear();
        for m in (0..d).filter(|&m| m != k) {
            flo.push(lo[m]);
            fhi.push(hi[m]);
        }
        for (plane, offset) in [(hi[k], hi[k]), (lo[k], -lo[k])] {
            if offset != 0.0 {
                sum += offset * face_integral(spec, plane, &flo, &fhi);
            }
        }
    }
    let vol: f64 = lo.iter().zip(hi).map(|(l, h)| h - l).product();
    match spec.mode() {
        Mode::Riesz(s) => sum / (d as f64 - s),
        Mode::Log => (sum + vol) / d as f64,
    }
}

/// `int_{[lo,hi]} g(x - y) dy`.
pub fn cell_integral_at(spec: &KernelSpec, x: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let a: Vec<f64> = x.iter().zip(hi).map(|(x, h)| x - h).collect();
    let b: Vec<f64> = x.iter().zip(lo).map(|(x, l)| x - l).collect();
    cell_integral(spec, &a, &b)
}

/// `int_{[lo,hi]} grad g(x - y) dy`, as a boundary integral of g.
///
/// Needs `s < d - 1` when x lies on the closure of a face.
pub fn cell_integral_grad(spec: &KernelSpec, x: &[f64], lo: &[f64], hi: &[f64]) -> Result<Vec<f64>> {
    let d = spec.d();
    assert!(d <= 3 && lo.len() == d && hi.len() == d && x.len() == d);
    let mut out = vec![0.0; d];
    let mut flo = Vec::with_capacity(d - 1);
    let mut fhi = Vec::with_capacity(d - 1);
    for k in 0..d {
        flo.clear();
        fhi.clear();
        for m in (0..d).filter(|&m| m != k) {
            flo.push(x[m] - hi[m]);
            fhi.push(x[m] - lo[m]);
        }
        let near = face_integral(spec, x[k] - lo[k], &flo, &fhi);
        let far = face_integral(spec, x[k] - hi[k], &flo, &fhi);
        out[k] = near - far;
        if !out[k].is_finite() {
            return Err(Error::OutOfRegime(
                "boundary integral diverges; requires s < d - 1".into(),
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{gl_panels, tanh_sinh_split};

    // Brute-force tensor quadrature, split at the origin so each piece has
    // the singularity at a corner.
    fn brute(spec: &KernelSpec, lo: &[f64], hi: &[f64]) -> f64 {
        let d = spec.d();
        let breaks = |k: usize| {
            let mut v = vec![lo[k]];
            if lo[k] < 0.0 && hi[k] > 0.0 {
                v.push(0.0);
            }
            v.push(hi[k]);
            v
        };
        match d {
            1 => tanh_sinh_split(lo[0], hi[0], &[0.0], 1e-13, |x| spec.g_r(x.abs())),
            2 => {
                let bx = breaks(0);
                bx.windows(2)
                    .map(|w| {
                        crate::quad::tanh_sinh(w[0], w[1], 1e-11, |x| {
                            tanh_sinh_split(lo[1], hi[1], &[0.0], 1e-12, |y| spec.g_r2(x * x + y * y))
                        })
                    })
                    .sum()
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn one_dimensional_cells() {
        let k = KernelSpec::riesz(1, 0.5).unwrap();
        // int_{-1}^{2} |x|^{-1/2} = 2 + 2 sqrt 2
        let v = cell_integral(&k, &[-1.0], &[2.0]);
        assert!((v - (2.0 + 2.0 * 2f64.sqrt())).abs() < 1e-13);
        let l = KernelSpec::log(1).unwrap();
        // int_{-1}^{1} -log|x| = 2
        assert!((cell_integral(&l, &[-1.0], &[1.0]) - 2.0).abs() < 1e-13);
    }

    #[test]
    fn two_dimensional_cells_match_brute_force() {
        for spec in [KernelSpec::log(2).unwrap(), KernelSpec::riesz(2, 0.7).unwrap(), KernelSpec::riesz(2, 1.5).unwrap()] {
            for (lo, hi) in [([-0.5, -0.5], [0.5, 0.5]), ([0.5, -0.5], [1.5, 0.5]), ([-0.3, 0.2], [0.9, 1.4]), ([2.0, 3.0], [2.5, 3.25])] {
                let a = cell_integral(&spec, &lo, &hi);
                let b = brute(&spec, &lo, &hi);
                assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{spec:?} {lo:?} {a} {b}");
            }
        }
    }

    #[test]
    fn three_dimensional_origin_cell() {
        // int over [-1/2,1/2]^3 of 1/|x|, compared with nested Gauss-Legendre on
        // the octant [0,1/2]^3 in spherical-like splitting.
        let spec = KernelSpec::riesz(3, 1.0).unwrap();
        let v = cell_integral(&spec, &[-0.5; 3], &[0.5; 3]);
        let oct = gl_panels(0.0, 0.5, 20, 8, |x| {
            gl_panels(0.0, 0.5, 20, 8, |y| {
                gl_panels(0.0, 0.5, 20, 8, |z| {
                    let r = (x * x + y * y + z * z).sqrt();
                    1.0 / r
                })
            })
        });
        assert!((v - 8.0 * oct).abs() < 1e-5 * v, "{v} {}", 8.0 * oct);
        // a far cell is close to volume times midpoint value
        let far = cell_integral(&spec, &[9.5, -0.5, -0.5], &[10.5, 0.5, 0.5]);
        assert!((far - 0.1).abs() < 1e-4);
    }

    #[test]
    fn gradient_matches_finite_difference_of_cell_integral() {
        for spec in [KernelSpec::log(2).unwrap(), KernelSpec::riesz(2, 0.5).unwrap()] {
            let lo = [0.0, 0.0];
            let hi = [0.1, 0.1];
            for x in [[0.03, 0.07], [0.25, -0.1], [0.105, 0.05]] {
                let g = cell_integral_grad(&spec, &x, &lo, &hi).unwrap();
                let h = 1e-5;
                for k in 0..2 {
                    let mut xp = x;
                    let mut xm = x;
                    xp[k] += h;
                    xm[k] -= h;
                    let fd = (cell_integral_at(&spec, &xp, &lo, &hi) - cell_integral_at(&spec, &xm, &lo, &hi)) / (2.0 * h);
                    assert!((fd - g[k]).abs() < 1e-6 * (1.0 + g[k].abs()), "{x:?} {k} {fd} {}", g[k]);
                }
            }
            // on a face the field is continuous
            let on = cell_integral_grad(&spec, &[0.1, 0.05], &lo, &hi).unwrap();
            for dx in [-1e-9, 1e-9] {
                let off = cell_integral_grad(&spec, &[0.1 + dx, 0.05], &lo, &hi).unwrap();
                assert!((off[0] - on[0]).abs() < 1e-3 * on[0].abs(), "{off:?} {on:?}");
            }
        }
    }
}
