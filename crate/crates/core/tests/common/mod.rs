//! Quadrature oracles shared by the integration tests.
//!
//! Deliberately independent of `mflab::quad`: singular endpoints are removed by
//! a power substitution and the rest is dyadic Gauss-Legendre.

#![allow(dead_code)]

pub mod sweeps;

use gauss_quad::legendre::GaussLegendre;
use std::num::NonZeroUsize;
use std::sync::OnceLock;

fn rule() -> &'static [(f64, f64)] {
    static R: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    R.get_or_init(|| {
        GaussLegendre::new(NonZeroUsize::new(16).unwrap())
            .as_node_weight_pairs()
            .to_vec()
    })
}

pub fn gl<F: FnMut(f64) -> f64>(a: f64, b: f64, mut f: F) -> f64 {
    let (h, m) = (0.5 * (b - a), 0.5 * (a + b));
    rule().iter().map(|&(x, w)| w * f(m + h * x)).sum::<f64>() * h
}

/// Dyadic panels accumulating toward `a`.
pub fn dyadic<F: FnMut(f64) -> f64>(a: f64, b: f64, mut f: F) -> f64 {
    let mut acc = 0.0;
    let mut hi = b;
    for _ in 0..60 {
        let lo = a + 0.5 * (hi - a);
        acc += gl(lo, hi, &mut f);
        hi = lo;
    }
    acc
}

/// `int_a^b f` for `f` with an integrable power singularity at `a`, via
/// `x = a + (b - a) t^q`.
pub fn endpoint<F: FnMut(f64) -> f64>(a: f64, b: f64, q: f64, mut f: F) -> f64 {
    let w = b - a;
    dyadic(0.0, 1.0, |t| {
        let tq1 = t.powf(q - 1.0);
        let x = a + w * tq1 * t;
        if tq1 == 0.0 || x == a {
            return 0.0;
        }
        f(x) * w * q * tq1
    })
}

/// `int_a^b f` with possible singularities at both ends.
pub fn both_ends<F: Fn(f64) -> f64>(a: f64, b: f64, q: f64, f: F) -> f64 {
    let m = 0.5 * (a + b);
    endpoint(a, m, q, &f) - endpoint(b, m, q, &f)
}

/// Periodic trapezoid rule on `[0, 2 pi)`.
pub fn periodic<F: FnMut(f64) -> f64>(m: usize, mut f: F) -> f64 {
    let h = 2.0 * std::f64::consts::PI / m as f64;
    (0..m).map(|k| f(h * k as f64)).sum::<f64>() * h
}

/// Area of the unit sphere in `R^m`, by the recursion over polar angles.
pub fn sphere_area(m: usize) -> f64 {
    match m {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        _ => sphere_area(m - 1) * gl(0.0, std::f64::consts::PI, |t| t.sin().powi(m as i32 - 2)),
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}
