//! Thin wrappers over the quadrature crates used throughout the library.

use gauss_quad::legendre::GaussLegendre;
use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::f64::consts::FRAC_PI_2;
use std::sync::{Mutex, OnceLock};

type Rule = &'static [(f64, f64)];

/// Gauss–Legendre nodes and weights on [-1, 1], cached per degree.
pub fn gl_rule(n: usize) -> Rule {
    static CACHE: OnceLock<Mutex<HashMap<usize, Rule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("quadrature cache poisoned");
    map.entry(n).or_insert_with(|| {
        let rule = GaussLegendre::new(NonZeroUsize::new(n.max(1)).unwrap());
        Box::leak(rule.as_node_weight_pairs().to_vec().into_boxed_slice())
    })
}

/// Fixed-order Gauss–Legendre on [a, b].
pub fn gl<F: FnMut(f64) -> f64>(a: f64, b: f64, n: usize, mut f: F) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for &(x, w) in gl_rule(n) {
        acc += w * f(mid + half * x);
    }
    acc * half
}

/// Composite Gauss–Legendre with `panels` equal sub-intervals.
pub fn gl_panels<F: FnMut(f64) -> f64>(a: f64, b: f64, n: usize, panels: usize, mut f: F) -> f64 {
    let w = (b - a) / panels as f64;
    (0..panels)
        .map(|p| {
            let lo = a + w * p as f64;
            gl(lo, lo + w, n, &mut f)
        })
        .sum()
}

/// Double-exponential (tanh-sinh) quadrature; tolerates integrable endpoint
/// singularities. Nodes near an endpoint are placed at `a + delta` / `b - delta`
/// with `delta` computed directly, so singular endpoints at 0 keep full
/// relative precision down to `delta ~ 1e-300`.
pub fn tanh_sinh<F: Fn(f64) -> f64>(a: f64, b: f64, tol: f64, f: F) -> f64 {
    if a == b {
        return 0.0;
    }
    let c = 0.5 * (b - a);
    let eval = |t: f64| -> f64 {
        // u = (pi/2) sinh t; node 1 - tanh(u) = 2 / (e^{2u} + 1)
        let u = FRAC_PI_2 * t.sinh();
        let ch = u.cosh();
        let w = FRAC_PI_2 * t.cosh() / (ch * ch);
        let delta = c * 2.0 / ((2.0 * u).exp() + 1.0);
        if t == 0.0 {
            return w * f(a + c);
        }
        if delta == 0.0 || !w.is_finite() || w == 0.0 {
            return 0.0;
        }
        let fl = f(a + delta);
        let fr = f(b - delta);
        let mut acc = 0.0;
        if fl.is_finite() {
            acc += fl;
        }
        if fr.is_finite() {
            acc += fr;
        }
        w * acc
    };
    const T_MAX: f64 = 6.5;
    let mut h = 0.5;
    let mut sum = eval(0.0);
    let mut k = 1;
    while k as f64 * h <= T_MAX {
        sum += eval(k as f64 * h);
        k += 1;
    }
    let mut est = c * h * sum;
    for _level in 0..9 {
        h *= 0.5;
        let mut add = 0.0;
        let mut k = 1;
        while k as f64 * h <= T_MAX {
            add += eval(k as f64 * h);
            k += 2;
        }
        sum += add;
        let next = c * h * sum;
        let diff = (next - est).abs();
        est = next;
        if diff <= tol.max(1e-15 * est.abs()) {
            break;
        }
    }
    est
}

/// tanh-sinh on [a, b] split at interior break points (singularities, kinks).
pub fn tanh_sinh_split<F: Fn(f64) -> f64>(a: f64, b: f64, breaks: &[f64], tol: f64, f: F) -> f64 {
    let mut pts = vec![a];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|&p| p > a && p < b).collect();
    inner.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.extend(inner);
    pts.push(b);
    pts.windows(2).map(|w| tanh_sinh(w[0], w[1], tol, &f)).sum()
}

/// Area of the unit sphere S^{d-1} in R^d.
pub fn unit_sphere_area(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    2.0 * std::f64::consts::PI.powf(h) / statrs::function::gamma::gamma(h)
}

/// Volume of the unit ball in R^d.
pub fn unit_ball_volume(d: usize) -> f64 {
    unit_sphere_area(d) / d as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn gl_integrates_polynomials_exactly() {
        let v = gl(0.0, 2.0, 4, |x| x.powi(7));
        assert!((v - 32.0).abs() < 1e-12);
    }

    #[test]
    fn tanh_sinh_handles_endpoint_singularity() {
        let v = tanh_sinh(0.0, 1.0, 1e-13, |x| x.powf(-0.5));
        assert!((v - 2.0).abs() < 1e-12, "{v}");
        let v = tanh_sinh(0.0, 1.0, 1e-13, |x| x.powf(-0.9));
        assert!((v - 10.0).abs() < 1e-10, "{v}");
        let v = tanh_sinh(-1.0, 0.0, 1e-13, |x| -(x.abs().ln()));
        assert!((v - 1.0).abs() < 1e-12, "{v}");
        let v = tanh_sinh(0.0, 3.0, 1e-13, |x| x.exp());
        assert!((v - (3f64.exp() - 1.0)).abs() < 1e-12, "{v}");
    }

    #[test]
    fn sphere_areas() {
        assert!((unit_sphere_area(1) - 2.0).abs() < 1e-14);
        assert!((unit_sphere_area(2) - 2.0 * PI).abs() < 1e-14);
        assert!((unit_sphere_area(3) - 4.0 * PI).abs() < 1e-13);
        assert!((unit_ball_volume(3) - 4.0 * PI / 3.0).abs() < 1e-13);
    }
}
