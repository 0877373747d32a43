//! Initial particle placement.
//!
//! Every (N, seed) pair owns a ChaCha8 key; particle `i` draws from stream
//! `i`, so positions do not depend on scheduling or thread count.

use crate::error::{Error, Result};
use crate::meanfield::{MeasureGrid, RadialMeasure};
use crate::particles::ParticleSystem;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use super::config::Sampling;

/// Stream used for draws shared by all particles.
const GLOBAL_STREAM: u64 = u64::MAX;

pub fn cell_rng(n: usize, seed: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&(n as u64).to_le_bytes());
    key[8..16].copy_from_slice(&seed.to_le_bytes());
    key[16..24].copy_from_slice(b"mflab-in");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

/// Density a particle sample is drawn from.
pub enum Source<'a> {
    Radial(&'a RadialMeasure),
    Grid(&'a MeasureGrid),
}

pub fn sample(source: &Source, n: usize, seed: u64, how: Sampling) -> Result<ParticleSystem> {
    if n == 0 {
        return Err(Error::invalid("need at least one particle"));
    }
    let (d, pts) = match source {
        Source::Radial(mu) => (mu.spec().d(), radial(mu, n, seed, how)),
        Source::Grid(mu) => (mu.geom.d, grid(mu, n, seed, how)),
    };
    ParticleSystem::new(d, pts)
}

/// Radius enclosing mass `m`, by bisection on the monotone enclosed mass.
fn radial_quantile(mu: &RadialMeasure, m: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, mu.radius());
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mu.enclosed_mass(mid) < m {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn gaussian_direction(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d)
            .map(|_| {
                // Box-Muller
                let u1: f64 = rng.gen::<f64>().max(1e-300);
                let u2: f64 = rng.gen();
                (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
            })
            .collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Random rotation of R^3 from a uniform unit quaternion.
fn random_rotation3(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let q = gaussian_direction(rng, 4);
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn radial(mu: &RadialMeasure, n: usize, seed: u64, how: Sampling) -> Vec<f64> {
    let d = mu.spec().d();
    let c = mu.center();
    let golden = PI * (3.0 - 5f64.sqrt());
    let mut global = cell_rng(n, seed, GLOBAL_STREAM);
    let phase: f64 = global.gen::<f64>() * 2.0 * PI;
    let rot = if d == 3 { random_rotation3(&mut global) } else { [[0.0; 3]; 3] };
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        let mut rng = cell_rng(n, seed, i as u64);
        let dir: Vec<f64> = match how {
            Sampling::Iid => {
                let r = radial_quantile(mu, rng.gen());
                let dir = gaussian_direction(&mut rng, d);
                dir.into_iter().map(|v| v * r).collect()
            }
            Sampling::Quantized => {
                // jittered equal-mass quantile in the middle half of the slot
                let u = 0.5 + 0.5 * (rng.gen::<f64>() - 0.5);
                let q = (i as f64 + u) / n as f64;
                match d {
                    1 => {
                        let m = (2.0 * q - 1.0).abs();
                        let r = radial_quantile(mu, m);
                        vec![if q < 0.5 { -r } else { r }]
                    }
                    2 => {
                        let r = radial_quantile(mu, q);
                        let a = phase + golden * i as f64;
                        vec![r * a.cos(), r * a.sin()]
                    }
                    _ => {
                        let r = radial_quantile(mu, q);
                        // Fibonacci sphere, randomly rotated
                        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                        let rho = (1.0 - z * z).max(0.0).sqrt();
                        let a = golden * i as f64;
                        let v = [rho * a.cos(), rho * a.sin(), z];
                        (0..3).map(|k| r * (rot[k][0] * v[0] + rot[k][1] * v[1] + rot[k][2] * v[2])).collect()
                    }
                }
            }
        };
        out.extend(dir.iter().zip(c).map(|(x, c)| x + c));
    }
    out
}

fn grid(mu: &MeasureGrid, n: usize, seed: u64, how: Sampling) -> Vec<f64> {
    let geom = mu.geom;
    let d = geom.d;
    let mut cdf = Vec::with_capacity(geom.len());
    let mut acc = 0.0;
    for v in &mu.values {
        acc += v.max(0.0);
        cdf.push(acc);
    }
    let total = acc;
    let mut global = cell_rng(n, seed, GLOBAL_STREAM);
    let shift: f64 = global.gen();
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        let mut rng = cell_rng(n, seed, i as u64);
        let q = match how {
            Sampling::Iid => rng.gen::<f64>(),
            Sampling::Quantized => (i as f64 + shift) / n as f64,
        } * total;
        let c = cdf.partition_point(|&v| v <= q).min(geom.len() - 1);
        let (lo, hi) = geom.cell_box(c);
        for a in 0..d {
            out.push(lo[a] + rng.gen::<f64>() * (hi[a] - lo[a]));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;

    #[test]
    fn streams_are_per_particle() {
        let spec = KernelSpec::log(2).unwrap();
        let mu = RadialMeasure::uniform_ball(spec, vec![0.0, 0.0], 0.5).unwrap();
        let a = sample(&Source::Radial(&mu), 100, 7, Sampling::Iid).unwrap();
        let b = sample(&Source::Radial(&mu), 100, 7, Sampling::Iid).unwrap();
        assert_eq!(a.positions(), b.positions());
        let c = sample(&Source::Radial(&mu), 100, 8, Sampling::Iid).unwrap();
        assert_ne!(a.positions(), c.positions());
        for s in [a, c] {
            for i in 0..s.n() {
                let p = s.point(i);
                assert!(p[0].hypot(p[1]) <= 0.5 + 1e-12);
            }
        }
    }

    #[test]
    fn quantized_radii_follow_mass() {
        let spec = KernelSpec::riesz(3, 1.0).unwrap();
        let mu = RadialMeasure::uniform_ball(spec, vec![0.0; 3], 1.0).unwrap();
        let n = 400;
        let s = sample(&Source::Radial(&mu), n, 1, Sampling::Quantized).unwrap();
        let mut r: Vec<f64> = (0..n).map(|i| s.point(i).iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
        r.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (k, rk) in r.iter().enumerate() {
            let q = (k as f64 + 0.5) / n as f64;
            assert!((rk.powi(3) - q).abs() <= 0.5 / n as f64 + 1e-9);
        }
    }
}
