//! N-particle state, exact pairwise energies and forces, minimal distances.

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::reduce;
use std::io::{Read, Write};
use std::path::Path;

/// Pairs closer than this multiple of the configuration scale count as collisions.
pub const COLLISION_FACTOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSystem {
    d: usize,
    positions: Vec<f64>,
    velocities: Option<Vec<f64>>,
}

impl ParticleSystem {
    /// `positions` is row-major N x d.
    pub fn new(d: usize, positions: Vec<f64>) -> Result<Self> {
        if d == 0 || !positions.len().is_multiple_of(d) {
            return Err(Error::invalid("position array length is not a multiple of d"));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite coordinate"));
        }
        Ok(Self {
            d,
            positions,
            velocities: None,
        })
    }

    pub fn with_velocities(d: usize, positions: Vec<f64>, velocities: Vec<f64>) -> Result<Self> {
        let mut sys = Self::new(d, positions)?;
        sys.set_velocities(Some(velocities))?;
        Ok(sys)
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let d = points.first().map(|p| p.len()).unwrap_or(1);
        if points.iter().any(|p| p.len() != d) {
            return Err(Error::invalid("points of mixed dimension"));
        }
        Self::new(d, points.concat())
    }

    pub fn set_velocities(&mut self, v: Option<Vec<f64>>) -> Result<()> {
        if let Some(v) = &v {
            if v.len() != self.positions.len() {
                return Err(Error::invalid("velocity array does not match positions"));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid("non-finite velocity"));
            }
        }
        self.velocities = v;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.positions.len() / self.d
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn positions_mut(&mut self) -> &mut [f64] {
        &mut self.positions
    }

    pub fn velocities(&self) -> Option<&[f64]> {
        self.velocities.as_deref()
    }

    pub fn velocities_mut(&mut self) -> Option<&mut [f64]> {
        self.velocities.as_deref_mut()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.positions[i * self.d..(i + 1) * self.d]
    }

    pub fn velocity(&self, i: usize) -> Option<&[f64]> {
        self.velocities.as_ref().map(|v| &v[i * self.d..(i + 1) * self.d])
    }

    pub fn translated(&self, a: &[f64]) -> Self {
        let mut out = self.clone();
        for p in out.positions.chunks_mut(self.d) {
            for (x, s) in p.iter_mut().zip(a) {
                *x += s;
            }
        }
        out
    }

    /// Applies a permutation: particle `perm[i]` of `self` becomes particle `i`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let d = self.d;
        let pick = |src: &[f64]| perm.iter().flat_map(|&p| src[p * d..(p + 1) * d].iter().copied()).collect();
        Self {
            d,
            positions: pick(&self.positions),
            velocities: self.velocities.as_ref().map(|v| pick(v)),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["index".to_string()];
        header.extend((1..=self.d).map(|k| format!("x{k}")));
        if self.velocities.is_some() {
            header.extend((1..=self.d).map(|k| format!("v{k}")));
        }
        wr.write_record(&header).map_err(csv_io)?;
        for i in 0..self.n() {
            let mut row = vec![i.to_string()];
            row.extend(self.point(i).iter().map(|v| format!("{v:e}")));
            if let Some(v) = self.velocity(i) {
                row.extend(v.iter().map(|v| format!("{v:e}")));
            }
            wr.write_record(&row).map_err(csv_io)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the format of [`write_csv`](Self::write_csv); lines starting with `#` are skipped.
    pub fn read_csv<R: Read>(r: R, source: &Path) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let schema = |line: u64, message: String| Error::Schema {
            file: source.to_path_buf(),
            line,
            message,
        };
        let header = rd.headers().map_err(|e| schema(1, e.to_string()))?.clone();
        let xs = header.iter().filter(|h| h.starts_with('x')).count();
        let vs = header.iter().filter(|h| h.starts_with('v')).count();
        if header.get(0) != Some("index") || xs == 0 || (vs != 0 && vs != xs) || header.len() != 1 + xs + vs {
            return Err(schema(1, "expected header index,x1..xd[,v1..vd]".into()));
        }
        let mut pos = Vec::new();
        let mut vel = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(|e| schema(e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let vals: std::result::Result<Vec<f64>, _> = rec.iter().skip(1).map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| schema(line, e.to_string()))?;
            if vals.len() != xs + vs {
                return Err(schema(line, "wrong number of fields".into()));
            }
            pos.extend_from_slice(&vals[..xs]);
            vel.extend_from_slice(&vals[xs..]);
        }
        let mut sys = Self::new(xs, pos)?;
        if vs > 0 {
            sys.set_velocities(Some(vel))?;
        }
        Ok(sys)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// As [`save_csv`](Self::save_csv) after a `# config_hash=...` line.
    pub fn save_csv_with_hash(&self, path: &Path, hash: &str) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "# config_hash={hash}")?;
        self.write_csv(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, path)
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Squared collision threshold for a configuration: `(1e-12 * extent)^2`.
pub fn collision_threshold2(d: usize, pos: &[f64]) -> f64 {
    let mut ext: f64 = 0.0;
    for k in 0..d {
        let (lo, hi) = pos
            .iter()
            .skip(k)
            .step_by(d)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if lo.is_finite() {
            ext = ext.max(hi - lo);
        }
    }
    let scale = if ext > 0.0 { ext } else { 1.0 };
    (COLLISION_FACTOR * scale).powi(2)
}

#[inline]
fn dist2(d: usize, pos: &[f64], i: usize, j: usize) -> f64 {
    let a = &pos[i * d..(i + 1) * d];
    let b = &pos[j * d..(j + 1) * d];
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn collision(i: usize, j: usize) -> Error {
    Error::Collision {
        i: i.min(j),
        j: i.max(j),
    }
}

/// `sum_{i != j} g(x_i - x_j)` over ordered pairs, on a raw position array.
pub fn interaction_energy_raw(d: usize, pos: &[f64], spec: &KernelSpec) -> Result<f64> {
    let n = pos.len() / d;
    let thr = collision_threshold2(d, pos);
    let rows = reduce::map_rows(n, |i| -> Result<f64> {
        let mut acc = 0.0;
        for j in 0..n {
            if j == i {
                continue;
            }
            let r2 = dist2(d, pos, i, j);
            if r2 <= thr {
                return Err(collision(i, j));
            }
            acc += spec.g_r2(r2);
        }
        Ok(acc)
    });
    let rows: Vec<f64> = rows.into_iter().collect::<Result<_>>()?;
    Ok(reduce::sum(&rows))
}

/// Per-particle force `-(2/N) sum_{j != i} grad g(x_i - x_j)` written into `out`.
pub fn pairwise_force_raw(d: usize, pos: &[f64], spec: &KernelSpec, out: &mut [f64]) -> Result<()> {
    let n = pos.len() / d;
    let thr = collision_threshold2(d, pos);
    let scale = -2.0 / n as f64;
    let rows = reduce::map_rows(n, |i| -> Result<Vec<f64>> {
        let mut acc = vec![0.0; d];
        let xi = &pos[i * d..(i + 1) * d];
        for j in 0..n {
            if j == i {
                continue;
            }
            let xj = &pos[j * d..(j + 1) * d];
            let mut r2 = 0.0;
            for k in 0..d {
                let t = xi[k] - xj[k];
                r2 += t * t;
            }
            if r2 <= thr {
                return Err(collision(i, j));
            }
            let c = spec.grad_factor(r2);
            for k in 0..d {
                acc[k] += c * (xi[k] - xj[k]);
            }
        }
        for a in acc.iter_mut() {
            *a *= scale;
        }
        Ok(acc)
    });
    for (i, row) in rows.into_iter().enumerate() {
        out[i * d..(i + 1) * d].copy_from_slice(&row?);
    }
    Ok(())
}

/// Nearest-neighbor distance of every particle (`inf` for N = 1).
pub fn nearest_neighbor_raw(d: usize, pos: &[f64]) -> Vec<f64> {
    let n = pos.len() / d;
    reduce::map_rows(n, |i| {
        let mut best = f64::INFINITY;
        for j in 0..n {
            if j != i {
                best = best.min(dist2(d, pos, i, j));
            }
        }
        best.sqrt()
    })
}

pub fn interaction_energy(sys: &ParticleSystem, spec: &KernelSpec) -> Result<f64> {
    check_dim(sys, spec)?;
    interaction_energy_raw(sys.d, &sys.positions, spec)
}

/// Row i equals `-(1/N) grad_{x_i} H_N`; returned row-major N x d.
pub fn pairwise_force(sys: &ParticleSystem, spec: &KernelSpec) -> Result<Vec<f64>> {
    check_dim(sys, spec)?;
    let mut out = vec![0.0; sys.positions.len()];
    pairwise_force_raw(sys.d, &sys.positions, spec, &mut out)?;
    Ok(out)
}

fn check_dim(sys: &ParticleSystem, spec: &KernelSpec) -> Result<()> {
    if sys.d != spec.d() {
        return Err(Error::invalid(format!(
            "particles live in d = {}, kernel in d = {}",
            sys.d,
            spec.d()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinimalDistances {
    pub r: Vec<f64>,
    /// Set when two particles coincide; the affected radii are 0.
    pub degenerate: bool,
}

/// `r_i = min(|x_i - x_j|/4 over j != i, N^{-1/d})`; `r_1 = 1` for N = 1.
pub fn minimal_distances(sys: &ParticleSystem) -> MinimalDistances {
    let n = sys.n();
    let cap = (n as f64).powf(-1.0 / sys.d as f64);
    let r: Vec<f64> = nearest_neighbor_raw(sys.d, &sys.positions)
        .into_iter()
        .map(|nn| (0.25 * nn).min(cap))
        .collect();
    let degenerate = r.contains(&0.0);
    MinimalDistances { r, degenerate }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_examples() {
        let k = KernelSpec::riesz(3, 1.0).unwrap();
        let sys = ParticleSystem::new(3, vec![0.0, 0.0, 0.0, 2.0, 0.0, 0.0]).unwrap();
        assert!((interaction_energy(&sys, &k).unwrap() - 1.0).abs() < 1e-15);
        let k1 = KernelSpec::riesz(1, 0.5).unwrap();
        let line = ParticleSystem::new(1, vec![0.0, 1.0, 2.0]).unwrap();
        let want = 2.0 * (2.0 + 2f64.powf(-0.5));
        assert!((interaction_energy(&line, &k1).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn force_examples() {
        let k = KernelSpec::riesz(3, 1.0).unwrap();
        let sys = ParticleSystem::new(3, vec![0.0, 0.0, 0.0, 2.0, 0.0, 0.0]).unwrap();
        let f = pairwise_force(&sys, &k).unwrap();
        assert!((f[0] + 0.25).abs() < 1e-15);
        assert_eq!(&f[1..3], &[0.0, 0.0]);
        let one = ParticleSystem::new(3, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(pairwise_force(&one, &k).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn collisions_are_reported() {
        let k = KernelSpec::log(2).unwrap();
        let sys = ParticleSystem::new(2, vec![0.0, 0.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(interaction_energy(&sys, &k), Err(Error::Collision { i: 1, j: 2 })));
        assert!(matches!(pairwise_force(&sys, &k), Err(Error::Collision { i: 1, j: 2 })));
        let md = minimal_distances(&sys);
        assert!(md.degenerate);
        assert_eq!(md.r[1], 0.0);
    }

    #[test]
    fn minimal_distance_examples() {
        let sys = ParticleSystem::new(1, vec![0.0, 1.0, 3.0]).unwrap();
        let md = minimal_distances(&sys);
        assert_eq!(md.r, vec![0.25, 0.25, 1.0 / 3.0]);
        assert!(!md.degenerate);
        let one = ParticleSystem::new(2, vec![0.3, 0.4]).unwrap();
        assert_eq!(minimal_distances(&one).r, vec![1.0]);
    }

    #[test]
    fn csv_round_trip() {
        let sys = ParticleSystem::with_velocities(2, vec![0.1, 0.2, -0.3, 0.4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut buf = Vec::new();
        sys.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("index,x1,x2,v1,v2\n"));
        let back = ParticleSystem::read_csv(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back, sys);
    }

    #[test]
    fn csv_schema_error_has_line() {
        let text = "index,x1\n0,0.5\n1,abc\n";
        match ParticleSystem::read_csv(text.as_bytes(), Path::new("f.csv")) {
            Err(Error::Schema { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
