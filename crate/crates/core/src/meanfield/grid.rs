//! Cell-centered grids on the cube [-L, L]^d.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Geometry shared by density and velocity grids. Flat indices are
/// row-major with the last axis fastest.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub d: usize,
    pub n: usize,
    #[serde(rename = "L")]
    pub half_width: f64,
}

impl GridGeometry {
    pub fn new(d: usize, n: usize, half_width: f64) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::invalid("grid solver supports d <= 3"));
        }
        if n < 4 || !(half_width > 0.0) {
            return Err(Error::invalid("grid needs n >= 4 and L > 0"));
        }
        Ok(Self { d, n, half_width })
    }

    pub fn h(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.d as i32)
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.d - 1 - axis) as u32)
    }

    pub fn multi_index(&self, mut flat: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        for k in (0..self.d).rev() {
            idx[k] = flat % self.n;
            flat /= self.n;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx[..self.d].iter().fold(0, |acc, &i| acc * self.n + i)
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.h()
    }

    pub fn center(&self, flat: usize) -> Vec<f64> {
        let idx = self.multi_index(flat);
        (0..self.d).map(|k| self.coord(idx[k])).collect()
    }

    /// Cell bounds `(lo, hi)`.
    pub fn cell_box(&self, flat: usize) -> (Vec<f64>, Vec<f64>) {
        let idx = self.multi_index(flat);
        let h = self.h();
        let lo: Vec<f64> = (0..self.d).map(|k| -self.half_width + idx[k] as f64 * h).collect();
        let hi = lo.iter().map(|v| v + h).collect();
        (lo, hi)
    }

    /// Cell containing `x`, if inside the box.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let h = self.h();
        let mut idx = [0; 3];
        for k in 0..self.d {
            let t = ((x[k] + self.half_width) / h).floor();
            if t < 0.0 || t >= self.n as f64 {
                return None;
            }
            idx[k] = t as usize;
        }
        Some(self.flat_index(&idx))
    }

    /// Multilinear interpolation weights for a point inside the hull of cell
    /// centers: `(flat index, weight)` for the 2^d surrounding centers.
    pub fn interp_stencil(&self, x: &[f64]) -> Option<Vec<(usize, f64)>> {
        let h = self.h();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for k in 0..self.d {
            let t = (x[k] + self.half_width) / h - 0.5;
            if !(t >= 0.0 && t <= (self.n - 1) as f64) {
                return None;
            }
            let i = (t.floor() as usize).min(self.n - 2);
            base[k] = i;
            frac[k] = t - i as f64;
        }
        let mut out = Vec::with_capacity(1 << self.d);
        for corner in 0..(1usize << self.d) {
            let mut idx = base;
            let mut w = 1.0;
            for k in 0..self.d {
                if corner >> k & 1 == 1 {
                    idx[k] += 1;
                    w *= frac[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            out.push((self.flat_index(&idx), w));
        }
        Some(out)
    }

    pub fn same_as(&self, other: &GridGeometry) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

/// Cell-averaged density on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureGrid {
    pub geom: GridGeometry,
    pub values: Vec<f64>,
    pub time: f64,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    #[serde(rename = "L")]
    half_width: f64,
    n: usize,
    d: usize,
    time: f64,
    components: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

impl MeasureGrid {
    pub fn zeros(geom: GridGeometry) -> Self {
        Self {
            geom,
            values: vec![0.0; geom.len()],
            time: 0.0,
        }
    }

    /// Averages `density` over each cell with `sub^d` midpoint samples.
    pub fn rasterize<F: Fn(&[f64]) -> f64 + Sync>(geom: GridGeometry, sub: usize, density: F) -> Self {
        let h = geom.h();
        let sub = sub.max(1);
        let offsets: Vec<f64> = (0..sub).map(|q| (q as f64 + 0.5) / sub as f64 * h).collect();
        let count = sub.pow(geom.d as u32);
        let values = crate::reduce::map_rows(geom.len(), |c| {
            let (lo, _) = geom.cell_box(c);
            let mut acc = 0.0;
            let mut p = vec![0.0; geom.d];
            for s in 0..count {
                let mut r = s;
                for k in 0..geom.d {
                    p[k] = lo[k] + offsets[r % sub];
                    r /= sub;
                }
                acc += density(&p);
            }
            acc / count as f64
        });
        Self { geom, values, time: 0.0 }
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.geom.cell_volume()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let m = self.mass();
        if !(m > 0.0) {
            return Err(Error::invalid("cannot normalize a grid with zero mass"));
        }
        for v in &mut self.values {
            *v /= m;
        }
        Ok(())
    }

    pub fn l1_distance(&self, other: &MeasureGrid) -> Result<f64> {
        self.geom.same_as(&other.geom)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.geom.cell_volume())
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Piecewise-constant value at `x` (0 outside the box).
    pub fn value_at(&self, x: &[f64]) -> f64 {
        self.geom.locate(x).map(|c| self.values[c]).unwrap_or(0.0)
    }

    /// Writes `<stem>.bin` (little-endian f64) and `<stem>.json`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        write_binary(stem, &self.values, self.geom, self.time, 1, None)
    }

    /// As [`save`](Self::save), recording `hash` in the sidecar.
    pub fn save_with_hash(&self, stem: &Path, hash: &str) -> Result<()> {
        write_binary(stem, &self.values, self.geom, self.time, 1, Some(hash))
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (geom, time, comps, values) = read_binary(stem)?;
        if comps != 1 {
            return Err(Error::invalid("sidecar describes a vector grid"));
        }
        Ok(Self { geom, values, time })
    }

    /// Spherically binned profile around `center`: rows `(r, mean density)`.
    pub fn radial_profile(&self, center: &[f64], bins: usize) -> Vec<(f64, f64)> {
        let rmax = self.geom.half_width * (self.geom.d as f64).sqrt();
        let dr = rmax / bins as f64;
        let mut sum = vec![0.0; bins];
        let mut cnt = vec![0usize; bins];
        for c in 0..self.geom.len() {
            let x = self.geom.center(c);
            let r = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let b = ((r / dr) as usize).min(bins - 1);
            sum[b] += self.values[c];
            cnt[b] += 1;
        }
        (0..bins)
            .filter(|&b| cnt[b] > 0)
            .map(|b| ((b as f64 + 0.5) * dr, sum[b] / cnt[b] as f64))
            .collect()
    }

    pub fn write_radial_profile_csv<W: Write>(&self, center: &[f64], bins: usize, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["r", "density"]).map_err(io)?;
        for (r, v) in self.radial_profile(center, bins) {
            wr.write_record([format!("{r:e}"), format!("{v:e}")]).map_err(io)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Cell-centered velocity field, `d` components per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityGrid {
    pub geom: GridGeometry,
    pub values: Vec<f64>,
    pub time: f64,
}

impl VelocityGrid {
    pub fn zeros(geom: GridGeometry) -> Self {
        Self {
            geom,
            values: vec![0.0; geom.len() * geom.d],
            time: 0.0,
        }
    }

    pub fn from_fn<F: Fn(&[f64]) -> Vec<f64>>(geom: GridGeometry, f: F) -> Self {
        let mut out = Self::zeros(geom);
        for c in 0..geom.len() {
            let v = f(&geom.center(c));
            out.values[c * geom.d..(c + 1) * geom.d].copy_from_slice(&v);
        }
        out
    }

    pub fn at_cell(&self, c: usize) -> &[f64] {
        &self.values[c * self.geom.d..(c + 1) * self.geom.d]
    }

    /// Multilinear interpolation; nearest cell outside the center hull.
    pub fn sample(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.geom.d;
        let mut out = vec![0.0; d];
        match self.geom.interp_stencil(x) {
            Some(st) => {
                for (c, w) in st {
                    for k in 0..d {
                        out[k] += w * self.values[c * d + k];
                    }
                }
            }
            None => {
                let c = self.geom.locate(x).ok_or(Error::Extrapolation)?;
                out.copy_from_slice(self.at_cell(c));
            }
        }
        Ok(out)
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        write_binary(stem, &self.values, self.geom, self.time, self.geom.d, None)
    }

    pub fn save_with_hash(&self, stem: &Path, hash: &str) -> Result<()> {
        write_binary(stem, &self.values, self.geom, self.time, self.geom.d, Some(hash))
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (geom, time, comps, values) = read_binary(stem)?;
        if comps != geom.d {
            return Err(Error::invalid("sidecar does not describe a velocity grid"));
        }
        Ok(Self { geom, values, time })
    }
}

fn io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn write_binary(stem: &Path, values: &[f64], geom: GridGeometry, time: f64, components: usize, hash: Option<&str>) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(stem.with_extension("bin"), bytes)?;
    let side = Sidecar {
        half_width: geom.half_width,
        n: geom.n,
        d: geom.d,
        time,
        components,
        config_hash: hash.map(str::to_string),
    };
    let json = serde_json::to_string_pretty(&side).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(stem.with_extension("json"), json)?;
    Ok(())
}

fn read_binary(stem: &Path) -> Result<(GridGeometry, f64, usize, Vec<f64>)> {
    let json_path = stem.with_extension("json");
    let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(&json_path)?).map_err(|e| Error::Schema {
        file: json_path.clone(),
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    let geom = GridGeometry::new(side.d, side.n, side.half_width)?;
    let bytes = std::fs::read(stem.with_extension("bin"))?;
    if bytes.len() != geom.len() * side.components * 8 {
        return Err(Error::GridMismatch("binary size does not match sidecar".into()));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((geom, side.time, side.components, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_round_trip() {
        let g = GridGeometry::new(3, 5, 1.0).unwrap();
        for f in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(f)), f);
        }
        assert_eq!(g.stride(0), 25);
        assert_eq!(g.locate(&g.center(37)), Some(37));
        assert_eq!(g.locate(&[1.5, 0.0, 0.0]), None);
    }

    #[test]
    fn interpolation_reproduces_linear_functions() {
        let g = GridGeometry::new(2, 8, 1.0).unwrap();
        let vals: Vec<f64> = (0..g.len()).map(|c| {
            let x = g.center(c);
            2.0 * x[0] - 3.0 * x[1] + 0.5
        }).collect();
        let x = [0.31, -0.52];
        let v: f64 = g.interp_stencil(&x).unwrap().iter().map(|(c, w)| w * vals[*c]).sum();
        assert!((v - (2.0 * 0.31 + 3.0 * 0.52 + 0.5)).abs() < 1e-12);
        assert!(g.interp_stencil(&[0.99, 0.0]).is_none());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let g = GridGeometry::new(2, 4, 2.0).unwrap();
        let mut m = MeasureGrid::rasterize(g, 2, |x| 1.0 + x[0].abs());
        m.time = 0.25;
        let stem = dir.path().join("mu");
        m.save(&stem).unwrap();
        assert_eq!(MeasureGrid::load(&stem).unwrap(), m);
        let side = std::fs::read_to_string(stem.with_extension("json")).unwrap();
        assert!(side.contains("\"L\""));
        let u = VelocityGrid::from_fn(g, |x| vec![x[1], -x[0]]);
        u.save(&dir.path().join("u")).unwrap();
        assert_eq!(VelocityGrid::load(&dir.path().join("u")).unwrap(), u);
        assert!(MeasureGrid::load(&dir.path().join("u")).is_err());
    }
}
