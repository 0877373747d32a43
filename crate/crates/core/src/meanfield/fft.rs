//! Free-space potentials of grid densities by zero-padded FFT convolution.

use super::grid::{GridGeometry, MeasureGrid};
use super::{box_gl, MeanField};
use crate::error::{Error, Result};
use crate::kernel::{cell_integral_at, cell_integral_grad, KernelSpec};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Cells within this many widths (sup norm) use exact cell integrals.
const NEAR_CELLS: i64 = 4;

pub struct PotentialSolver {
    geom: GridGeometry,
    spec: KernelSpec,
    m: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    kernel_hat: Vec<Complex64>,
    grad_hat: Vec<Vec<Complex64>>,
}

impl std::fmt::Debug for PotentialSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PotentialSolver").field("geom", &self.geom).field("spec", &self.spec).finish()
    }
}

fn padded_len(d: usize, m: usize) -> usize {
    m.pow(d as u32)
}

impl PotentialSolver {
    pub fn new(geom: GridGeometry, spec: KernelSpec) -> Result<Self> {
        if geom.d != spec.d() {
            return Err(Error::GridMismatch("grid and kernel dimensions differ".into()));
        }
        let d = geom.d;
        let n = geom.n;
        let m = 2 * n;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(m);
        let inv = planner.plan_fft_inverse(m);
        let h = geom.h();
        let len = padded_len(d, m);
        let offsets: Vec<[i64; 3]> = (0..len)
            .map(|q| {
                let mut o = [0i64; 3];
                let mut r = q;
                for k in (0..d).rev() {
                    let i = (r % m) as i64;
                    r /= m;
                    o[k] = if i < n as i64 { i } else { i - m as i64 };
                }
                o
            })
            .collect();
        let entries: Vec<(f64, Vec<f64>)> = crate::reduce::map_rows(len, |q| {
            let o = offsets[q];
            if (0..d).any(|k| o[k] == n as i64 || o[k] == -(n as i64)) {
                return (0.0, vec![0.0; d]);
            }
            let x: Vec<f64> = (0..d).map(|k| o[k] as f64 * h).collect();
            let near = (0..d).all(|k| o[k].abs() <= NEAR_CELLS);
            let lo = vec![-0.5 * h; d];
            let hi = vec![0.5 * h; d];
            if near {
                let v = cell_integral_at(&spec, &x, &lo, &hi);
                let g = cell_integral_grad(&spec, &x, &lo, &hi).unwrap_or_else(|_| vec![f64::NAN; d]);
                (v, g)
            } else {
                let blo: Vec<f64> = x.iter().map(|c| c - 0.5 * h).collect();
                let bhi: Vec<f64> = x.iter().map(|c| c + 0.5 * h).collect();
                let v = box_gl(&blo, &bhi, 3, |z| spec.g_r2(crate::kernel::norm2(z)));
                let g = (0..d)
                    .map(|k| box_gl(&blo, &bhi, 3, |z| spec.grad_factor(crate::kernel::norm2(z)) * z[k]))
                    .collect();
                (v, g)
            }
        });
        if entries.iter().any(|(v, g)| !v.is_finite() || g.iter().any(|c| !c.is_finite())) {
            return Err(Error::OutOfRegime("kernel cell integrals are not finite".into()));
        }
        let mut solver = Self {
            geom,
            spec,
            m,
            fwd,
            inv,
            kernel_hat: entries.iter().map(|(v, _)| Complex64::new(*v, 0.0)).collect(),
            grad_hat: (0..d)
                .map(|k| entries.iter().map(|(_, g)| Complex64::new(g[k], 0.0)).collect())
                .collect(),
        };
        let mut kh = std::mem::take(&mut solver.kernel_hat);
        solver.transform(&mut kh, false);
        solver.kernel_hat = kh;
        for k in 0..d {
            let mut gh = std::mem::take(&mut solver.grad_hat[k]);
            solver.transform(&mut gh, false);
            solver.grad_hat[k] = gh;
        }
        Ok(solver)
    }

    pub fn geometry(&self) -> GridGeometry {
        self.geom
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let d = self.geom.d;
        let m = self.m;
        let plan = if inverse { &self.inv } else { &self.fwd };
        let mut line = vec![Complex64::new(0.0, 0.0); m];
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for axis in 0..d {
            let stride = m.pow((d - 1 - axis) as u32);
            let total = data.len();
            for start in 0..total {
                // start must have index 0 along `axis`
                if !(start / stride).is_multiple_of(m) {
                    continue;
                }
                for i in 0..m {
                    line[i] = data[start + i * stride];
                }
                plan.process_with_scratch(&mut line, &mut scratch);
                for i in 0..m {
                    data[start + i * stride] = line[i];
                }
            }
        }
        if inverse {
            let scale = 1.0 / data.len() as f64;
            for v in data.iter_mut() {
                *v *= scale;
            }
        }
    }

    fn pad(&self, values: &[f64]) -> Vec<Complex64> {
        let d = self.geom.d;
        let mut out = vec![Complex64::new(0.0, 0.0); padded_len(d, self.m)];
        for (c, v) in values.iter().enumerate() {
            let idx = self.geom.multi_index(c);
            let q = (0..d).fold(0, |acc, k| acc * self.m + idx[k]);
            out[q] = Complex64::new(*v, 0.0);
        }
        out
    }

    fn convolve(&self, rho_hat: &[Complex64], k_hat: &[Complex64]) -> Vec<f64> {
        let mut prod: Vec<Complex64> = rho_hat.iter().zip(k_hat).map(|(a, b)| a * b).collect();
        self.transform(&mut prod, true);
        let d = self.geom.d;
        (0..self.geom.len())
            .map(|c| {
                let idx = self.geom.multi_index(c);
                let q = (0..d).fold(0, |acc, k| acc * self.m + idx[k]);
                prod[q].re
            })
            .collect()
    }

    /// Potential at cell centers.
    pub fn potential(&self, mu: &MeasureGrid) -> Result<Vec<f64>> {
        self.geom.same_as(&mu.geom)?;
        let mut rho = self.pad(&mu.values);
        self.transform(&mut rho, false);
        Ok(self.convolve(&rho, &self.kernel_hat))
    }

    /// Gradient of the potential at cell centers, `d` components per cell.
    pub fn gradient(&self, mu: &MeasureGrid) -> Result<Vec<f64>> {
        self.geom.same_as(&mu.geom)?;
        let mut rho = self.pad(&mu.values);
        self.transform(&mut rho, false);
        Ok(self.gradient_from_hat(&rho))
    }

    fn gradient_from_hat(&self, rho: &[Complex64]) -> Vec<f64> {
        let d = self.geom.d;
        let comps: Vec<Vec<f64>> = (0..d).map(|k| self.convolve(rho, &self.grad_hat[k])).collect();
        let mut out = vec![0.0; self.geom.len() * d];
        for c in 0..self.geom.len() {
            for k in 0..d {
                out[c * d + k] = comps[k][c];
            }
        }
        out
    }

    pub fn field(&self, mu: &MeasureGrid) -> Result<GridField> {
        self.geom.same_as(&mu.geom)?;
        let mut rho = self.pad(&mu.values);
        self.transform(&mut rho, false);
        let h = self.convolve(&rho, &self.kernel_hat);
        let grad = self.gradient_from_hat(&rho);
        let vol = self.geom.cell_volume();
        let self_energy = mu.values.iter().zip(&h).map(|(m, p)| m * p).sum::<f64>() * vol;
        Ok(GridField {
            spec: self.spec,
            mu: mu.clone(),
            h,
            grad,
            self_energy,
        })
    }
}

/// A grid density with its potential and gradient at cell centers.
#[derive(Clone, Debug)]
pub struct GridField {
    spec: KernelSpec,
    mu: MeasureGrid,
    h: Vec<f64>,
    grad: Vec<f64>,
    self_energy: f64,
}

impl GridField {
    pub fn measure(&self) -> &MeasureGrid {
        &self.mu
    }

    pub fn geometry(&self) -> GridGeometry {
        self.mu.geom
    }

    pub fn potential_at_centers(&self) -> &[f64] {
        &self.h
    }

    pub fn gradient_at_centers(&self) -> &[f64] {
        &self.grad
    }

    fn check_range(&self, x: &[f64]) -> Result<()> {
        let l = self.mu.geom.half_width;
        if x.len() != self.mu.geom.d || x.iter().any(|v| !(v.abs() <= 2.0 * l)) {
            return Err(Error::Extrapolation);
        }
        Ok(())
    }

    /// Near cells exactly, far cells by 2-point Gauss-Legendre.
    pub fn potential_direct(&self, x: &[f64]) -> Result<f64> {
        self.check_range(x)?;
        let geom = self.mu.geom;
        let hw = 2.5 * geom.h();
        let spec = self.spec;
        let terms = crate::reduce::map_rows(geom.len(), |c| {
            let m = self.mu.values[c];
            if m == 0.0 {
                return 0.0;
            }
            let (lo, hi) = geom.cell_box(c);
            let near = (0..geom.d).all(|k| (x[k] - 0.5 * (lo[k] + hi[k])).abs() <= hw);
            m * if near {
                cell_integral_at(&spec, x, &lo, &hi)
            } else {
                box_gl(&lo, &hi, 2, |y| {
                    let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                    spec.g_r2(r2)
                })
            }
        });
        Ok(crate::reduce::sum(&terms))
    }

    /// `int_cell grad g(x - y) dy` for every cell, `d` entries per cell; near
    /// cells exactly, far cells by 2-point Gauss-Legendre.
    pub fn cell_gradient_integrals(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_range(x)?;
        let geom = self.mu.geom;
        let d = geom.d;
        let hw = 2.5 * geom.h();
        let spec = self.spec;
        let rows: Vec<Result<Vec<f64>>> = crate::reduce::map_rows(geom.len(), |c| {
            let (lo, hi) = geom.cell_box(c);
            let near = (0..d).all(|k| (x[k] - 0.5 * (lo[k] + hi[k])).abs() <= hw);
            if near {
                cell_integral_grad(&spec, x, &lo, &hi)
            } else {
                Ok((0..d)
                    .map(|k| {
                        box_gl(&lo, &hi, 2, |y| {
                            let z: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
                            spec.grad_factor(crate::kernel::norm2(&z)) * z[k]
                        })
                    })
                    .collect())
            }
        });
        let mut out = Vec::with_capacity(geom.len() * d);
        for r in rows {
            out.extend(r?);
        }
        Ok(out)
    }

    pub fn grad_direct(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.mu.geom.d;
        let rows = self.cell_gradient_integrals(x)?;
        let mut out = vec![0.0; d];
        for k in 0..d {
            let col: Vec<f64> = (0..self.mu.geom.len()).map(|c| self.mu.values[c] * rows[c * d + k]).collect();
            out[k] = crate::reduce::sum(&col);
        }
        Ok(out)
    }
}

impl MeanField for GridField {
    fn dim(&self) -> usize {
        self.mu.geom.d
    }

    fn kernel(&self) -> &KernelSpec {
        &self.spec
    }

    fn density(&self, x: &[f64]) -> f64 {
        self.mu.value_at(x)
    }

    fn potential(&self, x: &[f64]) -> Result<f64> {
        self.check_range(x)?;
        match self.mu.geom.interp_stencil(x) {
            Some(st) => Ok(st.iter().map(|(c, w)| w * self.h[*c]).sum()),
            None => self.potential_direct(x),
        }
    }

    fn grad_potential(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_range(x)?;
        let d = self.mu.geom.d;
        match self.mu.geom.interp_stencil(x) {
            Some(st) => {
                let mut out = vec![0.0; d];
                for (c, w) in st {
                    for k in 0..d {
                        out[k] += w * self.grad[c * d + k];
                    }
                }
                Ok(out)
            }
            None => self.grad_direct(x),
        }
    }

    fn self_energy(&self) -> Result<f64> {
        Ok(self.self_energy)
    }

    fn sup_density(&self) -> f64 {
        self.mu.max()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanfield::RadialMeasure;

    #[test]
    fn matches_direct_summation() {
        let spec = KernelSpec::log(2).unwrap();
        let geom = GridGeometry::new(2, 16, 1.0).unwrap();
        let mut mu = MeasureGrid::rasterize(geom, 2, |x| (1.0 - x[0] * x[0] - x[1] * x[1]).max(0.0) + 0.1 * x[0].max(0.0));
        mu.normalize().unwrap();
        let solver = PotentialSolver::new(geom, spec).unwrap();
        let field = solver.field(&mu).unwrap();
        for c in [0, 37, 120, 255] {
            let x = geom.center(c);
            // exact cell integrals for every cell
            let mut h = 0.0;
            let mut g = [0.0; 2];
            for j in 0..geom.len() {
                let (lo, hi) = geom.cell_box(j);
                h += mu.values[j] * cell_integral_at(&spec, &x, &lo, &hi);
                let gg = cell_integral_grad(&spec, &x, &lo, &hi).unwrap();
                g[0] += mu.values[j] * gg[0];
                g[1] += mu.values[j] * gg[1];
            }
            assert!((field.potential_at_centers()[c] - h).abs() < 1e-4, "{c}");
            assert!((field.gradient_at_centers()[2 * c] - g[0]).abs() < 1e-3);
            assert!((field.potential_direct(&x).unwrap() - h).abs() < 1e-4);
        }
    }

    #[test]
    fn converges_to_uniform_ball_potential() {
        let spec = KernelSpec::riesz(3, 1.0).unwrap();
        let ball = RadialMeasure::uniform_ball(spec, vec![0.0; 3], 1.0).unwrap();
        let mut errs = vec![];
        for n in [16, 32] {
            let geom = GridGeometry::new(3, n, 1.25).unwrap();
            let mut mu = MeasureGrid::rasterize(geom, 4, |x| ball.density(x));
            mu.normalize().unwrap();
            let f = PotentialSolver::new(geom, spec).unwrap().field(&mu).unwrap();
            let x = [0.3, -0.2, 0.1];
            errs.push((f.potential(&x).unwrap() - ball.potential(&x).unwrap()).abs());
        }
        assert!(errs[1] < 0.6 * errs[0] && errs[1] < 5e-3, "{errs:?}");
    }

    #[test]
    fn outside_padded_box_is_an_error() {
        let spec = KernelSpec::log(2).unwrap();
        let geom = GridGeometry::new(2, 8, 1.0).unwrap();
        let mu = MeasureGrid::rasterize(geom, 1, |_| 0.25);
        let f = PotentialSolver::new(geom, spec).unwrap().field(&mu).unwrap();
        assert!(matches!(f.potential(&[2.5, 0.0]), Err(Error::Extrapolation)));
        assert!(f.potential(&[1.5, 0.0]).is_ok());
    }
}
