//! Uniform periodic grids, Fourier differentiation, weighted norms and the
//! nonlocal Hartree term.

mod convolution;
pub mod io;
mod kernel;

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub use convolution::{hartree_convolution, homogeneous_cell_weight, Convolver};
pub use kernel::{taylor_kernel_coefficients, BuiltinKernel, KernelJet, KernelSpec, SmoothKernel, SmoothShape};

pub const DEFAULT_POINTS: usize = 512;
pub const DEFAULT_HALF_WIDTH: f64 = 12.0;

/// Uniform grid on `[-L, L)` with `n` points, `n` a power of two, `n >= 16`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid1D {
    n: usize,
    half_width: f64,
}

impl Default for Grid1D {
    fn default() -> Self {
        Self {
            n: DEFAULT_POINTS,
            half_width: DEFAULT_HALF_WIDTH,
        }
    }
}

impl Grid1D {
    pub fn new(n: usize, half_width: f64) -> Result<Self> {
        if n < 16 || !n.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "grid size must be a power of two >= 16, got {n}"
            )));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "half width must be positive, got {half_width}"
            )));
        }
        Ok(Self { n, half_width })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn point(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.spacing()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.point(j)).collect()
    }

    /// Angular wavenumber of DFT bin `j` in standard ordering.
    pub fn wavenumber(&self, j: usize) -> f64 {
        let dk = std::f64::consts::PI / self.half_width;
        if j < self.n / 2 {
            j as f64 * dk
        } else {
            (j as f64 - self.n as f64) * dk
        }
    }

    pub fn wavenumbers(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.wavenumber(j)).collect()
    }
}

/// Complex samples of a function on a [`Grid1D`].
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid1D,
    values: Vec<Complex64>,
}

impl Field {
    pub fn new(grid: Grid1D, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Mismatch(format!(
                "field has {} values, grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::InvalidArgument("field values must be finite".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid1D) -> Self {
        Self {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> Complex64) -> Self {
        Self {
            grid,
            values: (0..grid.len()).map(|j| f(grid.point(j))).collect(),
        }
    }

    pub fn from_real_fn(grid: Grid1D, f: impl Fn(f64) -> f64) -> Self {
        Self::from_fn(grid, |y| Complex64::new(f(y), 0.0))
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn abs2(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }

    /// `h * sum |f|^2`
    pub fn mass(&self) -> f64 {
        self.grid.spacing() * self.values.iter().map(|v| v.norm_sqr()).sum::<f64>()
    }

    pub fn l2(&self) -> f64 {
        self.mass().sqrt()
    }

    /// First moment `int y |f|^2 dy`.
    pub fn first_moment(&self) -> f64 {
        let h = self.grid.spacing();
        self.values
            .iter()
            .enumerate()
            .map(|(j, v)| self.grid.point(j) * v.norm_sqr())
            .sum::<f64>()
            * h
    }

    /// Second moment `int y^2 |f|^2 dy`.
    pub fn second_moment(&self) -> f64 {
        let h = self.grid.spacing();
        self.values
            .iter()
            .enumerate()
            .map(|(j, v)| self.grid.point(j).powi(2) * v.norm_sqr())
            .sum::<f64>()
            * h
    }

    /// Largest modulus among the `k` points nearest each boundary.
    pub fn edge_amplitude(&self, k: usize) -> f64 {
        let n = self.values.len();
        let k = k.min(n / 2);
        self.values[..k]
            .iter()
            .chain(&self.values[n - k..])
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn scale(&mut self, c: Complex64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.check_same_grid(other)?;
        Ok(Field {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.check_same_grid(other)?;
        Ok(Field {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        })
    }

    /// `self * y`
    pub fn times_position(&self) -> Field {
        Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .enumerate()
                .map(|(j, v)| v * self.grid.point(j))
                .collect(),
        }
    }

    pub fn check_same_grid(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::Mismatch(format!(
                "grids differ: {:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        Ok(())
    }

    /// Linear interpolation between two snapshots, `s` in [0, 1].
    pub fn lerp(&self, other: &Field, s: f64) -> Result<Field> {
        self.check_same_grid(other)?;
        Ok(Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * (1.0 - s) + b * s)
                .collect(),
        })
    }
}

/// Forward/inverse DFT plans for one grid size. Plans are immutable and may
/// be shared between threads; scratch buffers are per call.
#[derive(Clone)]
pub struct SpectralOps {
    grid: Grid1D,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    wavenumbers: Vec<f64>,
}

impl SpectralOps {
    pub fn new(grid: Grid1D) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            grid,
            forward: planner.plan_fft_forward(grid.len()),
            inverse: planner.plan_fft_inverse(grid.len()),
            wavenumbers: grid.wavenumbers(),
        }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    /// Unnormalised forward DFT in place.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.forward.process(buf);
    }

    /// Inverse DFT in place, including the `1/n` factor.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.inverse.process(buf);
        let s = 1.0 / self.grid.len() as f64;
        for v in buf.iter_mut() {
            *v *= s;
        }
    }

    /// `d^order f / dy^order` for band-limited periodic data. The Nyquist
    /// mode is dropped for odd orders.
    pub fn derivative(&self, f: &Field, order: u32) -> Field {
        if order == 0 {
            return f.clone();
        }
        let mut buf = f.values.clone();
        self.forward(&mut buf);
        let n = self.grid.len();
        let i = Complex64::new(0.0, 1.0);
        for (j, v) in buf.iter_mut().enumerate() {
            if order % 2 == 1 && j == n / 2 {
                *v = Complex64::new(0.0, 0.0);
                continue;
            }
            *v *= (i * self.wavenumbers[j]).powu(order);
        }
        self.inverse(&mut buf);
        Field {
            grid: self.grid,
            values: buf,
        }
    }

    /// `sum_k |f_hat_k|^2` with the unitary normalisation, so that it equals
    /// the discrete `h * sum |f_j|^2`.
    pub fn spectral_mass(&self, f: &Field) -> f64 {
        let mut buf = f.values.clone();
        self.forward(&mut buf);
        let n = self.grid.len() as f64;
        self.grid.spacing() / n * buf.iter().map(|v| v.norm_sqr()).sum::<f64>()
    }

    /// Fraction of spectral energy in the top eighth of wavenumbers.
    pub fn spectral_tail(&self, f: &Field) -> f64 {
        let mut buf = f.values.clone();
        self.forward(&mut buf);
        let n = self.grid.len();
        let kmax = self.wavenumbers[n / 2 - 1].abs();
        let cut = 0.75 * kmax;
        let total: f64 = buf.iter().map(|v| v.norm_sqr()).sum();
        if total == 0.0 {
            return 0.0;
        }
        let tail: f64 = buf
            .iter()
            .zip(&self.wavenumbers)
            .filter(|(_, k)| k.abs() > cut)
            .map(|(v, _)| v.norm_sqr())
            .sum();
        tail / total
    }

    pub fn norms(&self, f: &Field, max_order: usize) -> GridNorms {
        grid_norms_with(self, f, max_order)
    }
}

/// Spectral derivative of order 1 or 2.
pub fn derivative(f: &Field, order: u32) -> Result<Field> {
    if !(1..=2).contains(&order) {
        return Err(Error::InvalidArgument(format!("derivative order must be 1 or 2, got {order}")));
    }
    Ok(SpectralOps::new(*f.grid()).derivative(f, order))
}

/// Weighted norms of a field. `sigma[k]` is `sum ||y^a d^b f||` over
/// `a + b <= k`; entries above the requested order are `NaN`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridNorms {
    pub l2: f64,
    pub l2_of_y_times_f: f64,
    pub l2_of_grad_f: f64,
    pub sigma: [f64; 5],
}

impl GridNorms {
    pub fn sigma_k(&self, k: usize) -> f64 {
        self.sigma[k]
    }
}

pub fn grid_norms(f: &Field) -> GridNorms {
    grid_norms_with(&SpectralOps::new(*f.grid()), f, 4)
}

fn weighted_l2(f: &Field, power: i32) -> f64 {
    let g = f.grid();
    let h = g.spacing();
    (h * f
        .values()
        .iter()
        .enumerate()
        .map(|(j, v)| g.point(j).powi(power).powi(2) * v.norm_sqr())
        .sum::<f64>())
    .sqrt()
}

fn grid_norms_with(ops: &SpectralOps, f: &Field, max_order: usize) -> GridNorms {
    let max_order = max_order.min(4);
    let derivs: Vec<Field> = (0..=max_order as u32).map(|b| ops.derivative(f, b)).collect();
    // table[a][b] = ||y^a d^b f||
    let mut table = [[0.0f64; 5]; 5];
    for (b, d) in derivs.iter().enumerate() {
        for a in 0..=(max_order - b) {
            table[a][b] = weighted_l2(d, a as i32);
        }
    }
    let mut sigma = [f64::NAN; 5];
    for (k, s) in sigma.iter_mut().enumerate().take(max_order + 1) {
        let mut acc = 0.0;
        for a in 0..=k {
            for b in 0..=(k - a) {
                acc += table[a][b];
            }
        }
        *s = acc;
    }
    GridNorms {
        l2: table[0][0],
        l2_of_y_times_f: if max_order >= 1 { table[1][0] } else { weighted_l2(f, 1) },
        l2_of_grad_f: if max_order >= 1 {
            table[0][1]
        } else {
            ops.derivative(f, 1).l2()
        },
        sigma,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn gaussian(grid: Grid1D) -> Field {
        Field::from_real_fn(grid, |y| PI.powf(-0.25) * (-y * y / 2.0).exp())
    }

    #[test]
    fn grid_validation() {
        assert!(Grid1D::new(8, 1.0).is_err());
        assert!(Grid1D::new(100, 1.0).is_err());
        assert!(Grid1D::new(64, 0.0).is_err());
        let g = Grid1D::new(64, 2.0).unwrap();
        assert_eq!(g.spacing(), 4.0 / 64.0);
        assert_eq!(g.point(0), -2.0);
        assert_eq!(g.wavenumber(63), -PI / 2.0);
    }

    #[test]
    fn derivative_of_single_mode() {
        let g = Grid1D::new(256, 3.0).unwrap();
        let l = g.half_width();
        let f = Field::from_real_fn(g, |y| (PI * y / l).sin());
        let d = derivative(&f, 1).unwrap();
        for (j, v) in d.values().iter().enumerate() {
            let y = g.point(j);
            assert!((v.re - PI / l * (PI * y / l).cos()).abs() < 1e-12);
            assert!(v.im.abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_of_constant_vanishes() {
        let g = Grid1D::new(64, 5.0).unwrap();
        let f = Field::from_real_fn(g, |_| 3.5);
        for order in [1, 2] {
            let d = derivative(&f, order).unwrap();
            assert!(d.sup_norm() < 1e-13);
        }
        assert!(derivative(&f, 3).is_err());
    }

    #[test]
    fn derivative_of_gaussian() {
        let g = Grid1D::new(512, 12.0).unwrap();
        let f = Field::from_real_fn(g, |y| (-y * y).exp());
        let d = derivative(&f, 1).unwrap();
        let d2 = derivative(&f, 2).unwrap();
        for j in 0..g.len() {
            let y = g.point(j);
            assert!((d.values()[j].re + 2.0 * y * (-y * y).exp()).abs() < 1e-10);
            assert!((d2.values()[j].re - (4.0 * y * y - 2.0) * (-y * y).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn gaussian_norms() {
        let g = Grid1D::default();
        let n = grid_norms(&gaussian(g));
        assert!((n.l2 - 1.0).abs() < 1e-10);
        assert!((n.l2_of_y_times_f.powi(2) - 0.5).abs() < 1e-9);
        assert!((n.l2_of_grad_f.powi(2) - 0.5).abs() < 1e-9);
        assert!((n.sigma_k(1) - (1.0 + 2.0 * 0.5f64.sqrt())).abs() < 1e-9);
        assert!(n.sigma_k(4).is_finite());
    }

    #[test]
    fn zero_field_norms() {
        let n = grid_norms(&Field::zeros(Grid1D::default()));
        assert_eq!(n.l2, 0.0);
        assert!(n.sigma.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn field_rejects_bad_values() {
        let g = Grid1D::new(16, 1.0).unwrap();
        assert!(Field::new(g, vec![Complex64::new(0.0, 0.0); 15]).is_err());
        let mut v = vec![Complex64::new(0.0, 0.0); 16];
        v[3].re = f64::NAN;
        assert!(Field::new(g, v).is_err());
    }

    proptest! {
        #[test]
        fn parseval(values in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 64)) {
            let g = Grid1D::new(64, 4.0).unwrap();
            let f = Field::new(g, values.iter().map(|&(a, b)| Complex64::new(a, b)).collect()).unwrap();
            let ops = SpectralOps::new(g);
            let m = f.mass();
            prop_assert!((ops.spectral_mass(&f) - m).abs() <= 1e-12 * m.max(1e-300));
        }
    }
}
