use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{Field, Grid1D, KernelSpec};
use crate::error::Result;

/// Average of `|y|^-gamma` over the cell of width `h` centred at `m * h`.
pub fn homogeneous_cell_weight(m: i64, h: f64, gamma: f64) -> f64 {
    let p = 1.0 - gamma;
    if m == 0 {
        (0.5 * h).powf(-gamma) / p
    } else {
        let c = m.unsigned_abs() as f64 * h;
        let (a, b) = (c - 0.5 * h, c + 0.5 * h);
        (b.powf(p) - a.powf(p)) / (p * h)
    }
}

/// Linear (non-periodic) convolution with a fixed kernel on one grid.
///
/// Both the kernel samples and the density are zero padded to `2n` so the
/// circular DFT product reproduces `h * sum_j w(i - j) rho_j` exactly.
#[derive(Clone)]
pub struct Convolver {
    grid: Grid1D,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    kernel_hat: Vec<Complex64>,
}

impl Convolver {
    /// `weight(m)` is the kernel sample at offset `m * h`, `|m| < n`.
    pub fn from_offsets(grid: Grid1D, weight: impl Fn(i64) -> f64) -> Self {
        let n = grid.len();
        let n2 = 2 * n;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n2);
        let inverse = planner.plan_fft_inverse(n2);
        let mut kernel_hat = vec![Complex64::new(0.0, 0.0); n2];
        for (idx, slot) in kernel_hat.iter_mut().enumerate() {
            let m = if idx < n {
                idx as i64
            } else if idx > n {
                idx as i64 - n2 as i64
            } else {
                continue;
            };
            *slot = Complex64::new(weight(m), 0.0);
        }
        forward.process(&mut kernel_hat);
        // Fold the quadrature weight h and the inverse DFT 1/(2n) in once.
        let s = grid.spacing() / n2 as f64;
        for v in &mut kernel_hat {
            *v *= s;
        }
        Self {
            grid,
            forward,
            inverse,
            kernel_hat,
        }
    }

    /// `coefficient * |y|^-gamma`, sampled by exact cell averages.
    pub fn homogeneous(grid: Grid1D, coefficient: f64, gamma: f64) -> Self {
        let h = grid.spacing();
        Self::from_offsets(grid, |m| coefficient * homogeneous_cell_weight(m, h, gamma))
    }

    /// Point samples of a smooth kernel `k(y)`.
    pub fn smooth(grid: Grid1D, k: impl Fn(f64) -> f64) -> Self {
        let h = grid.spacing();
        Self::from_offsets(grid, |m| k(m as f64 * h))
    }

    /// Plain kernel on its own grid, no rescaling.
    pub fn for_kernel(grid: Grid1D, kernel: &KernelSpec) -> Self {
        match kernel {
            KernelSpec::Homogeneous { lambda, gamma } => Self::homogeneous(grid, *lambda, *gamma),
            KernelSpec::Smooth(s) => Self::smooth(grid, |y| s.eval(y)),
        }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    /// `(K * rho)(y_i)` for `i` in `0..n`.
    pub fn apply(&self, density: &[f64]) -> Vec<f64> {
        let n = self.grid.len();
        assert_eq!(density.len(), n, "density length must match grid");
        let mut buf = vec![Complex64::new(0.0, 0.0); 2 * n];
        for (b, d) in buf.iter_mut().zip(density) {
            b.re = *d;
        }
        self.forward.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        self.inverse.process(&mut buf);
        buf.truncate(n);
        buf.into_iter().map(|v| v.re).collect()
    }
}

/// `K * f_abs2` on the grid of `f_abs2` (the imaginary part is ignored).
pub fn hartree_convolution(f_abs2: &Field, kernel: &KernelSpec) -> Result<Field> {
    kernel.validate()?;
    let density: Vec<f64> = f_abs2.values().iter().map(|v| v.re).collect();
    let edge = density[0].abs().max(density[density.len() - 1].abs());
    if edge > 1e-12 {
        log::warn!("density does not decay at grid edges ({edge:.3e}); convolution truncates it");
    }
    let conv = Convolver::for_kernel(*f_abs2.grid(), kernel);
    let out = conv.apply(&density);
    Field::new(
        *f_abs2.grid(),
        out.into_iter().map(|v| Complex64::new(v, 0.0)).collect(),
    )
}
