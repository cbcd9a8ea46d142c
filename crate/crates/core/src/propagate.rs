//! Strang split-step Fourier propagation for
//! `i d_t u = -(c/2) u'' + W(t, |u|) u`.
//!
//! One step: half potential phase at the step midpoint, exact kinetic flow in
//! Fourier space, half potential phase again. The potential only depends on
//! the modulus of the field, which the phase steps leave unchanged, so each
//! potential sub-flow is solved exactly.

use num_complex::Complex64;

use crate::classical::step_count;
use crate::error::{Error, Result};
use crate::spectral::{Field, Grid1D, SpectralOps};

/// Supplies the real potential `W` for a half step.
pub(crate) trait PotentialModel {
    /// Fills `out` with `W(t, y)` for the current field. `density_changed`
    /// is false when `|u|` is identical to the previous call, so cached
    /// nonlocal terms may be reused.
    fn potential(&mut self, t: f64, u: &[Complex64], density_changed: bool, out: &mut [f64]);
}

pub(crate) struct SplitStep {
    ops: SpectralOps,
    kinetic: Vec<Complex64>,
    dt: f64,
    steps: usize,
}

impl SplitStep {
    /// `kinetic_coef` is 1 in the rescaled frame and `eps` in the physical one.
    pub fn new(grid: Grid1D, t_end: f64, dt: f64, kinetic_coef: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if !(t_end >= 0.0 && t_end.is_finite()) {
            return Err(Error::InvalidArgument(format!("t_end must be >= 0, got {t_end}")));
        }
        let steps = step_count(t_end, dt);
        let dt = if steps == 0 { dt } else { t_end / steps as f64 };
        let ops = SpectralOps::new(grid);
        let kinetic = ops
            .wavenumbers()
            .iter()
            .map(|k| Complex64::from_polar(1.0, -0.5 * kinetic_coef * k * k * dt))
            .collect();
        Ok(Self {
            ops,
            kinetic,
            dt,
            steps,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn ops(&self) -> &SpectralOps {
        &self.ops
    }

    /// Runs all steps. `observe(step, t, u)` is called for step 0 (initial
    /// data) and after every step.
    pub fn run<M, F>(&self, initial: &Field, model: &mut M, mut observe: F) -> Result<Field>
    where
        M: PotentialModel,
        F: FnMut(usize, f64, &[Complex64]) -> Result<()>,
    {
        let grid = *initial.grid();
        let n = grid.len();
        let mut u = initial.values().to_vec();
        let mut w = vec![0.0; n];
        let half = 0.5 * self.dt;
        observe(0, 0.0, &u)?;
        let mut density_changed = true;
        for step in 0..self.steps {
            let t0 = step as f64 * self.dt;
            let t_mid = t0 + half;
            model.potential(t_mid, &u, density_changed, &mut w);
            apply_phase(&mut u, &w, half);
            self.ops.forward(&mut u);
            for (v, k) in u.iter_mut().zip(&self.kinetic) {
                *v *= k;
            }
            self.ops.inverse(&mut u);
            model.potential(t_mid, &u, true, &mut w);
            apply_phase(&mut u, &w, half);
            density_changed = false;
            let t1 = (step + 1) as f64 * self.dt;
            if u.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
                return Err(Error::NonFinite {
                    what: "field".into(),
                    last_valid_time: t0,
                });
            }
            observe(step + 1, t1, &u)?;
        }
        Field::new(grid, u)
    }
}

fn apply_phase(u: &mut [Complex64], w: &[f64], tau: f64) {
    for (v, p) in u.iter_mut().zip(w) {
        *v *= Complex64::from_polar(1.0, -p * tau);
    }
}
