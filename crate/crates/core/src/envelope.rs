//! Envelope equations for the profile `u(t, y)`:
//!
//! * linear: `i u_t + u''/2 = Q(t) y^2/2 u`
//! * critical homogeneous Hartree: adds `lambda (|y|^-gamma * |u|^2) u`
//! * smooth kernels: a constant phase (`alpha = 1`), or a first-moment
//!   coupled linear equation followed by a gauge transform (`alpha = 1/2`,
//!   `alpha = 0`).

use num_complex::Complex64;

use crate::classical::{PotentialSpec, TrajectoryPath};
use crate::error::{Error, Result};
use crate::propagate::{PotentialModel, SplitStep};
use crate::spectral::{taylor_kernel_coefficients, Convolver, Field, Grid1D, KernelJet, KernelSpec, SpectralOps};

/// Edge modulus above which a run is flagged as leaking through the boundary.
pub const EDGE_WARNING: f64 = 1e-8;

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    /// Store every `snapshot_stride`-th step (the final state is always kept).
    pub snapshot_stride: usize,
    /// Highest `Sigma^k` order recorded in the diagnostics (0 disables them).
    pub sigma_order: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            snapshot_stride: 10,
            sigma_order: 4,
        }
    }
}

/// Samples of `Q(t) = V''(t, x(t))`, plus optional linear and constant
/// potential terms, on a uniform time grid.
#[derive(Clone, Debug)]
pub struct QuadraticPotentialTrace {
    step: f64,
    q: Vec<f64>,
    linear: Option<Vec<f64>>,
    scalar: Option<Vec<f64>>,
}

impl QuadraticPotentialTrace {
    pub fn constant(q: f64) -> Self {
        Self {
            step: 0.0,
            q: vec![q],
            linear: None,
            scalar: None,
        }
    }

    /// Hessian of `pot` along the samples of `path`.
    pub fn from_path(path: &TrajectoryPath, pot: &PotentialSpec) -> Self {
        let times = path.times();
        let q = times
            .iter()
            .zip(path.x())
            .map(|(&t, &x)| pot.hess(t, x))
            .collect();
        Self {
            step: if times.len() > 1 { times[1] - times[0] } else { 0.0 },
            q,
            linear: None,
            scalar: None,
        }
    }

    pub fn from_samples(step: f64, q: Vec<f64>) -> Result<Self> {
        if q.is_empty() || (q.len() > 1 && !(step > 0.0)) {
            return Err(Error::InvalidArgument("trace needs samples and a positive step".into()));
        }
        Ok(Self {
            step,
            q,
            linear: None,
            scalar: None,
        })
    }

    pub fn with_linear(mut self, linear: Vec<f64>) -> Result<Self> {
        self.check_len(&linear)?;
        self.linear = Some(linear);
        Ok(self)
    }

    pub fn with_scalar(mut self, scalar: Vec<f64>) -> Result<Self> {
        self.check_len(&scalar)?;
        self.scalar = Some(scalar);
        Ok(self)
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.q.len() {
            return Err(Error::Mismatch("trace columns must have equal length".into()));
        }
        Ok(())
    }

    /// Last covered time; infinite for constant traces.
    pub fn t_end(&self) -> f64 {
        if self.q.len() == 1 {
            f64::INFINITY
        } else {
            self.step * (self.q.len() - 1) as f64
        }
    }

    fn sample(&self, values: &[f64], t: f64) -> f64 {
        if values.len() == 1 {
            return values[0];
        }
        let pos = (t / self.step).clamp(0.0, (values.len() - 1) as f64);
        let i = pos.round();
        if (pos - i).abs() < 1e-6 {
            return values[i as usize];
        }
        let i0 = (pos.floor() as usize).min(values.len() - 2);
        let s = pos - i0 as f64;
        values[i0] * (1.0 - s) + values[i0 + 1] * s
    }

    pub fn q_at(&self, t: f64) -> f64 {
        self.sample(&self.q, t)
    }

    pub fn linear_at(&self, t: f64) -> f64 {
        self.linear.as_ref().map_or(0.0, |v| self.sample(v, t))
    }

    pub fn scalar_at(&self, t: f64) -> f64 {
        self.scalar.as_ref().map_or(0.0, |v| self.sample(v, t))
    }

    fn covers(&self, t_end: f64) -> Result<()> {
        if t_end > self.t_end() * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::OutOfRange {
                t: t_end,
                start: 0.0,
                end: self.t_end(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SupercriticalRegime {
    AlphaHalf,
    Alpha0,
}

/// Which envelope equation a run solves.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EnvelopeRegime {
    Linear,
    Critical { lambda: f64, gamma: f64 },
    Alpha1 { k0: f64, mass_sq: f64 },
    AlphaHalf { jet: KernelJet, mass_sq: f64 },
    Alpha0 { jet: KernelJet, mass_sq: f64 },
}

impl EnvelopeRegime {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Critical { .. } => "critical",
            Self::Alpha1 { .. } => "alpha1",
            Self::AlphaHalf { .. } => "alpha-half",
            Self::Alpha0 { .. } => "alpha0",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SnapshotDiagnostics {
    pub t: f64,
    pub mass: f64,
    /// `Sigma^1..Sigma^4`; `NaN` above the recorded order.
    pub sigma: [f64; 4],
    pub edge: f64,
    pub spectral_tail: f64,
}

/// Time-indexed envelope snapshots with per-step moment and gauge samples.
#[derive(Clone, Debug)]
pub struct EnvelopeRun {
    pub regime: EnvelopeRegime,
    pub grid: Grid1D,
    pub dt: f64,
    pub snapshot_stride: usize,
    pub times: Vec<f64>,
    pub fields: Vec<Field>,
    pub step_times: Vec<f64>,
    /// `G(t) = int y |u|^2` at every step.
    pub moment_g: Vec<f64>,
    /// Gauge phase `theta(t)` at every step, `u = v exp(i theta)`.
    pub gauge_theta: Vec<f64>,
    pub diagnostics: Vec<SnapshotDiagnostics>,
}

impl EnvelopeRun {
    pub fn final_field(&self) -> &Field {
        self.fields.last().expect("runs always hold the initial snapshot")
    }

    /// Snapshot at `t`, linearly interpolated between stored snapshots.
    pub fn field_at(&self, t: f64) -> Result<Field> {
        interpolate_snapshots(&self.times, &self.fields, t)
    }

    pub fn mass_drift(&self) -> f64 {
        max_relative_drift(self.diagnostics.iter().map(|d| d.mass))
    }

    pub fn sigma_series(&self, k: usize) -> Vec<f64> {
        self.diagnostics.iter().map(|d| d.sigma[k - 1]).collect()
    }
}

pub(crate) fn max_relative_drift(mut masses: impl Iterator<Item = f64>) -> f64 {
    let m0 = match masses.next() {
        Some(m) => m,
        None => return 0.0,
    };
    let scale = if m0 > 0.0 { m0 } else { 1.0 };
    masses.map(|m| (m - m0).abs() / scale).fold(0.0, f64::max)
}

pub(crate) fn interpolate_snapshots(times: &[f64], fields: &[Field], t: f64) -> Result<Field> {
    let end = *times.last().unwrap_or(&0.0);
    let tol = 1e-9 * (1.0 + end.abs());
    if times.is_empty() || t < times[0] - tol || t > end + tol {
        return Err(Error::OutOfRange {
            t,
            start: times.first().copied().unwrap_or(0.0),
            end,
        });
    }
    let idx = times.partition_point(|&s| s < t - tol);
    if idx < times.len() && (times[idx] - t).abs() <= tol {
        return Ok(fields[idx].clone());
    }
    let (i0, i1) = (idx - 1, idx);
    let s = (t - times[i0]) / (times[i1] - times[i0]);
    fields[i0].lerp(&fields[i1], s)
}

pub(crate) fn snapshot_diagnostics(ops: &SpectralOps, f: &Field, t: f64, sigma_order: usize) -> SnapshotDiagnostics {
    let mut sigma = [f64::NAN; 4];
    if sigma_order > 0 {
        let norms = ops.norms(f, sigma_order);
        for k in 1..=sigma_order.min(4) {
            sigma[k - 1] = norms.sigma_k(k);
        }
    }
    SnapshotDiagnostics {
        t,
        mass: f.mass(),
        sigma,
        edge: f.edge_amplitude(4),
        spectral_tail: ops.spectral_tail(f),
    }
}

/// `W = Q y^2/2 + L y + s + coupling`, with the coupling defined by the model.
struct EnvelopeModel<'a> {
    y: Vec<f64>,
    h: f64,
    trace: &'a QuadraticPotentialTrace,
    kind: ModelKind,
    nonlocal: Vec<f64>,
    density: Vec<f64>,
}

enum ModelKind {
    Linear,
    Hartree(Convolver),
    /// Extra quadratic coefficient and first-moment coupling
    /// `W += (extra_q / 2) y^2 + extra_linear * y + moment_coef * G * y`.
    MomentCoupled {
        extra_q: f64,
        extra_linear: f64,
        moment_coef: f64,
    },
}

impl<'a> EnvelopeModel<'a> {
    fn new(grid: &Grid1D, trace: &'a QuadraticPotentialTrace, kind: ModelKind) -> Self {
        let n = grid.len();
        Self {
            y: grid.points(),
            h: grid.spacing(),
            trace,
            kind,
            nonlocal: vec![0.0; n],
            density: vec![0.0; n],
        }
    }
}

fn first_moment(y: &[f64], u: &[Complex64], h: f64) -> f64 {
    y.iter().zip(u).map(|(y, v)| y * v.norm_sqr()).sum::<f64>() * h
}

impl PotentialModel for EnvelopeModel<'_> {
    fn potential(&mut self, t: f64, u: &[Complex64], density_changed: bool, out: &mut [f64]) {
        let q = self.trace.q_at(t);
        let lin = self.trace.linear_at(t);
        let s = self.trace.scalar_at(t);
        match &self.kind {
            ModelKind::Linear => {
                for (w, y) in out.iter_mut().zip(&self.y) {
                    *w = 0.5 * q * y * y + lin * y + s;
                }
            }
            ModelKind::Hartree(conv) => {
                if density_changed {
                    for (d, v) in self.density.iter_mut().zip(u) {
                        *d = v.norm_sqr();
                    }
                    self.nonlocal = conv.apply(&self.density);
                }
                for ((w, y), nl) in out.iter_mut().zip(&self.y).zip(&self.nonlocal) {
                    *w = 0.5 * q * y * y + lin * y + s + nl;
                }
            }
            ModelKind::MomentCoupled {
                extra_q,
                extra_linear,
                moment_coef,
            } => {
                let g = first_moment(&self.y, u, self.h);
                let qq = q + extra_q;
                let ll = lin + extra_linear + moment_coef * g;
                for (w, y) in out.iter_mut().zip(&self.y) {
                    *w = 0.5 * qq * y * y + ll * y + s;
                }
            }
        }
    }
}

/// Shared driver: runs the model and records snapshots, `G` and (optionally)
/// the running integral of a per-step density functional.
fn drive(
    a: &Field,
    model: &mut EnvelopeModel<'_>,
    stepper: &SplitStep,
    regime: EnvelopeRegime,
    opts: &RunOptions,
    theta_rate: impl Fn(&[f64], &[Complex64], f64) -> f64,
) -> Result<EnvelopeRun> {
    let grid = *a.grid();
    let stride = opts.snapshot_stride.max(1);
    let steps = stepper.steps();
    let y = grid.points();
    let h = grid.spacing();
    let ops = stepper.ops().clone();
    let mut run = EnvelopeRun {
        regime,
        grid,
        dt: stepper.dt(),
        snapshot_stride: stride,
        times: Vec::new(),
        fields: Vec::new(),
        step_times: Vec::with_capacity(steps + 1),
        moment_g: Vec::with_capacity(steps + 1),
        gauge_theta: Vec::with_capacity(steps + 1),
        diagnostics: Vec::new(),
    };
    let mut theta = 0.0;
    let mut prev_rate = 0.0;
    let mut warned = false;
    let dt = stepper.dt();
    stepper.run(a, model, |step, t, u| {
        let rate = theta_rate(&y, u, h);
        if step > 0 {
            theta += 0.5 * dt * (prev_rate + rate);
        }
        prev_rate = rate;
        run.step_times.push(t);
        run.moment_g.push(first_moment(&y, u, h));
        run.gauge_theta.push(theta);
        if step % stride == 0 || step == steps {
            let phase = Complex64::from_polar(1.0, theta);
            let field = Field::new(grid, u.iter().map(|v| v * phase).collect())?;
            let diag = snapshot_diagnostics(&ops, &field, t, opts.sigma_order);
            if diag.edge > EDGE_WARNING && !warned {
                log::warn!("{} envelope: edge amplitude {:.2e} at t = {t}", regime.label(), diag.edge);
                warned = true;
            }
            run.times.push(t);
            run.fields.push(field);
            run.diagnostics.push(diag);
        }
        Ok(())
    })?;
    Ok(run)
}

fn check_envelope_inputs(a: &Field, trace: &QuadraticPotentialTrace, t_end: f64) -> Result<()> {
    if !a.is_finite() {
        return Err(Error::InvalidArgument("initial envelope must be finite".into()));
    }
    trace.covers(t_end)
}

/// Linear envelope `i u_t + u''/2 = Q(t) y^2/2 u`.
pub fn solve_linear_envelope(
    a: &Field,
    trace: &QuadraticPotentialTrace,
    t_end: f64,
    dt: f64,
    opts: &RunOptions,
) -> Result<EnvelopeRun> {
    check_envelope_inputs(a, trace, t_end)?;
    let stepper = SplitStep::new(*a.grid(), t_end, dt, 1.0)?;
    let mut model = EnvelopeModel::new(a.grid(), trace, ModelKind::Linear);
    drive(a, &mut model, &stepper, EnvelopeRegime::Linear, opts, |_, _, _| 0.0)
}

/// Critical envelope with homogeneous kernel:
/// `i u_t + u''/2 = Q(t) y^2/2 u + lambda (|y|^-gamma * |u|^2) u`.
pub fn solve_hartree_envelope(
    a: &Field,
    trace: &QuadraticPotentialTrace,
    kernel: &KernelSpec,
    t_end: f64,
    dt: f64,
    opts: &RunOptions,
) -> Result<EnvelopeRun> {
    let (lambda, gamma) = match kernel {
        KernelSpec::Homogeneous { lambda, gamma } => (*lambda, *gamma),
        KernelSpec::Smooth(_) => {
            return Err(Error::InvalidRegime(
                "critical Hartree envelope needs a homogeneous kernel".into(),
            ))
        }
    };
    kernel.validate()?;
    check_envelope_inputs(a, trace, t_end)?;
    let stepper = SplitStep::new(*a.grid(), t_end, dt, 1.0)?;
    let conv = Convolver::homogeneous(*a.grid(), lambda, gamma);
    let mut model = EnvelopeModel::new(a.grid(), trace, ModelKind::Hartree(conv));
    drive(
        a,
        &mut model,
        &stepper,
        EnvelopeRegime::Critical { lambda, gamma },
        opts,
        |_, _, _| 0.0,
    )
}

/// Smooth kernel at `alpha = 1`: `u = u_lin exp(-i t k0 mass_sq)`.
pub fn alpha1_envelope(u_lin_run: &EnvelopeRun, k0: f64, mass_sq: f64) -> Result<EnvelopeRun> {
    if u_lin_run.regime != EnvelopeRegime::Linear {
        return Err(Error::InvalidRegime(format!(
            "phase shift applies to a linear envelope, got {}",
            u_lin_run.regime.label()
        )));
    }
    let rate = k0 * mass_sq;
    let mut run = u_lin_run.clone();
    run.regime = EnvelopeRegime::Alpha1 { k0, mass_sq };
    for (f, t) in run.fields.iter_mut().zip(&run.times) {
        f.scale(Complex64::from_polar(1.0, -rate * t));
    }
    run.gauge_theta = run.step_times.iter().map(|t| -rate * t).collect();
    Ok(run)
}

/// Smooth kernel beyond criticality.
///
/// Solves the linear equation for `v` with potential
/// `M(t) y^2/2 - hess0 G(t) y`, `M = mass_sq hess0 + Q` (`alpha = 0`), or
/// `Q(t) y^2/2 + mass_sq grad0 y` (`alpha = 1/2`), where `G` is the first
/// moment of the current field. The stored envelope is `u = v exp(i theta)`
/// with `theta' = -hess0/2 int y^2 |u|^2` (`alpha = 0`) or
/// `theta' = grad0 G` (`alpha = 1/2`).
#[allow(clippy::too_many_arguments)]
pub fn solve_smooth_supercritical_envelope(
    a: &Field,
    trace: &QuadraticPotentialTrace,
    kernel: &KernelSpec,
    mass_sq: f64,
    regime: SupercriticalRegime,
    t_end: f64,
    dt: f64,
    opts: &RunOptions,
) -> Result<EnvelopeRun> {
    let jet = match kernel {
        KernelSpec::Smooth(_) => taylor_kernel_coefficients(kernel)?,
        KernelSpec::Homogeneous { .. } => {
            return Err(Error::InvalidRegime(
                "supercritical envelopes need a smooth kernel".into(),
            ))
        }
    };
    check_envelope_inputs(a, trace, t_end)?;
    let stepper = SplitStep::new(*a.grid(), t_end, dt, 1.0)?;
    match regime {
        SupercriticalRegime::Alpha0 => {
            if jet.grad0 != 0.0 {
                return Err(Error::InvalidRegime(
                    "alpha = 0 envelope requires grad K(0) = 0".into(),
                ));
            }
            let kind = ModelKind::MomentCoupled {
                extra_q: mass_sq * jet.hess0,
                extra_linear: 0.0,
                moment_coef: -jet.hess0,
            };
            let mut model = EnvelopeModel::new(a.grid(), trace, kind);
            let hess0 = jet.hess0;
            drive(
                a,
                &mut model,
                &stepper,
                EnvelopeRegime::Alpha0 { jet, mass_sq },
                opts,
                move |y, u, h| {
                    let second: f64 = y.iter().zip(u).map(|(y, v)| y * y * v.norm_sqr()).sum::<f64>() * h;
                    -0.5 * hess0 * second
                },
            )
        }
        SupercriticalRegime::AlphaHalf => {
            let kind = ModelKind::MomentCoupled {
                extra_q: 0.0,
                extra_linear: mass_sq * jet.grad0,
                moment_coef: 0.0,
            };
            let mut model = EnvelopeModel::new(a.grid(), trace, kind);
            let grad0 = jet.grad0;
            drive(
                a,
                &mut model,
                &stepper,
                EnvelopeRegime::AlphaHalf { jet, mass_sq },
                opts,
                move |y, u, h| grad0 * first_moment(y, u, h),
            )
        }
    }
}

/// Largest `|G'' + Q G|` over interior steps, with `G''` from second
/// differences of the per-step moment samples.
pub fn moment_ode_residual(run: &EnvelopeRun, trace: &QuadraticPotentialTrace) -> Result<f64> {
    let g = &run.moment_g;
    if g.len() < 3 {
        return Err(Error::TooFewSamples {
            needed: 3,
            have: g.len(),
        });
    }
    let dt = run.dt;
    let mut worst: f64 = 0.0;
    for i in 1..g.len() - 1 {
        let gdd = (g[i + 1] - 2.0 * g[i] + g[i - 1]) / (dt * dt);
        worst = worst.max((gdd + trace.q_at(run.step_times[i]) * g[i]).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::{accumulate_action, solve_trajectory};
    use crate::spectral::SmoothKernel;
    use std::f64::consts::PI;

    fn gaussian(grid: Grid1D, center: f64, momentum: f64) -> Field {
        Field::from_fn(grid, |y| {
            Complex64::from_polar(PI.powf(-0.25) * (-(y - center).powi(2) / 2.0).exp(), momentum * y)
        })
    }

    fn quiet() -> RunOptions {
        RunOptions {
            snapshot_stride: 10,
            sigma_order: 0,
        }
    }

    #[test]
    fn free_gaussian_spreads() {
        let g = Grid1D::new(512, 12.0).unwrap();
        let run = solve_linear_envelope(&gaussian(g, 0.0, 0.0), &QuadraticPotentialTrace::constant(0.0), 1.0, 1e-3, &quiet()).unwrap();
        let sup = run.final_field().sup_norm();
        let exact = 2f64.powf(-0.25) * PI.powf(-0.25);
        assert!((sup - exact).abs() / exact < 1e-6);
        assert!(run.mass_drift() < 1e-8);
    }

    #[test]
    fn harmonic_ground_state_rotates() {
        let g = Grid1D::default();
        let a = gaussian(g, 0.0, 0.0);
        let run = solve_linear_envelope(&a, &QuadraticPotentialTrace::constant(1.0), 1.0, 1e-3, &quiet()).unwrap();
        let mut expect = a.clone();
        expect.scale(Complex64::from_polar(1.0, -0.5));
        assert!(run.final_field().sub(&expect).unwrap().l2() < 1e-6);
    }

    #[test]
    fn zero_data_stays_zero() {
        let g = Grid1D::new(64, 8.0).unwrap();
        let run = solve_linear_envelope(&Field::zeros(g), &QuadraticPotentialTrace::constant(1.0), 0.5, 1e-2, &RunOptions::default()).unwrap();
        assert_eq!(run.final_field().sup_norm(), 0.0);
    }

    #[test]
    fn hartree_without_coupling_is_linear() {
        let g = Grid1D::default();
        let a = gaussian(g, 0.5, 0.3);
        let trace = QuadraticPotentialTrace::constant(0.7);
        let lin = solve_linear_envelope(&a, &trace, 1.0, 1e-3, &quiet()).unwrap();
        let hart = solve_hartree_envelope(&a, &trace, &KernelSpec::homogeneous(0.0, 0.5).unwrap(), 1.0, 1e-3, &quiet()).unwrap();
        assert!(lin.final_field().sub(hart.final_field()).unwrap().l2() < 1e-10);
    }

    #[test]
    fn hartree_conserves_mass() {
        let g = Grid1D::default();
        let run = solve_hartree_envelope(
            &gaussian(g, 0.0, 0.0),
            &QuadraticPotentialTrace::constant(0.0),
            &KernelSpec::homogeneous(1.0, 0.5).unwrap(),
            5.0,
            1e-3,
            &quiet(),
        )
        .unwrap();
        assert!(run.mass_drift() < 1e-8);
    }

    #[test]
    fn hartree_rejects_smooth_kernel() {
        let g = Grid1D::new(64, 8.0).unwrap();
        let k = KernelSpec::Smooth(SmoothKernel::gaussian(1.0, 1.0));
        assert!(matches!(
            solve_hartree_envelope(&gaussian(g, 0.0, 0.0), &QuadraticPotentialTrace::constant(0.0), &k, 0.1, 1e-2, &quiet()),
            Err(Error::InvalidRegime(_))
        ));
    }

    #[test]
    fn alpha1_is_a_pure_phase() {
        let g = Grid1D::default();
        let lin = solve_linear_envelope(&gaussian(g, 1.0, 0.5), &QuadraticPotentialTrace::constant(1.0), PI, 1e-3, &quiet()).unwrap();
        let same = alpha1_envelope(&lin, 0.0, 1.0).unwrap();
        assert_eq!(same.final_field(), lin.final_field());
        let shifted = alpha1_envelope(&lin, 1.0, 1.0).unwrap();
        for (a, b) in shifted.final_field().values().iter().zip(lin.final_field().values()) {
            assert!((a.norm() - b.norm()).abs() <= 1e-15 * b.norm().max(1.0));
            assert!((a + b).norm() < 1e-12);
        }
    }

    #[test]
    fn vanishing_jet_reduces_to_linear() {
        let g = Grid1D::default();
        let a = gaussian(g, 0.7, -0.2);
        let trace = QuadraticPotentialTrace::constant(0.5);
        let lin = solve_linear_envelope(&a, &trace, 1.0, 1e-3, &quiet()).unwrap();
        let k = KernelSpec::Smooth(SmoothKernel::constant(0.0));
        for regime in [SupercriticalRegime::Alpha0, SupercriticalRegime::AlphaHalf] {
            let run = solve_smooth_supercritical_envelope(&a, &trace, &k, 1.0, regime, 1.0, 1e-3, &quiet()).unwrap();
            assert!(run.final_field().sub(lin.final_field()).unwrap().l2() < 1e-12);
            assert!(run.gauge_theta.iter().all(|t| *t == 0.0));
        }
    }

    #[test]
    fn centred_data_keeps_zero_moment() {
        let g = Grid1D::new(1024, 32.0).unwrap();
        let k = KernelSpec::Smooth(SmoothKernel::gaussian(1.0, 1.0));
        let run = solve_smooth_supercritical_envelope(
            &gaussian(g, 0.0, 0.0),
            &QuadraticPotentialTrace::constant(1.0),
            &k,
            1.0,
            SupercriticalRegime::Alpha0,
            2.0,
            1e-3,
            &quiet(),
        )
        .unwrap();
        let worst = run.moment_g.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        assert!(worst < 1e-8, "{worst} {:?}", &run.moment_g[..5]);
    }

    #[test]
    fn shifted_gaussian_moment_oscillates() {
        // G'' + G = 0, G(0) = 1, G'(0) = 0 while the envelope itself feels
        // M = -1 and spreads exponentially.
        let g = Grid1D::new(1024, 32.0).unwrap();
        let k = KernelSpec::Smooth(SmoothKernel::gaussian(1.0, 1.0));
        let trace = QuadraticPotentialTrace::constant(1.0);
        let run = solve_smooth_supercritical_envelope(&gaussian(g, 1.0, 0.0), &trace, &k, 1.0, SupercriticalRegime::Alpha0, 2.0, 1e-3, &quiet()).unwrap();
        let worst = run
            .step_times
            .iter()
            .zip(&run.moment_g)
            .map(|(t, g)| (g - t.cos()).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-4, "max |G - cos t| = {worst}");
        assert!(moment_ode_residual(&run, &trace).unwrap() < 1e-3);
        assert!(run.mass_drift() < 1e-8);
    }

    #[test]
    fn free_moment_moves_linearly() {
        let g = Grid1D::new(1024, 32.0).unwrap();
        let k = KernelSpec::Smooth(SmoothKernel::gaussian(1.0, 1.0));
        let trace = QuadraticPotentialTrace::constant(0.0);
        let run = solve_smooth_supercritical_envelope(&gaussian(g, 0.0, 0.8), &trace, &k, 1.0, SupercriticalRegime::Alpha0, 1.0, 1e-3, &quiet()).unwrap();
        let r = moment_ode_residual(&run, &trace).unwrap();
        assert!(r < 1e-6, "{r} {:?}", &run.moment_g[..5]);
        let last = *run.moment_g.last().unwrap();
        assert!((last - 0.8).abs() < 1e-6);
    }

    #[test]
    fn alpha_half_gauge_preserves_modulus() {
        let g = Grid1D::default();
        let jet = KernelJet { k0: 1.0, grad0: 0.3, hess0: 0.0 };
        let k = KernelSpec::Smooth(SmoothKernel::custom(|y| 1.0 + 0.3 * y, jet));
        let a = gaussian(g, 0.5, 0.0);
        let trace = QuadraticPotentialTrace::constant(1.0);
        let run = solve_smooth_supercritical_envelope(&a, &trace, &k, 1.0, SupercriticalRegime::AlphaHalf, 1.0, 1e-3, &quiet()).unwrap();
        // Gauged run and an equivalent linear run with the extra linear term
        // have the same modulus.
        let lin_trace = QuadraticPotentialTrace::from_samples(1.0, vec![1.0, 1.0]).unwrap().with_linear(vec![0.3, 0.3]).unwrap();
        let lin = solve_linear_envelope(&a, &lin_trace, 1.0, 1e-3, &quiet()).unwrap();
        for (u, v) in run.final_field().values().iter().zip(lin.final_field().values()) {
            assert!((u.norm() - v.norm()).abs() < 1e-12);
        }
        let theta_end = *run.gauge_theta.last().unwrap();
        assert!(theta_end.abs() > 0.0);
        assert!(matches!(
            solve_smooth_supercritical_envelope(&a, &trace, &KernelSpec::homogeneous(1.0, 0.5).unwrap(), 1.0, SupercriticalRegime::AlphaHalf, 1.0, 1e-3, &quiet()),
            Err(Error::InvalidRegime(_))
        ));
    }

    #[test]
    fn moment_residual_needs_samples() {
        let g = Grid1D::new(64, 8.0).unwrap();
        let run = solve_linear_envelope(&Field::zeros(g), &QuadraticPotentialTrace::constant(0.0), 0.0, 1e-2, &quiet()).unwrap();
        assert!(matches!(moment_ode_residual(&run, &QuadraticPotentialTrace::constant(0.0)), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn trace_from_path_matches_hessian() {
        let pot = PotentialSpec::cosine(1.0, 1.0);
        let path = accumulate_action(&solve_trajectory(&pot, 1.0, 0.0, 2.0, 1e-3).unwrap(), &pot);
        let trace = QuadraticPotentialTrace::from_path(&path, &pot);
        assert!((trace.q_at(0.0) + 1f64.cos()).abs() < 1e-15);
        assert!(trace.covers(2.0).is_ok());
        assert!(trace.covers(2.5).is_err());
    }
}
