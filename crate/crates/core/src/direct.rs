//! Reference solvers for the exact `eps`-dependent problem, either in the
//! moving rescaled frame of one trajectory or directly in physical space.

use num_complex::Complex64;

use crate::classical::{solve_trajectory, PotentialSpec, TrajectoryPath};
use crate::envelope::{interpolate_snapshots, max_relative_drift, RunOptions, EDGE_WARNING};
use crate::error::{Error, Result};
use crate::packet::sample_cubic;
use crate::propagate::{PotentialModel, SplitStep};
use crate::spectral::{Convolver, Field, Grid1D, KernelSpec};

/// Envelope profile at `t = 0`.
#[derive(Clone, Debug, PartialEq)]
pub enum Profile {
    /// Unit-mass `(pi w^2)^(-1/4) exp(-(y - c)^2 / (2 w^2) + i p y)`.
    Gaussian { center: f64, momentum: f64, width: f64 },
    Sampled(Field),
}

impl Profile {
    pub fn standard() -> Self {
        Self::Gaussian {
            center: 0.0,
            momentum: 0.0,
            width: 1.0,
        }
    }

    pub fn eval(&self, y: f64) -> Complex64 {
        match self {
            Self::Gaussian { center, momentum, width } => {
                let amp = (std::f64::consts::PI * width * width).powf(-0.25);
                let z = (y - center) / width;
                Complex64::from_polar(amp * (-0.5 * z * z).exp(), momentum * y)
            }
            Self::Sampled(f) => sample_cubic(f, y),
        }
    }

    pub fn to_field(&self, grid: Grid1D) -> Field {
        match self {
            Self::Sampled(f) if *f.grid() == grid => f.clone(),
            _ => Field::from_fn(grid, |y| self.eval(y)),
        }
    }

    /// Spatial scale used for resolution checks.
    pub fn width(&self) -> f64 {
        match self {
            Self::Gaussian { width, .. } => *width,
            Self::Sampled(_) => 1.0,
        }
    }

    fn momentum(&self) -> f64 {
        match self {
            Self::Gaussian { momentum, .. } => momentum.abs(),
            Self::Sampled(_) => 0.0,
        }
    }

    fn center(&self) -> f64 {
        match self {
            Self::Gaussian { center, .. } => center.abs(),
            Self::Sampled(_) => 0.0,
        }
    }

    pub fn mass(&self) -> f64 {
        match self {
            Self::Gaussian { .. } => 1.0,
            Self::Sampled(f) => f.mass(),
        }
    }
}

/// One initial packet `eps^(-1/4) a((x - x0)/sqrt(eps)) exp(i (x - x0) xi0 / eps)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PacketSpec {
    pub profile: Profile,
    pub x0: f64,
    pub xi0: f64,
}

#[derive(Clone, Debug)]
pub enum Frame {
    Rescaled(TrajectoryPath),
    Physical,
}

#[derive(Clone, Debug)]
pub struct DirectRun {
    pub eps: f64,
    pub frame: Frame,
    pub alpha: f64,
    pub grid: Grid1D,
    pub dt: f64,
    pub times: Vec<f64>,
    pub fields: Vec<Field>,
    pub masses: Vec<f64>,
}

impl DirectRun {
    pub fn final_field(&self) -> &Field {
        self.fields.last().expect("runs always hold the initial snapshot")
    }

    pub fn field_at(&self, t: f64) -> Result<Field> {
        interpolate_snapshots(&self.times, &self.fields, t)
    }

    pub fn mass_drift(&self) -> f64 {
        max_relative_drift(self.masses.iter().copied())
    }

    pub fn path(&self) -> Option<&TrajectoryPath> {
        match &self.frame {
            Frame::Rescaled(p) => Some(p),
            Frame::Physical => None,
        }
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidArgument(format!("eps must lie in (0, 1], got {eps}")));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {alpha}")));
    }
    Ok(())
}

/// Rate `eps^alpha K(0) |a|^2` removed from the action when a smooth kernel
/// is supercritical (`alpha < 1`); zero otherwise.
pub fn action_shift_rate(kernel: &KernelSpec, eps: f64, alpha: f64, mass_sq: f64) -> f64 {
    match kernel {
        KernelSpec::Smooth(s) if alpha < 1.0 => eps.powf(alpha) * s.k0() * mass_sq,
        _ => 0.0,
    }
}

/// Nonlinear term of the rescaled equation, or `None` when the kernel is zero.
///
/// Homogeneous: `lambda eps^(alpha - alpha_c) |y|^-gamma`. Smooth:
/// `eps^(alpha - 1) (K(sqrt(eps) y) - K(0))` for `alpha < 1`, otherwise
/// `eps^(alpha - 1) K(sqrt(eps) y)`.
pub fn rescaled_convolver(grid: Grid1D, kernel: &KernelSpec, eps: f64, alpha: f64) -> Result<Option<Convolver>> {
    kernel.validate()?;
    if kernel.is_zero() {
        return Ok(None);
    }
    Ok(Some(match kernel {
        KernelSpec::Homogeneous { lambda, gamma } => {
            let coef = lambda * eps.powf(alpha - kernel.critical_alpha());
            Convolver::homogeneous(grid, coef, *gamma)
        }
        KernelSpec::Smooth(s) => {
            let coef = eps.powf(alpha - 1.0);
            let shift = if alpha < 1.0 { s.k0() } else { 0.0 };
            let se = eps.sqrt();
            Convolver::smooth(grid, |y| coef * (s.eval(se * y) - shift))
        }
    }))
}

struct RescaledModel<'a> {
    y: Vec<f64>,
    eps: f64,
    pot: &'a PotentialSpec,
    path: &'a TrajectoryPath,
    conv: Option<Convolver>,
    nonlocal: Vec<f64>,
    density: Vec<f64>,
    error: Option<Error>,
}

impl PotentialModel for RescaledModel<'_> {
    fn potential(&mut self, t: f64, u: &[Complex64], density_changed: bool, out: &mut [f64]) {
        let (x, _) = match self.path.state_at(t) {
            Ok(s) => s,
            Err(e) => {
                self.error.get_or_insert(e);
                out.iter_mut().for_each(|w| *w = f64::NAN);
                return;
            }
        };
        let se = self.eps.sqrt();
        let v0 = self.pot.value(t, x);
        let g0 = self.pot.grad(t, x);
        for (w, y) in out.iter_mut().zip(&self.y) {
            let dy = se * y;
            *w = (self.pot.value(t, x + dy) - v0 - dy * g0) / self.eps;
        }
        if let Some(conv) = &self.conv {
            if density_changed {
                for (d, v) in self.density.iter_mut().zip(u) {
                    *d = v.norm_sqr();
                }
                self.nonlocal = conv.apply(&self.density);
            }
            for (w, nl) in out.iter_mut().zip(&self.nonlocal) {
                *w += nl;
            }
        }
    }
}

struct PhysicalModel<'a> {
    x: Vec<f64>,
    inv_eps: f64,
    pot: &'a PotentialSpec,
    conv: Option<Convolver>,
    nonlocal: Vec<f64>,
    density: Vec<f64>,
}

impl PotentialModel for PhysicalModel<'_> {
    fn potential(&mut self, t: f64, u: &[Complex64], density_changed: bool, out: &mut [f64]) {
        for (w, x) in out.iter_mut().zip(&self.x) {
            *w = self.pot.value(t, *x) * self.inv_eps;
        }
        if let Some(conv) = &self.conv {
            if density_changed {
                for (d, v) in self.density.iter_mut().zip(u) {
                    *d = v.norm_sqr();
                }
                self.nonlocal = conv.apply(&self.density);
            }
            for (w, nl) in out.iter_mut().zip(&self.nonlocal) {
                *w += nl;
            }
        }
    }
}

fn record(
    stepper: &SplitStep,
    initial: &Field,
    model: &mut impl PotentialModel,
    opts: &RunOptions,
    label: &str,
) -> Result<(Vec<f64>, Vec<Field>, Vec<f64>)> {
    let grid = *initial.grid();
    let stride = opts.snapshot_stride.max(1);
    let steps = stepper.steps();
    let mut times = Vec::new();
    let mut fields = Vec::new();
    let mut masses = Vec::new();
    let mut warned = false;
    stepper.run(initial, model, |step, t, u| {
        if step % stride == 0 || step == steps {
            let f = Field::new(grid, u.to_vec())?;
            let edge = f.edge_amplitude(4);
            if edge > EDGE_WARNING && !warned {
                log::warn!("{label}: edge amplitude {edge:.2e} at t = {t}");
                warned = true;
            }
            masses.push(f.mass());
            times.push(t);
            fields.push(f);
        }
        Ok(())
    })?;
    Ok((times, fields, masses))
}

/// Solves `i u_t + u''/2 = V^eps u + N(u)` in the frame of `path`, with
/// `V^eps = (V(x + sqrt(eps) y) - V(x) - sqrt(eps) y V'(x)) / eps` evaluated
/// exactly at every grid point and half-step midpoint.
#[allow(clippy::too_many_arguments)]
pub fn solve_rescaled(
    a: &Field,
    eps: f64,
    alpha: f64,
    pot: &PotentialSpec,
    path: &TrajectoryPath,
    kernel: &KernelSpec,
    t_end: f64,
    dt: f64,
    opts: &RunOptions,
) -> Result<DirectRun> {
    check_eps(eps)?;
    check_alpha(alpha)?;
    if t_end > path.t_end() * (1.0 + 1e-12) {
        return Err(Error::OutOfRange {
            t: t_end,
            start: 0.0,
            end: path.t_end(),
        });
    }
    let grid = *a.grid();
    let stepper = SplitStep::new(grid, t_end, dt, 1.0)?;
    let n = grid.len();
    let mut model = RescaledModel {
        y: grid.points(),
        eps,
        pot,
        path,
        conv: rescaled_convolver(grid, kernel, eps, alpha)?,
        nonlocal: vec![0.0; n],
        density: vec![0.0; n],
        error: None,
    };
    let result = record(&stepper, a, &mut model, opts, "rescaled solve");
    if let Some(e) = model.error {
        return Err(e);
    }
    let (times, fields, masses) = result?;
    Ok(DirectRun {
        eps,
        frame: Frame::Rescaled(path.clone()),
        alpha,
        grid,
        dt: stepper.dt(),
        times,
        fields,
        masses,
    })
}

/// Physical-grid requirements for `packets` over `[0, t_end]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysicalRequirements {
    pub max_spacing: f64,
    pub half_width: f64,
    pub max_abs_xi: f64,
}

impl PhysicalRequirements {
    pub fn min_points(&self) -> usize {
        let raw = (2.0 * self.half_width / self.max_spacing).ceil() as usize;
        raw.max(16).next_power_of_two()
    }

    pub fn grid(&self) -> Result<Grid1D> {
        Grid1D::new(self.min_points(), self.half_width)
    }
}

/// Spacing `h <= min(eps / (4 max|xi|), sqrt(eps) w / 8)` and a half-width
/// covering every trajectory plus six widths of the spread packet.
pub fn physical_requirements(
    packets: &[PacketSpec],
    eps: f64,
    pot: &PotentialSpec,
    t_end: f64,
    dt: f64,
) -> Result<PhysicalRequirements> {
    check_eps(eps)?;
    if packets.is_empty() {
        return Err(Error::InvalidArgument("at least one packet is required".into()));
    }
    let se = eps.sqrt();
    let mut max_xi: f64 = 0.0;
    let mut reach: f64 = 0.0;
    let mut spacing = f64::INFINITY;
    for p in packets {
        let path = solve_trajectory(pot, p.x0, p.xi0, t_end, dt)?;
        let w = p.profile.width();
        let px = path.xi().iter().fold(0.0f64, |m, v| m.max(v.abs())) + se * p.profile.momentum();
        max_xi = max_xi.max(px);
        let spread = 6.0 * se * (w + p.profile.center() + t_end * (p.profile.momentum() + 1.0 / w));
        let xm = path.x().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        reach = reach.max(xm + spread);
        spacing = spacing.min(se * w / 8.0);
    }
    if max_xi > 0.0 {
        spacing = spacing.min(eps / (4.0 * max_xi));
    }
    Ok(PhysicalRequirements {
        max_spacing: spacing,
        half_width: reach,
        max_abs_xi: max_xi,
    })
}

/// Sum of the packets on `grid`.
pub fn assemble_initial(packets: &[PacketSpec], eps: f64, grid: Grid1D) -> Field {
    let se = eps.sqrt();
    let amp = eps.powf(-0.25);
    Field::from_fn(grid, |x| {
        packets
            .iter()
            .map(|p| {
                let y = (x - p.x0) / se;
                amp * p.profile.eval(y) * Complex64::from_polar(1.0, (x - p.x0) * p.xi0 / eps)
            })
            .sum()
    })
}

/// Solves `i psi_t = -(eps/2) psi'' + V psi / eps + eps^(alpha-1) (K * |psi|^2) psi`
/// from a sum of packets. `grid` must satisfy [`physical_requirements`].
#[allow(clippy::too_many_arguments)]
pub fn solve_physical(
    packets: &[PacketSpec],
    eps: f64,
    alpha: f64,
    pot: &PotentialSpec,
    kernel: &KernelSpec,
    t_end: f64,
    dt: f64,
    grid: Grid1D,
    opts: &RunOptions,
) -> Result<DirectRun> {
    check_alpha(alpha)?;
    kernel.validate()?;
    let req = physical_requirements(packets, eps, pot, t_end, dt)?;
    if grid.spacing() > req.max_spacing * (1.0 + 1e-12) {
        let required_n = ((2.0 * grid.half_width() / req.max_spacing).ceil() as usize).next_power_of_two();
        return Err(Error::Resolution {
            reason: format!(
                "spacing {:.3e} exceeds {:.3e} (eps = {eps}, max |xi| = {:.3})",
                grid.spacing(),
                req.max_spacing,
                req.max_abs_xi
            ),
            required_n,
        });
    }
    if grid.half_width() < req.half_width {
        log::warn!(
            "physical grid half-width {} is below the suggested {:.3}",
            grid.half_width(),
            req.half_width
        );
    }
    for (i, p) in packets.iter().enumerate() {
        for q in &packets[i + 1..] {
            let gap = (p.x0 - q.x0).abs() / eps.sqrt();
            let reach = 6.0 * (p.profile.width() + q.profile.width()) + p.profile.center() + q.profile.center();
            if gap < reach {
                log::warn!("packets at {} and {} overlap initially", p.x0, q.x0);
            }
        }
    }
    let conv = if kernel.is_zero() {
        None
    } else {
        let coef = eps.powf(alpha - 1.0);
        Some(match kernel {
            KernelSpec::Homogeneous { lambda, gamma } => Convolver::homogeneous(grid, coef * lambda, *gamma),
            KernelSpec::Smooth(s) => Convolver::smooth(grid, |x| coef * s.eval(x)),
        })
    };
    let n = grid.len();
    let mut model = PhysicalModel {
        x: grid.points(),
        inv_eps: 1.0 / eps,
        pot,
        conv,
        nonlocal: vec![0.0; n],
        density: vec![0.0; n],
    };
    let initial = assemble_initial(packets, eps, grid);
    let stepper = SplitStep::new(grid, t_end, dt, eps)?;
    let (times, fields, masses) = record(&stepper, &initial, &mut model, opts, "physical solve")?;
    Ok(DirectRun {
        eps,
        frame: Frame::Physical,
        alpha,
        grid,
        dt: stepper.dt(),
        times,
        fields,
        masses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::accumulate_action;
    use crate::envelope::{solve_hartree_envelope, solve_linear_envelope, QuadraticPotentialTrace};

    fn opts() -> RunOptions {
        RunOptions {
            snapshot_stride: 50,
            sigma_order: 0,
        }
    }

    fn path(pot: &PotentialSpec, x0: f64, xi0: f64, t: f64) -> TrajectoryPath {
        accumulate_action(&solve_trajectory(pot, x0, xi0, t, 5e-4).unwrap(), pot)
    }

    #[test]
    fn quadratic_potential_matches_linear_envelope() {
        let pot = PotentialSpec::harmonic(1.0);
        let p = path(&pot, 1.0, 0.5, 5.0);
        let g = Grid1D::default();
        let a = Profile::standard().to_field(g);
        let lin = solve_linear_envelope(&a, &QuadraticPotentialTrace::constant(1.0), 5.0, 1e-3, &opts()).unwrap();
        for eps in [1.0, 2f64.powi(-6), 2f64.powi(-12)] {
            let run = solve_rescaled(&a, eps, 2.0, &pot, &p, &KernelSpec::homogeneous(0.0, 0.5).unwrap(), 5.0, 1e-3, &opts()).unwrap();
            for (f, t) in run.fields.iter().zip(&run.times) {
                let d = f.sub(&lin.field_at(*t).unwrap()).unwrap().l2();
                assert!(d < 1e-6, "eps {eps} t {t}: {d}");
            }
        }
    }

    #[test]
    fn unit_eps_free_critical_matches_envelope() {
        let pot = PotentialSpec::zero();
        let p = path(&pot, 0.0, 0.0, 1.0);
        let g = Grid1D::default();
        let a = Profile::standard().to_field(g);
        let k = KernelSpec::homogeneous(1.0, 0.5).unwrap();
        let env = solve_hartree_envelope(&a, &QuadraticPotentialTrace::constant(0.0), &k, 1.0, 1e-3, &opts()).unwrap();
        let run = solve_rescaled(&a, 1.0, 1.25, &pot, &p, &k, 1.0, 1e-3, &opts()).unwrap();
        assert!(run.final_field().sub(env.final_field()).unwrap().l2() < 1e-10);
        assert!(run.mass_drift() < 1e-8);
    }

    #[test]
    fn rescaled_rejects_short_path() {
        let pot = PotentialSpec::zero();
        let p = path(&pot, 0.0, 0.0, 1.0);
        let a = Profile::standard().to_field(Grid1D::default());
        let r = solve_rescaled(&a, 0.1, 1.0, &pot, &p, &KernelSpec::homogeneous(0.0, 0.5).unwrap(), 2.0, 1e-3, &opts());
        assert!(matches!(r, Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn free_packet_centre_moves_with_momentum() {
        let eps = 2f64.powi(-4);
        let pot = PotentialSpec::zero();
        let k = KernelSpec::homogeneous(0.0, 0.5).unwrap();
        let packets = [PacketSpec {
            profile: Profile::standard(),
            x0: -1.0,
            xi0: 1.0,
        }];
        let grid = physical_requirements(&packets, eps, &pot, 2.0, 1e-3).unwrap().grid().unwrap();
        let run = solve_physical(&packets, eps, 1.0, &pot, &k, 2.0, 1e-3, grid, &opts()).unwrap();
        for (f, t) in run.fields.iter().zip(&run.times) {
            let centre = f.first_moment() / f.mass();
            assert!((centre - (-1.0 + t)).abs() < 1e-3 * (1.0 + t));
        }
        assert!(run.mass_drift() < 1e-8);
    }

    #[test]
    fn coarse_grid_names_required_size() {
        let eps = 2f64.powi(-6);
        let packets = [PacketSpec {
            profile: Profile::standard(),
            x0: 0.0,
            xi0: 2.0,
        }];
        let pot = PotentialSpec::zero();
        let k = KernelSpec::homogeneous(0.0, 0.5).unwrap();
        let g = Grid1D::new(64, 4.0).unwrap();
        match solve_physical(&packets, eps, 1.0, &pot, &k, 0.1, 1e-3, g, &opts()) {
            Err(Error::Resolution { required_n, .. }) => assert!(required_n >= 1024),
            other => panic!("expected resolution error, got {other:?}"),
        }
    }

    #[test]
    fn two_packets_conserve_mass() {
        let eps = 2f64.powi(-4);
        let pot = PotentialSpec::zero();
        let k = KernelSpec::homogeneous(1.0, 0.5).unwrap();
        let packets = [
            PacketSpec { profile: Profile::standard(), x0: -5.0, xi0: 2.0 },
            PacketSpec { profile: Profile::standard(), x0: 5.0, xi0: -1.0 },
        ];
        let grid = physical_requirements(&packets, eps, &pot, 1.0, 1e-3).unwrap().grid().unwrap();
        let run = solve_physical(&packets, eps, 1.25, &pot, &k, 1.0, 1e-3, grid, &opts()).unwrap();
        assert!((run.masses[0] - 2.0).abs() < 1e-8);
        assert!(run.mass_drift() < 1e-8);
    }

    #[test]
    fn smooth_shift_only_below_one() {
        let k = KernelSpec::Smooth(crate::spectral::SmoothKernel::gaussian(2.0, 1.0));
        assert_eq!(action_shift_rate(&k, 0.25, 1.0, 1.0), 0.0);
        assert!((action_shift_rate(&k, 0.25, 0.5, 1.0) - 1.0).abs() < 1e-15);
        assert!((action_shift_rate(&k, 0.25, 0.0, 3.0) - 6.0).abs() < 1e-15);
        assert_eq!(action_shift_rate(&KernelSpec::homogeneous(1.0, 0.5).unwrap(), 0.25, 0.0, 1.0), 0.0);
    }
}
