//! Classical Hamiltonian flow `x' = xi, xi' = -dV/dx(t, x)` and the actions
//! carried along it.
//!
//! Trajectories are integrated with fixed-step RK4 so that their samples line
//! up with the time grids of the wave solvers. Actions are accumulated by
//! composite Simpson quadrature on the same samples.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::KernelSpec;

/// Magnitude beyond which a trajectory is treated as diverged.
const OVERFLOW_GUARD: f64 = 1e150;

/// Potentials with closed-form derivatives. All of them are at most
/// quadratic in space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BuiltinPotential {
    Zero,
    /// `V = kappa * x`
    Linear { kappa: f64 },
    /// `V = omega^2 x^2 / 2`
    Harmonic { omega: f64 },
    /// `V = -omega^2 x^2 / 2`
    InvertedHarmonic { omega: f64 },
    /// `V = amplitude * cos(wavenumber * x)`
    Cosine { amplitude: f64, wavenumber: f64 },
}

type ScalarField = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// User supplied potential with analytic first and second space derivatives.
#[derive(Clone)]
pub struct CustomPotential {
    pub eval: ScalarField,
    pub grad: ScalarField,
    pub hess: ScalarField,
}

/// External potential `V(t, x)` together with its gradient and Hessian.
#[derive(Clone)]
pub enum PotentialSpec {
    Builtin(BuiltinPotential),
    /// The caller is responsible for the potential being smooth with bounded
    /// second and higher derivatives; only a sampled check is available.
    Custom(CustomPotential),
}

impl fmt::Debug for PotentialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Builtin(b) => write!(f, "PotentialSpec::{b:?}"),
            Self::Custom(_) => write!(f, "PotentialSpec::Custom"),
        }
    }
}

impl From<BuiltinPotential> for PotentialSpec {
    fn from(b: BuiltinPotential) -> Self {
        Self::Builtin(b)
    }
}

impl PotentialSpec {
    pub fn zero() -> Self {
        BuiltinPotential::Zero.into()
    }

    pub fn harmonic(omega: f64) -> Self {
        BuiltinPotential::Harmonic { omega }.into()
    }

    pub fn cosine(amplitude: f64, wavenumber: f64) -> Self {
        BuiltinPotential::Cosine { amplitude, wavenumber }.into()
    }

    pub fn custom<E, G, H>(eval: E, grad: G, hess: H) -> Self
    where
        E: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        H: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self::Custom(CustomPotential {
            eval: Arc::new(eval),
            grad: Arc::new(grad),
            hess: Arc::new(hess),
        })
    }

    pub fn builtin(&self) -> Option<BuiltinPotential> {
        match self {
            Self::Builtin(b) => Some(*b),
            Self::Custom(_) => None,
        }
    }

    pub fn is_time_independent(&self) -> bool {
        matches!(self, Self::Builtin(_))
    }

    /// True when the potential is a polynomial of degree at most two, so
    /// that its Taylor expansion to second order is exact.
    pub fn is_exactly_quadratic(&self) -> bool {
        match self {
            Self::Builtin(BuiltinPotential::Cosine { amplitude, wavenumber }) => {
                *amplitude == 0.0 || *wavenumber == 0.0
            }
            Self::Builtin(_) => true,
            Self::Custom(_) => false,
        }
    }

    pub fn value(&self, t: f64, x: f64) -> f64 {
        match self {
            Self::Builtin(b) => match *b {
                BuiltinPotential::Zero => 0.0,
                BuiltinPotential::Linear { kappa } => kappa * x,
                BuiltinPotential::Harmonic { omega } => 0.5 * omega * omega * x * x,
                BuiltinPotential::InvertedHarmonic { omega } => -0.5 * omega * omega * x * x,
                BuiltinPotential::Cosine { amplitude, wavenumber } => {
                    amplitude * (wavenumber * x).cos()
                }
            },
            Self::Custom(c) => (c.eval)(t, x),
        }
    }

    pub fn grad(&self, t: f64, x: f64) -> f64 {
        match self {
            Self::Builtin(b) => match *b {
                BuiltinPotential::Zero => 0.0,
                BuiltinPotential::Linear { kappa } => kappa,
                BuiltinPotential::Harmonic { omega } => omega * omega * x,
                BuiltinPotential::InvertedHarmonic { omega } => -omega * omega * x,
                BuiltinPotential::Cosine { amplitude, wavenumber } => {
                    -amplitude * wavenumber * (wavenumber * x).sin()
                }
            },
            Self::Custom(c) => (c.grad)(t, x),
        }
    }

    pub fn hess(&self, t: f64, x: f64) -> f64 {
        match self {
            Self::Builtin(b) => match *b {
                BuiltinPotential::Zero | BuiltinPotential::Linear { .. } => 0.0,
                BuiltinPotential::Harmonic { omega } => omega * omega,
                BuiltinPotential::InvertedHarmonic { omega } => -omega * omega,
                BuiltinPotential::Cosine { amplitude, wavenumber } => {
                    -amplitude * wavenumber * wavenumber * (wavenumber * x).cos()
                }
            },
            Self::Custom(c) => (c.hess)(t, x),
        }
    }

    /// Compares `grad` and `hess` with central differences of `value` at the
    /// given points. Returns the worst relative discrepancy.
    pub fn derivative_mismatch(&self, points: &[(f64, f64)]) -> f64 {
        let mut worst: f64 = 0.0;
        for &(t, x) in points {
            let h = 1e-4 * (1.0 + x.abs());
            let fd_grad = (self.value(t, x + h) - self.value(t, x - h)) / (2.0 * h);
            let fd_hess = (self.grad(t, x + h) - self.grad(t, x - h)) / (2.0 * h);
            let g = self.grad(t, x);
            let q = self.hess(t, x);
            let scale_g = 1.0 + g.abs().max(self.value(t, x).abs());
            let scale_q = 1.0 + q.abs().max(g.abs());
            worst = worst
                .max((fd_grad - g).abs() / scale_g)
                .max((fd_hess - q).abs() / scale_q);
        }
        worst
    }

    /// Largest sampled `|d^2V/dx^2|`. Finite for every admissible potential.
    pub fn hessian_bound(&self, points: &[(f64, f64)]) -> f64 {
        points
            .iter()
            .map(|&(t, x)| self.hess(t, x).abs())
            .fold(0.0, f64::max)
    }
}

impl FromStr for BuiltinPotential {
    type Err = Error;

    /// Parses `zero`, `linear:K`, `harmonic:W`, `inverted:W`, `cos:A,K`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), parse_numbers(a)?),
            None => (s.trim(), Vec::new()),
        };
        let want = |k: usize| -> Result<()> {
            if args.len() == k {
                Ok(())
            } else {
                Err(Error::Parse(format!("potential `{name}` takes {k} argument(s)")))
            }
        };
        match name {
            "zero" | "free" => {
                want(0)?;
                Ok(Self::Zero)
            }
            "linear" => {
                want(1)?;
                Ok(Self::Linear { kappa: args[0] })
            }
            "harmonic" => {
                want(1)?;
                Ok(Self::Harmonic { omega: args[0] })
            }
            "inverted" | "inverted_harmonic" => {
                want(1)?;
                Ok(Self::InvertedHarmonic { omega: args[0] })
            }
            "cos" | "cosine" => {
                want(2)?;
                Ok(Self::Cosine {
                    amplitude: args[0],
                    wavenumber: args[1],
                })
            }
            other => Err(Error::Parse(format!("unknown potential `{other}`"))),
        }
    }
}

pub(crate) fn parse_numbers(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("`{p}`: {e}")))
        })
        .collect()
}

/// Which smooth-kernel regime shifts the action.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ActionRegime {
    /// `alpha = 0`: `S_mod = S - t K(0) |a|^2`
    Alpha0,
    /// `alpha = 1/2`: `S_mod = S - t sqrt(eps) K(0) |a|^2`
    AlphaHalf { eps: f64 },
}

impl ActionRegime {
    fn weight(&self) -> f64 {
        match *self {
            Self::Alpha0 => 1.0,
            Self::AlphaHalf { eps } => eps.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModifiedAction {
    pub regime: ActionRegime,
    /// `S - S_mod = rate * t`
    pub rate: f64,
    pub values: Vec<f64>,
}

/// Sampled solution of the Hamiltonian flow on a uniform time grid.
#[derive(Clone, Debug)]
pub struct TrajectoryPath {
    times: Vec<f64>,
    x: Vec<f64>,
    xi: Vec<f64>,
    /// `dV/dx` along the path, used for Hermite interpolation of `xi`.
    force_grad: Vec<f64>,
    action: Option<Vec<f64>>,
    lagrangian: Option<Vec<f64>>,
    modified: Option<ModifiedAction>,
}

/// Fitted bound `|x(t)| + |xi(t)| <= c * exp(rate * t)` over a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrowthFit {
    pub c: f64,
    pub rate: f64,
}

impl TrajectoryPath {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn action(&self) -> Option<&[f64]> {
        self.action.as_deref()
    }

    pub fn modified(&self) -> Option<&ModifiedAction> {
        self.modified.as_ref()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    fn step(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }

    /// Locates `t` on the grid: `(i, s)` with `t = t_i + s * step`, `s` in [0, 1].
    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let end = self.t_end();
        let tol = 1e-9 * (1.0 + end.abs());
        if !(t >= -tol && t <= end + tol) {
            return Err(Error::OutOfRange { t, start: 0.0, end });
        }
        if self.times.len() < 2 {
            return Ok((0, 0.0));
        }
        let h = self.step();
        let pos = (t.clamp(0.0, end) / h).max(0.0);
        let i = (pos.floor() as usize).min(self.times.len() - 2);
        let s = ((t - self.times[i]) / h).clamp(0.0, 1.0);
        Ok((i, s))
    }

    /// Cubic Hermite interpolation of `(x, xi)` at `t`.
    pub fn state_at(&self, t: f64) -> Result<(f64, f64)> {
        let (i, s) = self.locate(t)?;
        if self.times.len() < 2 {
            return Ok((self.x[0], self.xi[0]));
        }
        let h = self.step();
        let x = hermite(self.x[i], self.xi[i], self.x[i + 1], self.xi[i + 1], h, s);
        let xi = hermite(
            self.xi[i],
            -self.force_grad[i],
            self.xi[i + 1],
            -self.force_grad[i + 1],
            h,
            s,
        );
        Ok((x, xi))
    }

    /// Classical action at `t`; requires [`accumulate_action`] first.
    pub fn action_at(&self, t: f64) -> Result<f64> {
        let (s_vals, l_vals) = match (&self.action, &self.lagrangian) {
            (Some(s), Some(l)) => (s, l),
            _ => return Err(Error::InvalidArgument("action not accumulated".into())),
        };
        let (i, s) = self.locate(t)?;
        if self.times.len() < 2 {
            return Ok(s_vals[0]);
        }
        Ok(hermite(s_vals[i], l_vals[i], s_vals[i + 1], l_vals[i + 1], self.step(), s))
    }

    /// Modified action at `t`; requires [`modified_action`] first.
    pub fn modified_action_at(&self, t: f64) -> Result<f64> {
        let m = self
            .modified
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("modified action not computed".into()))?;
        Ok(self.action_at(t)? - m.rate * t)
    }

    /// Energy `xi^2/2 + V(t, x)` at every sample.
    pub fn energy(&self, pot: &PotentialSpec) -> Vec<f64> {
        self.times
            .iter()
            .zip(self.x.iter().zip(&self.xi))
            .map(|(&t, (&x, &xi))| 0.5 * xi * xi + pot.value(t, x))
            .collect()
    }

    /// Least-squares rate of `ln(|x| + |xi|)` against time, clamped at zero,
    /// with the smallest prefactor that bounds every sample.
    pub fn growth_fit(&self) -> GrowthFit {
        let mag: Vec<f64> = self
            .x
            .iter()
            .zip(&self.xi)
            .map(|(x, xi)| x.abs() + xi.abs())
            .collect();
        fit_exponential_envelope(&self.times, &mag)
    }
}

/// Fits `values(t) <= c * exp(rate * t)`: `rate` from least squares on the
/// logarithm (floored at zero), then `c` as the tightest prefactor.
pub fn fit_exponential_envelope(times: &[f64], values: &[f64]) -> GrowthFit {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > 0.0 && v.is_finite())
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    let rate = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let mv = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - mv)).sum();
        if sxx > 0.0 {
            (sxy / sxx).max(0.0)
        } else {
            0.0
        }
    } else {
        0.0
    };
    let c = times
        .iter()
        .zip(values)
        .map(|(t, v)| v * (-rate * t).exp())
        .fold(0.0, f64::max);
    GrowthFit { c, rate }
}

fn hermite(p0: f64, m0: f64, p1: f64, m1: f64, h: f64, s: f64) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    h00 * p0 + h10 * h * m0 + h01 * p1 + h11 * h * m1
}

/// Number of uniform steps covering `[0, t_end]` with step at most `dt`
/// (exactly `dt` when `t_end` is a multiple of it).
pub fn step_count(t_end: f64, dt: f64) -> usize {
    let raw = t_end / dt;
    let n = raw.round();
    if (raw - n).abs() <= 1e-9 * raw.max(1.0) {
        n as usize
    } else {
        raw.ceil() as usize
    }
}

/// Integrates the Hamiltonian flow with classical RK4 at fixed step.
pub fn solve_trajectory(
    pot: &PotentialSpec,
    x0: f64,
    xi0: f64,
    t_end: f64,
    dt: f64,
) -> Result<TrajectoryPath> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!("t_end must be >= 0, got {t_end}")));
    }
    if !(x0.is_finite() && xi0.is_finite()) {
        return Err(Error::InvalidArgument("initial state must be finite".into()));
    }
    let steps = step_count(t_end, dt);
    let h = if steps == 0 { 0.0 } else { t_end / steps as f64 };
    let mut times = Vec::with_capacity(steps + 1);
    let mut xs = Vec::with_capacity(steps + 1);
    let mut xis = Vec::with_capacity(steps + 1);
    let mut grads = Vec::with_capacity(steps + 1);
    let (mut x, mut xi) = (x0, xi0);
    times.push(0.0);
    xs.push(x);
    xis.push(xi);
    grads.push(pot.grad(0.0, x));
    for k in 0..steps {
        let t = k as f64 * h;
        let k1x = xi;
        let k1p = -pot.grad(t, x);
        let k2x = xi + 0.5 * h * k1p;
        let k2p = -pot.grad(t + 0.5 * h, x + 0.5 * h * k1x);
        let k3x = xi + 0.5 * h * k2p;
        let k3p = -pot.grad(t + 0.5 * h, x + 0.5 * h * k2x);
        let k4x = xi + h * k3p;
        let k4p = -pot.grad(t + h, x + h * k3x);
        x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        xi += h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        let t_next = (k + 1) as f64 * h;
        if !(x.is_finite() && xi.is_finite()) || x.abs() > OVERFLOW_GUARD || xi.abs() > OVERFLOW_GUARD
        {
            return Err(Error::NonFinite {
                what: "trajectory diverged".into(),
                last_valid_time: t,
            });
        }
        times.push(t_next);
        xs.push(x);
        xis.push(xi);
        grads.push(pot.grad(t_next, x));
    }
    Ok(TrajectoryPath {
        times,
        x: xs,
        xi: xis,
        force_grad: grads,
        action: None,
        lagrangian: None,
        modified: None,
    })
}

/// Fills the classical action `S(t) = int_0^t (xi^2/2 - V(s, x(s))) ds`.
///
/// Even samples use composite Simpson; odd samples add the last interval
/// with the three-point rule `h/12 (-f0 + 8 f1 + 5 f2)`.
pub fn accumulate_action(path: &TrajectoryPath, pot: &PotentialSpec) -> TrajectoryPath {
    let lag: Vec<f64> = path
        .times
        .iter()
        .zip(path.x.iter().zip(&path.xi))
        .map(|(&t, (&x, &xi))| 0.5 * xi * xi - pot.value(t, x))
        .collect();
    let n = lag.len();
    let h = path.step();
    let mut s = vec![0.0; n];
    if n >= 2 {
        // Single interval: trapezoid corrected by endpoint derivatives is not
        // available without a third point, so use the linear rule.
        if n == 2 {
            s[1] = 0.5 * h * (lag[0] + lag[1]);
        } else {
            s[1] = h / 12.0 * (5.0 * lag[0] + 8.0 * lag[1] - lag[2]);
            for i in 2..n {
                if i % 2 == 0 {
                    s[i] = s[i - 2] + h / 3.0 * (lag[i - 2] + 4.0 * lag[i - 1] + lag[i]);
                } else {
                    s[i] = s[i - 1] + h / 12.0 * (-lag[i - 2] + 8.0 * lag[i - 1] + 5.0 * lag[i]);
                }
            }
        }
    }
    let mut out = path.clone();
    out.action = Some(s);
    out.lagrangian = Some(lag);
    out
}

/// Shifts the action by the constant self-interaction of a smooth kernel:
/// `S_mod(t) = S(t) - t * w * K(0) * mass_sq`, with `w = 1` for `alpha = 0`
/// and `w = sqrt(eps)` for `alpha = 1/2`.
pub fn modified_action(
    path: &TrajectoryPath,
    kernel: &KernelSpec,
    mass_sq: f64,
    regime: ActionRegime,
) -> Result<TrajectoryPath> {
    let k0 = match kernel {
        KernelSpec::Smooth(s) => s.k0(),
        KernelSpec::Homogeneous { .. } => {
            return Err(Error::InvalidRegime(
                "modified action needs a smooth kernel".into(),
            ))
        }
    };
    if let ActionRegime::AlphaHalf { eps } = regime {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::InvalidArgument(format!("eps must lie in (0, 1], got {eps}")));
        }
    }
    let s = path
        .action
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("action not accumulated".into()))?;
    let rate = regime.weight() * k0 * mass_sq;
    let values = s
        .iter()
        .zip(&path.times)
        .map(|(s, t)| s - t * rate)
        .collect();
    let mut out = path.clone();
    out.modified = Some(ModifiedAction {
        regime,
        rate,
        values,
    });
    Ok(out)
}
