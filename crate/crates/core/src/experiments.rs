//! Parameter sweeps over `eps`: convergence rates, the `alpha = 1` phase
//! check, Ehrenfest times, two-packet superposition and the first-moment
//! check. Configuration is a single JSON document.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classical::{accumulate_action, solve_trajectory, BuiltinPotential, PotentialSpec, TrajectoryPath};
use crate::direct::{physical_requirements, solve_physical, solve_rescaled, PacketSpec, Profile};
use crate::envelope::{
    alpha1_envelope, moment_ode_residual, solve_hartree_envelope, solve_linear_envelope,
    solve_smooth_supercritical_envelope, EnvelopeRun, QuadraticPotentialTrace, RunOptions, SupercriticalRegime,
};
use crate::error::{Error, Result};
use crate::packet::{error_series, superposition_error_series, ActionChoice, ErrorNorm, ErrorSeries, NormSet, PacketFrame};
use crate::spectral::{BuiltinKernel, Field, Grid1D, KernelSpec};

const ALPHA_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Converge,
    PhaseCheck,
    Ehrenfest,
    Superpose,
    MomentCheck,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaName {
    Critical,
}

/// `1.25`, `"critical"` or `{"critical_plus": 0.25}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Value(f64),
    Named(AlphaName),
    CriticalPlus { critical_plus: f64 },
}

impl AlphaSpec {
    pub fn resolve(&self, kernel: &KernelSpec) -> f64 {
        match self {
            Self::Value(v) => *v,
            Self::Named(AlphaName::Critical) => kernel.critical_alpha(),
            Self::CriticalPlus { critical_plus } => kernel.critical_alpha() + critical_plus,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub n: usize,
    pub half_width: f64,
}

impl GridConfig {
    pub fn grid(&self) -> Result<Grid1D> {
        Grid1D::new(self.n, self.half_width)
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n: 512,
            half_width: 12.0,
        }
    }
}

/// One packet: Gaussian profile (`center`, `momentum`, `width`) launched
/// from `(x0, xi0)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PacketConfig {
    pub x0: f64,
    pub xi0: f64,
    pub center: f64,
    pub momentum: f64,
    pub width: f64,
}

impl Default for PacketConfig {
    fn default() -> Self {
        Self {
            x0: 1.0,
            xi0: 0.0,
            center: 0.0,
            momentum: 0.0,
            width: 1.0,
        }
    }
}

impl PacketConfig {
    pub fn profile(&self) -> Profile {
        Profile::Gaussian {
            center: self.center,
            momentum: self.momentum,
            width: self.width,
        }
    }

    pub fn spec(&self) -> PacketSpec {
        PacketSpec {
            profile: self.profile(),
            x0: self.x0,
            xi0: self.xi0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub potential: BuiltinPotential,
    pub kernel: BuiltinKernel,
    pub packets: Vec<PacketConfig>,
    pub eps: Vec<f64>,
    pub alpha: AlphaSpec,
    /// Simulation horizon.
    pub t_end: f64,
    /// Time at which rate fits read the error.
    pub t_fit: f64,
    pub norm: ErrorNorm,
    pub target_slope: Option<f64>,
    pub slope_tolerance: f64,
    pub grid: GridConfig,
    pub dt: f64,
    pub snapshot_stride: usize,
    /// Ehrenfest threshold as a multiple of `|a|`.
    pub threshold_factor: f64,
    /// Exponent of the interaction window; defaults to `gamma / (2 (1 + gamma))`.
    pub sigma: Option<f64>,
    /// Physical grid; sized automatically per `eps` when absent.
    pub physical_grid: Option<GridConfig>,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Converge,
            potential: BuiltinPotential::Cosine {
                amplitude: 1.0,
                wavenumber: 1.0,
            },
            kernel: BuiltinKernel::Homogeneous { lambda: 1.0, gamma: 0.5 },
            packets: vec![PacketConfig::default()],
            eps: (4..=10).map(|k| 2f64.powi(-k)).collect(),
            alpha: AlphaSpec::Named(AlphaName::Critical),
            t_end: 1.0,
            t_fit: 1.0,
            norm: ErrorNorm::L2,
            target_slope: Some(0.5),
            slope_tolerance: 0.15,
            grid: GridConfig::default(),
            dt: 1e-3,
            snapshot_stride: 10,
            threshold_factor: 0.1,
            sigma: None,
            physical_grid: None,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        KernelSpec::try_from(self.kernel)
    }

    pub fn potential_spec(&self) -> PotentialSpec {
        self.potential.into()
    }

    pub fn alpha_value(&self) -> Result<f64> {
        Ok(self.alpha.resolve(&self.kernel_spec()?))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        for (i, e) in self.eps.iter().enumerate() {
            if !(*e > 0.0 && *e <= 1.0) {
                return bad(format!("eps values must lie in (0, 1], got {e}"));
            }
            if self.eps[..i].contains(e) {
                return bad(format!("eps value {e} appears twice"));
            }
        }
        let fits = matches!(
            self.kind,
            ExperimentKind::Converge | ExperimentKind::Ehrenfest | ExperimentKind::Superpose
        );
        if fits && self.eps.len() < 4 {
            return bad(format!("a fit needs at least 4 eps values, got {}", self.eps.len()));
        }
        if !(self.dt > 0.0) || !(self.t_end >= 0.0) {
            return bad("dt must be positive and t_end nonnegative".into());
        }
        if self.t_fit > self.t_end + 1e-12 {
            return bad(format!("t_fit = {} exceeds t_end = {}", self.t_fit, self.t_end));
        }
        if self.packets.is_empty() {
            return bad("at least one packet is required".into());
        }
        if self.kind == ExperimentKind::Superpose && self.packets.len() != 2 {
            return bad("superposition needs exactly two packets".into());
        }
        self.grid.grid()?;
        self.kernel_spec()?;
        Ok(())
    }

    fn run_options(&self) -> RunOptions {
        RunOptions {
            snapshot_stride: self.snapshot_stride.max(1),
            sigma_order: 0,
        }
    }
}

/// Which envelope equation a `(kernel, alpha)` pair calls for.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RegimeChoice {
    Linear,
    Critical,
    Alpha1,
    AlphaHalf,
    Alpha0,
}

pub fn resolve_regime(kernel: &KernelSpec, alpha: f64) -> Result<RegimeChoice> {
    if kernel.is_zero() {
        return Ok(RegimeChoice::Linear);
    }
    let ac = kernel.critical_alpha();
    let near = |v: f64| (alpha - v).abs() < ALPHA_TOL;
    match kernel {
        KernelSpec::Homogeneous { .. } => {
            if near(ac) {
                Ok(RegimeChoice::Critical)
            } else if alpha > ac {
                Ok(RegimeChoice::Linear)
            } else {
                Err(Error::InvalidRegime(format!(
                    "alpha = {alpha} is below the critical value {ac} for a homogeneous kernel"
                )))
            }
        }
        KernelSpec::Smooth(_) => {
            if near(1.0) {
                Ok(RegimeChoice::Alpha1)
            } else if alpha > 1.0 {
                Ok(RegimeChoice::Linear)
            } else if near(0.5) {
                Ok(RegimeChoice::AlphaHalf)
            } else if near(0.0) {
                Ok(RegimeChoice::Alpha0)
            } else {
                Err(Error::InvalidRegime(format!(
                    "smooth kernels support alpha > 1, 1, 1/2 or 0, got {alpha}"
                )))
            }
        }
    }
}

/// Trajectory with action, sampled at half the PDE step so every splitting
/// midpoint is a sample.
pub fn packet_path(pot: &PotentialSpec, packet: &PacketConfig, t_end: f64, dt: f64) -> Result<TrajectoryPath> {
    Ok(accumulate_action(&solve_trajectory(pot, packet.x0, packet.xi0, t_end, 0.5 * dt)?, pot))
}

/// Envelope for `regime` along `path`.
#[allow(clippy::too_many_arguments)]
pub fn regime_envelope(
    regime: RegimeChoice,
    a: &Field,
    pot: &PotentialSpec,
    path: &TrajectoryPath,
    kernel: &KernelSpec,
    t_end: f64,
    dt: f64,
    opts: &RunOptions,
) -> Result<EnvelopeRun> {
    let trace = QuadraticPotentialTrace::from_path(path, pot);
    let mass = a.mass();
    match regime {
        RegimeChoice::Linear => solve_linear_envelope(a, &trace, t_end, dt, opts),
        RegimeChoice::Critical => solve_hartree_envelope(a, &trace, kernel, t_end, dt, opts),
        RegimeChoice::Alpha1 => {
            let k0 = kernel.smooth().map_or(0.0, |s| s.k0());
            alpha1_envelope(&solve_linear_envelope(a, &trace, t_end, dt, opts)?, k0, mass)
        }
        RegimeChoice::AlphaHalf => {
            solve_smooth_supercritical_envelope(a, &trace, kernel, mass, SupercriticalRegime::AlphaHalf, t_end, dt, opts)
        }
        RegimeChoice::Alpha0 => {
            solve_smooth_supercritical_envelope(a, &trace, kernel, mass, SupercriticalRegime::Alpha0, t_end, dt, opts)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Invalid,
}

/// Least-squares line `y = slope x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_line(points: &[(f64, f64)]) -> Result<LineFit> {
    if points.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            have: points.len(),
        });
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("fit abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    Ok(LineFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `(eps, error)` pairs sorted by `eps`.
    pub points: Vec<(f64, f64)>,
    pub target: Option<f64>,
    pub tolerance: f64,
    pub verdict: Verdict,
    /// Slope after dropping the largest `eps` (reported, not enforced).
    pub slope_without_largest: Option<f64>,
    pub failures: Vec<String>,
}

impl RateFit {
    /// Fits `ln(error)` against `ln(eps)`.
    pub fn from_points(mut points: Vec<(f64, f64)>, target: Option<f64>, tolerance: f64) -> Result<Self> {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.iter().any(|p| !(p.1 > 0.0 && p.1.is_finite())) {
            return Err(Error::InvalidArgument("rate fits need positive finite errors".into()));
        }
        let logs: Vec<(f64, f64)> = points.iter().map(|(e, v)| (e.ln(), v.ln())).collect();
        let line = fit_line(&logs)?;
        let slope_without_largest = if logs.len() > 2 {
            fit_line(&logs[..logs.len() - 1]).ok().map(|l| l.slope)
        } else {
            None
        };
        let verdict = match target {
            Some(t) if (line.slope - t).abs() <= tolerance => Verdict::Pass,
            Some(_) => Verdict::Fail,
            None => Verdict::Pass,
        };
        Ok(Self {
            slope: line.slope,
            intercept: line.intercept,
            r_squared: line.r_squared,
            points,
            target,
            tolerance,
            verdict,
            slope_without_largest,
            failures: Vec::new(),
        })
    }

    fn invalid(points: Vec<(f64, f64)>, target: Option<f64>, tolerance: f64, failures: Vec<String>) -> Self {
        let mut fit = Self::from_points(points.clone(), target, tolerance).unwrap_or(Self {
            slope: f64::NAN,
            intercept: f64::NAN,
            r_squared: 0.0,
            points,
            target,
            tolerance,
            verdict: Verdict::Invalid,
            slope_without_largest: None,
            failures: Vec::new(),
        });
        fit.verdict = Verdict::Invalid;
        fit.failures = failures;
        fit
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// Runs `f` over `items` in a pool of `jobs` threads (0 = rayon default),
/// keeping the input order.
pub fn in_pool<T, R, F>(jobs: usize, items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(|| items.par_iter().map(&f).collect()))
}

fn sorted_eps(config: &ExperimentConfig) -> Vec<f64> {
    let mut eps = config.eps.clone();
    eps.sort_by(|a, b| a.total_cmp(b));
    eps
}

fn partition<T>(eps: &[f64], results: Vec<Result<T>>) -> (Vec<(f64, T)>, Vec<String>) {
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (e, r) in eps.iter().zip(results) {
        match r {
            Ok(v) => ok.push((*e, v)),
            Err(err) => {
                log::error!("eps = {e}: {err}");
                failures.push(format!("eps = {e}: {err}"));
            }
        }
    }
    (ok, failures)
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub regime: String,
    pub alpha: f64,
    pub fit: RateFit,
    pub max_mass_drift: f64,
    #[serde(skip)]
    pub series: Vec<ErrorSeries>,
}

/// Single-packet rescaled-frame sweep: error against the regime's envelope at
/// `t_fit` for every `eps`, fitted in log-log.
pub fn run_convergence(config: &ExperimentConfig, jobs: usize) -> Result<ConvergenceReport> {
    config.validate()?;
    let kernel = config.kernel_spec()?;
    let alpha = config.alpha_value()?;
    let regime = resolve_regime(&kernel, alpha)?;
    let pot = config.potential_spec();
    let packet = config.packets[0];
    let grid = config.grid.grid()?;
    let a = packet.profile().to_field(grid);
    let opts = config.run_options();
    let path = packet_path(&pot, &packet, config.t_end, config.dt)?;
    let env = regime_envelope(regime, &a, &pot, &path, &kernel, config.t_end, config.dt, &opts)?;
    let norms = NormSet {
        h: config.norm == ErrorNorm::H,
        sigma_eps: config.norm == ErrorNorm::SigmaEps,
    };
    let eps_list = sorted_eps(config);
    let results = in_pool(jobs, &eps_list, |&eps| -> Result<(ErrorSeries, f64)> {
        let exact = solve_rescaled(&a, eps, alpha, &pot, &path, &kernel, config.t_end, config.dt, &opts)?;
        let frame = PacketFrame::new(eps, path.clone(), ActionChoice::Classical)?;
        let series = error_series(&exact, &env, &frame, norms)?;
        Ok((series, exact.mass_drift()))
    })?;
    let (ok, failures) = partition(&eps_list, results);
    let mut points = Vec::new();
    let mut series = Vec::new();
    let mut drift: f64 = env.mass_drift();
    for (eps, (s, d)) in ok {
        points.push((eps, s.value_at(config.t_fit, config.norm)?));
        drift = drift.max(d);
        series.push(s);
    }
    let fit = if failures.is_empty() {
        RateFit::from_points(points, config.target_slope, config.slope_tolerance)?
    } else {
        RateFit::invalid(points, config.target_slope, config.slope_tolerance, failures)
    };
    Ok(ConvergenceReport {
        regime: env.regime.label().to_string(),
        alpha,
        fit,
        max_mass_drift: drift,
        series,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PhaseRow {
    pub eps: f64,
    /// Error against the linear envelope without the phase.
    pub naive: f64,
    /// Error against the phase-shifted envelope.
    pub corrected: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PhaseReport {
    pub t: f64,
    pub norm_a: f64,
    pub k0_mass: f64,
    pub rows: Vec<PhaseRow>,
    pub failures: Vec<String>,
}

impl PhaseReport {
    /// `corrected < 0.05 |a|` and `naive > 1.5 |a|` for every `eps`.
    pub fn discriminates(&self) -> bool {
        self.failures.is_empty()
            && !self.rows.is_empty()
            && self
                .rows
                .iter()
                .all(|r| r.corrected < 0.05 * self.norm_a && r.naive > 1.5 * self.norm_a)
    }
}

/// Smooth kernel at `alpha = 1`: compares the exact solution with the linear
/// envelope with and without the phase `exp(-i t k0 |a|^2)` at `t_fit`.
pub fn run_alpha1_phase_discrimination(config: &ExperimentConfig, jobs: usize) -> Result<PhaseReport> {
    config.validate()?;
    let kernel = config.kernel_spec()?;
    let k0 = kernel
        .smooth()
        .ok_or_else(|| Error::InvalidRegime("phase check needs a smooth kernel".into()))?
        .k0();
    let pot = config.potential_spec();
    let packet = config.packets[0];
    let grid = config.grid.grid()?;
    let a = packet.profile().to_field(grid);
    let opts = config.run_options();
    let path = packet_path(&pot, &packet, config.t_end, config.dt)?;
    let trace = QuadraticPotentialTrace::from_path(&path, &pot);
    let lin = solve_linear_envelope(&a, &trace, config.t_end, config.dt, &opts)?;
    let shifted = alpha1_envelope(&lin, k0, a.mass())?;
    let eps_list = sorted_eps(config);
    let results = in_pool(jobs, &eps_list, |&eps| -> Result<PhaseRow> {
        let exact = solve_rescaled(&a, eps, 1.0, &pot, &path, &kernel, config.t_end, config.dt, &opts)?;
        let u = exact.field_at(config.t_fit)?;
        let naive = u.sub(&lin.field_at(config.t_fit)?)?.l2();
        let corrected = u.sub(&shifted.field_at(config.t_fit)?)?.l2();
        Ok(PhaseRow {
            eps,
            naive,
            corrected,
            ratio: naive / corrected,
        })
    })?;
    let (ok, failures) = partition(&eps_list, results);
    Ok(PhaseReport {
        t: config.t_fit,
        norm_a: a.l2(),
        k0_mass: k0 * a.mass(),
        rows: ok.into_iter().map(|(_, r)| r).collect(),
        failures,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EhrenfestRow {
    pub eps: f64,
    /// First threshold crossing; `None` when censored at the horizon.
    pub t_star: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EhrenfestReport {
    pub threshold: f64,
    pub horizon: f64,
    pub rows: Vec<EhrenfestRow>,
    /// `T* = slope ln(1/eps) + intercept` over uncensored rows.
    pub fit: Option<LineFit>,
    pub verdict: Verdict,
    pub failures: Vec<String>,
    #[serde(skip)]
    pub series: Vec<ErrorSeries>,
}

/// First time `values` reaches `threshold`, linearly interpolated.
pub fn first_crossing(times: &[f64], values: &[f64], threshold: f64) -> Option<f64> {
    if values.first().is_some_and(|v| *v >= threshold) {
        return times.first().copied();
    }
    for i in 1..values.len() {
        if values[i] >= threshold {
            let (v0, v1) = (values[i - 1], values[i]);
            let s = (threshold - v0) / (v1 - v0);
            return Some(times[i - 1] + s * (times[i] - times[i - 1]));
        }
    }
    None
}

/// Ehrenfest times `T*(eps)` for the configured threshold, fitted against
/// `ln(1/eps)`.
pub fn run_ehrenfest(config: &ExperimentConfig, jobs: usize) -> Result<EhrenfestReport> {
    config.validate()?;
    let kernel = config.kernel_spec()?;
    let alpha = config.alpha_value()?;
    let regime = resolve_regime(&kernel, alpha)?;
    let pot = config.potential_spec();
    let packet = config.packets[0];
    let grid = config.grid.grid()?;
    let a = packet.profile().to_field(grid);
    let opts = config.run_options();
    let path = packet_path(&pot, &packet, config.t_end, config.dt)?;
    let env = regime_envelope(regime, &a, &pot, &path, &kernel, config.t_end, config.dt, &opts)?;
    let threshold = config.threshold_factor * a.l2();
    let norms = NormSet {
        h: config.norm == ErrorNorm::H,
        sigma_eps: config.norm == ErrorNorm::SigmaEps,
    };
    let eps_list = sorted_eps(config);
    let results = in_pool(jobs, &eps_list, |&eps| -> Result<ErrorSeries> {
        let exact = solve_rescaled(&a, eps, alpha, &pot, &path, &kernel, config.t_end, config.dt, &opts)?;
        let frame = PacketFrame::new(eps, path.clone(), ActionChoice::Classical)?;
        error_series(&exact, &env, &frame, norms)
    })?;
    let (ok, failures) = partition(&eps_list, results);
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for (eps, s) in ok {
        let t_star = first_crossing(&s.times, s.column(config.norm)?, threshold);
        if t_star.is_none() {
            log::warn!("eps = {eps}: threshold {threshold:.3e} not reached by t = {}", config.t_end);
        }
        rows.push(EhrenfestRow { eps, t_star });
        series.push(s);
    }
    ehrenfest_report(threshold, config.t_end, rows, failures, series)
}

pub fn ehrenfest_report(
    threshold: f64,
    horizon: f64,
    rows: Vec<EhrenfestRow>,
    failures: Vec<String>,
    series: Vec<ErrorSeries>,
) -> Result<EhrenfestReport> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.t_star.map(|t| ((1.0 / r.eps).ln(), t)))
        .collect();
    let fit = if pts.len() >= 2 { Some(fit_line(&pts)?) } else { None };
    let verdict = if !failures.is_empty() {
        Verdict::Invalid
    } else {
        match fit {
            Some(f) if f.slope > 0.0 => Verdict::Pass,
            Some(_) => Verdict::Fail,
            None => Verdict::Invalid,
        }
    };
    Ok(EhrenfestReport {
        threshold,
        horizon,
        rows,
        fit,
        verdict,
        failures,
        series,
    })
}

/// Measure of `{t in [0, T]: |x1(t) - x2(t)| <= r}`, with both paths linear
/// between samples.
pub fn interaction_measure(p1: &TrajectoryPath, p2: &TrajectoryPath, radius: f64) -> Result<f64> {
    if p1.times() != p2.times() {
        return Err(Error::Mismatch("paths must share their time samples".into()));
    }
    let t = p1.times();
    let d: Vec<f64> = p1.x().iter().zip(p2.x()).map(|(a, b)| a - b).collect();
    let mut total = 0.0;
    for i in 1..t.len() {
        let (d0, d1, h) = (d[i - 1], d[i], t[i] - t[i - 1]);
        // d(s) = d0 + (d1 - d0) s / h; measure of |d| <= radius on [0, h].
        let slope = (d1 - d0) / h;
        if slope == 0.0 {
            if d0.abs() <= radius {
                total += h;
            }
            continue;
        }
        let (a, b) = ((-radius - d0) / slope, (radius - d0) / slope);
        let (lo, hi) = (a.min(b).max(0.0), a.max(b).min(h));
        if hi > lo {
            total += hi - lo;
        }
    }
    Ok(total)
}

#[derive(Clone, Debug, Serialize)]
pub struct InteractionRow {
    pub eps: f64,
    pub measured: f64,
    /// `2 eps^sigma / |xi1 - xi2|`, exact for straight-line crossings.
    pub predicted: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuperpositionReport {
    pub sigma: f64,
    pub fit: RateFit,
    pub interaction: Vec<InteractionRow>,
    pub max_mass_drift: f64,
    #[serde(skip)]
    pub series: Vec<ErrorSeries>,
}

impl SuperpositionReport {
    pub fn max_interaction_error(&self) -> f64 {
        self.interaction
            .iter()
            .map(|r| (r.measured - r.predicted).abs() / r.predicted)
            .fold(0.0, f64::max)
    }
}

/// Two packets in the physical frame against the sum of two independently
/// evolved packets, error at `t_fit`.
pub fn run_superposition(config: &ExperimentConfig, jobs: usize) -> Result<SuperpositionReport> {
    config.validate()?;
    let kernel = config.kernel_spec()?;
    let gamma = match kernel {
        KernelSpec::Homogeneous { gamma, .. } => gamma,
        KernelSpec::Smooth(_) => {
            return Err(Error::InvalidKernel("superposition needs a homogeneous kernel".into()))
        }
    };
    let alpha = config.alpha_value()?;
    let regime = resolve_regime(&kernel, alpha)?;
    let sigma = config.sigma.unwrap_or(gamma / (2.0 * (1.0 + gamma)));
    let pot = config.potential_spec();
    let grid = config.grid.grid()?;
    let opts = config.run_options();
    let mut envs = Vec::new();
    let mut paths = Vec::new();
    for p in &config.packets {
        let a = p.profile().to_field(grid);
        let path = packet_path(&pot, p, config.t_end, config.dt)?;
        envs.push(regime_envelope(regime, &a, &pot, &path, &kernel, config.t_end, config.dt, &opts)?);
        paths.push(path);
    }
    let specs: Vec<PacketSpec> = config.packets.iter().map(|p| p.spec()).collect();
    let dxi = (config.packets[0].xi0 - config.packets[1].xi0).abs();
    let eps_list = sorted_eps(config);
    let norms = NormSet {
        h: false,
        sigma_eps: config.norm == ErrorNorm::SigmaEps,
    };
    let steps = crate::classical::step_count(config.t_end, config.dt);
    let results = in_pool(jobs, &eps_list, |&eps| -> Result<(ErrorSeries, f64, f64)> {
        let xgrid = match config.physical_grid {
            Some(g) => g.grid()?,
            None => physical_requirements(&specs, eps, &pot, config.t_end, config.dt)?.grid()?,
        };
        let phys_opts = RunOptions {
            snapshot_stride: steps.max(1),
            sigma_order: 0,
        };
        let exact = solve_physical(&specs, eps, alpha, &pot, &kernel, config.t_end, config.dt, xgrid, &phys_opts)?;
        let frames: Vec<PacketFrame> = paths
            .iter()
            .map(|p| PacketFrame::new(eps, p.clone(), ActionChoice::Classical))
            .collect::<Result<_>>()?;
        let parts: Vec<(&EnvelopeRun, &PacketFrame)> = envs.iter().zip(&frames).collect();
        let series = superposition_error_series(&exact, &parts, norms, "superposition")?;
        let measured = interaction_measure(&paths[0], &paths[1], eps.powf(sigma))?;
        Ok((series, measured, exact.mass_drift()))
    })?;
    let (ok, failures) = partition(&eps_list, results);
    let mut points = Vec::new();
    let mut interaction = Vec::new();
    let mut series = Vec::new();
    let mut drift: f64 = 0.0;
    for (eps, (s, measured, d)) in ok {
        points.push((eps, s.value_at(config.t_fit, config.norm)?));
        interaction.push(InteractionRow {
            eps,
            measured,
            predicted: if dxi > 0.0 { 2.0 * eps.powf(sigma) / dxi } else { f64::NAN },
        });
        drift = drift.max(d);
        series.push(s);
    }
    let fit = if failures.is_empty() {
        RateFit::from_points(points, config.target_slope, config.slope_tolerance)?
    } else {
        RateFit::invalid(points, config.target_slope, config.slope_tolerance, failures)
    };
    Ok(SuperpositionReport {
        sigma,
        fit,
        interaction,
        max_mass_drift: drift,
        series,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentReport {
    pub max_residual: f64,
    pub max_abs_g: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
}

/// `alpha = 0` envelope and the residual of `G'' + Q G = 0`.
pub fn run_moment_check(config: &ExperimentConfig) -> Result<MomentReport> {
    config.validate()?;
    let kernel = config.kernel_spec()?;
    let pot = config.potential_spec();
    let packet = config.packets[0];
    let grid = config.grid.grid()?;
    let a = packet.profile().to_field(grid);
    let path = packet_path(&pot, &packet, config.t_end, config.dt)?;
    let trace = QuadraticPotentialTrace::from_path(&path, &pot);
    let run = solve_smooth_supercritical_envelope(
        &a,
        &trace,
        &kernel,
        a.mass(),
        SupercriticalRegime::Alpha0,
        config.t_end,
        config.dt,
        &config.run_options(),
    )?;
    let max_residual = moment_ode_residual(&run, &trace)?;
    let tolerance = 1e-3;
    Ok(MomentReport {
        max_residual,
        max_abs_g: run.moment_g.iter().fold(0.0, |m, g| m.max(g.abs())),
        tolerance,
        verdict: if max_residual < tolerance { Verdict::Pass } else { Verdict::Fail },
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    kind: ExperimentKind,
    crate_name: &'static str,
    version: &'static str,
    config: &'a ExperimentConfig,
}

/// Writes `manifest.json`, `fit.json` and the error series into `dir`.
pub fn persist<R: Serialize>(dir: &Path, config: &ExperimentConfig, fit: &R, series: &[ErrorSeries]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = Manifest {
        kind: config.kind,
        crate_name: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    std::fs::write(dir.join("fit.json"), serde_json::to_string_pretty(fit)? + "\n")?;
    for s in series {
        s.save(dir)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_spec_forms() {
        let k = KernelSpec::homogeneous(1.0, 0.5).unwrap();
        let parse = |s: &str| serde_json::from_str::<AlphaSpec>(s).unwrap().resolve(&k);
        assert_eq!(parse("0.75"), 0.75);
        assert_eq!(parse("\"critical\""), 1.25);
        assert_eq!(parse("{\"critical_plus\": 0.25}"), 1.5);
    }

    #[test]
    fn config_round_trips_and_validates() {
        let c = ExperimentConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&s).unwrap(), c);
        let partial = ExperimentConfig::from_json(r#"{"kind": "moment_check", "eps": []}"#).unwrap();
        assert_eq!(partial.kind, ExperimentKind::MomentCheck);
        assert!(ExperimentConfig::from_json(r#"{"eps": [0.5, 0.25]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"eps": [0.5, 0.25, 0.5, 0.1]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"eps": [2.0, 0.5, 0.25, 0.1]}"#).is_err());
    }

    #[test]
    fn regimes() {
        let h = KernelSpec::homogeneous(1.0, 0.5).unwrap();
        assert_eq!(resolve_regime(&h, 1.25).unwrap(), RegimeChoice::Critical);
        assert_eq!(resolve_regime(&h, 2.0).unwrap(), RegimeChoice::Linear);
        assert!(resolve_regime(&h, 1.0).is_err());
        let s = KernelSpec::try_from(BuiltinKernel::Gaussian { amplitude: 1.0, width: 1.0 }).unwrap();
        assert_eq!(resolve_regime(&s, 1.0).unwrap(), RegimeChoice::Alpha1);
        assert_eq!(resolve_regime(&s, 0.5).unwrap(), RegimeChoice::AlphaHalf);
        assert_eq!(resolve_regime(&s, 0.0).unwrap(), RegimeChoice::Alpha0);
        assert!(resolve_regime(&s, 0.3).is_err());
        let none = KernelSpec::try_from(BuiltinKernel::None).unwrap();
        assert_eq!(resolve_regime(&none, 0.3).unwrap(), RegimeChoice::Linear);
    }

    #[test]
    fn fits_recover_exact_power_laws() {
        let pts: Vec<(f64, f64)> = (3..8).map(|k| 2f64.powi(-k)).map(|e| (e, 3.0 * e.powf(0.4))).collect();
        let fit = RateFit::from_points(pts, Some(0.5), 0.15).unwrap();
        assert!((fit.slope - 0.4).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(fit.passed());
        assert!((fit.slope_without_largest.unwrap() - 0.4).abs() < 1e-12);
        assert!(RateFit::from_points(vec![(0.1, 0.0), (0.2, 1.0)], None, 0.1).is_err());
    }

    #[test]
    fn crossing_interpolates_and_is_monotone_in_threshold() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let v = [0.0, 0.1, 0.3, 0.2];
        assert!((first_crossing(&t, &v, 0.2).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(first_crossing(&t, &v, 0.5), None);
        let mut last = 0.0;
        for th in [0.05, 0.1, 0.2, 0.3] {
            let c = first_crossing(&t, &v, th).unwrap();
            assert!(c >= last);
            last = c;
        }
    }

    #[test]
    fn straight_crossing_measure() {
        let pot = PotentialSpec::zero();
        let p1 = solve_trajectory(&pot, -5.0, 2.0, 6.0, 1e-3).unwrap();
        let p2 = solve_trajectory(&pot, 5.0, -1.0, 6.0, 1e-3).unwrap();
        for r in [0.1, 0.3, 0.7] {
            let m = interaction_measure(&p1, &p2, r).unwrap();
            assert!((m - 2.0 * r / 3.0).abs() < 1e-9, "{m}");
        }
        let p3 = solve_trajectory(&pot, 5.0, 2.0, 6.0, 1e-3).unwrap();
        assert_eq!(interaction_measure(&p1, &p3, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn censored_rows_leave_the_fit() {
        let rows = vec![
            EhrenfestRow { eps: 0.1, t_star: Some(1.0) },
            EhrenfestRow { eps: 0.01, t_star: Some(2.0) },
            EhrenfestRow { eps: 0.001, t_star: None },
        ];
        let r = ehrenfest_report(0.1, 5.0, rows, Vec::new(), Vec::new()).unwrap();
        let f = r.fit.unwrap();
        assert!((f.slope - 1.0 / 10f64.ln()).abs() < 1e-12);
        assert_eq!(r.verdict, Verdict::Pass);
        let all_censored = vec![EhrenfestRow { eps: 0.1, t_star: None }];
        assert_eq!(ehrenfest_report(0.1, 5.0, all_censored, Vec::new(), Vec::new()).unwrap().verdict, Verdict::Invalid);
    }

    #[test]
    fn moment_check_on_centred_data() {
        let c = ExperimentConfig {
            kind: ExperimentKind::MomentCheck,
            potential: BuiltinPotential::Harmonic { omega: 1.0 },
            kernel: BuiltinKernel::Gaussian { amplitude: 1.0, width: 1.0 },
            packets: vec![PacketConfig { x0: 0.0, ..Default::default() }],
            eps: Vec::new(),
            t_end: 1.0,
            t_fit: 1.0,
            grid: GridConfig { n: 1024, half_width: 32.0 },
            ..Default::default()
        };
        let r = run_moment_check(&c).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert!(r.max_abs_g < 1e-8);
    }

    #[test]
    fn persist_writes_manifest_fit_and_series() {
        let dir = std::env::temp_dir().join(format!("semiclassical-persist-{}", std::process::id()));
        let c = ExperimentConfig::default();
        let fit = RateFit::from_points(vec![(0.1, 0.3), (0.01, 0.1)], None, 0.1).unwrap();
        let s = ErrorSeries {
            regime: "critical".into(),
            eps: 0.0625,
            times: vec![0.0, 1.0],
            l2_err: vec![0.0, 0.1],
            h_err: None,
            sigma_eps_err: None,
        };
        persist(&dir, &c, &fit, &[s]).unwrap();
        let fit_json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("fit.json")).unwrap()).unwrap();
        for key in ["slope", "intercept", "r_squared", "target", "verdict"] {
            assert!(fit_json.get(key).is_some(), "{key}");
        }
        assert!(dir.join("manifest.json").exists());
        assert!(dir.join("errors_critical_eps4.csv").exists());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
