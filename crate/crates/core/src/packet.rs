//! Wave packets `eps^(-1/4) u((x - x(t))/sqrt(eps)) exp(i (S + xi (x - x(t)))/eps)`,
//! the scaled operators `A = sqrt(eps) d_x - i xi / sqrt(eps)` and
//! `B = (x - x(t)) / sqrt(eps)`, and error measurements.

use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::classical::TrajectoryPath;
use crate::direct::{DirectRun, Frame};
use crate::envelope::{EnvelopeRegime, EnvelopeRun, QuadraticPotentialTrace, EDGE_WARNING};
use crate::error::{Error, Result};
use crate::spectral::io::fmt_f64;
use crate::spectral::{Convolver, Field, Grid1D, SpectralOps};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionChoice {
    Classical,
    Modified,
}

#[derive(Clone, Debug)]
pub struct PacketFrame {
    pub eps: f64,
    pub path: TrajectoryPath,
    pub action_choice: ActionChoice,
}

impl PacketFrame {
    pub fn new(eps: f64, path: TrajectoryPath, action_choice: ActionChoice) -> Result<Self> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::InvalidArgument(format!("eps must lie in (0, 1], got {eps}")));
        }
        if path.action().is_none() {
            return Err(Error::InvalidArgument("packet frame needs the action along the path".into()));
        }
        if action_choice == ActionChoice::Modified && path.modified().is_none() {
            return Err(Error::InvalidArgument("modified action requested but not computed".into()));
        }
        Ok(Self {
            eps,
            path,
            action_choice,
        })
    }

    /// `(x(t), xi(t), S(t))` with the selected action.
    pub fn state(&self, t: f64) -> Result<(f64, f64, f64)> {
        let (x, xi) = self.path.state_at(t)?;
        let s = match self.action_choice {
            ActionChoice::Classical => self.path.action_at(t)?,
            ActionChoice::Modified => self.path.modified_action_at(t)?,
        };
        Ok((x, xi, s))
    }
}

/// Four-point Lagrange interpolation on the grid of `f`, zero outside it.
pub fn sample_cubic(f: &Field, y: f64) -> Complex64 {
    let g = f.grid();
    let n = g.len() as i64;
    let s = (y + g.half_width()) / g.spacing();
    if !s.is_finite() || s < -2.0 || s > (n + 1) as f64 {
        return Complex64::new(0.0, 0.0);
    }
    let j = s.floor();
    let t = s - j;
    let j = j as i64;
    let w = [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ];
    let vals = f.values();
    let mut acc = Complex64::new(0.0, 0.0);
    for (k, wk) in w.iter().enumerate() {
        let idx = j - 1 + k as i64;
        if (0..n).contains(&idx) {
            acc += vals[idx as usize] * wk;
        }
    }
    acc
}

/// `phi(t, x)` on `x_grid` from the envelope `u` at time `t`.
pub fn assemble(u: &Field, frame: &PacketFrame, t: f64, x_grid: Grid1D) -> Result<Field> {
    let (x0, xi, s) = frame.state(t)?;
    let eps = frame.eps;
    let se = eps.sqrt();
    let lx = x_grid.half_width();
    for (j, v) in u.values().iter().enumerate() {
        let x = x0 + se * u.grid().point(j);
        if (x < -lx || x >= lx) && v.norm() > EDGE_WARNING {
            return Err(Error::Support(format!(
                "envelope amplitude {:.2e} at x = {x:.3} lies outside [-{lx}, {lx})",
                v.norm()
            )));
        }
    }
    let amp = eps.powf(-0.25);
    Ok(Field::from_fn(x_grid, |x| {
        let v = sample_cubic(u, (x - x0) / se);
        if v == Complex64::new(0.0, 0.0) {
            return v;
        }
        amp * v * Complex64::from_polar(1.0, (s + xi * (x - x0)) / eps)
    }))
}

/// `A f = sqrt(eps) f' - i xi(t) / sqrt(eps) f`.
pub fn apply_a(f: &Field, frame: &PacketFrame, t: f64) -> Result<Field> {
    let (_, xi, _) = frame.state(t)?;
    let se = frame.eps.sqrt();
    let ops = SpectralOps::new(*f.grid());
    let d = ops.derivative(f, 1);
    let c = Complex64::new(0.0, -xi / se);
    Field::new(
        *f.grid(),
        d.values().iter().zip(f.values()).map(|(d, v)| se * d + c * v).collect(),
    )
}

/// `B f = (x - x(t)) / sqrt(eps) f`.
pub fn apply_b(f: &Field, frame: &PacketFrame, t: f64) -> Result<Field> {
    let (x0, _, _) = frame.state(t)?;
    let se = frame.eps.sqrt();
    let g = *f.grid();
    Field::new(
        g,
        f.values()
            .iter()
            .enumerate()
            .map(|(j, v)| v * ((g.point(j) - x0) / se))
            .collect(),
    )
}

/// `|f| + |A f| + |B f|`.
pub fn norm_h(f: &Field, frame: &PacketFrame, t: f64) -> Result<f64> {
    Ok(f.l2() + apply_a(f, frame, t)?.l2() + apply_b(f, frame, t)?.l2())
}

/// `|f| + |eps f'| + |x f|`.
pub fn norm_sigma_eps(f: &Field, eps: f64) -> f64 {
    let ops = SpectralOps::new(*f.grid());
    let mut d = ops.derivative(f, 1);
    d.scale(Complex64::new(eps, 0.0));
    f.l2() + d.l2() + f.times_position().l2()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NormSet {
    pub h: bool,
    pub sigma_eps: bool,
}

impl NormSet {
    pub fn all() -> Self {
        Self {
            h: true,
            sigma_eps: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorSeries {
    pub regime: String,
    pub eps: f64,
    pub times: Vec<f64>,
    pub l2_err: Vec<f64>,
    pub h_err: Option<Vec<f64>>,
    pub sigma_eps_err: Option<Vec<f64>>,
}

/// `k` for `eps = 2^-k`, otherwise the plain decimal value.
pub fn eps_label(eps: f64) -> String {
    let k = -eps.log2();
    if (k - k.round()).abs() < 1e-9 {
        format!("{}", k.round() as i64)
    } else {
        format!("{eps}")
    }
}

impl ErrorSeries {
    pub fn file_name(&self) -> String {
        format!("errors_{}_eps{}.csv", self.regime, eps_label(self.eps))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::from("t,l2_err");
        if self.h_err.is_some() {
            header.push_str(",h_err");
        }
        if self.sigma_eps_err.is_some() {
            header.push_str(",sigma_eps_err");
        }
        writeln!(w, "{header}")?;
        for (i, t) in self.times.iter().enumerate() {
            let mut line = format!("{},{}", fmt_f64(*t), fmt_f64(self.l2_err[i]));
            if let Some(h) = &self.h_err {
                line.push(',');
                line.push_str(&fmt_f64(h[i]));
            }
            if let Some(s) = &self.sigma_eps_err {
                line.push(',');
                line.push_str(&fmt_f64(s[i]));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(self.file_name());
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(path)
    }

    /// Error in the preferred norm: `sigma_eps`, then `h`, then L2.
    pub fn value_at(&self, t: f64, norm: ErrorNorm) -> Result<f64> {
        let col = self.column(norm)?;
        let tol = 1e-9 * (1.0 + t.abs());
        let idx = self.times.partition_point(|&s| s < t - tol);
        if idx >= self.times.len() {
            return Err(Error::OutOfRange {
                t,
                start: self.times.first().copied().unwrap_or(0.0),
                end: self.times.last().copied().unwrap_or(0.0),
            });
        }
        if (self.times[idx] - t).abs() <= tol || idx == 0 {
            return Ok(col[idx]);
        }
        let s = (t - self.times[idx - 1]) / (self.times[idx] - self.times[idx - 1]);
        Ok(col[idx - 1] * (1.0 - s) + col[idx] * s)
    }

    pub fn column(&self, norm: ErrorNorm) -> Result<&[f64]> {
        match norm {
            ErrorNorm::L2 => Ok(&self.l2_err),
            ErrorNorm::H => self
                .h_err
                .as_deref()
                .ok_or_else(|| Error::InvalidArgument("H-norm errors were not computed".into())),
            ErrorNorm::SigmaEps => self
                .sigma_eps_err
                .as_deref()
                .ok_or_else(|| Error::InvalidArgument("Sigma_eps errors were not computed".into())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorNorm {
    L2,
    H,
    SigmaEps,
}

struct ErrorRow {
    l2: f64,
    h: f64,
    sigma: f64,
}

/// Per-time error between an exact run and a packet built from `approx`.
///
/// Rescaled runs are compared on the envelope grid, where the L2, `A` and
/// `B` errors equal the L2 norms of `w`, `w'` and `y w` for `w = u^eps - u`,
/// and `eps f'` and `x f` become `sqrt(eps) w' + i xi w` and
/// `(x(t) + sqrt(eps) y) w`.
pub fn error_series(exact: &DirectRun, approx: &EnvelopeRun, frame: &PacketFrame, norms: NormSet) -> Result<ErrorSeries> {
    if (frame.eps - exact.eps).abs() > 1e-15 * exact.eps {
        return Err(Error::Mismatch(format!(
            "frame eps {} differs from run eps {}",
            frame.eps, exact.eps
        )));
    }
    let rows: Vec<Result<ErrorRow>> = match &exact.frame {
        Frame::Rescaled(_) => {
            if exact.grid != approx.grid {
                return Err(Error::Mismatch("exact and envelope grids differ".into()));
            }
            let ops = SpectralOps::new(exact.grid);
            let se = exact.eps.sqrt();
            (0..exact.times.len())
                .into_par_iter()
                .map(|i| {
                    let t = exact.times[i];
                    let w = exact.fields[i].sub(&approx.field_at(t)?)?;
                    let dw = ops.derivative(&w, 1);
                    let yw = w.times_position();
                    let l2 = w.l2();
                    let h = if norms.h { l2 + dw.l2() + yw.l2() } else { f64::NAN };
                    let sigma = if norms.sigma_eps {
                        let (x0, xi, _) = frame.state(t)?;
                        let (mut a, mut b) = (0.0, 0.0);
                        for (j, (v, d)) in w.values().iter().zip(dw.values()).enumerate() {
                            let y = exact.grid.point(j);
                            a += (se * d + Complex64::new(0.0, xi) * v).norm_sqr();
                            b += ((x0 + se * y) * v).norm_sqr();
                        }
                        let hy = exact.grid.spacing();
                        l2 + (a * hy).sqrt() + (b * hy).sqrt()
                    } else {
                        f64::NAN
                    };
                    Ok(ErrorRow { l2, h, sigma })
                })
                .collect()
        }
        Frame::Physical => {
            let parts = [(approx, frame)];
            return superposition_error_series(exact, &parts, norms, approx.regime.label());
        }
    };
    finish(exact, rows, norms, approx.regime.label())
}

/// Error between a physical run and the sum of independently assembled
/// packets. The `H` column uses the frame of the first packet.
pub fn superposition_error_series(
    exact: &DirectRun,
    parts: &[(&EnvelopeRun, &PacketFrame)],
    norms: NormSet,
    regime: &str,
) -> Result<ErrorSeries> {
    if !matches!(exact.frame, Frame::Physical) {
        return Err(Error::Mismatch("superposition errors need a physical-frame run".into()));
    }
    if parts.is_empty() {
        return Err(Error::InvalidArgument("at least one packet is required".into()));
    }
    for (_, f) in parts {
        if (f.eps - exact.eps).abs() > 1e-15 * exact.eps {
            return Err(Error::Mismatch("packet frame eps differs from run eps".into()));
        }
    }
    let rows: Vec<Result<ErrorRow>> = (0..exact.times.len())
        .into_par_iter()
        .map(|i| {
            let t = exact.times[i];
            let mut phi = Field::zeros(exact.grid);
            for (run, frame) in parts {
                phi = phi.add(&assemble(&run.field_at(t)?, frame, t, exact.grid)?)?;
            }
            let w = exact.fields[i].sub(&phi)?;
            let l2 = w.l2();
            let h = if norms.h { norm_h(&w, parts[0].1, t)? } else { f64::NAN };
            let sigma = if norms.sigma_eps { norm_sigma_eps(&w, exact.eps) } else { f64::NAN };
            Ok(ErrorRow { l2, h, sigma })
        })
        .collect();
    finish(exact, rows, norms, regime)
}

fn finish(exact: &DirectRun, rows: Vec<Result<ErrorRow>>, norms: NormSet, regime: &str) -> Result<ErrorSeries> {
    let rows: Vec<ErrorRow> = rows.into_iter().collect::<Result<_>>()?;
    Ok(ErrorSeries {
        regime: regime.to_string(),
        eps: exact.eps,
        times: exact.times.clone(),
        l2_err: rows.iter().map(|r| r.l2).collect(),
        h_err: norms.h.then(|| rows.iter().map(|r| r.h).collect()),
        sigma_eps_err: norms.sigma_eps.then(|| rows.iter().map(|r| r.sigma).collect()),
    })
}

/// `(t, |i u_t + u''/2 - W u|)` at interior snapshots, with `W` the
/// potential of the run's envelope equation and `u_t` from three-point
/// differences.
pub fn residual_b2(run: &EnvelopeRun, trace: &QuadraticPotentialTrace) -> Result<Vec<(f64, f64)>> {
    let m = run.fields.len();
    if m < 3 {
        return Err(Error::TooFewSamples { needed: 3, have: m });
    }
    let grid = run.grid;
    let ops = SpectralOps::new(grid);
    let y = grid.points();
    let h = grid.spacing();
    let hartree = match run.regime {
        EnvelopeRegime::Critical { lambda, gamma } => Some(Convolver::homogeneous(grid, lambda, gamma)),
        _ => None,
    };
    (1..m - 1)
        .into_par_iter()
        .map(|i| {
            let (t0, t1, t2) = (run.times[i - 1], run.times[i], run.times[i + 1]);
            let (h0, h1) = (t1 - t0, t2 - t1);
            let (c0, c1, c2) = (-h1 / (h0 * (h0 + h1)), (h1 - h0) / (h0 * h1), h0 / (h1 * (h0 + h1)));
            let u = &run.fields[i];
            let lap = ops.derivative(u, 2);
            let dens: Vec<f64> = u.abs2();
            let mass: f64 = dens.iter().sum::<f64>() * h;
            let g: f64 = y.iter().zip(&dens).map(|(y, d)| y * d).sum::<f64>() * h;
            let second: f64 = y.iter().zip(&dens).map(|(y, d)| y * y * d).sum::<f64>() * h;
            let q = trace.q_at(t1);
            let lin = trace.linear_at(t1);
            let sc = trace.scalar_at(t1);
            let nonlocal = hartree.as_ref().map(|c| c.apply(&dens));
            let mut acc = 0.0;
            for j in 0..grid.len() {
                let yj = y[j];
                let mut w = 0.5 * q * yj * yj + lin * yj + sc;
                match run.regime {
                    EnvelopeRegime::Linear => {}
                    EnvelopeRegime::Critical { .. } => w += nonlocal.as_ref().map_or(0.0, |v| v[j]),
                    EnvelopeRegime::Alpha1 { k0, .. } => w += k0 * mass,
                    EnvelopeRegime::AlphaHalf { jet, .. } => w += mass * jet.grad0 * yj - jet.grad0 * g,
                    EnvelopeRegime::Alpha0 { jet, .. } => {
                        w += 0.5 * mass * jet.hess0 * yj * yj - jet.hess0 * g * yj + 0.5 * jet.hess0 * second
                    }
                }
                let ut = run.fields[i - 1].values()[j] * c0 + u.values()[j] * c1 + run.fields[i + 1].values()[j] * c2;
                let r = Complex64::new(0.0, 1.0) * ut + 0.5 * lap.values()[j] - w * u.values()[j];
                acc += r.norm_sqr();
            }
            Ok((t1, (acc * h).sqrt()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::{accumulate_action, solve_trajectory, PotentialSpec};
    use crate::direct::{solve_physical, solve_rescaled, PacketSpec, Profile};
    use crate::envelope::{solve_hartree_envelope, solve_linear_envelope, RunOptions};
    use crate::spectral::KernelSpec;
    use std::f64::consts::PI;

    fn frame(eps: f64, x0: f64, xi0: f64) -> PacketFrame {
        let pot = PotentialSpec::zero();
        let path = accumulate_action(&solve_trajectory(&pot, x0, xi0, 1.0, 1e-3).unwrap(), &pot);
        PacketFrame::new(eps, path, ActionChoice::Classical).unwrap()
    }

    fn gaussian(g: Grid1D) -> Field {
        Profile::standard().to_field(g)
    }

    #[test]
    fn cubic_sampling_is_exact_on_nodes_and_cubics() {
        let g = Grid1D::new(64, 4.0).unwrap();
        let f = Field::from_real_fn(g, |y| 0.5 * y * y * y - y + 2.0);
        assert_eq!(sample_cubic(&f, g.point(10)), f.values()[10]);
        let y = 0.3217;
        assert!((sample_cubic(&f, y).re - (0.5 * y * y * y - y + 2.0)).abs() < 1e-12);
        assert_eq!(sample_cubic(&f, 100.0), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn assembly_is_unitary() {
        let g = Grid1D::default();
        let u = gaussian(g);
        for k in [0, 2, 4, 6, 8] {
            let eps = 2f64.powi(-k);
            let fr = frame(eps, 0.3, 1.0);
            let xg = Grid1D::new(8192, 8.0).unwrap();
            let phi = assemble(&u, &fr, 0.5, xg).unwrap();
            assert!((phi.l2() - u.l2()).abs() < 1e-6, "eps {eps}: {}", phi.l2());
        }
    }

    #[test]
    fn unit_scale_assembly_samples_envelope() {
        let g = Grid1D::default();
        let u = gaussian(g);
        let fr = frame(1.0, 0.0, 0.0);
        let phi = assemble(&u, &fr, 0.0, g).unwrap();
        assert!(phi.sub(&u).unwrap().sup_norm() < 1e-14);
    }

    #[test]
    fn carrier_frequency_is_xi_over_eps() {
        let eps = 2f64.powi(-4);
        let fr = frame(eps, 0.0, 2.0);
        let xg = Grid1D::new(1024, 8.0).unwrap();
        let phi = assemble(&gaussian(Grid1D::default()), &fr, 0.0, xg).unwrap();
        let ops = SpectralOps::new(xg);
        let mut buf = phi.values().to_vec();
        ops.forward(&mut buf);
        let (best, _) = buf
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .unwrap();
        let k = xg.wavenumber(best);
        assert!((k - 32.0).abs() <= PI / xg.half_width(), "peak at {k}");
    }

    #[test]
    fn operators_intertwine_with_assembly() {
        // The derivative of the cubic interpolant is only third order in h.
        let g = Grid1D::new(4096, 12.0).unwrap();
        let u = Field::from_fn(g, |y| Complex64::from_polar((-(y - 0.4).powi(2) / 2.0).exp(), 0.7 * y));
        let ops = SpectralOps::new(g);
        let eps = 2f64.powi(-6);
        let fr = frame(eps, -0.5, 1.5);
        let xg = Grid1D::new(8192, 4.0).unwrap();
        let t = 0.25;
        let phi = assemble(&u, &fr, t, xg).unwrap();
        let lhs_a = apply_a(&phi, &fr, t).unwrap();
        let rhs_a = assemble(&ops.derivative(&u, 1), &fr, t, xg).unwrap();
        let da = lhs_a.sub(&rhs_a).unwrap().l2();
        assert!(da < 1e-6, "{da}");
        let lhs_b = apply_b(&phi, &fr, t).unwrap();
        let rhs_b = assemble(&u.times_position(), &fr, t, xg).unwrap();
        assert!(lhs_b.sub(&rhs_b).unwrap().l2() < 1e-6);
    }

    #[test]
    fn gaussian_operator_norms() {
        let g = Grid1D::default();
        let u = gaussian(g);
        let fr = frame(1.0, 0.0, 0.0);
        let half = 0.5f64.sqrt();
        assert!((apply_a(&u, &fr, 0.0).unwrap().l2() - half).abs() < 1e-6);
        let bu = apply_b(&u, &fr, 0.0).unwrap();
        assert!((bu.mass() - 0.5).abs() < 1e-6);
        // odd moment of an even density
        let odd: f64 = bu.values().iter().enumerate().map(|(j, v)| g.point(j).signum() * v.norm_sqr()).sum();
        assert!(odd.abs() * g.spacing() < 1e-10);
        assert!((norm_h(&u, &fr, 0.0).unwrap() - (1.0 + 2.0 * half)).abs() < 1e-6);
        let z = Field::zeros(g);
        assert_eq!(norm_h(&z, &fr, 0.0).unwrap(), 0.0);
        assert_eq!(norm_sigma_eps(&z, 0.1), 0.0);
        assert!((norm_sigma_eps(&u, 1.0) - (1.0 + 2.0 * half)).abs() < 1e-6);
    }

    #[test]
    fn support_outside_grid_is_rejected() {
        let fr = frame(1.0, 0.0, 0.0);
        let u = gaussian(Grid1D::default());
        assert!(matches!(
            assemble(&u, &fr, 0.0, Grid1D::new(64, 2.0).unwrap()),
            Err(Error::Support(_))
        ));
    }

    #[test]
    fn identical_runs_have_zero_error() {
        let pot = PotentialSpec::harmonic(1.0);
        let path = accumulate_action(&solve_trajectory(&pot, 1.0, 0.0, 1.0, 5e-4).unwrap(), &pot);
        let g = Grid1D::default();
        let a = gaussian(g);
        let opts = RunOptions { snapshot_stride: 100, sigma_order: 0 };
        let k = KernelSpec::homogeneous(0.0, 0.5).unwrap();
        let exact = solve_rescaled(&a, 1e-2, 2.0, &pot, &path, &k, 1.0, 1e-3, &opts).unwrap();
        let lin = solve_linear_envelope(&a, &QuadraticPotentialTrace::constant(1.0), 1.0, 1e-3, &opts).unwrap();
        let fr = PacketFrame::new(1e-2, path, ActionChoice::Classical).unwrap();
        let s = error_series(&exact, &lin, &fr, NormSet::all()).unwrap();
        assert!(s.l2_err.iter().chain(s.h_err.as_ref().unwrap()).all(|e| *e < 1e-10));
        assert!(s.sigma_eps_err.as_ref().unwrap().iter().all(|e| *e < 1e-10));
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,l2_err,h_err,sigma_eps_err\n"));
        assert_eq!(s.file_name(), format!("errors_linear_eps{}", "0.01.csv"));
    }

    #[test]
    fn frames_agree_on_the_error() {
        let eps = 2f64.powi(-4);
        let pot = PotentialSpec::cosine(1.0, 1.0);
        let path = accumulate_action(&solve_trajectory(&pot, 1.0, 0.0, 1.0, 5e-4).unwrap(), &pot);
        let g = Grid1D::default();
        let a = gaussian(g);
        let opts = RunOptions { snapshot_stride: 250, sigma_order: 0 };
        let k = KernelSpec::homogeneous(1.0, 0.5).unwrap();
        let trace = QuadraticPotentialTrace::from_path(&path, &pot);
        let env = solve_hartree_envelope(&a, &trace, &k, 1.0, 1e-3, &opts).unwrap();
        let fr = PacketFrame::new(eps, path.clone(), ActionChoice::Classical).unwrap();
        let resc = solve_rescaled(&a, eps, 1.25, &pot, &path, &k, 1.0, 1e-3, &opts).unwrap();
        let packets = [PacketSpec { profile: Profile::standard(), x0: 1.0, xi0: 0.0 }];
        let xg = Grid1D::new(2048, 8.0).unwrap();
        let phys = solve_physical(&packets, eps, 1.25, &pot, &k, 1.0, 1e-3, xg, &opts).unwrap();
        let e_r = error_series(&resc, &env, &fr, NormSet::default()).unwrap();
        let e_p = error_series(&phys, &env, &fr, NormSet::default()).unwrap();
        let (r, p) = (*e_r.l2_err.last().unwrap(), *e_p.l2_err.last().unwrap());
        assert!(r > 1e-3, "error should be visible: {r}");
        assert!((r - p).abs() < 1e-3, "rescaled {r} physical {p}");
    }

    #[test]
    fn linear_residual_is_small() {
        let g = Grid1D::default();
        let trace = QuadraticPotentialTrace::constant(1.0);
        let opts = RunOptions { snapshot_stride: 1, sigma_order: 0 };
        let run = solve_linear_envelope(&gaussian(g), &trace, 0.5, 1e-3, &opts).unwrap();
        let res = residual_b2(&run, &trace).unwrap();
        assert!(res.iter().all(|(_, r)| *r < 1e-4));
        let zero = solve_linear_envelope(&Field::zeros(g), &trace, 0.01, 1e-3, &opts).unwrap();
        assert!(residual_b2(&zero, &trace).unwrap().iter().all(|(_, r)| *r == 0.0));
    }

    #[test]
    fn hartree_residual_is_small() {
        let g = Grid1D::default();
        let trace = QuadraticPotentialTrace::constant(0.0);
        let opts = RunOptions { snapshot_stride: 1, sigma_order: 0 };
        let k = KernelSpec::homogeneous(1.0, 0.5).unwrap();
        let run = solve_hartree_envelope(&gaussian(g), &trace, &k, 0.5, 1e-3, &opts).unwrap();
        let worst = residual_b2(&run, &trace).unwrap().iter().map(|r| r.1).fold(0.0, f64::max);
        assert!(worst < 1e-3, "{worst}");
    }
}
