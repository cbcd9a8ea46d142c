use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classical::parse_numbers;
use crate::error::{Error, Result};

/// Value, gradient and Hessian of a smooth kernel at the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelJet {
    pub k0: f64,
    pub grad0: f64,
    pub hess0: f64,
}

#[derive(Clone)]
pub enum SmoothShape {
    /// `amplitude * exp(-y^2 / width^2)`
    Gaussian { amplitude: f64, width: f64 },
    /// `amplitude / (1 + y^2 / width^2)`
    Lorentzian { amplitude: f64, width: f64 },
    Constant { value: f64 },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for SmoothShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Gaussian { amplitude, width } => {
                write!(f, "Gaussian {{ amplitude: {amplitude}, width: {width} }}")
            }
            Self::Lorentzian { amplitude, width } => {
                write!(f, "Lorentzian {{ amplitude: {amplitude}, width: {width} }}")
            }
            Self::Constant { value } => write!(f, "Constant {{ value: {value} }}"),
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Bounded kernel, smooth near the origin, with its second-order jet.
#[derive(Clone, Debug)]
pub struct SmoothKernel {
    shape: SmoothShape,
    jet: KernelJet,
}

impl SmoothKernel {
    pub fn gaussian(amplitude: f64, width: f64) -> Self {
        Self {
            shape: SmoothShape::Gaussian { amplitude, width },
            jet: KernelJet {
                k0: amplitude,
                grad0: 0.0,
                hess0: -2.0 * amplitude / (width * width),
            },
        }
    }

    pub fn lorentzian(amplitude: f64, width: f64) -> Self {
        Self {
            shape: SmoothShape::Lorentzian { amplitude, width },
            jet: KernelJet {
                k0: amplitude,
                grad0: 0.0,
                hess0: -2.0 * amplitude / (width * width),
            },
        }
    }

    pub fn constant(value: f64) -> Self {
        Self {
            shape: SmoothShape::Constant { value },
            jet: KernelJet {
                k0: value,
                grad0: 0.0,
                hess0: 0.0,
            },
        }
    }

    /// Custom kernel with a caller-supplied jet; check it with
    /// [`taylor_kernel_coefficients`].
    pub fn custom(eval: impl Fn(f64) -> f64 + Send + Sync + 'static, jet: KernelJet) -> Self {
        Self {
            shape: SmoothShape::Custom(Arc::new(eval)),
            jet,
        }
    }

    pub fn shape(&self) -> &SmoothShape {
        &self.shape
    }

    pub fn jet(&self) -> KernelJet {
        self.jet
    }

    pub fn k0(&self) -> f64 {
        self.jet.k0
    }

    pub fn eval(&self, y: f64) -> f64 {
        match &self.shape {
            SmoothShape::Gaussian { amplitude, width } => amplitude * (-(y / width).powi(2)).exp(),
            SmoothShape::Lorentzian { amplitude, width } => amplitude / (1.0 + (y / width).powi(2)),
            SmoothShape::Constant { value } => *value,
            SmoothShape::Custom(f) => f(y),
        }
    }

    /// Largest `|K|` over the sample points.
    pub fn sampled_bound(&self, points: &[f64]) -> f64 {
        points.iter().map(|&y| self.eval(y).abs()).fold(0.0, f64::max)
    }
}

/// Hartree kernel: smooth, or homogeneous `lambda |y|^-gamma` with `0 < gamma < 1`.
#[derive(Clone, Debug)]
pub enum KernelSpec {
    Smooth(SmoothKernel),
    Homogeneous { lambda: f64, gamma: f64 },
}

impl KernelSpec {
    pub fn homogeneous(lambda: f64, gamma: f64) -> Result<Self> {
        let k = Self::Homogeneous { lambda, gamma };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Homogeneous { lambda, gamma } => {
                if !(*gamma > 0.0 && *gamma < 1.0) {
                    return Err(Error::InvalidKernel(format!(
                        "homogeneous kernel needs 0 < gamma < 1, got {gamma}"
                    )));
                }
                if !lambda.is_finite() {
                    return Err(Error::InvalidKernel("lambda must be finite".into()));
                }
                Ok(())
            }
            Self::Smooth(s) => {
                let pts: Vec<f64> = (-200..=200).map(|i| i as f64 * 0.25).collect();
                let bound = s.sampled_bound(&pts);
                if bound.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidKernel("smooth kernel is unbounded on samples".into()))
                }
            }
        }
    }

    pub fn is_smooth(&self) -> bool {
        matches!(self, Self::Smooth(_))
    }

    pub fn smooth(&self) -> Option<&SmoothKernel> {
        match self {
            Self::Smooth(s) => Some(s),
            Self::Homogeneous { .. } => None,
        }
    }

    /// Critical size exponent: `1 + gamma/2` for homogeneous kernels, 1 for
    /// smooth ones.
    pub fn critical_alpha(&self) -> f64 {
        match self {
            Self::Smooth(_) => 1.0,
            Self::Homogeneous { gamma, .. } => 1.0 + gamma / 2.0,
        }
    }

    /// Whether the kernel vanishes identically.
    pub fn is_zero(&self) -> bool {
        match self {
            Self::Homogeneous { lambda, .. } => *lambda == 0.0,
            Self::Smooth(s) => matches!(s.shape, SmoothShape::Constant { value } if value == 0.0),
        }
    }
}

/// Serializable description of the builtin kernels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BuiltinKernel {
    None,
    Homogeneous { lambda: f64, gamma: f64 },
    Gaussian { amplitude: f64, width: f64 },
    Lorentzian { amplitude: f64, width: f64 },
    Constant { value: f64 },
}

impl TryFrom<BuiltinKernel> for KernelSpec {
    type Error = Error;

    fn try_from(b: BuiltinKernel) -> Result<Self> {
        let k = match b {
            BuiltinKernel::None => KernelSpec::Smooth(SmoothKernel::constant(0.0)),
            BuiltinKernel::Homogeneous { lambda, gamma } => KernelSpec::Homogeneous { lambda, gamma },
            BuiltinKernel::Gaussian { amplitude, width } => {
                KernelSpec::Smooth(SmoothKernel::gaussian(amplitude, width))
            }
            BuiltinKernel::Lorentzian { amplitude, width } => {
                KernelSpec::Smooth(SmoothKernel::lorentzian(amplitude, width))
            }
            BuiltinKernel::Constant { value } => KernelSpec::Smooth(SmoothKernel::constant(value)),
        };
        k.validate()?;
        Ok(k)
    }
}

impl FromStr for BuiltinKernel {
    type Err = Error;

    /// Parses `none`, `homogeneous:LAMBDA,GAMMA`, `gaussian:A,W`,
    /// `lorentzian:A,W`, `const:C`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), parse_numbers(a)?),
            None => (s.trim(), Vec::new()),
        };
        let arity = |k: usize| -> Result<()> {
            if args.len() == k {
                Ok(())
            } else {
                Err(Error::Parse(format!("kernel `{name}` takes {k} argument(s)")))
            }
        };
        match name {
            "none" | "zero" => {
                arity(0)?;
                Ok(Self::None)
            }
            "homogeneous" | "riesz" => {
                arity(2)?;
                Ok(Self::Homogeneous {
                    lambda: args[0],
                    gamma: args[1],
                })
            }
            "gaussian" => {
                arity(2)?;
                Ok(Self::Gaussian {
                    amplitude: args[0],
                    width: args[1],
                })
            }
            "lorentzian" => {
                arity(2)?;
                Ok(Self::Lorentzian {
                    amplitude: args[0],
                    width: args[1],
                })
            }
            "const" | "constant" => {
                arity(1)?;
                Ok(Self::Constant { value: args[0] })
            }
            other => Err(Error::Parse(format!("unknown kernel `{other}`"))),
        }
    }
}

/// Returns the stored jet of a smooth kernel after checking it against
/// central differences of the kernel values at the origin.
pub fn taylor_kernel_coefficients(kernel: &KernelSpec) -> Result<KernelJet> {
    let s = kernel.smooth().ok_or_else(|| {
        Error::InvalidKernel("Taylor coefficients need a smooth kernel".into())
    })?;
    let jet = s.jet();
    let h = 1e-3;
    let (km, k0, kp) = (s.eval(-h), s.eval(0.0), s.eval(h));
    let fd_grad = (kp - km) / (2.0 * h);
    let fd_hess = (kp - 2.0 * k0 + km) / (h * h);
    let scale = 1.0 + jet.k0.abs() + jet.hess0.abs();
    let tol = 1e-6 * scale;
    if (k0 - jet.k0).abs() > 1e-12 * scale
        || (fd_grad - jet.grad0).abs() > tol
        || (fd_hess - jet.hess0).abs() > tol
    {
        return Err(Error::JetMismatch(format!(
            "stored ({}, {}, {}), finite differences ({k0}, {fd_grad}, {fd_hess})",
            jet.k0, jet.grad0, jet.hess0
        )));
    }
    Ok(jet)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_jets() {
        for k in [SmoothKernel::gaussian(1.0, 1.0), SmoothKernel::lorentzian(1.0, 1.0)] {
            let jet = taylor_kernel_coefficients(&KernelSpec::Smooth(k)).unwrap();
            assert_eq!(jet, KernelJet { k0: 1.0, grad0: 0.0, hess0: -2.0 });
        }
        let zero = taylor_kernel_coefficients(&KernelSpec::Smooth(SmoothKernel::constant(0.0))).unwrap();
        assert_eq!(zero, KernelJet { k0: 0.0, grad0: 0.0, hess0: 0.0 });
    }

    #[test]
    fn inconsistent_custom_jet_is_rejected() {
        let bad = SmoothKernel::custom(|y| (-y * y).exp(), KernelJet { k0: 1.0, grad0: 0.0, hess0: -1.0 });
        assert!(matches!(
            taylor_kernel_coefficients(&KernelSpec::Smooth(bad)),
            Err(Error::JetMismatch(_))
        ));
        let good = SmoothKernel::custom(|y| (y + 1.0).cos(), KernelJet {
            k0: 1f64.cos(),
            grad0: -1f64.sin(),
            hess0: -1f64.cos(),
        });
        assert!(taylor_kernel_coefficients(&KernelSpec::Smooth(good)).is_ok());
    }

    #[test]
    fn homogeneous_range() {
        assert!(KernelSpec::homogeneous(1.0, 0.5).is_ok());
        assert!(matches!(KernelSpec::homogeneous(1.0, 1.0), Err(Error::InvalidKernel(_))));
        assert!(KernelSpec::homogeneous(1.0, 0.0).is_err());
        assert!(taylor_kernel_coefficients(&KernelSpec::homogeneous(1.0, 0.5).unwrap()).is_err());
        assert_eq!(KernelSpec::homogeneous(1.0, 0.5).unwrap().critical_alpha(), 1.25);
    }

    #[test]
    fn parse_kernels() {
        assert_eq!(
            "homogeneous:1,0.5".parse::<BuiltinKernel>().unwrap(),
            BuiltinKernel::Homogeneous { lambda: 1.0, gamma: 0.5 }
        );
        assert_eq!("none".parse::<BuiltinKernel>().unwrap(), BuiltinKernel::None);
        assert!("gaussian:1".parse::<BuiltinKernel>().is_err());
        assert!(KernelSpec::try_from(BuiltinKernel::Homogeneous { lambda: 1.0, gamma: 1.5 }).is_err());
    }
}
