//! Distribution families and their latent-weight parameters.

use crate::error::{domain, Result};
use crate::specfun::{ln_gamma, log_bessel_k};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Matrix normal (W ≡ 1, no skewness).
    Gauss,
    /// Skew-t, W ~ IGamma(ν/2, ν/2).
    SkewT,
    /// Generalized hyperbolic, W ~ I(ω, 1, λ).
    GenHyp,
    /// Variance-gamma, W ~ gamma(γ, γ).
    VarGamma,
    /// Normal inverse Gaussian, W ~ IG(1, κ).
    Nig,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Gauss,
        Family::SkewT,
        Family::GenHyp,
        Family::VarGamma,
        Family::Nig,
    ];

    pub const SKEWED: [Family; 4] = [Family::SkewT, Family::GenHyp, Family::VarGamma, Family::Nig];

    /// Number of free parameters in θ.
    pub fn theta_dim(self) -> usize {
        match self {
            Family::Gauss => 0,
            Family::GenHyp => 2,
            _ => 1,
        }
    }

    pub fn is_skewed(self) -> bool {
        self != Family::Gauss
    }

    /// θ starting values used by the estimator.
    pub fn default_theta(self) -> Theta {
        match self {
            Family::Gauss => Theta::Gauss,
            Family::SkewT => Theta::SkewT { nu: 20.0 },
            Family::GenHyp => Theta::GenHyp {
                omega: 1.0,
                lambda: 0.0,
            },
            Family::VarGamma => Theta::VarGamma { gamma: 5.0 },
            Family::Nig => Theta::Nig { kappa: 1.0 },
        }
    }

    /// Model acronym, e.g. `MMVSTFA`.
    pub fn acronym(self) -> &'static str {
        match self {
            Family::Gauss => "MMVBFA",
            Family::SkewT => "MMVSTFA",
            Family::GenHyp => "MMVGHFA",
            Family::VarGamma => "MMVVGFA",
            Family::Nig => "MMVNIGFA",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::Gauss => "gauss",
            Family::SkewT => "st",
            Family::GenHyp => "gh",
            Family::VarGamma => "vg",
            Family::Nig => "nig",
        };
        f.write_str(s)
    }
}

impl FromStr for Family {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gauss" | "gaussian" | "normal" | "mmvbfa" => Ok(Family::Gauss),
            "st" | "skewt" | "skew-t" | "mmvstfa" => Ok(Family::SkewT),
            "gh" | "genhyp" | "mmvghfa" => Ok(Family::GenHyp),
            "vg" | "vargamma" | "variance-gamma" | "mmvvgfa" => Ok(Family::VarGamma),
            "nig" | "mmvnigfa" => Ok(Family::Nig),
            other => domain(format!("unknown family '{other}'")),
        }
    }
}

/// Parameters θ of the latent weight W.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Theta {
    Gauss,
    #[serde(rename = "st")]
    SkewT { nu: f64 },
    #[serde(rename = "gh")]
    GenHyp { omega: f64, lambda: f64 },
    #[serde(rename = "vg")]
    VarGamma { gamma: f64 },
    Nig { kappa: f64 },
}

/// The latent density written as `h(w) = exp(log_norm) · w^{λ0-1} · exp(-(a0·w + b0/w)/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentKernel {
    pub a0: f64,
    pub b0: f64,
    pub lambda0: f64,
    pub log_norm: f64,
}

impl Theta {
    pub fn family(&self) -> Family {
        match self {
            Theta::Gauss => Family::Gauss,
            Theta::SkewT { .. } => Family::SkewT,
            Theta::GenHyp { .. } => Family::GenHyp,
            Theta::VarGamma { .. } => Family::VarGamma,
            Theta::Nig { .. } => Family::Nig,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Theta::Gauss => true,
            Theta::SkewT { nu } => nu > 0.0 && nu.is_finite(),
            Theta::GenHyp { omega, lambda } => omega > 0.0 && omega.is_finite() && lambda.is_finite(),
            Theta::VarGamma { gamma } => gamma > 0.0 && gamma.is_finite(),
            Theta::Nig { kappa } => kappa > 0.0 && kappa.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            domain(format!("invalid latent parameters {self:?}"))
        }
    }

    /// Analytic E[W].
    pub fn mean_w(&self) -> Result<f64> {
        self.validate()?;
        Ok(match *self {
            Theta::Gauss => 1.0,
            Theta::SkewT { nu } => {
                if nu <= 2.0 {
                    f64::INFINITY
                } else {
                    nu / (nu - 2.0)
                }
            }
            Theta::GenHyp { omega, lambda } => {
                let lk1 = log_bessel_k(lambda + 1.0, omega)?;
                let lk = log_bessel_k(lambda, omega)?;
                (lk1 - lk).exp()
            }
            Theta::VarGamma { .. } => 1.0,
            Theta::Nig { kappa } => 1.0 / kappa,
        })
    }

    /// GIG-form kernel of the latent density; `None` for the Gaussian family.
    pub fn latent_kernel(&self) -> Result<Option<LatentKernel>> {
        self.validate()?;
        Ok(match *self {
            Theta::Gauss => None,
            Theta::SkewT { nu } => {
                let half = 0.5 * nu;
                Some(LatentKernel {
                    a0: 0.0,
                    b0: nu,
                    lambda0: -half,
                    log_norm: half * half.ln() - ln_gamma(half)?,
                })
            }
            Theta::GenHyp { omega, lambda } => Some(LatentKernel {
                a0: omega,
                b0: omega,
                lambda0: lambda,
                log_norm: -(std::f64::consts::LN_2 + log_bessel_k(lambda, omega)?),
            }),
            Theta::VarGamma { gamma } => Some(LatentKernel {
                a0: 2.0 * gamma,
                b0: 0.0,
                lambda0: gamma,
                log_norm: gamma * gamma.ln() - ln_gamma(gamma)?,
            }),
            Theta::Nig { kappa } => Some(LatentKernel {
                a0: kappa * kappa,
                b0: 1.0,
                lambda0: -0.5,
                log_norm: kappa - 0.5 * (2.0 * std::f64::consts::PI).ln(),
            }),
        })
    }

    /// Flat parameter vector (for serialization / reporting).
    pub fn values(&self) -> Vec<f64> {
        match *self {
            Theta::Gauss => vec![],
            Theta::SkewT { nu } => vec![nu],
            Theta::GenHyp { omega, lambda } => vec![omega, lambda],
            Theta::VarGamma { gamma } => vec![gamma],
            Theta::Nig { kappa } => vec![kappa],
        }
    }
}

impl fmt::Display for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Theta::Gauss => write!(f, "-"),
            Theta::SkewT { nu } => write!(f, "nu={nu:.4}"),
            Theta::GenHyp { omega, lambda } => write!(f, "omega={omega:.4} lambda={lambda:.4}"),
            Theta::VarGamma { gamma } => write!(f, "gamma={gamma:.4}"),
            Theta::Nig { kappa } => write!(f, "kappa={kappa:.4}"),
        }
    }
}
