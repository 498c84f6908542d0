//! Generalized inverse Gaussian law: moments, the (ω, η, λ) reparameterization
//! and samplers for the latent weight W of each family.
//!
//! `GIG(a, b, λ)` has density proportional to `y^{λ-1} exp(-(a·y + b/y)/2)`.

use crate::error::{domain, Error, Result};
use crate::family::Theta;
use crate::specfun::{dlog_bessel_k_dorder, ln_gamma, log_bessel_k, log_bessel_k_pair};
use rand::Rng;
use rand_distr::{Distribution, Gamma, InverseGaussian};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GigParams {
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
}

impl GigParams {
    pub fn new(a: f64, b: f64, lambda: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() || !lambda.is_finite() {
            return domain(format!("GIG requires a, b > 0 (a={a}, b={b}, lambda={lambda})"));
        }
        Ok(Self { a, b, lambda })
    }

    /// `ω = √(ab)`.
    pub fn omega(&self) -> f64 {
        (self.a * self.b).sqrt()
    }

    /// `η = √(a/b)`.
    pub fn eta(&self) -> f64 {
        (self.a / self.b).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GigMoments {
    /// E[Y]
    pub e_w: f64,
    /// E[1/Y]
    pub e_inv_w: f64,
    /// E[log Y]
    pub e_log_w: f64,
}

/// `(log K_{λ-1}, log K_λ, log K_{λ+1})` at `x`.
fn log_k_triple(lambda: f64, x: f64) -> Result<(f64, f64, f64)> {
    let (lk, lk_up) = log_bessel_k_pair(lambda, x)?;
    let (lk_down, _) = log_bessel_k_pair(lambda - 1.0, x)?;
    Ok((lk_down, lk, lk_up))
}

/// E[Y] and E[1/Y].
///
/// E[1/Y] uses `√(a/b)·K_{λ-1}/K_λ`, the same quantity as
/// `√(a/b)·K_{λ+1}/K_λ − 2λ/b` after the Bessel recurrence, but without the
/// cancellation the subtraction suffers for large positive λ.
pub fn gig_mean_moments(p: &GigParams) -> Result<(f64, f64)> {
    let GigParams { a, b, lambda } = *p;
    let (lk_down, lk, lk_up) = log_k_triple(lambda, p.omega())?;
    let e_w = (0.5 * (b / a).ln() + lk_up - lk).exp();
    let e_inv_w = (0.5 * (a / b).ln() + lk_down - lk).exp();
    Ok((e_w, e_inv_w))
}

/// E[Y], E[1/Y] and E[log Y] of `GIG(a, b, λ)`.
pub fn gig_moments(p: &GigParams) -> Result<GigMoments> {
    let (e_w, e_inv_w) = gig_mean_moments(p)?;
    let e_log_w = 0.5 * (p.b / p.a).ln() + dlog_bessel_k_dorder(p.lambda, p.omega())?;
    Ok(GigMoments {
        e_w,
        e_inv_w,
        e_log_w,
    })
}

/// `(ω, η, λ) → (a, b, λ)` with `a = ωη`, `b = ω/η`.
pub fn gig_convert(omega: f64, eta: f64, lambda: f64) -> Result<GigParams> {
    if !(omega > 0.0 && eta > 0.0) {
        return domain(format!("omega and eta must be positive (omega={omega}, eta={eta})"));
    }
    GigParams::new(omega * eta, omega / eta, lambda)
}

/// `log ∫₀^∞ w^{λ-1} exp(-(a·w + b/w)/2) dw`, including the gamma and
/// inverse-gamma boundary cases `b = 0` and `a = 0`.
pub fn log_gig_integral(a: f64, b: f64, lambda: f64) -> Result<f64> {
    if a < 0.0 || b < 0.0 || !a.is_finite() || !b.is_finite() || !lambda.is_finite() {
        return domain(format!("invalid GIG integral parameters a={a} b={b} lambda={lambda}"));
    }
    if a > 0.0 && b > 0.0 {
        let x = (a * b).sqrt();
        if x > 0.0 {
            return Ok(std::f64::consts::LN_2
                + 0.5 * lambda * (b / a).ln()
                + log_bessel_k(lambda, x)?);
        }
    }
    if b == 0.0 && a > 0.0 && lambda > 0.0 {
        return Ok(ln_gamma(lambda)? + lambda * (2.0 / a).ln());
    }
    if a == 0.0 && b > 0.0 && lambda < 0.0 {
        return Ok(ln_gamma(-lambda)? + lambda * (0.5 * b).ln());
    }
    Err(Error::DensitySingularity(format!(
        "GIG integral diverges (a={a}, b={b}, lambda={lambda})"
    )))
}

/// Moments of the weight law with density ∝ `w^{λ-1} exp(-(a·w + b/w)/2)`,
/// allowing the inverse-gamma (`a = 0`) and gamma (`b = 0`) boundaries.
/// `E[log W]` is skipped (returned as NaN) when `with_log` is false.
pub fn weight_moments(a: f64, b: f64, lambda: f64, with_log: bool) -> Result<GigMoments> {
    if a > 0.0 && b > 0.0 {
        let p = GigParams::new(a, b, lambda)?;
        if with_log {
            return gig_moments(&p);
        }
        let (e_w, e_inv_w) = gig_mean_moments(&p)?;
        return Ok(GigMoments { e_w, e_inv_w, e_log_w: f64::NAN });
    }
    let log_term = |v: Result<f64>| if with_log { v } else { Ok(f64::NAN) };
    if a == 0.0 && b > 0.0 && lambda < -1.0 {
        // inverse gamma, shape -λ, scale b/2
        let shape = -lambda;
        let scale = 0.5 * b;
        return Ok(GigMoments {
            e_w: scale / (shape - 1.0),
            e_inv_w: shape / scale,
            e_log_w: log_term(crate::specfun::digamma(shape).map(|d| scale.ln() - d))?,
        });
    }
    if b == 0.0 && a > 0.0 && lambda > 1.0 {
        // gamma, shape λ, rate a/2
        let rate = 0.5 * a;
        return Ok(GigMoments {
            e_w: lambda / rate,
            e_inv_w: rate / (lambda - 1.0),
            e_log_w: log_term(crate::specfun::digamma(lambda).map(|d| d - rate.ln()))?,
        });
    }
    Err(Error::DegenerateConditional(format!(
        "weight moments undefined for a={a}, b={b}, lambda={lambda}"
    )))
}

fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Mode of `x^{λ-1} exp(-ω/2 (x + 1/x))`.
fn gig_mode(lambda: f64, omega: f64) -> f64 {
    if lambda >= 1.0 {
        ((lambda - 1.0).hypot(omega) + (lambda - 1.0)) / omega
    } else {
        omega / ((1.0 - lambda).hypot(omega) + (1.0 - lambda))
    }
}

/// Ratio-of-uniforms with mode shift (λ > 2 or ω > 3).
fn rou_shift<R: Rng + ?Sized>(lambda: f64, omega: f64, rng: &mut R) -> f64 {
    let t = 0.5 * (lambda - 1.0);
    let s = 0.25 * omega;
    let xm = gig_mode(lambda, omega);
    let nc = t * xm.ln() - s * (xm + 1.0 / xm);

    // minimal bounding rectangle from the roots of a depressed cubic
    let a = -(2.0 * (lambda + 1.0) / omega + xm);
    let b = 2.0 * (lambda - 1.0) * xm / omega - 1.0;
    let c = xm;
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let fi = (-q / (2.0 * (-(p * p * p) / 27.0).sqrt())).clamp(-1.0, 1.0).acos();
    let fak = 2.0 * (-p / 3.0).sqrt();
    let y1 = fak * (fi / 3.0).cos() - a / 3.0;
    let y2 = fak * (fi / 3.0 + 4.0 / 3.0 * std::f64::consts::PI).cos() - a / 3.0;
    let uplus = (y1 - xm) * (t * y1.ln() - s * (y1 + 1.0 / y1) - nc).exp();
    let uminus = (y2 - xm) * (t * y2.ln() - s * (y2 + 1.0 / y2) - nc).exp();

    loop {
        let u = uminus + rng.random::<f64>() * (uplus - uminus);
        let v = open_unit(rng);
        let x = u / v + xm;
        if x > 0.0 && v.ln() <= t * x.ln() - s * (x + 1.0 / x) - nc {
            return x;
        }
    }
}

/// Ratio-of-uniforms without mode shift (moderate λ, ω).
fn rou_noshift<R: Rng + ?Sized>(lambda: f64, omega: f64, rng: &mut R) -> f64 {
    let t = 0.5 * (lambda - 1.0);
    let s = 0.25 * omega;
    let xm = gig_mode(lambda, omega);
    let nc = t * xm.ln() - s * (xm + 1.0 / xm);
    let ym = ((lambda + 1.0) + (lambda + 1.0).hypot(omega)) / omega;
    let um = (0.5 * (lambda + 1.0) * ym.ln() - s * (ym + 1.0 / ym) - nc).exp();
    loop {
        let u = um * rng.random::<f64>();
        let v = open_unit(rng);
        let x = u / v;
        if x > 0.0 && v.ln() <= t * x.ln() - s * (x + 1.0 / x) - nc {
            return x;
        }
    }
}

/// Rejection from a three-piece hat, for λ < 1 and small ω.
fn concave_hat<R: Rng + ?Sized>(lambda: f64, omega: f64, rng: &mut R) -> f64 {
    let xm = gig_mode(lambda, omega);
    let x0 = omega / (1.0 - lambda);
    let k0 = ((lambda - 1.0) * xm.ln() - 0.5 * omega * (xm + 1.0 / xm)).exp();
    let area0 = k0 * x0;
    let (k1, area1, k2, area2);
    if x0 >= 2.0 / omega {
        k1 = 0.0;
        area1 = 0.0;
        k2 = x0.powf(lambda - 1.0);
        area2 = k2 * 2.0 * (-omega * x0 / 2.0).exp() / omega;
    } else {
        k1 = (-omega).exp();
        area1 = if lambda == 0.0 {
            k1 * (2.0 / (omega * omega)).ln()
        } else {
            k1 / lambda * ((2.0 / omega).powf(lambda) - x0.powf(lambda))
        };
        k2 = (2.0 / omega).powf(lambda - 1.0);
        area2 = k2 * 2.0 * (-1.0f64).exp() / omega;
    }
    let total = area0 + area1 + area2;
    loop {
        let mut v = total * rng.random::<f64>();
        let (x, hx);
        if v <= area0 {
            x = x0 * v / area0;
            hx = k0;
        } else {
            v -= area0;
            if v <= area1 {
                if lambda == 0.0 {
                    x = omega * (omega.exp() * v).exp();
                    hx = k1 / x;
                } else {
                    x = (x0.powf(lambda) + lambda / k1 * v).powf(1.0 / lambda);
                    hx = k1 * x.powf(lambda - 1.0);
                }
            } else {
                v -= area1;
                let a = x0.max(2.0 / omega);
                x = -2.0 / omega * ((-omega / 2.0 * a).exp() - omega / (2.0 * k2) * v).ln();
                hx = k2 * (-omega / 2.0 * x).exp();
            }
        }
        if !(x > 0.0) || !x.is_finite() {
            continue;
        }
        let u = rng.random::<f64>() * hx;
        if u.ln() <= (lambda - 1.0) * x.ln() - omega / 2.0 * (x + 1.0 / x) {
            return x;
        }
    }
}

/// One draw from `GIG(a, b, λ)`.
pub fn sample_gig<R: Rng + ?Sized>(p: &GigParams, rng: &mut R) -> f64 {
    let omega = p.omega();
    let alpha = (p.b / p.a).sqrt();
    let lambda = p.lambda.abs();
    let x = if lambda > 2.0 || omega > 3.0 {
        rou_shift(lambda, omega, rng)
    } else if lambda >= 1.0 - 2.25 * omega * omega || omega > 0.2 {
        rou_noshift(lambda, omega, rng)
    } else {
        concave_hat(lambda, omega, rng)
    };
    if p.lambda < 0.0 {
        alpha / x
    } else {
        alpha * x
    }
}

/// `count` i.i.d. draws of the latent weight W for the given family parameters.
pub fn sample_latent_w<R: Rng + ?Sized>(theta: &Theta, count: usize, rng: &mut R) -> Result<Vec<f64>> {
    theta.validate()?;
    let bad = |e: &dyn std::fmt::Display| Error::Domain(e.to_string());
    Ok(match *theta {
        Theta::Gauss => vec![1.0; count],
        Theta::SkewT { nu } => {
            let g = Gamma::new(0.5 * nu, 2.0 / nu).map_err(|e| bad(&e))?;
            (0..count).map(|_| 1.0 / g.sample(rng)).collect()
        }
        Theta::GenHyp { omega, lambda } => {
            let p = gig_convert(omega, 1.0, lambda)?;
            (0..count).map(|_| sample_gig(&p, rng)).collect()
        }
        Theta::VarGamma { gamma } => {
            let g = Gamma::new(gamma, 1.0 / gamma).map_err(|e| bad(&e))?;
            (0..count).map(|_| g.sample(rng)).collect()
        }
        Theta::Nig { kappa } => {
            let ig = InverseGaussian::new(1.0 / kappa, 1.0).map_err(|e| bad(&e))?;
            (0..count).map(|_| ig.sample(rng)).collect()
        }
    })
}
