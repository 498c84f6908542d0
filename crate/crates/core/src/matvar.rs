//! Matrix-variate normal and the skewed variance-mean mixtures
//! `X = M + W·A + √W·V`, `V ~ N_{n×p}(0, Σ, Ψ)`.

use crate::error::{Error, Result};
use crate::family::Theta;
use crate::gig::{log_gig_integral, sample_latent_w, GigParams};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

/// A symmetric positive-definite scale matrix with its inverse and log-determinant.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdScale {
    pub dense: DMatrix<f64>,
    pub inv: DMatrix<f64>,
    pub logdet: f64,
}

impl SpdScale {
    /// Factorizes `dense` once; fails if it is not symmetric positive definite.
    pub fn new(dense: DMatrix<f64>) -> Result<Self> {
        if !dense.is_square() {
            return Err(Error::Shape(format!(
                "scale must be square, got {}x{}",
                dense.nrows(),
                dense.ncols()
            )));
        }
        let chol = dense
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Domain("scale matrix is not positive definite".into()))?;
        let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let inv = chol.inverse();
        Ok(Self { dense, inv, logdet })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dense: DMatrix::identity(dim, dim),
            inv: DMatrix::identity(dim, dim),
            logdet: 0.0,
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        if diag.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(Error::Domain("diagonal scale entries must be positive".into()));
        }
        let dense = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag));
        let inv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            diag.len(),
            diag.iter().map(|d| 1.0 / d),
        ));
        Ok(Self {
            dense,
            inv,
            logdet: diag.iter().map(|d| d.ln()).sum(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dense.nrows()
    }

    /// Lower Cholesky factor of the dense matrix (for sampling).
    pub fn cholesky_factor(&self) -> Result<DMatrix<f64>> {
        self.dense
            .clone()
            .cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::Domain("scale matrix is not positive definite".into()))
    }
}

#[derive(Debug, Clone)]
pub struct MatNormParams {
    pub m: DMatrix<f64>,
    pub sigma: SpdScale,
    pub psi: SpdScale,
}

impl MatNormParams {
    pub fn new(m: DMatrix<f64>, sigma: SpdScale, psi: SpdScale) -> Result<Self> {
        if sigma.dim() != m.nrows() || psi.dim() != m.ncols() {
            return Err(Error::Shape(format!(
                "location {}x{} incompatible with scales {} and {}",
                m.nrows(),
                m.ncols(),
                sigma.dim(),
                psi.dim()
            )));
        }
        Ok(Self { m, sigma, psi })
    }
}

/// Parameters of one skewed matrix-variate law. `Theta::Gauss` is accepted and
/// evaluates as the matrix normal with `a` ignored.
#[derive(Debug, Clone)]
pub struct SkewMatParams {
    pub theta: Theta,
    pub m: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub sigma: SpdScale,
    pub psi: SpdScale,
}

impl SkewMatParams {
    pub fn new(theta: Theta, m: DMatrix<f64>, a: DMatrix<f64>, sigma: SpdScale, psi: SpdScale) -> Result<Self> {
        theta.validate()?;
        if a.shape() != m.shape() {
            return Err(Error::Shape("skewness and location shapes differ".into()));
        }
        let MatNormParams { m, sigma, psi } = MatNormParams::new(m, sigma, psi)?;
        Ok(Self { theta, m, a, sigma, psi })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.m.shape()
    }

    pub fn as_matnorm(&self) -> MatNormParams {
        MatNormParams {
            m: self.m.clone(),
            sigma: self.sigma.clone(),
            psi: self.psi.clone(),
        }
    }
}

fn check_conformable(x: &DMatrix<f64>, m: &DMatrix<f64>, sigma_inv: &DMatrix<f64>, psi_inv: &DMatrix<f64>) -> Result<()> {
    let (n, p) = m.shape();
    if x.shape() != (n, p) || sigma_inv.shape() != (n, n) || psi_inv.shape() != (p, p) {
        return Err(Error::Shape(format!(
            "x {:?}, m {:?}, sigma^-1 {:?}, psi^-1 {:?} are not conformable",
            x.shape(),
            m.shape(),
            sigma_inv.shape(),
            psi_inv.shape()
        )));
    }
    Ok(())
}

/// `tr(Σ⁻¹ L Ψ⁻¹ R′)` for two n×p matrices.
fn trace_form(left: &DMatrix<f64>, right: &DMatrix<f64>, sigma_inv: &DMatrix<f64>, psi_inv: &DMatrix<f64>) -> f64 {
    let t = sigma_inv * left * psi_inv;
    t.dot(right)
}

/// `δ(X; M, Σ, Ψ) = tr(Σ⁻¹(X−M)Ψ⁻¹(X−M)′)`.
pub fn quad_delta(x: &DMatrix<f64>, m: &DMatrix<f64>, sigma_inv: &DMatrix<f64>, psi_inv: &DMatrix<f64>) -> Result<f64> {
    check_conformable(x, m, sigma_inv, psi_inv)?;
    let r = x - m;
    Ok(trace_form(&r, &r, sigma_inv, psi_inv).max(0.0))
}

/// `ρ(A, Σ, Ψ) = tr(Σ⁻¹AΨ⁻¹A′)`.
pub fn quad_rho(a: &DMatrix<f64>, sigma_inv: &DMatrix<f64>, psi_inv: &DMatrix<f64>) -> Result<f64> {
    check_conformable(a, a, sigma_inv, psi_inv)?;
    Ok(trace_form(a, a, sigma_inv, psi_inv).max(0.0))
}

/// Per-observation quadratic forms: `δ` and the cross term `tr(Σ⁻¹(X−M)Ψ⁻¹A′)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualForms {
    pub delta: f64,
    pub cross: f64,
}

pub fn residual_forms(
    x: &DMatrix<f64>,
    m: &DMatrix<f64>,
    a: &DMatrix<f64>,
    sigma_inv: &DMatrix<f64>,
    psi_inv: &DMatrix<f64>,
) -> ResidualForms {
    let r = x - m;
    let t = sigma_inv * &r * psi_inv;
    ResidualForms {
        delta: t.dot(&r).max(0.0),
        cross: t.dot(a),
    }
}

fn log_normal_const(n: usize, p: usize, sigma_logdet: f64, psi_logdet: f64) -> f64 {
    let np = (n * p) as f64;
    -0.5 * np * (2.0 * PI).ln() - 0.5 * p as f64 * sigma_logdet - 0.5 * n as f64 * psi_logdet
}

/// Log-density of `N_{n×p}(M, Σ, Ψ)`.
pub fn logpdf_matnorm(x: &DMatrix<f64>, p: &MatNormParams) -> Result<f64> {
    let delta = quad_delta(x, &p.m, &p.sigma.inv, &p.psi.inv)?;
    let (n, cols) = p.m.shape();
    Ok(log_normal_const(n, cols, p.sigma.logdet, p.psi.logdet) - 0.5 * delta)
}

/// The GIG triple `(a, b, λ)` of `W | X` before validation (a or b may be 0).
pub fn conditional_w_triple(theta: &Theta, np: usize, rho: f64, delta: f64) -> Result<Option<(f64, f64, f64)>> {
    Ok(theta
        .latent_kernel()?
        .map(|k| (rho + k.a0, delta + k.b0, k.lambda0 - 0.5 * np as f64)))
}

/// Log-density from precomputed forms; the shared path of `logpdf_skew` and the estimator.
pub fn logpdf_from_forms(
    theta: &Theta,
    n: usize,
    p: usize,
    sigma_logdet: f64,
    psi_logdet: f64,
    rho: f64,
    forms: ResidualForms,
) -> Result<f64> {
    let base = log_normal_const(n, p, sigma_logdet, psi_logdet);
    let Some(kernel) = theta.latent_kernel()? else {
        return Ok(base - 0.5 * forms.delta);
    };
    let (a, b, lambda) = (rho + kernel.a0, forms.delta + kernel.b0, kernel.lambda0 - 0.5 * (n * p) as f64);
    let integral = log_gig_integral(a, b, lambda)?;
    let v = kernel.log_norm + forms.cross + base + integral;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::DensitySingularity(format!(
            "non-finite log-density (a={a}, b={b}, lambda={lambda})"
        )))
    }
}

/// Log-density of the skewed law (`MVST`, `MVGH`, `MVVG`, `MVNIG`), in log space throughout.
pub fn logpdf_skew(x: &DMatrix<f64>, p: &SkewMatParams) -> Result<f64> {
    check_conformable(x, &p.m, &p.sigma.inv, &p.psi.inv)?;
    let (n, cols) = p.dims();
    if p.theta == Theta::Gauss {
        return logpdf_matnorm(x, &p.as_matnorm());
    }
    let rho = quad_rho(&p.a, &p.sigma.inv, &p.psi.inv)?;
    let forms = residual_forms(x, &p.m, &p.a, &p.sigma.inv, &p.psi.inv);
    logpdf_from_forms(&p.theta, n, cols, p.sigma.logdet, p.psi.logdet, rho, forms)
}

/// `W | X ~ GIG(a, b, λ)`. Per family: ST `(ρ, δ+ν, −(ν+np)/2)`, GH `(ρ+ω, δ+ω, λ−np/2)`,
/// VG `(ρ+2γ, δ, γ−np/2)`, NIG `(ρ+κ², δ+1, −(1+np)/2)`.
pub fn conditional_w_params(x: &DMatrix<f64>, p: &SkewMatParams) -> Result<GigParams> {
    let rho = quad_rho(&p.a, &p.sigma.inv, &p.psi.inv)?;
    let delta = quad_delta(x, &p.m, &p.sigma.inv, &p.psi.inv)?;
    let (n, cols) = p.dims();
    conditional_w_from_forms(&p.theta, n * cols, rho, delta)
}

pub fn conditional_w_from_forms(theta: &Theta, np: usize, rho: f64, delta: f64) -> Result<GigParams> {
    let (a, b, lambda) = conditional_w_triple(theta, np, rho, delta)?
        .ok_or_else(|| Error::Domain("the Gaussian family has no latent weight".into()))?;
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::DegenerateConditional(format!(
            "W | X has GIG parameters a={a}, b={b}"
        )));
    }
    GigParams::new(a, b, lambda)
}

/// Draws `count` matrices `M + W·A + √W·V` with `V = L_Σ Z L_Ψ′`.
pub fn sample_skew<R: Rng + ?Sized>(p: &SkewMatParams, count: usize, rng: &mut R) -> Result<Vec<DMatrix<f64>>> {
    let (n, cols) = p.dims();
    let ls = p.sigma.cholesky_factor()?;
    let lp = p.psi.cholesky_factor()?;
    let skew = if p.theta == Theta::Gauss {
        DMatrix::zeros(n, cols)
    } else {
        p.a.clone()
    };
    let w = sample_latent_w(&p.theta, count, rng)?;
    Ok(w
        .into_iter()
        .map(|wi| {
            let z = DMatrix::from_fn(n, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
            let v = &ls * z * lp.transpose();
            &p.m + &skew * wi + v * wi.sqrt()
        })
        .collect())
}
