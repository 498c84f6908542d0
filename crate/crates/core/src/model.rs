//! A fitted or candidate mixture: component parameters plus density evaluation.

use crate::bfa::{assemble_scales, ComponentParams, StructuredScale};
use crate::error::{Error, Result};
use crate::family::{Family, LatentKernel};
use crate::gig::{log_gig_integral, weight_moments};
use crate::matvar::{quad_rho, residual_forms};
use crate::sample::MatrixSample;
use nalgebra::DMatrix;
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    pub family: Family,
    pub components: Vec<ComponentParams>,
}

/// Which conditional moments of W to compute alongside the density.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Moments {
    None,
    Mean,
    WithLog,
}

/// Density and conditional weight moments of one observation under one component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsEval {
    pub log_density: f64,
    pub e_w: f64,
    pub e_inv_w: f64,
    pub e_log_w: f64,
}

/// Per-component quantities that do not depend on the observation.
#[derive(Debug, Clone)]
pub struct ComponentEval {
    pub row: StructuredScale,
    pub col: StructuredScale,
    pub rho: f64,
    kernel: Option<LatentKernel>,
    base: f64,
    np: f64,
}

impl ComponentEval {
    pub fn new(c: &ComponentParams) -> Result<Self> {
        c.validate()?;
        let (row, col) = assemble_scales(c)?;
        let (n, p) = c.dims();
        let kernel = c.theta.latent_kernel()?;
        let rho = if kernel.is_some() {
            quad_rho(&c.a, row.inv_star(), col.inv_star())?
        } else {
            0.0
        };
        let np = (n * p) as f64;
        let base = -0.5 * np * (2.0 * PI).ln() - 0.5 * p as f64 * row.logdet_star() - 0.5 * n as f64 * col.logdet_star();
        Ok(Self { row, col, rho, kernel, base, np })
    }

    /// Log-density of `x` and, on request, E[W], E[1/W], E[log W] given `x`.
    ///
    /// A non-finite density (VG at `x = M`) is reported as `DensitySingularity`.
    pub fn eval(&self, c: &ComponentParams, x: &DMatrix<f64>, moments: Moments) -> Result<ObsEval> {
        let forms = residual_forms(x, &c.m, &c.a, self.row.inv_star(), self.col.inv_star());
        let Some(k) = self.kernel else {
            return Ok(ObsEval {
                log_density: self.base - 0.5 * forms.delta,
                e_w: 1.0,
                e_inv_w: 1.0,
                e_log_w: 0.0,
            });
        };
        if k.b0 == 0.0 && coincides(x, &c.m) {
            return Err(Error::DensitySingularity("observation equals the location to working precision".into()));
        }
        let (a, b, lambda) = (self.rho + k.a0, forms.delta + k.b0, k.lambda0 - 0.5 * self.np);
        let log_density = k.log_norm + forms.cross + self.base + log_gig_integral(a, b, lambda)?;
        if !log_density.is_finite() {
            return Err(Error::DensitySingularity(format!("log-density {log_density}")));
        }
        let m = match moments {
            Moments::None => return Ok(ObsEval { log_density, e_w: f64::NAN, e_inv_w: f64::NAN, e_log_w: f64::NAN }),
            Moments::Mean => weight_moments(a, b, lambda, false)?,
            Moments::WithLog => weight_moments(a, b, lambda, true)?,
        };
        Ok(ObsEval {
            log_density,
            e_w: m.e_w,
            e_inv_w: m.e_inv_w,
            e_log_w: m.e_log_w,
        })
    }
}

/// `X − M` is below the rounding resolution of the entries, so δ carries no
/// information and a density that diverges at δ = 0 is numerically infinite.
fn coincides(x: &DMatrix<f64>, m: &DMatrix<f64>) -> bool {
    (x - m).norm() <= 1e-12 * (x.norm() + m.norm())
}

/// `log Σ exp(v)` over finite-or-−∞ entries.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl MixtureModel {
    pub fn new(family: Family, components: Vec<ComponentParams>) -> Result<Self> {
        let model = Self { family, components };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.components.first() else {
            return Err(Error::Shape("a mixture needs at least one component".into()));
        };
        let (dims, q, r) = (first.dims(), first.q(), first.r());
        for (g, c) in self.components.iter().enumerate() {
            c.validate()?;
            if c.dims() != dims || c.q() != q || c.r() != r {
                return Err(Error::Shape(format!("component {g} has different dimensions")));
            }
            if c.theta.family() != self.family {
                return Err(Error::Domain(format!(
                    "component {g} carries {} parameters in a {} mixture",
                    c.theta.family(),
                    self.family
                )));
            }
        }
        let total: f64 = self.components.iter().map(|c| c.pi).sum();
        if (total - 1.0).abs() > 1e-8 {
            return Err(Error::Domain(format!("mixing weights sum to {total}")));
        }
        Ok(())
    }

    pub fn g(&self) -> usize {
        self.components.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.components[0].dims()
    }

    pub fn q(&self) -> usize {
        self.components[0].q()
    }

    pub fn r(&self) -> usize {
        self.components[0].r()
    }

    pub fn evaluators(&self) -> Result<Vec<ComponentEval>> {
        self.components.iter().map(ComponentEval::new).collect()
    }

    fn check_data(&self, data: &MatrixSample) -> Result<()> {
        if data.dims() != self.dims() {
            return Err(Error::Shape(format!(
                "data are {:?} matrices, model expects {:?}",
                data.dims(),
                self.dims()
            )));
        }
        Ok(())
    }

    /// N×G matrix of `log π_g + log f_g(X_i)`.
    pub fn weighted_log_densities(&self, data: &MatrixSample) -> Result<DMatrix<f64>> {
        self.check_data(data)?;
        let evals = self.evaluators()?;
        let mut out = DMatrix::zeros(data.len(), self.g());
        for (g, (c, e)) in self.components.iter().zip(&evals).enumerate() {
            let log_pi = c.pi.ln();
            for (i, x) in data.obs().iter().enumerate() {
                out[(i, g)] = log_pi + e.eval(c, x, Moments::None)?.log_density;
            }
        }
        Ok(out)
    }

    /// Observed log-likelihood `Σ_i log Σ_g π_g f_g(X_i)`.
    pub fn loglik(&self, data: &MatrixSample) -> Result<f64> {
        let w = self.weighted_log_densities(data)?;
        let mut total = 0.0;
        let mut row = vec![0.0; self.g()];
        for i in 0..w.nrows() {
            row.iter_mut().enumerate().for_each(|(g, v)| *v = w[(i, g)]);
            total += log_sum_exp(&row);
        }
        Ok(total)
    }

    /// Posterior membership probabilities (N×G) and MAP labels in `1..=G`,
    /// ties going to the lowest index.
    pub fn predict(&self, data: &MatrixSample) -> Result<(Vec<usize>, DMatrix<f64>)> {
        let w = self.weighted_log_densities(data)?;
        let z = responsibilities(&w, None)?;
        Ok((map_labels(&z), z))
    }
}

/// Normalizes weighted log-densities row-wise; labelled rows (label in `1..=G`)
/// become indicators.
pub fn responsibilities(weighted: &DMatrix<f64>, labels: Option<&[usize]>) -> Result<DMatrix<f64>> {
    let (n, g) = weighted.shape();
    let mut z = DMatrix::zeros(n, g);
    let mut row = vec![0.0; g];
    for i in 0..n {
        if let Some(k) = labels.map(|l| l[i]).filter(|&k| k > 0) {
            z[(i, k - 1)] = 1.0;
            continue;
        }
        row.iter_mut().enumerate().for_each(|(h, v)| *v = weighted[(i, h)]);
        let lse = log_sum_exp(&row);
        if !lse.is_finite() {
            return Err(Error::Numerical(format!("observation {i} has zero density under every component")));
        }
        for h in 0..g {
            z[(i, h)] = (row[h] - lse).exp();
        }
    }
    Ok(z)
}

pub fn map_labels(z: &DMatrix<f64>) -> Vec<usize> {
    z.row_iter()
        .map(|row| {
            let mut best = 0;
            for h in 1..row.len() {
                if row[h] > row[best] {
                    best = h;
                }
            }
            best + 1
        })
        .collect()
}
