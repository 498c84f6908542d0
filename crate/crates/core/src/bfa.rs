//! Bilinear factor scale structure: `Σ* = Σ + ΛΛ′` and `Ψ* = Ψ + ΔΔ′` with
//! diagonal `Σ`, `Ψ`, assembled through the Woodbury identity and the matrix
//! determinant lemma.

use crate::error::{Error, Result};
use crate::family::Theta;
use crate::matvar::{SkewMatParams, SpdScale};
use nalgebra::{DMatrix, DVector};

/// Condition number of the inner system above which the dense path is used.
const INNER_COND_LIMIT: f64 = 1e12;

/// Parameters of one mixture component.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentParams {
    pub pi: f64,
    pub m: DMatrix<f64>,
    pub a: DMatrix<f64>,
    /// n×q column loadings.
    pub lambda: DMatrix<f64>,
    pub sigma_diag: DVector<f64>,
    /// p×r row loadings.
    pub delta: DMatrix<f64>,
    pub psi_diag: DVector<f64>,
    pub theta: Theta,
}

impl ComponentParams {
    pub fn dims(&self) -> (usize, usize) {
        self.m.shape()
    }

    pub fn q(&self) -> usize {
        self.lambda.ncols()
    }

    pub fn r(&self) -> usize {
        self.delta.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, p) = self.dims();
        if self.a.shape() != (n, p)
            || self.lambda.nrows() != n
            || self.sigma_diag.len() != n
            || self.delta.nrows() != p
            || self.psi_diag.len() != p
        {
            return Err(Error::Shape(format!(
                "component blocks do not conform to a {n}x{p} location"
            )));
        }
        if !(self.pi > 0.0 && self.pi <= 1.0) {
            return Err(Error::Domain(format!("mixing weight {} outside (0, 1]", self.pi)));
        }
        if self.sigma_diag.iter().chain(self.psi_diag.iter()).any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::Domain("diagonal scale entries must be positive".into()));
        }
        self.theta.validate()
    }

    /// Moves the free Kronecker factor `c` in `(cΣ*, Ψ*/c)` so the specific
    /// variances of both scales have the same geometric mean. The density is
    /// unchanged; without this the split drifts until one side meets the floor.
    pub fn balance_scales(&mut self) {
        let geo = |v: &DVector<f64>| (v.iter().map(|x| x.ln()).sum::<f64>() / v.len() as f64).exp();
        let c = (geo(&self.psi_diag) / geo(&self.sigma_diag)).sqrt();
        if !(c.is_finite() && c > 0.0) || c == 1.0 {
            return;
        }
        self.sigma_diag *= c;
        self.lambda *= c.sqrt();
        self.psi_diag /= c;
        self.delta /= c.sqrt();
    }
}

/// `diag + BB′` with its inverse, log-determinant and the factor projection.
#[derive(Debug, Clone)]
pub struct StructuredScale {
    pub star: SpdScale,
    /// `L = (I + B′D⁻¹B)⁻¹B′D⁻¹` (q×n) for rows, its transpose `D_g` (p×r) for columns.
    pub proj: DMatrix<f64>,
    /// `(I + B′D⁻¹B)⁻¹`.
    pub inner_inv: DMatrix<f64>,
}

impl StructuredScale {
    pub fn dense_star(&self) -> &DMatrix<f64> {
        &self.star.dense
    }

    pub fn inv_star(&self) -> &DMatrix<f64> {
        &self.star.inv
    }

    pub fn logdet_star(&self) -> f64 {
        self.star.logdet
    }
}

fn symmetric_cond(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let ev = m.clone().symmetric_eigenvalues();
    let max = ev.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let min = ev.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Returns the scale plus `(I + B′D⁻¹B)⁻¹B′D⁻¹`.
fn structured(diag: &DVector<f64>, loadings: &DMatrix<f64>) -> Result<(SpdScale, DMatrix<f64>, DMatrix<f64>)> {
    if diag.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
        return Err(Error::Domain("diagonal scale entries must be positive".into()));
    }
    if loadings.nrows() != diag.len() {
        return Err(Error::Shape("loadings and diagonal lengths differ".into()));
    }
    let k = loadings.ncols();
    let d_inv = diag.map(|d| 1.0 / d);
    // D⁻¹B
    let mut dib = loadings.clone();
    for (i, mut row) in dib.row_iter_mut().enumerate() {
        row *= d_inv[i];
    }
    let mut dense = loadings * loadings.transpose();
    for i in 0..diag.len() {
        dense[(i, i)] += diag[i];
    }
    let logdet_diag: f64 = diag.iter().map(|d| d.ln()).sum();
    if k == 0 {
        let inv = DMatrix::from_diagonal(&d_inv);
        return Ok((SpdScale { dense, inv, logdet: logdet_diag }, DMatrix::zeros(0, 0), DMatrix::zeros(0, diag.len())));
    }
    let mut inner = loadings.transpose() * &dib;
    for i in 0..k {
        inner[(i, i)] += 1.0;
    }
    let inner = (&inner + inner.transpose()) * 0.5;
    let chol = inner
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("inner factor system is not positive definite".into()))?;
    let inner_inv = chol.inverse();
    let proj = &inner_inv * dib.transpose();
    let star = if symmetric_cond(&inner) > INNER_COND_LIMIT {
        SpdScale::new(dense)?
    } else {
        let logdet = logdet_diag + 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let mut inv = -(&dib * &proj);
        for i in 0..diag.len() {
            inv[(i, i)] += d_inv[i];
        }
        let inv = (&inv + inv.transpose()) * 0.5;
        SpdScale { dense, inv, logdet }
    };
    Ok((star, inner_inv, proj))
}

/// Assembles `(Σ*, Ψ*)` for one component.
pub fn assemble_scales(c: &ComponentParams) -> Result<(StructuredScale, StructuredScale)> {
    let (rs, r_inner, l) = structured(&c.sigma_diag, &c.lambda)?;
    let (cs, c_inner, d) = structured(&c.psi_diag, &c.delta)?;
    Ok((
        StructuredScale { star: rs, proj: l, inner_inv: r_inner },
        StructuredScale { star: cs, proj: d.transpose(), inner_inv: c_inner },
    ))
}

/// The marginal law of an observation from this component.
pub fn marginal_density_params(c: &ComponentParams) -> Result<SkewMatParams> {
    let (row, col) = assemble_scales(c)?;
    SkewMatParams::new(c.theta, c.m.clone(), c.a.clone(), row.star, col.star)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matvar::logpdf_skew;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn component(n: usize, p: usize, q: usize, r: usize, rng: &mut ChaCha8Rng) -> ComponentParams {
        ComponentParams {
            pi: 1.0,
            m: DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0)),
            a: DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0)),
            lambda: DMatrix::from_fn(n, q, |_, _| rng.random_range(-1.0..1.0)),
            sigma_diag: DVector::from_fn(n, |_, _| rng.random_range(0.2..2.0)),
            delta: DMatrix::from_fn(p, r, |_, _| rng.random_range(-1.0..1.0)),
            psi_diag: DVector::from_fn(p, |_, _| rng.random_range(0.2..2.0)),
            theta: Theta::SkewT { nu: 7.0 },
        }
    }

    #[test]
    fn balancing_keeps_the_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut c = component(4, 3, 2, 1, &mut rng);
        c.sigma_diag *= 1e5;
        c.lambda *= 1e5f64.sqrt();
        c.psi_diag /= 1e5;
        c.delta /= 1e5f64.sqrt();
        let x = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-2.0..2.0));
        let before = logpdf_skew(&x, &marginal_density_params(&c).unwrap()).unwrap();
        c.balance_scales();
        let after = logpdf_skew(&x, &marginal_density_params(&c).unwrap()).unwrap();
        assert!((before - after).abs() < 1e-10 * before.abs());
        let log_mean = |v: &DVector<f64>| v.iter().map(|x| x.ln()).sum::<f64>() / v.len() as f64;
        assert!((log_mean(&c.sigma_diag) - log_mean(&c.psi_diag)).abs() < 1e-12);
    }

    #[test]
    fn no_factor_structure() {
        let c = ComponentParams {
            pi: 1.0,
            m: DMatrix::zeros(3, 2),
            a: DMatrix::zeros(3, 2),
            lambda: DMatrix::zeros(3, 1),
            sigma_diag: DVector::from_element(3, 1.0),
            delta: DMatrix::zeros(2, 1),
            psi_diag: DVector::from_element(2, 1.0),
            theta: Theta::Gauss,
        };
        let (row, _) = assemble_scales(&c).unwrap();
        assert_eq!(row.dense_star(), &DMatrix::identity(3, 3));
        assert_eq!(row.inv_star(), &DMatrix::identity(3, 3));
        assert_eq!(row.logdet_star(), 0.0);
        assert!(row.proj.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rank_one_sherman_morrison() {
        let mut lambda = DMatrix::zeros(3, 1);
        lambda[(0, 0)] = 1.0;
        let (s, _, _) = structured(&DVector::from_element(3, 1.0), &lambda).unwrap();
        assert!((s.logdet - 2f64.ln()).abs() < 1e-15);
        let mut want = DMatrix::identity(3, 3);
        want[(0, 0)] = 0.5;
        assert!((s.inv - want).amax() < 1e-15);
    }

    #[test]
    fn woodbury_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (n, p, q, r) in [(6, 4, 2, 1), (30, 25, 5, 5), (8, 8, 0, 3)] {
            let c = component(n, p, q, r, &mut rng);
            let (row, col) = assemble_scales(&c).unwrap();
            for s in [&row, &col] {
                let dense = SpdScale::new(s.dense_star().clone()).unwrap();
                assert!((s.inv_star() - &dense.inv).amax() < 1e-10);
                assert!((s.logdet_star() - dense.logdet).abs() < 1e-10);
                let k = s.dense_star().nrows();
                assert!((s.dense_star() * s.inv_star() - DMatrix::identity(k, k)).amax() < 1e-9);
            }
            let want_l = &row.inner_inv * c.lambda.transpose() * DMatrix::from_diagonal(&c.sigma_diag.map(|d| 1.0 / d));
            assert!((&row.proj - want_l).amax() < 1e-14);
            assert_eq!(col.proj.shape(), (p, r));
        }
    }

    #[test]
    fn marginal_density_matches_dense_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c = component(5, 4, 2, 2, &mut rng);
        let x = DMatrix::from_fn(5, 4, |_, _| rng.random_range(-2.0..2.0));
        let v = logpdf_skew(&x, &marginal_density_params(&c).unwrap()).unwrap();
        let sig = DMatrix::from_diagonal(&c.sigma_diag) + &c.lambda * c.lambda.transpose();
        let psi = DMatrix::from_diagonal(&c.psi_diag) + &c.delta * c.delta.transpose();
        let dense = SkewMatParams::new(c.theta, c.m.clone(), c.a.clone(), SpdScale::new(sig).unwrap(), SpdScale::new(psi).unwrap()).unwrap();
        assert!((v - logpdf_skew(&x, &dense).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn zero_loadings_give_diagonal_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = component(3, 3, 1, 1, &mut rng);
        c.lambda.fill(0.0);
        c.delta.fill(0.0);
        let p = marginal_density_params(&c).unwrap();
        assert_eq!(p.sigma.dense, DMatrix::from_diagonal(&c.sigma_diag));
        assert_eq!(p.psi.dense, DMatrix::from_diagonal(&c.psi_diag));
    }

    #[test]
    fn non_positive_diagonal_is_a_domain_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = component(3, 3, 1, 1, &mut rng);
        c.psi_diag[1] = 0.0;
        assert!(matches!(assemble_scales(&c), Err(Error::Domain(_))));
    }
}
