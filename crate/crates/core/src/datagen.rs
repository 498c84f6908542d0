//! Simulated two-component mixtures in the style of the benchmark study, and
//! arbitrary user-specified generative configurations.

use crate::bfa::{marginal_density_params, ComponentParams};
use crate::error::{Error, Result};
use crate::family::{Family, Theta};
use crate::matvar::sample_skew;
use crate::model::MixtureModel;
use crate::sample::MatrixSample;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, weighted::WeightedIndex};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub family: Family,
    pub d: usize,
    pub n_obs: usize,
    /// Every entry of `M₂ − M₁`.
    pub c: f64,
    pub seed: u64,
    pub pi: Vec<f64>,
    /// Number of column factors (Λ is d×q).
    pub q: usize,
    /// Number of row factors (Δ is d×r).
    pub r: usize,
    pub theta: Vec<Theta>,
}

/// Distribution-specific parameters of the two simulated components.
pub fn table_theta(family: Family) -> [Theta; 2] {
    match family {
        Family::Gauss => [Theta::Gauss, Theta::Gauss],
        Family::SkewT => [Theta::SkewT { nu: 4.0 }, Theta::SkewT { nu: 20.0 }],
        Family::GenHyp => [
            Theta::GenHyp { omega: 4.0, lambda: -4.0 },
            Theta::GenHyp { omega: 10.0, lambda: 4.0 },
        ],
        Family::VarGamma => [Theta::VarGamma { gamma: 4.0 }, Theta::VarGamma { gamma: 10.0 }],
        Family::Nig => [Theta::Nig { kappa: 2.0 }, Theta::Nig { kappa: 4.0 }],
    }
}

impl SimConfig {
    /// The benchmark design: π = (1/2, 1/2), three column and two row factors.
    pub fn benchmark(family: Family, d: usize, n_obs: usize, c: f64, seed: u64) -> Self {
        Self {
            family,
            d,
            n_obs,
            c,
            seed,
            pi: vec![0.5, 0.5],
            q: 3,
            r: 2,
            theta: table_theta(family).to_vec(),
        }
    }
}

/// A generated dataset with its true labels (`1..=G`) and parameters.
#[derive(Debug, Clone)]
pub struct SimData {
    pub sample: MatrixSample,
    pub labels: Vec<usize>,
    pub truth: MixtureModel,
}

fn validate(cfg: &SimConfig) -> Result<()> {
    if cfg.d == 0 || cfg.n_obs == 0 {
        return Err(Error::Domain("d and N must be positive".into()));
    }
    if cfg.pi.len() != cfg.theta.len() || cfg.pi.is_empty() {
        return Err(Error::Shape("one mixing weight and one theta per component".into()));
    }
    if cfg.pi.iter().any(|&p| !(p > 0.0)) || (cfg.pi.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
        return Err(Error::Domain("mixing weights must be positive and sum to 1".into()));
    }
    if cfg.theta.iter().any(|t| t.family() != cfg.family) {
        return Err(Error::Domain("theta does not match the family".into()));
    }
    if !cfg.c.is_finite() {
        return Err(Error::Domain("separation must be finite".into()));
    }
    cfg.theta.iter().try_for_each(|t| t.validate())
}

/// Component `g`: `M_g = g·c`, alternating (2I, I) / (I, 2I) diagonal scales,
/// all-ones skewness and uniform[−1, 1] loadings.
fn component<R: Rng + ?Sized>(cfg: &SimConfig, g: usize, rng: &mut R) -> ComponentParams {
    let d = cfg.d;
    let (s, p) = if g % 2 == 0 { (2.0, 1.0) } else { (1.0, 2.0) };
    let skew = if cfg.family == Family::Gauss { 0.0 } else { 1.0 };
    ComponentParams {
        pi: cfg.pi[g],
        m: DMatrix::from_element(d, d, g as f64 * cfg.c),
        a: DMatrix::from_element(d, d, skew),
        lambda: DMatrix::from_fn(d, cfg.q, |_, _| rng.random_range(-1.0..=1.0)),
        sigma_diag: DVector::from_element(d, s),
        delta: DMatrix::from_fn(d, cfg.r, |_, _| rng.random_range(-1.0..=1.0)),
        psi_diag: DVector::from_element(d, p),
        theta: cfg.theta[g],
    }
}

/// Draws memberships from π, then each observation from its component's marginal law.
pub fn generate(cfg: &SimConfig) -> Result<SimData> {
    validate(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let components: Vec<ComponentParams> = (0..cfg.pi.len()).map(|g| component(cfg, g, &mut rng)).collect();
    let truth = MixtureModel::new(cfg.family, components)?;
    let chooser = WeightedIndex::new(&cfg.pi).map_err(|e| Error::Domain(e.to_string()))?;
    let labels: Vec<usize> = (0..cfg.n_obs).map(|_| chooser.sample(&mut rng) + 1).collect();
    let mut obs = vec![DMatrix::zeros(0, 0); cfg.n_obs];
    for (g, comp) in truth.components.iter().enumerate() {
        let members: Vec<usize> = (0..cfg.n_obs).filter(|&i| labels[i] == g + 1).collect();
        let draws = sample_skew(&marginal_density_params(comp)?, members.len(), &mut rng)?;
        for (i, x) in members.into_iter().zip(draws) {
            obs[i] = x;
        }
    }
    Ok(SimData {
        sample: MatrixSample::new(obs)?,
        labels,
        truth,
    })
}
