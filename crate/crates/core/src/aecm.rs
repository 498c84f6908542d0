//! Three-stage AECM estimation of a mixture of skewed matrix-variate bilinear
//! factor analyzers for one (family, G, q, r) configuration.
//!
//! Every stage starts from a fresh E-step at the current parameters: stage 1
//! updates (π, M, A, θ), stage 2 the column loadings and Σ, stage 3 the row
//! loadings and Ψ. Stage 3 is stage 2 applied to the transposed observations.

use crate::bfa::ComponentParams;
use crate::error::{Error, Result};
use crate::family::{Family, Theta};
use crate::model::{log_sum_exp, responsibilities, Moments, MixtureModel};
use crate::sample::MatrixSample;
use crate::specfun::{dlog_bessel_k_dorder, ln_gamma, log_bessel_k, log_bessel_k_pair};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use roots::{find_root_brent, Convergency};

pub const NU_BOUNDS: (f64, f64) = (2.001, 500.0);
pub const GAMMA_BOUNDS: (f64, f64) = (0.05, 500.0);
pub const OMEGA_BOUNDS: (f64, f64) = (0.05, 500.0);
pub const GH_LAMBDA_BOUNDS: (f64, f64) = (-50.0, 50.0);

/// How the Aitken stopping threshold ε is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonPolicy {
    /// `ε = factor·|l|` taken from the log-likelihood after `freeze_at` cycles;
    /// no stop is attempted before then.
    Relative { factor: f64, freeze_at: usize },
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub starts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub epsilon: EpsilonPolicy,
    pub variance_floor: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            starts: 5,
            seed: 0,
            max_iter: 1000,
            epsilon: EpsilonPolicy::Relative { factor: 1e-3, freeze_at: 5 },
            variance_floor: 1e-8,
        }
    }
}

/// Responsibilities and conditional weight moments at the current parameters.
#[derive(Debug, Clone)]
pub struct EStepCache {
    pub z_hat: DMatrix<f64>,
    /// E[W | X, z = 1]
    pub a: DMatrix<f64>,
    /// E[1/W | X, z = 1]
    pub b: DMatrix<f64>,
    /// E[log W | X, z = 1]; NaN when not requested.
    pub c: DMatrix<f64>,
    pub n_g: Vec<f64>,
    pub a_bar: Vec<f64>,
    pub b_bar: Vec<f64>,
    /// Observed (or, with labels, semi-supervised) log-likelihood.
    pub loglik: f64,
}

/// Conditional moments of the factor scores of one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMoments {
    pub e1: DMatrix<f64>,
    pub e2: DMatrix<f64>,
    pub e3: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: MixtureModel,
    pub z_hat: DMatrix<f64>,
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub final_loglik: f64,
    /// Times the infinite-likelihood fallback or the degenerate-weights path fired.
    pub fallbacks: usize,
    /// Seed of the winning start.
    pub start_seed: u64,
}

enum StepError {
    /// Components whose density is numerically infinite for some observation.
    Singular(Vec<usize>),
    Fatal(Error),
}

impl From<Error> for StepError {
    fn from(e: Error) -> Self {
        StepError::Fatal(e)
    }
}

fn moments_for(family: Family, stage_one: bool) -> Moments {
    match family {
        Family::Gauss => Moments::None,
        Family::Nig => Moments::Mean,
        _ if stage_one => Moments::WithLog,
        _ => Moments::Mean,
    }
}

fn check_labels(labels: Option<&[usize]>, n_obs: usize, g: usize) -> Result<()> {
    if let Some(l) = labels {
        if l.len() != n_obs {
            return Err(Error::Shape(format!("{} labels for {n_obs} observations", l.len())));
        }
        if let Some(bad) = l.iter().find(|&&k| k > g) {
            return Err(Error::Domain(format!("label {bad} outside 0..={g}")));
        }
    }
    Ok(())
}

fn estep_inner(
    data: &MatrixSample,
    model: &MixtureModel,
    labels: Option<&[usize]>,
    moments: Moments,
) -> std::result::Result<EStepCache, StepError> {
    let n_obs = data.len();
    let g_count = model.g();
    let evals = model.evaluators()?;
    let mut logw = DMatrix::zeros(n_obs, g_count);
    let mut a = DMatrix::from_element(n_obs, g_count, 1.0);
    let mut b = DMatrix::from_element(n_obs, g_count, 1.0);
    let mut c = DMatrix::from_element(n_obs, g_count, if moments == Moments::WithLog { 0.0 } else { f64::NAN });
    let mut singular = Vec::new();
    for (g, (comp, ev)) in model.components.iter().zip(&evals).enumerate() {
        let log_pi = comp.pi.ln();
        for (i, x) in data.obs().iter().enumerate() {
            match ev.eval(comp, x, moments) {
                Ok(o) => {
                    logw[(i, g)] = log_pi + o.log_density;
                    if moments != Moments::None {
                        a[(i, g)] = o.e_w;
                        b[(i, g)] = o.e_inv_w;
                        if moments == Moments::WithLog {
                            c[(i, g)] = o.e_log_w;
                        }
                    }
                }
                Err(Error::DensitySingularity(_)) | Err(Error::DegenerateConditional(_)) => {
                    singular.push(g);
                    break;
                }
                Err(e) => return Err(StepError::Fatal(e)),
            }
        }
    }
    if !singular.is_empty() {
        return Err(StepError::Singular(singular));
    }
    let z_hat = responsibilities(&logw, labels)?;
    let mut loglik = 0.0;
    let mut row = vec![0.0; g_count];
    for i in 0..n_obs {
        match labels.map(|l| l[i]).filter(|&k| k > 0) {
            Some(k) => loglik += logw[(i, k - 1)],
            None => {
                row.iter_mut().enumerate().for_each(|(h, v)| *v = logw[(i, h)]);
                loglik += log_sum_exp(&row);
            }
        }
    }
    if loglik == f64::INFINITY {
        return Err(StepError::Singular((0..g_count).collect()));
    }
    if !loglik.is_finite() {
        return Err(StepError::Fatal(Error::Numerical(format!("log-likelihood is {loglik}"))));
    }
    let mut n_g = vec![0.0; g_count];
    let mut a_bar = vec![0.0; g_count];
    let mut b_bar = vec![0.0; g_count];
    for g in 0..g_count {
        let zg = z_hat.column(g);
        n_g[g] = zg.sum();
        if n_g[g] > 0.0 {
            a_bar[g] = zg.dot(&a.column(g)) / n_g[g];
            b_bar[g] = zg.dot(&b.column(g)) / n_g[g];
        }
    }
    Ok(EStepCache { z_hat, a, b, c, n_g, a_bar, b_bar, loglik })
}

fn step_error_to_error(e: StepError) -> Error {
    match e {
        StepError::Singular(gs) => Error::DensitySingularity(format!("infinite density in components {gs:?}")),
        StepError::Fatal(e) => e,
    }
}

/// Stage-1 E-step: responsibilities and (a, b, c) from the assembled scales.
pub fn estep_stage1(data: &MatrixSample, model: &MixtureModel, labels: Option<&[usize]>) -> Result<EStepCache> {
    check_labels(labels, data.len(), model.g())?;
    estep_inner(data, model, labels, moments_for(model.family, true)).map_err(step_error_to_error)
}

/// Observed log-likelihood, log-sum-exp stabilized.
pub fn observed_loglik(data: &MatrixSample, model: &MixtureModel) -> Result<f64> {
    let ll = model.loglik(data)?;
    if ll == f64::INFINITY {
        return Err(Error::DensitySingularity("log-likelihood is infinite".into()));
    }
    Ok(ll)
}

/// The stage-1 location and skewness updates for component `g`.
///
/// Fails with `DegenerateWeights` when `Σ ẑ ā b − N_g` is numerically zero.
pub fn stage1_location(data: &MatrixSample, cache: &EStepCache, g: usize, family: Family) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, p) = data.dims();
    let n_g = cache.n_g[g];
    let mut m = DMatrix::zeros(n, p);
    let mut a = DMatrix::zeros(n, p);
    if family == Family::Gauss {
        for (i, x) in data.obs().iter().enumerate() {
            m += x * cache.z_hat[(i, g)];
        }
        return Ok((m / n_g, a));
    }
    let (a_bar, b_bar) = (cache.a_bar[g], cache.b_bar[g]);
    let mut denom = 0.0;
    for (i, x) in data.obs().iter().enumerate() {
        let z = cache.z_hat[(i, g)];
        let bi = cache.b[(i, g)];
        denom += z * a_bar * bi;
        m += x * (z * (a_bar * bi - 1.0));
        a += x * (z * (b_bar - bi));
    }
    denom -= n_g;
    if !(denom.abs() >= 1e-10 * n_g) {
        return Err(Error::DegenerateWeights { component: g });
    }
    Ok((m / denom, a / denom))
}

/// `A* = Σ ẑ (X − M*) / Σ ẑ a` for a held location `M*`.
pub fn fallback_skewness(data: &MatrixSample, cache: &EStepCache, g: usize, m_star: &DMatrix<f64>) -> DMatrix<f64> {
    let mut num = DMatrix::zeros(m_star.nrows(), m_star.ncols());
    let mut den = 0.0;
    for (i, x) in data.obs().iter().enumerate() {
        let z = cache.z_hat[(i, g)];
        num += (x - m_star) * z;
        den += z * cache.a[(i, g)];
    }
    num / den
}

/// ẑ-weighted sums of the conditional weight moments for one component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightStats {
    pub n_g: f64,
    pub sum_a: f64,
    pub sum_b: f64,
    pub sum_c: f64,
}

impl WeightStats {
    pub fn from_cache(cache: &EStepCache, g: usize) -> Self {
        let z = cache.z_hat.column(g);
        let dot = |m: &DMatrix<f64>| {
            z.iter()
                .zip(m.column(g).iter())
                .map(|(zi, v)| if *zi == 0.0 { 0.0 } else { zi * v })
                .sum::<f64>()
        };
        Self {
            n_g: cache.n_g[g],
            sum_a: dot(&cache.a),
            sum_b: dot(&cache.b),
            sum_c: dot(&cache.c),
        }
    }
}

/// `Q_g(θ) = Σ ẑ E[log h(W | θ)]` up to terms free of θ.
pub fn theta_objective(theta: &Theta, s: &WeightStats) -> Result<f64> {
    theta.validate()?;
    Ok(match *theta {
        Theta::Gauss => 0.0,
        Theta::SkewT { nu } => {
            let h = 0.5 * nu;
            s.n_g * (h * h.ln() - ln_gamma(h)?) - (h + 1.0) * s.sum_c - h * s.sum_b
        }
        Theta::VarGamma { gamma } => s.n_g * (gamma * gamma.ln() - ln_gamma(gamma)?) + (gamma - 1.0) * s.sum_c - gamma * s.sum_a,
        Theta::Nig { kappa } => s.n_g * kappa - 0.5 * kappa * kappa * s.sum_a,
        Theta::GenHyp { omega, lambda } => {
            -s.n_g * (std::f64::consts::LN_2 + log_bessel_k(lambda, omega)?) + (lambda - 1.0) * s.sum_c
                - 0.5 * omega * (s.sum_a + s.sum_b)
        }
    })
}

struct RootTol;

impl Convergency<f64> for RootTol {
    fn is_root_found(&mut self, y: f64) -> bool {
        y.abs() < 1e-13
    }

    fn is_converged(&mut self, x1: f64, x2: f64) -> bool {
        (x1 - x2).abs() <= 1e-13 * (1.0 + x1.abs())
    }

    fn is_iteration_limit_reached(&mut self, iter: usize) -> bool {
        iter > 300
    }
}

/// Root of a decreasing function on `[lo, hi]`, clamped to the bound when the
/// sign does not change. Returns the point and whether it was clamped.
fn decreasing_root<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64) -> (f64, bool) {
    let (f_lo, f_hi) = (f(lo), f(hi));
    if f_lo <= 0.0 {
        return (lo, f_lo < 0.0);
    }
    if f_hi >= 0.0 {
        return (hi, f_hi > 0.0);
    }
    match find_root_brent(lo, hi, &mut f, &mut RootTol) {
        Ok(x) => (x.clamp(lo, hi), false),
        Err(_) => {
            // bisection as a last resort
            let (mut a, mut b) = (lo, hi);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if f(mid) > 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            (0.5 * (a + b), false)
        }
    }
}

/// Stationarity residual for ν: `log(ν/2) + 1 − ψ(ν/2) − (Σẑb + Σẑc)/N_g`.
pub fn skew_t_residual(nu: f64, s: &WeightStats) -> f64 {
    let h = 0.5 * nu;
    h.ln() + 1.0 - statrs::function::gamma::digamma(h) - (s.sum_b + s.sum_c) / s.n_g
}

/// Stationarity residual for γ: `log γ + 1 − ψ(γ) + (Σẑc − Σẑa)/N_g`.
pub fn var_gamma_residual(gamma: f64, s: &WeightStats) -> f64 {
    gamma.ln() + 1.0 - statrs::function::gamma::digamma(gamma) + (s.sum_c - s.sum_a) / s.n_g
}

fn gh_maximize(start: (f64, f64), s: &WeightStats) -> Result<(f64, f64)> {
    let c_bar = s.sum_c / s.n_g;
    let ab_bar = 0.5 * (s.sum_a + s.sum_b) / s.n_g;
    let (mut omega, mut lambda) = (
        start.0.clamp(OMEGA_BOUNDS.0, OMEGA_BOUNDS.1),
        start.1.clamp(GH_LAMBDA_BOUNDS.0, GH_LAMBDA_BOUNDS.1),
    );
    for _ in 0..200 {
        let (w0, l0) = (omega, lambda);
        lambda = decreasing_root(
            |l| c_bar - dlog_bessel_k_dorder(l, omega).unwrap_or(f64::NAN),
            GH_LAMBDA_BOUNDS.0,
            GH_LAMBDA_BOUNDS.1,
        )
        .0;
        // d/dω: K_{λ+1}(ω)/K_λ(ω) − λ/ω − (ā + b̄)/2
        omega = decreasing_root(
            |w| match log_bessel_k_pair(lambda, w) {
                Ok((lk, lk1)) => (lk1 - lk).exp() - lambda / w - ab_bar,
                Err(_) => f64::NAN,
            },
            OMEGA_BOUNDS.0,
            OMEGA_BOUNDS.1,
        )
        .0;
        if (omega - w0).abs() + (lambda - l0).abs() < 1e-10 * (1.0 + omega + lambda.abs()) {
            break;
        }
    }
    Ok((omega, lambda))
}

/// Conditional maximization of θ; the previous value is kept if Q would decrease.
pub fn mstep_theta(current: &Theta, s: &WeightStats) -> Result<Theta> {
    let proposal = match *current {
        Theta::Gauss => return Ok(Theta::Gauss),
        Theta::SkewT { .. } => Theta::SkewT {
            nu: decreasing_root(|nu| skew_t_residual(nu, s), NU_BOUNDS.0, NU_BOUNDS.1).0,
        },
        Theta::VarGamma { .. } => Theta::VarGamma {
            gamma: decreasing_root(|g| var_gamma_residual(g, s), GAMMA_BOUNDS.0, GAMMA_BOUNDS.1).0,
        },
        Theta::Nig { .. } => Theta::Nig { kappa: s.n_g / s.sum_a },
        Theta::GenHyp { omega, lambda } => {
            let (omega, lambda) = gh_maximize((omega, lambda), s)?;
            Theta::GenHyp { omega, lambda }
        }
    };
    if proposal.validate().is_err() {
        return Ok(*current);
    }
    let (q_new, q_old) = (theta_objective(&proposal, s)?, theta_objective(current, s)?);
    if q_new.is_finite() && q_new >= q_old - 1e-12 * q_old.abs() {
        Ok(proposal)
    } else {
        Ok(*current)
    }
}

/// Factor-score moments of one observation (stage 2 orientation: `resid` is
/// n×p, `other_inv` the p×p inverse column scale, `proj` q×n).
pub fn latent_moments(
    resid: &DMatrix<f64>,
    a_i: f64,
    b_i: f64,
    skew: &DMatrix<f64>,
    other_inv: &DMatrix<f64>,
    proj: &DMatrix<f64>,
    inner_inv: &DMatrix<f64>,
) -> LatentMoments {
    let e1 = proj * (resid - skew * a_i);
    let e2 = proj * (resid * b_i - skew);
    let rp = resid * other_inv;
    let ap = skew * other_inv;
    let k = &rp * resid.transpose() * b_i - &rp * skew.transpose() - &ap * resid.transpose()
        + &ap * skew.transpose() * a_i;
    let e3 = inner_inv * other_inv.nrows() as f64 + proj * k * proj.transpose();
    LatentMoments { e1, e2, e3: (&e3 + e3.transpose()) * 0.5 }
}

/// Inputs of one factor stage in stage-2 orientation.
pub struct FactorStage<'a> {
    pub resid: &'a [DMatrix<f64>],
    pub z: &'a [f64],
    pub a: &'a [f64],
    pub b: &'a [f64],
    pub skew: &'a DMatrix<f64>,
    pub other_inv: &'a DMatrix<f64>,
    pub loadings: &'a DMatrix<f64>,
    pub proj: &'a DMatrix<f64>,
    pub inner_inv: &'a DMatrix<f64>,
}

/// Loadings and diagonal update of one stage. With
/// `K = Σẑ[b R P R′ − R P A′ − A P R′ + a A P A′]` the moment sums collapse to
/// `ΣẑE3 = N_g·p·Ω + L K L′` and `N_g·p·S = K − Λ̂LK − KL′Λ̂′ + Λ̂(ΣẑE3)Λ̂′`.
pub fn factor_update(st: &FactorStage<'_>, floor: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let dim = st.skew.nrows();
    let other = st.other_inv.nrows();
    let mut k = DMatrix::zeros(dim, dim);
    let mut sum_r = DMatrix::zeros(dim, other);
    let (mut n_g, mut sum_a) = (0.0, 0.0);
    for (i, r) in st.resid.iter().enumerate() {
        let z = st.z[i];
        if z == 0.0 {
            continue;
        }
        n_g += z;
        sum_a += z * st.a[i];
        sum_r += r * z;
        let rp = r * st.other_inv;
        k += rp * r.transpose() * (z * st.b[i]);
    }
    let ap = st.skew * st.other_inv;
    let cross = &sum_r * ap.transpose();
    k -= &cross + cross.transpose();
    k += &ap * st.skew.transpose() * sum_a;
    let k = (&k + k.transpose()) * 0.5;
    let norm = n_g * other as f64;
    let q = st.loadings.ncols();
    let (loadings, s_diag) = if q == 0 {
        (DMatrix::zeros(dim, 0), k.diagonal())
    } else {
        let kl = &k * st.proj.transpose();
        let e3 = st.inner_inv * norm + st.proj * &kl;
        let e3 = (&e3 + e3.transpose()) * 0.5;
        let chol = e3
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("summed factor moments are singular".into()))?;
        let lam = chol.solve(&kl.transpose()).transpose();
        let lk = kl.transpose();
        let lam_e3 = &lam * &e3;
        let mut d = k.diagonal();
        for j in 0..dim {
            d[j] += lam_e3.row(j).dot(&lam.row(j)) - 2.0 * lam.row(j).dot(&lk.column(j).transpose());
        }
        (lam, d)
    };
    let diag = s_diag.map(|v| (v / norm).max(floor));
    Ok((loadings, diag))
}

/// Random soft memberships, weighted means, 0.1 skewness, the diagonal
/// starting scales and uniform[−1, 1] loadings.
pub fn initialize<R: Rng + ?Sized>(
    data: &MatrixSample,
    family: Family,
    g_count: usize,
    q: usize,
    r: usize,
    labels: Option<&[usize]>,
    rng: &mut R,
) -> Result<MixtureModel> {
    let (n, p) = data.dims();
    let n_obs = data.len();
    let mut z = DMatrix::zeros(n_obs, g_count);
    for i in 0..n_obs {
        if let Some(k) = labels.map(|l| l[i]).filter(|&k| k > 0) {
            z[(i, k - 1)] = 1.0;
            continue;
        }
        let e: Vec<f64> = (0..g_count).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = e.iter().sum();
        for (g, v) in e.iter().enumerate() {
            z[(i, g)] = v / total;
        }
    }
    let mut components = Vec::with_capacity(g_count);
    for g in 0..g_count {
        let n_g: f64 = z.column(g).sum();
        if n_g <= 0.0 {
            return Err(Error::EmptyComponent { component: g, size: n_g });
        }
        let mut m = DMatrix::zeros(n, p);
        for (i, x) in data.obs().iter().enumerate() {
            m += x * z[(i, g)];
        }
        m /= n_g;
        let mut s_row = DVector::zeros(n);
        let mut s_col = DVector::zeros(p);
        for (i, x) in data.obs().iter().enumerate() {
            let rsd = x - &m;
            let zi = z[(i, g)];
            for j in 0..n {
                s_row[j] += zi * rsd.row(j).norm_squared();
            }
            for j in 0..p {
                s_col[j] += zi * rsd.column(j).norm_squared();
            }
        }
        let floor = 1e-8;
        let skew = if family == Family::Gauss { 0.0 } else { 0.1 };
        components.push(ComponentParams {
            pi: n_g / n_obs as f64,
            a: DMatrix::from_element(n, p, skew),
            m,
            lambda: DMatrix::from_fn(n, q, |_, _| rng.random_range(-1.0..=1.0)),
            sigma_diag: s_row.map(|v: f64| (v / (p as f64 * n_g)).max(floor)),
            delta: DMatrix::from_fn(p, r, |_, _| rng.random_range(-1.0..=1.0)),
            psi_diag: s_col.map(|v: f64| (v / (n as f64 * n_g)).max(floor)),
            theta: family.default_theta(),
        });
    }
    normalize_weights(&mut components);
    MixtureModel::new(family, components)
}

fn normalize_weights(components: &mut [ComponentParams]) {
    let total: f64 = components.iter().map(|c| c.pi).sum();
    components.iter_mut().for_each(|c| c.pi /= total);
}

/// One Aitken step on `(l^{(t-1)}, l^{(t)}, l^{(t+1)})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AitkenStep {
    pub acceleration: f64,
    pub l_inf: f64,
    /// `l∞ − l^{(t)}`.
    pub gap: f64,
}

pub fn aitken(l_prev: f64, l: f64, l_next: f64) -> Option<AitkenStep> {
    let denom = l - l_prev;
    if denom == 0.0 {
        return None;
    }
    let acceleration = (l_next - l) / denom;
    let l_inf = l + (l_next - l) / (1.0 - acceleration);
    Some(AitkenStep { acceleration, l_inf, gap: l_inf - l })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convergence {
    Continue,
    Converged,
}

/// Aitken stopping rule on the last three trace entries with threshold `epsilon`.
pub fn check_convergence(trace: &[f64], epsilon: f64) -> Convergence {
    let t = trace.len();
    if t < 3 {
        return Convergence::Continue;
    }
    let (l0, l1, l2) = (trace[t - 3], trace[t - 2], trace[t - 1]);
    match aitken(l0, l1, l2) {
        None => {
            if (l2 - l1).abs() < epsilon {
                Convergence::Converged
            } else {
                Convergence::Continue
            }
        }
        Some(s) if s.acceleration < 1.0 && s.gap > 0.0 && s.gap < epsilon => Convergence::Converged,
        Some(_) => Convergence::Continue,
    }
}

fn epsilon_for(policy: EpsilonPolicy, trace: &[f64]) -> Option<f64> {
    match policy {
        EpsilonPolicy::Fixed(e) => Some(e),
        EpsilonPolicy::Relative { factor, freeze_at } => trace.get(freeze_at).map(|l| factor * l.abs()),
    }
}

fn check_sizes(cache: &EStepCache) -> Result<()> {
    match cache.n_g.iter().position(|&n| n < 1.0) {
        Some(g) => Err(Error::EmptyComponent { component: g, size: cache.n_g[g] }),
        None => Ok(()),
    }
}

fn stage_estep(
    data: &MatrixSample,
    model: &mut MixtureModel,
    labels: Option<&[usize]>,
    moments: Moments,
    held: Option<(&MixtureModel, &EStepCache)>,
    fallbacks: &mut usize,
) -> Result<EStepCache> {
    match estep_inner(data, model, labels, moments) {
        Ok(c) => Ok(c),
        Err(StepError::Fatal(e)) => Err(e),
        Err(StepError::Singular(gs)) => {
            let Some((prev, cache1)) = held else {
                return Err(step_error_to_error(StepError::Singular(gs)));
            };
            for &g in &gs {
                let m_star = prev.components[g].m.clone();
                model.components[g].a = fallback_skewness(data, cache1, g, &m_star);
                model.components[g].m = m_star;
                *fallbacks += 1;
            }
            estep_inner(data, model, labels, moments).map_err(step_error_to_error)
        }
    }
}

fn column(m: &DMatrix<f64>, g: usize) -> Vec<f64> {
    m.column(g).iter().copied().collect()
}

fn run_stage2(data: &MatrixSample, model: &mut MixtureModel, cache: &EStepCache, floor: f64) -> Result<()> {
    let evals = model.evaluators()?;
    for (g, ev) in evals.iter().enumerate() {
        let comp = &model.components[g];
        let resid: Vec<DMatrix<f64>> = data.obs().iter().map(|x| x - &comp.m).collect();
        let (z, a, b) = (column(&cache.z_hat, g), column(&cache.a, g), column(&cache.b, g));
        let (lam, sig) = factor_update(
            &FactorStage {
                resid: &resid,
                z: &z,
                a: &a,
                b: &b,
                skew: &comp.a,
                other_inv: ev.col.inv_star(),
                loadings: &comp.lambda,
                proj: &ev.row.proj,
                inner_inv: &ev.row.inner_inv,
            },
            floor,
        )?;
        let comp = &mut model.components[g];
        comp.lambda = lam;
        comp.sigma_diag = sig;
    }
    Ok(())
}

fn run_stage3(data: &MatrixSample, model: &mut MixtureModel, cache: &EStepCache, floor: f64) -> Result<()> {
    let evals = model.evaluators()?;
    for (g, ev) in evals.iter().enumerate() {
        let comp = &model.components[g];
        let resid: Vec<DMatrix<f64>> = data.obs().iter().map(|x| (x - &comp.m).transpose()).collect();
        let (z, a, b) = (column(&cache.z_hat, g), column(&cache.a, g), column(&cache.b, g));
        let skew = comp.a.transpose();
        let proj = ev.col.proj.transpose();
        let (del, psi) = factor_update(
            &FactorStage {
                resid: &resid,
                z: &z,
                a: &a,
                b: &b,
                skew: &skew,
                other_inv: ev.row.inv_star(),
                loadings: &comp.delta,
                proj: &proj,
                inner_inv: &ev.col.inner_inv,
            },
            floor,
        )?;
        let comp = &mut model.components[g];
        comp.delta = del;
        comp.psi_diag = psi;
    }
    Ok(())
}

/// Stage-1 M-step in place. Returns the components that took the degenerate-weights path.
pub fn mstep_stage1(data: &MatrixSample, cache: &EStepCache, model: &mut MixtureModel) -> Result<Vec<usize>> {
    let n_obs = data.len() as f64;
    let family = model.family;
    let mut degenerate = Vec::new();
    for g in 0..model.g() {
        match stage1_location(data, cache, g, family) {
            Ok((m, a)) => {
                model.components[g].m = m;
                model.components[g].a = a;
            }
            Err(Error::DegenerateWeights { .. }) => {
                let m_star = model.components[g].m.clone();
                model.components[g].a = fallback_skewness(data, cache, g, &m_star);
                degenerate.push(g);
            }
            Err(e) => return Err(e),
        }
        let comp = &mut model.components[g];
        comp.pi = cache.n_g[g] / n_obs;
        comp.theta = mstep_theta(&comp.theta, &WeightStats::from_cache(cache, g))?;
    }
    normalize_weights(&mut model.components);
    Ok(degenerate)
}

/// Runs AECM from an explicit starting model.
pub fn fit_from(
    data: &MatrixSample,
    start: MixtureModel,
    labels: Option<&[usize]>,
    opts: &FitOptions,
) -> Result<FitResult> {
    start.validate()?;
    check_labels(labels, data.len(), start.g())?;
    let mut model = start;
    let family = model.family;
    let mut trace = Vec::new();
    let mut fallbacks = 0;
    let mut converged = false;
    let mut iterations = 0;
    let final_cache = loop {
        let cache1 = estep_inner(data, &model, labels, moments_for(family, true)).map_err(step_error_to_error)?;
        check_sizes(&cache1)?;
        trace.push(cache1.loglik);
        if let Some(eps) = epsilon_for(opts.epsilon, &trace) {
            if check_convergence(&trace, eps) == Convergence::Converged {
                converged = true;
                break cache1;
            }
        }
        if iterations == opts.max_iter {
            break cache1;
        }
        iterations += 1;

        let prev = model.clone();
        fallbacks += mstep_stage1(data, &cache1, &mut model)?.len();
        let cache2 = stage_estep(data, &mut model, labels, moments_for(family, false), Some((&prev, &cache1)), &mut fallbacks)?;
        run_stage2(data, &mut model, &cache2, opts.variance_floor)?;
        let cache3 = stage_estep(data, &mut model, labels, moments_for(family, false), None, &mut fallbacks)?;
        run_stage3(data, &mut model, &cache3, opts.variance_floor)?;
        model.components.iter_mut().for_each(ComponentParams::balance_scales);
    };
    let final_loglik = *trace.last().expect("trace has at least one entry");
    Ok(FitResult {
        model,
        z_hat: final_cache.z_hat,
        loglik_trace: trace,
        converged,
        iterations,
        final_loglik,
        fallbacks,
        start_seed: 0,
    })
}

/// Fits the mixture with `opts.starts` random starts and keeps the best.
pub fn fit(
    data: &MatrixSample,
    family: Family,
    g_count: usize,
    q: usize,
    r: usize,
    labels: Option<&[usize]>,
    opts: &FitOptions,
) -> Result<FitResult> {
    let (n, p) = data.dims();
    if g_count == 0 || opts.starts == 0 {
        return Err(Error::Domain("G and the number of starts must be positive".into()));
    }
    if q >= n || r >= p {
        return Err(Error::Domain(format!("need q < n and r < p (q={q}, r={r}, n={n}, p={p})")));
    }
    check_labels(labels, data.len(), g_count)?;
    let mut master = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<FitResult> = None;
    let mut diagnostics = Vec::new();
    for s in 0..opts.starts {
        let seed = master.next_u64();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let attempt = initialize(data, family, g_count, q, r, labels, &mut rng).and_then(|m| fit_from(data, m, labels, opts));
        match attempt {
            Ok(mut res) => {
                res.start_seed = seed;
                if best.as_ref().is_none_or(|b| res.final_loglik > b.final_loglik) {
                    best = Some(res);
                }
            }
            Err(e) => diagnostics.push(format!("start {s} (seed {seed}): {e}")),
        }
    }
    best.ok_or(Error::FitFailed { starts: opts.starts, diagnostics })
}
