//! Test-only numerical oracles. Nothing here calls the Bessel code; GIG
//! normalizers are obtained by quadrature.
#![allow(dead_code)]

use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) on [a, b] to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let mut stack = vec![(a, b, tol)];
    let mut total = 0.0;
    let mut guard = 0;
    while let Some((lo, hi, t)) = stack.pop() {
        let (v, err) = gk15(&f, lo, hi);
        guard += 1;
        if err <= t.max(1e-300) || guard > 200_000 || (hi - lo) < 1e-12 * (1.0 + lo.abs()) {
            total += v;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, 0.5 * t));
            stack.push((mid, hi, 0.5 * t));
        }
    }
    total
}

/// Adaptive integral to relative accuracy `rel`, with the scale taken from a
/// fixed 64-panel Kronrod pass.
pub fn integrate_rel<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel: f64) -> f64 {
    let panels = 64;
    let h = (b - a) / panels as f64;
    let rough: f64 = (0..panels).map(|k| gk15(&f, a + h * k as f64, a + h * (k + 1) as f64).0).sum();
    integrate(f, a, b, rel * rough.abs())
}

/// Integration window in log-space: scans a coarse grid for the maximum of
/// `log_f` and widens until the log integrand is 80 below it.
pub fn log_window<F: Fn(f64) -> f64>(log_f: &F, lo: f64, hi: f64) -> (f64, f64, f64) {
    let steps = 20_000;
    let mut best = f64::NEG_INFINITY;
    let mut t_best = lo;
    for k in 0..=steps {
        let t = lo + (hi - lo) * k as f64 / steps as f64;
        let v = log_f(t);
        if v > best {
            best = v;
            t_best = t;
        }
    }
    let cut = best - 80.0;
    let step = (hi - lo) / steps as f64;
    let mut a = t_best;
    while a > lo && log_f(a) > cut {
        a -= step;
    }
    let mut b = t_best;
    while b < hi && log_f(b) > cut {
        b += step;
    }
    (a, b, best)
}

/// Moments E[Y], E[1/Y], E[log Y] of GIG(a, b, λ) by quadrature over t = log y.
pub fn gig_moments_by_quadrature(a: f64, b: f64, lambda: f64) -> (f64, f64, f64) {
    let log_f = |t: f64| lambda * t - 0.5 * (a * t.exp() + b * (-t).exp());
    let (lo, hi, peak) = log_window(&log_f, -200.0, 200.0);
    let f = |t: f64| (log_f(t) - peak).exp();
    let rel = 1e-13;
    let z = integrate_rel(f, lo, hi, rel);
    let m1 = integrate_rel(|t| f(t) * t.exp(), lo, hi, rel);
    let minv = integrate_rel(|t| f(t) * (-t).exp(), lo, hi, rel);
    // E[log Y] is compared absolutely, so shift t to keep the integrand one-signed
    let mlog = integrate_rel(|t| f(t) * (t - lo), lo, hi, rel) / z + lo;
    (m1 / z, minv / z, mlog)
}

/// Log-density of the latent weight W for a family, normalizing the GH case by quadrature.
pub enum Latent {
    SkewT(f64),
    GenHyp(f64, f64),
    VarGamma(f64),
    Nig(f64),
}

impl Latent {
    pub fn log_density_fn(&self) -> Box<dyn Fn(f64) -> f64> {
        match *self {
            Latent::SkewT(nu) => {
                let h = 0.5 * nu;
                let c = h * h.ln() - ln_gamma(h);
                Box::new(move |w: f64| c - (h + 1.0) * w.ln() - h / w)
            }
            Latent::VarGamma(g) => {
                let c = g * g.ln() - ln_gamma(g);
                Box::new(move |w: f64| c + (g - 1.0) * w.ln() - g * w)
            }
            Latent::Nig(k) => {
                let c = k - 0.5 * (2.0 * PI).ln();
                Box::new(move |w: f64| c - 1.5 * w.ln() - 0.5 * (1.0 / w + k * k * w))
            }
            Latent::GenHyp(omega, lambda) => {
                let log_k = |t: f64| lambda * t - 0.5 * omega * (t.exp() + (-t).exp());
                let (lo, hi, peak) = log_window(&log_k, -200.0, 200.0);
                let z = integrate_rel(|t| (log_k(t) - peak).exp(), lo, hi, 1e-14);
                let c = -(z.ln() + peak);
                Box::new(move |w: f64| c + (lambda - 1.0) * w.ln() - 0.5 * omega * (w + 1.0 / w))
            }
        }
    }
}

/// Scalar (n = p = 1) variance-mean mixture density
/// ∫ φ(x | m + w·a, w·s) h(w) dw by quadrature over t = log w.
pub fn scalar_mixture_density(x: f64, m: f64, a: f64, s: f64, latent: &Latent) -> f64 {
    let log_h = latent.log_density_fn();
    let log_integrand = |t: f64| {
        let w = t.exp();
        let r = x - m - w * a;
        -0.5 * (2.0 * PI * w * s).ln() - r * r / (2.0 * w * s) + log_h(w) + t
    };
    let (lo, hi, peak) = log_window(&log_integrand, -60.0, 60.0);
    let total = integrate_rel(|t| (log_integrand(t) - peak).exp(), lo, hi, 1e-13);
    total.ln() + peak
}

/// Log-density of a multivariate normal via an explicit dense Cholesky.
pub fn mvn_logpdf(x: &[f64], mean: &[f64], cov: &nalgebra::DMatrix<f64>) -> f64 {
    let d = x.len();
    let chol = cov.clone().cholesky().expect("SPD covariance");
    let r = nalgebra::DVector::from_iterator(d, x.iter().zip(mean).map(|(a, b)| a - b));
    let z = chol.l().solve_lower_triangular(&r).unwrap();
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (d as f64 * (2.0 * PI).ln() + logdet + z.dot(&z))
}
