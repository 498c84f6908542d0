//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line before asserting, so `--nocapture` output doubles as a scorecard.

mod common;

use common::{gig_moments_by_quadrature, mvn_logpdf, scalar_mixture_density, Latent};
use mvskew::aecm::{aitken, check_convergence, fit, fit_from, initialize, Convergence, FitOptions};
use mvskew::datagen::{generate, SimConfig};
use mvskew::gig::{gig_moments, GigParams};
use mvskew::matvar::{logpdf_matnorm, logpdf_skew, MatNormParams, SkewMatParams, SpdScale};
use mvskew::metrics::ari;
use mvskew::model::map_labels;
use mvskew::selection::{count_free_params, grid_search, ModelGridSpec};
use mvskew::{Family, Theta};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn report(n: usize, pass: bool, detail: impl AsRef<str>) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n}: {verdict}: {}", detail.as_ref());
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

#[test]
fn criterion_01_gig_moments_match_quadrature() {
    let t = Instant::now();
    let mut worst = (0.0f64, 0.0f64);
    let mut points = 0;
    // every (a, b, λ) combination; the a = b diagonal alone has 28 points
    for a in [0.1, 1.0, 10.0, 100.0] {
        for b in [0.1, 1.0, 10.0, 100.0] {
            for lambda in [-30.0, -2.0, -0.5, 0.0, 0.5, 2.0, 30.0] {
                let m = gig_moments(&GigParams::new(a, b, lambda).unwrap()).unwrap();
                let (e_w, e_inv, e_log) = gig_moments_by_quadrature(a, b, lambda);
                let rel = ((m.e_w - e_w).abs() / e_w).max((m.e_inv_w - e_inv).abs() / e_inv);
                worst = (worst.0.max(rel), worst.1.max((m.e_log_w - e_log).abs()));
                points += 1;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = worst.0 <= 1e-8 && worst.1 <= 1e-6 && secs < 10.0;
    report(1, pass, format!("{points} points, max rel err {:.1e}, max log err {:.1e}, {secs:.2} s", worst.0, worst.1));
    assert!(pass);
}

fn latent(theta: Theta) -> Latent {
    match theta {
        Theta::SkewT { nu } => Latent::SkewT(nu),
        Theta::GenHyp { omega, lambda } => Latent::GenHyp(omega, lambda),
        Theta::VarGamma { gamma } => Latent::VarGamma(gamma),
        Theta::Nig { kappa } => Latent::Nig(kappa),
        Theta::Gauss => unreachable!(),
    }
}

fn random_spd(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let b = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
    &b * b.transpose() + DMatrix::identity(dim, dim) * 0.5
}

#[test]
fn criterion_02_densities_match_oracles() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut scalar_err: f64 = 0.0;
    for kind in 0..4 {
        for _ in 0..20 {
            let theta = match kind {
                0 => Theta::SkewT { nu: rng.random_range(2.5..30.0) },
                1 => Theta::GenHyp { omega: rng.random_range(0.5..10.0), lambda: rng.random_range(-5.0..5.0) },
                2 => Theta::VarGamma { gamma: rng.random_range(1.0..15.0) },
                _ => Theta::Nig { kappa: rng.random_range(0.5..5.0) },
            };
            let (m, a, s, x) = (rng.random_range(-1.0..1.0), rng.random_range(-2.0..2.0), rng.random_range(0.3..3.0), rng.random_range(-4.0..6.0));
            let params = SkewMatParams::new(
                theta,
                DMatrix::from_element(1, 1, m),
                DMatrix::from_element(1, 1, a),
                SpdScale::from_diagonal(&[s]).unwrap(),
                SpdScale::identity(1),
            )
            .unwrap();
            let got = logpdf_skew(&DMatrix::from_element(1, 1, x), &params).unwrap();
            scalar_err = scalar_err.max((got - scalar_mixture_density(x, m, a, s, &latent(theta))).abs());
        }
    }
    let mut normal_err: f64 = 0.0;
    for _ in 0..40 {
        let (n, p) = (rng.random_range(1..=5), rng.random_range(1..=4));
        let (sigma, psi) = (random_spd(n, &mut rng), random_spd(p, &mut rng));
        let m = DMatrix::from_fn(n, p, |_, _| rng.random_range(-2.0..2.0));
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-3.0..3.0));
        let params = MatNormParams::new(m.clone(), SpdScale::new(sigma.clone()).unwrap(), SpdScale::new(psi.clone()).unwrap()).unwrap();
        let want = mvn_logpdf(x.as_slice(), m.as_slice(), &psi.kronecker(&sigma));
        normal_err = normal_err.max((logpdf_matnorm(&x, &params).unwrap() - want).abs());
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = scalar_err < 1e-8 && normal_err < 1e-10 && secs < 30.0;
    report(2, pass, format!("skewed max err {scalar_err:.1e}, matrix normal max err {normal_err:.1e}, {secs:.2} s"));
    assert!(pass);
}

#[test]
fn criterion_03_traces_are_monotone() {
    let t = Instant::now();
    let mut bad = Vec::new();
    for family in Family::ALL {
        for seed in 0..10 {
            let sim = generate(&SimConfig::benchmark(family, 10, 200, 2.0, seed)).unwrap();
            // a start that empties a component is abandoned, so allow a few
            let opts = FitOptions { starts: 3, seed, ..FitOptions::default() };
            match fit(&sim.sample, family, 2, 3, 2, None, &opts) {
                Ok(res) => {
                    if let Some(w) = res.loglik_trace.windows(2).find(|w| w[1] < w[0] - 1e-8 * w[0].abs()) {
                        bad.push(format!("{family} seed {seed}: {} -> {}", w[0], w[1]));
                    }
                }
                Err(e) => bad.push(format!("{family} seed {seed}: {e}")),
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = bad.is_empty() && secs < 600.0;
    report(3, pass, format!("50 fits, {} failed or decreasing traces, {secs:.0} s {bad:?}", bad.len()));
    assert!(pass);
}

fn recovery_ari(family: Family, starts: usize) -> Vec<f64> {
    (1..=3)
        .map(|seed| {
            let sim = generate(&SimConfig::benchmark(family, 10, 400, 4.0, seed)).unwrap();
            let opts = FitOptions { starts, seed, ..FitOptions::default() };
            let res = fit(&sim.sample, family, 2, 3, 2, None, &opts).unwrap();
            ari(&sim.labels, &map_labels(&res.z_hat)).unwrap()
        })
        .collect()
}

#[test]
fn criterion_04_recovery() {
    let t = Instant::now();
    let vg = recovery_ari(Family::VarGamma, 5);
    // ST starts often stall in a one-cluster solution; more starts make the best one reliable
    let st = recovery_ari(Family::SkewT, 30);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let pass = mean(&vg) >= 0.90 && mean(&st) >= 0.95;
    report(
        4,
        pass,
        format!("VG mean ARI {:.3} {vg:.3?}, ST mean ARI {:.3} {st:.3?}, {:.0} s", mean(&vg), mean(&st), t.elapsed().as_secs_f64()),
    );
    assert!(pass);
}

#[test]
fn criterion_05_selection_picks_two_groups() {
    let t = Instant::now();
    let mut picks = Vec::new();
    for seed in 1..=5 {
        let sim = generate(&SimConfig::benchmark(Family::GenHyp, 10, 400, 1.0, seed)).unwrap();
        let spec = ModelGridSpec {
            families: vec![Family::GenHyp],
            g_range: 1..=4,
            q_range: 1..=5,
            r_range: 1..=5,
            options: FitOptions { starts: 5, seed, ..FitOptions::default() },
            extend: true,
        };
        let out = grid_search(&sim.sample, &spec, None).unwrap();
        picks.push((out.best.cell.g, out.best.cell.q, out.best.cell.r));
    }
    let correct = picks.iter().filter(|p| p.0 == 2).count();
    let secs = t.elapsed().as_secs_f64();
    let pass = correct >= 4 && secs <= 7200.0;
    report(5, pass, format!("G=2 chosen {correct}/5, picks (G, q, r) {picks:?}, {secs:.0} s"));
    assert!(pass);
}

#[test]
fn criterion_06_gaussian_misfit_overfits_groups() {
    let t = Instant::now();
    let mut rows = Vec::new();
    for seed in 0..5 {
        let sim = generate(&SimConfig::benchmark(Family::VarGamma, 10, 400, 4.0, seed)).unwrap();
        let opts = FitOptions { starts: 5, seed, ..FitOptions::default() };
        let vg = fit(&sim.sample, Family::VarGamma, 2, 3, 2, None, &opts).unwrap();
        let vg_ari = ari(&sim.labels, &map_labels(&vg.z_hat)).unwrap();
        let spec = ModelGridSpec {
            families: vec![Family::Gauss],
            g_range: 1..=4,
            q_range: 3..=3,
            r_range: 2..=2,
            options: opts,
            extend: false,
        };
        let gauss = grid_search(&sim.sample, &spec, None).unwrap();
        let g_ari = ari(&sim.labels, &map_labels(&gauss.best.fit.z_hat)).unwrap();
        rows.push((gauss.best.cell.g, g_ari, vg_ari));
    }
    let over = rows.iter().filter(|r| r.0 > 2).count();
    let worse = rows.iter().filter(|r| r.1 < r.2).count();
    let pass = over >= 3 && worse == rows.len();
    let detail: Vec<String> = rows.iter().map(|(g, a, b)| format!("G={g} ARI {a:.2} vs VG {b:.2}")).collect();
    report(6, pass, format!("G>2 in {over}/5, Gaussian ARI below VG in {worse}/5 {detail:?}, {:.0} s", t.elapsed().as_secs_f64()));
    assert!(pass);
}

#[test]
fn criterion_07_supervision_does_not_hurt() {
    let t = Instant::now();
    let (mut unsup, mut semi) = (Vec::new(), Vec::new());
    for seed in 0..5 {
        let sim = generate(&SimConfig::benchmark(Family::SkewT, 10, 100, 1.0, seed)).unwrap();
        let partial: Vec<usize> = sim.labels.iter().enumerate().map(|(i, &l)| if i % 2 == 0 { l } else { 0 }).collect();
        let opts = FitOptions { starts: 5, seed, ..FitOptions::default() };
        let held_out = |z: &DMatrix<f64>| {
            let pred = map_labels(z);
            let idx = (1..sim.labels.len()).step_by(2);
            let truth: Vec<usize> = idx.clone().map(|i| sim.labels[i]).collect();
            ari(&truth, &idx.map(|i| pred[i]).collect::<Vec<_>>()).unwrap()
        };
        unsup.push(held_out(&fit(&sim.sample, Family::SkewT, 2, 3, 2, None, &opts).unwrap().z_hat));
        semi.push(held_out(&fit(&sim.sample, Family::SkewT, 2, 3, 2, Some(&partial), &opts).unwrap().z_hat));
    }
    let (mu, ms) = (median(unsup.clone()), median(semi.clone()));
    let pass = ms >= mu;
    report(
        7,
        pass,
        format!("median ARI unsupervised {mu:.3} {unsup:.3?}, 50% supervised {ms:.3} {semi:.3?}, {:.0} s", t.elapsed().as_secs_f64()),
    );
    assert!(pass);
}

#[test]
fn criterion_08_parameter_count_identities() {
    let mut tuples = 0;
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    while tuples < 200 {
        let (n, p) = (rng.random_range(2..=30usize), rng.random_range(2..=30usize));
        let (q, r) = (rng.random_range(0..n), rng.random_range(0..p));
        let family = Family::ALL[tuples % Family::ALL.len()];
        let g = 1 + tuples % 4;
        // structured scale sizes read back out of the total count
        let base = count_free_params(family, g, n, p, 0, 0) as i64;
        let row = (count_free_params(family, g, n, p, q, 0) as i64 - base) / g as i64 + n as i64;
        let col = (count_free_params(family, g, n, p, 0, r) as i64 - base) / g as i64 + p as i64;
        let (n_, p_, q_, r_) = (n as i64, p as i64, q as i64, r as i64);
        let lhs_row = n_ * (n_ + 1) - 2 * row;
        let lhs_col = p_ * (p_ + 1) - 2 * col;
        if lhs_row != (n_ - q_).pow(2) - (n_ + q_) || lhs_col != (p_ - r_).pow(2) - (p_ + r_) {
            failures.push((family, g, n, p, q, r));
        }
        tuples += 1;
    }
    let pass = failures.is_empty();
    report(8, pass, format!("{tuples} tuples, {} violations {failures:?}", failures.len()));
    assert!(pass);
}

#[test]
fn criterion_09_aitken_rule() {
    let step = aitken(100.0, 101.0, 101.5).unwrap();
    let hand = step.l_inf == 102.0 && check_convergence(&[100.0, 101.0, 101.5], 1.5) == Convergence::Converged;
    // growing and constant increments: the sequence is not contracting
    let mut stopped = Vec::new();
    for trace in [vec![100.0, 101.0, 103.0, 107.0, 115.0], vec![1.0, 2.0, 3.0, 4.0, 5.0]] {
        for end in 3..=trace.len() {
            if check_convergence(&trace[..end], 1e12) == Convergence::Converged {
                stopped.push(trace[..end].to_vec());
            }
        }
    }
    let pass = hand && stopped.is_empty();
    report(9, pass, format!("l_inf {} for (100, 101, 101.5), non-contracting stops {stopped:?}", step.l_inf));
    assert!(pass);
}

#[test]
fn criterion_10_fallback_keeps_the_fit_finite() {
    // fully labelled VG data whose second class holds a single observation; the
    // start puts that class's location off the point, and the first location
    // update lands exactly on it, where the density diverges
    let sim = generate(&SimConfig::benchmark(Family::VarGamma, 4, 60, 2.0, 10)).unwrap();
    let mut labels = vec![1; 60];
    labels[17] = 2;
    let mut start = initialize(&sim.sample, Family::VarGamma, 2, 1, 1, Some(&labels), &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    start.components[1].m.add_scalar_mut(0.5);
    let opts = FitOptions { max_iter: 50, ..FitOptions::default() };
    let (pass, detail) = match fit_from(&sim.sample, start, Some(&labels), &opts) {
        Ok(r) => (
            r.fallbacks > 0 && r.final_loglik.is_finite(),
            format!("{} fallbacks, final loglik {}, {} iterations", r.fallbacks, r.final_loglik, r.iterations),
        ),
        Err(e) => (false, format!("fit failed: {e}")),
    };
    report(10, pass, detail);
    assert!(pass);
}
