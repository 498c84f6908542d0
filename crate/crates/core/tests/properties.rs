use mvskew::bfa::ComponentParams;
use mvskew::io::ModelFile;
use mvskew::metrics::{ari, mcr};
use mvskew::model::{map_labels, responsibilities};
use mvskew::selection::{count_free_params, parsimonious, scale_reduction};
use mvskew::{Family, MixtureModel};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn partition(max_len: usize, max_k: usize) -> impl Strategy<Value = Vec<usize>> {
    (1..=max_k).prop_flat_map(move |k| prop::collection::vec(1..=k, 2..max_len))
}

/// Relabels `x` through a permutation of `1..=k` (k = max label).
fn relabel(x: &[usize], perm: &[usize]) -> Vec<usize> {
    x.iter().map(|&l| perm[(l - 1) % perm.len()]).collect()
}

/// Rand-index pieces by brute force over all pairs.
fn ari_by_pairs(t: &[usize], p: &[usize]) -> f64 {
    let n = t.len();
    let (mut both, mut same_t, mut same_p) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (t[i] == t[j], p[i] == p[j]);
            both += (a && b) as u8 as f64;
            same_t += a as u8 as f64;
            same_p += b as u8 as f64;
        }
    }
    let total = (n * (n - 1) / 2) as f64;
    let expected = same_t * same_p / total;
    let max = 0.5 * (same_t + same_p);
    if max == expected {
        return if both == expected { 1.0 } else { 0.0 };
    }
    (both - expected) / (max - expected)
}

fn mcr_by_permutations(t: &[usize], p: &[usize]) -> f64 {
    let k = t.iter().chain(p).copied().max().unwrap();
    let mut perm: Vec<usize> = (1..=k).collect();
    let mut best = 0;
    // Heap's algorithm over all k! bijections
    fn heap(n: usize, perm: &mut Vec<usize>, t: &[usize], p: &[usize], best: &mut usize) {
        if n == 1 {
            let hits = t.iter().zip(p).filter(|(a, b)| **a == perm[**b - 1]).count();
            *best = (*best).max(hits);
            return;
        }
        for i in 0..n {
            heap(n - 1, perm, t, p, best);
            let j = if n % 2 == 0 { i } else { 0 };
            perm.swap(j, n - 1);
        }
    }
    heap(k, &mut perm, t, p, &mut best);
    1.0 - best as f64 / t.len() as f64
}

#[test]
fn ari_pair_counting_example() {
    let (t, p) = ([1, 1, 2, 2], [1, 2, 2, 2]);
    let want = ari_by_pairs(&t, &p);
    assert!((ari(&t, &p).unwrap() - want).abs() < 1e-15);
    // 6 pairs: one shared within-class pair, two same in truth, three same in pred
    let expected = 2.0 * 3.0 / 6.0;
    assert!((want - (1.0 - expected) / (2.5 - expected)).abs() < 1e-15);
}

proptest! {
    #[test]
    fn ari_matches_pair_oracle_and_is_symmetric((t, p) in (2usize..40).prop_flat_map(|n| (prop::collection::vec(1usize..5, n), prop::collection::vec(1usize..5, n)))) {
        let a = ari(&t, &p).unwrap();
        prop_assert!((a - ari_by_pairs(&t, &p)).abs() < 1e-12);
        prop_assert!((a - ari(&p, &t).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn metrics_are_label_permutation_invariant(x in partition(60, 5), perm in Just(vec![3usize, 5, 1, 2, 4]).prop_shuffle()) {
        let y = relabel(&x, &perm);
        prop_assert_eq!(ari(&x, &x).unwrap(), 1.0);
        prop_assert_eq!(mcr(&x, &x).unwrap(), 0.0);
        prop_assert!((ari(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        prop_assert_eq!(mcr(&x, &y).unwrap(), 0.0);
    }

    #[test]
    fn mcr_matches_permutation_oracle((t, p) in (2usize..40).prop_flat_map(|n| (prop::collection::vec(1usize..6, n), prop::collection::vec(1usize..6, n)))) {
        let want = mcr_by_permutations(&t, &p);
        prop_assert!((mcr(&t, &p).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn responsibilities_rows_sum_to_one(rows in prop::collection::vec(prop::collection::vec(-800.0f64..50.0, 3), 1..30)) {
        let w = DMatrix::from_fn(rows.len(), 3, |i, j| rows[i][j]);
        let z = responsibilities(&w, None).unwrap();
        for row in z.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let labels = map_labels(&z);
        for (i, l) in labels.iter().enumerate() {
            let best = (0..3).map(|g| w[(i, g)]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(w[(i, l - 1)], best);
        }
    }

    #[test]
    fn labelled_rows_become_indicators(k in 1usize..=3, noise in prop::collection::vec(-5.0f64..5.0, 3)) {
        let w = DMatrix::from_row_slice(1, 3, &noise);
        let z = responsibilities(&w, Some(&[k])).unwrap();
        for g in 0..3 {
            prop_assert_eq!(z[(0, g)], if g + 1 == k { 1.0 } else { 0.0 });
        }
    }
}

/// Entries of a serialized model minus the π sum constraint and the loading rotations.
fn count_by_enumeration(family: Family, g: usize, n: usize, p: usize, q: usize, r: usize) -> usize {
    let comp = ComponentParams {
        pi: 1.0 / g as f64,
        m: DMatrix::zeros(n, p),
        a: DMatrix::zeros(n, p),
        lambda: DMatrix::zeros(n, q),
        sigma_diag: DVector::from_element(n, 1.0),
        delta: DMatrix::zeros(p, r),
        psi_diag: DVector::from_element(p, 1.0),
        theta: family.default_theta(),
    };
    let model = MixtureModel { family, components: vec![comp; g] };
    let json: serde_json::Value = serde_json::to_value(ModelFile::from_model(&model, None)).unwrap();
    fn numbers(v: &serde_json::Value, skip_a: bool) -> usize {
        match v {
            serde_json::Value::Number(_) => 1,
            serde_json::Value::Array(a) => a.iter().map(|x| numbers(x, skip_a)).sum(),
            serde_json::Value::Object(o) => {
                o.iter().filter(|(k, _)| !(skip_a && k.as_str() == "a")).map(|(_, x)| numbers(x, skip_a)).sum()
            }
            _ => 0,
        }
    }
    let per_component: usize = json["components"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| numbers(c, family == Family::Gauss))
        .sum();
    let rotations = g * (q * q.saturating_sub(1) / 2 + r * r.saturating_sub(1) / 2);
    per_component - rotations - 1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]
    #[test]
    fn free_parameter_count_matches_enumeration(
        family in prop::sample::select(Family::ALL.to_vec()),
        g in 1usize..5, n in 1usize..12, p in 1usize..12, qf in 0.0f64..1.0, rf in 0.0f64..1.0,
    ) {
        let (q, r) = (((n as f64) * qf) as usize, ((p as f64) * rf) as usize);
        prop_assert_eq!(count_free_params(family, g, n, p, q, r), count_by_enumeration(family, g, n, p, q, r));
    }
}

#[test]
fn reduction_identity_sweep() {
    let mut checked = 0;
    for n in 1..=20usize {
        for q in 0..n.min(10) {
            let lhs = 2 * scale_reduction(n, q);
            let rhs = ((n - q) * (n - q)) as i64 - (n + q) as i64;
            assert_eq!(lhs, rhs, "n={n} q={q}");
            assert_eq!(parsimonious(n, q), rhs > 0);
            checked += 1;
        }
    }
    assert!(checked >= 100);
}

#[test]
fn parsimony_bounds_factor_growth() {
    // the largest admissible k stays below dim − √dim
    for dim in 2..400usize {
        let k_max = (0..dim).filter(|&k| parsimonious(dim, k)).max().unwrap_or(0);
        assert!((k_max as f64) < dim as f64 - (dim as f64).sqrt(), "dim={dim} k_max={k_max}");
    }
}
