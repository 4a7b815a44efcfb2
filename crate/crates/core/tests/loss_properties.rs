use proptest::prelude::*;

use scarf::losses::{align_uniform, barlow_twins, cosine_similarity_matrix, infonce, infonce_error, infonce_standard};
use scarf::nn::Matrix;

fn square(n: usize, scale: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-scale..scale, n * n).prop_map(move |d| Matrix::from_vec(n, n, d).unwrap())
}

fn sized_square(scale: f64) -> impl Strategy<Value = Matrix> {
    (2usize..=8).prop_flat_map(move |n| square(n, scale))
}

fn naive_infonce(s: &Matrix, tau: f64) -> f64 {
    let n = s.rows();
    let mut total = 0.0;
    for i in 0..n {
        let denom: f64 = (0..n).map(|k| (s.get(i, k) / tau).exp()).sum();
        total -= ((s.get(i, i) / tau).exp() / denom).ln();
    }
    total / n as f64 - (n as f64).ln()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn infonce_matches_naive_formula(s in sized_square(1.0), t in 0usize..3) {
        let tau = [0.5, 1.0, 2.0][t];
        let (l, _) = infonce(&s, tau).unwrap();
        prop_assert!((l - naive_infonce(&s, tau)).abs() < 1e-10);
    }

    #[test]
    fn offset_from_standard_form_is_log_n(s in sized_square(50.0), tau in 0.05f64..5.0) {
        let (a, ga) = infonce(&s, tau).unwrap();
        let (b, gb) = infonce_standard(&s, tau).unwrap();
        prop_assert_eq!(a, b - (s.rows() as f64).ln());
        prop_assert_eq!(ga, gb);
        prop_assert!(a.is_finite());
    }

    #[test]
    fn infonce_gradient_matches_finite_differences(s in sized_square(1.0), tau in 0.5f64..2.0) {
        let (_, g) = infonce(&s, tau).unwrap();
        let h = 1e-6;
        let mut num = Vec::new();
        for k in 0..s.data().len() {
            let mut up = s.clone();
            up.data_mut()[k] += h;
            let mut down = s.clone();
            down.data_mut()[k] -= h;
            num.push((infonce(&up, tau).unwrap().0 - infonce(&down, tau).unwrap().0) / (2.0 * h));
        }
        let diff = g.data().iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = num.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        prop_assert!(diff / norm < 1e-5);
    }

    #[test]
    fn infonce_is_permutation_invariant(s in square(5, 2.0), perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle()) {
        let mut p = Matrix::zeros(5, 5);
        for i in 0..5 {
            for j in 0..5 {
                p.set(i, j, s.get(perm[i], perm[j]));
            }
        }
        let (a, _) = infonce(&s, 1.0).unwrap();
        let (b, _) = infonce(&p, 1.0).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn infonce_error_is_a_multiple_of_one_over_n(s in sized_square(1.0)) {
        let e = infonce_error(&s).unwrap();
        let n = s.rows() as f64;
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert!(((e * n) - (e * n).round()).abs() < 1e-12);
    }

    #[test]
    fn barlow_is_nonnegative(a in prop::collection::vec(-3.0f64..3.0, 24), b in prop::collection::vec(-3.0f64..3.0, 24), lambda in 0.0f64..1.0) {
        let za = Matrix::from_vec(6, 4, a).unwrap();
        let zb = Matrix::from_vec(6, 4, b).unwrap();
        let r = barlow_twins(&za, &zb, lambda).unwrap();
        prop_assert!(r.loss >= 0.0 && r.loss.is_finite());
    }

    #[test]
    fn align_uniform_is_finite(z in prop::collection::vec(-1.0f64..1.0, 20), cross in any::<bool>()) {
        let a = Matrix::from_vec(5, 4, z.clone()).unwrap();
        let b = a.map(|v| v * 0.5 + 0.1);
        let r = align_uniform(&a, &b, 1.0, 1.0, cross).unwrap();
        prop_assert!(r.loss.is_finite() && r.align >= 0.0);
    }

    #[test]
    fn cosine_similarities_are_bounded(z in prop::collection::vec(0.1f64..3.0, 12), w in prop::collection::vec(-3.0f64..-0.1, 12)) {
        let a = Matrix::from_vec(4, 3, z).unwrap();
        let b = Matrix::from_vec(4, 3, w).unwrap();
        let s = cosine_similarity_matrix(&a, &b).unwrap();
        prop_assert!(s.data().iter().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
    }
}

#[test]
fn barlow_is_zero_exactly_at_identity_correlation() {
    // columns standardised and mutually orthogonal across the 4 rows
    let z = Matrix::from_rows(&[[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]]).unwrap();
    let r = barlow_twins(&z, &z, 0.5).unwrap();
    assert!(r.loss < 1e-20, "{}", r.loss);
    let w = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0], [-1.0, -1.0], [-1.0, -1.1]]).unwrap();
    assert!(barlow_twins(&z, &w, 0.5).unwrap().loss > 0.0);
}

#[test]
fn extreme_similarities_stay_finite() {
    let s = Matrix::from_rows(&[[1e3, -1e3], [-1e3, 1e3]]).unwrap();
    let (l, g) = infonce(&s, 0.01).unwrap();
    assert!(l.is_finite() && g.all_finite());
    let z = Matrix::from_rows(&[[1e3, 0.0], [1e3, 0.0], [0.0, 1e3]]).unwrap();
    assert!(align_uniform(&z, &z, 1.0, 1.0, true).unwrap().loss.is_finite());
}
