use cnc::baselines::{GdroConfig, GdroState};
use cnc::data::{LabeledDataset, Split};
use cnc::losses::{mean_pairwise_distance, supcon_loss, two_sided_loss};
use cnc::metrics::{argmax, RepresentationView};
use cnc::nn::{cross_entropy, l2_normalize_rows, softmax_row, spectral_norm, Matrix};
use cnc::sampler::{check_predicates, IndexPools, SamplerMode};
use proptest::prelude::*;

/// Largest eigenvalue of a symmetric matrix by cyclic Jacobi rotations.
fn jacobi_max_eigenvalue(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).fold(f64::NEG_INFINITY, f64::max)
}

fn gram(w: &Matrix) -> Vec<Vec<f64>> {
    let g = w.t_matmul(w).unwrap();
    (0..g.rows()).map(|r| g.row(r).to_vec()).collect()
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn sized_matrix() -> impl Strategy<Value = Matrix> {
    (1usize..7, 1usize..7).prop_flat_map(|(r, c)| matrix(r, c))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spectral_norm_matches_jacobi_oracle(w in sized_matrix()) {
        let oracle = jacobi_max_eigenvalue(gram(&w)).max(0.0).sqrt();
        let got = spectral_norm(&w, 1e-13, 200_000).unwrap();
        prop_assert!((got - oracle).abs() <= 1e-6 * oracle.max(1.0), "{got} vs {oracle}");
    }

    #[test]
    fn softmax_is_a_distribution(v in prop::collection::vec(-50.0f64..50.0, 1..10)) {
        let p = softmax_row(&v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert_eq!(argmax(&p), argmax(&v));
    }

    #[test]
    fn cross_entropy_is_nonnegative_with_zero_sum_gradient(logits in matrix(4, 3), labels in prop::collection::vec(0usize..3, 4)) {
        let (loss, g) = cross_entropy(&logits, &labels).unwrap();
        prop_assert!(loss >= 0.0);
        for r in 0..4 {
            prop_assert!(g.row(r).iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_rows_have_unit_length(m in matrix(5, 4)) {
        let n = l2_normalize_rows(&m);
        for r in 0..5 {
            let len = n.rows.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            if m.row(r).iter().any(|&x| x != 0.0) {
                prop_assert!((len - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn supcon_is_at_least_log_m(
        a in matrix(1, 3), p in (1usize..5).prop_flat_map(|m| matrix(m, 3)),
        n in (0usize..5).prop_flat_map(|k| matrix(k, 3)), tau in 0.05f64..2.0,
    ) {
        let a = l2_normalize_rows(&a).rows;
        let p = l2_normalize_rows(&p).rows;
        let n = if n.rows() > 0 { l2_normalize_rows(&n).rows } else { n };
        let out = supcon_loss(a.row(0), &p, &n, tau).unwrap();
        prop_assert!(out.loss >= (p.rows() as f64).ln() - 1e-9);
    }

    #[test]
    fn two_sided_is_sum_of_halves(
        m in 1usize..4, n in 1usize..4, seed in 0u64..1000, tau in 0.1f64..1.0,
    ) {
        let mk = |rows: usize, k: u64| {
            let v: Vec<f64> = (0..rows * 3).map(|i| ((i as u64 * 7919 + seed * 31 + k * 17) % 97) as f64 / 48.5 - 1.0).collect();
            l2_normalize_rows(&Matrix::from_vec(rows, 3, v).unwrap()).rows
        };
        let (a, p, n1, n2) = (mk(m, 1), mk(m, 2), mk(n, 3), mk(n, 4));
        let both = two_sided_loss(&a, &p, &n1, &n2, tau, true).unwrap();
        let one = two_sided_loss(&a, &p, &n1, &n2, tau, false).unwrap();
        prop_assert!((both.loss - both.left - both.right).abs() < 1e-12);
        prop_assert!((one.loss - both.left).abs() < 1e-12);
        prop_assert!(one.d_negatives2.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pairwise_distance_is_symmetric_and_nonnegative(a in matrix(3, 2), b in matrix(4, 2)) {
        let ab = mean_pairwise_distance(&a, &b);
        let ba = mean_pairwise_distance(&b, &a);
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn sampler_batches_satisfy_their_predicates(
        pairs in prop::collection::vec((0usize..3, 0usize..3), 10..60), seed in any::<u64>(),
        m in 1usize..4, n in 1usize..4,
    ) {
        let (y, yhat): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let pools = IndexPools::new(&y, &yhat, 3).unwrap();
        let mut r = cnc::rng::stream(seed, "sampler");
        for mode in SamplerMode::ALL {
            if let Ok(b) = pools.sample_batch(m, n, mode, &mut r) {
                prop_assert_eq!(b.anchors.len(), m);
                prop_assert_eq!(b.positives.len(), m);
                prop_assert_eq!(b.negatives.len(), n);
                let c = check_predicates(&b, &y, &yhat);
                if mode == SamplerMode::CncTwoSided || mode == SamplerMode::CncOneSided {
                    prop_assert!(c.all(), "{:?}", c);
                }
            }
        }
    }

    #[test]
    fn gdro_weights_stay_on_simplex(
        losses in prop::collection::vec(prop::collection::vec(prop::option::of(0.0f64..20.0), 4), 1..200),
        eta in 0.0f64..2.0, c in 0.0f64..3.0,
    ) {
        let mut s = GdroState::new(vec![1, 5, 50, 500], &GdroConfig { eta_q: eta, c_adj: c, group_balanced: false }).unwrap();
        for l in &losses {
            s.update(l).unwrap();
            let (err, positive) = s.simplex_error();
            prop_assert!(positive && err <= 1e-12);
        }
    }

    #[test]
    fn dataset_cache_round_trips(
        n in 1usize..30, d in 1usize..5, seed in any::<u64>(),
    ) {
        let v: Vec<f64> = (0..n * d).map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64 * 1e-3 - 0.25).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let attrs: Vec<usize> = (0..n).map(|i| (i / 3) % 2).collect();
        let splits: Vec<Split> = (0..n).map(|i| [Split::Train, Split::Val, Split::Test][i % 3]).collect();
        let ds = LabeledDataset::new("p", Matrix::from_vec(n, d, v).unwrap(), labels, attrs, splits, 3, 2).unwrap();
        let back = LabeledDataset::from_bytes(&ds.to_bytes()).unwrap();
        prop_assert_eq!(back.to_bytes(), ds.to_bytes());
        prop_assert_eq!(back.labels, ds.labels);
    }
}

#[test]
fn alignment_view_agrees_with_free_distance() {
    let reps = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 4.0]]).unwrap();
    let ds = LabeledDataset::new(
        "a",
        reps.clone(),
        vec![0, 0, 0, 0],
        vec![0, 0, 1, 1],
        vec![Split::Test; 4],
        1,
        2,
    )
    .unwrap();
    let logits = Matrix::zeros(4, 1);
    let view = RepresentationView::from_parts(&ds, Split::Test, (0..4).collect(), reps.clone(), logits);
    let g0 = cnc::data::Group { y: 0, a: 0 };
    let g1 = cnc::data::Group { y: 0, a: 1 };
    let direct = mean_pairwise_distance(&reps.select_rows(&[0, 1]), &reps.select_rows(&[2, 3]));
    assert!((view.alignment(g0, g1).unwrap() - direct).abs() < 1e-12);
    assert!((view.class_alignment(0).unwrap() - direct).abs() < 1e-12);
}
