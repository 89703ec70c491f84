use ndarray::Array2;
use proptest::prelude::*;
use tmlab_core::evaluation::{energy_distance, rank_aggregate, sliced_wasserstein, MetricSpec, MetricTable};
use tmlab_core::Seed;

/// For equal-covariance Gaussians the projected `W_1` along `u` is the
/// projected mean shift `|u . (1, 0)|`; its average over directions is
/// estimated here by brute force over 10^6 random directions.
#[test]
fn sliced_w1_of_gaussian_shift() {
    let mut rng = Seed(1).stream();
    let dirs = 1_000_000;
    let oracle = (0..dirs)
        .map(|_| {
            let (a, b) = (rng.normal(), rng.normal());
            a.abs() / (a * a + b * b).sqrt()
        })
        .sum::<f64>()
        / dirs as f64;
    let n = 10_000;
    let a = Array2::from_shape_fn((n, 2), |_| rng.normal());
    let b = Array2::from_shape_fn((n, 2), |(_, c)| rng.normal() + if c == 0 { 1.0 } else { 0.0 });
    let sw = sliced_wasserstein(&a.view(), &b.view(), 512, &mut rng).unwrap();
    assert!((sw - oracle).abs() < 0.03 * oracle, "{sw} vs {oracle}");
}

fn points(max: usize) -> impl Strategy<Value = Array2<f64>> {
    (1..max).prop_flat_map(|n| {
        prop::collection::vec(-5.0f64..5.0, n * 2).prop_map(move |v| Array2::from_shape_vec((n, 2), v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distances_symmetric_nonnegative_zero_on_self(a in points(30), b in points(30), seed in 0u64..1000) {
        let sw_ab = sliced_wasserstein(&a.view(), &b.view(), 8, &mut Seed(seed).stream()).unwrap();
        let sw_ba = sliced_wasserstein(&b.view(), &a.view(), 8, &mut Seed(seed).stream()).unwrap();
        prop_assert!(sw_ab >= 0.0);
        prop_assert!((sw_ab - sw_ba).abs() <= 1e-12 * (1.0 + sw_ab));
        prop_assert_eq!(sliced_wasserstein(&a.view(), &a.view(), 8, &mut Seed(seed).stream()).unwrap(), 0.0);

        let e_ab = energy_distance(&a.view(), &b.view()).unwrap();
        let e_ba = energy_distance(&b.view(), &a.view()).unwrap();
        prop_assert!(e_ab >= 0.0);
        prop_assert!((e_ab - e_ba).abs() <= 1e-10 * (1.0 + e_ab));
        prop_assert_eq!(energy_distance(&a.view(), &a.view()).unwrap(), 0.0);
    }

    #[test]
    fn sw_zero_on_reordered_multiset(a in points(30), seed in 0u64..1000) {
        let mut rows: Vec<Vec<f64>> = a.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.reverse();
        let b = Array2::from_shape_vec(a.dim(), rows.concat()).unwrap();
        prop_assert_eq!(sliced_wasserstein(&a.view(), &b.view(), 8, &mut Seed(seed).stream()).unwrap(), 0.0);
    }

    #[test]
    fn ranks_invariant_to_monotone_transforms(
        scores in prop::collection::vec(-10.0f64..10.0, 20),
        col in 0usize..4,
        kind in 0usize..3,
    ) {
        let metrics = vec![
            MetricSpec::new("a", true),
            MetricSpec::new("b", false),
            MetricSpec::new("c", true),
            MetricSpec::new("d", false),
        ];
        let models: Vec<String> = (0..5).map(|i| format!("m{i}")).collect();
        let table = MetricTable::new(models.clone(), metrics.clone(), Array2::from_shape_vec((5, 4), scores).unwrap()).unwrap();
        let mut moved = table.scores().clone();
        moved.column_mut(col).mapv_inplace(|v| match kind {
            0 => 3.0 * v + 7.0,
            1 => v.exp(),
            _ => v * v * v,
        });
        let moved = MetricTable::new(models, metrics, moved).unwrap();
        prop_assert_eq!(rank_aggregate(&table), rank_aggregate(&moved));
        for s in rank_aggregate(&table) {
            prop_assert!(s > 0.0 && s <= 1.0);
        }
    }

    #[test]
    fn ranks_invariant_to_column_order(scores in prop::collection::vec(-10.0f64..10.0, 12)) {
        let models: Vec<String> = (0..4).map(|i| format!("m{i}")).collect();
        let m = Array2::from_shape_vec((4, 3), scores).unwrap();
        let specs = vec![MetricSpec::new("x", true), MetricSpec::new("y", false), MetricSpec::new("z", true)];
        let a = MetricTable::new(models.clone(), specs.clone(), m.clone()).unwrap();
        let perm = [2usize, 0, 1];
        let pm = m.select(ndarray::Axis(1), &perm);
        let ps = perm.iter().map(|&i| specs[i].clone()).collect();
        let b = MetricTable::new(models, ps, pm).unwrap();
        let (ra, rb) = (rank_aggregate(&a), rank_aggregate(&b));
        for (x, y) in ra.iter().zip(&rb) {
            prop_assert!((x - y).abs() < 1e-15);
        }
    }
}
