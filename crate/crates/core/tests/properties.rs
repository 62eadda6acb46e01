use imb_dpgm::autodiff::Matrix;
use imb_dpgm::data::{
    apply_normalize, fit_normalize, load_csv, stratified_split, write_csv, Dataset,
};
use imb_dpgm::metrics::{roc_auc, roc_points};
use imb_dpgm::model::kl_diag_gaussian;
use imb_dpgm::resampling::{class_weights, interpolate, smote_detailed};
use proptest::prelude::*;

/// Mann-Whitney statistic over all positive/negative pairs, ties count half.
fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / pairs
}

/// Scores on a coarse grid so ties are common; both classes present.
fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..60)
        .prop_flat_map(|n| {
            (
                prop::collection::vec((0u32..20).prop_map(|k| k as f64 / 19.0), n),
                prop::collection::vec(0u8..2, n),
            )
        })
        .prop_map(|(s, mut y)| {
            y[0] = 0;
            y[1] = 1;
            (s, y)
        })
}

fn dataset(rows: usize, d: usize) -> impl Strategy<Value = Dataset> {
    (
        prop::collection::vec(-1e3f64..1e3, rows * d),
        prop::collection::vec(0u8..2, rows),
    )
        .prop_map(move |(x, mut y)| {
            for i in 0..3.min(rows) {
                y[i] = 0;
                y[rows - 1 - i] = 1;
            }
            let names = (0..d).map(|j| format!("f{j}")).collect();
            Dataset::new(Matrix::from_vec(rows, d, x).unwrap(), y, names).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auc_matches_pairwise_count((s, y) in scored_labels()) {
        let auc = roc_auc(&s, &y).unwrap();
        prop_assert!((auc - pairwise_auc(&s, &y)).abs() < 1e-12);
        prop_assert!((roc_points(&s, &y).unwrap().trapezoid_area() - auc).abs() < 1e-12);
    }

    #[test]
    fn auc_invariant_under_increasing_maps((s, y) in scored_labels()) {
        let auc = roc_auc(&s, &y).unwrap();
        let cubed: Vec<f64> = s.iter().map(|v| 7.0 * v.powi(3) - 2.0).collect();
        let exp: Vec<f64> = s.iter().map(|v| v.exp()).collect();
        prop_assert_eq!(roc_auc(&cubed, &y).unwrap(), auc);
        prop_assert_eq!(roc_auc(&exp, &y).unwrap(), auc);
    }

    #[test]
    fn auc_complement_symmetry((s, y) in scored_labels()) {
        let flipped: Vec<f64> = s.iter().map(|v| 1.0 - v).collect();
        let sum = roc_auc(&s, &y).unwrap() + roc_auc(&flipped, &y).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn split_partitions_rows(ds in (10usize..200).prop_flat_map(|n| dataset(n, 2)), seed in any::<u64>()) {
        let fr = [0.7, 0.15, 0.15];
        let sp = stratified_split(&ds, fr, seed).unwrap();
        let mut all: Vec<usize> = sp.train.iter().chain(&sp.val).chain(&sp.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..ds.n()).collect::<Vec<_>>());
        for part in [&sp.train, &sp.val, &sp.test] {
            prop_assert!(part.windows(2).all(|w| w[0] < w[1]));
        }
        let n = ds.n() as f64;
        prop_assert!((sp.train.len() as f64 - 0.7 * n).abs() <= 1.0);
        prop_assert!((sp.val.len() as f64 - 0.15 * n).abs() <= 1.0);
        // each class keeps its share in train up to rounding
        for label in [0u8, 1] {
            let total = ds.indices_of(label).len() as f64;
            let in_train = sp.train.iter().filter(|&&i| ds.labels[i] == label).count() as f64;
            prop_assert!((in_train - 0.7 * total).abs() <= 1.5);
        }
        prop_assert_eq!(sp.clone(), stratified_split(&ds, fr, seed).unwrap());
    }

    #[test]
    fn class_weights_ignore_row_order(mut y in prop::collection::vec(0u8..2, 2..100), rot in 0usize..100) {
        y[0] = 0;
        y[1] = 1;
        let w = class_weights(&y).unwrap();
        let k = rot % y.len();
        y.rotate_left(k);
        y.reverse();
        prop_assert_eq!(w, class_weights(&y).unwrap());
        prop_assert!(w.w_minority >= 1.0);
        prop_assert_eq!(w.w_majority, 1.0);
    }

    #[test]
    fn csv_round_trip(ds in (1usize..40).prop_flat_map(|n| dataset(n.max(6), 3))) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_csv(&ds, &path).unwrap();
        let back = load_csv(&path, "Class").unwrap();
        prop_assert_eq!(back.labels, ds.labels);
        prop_assert_eq!(back.features.as_slice(), ds.features.as_slice());
        prop_assert_eq!(back.feature_names, ds.feature_names);
    }

    #[test]
    fn kl_nonnegative(mu in prop::collection::vec(-20f64..20.0, 1..10), lv_seed in prop::collection::vec(-10f64..10.0, 10)) {
        let lv = &lv_seed[..mu.len()];
        let kl = kl_diag_gaussian(&mu, lv);
        prop_assert!(kl >= 0.0);
        let zeros = vec![0.0; mu.len()];
        prop_assert_eq!(kl_diag_gaussian(&zeros, &zeros), 0.0);
    }

    #[test]
    fn smote_rows_lie_on_minority_segments(ds in (20usize..80).prop_flat_map(|n| dataset(n, 2)), seed in any::<u64>()) {
        let out = smote_detailed(&ds, 3, None, seed).unwrap();
        let minority = class_weights(&ds.labels).unwrap().minority_label;
        let [c0, c1] = out.dataset.class_counts();
        prop_assert_eq!(c0, c1);
        for (k, o) in out.origins.iter().enumerate() {
            prop_assert!((0.0..=1.0).contains(&o.lambda));
            prop_assert_eq!(ds.labels[o.parent], minority);
            prop_assert_eq!(ds.labels[o.neighbor], minority);
            prop_assert!(o.parent != o.neighbor);
            let row = out.dataset.features.row(ds.n() + k);
            let expect = interpolate(ds.features.row(o.parent), ds.features.row(o.neighbor), o.lambda);
            prop_assert_eq!(row, &expect[..]);
        }
    }

    #[test]
    fn normalized_train_has_unit_moments(ds in (10usize..100).prop_flat_map(|n| dataset(n, 3))) {
        let st = fit_normalize(&ds, 1e9).unwrap();
        let out = apply_normalize(&ds, &st).unwrap();
        for j in 0..ds.d() {
            if st.constant_features.contains(&j) {
                continue;
            }
            let col: Vec<f64> = (0..out.n()).map(|i| out.features.get(i, j)).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / col.len() as f64;
            prop_assert!(m.abs() < 1e-9);
            prop_assert!((v - 1.0).abs() < 1e-9);
        }
    }
}
