mod common;

use common::oracle;
use fewlabel::metrics::{ami, ari, nmi, ContingencyStats};
use fewlabel::HardClustering;
use proptest::prelude::*;

fn stats(test: &[usize], truth: &[usize]) -> ContingencyStats {
    let k_test = test.iter().max().unwrap() + 1;
    let k_ref = truth.iter().max().unwrap() + 1;
    let c = HardClustering::with_k(test.to_vec(), k_test).unwrap();
    ContingencyStats::build(&c, truth.iter().copied().enumerate(), k_ref).unwrap()
}

fn labelings(max_n: usize, max_k: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1..=max_n).prop_flat_map(move |n| {
        (
            prop::collection::vec(0..max_k, n),
            prop::collection::vec(0..max_k, n),
        )
    })
}

fn relabel(labels: &[usize], perm: &[usize]) -> Vec<usize> {
    labels.iter().map(|&l| perm[l]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1500))]

    #[test]
    fn small_tables_match_brute_force((a, b) in labelings(8, 3)) {
        let s = stats(&a, &b);
        prop_assert!((nmi(&s) - oracle::nmi(&a, &b)).abs() < 1e-10);
        prop_assert!((ami(&s) - oracle::ami(&a, &b)).abs() < 1e-10);
        if a.len() >= 2 {
            prop_assert!((ari(&s).unwrap() - oracle::ari(&a, &b)).abs() < 1e-10);
        } else {
            prop_assert!(ari(&s).is_err());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn larger_tables_match_brute_force((a, b) in labelings(40, 6)) {
        let s = stats(&a, &b);
        prop_assert!((nmi(&s) - oracle::nmi(&a, &b)).abs() < 1e-10);
        prop_assert!((ami(&s) - oracle::ami(&a, &b)).abs() < 1e-9);
        if a.len() >= 2 {
            prop_assert!((ari(&s).unwrap() - oracle::ari(&a, &b)).abs() < 1e-10);
        }
    }

    #[test]
    fn metrics_are_symmetric((a, b) in labelings(30, 5)) {
        let (ab, ba) = (stats(&a, &b), stats(&b, &a));
        prop_assert!((nmi(&ab) - nmi(&ba)).abs() < 1e-12);
        prop_assert!((ami(&ab) - ami(&ba)).abs() < 1e-10);
        if a.len() >= 2 {
            prop_assert!((ari(&ab).unwrap() - ari(&ba).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn relabeling_changes_nothing(
        (a, b) in labelings(30, 4),
        pa in Just((0..4).collect::<Vec<usize>>()).prop_shuffle(),
        pb in Just((0..4).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let s = stats(&a, &b);
        let t = stats(&relabel(&a, &pa), &relabel(&b, &pb));
        prop_assert!((nmi(&s) - nmi(&t)).abs() < 1e-12);
        prop_assert!((ami(&s) - ami(&t)).abs() < 1e-10);
        if a.len() >= 2 {
            prop_assert!((ari(&s).unwrap() - ari(&t).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_partitions_score_exactly_one(
        (a, _) in labelings(30, 5),
        p in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let s = stats(&a, &relabel(&a, &p));
        prop_assert_eq!(nmi(&s), 1.0);
        prop_assert_eq!(ami(&s), 1.0);
        if a.len() >= 2 {
            prop_assert_eq!(ari(&s).unwrap(), 1.0);
        }
    }

    #[test]
    fn nmi_lies_in_unit_interval((a, b) in labelings(30, 5)) {
        let v = nmi(&stats(&a, &b));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!(ami(&stats(&a, &b)) <= 1.0);
        if a.len() >= 2 {
            prop_assert!(ari(&stats(&a, &b)).unwrap() <= 1.0);
        }
    }
}
