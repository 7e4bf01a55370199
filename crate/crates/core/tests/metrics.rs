use evoforge_core::metrics::{average_precision, confusion, precision_npv, ConfusionMatrix};
use proptest::prelude::*;

fn pairs(max: usize) -> impl Strategy<Value = (Vec<bool>, Vec<bool>)> {
    (1..max).prop_flat_map(|n| (proptest::collection::vec(any::<bool>(), n), proptest::collection::vec(any::<bool>(), n)))
}

/// AP by explicit ranking: sort indices by score, ties by position.
fn ap_reference(scores: &[f64], truth: &[bool]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut precisions = Vec::new();
    for (k, &i) in idx.iter().enumerate() {
        if truth[i] {
            let hits = idx[..=k].iter().filter(|&&j| truth[j]).count();
            precisions.push(hits as f64 / (k + 1) as f64);
        }
    }
    precisions.iter().sum::<f64>() / precisions.len() as f64
}

fn scored(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1..max).prop_flat_map(|n| {
        (
            proptest::collection::vec(prop_oneof![-5i32..5, Just(0)].prop_map(|v| v as f64 / 4.0), n),
            proptest::collection::vec(any::<bool>(), n),
        )
    })
    .prop_filter("needs a positive", |(_, t)| t.iter().any(|&x| x))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn confusion_matches_recount((p, t) in pairs(40)) {
        let m = confusion(&p, &t).unwrap();
        let count = |a: bool, b: bool| p.iter().zip(&t).filter(|(x, y)| **x == a && **y == b).count();
        prop_assert_eq!(m, ConfusionMatrix { tp: count(true, true), fp: count(true, false), tn: count(false, false), fn_: count(false, true) });
        prop_assert_eq!(m.total(), p.len());
        let (prec, npv) = precision_npv(&m);
        for v in [prec, npv].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn ap_matches_reference_and_is_bounded((s, t) in scored(30)) {
        let ap = average_precision(&s, &t).unwrap();
        prop_assert!((ap - ap_reference(&s, &t)).abs() < 1e-12);
        prop_assert!(ap > 0.0 && ap <= 1.0);
    }

    #[test]
    fn ap_is_invariant_under_monotone_maps((s, t) in scored(30), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let ap = average_precision(&s, &t).unwrap();
        for f in [
            Box::new(move |x: f64| a * x + b) as Box<dyn Fn(f64) -> f64>,
            Box::new(|x: f64| x.exp()),
            Box::new(|x: f64| x * x * x),
            Box::new(|x: f64| 1.0 / (1.0 + (-x).exp())),
        ] {
            let mapped: Vec<f64> = s.iter().map(|&x| f(x)).collect();
            prop_assert_eq!(average_precision(&mapped, &t).unwrap(), ap);
        }
    }
}
