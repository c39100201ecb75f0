use labelforge::metrics::{aggregate_global, compute_metrics, f1_from_iou, ConfusionCounts};
use proptest::prelude::*;

fn counts() -> impl Strategy<Value = ConfusionCounts> {
    (
        0u64..1_000_000,
        0u64..1_000_000,
        0u64..1_000_000,
        0u64..1_000_000,
    )
        .prop_map(|(tp, tn, fp, fn_)| ConfusionCounts::new(tp, tn, fp, fn_))
}

proptest! {
    #[test]
    fn f1_iou_identity(c in counts()) {
        prop_assume!(c.tp > 0);
        let r = compute_metrics(c);
        prop_assert!((r.f1 - f1_from_iou(r.iou)).abs() < 1e-12);
        let pr = 2.0 * r.precision * r.recall / (r.precision + r.recall);
        prop_assert!((r.f1 - pr).abs() < 1e-15);
    }

    #[test]
    fn metrics_in_unit_interval(c in counts()) {
        let r = compute_metrics(c);
        for v in [r.accuracy, r.precision, r.recall, r.f1, r.iou] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn global_aggregation_is_order_free(mut cs in prop::collection::vec(counts(), 1..20), split in any::<prop::sample::Index>()) {
        let whole = aggregate_global(&cs).unwrap();
        cs.reverse();
        prop_assert_eq!(aggregate_global(&cs).unwrap(), whole);
        // concatenating partial sums gives the same result
        let k = split.index(cs.len());
        let left: ConfusionCounts = cs[..k].iter().copied().sum();
        let right: ConfusionCounts = cs[k..].iter().copied().sum();
        prop_assert_eq!(aggregate_global(&[left, right]).unwrap(), whole);
    }
}
