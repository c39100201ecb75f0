use std::collections::BTreeMap;
use std::num::NonZeroUsize;

use labelforge::select::{rank_by_area, select_drivable, Proposal, SelectionReason};
use labelforge::MaskRaster;
use proptest::prelude::*;

const DRIVABLE: &str = "drivable area";

fn proposal_strategy() -> impl Strategy<Value = Vec<Proposal>> {
    prop::collection::vec(
        (0u32..=36, prop::option::of(0u8..=4), prop::bool::ANY),
        1..12,
    )
    .prop_map(|specs| {
        specs
            .into_iter()
            .enumerate()
            .map(|(i, (area, score, labeled))| {
                let mask = MaskRaster::from_fn(6, 6, |x, y| y * 6 + x < area)
                    .unwrap()
                    .to_rle();
                let mut p = Proposal::unclassified(format!("id{i:02}"), mask, "img");
                // coarse scores so ties are common
                let score = score.map(|s| f64::from(s) / 4.0);
                p.class_label = if labeled {
                    DRIVABLE.to_string()
                } else {
                    "other".to_string()
                };
                p.class_scores = score.map(|s| BTreeMap::from([(DRIVABLE.to_string(), s)]));
                p
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn ranking_is_sorted_subset(props in proposal_strategy(), k in 1usize..12) {
        let ranked = rank_by_area(&props, NonZeroUsize::new(k).unwrap());
        let nonempty = props.iter().filter(|p| p.area() > 0).count();
        prop_assert_eq!(ranked.len(), k.min(nonempty));
        prop_assert!(ranked.windows(2).all(|w| w[0].area() >= w[1].area()));
        prop_assert!(ranked.iter().all(|r| props.contains(r)));
        // nothing left out is larger than the smallest kept proposal
        if let Some(last) = ranked.last() {
            let kept: Vec<&str> = ranked.iter().map(|p| p.id.as_str()).collect();
            for p in props.iter().filter(|p| p.area() > 0 && !kept.contains(&p.id.as_str())) {
                prop_assert!(p.area() <= last.area());
            }
        }
    }

    #[test]
    fn selection_ignores_input_order(props in proposal_strategy(), rot in 0usize..12) {
        let a = select_drivable(&props, DRIVABLE).unwrap();
        let mut shuffled = props.clone();
        let r = rot % shuffled.len();
        shuffled.rotate_left(r);
        shuffled.reverse();
        prop_assert_eq!(select_drivable(&shuffled, DRIVABLE).unwrap(), a.clone());
        prop_assert!(props.iter().any(|p| p.id == a.chosen));
        let any_labeled = props.iter().any(|p| p.class_label == DRIVABLE);
        prop_assert_eq!(a.reason == SelectionReason::LabeledDrivable, any_labeled);
    }

    #[test]
    fn exact_top_scoring_gt_is_selected(props in proposal_strategy()) {
        // A proposal labeled drivable with a strictly higher score than
        // anything else is always the one selected.
        let mut props = props;
        let gt = MaskRaster::from_fn(6, 6, |x, _| x < 3).unwrap().to_rle();
        let mut oracle = Proposal::unclassified("zz-gt", gt, "img");
        oracle.class_label = DRIVABLE.to_string();
        oracle.class_scores = Some(BTreeMap::from([(DRIVABLE.to_string(), 1.5)]));
        props.push(oracle);
        prop_assert_eq!(select_drivable(&props, DRIVABLE).unwrap().chosen, "zz-gt");
    }
}
