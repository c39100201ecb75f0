mod common;

use common::{random_instance, scef_oracle, XorShift};
use labelforge::scef::{generate_finetune_pairs, Provenance};
use proptest::prelude::*;

const DRIVABLE: &str = "drivable area";

#[test]
fn matches_reference_on_random_instances() {
    let mut rng = XorShift(0xdead_beef);
    for _ in 0..500 {
        let inst = random_instance(&mut rng);
        let got =
            generate_finetune_pairs(&inst.to_proposals(), &inst.gt_raster(), DRIVABLE).unwrap();
        assert_eq!(got, scef_oracle(&inst, DRIVABLE), "{inst:?}");
    }
}

#[test]
fn record_invariants() {
    let mut rng = XorShift(17);
    for _ in 0..300 {
        let inst = random_instance(&mut rng);
        let props = inst.to_proposals();
        let gt = inst.gt_raster();
        let rec = generate_finetune_pairs(&props, &gt, DRIVABLE).unwrap();
        assert_eq!(rec.scores.len(), rec.pairs.len());
        let replaced: Vec<_> = rec
            .pairs
            .iter()
            .enumerate()
            .filter(|(_, p)| p.provenance == Provenance::GtReplacement)
            .collect();
        assert_eq!(replaced.len(), 1);
        assert_eq!(replaced[0].0, rec.argmax_index);
        assert_eq!(replaced[0].1.mask, gt.to_rle());
        assert_eq!(replaced[0].1.category, DRIVABLE);
        let max = rec.scores.iter().copied().fold(f64::MIN, f64::max);
        assert_eq!(rec.max_score(), max);
        for (i, (pair, p)) in rec.pairs.iter().zip(&props).enumerate() {
            if i != rec.argmax_index {
                assert_eq!(pair.mask, p.mask);
                assert_eq!(pair.category, p.class_label);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn independent_of_proposal_order(seed in any::<u64>(), rotate in 0usize..10) {
        let mut rng = XorShift(seed);
        let inst = random_instance(&mut rng);
        let props = inst.to_proposals();
        let gt = inst.gt_raster();
        let rec = generate_finetune_pairs(&props, &gt, DRIVABLE).unwrap();
        let chosen = &props[rec.argmax_index].id;

        let mut permuted = props.clone();
        let r = rotate % permuted.len();
        permuted.rotate_left(r);
        permuted.reverse();
        let rec2 = generate_finetune_pairs(&permuted, &gt, DRIVABLE).unwrap();
        prop_assert_eq!(&permuted[rec2.argmax_index].id, chosen);
        // same pairs, permuted alongside the input
        for (i, p) in permuted.iter().enumerate() {
            let j = props.iter().position(|q| q.id == p.id).unwrap();
            prop_assert_eq!(&rec2.pairs[i], &rec.pairs[j]);
        }
    }
}
