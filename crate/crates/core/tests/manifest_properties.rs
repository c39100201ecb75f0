use labelforge::manifest::{split_dataset, ArtifactKind, DatasetManifest, Split, SplitSizes};
use proptest::prelude::*;

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("img{i:04}")).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_cardinality_survives_attach(
        n in 3usize..60,
        seed in any::<u64>(),
        attaches in prop::collection::vec((any::<prop::sample::Index>(), 0usize..4), 0..20),
    ) {
        let sizes = SplitSizes { train: n / 3, val: n / 4, test: n / 5 };
        let mut m = split_dataset(&ids(n), sizes, seed).unwrap();
        let kinds = [ArtifactKind::Image, ArtifactKind::Gt, ArtifactKind::Proposals, ArtifactKind::Pseudolabel];
        for (idx, kind) in attaches {
            let id = m.entries[idx.index(n)].id.clone();
            m.attach_artifact(&id, kinds[kind], format!("x/{id}")).unwrap();
        }
        prop_assert_eq!(m.count(Split::Train), sizes.train);
        prop_assert_eq!(m.count(Split::Val), sizes.val);
        prop_assert_eq!(m.count(Split::Test), sizes.test);
        prop_assert_eq!(m.count(Split::Unassigned), n - sizes.total());
        prop_assert_eq!(m.entries.len(), n);
        let back = DatasetManifest::from_json(std::str::from_utf8(&m.to_bytes()).unwrap()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn same_inputs_same_bytes(n in 3usize..80, seed in any::<u64>()) {
        let sizes = SplitSizes { train: 1, val: 1, test: 1 };
        let a = split_dataset(&ids(n), sizes, seed).unwrap();
        let b = split_dataset(&ids(n), sizes, seed).unwrap();
        prop_assert_eq!(a.to_bytes(), b.to_bytes());
        let pa = a.build_pretrain_pool(&(0..20).map(|i| format!("raw{i}")).collect::<Vec<_>>(), 5, seed).unwrap();
        let pb = b.build_pretrain_pool(&(0..20).map(|i| format!("raw{i}")).collect::<Vec<_>>(), 5, seed).unwrap();
        prop_assert_eq!(pa.to_bytes(), pb.to_bytes());
        prop_assert_eq!(pa.count(Split::PretrainPool), 15);
    }
}
