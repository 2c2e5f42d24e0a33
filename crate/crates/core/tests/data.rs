use std::collections::BTreeSet;

use jova_core::data::synthetic::{generate, SyntheticConfig};
use jova_core::data::{
    filter_by_threshold, load_dataset, make_folds, write_dataset, AffinityTransform, DataError, FeatureCache,
    FoldSplit, InteractionRecord, Role, SplitScheme,
};
use jova_core::features::{FeaturizerConfig, ViewKind};
use proptest::prelude::*;

fn rec(c: usize, t: usize) -> InteractionRecord {
    InteractionRecord {
        compound_id: format!("c{c}"),
        smiles: "CCO".into(),
        target_id: format!("t{t}"),
        sequence: "ACDEFGHIK".into(),
        affinity: (c + t) as f64,
    }
}

fn dataset() -> impl Strategy<Value = Vec<InteractionRecord>> {
    proptest::collection::btree_set((0usize..12, 0usize..8), 1..60)
        .prop_map(|pairs| pairs.into_iter().map(|(c, t)| rec(c, t)).collect())
}

#[test]
fn dense_grid_has_every_pair() {
    let recs: Vec<_> = (0..72).flat_map(|c| (0..44).map(move |t| rec(c, t))).collect();
    assert_eq!(recs.len(), 72 * 44);
    assert_eq!(filter_by_threshold(&recs, 6).unwrap().len(), recs.len());
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pairs.csv");
    let recs = generate(&SyntheticConfig {
        pairs: 40,
        ..Default::default()
    });
    write_dataset(std::fs::File::create(&path).unwrap(), &recs).unwrap();
    assert_eq!(load_dataset(&path, AffinityTransform::Identity).unwrap(), recs);
}

#[test]
fn seeds_change_the_folds() {
    let recs = generate(&SyntheticConfig {
        compounds: 50,
        targets: 20,
        pairs: 1000,
        noise: 0.0,
        seed: 3,
    });
    for scheme in SplitScheme::ALL {
        let a = make_folds(&recs, scheme, 1).unwrap();
        let b = make_folds(&recs, scheme, 2).unwrap();
        assert_eq!(a, make_folds(&recs, scheme, 1).unwrap());
        let moved: usize = a
            .folds
            .iter()
            .zip(&b.folds)
            .map(|(x, y)| {
                let x: BTreeSet<_> = x.test.iter().collect();
                let y: BTreeSet<_> = y.test.iter().collect();
                x.symmetric_difference(&y).count()
            })
            .sum();
        assert!(moved > 0, "{scheme}");
    }
}

#[test]
fn cold_split_with_one_compound_names_the_constraint() {
    let recs: Vec<_> = (0..10).map(|t| rec(0, t)).collect();
    let err = make_folds(&recs, SplitScheme::ColdDrug, 1).unwrap_err();
    assert!(matches!(err, DataError::TooFewEntities { found: 1, needed: 5, .. }));
    assert!(err.to_string().contains("compound"), "{err}");
}

#[test]
fn manifest_lists_every_record_per_fold() {
    let recs = generate(&SyntheticConfig::default());
    let split = make_folds(&recs, SplitScheme::ColdTarget, 4).unwrap();
    let text = split.to_manifest();
    assert_eq!(text.lines().count(), 1 + 5 * recs.len());
    let back = FoldSplit::from_manifest(&text).unwrap();
    assert_eq!(back, split);
    let roles: Vec<Role> = (0..recs.len()).map(|i| back.role(0, i)).collect();
    for role in [Role::Train, Role::Validation, Role::Test] {
        assert!(roles.contains(&role));
    }
}

#[test]
fn feature_cache_shares_entity_views() {
    let recs = generate(&SyntheticConfig {
        compounds: 6,
        targets: 3,
        pairs: 18,
        noise: 0.0,
        seed: 2,
    });
    let views = ViewKind::ALL.to_vec();
    let (cache, bad) = FeatureCache::build(&recs, FeaturizerConfig::default(), &views);
    assert!(bad.is_empty());
    assert_eq!(cache.entries.len(), recs.len());
    let cfg = FeaturizerConfig::default();
    for (r, e) in recs.iter().zip(&cache.entries) {
        assert_eq!(e.features, cfg.featurize(&r.smiles, &r.sequence, &views).unwrap());
    }
    let back = FeatureCache::from_bytes(&cache.to_bytes()).unwrap();
    assert_eq!(back, cache);
}

proptest! {
    #[test]
    fn filtering_is_idempotent(recs in dataset(), threshold in 0usize..4) {
        match filter_by_threshold(&recs, threshold) {
            Ok(once) => prop_assert_eq!(filter_by_threshold(&once, threshold).unwrap(), once),
            Err(e) => {
                let empty = matches!(e, DataError::EmptyAfterFilter { .. });
                prop_assert!(empty);
            }
        }
    }

    #[test]
    fn test_folds_partition_the_records(recs in dataset(), seed in 0u64..1000) {
        for scheme in SplitScheme::ALL {
            let Ok(split) = make_folds(&recs, scheme, seed) else { continue };
            let mut count = vec![0; recs.len()];
            for f in &split.folds {
                for &i in &f.test {
                    count[i] += 1;
                }
                prop_assert_eq!(f.train.len() + f.validation.len() + f.test.len(), recs.len());
            }
            prop_assert!(count.iter().all(|&c| c == 1));
        }
    }
}
