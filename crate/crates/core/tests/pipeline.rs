use bact_core::acquisition::ClipStrategy;
use bact_core::active_loop::{run_experiment, ActiveLearner, LoopConfig, Quantity};
use bact_core::annotation::{export_results, load_history, OracleAnnotator};
use bact_core::dataset::{
    generate_synthetic, load_dataset, save_dataset, FeatureFormat, SyntheticConfig,
};
use proptest::prelude::*;

fn small_synthetic(seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        num_videos: 10,
        num_test_videos: 3,
        mean_frames: 150,
        seed,
        ..Default::default()
    }
}

fn small_loop(seed: u64, strategy: ClipStrategy) -> LoopConfig {
    let mut cfg = LoopConfig {
        rounds: 3,
        budget: Quantity::Count(60),
        query_videos: Quantity::Count(2),
        init_videos: Quantity::Count(2),
        init_clips: 4,
        clip_strategy: strategy,
        seed,
        ..Default::default()
    };
    cfg.predictor.epochs = 8;
    cfg
}

#[test]
fn disk_round_trip_gives_the_same_experiment() {
    let ds = generate_synthetic(&small_synthetic(4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path(), FeatureFormat::Binary).unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded, ds);

    let cfg = small_loop(4, ClipStrategy::Bact);
    let a = run_experiment(&ds, &cfg, &mut OracleAnnotator::default()).unwrap();
    let b = run_experiment(&loaded, &cfg, &mut OracleAnnotator::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn exported_history_parses_back() {
    let ds = generate_synthetic(&small_synthetic(1)).unwrap();
    let history = run_experiment(
        &ds,
        &small_loop(1, ClipStrategy::SplitEntropy),
        &mut OracleAnnotator::default(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_results(&history, dir.path()).unwrap();
    assert_eq!(
        load_history(&dir.path().join("history.json")).unwrap(),
        history
    );
    let csv = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert_eq!(csv.lines().count(), history.len() + 1);
    for h in &history {
        assert!(dir
            .path()
            .join(format!("selections/round_{:03}.json", h.round))
            .is_file());
    }
}

#[test]
fn learner_labels_match_the_ground_truth() {
    let ds = generate_synthetic(&small_synthetic(2)).unwrap();
    let mut oracle = OracleAnnotator::default();
    let mut learner =
        ActiveLearner::new(&ds, small_loop(2, ClipStrategy::Bact), &mut oracle).unwrap();
    while learner.stopped().is_none() {
        learner.run_round(&mut oracle).unwrap();
    }
    let pools = learner.pools();
    assert!(pools.labeled_videos.is_disjoint(&pools.unlabeled_videos));
    for e in pools.labels.iter() {
        let gt = ds.video(&e.video).unwrap().labels().unwrap();
        assert_eq!(e.label, gt[e.frame - 1]);
        assert!(e.context.contains(e.frame));
        assert!(pools.labeled_videos.contains(&e.video));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn budget_and_accounting_hold_for_any_strategy(
        seed in 0u64..1000,
        strategy in proptest::sample::select(ClipStrategy::ALL.to_vec()),
        budget in 8usize..80,
        k in 1usize..6,
    ) {
        let ds = generate_synthetic(&small_synthetic(seed)).unwrap();
        let mut cfg = small_loop(seed, strategy);
        cfg.budget = Quantity::Count(budget);
        cfg.clips_per_video = k;
        cfg.predictor.epochs = 2;
        let history = run_experiment(&ds, &cfg, &mut OracleAnnotator::new(0.0, seed).unwrap()).unwrap();
        let mut prev = None;
        for h in &history {
            prop_assert!(h.labeled_after <= budget);
            prop_assert_eq!(h.labeled_after - h.labeled_before, h.queries.len());
            prop_assert!(h.queries.len() <= 2 * k);
            if let Some(p) = prev {
                prop_assert_eq!(h.labeled_before, p);
            }
            prev = Some(h.labeled_after);
        }
        prop_assert!(history.last().unwrap().stop.is_some());
    }
}
