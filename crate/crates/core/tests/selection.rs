use nfs_core::data::{generate_sbm, SbmConfig};
use nfs_core::importance::{keep_count, select_top_ratio, Metric, ScoreConfig};
use nfs_core::models::{Arch, ModelSpec};
use nfs_core::optim::AdamConfig;
use nfs_core::selection::{run_adaptive, FeatureMask, SelectionConfig};
use proptest::prelude::*;

fn small_graph() -> nfs_core::Graph {
    generate_sbm(&SbmConfig {
        n_nodes: 40,
        n_classes: 2,
        n_informative: 2,
        n_noise: 6,
        p_in: 0.2,
        p_out: 0.02,
        ..Default::default()
    })
    .unwrap()
}

fn adaptive(sel: SelectionConfig, metric: Metric) -> nfs_core::selection::AdaptiveOutcome {
    run_adaptive(
        ModelSpec::new(Arch::Gcn, 4),
        &small_graph(),
        &sel,
        AdamConfig::default(),
        &ScoreConfig::default(),
        metric,
        3,
    )
    .unwrap()
}

#[test]
fn interval_past_max_epochs_never_prunes() {
    let out = adaptive(
        SelectionConfig {
            burn_in: 1,
            interval: 11,
            max_epochs: 10,
            ..Default::default()
        },
        Metric::Random,
    );
    assert!(out.trace.checkpoints.is_empty());
    assert_eq!(out.mask.active_count(), 8);
    assert_eq!(out.trace.epochs.len(), 10);
}

#[test]
fn checkpoints_fire_every_gate_epochs_and_halve() {
    let out = adaptive(
        SelectionConfig {
            burn_in: 3,
            interval: 2,
            max_epochs: 20,
            ..Default::default()
        },
        Metric::Random,
    );
    let epochs: Vec<usize> = out.trace.checkpoints.iter().map(|c| c.epoch).collect();
    assert_eq!(epochs, [3, 6, 9]);
    let counts: Vec<usize> = out.trace.checkpoints.iter().map(|c| c.mask_after.active_count()).collect();
    assert_eq!(counts, [4, 2, 1]);
    assert_eq!(out.features.cols(), 1);
    assert_eq!(out.model.params.input_dim(), 1);
}

#[test]
fn disabled_pruning_scores_without_dropping() {
    let out = adaptive(
        SelectionConfig {
            burn_in: 2,
            interval: 2,
            max_epochs: 6,
            prune: false,
            ..Default::default()
        },
        Metric::Mi,
    );
    assert_eq!(out.trace.checkpoints.len(), 3);
    assert!(out.trace.checkpoints.iter().all(|c| c.pruned.is_empty()));
    assert_eq!(out.mask.active_count(), 8);
}

#[test]
fn equal_scores_keep_lowest_indices() {
    let all = FeatureMask::all(7);
    let kept = select_top_ratio(&[0.3; 7], &all, 0.5).unwrap();
    assert_eq!(kept.active_indices(), [0, 1, 2, 3]);
}

proptest! {
    #[test]
    fn top_ratio_keeps_ceil_count_of_best(
        scores in prop::collection::vec(-5.0f64..5.0, 1..40),
        r in 0.01f64..=1.0,
    ) {
        let all = FeatureMask::all(scores.len());
        let kept = select_top_ratio(&scores, &all, r).unwrap();
        let want = ((r * scores.len() as f64) - 1e-9).ceil().max(1.0) as usize;
        prop_assert_eq!(kept.active_count(), keep_count(r, scores.len()));
        prop_assert!(kept.active_count() == want || kept.active_count() == want + 1);
        let min_kept = kept.active_indices().iter().map(|&m| scores[m]).fold(f64::INFINITY, f64::min);
        for m in 0..scores.len() {
            if !kept.is_active(m) {
                prop_assert!(scores[m] <= min_kept);
            }
        }
    }

    #[test]
    fn top_ratio_on_subset_stays_inside_subset(
        bits in prop::collection::vec(any::<bool>(), 2..30),
        seed in 0u64..1000,
    ) {
        prop_assume!(bits.iter().any(|&b| b));
        let active = FeatureMask::from_bits(bits.clone()).unwrap();
        let scores: Vec<f64> = (0..bits.len()).map(|i| ((i as u64 * 2654435761 + seed) % 97) as f64).collect();
        let kept = select_top_ratio(&scores, &active, 0.5).unwrap();
        prop_assert!(kept.active_indices().iter().all(|&m| bits[m]));
        prop_assert_eq!(kept.active_count(), keep_count(0.5, active.active_count()));
    }
}
