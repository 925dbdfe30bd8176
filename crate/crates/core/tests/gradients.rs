mod common;

use riser::losses::LossConfig;
use riser::metrics::sample_utilization;
use riser::train::{grpo_gradients, simpo_gradients};

#[test]
fn every_loss_matches_finite_differences() {
    for w in common::gradient_oracle(20, 2024) {
        assert!(w.max_rel_error < 1e-4, "{}: {}", w.name, w.max_rel_error);
    }
}

#[test]
fn all_fail_batch_has_null_grpo_gradient_and_simpo_recovers_it() {
    let mut r = common::rng(5);
    let catalog = common::random_catalog(&mut r, 20, 6, 3);
    let trie = catalog.prefix_tree();
    let policy = common::random_policy(catalog.vocab_size(), 5);
    let groups: Vec<_> = (0..4)
        .map(|g| common::random_group(&mut r, &policy, &catalog, g, 5, false))
        .collect();
    let cfg = LossConfig::default();
    let (grpo, stats) = grpo_gradients(&policy, &groups, &trie, &cfg).unwrap();
    assert_eq!(grpo.norm(), 0.0);
    assert_eq!(stats.surrogate, 0.0);
    let (simpo, loss) = simpo_gradients(&policy, &groups, &trie, &cfg).unwrap();
    assert!(loss > 0.0);
    let mut combined = grpo.clone();
    combined.accumulate(&simpo, cfg.w);
    assert!(combined.norm() > 0.0);
    assert_eq!(sample_utilization(&groups, true), 1.0);
    assert_eq!(sample_utilization(&groups, false), 0.0);
}

#[test]
fn utilization_without_simpo_counts_successful_groups() {
    let mut r = common::rng(6);
    let catalog = common::random_catalog(&mut r, 20, 6, 3);
    let policy = common::random_policy(catalog.vocab_size(), 6);
    let groups: Vec<_> = (0..5)
        .map(|g| common::random_group(&mut r, &policy, &catalog, g, 4, g < 2))
        .collect();
    assert_eq!(sample_utilization(&groups, false), 2.0 / 5.0);
    assert_eq!(sample_utilization(&groups, true), 1.0);
}
