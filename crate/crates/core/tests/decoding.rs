mod common;

use std::collections::HashMap;

use rand::Rng;

use riser::decoding::{self, DecodingConfig};
use riser::item_space::Token;
use riser::metrics::{exhaustive_ranking, RankedList};

#[test]
fn full_width_beam_equals_exhaustive_ranking() {
    for seed in 0..12u64 {
        let mut r = common::rng(seed);
        let items = r.random_range(2..=200);
        let catalog = common::random_catalog(&mut r, items, 7, 4);
        let trie = catalog.prefix_tree();
        let policy = common::random_policy(catalog.vocab_size(), seed);
        for _ in 0..3 {
            let prompt = common::random_prompt(&mut r, &catalog);
            let oracle = exhaustive_ranking(&policy, &prompt, &catalog).unwrap();
            let h = policy.encode(&prompt).unwrap();
            let beam = decoding::beam_from_state(&policy, &h, catalog.len(), &trie).unwrap();
            let beam = RankedList::from_decoded(&beam, &catalog).unwrap();
            assert_eq!(beam.items(), oracle.items(), "seed {seed}");
            for (a, b) in beam.scores().iter().zip(oracle.scores()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn constrained_sampling_frequencies_match_item_probabilities() {
    let mut r = common::rng(77);
    let catalog = common::random_catalog(&mut r, 15, 4, 3);
    let trie = catalog.prefix_tree();
    let policy = common::random_policy(catalog.vocab_size(), 77);
    let prompt = common::random_prompt(&mut r, &catalog);
    let h = policy.encode(&prompt).unwrap();
    let cfg = DecodingConfig::default();

    // Under constrained sampling an item's probability is the product of the
    // renormalized per-step probabilities over trie children.
    let mut expected = HashMap::new();
    for it in catalog.items() {
        let mut p = 1.0;
        let mut state = h.clone();
        for (j, &t) in it.tokens().iter().enumerate() {
            let logits = policy.logits(&state);
            let kids = trie.children(&it.tokens()[..j]).unwrap();
            let z: f64 = kids.iter().map(|k| logits[k.id()].exp()).sum();
            p *= logits[t.id()].exp() / z;
            state = policy.step(&state, t);
        }
        expected.insert(it.tokens().to_vec(), p);
    }
    let total: f64 = expected.values().sum();
    assert!((total - 1.0).abs() < 1e-9);

    let draws = 20_000;
    let mut seen: HashMap<Vec<Token>, usize> = HashMap::new();
    for _ in 0..draws {
        let s = decoding::sample_from_state(&policy, &h, &cfg, Some(&trie), &mut r).unwrap();
        assert!(trie.contains_item(&s));
        *seen.entry(s).or_insert(0) += 1;
    }
    for (item, p) in &expected {
        let count = *seen.get(item).unwrap_or(&0) as f64;
        let mean = p * draws as f64;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        assert!((count - mean).abs() <= 3.0 * sd + 1.0, "{item:?}: {count} vs {mean}");
    }
}
