//! Oversampled, de-duplicated rollout groups with rewards, advantages and the
//! preference pairs built from a failed group.

use riser::policy::{PolicyDims, PolicyState};
use riser::rollout::{self, dedup_select};
use riser::world::{self, GenConfig};

fn main() -> riser::Result<()> {
    let mut rng = riser::rng::stream(1, &[0]);
    let draws = ['a', 'a', 'a', 'b'];
    println!("dedup {:?} -> {:?}", draws, dedup_select(&draws, 3, &mut rng)?);
    println!("advantages of [1, -1, -1, -1]: {:.3?}", rollout::group_advantages(&[1.0, -1.0, -1.0, -1.0])?);

    let cfg = GenConfig {
        num_items: 24,
        tokens_per_level: vec![3, 3, 3],
        num_users: 20,
        num_interactions: 200,
        ..GenConfig::default()
    };
    let catalog = world::build_catalog(&cfg)?;
    let trie = catalog.prefix_tree();
    let splits = world::generate_interactions(&cfg, &catalog)?;
    let policy = PolicyState::init(PolicyDims::new(catalog.vocab_size(), 8, 16), 1);

    let mut groups = Vec::new();
    for (id, ex) in splits.d_rl.iter().take(6).enumerate() {
        let prompt = world::assemble_prompt(&ex.history, &catalog)?;
        let truth = catalog.get(ex.target)?;
        groups.push(rollout::generate_group(&policy, id, &prompt, truth, 20, 16, 1.0, &trie, &mut rng)?);
    }
    for g in &groups {
        let unique = g.unique.iter().filter(|&&u| u).count();
        println!("prompt {}: {} hits, {unique}/16 from the distinct set", g.prompt_id, g.hits());
    }
    let (succ, fail) = rollout::partition(groups);
    println!("{} successful, {} failed groups", succ.len(), fail.len());
    if let Some(g) = fail.first() {
        let pairs = rollout::build_preference_pairs(g)?;
        println!("{} pairs; first chosen {:?} rejected {:?}", pairs.len(), pairs[0].chosen, pairs[0].rejected);
    }
    Ok(())
}
