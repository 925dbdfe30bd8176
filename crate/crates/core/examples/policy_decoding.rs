//! Token log-probabilities, sampling, greedy and beam decoding with an
//! untrained policy on a small world.

use riser::decoding::{self, DecodingConfig};
use riser::policy::{PolicyDims, PolicyState};
use riser::world::{self, GenConfig};

fn main() -> riser::Result<()> {
    let cfg = GenConfig {
        num_items: 64,
        tokens_per_level: vec![4, 4, 4],
        num_users: 50,
        num_interactions: 500,
        ..GenConfig::default()
    };
    let catalog = world::build_catalog(&cfg)?;
    let trie = catalog.prefix_tree();
    let policy = PolicyState::init(PolicyDims::new(catalog.vocab_size(), 32, 64), 7);
    let prompt = world::assemble_prompt(&[3, 17, 40], &catalog)?;

    let target = catalog.get(5)?;
    let lp = policy.token_log_probs(&prompt, target.tokens())?;
    println!("log p(item 5) per token: {lp:.3?}, total {:.3}", lp.iter().sum::<f64>());

    let dc = DecodingConfig::default();
    let mut rng = riser::rng::stream(7, &[1]);
    for _ in 0..3 {
        let s = decoding::sample_completion(&policy, &prompt, &dc, Some(&trie), &mut rng)?;
        println!("sample: {:?} (item {:?})", s, catalog.id_of(&s));
    }
    println!("greedy: {:?}", decoding::greedy(&policy, &prompt, &trie)?);
    for (tokens, score) in decoding::beam_search(&policy, &prompt, &DecodingConfig { beam_width: 5, ..dc }, &trie)? {
        println!("beam: {:?} {score:.3}", catalog.id_of(&tokens));
    }
    println!("mean entropy: {:.3}", decoding::mean_entropy(&policy, &[prompt], &trie)?);
    Ok(())
}
