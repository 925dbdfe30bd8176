//! Generates the default synthetic world and prints catalog and split statistics.

use riser::metrics::popularity_split;
use riser::world::{self, GenConfig};

fn main() -> riser::Result<()> {
    let cfg = GenConfig::default();
    let catalog = world::build_catalog(&cfg)?;
    let splits = world::generate_interactions(&cfg, &catalog)?;
    splits.check_disjoint()?;
    for (name, split) in splits.named() {
        println!("{name}: {} interactions", split.len());
    }

    let mut freq = vec![0usize; catalog.len()];
    for i in &splits.d_sft {
        freq[i.target] += 1;
    }
    println!("target gini over D_SFT: {:.3}", world::gini(&freq));
    let pop = popularity_split(catalog.len(), splits.d_sft.iter().chain(&splits.d_rl));
    println!("{} popular / {} unpopular items", pop.popular.len(), pop.unpopular.len());

    let first = &splits.d_test[0];
    let prompt = world::assemble_prompt(&first.history, &catalog)?;
    println!("user {} history {:?} -> target {}", first.user, first.history, first.target);
    println!("prompt tokens: {:?}", prompt);
    println!("target tokens: {:?}", catalog.get(first.target)?);
    Ok(())
}
