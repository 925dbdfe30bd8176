//! Builds a prefix tree over a handful of items and prints the valid
//! continuations and certainty masks.
//!
//! ```text
//! cargo run --example prefix_tree
//! ```

use riser::item_space::{PrefixTree, Token, TokenizedItem};

fn item(content: &[u32]) -> TokenizedItem {
    let tokens: Vec<Token> = content.iter().map(|&t| Token(t)).collect();
    TokenizedItem::from_content(&tokens).unwrap()
}

fn main() -> riser::Result<()> {
    // Brand 4 has two series; series 6 has a single model.
    let items = [item(&[4, 6, 9]), item(&[4, 7, 9]), item(&[4, 7, 10]), item(&[5, 8, 11])];
    let mut trie = PrefixTree::new();
    for it in &items {
        trie.insert(it)?;
    }
    println!("{} items, {} prefixes", trie.item_count(), trie.num_prefixes());
    println!("root children: {:?}", trie.children(&[]).unwrap());
    println!("after [4]: {:?}", trie.children(&[Token(4)]).unwrap());

    for it in &items {
        let mask = trie.certainty_mask(it.tokens(), 0.5)?;
        println!("{:?} -> {:?}", it, mask.weights);
    }
    println!("valid [4 6 10 END]? {}", trie.contains_item(item(&[4, 6, 10]).tokens()));
    Ok(())
}
