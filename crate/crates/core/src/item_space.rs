//! Item vocabulary, the prefix tree over tokenized items and the certainty mask.
//!
//! Items are fixed token sequences that end in the reserved [`Token::TERMINAL`].
//! The [`PrefixTree`] is a hash map from every proper prefix of every inserted
//! item to the sorted set of tokens that may follow it. That single lookup drives
//! constrained decoding, validity checks and the certainty-aware mask.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into the policy vocabulary.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(pub u32);

impl Token {
    /// Ends every item sequence and never appears anywhere else inside one.
    pub const TERMINAL: Token = Token(0);
    /// Instruction block marker that opens every prompt.
    pub const INSTRUCTION: Token = Token(1);
    /// Precedes each history item inside a prompt.
    pub const SEPARATOR: Token = Token(2);
    /// Closes the prompt; generation starts right after it.
    pub const RESPONSE: Token = Token(3);
    /// First id available for item content tokens.
    pub const FIRST_CONTENT: u32 = 4;

    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn is_terminal(self) -> bool {
        self == Token::TERMINAL
    }
}

impl fmt::Debug for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_terminal() {
            f.write_str("$")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// A catalog item as a token sequence: one or more content tokens and the terminal.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<Token>", into = "Vec<Token>")]
pub struct TokenizedItem(Vec<Token>);

impl TokenizedItem {
    pub fn new(tokens: Vec<Token>) -> Result<Self> {
        check_item_tokens(&tokens)?;
        Ok(Self(tokens))
    }

    /// Builds an item from its content tokens, appending the terminal.
    pub fn from_content(content: &[Token]) -> Result<Self> {
        let mut tokens = Vec::with_capacity(content.len() + 1);
        tokens.extend_from_slice(content);
        tokens.push(Token::TERMINAL);
        Self::new(tokens)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    /// Tokens without the trailing terminal.
    pub fn content(&self) -> &[Token] {
        &self.0[..self.0.len() - 1]
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.0.len()
    }
}

impl fmt::Debug for TokenizedItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl TryFrom<Vec<Token>> for TokenizedItem {
    type Error = Error;

    fn try_from(tokens: Vec<Token>) -> Result<Self> {
        Self::new(tokens)
    }
}

impl From<TokenizedItem> for Vec<Token> {
    fn from(item: TokenizedItem) -> Self {
        item.0
    }
}

fn check_item_tokens(tokens: &[Token]) -> Result<()> {
    let malformed = |reason| Error::MalformedItem {
        tokens: tokens.to_vec(),
        reason,
    };
    if tokens.len() < 2 {
        return Err(malformed("need at least one content token and the terminal"));
    }
    if !tokens[tokens.len() - 1].is_terminal() {
        return Err(malformed("last token must be the terminal"));
    }
    if tokens[..tokens.len() - 1].iter().any(|t| t.is_terminal()) {
        return Err(malformed("terminal token before the end"));
    }
    Ok(())
}

/// Hash-map prefix tree over tokenized items.
///
/// Keys are exact, order-sensitive token prefixes (the empty prefix included);
/// values are the sorted valid next tokens. Insert-only.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrefixTree {
    children: HashMap<Vec<Token>, Vec<Token>>,
    item_count: usize,
}

impl PrefixTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn build<'a, I>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a TokenizedItem>,
    {
        let mut tree = Self::new();
        for item in items {
            tree.insert(item)?;
        }
        Ok(tree)
    }

    /// Inserts one item in O(l) and returns the number of prefix entries touched.
    pub fn insert(&mut self, item: &TokenizedItem) -> Result<usize> {
        let tokens = item.tokens();
        check_item_tokens(tokens)?;
        if self.contains_item(tokens) {
            return Err(Error::DuplicateItem(tokens.to_vec()));
        }
        for j in 0..tokens.len() {
            let next = tokens[j];
            let entry = self.children.entry(tokens[..j].to_vec()).or_default();
            if let Err(pos) = entry.binary_search(&next) {
                entry.insert(pos, next);
            }
        }
        self.item_count += 1;
        Ok(tokens.len())
    }

    /// Valid next tokens after `prefix`, sorted ascending, or `None` for a prefix
    /// that no inserted item starts with.
    pub fn children(&self, prefix: &[Token]) -> Option<&[Token]> {
        self.children.get(prefix).map(Vec::as_slice)
    }

    /// True iff `tokens` is exactly the full sequence of an inserted item.
    pub fn contains_item(&self, tokens: &[Token]) -> bool {
        match tokens.split_last() {
            Some((last, content)) if last.is_terminal() && !content.is_empty() => self
                .children(content)
                .is_some_and(|c| c.binary_search(&Token::TERMINAL).is_ok()),
            _ => false,
        }
    }

    pub fn item_count(&self) -> usize {
        self.item_count
    }

    /// Number of stored prefix keys.
    pub fn num_prefixes(&self) -> usize {
        self.children.len()
    }

    /// Per-token certainty weights: 1 at branching points and on the final token,
    /// `decay` on tokens whose prefix admits a single continuation.
    pub fn certainty_mask(&self, tokens: &[Token], decay: f64) -> Result<CertaintyMask> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::Config(format!(
                "mask decay must lie in [0, 1), got {decay}"
            )));
        }
        if !self.contains_item(tokens) {
            return Err(Error::OutOfCatalog(tokens.to_vec()));
        }
        let last = tokens.len() - 1;
        let mut weights = Vec::with_capacity(tokens.len());
        for j in 0..tokens.len() {
            let children = self
                .children(&tokens[..j])
                .ok_or_else(|| Error::OutOfCatalog(tokens.to_vec()))?;
            // Zero children cannot happen for a contained item.
            debug_assert!(!children.is_empty());
            let weight = if children.len() > 1 || j == last {
                1.0
            } else {
                decay
            };
            weights.push(weight);
        }
        Ok(CertaintyMask { weights, decay })
    }
}

/// Per-token weights in `{decay, 1}` for one item.
#[derive(Clone, Debug, PartialEq)]
pub struct CertaintyMask {
    pub weights: Vec<f64>,
    pub decay: f64,
}

impl CertaintyMask {
    /// All-ones mask, used when masking is disabled.
    pub fn ones(len: usize) -> Self {
        Self {
            weights: vec![1.0; len],
            decay: 1.0,
        }
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// The item catalog: items indexed by dense id plus the vocabulary size.
#[derive(Clone, Debug)]
pub struct ItemCatalog {
    items: Vec<TokenizedItem>,
    index: HashMap<Vec<Token>, usize>,
    vocab_size: usize,
}

impl ItemCatalog {
    pub fn new(items: Vec<TokenizedItem>, vocab_size: usize) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Data("catalog is empty".into()));
        }
        let mut index = HashMap::with_capacity(items.len());
        for (id, item) in items.iter().enumerate() {
            if let Some(bad) = item.tokens().iter().find(|t| t.id() >= vocab_size) {
                return Err(Error::TokenOutOfRange {
                    token: bad.0,
                    vocab: vocab_size,
                });
            }
            if index.insert(item.tokens().to_vec(), id).is_some() {
                return Err(Error::DuplicateItem(item.tokens().to_vec()));
            }
        }
        Ok(Self {
            items,
            index,
            vocab_size,
        })
    }

    pub fn items(&self) -> &[TokenizedItem] {
        &self.items
    }

    pub fn get(&self, id: usize) -> Result<&TokenizedItem> {
        self.items.get(id).ok_or(Error::UnknownItem(id))
    }

    pub fn id_of(&self, tokens: &[Token]) -> Option<usize> {
        self.index.get(tokens).copied()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn prefix_tree(&self) -> PrefixTree {
        PrefixTree::build(&self.items).expect("catalog items are unique and well formed")
    }

    /// Writes the catalog file: a `# vocab_size N` header, then one item per line
    /// as whitespace-separated content token ids (the terminal is implicit).
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# vocab_size {}", self.vocab_size)?;
        for item in &self.items {
            let line: Vec<String> = item.content().iter().map(|t| t.0.to_string()).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut items = Vec::new();
        let mut vocab_size = None;
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let mut parts = comment.split_whitespace();
                if parts.next() == Some("vocab_size") {
                    let v = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| {
                        Error::Data(format!("line {}: bad vocab_size header", lineno + 1))
                    })?;
                    vocab_size = Some(v);
                }
                continue;
            }
            let content = line
                .split_whitespace()
                .map(|t| t.parse::<u32>().map(Token))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Data(format!("line {}: {e}", lineno + 1)))?;
            items.push(TokenizedItem::from_content(&content)?);
        }
        let max_token = items
            .iter()
            .flat_map(|i| i.tokens())
            .map(|t| t.id())
            .max()
            .unwrap_or(0);
        let vocab_size =
            vocab_size.unwrap_or_else(|| (max_token + 1).max(Token::FIRST_CONTENT as usize));
        Self::new(items, vocab_size)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}
