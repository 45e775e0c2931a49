use std::collections::HashMap;

use super::tagger::{CoarseTagger, Tag};
use super::tokenize::tokenize;
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;
pub const NUM_SPECIAL: usize = 5;

const SPECIALS: [&str; NUM_SPECIAL] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Word-level vocabulary with per-tag pools of ids used for random
/// replacement.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    tags: Vec<Option<Tag>>,
}

impl Vocab {
    /// A vocabulary holding only the special tokens.
    pub fn specials() -> Vocab {
        Vocab::from_tokens(Vec::<String>::new()).expect("specials are unique")
    }

    /// Builds a vocabulary from non-special tokens in id order (ids start
    /// after the specials).
    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Vocab> {
        let mut vocab = Vocab {
            tokens: Vec::new(),
            ids: HashMap::new(),
            tags: Vec::new(),
        };
        for tok in SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(tokens.into_iter().map(Into::into))
        {
            if vocab.ids.contains_key(&tok) {
                return Err(Error::Input(format!("duplicate vocabulary token `{tok}`")));
            }
            vocab.ids.insert(tok.clone(), vocab.tokens.len() as u32);
            vocab.tokens.push(tok);
            vocab.tags.push(None);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < NUM_SPECIAL
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens
            .iter()
            .map(|t| self.id(t.as_ref()).unwrap_or(UNK))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(SPECIALS[UNK as usize]).to_string())
            .collect()
    }

    /// Tags every non-special token in isolation and stores the result as
    /// its replacement pool.
    pub fn assign_pools(&mut self, tagger: &dyn CoarseTagger) {
        for id in NUM_SPECIAL..self.tokens.len() {
            let tok = [self.tokens[id].clone()];
            self.tags[id] = tagger.tag(&tok).first().copied();
        }
    }

    pub fn set_tag(&mut self, id: u32, tag: Option<Tag>) {
        if !Vocab::is_special(id) {
            if let Some(slot) = self.tags.get_mut(id as usize) {
                *slot = tag;
            }
        }
    }

    pub fn tag_of(&self, id: u32) -> Option<Tag> {
        self.tags.get(id as usize).copied().flatten()
    }

    pub fn has_pools(&self) -> bool {
        self.tags.iter().any(Option::is_some)
    }

    /// Ids whose isolated tag is `tag`, in id order.
    pub fn pool(&self, tag: Tag) -> Vec<u32> {
        (NUM_SPECIAL..self.tokens.len())
            .filter(|&i| self.tags[i] == Some(tag))
            .map(|i| i as u32)
            .collect()
    }
}

/// Counts tokens over `lines` and keeps the most frequent ones with count at
/// least `min_count`, so that the vocabulary (specials included) holds at most
/// `max_size` entries. Ties are broken lexicographically.
pub fn build_vocab<I, S>(lines: I, min_count: usize, max_size: usize) -> Vocab
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: HashMap<String, usize> = HashMap::new();
    for line in lines {
        for tok in tokenize(line.as_ref()) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_count.max(1) && !SPECIALS.contains(&t.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size.saturating_sub(NUM_SPECIAL));
    Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t)).expect("counted tokens are unique")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counting_and_caps() {
        let v = build_vocab(["a a b"], 2, 100);
        assert_eq!(&v.tokens()[NUM_SPECIAL..], ["a"]);
        let v = build_vocab(["c b b a a"], 1, 6);
        assert_eq!(&v.tokens()[NUM_SPECIAL..], ["a"]);
        let v = build_vocab(["c b a"], 1, 100);
        assert_eq!(&v.tokens()[NUM_SPECIAL..], ["a", "b", "c"]);
        let v = build_vocab(Vec::<String>::new(), 1, 100);
        assert_eq!(v.len(), NUM_SPECIAL);
        assert_eq!(v, Vocab::specials());
    }

    #[test]
    fn specials_have_fixed_ids() {
        let v = Vocab::specials();
        assert_eq!(v.id("[PAD]"), Some(PAD));
        assert_eq!(v.id("[MASK]"), Some(MASK));
        assert_eq!(v.encode(&["nope"]), [UNK]);
    }

    #[test]
    fn deterministic() {
        let corpus = ["the cat sat", "the dog sat down", "a cat"];
        assert_eq!(build_vocab(corpus, 1, 50), build_vocab(corpus, 1, 50));
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(words in proptest::collection::vec("[a-e]{1,3}", 1..20), picks in proptest::collection::vec(0usize..100, 0..30)) {
            let corpus = words.join(" ");
            let v = build_vocab([corpus.as_str()], 1, 1000);
            let in_vocab: Vec<String> = picks.iter().map(|i| words[i % words.len()].clone()).collect();
            prop_assert_eq!(v.decode(&v.encode(&in_vocab)), in_vocab);
        }
    }
}
