//! Synonym- and antonym-perturbed copies of a sentence.
//!
//! A positive copy swaps content words for synonyms, hypernyms or inflected
//! forms; a negative copy swaps them for antonyms (or random words of the
//! same coarse tag). Each copy carries a per-token replacement indicator.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::textproc::{tokenize, CoarseTagger, Tag, Vocab};
use crate::wordnet::{is_single_word, Lexicon};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub syn_rate: f64,
    pub ant_rate: f64,
    pub seed: u64,
    pub allow_random_fallback: bool,
    /// Only draw replacements that exist in the vocabulary.
    pub in_vocab_only: bool,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            syn_rate: 0.4,
            ant_rate: 0.2,
            seed: 0,
            allow_random_fallback: true,
            in_vocab_only: true,
        }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("syn_rate", self.syn_rate), ("ant_rate", self.ant_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {r}")));
            }
        }
        Ok(())
    }
}

/// Original sentence with its positive and negative perturbations.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TripletExample {
    #[serde(rename = "ori")]
    pub tokens_ori: Vec<String>,
    #[serde(rename = "syn")]
    pub tokens_syn: Vec<String>,
    #[serde(rename = "ant")]
    pub tokens_ant: Vec<String>,
    pub delta_syn: Vec<u8>,
    pub delta_ant: Vec<u8>,
}

impl TripletExample {
    pub fn len(&self) -> usize {
        self.tokens_ori.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens_ori.is_empty()
    }

    /// Checks equal lengths and that each delta marks exactly the positions
    /// that differ from the original.
    pub fn check(&self) -> Result<()> {
        let t = self.len();
        if [
            self.tokens_syn.len(),
            self.tokens_ant.len(),
            self.delta_syn.len(),
            self.delta_ant.len(),
        ]
        .iter()
        .any(|&l| l != t)
        {
            return Err(Error::Input("triplet fields differ in length".into()));
        }
        for (tokens, delta) in [
            (&self.tokens_syn, &self.delta_syn),
            (&self.tokens_ant, &self.delta_ant),
        ] {
            if delta != &diff_mask(&self.tokens_ori, tokens) {
                return Err(Error::Input(
                    "replacement indicator disagrees with tokens".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn syn_replacements(&self) -> usize {
        self.delta_syn.iter().map(|&d| d as usize).sum()
    }

    pub fn ant_replacements(&self) -> usize {
        self.delta_ant.iter().map(|&d| d as usize).sum()
    }
}

pub fn diff_mask(a: &[String], b: &[String]) -> Vec<u8> {
    a.iter().zip(b).map(|(x, y)| u8::from(x != y)).collect()
}

/// Maximum number of replacements for a sentence of `len` tokens.
pub fn replacement_cap(rate: f64, len: usize) -> usize {
    // tolerate representation error such as 0.7 * 10 = 7.000000000000001
    ((rate * len as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Indices of content-word tokens, in sentence order.
pub fn select_candidates(tags: &[Tag]) -> Vec<usize> {
    tags.iter()
        .enumerate()
        .filter(|(_, t)| t.is_content())
        .map(|(i, _)| i)
        .collect()
}

fn usable(word: &str, original: &str, vocab: Option<&Vocab>) -> bool {
    word != original && is_single_word(word) && vocab.is_none_or(|v| v.contains(word))
}

/// Synonyms, hypernyms and inflections of `token` under `tag`.
pub fn positive_pool(lex: &Lexicon, token: &str, tag: Tag, vocab: Option<&Vocab>) -> Vec<String> {
    let Some(pos) = tag.pos() else {
        return Vec::new();
    };
    let mut pool: BTreeSet<String> = lex.synonyms(token, pos);
    pool.extend(lex.hypernyms(token, pos));
    pool.extend(lex.morph_variants(token, pos));
    pool.into_iter()
        .filter(|w| usable(w, token, vocab))
        .collect()
}

pub fn antonym_pool(lex: &Lexicon, token: &str, tag: Tag, vocab: Option<&Vocab>) -> Vec<String> {
    let Some(pos) = tag.pos() else {
        return Vec::new();
    };
    lex.antonyms(token, pos)
        .into_iter()
        .filter(|w| usable(w, token, vocab))
        .collect()
}

fn replace_up_to(
    tokens: &[String],
    tags: &[Tag],
    cap: usize,
    rng: &mut Rng,
    mut draw: impl FnMut(&str, Tag, &mut Rng) -> Option<String>,
) -> (Vec<String>, Vec<u8>) {
    let mut out = tokens.to_vec();
    let mut delta = vec![0u8; tokens.len()];
    let mut candidates = select_candidates(tags);
    candidates.shuffle(rng);
    let mut made = 0;
    for i in candidates {
        if made >= cap {
            break;
        }
        if let Some(w) = draw(&tokens[i], tags[i], rng) {
            debug_assert_ne!(w, tokens[i]);
            out[i] = w;
            delta[i] = 1;
            made += 1;
        }
    }
    (out, delta)
}

fn pick(pool: &[String], rng: &mut Rng) -> Option<String> {
    pool.choose(rng).cloned()
}

/// Positive perturbation: visit candidates in random order and replace each
/// with a uniform draw from its positive pool until the rate cap is reached.
pub fn generate_syn(
    tokens: &[String],
    tags: &[Tag],
    lex: &Lexicon,
    vocab: &Vocab,
    cfg: &PerturbConfig,
    rng: &mut Rng,
) -> (Vec<String>, Vec<u8>) {
    debug_assert_eq!(tokens.len(), tags.len());
    let filter = cfg.in_vocab_only.then_some(vocab);
    let cap = replacement_cap(cfg.syn_rate, tokens.len());
    replace_up_to(tokens, tags, cap, rng, |tok, tag, rng| {
        pick(&positive_pool(lex, tok, tag, filter), rng)
    })
}

/// Negative perturbation: antonyms, falling back to a random vocabulary word
/// of the same coarse tag.
pub fn generate_ant(
    tokens: &[String],
    tags: &[Tag],
    lex: &Lexicon,
    vocab: &Vocab,
    cfg: &PerturbConfig,
    rng: &mut Rng,
) -> (Vec<String>, Vec<u8>) {
    debug_assert_eq!(tokens.len(), tags.len());
    let filter = cfg.in_vocab_only.then_some(vocab);
    let cap = replacement_cap(cfg.ant_rate, tokens.len());
    replace_up_to(tokens, tags, cap, rng, |tok, tag, rng| {
        if let Some(w) = pick(&antonym_pool(lex, tok, tag, filter), rng) {
            return Some(w);
        }
        if !cfg.allow_random_fallback {
            return None;
        }
        let pool: Vec<u32> = vocab
            .pool(tag)
            .into_iter()
            .filter(|&id| vocab.token(id) != Some(tok))
            .collect();
        pool.choose(rng)
            .and_then(|&id| vocab.token(id))
            .map(str::to_string)
    })
}

/// Bundles the resources needed to perturb sentences.
pub struct Perturber<'a> {
    pub lexicon: &'a Lexicon,
    pub vocab: &'a Vocab,
    pub tagger: &'a dyn CoarseTagger,
    pub config: PerturbConfig,
}

impl Perturber<'_> {
    /// Triplet for already tokenized and tagged text. `index` selects the
    /// random streams, so the result does not depend on what else is in the
    /// batch.
    pub fn triplet_tagged(&self, tokens: &[String], tags: &[Tag], index: u64) -> TripletExample {
        let seed = self.config.seed;
        let mut syn_rng = rng::derive(seed, &[index, rng::stream::SYN]);
        let mut ant_rng = rng::derive(seed, &[index, rng::stream::ANT]);
        let (tokens_syn, delta_syn) = generate_syn(
            tokens,
            tags,
            self.lexicon,
            self.vocab,
            &self.config,
            &mut syn_rng,
        );
        let (tokens_ant, delta_ant) = generate_ant(
            tokens,
            tags,
            self.lexicon,
            self.vocab,
            &self.config,
            &mut ant_rng,
        );
        TripletExample {
            tokens_ori: tokens.to_vec(),
            tokens_syn,
            tokens_ant,
            delta_syn,
            delta_ant,
        }
    }

    pub fn triplet(&self, sentence: &str, index: u64) -> TripletExample {
        let tokens = tokenize(sentence);
        let tags = self.tagger.tag(&tokens);
        self.triplet_tagged(&tokens, &tags, index)
    }

    /// Single-replacement triplet: one position replaced by a synonym in the
    /// positive copy and by an antonym in the negative copy. `None` when no
    /// content word has both.
    pub fn eval_triplet(&self, sentence: &str, index: u64) -> Option<TripletExample> {
        let tokens = tokenize(sentence);
        let tags = self.tagger.tag(&tokens);
        let filter = self.config.in_vocab_only.then_some(self.vocab);
        let mut rng = rng::derive(self.config.seed, &[index, rng::stream::EVAL]);
        let mut candidates = select_candidates(&tags);
        candidates.shuffle(&mut rng);
        for i in candidates {
            let Some(pos) = tags[i].pos() else { continue };
            let tok = &tokens[i];
            let syns: Vec<String> = self
                .lexicon
                .synonyms(tok, pos)
                .into_iter()
                .filter(|w| usable(w, tok, filter))
                .collect();
            let ants = antonym_pool(self.lexicon, tok, tags[i], filter);
            if syns.is_empty() || ants.is_empty() {
                continue;
            }
            let mut tokens_syn = tokens.clone();
            let mut tokens_ant = tokens.clone();
            tokens_syn[i] = pick(&syns, &mut rng)?;
            tokens_ant[i] = pick(&ants, &mut rng)?;
            let mut delta = vec![0u8; tokens.len()];
            delta[i] = 1;
            return Some(TripletExample {
                tokens_ori: tokens,
                tokens_syn,
                tokens_ant,
                delta_syn: delta.clone(),
                delta_ant: delta,
            });
        }
        None
    }

    /// At most `n` single-replacement triplets, scanning `corpus` in order.
    pub fn eval_triplets<S: AsRef<str>>(&self, corpus: &[S], n: usize) -> Vec<TripletExample> {
        corpus
            .iter()
            .enumerate()
            .filter_map(|(i, s)| self.eval_triplet(s.as_ref(), i as u64))
            .take(n)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::NUM_SPECIAL;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn candidates() {
        use Tag::*;
        assert!(select_candidates(&[Other, Other]).is_empty());
        assert_eq!(select_candidates(&[Adj, Other, Adj, Noun]), [0, 2, 3]);
        assert_eq!(select_candidates(&[Verb, Adv, Other, Noun]), [0, 1, 3]);
    }

    #[test]
    fn caps() {
        assert_eq!(replacement_cap(0.4, 10), 4);
        assert_eq!(replacement_cap(0.4, 3), 2);
        assert_eq!(replacement_cap(0.7, 10), 7);
        assert_eq!(replacement_cap(0.0, 10), 0);
        assert_eq!(replacement_cap(0.2, 0), 0);
    }

    struct Fixed(Vec<Tag>);
    impl CoarseTagger for Fixed {
        fn tag(&self, tokens: &[String]) -> Vec<Tag> {
            self.0.iter().copied().cycle().take(tokens.len()).collect()
        }
    }

    #[test]
    fn random_fallback_never_keeps_original() {
        let lex = Lexicon::default();
        let mut vocab = Vocab::from_tokens(["cat", "dog", "the"]).unwrap();
        vocab.set_tag(NUM_SPECIAL as u32, Some(Tag::Noun));
        vocab.set_tag(NUM_SPECIAL as u32 + 1, Some(Tag::Noun));
        let cfg = PerturbConfig {
            ant_rate: 1.0,
            ..Default::default()
        };
        let tokens = toks("the cat");
        let tags = [Tag::Other, Tag::Noun];
        for s in 0..20 {
            let (out, delta) =
                generate_ant(&tokens, &tags, &lex, &vocab, &cfg, &mut rng::derive(s, &[]));
            assert_eq!(out, toks("the dog"));
            assert_eq!(delta, [0, 1]);
        }
        let no_fallback = PerturbConfig {
            allow_random_fallback: false,
            ..cfg
        };
        let (out, _) = generate_ant(
            &tokens,
            &tags,
            &lex,
            &vocab,
            &no_fallback,
            &mut rng::derive(0, &[]),
        );
        assert_eq!(out, tokens);
    }

    #[test]
    fn no_content_words_is_identity() {
        let lex = Lexicon::default();
        let vocab = Vocab::specials();
        let tagger = Fixed(vec![Tag::Other]);
        let p = Perturber {
            lexicon: &lex,
            vocab: &vocab,
            tagger: &tagger,
            config: PerturbConfig::default(),
        };
        let t = p.triplet("of the and", 0);
        assert_eq!(t.tokens_syn, t.tokens_ori);
        assert_eq!(t.tokens_ant, t.tokens_ori);
        assert!(t.delta_syn.iter().chain(&t.delta_ant).all(|&d| d == 0));
        t.check().unwrap();
        assert!(p.eval_triplet("of the and", 0).is_none());
    }

    #[test]
    fn json_field_names() {
        let t = TripletExample {
            tokens_ori: toks("a b"),
            tokens_syn: toks("a c"),
            tokens_ant: toks("a b"),
            delta_syn: vec![0, 1],
            delta_ant: vec![0, 0],
        };
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(
            json,
            r#"{"ori":["a","b"],"syn":["a","c"],"ant":["a","b"],"delta_syn":[0,1],"delta_ant":[0,0]}"#
        );
        t.check().unwrap();
    }

    #[test]
    fn bad_rates_rejected() {
        let cfg = PerturbConfig {
            syn_rate: 1.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
