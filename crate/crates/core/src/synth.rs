//! Template corpora built from WordNet word families.
//!
//! A family pairs a head lemma and some of its synonyms (the positive side)
//! with an antonym and some of the antonym's synonyms (the negative side).
//! Families are grouped into topics; every generated sentence draws its
//! content words from a single topic. Adjective families double as sentiment
//! lexicon: the positive side carries label 1.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, stream, Rng};
use crate::textproc::{Tag, TaggedSentence};
use crate::trainer::LabeledExample;
use crate::wordnet::{Lexicon, Pos};

/// Template words; none of them is a WordNet lemma.
pub const FUNCTION_WORDS: [&str; 14] = [
    "the", "this", "our", "their", "my", "we", "they", "she", "is", "was", "were", "and", ".", ",",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub adj_families: usize,
    pub noun_families: usize,
    pub verb_families: usize,
    pub adv_families: usize,
    /// Synonyms kept per side of a family.
    pub max_synonyms: usize,
    pub topics: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            adj_families: 60,
            noun_families: 30,
            verb_families: 30,
            adv_families: 15,
            max_synonyms: 2,
            topics: 6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Family {
    pub pos: Pos,
    /// Head lemma first, then its synonyms.
    pub positive: Vec<String>,
    /// Antonym of the head first, then its synonyms.
    pub negative: Vec<String>,
    pub topic: usize,
}

impl Family {
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.positive
            .iter()
            .chain(&self.negative)
            .map(String::as_str)
    }
}

fn is_simple(word: &str) -> bool {
    word.len() >= 3
        && word.bytes().all(|b| b.is_ascii_lowercase())
        && !FUNCTION_WORDS.contains(&word)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Word(&'static str),
    Content(Pos),
}

const TEMPLATES: &[&[&str]] = &[
    &["the", "N", "was", "A", "."],
    &["the", "N", "is", "R", "A", "."],
    &["this", "N", "was", "A", "and", "A", "."],
    &["they", "V", "the", "A", "N", "."],
    &["we", "V", "the", "N", "R", "."],
    &[
        "our", "N", "was", "A", ",", "and", "their", "N", "was", "A", ".",
    ],
    &["she", "R", "V", "my", "N", "."],
    &["the", "A", "N", "were", "R", "A", "."],
];

const SENTIMENT_TEMPLATES: &[&[&str]] = &[
    &["the", "N", "was", "P", "."],
    &["our", "N", "is", "P", "."],
    &["the", "N", "was", "R", "P", "."],
    &["this", "N", "was", "P", "and", "P", "."],
    &["their", "N", "is", "R", "P", "."],
];

fn slot(s: &'static str) -> Slot {
    match s {
        "N" => Slot::Content(Pos::Noun),
        "V" => Slot::Content(Pos::Verb),
        "A" | "P" => Slot::Content(Pos::Adj),
        "R" => Slot::Content(Pos::Adv),
        w => Slot::Word(w),
    }
}

/// Which words a sentiment slot may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolarWords {
    /// Only the head and its direct antonym.
    Anchors,
    /// Only the synonyms on either side.
    Synonyms,
    /// Anchors or synonyms with equal probability.
    Mixed,
}

/// A sentiment example with its label-flipped counterpart.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastPair {
    pub original: LabeledExample,
    pub contrast: LabeledExample,
}

/// Families and the generators that draw sentences from them.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthWorld {
    pub config: SynthConfig,
    pub families: Vec<Family>,
    by_topic: BTreeMap<(usize, Pos), Vec<usize>>,
}

impl SynthWorld {
    pub fn build(lex: &Lexicon, config: SynthConfig) -> Result<SynthWorld> {
        if config.topics == 0 {
            return Err(Error::Config(
                "synthetic corpus needs at least one topic".into(),
            ));
        }
        let wanted = [
            (Pos::Adj, config.adj_families),
            (Pos::Noun, config.noun_families),
            (Pos::Verb, config.verb_families),
            (Pos::Adv, config.adv_families),
        ];
        let mut used: BTreeSet<String> = BTreeSet::new();
        let mut families = Vec::new();
        for (pos, n) in wanted {
            let mut heads: Vec<&str> = lex.lemmas(pos).filter(|l| is_simple(l)).collect();
            heads.shuffle(&mut rng::derive(
                config.seed,
                &[stream::SHUFFLE, pos as u64],
            ));
            let mut made = 0;
            for head in heads {
                if made == n {
                    break;
                }
                if let Some(f) = family(lex, pos, head, config.max_synonyms, &used) {
                    used.extend(f.words().map(str::to_string));
                    families.push(Family {
                        topic: made % config.topics,
                        ..f
                    });
                    made += 1;
                }
            }
            if made < n {
                return Err(Error::Input(format!(
                    "only {made} {pos} families available, {n} requested"
                )));
            }
        }
        let mut by_topic: BTreeMap<(usize, Pos), Vec<usize>> = BTreeMap::new();
        for (i, f) in families.iter().enumerate() {
            by_topic.entry((f.topic, f.pos)).or_default().push(i);
        }
        Ok(SynthWorld {
            config,
            families,
            by_topic,
        })
    }

    /// Every family word, sorted.
    pub fn words(&self) -> BTreeSet<&str> {
        self.families.iter().flat_map(Family::words).collect()
    }

    /// Family index and side (`true` = positive) of `word`.
    pub fn polarity(&self, word: &str) -> Option<(usize, bool)> {
        self.families.iter().enumerate().find_map(|(i, f)| {
            if f.positive.iter().any(|w| w == word) {
                Some((i, true))
            } else if f.negative.iter().any(|w| w == word) {
                Some((i, false))
            } else {
                None
            }
        })
    }

    fn family_for(&self, topic: usize, pos: Pos, rng: &mut Rng) -> &Family {
        let pool = self
            .by_topic
            .get(&(topic, pos))
            .or_else(|| {
                self.by_topic
                    .iter()
                    .find(|((_, p), _)| *p == pos)
                    .map(|(_, v)| v)
            })
            .expect("every part of speech has families");
        &self.families[*pool.choose(rng).expect("non-empty pool")]
    }

    fn any_word(&self, topic: usize, pos: Pos, rng: &mut Rng) -> String {
        let f = self.family_for(topic, pos, rng);
        let side = if rng.gen::<bool>() {
            &f.positive
        } else {
            &f.negative
        };
        side.choose(rng).expect("non-empty side").clone()
    }

    /// One tagged sentence on a random topic.
    pub fn sentence(&self, rng: &mut Rng) -> TaggedSentence {
        let topic = rng.gen_range(0..self.config.topics);
        let template = TEMPLATES.choose(rng).expect("templates");
        let mut tokens = Vec::with_capacity(template.len());
        let mut tags = Vec::with_capacity(template.len());
        for &s in *template {
            match slot(s) {
                Slot::Word(w) => {
                    tokens.push(w.to_string());
                    tags.push(Tag::Other);
                }
                Slot::Content(pos) => {
                    tokens.push(self.any_word(topic, pos, rng));
                    tags.push(Tag::from_pos(pos));
                }
            }
        }
        TaggedSentence { tokens, tags }
    }

    /// `n` sentences from the stream keyed by `seed`.
    pub fn corpus(&self, n: usize, seed: u64) -> Vec<TaggedSentence> {
        let mut rng = rng::derive(seed, &[stream::SHUFFLE]);
        (0..n).map(|_| self.sentence(&mut rng)).collect()
    }

    fn polar_word(&self, f: &Family, positive: bool, words: PolarWords, rng: &mut Rng) -> String {
        let side = if positive { &f.positive } else { &f.negative };
        let synonyms = match words {
            PolarWords::Anchors => false,
            PolarWords::Synonyms => true,
            PolarWords::Mixed => rng.gen::<bool>(),
        };
        if synonyms && side.len() > 1 {
            side[1..].choose(rng).expect("synonyms").clone()
        } else {
            side[0].clone()
        }
    }

    /// Label-balanced sentiment examples with their contrast counterparts.
    /// Polar slots use adjectives; a contrast copy swaps every polar word to
    /// the other side of its family and flips the label.
    pub fn sentiment(&self, n: usize, seed: u64, words: PolarWords) -> Vec<ContrastPair> {
        let mut rng = rng::derive(seed, &[stream::SHUFFLE]);
        let polar: Vec<&Family> = self
            .families
            .iter()
            .filter(|f| {
                f.pos == Pos::Adj
                    && (words == PolarWords::Anchors
                        || (f.positive.len() > 1 && f.negative.len() > 1))
            })
            .collect();
        (0..n)
            .map(|i| {
                let label = i % 2;
                let positive = label == 1;
                let topic = rng.gen_range(0..self.config.topics);
                let template = SENTIMENT_TEMPLATES.choose(&mut rng).expect("templates");
                let (mut ori, mut rev) = (Vec::new(), Vec::new());
                for &s in *template {
                    if s == "P" {
                        let f = polar.choose(&mut rng).expect("polar families");
                        ori.push(self.polar_word(f, positive, words, &mut rng));
                        rev.push(self.polar_word(f, !positive, words, &mut rng));
                    } else {
                        let w = match slot(s) {
                            Slot::Word(w) => w.to_string(),
                            Slot::Content(pos) => self.any_word(topic, pos, &mut rng),
                        };
                        ori.push(w.clone());
                        rev.push(w);
                    }
                }
                ContrastPair {
                    original: LabeledExample::new(label, ori.join(" ")),
                    contrast: LabeledExample::new(1 - label, rev.join(" ")),
                }
            })
            .collect()
    }
}

fn family(
    lex: &Lexicon,
    pos: Pos,
    head: &str,
    k: usize,
    used: &BTreeSet<String>,
) -> Option<Family> {
    let fresh = |w: &String| is_simple(w) && !used.contains(w);
    if used.contains(head) {
        return None;
    }
    let antonym = lex
        .antonyms(head, pos)
        .into_iter()
        .find(|w| fresh(w) && w != head)?;
    let taken: BTreeSet<&str> = [head, antonym.as_str()].into();
    let syn_h: Vec<String> = lex
        .synonyms(head, pos)
        .into_iter()
        .filter(|w| fresh(w) && !taken.contains(w.as_str()))
        .take(k)
        .collect();
    let syn_a: Vec<String> = lex
        .synonyms(&antonym, pos)
        .into_iter()
        .filter(|w| fresh(w) && !taken.contains(w.as_str()) && !syn_h.contains(w))
        .take(k)
        .collect();
    if syn_h.is_empty() {
        return None;
    }
    Some(Family {
        pos,
        positive: std::iter::once(head.to_string()).chain(syn_h).collect(),
        negative: std::iter::once(antonym).chain(syn_a).collect(),
        topic: 0,
    })
}
