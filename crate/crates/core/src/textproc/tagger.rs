//! Greedy averaged-perceptron tagger over a five-tag coarse inventory.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;
use crate::wordnet::{Lexicon, Pos};

/// Coarse tags, declared in lexicographic order of their names so that
/// `Ord` doubles as the tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    Adj,
    Adv,
    Noun,
    Other,
    Verb,
}

impl Tag {
    pub const ALL: [Tag; 5] = [Tag::Adj, Tag::Adv, Tag::Noun, Tag::Other, Tag::Verb];

    pub fn name(self) -> &'static str {
        match self {
            Tag::Adj => "ADJ",
            Tag::Adv => "ADV",
            Tag::Noun => "NOUN",
            Tag::Other => "OTHER",
            Tag::Verb => "VERB",
        }
    }

    /// WordNet part of speech for content tags.
    pub fn pos(self) -> Option<Pos> {
        match self {
            Tag::Noun => Some(Pos::Noun),
            Tag::Verb => Some(Pos::Verb),
            Tag::Adj => Some(Pos::Adj),
            Tag::Adv => Some(Pos::Adv),
            Tag::Other => None,
        }
    }

    pub fn from_pos(pos: Pos) -> Tag {
        match pos {
            Pos::Noun => Tag::Noun,
            Pos::Verb => Tag::Verb,
            Pos::Adj => Tag::Adj,
            Pos::Adv => Tag::Adv,
        }
    }

    pub fn is_content(self) -> bool {
        self != Tag::Other
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Tag> {
        Tag::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown tag `{s}`")))
    }
}

pub trait CoarseTagger {
    fn tag(&self, tokens: &[String]) -> Vec<Tag>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggedSentence {
    pub tokens: Vec<String>,
    pub tags: Vec<Tag>,
}

impl TaggedSentence {
    /// The `word/TAG word/TAG ...` form read by [`parse_tagged_line`].
    pub fn to_line(&self) -> String {
        self.tokens
            .iter()
            .zip(&self.tags)
            .map(|(w, t)| format!("{w}/{t}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Parses a `word/TAG word/TAG ...` line.
///
/// The split happens at the last `/` of each item, so words may contain
/// slashes.
pub fn parse_tagged_line(line: &str) -> Result<TaggedSentence> {
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    for item in line.split_whitespace() {
        let (word, tag) = item
            .rsplit_once('/')
            .filter(|(w, _)| !w.is_empty())
            .ok_or_else(|| Error::Input(format!("`{item}` is not word/TAG")))?;
        tokens.push(word.to_string());
        tags.push(tag.parse()?);
    }
    Ok(TaggedSentence { tokens, tags })
}

type Scores = [f64; 5];

/// Averaged perceptron weights: feature name to one weight per tag.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaggerModel {
    weights: HashMap<String, Scores>,
}

const START: &str = "-START-";
const END: &str = "-END-";

fn features(tokens: &[String], i: usize, prev_tag: Option<Tag>) -> Vec<String> {
    let raw = &tokens[i];
    let word = raw.to_lowercase();
    let chars: Vec<char> = word.chars().collect();
    let mut f = Vec::with_capacity(10);
    f.push("bias".to_string());
    f.push(format!("w={word}"));
    for n in 1..=3 {
        if chars.len() >= n {
            let suffix: String = chars[chars.len() - n..].iter().collect();
            f.push(format!("s{n}={suffix}"));
        }
    }
    let prev = if i == 0 {
        START.to_string()
    } else {
        tokens[i - 1].to_lowercase()
    };
    let next = tokens
        .get(i + 1)
        .map_or(END.to_string(), |t| t.to_lowercase());
    f.push(format!("pw={prev}"));
    f.push(format!("nw={next}"));
    f.push(format!("pt={}", prev_tag.map_or(START, Tag::name)));
    if raw.chars().next().is_some_and(char::is_uppercase) {
        f.push("cap".to_string());
    }
    if !chars.is_empty() && chars.iter().all(char::is_ascii_digit) {
        f.push("digit".to_string());
    }
    f
}

fn argmax(scores: &Scores) -> Tag {
    let mut best = Tag::ALL[0];
    for tag in Tag::ALL {
        if scores[tag.slot()] > scores[best.slot()] {
            best = tag;
        }
    }
    best
}

impl TaggerModel {
    pub fn from_weights(weights: HashMap<String, Scores>) -> Result<TaggerModel> {
        if weights.values().flatten().any(|w| !w.is_finite()) {
            return Err(Error::Input("tagger weights must be finite".into()));
        }
        Ok(TaggerModel { weights })
    }

    pub fn weights(&self) -> &HashMap<String, Scores> {
        &self.weights
    }

    fn score(&self, feats: &[String]) -> Scores {
        let mut s = [0.0; 5];
        for f in feats {
            if let Some(w) = self.weights.get(f) {
                for (acc, x) in s.iter_mut().zip(w) {
                    *acc += x;
                }
            }
        }
        s
    }

    pub fn tag_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<Tag> {
        let tokens: Vec<String> = tokens.iter().map(|t| t.as_ref().to_string()).collect();
        let mut out = Vec::with_capacity(tokens.len());
        for i in 0..tokens.len() {
            let tag = argmax(&self.score(&features(&tokens, i, out.last().copied())));
            out.push(tag);
        }
        out
    }

    /// Number of mistagged tokens over `corpus`.
    pub fn errors(&self, corpus: &[TaggedSentence]) -> usize {
        corpus
            .iter()
            .map(|s| {
                self.tag_tokens(&s.tokens)
                    .iter()
                    .zip(&s.tags)
                    .filter(|(a, b)| a != b)
                    .count()
            })
            .sum()
    }

    pub fn accuracy(&self, corpus: &[TaggedSentence]) -> f64 {
        let total: usize = corpus.iter().map(|s| s.tokens.len()).sum();
        if total == 0 {
            return 0.0;
        }
        1.0 - self.errors(corpus) as f64 / total as f64
    }
}

impl CoarseTagger for TaggerModel {
    fn tag(&self, tokens: &[String]) -> Vec<Tag> {
        self.tag_tokens(tokens)
    }
}

#[derive(Default)]
struct Trainer {
    weights: HashMap<String, Scores>,
    totals: HashMap<String, Scores>,
    stamps: HashMap<String, [u64; 5]>,
    instances: u64,
}

impl Trainer {
    fn bump(&mut self, feat: &str, tag: Tag, delta: f64) {
        let i = tag.slot();
        let w = self.weights.entry(feat.to_string()).or_default();
        let total = self.totals.entry(feat.to_string()).or_default();
        let stamp = self.stamps.entry(feat.to_string()).or_default();
        total[i] += (self.instances - stamp[i]) as f64 * w[i];
        stamp[i] = self.instances;
        w[i] += delta;
    }

    fn update(&mut self, truth: Tag, guess: Tag, feats: &[String]) {
        self.instances += 1;
        if truth == guess {
            return;
        }
        for f in feats {
            self.bump(f, truth, 1.0);
            self.bump(f, guess, -1.0);
        }
    }

    fn averaged(mut self) -> TaggerModel {
        let n = self.instances.max(1) as f64;
        let mut weights = HashMap::with_capacity(self.weights.len());
        for (feat, w) in self.weights.drain() {
            let total = self.totals[&feat];
            let stamp = self.stamps[&feat];
            let mut avg = [0.0; 5];
            for i in 0..5 {
                let t = total[i] + (self.instances - stamp[i]) as f64 * w[i];
                avg[i] = t / n;
            }
            if avg.iter().any(|&x| x != 0.0) {
                weights.insert(feat, avg);
            }
        }
        TaggerModel { weights }
    }
}

/// Trains with greedy left-to-right decoding, where the previous-tag feature
/// uses the model's own prediction. Sentences are shuffled every epoch by a
/// stream derived from `seed`.
pub fn train_tagger(corpus: &[TaggedSentence], epochs: usize, seed: u64) -> Result<TaggerModel> {
    if corpus.iter().all(|s| s.tokens.is_empty()) {
        return Err(Error::Input("tagged corpus is empty".into()));
    }
    if let Some(s) = corpus.iter().find(|s| s.tokens.len() != s.tags.len()) {
        return Err(Error::Input(format!(
            "sentence has {} tokens but {} tags",
            s.tokens.len(),
            s.tags.len()
        )));
    }
    let mut trainer = Trainer::default();
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for epoch in 0..epochs {
        order.shuffle(&mut rng::derive(
            seed,
            &[rng::stream::SHUFFLE, epoch as u64],
        ));
        for &si in &order {
            let sent = &corpus[si];
            let mut prev = None;
            for i in 0..sent.tokens.len() {
                let feats = features(&sent.tokens, i, prev);
                let mut scores = [0.0; 5];
                for f in &feats {
                    if let Some(w) = trainer.weights.get(f) {
                        for (acc, x) in scores.iter_mut().zip(w) {
                            *acc += x;
                        }
                    }
                }
                let guess = argmax(&scores);
                trainer.update(sent.tags[i], guess, &feats);
                prev = Some(guess);
            }
        }
    }
    Ok(trainer.averaged())
}

/// Tags a token by WordNet lookup when it appears in exactly one
/// part-of-speech index, and defers to the perceptron otherwise.
pub struct LexiconTagger<'a> {
    pub lexicon: &'a Lexicon,
    pub model: Option<&'a TaggerModel>,
}

impl LexiconTagger<'_> {
    fn lookup(&self, token: &str) -> Option<Tag> {
        let token = token.to_lowercase();
        let mut hits = Pos::ALL
            .into_iter()
            .filter(|&p| self.lexicon.contains(&token, p));
        match (hits.next(), hits.next()) {
            (Some(p), None) => Some(Tag::from_pos(p)),
            _ => None,
        }
    }
}

impl CoarseTagger for LexiconTagger<'_> {
    fn tag(&self, tokens: &[String]) -> Vec<Tag> {
        let fallback = self.model.map(|m| m.tag_tokens(tokens));
        tokens
            .iter()
            .enumerate()
            .map(|(i, t)| {
                self.lookup(t)
                    .unwrap_or_else(|| fallback.as_ref().map_or(Tag::Other, |f| f[i]))
            })
            .collect()
    }
}
