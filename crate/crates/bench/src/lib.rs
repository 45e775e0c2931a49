//! Benchmark fixtures: a small synthetic corpus over the shipped WordNet
//! database.

use std::path::PathBuf;

use semcontrast_core::perturb::{PerturbConfig, Perturber, TripletExample};
use semcontrast_core::synth::{SynthConfig, SynthWorld};
use semcontrast_core::textproc::{build_vocab, LexiconTagger, TaggedSentence, Vocab};
use semcontrast_core::wordnet::Lexicon;
use semcontrast_core::Result;

/// `SEMCONTRAST_WORDNET`, or the copy shipped under `data/wordnet`.
pub fn wordnet_dir() -> PathBuf {
    std::env::var_os("SEMCONTRAST_WORDNET")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/wordnet"))
}

pub struct Fixture {
    pub lexicon: Lexicon,
    pub corpus: Vec<TaggedSentence>,
    pub vocab: Vocab,
}

impl Fixture {
    pub fn load(sentences: usize) -> Result<Fixture> {
        let lexicon = Lexicon::load(wordnet_dir())?;
        let world = SynthWorld::build(&lexicon, SynthConfig::default())?;
        let corpus = world.corpus(sentences, 1);
        let mut vocab = build_vocab(corpus.iter().map(|s| s.tokens.join(" ")), 1, 100_000);
        vocab.assign_pools(&LexiconTagger {
            lexicon: &lexicon,
            model: None,
        });
        Ok(Fixture {
            lexicon,
            corpus,
            vocab,
        })
    }

    pub fn tagger(&self) -> LexiconTagger<'_> {
        LexiconTagger {
            lexicon: &self.lexicon,
            model: None,
        }
    }

    /// One training triplet per corpus sentence, from its gold tags.
    pub fn triplets(&self, tagger: &LexiconTagger<'_>) -> Vec<TripletExample> {
        let p = Perturber {
            lexicon: &self.lexicon,
            vocab: &self.vocab,
            tagger,
            config: PerturbConfig::default(),
        };
        self.corpus
            .iter()
            .enumerate()
            .map(|(i, s)| p.triplet_tagged(&s.tokens, &s.tags, i as u64))
            .collect()
    }
}
