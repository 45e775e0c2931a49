//! Shared fixtures: the WordNet database and the desk-scale synthetic setup.
#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use semcontrast_core::perturb::{PerturbConfig, Perturber};
use semcontrast_core::synth::{SynthConfig, SynthWorld};
use semcontrast_core::textproc::{
    build_vocab, train_tagger, LexiconTagger, TaggedSentence, TaggerModel, Vocab,
};
use semcontrast_core::wordnet::Lexicon;

/// `SEMCONTRAST_WORDNET`, or the copy shipped under `data/wordnet`.
pub fn wordnet_dir() -> PathBuf {
    std::env::var_os("SEMCONTRAST_WORDNET")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/wordnet"))
}

pub fn lexicon() -> &'static Lexicon {
    static CELL: OnceLock<Lexicon> = OnceLock::new();
    CELL.get_or_init(|| Lexicon::load(wordnet_dir()).expect("WordNet database loads"))
}

/// Corpora, tagger and vocabulary of the desk-scale experiments.
pub struct Desk {
    pub world: SynthWorld,
    pub corpus: Vec<TaggedSentence>,
    pub heldout: Vec<TaggedSentence>,
    pub tagger_model: TaggerModel,
    pub vocab: Vocab,
}

pub const CORPUS_SIZE: usize = 5000;
pub const HELDOUT_SIZE: usize = 1500;
pub const TAGGED_SIZE: usize = 2000;

pub fn desk() -> &'static Desk {
    static CELL: OnceLock<Desk> = OnceLock::new();
    CELL.get_or_init(|| {
        let lex = lexicon();
        let world = SynthWorld::build(lex, SynthConfig::default()).expect("word families");
        let corpus = world.corpus(CORPUS_SIZE, 1);
        let heldout = world.corpus(HELDOUT_SIZE, 2);
        let tagger_model =
            train_tagger(&world.corpus(TAGGED_SIZE, 3), 5, 0).expect("tagger trains");
        let mut vocab = build_vocab(corpus.iter().map(|s| s.tokens.join(" ")), 1, 100_000);
        vocab.assign_pools(&LexiconTagger {
            lexicon: lex,
            model: Some(&tagger_model),
        });
        Desk {
            world,
            corpus,
            heldout,
            tagger_model,
            vocab,
        }
    })
}

impl Desk {
    pub fn tagger(&self) -> LexiconTagger<'_> {
        LexiconTagger {
            lexicon: lexicon(),
            model: Some(&self.tagger_model),
        }
    }

    pub fn heldout_lines(&self) -> Vec<String> {
        self.heldout.iter().map(|s| s.tokens.join(" ")).collect()
    }
}

/// Perturber over the desk vocabulary; `tagger` must outlive it.
pub fn perturber<'a>(
    desk: &'a Desk,
    tagger: &'a LexiconTagger<'a>,
    config: PerturbConfig,
) -> Perturber<'a> {
    Perturber {
        lexicon: lexicon(),
        vocab: &desk.vocab,
        tagger,
        config,
    }
}
