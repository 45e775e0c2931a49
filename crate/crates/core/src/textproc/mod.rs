//! Tokenization, vocabulary and coarse part-of-speech tagging.

mod tagger;
mod tokenize;
mod vocab;

pub use tagger::{
    parse_tagged_line, train_tagger, CoarseTagger, LexiconTagger, Tag, TaggedSentence, TaggerModel,
};
pub use tokenize::tokenize;
pub use vocab::{build_vocab, Vocab, CLS, MASK, NUM_SPECIAL, PAD, SEP, UNK};
