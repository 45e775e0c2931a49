//! Loading the files commands share.

use std::path::Path;

use anyhow::{Context, Result};
use semcontrast_core::persist::{labeled_from_tsv, read_text, tagger_from_text, vocab_from_text};
use semcontrast_core::textproc::{TaggerModel, Vocab};
use semcontrast_core::trainer::LabeledExample;
use semcontrast_core::wordnet::Lexicon;

pub fn lexicon(dir: &Path) -> Result<Lexicon> {
    Lexicon::load(dir).with_context(|| format!("loading WordNet from {}", dir.display()))
}

pub fn vocab(path: &Path) -> Result<Vocab> {
    Ok(vocab_from_text(
        &read_text(path)?,
        &path.display().to_string(),
    )?)
}

pub fn tagger(path: &Path) -> Result<TaggerModel> {
    Ok(tagger_from_text(
        &read_text(path)?,
        &path.display().to_string(),
    )?)
}

/// Non-blank lines, trimmed.
pub fn lines(path: &Path) -> Result<Vec<String>> {
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

pub fn labeled(path: &Path) -> Result<Vec<LabeledExample>> {
    Ok(labeled_from_tsv(
        &read_text(path)?,
        &path.display().to_string(),
    )?)
}
