//! Reader for the WordNet 3.0 flat-file database and the lexical relations
//! used to build perturbations.
//!
//! Only the structure is loaded: synset membership, pointers and the
//! morphological exception lists. Glosses and verb frames are skipped.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::ops::{Index, IndexMut};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pos {
    Noun,
    Verb,
    Adj,
    Adv,
}

impl Pos {
    pub const ALL: [Pos; 4] = [Pos::Noun, Pos::Verb, Pos::Adj, Pos::Adv];

    /// Suffix of the database files for this part of speech.
    pub fn file_stem(self) -> &'static str {
        match self {
            Pos::Noun => "noun",
            Pos::Verb => "verb",
            Pos::Adj => "adj",
            Pos::Adv => "adv",
        }
    }

    /// Parses the one-letter codes used in index and data files. Adjective
    /// satellites (`s`) fold into [`Pos::Adj`].
    pub fn from_code(code: &str) -> Option<Pos> {
        match code {
            "n" => Some(Pos::Noun),
            "v" => Some(Pos::Verb),
            "a" | "s" => Some(Pos::Adj),
            "r" => Some(Pos::Adv),
            _ => None,
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

impl FromStr for Pos {
    type Err = Error;

    fn from_str(s: &str) -> Result<Pos> {
        Pos::ALL
            .into_iter()
            .find(|p| p.file_stem() == s)
            .or_else(|| Pos::from_code(s))
            .ok_or_else(|| Error::Input(format!("unknown part of speech `{s}`")))
    }
}

/// One value per part of speech.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PerPos<T>([T; 4]);

impl<T> Index<Pos> for PerPos<T> {
    type Output = T;
    fn index(&self, pos: Pos) -> &T {
        &self.0[pos.slot()]
    }
}

impl<T> IndexMut<Pos> for PerPos<T> {
    fn index_mut(&mut self, pos: Pos) -> &mut T {
        &mut self.0[pos.slot()]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pointer {
    pub symbol: String,
    pub target: u32,
    pub target_pos: Pos,
    /// 1-based word number in the source synset, 0 for a semantic pointer.
    pub source_word: u16,
    /// 1-based word number in the target synset, 0 for a semantic pointer.
    pub target_word: u16,
}

impl Pointer {
    fn applies_to(&self, word_number: u16) -> bool {
        self.source_word == 0 || self.source_word == word_number
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Synset {
    pub offset: u32,
    pub pos: Pos,
    /// Lowercased, with adjective position markers such as `(a)` removed.
    pub lemmas: Vec<String>,
    pub pointers: Vec<Pointer>,
}

impl Synset {
    fn word_number(&self, lemma: &str) -> Option<u16> {
        self.lemmas
            .iter()
            .position(|l| l == lemma)
            .map(|i| (i + 1) as u16)
    }
}

const ANTONYM: &str = "!";
const HYPERNYMS: [&str; 2] = ["@", "@i"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    synsets: PerPos<HashMap<u32, Synset>>,
    index: PerPos<BTreeMap<String, Vec<u32>>>,
    exceptions: PerPos<BTreeMap<String, Vec<String>>>,
    inflections: PerPos<BTreeMap<String, BTreeSet<String>>>,
    /// Target lemma to the lemmas whose antonym pointers reach it.
    antonym_sources: PerPos<BTreeMap<String, BTreeSet<String>>>,
}

impl Lexicon {
    /// Loads `index.*`, `data.*` and `*.exc` for all four parts of speech.
    pub fn load(dir: impl AsRef<Path>) -> Result<Lexicon> {
        let dir = dir.as_ref();
        let mut lex = Lexicon::default();
        for pos in Pos::ALL {
            let stem = pos.file_stem();
            lex.index[pos] = parse_index(&read(dir, &format!("index.{stem}"))?, stem)?;
            lex.synsets[pos] = parse_data(&read(dir, &format!("data.{stem}"))?, stem)?;
            lex.exceptions[pos] = parse_exceptions(&read(dir, &format!("{stem}.exc"))?, stem)?;
        }
        for pos in Pos::ALL {
            let mut inflections: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
            for (inflected, bases) in &lex.exceptions[pos] {
                for base in bases {
                    inflections
                        .entry(base.clone())
                        .or_default()
                        .insert(inflected.clone());
                }
            }
            lex.inflections[pos] = inflections;
        }
        lex.antonym_sources = reverse_antonyms(&lex.synsets);
        Ok(lex)
    }

    pub fn synset(&self, pos: Pos, offset: u32) -> Option<&Synset> {
        self.synsets[pos].get(&offset)
    }

    pub fn synset_offsets(&self, lemma: &str, pos: Pos) -> &[u32] {
        self.index[pos].get(lemma).map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, lemma: &str, pos: Pos) -> bool {
        self.index[pos].contains_key(lemma)
    }

    /// Index lemmas for `pos` in lexicographic order.
    pub fn lemmas(&self, pos: Pos) -> impl Iterator<Item = &str> {
        self.index[pos].keys().map(String::as_str)
    }

    pub fn index_len(&self, pos: Pos) -> usize {
        self.index[pos].len()
    }

    pub fn synset_count(&self, pos: Pos) -> usize {
        self.synsets[pos].len()
    }

    pub fn exception_len(&self, pos: Pos) -> usize {
        self.exceptions[pos].len()
    }

    /// Base lemmas listed for an irregular inflected form.
    pub fn exception_bases(&self, inflected: &str, pos: Pos) -> &[String] {
        self.exceptions[pos]
            .get(inflected)
            .map_or(&[], Vec::as_slice)
    }

    fn senses<'a>(&'a self, lemma: &'a str, pos: Pos) -> impl Iterator<Item = &'a Synset> + 'a {
        self.synset_offsets(lemma, pos)
            .iter()
            .filter_map(move |off| self.synsets[pos].get(off))
    }

    /// Co-members of every synset containing `lemma`.
    pub fn synonyms(&self, lemma: &str, pos: Pos) -> BTreeSet<String> {
        self.senses(lemma, pos)
            .flat_map(|s| s.lemmas.iter())
            .filter(|l| l.as_str() != lemma && is_single_word(l))
            .cloned()
            .collect()
    }

    /// Lemmas reached through antonym pointers from any sense of `lemma`,
    /// plus lemmas whose antonym pointers reach `lemma`. The few pointers
    /// WordNet lists in one direction only are thereby closed, so the
    /// relation is symmetric.
    pub fn antonyms(&self, lemma: &str, pos: Pos) -> BTreeSet<String> {
        let mut out = self.follow(lemma, pos, &[ANTONYM]);
        if let Some(sources) = self.antonym_sources[pos].get(lemma) {
            out.extend(
                sources
                    .iter()
                    .filter(|l| l.as_str() != lemma && is_single_word(l))
                    .cloned(),
            );
        }
        out
    }

    /// Lemmas of the direct (and instance) hypernyms of every sense.
    pub fn hypernyms(&self, lemma: &str, pos: Pos) -> BTreeSet<String> {
        self.follow(lemma, pos, &HYPERNYMS)
    }

    /// Inflected forms: reverse lookups in the exception list plus regular
    /// suffix rules. Empty when `lemma` is not in the index for `pos`.
    pub fn morph_variants(&self, lemma: &str, pos: Pos) -> BTreeSet<String> {
        if !self.contains(lemma, pos) {
            return BTreeSet::new();
        }
        let mut out: BTreeSet<String> = self.inflections[pos]
            .get(lemma)
            .cloned()
            .unwrap_or_default();
        if is_single_word(lemma) {
            out.extend(regular_inflections(lemma, pos));
        }
        out.retain(|f| f != lemma && is_single_word(f));
        out
    }

    fn follow(&self, lemma: &str, pos: Pos, symbols: &[&str]) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for synset in self.senses(lemma, pos) {
            let Some(word) = synset.word_number(lemma) else {
                continue;
            };
            for ptr in &synset.pointers {
                if !symbols.contains(&ptr.symbol.as_str()) || !ptr.applies_to(word) {
                    continue;
                }
                let Some(target) = self.synset(ptr.target_pos, ptr.target) else {
                    continue;
                };
                if ptr.target_word == 0 {
                    out.extend(target.lemmas.iter().cloned());
                } else if let Some(l) = target.lemmas.get(ptr.target_word as usize - 1) {
                    out.insert(l.clone());
                }
            }
        }
        out.retain(|l| l != lemma && is_single_word(l));
        out
    }

    /// Checks that every pointer target exists and that every index entry
    /// names synsets which list the lemma. Returns one message per problem.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        for pos in Pos::ALL {
            for synset in self.synsets[pos].values() {
                for ptr in &synset.pointers {
                    if self.synset(ptr.target_pos, ptr.target).is_none() {
                        problems.push(format!(
                            "{pos} {:08}: dangling pointer {} -> {} {:08}",
                            synset.offset, ptr.symbol, ptr.target_pos, ptr.target
                        ));
                    }
                }
            }
            for (lemma, offsets) in &self.index[pos] {
                for off in offsets {
                    match self.synset(pos, *off) {
                        Some(s) if s.lemmas.contains(lemma) => {}
                        Some(_) => problems.push(format!("{pos} `{lemma}` not in synset {off:08}")),
                        None => {
                            problems.push(format!("{pos} `{lemma}` names missing synset {off:08}"))
                        }
                    }
                }
            }
        }
        problems
    }
}

fn reverse_antonyms(
    synsets: &PerPos<HashMap<u32, Synset>>,
) -> PerPos<BTreeMap<String, BTreeSet<String>>> {
    let mut out: PerPos<BTreeMap<String, BTreeSet<String>>> = PerPos::default();
    for pos in Pos::ALL {
        for synset in synsets[pos].values() {
            for ptr in synset.pointers.iter().filter(|p| p.symbol == ANTONYM) {
                let Some(target) = synsets[ptr.target_pos].get(&ptr.target) else {
                    continue;
                };
                let pick = |lemmas: &[String], word: u16| -> Vec<String> {
                    match word {
                        0 => lemmas.to_vec(),
                        w => lemmas.get(w as usize - 1).cloned().into_iter().collect(),
                    }
                };
                for t in pick(&target.lemmas, ptr.target_word) {
                    out[ptr.target_pos]
                        .entry(t)
                        .or_default()
                        .extend(pick(&synset.lemmas, ptr.source_word));
                }
            }
        }
    }
    out
}

pub fn is_single_word(lemma: &str) -> bool {
    !lemma.is_empty() && !lemma.contains('_')
}

fn ends_sibilant(w: &str) -> bool {
    ["s", "x", "z", "ch", "sh"].iter().any(|s| w.ends_with(s))
}

fn consonant_y(w: &str) -> bool {
    let b = w.as_bytes();
    b.len() >= 2 && b[b.len() - 1] == b'y' && !b"aeiou".contains(&b[b.len() - 2])
}

fn plural_s(w: &str) -> String {
    if consonant_y(w) {
        format!("{}ies", &w[..w.len() - 1])
    } else if ends_sibilant(w) {
        format!("{w}es")
    } else {
        format!("{w}s")
    }
}

fn regular_inflections(w: &str, pos: Pos) -> Vec<String> {
    match pos {
        Pos::Noun => vec![plural_s(w)],
        Pos::Verb => {
            let stem_e = w.ends_with('e') && !w.ends_with("ee");
            let past = if w.ends_with('e') {
                format!("{w}d")
            } else if consonant_y(w) {
                format!("{}ied", &w[..w.len() - 1])
            } else {
                format!("{w}ed")
            };
            let gerund = if stem_e {
                format!("{}ing", &w[..w.len() - 1])
            } else {
                format!("{w}ing")
            };
            vec![plural_s(w), past, gerund]
        }
        Pos::Adj | Pos::Adv => Vec::new(),
    }
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|e| Error::io(path, e))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.starts_with("  ") && !l.trim().is_empty())
}

struct Fields<'a> {
    file: &'a str,
    line: usize,
    iter: std::str::SplitWhitespace<'a>,
}

impl<'a> Fields<'a> {
    fn new(file: &'a str, line: usize, text: &'a str) -> Self {
        Fields {
            file,
            line,
            iter: text.split_whitespace(),
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.file, self.line, msg)
    }

    fn next(&mut self, what: &str) -> Result<&'a str> {
        self.iter
            .next()
            .ok_or_else(|| self.err(format!("missing {what}")))
    }

    fn num<T: FromStr>(&mut self, what: &str) -> Result<T> {
        let tok = self.next(what)?;
        tok.parse()
            .map_err(|_| self.err(format!("bad {what} `{tok}`")))
    }

    fn hex(&mut self, what: &str) -> Result<u32> {
        let tok = self.next(what)?;
        u32::from_str_radix(tok, 16).map_err(|_| self.err(format!("bad {what} `{tok}`")))
    }

    fn pos(&mut self) -> Result<Pos> {
        let tok = self.next("part of speech")?;
        Pos::from_code(tok).ok_or_else(|| self.err(format!("bad part of speech `{tok}`")))
    }
}

fn parse_index(text: &str, stem: &str) -> Result<BTreeMap<String, Vec<u32>>> {
    let file = format!("index.{stem}");
    let mut out = BTreeMap::new();
    for (line, l) in content_lines(text) {
        let mut f = Fields::new(&file, line, l);
        let lemma = f.next("lemma")?.to_string();
        f.pos()?;
        let synset_cnt: usize = f.num("synset_cnt")?;
        let p_cnt: usize = f.num("p_cnt")?;
        for _ in 0..p_cnt {
            f.next("pointer symbol")?;
        }
        f.num::<usize>("sense_cnt")?;
        f.num::<usize>("tagsense_cnt")?;
        let offsets = (0..synset_cnt)
            .map(|_| f.num::<u32>("synset_offset"))
            .collect::<Result<Vec<_>>>()?;
        if out.insert(lemma, offsets).is_some() {
            return Err(f.err("duplicate index entry"));
        }
    }
    Ok(out)
}

fn clean_lemma(word: &str) -> String {
    let word = match word.find('(') {
        Some(i) if word.ends_with(')') => &word[..i],
        _ => word,
    };
    word.to_lowercase()
}

fn parse_data(text: &str, stem: &str) -> Result<HashMap<u32, Synset>> {
    let file = format!("data.{stem}");
    let mut out = HashMap::new();
    for (line, l) in content_lines(text) {
        let head = l.split_once(" | ").map_or(l, |(h, _)| h);
        let mut f = Fields::new(&file, line, head);
        let offset: u32 = f.num("synset_offset")?;
        f.num::<u32>("lex_filenum")?;
        let pos = f.pos()?;
        let w_cnt = f.hex("w_cnt")?;
        let mut lemmas = Vec::with_capacity(w_cnt as usize);
        for _ in 0..w_cnt {
            lemmas.push(clean_lemma(f.next("word")?));
            f.hex("lex_id")?;
        }
        if lemmas.is_empty() {
            return Err(f.err("synset without words"));
        }
        let p_cnt: usize = f.num("p_cnt")?;
        let mut pointers = Vec::with_capacity(p_cnt);
        for _ in 0..p_cnt {
            let symbol = f.next("pointer symbol")?.to_string();
            let target: u32 = f.num("pointer offset")?;
            let target_pos = f.pos()?;
            let st = f.next("source/target")?;
            if st.len() != 4 {
                return Err(f.err(format!("bad source/target `{st}`")));
            }
            let parse = |s: &str| u16::from_str_radix(s, 16);
            let (Ok(source_word), Ok(target_word)) = (parse(&st[..2]), parse(&st[2..])) else {
                return Err(f.err(format!("bad source/target `{st}`")));
            };
            pointers.push(Pointer {
                symbol,
                target,
                target_pos,
                source_word,
                target_word,
            });
        }
        out.insert(
            offset,
            Synset {
                offset,
                pos,
                lemmas,
                pointers,
            },
        );
    }
    Ok(out)
}

fn parse_exceptions(text: &str, stem: &str) -> Result<BTreeMap<String, Vec<String>>> {
    let file = format!("{stem}.exc");
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (line, l) in content_lines(text) {
        let mut f = Fields::new(&file, line, l);
        let inflected = f.next("inflected form")?.to_string();
        let bases: Vec<String> = f.iter.by_ref().map(str::to_string).collect();
        if bases.is_empty() {
            return Err(f.err("exception without base form"));
        }
        out.entry(inflected).or_default().extend(bases);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const INDEX_ADJ: &str = "  1 header line\n\
good a 1 1 ! 1 0 00000010\n\
bad a 1 1 ! 1 0 00000020\n\
fine a 1 0 1 0 00000010\n";
    const DATA_ADJ: &str = "  1 header\n\
00000010 00 a 02 good 0 fine(a) 0 001 ! 00000020 a 0101 | having desirable qualities\n\
00000020 00 a 01 bad 0 001 ! 00000010 a 0101 | not good\n";

    fn tiny() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for pos in Pos::ALL {
            let s = pos.file_stem();
            let (idx, data) = if pos == Pos::Adj {
                (INDEX_ADJ, DATA_ADJ)
            } else {
                ("", "")
            };
            fs::write(dir.path().join(format!("index.{s}")), idx).unwrap();
            fs::write(dir.path().join(format!("data.{s}")), data).unwrap();
            fs::write(dir.path().join(format!("{s}.exc")), "").unwrap();
        }
        dir
    }

    #[test]
    fn parses_tiny_database() {
        let dir = tiny();
        let lex = Lexicon::load(dir.path()).unwrap();
        assert_eq!(lex.index_len(Pos::Adj), 3);
        assert_eq!(lex.exception_len(Pos::Noun), 0);
        assert!(lex.validate().is_empty());
        assert_eq!(lex.synset(Pos::Adj, 10).unwrap().lemmas, ["good", "fine"]);
        assert!(lex.antonyms("good", Pos::Adj).contains("bad"));
        assert!(lex.antonyms("bad", Pos::Adj).contains("good"));
        // lexical antonym pointer belongs to word 1 only
        assert!(lex.antonyms("fine", Pos::Adj).is_empty());
        assert_eq!(
            lex.synonyms("fine", Pos::Adj)
                .into_iter()
                .collect::<Vec<_>>(),
            ["good"]
        );
        assert!(lex.hypernyms("good", Pos::Adj).is_empty());
        assert!(lex.synonyms("zzqx", Pos::Adj).is_empty());
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tiny();
        fs::remove_file(dir.path().join("verb.exc")).unwrap();
        let err = Lexicon::load(dir.path()).unwrap_err().to_string();
        assert!(err.contains("verb.exc"), "{err}");
    }

    #[test]
    fn malformed_line_reports_position() {
        let dir = tiny();
        fs::write(dir.path().join("index.adv"), "  header\nquickly r x\n").unwrap();
        let err = Lexicon::load(dir.path()).unwrap_err().to_string();
        assert!(err.starts_with("index.adv:2:"), "{err}");
    }

    #[test]
    fn suffix_rules() {
        let forms = |w, pos| regular_inflections(w, pos);
        assert_eq!(forms("walk", Pos::Verb), ["walks", "walked", "walking"]);
        assert_eq!(forms("bake", Pos::Verb), ["bakes", "baked", "baking"]);
        assert_eq!(forms("agree", Pos::Verb), ["agrees", "agreed", "agreeing"]);
        assert_eq!(
            forms("carry", Pos::Verb),
            ["carries", "carried", "carrying"]
        );
        assert_eq!(forms("box", Pos::Noun), ["boxes"]);
        assert_eq!(forms("day", Pos::Noun), ["days"]);
        assert!(forms("quick", Pos::Adj).is_empty());
    }

    #[test]
    fn lemma_cleanup() {
        assert_eq!(clean_lemma("outback(a)"), "outback");
        assert_eq!(clean_lemma("Batman"), "batman");
        assert_eq!(clean_lemma("ready_to_hand(p)"), "ready_to_hand");
    }
}
