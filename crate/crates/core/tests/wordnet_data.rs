mod common;

use std::collections::{BTreeSet, HashSet};
use std::fs;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use semcontrast_core::rng;
use semcontrast_core::wordnet::{is_single_word, Lexicon, Pos};

use common::{lexicon, wordnet_dir};

/// Lines of a WordNet file that are not part of the license header.
fn content_lines(name: &str) -> usize {
    let text = fs::read_to_string(wordnet_dir().join(name)).unwrap();
    text.lines()
        .filter(|l| !l.starts_with("  ") && !l.is_empty())
        .count()
}

#[test]
fn entry_counts_match_line_counts() {
    let lex = lexicon();
    for pos in Pos::ALL {
        let stem = pos.file_stem();
        assert_eq!(
            lex.index_len(pos),
            content_lines(&format!("index.{stem}")),
            "index.{stem}"
        );
        assert_eq!(
            lex.synset_count(pos),
            content_lines(&format!("data.{stem}")),
            "data.{stem}"
        );
        // noun.exc repeats a few inflected forms on separate lines; they merge
        let text = fs::read_to_string(wordnet_dir().join(format!("{stem}.exc"))).unwrap();
        let forms: HashSet<&str> = text
            .lines()
            .filter_map(|l| l.split_whitespace().next())
            .collect();
        assert_eq!(lex.exception_len(pos), forms.len(), "{stem}.exc");
    }
}

#[test]
fn published_sizes() {
    // WordNet 3.0 statistics: synsets per part of speech
    let lex = lexicon();
    assert_eq!(lex.synset_count(Pos::Noun), 82_115);
    assert_eq!(lex.synset_count(Pos::Verb), 13_767);
    assert_eq!(lex.synset_count(Pos::Adj), 18_156);
    assert_eq!(lex.synset_count(Pos::Adv), 3_621);
}

#[test]
fn database_is_internally_consistent() {
    let problems = lexicon().validate();
    assert!(
        problems.is_empty(),
        "{:?}",
        &problems[..problems.len().min(10)]
    );
}

fn with_antonyms(lex: &Lexicon, pos: Pos) -> Vec<&str> {
    lex.lemmas(pos)
        .filter(|l| is_single_word(l) && !lex.antonyms(l, pos).is_empty())
        .collect()
}

#[test]
fn antonymy_is_symmetric_on_a_random_sample() {
    let lex = lexicon();
    let mut r = rng::derive(2024, &[]);
    for pos in Pos::ALL {
        let mut pool = with_antonyms(lex, pos);
        assert!(
            pool.len() >= 100,
            "{pos}: only {} antonym-bearing lemmas",
            pool.len()
        );
        pool.shuffle(&mut r);
        for &a in &pool[..100] {
            let ants = lex.antonyms(a, pos);
            for b in &ants {
                assert!(
                    lex.antonyms(b, pos).contains(a),
                    "{pos}: {a} -> {b} has no way back"
                );
            }
        }
    }
}

#[test]
fn antonymy_is_symmetric_everywhere() {
    let lex = lexicon();
    for pos in Pos::ALL {
        for a in with_antonyms(lex, pos) {
            for b in lex.antonyms(a, pos) {
                assert!(lex.antonyms(&b, pos).contains(a), "{pos}: {a} -> {b}");
            }
        }
    }
}

#[test]
fn one_directional_pointers_are_closed() {
    // data.verb lists centralise -> decentralise but not the reverse
    let lex = lexicon();
    assert!(lex
        .antonyms("centralise", Pos::Verb)
        .contains("decentralise"));
    assert!(lex
        .antonyms("decentralise", Pos::Verb)
        .contains("centralise"));
}

#[test]
fn fictional_has_antonyms() {
    let lex = lexicon();
    let ants = lex.antonyms("fictional", Pos::Adj);
    assert!(!ants.is_empty());
    let synset = lex
        .synset_offsets("fictional", Pos::Adj)
        .iter()
        .filter_map(|&o| lex.synset(Pos::Adj, o))
        .find(|s| s.pointers.iter().any(|p| p.symbol == "!"));
    assert!(
        synset.is_some(),
        "a sense of `fictional` carries an antonym pointer"
    );
}

#[test]
fn reference_lookups() {
    let lex = lexicon();
    assert!(lex.antonyms("good", Pos::Adj).contains("bad"));
    assert!(lex.antonyms("bad", Pos::Adj).contains("good"));
    assert!(lex.synonyms("movie", Pos::Noun).contains("film"));
    assert!(lex.synonyms("film", Pos::Noun).contains("movie"));
    assert!(lex.hypernyms("dog", Pos::Noun).contains("canine"));
    assert!(lex.hypernyms("good", Pos::Adj).is_empty());
    assert!(lex.morph_variants("child", Pos::Noun).contains("children"));
    let walk = lex.morph_variants("walk", Pos::Verb);
    for form in ["walks", "walked", "walking"] {
        assert!(walk.contains(form), "{form}");
    }
    for pos in Pos::ALL {
        assert!(lex.synonyms("zzqx", pos).is_empty());
        assert!(lex.antonyms("zzqx", pos).is_empty());
        assert!(lex.hypernyms("zzqx", pos).is_empty());
        assert!(lex.morph_variants("zzqx", pos).is_empty());
    }
}

#[test]
fn noun_hypernym_chains_terminate() {
    let lex = lexicon();
    let mut nouns: Vec<&str> = lex.lemmas(Pos::Noun).collect();
    nouns.shuffle(&mut rng::derive(7, &[]));
    for lemma in &nouns[..50] {
        let mut frontier: BTreeSet<u32> = lex
            .synset_offsets(lemma, Pos::Noun)
            .iter()
            .copied()
            .collect();
        let mut depth = 0;
        while !frontier.is_empty() {
            assert!(depth < 30, "{lemma}: hypernym chain longer than 30");
            frontier = frontier
                .iter()
                .filter_map(|&o| lex.synset(Pos::Noun, o))
                .flat_map(|s| s.pointers.iter())
                .filter(|p| (p.symbol == "@" || p.symbol == "@i") && p.target_pos == Pos::Noun)
                .map(|p| p.target)
                .collect();
            depth += 1;
        }
    }
}

#[test]
fn loading_is_deterministic() {
    let again = Lexicon::load(wordnet_dir()).unwrap();
    assert!(&again == lexicon());
}

#[test]
fn multiword_lemmas_never_surface() {
    let lex = lexicon();
    for pos in Pos::ALL {
        for l in lex.lemmas(pos).step_by(97) {
            for set in [
                lex.synonyms(l, pos),
                lex.antonyms(l, pos),
                lex.hypernyms(l, pos),
            ] {
                assert!(set.iter().all(|w| is_single_word(w)), "{pos} {l}: {set:?}");
            }
        }
    }
}

fn pos_strategy() -> impl Strategy<Value = Pos> {
    prop::sample::select(Pos::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn synonyms_exclude_the_query(pos in pos_strategy(), pick in any::<prop::sample::Index>()) {
        let lex = lexicon();
        let lemmas: Vec<&str> = lex.lemmas(pos).collect();
        let lemma = lemmas[pick.index(lemmas.len())];
        let syns = lex.synonyms(lemma, pos);
        prop_assert!(!syns.contains(lemma));
        // shared-synset symmetry; multiword lemmas are never returned, so
        // only single-word queries can be found again
        for s in syns.iter().filter(|_| is_single_word(lemma)) {
            prop_assert!(lex.synonyms(s, pos).contains(lemma), "{} -> {}", lemma, s);
        }
    }

    #[test]
    fn index_entries_resolve(pos in pos_strategy(), pick in any::<prop::sample::Index>()) {
        let lex = lexicon();
        let lemmas: Vec<&str> = lex.lemmas(pos).collect();
        let lemma = lemmas[pick.index(lemmas.len())];
        let offsets: HashSet<u32> = lex.synset_offsets(lemma, pos).iter().copied().collect();
        prop_assert!(!offsets.is_empty());
        for o in offsets {
            let s = lex.synset(pos, o).expect("indexed synset exists");
            prop_assert!(s.lemmas.iter().any(|l| l == lemma));
        }
    }
}
