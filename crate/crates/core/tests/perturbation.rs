mod common;

use proptest::prelude::*;
use semcontrast_core::perturb::{
    diff_mask, generate_ant, generate_syn, replacement_cap, select_candidates, PerturbConfig,
};
use semcontrast_core::rng;
use semcontrast_core::textproc::{tokenize, CoarseTagger, Tag};
use semcontrast_core::wordnet::Pos;

use common::{desk, lexicon, perturber};

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

#[test]
fn fictional_becomes_an_antonym() {
    let lex = lexicon();
    let d = desk();
    let tokens = words("batman is an fictional super-hero written by");
    let mut tags = vec![Tag::Other; tokens.len()];
    tags[3] = Tag::Adj;
    let cfg = PerturbConfig {
        ant_rate: 0.1,
        in_vocab_only: false,
        allow_random_fallback: false,
        ..PerturbConfig::default()
    };
    let ants = lex.antonyms("fictional", Pos::Adj);
    for seed in 0..20 {
        let (out, delta) = generate_ant(
            &tokens,
            &tags,
            lex,
            &d.vocab,
            &cfg,
            &mut rng::derive(seed, &[]),
        );
        assert_eq!(delta, [0, 0, 0, 1, 0, 0, 0]);
        assert!(
            ants.contains(&out[3]),
            "{} is not an antonym of fictional",
            out[3]
        );
        assert_eq!(&out[..3], &tokens[..3]);
        assert_eq!(&out[4..], &tokens[4..]);
    }
}

#[test]
fn zero_antonym_rate_leaves_the_copy_untouched() {
    let d = desk();
    let tagger = d.tagger();
    let p = perturber(
        d,
        &tagger,
        PerturbConfig {
            ant_rate: 0.0,
            ..PerturbConfig::default()
        },
    );
    for (i, s) in d.heldout_lines().iter().take(200).enumerate() {
        let t = p.triplet(s, i as u64);
        assert_eq!(t.tokens_ant, t.tokens_ori);
        assert!(t.delta_ant.iter().all(|&b| b == 0));
    }
}

#[test]
fn sentences_without_content_words_are_copied() {
    let d = desk();
    let tokens = words("the of and a");
    let tags = vec![Tag::Other; 4];
    let cfg = PerturbConfig::default();
    let mut r = rng::derive(1, &[]);
    assert_eq!(
        generate_syn(&tokens, &tags, lexicon(), &d.vocab, &cfg, &mut r),
        (tokens.clone(), vec![0; 4])
    );
    assert_eq!(
        generate_ant(&tokens, &tags, lexicon(), &d.vocab, &cfg, &mut r),
        (tokens, vec![0; 4])
    );
}

#[test]
fn cap_is_reached_when_enough_words_are_replaceable() {
    let d = desk();
    let tokens = words("good bad happy sad big small hot cold fast slow");
    let tags = vec![Tag::Adj; 10];
    let cfg = PerturbConfig {
        in_vocab_only: false,
        ..PerturbConfig::default()
    };
    for seed in 0..10 {
        let (_, delta) = generate_syn(
            &tokens,
            &tags,
            lexicon(),
            &d.vocab,
            &cfg,
            &mut rng::derive(seed, &[]),
        );
        assert_eq!(delta.iter().filter(|&&b| b == 1).count(), 4);
    }
}

#[test]
fn candidates_are_content_words_in_order() {
    let tags = [Tag::Adj, Tag::Other, Tag::Adj, Tag::Noun];
    assert_eq!(select_candidates(&tags), [0, 2, 3]);
    assert!(select_candidates(&[Tag::Other; 3]).is_empty());
}

/// Fraction of the first 1000 held-out sentences with a content word whose
/// triplets differ between seeds 1 and 2.
fn seed_sensitivity(in_vocab_only: bool) -> f64 {
    let d = desk();
    let tagger = d.tagger();
    let config = |seed| PerturbConfig {
        seed,
        in_vocab_only,
        ..PerturbConfig::default()
    };
    let a = perturber(d, &tagger, config(1));
    let b = perturber(d, &tagger, config(2));
    let lines = d.heldout_lines();
    let with_candidates: Vec<(usize, &String)> = lines
        .iter()
        .enumerate()
        .filter(|(_, s)| !select_candidates(&tagger.tag(&tokenize(s))).is_empty())
        .take(1000)
        .collect();
    assert_eq!(with_candidates.len(), 1000);
    let distinct = with_candidates
        .iter()
        .filter(|(i, s)| a.triplet(s, *i as u64) != b.triplet(s, *i as u64))
        .count();
    distinct as f64 / 1000.0
}

#[test]
fn distinct_seeds_give_distinct_triplets() {
    // many synthetic sentences admit a single triplet once pools are
    // restricted to the vocabulary, so the floors sit below 0.99
    let filtered = seed_sensitivity(true);
    assert!(filtered >= 0.92, "{filtered}");
    let unfiltered = seed_sensitivity(false);
    assert!(unfiltered >= 0.98, "{unfiltered}");
}

#[test]
fn seed_changes_a_sentence_with_many_outcomes() {
    let d = desk();
    let tagger = d.tagger();
    let line = "the good man was happy and the big dog was fast";
    let outputs: std::collections::HashSet<_> = (0..16)
        .map(|seed| {
            perturber(
                d,
                &tagger,
                PerturbConfig {
                    seed,
                    in_vocab_only: false,
                    ..PerturbConfig::default()
                },
            )
            .triplet(line, 0)
        })
        .collect();
    assert!(
        outputs.len() >= 15,
        "{} distinct triplets from 16 seeds",
        outputs.len()
    );
}

#[test]
fn evaluation_triplets_replace_one_word() {
    let d = desk();
    let tagger = d.tagger();
    let p = perturber(d, &tagger, PerturbConfig::default());
    let triplets = p.eval_triplets(&d.heldout_lines(), 500);
    assert_eq!(triplets.len(), 500);
    let lex = lexicon();
    for t in &triplets {
        t.check().unwrap();
        assert_eq!(t.syn_replacements(), 1);
        assert_eq!(t.ant_replacements(), 1);
        assert_eq!(t.delta_syn, t.delta_ant);
        let i = t.delta_syn.iter().position(|&b| b == 1).unwrap();
        let (w, syn, ant) = (&t.tokens_ori[i], &t.tokens_syn[i], &t.tokens_ant[i]);
        assert!(
            Pos::ALL
                .iter()
                .any(|&pos| lex.synonyms(w, pos).contains(syn)),
            "{w} -> {syn}"
        );
        assert!(
            Pos::ALL
                .iter()
                .any(|&pos| lex.antonyms(w, pos).contains(ant)),
            "{w} -> {ant}"
        );
    }
    assert!(p.eval_triplet("the of and a", 0).is_none());
}

fn sentence() -> impl Strategy<Value = (Vec<String>, Vec<Tag>)> {
    let d = desk();
    let vocab_words: Vec<String> = d.world.words().into_iter().map(str::to_string).collect();
    let pair = (
        prop::sample::select(vocab_words),
        prop::sample::select(Tag::ALL.to_vec()),
    );
    prop::collection::vec(pair, 0..16).prop_map(|v| v.into_iter().unzip())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn perturbations_keep_length_and_mark_changes(
        (tokens, tags) in sentence(),
        syn_rate in 0.0f64..=1.0,
        ant_rate in 0.0f64..=1.0,
        fallback in any::<bool>(),
        in_vocab in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let d = desk();
        let cfg = PerturbConfig { syn_rate, ant_rate, seed, allow_random_fallback: fallback, in_vocab_only: in_vocab };
        let mut r = rng::derive(seed, &[]);
        let (syn, ds) = generate_syn(&tokens, &tags, lexicon(), &d.vocab, &cfg, &mut r);
        let (ant, da) = generate_ant(&tokens, &tags, lexicon(), &d.vocab, &cfg, &mut r);
        prop_assert_eq!(syn.len(), tokens.len());
        prop_assert_eq!(ant.len(), tokens.len());
        prop_assert_eq!(&ds, &diff_mask(&tokens, &syn));
        prop_assert_eq!(&da, &diff_mask(&tokens, &ant));
        prop_assert!(ds.iter().filter(|&&b| b == 1).count() <= replacement_cap(syn_rate, tokens.len()));
        prop_assert!(da.iter().filter(|&&b| b == 1).count() <= replacement_cap(ant_rate, tokens.len()));
        for (i, &b) in ds.iter().enumerate() {
            prop_assert!(b == 0 || tags[i].is_content());
        }
        for (i, &b) in da.iter().enumerate() {
            prop_assert!(b == 0 || tags[i].is_content());
        }
    }

    #[test]
    fn triplets_are_deterministic(pick in 0usize..1500, seed in any::<u64>()) {
        let d = desk();
        let tagger = d.tagger();
        let p = perturber(d, &tagger, PerturbConfig { seed, ..PerturbConfig::default() });
        let line = d.heldout_lines().swap_remove(pick);
        let t = p.triplet(&line, pick as u64);
        t.check().unwrap();
        prop_assert_eq!(&t, &p.triplet(&line, pick as u64));
        prop_assert!(t.syn_replacements() <= replacement_cap(0.4, t.len()));
        prop_assert!(t.ant_replacements() <= replacement_cap(0.2, t.len()));
    }

    #[test]
    fn cap_matches_ceiling(rate in 0.0f64..=1.0, len in 0usize..200) {
        let exact = rate * len as f64;
        let cap = replacement_cap(rate, len);
        prop_assert!(cap as f64 >= exact - 1e-9);
        prop_assert!((cap as f64) < exact + 1.0);
    }
}
