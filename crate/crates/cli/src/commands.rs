//! One function per subcommand.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use semcontrast_core::config::RunConfig;
use semcontrast_core::diagnostics::{
    full_loss_check, key_bias_gradient, primitive_checks, GRAD_CHECK_TOLERANCE,
};
use semcontrast_core::encoder::Encoder;
use semcontrast_core::eval::{accuracy, contrast_consistency, hits, report_line, SimilarityMode};
use semcontrast_core::persist::{
    labeled_to_tsv, read_text, tagger_to_text, triplets_from_jsonl, triplets_to_jsonl,
    vocab_to_text, write_text, Checkpoint,
};
use semcontrast_core::perturb::{PerturbConfig, Perturber};
use semcontrast_core::synth::{PolarWords, SynthConfig, SynthWorld};
use semcontrast_core::textproc::{
    build_vocab as count_vocab, parse_tagged_line, tokenize, CoarseTagger, LexiconTagger,
    TaggedSentence, TaggerModel,
};
use semcontrast_core::trainer::{self, predict, FinetuneConfig, PretrainData, PretrainState};
use semcontrast_core::wordnet::{is_single_word, Pos};

use crate::resources;
use crate::{EvalContrastArgs, FinetuneArgs, GenTripletsArgs, PretrainArgs, SynthArgs};

pub fn wordnet_check(dir: &Path, samples: usize) -> Result<()> {
    let lex = resources::lexicon(dir)?;
    let mut failures = Vec::new();
    for pos in Pos::ALL {
        println!(
            "{pos}\tindex {}\tsynsets {}\texceptions {}",
            lex.index_len(pos),
            lex.synset_count(pos),
            lex.exception_len(pos)
        );
        let with_antonyms: Vec<&str> = lex
            .lemmas(pos)
            .filter(|l| is_single_word(l) && !lex.antonyms(l, pos).is_empty())
            .collect();
        let stride = (with_antonyms.len() / samples.max(1)).max(1);
        let sample: Vec<&str> = with_antonyms
            .iter()
            .step_by(stride)
            .take(samples)
            .copied()
            .collect();
        let asymmetric: Vec<String> = sample
            .iter()
            .flat_map(|&a| lex.antonyms(a, pos).into_iter().map(move |b| (a, b)))
            .filter(|(a, b)| !lex.antonyms(b, pos).contains(*a))
            .map(|(a, b)| format!("{pos}: {b} does not list {a} as an antonym"))
            .collect();
        println!(
            "{pos}\tantonym symmetry {}/{}",
            sample.len() - asymmetric.len().min(sample.len()),
            sample.len()
        );
        failures.extend(asymmetric);
    }
    failures.extend(lex.validate());
    for f in failures.iter().take(20) {
        eprintln!("{f}");
    }
    ensure!(
        failures.is_empty(),
        "{} WordNet consistency problems",
        failures.len()
    );
    println!("ok");
    Ok(())
}

fn write_tagged(path: &Path, sentences: &[TaggedSentence]) -> Result<()> {
    let text: String = sentences.iter().map(|s| s.to_line() + "\n").collect();
    Ok(write_text(path, &text)?)
}

fn write_plain(path: &Path, sentences: &[TaggedSentence]) -> Result<()> {
    let text: String = sentences
        .iter()
        .map(|s| s.tokens.join(" ") + "\n")
        .collect();
    Ok(write_text(path, &text)?)
}

pub fn synth_corpus(a: &SynthArgs) -> Result<()> {
    let lex = resources::lexicon(&a.wordnet)?;
    let world = SynthWorld::build(
        &lex,
        SynthConfig {
            seed: a.seed,
            ..SynthConfig::default()
        },
    )?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let out = |name: &str| a.out_dir.join(name);
    let seed = a.seed.wrapping_mul(16);
    write_plain(&out("corpus.txt"), &world.corpus(a.corpus_size, seed + 1))?;
    write_plain(&out("heldout.txt"), &world.corpus(a.heldout_size, seed + 2))?;
    write_tagged(&out("tagged.txt"), &world.corpus(a.tagged_size, seed + 3))?;
    let train = world.sentiment(a.sentiment_size, seed + 4, PolarWords::Anchors);
    let dev = world.sentiment(a.sentiment_size / 2, seed + 5, PolarWords::Anchors);
    let test = world.sentiment(a.sentiment_size, seed + 6, PolarWords::Mixed);
    let originals = |pairs: &[semcontrast_core::synth::ContrastPair]| {
        labeled_to_tsv(&pairs.iter().map(|p| p.original.clone()).collect::<Vec<_>>())
    };
    write_text(&out("sentiment_train.tsv"), &originals(&train))?;
    write_text(&out("sentiment_dev.tsv"), &originals(&dev))?;
    write_text(&out("contrast_ori.tsv"), &originals(&test))?;
    let rev: Vec<_> = test.iter().map(|p| p.contrast.clone()).collect();
    write_text(&out("contrast_rev.tsv"), &labeled_to_tsv(&rev))?;
    println!(
        "{} families, {} words -> {}",
        world.families.len(),
        world.words().len(),
        a.out_dir.display()
    );
    Ok(())
}

pub fn build_vocab(
    corpus: &Path,
    out: &Path,
    min_count: usize,
    max_size: usize,
    wordnet: Option<&Path>,
    tagger: Option<&Path>,
) -> Result<()> {
    let lines = resources::lines(corpus)?;
    let mut vocab = count_vocab(&lines, min_count, max_size);
    if let Some(path) = tagger {
        let model = resources::tagger(path)?;
        match wordnet {
            Some(dir) => {
                let lex = resources::lexicon(dir)?;
                vocab.assign_pools(&LexiconTagger {
                    lexicon: &lex,
                    model: Some(&model),
                });
            }
            None => vocab.assign_pools(&model),
        }
    } else if wordnet.is_some() {
        bail!("--wordnet only affects tag pools and needs --tagger");
    }
    write_text(out, &vocab_to_text(&vocab))?;
    println!("{} entries -> {}", vocab.len(), out.display());
    Ok(())
}

pub fn tag_train(tagged: &Path, out: &Path, epochs: usize, seed: u64) -> Result<()> {
    let corpus = resources::lines(tagged)?
        .iter()
        .enumerate()
        .map(|(i, l)| {
            parse_tagged_line(l).with_context(|| format!("{}:{}", tagged.display(), i + 1))
        })
        .collect::<Result<Vec<_>>>()?;
    let model = semcontrast_core::textproc::train_tagger(&corpus, epochs, seed)?;
    write_text(out, &tagger_to_text(&model))?;
    println!("training accuracy {}", model.accuracy(&corpus));
    Ok(())
}

pub fn tag(model: &Path, corpus: &Path, wordnet: Option<&Path>) -> Result<()> {
    let model = resources::tagger(model)?;
    let lex = wordnet.map(resources::lexicon).transpose()?;
    let lex_tagger = lex.as_ref().map(|l| LexiconTagger {
        lexicon: l,
        model: Some(&model),
    });
    let tagger: &dyn CoarseTagger = match &lex_tagger {
        Some(t) => t,
        None => &model,
    };
    let mut stdout = std::io::stdout().lock();
    for line in resources::lines(corpus)? {
        let tokens = tokenize(&line);
        let tags = tagger.tag(&tokens);
        writeln!(stdout, "{}", TaggedSentence { tokens, tags }.to_line())?;
    }
    Ok(())
}

/// The perceptron alone, or WordNet lookup in front of it.
fn coarse<'a>(
    model: &'a TaggerModel,
    lookup: &'a LexiconTagger<'a>,
    lexicon_tags: bool,
) -> &'a dyn CoarseTagger {
    if lexicon_tags {
        lookup
    } else {
        model
    }
}

pub fn gen_triplets(a: &GenTripletsArgs) -> Result<()> {
    let lex = resources::lexicon(&a.wordnet)?;
    let vocab = resources::vocab(&a.vocab)?;
    let model = resources::tagger(&a.tagger)?;
    let lookup = LexiconTagger {
        lexicon: &lex,
        model: Some(&model),
    };
    let tagger = coarse(&model, &lookup, a.lexicon_tags);
    let config = PerturbConfig {
        syn_rate: a.syn_rate,
        ant_rate: a.ant_rate,
        seed: a.seed,
        ..PerturbConfig::default()
    };
    config.validate()?;
    let perturber = Perturber {
        lexicon: &lex,
        vocab: &vocab,
        tagger,
        config,
    };
    let lines = resources::lines(&a.corpus)?;
    let limit = a.limit.unwrap_or(usize::MAX);
    let triplets: Vec<_> = if a.eval_mode {
        perturber.eval_triplets(&lines, limit)
    } else {
        lines
            .iter()
            .enumerate()
            .map(|(i, l)| perturber.triplet(l, i as u64))
            .filter(|t| !t.is_empty())
            .take(limit)
            .collect()
    };
    write_text(&a.out, &triplets_to_jsonl(&triplets))?;
    println!("{} triplets -> {}", triplets.len(), a.out.display());
    Ok(())
}

/// Config file (or the resumed checkpoint's snapshot), then `--set`
/// assignments, then dedicated flags.
fn pretrain_config(a: &PretrainArgs, resumed: Option<&Checkpoint>) -> Result<RunConfig> {
    let base = match (&a.config, resumed) {
        (Some(path), _) => {
            RunConfig::parse(&read_text(path)?).with_context(|| format!("in {}", path.display()))?
        }
        (None, Some(ck)) => ck.run_config()?,
        (None, None) => RunConfig::default(),
    };
    let sets: Vec<(usize, &str)> = a
        .overrides
        .iter()
        .enumerate()
        .map(|(i, s)| (i + 1, s.as_str()))
        .collect();
    let mut cfg = base.with_overrides(sets).context("in --set")?;
    if let Some(n) = a.steps {
        cfg.train.total_steps = n;
    }
    if let Some(lr) = a.lr {
        cfg.train.peak_lr = lr;
    }
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn pretrain(a: &PretrainArgs) -> Result<()> {
    let resumed = a.resume.as_deref().map(Checkpoint::load).transpose()?;
    let mut cfg = pretrain_config(a, resumed.as_ref())?;
    let lex = resources::lexicon(&a.wordnet)?;
    let vocab = resources::vocab(&a.vocab)?;
    let model = resources::tagger(&a.tagger)?;
    let lookup = LexiconTagger {
        lexicon: &lex,
        model: Some(&model),
    };
    let tagger = coarse(&model, &lookup, a.lexicon_tags);
    let sentences: Vec<TaggedSentence> = resources::lines(&a.corpus)?
        .iter()
        .map(|l| {
            let tokens = tokenize(l);
            let tags = tagger.tag(&tokens);
            TaggedSentence { tokens, tags }
        })
        .collect();
    cfg.encoder.vocab_size = vocab.len();
    cfg.encoder.validate()?;
    let mut state = match &resumed {
        Some(ck) => ck.to_pretrain()?,
        None => PretrainState::new(cfg.encoder.clone(), cfg.train.seed)?,
    };
    ensure!(
        state.config == cfg.encoder,
        "checkpoint encoder settings differ from the requested ones (vocabulary of {} entries)",
        vocab.len()
    );
    let perturber = Perturber {
        lexicon: &lex,
        vocab: &vocab,
        tagger,
        config: cfg.perturb.clone(),
    };
    let data = PretrainData {
        sentences: &sentences,
        perturber: &perturber,
    };
    let mut metrics = match &a.metrics {
        Some(path) => Some(
            OpenOptions::new()
                .create(true)
                .write(true)
                .append(resumed.is_some())
                .truncate(resumed.is_none())
                .open(path)
                .with_context(|| format!("opening {}", path.display()))?,
        ),
        None => None,
    };
    let until = a.until.unwrap_or(cfg.train.total_steps);
    let started = Instant::now();
    trainer::pretrain_until(
        &mut state,
        &data,
        &cfg.train,
        &cfg.masking,
        until,
        |state, losses| {
            if let Some(f) = metrics.as_mut() {
                writeln!(f, "{}", losses.log_line())
                    .map_err(|e| semcontrast_core::Error::Input(format!("writing metrics: {e}")))?;
            }
            if losses.step % 100 == 0 || losses.step == until {
                eprintln!(
                    "{} ({:.0}s)",
                    losses.log_line(),
                    started.elapsed().as_secs_f64()
                );
            }
            match a.checkpoint_every {
                Some(every) if every > 0 && state.step % every == 0 => {
                    Checkpoint::from_pretrain(state, &cfg).save(&a.out)
                }
                _ => Ok(()),
            }
        },
    )?;
    Checkpoint::from_pretrain(&state, &cfg).save(&a.out)?;
    println!("step {} -> {}", state.step, a.out.display());
    Ok(())
}

pub fn finetune(a: &FinetuneArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.ckpt)?;
    let mut cfg = ck.run_config()?;
    let mut encoder = ck.encoder()?;
    let vocab = resources::vocab(&a.vocab)?;
    ensure!(
        encoder.config.vocab_size == vocab.len(),
        "checkpoint expects {} vocabulary entries, {} has {}",
        encoder.config.vocab_size,
        a.vocab.display(),
        vocab.len()
    );
    let train = resources::labeled(&a.train)?;
    let dev = resources::labeled(&a.dev)?;
    let ft: &mut FinetuneConfig = &mut cfg.finetune;
    if let Some(lr) = a.lr {
        ft.lr = lr;
    }
    if let Some(e) = a.epochs {
        ft.epochs = e;
    }
    if let Some(b) = a.batch_size {
        ft.batch_size = b;
    }
    if let Some(s) = a.seed {
        ft.seed = s;
    }
    ft.n_classes = train
        .iter()
        .chain(&dev)
        .map(|e| e.label + 1)
        .max()
        .unwrap_or(2)
        .max(2);
    if a.random_init {
        encoder = Encoder::new(encoder.config.clone(), ft.seed)?;
    }
    let result = trainer::finetune(&encoder, &vocab, &train, &dev, ft)?;
    for (epoch, acc) in result.history.iter().enumerate() {
        println!(
            "{}",
            report_line("dev_accuracy", "-", &(epoch + 1).to_string(), *acc)
        );
    }
    println!(
        "{}",
        report_line("dev_accuracy_best", "-", "-", result.dev_accuracy)
    );
    Checkpoint::from_classifier(&result.classifier, &cfg).save(&a.out)?;
    Ok(())
}

pub fn eval_hits(ckpt: &Path, vocab: &Path, triplets: &Path, mode: &str) -> Result<()> {
    let mode: SimilarityMode = mode.parse()?;
    let encoder = Checkpoint::load(ckpt)?.encoder()?;
    let vocab = resources::vocab(vocab)?;
    let triplets = triplets_from_jsonl(&read_text(triplets)?, &triplets.display().to_string())?;
    ensure!(!triplets.is_empty(), "no triplets to evaluate");
    let report = hits(&encoder, &vocab, &triplets, mode)?;
    for line in report.report_lines() {
        println!("{line}");
    }
    Ok(())
}

pub fn eval_contrast(a: &EvalContrastArgs) -> Result<()> {
    let gold_ori = resources::labeled(&a.ori)?;
    let gold_rev = resources::labeled(&a.rev)?;
    ensure!(
        gold_ori.len() == gold_rev.len(),
        "original and contrast sets differ in length ({} vs {})",
        gold_ori.len(),
        gold_rev.len()
    );
    let (pred_ori, pred_rev): (Vec<usize>, Vec<usize>) = match (&a.ckpt, &a.pred_ori, &a.pred_rev) {
        (Some(ckpt), _, _) => {
            let vocab_path = a.vocab.as_deref().context("--ckpt needs --vocab")?;
            let clf = Checkpoint::load(ckpt)?.to_classifier()?;
            let vocab = resources::vocab(vocab_path)?;
            (
                predict(&clf, &vocab, &gold_ori)?,
                predict(&clf, &vocab, &gold_rev)?,
            )
        }
        (None, Some(po), Some(pr)) => (
            resources::labeled(po)?.iter().map(|e| e.label).collect(),
            resources::labeled(pr)?.iter().map(|e| e.label).collect(),
        ),
        _ => bail!("pass either --ckpt and --vocab or --pred-ori and --pred-rev"),
    };
    let labels = |v: &[semcontrast_core::trainer::LabeledExample]| {
        v.iter().map(|e| e.label).collect::<Vec<_>>()
    };
    let (g_ori, g_rev) = (labels(&gold_ori), labels(&gold_rev));
    println!(
        "{}",
        report_line("accuracy_ori", "-", "-", accuracy(&pred_ori, &g_ori)?)
    );
    println!(
        "{}",
        report_line("accuracy_rev", "-", "-", accuracy(&pred_rev, &g_rev)?)
    );
    println!(
        "{}",
        report_line(
            "consistency",
            "-",
            "-",
            contrast_consistency(&pred_ori, &pred_rev, &g_ori, &g_rev)?
        )
    );
    Ok(())
}

pub fn gradcheck(config: &str, seeds: u64) -> Result<()> {
    ensure!(
        config == "tiny",
        "unknown gradcheck config `{config}` (only `tiny`)"
    );
    ensure!(seeds > 0, "--seeds must be positive");
    let mut worst: f64 = 0.0;
    let mut failed = 0usize;
    let mut outcomes = primitive_checks(0..seeds)?;
    for seed in 0..seeds {
        outcomes.push(full_loss_check(seed)?);
    }
    for o in &outcomes {
        worst = worst.max(o.report.max_rel_error);
        if !o.passed() {
            failed += 1;
            println!(
                "FAIL\t{}\tseed {}\t{:e}",
                o.name, o.seed, o.report.max_rel_error
            );
        }
    }
    let bk = (0..seeds)
        .map(key_bias_gradient)
        .collect::<semcontrast_core::Result<Vec<_>>>()?;
    let bk_max = bk.into_iter().fold(0.0, f64::max);
    println!("checks\t{}", outcomes.len());
    println!("max_rel_error\t{worst:e}");
    println!("key_bias_grad\t{bk_max:e}");
    ensure!(
        failed == 0,
        "{failed} gradient checks at or above {GRAD_CHECK_TOLERANCE:e}"
    );
    Ok(())
}
