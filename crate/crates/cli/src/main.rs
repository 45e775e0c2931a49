//! `semcontrast`: data preparation, pre-training, fine-tuning and evaluation.

mod commands;
mod resources;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "semcontrast",
    version,
    about = "Contrastive pre-training with WordNet perturbations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a WordNet database and report counts and symmetry checks.
    WordnetCheck {
        dir: PathBuf,
        /// Antonym-bearing lemmas to spot-check per part of speech.
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Write template corpora, a tagged corpus and sentiment sets.
    SynthCorpus(SynthArgs),
    /// Build a vocabulary from a corpus with one sentence per line.
    BuildVocab {
        corpus: PathBuf,
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        min_count: usize,
        #[arg(long, default_value_t = 30_000)]
        max_size: usize,
        /// With --tagger, assigns each token the coarse tag used for random replacements.
        #[arg(long)]
        wordnet: Option<PathBuf>,
        #[arg(long)]
        tagger: Option<PathBuf>,
    },
    /// Train the perceptron tagger on `word/TAG` lines.
    TagTrain {
        tagged_corpus: PathBuf,
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Tag a plain corpus, printing `word/TAG` lines.
    Tag {
        model: PathBuf,
        corpus: PathBuf,
        /// Prefer unambiguous WordNet lookups over the model.
        #[arg(long)]
        wordnet: Option<PathBuf>,
    },
    /// Perturb each corpus line into an (original, synonym, antonym) triplet.
    GenTriplets(GenTripletsArgs),
    /// Pre-train an encoder with the masked, replaced-token and contrastive objectives.
    Pretrain(PretrainArgs),
    /// Fine-tune a classifier from a checkpoint's encoder.
    Finetune(FinetuneArgs),
    /// Hits of a checkpoint's encoder at every layer.
    EvalHits {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        triplets: PathBuf,
        #[arg(long, default_value = "CLS")]
        mode: String,
    },
    /// Accuracy on an original and a contrast set, and their consistency.
    EvalContrast(EvalContrastArgs),
    /// Finite-difference gradient checks of every primitive and the full loss.
    Gradcheck {
        #[arg(long, default_value = "tiny")]
        config: String,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    wordnet: PathBuf,
    out_dir: PathBuf,
    #[arg(long, default_value_t = 5000)]
    corpus_size: usize,
    #[arg(long, default_value_t = 1500)]
    heldout_size: usize,
    #[arg(long, default_value_t = 2000)]
    tagged_size: usize,
    #[arg(long, default_value_t = 500)]
    sentiment_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenTripletsArgs {
    corpus: PathBuf,
    #[arg(long)]
    wordnet: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    tagger: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Tag words found in exactly one WordNet part of speech by lookup.
    #[arg(long)]
    lexicon_tags: bool,
    #[arg(long, default_value_t = 0.4)]
    syn_rate: f64,
    #[arg(long, default_value_t = 0.2)]
    ant_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Single-replacement triplets for Hits evaluation.
    #[arg(long)]
    eval_mode: bool,
    /// Stop after this many triplets.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct PretrainArgs {
    corpus: PathBuf,
    #[arg(long)]
    wordnet: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    tagger: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Tag words found in exactly one WordNet part of speech by lookup.
    #[arg(long)]
    lexicon_tags: bool,
    /// `section.key = value` file; defaults apply to unset keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `section.key=value` assignments, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Continue from a pre-training checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Tab-separated per-step losses; appended to when resuming.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Overrides train.total_steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Stop after this step while keeping the schedule of train.total_steps.
    #[arg(long)]
    until: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the checkpoint every this many steps.
    #[arg(long)]
    checkpoint_every: Option<u64>,
}

#[derive(Args)]
struct FinetuneArgs {
    /// Pre-training or classifier checkpoint providing the encoder.
    ckpt: PathBuf,
    train: PathBuf,
    dev: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Discard the checkpoint's weights and start from a fresh encoder of the same shape.
    #[arg(long)]
    random_init: bool,
}

#[derive(Args)]
struct EvalContrastArgs {
    /// Gold `label<TAB>text` lines of the original set.
    ori: PathBuf,
    /// Gold lines of the contrast set, aligned with `ori`.
    rev: PathBuf,
    #[arg(long, requires = "vocab", conflicts_with_all = ["pred_ori", "pred_rev"])]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Predictions in the same TSV layout, instead of a classifier.
    #[arg(long, requires = "pred_rev")]
    pred_ori: Option<PathBuf>,
    #[arg(long, requires = "pred_ori")]
    pred_rev: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::WordnetCheck { dir, samples } => commands::wordnet_check(&dir, samples),
        Command::SynthCorpus(a) => commands::synth_corpus(&a),
        Command::BuildVocab {
            corpus,
            out,
            min_count,
            max_size,
            wordnet,
            tagger,
        } => commands::build_vocab(
            &corpus,
            &out,
            min_count,
            max_size,
            wordnet.as_deref(),
            tagger.as_deref(),
        ),
        Command::TagTrain {
            tagged_corpus,
            out,
            epochs,
            seed,
        } => commands::tag_train(&tagged_corpus, &out, epochs, seed),
        Command::Tag {
            model,
            corpus,
            wordnet,
        } => commands::tag(&model, &corpus, wordnet.as_deref()),
        Command::GenTriplets(a) => commands::gen_triplets(&a),
        Command::Pretrain(a) => commands::pretrain(&a),
        Command::Finetune(a) => commands::finetune(&a),
        Command::EvalHits {
            ckpt,
            vocab,
            triplets,
            mode,
        } => commands::eval_hits(&ckpt, &vocab, &triplets, &mode),
        Command::EvalContrast(a) => commands::eval_contrast(&a),
        Command::Gradcheck { config, seeds } => commands::gradcheck(&config, seeds),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(ToString::to_string).collect();
            eprintln!("semcontrast: {}", chain.join(": "));
            ExitCode::FAILURE
        }
    }
}
