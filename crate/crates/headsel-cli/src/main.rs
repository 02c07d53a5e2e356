//! `headsel`: train, parse, evaluate, and inspect dependency treebanks.
//!
//! Diagnostics go to stderr, data to stdout (or the requested file).
//! Exit codes: 0 on success, 1 on runtime errors, 2 on usage errors.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use headsel::corpus::{projective_stats, read_conll_file, write_conll, Treebank};
use headsel::decoder::DecodeMode;
use headsel::eval::{
    attachment_scores, format_length_bins, uas_by_length, EvalOptions, DEFAULT_PUNCT_TAGS,
};
use headsel::model::{assemble, ModelBundle, ModelError, ParseOptions, ParseOutcome};
use headsel::train::{
    format_log, initialize, train_heads_observed, train_labeler_observed, EpochRecord,
    TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "headsel",
    version,
    about = "BiLSTM dependency parser that treats parsing as head selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on CoNLL treebanks
    Train(TrainArgs),
    /// Parse a treebank with a trained model
    Parse(ParseArgs),
    /// Score predicted trees against gold trees
    Eval(EvalArgs),
    /// Report sentence count and projectivity of a treebank
    Stats(StatsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    /// Repair with the projective decoder
    Projective,
    /// Repair with the arborescence decoder
    Nonprojective,
}

impl From<ModeArg> for DecodeMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Projective => DecodeMode::Projective,
            ModeArg::Nonprojective => DecodeMode::NonProjective,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Training treebank (CoNLL)
    #[arg(long, value_name = "FILE")]
    train: PathBuf,
    /// Development treebank for model selection
    #[arg(long, value_name = "FILE")]
    dev: PathBuf,
    /// Where to write the trained model
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Word embedding width and LSTM state width (kept equal)
    #[arg(long)]
    dim: Option<usize>,
    /// Tag embedding width
    #[arg(long)]
    tag_dim: Option<usize>,
    /// Stacked LSTM layers per direction
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Epoch budget
    #[arg(long)]
    epochs: Option<usize>,
    /// Sentences per optimizer step
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Stop after this many epochs without dev improvement; "none" disables
    #[arg(long)]
    patience: Option<String>,
    /// Word vectors to overlay on the embedding table
    #[arg(long, value_name = "FILE")]
    pretrained: Option<PathBuf>,
    /// Decode mode stored as the model's default
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Also train a relation labeler
    #[arg(long)]
    labeled: bool,
    /// Fold words seen fewer times than this into the unknown word
    #[arg(long)]
    min_count: Option<u64>,
    /// Build the vocabulary without lowercasing
    #[arg(long)]
    keep_case: bool,
    /// Labeler hidden width
    #[arg(long)]
    label_hidden: Option<usize>,
    /// Score each word as a candidate head of itself (ablation)
    #[arg(long)]
    self_arcs: bool,
    /// Repair on raw probabilities instead of log probabilities (ablation)
    #[arg(long)]
    raw_arc_weights: bool,
    /// Leave forget-gate biases at their random initialization
    #[arg(long)]
    no_forget_bias: bool,
    /// Also write the per-epoch log lines to FILE
    #[arg(long, value_name = "FILE")]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct ParseArgs {
    /// Trained model file
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Treebank to parse (heads may be absent)
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Which decoder repairs non-tree output
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Emit the greedy output unrepaired
    #[arg(long)]
    no_repair: bool,
    /// Write per-dependent head probabilities as TSV to FILE
    #[arg(long, value_name = "FILE")]
    dump_distributions: Option<PathBuf>,
    /// Write the parsed CoNLL here instead of stdout
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Gold treebank
    #[arg(long, value_name = "FILE")]
    gold: PathBuf,
    /// Predicted treebank
    #[arg(long, value_name = "FILE")]
    pred: PathBuf,
    /// POS tags excluded as punctuation (default: `` '' : , .)
    #[arg(long, num_args = 1.., value_name = "TAG")]
    punct_set: Option<Vec<String>>,
    /// Score punctuation tokens too
    #[arg(long)]
    keep_punct: bool,
    /// Also print UAS over this many sentence-length bins
    #[arg(long)]
    bins: Option<usize>,
    /// Machine-readable key<TAB>value lines instead of the aligned block
    #[arg(long)]
    kv: bool,
}

#[derive(Args)]
struct StatsArgs {
    /// Head-annotated treebank
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Parse(args) => cmd_parse(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Stats(args) => cmd_stats(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn read_treebank(path: &PathBuf) -> Result<Treebank> {
    read_conll_file(path).with_context(|| format!("reading {}", path.display()))
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut config = TrainConfig::default();
    if let Some(d) = args.dim {
        config.word_dim = d;
        config.hidden_dim = d;
    }
    if let Some(q) = args.tag_dim {
        config.tag_dim = q;
    }
    if let Some(l) = args.layers {
        config.layers = l;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(e) = args.epochs {
        config.max_epochs = e;
    }
    if let Some(b) = args.batch {
        config.batch_size = b;
    }
    if let Some(p) = args.dropout {
        config.dropout = p;
    }
    if let Some(lr) = args.lr {
        config.lr = lr;
    }
    if let Some(p) = &args.patience {
        config.patience = match p.as_str() {
            "none" => None,
            v => Some(v.parse().context("--patience takes an epoch count or \"none\"")?),
        };
    }
    if let Some(m) = args.mode {
        config.decode_mode = m.into();
    }
    if let Some(h) = args.label_hidden {
        config.label_hidden = h;
    }
    if let Some(c) = args.min_count {
        config.min_count = c;
    }
    config.pretrained = args.pretrained;
    config.lowercase = !args.keep_case;
    config.labeled = args.labeled;
    if args.self_arcs {
        config.selector = headsel::scorer::SelectorVariant::IncludeSelf;
    }
    config.log_arc_weights = !args.raw_arc_weights;
    config.forget_bias_one = !args.no_forget_bias;

    let train_tb = read_treebank(&args.train)?;
    let dev_tb = read_treebank(&args.dev)?;
    let vocab = headsel::corpus::Vocabulary::build(&train_tb, config.min_count, config.lowercase)?;
    eprintln!(
        "vocabulary: {} words, {} tags, {} labels",
        vocab.n_words(),
        vocab.n_tags(),
        vocab.n_labels()
    );
    let mut bundle = initialize(&config, vocab)?;

    let mut log_file = args
        .log
        .as_ref()
        .map(|p| File::create(p).map(BufWriter::new))
        .transpose()
        .context("creating the log file")?;
    let mut observe = |record: &EpochRecord| {
        let line = format_log(std::slice::from_ref(record));
        eprint!("{line}");
        if let Some(f) = &mut log_file {
            let _ = f.write_all(line.as_bytes());
        }
    };

    let heads = train_heads_observed(&mut bundle, &train_tb, &dev_tb, &mut observe)?;
    eprintln!(
        "heads: best dev UAS {:.2} at epoch {}",
        heads.best_score, heads.best_epoch
    );
    if config.labeled {
        let labels = train_labeler_observed(&mut bundle, &train_tb, &dev_tb, &mut observe)?;
        eprintln!(
            "labeler: best dev LAS {:.2} at epoch {}",
            labels.best_score, labels.best_epoch
        );
    }
    drop(observe);
    if let Some(f) = &mut log_file {
        f.flush()?;
    }
    bundle
        .save_file(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    eprintln!("model written to {}", args.out.display());
    Ok(())
}

/// Positive thread count from HEADSEL_THREADS, defaulting to 1.
fn thread_count() -> Result<usize> {
    match std::env::var("HEADSEL_THREADS") {
        Ok(v) => match v.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => bail!("HEADSEL_THREADS must be a positive integer, got {v:?}"),
        },
        Err(_) => Ok(1),
    }
}

/// Parse sentences on `threads` workers over contiguous chunks; outcomes
/// come back in input order, so the output cannot depend on scheduling.
fn parse_all(
    bundle: &ModelBundle,
    treebank: &Treebank,
    opts: &ParseOptions,
    threads: usize,
) -> Result<Vec<ParseOutcome>, ModelError> {
    if threads <= 1 || treebank.len() <= 1 {
        return treebank
            .sentences
            .iter()
            .map(|s| bundle.parse_sentence(s, opts))
            .collect();
    }
    let chunk = treebank.len().div_ceil(threads);
    let chunk_results: Vec<Vec<Result<ParseOutcome, ModelError>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = treebank
            .sentences
            .chunks(chunk)
            .map(|slice| scope.spawn(move || slice.iter().map(|s| bundle.parse_sentence(s, opts)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    chunk_results.into_iter().flatten().collect()
}

fn cmd_parse(args: ParseArgs) -> Result<()> {
    let bundle = ModelBundle::load_file(&args.model)
        .with_context(|| format!("loading {}", args.model.display()))?;
    let input = read_treebank(&args.input)?;
    let opts = ParseOptions {
        mode: args.mode.into(),
        repair: !args.no_repair,
        with_labels: true,
        keep_distributions: args.dump_distributions.is_some(),
    };
    let outcomes = parse_all(&bundle, &input, &opts, thread_count()?)?;

    if let Some(path) = &args.dump_distributions {
        let mut f = BufWriter::new(File::create(path)?);
        writeln!(f, "sentence\tdependent\thead\tprob")?;
        for (si, outcome) in outcomes.iter().enumerate() {
            for dist in outcome.distributions.as_deref().unwrap_or(&[]) {
                for head in 0..dist.candidates() {
                    writeln!(f, "{}\t{}\t{}\t{:.6}", si + 1, dist.dependent(), head, dist.prob(head))?;
                }
            }
        }
        f.flush()?;
    }

    let (predicted, summary) = assemble(&input, outcomes);
    match &args.output {
        Some(path) => {
            let f = BufWriter::new(File::create(path)?);
            write_conll(&predicted, f)?;
        }
        None => {
            let stdout = io::stdout().lock();
            write_conll(&predicted, stdout)?;
        }
    }
    eprintln!("{}", summary.format_line());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let gold = read_treebank(&args.gold)?;
    let pred = read_treebank(&args.pred)?;
    let options = EvalOptions {
        exclude_punct: !args.keep_punct,
        punct_tags: args
            .punct_set
            .unwrap_or_else(|| DEFAULT_PUNCT_TAGS.iter().map(|s| s.to_string()).collect()),
    };
    let report = attachment_scores(&gold, &pred, &options)?;
    let mut stdout = io::stdout().lock();
    if args.kv {
        write!(stdout, "{}", report.format_kv())?;
    } else {
        write!(stdout, "{}", report.format_text())?;
    }
    if let Some(bins) = args.bins {
        let rows = uas_by_length(&gold, &pred, bins, &options)?;
        write!(stdout, "{}", format_length_bins(&rows))?;
    }
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let treebank = read_treebank(&args.input)?;
    let (sentences, pct) = projective_stats(&treebank)?;
    println!("sentences\t{sentences}");
    println!("projective\t{pct:.1}");
    Ok(())
}
