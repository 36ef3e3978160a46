use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use textrecon::context::{build_detector_samples, write_detector_samples, DETECTOR_URL_ENV};
use textrecon::corpus::{
    estimate_prior, load_embeddings_with_vocab, read_corpus, write_corpus, EmbeddingTable, PriorMode, PriorModel,
    SentenceRecord, Vocabulary,
};
use textrecon::eval::{
    reconstruct_dataset, run_oracle, run_sweep, score_dataset, train_scorer, write_report_csv, write_report_json,
    AsrReport, Attack, ScorerKind, ScorerOptions, SweepSpec,
};
use textrecon::mechanism::{build_channel, sanitize_corpus, Channel, MechanismConfig, MechanismKind};
use textrecon::synth::{generate, SynthConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(name = "textrecon", version, about = "Token sanitization and reconstruction attacks")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sanitize the sensitive tokens of a corpus.
    Sanitize(SanitizeArgs),
    /// Reconstruct a sanitized corpus and report the attack success rate.
    Attack(AttackArgs),
    /// Estimate the context-free or contextual-K bound on a sanitized corpus.
    Bound(BoundArgs),
    /// Run an experiment grid described by a JSON spec.
    Sweep(SweepArgs),
    /// Check the attacks against brute-force enumeration on random joints.
    Oracle(OracleArgs),
    /// Write a synthetic corpus and matching embeddings.
    Synth(SynthArgs),
    /// Build detector training samples from a shadow corpus.
    Samples(SamplesArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mechanism {
    FullVocab,
    Adjacency,
}

#[derive(Args)]
struct ChannelArgs {
    /// Embedding file; its tokens form the vocabulary.
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, value_enum, default_value = "full-vocab")]
    mechanism: Mechanism,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 20)]
    adjacency_size: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scorer {
    Ngram,
    Detector,
    Constant,
}

#[derive(Args)]
struct ScorerArgs {
    #[arg(long, value_enum, default_value = "ngram")]
    scorer: Scorer,
    /// Candidates rescored by the contextual attack.
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, env = DETECTOR_URL_ENV)]
    detector_url: Option<String>,
    #[arg(long, default_value_t = 2)]
    ngram_order: usize,
    #[arg(long, default_value_t = 0.1)]
    ngram_smoothing: f64,
    /// Sanitizations of the shadow corpus used for training.
    #[arg(long, default_value_t = 100)]
    train_replications: usize,
}

#[derive(Args)]
struct SanitizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    channel: ChannelArgs,
    /// Output file (default: standard output).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Optimal,
    Bayes,
    ContextualBayes,
    EmbeddingInversion,
}

#[derive(Args)]
struct AttackArgs {
    /// Sanitized corpus (originals are used for scoring).
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    channel: ChannelArgs,
    #[arg(long, value_enum)]
    method: Method,
    /// Attacker-held corpus for the prior and scorer training.
    #[arg(long)]
    shadow: Option<PathBuf>,
    /// Smoothing constant as a multiple of 1/alpha.
    #[arg(long, default_value_t = 1.0)]
    smoothing_scale: f64,
    #[command(flatten)]
    scorer: ScorerArgs,
    /// Per-token reconstructions (JSON lines).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Report file (default: standard output).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Record wall-clock time in the report.
    #[arg(long)]
    timing: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BoundType {
    ContextFree,
    ContextualK,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    channel: ChannelArgs,
    #[arg(long = "type", value_enum)]
    bound: BoundType,
    /// Corpus used to train the n-gram or detector scorer.
    #[arg(long)]
    shadow: Option<PathBuf>,
    #[command(flatten)]
    scorer: ScorerArgs,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Report JSON (default: standard output).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write the results as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Overrides the spec's epsilon list.
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    train_replications: Option<usize>,
    #[arg(long, env = DETECTOR_URL_ENV)]
    detector_url: Option<String>,
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct OracleArgs {
    /// |X| = |Y| of every random joint.
    #[arg(long, default_value_t = 5)]
    vocab_size: usize,
    /// |C|; 0 checks the context-free attack only.
    #[arg(long, default_value_t = 0)]
    context_size: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Per-trial results as JSON.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// JSON file with generator settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    sentences: Option<usize>,
    #[arg(long)]
    sentence_len: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    coherence: Option<f64>,
    #[arg(long)]
    zipf_exponent: Option<f64>,
    #[arg(long)]
    sensitive_rate: Option<f64>,
}

#[derive(Args)]
struct SamplesArgs {
    /// Shadow corpus with sensitivity masks.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    channel: ChannelArgs,
    #[arg(long, default_value_t = 100)]
    replications: usize,
    #[arg(long)]
    output: Option<PathBuf>,
}

/// A problem with the command line or its inputs; exits with status 1.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<textrecon::Error>() {
            return if e.is_input_error() { EXIT_USAGE } else { EXIT_RUNTIME };
        }
    }
    EXIT_RUNTIME
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| usage(format!("cannot open {}: {e}", path.display())))
}

fn create(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_corpus(path: &Path) -> Result<Vec<SentenceRecord>> {
    read_corpus(open(path)?).with_context(|| format!("reading {}", path.display()))
}

struct Setup {
    vocab: Vocabulary,
    embeddings: EmbeddingTable,
    channel: Channel,
}

impl ChannelArgs {
    fn config(&self, seed: u64) -> MechanismConfig {
        let kind = match self.mechanism {
            Mechanism::FullVocab => MechanismKind::FullVocab,
            Mechanism::Adjacency => MechanismKind::Adjacency,
        };
        MechanismConfig { adjacency_size: self.adjacency_size, ..MechanismConfig::new(self.epsilon, kind) }
            .with_seed(seed)
    }

    fn setup(&self, seed: u64) -> Result<Setup> {
        let config = self.config(seed);
        if !(config.epsilon.is_finite() && config.epsilon > 0.0) {
            return Err(usage(format!("--epsilon must be positive, got {}", config.epsilon)));
        }
        let (vocab, embeddings) = load_embeddings_with_vocab(open(&self.embeddings)?)
            .with_context(|| format!("reading {}", self.embeddings.display()))?;
        let channel = build_channel(&embeddings, &config)?;
        Ok(Setup { vocab, embeddings, channel })
    }
}

impl ScorerArgs {
    fn options(&self) -> ScorerOptions {
        ScorerOptions {
            kind: match self.scorer {
                Scorer::Ngram => ScorerKind::Ngram,
                Scorer::Detector => ScorerKind::Detector,
                Scorer::Constant => ScorerKind::Constant,
            },
            ngram_order: self.ngram_order,
            ngram_smoothing: self.ngram_smoothing,
            train_replications: self.train_replications,
            detector_url: self.detector_url.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(usage("--k must be positive"));
        }
        if matches!(self.scorer, Scorer::Detector) && self.detector_url.is_none() {
            return Err(usage(format!("--scorer detector needs --detector-url or ${DETECTOR_URL_ENV}")));
        }
        Ok(())
    }
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn sanitized_only(records: &[SentenceRecord]) -> Result<()> {
    match records.iter().find(|r| r.sanitized.is_none()) {
        Some(r) => Err(usage(format!("record {} has no sanitized tokens", r.id))),
        None => Ok(()),
    }
}

fn cmd_sanitize(args: &SanitizeArgs, seed: u64) -> Result<()> {
    let setup = args.channel.setup(seed)?;
    let records = load_corpus(&args.input)?;
    let sanitized = sanitize_corpus(&records, &setup.vocab, &setup.channel, seed)?;
    let mut out = create(args.output.as_deref())?;
    write_corpus(&mut out, &sanitized)?;
    log::info!("sanitized {} sentences", sanitized.len());
    Ok(())
}

#[derive(Serialize)]
struct Reconstruction<'a> {
    id: u64,
    position: usize,
    original: &'a str,
    sanitized: &'a str,
    reconstructed: &'a str,
}

fn write_reconstructions(path: &Path, records: &[SentenceRecord], rec: &[Vec<String>]) -> Result<()> {
    let mut out = create(Some(path))?;
    for (record, tokens) in records.iter().zip(rec) {
        let sanitized = record.sanitized.as_ref().expect("checked");
        for i in record.sensitive_positions() {
            let line = Reconstruction {
                id: record.id,
                position: i,
                original: &record.tokens[i],
                sanitized: &sanitized[i],
                reconstructed: &tokens[i],
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_attack(args: &AttackArgs, seed: u64) -> Result<()> {
    let needs_shadow = matches!(args.method, Method::Bayes | Method::ContextualBayes);
    if needs_shadow && args.shadow.is_none() {
        return Err(usage("--shadow is required for the bayes and contextual-bayes methods"));
    }
    if args.method == Method::ContextualBayes {
        args.scorer.validate()?;
    }
    let setup = args.channel.setup(seed)?;
    let records = load_corpus(&args.input)?;
    sanitized_only(&records)?;
    let shadow = args.shadow.as_deref().map(load_corpus).transpose()?;

    let prior: PriorModel = match (&args.method, &shadow) {
        (Method::Optimal, _) => estimate_prior(&records, &setup.vocab, PriorMode::Exact)?,
        (_, Some(shadow)) => estimate_prior(shadow, &setup.vocab, PriorMode::ShadowSmoothed)?
            .with_smoothing_scale(args.smoothing_scale)?,
        (_, None) => PriorModel::uniform(setup.vocab.len()),
    };
    let scorer = match (&args.method, &shadow) {
        (Method::ContextualBayes, Some(shadow)) => {
            Some(train_scorer(&args.scorer.options(), shadow, &setup.vocab, &setup.channel, seed)?)
        }
        _ => None,
    };
    let attack = match args.method {
        Method::Optimal | Method::Bayes => Attack::ContextFree { prior: &prior },
        Method::ContextualBayes => {
            Attack::Contextual { prior: &prior, scorer: scorer.as_deref().expect("trained above"), k: args.scorer.k }
        }
        Method::EmbeddingInversion => Attack::EmbeddingInversion { embeddings: &setup.embeddings },
    };
    let start = Instant::now();
    let reconstructions = reconstruct_dataset(&records, &setup.vocab, &setup.channel, attack)?;
    let elapsed = start.elapsed().as_millis() as u64;
    let count = score_dataset(&records, &reconstructions)?;
    if let Some(path) = &args.output {
        write_reconstructions(path, &records, &reconstructions)?;
    }
    let method = Method::to_possible_value(&args.method).expect("named").get_name().to_owned();
    let mut report = AsrReport::new(method, args.channel.epsilon, seed, count);
    if args.method == Method::ContextualBayes {
        report.k = Some(args.scorer.k);
    }
    if needs_shadow {
        report.smoothing = Some(args.smoothing_scale);
    }
    if args.timing {
        report.elapsed_ms = elapsed;
    }
    write_json(args.report.as_deref(), &report)
}

fn cmd_bound(args: &BoundArgs, seed: u64) -> Result<()> {
    let contextual = args.bound == BoundType::ContextualK;
    if contextual {
        args.scorer.validate()?;
        if !matches!(args.scorer.scorer, Scorer::Constant) && args.shadow.is_none() {
            return Err(usage("--shadow is required to train the n-gram or detector scorer"));
        }
    }
    let setup = args.channel.setup(seed)?;
    let records = load_corpus(&args.input)?;
    sanitized_only(&records)?;
    let prior = estimate_prior(&records, &setup.vocab, PriorMode::Exact)?;
    let start = Instant::now();
    let (count, k) = if contextual {
        let shadow = args.shadow.as_deref().map(load_corpus).transpose()?.unwrap_or_default();
        let scorer = train_scorer(&args.scorer.options(), &shadow, &setup.vocab, &setup.channel, seed)?;
        let count = textrecon::eval::contextual_k_bound(
            &records,
            &setup.vocab,
            &setup.channel,
            &prior,
            scorer.as_ref(),
            args.scorer.k,
        )?;
        (count, Some(args.scorer.k))
    } else {
        (textrecon::eval::context_free_bound(&records, &setup.vocab, &setup.channel, &prior)?, None)
    };
    let method = if contextual { "contextual-k-bound" } else { "context-free-bound" };
    let mut report = AsrReport::new(method, args.channel.epsilon, seed, count);
    report.k = k;
    if args.timing {
        report.elapsed_ms = start.elapsed().as_millis() as u64;
    }
    write_json(args.report.as_deref(), &report)
}

fn cmd_sweep(args: &SweepArgs, seed: Option<u64>) -> Result<()> {
    let text =
        std::fs::read_to_string(&args.spec).map_err(|e| usage(format!("cannot read {}: {e}", args.spec.display())))?;
    let mut spec: SweepSpec =
        serde_json::from_str(&text).map_err(|e| usage(format!("invalid spec {}: {e}", args.spec.display())))?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    if let Some(e) = &args.epsilons {
        spec.epsilons = e.clone();
    }
    if let Some(r) = args.replications {
        spec.replications = r;
    }
    if let Some(r) = args.train_replications {
        spec.train_replications = r;
    }
    if args.detector_url.is_some() {
        spec.detector_url = args.detector_url.clone();
    }
    spec.timing |= args.timing;
    spec.validate()?;
    let (vocab, embeddings) = load_embeddings_with_vocab(open(&args.embeddings)?)
        .with_context(|| format!("reading {}", args.embeddings.display()))?;
    let corpus = load_corpus(&args.corpus)?;
    let report = run_sweep(&spec, &corpus, &vocab, &embeddings)?;
    write_report_json(create(args.output.as_deref())?, &report)?;
    if let Some(path) = &args.csv {
        write_report_csv(create(Some(path))?, &report.results)?;
    }
    let failed = report.results.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} of {} cells failed", report.results.len());
    }
    Ok(())
}

fn cmd_oracle(args: &OracleArgs, seed: u64) -> Result<()> {
    let summary = run_oracle(args.vocab_size, args.context_size, args.trials, seed)?;
    if let Some(path) = &args.output {
        write_json(Some(path), &summary)?;
    }
    println!("{}/{} optimal", summary.optimal, summary.trials);
    log::info!("largest gap to the enumerated optimum: {:e}", summary.max_gap);
    if summary.optimal != summary.trials {
        bail!("{} trial(s) were not optimal", summary.trials - summary.optimal);
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs, seed: u64) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => serde_json::from_reader(open(path)?)
            .map_err(|e| usage(format!("invalid synth config {}: {e}", path.display())))?,
        None => SynthConfig::default(),
    };
    config.seed = seed;
    let overrides = [
        (args.vocab_size, &mut config.vocab_size),
        (args.sentences, &mut config.sentences),
        (args.sentence_len, &mut config.sentence_len),
        (args.dim, &mut config.dim),
        (args.clusters, &mut config.clusters),
    ];
    for (value, slot) in overrides {
        if let Some(v) = value {
            *slot = v;
        }
    }
    for (value, slot) in [
        (args.coherence, &mut config.coherence),
        (args.zipf_exponent, &mut config.zipf_exponent),
        (args.sensitive_rate, &mut config.sensitive_rate),
    ] {
        if let Some(v) = value {
            *slot = v;
        }
    }
    let corpus = generate(&config)?;
    write_corpus(create(Some(&args.corpus))?, &corpus.records)?;
    let mut out = create(Some(&args.embeddings))?;
    corpus.embeddings.write_to(&mut out, &corpus.vocab)?;
    out.flush()?;
    Ok(())
}

fn cmd_samples(args: &SamplesArgs, seed: u64) -> Result<()> {
    if args.replications == 0 {
        return Err(usage("--replications must be positive"));
    }
    let setup = args.channel.setup(seed)?;
    let shadow = load_corpus(&args.input)?;
    let prior = estimate_prior(&shadow, &setup.vocab, PriorMode::ShadowSmoothed)?;
    let samples = build_detector_samples(&shadow, &setup.vocab, &setup.channel, &prior, args.replications, seed)?;
    write_detector_samples(create(args.output.as_deref())?, &samples)?;
    log::info!("wrote {} samples", samples.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Sanitize(a) => cmd_sanitize(a, seed),
        Command::Attack(a) => cmd_attack(a, seed),
        Command::Bound(a) => cmd_bound(a, seed),
        Command::Sweep(a) => cmd_sweep(a, cli.seed),
        Command::Oracle(a) => cmd_oracle(a, seed),
        Command::Synth(a) => cmd_synth(a, seed),
        Command::Samples(a) => cmd_samples(a, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new().filter_level(cli.log_level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
