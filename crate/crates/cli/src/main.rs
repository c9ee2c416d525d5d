use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use slant_core::corpus::{self, Alignment, Corpus, RecordKind, Selection, SummaryRecord, Topic, Workspace};
use slant_core::lexicon::{bias_table, distribution, pool_tables, BiasTable, Ideology, Tokenizer};
use slant_core::monoculture::{consistency_index, transfer_matrix, ModelCorpus};
use slant_core::report::audit::{cell_seed, FeaturizerConfig};
use slant_core::report::{markdown, render_heatmap, run_audit, AuditRunConfig, CsvArtifact, HeatmapOptions};
use slant_core::separability::{diff, polarization_report, CellId, Contrast, CvConfig};
use slant_core::summarygen::{
    self, Decoding, GenerateOptions, HttpBackend, RetryPolicy, TemplateSet, DEFAULT_API_KEY_ENV,
};
use slant_core::synth::{generate_corpus, SynthCorpusSpec};
use slant_core::Error;

#[derive(Parser)]
#[command(name = "slant", version, about = "Measure partisan lean in LLM-generated news summaries")]
struct Cli {
    /// Workspace directory holding the corpus files.
    #[arg(long, global = true, default_value = ".")]
    workspace: PathBuf,

    /// Base seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and append article or summary JSONL files.
    Ingest {
        #[arg(long)]
        articles: Option<PathBuf>,
        #[arg(long)]
        summaries: Option<PathBuf>,
    },
    /// Corpus statistics and summary lengths.
    Stats {
        #[arg(long)]
        topic: Option<String>,
        /// Emit JSON instead of tables.
        #[arg(long)]
        json: bool,
    },
    /// Generate the three alignment-conditioned summaries per article.
    Generate(GenerateArgs),
    /// Token bias scores and top-N lists.
    Lexicon {
        #[arg(long)]
        topic: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        threshold: u64,
        /// Write the full table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Separability and the polarization index grid.
    Polarize {
        #[arg(long, value_delimiter = ',')]
        topics: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        #[command(flatten)]
        features: FeatureArgs,
        #[arg(long)]
        allow_missing: bool,
        /// Directory for grid and summary CSVs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-model homogeneity measures.
    Monoculture {
        #[command(subcommand)]
        which: MonocultureCommand,
    },
    /// Write a synthetic workspace from a spec file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every analysis and write a hashed artifact bundle.
    Audit {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum MonocultureCommand {
    /// Overlap of the models' top-N token sets.
    Vocab {
        #[arg(long, value_enum)]
        ideology: Side,
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        threshold: u64,
        #[arg(long)]
        topic: Option<String>,
        /// Output stem; writes STEM.csv and STEM.svg.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-model classifier transfer accuracies.
    Transfer {
        #[arg(long, value_enum)]
        contrast: Side,
        #[arg(long)]
        topic: Option<String>,
        #[command(flatten)]
        features: FeatureArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Side {
    Democrat,
    Republican,
}

impl Side {
    fn ideology(self) -> Ideology {
        match self {
            Side::Democrat => Ideology::Democrat,
            Side::Republican => Ideology::Republican,
        }
    }

    fn contrast(self) -> Contrast {
        match self {
            Side::Democrat => Contrast::NeutralVsDemocrat,
            Side::Republican => Contrast::NeutralVsRepublican,
        }
    }
}

#[derive(Args)]
struct FeatureArgs {
    /// JSONL of precomputed summary embeddings; hashed n-grams otherwise.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

impl FeatureArgs {
    fn config(&self) -> FeaturizerConfig {
        match &self.embeddings {
            Some(path) => FeaturizerConfig::Embeddings { path: path.clone() },
            None => FeaturizerConfig::default(),
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    model: String,
    /// Chat-completions URL.
    #[arg(long)]
    endpoint: String,
    /// Name of the environment variable holding the API key.
    #[arg(long, default_value = DEFAULT_API_KEY_ENV)]
    api_key_env: String,
    /// JSON file with `neutral`, `democrat` and `republican` templates.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = 512)]
    max_tokens: u32,
    #[arg(long, default_value_t = 3)]
    max_attempts: u32,
    #[arg(long, default_value_t = 120)]
    timeout_secs: u64,
}

fn cell_records<'a>(
    corpus: &'a Corpus,
    topic: Option<&Topic>,
    model: &str,
    alignment: Alignment,
) -> slant_core::Result<Vec<&'a SummaryRecord>> {
    let mut sel = Selection::default().model(model).alignment(alignment);
    if let Some(t) = topic {
        sel = sel.topic(t);
    }
    corpus.select(&sel)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::MissingData(_) | Error::EmptyDistribution(_)) => 3,
        Some(Error::Io { .. } | Error::Json(_) | Error::Csv(_) | Error::Locked(_)) => 1,
        Some(_) => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Ingest { articles, summaries } => {
            if articles.is_none() && summaries.is_none() {
                return Err(Error::Config("pass --articles and/or --summaries".into()).into());
            }
            let ws = Workspace::open(&cli.workspace)?;
            for (path, kind) in [(articles, RecordKind::Articles), (summaries, RecordKind::Summaries)] {
                if let Some(path) = path {
                    let r = ws.ingest(&path, kind)?;
                    println!(
                        "{}: {} accepted, {} duplicate",
                        path.display(),
                        r.accepted,
                        r.duplicate_lines.len()
                    );
                }
            }
        }
        Command::Stats { topic, json } => {
            let corpus = Workspace::open(&cli.workspace)?.load()?;
            let topic = topic.map(Topic::new);
            let s = corpus::stats(&corpus, topic.as_ref())?;
            if json {
                println!("{}", serde_json::to_string_pretty(&s)?);
            } else {
                print!("{}", markdown::stats_table(&s.topics));
                println!();
                print!("{}", markdown::length_table(&summarygen::summary_length_report(&corpus)));
                if !s.articles_per_year.is_empty() {
                    println!();
                    for (year, n) in &s.articles_per_year {
                        println!("{year}: {n}");
                    }
                }
            }
        }
        Command::Generate(args) => generate(&cli.workspace, args)?,
        Command::Lexicon { topic, model, n, threshold, out } => {
            let corpus = Workspace::open(&cli.workspace)?.load()?;
            let mut sel = Selection::default();
            if let Some(t) = &topic {
                sel = sel.topic(&Topic::new(t));
            }
            if let Some(m) = &model {
                sel = sel.model(m);
            }
            let tok = Tokenizer::default();
            let dem = corpus.select(&sel.clone().alignment(Alignment::Democrat))?;
            let rep = corpus.select(&sel.alignment(Alignment::Republican))?;
            let table = bias_table(
                &distribution("democrat", &dem, &tok)?,
                &distribution("republican", &rep, &tok)?,
                n,
                threshold,
            )?;
            print_top(&table);
            if let Some(path) = out {
                table.to_csv().with_meta("seed", seed).write(&path)?;
            }
        }
        Command::Polarize { topics, models, features, allow_missing, out } => {
            let corpus = Workspace::open(&cli.workspace)?.load()?;
            let topics: Vec<String> = if topics.is_empty() {
                corpus.topics_present().iter().map(|t| t.to_string()).collect()
            } else {
                topics
            };
            let models: Vec<String> = if models.is_empty() {
                corpus.model_ids().into_iter().collect()
            } else {
                models
            };
            if topics.is_empty() || models.is_empty() {
                return Err(Error::MissingData("no summaries to analyse".into()).into());
            }
            let featurizer = features.config().build()?;
            let mut results = Vec::new();
            for t in &topics {
                let topic = Topic::new(t);
                for m in &models {
                    let neutral = cell_records(&corpus, Some(&topic), m, Alignment::Neutral)?;
                    for c in Contrast::BOTH {
                        let aligned = cell_records(&corpus, Some(&topic), m, c.aligned())?;
                        match diff(CellId::new(t, m, c), &neutral, &aligned, &featurizer, cell_seed(seed, t, m)) {
                            Ok(r) => results.push(r),
                            Err(e) if allow_missing && e.is_missing_data() => log::warn!("{e}"),
                            Err(e) => return Err(e.into()),
                        }
                    }
                }
            }
            let report = polarization_report(&results, &topics, &models, allow_missing)?;
            report.verify_topic_summary()?;
            print!("{}", markdown::polarization_table(&report));
            println!();
            print!("{}", markdown::topic_summary_table(&report));
            if let Some(dir) = out {
                fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                results.to_csv().with_meta("seed", seed).write(&dir.join("separability.csv"))?;
                report.to_csv().with_meta("seed", seed).write(&dir.join("grid.csv"))?;
                report.topic_summary.to_csv().with_meta("seed", seed).write(&dir.join("summary.csv"))?;
            }
        }
        Command::Monoculture { which } => monoculture(&cli.workspace, seed, which)?,
        Command::Synth { spec, out } => {
            let raw = fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let bad = |e: serde_json::Error| Error::Config(format!("{}: {e}", spec.display()));
            let value: serde_json::Value = serde_json::from_str(&raw).map_err(bad)?;
            // A seed in the spec file wins over the global flag.
            let has_seed = value.get("seed").is_some();
            let mut parsed: SynthCorpusSpec = serde_json::from_value(value).map_err(bad)?;
            if !has_seed {
                parsed.spec.seed = seed;
            }
            let corpus = generate_corpus(&parsed)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let ws = Workspace::open(&out)?;
            ws.write_topics(corpus.topics())?;
            ws.save(&corpus)?;
            println!(
                "wrote {} articles and {} summaries to {}",
                corpus.article_count(),
                corpus.summary_count(),
                out.display()
            );
        }
        Command::Audit { config } => {
            let cfg = AuditRunConfig::load(&config)?;
            let manifest = run_audit(&cfg)?;
            println!("{} files written to {}", manifest.files.len(), cfg.out_dir.display());
            println!("run sha256 {}", manifest.run_sha256);
        }
    }
    Ok(())
}

fn print_top(table: &BiasTable) {
    for ideology in Ideology::BOTH {
        println!("{} (top {}):", ideology.as_str(), table.n);
        for token in table.top(ideology) {
            println!("  {token}\t{:+.6}", table.score(token).unwrap_or_default());
        }
    }
}

fn generate(workspace: &Path, args: GenerateArgs) -> anyhow::Result<()> {
    if args.concurrency == 0 {
        return Err(Error::Config("concurrency must be at least 1".into()).into());
    }
    let ws = Workspace::open(workspace)?;
    let templates = match &args.templates {
        Some(path) => TemplateSet::load(path)?,
        None => TemplateSet::default(),
    };
    let timeout = Duration::from_secs(args.timeout_secs);
    let backend = HttpBackend::new(&args.endpoint, timeout, Some(&args.api_key_env));
    let options = GenerateOptions {
        model_id: args.model,
        decoding: Decoding { temperature: args.temperature, max_tokens: args.max_tokens },
        retry: RetryPolicy { max_attempts: args.max_attempts, request_timeout: timeout, ..RetryPolicy::default() },
        concurrency: args.concurrency,
    };
    let outcome = summarygen::generate(&ws, &backend, &templates, &options)?;
    let c = outcome.counts;
    println!("done {}, skipped {}, failed {}", c.done, c.skipped, c.failed);
    if c.failed > 0 {
        bail!("{} generation jobs failed; rerun to retry them", c.failed);
    }
    Ok(())
}

fn monoculture(workspace: &Path, seed: u64, which: MonocultureCommand) -> anyhow::Result<()> {
    let corpus = Workspace::open(workspace)?.load()?;
    let models: Vec<String> = corpus.model_ids().into_iter().collect();
    match which {
        MonocultureCommand::Vocab { ideology, n, threshold, topic, out } => {
            let topics: Vec<Topic> = match topic {
                Some(t) => vec![Topic::new(t)],
                None => corpus.topics_present(),
            };
            let tok = Tokenizer::default();
            let mut pooled: BTreeMap<String, BiasTable> = BTreeMap::new();
            for m in &models {
                let mut own = Vec::new();
                for t in &topics {
                    let dem = cell_records(&corpus, Some(t), m, Alignment::Democrat)?;
                    let rep = cell_records(&corpus, Some(t), m, Alignment::Republican)?;
                    if dem.is_empty() || rep.is_empty() {
                        continue;
                    }
                    own.push(bias_table(
                        &distribution("democrat", &dem, &tok)?,
                        &distribution("republican", &rep, &tok)?,
                        n,
                        threshold,
                    )?);
                }
                if !own.is_empty() {
                    let refs: Vec<&BiasTable> = own.iter().collect();
                    pooled.insert(m.clone(), pool_tables(&refs, n)?);
                }
            }
            let refs: Vec<(&str, &BiasTable)> = pooled.iter().map(|(m, t)| (m.as_str(), t)).collect();
            let ci = consistency_index(&refs, ideology.ideology(), true)?;
            print!("{}", ci.to_csv().with_meta("seed", seed).render()?);
            println!("overall_mean {:.4}", ci.overall_mean);
            println!("off_diagonal_mean {:.4}", ci.off_diagonal_mean);
            if let Some(stem) = out {
                ci.to_csv().with_meta("seed", seed).write(&stem.with_extension("csv"))?;
                let svg = render_heatmap(
                    &ci.overlap.matrix,
                    &HeatmapOptions {
                        title: format!("Top-{n} {} token overlap (%)", ci.overlap.ideology.as_str()),
                        description: vec![format!("seed={seed}"), ci.note.clone()],
                        decimals: 2,
                    },
                )?;
                fs::write(stem.with_extension("svg"), svg).context("writing heatmap")?;
            }
        }
        MonocultureCommand::Transfer { contrast, topic, features, out } => {
            let contrast = contrast.contrast();
            let topic = topic.map(Topic::new);
            let featurizer = features.config().build()?;
            let corpora = models
                .iter()
                .map(|m| {
                    Ok(ModelCorpus {
                        model_id: m.clone(),
                        neutral: cell_records(&corpus, topic.as_ref(), m, Alignment::Neutral)?,
                        aligned: cell_records(&corpus, topic.as_ref(), m, contrast.aligned())?,
                    })
                })
                .collect::<slant_core::Result<Vec<_>>>()?;
            let tm = transfer_matrix(&corpora, contrast, &featurizer, seed, &CvConfig::default())?;
            print!("{}", tm.to_csv().render()?);
            println!("diagonal_mean {:.4}", tm.diagonal_mean);
            println!("off_diagonal_mean {:.4}", tm.off_diagonal_mean);
            if let Some(path) = out {
                tm.to_csv().write(&path)?;
            }
        }
    }
    Ok(())
}
