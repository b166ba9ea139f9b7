//! Command-line front end. Every subcommand is a thin wrapper over library calls.
//!
//! Settings resolve as flag > environment variable > config file.
//! Exit codes: 0 success, 1 domain error, 2 usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::corpus::{Corpus, Layer};
use crate::gateway::{classify_batch, write_judgments};
use crate::metrics::{agreement_report, classification_report, MetricReport};
use crate::project::{BackendKind, Project, ProjectConfig, CONFIG_FILE};
use crate::prompts::Variant;
use crate::sampler::{balanced_split, confusion_partition, disagreement_sample, SampleSet, DEFAULT_RATIO};
use crate::service::group_labels;

type CliResult = Result<(), Box<dyn std::error::Error>>;

#[derive(Debug, Parser)]
#[command(name = "relabel", version, about = "Human-LLM re-annotation toolkit for speaker-attribute labels")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// Project config file (default: ./relabel.toml when present).
    #[arg(long, global = true, env = "RELABEL_CONFIG")]
    pub config: Option<PathBuf>,
    /// Directory holding the layer files, events and judgments.
    #[arg(long, global = true, env = "RELABEL_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a JSONL file and merge it into the project (or normalize it to --out).
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "original")]
        layer: Layer,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Assign label-wise balanced dev/test splits.
    Split {
        #[arg(long)]
        label: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        max_neg_per_pos: f64,
        #[arg(long, default_value = "original")]
        layer: Layer,
    },
    /// Run one prompt over a corpus file and write judgments as JSONL.
    Classify {
        #[arg(long)]
        label: String,
        #[arg(long, default_value = "full_rationale")]
        variant: Variant,
        #[arg(long)]
        version: Option<String>,
        #[command(flatten)]
        backend: BackendArgs,
        /// Input JSONL (default: the project's instances).
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        parallelism: usize,
    },
    /// Draw a disagreement-oversampled sample.
    Sample {
        #[arg(long)]
        label: String,
        #[arg(long)]
        budget: usize,
        #[arg(long, default_value_t = DEFAULT_RATIO)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "model")]
        pred_layer: Layer,
        #[arg(long, default_value = "original")]
        ref_layer: Layer,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Create a re-annotation batch from sample files or an id list.
    BatchCreate {
        #[arg(long = "sample")]
        samples: Vec<PathBuf>,
        /// File with one instance id per line.
        #[arg(long)]
        ids: Option<PathBuf>,
        #[arg(long, conflicts_with = "labels")]
        group: Option<LabelGroupArg>,
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        #[arg(long, default_value = "admin")]
        actor: String,
    },
    /// Positive-class precision/recall/F1 of one layer against another.
    Metrics {
        #[arg(long, default_value = "model")]
        pred_layer: Layer,
        #[arg(long, default_value = "final")]
        gold_layer: Layer,
        #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cohen's kappa per language and label between two layers.
    Kappa {
        #[arg(long, default_value = "original")]
        layer_a: Layer,
        #[arg(long, default_value = "final")]
        layer_b: Layer,
        #[arg(long, value_enum, default_value_t = ReportFormat::Matrix)]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one layer as JSONL.
    Export {
        #[arg(long)]
        layer: Layer,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, env = "RELABEL_PORT")]
        port: Option<u16>,
    },
    /// Ask the backend to summarize sampled examples into a rationale draft.
    DraftRationale {
        #[arg(long)]
        label: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Promote a reviewed draft to the next full_rationale prompt version.
    AcceptDraft {
        #[arg(long)]
        id: String,
        #[arg(long)]
        reviewer: String,
        /// Edited rationale text (default: the draft text unchanged).
        #[arg(long)]
        text_file: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum, env = "RELABEL_BACKEND")]
    pub backend: Option<BackendKind>,
    #[arg(long, env = "RELABEL_MODEL_ID")]
    pub model_id: Option<String>,
    /// Recorded responses for the stub backend.
    #[arg(long, env = "RELABEL_STUB_RESPONSES")]
    pub stub_responses: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LabelGroupArg {
    Demographic,
    Diet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    /// Long CSV: scope,label,metric,value,support.
    Csv,
    /// Rows are languages plus a Total row, columns are labels.
    Matrix,
    Json,
}

/// Run with process stdout/stderr and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn project_config(cli: &Cli) -> Result<ProjectConfig, Box<dyn std::error::Error>> {
    let mut config = match &cli.config {
        Some(p) => ProjectConfig::load(p)?,
        None if Path::new(CONFIG_FILE).exists() => ProjectConfig::load(CONFIG_FILE)?,
        None => ProjectConfig::at("."),
    };
    if let Some(d) = &cli.data_dir {
        config.data_dir = d.clone();
    }
    Ok(config)
}

fn apply_backend(config: &mut ProjectConfig, args: &BackendArgs) {
    if let Some(k) = args.backend {
        config.backend.kind = k;
    }
    if let Some(m) = &args.model_id {
        config.backend.model_id = m.clone();
    }
    if let Some(p) = &args.stub_responses {
        config.backend.stub_responses = Some(std::path::absolute(p).unwrap_or_else(|_| p.clone()));
    }
}

fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> CliResult {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn render(report: &MetricReport, format: ReportFormat, matrix_metric: &str) -> String {
    match format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Matrix => report.to_matrix_csv(matrix_metric),
        ReportFormat::Json => report.to_json() + "\n",
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> CliResult {
    let mut config = project_config(&cli)?;
    match cli.command {
        Command::Ingest { input, layer, out: target } => {
            let schema = config.load_schema()?;
            if let Some(target) = target {
                let corpus = Corpus::ingest_jsonl(&input, layer, &schema)?;
                let n = corpus.export_jsonl(layer, &target)?;
                writeln!(out, "{n} instances written to {}", target.display())?;
                return Ok(());
            }
            let mut project = Project::open(config)?;
            let n = project.store.merge_jsonl(&input, layer)?;
            project.save_store()?;
            writeln!(out, "{n} instances merged into layer {layer}; corpus has {}", project.store.len())?;
        }
        Command::Split { label, seed, max_neg_per_pos, layer } => {
            let mut project = Project::open(config)?;
            let split = balanced_split(&project.store, &label, layer, max_neg_per_pos, seed)?;
            split.apply(&mut project.store)?;
            project.save_store()?;
            writeln!(out, "{label}: dev {} test {}", split.dev.len(), split.test.len())?;
        }
        Command::Classify { label, variant, version, backend, input, out: target, parallelism } => {
            apply_backend(&mut config, &backend);
            let registry = config.open_prompts()?;
            let spec = registry.load(&label, variant, version.as_deref())?;
            let instances = match input {
                Some(p) => Corpus::ingest_jsonl(p, Layer::Original, &config.load_schema()?)?.instances().to_vec(),
                None => Project::open(config.clone())?.store.instances().to_vec(),
            };
            let backend = config.build_backend()?;
            let outcome = classify_batch(backend.as_ref(), &config.backend.to_config(), spec, &instances, parallelism);
            write_judgments(&target, &outcome.judgments)?;
            writeln!(out, "{} judgments written to {}", outcome.judgments.len(), target.display())?;
            if !outcome.errors.is_empty() {
                for f in &outcome.errors {
                    writeln!(out, "failed {}: {}", f.instance_id, f.error)?;
                }
                return Err(format!("{} instances could not be classified", outcome.errors.len()).into());
            }
        }
        Command::Sample { label, budget, ratio, seed, pred_layer, ref_layer, out: target } => {
            let project = Project::open(config)?;
            let partition = confusion_partition(&project.corpus, &label, pred_layer, ref_layer)?;
            let sample = disagreement_sample(&partition, budget, ratio, seed)?;
            let json = serde_json::to_string_pretty(&sample)? + "\n";
            emit(out, target.as_deref(), &json)?;
        }
        Command::BatchCreate { samples, ids, group, labels, actor } => {
            let mut project = Project::open(config)?;
            let labels = match group {
                Some(LabelGroupArg::Demographic) => group_labels("demographic").expect("known group"),
                Some(LabelGroupArg::Diet) => group_labels("diet").expect("known group"),
                None if !labels.is_empty() => labels,
                None => return Err("give --group or --labels".into()),
            };
            let mut sets = Vec::new();
            for p in &samples {
                let set: SampleSet = serde_json::from_str(&std::fs::read_to_string(p)?)?;
                sets.push(set);
            }
            let mut listed = Vec::new();
            if let Some(p) = &ids {
                listed.extend(
                    std::fs::read_to_string(p)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from),
                );
            }
            if sets.is_empty() && listed.is_empty() {
                return Err("give at least one --sample or --ids".into());
            }
            let all: Vec<&str> =
                sets.iter().flat_map(|s| s.ids.iter()).chain(listed.iter()).map(String::as_str).collect();
            let p = &mut project;
            let batch = if listed.is_empty() {
                p.workflow.create_batch_from_samples(&actor, &sets, &labels, &p.corpus)?
            } else {
                p.workflow.create_batch(&actor, all, &labels, &p.corpus)?
            };
            writeln!(out, "{} {} tasks", batch.batch_id, batch.tasks.len())?;
        }
        Command::Metrics { pred_layer, gold_layer, format, out: target } => {
            let project = Project::open(config)?;
            let report = classification_report(&project.corpus, &project.schema, pred_layer, gold_layer);
            emit(out, target.as_deref(), &render(&report, format, "f1"))?;
        }
        Command::Kappa { layer_a, layer_b, format, out: target } => {
            let project = Project::open(config)?;
            let report = agreement_report(&project.corpus, &project.schema, layer_a, layer_b);
            emit(out, target.as_deref(), &render(&report, format, "kappa"))?;
        }
        Command::Export { layer, out: target } => {
            let project = Project::open(config)?;
            let n = project.corpus.export_jsonl(layer, &target)?;
            writeln!(out, "{n} instances written to {}", target.display())?;
        }
        Command::Serve { port } => {
            let port = port.unwrap_or(config.port);
            let project = Project::open(config)?;
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            runtime.block_on(crate::service::serve(project, port))?;
        }
        Command::DraftRationale { label, seed, backend } => {
            apply_backend(&mut config, &backend);
            let project = Project::open(config)?;
            let mut registry = project.config.open_prompts()?;
            let b = project.config.build_backend()?;
            let draft = registry.draft_rationale_summary(
                b.as_ref(),
                &project.config.backend.to_config(),
                &label,
                &project.corpus,
                &project.schema,
                seed,
            )?;
            writeln!(out, "{}", serde_json::to_string_pretty(&draft)?)?;
        }
        Command::AcceptDraft { id, reviewer, text_file } => {
            let mut registry = config.open_prompts()?;
            let text = match text_file {
                Some(p) => std::fs::read_to_string(p)?,
                None => registry.draft(&id).ok_or_else(|| format!("unknown draft `{id}`"))?.draft_text.clone(),
            };
            let spec = registry.accept_draft(&id, &reviewer, &text)?;
            writeln!(out, "{}", spec.key())?;
        }
    }
    Ok(())
}
