//! On-disk project layout and configuration.
//!
//! A project is a TOML file plus the files it points at:
//!
//! ```toml
//! data_dir = "data"            # corpus store: data/<layer>.jsonl
//! port = 8080
//! # schema = "schema.json"     # default: built-in label set
//! # prompts = "data/prompts"   # prompt registry directory
//! # events = "data/events.jsonl"
//! # judgments = "data/judgments"  # every *.jsonl in here feeds the model layer
//!
//! [backend]
//! kind = "stub"                # or "openai"
//! model_id = "gpt-4.1"
//! api_key_env = "OPENAI_API_KEY"
//! stub_responses = "recorded.jsonl"
//!
//! [[tokens]]
//! token = "s3cret"
//! actor = "alice"
//! role = "annotator"
//! ```
//!
//! Relative paths resolve against the directory holding the config file.
//! The `human` and `final` layers of finalized batches are derived from the
//! event log on every load, so the log and the layer files are the only state.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, Layer};
use crate::gateway::{self, Backend, BackendConfig, GatewayError, JudgmentIndex, OpenAiBackend, StubBackend};
use crate::prompts::{PromptError, PromptRegistry};
use crate::schema::{LabelSchema, SchemaError};
use crate::workflow::{Workflow, WorkflowError};

pub const CONFIG_FILE: &str = "relabel.toml";
pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("reading config {path}: {source}")]
    ReadConfig { path: String, source: std::io::Error },
    #[error("config {path}: {message}")]
    Config { path: String, message: String },
    #[error("io on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Stub,
    Openai,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiRole {
    Annotator,
    Adjudicator,
    Admin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenEntry {
    pub token: String,
    pub actor: String,
    pub role: ApiRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    #[serde(default)]
    pub kind: BackendKind,
    #[serde(default = "default_model")]
    pub model_id: String,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub max_retries: Option<u32>,
    #[serde(default)]
    pub timeout_secs: Option<f64>,
    #[serde(default)]
    pub stub_responses: Option<PathBuf>,
}

fn default_model() -> String {
    "stub".into()
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            kind: BackendKind::Stub,
            model_id: default_model(),
            endpoint: None,
            api_key_env: None,
            temperature: 0.0,
            max_retries: None,
            timeout_secs: None,
            stub_responses: None,
        }
    }
}

impl BackendSection {
    pub fn to_config(&self) -> BackendConfig {
        let mut c = BackendConfig::new(&self.model_id);
        c.endpoint = self.endpoint.clone();
        c.api_key_env = self.api_key_env.clone();
        c.temperature = self.temperature;
        if let Some(r) = self.max_retries {
            c.max_retries = r;
        }
        if let Some(t) = self.timeout_secs.and_then(|t| Duration::try_from_secs_f64(t).ok()) {
            c.timeout = t;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    #[serde(skip)]
    pub root: PathBuf,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default)]
    pub schema: Option<PathBuf>,
    #[serde(default)]
    pub prompts: Option<PathBuf>,
    #[serde(default)]
    pub events: Option<PathBuf>,
    #[serde(default)]
    pub judgments: Option<PathBuf>,
    #[serde(default)]
    pub languages: Option<Vec<String>>,
    #[serde(default = "default_port")]
    pub port: u16,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub tokens: Vec<TokenEntry>,
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}

fn default_port() -> u16 {
    DEFAULT_PORT
}

impl ProjectConfig {
    /// Defaults rooted at `root`, as if an empty config file lived there.
    pub fn at(root: impl Into<PathBuf>) -> Self {
        let mut c: ProjectConfig = toml::from_str("").expect("empty config parses");
        c.root = root.into();
        c
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProjectError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ProjectError::ReadConfig { path: path.display().to_string(), source })?;
        let mut c: ProjectConfig = toml::from_str(&text)
            .map_err(|e| ProjectError::Config { path: path.display().to_string(), message: e.to_string() })?;
        c.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(c)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.resolve(&self.data_dir)
    }

    pub fn layer_path(&self, layer: Layer) -> PathBuf {
        self.data_dir().join(format!("{}.jsonl", layer.as_str()))
    }

    pub fn prompts_dir(&self) -> PathBuf {
        self.prompts.as_deref().map(|p| self.resolve(p)).unwrap_or_else(|| self.data_dir().join("prompts"))
    }

    pub fn events_path(&self) -> PathBuf {
        self.events.as_deref().map(|p| self.resolve(p)).unwrap_or_else(|| self.data_dir().join("events.jsonl"))
    }

    pub fn judgments_dir(&self) -> PathBuf {
        self.judgments.as_deref().map(|p| self.resolve(p)).unwrap_or_else(|| self.data_dir().join("judgments"))
    }

    pub fn load_schema(&self) -> Result<LabelSchema, ProjectError> {
        Ok(match &self.schema {
            Some(p) => LabelSchema::load(self.resolve(p))?,
            None => LabelSchema::default(),
        })
    }

    pub fn open_prompts(&self) -> Result<PromptRegistry, ProjectError> {
        Ok(PromptRegistry::open(self.prompts_dir())?)
    }

    pub fn token(&self, token: &str) -> Option<&TokenEntry> {
        self.tokens.iter().find(|t| t.token == token)
    }

    /// Construct the configured backend. API keys are read from the
    /// environment at this point and never written anywhere.
    pub fn build_backend(&self) -> Result<Box<dyn Backend>, ProjectError> {
        let b = &self.backend;
        Ok(match b.kind {
            BackendKind::Stub => match &b.stub_responses {
                Some(p) => Box::new(StubBackend::from_jsonl(&b.model_id, self.resolve(p))?),
                None => Box::new(StubBackend::new(&b.model_id)),
            },
            BackendKind::Openai => Box::new(OpenAiBackend::from_config(&b.to_config())?),
        })
    }
}

/// Everything a command or the service needs, loaded from a config.
#[derive(Debug)]
pub struct Project {
    pub config: ProjectConfig,
    pub schema: LabelSchema,
    /// Persisted layer files only.
    pub store: Corpus,
    /// `store` plus stored judgments (model layer) and finalized batches
    /// (human and final layers).
    pub corpus: Corpus,
    pub judgments: JudgmentIndex,
    pub workflow: Workflow,
}

impl Project {
    pub fn open(config: ProjectConfig) -> Result<Self, ProjectError> {
        let schema = config.load_schema()?;
        let mut store = Corpus::new(&schema);
        if let Some(langs) = &config.languages {
            store = store.with_languages(langs.clone());
        }
        for layer in Layer::ALL {
            let path = config.layer_path(layer);
            if path.exists() {
                store.merge_jsonl(&path, layer)?;
            }
        }
        let mut judgments = Vec::new();
        let dir = config.judgments_dir();
        if dir.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
                .map_err(|source| ProjectError::Io { path: dir.display().to_string(), source })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            files.sort();
            for f in files {
                judgments.extend(gateway::read_judgments(&f)?);
            }
        }
        let workflow = Workflow::open(config.events_path(), schema.clone())?;
        let mut project =
            Project { config, schema, corpus: store.clone(), store, judgments: JudgmentIndex::default(), workflow };
        project.judgments.extend(judgments);
        project.refresh()?;
        Ok(project)
    }

    /// Rebuild the derived corpus view after `store` or the judgments changed.
    pub fn refresh(&mut self) -> Result<(), ProjectError> {
        let mut corpus = self.store.clone();
        let known: Vec<_> = self.judgments.iter().filter(|j| corpus.instance(&j.instance_id).is_some()).collect();
        gateway::record_judgments(&mut corpus, known)?;
        self.workflow.apply_finalized(&mut corpus)?;
        self.corpus = corpus;
        Ok(())
    }

    /// Write every non-empty layer of `store` back to its file.
    pub fn save_store(&self) -> Result<(), ProjectError> {
        let dir = self.config.data_dir();
        std::fs::create_dir_all(&dir).map_err(|source| ProjectError::Io { path: dir.display().to_string(), source })?;
        for layer in Layer::ALL {
            let has_any = self.store.all_assignments().any(|a| a.layer == layer);
            if layer == Layer::Original || has_any {
                self.store.export_jsonl(layer, self.config.layer_path(layer))?;
            }
        }
        Ok(())
    }
}
