//! Toolkit for human-LLM collaborative re-annotation of multilingual
//! speaker-attribute labels.
//!
//! The crate is organised around the stages of a re-annotation campaign:
//!
//! - [`corpus`]: JSONL ingest/export of instances and their label layers
//!   (`original`, `model`, `human`, `final`).
//! - [`schema`]: the nine binary attributes and their exclusion / implication rules.
//! - [`gateway`]: chat prompt assembly, pluggable model backends and the
//!   `RATIONALE:` / `SCORE:` response protocol.
//! - [`prompts`]: a versioned prompt registry and human-gated rationale drafting.
//! - [`sampler`]: confusion partitions, disagreement-oversampled subsets and
//!   balanced dev/test splits.
//! - [`metrics`]: positive-class P/R/F1, macro-F1, accuracy, Cohen's and Fleiss' kappa,
//!   and per-language x per-label reports.
//! - [`workflow`]: the event-sourced batch lifecycle with reveal-after-judgment
//!   gating, flags, audits and conservative adjudication.
//! - [`project`]: `relabel.toml`, the on-disk layout and the derived corpus view.
//! - [`service`] and [`cli`]: the HTTP JSON API and the command line front end.

pub mod cli;
pub mod corpus;
pub mod gateway;
pub mod metrics;
pub mod project;
pub mod prompts;
pub mod sampler;
pub mod schema;
pub mod service;
pub mod workflow;

pub use corpus::{Corpus, CorpusError, Filter, Instance, LabelAssignment, Layer, Split};
pub use gateway::{Backend, BackendConfig, ChatMessage, GatewayError, ModelJudgment, Role, StubBackend};
pub use metrics::{ConfusionCounts, Kappa, MetricReport};
pub use prompts::{PromptRegistry, PromptSpec, RationaleDraft, Variant};
pub use sampler::{ConfusionPartition, SampleSet};
pub use schema::{LabelRule, LabelSchema, LabelValues, Violation};
pub use workflow::{Workflow, WorkflowError};
