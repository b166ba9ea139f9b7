//! Event-sourced re-annotation lifecycle.
//!
//! Every state change is first appended to an [`EventLog`] and then applied to
//! the in-memory [`WorkflowState`]; [`apply`] is the only mutation path, so
//! replaying a log reconstructs the state exactly.
//!
//! Lifecycle of one task:
//!
//! ```text
//! pending --judge--> judged --reveal--> revealed
//!             |  flag / audit            |
//!             v                          v
//!          flagged / audited --adjudicate--> adjudicated --finalize--> final
//! ```
//!
//! Model output for a task is unreachable while it is `pending`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, Layer};
use crate::gateway::{JudgmentIndex, ModelJudgment};
use crate::metrics::{agreement_report_for, MetricReport};
use crate::sampler::SampleSet;
use crate::schema::{binary_map, LabelSchema, LabelValues, SchemaError, Violation};

pub const DEMOGRAPHIC_GROUP: [&str; 6] = ["male", "female", "child", "adult", "elderly", "parent"];
pub const DIET_PERSONALITY_GROUP: [&str; 3] = ["meat-eater", "vegetarian", "serious"];

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("unknown batch `{0}`")]
    UnknownBatch(String),
    #[error("batch `{0}` already exists")]
    DuplicateBatch(String),
    #[error("unknown task `{batch}:{instance}`")]
    UnknownTask { batch: String, instance: String },
    #[error("model output for `{batch}:{instance}` is not available before the initial judgment")]
    Gating { batch: String, instance: String },
    #[error("task `{batch}:{instance}` was already judged")]
    AlreadyJudged { batch: String, instance: String },
    #[error("task `{batch}:{instance}` is {state:?}; {action} is not allowed")]
    InvalidTaskState { batch: String, instance: String, state: TaskState, action: &'static str },
    #[error("batch `{batch}` is {state:?}; {action} is not allowed")]
    InvalidBatchState { batch: String, state: BatchState, action: &'static str },
    #[error("label group is empty")]
    EmptyLabelGroup,
    #[error("batch has no instances")]
    EmptyBatch,
    #[error("label `{0}` appears twice in the label group")]
    DuplicateLabel(String),
    #[error("label `{0}` is not part of this batch")]
    LabelNotInBatch(String),
    #[error("judgment is missing labels {0:?}")]
    MissingLabels(Vec<String>),
    #[error("instance `{0}` is not in the corpus")]
    UnknownInstance(String),
    #[error("language `{language}` in this batch is assigned to `{assigned}`")]
    AnnotatorConflict { language: String, assigned: String },
    #[error("note must not be empty")]
    EmptyNote,
    #[error("an override decision requires a note")]
    MissingOverrideNote,
    #[error("task `{batch}:{instance}` is neither flagged nor audited")]
    NotAdjudicable { batch: String, instance: String },
    #[error("final values violate the label schema: {0:?}")]
    SchemaViolation(Vec<Violation>),
    #[error("batch cannot be finalized: {0:?}")]
    FinalizeBlocked(Vec<BlockedTask>),
    #[error("audit fraction must be in (0, 1], got {0}")]
    BadFraction(f64),
    #[error("event log expected sequence {expected}, got {actual}")]
    SequenceConflict { expected: u64, actual: u64 },
    #[error("event log line {line}: {message}")]
    CorruptLog { line: usize, message: String },
    #[error("replaying event {seq}: {message}")]
    Replay { seq: u64, message: String },
    #[error("event log io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchState {
    Open,
    Annotating,
    Qc,
    Finalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Pending,
    Judged,
    Revealed,
    Flagged,
    Audited,
    Adjudicated,
    Final,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagNote {
    pub annotator: String,
    pub note: String,
    pub seq: u64,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjudication {
    #[serde(with = "binary_map::option", default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<LabelValues>,
    pub adjudicator: String,
    pub note: String,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub batch_id: String,
    pub instance_id: String,
    pub language: String,
    pub state: TaskState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator: Option<String>,
    #[serde(with = "binary_map::option", default, skip_serializing_if = "Option::is_none")]
    pub human_values: Option<LabelValues>,
    pub warnings: Vec<Violation>,
    pub flags: Vec<FlagNote>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judged_seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reveal_seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reveal_timestamp: Option<String>,
    pub audited: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjudication: Option<Adjudication>,
    #[serde(with = "binary_map::option", default, skip_serializing_if = "Option::is_none")]
    pub final_values: Option<LabelValues>,
}

impl TaskRecord {
    pub fn task_id(&self) -> String {
        task_id(&self.batch_id, &self.instance_id)
    }

    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }

    /// Flagged or audited and still awaiting a decision.
    pub fn needs_adjudication(&self) -> bool {
        (self.is_flagged() || self.audited) && self.adjudication.is_none()
    }
}

/// `"<batch>:<instance>"`; batch ids never contain `:`.
pub fn task_id(batch_id: &str, instance_id: &str) -> String {
    format!("{batch_id}:{instance_id}")
}

pub fn parse_task_id(id: &str) -> Option<(&str, &str)> {
    id.split_once(':')
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub batch_id: String,
    pub label_group: Vec<String>,
    pub instance_ids: Vec<String>,
    pub state: BatchState,
    /// Primary annotator per language.
    pub annotators: BTreeMap<String, String>,
    pub tasks: BTreeMap<String, TaskRecord>,
}

impl Batch {
    pub fn task(&self, instance_id: &str) -> Option<&TaskRecord> {
        self.tasks.get(instance_id)
    }

    /// Tasks in batch order.
    pub fn ordered_tasks(&self) -> impl Iterator<Item = &TaskRecord> {
        self.instance_ids.iter().filter_map(|id| self.tasks.get(id))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowState {
    pub batches: BTreeMap<String, Batch>,
    pub last_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSeed {
    pub instance_id: String,
    pub language: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRef {
    pub label_id: String,
    pub seed: u64,
    pub budget: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    BatchCreated {
        batch_id: String,
        label_group: Vec<String>,
        tasks: Vec<TaskSeed>,
        #[serde(default)]
        samples: Vec<SampleRef>,
    },
    JudgmentSubmitted {
        batch_id: String,
        instance_id: String,
        #[serde(with = "binary_map")]
        values: LabelValues,
        warnings: Vec<Violation>,
    },
    ModelRevealed {
        batch_id: String,
        instance_id: String,
    },
    Flagged {
        batch_id: String,
        instance_id: String,
        note: String,
    },
    QcStarted {
        batch_id: String,
    },
    AuditSampled {
        batch_id: String,
        fraction: f64,
        seed: u64,
        targeted: bool,
        random: Vec<String>,
        disagreements: Vec<String>,
    },
    Adjudicated {
        batch_id: String,
        instance_id: String,
        #[serde(with = "binary_map::option", default)]
        decision: Option<LabelValues>,
        note: String,
        #[serde(with = "binary_map")]
        final_values: LabelValues,
    },
    BatchFinalized {
        batch_id: String,
    },
}

impl EventKind {
    pub fn batch_id(&self) -> &str {
        match self {
            EventKind::BatchCreated { batch_id, .. }
            | EventKind::JudgmentSubmitted { batch_id, .. }
            | EventKind::ModelRevealed { batch_id, .. }
            | EventKind::Flagged { batch_id, .. }
            | EventKind::QcStarted { batch_id }
            | EventKind::AuditSampled { batch_id, .. }
            | EventKind::Adjudicated { batch_id, .. }
            | EventKind::BatchFinalized { batch_id } => batch_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowEvent {
    pub seq: u64,
    pub timestamp: String,
    pub actor: String,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Append-only JSONL event log. Each append is flushed and fsynced.
#[derive(Debug, Default)]
pub struct EventLog {
    path: Option<PathBuf>,
    file: Option<File>,
    events: Vec<WorkflowEvent>,
}

impl EventLog {
    pub fn in_memory() -> Self {
        EventLog::default()
    }

    /// Open (creating if needed) a log file and read its events. A trailing
    /// partial line without a newline, left by an interrupted append, is discarded.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, WorkflowError> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let mut events = Vec::new();
        let mut good_len = 0u64;
        if path.exists() {
            let mut reader = BufReader::new(File::open(path)?);
            let mut line = String::new();
            let mut n = 0;
            loop {
                line.clear();
                let read = reader.read_line(&mut line)?;
                if read == 0 {
                    break;
                }
                n += 1;
                if !line.ends_with('\n') {
                    break;
                }
                if !line.trim().is_empty() {
                    let event: WorkflowEvent = serde_json::from_str(&line)
                        .map_err(|e| WorkflowError::CorruptLog { line: n, message: e.to_string() })?;
                    let expected = events.len() as u64 + 1;
                    if event.seq != expected {
                        return Err(WorkflowError::SequenceConflict { expected, actual: event.seq });
                    }
                    events.push(event);
                }
                good_len += read as u64;
            }
        }
        let file = OpenOptions::new().create(true).append(true).read(true).open(path)?;
        if file.metadata()?.len() > good_len {
            file.set_len(good_len)?;
        }
        Ok(EventLog { path: Some(path.to_path_buf()), file: Some(file), events })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn events(&self) -> &[WorkflowEvent] {
        &self.events
    }

    pub fn next_seq(&self) -> u64 {
        self.events.len() as u64 + 1
    }

    /// Append `event` if its sequence number is exactly the next one.
    pub fn append(&mut self, event: WorkflowEvent) -> Result<&WorkflowEvent, WorkflowError> {
        let expected = self.next_seq();
        if event.seq != expected {
            return Err(WorkflowError::SequenceConflict { expected, actual: event.seq });
        }
        if let Some(file) = &mut self.file {
            let mut line = serde_json::to_string(&event).expect("event serializes");
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
            file.sync_data()?;
        }
        self.events.push(event);
        Ok(self.events.last().expect("just pushed"))
    }
}

/// Fold one event into the state. Events are validated before they are
/// logged, so failures here mean the log itself is inconsistent.
pub fn apply(state: &mut WorkflowState, event: &WorkflowEvent) -> Result<(), WorkflowError> {
    let replay = |message: String| WorkflowError::Replay { seq: event.seq, message };
    if event.seq != state.last_seq + 1 {
        return Err(replay(format!("expected sequence {}", state.last_seq + 1)));
    }
    let batch_id = event.kind.batch_id().to_string();
    if let EventKind::BatchCreated { label_group, tasks, .. } = &event.kind {
        if state.batches.contains_key(&batch_id) {
            return Err(replay(format!("batch `{batch_id}` created twice")));
        }
        let records = tasks
            .iter()
            .map(|t| {
                let record = TaskRecord {
                    batch_id: batch_id.clone(),
                    instance_id: t.instance_id.clone(),
                    language: t.language.clone(),
                    state: TaskState::Pending,
                    annotator: None,
                    human_values: None,
                    warnings: Vec::new(),
                    flags: Vec::new(),
                    judged_seq: None,
                    reveal_seq: None,
                    reveal_timestamp: None,
                    audited: false,
                    adjudication: None,
                    final_values: None,
                };
                (t.instance_id.clone(), record)
            })
            .collect();
        state.batches.insert(
            batch_id.clone(),
            Batch {
                batch_id,
                label_group: label_group.clone(),
                instance_ids: tasks.iter().map(|t| t.instance_id.clone()).collect(),
                state: BatchState::Open,
                annotators: BTreeMap::new(),
                tasks: records,
            },
        );
        state.last_seq = event.seq;
        return Ok(());
    }

    let batch = state.batches.get_mut(&batch_id).ok_or_else(|| replay(format!("unknown batch `{batch_id}`")))?;
    let missing = |id: &str| replay(format!("unknown task `{id}`"));
    match &event.kind {
        EventKind::BatchCreated { .. } => unreachable!("handled above"),
        EventKind::JudgmentSubmitted { instance_id, values, warnings, .. } => {
            let task = batch.tasks.get_mut(instance_id).ok_or_else(|| missing(instance_id))?;
            task.state = TaskState::Judged;
            task.annotator = Some(event.actor.clone());
            task.human_values = Some(values.clone());
            task.warnings = warnings.clone();
            task.judged_seq = Some(event.seq);
            let language = task.language.clone();
            batch.annotators.entry(language).or_insert_with(|| event.actor.clone());
            if batch.state == BatchState::Open {
                batch.state = BatchState::Annotating;
            }
        }
        EventKind::ModelRevealed { instance_id, .. } => {
            let task = batch.tasks.get_mut(instance_id).ok_or_else(|| missing(instance_id))?;
            if task.reveal_seq.is_none() {
                task.reveal_seq = Some(event.seq);
                task.reveal_timestamp = Some(event.timestamp.clone());
            }
            if matches!(task.state, TaskState::Judged | TaskState::Flagged) {
                task.state = TaskState::Revealed;
            }
        }
        EventKind::Flagged { instance_id, note, .. } => {
            let task = batch.tasks.get_mut(instance_id).ok_or_else(|| missing(instance_id))?;
            task.flags.push(FlagNote {
                annotator: event.actor.clone(),
                note: note.clone(),
                seq: event.seq,
                timestamp: event.timestamp.clone(),
            });
            task.state = TaskState::Flagged;
        }
        EventKind::QcStarted { .. } => batch.state = BatchState::Qc,
        EventKind::AuditSampled { random, disagreements, .. } => {
            for id in random.iter().chain(disagreements) {
                let task = batch.tasks.get_mut(id).ok_or_else(|| missing(id))?;
                task.audited = true;
                if matches!(task.state, TaskState::Judged | TaskState::Revealed) {
                    task.state = TaskState::Audited;
                }
            }
        }
        EventKind::Adjudicated { instance_id, decision, note, final_values, .. } => {
            let task = batch.tasks.get_mut(instance_id).ok_or_else(|| missing(instance_id))?;
            task.adjudication = Some(Adjudication {
                decision: decision.clone(),
                adjudicator: event.actor.clone(),
                note: note.clone(),
                seq: event.seq,
            });
            task.final_values = Some(final_values.clone());
            task.state = TaskState::Adjudicated;
        }
        EventKind::BatchFinalized { .. } => {
            for task in batch.tasks.values_mut() {
                if task.final_values.is_none() {
                    task.final_values = task.human_values.clone();
                }
                task.state = TaskState::Final;
            }
            batch.state = BatchState::Finalized;
        }
    }
    state.last_seq = event.seq;
    Ok(())
}

/// Rebuild state from a sequence of events.
pub fn replay(events: &[WorkflowEvent]) -> Result<WorkflowState, WorkflowError> {
    let mut state = WorkflowState::default();
    for e in events {
        apply(&mut state, e)?;
    }
    Ok(state)
}

/// Check that every task's first reveal comes after its first judgment.
/// Returns the offending `(batch, instance, reveal seq)` entries.
pub fn gating_violations(events: &[WorkflowEvent]) -> Vec<(String, String, u64)> {
    let mut judged: BTreeSet<(String, String)> = BTreeSet::new();
    let mut out = Vec::new();
    for e in events {
        match &e.kind {
            EventKind::JudgmentSubmitted { batch_id, instance_id, .. } => {
                judged.insert((batch_id.clone(), instance_id.clone()));
            }
            EventKind::ModelRevealed { batch_id, instance_id }
                if !judged.contains(&(batch_id.clone(), instance_id.clone())) =>
            {
                out.push((batch_id.clone(), instance_id.clone(), e.seq));
            }
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockReason {
    Unjudged,
    AwaitingAdjudication,
    SchemaViolation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockedTask {
    pub instance_id: String,
    pub reason: BlockReason,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalizeOutcome {
    pub batch_id: String,
    pub finalized: usize,
    /// Cohen's kappa, original vs. final, over the batch's instances and labels.
    pub agreement: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchProgress {
    pub batch_id: String,
    pub state: BatchState,
    pub total: usize,
    pub by_state: BTreeMap<TaskState, usize>,
    pub awaiting_adjudication: usize,
    /// Positive human judgments per label.
    pub positives: BTreeMap<String, usize>,
}

type Clock = Box<dyn Fn() -> String + Send + Sync>;

fn utc_now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// The workflow engine: a schema, an event log and the state derived from it.
pub struct Workflow {
    schema: LabelSchema,
    log: EventLog,
    state: WorkflowState,
    clock: Clock,
}

impl std::fmt::Debug for Workflow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workflow").field("log", &self.log.path()).field("state", &self.state).finish()
    }
}

impl Workflow {
    pub fn in_memory(schema: LabelSchema) -> Self {
        Workflow { schema, log: EventLog::in_memory(), state: WorkflowState::default(), clock: Box::new(utc_now) }
    }

    /// Open a log file and replay it.
    pub fn open(path: impl AsRef<Path>, schema: LabelSchema) -> Result<Self, WorkflowError> {
        let log = EventLog::open(path)?;
        let state = replay(log.events())?;
        Ok(Workflow { schema, log, state, clock: Box::new(utc_now) })
    }

    /// Replace the timestamp source, e.g. with a fixed clock in tests.
    pub fn with_clock(mut self, clock: impl Fn() -> String + Send + Sync + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    pub fn schema(&self) -> &LabelSchema {
        &self.schema
    }

    pub fn state(&self) -> &WorkflowState {
        &self.state
    }

    pub fn events(&self) -> &[WorkflowEvent] {
        self.log.events()
    }

    /// Canonical JSON of the derived state.
    pub fn state_json(&self) -> String {
        serde_json::to_string(&self.state).expect("state serializes")
    }

    pub fn batch(&self, batch_id: &str) -> Result<&Batch, WorkflowError> {
        self.state.batches.get(batch_id).ok_or_else(|| WorkflowError::UnknownBatch(batch_id.to_string()))
    }

    pub fn batches(&self) -> impl Iterator<Item = &Batch> {
        self.state.batches.values()
    }

    pub fn task(&self, batch_id: &str, instance_id: &str) -> Result<&TaskRecord, WorkflowError> {
        self.batch(batch_id)?.tasks.get(instance_id).ok_or_else(|| WorkflowError::UnknownTask {
            batch: batch_id.to_string(),
            instance: instance_id.to_string(),
        })
    }

    fn record(&mut self, actor: &str, kind: EventKind) -> Result<(), WorkflowError> {
        let event =
            WorkflowEvent { seq: self.log.next_seq(), timestamp: (self.clock)(), actor: actor.to_string(), kind };
        let mut next = self.state.clone();
        apply(&mut next, &event)?;
        self.log.append(event)?;
        self.state = next;
        Ok(())
    }

    fn open_batch(&self, batch_id: &str, action: &'static str) -> Result<&Batch, WorkflowError> {
        let batch = self.batch(batch_id)?;
        if batch.state == BatchState::Finalized {
            return Err(WorkflowError::InvalidBatchState { batch: batch_id.to_string(), state: batch.state, action });
        }
        Ok(batch)
    }

    /// Create a batch with one pending task per instance id (duplicates collapse).
    pub fn create_batch<'a>(
        &mut self,
        actor: &str,
        instance_ids: impl IntoIterator<Item = &'a str>,
        label_group: &[String],
        corpus: &Corpus,
    ) -> Result<&Batch, WorkflowError> {
        self.create_batch_with(actor, instance_ids, label_group, corpus, Vec::new())
    }

    /// Create a batch from the union of one or more sample sets.
    pub fn create_batch_from_samples(
        &mut self,
        actor: &str,
        samples: &[SampleSet],
        label_group: &[String],
        corpus: &Corpus,
    ) -> Result<&Batch, WorkflowError> {
        let refs = samples
            .iter()
            .map(|s| SampleRef { label_id: s.label_id.clone(), seed: s.seed, budget: s.budget })
            .collect();
        let ids: Vec<&str> = samples.iter().flat_map(|s| s.ids.iter().map(String::as_str)).collect();
        self.create_batch_with(actor, ids, label_group, corpus, refs)
    }

    fn create_batch_with<'a>(
        &mut self,
        actor: &str,
        instance_ids: impl IntoIterator<Item = &'a str>,
        label_group: &[String],
        corpus: &Corpus,
        samples: Vec<SampleRef>,
    ) -> Result<&Batch, WorkflowError> {
        if label_group.is_empty() {
            return Err(WorkflowError::EmptyLabelGroup);
        }
        let mut seen = BTreeSet::new();
        for label in label_group {
            if !seen.insert(label) {
                return Err(WorkflowError::DuplicateLabel(label.clone()));
            }
        }
        self.schema.ensure_known(label_group.iter().map(String::as_str))?;
        let mut tasks = Vec::new();
        let mut ids = BTreeSet::new();
        for id in instance_ids {
            if !ids.insert(id) {
                continue;
            }
            let inst = corpus.instance(id).ok_or_else(|| WorkflowError::UnknownInstance(id.to_string()))?;
            tasks.push(TaskSeed { instance_id: id.to_string(), language: inst.language.clone() });
        }
        if tasks.is_empty() {
            return Err(WorkflowError::EmptyBatch);
        }
        let batch_id = format!("b{}", self.state.batches.len() + 1);
        if self.state.batches.contains_key(&batch_id) {
            return Err(WorkflowError::DuplicateBatch(batch_id));
        }
        self.record(
            actor,
            EventKind::BatchCreated { batch_id: batch_id.clone(), label_group: label_group.to_vec(), tasks, samples },
        )?;
        self.batch(&batch_id)
    }

    /// Record an annotator's initial, independent judgment.
    /// Schema violations are attached as warnings; they do not block submission.
    pub fn submit_judgment(
        &mut self,
        batch_id: &str,
        instance_id: &str,
        annotator: &str,
        values: &LabelValues,
    ) -> Result<&TaskRecord, WorkflowError> {
        let batch = self.open_batch(batch_id, "judging")?;
        let task = self.task(batch_id, instance_id)?;
        if task.state != TaskState::Pending {
            return Err(WorkflowError::AlreadyJudged { batch: batch_id.into(), instance: instance_id.into() });
        }
        self.schema.ensure_known(values.keys().map(String::as_str))?;
        if let Some(extra) = values.keys().find(|k| !batch.label_group.contains(k)) {
            return Err(WorkflowError::LabelNotInBatch(extra.clone()));
        }
        let missing: Vec<String> = batch.label_group.iter().filter(|l| !values.contains_key(*l)).cloned().collect();
        if !missing.is_empty() {
            return Err(WorkflowError::MissingLabels(missing));
        }
        if let Some(assigned) = batch.annotators.get(&task.language) {
            if assigned != annotator {
                return Err(WorkflowError::AnnotatorConflict {
                    language: task.language.clone(),
                    assigned: assigned.clone(),
                });
            }
        }
        let mut warnings = self.schema.validate_within(values, &batch.label_group)?;
        for w in &mut warnings {
            w.instance_id = Some(instance_id.to_string());
        }
        self.record(
            annotator,
            EventKind::JudgmentSubmitted {
                batch_id: batch_id.into(),
                instance_id: instance_id.into(),
                values: values.clone(),
                warnings,
            },
        )?;
        self.task(batch_id, instance_id)
    }

    /// Model judgments for the batch labels; refused while the task is pending.
    pub fn reveal_model(
        &mut self,
        batch_id: &str,
        instance_id: &str,
        actor: &str,
        judgments: &JudgmentIndex,
    ) -> Result<Vec<ModelJudgment>, WorkflowError> {
        let task = self.task(batch_id, instance_id)?;
        if task.state == TaskState::Pending {
            return Err(WorkflowError::Gating { batch: batch_id.into(), instance: instance_id.into() });
        }
        let labels = self.batch(batch_id)?.label_group.clone();
        self.record(actor, EventKind::ModelRevealed { batch_id: batch_id.into(), instance_id: instance_id.into() })?;
        Ok(labels.iter().filter_map(|l| judgments.get(instance_id, l).cloned()).collect())
    }

    /// Mark a judged task as ambiguous; it joins the adjudication queue.
    pub fn flag(
        &mut self,
        batch_id: &str,
        instance_id: &str,
        annotator: &str,
        note: &str,
    ) -> Result<&TaskRecord, WorkflowError> {
        self.open_batch(batch_id, "flagging")?;
        if note.trim().is_empty() {
            return Err(WorkflowError::EmptyNote);
        }
        let task = self.task(batch_id, instance_id)?;
        if matches!(task.state, TaskState::Pending | TaskState::Adjudicated | TaskState::Final) {
            return Err(WorkflowError::InvalidTaskState {
                batch: batch_id.into(),
                instance: instance_id.into(),
                state: task.state,
                action: "flagging",
            });
        }
        self.record(
            annotator,
            EventKind::Flagged { batch_id: batch_id.into(), instance_id: instance_id.into(), note: note.into() },
        )?;
        self.task(batch_id, instance_id)
    }

    /// Move a batch into quality control.
    pub fn start_qc(&mut self, batch_id: &str, actor: &str) -> Result<&Batch, WorkflowError> {
        let batch = self.batch(batch_id)?;
        if !matches!(batch.state, BatchState::Open | BatchState::Annotating) {
            return Err(WorkflowError::InvalidBatchState {
                batch: batch_id.into(),
                state: batch.state,
                action: "starting qc",
            });
        }
        self.record(actor, EventKind::QcStarted { batch_id: batch_id.into() })?;
        self.batch(batch_id)
    }

    /// Select judged tasks for expert review: a seeded uniform sample of
    /// `ceil(fraction * judged)` tasks, plus (when `targeted`) every task whose
    /// human values disagree with a stored model judgment on a batch label.
    pub fn audit_sample(
        &mut self,
        batch_id: &str,
        actor: &str,
        fraction: f64,
        targeted: bool,
        seed: u64,
        judgments: &JudgmentIndex,
    ) -> Result<Vec<String>, WorkflowError> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(WorkflowError::BadFraction(fraction));
        }
        let batch = self.batch(batch_id)?;
        if batch.state != BatchState::Qc {
            return Err(WorkflowError::InvalidBatchState {
                batch: batch_id.into(),
                state: batch.state,
                action: "audit sampling",
            });
        }
        let mut judged: Vec<String> =
            batch.tasks.values().filter(|t| t.human_values.is_some()).map(|t| t.instance_id.clone()).collect();
        judged.sort();
        let k = ((fraction * judged.len() as f64) - 1e-9).ceil().max(0.0) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut random: Vec<String> = judged.choose_multiple(&mut rng, k.min(judged.len())).cloned().collect();
        random.sort();
        let mut disagreements = Vec::new();
        if targeted {
            let chosen: BTreeSet<&String> = random.iter().collect();
            for id in &judged {
                if chosen.contains(id) {
                    continue;
                }
                let human = batch.tasks[id].human_values.as_ref().expect("judged");
                let disagrees = batch.label_group.iter().any(|l| match (human.get(l), judgments.get(id, l)) {
                    (Some(h), Some(m)) => *h != m.score,
                    _ => false,
                });
                if disagrees {
                    disagreements.push(id.clone());
                }
            }
        }
        let selected: Vec<String> = random.iter().chain(&disagreements).cloned().collect();
        self.record(
            actor,
            EventKind::AuditSampled { batch_id: batch_id.into(), fraction, seed, targeted, random, disagreements },
        )?;
        Ok(selected)
    }

    /// Decide the final values of a flagged or audited task.
    ///
    /// Without a `decision` the annotator's values are kept. A decision
    /// overrides the listed labels and requires a note. Final values must
    /// satisfy the schema.
    pub fn adjudicate(
        &mut self,
        batch_id: &str,
        instance_id: &str,
        adjudicator: &str,
        decision: Option<&LabelValues>,
        note: &str,
    ) -> Result<&TaskRecord, WorkflowError> {
        let batch = self.open_batch(batch_id, "adjudication")?;
        let task = self.task(batch_id, instance_id)?;
        if !(task.is_flagged() || task.audited) {
            return Err(WorkflowError::NotAdjudicable { batch: batch_id.into(), instance: instance_id.into() });
        }
        if task.adjudication.is_some() {
            return Err(WorkflowError::InvalidTaskState {
                batch: batch_id.into(),
                instance: instance_id.into(),
                state: task.state,
                action: "adjudicating twice",
            });
        }
        let human = task.human_values.clone().expect("flagged or audited tasks are judged");
        let final_values = match decision {
            None => human,
            Some(d) => {
                if note.trim().is_empty() {
                    return Err(WorkflowError::MissingOverrideNote);
                }
                self.schema.ensure_known(d.keys().map(String::as_str))?;
                if let Some(extra) = d.keys().find(|k| !batch.label_group.contains(k)) {
                    return Err(WorkflowError::LabelNotInBatch(extra.clone()));
                }
                let mut merged = human;
                merged.extend(d.iter().map(|(k, v)| (k.clone(), *v)));
                merged
            }
        };
        let violations = self.schema.validate_within(&final_values, &batch.label_group)?;
        if !violations.is_empty() {
            return Err(WorkflowError::SchemaViolation(violations));
        }
        self.record(
            adjudicator,
            EventKind::Adjudicated {
                batch_id: batch_id.into(),
                instance_id: instance_id.into(),
                decision: decision.cloned(),
                note: note.into(),
                final_values,
            },
        )?;
        self.task(batch_id, instance_id)
    }

    /// Tasks that keep finalization from going through.
    pub fn finalize_blockers(&self, batch_id: &str) -> Result<Vec<BlockedTask>, WorkflowError> {
        let batch = self.batch(batch_id)?;
        let mut blocked = Vec::new();
        for task in batch.ordered_tasks() {
            let block = |reason, violations| BlockedTask { instance_id: task.instance_id.clone(), reason, violations };
            let Some(human) = &task.human_values else {
                blocked.push(block(BlockReason::Unjudged, Vec::new()));
                continue;
            };
            if task.needs_adjudication() {
                blocked.push(block(BlockReason::AwaitingAdjudication, Vec::new()));
                continue;
            }
            let values = task.final_values.as_ref().unwrap_or(human);
            let violations = self.schema.validate_within(values, &batch.label_group)?;
            if !violations.is_empty() {
                blocked.push(block(BlockReason::SchemaViolation, violations));
            }
        }
        Ok(blocked)
    }

    /// Finalize a batch: unflagged, unaudited tasks take their human values,
    /// adjudicated tasks their decided values. Writes `human` and `final`
    /// layers into `corpus` and returns the original-vs-final kappa report.
    pub fn finalize_batch(
        &mut self,
        batch_id: &str,
        actor: &str,
        corpus: &mut Corpus,
    ) -> Result<FinalizeOutcome, WorkflowError> {
        self.open_batch(batch_id, "finalization")?;
        let blocked = self.finalize_blockers(batch_id)?;
        if !blocked.is_empty() {
            return Err(WorkflowError::FinalizeBlocked(blocked));
        }
        self.record(actor, EventKind::BatchFinalized { batch_id: batch_id.into() })?;
        let finalized = self.write_layers(batch_id, corpus)?;
        let batch = self.batch(batch_id)?;
        let subset = corpus.subset(batch.instance_ids.iter().map(String::as_str));
        let agreement = agreement_report_for(&subset, &batch.label_group, Layer::Original, Layer::Final);
        Ok(FinalizeOutcome { batch_id: batch_id.into(), finalized, agreement })
    }

    fn write_layers(&self, batch_id: &str, corpus: &mut Corpus) -> Result<usize, WorkflowError> {
        let batch = self.batch(batch_id)?;
        let stamp = self
            .log
            .events()
            .iter()
            .rev()
            .find(|e| matches!(&e.kind, EventKind::BatchFinalized { batch_id: b } if b == batch_id))
            .map(|e| e.timestamp.clone());
        let mut n = 0;
        for task in batch.ordered_tasks() {
            let (Some(human), Some(final_values)) = (&task.human_values, &task.final_values) else { continue };
            let annotator = task.annotator.as_deref().unwrap_or("unknown");
            corpus.set_values(&task.instance_id, Layer::Human, human, annotator, stamp.as_deref())?;
            let by = task.adjudication.as_ref().map(|a| a.adjudicator.as_str()).unwrap_or(annotator);
            corpus.set_values(&task.instance_id, Layer::Final, final_values, by, stamp.as_deref())?;
            n += 1;
        }
        Ok(n)
    }

    /// Write `human` and `final` layers of every finalized batch into `corpus`.
    pub fn apply_finalized(&self, corpus: &mut Corpus) -> Result<usize, WorkflowError> {
        let ids: Vec<String> =
            self.batches().filter(|b| b.state == BatchState::Finalized).map(|b| b.batch_id.clone()).collect();
        let mut n = 0;
        for id in ids {
            n += self.write_layers(&id, corpus)?;
        }
        Ok(n)
    }

    /// First pending task the annotator may take: its language is unassigned
    /// in this batch or assigned to them.
    pub fn next_task(&self, batch_id: &str, annotator: &str) -> Result<Option<&TaskRecord>, WorkflowError> {
        let batch = self.batch(batch_id)?;
        Ok(batch.ordered_tasks().find(|t| {
            t.state == TaskState::Pending && batch.annotators.get(&t.language).is_none_or(|a| a == annotator)
        }))
    }

    pub fn adjudication_queue(&self, batch_id: &str) -> Result<Vec<&TaskRecord>, WorkflowError> {
        Ok(self.batch(batch_id)?.ordered_tasks().filter(|t| t.needs_adjudication()).collect())
    }

    pub fn progress(&self, batch_id: &str) -> Result<BatchProgress, WorkflowError> {
        let batch = self.batch(batch_id)?;
        let mut by_state = BTreeMap::new();
        let mut positives: BTreeMap<String, usize> = batch.label_group.iter().map(|l| (l.clone(), 0)).collect();
        for t in batch.tasks.values() {
            *by_state.entry(t.state).or_insert(0) += 1;
            for (label, v) in t.human_values.iter().flatten() {
                if *v {
                    *positives.entry(label.clone()).or_insert(0) += 1;
                }
            }
        }
        Ok(BatchProgress {
            batch_id: batch_id.into(),
            state: batch.state,
            total: batch.tasks.len(),
            by_state,
            awaiting_adjudication: batch.tasks.values().filter(|t| t.needs_adjudication()).count(),
            positives,
        })
    }

    /// Values currently standing for each judged task: final when decided, else human.
    pub fn current_values(&self, batch_id: &str) -> Result<BTreeMap<String, LabelValues>, WorkflowError> {
        Ok(self
            .batch(batch_id)?
            .tasks
            .values()
            .filter_map(|t| {
                t.final_values.as_ref().or(t.human_values.as_ref()).map(|v| (t.instance_id.clone(), v.clone()))
            })
            .collect())
    }
}
