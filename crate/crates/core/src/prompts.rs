//! Versioned per-label prompt specifications and human-gated rationale drafting.
//!
//! On disk a registry is a directory laid out as
//! `<root>/<label>/<variant>/<version>.json`, each file holding
//! `{label, variant, version, system, demo_user?, demo_assistant?}`.
//! Drafts live under `<root>/_drafts/`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Layer};
use crate::gateway::{Backend, BackendConfig, ChatMessage, CompletionRequest, GatewayError, Role};
use crate::schema::LabelSchema;

/// Registry label of the summarisation meta-prompt.
pub const META_SUMMARIZE: &str = "meta/summarize";
/// Per-polarity cap on examples sent for rationale drafting.
pub const DRAFT_SAMPLE_CAP: usize = 50;
/// Response format appended to accepted rationale text that does not state one.
pub const OUTPUT_FORMAT: &str = "Output format:\nRATIONALE:\nSCORE: 0 or 1";

const DRAFTS_DIR: &str = "_drafts";

const BUILTIN: &[&str] = &[
    include_str!("../prompts/male/definition_only/v1.json"),
    include_str!("../prompts/female/definition_only/v1.json"),
    include_str!("../prompts/child/definition_only/v1.json"),
    include_str!("../prompts/adult/definition_only/v1.json"),
    include_str!("../prompts/elderly/definition_only/v1.json"),
    include_str!("../prompts/parent/definition_only/v1.json"),
    include_str!("../prompts/meat-eater/definition_only/v1.json"),
    include_str!("../prompts/meat-eater/full_rationale/v1.json"),
    include_str!("../prompts/meat-eater/sampling_era/v1.json"),
    include_str!("../prompts/vegetarian/definition_only/v1.json"),
    include_str!("../prompts/serious/definition_only/v1.json"),
    include_str!("../prompts/meta/summarize/full_rationale/v1.json"),
];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("no prompt for ({label}, {variant}); available: {}", available.join(", "))]
    UnknownEntry { label: String, variant: Variant, available: Vec<String> },
    #[error("no version `{version}` for ({label}, {variant})")]
    UnknownVersion { label: String, variant: Variant, version: String },
    #[error("prompt ({label}, {variant}, {version}) already exists")]
    Duplicate { label: String, variant: Variant, version: String },
    #[error("invalid prompt spec: {0}")]
    Invalid(String),
    #[error("label `{label}` has no {polarity} instances in the original layer")]
    EmptyPool { label: String, polarity: &'static str },
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("unknown draft `{0}`")]
    UnknownDraft(String),
    #[error("draft `{id}` is {status:?}, expected pending_review")]
    DraftNotPending { id: String, status: DraftStatus },
    #[error("invalid variant `{0}`")]
    ParseVariant(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Full operational rationale with rules and corner cases.
    FullRationale,
    /// Only the general label definition plus a format demonstration.
    DefinitionOnly,
    /// Zero-shot prompt used to produce predictions for disagreement sampling.
    SamplingEra,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::FullRationale, Variant::DefinitionOnly, Variant::SamplingEra];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::FullRationale => "full_rationale",
            Variant::DefinitionOnly => "definition_only",
            Variant::SamplingEra => "sampling_era",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| PromptError::ParseVariant(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub label: String,
    pub variant: Variant,
    pub version: String,
    pub system: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demo_user: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demo_assistant: Option<String>,
}

impl PromptSpec {
    pub fn is_meta(&self) -> bool {
        self.label.starts_with("meta/")
    }

    pub fn has_demo(&self) -> bool {
        self.demo_user.is_some()
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.label.is_empty() || self.version.is_empty() {
            return Err(PromptError::Invalid("label and version must be non-empty".into()));
        }
        if self.system.trim().is_empty() {
            return Err(PromptError::Invalid(format!("{}: empty system text", self.key())));
        }
        if !self.is_meta() {
            for marker in ["RATIONALE", "SCORE"] {
                if !self.system.contains(marker) {
                    return Err(PromptError::Invalid(format!("{}: system text lacks the {marker} marker", self.key())));
                }
            }
        }
        match (&self.demo_user, &self.demo_assistant) {
            (Some(u), Some(a)) if u.is_empty() || a.is_empty() => {
                Err(PromptError::Invalid(format!("{}: empty demonstration turn", self.key())))
            }
            (Some(_), None) | (None, Some(_)) => Err(PromptError::Invalid(format!(
                "{}: demo_user and demo_assistant must be given together",
                self.key()
            ))),
            _ => Ok(()),
        }
    }

    pub fn key(&self) -> String {
        format!("{}/{}/{}", self.label, self.variant, self.version)
    }
}

/// `v<N>` versions compare numerically; anything else falls back to string order.
#[derive(Debug, Clone, PartialEq, Eq)]
struct VersionKey(String);

impl VersionKey {
    fn number(&self) -> Option<u64> {
        self.0.strip_prefix('v').and_then(|n| n.parse().ok())
    }
}

impl Ord for VersionKey {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.number(), other.number()) {
            (Some(a), Some(b)) => a.cmp(&b).then_with(|| self.0.cmp(&other.0)),
            (Some(_), None) => Ordering::Greater,
            (None, Some(_)) => Ordering::Less,
            (None, None) => self.0.cmp(&other.0),
        }
    }
}

impl PartialOrd for VersionKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DraftStatus {
    PendingReview,
    Accepted,
    Rejected,
}

/// LLM-produced summary of labeling cues, awaiting expert review.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RationaleDraft {
    pub id: String,
    pub label_id: String,
    pub positive_ids: Vec<String>,
    pub negative_ids: Vec<String>,
    pub seed: u64,
    pub meta_prompt_version: String,
    pub draft_text: String,
    pub status: DraftStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reviewer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted_version: Option<String>,
}

type Versions = BTreeMap<VersionKey, PromptSpec>;

#[derive(Debug, Clone, Default)]
pub struct PromptRegistry {
    root: Option<PathBuf>,
    specs: BTreeMap<(String, Variant), Versions>,
    drafts: BTreeMap<String, RationaleDraft>,
}

impl PromptRegistry {
    /// In-memory registry seeded with the prompts shipped in the crate.
    pub fn builtin() -> Self {
        let mut reg = PromptRegistry::default();
        for text in BUILTIN {
            let spec: PromptSpec = serde_json::from_str(text).expect("builtin prompt parses");
            reg.insert_unpersisted(spec).expect("builtin prompt is valid");
        }
        reg
    }

    /// Open a registry directory. A missing directory is created and seeded
    /// with the builtin prompts.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, PromptError> {
        let root = root.into();
        if !root.exists() {
            let mut reg = PromptRegistry::builtin();
            reg.root = Some(root);
            for spec in reg.specs.values().flat_map(|v| v.values()) {
                reg.persist_spec(spec)?;
            }
            return Ok(reg);
        }
        let mut reg = PromptRegistry { root: Some(root.clone()), ..Default::default() };
        let mut files = Vec::new();
        collect_json(&root, &mut files)?;
        files.sort();
        for path in files {
            let rel = path.strip_prefix(&root).unwrap_or(&path);
            if rel.starts_with(DRAFTS_DIR) {
                let draft: RationaleDraft = read_json(&path)?;
                reg.drafts.insert(draft.id.clone(), draft);
            } else if rel.components().count() >= 3 {
                let spec: PromptSpec = read_json(&path)?;
                reg.insert_unpersisted(spec)?;
            }
        }
        Ok(reg)
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    fn insert_unpersisted(&mut self, spec: PromptSpec) -> Result<(), PromptError> {
        spec.validate()?;
        let versions = self.specs.entry((spec.label.clone(), spec.variant)).or_default();
        let key = VersionKey(spec.version.clone());
        if versions.contains_key(&key) {
            return Err(PromptError::Duplicate { label: spec.label, variant: spec.variant, version: spec.version });
        }
        versions.insert(key, spec);
        Ok(())
    }

    /// Add a new version. Existing (label, variant, version) triples are never replaced.
    pub fn insert(&mut self, spec: PromptSpec) -> Result<(), PromptError> {
        self.insert_unpersisted(spec.clone())?;
        self.persist_spec(&spec)
    }

    fn persist_spec(&self, spec: &PromptSpec) -> Result<(), PromptError> {
        let Some(root) = &self.root else { return Ok(()) };
        let path = root.join(&spec.label).join(spec.variant.as_str()).join(format!("{}.json", spec.version));
        write_json(&path, spec)
    }

    fn persist_draft(&self, draft: &RationaleDraft) -> Result<(), PromptError> {
        let Some(root) = &self.root else { return Ok(()) };
        let path = root.join(DRAFTS_DIR).join(format!("{}.json", draft.id.replace('/', "_")));
        write_json(&path, draft)
    }

    /// The named version, or the highest version when `version` is `None`.
    pub fn load(&self, label: &str, variant: Variant, version: Option<&str>) -> Result<&PromptSpec, PromptError> {
        let versions = self.specs.get(&(label.to_string(), variant)).filter(|v| !v.is_empty()).ok_or_else(|| {
            PromptError::UnknownEntry { label: label.to_string(), variant, available: self.available() }
        })?;
        match version {
            None => Ok(versions.values().next_back().expect("non-empty")),
            Some(v) => versions.get(&VersionKey(v.to_string())).ok_or_else(|| PromptError::UnknownVersion {
                label: label.to_string(),
                variant,
                version: v.to_string(),
            }),
        }
    }

    pub fn contains(&self, label: &str, variant: Variant, version: &str) -> bool {
        self.load(label, variant, Some(version)).is_ok()
    }

    /// `label/variant` entries present in the registry.
    pub fn available(&self) -> Vec<String> {
        self.specs.keys().map(|(l, v)| format!("{l}/{v}")).collect()
    }

    pub fn versions(&self, label: &str, variant: Variant) -> Vec<String> {
        self.specs
            .get(&(label.to_string(), variant))
            .map(|v| v.keys().map(|k| k.0.clone()).collect())
            .unwrap_or_default()
    }

    pub fn specs(&self) -> impl Iterator<Item = &PromptSpec> {
        self.specs.values().flat_map(|v| v.values())
    }

    pub fn draft(&self, id: &str) -> Option<&RationaleDraft> {
        self.drafts.get(id)
    }

    pub fn drafts(&self) -> impl Iterator<Item = &RationaleDraft> {
        self.drafts.values()
    }

    /// Sample up to 50 positive and 50 negative original-layer instances for
    /// `label_id` and ask the backend to summarise their cues. The result is
    /// stored as a pending draft; it is never accepted automatically.
    pub fn draft_rationale_summary(
        &mut self,
        backend: &dyn Backend,
        config: &BackendConfig,
        label_id: &str,
        corpus: &Corpus,
        schema: &LabelSchema,
        seed: u64,
    ) -> Result<RationaleDraft, PromptError> {
        let definition = schema.definition(label_id).ok_or_else(|| PromptError::UnknownLabel(label_id.to_string()))?;
        let (positives, negatives) = draft_sample(corpus, label_id, seed);
        if positives.is_empty() {
            return Err(PromptError::EmptyPool { label: label_id.to_string(), polarity: "positive" });
        }
        if negatives.is_empty() {
            return Err(PromptError::EmptyPool { label: label_id.to_string(), polarity: "negative" });
        }
        let meta = self.load(META_SUMMARIZE, Variant::FullRationale, None)?.clone();

        let mut user =
            format!("Label: {label_id}\nCurrent definition: {}\n\nPositive examples:\n", definition.definition);
        let push = |ids: &[String], user: &mut String| {
            for id in ids {
                let inst = corpus.instance(id).expect("sampled from corpus");
                user.push_str(&format!("- [{}] {}\n", inst.language, inst.text));
            }
        };
        push(&positives, &mut user);
        user.push_str("\nNegative examples:\n");
        push(&negatives, &mut user);

        let messages = vec![ChatMessage::new(Role::System, &meta.system), ChatMessage::new(Role::User, user)];
        let draft_text = backend.complete(&CompletionRequest {
            instance_id: None,
            messages: &messages,
            temperature: config.temperature,
            timeout: config.timeout,
        })?;

        let n = self.drafts.values().filter(|d| d.label_id == label_id).count() + 1;
        let draft = RationaleDraft {
            id: format!("{label_id}-d{n}"),
            label_id: label_id.to_string(),
            positive_ids: positives,
            negative_ids: negatives,
            seed,
            meta_prompt_version: meta.version,
            draft_text,
            status: DraftStatus::PendingReview,
            reviewer: None,
            accepted_version: None,
        };
        self.persist_draft(&draft)?;
        self.drafts.insert(draft.id.clone(), draft.clone());
        Ok(draft)
    }

    fn pending_draft(&self, draft_id: &str) -> Result<&RationaleDraft, PromptError> {
        let draft = self.drafts.get(draft_id).ok_or_else(|| PromptError::UnknownDraft(draft_id.to_string()))?;
        if draft.status != DraftStatus::PendingReview {
            return Err(PromptError::DraftNotPending { id: draft_id.to_string(), status: draft.status });
        }
        Ok(draft)
    }

    /// Turn a reviewed draft into the next `full_rationale` version for its label.
    /// `edited_text` becomes the system instruction, with [`OUTPUT_FORMAT`]
    /// appended when it does not already name both markers. The demonstration
    /// is carried over from the previous version when there is one.
    pub fn accept_draft(
        &mut self,
        draft_id: &str,
        reviewer: &str,
        edited_text: &str,
    ) -> Result<PromptSpec, PromptError> {
        let label = self.pending_draft(draft_id)?.label_id.clone();
        let previous = self.load(&label, Variant::FullRationale, None).ok().cloned();
        let next = previous.as_ref().map(|p| VersionKey(p.version.clone()).number().unwrap_or(0) + 1).unwrap_or(1);
        let spec = PromptSpec {
            label: label.clone(),
            variant: Variant::FullRationale,
            version: format!("v{next}"),
            system: with_output_format(edited_text),
            demo_user: previous.as_ref().and_then(|p| p.demo_user.clone()),
            demo_assistant: previous.as_ref().and_then(|p| p.demo_assistant.clone()),
        };
        self.insert(spec.clone())?;
        let draft = self.drafts.get_mut(draft_id).expect("checked above");
        draft.status = DraftStatus::Accepted;
        draft.reviewer = Some(reviewer.to_string());
        draft.accepted_version = Some(spec.version.clone());
        let draft = draft.clone();
        self.persist_draft(&draft)?;
        Ok(spec)
    }

    pub fn reject_draft(&mut self, draft_id: &str, reviewer: &str) -> Result<(), PromptError> {
        self.pending_draft(draft_id)?;
        let draft = self.drafts.get_mut(draft_id).expect("checked above");
        draft.status = DraftStatus::Rejected;
        draft.reviewer = Some(reviewer.to_string());
        let draft = draft.clone();
        self.persist_draft(&draft)
    }
}

fn with_output_format(text: &str) -> String {
    let text = text.trim_end();
    if text.trim().is_empty() || (text.contains("RATIONALE") && text.contains("SCORE")) {
        return text.to_string();
    }
    format!("{text}\n\n{OUTPUT_FORMAT}")
}

/// Seeded uniform sample of up to [`DRAFT_SAMPLE_CAP`] positive and negative ids.
/// Pools are sorted by id first, so the result does not depend on corpus order.
pub fn draft_sample(corpus: &Corpus, label_id: &str, seed: u64) -> (Vec<String>, Vec<String>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for inst in corpus.instances() {
        match corpus.value(&inst.id, label_id, Layer::Original) {
            Some(true) => pos.push(inst.id.clone()),
            Some(false) => neg.push(inst.id.clone()),
            None => {}
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut take = |mut pool: Vec<String>| {
        pool.sort();
        let mut chosen: Vec<String> = pool.choose_multiple(&mut rng, DRAFT_SAMPLE_CAP).cloned().collect();
        chosen.sort();
        chosen
    };
    let pos = take(pos);
    let neg = take(neg);
    (pos, neg)
}

fn collect_json(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), PromptError> {
    let io = |source| PromptError::Io { path: dir.display().to_string(), source };
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_dir() {
            collect_json(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "json") {
            out.push(path);
        }
    }
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PromptError> {
    let text =
        fs::read_to_string(path).map_err(|source| PromptError::Io { path: path.display().to_string(), source })?;
    serde_json::from_str(&text).map_err(|source| PromptError::Json { path: path.display().to_string(), source })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PromptError> {
    let io = |source| PromptError::Io { path: path.display().to_string(), source };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(io)
}
