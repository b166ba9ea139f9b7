//! Multilingual multi-label instance store with named label layers.
//!
//! The on-disk format is JSON Lines, one instance per line:
//!
//! ```json
//! {"id":"en-1","text":"We are boys.","language":"en","male":1,"child":1}
//! ```
//!
//! Label values are top-level integer fields named by label id. A missing
//! field means "not annotated", which is distinct from `0`. The optional
//! reserved fields `split`, `provenance` and `timestamp` carry the split and
//! per-label assignment metadata.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::schema::{LabelSchema, LabelValues};

/// Provenance recorded for assignments that arrive without one.
pub const DEFAULT_PROVENANCE: &str = "import";

const RESERVED: [&str; 6] = ["id", "text", "language", "split", "provenance", "timestamp"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate instance id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: unknown label id `{label}`")]
    UnknownLabelAt { line: usize, label: String },
    #[error("unknown label id `{0}`")]
    UnknownLabel(String),
    #[error("line {line}: label `{label}` has value {value}, expected 0 or 1")]
    InvalidValue { line: usize, label: String, value: String },
    #[error("line {line}: language `{language}` is not in the configured set")]
    UnknownLanguage { line: usize, language: String },
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
    #[error("instance `{0}` already exists with different text, language or split")]
    Conflict(String),
    #[error("invalid {kind} `{value}`")]
    Parse { kind: &'static str, value: String },
}

/// A named source of label assignments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Original,
    Model,
    Human,
    Final,
}

impl Layer {
    pub const ALL: [Layer; 4] = [Layer::Original, Layer::Model, Layer::Human, Layer::Final];

    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Original => "original",
            Layer::Model => "model",
            Layer::Human => "human",
            Layer::Final => "final",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Layer {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Layer::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| CorpusError::Parse { kind: "layer", value: s.to_string() })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Dev,
    Test,
    #[default]
    Unsplit,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Dev => "dev",
            Split::Test => "test",
            Split::Unsplit => "unsplit",
        }
    }
}

impl FromStr for Split {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            "unsplit" => Ok(Split::Unsplit),
            _ => Err(CorpusError::Parse { kind: "split", value: s.to_string() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub text: String,
    pub language: String,
    #[serde(default)]
    pub split: Split,
}

impl Instance {
    pub fn new(id: impl Into<String>, text: impl Into<String>, language: impl Into<String>) -> Self {
        Instance { id: id.into(), text: text.into(), language: language.into(), split: Split::Unsplit }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelAssignment {
    pub instance_id: String,
    pub label_id: String,
    pub value: bool,
    pub layer: Layer,
    pub provenance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

/// Conjunctive selection over a corpus. `label` and `value` are read from `layer`.
#[derive(Debug, Clone, Default)]
pub struct Filter {
    pub language: Option<String>,
    pub label: Option<String>,
    pub split: Option<Split>,
    pub value: Option<bool>,
    pub layer: Option<Layer>,
}

impl Filter {
    pub fn language(mut self, language: impl Into<String>) -> Self {
        self.language = Some(language.into());
        self
    }

    pub fn label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn split(mut self, split: Split) -> Self {
        self.split = Some(split);
        self
    }

    pub fn value(mut self, value: bool) -> Self {
        self.value = Some(value);
        self
    }

    pub fn layer(mut self, layer: Layer) -> Self {
        self.layer = Some(layer);
        self
    }
}

/// Instances plus their label assignments across layers.
#[derive(Debug, Clone)]
pub struct Corpus {
    labels: BTreeSet<String>,
    languages: Option<BTreeSet<String>>,
    instances: Vec<Instance>,
    index: HashMap<String, usize>,
    assignments: BTreeMap<String, Vec<LabelAssignment>>,
}

/// Equal instances in the same order, and the same assignment set per instance.
impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        fn sorted(list: &[LabelAssignment]) -> Vec<&LabelAssignment> {
            let mut v: Vec<&LabelAssignment> = list.iter().collect();
            v.sort_by(|a, b| (&a.label_id, a.layer, &a.provenance).cmp(&(&b.label_id, b.layer, &b.provenance)));
            v
        }
        self.instances == other.instances
            && self.instances.iter().all(|i| sorted(self.assignments(&i.id)) == sorted(other.assignments(&i.id)))
    }
}

impl Corpus {
    pub fn new(schema: &LabelSchema) -> Self {
        Corpus {
            labels: schema.label_ids().map(str::to_string).collect(),
            languages: None,
            instances: Vec::new(),
            index: HashMap::new(),
            assignments: BTreeMap::new(),
        }
    }

    /// Restrict accepted languages to `languages`.
    pub fn with_languages<I, S>(mut self, languages: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.languages = Some(languages.into_iter().map(Into::into).collect());
        self
    }

    pub fn ingest_jsonl(path: impl AsRef<Path>, layer: Layer, schema: &LabelSchema) -> Result<Self, CorpusError> {
        let mut corpus = Corpus::new(schema);
        corpus.merge_jsonl(path, layer)?;
        Ok(corpus)
    }

    /// Read a JSONL file into this corpus, assigning its label fields to `layer`.
    ///
    /// Instances already present must carry the same text and language; their
    /// assignments for `layer` are added alongside existing layers.
    pub fn merge_jsonl(&mut self, path: impl AsRef<Path>, layer: Layer) -> Result<usize, CorpusError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| io_err(path, source))?;
        self.merge_reader(BufReader::new(file), layer).map_err(|e| match e {
            CorpusError::Io { source, .. } => io_err(path, source),
            other => other,
        })
    }

    pub fn merge_reader(&mut self, reader: impl BufRead, layer: Layer) -> Result<usize, CorpusError> {
        let mut seen = BTreeSet::new();
        let mut parsed = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line_no = n + 1;
            let line = line.map_err(|source| CorpusError::Io { path: String::new(), source })?;
            if line.trim().is_empty() {
                continue;
            }
            let (instance, labels) = self.parse_line(&line, line_no, layer)?;
            if !seen.insert(instance.id.clone()) {
                return Err(CorpusError::DuplicateId { line: line_no, id: instance.id });
            }
            if let Some(&i) = self.index.get(&instance.id) {
                let existing = &self.instances[i];
                if existing.text != instance.text || existing.language != instance.language {
                    return Err(CorpusError::Conflict(instance.id));
                }
            }
            parsed.push((instance, labels));
        }
        let count = parsed.len();
        for (instance, labels) in parsed {
            let id = instance.id.clone();
            match self.index.get(&id) {
                Some(&i) => {
                    if instance.split != Split::Unsplit {
                        self.instances[i].split = instance.split;
                    }
                }
                None => self.push_instance(instance),
            }
            for a in labels {
                self.upsert(a);
            }
        }
        Ok(count)
    }

    fn parse_line(
        &self,
        line: &str,
        line_no: usize,
        layer: Layer,
    ) -> Result<(Instance, Vec<LabelAssignment>), CorpusError> {
        let malformed = |message: String| CorpusError::Malformed { line: line_no, message };
        let obj: Map<String, Value> = match serde_json::from_str(line) {
            Ok(Value::Object(m)) => m,
            Ok(_) => return Err(malformed("expected a JSON object".into())),
            Err(e) => return Err(malformed(e.to_string())),
        };
        let string_field = |key: &str| -> Result<String, CorpusError> {
            match obj.get(key) {
                Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
                Some(Value::String(_)) => Err(malformed(format!("field `{key}` is empty"))),
                Some(_) => Err(malformed(format!("field `{key}` must be a string"))),
                None => Err(malformed(format!("missing field `{key}`"))),
            }
        };
        let id = string_field("id")?;
        let text = string_field("text")?;
        let language = string_field("language")?;
        if language.chars().any(char::is_whitespace) {
            return Err(malformed(format!("invalid language code `{language}`")));
        }
        if let Some(allowed) = &self.languages {
            if !allowed.contains(&language) {
                return Err(CorpusError::UnknownLanguage { line: line_no, language });
            }
        }
        let split = match obj.get("split") {
            None | Some(Value::Null) => Split::Unsplit,
            Some(Value::String(s)) => s.parse().map_err(|_| malformed(format!("invalid split `{s}`")))?,
            Some(_) => return Err(malformed("field `split` must be a string".into())),
        };
        let meta = |key: &str| -> Result<BTreeMap<String, String>, CorpusError> {
            match obj.get(key) {
                None | Some(Value::Null) => Ok(BTreeMap::new()),
                Some(v) => serde_json::from_value(v.clone()).map_err(|e| malformed(format!("field `{key}`: {e}"))),
            }
        };
        let provenance = meta("provenance")?;
        let timestamps = meta("timestamp")?;

        let mut labels = Vec::new();
        for (key, value) in &obj {
            if RESERVED.contains(&key.as_str()) {
                continue;
            }
            if !self.labels.contains(key) {
                return Err(CorpusError::UnknownLabelAt { line: line_no, label: key.clone() });
            }
            let value = match value {
                Value::Null => continue,
                Value::Number(n) if n.as_u64() == Some(0) => false,
                Value::Number(n) if n.as_u64() == Some(1) => true,
                other => {
                    return Err(CorpusError::InvalidValue {
                        line: line_no,
                        label: key.clone(),
                        value: other.to_string(),
                    })
                }
            };
            labels.push(LabelAssignment {
                instance_id: id.clone(),
                label_id: key.clone(),
                value,
                layer,
                provenance: provenance.get(key).cloned().unwrap_or_else(|| DEFAULT_PROVENANCE.into()),
                timestamp: timestamps.get(key).cloned(),
            });
        }
        for key in provenance.keys().chain(timestamps.keys()) {
            if !labels.iter().any(|a| &a.label_id == key) {
                return Err(malformed(format!("metadata for label `{key}` without a value")));
            }
        }
        Ok((Instance { id, text, language, split }, labels))
    }

    /// Write one line per instance carrying `layer`'s assignments.
    pub fn export_jsonl(&self, layer: Layer, path: impl AsRef<Path>) -> Result<usize, CorpusError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|source| io_err(path, source))?;
        let mut out = BufWriter::new(file);
        self.write_jsonl(layer, &mut out).map_err(|source| io_err(path, source))?;
        out.flush().map_err(|source| io_err(path, source))?;
        Ok(self.instances.len())
    }

    pub fn write_jsonl(&self, layer: Layer, out: &mut impl Write) -> std::io::Result<()> {
        for instance in &self.instances {
            let line = self.to_record(instance, layer);
            serde_json::to_writer(&mut *out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    fn to_record(&self, instance: &Instance, layer: Layer) -> Value {
        let mut obj = Map::new();
        obj.insert("id".into(), instance.id.clone().into());
        obj.insert("text".into(), instance.text.clone().into());
        obj.insert("language".into(), instance.language.clone().into());
        if instance.split != Split::Unsplit {
            obj.insert("split".into(), instance.split.as_str().into());
        }
        let mut provenance = Map::new();
        let mut timestamps = Map::new();
        for a in self.current(&instance.id, layer) {
            obj.insert(a.label_id.clone(), u8::from(a.value).into());
            if a.provenance != DEFAULT_PROVENANCE {
                provenance.insert(a.label_id.clone(), a.provenance.clone().into());
            }
            if let Some(ts) = &a.timestamp {
                timestamps.insert(a.label_id.clone(), ts.clone().into());
            }
        }
        if !provenance.is_empty() {
            obj.insert("provenance".into(), provenance.into());
        }
        if !timestamps.is_empty() {
            obj.insert("timestamp".into(), timestamps.into());
        }
        Value::Object(obj)
    }

    /// The effective assignment per label in `layer` (the most recent one).
    fn current<'a>(&'a self, instance_id: &str, layer: Layer) -> Vec<&'a LabelAssignment> {
        let mut by_label: BTreeMap<&str, &LabelAssignment> = BTreeMap::new();
        for a in self.assignments.get(instance_id).into_iter().flatten() {
            if a.layer == layer {
                by_label.insert(&a.label_id, a);
            }
        }
        by_label.into_values().collect()
    }

    fn push_instance(&mut self, instance: Instance) {
        self.index.insert(instance.id.clone(), self.instances.len());
        self.instances.push(instance);
    }

    fn upsert(&mut self, a: LabelAssignment) {
        let list = self.assignments.entry(a.instance_id.clone()).or_default();
        let key = |x: &LabelAssignment| (x.label_id.clone(), x.layer, x.provenance.clone());
        let k = key(&a);
        list.retain(|x| key(x) != k);
        list.push(a);
    }

    pub fn add_instance(&mut self, instance: Instance) -> Result<(), CorpusError> {
        if instance.text.is_empty() {
            return Err(CorpusError::Malformed {
                line: 0,
                message: format!("instance `{}` has empty text", instance.id),
            });
        }
        if let Some(allowed) = &self.languages {
            if !allowed.contains(&instance.language) {
                return Err(CorpusError::UnknownLanguage { line: 0, language: instance.language });
            }
        }
        if self.index.contains_key(&instance.id) {
            return Err(CorpusError::DuplicateId { line: 0, id: instance.id });
        }
        self.push_instance(instance);
        Ok(())
    }

    /// Insert or replace the assignment keyed by (instance, label, layer, provenance).
    pub fn set_assignment(&mut self, a: LabelAssignment) -> Result<(), CorpusError> {
        if !self.index.contains_key(&a.instance_id) {
            return Err(CorpusError::UnknownInstance(a.instance_id));
        }
        if !self.labels.contains(&a.label_id) {
            return Err(CorpusError::UnknownLabel(a.label_id));
        }
        self.upsert(a);
        Ok(())
    }

    /// Set every value in `values` on `layer` with the given provenance.
    pub fn set_values(
        &mut self,
        instance_id: &str,
        layer: Layer,
        values: &LabelValues,
        provenance: &str,
        timestamp: Option<&str>,
    ) -> Result<(), CorpusError> {
        for (label, &value) in values {
            self.set_assignment(LabelAssignment {
                instance_id: instance_id.to_string(),
                label_id: label.clone(),
                value,
                layer,
                provenance: provenance.to_string(),
                timestamp: timestamp.map(str::to_string),
            })?;
        }
        Ok(())
    }

    pub fn set_split(&mut self, instance_id: &str, split: Split) -> Result<(), CorpusError> {
        let i = *self.index.get(instance_id).ok_or_else(|| CorpusError::UnknownInstance(instance_id.to_string()))?;
        self.instances[i].split = split;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn instance(&self, id: &str) -> Option<&Instance> {
        self.index.get(id).map(|&i| &self.instances[i])
    }

    pub fn label_ids(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(String::as_str)
    }

    pub fn has_label(&self, label: &str) -> bool {
        self.labels.contains(label)
    }

    pub fn assignments(&self, instance_id: &str) -> &[LabelAssignment] {
        self.assignments.get(instance_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn all_assignments(&self) -> impl Iterator<Item = &LabelAssignment> {
        self.assignments.values().flatten()
    }

    pub fn value(&self, instance_id: &str, label: &str, layer: Layer) -> Option<bool> {
        self.assignments(instance_id).iter().rev().find(|a| a.layer == layer && a.label_id == label).map(|a| a.value)
    }

    pub fn layer_values(&self, instance_id: &str, layer: Layer) -> LabelValues {
        self.current(instance_id, layer).into_iter().map(|a| (a.label_id.clone(), a.value)).collect()
    }

    pub fn languages(&self) -> BTreeSet<&str> {
        self.instances.iter().map(|i| i.language.as_str()).collect()
    }

    /// Subset selected by `filter`. All criteria are conjunctive.
    pub fn filter(&self, filter: &Filter) -> Result<Corpus, CorpusError> {
        if let Some(label) = &filter.label {
            if !self.labels.contains(label) {
                return Err(CorpusError::UnknownLabel(label.clone()));
            }
        }
        let layer = filter.layer.unwrap_or(Layer::Original);
        Ok(self.retain(|inst| {
            if filter.language.as_ref().is_some_and(|l| &inst.language != l) {
                return false;
            }
            if filter.split.is_some_and(|s| inst.split != s) {
                return false;
            }
            match (&filter.label, filter.value) {
                (Some(label), want) => match self.value(&inst.id, label, layer) {
                    None => false,
                    Some(v) => want.is_none_or(|w| w == v),
                },
                (None, Some(want)) => self.current(&inst.id, layer).iter().any(|a| a.value == want),
                (None, None) => true,
            }
        }))
    }

    /// Subset containing exactly the listed ids that exist, in corpus order.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Corpus {
        let keep: BTreeSet<&str> = ids.into_iter().collect();
        self.retain(|inst| keep.contains(inst.id.as_str()))
    }

    fn retain(&self, mut keep: impl FnMut(&Instance) -> bool) -> Corpus {
        let mut out = Corpus {
            labels: self.labels.clone(),
            languages: self.languages.clone(),
            instances: Vec::new(),
            index: HashMap::new(),
            assignments: BTreeMap::new(),
        };
        for inst in &self.instances {
            if keep(inst) {
                if let Some(a) = self.assignments.get(&inst.id) {
                    out.assignments.insert(inst.id.clone(), a.clone());
                }
                out.push_instance(inst.clone());
            }
        }
        out
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io { path: path.display().to_string(), source }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    const TABLE1: &str = concat!(
        r#"{"id":"en-1","text":"We are boys.","language":"en","male":1,"child":1}"#,
        "\n",
        r#"{"id":"ja-1","text":"私の孫たちはたくさん遊んでいます。","language":"ja","elderly":1,"adult":1}"#,
        "\n",
        r#"{"id":"ru-1","text":"Моя жена умная.","language":"ru","adult":1}"#,
        "\n",
        r#"{"id":"fr-1","text":"Je suis végétarienne, comme ma mère.","language":"fr","female":1,"vegetarian":1}"#,
        "\n",
    );

    fn load(text: &str) -> Result<Corpus, CorpusError> {
        let mut c = Corpus::new(&LabelSchema::default());
        c.merge_reader(Cursor::new(text), Layer::Original)?;
        Ok(c)
    }

    #[test]
    fn ingest_table_one() {
        let c = load(TABLE1).unwrap();
        assert_eq!(c.len(), 4);
        let en = c.layer_values("en-1", Layer::Original);
        assert_eq!(en.len(), 2);
        assert!(en["male"] && en["child"]);
        assert_eq!(c.value("en-1", "female", Layer::Original), None);
    }

    #[test]
    fn empty_input_is_empty_corpus() {
        assert!(load("").unwrap().is_empty());
    }

    #[test]
    fn missing_text_reports_line() {
        let text = format!("{TABLE1}{}\n", r#"{"id":"x","language":"en"}"#);
        match load(&text) {
            Err(CorpusError::Malformed { line, message }) => {
                assert_eq!(line, 5);
                assert!(message.contains("text"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ingest_errors() {
        let dup =
            concat!(r#"{"id":"a","text":"t","language":"en"}"#, "\n", r#"{"id":"a","text":"u","language":"en"}"#, "\n");
        assert!(matches!(load(dup), Err(CorpusError::DuplicateId { line: 2, .. })));
        let unknown = r#"{"id":"a","text":"t","language":"en","tall":1}"#;
        assert!(matches!(load(unknown), Err(CorpusError::UnknownLabelAt { label, .. }) if label == "tall"));
        let bad = r#"{"id":"a","text":"t","language":"en","male":2}"#;
        assert!(matches!(load(bad), Err(CorpusError::InvalidValue { .. })));
        assert!(matches!(load("not json"), Err(CorpusError::Malformed { line: 1, .. })));
    }

    #[test]
    fn language_allow_list() {
        let mut c = Corpus::new(&LabelSchema::default()).with_languages(["en"]);
        let err = c.merge_reader(Cursor::new(TABLE1), Layer::Original).unwrap_err();
        assert!(matches!(err, CorpusError::UnknownLanguage { line: 2, .. }));
    }

    #[test]
    fn export_roundtrip() {
        let mut c = load(TABLE1).unwrap();
        c.set_split("en-1", Split::Dev).unwrap();
        c.set_assignment(LabelAssignment {
            instance_id: "ru-1".into(),
            label_id: "male".into(),
            value: false,
            layer: Layer::Original,
            provenance: "annotator-ru".into(),
            timestamp: Some("2025-01-01T00:00:00Z".into()),
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        assert_eq!(c.export_jsonl(Layer::Original, &path).unwrap(), 4);
        let back = Corpus::ingest_jsonl(&path, Layer::Original, &LabelSchema::default()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn export_layer_without_assignments() {
        let c = load(TABLE1).unwrap();
        let mut buf = Vec::new();
        c.write_jsonl(Layer::Final, &mut buf).unwrap();
        let first: Value = serde_json::from_str(String::from_utf8(buf).unwrap().lines().next().unwrap()).unwrap();
        assert_eq!(first.as_object().unwrap().len(), 3);
    }

    #[test]
    fn merge_layers() {
        let mut c = load(TABLE1).unwrap();
        let model = r#"{"id":"en-1","text":"We are boys.","language":"en","male":0}"#;
        c.merge_reader(Cursor::new(model), Layer::Model).unwrap();
        assert_eq!(c.value("en-1", "male", Layer::Model), Some(false));
        assert_eq!(c.value("en-1", "male", Layer::Original), Some(true));
        let clash = r#"{"id":"en-1","text":"We are girls.","language":"en"}"#;
        assert!(matches!(c.merge_reader(Cursor::new(clash), Layer::Model), Err(CorpusError::Conflict(_))));
    }

    #[test]
    fn filters() {
        let c = load(TABLE1).unwrap();
        let ja = c.filter(&Filter::default().language("ja")).unwrap();
        assert_eq!(ja.len(), 1);
        assert_eq!(ja.instances()[0].id, "ja-1");
        let adults = c.filter(&Filter::default().label("adult").value(true)).unwrap();
        assert_eq!(adults.len(), 2);
        assert!(c.filter(&Filter::default().label("tall")).is_err());
        let empty = Corpus::new(&LabelSchema::default());
        assert!(empty.filter(&Filter::default().split(Split::Dev)).unwrap().is_empty());
    }
}
