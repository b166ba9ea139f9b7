//! Label definitions and inter-label constraints.
//!
//! A [`LabelSchema`] is plain data: a list of binary attributes and a list of
//! rules over them. The default schema is embedded in the crate and can be
//! replaced by a JSON file of the same shape.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Values for a set of labels on one instance. Missing keys mean "not annotated".
pub type LabelValues = BTreeMap<String, bool>;

const DEFAULT_SCHEMA: &str = include_str!("../prompts/schema.json");

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("unknown label id `{0}`")]
    UnknownLabel(String),
    #[error("duplicate label id `{0}`")]
    DuplicateLabel(String),
    #[error("label `{0}` has an empty definition")]
    EmptyDefinition(String),
    #[error("invalid rule: {0}")]
    InvalidRule(String),
    #[error("closure conflicts with exclusion rules: {0:?}")]
    ClosureConflict(Vec<Violation>),
    #[error("reading schema file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing schema file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelGroup {
    Gender,
    AgeGroup,
    ParentalStatus,
    Diet,
    Personality,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDefinition {
    pub id: String,
    pub group: LabelGroup,
    pub definition: String,
}

/// A constraint between labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelRule {
    /// At most one of `labels` may be positive.
    MutualExclusion { labels: Vec<String> },
    /// If every label in `labels` is positive, `consequent` must be positive too.
    Implication { labels: Vec<String>, consequent: String },
}

impl LabelRule {
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        let (ants, cons) = match self {
            LabelRule::MutualExclusion { labels } => (labels, None),
            LabelRule::Implication { labels, consequent } => (labels, Some(consequent)),
        };
        ants.iter().chain(cons).map(String::as_str)
    }
}

impl fmt::Display for LabelRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelRule::MutualExclusion { labels } => {
                write!(f, "mutual_exclusion({})", labels.join(","))
            }
            LabelRule::Implication { labels, consequent } => {
                write!(f, "implication({} -> {})", labels.join("&"), consequent)
            }
        }
    }
}

/// A rule broken by one assignment.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub rule: LabelRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
    pub labels: Vec<String>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.instance_id {
            Some(id) => write!(f, "{}: {} violated by {:?}", id, self.rule, self.labels),
            None => write!(f, "{} violated by {:?}", self.rule, self.labels),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub labels: Vec<LabelDefinition>,
    pub rules: Vec<LabelRule>,
}

impl Default for LabelSchema {
    fn default() -> Self {
        Self::from_json(DEFAULT_SCHEMA).expect("embedded schema is valid")
    }
}

impl LabelSchema {
    pub fn new(labels: Vec<LabelDefinition>, rules: Vec<LabelRule>) -> Result<Self, SchemaError> {
        let schema = LabelSchema { labels, rules };
        schema.check()?;
        Ok(schema)
    }

    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let schema: LabelSchema = serde_json::from_str(text)?;
        schema.check()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SchemaError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    fn check(&self) -> Result<(), SchemaError> {
        let mut seen = BTreeSet::new();
        for def in &self.labels {
            if !seen.insert(def.id.as_str()) {
                return Err(SchemaError::DuplicateLabel(def.id.clone()));
            }
            if def.definition.trim().is_empty() {
                return Err(SchemaError::EmptyDefinition(def.id.clone()));
            }
        }
        for rule in &self.rules {
            for label in rule.labels() {
                if !seen.contains(label) {
                    return Err(SchemaError::UnknownLabel(label.to_string()));
                }
            }
            match rule {
                LabelRule::MutualExclusion { labels } if labels.len() < 2 => {
                    return Err(SchemaError::InvalidRule(format!("{rule} needs at least two labels")));
                }
                LabelRule::Implication { labels, consequent } => {
                    if labels.is_empty() {
                        return Err(SchemaError::InvalidRule(format!("{rule} has no antecedent")));
                    }
                    if labels.contains(consequent) {
                        return Err(SchemaError::InvalidRule(format!("{rule}: a label cannot imply itself")));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn label_ids(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(|d| d.id.as_str())
    }

    pub fn contains(&self, label_id: &str) -> bool {
        self.labels.iter().any(|d| d.id == label_id)
    }

    pub fn definition(&self, label_id: &str) -> Option<&LabelDefinition> {
        self.labels.iter().find(|d| d.id == label_id)
    }

    pub fn ensure_known<'a>(&self, labels: impl IntoIterator<Item = &'a str>) -> Result<(), SchemaError> {
        for label in labels {
            if !self.contains(label) {
                return Err(SchemaError::UnknownLabel(label.to_string()));
            }
        }
        Ok(())
    }

    /// Check `values` against every rule.
    ///
    /// Missing labels never trigger an exclusion. For an implication whose
    /// antecedents are all present and positive, a missing consequent counts
    /// as unsatisfied.
    pub fn validate(&self, values: &LabelValues) -> Result<Vec<Violation>, SchemaError> {
        self.validate_scoped(values, None)
    }

    /// Like [`validate`](Self::validate), restricted to rules whose labels all
    /// lie inside `scope`. Used for batches that only annotate a label subset.
    pub fn validate_within(&self, values: &LabelValues, scope: &[String]) -> Result<Vec<Violation>, SchemaError> {
        let scope: BTreeSet<&str> = scope.iter().map(String::as_str).collect();
        self.validate_scoped(values, Some(&scope))
    }

    fn validate_scoped(
        &self,
        values: &LabelValues,
        scope: Option<&BTreeSet<&str>>,
    ) -> Result<Vec<Violation>, SchemaError> {
        self.ensure_known(values.keys().map(String::as_str))?;
        let positive = |l: &str| values.get(l).copied() == Some(true);
        let mut out = Vec::new();
        for rule in &self.rules {
            if let Some(scope) = scope {
                if !rule.labels().all(|l| scope.contains(l)) {
                    continue;
                }
            }
            match rule {
                LabelRule::MutualExclusion { labels } => {
                    let on: Vec<String> = labels.iter().filter(|l| positive(l)).cloned().collect();
                    if on.len() > 1 {
                        out.push(Violation { rule: rule.clone(), instance_id: None, labels: on });
                    }
                }
                LabelRule::Implication { labels, consequent } => {
                    if labels.iter().all(|l| positive(l)) && !positive(consequent) {
                        let mut offending = labels.clone();
                        offending.push(consequent.clone());
                        out.push(Violation { rule: rule.clone(), instance_id: None, labels: offending });
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn validate_instance(&self, instance_id: &str, values: &LabelValues) -> Result<Vec<Violation>, SchemaError> {
        let mut out = self.validate(values)?;
        for v in &mut out {
            v.instance_id = Some(instance_id.to_string());
        }
        Ok(out)
    }

    /// Smallest superset of `values` (in the positive direction) satisfying every
    /// implication. Never turns a positive label off.
    pub fn implication_closure(&self, values: &LabelValues) -> Result<LabelValues, SchemaError> {
        self.ensure_known(values.keys().map(String::as_str))?;
        let mut out = values.clone();
        loop {
            let mut changed = false;
            for rule in &self.rules {
                if let LabelRule::Implication { labels, consequent } = rule {
                    let fires = labels.iter().all(|l| out.get(l).copied() == Some(true));
                    if fires && out.get(consequent).copied() != Some(true) {
                        out.insert(consequent.clone(), true);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let conflicts: Vec<Violation> =
            self.validate(&out)?.into_iter().filter(|v| matches!(v.rule, LabelRule::MutualExclusion { .. })).collect();
        if conflicts.is_empty() {
            Ok(out)
        } else {
            Err(SchemaError::ClosureConflict(conflicts))
        }
    }
}

/// Build a [`LabelValues`] map from `(label, 0|1)` pairs.
pub fn values<'a>(pairs: impl IntoIterator<Item = (&'a str, u8)>) -> LabelValues {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v != 0)).collect()
}

/// Serde adapter storing `bool` label values as JSON integers `0` / `1`.
pub mod binary_map {
    use super::LabelValues;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(values: &LabelValues, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(values.iter().map(|(k, v)| (k, u8::from(*v))))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<LabelValues, D::Error> {
        let raw = BTreeMap::<String, i64>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| match v {
                0 => Ok((k, false)),
                1 => Ok((k, true)),
                other => Err(D::Error::custom(format!("label `{k}` has value {other}, expected 0 or 1"))),
            })
            .collect()
    }

    pub mod option {
        use super::LabelValues;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(values: &Option<LabelValues>, s: S) -> Result<S::Ok, S::Error> {
            match values {
                Some(v) => super::serialize(v, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<LabelValues>, D::Error> {
            #[derive(Deserialize)]
            struct Wrap(#[serde(with = "super")] LabelValues);
            Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
        }
    }
}
