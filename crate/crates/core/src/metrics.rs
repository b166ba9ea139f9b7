//! Classification metrics and chance-corrected agreement.
//!
//! Kappa values that are undefined (chance agreement of exactly 1 with
//! disagreeing raters, or no data) are reported as [`Kappa::Undefined`]
//! instead of NaN.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Layer};
use crate::schema::LabelSchema;

/// Scope key used for pooled rows.
pub const ALL: &str = "all";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no items to score")]
    Empty,
    #[error("item {item} has {got} ratings, expected {expected}")]
    Ragged { item: usize, got: usize, expected: usize },
    #[error("at least two raters are required")]
    TooFewRaters,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    /// Tally `(prediction, gold)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = ConfusionCounts::default();
        for (p, g) in pairs {
            c.add(p, g);
        }
        c
    }

    pub fn add(&mut self, prediction: bool, gold: bool) {
        match (prediction, gold) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Counts with the positive and negative classes exchanged.
    pub fn swapped(&self) -> Self {
        ConfusionCounts { tp: self.tn, fp: self.fn_, fn_: self.fp, tn: self.tp }
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        ConfusionCounts { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_, tn: self.tn + o.tn }
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when any denominator was zero and the affected value defaulted to 0.
    pub degenerate: bool,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Positive-class precision, recall and F1.
pub fn prf1(c: &ConfusionCounts) -> Prf1 {
    let p = ratio(c.tp, c.tp + c.fp);
    let r = ratio(c.tp, c.tp + c.fn_);
    let f = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
    Prf1 {
        precision: p.unwrap_or(0.0),
        recall: r.unwrap_or(0.0),
        f1: f.unwrap_or(0.0),
        degenerate: p.is_none() || r.is_none() || f.is_none(),
    }
}

/// Mean of positive-class and negative-class F1.
pub fn macro_f1(c: &ConfusionCounts) -> f64 {
    (prf1(c).f1 + prf1(&c.swapped()).f1) / 2.0
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64, MetricsError> {
    ratio(c.tp + c.tn, c.total()).ok_or(MetricsError::Empty)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Kappa {
    Value(f64),
    Undefined,
}

impl Kappa {
    pub fn value(self) -> Option<f64> {
        match self {
            Kappa::Value(v) => Some(v),
            Kappa::Undefined => None,
        }
    }
}

impl fmt::Display for Kappa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kappa::Value(v) => write!(f, "{v:.2}"),
            Kappa::Undefined => f.write_str("n/a"),
        }
    }
}

/// Cohen's kappa between two binary raters, with chance agreement from each rater's marginals.
pub fn cohen_kappa(a: &[bool], b: &[bool]) -> Result<Kappa, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    Ok(cohen_from_counts(&ConfusionCounts::from_pairs(a.iter().copied().zip(b.iter().copied()))))
}

/// Cohen's kappa from a 2x2 table (rows: rater a, columns: rater b).
pub fn cohen_from_counts(c: &ConfusionCounts) -> Kappa {
    let n = c.total();
    if n == 0 {
        return Kappa::Undefined;
    }
    let a1 = c.tp + c.fp;
    let b1 = c.tp + c.fn_;
    let agree = c.tp + c.tn;
    // chance agreement in units of 1/n^2
    let chance = a1 as u128 * b1 as u128 + (n - a1) as u128 * (n - b1) as u128;
    let n2 = n as u128 * n as u128;
    if chance == n2 {
        return if agree == n { Kappa::Value(1.0) } else { Kappa::Undefined };
    }
    let nf = n as f64;
    let po = agree as f64 / nf;
    let pe = chance as f64 / (nf * nf);
    Kappa::Value((po - pe) / (1.0 - pe))
}

/// Fleiss' kappa for binary ratings: `ratings[item][rater]`.
pub fn fleiss_kappa(ratings: &[Vec<bool>]) -> Result<Kappa, MetricsError> {
    let m = ratings.first().ok_or(MetricsError::Empty)?.len();
    if m < 2 {
        return Err(MetricsError::TooFewRaters);
    }
    let mut positives = Vec::with_capacity(ratings.len());
    for (item, row) in ratings.iter().enumerate() {
        if row.len() != m {
            return Err(MetricsError::Ragged { item, got: row.len(), expected: m });
        }
        positives.push(row.iter().filter(|&&r| r).count() as u64);
    }
    Ok(fleiss_from_counts(&positives, m as u64))
}

/// Fleiss' kappa from per-item positive counts, each item rated by `m` raters.
pub fn fleiss_from_counts(positives: &[u64], m: u64) -> Kappa {
    let n = positives.len() as u64;
    if n == 0 || m < 2 {
        return Kappa::Undefined;
    }
    // sum_i sum_j n_ij (n_ij - 1)
    let pair_agree: u64 =
        positives.iter().map(|&k| k * k.saturating_sub(1) + (m - k) * (m - k).saturating_sub(1)).sum();
    let total_pos: u64 = positives.iter().sum();
    let total = n * m;
    let p_bar = pair_agree as f64 / (n * m * (m - 1)) as f64;
    let p1 = total_pos as f64 / total as f64;
    let p_e = p1 * p1 + (1.0 - p1) * (1.0 - p1);
    if total_pos == 0 || total_pos == total {
        return Kappa::Value(1.0);
    }
    Kappa::Value((p_bar - p_e) / (1.0 - p_e))
}

/// Round half up to one decimal after scaling to percent, e.g. `0.7025 -> "70.3"`.
pub fn format_percent(value: f64) -> String {
    // the epsilon absorbs binary representation error at exact halves
    let tenths = (value * 1000.0 + 0.5 + 1e-9).floor();
    format!("{:.1}", tenths / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricValue {
    Number(f64),
    Undefined(UndefinedTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UndefinedTag {
    Undefined,
}

impl MetricValue {
    pub fn number(self) -> Option<f64> {
        match self {
            MetricValue::Number(v) => Some(v),
            MetricValue::Undefined(_) => None,
        }
    }
}

impl From<Kappa> for MetricValue {
    fn from(k: Kappa) -> Self {
        match k {
            Kappa::Value(v) => MetricValue::Number(v),
            Kappa::Undefined => MetricValue::Undefined(UndefinedTag::Undefined),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub layer_a: Layer,
    pub layer_b: Layer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_variant: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    /// Language code or [`ALL`] for pooled rows.
    pub scope: String,
    pub label: String,
    pub metric: String,
    pub value: MetricValue,
    pub support: u64,
}

/// Metric values keyed by (scope, label, metric).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub meta: ReportMeta,
    pub labels: Vec<String>,
    pub languages: Vec<String>,
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn get(&self, scope: &str, label: &str, metric: &str) -> Option<MetricValue> {
        self.row(scope, label, metric).map(|r| r.value)
    }

    pub fn row(&self, scope: &str, label: &str, metric: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.scope == scope && r.label == label && r.metric == metric)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Long format: `scope,label,metric,value,support`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scope,label,metric,value,support\n");
        for r in &self.rows {
            let v = match r.value {
                MetricValue::Number(v) => v.to_string(),
                MetricValue::Undefined(_) => "undefined".into(),
            };
            out.push_str(&format!("{},{},{},{},{}\n", r.scope, r.label, r.metric, v, r.support));
        }
        out
    }

    /// Matrix layout: one row per language plus a `Total` row, one column per label.
    /// Kappa renders with two decimals, other metrics as percentages with one.
    pub fn to_matrix_csv(&self, metric: &str) -> String {
        let mut out = String::from("language");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        let scopes = self.languages.iter().map(|l| (l.as_str(), l.as_str())).chain([(ALL, "Total")]);
        for (scope, name) in scopes {
            out.push_str(name);
            for label in &self.labels {
                out.push(',');
                match self.get(scope, label, metric) {
                    Some(MetricValue::Number(v)) if metric == "kappa" => out.push_str(&format!("{v:.2}")),
                    Some(MetricValue::Number(v)) => out.push_str(&format_percent(v)),
                    Some(MetricValue::Undefined(_)) => out.push_str("n/a"),
                    None => {}
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Paired values for one label, grouped by language, over instances where both layers assign it.
fn paired(corpus: &Corpus, label: &str, a: Layer, b: Layer) -> BTreeMap<String, ConfusionCounts> {
    let mut out: BTreeMap<String, ConfusionCounts> = BTreeMap::new();
    for inst in corpus.instances() {
        if let (Some(x), Some(y)) = (corpus.value(&inst.id, label, a), corpus.value(&inst.id, label, b)) {
            out.entry(inst.language.clone()).or_default().add(x, y);
        }
    }
    out
}

fn report_frame(corpus: &Corpus, labels: &[String], a: Layer, b: Layer) -> MetricReport {
    MetricReport {
        meta: ReportMeta { layer_a: a, layer_b: b, model_id: None, prompt_variant: None },
        labels: labels.to_vec(),
        languages: corpus.languages().into_iter().map(str::to_string).collect(),
        rows: Vec::new(),
    }
}

/// Cohen's kappa between two layers per (language, label), plus pooled per-label totals.
pub fn agreement_report(corpus: &Corpus, schema: &LabelSchema, layer_a: Layer, layer_b: Layer) -> MetricReport {
    let labels: Vec<String> = schema.label_ids().map(str::to_string).collect();
    agreement_report_for(corpus, &labels, layer_a, layer_b)
}

/// [`agreement_report`] over an explicit label list, in that column order.
pub fn agreement_report_for(corpus: &Corpus, labels: &[String], layer_a: Layer, layer_b: Layer) -> MetricReport {
    let mut report = report_frame(corpus, labels, layer_a, layer_b);
    for label in labels {
        let label = label.as_str();
        let by_lang = paired(corpus, label, layer_a, layer_b);
        let mut pooled = ConfusionCounts::default();
        for lang in &report.languages {
            let c = by_lang.get(lang).copied().unwrap_or_default();
            pooled += c;
            report.rows.push(MetricRow {
                scope: lang.clone(),
                label: label.to_string(),
                metric: "kappa".into(),
                value: cohen_from_counts(&c).into(),
                support: c.total(),
            });
        }
        report.rows.push(MetricRow {
            scope: ALL.into(),
            label: label.to_string(),
            metric: "kappa".into(),
            value: cohen_from_counts(&pooled).into(),
            support: pooled.total(),
        });
    }
    report
}

/// Positive-class precision/recall/F1, macro-F1 and accuracy of `prediction`
/// against `gold` per (language, label). Pooled rows use summed counts.
/// Scopes with no paired values report every metric as undefined.
pub fn classification_report(corpus: &Corpus, schema: &LabelSchema, prediction: Layer, gold: Layer) -> MetricReport {
    let labels: Vec<String> = schema.label_ids().map(str::to_string).collect();
    let mut report = report_frame(corpus, &labels, prediction, gold);
    let push = |rows: &mut Vec<MetricRow>, scope: &str, label: &str, c: &ConfusionCounts| {
        let p = prf1(c);
        let support = c.total();
        let undefined = MetricValue::Undefined(UndefinedTag::Undefined);
        if support == 0 {
            for name in ["precision", "recall", "f1", "macro_f1", "accuracy"] {
                rows.push(MetricRow {
                    scope: scope.into(),
                    label: label.into(),
                    metric: name.into(),
                    value: undefined,
                    support,
                });
            }
            return;
        }
        let metrics = [
            ("precision", MetricValue::Number(p.precision)),
            ("recall", MetricValue::Number(p.recall)),
            ("f1", MetricValue::Number(p.f1)),
            ("macro_f1", MetricValue::Number(macro_f1(c))),
            ("accuracy", accuracy(c).map(MetricValue::Number).unwrap_or(undefined)),
        ];
        for (name, value) in metrics {
            rows.push(MetricRow { scope: scope.into(), label: label.into(), metric: name.into(), value, support });
        }
    };
    for label in schema.label_ids() {
        let by_lang = paired(corpus, label, prediction, gold);
        let mut pooled = ConfusionCounts::default();
        for lang in report.languages.clone() {
            let c = by_lang.get(&lang).copied().unwrap_or_default();
            pooled += c;
            push(&mut report.rows, &lang, label, &c);
        }
        push(&mut report.rows, ALL, label, &pooled);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Instance;
    use crate::schema::values;

    fn b(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&x| x != 0).collect()
    }

    #[test]
    fn prf1_examples() {
        let p = prf1(&ConfusionCounts::new(2, 1, 1, 0));
        assert!((p.precision - 0.6667).abs() < 1e-4);
        assert!((p.recall - 0.6667).abs() < 1e-4);
        assert!((p.f1 - 0.6667).abs() < 1e-4);
        assert!(!p.degenerate);
        let d = prf1(&ConfusionCounts::new(0, 0, 0, 5));
        assert_eq!((d.precision, d.recall, d.f1), (0.0, 0.0, 0.0));
        assert!(d.degenerate);
    }

    #[test]
    fn table_row_rendering() {
        assert_eq!(format_percent(0.945), "94.5");
        assert_eq!(format_percent(0.559), "55.9");
        assert_eq!(format_percent(0.703), "70.3");
        assert_eq!(format_percent(0.70249), "70.2");
        assert_eq!(format_percent(0.70250), "70.3");
        assert_eq!(format_percent(1.0), "100.0");
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&ConfusionCounts::new(3, 0, 0, 4)), 1.0);
        let c = ConfusionCounts::new(2, 1, 1, 6);
        assert!((macro_f1(&c) - 0.7619).abs() < 1e-4);
        assert_eq!(macro_f1(&c), macro_f1(&c.swapped()));
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&ConfusionCounts::new(5, 0, 0, 5)).unwrap(), 1.0);
        assert_eq!(accuracy(&ConfusionCounts::new(1, 1, 1, 1)).unwrap(), 0.5);
        assert_eq!(accuracy(&ConfusionCounts::default()), Err(MetricsError::Empty));
    }

    #[test]
    fn cohen_examples() {
        assert_eq!(cohen_kappa(&b(&[1, 1, 0, 0]), &b(&[1, 0, 0, 0])).unwrap(), Kappa::Value(0.5));
        assert_eq!(cohen_kappa(&b(&[1, 0, 1]), &b(&[1, 0, 1])).unwrap(), Kappa::Value(1.0));
        assert_eq!(cohen_kappa(&b(&[1, 0]), &b(&[0, 1])).unwrap(), Kappa::Value(-1.0));
        assert_eq!(cohen_kappa(&b(&[1]), &b(&[1, 0])), Err(MetricsError::LengthMismatch(1, 2)));
    }

    #[test]
    fn cohen_degenerate_cases() {
        // both raters constant and equal: p_e = 1, perfect agreement
        assert_eq!(cohen_kappa(&b(&[1, 1]), &b(&[1, 1])).unwrap(), Kappa::Value(1.0));
        assert_eq!(cohen_kappa(&[], &[]).unwrap(), Kappa::Undefined);
    }

    #[test]
    fn fleiss_examples() {
        let k = fleiss_kappa(&[b(&[1, 1, 1]), b(&[0, 0, 0])]).unwrap();
        assert_eq!(k, Kappa::Value(1.0));
        let k = fleiss_kappa(&[b(&[1, 1, 0]), b(&[0, 0, 1])]).unwrap().value().unwrap();
        assert!((k + 1.0 / 3.0).abs() < 1e-9);
        let k = fleiss_kappa(&[b(&[1, 0, 0])]).unwrap().value().unwrap();
        assert!(k < 0.0);
        assert!(matches!(fleiss_kappa(&[b(&[1, 0]), b(&[1])]), Err(MetricsError::Ragged { item: 1, .. })));
        assert_eq!(fleiss_kappa(&[b(&[1])]), Err(MetricsError::TooFewRaters));
    }

    fn two_layer_corpus() -> Corpus {
        let mut c = Corpus::new(&LabelSchema::default());
        let rows = [("en", 1, 1), ("en", 1, 0), ("en", 0, 0), ("en", 0, 0), ("ja", 1, 1), ("ja", 0, 0)];
        for (i, (lang, a, f)) in rows.into_iter().enumerate() {
            let id = format!("x{i}");
            c.add_instance(Instance::new(&id, "t", lang)).unwrap();
            c.set_values(&id, Layer::Original, &values([("male", a)]), "import", None).unwrap();
            c.set_values(&id, Layer::Final, &values([("male", f)]), "adj", None).unwrap();
        }
        c
    }

    #[test]
    fn agreement_report_layout() {
        let c = two_layer_corpus();
        let schema = LabelSchema::default();
        let r = agreement_report(&c, &schema, Layer::Original, Layer::Final);
        assert_eq!(r.get("en", "male", "kappa"), Some(MetricValue::Number(0.5)));
        assert_eq!(r.get("ja", "male", "kappa"), Some(MetricValue::Number(1.0)));
        let csv = r.to_matrix_csv("kappa");
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "language,male,female,child,adult,elderly,parent,meat-eater,vegetarian,serious");
        assert!(lines[1].starts_with("en,0.50,n/a"));
        assert!(lines[3].starts_with("Total,"));
        assert_eq!(r.get(ALL, "female", "kappa"), Some(MetricValue::Undefined(UndefinedTag::Undefined)));
    }

    #[test]
    fn identical_layers_give_unit_kappa() {
        let c = two_layer_corpus();
        let r = agreement_report(&c, &LabelSchema::default(), Layer::Original, Layer::Original);
        for row in r.rows.iter().filter(|r| r.support > 0) {
            assert_eq!(row.value, MetricValue::Number(1.0));
        }
    }

    #[test]
    fn pooled_counts_not_averaged() {
        let c = two_layer_corpus();
        let r = classification_report(&c, &LabelSchema::default(), Layer::Final, Layer::Original);
        // pooled: tp=2 fp=0 fn=1 -> f1 = 4/5
        assert_eq!(r.get(ALL, "male", "f1"), Some(MetricValue::Number(0.8)));
        assert_eq!(r.row(ALL, "male", "f1").unwrap().support, 6);
        let json = r.to_json();
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert!(r.to_csv().contains("all,male,f1,0.8,6"));
    }
}
