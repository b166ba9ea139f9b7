//! Confusion partitions, disagreement-oversampled subsets and balanced splits.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, Layer, Split};

pub const DEFAULT_RATIO: f64 = 2.0;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("budget must be at least 1")]
    ZeroBudget,
    #[error("ratio must be a positive finite number, got {0}")]
    BadRatio(f64),
    #[error("max_neg_per_pos must be a non-negative finite number, got {0}")]
    BadNegativeRatio(f64),
    #[error("label `{label}` has {positives} positive instances, at least 2 are needed")]
    TooFewPositives { label: String, positives: usize },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    TruePositive,
    FalsePositive,
    TrueNegative,
    FalseNegative,
}

impl Cell {
    /// The 2x2 rule: `(prediction, reference)` to cell.
    pub fn of(prediction: bool, reference: bool) -> Cell {
        match (prediction, reference) {
            (true, true) => Cell::TruePositive,
            (true, false) => Cell::FalsePositive,
            (false, false) => Cell::TrueNegative,
            (false, true) => Cell::FalseNegative,
        }
    }

    pub fn is_disagreement(self) -> bool {
        matches!(self, Cell::FalsePositive | Cell::FalseNegative)
    }
}

/// Model prediction vs. reference cells for one label.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionPartition {
    pub label_id: String,
    pub true_positives: BTreeSet<String>,
    pub false_positives: BTreeSet<String>,
    pub true_negatives: BTreeSet<String>,
    pub false_negatives: BTreeSet<String>,
    /// Instances lacking the prediction or the reference value.
    pub uncovered: usize,
}

impl ConfusionPartition {
    pub fn cell(&self, cell: Cell) -> &BTreeSet<String> {
        match cell {
            Cell::TruePositive => &self.true_positives,
            Cell::FalsePositive => &self.false_positives,
            Cell::TrueNegative => &self.true_negatives,
            Cell::FalseNegative => &self.false_negatives,
        }
    }

    fn cell_mut(&mut self, cell: Cell) -> &mut BTreeSet<String> {
        match cell {
            Cell::TruePositive => &mut self.true_positives,
            Cell::FalsePositive => &mut self.false_positives,
            Cell::TrueNegative => &mut self.true_negatives,
            Cell::FalseNegative => &mut self.false_negatives,
        }
    }

    pub fn counts(&self) -> CellCounts {
        CellCounts {
            true_positives: self.true_positives.len(),
            false_positives: self.false_positives.len(),
            true_negatives: self.true_negatives.len(),
            false_negatives: self.false_negatives.len(),
        }
    }

    pub fn covered(&self) -> usize {
        self.counts().total()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCounts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
}

impl CellCounts {
    pub fn total(&self) -> usize {
        self.true_positives + self.false_positives + self.true_negatives + self.false_negatives
    }

    pub fn disagreement(&self) -> usize {
        self.false_positives + self.false_negatives
    }

    pub fn agreement(&self) -> usize {
        self.true_positives + self.true_negatives
    }
}

/// Requested sizes the pools could not satisfy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    /// Disagreement target minus disagreement ids available.
    pub disagreement: usize,
    /// Budget minus ids selected overall.
    pub total: usize,
}

/// A disagreement-oversampled selection with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub label_id: String,
    pub ids: Vec<String>,
    pub counts: CellCounts,
    pub budget: usize,
    pub ratio: f64,
    pub seed: u64,
    pub disagreement_target: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortfall: Option<Shortfall>,
}

/// Assign every instance with both a `prediction` and a `reference` value for
/// `label_id` to its confusion cell.
pub fn confusion_partition(
    corpus: &Corpus,
    label_id: &str,
    prediction: Layer,
    reference: Layer,
) -> Result<ConfusionPartition, SamplerError> {
    if !corpus.has_label(label_id) {
        return Err(SamplerError::UnknownLabel(label_id.to_string()));
    }
    let mut out = ConfusionPartition { label_id: label_id.to_string(), ..Default::default() };
    for inst in corpus.instances() {
        match (corpus.value(&inst.id, label_id, prediction), corpus.value(&inst.id, label_id, reference)) {
            (Some(p), Some(r)) => {
                out.cell_mut(Cell::of(p, r)).insert(inst.id.clone());
            }
            _ => out.uncovered += 1,
        }
    }
    Ok(out)
}

fn shuffled(ids: &BTreeSet<String>, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut v: Vec<String> = ids.iter().cloned().collect();
    v.shuffle(rng);
    v
}

/// Oversample disagreement cells so that disagreement:agreement is about `ratio`:1.
///
/// The disagreement target is `round(budget * ratio / (ratio + 1))`. FP and FN
/// are drawn in proportion to their pool sizes; the remainder of the budget is
/// filled from TP and TN as evenly as the pools allow, and then from any
/// disagreement ids left over. Pools that cannot meet the request are recorded
/// in [`SampleSet::shortfall`].
pub fn disagreement_sample(
    partition: &ConfusionPartition,
    budget: usize,
    ratio: f64,
    seed: u64,
) -> Result<SampleSet, SamplerError> {
    if budget == 0 {
        return Err(SamplerError::ZeroBudget);
    }
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(SamplerError::BadRatio(ratio));
    }
    let pools = partition.counts();
    let target = ((budget as f64 * ratio / (ratio + 1.0)).round() as usize).min(budget);

    let dis = target.min(pools.disagreement());
    let mut fp = if pools.disagreement() == 0 {
        0
    } else {
        (dis as f64 * pools.false_positives as f64 / pools.disagreement() as f64).round() as usize
    };
    fp = fp.clamp(dis.saturating_sub(pools.false_negatives), pools.false_positives.min(dis));
    let mut fneg = dis - fp;

    let rem = budget - dis;
    let mut tp = pools.true_positives.min(rem.div_ceil(2));
    let tn = pools.true_negatives.min(rem - tp);
    tp = pools.true_positives.min(rem - tn);

    let mut left = budget - dis - tp - tn;
    let extra_fp = left.min(pools.false_positives - fp);
    fp += extra_fp;
    left -= extra_fp;
    let extra_fn = left.min(pools.false_negatives - fneg);
    fneg += extra_fn;
    left -= extra_fn;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = Vec::with_capacity(budget - left);
    for (cell, n) in
        [(Cell::FalsePositive, fp), (Cell::FalseNegative, fneg), (Cell::TruePositive, tp), (Cell::TrueNegative, tn)]
    {
        let order = shuffled(partition.cell(cell), &mut rng);
        ids.extend(order.into_iter().take(n));
    }

    let shortfall = Shortfall { disagreement: target - dis, total: left };
    Ok(SampleSet {
        label_id: partition.label_id.clone(),
        ids,
        counts: CellCounts { true_positives: tp, false_positives: fp, true_negatives: tn, false_negatives: fneg },
        budget,
        ratio,
        seed,
        disagreement_target: target,
        shortfall: (shortfall != Shortfall::default()).then_some(shortfall),
    })
}

/// Dev/test id lists produced by [`balanced_split`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub label_id: String,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl SplitAssignment {
    pub fn apply(&self, corpus: &mut Corpus) -> Result<(), CorpusError> {
        for id in &self.dev {
            corpus.set_split(id, Split::Dev)?;
        }
        for id in &self.test {
            corpus.set_split(id, Split::Test)?;
        }
        Ok(())
    }
}

/// Stable 64-bit hash of `(salt, seed, id)`.
pub fn stable_hash(salt: &str, seed: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update([0]);
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let digest = h.finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn rank_by_hash(mut ids: Vec<String>, salt: &str, seed: u64) -> Vec<String> {
    ids.sort_by_cached_key(|id| (stable_hash(salt, seed, id), id.clone()));
    ids
}

/// Label-wise balanced dev/test split.
///
/// Positives (value 1 in `layer`) are ranked by a stable hash of `(id, seed)`
/// and halved, dev taking the extra one when the count is odd. Each split then
/// gets up to `max_neg_per_pos` negatives per positive, also by hash rank.
pub fn balanced_split(
    corpus: &Corpus,
    label_id: &str,
    layer: Layer,
    max_neg_per_pos: f64,
    seed: u64,
) -> Result<SplitAssignment, SamplerError> {
    if !corpus.has_label(label_id) {
        return Err(SamplerError::UnknownLabel(label_id.to_string()));
    }
    if !(max_neg_per_pos.is_finite() && max_neg_per_pos >= 0.0) {
        return Err(SamplerError::BadNegativeRatio(max_neg_per_pos));
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for inst in corpus.instances() {
        match corpus.value(&inst.id, label_id, layer) {
            Some(true) => pos.push(inst.id.clone()),
            Some(false) => neg.push(inst.id.clone()),
            None => {}
        }
    }
    if pos.len() < 2 {
        return Err(SamplerError::TooFewPositives { label: label_id.to_string(), positives: pos.len() });
    }
    let pos = rank_by_hash(pos, "pos", seed);
    let neg = rank_by_hash(neg, "neg", seed);
    let dev_pos = pos.len().div_ceil(2);
    let (dev_p, test_p) = pos.split_at(dev_pos);

    let want_dev = (max_neg_per_pos * dev_p.len() as f64).floor() as usize;
    let want_test = (max_neg_per_pos * test_p.len() as f64).floor() as usize;
    let (n_dev, n_test) = if neg.len() >= want_dev + want_test {
        (want_dev, want_test)
    } else {
        let dev = neg.len().div_ceil(2).min(want_dev);
        (dev, (neg.len() - dev).min(want_test))
    };

    let mut dev: Vec<String> = dev_p.to_vec();
    dev.extend(neg[..n_dev].iter().cloned());
    let mut test: Vec<String> = test_p.to_vec();
    test.extend(neg[n_dev..n_dev + n_test].iter().cloned());
    dev.sort();
    test.sort();
    Ok(SplitAssignment { label_id: label_id.to_string(), dev, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Instance;
    use crate::schema::{values, LabelSchema};

    fn corpus_from(pred: &[Option<u8>], reference: &[Option<u8>]) -> Corpus {
        let mut c = Corpus::new(&LabelSchema::default());
        for (i, (p, r)) in pred.iter().zip(reference).enumerate() {
            let id = format!("i{i}");
            c.add_instance(Instance::new(&id, "t", "en")).unwrap();
            if let Some(p) = p {
                c.set_values(&id, Layer::Model, &values([("male", *p)]), "m", None).unwrap();
            }
            if let Some(r) = r {
                c.set_values(&id, Layer::Original, &values([("male", *r)]), "import", None).unwrap();
            }
        }
        c
    }

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    fn partition(fp: usize, fneg: usize, tp: usize, tn: usize) -> ConfusionPartition {
        let mk = |p: &str, n: usize| (0..n).map(|i| format!("{p}{i}")).collect();
        ConfusionPartition {
            label_id: "male".into(),
            false_positives: mk("fp", fp),
            false_negatives: mk("fn", fneg),
            true_positives: mk("tp", tp),
            true_negatives: mk("tn", tn),
            uncovered: 0,
        }
    }

    #[test]
    fn partition_enumeration_example() {
        let c = corpus_from(&[Some(1), Some(1), Some(0), Some(0)], &[Some(1), Some(0), Some(0), Some(1)]);
        let p = confusion_partition(&c, "male", Layer::Model, Layer::Original).unwrap();
        assert_eq!(p.true_positives, set(&["i0"]));
        assert_eq!(p.false_positives, set(&["i1"]));
        assert_eq!(p.true_negatives, set(&["i2"]));
        assert_eq!(p.false_negatives, set(&["i3"]));
        assert!(confusion_partition(&c, "tall", Layer::Model, Layer::Original).is_err());
    }

    #[test]
    fn partial_coverage_is_counted() {
        let c = corpus_from(&[Some(1), Some(0), None], &[None, Some(0), Some(1)]);
        let p = confusion_partition(&c, "male", Layer::Model, Layer::Original).unwrap();
        assert_eq!(p.uncovered, 2);
        assert_eq!(p.covered(), 1);
    }

    #[test]
    fn sample_sixty_thirty() {
        let s = disagreement_sample(&partition(40, 20, 200, 200), 90, 2.0, 1).unwrap();
        assert_eq!(
            s.counts,
            CellCounts { false_positives: 40, false_negatives: 20, true_positives: 15, true_negatives: 15 }
        );
        assert_eq!(s.ids.len(), 90);
        assert!(s.shortfall.is_none());
    }

    #[test]
    fn sample_backfills_from_agreement() {
        let s = disagreement_sample(&partition(5, 5, 100, 100), 90, 2.0, 1).unwrap();
        assert_eq!(s.counts.disagreement(), 10);
        assert_eq!(s.counts.agreement(), 80);
        assert_eq!(s.counts.true_positives, 40);
        assert_eq!(s.shortfall, Some(Shortfall { disagreement: 50, total: 0 }));
    }

    #[test]
    fn sample_boundaries() {
        assert!(matches!(disagreement_sample(&partition(1, 0, 0, 0), 0, 2.0, 0), Err(SamplerError::ZeroBudget)));
        assert!(disagreement_sample(&partition(1, 0, 0, 0), 1, 0.0, 0).is_err());
        let s = disagreement_sample(&partition(3, 0, 5, 5), 1, 2.0, 0).unwrap();
        assert_eq!(s.counts.false_positives, 1);
        assert_eq!(s.ids.len(), 1);
    }

    #[test]
    fn budget_larger_than_pool_takes_everything() {
        let s = disagreement_sample(&partition(3, 2, 4, 1), 50, 2.0, 9).unwrap();
        assert_eq!(s.ids.len(), 10);
        assert_eq!(s.shortfall.unwrap().total, 40);
        let distinct: BTreeSet<_> = s.ids.iter().collect();
        assert_eq!(distinct.len(), 10);
    }

    #[test]
    fn agreement_shortage_backfills_with_disagreement() {
        let s = disagreement_sample(&partition(100, 0, 5, 0), 90, 2.0, 9).unwrap();
        assert_eq!(s.counts.true_positives, 5);
        assert_eq!(s.counts.false_positives, 85);
        assert!(s.shortfall.is_none());
    }

    fn split_corpus(pos: usize, neg: usize) -> Corpus {
        let mut c = Corpus::new(&LabelSchema::default());
        for i in 0..pos + neg {
            let id = format!("s{i}");
            c.add_instance(Instance::new(&id, "t", "en")).unwrap();
            c.set_values(&id, Layer::Original, &values([("elderly", u8::from(i < pos))]), "import", None).unwrap();
        }
        c
    }

    #[test]
    fn balanced_split_sizes() {
        let c = split_corpus(100, 5000);
        let s = balanced_split(&c, "elderly", Layer::Original, 1.0, 3).unwrap();
        assert_eq!(s.dev.len(), 100);
        assert_eq!(s.test.len(), 100);
        let dev: BTreeSet<_> = s.dev.iter().collect();
        assert!(s.test.iter().all(|id| !dev.contains(id)));
        let dev_pos = s.dev.iter().filter(|id| c.value(id, "elderly", Layer::Original) == Some(true)).count();
        assert_eq!(dev_pos, 50);
    }

    #[test]
    fn balanced_split_needs_two_positives() {
        let c = split_corpus(1, 10);
        assert!(matches!(
            balanced_split(&c, "elderly", Layer::Original, 1.0, 0),
            Err(SamplerError::TooFewPositives { positives: 1, .. })
        ));
    }

    #[test]
    fn balanced_split_with_few_negatives() {
        let c = split_corpus(10, 3);
        let s = balanced_split(&c, "elderly", Layer::Original, 1.0, 0).unwrap();
        assert_eq!(s.dev.len() + s.test.len(), 13);
    }

    #[test]
    fn apply_split_marks_instances() {
        let mut c = split_corpus(4, 4);
        let s = balanced_split(&c, "elderly", Layer::Original, 1.0, 0).unwrap();
        s.apply(&mut c).unwrap();
        assert!(c.instance(&s.dev[0]).unwrap().split == Split::Dev);
    }
}
