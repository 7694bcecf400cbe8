//! Sum-rule fusion of classifier outputs, accuracy / macro F-measure, and
//! the k-fold evaluation protocol.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PredictionMeta {
    pub run_id: String,
    pub variant: String,
    pub seed: u64,
    /// Held-out fold, `None` when predicting on the whole dataset.
    pub fold: Option<usize>,
    /// Constituent run ids for fused sets; empty for a single run.
    pub members: Vec<String>,
}

/// Per-sample class-probability rows paired with the true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub meta: PredictionMeta,
    class_count: usize,
    probs: Vec<f64>,
    labels: Vec<usize>,
}

impl PredictionSet {
    /// `probs` is row-major `labels.len() × class_count`; each row must be
    /// a probability vector.
    pub fn new(
        meta: PredictionMeta,
        class_count: usize,
        probs: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if class_count == 0 || probs.len() != labels.len() * class_count {
            return Err(Error::InvalidShape {
                shape: vec![labels.len(), class_count],
                len: probs.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::Config(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        for (i, row) in probs.chunks(class_count).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Config(format!(
                    "row {i} of `{}` is not a probability vector (sum = {sum})",
                    meta.run_id
                )));
            }
        }
        Ok(Self {
            meta,
            class_count,
            probs,
            labels,
        })
    }

    pub fn empty(meta: PredictionMeta, class_count: usize) -> Self {
        Self {
            meta,
            class_count,
            probs: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn with_meta(mut self, meta: PredictionMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.class_count..(i + 1) * self.class_count]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.class_count)
    }

    /// Predicted class per sample; ties go to the lowest class index.
    pub fn decisions(&self) -> Vec<usize> {
        self.rows().map(argmax).collect()
    }

    /// Run ids this set stands for.
    pub fn member_ids(&self) -> Vec<String> {
        if self.meta.members.is_empty() {
            vec![self.meta.run_id.clone()]
        } else {
            self.meta.members.clone()
        }
    }
}

/// Index of the largest value, first index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// What the sum rule adds up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionRule {
    /// Average of member probability rows.
    #[default]
    Probabilities,
    /// Average of member log-probabilities (logits up to a per-row shift),
    /// renormalized with a softmax.
    Logits,
}

/// Sum-rule fusion with the default probability rule.
pub fn fuse_sum(members: &[PredictionSet]) -> Result<PredictionSet> {
    fuse(members, FusionRule::Probabilities)
}

/// Members are combined in ascending run-id order so the result does not
/// depend on how they were listed.
pub fn fuse(members: &[PredictionSet], rule: FusionRule) -> Result<PredictionSet> {
    let first = members.first().ok_or(Error::EmptyPredictions)?;
    for m in &members[1..] {
        let mismatch = |reason: String| Error::IncompatibleMember {
            member: m.meta.run_id.clone(),
            reason,
        };
        if m.class_count != first.class_count {
            return Err(mismatch(format!(
                "{} classes, expected {}",
                m.class_count, first.class_count
            )));
        }
        if m.len() != first.len() {
            return Err(mismatch(format!(
                "{} samples, expected {}",
                m.len(),
                first.len()
            )));
        }
        if m.meta.fold != first.meta.fold {
            return Err(mismatch(format!(
                "fold {:?}, expected {:?}",
                m.meta.fold, first.meta.fold
            )));
        }
        if let Some(i) = (0..m.len()).find(|&i| m.labels[i] != first.labels[i]) {
            return Err(mismatch(format!("label disagreement at sample {i}")));
        }
    }

    let mut ordered: Vec<&PredictionSet> = members.iter().collect();
    ordered.sort_by(|a, b| a.meta.run_id.cmp(&b.meta.run_id));

    let n = members.len() as f64;
    let mut probs = vec![0.0; first.probs.len()];
    for m in &ordered {
        for (acc, &p) in probs.iter_mut().zip(&m.probs) {
            *acc += match rule {
                FusionRule::Probabilities => p,
                FusionRule::Logits => p.max(f64::MIN_POSITIVE).ln(),
            };
        }
    }
    probs.iter_mut().for_each(|v| *v /= n);
    if rule == FusionRule::Logits {
        for row in probs.chunks_mut(first.class_count) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
    }

    let member_ids: Vec<String> = ordered.iter().flat_map(|m| m.member_ids()).collect();
    let mut variants: Vec<&str> = Vec::new();
    for m in &ordered {
        if !variants.contains(&m.meta.variant.as_str()) {
            variants.push(&m.meta.variant);
        }
    }
    let meta = PredictionMeta {
        run_id: member_ids.join("+"),
        variant: variants.join("+"),
        seed: 0,
        fold: first.meta.fold,
        members: member_ids,
    };
    PredictionSet::new(meta, first.class_count, probs, first.labels.clone())
}

/// Concatenates per-fold held-out sets into one pooled set.
pub fn pool(sets: &[PredictionSet]) -> Result<PredictionSet> {
    let first = sets.first().ok_or(Error::EmptyPredictions)?;
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for s in sets {
        if s.class_count != first.class_count {
            return Err(Error::IncompatibleMember {
                member: s.meta.run_id.clone(),
                reason: format!("{} classes, expected {}", s.class_count, first.class_count),
            });
        }
        probs.extend_from_slice(&s.probs);
        labels.extend_from_slice(&s.labels);
    }
    let meta = PredictionMeta {
        fold: None,
        ..first.meta.clone()
    };
    Ok(PredictionSet {
        meta,
        class_count: first.class_count,
        probs,
        labels,
    })
}

/// `counts[actual][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_predictions(p: &PredictionSet) -> Self {
        let c = p.class_count;
        let mut counts = vec![vec![0; c]; c];
        for (row, &y) in p.rows().zip(&p.labels) {
            counts[y][argmax(row)] += 1;
        }
        Self { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Per-class F1; a class with no true positives scores 0.
    pub fn f1_per_class(&self) -> Vec<f64> {
        let c = self.counts.len();
        (0..c)
            .map(|k| {
                let tp = self.counts[k][k] as f64;
                let predicted: u64 = (0..c).map(|a| self.counts[a][k]).sum();
                let actual: u64 = self.counts[k].iter().sum();
                if tp == 0.0 {
                    return 0.0;
                }
                let precision = tp / predicted as f64;
                let recall = tp / actual as f64;
                2.0 * precision * recall / (precision + recall)
            })
            .collect()
    }
}

pub fn accuracy(p: &PredictionSet) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::EmptyPredictions);
    }
    let cm = ConfusionMatrix::from_predictions(p);
    Ok(cm.correct() as f64 / cm.total() as f64)
}

/// Macro-averaged F1 over all `class_count` classes.
pub fn f_measure(p: &PredictionSet) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::EmptyPredictions);
    }
    let f1 = ConfusionMatrix::from_predictions(p).f1_per_class();
    Ok(f1.iter().sum::<f64>() / f1.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub samples: usize,
    pub accuracy: f64,
    pub f_measure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub f_measure: f64,
    pub per_fold: Vec<FoldMetrics>,
    pub members: usize,
}

impl EvalReport {
    /// Pooled and per-fold metrics for one held-out set per fold, in fold
    /// order.
    pub fn from_folds(per_fold: &[PredictionSet]) -> Result<Self> {
        let mut folds = Vec::with_capacity(per_fold.len());
        for (fold, set) in per_fold.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::EmptyFold { fold });
            }
            folds.push(FoldMetrics {
                fold,
                samples: set.len(),
                accuracy: accuracy(set)?,
                f_measure: f_measure(set)?,
            });
        }
        let pooled = pool(per_fold)?;
        let members = per_fold.first().map_or(0, |s| s.member_ids().len());
        Ok(Self {
            accuracy: accuracy(&pooled)?,
            f_measure: f_measure(&pooled)?,
            per_fold: folds,
            members,
        })
    }
}

/// Runs `runner` once per held-out fold and evaluates the pooled result.
pub fn kfold_protocol(
    dataset: &Dataset,
    k: usize,
    mut runner: impl FnMut(usize) -> Result<PredictionSet>,
) -> Result<EvalReport> {
    if k < 2 {
        return Err(Error::Config(format!(
            "k-fold protocol needs k >= 2 (got {k})"
        )));
    }
    if dataset.fold_count() != k {
        return Err(Error::Config(format!(
            "dataset is partitioned into {} folds, expected {k}",
            dataset.fold_count()
        )));
    }
    if let Some(fold) = dataset.fold_sizes().iter().position(|&n| n == 0) {
        return Err(Error::EmptyFold { fold });
    }
    let sets = (0..k).map(&mut runner).collect::<Result<Vec<_>>>()?;
    EvalReport::from_folds(&sets)
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary {
            mean: f64::NAN,
            std: f64::NAN,
            n,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Summary { mean, std, n }
}
