//! Binary classification metrics, the sum-of-scores baseline and the
//! relation-noise sensitivity sweep. Class 1 is the positive class.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{corrupt_relations, tree_rng};
use crate::cells::{forward_tree, Params};
use crate::error::{Error, Result};
use crate::tree::DiscourseTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub balanced_accuracy: f64,
    /// F1 of the positive class.
    pub f1: f64,
    /// Mean of the positive- and negative-class F1.
    pub macro_f1: f64,
    /// `None` when the data hold a single class.
    pub auc: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n_examples: usize,
}

fn f1_score(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if tp == 0 || denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

impl Metrics {
    /// Metrics from confusion counts, without AUC. When one class is absent
    /// its rate is undefined and balanced accuracy is the other rate alone.
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Metrics {
        let pos = tp + fn_;
        let neg = tn + fp;
        let rates: Vec<f64> = [(tp, pos), (tn, neg)]
            .into_iter()
            .filter(|(_, total)| *total > 0)
            .map(|(hit, total)| hit as f64 / total as f64)
            .collect();
        let balanced_accuracy = if rates.is_empty() {
            0.0
        } else {
            rates.iter().sum::<f64>() / rates.len() as f64
        };
        let f1 = f1_score(tp, fp, fn_);
        let f1_neg = f1_score(tn, fn_, fp);
        Metrics {
            balanced_accuracy,
            f1,
            macro_f1: (f1 + f1_neg) / 2.0,
            auc: None,
            tp,
            fp,
            tn,
            fn_,
            n_examples: tp + fp + tn + fn_,
        }
    }
}

fn check_binary(labels: &[usize]) -> Result<()> {
    if let Some(l) = labels.iter().find(|l| **l > 1) {
        return Err(Error::Data(format!("label {l} is not binary")));
    }
    Ok(())
}

/// Area under the ROC curve via the Mann–Whitney statistic, with tied
/// scores sharing their mean rank.
pub fn roc_auc(labels: &[usize], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::Data(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    check_binary(labels)?;
    let pos = labels.iter().filter(|l| **l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::AucUndefined);
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Data(format!("score {s} is not a number")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; the tie group i..=j shares their mean.
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|k| labels[**k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Metrics for hard predictions plus positive-class scores.
pub fn evaluate_predictions(labels: &[usize], predicted: &[usize], scores: &[f64]) -> Result<Metrics> {
    if labels.len() != predicted.len() || labels.len() != scores.len() {
        return Err(Error::Data("labels, predictions and scores differ in length".into()));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("no examples to evaluate".into()));
    }
    check_binary(labels)?;
    check_binary(predicted)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (y, p) in labels.iter().zip(predicted) {
        match (y, p) {
            (1, 1) => tp += 1,
            (0, 1) => fp += 1,
            (0, 0) => tn += 1,
            _ => fn_ += 1,
        }
    }
    let mut m = Metrics::from_counts(tp, fp, tn, fn_);
    m.auc = match roc_auc(labels, scores) {
        Ok(a) => Some(a),
        Err(Error::AucUndefined) => None,
        Err(e) => return Err(e),
    };
    Ok(m)
}

/// Anything that maps a tree to a predicted class and a positive-class score.
pub trait Scorer: Sync {
    fn score(&self, tree: &DiscourseTree) -> Result<(usize, f64)>;
}

impl Scorer for Params {
    fn score(&self, tree: &DiscourseTree) -> Result<(usize, f64)> {
        let probs = forward_tree(tree, self)?.probs;
        let mut best = 0;
        for (k, p) in probs.iter().enumerate() {
            if *p > probs[best] {
                best = k;
            }
        }
        Ok((best, probs.get(1).copied().unwrap_or(0.0)))
    }
}

/// Positive exactly when the leaf sentiment scores add up to more than zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct SumBaseline;

/// Sum of the first feature over all leaves.
pub fn leaf_score_sum(tree: &DiscourseTree) -> Result<f64> {
    let mut total = 0.0;
    for id in tree.leaves() {
        let node = tree.node(id);
        let first = node
            .features
            .as_ref()
            .and_then(|f| f.first())
            .ok_or_else(|| Error::State {
                node: id.0,
                message: format!("leaf of tree {} is not featurized", tree.doc_id),
            })?;
        total += first;
    }
    Ok(total)
}

/// Class from the leaf score sum; a sum of exactly zero counts as negative.
pub fn sum_baseline(tree: &DiscourseTree) -> Result<usize> {
    Ok(usize::from(leaf_score_sum(tree)? > 0.0))
}

impl Scorer for SumBaseline {
    fn score(&self, tree: &DiscourseTree) -> Result<(usize, f64)> {
        let s = leaf_score_sum(tree)?;
        Ok((usize::from(s > 0.0), s))
    }
}

pub fn evaluate<S: Scorer + ?Sized>(scorer: &S, trees: &[DiscourseTree]) -> Result<Metrics> {
    let scored: Vec<(usize, usize, f64)> = trees
        .par_iter()
        .map(|t| {
            let label = t
                .label
                .ok_or_else(|| Error::Data(format!("tree {} has no label", t.doc_id)))?;
            let (pred, score) = scorer.score(t)?;
            Ok((label, pred, score))
        })
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = scored.iter().map(|s| s.0).collect();
    let predicted: Vec<usize> = scored.iter().map(|s| s.1).collect();
    let scores: Vec<f64> = scored.iter().map(|s| s.2).collect();
    evaluate_predictions(&labels, &predicted, &scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub balanced_accuracy: f64,
    pub f1: f64,
    /// Mean over the seeds where AUC is defined.
    pub auc: Option<f64>,
    pub seed_count: usize,
}

/// Test-time relation noise: for each fraction and seed, every test tree
/// gets its own corruption stream, then metrics are averaged over seeds.
/// Streams do not depend on the fraction, so the noise at a smaller
/// fraction is contained in the noise at a larger one.
pub fn sensitivity_sweep(
    params: &Params,
    testset: &[DiscourseTree],
    fractions: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("the sweep needs at least one seed".into()));
    }
    if !params.variant().is_discourse() {
        log::warn!(
            "{} ignores relation types; sensitivity metrics will not change with the noise fraction",
            params.variant()
        );
    }
    let mut rows = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let noisy: Vec<DiscourseTree> = testset
                .par_iter()
                .enumerate()
                .map(|(i, t)| corrupt_relations(t, fraction, &mut tree_rng(seed, i)))
                .collect::<Result<_>>()?;
            per_seed.push(evaluate(params, &noisy)?);
        }
        let k = per_seed.len() as f64;
        let aucs: Vec<f64> = per_seed.iter().filter_map(|m| m.auc).collect();
        rows.push(SweepRow {
            fraction,
            balanced_accuracy: per_seed.iter().map(|m| m.balanced_accuracy).sum::<f64>() / k,
            f1: per_seed.iter().map(|m| m.f1).sum::<f64>() / k,
            auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
            seed_count: seeds.len(),
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{HierarchyType, NodeSpec, RelationType};
    use proptest::prelude::*;

    #[test]
    fn hand_computed_confusion_matrix() {
        let m = Metrics::from_counts(40, 20, 30, 10);
        assert!((m.balanced_accuracy - 0.7).abs() <= 1e-12);
        assert!((m.f1 - 80.0 / 110.0).abs() <= 1e-12);
        assert!((m.f1 - 0.7273).abs() < 5e-5);
        assert_eq!(m.n_examples, 100);
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let labels = [1, 0, 1, 0];
        let m = evaluate_predictions(&labels, &labels, &[0.9, 0.1, 0.8, 0.3]).unwrap();
        assert_eq!((m.balanced_accuracy, m.f1, m.auc), (1.0, 1.0, Some(1.0)));
        let m = evaluate_predictions(&labels, &[1, 1, 1, 1], &[0.5; 4]).unwrap();
        assert_eq!(m.balanced_accuracy, 0.5);
        assert_eq!(m.auc, Some(0.5));
    }

    #[test]
    fn f1_is_zero_without_true_positives() {
        assert_eq!(Metrics::from_counts(0, 0, 5, 5).f1, 0.0);
        assert_eq!(Metrics::from_counts(0, 3, 5, 0).f1, 0.0);
    }

    #[test]
    fn single_class_has_no_auc() {
        assert!(matches!(roc_auc(&[1, 1], &[0.2, 0.4]), Err(Error::AucUndefined)));
        let m = evaluate_predictions(&[1, 1], &[1, 0], &[0.7, 0.2]).unwrap();
        assert_eq!(m.auc, None);
        assert_eq!(m.balanced_accuracy, 0.5);
    }

    #[test]
    fn auc_uses_midranks() {
        // Pairs: (0.5 vs 0.5) tie counts half, (0.5 vs 0.2) wins, (0.9 vs both) wins.
        let auc = roc_auc(&[1, 0, 1, 0], &[0.5, 0.5, 0.9, 0.2]).unwrap();
        assert!((auc - 3.5 / 4.0).abs() < 1e-15);
    }

    fn featured(values: &[f64], label: usize) -> DiscourseTree {
        let leaves = values
            .iter()
            .map(|v| NodeSpec::featured(Some(HierarchyType::Nucleus), "x", vec![*v]))
            .collect();
        DiscourseTree::from_spec("b", Some(label), NodeSpec::inner(RelationType::Joint, None, leaves)).unwrap()
    }

    #[test]
    fn baseline_tie_goes_negative() {
        assert_eq!(sum_baseline(&featured(&[0.4, -0.1], 1)).unwrap(), 1);
        assert_eq!(sum_baseline(&featured(&[0.0, 0.0], 1)).unwrap(), 0);
        assert_eq!(sum_baseline(&featured(&[0.25, -0.25], 1)).unwrap(), 0);
    }

    #[test]
    fn sweep_writes_csv() {
        use crate::cells::{ModelConfig, Variant};
        let params = Params::zeros(ModelConfig::new(Variant::ChildSum, 3, 1, 2).unwrap()).unwrap();
        let test = vec![featured(&[0.1, 0.2], 1), featured(&[-0.3, 0.1], 0)];
        let rows = sensitivity_sweep(&params, &test, &[0.0, 0.5], &[1, 2]).unwrap();
        assert_eq!(rows[0].balanced_accuracy, rows[1].balanced_accuracy);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_sweep_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("fraction,balanced_accuracy,f1,auc,seed_count\n"));
    }

    proptest! {
        #[test]
        fn auc_ignores_monotone_transforms(
            data in prop::collection::vec((0usize..2, -5.0f64..5.0), 2..40),
            shift in -3.0f64..3.0,
        ) {
            let labels: Vec<usize> = data.iter().map(|d| d.0).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let scores: Vec<f64> = data.iter().map(|d| d.1).collect();
            let moved: Vec<f64> = scores.iter().map(|s| (s + shift).exp()).collect();
            let a = roc_auc(&labels, &scores).unwrap();
            let b = roc_auc(&labels, &moved).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn balanced_accuracy_ignores_duplication(
            data in prop::collection::vec((0usize..2, 0usize..2), 1..40),
            copies in 2usize..4,
        ) {
            let count = |d: &[(usize, usize)]| {
                let c = |y, p| d.iter().filter(|x| **x == (y, p)).count();
                Metrics::from_counts(c(1, 1), c(0, 1), c(0, 0), c(1, 0))
            };
            let repeated: Vec<_> = data.iter().flat_map(|d| std::iter::repeat_n(*d, copies)).collect();
            let a = count(&data).balanced_accuracy;
            let b = count(&repeated).balanced_accuracy;
            prop_assert!((a - b).abs() < 1e-15);
        }
    }
}
