//! Minibatch Adam training with L2 regularization, weight dropout, per-epoch
//! augmentation and early stopping on validation loss.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_epoch, AugmentConfig};
use crate::cells::{forward_tree, tree_loss, Bound, ModelConfig, ParamKind, Params, Variant};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, TensorError, Var};
use crate::tree::DiscourseTree;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Memory size.
    pub n: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub patience: usize,
    pub val_fraction: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Probability of zeroing each weight entry during a training step.
    pub dropout: f64,
    pub augment: AugmentConfig,
    pub classes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::DiscourseChildSum,
            n: 10,
            learning_rate: 1e-3,
            l2: 0.001,
            patience: 10,
            val_fraction: 0.2,
            max_epochs: 100,
            batch_size: 16,
            dropout: 0.0,
            augment: AugmentConfig::default(),
            classes: 2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction {} must lie in (0, 1)", self.val_fraction));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            ));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad(format!("l2 {} must be finite and non-negative", self.l2));
        }
        if self.classes < 2 {
            return bad("at least two classes are needed for training".into());
        }
        self.augment.validate()
    }

    pub fn model_config(&self, d_in: usize) -> Result<ModelConfig> {
        ModelConfig::new(self.variant, self.n, d_in, self.classes)
    }
}

/// Stratified split: each label contributes round(share · count) items to
/// validation. Both parts keep the input order.
pub fn split_train_val(
    dataset: &[DiscourseTree],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<DiscourseTree>, Vec<DiscourseTree>)> {
    if dataset.len() < 5 {
        return Err(Error::Config(format!(
            "need at least 5 trees to split off a validation set, got {}",
            dataset.len()
        )));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!("val_fraction {val_fraction} must lie in (0, 1)")));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, t) in dataset.iter().enumerate() {
        let label = t
            .label
            .ok_or_else(|| Error::Data(format!("tree {} has no label", t.doc_id)))?;
        groups.entry(label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_val = vec![false; dataset.len()];
    let mut val_count = 0;
    for members in groups.values_mut() {
        members.shuffle(&mut rng);
        let take = (members.len() as f64 * val_fraction).round() as usize;
        for i in &members[..take] {
            in_val[*i] = true;
        }
        val_count += take;
    }
    if val_count == 0 || val_count == dataset.len() {
        return Err(Error::Config(format!(
            "val_fraction {val_fraction} leaves an empty split for {} trees",
            dataset.len()
        )));
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (t, v) in dataset.iter().zip(in_val) {
        if v {
            val.push(t.clone());
        } else {
            train.push(t.clone());
        }
    }
    Ok((train, val))
}

/// Cross-entropy at the root plus `l2 · Σ‖W‖²` over the weight tensors of
/// `raw` (biases excluded). `bound` supplies the values used in the forward
/// pass, which differ from `raw` only under weight dropout.
pub fn loss_on_tape(tape: &mut Tape, bound: &mut Bound<'_>, raw: &[Var], tree: &DiscourseTree, l2: f64) -> Result<Var> {
    let xent = tree_loss(tape, bound, tree)?;
    if l2 == 0.0 {
        return Ok(xent);
    }
    let mut terms = Vec::new();
    for (spec, v) in bound.params().specs().iter().zip(raw) {
        if spec.kind == ParamKind::Weight {
            terms.push(tape.squared_norm(*v)?);
        }
    }
    let penalty = tape.sum(&terms)?;
    let penalty = tape.scale(penalty, l2)?;
    Ok(tape.add(xent, penalty)?)
}

/// Value of the full loss for one tree.
pub fn loss(tree: &DiscourseTree, params: &Params, l2: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let mut bound = Bound::new(&mut tape, params);
    let raw = bound.vars().to_vec();
    let out = loss_on_tape(&mut tape, &mut bound, &raw, tree, l2)?;
    Ok(tape.value(out).item())
}

/// Per-entry multipliers for weight dropout: 0 with probability `p`, else
/// 1/(1−p). `None` for biases.
fn sample_masks<R: Rng + ?Sized>(params: &Params, p: f64, rng: &mut R) -> Vec<Option<Tensor>> {
    let keep = 1.0 / (1.0 - p);
    params
        .specs()
        .iter()
        .map(|spec| {
            (spec.kind == ParamKind::Weight).then(|| {
                let mut t = Tensor::zeros(&spec.shape);
                for v in t.data_mut() {
                    *v = if rng.gen::<f64>() < p { 0.0 } else { keep };
                }
                t
            })
        })
        .collect()
}

/// Loss and parameter gradients for one tree.
fn tree_gradients(
    tree: &DiscourseTree,
    params: &Params,
    masks: Option<&[Option<Tensor>]>,
    l2: f64,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let raw: Vec<Var> = params.tensors().iter().map(|t| tape.leaf(t.clone())).collect();
    let used = match masks {
        Some(masks) => {
            let mut used = Vec::with_capacity(raw.len());
            for (r, m) in raw.iter().zip(masks) {
                used.push(match m {
                    Some(mask) => {
                        let m = tape.leaf(mask.clone());
                        tape.mul(*r, m)?
                    }
                    None => *r,
                });
            }
            used
        }
        None => raw.clone(),
    };
    let mut bound = Bound::with_vars(&tape, params, used)?;
    let out = loss_on_tape(&mut tape, &mut bound, &raw, tree, l2)?;
    let value = tape.value(out).item();
    let mut grads = tape.backward(out)?;
    Ok((value, raw.iter().map(|v| grads.take(*v)).collect()))
}

struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    fn new(params: &Params) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut Params, grads: &[Tensor], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (k, p) in params.tensors_mut().iter_mut().enumerate() {
            let (m, v, g) = (self.m[k].data_mut(), self.v[k].data_mut(), grads[k].data());
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
                v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
            }
        }
    }
}

/// Stops once `patience` consecutive epochs fail to beat the best loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> Observation {
        let improved = val_loss < self.best;
        if improved {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        Observation {
            improved,
            stop: self.since_best >= self.patience,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean full loss (with penalty) over the augmented minibatches.
    pub train_loss: f64,
    /// Accuracy on the clean training split.
    pub train_accuracy: f64,
    /// Mean cross-entropy on the validation split.
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub train_size: usize,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 0 when no epoch ran and the initial parameters are returned.
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub stop_reason: StopReason,
    pub wall_time: Duration,
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "kebab-case")]
enum ReportLine<'a> {
    Epoch(&'a EpochRecord),
    Summary {
        epochs_run: usize,
        best_epoch: usize,
        best_val_loss: Option<f64>,
        final_val_accuracy: Option<f64>,
        stop_reason: StopReason,
    },
}

impl TrainReport {
    pub fn best_record(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    /// One JSON object per epoch followed by a summary line. Wall time is
    /// left out so that reruns produce identical bytes.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(&ReportLine::Epoch(e)).expect("serializable"));
            out.push('\n');
        }
        let summary = ReportLine::Summary {
            epochs_run: self.epochs.len(),
            best_epoch: self.best_epoch,
            best_val_loss: self.best_val_loss,
            final_val_accuracy: self.best_record().map(|e| e.val_accuracy),
            stop_reason: self.stop_reason,
        };
        out.push_str(&serde_json::to_string(&summary).expect("serializable"));
        out.push('\n');
        out
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

fn check_dataset(trees: &[DiscourseTree], what: &str, classes: usize) -> Result<usize> {
    let first = trees
        .first()
        .ok_or_else(|| Error::EmptyInput(format!("{what} set is empty")))?;
    let dim = first
        .feature_dim()
        .ok_or_else(|| Error::Data(format!("tree {} is not featurized", first.doc_id)))?;
    for t in trees {
        match t.feature_dim() {
            Some(d) if d == dim => {}
            Some(d) => {
                return Err(Error::Data(format!(
                    "tree {} has feature dimension {d}, expected {dim}",
                    t.doc_id
                )))
            }
            None => return Err(Error::Data(format!("tree {} is not featurized", t.doc_id))),
        }
        match t.label {
            Some(l) if l < classes => {}
            Some(l) => {
                return Err(Error::Data(format!(
                    "tree {} has label {l} but only {classes} classes are configured",
                    t.doc_id
                )))
            }
            None => return Err(Error::Data(format!("tree {} has no label", t.doc_id))),
        }
    }
    Ok(dim)
}

fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (k, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = k;
        }
    }
    best
}

/// Mean cross-entropy and accuracy, without regularization or dropout.
pub fn evaluate_loss(trees: &[DiscourseTree], params: &Params) -> Result<(f64, f64)> {
    let per_tree: Vec<(f64, bool)> = trees
        .par_iter()
        .map(|t| {
            let out = forward_tree(t, params)?;
            let label = t
                .label
                .ok_or_else(|| Error::Data(format!("tree {} has no label", t.doc_id)))?;
            let xent = -out.probs[label].max(f64::MIN_POSITIVE).ln();
            Ok((xent, argmax(&out.probs) == label))
        })
        .collect::<Result<_>>()?;
    let n = per_tree.len().max(1) as f64;
    let loss = per_tree.iter().map(|(l, _)| l).sum::<f64>() / n;
    let acc = per_tree.iter().filter(|(_, ok)| *ok).count() as f64 / n;
    Ok((loss, acc))
}

fn divergence(epoch: usize, batch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Tensor(TensorError::NonFinite { .. }) => Error::Divergence { epoch, batch },
        other => other,
    }
}

/// Trains on `train`, selecting the epoch with the lowest loss on `val`.
/// `val` is only ever read.
pub fn fit(train: &[DiscourseTree], val: &[DiscourseTree], config: &TrainConfig) -> Result<(Params, TrainReport)> {
    config.validate()?;
    let started = Instant::now();
    let d_in = check_dataset(train, "training", config.classes)?;
    let val_dim = check_dataset(val, "validation", config.classes)?;
    if val_dim != d_in {
        return Err(Error::Data(format!(
            "validation features have dimension {val_dim}, training features {d_in}"
        )));
    }
    if config.variant.is_nary() {
        if let Some(t) = train.iter().chain(val).find(|t| !t.is_binary()) {
            return Err(Error::Data(format!(
                "tree {} is not binary, as N-ary models require",
                t.doc_id
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = Params::init(config.model_config(d_in)?, &mut rng)?;
    let mut best = params.clone();
    let mut adam = Adam::new(&params);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs {
        let mut data = augment_epoch(train, &config.augment, &mut rng)?;
        data.shuffle(&mut rng);
        let mut loss_total = 0.0;
        for (b, batch) in data.chunks(config.batch_size).enumerate() {
            let masks = (config.dropout > 0.0).then(|| sample_masks(&params, config.dropout, &mut rng));
            let results: Vec<(f64, Vec<Tensor>)> = batch
                .par_iter()
                .map(|t| tree_gradients(t, &params, masks.as_deref(), config.l2))
                .collect::<Result<_>>()
                .map_err(divergence(epoch, b))?;
            let mut grads: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
            for (value, g) in &results {
                if !value.is_finite() {
                    return Err(Error::Divergence { epoch, batch: b });
                }
                loss_total += value;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.add_assign(gi)?;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in &mut grads {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }
            adam.step(&mut params, &grads, config.learning_rate);
            if params.tensors().iter().any(|t| !t.is_finite()) {
                return Err(Error::Divergence { epoch, batch: b });
            }
        }

        let batches = data.len().div_ceil(config.batch_size);
        let (_, train_accuracy) = evaluate_loss(train, &params).map_err(divergence(epoch, batches))?;
        let (val_loss, val_accuracy) = evaluate_loss(val, &params).map_err(divergence(epoch, batches))?;
        let seen = stopper.observe(epoch, val_loss);
        if seen.improved {
            best = params.clone();
        }
        log::info!(
            "epoch {epoch}: train loss {:.5} acc {:.3}, val loss {val_loss:.5} acc {val_accuracy:.3}",
            loss_total / data.len() as f64,
            train_accuracy
        );
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_total / data.len() as f64,
            train_accuracy,
            val_loss,
            val_accuracy,
            train_size: data.len(),
            improved: seen.improved,
        });
        if seen.stop {
            stop_reason = StopReason::Patience;
            break;
        }
    }

    let wall_time = started.elapsed();
    log::info!("training finished in {:.2?}", wall_time);
    let report = TrainReport {
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best_loss().is_finite().then(|| stopper.best_loss()),
        epochs,
        stop_reason,
        wall_time,
    };
    Ok((best, report))
}

/// Splits off a validation set and trains.
pub fn train(dataset: &[DiscourseTree], config: &TrainConfig) -> Result<(Params, TrainReport)> {
    config.validate()?;
    let (train, val) = split_train_val(dataset, config.val_fraction, config.seed)?;
    fit(&train, &val, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{HierarchyType, NodeSpec, RelationType};

    fn tree(id: usize, a: f64, b: f64, label: usize) -> DiscourseTree {
        DiscourseTree::from_spec(
            format!("t{id}"),
            Some(label),
            NodeSpec::inner(
                RelationType::Contrast,
                None,
                vec![
                    NodeSpec::featured(Some(HierarchyType::Nucleus), "a", vec![a]),
                    NodeSpec::featured(Some(HierarchyType::Satellite), "b", vec![b]),
                ],
            ),
        )
        .unwrap()
    }

    fn toy(n: usize) -> Vec<DiscourseTree> {
        (0..n)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                tree(i, 0.5 * s + 0.01 * i as f64, -0.2 * s, usize::from(s > 0.0))
            })
            .collect()
    }

    #[test]
    fn split_sizes_and_stratification() {
        let data = toy(100);
        let (train, val) = split_train_val(&data, 0.2, 7).unwrap();
        assert_eq!((train.len(), val.len()), (80, 20));
        assert_eq!(val.iter().filter(|t| t.label == Some(1)).count(), 10);
        let ids: std::collections::HashSet<_> = train.iter().chain(&val).map(|t| t.doc_id.clone()).collect();
        assert_eq!(ids.len(), 100);
        assert_eq!(split_train_val(&data, 0.2, 7).unwrap(), (train, val));

        let same: Vec<_> = (0..10).map(|i| tree(i, 0.1, 0.1, 1)).collect();
        let (train, val) = split_train_val(&same, 0.2, 1).unwrap();
        assert_eq!((train.len(), val.len()), (8, 2));
        assert!(matches!(split_train_val(&same[..4], 0.2, 1), Err(Error::Config(_))));
    }

    #[test]
    fn zero_model_loss_is_ln2() {
        let params = Params::zeros(ModelConfig::new(Variant::ChildSum, 10, 1, 2).unwrap()).unwrap();
        let t = tree(0, 0.3, -0.4, 1);
        assert!((loss(&t, &params, 0.0).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!((loss(&t, &params, 0.05).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_adds_the_weight_penalty() {
        let params = Params::init(
            ModelConfig::new(Variant::DiscourseChildSum, 4, 1, 2).unwrap(),
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        let t = tree(0, 0.3, -0.4, 0);
        let penalty: f64 = params
            .specs()
            .iter()
            .zip(params.tensors())
            .filter(|(s, _)| s.kind == ParamKind::Weight)
            .map(|(_, t)| t.data().iter().map(|v| v * v).sum::<f64>())
            .sum();
        let xent = -forward_tree(&t, &params).unwrap().probs[0].ln();
        let total = loss(&t, &params, 0.01).unwrap();
        assert!((total - (xent + 0.01 * penalty)).abs() < 1e-12);
        let mut unlabeled = t.clone();
        unlabeled.label = None;
        assert!(matches!(loss(&unlabeled, &params, 0.0), Err(Error::Data(_))));
    }

    #[test]
    fn early_stopping_honours_patience() {
        let mut s = EarlyStopping::new(10);
        let losses = [
            1.0, 1.2, 0.9, 0.95, 0.96, 0.97, 0.98, 0.99, 1.0, 1.01, 1.02, 1.03, 1.04, 1.05,
        ];
        let mut stopped = None;
        for (i, l) in losses.iter().enumerate() {
            let epoch = i + 1;
            if s.observe(epoch, *l).stop {
                stopped = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped, Some(13));
        assert_eq!(s.best_epoch(), 3);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let data = toy(20);
        let cfg = TrainConfig {
            variant: Variant::ChildSum,
            learning_rate: 0.0,
            max_epochs: 3,
            dropout: 0.2,
            augment: AugmentConfig {
                reorder: true,
                insert: true,
                ..AugmentConfig::default()
            },
            ..TrainConfig::default()
        };
        let (params, report) = train(&data, &cfg).unwrap();
        let init = Params::init(cfg.model_config(1).unwrap(), &mut ChaCha8Rng::seed_from_u64(cfg.seed)).unwrap();
        assert_eq!(params, init);
        assert_eq!(report.epochs.len(), 3);
    }

    #[test]
    fn zero_epochs_return_initialization() {
        let cfg = TrainConfig {
            max_epochs: 0,
            ..TrainConfig::default()
        };
        let (params, report) = train(&toy(10), &cfg).unwrap();
        let init = Params::init(cfg.model_config(1).unwrap(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(params, init);
        assert_eq!(report.best_epoch, 0);
        assert!(report.epochs.is_empty());
    }

    #[test]
    fn a_small_step_lowers_the_loss() {
        for seed in 0..10u64 {
            let t = tree(0, 0.2 + 0.05 * seed as f64, -0.3, (seed % 2) as usize);
            let cfg = ModelConfig::new(Variant::ALL[(seed % 4) as usize], 5, 1, 2).unwrap();
            let params = Params::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let (before, grads) = tree_gradients(&t, &params, None, 0.001).unwrap();
            let stepped: Vec<Tensor> = params
                .tensors()
                .iter()
                .zip(&grads)
                .map(|(p, g)| {
                    let mut p = p.clone();
                    for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= 1e-3 * d;
                    }
                    p
                })
                .collect();
            let after = loss(&t, &params.with_tensors(stepped).unwrap(), 0.001).unwrap();
            assert!(after < before, "seed {seed}: {after} >= {before}");
        }
    }

    #[test]
    fn training_is_reproducible_and_leaves_validation_alone() {
        let data = toy(30);
        let (train_set, val) = split_train_val(&data, 0.2, 3).unwrap();
        let val_before = val.clone();
        let cfg = TrainConfig {
            max_epochs: 4,
            dropout: 0.2,
            augment: AugmentConfig {
                reorder: true,
                insert: true,
                ..AugmentConfig::default()
            },
            ..TrainConfig::default()
        };
        let (p1, r1) = fit(&train_set, &val, &cfg).unwrap();
        let (p2, r2) = fit(&train_set, &val, &cfg).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(r1.to_jsonl(), r2.to_jsonl());
        assert_eq!(val, val_before);
        assert!(r1.epochs.iter().all(|e| e.train_size >= train_set.len()));
    }

    #[test]
    fn report_lines_are_json() {
        let cfg = TrainConfig {
            max_epochs: 2,
            ..TrainConfig::default()
        };
        let (_, report) = train(&toy(10), &cfg).unwrap();
        let lines: Vec<serde_json::Value> = report
            .to_jsonl()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0]["record"], "epoch");
        assert_eq!(lines[2]["record"], "summary");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            TrainConfig {
                val_fraction: 1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                patience: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                dropout: 1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                classes: 1,
                ..TrainConfig::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }
}
