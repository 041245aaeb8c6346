//! Training loop, validation-based selection and evaluation.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, argmax, correlation, Correlation, Metric, MetricValue};
use super::BenchError;
use crate::dataset_store::{read_features, Dataset, Label, Subset, TaskConfig, TaskKind};
use crate::mil_core::{
    backward, build_model, forward, multi_task_loss, read_checkpoint, write_checkpoint, Adam, AdamConfig, Bag,
    MilParams, ModelKind, DEFAULT_HIDDEN,
};
use crate::rng::{derive_seed, SplitMix64};

const SHUFFLE_STREAM: u64 = 0x7EA1_0001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub hidden: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub correlation: Correlation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Abmil,
            hidden: DEFAULT_HIDDEN,
            max_epochs: 200,
            patience: 20,
            adam: AdamConfig::default(),
            seed: 0,
            correlation: Correlation::Pearson,
        }
    }
}

/// One slide's features with a label slot per task (`None` = missing).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBag {
    pub slide_id: String,
    pub dim: usize,
    pub features: Vec<f32>,
    pub labels: Vec<Option<Label>>,
}

impl LabeledBag {
    pub fn bag(&self) -> Bag<'_, f32> {
        Bag { n: self.features.len() / self.dim, dim: self.dim, data: &self.features }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation selection score; `None` without validation slides.
    pub val_metric: Option<f64>,
    /// Unix seconds.
    pub timestamp: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MilParams<f32>,
    pub log: Vec<EpochLog>,
    /// 1-based epoch of the kept parameters.
    pub best_epoch: usize,
    pub best_val: Option<f64>,
}

/// Raw head outputs for every bag, in input order.
pub fn predict(params: &MilParams<f32>, bags: &[LabeledBag]) -> Result<Vec<Vec<Vec<f32>>>, BenchError> {
    bags.par_iter().map(|b| Ok(forward(params, b.bag())?.outputs)).collect()
}

/// Per-task metric over bags that carry that task's label.
pub fn task_metrics(
    params: &MilParams<f32>,
    bags: &[LabeledBag],
    corr: Correlation,
) -> Result<Vec<(Metric, MetricValue, usize)>, BenchError> {
    let outputs = predict(params, bags)?;
    Ok(params
        .tasks
        .iter()
        .enumerate()
        .map(|(t, task)| {
            let labeled = bags.iter().zip(&outputs).filter_map(|(b, o)| b.labels[t].map(|l| (l, &o[t])));
            match task.kind {
                TaskKind::Classification => {
                    let (pred, truth): (Vec<usize>, Vec<usize>) = labeled
                        .map(|(l, o)| match l {
                            Label::Class(c) => (argmax(o), c),
                            Label::Value(_) => unreachable!("regression label on classification task"),
                        })
                        .unzip();
                    let n = truth.len();
                    (Metric::Accuracy, accuracy(&pred, &truth), n)
                }
                TaskKind::Regression => {
                    let (pred, truth): (Vec<f64>, Vec<f64>) = labeled
                        .map(|(l, o)| match l {
                            Label::Value(v) => (o[0] as f64, v),
                            Label::Class(_) => unreachable!("class label on regression task"),
                        })
                        .unzip();
                    let n = truth.len();
                    (corr.metric(), correlation(corr, &pred, &truth), n)
                }
            }
        })
        .collect())
}

/// Mean over tasks of accuracy/100 or correlation; an undefined correlation
/// counts as -1, tasks without validation labels are ignored.
pub fn selection_score(metrics: &[(Metric, MetricValue, usize)]) -> Option<f64> {
    let scores: Vec<f64> = metrics
        .iter()
        .filter_map(|(m, v, _)| match (m, v) {
            (_, MetricValue::NoSamples) => None,
            (Metric::Accuracy, MetricValue::Value(a)) => Some(a / 100.0),
            (_, MetricValue::Value(r)) => Some(*r),
            (_, MetricValue::ZeroVariance) => Some(-1.0),
        })
        .collect();
    (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Trains one bag per step for up to `max_epochs`, keeping the parameters
/// with the best validation score (ties keep the earlier epoch).
pub fn fit(
    train: &[LabeledBag],
    val: &[LabeledBag],
    tasks: &[TaskConfig],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, BenchError> {
    for (t, task) in tasks.iter().enumerate() {
        if !train.iter().any(|b| b.labels[t].is_some()) {
            return Err(BenchError::NoLabeledSlides(task.name.clone()));
        }
    }
    let dim = train[0].dim;
    if let Some(b) = train.iter().chain(val).find(|b| b.dim != dim) {
        return Err(BenchError::DimMismatch { slide_id: b.slide_id.clone(), found: b.dim, expected: dim });
    }
    let mut params: MilParams<f32> = build_model(tasks, dim, cfg.hidden, cfg.model, cfg.seed)?;
    let mut opt = Adam::new(&params, cfg.adam);
    let shuffle_seed = derive_seed(cfg.seed, SHUFFLE_STREAM);

    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut best_val: Option<f64> = None;
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.sort_unstable();
        SplitMix64::new(derive_seed(shuffle_seed, epoch as u64)).shuffle(&mut order);
        let mut total = 0.0f64;
        for &i in &order {
            let b = &train[i];
            let fwd = forward(&params, b.bag())?;
            let (loss, d_out) = multi_task_loss(&params, &fwd.outputs, &b.labels);
            total += loss as f64;
            let grads = backward(&params, b.bag(), &fwd, &d_out)?;
            opt.step(&mut params, &grads);
        }
        if !params.is_finite() {
            return Err(BenchError::Diverged(epoch));
        }
        let val_metric = if val.is_empty() { None } else { selection_score(&task_metrics(&params, val, cfg.correlation)?) };
        log.push(EpochLog { epoch, train_loss: total / train.len() as f64, val_metric, timestamp: now() });

        let improved = match (val_metric, best_val) {
            (Some(v), Some(b)) => v > b,
            (Some(_), None) => true,
            (None, _) => val.is_empty(),
        };
        if improved {
            best = params.clone();
            best_epoch = epoch;
            best_val = val_metric;
        } else if epoch - best_epoch >= cfg.patience {
            log::info!("early stop at epoch {epoch}; best epoch {best_epoch}");
            break;
        }
    }
    Ok(TrainOutcome { params: best, log, best_epoch, best_val })
}

fn split_of(ds: &Dataset) -> Result<&BTreeMap<String, Subset>, BenchError> {
    ds.splits.as_ref().ok_or(BenchError::NoSplits)
}

pub fn resolve_tasks(ds: &Dataset, names: &[String]) -> Result<Vec<TaskConfig>, BenchError> {
    if names.is_empty() {
        return Ok(ds.tasks.clone());
    }
    names.iter().map(|n| ds.task(n).cloned().ok_or_else(|| BenchError::UnknownTask(n.clone()))).collect()
}

/// Bags of `subset` slides labeled for at least one task, in slide-id order,
/// and the embedder id they share.
pub fn load_bags(ds: &Dataset, tasks: &[TaskConfig], subset: Subset) -> Result<(Vec<LabeledBag>, Option<String>), BenchError> {
    let splits = split_of(ds)?;
    let per_task: Vec<BTreeMap<String, Label>> = tasks.iter().map(|t| ds.labels_for(t)).collect::<Result<_, _>>()?;
    let wanted: Vec<(&String, Vec<Option<Label>>)> = splits
        .iter()
        .filter(|(_, &s)| s == subset)
        .map(|(id, _)| (id, per_task.iter().map(|m| m.get(id).copied()).collect::<Vec<_>>()))
        .filter(|(_, l)| l.iter().any(Option::is_some))
        .collect();
    let bags: Vec<(LabeledBag, String)> = wanted
        .par_iter()
        .map(|(id, labels)| {
            let path = ds
                .slide(id)
                .map(|s| s.features_path())
                .filter(|p| p.is_file())
                .ok_or_else(|| BenchError::MissingFeatures((*id).clone()))?;
            let fb = read_features(&path).map_err(|e| BenchError::Features { slide_id: (*id).clone(), source: e })?;
            Ok((LabeledBag { slide_id: fb.slide_id, dim: fb.dim, features: fb.features, labels: labels.clone() }, fb.embedder_id))
        })
        .collect::<Result<_, BenchError>>()?;
    let mut embedder: Option<String> = None;
    for (b, e) in &bags {
        match &embedder {
            None => embedder = Some(e.clone()),
            Some(first) if first != e => {
                return Err(BenchError::EmbedderMismatch { slide_id: b.slide_id.clone(), found: e.clone(), expected: first.clone() })
            }
            _ => {}
        }
    }
    Ok((bags.into_iter().map(|(b, _)| b).collect(), embedder))
}

/// Trains on the `train` subset, selects on `val`, writes the checkpoint and
/// the JSONL epoch log.
pub fn train_model(
    ds: &Dataset,
    task_names: &[String],
    cfg: &TrainConfig,
    checkpoint: &Path,
    log_path: &Path,
) -> Result<TrainOutcome, BenchError> {
    let tasks = resolve_tasks(ds, task_names)?;
    let (train, emb) = load_bags(ds, &tasks, Subset::Train)?;
    if train.is_empty() {
        return Err(BenchError::NoLabeledSlides(tasks.iter().map(|t| t.name.as_str()).collect::<Vec<_>>().join(",")));
    }
    let (val, val_emb) = load_bags(ds, &tasks, Subset::Val)?;
    let embedder_id = emb.unwrap_or_default();
    if let Some(v) = val_emb.filter(|v| *v != embedder_id) {
        return Err(BenchError::EmbedderMismatch { slide_id: val[0].slide_id.clone(), found: v, expected: embedder_id });
    }
    let outcome = fit(&train, &val, &tasks, cfg)?;

    let mut info = BTreeMap::new();
    info.insert("seed".to_string(), serde_json::json!(cfg.seed));
    info.insert("best_epoch".to_string(), serde_json::json!(outcome.best_epoch));
    info.insert("best_val".to_string(), serde_json::json!(outcome.best_val));
    info.insert("epochs_run".to_string(), serde_json::json!(outcome.log.len()));
    info.insert("train_config".to_string(), serde_json::to_value(cfg).map_err(|e| BenchError::Json(e.to_string()))?);
    write_checkpoint(checkpoint, &outcome.params, &embedder_id, info)?;

    let mut w = BufWriter::new(File::create(log_path)?);
    for e in &outcome.log {
        serde_json::to_writer(&mut w, e).map_err(|e| BenchError::Json(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(outcome)
}

/// One metric for one (task, model) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    pub model: String,
    pub metric: Metric,
    pub value: MetricValue,
    pub n: usize,
    pub seed: u64,
    pub subset: Subset,
}

/// Scores a checkpoint on `subset`. Every checkpoint task must exist in the
/// dataset with an identical configuration.
pub fn evaluate(ds: &Dataset, checkpoint: &Path, subset: Subset, corr: Correlation) -> Result<Vec<MetricsReport>, BenchError> {
    let ck = read_checkpoint(checkpoint)?;
    for t in &ck.params.tasks {
        match ds.task(&t.name) {
            Some(d) if d == t => {}
            Some(_) => return Err(BenchError::TaskMismatch(format!("task {:?} differs from the dataset's definition", t.name))),
            None => return Err(BenchError::TaskMismatch(format!("task {:?} is not defined in the dataset", t.name))),
        }
    }
    let (bags, emb) = load_bags(ds, &ck.params.tasks, subset)?;
    if let Some(e) = emb.filter(|e| *e != ck.header.embedder_id) {
        return Err(BenchError::EmbedderMismatch { slide_id: bags[0].slide_id.clone(), found: e, expected: ck.header.embedder_id });
    }
    if let Some(b) = bags.iter().find(|b| b.dim != ck.params.dim) {
        return Err(BenchError::DimMismatch { slide_id: b.slide_id.clone(), found: b.dim, expected: ck.params.dim });
    }
    let seed = ck.header.info.get("seed").and_then(|v| v.as_u64()).unwrap_or(0);
    let metrics = task_metrics(&ck.params, &bags, corr)?;
    Ok(ck
        .params
        .tasks
        .iter()
        .zip(metrics)
        .map(|(t, (metric, value, n))| MetricsReport {
            task: t.name.clone(),
            model: ck.params.kind.name().to_string(),
            metric,
            value,
            n,
            seed,
            subset,
        })
        .collect())
}
