//! Ranking metrics and chunk-classification reports.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{WindowDataset, CLASS_NAMES, N_CLASSES};
use crate::fusion::Model;

/// Indices ordered by descending score; equal scores keep input order.
pub fn ranking(scores: &[f64]) -> Result<Vec<usize>> {
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            what: "scores".into(),
            index: i,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    Ok(order)
}

/// Average precision of a ranking whose recall is measured against
/// `n_positives` relevant items, some of which may never be retrieved.
pub fn average_precision_with_total(scores: &[f64], labels: &[bool], n_positives: usize) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let retrieved = labels.iter().filter(|&&l| l).count();
    if n_positives == 0 {
        return Err(Error::NoPositives);
    }
    if retrieved > n_positives {
        return Err(Error::InvalidArgument(format!(
            "{retrieved} positive labels exceed the stated total {n_positives}"
        )));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in ranking(scores)?.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / n_positives as f64)
}

/// Mean of precision at the rank of every positive.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let n = labels.iter().filter(|&&l| l).count();
    average_precision_with_total(scores, labels, n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class: String,
    pub n_positives: usize,
    /// `None` when the class has no positive chunk.
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// `joint`, or `video`/`audio` for separately trained branches.
    pub stage: String,
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_map: Option<f64>,
    pub val_map: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub n_chunks: usize,
    pub per_class_ap: Vec<ClassAp>,
    /// Mean AP over the event classes that have positives.
    pub map_events: Option<f64>,
    pub ap_background: Option<f64>,
    /// Rows: ground-truth class, one row entry per active target bit.
    /// Columns: argmax prediction.
    pub confusion: [[u64; N_CLASSES]; N_CLASSES],
    pub history: Vec<EpochRecord>,
}

impl EvalReport {
    pub fn ap(&self, class_index: usize) -> Option<f64> {
        self.per_class_ap[class_index].ap
    }
}

fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Builds a report from `n x 4` scores and binary targets.
pub fn classification_report(model: &str, scores: ArrayView2<f64>, targets: ArrayView2<u8>) -> Result<EvalReport> {
    if scores.dim() != targets.dim() || scores.ncols() != N_CLASSES {
        return Err(Error::Shape(format!(
            "scores {:?} vs targets {:?}",
            scores.dim(),
            targets.dim()
        )));
    }
    if scores.nrows() == 0 {
        return Err(Error::InvalidArgument("cannot evaluate an empty dataset".into()));
    }
    let mut per_class_ap = Vec::with_capacity(N_CLASSES);
    for (c, name) in CLASS_NAMES.iter().enumerate() {
        let s: Vec<f64> = scores.column(c).to_vec();
        let l: Vec<bool> = targets.column(c).iter().map(|&t| t == 1).collect();
        let n_positives = l.iter().filter(|&&x| x).count();
        let ap = match average_precision(&s, &l) {
            Ok(ap) => Some(ap),
            Err(Error::NoPositives) => None,
            Err(e) => return Err(e),
        };
        per_class_ap.push(ClassAp {
            class: (*name).into(),
            n_positives,
            ap,
        });
    }
    let events: Vec<f64> = per_class_ap[1..].iter().filter_map(|c| c.ap).collect();
    let map_events = (!events.is_empty()).then(|| events.iter().sum::<f64>() / events.len() as f64);
    let mut confusion = [[0u64; N_CLASSES]; N_CLASSES];
    for (row, truth) in scores.axis_iter(Axis(0)).zip(targets.axis_iter(Axis(0))) {
        let pred = argmax(row);
        for (c, &t) in truth.iter().enumerate() {
            if t == 1 {
                confusion[c][pred] += 1;
            }
        }
    }
    Ok(EvalReport {
        model: model.into(),
        n_chunks: scores.nrows(),
        ap_background: per_class_ap[0].ap,
        per_class_ap,
        map_events,
        confusion,
        history: Vec::new(),
    })
}

/// Inference over a dataset in fixed-size batches; rows follow sample order.
pub fn predict_dataset(model: &Model<f32>, dataset: &WindowDataset, batch_size: usize) -> Result<Array2<f64>> {
    let batch_size = batch_size.max(1);
    let starts: Vec<usize> = (0..dataset.len()).step_by(batch_size).collect();
    let parts: Vec<Array2<f32>> = starts
        .par_iter()
        .map(|&start| {
            let batch = &dataset.samples[start..(start + batch_size).min(dataset.len())];
            let video: Vec<_> = batch.iter().map(|s| s.video.view()).collect();
            let audio: Vec<_> = batch.iter().map(|s| s.audio.view()).collect();
            Ok(model.forward(&video, &audio)?.probs)
        })
        .collect::<Result<_>>()?;
    let mut out = Array2::zeros((dataset.len(), N_CLASSES));
    let mut row = 0;
    for part in parts {
        let n = part.nrows();
        out.slice_mut(ndarray::s![row..row + n, ..])
            .assign(&part.mapv(f64::from));
        row += n;
    }
    Ok(out)
}

pub fn dataset_targets(dataset: &WindowDataset) -> Array2<u8> {
    Array2::from_shape_fn((dataset.len(), N_CLASSES), |(i, c)| dataset.samples[i].targets[c])
}

pub fn evaluate_classification(model: &Model<f32>, dataset: &WindowDataset) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty dataset".into()));
    }
    let scores = predict_dataset(model, dataset, 64)?;
    classification_report(&model.spec.label(), scores.view(), dataset_targets(dataset).view())
}
