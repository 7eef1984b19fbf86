//! Temporal event spotting: per-second probability series from a chunk
//! classifier, candidate extraction, and tolerance-based mAP.

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{sliding_windows, AnnotationSet, EventClass, FeatureStream, N_CLASSES};
use crate::fusion::Model;
use crate::metrics::{average_precision_with_total, ranking};

/// Windows per forward pass in [`predict_series`].
const SERIES_BATCH: usize = 64;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_DELTA_MIN: u32 = 5;
pub const DEFAULT_DELTA_MAX: u32 = 60;

/// Class probabilities of every 1 s-stride window of one half.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSeries {
    pub game_id: String,
    pub half: u8,
    /// Window centers in seconds, increasing by 1.
    pub times: Vec<f64>,
    /// `times.len() x 4`.
    pub probs: Array2<f64>,
}

impl PredictionSeries {
    pub fn class_probs(&self, class: EventClass) -> Vec<f64> {
        self.probs.column(class.target_index()).to_vec()
    }
}

/// Slides a `T`-second window over the half and classifies each position.
pub fn predict_series(
    model: &Model<f32>,
    video: &FeatureStream,
    audio: &FeatureStream,
    chunk_len_s: usize,
) -> Result<PredictionSeries> {
    let windows = sliding_windows(video, audio, chunk_len_s)?;
    let batches: Vec<Array2<f32>> = windows
        .par_chunks(SERIES_BATCH)
        .map(|batch| {
            let v: Vec<_> = batch.iter().map(|w| w.video).collect();
            let a: Vec<_> = batch.iter().map(|w| w.audio).collect();
            Ok(model.forward(&v, &a)?.probs)
        })
        .collect::<Result<_>>()?;
    let mut probs = Array2::zeros((windows.len(), N_CLASSES));
    let mut row = 0;
    for b in batches {
        let n = b.nrows();
        probs
            .slice_mut(ndarray::s![row..row + n, ..])
            .assign(&b.mapv(f64::from));
        row += n;
    }
    Ok(PredictionSeries {
        game_id: video.game_id.clone(),
        half: video.half,
        times: windows.iter().map(|w| w.center_s).collect(),
        probs,
    })
}

/// A maximal run of consecutive series entries at or above the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub begin_s: f64,
    pub end_s: f64,
    /// Entry halfway through the run, rounding down.
    pub center_s: f64,
    /// Earliest entry attaining `max_prob`.
    pub argmax_s: f64,
    pub max_prob: f64,
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must be in (0, 1), got {threshold}"
        )));
    }
    Ok(())
}

fn check_series(times: &[f64], probs: &[f64]) -> Result<()> {
    if times.len() != probs.len() {
        return Err(Error::Shape(format!(
            "{} times for {} probabilities",
            times.len(),
            probs.len()
        )));
    }
    if let Some(i) = probs.iter().position(|p| !p.is_finite()) {
        return Err(Error::NonFinite {
            what: "prediction series".into(),
            index: i,
        });
    }
    Ok(())
}

pub fn watershed_segments(times: &[f64], probs: &[f64], threshold: f64) -> Result<Vec<Segment>> {
    check_threshold(threshold)?;
    check_series(times, probs)?;
    let mut out = Vec::new();
    let mut i = 0;
    while i < probs.len() {
        if probs[i] < threshold {
            i += 1;
            continue;
        }
        let begin = i;
        while i < probs.len() && probs[i] >= threshold {
            i += 1;
        }
        let end = i - 1;
        let mut arg = begin;
        for j in begin..=end {
            if probs[j] > probs[arg] {
                arg = j;
            }
        }
        out.push(Segment {
            begin_s: times[begin],
            end_s: times[end],
            center_s: times[(begin + end) / 2],
            argmax_s: times[arg],
            max_prob: probs[arg],
        });
    }
    Ok(out)
}

/// Indices of local maxima. A plateau of equal values is one peak, placed on
/// its first entry, when both neighbours of the plateau are strictly lower
/// (the series ends count as lower).
pub fn local_maxima(probs: &[f64]) -> Vec<usize> {
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < probs.len() {
        let mut j = i;
        while j + 1 < probs.len() && probs[j + 1] == probs[i] {
            j += 1;
        }
        let left_lower = i == 0 || probs[i - 1] < probs[i];
        let right_lower = j + 1 == probs.len() || probs[j + 1] < probs[i];
        if left_lower && right_lower {
            peaks.push(i);
        }
        i = j + 1;
    }
    peaks
}

/// Greedy suppression: peaks are visited by descending probability and kept
/// unless a kept peak lies less than `radius_s` away.
pub fn non_maximum_suppression(times: &[f64], probs: &[f64], radius_s: f64) -> Result<Vec<usize>> {
    check_series(times, probs)?;
    let peaks = local_maxima(probs);
    let scores: Vec<f64> = peaks.iter().map(|&i| probs[i]).collect();
    let mut kept: Vec<usize> = Vec::new();
    for k in ranking(&scores)? {
        let i = peaks[k];
        if kept.iter().all(|&j| (times[i] - times[j]).abs() >= radius_s) {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    Ok(kept)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpotMethod {
    SegmentCenter,
    SegmentMax,
    Nms,
}

impl SpotMethod {
    pub const ALL: [SpotMethod; 3] = [SpotMethod::SegmentCenter, SpotMethod::SegmentMax, SpotMethod::Nms];

    pub fn as_str(self) -> &'static str {
        match self {
            SpotMethod::SegmentCenter => "segment_center",
            SpotMethod::SegmentMax => "segment_max",
            SpotMethod::Nms => "nms",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpottingCandidate {
    pub game_id: String,
    pub half: u8,
    pub time_s: f64,
    pub label: EventClass,
    pub confidence: f64,
}

/// Candidates of every event class, ordered by class then time. The
/// threshold applies to the segment methods only.
pub fn extract_candidates(
    series: &PredictionSeries,
    method: SpotMethod,
    chunk_len_s: usize,
    threshold: f64,
) -> Result<Vec<SpottingCandidate>> {
    check_threshold(threshold)?;
    let mut out = Vec::new();
    for class in EventClass::ALL {
        let probs = series.class_probs(class);
        let spots: Vec<(f64, f64)> = match method {
            SpotMethod::SegmentCenter => watershed_segments(&series.times, &probs, threshold)?
                .iter()
                .map(|s| (s.center_s, s.max_prob))
                .collect(),
            SpotMethod::SegmentMax => watershed_segments(&series.times, &probs, threshold)?
                .iter()
                .map(|s| (s.argmax_s, s.max_prob))
                .collect(),
            SpotMethod::Nms => non_maximum_suppression(&series.times, &probs, chunk_len_s as f64)?
                .into_iter()
                .map(|i| (series.times[i], probs[i]))
                .collect(),
        };
        out.extend(spots.into_iter().map(|(time_s, confidence)| SpottingCandidate {
            game_id: series.game_id.clone(),
            half: series.half,
            time_s,
            label: class,
            confidence,
        }));
    }
    Ok(out)
}

/// True-positive flags for candidates already sorted by rank, against anchor
/// times of one class in one half.
///
/// Each candidate in turn is matched to an anchor within `delta_s` if the
/// matching of all earlier candidates can be rearranged to make room
/// (augmenting path), trying the nearest free anchor first. This keeps the
/// number of true positives among the top `k` candidates maximal for every
/// `k`.
fn match_ranked(candidates: &[f64], anchors: &[f64], delta_s: f64) -> Vec<bool> {
    let neighbours: Vec<Vec<usize>> = candidates
        .iter()
        .map(|&t| {
            let mut near: Vec<usize> = (0..anchors.len())
                .filter(|&a| (anchors[a] - t).abs() <= delta_s)
                .collect();
            near.sort_by(|&a, &b| {
                let da = (anchors[a] - t).abs();
                let db = (anchors[b] - t).abs();
                da.total_cmp(&db).then(a.cmp(&b))
            });
            near
        })
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; anchors.len()];

    fn augment(c: usize, nb: &[Vec<usize>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
        for &a in &nb[c] {
            if !seen[a] {
                seen[a] = true;
                if owner[a].is_none_or(|o| augment(o, nb, owner, seen)) {
                    owner[a] = Some(c);
                    return true;
                }
            }
        }
        false
    }

    (0..candidates.len())
        .map(|c| {
            let mut seen = vec![false; anchors.len()];
            augment(c, &neighbours, &mut owner, &mut seen)
        })
        .collect()
}

/// Per-class AP and their mean at one tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpottingScore {
    pub delta_s: f64,
    /// Card, substitution, goal; `None` for classes without anchors.
    pub per_class_ap: Vec<Option<f64>>,
    pub map: Option<f64>,
}

pub fn evaluate_spotting(
    candidates: &[SpottingCandidate],
    annotations: &[AnnotationSet],
    delta_s: f64,
) -> Result<SpottingScore> {
    if delta_s.is_nan() || delta_s <= 0.0 {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta_s}")));
    }
    let mut per_class_ap = Vec::with_capacity(EventClass::ALL.len());
    for class in EventClass::ALL {
        let mut anchors: HashMap<(&str, u8), Vec<f64>> = HashMap::new();
        let mut n_anchors = 0;
        for set in annotations {
            for e in set.events.iter().filter(|e| e.label == class) {
                anchors
                    .entry((set.game_id.as_str(), e.half))
                    .or_default()
                    .push(e.time_s);
                n_anchors += 1;
            }
        }
        if n_anchors == 0 {
            per_class_ap.push(None);
            continue;
        }
        let ours: Vec<&SpottingCandidate> = candidates.iter().filter(|c| c.label == class).collect();
        let scores: Vec<f64> = ours.iter().map(|c| c.confidence).collect();
        let order = ranking(&scores)?;
        let mut groups: HashMap<(&str, u8), Vec<usize>> = HashMap::new();
        for &i in &order {
            groups
                .entry((ours[i].game_id.as_str(), ours[i].half))
                .or_default()
                .push(i);
        }
        let mut labels = vec![false; ours.len()];
        for (key, members) in &groups {
            let Some(group_anchors) = anchors.get(key) else {
                continue;
            };
            let times: Vec<f64> = members.iter().map(|&i| ours[i].time_s).collect();
            for (&i, tp) in members.iter().zip(match_ranked(&times, group_anchors, delta_s)) {
                labels[i] = tp;
            }
        }
        per_class_ap.push(Some(average_precision_with_total(&scores, &labels, n_anchors)?));
    }
    let defined: Vec<f64> = per_class_ap.iter().flatten().copied().collect();
    let map = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(SpottingScore {
        delta_s,
        per_class_ap,
        map,
    })
}

/// mAP at every integer tolerance of a range and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToleranceCurve {
    pub points: Vec<SpottingScore>,
    pub average_map: Option<f64>,
}

impl ToleranceCurve {
    pub fn map_at(&self, delta_s: f64) -> Option<f64> {
        self.points.iter().find(|p| p.delta_s == delta_s).and_then(|p| p.map)
    }
}

pub fn average_map(
    candidates: &[SpottingCandidate],
    annotations: &[AnnotationSet],
    delta_min: u32,
    delta_max: u32,
) -> Result<ToleranceCurve> {
    if delta_min == 0 || delta_min > delta_max {
        return Err(Error::InvalidArgument(format!(
            "delta range {delta_min}..={delta_max} must be non-empty and positive"
        )));
    }
    let points = (delta_min..=delta_max)
        .map(|d| evaluate_spotting(candidates, annotations, f64::from(d)))
        .collect::<Result<Vec<_>>>()?;
    let maps: Option<Vec<f64>> = points.iter().map(|p| p.map).collect();
    let average_map = maps.map(|m| m.iter().sum::<f64>() / m.len() as f64);
    Ok(ToleranceCurve { points, average_map })
}

pub fn write_candidates_csv(path: &Path, candidates: &[SpottingCandidate]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for c in candidates {
        w.serialize(c)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_candidates_csv(path: &Path) -> Result<Vec<SpottingCandidate>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| Ok(row?)).collect()
}

pub fn write_curve_csv(path: &Path, curve: &ToleranceCurve) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["delta_s", "map"])?;
    for p in &curve.points {
        let map = p.map.map(|m| m.to_string()).unwrap_or_default();
        w.write_record([p.delta_s.to_string(), map])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
