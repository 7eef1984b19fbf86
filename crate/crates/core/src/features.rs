//! Feature streams, annotations, PCA reduction and chunking.
//!
//! On disk a stream is a JSON manifest next to a headerless blob of
//! little-endian `f32` values in row-major `n_frames x dim` order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature sampling rate: one frame every half second.
pub const FRAME_RATE_HZ: f64 = 2.0;
pub const FRAMES_PER_SECOND: usize = 2;
pub const DEFAULT_DIM: usize = 512;

/// Number of classifier outputs: background plus the three event classes.
pub const N_CLASSES: usize = 4;
pub const CLASS_NAMES: [&str; N_CLASSES] = ["background", "card", "substitution", "goal"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Video,
    Audio,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Video => "video",
            Modality::Audio => "audio",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventClass {
    Card,
    Substitution,
    Goal,
}

impl EventClass {
    pub const ALL: [EventClass; 3] = [EventClass::Card, EventClass::Substitution, EventClass::Goal];

    /// Position in the 4-way target vector (0 is background).
    pub fn target_index(self) -> usize {
        match self {
            EventClass::Card => 1,
            EventClass::Substitution => 2,
            EventClass::Goal => 3,
        }
    }

    pub fn from_target_index(i: usize) -> Option<Self> {
        match i {
            1 => Some(EventClass::Card),
            2 => Some(EventClass::Substitution),
            3 => Some(EventClass::Goal),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        CLASS_NAMES[self.target_index()]
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == name)
    }
}

/// One modality's per-frame features for one half of one game.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStream {
    pub game_id: String,
    pub half: u8,
    pub modality: Modality,
    pub frame_rate_hz: f64,
    /// `n_frames x dim`; frame `i` covers `[i / 2, i / 2 + 0.5)` seconds.
    pub frames: Array2<f32>,
}

impl FeatureStream {
    pub fn new(game_id: impl Into<String>, half: u8, modality: Modality, frames: Array2<f32>) -> Self {
        Self {
            game_id: game_id.into(),
            half,
            modality,
            frame_rate_hz: FRAME_RATE_HZ,
            frames,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    /// Whole seconds covered by the stream.
    pub fn duration_s(&self) -> usize {
        self.n_frames() / FRAMES_PER_SECOND
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_rate_hz != FRAME_RATE_HZ {
            return Err(Error::InvalidArgument(format!(
                "frame rate must be {FRAME_RATE_HZ} Hz, got {}",
                self.frame_rate_hz
            )));
        }
        if !(1..=2).contains(&self.half) {
            return Err(Error::InvalidArgument(format!(
                "half must be 1 or 2, got {}",
                self.half
            )));
        }
        if let Some(index) = self.frames.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("{} half {} {}", self.game_id, self.half, self.modality.as_str()),
                index,
            });
        }
        Ok(())
    }
}

/// JSON manifest describing a raw feature blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub game_id: String,
    pub half: u8,
    pub modality: Modality,
    pub frame_rate_hz: f64,
    pub dim: usize,
    pub n_frames: usize,
    /// Relative paths resolve against the manifest's directory.
    pub data_file: String,
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn resolve(base: &Path, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

pub fn read_feature_stream(manifest_path: &Path) -> Result<FeatureStream> {
    let manifest: FeatureManifest = read_json(manifest_path)?;
    let data_path = resolve(manifest_path, &manifest.data_file);
    let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let expected = (manifest.n_frames * manifest.dim * 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            what: data_path.display().to_string(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let frames =
        Array2::from_shape_vec((manifest.n_frames, manifest.dim), values).map_err(|e| Error::Shape(e.to_string()))?;
    let stream = FeatureStream {
        game_id: manifest.game_id,
        half: manifest.half,
        modality: manifest.modality,
        frame_rate_hz: manifest.frame_rate_hz,
        frames,
    };
    stream.validate()?;
    Ok(stream)
}

/// Writes the manifest at `manifest_path` and the blob next to it as
/// `data_file`.
pub fn write_feature_stream(stream: &FeatureStream, manifest_path: &Path, data_file: &str) -> Result<()> {
    let manifest = FeatureManifest {
        game_id: stream.game_id.clone(),
        half: stream.half,
        modality: stream.modality,
        frame_rate_hz: stream.frame_rate_hz,
        dim: stream.dim(),
        n_frames: stream.n_frames(),
        data_file: data_file.to_string(),
    };
    let data_path = resolve(manifest_path, data_file);
    let mut blob = Vec::with_capacity(stream.frames.len() * 4);
    for v in stream.frames.iter() {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(&data_path).map_err(|e| Error::io(&data_path, e))?;
    f.write_all(&blob).map_err(|e| Error::io(&data_path, e))?;
    write_json(manifest_path, &manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub half: u8,
    /// Seconds from the start of the half.
    pub time_s: f64,
    pub label: EventClass,
}

/// Ground-truth event anchors of one game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub game_id: String,
    pub events: Vec<Annotation>,
}

impl AnnotationSet {
    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.events.iter().enumerate() {
            if !(1..=2).contains(&e.half) || !(e.time_s.is_finite() && e.time_s >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "annotation {i} of {}: half {} time {}",
                    self.game_id, e.half, e.time_s
                )));
            }
        }
        Ok(())
    }

    pub fn in_half(&self, half: u8) -> impl Iterator<Item = &Annotation> {
        self.events.iter().filter(move |e| e.half == half)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let set: AnnotationSet = read_json(path)?;
        set.validate()?;
        Ok(set)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Mean-centering plus orthonormal projection onto leading principal axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// `dim_in x dim_out`, orthonormal columns ordered by decreasing variance.
    pub basis: Array2<f64>,
    pub explained_variance_ratio: f64,
}

impl PcaModel {
    pub fn dim_in(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim_out(&self) -> usize {
        self.basis.ncols()
    }

    pub fn project(&self, rows: ArrayView2<f64>) -> Array2<f64> {
        (&rows - &self.mean).dot(&self.basis)
    }
}

pub fn fit_pca(streams: &[&FeatureStream], dim_out: usize) -> Result<PcaModel> {
    let dim_in = streams
        .first()
        .ok_or_else(|| Error::InvalidArgument("PCA needs at least one stream".into()))?
        .dim();
    if streams.iter().any(|s| s.dim() != dim_in) {
        return Err(Error::Shape("PCA streams disagree on feature dimension".into()));
    }
    if dim_out == 0 || dim_out > dim_in {
        return Err(Error::InvalidArgument(format!(
            "dim_out must be in 1..={dim_in}, got {dim_out}"
        )));
    }
    let n: usize = streams.iter().map(|s| s.n_frames()).sum();
    if n <= dim_out {
        return Err(Error::InvalidArgument(format!(
            "PCA to {dim_out} dims needs more than {dim_out} frames, got {n}"
        )));
    }

    let mut data = Array2::<f64>::zeros((n, dim_in));
    let mut offset = 0;
    for s in streams {
        data.slice_mut(s![offset..offset + s.n_frames(), ..])
            .assign(&s.frames.mapv(f64::from));
        offset += s.n_frames();
    }
    let mean = data.mean_axis(Axis(0)).expect("non-empty");
    data -= &mean;
    let cov = data.t().dot(&data) / (n as f64 - 1.0);

    let eig = SymmetricEigen::new(DMatrix::from_fn(dim_in, dim_in, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..dim_in).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let kept: f64 = order[..dim_out].iter().map(|&i| eig.eigenvalues[i].max(0.0)).sum();
    let explained_variance_ratio = if total > 0.0 {
        (kept / total).clamp(0.0, 1.0)
    } else {
        1.0
    };

    let basis = Array2::from_shape_fn((dim_in, dim_out), |(r, c)| eig.eigenvectors[(r, order[c])]);
    Ok(PcaModel {
        mean,
        basis,
        explained_variance_ratio,
    })
}

pub fn apply_pca(model: &PcaModel, stream: &FeatureStream) -> Result<FeatureStream> {
    if stream.dim() != model.dim_in() {
        return Err(Error::Shape(format!(
            "stream has dim {}, PCA expects {}",
            stream.dim(),
            model.dim_in()
        )));
    }
    let projected = model.project(stream.frames.mapv(f64::from).view());
    Ok(FeatureStream {
        frames: projected.mapv(|v| v as f32),
        ..stream.clone()
    })
}

/// One labeled chunk: `W = 2T` frames from each modality.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub game_id: String,
    pub half: u8,
    pub index: usize,
    pub video: Array2<f32>,
    pub audio: Array2<f32>,
    /// Binary (background, card, substitution, goal).
    pub targets: [u8; N_CLASSES],
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowDataset {
    pub chunk_len_s: usize,
    pub window_frames: usize,
    pub samples: Vec<WindowSample>,
}

impl WindowDataset {
    pub fn empty(chunk_len_s: usize) -> Self {
        Self {
            chunk_len_s,
            window_frames: chunk_len_s * FRAMES_PER_SECOND,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn extend(&mut self, other: WindowDataset) -> Result<()> {
        if other.chunk_len_s != self.chunk_len_s {
            return Err(Error::InvalidArgument(format!(
                "cannot merge {} s chunks into a {} s dataset",
                other.chunk_len_s, self.chunk_len_s
            )));
        }
        self.samples.extend(other.samples);
        Ok(())
    }

    /// Positive count per class, background included.
    pub fn class_counts(&self) -> [usize; N_CLASSES] {
        let mut counts = [0; N_CLASSES];
        for s in &self.samples {
            for (c, &t) in s.targets.iter().enumerate() {
                counts[c] += t as usize;
            }
        }
        counts
    }
}

fn check_pair(video: &FeatureStream, audio: &FeatureStream) -> Result<usize> {
    if video.frame_rate_hz != audio.frame_rate_hz || video.frame_rate_hz != FRAME_RATE_HZ {
        return Err(Error::InvalidArgument(format!(
            "frame rates differ or are not {FRAME_RATE_HZ} Hz: video {} audio {}",
            video.frame_rate_hz, audio.frame_rate_hz
        )));
    }
    if video.half != audio.half || video.game_id != audio.game_id {
        return Err(Error::InvalidArgument(format!(
            "streams belong to different halves: {}/{} vs {}/{}",
            video.game_id, video.half, audio.game_id, audio.half
        )));
    }
    Ok(video.n_frames().min(audio.n_frames()))
}

/// Splits a half into consecutive non-overlapping `T`-second chunks.
///
/// Both streams are truncated to the shorter one and a trailing partial chunk
/// is dropped. Each event sets the bit of the chunk containing its anchor.
pub fn make_chunks(
    video: &FeatureStream,
    audio: &FeatureStream,
    ann: &AnnotationSet,
    chunk_len_s: usize,
) -> Result<WindowDataset> {
    if chunk_len_s == 0 {
        return Err(Error::InvalidArgument("chunk length must be positive".into()));
    }
    let n = check_pair(video, audio)?;
    let w = chunk_len_s * FRAMES_PER_SECOND;
    let n_chunks = n / w;
    let mut targets = vec![[0u8; N_CLASSES]; n_chunks];
    for e in ann.in_half(video.half) {
        let k = (e.time_s / chunk_len_s as f64).floor() as usize;
        if k < n_chunks {
            targets[k][e.label.target_index()] = 1;
        }
    }
    let samples = targets
        .into_iter()
        .enumerate()
        .map(|(k, mut t)| {
            t[0] = u8::from(t[1..].iter().all(|&b| b == 0));
            let rows = s![k * w..(k + 1) * w, ..];
            WindowSample {
                game_id: video.game_id.clone(),
                half: video.half,
                index: k,
                video: video.frames.slice(rows).to_owned(),
                audio: audio.frames.slice(rows).to_owned(),
                targets: t,
            }
        })
        .collect();
    Ok(WindowDataset {
        chunk_len_s,
        window_frames: w,
        samples,
    })
}

/// A `T`-second window starting on a whole second.
#[derive(Debug, Clone)]
pub struct SlidingWindow<'a> {
    pub start_s: usize,
    pub center_s: f64,
    pub video: ArrayView2<'a, f32>,
    pub audio: ArrayView2<'a, f32>,
}

/// Windows of `T` seconds at a stride of one second, one per start second in
/// `[0, duration - T]`.
pub fn sliding_windows<'a>(
    video: &'a FeatureStream,
    audio: &'a FeatureStream,
    chunk_len_s: usize,
) -> Result<Vec<SlidingWindow<'a>>> {
    if chunk_len_s == 0 {
        return Err(Error::InvalidArgument("window length must be positive".into()));
    }
    let n = check_pair(video, audio)?;
    let duration = n / FRAMES_PER_SECOND;
    if duration < chunk_len_s {
        return Err(Error::InvalidArgument(format!(
            "half lasts {duration} s, shorter than one {chunk_len_s} s window"
        )));
    }
    let w = chunk_len_s * FRAMES_PER_SECOND;
    Ok((0..=duration - chunk_len_s)
        .map(|start| {
            let rows = s![start * FRAMES_PER_SECOND..start * FRAMES_PER_SECOND + w, ..];
            SlidingWindow {
                start_s: start,
                center_s: start as f64 + chunk_len_s as f64 / 2.0,
                video: video.frames.slice(rows),
                audio: audio.frames.slice(rows),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stream(modality: Modality, n: usize, dim: usize) -> FeatureStream {
        FeatureStream::new(
            "g",
            1,
            modality,
            Array2::from_shape_fn((n, dim), |(i, j)| (i * dim + j) as f32 * 0.01),
        )
    }

    fn ann(events: &[(f64, EventClass)]) -> AnnotationSet {
        AnnotationSet {
            game_id: "g".into(),
            events: events
                .iter()
                .map(|&(time_s, label)| Annotation { half: 1, time_s, label })
                .collect(),
        }
    }

    #[test]
    fn manifest_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = stream(Modality::Audio, 17, 9);
        s.frames.mapv_inplace(|_| rng.random::<f32>() * 1e3 - 5e2);
        let manifest = dir.path().join("a.json");
        write_feature_stream(&s, &manifest, "a.f32").unwrap();
        let back = read_feature_stream(&manifest).unwrap();
        assert_eq!(back, s);
        assert_eq!(fs::metadata(dir.path().join("a.f32")).unwrap().len(), 17 * 9 * 4);
    }

    #[test]
    fn full_half_blob_size() {
        let dir = tempfile::tempdir().unwrap();
        let s = FeatureStream::new("g", 2, Modality::Video, Array2::zeros((5400, 512)));
        let manifest = dir.path().join("v.json");
        write_feature_stream(&s, &manifest, "v.f32").unwrap();
        let back = read_feature_stream(&manifest).unwrap();
        assert_eq!(back.n_frames(), 5400);
        assert_eq!(back.duration_s(), 45 * 60);
        assert_eq!(fs::metadata(dir.path().join("v.f32")).unwrap().len(), 5400 * 512 * 4);
    }

    #[test]
    fn truncated_blob_is_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = FeatureManifest {
            game_id: "g".into(),
            half: 1,
            modality: Modality::Video,
            frame_rate_hz: 2.0,
            dim: 512,
            n_frames: 3,
            data_file: "v.f32".into(),
        };
        write_json(&dir.path().join("v.json"), &manifest).unwrap();
        fs::write(dir.path().join("v.f32"), [0u8; 100]).unwrap();
        let err = read_feature_stream(&dir.path().join("v.json")).unwrap_err();
        assert!(matches!(err, Error::SizeMismatch { actual: 100, .. }), "{err}");
    }

    #[test]
    fn missing_and_non_finite_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_feature_stream(&dir.path().join("nope.json")),
            Err(Error::Io { .. })
        ));
        let mut s = stream(Modality::Video, 2, 2);
        s.frames[[1, 0]] = f32::NAN;
        let manifest = dir.path().join("v.json");
        write_feature_stream(&s, &manifest, "v.f32").unwrap();
        assert!(matches!(
            read_feature_stream(&manifest),
            Err(Error::NonFinite { index: 2, .. })
        ));
    }

    #[test]
    fn chunk_width_is_twice_duration() {
        let v = stream(Modality::Video, 2 * 300, 3);
        let a = stream(Modality::Audio, 2 * 300, 3);
        let d = make_chunks(&v, &a, &ann(&[]), 60).unwrap();
        assert_eq!(d.window_frames, 120);
        assert_eq!(d.len(), 5);
        assert!(d
            .samples
            .iter()
            .all(|s| s.video.nrows() == 120 && s.targets == [1, 0, 0, 0]));
    }

    #[test]
    fn event_sets_bit_of_containing_chunk() {
        let v = stream(Modality::Video, 2 * 180, 2);
        let a = stream(Modality::Audio, 2 * 180, 2);
        let d = make_chunks(&v, &a, &ann(&[(75.0, EventClass::Goal)]), 60).unwrap();
        assert_eq!(d.samples[1].targets, [0, 0, 0, 1]);
        assert_eq!(d.samples[0].targets, [1, 0, 0, 0]);

        let d = make_chunks(
            &v,
            &a,
            &ann(&[(10.0, EventClass::Card), (20.0, EventClass::Substitution)]),
            30,
        )
        .unwrap();
        assert_eq!(d.samples[0].targets, [0, 1, 1, 0]);
    }

    #[test]
    fn chunks_truncate_and_drop_partial_tail() {
        let v = stream(Modality::Video, 2 * 95 + 1, 2);
        let a = stream(Modality::Audio, 2 * 95 - 3, 2);
        let d = make_chunks(&v, &a, &ann(&[(93.0, EventClass::Card)]), 30).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.samples[2].video, v.frames.slice(s![120..180, ..]));
        assert!(d.samples.iter().all(|s| s.targets[1] == 0));
    }

    #[test]
    fn chunking_rejects_bad_inputs() {
        let v = stream(Modality::Video, 40, 2);
        let mut a = stream(Modality::Audio, 40, 2);
        assert!(make_chunks(&v, &a, &ann(&[]), 0).is_err());
        a.frame_rate_hz = 1.0;
        assert!(make_chunks(&v, &a, &ann(&[]), 5).is_err());
    }

    #[test]
    fn sliding_window_counts_and_centers() {
        let v = stream(Modality::Video, 200, 2);
        let a = stream(Modality::Audio, 200, 2);
        let w = sliding_windows(&v, &a, 20).unwrap();
        assert_eq!(w.len(), 81);
        assert_eq!(w[0].center_s, 10.0);
        assert_eq!(w[80].center_s, 90.0);
        // one second stride = two frames
        assert_eq!(w[0].video.slice(s![2.., ..]), w[1].video.slice(s![..38, ..]));

        assert_eq!(sliding_windows(&v, &a, 100).unwrap().len(), 1);
        assert!(sliding_windows(&v, &a, 101).is_err());
    }

    #[test]
    fn pca_exact_subspace_and_full_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // rows in span of two fixed directions
        let dirs = Array2::from_shape_simple_fn((2, 6), || rng.random_range(-1.0f32..1.0));
        let coeffs = Array2::from_shape_simple_fn((50, 2), || rng.random_range(-3.0f32..3.0));
        let s = FeatureStream::new("g", 1, Modality::Video, coeffs.dot(&dirs));
        let pca = fit_pca(&[&s], 2).unwrap();
        assert!((pca.explained_variance_ratio - 1.0).abs() < 1e-9);
        let gram = pca.basis.t().dot(&pca.basis);
        for ((i, j), v) in gram.indexed_iter() {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-6);
        }
        let centered_mean = pca.project(pca.mean.view().insert_axis(Axis(0)));
        assert!(centered_mean.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn pca_ratio_shrinks_with_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Array2::from_shape_simple_fn((80, 8), || rng.random_range(-1.0f32..1.0));
        let s = FeatureStream::new("g", 1, Modality::Video, x);
        let ratios: Vec<f64> = (1..=8)
            .map(|k| fit_pca(&[&s], k).unwrap().explained_variance_ratio)
            .collect();
        assert!(ratios.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        assert!((ratios[7] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pca_errors() {
        let s = stream(Modality::Video, 4, 3);
        assert!(fit_pca(&[&s], 4).is_err());
        assert!(fit_pca(&[&s], 0).is_err());
        assert!(fit_pca(&[&stream(Modality::Video, 3, 5)], 3).is_err());
        let pca = fit_pca(&[&stream(Modality::Video, 10, 3)], 2).unwrap();
        assert!(apply_pca(&pca, &stream(Modality::Video, 4, 4)).is_err());
    }

    #[test]
    fn apply_pca_identity_basis_centers() {
        let pca = PcaModel {
            mean: Array1::from(vec![1.0, 2.0, 3.0]),
            basis: Array2::eye(3),
            explained_variance_ratio: 1.0,
        };
        let s = FeatureStream::new(
            "g",
            1,
            Modality::Audio,
            ndarray::array![[1.0f32, 2.0, 3.0], [2.0, 2.0, 5.0]],
        );
        let out = apply_pca(&pca, &s).unwrap();
        assert_eq!(out.frames, ndarray::array![[0.0f32, 0.0, 0.0], [1.0, 0.0, 2.0]]);
    }

    #[test]
    fn event_class_names_roundtrip() {
        for c in EventClass::ALL {
            assert_eq!(EventClass::parse(c.as_str()), Some(c));
            assert_eq!(EventClass::from_target_index(c.target_index()), Some(c));
        }
        let json = r#"{"game_id":"x","events":[{"half":1,"time_s":1803.0,"label":"goal"}]}"#;
        let set: AnnotationSet = serde_json::from_str(json).unwrap();
        assert_eq!(set.events[0].label, EventClass::Goal);
    }
}
