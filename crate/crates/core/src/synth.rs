//! Synthetic games with controllable per-class, per-modality signal.
//!
//! Frames are isotropic Gaussian noise. Each event adds, in each modality, a
//! fixed unit signature vector for its class scaled by a per-modality
//! amplitude and a triangular envelope centered on the event anchor.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    Annotation, AnnotationSet, EventClass, FeatureStream, Modality, WindowDataset, CLASS_NAMES, DEFAULT_DIM,
    FRAME_RATE_HZ, N_CLASSES,
};

/// Attempts at drawing a well-separated anchor set before giving up.
const MAX_ANCHOR_DRAWS: usize = 10_000;

/// Signal amplitude of each event class in each modality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Amplitudes {
    /// Card, substitution, goal.
    pub video: [f64; 3],
    /// Card, substitution, goal.
    pub audio: [f64; 3],
}

impl Amplitudes {
    pub fn get(&self, class: EventClass, modality: Modality) -> f64 {
        let row = match modality {
            Modality::Video => &self.video,
            Modality::Audio => &self.audio,
        };
        row[class.target_index() - 1]
    }
}

impl Default for Amplitudes {
    /// Video carries cards and substitutions well and goals weakly; audio
    /// carries goals at three times the video amplitude and nothing for cards.
    fn default() -> Self {
        Self {
            video: [3.0, 3.0, 1.0],
            audio: [0.0, 1.0, 3.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_games: usize,
    pub half_len_s: usize,
    pub events_per_class_per_half: usize,
    pub noise_sigma: f64,
    pub envelope_halfwidth_s: f64,
    pub amplitude: Amplitudes,
    pub signature_seed: u64,
    pub dim: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_games: 40,
            half_len_s: 600,
            events_per_class_per_half: 2,
            noise_sigma: 1.0,
            envelope_halfwidth_s: 8.0,
            amplitude: Amplitudes::default(),
            signature_seed: 7,
            dim: DEFAULT_DIM,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let amps = self.amplitude.video.iter().chain(&self.amplitude.audio);
        if amps.clone().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return bad("amplitudes must be finite and non-negative".into());
        }
        if !(self.envelope_halfwidth_s > 0.0 && self.envelope_halfwidth_s.is_finite()) {
            return bad(format!(
                "envelope_halfwidth_s must be positive, got {}",
                self.envelope_halfwidth_s
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be non-negative, got {}", self.noise_sigma));
        }
        if self.dim < EventClass::ALL.len() {
            return bad(format!(
                "dim must be at least 3 to hold orthogonal signatures, got {}",
                self.dim
            ));
        }
        if self.half_len_s == 0 {
            return bad("half_len_s must be positive".into());
        }
        Ok(())
    }

    fn margin_s(&self) -> usize {
        self.envelope_halfwidth_s.ceil() as usize
    }
}

/// Unit signature per (class, modality), Gram-Schmidt orthogonalized within
/// each modality. Depends only on `signature_seed` and `dim`.
pub fn signatures(cfg: &SynthConfig) -> [[Array1<f64>; 3]; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.signature_seed);
    let mut draw = || {
        let mut basis: Vec<Array1<f64>> = Vec::with_capacity(3);
        while basis.len() < 3 {
            let mut v: Array1<f64> = Array1::from_shape_simple_fn(cfg.dim, || StandardNormal.sample(&mut rng));
            for b in &basis {
                let proj = v.dot(b);
                v.scaled_add(-proj, b);
            }
            let norm = v.dot(&v).sqrt();
            if norm > 1e-6 {
                basis.push(v / norm);
            }
        }
        let mut it = basis.into_iter();
        [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()]
    };
    [draw(), draw()]
}

/// Event anchors of one half: integer seconds at least `2 * halfwidth` apart,
/// each far enough from both ends for its envelope to fit.
fn draw_anchors(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<(f64, EventClass)>> {
    let n = cfg.events_per_class_per_half * EventClass::ALL.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let margin = cfg.margin_s();
    let gap = 2.0 * cfg.envelope_halfwidth_s;
    if cfg.half_len_s < 2 * margin {
        return Err(Error::Config(format!(
            "half of {} s cannot hold a {} s envelope",
            cfg.half_len_s, cfg.envelope_halfwidth_s
        )));
    }
    let (lo, hi) = (margin, cfg.half_len_s - margin);
    let span = (hi - lo) as f64;
    if (n - 1) as f64 * gap > span {
        return Err(Error::Config(format!(
            "{n} events spaced {gap} s apart do not fit in a {} s half",
            cfg.half_len_s
        )));
    }
    for _ in 0..MAX_ANCHOR_DRAWS {
        let mut times: Vec<usize> = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
        times.sort_unstable();
        if times.windows(2).all(|w| (w[1] - w[0]) as f64 >= gap) {
            let mut classes: Vec<EventClass> = EventClass::ALL
                .iter()
                .flat_map(|&c| std::iter::repeat_n(c, cfg.events_per_class_per_half))
                .collect();
            classes.shuffle(rng);
            return Ok(times.into_iter().map(|t| t as f64).zip(classes).collect());
        }
    }
    Err(Error::Config(format!(
        "could not place {n} events {gap} s apart in {MAX_ANCHOR_DRAWS} draws"
    )))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthHalf {
    pub video: FeatureStream,
    pub audio: FeatureStream,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthGame {
    pub game_id: String,
    pub seed: u64,
    pub halves: [SynthHalf; 2],
    pub annotations: AnnotationSet,
}

pub fn game_id(seed: u64) -> String {
    format!("synth-{seed:06}")
}

fn render(
    cfg: &SynthConfig,
    events: &[(f64, EventClass)],
    modality: Modality,
    signatures: &[Array1<f64>; 3],
    rng: &mut ChaCha8Rng,
) -> Result<Array2<f32>> {
    let n_frames = cfg.half_len_s * FRAME_RATE_HZ as usize;
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut frames = Array2::from_shape_simple_fn((n_frames, cfg.dim), || noise.sample(rng));
    for &(t, class) in events {
        let amp = cfg.amplitude.get(class, modality);
        if amp == 0.0 {
            continue;
        }
        let sig = &signatures[class.target_index() - 1];
        let hw = cfg.envelope_halfwidth_s;
        let first = ((t - hw) * FRAME_RATE_HZ).floor().max(0.0) as usize;
        let last = (((t + hw) * FRAME_RATE_HZ).ceil() as usize).min(n_frames - 1);
        for i in first..=last {
            let env = 1.0 - (i as f64 / FRAME_RATE_HZ - t).abs() / hw;
            if env > 0.0 {
                frames.row_mut(i).scaled_add(amp * env, sig);
            }
        }
    }
    Ok(frames.mapv(|v| v as f32))
}

/// Both halves and annotations of one game, fully determined by `seed` and
/// `cfg`.
pub fn generate_game(seed: u64, cfg: &SynthConfig) -> Result<SynthGame> {
    cfg.validate()?;
    let sigs = signatures(cfg);
    let id = game_id(seed);
    let mut events = Vec::new();
    let mut halves = Vec::with_capacity(2);
    for half in 1..=2u8 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from(half));
        let anchors = draw_anchors(cfg, &mut rng)?;
        let video = render(cfg, &anchors, Modality::Video, &sigs[0], &mut rng)?;
        let audio = render(cfg, &anchors, Modality::Audio, &sigs[1], &mut rng)?;
        events.extend(
            anchors
                .iter()
                .map(|&(time_s, label)| Annotation { half, time_s, label }),
        );
        halves.push(SynthHalf {
            video: FeatureStream::new(id.clone(), half, Modality::Video, video),
            audio: FeatureStream::new(id.clone(), half, Modality::Audio, audio),
        });
    }
    let mut it = halves.into_iter();
    Ok(SynthGame {
        game_id: id.clone(),
        seed,
        halves: [it.next().unwrap(), it.next().unwrap()],
        annotations: AnnotationSet { game_id: id, events },
    })
}

/// Game seeds of each split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

impl Split {
    /// Consecutive seeds from `first_seed`: `n_train`, then `n_val`, then
    /// `n_test`.
    pub fn contiguous(first_seed: u64, n_train: usize, n_val: usize, n_test: usize) -> Self {
        let range = |a: usize, n: usize| (a..a + n).map(|i| first_seed + i as u64).collect();
        Self {
            train: range(0, n_train),
            val: range(n_train, n_val),
            test: range(n_train + n_val, n_test),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut all: Vec<u64> = self.train.iter().chain(&self.val).chain(&self.test).copied().collect();
        all.sort_unstable();
        if let Some(w) = all.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("game seed {} appears twice across splits", w[0])));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The desk split: 60% / 20% / 20% of `cfg.n_games` (24/8/8 for 40 games),
/// with seeds counting up from `first_seed`.
pub fn make_split(cfg: &SynthConfig, first_seed: u64) -> Result<Split> {
    let n_val = cfg.n_games / 5;
    let n_test = cfg.n_games / 5;
    let split = Split::contiguous(first_seed, cfg.n_games - n_val - n_test, n_val, n_test);
    split.validate()?;
    Ok(split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBalance {
    pub n_chunks: usize,
    pub counts: Vec<(String, usize)>,
    pub background_fraction: f64,
}

pub fn class_balance(data: &WindowDataset) -> ClassBalance {
    let counts = data.class_counts();
    ClassBalance {
        n_chunks: data.len(),
        counts: (0..N_CLASSES)
            .map(|c| (CLASS_NAMES[c].to_string(), counts[c]))
            .collect(),
        background_fraction: if data.is_empty() {
            0.0
        } else {
            counts[0] as f64 / data.len() as f64
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::make_chunks;

    fn small() -> SynthConfig {
        SynthConfig {
            half_len_s: 120,
            dim: 16,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_game(3, &small()).unwrap();
        let b = generate_game(3, &small()).unwrap();
        assert_eq!(a, b);
        let c = generate_game(4, &small()).unwrap();
        assert_ne!(a.halves[0].video.frames, c.halves[0].video.frames);
    }

    #[test]
    fn shapes_and_annotation_ranges() {
        let cfg = small();
        let g = generate_game(1, &cfg).unwrap();
        assert_eq!(g.annotations.events.len(), 2 * 3 * cfg.events_per_class_per_half);
        for h in &g.halves {
            assert_eq!(h.video.frames.dim(), (240, 16));
            h.video.validate().unwrap();
            h.audio.validate().unwrap();
        }
        for half in 1..=2 {
            let mut times: Vec<f64> = g.annotations.in_half(half).map(|e| e.time_s).collect();
            times.sort_by(f64::total_cmp);
            for t in &times {
                assert!(*t >= cfg.envelope_halfwidth_s && *t <= cfg.half_len_s as f64 - cfg.envelope_halfwidth_s);
            }
            for w in times.windows(2) {
                assert!(w[1] - w[0] >= 2.0 * cfg.envelope_halfwidth_s);
            }
        }
    }

    #[test]
    fn zero_amplitude_is_pure_noise() {
        let cfg = SynthConfig {
            amplitude: Amplitudes {
                video: [0.0; 3],
                audio: [0.0; 3],
            },
            ..small()
        };
        let g = generate_game(9, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        rng.set_stream(1);
        draw_anchors(&cfg, &mut rng).unwrap();
        let noise = Normal::new(0.0, 1.0).unwrap();
        let expected = Array2::from_shape_simple_fn((240, 16), || noise.sample(&mut rng) as f32);
        assert_eq!(g.halves[0].video.frames, expected);
    }

    #[test]
    fn signal_follows_envelope() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            ..small()
        };
        let g = generate_game(2, &cfg).unwrap();
        let sigs = signatures(&cfg);
        let e = g.annotations.in_half(1).find(|e| e.label == EventClass::Goal).unwrap();
        let frame = (e.time_s * FRAME_RATE_HZ) as usize;
        let row = g.halves[0].audio.frames.row(frame).mapv(f64::from);
        let amp = cfg.amplitude.get(EventClass::Goal, Modality::Audio);
        assert!((row.dot(&sigs[1][2]) - amp).abs() < 1e-5);
        let off = g.halves[0].audio.frames.row(frame - 16).mapv(f64::from);
        assert!(off.dot(&sigs[1][2]).abs() < 1e-5);
    }

    #[test]
    fn signatures_near_orthogonal_at_full_width() {
        let sigs = signatures(&SynthConfig::default());
        for m in &sigs {
            for i in 0..3 {
                assert!((m[i].dot(&m[i]) - 1.0).abs() < 1e-12);
                for j in i + 1..3 {
                    assert!(m[i].dot(&m[j]).abs() < 0.1);
                }
            }
        }
    }

    #[test]
    fn infeasible_spacing_rejected() {
        let cfg = SynthConfig {
            half_len_s: 60,
            events_per_class_per_half: 4,
            ..small()
        };
        assert!(matches!(generate_game(0, &cfg), Err(Error::Config(_))));
        let neg = SynthConfig {
            amplitude: Amplitudes {
                video: [-1.0, 0.0, 0.0],
                audio: [0.0; 3],
            },
            ..small()
        };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn default_split_is_24_8_8() {
        let s = make_split(&SynthConfig::default(), 42).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (24, 8, 8));
        assert_eq!(s.len(), 40);
        let overlapping = Split {
            train: vec![1, 2],
            val: vec![2],
            test: vec![],
        };
        assert!(overlapping.validate().is_err());
    }

    #[test]
    fn background_dominates() {
        let cfg = SynthConfig {
            dim: 8,
            ..SynthConfig::default()
        };
        let g = generate_game(5, &cfg).unwrap();
        let mut data = WindowDataset::empty(20);
        for h in &g.halves {
            data.extend(make_chunks(&h.video, &h.audio, &g.annotations, 20).unwrap())
                .unwrap();
        }
        let b = class_balance(&data);
        assert_eq!(b.n_chunks, 60);
        assert!(b.background_fraction > 0.75, "{b:?}");
    }
}
