//! Single-modality and audio-visual chunk classifiers.
//!
//! Each branch follows the same pipeline: pooling block, dropout, fully
//! connected layer to 4 logits, sigmoid. The seven fusion methods differ in
//! where the video and audio pipelines meet:
//!
//! | method | merge point                                   | trained jointly |
//! |--------|-----------------------------------------------|-----------------|
//! | 1      | product of branch probabilities               | no              |
//! | 2      | sigmoid of averaged branch logits             | no              |
//! | 3      | as 2                                          | yes             |
//! | 4      | concat after dropout, before the FC layer     | yes             |
//! | 5      | concat before dropout                         | yes             |
//! | 6      | per-frame concat before pooling, 2x width out | yes             |
//! | 7      | per-frame concat before pooling, 1x width out | yes             |

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Modality, N_CLASSES};
use crate::nn::{bce_multilabel, dropout_forward, sigmoid, Dense, DropoutMask, ParamsMut, Real};
use crate::pooling::{PoolingBlock, PoolingCache, PoolingSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    VideoOnly,
    AudioOnly,
    Fused,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::VideoOnly => "video_only",
            Mode::AudioOnly => "audio_only",
            Mode::Fused => "fused",
        }
    }
}

fn default_n_classes() -> usize {
    N_CLASSES
}

fn default_keep() -> f64 {
    0.6
}

/// Architecture of a classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub mode: Mode,
    /// 1 to 7; required in fused mode only.
    #[serde(default)]
    pub fusion_method: Option<u8>,
    /// Per-branch pooling. `input_dim` is the per-modality feature width.
    pub pooling: PoolingSpec,
    #[serde(default = "default_n_classes")]
    pub n_classes: usize,
    #[serde(default = "default_keep")]
    pub dropout_keep: f64,
}

/// How a spec's parameters are arranged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Single(Modality),
    /// Two full branches with their own heads (methods 1 to 3).
    Late(u8),
    /// Two pooling blocks, one shared head (methods 4 and 5).
    Mid(u8),
    /// One pooling block over concatenated frames (methods 6 and 7).
    Early(u8),
}

impl ModelSpec {
    pub fn single(modality: Modality, pooling: PoolingSpec) -> Self {
        Self {
            mode: match modality {
                Modality::Video => Mode::VideoOnly,
                Modality::Audio => Mode::AudioOnly,
            },
            fusion_method: None,
            pooling,
            n_classes: N_CLASSES,
            dropout_keep: 0.6,
        }
    }

    pub fn fused(method: u8, pooling: PoolingSpec) -> Self {
        Self {
            mode: Mode::Fused,
            fusion_method: Some(method),
            pooling,
            n_classes: N_CLASSES,
            dropout_keep: 0.6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pooling.validate()?;
        if self.n_classes != N_CLASSES {
            return Err(Error::Config(format!(
                "n_classes must be {N_CLASSES}, got {}",
                self.n_classes
            )));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return Err(Error::Config(format!(
                "dropout_keep must be in (0, 1], got {}",
                self.dropout_keep
            )));
        }
        match (self.mode, self.fusion_method) {
            (Mode::Fused, Some(1..=7)) | (Mode::VideoOnly | Mode::AudioOnly, None) => Ok(()),
            (Mode::Fused, Some(m)) => Err(Error::Config(format!("fusion_method must be between 1 and 7, got {m}"))),
            (Mode::Fused, None) => Err(Error::Config("fused mode needs a fusion_method".into())),
            (mode, Some(m)) => Err(Error::Config(format!(
                "fusion_method {m} given for single-modality mode {}",
                mode.as_str()
            ))),
        }
    }

    fn layout(&self) -> Layout {
        match (self.mode, self.fusion_method) {
            (Mode::VideoOnly, _) => Layout::Single(Modality::Video),
            (Mode::AudioOnly, _) => Layout::Single(Modality::Audio),
            (Mode::Fused, Some(m @ 1..=3)) => Layout::Late(m),
            (Mode::Fused, Some(m @ 4..=5)) => Layout::Mid(m),
            (Mode::Fused, Some(m)) => Layout::Early(m),
            (Mode::Fused, None) => unreachable!("validated"),
        }
    }

    /// Pooling of the single block used by methods 6 and 7: frames are twice
    /// as wide, and the output is twice (6) or once (7) the branch width.
    pub fn joint_pooling(&self) -> Option<PoolingSpec> {
        match self.layout() {
            Layout::Early(m) => {
                let mut p = self.pooling.clone();
                p.input_dim *= 2;
                if m == 6 {
                    p.pool_out_dim *= 2;
                }
                Some(p)
            }
            _ => None,
        }
    }

    /// Width of the input of the fully connected layer.
    pub fn head_input_dim(&self) -> usize {
        match self.layout() {
            Layout::Single(_) | Layout::Late(_) => self.pooling.pool_out_dim,
            Layout::Mid(_) => 2 * self.pooling.pool_out_dim,
            Layout::Early(_) => self.joint_pooling().expect("early layout").pool_out_dim,
        }
    }

    /// Whether [`Model::loss_and_backward`] may be used on this spec.
    pub fn trainable_end_to_end(&self) -> bool {
        !matches!(self.layout(), Layout::Late(1 | 2))
    }

    pub fn uses(&self, modality: Modality) -> bool {
        match self.layout() {
            Layout::Single(m) => m == modality,
            _ => true,
        }
    }

    /// Short label such as `video_only` or `fused_m4`.
    pub fn label(&self) -> String {
        match self.fusion_method {
            Some(m) if self.mode == Mode::Fused => format!("fused_m{m}"),
            _ => self.mode.as_str().to_string(),
        }
    }
}

/// Classifier output for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<F: Real> {
    /// `B x 4` probabilities.
    pub probs: Array2<F>,
    /// `B x 4` logits, absent for method 1.
    pub logits: Option<Array2<F>>,
}

#[derive(Debug, Clone)]
struct BranchTape<F: Real> {
    pool: PoolingCache<F>,
    mask: DropoutMask<F>,
    head_input: Array2<F>,
}

#[derive(Debug, Clone)]
enum Tape<F: Real> {
    Single(BranchTape<F>),
    Late([BranchTape<F>; 2]),
    Mid {
        pools: [PoolingCache<F>; 2],
        masks: Vec<DropoutMask<F>>,
        head_input: Array2<F>,
    },
}

/// Trainable parameters wired according to a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Model<F: Real> {
    pub spec: ModelSpec,
    /// Single: `[branch]`; methods 1 to 5: `[video, audio]`; 6 and 7: `[joint]`.
    pub pools: Vec<PoolingBlock<F>>,
    /// Methods 1 to 3: `[video, audio]`; otherwise one shared head.
    pub heads: Vec<Dense<F>>,
}

/// Loss value and predictions from one training step.
#[derive(Debug, Clone)]
pub struct StepOutput<F: Real> {
    pub loss: F,
    pub probs: Array2<F>,
}

pub fn build_model<F: Real>(spec: &ModelSpec, seed: u64) -> Result<Model<F>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let branch = |rng: &mut ChaCha8Rng| PoolingBlock::init(&spec.pooling, rng);
    let p = spec.pooling.pool_out_dim;
    let (pools, heads) = match spec.layout() {
        Layout::Single(_) => {
            let pool = branch(&mut rng)?;
            (vec![pool], vec![Dense::init(p, spec.n_classes, &mut rng)])
        }
        Layout::Late(_) => {
            let v = branch(&mut rng)?;
            let a = branch(&mut rng)?;
            let hv = Dense::init(p, spec.n_classes, &mut rng);
            let ha = Dense::init(p, spec.n_classes, &mut rng);
            (vec![v, a], vec![hv, ha])
        }
        Layout::Mid(_) => {
            let v = branch(&mut rng)?;
            let a = branch(&mut rng)?;
            (vec![v, a], vec![Dense::init(2 * p, spec.n_classes, &mut rng)])
        }
        Layout::Early(_) => {
            let joint = spec.joint_pooling().expect("early layout");
            let pool = PoolingBlock::init(&joint, &mut rng)?;
            let head = Dense::init(joint.pool_out_dim, spec.n_classes, &mut rng);
            (vec![pool], vec![head])
        }
    };
    Ok(Model {
        spec: spec.clone(),
        pools,
        heads,
    })
}

fn dropout_step<F: Real, R: Rng + ?Sized>(
    x: Array2<F>,
    keep: f64,
    rng: Option<&mut R>,
) -> Result<(Array2<F>, DropoutMask<F>)> {
    match rng {
        Some(r) => dropout_forward(x.view(), keep, true, r),
        None => Ok((x, DropoutMask::Identity)),
    }
}

fn check_batch<F: Real>(name: &str, chunks: &[ArrayView2<F>], n: usize) -> Result<()> {
    if chunks.len() != n {
        return Err(Error::Shape(format!(
            "{name} batch has {} chunks, expected {n}",
            chunks.len()
        )));
    }
    Ok(())
}

fn sigmoid_probs<F: Real>(z: &Array2<F>) -> Array2<F> {
    z.mapv(sigmoid)
}

impl<F: Real> Model<F> {
    /// Builds a method 1 or 2 model from two trained single-modality models.
    pub fn compose(method: u8, video: &Model<F>, audio: &Model<F>) -> Result<Self> {
        if !matches!(method, 1..=3) {
            return Err(Error::Config(format!(
                "only late-fusion methods 1 to 3 can be composed, got {method}"
            )));
        }
        if video.spec.mode != Mode::VideoOnly || audio.spec.mode != Mode::AudioOnly {
            return Err(Error::Config(
                "compose needs a video_only and an audio_only model".into(),
            ));
        }
        if video.spec.pooling != audio.spec.pooling {
            return Err(Error::Config("branch pooling specs differ".into()));
        }
        let spec = ModelSpec {
            dropout_keep: video.spec.dropout_keep,
            ..ModelSpec::fused(method, video.spec.pooling.clone())
        };
        Ok(Self {
            spec,
            pools: vec![video.pools[0].clone(), audio.pools[0].clone()],
            heads: vec![video.heads[0].clone(), audio.heads[0].clone()],
        })
    }

    /// The single-modality model of one branch of a method 1 to 3 model.
    pub fn branch(&self, modality: Modality) -> Option<Model<F>> {
        if !matches!(self.spec.layout(), Layout::Late(_)) {
            return None;
        }
        let i = match modality {
            Modality::Video => 0,
            Modality::Audio => 1,
        };
        Some(Model {
            spec: ModelSpec {
                dropout_keep: self.spec.dropout_keep,
                ..ModelSpec::single(modality, self.spec.pooling.clone())
            },
            pools: vec![self.pools[i].clone()],
            heads: vec![self.heads[i].clone()],
        })
    }

    fn run_branch<R: Rng + ?Sized>(
        &self,
        index: usize,
        chunks: &[ArrayView2<F>],
        rng: Option<&mut R>,
    ) -> Result<(Array2<F>, BranchTape<F>)> {
        let (pooled, pool) = self.pools[index].forward(chunks)?;
        let (head_input, mask) = dropout_step(pooled, self.spec.dropout_keep, rng)?;
        let z = self.heads[index].forward(head_input.view())?;
        Ok((z, BranchTape { pool, mask, head_input }))
    }

    fn run<R: Rng + ?Sized>(
        &self,
        video: &[ArrayView2<F>],
        audio: &[ArrayView2<F>],
        mut rng: Option<&mut R>,
    ) -> Result<(Prediction<F>, Tape<F>)> {
        let n = match self.spec.layout() {
            Layout::Single(Modality::Audio) => audio.len(),
            _ => video.len(),
        };
        if self.spec.uses(Modality::Video) {
            check_batch("video", video, n)?;
        }
        if self.spec.uses(Modality::Audio) {
            check_batch("audio", audio, n)?;
        }
        let keep = self.spec.dropout_keep;
        match self.spec.layout() {
            Layout::Single(m) => {
                let chunks = if m == Modality::Video { video } else { audio };
                let (z, tape) = self.run_branch(0, chunks, rng)?;
                let probs = sigmoid_probs(&z);
                Ok((Prediction { probs, logits: Some(z) }, Tape::Single(tape)))
            }
            Layout::Late(method) => {
                let (zv, tv) = self.run_branch(0, video, rng.as_deref_mut())?;
                let (za, ta) = self.run_branch(1, audio, rng)?;
                let prediction = if method == 1 {
                    Prediction {
                        probs: sigmoid_probs(&zv) * sigmoid_probs(&za),
                        logits: None,
                    }
                } else {
                    let z = (zv + za) * F::of(0.5);
                    Prediction {
                        probs: sigmoid_probs(&z),
                        logits: Some(z),
                    }
                };
                Ok((prediction, Tape::Late([tv, ta])))
            }
            Layout::Mid(method) => {
                let (pv, cv) = self.pools[0].forward(video)?;
                let (pa, ca) = self.pools[1].forward(audio)?;
                let (head_input, masks) = if method == 4 {
                    let (dv, mv) = dropout_step(pv, keep, rng.as_deref_mut())?;
                    let (da, ma) = dropout_step(pa, keep, rng)?;
                    (concatenate![Axis(1), dv, da], vec![mv, ma])
                } else {
                    let (d, m) = dropout_step(concatenate![Axis(1), pv, pa], keep, rng)?;
                    (d, vec![m])
                };
                let z = self.heads[0].forward(head_input.view())?;
                Ok((
                    Prediction {
                        probs: sigmoid_probs(&z),
                        logits: Some(z),
                    },
                    Tape::Mid {
                        pools: [cv, ca],
                        masks,
                        head_input,
                    },
                ))
            }
            Layout::Early(_) => {
                let joint: Vec<Array2<F>> = video
                    .iter()
                    .zip(audio)
                    .map(|(v, a)| {
                        if v.nrows() != a.nrows() {
                            return Err(Error::Shape(format!(
                                "video chunk has {} frames, audio chunk {}",
                                v.nrows(),
                                a.nrows()
                            )));
                        }
                        Ok(concatenate![Axis(1), *v, *a])
                    })
                    .collect::<Result<_>>()?;
                let views: Vec<_> = joint.iter().map(|j| j.view()).collect();
                let (z, tape) = self.run_branch(0, &views, rng)?;
                Ok((
                    Prediction {
                        probs: sigmoid_probs(&z),
                        logits: Some(z),
                    },
                    Tape::Single(tape),
                ))
            }
        }
    }

    /// Inference: dropout disabled.
    pub fn forward(&self, video: &[ArrayView2<F>], audio: &[ArrayView2<F>]) -> Result<Prediction<F>> {
        Ok(self.run::<ChaCha8Rng>(video, audio, None)?.0)
    }

    fn backward_branch(&mut self, index: usize, tape: &BranchTape<F>, dz: ArrayView2<F>) {
        let dh = self.heads[index].backward(tape.head_input.view(), dz);
        let dp = tape.mask.backward(dh.view());
        self.pools[index].backward(&tape.pool, dp.view());
    }

    fn backward(&mut self, tape: &Tape<F>, dz: ArrayView2<F>) {
        match tape {
            Tape::Single(t) => self.backward_branch(0, t, dz),
            Tape::Late([tv, ta]) => {
                let half = &dz * F::of(0.5);
                self.backward_branch(0, tv, half.view());
                self.backward_branch(1, ta, half.view());
            }
            Tape::Mid {
                pools: [cv, ca],
                masks,
                head_input,
            } => {
                let p = self.spec.pooling.pool_out_dim;
                let dh = self.heads[0].backward(head_input.view(), dz);
                let (dv, da) = if let [mask] = masks.as_slice() {
                    let d = mask.backward(dh.view());
                    (d.slice(s![.., ..p]).to_owned(), d.slice(s![.., p..]).to_owned())
                } else {
                    (
                        masks[0].backward(dh.slice(s![.., ..p])),
                        masks[1].backward(dh.slice(s![.., p..])),
                    )
                };
                self.pools[0].backward(cv, dv.view());
                self.pools[1].backward(ca, da.view());
            }
        }
    }

    /// One training forward/backward pass with dropout active. Gradients are
    /// accumulated into the parameters; BCE is taken on the final sigmoid.
    pub fn loss_and_backward<R: Rng + ?Sized>(
        &mut self,
        video: &[ArrayView2<F>],
        audio: &[ArrayView2<F>],
        targets: ArrayView2<F>,
        rng: &mut R,
    ) -> Result<StepOutput<F>> {
        if !self.spec.trainable_end_to_end() {
            return Err(Error::InvalidArgument(format!(
                "method {} has no joint loss; train the two branches separately",
                self.spec.fusion_method.unwrap_or_default()
            )));
        }
        let (prediction, tape) = self.run(video, audio, Some(rng))?;
        let logits = prediction.logits.expect("trainable graphs end in logits");
        let (loss, dz) = bce_multilabel(logits.view(), targets)?;
        self.backward(&tape, dz.view());
        Ok(StepOutput {
            loss,
            probs: prediction.probs,
        })
    }

    pub fn params_mut(&mut self) -> ParamsMut<'_, F> {
        let (pool_names, head_names): (&[&str], &[&str]) = match self.spec.layout() {
            Layout::Single(Modality::Video) => (&["video"], &["head"]),
            Layout::Single(Modality::Audio) => (&["audio"], &["head"]),
            Layout::Late(_) => (&["video", "audio"], &["video_head", "audio_head"]),
            Layout::Mid(_) => (&["video", "audio"], &["head"]),
            Layout::Early(_) => (&["joint"], &["head"]),
        };
        let mut out = Vec::new();
        for (pool, name) in self.pools.iter_mut().zip(pool_names) {
            out.extend(pool.params_mut(name));
        }
        for (head, name) in self.heads.iter_mut().zip(head_names) {
            out.extend(head.params_mut(name));
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn n_params(&mut self) -> usize {
        self.params_mut().iter().map(|(_, p)| p.len()).sum()
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            spec: self.spec.clone(),
            pools: self.pools.iter().map(PoolingBlock::cast).collect(),
            heads: self.heads.iter().map(Dense::cast).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{gradcheck, Differentiable};
    use crate::nn::Param;
    use crate::pooling::PoolingKind;

    fn small_pooling(kind: PoolingKind) -> PoolingSpec {
        PoolingSpec::new(kind, 3, 2).with_out_dim(4)
    }

    fn random_chunks(n: usize, w: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Array2<f64>> {
        (0..n)
            .map(|_| Array2::from_shape_simple_fn((w, d), || rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn head_widths() {
        let p = PoolingSpec::new(PoolingKind::NetRVlad, 512, 16);
        assert_eq!(ModelSpec::fused(4, p.clone()).head_input_dim(), 1024);
        assert_eq!(ModelSpec::fused(5, p.clone()).head_input_dim(), 1024);
        assert_eq!(ModelSpec::fused(6, p.clone()).head_input_dim(), 1024);
        assert_eq!(ModelSpec::fused(7, p.clone()).head_input_dim(), 512);
        assert_eq!(ModelSpec::fused(6, p.clone()).joint_pooling().unwrap().input_dim, 1024);
        assert_eq!(ModelSpec::single(Modality::Audio, p).head_input_dim(), 512);
    }

    #[test]
    fn invalid_specs_rejected() {
        let p = small_pooling(PoolingKind::Mean);
        assert!(ModelSpec::fused(9, p.clone()).validate().is_err());
        assert!(ModelSpec::fused(0, p.clone()).validate().is_err());
        let mut s = ModelSpec::single(Modality::Video, p.clone());
        s.fusion_method = Some(4);
        assert!(s.validate().is_err());
        let mut s = ModelSpec::fused(4, p.clone());
        s.fusion_method = None;
        assert!(s.validate().is_err());
        let mut s = ModelSpec::fused(4, p);
        s.n_classes = 3;
        assert!(build_model::<f64>(&s, 0).is_err());
    }

    #[test]
    fn product_of_half_probabilities() {
        let spec = ModelSpec::fused(1, small_pooling(PoolingKind::Mean));
        let mut model = build_model::<f64>(&spec, 1).unwrap();
        for h in &mut model.heads {
            h.weight.value.fill(0.0);
            h.bias.value.fill(0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = random_chunks(2, 4, 3, &mut rng);
        let a = random_chunks(2, 4, 3, &mut rng);
        let vv: Vec<_> = v.iter().map(|x| x.view()).collect();
        let av: Vec<_> = a.iter().map(|x| x.view()).collect();
        let out = model.forward(&vv, &av).unwrap();
        assert!(out.probs.iter().all(|&p| (p - 0.25).abs() < 1e-15));
        assert!(out.logits.is_none());
    }

    #[test]
    fn method_one_equals_product_of_isolated_branches() {
        let spec = ModelSpec::fused(1, small_pooling(PoolingKind::NetRVlad));
        let model = build_model::<f64>(&spec, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_chunks(3, 5, 3, &mut rng);
        let a = random_chunks(3, 5, 3, &mut rng);
        let vv: Vec<_> = v.iter().map(|x| x.view()).collect();
        let av: Vec<_> = a.iter().map(|x| x.view()).collect();
        let fused = model.forward(&vv, &av).unwrap().probs;
        let pv = model.branch(Modality::Video).unwrap().forward(&vv, &[]).unwrap().probs;
        let pa = model.branch(Modality::Audio).unwrap().forward(&[], &av).unwrap().probs;
        assert_eq!(fused, &pv * &pa);
    }

    #[test]
    fn method_one_is_symmetric_for_identical_branches() {
        let spec = ModelSpec::fused(1, small_pooling(PoolingKind::NetVlad));
        let mut model = build_model::<f64>(&spec, 3).unwrap();
        model.pools[1] = model.pools[0].clone();
        model.heads[1] = model.heads[0].clone();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = random_chunks(2, 4, 3, &mut rng);
        let a = random_chunks(2, 4, 3, &mut rng);
        let vv: Vec<_> = v.iter().map(|x| x.view()).collect();
        let av: Vec<_> = a.iter().map(|x| x.view()).collect();
        assert_eq!(
            model.forward(&vv, &av).unwrap().probs,
            model.forward(&av, &vv).unwrap().probs
        );
    }

    #[test]
    fn method_two_with_equal_logits_is_plain_sigmoid() {
        let spec = ModelSpec::fused(2, small_pooling(PoolingKind::Max));
        let mut model = build_model::<f64>(&spec, 4).unwrap();
        model.pools[1] = model.pools[0].clone();
        model.heads[1] = model.heads[0].clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_chunks(2, 4, 3, &mut rng);
        let vv: Vec<_> = v.iter().map(|x| x.view()).collect();
        let fused = model.forward(&vv, &vv).unwrap().probs;
        let single = model.branch(Modality::Video).unwrap().forward(&vv, &[]).unwrap().probs;
        for (a, b) in fused.iter().zip(single.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn video_only_ignores_audio() {
        let spec = ModelSpec::single(Modality::Video, small_pooling(PoolingKind::NetRVlad));
        let model = build_model::<f64>(&spec, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = random_chunks(2, 4, 3, &mut rng);
        let a1 = random_chunks(2, 4, 3, &mut rng);
        let a2 = random_chunks(1, 7, 9, &mut rng);
        let vv: Vec<_> = v.iter().map(|x| x.view()).collect();
        let p1 = model
            .forward(&vv, &a1.iter().map(|x| x.view()).collect::<Vec<_>>())
            .unwrap();
        let p2 = model
            .forward(&vv, &a2.iter().map(|x| x.view()).collect::<Vec<_>>())
            .unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn zero_head_gives_ln2_loss() {
        let spec = ModelSpec::single(Modality::Audio, small_pooling(PoolingKind::Mean));
        let mut model = build_model::<f64>(&spec, 6).unwrap();
        model.heads[0].weight.value.fill(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_chunks(3, 4, 3, &mut rng);
        let av: Vec<_> = a.iter().map(|x| x.view()).collect();
        let mut targets = Array2::zeros((3, 4));
        targets.column_mut(0).fill(1.0);
        let out = model.loss_and_backward(&[], &av, targets.view(), &mut rng).unwrap();
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn late_untrained_methods_refuse_joint_loss() {
        for m in [1, 2] {
            let spec = ModelSpec::fused(m, small_pooling(PoolingKind::Mean));
            let mut model = build_model::<f64>(&spec, 0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let v = random_chunks(1, 2, 3, &mut rng);
            let vv: Vec<_> = v.iter().map(|x| x.view()).collect();
            let err = model
                .loss_and_backward(&vv, &vv, Array2::zeros((1, 4)).view(), &mut rng)
                .unwrap_err();
            assert!(matches!(err, Error::InvalidArgument(_)));
        }
    }

    #[test]
    fn methods_six_and_seven_differ_only_in_projection_width() {
        let pooling = small_pooling(PoolingKind::NetRVlad);
        let mut m6 = build_model::<f64>(&ModelSpec::fused(6, pooling.clone()), 0).unwrap();
        let mut m7 = build_model::<f64>(&ModelSpec::fused(7, pooling), 0).unwrap();
        let shapes = |m: &mut Model<f64>| {
            m.params_mut()
                .into_iter()
                .map(|(n, p)| (n, p.shape()))
                .collect::<Vec<_>>()
        };
        let s6 = shapes(&mut m6);
        let s7 = shapes(&mut m7);
        assert_eq!(s6.len(), s7.len());
        for ((n6, a), (n7, b)) in s6.iter().zip(&s7) {
            assert_eq!(n6, n7);
            if n6.starts_with("joint.vlad") {
                assert_eq!(a, b);
            }
        }
        assert_eq!(m6.heads[0].n_in(), 8);
        assert_eq!(m7.heads[0].n_in(), 4);
    }

    #[test]
    fn wrong_batch_sizes_rejected() {
        let spec = ModelSpec::fused(4, small_pooling(PoolingKind::Mean));
        let model = build_model::<f64>(&spec, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = random_chunks(2, 4, 3, &mut rng);
        let a = random_chunks(1, 4, 3, &mut rng);
        let vv: Vec<_> = v.iter().map(|x| x.view()).collect();
        let av: Vec<_> = a.iter().map(|x| x.view()).collect();
        assert!(model.forward(&vv, &av).is_err());
        let wide = random_chunks(2, 4, 5, &mut rng);
        let wv: Vec<_> = wide.iter().map(|x| x.view()).collect();
        assert!(model.forward(&wv, &wv).is_err());
    }

    /// Full-model BCE objective with a fixed dropout mask.
    pub(crate) struct ModelCase {
        pub model: Model<f64>,
        pub video: Vec<Array2<f64>>,
        pub audio: Vec<Array2<f64>>,
        pub targets: Array2<f64>,
    }

    impl Differentiable for ModelCase {
        fn objective(&mut self, with_grad: bool) -> f64 {
            let vv: Vec<_> = self.video.iter().map(|x| x.view()).collect();
            let av: Vec<_> = self.audio.iter().map(|x| x.view()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let out = self
                .model
                .loss_and_backward(&vv, &av, self.targets.view(), &mut rng)
                .unwrap();
            if !with_grad {
                self.model.zero_grad();
            }
            out.loss
        }

        fn params_mut(&mut self) -> ParamsMut<'_, f64> {
            self.model.params_mut()
        }
    }

    fn model_case(method: u8, seed: u64) -> ModelCase {
        let spec = ModelSpec {
            dropout_keep: 0.6,
            ..ModelSpec::fused(method, small_pooling(PoolingKind::NetVlad))
        };
        let model = build_model::<f64>(&spec, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        ModelCase {
            model,
            video: random_chunks(3, 4, 3, &mut rng),
            audio: random_chunks(3, 4, 3, &mut rng),
            targets: Array2::from_shape_fn((3, 4), |(i, j)| f64::from(u8::from(i == j))),
        }
    }

    #[test]
    fn fused_graphs_pass_gradcheck() {
        for method in 3..=7 {
            let mut case = model_case(method, 20 + method as u64);
            let r = gradcheck(&mut case, 1e-3, 1e-4);
            assert!(r.passed, "method {method}: {r:?}");
        }
    }

    #[test]
    fn every_parameter_receives_gradient() {
        for method in 3..=7 {
            let mut case = model_case(method, 30 + method as u64);
            case.model.zero_grad();
            case.objective(true);
            for (name, p) in case.model.params_mut() {
                let p: &mut Param<f64> = p;
                assert!(
                    p.grad.iter().any(|&g| g != 0.0),
                    "method {method}: {name} has zero gradient"
                );
            }
        }
    }
}
