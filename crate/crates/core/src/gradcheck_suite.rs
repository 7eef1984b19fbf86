//! Finite-difference checks of every differentiable layer and of the fused
//! training graphs, on small seeded random instances in `f64`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fusion::{build_model, Model, ModelSpec};
use crate::nn::gradcheck::{gradcheck, Differentiable, GradCheckReport, DEFAULT_EPS, DEFAULT_TOL};
use crate::nn::{bce_multilabel, Dense, Param, ParamsMut};
use crate::pooling::{ContextGating, PoolingBlock, PoolingKind, PoolingSpec};

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

struct DenseCase {
    layer: Dense<f64>,
    input: Param<f64>,
    probe: Array2<f64>,
}

impl Differentiable for DenseCase {
    fn objective(&mut self, with_grad: bool) -> f64 {
        let out = self.layer.forward(self.input.value.view()).expect("shapes fixed");
        if with_grad {
            let dx = self.layer.backward(self.input.value.view(), self.probe.view());
            self.input.grad += &dx;
        }
        (&out * &self.probe).sum()
    }

    fn params_mut(&mut self) -> ParamsMut<'_, f64> {
        let mut p = self.layer.params_mut("dense");
        p.push(("input".into(), &mut self.input));
        p
    }
}

struct BceCase {
    logits: Param<f64>,
    targets: Array2<f64>,
}

impl Differentiable for BceCase {
    fn objective(&mut self, with_grad: bool) -> f64 {
        let (loss, grad) = bce_multilabel(self.logits.value.view(), self.targets.view()).expect("shapes fixed");
        if with_grad {
            self.logits.grad += &grad;
        }
        loss
    }

    fn params_mut(&mut self) -> ParamsMut<'_, f64> {
        vec![("logits".into(), &mut self.logits)]
    }
}

struct GateCase {
    gate: ContextGating<f64>,
    input: Param<f64>,
    probe: Array2<f64>,
}

impl Differentiable for GateCase {
    fn objective(&mut self, with_grad: bool) -> f64 {
        let (out, cache) = self.gate.forward(self.input.value.view()).expect("shapes fixed");
        if with_grad {
            let dx = self.gate.backward(&cache, self.probe.view());
            self.input.grad += &dx;
        }
        (&out * &self.probe).sum()
    }

    fn params_mut(&mut self) -> ParamsMut<'_, f64> {
        let mut p = self.gate.params_mut("gating");
        p.push(("input".into(), &mut self.input));
        p
    }
}

struct PoolingCase {
    block: PoolingBlock<f64>,
    inputs: Vec<Param<f64>>,
    probe: Array2<f64>,
}

impl Differentiable for PoolingCase {
    fn objective(&mut self, with_grad: bool) -> f64 {
        let views: Vec<_> = self.inputs.iter().map(|p| p.value.view()).collect();
        let (out, cache) = self.block.forward(&views).expect("shapes fixed");
        if with_grad {
            let dx = self.block.backward(&cache, self.probe.view());
            for (p, g) in self.inputs.iter_mut().zip(dx) {
                p.grad += &g;
            }
        }
        (&out * &self.probe).sum()
    }

    fn params_mut(&mut self) -> ParamsMut<'_, f64> {
        let mut p = self.block.params_mut("pool");
        for (i, x) in self.inputs.iter_mut().enumerate() {
            p.push((format!("input{i}"), x));
        }
        p
    }
}

/// BCE of a whole model with dropout replayed from a fixed seed.
struct ModelCase {
    model: Model<f64>,
    video: Vec<Array2<f64>>,
    audio: Vec<Array2<f64>>,
    targets: Array2<f64>,
}

impl Differentiable for ModelCase {
    fn objective(&mut self, with_grad: bool) -> f64 {
        let v: Vec<_> = self.video.iter().map(|x| x.view()).collect();
        let a: Vec<_> = self.audio.iter().map(|x| x.view()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let out = self
            .model
            .loss_and_backward(&v, &a, self.targets.view(), &mut rng)
            .expect("shapes fixed");
        if !with_grad {
            self.model.zero_grad();
        }
        out.loss
    }

    fn params_mut(&mut self) -> ParamsMut<'_, f64> {
        self.model.params_mut()
    }
}

fn pooling_case(kind: PoolingKind, gating: bool, seed: u64) -> PoolingCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = PoolingSpec::new(kind, 4, 3).with_out_dim(5).with_gating(gating);
    let mut block = PoolingBlock::init(&spec, &mut rng).expect("valid spec");
    if let Some(v) = block.vlad.as_mut() {
        v.assign_bias.value = random(1, 3, &mut rng);
    }
    PoolingCase {
        block,
        inputs: (0..2).map(|_| Param::new(random(5, 4, &mut rng))).collect(),
        probe: random(2, 5, &mut rng),
    }
}

/// Frames of width 6 over 8 rows: with fewer, narrower rows a cluster's
/// residual can be short enough for the O(eps^2) truncation error of central
/// differences to reach the tolerance at eps = 1e-3.
fn model_case(method: u8, seed: u64) -> ModelCase {
    model_case_sized(method, seed, 6, 8, 6)
}

fn model_case_sized(method: u8, seed: u64, dim: usize, frames: usize, out: usize) -> ModelCase {
    let spec = ModelSpec::fused(method, PoolingSpec::new(PoolingKind::NetVlad, dim, 2).with_out_dim(out));
    let model = build_model(&spec, seed).expect("valid spec");
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    ModelCase {
        model,
        video: (0..3).map(|_| random(frames, dim, &mut rng)).collect(),
        audio: (0..3).map(|_| random(frames, dim, &mut rng)).collect(),
        targets: Array2::from_shape_fn((3, 4), |(i, j)| f64::from(u8::from(i == j))),
    }
}

/// Names of the checked layers, in report order.
pub fn case_names() -> Vec<String> {
    let mut names: Vec<String> = [
        "dense",
        "sigmoid_bce",
        "context_gating",
        "pooling_mean",
        "pooling_max",
        "netvlad",
        "netrvlad",
        "netvlad_gated",
        "netrvlad_gated",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    names.extend((3..=7).map(|m| format!("fused_method_{m}")));
    names
}

fn build_case(name: &str) -> Box<dyn Differentiable> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    match name {
        "dense" => Box::new(DenseCase {
            layer: Dense::new(random(4, 3, &mut rng), random(1, 3, &mut rng)).expect("shapes"),
            input: Param::new(random(5, 4, &mut rng)),
            probe: random(5, 3, &mut rng),
        }),
        "sigmoid_bce" => Box::new(BceCase {
            logits: Param::new(random(3, 4, &mut rng).mapv(|x| 3.0 * x)),
            targets: Array2::from_shape_fn((3, 4), |(i, j)| f64::from(u8::from((i + j) % 2 == 0))),
        }),
        "context_gating" => Box::new(GateCase {
            gate: ContextGating::new(random(4, 4, &mut rng), random(1, 4, &mut rng)).expect("square"),
            input: Param::new(random(3, 4, &mut rng)),
            probe: random(3, 4, &mut rng),
        }),
        "pooling_mean" => Box::new(pooling_case(PoolingKind::Mean, false, 1)),
        "pooling_max" => Box::new(pooling_case(PoolingKind::Max, false, 2)),
        "netvlad" => Box::new(pooling_case(PoolingKind::NetVlad, false, 3)),
        "netrvlad" => Box::new(pooling_case(PoolingKind::NetRVlad, false, 4)),
        "netvlad_gated" => Box::new(pooling_case(PoolingKind::NetVlad, true, 5)),
        "netrvlad_gated" => Box::new(pooling_case(PoolingKind::NetRVlad, true, 6)),
        other => {
            let method: u8 = other
                .strip_prefix("fused_method_")
                .and_then(|m| m.parse().ok())
                .unwrap_or_else(|| panic!("unknown gradcheck case {other}"));
            Box::new(model_case(method, 40 + u64::from(method)))
        }
    }
}

/// Runs every case with `eps = 1e-3` and tolerance `1e-4`.
pub fn run_suite() -> Vec<GradCheckReport> {
    case_names()
        .into_iter()
        .map(|name| {
            let mut case = build_case(&name);
            let mut report = gradcheck(case.as_mut(), DEFAULT_EPS, DEFAULT_TOL);
            report.name = name;
            report
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_case_passes() {
        for r in run_suite() {
            assert!(r.passed, "{r:?}");
            assert!(r.checked > 0);
        }
    }

    #[test]
    fn misses_on_tiny_instances_are_truncation_error() {
        // Fails at eps = 1e-3, and the error falls by 100x per 10x smaller eps.
        let errors: Vec<f64> = [1e-3, 1e-4, 1e-5]
            .iter()
            .map(|&eps| gradcheck(&mut model_case_sized(3, 43, 3, 4, 4), eps, DEFAULT_TOL).max_rel_error)
            .collect();
        assert!(errors[0] > DEFAULT_TOL);
        assert!(
            errors[1] < errors[0] / 50.0 && errors[2] < errors[1] / 50.0,
            "{errors:?}"
        );
    }
}
