//! Temporal pooling of a `W x D` chunk into a fixed-size descriptor.
//!
//! Every pooling block is aggregation (mean, max, NetVLAD or NetRVLAD),
//! followed by a dense projection to `pool_out_dim` and optional context
//! gating. Rows are put into a canonical order before aggregation, which makes
//! all floating-point reductions independent of the input frame order.

use std::cmp::Ordering;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{init_uniform, sigmoid, Dense, Param, ParamsMut, Real};

/// Norms below this are treated as zero and left unscaled.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingKind {
    Mean,
    Max,
    NetVlad,
    NetRVlad,
}

impl PoolingKind {
    pub fn is_vlad(self) -> bool {
        matches!(self, PoolingKind::NetVlad | PoolingKind::NetRVlad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolingSpec {
    pub kind: PoolingKind,
    /// Cluster count; ignored by mean and max pooling.
    #[serde(default = "default_clusters")]
    pub clusters: usize,
    #[serde(default = "default_dim")]
    pub input_dim: usize,
    #[serde(default = "default_dim")]
    pub pool_out_dim: usize,
    /// Defaults to `true` for VLAD kinds when absent.
    #[serde(default)]
    pub gating: Option<bool>,
}

fn default_clusters() -> usize {
    16
}

fn default_dim() -> usize {
    512
}

impl PoolingSpec {
    pub fn new(kind: PoolingKind, input_dim: usize, clusters: usize) -> Self {
        Self {
            kind,
            clusters,
            input_dim,
            pool_out_dim: 512,
            gating: None,
        }
    }

    pub fn with_out_dim(mut self, pool_out_dim: usize) -> Self {
        self.pool_out_dim = pool_out_dim;
        self
    }

    pub fn with_gating(mut self, gating: bool) -> Self {
        self.gating = Some(gating);
        self
    }

    pub fn gating_enabled(&self) -> bool {
        self.gating.unwrap_or(self.kind.is_vlad())
    }

    /// Width of the aggregated descriptor before projection.
    pub fn descriptor_dim(&self) -> usize {
        if self.kind.is_vlad() {
            self.input_dim * self.clusters
        } else {
            self.input_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.is_vlad() && self.clusters == 0 {
            return Err(Error::Config("VLAD pooling needs at least one cluster".into()));
        }
        if self.input_dim == 0 || self.pool_out_dim == 0 {
            return Err(Error::Config(
                "pooling input_dim and pool_out_dim must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Row indices of `x` sorted lexicographically by value.
fn canonical_order<F: Real>(x: ArrayView2<F>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.sort_by(|&a, &b| {
        for (p, q) in x.row(a).iter().zip(x.row(b).iter()) {
            match p.as_f64().total_cmp(&q.as_f64()) {
                Ordering::Equal => continue,
                other => return other,
            }
        }
        Ordering::Equal
    });
    order
}

fn check_chunk<F: Real>(x: ArrayView2<F>, dim: usize) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::InvalidArgument("cannot pool an empty chunk".into()));
    }
    if x.ncols() != dim {
        return Err(Error::Shape(format!(
            "chunk has {} features per frame, pooling expects {dim}",
            x.ncols()
        )));
    }
    Ok(())
}

/// Column-wise mean.
pub fn mean_pool<F: Real>(x: ArrayView2<F>) -> Result<Array1<F>> {
    check_chunk(x, x.ncols())?;
    let sorted = x.select(Axis(0), &canonical_order(x));
    Ok(column_mean(sorted.view()))
}

/// Column-wise maximum.
pub fn max_pool<F: Real>(x: ArrayView2<F>) -> Result<Array1<F>> {
    check_chunk(x, x.ncols())?;
    Ok(column_max(x).0)
}

fn column_mean<F: Real>(x: ArrayView2<F>) -> Array1<F> {
    x.sum_axis(Axis(0)) / F::of(x.nrows() as f64)
}

/// Column maxima with the first row attaining each.
fn column_max<F: Real>(x: ArrayView2<F>) -> (Array1<F>, Vec<usize>) {
    let mut best = x.row(0).to_owned();
    let mut arg = vec![0usize; x.ncols()];
    for (i, row) in x.rows().into_iter().enumerate().skip(1) {
        for (j, &v) in row.iter().enumerate() {
            if v > best[j] {
                best[j] = v;
                arg[j] = i;
            }
        }
    }
    (best, arg)
}

/// Zero-safe L2 normalization; returns the normalized vector and the norm.
fn l2_normalize<F: Real>(v: ArrayView1<F>) -> (Array1<F>, F) {
    let norm = v.dot(&v).sqrt();
    if norm < F::of(NORM_EPS) {
        (v.to_owned(), norm)
    } else {
        (&v / norm, norm)
    }
}

fn l2_normalize_backward<F: Real>(out: ArrayView1<F>, norm: F, upstream: ArrayView1<F>) -> Array1<F> {
    if norm < F::of(NORM_EPS) {
        upstream.to_owned()
    } else {
        let proj = out.dot(&upstream);
        (&upstream - &(&out * proj)) / norm
    }
}

/// Soft-assignment and (for NetVLAD) cluster-center parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct VladParams<F: Real> {
    /// `D x K`
    pub assign_weights: Param<F>,
    /// `1 x K`
    pub assign_bias: Param<F>,
    /// `D x K`, NetVLAD only.
    pub centers: Option<Param<F>>,
}

impl<F: Real> VladParams<F> {
    pub fn init<R: Rng + ?Sized>(kind: PoolingKind, dim: usize, clusters: usize, rng: &mut R) -> Self {
        let assign_weights = Param::new(init_uniform(dim, clusters, dim, rng));
        let centers = (kind == PoolingKind::NetVlad).then(|| Param::new(init_uniform(dim, clusters, dim, rng)));
        Self {
            assign_weights,
            assign_bias: Param::zeros(1, clusters),
            centers,
        }
    }

    pub fn dim(&self) -> usize {
        self.assign_weights.value.nrows()
    }

    pub fn clusters(&self) -> usize {
        self.assign_weights.value.ncols()
    }

    pub fn params_mut(&mut self, prefix: &str) -> ParamsMut<'_, F> {
        let mut out = vec![
            (format!("{prefix}.assign_weights"), &mut self.assign_weights),
            (format!("{prefix}.assign_bias"), &mut self.assign_bias),
        ];
        if let Some(c) = self.centers.as_mut() {
            out.push((format!("{prefix}.centers"), c));
        }
        out
    }

    pub fn cast<G: Real>(&self) -> VladParams<G> {
        VladParams {
            assign_weights: self.assign_weights.cast(),
            assign_bias: self.assign_bias.cast(),
            centers: self.centers.as_ref().map(Param::cast),
        }
    }
}

/// Intermediate values of one VLAD aggregation.
#[derive(Debug, Clone)]
pub struct VladCache<F: Real> {
    /// Soft assignments, `W x K`; rows sum to one.
    pub assign: Array2<F>,
    /// Per-cluster assignment mass.
    pub mass: Array1<F>,
    /// Intra-normalized residuals, `K x D`.
    pub intra: Array2<F>,
    pub intra_norms: Array1<F>,
    pub global_norm: F,
}

fn softmax_rows<F: Real>(logits: &mut Array2<F>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn vlad_forward_rows<F: Real>(x: ArrayView2<F>, params: &VladParams<F>) -> (Array1<F>, VladCache<F>) {
    let mut assign = x.dot(&params.assign_weights.value) + params.assign_bias.value.row(0);
    softmax_rows(&mut assign);
    let mass = assign.sum_axis(Axis(0));
    let mut residual = assign.t().dot(&x);
    if let Some(c) = &params.centers {
        Zip::from(&mut residual)
            .and(&c.value.t())
            .and_broadcast(&mass.view().insert_axis(Axis(1)))
            .for_each(|r, &center, &m| *r -= m * center);
    }
    let k = residual.nrows();
    let mut intra_norms = Array1::zeros(k);
    for (i, mut row) in residual.rows_mut().into_iter().enumerate() {
        let (normed, norm) = l2_normalize(row.view());
        row.assign(&normed);
        intra_norms[i] = norm;
    }
    let flat = Array1::from_iter(residual.iter().copied());
    let (descriptor, global_norm) = l2_normalize(flat.view());
    let cache = VladCache {
        assign,
        mass,
        intra: residual,
        intra_norms,
        global_norm,
    };
    (descriptor, cache)
}

/// Accumulates parameter gradients and returns the gradient w.r.t. `x`.
fn vlad_backward_rows<F: Real>(
    x: ArrayView2<F>,
    params: &mut VladParams<F>,
    cache: &VladCache<F>,
    descriptor: ArrayView1<F>,
    upstream: ArrayView1<F>,
) -> Array2<F> {
    let (k, d) = cache.intra.dim();
    let d_flat = l2_normalize_backward(descriptor, cache.global_norm, upstream);
    let d_intra = d_flat.into_shape_with_order((k, d)).expect("K x D layout");
    let mut d_residual = Array2::zeros((k, d));
    for c in 0..k {
        let g = l2_normalize_backward(cache.intra.row(c), cache.intra_norms[c], d_intra.row(c));
        d_residual.row_mut(c).assign(&g);
    }

    let mut d_assign = x.dot(&d_residual.t());
    if let Some(centers) = params.centers.as_mut() {
        // residual[k, j] -= mass[k] * centers[j, k]
        let mut d_mass = Array1::<F>::zeros(k);
        for c in 0..k {
            d_mass[c] = -centers.value.column(c).dot(&d_residual.row(c));
        }
        Zip::from(&mut centers.grad)
            .and(&d_residual.t())
            .and_broadcast(&cache.mass.view().insert_axis(Axis(0)))
            .for_each(|g, &dr, &m| *g -= m * dr);
        d_assign += &d_mass.view().insert_axis(Axis(0));
    }
    let mut dx = cache.assign.dot(&d_residual);

    // softmax backward, row-wise
    let mut d_logits = d_assign;
    Zip::from(d_logits.rows_mut())
        .and(cache.assign.rows())
        .for_each(|mut dl, a| {
            let inner = a.dot(&dl);
            Zip::from(&mut dl).and(&a).for_each(|g, &p| *g = p * (*g - inner));
        });
    params.assign_weights.grad += &x.t().dot(&d_logits);
    let mut bias_grad = params.assign_bias.grad.row_mut(0);
    bias_grad += &d_logits.sum_axis(Axis(0));
    dx += &d_logits.dot(&params.assign_weights.value.t());
    dx
}

/// NetVLAD / NetRVLAD aggregation of one chunk, before projection.
///
/// Returns the flattened, intra- and globally normalized `K * D` descriptor
/// (cluster-major) with its cache.
pub fn vlad_aggregate<F: Real>(x: ArrayView2<F>, params: &VladParams<F>) -> Result<(Array1<F>, VladCache<F>)> {
    if params.clusters() == 0 {
        return Err(Error::InvalidArgument("VLAD pooling needs at least one cluster".into()));
    }
    check_chunk(x, params.dim())?;
    let sorted = x.select(Axis(0), &canonical_order(x));
    Ok(vlad_forward_rows(sorted.view(), params))
}

/// Learned elementwise gate `sigmoid(y W + b) * y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextGating<F: Real> {
    pub weight: Param<F>,
    pub bias: Param<F>,
}

#[derive(Debug, Clone)]
pub struct GateCache<F: Real> {
    input: Array2<F>,
    gate: Array2<F>,
}

impl<F: Real> ContextGating<F> {
    pub fn new(weight: Array2<F>, bias: Array2<F>) -> Result<Self> {
        let n = weight.nrows();
        if weight.ncols() != n || bias.dim() != (1, n) {
            return Err(Error::Shape(format!(
                "gate weights {:?} must be square and bias {:?} must be 1 x {n}",
                weight.dim(),
                bias.dim()
            )));
        }
        Ok(Self {
            weight: Param::new(weight),
            bias: Param::new(bias),
        })
    }

    pub fn init<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::new(init_uniform(dim, dim, dim, rng)),
            bias: Param::zeros(1, dim),
        }
    }

    pub fn forward(&self, y: ArrayView2<F>) -> Result<(Array2<F>, GateCache<F>)> {
        if y.ncols() != self.weight.value.nrows() {
            return Err(Error::Shape(format!(
                "gating input width {} but gate expects {}",
                y.ncols(),
                self.weight.value.nrows()
            )));
        }
        let gate = (y.dot(&self.weight.value) + self.bias.value.row(0)).mapv(sigmoid);
        let out = &gate * &y;
        Ok((
            out,
            GateCache {
                input: y.to_owned(),
                gate,
            },
        ))
    }

    pub fn backward(&mut self, cache: &GateCache<F>, upstream: ArrayView2<F>) -> Array2<F> {
        let mut d_pre = &upstream * &cache.input;
        Zip::from(&mut d_pre)
            .and(&cache.gate)
            .for_each(|d, &g| *d *= g * (F::one() - g));
        self.weight.grad += &cache.input.t().dot(&d_pre);
        let mut bias_grad = self.bias.grad.row_mut(0);
        bias_grad += &d_pre.sum_axis(Axis(0));
        &upstream * &cache.gate + d_pre.dot(&self.weight.value.t())
    }

    pub fn params_mut(&mut self, prefix: &str) -> ParamsMut<'_, F> {
        vec![
            (format!("{prefix}.weight"), &mut self.weight),
            (format!("{prefix}.bias"), &mut self.bias),
        ]
    }

    pub fn cast<G: Real>(&self) -> ContextGating<G> {
        ContextGating {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

#[derive(Debug, Clone)]
enum Aggregation<F: Real> {
    Mean,
    Max(Vec<usize>),
    Vlad(VladCache<F>),
}

/// Values a [`PoolingBlock`] keeps for its backward pass.
#[derive(Debug, Clone)]
pub struct PoolingCache<F: Real> {
    orders: Vec<Vec<usize>>,
    sorted: Vec<Array2<F>>,
    aggregations: Vec<Aggregation<F>>,
    descriptors: Array2<F>,
    gate: Option<GateCache<F>>,
}

/// Aggregation, projection and optional gating with trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolingBlock<F: Real> {
    pub spec: PoolingSpec,
    pub vlad: Option<VladParams<F>>,
    pub projection: Dense<F>,
    pub gating: Option<ContextGating<F>>,
}

impl<F: Real> PoolingBlock<F> {
    pub fn init<R: Rng + ?Sized>(spec: &PoolingSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let vlad = spec
            .kind
            .is_vlad()
            .then(|| VladParams::init(spec.kind, spec.input_dim, spec.clusters, rng));
        let projection = Dense::init(spec.descriptor_dim(), spec.pool_out_dim, rng);
        let gating = spec
            .gating_enabled()
            .then(|| ContextGating::init(spec.pool_out_dim, rng));
        Ok(Self {
            spec: spec.clone(),
            vlad,
            projection,
            gating,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.spec.pool_out_dim
    }

    /// Pools each chunk to a descriptor, one output row per chunk.
    pub fn forward(&self, chunks: &[ArrayView2<F>]) -> Result<(Array2<F>, PoolingCache<F>)> {
        let dim = self.spec.input_dim;
        let mut descriptors = Array2::zeros((chunks.len(), self.spec.descriptor_dim()));
        let mut orders = Vec::with_capacity(chunks.len());
        let mut sorted = Vec::with_capacity(chunks.len());
        let mut aggregations = Vec::with_capacity(chunks.len());
        for (b, x) in chunks.iter().enumerate() {
            check_chunk(*x, dim)?;
            let order = canonical_order(*x);
            let xs = x.select(Axis(0), &order);
            let (desc, agg) = match self.spec.kind {
                PoolingKind::Mean => (column_mean(xs.view()), Aggregation::Mean),
                PoolingKind::Max => {
                    let (m, arg) = column_max(xs.view());
                    (m, Aggregation::Max(arg))
                }
                PoolingKind::NetVlad | PoolingKind::NetRVlad => {
                    let params = self.vlad.as_ref().expect("VLAD params for VLAD kind");
                    let (d, c) = vlad_forward_rows(xs.view(), params);
                    (d, Aggregation::Vlad(c))
                }
            };
            descriptors.row_mut(b).assign(&desc);
            orders.push(order);
            sorted.push(xs);
            aggregations.push(agg);
        }
        let projected = self.projection.forward(descriptors.view())?;
        let (out, gate) = match &self.gating {
            Some(g) => {
                let (o, c) = g.forward(projected.view())?;
                (o, Some(c))
            }
            None => (projected, None),
        };
        Ok((
            out,
            PoolingCache {
                orders,
                sorted,
                aggregations,
                descriptors,
                gate,
            },
        ))
    }

    /// Accumulates parameter gradients; returns the gradient w.r.t. each
    /// input chunk in its original row order.
    pub fn backward(&mut self, cache: &PoolingCache<F>, upstream: ArrayView2<F>) -> Vec<Array2<F>> {
        let d_projected = match (&mut self.gating, &cache.gate) {
            (Some(g), Some(c)) => g.backward(c, upstream),
            _ => upstream.to_owned(),
        };
        let d_desc = self.projection.backward(cache.descriptors.view(), d_projected.view());
        let mut grads = Vec::with_capacity(cache.orders.len());
        for (b, order) in cache.orders.iter().enumerate() {
            let xs = &cache.sorted[b];
            let (w, d) = xs.dim();
            let dd = d_desc.row(b);
            let d_sorted = match &cache.aggregations[b] {
                Aggregation::Mean => {
                    let scaled = &dd / F::of(w as f64);
                    scaled.broadcast((w, d)).expect("row broadcast").to_owned()
                }
                Aggregation::Max(arg) => {
                    let mut g = Array2::zeros((w, d));
                    for (j, &i) in arg.iter().enumerate() {
                        g[[i, j]] = dd[j];
                    }
                    g
                }
                Aggregation::Vlad(vc) => {
                    let params = self.vlad.as_mut().expect("VLAD params for VLAD kind");
                    vlad_backward_rows(xs.view(), params, vc, cache.descriptors.row(b), dd)
                }
            };
            let mut dx = Array2::zeros((w, d));
            for (sorted_row, &orig) in order.iter().enumerate() {
                dx.row_mut(orig).assign(&d_sorted.row(sorted_row));
            }
            grads.push(dx);
        }
        grads
    }

    pub fn params_mut(&mut self, prefix: &str) -> ParamsMut<'_, F> {
        let mut out = Vec::new();
        if let Some(v) = self.vlad.as_mut() {
            out.extend(v.params_mut(&format!("{prefix}.vlad")));
        }
        out.extend(self.projection.params_mut(&format!("{prefix}.projection")));
        if let Some(g) = self.gating.as_mut() {
            out.extend(g.params_mut(&format!("{prefix}.gating")));
        }
        out
    }

    pub fn cast<G: Real>(&self) -> PoolingBlock<G> {
        PoolingBlock {
            spec: self.spec.clone(),
            vlad: self.vlad.as_ref().map(VladParams::cast),
            projection: self.projection.cast(),
            gating: self.gating.as_ref().map(ContextGating::cast),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{gradcheck, Differentiable};
    use ndarray::{array, Array, Dimension};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_close<D: Dimension>(a: Array<f64, D>, b: Array<f64, D>, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        let worst = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst <= tol, "{a} vs {b}");
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn mean_and_max_small_example() {
        let x = array![[1.0, 3.0], [3.0, 5.0]];
        assert_eq!(mean_pool(x.view()).unwrap(), array![2.0, 4.0]);
        assert_eq!(max_pool(x.view()).unwrap(), array![3.0, 5.0]);
    }

    #[test]
    fn single_frame_pools_to_itself() {
        let x = array![[0.25f64, -1.5, 7.0]];
        assert_eq!(mean_pool(x.view()).unwrap(), x.row(0));
        assert_eq!(max_pool(x.view()).unwrap(), x.row(0));
    }

    #[test]
    fn empty_chunk_rejected() {
        let x = Array2::<f64>::zeros((0, 3));
        assert!(mean_pool(x.view()).is_err());
        assert!(max_pool(x.view()).is_err());
    }

    #[test]
    fn single_cluster_assigns_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = VladParams::<f64>::init(PoolingKind::NetVlad, 4, 1, &mut rng);
        let x = random(6, 4, &mut rng);
        let (_, cache) = vlad_aggregate(x.view(), &params).unwrap();
        assert!(cache.assign.iter().all(|&a| a == 1.0));
    }

    #[test]
    fn netrvlad_hand_example() {
        let params = VladParams::<f64> {
            assign_weights: Param::zeros(2, 1),
            assign_bias: Param::zeros(1, 1),
            centers: None,
        };
        let x = array![[1.0, 0.0], [0.0, 1.0]];
        let (desc, _) = vlad_aggregate(x.view(), &params).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_close(desc, array![h, h], 1e-15);
    }

    #[test]
    fn zero_residual_left_unscaled() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = VladParams::<f64>::init(PoolingKind::NetRVlad, 3, 2, &mut rng);
        let (desc, cache) = vlad_aggregate(Array2::zeros((4, 3)).view(), &params).unwrap();
        assert!(desc.iter().all(|&v| v == 0.0));
        assert!(cache.global_norm < NORM_EPS);
    }

    #[test]
    fn zero_clusters_rejected() {
        let spec = PoolingSpec::new(PoolingKind::NetVlad, 4, 0);
        assert!(spec.validate().is_err());
        let params = VladParams::<f64> {
            assign_weights: Param::zeros(4, 0),
            assign_bias: Param::zeros(1, 0),
            centers: None,
        };
        assert!(vlad_aggregate(Array2::zeros((2, 4)).view(), &params).is_err());
    }

    #[test]
    fn gating_limits() {
        let y = array![[0.3, -2.0, 5.0]];
        let g = ContextGating::new(Array2::<f64>::zeros((3, 3)), Array2::zeros((1, 3))).unwrap();
        assert_close(g.forward(y.view()).unwrap().0, &y * 0.5, 1e-15);
        let g = ContextGating::new(Array2::<f64>::zeros((3, 3)), Array2::from_elem((1, 3), 50.0)).unwrap();
        assert_close(g.forward(y.view()).unwrap().0, y, 1e-6);
        assert!(ContextGating::new(Array2::<f64>::zeros((3, 2)), Array2::zeros((1, 3))).is_err());
    }

    struct BlockCase {
        block: PoolingBlock<f64>,
        inputs: Vec<Param<f64>>,
        probe: Array2<f64>,
    }

    impl Differentiable for BlockCase {
        fn objective(&mut self, with_grad: bool) -> f64 {
            let views: Vec<_> = self.inputs.iter().map(|p| p.value.view()).collect();
            let (out, cache) = self.block.forward(&views).unwrap();
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
                p.push((format!("x{i}"), x));
            }
            p
        }
    }

    fn block_case(kind: PoolingKind, gating: bool, seed: u64) -> BlockCase {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = PoolingSpec::new(kind, 4, 3).with_out_dim(5).with_gating(gating);
        let mut block = PoolingBlock::init(&spec, &mut rng).unwrap();
        if let Some(v) = block.vlad.as_mut() {
            v.assign_bias.value = random(1, 3, &mut rng);
        }
        BlockCase {
            block,
            inputs: (0..2).map(|_| Param::new(random(5, 4, &mut rng))).collect(),
            probe: random(2, 5, &mut rng),
        }
    }

    #[test]
    fn every_pooling_kind_passes_gradcheck() {
        for kind in [
            PoolingKind::Mean,
            PoolingKind::Max,
            PoolingKind::NetVlad,
            PoolingKind::NetRVlad,
        ] {
            for gating in [false, true] {
                let mut case = block_case(kind, gating, 40);
                let r = gradcheck(&mut case, 1e-3, 1e-4);
                assert!(r.passed, "{kind:?} gating={gating}: {r:?}");
            }
        }
    }

    #[test]
    fn netvlad_with_zero_centers_equals_netrvlad() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut vlad = VladParams::<f64>::init(PoolingKind::NetVlad, 5, 3, &mut rng);
        vlad.centers.as_mut().unwrap().value.fill(0.0);
        let rvlad = VladParams {
            centers: None,
            ..vlad.clone()
        };
        let x = random(7, 5, &mut rng);
        let (a, _) = vlad_aggregate(x.view(), &vlad).unwrap();
        let (b, _) = vlad_aggregate(x.view(), &rvlad).unwrap();
        assert_eq!(a, b);
    }
}
