//! Fully connected ReLU networks with a softmax cross-entropy head.
//!
//! `forward` returns pre-softmax logits; the softmax lives inside
//! [`softmax_cross_entropy`] so it can use the log-sum-exp form.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{argmax, DenseMatrix};
use crate::rng::{Prng, PRNG_ALGORITHM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// Final layer: linear logits, softmax applied by the loss.
    SoftmaxOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn relu(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            activation: Activation::Relu,
        }
    }

    pub fn output(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            activation: Activation::SoftmaxOutput,
        }
    }
}

/// `input → hidden[0] → … → classes`, ReLU on every hidden layer.
pub fn mlp_specs(input: usize, hidden: &[usize], classes: usize) -> Vec<LayerSpec> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(input);
    dims.extend_from_slice(hidden);
    dims.push(classes);
    let last = dims.len() - 2;
    dims.windows(2)
        .enumerate()
        .map(|(i, w)| {
            if i == last {
                LayerSpec::output(w[0], w[1])
            } else {
                LayerSpec::relu(w[0], w[1])
            }
        })
        .collect()
}

pub fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    let bad = |msg: String| Err(Error::Argument(format!("layer specs: {msg}")));
    if specs.is_empty() {
        return bad("no layers".into());
    }
    for (i, s) in specs.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return bad(format!("layer {i} has a zero dimension"));
        }
        let is_last = i + 1 == specs.len();
        if (s.activation == Activation::SoftmaxOutput) != is_last {
            return bad(format!("layer {i}: softmax_output must be exactly the final layer"));
        }
        if let Some(next) = specs.get(i + 1) {
            if next.in_dim != s.out_dim {
                return bad(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    s.out_dim,
                    i + 1,
                    next.in_dim
                ));
            }
        }
    }
    Ok(())
}

/// Weights (`in_dim × out_dim`) and bias (`out_dim`) of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
}

/// A list of per-layer tensors shaped like a model. Used for the model's
/// own parameters as well as gradients, optimizer moments and EWC storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub layers: Vec<LayerParams>,
}

pub type Gradients = ParamSet;

impl ParamSet {
    pub fn zeros_for(specs: &[LayerSpec]) -> Self {
        Self {
            layers: specs
                .iter()
                .map(|s| LayerParams {
                    weights: DenseMatrix::zeros(s.in_dim, s.out_dim),
                    bias: vec![0.0; s.out_dim],
                })
                .collect(),
        }
    }

    pub fn zeros_like(other: &ParamSet) -> Self {
        Self {
            layers: other
                .layers
                .iter()
                .map(|l| LayerParams {
                    weights: DenseMatrix::zeros(l.weights.rows(), l.weights.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weights.shape() == b.weights.shape() && a.bias.len() == b.bias.len()
            })
    }

    pub fn check_congruent(&self, op: &'static str, other: &ParamSet) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(op, "parameter sets have different layouts"))
        }
    }

    pub fn ensure_finite(&self, op: &str) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            l.weights.ensure_finite(op)?;
            if let Some(b) = l.bias.iter().find(|b| !b.is_finite()) {
                return Err(Error::Numeric(format!("{op} (bias of layer {i} is {b})")));
            }
        }
        Ok(())
    }

    /// All scalars in a fixed order: layer by layer, weights then bias.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.data().iter().chain(l.bias.iter()).copied())
    }

    /// Calls `f(value, other_value, is_bias)` for every scalar pair.
    pub fn zip_apply(
        &mut self,
        other: &ParamSet,
        mut f: impl FnMut(&mut f64, f64, bool),
    ) -> Result<()> {
        self.check_congruent("zip_apply", other)?;
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            for (v, &x) in l.weights.data_mut().iter_mut().zip(o.weights.data()) {
                f(v, x, false);
            }
            for (v, &x) in l.bias.iter_mut().zip(&o.bias) {
                f(v, x, true);
            }
        }
        Ok(())
    }

    /// Order-sensitive hash of the exact bit patterns of all scalars.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.values() {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x0000_0100_0000_01b3).rotate_left(17);
        }
        h ^ self.scalar_count() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    specs: Vec<LayerSpec>,
    params: ParamSet,
}

impl Mlp {
    pub fn from_parts(specs: Vec<LayerSpec>, params: ParamSet) -> Result<Self> {
        validate_specs(&specs)?;
        if !ParamSet::zeros_for(&specs).same_shape(&params) {
            return Err(Error::shape(
                "Mlp::from_parts",
                "parameters do not match the layer specs",
            ));
        }
        params.ensure_finite("Mlp::from_parts")?;
        Ok(Self { specs, params })
    }

    pub fn zeros(specs: Vec<LayerSpec>) -> Result<Self> {
        validate_specs(&specs)?;
        let params = ParamSet::zeros_for(&specs);
        Ok(Self { specs, params })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        parameter_count(&self.specs)
    }

    pub fn input_dim(&self) -> usize {
        self.specs[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.specs[self.specs.len() - 1].out_dim
    }

    /// Re-draws the output layer (Xavier) and zeroes its bias.
    pub fn reset_output_layer(&mut self, rng: &mut Prng) {
        let spec = *self.specs.last().expect("validated non-empty");
        let layer = self.params.layers.last_mut().expect("validated non-empty");
        layer.weights = xavier_matrix(spec, rng);
        layer.bias.iter_mut().for_each(|b| *b = 0.0);
    }
}

pub fn parameter_count(specs: &[LayerSpec]) -> usize {
    specs.iter().map(|s| s.in_dim * s.out_dim + s.out_dim).sum()
}

fn xavier_matrix(spec: LayerSpec, rng: &mut Prng) -> DenseMatrix {
    let bound = xavier_bound(spec.in_dim, spec.out_dim);
    let data = (0..spec.in_dim * spec.out_dim)
        .map(|_| -bound + 2.0 * bound * rng.next_f64())
        .collect();
    DenseMatrix::new(spec.in_dim, spec.out_dim, data).expect("finite by construction")
}

/// Half-width `√(6 / (fan_in + fan_out))` of the Xavier-uniform range.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Xavier-uniform weights, zero biases.
pub fn xavier_init(specs: &[LayerSpec], rng: &mut Prng) -> Result<Mlp> {
    validate_specs(specs)?;
    let layers = specs
        .iter()
        .map(|&s| LayerParams {
            weights: xavier_matrix(s, rng),
            bias: vec![0.0; s.out_dim],
        })
        .collect();
    Ok(Mlp {
        specs: specs.to_vec(),
        params: ParamSet { layers },
    })
}

/// Intermediates of one forward pass, tied to the exact parameters used.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    input: DenseMatrix,
    pre: Vec<DenseMatrix>,
    post: Vec<DenseMatrix>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    pub fn pre_activations(&self) -> &[DenseMatrix] {
        &self.pre
    }

    pub fn post_activations(&self) -> &[DenseMatrix] {
        &self.post
    }

    /// Input of layer `k`: the batch for `k == 0`, else the previous layer's output.
    fn layer_input(&self, k: usize) -> &DenseMatrix {
        if k == 0 {
            &self.input
        } else {
            &self.post[k - 1]
        }
    }
}

fn check_input(model: &Mlp, batch: &DenseMatrix) -> Result<()> {
    if batch.cols() != model.input_dim() {
        return Err(Error::shape(
            "forward",
            format!(
                "batch has {} features, model expects {}",
                batch.cols(),
                model.input_dim()
            ),
        ));
    }
    Ok(())
}

fn layer_forward(p: &LayerParams, x: &DenseMatrix) -> Result<DenseMatrix> {
    let mut z = x.matmul(&p.weights)?;
    z.add_row_vector(&p.bias)?;
    Ok(z)
}

fn relu(z: &DenseMatrix) -> DenseMatrix {
    z.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn forward(model: &Mlp, batch: &DenseMatrix) -> Result<(DenseMatrix, ForwardCache)> {
    check_input(model, batch)?;
    let n = model.specs.len();
    let mut pre = Vec::with_capacity(n);
    let mut post: Vec<DenseMatrix> = Vec::with_capacity(n);
    for (k, (spec, p)) in model.specs.iter().zip(&model.params.layers).enumerate() {
        let x = if k == 0 { batch } else { &post[k - 1] };
        let z = layer_forward(p, x)?;
        let a = match spec.activation {
            Activation::Relu => relu(&z),
            Activation::SoftmaxOutput => z.clone(),
        };
        pre.push(z);
        post.push(a);
    }
    let logits = post.last().expect("at least one layer").clone();
    Ok((
        logits,
        ForwardCache {
            fingerprint: model.params.fingerprint(),
            input: batch.clone(),
            pre,
            post,
        },
    ))
}

/// Forward pass that keeps no intermediates.
pub fn logits(model: &Mlp, batch: &DenseMatrix) -> Result<DenseMatrix> {
    check_input(model, batch)?;
    let mut x = layer_forward(&model.params.layers[0], batch)?;
    for (k, (spec, p)) in model.specs.iter().zip(&model.params.layers).enumerate() {
        if k > 0 {
            x = layer_forward(p, &x)?;
        }
        if spec.activation == Activation::Relu {
            x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
    Ok(x)
}

/// Numerically stable softmax of one row.
pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn check_labels(labels: &[usize], rows: usize, num_classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::shape(
            "labels",
            format!("{} labels for {rows} rows", labels.len()),
        ));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Label { label, num_classes });
    }
    Ok(())
}

/// Mean cross-entropy of `softmax(logits)` against `labels`, and its
/// gradient with respect to the logits, `(softmax − onehot) / batch`.
pub fn softmax_cross_entropy(logits: &DenseMatrix, labels: &[usize]) -> Result<(f64, DenseMatrix)> {
    let (rows, classes) = logits.shape();
    check_labels(labels, rows, classes)?;
    let scale = 1.0 / rows as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(rows * classes);
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[label];
        for (c, &v) in row.iter().enumerate() {
            let p = (v - log_z).exp();
            let target = if c == label { 1.0 } else { 0.0 };
            grad.push((p - target) * scale);
        }
    }
    let loss = loss * scale;
    if !loss.is_finite() {
        return Err(Error::Numeric("softmax_cross_entropy loss".into()));
    }
    Ok((loss.max(0.0), DenseMatrix::new(rows, classes, grad)?))
}

/// Gradient of the loss with respect to each layer's pre-activation.
pub(crate) fn backward_deltas(
    model: &Mlp,
    cache: &ForwardCache,
    dlogits: &DenseMatrix,
) -> Result<Vec<DenseMatrix>> {
    if cache.pre.len() != model.specs.len()
        || cache
            .pre
            .iter()
            .zip(&model.specs)
            .any(|(z, s)| z.cols() != s.out_dim || z.rows() != cache.batch_size())
    {
        return Err(Error::Cache("layer layout differs".into()));
    }
    if cache.fingerprint != model.params.fingerprint() {
        return Err(Error::Cache(
            "parameters changed since the forward pass".into(),
        ));
    }
    if dlogits.shape() != (cache.batch_size(), model.output_dim()) {
        return Err(Error::shape(
            "backward",
            format!(
                "dlogits {:?}, expected {:?}",
                dlogits.shape(),
                (cache.batch_size(), model.output_dim())
            ),
        ));
    }
    let n = model.specs.len();
    let mut deltas: Vec<DenseMatrix> = Vec::with_capacity(n);
    deltas.push(dlogits.clone());
    for k in (1..n).rev() {
        let upstream = deltas.last().expect("pushed above");
        let mut d = upstream.matmul_t(&model.params.layers[k].weights)?;
        if model.specs[k - 1].activation == Activation::Relu {
            for (dv, &z) in d.data_mut().iter_mut().zip(cache.pre[k - 1].data()) {
                if z <= 0.0 {
                    *dv = 0.0;
                }
            }
        }
        deltas.push(d);
    }
    deltas.reverse();
    Ok(deltas)
}

/// Exact reverse-mode gradients of the loss whose logit-gradient is `dlogits`.
pub fn backward(model: &Mlp, cache: &ForwardCache, dlogits: &DenseMatrix) -> Result<Gradients> {
    let deltas = backward_deltas(model, cache, dlogits)?;
    let layers = deltas
        .iter()
        .enumerate()
        .map(|(k, d)| {
            Ok(LayerParams {
                weights: cache.layer_input(k).t_matmul(d)?,
                bias: d.column_sums(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let grads = ParamSet { layers };
    grads.ensure_finite("backward")?;
    Ok(grads)
}

/// Squared per-example gradients, each example weighted, summed over the batch.
///
/// `Σ_i weight_i · (∂ℓ_i/∂θ)²` where `ℓ_i` is the loss whose per-example
/// logit gradient is row `i` of `dlogits_per_example` (not divided by the
/// batch size).
pub(crate) fn weighted_squared_example_grads(
    model: &Mlp,
    cache: &ForwardCache,
    dlogits_per_example: &DenseMatrix,
    weights: &[f64],
) -> Result<ParamSet> {
    let deltas = backward_deltas(model, cache, dlogits_per_example)?;
    let layers = deltas
        .iter()
        .enumerate()
        .map(|(k, d)| {
            let a_sq = cache.layer_input(k).map(|v| v * v);
            let mut d_sq = d.map(|v| v * v);
            for (r, &w) in weights.iter().enumerate() {
                d_sq.row_mut(r).iter_mut().for_each(|v| *v *= w);
            }
            Ok(LayerParams {
                weights: a_sq.t_matmul(&d_sq)?,
                bias: d_sq.column_sums(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParamSet { layers })
}

/// Rows in `batch` whose argmax logit equals the label.
pub fn count_correct(model: &Mlp, batch: &DenseMatrix, labels: &[usize]) -> Result<usize> {
    let out = logits(model, batch)?;
    check_labels(labels, out.rows(), usize::MAX)?;
    Ok(labels
        .iter()
        .enumerate()
        .filter(|&(r, &l)| argmax(out.row(r)) == l)
        .count())
}

/// Fraction of rows classified correctly.
pub fn evaluate_accuracy(model: &Mlp, inputs: &DenseMatrix, labels: &[usize]) -> Result<f64> {
    if labels.len() != inputs.rows() {
        return Err(Error::shape(
            "evaluate_accuracy",
            format!("{} labels for {} rows", labels.len(), inputs.rows()),
        ));
    }
    Ok(count_correct(model, inputs, labels)? as f64 / labels.len() as f64)
}

const CHECKPOINT_FORMAT: &str = "weight-friction-mlp";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    prng_algorithm: String,
    seed: u64,
    specs: Vec<LayerSpec>,
    params: ParamSet,
}

/// Writes the model as JSON. Floats are written in shortest round-trip form,
/// so a reloaded model evaluates bit-identically.
pub fn save_checkpoint(model: &Mlp, seed: u64, path: &Path) -> Result<()> {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        prng_algorithm: PRNG_ALGORITHM.into(),
        seed,
        specs: model.specs.clone(),
        params: model.params.clone(),
    };
    let text = serde_json::to_string(&ck)?;
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Loads a checkpoint, returning the model and the seed it was trained with.
pub fn load_checkpoint(path: &Path) -> Result<(Mlp, u64)> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let ck: Checkpoint = serde_json::from_str(&text)?;
    if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported checkpoint {} v{}",
            path.display(),
            ck.format,
            ck.version
        )));
    }
    if ck.prng_algorithm != PRNG_ALGORITHM {
        return Err(Error::Data(format!(
            "{}: checkpoint was produced with PRNG `{}`",
            path.display(),
            ck.prng_algorithm
        )));
    }
    Ok((Mlp::from_parts(ck.specs, ck.params)?, ck.seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_batch(rows: usize, cols: usize, rng: &mut Prng) -> DenseMatrix {
        let data = (0..rows * cols).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
        DenseMatrix::new(rows, cols, data).unwrap()
    }

    /// Straight scalar loops, independent of the matrix kernels.
    fn scalar_forward(model: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for (spec, p) in model.specs().iter().zip(&model.params().layers) {
            let mut z = vec![0.0; spec.out_dim];
            for (j, zj) in z.iter_mut().enumerate() {
                let mut s = p.bias[j];
                for (i, ai) in a.iter().enumerate() {
                    s += ai * p.weights.get(i, j);
                }
                *zj = s;
            }
            if spec.activation == Activation::Relu {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            a = z;
        }
        a
    }

    #[test]
    fn xavier_bounds_and_zero_bias() {
        let specs = mlp_specs(784, &[256], 10);
        let m = xavier_init(&specs, &mut Prng::new(1)).unwrap();
        let bound = (6.0f64 / 1040.0).sqrt();
        assert!((bound - 0.0760).abs() < 1e-4);
        let w = &m.params().layers[0].weights;
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        assert!(m.params().layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        let again = xavier_init(&specs, &mut Prng::new(1)).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn spec_validation() {
        assert!(validate_specs(&[LayerSpec::relu(4, 3), LayerSpec::output(2, 2)]).is_err());
        assert!(validate_specs(&[LayerSpec::output(4, 3), LayerSpec::output(3, 2)]).is_err());
        assert!(validate_specs(&[LayerSpec::relu(4, 3)]).is_err());
        assert!(validate_specs(&[]).is_err());
        assert!(xavier_init(&[LayerSpec::relu(4, 3), LayerSpec::output(2, 2)], &mut Prng::new(0))
            .is_err());
        assert_eq!(parameter_count(&mlp_specs(784, &[256, 256, 256], 10)), 335_114);
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let m = Mlp::zeros(mlp_specs(5, &[4], 3)).unwrap();
        let x = random_batch(6, 5, &mut Prng::new(2));
        let (out, _) = forward(&m, &x).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let specs = vec![LayerSpec::output(3, 3)];
        let params = ParamSet {
            layers: vec![LayerParams {
                weights: DenseMatrix::identity(3),
                bias: vec![0.0; 3],
            }],
        };
        let m = Mlp::from_parts(specs, params).unwrap();
        let x = random_batch(4, 3, &mut Prng::new(3));
        assert_eq!(forward(&m, &x).unwrap().0, x);
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        let mut rng = Prng::new(4);
        let m = xavier_init(&mlp_specs(6, &[5], 4), &mut rng).unwrap();
        let x = random_batch(7, 6, &mut rng);
        let (out, _) = forward(&m, &x).unwrap();
        for r in 0..x.rows() {
            let expect = scalar_forward(&m, x.row(r));
            for (a, b) in out.row(r).iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(logits(&m, &x).unwrap(), out);
        assert!(matches!(
            forward(&m, &random_batch(2, 5, &mut rng)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn uniform_logits_loss_is_ln_classes() {
        let z = DenseMatrix::zeros(3, 10);
        let (loss, _) = softmax_cross_entropy(&z, &[0, 4, 9]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!((loss - std::f64::consts::LN_10).abs() < 1e-12);
    }

    #[test]
    fn peaked_logits_loss_near_zero() {
        let mut z = DenseMatrix::zeros(1, 10);
        z.set(0, 3, 100.0);
        let (loss, _) = softmax_cross_entropy(&z, &[3]).unwrap();
        assert!((0.0..1e-40).contains(&loss));
        assert!(matches!(
            softmax_cross_entropy(&z, &[10]),
            Err(Error::Label { label: 10, num_classes: 10 })
        ));
    }

    #[test]
    fn dlogits_matches_finite_differences() {
        let mut rng = Prng::new(5);
        let z = random_batch(4, 6, &mut rng).map(|v| 3.0 * v);
        let labels = [0, 5, 2, 2];
        let (_, grad) = softmax_cross_entropy(&z, &labels).unwrap();
        let h = 1e-5;
        for i in 0..z.data().len() {
            let mut zp = z.clone();
            zp.data_mut()[i] += h;
            let mut zm = z.clone();
            zm.data_mut()[i] -= h;
            let fd = (softmax_cross_entropy(&zp, &labels).unwrap().0
                - softmax_cross_entropy(&zm, &labels).unwrap().0)
                / (2.0 * h);
            let g = grad.data()[i];
            let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-8);
            assert!(rel < 1e-6, "coord {i}: {g} vs {fd}");
        }
    }

    #[test]
    fn softmax_rows_recovered_from_dlogits_sum_to_one() {
        let mut rng = Prng::new(6);
        let z = random_batch(5, 10, &mut rng).map(|v| 20.0 * v);
        let labels = [1, 2, 3, 4, 5];
        let (_, d) = softmax_cross_entropy(&z, &labels).unwrap();
        for (r, &l) in labels.iter().enumerate() {
            let s: f64 = d
                .row(r)
                .iter()
                .enumerate()
                .map(|(c, &v)| v * 5.0 + if c == l { 1.0 } else { 0.0 })
                .sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_dlogits_give_zero_gradients() {
        let mut rng = Prng::new(7);
        let m = xavier_init(&mlp_specs(4, &[3], 2), &mut rng).unwrap();
        let x = random_batch(5, 4, &mut rng);
        let (_, cache) = forward(&m, &x).unwrap();
        let g = backward(&m, &cache, &DenseMatrix::zeros(5, 2)).unwrap();
        assert!(g.values().all(|v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_gradient_by_hand() {
        // scalar output y = w·x + b; dL/dy = c per row gives dL/dw = Σ c·x
        let specs = vec![LayerSpec::output(2, 1)];
        let m = Mlp::from_parts(
            specs,
            ParamSet {
                layers: vec![LayerParams {
                    weights: DenseMatrix::from_rows(&[[0.3], [-0.2]]).unwrap(),
                    bias: vec![0.1],
                }],
            },
        )
        .unwrap();
        let x = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, -1.0]]).unwrap();
        let (_, cache) = forward(&m, &x).unwrap();
        let c = 0.25;
        let d = DenseMatrix::from_rows(&[[c], [c]]).unwrap();
        let g = backward(&m, &cache, &d).unwrap();
        assert_eq!(g.layers[0].weights.data(), &[c * 4.0, c * 1.0]);
        assert_eq!(g.layers[0].bias, vec![2.0 * c]);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = Prng::new(8);
        let mut m = xavier_init(&mlp_specs(4, &[3], 2), &mut rng).unwrap();
        let x = random_batch(5, 4, &mut rng);
        let (out, cache) = forward(&m, &x).unwrap();
        let (_, d) = softmax_cross_entropy(&out, &[0, 1, 0, 1, 0]).unwrap();
        m.params_mut().layers[0].weights.data_mut()[0] += 1e-3;
        assert!(matches!(backward(&m, &cache, &d), Err(Error::Cache(_))));
        let other = xavier_init(&mlp_specs(4, &[5], 2), &mut rng).unwrap();
        assert!(matches!(backward(&other, &cache, &d), Err(Error::Cache(_))));
    }

    #[test]
    fn accuracy_extremes() {
        let mut rng = Prng::new(9);
        let m = xavier_init(&mlp_specs(4, &[8], 3), &mut rng).unwrap();
        let x = random_batch(50, 4, &mut rng);
        let out = logits(&m, &x).unwrap();
        let predicted: Vec<usize> = (0..50).map(|r| argmax(out.row(r))).collect();
        assert_eq!(evaluate_accuracy(&m, &x, &predicted).unwrap(), 1.0);
        let wrong: Vec<usize> = predicted.iter().map(|p| (p + 1) % 3).collect();
        assert_eq!(evaluate_accuracy(&m, &x, &wrong).unwrap(), 0.0);
        assert!(evaluate_accuracy(&m, &x, &predicted[..10]).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = Prng::new(10);
        let m = xavier_init(&mlp_specs(6, &[5, 4], 3), &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&m, 10, &path).unwrap();
        let (back, seed) = load_checkpoint(&path).unwrap();
        assert_eq!(seed, 10);
        assert_eq!(back, m);
        let x = random_batch(9, 6, &mut rng);
        let a = logits(&m, &x).unwrap();
        let b = logits(&back, &x).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
