//! Feed-forward allocation policy: tanh hidden layers, identity output layer,
//! softmax head mapping logits onto the weight simplex.
//!
//! Backpropagation here is written out by hand and checked against central
//! finite differences; [`finite_diff_grad`] is the oracle used by the tests
//! and stays available to callers for their own gradient checks.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analytics::WeightVector;
use crate::mat::Matrix;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("invalid architecture: {0}")]
    BadArchitecture(String),
    #[error("input length {got} does not match first layer size {expected}")]
    InputMismatch { expected: usize, got: usize },
    #[error("gradient length {got} does not match output size {expected}")]
    GradMismatch { expected: usize, got: usize },
    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),
    #[error("cache is missing softmax output; use the cache produced by `forward`")]
    CacheWithoutSoftmax,
    #[error("finite-difference step must be positive, got {0}")]
    BadStep(f64),
    #[error("checkpoint io at {path}: {source}")]
    CheckpointIo {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("checkpoint format at {path}: {source}")]
    CheckpointFormat {
        path: std::path::PathBuf,
        source: serde_json::Error,
    },
    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),
    #[error("checkpoint holds {got} parameters but layer sizes need {expected}")]
    CheckpointSize { expected: usize, got: usize },
}

/// One affine layer: `weights` is `[out x in]` row-major, one bias per output.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

/// Parameters of the whole network. Doubles as the container for
/// parameter-shaped gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

impl MlpParams {
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// `[input, hidden..., output]` sizes.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].weights.cols()];
        sizes.extend(self.layers.iter().map(|l| l.weights.rows()));
        sizes
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().unwrap().weights.rows()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.rows() * l.weights.cols() + l.biases.len()).sum()
    }

    pub fn zeros_like(&self) -> MlpParams {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    /// All parameters in a fixed order: per layer, weights row-major, then
    /// biases. The order is part of the checkpoint format.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn from_flat(layer_sizes: &[usize], flat: &[f64]) -> Result<MlpParams, NetError> {
        check_sizes(layer_sizes)?;
        let expected: usize = layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        if flat.len() != expected {
            return Err(NetError::CheckpointSize { expected, got: flat.len() });
        }
        let mut layers = Vec::new();
        let mut off = 0;
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let wlen = fan_in * fan_out;
            let weights = Matrix::from_vec(fan_out, fan_in, flat[off..off + wlen].to_vec());
            off += wlen;
            let biases = flat[off..off + fan_out].to_vec();
            off += fan_out;
            layers.push(Layer { weights, biases });
        }
        Ok(MlpParams { layers })
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.as_slice().iter().chain(l.biases.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.as_mut_slice().iter_mut().chain(l.biases.iter_mut()))
    }

    /// `self += c * other`, elementwise over identically shaped parameters.
    pub fn scaled_add(&mut self, other: &MlpParams, c: f64) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += c * b;
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

fn check_sizes(layer_sizes: &[usize]) -> Result<(), NetError> {
    if layer_sizes.len() < 2 {
        return Err(NetError::BadArchitecture(format!(
            "need at least input and output sizes, got {:?}",
            layer_sizes
        )));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(NetError::BadArchitecture(format!("zero-width layer in {:?}", layer_sizes)));
    }
    Ok(())
}

/// Default hidden architecture: two tanh layers of 64 units.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

/// Glorot-uniform initialization: weights uniform in
/// `[-sqrt(6 / (fan_in + fan_out)), +sqrt(...)]`, biases zero. Deterministic
/// per seed.
pub fn init_params(layer_sizes: &[usize], seed: u64) -> Result<MlpParams, NetError> {
    check_sizes(layer_sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    for w in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut weights = Matrix::zeros(fan_out, fan_in);
        for v in weights.as_mut_slice() {
            *v = rng.random_range(-limit..limit);
        }
        layers.push(Layer { weights, biases: vec![0.0; fan_out] });
    }
    Ok(MlpParams { layers })
}

/// Intermediate values needed by the backward pass: the input to every layer
/// (post-activation), the raw output logits, and the softmax output when the
/// head was applied.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub layer_inputs: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub softmax: Option<Vec<f64>>,
}

fn affine(layer: &Layer, x: &[f64]) -> Vec<f64> {
    let mut out = layer.biases.clone();
    for (o, acc) in out.iter_mut().enumerate() {
        let row = layer.weights.row(o);
        let mut s = 0.0;
        for (wi, xi) in row.iter().zip(x) {
            s += wi * xi;
        }
        *acc += s;
    }
    out
}

/// Runs the network without the softmax head: tanh on every hidden layer,
/// identity on the last. Returns raw logits plus the backward-pass cache.
pub fn forward_raw(params: &MlpParams, x: &[f64]) -> Result<(Vec<f64>, ForwardCache), NetError> {
    if x.len() != params.input_size() {
        return Err(NetError::InputMismatch { expected: params.input_size(), got: x.len() });
    }
    let n_layers = params.layers.len();
    let mut layer_inputs = Vec::with_capacity(n_layers);
    let mut a = x.to_vec();
    for (li, layer) in params.layers.iter().enumerate() {
        layer_inputs.push(a.clone());
        let mut z = affine(layer, &a);
        if li + 1 < n_layers {
            for v in &mut z {
                *v = v.tanh();
            }
        }
        a = z;
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(NetError::NonFinite("network output"));
    }
    Ok((a.clone(), ForwardCache { layer_inputs, logits: a, softmax: None }))
}

/// Numerically stable softmax: subtracts the max logit before exponentiating.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Full policy forward pass: [`forward_raw`] followed by [`softmax`]. The
/// output always lies on the weight simplex.
pub fn forward(params: &MlpParams, x: &[f64]) -> Result<(WeightVector, ForwardCache), NetError> {
    let (logits, mut cache) = forward_raw(params, x)?;
    let s = softmax(&logits);
    cache.softmax = Some(s.clone());
    let w = WeightVector::new(s).map_err(|_| NetError::NonFinite("softmax output"))?;
    Ok((w, cache))
}

fn backprop_through_layers(
    params: &MlpParams,
    cache: &ForwardCache,
    mut delta: Vec<f64>,
) -> MlpParams {
    let mut grads = params.zeros_like();
    for li in (0..params.layers.len()).rev() {
        let a_in = &cache.layer_inputs[li];
        {
            let g = &mut grads.layers[li];
            for (o, &d) in delta.iter().enumerate() {
                g.biases[o] = d;
                let row = g.weights.row_mut(o);
                for (i, &ai) in a_in.iter().enumerate() {
                    row[i] = d * ai;
                }
            }
        }
        if li > 0 {
            let w = &params.layers[li].weights;
            let mut grad_a = vec![0.0; a_in.len()];
            for (o, &d) in delta.iter().enumerate() {
                let row = w.row(o);
                for (i, g) in grad_a.iter_mut().enumerate() {
                    *g += row[i] * d;
                }
            }
            // a_in is the tanh output of the previous layer: d tanh = 1 - a^2.
            delta = grad_a
                .into_iter()
                .zip(a_in)
                .map(|(g, &a)| g * (1.0 - a * a))
                .collect();
        }
    }
    grads
}

/// Backpropagates a gradient given with respect to the raw logits (no softmax
/// head in the chain). Used by value heads and by policies whose distribution
/// layer differentiates its own mapping from logits.
pub fn backward_raw(
    params: &MlpParams,
    cache: &ForwardCache,
    grad_logits: &[f64],
) -> Result<MlpParams, NetError> {
    if grad_logits.len() != params.output_size() {
        return Err(NetError::GradMismatch {
            expected: params.output_size(),
            got: grad_logits.len(),
        });
    }
    Ok(backprop_through_layers(params, cache, grad_logits.to_vec()))
}

/// Backpropagates a gradient given with respect to the softmax output.
/// Applies the softmax Jacobian `J_ij = s_i (delta_ij - s_j)` first:
/// `grad_z_j = s_j (g_j - g . s)`, which sends any constant gradient to zero.
pub fn backward(
    params: &MlpParams,
    cache: &ForwardCache,
    grad_weights: &[f64],
) -> Result<MlpParams, NetError> {
    let s = cache.softmax.as_ref().ok_or(NetError::CacheWithoutSoftmax)?;
    if grad_weights.len() != s.len() {
        return Err(NetError::GradMismatch { expected: s.len(), got: grad_weights.len() });
    }
    let dot: f64 = grad_weights.iter().zip(s).map(|(g, si)| g * si).sum();
    let grad_logits: Vec<f64> = grad_weights.iter().zip(s).map(|(g, si)| si * (g - dot)).collect();
    Ok(backprop_through_layers(params, cache, grad_logits))
}

/// Central finite differences of an arbitrary scalar loss over the
/// parameters: `(loss(theta + h e_i) - loss(theta - h e_i)) / 2h`. The
/// independent oracle for every analytic gradient in this crate.
pub fn finite_diff_grad<F>(params: &MlpParams, loss: F, h: f64) -> Result<MlpParams, NetError>
where
    F: Fn(&MlpParams) -> f64,
{
    if !(h.is_finite() && h > 0.0) {
        return Err(NetError::BadStep(h));
    }
    let mut grads = params.zeros_like();
    let mut probe = params.clone();
    let n = params.n_params();
    for i in 0..n {
        let theta = *probe.iter().nth(i).unwrap();
        set_nth(&mut probe, i, theta + h);
        let up = loss(&probe);
        set_nth(&mut probe, i, theta - h);
        let down = loss(&probe);
        set_nth(&mut probe, i, theta);
        if !up.is_finite() || !down.is_finite() {
            return Err(NetError::NonFinite("loss at perturbed parameters"));
        }
        set_nth(&mut grads, i, (up - down) / (2.0 * h));
    }
    Ok(grads)
}

fn set_nth(params: &mut MlpParams, i: usize, v: f64) {
    *params.iter_mut().nth(i).expect("flat index in range") = v;
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    layer_sizes: Vec<usize>,
    seed: Option<u64>,
    params: Vec<f64>,
}

/// Writes parameters as versioned JSON: layer sizes, the seed they were
/// trained from (if any), and the flat parameter array. JSON floats use the
/// shortest round-trip encoding, so `save` then [`load_checkpoint`] restores
/// bit-identical parameters.
pub fn save_checkpoint(params: &MlpParams, seed: Option<u64>, path: &Path) -> Result<(), NetError> {
    if !params.is_finite() {
        return Err(NetError::NonFinite("parameters"));
    }
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        layer_sizes: params.layer_sizes(),
        seed,
        params: params.flat(),
    };
    let body = serde_json::to_string(&file)
        .map_err(|source| NetError::CheckpointFormat { path: path.to_path_buf(), source })?;
    std::fs::write(path, body)
        .map_err(|source| NetError::CheckpointIo { path: path.to_path_buf(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<(MlpParams, Option<u64>), NetError> {
    let body = std::fs::read_to_string(path)
        .map_err(|source| NetError::CheckpointIo { path: path.to_path_buf(), source })?;
    let file: CheckpointFile = serde_json::from_str(&body)
        .map_err(|source| NetError::CheckpointFormat { path: path.to_path_buf(), source })?;
    if file.version != CHECKPOINT_VERSION {
        return Err(NetError::CheckpointVersion(file.version));
    }
    let params = MlpParams::from_flat(&file.layer_sizes, &file.params)?;
    Ok((params, file.seed))
}
