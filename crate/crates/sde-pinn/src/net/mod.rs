//! Dense feedforward networks with tanh hidden layers, input-derivative jets
//! up to total order 3, and reverse-mode parameter gradients of losses built
//! from jets.

mod jet;
mod taylor;

pub use jet::{
    jet_batch_backward, jet_batch_forward, jet_eval, loss_gradient, request_for, Jet, JetAdjoint,
    JetLoss, JetReq, JetTape,
};
pub use taylor::{layout, CoeffLayout};

use ndarray::{ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unsupported derivative request: {0}")]
    UnsupportedDerivative(String),
    #[error("non-finite loss{}", .at_point.as_ref().map(|p| format!(" at point {p:?}")).unwrap_or_default())]
    NonFiniteLoss { at_point: Option<Vec<f64>> },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
}

/// Layer widths of a feedforward network. Hidden layers apply the activation;
/// the output layer is affine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Result<Self, NetError> {
        let arch = MlpArchitecture { input_dim, hidden, output_dim, activation: Activation::Tanh };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.input_dim < 1 {
            return Err(NetError::InvalidArchitecture("input_dim must be at least 1".into()));
        }
        if !(self.output_dim == 1 || self.output_dim == 2) {
            return Err(NetError::InvalidArchitecture("output_dim must be 1 or 2".into()));
        }
        if self.hidden.iter().any(|&w| w < 1) {
            return Err(NetError::InvalidArchitecture("hidden widths must be at least 1".into()));
        }
        Ok(())
    }

    /// Widths from input to output: `[input, hidden..., output]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.output_dim);
        dims
    }

    pub fn n_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn param_count(&self) -> usize {
        let dims = self.layer_dims();
        (1..dims.len()).map(|l| dims[l] * dims[l - 1] + dims[l]).sum()
    }
}

/// Flattened weights and biases, laid out layer by layer as `[W row-major, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    arch: MlpArchitecture,
    flat: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(arch: MlpArchitecture) -> Result<Self, NetError> {
        arch.validate()?;
        let n = arch.param_count();
        Ok(MlpParams { arch, flat: vec![0.0; n] })
    }

    /// Glorot-style scaled uniform weights, zero biases, deterministic per
    /// seed.
    pub fn init(arch: MlpArchitecture, seed: u64) -> Result<Self, NetError> {
        let mut p = MlpParams::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = p.arch.layer_dims();
        let mut off = 0;
        for l in 1..dims.len() {
            let (fan_out, fan_in) = (dims[l], dims[l - 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut p.flat[off..off + fan_out * fan_in] {
                *w = rng.random_range(-limit..limit);
            }
            off += fan_out * fan_in + fan_out;
        }
        Ok(p)
    }

    pub fn from_flat(arch: MlpArchitecture, flat: Vec<f64>) -> Result<Self, NetError> {
        arch.validate()?;
        if flat.len() != arch.param_count() {
            return Err(NetError::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                arch.param_count(),
                flat.len()
            )));
        }
        Ok(MlpParams { arch, flat })
    }

    pub fn arch(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn all_finite(&self) -> bool {
        self.flat.iter().all(|v| v.is_finite())
    }

    /// `(weight_offset, bias_offset)` of layer `l` (0-based) into the flat
    /// vector.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let dims = self.arch.layer_dims();
        let mut off = 0;
        for k in 1..=l {
            off += dims[k] * dims[k - 1] + dims[k];
        }
        (off, off + dims[l + 1] * dims[l])
    }

    pub fn weight(&self, l: usize) -> ArrayView2<'_, f64> {
        let dims = self.arch.layer_dims();
        let (w_off, b_off) = self.layer_offsets(l);
        ArrayView2::from_shape((dims[l + 1], dims[l]), &self.flat[w_off..b_off]).unwrap()
    }

    pub fn bias(&self, l: usize) -> ArrayView1<'_, f64> {
        let dims = self.arch.layer_dims();
        let (_, b_off) = self.layer_offsets(l);
        ArrayView1::from_shape(dims[l + 1], &self.flat[b_off..b_off + dims[l + 1]]).unwrap()
    }

    pub fn save_json(&self, path: &Path) -> Result<(), NetError> {
        let file = CheckpointFile::from_params(self);
        let text = serde_json::to_string_pretty(&file)
            .map_err(|e| NetError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| NetError::Checkpoint(e.to_string()))
    }

    pub fn load_json(path: &Path) -> Result<Self, NetError> {
        let text = std::fs::read_to_string(path).map_err(|e| NetError::Checkpoint(e.to_string()))?;
        let file: CheckpointFile =
            serde_json::from_str(&text).map_err(|e| NetError::Checkpoint(e.to_string()))?;
        file.into_params()
    }
}

/// Versioned JSON checkpoint. serde_json prints f64 with round-trip
/// precision, so save/load is exact in 64-bit.
#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    arch: MlpArchitecture,
    layers: Vec<CheckpointLayer>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointLayer {
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl CheckpointFile {
    fn from_params(p: &MlpParams) -> Self {
        let dims = p.arch.layer_dims();
        let layers = (0..p.arch.n_layers())
            .map(|l| {
                let (w_off, b_off) = p.layer_offsets(l);
                CheckpointLayer {
                    weights: p.flat[w_off..b_off].to_vec(),
                    biases: p.flat[b_off..b_off + dims[l + 1]].to_vec(),
                }
            })
            .collect();
        CheckpointFile { format: "mlp-checkpoint".into(), version: 1, arch: p.arch.clone(), layers }
    }

    fn into_params(self) -> Result<MlpParams, NetError> {
        if self.format != "mlp-checkpoint" || self.version != 1 {
            return Err(NetError::Checkpoint(format!(
                "unsupported checkpoint format {}/{}",
                self.format, self.version
            )));
        }
        let mut flat = Vec::with_capacity(self.arch.param_count());
        for layer in &self.layers {
            flat.extend_from_slice(&layer.weights);
            flat.extend_from_slice(&layer.biases);
        }
        MlpParams::from_flat(self.arch, flat)
    }
}

/// Plain evaluation: tanh hidden layers, affine output layer.
pub fn forward(params: &MlpParams, input: &[f64]) -> Result<Vec<f64>, NetError> {
    let arch = params.arch();
    if input.len() != arch.input_dim {
        return Err(NetError::ShapeMismatch(format!(
            "input has length {}, expected {}",
            input.len(),
            arch.input_dim
        )));
    }
    let n_layers = arch.n_layers();
    let mut act = input.to_vec();
    for l in 0..n_layers {
        let w = params.weight(l);
        let b = params.bias(l);
        let mut next = vec![0.0; w.nrows()];
        for (i, row) in w.outer_iter().enumerate() {
            let mut z = b[i];
            for (wij, aj) in row.iter().zip(&act) {
                z += wij * aj;
            }
            next[i] = if l + 1 == n_layers { z } else { z.tanh() };
        }
        act = next;
    }
    Ok(act)
}

/// A derivative multi-index over the network inputs (spatial/frequency
/// coordinates plus time).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MultiIndex(pub Vec<u8>);

impl MultiIndex {
    pub fn zero(n: usize) -> Self {
        MultiIndex(vec![0; n])
    }

    pub fn unit(n: usize, coord: usize, order: u8) -> Self {
        let mut v = vec![0; n];
        v[coord] = order;
        MultiIndex(v)
    }

    pub fn order(&self) -> u8 {
        self.0.iter().sum()
    }

    /// Coordinates with non-zero order.
    pub fn support(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > 0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}
