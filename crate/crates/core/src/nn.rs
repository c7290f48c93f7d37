//! Small dense networks with hand-written reverse mode.
//!
//! Encoders are a single dense layer with `tanh`; decoders stack dense
//! layers with ReLU and finish with softmax. Everything is `f64` so
//! gradients can be checked against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
    Softmax,
}

impl Activation {
    fn apply(self, z: &mut [f64]) {
        match self {
            Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Identity => {}
            Activation::Softmax => {
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in z.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                z.iter_mut().for_each(|v| *v /= sum);
            }
        }
    }

    /// Gradient w.r.t. the pre-activation, given the activation output and
    /// the gradient w.r.t. that output.
    fn backward(self, out: &[f64], upstream: &[f64]) -> Vec<f64> {
        match self {
            Activation::Tanh => out
                .iter()
                .zip(upstream)
                .map(|(o, u)| u * (1.0 - o * o))
                .collect(),
            Activation::Relu => out
                .iter()
                .zip(upstream)
                .map(|(&o, &u)| if o > 0.0 { u } else { 0.0 })
                .collect(),
            Activation::Identity => upstream.to_vec(),
            Activation::Softmax => {
                let dot: f64 = out.iter().zip(upstream).map(|(o, u)| o * u).sum();
                out.iter()
                    .zip(upstream)
                    .map(|(o, u)| o * (u - dot))
                    .collect()
            }
        }
    }
}

/// One affine layer followed by an activation. Weights are row-major,
/// `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (r, zr) in z.iter_mut().enumerate() {
            let row = &self.weights[r * self.inputs..(r + 1) * self.inputs];
            *zr += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        z
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Layer>,
    // bumped on every parameter update so stale caches can be detected
    version: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Per-layer values recorded by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    /// Input of each layer; `inputs[0]` is the network input.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pub pre_activations: Vec<Vec<f64>>,
    /// Activation output of each layer.
    pub outputs: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("network has at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradient with the same shape as the parameters of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights
                .iter_mut()
                .zip(&b.weights)
                .for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|x| *x *= c);
            l.bias.iter_mut().for_each(|x| *x *= c);
        }
    }

    /// Same ordering as [`Mlp::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn same_shape(&self, net: &Mlp) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len())
    }
}

/// Output of [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Backward {
    pub grads: Gradients,
    /// Gradient w.r.t. the network input.
    pub input_grad: Vec<f64>,
}

fn validate_architecture(dims: &[usize], activations: &[Activation]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::ShapeMismatch(
            "a network needs at least input and output dimensions".into(),
        ));
    }
    if dims.contains(&0) {
        return Err(Error::ShapeMismatch(
            "layer dimensions must be positive".into(),
        ));
    }
    if activations.len() != dims.len() - 1 {
        return Err(Error::ShapeMismatch(format!(
            "{} activations for {} layers",
            activations.len(),
            dims.len() - 1
        )));
    }
    if let Some(i) = activations[..activations.len() - 1]
        .iter()
        .position(|&a| a == Activation::Softmax)
    {
        return Err(Error::ShapeMismatch(format!(
            "softmax is only allowed on the final layer (found on layer {i})"
        )));
    }
    Ok(())
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        validate_architecture(dims, activations)?;
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (inputs, outputs) = (w[0], w[1]);
                let limit = (6.0 / (inputs + outputs) as f64).sqrt();
                Layer {
                    inputs,
                    outputs,
                    weights: (0..inputs * outputs)
                        .map(|_| rng.random_range(-limit..=limit))
                        .collect(),
                    bias: vec![0.0; outputs],
                    activation,
                }
            })
            .collect();
        Ok(Self { layers, version: 0 })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ShapeMismatch("network has no layers".into()));
        }
        let mut dims = vec![layers[0].inputs];
        for (k, l) in layers.iter().enumerate() {
            if l.inputs != *dims.last().unwrap() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {k} expects {} inputs but previous layer gives {}",
                    l.inputs,
                    dims.last().unwrap()
                )));
            }
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::ShapeMismatch(format!(
                    "layer {k}: weight/bias sizes do not match {}x{}",
                    l.outputs, l.inputs
                )));
            }
            ensure_finite(&l.weights, "weights")?;
            ensure_finite(&l.bias, "biases")?;
            dims.push(l.outputs);
        }
        let acts: Vec<Activation> = layers.iter().map(|l| l.activation).collect();
        validate_architecture(&dims, &acts)?;
        Ok(Self { layers, version: 0 })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs)
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardCache> {
        if input.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input length {} != network input {}",
                input.len(),
                self.input_dim()
            )));
        }
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut outputs = Vec::with_capacity(n);
        let mut x = input.to_vec();
        for layer in &self.layers {
            let z = layer.affine(&x);
            let mut a = z.clone();
            layer.activation.apply(&mut a);
            inputs.push(x);
            pre.push(z);
            x = a.clone();
            outputs.push(a);
        }
        Ok(ForwardCache {
            version: self.version,
            inputs,
            pre_activations: pre,
            outputs,
        })
    }

    /// Forward pass without keeping intermediate values.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input length {} != network input {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = layer.affine(&x);
            layer.activation.apply(&mut x);
        }
        Ok(x)
    }

    /// Reverse pass. `upstream` is the gradient of the loss w.r.t. the
    /// network output.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Backward> {
        if cache.version != self.version || cache.outputs.len() != self.layers.len() {
            return Err(Error::StaleCache {
                cached: cache.version,
                current: self.version,
            });
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "upstream length {} != network output {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = upstream.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let dz = layer.activation.backward(&cache.outputs[k], &delta);
            let x = &cache.inputs[k];
            let g = &mut grads.layers[k];
            for (r, &dzr) in dz.iter().enumerate() {
                g.bias[r] = dzr;
                if dzr != 0.0 {
                    let row = &mut g.weights[r * layer.inputs..(r + 1) * layer.inputs];
                    row.iter_mut().zip(x).for_each(|(w, xv)| *w = dzr * xv);
                }
            }
            let mut dx = vec![0.0; layer.inputs];
            for (r, &dzr) in dz.iter().enumerate() {
                if dzr == 0.0 {
                    continue;
                }
                let row = &layer.weights[r * layer.inputs..(r + 1) * layer.inputs];
                dx.iter_mut().zip(row).for_each(|(d, w)| *d += dzr * w);
            }
            delta = dx;
        }
        Ok(Backward {
            grads,
            input_grad: delta,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters supplied, network has {}",
                params.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        self.version += 1;
        Ok(())
    }

    pub fn to_checkpoint(&self, config: Option<serde_json::Value>) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            layer_dims: self.layer_dims(),
            activations: self.activations(),
            weights: self
                .layers
                .iter()
                .map(|l| l.weights.chunks(l.inputs).map(<[f64]>::to_vec).collect())
                .collect(),
            biases: self.layers.iter().map(|l| l.bias.clone()).collect(),
            config,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported checkpoint format_version {}",
                ck.format_version
            )));
        }
        validate_architecture(&ck.layer_dims, &ck.activations)?;
        let n = ck.activations.len();
        if ck.weights.len() != n || ck.biases.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint has {} weight and {} bias tensors for {n} layers",
                ck.weights.len(),
                ck.biases.len()
            )));
        }
        let mut layers = Vec::with_capacity(n);
        for k in 0..n {
            let (inputs, outputs) = (ck.layer_dims[k], ck.layer_dims[k + 1]);
            let rows = &ck.weights[k];
            if rows.len() != outputs || rows.iter().any(|r| r.len() != inputs) {
                return Err(Error::ShapeMismatch(format!(
                    "layer {k}: weights are not {outputs}x{inputs}"
                )));
            }
            layers.push(Layer {
                inputs,
                outputs,
                weights: rows.concat(),
                bias: ck.biases[k].clone(),
                activation: ck.activations[k],
            });
        }
        Self::from_layers(layers)
    }
}

/// On-disk model format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub layer_dims: Vec<usize>,
    pub activations: Vec<Activation>,
    /// `weights[layer][row][col]`, row-major.
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
    /// Resolved configuration the model was produced with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

/// First and second moment estimates for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(net: &Mlp) -> Self {
        let n = net.param_count();
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update with the usual bias correction.
pub fn adam_step(net: &mut Mlp, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    if !grads.same_shape(net) || state.m.len() != net.param_count() {
        return Err(Error::ShapeMismatch(
            "gradient or optimizer state does not match the network".into(),
        ));
    }
    if !grads.is_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            detail: "non-finite gradient".into(),
            dump: None,
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let mut idx = 0;
    for (layer, g) in net.layers.iter_mut().zip(&grads.layers) {
        for (p, &gi) in layer
            .weights
            .iter_mut()
            .zip(&g.weights)
            .chain(layer.bias.iter_mut().zip(&g.bias))
        {
            let m = &mut state.m[idx];
            let v = &mut state.v[idx];
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * gi;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * gi * gi;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            idx += 1;
        }
    }
    net.version += 1;
    Ok(())
}

/// Choose `k` distinct parameter indices out of `n`, deterministically.
pub fn sample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Compare an analytic gradient with central differences of `loss` on the
/// given parameter indices. Returns the largest
/// `|analytic - fd| / max(|analytic|, |fd|, 1e-12)`.
///
/// `loss` must be deterministic (freeze every noise draw).
pub fn grad_check<F>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    h: f64,
    indices: &[usize],
) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if params.len() != analytic.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameters but {} gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for &i in indices {
        if i >= p.len() {
            return Err(Error::InvalidInput(format!(
                "parameter index {i} out of range"
            )));
        }
        let orig = p[i];
        p[i] = orig + h;
        let up = loss(&p);
        p[i] = orig - h;
        let down = loss(&p);
        p[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}
