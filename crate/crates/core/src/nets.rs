//! Feed-forward networks: the generator map (possibly a mixture, possibly
//! clamped into a support box) and the per-constraint discriminators.
//!
//! Networks are plain dense stacks. A network can run in three ways:
//! off-tape (`forward_plain`, for sampling and evaluation), on-tape with
//! trainable weights, or on-tape with frozen weights (the other player's
//! view). The input-gradient subgraph used by the gradient penalty is built
//! here as well, since it needs the layer structure.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Array, AutodiffError, NodeId, Parameter, ParamSlot, Tape};
use crate::rng::Stream;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid network config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Hidden activation. The output layer is always affine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

/// Shape of a dense stack: `depth` weight layers, so `depth - 1` hidden
/// activations.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub depth: usize,
    pub hidden_dim: usize,
    pub activation: Activation,
}

impl MlpConfig {
    pub fn new(
        input_dim: usize,
        output_dim: usize,
        depth: usize,
        hidden_dim: usize,
        activation: Activation,
    ) -> Self {
        MlpConfig { input_dim, output_dim, depth, hidden_dim, activation }
    }

    fn validate(&self) -> Result<(), NetError> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dim == 0 {
            return Err(NetError::BadConfig("dimensions must be positive".into()));
        }
        if self.depth < 2 {
            return Err(NetError::BadConfig(format!("depth {} < 2", self.depth)));
        }
        Ok(())
    }

    /// (fan_out, fan_in) per weight layer.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.depth);
        let mut prev = self.input_dim;
        for _ in 0..self.depth - 1 {
            dims.push((self.hidden_dim, prev));
            prev = self.hidden_dim;
        }
        dims.push((self.output_dim, prev));
        dims
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: Parameter,
    pub bias: Parameter,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub config: MlpConfig,
    pub layers: Vec<DenseLayer>,
}

/// Glorot-normal initialization: weights ~ N(0, 2/(fan_in+fan_out)), biases 0.
pub fn init_mlp(config: &MlpConfig, rng: &mut Stream) -> Result<Mlp, NetError> {
    config.validate()?;
    let layers = config
        .layer_dims()
        .into_iter()
        .map(|(out, inp)| {
            let std = (2.0 / (inp + out) as f64).sqrt();
            let data: Vec<f64> = (0..out * inp).map(|_| std * rng.normal()).collect();
            let weight = Parameter::new(Array::matrix(out, inp, data).expect("sized"));
            let bias = Parameter::new(Array::zeros(vec![out]));
            DenseLayer { weight, bias }
        })
        .collect();
    Ok(Mlp { config: config.clone(), layers })
}

impl Mlp {
    /// Parameters in slot order: weight then bias per layer.
    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn params(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    /// Forward off-tape on a batch `n × input_dim`.
    pub fn forward_plain(&self, x: &Array) -> Array {
        let (n, d) = x.dims2();
        assert_eq!(d, self.config.input_dim, "input dim mismatch");
        let mut cur = x.data().to_vec();
        let mut cur_dim = d;
        for (li, layer) in self.layers.iter().enumerate() {
            let (out, inp) = layer.weight.value.dims2();
            let w = layer.weight.value.data();
            let b = layer.bias.value.data();
            let mut next =
                crate::autodiff::affine_forward(&cur, w, b, n, cur_dim, out);
            if li + 1 < self.layers.len() {
                match self.config.activation {
                    Activation::Relu => next.iter_mut().for_each(|v| {
                        if *v < 0.0 {
                            *v = 0.0
                        }
                    }),
                    Activation::Tanh => next.iter_mut().for_each(|v| *v = v.tanh()),
                }
            }
            cur = next;
            cur_dim = out;
        }
        Array::matrix(n, cur_dim, cur).expect("sized")
    }

    /// Bind the weights onto a tape as trainable parameters.
    pub fn bind(&self, tape: &mut Tape) -> (BoundMlp, Vec<ParamSlot>) {
        let mut slots = Vec::with_capacity(self.layers.len() * 2);
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let (w, ws) = tape.param(l.weight.value.clone());
                let (b, bs) = tape.param(l.bias.value.clone());
                slots.push(ws);
                slots.push(bs);
                BoundLayer { w, b }
            })
            .collect();
        (BoundMlp { config: self.config.clone(), layers }, slots)
    }

    /// Bind the weights onto a tape as constants (the opposing player's view).
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundMlp {
        let layers = self
            .layers
            .iter()
            .map(|l| BoundLayer {
                w: tape.input(l.weight.value.clone()),
                b: tape.input(l.bias.value.clone()),
            })
            .collect();
        BoundMlp { config: self.config.clone(), layers }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLayer {
    pub w: NodeId,
    pub b: NodeId,
}

/// An MLP whose weights live on a tape.
pub struct BoundMlp {
    config: MlpConfig,
    layers: Vec<BoundLayer>,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId, NetError> {
        Ok(self.forward_with_preacts(tape, x)?.0)
    }

    /// Forward pass returning the pre-activation node of every hidden layer,
    /// which the input-gradient subgraph reuses.
    fn forward_with_preacts(
        &self,
        tape: &mut Tape,
        x: NodeId,
    ) -> Result<(NodeId, Vec<NodeId>), NetError> {
        let mut cur = x;
        let mut preacts = Vec::with_capacity(self.layers.len() - 1);
        for (li, layer) in self.layers.iter().enumerate() {
            let z = tape.affine(cur, layer.w, layer.b)?;
            if li + 1 < self.layers.len() {
                preacts.push(z);
                cur = match self.config.activation {
                    Activation::Relu => tape.relu(z),
                    Activation::Tanh => tape.tanh(z),
                };
            } else {
                cur = z;
            }
        }
        Ok((cur, preacts))
    }

    /// Build `∇ₓ h(x)` as a differentiable subgraph via the layerwise chain
    /// rule, for scalar-output stacks. The returned node has shape
    /// `n × input_dim`, and a backward pass through it reaches the weights.
    ///
    /// The ReLU mask is treated as locally constant (its own derivative is
    /// zero), the usual convention for double backprop through kinks.
    pub fn input_gradient(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId, NetError> {
        if self.config.output_dim != 1 {
            return Err(NetError::BadConfig(format!(
                "input gradient needs scalar output, got {}",
                self.config.output_dim
            )));
        }
        let n = tape.value(x).shape()[0];
        let (_, preacts) = self.forward_with_preacts(tape, x)?;
        // Start from dh/da_{L-1} = W_L, broadcast over the batch.
        let last = self.layers[self.layers.len() - 1];
        let mut g = tape.broadcast_row(last.w, n)?;
        // Walk back through the hidden layers.
        for (layer, &z) in self.layers[..self.layers.len() - 1]
            .iter()
            .zip(preacts.iter())
            .rev()
        {
            let dact = match self.config.activation {
                Activation::Relu => tape.relu_step(z),
                Activation::Tanh => {
                    // 1 − tanh(z)², reusing the forward tanh value.
                    let a = tape.tanh(z);
                    let a2 = tape.square(a);
                    let neg = tape.scale(a2, -1.0);
                    tape.add_scalar(neg, 1.0)
                }
            };
            let dz = tape.mul(g, dact)?;
            g = tape.matmul(dz, layer.w)?;
        }
        Ok(g)
    }
}

/// Per-coordinate interval the generator output is clamped into.
pub type SupportBox = Vec<(f64, f64)>;

/// The generator map: one or more MLPs from the latent space, with uniform
/// random routing of each latent sample to a member, then an optional clamp
/// onto the support box.
#[derive(Debug, Clone)]
pub struct GeneratorEnsemble {
    pub members: Vec<Mlp>,
    pub support_box: Option<SupportBox>,
    pub latent_dim: usize,
    pub output_dim: usize,
}

impl GeneratorEnsemble {
    pub fn init(
        members: usize,
        config: &MlpConfig,
        support_box: Option<SupportBox>,
        rng: &mut Stream,
    ) -> Result<Self, NetError> {
        if members == 0 {
            return Err(NetError::BadConfig("ensemble needs at least one member".into()));
        }
        if let Some(b) = &support_box {
            if b.len() != config.output_dim {
                return Err(NetError::BadConfig("support box dimension mismatch".into()));
            }
            if b.iter().any(|(lo, hi)| lo > hi) {
                return Err(NetError::BadConfig("support box has empty interval".into()));
            }
        }
        let members = (0..members)
            .map(|_| init_mlp(config, rng))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GeneratorEnsemble {
            support_box,
            latent_dim: config.input_dim,
            output_dim: config.output_dim,
            members,
        })
    }

    /// Draw the member index for each latent row from the routing stream.
    pub fn route(&self, n: usize, rng: &mut Stream) -> Vec<usize> {
        if self.members.len() == 1 {
            return vec![0; n];
        }
        (0..n).map(|_| rng.index(self.members.len())).collect()
    }

    /// Push a batch of latents through the ensemble off-tape.
    pub fn generate(&self, latents: &Array, rng: &mut Stream) -> Array {
        let routing = self.route(latents.shape()[0], rng);
        self.generate_routed(latents, &routing)
    }

    pub fn generate_routed(&self, latents: &Array, routing: &[usize]) -> Array {
        let (n, _) = latents.dims2();
        let d = self.output_dim;
        let mut out = vec![0.0; n * d];
        for (m, member) in self.members.iter().enumerate() {
            let rows: Vec<usize> = (0..n).filter(|&i| routing[i] == m).collect();
            if rows.is_empty() {
                continue;
            }
            let sub = gather(latents, &rows);
            let y = member.forward_plain(&sub);
            for (k, &r) in rows.iter().enumerate() {
                out[r * d..(r + 1) * d].copy_from_slice(y.row(k));
            }
        }
        if let Some(b) = &self.support_box {
            for row in 0..n {
                for j in 0..d {
                    out[row * d + j] = out[row * d + j].clamp(b[j].0, b[j].1);
                }
            }
        }
        Array::matrix(n, d, out).expect("sized")
    }

    /// Build the ensemble forward on a tape. Returns the generated batch
    /// node (rows in the latent batch's order) and, when trainable, the
    /// parameter slots per member.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        latents: NodeId,
        routing: &[usize],
        trainable: bool,
    ) -> Result<(NodeId, Vec<Vec<ParamSlot>>), NetError> {
        let n = tape.value(latents).shape()[0];
        debug_assert_eq!(routing.len(), n);
        let mut slots = Vec::new();
        let mut parts = Vec::new();
        let mut order = Vec::with_capacity(n);
        for (m, member) in self.members.iter().enumerate() {
            let bound = if trainable {
                let (b, s) = member.bind(tape);
                slots.push(s);
                b
            } else {
                member.bind_frozen(tape)
            };
            let rows: Vec<usize> = (0..n).filter(|&i| routing[i] == m).collect();
            if rows.is_empty() {
                continue;
            }
            order.extend_from_slice(&rows);
            let sub = tape.gather_rows(latents, rows)?;
            parts.push(bound.forward(tape, sub)?);
        }
        let stacked = tape.concat_rows(parts)?;
        // Restore the original row order.
        let mut inverse = vec![0usize; n];
        for (pos, &orig) in order.iter().enumerate() {
            inverse[orig] = pos;
        }
        let mut y = tape.gather_rows(stacked, inverse)?;
        if let Some(b) = &self.support_box {
            let lo = b.iter().map(|p| p.0).collect();
            let hi = b.iter().map(|p| p.1).collect();
            y = tape.clamp_cols(y, lo, hi)?;
        }
        Ok((y, slots))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.members.iter_mut().flat_map(|m| m.params_mut()).collect()
    }

    pub fn params(&self) -> Vec<&Parameter> {
        self.members.iter().flat_map(|m| m.params()).collect()
    }
}

fn gather(a: &Array, rows: &[usize]) -> Array {
    let (_, d) = a.dims2();
    let mut data = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        data.extend_from_slice(a.row(r));
    }
    Array::matrix(rows.len(), d, data).expect("sized")
}

/// One scalar-output network per constraint term.
#[derive(Debug, Clone)]
pub struct DiscriminatorSet {
    pub members: Vec<Mlp>,
}

impl DiscriminatorSet {
    /// `dims[j]` is the input dimension of the j-th discriminator.
    pub fn init(
        dims: &[usize],
        hidden_dim: usize,
        depth: usize,
        rng: &mut Stream,
    ) -> Result<Self, NetError> {
        let members = dims
            .iter()
            .map(|&d| init_mlp(&MlpConfig::new(d, 1, depth, hidden_dim, Activation::Relu), rng))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DiscriminatorSet { members })
    }

    /// Plain forward of the j-th discriminator on a batch, shape `n × 1`.
    pub fn eval(&self, j: usize, z: &Array) -> Array {
        self.members[j].forward_plain(z)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.members.iter_mut().flat_map(|m| m.params_mut()).collect()
    }

    pub fn params(&self) -> Vec<&Parameter> {
        self.members.iter().flat_map(|m| m.params()).collect()
    }
}

// --- checkpoints ------------------------------------------------------------

const CHECKPOINT_FORMAT: &str = "minmax-measure.checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NamedArray {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Versioned checkpoint: a flat list of named arrays with shapes.
#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    format: String,
    version: u32,
    arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn capture(generator: &GeneratorEnsemble, discriminators: &DiscriminatorSet) -> Self {
        let mut arrays = Vec::new();
        let mut push_mlp = |prefix: String, mlp: &Mlp| {
            for (li, layer) in mlp.layers.iter().enumerate() {
                arrays.push(NamedArray {
                    name: format!("{prefix}.layer{li}.weight"),
                    shape: layer.weight.value.shape().to_vec(),
                    data: layer.weight.value.data().to_vec(),
                });
                arrays.push(NamedArray {
                    name: format!("{prefix}.layer{li}.bias"),
                    shape: layer.bias.value.shape().to_vec(),
                    data: layer.bias.value.data().to_vec(),
                });
            }
        };
        for (m, member) in generator.members.iter().enumerate() {
            push_mlp(format!("generator.{m}"), member);
        }
        for (j, member) in discriminators.members.iter().enumerate() {
            push_mlp(format!("discriminator.{j}"), member);
        }
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            arrays,
        }
    }

    /// Restore weights into networks of the same architecture.
    pub fn restore(
        &self,
        generator: &mut GeneratorEnsemble,
        discriminators: &mut DiscriminatorSet,
    ) -> Result<(), NetError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(NetError::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(NetError::Checkpoint(format!(
                "unsupported version {} (expected {})",
                self.version, CHECKPOINT_VERSION
            )));
        }
        let restore_mlp = |prefix: String, mlp: &mut Mlp| -> Result<(), NetError> {
            for (li, layer) in mlp.layers.iter_mut().enumerate() {
                for (kind, param) in
                    [("weight", &mut layer.weight), ("bias", &mut layer.bias)]
                {
                    let name = format!("{prefix}.layer{li}.{kind}");
                    let found = self
                        .arrays
                        .iter()
                        .find(|a| a.name == name)
                        .ok_or_else(|| NetError::Checkpoint(format!("missing array {name}")))?;
                    if found.shape != param.value.shape() {
                        return Err(NetError::Checkpoint(format!(
                            "array {name} has shape {:?}, expected {:?}",
                            found.shape,
                            param.value.shape()
                        )));
                    }
                    param.value.data_mut().copy_from_slice(&found.data);
                }
            }
            Ok(())
        };
        for (m, member) in generator.members.iter_mut().enumerate() {
            restore_mlp(format!("generator.{m}"), member)?;
        }
        for (j, member) in discriminators.members.iter_mut().enumerate() {
            restore_mlp(format!("discriminator.{j}"), member)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, NetError> {
        serde_json::from_str(s).map_err(|e| NetError::Checkpoint(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(seed: u64) -> Stream {
        Stream::derive(seed, "nets-test")
    }

    #[test]
    fn init_shapes_and_zero_biases() {
        let cfg = MlpConfig::new(1, 1, 2, 4, Activation::Relu);
        let mlp = init_mlp(&cfg, &mut stream(0)).unwrap();
        assert_eq!(mlp.layers.len(), 2);
        assert_eq!(mlp.layers[0].weight.value.shape(), &[4, 1]);
        assert_eq!(mlp.layers[1].weight.value.shape(), &[1, 4]);
        assert!(mlp.layers.iter().all(|l| l.bias.value.data().iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn same_seed_same_weights() {
        let cfg = MlpConfig::new(2, 2, 4, 8, Activation::Tanh);
        let a = init_mlp(&cfg, &mut stream(9)).unwrap();
        let b = init_mlp(&cfg, &mut stream(9)).unwrap();
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            assert_eq!(la.weight.value.data(), lb.weight.value.data());
        }
    }

    #[test]
    fn glorot_variance() {
        // fan_in = fan_out = 64 → variance 2/128, checked on 1e5 samples.
        let cfg = MlpConfig::new(64, 64, 25, 64, Activation::Relu);
        let mlp = init_mlp(&cfg, &mut stream(3)).unwrap();
        let mut vals = Vec::new();
        for layer in &mlp.layers {
            let (out, inp) = layer.weight.value.dims2();
            if out == 64 && inp == 64 {
                vals.extend_from_slice(layer.weight.value.data());
            }
            if vals.len() >= 100_000 {
                break;
            }
        }
        assert!(vals.len() >= 98_304, "{}", vals.len());
        let var = vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64;
        let expect = 2.0 / 128.0;
        assert!((var - expect).abs() < 0.05 * expect, "var {var} vs {expect}");
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = MlpConfig::new(2, 1, 1, 4, Activation::Relu);
        assert!(init_mlp(&cfg, &mut stream(0)).is_err());
        let cfg = MlpConfig::new(0, 1, 2, 4, Activation::Relu);
        assert!(init_mlp(&cfg, &mut stream(0)).is_err());
    }

    #[test]
    fn plain_forward_matches_hand_rolled_two_layer() {
        // h(x) = w2·relu(w1 x + b1) + b2 on fixed small weights.
        let cfg = MlpConfig::new(1, 1, 2, 2, Activation::Relu);
        let mut mlp = init_mlp(&cfg, &mut stream(1)).unwrap();
        mlp.layers[0].weight.value.data_mut().copy_from_slice(&[2.0, -1.0]);
        mlp.layers[0].bias.value.data_mut().copy_from_slice(&[0.5, 0.0]);
        mlp.layers[1].weight.value.data_mut().copy_from_slice(&[1.0, 3.0]);
        mlp.layers[1].bias.value.data_mut().copy_from_slice(&[-0.25]);
        let x = Array::matrix(2, 1, vec![1.0, -1.0]).unwrap();
        let y = mlp.forward_plain(&x);
        // x=1: relu([2.5, -1]) = [2.5, 0] → 2.5 − 0.25 = 2.25
        // x=−1: relu([−1.5, 1]) = [0, 1] → 3 − 0.25 = 2.75
        assert_eq!(y.data(), &[2.25, 2.75]);
    }

    #[test]
    fn tape_forward_agrees_with_plain() {
        let cfg = MlpConfig::new(3, 2, 4, 16, Activation::Tanh);
        let mlp = init_mlp(&cfg, &mut stream(5)).unwrap();
        let mut s = stream(6);
        let x = Array::matrix(7, 3, (0..21).map(|_| s.normal()).collect()).unwrap();
        let plain = mlp.forward_plain(&x);
        let mut tape = Tape::new();
        let xid = tape.input(x);
        let (bound, _) = mlp.bind(&mut tape);
        let y = bound.forward(&mut tape, xid).unwrap();
        assert_eq!(tape.value(y).data(), plain.data());
    }

    #[test]
    fn input_gradient_of_tanh_line() {
        // h(x) = tanh(w·x) with w = 2, at x = 0: ∇ₓh = 2·tanh'(0) = 2.
        let cfg = MlpConfig::new(1, 1, 2, 1, Activation::Tanh);
        let mut mlp = init_mlp(&cfg, &mut stream(2)).unwrap();
        mlp.layers[0].weight.value.data_mut().copy_from_slice(&[2.0]);
        mlp.layers[1].weight.value.data_mut().copy_from_slice(&[1.0]);
        let mut tape = Tape::new();
        let x = tape.input(Array::matrix(1, 1, vec![0.0]).unwrap());
        let bound = mlp.bind_frozen(&mut tape);
        let g = bound.input_gradient(&mut tape, x).unwrap();
        assert!((tape.value(g).item() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn input_gradient_of_relu_identity() {
        // relu(x) − relu(−x) = x away from 0; gradient 1 for any x ≠ 0.
        let cfg = MlpConfig::new(1, 1, 2, 2, Activation::Relu);
        let mut mlp = init_mlp(&cfg, &mut stream(2)).unwrap();
        mlp.layers[0].weight.value.data_mut().copy_from_slice(&[1.0, -1.0]);
        mlp.layers[0].bias.value.data_mut().copy_from_slice(&[0.0, 0.0]);
        mlp.layers[1].weight.value.data_mut().copy_from_slice(&[1.0, -1.0]);
        mlp.layers[1].bias.value.data_mut().copy_from_slice(&[0.0]);
        let mut tape = Tape::new();
        let x = tape.input(Array::matrix(2, 1, vec![0.7, -1.3]).unwrap());
        let bound = mlp.bind_frozen(&mut tape);
        let g = bound.input_gradient(&mut tape, x).unwrap();
        assert_eq!(tape.value(g).data(), &[1.0, 1.0]);
    }

    #[test]
    fn input_gradient_rejects_vector_output() {
        let cfg = MlpConfig::new(2, 2, 2, 4, Activation::Relu);
        let mlp = init_mlp(&cfg, &mut stream(0)).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(Array::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let bound = mlp.bind_frozen(&mut tape);
        assert!(bound.input_gradient(&mut tape, x).is_err());
    }

    #[test]
    fn clamp_box_holds_for_adversarial_weights() {
        let cfg = MlpConfig::new(2, 2, 2, 4, Activation::Tanh);
        let mut ens =
            GeneratorEnsemble::init(1, &cfg, Some(vec![(0.0, 1.0), (0.0, 1.0)]), &mut stream(4))
                .unwrap();
        // Push the biases way below the box.
        ens.members[0].layers[1].bias.value.data_mut().copy_from_slice(&[-5.0, -5.0]);
        let mut s = stream(7);
        let latents =
            Array::matrix(50, 2, (0..100).map(|_| s.uniform_in(-1.0, 1.0)).collect()).unwrap();
        let mut route_rng = stream(8);
        let y = ens.generate(&latents, &mut route_rng);
        assert!(y.data().iter().all(|&v| v == 0.0), "clamped to the box floor");
    }

    #[test]
    fn routing_counts_are_multinomial() {
        let cfg = MlpConfig::new(1, 1, 2, 2, Activation::Tanh);
        let ens = GeneratorEnsemble::init(5, &cfg, None, &mut stream(10)).unwrap();
        let n = 100_000;
        let mut rng = stream(11);
        let routing = ens.route(n, &mut rng);
        let mut counts = [0usize; 5];
        for r in routing {
            counts[r] += 1;
        }
        // Each count within 3 standard deviations of n/5.
        let mean = n as f64 / 5.0;
        let sd = (n as f64 * 0.2 * 0.8).sqrt();
        for (m, &c) in counts.iter().enumerate() {
            assert!((c as f64 - mean).abs() < 3.0 * sd, "member {m}: {c}");
        }
    }

    #[test]
    fn single_identity_member_passes_latents_through() {
        // Construct a member computing the identity with tanh hidden layers:
        // final layer inverts a near-linear regime is fiddly, so use the relu
        // identity trick on a relu "generator" for this structural check.
        let cfg = MlpConfig::new(1, 1, 2, 2, Activation::Relu);
        let mut ens = GeneratorEnsemble::init(1, &cfg, None, &mut stream(12)).unwrap();
        let m = &mut ens.members[0];
        m.layers[0].weight.value.data_mut().copy_from_slice(&[1.0, -1.0]);
        m.layers[0].bias.value.data_mut().copy_from_slice(&[0.0, 0.0]);
        m.layers[1].weight.value.data_mut().copy_from_slice(&[1.0, -1.0]);
        m.layers[1].bias.value.data_mut().copy_from_slice(&[0.0]);
        let latents = Array::matrix(4, 1, vec![0.3, -0.9, 0.5, -0.1]).unwrap();
        let mut rng = stream(13);
        let y = ens.generate(&latents, &mut rng);
        assert_eq!(y.data(), latents.data());
    }

    #[test]
    fn ensemble_tape_forward_matches_plain_path() {
        let cfg = MlpConfig::new(2, 2, 3, 8, Activation::Tanh);
        let ens = GeneratorEnsemble::init(3, &cfg, Some(vec![(-0.5, 0.5), (-0.5, 0.5)]), &mut stream(20)).unwrap();
        let mut s = stream(21);
        let latents =
            Array::matrix(11, 2, (0..22).map(|_| s.uniform_in(-1.0, 1.0)).collect()).unwrap();
        let mut route_rng = stream(22);
        let routing = ens.route(11, &mut route_rng);
        let plain = ens.generate_routed(&latents, &routing);
        let mut tape = Tape::new();
        let lid = tape.input(latents);
        let (y, _) = ens.forward_on_tape(&mut tape, lid, &routing, false).unwrap();
        assert_eq!(tape.value(y).data(), plain.data());
    }

    #[test]
    fn zero_final_layer_evaluates_to_zero() {
        let mut rng = stream(30);
        let mut ds = DiscriminatorSet::init(&[1], 8, 4, &mut rng).unwrap();
        let last = ds.members[0].layers.last_mut().unwrap();
        last.weight.value.data_mut().fill(0.0);
        let z = Array::matrix(5, 1, vec![-2.0, -1.0, 0.0, 1.0, 2.0]).unwrap();
        let out = ds.eval(0, &z);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_rows_identical_outputs() {
        let mut rng = stream(31);
        let ds = DiscriminatorSet::init(&[2], 16, 4, &mut rng).unwrap();
        let z = Array::matrix(3, 2, vec![0.4, -0.2, 0.4, -0.2, 0.4, -0.2]).unwrap();
        let out = ds.eval(0, &z);
        assert_eq!(out.data()[0], out.data()[1]);
        assert_eq!(out.data()[1], out.data()[2]);
    }

    #[test]
    fn checkpoint_roundtrip_and_version_check() {
        let gcfg = MlpConfig::new(2, 2, 3, 4, Activation::Tanh);
        let mut rng = stream(40);
        let g0 = GeneratorEnsemble::init(2, &gcfg, None, &mut rng).unwrap();
        let d0 = DiscriminatorSet::init(&[1, 1], 4, 3, &mut rng).unwrap();
        let json = Checkpoint::capture(&g0, &d0).to_json();

        let mut rng2 = stream(41);
        let mut g1 = GeneratorEnsemble::init(2, &gcfg, None, &mut rng2).unwrap();
        let mut d1 = DiscriminatorSet::init(&[1, 1], 4, 3, &mut rng2).unwrap();
        Checkpoint::from_json(&json).unwrap().restore(&mut g1, &mut d1).unwrap();
        for (a, b) in g0.params().iter().zip(g1.params().iter()) {
            assert_eq!(a.value.data(), b.value.data());
        }

        let bad = json.replace("\"version\":1", "\"version\":2");
        let err = Checkpoint::from_json(&bad).unwrap().restore(&mut g1, &mut d1).unwrap_err();
        assert!(err.to_string().contains("version"));
    }
}
