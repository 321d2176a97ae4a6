//! Sequential feed-forward networks over the autodiff graph.

use super::graph::{Graph, NodeId};
use crate::error::{Error, Result};
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Linear { out: usize },
    BatchNorm1d,
    Relu,
    LeakyRelu { slope: f64 },
    Dropout { rate: f64 },
    Tanh,
    Gumbel { temperature: f64 },
    /// Concatenate the running activation with the input the previous linear
    /// layer consumed (skip connection by concatenation).
    ConcatSkip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetSpec {
    /// Activation width after each layer; index 0 is the input width.
    pub fn widths(&self) -> Vec<usize> {
        let mut widths = vec![self.input_dim];
        let mut cur = self.input_dim;
        let mut last_linear_input = self.input_dim;
        for layer in &self.layers {
            match layer {
                LayerSpec::Linear { out } => {
                    last_linear_input = cur;
                    cur = *out;
                }
                LayerSpec::ConcatSkip => cur += last_linear_input,
                _ => {}
            }
            widths.push(cur);
        }
        widths
    }

    pub fn output_dim(&self) -> usize {
        *self.widths().last().unwrap()
    }
}

/// Named parameter tensors in a stable order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamStore {
    entries: Vec<(String, Array2<f64>)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        let name = name.into();
        assert!(self.index_of(&name).is_none(), "duplicate parameter `{name}`");
        self.entries.push((name, value));
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        &self.entries[self.index_of(name).unwrap_or_else(|| panic!("no parameter `{name}`"))].1
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<f64> {
        let i = self.index_of(name).unwrap_or_else(|| panic!("no parameter `{name}`"));
        &mut self.entries[i].1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array2<f64>)> {
        self.entries.iter_mut().map(|(n, v)| (n.as_str(), v))
    }

    pub fn at(&self, index: usize) -> (&str, &Array2<f64>) {
        let (n, v) = &self.entries[index];
        (n, v)
    }

    pub fn at_mut(&mut self, index: usize) -> &mut Array2<f64> {
        &mut self.entries[index].1
    }
}

/// Running statistics of one batchnorm layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnState {
    pub running_mean: Array2<f64>,
    pub running_var: Array2<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BnState {
    fn new(dim: usize) -> Self {
        Self {
            running_mean: Array2::zeros((1, dim)),
            running_var: Array2::ones((1, dim)),
            momentum: 0.9,
            eps: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// How Gumbel layers behave during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GumbelVariant {
    /// Hard one-hot forward, straight-through backward (training/sampling).
    HardST,
    /// Differentiable soft sample; used by gradient checking.
    Soft,
}

pub struct ForwardOpts<'a, R: Rng> {
    pub mode: Mode,
    pub gumbel: GumbelVariant,
    pub rng: &'a mut R,
}

/// Parameter node ids for one bound network, aligned with its [`ParamStore`].
pub struct Bound {
    pub ids: Vec<NodeId>,
}

/// A sequential network with its parameters and batchnorm state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Net {
    pub spec: NetSpec,
    pub params: ParamStore,
    pub bn: Vec<BnState>,
    pub prefix: String,
}

impl Net {
    /// Initialize parameters: linear weights and biases from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, batchnorm at identity.
    pub fn new(spec: NetSpec, prefix: &str, seed: u64) -> Self {
        let mut rng = crate::rng::stream(seed, &format!("init/{prefix}"));
        let mut params = ParamStore::new();
        let mut bn = Vec::new();
        let mut cur = spec.input_dim;
        let mut last_linear_input = spec.input_dim;
        for (i, layer) in spec.layers.iter().enumerate() {
            match layer {
                LayerSpec::Linear { out } => {
                    let bound = 1.0 / (cur as f64).sqrt();
                    let w = Array2::from_shape_fn((cur, *out), |_| rng.gen_range(-bound..bound));
                    let b = Array2::from_shape_fn((1, *out), |_| rng.gen_range(-bound..bound));
                    params.insert(format!("{prefix}.{i}.w"), w);
                    params.insert(format!("{prefix}.{i}.b"), b);
                    last_linear_input = cur;
                    cur = *out;
                }
                LayerSpec::BatchNorm1d => {
                    params.insert(format!("{prefix}.{i}.gamma"), Array2::ones((1, cur)));
                    params.insert(format!("{prefix}.{i}.beta"), Array2::zeros((1, cur)));
                    bn.push(BnState::new(cur));
                }
                LayerSpec::ConcatSkip => cur += last_linear_input,
                _ => {}
            }
        }
        Self { spec, params, bn, prefix: prefix.to_string() }
    }

    /// Bind every parameter as a gradient-receiving leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound { ids: self.params.iter().map(|(_, v)| g.input(v.clone())).collect() }
    }

    /// Bind parameters as constants: the forward pass works as usual but no
    /// gradients flow into (or through) them.
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        Bound { ids: self.params.iter().map(|(_, v)| g.constant(v.clone())).collect() }
    }

    /// Forward pass. `Train` mode applies dropout and batch statistics
    /// (updating the running ones); `Eval` uses running statistics and no
    /// dropout.
    pub fn forward<R: Rng>(
        &mut self,
        g: &mut Graph,
        bound: &Bound,
        input: NodeId,
        opts: &mut ForwardOpts<'_, R>,
    ) -> Result<NodeId> {
        if g.value(input).ncols() != self.spec.input_dim {
            return Err(Error::Contract(format!(
                "input width {} does not match network input dim {}",
                g.value(input).ncols(),
                self.spec.input_dim
            )));
        }
        let rows = g.value(input).nrows();
        let mut cur = input;
        let mut last_linear_input = input;
        let mut param_idx = 0;
        let mut bn_idx = 0;
        let layers = self.spec.layers.clone();
        for layer in &layers {
            cur = match layer {
                LayerSpec::Linear { .. } => {
                    let w = bound.ids[param_idx];
                    let b = bound.ids[param_idx + 1];
                    param_idx += 2;
                    last_linear_input = cur;
                    g.linear(cur, w, b)
                }
                LayerSpec::BatchNorm1d => {
                    let gamma = bound.ids[param_idx];
                    let beta = bound.ids[param_idx + 1];
                    param_idx += 2;
                    let state = &mut self.bn[bn_idx];
                    bn_idx += 1;
                    batchnorm(g, cur, gamma, beta, state, opts.mode)
                }
                LayerSpec::Relu => g.relu(cur),
                LayerSpec::LeakyRelu { slope } => g.leaky_relu(cur, *slope),
                LayerSpec::Tanh => g.tanh(cur),
                LayerSpec::Dropout { rate } => dropout(g, cur, *rate, opts.mode, opts.rng),
                LayerSpec::Gumbel { temperature } => match opts.gumbel {
                    GumbelVariant::HardST => g.gumbel_softmax(cur, *temperature, true, opts.rng),
                    GumbelVariant::Soft => g.gumbel_softmax(cur, *temperature, false, opts.rng),
                },
                LayerSpec::ConcatSkip => g.concat_cols(&[cur, last_linear_input]),
            };
            if !g.value(cur).iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite activation after {layer:?} (batch of {rows})"
                )));
            }
        }
        Ok(cur)
    }
}

/// Batchnorm built from differentiable primitives so second-order gradients
/// come for free. Train mode normalizes with batch moments and updates the
/// running statistics; eval mode uses the stored ones.
pub fn batchnorm(
    g: &mut Graph,
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    state: &mut BnState,
    mode: Mode,
) -> NodeId {
    let (rows, _) = g.value(x).dim();
    let n = rows as f64;
    let (xhat, batch_mean, batch_var) = match mode {
        Mode::Train => {
            let mu = {
                let s = g.sum_rows(x);
                g.affine(s, 1.0 / n, 0.0)
            };
            let mub = g.broadcast_rows(mu, rows);
            let xc = g.sub(x, mub);
            let var = {
                let sq = g.square(xc);
                let s = g.sum_rows(sq);
                g.affine(s, 1.0 / n, 0.0)
            };
            let var_eps = g.affine(var, 1.0, state.eps);
            let std = g.sqrt(var_eps);
            let inv = g.recip(std);
            let invb = g.broadcast_rows(inv, rows);
            let xhat = g.mul(xc, invb);
            (xhat, Some(g.value(mu).clone()), Some(g.value(var).clone()))
        }
        Mode::Eval => {
            let mean = g.constant(state.running_mean.clone());
            let scale = g.constant(
                state.running_var.mapv(|v| 1.0 / (v + state.eps).sqrt()),
            );
            let meanb = g.broadcast_rows(mean, rows);
            let xc = g.sub(x, meanb);
            let scaleb = g.broadcast_rows(scale, rows);
            (g.mul(xc, scaleb), None, None)
        }
    };
    if let (Some(mean), Some(var)) = (batch_mean, batch_var) {
        let m = state.momentum;
        // Unbiased variance goes into the running estimate.
        let unbiased = if rows > 1 { var.mapv(|v| v * n / (n - 1.0)) } else { var };
        state.running_mean = &state.running_mean * m + &mean * (1.0 - m);
        state.running_var = &state.running_var * m + &unbiased * (1.0 - m);
    }
    let gb = g.broadcast_rows(gamma, rows);
    let bb = g.broadcast_rows(beta, rows);
    let scaled = g.mul(xhat, gb);
    g.add(scaled, bb)
}

/// Inverted dropout: scales kept entries by `1/(1-rate)` in train mode,
/// identity in eval mode or at rate 0.
pub fn dropout<R: Rng>(g: &mut Graph, x: NodeId, rate: f64, mode: Mode, rng: &mut R) -> NodeId {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
    if mode == Mode::Eval || rate == 0.0 {
        return x;
    }
    let keep = 1.0 - rate;
    let dim = g.value(x).dim();
    let mask = Array2::from_shape_fn(dim, |_| {
        if rng.gen::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    });
    g.mask_mul(x, std::rc::Rc::new(mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn widths_track_linear_and_skip_layers() {
        let spec = NetSpec {
            input_dim: 10,
            layers: vec![
                LayerSpec::Linear { out: 4 },
                LayerSpec::BatchNorm1d,
                LayerSpec::Relu,
                LayerSpec::ConcatSkip,
                LayerSpec::Linear { out: 3 },
            ],
        };
        assert_eq!(spec.widths(), vec![10, 4, 4, 4, 14, 3]);
        assert_eq!(spec.output_dim(), 3);
    }

    #[test]
    fn identity_linear_layer_passes_input_through() {
        let spec = NetSpec { input_dim: 3, layers: vec![LayerSpec::Linear { out: 3 }] };
        let mut net = Net::new(spec, "t", 0);
        *net.params.get_mut("t.0.w") = Array2::eye(3);
        *net.params.get_mut("t.0.b") = Array2::zeros((1, 3));
        let mut g = Graph::new();
        let bound = net.bind(&mut g);
        let x = g.input(arr2(&[[1.0, -2.0, 3.0]]));
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut opts =
            ForwardOpts { mode: Mode::Eval, gumbel: GumbelVariant::HardST, rng: &mut rng };
        let out = net.forward(&mut g, &bound, x, &mut opts).unwrap();
        assert_eq!(g.value(out), &arr2(&[[1.0, -2.0, 3.0]]));
    }

    #[test]
    fn dropout_rate_zero_is_identity_in_train_mode() {
        let mut g = Graph::new();
        let x = g.input(arr2(&[[1.0, 2.0], [3.0, 4.0]]));
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let out = dropout(&mut g, x, 0.0, Mode::Train, &mut rng);
        assert_eq!(out, x);
    }

    #[test]
    fn dropout_eval_is_identity_and_train_scales_survivors() {
        let mut g = Graph::new();
        let x = g.input(Array2::ones((200, 10)));
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert_eq!(dropout(&mut g, x, 0.5, Mode::Eval, &mut rng), x);
        let out = dropout(&mut g, x, 0.5, Mode::Train, &mut rng);
        for &v in g.value(out).iter() {
            assert!(v == 0.0 || v == 2.0);
        }
        let kept = g.value(out).iter().filter(|&&v| v != 0.0).count();
        let frac = kept as f64 / 2000.0;
        assert!((frac - 0.5).abs() < 0.06);
    }

    #[test]
    fn batchnorm_train_normalizes_and_tracks_running_stats() {
        let mut g = Graph::new();
        let x = g.input(arr2(&[[1.0], [2.0], [3.0], [6.0]]));
        let gamma = g.input(Array2::ones((1, 1)));
        let beta = g.input(Array2::zeros((1, 1)));
        let mut state = BnState::new(1);
        let out = batchnorm(&mut g, x, gamma, beta, &mut state, Mode::Train);
        let v = g.value(out);
        let mean: f64 = v.iter().sum::<f64>() / 4.0;
        let var: f64 = v.iter().map(|x| x * x).sum::<f64>() / 4.0 - mean * mean;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
        // Running stats moved toward the batch moments (momentum 0.9).
        assert!((state.running_mean[[0, 0]] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn mismatched_input_width_is_a_contract_error() {
        let spec = NetSpec { input_dim: 5, layers: vec![LayerSpec::Linear { out: 2 }] };
        let mut net = Net::new(spec, "t", 0);
        let mut g = Graph::new();
        let bound = net.bind(&mut g);
        let x = g.input(Array2::zeros((1, 4)));
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut opts =
            ForwardOpts { mode: Mode::Eval, gumbel: GumbelVariant::HardST, rng: &mut rng };
        assert!(net.forward(&mut g, &bound, x, &mut opts).is_err());
    }
}
