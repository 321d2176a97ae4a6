//! Gradient verification against central finite differences.

use super::graph::{Graph, NodeId};
use super::layers::ParamStore;
use rand::seq::SliceRandom;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Parameter name and flat coordinate of the worst error.
    pub worst: Option<(String, usize)>,
}

/// Compare reverse-mode gradients with central finite differences.
///
/// `build` must construct the same scalar loss from bound parameter nodes on
/// every call (freeze any noise: dropout off, fixed gumbel noise). Per
/// parameter tensor, up to `samples_per_tensor` coordinates are perturbed by
/// `+-epsilon`.
pub fn grad_check(
    params: &ParamStore,
    build: &mut dyn FnMut(&mut Graph, &[NodeId]) -> NodeId,
    epsilon: f64,
    samples_per_tensor: usize,
    seed: u64,
) -> GradCheckReport {
    // Reverse-mode gradients.
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|(_, v)| g.input(v.clone())).collect();
    let loss = build(&mut g, &ids);
    let grad_ids = g.backward(loss, &ids);
    let analytic: Vec<Option<ndarray::Array2<f64>>> =
        grad_ids.iter().map(|o| o.map(|id| g.value(id).clone())).collect();

    let mut rng = crate::rng::stream(seed, "grad-check");
    let mut report = GradCheckReport { max_rel_error: 0.0, coords_checked: 0, worst: None };
    let mut scratch: Vec<ndarray::Array2<f64>> =
        params.iter().map(|(_, v)| v.clone()).collect();

    let eval = |tensors: &[ndarray::Array2<f64>], build: &mut dyn FnMut(&mut Graph, &[NodeId]) -> NodeId| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| g.input(t.clone())).collect();
        let loss = build(&mut g, &ids);
        g.scalar(loss)
    };

    for (t, (name, _)) in params.iter().enumerate().map(|(i, nv)| (i, nv)) {
        let card = scratch[t].len();
        if card == 0 {
            continue;
        }
        let mut coords: Vec<usize> = (0..card).collect();
        coords.shuffle(&mut rng);
        coords.truncate(samples_per_tensor.min(card));
        // A couple of random coordinates beyond the cap guard against biased
        // shuffles on tiny tensors.
        if card > samples_per_tensor {
            coords.push(rng.gen_range(0..card));
        }
        for &c in &coords {
            let original = scratch[t].as_slice().unwrap()[c];
            scratch[t].as_slice_mut().unwrap()[c] = original + epsilon;
            let plus = eval(&scratch, build);
            scratch[t].as_slice_mut().unwrap()[c] = original - epsilon;
            let minus = eval(&scratch, build);
            scratch[t].as_slice_mut().unwrap()[c] = original;

            let fd = (plus - minus) / (2.0 * epsilon);
            let ad = analytic[t].as_ref().map(|a| a.as_slice().unwrap()[c]).unwrap_or(0.0);
            let rel = if fd.abs() < 1e-8 && ad.abs() < 1e-8 {
                0.0
            } else {
                (fd - ad).abs() / fd.abs().max(ad.abs()).max(1e-6)
            };
            report.coords_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.to_string(), c));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::bce_with_logits;
    use crate::nn::layers::{ForwardOpts, GumbelVariant, LayerSpec, Mode, Net, NetSpec};
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn fixed_input(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn linear_tanh_net_passes_below_1e4() {
        let spec = NetSpec {
            input_dim: 6,
            layers: vec![
                LayerSpec::Linear { out: 8 },
                LayerSpec::Tanh,
                LayerSpec::Linear { out: 1 },
            ],
        };
        let net = Net::new(spec, "t", 1);
        let x = fixed_input(16, 6, 2);
        let targets = fixed_input(16, 1, 3).mapv(|v| f64::from(v > 0.0));
        let mut build = |g: &mut Graph, ids: &[NodeId]| {
            let mut net = net.clone();
            let bound = crate::nn::layers::Bound { ids: ids.to_vec() };
            let input = g.input(x.clone());
            let mut rng = ChaCha12Rng::seed_from_u64(0);
            let mut opts =
                ForwardOpts { mode: Mode::Eval, gumbel: GumbelVariant::Soft, rng: &mut rng };
            let out = net.forward(g, &bound, input, &mut opts).unwrap();
            bce_with_logits(g, out, &targets)
        };
        let report = grad_check(&net.params, &mut build, 1e-5, 40, 0);
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn batchnorm_net_passes_below_1e3() {
        let spec = NetSpec {
            input_dim: 5,
            layers: vec![
                LayerSpec::Linear { out: 7 },
                LayerSpec::BatchNorm1d,
                LayerSpec::Relu,
                LayerSpec::Linear { out: 1 },
            ],
        };
        let net = Net::new(spec, "t", 5);
        let x = fixed_input(32, 5, 6);
        let mut build = |g: &mut Graph, ids: &[NodeId]| {
            let mut net = net.clone();
            let bound = crate::nn::layers::Bound { ids: ids.to_vec() };
            let input = g.input(x.clone());
            let mut rng = ChaCha12Rng::seed_from_u64(0);
            let mut opts =
                ForwardOpts { mode: Mode::Train, gumbel: GumbelVariant::Soft, rng: &mut rng };
            let out = net.forward(g, &bound, input, &mut opts).unwrap();
            let sq = g.square(out);
            g.mean_all(sq)
        };
        let report = grad_check(&net.params, &mut build, 1e-5, 40, 0);
        assert!(report.max_rel_error < 1e-3, "{report:?}");
    }

    #[test]
    fn zero_loss_has_zero_gradients() {
        let mut params = ParamStore::new();
        params.insert("w", fixed_input(3, 3, 7));
        let mut build = |g: &mut Graph, ids: &[NodeId]| {
            let z = g.affine(ids[0], 0.0, 0.0);
            g.sum_all(z)
        };
        let report = grad_check(&params, &mut build, 1e-5, 9, 0);
        assert_eq!(report.max_rel_error, 0.0);
    }
}
