//! Classifier training across the fairness regimes.
//!
//! Two base classifiers: an L2-regularized logistic regression solved by
//! damped Newton iterations to tight gradient tolerance, and a three-layer
//! ReLU network trained by minibatch SGD with a halving schedule. On top of
//! them: training with antidote-augmented data, training with the worst-case
//! antidote loss added per row (DRO), the random comparable-sample baseline,
//! and synthetic-only training.

use crate::comparability::ComparabilityConfig;
use crate::data::EncodedDataset;
use crate::error::{Error, Result};
use crate::gan::AntidoteSet;
use crate::nn::{
    bce_with_logits, par_matmul, ForwardOpts, Graph, GumbelVariant, LayerSpec, Mode, Net,
    NetSpec, OptimKind, OptimState,
};
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    /// L2 penalty strength on the weights (intercept unpenalized).
    pub l2: f64,
    pub max_iter: usize,
    /// Stop when the gradient norm falls below this.
    pub grad_tol: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self { l2: 1.0, max_iter: 2048, grad_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnConfig {
    /// Width of each of the two hidden layers.
    pub hidden: usize,
    pub iterations: usize,
    pub lr: f64,
    /// L2 penalty applied as weight decay.
    pub l2: f64,
    /// Halve the learning rate every this many steps.
    pub halving_period: usize,
    pub batch: usize,
}

impl Default for NnConfig {
    fn default() -> Self {
        Self { hidden: 100, iterations: 10_000, lr: 1e-1, l2: 1e-2, halving_period: 2500, batch: 256 }
    }
}

/// A trained probabilistic classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClassifierModel {
    LogReg { weights: Array2<f64>, intercept: f64 },
    Nn3 { net: Net },
}

impl ClassifierModel {
    pub fn kind(&self) -> &'static str {
        match self {
            ClassifierModel::LogReg { .. } => "logreg",
            ClassifierModel::Nn3 { .. } => "nn",
        }
    }

    /// Predicted probability of the positive class per row; always in [0, 1].
    pub fn predict_proba(&self, x: &Array2<f64>) -> Vec<f64> {
        match self {
            ClassifierModel::LogReg { weights, intercept } => {
                let z = par_matmul(x.view(), weights.view());
                z.column(0).iter().map(|v| sigmoid(v + intercept)).collect()
            }
            ClassifierModel::Nn3 { net } => {
                let logits = nn_logits(net, x);
                logits.iter().map(|&z| sigmoid(z)).collect()
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Forward the classifier net on raw arrays without building a tape.
fn nn_logits(net: &Net, x: &Array2<f64>) -> Array1<f64> {
    let mut cur = x.clone();
    let mut layer_idx = 0;
    for layer in &net.spec.layers {
        match layer {
            LayerSpec::Linear { .. } => {
                let w = net.params.get(&format!("{}.{layer_idx}.w", net.prefix));
                let b = net.params.get(&format!("{}.{layer_idx}.b", net.prefix));
                let mut z = par_matmul(cur.view(), w.view());
                for mut row in z.rows_mut() {
                    row += &b.row(0);
                }
                cur = z;
            }
            LayerSpec::Relu => cur.mapv_inplace(|v| v.max(0.0)),
            other => unreachable!("classifier nets only use linear/relu layers, got {other:?}"),
        }
        layer_idx += 1;
    }
    cur.index_axis(Axis(1), 0).to_owned()
}

/// L2-regularized logistic regression by damped Newton steps.
///
/// Objective: `sum_i softplus(z_i) - y_i z_i + 0.5 * l2 * |w|^2` with the
/// intercept unpenalized. The ridge term keeps the Hessian positive definite,
/// so degenerate or separable data still converges.
pub fn train_logreg(x: &Array2<f64>, y: &[u8], cfg: &LogRegConfig) -> Result<ClassifierModel> {
    assert_eq!(x.nrows(), y.len());
    let d = x.ncols();
    let mut theta = Array1::<f64>::zeros(d + 1); // weights then intercept

    let objective_grad = |theta: &Array1<f64>| -> (f64, Array1<f64>, Array1<f64>) {
        // Returns (loss, gradient, hessian diag weights s = p(1-p)).
        let w = theta.slice(ndarray::s![0..d]);
        let b = theta[d];
        let z = x.dot(&w) + b;
        let mut loss = 0.0;
        let mut resid = Array1::zeros(x.nrows());
        let mut s = Array1::zeros(x.nrows());
        for (i, &zi) in z.iter().enumerate() {
            let yi = y[i] as f64;
            loss += softplus(zi) - yi * zi;
            let p = sigmoid(zi);
            resid[i] = p - yi;
            s[i] = (p * (1.0 - p)).max(1e-12);
        }
        loss += 0.5 * cfg.l2 * w.iter().map(|v| v * v).sum::<f64>();
        let mut grad = Array1::zeros(d + 1);
        let gw = x.t().dot(&resid);
        for j in 0..d {
            grad[j] = gw[j] + cfg.l2 * theta[j];
        }
        grad[d] = resid.sum();
        (loss, grad, s)
    };

    let (mut loss, mut grad, mut s) = objective_grad(&theta);
    for _ in 0..cfg.max_iter {
        if grad.iter().map(|g| g * g).sum::<f64>().sqrt() < cfg.grad_tol {
            break;
        }
        // Hessian over the augmented design [X | 1].
        let mut h = Array2::<f64>::zeros((d + 1, d + 1));
        let sx = {
            let mut sx = x.clone();
            for (i, mut row) in sx.rows_mut().into_iter().enumerate() {
                row *= s[i];
            }
            sx
        };
        let xtsx = par_matmul(x.t(), sx.view());
        h.slice_mut(ndarray::s![0..d, 0..d]).assign(&xtsx);
        let sx_colsum = sx.sum_axis(Axis(0));
        for j in 0..d {
            h[[j, d]] = sx_colsum[j];
            h[[d, j]] = sx_colsum[j];
        }
        h[[d, d]] = s.sum();
        for j in 0..d {
            h[[j, j]] += cfg.l2;
        }

        let step = cholesky_solve(&h, &grad)
            .ok_or_else(|| Error::Numeric("logistic Hessian not positive definite".into()))?;
        // Damped update: halve until the objective decreases.
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let candidate = &theta - &(&step * alpha);
            let (new_loss, new_grad, new_s) = objective_grad(&candidate);
            if new_loss <= loss + 1e-12 {
                theta = candidate;
                loss = new_loss;
                grad = new_grad;
                s = new_s;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    let weights =
        Array2::from_shape_fn((d, 1), |(j, _)| theta[j]);
    Ok(ClassifierModel::LogReg { weights, intercept: theta[d] })
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (1.0 + (-z.abs()).exp()).ln()
}

/// Dense Cholesky solve of `H x = g`; None when H is not positive definite.
fn cholesky_solve(h: &Array2<f64>, g: &Array1<f64>) -> Option<Array1<f64>> {
    let n = h.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = h[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    // Forward then backward substitution.
    let mut yv = Array1::zeros(n);
    for i in 0..n {
        let mut sum = g[i];
        for k in 0..i {
            sum -= l[[i, k]] * yv[k];
        }
        yv[i] = sum / l[[i, i]];
    }
    let mut xv = Array1::zeros(n);
    for i in (0..n).rev() {
        let mut sum = yv[i];
        for k in i + 1..n {
            sum -= l[[k, i]] * xv[k];
        }
        xv[i] = sum / l[[i, i]];
    }
    Some(xv)
}

fn classifier_spec(input_dim: usize, hidden: usize) -> NetSpec {
    NetSpec {
        input_dim,
        layers: vec![
            LayerSpec::Linear { out: hidden },
            LayerSpec::Relu,
            LayerSpec::Linear { out: hidden },
            LayerSpec::Relu,
            LayerSpec::Linear { out: 1 },
        ],
    }
}

/// Per-row antidote candidates for DRO training: `lists[i]` holds row indices
/// into the candidate matrix for original row `i`.
#[derive(Debug, Clone, Default)]
pub struct DroCandidates {
    pub lists: Vec<Vec<u32>>,
}

impl DroCandidates {
    /// Group an antidote set by its source rows.
    pub fn from_antidote(antidote: &AntidoteSet, n_train: usize) -> Self {
        let mut lists = vec![Vec::new(); n_train];
        for (k, &src) in antidote.source.iter().enumerate() {
            lists[src as usize].push(k as u32);
        }
        Self { lists }
    }

    /// Uniformly subsample each candidate list down to `m`.
    pub fn cap<R: Rng>(mut self, m: usize, rng: &mut R) -> Self {
        for list in &mut self.lists {
            if list.len() > m {
                list.shuffle(rng);
                list.truncate(m);
                list.sort_unstable();
            }
        }
        self
    }

    pub fn is_empty(&self) -> bool {
        self.lists.iter().all(|l| l.is_empty())
    }
}

/// Train the three-layer network; plain ERM.
pub fn train_nn(x: &Array2<f64>, y: &[u8], cfg: &NnConfig, seed: u64) -> Result<ClassifierModel> {
    let (model, _) = train_nn_loop(x, y, None, None, cfg, seed)?;
    Ok(model)
}

/// ERM training that also returns the per-step loss trace.
pub fn train_nn_with_trace(
    x: &Array2<f64>,
    y: &[u8],
    cfg: &NnConfig,
    seed: u64,
) -> Result<(ClassifierModel, Vec<f64>)> {
    train_nn_loop(x, y, None, None, cfg, seed)
}

/// DRO training: each step minimizes the batch mean of
/// `loss(x, y) + max over x's antidote candidates of loss(x_hat, y)`,
/// where rows without candidates contribute only their own loss.
pub fn train_antidro(
    x: &Array2<f64>,
    y: &[u8],
    cand_x: &Array2<f64>,
    candidates: &DroCandidates,
    m_cap: Option<usize>,
    cfg: &NnConfig,
    seed: u64,
) -> Result<ClassifierModel> {
    let (model, _) = train_antidro_with_trace(x, y, cand_x, candidates, m_cap, cfg, seed)?;
    Ok(model)
}

pub fn train_antidro_with_trace(
    x: &Array2<f64>,
    y: &[u8],
    cand_x: &Array2<f64>,
    candidates: &DroCandidates,
    m_cap: Option<usize>,
    cfg: &NnConfig,
    seed: u64,
) -> Result<(ClassifierModel, Vec<f64>)> {
    assert_eq!(candidates.lists.len(), x.nrows());
    if cand_x.nrows() > 0 {
        assert_eq!(cand_x.ncols(), x.ncols(), "candidate feature width mismatch");
    }
    let capped = match m_cap {
        Some(m) => {
            let mut rng = crate::rng::stream(seed, "antidro-cap");
            candidates.clone().cap(m, &mut rng)
        }
        None => candidates.clone(),
    };
    train_nn_loop(x, y, Some(cand_x), Some(&capped), cfg, seed)
}

/// Shared SGD loop. The DRO path and plain ERM differ only in the loss the
/// batch contributes; with no candidates the trajectories are identical by
/// construction.
fn train_nn_loop(
    x: &Array2<f64>,
    y: &[u8],
    cand_x: Option<&Array2<f64>>,
    candidates: Option<&DroCandidates>,
    cfg: &NnConfig,
    seed: u64,
) -> Result<(ClassifierModel, Vec<f64>)> {
    assert_eq!(x.nrows(), y.len());
    let n = x.nrows();
    assert!(n > 0, "empty training set");
    let mut net = Net::new(classifier_spec(x.ncols(), cfg.hidden), "clf", seed);
    let mut opt = OptimState::new(OptimKind::sgd(cfg.lr, cfg.l2, cfg.halving_period), &net.params);
    let mut batch_rng = crate::rng::stream(seed, "nn-batches");
    let batch = cfg.batch.min(n).max(1);

    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n; // force an initial shuffle
    let mut trace = Vec::with_capacity(cfg.iterations);

    for _ in 0..cfg.iterations {
        if cursor + batch > n {
            order.shuffle(&mut batch_rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + batch];
        cursor += batch;

        let xb = select_rows(x, idx);
        let tb = Array2::from_shape_fn((idx.len(), 1), |(r, _)| y[idx[r]] as f64);

        let mut g = Graph::new();
        let bound = net.bind(&mut g);
        let input = g.input(xb);
        let mut fwd_rng = crate::rng::stream(seed, "nn-fwd"); // no stochastic layers
        let mut opts =
            ForwardOpts { mode: Mode::Train, gumbel: GumbelVariant::HardST, rng: &mut fwd_rng };
        let logits = net.forward(&mut g, &bound, input, &mut opts)?;

        let loss = match (cand_x, candidates) {
            (Some(cx), Some(cands)) if !cands.is_empty() => {
                let per_row = bce_rows(&mut g, logits, &tb);
                // Select each row's worst candidate under the current
                // parameters, then add its differentiable loss back in.
                let mut sel_rows: Vec<u32> = Vec::new();
                let mut owner: Vec<usize> = Vec::new();
                for (r, &i) in idx.iter().enumerate() {
                    let list = &cands.lists[i];
                    if list.is_empty() {
                        continue;
                    }
                    let mut worst = list[0];
                    let mut worst_loss = f64::NEG_INFINITY;
                    for &k in list {
                        let z = frozen_logit(&net, cx, k as usize);
                        let l = softplus(z) - y[i] as f64 * z;
                        debug_assert!(l >= 0.0);
                        if l > worst_loss {
                            worst_loss = l;
                            worst = k;
                        }
                    }
                    sel_rows.push(worst);
                    owner.push(r);
                }
                if sel_rows.is_empty() {
                    g.mean_all(per_row)
                } else {
                    let sel_idx: Vec<usize> = sel_rows.iter().map(|&k| k as usize).collect();
                    let sel = select_rows(cx, &sel_idx);
                    let tsel = Array2::from_shape_fn((owner.len(), 1), |(r, _)| {
                        y[idx[owner[r]]] as f64
                    });
                    let sel_in = g.input(sel);
                    let sel_logits = net.forward(&mut g, &bound, sel_in, &mut ForwardOpts {
                        mode: Mode::Train,
                        gumbel: GumbelVariant::HardST,
                        rng: &mut fwd_rng,
                    })?;
                    let sel_loss = bce_rows(&mut g, sel_logits, &tsel);
                    // Scatter candidate losses back onto their batch rows.
                    let mut scatter = Array2::zeros((idx.len(), owner.len()));
                    for (c, &r) in owner.iter().enumerate() {
                        scatter[[r, c]] = 1.0;
                    }
                    let p = g.constant(scatter);
                    let added = g.matmul(p, sel_loss);
                    let total = g.add(per_row, added);
                    g.mean_all(total)
                }
            }
            _ => bce_with_logits(&mut g, logits, &tb),
        };

        let loss_value = g.scalar(loss);
        if !loss_value.is_finite() {
            return Err(Error::Numeric(format!("non-finite training loss {loss_value}")));
        }
        trace.push(loss_value);

        let grads = g.backward(loss, &bound.ids);
        let grad_values: Vec<Option<Array2<f64>>> =
            grads.iter().map(|o| o.map(|id| g.value(id).clone())).collect();
        opt.step(&mut net.params, &grad_values);
    }

    Ok((ClassifierModel::Nn3 { net }, trace))
}

/// Per-row binary cross-entropy on logits (n x 1 node), stable softplus form.
fn bce_rows(g: &mut Graph, logits: crate::nn::NodeId, targets: &Array2<f64>) -> crate::nn::NodeId {
    let zmax = g.value(logits).mapv(|v| v.max(0.0));
    let exp_neg = zmax.mapv(|v| (-v).exp());
    let m = g.constant(zmax);
    let e0 = g.constant(exp_neg);
    let zm = g.sub(logits, m);
    let ez = g.exp(zm);
    let inner = g.add(e0, ez);
    let ln_inner = g.ln(inner);
    let sp = g.add(ln_inner, m);
    let t = g.constant(targets.clone());
    let tz = g.mul(t, logits);
    g.sub(sp, tz)
}

fn frozen_logit(net: &Net, x: &Array2<f64>, row: usize) -> f64 {
    let r = x.row(row).insert_axis(Axis(0)).to_owned();
    nn_logits(net, &r)[0]
}

fn select_rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), x.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&x.row(i));
    }
    out
}

/// Which base trainer a composed regime uses.
#[derive(Debug, Clone, Copy)]
pub enum BaseTrainer<'a> {
    LogReg(&'a LogRegConfig),
    Nn(&'a NnConfig, u64),
}

impl BaseTrainer<'_> {
    pub fn fit(&self, x: &Array2<f64>, y: &[u8]) -> Result<ClassifierModel> {
        match self {
            BaseTrainer::LogReg(cfg) => train_logreg(x, y, cfg),
            BaseTrainer::Nn(cfg, seed) => train_nn(x, y, cfg, *seed),
        }
    }
}

/// Data augmentation: train the base classifier on original rows plus
/// antidote rows with their copied labels.
pub fn train_anti(
    x: &Array2<f64>,
    y: &[u8],
    anti_x: &Array2<f64>,
    anti_y: &[u8],
    trainer: BaseTrainer<'_>,
) -> Result<ClassifierModel> {
    let (xa, ya) = concat_rows(x, y, anti_x, anti_y);
    trainer.fit(&xa, &ya)
}

/// Train on synthetic rows alone (evaluation happens on the real test split).
pub fn train_anti_only(
    anti_x: &Array2<f64>,
    anti_y: &[u8],
    trainer: BaseTrainer<'_>,
) -> Result<ClassifierModel> {
    trainer.fit(anti_x, anti_y)
}

pub fn concat_rows(
    x: &Array2<f64>,
    y: &[u8],
    x2: &Array2<f64>,
    y2: &[u8],
) -> (Array2<f64>, Vec<u8>) {
    if x2.nrows() == 0 {
        return (x.clone(), y.to_vec());
    }
    assert_eq!(x.ncols(), x2.ncols(), "augmentation width mismatch");
    let mut out = Array2::zeros((x.nrows() + x2.nrows(), x.ncols()));
    out.slice_mut(ndarray::s![0..x.nrows(), ..]).assign(x);
    out.slice_mut(ndarray::s![x.nrows().., ..]).assign(x2);
    let mut labels = y.to_vec();
    labels.extend_from_slice(y2);
    (out, labels)
}

/// The random comparable-sample baseline: per sampled source row, perturb a
/// uniform number in `[0, t_d]` of discrete features to uniform values, add
/// uniform `[-t_c, t_c]` noise to every continuous feature (clipped to
/// `[0, 1]`), and re-draw a uniform subset of the sensitive features. Labels
/// are copied, so every generated row is comparable to its source by
/// construction.
pub fn random_comparable<R: Rng>(
    dataset: &EncodedDataset,
    cfg: &ComparabilityConfig,
    count: usize,
    rng: &mut R,
) -> AntidoteSet {
    let n = dataset.n_rows();
    assert!(n > 0);
    let n_c = dataset.n_continuous();
    let d_widths: Vec<usize> = dataset.discrete_slices.iter().map(|r| r.len()).collect();
    let s_widths: Vec<usize> = dataset.sensitive_slices.iter().map(|r| r.len()).collect();

    let mut continuous = Array2::zeros((count, n_c));
    let mut discrete = Array2::zeros((count, dataset.discrete.ncols()));
    let mut sensitive = Array2::zeros((count, dataset.sensitive.ncols()));
    let mut labels = Vec::with_capacity(count);
    let mut source = Vec::with_capacity(count);
    let mut requested = Vec::with_capacity(count);

    for r in 0..count {
        let src = rng.gen_range(0..n);
        source.push(src as u32);
        labels.push(dataset.labels[src]);

        for c in 0..n_c {
            let noise = if cfg.t_c > 0.0 { rng.gen_range(-cfg.t_c..=cfg.t_c) } else { 0.0 };
            continuous[[r, c]] = (dataset.continuous[[src, c]] + noise).clamp(0.0, 1.0);
        }

        let mut d_codes: Vec<u32> =
            (0..d_widths.len()).map(|f| dataset.discrete_code(src, f)).collect();
        if !d_codes.is_empty() && cfg.t_d > 0 {
            let k = rng.gen_range(0..=cfg.t_d.min(d_codes.len()));
            let mut feats: Vec<usize> = (0..d_codes.len()).collect();
            feats.shuffle(rng);
            for &f in feats.iter().take(k) {
                d_codes[f] = rng.gen_range(0..d_widths[f] as u32);
            }
        }
        for (f, &code) in d_codes.iter().enumerate() {
            discrete[[r, dataset.discrete_slices[f].start + code as usize]] = 1.0;
        }

        let mut s_codes: Vec<u32> =
            (0..s_widths.len()).map(|f| dataset.sensitive_code(src, f)).collect();
        let k = rng.gen_range(0..=s_codes.len());
        let mut feats: Vec<usize> = (0..s_codes.len()).collect();
        feats.shuffle(rng);
        for &f in feats.iter().take(k) {
            s_codes[f] = rng.gen_range(0..s_widths[f] as u32);
        }
        for (f, &code) in s_codes.iter().enumerate() {
            sensitive[[r, dataset.sensitive_slices[f].start + code as usize]] = 1.0;
        }
        requested.push(s_codes);
    }

    AntidoteSet {
        continuous,
        discrete,
        sensitive,
        labels,
        source,
        requested,
        discrete_slices: dataset.discrete_slices.clone(),
        sensitive_slices: dataset.sensitive_slices.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn separable_points_fit_perfectly() {
        let x = arr2(&[[-1.0], [1.0]]);
        let y = [0u8, 1];
        let model = train_logreg(&x, &y, &LogRegConfig::default()).unwrap();
        let p = model.predict_proba(&x);
        assert!(p[0] < 0.5 && p[1] > 0.5);
    }

    #[test]
    fn all_negative_labels_predict_below_half() {
        let x = arr2(&[[0.3], [-0.2], [1.4], [0.9]]);
        let y = [0u8, 0, 0, 0];
        let model = train_logreg(&x, &y, &LogRegConfig::default()).unwrap();
        for p in model.predict_proba(&x) {
            assert!(p < 0.5);
        }
    }

    #[test]
    fn logreg_gradient_vanishes_at_the_optimum() {
        // Independent analytic gradient of the objective at the returned
        // parameters.
        let x = arr2(&[
            [0.2, -1.0],
            [1.3, 0.4],
            [-0.7, 0.8],
            [0.0, -0.3],
            [2.1, 1.1],
            [-1.4, -0.9],
        ]);
        let y = [1u8, 1, 0, 0, 1, 0];
        let cfg = LogRegConfig::default();
        let model = train_logreg(&x, &y, &cfg).unwrap();
        let ClassifierModel::LogReg { weights, intercept } = &model else { unreachable!() };
        let mut grad = vec![0.0; 3];
        for i in 0..x.nrows() {
            let z = x.row(i).dot(&weights.column(0)) + intercept;
            let r = sigmoid(z) - y[i] as f64;
            grad[0] += r * x[[i, 0]];
            grad[1] += r * x[[i, 1]];
            grad[2] += r;
        }
        grad[0] += cfg.l2 * weights[[0, 0]];
        grad[1] += cfg.l2 * weights[[1, 0]];
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "gradient norm {norm}");
    }

    fn xor_data() -> (Array2<f64>, Vec<u8>) {
        (
            arr2(&[[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]]),
            vec![0, 1, 1, 0],
        )
    }

    fn small_nn_cfg() -> NnConfig {
        NnConfig { hidden: 16, iterations: 1500, lr: 0.1, l2: 1e-4, halving_period: 600, batch: 4 }
    }

    #[test]
    fn nn_learns_xor() {
        let (x, y) = xor_data();
        let model = train_nn(&x, &y, &small_nn_cfg(), 0).unwrap();
        let p = model.predict_proba(&x);
        for (pi, &yi) in p.iter().zip(&y) {
            assert!((pi >= &0.5) == (yi == 1), "probs {p:?}");
            assert!((0.0..=1.0).contains(pi));
        }
    }

    #[test]
    fn nn_training_is_seed_deterministic() {
        let (x, y) = xor_data();
        let cfg = small_nn_cfg();
        let (m1, t1) = train_nn_with_trace(&x, &y, &cfg, 7).unwrap();
        let (m2, t2) = train_nn_with_trace(&x, &y, &cfg, 7).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(m1, m2);
        let (_, t3) = train_nn_with_trace(&x, &y, &cfg, 8).unwrap();
        assert_ne!(t1, t3);
    }

    #[test]
    fn empty_candidates_reproduce_the_erm_trajectory() {
        let (x, y) = xor_data();
        let cfg = small_nn_cfg();
        let (_, erm) = train_nn_with_trace(&x, &y, &cfg, 3).unwrap();
        let cands = DroCandidates { lists: vec![Vec::new(); 4] };
        let empty = Array2::zeros((0, 2));
        let (_, dro) =
            train_antidro_with_trace(&x, &y, &empty, &cands, None, &cfg, 3).unwrap();
        assert_eq!(erm, dro);
    }

    #[test]
    fn dro_first_step_loss_dominates_erm() {
        // Same seed means identical initial parameters and batch, so the
        // first-step DRO loss must exceed plain ERM by the (non-negative)
        // worst-candidate term.
        let (x, y) = xor_data();
        let cfg = small_nn_cfg();
        let (_, erm) = train_nn_with_trace(&x, &y, &cfg, 5).unwrap();
        let cand_x = &x * 0.9;
        let cands = DroCandidates {
            lists: vec![vec![0], vec![1], vec![2], vec![3]],
        };
        let (_, dro) =
            train_antidro_with_trace(&x, &y, &cand_x, &cands, None, &cfg, 5).unwrap();
        assert!(dro[0] >= erm[0] - 1e-12, "dro {} erm {}", dro[0], erm[0]);
    }

    #[test]
    fn singleton_candidate_contributes_exactly_its_loss() {
        let (x, y) = xor_data();
        let cfg = NnConfig { iterations: 1, batch: 4, ..small_nn_cfg() };
        let cand_x = &x * 0.5;
        let cands = DroCandidates { lists: vec![vec![0], vec![1], vec![2], vec![3]] };
        let (_, dro) = train_antidro_with_trace(&x, &y, &cand_x, &cands, None, &cfg, 9).unwrap();
        // Independent recomputation at the initial parameters.
        let net = Net::new(classifier_spec(2, cfg.hidden), "clf", 9);
        let model = ClassifierModel::Nn3 { net };
        let batch_order = {
            let mut order: Vec<usize> = (0..4).collect();
            let mut rng = crate::rng::stream(9, "nn-batches");
            order.shuffle(&mut rng);
            order
        };
        let mut expected = 0.0;
        for &i in &batch_order {
            let zi = {
                let p = model.predict_proba(&x.row(i).insert_axis(Axis(0)).to_owned())[0];
                (p / (1.0 - p)).ln()
            };
            let zc = {
                let p = model.predict_proba(&cand_x.row(i).insert_axis(Axis(0)).to_owned())[0];
                (p / (1.0 - p)).ln()
            };
            let yi = y[i] as f64;
            expected += softplus(zi) - yi * zi + softplus(zc) - yi * zc;
        }
        expected /= 4.0;
        assert!((dro[0] - expected).abs() < 1e-8, "{} vs {}", dro[0], expected);
    }

    #[test]
    fn anti_with_empty_set_equals_base() {
        let (x, y) = xor_data();
        let cfg = small_nn_cfg();
        let base = train_nn(&x, &y, &cfg, 11).unwrap();
        let empty = Array2::zeros((0, 2));
        let augmented = train_anti(&x, &y, &empty, &[], BaseTrainer::Nn(&cfg, 11)).unwrap();
        assert_eq!(base, augmented);
    }

    #[test]
    fn concat_sizes_add_up() {
        let (x, y) = xor_data();
        let (xa, ya) = concat_rows(&x, &y, &x, &y);
        assert_eq!(xa.nrows(), 8);
        assert_eq!(ya.len(), 8);
    }

    mod random_comparable_tests {
        use super::*;
        use crate::comparability::is_comparable;
        use crate::data::Split;

        fn base_dataset() -> EncodedDataset {
            let d_slices = crate::data::feature_slices([3usize, 2].into_iter());
            let s_slices = crate::data::feature_slices([2usize].into_iter());
            let mut d = Array2::zeros((6, 5));
            let mut s = Array2::zeros((6, 2));
            let mut rng = crate::rng::stream(0, "ds");
            for i in 0..6 {
                let c1: u32 = rng.gen_range(0..3);
                let c2: u32 = rng.gen_range(0..2);
                d[[i, c1 as usize]] = 1.0;
                d[[i, 3 + c2 as usize]] = 1.0;
                s[[i, rng.gen_range(0..2) as usize]] = 1.0;
            }
            EncodedDataset {
                continuous: Array2::from_shape_fn((6, 2), |(i, j)| {
                    0.1 * (i as f64) + 0.05 * (j as f64)
                }),
                discrete: d,
                sensitive: s,
                labels: vec![0, 1, 0, 1, 0, 1],
                split: Split::Train,
                discrete_slices: d_slices,
                sensitive_slices: s_slices,
            }
        }

        #[test]
        fn zero_thresholds_only_touch_sensitive_features() {
            let ds = base_dataset();
            let mut rng = crate::rng::stream(1, "rand");
            let set = random_comparable(&ds, &ComparabilityConfig { t_d: 0, t_c: 0.0 }, 40, &mut rng);
            for r in 0..set.len() {
                let src = set.source[r] as usize;
                assert_eq!(set.continuous.row(r), ds.continuous.row(src));
                assert_eq!(set.discrete.row(r), ds.discrete.row(src));
                assert_eq!(set.labels[r], ds.labels[src]);
            }
        }

        #[test]
        fn every_generated_row_is_comparable_to_its_source() {
            let ds = base_dataset();
            let cfg = ComparabilityConfig { t_d: 1, t_c: 0.05 };
            let mut rng = crate::rng::stream(2, "rand");
            let set = random_comparable(&ds, &cfg, 200, &mut rng);
            let enc = set.to_encoded(Split::Train);
            for r in 0..set.len() {
                let src = set.source[r] as usize;
                assert!(is_comparable(&enc.row(r), &ds.row(src), &cfg));
            }
        }
    }
}
