//! Mode-specific normalization of continuous columns.
//!
//! Each continuous column is fit with a one-dimensional Bayesian Gaussian
//! mixture (Dirichlet prior on weights, Normal-Gamma prior per component,
//! coordinate-ascent variational inference). A value is then encoded as a
//! sampled mode indicator plus the relative offset `v = (c - mu_k) / (4
//! sigma_k)` within that mode, and the full row re-representation concatenates
//! `(v_1, e_1, ..., v_Nc, e_Nc, d, s)`.
//!
//! The sparse Dirichlet prior lets superfluous components starve during the
//! fit; modes whose posterior weight falls below the pruning threshold are
//! removed and the fit is re-run on the survivors.

use crate::data::EncodedDataset;
use crate::error::{Error, Result};
use ndarray::{Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};
use std::ops::Range;

pub const DEFAULT_MAX_MODES: usize = 10;
pub const DEFAULT_PRUNE_WEIGHT: f64 = 1e-3;
pub const SIGMA_FLOOR: f64 = 1e-4;

/// Fitted mixture for one continuous column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnGMM {
    /// Index of the column within the continuous block.
    pub column: usize,
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Variational objective recorded per iteration of the final fit phase;
    /// non-decreasing by construction.
    pub objective_trace: Vec<f64>,
}

impl ColumnGMM {
    pub fn n_modes(&self) -> usize {
        self.weights.len()
    }

    fn validate(&self) -> Result<()> {
        let wsum: f64 = self.weights.iter().sum();
        if (wsum - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!("mixture weights sum to {wsum}, not 1")));
        }
        if self.stds.iter().any(|&s| s <= 0.0) {
            return Err(Error::Contract("mixture has non-positive std".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFitOptions {
    pub max_modes: usize,
    /// Modes with posterior weight below this are pruned.
    pub prune_weight: f64,
    /// Symmetric Dirichlet concentration; values < 1 favor sparse mixtures.
    pub dirichlet_alpha: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for GmmFitOptions {
    fn default() -> Self {
        Self {
            max_modes: DEFAULT_MAX_MODES,
            prune_weight: DEFAULT_PRUNE_WEIGHT,
            dirichlet_alpha: 1e-3,
            max_iterations: 200,
            tolerance: 1e-6,
        }
    }
}

/// Variational state for one phase of the fit.
struct VbState {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    m: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

struct VbPriors {
    alpha0: f64,
    beta0: f64,
    m0: f64,
    a0: f64,
    b0: f64,
}

/// Fit a Gaussian mixture to one column. Deterministic given `seed` (the seed
/// only drives the symmetry-breaking jitter of the initial component means).
pub fn fit_gmm(values: &[f64], options: &GmmFitOptions, seed: u64) -> ColumnGMM {
    fit_gmm_for_column(values, options, seed, 0)
}

pub fn fit_gmm_for_column(
    values: &[f64],
    options: &GmmFitOptions,
    seed: u64,
    column: usize,
) -> ColumnGMM {
    assert!(!values.is_empty(), "cannot fit a mixture to an empty column");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut distinct = sorted.clone();
    distinct.dedup();

    if distinct.len() < 2 {
        log::warn!("column {column}: all values identical; fitting a single degenerate mode");
        return ColumnGMM {
            column,
            weights: vec![1.0],
            means: vec![distinct[0]],
            stds: vec![SIGMA_FLOOR],
            objective_trace: Vec::new(),
        };
    }

    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).max(1e-12);
    let priors = VbPriors {
        alpha0: options.dirichlet_alpha,
        beta0: 1.0,
        m0: mean,
        a0: 1.0,
        b0: var,
    };

    let mut k = options.max_modes.min(distinct.len()).max(1);
    let mut rng = crate::rng::substream(seed, "gmm-init", column as u64);
    let jitter = 0.01 * var.sqrt();
    let init_means: Vec<f64> = (0..k)
        .map(|i| {
            let q = (i as f64 + 0.5) / k as f64;
            quantile(&sorted, q) + rng.gen_range(-jitter..=jitter)
        })
        .collect();

    let mut state = init_state(&priors, &init_means, n, k, var);
    let trace = loop {
        let phase_trace = run_vb(values, &priors, &mut state, options);
        let total_alpha: f64 = state.alpha.iter().sum();
        let keep: Vec<usize> = (0..k)
            .filter(|&j| state.alpha[j] / total_alpha >= options.prune_weight)
            .collect();
        if keep.len() == k || keep.is_empty() {
            break phase_trace;
        }
        // Warm-start a new phase from the surviving components.
        state = VbState {
            alpha: keep.iter().map(|&j| state.alpha[j]).collect(),
            beta: keep.iter().map(|&j| state.beta[j]).collect(),
            m: keep.iter().map(|&j| state.m[j]).collect(),
            a: keep.iter().map(|&j| state.a[j]).collect(),
            b: keep.iter().map(|&j| state.b[j]).collect(),
        };
        k = keep.len();
    };

    let total_alpha: f64 = state.alpha.iter().sum();
    let mut weights: Vec<f64> = state.alpha.iter().map(|a| a / total_alpha).collect();
    let wsum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= wsum;
    }
    let means = state.m.clone();
    let stds: Vec<f64> = state
        .a
        .iter()
        .zip(&state.b)
        .map(|(&a, &b)| (b / a).sqrt().max(SIGMA_FLOOR))
        .collect();

    let gmm = ColumnGMM { column, weights, means, stds, objective_trace: trace };
    gmm.validate().expect("fit produced an invalid mixture");
    gmm
}

fn init_state(priors: &VbPriors, means: &[f64], n: f64, k: usize, var: f64) -> VbState {
    let share = n / k as f64;
    VbState {
        alpha: vec![priors.alpha0 + share; k],
        beta: vec![priors.beta0 + share; k],
        m: means.to_vec(),
        a: vec![priors.a0 + share / 2.0; k],
        // Start every component wide (at the column variance).
        b: (0..k).map(|_| (priors.a0 + share / 2.0) * var).collect(),
    }
}

/// Coordinate-ascent loop; returns the per-iteration objective trace.
fn run_vb(
    values: &[f64],
    priors: &VbPriors,
    state: &mut VbState,
    options: &GmmFitOptions,
) -> Vec<f64> {
    let n = values.len();
    let k = state.alpha.len();
    let mut resp = vec![0.0; n * k];
    let mut trace: Vec<f64> = Vec::new();

    for _ in 0..options.max_iterations {
        let elbo = e_step(values, priors, state, &mut resp);
        if let Some(&prev) = trace.last() {
            if (elbo - prev).abs() <= options.tolerance * (1.0 + prev.abs()) {
                trace.push(elbo.max(prev));
                break;
            }
        }
        trace.push(elbo);
        m_step(values, priors, state, &resp);
    }
    trace
}

/// Update responsibilities and return the variational objective at the
/// current parameters.
fn e_step(values: &[f64], priors: &VbPriors, state: &VbState, resp: &mut [f64]) -> f64 {
    let k = state.alpha.len();
    let alpha_hat: f64 = state.alpha.iter().sum();
    let e_ln_w: Vec<f64> = state.alpha.iter().map(|&a| digamma(a) - digamma(alpha_hat)).collect();
    let e_ln_lambda: Vec<f64> =
        state.a.iter().zip(&state.b).map(|(&a, &b)| digamma(a) - b.ln()).collect();
    let e_lambda: Vec<f64> = state.a.iter().zip(&state.b).map(|(&a, &b)| a / b).collect();

    const LN_2PI: f64 = 1.837877066409345;
    let mut ln_rho = vec![0.0; k];
    let mut resp_entropy = 0.0;
    let mut expected_ll = 0.0;
    let mut expected_lnp_z = 0.0;
    for (i, &x) in values.iter().enumerate() {
        let mut maxv = f64::NEG_INFINITY;
        for j in 0..k {
            let quad = 1.0 / state.beta[j] + e_lambda[j] * (x - state.m[j]) * (x - state.m[j]);
            ln_rho[j] = e_ln_w[j] + 0.5 * e_ln_lambda[j] - 0.5 * LN_2PI - 0.5 * quad;
            maxv = maxv.max(ln_rho[j]);
        }
        let mut z = 0.0;
        for j in 0..k {
            z += (ln_rho[j] - maxv).exp();
        }
        let log_z = maxv + z.ln();
        for j in 0..k {
            let r = (ln_rho[j] - log_z).exp();
            resp[i * k + j] = r;
            if r > 1e-300 {
                resp_entropy -= r * r.ln();
                expected_lnp_z += r * e_ln_w[j];
                // ln rho already contains E ln w; subtract to isolate the
                // likelihood part.
                expected_ll += r * (ln_rho[j] - e_ln_w[j]);
            }
        }
    }

    // Remaining ELBO terms over the weight and component parameters.
    let alpha0 = priors.alpha0;
    let ln_c_prior = ln_gamma(k as f64 * alpha0) - k as f64 * ln_gamma(alpha0);
    let mut lnp_w = ln_c_prior;
    let mut lnq_w = ln_gamma(alpha_hat);
    for j in 0..k {
        lnp_w += (alpha0 - 1.0) * e_ln_w[j];
        lnq_w += (state.alpha[j] - 1.0) * e_ln_w[j] - ln_gamma(state.alpha[j]);
    }

    let mut lnp_mu_lambda = 0.0;
    let mut lnq_mu_lambda = 0.0;
    for j in 0..k {
        let e_lam_musq = 1.0 / state.beta[j]
            + e_lambda[j] * (state.m[j] - priors.m0) * (state.m[j] - priors.m0);
        lnp_mu_lambda += 0.5 * ((priors.beta0 / (2.0 * std::f64::consts::PI)).ln() + e_ln_lambda[j])
            - 0.5 * priors.beta0 * e_lam_musq
            + priors.a0 * priors.b0.ln()
            - ln_gamma(priors.a0)
            + (priors.a0 - 1.0) * e_ln_lambda[j]
            - priors.b0 * e_lambda[j];
        let gamma_entropy = state.a[j] - state.b[j].ln()
            + ln_gamma(state.a[j])
            + (1.0 - state.a[j]) * digamma(state.a[j]);
        lnq_mu_lambda += 0.5 * e_ln_lambda[j]
            + 0.5 * (state.beta[j] / (2.0 * std::f64::consts::PI)).ln()
            - 0.5
            - gamma_entropy;
    }

    expected_ll + expected_lnp_z + lnp_w + lnp_mu_lambda + resp_entropy - lnq_w - lnq_mu_lambda
}

fn m_step(values: &[f64], priors: &VbPriors, state: &mut VbState, resp: &[f64]) {
    let n = values.len();
    let k = state.alpha.len();
    for j in 0..k {
        let mut nk = 0.0;
        let mut sum = 0.0;
        for i in 0..n {
            let r = resp[i * k + j];
            nk += r;
            sum += r * values[i];
        }
        let xbar = if nk > 1e-12 { sum / nk } else { priors.m0 };
        let mut s = 0.0;
        if nk > 1e-12 {
            for i in 0..n {
                let d = values[i] - xbar;
                s += resp[i * k + j] * d * d;
            }
            s /= nk;
        }
        state.alpha[j] = priors.alpha0 + nk;
        state.beta[j] = priors.beta0 + nk;
        state.m[j] = (priors.beta0 * priors.m0 + nk * xbar) / state.beta[j];
        state.a[j] = priors.a0 + nk / 2.0;
        let dm = xbar - priors.m0;
        state.b[j] = priors.b0 + 0.5 * nk * s + 0.5 * priors.beta0 * nk * dm * dm / state.beta[j];
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Posterior mode probabilities for a value: `w_k N(c; mu_k, sigma_k^2)`,
/// renormalized. Always a valid distribution.
pub fn mode_probs(value: f64, gmm: &ColumnGMM) -> Vec<f64> {
    let k = gmm.n_modes();
    if k == 1 {
        return vec![1.0];
    }
    let mut lp = Vec::with_capacity(k);
    let mut maxv = f64::NEG_INFINITY;
    for j in 0..k {
        let z = (value - gmm.means[j]) / gmm.stds[j];
        let l = gmm.weights[j].max(1e-300).ln() - gmm.stds[j].ln() - 0.5 * z * z;
        lp.push(l);
        maxv = maxv.max(l);
    }
    if !maxv.is_finite() {
        log::warn!("mode probabilities underflowed; falling back to uniform");
        return vec![1.0 / k as f64; k];
    }
    let mut total = 0.0;
    for l in &mut lp {
        *l = (*l - maxv).exp();
        total += *l;
    }
    for l in &mut lp {
        *l /= total;
    }
    lp
}

/// Relative-value encoding of one continuous value: a mode index plus the
/// offset within that mode, clipped to `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeCode {
    pub v: f64,
    pub mode: usize,
}

/// Encode by sampling the mode from the posterior mode probabilities.
pub fn encode_continuous<R: Rng>(value: f64, gmm: &ColumnGMM, rng: &mut R) -> ModeCode {
    let probs = mode_probs(value, gmm);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut mode = probs.len() - 1;
    for (j, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            mode = j;
            break;
        }
    }
    mode_code(value, gmm, mode)
}

/// Deterministic variant: pick the most probable mode.
pub fn encode_continuous_det(value: f64, gmm: &ColumnGMM) -> ModeCode {
    let probs = mode_probs(value, gmm);
    let mode = probs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(j, _)| j)
        .unwrap_or(0);
    mode_code(value, gmm, mode)
}

fn mode_code(value: f64, gmm: &ColumnGMM, mode: usize) -> ModeCode {
    let v = (value - gmm.means[mode]) / (4.0 * gmm.stds[mode]);
    ModeCode { v: v.clamp(-1.0, 1.0), mode }
}

/// Invert a mode code back to a continuous value, clipped to the column's
/// `[0, 1]` range.
pub fn decode_continuous(code: &ModeCode, gmm: &ColumnGMM) -> Result<f64> {
    if code.mode >= gmm.n_modes() {
        return Err(Error::Contract(format!(
            "mode index {} out of range for {} modes",
            code.mode,
            gmm.n_modes()
        )));
    }
    Ok((code.v * 4.0 * gmm.stds[code.mode] + gmm.means[code.mode]).clamp(0.0, 1.0))
}

/// Interpret a one-hot slice as a mode code; errors unless the slice is an
/// exact one-hot vector.
pub fn mode_code_from_onehot(v: f64, e: ArrayView1<'_, f64>) -> Result<ModeCode> {
    let mut mode = None;
    for (j, &x) in e.iter().enumerate() {
        if (x - 1.0).abs() < 1e-9 {
            if mode.is_some() {
                return Err(Error::Contract("mode indicator has more than one active entry".into()));
            }
            mode = Some(j);
        } else if x.abs() > 1e-9 {
            return Err(Error::Contract("mode indicator is not one-hot".into()));
        }
    }
    match mode {
        Some(m) => Ok(ModeCode { v, mode: m }),
        None => Err(Error::Contract("mode indicator has no active entry".into())),
    }
}

/// Column layout of the re-representation vector
/// `(v_1, e_1, ..., v_Nc, e_Nc, d, s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMap {
    pub v_pos: Vec<usize>,
    pub e_slices: Vec<Range<usize>>,
    pub d_slices: Vec<Range<usize>>,
    pub s_slices: Vec<Range<usize>>,
    pub width: usize,
}

impl SliceMap {
    pub fn build(gmms: &[ColumnGMM], discrete_widths: &[usize], sensitive_widths: &[usize]) -> Self {
        let mut offset = 0;
        let mut v_pos = Vec::with_capacity(gmms.len());
        let mut e_slices = Vec::with_capacity(gmms.len());
        for gmm in gmms {
            v_pos.push(offset);
            offset += 1;
            e_slices.push(offset..offset + gmm.n_modes());
            offset += gmm.n_modes();
        }
        let mut d_slices = Vec::with_capacity(discrete_widths.len());
        for &w in discrete_widths {
            d_slices.push(offset..offset + w);
            offset += w;
        }
        let mut s_slices = Vec::with_capacity(sensitive_widths.len());
        for &w in sensitive_widths {
            s_slices.push(offset..offset + w);
            offset += w;
        }
        Self { v_pos, e_slices, d_slices, s_slices, width: offset }
    }

    pub fn for_dataset(dataset: &EncodedDataset, gmms: &[ColumnGMM]) -> Self {
        let dw: Vec<usize> = dataset.discrete_slices.iter().map(|r| r.len()).collect();
        let sw: Vec<usize> = dataset.sensitive_slices.iter().map(|r| r.len()).collect();
        Self::build(gmms, &dw, &sw)
    }

    /// Width of the sensitive section at the tail of the vector.
    pub fn sensitive_width(&self) -> usize {
        self.s_slices.iter().map(|r| r.len()).sum()
    }

    /// Offset where the sensitive section starts.
    pub fn sensitive_start(&self) -> usize {
        self.s_slices.first().map(|r| r.start).unwrap_or(self.width)
    }
}

/// Whether mode selection samples from the posterior or takes the argmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodeMode {
    Sample,
    Deterministic,
}

/// A single re-represented row.
#[derive(Debug, Clone, PartialEq)]
pub struct ReRepresentation {
    pub values: Vec<f64>,
}

/// Fit one mixture per continuous column of an encoded train split.
pub fn fit_all_gmms(dataset: &EncodedDataset, options: &GmmFitOptions, seed: u64) -> Vec<ColumnGMM> {
    use rayon::prelude::*;
    (0..dataset.n_continuous())
        .into_par_iter()
        .map(|c| {
            let col: Vec<f64> = dataset.continuous.column(c).to_vec();
            fit_gmm_for_column(&col, options, seed, c)
        })
        .collect()
}

/// Re-represent one row of an encoded dataset.
pub fn rerepresent<R: Rng>(
    dataset: &EncodedDataset,
    row: usize,
    gmms: &[ColumnGMM],
    map: &SliceMap,
    mode: EncodeMode,
    rng: &mut R,
) -> ReRepresentation {
    let mut out = vec![0.0; map.width];
    fill_rerep(dataset, row, gmms, map, mode, rng, &mut out);
    ReRepresentation { values: out }
}

/// Re-represent every row into a matrix with the [`SliceMap`] layout.
pub fn rerepresent_dataset<R: Rng>(
    dataset: &EncodedDataset,
    gmms: &[ColumnGMM],
    map: &SliceMap,
    mode: EncodeMode,
    rng: &mut R,
) -> Array2<f64> {
    let n = dataset.n_rows();
    let mut out = Array2::zeros((n, map.width));
    let mut buf = vec![0.0; map.width];
    for i in 0..n {
        buf.iter_mut().for_each(|x| *x = 0.0);
        fill_rerep(dataset, i, gmms, map, mode, rng, &mut buf);
        out.row_mut(i).assign(&ArrayView1::from(&buf));
    }
    out
}

fn fill_rerep<R: Rng>(
    dataset: &EncodedDataset,
    row: usize,
    gmms: &[ColumnGMM],
    map: &SliceMap,
    mode: EncodeMode,
    rng: &mut R,
    out: &mut [f64],
) {
    for (c, gmm) in gmms.iter().enumerate() {
        let value = dataset.continuous[[row, c]];
        let code = match mode {
            EncodeMode::Sample => encode_continuous(value, gmm, rng),
            EncodeMode::Deterministic => encode_continuous_det(value, gmm),
        };
        out[map.v_pos[c]] = code.v;
        out[map.e_slices[c].start + code.mode] = 1.0;
    }
    for (f, slice) in map.d_slices.iter().enumerate() {
        let src = &dataset.discrete_slices[f];
        for (dst, srck) in slice.clone().zip(src.clone()) {
            out[dst] = dataset.discrete[[row, srck]];
        }
    }
    for (f, slice) in map.s_slices.iter().enumerate() {
        let src = &dataset.sensitive_slices[f];
        for (dst, srck) in slice.clone().zip(src.clone()) {
            out[dst] = dataset.sensitive[[row, srck]];
        }
    }
}

/// Decode a re-representation vector back to continuous values and
/// categorical value indices. One-hot slices are read by argmax; mode
/// indicators must be valid one-hots.
pub fn decode_rerep(
    x: ArrayView1<'_, f64>,
    gmms: &[ColumnGMM],
    map: &SliceMap,
) -> Result<(Vec<f64>, Vec<u32>, Vec<u32>)> {
    let mut continuous = Vec::with_capacity(gmms.len());
    for (c, gmm) in gmms.iter().enumerate() {
        let v = x[map.v_pos[c]];
        let e = x.slice(ndarray::s![map.e_slices[c].clone()]);
        let code = mode_code_from_onehot(v, e)?;
        continuous.push(decode_continuous(&code, gmm)?);
    }
    let argmax = |r: &Range<usize>| -> u32 {
        let mut best = r.start;
        for k in r.clone() {
            if x[k] > x[best] {
                best = k;
            }
        }
        (best - r.start) as u32
    };
    let discrete = map.d_slices.iter().map(argmax).collect();
    let sensitive = map.s_slices.iter().map(argmax).collect();
    Ok((continuous, discrete, sensitive))
}
