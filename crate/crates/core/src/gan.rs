//! Conditional generation of comparable samples with altered sensitive
//! attributes.
//!
//! The generator maps `(x_tilde, s_bar, z)` to a full re-representation whose
//! categorical sections come out of Gumbel-softmax heads as exact one-hots.
//! The critic scores triplets `(candidate, x_tilde, candidate - x_tilde)` and
//! is trained Wasserstein-style with a gradient penalty on interpolates;
//! pairs of real comparable rows provide the "real" triplets, so
//! comparability is learned implicitly. Generated rows are decoded back to
//! dataset form and passed through a post filter that keeps only rows
//! genuinely comparable to their sources.

use crate::comparability::{is_comparable, ComparabilityConfig, ComparablePair};
use crate::data::{EncodedDataset, EncodedRow, Split};
use crate::error::{Error, Result};
use crate::gmm::{decode_rerep, rerepresent_dataset, ColumnGMM, EncodeMode, SliceMap};
use crate::nn::{
    cross_entropy_logits, Bound, ForwardOpts, Graph, GumbelVariant, LayerSpec, Mode, Net, NetSpec,
    NodeId, OptimKind, OptimState, ParamStore,
};
use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::ops::Range;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanHyperparams {
    pub lr_g: f64,
    pub lr_d: f64,
    pub weight_decay_g: f64,
    pub weight_decay_d: f64,
    pub batch: usize,
    pub epochs: usize,
    pub gumbel_temperature: f64,
    pub noise_dim: usize,
    pub grad_penalty: f64,
    /// Adam moment decay rates shared by both optimizers.
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Weight of the sensitive-attribute cross-entropy in the generator loss.
    pub ce_weight: f64,
    pub seed: u64,
}

impl Default for GanHyperparams {
    fn default() -> Self {
        Self {
            lr_g: 2e-4,
            lr_d: 2e-4,
            weight_decay_g: 1e-6,
            weight_decay_d: 0.0,
            batch: 4096,
            epochs: 500,
            gumbel_temperature: 0.2,
            noise_dim: 128,
            grad_penalty: 10.0,
            adam_beta1: 0.5,
            adam_beta2: 0.9,
            ce_weight: 1.0,
            seed: 0,
        }
    }
}

impl GanHyperparams {
    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("lr_g", self.lr_g),
            ("lr_d", self.lr_d),
            ("gumbel_temperature", self.gumbel_temperature),
            ("ce_weight", self.ce_weight),
        ];
        for (name, v) in positives {
            if v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive (got {v})")));
            }
        }
        if self.batch == 0 || self.epochs == 0 || self.noise_dim == 0 {
            return Err(Error::Config("batch, epochs, and noise_dim must be positive".into()));
        }
        if self.grad_penalty < 0.0 || self.weight_decay_g < 0.0 || self.weight_decay_d < 0.0 {
            return Err(Error::Config("penalty coefficients must be non-negative".into()));
        }
        Ok(())
    }
}

/// Generated rows in decoded dataset form, each carrying its source row, the
/// sensitive combination that was requested, and the label copied from the
/// source. [`post_filter`] output additionally guarantees every row is
/// comparable to its source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntidoteSet {
    pub continuous: Array2<f64>,
    pub discrete: Array2<f64>,
    pub sensitive: Array2<f64>,
    pub labels: Vec<u8>,
    pub source: Vec<u32>,
    /// Requested sensitive combination, one value index per sensitive feature.
    pub requested: Vec<Vec<u32>>,
    pub discrete_slices: Vec<Range<usize>>,
    pub sensitive_slices: Vec<Range<usize>>,
}

impl AntidoteSet {
    pub fn empty_like(dataset: &EncodedDataset) -> Self {
        Self {
            continuous: Array2::zeros((0, dataset.n_continuous())),
            discrete: Array2::zeros((0, dataset.discrete.ncols())),
            sensitive: Array2::zeros((0, dataset.sensitive.ncols())),
            labels: Vec::new(),
            source: Vec::new(),
            requested: Vec::new(),
            discrete_slices: dataset.discrete_slices.clone(),
            sensitive_slices: dataset.sensitive_slices.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> EncodedRow<'_> {
        EncodedRow {
            continuous: self.continuous.row(i),
            discrete: self.discrete.row(i),
            discrete_slices: &self.discrete_slices,
            label: self.labels[i],
        }
    }

    /// View as an encoded dataset (provenance recorded via `split`).
    pub fn to_encoded(&self, split: Split) -> EncodedDataset {
        EncodedDataset {
            continuous: self.continuous.clone(),
            discrete: self.discrete.clone(),
            sensitive: self.sensitive.clone(),
            labels: self.labels.clone(),
            split,
            discrete_slices: self.discrete_slices.clone(),
            sensitive_slices: self.sensitive_slices.clone(),
        }
    }

    /// Concatenated `[C | D | S]` matrix, same column order as
    /// [`EncodedDataset::feature_matrix`].
    pub fn feature_matrix(&self) -> Array2<f64> {
        self.to_encoded(Split::Train).feature_matrix()
    }

    pub fn append(&mut self, other: &AntidoteSet) {
        if other.is_empty() {
            return;
        }
        let cat = |a: &Array2<f64>, b: &Array2<f64>| {
            ndarray::concatenate(Axis(0), &[a.view(), b.view()]).expect("append shape")
        };
        self.continuous = cat(&self.continuous, &other.continuous);
        self.discrete = cat(&self.discrete, &other.discrete);
        self.sensitive = cat(&self.sensitive, &other.sensitive);
        self.labels.extend_from_slice(&other.labels);
        self.source.extend_from_slice(&other.source);
        self.requested.extend_from_slice(&other.requested);
    }

    /// Keep a uniformly random subset of exactly `target` rows.
    pub fn truncate_random<R: Rng>(&mut self, target: usize, rng: &mut R) {
        if target >= self.len() {
            return;
        }
        let mut keep: Vec<usize> = (0..self.len()).collect();
        keep.shuffle(rng);
        keep.truncate(target);
        keep.sort_unstable();
        *self = self.select(&keep);
    }

    fn select(&self, rows: &[usize]) -> AntidoteSet {
        let pick = |a: &Array2<f64>| {
            let mut out = Array2::zeros((rows.len(), a.ncols()));
            for (r, &i) in rows.iter().enumerate() {
                out.row_mut(r).assign(&a.row(i));
            }
            out
        };
        AntidoteSet {
            continuous: pick(&self.continuous),
            discrete: pick(&self.discrete),
            sensitive: pick(&self.sensitive),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            source: rows.iter().map(|&i| self.source[i]).collect(),
            requested: rows.iter().map(|&i| self.requested[i].clone()).collect(),
            discrete_slices: self.discrete_slices.clone(),
            sensitive_slices: self.sensitive_slices.clone(),
        }
    }

    /// Antidote rows as a percentage of the training-set size.
    pub fn percent_of(&self, train_rows: usize) -> f64 {
        100.0 * self.len() as f64 / train_rows as f64
    }

    /// CSV export: provenance columns, then continuous values and categorical
    /// value indices.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n_c = self.continuous.ncols();
        let mut header = vec!["source".to_string(), "requested".to_string(), "label".to_string()];
        header.extend((0..n_c).map(|c| format!("c{c}")));
        header.extend((0..self.discrete_slices.len()).map(|f| format!("d{f}")));
        header.extend((0..self.sensitive_slices.len()).map(|f| format!("s{f}")));
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut fields = vec![
                self.source[i].to_string(),
                self.requested[i].iter().map(|v| v.to_string()).collect::<Vec<_>>().join("|"),
                self.labels[i].to_string(),
            ];
            for c in 0..n_c {
                fields.push(format!("{}", self.continuous[[i, c]]));
            }
            for f in 0..self.discrete_slices.len() {
                fields.push(argmax_code(self.discrete.row(i), &self.discrete_slices[f]).to_string());
            }
            for f in 0..self.sensitive_slices.len() {
                fields.push(argmax_code(self.sensitive.row(i), &self.sensitive_slices[f]).to_string());
            }
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

fn argmax_code(row: ArrayView1<'_, f64>, slice: &Range<usize>) -> u32 {
    let mut best = slice.start;
    for k in slice.clone() {
        if row[k] > row[best] {
            best = k;
        }
    }
    (best - slice.start) as u32
}

/// The conditional generator: a three-block trunk with skip concatenations,
/// then one small head per re-representation slice (tanh for relative values,
/// Gumbel-softmax for every one-hot section).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorNet {
    pub trunk: Net,
    pub heads: ParamStore,
    pub map: SliceMap,
    pub noise_dim: usize,
    pub temperature: f64,
}

pub struct GenBound {
    trunk: Bound,
    heads: Vec<NodeId>,
}

pub struct GenForward {
    /// The generated re-representation (full slice-map width).
    pub output: NodeId,
    /// Pre-Gumbel logits of each sensitive head, for the conditional loss.
    pub s_logits: Vec<NodeId>,
}

impl GeneratorNet {
    pub fn new(map: SliceMap, noise_dim: usize, temperature: f64, seed: u64) -> Self {
        let sens_width = map.sensitive_width();
        let input_dim = map.width + sens_width + noise_dim;
        let spec = NetSpec {
            input_dim,
            layers: vec![
                LayerSpec::Linear { out: 256 },
                LayerSpec::BatchNorm1d,
                LayerSpec::Relu,
                LayerSpec::ConcatSkip,
                LayerSpec::Linear { out: 256 },
                LayerSpec::BatchNorm1d,
                LayerSpec::Relu,
                LayerSpec::ConcatSkip,
                LayerSpec::Linear { out: map.width },
                LayerSpec::BatchNorm1d,
                LayerSpec::Relu,
            ],
        };
        let trunk = Net::new(spec, "gen", seed);
        let mut heads = ParamStore::new();
        let mut rng = crate::rng::stream(seed, "init/gen-heads");
        let mut head = |heads: &mut ParamStore, name: String, dim: usize| {
            let bound = 1.0 / (dim as f64).sqrt();
            heads.insert(
                format!("{name}.w"),
                Array2::from_shape_fn((dim, dim), |_| rng.gen_range(-bound..bound)),
            );
            heads.insert(
                format!("{name}.b"),
                Array2::from_shape_fn((1, dim), |_| rng.gen_range(-bound..bound)),
            );
        };
        // Insertion order must match forward-pass consumption order:
        // interleaved (v_i, e_i), then d heads, then s heads.
        for i in 0..map.v_pos.len() {
            head(&mut heads, format!("head.v{i}"), 1);
            head(&mut heads, format!("head.e{i}"), map.e_slices[i].len());
        }
        for (i, s) in map.d_slices.iter().enumerate() {
            head(&mut heads, format!("head.d{i}"), s.len());
        }
        for (i, s) in map.s_slices.iter().enumerate() {
            head(&mut heads, format!("head.s{i}"), s.len());
        }
        Self { trunk, heads, map, noise_dim, temperature }
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.spec.input_dim
    }

    pub fn bind(&self, g: &mut Graph) -> GenBound {
        GenBound {
            trunk: self.trunk.bind(g),
            heads: self.heads.iter().map(|(_, v)| g.input(v.clone())).collect(),
        }
    }

    pub fn bind_frozen(&self, g: &mut Graph) -> GenBound {
        GenBound {
            trunk: self.trunk.bind_frozen(g),
            heads: self.heads.iter().map(|(_, v)| g.constant(v.clone())).collect(),
        }
    }

    /// Forward `(x_tilde | s_bar | z)` through trunk and heads; the output
    /// slices line up with the re-representation slice map.
    pub fn forward<R: Rng>(
        &mut self,
        g: &mut Graph,
        bound: &GenBound,
        input: NodeId,
        opts: &mut ForwardOpts<'_, R>,
    ) -> Result<GenForward> {
        let h3 = self.trunk.forward(g, &bound.trunk, input, opts)?;
        let mut parts: Vec<NodeId> = Vec::new();
        let mut s_logits = Vec::new();
        let mut head_idx = 0;
        let mut run_head = |g: &mut Graph, slice: Range<usize>, bound: &GenBound| -> NodeId {
            let w = bound.heads[head_idx];
            let b = bound.heads[head_idx + 1];
            head_idx += 2;
            let segment = g.slice_cols(h3, slice.start, slice.len());
            g.linear(segment, w, b)
        };
        for c in 0..self.map.v_pos.len() {
            let v_logit = run_head(g, self.map.v_pos[c]..self.map.v_pos[c] + 1, bound);
            parts.push(g.tanh(v_logit));
            let e_logit = run_head(g, self.map.e_slices[c].clone(), bound);
            parts.push(gumbel(g, e_logit, self.temperature, opts));
        }
        for slice in self.map.d_slices.clone() {
            let logit = run_head(g, slice, bound);
            parts.push(gumbel(g, logit, self.temperature, opts));
        }
        for slice in self.map.s_slices.clone() {
            let logit = run_head(g, slice, bound);
            s_logits.push(logit);
            parts.push(gumbel(g, logit, self.temperature, opts));
        }
        Ok(GenForward { output: g.concat_cols(&parts), s_logits })
    }
}

fn gumbel<R: Rng>(g: &mut Graph, logits: NodeId, tau: f64, opts: &mut ForwardOpts<'_, R>) -> NodeId {
    match opts.gumbel {
        GumbelVariant::HardST => g.gumbel_softmax(logits, tau, true, opts.rng),
        GumbelVariant::Soft => g.gumbel_softmax(logits, tau, false, opts.rng),
    }
}

/// The critic over `(candidate, x_tilde, candidate - x_tilde)` triplets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorNet {
    pub net: Net,
}

impl DiscriminatorNet {
    pub fn new(rerep_width: usize, seed: u64) -> Self {
        let spec = NetSpec {
            input_dim: 3 * rerep_width,
            layers: vec![
                LayerSpec::Linear { out: 256 },
                LayerSpec::LeakyRelu { slope: 0.2 },
                LayerSpec::Dropout { rate: 0.5 },
                LayerSpec::Linear { out: 256 },
                LayerSpec::LeakyRelu { slope: 0.2 },
                LayerSpec::Dropout { rate: 0.5 },
                LayerSpec::Linear { out: 1 },
            ],
        };
        Self { net: Net::new(spec, "disc", seed) }
    }
}

/// Per-epoch comparability ratios of raw generations against their sources.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRatios {
    pub epoch: usize,
    /// Fraction with generated sensitive block equal to the requested one.
    pub sensitive: f64,
    /// Fraction within the discrete budget of the source.
    pub discrete: f64,
    /// Fraction within the continuous budget of the source.
    pub continuous: f64,
    /// Fraction satisfying all three at once.
    pub all: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub epochs: Vec<EpochRatios>,
}

impl ConvergenceTrace {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,sensitive_ratio,discrete_ratio,continuous_ratio,all_ratio")?;
        for e in &self.epochs {
            writeln!(
                w,
                "{},{:.6},{:.6},{:.6},{:.6}",
                e.epoch, e.sensitive, e.discrete, e.continuous, e.all
            )?;
        }
        Ok(())
    }

    pub fn last(&self) -> Option<&EpochRatios> {
        self.epochs.last()
    }
}

/// Adversarial training over the mined comparable pairs.
///
/// Each batch of pairs `(x, x')` takes one critic step and one generator
/// step. The critic minimizes `mean d(fake) - mean d(real) + gp`, with the
/// gradient penalty evaluated on random interpolates between real and fake
/// triplets. The generator minimizes the summed sensitive-head cross-entropy
/// against `s_{x'}` minus the critic score of its fakes.
pub fn train_generator(
    dataset: &EncodedDataset,
    gmms: &[ColumnGMM],
    pairs: &[ComparablePair],
    cfg: &ComparabilityConfig,
    hp: &GanHyperparams,
) -> Result<(GeneratorNet, DiscriminatorNet, ConvergenceTrace)> {
    hp.validate()?;
    if pairs.is_empty() {
        return Err(Error::Contract(
            "cannot estimate the comparable-sample distribution from zero pairs".into(),
        ));
    }
    let map = SliceMap::for_dataset(dataset, gmms);
    let mut generator =
        GeneratorNet::new(map.clone(), hp.noise_dim, hp.gumbel_temperature, hp.seed);
    let mut discriminator = DiscriminatorNet::new(map.width, hp.seed.wrapping_add(1));

    // Mode assignments are sampled once; epochs then reuse this encoding.
    let mut rerep_rng = crate::rng::stream(hp.seed, "gan-rerep");
    let x_tilde = rerepresent_dataset(dataset, gmms, &map, EncodeMode::Sample, &mut rerep_rng);

    let mut g_opt_trunk = OptimState::new(
        OptimKind::Adam {
            lr: hp.lr_g,
            beta1: hp.adam_beta1,
            beta2: hp.adam_beta2,
            eps: 1e-8,
            weight_decay: hp.weight_decay_g,
        },
        &generator.trunk.params,
    );
    let mut g_opt_heads = OptimState::new(
        OptimKind::Adam {
            lr: hp.lr_g,
            beta1: hp.adam_beta1,
            beta2: hp.adam_beta2,
            eps: 1e-8,
            weight_decay: hp.weight_decay_g,
        },
        &generator.heads,
    );
    let mut d_opt = OptimState::new(
        OptimKind::Adam {
            lr: hp.lr_d,
            beta1: hp.adam_beta1,
            beta2: hp.adam_beta2,
            eps: 1e-8,
            weight_decay: hp.weight_decay_d,
        },
        &discriminator.net.params,
    );

    let mut trace = ConvergenceTrace::default();
    let batch = hp.batch.min(pairs.len()).max(1);

    for epoch in 0..hp.epochs {
        let mut epoch_d_loss = 0.0;
        let mut epoch_ce = 0.0;
        let mut epoch_adv = 0.0;
        let mut epoch_batches = 0usize;
        let mut epoch_rng = crate::rng::substream(hp.seed, "gan-epoch", epoch as u64);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut epoch_rng);

        for chunk in order.chunks(batch) {
            if chunk.len() < 2 {
                continue;
            }
            // Orientation of each pair is randomized; x is the source, x'
            // supplies the requested sensitive block and the real partner.
            let (src, partner): (Vec<usize>, Vec<usize>) = chunk
                .iter()
                .map(|&p| {
                    let pair = &pairs[p];
                    if epoch_rng.gen::<bool>() {
                        (pair.i as usize, pair.j as usize)
                    } else {
                        (pair.j as usize, pair.i as usize)
                    }
                })
                .unzip();
            let b = src.len();
            let xt = select_rows(&x_tilde, &src);
            let xt_partner = select_rows(&x_tilde, &partner);
            let s_bar = select_rows_of(&dataset.sensitive, &partner);

            // Critic step: generator frozen.
            {
                let mut g = Graph::new();
                let gen_bound = generator.bind_frozen(&mut g);
                let noise = gaussian(b, hp.noise_dim, &mut epoch_rng);
                let gen_in = {
                    let xt_n = g.constant(xt.clone());
                    let sb_n = g.constant(s_bar.clone());
                    let z_n = g.constant(noise);
                    g.concat_cols(&[xt_n, sb_n, z_n])
                };
                let mut opts = ForwardOpts {
                    mode: Mode::Train,
                    gumbel: GumbelVariant::HardST,
                    rng: &mut epoch_rng,
                };
                let fake_out = generator.forward(&mut g, &gen_bound, gen_in, &mut opts)?;
                let fake_triplet = triplet_values(g.value(fake_out.output), &xt);
                let real_triplet = triplet_values(&xt_partner, &xt);

                let d_bound = discriminator.net.bind(&mut g);
                let fake_in = g.constant(fake_triplet.clone());
                let real_in = g.constant(real_triplet.clone());
                let d_fake = discriminator.net.forward(
                    &mut g,
                    &d_bound,
                    fake_in,
                    &mut ForwardOpts {
                        mode: Mode::Train,
                        gumbel: GumbelVariant::HardST,
                        rng: &mut epoch_rng,
                    },
                )?;
                let d_real = discriminator.net.forward(
                    &mut g,
                    &d_bound,
                    real_in,
                    &mut ForwardOpts {
                        mode: Mode::Train,
                        gumbel: GumbelVariant::HardST,
                        rng: &mut epoch_rng,
                    },
                )?;
                let mean_fake = g.mean_all(d_fake);
                let mean_real = g.mean_all(d_real);
                let wgan = g.sub(mean_fake, mean_real);

                // Gradient penalty on interpolates between real and fake.
                let mut interp = real_triplet;
                for (i, mut row) in interp.rows_mut().into_iter().enumerate() {
                    let u: f64 = epoch_rng.gen();
                    let fake_row = fake_triplet.row(i);
                    for (a, &f) in row.iter_mut().zip(fake_row.iter()) {
                        *a = u * *a + (1.0 - u) * f;
                    }
                }
                let x_int = g.input(interp);
                let d_int = discriminator.net.forward(
                    &mut g,
                    &d_bound,
                    x_int,
                    &mut ForwardOpts {
                        mode: Mode::Train,
                        gumbel: GumbelVariant::HardST,
                        rng: &mut epoch_rng,
                    },
                )?;
                let int_sum = g.sum_all(d_int);
                let grad_int = g.backward(int_sum, &[x_int])[0]
                    .ok_or_else(|| Error::Numeric("no gradient on interpolates".into()))?;
                let sq = g.square(grad_int);
                let row_sq = g.sum_cols(sq);
                let row_sq_eps = g.affine(row_sq, 1.0, 1e-12);
                let norm = g.sqrt(row_sq_eps);
                let centered = g.affine(norm, 1.0, -1.0);
                let pen_rows = g.square(centered);
                let pen = g.mean_all(pen_rows);
                let pen_scaled = g.affine(pen, hp.grad_penalty, 0.0);
                let d_loss = g.add(wgan, pen_scaled);

                let loss_value = g.scalar(d_loss);
                if !loss_value.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite critic loss {loss_value} at epoch {epoch}"
                    )));
                }
                epoch_d_loss += loss_value;
                let grads = g.backward(d_loss, &d_bound.ids);
                let grad_values: Vec<Option<Array2<f64>>> =
                    grads.iter().map(|o| o.map(|id| g.value(id).clone())).collect();
                d_opt.step(&mut discriminator.net.params, &grad_values);
            }

            // Generator step: critic frozen, fresh noise.
            {
                let mut g = Graph::new();
                let gen_bound = generator.bind(&mut g);
                let noise = gaussian(b, hp.noise_dim, &mut epoch_rng);
                let gen_in = {
                    let xt_n = g.constant(xt.clone());
                    let sb_n = g.constant(s_bar.clone());
                    let z_n = g.constant(noise);
                    g.concat_cols(&[xt_n, sb_n, z_n])
                };
                let mut opts = ForwardOpts {
                    mode: Mode::Train,
                    gumbel: GumbelVariant::HardST,
                    rng: &mut epoch_rng,
                };
                let fake_out = generator.forward(&mut g, &gen_bound, gen_in, &mut opts)?;

                // CE over every sensitive head against the requested block.
                let mut ce_total: Option<NodeId> = None;
                for (f, logits) in fake_out.s_logits.iter().enumerate() {
                    let slice = &generator.map.s_slices[f];
                    let local = slice.start - generator.map.sensitive_start();
                    let target =
                        s_bar.slice(ndarray::s![.., local..local + slice.len()]).to_owned();
                    let ce = cross_entropy_logits(&mut g, *logits, &target);
                    ce_total = Some(match ce_total {
                        None => ce,
                        Some(prev) => g.add(prev, ce),
                    });
                }
                let ce_total = ce_total.expect("at least one sensitive feature");
                let ce_scaled = g.affine(ce_total, hp.ce_weight, 0.0);

                let xt_n = g.constant(xt.clone());
                let diff = g.sub(fake_out.output, xt_n);
                let fake_triplet = g.concat_cols(&[fake_out.output, xt_n, diff]);
                let d_bound = discriminator.net.bind_frozen(&mut g);
                let mut d_opts = ForwardOpts {
                    mode: Mode::Train,
                    gumbel: GumbelVariant::HardST,
                    rng: &mut epoch_rng,
                };
                let d_fake =
                    discriminator.net.forward(&mut g, &d_bound, fake_triplet, &mut d_opts)?;
                let mean_fake = g.mean_all(d_fake);
                let neg_fake = g.affine(mean_fake, -1.0, 0.0);
                let g_loss = g.add(ce_scaled, neg_fake);

                let loss_value = g.scalar(g_loss);
                if !loss_value.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite generator loss {loss_value} at epoch {epoch}"
                    )));
                }
                epoch_ce += g.scalar(ce_scaled);
                epoch_adv += g.scalar(neg_fake);
                epoch_batches += 1;
                let n_trunk = generator.trunk.params.len();
                let all_ids: Vec<NodeId> = gen_bound
                    .trunk
                    .ids
                    .iter()
                    .chain(gen_bound.heads.iter())
                    .copied()
                    .collect();
                let grads = g.backward(g_loss, &all_ids);
                let to_values = |ids: &[Option<NodeId>]| -> Vec<Option<Array2<f64>>> {
                    ids.iter().map(|o| o.map(|id| g.value(id).clone())).collect()
                };
                g_opt_trunk.step(&mut generator.trunk.params, &to_values(&grads[..n_trunk]));
                g_opt_heads.step(&mut generator.heads, &to_values(&grads[n_trunk..]));
            }
        }

        let ratios = probe_ratios(&mut generator, dataset, gmms, &x_tilde, cfg, hp, epoch)?;
        if epoch_batches > 0 {
            log::debug!(
                "epoch {epoch}: d_loss {:.4} g_ce {:.4} g_adv {:.4} | sens {:.3} disc {:.3} cont {:.3}",
                epoch_d_loss / epoch_batches as f64,
                epoch_ce / epoch_batches as f64,
                epoch_adv / epoch_batches as f64,
                ratios.sensitive,
                ratios.discrete,
                ratios.continuous,
            );
        }
        trace.epochs.push(ratios);
    }

    Ok((generator, discriminator, trace))
}

fn gaussian<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

fn triplet_values(candidate: &Array2<f64>, base: &Array2<f64>) -> Array2<f64> {
    let diff = candidate - base;
    ndarray::concatenate(Axis(1), &[candidate.view(), base.view(), diff.view()])
        .expect("triplet assembly")
}

fn select_rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), x.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&x.row(i));
    }
    out
}

fn select_rows_of(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    select_rows(x, idx)
}

/// Measure comparability ratios of fresh generations on a probe subset.
fn probe_ratios(
    generator: &mut GeneratorNet,
    dataset: &EncodedDataset,
    gmms: &[ColumnGMM],
    x_tilde: &Array2<f64>,
    cfg: &ComparabilityConfig,
    hp: &GanHyperparams,
    epoch: usize,
) -> Result<EpochRatios> {
    let mut rng = crate::rng::substream(hp.seed, "gan-trace", epoch as u64);
    let n = dataset.n_rows();
    let probe: Vec<usize> = {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        all.truncate(2048.min(n));
        all
    };
    let combos = sensitive_combinations(&dataset.sensitive_slices);
    if combos.len() < 2 {
        return Err(Error::Contract("need at least two sensitive combinations".into()));
    }
    let mut requested: Vec<Vec<u32>> = Vec::with_capacity(probe.len());
    for &i in &probe {
        let current: Vec<u32> = (0..dataset.sensitive_slices.len())
            .map(|f| dataset.sensitive_code(i, f))
            .collect();
        let choices: Vec<&Vec<u32>> = combos.iter().filter(|c| **c != current).collect();
        requested.push((*choices[rng.gen_range(0..choices.len())]).clone());
    }
    let generated =
        generate_batch_decoded(generator, x_tilde, &probe, &requested, dataset, gmms, &mut rng)?;

    let mut sens_ok = 0usize;
    let mut disc_ok = 0usize;
    let mut cont_ok = 0usize;
    let mut all_ok = 0usize;
    for (k, &i) in probe.iter().enumerate() {
        let s_match = (0..dataset.sensitive_slices.len()).all(|f| {
            argmax_code(generated.sensitive.row(k), &generated.sensitive_slices[f])
                == requested[k][f]
        });
        let d_diff = (0..dataset.discrete_slices.len())
            .filter(|&f| {
                argmax_code(generated.discrete.row(k), &generated.discrete_slices[f])
                    != dataset.discrete_code(i, f)
            })
            .count();
        let d_within = d_diff <= cfg.t_d;
        let c_within = (0..dataset.n_continuous())
            .all(|c| (generated.continuous[[k, c]] - dataset.continuous[[i, c]]).abs() <= cfg.t_c);
        sens_ok += usize::from(s_match);
        disc_ok += usize::from(d_within);
        cont_ok += usize::from(c_within);
        all_ok += usize::from(s_match && d_within && c_within);
    }
    let denom = probe.len() as f64;
    Ok(EpochRatios {
        epoch,
        sensitive: sens_ok as f64 / denom,
        discrete: disc_ok as f64 / denom,
        continuous: cont_ok as f64 / denom,
        all: all_ok as f64 / denom,
    })
}

/// One pass of raw sampling: for every row, every sensitive combination
/// except the row's own, one generated row. `iterations` repeats the pass
/// with fresh noise.
pub fn sample_raw(
    generator: &mut GeneratorNet,
    dataset: &EncodedDataset,
    gmms: &[ColumnGMM],
    iterations: usize,
    seed: u64,
) -> Result<AntidoteSet> {
    assert!(iterations > 0, "iterations must be positive");
    let map = generator.map.clone();
    let mut rerep_rng = crate::rng::stream(seed, "sample-rerep");
    // Deterministic mode selection keeps sampling reproducible given the
    // noise stream alone.
    let x_tilde =
        rerepresent_dataset(dataset, gmms, &map, EncodeMode::Deterministic, &mut rerep_rng);
    let combos = sensitive_combinations(&dataset.sensitive_slices);
    let n = dataset.n_rows();

    let mut out = AntidoteSet::empty_like(dataset);
    let mut pending_sources: Vec<usize> = Vec::new();
    let mut pending_requested: Vec<Vec<u32>> = Vec::new();
    let batch = 4096usize;

    for it in 0..iterations {
        let mut rng = crate::rng::substream(seed, "sample-noise", it as u64);
        for i in 0..n {
            let current: Vec<u32> = (0..dataset.sensitive_slices.len())
                .map(|f| dataset.sensitive_code(i, f))
                .collect();
            for combo in &combos {
                if *combo == current {
                    continue;
                }
                pending_sources.push(i);
                pending_requested.push(combo.clone());
                if pending_sources.len() == batch {
                    flush_generated(
                        generator,
                        &x_tilde,
                        &pending_sources,
                        &pending_requested,
                        dataset,
                        gmms,
                        &mut rng,
                        &mut out,
                    )?;
                    pending_sources.clear();
                    pending_requested.clear();
                }
            }
        }
        if !pending_sources.is_empty() {
            flush_generated(
                generator,
                &x_tilde,
                &pending_sources,
                &pending_requested,
                dataset,
                gmms,
                &mut rng,
                &mut out,
            )?;
            pending_sources.clear();
            pending_requested.clear();
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn flush_generated<R: Rng>(
    generator: &mut GeneratorNet,
    x_tilde: &Array2<f64>,
    sources: &[usize],
    requested: &[Vec<u32>],
    dataset: &EncodedDataset,
    gmms: &[ColumnGMM],
    rng: &mut R,
    out: &mut AntidoteSet,
) -> Result<()> {
    let decoded = generate_batch_decoded(generator, x_tilde, sources, requested, dataset, gmms, rng)?;
    out.append(&decoded);
    Ok(())
}

/// Generate and decode a batch straight into an [`AntidoteSet`].
#[allow(clippy::too_many_arguments)]
fn generate_batch_decoded<R: Rng>(
    generator: &mut GeneratorNet,
    x_tilde: &Array2<f64>,
    sources: &[usize],
    requested: &[Vec<u32>],
    dataset: &EncodedDataset,
    gmms: &[ColumnGMM],
    rng: &mut R,
) -> Result<AntidoteSet> {
    let b = sources.len();
    let map = generator.map.clone();
    let sens_width = map.sensitive_width();
    let xt = select_rows(x_tilde, sources);
    let mut s_bar = Array2::zeros((b, sens_width));
    let start = map.sensitive_start();
    for (r, req) in requested.iter().enumerate() {
        for (f, &code) in req.iter().enumerate() {
            s_bar[[r, map.s_slices[f].start - start + code as usize]] = 1.0;
        }
    }
    let noise = gaussian(b, generator.noise_dim, rng);

    let mut g = Graph::new();
    let bound = generator.bind_frozen(&mut g);
    let xt_n = g.constant(xt);
    let sb_n = g.constant(s_bar);
    let z_n = g.constant(noise);
    let input = g.concat_cols(&[xt_n, sb_n, z_n]);
    let mut opts = ForwardOpts { mode: Mode::Eval, gumbel: GumbelVariant::HardST, rng };
    let fwd = generator.forward(&mut g, &bound, input, &mut opts)?;
    let values = g.value(fwd.output).clone();

    let mut set = AntidoteSet::empty_like(dataset);
    let n_c = dataset.n_continuous();
    let mut continuous = Array2::zeros((b, n_c));
    let mut discrete = Array2::zeros((b, dataset.discrete.ncols()));
    let mut sensitive = Array2::zeros((b, dataset.sensitive.ncols()));
    let mut labels = Vec::with_capacity(b);
    for r in 0..b {
        let (cont, disc, sens) = decode_rerep(values.row(r), gmms, &map)?;
        for (c, &v) in cont.iter().enumerate() {
            continuous[[r, c]] = v;
        }
        for (f, &code) in disc.iter().enumerate() {
            discrete[[r, dataset.discrete_slices[f].start + code as usize]] = 1.0;
        }
        for (f, &code) in sens.iter().enumerate() {
            sensitive[[r, dataset.sensitive_slices[f].start + code as usize]] = 1.0;
        }
        labels.push(dataset.labels[sources[r]]);
    }
    set.continuous = continuous;
    set.discrete = discrete;
    set.sensitive = sensitive;
    set.labels = labels;
    set.source = sources.iter().map(|&s| s as u32).collect();
    set.requested = requested.to_vec();
    Ok(set)
}

/// Keep only generated rows comparable to their source; optionally also
/// require the generated sensitive block to equal the requested one. Labels
/// were copied from sources at generation time.
pub fn post_filter(
    raw: &AntidoteSet,
    dataset: &EncodedDataset,
    cfg: &ComparabilityConfig,
    require_requested_sensitive: bool,
) -> AntidoteSet {
    let mut keep = Vec::new();
    for r in 0..raw.len() {
        let src = raw.source[r] as usize;
        if !is_comparable(&raw.row(r), &dataset.row(src), cfg) {
            continue;
        }
        if require_requested_sensitive {
            let matches = raw.requested[r].iter().enumerate().all(|(f, &code)| {
                argmax_code(raw.sensitive.row(r), &raw.sensitive_slices[f]) == code
            });
            if !matches {
                continue;
            }
        }
        keep.push(r);
    }
    raw.select(&keep)
}

/// Every combination of sensitive value indices, in declaration order.
pub fn sensitive_combinations(slices: &[Range<usize>]) -> Vec<Vec<u32>> {
    let mut combos: Vec<Vec<u32>> = vec![Vec::new()];
    for slice in slices {
        let mut next = Vec::with_capacity(combos.len() * slice.len());
        for combo in &combos {
            for v in 0..slice.len() as u32 {
                let mut c = combo.clone();
                c.push(v);
                next.push(c);
            }
        }
        combos = next;
    }
    combos
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comparability::mine_pairs;
    use crate::data::encode_train;
    use crate::gmm::{fit_all_gmms, GmmFitOptions};

    fn fixture(rows: usize) -> (EncodedDataset, Vec<ColumnGMM>, Vec<ComparablePair>) {
        let raw = crate::synthetic::generate(rows, 42);
        let (ds, _) = encode_train(&raw, &crate::synthetic::schema());
        let gmms = fit_all_gmms(&ds, &GmmFitOptions::default(), 0);
        let pairs = mine_pairs(&ds, &ComparabilityConfig { t_d: 1, t_c: 0.05 }).unwrap();
        (ds, gmms, pairs)
    }

    fn tiny_hp() -> GanHyperparams {
        GanHyperparams { batch: 256, epochs: 1, noise_dim: 8, seed: 7, ..Default::default() }
    }

    #[test]
    fn untrained_generator_emits_valid_rows() {
        let (ds, gmms, _) = fixture(220);
        let map = SliceMap::for_dataset(&ds, &gmms);
        let mut generator = GeneratorNet::new(map, 8, 0.2, 3);
        let raw = sample_raw(&mut generator, &ds, &gmms, 1, 11).unwrap();
        // Two binary sensitive features: 4 combinations, 3 requested per row.
        assert_eq!(raw.len(), 3 * ds.n_rows());
        for r in 0..raw.len() {
            for c in 0..raw.continuous.ncols() {
                let v = raw.continuous[[r, c]];
                assert!((0.0..=1.0).contains(&v), "continuous {v} out of range");
            }
            for slice in raw.discrete_slices.iter() {
                let s: f64 = raw.discrete.row(r).slice(ndarray::s![slice.clone()]).sum();
                assert_eq!(s, 1.0);
            }
            for slice in raw.sensitive_slices.iter() {
                let s: f64 = raw.sensitive.row(r).slice(ndarray::s![slice.clone()]).sum();
                assert_eq!(s, 1.0);
            }
            // Labels copied from sources.
            assert_eq!(raw.labels[r], ds.labels[raw.source[r] as usize]);
        }
    }

    #[test]
    fn sample_counts_follow_the_combination_formula() {
        // Sensitive features with 2 and 3 values: 2 * 3 - 1 = 5 rows per
        // source per iteration.
        let d_slices = crate::data::feature_slices([2usize].into_iter());
        let s_slices = crate::data::feature_slices([2usize, 3].into_iter());
        let n = 10;
        let mut d = Array2::zeros((n, 2));
        let mut s = Array2::zeros((n, 5));
        for i in 0..n {
            d[[i, i % 2]] = 1.0;
            s[[i, i % 2]] = 1.0;
            s[[i, 2 + i % 3]] = 1.0;
        }
        let ds = EncodedDataset {
            continuous: Array2::from_shape_fn((n, 1), |(i, _)| i as f64 / n as f64),
            discrete: d,
            sensitive: s,
            labels: vec![1; n],
            split: Split::Train,
            discrete_slices: d_slices,
            sensitive_slices: s_slices,
        };
        let gmms = fit_all_gmms(&ds, &GmmFitOptions::default(), 0);
        let map = SliceMap::for_dataset(&ds, &gmms);
        let mut generator = GeneratorNet::new(map, 4, 0.2, 0);
        let raw = sample_raw(&mut generator, &ds, &gmms, 1, 0).unwrap();
        assert_eq!(raw.len(), 5 * n);
        let two = sample_raw(&mut generator, &ds, &gmms, 2, 0).unwrap();
        assert_eq!(two.len(), 10 * n);
    }

    #[test]
    fn post_filter_keeps_only_comparable_rows() {
        let (ds, gmms, _) = fixture(150);
        let map = SliceMap::for_dataset(&ds, &gmms);
        let mut generator = GeneratorNet::new(map, 8, 0.2, 5);
        let raw = sample_raw(&mut generator, &ds, &gmms, 1, 13).unwrap();
        let cfg = ComparabilityConfig { t_d: 1, t_c: 0.05 };
        let filtered = post_filter(&raw, &ds, &cfg, false);
        assert!(filtered.len() <= raw.len());
        for r in 0..filtered.len() {
            let src = filtered.source[r] as usize;
            assert!(is_comparable(&filtered.row(r), &ds.row(src), &cfg));
        }
        // Strict variant additionally pins the sensitive block.
        let strict = post_filter(&raw, &ds, &cfg, true);
        for r in 0..strict.len() {
            for (f, slice) in strict.sensitive_slices.iter().enumerate() {
                assert_eq!(argmax_code(strict.sensitive.row(r), slice), strict.requested[r][f]);
            }
        }
    }

    #[test]
    fn empty_raw_input_filters_to_empty() {
        let (ds, _, _) = fixture(60);
        let raw = AntidoteSet::empty_like(&ds);
        let filtered = post_filter(&raw, &ds, &ComparabilityConfig::default(), false);
        assert!(filtered.is_empty());
    }

    #[test]
    fn training_is_bit_reproducible_under_a_fixed_seed() {
        let (ds, gmms, pairs) = fixture(200);
        let cfg = ComparabilityConfig { t_d: 1, t_c: 0.05 };
        let hp = tiny_hp();
        let (g1, d1, t1) = train_generator(&ds, &gmms, &pairs, &cfg, &hp).unwrap();
        let (g2, d2, t2) = train_generator(&ds, &gmms, &pairs, &cfg, &hp).unwrap();
        assert_eq!(g1.trunk.params, g2.trunk.params);
        assert_eq!(g1.heads, g2.heads);
        assert_eq!(d1.net.params, d2.net.params);
        assert_eq!(t1, t2);
    }

    #[test]
    fn empty_pair_list_is_rejected() {
        let (ds, gmms, _) = fixture(60);
        let err = train_generator(
            &ds,
            &gmms,
            &[],
            &ComparabilityConfig::default(),
            &tiny_hp(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn truncate_random_hits_the_target_size() {
        let (ds, gmms, _) = fixture(80);
        let map = SliceMap::for_dataset(&ds, &gmms);
        let mut generator = GeneratorNet::new(map, 8, 0.2, 1);
        let mut raw = sample_raw(&mut generator, &ds, &gmms, 1, 1).unwrap();
        let mut rng = crate::rng::stream(0, "trunc");
        raw.truncate_random(17, &mut rng);
        assert_eq!(raw.len(), 17);
        assert_eq!(raw.source.len(), 17);
        assert_eq!(raw.requested.len(), 17);
    }

    #[test]
    fn antidote_csv_has_provenance_columns() {
        let (ds, gmms, _) = fixture(30);
        let map = SliceMap::for_dataset(&ds, &gmms);
        let mut generator = GeneratorNet::new(map, 8, 0.2, 2);
        let raw = sample_raw(&mut generator, &ds, &gmms, 1, 2).unwrap();
        let mut buf = Vec::new();
        raw.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("source,requested,label,"));
        assert_eq!(text.lines().count(), raw.len() + 1);
    }
}
