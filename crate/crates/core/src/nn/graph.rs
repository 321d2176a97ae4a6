//! Reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! A [`Graph`] is an append-only tape of eagerly evaluated nodes. Every
//! primitive op knows how to emit its vector-Jacobian product *as new graph
//! nodes*, so [`Graph::backward`] returns gradients that are themselves
//! differentiable — calling `backward` on an expression built from an earlier
//! gradient yields second-order gradients. That is how the discriminator's
//! gradient penalty propagates into parameter updates.
//!
//! Node ids are topologically ordered by construction; a single reverse sweep
//! from the loss node accumulates all gradients.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use std::rc::Rc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { ta: bool, tb: bool },
    Add,
    Sub,
    Mul,
    /// Elementwise `a * x + b`; only the slope matters on the way back.
    Affine { a: f64 },
    Recip,
    Sqrt,
    Square,
    Ln,
    Exp,
    Tanh,
    Sigmoid,
    Relu,
    LeakyRelu { slope: f64 },
    /// Elementwise product with a constant mask (dropout, activation gates).
    MaskMul { mask: Rc<Array2<f64>> },
    ConcatCols { widths: Vec<usize> },
    SliceCols { start: usize },
    /// Embed into a zero matrix of wider column count at `start`.
    PadCols { start: usize },
    /// `1 x d` -> `n x d`.
    BroadcastRows,
    /// `n x 1` -> `n x d`.
    BroadcastCols,
    /// `n x d` -> `1 x d`.
    SumRows,
    /// `n x d` -> `n x 1`.
    SumCols,
    /// -> `1 x 1`.
    SumAll,
    /// Straight-through categorical sample: hard one-hot forward, softmax
    /// jacobian at the captured soft sample on the way back.
    GumbelST { soft: Rc<Array2<f64>> },
}

struct Node {
    value: Array2<f64>,
    op: Op,
    parents: Vec<NodeId>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Row-chunked parallel matmul. Fixed chunk boundaries keep the result
/// bitwise identical for any thread count.
pub fn par_matmul(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    const CHUNK: usize = 512;
    let m = a.nrows();
    if m <= CHUNK {
        return a.dot(&b);
    }
    let blocks: Vec<Array2<f64>> = a
        .axis_chunks_iter(Axis(0), CHUNK)
        .into_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|chunk| chunk.dot(&b))
        .collect();
    let views: Vec<ArrayView2<'_, f64>> = blocks.iter().map(|b| b.view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("chunked matmul reassembly")
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.dim(), (1, 1), "expected a scalar node");
        v[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op, parents: Vec<NodeId>) -> NodeId {
        debug_assert!(value.iter().all(|v| v.is_finite()), "non-finite value out of {op:?}");
        let needs_grad = match op {
            Op::Leaf => false,
            _ => parents.iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node { value, op, parents, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf that receives gradients.
    pub fn input(&mut self, value: Array2<f64>) -> NodeId {
        let id = self.push(value, Op::Leaf, Vec::new());
        self.nodes[id.0].needs_grad = true;
        id
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf, Vec::new())
    }

    pub fn matmul_opts(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> NodeId {
        let av = self.value(a);
        let bv = self.value(b);
        let aview = if ta { av.t() } else { av.view() };
        let bview = if tb { bv.t() } else { bv.view() };
        assert_eq!(aview.ncols(), bview.nrows(), "matmul shape mismatch");
        let value = par_matmul(aview, bview);
        self.push(value, Op::Matmul { ta, tb }, vec![a, b])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.matmul_opts(a, b, false, false)
    }

    fn binary_same_shape(&mut self, a: NodeId, b: NodeId, op: Op) -> NodeId {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "shape mismatch in {op:?}");
        let value = match op {
            Op::Add => self.value(a) + self.value(b),
            Op::Sub => self.value(a) - self.value(b),
            Op::Mul => self.value(a) * self.value(b),
            _ => unreachable!(),
        };
        self.push(value, op, vec![a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_same_shape(a, b, Op::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_same_shape(a, b, Op::Sub)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_same_shape(a, b, Op::Mul)
    }

    pub fn affine(&mut self, x: NodeId, a: f64, b: f64) -> NodeId {
        let value = self.value(x).mapv(|v| a * v + b);
        self.push(value, Op::Affine { a }, vec![x])
    }

    pub fn recip(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).mapv(|v| 1.0 / v);
        self.push(value, Op::Recip, vec![x])
    }

    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).mapv(f64::sqrt);
        self.push(value, Op::Sqrt, vec![x])
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).mapv(|v| v * v);
        self.push(value, Op::Square, vec![x])
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).mapv(f64::ln);
        self.push(value, Op::Ln, vec![x])
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).mapv(f64::exp);
        self.push(value, Op::Exp, vec![x])
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).mapv(f64::tanh);
        self.push(value, Op::Tanh, vec![x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).mapv(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(value, Op::Sigmoid, vec![x])
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).mapv(|v| v.max(0.0));
        self.push(value, Op::Relu, vec![x])
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let value = self.value(x).mapv(|v| if v > 0.0 { v } else { slope * v });
        self.push(value, Op::LeakyRelu { slope }, vec![x])
    }

    pub fn mask_mul(&mut self, x: NodeId, mask: Rc<Array2<f64>>) -> NodeId {
        assert_eq!(self.value(x).dim(), mask.dim(), "mask shape mismatch");
        let value = self.value(x) * &*mask;
        self.push(value, Op::MaskMul { mask }, vec![x])
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).nrows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).ncols()).collect();
        let total: usize = widths.iter().sum();
        let mut value = Array2::zeros((rows, total));
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            assert_eq!(self.value(p).nrows(), rows, "concat row mismatch");
            value.slice_mut(ndarray::s![.., offset..offset + w]).assign(self.value(p));
            offset += w;
        }
        self.push(value, Op::ConcatCols { widths }, parts.to_vec())
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let value = self.value(x).slice(ndarray::s![.., start..start + len]).to_owned();
        self.push(value, Op::SliceCols { start }, vec![x])
    }

    pub fn pad_cols(&mut self, x: NodeId, start: usize, out_width: usize) -> NodeId {
        let xv = self.value(x);
        let mut value = Array2::zeros((xv.nrows(), out_width));
        value.slice_mut(ndarray::s![.., start..start + xv.ncols()]).assign(xv);
        self.push(value, Op::PadCols { start }, vec![x])
    }

    pub fn broadcast_rows(&mut self, x: NodeId, rows: usize) -> NodeId {
        let xv = self.value(x);
        assert_eq!(xv.nrows(), 1, "broadcast_rows expects a 1 x d node");
        let value = xv.broadcast((rows, xv.ncols())).unwrap().to_owned();
        self.push(value, Op::BroadcastRows, vec![x])
    }

    pub fn broadcast_cols(&mut self, x: NodeId, cols: usize) -> NodeId {
        let xv = self.value(x);
        assert_eq!(xv.ncols(), 1, "broadcast_cols expects an n x 1 node");
        let mut value = Array2::zeros((xv.nrows(), cols));
        for (i, mut row) in value.rows_mut().into_iter().enumerate() {
            row.fill(xv[[i, 0]]);
        }
        self.push(value, Op::BroadcastCols, vec![x])
    }

    pub fn sum_rows(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(value, Op::SumRows, vec![x])
    }

    pub fn sum_cols(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(value, Op::SumCols, vec![x])
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let value = Array2::from_elem((1, 1), self.value(x).sum());
        self.push(value, Op::SumAll, vec![x])
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x);
        self.affine(s, 1.0 / n, 0.0)
    }

    /// `x W + b` with `b` broadcast across rows.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let rows = self.value(x).nrows();
        let xw = self.matmul(x, w);
        let bb = self.broadcast_rows(b, rows);
        self.add(xw, bb)
    }

    /// Numerically stable softmax over each row. The row max is detached,
    /// which leaves the gradient unchanged.
    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let cols = self.value(x).ncols();
        let maxes = row_max(self.value(x));
        let m = self.constant(maxes);
        let mb = self.broadcast_cols(m, cols);
        let shifted = self.sub(x, mb);
        let e = self.exp(shifted);
        let s = self.sum_cols(e);
        let r = self.recip(s);
        let rb = self.broadcast_cols(r, cols);
        self.mul(e, rb)
    }

    /// Log-softmax over each row, same detached-max construction.
    pub fn log_softmax_rows(&mut self, x: NodeId) -> NodeId {
        let cols = self.value(x).ncols();
        let maxes = row_max(self.value(x));
        let m = self.constant(maxes);
        let mb = self.broadcast_cols(m, cols);
        let shifted = self.sub(x, mb);
        let e = self.exp(shifted);
        let s = self.sum_cols(e);
        let ls = self.ln(s);
        let lse = self.add(ls, m);
        let lseb = self.broadcast_cols(lse, cols);
        self.sub(x, lseb)
    }

    /// Gumbel-softmax over each row at temperature `tau`.
    ///
    /// `hard` emits an exact one-hot sample whose backward pass uses the soft
    /// sample's softmax jacobian (straight-through); otherwise the
    /// differentiable soft sample itself is returned.
    pub fn gumbel_softmax<R: Rng>(
        &mut self,
        logits: NodeId,
        tau: f64,
        hard: bool,
        rng: &mut R,
    ) -> NodeId {
        assert!(tau > 0.0, "gumbel temperature must be positive");
        let (rows, cols) = self.value(logits).dim();
        let noise = Array2::from_shape_fn((rows, cols), |_| {
            let u: f64 = rng.gen_range(1e-12..1.0);
            -(-u.ln()).ln()
        });
        self.gumbel_softmax_with_noise(logits, tau, hard, noise)
    }

    /// Deterministic variant for gradient checking: the caller supplies the
    /// Gumbel noise.
    pub fn gumbel_softmax_with_noise(
        &mut self,
        logits: NodeId,
        tau: f64,
        hard: bool,
        noise: Array2<f64>,
    ) -> NodeId {
        assert_eq!(self.value(logits).dim(), noise.dim(), "gumbel noise shape mismatch");
        let n = self.constant(noise);
        let shifted = self.add(logits, n);
        let scaled = self.affine(shifted, 1.0 / tau, 0.0);
        if !hard {
            return self.softmax_rows(scaled);
        }
        let soft = softmax_value(self.value(scaled));
        let mut hard_value = Array2::zeros(soft.dim());
        for (i, row) in soft.rows().into_iter().enumerate() {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            hard_value[[i, best]] = 1.0;
        }
        self.push(hard_value, Op::GumbelST { soft: Rc::new(soft) }, vec![scaled])
    }

    /// Reverse sweep from scalar node `y`; returns one gradient node per
    /// requested leaf (None when `y` does not depend on it). The returned
    /// nodes are ordinary graph nodes and can be differentiated again.
    pub fn backward(&mut self, y: NodeId, wrt: &[NodeId]) -> Vec<Option<NodeId>> {
        assert_eq!(self.value(y).dim(), (1, 1), "backward expects a scalar loss");
        let horizon = y.0;
        let mut grads: Vec<Option<NodeId>> = vec![None; horizon + 1];
        let seed = self.constant(Array2::ones((1, 1)));
        grads[y.0] = Some(seed);

        for id in (0..=horizon).rev() {
            let Some(g) = grads[id] else { continue };
            if !self.nodes[id].needs_grad {
                continue;
            }
            let op = self.nodes[id].op.clone();
            let parents = self.nodes[id].parents.clone();
            let contributions = self.vjp(id, &op, &parents, g);
            for (parent, contrib) in contributions {
                if !self.nodes[parent.0].needs_grad {
                    continue;
                }
                grads[parent.0] = Some(match grads[parent.0] {
                    None => contrib,
                    Some(prev) => self.add(prev, contrib),
                });
            }
        }

        wrt.iter()
            .map(|w| if w.0 <= horizon { grads[w.0] } else { None })
            .collect()
    }

    /// Emit the vector-Jacobian product of one node as new graph nodes.
    fn vjp(&mut self, id: usize, op: &Op, parents: &[NodeId], g: NodeId) -> Vec<(NodeId, NodeId)> {
        match op {
            Op::Leaf => Vec::new(),
            Op::Matmul { ta, tb } => {
                let (a, b) = (parents[0], parents[1]);
                let (da, db) = match (ta, tb) {
                    (false, false) => {
                        (self.matmul_opts(g, b, false, true), self.matmul_opts(a, g, true, false))
                    }
                    (true, false) => {
                        (self.matmul_opts(b, g, false, true), self.matmul_opts(a, g, false, false))
                    }
                    (false, true) => {
                        (self.matmul_opts(g, b, false, false), self.matmul_opts(g, a, true, false))
                    }
                    (true, true) => {
                        (self.matmul_opts(b, g, true, true), self.matmul_opts(g, a, true, true))
                    }
                };
                vec![(a, da), (b, db)]
            }
            Op::Add => vec![(parents[0], g), (parents[1], g)],
            Op::Sub => {
                let neg = self.affine(g, -1.0, 0.0);
                vec![(parents[0], g), (parents[1], neg)]
            }
            Op::Mul => {
                let da = self.mul(g, parents[1]);
                let db = self.mul(g, parents[0]);
                vec![(parents[0], da), (parents[1], db)]
            }
            Op::Affine { a } => {
                let dx = self.affine(g, *a, 0.0);
                vec![(parents[0], dx)]
            }
            Op::Recip => {
                let y2 = self.square(NodeId(id));
                let gy2 = self.mul(g, y2);
                let dx = self.affine(gy2, -1.0, 0.0);
                vec![(parents[0], dx)]
            }
            Op::Sqrt => {
                let inv = self.recip(NodeId(id));
                let half = self.affine(inv, 0.5, 0.0);
                let dx = self.mul(g, half);
                vec![(parents[0], dx)]
            }
            Op::Square => {
                let two_x = self.affine(parents[0], 2.0, 0.0);
                let dx = self.mul(g, two_x);
                vec![(parents[0], dx)]
            }
            Op::Ln => {
                let inv = self.recip(parents[0]);
                let dx = self.mul(g, inv);
                vec![(parents[0], dx)]
            }
            Op::Exp => {
                let dx = self.mul(g, NodeId(id));
                vec![(parents[0], dx)]
            }
            Op::Tanh => {
                let y2 = self.square(NodeId(id));
                let one_minus = self.affine(y2, -1.0, 1.0);
                let dx = self.mul(g, one_minus);
                vec![(parents[0], dx)]
            }
            Op::Sigmoid => {
                let one_minus = self.affine(NodeId(id), -1.0, 1.0);
                let y_one_minus = self.mul(NodeId(id), one_minus);
                let dx = self.mul(g, y_one_minus);
                vec![(parents[0], dx)]
            }
            Op::Relu => {
                let mask = self.value(parents[0]).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                let dx = self.mask_mul(g, Rc::new(mask));
                vec![(parents[0], dx)]
            }
            Op::LeakyRelu { slope } => {
                let s = *slope;
                let mask = self.value(parents[0]).mapv(|v| if v > 0.0 { 1.0 } else { s });
                let dx = self.mask_mul(g, Rc::new(mask));
                vec![(parents[0], dx)]
            }
            Op::MaskMul { mask } => {
                let dx = self.mask_mul(g, mask.clone());
                vec![(parents[0], dx)]
            }
            Op::ConcatCols { widths } => {
                let mut out = Vec::with_capacity(parents.len());
                let mut offset = 0;
                for (&p, &w) in parents.iter().zip(widths) {
                    let dp = self.slice_cols(g, offset, w);
                    out.push((p, dp));
                    offset += w;
                }
                out
            }
            Op::SliceCols { start } => {
                let parent_width = self.value(parents[0]).ncols();
                let dx = self.pad_cols(g, *start, parent_width);
                vec![(parents[0], dx)]
            }
            Op::PadCols { start } => {
                let len = self.value(parents[0]).ncols();
                let dx = self.slice_cols(g, *start, len);
                vec![(parents[0], dx)]
            }
            Op::BroadcastRows => {
                let dx = self.sum_rows(g);
                vec![(parents[0], dx)]
            }
            Op::BroadcastCols => {
                let dx = self.sum_cols(g);
                vec![(parents[0], dx)]
            }
            Op::SumRows => {
                let rows = self.value(parents[0]).nrows();
                let dx = self.broadcast_rows(g, rows);
                vec![(parents[0], dx)]
            }
            Op::SumCols => {
                let cols = self.value(parents[0]).ncols();
                let dx = self.broadcast_cols(g, cols);
                vec![(parents[0], dx)]
            }
            Op::SumAll => {
                let (rows, cols) = self.value(parents[0]).dim();
                let gr = self.broadcast_cols(g, cols);
                let dx = if rows == 1 { gr } else { broadcast_first_row(self, gr, rows) };
                vec![(parents[0], dx)]
            }
            Op::GumbelST { soft } => {
                // d logits = soft * (g - rowsum(g * soft)), soft held constant.
                let cols = soft.ncols();
                let s = self.constant((**soft).clone());
                let gs = self.mul(g, s);
                let row = self.sum_cols(gs);
                let rowb = self.broadcast_cols(row, cols);
                let centered = self.sub(g, rowb);
                let dx = self.mul(centered, s);
                vec![(parents[0], dx)]
            }
        }
    }
}

fn broadcast_first_row(g: &mut Graph, x: NodeId, rows: usize) -> NodeId {
    g.broadcast_rows(x, rows)
}

fn row_max(x: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), 1));
    for (i, row) in x.rows().into_iter().enumerate() {
        out[[i, 0]] = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    out
}

fn softmax_value(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean binary cross-entropy on logits, computed in the stable softplus form.
pub fn bce_with_logits(g: &mut Graph, logits: NodeId, targets: &Array2<f64>) -> NodeId {
    assert_eq!(g.value(logits).dim(), targets.dim());
    let zmax = g.value(logits).mapv(|v| v.max(0.0));
    let exp_neg_zmax = zmax.mapv(|v| (-v).exp());
    let m = g.constant(zmax);
    let e0 = g.constant(exp_neg_zmax);
    let zm = g.sub(logits, m);
    let ez = g.exp(zm);
    let inner = g.add(e0, ez);
    let ln_inner = g.ln(inner);
    let softplus = g.add(ln_inner, m);
    let t = g.constant(targets.clone());
    let tz = g.mul(t, logits);
    let per_row = g.sub(softplus, tz);
    g.mean_all(per_row)
}

/// Cross-entropy of row-wise logits against one-hot targets, averaged over
/// rows.
pub fn cross_entropy_logits(g: &mut Graph, logits: NodeId, targets: &Array2<f64>) -> NodeId {
    assert_eq!(g.value(logits).dim(), targets.dim());
    let rows = targets.nrows() as f64;
    let logp = g.log_softmax_rows(logits);
    let t = g.constant(targets.clone());
    let picked = g.mul(t, logp);
    let total = g.sum_all(picked);
    g.affine(total, -1.0 / rows, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn grad_value(g: &mut Graph, y: NodeId, x: NodeId) -> Array2<f64> {
        g.backward(y, &[x])[0].map(|id| g.value(id).clone()).unwrap()
    }

    #[test]
    fn matmul_all_transpose_combinations_match_reference() {
        let a = arr2(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let b = arr2(&[[1.0, -1.0, 0.5], [2.0, 0.0, -0.25]]);
        let mut g = Graph::new();
        let an = g.input(a.clone());
        let bn = g.input(b.clone());
        let c1 = g.matmul_opts(an, bn, false, false);
        assert_eq!(g.value(c1), &a.dot(&b));
        let c2 = g.matmul_opts(bn, an, true, true);
        assert_eq!(g.value(c2), &b.t().dot(&a.t()));
        let c3 = g.matmul_opts(an, an, true, false);
        assert_eq!(g.value(c3), &a.t().dot(&a));
        let c4 = g.matmul_opts(bn, bn, false, true);
        assert_eq!(g.value(c4), &b.dot(&b.t()));
    }

    #[test]
    fn simple_gradients() {
        // y = sum((2x + 1)^2), dy/dx = 4(2x + 1)
        let mut g = Graph::new();
        let x = g.input(arr2(&[[0.5, -1.0], [2.0, 0.0]]));
        let ax = g.affine(x, 2.0, 1.0);
        let sq = g.square(ax);
        let y = g.sum_all(sq);
        let dx = grad_value(&mut g, y, x);
        let expected = g.value(x).mapv(|v| 4.0 * (2.0 * v + 1.0));
        assert!(dx.iter().zip(expected.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn matmul_gradient_matches_outer_product_rule() {
        let mut g = Graph::new();
        let x = g.input(arr2(&[[1.0, 2.0], [3.0, 4.0]]));
        let w = g.input(arr2(&[[0.5], [-1.0]]));
        let y0 = g.matmul(x, w);
        let y = g.sum_all(y0);
        let dw = grad_value(&mut g, y, w);
        // d/dw sum(Xw) = column sums of X.
        assert_eq!(dw, arr2(&[[4.0], [6.0]]));
        let dx = grad_value(&mut g, y, x);
        assert_eq!(dx, arr2(&[[0.5, -1.0], [0.5, -1.0]]));
    }

    #[test]
    fn second_order_gradients_flow_through_backward() {
        // y = sum(x^3); z = sum((dy/dx)^2) = sum(9 x^4); dz/dx = 36 x^3.
        let mut g = Graph::new();
        let x = g.input(arr2(&[[1.0, 2.0], [-1.0, 0.5]]));
        let x2 = g.square(x);
        let x3 = g.mul(x2, x);
        let y = g.sum_all(x3);
        let dy = g.backward(y, &[x])[0].unwrap();
        let dy2 = g.square(dy);
        let z = g.sum_all(dy2);
        let dz = grad_value(&mut g, z, x);
        let expected = g.value(x).mapv(|v| 36.0 * v.powi(3));
        for (a, b) in dz.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn relu_and_leaky_relu_values() {
        let mut g = Graph::new();
        let x = g.input(arr2(&[[-1.0, 2.0]]));
        let r = g.relu(x);
        assert_eq!(g.value(r), &arr2(&[[0.0, 2.0]]));
        let l = g.leaky_relu(x, 0.2);
        assert_eq!(g.value(l), &arr2(&[[-0.2, 2.0]]));
    }

    #[test]
    fn concat_slice_roundtrip_and_gradients() {
        let mut g = Graph::new();
        let a = g.input(arr2(&[[1.0], [2.0]]));
        let b = g.input(arr2(&[[3.0, 4.0], [5.0, 6.0]]));
        let c = g.concat_cols(&[a, b]);
        assert_eq!(g.value(c), &arr2(&[[1.0, 3.0, 4.0], [2.0, 5.0, 6.0]]));
        let s = g.slice_cols(c, 1, 2);
        let sq = g.square(s);
        let y = g.sum_all(sq);
        let da = grad_value(&mut g, y, a);
        assert_eq!(da, arr2(&[[0.0], [0.0]]));
        let db = grad_value(&mut g, y, b);
        assert_eq!(db, arr2(&[[6.0, 8.0], [10.0, 12.0]]));
    }

    #[test]
    fn softmax_rows_is_a_distribution() {
        let mut g = Graph::new();
        let x = g.input(arr2(&[[1.0, 2.0, 3.0], [1000.0, 1000.0, 1000.0]]));
        let s = g.softmax_rows(x);
        for row in g.value(s).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert!((g.value(s)[[1, 0]] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn gumbel_hard_emits_exact_one_hots() {
        let mut g = Graph::new();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let logits = g.input(Array2::zeros((64, 5)));
        let out = g.gumbel_softmax(logits, 0.2, true, &mut rng);
        for row in g.value(out).rows() {
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            assert_eq!((ones, zeros), (1, 4));
        }
    }

    #[test]
    fn gumbel_extreme_logits_select_the_dominant_class() {
        let mut g = Graph::new();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut hits = 0;
        let trials = 10_000;
        let logits_val = Array2::from_shape_fn((trials, 2), |(_, j)| if j == 0 { 50.0 } else { -50.0 });
        let logits = g.input(logits_val);
        let out = g.gumbel_softmax(logits, 0.2, true, &mut rng);
        for row in g.value(out).rows() {
            if row[0] == 1.0 {
                hits += 1;
            }
        }
        assert!(hits as f64 / trials as f64 > 0.999);
    }

    #[test]
    fn gumbel_hard_sampling_distribution_matches_categorical() {
        // The argmax of logits + Gumbel noise is a categorical draw from
        // softmax(logits) regardless of temperature.
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let logits_row = [0.3, -0.8, 1.1];
        let trials = 100_000;
        let mut g = Graph::new();
        let logits =
            g.input(Array2::from_shape_fn((trials, 3), |(_, j)| logits_row[j]));
        let out = g.gumbel_softmax(logits, 0.2, true, &mut rng);
        let mut counts = [0usize; 3];
        for row in g.value(out).rows() {
            counts[row.iter().position(|&v| v == 1.0).unwrap()] += 1;
        }
        let z: f64 = logits_row.iter().map(|l| l.exp()).sum();
        let tv: f64 = counts
            .iter()
            .zip(logits_row.iter())
            .map(|(&c, &l)| (c as f64 / trials as f64 - l.exp() / z).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.02, "total variation {tv}");
    }

    #[test]
    fn bce_with_logits_matches_naive_formula() {
        let mut g = Graph::new();
        let z = g.input(arr2(&[[2.0], [-1.5], [0.0]]));
        let t = arr2(&[[1.0], [0.0], [1.0]]);
        let loss = bce_with_logits(&mut g, z, &t);
        let naive = |z: f64, t: f64| -t * sigmoid(z).ln() - (1.0 - t) * (1.0 - sigmoid(z)).ln();
        let expected = (naive(2.0, 1.0) + naive(-1.5, 0.0) + naive(0.0, 1.0)) / 3.0;
        assert!((g.scalar(loss) - expected).abs() < 1e-12);
        // Gradient of mean BCE wrt logits is (sigmoid(z) - t) / n.
        let dz = grad_value(&mut g, loss, z);
        for ((&zv, &tv), &dv) in [2.0, -1.5, 0.0].iter().zip(t.iter()).zip(dz.iter()) {
            assert!((dv - (sigmoid(zv) - tv) / 3.0).abs() < 1e-12);
        }
    }

    fn sigmoid(z: f64) -> f64 {
        1.0 / (1.0 + (-z).exp())
    }

    #[test]
    fn cross_entropy_logits_matches_log_softmax_pick() {
        let mut g = Graph::new();
        let z = g.input(arr2(&[[1.0, 2.0, 0.5], [0.0, 0.0, 0.0]]));
        let t = arr2(&[[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]);
        let loss = cross_entropy_logits(&mut g, z, &t);
        let lse1 = (1.0f64.exp() + 2.0f64.exp() + 0.5f64.exp()).ln();
        let expected = ((lse1 - 2.0) + (3.0f64).ln()) / 2.0;
        assert!((g.scalar(loss) - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_loss_yields_zero_gradients() {
        let mut g = Graph::new();
        let x = g.input(arr2(&[[1.0, 2.0]]));
        let z = g.affine(x, 0.0, 0.0);
        let y = g.sum_all(z);
        let dx = grad_value(&mut g, y, x);
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn par_matmul_matches_serial_for_large_inputs() {
        let a = Array2::from_shape_fn((1200, 37), |(i, j)| ((i * 7 + j * 13) % 11) as f64 - 5.0);
        let b = Array2::from_shape_fn((37, 23), |(i, j)| ((i * 3 + j * 5) % 7) as f64 - 3.0);
        let par = par_matmul(a.view(), b.view());
        let serial = a.dot(&b);
        assert_eq!(par, serial);
    }
}
