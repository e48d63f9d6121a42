//! Reverse-mode automatic differentiation over a recorded tape.

use super::kernels::{col2im, conv_out_len, im2col, matmul, offsets};
use super::params::{ParamId, ParamStore};
use super::{round_to_precision, shape_err, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Index groups in compressed form: group `g` is
/// `indices[offsets[g]..offsets[g + 1]]`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Groups {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Groups {
    pub fn new() -> Self {
        Self {
            offsets: vec![0],
            indices: Vec::new(),
        }
    }

    pub fn push(&mut self, group: &[usize]) {
        if self.offsets.is_empty() {
            self.offsets.push(0);
        }
        self.indices.extend_from_slice(group);
        self.offsets.push(self.indices.len());
    }

    pub fn from_lists<I, G>(lists: I) -> Self
    where
        I: IntoIterator<Item = G>,
        G: AsRef<[usize]>,
    {
        let mut g = Self::new();
        for l in lists {
            g.push(l.as_ref());
        }
        g
    }

    /// Contiguous runs `0..lens[0]`, `lens[0]..lens[0]+lens[1]`, ...
    pub fn contiguous(lens: &[usize]) -> Self {
        let offsets = offsets(lens);
        let total = *offsets.last().unwrap();
        Self {
            offsets,
            indices: (0..total).collect(),
        }
    }

    /// One group per listed row subset.
    pub fn single(indices: Vec<usize>) -> Self {
        Self {
            offsets: vec![0, indices.len()],
            indices,
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn group(&self, g: usize) -> &[usize] {
        &self.indices[self.offsets[g]..self.offsets[g + 1]]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        (0..self.len()).map(move |g| self.group(g))
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    LeakyRelu(Var, f64),
    Concat(Vec<Var>),
    Gather { x: Var, idx: Vec<usize> },
    WeightedGather { x: Var, idx: Vec<usize>, weights: Vec<f64>, k: usize },
    MaxGather { x: Var, argmax: Vec<usize> },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        lens: Vec<usize>,
        out_lens: Vec<usize>,
        stride: usize,
        pad: usize,
        cols: Vec<f64>,
    },
    TConv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        lens: Vec<usize>,
        out_lens: Vec<usize>,
        stride: usize,
    },
    LogSoftmax(Var),
    Nll { logp: Var, targets: Vec<usize> },
    Mse(Var, Var),
    Triplet { a: Var, p: Var, n: Var, margin: f64 },
    L2Normalize(Var),
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Records a computation for later differentiation.
///
/// A tape borrows the parameter store it reads from; gradients are returned
/// by [`Tape::backward`] and folded into the store with
/// [`ParamStore::accumulate`].
pub struct Tape<'a> {
    params: Option<&'a ParamStore>,
    nodes: Vec<Node>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            params: None,
            nodes: Vec::new(),
        }
    }

    pub fn with_params(params: &'a ParamStore) -> Self {
        Self {
            params: Some(params),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (_, Some(t)) => t,
            (Op::Param(id), None) => &self.params.expect("parameter tape").get(*id).value,
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, op_name: &'static str, mut value: Tensor, op: Op, needs_grad: bool) -> Result<Var, TensorError> {
        round_to_precision(value.data_mut());
        if cfg!(debug_assertions) && !value.is_finite() {
            return Err(TensorError::NonFinite(op_name));
        }
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A value that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Some(t),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Some(t),
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// References a stored parameter without copying it.
    pub fn param(&mut self, id: ParamId) -> Var {
        assert!(self.params.is_some(), "tape has no parameter store");
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// `x · wᵀ + b` over the rows of `x`; `w` is `out × in`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, TensorError> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.shape().len() != 2 {
            return Err(shape_err("linear", format!("weight shape {:?}", wv.shape())));
        }
        let (cout, cin) = (wv.shape()[0], wv.shape()[1]);
        if xv.cols() != cin {
            return Err(shape_err("linear", format!("input {:?} vs weight {:?}", xv.shape(), wv.shape())));
        }
        let n = xv.rows();
        let mut y = vec![0.0; n * cout];
        matmul(&mut y, xv.data(), false, wv.data(), true, n, cin, cout, false);
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.numel() != cout {
                return Err(shape_err("linear", format!("bias {:?} for {cout} outputs", bv.shape())));
            }
            for row in y.chunks_mut(cout) {
                for (a, bb) in row.iter_mut().zip(bv.data()) {
                    *a += bb;
                }
            }
        }
        let shape = if xv.shape().len() >= 2 { vec![n, cout] } else { vec![cout] };
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push("linear", Tensor::new(shape, y)?, Op::Linear { x, w, b }, needs)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(name, t, op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, TensorError> {
        let av = self.value(a);
        let t = Tensor::new(av.shape().to_vec(), av.data().iter().map(|v| v * s).collect())?;
        let needs = self.needs(a);
        self.push("scale", t, Op::Scale(a, s), needs)
    }

    /// Adds a length-`C` vector to every row of an `N × C` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, TensorError> {
        let (xv, rv) = (self.value(x), self.value(row));
        let c = xv.cols();
        if rv.numel() != c {
            return Err(shape_err("add_row", format!("{:?} + {:?}", xv.shape(), rv.shape())));
        }
        let mut data = xv.data().to_vec();
        for r in data.chunks_mut(c.max(1)) {
            for (a, b) in r.iter_mut().zip(rv.data()) {
                *a += b;
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let needs = self.needs(x) || self.needs(row);
        self.push("add_row", t, Op::AddRow(x, row), needs)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let needs = self.needs(x);
        self.push("leaky_relu", t, Op::LeakyRelu(x, slope), needs)
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let n = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        if parts.iter().any(|&p| self.value(p).rows() != n) {
            return Err(shape_err("concat_cols", "row counts differ"));
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; n * total];
        let mut col = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = self.value(p);
            for r in 0..n {
                data[r * total + col..r * total + col + w].copy_from_slice(pv.row(r));
            }
            col += w;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push("concat_cols", Tensor::matrix(n, total, data)?, Op::Concat(parts.to_vec()), needs)
    }

    /// Row `r` of the result is row `idx[r]` of `x`.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            if i >= n {
                return Err(shape_err("gather_rows", format!("index {i} out of {n} rows")));
            }
            data.extend_from_slice(xv.row(i));
        }
        let t = Tensor::matrix(idx.len(), c, data)?;
        let needs = self.needs(x);
        self.push("gather_rows", t, Op::Gather { x, idx }, needs)
    }

    /// Row `r` of the result is `Σ_q weights[r·k + q] · x[idx[r·k + q]]`.
    pub fn weighted_gather(&mut self, x: Var, idx: Vec<usize>, weights: Vec<f64>, k: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        if k == 0 || idx.len() != weights.len() || idx.len() % k != 0 {
            return Err(shape_err("weighted_gather", "index/weight layout"));
        }
        let rows = idx.len() / k;
        let mut data = vec![0.0; rows * c];
        for r in 0..rows {
            let out = &mut data[r * c..(r + 1) * c];
            for q in 0..k {
                let (i, w) = (idx[r * k + q], weights[r * k + q]);
                if i >= n {
                    return Err(shape_err("weighted_gather", format!("index {i} out of {n} rows")));
                }
                for (o, v) in out.iter_mut().zip(xv.row(i)) {
                    *o += w * v;
                }
            }
        }
        let t = Tensor::matrix(rows, c, data)?;
        let needs = self.needs(x);
        self.push("weighted_gather", t, Op::WeightedGather { x, idx, weights, k }, needs)
    }

    /// Column-wise maximum over each group of rows. Gradient flows only to
    /// the maximizing row; ties go to the lowest row index.
    pub fn max_gather(&mut self, x: Var, groups: &Groups) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        let g = groups.len();
        let mut data = vec![0.0; g * c];
        let mut argmax = vec![0usize; g * c];
        for (gi, group) in groups.iter().enumerate() {
            let Some(&first) = group.first() else {
                return Err(TensorError::EmptyReduction("max_gather"));
            };
            if let Some(&bad) = group.iter().find(|&&i| i >= n) {
                return Err(shape_err("max_gather", format!("index {bad} out of {n} rows")));
            }
            let out = &mut data[gi * c..(gi + 1) * c];
            let arg = &mut argmax[gi * c..(gi + 1) * c];
            out.copy_from_slice(xv.row(first));
            arg.fill(first);
            for &i in &group[1..] {
                for (ch, &v) in xv.row(i).iter().enumerate() {
                    if v > out[ch] || (v == out[ch] && i < arg[ch]) {
                        out[ch] = v;
                        arg[ch] = i;
                    }
                }
            }
        }
        let t = Tensor::matrix(g, c, data)?;
        let needs = self.needs(x);
        self.push("max_gather", t, Op::MaxGather { x, argmax }, needs)
    }

    /// Segmented 1-D convolution. `x` packs sequences of the given lengths
    /// row-wise (`Σ lens × C_in`); `w` is `C_out × C_in × k`. Returns the
    /// output and the per-sequence output lengths
    /// `⌊(L + 2·pad − k) / stride⌋ + 1`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        lens: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<(Var, Vec<usize>), TensorError> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.shape().len() != 3 {
            return Err(shape_err("conv1d", format!("kernel shape {:?}", wv.shape())));
        }
        let (cout, cin, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        let total: usize = lens.iter().sum();
        if xv.cols() != cin || xv.rows() != total {
            return Err(shape_err("conv1d", format!("input {:?}, kernel {:?}, {} rows expected", xv.shape(), wv.shape(), total)));
        }
        let out_lens = lens
            .iter()
            .map(|&l| if l == 0 { Some(0) } else { conv_out_len(l, k, stride, pad) })
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| shape_err("conv1d", format!("sequence shorter than kernel {k} with pad {pad}")))?;
        let t_out: usize = out_lens.iter().sum();
        let cols = im2col(xv.data(), cin, lens, &out_lens, k, stride, pad);
        let wr = conv_weight_rows(wv.data(), cout, cin, k);
        let mut y = vec![0.0; t_out * cout];
        matmul(&mut y, &cols, false, &wr, true, t_out, k * cin, cout, false);
        if let Some(b) = b {
            add_bias(&mut y, self.value(b).data(), cout, "conv1d")?;
        }
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        let v = self.push(
            "conv1d",
            Tensor::matrix(t_out, cout, y)?,
            Op::Conv1d {
                x,
                w,
                b,
                lens: lens.to_vec(),
                out_lens: out_lens.clone(),
                stride,
                pad,
                cols,
            },
            needs,
        )?;
        Ok((v, out_lens))
    }

    /// Segmented 1-D transpose convolution; `w` is `C_in × C_out × k`.
    /// Sequence `s` produces `(L − 1)·stride + k` positions, cut or
    /// zero-extended to `out_lens[s]`.
    pub fn tconv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        lens: &[usize],
        stride: usize,
        out_lens: &[usize],
    ) -> Result<Var, TensorError> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.shape().len() != 3 || lens.len() != out_lens.len() || stride == 0 {
            return Err(shape_err("tconv1d", format!("kernel shape {:?}", wv.shape())));
        }
        let (cin, cout, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        let total: usize = lens.iter().sum();
        if xv.cols() != cin || xv.rows() != total {
            return Err(shape_err("tconv1d", format!("input {:?}, kernel {:?}", xv.shape(), wv.shape())));
        }
        let wr = tconv_weight_rows(wv.data(), cin, cout, k);
        let mut z = vec![0.0; total * k * cout];
        matmul(&mut z, xv.data(), false, &wr, false, total, cin, k * cout, false);
        let t_out: usize = out_lens.iter().sum();
        let mut y = vec![0.0; t_out * cout];
        let (in_off, out_off) = (offsets(lens), offsets(out_lens));
        for s in 0..lens.len() {
            for t in 0..lens[s] {
                let zr = &z[(in_off[s] + t) * k * cout..(in_off[s] + t + 1) * k * cout];
                for j in 0..k {
                    let pos = t * stride + j;
                    if pos < out_lens[s] {
                        let dst = &mut y[(out_off[s] + pos) * cout..(out_off[s] + pos + 1) * cout];
                        for (a, bb) in dst.iter_mut().zip(&zr[j * cout..(j + 1) * cout]) {
                            *a += bb;
                        }
                    }
                }
            }
        }
        if let Some(b) = b {
            add_bias(&mut y, self.value(b).data(), cout, "tconv1d")?;
        }
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(
            "tconv1d",
            Tensor::matrix(t_out, cout, y)?,
            Op::TConv1d {
                x,
                w,
                b,
                lens: lens.to_vec(),
                out_lens: out_lens.to_vec(),
                stride,
            },
            needs,
        )
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let c = xv.cols();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let needs = self.needs(x);
        self.push("log_softmax", t, Op::LogSoftmax(x), needs)
    }

    /// Mean negative log-likelihood of `targets` under row log-probabilities.
    pub fn nll_loss(&mut self, logp: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let lv = self.value(logp);
        let (b, c) = (lv.rows(), lv.cols());
        if targets.len() != b {
            return Err(shape_err("nll_loss", format!("{} targets for {b} rows", targets.len())));
        }
        let mut acc = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(TensorError::TargetOutOfRange { target: t, classes: c });
            }
            acc -= lv.row(r)[t];
        }
        let needs = self.needs(logp);
        self.push(
            "nll_loss",
            Tensor::scalar(acc / b as f64),
            Op::Nll {
                logp,
                targets: targets.to_vec(),
            },
            needs,
        )
    }

    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var, TensorError> {
        let (pv, tv) = (self.value(pred), self.value(target));
        if pv.shape() != tv.shape() {
            return Err(shape_err("mse_loss", format!("{:?} vs {:?}", pv.shape(), tv.shape())));
        }
        let n = pv.numel().max(1) as f64;
        let s: f64 = pv.data().iter().zip(tv.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        let needs = self.needs(pred) || self.needs(target);
        self.push("mse_loss", Tensor::scalar(s / n), Op::Mse(pred, target), needs)
    }

    /// Mean of `max(0, ‖a − p‖ − ‖a − n‖ + margin)` over rows.
    pub fn triplet_loss(&mut self, a: Var, p: Var, n: Var, margin: f64) -> Result<Var, TensorError> {
        let (av, pv, nv) = (self.value(a), self.value(p), self.value(n));
        if av.shape() != pv.shape() || av.shape() != nv.shape() {
            return Err(shape_err("triplet_loss", "anchor/positive/negative shapes differ"));
        }
        let rows = av.rows();
        let mut acc = 0.0;
        for r in 0..rows {
            let d_ap = row_dist(av.row(r), pv.row(r));
            let d_an = row_dist(av.row(r), nv.row(r));
            acc += (d_ap - d_an + margin).max(0.0);
        }
        let needs = self.needs(a) || self.needs(p) || self.needs(n);
        self.push("triplet_loss", Tensor::scalar(acc / rows as f64), Op::Triplet { a, p, n, margin }, needs)
    }

    /// Scales every row to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let c = xv.cols();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let needs = self.needs(x);
        self.push("l2_normalize", t, Op::L2Normalize(x), needs)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push("sum", Tensor::scalar(s), Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let s = xv.data().iter().sum::<f64>() / xv.numel().max(1) as f64;
        let needs = self.needs(x);
        self.push("mean", Tensor::scalar(s), Op::Mean(x), needs)
    }

    /// Reverse accumulation from a scalar.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf | Op::Param(_) => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.backprop(&node.op, Var(i), &g, &mut grads)?;
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.needs(v) {
            return None;
        }
        let n = self.value(v).numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn backprop(&self, op: &Op, out: Var, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<(), TensorError> {
        match op {
            Op::Leaf | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (cout, cin) = (wv.shape()[0], wv.shape()[1]);
                let n = xv.rows();
                if let Some(dx) = self.slot(grads, *x) {
                    matmul(dx, g, false, wv.data(), false, n, cout, cin, true);
                }
                if let Some(dw) = self.slot(grads, *w) {
                    matmul(dw, g, true, xv.data(), false, cout, n, cin, true);
                }
                if let Some(b) = b {
                    if let Some(db) = self.slot(grads, *b) {
                        col_sums_into(db, g, cout);
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = self.slot(grads, *a) {
                    axpy(da, g, 1.0);
                }
                if let Some(db) = self.slot(grads, *b) {
                    axpy(db, g, 1.0);
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = self.slot(grads, *a) {
                    axpy(da, g, 1.0);
                }
                if let Some(db) = self.slot(grads, *b) {
                    axpy(db, g, -1.0);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, gi), y) in da.iter_mut().zip(g).zip(bv) {
                        *d += gi * y;
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for ((d, gi), x) in db.iter_mut().zip(g).zip(av) {
                        *d += gi * x;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(da) = self.slot(grads, *a) {
                    axpy(da, g, *s);
                }
            }
            Op::AddRow(x, row) => {
                if let Some(dx) = self.slot(grads, *x) {
                    axpy(dx, g, 1.0);
                }
                let c = self.value(*row).numel();
                if let Some(dr) = self.slot(grads, *row) {
                    col_sums_into(dr, g, c);
                }
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x).data();
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, gi), v) in dx.iter_mut().zip(g).zip(xv) {
                        *d += if *v > 0.0 { *gi } else { slope * gi };
                    }
                }
            }
            Op::Concat(parts) => {
                let total = self.value(out).cols();
                let mut col = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if let Some(dp) = self.slot(grads, *p) {
                        for (r, drow) in dp.chunks_mut(w.max(1)).enumerate() {
                            axpy(drow, &g[r * total + col..r * total + col + w], 1.0);
                        }
                    }
                    col += w;
                }
            }
            Op::Gather { x, idx } => {
                let c = self.value(*x).cols();
                if let Some(dx) = self.slot(grads, *x) {
                    for (r, &i) in idx.iter().enumerate() {
                        axpy(&mut dx[i * c..(i + 1) * c], &g[r * c..(r + 1) * c], 1.0);
                    }
                }
            }
            Op::WeightedGather { x, idx, weights, k } => {
                let c = self.value(*x).cols();
                if let Some(dx) = self.slot(grads, *x) {
                    for (q, (&i, &w)) in idx.iter().zip(weights).enumerate() {
                        let r = q / k;
                        axpy(&mut dx[i * c..(i + 1) * c], &g[r * c..(r + 1) * c], w);
                    }
                }
            }
            Op::MaxGather { x, argmax } => {
                let c = self.value(*x).cols();
                if let Some(dx) = self.slot(grads, *x) {
                    for (q, &i) in argmax.iter().enumerate() {
                        dx[i * c + q % c] += g[q];
                    }
                }
            }
            Op::Conv1d {
                x,
                w,
                b,
                lens,
                out_lens,
                stride,
                pad,
                cols,
            } => {
                let wv = self.value(*w);
                let (cout, cin, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
                let t_out: usize = out_lens.iter().sum();
                if self.needs(*x) {
                    let wr = conv_weight_rows(wv.data(), cout, cin, k);
                    let mut dcols = vec![0.0; t_out * k * cin];
                    matmul(&mut dcols, g, false, &wr, false, t_out, cout, k * cin, false);
                    let dx = self.slot(grads, *x).unwrap();
                    col2im(&dcols, dx, cin, lens, out_lens, k, *stride, *pad);
                }
                if let Some(dw) = self.slot(grads, *w) {
                    let mut dwr = vec![0.0; cout * k * cin];
                    matmul(&mut dwr, g, true, cols, false, cout, t_out, k * cin, false);
                    for o in 0..cout {
                        for j in 0..k {
                            for c in 0..cin {
                                dw[(o * cin + c) * k + j] += dwr[o * k * cin + j * cin + c];
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    if let Some(db) = self.slot(grads, *b) {
                        col_sums_into(db, g, cout);
                    }
                }
            }
            Op::TConv1d {
                x,
                w,
                b,
                lens,
                out_lens,
                stride,
            } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (cin, cout, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
                let total: usize = lens.iter().sum();
                let (in_off, out_off) = (offsets(lens), offsets(out_lens));
                let mut dz = vec![0.0; total * k * cout];
                for s in 0..lens.len() {
                    for t in 0..lens[s] {
                        let row = in_off[s] + t;
                        for j in 0..k {
                            let pos = t * stride + j;
                            if pos < out_lens[s] {
                                let src = &g[(out_off[s] + pos) * cout..(out_off[s] + pos + 1) * cout];
                                dz[row * k * cout + j * cout..row * k * cout + (j + 1) * cout].copy_from_slice(src);
                            }
                        }
                    }
                }
                if self.needs(*x) {
                    let wr = tconv_weight_rows(wv.data(), cin, cout, k);
                    let dx = self.slot(grads, *x).unwrap();
                    matmul(dx, &dz, false, &wr, true, total, k * cout, cin, true);
                }
                if let Some(dw) = self.slot(grads, *w) {
                    let mut dwr = vec![0.0; cin * k * cout];
                    matmul(&mut dwr, xv.data(), true, &dz, false, cin, total, k * cout, false);
                    for c in 0..cin {
                        for o in 0..cout {
                            for j in 0..k {
                                dw[(c * cout + o) * k + j] += dwr[c * k * cout + j * cout + o];
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    if let Some(db) = self.slot(grads, *b) {
                        col_sums_into(db, g, cout);
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let y = self.value(out);
                let c = y.cols();
                if let Some(dx) = self.slot(grads, *x) {
                    for (r, drow) in dx.chunks_mut(c.max(1)).enumerate() {
                        let gr = &g[r * c..(r + 1) * c];
                        let gsum: f64 = gr.iter().sum();
                        for ((d, gi), yi) in drow.iter_mut().zip(gr).zip(y.row(r)) {
                            *d += gi - yi.exp() * gsum;
                        }
                    }
                }
            }
            Op::Nll { logp, targets } => {
                let c = self.value(*logp).cols();
                let scale = g[0] / targets.len() as f64;
                if let Some(dl) = self.slot(grads, *logp) {
                    for (r, &t) in targets.iter().enumerate() {
                        dl[r * c + t] -= scale;
                    }
                }
            }
            Op::Mse(p, t) => {
                let (pv, tv) = (self.value(*p).data(), self.value(*t).data());
                let scale = 2.0 * g[0] / pv.len().max(1) as f64;
                if let Some(dp) = self.slot(grads, *p) {
                    for ((d, a), b) in dp.iter_mut().zip(pv).zip(tv) {
                        *d += scale * (a - b);
                    }
                }
                if let Some(dt) = self.slot(grads, *t) {
                    for ((d, a), b) in dt.iter_mut().zip(pv).zip(tv) {
                        *d -= scale * (a - b);
                    }
                }
            }
            Op::Triplet { a, p, n, margin } => {
                let (av, pv, nv) = (self.value(*a), self.value(*p), self.value(*n));
                let (rows, c) = (av.rows(), av.cols());
                let scale = g[0] / rows as f64;
                let mut da = vec![0.0; rows * c];
                let mut dp = vec![0.0; rows * c];
                let mut dn = vec![0.0; rows * c];
                for r in 0..rows {
                    let (ar, pr, nr) = (av.row(r), pv.row(r), nv.row(r));
                    let d_ap = row_dist(ar, pr);
                    let d_an = row_dist(ar, nr);
                    if d_ap - d_an + margin <= 0.0 {
                        continue;
                    }
                    for ch in 0..c {
                        let u = if d_ap > 0.0 { (ar[ch] - pr[ch]) / d_ap } else { 0.0 };
                        let v = if d_an > 0.0 { (ar[ch] - nr[ch]) / d_an } else { 0.0 };
                        da[r * c + ch] = scale * (u - v);
                        dp[r * c + ch] = -scale * u;
                        dn[r * c + ch] = scale * v;
                    }
                }
                for (var, d) in [(*a, da), (*p, dp), (*n, dn)] {
                    if let Some(slot) = self.slot(grads, var) {
                        axpy(slot, &d, 1.0);
                    }
                }
            }
            Op::L2Normalize(x) => {
                let (xv, y) = (self.value(*x), self.value(out));
                let c = y.cols();
                if let Some(dx) = self.slot(grads, *x) {
                    for (r, drow) in dx.chunks_mut(c.max(1)).enumerate() {
                        let norm = xv.row(r).iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
                        let (yr, gr) = (y.row(r), &g[r * c..(r + 1) * c]);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, gi), yi) in drow.iter_mut().zip(gr).zip(yr) {
                            *d += (gi - yi * dot) / norm;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    for d in dx.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::Mean(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    let s = g[0] / dx.len().max(1) as f64;
                    for d in dx.iter_mut() {
                        *d += s;
                    }
                }
            }
        }
        Ok(())
    }
}

const NORM_EPS: f64 = 1e-12;

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of a leaf created with [`Tape::variable`] or
    /// [`Tape::param`]; `None` if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params
            .iter()
            .filter_map(|&(id, node)| self.grads[node].as_deref().map(|g| (id, g)))
    }
}

fn row_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn axpy(dst: &mut [f64], src: &[f64], s: f64) {
    for (d, v) in dst.iter_mut().zip(src) {
        *d += s * v;
    }
}

fn col_sums_into(dst: &mut [f64], g: &[f64], c: usize) {
    for row in g.chunks(c.max(1)) {
        for (d, v) in dst.iter_mut().zip(row) {
            *d += v;
        }
    }
}

fn add_bias(y: &mut [f64], b: &[f64], c: usize, op: &'static str) -> Result<(), TensorError> {
    if b.len() != c {
        return Err(shape_err(op, format!("bias of {} for {c} channels", b.len())));
    }
    for row in y.chunks_mut(c.max(1)) {
        for (a, bb) in row.iter_mut().zip(b) {
            *a += bb;
        }
    }
    Ok(())
}

/// `C_out × C_in × k` kernel as `C_out × (k·C_in)` rows matching im2col.
fn conv_weight_rows(w: &[f64], cout: usize, cin: usize, k: usize) -> Vec<f64> {
    let mut wr = vec![0.0; cout * k * cin];
    for o in 0..cout {
        for c in 0..cin {
            for j in 0..k {
                wr[o * k * cin + j * cin + c] = w[(o * cin + c) * k + j];
            }
        }
    }
    wr
}

/// `C_in × C_out × k` kernel as `C_in × (k·C_out)`, tap-major columns.
fn tconv_weight_rows(w: &[f64], cin: usize, cout: usize, k: usize) -> Vec<f64> {
    let mut wr = vec![0.0; cin * k * cout];
    for c in 0..cin {
        for o in 0..cout {
            for j in 0..k {
                wr[c * k * cout + j * cout + o] = w[(c * cout + o) * k + j];
            }
        }
    }
    wr
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn linear_examples() {
        let mut tp = Tape::new();
        let x = tp.constant(t(&[2], &[1., 2.]));
        let w = tp.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let b = tp.constant(t(&[2], &[0., 0.]));
        let y = tp.linear(x, w, Some(b)).unwrap();
        assert_eq!(tp.value(y).data(), &[1., 2.]);
        let x = tp.constant(t(&[2], &[1., 1.]));
        let w = tp.constant(t(&[1, 2], &[2., 3.]));
        let b = tp.constant(t(&[1], &[1.]));
        let y = tp.linear(x, w, Some(b)).unwrap();
        assert_eq!(tp.value(y).data(), &[6.]);
        assert!(tp.linear(x, w, Some(x)).is_err());
    }

    #[test]
    fn conv_examples() {
        let mut tp = Tape::new();
        let x = tp.constant(t(&[3, 1], &[1., 2., 3.]));
        let w = tp.constant(t(&[1, 1, 2], &[1., 1.]));
        let (y, lens) = tp.conv1d(x, w, None, &[3], 1, 0).unwrap();
        assert_eq!(lens, vec![2]);
        assert_eq!(tp.value(y).data(), &[3., 5.]);
        let id = tp.constant(t(&[1, 1, 1], &[1.]));
        let (y, _) = tp.conv1d(x, id, None, &[3], 1, 0).unwrap();
        assert_eq!(tp.value(y).data(), &[1., 2., 3.]);
        assert!(tp.conv1d(x, w, None, &[1, 2], 1, 0).is_err());
    }

    #[test]
    fn tconv_examples() {
        let mut tp = Tape::new();
        let x = tp.constant(t(&[1, 1], &[1.]));
        let w = tp.constant(t(&[1, 1, 2], &[1., 2.]));
        let y = tp.tconv1d(x, w, None, &[1], 2, &[2]).unwrap();
        assert_eq!(tp.value(y).data(), &[1., 2.]);
        let x = tp.constant(t(&[3, 1], &[1., 1., 1.]));
        let y = tp.tconv1d(x, w, None, &[3], 2, &[6]).unwrap();
        assert_eq!(tp.value(y).data(), &[1., 2., 1., 2., 1., 2.]);
    }

    /// Direct sliding-window convolution over one sequence.
    fn naive_conv(x: &[f64], len: usize, cin: usize, w: &[f64], cout: usize, k: usize, stride: usize, pad: usize) -> Vec<f64> {
        let lo = (len + 2 * pad - k) / stride + 1;
        let mut y = vec![0.0; lo * cout];
        for t in 0..lo {
            for o in 0..cout {
                let mut s = 0.0;
                for c in 0..cin {
                    for j in 0..k {
                        let p = (t * stride + j) as isize - pad as isize;
                        if p >= 0 && (p as usize) < len {
                            s += w[(o * cin + c) * k + j] * x[p as usize * cin + c];
                        }
                    }
                }
                y[t * cout + o] = s;
            }
        }
        y
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (cin, cout, k) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4));
            let stride = rng.random_range(1..3);
            let pad = rng.random_range(0..2);
            let lens: Vec<usize> = (0..rng.random_range(1..4)).map(|_| rng.random_range(k..9)).collect();
            let total: usize = lens.iter().sum();
            let xs: Vec<f64> = (0..total * cin).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ws: Vec<f64> = (0..cout * cin * k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut tp = Tape::new();
            let x = tp.constant(t(&[total, cin], &xs));
            let w = tp.constant(t(&[cout, cin, k], &ws));
            let (y, _) = tp.conv1d(x, w, None, &lens, stride, pad).unwrap();
            let mut expected = Vec::new();
            let mut start = 0;
            for &l in &lens {
                expected.extend(naive_conv(&xs[start * cin..(start + l) * cin], l, cin, &ws, cout, k, stride, pad));
                start += l;
            }
            assert!(close(tp.value(y).data(), &expected, 1e-12));
        }
    }

    #[test]
    fn conv_tconv_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let (cin, cout, k) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4));
            let stride = rng.random_range(1..4);
            let len = rng.random_range(k..12);
            let a: Vec<f64> = (0..len * cin).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ws: Vec<f64> = (0..cout * cin * k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut tp = Tape::new();
            let av = tp.constant(t(&[len, cin], &a));
            let w = tp.constant(t(&[cout, cin, k], &ws));
            let (y, lo) = tp.conv1d(av, w, None, &[len], stride, 0).unwrap();
            let b: Vec<f64> = (0..lo[0] * cout).map(|_| rng.random_range(-1.0..1.0)).collect();
            let bv = tp.constant(t(&[lo[0], cout], &b));
            // The conv kernel read as C_in' × C_out' × k is the transposed map.
            let z = tp.tconv1d(bv, w, None, &lo, stride, &[len]).unwrap();
            let lhs: f64 = tp.value(y).data().iter().zip(&b).map(|(p, q)| p * q).sum();
            let rhs: f64 = a.iter().zip(tp.value(z).data()).map(|(p, q)| p * q).sum();
            assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn basic_gradients() {
        let x0 = t(&[3], &[1., -2., 0.5]);
        let mut tp = Tape::new();
        let x = tp.variable(x0.clone());
        let s = tp.sum(x).unwrap();
        assert_eq!(tp.backward(s).unwrap().wrt(x).unwrap(), &[1., 1., 1.]);
        let sq = tp.mul(x, x).unwrap();
        let l = tp.sum(sq).unwrap();
        assert_eq!(tp.backward(l).unwrap().wrt(x).unwrap(), &[2., -4., 1.]);
        assert!(matches!(tp.backward(sq), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn gradients_accumulate_in_store() {
        let mut store = ParamStore::new();
        let id = store.add("w", t(&[2], &[1., 2.]));
        for round in 1..=2 {
            let grads = {
                let mut tp = Tape::with_params(&store);
                let w = tp.param(id);
                let l = tp.sum(w).unwrap();
                tp.backward(l).unwrap()
            };
            store.accumulate(&grads);
            assert_eq!(store.get(id).grad, vec![round as f64; 2]);
        }
        store.zero_grad();
        assert_eq!(store.get(id).grad, vec![0.0; 2]);
    }

    #[test]
    fn loss_examples() {
        let mut tp = Tape::new();
        let logits = tp.constant(Tensor::zeros(&[2, 345]));
        let lp = tp.log_softmax(logits).unwrap();
        let l = tp.nll_loss(lp, &[0, 344]).unwrap();
        assert!((tp.value(l).item() - 345f64.ln()).abs() < 1e-12);
        assert!(tp.nll_loss(lp, &[0, 345]).is_err());
        let onehot = tp.constant(t(&[1, 2], &[0.0, f64::MIN_POSITIVE.ln()]));
        let l = tp.nll_loss(onehot, &[0]).unwrap();
        assert_eq!(tp.value(l).item(), 0.0);

        let p = tp.constant(t(&[2], &[0., 0.]));
        let q = tp.constant(t(&[2], &[1., 1.]));
        let l = tp.mse_loss(p, q).unwrap();
        assert_eq!(tp.value(l).item(), 1.0);

        let a = tp.constant(t(&[1, 1], &[0.0]));
        let p = tp.constant(t(&[1, 1], &[0.5]));
        let n = tp.constant(t(&[1, 1], &[0.9]));
        let l = tp.triplet_loss(a, p, n, 0.2).unwrap();
        assert_eq!(tp.value(l).item(), 0.0);
        let l = tp.triplet_loss(a, n, p, 0.2).unwrap();
        assert!((tp.value(l).item() - 0.6).abs() < 1e-12);
        let l = tp.triplet_loss(a, a, a, 0.2).unwrap();
        assert_eq!(tp.value(l).item(), 0.2);
    }

    #[test]
    fn max_gather_ties_and_subgradient() {
        let mut tp = Tape::new();
        let x = tp.variable(t(&[3, 1], &[3., 1., 4.]));
        let g = Groups::from_lists([vec![0, 1, 2], vec![0, 1], vec![2, 0]]);
        let y = tp.max_gather(x, &g).unwrap();
        assert_eq!(tp.value(y).data(), &[4., 3., 4.]);
        let s = tp.sum(y).unwrap();
        assert_eq!(tp.backward(s).unwrap().wrt(x).unwrap(), &[1., 0., 2.]);
        let x = tp.variable(t(&[2, 1], &[5., 5.]));
        let y = tp.max_gather(x, &Groups::single(vec![1, 0])).unwrap();
        let s = tp.sum(y).unwrap();
        assert_eq!(tp.backward(s).unwrap().wrt(x).unwrap(), &[1., 0.]);
        assert!(tp.max_gather(x, &Groups::from_lists([Vec::<usize>::new()])).is_err());
    }

    #[test]
    fn non_finite_is_reported() {
        if !cfg!(debug_assertions) {
            return;
        }
        let mut tp = Tape::new();
        let x = tp.constant(t(&[1], &[f64::MAX]));
        assert_eq!(tp.scale(x, 10.0), Err(TensorError::NonFinite("scale")));
    }
}
