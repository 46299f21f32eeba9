//! Reverse-mode automatic differentiation over small dense row-major matrices.
//!
//! A [`Graph`] is a single-use tape: leaves are inserted with [`Graph::constant`]
//! or [`Graph::param`], operations compute their value eagerly as they are
//! recorded, and [`Graph::backward`] walks the tape once to accumulate exact
//! gradients of a scalar output with respect to every node.  Gradients of
//! gradients are obtained structurally (e.g. the discriminator's gradient
//! penalty builds the input-gradient expression out of primitive ops) rather
//! than by re-taping, so a single reverse sweep always suffices.
//!
//! Shapes are validated with assertions: shape errors at this level are
//! programming errors, while user-facing entry points validate their inputs and
//! return [`crate::approx::ApproxError`].

/// Dense row-major `rows × cols` matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Matrix from a row-major data vector. Panics if the length is not `rows·cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "Mat::from_vec length mismatch");
        Mat { rows, cols, data }
    }

    /// Single-row matrix from a slice.
    pub fn from_row(row: &[f64]) -> Self {
        Mat::from_vec(1, row.len(), row.to_vec())
    }

    /// Stacks equal-length rows. Panics on ragged input or zero rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty(), "Mat::from_rows needs at least one row");
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "Mat::from_rows ragged rows");
            data.extend_from_slice(r);
        }
        Mat {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Borrow one row as a slice.
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Flat row-major data.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// True when every entry is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        assert_eq!(self.rows, other.rows, "elementwise shape mismatch");
        assert_eq!(self.cols, other.cols, "elementwise shape mismatch");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

const LN_2PI: f64 = 1.837877066409345483560659472811; // ln(2π)

enum Op {
    Leaf,
    /// y = x·Wᵀ + b (b broadcast across rows). x: B×I, w: O×I, b: 1×O.
    Linear { x: NodeId, w: NodeId, b: NodeId },
    /// y = a·b. a: M×K, b: K×N.
    MatMul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    /// Elementwise minimum; the sub-gradient follows the smaller argument
    /// (ties route to `a`).
    Min { a: NodeId, b: NodeId },
    /// y = scale·x + shift (shift constant, so only scale enters the backward pass).
    Affine { x: NodeId, scale: f64 },
    Tanh { x: NodeId },
    Exp { x: NodeId },
    Ln { x: NodeId },
    Sigmoid { x: NodeId },
    Softplus { x: NodeId },
    Sqrt { x: NodeId },
    Clamp { x: NodeId, lo: f64, hi: f64 },
    /// Per-row log-softmax.
    LogSoftmaxRows { x: NodeId },
    /// y[i] = x[i, idx[i]] as a B×1 column.
    Pick { x: NodeId, idx: Vec<usize> },
    /// y[i, ·] = x[idx[i], ·] (rows may repeat; gradients accumulate).
    GatherRows { x: NodeId, idx: Vec<usize> },
    SliceCols { x: NodeId, start: usize, len: usize },
    ConcatCols { a: NodeId, b: NodeId },
    /// Row-major reinterpretation of the entries under a new shape.
    Reshape { x: NodeId },
    /// Row sums as a B×1 column.
    RowSum { x: NodeId },
    MeanAll { x: NodeId },
    SumAll { x: NodeId },
    /// y[i, ·] = w[i]·x[i, ·] for a constant per-row weight vector.
    ScaleRows { x: NodeId, weights: Vec<f64> },
    /// Per-row diagonal Gaussian log-density of a constant observation:
    /// y[i] = Σ_d [ −½((obs−mean)/σ)² − log_std − ½ ln 2π ],  σ = exp(log_std).
    GaussianLogProb {
        mean: NodeId,
        log_std: NodeId,
        obs: Mat,
    },
}

struct Node {
    op: Op,
    value: Mat,
}

/// Single-use reverse-mode tape.
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node of a [`Graph`],
/// produced by [`Graph::backward`]. Nodes the loss does not depend on have a
/// `None` (structurally zero) gradient.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient with respect to `id`, if the loss depends on it.
    pub fn wrt(&self, id: NodeId) -> Option<&Mat> {
        self.grads[id.0].as_ref()
    }

    /// Gradient with respect to `id`, densified to zeros of the given shape
    /// when the loss does not depend on it.
    pub fn wrt_dense(&self, id: NodeId, rows: usize, cols: usize) -> Mat {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Mat::zeros(rows, cols),
        }
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Mat) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Value of a node.
    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id.0].value
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        let m = &self.nodes[id.0].value;
        (m.rows, m.cols)
    }

    /// Inserts a constant (non-parameter) leaf.
    pub fn constant(&mut self, m: Mat) -> NodeId {
        self.push(Op::Leaf, m)
    }

    /// Inserts a leaf backed by a parameter slice, reshaped to `rows × cols`.
    pub fn param(&mut self, values: &[f64], rows: usize, cols: usize) -> NodeId {
        assert_eq!(values.len(), rows * cols, "param slice length mismatch");
        self.push(Op::Leaf, Mat::from_vec(rows, cols, values.to_vec()))
    }

    /// y = x·Wᵀ + b with the bias row broadcast across the batch.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let (bx, ix) = self.shape(x);
        let (o, iw) = self.shape(w);
        let (br, bo) = self.shape(b);
        assert_eq!(ix, iw, "linear: input width {ix} vs weight width {iw}");
        assert_eq!((br, bo), (1, o), "linear: bias must be 1×{o}");
        let xm = &self.nodes[x.0].value;
        let wm = &self.nodes[w.0].value;
        let bm = &self.nodes[b.0].value;
        let mut out = Mat::zeros(bx, o);
        for r in 0..bx {
            let xr = xm.row(r);
            for c in 0..o {
                let wr = wm.row(c);
                let mut acc = bm.data[c];
                for k in 0..ix {
                    acc += xr[k] * wr[k];
                }
                out.data[r * o + c] = acc;
            }
        }
        self.push(Op::Linear { x, w, b }, out)
    }

    /// y = a·b.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        assert_eq!(ka, kb, "matmul: inner dims {ka} vs {kb}");
        let am = &self.nodes[a.0].value;
        let bm = &self.nodes[b.0].value;
        let mut out = Mat::zeros(m, n);
        for i in 0..m {
            let ar = am.row(i);
            let or = &mut out.data[i * n..(i + 1) * n];
            for (k, &av) in ar.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let br = bm.row(k);
                for j in 0..n {
                    or[j] += av * br[j];
                }
            }
        }
        self.push(Op::MatMul { a, b }, out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.zip(&self.nodes[b.0].value, |x, y| x + y);
        self.push(Op::Add { a, b }, v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.zip(&self.nodes[b.0].value, |x, y| x - y);
        self.push(Op::Sub { a, b }, v)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.zip(&self.nodes[b.0].value, |x, y| x * y);
        self.push(Op::Mul { a, b }, v)
    }

    /// Elementwise minimum of two same-shaped nodes.
    pub fn min(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.zip(&self.nodes[b.0].value, f64::min);
        self.push(Op::Min { a, b }, v)
    }

    /// y = scale·x + shift.
    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        let v = self.nodes[x.0].value.map(|t| scale * t + shift);
        self.push(Op::Affine { x, scale }, v)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.map(f64::tanh);
        self.push(Op::Tanh { x }, v)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.map(f64::exp);
        self.push(Op::Exp { x }, v)
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.map(f64::ln);
        self.push(Op::Ln { x }, v)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.map(|t| 1.0 / (1.0 + (-t).exp()));
        self.push(Op::Sigmoid { x }, v)
    }

    /// Numerically stable ln(1 + eˣ).
    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.map(softplus);
        self.push(Op::Softplus { x }, v)
    }

    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.map(f64::sqrt);
        self.push(Op::Sqrt { x }, v)
    }

    /// Elementwise clamp; gradient is passed through on the interior and zero
    /// outside.
    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        assert!(lo < hi, "clamp: empty interval");
        let v = self.nodes[x.0].value.map(|t| t.clamp(lo, hi));
        self.push(Op::Clamp { x, lo, hi }, v)
    }

    /// Row-wise log-softmax (shift-stabilized).
    pub fn log_softmax_rows(&mut self, x: NodeId) -> NodeId {
        let xm = &self.nodes[x.0].value;
        let (r, c) = (xm.rows, xm.cols);
        let mut out = Mat::zeros(r, c);
        for i in 0..r {
            let row = xm.row(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln();
            for j in 0..c {
                out.data[i * c + j] = row[j] - lse;
            }
        }
        self.push(Op::LogSoftmaxRows { x }, out)
    }

    /// y[i] = x[i, idx[i]] as a B×1 column.
    pub fn pick(&mut self, x: NodeId, idx: Vec<usize>) -> NodeId {
        let xm = &self.nodes[x.0].value;
        assert_eq!(idx.len(), xm.rows, "pick: one index per row");
        let mut out = Mat::zeros(xm.rows, 1);
        for (i, &j) in idx.iter().enumerate() {
            assert!(j < xm.cols, "pick: column index out of range");
            out.data[i] = xm.get(i, j);
        }
        self.push(Op::Pick { x, idx }, out)
    }

    /// y[i, ·] = x[idx[i], ·]; repeated indices accumulate gradient.
    pub fn gather_rows(&mut self, x: NodeId, idx: Vec<usize>) -> NodeId {
        let xm = &self.nodes[x.0].value;
        let mut out = Mat::zeros(idx.len(), xm.cols);
        for (i, &r) in idx.iter().enumerate() {
            assert!(r < xm.rows, "gather_rows: row index out of range");
            out.data[i * xm.cols..(i + 1) * xm.cols].copy_from_slice(xm.row(r));
        }
        self.push(Op::GatherRows { x, idx }, out)
    }

    /// Contiguous column slice.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let xm = &self.nodes[x.0].value;
        assert!(start + len <= xm.cols, "slice_cols out of range");
        let mut out = Mat::zeros(xm.rows, len);
        for i in 0..xm.rows {
            out.data[i * len..(i + 1) * len]
                .copy_from_slice(&xm.row(i)[start..start + len]);
        }
        self.push(Op::SliceCols { x, start, len }, out)
    }

    /// Horizontal concatenation.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let am = &self.nodes[a.0].value;
        let bm = &self.nodes[b.0].value;
        assert_eq!(am.rows, bm.rows, "concat_cols: row mismatch");
        let cols = am.cols + bm.cols;
        let mut out = Mat::zeros(am.rows, cols);
        for i in 0..am.rows {
            out.data[i * cols..i * cols + am.cols].copy_from_slice(am.row(i));
            out.data[i * cols + am.cols..(i + 1) * cols].copy_from_slice(bm.row(i));
        }
        self.push(Op::ConcatCols { a, b }, out)
    }

    /// Row-major reshape: the same entries under new dimensions
    /// (`rows·cols` must equal the input's element count).
    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> NodeId {
        let xm = &self.nodes[x.0].value;
        assert_eq!(
            rows * cols,
            xm.rows * xm.cols,
            "reshape: element count must be preserved"
        );
        let out = Mat::from_vec(rows, cols, xm.data.clone());
        self.push(Op::Reshape { x }, out)
    }

    /// Row sums as a B×1 column.
    pub fn row_sum(&mut self, x: NodeId) -> NodeId {
        let xm = &self.nodes[x.0].value;
        let mut out = Mat::zeros(xm.rows, 1);
        for i in 0..xm.rows {
            out.data[i] = xm.row(i).iter().sum();
        }
        self.push(Op::RowSum { x }, out)
    }

    /// Mean over all entries as a 1×1 scalar.
    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let xm = &self.nodes[x.0].value;
        let n = (xm.rows * xm.cols) as f64;
        let v = xm.data.iter().sum::<f64>() / n;
        self.push(Op::MeanAll { x }, Mat::from_vec(1, 1, vec![v]))
    }

    /// Sum over all entries as a 1×1 scalar.
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let xm = &self.nodes[x.0].value;
        let v = xm.data.iter().sum::<f64>();
        self.push(Op::SumAll { x }, Mat::from_vec(1, 1, vec![v]))
    }

    /// y[i, ·] = weights[i]·x[i, ·] for a constant weight per row.
    pub fn scale_rows(&mut self, x: NodeId, weights: Vec<f64>) -> NodeId {
        let xm = &self.nodes[x.0].value;
        assert_eq!(weights.len(), xm.rows, "scale_rows: one weight per row");
        let mut out = xm.clone();
        for i in 0..xm.rows {
            for j in 0..xm.cols {
                out.data[i * xm.cols + j] *= weights[i];
            }
        }
        self.push(Op::ScaleRows { x, weights }, out)
    }

    /// Per-row diagonal Gaussian log-density of a constant observation, B×1.
    pub fn gaussian_logp(&mut self, mean: NodeId, log_std: NodeId, obs: Mat) -> NodeId {
        let mm = &self.nodes[mean.0].value;
        let lm = &self.nodes[log_std.0].value;
        assert_eq!((mm.rows, mm.cols), (lm.rows, lm.cols), "gaussian_logp shapes");
        assert_eq!((mm.rows, mm.cols), (obs.rows, obs.cols), "gaussian_logp obs shape");
        let mut out = Mat::zeros(mm.rows, 1);
        for i in 0..mm.rows {
            let mut acc = 0.0;
            for d in 0..mm.cols {
                let mu = mm.get(i, d);
                let l = lm.get(i, d);
                let z = (obs.get(i, d) - mu) * (-l).exp();
                acc += -0.5 * z * z - l - 0.5 * LN_2PI;
            }
            out.data[i] = acc;
        }
        self.push(Op::GaussianLogProb { mean, log_std, obs }, out)
    }

    /// Reverse sweep from a 1×1 `loss` node; returns gradients for every node.
    pub fn backward(&mut self, loss: NodeId) -> Gradients {
        {
            let lm = &self.nodes[loss.0].value;
            assert_eq!((lm.rows, lm.cols), (1, 1), "backward: loss must be scalar");
        }
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_vec(1, 1, vec![1.0]));

        for i in (0..self.nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            // Re-insert so callers can still read the gradient of interior nodes.
            let gref = &g;
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Linear { x, w, b } => {
                    let (x, w, b) = (*x, *w, *b);
                    let xm = self.nodes[x.0].value.clone();
                    let wm = self.nodes[w.0].value.clone();
                    let (bsz, o) = (gref.rows, gref.cols);
                    let iw = wm.cols;
                    {
                        let gx = ensure(&mut grads, x.0, bsz, iw);
                        for r in 0..bsz {
                            let gr = gref.row(r);
                            let out = &mut gx.data[r * iw..(r + 1) * iw];
                            for (c, &gv) in gr.iter().enumerate().take(o) {
                                if gv == 0.0 {
                                    continue;
                                }
                                let wr = wm.row(c);
                                for k in 0..iw {
                                    out[k] += gv * wr[k];
                                }
                            }
                        }
                    }
                    {
                        let gw = ensure(&mut grads, w.0, o, iw);
                        for r in 0..bsz {
                            let gr = gref.row(r);
                            let xr = xm.row(r);
                            for (c, &gv) in gr.iter().enumerate() {
                                if gv == 0.0 {
                                    continue;
                                }
                                let out = &mut gw.data[c * iw..(c + 1) * iw];
                                for k in 0..iw {
                                    out[k] += gv * xr[k];
                                }
                            }
                        }
                    }
                    {
                        let gb = ensure(&mut grads, b.0, 1, o);
                        for r in 0..bsz {
                            for c in 0..o {
                                gb.data[c] += gref.get(r, c);
                            }
                        }
                    }
                }
                Op::MatMul { a, b } => {
                    let (a, b) = (*a, *b);
                    let am = self.nodes[a.0].value.clone();
                    let bm = self.nodes[b.0].value.clone();
                    let (m, n) = (gref.rows, gref.cols);
                    let k = am.cols;
                    {
                        // da = g · bᵀ
                        let ga = ensure(&mut grads, a.0, m, k);
                        for i2 in 0..m {
                            let gr = gref.row(i2);
                            let out = &mut ga.data[i2 * k..(i2 + 1) * k];
                            for kk in 0..k {
                                let br = bm.row(kk);
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += gr[j] * br[j];
                                }
                                out[kk] += acc;
                            }
                        }
                    }
                    {
                        // db = aᵀ · g
                        let gb = ensure(&mut grads, b.0, k, n);
                        for i2 in 0..m {
                            let ar = am.row(i2);
                            let gr = gref.row(i2);
                            for (kk, &av) in ar.iter().enumerate() {
                                if av == 0.0 {
                                    continue;
                                }
                                let out = &mut gb.data[kk * n..(kk + 1) * n];
                                for j in 0..n {
                                    out[j] += av * gr[j];
                                }
                            }
                        }
                    }
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut grads, a.0, gref, 1.0);
                    accumulate(&mut grads, b.0, gref, 1.0);
                }
                Op::Sub { a, b } => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut grads, a.0, gref, 1.0);
                    accumulate(&mut grads, b.0, gref, -1.0);
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    let av = self.nodes[a.0].value.clone();
                    let bv = self.nodes[b.0].value.clone();
                    accumulate_scaled_by(&mut grads, a.0, gref, &bv);
                    accumulate_scaled_by(&mut grads, b.0, gref, &av);
                }
                Op::Min { a, b } => {
                    let (a, b) = (*a, *b);
                    let av = self.nodes[a.0].value.clone();
                    let bv = self.nodes[b.0].value.clone();
                    let mask_a = av.zip(&bv, |x, y| if x <= y { 1.0 } else { 0.0 });
                    let mask_b = mask_a.map(|m| 1.0 - m);
                    accumulate_scaled_by(&mut grads, a.0, gref, &mask_a);
                    accumulate_scaled_by(&mut grads, b.0, gref, &mask_b);
                }
                Op::Affine { x, scale } => {
                    let (x, s) = (*x, *scale);
                    accumulate(&mut grads, x.0, gref, s);
                }
                Op::Tanh { x } => {
                    let x = *x;
                    let y = self.nodes[i].value.clone();
                    let factor = y.map(|t| 1.0 - t * t);
                    accumulate_scaled_by(&mut grads, x.0, gref, &factor);
                }
                Op::Exp { x } => {
                    let x = *x;
                    let y = self.nodes[i].value.clone();
                    accumulate_scaled_by(&mut grads, x.0, gref, &y);
                }
                Op::Ln { x } => {
                    let x = *x;
                    let factor = self.nodes[x.0].value.map(|t| 1.0 / t);
                    accumulate_scaled_by(&mut grads, x.0, gref, &factor);
                }
                Op::Sigmoid { x } => {
                    let x = *x;
                    let y = self.nodes[i].value.clone();
                    let factor = y.map(|t| t * (1.0 - t));
                    accumulate_scaled_by(&mut grads, x.0, gref, &factor);
                }
                Op::Softplus { x } => {
                    let x = *x;
                    let factor = self.nodes[x.0].value.map(|t| 1.0 / (1.0 + (-t).exp()));
                    accumulate_scaled_by(&mut grads, x.0, gref, &factor);
                }
                Op::Sqrt { x } => {
                    let x = *x;
                    let y = self.nodes[i].value.clone();
                    let factor = y.map(|t| 0.5 / t);
                    accumulate_scaled_by(&mut grads, x.0, gref, &factor);
                }
                Op::Clamp { x, lo, hi } => {
                    let (x, lo, hi) = (*x, *lo, *hi);
                    let factor = self.nodes[x.0].value.map(|t| {
                        if t >= lo && t <= hi {
                            1.0
                        } else {
                            0.0
                        }
                    });
                    accumulate_scaled_by(&mut grads, x.0, gref, &factor);
                }
                Op::LogSoftmaxRows { x } => {
                    let x = *x;
                    let y = self.nodes[i].value.clone();
                    let (r, c) = (y.rows, y.cols);
                    let gx = ensure(&mut grads, x.0, r, c);
                    for i2 in 0..r {
                        let gsum: f64 = gref.row(i2).iter().sum();
                        for j in 0..c {
                            let p = y.get(i2, j).exp();
                            gx.data[i2 * c + j] += gref.get(i2, j) - p * gsum;
                        }
                    }
                }
                Op::Pick { x, idx } => {
                    let x = *x;
                    let idx = idx.clone();
                    let (r, c) = self.shape(x);
                    let gx = ensure(&mut grads, x.0, r, c);
                    for (i2, &j) in idx.iter().enumerate() {
                        gx.data[i2 * c + j] += gref.get(i2, 0);
                    }
                }
                Op::GatherRows { x, idx } => {
                    let x = *x;
                    let idx = idx.clone();
                    let (r, c) = self.shape(x);
                    let gx = ensure(&mut grads, x.0, r, c);
                    for (i2, &src) in idx.iter().enumerate() {
                        let gr = gref.row(i2);
                        let out = &mut gx.data[src * c..(src + 1) * c];
                        for j in 0..c {
                            out[j] += gr[j];
                        }
                    }
                }
                Op::SliceCols { x, start, len } => {
                    let (x, start, len) = (*x, *start, *len);
                    let (r, c) = self.shape(x);
                    let gx = ensure(&mut grads, x.0, r, c);
                    for i2 in 0..r {
                        for j in 0..len {
                            gx.data[i2 * c + start + j] += gref.get(i2, j);
                        }
                    }
                }
                Op::ConcatCols { a, b } => {
                    let (a, b) = (*a, *b);
                    let (r, ca) = self.shape(a);
                    let (_, cb) = self.shape(b);
                    {
                        let ga = ensure(&mut grads, a.0, r, ca);
                        for i2 in 0..r {
                            for j in 0..ca {
                                ga.data[i2 * ca + j] += gref.get(i2, j);
                            }
                        }
                    }
                    {
                        let gb = ensure(&mut grads, b.0, r, cb);
                        for i2 in 0..r {
                            for j in 0..cb {
                                gb.data[i2 * cb + j] += gref.get(i2, ca + j);
                            }
                        }
                    }
                }
                Op::RowSum { x } => {
                    let x = *x;
                    let (r, c) = self.shape(x);
                    let gx = ensure(&mut grads, x.0, r, c);
                    for i2 in 0..r {
                        let gv = gref.get(i2, 0);
                        for j in 0..c {
                            gx.data[i2 * c + j] += gv;
                        }
                    }
                }
                Op::MeanAll { x } => {
                    let x = *x;
                    let (r, c) = self.shape(x);
                    let gv = gref.get(0, 0) / (r * c) as f64;
                    let gx = ensure(&mut grads, x.0, r, c);
                    for v in gx.data.iter_mut() {
                        *v += gv;
                    }
                }
                Op::SumAll { x } => {
                    let x = *x;
                    let (r, c) = self.shape(x);
                    let gv = gref.get(0, 0);
                    let gx = ensure(&mut grads, x.0, r, c);
                    for v in gx.data.iter_mut() {
                        *v += gv;
                    }
                }
                Op::Reshape { x } => {
                    let x = *x;
                    let (r, c) = self.shape(x);
                    let gx = ensure(&mut grads, x.0, r, c);
                    for (dst, src) in gx.data.iter_mut().zip(gref.data.iter()) {
                        *dst += src;
                    }
                }
                Op::ScaleRows { x, weights } => {
                    let x = *x;
                    let weights = weights.clone();
                    let (r, c) = self.shape(x);
                    let gx = ensure(&mut grads, x.0, r, c);
                    for i2 in 0..r {
                        let w = weights[i2];
                        for j in 0..c {
                            gx.data[i2 * c + j] += w * gref.get(i2, j);
                        }
                    }
                }
                Op::GaussianLogProb { mean, log_std, obs } => {
                    let (mean, log_std) = (*mean, *log_std);
                    let obs = obs.clone();
                    let mm = self.nodes[mean.0].value.clone();
                    let lm = self.nodes[log_std.0].value.clone();
                    let (r, c) = (mm.rows, mm.cols);
                    {
                        let gmean = ensure(&mut grads, mean.0, r, c);
                        for i2 in 0..r {
                            let gv = gref.get(i2, 0);
                            for d in 0..c {
                                let inv_var = (-2.0 * lm.get(i2, d)).exp();
                                gmean.data[i2 * c + d] +=
                                    gv * (obs.get(i2, d) - mm.get(i2, d)) * inv_var;
                            }
                        }
                    }
                    {
                        let glog = ensure(&mut grads, log_std.0, r, c);
                        for i2 in 0..r {
                            let gv = gref.get(i2, 0);
                            for d in 0..c {
                                let diff = obs.get(i2, d) - mm.get(i2, d);
                                let inv_var = (-2.0 * lm.get(i2, d)).exp();
                                glog.data[i2 * c + d] += gv * (diff * diff * inv_var - 1.0);
                            }
                        }
                    }
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }
}

/// Numerically stable softplus ln(1 + eˣ).
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn ensure<'a>(
    grads: &'a mut [Option<Mat>],
    idx: usize,
    rows: usize,
    cols: usize,
) -> &'a mut Mat {
    if grads[idx].is_none() {
        grads[idx] = Some(Mat::zeros(rows, cols));
    }
    grads[idx].as_mut().unwrap()
}

fn accumulate(grads: &mut [Option<Mat>], idx: usize, g: &Mat, scale: f64) {
    let tgt = ensure(grads, idx, g.rows, g.cols);
    for (t, &s) in tgt.data.iter_mut().zip(&g.data) {
        *t += scale * s;
    }
}

fn accumulate_scaled_by(grads: &mut [Option<Mat>], idx: usize, g: &Mat, factor: &Mat) {
    let tgt = ensure(grads, idx, g.rows, g.cols);
    for ((t, &s), &f) in tgt.data.iter_mut().zip(&g.data).zip(&factor.data) {
        *t += s * f;
    }
}
