//! Reverse-mode differentiation on a linear tape.
//!
//! Forward ops execute eagerly and append an entry to the tape; `backward`
//! replays the entries in reverse, accumulating vector-Jacobian products.
//! Node values live in a flat arena, so the whole graph for one training
//! step is dropped at once.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    MatVec { w: usize, x: usize, out: usize, rows: usize, cols: usize },
    Add { a: usize, b: usize, out: usize },
    Sub { a: usize, b: usize, out: usize },
    Mul { a: usize, b: usize, out: usize },
    Scale { a: usize, c: f64, out: usize },
    AddScalar { a: usize, out: usize },
    Exp { a: usize, out: usize },
    Silu { a: usize, out: usize },
    Clamp { a: usize, lo: f64, hi: f64, out: usize },
    GroupNorm { x: usize, out: usize, groups: usize, eps: f64 },
    Sum { a: usize, out: usize },
    Dot { a: usize, b: usize, out: usize },
    AddN { inputs: Vec<usize>, out: usize },
    Concat { inputs: Vec<usize>, out: usize },
    Slice { a: usize, offset: usize, len: usize, out: usize },
    LogSoftmaxRows { x: usize, out: usize, rows: usize, cols: usize },
    LogSumExpRows { x: usize, out: usize, rows: usize, cols: usize },
    SelectPerRow { x: usize, idx: Vec<usize>, out: usize, cols: usize },
}

#[derive(Default)]
pub struct Tape {
    vals: Vec<Vec<f64>>,
    ops: Vec<Op>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, data: Vec<f64>) -> usize {
        self.vals.push(data);
        self.vals.len() - 1
    }

    /// Constant or parameter node. Gradients accumulate for every node;
    /// the caller decides which ones it reads back.
    pub fn leaf(&mut self, data: &[f64]) -> Var {
        Var(self.push(data.to_vec()))
    }

    pub fn leaf_tensor(&mut self, t: &Tensor) -> Var {
        self.leaf(t.data())
    }

    pub fn leaf_scalar(&mut self, v: f64) -> Var {
        Var(self.push(vec![v]))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.vals[v.0]
    }

    pub fn value_scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.vals[v.0].len(), 1);
        self.vals[v.0][0]
    }

    pub fn len_of(&self, v: Var) -> usize {
        self.vals[v.0].len()
    }

    /// y = W x, with W row-major `rows x cols`.
    pub fn matvec(&mut self, w: Var, x: Var, rows: usize, cols: usize) -> Var {
        assert_eq!(self.vals[w.0].len(), rows * cols, "matvec: bad W length");
        assert_eq!(self.vals[x.0].len(), cols, "matvec: bad x length");
        let mut y = vec![0.0; rows];
        {
            let wv = &self.vals[w.0];
            let xv = &self.vals[x.0];
            for r in 0..rows {
                let row = &wv[r * cols..(r + 1) * cols];
                y[r] = row.iter().zip(xv).map(|(a, b)| a * b).sum();
            }
        }
        let out = self.push(y);
        self.ops.push(Op::MatVec { w: w.0, x: x.0, out, rows, cols });
        Var(out)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> usize {
        assert_eq!(
            self.vals[a.0].len(),
            self.vals[b.0].len(),
            "elementwise op: length mismatch"
        );
        let data: Vec<f64> = self.vals[a.0]
            .iter()
            .zip(&self.vals[b.0])
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.binary(a, b, |x, y| x + y);
        self.ops.push(Op::Add { a: a.0, b: b.0, out });
        Var(out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.binary(a, b, |x, y| x - y);
        self.ops.push(Op::Sub { a: a.0, b: b.0, out });
        Var(out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.binary(a, b, |x, y| x * y);
        self.ops.push(Op::Mul { a: a.0, b: b.0, out });
        Var(out)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data: Vec<f64> = self.vals[a.0].iter().map(|&x| x * c).collect();
        let out = self.push(data);
        self.ops.push(Op::Scale { a: a.0, c, out });
        Var(out)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let data: Vec<f64> = self.vals[a.0].iter().map(|&x| x + c).collect();
        let out = self.push(data);
        self.ops.push(Op::AddScalar { a: a.0, out });
        Var(out)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self.vals[a.0].iter().map(|&x| x.exp()).collect();
        let out = self.push(data);
        self.ops.push(Op::Exp { a: a.0, out });
        Var(out)
    }

    /// SiLU activation x * sigmoid(x).
    pub fn silu(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self.vals[a.0].iter().map(|&x| x * sigmoid(x)).collect();
        let out = self.push(data);
        self.ops.push(Op::Silu { a: a.0, out });
        Var(out)
    }

    /// Clamp with pass-through gradient strictly inside [lo, hi].
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let data: Vec<f64> = self.vals[a.0].iter().map(|&x| x.clamp(lo, hi)).collect();
        let out = self.push(data);
        self.ops.push(Op::Clamp { a: a.0, lo, hi, out });
        Var(out)
    }

    /// Per-group standardization: zero mean, unit variance up to eps.
    pub fn group_norm(&mut self, x: Var, groups: usize, eps: f64) -> Var {
        let n = self.vals[x.0].len();
        assert!(groups >= 1 && n % groups == 0, "group_norm: bad group count");
        let gsize = n / groups;
        let mut data = vec![0.0; n];
        for g in 0..groups {
            let seg = &self.vals[x.0][g * gsize..(g + 1) * gsize];
            let mean = seg.iter().sum::<f64>() / gsize as f64;
            let var = seg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / gsize as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (i, &v) in seg.iter().enumerate() {
                data[g * gsize + i] = (v - mean) * inv;
            }
        }
        let out = self.push(data);
        self.ops.push(Op::GroupNorm { x: x.0, out, groups, eps });
        Var(out)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.vals[a.0].iter().sum();
        let out = self.push(vec![s]);
        self.ops.push(Op::Sum { a: a.0, out });
        Var(out)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.vals[a.0].len(), self.vals[b.0].len(), "dot: length mismatch");
        let s: f64 = self.vals[a.0]
            .iter()
            .zip(&self.vals[b.0])
            .map(|(x, y)| x * y)
            .sum();
        let out = self.push(vec![s]);
        self.ops.push(Op::Dot { a: a.0, b: b.0, out });
        Var(out)
    }

    /// Elementwise sum of same-length nodes.
    pub fn add_n(&mut self, inputs: &[Var]) -> Var {
        assert!(!inputs.is_empty(), "add_n: empty input list");
        let n = self.vals[inputs[0].0].len();
        let mut data = vec![0.0; n];
        for v in inputs {
            assert_eq!(self.vals[v.0].len(), n, "add_n: length mismatch");
            for (d, s) in data.iter_mut().zip(&self.vals[v.0]) {
                *d += s;
            }
        }
        let out = self.push(data);
        self.ops.push(Op::AddN {
            inputs: inputs.iter().map(|v| v.0).collect(),
            out,
        });
        Var(out)
    }

    pub fn concat(&mut self, inputs: &[Var]) -> Var {
        let mut data = Vec::new();
        for v in inputs {
            data.extend_from_slice(&self.vals[v.0]);
        }
        let out = self.push(data);
        self.ops.push(Op::Concat {
            inputs: inputs.iter().map(|v| v.0).collect(),
            out,
        });
        Var(out)
    }

    pub fn slice(&mut self, a: Var, offset: usize, len: usize) -> Var {
        assert!(offset + len <= self.vals[a.0].len(), "slice: out of range");
        let data = self.vals[a.0][offset..offset + len].to_vec();
        let out = self.push(data);
        self.ops.push(Op::Slice { a: a.0, offset, len, out });
        Var(out)
    }

    /// Row-wise log-softmax of a `rows x cols` node.
    pub fn log_softmax_rows(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        assert_eq!(self.vals[x.0].len(), rows * cols, "log_softmax: bad length");
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let seg = &self.vals[x.0][r * cols..(r + 1) * cols];
            let m = seg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + seg.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for (i, &v) in seg.iter().enumerate() {
                data[r * cols + i] = v - lse;
            }
        }
        let out = self.push(data);
        self.ops.push(Op::LogSoftmaxRows { x: x.0, out, rows, cols });
        Var(out)
    }

    /// Row-wise log-sum-exp; output has one entry per row.
    pub fn log_sum_exp_rows(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        assert_eq!(self.vals[x.0].len(), rows * cols, "log_sum_exp: bad length");
        let mut data = vec![0.0; rows];
        for r in 0..rows {
            let seg = &self.vals[x.0][r * cols..(r + 1) * cols];
            let m = seg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            data[r] = m + seg.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        }
        let out = self.push(data);
        self.ops.push(Op::LogSumExpRows { x: x.0, out, rows, cols });
        Var(out)
    }

    /// out[r] = x[r, idx[r]].
    pub fn select_per_row(&mut self, x: Var, idx: &[usize], rows: usize, cols: usize) -> Var {
        assert_eq!(self.vals[x.0].len(), rows * cols, "select: bad length");
        assert_eq!(idx.len(), rows, "select: bad index count");
        let data: Vec<f64> = idx
            .iter()
            .enumerate()
            .map(|(r, &c)| self.vals[x.0][r * cols + c])
            .collect();
        let out = self.push(data);
        self.ops.push(Op::SelectPerRow {
            x: x.0,
            idx: idx.to_vec(),
            out,
            cols,
        });
        Var(out)
    }

    /// Reverse pass from a scalar loss. Every node gets a gradient buffer;
    /// nodes not on a path to the loss keep zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.vals[loss.0].len() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got length {}",
                self.vals[loss.0].len()
            )));
        }
        let mut grads: Vec<Vec<f64>> = self.vals.iter().map(|v| vec![0.0; v.len()]).collect();
        grads[loss.0][0] = 1.0;

        for op in self.ops.iter().rev() {
            match op {
                Op::MatVec { w, x, out, rows, cols } => {
                    let g = std::mem::take(&mut grads[*out]);
                    for r in 0..*rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        for c in 0..*cols {
                            grads[*w][r * cols + c] += gr * self.vals[*x][c];
                        }
                    }
                    for c in 0..*cols {
                        let mut acc = 0.0;
                        for r in 0..*rows {
                            acc += g[r] * self.vals[*w][r * cols + c];
                        }
                        grads[*x][c] += acc;
                    }
                    grads[*out] = g;
                }
                Op::Add { a, b, out } => {
                    let g = std::mem::take(&mut grads[*out]);
                    for i in 0..g.len() {
                        grads[*a][i] += g[i];
                    }
                    for i in 0..g.len() {
                        grads[*b][i] += g[i];
                    }
                    grads[*out] = g;
                }
                Op::Sub { a, b, out } => {
                    let g = std::mem::take(&mut grads[*out]);
                    for i in 0..g.len() {
                        grads[*a][i] += g[i];
                    }
                    for i in 0..g.len() {
                        grads[*b][i] -= g[i];
                    }
                    grads[*out] = g;
                }
                Op::Mul { a, b, out } => {
                    let g = std::mem::take(&mut grads[*out]);
                    for i in 0..g.len() {
                        grads[*a][i] += g[i] * self.vals[*b][i];
                    }
                    for i in 0..g.len() {
                        grads[*b][i] += g[i] * self.vals[*a][i];
                    }
                    grads[*out] = g;
                }
                Op::Scale { a, c, out } => {
                    let g = std::mem::take(&mut grads[*out]);
                    for i in 0..g.len() {
                        grads[*a][i] += g[i] * c;
                    }
                    grads[*out] = g;
                }
                Op::AddScalar { a, out } => {
                    let g = std::mem::take(&mut grads[*out]);
                    for i in 0..g.len() {
                        grads[*a][i] += g[i];
                    }
                    grads[*out] = g;
                }
                Op::Exp { a, out } => {
                    let g = std::mem::take(&mut grads[*out]);
                    for i in 0..g.len() {
                        grads[*a][i] += g[i] * self.vals[*out][i];
                    }
                    grads[*out] = g;
                }
                Op::Silu { a, out } => {
                    let g = std::mem::take(&mut grads[*out]);
                    for i in 0..g.len() {
                        let x = self.vals[*a][i];
                        let s = sigmoid(x);
                        grads[*a][i] += g[i] * (s * (1.0 + x * (1.0 - s)));
                    }
                    grads[*out] = g;
                }
                Op::Clamp { a, lo, hi, out } => {
                    let g = std::mem::take(&mut grads[*out]);
                    for i in 0..g.len() {
                        let x = self.vals[*a][i];
                        if x >= *lo && x <= *hi {
                            grads[*a][i] += g[i];
                        }
                    }
                    grads[*out] = g;
                }
                Op::GroupNorm { x, out, groups, eps } => {
                    let g = std::mem::take(&mut grads[*out]);
                    let n = self.vals[*x].len();
                    let gsize = n / groups;
                    for gi in 0..*groups {
                        let seg = &self.vals[*x][gi * gsize..(gi + 1) * gsize];
                        let gseg = &g[gi * gsize..(gi + 1) * gsize];
                        let mean = seg.iter().sum::<f64>() / gsize as f64;
                        let var =
                            seg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / gsize as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        let yseg: Vec<f64> = seg.iter().map(|&v| (v - mean) * inv).collect();
                        let g_mean = gseg.iter().sum::<f64>() / gsize as f64;
                        let gy_mean = gseg
                            .iter()
                            .zip(&yseg)
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / gsize as f64;
                        for i in 0..gsize {
                            grads[*x][gi * gsize + i] +=
                                inv * (gseg[i] - g_mean - yseg[i] * gy_mean);
                        }
                    }
                    grads[*out] = g;
                }
                Op::Sum { a, out } => {
                    let g0 = grads[*out][0];
                    for v in grads[*a].iter_mut() {
                        *v += g0;
                    }
                }
                Op::Dot { a, b, out } => {
                    let g0 = grads[*out][0];
                    for i in 0..self.vals[*a].len() {
                        grads[*a][i] += g0 * self.vals[*b][i];
                    }
                    for i in 0..self.vals[*b].len() {
                        grads[*b][i] += g0 * self.vals[*a][i];
                    }
                }
                Op::AddN { inputs, out } => {
                    let g = std::mem::take(&mut grads[*out]);
                    for inp in inputs {
                        for i in 0..g.len() {
                            grads[*inp][i] += g[i];
                        }
                    }
                    grads[*out] = g;
                }
                Op::Concat { inputs, out } => {
                    let g = std::mem::take(&mut grads[*out]);
                    let mut off = 0;
                    for inp in inputs {
                        let len = self.vals[*inp].len();
                        for i in 0..len {
                            grads[*inp][i] += g[off + i];
                        }
                        off += len;
                    }
                    grads[*out] = g;
                }
                Op::Slice { a, offset, len, out } => {
                    let g = std::mem::take(&mut grads[*out]);
                    for i in 0..*len {
                        grads[*a][offset + i] += g[i];
                    }
                    grads[*out] = g;
                }
                Op::LogSoftmaxRows { x, out, rows, cols } => {
                    let g = std::mem::take(&mut grads[*out]);
                    for r in 0..*rows {
                        let gsum: f64 = g[r * cols..(r + 1) * cols].iter().sum();
                        for c in 0..*cols {
                            let p = self.vals[*out][r * cols + c].exp();
                            grads[*x][r * cols + c] += g[r * cols + c] - p * gsum;
                        }
                    }
                    grads[*out] = g;
                }
                Op::LogSumExpRows { x, out, rows, cols } => {
                    let g = std::mem::take(&mut grads[*out]);
                    for r in 0..*rows {
                        let lse = self.vals[*out][r];
                        for c in 0..*cols {
                            let p = (self.vals[*x][r * cols + c] - lse).exp();
                            grads[*x][r * cols + c] += g[r] * p;
                        }
                    }
                    grads[*out] = g;
                }
                Op::SelectPerRow { x, idx, out, cols } => {
                    let g = std::mem::take(&mut grads[*out]);
                    for (r, &c) in idx.iter().enumerate() {
                        grads[*x][r * cols + c] += g[r];
                    }
                    grads[*out] = g;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradient buffers aligned with tape nodes.
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> &[f64] {
        &self.grads[v.0]
    }
}
