//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value and whatever it needs
//! for the backward rule. Node indices are creation order, which is also a
//! topological order, so [`Tape::backward`] is a single reverse sweep.

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pointwise {
    Tanh,
    Sigmoid,
    Relu,
}

impl Pointwise {
    fn apply(self, x: f64) -> f64 {
        match self {
            Pointwise::Tanh => x.tanh(),
            Pointwise::Sigmoid => sigmoid(x),
            Pointwise::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Pointwise::Tanh => 1.0 - y * y,
            Pointwise::Sigmoid => y * (1.0 - y),
            Pointwise::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Batch-norm hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnConfig {
    pub momentum: f64,
    pub epsilon: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        Self {
            momentum: 0.99,
            epsilon: 0.001,
        }
    }
}

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BnStats {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Conv1d {
        input: Var,
        kernels: Var,
        bias: Var,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Pointwise(Pointwise, Var),
    Hadamard(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    ScaleBy(Var, Var),
    AddScalar(Var, Var),
    Affine(Var, f64),
    MulConst(Var, Vec<f64>),
    Sum(Var),
    Mean(Var),
    DimShuffle(Var),
    SelectLast(Var, usize),
    ConcatCols(Vec<Var>),
    GlobalAvgPool(Var),
    Softmax(Var),
    WeightedBce {
        probs: Var,
        targets: Vec<f64>,
        weight: f64,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Lower clamp applied to log arguments in the weighted cross-entropy.
pub const LOG_CLAMP: f64 = 1e-12;

/// Recording of differentiable operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Registers an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of `v` (zeros when nothing flowed into it).
    pub fn grad(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.nodes[v.0].value.shape()),
        }
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    // ---------------------------------------------------------------------
    // forward ops
    // ---------------------------------------------------------------------

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let [m, k] = self.value(a).dims2("matmul")?;
        let [k2, n] = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            (m, k, n),
            Strided::new(self.data(a), 0, k, 1),
            Strided::new(self.data(b), 0, n, 1),
            &mut out,
            (0, n, 1),
            0.0,
        );
        let value = Tensor::new(&[m, n], out)?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        Ok(self.push(Op::Transpose(a), value))
    }

    /// Cross-correlation with "same" zero padding.
    ///
    /// `input` is `C_in×T` or `B×C_in×T`; `kernels` is `C_out×C_in×K` with
    /// odd `K`; `bias` is `C_out`. Output is `[B×]C_out×T`.
    pub fn conv1d(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        let (batch, c_in, t_len, batched) = match self.shape(input) {
            &[c, t] => (1, c, t, false),
            &[b, c, t] => (b, c, t, true),
            s => return Err(Error::dim("conv1d", s, &[0, 0, 0])),
        };
        let [c_out, kc_in, k] = self.value(kernels).dims3("conv1d")?;
        if k % 2 == 0 {
            return Err(Error::Config(format!("conv1d kernel size must be odd, got {k}")));
        }
        if kc_in != c_in {
            return Err(Error::dim("conv1d", self.shape(input), self.shape(kernels)));
        }
        if self.shape(bias) != [c_out] {
            return Err(Error::dim("conv1d", self.shape(kernels), self.shape(bias)));
        }
        let geom = ConvGeom {
            batch,
            c_in,
            t_len,
            k,
        };
        let xpad = geom.pad(self.data(input));
        let mut wide = vec![0.0; c_out * geom.wide()];
        for tap in 0..k {
            gemm(
                (c_out, c_in, geom.wide()),
                Strided::new(self.data(kernels), tap, c_in * k, k),
                Strided::new(&xpad, tap, geom.padded_cols(), 1),
                &mut wide,
                (0, geom.wide(), 1),
                1.0,
            );
        }
        let bias_v = self.data(bias);
        let mut out = vec![0.0; batch * c_out * t_len];
        for b in 0..batch {
            for co in 0..c_out {
                let src = &wide[co * geom.wide() + b * geom.padded_len()..][..t_len];
                let dst = &mut out[(b * c_out + co) * t_len..][..t_len];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + bias_v[co];
                }
            }
        }
        let shape: Vec<usize> = if batched {
            vec![batch, c_out, t_len]
        } else {
            vec![c_out, t_len]
        };
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(
            Op::Conv1d {
                input,
                kernels,
                bias,
            },
            value,
        ))
    }

    /// Per-channel normalization of a `B×C×T` input over batch and time.
    ///
    /// In train mode batch statistics are used and `stats` is updated as
    /// `running = momentum·running + (1−momentum)·batch`; in infer mode the
    /// running statistics are used and left untouched.
    pub fn batchnorm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BnStats,
        mode: Mode,
        cfg: BnConfig,
    ) -> Result<Var> {
        let [batch, channels, t_len] = self.value(input).dims3("batchnorm")?;
        if self.shape(gamma) != [channels] || self.shape(beta) != [channels] {
            return Err(Error::dim("batchnorm", self.shape(input), self.shape(gamma)));
        }
        if stats.running_mean.shape() != [channels] || stats.running_var.shape() != [channels] {
            return Err(Error::dim(
                "batchnorm",
                self.shape(input),
                stats.running_mean.shape(),
            ));
        }
        let n = batch * t_len;
        let train = mode == Mode::Train;
        if train && n < 2 {
            return Err(Error::DegenerateVariance { channel: 0 });
        }
        let x = self.data(input);
        let g = self.data(gamma);
        let be = self.data(beta);
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; channels];
        let mut out = vec![0.0; x.len()];
        for c in 0..channels {
            let (mean, var) = if train {
                let mut sum = 0.0;
                for b in 0..batch {
                    sum += x[(b * channels + c) * t_len..][..t_len].iter().sum::<f64>();
                }
                let mean = sum / n as f64;
                let mut ss = 0.0;
                for b in 0..batch {
                    ss += x[(b * channels + c) * t_len..][..t_len]
                        .iter()
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f64>();
                }
                let var = ss / n as f64;
                let m = cfg.momentum;
                let rm = &mut stats.running_mean.data_mut()[c];
                *rm = m * *rm + (1.0 - m) * mean;
                let rv = &mut stats.running_var.data_mut()[c];
                *rv = m * *rv + (1.0 - m) * var;
                (mean, var)
            } else {
                (
                    stats.running_mean.data()[c],
                    stats.running_var.data()[c],
                )
            };
            let is = 1.0 / (var + cfg.epsilon).sqrt();
            inv_std[c] = is;
            for b in 0..batch {
                let base = (b * channels + c) * t_len;
                for i in base..base + t_len {
                    let xh = (x[i] - mean) * is;
                    xhat[i] = xh;
                    out[i] = g[c] * xh + be[c];
                }
            }
        }
        let value = Tensor::new(&[batch, channels, t_len], out)?;
        Ok(self.push(
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            value,
        ))
    }

    pub fn pointwise(&mut self, kind: Pointwise, a: Var) -> Var {
        let src = self.value(a);
        let data = src.data().iter().map(|&x| kind.apply(x)).collect();
        let value = Tensor {
            shape: src.shape().to_vec(),
            data,
        };
        self.push(Op::Pointwise(kind, a), value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.pointwise(Pointwise::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.pointwise(Pointwise::Sigmoid, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.pointwise(Pointwise::Relu, a)
    }

    fn zip_same(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor {
            shape: self.shape(a).to_vec(),
            data,
        })
    }

    /// Elementwise product.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("hadamard", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Hadamard(a, b), value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), value))
    }

    /// Adds a length-`C` vector to every row of an `R×C` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let [_, cols] = self.value(a).dims2("add_bias")?;
        if self.shape(bias) != [cols] {
            return Err(Error::dim("add_bias", self.shape(a), self.shape(bias)));
        }
        let bv = self.data(bias);
        let data = self
            .data(a)
            .chunks(cols)
            .flat_map(|row| row.iter().zip(bv).map(|(x, b)| x + b))
            .collect();
        let value = Tensor {
            shape: self.shape(a).to_vec(),
            data,
        };
        Ok(self.push(Op::AddBias(a, bias), value))
    }

    /// Multiplies every element of `a` by the one-element tensor `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.scalar_of("scale_by", s)?;
        let value = self.map(a, |x| x * sv);
        Ok(self.push(Op::ScaleBy(a, s), value))
    }

    /// Adds the one-element tensor `s` to every element of `a`.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.scalar_of("add_scalar", s)?;
        let value = self.map(a, |x| x + sv);
        Ok(self.push(Op::AddScalar(a, s), value))
    }

    /// `alpha·a + beta` with constant coefficients.
    pub fn affine(&mut self, a: Var, alpha: f64, beta: f64) -> Var {
        let value = self.map(a, |x| alpha * x + beta);
        self.push(Op::Affine(a, alpha), value)
    }

    /// Elementwise product with a constant (non-differentiated) mask.
    pub fn mul_const(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(a).numel() {
            return Err(Error::dim("mul_const", self.shape(a), &[mask.len()]));
        }
        let data = self.data(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor {
            shape: self.shape(a).to_vec(),
            data,
        };
        Ok(self.push(Op::MulConst(a, mask), value))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.data(a).iter().sum());
        self.push(Op::Sum(a), value)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let value = Tensor::scalar(d.iter().sum::<f64>() / d.len() as f64);
        self.push(Op::Mean(a), value)
    }

    /// Swaps the last two axes: `M×Q → Q×M` or `B×M×Q → B×Q×M`.
    pub fn dimension_shuffle(&mut self, a: Var) -> Result<Var> {
        let (batch, rows, cols) = match self.shape(a) {
            &[r, c] => (1, r, c),
            &[b, r, c] => (b, r, c),
            s => return Err(Error::dim("dimension_shuffle", s, &[0, 0])),
        };
        let src = self.data(a);
        let mut out = vec![0.0; src.len()];
        for b in 0..batch {
            let base = b * rows * cols;
            for r in 0..rows {
                for c in 0..cols {
                    out[base + c * rows + r] = src[base + r * cols + c];
                }
            }
        }
        let mut shape = self.shape(a).to_vec();
        let n = shape.len();
        shape.swap(n - 2, n - 1);
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(Op::DimShuffle(a), value))
    }

    /// `x[:, :, index]` of a `B×Q×M` input, giving `B×Q`.
    pub fn select_last(&mut self, a: Var, index: usize) -> Result<Var> {
        let [batch, rows, cols] = self.value(a).dims3("select_last")?;
        if index >= cols {
            return Err(Error::Contract(format!(
                "select_last index {index} out of range for last axis {cols}"
            )));
        }
        let src = self.data(a);
        let data = (0..batch * rows).map(|i| src[i * cols + index]).collect();
        let value = Tensor::new(&[batch, rows], data)?;
        Ok(self.push(Op::SelectLast(a, index), value))
    }

    /// Concatenates `B×n_i` matrices along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat_cols"));
        }
        let [rows, _] = self.value(parts[0]).dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let [r, c] = self.value(p).dims2("concat_cols")?;
            if r != rows {
                return Err(Error::dim("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[r * w..(r + 1) * w]);
            }
        }
        let value = Tensor::new(&[rows, total], out)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value))
    }

    /// Mean over the time axis: `B×C×T → B×C`.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let [batch, channels, t_len] = self.value(a).dims3("global_avg_pool")?;
        let data = self
            .data(a)
            .chunks(t_len)
            .map(|row| row.iter().sum::<f64>() / t_len as f64)
            .collect();
        let value = Tensor::new(&[batch, channels], data)?;
        Ok(self.push(Op::GlobalAvgPool(a), value))
    }

    /// Row-wise softmax of an `R×L` matrix.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let [_, cols] = self.value(a).dims2("softmax")?;
        let mut data = Vec::with_capacity(self.value(a).numel());
        for row in self.data(a).chunks(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            data.extend(exps.into_iter().map(|e| e / z));
        }
        let value = Tensor {
            shape: self.shape(a).to_vec(),
            data,
        };
        Ok(self.push(Op::Softmax(a), value))
    }

    /// Mean over rows of
    /// `−(w·t·log(p) + (1−t)·log(1−p))` where `p` is column 1 of `probs`.
    pub fn weighted_bce(&mut self, probs: Var, targets: &[f64], weight: f64) -> Result<Var> {
        let [rows, cols] = self.value(probs).dims2("weighted_bce")?;
        if cols < 2 || targets.len() != rows {
            return Err(Error::dim(
                "weighted_bce",
                self.shape(probs),
                &[targets.len(), 2],
            ));
        }
        let p = self.data(probs);
        let total: f64 = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| {
                let pr = p[r * cols + 1];
                -(weight * t * pr.max(LOG_CLAMP).ln()
                    + (1.0 - t) * (1.0 - pr).max(LOG_CLAMP).ln())
            })
            .sum();
        let value = Tensor::scalar(total / rows as f64);
        Ok(self.push(
            Op::WeightedBce {
                probs,
                targets: targets.to_vec(),
                weight,
            },
            value,
        ))
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let src = self.value(a);
        Tensor {
            shape: src.shape().to_vec(),
            data: src.data().iter().map(|&x| f(x)).collect(),
        }
    }

    fn scalar_of(&self, op: &'static str, s: Var) -> Result<f64> {
        let v = self.value(s);
        if v.numel() != 1 {
            return Err(Error::dim(op, v.shape(), &[1]));
        }
        Ok(v.item())
    }

    // ---------------------------------------------------------------------
    // backward
    // ---------------------------------------------------------------------

    /// Reverse sweep from a scalar `root`. Adjoints are computed fresh and
    /// then added into each node's stored gradient, so calling this twice
    /// without [`Tape::zero_grads`] doubles every gradient.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
            let slot = &mut self.grads[i];
            match slot {
                Some(t) => t.data.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => {
                    *slot = Some(Tensor {
                        shape: self.nodes[i].value.shape.clone(),
                        data: g,
                    })
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let [m, k] = [self.shape(*a)[0], self.shape(*a)[1]];
                let n = self.shape(*b)[1];
                // dA = dC · Bᵀ
                gemm(
                    (m, n, k),
                    Strided::new(g, 0, n, 1),
                    Strided::new(self.data(*b), 0, 1, n),
                    acc(adj, *a, m * k),
                    (0, k, 1),
                    1.0,
                );
                // dB = Aᵀ · dC
                gemm(
                    (k, m, n),
                    Strided::new(self.data(*a), 0, 1, k),
                    Strided::new(g, 0, n, 1),
                    acc(adj, *b, k * n),
                    (0, n, 1),
                    1.0,
                );
            }
            Op::Transpose(a) => {
                let [r, c] = [self.shape(*a)[0], self.shape(*a)[1]];
                let da = acc(adj, *a, r * c);
                for ri in 0..r {
                    for ci in 0..c {
                        da[ri * c + ci] += g[ci * r + ri];
                    }
                }
            }
            Op::Conv1d {
                input,
                kernels,
                bias,
            } => self.conv1d_backward(*input, *kernels, *bias, g, adj),
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let shape = self.shape(*input);
                let (batch, channels, t_len) = (shape[0], shape[1], shape[2]);
                let n = (batch * t_len) as f64;
                let gam = self.data(*gamma);
                let mut dgamma = vec![0.0; channels];
                let mut dbeta = vec![0.0; channels];
                for b in 0..batch {
                    for c in 0..channels {
                        let base = (b * channels + c) * t_len;
                        for j in base..base + t_len {
                            dgamma[c] += g[j] * xhat[j];
                            dbeta[c] += g[j];
                        }
                    }
                }
                let dx = acc(adj, *input, batch * channels * t_len);
                for b in 0..batch {
                    for c in 0..channels {
                        let base = (b * channels + c) * t_len;
                        let scale = gam[c] * inv_std[c];
                        for j in base..base + t_len {
                            dx[j] += if *train {
                                scale / n * (n * g[j] - dbeta[c] - xhat[j] * dgamma[c])
                            } else {
                                scale * g[j]
                            };
                        }
                    }
                }
                add_into(acc(adj, *gamma, channels), &dgamma);
                add_into(acc(adj, *beta, channels), &dbeta);
            }
            Op::Pointwise(kind, a) => {
                let x = self.data(*a);
                let da = acc(adj, *a, x.len());
                for j in 0..x.len() {
                    da[j] += g[j] * kind.derivative(x[j], out[j]);
                }
            }
            Op::Hadamard(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                let da = acc(adj, *a, av.len());
                for j in 0..av.len() {
                    da[j] += g[j] * bv[j];
                }
                let db = acc(adj, *b, bv.len());
                for j in 0..bv.len() {
                    db[j] += g[j] * av[j];
                }
            }
            Op::Add(a, b) => {
                add_into(acc(adj, *a, g.len()), g);
                add_into(acc(adj, *b, g.len()), g);
            }
            Op::AddBias(a, bias) => {
                add_into(acc(adj, *a, g.len()), g);
                let cols = self.shape(*bias)[0];
                let db = acc(adj, *bias, cols);
                for row in g.chunks(cols) {
                    add_into(db, row);
                }
            }
            Op::ScaleBy(a, s) => {
                let sv = self.data(*s)[0];
                let av = self.data(*a);
                let da = acc(adj, *a, g.len());
                for j in 0..g.len() {
                    da[j] += g[j] * sv;
                }
                let ds: f64 = g.iter().zip(av).map(|(x, y)| x * y).sum();
                acc(adj, *s, 1)[0] += ds;
            }
            Op::AddScalar(a, s) => {
                add_into(acc(adj, *a, g.len()), g);
                acc(adj, *s, 1)[0] += g.iter().sum::<f64>();
            }
            Op::Affine(a, alpha) => {
                let da = acc(adj, *a, g.len());
                for j in 0..g.len() {
                    da[j] += alpha * g[j];
                }
            }
            Op::MulConst(a, mask) => {
                let da = acc(adj, *a, g.len());
                for j in 0..g.len() {
                    da[j] += g[j] * mask[j];
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                acc(adj, *a, n).iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                let share = g[0] / n as f64;
                acc(adj, *a, n).iter_mut().for_each(|d| *d += share);
            }
            Op::DimShuffle(a) => {
                let shape = self.shape(*a);
                let (batch, rows, cols) = match *shape {
                    [r, c] => (1, r, c),
                    [b, r, c] => (b, r, c),
                    _ => unreachable!(),
                };
                let da = acc(adj, *a, batch * rows * cols);
                for b in 0..batch {
                    let base = b * rows * cols;
                    for r in 0..rows {
                        for c in 0..cols {
                            da[base + r * cols + c] += g[base + c * rows + r];
                        }
                    }
                }
            }
            Op::SelectLast(a, index) => {
                let cols = self.shape(*a)[2];
                let n = self.value(*a).numel();
                let da = acc(adj, *a, n);
                for (j, gv) in g.iter().enumerate() {
                    da[j * cols + index] += gv;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.shape()[1];
                let mut offset = 0;
                for p in parts {
                    let [rows, w] = [self.shape(*p)[0], self.shape(*p)[1]];
                    let dp = acc(adj, *p, rows * w);
                    for r in 0..rows {
                        add_into(&mut dp[r * w..(r + 1) * w], &g[r * total + offset..][..w]);
                    }
                    offset += w;
                }
            }
            Op::GlobalAvgPool(a) => {
                let t_len = self.shape(*a)[2];
                let n = self.value(*a).numel();
                let da = acc(adj, *a, n);
                for (row, gv) in g.iter().enumerate() {
                    let share = gv / t_len as f64;
                    da[row * t_len..(row + 1) * t_len]
                        .iter_mut()
                        .for_each(|d| *d += share);
                }
            }
            Op::Softmax(a) => {
                let cols = self.shape(*a)[1];
                let da = acc(adj, *a, g.len());
                for ((y, gy), d) in out
                    .chunks(cols)
                    .zip(g.chunks(cols))
                    .zip(da.chunks_mut(cols))
                {
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        d[j] += y[j] * (gy[j] - dot);
                    }
                }
            }
            Op::WeightedBce {
                probs,
                targets,
                weight,
            } => {
                let cols = self.shape(*probs)[1];
                let rows = targets.len();
                let p = self.data(*probs);
                let dp = acc(adj, *probs, rows * cols);
                for (r, &t) in targets.iter().enumerate() {
                    let pr = p[r * cols + 1];
                    let mut d = 0.0;
                    if pr > LOG_CLAMP {
                        d -= weight * t / pr;
                    }
                    if 1.0 - pr > LOG_CLAMP {
                        d += (1.0 - t) / (1.0 - pr);
                    }
                    dp[r * cols + 1] += g[0] * d / rows as f64;
                }
            }
        }
    }

    fn conv1d_backward(
        &self,
        input: Var,
        kernels: Var,
        bias: Var,
        g: &[f64],
        adj: &mut [Option<Vec<f64>>],
    ) {
        let (batch, c_in, t_len) = match *self.shape(input) {
            [c, t] => (1, c, t),
            [b, c, t] => (b, c, t),
            _ => unreachable!(),
        };
        let [c_out, _, k] = [
            self.shape(kernels)[0],
            self.shape(kernels)[1],
            self.shape(kernels)[2],
        ];
        let geom = ConvGeom {
            batch,
            c_in,
            t_len,
            k,
        };
        // scatter dOut into the wide layout used by the forward gemm
        let mut gwide = vec![0.0; c_out * geom.wide()];
        let mut dbias = vec![0.0; c_out];
        for b in 0..batch {
            for co in 0..c_out {
                let src = &g[(b * c_out + co) * t_len..][..t_len];
                dbias[co] += src.iter().sum::<f64>();
                gwide[co * geom.wide() + b * geom.padded_len()..][..t_len].copy_from_slice(src);
            }
        }
        add_into(acc(adj, bias, c_out), &dbias);

        let xpad = geom.pad(self.data(input));
        {
            let dk = acc(adj, kernels, c_out * c_in * k);
            for tap in 0..k {
                // dW[:, :, tap] += gwide · xpad[:, tap..]ᵀ
                gemm(
                    (c_out, geom.wide(), c_in),
                    Strided::new(&gwide, 0, geom.wide(), 1),
                    Strided::new(&xpad, tap, 1, geom.padded_cols()),
                    dk,
                    (tap, c_in * k, k),
                    1.0,
                );
            }
        }
        let mut dxpad = vec![0.0; c_in * geom.padded_cols()];
        let kv = self.data(kernels);
        for tap in 0..k {
            // dxpad[:, tap..] += W[:, :, tap]ᵀ · gwide
            gemm(
                (c_in, c_out, geom.wide()),
                Strided::new(kv, tap, k, c_in * k),
                Strided::new(&gwide, 0, geom.wide(), 1),
                &mut dxpad,
                (tap, geom.padded_cols(), 1),
                1.0,
            );
        }
        let dx = acc(adj, input, batch * c_in * t_len);
        let pad = (k - 1) / 2;
        for b in 0..batch {
            for ci in 0..c_in {
                let src = &dxpad[ci * geom.padded_cols() + b * geom.padded_len() + pad..][..t_len];
                add_into(&mut dx[(b * c_in + ci) * t_len..][..t_len], src);
            }
        }
    }
}

/// Layout of the batched, zero-padded convolution input: channels are rows,
/// and the padded sequences of all samples sit side by side along columns so
/// one gemm per kernel tap covers the whole batch.
struct ConvGeom {
    batch: usize,
    c_in: usize,
    t_len: usize,
    k: usize,
}

impl ConvGeom {
    fn padded_len(&self) -> usize {
        self.t_len + self.k - 1
    }

    fn padded_cols(&self) -> usize {
        self.batch * self.padded_len()
    }

    /// Number of output columns computed per tap (includes junk columns
    /// straddling sample boundaries, which are discarded).
    fn wide(&self) -> usize {
        self.padded_cols() - self.k + 1
    }

    fn pad(&self, x: &[f64]) -> Vec<f64> {
        let pad = (self.k - 1) / 2;
        let mut xpad = vec![0.0; self.c_in * self.padded_cols()];
        for b in 0..self.batch {
            for c in 0..self.c_in {
                let src = &x[(b * self.c_in + c) * self.t_len..][..self.t_len];
                xpad[c * self.padded_cols() + b * self.padded_len() + pad..][..self.t_len]
                    .copy_from_slice(src);
            }
        }
        xpad
    }
}

fn acc(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Read-only strided matrix view for [`gemm`].
struct Strided<'a> {
    data: &'a [f64],
    offset: usize,
    row_stride: usize,
    col_stride: usize,
}

impl<'a> Strided<'a> {
    fn new(data: &'a [f64], offset: usize, row_stride: usize, col_stride: usize) -> Self {
        Self {
            data,
            offset,
            row_stride,
            col_stride,
        }
    }

    fn last_index(&self, rows: usize, cols: usize) -> usize {
        self.offset + (rows - 1) * self.row_stride + (cols - 1) * self.col_stride
    }
}

/// `C = A·B + beta·C` with `A: m×k`, `B: k×n`, C described by
/// `(offset, row_stride, col_stride)` into `c`.
fn gemm(
    (m, k, n): (usize, usize, usize),
    a: Strided<'_>,
    b: Strided<'_>,
    c: &mut [f64],
    (c_off, rsc, csc): (usize, usize, usize),
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            for i in 0..m {
                for j in 0..n {
                    c[c_off + i * rsc + j * csc] = 0.0;
                }
            }
        }
        return;
    }
    assert!(a.last_index(m, k) < a.data.len());
    assert!(b.last_index(k, n) < b.data.len());
    assert!(c_off + (m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the asserts above bound every element the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr().add(a.offset),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr().add(b.offset),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr().add(c_off),
            rsc as isize,
            csc as isize,
        );
    }
}
