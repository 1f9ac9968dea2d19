//! FastGRNN-FCN assembly.
//!
//! ```text
//!            ┌─ dimension shuffle → FastGRNN → dropout ───────────┐
//! x (B×V×T) ─┤                                                    ├─ concat → affine → softmax
//!            └─ conv block ×3 → dropout → global average pool ────┘
//! ```
//!
//! The recurrent branch reads the `V` variables as steps of a `T`-wide
//! input; the convolutional branch treats them as input channels.

mod model_file;
mod train;

pub use model_file::{load_model, model_from_bytes, model_to_bytes, save_model, MODEL_FORMAT_VERSION};
pub use train::{evaluate_loss, train, train_from, Adam, EpochStats, TrainReport};

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::fastgrnn::{FastGrnnParams, FastGrnnVars, SparsityBudget};
use crate::fcn::{self, ConvBlockParams, ConvBlockVars};
use crate::rng::RngState;
use crate::tensor::{BnStats, Mode, Tape, Tensor, Var};

/// Which branches feed the classifier head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Hybrid,
    FastGrnnOnly,
    FcnOnly,
}

impl Variant {
    pub fn uses_fastgrnn(self) -> bool {
        matches!(self, Variant::Hybrid | Variant::FastGrnnOnly)
    }

    pub fn uses_fcn(self) -> bool {
        matches!(self, Variant::Hybrid | Variant::FcnOnly)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Hybrid => "hybrid",
            Variant::FastGrnnOnly => "fastgrnn-only",
            Variant::FcnOnly => "fcn-only",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hybrid" => Ok(Variant::Hybrid),
            "fastgrnn-only" => Ok(Variant::FastGrnnOnly),
            "fcn-only" => Ok(Variant::FcnOnly),
            other => Err(Error::Config(format!(
                "unknown variant `{other}` (hybrid | fastgrnn-only | fcn-only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub conv_channels: Vec<usize>,
    pub kernel_sizes: Vec<usize>,
    pub dropout_rate: f64,
    pub num_classes: usize,
    pub variant: Variant,
    /// Positive-class weight `w` of the cross-entropy.
    pub loss_weight: f64,
    pub sparsity: SparsityBudget,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Variables per sample (`V`).
    pub n_vars: usize,
    /// Steps per sample (`T`).
    pub seq_len: usize,
    /// Standardize each input variable with statistics of the training set.
    pub standardize: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_size: 64,
            conv_channels: vec![128, 256, 128],
            kernel_sizes: vec![7, 5, 3],
            dropout_rate: 0.5,
            num_classes: 2,
            variant: Variant::Hybrid,
            loss_weight: 1.0,
            sparsity: SparsityBudget::default(),
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-7,
            patience: 20,
            max_epochs: 600,
            batch_size: 32,
            seed: 0,
            n_vars: 9,
            seq_len: 96,
            standardize: true,
        }
    }
}

/// Keys accepted by [`ModelConfig::set`], in file order.
pub const MODEL_CONFIG_KEYS: &[&str] = &[
    "hidden_size",
    "conv_channels",
    "kernel_sizes",
    "dropout_rate",
    "num_classes",
    "variant",
    "loss_weight",
    "sparsity_w",
    "sparsity_u",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "adam_epsilon",
    "patience",
    "max_epochs",
    "batch_size",
    "seed",
    "n_vars",
    "seq_len",
    "standardize",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v)).collect()
}

fn join(values: &[usize]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden_size", self.hidden_size),
            ("num_classes", self.num_classes),
            ("max_epochs", self.max_epochs),
            ("batch_size", self.batch_size),
            ("n_vars", self.n_vars),
            ("seq_len", self.seq_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.num_classes != 2 {
            return Err(Error::Config(format!(
                "binary flood labels need num_classes = 2, got {}",
                self.num_classes
            )));
        }
        if self.conv_channels.is_empty() || self.conv_channels.len() != self.kernel_sizes.len() {
            return Err(Error::Config(format!(
                "conv_channels {:?} and kernel_sizes {:?} must be non-empty and of equal length",
                self.conv_channels, self.kernel_sizes
            )));
        }
        if self.conv_channels.contains(&0) {
            return Err(Error::Config("conv channel counts must be positive".into()));
        }
        if let Some(k) = self.kernel_sizes.iter().find(|&&k| k % 2 == 0) {
            return Err(Error::Config(format!("kernel sizes must be odd, got {k}")));
        }
        if !(self.loss_weight > 0.0 && self.loss_weight.is_finite()) {
            return Err(Error::Config(format!(
                "loss_weight must be positive, got {}",
                self.loss_weight
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} not in [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        self.sparsity.validate()
    }

    /// Width of the concatenated feature vector entering the head.
    pub fn feature_width(&self) -> usize {
        let mut width = 0;
        if self.variant.uses_fastgrnn() {
            width += self.hidden_size;
        }
        if self.variant.uses_fcn() {
            width += *self.conv_channels.last().unwrap_or(&0);
        }
        width
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "hidden_size" => self.hidden_size = parse(key, value)?,
            "conv_channels" => self.conv_channels = parse_list(key, value)?,
            "kernel_sizes" => self.kernel_sizes = parse_list(key, value)?,
            "dropout_rate" => self.dropout_rate = parse(key, value)?,
            "num_classes" => self.num_classes = parse(key, value)?,
            "variant" => self.variant = value.trim().parse()?,
            "loss_weight" => self.loss_weight = parse(key, value)?,
            "sparsity_w" => self.sparsity.s_w = parse(key, value)?,
            "sparsity_u" => self.sparsity.s_u = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse(key, value)?,
            "adam_epsilon" => self.adam_epsilon = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "n_vars" => self.n_vars = parse(key, value)?,
            "seq_len" => self.seq_len = parse(key, value)?,
            "standardize" => self.standardize = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown model key `{other}`"))),
        }
        Ok(())
    }

    /// `key=value` pairs in [`MODEL_CONFIG_KEYS`] order. Floats use the
    /// shortest representation that parses back to the same bits.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("hidden_size", self.hidden_size.to_string()),
            ("conv_channels", join(&self.conv_channels)),
            ("kernel_sizes", join(&self.kernel_sizes)),
            ("dropout_rate", self.dropout_rate.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("variant", self.variant.to_string()),
            ("loss_weight", self.loss_weight.to_string()),
            ("sparsity_w", self.sparsity.s_w.to_string()),
            ("sparsity_u", self.sparsity.s_u.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("adam_beta1", self.adam_beta1.to_string()),
            ("adam_beta2", self.adam_beta2.to_string()),
            ("adam_epsilon", self.adam_epsilon.to_string()),
            ("patience", self.patience.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("n_vars", self.n_vars.to_string()),
            ("seq_len", self.seq_len.to_string()),
            ("standardize", self.standardize.to_string()),
        ]
    }
}

/// Per-variable affine input normalization `(x − mean)/std`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn identity(n_vars: usize) -> Self {
        Self {
            mean: vec![0.0; n_vars],
            std: vec![1.0; n_vars],
        }
    }

    /// Mean and standard deviation of each variable over all samples and
    /// steps. Constant variables get `std = 1`.
    pub fn fit(data: &Dataset) -> Self {
        let (v, t) = (data.n_vars(), data.seq_len());
        let mut sum = vec![0.0; v];
        let mut sq = vec![0.0; v];
        for i in 0..data.len() {
            for (var, row) in data.features(i).chunks(t).enumerate() {
                for &x in row {
                    sum[var] += x;
                    sq[var] += x * x;
                }
            }
        }
        let n = (data.len() * t).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / n - m * m).max(0.0);
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, batch: &mut Tensor) -> Result<()> {
        let [_, v, t] = batch.dims3("scaler")?;
        if v != self.mean.len() {
            return Err(Error::dim("scaler", batch.shape(), &[self.mean.len()]));
        }
        for (row_idx, row) in batch.data_mut().chunks_mut(t).enumerate() {
            let var = row_idx % v;
            let (m, s) = (self.mean[var], self.std[var]);
            row.iter_mut().for_each(|x| *x = (*x - m) / s);
        }
        Ok(())
    }
}

/// All trainable parameters plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub fastgrnn: Option<FastGrnnParams>,
    pub fcn: Vec<ConvBlockParams>,
    /// `L×F`
    pub head_weights: Tensor,
    pub head_bias: Tensor,
    pub scaler: FeatureScaler,
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig, rng: &mut RngState) -> Result<Self> {
        cfg.validate()?;
        let fastgrnn = cfg
            .variant
            .uses_fastgrnn()
            .then(|| FastGrnnParams::init(cfg.seq_len, cfg.hidden_size, &mut rng.derive(1)));
        let mut fcn = Vec::new();
        if cfg.variant.uses_fcn() {
            let mut block_rng = rng.derive(2);
            let mut c_in = cfg.n_vars;
            for (&c_out, &k) in cfg.conv_channels.iter().zip(&cfg.kernel_sizes) {
                fcn.push(ConvBlockParams::init(c_in, c_out, k, &mut block_rng));
                c_in = c_out;
            }
        }
        let width = cfg.feature_width();
        let mut head_rng = rng.derive(3);
        let scale = 1.0 / (width as f64).sqrt();
        Ok(Self {
            fastgrnn,
            fcn,
            head_weights: Tensor::from_fn(&[cfg.num_classes, width], |_| {
                head_rng.normal() * scale
            }),
            head_bias: Tensor::zeros(&[cfg.num_classes]),
            scaler: FeatureScaler::identity(cfg.n_vars),
        })
    }

    /// Checks every shape against `cfg`.
    pub fn check_against(&self, cfg: &ModelConfig) -> Result<()> {
        let expect = |name: &'static str, t: &Tensor, shape: &[usize]| -> Result<()> {
            if t.shape() != shape {
                return Err(Error::dim(name, shape, t.shape()));
            }
            Ok(())
        };
        match (&self.fastgrnn, cfg.variant.uses_fastgrnn()) {
            (Some(g), true) => {
                expect("fastgrnn W", &g.w, &[cfg.hidden_size, cfg.seq_len])?;
                g.validate()?;
            }
            (None, false) => {}
            _ => return Err(Error::Config("fastgrnn branch does not match variant".into())),
        }
        let want_blocks = if cfg.variant.uses_fcn() {
            cfg.conv_channels.len()
        } else {
            0
        };
        if self.fcn.len() != want_blocks {
            return Err(Error::Config(format!(
                "expected {want_blocks} conv blocks, found {}",
                self.fcn.len()
            )));
        }
        let mut c_in = cfg.n_vars;
        for (i, b) in self.fcn.iter().enumerate() {
            let (c_out, k) = (cfg.conv_channels[i], cfg.kernel_sizes[i]);
            expect("conv kernels", &b.kernels, &[c_out, c_in, k])?;
            for t in [&b.bias, &b.bn_gamma, &b.bn_beta, &b.bn.running_mean, &b.bn.running_var] {
                expect("conv channel vector", t, &[c_out])?;
            }
            c_in = c_out;
        }
        expect(
            "head weights",
            &self.head_weights,
            &[cfg.num_classes, cfg.feature_width()],
        )?;
        expect("head bias", &self.head_bias, &[cfg.num_classes])?;
        if self.scaler.mean.len() != cfg.n_vars || self.scaler.std.len() != cfg.n_vars {
            return Err(Error::Config("scaler width does not match n_vars".into()));
        }
        Ok(())
    }

    /// Trainable tensors in canonical order (matches [`ModelVars::all`]).
    pub fn trainable(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        if let Some(g) = &self.fastgrnn {
            out.extend([
                g.w.clone(),
                g.u.clone(),
                g.b_z.clone(),
                g.b_h.clone(),
                Tensor::scalar(g.zeta_raw),
                Tensor::scalar(g.nu_raw),
            ]);
        }
        for b in &self.fcn {
            out.extend([
                b.kernels.clone(),
                b.bias.clone(),
                b.bn_gamma.clone(),
                b.bn_beta.clone(),
            ]);
        }
        out.push(self.head_weights.clone());
        out.push(self.head_bias.clone());
        out
    }

    /// Inverse of [`trainable`](Self::trainable).
    pub fn set_trainable(&mut self, tensors: &[Tensor]) -> Result<()> {
        let mut it = tensors.iter();
        let mut next = |name: &'static str, dst: &mut Tensor| -> Result<()> {
            let src = it
                .next()
                .ok_or_else(|| Error::Contract(format!("missing tensor for {name}")))?;
            if src.shape() != dst.shape() {
                return Err(Error::dim(name, dst.shape(), src.shape()));
            }
            dst.data_mut().copy_from_slice(src.data());
            Ok(())
        };
        if let Some(g) = &mut self.fastgrnn {
            next("W", &mut g.w)?;
            next("U", &mut g.u)?;
            next("b_z", &mut g.b_z)?;
            next("b_h", &mut g.b_h)?;
            let mut z = Tensor::scalar(g.zeta_raw);
            next("zeta_raw", &mut z)?;
            g.zeta_raw = z.item();
            let mut n = Tensor::scalar(g.nu_raw);
            next("nu_raw", &mut n)?;
            g.nu_raw = n.item();
        }
        for b in &mut self.fcn {
            next("kernels", &mut b.kernels)?;
            next("bias", &mut b.bias)?;
            next("gamma", &mut b.bn_gamma)?;
            next("beta", &mut b.bn_beta)?;
        }
        next("head_weights", &mut self.head_weights)?;
        next("head_bias", &mut self.head_bias)?;
        Ok(())
    }

    pub fn register(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            fastgrnn: self.fastgrnn.as_ref().map(|g| g.register(tape)),
            fcn: self.fcn.iter().map(|b| b.register(tape)).collect(),
            head_weights: tape.leaf(self.head_weights.clone()),
            head_bias: tape.leaf(self.head_bias.clone()),
        }
    }

    pub fn bn_stats(&self) -> Vec<BnStats> {
        self.fcn.iter().map(|b| b.bn.clone()).collect()
    }

    pub fn set_bn_stats(&mut self, stats: Vec<BnStats>) {
        for (b, s) in self.fcn.iter_mut().zip(stats) {
            b.bn = s;
        }
    }
}

/// Tape handles for a registered [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub fastgrnn: Option<FastGrnnVars>,
    pub fcn: Vec<ConvBlockVars>,
    pub head_weights: Var,
    pub head_bias: Var,
}

impl ModelVars {
    /// Rebuilds handles from a flat list in canonical order.
    pub fn from_flat(cfg: &ModelConfig, vars: &[Var]) -> Result<Self> {
        let mut it = vars.iter().copied();
        let mut next = || {
            it.next()
                .ok_or_else(|| Error::Contract("too few parameter vars".into()))
        };
        let fastgrnn = if cfg.variant.uses_fastgrnn() {
            Some(FastGrnnVars {
                w: next()?,
                u: next()?,
                b_z: next()?,
                b_h: next()?,
                zeta_raw: next()?,
                nu_raw: next()?,
            })
        } else {
            None
        };
        let blocks = if cfg.variant.uses_fcn() {
            cfg.conv_channels.len()
        } else {
            0
        };
        let mut fcn = Vec::with_capacity(blocks);
        for _ in 0..blocks {
            fcn.push(ConvBlockVars {
                kernels: next()?,
                bias: next()?,
                gamma: next()?,
                beta: next()?,
            });
        }
        Ok(Self {
            fastgrnn,
            fcn,
            head_weights: next()?,
            head_bias: next()?,
        })
    }

    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        if let Some(g) = &self.fastgrnn {
            out.extend([g.w, g.u, g.b_z, g.b_h, g.zeta_raw, g.nu_raw]);
        }
        for b in &self.fcn {
            out.extend([b.kernels, b.bias, b.gamma, b.beta]);
        }
        out.push(self.head_weights);
        out.push(self.head_bias);
        out
    }
}

/// Intermediate handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// Head input (`B×F`).
    pub features: Var,
    pub logits: Var,
    pub probs: Var,
}

/// Builds the forward graph on `tape` for an already-scaled `B×V×T` input.
pub fn forward_graph(
    tape: &mut Tape,
    cfg: &ModelConfig,
    vars: &ModelVars,
    bn: &mut [BnStats],
    input: Var,
    mode: Mode,
    rng: &mut RngState,
) -> Result<ForwardVars> {
    let [batch, _, _] = tape.value(input).dims3("forward")?;
    let mut parts = Vec::with_capacity(2);
    if let Some(g) = &vars.fastgrnn {
        let shuffled = tape.dimension_shuffle(input)?;
        let h0 = tape.leaf(Tensor::zeros(&[batch, cfg.hidden_size]));
        let h = g.run_sequence(tape, shuffled, h0)?;
        parts.push(fcn::dropout(tape, h, cfg.dropout_rate, mode, rng)?);
    }
    if !vars.fcn.is_empty() {
        if bn.len() != vars.fcn.len() {
            return Err(Error::Contract("one BnStats per conv block required".into()));
        }
        let mut a = input;
        for (block, stats) in vars.fcn.iter().zip(bn.iter_mut()) {
            a = fcn::conv_block(tape, block, stats, a, mode)?;
        }
        let dropped = fcn::dropout(tape, a, cfg.dropout_rate, mode, rng)?;
        parts.push(tape.global_avg_pool(dropped)?);
    }
    let features = match parts.as_slice() {
        [single] => *single,
        _ => tape.concat_cols(&parts)?,
    };
    let head_t = tape.transpose(vars.head_weights)?;
    let lin = tape.matmul(features, head_t)?;
    let logits = tape.add_bias(lin, vars.head_bias)?;
    let probs = tape.softmax(logits)?;
    Ok(ForwardVars {
        features,
        logits,
        probs,
    })
}

/// A configured model with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

/// Rows per chunk for batched inference.
const INFER_CHUNK: usize = 256;

impl Model {
    pub fn new(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.check_against(&config)?;
        Ok(Self { config, params })
    }

    pub fn init(config: ModelConfig) -> Result<Self> {
        let mut rng = RngState::new(config.seed);
        let params = ModelParams::init(&config, &mut rng)?;
        Ok(Self { config, params })
    }

    /// Class probabilities (`B×L`) for a raw (unscaled) `B×V×T` batch.
    /// Train mode updates batch-norm running statistics.
    pub fn forward(&mut self, batch: &Tensor, mode: Mode, rng: &mut RngState) -> Result<Tensor> {
        let [_, v, t] = batch.dims3("forward")?;
        if v != self.config.n_vars || t != self.config.seq_len {
            return Err(Error::dim(
                "forward",
                &[self.config.n_vars, self.config.seq_len],
                &[v, t],
            ));
        }
        if !batch.is_finite() {
            return Err(Error::Numeric("input batch contains non-finite values".into()));
        }
        let mut scaled = batch.clone();
        self.params.scaler.apply(&mut scaled)?;
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape);
        let x = tape.leaf(scaled);
        let mut bn = self.params.bn_stats();
        let out = forward_graph(&mut tape, &self.config, &vars, &mut bn, x, mode, rng)?;
        if mode == Mode::Train {
            self.params.set_bn_stats(bn);
        }
        Ok(tape.value(out.probs).clone())
    }

    /// Inference-mode class probabilities; never mutates the model.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        let mut scratch = self.clone();
        scratch.forward(batch, Mode::Infer, &mut RngState::new(0))
    }

    /// `P(flooded)` for every sample of `data`, computed in parallel chunks.
    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<f64>> {
        let idx: Vec<usize> = (0..data.len()).collect();
        let chunks: Vec<Result<Vec<f64>>> = idx
            .par_chunks(INFER_CHUNK)
            .map(|chunk| {
                let batch = data.batch(chunk)?;
                let probs = self.predict(&batch)?;
                Ok(probs
                    .data()
                    .chunks(self.config.num_classes)
                    .map(|row| row[1])
                    .collect())
            })
            .collect();
        let mut out = Vec::with_capacity(data.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }
}

/// Mean over the batch of `−(w·t·log(p) + (1−t)·log(1−p))`, `p` being the
/// class-1 column of `probs`, with log arguments clamped at 1e-12.
pub fn weighted_cross_entropy(probs: &Tensor, targets: &[f64], w: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.leaf(probs.clone());
    let loss = tape.weighted_bce(p, targets, w)?;
    Ok(tape.value(loss).item())
}
