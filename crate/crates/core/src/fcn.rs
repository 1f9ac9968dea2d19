//! Fully convolutional branch: conv → batch norm → ReLU blocks, dropout and
//! global average pooling over time.

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{BnConfig, BnStats, Mode, Tape, Tensor, Var};

/// Parameters and running statistics of one conv block.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlockParams {
    /// `C_out×C_in×K`
    pub kernels: Tensor,
    pub bias: Tensor,
    pub bn_gamma: Tensor,
    pub bn_beta: Tensor,
    pub bn: BnStats,
}

impl ConvBlockParams {
    /// Kernels ~ N(0, 1/(C_in·K)), zero bias, γ = 1, β = 0.
    pub fn init(c_in: usize, c_out: usize, k: usize, rng: &mut RngState) -> Self {
        let scale = 1.0 / ((c_in * k) as f64).sqrt();
        Self {
            kernels: Tensor::from_fn(&[c_out, c_in, k], |_| rng.normal() * scale),
            bias: Tensor::zeros(&[c_out]),
            bn_gamma: Tensor::ones(&[c_out]),
            bn_beta: Tensor::zeros(&[c_out]),
            bn: BnStats::new(c_out),
        }
    }

    pub fn c_out(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels.shape()[2]
    }

    pub fn register(&self, tape: &mut Tape) -> ConvBlockVars {
        ConvBlockVars {
            kernels: tape.leaf(self.kernels.clone()),
            bias: tape.leaf(self.bias.clone()),
            gamma: tape.leaf(self.bn_gamma.clone()),
            beta: tape.leaf(self.bn_beta.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvBlockVars {
    pub kernels: Var,
    pub bias: Var,
    pub gamma: Var,
    pub beta: Var,
}

/// `ReLU(BN(conv1d(input)))` on a `B×C_in×T` input. Train mode updates
/// `stats` in place.
pub fn conv_block(
    tape: &mut Tape,
    vars: &ConvBlockVars,
    stats: &mut BnStats,
    input: Var,
    mode: Mode,
) -> Result<Var> {
    let y = tape.conv1d(input, vars.kernels, vars.bias)?;
    let s = tape.batchnorm(y, vars.gamma, vars.beta, stats, mode, BnConfig::default())?;
    Ok(tape.relu(s))
}

/// Mean over the time axis of a `B×C×T` tensor.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    if input.rank() != 3 {
        return Err(Error::dim("global_avg_pool", input.shape(), &[0, 0, 0]));
    }
    let mut tape = Tape::new();
    let v = tape.leaf(input.clone());
    let out = tape.global_avg_pool(v)?;
    Ok(tape.value(out).clone())
}

/// Inverted dropout: in train mode each element is zeroed with probability
/// `rate` and survivors are scaled by `1/(1−rate)`; infer mode is identity.
pub fn dropout(tape: &mut Tape, input: Var, rate: f64, mode: Mode, rng: &mut RngState) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} not in [0, 1)")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok(input);
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..tape.value(input).numel())
        .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
        .collect();
    tape.mul_const(input, mask)
}
