//! FastGRNN recurrent branch.
//!
//! One input matrix `W` and one recurrent matrix `U` feed both the gate and
//! the candidate state:
//!
//! ```text
//! z_t  = σ(W x_t + U h_{t-1} + b_z)
//! h̃_t  = tanh(W x_t + U h_{t-1} + b_h)
//! h_t  = (ζ(1 − z_t) + ν) ⊙ h̃_t + z_t ⊙ h_{t-1}
//! ```
//!
//! with `ζ = σ(zeta_raw)` and `ν = σ(nu_raw)` so both stay in (0, 1).

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct FastGrnnParams {
    /// `H×D` input weights.
    pub w: Tensor,
    /// `H×H` recurrent weights.
    pub u: Tensor,
    pub b_z: Tensor,
    pub b_h: Tensor,
    pub zeta_raw: f64,
    pub nu_raw: f64,
}

/// Maximum fraction of nonzero entries kept in `W` and `U`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsityBudget {
    pub s_w: f64,
    pub s_u: f64,
}

impl Default for SparsityBudget {
    fn default() -> Self {
        Self { s_w: 1.0, s_u: 1.0 }
    }
}

impl SparsityBudget {
    pub fn new(s_w: f64, s_u: f64) -> Result<Self> {
        let budget = Self { s_w, s_u };
        budget.validate()?;
        Ok(budget)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("s_w", self.s_w), ("s_u", self.s_u)] {
            if !(s > 0.0 && s <= 1.0) {
                return Err(Error::Config(format!("sparsity {name}={s} not in (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn is_dense(&self) -> bool {
        self.s_w >= 1.0 && self.s_u >= 1.0
    }
}

impl FastGrnnParams {
    /// Zero-mean normal weights scaled by `1/sqrt(fan_in)`, zero biases and
    /// `zeta_raw = nu_raw = 1`.
    pub fn init(input_dim: usize, hidden: usize, rng: &mut RngState) -> Self {
        let w_scale = 1.0 / (input_dim as f64).sqrt();
        let u_scale = 1.0 / (hidden as f64).sqrt();
        Self {
            w: Tensor::from_fn(&[hidden, input_dim], |_| rng.normal() * w_scale),
            u: Tensor::from_fn(&[hidden, hidden], |_| rng.normal() * u_scale),
            b_z: Tensor::zeros(&[hidden]),
            b_h: Tensor::zeros(&[hidden]),
            zeta_raw: 1.0,
            nu_raw: 1.0,
        }
    }

    /// All-zero parameters (`ζ = ν = 0.5`).
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w: Tensor::zeros(&[hidden, input_dim]),
            u: Tensor::zeros(&[hidden, hidden]),
            b_z: Tensor::zeros(&[hidden]),
            b_h: Tensor::zeros(&[hidden]),
            zeta_raw: 0.0,
            nu_raw: 0.0,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn input_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn zeta(&self) -> f64 {
        crate::tensor::sigmoid(self.zeta_raw)
    }

    pub fn nu(&self) -> f64 {
        crate::tensor::sigmoid(self.nu_raw)
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden();
        if self.u.shape() != [h, h] {
            return Err(Error::dim("fastgrnn U", self.w.shape(), self.u.shape()));
        }
        if self.b_z.shape() != [h] || self.b_h.shape() != [h] {
            return Err(Error::dim("fastgrnn bias", self.w.shape(), self.b_z.shape()));
        }
        Ok(())
    }

    pub fn register(&self, tape: &mut Tape) -> FastGrnnVars {
        FastGrnnVars {
            w: tape.leaf(self.w.clone()),
            u: tape.leaf(self.u.clone()),
            b_z: tape.leaf(self.b_z.clone()),
            b_h: tape.leaf(self.b_h.clone()),
            zeta_raw: tape.leaf(Tensor::scalar(self.zeta_raw)),
            nu_raw: tape.leaf(Tensor::scalar(self.nu_raw)),
        }
    }

    /// One step on plain vectors: `x` has length `D`, `h_prev` length `H`.
    pub fn cell_step(&self, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let cell = vars.prepare(&mut tape)?;
        let x = tape.leaf(Tensor::new(&[1, x.len()], x.to_vec())?);
        let h = tape.leaf(Tensor::new(&[1, h_prev.len()], h_prev.to_vec())?);
        let out = cell.step(&mut tape, x, h)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Folds [`cell_step`](Self::cell_step) over the columns of `x`
    /// (`D×T_steps`) starting from `h0` (zeros when `None`).
    pub fn run_sequence(&self, x: &Tensor, h0: Option<&[f64]>) -> Result<Vec<f64>> {
        self.validate()?;
        let [d, steps] = x.dims2("run_sequence")?;
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let xs = tape.leaf(x.clone().reshape(&[1, d, steps])?);
        let h0 = match h0 {
            Some(h) => Tensor::new(&[1, h.len()], h.to_vec())?,
            None => Tensor::zeros(&[1, self.hidden()]),
        };
        let h0 = tape.leaf(h0);
        let out = vars.run_sequence(&mut tape, xs, h0)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Same fold over an explicit list of step vectors; an empty list
    /// returns `h0` unchanged.
    pub fn run_steps(&self, steps: &[Vec<f64>], h0: &[f64]) -> Result<Vec<f64>> {
        let mut h = h0.to_vec();
        for x in steps {
            h = self.cell_step(x, &h)?;
        }
        Ok(h)
    }
}

/// Transposes an `M×Q` series into `Q×M`, so the recurrent branch sees the
/// `M` variables as steps of a `Q`-dimensional input.
pub fn dimension_shuffle(x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let out = tape.dimension_shuffle(v)?;
    Ok(tape.value(out).clone())
}

/// Keeps the `⌈s·numel⌉` largest-magnitude entries of `W` and `U` and zeroes
/// the rest. Equal magnitudes at the cutoff keep the smaller flat index.
pub fn project_sparse(params: &FastGrnnParams, budget: SparsityBudget) -> Result<FastGrnnParams> {
    budget.validate()?;
    let mut out = params.clone();
    keep_top_magnitude(out.w.data_mut(), budget.s_w);
    keep_top_magnitude(out.u.data_mut(), budget.s_u);
    Ok(out)
}

/// Number of entries a budget `s` keeps out of `numel`.
pub fn sparsity_keep_count(s: f64, numel: usize) -> usize {
    ((s * numel as f64).ceil() as usize).min(numel)
}

fn keep_top_magnitude(values: &mut [f64], s: f64) {
    let keep = sparsity_keep_count(s, values.len());
    if keep >= values.len() {
        return;
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .abs()
            .total_cmp(&values[a].abs())
            .then_with(|| a.cmp(&b))
    });
    for &i in &order[keep..] {
        values[i] = 0.0;
    }
}

/// Tape handles for one set of FastGRNN parameters.
#[derive(Debug, Clone, Copy)]
pub struct FastGrnnVars {
    pub w: Var,
    pub u: Var,
    pub b_z: Var,
    pub b_h: Var,
    pub zeta_raw: Var,
    pub nu_raw: Var,
}

/// Per-sequence quantities shared by every step.
#[derive(Debug, Clone, Copy)]
pub struct PreparedCell {
    w_t: Var,
    u_t: Var,
    b_z: Var,
    b_h: Var,
    zeta: Var,
    nu: Var,
}

impl FastGrnnVars {
    pub fn prepare(&self, tape: &mut Tape) -> Result<PreparedCell> {
        Ok(PreparedCell {
            w_t: tape.transpose(self.w)?,
            u_t: tape.transpose(self.u)?,
            b_z: self.b_z,
            b_h: self.b_h,
            zeta: tape.sigmoid(self.zeta_raw),
            nu: tape.sigmoid(self.nu_raw),
        })
    }

    /// Unrolls over the last axis of `xs` (`B×D×T_steps`) and returns the
    /// final `B×H` state.
    pub fn run_sequence(&self, tape: &mut Tape, xs: Var, h0: Var) -> Result<Var> {
        let cell = self.prepare(tape)?;
        let steps = tape.value(xs).dims3("run_sequence")?[2];
        let mut h = h0;
        for t in 0..steps {
            let x_t = tape.select_last(xs, t)?;
            h = cell.step(tape, x_t, h)?;
        }
        Ok(h)
    }
}

impl PreparedCell {
    /// One recurrence step on row-batched inputs: `x_t` is `B×D`,
    /// `h_prev` is `B×H`.
    pub fn step(&self, tape: &mut Tape, x_t: Var, h_prev: Var) -> Result<Var> {
        let wx = tape.matmul(x_t, self.w_t)?;
        let uh = tape.matmul(h_prev, self.u_t)?;
        let pre = tape.add(wx, uh)?;
        let gate_pre = tape.add_bias(pre, self.b_z)?;
        let z = tape.sigmoid(gate_pre);
        let cand_pre = tape.add_bias(pre, self.b_h)?;
        let cand = tape.tanh(cand_pre);
        let one_minus_z = tape.affine(z, -1.0, 1.0);
        let scaled = tape.scale_by(one_minus_z, self.zeta)?;
        let coef = tape.add_scalar(scaled, self.nu)?;
        let fresh = tape.hadamard(coef, cand)?;
        let carried = tape.hadamard(z, h_prev)?;
        tape.add(fresh, carried)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_params_zero_state() {
        let p = FastGrnnParams::zeros(3, 4);
        let h = p.cell_step(&[0.3, -1.0, 2.0], &[0.0; 4]).unwrap();
        assert_eq!(h, vec![0.0; 4]);
    }

    #[test]
    fn saturated_gate_passes_memory_through() {
        let mut p = FastGrnnParams::zeros(2, 3);
        p.b_z = Tensor::full(&[3], 50.0);
        let v = [0.7, -0.2, 1.5];
        let h = p.cell_step(&[1.0, -1.0], &v).unwrap();
        for (a, b) in h.iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn one_dimensional_hand_value() {
        let mut p = FastGrnnParams::zeros(1, 1);
        p.w = Tensor::full(&[1, 1], 1.0);
        let h = p.cell_step(&[1.0], &[0.0]).unwrap();
        // z = σ(1), h̃ = tanh(1), ζ = ν = 0.5
        let expect = (0.5 * (1.0 - sig(1.0)) + 0.5) * 1f64.tanh();
        assert!((h[0] - expect).abs() < 1e-15);
        assert!((h[0] - 0.483209185382795).abs() < 1e-12);
    }

    #[test]
    fn random_scalar_cells_match_closed_form() {
        let mut rng = RngState::new(11);
        for _ in 0..10 {
            let mut p = FastGrnnParams::zeros(1, 1);
            let [w, u, bz, bh, zr, nr, x, h]: [f64; 8] = std::array::from_fn(|_| rng.normal() * 2.0);
            p.w = Tensor::full(&[1, 1], w);
            p.u = Tensor::full(&[1, 1], u);
            p.b_z = Tensor::full(&[1], bz);
            p.b_h = Tensor::full(&[1], bh);
            p.zeta_raw = zr;
            p.nu_raw = nr;
            let z = sig(w * x + u * h + bz);
            let cand = (w * x + u * h + bh).tanh();
            let expect = (sig(zr) * (1.0 - z) + sig(nr)) * cand + z * h;
            assert!((p.cell_step(&[x], &[h]).unwrap()[0] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn run_sequence_single_step_and_empty() {
        let mut rng = RngState::new(1);
        let p = FastGrnnParams::init(2, 3, &mut rng);
        let x = Tensor::new(&[2, 1], vec![0.4, -0.9]).unwrap();
        let seq = p.run_sequence(&x, None).unwrap();
        let step = p.cell_step(&[0.4, -0.9], &[0.0; 3]).unwrap();
        assert_eq!(seq, step);
        let h0 = vec![0.1, 0.2, 0.3];
        assert_eq!(p.run_steps(&[], &h0).unwrap(), h0);
    }

    #[test]
    fn run_sequence_matches_manual_fold() {
        let mut rng = RngState::new(2);
        let p = FastGrnnParams::init(2, 4, &mut rng);
        let x = Tensor::from_fn(&[2, 3], |_| rng.normal());
        let seq = p.run_sequence(&x, None).unwrap();
        let mut h = vec![0.0; 4];
        for t in 0..3 {
            h = p.cell_step(&[x.get(&[0, t]), x.get(&[1, t])], &h).unwrap();
        }
        assert_eq!(seq, h);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let p = FastGrnnParams::zeros(3, 2);
        assert!(matches!(
            p.cell_step(&[1.0, 2.0], &[0.0, 0.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn shuffle_shapes_and_involution() {
        let x = Tensor::from_fn(&[9, 96], |i| i as f64);
        let y = dimension_shuffle(&x).unwrap();
        assert_eq!(y.shape(), &[96, 9]);
        assert_eq!(dimension_shuffle(&y).unwrap(), x);
        let small = Tensor::from_fn(&[3, 5], |i| (i * i) as f64);
        let t = dimension_shuffle(&small).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                assert_eq!(t.get(&[i, j]), small.get(&[j, i]));
            }
        }
    }

    #[test]
    fn projection_examples() {
        let mut p = FastGrnnParams::zeros(4, 1);
        p.w = Tensor::new(&[1, 4], vec![3.0, -1.0, 2.0, 0.5]).unwrap();
        let full = project_sparse(&p, SparsityBudget::default()).unwrap();
        assert_eq!(full, p);
        let half = project_sparse(&p, SparsityBudget::new(0.5, 1.0).unwrap()).unwrap();
        assert_eq!(half.w.data(), &[3.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn projection_ties_keep_lower_index() {
        let mut values = vec![1.0, -2.0, 2.0, 1.0, -1.0];
        keep_top_magnitude(&mut values, 0.6);
        assert_eq!(values, vec![1.0, -2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn budget_validation() {
        assert!(SparsityBudget::new(0.0, 1.0).is_err());
        assert!(SparsityBudget::new(1.0, 1.5).is_err());
        assert!(SparsityBudget::new(0.25, 1.0).is_ok());
    }
}
