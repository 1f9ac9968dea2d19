use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares tape gradients against central finite differences.
///
/// `f` builds a scalar on a fresh tape from leaves holding `params`. Returns
/// the maximum over all coordinates of
/// `|analytic − numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(step > 0.0 && step <= 1e-2) {
        return Err(Error::Config(format!("grad_check step {step} not in (0, 1e-2]")));
    }
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let root = f(&mut tape, &vars)?;
        let v = tape.value(root);
        if v.numel() != 1 {
            return Err(Error::Contract("grad_check function must be scalar".into()));
        }
        let v = v.item();
        if !v.is_finite() {
            return Err(Error::Numeric(format!("grad_check objective is {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let root = f(&mut tape, &vars)?;
    if !tape.value(root).item().is_finite() {
        return Err(Error::Numeric("grad_check objective is not finite".into()));
    }
    tape.backward(root)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad(v)).collect();

    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    for (pi, grad) in analytic.iter().enumerate() {
        for j in 0..params[pi].numel() {
            let orig = params[pi].data()[j];
            work[pi].data_mut()[j] = orig + step;
            let plus = eval(&work)?;
            work[pi].data_mut()[j] = orig - step;
            let minus = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = (grad.data()[j] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
