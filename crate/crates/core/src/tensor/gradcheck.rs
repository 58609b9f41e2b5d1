use super::{Tape, Tensor, Var};
use crate::error::{contract_err, Result};

/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares the tape gradient of a scalar function against central
/// differences and returns the worst relative error over all coordinates.
pub fn finite_diff_gradcheck<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let errs = finite_diff_gradcheck_many(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(x),
        eps,
    )?;
    Ok(errs[0])
}

/// Multi-input variant; returns the worst relative error per input.
pub fn finite_diff_gradcheck_many<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.constant(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        match tape.value(out).item() {
            Some(v) => Ok(v),
            None => contract_err("gradient check needs a scalar-valued function"),
        }
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let base = match tape.value(out).item() {
        Some(v) => v,
        None => return contract_err("gradient check needs a scalar-valued function"),
    };
    if eval(inputs)?.to_bits() != base.to_bits() {
        return contract_err("function is not deterministic (is dropout active?)");
    }
    let grads = tape.backward(out)?;

    let mut worst = Vec::with_capacity(inputs.len());
    let mut probe = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var, inputs[which].len());
        let mut max_err: f64 = 0.0;
        for i in 0..inputs[which].len() {
            let orig = inputs[which].data()[i];
            probe[which].data_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe[which].data_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe[which].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            max_err = max_err.max(relative_error(analytic[i], numeric));
        }
        worst.push(max_err);
    }
    Ok(worst)
}
