use super::{Bound, ParamStore, Result, Tape, Tensor, TensorError, Var};

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// max over all checked elements of `|a - n| / max(1, |a|, |n|)`.
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares reverse-mode gradients of a scalar program against central
/// differences with the given step, over every element of every input.
pub fn grad_check<F>(f: F, point: &[Tensor], step: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&mut Tape<'t>, &[Var]) -> Result<Var>,
{
    if step.is_nan() || step <= 0.0 {
        return Err(TensorError::Invalid(format!("grad_check step must be positive, got {step}")));
    }
    let mut work: Vec<Tensor> = point.iter().map(|t| t.clone().with_grad()).collect();

    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = work.iter().map(|t| tape.leaf(t)).collect();
        let out = f(&mut tape, &vars)?;
        let grads = tape.backward(out)?;
        vars.iter().map(|&v| grads.wrt(&tape, v)).collect()
    };

    for (p, g) in analytic.iter().enumerate() {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { param: p, index: i });
        }
    }

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: 0,
        worst_index: 0,
        checked: 0,
    };
    for p in 0..work.len() {
        for (i, &a) in analytic[p].iter().enumerate() {
            let original = work[p].data()[i];
            work[p].data_mut()[i] = original + step;
            let plus = eval(&work)?;
            work[p].data_mut()[i] = original - step;
            let minus = eval(&work)?;
            work[p].data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * step);
            if !(a.is_finite() && numeric.is_finite()) {
                return Err(TensorError::NonFinite { param: p, index: i });
            }
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = p;
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

/// [`grad_check`] over every tensor of a parameter store.
pub fn grad_check_params<F>(store: &ParamStore, f: F, step: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&mut Tape<'t>, &Bound) -> Result<Var>,
{
    grad_check(
        |tape, vars| f(tape, &Bound::from_vars(vars.to_vec())),
        store.tensors(),
        step,
    )
}
