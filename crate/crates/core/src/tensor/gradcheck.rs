use super::{Tape, Tensor, TensorError, Var};

/// Result of comparing tape gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over entries of `|analytic - numeric| / max(REL_FLOOR, |numeric|)`
    pub max_rel_error: f64,
    /// `(param index, flat entry)` where the max was attained.
    pub worst: Option<(usize, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub entries_checked: usize,
}

/// Denominator floor for the relative error.
///
/// Central differences at `eps = 1e-5` on an O(1) loss carry about 1e-11 of
/// absolute rounding noise, so gradients below this floor are compared
/// absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-6;

/// Evaluates the scalar `f` with `params` recorded as fresh leaves.
fn eval<E, F>(f: &F, params: &[Tensor<f64>]) -> Result<f64, E>
where
    E: From<TensorError>,
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>, E>,
{
    let tape = Tape::new();
    let vars: Vec<_> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&tape, &vars)?;
    let value = out.value();
    if value.len() != 1 {
        return Err(TensorError::NonScalarLoss(value.shape().to_vec()).into());
    }
    Ok(value.item())
}

/// `(f(p + eps) - f(p - eps)) / 2 eps` for one entry of one parameter.
pub fn central_difference<E, F>(f: &F, params: &[Tensor<f64>], param: usize, entry: usize, eps: f64) -> Result<f64, E>
where
    E: From<TensorError>,
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>, E>,
{
    let mut shifted = params.to_vec();
    let base = params[param].data()[entry];
    shifted[param].data_mut()[entry] = base + eps;
    let plus = eval(f, &shifted)?;
    shifted[param].data_mut()[entry] = base - eps;
    let minus = eval(f, &shifted)?;
    Ok((plus - minus) / (2.0 * eps))
}

/// Checks every entry of every parameter. `eps` must be positive.
pub fn grad_check<E, F>(f: F, params: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport, E>
where
    E: From<TensorError>,
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>, E>,
{
    assert!(eps > 0.0, "grad_check epsilon must be positive");
    let analytic: Vec<Tensor<f64>> = {
        let tape = Tape::new();
        let vars: Vec<_> = params.iter().map(|p| tape.param(p.clone())).collect();
        let loss = f(&tape, &vars)?;
        let grads = tape.backward(loss)?;
        vars.iter().map(|&v| grads.wrt(v)).collect()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        entries_checked: 0,
    };
    for (p, grad) in analytic.iter().enumerate() {
        for (e, &a) in grad.data().iter().enumerate() {
            let numeric = central_difference(&f, params, p, e, eps)?;
            let rel = (a - numeric).abs() / numeric.abs().max(REL_FLOOR);
            report.entries_checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((p, e));
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}
