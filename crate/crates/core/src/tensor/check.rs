use super::{Tape, Tensor, TensorError, Var};

/// Denominator floor for [`relative_error`]; below it the comparison is
/// effectively absolute, so vanishing gradients do not divide by ~0.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

/// `|a - b| / max(|a|, |b|, GRAD_CHECK_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
    (analytic - numeric).abs() / scale
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub param: usize,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Runs `f` on `params`, moving them onto the tape and back instead of
/// copying them.
fn evaluate<F, E>(f: &F, params: &mut [Tensor]) -> Result<f64, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter_mut()
        .map(|p| tape.leaf(std::mem::replace(p, Tensor::zeros(&[0]))))
        .collect();
    let value = f(&mut tape, &vars).map(|out| tape.value(out).item());
    for (p, v) in params.iter_mut().zip(&vars) {
        *p = tape.take_value(*v);
    }
    let value = value?;
    if !value.is_finite() {
        return Err(TensorError::NonFinite { op: "grad_check" }.into());
    }
    Ok(value)
}

/// Compares tape gradients of the scalar built by `f` against central
/// differences `(f(p + eps) - f(p - eps)) / 2 eps`, one coordinate at a time.
pub fn grad_check<F, E>(f: F, params: &[Tensor], eps: f64, tolerance: f64) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).item().is_finite() {
        return Err(TensorError::NonFinite { op: "grad_check" }.into());
    }
    let grads = tape.backward(out)?;

    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        params: Vec::with_capacity(params.len()),
        max_rel_error: 0.0,
        tolerance,
    };
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var);
        let mut check = ParamCheck {
            param: pi,
            coordinates: analytic.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for k in 0..analytic.len() {
            let original = probe[pi].data()[k];
            probe[pi].data_mut()[k] = original + eps;
            let plus = evaluate(&f, &mut probe)?;
            probe[pi].data_mut()[k] = original - eps;
            let minus = evaluate(&f, &mut probe)?;
            probe[pi].data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[k];
            let err = relative_error(a, numeric);
            if err > check.max_rel_error || k == 0 {
                check.max_rel_error = err;
                check.worst_index = k;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        report.max_rel_error = report.max_rel_error.max(check.max_rel_error);
        report.params.push(check);
    }
    Ok(report)
}
