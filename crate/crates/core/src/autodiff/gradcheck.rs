use super::{Params, Tape, Var};
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Magnitudes below this are compared absolutely rather than relatively.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn evaluate<F>(params: &Params, model_fn: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &Params) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = model_fn(&mut tape, params)?;
    Ok(tape.value(out).item())
}

/// Compares reverse-mode gradients of a scalar `model_fn` against central
/// differences on every parameter value. Parameter values are restored
/// bit-exactly; gradients are left holding the analytic result.
pub fn grad_check<F>(params: &mut Params, model_fn: F, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Params) -> Result<Var>,
{
    params.zero_grad();
    let mut tape = Tape::new();
    let out = model_fn(&mut tape, params)?;
    tape.backward(out, params)?;
    drop(tape);

    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad.data().to_vec()).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        tolerance,
    };
    let names: Vec<String> = params.iter().map(|p| p.name.clone()).collect();
    for (pi, name) in names.iter().enumerate() {
        let n = analytic[pi].len();
        for i in 0..n {
            let original = params.by_name(name).expect("param").value.data()[i];
            let set = |params: &mut Params, v: f64| {
                params.by_name_mut(name).expect("param").value.data_mut()[i] = v;
            };
            set(params, original + FD_STEP);
            let plus = evaluate(params, &model_fn)?;
            set(params, original - FD_STEP);
            let minus = evaluate(params, &model_fn)?;
            set(params, original);

            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = relative_error(analytic[pi][i], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = name.clone();
                report.worst_index = i;
                report.analytic = analytic[pi][i];
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
