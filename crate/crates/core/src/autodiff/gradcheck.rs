use super::{Result, Tape, Tensor, Var};

/// Gradients smaller than this in magnitude are compared absolutely, since
/// rounding in the loss puts an absolute noise floor under any difference
/// quotient.
pub const GRAD_FLOOR: f64 = 1e-3;

/// Central-difference step used when callers have no reason to pick another.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `|analytic - numeric| / max(|analytic|, |numeric|, GRAD_FLOOR)`.
    pub max_rel_err: f64,
    pub worst_input: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares every entry of every input's gradient of the scalar built by
/// `f` against a central difference with step `h`.
pub fn grad_check<F>(inputs: &[Tensor], f: F, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|v| tape.grad(*v).unwrap().clone()).collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_input: 0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut work = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[i].data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
            report.checked += 1;
            if err > report.max_rel_err || report.checked == 1 {
                report.max_rel_err = err;
                report.worst_input = i;
                report.worst_index = j;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
