//! Central finite-difference oracle for tape gradients.
//!
//! The oracle only ever evaluates the forward pass; it never touches the
//! backward sweep it is used to check.

use super::tape::{Bound, Params, Tape, Var};

/// Differences below this magnitude are compared absolutely rather than
/// relatively; central differences at step 1e-5 carry roundoff of order
/// 1e-11·|f|.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
}

/// `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn evaluate<F>(params: &Params, f: &F) -> f64
where
    F: Fn(&mut Tape, &Bound) -> Var,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = f(&mut tape, &bound);
    tape.value(out).item()
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences with the given `step`, over every entry of every parameter.
pub fn check<F>(params: &Params, f: F, step: f64) -> GradReport
where
    F: Fn(&mut Tape, &Bound) -> Var,
{
    check_entries(params, f, step, usize::MAX)
}

/// Like [`check`] but probes at most `per_param` evenly spaced entries of each
/// parameter.
pub fn check_entries<F>(params: &Params, f: F, step: f64, per_param: usize) -> GradReport
where
    F: Fn(&mut Tape, &Bound) -> Var,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = f(&mut tape, &bound);
    let grads = tape.backward(out).expect("finite forward");
    let analytic = grads.collect(&tape, &bound);

    let mut report = GradReport { max_rel_error: 0.0, worst: None, checked: 0 };
    let mut probe = params.clone();
    for (name, value) in params.iter() {
        let n = value.len();
        let stride = n.div_ceil(per_param.min(n)).max(1);
        for idx in (0..n).step_by(stride) {
            let orig = value.data()[idx];
            probe.get_mut(name).unwrap().data_mut()[idx] = orig + step;
            let up = evaluate(&probe, &f);
            probe.get_mut(name).unwrap().data_mut()[idx] = orig - step;
            let down = evaluate(&probe, &f);
            probe.get_mut(name).unwrap().data_mut()[idx] = orig;

            let numeric = (up - down) / (2.0 * step);
            let a = analytic[name].data()[idx];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((name.clone(), idx, a, numeric));
                }
            }
        }
    }
    report
}
