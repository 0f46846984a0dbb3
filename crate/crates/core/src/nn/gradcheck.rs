use super::param::{Grads, ParamSet};

/// Largest disagreement between an analytic gradient and central finite
/// differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Relative error with the denominator floored at `scale_floor`, so
/// vanishing gradients are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64, scale_floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(scale_floor)
}

/// Denominator floor used by [`grad_check`].
pub const GRAD_CHECK_SCALE_FLOOR: f64 = 1e-6;

/// Compares `analytic` against central differences of `value` with step `h`,
/// perturbing every scalar of `params` in turn.
pub fn grad_check<F>(params: &ParamSet, analytic: &Grads, value: F, h: f64) -> GradCheckReport
where
    F: Fn(&ParamSet) -> f64,
{
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    for p in 0..params.len() {
        for i in 0..params.get(p).len() {
            let orig = params.get(p).values[i];
            probe.get_mut(p).values[i] = orig + h;
            let up = value(&probe);
            probe.get_mut(p).values[i] = orig - h;
            let down = value(&probe);
            probe.get_mut(p).values[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(analytic.0[p][i], numeric, GRAD_CHECK_SCALE_FLOOR);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((params.names()[p].clone(), i));
            }
        }
    }
    report
}
