use rand::seq::index::sample;

use super::{optim::seeded_rng, Grads, ParamStore, Tensor};

/// Denominator floor so near-zero gradients are compared absolutely.
const REL_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest error, e.g. `conv1.w[17]` or `input[3]`.
    pub worst: String,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Compares analytic gradients against central differences of `loss`.
///
/// At most `max_coords` randomly chosen coordinates of each parameter
/// tensor (and of the input) are perturbed by `±eps`.
#[allow(clippy::too_many_arguments)]
pub fn grad_check(
    params: &ParamStore,
    input: &Tensor,
    analytic_params: &Grads,
    analytic_input: Option<&Tensor>,
    loss: impl Fn(&ParamStore, &Tensor) -> f64,
    eps: f64,
    tolerance: f64,
    max_coords: usize,
) -> GradCheckReport {
    let mut rng = seeded_rng(0x9e37_79b9);
    let mut report =
        GradCheckReport { max_rel_error: 0.0, worst: String::new(), checked: 0, tolerance };
    let record = |report: &mut GradCheckReport, name: String, a: f64, n: f64| {
        let e = relative_error(a, n);
        report.checked += 1;
        if e > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = e.max(report.max_rel_error);
            report.worst = format!("{name} (analytic {a:.6e}, numeric {n:.6e})");
        }
    };

    let mut shadow = params.clone();
    for (pi, p) in params.params().iter().enumerate() {
        let len = p.value.len();
        for k in sample(&mut rng, len, len.min(max_coords)) {
            let orig = shadow.get(pi).data()[k];
            shadow.get_mut(pi).data_mut()[k] = orig + eps;
            let up = loss(&shadow, input);
            shadow.get_mut(pi).data_mut()[k] = orig - eps;
            let down = loss(&shadow, input);
            shadow.get_mut(pi).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            record(&mut report, format!("{}[{k}]", p.name), analytic_params.0[pi].data()[k], numeric);
        }
    }
    if let Some(gx) = analytic_input {
        let mut x = input.clone();
        for k in sample(&mut rng, x.len(), x.len().min(max_coords)) {
            let orig = x.data()[k];
            x.data_mut()[k] = orig + eps;
            let up = loss(params, &x);
            x.data_mut()[k] = orig - eps;
            let down = loss(params, &x);
            x.data_mut()[k] = orig;
            record(&mut report, format!("input[{k}]"), gx.data()[k], (up - down) / (2.0 * eps));
        }
    }
    report
}
