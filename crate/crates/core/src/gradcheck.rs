//! Central finite-difference verification of analytic gradients.
//!
//! Runs in `f64`; the fragment closure must be a pure function of the
//! parameter values it is handed.

use crate::tensor::Tensor;

/// One named parameter entering a gradient check.
pub struct CheckedParam {
    pub name: String,
    pub value: Tensor<f64>,
    pub requires_grad: bool,
}

impl CheckedParam {
    pub fn new(name: impl Into<String>, value: Tensor<f64>) -> Self {
        CheckedParam { name: name.into(), value, requires_grad: true }
    }

    pub fn detached(name: impl Into<String>, value: Tensor<f64>) -> Self {
        CheckedParam { name: name.into(), value, requires_grad: false }
    }
}

#[derive(Debug, Clone)]
pub struct ParamReport {
    pub name: String,
    pub max_rel_err: f64,
}

/// Outcome of a finite-difference sweep over a fragment's parameters.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamReport>,
    pub step: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tolerance
    }

    pub fn worst(&self) -> Option<&ParamReport> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.partial_cmp(&b.max_rel_err).expect("finite errors"))
    }
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-6 {
        // Below the scale at which central differences are informative in
        // f64; compare absolutely instead.
        return diff;
    }
    diff / scale
}

/// Compare the fragment's analytic gradients against central differences.
///
/// `fragment` maps parameter values to `(loss, gradients)`, one gradient per
/// parameter in order (ignored entries allowed for detached parameters).
/// Detached parameters are excluded from the report.
pub fn gradient_check<F>(params: &[CheckedParam], fragment: F, step: f64, tolerance: f64) -> GradCheckReport
where
    F: Fn(&[Tensor<f64>]) -> (f64, Vec<Tensor<f64>>),
{
    let values: Vec<Tensor<f64>> = params.iter().map(|p| p.value.clone()).collect();
    let (_, analytic) = fragment(&values);
    assert_eq!(analytic.len(), params.len(), "fragment must emit one gradient per parameter");

    let mut reports = Vec::new();
    for (pi, param) in params.iter().enumerate() {
        if !param.requires_grad {
            continue;
        }
        let mut max_rel = 0.0f64;
        let mut probe = values.clone();
        for j in 0..param.value.len() {
            let original = probe[pi].data()[j];
            probe[pi].data_mut()[j] = original + step;
            let (loss_plus, _) = fragment(&probe);
            probe[pi].data_mut()[j] = original - step;
            let (loss_minus, _) = fragment(&probe);
            probe[pi].data_mut()[j] = original;

            let numeric = (loss_plus - loss_minus) / (2.0 * step);
            let rel = relative_error(analytic[pi].data()[j], numeric);
            if rel > max_rel {
                max_rel = rel;
            }
        }
        reports.push(ParamReport { name: param.name.clone(), max_rel_err: max_rel });
    }
    GradCheckReport { params: reports, step, tolerance }
}
