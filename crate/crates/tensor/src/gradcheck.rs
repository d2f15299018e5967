//! Central finite-difference checks of analytic gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Denominator floor of the relative error, so that gradients that are zero
/// analytically are compared in absolute terms against finite-difference noise.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_relative_error: f64,
    /// (input index, element index) of the worst element.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_relative_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares the gradient of the scalar `f(inputs)` with central differences
/// of step `h`. `skip(input, element)` excludes elements (e.g. points on
/// non-differentiable kinks).
pub fn check_gradients<F>(
    inputs: &[Tensor<f64>],
    h: f64,
    f: F,
    skip: impl Fn(usize, usize) -> bool,
) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let graph = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| graph.variable(t.clone())).collect();
    let root = f(&graph, &vars)?;
    let grads = graph.backward(root)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::new();
        let vs: Vec<_> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        Ok(f(&g, &vs)?.value().scalar_value())
    };

    let mut report = GradCheckReport { checked: 0, skipped: 0, max_relative_error: 0.0, worst: None };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for e in 0..input.len() {
            if skip(i, e) {
                report.skipped += 1;
                continue;
            }
            let x = input.data()[e];
            work[i].data_mut()[e] = x + h;
            let plus = eval(&work)?;
            work[i].data_mut()[e] = x - h;
            let minus = eval(&work)?;
            work[i].data_mut()[e] = x;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic[i].data()[e], numeric);
            report.checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst = Some((i, e));
            }
        }
    }
    Ok(report)
}
