//! Warping loss, Charbonnier colorization loss and their weighted sum.
//!
//! Both losses average over pixels, channels and batch elements so their
//! magnitudes do not depend on resolution.

use ccdc_tensor::{Operation, Real, Tensor, TensorError, Var};

use crate::error::{Error, Result};
use crate::imageops::ColorImage;
use crate::warp::{warp, FlowField};

pub const CHARBONNIER_EPSILON: f64 = 1e-3;

/// Elementwise `sqrt(x² + ε²)` with `ε = 0.001`.
pub struct Charbonnier;

impl<T: Real> Operation<T> for Charbonnier {
    fn name(&self) -> &'static str {
        "charbonnier"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError> {
        let eps2 = T::lit(CHARBONNIER_EPSILON * CHARBONNIER_EPSILON);
        Ok(inputs[0].map(|x| (x * x + eps2).sqrt()))
    }

    fn backward(&self, x: &[&Tensor<T>], y: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let grad = Tensor::from_fn(x[0].shape().to_vec(), |i| g.data()[i] * x[0].data()[i] / y.data()[i]);
        vec![Some(grad)]
    }
}

pub fn charbonnier<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let eps2 = T::lit(CHARBONNIER_EPSILON * CHARBONNIER_EPSILON);
    x.map(|v| (v * v + eps2).sqrt())
}

fn same_shape<T: Real>(a: Var<'_, T>, b: Var<'_, T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `½ · mean((W(ref_up, f_0) − gt)²)` over an N×3×H×W batch.
pub fn warping_loss_var<'g, T: Real>(
    reference_up: Var<'g, T>,
    ground_truth: Var<'g, T>,
    flow0: Var<'g, T>,
) -> Result<Var<'g, T>> {
    same_shape(reference_up, ground_truth, "warping loss")?;
    let warped = warp(reference_up, flow0)?;
    Ok(warped.sub(ground_truth)?.square().mean().scale(T::lit(0.5)))
}

/// `mean(ρ(pred − gt))` over an N×3×H×W batch.
pub fn colorization_loss_var<'g, T: Real>(prediction: Var<'g, T>, ground_truth: Var<'g, T>) -> Result<Var<'g, T>> {
    same_shape(prediction, ground_truth, "colorization loss")?;
    let diff = prediction.sub(ground_truth)?;
    Ok(diff.graph().apply(Charbonnier, &[diff])?.mean())
}

/// Scalar warping loss for one image pair.
pub fn warping_loss(reference_up: &ColorImage, ground_truth: &ColorImage, flow0: &FlowField) -> Result<f64> {
    let g = ccdc_tensor::Graph::<f64>::new();
    let r = g.constant(reference_up.tensor().cast());
    let t = g.constant(ground_truth.tensor().cast());
    let f = g.constant(flow0.tensor().cast());
    Ok(warping_loss_var(r, t, f)?.value().scalar_value())
}

/// Scalar colorization loss for one image pair.
pub fn colorization_loss(prediction: &ColorImage, ground_truth: &ColorImage) -> Result<f64> {
    let g = ccdc_tensor::Graph::<f64>::new();
    let p = g.constant(prediction.tensor().cast());
    let t = g.constant(ground_truth.tensor().cast());
    Ok(colorization_loss_var(p, t)?.value().scalar_value())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub l_warp: f64,
    pub l_color: f64,
    pub total: f64,
    pub lambda_warp: f64,
}

/// `total = l_color + λ · l_warp`.
pub fn total_loss(l_color: f64, l_warp: f64, lambda_warp: f64) -> Result<LossReport> {
    check_lambda(lambda_warp)?;
    let report = LossReport { l_warp, l_color, total: l_color + lambda_warp * l_warp, lambda_warp };
    if !(report.total.is_finite() && l_warp.is_finite() && l_color.is_finite()) {
        return Err(Error::Argument(format!("non-finite loss components {report:?}")));
    }
    Ok(report)
}

pub fn check_lambda(lambda_warp: f64) -> Result<()> {
    if !(lambda_warp.is_finite() && lambda_warp >= 0.0) {
        return Err(Error::Argument(format!("lambda_warp must be non-negative, got {lambda_warp}")));
    }
    Ok(())
}

/// Graph version of [`total_loss`]; with `λ = 0` the warping term is left
/// out of the graph entirely.
pub fn total_loss_var<'g, T: Real>(l_color: Var<'g, T>, l_warp: Var<'g, T>, lambda_warp: f64) -> Result<Var<'g, T>> {
    check_lambda(lambda_warp)?;
    if lambda_warp == 0.0 {
        return Ok(l_color);
    }
    Ok(l_color.add(l_warp.scale(T::lit(lambda_warp)))?)
}
