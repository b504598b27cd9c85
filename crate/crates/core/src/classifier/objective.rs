use ndarray::{ArrayView1, ArrayView2};

use super::ClassifierError;

/// Overflow-safe `ln(1 + exp(-m))`.
#[inline]
pub fn softplus_neg(m: f64) -> f64 {
    (-m.abs()).exp().ln_1p() + (-m).max(0.0)
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Objective value and gradient at one parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_weights: Vec<f64>,
    pub grad_bias: f64,
}

/// Weighted, L2-regularized logistic loss
///
/// `J = 0.5 * |theta|^2 + C * sum_i w_i * ln(1 + exp(-s_i * (theta . x_i + b)))`
///
/// with `s_i = 2 y_i - 1`. The bias is not penalized.
pub fn loss_and_gradient(
    theta: ArrayView1<f64>,
    bias: f64,
    x: ArrayView2<f64>,
    y: &[u8],
    sample_weights: &[f64],
    c: f64,
) -> Result<LossGrad, ClassifierError> {
    let (n, p) = x.dim();
    if theta.len() != p {
        return Err(ClassifierError::DimensionMismatch { expected: p, got: theta.len() });
    }
    if y.len() != n || sample_weights.len() != n {
        return Err(ClassifierError::DimensionMismatch { expected: n, got: y.len().min(sample_weights.len()) });
    }
    if !bias.is_finite()
        || theta.iter().any(|v| !v.is_finite())
        || x.iter().any(|v| !v.is_finite())
        || sample_weights.iter().any(|v| !v.is_finite())
        || y.iter().any(|&v| v > 1)
    {
        return Err(ClassifierError::NonFiniteInput);
    }
    let mut grad = vec![0.0; p];
    let (loss, grad_bias) = evaluate(theta, bias, x, y, sample_weights, c, &mut grad);
    Ok(LossGrad { loss, grad_weights: grad, grad_bias })
}

/// Unchecked evaluation; writes the weight gradient into `grad` and returns
/// `(loss, grad_bias)`.
pub(crate) fn evaluate(
    theta: ArrayView1<f64>,
    bias: f64,
    x: ArrayView2<f64>,
    y: &[u8],
    sample_weights: &[f64],
    c: f64,
    grad: &mut [f64],
) -> (f64, f64) {
    let z = x.dot(&theta);
    let mut data = 0.0;
    let mut grad_bias = 0.0;
    let mut resid = Vec::with_capacity(y.len());
    for ((&zi, &yi), &wi) in z.iter().zip(y).zip(sample_weights) {
        let zi = zi + bias;
        let sign = if yi == 1 { 1.0 } else { -1.0 };
        data += wi * softplus_neg(sign * zi);
        let r = c * wi * (sigmoid(zi) - yi as f64);
        grad_bias += r;
        resid.push(r);
    }
    let xt_r = x.t().dot(&ndarray::ArrayView1::from(&resid[..]));
    for ((g, &t), &xr) in grad.iter_mut().zip(theta.iter()).zip(xt_r.iter()) {
        *g = t + xr;
    }
    let reg = 0.5 * theta.dot(&theta);
    (reg + c * data, grad_bias)
}
