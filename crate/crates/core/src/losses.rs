//! Training objective: penalty-reduced focal loss on the heatmap plus
//! masked L1 losses on length and offset, with analytic gradients with
//! respect to the predictions.

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::scalar::{Matrix, Scalar};

/// Predictions are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub heat: f64,
    pub length: f64,
    pub offset: f64,
    pub total: f64,
    /// Normalizer actually applied, `max(N, 1)`.
    pub n_used: usize,
}

fn normalizer(n: usize) -> usize {
    n.max(1)
}

/// Focal heatmap loss and its gradient with respect to `pred`.
///
/// Cells with `target == 1` contribute `(1-p)^alpha log p`; all others
/// contribute `(1-y)^beta p^alpha log(1-p)`. The sum is negated and divided
/// by `max(n, 1)`.
pub fn focal_heatmap_loss<F: Scalar>(
    pred: &Matrix<F>,
    target: &Matrix<F>,
    n: usize,
    alpha: F,
    beta: F,
) -> Result<(F, Matrix<F>)> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "heatmap prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let (one, eps) = (F::one(), F::lit(EPS));
    let hi = one - eps;
    let inv_n = one / F::from_usize_lossy(normalizer(n));
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    let mut sum = F::zero();
    for (i, (&raw, &y)) in pred.as_slice().iter().zip(target.as_slice()).enumerate() {
        if !(y >= F::zero() && y <= one) {
            return Err(Error::InvalidInput(format!("heatmap target {y} outside [0, 1]")));
        }
        let clamped = raw < eps || raw > hi;
        let p = raw.max(eps).min(hi);
        let (term, dterm) = if y == one {
            let w = (one - p).powf(alpha);
            let dw = -alpha * (one - p).powf(alpha - one);
            (w * p.ln(), dw * p.ln() + w / p)
        } else {
            let neg = (one - y).powf(beta);
            let pa = p.powf(alpha);
            let dpa = if alpha == F::zero() { F::zero() } else { alpha * p.powf(alpha - one) };
            let l = (one - p).ln();
            (neg * pa * l, neg * (dpa * l - pa / (one - p)))
        };
        sum += term;
        grad.as_mut_slice()[i] = if clamped { F::zero() } else { -dterm * inv_n };
    }
    Ok((-sum * inv_n, grad))
}

/// Masked L1 loss `(1/max(n,1)) sum_{t in mask} |pred_t - target_t|` and its
/// subgradient (0 at exact ties and outside the mask).
pub fn masked_l1_loss<F: Scalar>(
    pred: &[F],
    target: &[F],
    mask: &[bool],
    n: usize,
) -> Result<(F, Vec<F>)> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(Error::Shape(format!(
            "L1 loss lengths {} / {} / {}",
            pred.len(),
            target.len(),
            mask.len()
        )));
    }
    let inv_n = F::one() / F::from_usize_lossy(normalizer(n));
    let mut grad = vec![F::zero(); pred.len()];
    let mut sum = F::zero();
    for t in 0..pred.len() {
        if !mask[t] {
            continue;
        }
        let d = pred[t] - target[t];
        sum += d.abs();
        grad[t] = if d > F::zero() {
            inv_n
        } else if d < F::zero() {
            -inv_n
        } else {
            F::zero()
        };
    }
    Ok((sum * inv_n, grad))
}

pub fn l1_length_loss<F: Scalar>(pred: &[F], target: &[F], mask: &[bool], n: usize) -> Result<(F, Vec<F>)> {
    masked_l1_loss(pred, target, mask, n)
}

pub fn l1_offset_loss<F: Scalar>(pred: &[F], target: &[F], mask: &[bool], n: usize) -> Result<(F, Vec<F>)> {
    masked_l1_loss(pred, target, mask, n)
}

/// Weighted sum `heat + lambda_len * length + lambda_offset * offset`.
pub fn total_loss(heat: f64, length: f64, offset: f64, n: usize, cfg: &PipelineConfig) -> LossBreakdown {
    LossBreakdown {
        heat,
        length,
        offset,
        total: heat + cfg.lambda_len * length + cfg.lambda_offset * offset,
        n_used: normalizer(n),
    }
}

/// Gradients of the total loss with respect to each prediction tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrads<F> {
    pub heat: Matrix<F>,
    pub length: Vec<F>,
    pub offset: Vec<F>,
}

impl<F: Scalar> PredictionGrads<F> {
    pub fn zeros(t: usize, channels: usize) -> Self {
        Self {
            heat: Matrix::zeros(t, channels),
            length: vec![F::zero(); t],
            offset: vec![F::zero(); t],
        }
    }

    pub fn scale(&mut self, s: F) {
        self.heat.as_mut_slice().iter_mut().for_each(|g| *g *= s);
        self.length.iter_mut().for_each(|g| *g *= s);
        self.offset.iter_mut().for_each(|g| *g *= s);
    }
}

/// Evaluates all three losses and the weighted total, returning gradients
/// of the total with respect to `(heat, length, offset)` predictions.
pub fn detection_loss<F: Scalar>(
    heat: &Matrix<F>,
    length: &[F],
    offset: &[F],
    targets: &crate::encoder::TargetTensors<F>,
    cfg: &PipelineConfig,
) -> Result<(LossBreakdown, PredictionGrads<F>)> {
    let n = targets.num_keywords;
    let (lh, gh) = focal_heatmap_loss(
        heat,
        &targets.heat,
        n,
        F::lit(cfg.focal_alpha),
        F::lit(cfg.focal_beta),
    )?;
    let (ll, mut gl) = l1_length_loss(length, &targets.length, &targets.mask, n)?;
    let (lo, mut go) = l1_offset_loss(offset, &targets.offset, &targets.mask, n)?;
    let (wl, wo) = (F::lit(cfg.lambda_len), F::lit(cfg.lambda_offset));
    gl.iter_mut().for_each(|g| *g *= wl);
    go.iter_mut().for_each(|g| *g *= wo);
    let breakdown = total_loss(lh.to_f64_lossy(), ll.to_f64_lossy(), lo.to_f64_lossy(), n, cfg);
    Ok((
        breakdown,
        PredictionGrads {
            heat: gh,
            length: gl,
            offset: go,
        },
    ))
}
