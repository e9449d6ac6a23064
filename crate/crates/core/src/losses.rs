//! Weakly-supervised flow losses and the segmentation objective.
//!
//! Masks are `[1, H, W]` arrays with values in `[0, 1]`, frames are
//! `[3, H, W]`.

use crate::diffarray::{DiffArray, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the soft-IoU term.
    pub lambda_iou: f64,
    /// Lower clamp inside `log`.
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_iou: 1.0,
            epsilon: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_iou >= 0.0) || !self.lambda_iou.is_finite() {
            return Err(Error::invalid(format!(
                "lambda_iou must be a finite value >= 0, got {}",
                self.lambda_iou
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-3) {
            return Err(Error::invalid(format!(
                "epsilon must lie in (0, 1e-3], got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

fn same_shape<T: Real>(op: &'static str, a: &DiffArray<'_, T>, b: &DiffArray<'_, T>) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::shape(op, &sa, &sb));
    }
    if sa.iter().product::<usize>() == 0 {
        return Err(Error::Empty(op));
    }
    Ok(())
}

/// `sum(min(a, b)) / sum(max(a, b))`, or 1 when both masks are all zero.
pub fn soft_iou<'t, T: Real>(a: DiffArray<'t, T>, b: DiffArray<'t, T>) -> Result<DiffArray<'t, T>> {
    same_shape("soft_iou", &a, &b)?;
    let union = a.maximum(b)?.sum();
    if union.item()? == T::zero() {
        return Ok(a.tape().scalar(T::one()));
    }
    a.minimum(b)?.sum().div(union)
}

/// Mean negative log-likelihood with `log(max(x, eps))`.
pub fn binary_cross_entropy<'t, T: Real>(
    pred: DiffArray<'t, T>,
    target: DiffArray<'t, T>,
    epsilon: f64,
) -> Result<DiffArray<'t, T>> {
    same_shape("binary_cross_entropy", &pred, &target)?;
    let eps = T::lit(epsilon);
    let pos = target.mul(pred.log_eps(eps))?;
    let neg = target
        .rsub_scalar(T::one())
        .mul(pred.rsub_scalar(T::one()).log_eps(eps))?;
    Ok(pos.add(neg)?.mean()?.neg())
}

/// Cross-entropy minus `lambda * soft_iou` between the warped previous
/// mask and the target mask.
pub fn mask_flow_loss<'t, T: Real>(
    warped_prev_mask: DiffArray<'t, T>,
    target_mask: DiffArray<'t, T>,
    cfg: &LossConfig,
) -> Result<DiffArray<'t, T>> {
    let ce = binary_cross_entropy(warped_prev_mask, target_mask, cfg.epsilon)?;
    if cfg.lambda_iou == 0.0 {
        return Ok(ce);
    }
    let iou = soft_iou(warped_prev_mask, target_mask)?;
    ce.sub(iou.mul_scalar(T::lit(cfg.lambda_iou)))
}

/// Same functional form as [`mask_flow_loss`], applied to the segmenter's
/// prediction.
pub fn segmentation_loss<'t, T: Real>(
    pred_mask: DiffArray<'t, T>,
    target_mask: DiffArray<'t, T>,
    cfg: &LossConfig,
) -> Result<DiffArray<'t, T>> {
    mask_flow_loss(pred_mask, target_mask, cfg)
}

fn check_frame_mask<T: Real>(frame: &DiffArray<'_, T>, mask: &DiffArray<'_, T>) -> Result<usize> {
    let (fs, ms) = (frame.shape(), mask.shape());
    match (fs.as_slice(), ms.as_slice()) {
        (&[c, h, w], &[1, mh, mw]) if (h, w) == (mh, mw) && c > 0 && h * w > 0 => Ok(c),
        _ => Err(Error::shape("visual_flow_loss", &fs, &ms)),
    }
}

/// Mean over all `H * W * C` slots of
/// `(warped_frame * warped_mask - target_frame * target_mask)^2`.
pub fn visual_flow_loss<'t, T: Real>(
    warped_prev_frame: DiffArray<'t, T>,
    warped_prev_mask: DiffArray<'t, T>,
    target_frame: DiffArray<'t, T>,
    target_mask: DiffArray<'t, T>,
) -> Result<DiffArray<'t, T>> {
    let c = check_frame_mask(&warped_prev_frame, &warped_prev_mask)?;
    let ct = check_frame_mask(&target_frame, &target_mask)?;
    if c != ct || warped_prev_frame.shape() != target_frame.shape() {
        return Err(Error::shape(
            "visual_flow_loss",
            &warped_prev_frame.shape(),
            &target_frame.shape(),
        ));
    }
    let warped = warped_prev_frame.mul(warped_prev_mask.repeat_channels(c)?)?;
    let target = target_frame.mul(target_mask.repeat_channels(c)?)?;
    warped.sub(target)?.square().mean()
}

/// Unmasked photometric MSE between the warped previous frame and the
/// target frame (the background-inclusive variant used for ablations).
pub fn photometric_loss<'t, T: Real>(
    warped_prev_frame: DiffArray<'t, T>,
    target_frame: DiffArray<'t, T>,
) -> Result<DiffArray<'t, T>> {
    same_shape("photometric_loss", &warped_prev_frame, &target_frame)?;
    warped_prev_frame.sub(target_frame)?.square().mean()
}
