use crate::error::{Error, Result};

pub const DEFAULT_PRECISION_RADIUS: f64 = 20.0;

/// Mean over the 101 thresholds `0, 0.01, ..., 1` of the fraction of frames
/// with `iou > t`.
pub fn success_auc(ious: &[f64]) -> Result<f64> {
    if ious.is_empty() {
        return Err(Error::InvalidArgument("success AUC of an empty list".into()));
    }
    if ious.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument("IoU values must lie in [0, 1]".into()));
    }
    let n = ious.len() as f64;
    let total: f64 = (0..=100)
        .map(|k| {
            let t = k as f64 / 100.0;
            ious.iter().filter(|&&v| v > t).count() as f64 / n
        })
        .sum();
    Ok(total / 101.0)
}

/// Fraction of frames whose center error is at most `radius_px`.
pub fn precision_at(centers_pred: &[(f64, f64)], centers_gt: &[(f64, f64)], radius_px: f64) -> Result<f64> {
    if centers_pred.len() != centers_gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predicted centers, {} ground-truth centers",
            centers_pred.len(),
            centers_gt.len()
        )));
    }
    if centers_pred.is_empty() {
        return Err(Error::InvalidArgument("precision of an empty list".into()));
    }
    if !(radius_px > 0.0) {
        return Err(Error::InvalidArgument(format!("radius {radius_px} must be positive")));
    }
    let hits = centers_pred
        .iter()
        .zip(centers_gt)
        .filter(|(p, g)| (p.0 - g.0).hypot(p.1 - g.1) <= radius_px)
        .count();
    Ok(hits as f64 / centers_pred.len() as f64)
}

pub fn mean_iou(ious: &[f64]) -> Result<f64> {
    if ious.is_empty() {
        return Err(Error::InvalidArgument("mean of an empty list".into()));
    }
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}
