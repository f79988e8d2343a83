use super::colormap::COLORMAP;
use crate::tensor::Tensor;

fn lookup(t: f64) -> [u8; 3] {
    let t = if t.is_finite() {
        t.clamp(0.0, 1.0)
    } else {
        0.0
    };
    COLORMAP[(t * 255.0).round() as usize]
}

/// RGB bytes of an `[H, W]` disparity map, `d / max_disparity` through the
/// colormap.
pub fn colorize(disp: &Tensor, max_disparity: f64) -> Vec<u8> {
    disp.data()
        .iter()
        .flat_map(|&d| lookup(d / max_disparity))
        .collect()
}

/// Absolute error saturating at 3 px (the outlier threshold) through the
/// colormap; invalid pixels are black.
pub fn error_map(pred: &Tensor, gt: &Tensor, valid: &Tensor) -> Vec<u8> {
    pred.data()
        .iter()
        .zip(gt.data())
        .zip(valid.data())
        .flat_map(|((&p, &g), &v)| {
            if v != 0.0 {
                lookup((p - g).abs() / 3.0)
            } else {
                [0, 0, 0]
            }
        })
        .collect()
}
