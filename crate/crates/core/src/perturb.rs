//! Top-20% heatmap masking and the confidence-drop localization metric.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{softmax_confidence, Network};
use crate::tensor::Tensor;

/// Fraction of pixels kept by [`build_mask`].
pub const TOP_FRACTION: f64 = 0.20;

/// How heatmaps are scaled before masking; recorded in every report.
pub const HEATMAP_NORMALIZATION: &str = "min-max";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Mask {
    #[serde(skip)]
    pub values: Tensor,
    /// Threshold on the normalized heatmap (80th percentile).
    pub threshold: f64,
    /// Pixels with normalized value `>= threshold`.
    pub selected: usize,
    /// Selected pixels with a nonzero mask value.
    pub nonzero: usize,
    /// `ceil(0.2 * H * W)`.
    pub target: usize,
    /// Set when ties at the threshold (or a constant heatmap) make the
    /// selection differ from `target`.
    pub degenerate: bool,
}

/// Min-max normalizes to `[0, 1]`. A constant positive map becomes all ones
/// and a constant non-positive map all zeros.
pub fn normalize_heatmap(heatmap: &Tensor) -> Tensor {
    let (lo, hi) = (heatmap.min(), heatmap.max());
    if hi > lo {
        heatmap.map(|v| (v - lo) / (hi - lo))
    } else if hi > 0.0 {
        heatmap.map(|_| 1.0)
    } else {
        heatmap.map(|_| 0.0)
    }
}

/// Mask holding the normalized heatmap value on the top 20% of pixels and 0
/// elsewhere. Every pixel tied with the threshold is kept.
pub fn build_mask(heatmap: &Tensor) -> Result<Mask> {
    if heatmap.rank() != 2 {
        return Err(Error::InvalidShape {
            shape: heatmap.shape().to_vec(),
            reason: "heatmap must be H x W".into(),
        });
    }
    if heatmap.data().iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("heatmap must be finite and non-negative".into()));
    }
    let normalized = normalize_heatmap(heatmap);
    let threshold = normalized.percentile(100.0 * (1.0 - TOP_FRACTION))?;
    let values = normalized.map(|v| if v >= threshold { v } else { 0.0 });
    let selected = normalized.data().iter().filter(|&&v| v >= threshold).count();
    let nonzero = values.data().iter().filter(|&&v| v != 0.0).count();
    let target = (TOP_FRACTION * heatmap.len() as f64).ceil() as usize;
    Ok(Mask {
        values,
        threshold,
        selected,
        nonzero,
        target,
        degenerate: selected != target,
    })
}

/// `image * (1 - mask) + mean * mask`, per channel, in raw pixel space.
pub fn perturb_image(image: &Tensor, mask: &Tensor, mean: &[f64]) -> Result<Tensor> {
    let (c, h, w) = image.chw().ok_or_else(|| Error::InvalidShape {
        shape: image.shape().to_vec(),
        reason: "image must be C x H x W".into(),
    })?;
    if mask.shape() != [h, w] {
        return Err(Error::shape(mask.shape(), &[h, w]));
    }
    if mean.len() != c {
        return Err(Error::InvalidArgument(format!(
            "{} mean values for {c} channels",
            mean.len()
        )));
    }
    if mask.data().iter().any(|m| !(0.0..=1.0).contains(m)) {
        return Err(Error::InvalidArgument("mask values must lie in [0, 1]".into()));
    }
    let mut out = image.clone();
    for (ch, &mu) in mean.iter().enumerate() {
        for (v, &m) in out.channel_mut(ch).iter_mut().zip(mask.data()) {
            if m == 1.0 {
                *v = mu;
            } else if m != 0.0 {
                *v = *v * (1.0 - m) + mu * m;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerturbationResult {
    pub class: usize,
    pub mask: Mask,
    #[serde(skip)]
    pub perturbed_image: Tensor,
    pub confidence_before: f64,
    pub confidence_after: f64,
    /// `(P_before - P_after) / P_before`.
    pub drop: f64,
    pub heatmap_normalization: &'static str,
}

/// Masks the heatmap's top pixels toward the normalization mean and reports
/// the relative drop in class-`class` softmax confidence. `raw_image` is in
/// pixel space; both images are normalized before their forward passes.
pub fn confidence_drop(
    net: &Network,
    raw_image: &Tensor,
    heatmap: &Tensor,
    class: usize,
) -> Result<PerturbationResult> {
    net.check_class(class)?;
    let mask = build_mask(heatmap)?;
    let perturbed = perturb_image(raw_image, &mask.values, &net.normalization().mean)?;
    let before = net.forward(&net.normalize(raw_image)?)?;
    let after = net.forward(&net.normalize(&perturbed)?)?;
    let p_before = softmax_confidence(before.scores().data(), class);
    let p_after = softmax_confidence(after.scores().data(), class);
    Ok(PerturbationResult {
        class,
        mask,
        perturbed_image: perturbed,
        confidence_before: p_before,
        confidence_after: p_after,
        drop: (p_before - p_after) / p_before,
        heatmap_normalization: HEATMAP_NORMALIZATION,
    })
}

/// Random baseline heatmap: uniform noise at `low_res`, rectified and
/// upsampled with the same routine as CAM maps.
pub fn random_heatmap<R: Rng + ?Sized>(rng: &mut R, low_res: (usize, usize), out: (usize, usize)) -> Result<Tensor> {
    let (h, w) = low_res;
    let data = (0..h * w).map(|_| rng.gen::<f64>()).collect();
    Tensor::new(vec![h, w], data)?.upsample_bilinear(out)
}
