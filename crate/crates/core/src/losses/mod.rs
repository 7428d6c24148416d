//! Training objective and image-quality metrics.
//!
//! L = (1-λ1)·L_rgb + λ1·L_ssim + λ2·L_depth + λ3·L_sky + λ4·L_actor
//! with per-term gradients for the render outputs. Terms whose supervision
//! is absent are skipped and reported as `None`.

pub mod ssim;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::{ImagePlane, ImageRgb};

pub use ssim::{ssim, ssim_with_grad, SSIM_WINDOW};

const PROB_EPS: f64 = 1e-6;

/// L1 subgradient with sign(0) = 0 (f64::signum maps 0.0 to 1.0).
#[inline]
fn l1_sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Loss term weights.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// λ1: D-SSIM share of the photometric loss.
    pub lambda_ssim: f64,
    /// λ2: depth supervision.
    pub lambda_depth: f64,
    /// λ3: sky mask binary cross-entropy.
    pub lambda_sky: f64,
    /// λ4: actor alpha entropy.
    pub lambda_actor: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_ssim: 0.2,
            lambda_depth: 0.01,
            lambda_sky: 0.05,
            lambda_actor: 0.1,
        }
    }
}

/// Ground-truth signals for one frame. Depth pixels with value 0 are invalid;
/// sky mask is 1.0 where the pixel is sky.
pub struct LossTargets<'a> {
    pub image: &'a ImageRgb,
    pub depth: Option<&'a ImagePlane>,
    pub sky_mask: Option<&'a ImagePlane>,
    /// Whether the scene contains dynamic actors (enables the entropy term).
    pub has_actors: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default)]
pub struct LossTerms {
    pub total: f64,
    pub rgb: f64,
    pub ssim: Option<f64>,
    pub depth: Option<f64>,
    pub sky: Option<f64>,
    pub actor: Option<f64>,
}

/// Gradients w.r.t. the render outputs the loss consumed.
pub struct LossGrads {
    pub d_rgb: ImageRgb,
    pub d_depth: ImagePlane,
    pub d_acc: ImagePlane,
    pub d_actor: ImagePlane,
}

/// Full training objective with gradients.
///
/// `rgb` is the refined (unclamped) image; `depth`, `acc_alpha` and
/// `actor_alpha` are the rasterizer channels.
pub fn loss_total(
    rgb: &ImageRgb,
    depth: &ImagePlane,
    acc_alpha: &ImagePlane,
    actor_alpha: &ImagePlane,
    targets: &LossTargets,
    w: &LossWeights,
) -> Result<(LossTerms, LossGrads)> {
    let gt = targets.image;
    if rgb.width != gt.width || rgb.height != gt.height {
        return Err(Error::DimensionMismatch(format!(
            "render {}x{} vs ground truth {}x{}",
            rgb.width, rgb.height, gt.width, gt.height
        )));
    }
    let n_px = (rgb.width * rgb.height) as f64;
    let mut grads = LossGrads {
        d_rgb: ImageRgb::zeros(rgb.width, rgb.height),
        d_depth: ImagePlane::zeros(rgb.width, rgb.height),
        d_acc: ImagePlane::zeros(rgb.width, rgb.height),
        d_actor: ImagePlane::zeros(rgb.width, rgb.height),
    };
    let mut terms = LossTerms::default();

    // L1 photometric term.
    let w_rgb = 1.0 - w.lambda_ssim;
    let mut l1 = 0.0;
    for (i, (p, g)) in rgb.data.iter().zip(&gt.data).enumerate() {
        let d = p - g;
        l1 += d.abs().sum();
        grads.d_rgb.data[i] += d.map(l1_sign) * (w_rgb / (n_px * 3.0));
    }
    terms.rgb = l1 / (n_px * 3.0);
    terms.total += w_rgb * terms.rgb;

    // D-SSIM term; skipped on images smaller than the window.
    if rgb.width >= SSIM_WINDOW && rgb.height >= SSIM_WINDOW {
        let (s, ds) = ssim_with_grad(rgb, gt)?;
        terms.ssim = Some(1.0 - s);
        terms.total += w.lambda_ssim * (1.0 - s);
        for (gp, dp) in grads.d_rgb.data.iter_mut().zip(&ds.data) {
            *gp -= dp * w.lambda_ssim;
        }
    }

    // Depth L1 over valid ground-truth pixels.
    if let Some(gt_depth) = targets.depth {
        let valid: Vec<usize> = (0..gt_depth.data.len())
            .filter(|&i| gt_depth.data[i] > 0.0)
            .collect();
        if !valid.is_empty() {
            let n = valid.len() as f64;
            let mut l = 0.0;
            for &i in &valid {
                let d = depth.data[i] - gt_depth.data[i];
                l += d.abs();
                grads.d_depth.data[i] += l1_sign(d) * w.lambda_depth / n;
            }
            terms.depth = Some(l / n);
            terms.total += w.lambda_depth * l / n;
        }
    }

    // Sky binary cross-entropy on the rendered sky probability 1 - acc.
    if let Some(mask) = targets.sky_mask {
        let mut l = 0.0;
        for i in 0..mask.data.len() {
            let m = mask.data[i];
            let p_raw = 1.0 - acc_alpha.data[i];
            let p = p_raw.clamp(PROB_EPS, 1.0 - PROB_EPS);
            l += -(m * p.ln() + (1.0 - m) * (1.0 - p).ln());
            if p_raw > PROB_EPS && p_raw < 1.0 - PROB_EPS {
                let dp = -m / p + (1.0 - m) / (1.0 - p);
                // p = 1 - acc.
                grads.d_acc.data[i] += -dp * w.lambda_sky / n_px;
            }
        }
        terms.sky = Some(l / n_px);
        terms.total += w.lambda_sky * l / n_px;
    }

    // Actor alpha binary entropy pushes the decomposition toward 0/1.
    if targets.has_actors {
        let mut l = 0.0;
        for i in 0..actor_alpha.data.len() {
            let a_raw = actor_alpha.data[i];
            let a = a_raw.clamp(PROB_EPS, 1.0 - PROB_EPS);
            l += -(a * a.ln() + (1.0 - a) * (1.0 - a).ln());
            if a_raw > PROB_EPS && a_raw < 1.0 - PROB_EPS {
                grads.d_actor.data[i] += -(a.ln() - (1.0 - a).ln()) * w.lambda_actor / n_px;
            }
        }
        terms.actor = Some(l / n_px);
        terms.total += w.lambda_actor * l / n_px;
    }

    Ok((terms, grads))
}

/// 10·log10(1/MSE) for images in [0,1]; +inf when the images are identical.
pub fn psnr(img: &ImageRgb, gt: &ImageRgb) -> f64 {
    let mse = img.mse(gt);
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// PSNR restricted to masked pixels; `None` when the mask is empty.
pub fn psnr_masked(img: &ImageRgb, gt: &ImageRgb, mask: &[bool]) -> Option<f64> {
    assert_eq!(mask.len(), img.data.len());
    let mut se = 0.0;
    let mut n = 0usize;
    for i in 0..mask.len() {
        if mask[i] {
            se += (img.data[i] - gt.data[i]).norm_squared();
            n += 1;
        }
    }
    if n == 0 {
        return None;
    }
    let mse = se / (n * 3) as f64;
    Some(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}
