//! Differentiable SSIM with an 11x11 Gaussian window (sigma 1.5), computed
//! over valid windows (no padding), averaged across pixels and channels.

use crate::error::{Error, Result};
use crate::img::{ImagePlane, ImageRgb};

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable valid-mode convolution with the Gaussian window.
fn conv_valid(src: &ImagePlane, k: &[f64; SSIM_WINDOW]) -> ImagePlane {
    let (w, h) = (src.width, src.height);
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut tmp = ImagePlane::zeros(ow, h);
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (u, kv) in k.iter().enumerate() {
                acc += kv * src.at(x + u, y);
            }
            *tmp.at_mut(x, y) = acc;
        }
    }
    let mut out = ImagePlane::zeros(ow, oh);
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (v, kv) in k.iter().enumerate() {
                acc += kv * tmp.at(x, y + v);
            }
            *out.at_mut(x, y) = acc;
        }
    }
    out
}

/// Adjoint of [`conv_valid`]: scatters gradients back to full resolution.
fn conv_valid_adjoint(g: &ImagePlane, w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> ImagePlane {
    let ow = g.width;
    let oh = g.height;
    let mut tmp = ImagePlane::zeros(ow, h);
    for y in 0..oh {
        for x in 0..ow {
            let gv = g.at(x, y);
            if gv == 0.0 {
                continue;
            }
            for (v, kv) in k.iter().enumerate() {
                *tmp.at_mut(x, y + v) += kv * gv;
            }
        }
    }
    let mut out = ImagePlane::zeros(w, h);
    for y in 0..h {
        for x in 0..ow {
            let gv = tmp.at(x, y);
            if gv == 0.0 {
                continue;
            }
            for (u, kv) in k.iter().enumerate() {
                *out.at_mut(x + u, y) += kv * gv;
            }
        }
    }
    out
}

fn channel_plane(img: &ImageRgb, ch: usize) -> ImagePlane {
    ImagePlane {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|p| p[ch]).collect(),
    }
}

/// Mean SSIM between two images. Fails if either dimension is smaller than
/// the 11-pixel window.
pub fn ssim(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    ssim_impl(a, b, false).map(|(v, _)| v)
}

/// Mean SSIM plus its gradient w.r.t. the first image.
pub fn ssim_with_grad(a: &ImageRgb, b: &ImageRgb) -> Result<(f64, ImageRgb)> {
    let (v, g) = ssim_impl(a, b, true)?;
    Ok((v, g.unwrap()))
}

fn ssim_impl(a: &ImageRgb, b: &ImageRgb, want_grad: bool) -> Result<(f64, Option<ImageRgb>)> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch("ssim image sizes differ".into()));
    }
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::DimensionMismatch(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            a.width, a.height
        )));
    }
    let k = gaussian_kernel();
    let (w, h) = (a.width, a.height);
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let n_total = (ow * oh * 3) as f64;

    let mut mean = 0.0;
    let mut grad = want_grad.then(|| ImageRgb::zeros(w, h));

    for ch in 0..3 {
        let x = channel_plane(a, ch);
        let y = channel_plane(b, ch);
        let x2 = ImagePlane {
            width: w,
            height: h,
            data: x.data.iter().map(|v| v * v).collect(),
        };
        let y2 = ImagePlane {
            width: w,
            height: h,
            data: y.data.iter().map(|v| v * v).collect(),
        };
        let xy = ImagePlane {
            width: w,
            height: h,
            data: x.data.iter().zip(&y.data).map(|(u, v)| u * v).collect(),
        };
        let mx = conv_valid(&x, &k);
        let my = conv_valid(&y, &k);
        let vx = conv_valid(&x2, &k);
        let vy = conv_valid(&y2, &k);
        let vxy = conv_valid(&xy, &k);

        let mut g_mx = ImagePlane::zeros(ow, oh);
        let mut g_vx = ImagePlane::zeros(ow, oh);
        let mut g_vxy = ImagePlane::zeros(ow, oh);

        for i in 0..ow * oh {
            let (mx, my) = (mx.data[i], my.data[i]);
            let a1 = 2.0 * mx * my + C1;
            let a2 = 2.0 * (vxy.data[i] - mx * my) + C2;
            let b1 = mx * mx + my * my + C1;
            let b2 = (vx.data[i] - mx * mx) + (vy.data[i] - my * my) + C2;
            let s = a1 * a2 / (b1 * b2);
            mean += s;
            if want_grad {
                let g = 1.0 / n_total;
                g_mx.data[i] = g
                    * ((2.0 * my * a2 - 2.0 * my * a1) / (b1 * b2)
                        - s * (2.0 * mx / b1 - 2.0 * mx / b2));
                g_vx.data[i] = g * (-s / b2);
                g_vxy.data[i] = g * (2.0 * a1 / (b1 * b2));
            }
        }

        if let Some(grad) = grad.as_mut() {
            let back_mx = conv_valid_adjoint(&g_mx, w, h, &k);
            let back_vx = conv_valid_adjoint(&g_vx, w, h, &k);
            let back_vxy = conv_valid_adjoint(&g_vxy, w, h, &k);
            for i in 0..w * h {
                grad.data[i][ch] =
                    back_mx.data[i] + 2.0 * x.data[i] * back_vx.data[i] + y.data[i] * back_vxy.data[i];
            }
        }
    }
    Ok((mean / n_total, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> ImageRgb {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = ImageRgb::zeros(w, h);
        for p in &mut img.data {
            *p = Vector3::new(rng.gen(), rng.gen(), rng.gen());
        }
        img
    }

    #[test]
    fn identical_images_score_one() {
        let img = random_image(16, 16, 1);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_images_closed_form() {
        let a = 0.3;
        let b = 0.7;
        let ia = ImageRgb::constant(16, 16, Vector3::new(a, a, a));
        let ib = ImageRgb::constant(16, 16, Vector3::new(b, b, b));
        let expect = (2.0 * a * b + C1) / (a * a + b * b + C1);
        assert!((ssim(&ia, &ib).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn symmetric() {
        let a = random_image(20, 14, 2);
        let b = random_image(20, 14, 3);
        let s1 = ssim(&a, &b).unwrap();
        let s2 = ssim(&b, &a).unwrap();
        assert!((s1 - s2).abs() < 1e-12);
    }

    #[test]
    fn too_small_rejected() {
        let a = random_image(8, 8, 4);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn ssim_gradcheck() {
        let a = random_image(16, 16, 5);
        let b = random_image(16, 16, 6);
        let (_, grad) = ssim_with_grad(&a, &b).unwrap();
        let h = 1e-5;
        let mut checked = 0;
        for i in (0..a.data.len()).step_by(17) {
            for ch in 0..3 {
                let mut ap = a.clone();
                let mut am = a.clone();
                ap.data[i][ch] += h;
                am.data[i][ch] -= h;
                let num = (ssim(&ap, &b).unwrap() - ssim(&am, &b).unwrap()) / (2.0 * h);
                let got = grad.data[i][ch];
                let rel = (got - num).abs() / got.abs().max(num.abs()).max(1e-8);
                assert!(rel < 1e-4, "pixel {i} ch {ch}: {got} vs {num}");
                checked += 1;
            }
        }
        assert!(checked > 30);
    }
}
