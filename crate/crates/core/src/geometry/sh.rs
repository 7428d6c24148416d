//! Real spherical-harmonics color evaluation (degrees 0..=3) with the usual
//! splatting conventions: 0.5 offset and clamp at zero.

use nalgebra::Vector3;

pub const SH_C0: f64 = 0.28209479177387814;
const SH_C1: f64 = 0.4886025119029199;
const SH_C2: [f64; 5] = [
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
];
const SH_C3: [f64; 7] = [
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
];

pub const MAX_SH_DEGREE: usize = 3;

/// Number of SH coefficients per color channel for a degree.
pub const fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Map a [0,1] color channel to the DC coefficient and back.
pub fn channel_to_dc(c: f64) -> f64 {
    (c - 0.5) / SH_C0
}

/// Evaluate the real SH basis at a unit direction; entries beyond the degree
/// stay zero.
pub fn sh_basis(dir: &Vector3<f64>, degree: usize) -> [f64; 16] {
    let mut b = [0.0; 16];
    b[0] = SH_C0;
    if degree == 0 {
        return b;
    }
    let (x, y, z) = (dir.x, dir.y, dir.z);
    b[1] = -SH_C1 * y;
    b[2] = SH_C1 * z;
    b[3] = -SH_C1 * x;
    if degree == 1 {
        return b;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    b[4] = SH_C2[0] * xy;
    b[5] = SH_C2[1] * yz;
    b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
    b[7] = SH_C2[3] * xz;
    b[8] = SH_C2[4] * (xx - yy);
    if degree == 2 {
        return b;
    }
    b[9] = SH_C3[0] * y * (3.0 * xx - yy);
    b[10] = SH_C3[1] * xy * z;
    b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
    b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
    b[14] = SH_C3[5] * z * (xx - yy);
    b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
    b
}

/// Gradient of each basis entry w.r.t. the direction.
pub fn sh_basis_grad(dir: &Vector3<f64>, degree: usize) -> [Vector3<f64>; 16] {
    let mut g = [Vector3::zeros(); 16];
    if degree == 0 {
        return g;
    }
    let (x, y, z) = (dir.x, dir.y, dir.z);
    g[1] = Vector3::new(0.0, -SH_C1, 0.0);
    g[2] = Vector3::new(0.0, 0.0, SH_C1);
    g[3] = Vector3::new(-SH_C1, 0.0, 0.0);
    if degree == 1 {
        return g;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    g[4] = SH_C2[0] * Vector3::new(y, x, 0.0);
    g[5] = SH_C2[1] * Vector3::new(0.0, z, y);
    g[6] = SH_C2[2] * Vector3::new(-2.0 * x, -2.0 * y, 4.0 * z);
    g[7] = SH_C2[3] * Vector3::new(z, 0.0, x);
    g[8] = SH_C2[4] * Vector3::new(2.0 * x, -2.0 * y, 0.0);
    if degree == 2 {
        return g;
    }
    g[9] = SH_C3[0] * Vector3::new(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0);
    g[10] = SH_C3[1] * Vector3::new(y * z, x * z, x * y);
    g[11] = SH_C3[2] * Vector3::new(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z);
    g[12] = SH_C3[3] * Vector3::new(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy);
    g[13] = SH_C3[4] * Vector3::new(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z);
    g[14] = SH_C3[5] * Vector3::new(2.0 * x * z, -2.0 * y * z, xx - yy);
    g[15] = SH_C3[6] * Vector3::new(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0);
    g
}

/// Per-channel clamp state kept for the backward pass.
#[derive(Debug, Clone, Copy)]
pub struct ShCache {
    pub clamped: [bool; 3],
}

/// c = max(0.5 + Σ_b Y_b(dir)·h_b, 0) per channel.
///
/// `coeffs` holds one RGB vector per basis entry (band-major).
pub fn eval_sh_color(
    coeffs: &[Vector3<f64>],
    dir: &Vector3<f64>,
    degree: usize,
) -> (Vector3<f64>, ShCache) {
    let basis = sh_basis(dir, degree);
    let mut c = Vector3::new(0.5, 0.5, 0.5);
    for (b, h) in basis.iter().zip(coeffs.iter()) {
        c += *h * *b;
    }
    let clamped = [c.x < 0.0, c.y < 0.0, c.z < 0.0];
    (c.map(|v| v.max(0.0)), ShCache { clamped })
}

/// Backward of [`eval_sh_color`]: accumulates into `d_coeffs` and returns
/// `dL/ddir`.
pub fn eval_sh_color_vjp(
    coeffs: &[Vector3<f64>],
    dir: &Vector3<f64>,
    degree: usize,
    cache: &ShCache,
    d_color: &Vector3<f64>,
    d_coeffs: &mut [Vector3<f64>],
) -> Vector3<f64> {
    let mut up = *d_color;
    for ch in 0..3 {
        if cache.clamped[ch] {
            up[ch] = 0.0;
        }
    }
    let basis = sh_basis(dir, degree);
    let basis_g = sh_basis_grad(dir, degree);
    let n = coeff_count(degree);
    let mut d_dir = Vector3::zeros();
    for b in 0..n {
        d_coeffs[b] += up * basis[b];
        d_dir += basis_g[b] * coeffs[b].dot(&up);
    }
    d_dir
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_coeffs_give_gray() {
        let coeffs = vec![Vector3::zeros(); 4];
        let dir = Vector3::new(0.0, 0.0, 1.0);
        let (c, _) = eval_sh_color(&coeffs, &dir, 1);
        assert_relative_eq!(c, Vector3::new(0.5, 0.5, 0.5));
    }

    #[test]
    fn dc_band_closed_form() {
        let k = 0.7;
        let coeffs = vec![Vector3::new(k, k, k)];
        let dir = Vector3::new(0.3, -0.5, 0.81).normalize();
        let (c, _) = eval_sh_color(&coeffs, &dir, 0);
        let expected = 0.5 + SH_C0 * k;
        assert_relative_eq!(c.x, expected, epsilon = 1e-12);
        assert_relative_eq!(c.y, expected, epsilon = 1e-12);
    }

    #[test]
    fn degree0_is_view_independent() {
        let coeffs = vec![Vector3::new(0.2, -0.4, 0.9)];
        let d1 = Vector3::new(1.0, 0.0, 0.0);
        let d2 = Vector3::new(0.0, -1.0, 0.0);
        assert_eq!(
            eval_sh_color(&coeffs, &d1, 0).0,
            eval_sh_color(&coeffs, &d2, 0).0
        );
    }

    #[test]
    fn clamp_blocks_gradient() {
        // Large negative DC drives the channel below zero.
        let coeffs = vec![Vector3::new(-10.0, 0.1, 0.1)];
        let dir = Vector3::new(0.0, 0.0, 1.0);
        let (c, cache) = eval_sh_color(&coeffs, &dir, 0);
        assert_eq!(c.x, 0.0);
        let mut d = vec![Vector3::zeros(); 1];
        eval_sh_color_vjp(
            &coeffs,
            &dir,
            0,
            &cache,
            &Vector3::new(1.0, 1.0, 1.0),
            &mut d,
        );
        assert_eq!(d[0].x, 0.0);
        assert!(d[0].y > 0.0);
    }

    #[test]
    fn sh_gradcheck_degree3() {
        let dir = Vector3::new(0.4, -0.6, 0.69282).normalize();
        let n = coeff_count(3);
        let mut coeffs = Vec::new();
        for i in 0..n {
            let t = i as f64 * 0.13;
            coeffs.push(Vector3::new(0.3 * t.sin(), 0.2 * t.cos(), 0.1 * t));
        }
        let w = Vector3::new(0.5, -0.7, 0.9);
        let f = |coeffs: &[Vector3<f64>], dir: &Vector3<f64>| {
            eval_sh_color(coeffs, dir, 3).0.dot(&w)
        };

        let (_, cache) = eval_sh_color(&coeffs, &dir, 3);
        let mut d_coeffs = vec![Vector3::zeros(); n];
        let d_dir = eval_sh_color_vjp(&coeffs, &dir, 3, &cache, &w, &mut d_coeffs);

        let h = 1e-6;
        for b in 0..n {
            for ch in 0..3 {
                let mut cp = coeffs.clone();
                let mut cm = coeffs.clone();
                cp[b][ch] += h;
                cm[b][ch] -= h;
                let num = (f(&cp, &dir) - f(&cm, &dir)) / (2.0 * h);
                assert_relative_eq!(d_coeffs[b][ch], num, max_relative = 1e-6, epsilon = 1e-10);
            }
        }
        // Direction gradient on the raw (unnormalized-input) basis.
        for i in 0..3 {
            let mut dp = dir;
            let mut dm = dir;
            dp[i] += h;
            dm[i] -= h;
            let num = (f(&coeffs, &dp) - f(&coeffs, &dm)) / (2.0 * h);
            assert_relative_eq!(d_dir[i], num, max_relative = 1e-5, epsilon = 1e-9);
        }
    }
}
