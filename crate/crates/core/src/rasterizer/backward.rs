//! Backward pass of the tile rasterizer.
//!
//! Blending is recomputed per pixel (front-to-back, then a reverse sweep with
//! suffix accumulators) instead of storing per-pixel chains. Per-tile gradient
//! contributions are reduced in tile order afterwards, which keeps the result
//! bitwise deterministic under any thread count.

use nalgebra::{Matrix2, Vector2, Vector3};
use rayon::prelude::*;

use super::{
    splat_alpha, tile_rect, RasterCache, ALPHA_CLAMP, ALPHA_SKIP, DEPTH_ACC_EPS,
    STOP_TRANSMITTANCE,
};
use crate::img::{ImagePlane, ImageRgb};

/// Upstream gradients for every rasterizer output channel.
pub struct RasterUpstream<'a> {
    pub d_rgb: &'a ImageRgb,
    pub d_depth: &'a ImagePlane,
    pub d_acc: &'a ImagePlane,
    pub d_actor: &'a ImagePlane,
}

/// Per-splat gradients produced by the backward pass.
#[derive(Debug, Clone)]
pub struct SplatGrads {
    pub d_color: Vec<Vector3<f64>>,
    pub d_center: Vec<Vector2<f64>>,
    pub d_cov2d: Vec<Matrix2<f64>>,
    /// Gradient w.r.t. opacity in sigmoid space.
    pub d_opacity: Vec<f64>,
    pub d_depth: Vec<f64>,
}

impl SplatGrads {
    fn zeros(n: usize) -> Self {
        SplatGrads {
            d_color: vec![Vector3::zeros(); n],
            d_center: vec![Vector2::zeros(); n],
            d_cov2d: vec![Matrix2::zeros(); n],
            d_opacity: vec![0.0; n],
            d_depth: vec![0.0; n],
        }
    }
}

#[derive(Clone, Copy)]
struct LocalGrad {
    d_color: Vector3<f64>,
    d_center: Vector2<f64>,
    d_conic: Matrix2<f64>,
    d_opacity: f64,
    d_depth: f64,
}

impl LocalGrad {
    fn zero() -> Self {
        LocalGrad {
            d_color: Vector3::zeros(),
            d_center: Vector2::zeros(),
            d_conic: Matrix2::zeros(),
            d_opacity: 0.0,
            d_depth: 0.0,
        }
    }
}

/// Walks every pixel once, re-blending and pushing gradients back to the
/// splats and the sky image. Returns `(splat grads, d_sky)`.
pub fn rasterize_backward(cache: &RasterCache, up: &RasterUpstream) -> (SplatGrads, ImageRgb) {
    let n = cache.prep.len();
    let bins = &cache.bins;
    let (w, h) = (cache.width, cache.height);

    let tile_results: Vec<(Vec<LocalGrad>, Vec<Vector3<f64>>)> = (0..bins.lists.len())
        .into_par_iter()
        .map(|tile| backward_tile(cache, up, tile))
        .collect();

    let mut grads = SplatGrads::zeros(n);
    let mut d_sky = ImageRgb::zeros(w, h);
    for (tile, (local, sky_px)) in tile_results.into_iter().enumerate() {
        let list = &bins.lists[tile];
        for (k, g) in local.into_iter().enumerate() {
            let i = list[k] as usize;
            grads.d_color[i] += g.d_color;
            grads.d_center[i] += g.d_center;
            grads.d_cov2d[i] += g.d_conic; // conic-space for now
            grads.d_opacity[i] += g.d_opacity;
            grads.d_depth[i] += g.d_depth;
        }
        let (x0, y0, x1, y1) = tile_rect(bins, tile, w, h);
        let mut k = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                *d_sky.at_mut(x, y) = sky_px[k];
                k += 1;
            }
        }
    }

    // Convert accumulated conic-space gradients to cov2d space:
    // conic = cov^-1  =>  dL/dcov = -conic * dL/dconic * conic.
    for i in 0..n {
        let conic = cache.prep[i].conic;
        grads.d_cov2d[i] = -conic * grads.d_cov2d[i] * conic;
    }

    (grads, d_sky)
}

fn backward_tile(
    cache: &RasterCache,
    up: &RasterUpstream,
    tile: usize,
) -> (Vec<LocalGrad>, Vec<Vector3<f64>>) {
    let bins = &cache.bins;
    let list = &bins.lists[tile];
    let (x0, y0, x1, y1) = tile_rect(bins, tile, cache.width, cache.height);
    let mut local = vec![LocalGrad::zero(); list.len()];
    let mut sky_px = Vec::with_capacity((x1 - x0) * (y1 - y0));
    // (position in tile list, alpha, transmittance in front of splat)
    let mut chain: Vec<(usize, f64, f64)> = Vec::with_capacity(list.len());

    for y in y0..y1 {
        for x in x0..x1 {
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;

            chain.clear();
            let mut t = 1.0;
            let mut acc = 0.0;
            let mut draw = 0.0;
            for (k, &idx) in list.iter().enumerate() {
                let s = &cache.prep[idx as usize];
                let alpha = splat_alpha(s, px, py);
                if alpha < ALPHA_SKIP {
                    continue;
                }
                chain.push((k, alpha, t));
                let wgt = alpha * t;
                acc += wgt;
                draw += s.depth * wgt;
                t *= 1.0 - alpha;
                if t < STOP_TRANSMITTANCE {
                    break;
                }
            }
            let t_end = t;

            let g_c = up.d_rgb.at(x, y);
            let g_depth_out = up.d_depth.at(x, y);
            let g_actor = up.d_actor.at(x, y);
            let mut g_acc = up.d_acc.at(x, y);
            let g_draw = if acc < DEPTH_ACC_EPS {
                0.0
            } else {
                g_acc += g_depth_out * (-draw / (acc * acc));
                g_depth_out / acc
            };

            let sky = cache.sky.at(x, y);
            sky_px.push(g_c * t_end);
            // dC/d(T_end) path for the sky composite.
            let sky_term = g_c.dot(&sky) * t_end;

            // Reverse sweep with one combined suffix accumulator.
            let mut suffix = 0.0;
            for &(k, alpha, t_before) in chain.iter().rev() {
                let idx = list[k] as usize;
                let s = &cache.prep[idx as usize];
                let wgt = alpha * t_before;
                let u = g_c.dot(&s.color) + g_acc + if s.is_actor { g_actor } else { 0.0 }
                    + g_draw * s.depth;

                let g = &mut local[k];
                g.d_color += g_c * wgt;
                g.d_depth += g_draw * wgt;

                let g_alpha = u * t_before - (suffix + sky_term) / (1.0 - alpha);
                suffix += u * wgt;

                if alpha >= ALPHA_CLAMP {
                    continue; // clamped: flat in opacity and footprint
                }
                // alpha = opacity * exp(-q/2)
                let gexp = alpha / s.opacity;
                g.d_opacity += g_alpha * gexp;
                let g_q = -0.5 * alpha * g_alpha;
                let d = Vector2::new(px - s.center.x, py - s.center.y);
                g.d_conic += g_q * d * d.transpose();
                let grad_d = 2.0 * g_q * (s.conic * d);
                g.d_center -= grad_d;
            }
        }
    }
    (local, sky_px)
}
