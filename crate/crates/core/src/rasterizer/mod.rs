//! Tile-based forward rasterization with alpha blending, auxiliary channels
//! (depth, accumulated alpha, actor alpha, sky compositing) and the backward
//! pass in [`backward`].
//!
//! The per-pixel blending kernel is a single function shared by the tiled
//! path and the brute-force oracle, so the two can only differ in binning,
//! culling and sort structure.

pub mod backward;

use nalgebra::{Matrix2, Vector2, Vector3};
use rayon::prelude::*;

use crate::img::{ImagePlane, ImageRgb};

pub const TILE_SIZE: usize = 16;
/// Per-splat alpha ceiling.
pub const ALPHA_CLAMP: f64 = 0.99;
/// Contributions below this alpha are skipped.
pub const ALPHA_SKIP: f64 = 1.0 / 255.0;
/// Blending stops once transmittance falls below this.
pub const STOP_TRANSMITTANCE: f64 = 1e-4;
/// Pixels with less accumulated alpha report depth 0.
pub const DEPTH_ACC_EPS: f64 = 1e-6;

/// Who a splat belongs to; used for the actor-alpha channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplatTag {
    Background,
    Actor(u32),
}

/// A projected splat ready for blending. `opacity` is already in (0,1).
#[derive(Debug, Clone)]
pub struct Splat {
    pub center: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    pub color: Vector3<f64>,
    pub opacity: f64,
    pub tag: SplatTag,
}

/// Splat data preprocessed for pixel evaluation (conic = inverse cov2d).
#[derive(Debug, Clone)]
pub struct PrepSplat {
    pub center: Vector2<f64>,
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub color: Vector3<f64>,
    pub opacity: f64,
    pub is_actor: bool,
}

pub fn prep_splats(splats: &[Splat]) -> Vec<PrepSplat> {
    splats
        .iter()
        .map(|s| {
            let det = s.cov2d[(0, 0)] * s.cov2d[(1, 1)] - s.cov2d[(0, 1)] * s.cov2d[(1, 0)];
            let conic = Matrix2::new(
                s.cov2d[(1, 1)] / det,
                -s.cov2d[(0, 1)] / det,
                -s.cov2d[(1, 0)] / det,
                s.cov2d[(0, 0)] / det,
            );
            PrepSplat {
                center: s.center,
                conic,
                depth: s.depth,
                color: s.color,
                opacity: s.opacity,
                is_actor: matches!(s.tag, SplatTag::Actor(_)),
            }
        })
        .collect()
}

/// Mahalanobis-distance cutoff (in units of d^T cov^-1 d) that the tile
/// extent must cover. At least the 3-sigma ellipse, and wide enough that
/// everything outside falls below [`ALPHA_SKIP`], so tile culling never
/// drops a contribution the pixel kernel would keep.
pub fn cull_qmax(opacity: f64) -> f64 {
    let t = opacity / ALPHA_SKIP;
    let q = if t > 1.0 { 2.0 * t.ln() + 1e-9 } else { 0.0 };
    q.max(9.0)
}

/// Per-tile splat index lists, depth-ascending, ties in input order.
#[derive(Debug, Clone)]
pub struct TileBins {
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub lists: Vec<Vec<u32>>,
}

/// Bin splats into the tiles their cull extent overlaps and depth-sort each
/// tile list (stable).
pub fn bin_and_sort(splats: &[Splat], width: usize, height: usize) -> TileBins {
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];

    for (i, s) in splats.iter().enumerate() {
        let q = cull_qmax(s.opacity);
        // Bounding box of the ellipse d^T cov^-1 d = q.
        let hx = (q * s.cov2d[(0, 0)]).max(0.0).sqrt();
        let hy = (q * s.cov2d[(1, 1)]).max(0.0).sqrt();
        if !hx.is_finite() || !hy.is_finite() {
            continue;
        }
        let x0 = ((s.center.x - hx) / TILE_SIZE as f64).floor();
        let x1 = ((s.center.x + hx) / TILE_SIZE as f64).floor();
        let y0 = ((s.center.y - hy) / TILE_SIZE as f64).floor();
        let y1 = ((s.center.y + hy) / TILE_SIZE as f64).floor();
        if x1 < 0.0 || y1 < 0.0 || x0 >= tiles_x as f64 || y0 >= tiles_y as f64 {
            continue;
        }
        let x0 = (x0.max(0.0)) as usize;
        let y0 = (y0.max(0.0)) as usize;
        let x1 = (x1 as usize).min(tiles_x - 1);
        let y1 = (y1 as usize).min(tiles_y - 1);
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                lists[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    for list in &mut lists {
        // Stable: equal depths keep input order.
        list.sort_by(|&a, &b| {
            splats[a as usize]
                .depth
                .partial_cmp(&splats[b as usize].depth)
                .unwrap()
        });
    }
    TileBins {
        tiles_x,
        tiles_y,
        lists,
    }
}

/// Result of blending one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelBlend {
    pub rgb: Vector3<f64>,
    pub acc_alpha: f64,
    pub actor_alpha: f64,
    pub depth: f64,
}

#[inline]
pub fn splat_alpha(s: &PrepSplat, px: f64, py: f64) -> f64 {
    let d = Vector2::new(px - s.center.x, py - s.center.y);
    let q = s.conic[(0, 0)] * d.x * d.x
        + (s.conic[(0, 1)] + s.conic[(1, 0)]) * d.x * d.y
        + s.conic[(1, 1)] * d.y * d.y;
    if q < 0.0 {
        return 0.0;
    }
    (s.opacity * (-0.5 * q).exp()).min(ALPHA_CLAMP)
}

/// Front-to-back alpha blending of depth-ordered splats at pixel center
/// `(px, py)`, compositing `background` with the residual transmittance.
pub fn alpha_blend_pixel<I>(
    ordered: I,
    prep: &[PrepSplat],
    px: f64,
    py: f64,
    background: &Vector3<f64>,
) -> PixelBlend
where
    I: IntoIterator<Item = u32>,
{
    let mut t = 1.0;
    let mut rgb = Vector3::zeros();
    let mut acc = 0.0;
    let mut actor = 0.0;
    let mut depth_raw = 0.0;
    for idx in ordered {
        let s = &prep[idx as usize];
        let alpha = splat_alpha(s, px, py);
        if alpha < ALPHA_SKIP {
            continue;
        }
        let w = alpha * t;
        rgb += s.color * w;
        acc += w;
        if s.is_actor {
            actor += w;
        }
        depth_raw += s.depth * w;
        t *= 1.0 - alpha;
        if t < STOP_TRANSMITTANCE {
            break;
        }
    }
    rgb += background * t;
    let depth = if acc < DEPTH_ACC_EPS {
        0.0
    } else {
        depth_raw / acc
    };
    PixelBlend {
        rgb,
        acc_alpha: acc,
        actor_alpha: actor,
        depth,
    }
}

/// Raw rasterizer output channels (before global image refinement).
#[derive(Debug, Clone, PartialEq)]
pub struct RasterOutput {
    pub rgb: ImageRgb,
    pub depth: ImagePlane,
    pub acc_alpha: ImagePlane,
    pub actor_alpha: ImagePlane,
}

/// Forward state the backward pass re-traverses.
pub struct RasterCache {
    pub prep: Vec<PrepSplat>,
    pub bins: TileBins,
    pub sky: ImageRgb,
    pub width: usize,
    pub height: usize,
}

/// Tiled forward rasterization. `background` maps pixel coordinates to the
/// sky color behind all splats.
pub fn rasterize_forward<F>(
    splats: &[Splat],
    width: usize,
    height: usize,
    background: F,
) -> (RasterOutput, RasterCache)
where
    F: Fn(usize, usize) -> Vector3<f64> + Sync,
{
    let prep = prep_splats(splats);
    let bins = bin_and_sort(splats, width, height);

    let mut sky = ImageRgb::zeros(width, height);
    sky.data
        .par_iter_mut()
        .enumerate()
        .for_each(|(i, px)| *px = background(i % width, i / width));

    let mut out = RasterOutput {
        rgb: ImageRgb::zeros(width, height),
        depth: ImagePlane::zeros(width, height),
        acc_alpha: ImagePlane::zeros(width, height),
        actor_alpha: ImagePlane::zeros(width, height),
    };

    let tiles: Vec<(usize, TilePixels)> = (0..bins.lists.len())
        .into_par_iter()
        .map(|tile| {
            let list = &bins.lists[tile];
            let (x0, y0, x1, y1) = tile_rect(&bins, tile, width, height);
            let mut px_out = TilePixels::new(x1 - x0, y1 - y0);
            for y in y0..y1 {
                for x in x0..x1 {
                    let b = alpha_blend_pixel(
                        list.iter().copied(),
                        &prep,
                        x as f64 + 0.5,
                        y as f64 + 0.5,
                        &sky.at(x, y),
                    );
                    px_out.push(b);
                }
            }
            (tile, px_out)
        })
        .collect();

    for (tile, px_out) in tiles {
        let (x0, y0, x1, y1) = tile_rect(&bins, tile, width, height);
        let mut k = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let b = &px_out.blends[k];
                k += 1;
                *out.rgb.at_mut(x, y) = b.rgb;
                *out.depth.at_mut(x, y) = b.depth;
                *out.acc_alpha.at_mut(x, y) = b.acc_alpha;
                *out.actor_alpha.at_mut(x, y) = b.actor_alpha;
            }
        }
    }

    (
        out,
        RasterCache {
            prep,
            bins,
            sky,
            width,
            height,
        },
    )
}

pub(crate) fn tile_rect(
    bins: &TileBins,
    tile: usize,
    width: usize,
    height: usize,
) -> (usize, usize, usize, usize) {
    let tx = tile % bins.tiles_x;
    let ty = tile / bins.tiles_x;
    let x0 = tx * TILE_SIZE;
    let y0 = ty * TILE_SIZE;
    (x0, y0, (x0 + TILE_SIZE).min(width), (y0 + TILE_SIZE).min(height))
}

struct TilePixels {
    blends: Vec<PixelBlend>,
}

impl TilePixels {
    fn new(w: usize, h: usize) -> Self {
        TilePixels {
            blends: Vec::with_capacity(w * h),
        }
    }
    fn push(&mut self, b: PixelBlend) {
        self.blends.push(b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn plain_splat(cx: f64, cy: f64, depth: f64, opacity: f64) -> Splat {
        Splat {
            center: Vector2::new(cx, cy),
            cov2d: Matrix2::identity(),
            depth,
            color: Vector3::new(1.0, 0.0, 0.0),
            opacity,
            tag: SplatTag::Background,
        }
    }

    /// A splat whose 3-sigma footprint is about `r_px` pixels.
    fn sized_splat(cx: f64, cy: f64, r_px: f64, opacity: f64) -> Splat {
        let sigma = r_px / 3.0;
        let mut s = plain_splat(cx, cy, 1.0, opacity);
        s.cov2d = Matrix2::identity() * sigma * sigma;
        s
    }

    #[test]
    fn bin_interior_splat_single_tile() {
        // Low opacity keeps the cull extent at exactly 3 sigma = 1 px.
        let s = sized_splat(8.0, 8.0, 1.0, 0.2);
        let bins = bin_and_sort(&[s], 32, 32);
        let populated: Vec<_> = bins
            .lists
            .iter()
            .enumerate()
            .filter(|(_, l)| !l.is_empty())
            .map(|(i, _)| i)
            .collect();
        assert_eq!(populated, vec![0]);
    }

    #[test]
    fn bin_corner_splat_four_tiles() {
        let s = sized_splat(16.0, 16.0, 2.0, 0.2);
        let bins = bin_and_sort(&[s], 32, 32);
        let populated = bins.lists.iter().filter(|l| !l.is_empty()).count();
        assert_eq!(populated, 4);
    }

    #[test]
    fn bin_equal_depth_keeps_input_order() {
        let a = sized_splat(8.0, 8.0, 3.0, 0.5);
        let b = sized_splat(9.0, 8.0, 3.0, 0.5);
        let bins = bin_and_sort(&[a, b], 16, 16);
        assert_eq!(bins.lists[0], vec![0, 1]);
    }

    #[test]
    fn blend_single_opaque_splat_clamps() {
        // Opacity 1 pre-clamp; at the center alpha clamps to 0.99.
        let mut s = plain_splat(4.5, 4.5, 2.0, 1.0);
        s.cov2d = Matrix2::identity() * 1e6; // flat profile
        let prep = prep_splats(&[s]);
        let b = alpha_blend_pixel([0u32], &prep, 4.5, 4.5, &Vector3::zeros());
        assert_relative_eq!(b.rgb.x, 0.99, epsilon = 1e-9);
        assert_relative_eq!(b.acc_alpha, 0.99, epsilon = 1e-9);
    }

    #[test]
    fn blend_two_half_splats() {
        let mut s1 = plain_splat(4.5, 4.5, 1.0, 0.5);
        s1.cov2d = Matrix2::identity() * 1e9;
        s1.color = Vector3::new(1.0, 0.0, 0.0);
        let mut s2 = s1.clone();
        s2.depth = 2.0;
        s2.color = Vector3::new(0.0, 1.0, 0.0);
        let prep = prep_splats(&[s1, s2]);
        let b = alpha_blend_pixel([0u32, 1u32], &prep, 4.5, 4.5, &Vector3::zeros());
        assert_relative_eq!(b.rgb.x, 0.5, epsilon = 1e-9);
        assert_relative_eq!(b.rgb.y, 0.25, epsilon = 1e-9);
        assert_relative_eq!(b.acc_alpha, 0.75, epsilon = 1e-9);
    }

    #[test]
    fn blend_empty_returns_background() {
        let prep: Vec<PrepSplat> = Vec::new();
        let bg = Vector3::new(0.2, 0.4, 0.6);
        let b = alpha_blend_pixel(std::iter::empty(), &prep, 0.5, 0.5, &bg);
        assert_eq!(b.rgb, bg);
        assert_eq!(b.acc_alpha, 0.0);
        assert_eq!(b.depth, 0.0);
    }

    #[test]
    fn forward_zero_opacity_gives_background() {
        let splats: Vec<Splat> = (0..10)
            .map(|i| {
                let mut s = sized_splat(8.0 + i as f64, 8.0, 4.0, 0.0);
                s.opacity = 0.0; // sigmoid(-inf)
                s
            })
            .collect();
        let bg = Vector3::new(0.1, 0.2, 0.3);
        let (out, _) = rasterize_forward(&splats, 32, 32, |_, _| bg);
        for p in &out.rgb.data {
            assert_relative_eq!(*p, bg, epsilon = 1e-12);
        }
        assert!(out.acc_alpha.data.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn transmittance_telescoping() {
        // acc + prod(1 - alpha_i) = 1 over the processed prefix.
        let splats: Vec<Splat> = (0..6)
            .map(|i| {
                let mut s = sized_splat(10.0 + 0.3 * i as f64, 10.0, 6.0, 0.6);
                s.depth = 1.0 + i as f64;
                s
            })
            .collect();
        let prep = prep_splats(&splats);
        for (px, py) in [(10.2, 10.1), (11.0, 9.5), (8.0, 10.0)] {
            let b = alpha_blend_pixel(0..6u32, &prep, px, py, &Vector3::zeros());
            let mut t = 1.0;
            for s in &prep {
                let a = splat_alpha(s, px, py);
                if a < ALPHA_SKIP {
                    continue;
                }
                t *= 1.0 - a;
                if t < STOP_TRANSMITTANCE {
                    break;
                }
            }
            assert_relative_eq!(b.acc_alpha + t, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn opacity_monotonicity() {
        let mut splats: Vec<Splat> = (0..4)
            .map(|i| sized_splat(9.0 + 0.5 * i as f64, 9.0, 5.0, 0.3 + 0.1 * i as f64))
            .collect();
        let prep0 = prep_splats(&splats);
        let b0 = alpha_blend_pixel(0..4u32, &prep0, 9.3, 9.0, &Vector3::zeros());
        splats[2].opacity = 0.8;
        let prep1 = prep_splats(&splats);
        let b1 = alpha_blend_pixel(0..4u32, &prep1, 9.3, 9.0, &Vector3::zeros());
        assert!(b1.acc_alpha >= b0.acc_alpha - 1e-12);
    }
}
