//! Local (per-Gaussian) and global (per-image) appearance refinement, plus
//! the novel-view embedding lookup.
//!
//! Local: (α^l, β^l) = D^l(concat(H(μ), ε, c_dc)), c' = (1 + raw_α) ⊙ c + β^l.
//! Global: (α^g, β^g) = D^g(concat(ε, φ)), C' = (I + raw) · C + β^g.
//! Both learners have zero-initialized output layers, so a fresh model is an
//! exact identity and renders match the unrefined pipeline bitwise.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::encoders::{lookup_embedding_row, EmbeddingTable, HashCache, HashGrid, Mlp, MlpCache, MlpGrads};
use crate::error::Result;
use crate::geometry::sh::SH_C0;
use crate::geometry::Camera;
use crate::img::ImageRgb;

/// Forward state of one local refinement pass.
pub struct LocalRefineCache {
    pub hash_caches: Vec<HashCache>,
    pub mlp_cache: MlpCache,
    /// 1 + raw_alpha per Gaussian.
    pub alpha: Vec<Vector3<f64>>,
    /// Input colors (the SH-evaluated per-Gaussian colors).
    pub base_colors: Vec<Vector3<f64>>,
    /// Clamp mask of the DC color feature.
    pub dc_clamped: Vec<[bool; 3]>,
}

/// Gradients produced by [`local_refine_backward`] besides the color path.
pub struct LocalRefineGrads {
    pub d_mlp: MlpGrads,
    pub d_embedding: Vec<f64>,
    pub d_hash_tables: Vec<Vec<f64>>,
    /// Gradient w.r.t. the DC SH coefficients via the feature input.
    pub d_dc_coeff: Vec<Vector3<f64>>,
    /// Gradient w.r.t. the unit-cube query positions via the hash encoding.
    pub d_positions_unit: Vec<Vector3<f64>>,
}

/// View-independent DC color feature: clamp(0.5 + C0 * h_dc, 0).
pub fn dc_color(h_dc: &Vector3<f64>) -> (Vector3<f64>, [bool; 3]) {
    let c = Vector3::new(0.5, 0.5, 0.5) + h_dc * SH_C0;
    let clamped = [c.x < 0.0, c.y < 0.0, c.z < 0.0];
    (c.map(|v: f64| v.max(0.0)), clamped)
}

/// Per-Gaussian affine color refinement over a batch of Gaussians.
///
/// `positions_unit` are world positions normalized into the scene AABB;
/// `h_dc` the DC SH coefficients; `colors` the SH-evaluated colors that enter
/// alpha blending. Returns the refined colors.
pub fn local_refine_forward(
    hash: &HashGrid,
    dl: &Mlp,
    embedding: &[f64],
    positions_unit: &[Vector3<f64>],
    h_dc: &[Vector3<f64>],
    colors: &[Vector3<f64>],
) -> Result<(Vec<Vector3<f64>>, LocalRefineCache)> {
    let n = positions_unit.len();
    let hash_dim = hash.out_dim();
    let in_dim = hash_dim + embedding.len() + 3;
    let mut x = DMatrix::zeros(in_dim, n);
    let mut hash_caches = Vec::with_capacity(n);
    let mut dc_clamped = Vec::with_capacity(n);
    for i in 0..n {
        let (feats, cache) = hash.encode(&positions_unit[i]);
        let (dc, clamped) = dc_color(&h_dc[i]);
        let mut col = x.column_mut(i);
        for (k, f) in feats.iter().enumerate() {
            col[k] = *f;
        }
        for (k, e) in embedding.iter().enumerate() {
            col[hash_dim + k] = *e;
        }
        for ch in 0..3 {
            col[hash_dim + embedding.len() + ch] = dc[ch];
        }
        hash_caches.push(cache);
        dc_clamped.push(clamped);
    }
    let (raw, mlp_cache) = dl.forward(&x)?;
    let mut refined = Vec::with_capacity(n);
    let mut alpha = Vec::with_capacity(n);
    for i in 0..n {
        let a = Vector3::new(1.0 + raw[(0, i)], 1.0 + raw[(1, i)], 1.0 + raw[(2, i)]);
        let b = Vector3::new(raw[(3, i)], raw[(4, i)], raw[(5, i)]);
        refined.push(a.component_mul(&colors[i]) + b);
        alpha.push(a);
    }
    Ok((
        refined,
        LocalRefineCache {
            hash_caches,
            mlp_cache,
            alpha,
            base_colors: colors.to_vec(),
            dc_clamped,
        },
    ))
}

/// Backward of [`local_refine_forward`]. Returns the gradient w.r.t. the
/// input colors and the parameter-side gradients.
pub fn local_refine_backward(
    hash: &HashGrid,
    dl: &Mlp,
    cache: &LocalRefineCache,
    d_refined: &[Vector3<f64>],
) -> (Vec<Vector3<f64>>, LocalRefineGrads) {
    let n = d_refined.len();
    let hash_dim = hash.out_dim();
    let embed_dim = dl.in_dim() - hash_dim - 3;
    let mut d_raw = DMatrix::zeros(6, n);
    let mut d_colors = Vec::with_capacity(n);
    for i in 0..n {
        let g = d_refined[i];
        // c' = a ⊙ c + b
        for ch in 0..3 {
            d_raw[(ch, i)] = g[ch] * cache.base_colors[i][ch];
            d_raw[(3 + ch, i)] = g[ch];
        }
        d_colors.push(g.component_mul(&cache.alpha[i]));
    }
    let (d_mlp, d_x) = dl.backward(&cache.mlp_cache, &d_raw);

    let mut d_hash_tables: Vec<Vec<f64>> = hash.tables.iter().map(|t| vec![0.0; t.len()]).collect();
    let mut d_embedding = vec![0.0; embed_dim];
    let mut d_dc_coeff = Vec::with_capacity(n);
    let mut d_positions_unit = Vec::with_capacity(n);
    let mut feat_buf = vec![0.0; hash_dim];
    for i in 0..n {
        let col = d_x.column(i);
        for k in 0..hash_dim {
            feat_buf[k] = col[k];
        }
        hash.encode_vjp(&cache.hash_caches[i], &feat_buf, &mut d_hash_tables);
        d_positions_unit.push(crate::encoders::hash_position_vjp(
            &hash.cfg,
            &hash.tables,
            &cache.hash_caches[i],
            &feat_buf,
        ));
        for k in 0..embed_dim {
            d_embedding[k] += col[hash_dim + k];
        }
        let mut d_dc = Vector3::zeros();
        for ch in 0..3 {
            if !cache.dc_clamped[i][ch] {
                // c_dc = 0.5 + C0 * h_dc.
                d_dc[ch] = col[hash_dim + embed_dim + ch] * SH_C0;
            }
        }
        d_dc_coeff.push(d_dc);
    }
    (
        d_colors,
        LocalRefineGrads {
            d_mlp,
            d_embedding,
            d_hash_tables,
            d_dc_coeff,
            d_positions_unit,
        },
    )
}

/// Camera viewpoint code φ: camera center and unit optical-axis direction.
pub fn camera_code(cam: &Camera) -> [f64; 6] {
    let c = cam.center();
    let d = cam.optical_axis();
    [c.x, c.y, c.z, d.x, d.y, d.z]
}

pub struct GlobalRefineCache {
    pub mlp_cache: MlpCache,
    /// I + raw matrix.
    pub alpha: Matrix3<f64>,
    pub input_image: ImageRgb,
}

pub struct GlobalRefineGrads {
    pub d_mlp: MlpGrads,
    pub d_embedding: Vec<f64>,
}

/// Image-level affine color refinement: per pixel C' = (I + raw)·C + β.
pub fn global_refine_forward(
    dg: &Mlp,
    embedding: &[f64],
    cam: &Camera,
    image: &ImageRgb,
) -> Result<(ImageRgb, GlobalRefineCache)> {
    let code = camera_code(cam);
    let mut x = DMatrix::zeros(embedding.len() + 6, 1);
    for (k, e) in embedding.iter().enumerate() {
        x[(k, 0)] = *e;
    }
    for k in 0..6 {
        x[(embedding.len() + k, 0)] = code[k];
    }
    let (raw, mlp_cache) = dg.forward(&x)?;
    let mut alpha = Matrix3::identity();
    for r in 0..3 {
        for c in 0..3 {
            alpha[(r, c)] += raw[(3 * r + c, 0)];
        }
    }
    let beta = Vector3::new(raw[(9, 0)], raw[(10, 0)], raw[(11, 0)]);
    let mut out = image.clone();
    for p in &mut out.data {
        *p = alpha * *p + beta;
    }
    Ok((
        out,
        GlobalRefineCache {
            mlp_cache,
            alpha,
            input_image: image.clone(),
        },
    ))
}

/// Backward of [`global_refine_forward`]; returns `dL/dC` per pixel.
pub fn global_refine_backward(
    dg: &Mlp,
    cache: &GlobalRefineCache,
    d_out: &ImageRgb,
) -> (ImageRgb, GlobalRefineGrads) {
    let mut d_raw = DMatrix::zeros(12, 1);
    let mut d_image = ImageRgb::zeros(d_out.width, d_out.height);
    let at = cache.alpha.transpose();
    for (i, g) in d_out.data.iter().enumerate() {
        let c = cache.input_image.data[i];
        for r in 0..3 {
            for col in 0..3 {
                d_raw[(3 * r + col, 0)] += g[r] * c[col];
            }
            d_raw[(9 + r, 0)] += g[r];
        }
        d_image.data[i] = at * g;
    }
    let (d_mlp, d_x) = dg.backward(&cache.mlp_cache, &d_raw);
    let embed_dim = dg.in_dim() - 6;
    let d_embedding = d_x.column(0).as_slice()[..embed_dim].to_vec();
    (
        d_image,
        GlobalRefineGrads {
            d_mlp,
            d_embedding,
        },
    )
}

/// Novel-view embedding choice: nearest training frame by camera index, then
/// timestamp (see [`lookup_embedding_row`]).
pub fn lookup_embedding<'t>(
    table: &'t EmbeddingTable,
    camera_index: u32,
    timestamp: f64,
) -> Result<(usize, &'t [f64])> {
    let row = lookup_embedding_row(&table.keys, camera_index, timestamp)?;
    Ok((row, table.row(row)))
}
