//! Learnable encoders: multiresolution hash grid, sinusoidal encodings,
//! MLP stacks, embedding tables and the Adam optimizer.

pub mod adam;
pub mod mlp;

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use adam::{exponential_lr, AdamParams, AdamState};
pub use mlp::{Mlp, MlpCache, MlpGrads};

use crate::error::{Error, Result};

const HASH_PRIMES: [u64; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HashGridConfig {
    pub levels: usize,
    pub features: usize,
    /// log2 of entries per level.
    pub log2_table_size: usize,
    pub base_resolution: usize,
    pub growth_factor: f64,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        HashGridConfig {
            levels: 8,
            features: 2,
            log2_table_size: 15,
            base_resolution: 16,
            growth_factor: 1.5,
        }
    }
}

impl HashGridConfig {
    pub fn table_size(&self) -> usize {
        1 << self.log2_table_size
    }

    pub fn out_dim(&self) -> usize {
        self.levels * self.features
    }

    pub fn resolution(&self, level: usize) -> usize {
        ((self.base_resolution as f64) * self.growth_factor.powi(level as i32)).floor() as usize
    }

    /// Total learnable values across all level tables.
    pub fn param_count(&self) -> usize {
        self.levels * self.table_size() * self.features
    }
}

/// Corner indices, trilinear weights and in-cell offsets per level, kept for
/// the backward pass.
#[derive(Debug, Clone)]
pub struct HashCache {
    pub corners: Vec<[u32; 8]>,
    pub weights: Vec<[f64; 8]>,
    pub fracs: Vec<[f64; 3]>,
    pub clamped: bool,
    /// Axes where the query was clamped to the unit cube (no position grad).
    pub clamped_axes: [bool; 3],
}

/// Multiresolution hash grid over the unit cube with trilinear interpolation.
#[derive(Debug)]
pub struct HashGrid {
    pub cfg: HashGridConfig,
    /// One flat `table_size * features` block per level.
    pub tables: Vec<Vec<f64>>,
    /// Out-of-range queries clamped to the boundary.
    pub clamp_events: AtomicU64,
}

impl Clone for HashGrid {
    fn clone(&self) -> Self {
        HashGrid {
            cfg: self.cfg,
            tables: self.tables.clone(),
            clamp_events: AtomicU64::new(self.clamp_events.load(Ordering::Relaxed)),
        }
    }
}

fn hash_corner(x: u64, y: u64, z: u64, mask: u64) -> u32 {
    ((x.wrapping_mul(HASH_PRIMES[0])
        ^ y.wrapping_mul(HASH_PRIMES[1])
        ^ z.wrapping_mul(HASH_PRIMES[2]))
        & mask) as u32
}

impl HashGrid {
    pub fn new(cfg: HashGridConfig, rng: &mut ChaCha8Rng) -> HashGrid {
        let tables = (0..cfg.levels)
            .map(|_| {
                (0..cfg.table_size() * cfg.features)
                    .map(|_| rng.gen_range(-1e-4..1e-4))
                    .collect()
            })
            .collect();
        HashGrid {
            cfg,
            tables,
            clamp_events: AtomicU64::new(0),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.cfg.out_dim()
    }

    /// Encode a point that the caller has normalized into the unit cube;
    /// out-of-range coordinates clamp to the boundary and bump the counter.
    pub fn encode(&self, p: &Vector3<f64>) -> (Vec<f64>, HashCache) {
        encode_with_tables(&self.cfg, &self.tables, p, Some(&self.clamp_events))
    }

    /// Scatter `d_out` (length L*F) into per-level table gradients.
    pub fn encode_vjp(&self, cache: &HashCache, d_out: &[f64], d_tables: &mut [Vec<f64>]) {
        encode_vjp_with_tables(&self.cfg, cache, d_out, d_tables)
    }
}

/// Hash-grid query against externally supplied tables (used by the class
/// encoder hypernetwork, where tables are a network output).
pub fn encode_with_tables(
    cfg: &HashGridConfig,
    tables: &[Vec<f64>],
    p: &Vector3<f64>,
    clamp_counter: Option<&AtomicU64>,
) -> (Vec<f64>, HashCache) {
    let mut q = *p;
    let mut clamped_axes = [false; 3];
    for i in 0..3 {
        if q[i] < 0.0 || q[i] > 1.0 {
            q[i] = q[i].clamp(0.0, 1.0);
            clamped_axes[i] = true;
        }
    }
    let clamped = clamped_axes.iter().any(|&c| c);
    if clamped {
        if let Some(c) = clamp_counter {
            c.fetch_add(1, Ordering::Relaxed);
        }
    }
    let mask = (cfg.table_size() - 1) as u64;
    let mut out = vec![0.0; cfg.out_dim()];
    let mut corners = Vec::with_capacity(cfg.levels);
    let mut weights = Vec::with_capacity(cfg.levels);
    let mut fracs = Vec::with_capacity(cfg.levels);
    for level in 0..cfg.levels {
        let res = cfg.resolution(level);
        let scaled = q * res as f64;
        let cell = scaled.map(|v| (v.floor() as i64).clamp(0, res as i64 - 1));
        let frac = Vector3::new(
            scaled.x - cell.x as f64,
            scaled.y - cell.y as f64,
            scaled.z - cell.z as f64,
        );
        let mut idx = [0u32; 8];
        let mut wgt = [0.0; 8];
        for (k, (dx, dy, dz)) in CORNERS.iter().enumerate() {
            idx[k] = hash_corner(
                (cell.x + dx) as u64,
                (cell.y + dy) as u64,
                (cell.z + dz) as u64,
                mask,
            );
            let wx = if *dx == 1 { frac.x } else { 1.0 - frac.x };
            let wy = if *dy == 1 { frac.y } else { 1.0 - frac.y };
            let wz = if *dz == 1 { frac.z } else { 1.0 - frac.z };
            wgt[k] = wx * wy * wz;
        }
        let table = &tables[level];
        for f in 0..cfg.features {
            let mut acc = 0.0;
            for k in 0..8 {
                acc += wgt[k] * table[idx[k] as usize * cfg.features + f];
            }
            out[level * cfg.features + f] = acc;
        }
        corners.push(idx);
        weights.push(wgt);
        fracs.push([frac.x, frac.y, frac.z]);
    }
    (
        out,
        HashCache {
            corners,
            weights,
            fracs,
            clamped,
            clamped_axes,
        },
    )
}

/// Gradient of the hash encoding w.r.t. the unit-cube query point (piecewise
/// trilinear, zero on clamped axes).
pub fn hash_position_vjp(
    cfg: &HashGridConfig,
    tables: &[Vec<f64>],
    cache: &HashCache,
    d_out: &[f64],
) -> Vector3<f64> {
    let mut d_p = Vector3::zeros();
    for level in 0..cfg.levels {
        let res = cfg.resolution(level) as f64;
        let idx = &cache.corners[level];
        let frac = &cache.fracs[level];
        let table = &tables[level];
        for f in 0..cfg.features {
            let g = d_out[level * cfg.features + f];
            if g == 0.0 {
                continue;
            }
            for (k, (dx, dy, dz)) in CORNERS.iter().enumerate() {
                let v = table[idx[k] as usize * cfg.features + f];
                let wx = if *dx == 1 { frac[0] } else { 1.0 - frac[0] };
                let wy = if *dy == 1 { frac[1] } else { 1.0 - frac[1] };
                let wz = if *dz == 1 { frac[2] } else { 1.0 - frac[2] };
                let sx = if *dx == 1 { 1.0 } else { -1.0 };
                let sy = if *dy == 1 { 1.0 } else { -1.0 };
                let sz = if *dz == 1 { 1.0 } else { -1.0 };
                d_p.x += g * v * sx * wy * wz * res;
                d_p.y += g * v * wx * sy * wz * res;
                d_p.z += g * v * wx * wy * sz * res;
            }
        }
    }
    for i in 0..3 {
        if cache.clamped_axes[i] {
            d_p[i] = 0.0;
        }
    }
    d_p
}

pub fn encode_vjp_with_tables(
    cfg: &HashGridConfig,
    cache: &HashCache,
    d_out: &[f64],
    d_tables: &mut [Vec<f64>],
) {
    for level in 0..cfg.levels {
        let idx = &cache.corners[level];
        let wgt = &cache.weights[level];
        for f in 0..cfg.features {
            let g = d_out[level * cfg.features + f];
            if g == 0.0 {
                continue;
            }
            for k in 0..8 {
                d_tables[level][idx[k] as usize * cfg.features + f] += wgt[k] * g;
            }
        }
    }
}

const CORNERS: [(i64, i64, i64); 8] = [
    (0, 0, 0),
    (1, 0, 0),
    (0, 1, 0),
    (1, 1, 0),
    (0, 0, 1),
    (1, 0, 1),
    (0, 1, 1),
    (1, 1, 1),
];

/// γ(v) = (sin(2^k π v), cos(2^k π v)) for k = 0..K-1, per component.
pub fn sin_encode(v: &[f64], freqs: usize, out: &mut Vec<f64>) {
    for &x in v {
        for k in 0..freqs {
            let arg = (1u64 << k) as f64 * std::f64::consts::PI * x;
            out.push(arg.sin());
            out.push(arg.cos());
        }
    }
}

pub fn sin_encode_dim(input_dim: usize, freqs: usize) -> usize {
    2 * freqs * input_dim
}

/// Backward of [`sin_encode`]: folds `d_out` (layout matching the encoding)
/// into gradients for the input components.
pub fn sin_encode_vjp(v: &[f64], freqs: usize, d_out: &[f64]) -> Vec<f64> {
    let mut d_v = vec![0.0; v.len()];
    let mut j = 0;
    for (i, &x) in v.iter().enumerate() {
        for k in 0..freqs {
            let w = (1u64 << k) as f64 * std::f64::consts::PI;
            let arg = w * x;
            d_v[i] += d_out[j] * w * arg.cos();
            d_v[i] += d_out[j + 1] * (-w * arg.sin());
            j += 2;
        }
    }
    d_v
}

/// Frame identity used for novel-view embedding lookup.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FrameKey {
    pub camera_index: u32,
    pub timestamp: f64,
}

/// One learnable vector per training frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub keys: Vec<FrameKey>,
    /// rows * dim, row-major.
    pub values: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(keys: Vec<FrameKey>, dim: usize, rng: &mut ChaCha8Rng) -> EmbeddingTable {
        let values = (0..keys.len() * dim)
            .map(|_| rng.gen_range(-0.01..0.01))
            .collect();
        EmbeddingTable { dim, keys, values }
    }

    pub fn rows(&self) -> usize {
        self.keys.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// Nearest-neighbor training-frame lookup for a novel view: same camera index
/// first, then minimal |Δt|, ties resolved toward the earlier frame. Falls
/// back to all frames when the camera index is unseen.
pub fn lookup_embedding_row(
    keys: &[FrameKey],
    camera_index: u32,
    timestamp: f64,
) -> Result<usize> {
    if keys.is_empty() {
        return Err(Error::Empty("embedding table has no frames".into()));
    }
    let candidates: Vec<usize> = {
        let same: Vec<usize> = (0..keys.len())
            .filter(|&i| keys[i].camera_index == camera_index)
            .collect();
        if same.is_empty() {
            (0..keys.len()).collect()
        } else {
            same
        }
    };
    let mut best = candidates[0];
    for &i in &candidates[1..] {
        let di = (keys[i].timestamp - timestamp).abs();
        let db = (keys[best].timestamp - timestamp).abs();
        if di < db || (di == db && keys[i].timestamp < keys[best].timestamp) {
            best = i;
        }
    }
    Ok(best)
}

/// Per-class learnable embeddings for the class-encoder variant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassEmbeddings {
    pub dim: usize,
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl ClassEmbeddings {
    pub fn new(names: Vec<String>, dim: usize, rng: &mut ChaCha8Rng) -> ClassEmbeddings {
        let values = (0..names.len() * dim)
            .map(|_| rng.gen_range(-0.1..0.1))
            .collect();
        ClassEmbeddings { dim, names, values }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// Hypernetwork mapping a class embedding to per-class hash tables.
///
/// Output layout: level-major, then entry, then feature — the same flat
/// layout [`HashGrid::tables`] uses per level, concatenated.
pub fn class_hash_tables(
    encoder: &Mlp,
    class_embedding: &[f64],
    cfg: &HashGridConfig,
) -> Result<(Vec<Vec<f64>>, MlpCache)> {
    if encoder.out_dim() != cfg.param_count() {
        return Err(Error::DimensionMismatch(format!(
            "class encoder outputs {}, hash grid needs {}",
            encoder.out_dim(),
            cfg.param_count()
        )));
    }
    let x = DMatrix::from_column_slice(class_embedding.len(), 1, class_embedding);
    let (y, cache) = encoder.forward(&x)?;
    let per_level = cfg.table_size() * cfg.features;
    let tables = (0..cfg.levels)
        .map(|l| y.as_slice()[l * per_level..(l + 1) * per_level].to_vec())
        .collect();
    Ok((tables, cache))
}

/// Backward of [`class_hash_tables`]: folds per-level table gradients into
/// encoder and embedding gradients.
pub fn class_hash_tables_vjp(
    encoder: &Mlp,
    cache: &MlpCache,
    d_tables: &[Vec<f64>],
    cfg: &HashGridConfig,
) -> (MlpGrads, Vec<f64>) {
    let per_level = cfg.table_size() * cfg.features;
    let mut d_out = DMatrix::zeros(cfg.param_count(), 1);
    for (l, dt) in d_tables.iter().enumerate() {
        d_out
            .view_mut((l * per_level, 0), (per_level, 1))
            .copy_from_slice(dt);
    }
    let (grads, dx) = encoder.backward(cache, &d_out);
    (grads, dx.as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn small_grid() -> HashGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        HashGrid::new(
            HashGridConfig {
                levels: 2,
                features: 2,
                log2_table_size: 8,
                base_resolution: 4,
                growth_factor: 2.0,
            },
            &mut rng,
        )
    }

    #[test]
    fn output_dimension() {
        let cfg = HashGridConfig::default();
        assert_eq!(cfg.out_dim(), 16);
    }

    #[test]
    fn vertex_query_returns_stored_feature() {
        let grid = small_grid();
        // Vertex (1,2,3) at level 0 (res 4).
        let p = Vector3::new(0.25, 0.5, 0.75);
        let (out, cache) = grid.encode(&p);
        let mask = (grid.cfg.table_size() - 1) as u64;
        let idx = hash_corner(1, 2, 3, mask) as usize;
        assert_relative_eq!(out[0], grid.tables[0][idx * 2], epsilon = 1e-12);
        assert_relative_eq!(out[1], grid.tables[0][idx * 2 + 1], epsilon = 1e-12);
        // Exactly one unit weight at that vertex.
        let w = &cache.weights[0];
        assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(w.iter().any(|&x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn edge_midpoint_averages_two_vertices() {
        let grid = small_grid();
        // Midpoint of the x-edge between (0,1,1) and (1,1,1) at level 0.
        let p = Vector3::new(0.125, 0.25, 0.25);
        let (out, _) = grid.encode(&p);
        let mask = (grid.cfg.table_size() - 1) as u64;
        let a = hash_corner(0, 1, 1, mask) as usize;
        let b = hash_corner(1, 1, 1, mask) as usize;
        let expect = 0.5 * (grid.tables[0][a * 2] + grid.tables[0][b * 2]);
        assert_relative_eq!(out[0], expect, epsilon = 1e-12);
    }

    #[test]
    fn out_of_range_clamps_and_counts() {
        let grid = small_grid();
        let (a, cache) = grid.encode(&Vector3::new(-0.5, 0.2, 0.3));
        assert!(cache.clamped);
        let (b, _) = grid.encode(&Vector3::new(0.0, 0.2, 0.3));
        assert_eq!(a, b);
        assert_eq!(grid.clamp_events.load(Ordering::Relaxed), 1);
    }

    #[test]
    fn piecewise_trilinear_along_axis() {
        // Between adjacent vertices the output is affine in the coordinate.
        let grid = small_grid();
        let y = 0.3;
        let z = 0.6;
        let f = |x: f64| grid.encode(&Vector3::new(x, y, z)).0;
        // Stay inside one level-1 cell (res 8): x in (0.25, 0.375).
        let x0 = 0.26;
        let x1 = 0.30;
        let xm = 0.28;
        let v0 = f(x0);
        let v1 = f(x1);
        let vm = f(xm);
        for i in 0..vm.len() {
            assert_relative_eq!(vm[i], 0.5 * (v0[i] + v1[i]), epsilon = 1e-12);
        }
    }

    #[test]
    fn hash_grid_gradcheck() {
        let mut grid = small_grid();
        let p = Vector3::new(0.31, 0.47, 0.83);
        let w: Vec<f64> = (0..grid.out_dim()).map(|i| 0.2 + i as f64 * 0.1).collect();
        let f = |g: &HashGrid| {
            let (out, _) = g.encode(&p);
            out.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, cache) = grid.encode(&p);
        let mut d_tables: Vec<Vec<f64>> =
            grid.tables.iter().map(|t| vec![0.0; t.len()]).collect();
        grid.encode_vjp(&cache, &w, &mut d_tables);

        let h = 1e-6;
        // Probe the touched corners plus some untouched entries.
        for level in 0..grid.cfg.levels {
            for k in 0..8 {
                let e = cache.corners[level][k] as usize * grid.cfg.features;
                let orig = grid.tables[level][e];
                grid.tables[level][e] = orig + h;
                let fp = f(&grid);
                grid.tables[level][e] = orig - h;
                let fm = f(&grid);
                grid.tables[level][e] = orig;
                let num = (fp - fm) / (2.0 * h);
                assert_relative_eq!(d_tables[level][e], num, epsilon = 1e-7);
            }
        }
        let untouched = d_tables[0]
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                !cache.corners[0]
                    .iter()
                    .any(|&c| c as usize * grid.cfg.features == *i || c as usize * grid.cfg.features + 1 == *i)
            })
            .all(|(_, &g)| g == 0.0);
        assert!(untouched);
    }

    #[test]
    fn sin_encode_examples() {
        let mut out = Vec::new();
        sin_encode(&[0.0], 3, &mut out);
        assert_eq!(out, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);

        out.clear();
        sin_encode(&[1.0], 1, &mut out);
        assert_relative_eq!(out[0], 0.0, epsilon = 1e-12); // sin π
        assert_relative_eq!(out[1], -1.0, epsilon = 1e-12); // cos π

        out.clear();
        sin_encode(&[0.5], 2, &mut out);
        // k=1 term: sin(π), cos(π).
        assert_relative_eq!(out[2], 0.0, epsilon = 1e-12);
        assert_relative_eq!(out[3], -1.0, epsilon = 1e-12);

        assert_eq!(sin_encode_dim(3, 6), 36);
        out.clear();
        sin_encode(&[0.1, 0.9, 0.4], 6, &mut out);
        assert_eq!(out.len(), 36);
        assert!(out.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn lookup_nearest_by_time() {
        let keys = vec![
            FrameKey { camera_index: 0, timestamp: 0.0 },
            FrameKey { camera_index: 0, timestamp: 0.25 },
            FrameKey { camera_index: 0, timestamp: 0.5 },
            FrameKey { camera_index: 1, timestamp: 0.1 },
        ];
        assert_eq!(lookup_embedding_row(&keys, 0, 0.26).unwrap(), 1);
        // Exact midpoint ties toward the earlier frame.
        assert_eq!(lookup_embedding_row(&keys, 0, 0.375).unwrap(), 1);
        // Unknown camera index falls back to all frames.
        assert_eq!(lookup_embedding_row(&keys, 2, 0.12).unwrap(), 3);
        assert!(lookup_embedding_row(&[], 0, 0.0).is_err());
    }

    #[test]
    fn class_tables_deterministic_and_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = HashGridConfig {
            levels: 2,
            features: 2,
            log2_table_size: 6,
            base_resolution: 4,
            growth_factor: 1.5,
        };
        let enc = Mlp::new(&[4, 32, cfg.param_count()], false, &mut rng);
        let e1 = vec![0.3, -0.2, 0.8, 0.1];
        let e2 = vec![-0.5, 0.4, 0.0, 0.9];
        let (t1a, _) = class_hash_tables(&enc, &e1, &cfg).unwrap();
        let (t1b, _) = class_hash_tables(&enc, &e1, &cfg).unwrap();
        let (t2, _) = class_hash_tables(&enc, &e2, &cfg).unwrap();
        assert_eq!(t1a, t1b);
        let diff: f64 = t1a[0]
            .iter()
            .zip(&t2[0])
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-6);
    }

    #[test]
    fn zero_init_class_encoder_gives_zero_tables() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = HashGridConfig {
            levels: 2,
            features: 2,
            log2_table_size: 6,
            base_resolution: 4,
            growth_factor: 1.5,
        };
        let enc = Mlp::new(&[4, 16, cfg.param_count()], true, &mut rng);
        let (tables, _) = class_hash_tables(&enc, &[0.5, 0.5, 0.5, 0.5], &cfg).unwrap();
        assert!(tables.iter().all(|t| t.iter().all(|&v| v == 0.0)));
        let (out, _) = encode_with_tables(&cfg, &tables, &Vector3::new(0.3, 0.3, 0.3), None);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn class_tables_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cfg = HashGridConfig {
            levels: 1,
            features: 2,
            log2_table_size: 4,
            base_resolution: 2,
            growth_factor: 1.5,
        };
        let enc = Mlp::new(&[3, 8, cfg.param_count()], false, &mut rng);
        let emb = vec![0.2, -0.4, 0.7];
        let p = Vector3::new(0.4, 0.6, 0.3);
        let w = [0.5, -0.3];
        let f = |enc: &Mlp, emb: &[f64]| {
            let (tables, _) = class_hash_tables(enc, emb, &cfg).unwrap();
            let (out, _) = encode_with_tables(&cfg, &tables, &p, None);
            out[0] * w[0] + out[1] * w[1]
        };

        let (tables, mcache) = class_hash_tables(&enc, &emb, &cfg).unwrap();
        let (_, hcache) = encode_with_tables(&cfg, &tables, &p, None);
        let mut d_tables = vec![vec![0.0; tables[0].len()]];
        encode_vjp_with_tables(&cfg, &hcache, &w, &mut d_tables);
        let (_, d_emb) = class_hash_tables_vjp(&enc, &mcache, &d_tables, &cfg);

        let h = 1e-6;
        for i in 0..3 {
            let mut ep = emb.clone();
            let mut em = emb.clone();
            ep[i] += h;
            em[i] -= h;
            let num = (f(&enc, &ep) - f(&enc, &em)) / (2.0 * h);
            assert_relative_eq!(d_emb[i], num, epsilon = 1e-7, max_relative = 1e-5);
        }
    }
}
