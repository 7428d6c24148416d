//! The composite scene graph: background Gaussians, per-actor models with
//! learnable poses, the sky cubemap, frame embeddings and the appearance
//! networks, plus construction from an initial point cloud.

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actors::{ActorModel, SkyCubemap};
use crate::encoders::{
    sin_encode_dim, ClassEmbeddings, EmbeddingTable, FrameKey, HashGrid, HashGridConfig, Mlp,
};
use crate::error::{Error, Result};
use crate::gaussians::GaussianSet;
use crate::geometry::{logit, quat_to_rotation, sh::channel_to_dc, Camera};
use crate::img::{ImagePlane, ImageRgb};

/// Axis-aligned scene bounds used to normalize hash-grid queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn min_v(&self) -> Vector3<f64> {
        Vector3::from(self.min)
    }

    pub fn max_v(&self) -> Vector3<f64> {
        Vector3::from(self.max)
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max_v() - self.min_v()
    }

    /// Scene radius proxy: half the diagonal.
    pub fn half_diagonal(&self) -> f64 {
        self.extent().norm() * 0.5
    }

    /// Map a world point into the unit cube (unclamped).
    pub fn normalize(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let e = self.extent();
        let d = p - self.min_v();
        Vector3::new(d.x / e.x, d.y / e.y, d.z / e.z)
    }
}

/// One training or evaluation view with its ground-truth signals.
#[derive(Debug, Clone)]
pub struct FrameData {
    pub frame_id: usize,
    pub camera: Camera,
    pub image: ImageRgb,
    /// Meters; 0 marks invalid pixels.
    pub depth: Option<ImagePlane>,
    /// 1.0 where the pixel is sky.
    pub sky_mask: Option<ImagePlane>,
    /// Appearance gain the generator applied (introspection only).
    pub gain: Option<f64>,
}

/// Which position encoding feeds the actor deformation network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ActorEncoding {
    /// Sinusoidal position encoding (the default).
    #[default]
    Sinusoidal,
    /// Per-class hash grid whose tables come from the class encoder.
    ClassHash,
}

/// Network/encoder dimensions; the trainer config embeds one of these.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub sh_degree: usize,
    pub embed_dim: usize,
    pub class_embed_dim: usize,
    pub mlp_hidden: usize,
    pub sin_freqs: usize,
    pub actor_encoding: ActorEncoding,
    pub hash: HashGridConfig,
    pub actor_hash: HashGridConfig,
    pub cubemap_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            sh_degree: 1,
            embed_dim: 16,
            class_embed_dim: 8,
            mlp_hidden: 64,
            sin_freqs: 6,
            actor_encoding: ActorEncoding::Sinusoidal,
            hash: HashGridConfig::default(),
            actor_hash: HashGridConfig {
                levels: 4,
                features: 2,
                log2_table_size: 9,
                base_resolution: 4,
                growth_factor: 1.5,
            },
            cubemap_size: 64,
        }
    }
}

impl ModelConfig {
    pub fn sh_values(&self) -> usize {
        3 * crate::geometry::sh::coeff_count(self.sh_degree)
    }

    /// Input width of the local appearance learner.
    pub fn local_in_dim(&self) -> usize {
        self.hash.out_dim() + self.embed_dim + 3
    }

    /// Input width of the global appearance learner.
    pub fn global_in_dim(&self) -> usize {
        self.embed_dim + 6
    }

    /// Position-encoding width for actor deformation.
    pub fn actor_pos_dim(&self) -> usize {
        match self.actor_encoding {
            ActorEncoding::Sinusoidal => sin_encode_dim(3, self.sin_freqs),
            ActorEncoding::ClassHash => self.actor_hash.out_dim(),
        }
    }

    /// Input width of the spatial-temporal encoder.
    pub fn deform_in_dim(&self) -> usize {
        self.actor_pos_dim() + sin_encode_dim(1, self.sin_freqs) + self.sh_values()
    }
}

/// Everything learnable, plus the scene bounds.
#[derive(Debug, Clone)]
pub struct SceneModel {
    pub cfg: ModelConfig,
    pub aabb: Aabb,
    pub background: GaussianSet,
    pub actors: Vec<ActorModel>,
    pub sky: SkyCubemap,
    /// One row per training frame.
    pub embeddings: EmbeddingTable,
    pub hash: HashGrid,
    /// Local Gaussian appearance learner (3 layers, zero-init output).
    pub d_local: Mlp,
    /// Global image appearance learner (4 layers, zero-init output).
    pub d_global: Mlp,
    /// Shared spatial-temporal encoder (2 layers).
    pub d_actor_enc: Mlp,
    /// Deformation head (2 layers, multi-head output, zero-init).
    pub d_deform_head: Mlp,
    /// Per-class embeddings for the class-hash variant.
    pub class_embeddings: ClassEmbeddings,
    /// Hypernetwork producing per-class hash tables (class-hash variant).
    pub class_encoder: Option<Mlp>,
}

impl SceneModel {
    pub fn new(
        cfg: ModelConfig,
        aabb: Aabb,
        background: GaussianSet,
        actors: Vec<ActorModel>,
        train_keys: Vec<FrameKey>,
        seed: u64,
    ) -> Result<SceneModel> {
        if background.sh_degree != cfg.sh_degree {
            return Err(Error::InvalidParameter("sh degree mismatch".into()));
        }
        let h = cfg.mlp_hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce0_11ab);
        let hash = HashGrid::new(cfg.hash, &mut rng);
        let d_local = Mlp::new(&[cfg.local_in_dim(), h, h, 6], true, &mut rng);
        let d_global = Mlp::new(&[cfg.global_in_dim(), h, h, h, 12], true, &mut rng);
        let d_actor_enc = Mlp::new(&[cfg.deform_in_dim(), h, h], false, &mut rng);
        let d_deform_head = Mlp::new(&[h, h, 3 + cfg.sh_values()], true, &mut rng);
        let embeddings = EmbeddingTable::new(train_keys, cfg.embed_dim, &mut rng);
        let mut class_names: Vec<String> = actors.iter().map(|a| a.class.clone()).collect();
        class_names.sort();
        class_names.dedup();
        let class_embeddings = ClassEmbeddings::new(class_names, cfg.class_embed_dim, &mut rng);
        let class_encoder = match cfg.actor_encoding {
            ActorEncoding::ClassHash => Some(Mlp::new(
                &[cfg.class_embed_dim, h, cfg.actor_hash.param_count()],
                true,
                &mut rng,
            )),
            ActorEncoding::Sinusoidal => None,
        };
        Ok(SceneModel {
            cfg,
            aabb,
            background,
            actors,
            sky: SkyCubemap::new(cfg.cubemap_size, 0.5),
            embeddings,
            hash,
            d_local,
            d_global,
            d_actor_enc,
            d_deform_head,
            class_embeddings,
            class_encoder,
        })
    }

    pub fn total_gaussians(&self) -> usize {
        self.background.len() + self.actors.iter().map(|a| a.gaussians.len()).sum::<usize>()
    }

    pub fn has_actors(&self) -> bool {
        !self.actors.is_empty()
    }
}

/// Raw colored points used for initialization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Vector3<f64>>,
    /// [0,1] RGB.
    pub colors: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// First-point-wins voxel downsampling (deterministic in input order).
    pub fn voxel_downsample(&self, voxel: f64) -> PointCloud {
        let mut seen = std::collections::HashSet::new();
        let mut out = PointCloud::default();
        for (p, c) in self.positions.iter().zip(&self.colors) {
            let key = (
                (p.x / voxel).floor() as i64,
                (p.y / voxel).floor() as i64,
                (p.z / voxel).floor() as i64,
            );
            if seen.insert(key) {
                out.positions.push(*p);
                out.colors.push(*c);
            }
        }
        out
    }
}

/// Tracked-box initialization for one actor.
#[derive(Debug, Clone)]
pub struct ActorInit {
    pub class: String,
    /// Full extents, meters.
    pub size: Vector3<f64>,
    pub key_times: Vec<f64>,
    pub key_rotations: Vec<Vector4<f64>>,
    pub key_translations: Vec<Vector3<f64>>,
}

/// Initial opacity for point-seeded Gaussians.
const INIT_OPACITY: f64 = 0.1;
/// Point cloud merge voxel (meters).
pub const MERGE_VOXEL: f64 = 0.05;

/// Gaussians from a point cloud: DC color from RGB, isotropic scale from the
/// mean distance to the 3 nearest neighbors, opacity 0.1.
pub fn gaussians_from_points(points: &PointCloud, sh_degree: usize) -> GaussianSet {
    let mut set = GaussianSet::empty(sh_degree);
    let n = points.len();
    if n == 0 {
        return set;
    }
    let scales: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let p = points.positions[i];
            let mut d = [f64::INFINITY; 3];
            for (j, q) in points.positions.iter().enumerate() {
                if j == i {
                    continue;
                }
                let dist = (p - q).norm_squared();
                if dist < d[2] {
                    d[2] = dist;
                    if d[2] < d[1] {
                        d.swap(1, 2);
                    }
                    if d[1] < d[0] {
                        d.swap(0, 1);
                    }
                }
            }
            let mut acc = 0.0;
            let mut cnt = 0.0;
            for v in d {
                if v.is_finite() {
                    acc += v.sqrt();
                    cnt += 1.0;
                }
            }
            if cnt > 0.0 {
                (acc / cnt).max(1e-4)
            } else {
                0.1
            }
        })
        .collect();

    let stride = set.sh_stride();
    let o = logit(INIT_OPACITY);
    for i in 0..n {
        let mut sh = vec![0.0; stride];
        for ch in 0..3 {
            sh[ch] = channel_to_dc(points.colors[i][ch]);
        }
        let ls = scales[i].ln();
        set.push(
            points.positions[i],
            Vector4::new(1.0, 0.0, 0.0, 0.0),
            Vector3::new(ls, ls, ls),
            o,
            &sh,
        );
    }
    set
}

/// Split a point cloud into background points and per-actor object-centric
/// points by box containment at each actor's first keyframe.
pub fn assign_points_to_actors(
    points: &PointCloud,
    actors: &[ActorInit],
) -> (PointCloud, Vec<PointCloud>) {
    let mut background = PointCloud::default();
    let mut per_actor = vec![PointCloud::default(); actors.len()];
    let frames: Vec<_> = actors
        .iter()
        .map(|a| {
            let r = quat_to_rotation(&a.key_rotations[0]);
            (r.transpose(), a.key_translations[0], a.size * 0.5)
        })
        .collect();
    'point: for (p, c) in points.positions.iter().zip(&points.colors) {
        for (ai, (rt, t, half)) in frames.iter().enumerate() {
            let local = rt * (p - t);
            if local.x.abs() <= half.x && local.y.abs() <= half.y && local.z.abs() <= half.z {
                per_actor[ai].positions.push(local);
                per_actor[ai].colors.push(*c);
                continue 'point;
            }
        }
        background.positions.push(*p);
        background.colors.push(*c);
    }
    (background, per_actor)
}

/// Build actor models, seeding empty actors with a small gray point cloud so
/// they stay trainable.
pub fn build_actor_models(
    actor_inits: &[ActorInit],
    actor_points: Vec<PointCloud>,
    sh_degree: usize,
    seed: u64,
) -> Vec<ActorModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xac40_99e1);
    actor_inits
        .iter()
        .zip(actor_points)
        .enumerate()
        .map(|(id, (init, mut pts))| {
            if pts.len() < 8 {
                for _ in 0..64 {
                    let half = init.size * 0.5;
                    pts.positions.push(Vector3::new(
                        rng.gen_range(-half.x..half.x),
                        rng.gen_range(-half.y..half.y),
                        rng.gen_range(-half.z..half.z),
                    ));
                    pts.colors.push(Vector3::new(0.5, 0.5, 0.5));
                }
            }
            let gaussians = gaussians_from_points(&pts, sh_degree);
            ActorModel {
                id: id as u32,
                class: init.class.clone(),
                size: init.size,
                gaussians,
                key_times: init.key_times.clone(),
                key_rotations: init
                    .key_rotations
                    .iter()
                    .flat_map(|q| q.iter().copied().collect::<Vec<_>>())
                    .collect(),
                key_translations: init
                    .key_translations
                    .iter()
                    .flat_map(|t| t.iter().copied().collect::<Vec<_>>())
                    .collect(),
            }
        })
        .collect()
}
