//! Full render pipeline: actor deformation → pose transform → projection →
//! SH color → local refinement → tile rasterization with sky compositing →
//! global refinement, and the matching backward pass that fills a
//! [`SceneGrads`] for every learnable parameter group.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3, Vector4};
use rayon::prelude::*;

use crate::actors::{actor_to_world, actor_to_world_vjp, PoseSource};
use crate::appearance::{
    global_refine_backward, global_refine_forward, local_refine_backward, local_refine_forward,
    GlobalRefineCache, LocalRefineCache,
};
use crate::encoders::{
    class_hash_tables, class_hash_tables_vjp, encode_vjp_with_tables, encode_with_tables,
    lookup_embedding_row, sin_encode, HashCache, MlpCache, MlpGrads,
};
use crate::error::{Error, Result};
use crate::gaussians::GaussianGrads;
use crate::geometry::{
    build_covariance, build_covariance_vjp, d_sigmoid_from_value, project_gaussian,
    project_gaussian_vjp, sh::eval_sh_color, sh::eval_sh_color_vjp, sh::ShCache, view_direction,
    view_direction_vjp, Camera, ProjCache,
};
use crate::img::{ImagePlane, ImageRgb};
use crate::rasterizer::backward::{rasterize_backward, RasterUpstream, SplatGrads};
use crate::rasterizer::{rasterize_forward, RasterCache, Splat, SplatTag};
use crate::scene::{ActorEncoding, SceneModel};

/// Which splat sources participate in a render.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceFilter {
    All,
    BackgroundOnly,
    ActorsOnly,
}

#[derive(Debug, Clone, Copy)]
pub struct RenderSettings {
    pub sources: SourceFilter,
    pub local_refine: bool,
    pub global_refine: bool,
    pub actor_deform: bool,
    pub near: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            sources: SourceFilter::All,
            local_refine: true,
            global_refine: true,
            actor_deform: true,
            near: 0.01,
        }
    }
}

impl RenderSettings {
    pub fn no_refinement(near: f64) -> Self {
        RenderSettings {
            sources: SourceFilter::All,
            local_refine: false,
            global_refine: false,
            actor_deform: false,
            near,
        }
    }
}

/// Rendered channels. `rgb` is the refined image (unclamped, linear);
/// clamp with [`ImageRgb::clamped01`] for display and metrics.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub rgb: ImageRgb,
    /// Composited image before global refinement.
    pub raw_rgb: ImageRgb,
    pub depth: ImagePlane,
    pub acc_alpha: ImagePlane,
    pub actor_alpha: ImagePlane,
}

/// Per-actor forward state.
struct ActorForward {
    pose_rot: Vector4<f64>,
    pose_trans: Vector3<f64>,
    pose_key: Option<usize>,
    /// Object-centric positions after deformation (3 per Gaussian).
    mu_prime: Vec<f64>,
    /// SH after deformation (sh_stride per Gaussian).
    sh_prime: Vec<f64>,
    enc_cache: Option<MlpCache>,
    head_cache: Option<MlpCache>,
    /// Class-hash variant: per-Gaussian hash caches and generated tables.
    pos_hash_caches: Option<Vec<HashCache>>,
    class_tables: Option<(Vec<Vec<f64>>, MlpCache)>,
    class_idx: usize,
}

/// One splat that survived culling, with everything backward needs.
struct KeptSplat {
    source: u32, // 0 = background, 1 + actor index
    local: u32,
    mu_world: Vector3<f64>,
    rot_world: Vector4<f64>,
    scale: Vector3<f64>,
    opacity: f64,
    sigma: Matrix3<f64>,
    proj: ProjCache,
    view_dir: Vector3<f64>,
    view_norm: f64,
    sh_cache: ShCache,
}

pub struct RenderCache {
    pub settings: RenderSettings,
    pub embed_row: usize,
    camera: Camera,
    kept: Vec<KeptSplat>,
    actor_fwd: Vec<Option<ActorForward>>,
    local_cache: Option<LocalRefineCache>,
    global_cache: Option<GlobalRefineCache>,
    raster: RasterCache,
    sky_caches: Vec<crate::actors::SkyCache>,
    width: usize,
    height: usize,
}

/// Gradients for every learnable group in the scene.
pub struct SceneGrads {
    pub background: GaussianGrads,
    pub actors: Vec<ActorParamGrads>,
    pub sky: Vec<f64>,
    pub embeddings: Vec<f64>,
    pub hash_tables: Vec<Vec<f64>>,
    pub d_local: MlpGrads,
    pub d_global: MlpGrads,
    pub d_actor_enc: MlpGrads,
    pub d_deform_head: MlpGrads,
    pub class_encoder: Option<MlpGrads>,
    pub class_embeddings: Vec<f64>,
    /// View-space positional gradient norms for densification.
    pub view_grad_bg: Vec<f64>,
    pub view_grad_actors: Vec<Vec<f64>>,
}

pub struct ActorParamGrads {
    pub gaussians: GaussianGrads,
    pub pose_rot: Vec<f64>,
    pub pose_trans: Vec<f64>,
}

impl SceneGrads {
    pub fn zeros(scene: &SceneModel) -> SceneGrads {
        SceneGrads {
            background: GaussianGrads::zeros(&scene.background),
            actors: scene
                .actors
                .iter()
                .map(|a| ActorParamGrads {
                    gaussians: GaussianGrads::zeros(&a.gaussians),
                    pose_rot: vec![0.0; a.key_rotations.len()],
                    pose_trans: vec![0.0; a.key_translations.len()],
                })
                .collect(),
            sky: vec![0.0; scene.sky.param_count()],
            embeddings: vec![0.0; scene.embeddings.values.len()],
            hash_tables: scene.hash.tables.iter().map(|t| vec![0.0; t.len()]).collect(),
            d_local: MlpGrads::zeros_like(&scene.d_local),
            d_global: MlpGrads::zeros_like(&scene.d_global),
            d_actor_enc: MlpGrads::zeros_like(&scene.d_actor_enc),
            d_deform_head: MlpGrads::zeros_like(&scene.d_deform_head),
            class_encoder: scene.class_encoder.as_ref().map(MlpGrads::zeros_like),
            class_embeddings: vec![0.0; scene.class_embeddings.values.len()],
            view_grad_bg: vec![0.0; scene.background.len()],
            view_grad_actors: scene
                .actors
                .iter()
                .map(|a| vec![0.0; a.gaussians.len()])
                .collect(),
        }
    }
}

fn deform_actor_forward(
    scene: &SceneModel,
    ai: usize,
    t: f64,
    enable: bool,
) -> Result<ActorForward> {
    let actor = &scene.actors[ai];
    let (pose_rot, pose_trans, src) = actor.interpolate_pose(t);
    let pose_key = match src {
        PoseSource::Keyframe(k) => Some(k),
        PoseSource::Interpolated => None,
    };
    let n = actor.gaussians.len();
    let stride = actor.gaussians.sh_stride();
    let class_idx = scene
        .class_embeddings
        .index_of(&actor.class)
        .unwrap_or(0);

    if !enable || n == 0 {
        return Ok(ActorForward {
            pose_rot,
            pose_trans,
            pose_key,
            mu_prime: actor.gaussians.positions.clone(),
            sh_prime: actor.gaussians.sh.clone(),
            enc_cache: None,
            head_cache: None,
            pos_hash_caches: None,
            class_tables: None,
            class_idx,
        });
    }

    let cfg = &scene.cfg;
    let in_dim = cfg.deform_in_dim();
    let pos_dim = cfg.actor_pos_dim();
    let time_dim = 2 * cfg.sin_freqs;
    let mut x = DMatrix::zeros(in_dim, n);
    let mut time_enc = Vec::with_capacity(time_dim);
    sin_encode(&[t], cfg.sin_freqs, &mut time_enc);

    let mut pos_hash_caches = None;
    let mut class_tables = None;
    match cfg.actor_encoding {
        ActorEncoding::Sinusoidal => {
            let half = actor.size * 0.5;
            for i in 0..n {
                let p = actor.gaussians.position(i);
                let pn = [p.x / half.x, p.y / half.y, p.z / half.z];
                let mut enc = Vec::with_capacity(pos_dim);
                sin_encode(&pn, cfg.sin_freqs, &mut enc);
                for (k, v) in enc.iter().enumerate() {
                    x[(k, i)] = *v;
                }
            }
        }
        ActorEncoding::ClassHash => {
            let encoder = scene
                .class_encoder
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("class encoder missing".into()))?;
            let (tables, mcache) = class_hash_tables(
                encoder,
                scene.class_embeddings.row(class_idx),
                &cfg.actor_hash,
            )?;
            let mut caches = Vec::with_capacity(n);
            for i in 0..n {
                let p = actor.gaussians.position(i);
                let p01 = Vector3::new(
                    p.x / actor.size.x + 0.5,
                    p.y / actor.size.y + 0.5,
                    p.z / actor.size.z + 0.5,
                );
                let (feats, cache) = encode_with_tables(&cfg.actor_hash, &tables, &p01, None);
                for (k, v) in feats.iter().enumerate() {
                    x[(k, i)] = *v;
                }
                caches.push(cache);
            }
            pos_hash_caches = Some(caches);
            class_tables = Some((tables, mcache));
        }
    }
    for i in 0..n {
        for (k, v) in time_enc.iter().enumerate() {
            x[(pos_dim + k, i)] = *v;
        }
        let sh = actor.gaussians.sh_block(i);
        for (k, v) in sh.iter().enumerate() {
            x[(pos_dim + time_dim + k, i)] = *v;
        }
    }

    let (f_a, enc_cache) = scene.d_actor_enc.forward(&x)?;
    let (delta, head_cache) = scene.d_deform_head.forward(&f_a)?;

    let mut mu_prime = actor.gaussians.positions.clone();
    let mut sh_prime = actor.gaussians.sh.clone();
    for i in 0..n {
        for k in 0..3 {
            mu_prime[3 * i + k] += delta[(k, i)];
        }
        for k in 0..stride {
            sh_prime[stride * i + k] += delta[(3 + k, i)];
        }
    }
    Ok(ActorForward {
        pose_rot,
        pose_trans,
        pose_key,
        mu_prime,
        sh_prime,
        enc_cache: Some(enc_cache),
        head_cache: Some(head_cache),
        pos_hash_caches,
        class_tables,
        class_idx,
    })
}

/// Render one camera. `embed_row` selects the frame embedding; `None` uses
/// the nearest-training-frame lookup (novel views).
pub fn render_forward(
    scene: &SceneModel,
    cam: &Camera,
    embed_row: Option<usize>,
    settings: &RenderSettings,
) -> Result<(RenderOutput, RenderCache)> {
    let needs_embedding = settings.local_refine || settings.global_refine;
    let embed_row = match embed_row {
        Some(r) => r,
        None => {
            if needs_embedding {
                lookup_embedding_row(&scene.embeddings.keys, cam.camera_index, cam.timestamp)?
            } else {
                0
            }
        }
    };
    let include_bg = matches!(
        settings.sources,
        SourceFilter::All | SourceFilter::BackgroundOnly
    );
    let include_actors = matches!(
        settings.sources,
        SourceFilter::All | SourceFilter::ActorsOnly
    );
    let degree = scene.cfg.sh_degree;
    let bands = crate::geometry::sh::coeff_count(degree);
    let cam_pos = cam.center();

    // Actor forward passes (merge order: actor id order, then background).
    let mut actor_fwd: Vec<Option<ActorForward>> = Vec::with_capacity(scene.actors.len());
    for ai in 0..scene.actors.len() {
        if include_actors {
            actor_fwd.push(Some(deform_actor_forward(
                scene,
                ai,
                cam.timestamp,
                settings.actor_deform,
            )?));
        } else {
            actor_fwd.push(None);
        }
    }

    // Gather world-space Gaussian descriptors in deterministic order.
    struct WorldRef {
        source: u32,
        local: u32,
        mu: Vector3<f64>,
        rot: Vector4<f64>,
        scale: Vector3<f64>,
        opacity: f64,
    }
    let mut world: Vec<WorldRef> = Vec::new();
    for (ai, fwdo) in actor_fwd.iter().enumerate() {
        let Some(fwd) = fwdo else { continue };
        let actor = &scene.actors[ai];
        for i in 0..actor.gaussians.len() {
            let mu_obj = Vector3::new(
                fwd.mu_prime[3 * i],
                fwd.mu_prime[3 * i + 1],
                fwd.mu_prime[3 * i + 2],
            );
            let (mu, rot) = actor_to_world(
                &mu_obj,
                &actor.gaussians.rotation(i),
                &fwd.pose_rot,
                &fwd.pose_trans,
            );
            world.push(WorldRef {
                source: 1 + ai as u32,
                local: i as u32,
                mu,
                rot,
                scale: actor.gaussians.scale(i),
                opacity: actor.gaussians.opacity(i),
            });
        }
    }
    if include_bg {
        for i in 0..scene.background.len() {
            world.push(WorldRef {
                source: 0,
                local: i as u32,
                mu: scene.background.position(i),
                rot: scene.background.rotation(i),
                scale: scene.background.scale(i),
                opacity: scene.background.opacity(i),
            });
        }
    }

    // Project and color (parallel map, order-preserving).
    let sh_block = |source: u32, local: usize| -> &[f64] {
        if source == 0 {
            scene.background.sh_block(local)
        } else {
            let ai = (source - 1) as usize;
            let stride = scene.actors[ai].gaussians.sh_stride();
            let sh = &actor_fwd[ai].as_ref().unwrap().sh_prime;
            &sh[local * stride..(local + 1) * stride]
        }
    };
    let projected: Vec<Option<(KeptSplat, Splat)>> = world
        .par_iter()
        .map(|wr| {
            let sigma = build_covariance(&wr.rot, &wr.scale).ok()?;
            let (proj2d, proj_cache) = project_gaussian(&wr.mu, &sigma, cam, settings.near)?;
            let (dir, norm) = view_direction(&wr.mu, &cam_pos);
            let block = sh_block(wr.source, wr.local as usize);
            let coeffs: Vec<Vector3<f64>> = (0..bands)
                .map(|b| Vector3::new(block[b * 3], block[b * 3 + 1], block[b * 3 + 2]))
                .collect();
            let (color, sh_cache) = eval_sh_color(&coeffs, &dir, degree);
            let tag = if wr.source == 0 {
                SplatTag::Background
            } else {
                SplatTag::Actor(wr.source - 1)
            };
            Some((
                KeptSplat {
                    source: wr.source,
                    local: wr.local,
                    mu_world: wr.mu,
                    rot_world: wr.rot,
                    scale: wr.scale,
                    opacity: wr.opacity,
                    sigma,
                    proj: proj_cache,
                    view_dir: dir,
                    view_norm: norm,
                    sh_cache,
                },
                Splat {
                    center: proj2d.center_px,
                    cov2d: proj2d.cov2d,
                    depth: proj2d.depth,
                    color,
                    opacity: wr.opacity,
                    tag,
                },
            ))
        })
        .collect();
    let mut kept = Vec::new();
    let mut splats = Vec::new();
    for item in projected.into_iter().flatten() {
        kept.push(item.0);
        splats.push(item.1);
    }

    // Local per-Gaussian appearance refinement.
    let mut local_cache = None;
    if settings.local_refine && !kept.is_empty() {
        let positions_unit: Vec<Vector3<f64>> =
            kept.iter().map(|k| scene.aabb.normalize(&k.mu_world)).collect();
        let h_dc: Vec<Vector3<f64>> = kept
            .iter()
            .map(|k| {
                let block = sh_block(k.source, k.local as usize);
                Vector3::new(block[0], block[1], block[2])
            })
            .collect();
        let colors: Vec<Vector3<f64>> = splats.iter().map(|s| s.color).collect();
        let (refined, cache) = local_refine_forward(
            &scene.hash,
            &scene.d_local,
            scene.embeddings.row(embed_row),
            &positions_unit,
            &h_dc,
            &colors,
        )?;
        for (s, c) in splats.iter_mut().zip(refined) {
            s.color = c;
        }
        local_cache = Some(cache);
    }

    // Sky image + bilinear caches for the backward pass.
    let (w, h) = (cam.width, cam.height);
    let sky_data: Vec<(Vector3<f64>, crate::actors::SkyCache)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let dir = cam.ray_dir_world(i % w, i / w);
            scene.sky.sample(&dir)
        })
        .collect();
    let mut sky_img = ImageRgb::zeros(w, h);
    let mut sky_caches = Vec::with_capacity(w * h);
    for (i, (c, cache)) in sky_data.into_iter().enumerate() {
        sky_img.data[i] = c;
        sky_caches.push(cache);
    }

    let (raster_out, raster_cache) =
        rasterize_forward(&splats, w, h, |x, y| sky_img.at(x, y));

    // Global image-level refinement.
    let mut global_cache = None;
    let rgb_final = if settings.global_refine {
        let (refined, cache) = global_refine_forward(
            &scene.d_global,
            scene.embeddings.row(embed_row),
            cam,
            &raster_out.rgb,
        )?;
        global_cache = Some(cache);
        refined
    } else {
        raster_out.rgb.clone()
    };

    let output = RenderOutput {
        rgb: rgb_final,
        raw_rgb: raster_out.rgb,
        depth: raster_out.depth,
        acc_alpha: raster_out.acc_alpha,
        actor_alpha: raster_out.actor_alpha,
    };
    let cache = RenderCache {
        settings: *settings,
        embed_row,
        camera: cam.clone(),
        kept,
        actor_fwd,
        local_cache,
        global_cache,
        raster: raster_cache,
        sky_caches,
        width: w,
        height: h,
    };
    Ok((output, cache))
}

/// Backward through the whole pipeline. Upstream gradients are w.r.t. the
/// final refined image and the auxiliary channels.
pub fn render_backward(
    scene: &SceneModel,
    cache: &RenderCache,
    d_rgb_final: &ImageRgb,
    d_depth: &ImagePlane,
    d_acc: &ImagePlane,
    d_actor: &ImagePlane,
) -> SceneGrads {
    let mut grads = SceneGrads::zeros(scene);
    let embed_row = cache.embed_row;
    let edim = scene.embeddings.dim;

    // Global refinement backward.
    let d_raw_owned;
    let d_raw: &ImageRgb = if let Some(gc) = cache.global_cache.as_ref() {
        let (d_img, g) = global_refine_backward(&scene.d_global, gc, d_rgb_final);
        grads.d_global.add(&g.d_mlp);
        for k in 0..edim {
            grads.embeddings[embed_row * edim + k] += g.d_embedding[k];
        }
        d_raw_owned = d_img;
        &d_raw_owned
    } else {
        d_rgb_final
    };

    // Rasterizer backward.
    let (splat_grads, d_sky_img) = rasterize_backward(
        &cache.raster,
        &RasterUpstream {
            d_rgb: d_raw,
            d_depth,
            d_acc,
            d_actor,
        },
    );

    // Sky texel gradients.
    for (i, g) in d_sky_img.data.iter().enumerate() {
        if g.norm_squared() > 0.0 {
            scene.sky.sample_vjp(&cache.sky_caches[i], g, &mut grads.sky);
        }
    }

    // Local refinement backward (batched), yielding base-color gradients.
    let SplatGrads {
        d_color,
        d_center,
        d_cov2d,
        d_opacity,
        d_depth: d_depth_splat,
    } = splat_grads;
    let (d_base_colors, d_dc_extra, d_pos_unit_extra) = if let Some(lc) = &cache.local_cache {
        let (d_base, lg) = local_refine_backward(&scene.hash, &scene.d_local, lc, &d_color);
        grads.d_local.add(&lg.d_mlp);
        for k in 0..edim {
            grads.embeddings[embed_row * edim + k] += lg.d_embedding[k];
        }
        for (dst, src) in grads.hash_tables.iter_mut().zip(&lg.d_hash_tables) {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += *b;
            }
        }
        (d_base, Some(lg.d_dc_coeff), Some(lg.d_positions_unit))
    } else {
        (d_color, None, None)
    };
    let aabb_extent = scene.aabb.extent();

    // Per-actor accumulation buffers for the deformation backward.
    let degree = scene.cfg.sh_degree;
    let bands = crate::geometry::sh::coeff_count(degree);
    let mut actor_d_mu_prime: Vec<Vec<f64>> = scene
        .actors
        .iter()
        .map(|a| vec![0.0; a.gaussians.positions.len()])
        .collect();
    let mut actor_d_sh_prime: Vec<Vec<f64>> = scene
        .actors
        .iter()
        .map(|a| vec![0.0; a.gaussians.sh.len()])
        .collect();

    let half_w = cache.width as f64 * 0.5;
    let half_h = cache.height as f64 * 0.5;
    let mut coeff_grads = vec![Vector3::<f64>::zeros(); bands];

    for (ki, ks) in cache.kept.iter().enumerate() {
        // SH color chain.
        let block_coeffs: Vec<Vector3<f64>> = if ks.source == 0 {
            scene.background.sh_bands_vec(ks.local as usize)
        } else {
            let ai = (ks.source - 1) as usize;
            let stride = scene.actors[ai].gaussians.sh_stride();
            let sh = &cache.actor_fwd[ai].as_ref().unwrap().sh_prime;
            (0..bands)
                .map(|b| {
                    let o = ks.local as usize * stride + b * 3;
                    Vector3::new(sh[o], sh[o + 1], sh[o + 2])
                })
                .collect()
        };
        for g in coeff_grads.iter_mut() {
            *g = Vector3::zeros();
        }
        let d_dir = eval_sh_color_vjp(
            &block_coeffs,
            &ks.view_dir,
            degree,
            &ks.sh_cache,
            &d_base_colors[ki],
            &mut coeff_grads,
        );
        if let Some(dc) = &d_dc_extra {
            coeff_grads[0] += dc[ki];
        }
        let mut d_mu_world = view_direction_vjp(&ks.view_dir, ks.view_norm, &d_dir);
        if let Some(dp) = &d_pos_unit_extra {
            // p_unit = (mu_world - aabb.min) / extent.
            d_mu_world += Vector3::new(
                dp[ki].x / aabb_extent.x,
                dp[ki].y / aabb_extent.y,
                dp[ki].z / aabb_extent.z,
            );
        }

        // Projection chain.
        let (d_mu_proj, d_sigma) = project_gaussian_vjp(
            &ks.sigma,
            &cache.camera,
            &ks.proj,
            &d_center[ki],
            &d_cov2d[ki],
            d_depth_splat[ki],
        );
        d_mu_world += d_mu_proj;
        let (d_rot_world, d_scale) = build_covariance_vjp(&ks.rot_world, &ks.scale, &d_sigma);
        let d_logit = d_opacity[ki] * d_sigmoid_from_value(ks.opacity);

        // View-space positional gradient norm (densification statistic).
        let vs = Vector2::new(d_center[ki].x * half_w, d_center[ki].y * half_h).norm();

        if ks.source == 0 {
            let i = ks.local as usize;
            grads.background.add_position(i, &d_mu_world);
            grads.background.add_rotation(i, &d_rot_world);
            grads
                .background
                .add_log_scale(i, &d_scale.component_mul(&ks.scale));
            grads.background.opacity_logits[i] += d_logit;
            let stride = scene.background.sh_stride();
            for (b, g) in coeff_grads.iter().enumerate() {
                grads.background.add_sh_band(i, b, stride, g);
            }
            grads.view_grad_bg[i] += vs;
        } else {
            let ai = (ks.source - 1) as usize;
            let i = ks.local as usize;
            let actor = &scene.actors[ai];
            let fwd = cache.actor_fwd[ai].as_ref().unwrap();
            let mu_obj = Vector3::new(
                fwd.mu_prime[3 * i],
                fwd.mu_prime[3 * i + 1],
                fwd.mu_prime[3 * i + 2],
            );
            let tw = actor_to_world_vjp(
                &mu_obj,
                &actor.gaussians.rotation(i),
                &fwd.pose_rot,
                &d_mu_world,
                &d_rot_world,
            );
            let ag = &mut grads.actors[ai];
            for k in 0..3 {
                actor_d_mu_prime[ai][3 * i + k] += tw.d_mu_obj[k];
            }
            ag.gaussians.add_rotation(i, &tw.d_rot_obj);
            ag.gaussians
                .add_log_scale(i, &d_scale.component_mul(&ks.scale));
            ag.gaussians.opacity_logits[i] += d_logit;
            let stride = actor.gaussians.sh_stride();
            for (b, g) in coeff_grads.iter().enumerate() {
                let o = i * stride + b * 3;
                actor_d_sh_prime[ai][o] += g.x;
                actor_d_sh_prime[ai][o + 1] += g.y;
                actor_d_sh_prime[ai][o + 2] += g.z;
            }
            if let Some(k) = fwd.pose_key {
                for d in 0..4 {
                    ag.pose_rot[4 * k + d] += tw.d_pose_rot[d];
                }
                for d in 0..3 {
                    ag.pose_trans[3 * k + d] += tw.d_pose_trans[d];
                }
            }
            grads.view_grad_actors[ai][i] += vs;
        }
    }

    // Deformation backward per actor: identity paths plus the head/encoder.
    for (ai, fwdo) in cache.actor_fwd.iter().enumerate() {
        let Some(fwd) = fwdo else { continue };
        let actor = &scene.actors[ai];
        let n = actor.gaussians.len();
        if n == 0 {
            continue;
        }
        let stride = actor.gaussians.sh_stride();
        let ag = &mut grads.actors[ai];
        // μ' = μ + Δμ and h' = h + Δh: identity into the base parameters.
        for (dst, src) in ag.gaussians.positions.iter_mut().zip(&actor_d_mu_prime[ai]) {
            *dst += *src;
        }
        for (dst, src) in ag.gaussians.sh.iter_mut().zip(&actor_d_sh_prime[ai]) {
            *dst += *src;
        }
        let (Some(enc_cache), Some(head_cache)) = (&fwd.enc_cache, &fwd.head_cache) else {
            continue;
        };
        let mut d_delta = DMatrix::zeros(3 + stride, n);
        for i in 0..n {
            for k in 0..3 {
                d_delta[(k, i)] = actor_d_mu_prime[ai][3 * i + k];
            }
            for k in 0..stride {
                d_delta[(3 + k, i)] = actor_d_sh_prime[ai][stride * i + k];
            }
        }
        let (head_grads, d_fa) = scene.d_deform_head.backward(head_cache, &d_delta);
        grads.d_deform_head.add(&head_grads);
        let (enc_grads, d_x) = scene.d_actor_enc.backward(enc_cache, &d_fa);
        grads.d_actor_enc.add(&enc_grads);
        // Encoder input gradients: position via the encoding, SH directly.
        let pos_dim = scene.cfg.actor_pos_dim();
        let time_dim = 2 * scene.cfg.sin_freqs;
        match scene.cfg.actor_encoding {
            ActorEncoding::Sinusoidal => {
                let half = actor.size * 0.5;
                let mut d_enc = vec![0.0; pos_dim];
                for i in 0..n {
                    for k in 0..pos_dim {
                        d_enc[k] = d_x[(k, i)];
                    }
                    let p = actor.gaussians.position(i);
                    let pn = [p.x / half.x, p.y / half.y, p.z / half.z];
                    let d_pn = crate::encoders::sin_encode_vjp(&pn, scene.cfg.sin_freqs, &d_enc);
                    ag.gaussians.add_position(
                        i,
                        &Vector3::new(d_pn[0] / half.x, d_pn[1] / half.y, d_pn[2] / half.z),
                    );
                }
            }
            ActorEncoding::ClassHash => {
                if let (Some(caches), Some((tables, mcache)), Some(encoder)) = (
                    &fwd.pos_hash_caches,
                    &fwd.class_tables,
                    scene.class_encoder.as_ref(),
                ) {
                    let cfgh = &scene.cfg.actor_hash;
                    let mut d_tables: Vec<Vec<f64>> =
                        tables.iter().map(|t| vec![0.0; t.len()]).collect();
                    let mut feat = vec![0.0; pos_dim];
                    for i in 0..n {
                        for k in 0..pos_dim {
                            feat[k] = d_x[(k, i)];
                        }
                        encode_vjp_with_tables(cfgh, &caches[i], &feat, &mut d_tables);
                        let d_p01 =
                            crate::encoders::hash_position_vjp(cfgh, tables, &caches[i], &feat);
                        // p01 = mu / size + 0.5.
                        ag.gaussians.add_position(
                            i,
                            &Vector3::new(
                                d_p01.x / actor.size.x,
                                d_p01.y / actor.size.y,
                                d_p01.z / actor.size.z,
                            ),
                        );
                    }
                    let (enc_g, d_emb) = class_hash_tables_vjp(encoder, mcache, &d_tables, cfgh);
                    if let Some(ceg) = grads.class_encoder.as_mut() {
                        ceg.add(&enc_g);
                    }
                    let cdim = scene.class_embeddings.dim;
                    for k in 0..cdim {
                        grads.class_embeddings[fwd.class_idx * cdim + k] += d_emb[k];
                    }
                }
            }
        }
        // SH feeds the encoder input as well: h' = h + Δh(…, h, …).
        for i in 0..n {
            for k in 0..stride {
                ag.gaussians.sh[stride * i + k] += d_x[(pos_dim + time_dim + k, i)];
            }
        }
    }

    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actors::ActorModel;
    use crate::gaussians::GaussianSet;
    use crate::geometry::logit;
    use crate::losses::{loss_total, LossTargets, LossWeights};
    use crate::scene::{Aabb, ModelConfig};
    use crate::encoders::{FrameKey, HashGridConfig};
    use nalgebra::Matrix4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_camera() -> Camera {
        Camera {
            width: 24,
            height: 24,
            fx: 30.0,
            fy: 30.0,
            cx: 12.0,
            cy: 12.0,
            world_from_camera: Matrix4::identity(),
            camera_index: 0,
            timestamp: 0.5,
        }
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            sh_degree: 1,
            embed_dim: 4,
            class_embed_dim: 4,
            mlp_hidden: 16,
            sin_freqs: 3,
            actor_encoding: crate::scene::ActorEncoding::Sinusoidal,
            hash: HashGridConfig {
                levels: 2,
                features: 2,
                log2_table_size: 8,
                base_resolution: 4,
                growth_factor: 2.0,
            },
            actor_hash: HashGridConfig {
                levels: 2,
                features: 2,
                log2_table_size: 6,
                base_resolution: 4,
                growth_factor: 1.5,
            },
            cubemap_size: 4,
        }
    }

    /// Two background Gaussians plus a one-keyframe actor with two Gaussians.
    fn build_scene(cfg: ModelConfig) -> SceneModel {
        let mut bg = GaussianSet::empty(cfg.sh_degree);
        let stride = bg.sh_stride();
        let mut sh1 = vec![0.0; stride];
        sh1[0] = 0.6;
        sh1[1] = -0.2;
        sh1[2] = 0.3;
        sh1[3] = 0.1; // a band-1 coefficient
        bg.push(
            Vector3::new(-0.45, 0.12, 4.0),
            Vector4::new(0.95, 0.08, -0.12, 0.1),
            Vector3::new(-1.1, -1.4, -1.2),
            logit(0.6),
            &sh1,
        );
        let mut sh2 = vec![0.0; stride];
        sh2[0] = -0.3;
        sh2[1] = 0.5;
        sh2[2] = 0.15;
        sh2[5] = -0.08;
        bg.push(
            Vector3::new(0.5, -0.3, 5.5),
            Vector4::new(0.9, -0.15, 0.2, 0.05),
            Vector3::new(-1.3, -1.0, -1.5),
            logit(0.45),
            &sh2,
        );

        let mut ag = GaussianSet::empty(cfg.sh_degree);
        let mut sh3 = vec![0.0; stride];
        sh3[0] = 0.4;
        sh3[1] = 0.4;
        sh3[2] = -0.25;
        ag.push(
            Vector3::new(0.1, 0.05, -0.08),
            Vector4::new(0.92, 0.1, 0.15, -0.08),
            Vector3::new(-1.5, -1.6, -1.4),
            logit(0.5),
            &sh3,
        );
        let mut sh4 = vec![0.0; stride];
        sh4[0] = -0.1;
        sh4[1] = 0.2;
        sh4[2] = 0.6;
        ag.push(
            Vector3::new(-0.12, -0.06, 0.1),
            Vector4::new(1.0, 0.0, 0.0, 0.0),
            Vector3::new(-1.7, -1.3, -1.5),
            logit(0.35),
            &sh4,
        );
        let actor = ActorModel {
            id: 0,
            class: "vehicle".into(),
            size: Vector3::new(1.0, 1.0, 1.0),
            gaussians: ag,
            key_times: vec![0.5],
            key_rotations: vec![0.98, 0.05, -0.1, 0.15],
            key_translations: vec![0.3, 0.25, 4.5],
        };
        let keys = vec![FrameKey {
            camera_index: 0,
            timestamp: 0.5,
        }];
        SceneModel::new(
            cfg,
            Aabb {
                min: [-3.0, -3.0, 0.0],
                max: [3.0, 3.0, 8.0],
            },
            bg,
            vec![actor],
            keys,
            42,
        )
        .unwrap()
    }

    /// Give every zero-initialized output layer small nonzero weights so
    /// gradients flow through each path during finite differencing.
    fn randomize_heads(scene: &mut SceneModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut fill = |mlp: &mut crate::encoders::Mlp, scale: f64| {
            let last = mlp.layers.len() - 1;
            for v in mlp.layers[last].w.iter_mut() {
                *v = rng.gen_range(-scale..scale);
            }
            for v in mlp.layers[last].b.iter_mut() {
                *v = rng.gen_range(-scale..scale);
            }
        };
        fill(&mut scene.d_local, 0.05);
        fill(&mut scene.d_global, 0.05);
        fill(&mut scene.d_deform_head, 0.02);
        // Texels away from the initial flat 0.5 so sky gradients are generic.
        for (i, t) in scene.sky.texels.iter_mut().enumerate() {
            *t = 0.3 + 0.4 * ((i as f64 * 0.17).sin() * 0.5 + 0.5);
        }
    }

    fn gt_frame(cam: &Camera) -> (ImageRgb, ImagePlane, ImagePlane) {
        let mut img = ImageRgb::zeros(cam.width, cam.height);
        for (i, p) in img.data.iter_mut().enumerate() {
            *p = Vector3::new(
                0.3 + 0.2 * ((i as f64) * 0.05).sin(),
                0.45,
                0.5 - 0.2 * ((i as f64) * 0.03).cos(),
            );
        }
        let mut depth = ImagePlane::zeros(cam.width, cam.height);
        for (i, d) in depth.data.iter_mut().enumerate() {
            // Valid depth on a block of pixels covered by the splats.
            let (x, y) = (i % cam.width, i / cam.width);
            if (8..16).contains(&x) && (8..16).contains(&y) {
                *d = 4.5;
            }
        }
        let mut sky = ImagePlane::zeros(cam.width, cam.height);
        for (i, s) in sky.data.iter_mut().enumerate() {
            let (x, y) = (i % cam.width, i / cam.width);
            *s = if x < 4 || y < 4 { 1.0 } else { 0.0 };
        }
        (img, depth, sky)
    }

    fn objective(scene: &SceneModel, cam: &Camera, settings: &RenderSettings) -> f64 {
        let (out, _) = render_forward(scene, cam, Some(0), settings).unwrap();
        let (img, depth, sky) = gt_frame(cam);
        let targets = LossTargets {
            image: &img,
            depth: Some(&depth),
            sky_mask: Some(&sky),
            has_actors: true,
        };
        loss_total(
            &out.rgb,
            &out.depth,
            &out.acc_alpha,
            &out.actor_alpha,
            &targets,
            &LossWeights::default(),
        )
        .unwrap()
        .0
        .total
    }

    fn scene_backward(scene: &SceneModel, cam: &Camera, settings: &RenderSettings) -> SceneGrads {
        let (out, cache) = render_forward(scene, cam, Some(0), settings).unwrap();
        let (img, depth, sky) = gt_frame(cam);
        let targets = LossTargets {
            image: &img,
            depth: Some(&depth),
            sky_mask: Some(&sky),
            has_actors: true,
        };
        let (_, lg) = loss_total(
            &out.rgb,
            &out.depth,
            &out.acc_alpha,
            &out.actor_alpha,
            &targets,
            &LossWeights::default(),
        )
        .unwrap();
        render_backward(scene, &cache, &lg.d_rgb, &lg.d_depth, &lg.d_acc, &lg.d_actor)
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
    }

    #[test]
    fn identity_at_init_is_bitwise() {
        let scene = build_scene(small_config());
        let cam = test_camera();
        let full = RenderSettings {
            sources: SourceFilter::All,
            local_refine: true,
            global_refine: true,
            actor_deform: true,
            near: 0.01,
        };
        let off = RenderSettings::no_refinement(0.01);
        let (a, _) = render_forward(&scene, &cam, Some(0), &full).unwrap();
        let (b, _) = render_forward(&scene, &cam, Some(0), &off).unwrap();
        assert_eq!(a.rgb, b.rgb);
        assert_eq!(a.depth, b.depth);
        assert_eq!(a.acc_alpha, b.acc_alpha);
        assert_eq!(a.actor_alpha, b.actor_alpha);
    }

    #[test]
    fn full_pipeline_gradcheck() {
        let mut scene = build_scene(small_config());
        randomize_heads(&mut scene);
        let cam = test_camera();
        let settings = RenderSettings {
            sources: SourceFilter::All,
            local_refine: true,
            global_refine: true,
            actor_deform: true,
            near: 0.01,
        };
        let grads = scene_backward(&scene, &cam, &settings);
        let h = 1e-5;
        let tol = 1e-3;
        let f0 = objective(&scene, &cam, &settings);
        assert!(f0.is_finite() && f0 > 0.0);

        // Background Gaussian parameters.
        for i in 0..scene.background.len() {
            for k in 0..3 {
                let mut sp = scene.clone();
                let mut sm = scene.clone();
                sp.background.positions[3 * i + k] += h;
                sm.background.positions[3 * i + k] -= h;
                let num =
                    (objective(&sp, &cam, &settings) - objective(&sm, &cam, &settings)) / (2.0 * h);
                let got = grads.background.positions[3 * i + k];
                assert!(rel(got, num) < tol, "bg pos[{i}][{k}]: {got} vs {num}");
            }
            for k in 0..4 {
                let mut sp = scene.clone();
                let mut sm = scene.clone();
                sp.background.rotations[4 * i + k] += h;
                sm.background.rotations[4 * i + k] -= h;
                let num =
                    (objective(&sp, &cam, &settings) - objective(&sm, &cam, &settings)) / (2.0 * h);
                let got = grads.background.rotations[4 * i + k];
                assert!(rel(got, num) < tol, "bg rot[{i}][{k}]: {got} vs {num}");
            }
            for k in 0..3 {
                let mut sp = scene.clone();
                let mut sm = scene.clone();
                sp.background.log_scales[3 * i + k] += h;
                sm.background.log_scales[3 * i + k] -= h;
                let num =
                    (objective(&sp, &cam, &settings) - objective(&sm, &cam, &settings)) / (2.0 * h);
                let got = grads.background.log_scales[3 * i + k];
                assert!(rel(got, num) < tol, "bg scale[{i}][{k}]: {got} vs {num}");
            }
            {
                let mut sp = scene.clone();
                let mut sm = scene.clone();
                sp.background.opacity_logits[i] += h;
                sm.background.opacity_logits[i] -= h;
                let num =
                    (objective(&sp, &cam, &settings) - objective(&sm, &cam, &settings)) / (2.0 * h);
                let got = grads.background.opacity_logits[i];
                assert!(rel(got, num) < tol, "bg opacity[{i}]: {got} vs {num}");
            }
            let stride = scene.background.sh_stride();
            for k in 0..stride {
                let mut sp = scene.clone();
                let mut sm = scene.clone();
                sp.background.sh[stride * i + k] += h;
                sm.background.sh[stride * i + k] -= h;
                let num =
                    (objective(&sp, &cam, &settings) - objective(&sm, &cam, &settings)) / (2.0 * h);
                let got = grads.background.sh[stride * i + k];
                if num.abs().max(got.abs()) > 1e-9 {
                    assert!(rel(got, num) < tol, "bg sh[{i}][{k}]: {got} vs {num}");
                }
            }
        }

        // Actor Gaussians, pose, and deformation paths.
        let ag = &grads.actors[0];
        for i in 0..scene.actors[0].gaussians.len() {
            for k in 0..3 {
                let mut sp = scene.clone();
                let mut sm = scene.clone();
                sp.actors[0].gaussians.positions[3 * i + k] += h;
                sm.actors[0].gaussians.positions[3 * i + k] -= h;
                let num =
                    (objective(&sp, &cam, &settings) - objective(&sm, &cam, &settings)) / (2.0 * h);
                let got = ag.gaussians.positions[3 * i + k];
                assert!(rel(got, num) < tol, "actor pos[{i}][{k}]: {got} vs {num}");
            }
            let stride = scene.actors[0].gaussians.sh_stride();
            for k in [0usize, 1, 2, 4] {
                let mut sp = scene.clone();
                let mut sm = scene.clone();
                sp.actors[0].gaussians.sh[stride * i + k] += h;
                sm.actors[0].gaussians.sh[stride * i + k] -= h;
                let num =
                    (objective(&sp, &cam, &settings) - objective(&sm, &cam, &settings)) / (2.0 * h);
                let got = ag.gaussians.sh[stride * i + k];
                if num.abs().max(got.abs()) > 1e-9 {
                    assert!(rel(got, num) < tol, "actor sh[{i}][{k}]: {got} vs {num}");
                }
            }
        }
        for k in 0..4 {
            let mut sp = scene.clone();
            let mut sm = scene.clone();
            sp.actors[0].key_rotations[k] += h;
            sm.actors[0].key_rotations[k] -= h;
            let num =
                (objective(&sp, &cam, &settings) - objective(&sm, &cam, &settings)) / (2.0 * h);
            let got = ag.pose_rot[k];
            assert!(rel(got, num) < tol, "pose rot[{k}]: {got} vs {num}");
        }
        for k in 0..3 {
            let mut sp = scene.clone();
            let mut sm = scene.clone();
            sp.actors[0].key_translations[k] += h;
            sm.actors[0].key_translations[k] -= h;
            let num =
                (objective(&sp, &cam, &settings) - objective(&sm, &cam, &settings)) / (2.0 * h);
            let got = ag.pose_trans[k];
            assert!(rel(got, num) < tol, "pose trans[{k}]: {got} vs {num}");
        }

        // Frame embedding.
        for k in 0..scene.cfg.embed_dim {
            let mut sp = scene.clone();
            let mut sm = scene.clone();
            sp.embeddings.values[k] += h;
            sm.embeddings.values[k] -= h;
            let num =
                (objective(&sp, &cam, &settings) - objective(&sm, &cam, &settings)) / (2.0 * h);
            let got = grads.embeddings[k];
            assert!(rel(got, num) < tol, "embedding[{k}]: {got} vs {num}");
        }

        // Sky texels: probe a handful with nonzero gradient.
        let mut probed = 0;
        for e in 0..grads.sky.len() {
            if grads.sky[e].abs() > 1e-6 && probed < 6 {
                let mut sp = scene.clone();
                let mut sm = scene.clone();
                sp.sky.texels[e] += h;
                sm.sky.texels[e] -= h;
                let num =
                    (objective(&sp, &cam, &settings) - objective(&sm, &cam, &settings)) / (2.0 * h);
                assert!(rel(grads.sky[e], num) < tol, "sky[{e}]");
                probed += 1;
            }
        }
        assert!(probed >= 3, "sky gradient should touch texels");

        // MLP weights: a few entries in each net.
        let probe_mlp =
            |name: &str,
             get: &dyn Fn(&SceneModel) -> &crate::encoders::Mlp,
             get_mut: &dyn Fn(&mut SceneModel) -> &mut crate::encoders::Mlp,
             g: &MlpGrads| {
                let mlp = get(&scene);
                for l in 0..mlp.layers.len() {
                    let (nr, nc) = (mlp.layers[l].w.nrows(), mlp.layers[l].w.ncols());
                    for t in 0..3 {
                        let r = (t * 5) % nr;
                        let c = (t * 11) % nc;
                        let mut sp = scene.clone();
                        let mut sm = scene.clone();
                        get_mut(&mut sp).layers[l].w[(r, c)] += h;
                        get_mut(&mut sm).layers[l].w[(r, c)] -= h;
                        let num = (objective(&sp, &cam, &settings)
                            - objective(&sm, &cam, &settings))
                            / (2.0 * h);
                        let got = g.layers[l].0[(r, c)];
                        if num.abs().max(got.abs()) > 1e-9 {
                            assert!(rel(got, num) < tol, "{name} w[{l}][{r},{c}]: {got} vs {num}");
                        }
                    }
                }
            };
        probe_mlp("d_local", &|s| &s.d_local, &|s| &mut s.d_local, &grads.d_local);
        probe_mlp("d_global", &|s| &s.d_global, &|s| &mut s.d_global, &grads.d_global);
        probe_mlp(
            "d_actor_enc",
            &|s| &s.d_actor_enc,
            &|s| &mut s.d_actor_enc,
            &grads.d_actor_enc,
        );
        probe_mlp(
            "d_deform_head",
            &|s| &s.d_deform_head,
            &|s| &mut s.d_deform_head,
            &grads.d_deform_head,
        );

        // Hash table entries touched by the forward pass.
        let mut probed = 0;
        for level in 0..grads.hash_tables.len() {
            for e in 0..grads.hash_tables[level].len() {
                if grads.hash_tables[level][e].abs() > 1e-9 && probed < 5 {
                    let mut sp = scene.clone();
                    let mut sm = scene.clone();
                    sp.hash.tables[level][e] += h;
                    sm.hash.tables[level][e] -= h;
                    let num = (objective(&sp, &cam, &settings)
                        - objective(&sm, &cam, &settings))
                        / (2.0 * h);
                    assert!(rel(grads.hash_tables[level][e], num) < tol, "hash[{level}][{e}]");
                    probed += 1;
                }
            }
        }
        assert!(probed >= 3, "hash gradient should touch entries");
    }

    #[test]
    fn embedding_gradient_nonzero_for_visible_frame() {
        let mut scene = build_scene(small_config());
        randomize_heads(&mut scene);
        let cam = test_camera();
        let settings = RenderSettings {
            sources: SourceFilter::All,
            local_refine: true,
            global_refine: true,
            actor_deform: true,
            near: 0.01,
        };
        let grads = scene_backward(&scene, &cam, &settings);
        let norm: f64 = grads.embeddings.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm > 1e-9);
    }

    #[test]
    fn class_hash_variant_gradcheck() {
        let mut cfg = small_config();
        cfg.actor_encoding = crate::scene::ActorEncoding::ClassHash;
        let mut scene = build_scene(cfg);
        randomize_heads(&mut scene);
        // Nonzero class encoder head so tables are nontrivial.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        if let Some(enc) = scene.class_encoder.as_mut() {
            let last = enc.layers.len() - 1;
            for v in enc.layers[last].w.iter_mut() {
                *v = rng.gen_range(-0.01..0.01);
            }
        }
        let cam = test_camera();
        let settings = RenderSettings {
            sources: SourceFilter::All,
            local_refine: false,
            global_refine: false,
            actor_deform: true,
            near: 0.01,
        };
        let grads = scene_backward(&scene, &cam, &settings);
        let h = 1e-5;
        // Class embedding path.
        let mut any = false;
        for k in 0..scene.cfg.class_embed_dim {
            let got = grads.class_embeddings[k];
            if got.abs() < 1e-10 {
                continue;
            }
            any = true;
            let mut sp = scene.clone();
            let mut sm = scene.clone();
            sp.class_embeddings.values[k] += h;
            sm.class_embeddings.values[k] -= h;
            let num =
                (objective(&sp, &cam, &settings) - objective(&sm, &cam, &settings)) / (2.0 * h);
            assert!(rel(got, num) < 2e-3, "class embedding[{k}]: {got} vs {num}");
        }
        assert!(any, "class embedding gradient should be nonzero");
    }

    #[test]
    fn decomposition_alpha_algebra() {
        let mut scene = build_scene(small_config());
        randomize_heads(&mut scene);
        let cam = test_camera();
        let full = RenderSettings {
            sources: SourceFilter::All,
            local_refine: true,
            global_refine: true,
            actor_deform: true,
            near: 0.01,
        };
        let mut bg_only = full;
        bg_only.sources = SourceFilter::BackgroundOnly;
        let mut actors_only = full;
        actors_only.sources = SourceFilter::ActorsOnly;
        let (f, _) = render_forward(&scene, &cam, Some(0), &full).unwrap();
        let (b, _) = render_forward(&scene, &cam, Some(0), &bg_only).unwrap();
        let (a, _) = render_forward(&scene, &cam, Some(0), &actors_only).unwrap();
        for i in 0..f.acc_alpha.data.len() {
            let composite =
                1.0 - (1.0 - b.acc_alpha.data[i]) * (1.0 - a.acc_alpha.data[i]);
            assert!(
                (composite - f.acc_alpha.data[i]).abs() <= 1e-6,
                "pixel {i}: composite {composite} vs full {}",
                f.acc_alpha.data[i]
            );
            // Actor-alpha channel only counts actor splats.
            assert!(f.actor_alpha.data[i] <= f.acc_alpha.data[i] + 1e-12);
        }
    }
}
