//! Synthetic scene generator with an analytic reference renderer. Produces
//! datasets with exact depth, sky masks and actor boxes plus known per-frame
//! appearance perturbations, and the brute-force blending oracle used to
//! check the tile rasterizer.
//!
//! World convention: z up, ground plane z = 0, cameras dolly along +x.

use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::img::{ImagePlane, ImageRgb};
use crate::rasterizer::{alpha_blend_pixel, prep_splats, RasterOutput, Splat};
use crate::scene::{Aabb, PointCloud};
use crate::scene_io::{
    pfm::write_pfm, ply::write_point_cloud, write_png_mask, write_png_rgb, ActorJson, CameraJson,
    KeyframeJson, SceneJson,
};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GroundSpec {
    /// Extent along x and y, meters.
    pub size_x: f64,
    pub size_y: f64,
    /// Checker tile edge, meters.
    pub checker: f64,
    pub color_a: [f64; 3],
    pub color_b: [f64; 3],
}

impl Default for GroundSpec {
    fn default() -> Self {
        GroundSpec {
            size_x: 48.0,
            size_y: 20.0,
            checker: 2.0,
            color_a: [0.55, 0.52, 0.48],
            color_b: [0.26, 0.3, 0.34],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub center: [f64; 3],
    /// Full extents.
    pub size: [f64; 3],
    /// Rotation about z, radians.
    pub yaw: f64,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ActorSpec {
    pub class: String,
    pub size: [f64; 3],
    /// Box-center trajectory endpoints (linear in normalized time).
    pub start: [f64; 3],
    pub end: [f64; 3],
    pub yaw: f64,
    pub color: [f64; 3],
    /// Color pulsing amplitude: c(t) = c0 * (1 + a * sin(2πt)).
    pub pulse_amp: f64,
}

impl Default for ActorSpec {
    fn default() -> Self {
        ActorSpec {
            class: "vehicle".into(),
            size: [2.4, 1.2, 1.2],
            start: [8.0, 1.6, 0.6],
            end: [18.0, 1.6, 0.6],
            yaw: 0.0,
            color: [0.75, 0.18, 0.12],
            pulse_amp: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CameraPathSpec {
    /// Dolly start/end positions.
    pub start: [f64; 3],
    pub end: [f64; 3],
    /// Lateral separation between virtual cameras, meters.
    pub rig_spacing: f64,
    /// Focal length in pixels at the spec'd resolution.
    pub focal: f64,
}

impl Default for CameraPathSpec {
    fn default() -> Self {
        CameraPathSpec {
            start: [0.0, -1.0, 1.4],
            end: [8.0, -1.0, 1.4],
            rig_spacing: 0.8,
            focal: 70.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Distinct timestamps; total frames = n_timestamps * n_cameras.
    pub n_timestamps: usize,
    pub n_cameras: usize,
    pub camera: CameraPathSpec,
    pub ground: GroundSpec,
    pub boxes: Vec<BoxSpec>,
    pub actors: Vec<ActorSpec>,
    pub sky_color: [f64; 3],
    /// Per-frame global gain jitter amplitude: g in [1-a, 1+a].
    pub gain_jitter: f64,
    /// Per-frame tint amplitude applied to surfaces in the y < 0 world
    /// region (exercises spatially local appearance changes).
    pub region_tint: f64,
    /// Surface samples emitted to points.ply.
    pub n_points: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 7,
            width: 96,
            height: 96,
            n_timestamps: 12,
            n_cameras: 2,
            camera: CameraPathSpec::default(),
            ground: GroundSpec::default(),
            boxes: vec![
                BoxSpec {
                    center: [10.0, -4.0, 1.0],
                    size: [2.0, 2.0, 2.0],
                    yaw: 0.3,
                    color: [0.2, 0.45, 0.7],
                },
                BoxSpec {
                    center: [16.0, 4.5, 1.5],
                    size: [2.5, 2.0, 3.0],
                    yaw: -0.2,
                    color: [0.7, 0.6, 0.2],
                },
                BoxSpec {
                    center: [24.0, -3.0, 2.0],
                    size: [3.0, 2.0, 4.0],
                    yaw: 0.0,
                    color: [0.5, 0.25, 0.55],
                },
            ],
            actors: vec![ActorSpec::default()],
            sky_color: [0.45, 0.62, 0.85],
            gain_jitter: 0.2,
            region_tint: 0.15,
            n_points: 4000,
        }
    }
}

impl SyntheticSpec {
    /// The appearance benchmark: gain jitter plus region tint (criterion
    /// ablation scenes).
    pub fn preset_appearance() -> SyntheticSpec {
        SyntheticSpec::default()
    }

    /// A color-pulsing moving actor with no global appearance jitter.
    pub fn preset_actor_pulse() -> SyntheticSpec {
        SyntheticSpec {
            seed: 11,
            width: 64,
            height: 64,
            n_timestamps: 16,
            n_cameras: 1,
            camera: CameraPathSpec {
                start: [0.0, 0.0, 1.2],
                end: [2.0, 0.0, 1.2],
                rig_spacing: 0.0,
                focal: 52.0,
            },
            actors: vec![ActorSpec {
                size: [2.0, 1.2, 1.2],
                start: [8.0, -2.0, 0.6],
                end: [8.0, 2.5, 0.6],
                color: [0.7, 0.25, 0.2],
                pulse_amp: 0.35,
                ..ActorSpec::default()
            }],
            gain_jitter: 0.0,
            region_tint: 0.0,
            n_points: 2500,
            ..SyntheticSpec::default()
        }
    }

    /// Small scene for pose-optimization experiments.
    pub fn preset_pose() -> SyntheticSpec {
        SyntheticSpec {
            seed: 13,
            width: 48,
            height: 48,
            n_timestamps: 8,
            n_cameras: 1,
            camera: CameraPathSpec {
                start: [0.0, 0.0, 1.2],
                end: [1.0, 0.0, 1.2],
                rig_spacing: 0.0,
                focal: 40.0,
            },
            boxes: vec![BoxSpec {
                center: [12.0, -3.5, 1.0],
                size: [2.0, 2.0, 2.0],
                yaw: 0.0,
                color: [0.2, 0.45, 0.7],
            }],
            actors: vec![ActorSpec {
                size: [2.4, 1.4, 1.4],
                start: [7.0, -1.2, 0.7],
                end: [10.0, 1.2, 0.7],
                color: [0.75, 0.2, 0.15],
                pulse_amp: 0.0,
                ..ActorSpec::default()
            }],
            gain_jitter: 0.0,
            region_tint: 0.0,
            n_points: 2000,
            ..SyntheticSpec::default()
        }
    }

    pub fn preset(name: &str) -> Result<SyntheticSpec> {
        match name {
            "appearance" => Ok(SyntheticSpec::preset_appearance()),
            "actor-pulse" => Ok(SyntheticSpec::preset_actor_pulse()),
            "pose" => Ok(SyntheticSpec::preset_pose()),
            _ => Err(Error::InvalidParameter(format!(
                "unknown preset '{name}' (appearance|actor-pulse|pose)"
            ))),
        }
    }

    fn timestamp(&self, k: usize) -> f64 {
        if self.n_timestamps <= 1 {
            0.0
        } else {
            k as f64 / (self.n_timestamps - 1) as f64
        }
    }

    /// Camera pose: dolly along start→end, rig offset along +y, looking +x.
    fn camera_at(&self, cam_index: usize, t: f64) -> Camera {
        let s = Vector3::from(self.camera.start);
        let e = Vector3::from(self.camera.end);
        let mut pos = s + (e - s) * t;
        pos.y += cam_index as f64 * self.camera.rig_spacing;
        // Camera axes in world: right = -y, down = -z, forward = +x.
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::new(
            0.0, 0.0, 1.0, //
            -1.0, 0.0, 0.0, //
            0.0, -1.0, 0.0,
        ));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&pos);
        Camera {
            width: self.width,
            height: self.height,
            fx: self.camera.focal,
            fy: self.camera.focal,
            cx: self.width as f64 / 2.0,
            cy: self.height as f64 / 2.0,
            world_from_camera: m,
            camera_index: cam_index as u32,
            timestamp: t,
        }
    }

    fn actor_center(&self, a: &ActorSpec, t: f64) -> Vector3<f64> {
        Vector3::from(a.start) + (Vector3::from(a.end) - Vector3::from(a.start)) * t
    }

    fn actor_color(&self, a: &ActorSpec, t: f64) -> Vector3<f64> {
        let f = 1.0 + a.pulse_amp * (2.0 * std::f64::consts::PI * t).sin();
        Vector3::from(a.color).map(|c: f64| (c * f).clamp(0.0, 1.0))
    }

    pub fn aabb(&self) -> Aabb {
        let g = &self.ground;
        Aabb {
            min: [-g.size_x * 0.1, -g.size_y * 0.5, -0.5],
            max: [g.size_x, g.size_y * 0.5, 8.0],
        }
    }
}

struct Hit {
    t_ray: f64,
    point: Vector3<f64>,
    color: Vector3<f64>,
}

fn checker_color(g: &GroundSpec, x: f64, y: f64) -> Vector3<f64> {
    let parity = ((x / g.checker).floor() as i64 + (y / g.checker).floor() as i64).rem_euclid(2);
    if parity == 0 {
        Vector3::from(g.color_a)
    } else {
        Vector3::from(g.color_b)
    }
}

fn intersect_ground(spec: &SyntheticSpec, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
    if d.z.abs() < 1e-12 {
        return None;
    }
    let t = -o.z / d.z;
    if t <= 1e-6 {
        return None;
    }
    let p = o + d * t;
    let g = &spec.ground;
    if p.x < -g.size_x * 0.1 || p.x > g.size_x || p.y.abs() > g.size_y * 0.5 {
        return None;
    }
    Some(Hit {
        t_ray: t,
        point: p,
        color: checker_color(g, p.x, p.y),
    })
}

/// Slab test against a yaw-rotated box.
fn intersect_box(
    center: &Vector3<f64>,
    size: &Vector3<f64>,
    yaw: f64,
    color: &Vector3<f64>,
    o: &Vector3<f64>,
    d: &Vector3<f64>,
) -> Option<Hit> {
    let (s, c) = yaw.sin_cos();
    let to_box = |v: &Vector3<f64>| Vector3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z);
    let ob = to_box(&(o - center));
    let db = to_box(d);
    let half = size * 0.5;
    let mut t0 = 1e-6f64;
    let mut t1 = f64::INFINITY;
    for ax in 0..3 {
        if db[ax].abs() < 1e-12 {
            if ob[ax].abs() > half[ax] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / db[ax];
        let (mut a, mut b) = ((-half[ax] - ob[ax]) * inv, (half[ax] - ob[ax]) * inv);
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        t0 = t0.max(a);
        t1 = t1.min(b);
        if t0 > t1 {
            return None;
        }
    }
    let t = t0.max(1e-6);
    if !(t < t1 || (t0 <= 1e-6 && t1 > 1e-6)) {
        return None;
    }
    Some(Hit {
        t_ray: t,
        point: o + d * t,
        color: *color,
    })
}

/// Analytic render of one frame: exact RGB (with gain/tint), depth and sky mask.
fn trace_frame(
    spec: &SyntheticSpec,
    cam: &Camera,
    t: f64,
    gain: f64,
    tint: &Vector3<f64>,
) -> (ImageRgb, ImagePlane, ImagePlane) {
    let mut rgb = ImageRgb::zeros(spec.width, spec.height);
    let mut depth = ImagePlane::zeros(spec.width, spec.height);
    let mut sky = ImagePlane::zeros(spec.width, spec.height);
    let origin = cam.center();
    let forward = cam.optical_axis();
    for py in 0..spec.height {
        for px in 0..spec.width {
            let dir = cam.ray_dir_world(px, py);
            let mut best: Option<Hit> = intersect_ground(spec, &origin, &dir);
            for b in &spec.boxes {
                if let Some(h) = intersect_box(
                    &Vector3::from(b.center),
                    &Vector3::from(b.size),
                    b.yaw,
                    &Vector3::from(b.color),
                    &origin,
                    &dir,
                ) {
                    if best.as_ref().is_none_or(|cur| h.t_ray < cur.t_ray) {
                        best = Some(h);
                    }
                }
            }
            for a in &spec.actors {
                let color = self_actor_color(spec, a, t);
                if let Some(h) = intersect_box(
                    &spec.actor_center(a, t),
                    &Vector3::from(a.size),
                    a.yaw,
                    &color,
                    &origin,
                    &dir,
                ) {
                    if best.as_ref().is_none_or(|cur| h.t_ray < cur.t_ray) {
                        best = Some(h);
                    }
                }
            }
            match best {
                Some(h) => {
                    let mut c = h.color;
                    if h.point.y < 0.0 {
                        c = c.component_mul(tint);
                    }
                    *rgb.at_mut(px, py) = (c * gain).map(|v: f64| v.clamp(0.0, 1.0));
                    *depth.at_mut(px, py) = (h.point - origin).dot(&forward);
                }
                None => {
                    *rgb.at_mut(px, py) =
                        (Vector3::from(spec.sky_color) * gain).map(|v: f64| v.clamp(0.0, 1.0));
                    *sky.at_mut(px, py) = 1.0;
                }
            }
        }
    }
    (rgb, depth, sky)
}

fn self_actor_color(spec: &SyntheticSpec, a: &ActorSpec, t: f64) -> Vector3<f64> {
    spec.actor_color(a, t)
}

/// Uniform surface samples of ground, boxes and first-keyframe actors.
fn sample_points(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> PointCloud {
    let mut cloud = PointCloud::default();
    let g = &spec.ground;
    let n_ground = spec.n_points / 2;
    for _ in 0..n_ground {
        let x = rng.gen_range(-g.size_x * 0.1..g.size_x);
        let y = rng.gen_range(-g.size_y * 0.5..g.size_y * 0.5);
        cloud.positions.push(Vector3::new(x, y, 0.0));
        cloud.colors.push(checker_color(g, x, y));
    }
    let mut surfaces: Vec<(Vector3<f64>, Vector3<f64>, f64, Vector3<f64>)> = spec
        .boxes
        .iter()
        .map(|b| {
            (
                Vector3::from(b.center),
                Vector3::from(b.size),
                b.yaw,
                Vector3::from(b.color),
            )
        })
        .collect();
    for a in &spec.actors {
        surfaces.push((
            spec.actor_center(a, 0.0),
            Vector3::from(a.size),
            a.yaw,
            spec.actor_color(a, 0.0),
        ));
    }
    if surfaces.is_empty() {
        return cloud;
    }
    let per_box = (spec.n_points - n_ground) / surfaces.len();
    for (center, size, yaw, color) in surfaces {
        let (s, c) = yaw.sin_cos();
        let from_box =
            |v: Vector3<f64>| Vector3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z) + center;
        for _ in 0..per_box {
            // Pick a face weighted by nothing fancy, then two coordinates.
            let face = rng.gen_range(0..6usize);
            let u = rng.gen_range(-0.5..0.5);
            let v = rng.gen_range(-0.5..0.5);
            let half = size * 0.5;
            let local = match face {
                0 => Vector3::new(half.x, u * size.y, v * size.z),
                1 => Vector3::new(-half.x, u * size.y, v * size.z),
                2 => Vector3::new(u * size.x, half.y, v * size.z),
                3 => Vector3::new(u * size.x, -half.y, v * size.z),
                4 => Vector3::new(u * size.x, v * size.y, half.z),
                _ => Vector3::new(u * size.x, v * size.y, -half.z),
            };
            cloud.positions.push(from_box(local));
            cloud.colors.push(color);
        }
    }
    cloud
}

/// Generate a dataset on disk in the normative scene format. Deterministic:
/// identical spec and seed produce byte-identical output.
pub fn generate(spec: &SyntheticSpec, out: &Path) -> Result<SceneJson> {
    if spec.n_timestamps == 0 || spec.n_cameras == 0 {
        return Err(Error::InvalidParameter("empty synthetic spec".into()));
    }
    std::fs::create_dir_all(out.join("images")).map_err(|e| Error::io(out, e))?;
    std::fs::create_dir_all(out.join("depth")).map_err(|e| Error::io(out, e))?;
    std::fs::create_dir_all(out.join("sky")).map_err(|e| Error::io(out, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut cameras = Vec::new();
    let mut frame = 0usize;
    for k in 0..spec.n_timestamps {
        let t = spec.timestamp(k);
        for ci in 0..spec.n_cameras {
            let gain = if spec.gain_jitter > 0.0 {
                rng.gen_range(1.0 - spec.gain_jitter..1.0 + spec.gain_jitter)
            } else {
                1.0
            };
            let tint = if spec.region_tint > 0.0 {
                Vector3::new(
                    rng.gen_range(1.0 - spec.region_tint..1.0 + spec.region_tint),
                    rng.gen_range(1.0 - spec.region_tint..1.0 + spec.region_tint),
                    rng.gen_range(1.0 - spec.region_tint..1.0 + spec.region_tint),
                )
            } else {
                Vector3::new(1.0, 1.0, 1.0)
            };
            let cam = spec.camera_at(ci, t);
            let (rgb, depth, sky) = trace_frame(spec, &cam, t, gain, &tint);
            let image_rel = format!("images/{frame:04}.png");
            let depth_rel = format!("depth/{frame:04}.pfm");
            let sky_rel = format!("sky/{frame:04}.png");
            write_png_rgb(&out.join(&image_rel), &rgb)?;
            write_pfm(&out.join(&depth_rel), &depth)?;
            write_png_mask(&out.join(&sky_rel), &sky)?;
            let wfc = cam.world_from_camera.transpose();
            cameras.push(CameraJson {
                fx: cam.fx,
                fy: cam.fy,
                cx: cam.cx,
                cy: cam.cy,
                width: spec.width,
                height: spec.height,
                world_from_camera: wfc.as_slice().try_into().unwrap(),
                camera_index: ci as u32,
                timestamp: t,
                image: image_rel,
                depth: Some(depth_rel),
                sky_mask: Some(sky_rel),
                gain: Some(gain),
            });
            frame += 1;
        }
    }

    let actors = spec
        .actors
        .iter()
        .map(|a| {
            let (s, c) = (a.yaw * 0.5).sin_cos();
            ActorJson {
                class: a.class.clone(),
                size: a.size,
                keyframes: (0..spec.n_timestamps)
                    .map(|k| {
                        let t = spec.timestamp(k);
                        let p = spec.actor_center(a, t);
                        KeyframeJson {
                            t,
                            rotation: [c, 0.0, 0.0, s],
                            translation: [p.x, p.y, p.z],
                        }
                    })
                    .collect(),
            }
        })
        .collect();

    let cloud = sample_points(spec, &mut rng);
    write_point_cloud(&out.join("points.ply"), &cloud)?;

    let scene = SceneJson {
        aabb: spec.aabb(),
        cameras,
        actors,
        points: "points.ply".into(),
    };
    let text = serde_json::to_string_pretty(&scene)
        .map_err(|e| Error::Parse {
            path: out.join("scene.json"),
            msg: e.to_string(),
        })?;
    std::fs::write(out.join("scene.json"), text).map_err(|e| Error::io(out, e))?;
    Ok(scene)
}

/// Reference renderer for Eq.-style alpha blending: global depth sort, every
/// splat evaluated at every pixel, no tiles and no spatial culling. Shares
/// the per-pixel blending kernel with the tiled rasterizer.
pub fn brute_force_blend_oracle<F>(
    splats: &[Splat],
    width: usize,
    height: usize,
    background: F,
) -> RasterOutput
where
    F: Fn(usize, usize) -> Vector3<f64>,
{
    let prep = prep_splats(splats);
    let mut order: Vec<u32> = (0..splats.len() as u32).collect();
    order.sort_by(|&a, &b| {
        splats[a as usize]
            .depth
            .partial_cmp(&splats[b as usize].depth)
            .unwrap()
    });
    let mut out = RasterOutput {
        rgb: ImageRgb::zeros(width, height),
        depth: ImagePlane::zeros(width, height),
        acc_alpha: ImagePlane::zeros(width, height),
        actor_alpha: ImagePlane::zeros(width, height),
    };
    for y in 0..height {
        for x in 0..width {
            let b = alpha_blend_pixel(
                order.iter().copied(),
                &prep,
                x as f64 + 0.5,
                y as f64 + 0.5,
                &background(x, y),
            );
            *out.rgb.at_mut(x, y) = b.rgb;
            *out.depth.at_mut(x, y) = b.depth;
            *out.acc_alpha.at_mut(x, y) = b.acc_alpha;
            *out.actor_alpha.at_mut(x, y) = b.actor_alpha;
        }
    }
    out
}

/// Random splat scenes for the oracle-equivalence checks.
pub fn random_splats(seed: u64, count: usize, width: usize, height: usize) -> Vec<Splat> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            // Random SPD 2x2 covariance via A A^T + floor.
            let a = nalgebra::Matrix2::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let cov = a * a.transpose() + nalgebra::Matrix2::identity() * 0.3;
            Splat {
                center: Vector2::new(
                    rng.gen_range(-4.0..width as f64 + 4.0),
                    rng.gen_range(-4.0..height as f64 + 4.0),
                ),
                cov2d: cov,
                depth: rng.gen_range(0.5..20.0),
                color: Vector3::new(rng.gen(), rng.gen(), rng.gen()),
                opacity: rng.gen_range(0.02..0.98),
                tag: if rng.gen_bool(0.3) {
                    crate::rasterizer::SplatTag::Actor(0)
                } else {
                    crate::rasterizer::SplatTag::Background
                },
            }
        })
        .collect()
}
