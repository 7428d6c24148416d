//! Scene dataset format: `scene.json` plus image/depth/mask/point files,
//! with exhaustive load-time validation, and model checkpointing.

pub mod checkpoint;
pub mod pfm;
pub mod ply;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::img::{ImagePlane, ImageRgb};
use crate::scene::{Aabb, ActorInit, FrameData, PointCloud, MERGE_VOXEL};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

/// `scene.json` schema: the normative dataset description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneJson {
    pub aabb: Aabb,
    pub cameras: Vec<CameraJson>,
    #[serde(default)]
    pub actors: Vec<ActorJson>,
    #[serde(default = "default_points_path")]
    pub points: String,
}

fn default_points_path() -> String {
    "points.ply".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraJson {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major 4x4 rigid world-from-camera transform.
    pub world_from_camera: [f64; 16],
    pub camera_index: u32,
    /// Normalized to [0,1] over the sequence.
    pub timestamp: f64,
    pub image: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sky_mask: Option<String>,
    /// Appearance gain applied by the synthetic generator (introspection).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorJson {
    pub class: String,
    /// Full box extents in meters.
    pub size: [f64; 3],
    pub keyframes: Vec<KeyframeJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyframeJson {
    pub t: f64,
    /// (w, x, y, z).
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

impl CameraJson {
    pub fn to_camera(&self) -> Camera {
        Camera {
            width: self.width,
            height: self.height,
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            world_from_camera: Matrix4::from_row_slice(&self.world_from_camera),
            camera_index: self.camera_index,
            timestamp: self.timestamp,
        }
    }
}

/// Fully loaded dataset: parsed metadata plus every frame's ground truth.
pub struct LoadedScene {
    pub json: SceneJson,
    pub root: PathBuf,
    pub frames: Vec<FrameData>,
    /// Merged and voxel-downsampled initialization points.
    pub points: PointCloud,
    pub actor_inits: Vec<ActorInit>,
}

/// Validate and load a scene directory. All schema violations are collected
/// and reported together.
pub fn load_scene(root: &Path) -> Result<LoadedScene> {
    let json_path = root.join("scene.json");
    let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let json: SceneJson = serde_json::from_str(&text)
        .map_err(|e| Error::parse(&json_path, e.to_string()))?;

    let mut problems: Vec<String> = Vec::new();
    let exists = |rel: &str| root.join(rel).is_file();

    if json.cameras.is_empty() {
        problems.push("scene has no cameras".into());
    }
    let ext = json.aabb.extent();
    if !(ext.x > 0.0 && ext.y > 0.0 && ext.z > 0.0) {
        problems.push("aabb must have positive extent on every axis".into());
    }
    if !exists(&json.points) {
        problems.push(format!("missing points file '{}'", json.points));
    }
    let mut per_camera: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (i, cam) in json.cameras.iter().enumerate() {
        if !(cam.fx > 0.0 && cam.fy > 0.0) {
            problems.push(format!("camera {i}: non-positive focal length"));
        }
        if cam.width == 0 || cam.height == 0 {
            problems.push(format!("camera {i}: zero image size"));
        }
        if !(0.0..=1.0).contains(&cam.timestamp) {
            problems.push(format!("camera {i}: timestamp {} outside [0,1]", cam.timestamp));
        }
        if !exists(&cam.image) {
            problems.push(format!("camera {i}: missing image '{}'", cam.image));
        }
        if let Some(d) = &cam.depth {
            if !exists(d) {
                problems.push(format!("camera {i}: missing depth '{d}'"));
            }
        }
        if let Some(s) = &cam.sky_mask {
            if !exists(s) {
                problems.push(format!("camera {i}: missing sky mask '{s}'"));
            }
        }
        per_camera.entry(cam.camera_index).or_default().push(cam.timestamp);
    }
    for (idx, ts) in &per_camera {
        if ts.windows(2).any(|w| w[0] > w[1]) {
            problems.push(format!("camera index {idx}: timestamps not sorted"));
        }
    }
    for (ai, actor) in json.actors.iter().enumerate() {
        if actor.keyframes.is_empty() {
            problems.push(format!("actor {ai}: no keyframes"));
        }
        if actor.size.iter().any(|&s| s <= 0.0) {
            problems.push(format!("actor {ai}: non-positive size"));
        }
        if actor
            .keyframes
            .windows(2)
            .any(|w| w[0].t >= w[1].t)
        {
            problems.push(format!("actor {ai}: keyframe times not strictly increasing"));
        }
        for (ki, kf) in actor.keyframes.iter().enumerate() {
            let n: f64 = kf.rotation.iter().map(|v| v * v).sum();
            if n < 1e-12 {
                problems.push(format!("actor {ai} keyframe {ki}: zero rotation quaternion"));
            }
        }
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }

    let points = ply::read_point_cloud(&root.join(&json.points))?.voxel_downsample(MERGE_VOXEL);
    let mut frames = Vec::with_capacity(json.cameras.len());
    for (i, cam) in json.cameras.iter().enumerate() {
        let image = read_png_rgb(&root.join(&cam.image))?;
        if image.width != cam.width || image.height != cam.height {
            return Err(Error::Validation(vec![format!(
                "camera {i}: image '{}' is {}x{}, scene.json says {}x{}",
                cam.image, image.width, image.height, cam.width, cam.height
            )]));
        }
        let depth = cam
            .depth
            .as_ref()
            .map(|d| pfm::read_pfm(&root.join(d)))
            .transpose()?;
        let sky_mask = cam
            .sky_mask
            .as_ref()
            .map(|s| read_png_mask(&root.join(s)))
            .transpose()?;
        frames.push(FrameData {
            frame_id: i,
            camera: cam.to_camera(),
            image,
            depth,
            sky_mask,
            gain: cam.gain,
        });
    }
    let actor_inits = json
        .actors
        .iter()
        .map(|a| ActorInit {
            class: a.class.clone(),
            size: Vector3::from(a.size),
            key_times: a.keyframes.iter().map(|k| k.t).collect(),
            key_rotations: a
                .keyframes
                .iter()
                .map(|k| Vector4::from(k.rotation))
                .collect(),
            key_translations: a
                .keyframes
                .iter()
                .map(|k| Vector3::from(k.translation))
                .collect(),
        })
        .collect();
    Ok(LoadedScene {
        json,
        root: root.to_path_buf(),
        frames,
        points,
        actor_inits,
    })
}

pub fn read_png_rgb(path: &Path) -> Result<ImageRgb> {
    let img = image::open(path)
        .map_err(|e| Error::parse(path, e.to_string()))?
        .to_rgb8();
    Ok(ImageRgb::from_rgb8(
        img.width() as usize,
        img.height() as usize,
        img.as_raw(),
    ))
}

pub fn write_png_rgb(path: &Path, img: &ImageRgb) -> Result<()> {
    let buf: image::RgbImage =
        image::ImageBuffer::from_raw(img.width as u32, img.height as u32, img.to_rgb8())
            .expect("buffer size");
    buf.save(path).map_err(|e| Error::parse(path, e.to_string()))
}

/// 8-bit mask: values >= 128 count as 1.0 (sky).
pub fn read_png_mask(path: &Path) -> Result<ImagePlane> {
    let img = image::open(path)
        .map_err(|e| Error::parse(path, e.to_string()))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut plane = ImagePlane::zeros(w, h);
    for (i, p) in img.as_raw().iter().enumerate() {
        plane.data[i] = if *p >= 128 { 1.0 } else { 0.0 };
    }
    Ok(plane)
}

pub fn write_png_mask(path: &Path, mask: &ImagePlane) -> Result<()> {
    let bytes: Vec<u8> = mask
        .data
        .iter()
        .map(|&v| if v >= 0.5 { 255u8 } else { 0u8 })
        .collect();
    let buf: image::GrayImage =
        image::ImageBuffer::from_raw(mask.width as u32, mask.height as u32, bytes)
            .expect("buffer size");
    buf.save(path).map_err(|e| Error::parse(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_scene_dir() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::create_dir_all(root.join("images")).unwrap();
        let img = ImageRgb::constant(4, 4, Vector3::new(0.5, 0.5, 0.5));
        write_png_rgb(&root.join("images/000.png"), &img).unwrap();
        let cloud = PointCloud {
            positions: (0..8)
                .map(|i| Vector3::new(i as f64, 0.0, 2.0))
                .collect(),
            colors: vec![Vector3::new(0.5, 0.5, 0.5); 8],
        };
        ply::write_point_cloud(&root.join("points.ply"), &cloud).unwrap();
        let scene = SceneJson {
            aabb: Aabb {
                min: [-1.0, -1.0, 0.0],
                max: [8.0, 1.0, 4.0],
            },
            cameras: vec![CameraJson {
                fx: 10.0,
                fy: 10.0,
                cx: 2.0,
                cy: 2.0,
                width: 4,
                height: 4,
                world_from_camera: Matrix4::<f64>::identity()
                    .transpose()
                    .as_slice()
                    .try_into()
                    .unwrap(),
                camera_index: 0,
                timestamp: 0.0,
                image: "images/000.png".into(),
                depth: None,
                sky_mask: None,
                gain: None,
            }],
            actors: Vec::new(),
            points: "points.ply".into(),
        };
        std::fs::write(
            root.join("scene.json"),
            serde_json::to_string_pretty(&scene).unwrap(),
        )
        .unwrap();
        dir
    }

    #[test]
    fn minimal_scene_loads() {
        let dir = minimal_scene_dir();
        let loaded = load_scene(dir.path()).unwrap();
        assert_eq!(loaded.frames.len(), 1);
        assert_eq!(loaded.points.len(), 8);
        assert!(loaded.actor_inits.is_empty());
    }

    #[test]
    fn validation_collects_all_failures() {
        let dir = minimal_scene_dir();
        // Corrupt the scene: bad focal, missing image, bad timestamps order.
        let text = std::fs::read_to_string(dir.path().join("scene.json")).unwrap();
        let mut json: SceneJson = serde_json::from_str(&text).unwrap();
        json.cameras[0].fx = -1.0;
        let mut second = json.cameras[0].clone();
        second.image = "images/missing.png".into();
        second.timestamp = -0.5;
        json.cameras.push(second);
        // Same camera index with decreasing timestamps.
        json.cameras[0].timestamp = 0.9;
        json.cameras[1].timestamp = 0.1;
        std::fs::write(
            dir.path().join("scene.json"),
            serde_json::to_string(&json).unwrap(),
        )
        .unwrap();
        match load_scene(dir.path()) {
            Err(Error::Validation(problems)) => {
                assert!(problems.len() >= 3, "expected several problems: {problems:?}");
                assert!(problems.iter().any(|p| p.contains("focal")));
                assert!(problems.iter().any(|p| p.contains("missing image")));
                assert!(problems.iter().any(|p| p.contains("not sorted")));
            }
            Err(other) => panic!("expected validation error, got {other}"),
            Ok(_) => panic!("expected validation error, got success"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = minimal_scene_dir();
        let text = std::fs::read_to_string(dir.path().join("scene.json")).unwrap();
        let patched = text.replacen("\"aabb\"", "\"bogus\": 1, \"aabb\"", 1);
        std::fs::write(dir.path().join("scene.json"), patched).unwrap();
        assert!(matches!(load_scene(dir.path()), Err(Error::Parse { .. })));
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut img = ImageRgb::zeros(6, 5);
        for (i, p) in img.data.iter_mut().enumerate() {
            *p = Vector3::new(
                (i % 7) as f64 / 7.0,
                (i % 3) as f64 / 3.0,
                (i % 11) as f64 / 11.0,
            );
        }
        write_png_rgb(&path, &img).unwrap();
        let back = read_png_rgb(&path).unwrap();
        // 8-bit quantization bound.
        assert!(img.max_abs_diff(&back) <= 0.5 / 255.0 + 1e-12);
    }
}
