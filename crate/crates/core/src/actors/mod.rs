//! Per-actor Gaussian models: learnable keyframe poses, object-to-world
//! transforms, pose interpolation for novel views, and the sky cubemap.

pub mod sky;

use nalgebra::{Vector3, Vector4};

pub use sky::{SkyCache, SkyCubemap};

use crate::gaussians::GaussianSet;
use crate::geometry::{quat_mul, quat_mul_vjp, quat_rotate, quat_to_rotation, quat_to_rotation_vjp};

/// A dynamic actor: an object-centric Gaussian set plus one learnable pose
/// per keyframe, initialized from tracked boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorModel {
    pub id: u32,
    pub class: String,
    /// Box size (full extents, meters).
    pub size: Vector3<f64>,
    pub gaussians: GaussianSet,
    /// Strictly increasing keyframe timestamps in [0,1].
    pub key_times: Vec<f64>,
    /// 4 per keyframe (w, x, y, z); renormalized after optimizer steps.
    pub key_rotations: Vec<f64>,
    /// 3 per keyframe, meters.
    pub key_translations: Vec<f64>,
}

/// Where a queried pose came from; exact keyframes carry gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoseSource {
    Keyframe(usize),
    Interpolated,
}

impl ActorModel {
    pub fn keyframes(&self) -> usize {
        self.key_times.len()
    }

    pub fn key_rotation(&self, k: usize) -> Vector4<f64> {
        Vector4::new(
            self.key_rotations[4 * k],
            self.key_rotations[4 * k + 1],
            self.key_rotations[4 * k + 2],
            self.key_rotations[4 * k + 3],
        )
    }

    pub fn key_translation(&self, k: usize) -> Vector3<f64> {
        Vector3::new(
            self.key_translations[3 * k],
            self.key_translations[3 * k + 1],
            self.key_translations[3 * k + 2],
        )
    }

    pub fn renormalize_rotations(&mut self) {
        for q in self.key_rotations.chunks_exact_mut(4) {
            let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
            if n > 0.0 && n.is_finite() {
                for v in q {
                    *v /= n;
                }
            }
        }
    }

    /// Pose at an arbitrary timestamp: exact keyframes return the optimized
    /// pose; in between, translation is lerped and rotation slerped;
    /// out-of-range queries clamp to the end poses.
    pub fn interpolate_pose(&self, t: f64) -> (Vector4<f64>, Vector3<f64>, PoseSource) {
        assert!(!self.key_times.is_empty(), "actor without keyframes");
        for (k, &kt) in self.key_times.iter().enumerate() {
            if (kt - t).abs() < 1e-9 {
                return (self.key_rotation(k), self.key_translation(k), PoseSource::Keyframe(k));
            }
        }
        if t <= self.key_times[0] {
            return (self.key_rotation(0), self.key_translation(0), PoseSource::Keyframe(0));
        }
        let last = self.keyframes() - 1;
        if t >= self.key_times[last] {
            return (
                self.key_rotation(last),
                self.key_translation(last),
                PoseSource::Keyframe(last),
            );
        }
        let hi = self.key_times.partition_point(|&kt| kt < t);
        let lo = hi - 1;
        let span = self.key_times[hi] - self.key_times[lo];
        let u = (t - self.key_times[lo]) / span;
        let trans = self.key_translation(lo) * (1.0 - u) + self.key_translation(hi) * u;
        let rot = slerp(&self.key_rotation(lo), &self.key_rotation(hi), u);
        (rot, trans, PoseSource::Interpolated)
    }
}

/// Spherical linear interpolation with shortest-arc sign correction.
pub fn slerp(a: &Vector4<f64>, b: &Vector4<f64>, u: f64) -> Vector4<f64> {
    let a = a.normalize();
    let mut b = b.normalize();
    let mut dot = a.dot(&b);
    if dot < 0.0 {
        b = -b;
        dot = -dot;
    }
    if dot > 0.9995 {
        return (a * (1.0 - u) + b * u).normalize();
    }
    let theta = dot.acos();
    let s = theta.sin();
    (a * ((1.0 - u) * theta).sin() + b * (u * theta).sin()) / s
}

/// World-space placement of one object-centric Gaussian:
/// μ = R_t μ^a + T_t and r = R_t ⊗ r^a. Scale, opacity and SH pass through.
pub fn actor_to_world(
    mu_obj: &Vector3<f64>,
    rot_obj: &Vector4<f64>,
    pose_rot: &Vector4<f64>,
    pose_trans: &Vector3<f64>,
) -> (Vector3<f64>, Vector4<f64>) {
    let mu = quat_rotate(pose_rot, mu_obj) + pose_trans;
    let rot = quat_mul(pose_rot, rot_obj);
    (mu, rot)
}

/// Gradients of [`actor_to_world`] for one Gaussian.
pub struct ActorToWorldGrads {
    pub d_mu_obj: Vector3<f64>,
    pub d_rot_obj: Vector4<f64>,
    pub d_pose_rot: Vector4<f64>,
    pub d_pose_trans: Vector3<f64>,
}

pub fn actor_to_world_vjp(
    mu_obj: &Vector3<f64>,
    rot_obj: &Vector4<f64>,
    pose_rot: &Vector4<f64>,
    d_mu_world: &Vector3<f64>,
    d_rot_world: &Vector4<f64>,
) -> ActorToWorldGrads {
    let r = quat_to_rotation(pose_rot);
    // μ = R μ^a + T
    let d_mu_obj = r.transpose() * d_mu_world;
    let d_pose_trans = *d_mu_world;
    // dL/dR = d_mu_world ⊗ mu_obj^T
    let d_r = d_mu_world * mu_obj.transpose();
    let mut d_pose_rot = quat_to_rotation_vjp(pose_rot, &d_r);
    // r = q_pose ⊗ r_obj
    let (d_pose_from_mul, d_rot_obj) = quat_mul_vjp(pose_rot, rot_obj, d_rot_world);
    d_pose_rot += d_pose_from_mul;
    ActorToWorldGrads {
        d_mu_obj,
        d_rot_obj,
        d_pose_rot,
        d_pose_trans,
    }
}
