//! Quaternion/SE(3) math, covariance construction, perspective projection of
//! Gaussians onto the image plane, and spherical-harmonics color evaluation.
//!
//! Every differentiable operation comes with a hand-written vector-Jacobian
//! product (`*_vjp`) checked against central finite differences in the tests.

pub mod sh;

use nalgebra::{Matrix2, Matrix3, Matrix4, Vector2, Vector3, Vector4};

use crate::error::{Error, Result};

/// 2D covariance low-pass filter added after projection, in pixels^2.
/// Guarantees every splat covers at least about one pixel.
pub const COV2D_FILTER: f64 = 0.3;

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`]; input must lie in (0, 1).
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn d_sigmoid(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

/// Sigmoid derivative given the already-computed sigmoid value.
#[inline]
pub fn d_sigmoid_from_value(s: f64) -> f64 {
    s * (1.0 - s)
}

/// Rotation matrix of a (not necessarily unit) quaternion `(w, x, y, z)`.
/// The quaternion is normalized in-graph so gradients stay correct for
/// off-manifold inputs, e.g. finite-difference probes.
pub fn quat_to_rotation(q: &Vector4<f64>) -> Matrix3<f64> {
    let n = q.norm();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Backward of [`quat_to_rotation`]: pushes `dL/dR` to `dL/dq`,
/// including the in-graph normalization.
pub fn quat_to_rotation_vjp(q: &Vector4<f64>, g: &Matrix3<f64>) -> Vector4<f64> {
    let n = q.norm();
    let qn = q / n;
    let (w, x, y, z) = (qn[0], qn[1], qn[2], qn[3]);

    let dw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);

    let d_qn = Vector4::new(dw, dx, dy, dz);
    // Normalization pullback: dq = (I - qn qn^T) d_qn / n.
    (d_qn - qn * qn.dot(&d_qn)) / n
}

/// Hamilton product `a ⊗ b` on `(w, x, y, z)` quaternions.
pub fn quat_mul(a: &Vector4<f64>, b: &Vector4<f64>) -> Vector4<f64> {
    let (aw, ax, ay, az) = (a[0], a[1], a[2], a[3]);
    let (bw, bx, by, bz) = (b[0], b[1], b[2], b[3]);
    Vector4::new(
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )
}

/// Backward of [`quat_mul`]: given `dL/d(a⊗b)` returns `(dL/da, dL/db)`.
pub fn quat_mul_vjp(
    a: &Vector4<f64>,
    b: &Vector4<f64>,
    g: &Vector4<f64>,
) -> (Vector4<f64>, Vector4<f64>) {
    let (aw, ax, ay, az) = (a[0], a[1], a[2], a[3]);
    let (bw, bx, by, bz) = (b[0], b[1], b[2], b[3]);
    let (gw, gx, gy, gz) = (g[0], g[1], g[2], g[3]);
    let da = Vector4::new(
        gw * bw + gx * bx + gy * by + gz * bz,
        -gw * bx + gx * bw - gy * bz + gz * by,
        -gw * by + gx * bz + gy * bw - gz * bx,
        -gw * bz - gx * by + gy * bx + gz * bw,
    );
    let db = Vector4::new(
        gw * aw + gx * ax + gy * ay + gz * az,
        -gw * ax + gx * aw + gy * az - gz * ay,
        -gw * ay - gx * az + gy * aw + gz * ax,
        -gw * az + gx * ay - gy * ax + gz * aw,
    );
    (da, db)
}

/// Rotate `v` by the (normalized) quaternion `q`.
pub fn quat_rotate(q: &Vector4<f64>, v: &Vector3<f64>) -> Vector3<f64> {
    quat_to_rotation(q) * v
}

/// 3x3 symmetric positive semi-definite covariance.
pub type Covariance3 = Matrix3<f64>;

/// Σ = R·diag(s)·diag(s)·R^T from a quaternion and per-axis scales.
pub fn build_covariance(rot: &Vector4<f64>, scale: &Vector3<f64>) -> Result<Covariance3> {
    if !rot.iter().all(|v| v.is_finite()) || !scale.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter(
            "non-finite rotation or scale".into(),
        ));
    }
    let r = quat_to_rotation(rot);
    let m = r * Matrix3::from_diagonal(scale);
    Ok(m * m.transpose())
}

/// Backward of [`build_covariance`]: returns `(dL/drot, dL/dscale)`.
pub fn build_covariance_vjp(
    rot: &Vector4<f64>,
    scale: &Vector3<f64>,
    d_sigma: &Matrix3<f64>,
) -> (Vector4<f64>, Vector3<f64>) {
    let r = quat_to_rotation(rot);
    let m = r * Matrix3::from_diagonal(scale);
    // Σ = M M^T  =>  dM = (dΣ + dΣ^T) M
    let dm = (d_sigma + d_sigma.transpose()) * m;
    let dr = dm * Matrix3::from_diagonal(scale);
    let ds = Vector3::new(
        r.column(0).dot(&dm.column(0)),
        r.column(1).dot(&dm.column(1)),
        r.column(2).dot(&dm.column(2)),
    );
    (quat_to_rotation_vjp(rot, &dr), ds)
}

/// G(x) = exp(-1/2 (x-μ)^T Σ^{-1} (x-μ)).
///
/// A singular Σ is regularized with +1e-8·I; if it is still not invertible
/// a numeric error is returned.
pub fn evaluate_gaussian(
    x: &Vector3<f64>,
    mu: &Vector3<f64>,
    sigma: &Covariance3,
) -> Result<f64> {
    let d = x - mu;
    let solve = |m: &Matrix3<f64>| m.cholesky().map(|ch| ch.solve(&d));
    let sol = match solve(sigma) {
        Some(s) => s,
        None => {
            let reg = sigma + Matrix3::identity() * 1e-8;
            solve(&reg).ok_or_else(|| {
                Error::Numeric("covariance singular after regularization".into())
            })?
        }
    };
    Ok((-0.5 * d.dot(&sol)).exp())
}

/// Pinhole camera with a rigid world-from-camera pose (OpenCV axes:
/// x right, y down, z forward).
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_from_camera: Matrix4<f64>,
    pub camera_index: u32,
    /// Normalized timestamp in [0, 1].
    pub timestamp: f64,
}

impl Camera {
    pub fn rotation_wc(&self) -> Matrix3<f64> {
        self.world_from_camera.fixed_view::<3, 3>(0, 0).into()
    }

    pub fn center(&self) -> Vector3<f64> {
        self.world_from_camera.fixed_view::<3, 1>(0, 3).into()
    }

    pub fn rotation_cw(&self) -> Matrix3<f64> {
        self.rotation_wc().transpose()
    }

    /// World point to camera coordinates.
    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_cw() * (p - self.center())
    }

    /// World-space direction of the optical axis.
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.rotation_wc().column(2).into()
    }

    /// Unit world-space ray direction through pixel center (px+0.5, py+0.5).
    pub fn ray_dir_world(&self, px: usize, py: usize) -> Vector3<f64> {
        let d = Vector3::new(
            (px as f64 + 0.5 - self.cx) / self.fx,
            (py as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        );
        (self.rotation_wc() * d).normalize()
    }

    /// Camera shifted laterally (along its x axis) by `meters`.
    pub fn with_lateral_shift(&self, meters: f64) -> Camera {
        let mut cam = self.clone();
        let right: Vector3<f64> = self.rotation_wc().column(0).into();
        let c = self.center() + right * meters;
        cam.world_from_camera.fixed_view_mut::<3, 1>(0, 3).copy_from(&c);
        cam
    }
}

/// A Gaussian projected to the image plane.
#[derive(Debug, Clone, Copy)]
pub struct Projected2D {
    pub center_px: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Camera-space z in meters.
    pub depth: f64,
}

/// Cached forward state needed by [`project_gaussian_vjp`].
#[derive(Debug, Clone, Copy)]
pub struct ProjCache {
    t: Vector3<f64>,
    clamped_x: bool,
    clamped_y: bool,
}

/// EWA projection of a world-space Gaussian. Returns `None` when the center
/// is behind the near plane (the splat is culled, not an error).
pub fn project_gaussian(
    mu_world: &Vector3<f64>,
    sigma: &Covariance3,
    cam: &Camera,
    near: f64,
) -> Option<(Projected2D, ProjCache)> {
    let t = cam.to_camera(mu_world);
    if t.z <= near {
        return None;
    }
    let center = Vector2::new(
        cam.fx * t.x / t.z + cam.cx,
        cam.fy * t.y / t.z + cam.cy,
    );

    let lim_x = 1.3 * cam.width as f64 / (2.0 * cam.fx);
    let lim_y = 1.3 * cam.height as f64 / (2.0 * cam.fy);
    let rx = t.x / t.z;
    let ry = t.y / t.z;
    let clamped_x = rx.abs() > lim_x;
    let clamped_y = ry.abs() > lim_y;
    let txc = rx.clamp(-lim_x, lim_x) * t.z;
    let tyc = ry.clamp(-lim_y, lim_y) * t.z;

    let j = jacobian(cam, txc, tyc, t.z);
    let u = j * cam.rotation_cw();
    let cov2d = u * sigma * u.transpose() + Matrix2::identity() * COV2D_FILTER;

    Some((
        Projected2D {
            center_px: center,
            cov2d,
            depth: t.z,
        },
        ProjCache {
            t,
            clamped_x,
            clamped_y,
        },
    ))
}

fn jacobian(cam: &Camera, txc: f64, tyc: f64, tz: f64) -> nalgebra::Matrix2x3<f64> {
    nalgebra::Matrix2x3::new(
        cam.fx / tz,
        0.0,
        -cam.fx * txc / (tz * tz),
        0.0,
        cam.fy / tz,
        -cam.fy * tyc / (tz * tz),
    )
}

/// Backward of [`project_gaussian`]: returns `(dL/dμ_world, dL/dΣ)`.
pub fn project_gaussian_vjp(
    sigma: &Covariance3,
    cam: &Camera,
    cache: &ProjCache,
    d_center: &Vector2<f64>,
    d_cov2d: &Matrix2<f64>,
    d_depth: f64,
) -> (Vector3<f64>, Matrix3<f64>) {
    let t = cache.t;
    let tz = t.z;
    let lim_x = 1.3 * cam.width as f64 / (2.0 * cam.fx);
    let lim_y = 1.3 * cam.height as f64 / (2.0 * cam.fy);
    let txc = (t.x / tz).clamp(-lim_x, lim_x) * tz;
    let tyc = (t.y / tz).clamp(-lim_y, lim_y) * tz;

    let w = cam.rotation_cw();
    let j = jacobian(cam, txc, tyc, tz);
    let u = j * w;

    // cov2d = U Σ U^T + c I
    let d_sigma = u.transpose() * d_cov2d * u;
    let du = (d_cov2d + d_cov2d.transpose()) * u * sigma;
    let dj = du * w.transpose();

    let mut dt = Vector3::zeros();
    // J00 = fx/tz, J02 = -fx*txc/tz^2, J11 = fy/tz, J12 = -fy*tyc/tz^2
    dt.z += dj[(0, 0)] * (-cam.fx / (tz * tz));
    dt.z += dj[(1, 1)] * (-cam.fy / (tz * tz));
    if cache.clamped_x {
        // txc = ±lim_x * tz  =>  J02 = ∓fx*lim_x/tz
        let sign = (t.x / tz).signum();
        dt.z += dj[(0, 2)] * (sign * cam.fx * lim_x / (tz * tz));
    } else {
        dt.x += dj[(0, 2)] * (-cam.fx / (tz * tz));
        dt.z += dj[(0, 2)] * (2.0 * cam.fx * t.x / (tz * tz * tz));
    }
    if cache.clamped_y {
        let sign = (t.y / tz).signum();
        dt.z += dj[(1, 2)] * (sign * cam.fy * lim_y / (tz * tz));
    } else {
        dt.y += dj[(1, 2)] * (-cam.fy / (tz * tz));
        dt.z += dj[(1, 2)] * (2.0 * cam.fy * t.y / (tz * tz * tz));
    }

    // center = (fx*tx/tz + cx, fy*ty/tz + cy)
    dt.x += d_center.x * cam.fx / tz;
    dt.z += d_center.x * (-cam.fx * t.x / (tz * tz));
    dt.y += d_center.y * cam.fy / tz;
    dt.z += d_center.y * (-cam.fy * t.y / (tz * tz));

    dt.z += d_depth;

    (w.transpose() * dt, d_sigma)
}

/// Unit direction from `from` to `to` plus cache for the backward pass.
pub fn view_direction(to: &Vector3<f64>, from: &Vector3<f64>) -> (Vector3<f64>, f64) {
    let v = to - from;
    let n = v.norm();
    (v / n, n)
}

/// Backward of [`view_direction`] w.r.t. `to`.
pub fn view_direction_vjp(dir: &Vector3<f64>, norm: f64, d_dir: &Vector3<f64>) -> Vector3<f64> {
    (d_dir - dir * dir.dot(d_dir)) / norm
}
