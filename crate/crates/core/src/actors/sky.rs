//! Learnable sky cubemap: 6 faces of RGB texels, sampled by view direction
//! with bilinear interpolation and clamp-to-edge.

use nalgebra::Vector3;

/// Face order: +x, -x, +y, -y, +z, -z.
#[derive(Debug, Clone, PartialEq)]
pub struct SkyCubemap {
    pub size: usize,
    /// `6 * size * size * 3` values.
    pub texels: Vec<f64>,
}

/// Bilinear footprint of one lookup, for the backward pass.
#[derive(Debug, Clone, Copy)]
pub struct SkyCache {
    pub indices: [usize; 4],
    pub weights: [f64; 4],
    /// Channels clamped at the [0,1] output boundary get no gradient.
    pub clamped: [bool; 3],
}

impl SkyCubemap {
    pub fn new(size: usize, init: f64) -> SkyCubemap {
        SkyCubemap {
            size,
            texels: vec![init; 6 * size * size * 3],
        }
    }

    pub fn param_count(&self) -> usize {
        self.texels.len()
    }

    fn texel_base(&self, face: usize, x: usize, y: usize) -> usize {
        ((face * self.size + y) * self.size + x) * 3
    }

    /// Sample the cubemap along a unit direction. Output is clamped to [0,1].
    pub fn sample(&self, dir: &Vector3<f64>) -> (Vector3<f64>, SkyCache) {
        let (face, u, v) = face_uv(dir);
        let s = self.size as f64;
        // Map [-1,1] to continuous texel coordinates.
        let fx = ((u + 1.0) * 0.5 * s - 0.5).clamp(0.0, s - 1.0);
        let fy = ((v + 1.0) * 0.5 * s - 0.5).clamp(0.0, s - 1.0);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.size - 1);
        let y1 = (y0 + 1).min(self.size - 1);
        let ax = fx - x0 as f64;
        let ay = fy - y0 as f64;
        let weights = [
            (1.0 - ax) * (1.0 - ay),
            ax * (1.0 - ay),
            (1.0 - ax) * ay,
            ax * ay,
        ];
        let indices = [
            self.texel_base(face, x0, y0),
            self.texel_base(face, x1, y0),
            self.texel_base(face, x0, y1),
            self.texel_base(face, x1, y1),
        ];
        let mut c = Vector3::zeros();
        for k in 0..4 {
            for ch in 0..3 {
                c[ch] += weights[k] * self.texels[indices[k] + ch];
            }
        }
        let clamped = [
            c.x < 0.0 || c.x > 1.0,
            c.y < 0.0 || c.y > 1.0,
            c.z < 0.0 || c.z > 1.0,
        ];
        (c.map(|v: f64| v.clamp(0.0, 1.0)), SkyCache {
            indices,
            weights,
            clamped,
        })
    }

    /// Scatter a color gradient back to the (at most 4) touched texels.
    pub fn sample_vjp(&self, cache: &SkyCache, d_color: &Vector3<f64>, d_texels: &mut [f64]) {
        for ch in 0..3 {
            if cache.clamped[ch] || d_color[ch] == 0.0 {
                continue;
            }
            for k in 0..4 {
                d_texels[cache.indices[k] + ch] += cache.weights[k] * d_color[ch];
            }
        }
    }
}

/// Standard cubemap face selection by dominant axis; returns (face, u, v)
/// with u, v in [-1, 1].
fn face_uv(dir: &Vector3<f64>) -> (usize, f64, f64) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let (ax, ay, az) = (x.abs(), y.abs(), z.abs());
    if ax >= ay && ax >= az {
        if x > 0.0 {
            (0, -z / ax, -y / ax)
        } else {
            (1, z / ax, -y / ax)
        }
    } else if ay >= ax && ay >= az {
        if y > 0.0 {
            (2, x / ay, z / ay)
        } else {
            (3, x / ay, -z / ay)
        }
    } else if z > 0.0 {
        (4, x / az, -y / az)
    } else {
        (5, -x / az, -y / az)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_cubemap_returns_constant() {
        let sky = SkyCubemap::new(8, 0.37);
        for dir in [
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(-0.3, 0.8, 0.52).normalize(),
            Vector3::new(0.0, -1.0, 0.0),
        ] {
            let (c, _) = sky.sample(&dir);
            assert_relative_eq!(c, Vector3::new(0.37, 0.37, 0.37), epsilon = 1e-12);
        }
    }

    #[test]
    fn plus_z_hits_center_texel() {
        // Odd size so the +z axis lands exactly on the central texel.
        let mut sky = SkyCubemap::new(5, 0.0);
        let center = ((4 * 5 + 2) * 5 + 2) * 3;
        sky.texels[center] = 1.0;
        sky.texels[center + 1] = 0.5;
        let (c, cache) = sky.sample(&Vector3::new(0.0, 0.0, 1.0));
        assert_relative_eq!(c.x, 1.0, epsilon = 1e-12);
        assert_relative_eq!(c.y, 0.5, epsilon = 1e-12);
        // Exactly one unit weight.
        assert!(cache.weights.iter().any(|&w| (w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn gradient_touches_at_most_four_texels() {
        let sky = SkyCubemap::new(16, 0.5);
        let dir = Vector3::new(0.3, 0.4, 0.866).normalize();
        let (_, cache) = sky.sample(&dir);
        let mut d = vec![0.0; sky.param_count()];
        sky.sample_vjp(&cache, &Vector3::new(1.0, 0.0, 0.0), &mut d);
        let touched = d.iter().filter(|&&g| g != 0.0).count();
        assert!(touched <= 4 && touched >= 1);
        // Weights sum to one, so so do the scattered gradients.
        assert_relative_eq!(d.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sample_gradcheck() {
        let mut sky = SkyCubemap::new(6, 0.5);
        for (i, t) in sky.texels.iter_mut().enumerate() {
            *t = 0.2 + 0.5 * ((i as f64 * 0.071).sin() * 0.5 + 0.5) * 0.9;
        }
        let dir = Vector3::new(-0.5, 0.6, 0.624).normalize();
        let w = Vector3::new(0.7, -0.3, 0.2);
        let f = |sky: &SkyCubemap| sky.sample(&dir).0.dot(&w);
        let (_, cache) = sky.sample(&dir);
        let mut d = vec![0.0; sky.param_count()];
        sky.sample_vjp(&cache, &w, &mut d);
        let h = 1e-6;
        for k in 0..4 {
            for ch in 0..3 {
                let e = cache.indices[k] + ch;
                let orig = sky.texels[e];
                sky.texels[e] = orig + h;
                let fp = f(&sky);
                sky.texels[e] = orig - h;
                let fm = f(&sky);
                sky.texels[e] = orig;
                assert_relative_eq!(d[e], (fp - fm) / (2.0 * h), epsilon = 1e-7);
            }
        }
    }
}
