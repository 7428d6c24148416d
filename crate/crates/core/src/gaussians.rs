//! Learnable Gaussian parameter storage.
//!
//! Parameters live in flat `Vec<f64>` arrays (struct-of-arrays) so the
//! optimizer and the densification machinery can treat every group as a
//! plain slice. Scales are kept in log-space and opacity in logit-space.

use nalgebra::{Vector3, Vector4};

use crate::geometry::{sh::coeff_count, sigmoid};

/// A set of 3D Gaussians sharing one SH degree.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSet {
    /// 3 per Gaussian.
    pub positions: Vec<f64>,
    /// 4 per Gaussian, (w, x, y, z); renormalized after optimizer steps.
    pub rotations: Vec<f64>,
    /// 3 per Gaussian, log-space.
    pub log_scales: Vec<f64>,
    /// 1 per Gaussian, logit-space.
    pub opacity_logits: Vec<f64>,
    /// `coeff_count(degree) * 3` per Gaussian, band-major RGB.
    pub sh: Vec<f64>,
    pub sh_degree: usize,
}

impl GaussianSet {
    pub fn empty(sh_degree: usize) -> Self {
        GaussianSet {
            positions: Vec::new(),
            rotations: Vec::new(),
            log_scales: Vec::new(),
            opacity_logits: Vec::new(),
            sh: Vec::new(),
            sh_degree,
        }
    }

    pub fn len(&self) -> usize {
        self.opacity_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity_logits.is_empty()
    }

    /// SH coefficients per channel.
    pub fn bands(&self) -> usize {
        coeff_count(self.sh_degree)
    }

    /// Total SH values per Gaussian (all three channels).
    pub fn sh_stride(&self) -> usize {
        3 * self.bands()
    }

    #[inline]
    pub fn position(&self, i: usize) -> Vector3<f64> {
        Vector3::new(
            self.positions[3 * i],
            self.positions[3 * i + 1],
            self.positions[3 * i + 2],
        )
    }

    #[inline]
    pub fn rotation(&self, i: usize) -> Vector4<f64> {
        Vector4::new(
            self.rotations[4 * i],
            self.rotations[4 * i + 1],
            self.rotations[4 * i + 2],
            self.rotations[4 * i + 3],
        )
    }

    #[inline]
    pub fn scale(&self, i: usize) -> Vector3<f64> {
        Vector3::new(
            self.log_scales[3 * i].exp(),
            self.log_scales[3 * i + 1].exp(),
            self.log_scales[3 * i + 2].exp(),
        )
    }

    #[inline]
    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    /// Band-major SH block of Gaussian `i`.
    #[inline]
    pub fn sh_block(&self, i: usize) -> &[f64] {
        let s = self.sh_stride();
        &self.sh[i * s..(i + 1) * s]
    }

    #[inline]
    pub fn sh_band(&self, i: usize, band: usize) -> Vector3<f64> {
        let o = i * self.sh_stride() + band * 3;
        Vector3::new(self.sh[o], self.sh[o + 1], self.sh[o + 2])
    }

    pub fn sh_bands_vec(&self, i: usize) -> Vec<Vector3<f64>> {
        (0..self.bands()).map(|b| self.sh_band(i, b)).collect()
    }

    pub fn push(
        &mut self,
        position: Vector3<f64>,
        rotation: Vector4<f64>,
        log_scale: Vector3<f64>,
        opacity_logit: f64,
        sh: &[f64],
    ) {
        assert_eq!(sh.len(), self.sh_stride());
        self.positions.extend_from_slice(position.as_slice());
        self.rotations.extend_from_slice(rotation.as_slice());
        self.log_scales.extend_from_slice(log_scale.as_slice());
        self.opacity_logits.push(opacity_logit);
        self.sh.extend_from_slice(sh);
    }

    /// Renormalize every rotation quaternion in place.
    pub fn renormalize_rotations(&mut self) {
        for q in self.rotations.chunks_exact_mut(4) {
            let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
            if n > 0.0 && n.is_finite() {
                for v in q {
                    *v /= n;
                }
            } else {
                q.copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
            }
        }
    }

    /// Keep only Gaussians whose mask entry is true. Returns kept count.
    pub fn retain_mask(&mut self, mask: &[bool]) -> usize {
        assert_eq!(mask.len(), self.len());
        let stride = self.sh_stride();
        let mut w = 0;
        for r in 0..self.len() {
            if mask[r] {
                if w != r {
                    self.positions.copy_within(3 * r..3 * r + 3, 3 * w);
                    self.rotations.copy_within(4 * r..4 * r + 4, 4 * w);
                    self.log_scales.copy_within(3 * r..3 * r + 3, 3 * w);
                    self.opacity_logits[w] = self.opacity_logits[r];
                    self.sh.copy_within(stride * r..stride * (r + 1), stride * w);
                }
                w += 1;
            }
        }
        self.positions.truncate(3 * w);
        self.rotations.truncate(4 * w);
        self.log_scales.truncate(3 * w);
        self.opacity_logits.truncate(w);
        self.sh.truncate(stride * w);
        w
    }
}

/// Gradient buffers matching [`GaussianSet`] layout one to one.
#[derive(Debug, Clone)]
pub struct GaussianGrads {
    pub positions: Vec<f64>,
    pub rotations: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub sh: Vec<f64>,
}

impl GaussianGrads {
    pub fn zeros(set: &GaussianSet) -> Self {
        GaussianGrads {
            positions: vec![0.0; set.positions.len()],
            rotations: vec![0.0; set.rotations.len()],
            log_scales: vec![0.0; set.log_scales.len()],
            opacity_logits: vec![0.0; set.opacity_logits.len()],
            sh: vec![0.0; set.sh.len()],
        }
    }

    #[inline]
    pub fn add_position(&mut self, i: usize, g: &Vector3<f64>) {
        self.positions[3 * i] += g.x;
        self.positions[3 * i + 1] += g.y;
        self.positions[3 * i + 2] += g.z;
    }

    #[inline]
    pub fn add_rotation(&mut self, i: usize, g: &Vector4<f64>) {
        for k in 0..4 {
            self.rotations[4 * i + k] += g[k];
        }
    }

    #[inline]
    pub fn add_log_scale(&mut self, i: usize, g: &Vector3<f64>) {
        for k in 0..3 {
            self.log_scales[3 * i + k] += g[k];
        }
    }

    #[inline]
    pub fn add_sh_band(&mut self, i: usize, band: usize, stride: usize, g: &Vector3<f64>) {
        let o = i * stride + band * 3;
        self.sh[o] += g.x;
        self.sh[o + 1] += g.y;
        self.sh[o + 2] += g.z;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_set() -> GaussianSet {
        let mut set = GaussianSet::empty(1);
        for i in 0..4 {
            let p = Vector3::new(i as f64, 0.0, 0.0);
            let sh = vec![0.1 * i as f64; set.sh_stride()];
            set.push(p, Vector4::new(1.0, 0.0, 0.0, 0.0), Vector3::zeros(), 0.0, &sh);
        }
        set
    }

    #[test]
    fn accessors_roundtrip() {
        let set = sample_set();
        assert_eq!(set.len(), 4);
        assert_eq!(set.bands(), 4);
        assert_eq!(set.position(2), Vector3::new(2.0, 0.0, 0.0));
        assert_eq!(set.scale(0), Vector3::new(1.0, 1.0, 1.0));
        assert!((set.opacity(0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn retain_mask_compacts() {
        let mut set = sample_set();
        let kept = set.retain_mask(&[true, false, true, false]);
        assert_eq!(kept, 2);
        assert_eq!(set.len(), 2);
        assert_eq!(set.position(1), Vector3::new(2.0, 0.0, 0.0));
        assert_eq!(set.sh_block(1)[0], 0.2);
    }

    #[test]
    fn renormalize_fixes_drift() {
        let mut set = sample_set();
        set.rotations[0] = 2.0;
        set.renormalize_rotations();
        let q = set.rotation(0);
        assert!((q.norm() - 1.0).abs() < 1e-12);
    }
}
