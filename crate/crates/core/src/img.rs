//! Small float image containers shared by the renderer, losses and I/O.

use nalgebra::Vector3;

/// Row-major RGB image with f64 channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Vector3<f64>>,
}

impl ImageRgb {
    pub fn zeros(width: usize, height: usize) -> Self {
        ImageRgb {
            width,
            height,
            data: vec![Vector3::zeros(); width * height],
        }
    }

    pub fn constant(width: usize, height: usize, c: Vector3<f64>) -> Self {
        ImageRgb {
            width,
            height,
            data: vec![c; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> Vector3<f64> {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize) -> &mut Vector3<f64> {
        &mut self.data[y * self.width + x]
    }

    pub fn clamped01(&self) -> ImageRgb {
        ImageRgb {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|p| p.map(|v| v.clamp(0.0, 1.0))).collect(),
        }
    }

    /// Greatest per-channel absolute difference.
    pub fn max_abs_diff(&self, other: &ImageRgb) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs().max())
            .fold(0.0, f64::max)
    }

    pub fn mse(&self, other: &ImageRgb) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_squared())
            .sum();
        sum / (self.data.len() * 3) as f64
    }

    /// 8-bit interleaved RGB bytes (values clamped, rounded).
    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 3);
        for p in &self.data {
            for ch in 0..3 {
                out.push((p[ch].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Self {
        assert_eq!(bytes.len(), width * height * 3);
        let data = bytes
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64) / 255.0)
            .collect();
        ImageRgb {
            width,
            height,
            data,
        }
    }
}

/// Row-major single-channel f64 image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ImagePlane {
    pub fn zeros(width: usize, height: usize) -> Self {
        ImagePlane {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, v: f64) -> Self {
        ImagePlane {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize) -> &mut f64 {
        &mut self.data[y * self.width + x]
    }

    pub fn max_abs_diff(&self, other: &ImagePlane) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
