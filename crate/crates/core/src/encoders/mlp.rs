//! Fully-connected ReLU networks with hand-written backward, batched over
//! columns of a `DMatrix`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// out_dim x in_dim.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// ReLU between layers, linear output. The final layer may be zero-initialized
/// so the network starts as the constant zero function.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Layer inputs retained for the backward pass; `inputs[l]` feeds layer `l`.
pub struct MlpCache {
    inputs: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<(DMatrix<f64>, DVector<f64>)>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            layers: mlp
                .layers
                .iter()
                .map(|l| {
                    (
                        DMatrix::zeros(l.w.nrows(), l.w.ncols()),
                        DVector::zeros(l.b.len()),
                    )
                })
                .collect(),
        }
    }

    pub fn add(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.0 += &b.0;
            a.1 += &b.1;
        }
    }
}

impl Mlp {
    /// `dims` lists layer widths input-first, e.g. `[35, 64, 64, 6]` is a
    /// three-layer network.
    pub fn new(dims: &[usize], zero_init_last: bool, rng: &mut ChaCha8Rng) -> Mlp {
        assert!(dims.len() >= 2);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[i], dims[i + 1]);
            let last = i == dims.len() - 2;
            let k = 1.0 / (fan_in as f64).sqrt();
            let mut w = DMatrix::zeros(fan_out, fan_in);
            let mut b = DVector::zeros(fan_out);
            if !(last && zero_init_last) {
                for v in w.iter_mut() {
                    *v = rng.gen_range(-k..k);
                }
                for v in b.iter_mut() {
                    *v = rng.gen_range(-k..k);
                }
            }
            layers.push(Linear { w, b });
        }
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().w.nrows()
    }

    /// Batched forward; columns are samples.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, MlpCache)> {
        if x.nrows() != self.in_dim() {
            return Err(Error::DimensionMismatch(format!(
                "mlp expects {} input rows, got {}",
                self.in_dim(),
                x.nrows()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            inputs.push(cur.clone());
            let mut z = &layer.w * &cur;
            for mut col in z.column_iter_mut() {
                col += &layer.b;
            }
            if l + 1 < self.layers.len() {
                z.apply(|v| *v = v.max(0.0));
            }
            cur = z;
        }
        Ok((cur, MlpCache { inputs }))
    }

    /// Backward; returns parameter gradients and `dL/dinput`.
    pub fn backward(&self, cache: &MlpCache, d_out: &DMatrix<f64>) -> (MlpGrads, DMatrix<f64>) {
        let mut grads = MlpGrads::zeros_like(self);
        let mut d = d_out.clone();
        for l in (0..self.layers.len()).rev() {
            let x = &cache.inputs[l];
            grads.layers[l].0 = &d * x.transpose();
            let mut db = DVector::zeros(d.nrows());
            for col in d.column_iter() {
                db += col;
            }
            grads.layers[l].1 = db;
            let mut dx = self.layers[l].w.transpose() * &d;
            if l > 0 {
                // ReLU mask: the stored input of layer l is the activated
                // output of layer l-1.
                dx.zip_apply(x, |g, xv| {
                    if xv <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            d = dx;
        }
        (grads, d)
    }

    /// Flat parameter views used by the optimizer and checkpointing:
    /// per layer, weights (row-major) then biases.
    pub fn param_blocks(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.w.transpose().as_slice().to_vec()); // row-major
            out.push(l.b.as_slice().to_vec());
        }
        out
    }

    pub fn set_param_blocks(&mut self, blocks: &[Vec<f64>]) -> Result<()> {
        if blocks.len() != self.layers.len() * 2 {
            return Err(Error::DimensionMismatch("mlp block count".into()));
        }
        for (i, l) in self.layers.iter_mut().enumerate() {
            let wb = &blocks[2 * i];
            let bb = &blocks[2 * i + 1];
            if wb.len() != l.w.len() || bb.len() != l.b.len() {
                return Err(Error::DimensionMismatch("mlp block shape".into()));
            }
            l.w = DMatrix::from_row_slice(l.w.nrows(), l.w.ncols(), wb);
            l.b = DVector::from_column_slice(bb);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    #[test]
    fn zero_final_layer_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mlp = Mlp::new(&[5, 16, 3], true, &mut rng);
        let x = DMatrix::from_fn(5, 4, |r, c| (r + c) as f64 * 0.3 - 1.0);
        let (y, _) = mlp.forward(&x).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_single_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut mlp = Mlp::new(&[3, 3], false, &mut rng);
        mlp.layers[0].w = DMatrix::identity(3, 3);
        mlp.layers[0].b = DVector::zeros(3);
        let x = DMatrix::from_column_slice(3, 1, &[0.5, 1.25, 0.0]);
        let (y, _) = mlp.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mlp = Mlp::new(&[4, 8, 2], false, &mut rng);
        let x = DMatrix::zeros(5, 1);
        assert!(mlp.forward(&x).is_err());
    }

    #[test]
    fn gradcheck_8_64_6() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mlp = Mlp::new(&[8, 64, 6], false, &mut rng);
        let x = DMatrix::from_fn(8, 3, |r, c| ((r * 3 + c) as f64 * 0.17).sin());
        let wsum = DMatrix::from_fn(6, 3, |r, c| 0.1 + 0.05 * (r as f64) - 0.03 * (c as f64));

        let f = |m: &Mlp, x: &DMatrix<f64>| {
            let (y, _) = m.forward(x).unwrap();
            y.component_mul(&wsum).sum()
        };

        let (_, cache) = mlp.forward(&x).unwrap();
        let (grads, dx) = mlp.backward(&cache, &wsum);

        let h = 1e-6;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);

        // Sample a spread of weight entries in each layer.
        for l in 0..mlp.layers.len() {
            let (nr, nc) = (mlp.layers[l].w.nrows(), mlp.layers[l].w.ncols());
            for k in 0..12 {
                let r = (k * 7) % nr;
                let c = (k * 13) % nc;
                let mut mp = mlp.clone();
                let mut mm = mlp.clone();
                mp.layers[l].w[(r, c)] += h;
                mm.layers[l].w[(r, c)] -= h;
                let num = (f(&mp, &x) - f(&mm, &x)) / (2.0 * h);
                assert!(
                    rel(grads.layers[l].0[(r, c)], num) < 1e-5,
                    "w[{l}][{r},{c}]"
                );
            }
            for r in 0..mlp.layers[l].b.len() {
                let mut mp = mlp.clone();
                let mut mm = mlp.clone();
                mp.layers[l].b[r] += h;
                mm.layers[l].b[r] -= h;
                let num = (f(&mp, &x) - f(&mm, &x)) / (2.0 * h);
                assert!(rel(grads.layers[l].1[r], num) < 1e-5, "b[{l}][{r}]");
            }
        }
        // Input gradient.
        for r in 0..8 {
            for c in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[(r, c)] += h;
                xm[(r, c)] -= h;
                let num = (f(&mlp, &xp) - f(&mlp, &xm)) / (2.0 * h);
                assert!(rel(dx[(r, c)], num) < 1e-5, "x[{r},{c}]");
            }
        }
    }

    #[test]
    fn param_blocks_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(&[4, 8, 2], false, &mut rng);
        let blocks = mlp.param_blocks();
        let mut other = Mlp::new(&[4, 8, 2], true, &mut rng);
        other.set_param_blocks(&blocks).unwrap();
        assert_eq!(mlp, other);
    }

    #[test]
    fn proptest_relu_piecewise_linear() {
        // Along a segment where no ReLU flips, the network is affine.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mlp = Mlp::new(&[3, 16, 2], false, &mut rng);
        let x0 = DMatrix::from_column_slice(3, 1, &[0.3, -0.2, 0.7]);
        let eps = 1e-7;
        let dir = DMatrix::from_column_slice(3, 1, &[0.1, 0.2, -0.05]);
        let y0 = mlp.forward(&x0).unwrap().0;
        let y1 = mlp.forward(&(&x0 + &dir * eps)).unwrap().0;
        let y2 = mlp.forward(&(&x0 + &dir * (2.0 * eps))).unwrap().0;
        let lin = &y1 * 2.0 - &y0;
        assert_relative_eq!(lin[(0, 0)], y2[(0, 0)], epsilon = 1e-10);
        assert_relative_eq!(lin[(1, 0)], y2[(1, 0)], epsilon = 1e-10);
    }
}
