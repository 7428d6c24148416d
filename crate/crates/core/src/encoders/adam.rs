//! Adam with bias correction and the per-group learning-rate schedules used
//! by the trainer.

#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

/// First/second moment state for one parameter group.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    /// Count of updates skipped because of non-finite gradients.
    pub skipped: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            skipped: 0,
        }
    }

    /// One Adam step over a flat parameter group. Elements with non-finite
    /// gradients are left untouched and counted.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, p: &AdamParams) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - p.beta1.powi(self.t as i32);
        let bc2 = 1.0 - p.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            if !g.is_finite() {
                self.skipped += 1;
                continue;
            }
            self.m[i] = p.beta1 * self.m[i] + (1.0 - p.beta1) * g;
            self.v[i] = p.beta2 * self.v[i] + (1.0 - p.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + p.eps);
        }
    }

    /// Keep moment entries for rows where mask is true (`stride` values per row).
    pub fn retain_mask(&mut self, mask: &[bool], stride: usize) {
        let mut w = 0;
        for (r, &keep) in mask.iter().enumerate() {
            if keep {
                if w != r {
                    self.m.copy_within(r * stride..(r + 1) * stride, w * stride);
                    self.v.copy_within(r * stride..(r + 1) * stride, w * stride);
                }
                w += 1;
            }
        }
        self.m.truncate(w * stride);
        self.v.truncate(w * stride);
    }

    /// Zero-initialized moments for freshly created rows.
    pub fn append_zeros(&mut self, count: usize) {
        self.m.extend(std::iter::repeat(0.0).take(count));
        self.v.extend(std::iter::repeat(0.0).take(count));
    }
}

/// Exponential decay from `lr_init` to `lr_final` over `max_steps`, constant
/// afterwards.
pub fn exponential_lr(step: u64, lr_init: f64, lr_final: f64, max_steps: u64) -> f64 {
    if max_steps == 0 || lr_init == 0.0 {
        return lr_init;
    }
    let t = (step as f64 / max_steps as f64).min(1.0);
    lr_init * (lr_final / lr_init).powf(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn first_step_is_signed_lr() {
        let mut st = AdamState::new(2);
        let mut params = vec![1.0, -2.0];
        let grads = vec![0.3, -0.7];
        st.step(&mut params, &grads, 0.01, &AdamParams::default());
        // Bias-corrected first step: lr * g / (|g| + eps) ~ lr * sign(g).
        assert_relative_eq!(params[0], 1.0 - 0.01, epsilon = 1e-10);
        assert_relative_eq!(params[1], -2.0 + 0.01, epsilon = 1e-10);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut st = AdamState::new(3);
        let mut params = vec![0.5, 1.5, -0.25];
        let orig = params.clone();
        for _ in 0..10 {
            st.step(&mut params, &[0.0, 0.0, 0.0], 0.1, &AdamParams::default());
        }
        assert_eq!(params, orig);
    }

    #[test]
    fn non_finite_gradient_skipped_and_counted() {
        let mut st = AdamState::new(2);
        let mut params = vec![1.0, 1.0];
        st.step(
            &mut params,
            &[f64::NAN, 1.0],
            0.01,
            &AdamParams::default(),
        );
        assert_eq!(params[0], 1.0);
        assert!(params[1] < 1.0);
        assert_eq!(st.skipped, 1);
    }

    #[test]
    fn position_schedule_hits_endpoints() {
        let lr0 = 1.6e-4;
        let lr1 = 1.6e-6;
        assert_relative_eq!(exponential_lr(0, lr0, lr1, 30000), lr0);
        assert_relative_eq!(exponential_lr(30000, lr0, lr1, 30000), lr1);
        assert_relative_eq!(exponential_lr(60000, lr0, lr1, 30000), lr1);
        let mid = exponential_lr(15000, lr0, lr1, 30000);
        assert_relative_eq!(mid, (lr0 * lr1).sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn retain_and_append_track_rows() {
        let mut st = AdamState::new(9);
        for i in 0..9 {
            st.m[i] = i as f64;
            st.v[i] = 10.0 + i as f64;
        }
        st.retain_mask(&[true, false, true], 3);
        assert_eq!(st.m, vec![0.0, 1.0, 2.0, 6.0, 7.0, 8.0]);
        st.append_zeros(3);
        assert_eq!(st.m.len(), 9);
        assert_eq!(st.m[8], 0.0);
    }
}
