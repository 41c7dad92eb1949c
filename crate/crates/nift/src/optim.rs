//! Adam optimizer, shared by field training and pose optimization.

/// Adam with bias correction (Kingma & Ba defaults).
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(dim: usize) -> Self {
        Self { m: vec![0.0; dim], v: vec![0.0; dim], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// One update in place: `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    /// The update Adam would apply, without mutating `params`. Used where the
    /// parameters live on a manifold and the step is composed, not added.
    pub fn step_delta(&mut self, grad: &[f64], lr: f64, delta: &mut [f64]) {
        assert_eq!(grad.len(), self.m.len());
        assert_eq!(delta.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..grad.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            delta[i] = -lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // First step on gradient 1 with lr 0.01: m_hat = v_hat = 1, so the update
    // is -0.01 / (1 + 1e-8).
    #[test]
    fn first_step_magnitude() {
        let mut adam = Adam::new(1);
        let mut params = vec![0.0];
        adam.step(&mut params, &[1.0], 0.01);
        let expected = -0.01 / (1.0 + 1e-8);
        assert!((params[0] - expected).abs() < 1e-18, "got {}", params[0]);
    }

    #[test]
    fn step_delta_matches_step() {
        let mut a = Adam::new(2);
        let mut b = Adam::new(2);
        let mut params = vec![0.3, -0.7];
        let mut delta = vec![0.0; 2];
        for k in 0..25 {
            let grad = vec![(k as f64 * 0.37).sin(), (k as f64 * 0.11).cos()];
            let mut expected = params.clone();
            a.step(&mut expected, &grad, 0.05);
            b.step_delta(&grad, 0.05, &mut delta);
            params[0] += delta[0];
            params[1] += delta[1];
            assert_eq!(params, expected);
        }
    }

    // Independent re-derivation of the recurrence, run on a 2D quadratic.
    // Traces must agree to 1e-12 over 100 steps.
    #[test]
    fn matches_reference_trace_on_quadratic() {
        let (a, b) = (1.0, 10.0); // f(x, y) = a x^2 / 2 + b y^2 / 2
        let lr = 0.1;
        let (beta1, beta2, eps) = (0.9, 0.999, 1e-8);

        // Reference: scalar state tracked explicitly per coordinate.
        let mut rx = 2.0_f64;
        let mut ry = -1.5_f64;
        let (mut m1, mut m2, mut v1, mut v2) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
        let mut reference = Vec::new();
        for t in 1..=100u32 {
            let g1 = a * rx;
            let g2 = b * ry;
            m1 = beta1 * m1 + (1.0 - beta1) * g1;
            m2 = beta1 * m2 + (1.0 - beta1) * g2;
            v1 = beta2 * v1 + (1.0 - beta2) * g1 * g1;
            v2 = beta2 * v2 + (1.0 - beta2) * g2 * g2;
            let bc1 = 1.0 - beta1.powi(t as i32);
            let bc2 = 1.0 - beta2.powi(t as i32);
            rx -= lr * (m1 / bc1) / ((v1 / bc2).sqrt() + eps);
            ry -= lr * (m2 / bc1) / ((v2 / bc2).sqrt() + eps);
            reference.push((rx, ry));
        }

        let mut adam = Adam::new(2);
        let mut p = vec![2.0, -1.5];
        for (rx, ry) in reference {
            let grad = vec![a * p[0], b * p[1]];
            adam.step(&mut p, &grad, lr);
            assert!((p[0] - rx).abs() < 1e-12 && (p[1] - ry).abs() < 1e-12);
        }
        // And it should have made progress toward the minimum.
        assert!(p[0].abs() < 2.0 && p[1].abs() < 1.5);
    }
}
