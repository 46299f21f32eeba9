//! Adam optimizer over flat parameter slices.

/// Adam with bias-corrected first and second moments.
///
/// One optimizer instance owns the moment state for exactly one parameter
/// vector; stepping with a gradient of any other length is a programming error.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    /// Optimizer with the conventional defaults β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new(lr: f64, n_params: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Number of steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// In-place descent step `θ ← θ − lr·m̂/(√v̂ + ε)`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "Adam: parameter length mismatch");
        assert_eq!(grad.len(), self.m.len(), "Adam: gradient length mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_descends_a_convex_quadratic() {
        // Minimize f(θ) = ‖θ − c‖² with c = (1, −2, 0.5).
        let c = [1.0, -2.0, 0.5];
        let mut theta = vec![0.0; 3];
        let mut opt = Adam::new(0.05, 3);
        for _ in 0..2000 {
            let grad: Vec<f64> = theta.iter().zip(&c).map(|(&t, &ci)| 2.0 * (t - ci)).collect();
            opt.step(&mut theta, &grad);
        }
        for (t, ci) in theta.iter().zip(&c) {
            assert!((t - ci).abs() < 1e-3, "converged to {theta:?}");
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate_in_gradient_sign() {
        // With bias correction, step one moves each coordinate by exactly lr·sign(g).
        let mut theta = vec![0.0, 0.0];
        let mut opt = Adam::new(0.01, 2);
        opt.step(&mut theta, &[3.0, -0.2]);
        assert!((theta[0] + 0.01).abs() < 1e-9);
        assert!((theta[1] - 0.01).abs() < 1e-9);
    }
}
