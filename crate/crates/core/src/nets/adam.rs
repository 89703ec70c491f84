use super::{real, Real};

/// Adam with the usual defaults (`beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`)
/// and bias correction.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<F>,
    v: Vec<F>,
    steps: u64,
}

impl<F: Real> Adam<F> {
    pub fn new(len: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![F::zero(); len],
            v: vec![F::zero(); len],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn moments(&self) -> (&[F], &[F]) {
        (&self.m, &self.v)
    }

    pub fn step(&mut self, params: &mut [F], grad: &[F], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter length changed");
        assert_eq!(grad.len(), self.m.len(), "gradient length mismatch");
        self.steps += 1;
        let (b1, b2) = (real::<F>(self.beta1), real::<F>(self.beta2));
        let one = F::one();
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);
        let step_size = real::<F>(lr / bc1);
        let inv_bc2 = real::<F>(1.0 / bc2);
        let eps = real::<F>(self.eps);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            params[i] -= step_size * self.m[i] / ((self.v[i] * inv_bc2).sqrt() + eps);
        }
    }
}
