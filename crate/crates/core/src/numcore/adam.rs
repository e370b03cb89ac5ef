use std::collections::BTreeMap;

use super::tensor::Tensor;

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with bias correction. Moment buffers are keyed by tensor identity,
/// so one optimizer can drive any fixed set of parameters; `step` applies
/// one update to every parameter it is handed, reading the gradient
/// accumulators the caller filled via `backward`.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    moments: BTreeMap<u64, Moments>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam::with_hyperparams(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        assert!(lr > 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2));
        Adam {
            lr,
            beta1,
            beta2,
            epsilon,
            step_count: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected update over `params`. Panics if a parameter has
    /// no gradient buffer or its size changed since the last step.
    pub fn step(&mut self, params: &[&Tensor]) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for p in params {
            let grad = p
                .grad()
                .expect("adam_step on a tensor without gradients is a contract violation");
            let slot = self.moments.entry(p.id()).or_insert_with(|| Moments {
                m: vec![0.0; grad.len()],
                v: vec![0.0; grad.len()],
            });
            assert_eq!(slot.m.len(), grad.len(), "adam_step shape mismatch");
            let (beta1, beta2, lr, eps) = (self.beta1, self.beta2, self.lr, self.epsilon);
            p.update_values(|values| {
                for i in 0..grad.len() {
                    let g = grad[i];
                    slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * g;
                    slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = slot.m[i] / bc1;
                    let v_hat = slot.v[i] / bc2;
                    values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            });
        }
    }

    /// Largest second-moment entry, for diagnostics.
    pub fn max_second_moment(&self) -> f64 {
        self.moments
            .values()
            .flat_map(|s| s.v.iter().cloned())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let p = Tensor::param(&[3], vec![0.5, -0.5, 1.5]);
        let mut adam = Adam::new(0.001);
        adam.step(&[&p]);
        assert_eq!(p.values(), vec![0.5, -0.5, 1.5]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        // Hand evaluation: m = 0.1, v = 0.001, bias correction makes
        // m_hat = v_hat = 1, so the update is lr / (1 + eps) ~ lr.
        let p = Tensor::param(&[1], vec![0.0]);
        p.zero_grad();
        set_grad(&p, &[1.0]);
        let mut adam = Adam::new(0.001);
        adam.step(&[&p]);
        let v = p.values()[0];
        assert!((v + 0.001).abs() < 1e-9, "moved to {v}");
    }

    #[test]
    fn two_unit_gradient_steps_move_by_about_two_lr() {
        let p = Tensor::param(&[1], vec![0.0]);
        let mut adam = Adam::new(0.001);
        set_grad(&p, &[1.0]);
        adam.step(&[&p]);
        set_grad(&p, &[1.0]);
        adam.step(&[&p]);
        let v = p.values()[0];
        assert!((v + 0.002).abs() < 1e-6, "moved to {v}");
    }

    #[test]
    fn second_moments_stay_nonnegative() {
        let p = Tensor::param(&[2], vec![0.0, 0.0]);
        let mut adam = Adam::new(0.01);
        for s in 0..20 {
            set_grad(&p, &[if s % 2 == 0 { 1.0 } else { -3.0 }, 0.25]);
            adam.step(&[&p]);
            assert!(adam.max_second_moment() >= 0.0);
        }
        assert_eq!(adam.step_count(), 20);
    }

    /// Test helper: overwrite the gradient accumulator via a backward pass
    /// of g . p (gradient of sum(g*p) w.r.t. p is exactly g).
    fn set_grad(p: &Tensor, g: &[f64]) {
        p.zero_grad();
        let gt = Tensor::new(&[g.len()], g.to_vec());
        p.mul(&gt).sum().backward().unwrap();
    }
}
