use crate::model::AdamState;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: AdamState,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            state: AdamState {
                step: 0,
                m: vec![0.0; n],
                v: vec![0.0; n],
            },
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        let s = &mut self.state;
        s.step += 1;
        let t = s.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            s.m[i] = self.beta1 * s.m[i] + (1.0 - self.beta1) * g;
            s.v[i] = self.beta2 * s.v[i] + (1.0 - self.beta2) * g * g;
            let update = lr * (s.m[i] / c1) / ((s.v[i] / c2).sqrt() + self.eps);
            if update != 0.0 {
                params[i] -= update;
            }
        }
    }
}

pub fn global_norm(grads: &[f64]) -> f64 {
    grads.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let k = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= k);
    }
    norm
}

/// Multiplies the learning rate by `factor` once `patience` consecutive
/// epochs pass without a new best validation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub best: Option<f64>,
    pub stale: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        Self {
            lr,
            factor,
            patience,
            best: None,
            stale: 0,
        }
    }

    /// Records one validation loss; returns true when it is a new best.
    pub fn observe(&mut self, loss: f64) -> bool {
        if self.best.is_none_or(|b| loss < b) {
            self.best = Some(loss);
            self.stale = 0;
            return true;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.lr *= self.factor;
            self.stale = 0;
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_hits_target_norm() {
        let mut g: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let n = global_norm(&g);
        g.iter_mut().for_each(|v| *v *= 50.0 / n);
        let before = clip_grad_norm(&mut g, 5.0);
        assert!((before - 50.0).abs() < 1e-9);
        assert!((global_norm(&g) - 5.0).abs() < 1e-12);
        let mut small = vec![0.3, 0.4];
        clip_grad_norm(&mut small, 5.0);
        assert_eq!(small, vec![0.3, 0.4]);
    }

    #[test]
    fn plateau_decay() {
        let mut s = PlateauScheduler::new(1e-3, 0.8, 10);
        assert!(s.observe(1.0));
        for _ in 0..9 {
            assert!(!s.observe(1.0));
            assert_eq!(s.lr, 1e-3);
        }
        s.observe(1.5);
        assert!((s.lr - 8e-4).abs() < 1e-18);
        assert!(s.observe(0.5));
        assert_eq!(s.stale, 0);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut a = Adam::new(3, 0.9, 0.999, 1e-8);
        let mut p = vec![1.0, 2.0, 3.0];
        a.step(&mut p, &[0.5, -2.0, 0.0], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] - 2.1).abs() < 1e-6);
        assert_eq!(p[2], 3.0);
        let before = p.clone();
        a.step(&mut p, &[1.0, 1.0, 1.0], 0.0);
        assert_eq!(p, before);
    }
}
