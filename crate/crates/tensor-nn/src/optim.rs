use crate::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateRule {
    Sgd { lr: f32 },
    Adam { lr: f32, beta1: f32, beta2: f32, eps: f32 },
}

impl UpdateRule {
    pub fn adam(lr: f32) -> UpdateRule {
        UpdateRule::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimizer state: per-parameter moment buffers plus a step counter.
#[derive(Debug, Clone)]
pub struct Optimizer {
    rule: UpdateRule,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Optimizer {
    pub fn new(rule: UpdateRule, params: &ParamSet) -> Optimizer {
        let m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Optimizer { rule, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Replaces the learning rate, keeping moments and the step counter.
    pub fn set_lr(&mut self, new_lr: f32) {
        match &mut self.rule {
            UpdateRule::Sgd { lr } => *lr = new_lr,
            UpdateRule::Adam { lr, .. } => *lr = new_lr,
        }
    }

    /// Applies one update from the gradients currently accumulated in
    /// `params.grad`. Does not zero the gradients.
    pub fn step(&mut self, params: &mut ParamSet) {
        self.step += 1;
        match self.rule {
            UpdateRule::Sgd { lr } => {
                for p in params.iter_mut() {
                    for (x, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                        *x -= lr * g;
                    }
                }
            }
            UpdateRule::Adam { lr, beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(self.step as i32);
                let bc2 = 1.0 - beta2.powi(self.step as i32);
                for (i, p) in params.iter_mut().enumerate() {
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    let grad = p.grad.data();
                    for (j, x) in p.value.data_mut().iter_mut().enumerate() {
                        let g = grad[j];
                        m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                        let mh = m[j] / bc1;
                        let vh = v[j] / bc2;
                        *x -= lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
    }
}
