use serde::{Deserialize, Serialize};

use super::ParamStore;

/// Linear interpolation from `start` at step 0 to `end` at step `steps`,
/// constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSchedule {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
}

impl LinearSchedule {
    pub fn new(start: f64, end: f64, steps: usize) -> Self {
        Self { start, end, steps }
    }

    pub fn constant(value: f64) -> Self {
        Self::new(value, value, 0)
    }

    pub fn value(&self, step: usize) -> f64 {
        if self.steps == 0 {
            return self.start;
        }
        let f = step.min(self.steps) as f64 / self.steps as f64;
        self.start * (1.0 - f) + self.end * f
    }
}

/// Applies accumulated gradients as an ascent step on the objective.
pub trait Optimizer {
    /// Updates every parameter from its gradient and advances the step
    /// count. Gradients are left untouched.
    fn step(&mut self, params: &mut ParamStore);
    fn learning_rate(&self) -> f64;
    fn steps_taken(&self) -> usize;
}

/// `theta += lr * grad`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub schedule: LinearSchedule,
    step: usize,
}

impl Sgd {
    pub fn new(schedule: LinearSchedule) -> Self {
        Self { schedule, step: 0 }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut ParamStore) {
        let lr = self.learning_rate();
        for (v, g) in params.pairs_mut() {
            for (x, d) in v.data_mut().iter_mut().zip(g.data()) {
                *x += lr * d;
            }
        }
        self.step += 1;
    }

    fn learning_rate(&self) -> f64 {
        self.schedule.value(self.step)
    }

    fn steps_taken(&self) -> usize {
        self.step
    }
}

/// Adam in ascent form, with the learning rate taken from a schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub schedule: LinearSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: usize,
}

impl Adam {
    pub fn new(schedule: LinearSchedule) -> Self {
        Self { schedule, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: Vec::new(), v: Vec::new(), step: 0 }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut ParamStore) {
        let lr = self.learning_rate();
        let t = (self.step + 1) as i32;
        let (c1, c2) = (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t));
        if self.m.is_empty() {
            for (v, _) in params.pairs_mut() {
                self.m.push(vec![0.0; v.data().len()]);
                self.v.push(vec![0.0; v.data().len()]);
            }
        }
        for (i, (val, g)) in params.pairs_mut().enumerate() {
            for (j, (x, d)) in val.data_mut().iter_mut().zip(g.data()).enumerate() {
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = self.beta1 * *m + (1.0 - self.beta1) * d;
                *v = self.beta2 * *v + (1.0 - self.beta2) * d * d;
                *x += lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
        self.step += 1;
    }

    fn learning_rate(&self) -> f64 {
        self.schedule.value(self.step)
    }

    fn steps_taken(&self) -> usize {
        self.step
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Matrix;

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let s = LinearSchedule::new(1e-4, 1e-7, 4000);
        assert_eq!(s.value(0), 1e-4);
        assert_eq!(s.value(4000), 1e-7);
        assert!((s.value(2000) - 5.005e-5).abs() < 1e-18);
        assert_eq!(s.value(9000), 1e-7);
    }

    #[test]
    fn sgd_ascends() {
        let mut p = ParamStore::new();
        let id = p.add("x", Matrix::scalar(0.0));
        p.accumulate(id, &Matrix::scalar(1.0));
        Sgd::new(LinearSchedule::constant(0.1)).step(&mut p);
        assert_eq!(p.value(id).item(), 0.1);
        Sgd::new(LinearSchedule::constant(0.0)).step(&mut p);
        assert_eq!(p.value(id).item(), 0.1);
    }

    #[test]
    fn adam_moves_toward_gradient() {
        let mut p = ParamStore::new();
        let id = p.add("x", Matrix::scalar(0.0));
        p.accumulate(id, &Matrix::scalar(-5.0));
        Adam::new(LinearSchedule::constant(0.01)).step(&mut p);
        assert!((p.value(id).item() + 0.01).abs() < 1e-6);
    }
}
