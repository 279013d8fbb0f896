//! Adam with bias correction. State is keyed by parameter name; parameters
//! absent from a gradient set are treated as having zero gradient and still
//! decay their moments.

use std::collections::HashMap;

use crate::autodiff::{GradientSet, Parameterized, Tensor};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f32,
    step: u64,
    first_moment: HashMap<String, Tensor>,
    second_moment: HashMap<String, Tensor>,
}

impl Adam {
    pub fn new(learning_rate: f32) -> Self {
        Adam {
            learning_rate,
            step: 0,
            first_moment: HashMap::new(),
            second_moment: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every parameter.
    pub fn step(&mut self, params: &mut dyn Parameterized, grads: &GradientSet) {
        self.step += 1;
        let t = self.step as i32;
        let correction1 = 1.0 - BETA1.powi(t);
        let correction2 = 1.0 - BETA2.powi(t);
        let lr = self.learning_rate as f64;
        let first = &mut self.first_moment;
        let second = &mut self.second_moment;
        params.for_each_param_mut(&mut |name, tensor| {
            let m = first
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(tensor.shape().to_vec()));
            let v = second
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(tensor.shape().to_vec()));
            let grad = grads.get(name);
            for i in 0..tensor.numel() {
                let g = grad.map_or(0.0, |g| g.data()[i] as f64);
                let mi = BETA1 * m.data()[i] as f64 + (1.0 - BETA1) * g;
                let vi = BETA2 * v.data()[i] as f64 + (1.0 - BETA2) * g * g;
                m.data_mut()[i] = mi as f32;
                v.data_mut()[i] = vi as f32;
                let m_hat = mi / correction1;
                let v_hat = vi / correction2;
                let delta = lr * m_hat / (v_hat.sqrt() + EPS);
                tensor.data_mut()[i] = (tensor.data()[i] as f64 - delta) as f32;
            }
        });
    }

    /// Moment tensors in the visit order of `params` (for checkpointing).
    pub fn export_state(&self, params: &dyn Parameterized) -> Vec<(String, Tensor, Tensor)> {
        let mut out = Vec::new();
        params.for_each_param(&mut |name, tensor| {
            let zeros = || Tensor::zeros(tensor.shape().to_vec());
            out.push((
                name.to_string(),
                self.first_moment.get(name).cloned().unwrap_or_else(zeros),
                self.second_moment.get(name).cloned().unwrap_or_else(zeros),
            ));
        });
        out
    }

    /// Restore from checkpointed moments.
    pub fn import_state(
        learning_rate: f32,
        step: u64,
        moments: Vec<(String, Tensor, Tensor)>,
    ) -> Self {
        let mut adam = Adam::new(learning_rate);
        adam.step = step;
        for (name, m, v) in moments {
            adam.first_moment.insert(name.clone(), m);
            adam.second_moment.insert(name, v);
        }
        adam
    }
}
