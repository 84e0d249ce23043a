use serde::{Deserialize, Serialize};

use crate::nn::{Gradients, ParamStore, Real};

/// Optimiser and loop settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            epochs: 30,
            batch_size: 32,
            lr: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 5.0,
            patience: 5,
            seed: 0,
        }
    }
}

/// Adam with decoupled weight decay. Decay applies to matrices only, not
/// to biases, gains or vectors.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(schedule: &Schedule) -> Self {
        AdamW {
            lr: schedule.lr,
            beta1: schedule.beta1,
            beta2: schedule.beta2,
            eps: schedule.adam_eps,
            weight_decay: schedule.weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Updates every parameter that has a gradient.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>) {
        if self.m.len() < params.len() {
            self.m.resize(params.len(), Vec::new());
            self.v.resize(params.len(), Vec::new());
        }
        self.step += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(self.step));
        let c2 = T::of(1.0 - self.beta2.powi(self.step));
        let (lr, eps) = (T::of(self.lr), T::of(self.eps));
        let one = T::one();
        for (id, g) in grads.iter() {
            let p = params.get_mut(id);
            let decay = if p.shape.len() >= 2 { T::of(self.weight_decay) } else { T::zero() };
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            if m.is_empty() {
                *m = vec![T::zero(); p.len()];
                *v = vec![T::zero(); p.len()];
            }
            for i in 0..p.len() {
                let gi = g.data[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                let w = p.data[i];
                p.data[i] = w - lr * (update + decay * w);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Graph, Init, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let w = store.init("w", &[2], Init::Ones, &mut rng);
        let grads = {
            let mut g = Graph::new(&store);
            let x = g.constant(Tensor::new(vec![2], vec![3.0, -2.0]).unwrap());
            let p = g.param(w);
            let prod = g.row_dot(p, x).unwrap();
            let loss = g.sum(prod);
            g.backward(loss).unwrap()
        };
        let mut opt = AdamW::new(&Schedule { lr: 0.1, ..Schedule::default() });
        opt.step(&mut store, &grads);
        let got = &store.get(w).data;
        assert!((got[0] - 0.9).abs() < 1e-6 && (got[1] - 1.1).abs() < 1e-6, "{got:?}");
    }
}
