//! Adam with bias correction, operating through the layer visitor.

use super::layers::{Layer, Param};

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: u64,
}

impl Adam {
    pub fn new(lr: f32) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
        }
    }

    fn update(&self, t: u64, p: &mut Param) {
        let b1t = 1.0 - self.beta1.powi(t as i32);
        let b2t = 1.0 - self.beta2.powi(t as i32);
        for i in 0..p.value.len() {
            let g = p.grad.as_slice().expect("contiguous")[i];
            let m = &mut p.m.as_slice_mut().expect("contiguous")[i];
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            let m_hat = *m / b1t;
            let v = &mut p.v.as_slice_mut().expect("contiguous")[i];
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let v_hat = *v / b2t;
            p.value.as_slice_mut().expect("contiguous")[i] -=
                self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    /// Advance the step counter without touching parameters. Use together
    /// with `apply` when one logical step spans several layer groups.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Update parameters at the current step counter.
    pub fn apply(&mut self, layers: &mut [Layer]) {
        let t = self.t.max(1);
        for layer in layers {
            layer.visit_params(&mut |p| self.update(t, p));
        }
    }

    pub fn step(&mut self, layers: &mut [Layer]) {
        self.begin_step();
        self.apply(layers);
    }
}

pub fn zero_grads(layers: &mut [Layer]) {
    for layer in layers {
        layer.visit_params(&mut |p| p.zero_grad());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::Linear;
    use crate::rng::rng_from;
    use ndarray::Array4;
    use rand::Rng;

    #[test]
    fn adam_descends_a_quadratic() {
        // Fit y = 0: minimize ||W x||^2 for a fixed x; W should shrink.
        let mut rng = rng_from(12);
        let mut layers = vec![Layer::Linear(Linear::new(&mut rng, 4, 3))];
        let x = Array4::from_shape_fn((8, 4, 1, 1), |_| rng.random_range(-1.0f32..1.0));
        let mut opt = Adam::new(0.05);
        let mut first_loss = None;
        let mut last_loss = 0.0;
        for _ in 0..200 {
            zero_grads(&mut layers);
            let y = layers[0].forward(&x, true);
            let loss: f32 = y.iter().map(|v| v * v).sum();
            layers[0].backward(&y.mapv(|v| 2.0 * v));
            opt.step(&mut layers);
            first_loss.get_or_insert(loss);
            last_loss = loss;
        }
        assert!(last_loss < 0.01 * first_loss.unwrap(), "loss {last_loss}");
    }
}
