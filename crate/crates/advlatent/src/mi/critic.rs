//! Small MLPs over flat feature vectors, shared by every estimator kind.

use ndarray::{Array2, Array4};
use rand_chacha::ChaCha8Rng;

use crate::nn::{zero_grads, Adam, Layer, Linear, ReLU};

#[derive(Debug)]
pub(crate) struct Mlp {
    layers: Vec<Layer>,
    opt: Adam,
    pub(crate) in_features: usize,
    pub(crate) out_features: usize,
}

impl Mlp {
    /// `dims` lists feature widths input-first; ReLU sits between every
    /// consecutive pair of linears.
    pub(crate) fn new(rng: &mut ChaCha8Rng, dims: &[usize], lr: f32) -> Mlp {
        assert!(dims.len() >= 2, "mlp needs input and output widths");
        let mut layers = Vec::new();
        for (i, pair) in dims.windows(2).enumerate() {
            layers.push(Layer::Linear(Linear::new(rng, pair[0], pair[1])));
            if i + 2 < dims.len() {
                layers.push(Layer::ReLU(ReLU::default()));
            }
        }
        Mlp {
            layers,
            opt: Adam::new(lr),
            in_features: dims[0],
            out_features: *dims.last().unwrap(),
        }
    }

    pub(crate) fn forward(&mut self, x: &Array2<f32>) -> Array2<f32> {
        let n = x.nrows();
        let mut cur = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, self.in_features, 1, 1))
            .expect("flat input");
        for layer in &mut self.layers {
            cur = layer.forward(&cur, true);
        }
        cur.into_shape_with_order((n, self.out_features))
            .expect("flat output")
    }

    pub(crate) fn backward(&mut self, dout: &Array2<f32>) {
        let n = dout.nrows();
        let mut grad: Array4<f32> = dout
            .to_owned()
            .into_shape_with_order((n, self.out_features, 1, 1))
            .expect("flat grad");
        for layer in self.layers.iter_mut().rev() {
            grad = layer.backward(&grad);
        }
    }

    pub(crate) fn step(&mut self) {
        self.opt.begin_step();
        self.opt.apply(&mut self.layers);
        zero_grads(&mut self.layers);
    }
}

pub(crate) fn all_finite(a: &Array2<f32>) -> bool {
    a.iter().all(|v| v.is_finite())
}
