//! Classifier graphs: ordered named blocks over the layer stack, plus the
//! two desk-scale architectures used throughout.

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{
    zero_grads, Adam, BatchNorm2d, Conv2d, GlobalAvgPool, Layer, Linear, MaxPool2x2, ReLU,
};
use crate::rng::rng_from;

#[derive(Debug, Clone)]
pub struct NamedBlock {
    pub name: String,
    pub layers: Vec<Layer>,
}

impl NamedBlock {
    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let mut cur = x.clone();
        for layer in &mut self.layers {
            cur = layer.forward(&cur, train);
        }
        cur
    }

    pub fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let mut cur = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            cur = layer.backward(&cur);
        }
        cur
    }

    pub fn output_shape(&self, input: (usize, usize, usize)) -> (usize, usize, usize) {
        self.layers
            .iter()
            .fold(input, |shape, layer| layer.output_shape(shape))
    }
}

/// Architecture identifiers addressable from the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArchId {
    #[serde(rename = "mnist-cnn")]
    MnistCnn,
    #[serde(rename = "vgg-cifar")]
    VggCifar,
}

impl std::str::FromStr for ArchId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist-cnn" => Ok(ArchId::MnistCnn),
            "vgg-cifar" => Ok(ArchId::VggCifar),
            other => Err(Error::validation(format!(
                "unknown architecture {other:?}, expected mnist-cnn|vgg-cifar"
            ))),
        }
    }
}

impl std::fmt::Display for ArchId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ArchId::MnistCnn => "mnist-cnn",
            ArchId::VggCifar => "vgg-cifar",
        };
        f.write_str(s)
    }
}

/// A whole classifier: blocks chained input to logits.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    pub blocks: Vec<NamedBlock>,
    pub input_shape: (usize, usize, usize),
    pub num_classes: usize,
}

impl ModelGraph {
    /// Check that shapes chain and the head emits `num_classes` scores.
    pub fn validate(&self) -> Result<()> {
        let mut shape = self.input_shape;
        for block in &self.blocks {
            shape = block.output_shape(shape);
        }
        if shape != (self.num_classes, 1, 1) {
            return Err(Error::validation(format!(
                "graph output shape {shape:?}, expected ({}, 1, 1)",
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        self.forward_range(0, self.blocks.len(), x, train)
    }

    /// Run blocks[from..to].
    pub fn forward_range(
        &mut self,
        from: usize,
        to: usize,
        x: &Array4<f32>,
        train: bool,
    ) -> Array4<f32> {
        let mut cur = x.clone();
        for block in &mut self.blocks[from..to] {
            cur = block.forward(&cur, train);
        }
        cur
    }

    /// Backpropagate through blocks[from..to], returning the input grad.
    pub fn backward_range(&mut self, from: usize, to: usize, grad: &Array4<f32>) -> Array4<f32> {
        let mut cur = grad.clone();
        for block in self.blocks[from..to].iter_mut().rev() {
            cur = block.backward(&cur);
        }
        cur
    }

    pub fn logits(&mut self, x: &Array4<f32>) -> Array2<f32> {
        let out = self.forward(x, false);
        let n = out.dim().0;
        out.into_shape_with_order((n, self.num_classes))
            .expect("head emits (N, K, 1, 1)")
    }

    /// Shape of block `index`'s output for a single sample.
    pub fn shape_after(&self, blocks: usize) -> (usize, usize, usize) {
        self.blocks[..blocks]
            .iter()
            .fold(self.input_shape, |shape, b| b.output_shape(shape))
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut crate::nn::Param)) {
        for block in &mut self.blocks {
            for layer in &mut block.layers {
                layer.visit_params(f);
            }
        }
    }

    pub fn export_tensors(&self) -> Vec<(String, ndarray::ArrayD<f32>)> {
        let mut out = Vec::new();
        for block in &self.blocks {
            for (i, layer) in block.layers.iter().enumerate() {
                layer.export_tensors(&format!("{}.{i}", block.name), &mut out);
            }
        }
        out
    }

    pub fn import_tensors(&mut self, tensors: &HashMap<String, ndarray::ArrayD<f32>>) -> Result<()> {
        for block in &mut self.blocks {
            for (i, layer) in block.layers.iter_mut().enumerate() {
                layer.import_tensors(&format!("{}.{i}", block.name), tensors)?;
            }
        }
        Ok(())
    }

    /// Content hash over all tensors in declaration order.
    pub fn weights_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, tensor) in self.export_tensors() {
            hasher.update(name.as_bytes());
            for v in tensor.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        hex_string(&hasher.finalize())
    }
}

pub fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

fn conv_block<R: rand::Rng>(
    rng: &mut R,
    name: &str,
    c_in: usize,
    c_out: usize,
    pool: bool,
) -> NamedBlock {
    let mut layers = vec![
        Layer::Conv2d(Conv2d::new(rng, c_in, c_out, 3, 1)),
        Layer::BatchNorm2d(BatchNorm2d::new(c_out)),
        Layer::ReLU(ReLU::default()),
    ];
    if pool {
        layers.push(Layer::MaxPool2x2(MaxPool2x2::default()));
    }
    NamedBlock {
        name: name.to_string(),
        layers,
    }
}

/// Three conv blocks and a linear head on 28x28x1; the canonical split is
/// after the second block (16 channels at 7x7).
pub fn mnist_cnn(seed: u64) -> ModelGraph {
    let mut rng = rng_from(seed);
    let mut b2 = conv_block(&mut rng, "b2", 16, 32, false);
    b2.layers.push(Layer::GlobalAvgPool(GlobalAvgPool::default()));
    let head = NamedBlock {
        name: "head".to_string(),
        layers: vec![Layer::Linear(Linear::new(&mut rng, 32, 10))],
    };
    let graph = ModelGraph {
        blocks: vec![
            conv_block(&mut rng, "b0", 1, 8, true),
            conv_block(&mut rng, "b1", 8, 16, true),
            b2,
            head,
        ],
        input_shape: (1, 28, 28),
        num_classes: 10,
    };
    graph.validate().expect("static architecture");
    graph
}

/// Five conv blocks and a linear head on 32x32x3, one feature map per
/// depth stage for the depth experiments.
pub fn vgg_cifar(seed: u64) -> ModelGraph {
    let mut rng = rng_from(seed);
    let mut b4 = conv_block(&mut rng, "b4", 64, 96, false);
    b4.layers.push(Layer::GlobalAvgPool(GlobalAvgPool::default()));
    let head = NamedBlock {
        name: "head".to_string(),
        layers: vec![Layer::Linear(Linear::new(&mut rng, 96, 10))],
    };
    let graph = ModelGraph {
        blocks: vec![
            conv_block(&mut rng, "b0", 3, 16, true),
            conv_block(&mut rng, "b1", 16, 32, true),
            conv_block(&mut rng, "b2", 32, 48, true),
            conv_block(&mut rng, "b3", 48, 64, true),
            b4,
            head,
        ],
        input_shape: (3, 32, 32),
        num_classes: 10,
    };
    graph.validate().expect("static architecture");
    graph
}

pub fn build_arch(arch: ArchId, seed: u64) -> ModelGraph {
    match arch {
        ArchId::MnistCnn => mnist_cnn(seed),
        ArchId::VggCifar => vgg_cifar(seed),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: usize,
    pub final_loss: f64,
    pub train_accuracy: f64,
}

/// Single-threaded full-model training: shuffled minibatches, Adam,
/// cross-entropy. Deterministic for a fixed seed.
pub fn train_classifier(
    graph: &mut ModelGraph,
    data: &Dataset,
    epochs: usize,
    batch_size: usize,
    lr: f32,
    seed: u64,
) -> TrainHistory {
    let mut rng = rng_from(seed ^ 0x7261696e);
    let mut opt = Adam::new(lr);
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut final_loss = 0.0f64;
    for _ in 0..epochs {
        for i in (1..n).rev() {
            let j = rand::Rng::random_range(&mut rng, 0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0f64;
        let mut batches = 0;
        for chunk in order.chunks(batch_size) {
            let mut images = Array4::zeros((
                chunk.len(),
                data.images.dim().1,
                data.images.dim().2,
                data.images.dim().3,
            ));
            let mut labels = Vec::with_capacity(chunk.len());
            for (bi, &si) in chunk.iter().enumerate() {
                images
                    .index_axis_mut(ndarray::Axis(0), bi)
                    .assign(&data.images.index_axis(ndarray::Axis(0), si));
                labels.push(data.labels[si]);
            }
            for block in &mut graph.blocks {
                zero_grads(&mut block.layers);
            }
            let out = graph.forward(&images, true);
            let logits = out
                .to_shape((chunk.len(), graph.num_classes))
                .expect("head shape")
                .to_owned();
            let (loss, dlogits) = crate::nn::cross_entropy(&logits, &labels);
            let grad4 = dlogits
                .into_shape_with_order((chunk.len(), graph.num_classes, 1, 1))
                .expect("reshape");
            graph.backward_range(0, graph.blocks.len(), &grad4);
            opt.begin_step();
            for block in &mut graph.blocks {
                opt.apply(&mut block.layers);
            }
            epoch_loss += loss as f64;
            batches += 1;
        }
        final_loss = epoch_loss / batches.max(1) as f64;
    }
    TrainHistory {
        epochs,
        final_loss,
        train_accuracy: evaluate(graph, data, batch_size),
    }
}

/// Clean accuracy over a dataset, batched.
pub fn evaluate(graph: &mut ModelGraph, data: &Dataset, batch_size: usize) -> f64 {
    let mut correct = 0usize;
    let mut index = 0;
    while index < data.len() {
        let (images, labels) = data.batch(index, batch_size);
        let logits = graph.logits(&images);
        let preds = crate::nn::argmax_rows(&logits);
        correct += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
        index += labels.len();
    }
    correct as f64 / data.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::digits;

    #[test]
    fn architectures_validate_and_are_deterministic() {
        let a = mnist_cnn(11);
        let b = mnist_cnn(11);
        let c = mnist_cnn(12);
        assert_eq!(a.weights_hash(), b.weights_hash());
        assert_ne!(a.weights_hash(), c.weights_hash());
        assert_eq!(a.shape_after(2), (16, 7, 7));
        let v = vgg_cifar(11);
        assert_eq!(v.shape_after(1), (16, 16, 16));
        assert_eq!(v.shape_after(3), (48, 4, 4));
        assert_eq!(v.shape_after(5), (96, 1, 1));
    }

    #[test]
    fn tiny_training_run_learns_something() {
        let data = digits::generate(5, 0, 400);
        let mut graph = mnist_cnn(5);
        let before = evaluate(&mut graph, &data, 64);
        let hist = train_classifier(&mut graph, &data, 4, 32, 1e-2, 5);
        assert!(
            hist.train_accuracy > before + 0.2,
            "no learning: {before} -> {}",
            hist.train_accuracy
        );
    }

    #[test]
    fn training_is_deterministic() {
        let data = digits::generate(6, 0, 64);
        let mut a = mnist_cnn(6);
        let mut b = mnist_cnn(6);
        train_classifier(&mut a, &data, 1, 32, 1e-3, 9);
        train_classifier(&mut b, &data, 1, 32, 1e-3, 9);
        assert_eq!(a.weights_hash(), b.weights_hash());
    }

    #[test]
    fn tensor_round_trip_preserves_forward() {
        let data = digits::generate(6, 0, 4);
        let mut graph = mnist_cnn(8);
        let tensors: HashMap<_, _> = graph.export_tensors().into_iter().collect();
        let mut fresh = mnist_cnn(99);
        fresh.import_tensors(&tensors).unwrap();
        assert_eq!(graph.logits(&data.images), fresh.logits(&data.images));
    }
}
