//! Hand-rolled f32 neural-network substrate: layers with explicit backward
//! passes, classification losses, and Adam.

pub mod adam;
pub mod layers;
pub mod loss;

pub use adam::{zero_grads, Adam};
pub use layers::{BatchNorm2d, Conv2d, GlobalAvgPool, Layer, Linear, MaxPool2x2, Param, ReLU};
pub use loss::{accuracy, argmax_rows, cross_entropy, cross_entropy_per_sample, softmax};
