//! Minimal f32 layer stack with explicit backward passes. Every layer maps
//! (N, C, H, W) to (N, C', H', W'); vectors ride along as (N, K, 1, 1).

use ndarray::{Array1, Array2, Array4, ArrayD, Axis, Ix1, Ix2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::collections::HashMap;

use crate::error::{Error, Result};

/// A trainable tensor with its gradient and optimizer state.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f32>,
    pub grad: ArrayD<f32>,
    pub m: ArrayD<f32>,
    pub v: ArrayD<f32>,
}

impl Param {
    pub fn new(value: ArrayD<f32>) -> Param {
        let zeros = ArrayD::zeros(value.raw_dim());
        Param {
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

fn he_normal<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> ArrayD<f32> {
    let std = (2.0 / fan_in as f32).sqrt();
    let dist = Normal::new(0.0f32, std).expect("finite std");
    ArrayD::from_shape_fn(shape, |_| dist.sample(rng))
}

/// 3x3 (or any odd k) same-or-valid convolution, stride 1, via im2col.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub padding: usize,
    cols: Option<Array2<f32>>,
    input_hw: (usize, usize, usize),
}

impl Conv2d {
    pub fn new<R: Rng>(
        rng: &mut R,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
    ) -> Conv2d {
        let fan_in = in_channels * kernel * kernel;
        Conv2d {
            weight: Param::new(he_normal(rng, &[out_channels, fan_in], fan_in)),
            bias: Param::new(ArrayD::zeros(vec![out_channels])),
            in_channels,
            out_channels,
            kernel,
            padding,
            cols: None,
            input_hw: (0, 0, 0),
        }
    }

    /// Kernel passing each input channel straight through (requires
    /// out_channels == in_channels and odd kernel).
    pub fn set_identity(&mut self) {
        assert_eq!(self.in_channels, self.out_channels);
        assert_eq!(self.kernel % 2, 1);
        let k = self.kernel;
        let center = (k / 2) * k + k / 2;
        self.weight.value.fill(0.0);
        for c in 0..self.out_channels {
            self.weight.value[[c, c * k * k + center]] = 1.0;
        }
        self.bias.value.fill(0.0);
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (h + 2 * self.padding + 1 - self.kernel, w + 2 * self.padding + 1 - self.kernel)
    }

    fn im2col(&self, x: &Array4<f32>) -> Array2<f32> {
        let (n, c, h, w) = x.dim();
        let (oh, ow) = self.out_hw(h, w);
        let k = self.kernel;
        let pad = self.padding as isize;
        let mut cols = Array2::zeros((c * k * k, n * oh * ow));
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    for ni in 0..n {
                        for oy in 0..oh {
                            let iy = oy as isize + ky as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let base = (ni * oh + oy) * ow;
                            for ox in 0..ow {
                                let ix = ox as isize + kx as isize - pad;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                cols[[row, base + ox]] = x[[ni, ci, iy as usize, ix as usize]];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &Array2<f32>, n: usize, h: usize, w: usize) -> Array4<f32> {
        let c = self.in_channels;
        let (oh, ow) = self.out_hw(h, w);
        let k = self.kernel;
        let pad = self.padding as isize;
        let mut dx = Array4::zeros((n, c, h, w));
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    for ni in 0..n {
                        for oy in 0..oh {
                            let iy = oy as isize + ky as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let base = (ni * oh + oy) * ow;
                            for ox in 0..ow {
                                let ix = ox as isize + kx as isize - pad;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                dx[[ni, ci, iy as usize, ix as usize]] += dcols[[row, base + ox]];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&mut self, x: &Array4<f32>) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channels");
        let (oh, ow) = self.out_hw(h, w);
        let cols = self.im2col(x);
        let weight = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("conv weight is 2-D");
        let mut out2 = weight.dot(&cols);
        let bias = self
            .bias
            .value
            .view()
            .into_dimensionality::<Ix1>()
            .expect("conv bias is 1-D");
        for (mut row, b) in out2.rows_mut().into_iter().zip(bias.iter()) {
            row += *b;
        }
        self.cols = Some(cols);
        self.input_hw = (n, h, w);
        // out2 is (C_out, N*OH*OW) with the column index ordered (n, oy, ox).
        let mut out = Array4::zeros((n, self.out_channels, oh, ow));
        for co in 0..self.out_channels {
            for ni in 0..n {
                for oy in 0..oh {
                    let base = (ni * oh + oy) * ow;
                    for ox in 0..ow {
                        out[[ni, co, oy, ox]] = out2[[co, base + ox]];
                    }
                }
            }
        }
        out
    }

    pub fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let (n, h, w) = self.input_hw;
        let (gn, gc, oh, ow) = grad.dim();
        assert_eq!((gn, gc), (n, self.out_channels), "conv grad shape");
        let cols = self.cols.take().expect("forward before backward");
        let mut grad2 = Array2::zeros((self.out_channels, n * oh * ow));
        for co in 0..self.out_channels {
            for ni in 0..n {
                for oy in 0..oh {
                    let base = (ni * oh + oy) * ow;
                    for ox in 0..ow {
                        grad2[[co, base + ox]] = grad[[ni, co, oy, ox]];
                    }
                }
            }
        }
        let dw = grad2.dot(&cols.t());
        self.weight.grad += &dw.into_dyn();
        let db = grad2.sum_axis(Axis(1));
        self.bias.grad += &db.into_dyn();
        let weight = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("conv weight is 2-D");
        let dcols = weight.t().dot(&grad2);
        self.col2im(&dcols, n, h, w)
    }
}

/// Per-channel batch normalization over (N, H, W).
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array1<f32>,
    pub running_var: Array1<f32>,
    pub momentum: f32,
    pub eps: f32,
    normalized: Option<Array4<f32>>,
    inv_std: Array1<f32>,
    trained_batch: bool,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> BatchNorm2d {
        BatchNorm2d {
            gamma: Param::new(ArrayD::ones(vec![channels])),
            beta: Param::new(ArrayD::zeros(vec![channels])),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.1,
            eps: 1e-5,
            normalized: None,
            inv_std: Array1::zeros(channels),
            trained_batch: false,
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.gamma.value.len(), "bn channels");
        let count = (n * h * w) as f32;
        let (mean, var) = if train {
            let mut mean = Array1::<f32>::zeros(c);
            let mut var = Array1::<f32>::zeros(c);
            for ci in 0..c {
                let slice = x.index_axis(Axis(1), ci);
                let m = slice.sum() / count;
                mean[ci] = m;
                var[ci] = slice.iter().map(|&v| (v - m) * (v - m)).sum::<f32>() / count;
            }
            for ci in 0..c {
                self.running_mean[ci] =
                    (1.0 - self.momentum) * self.running_mean[ci] + self.momentum * mean[ci];
                self.running_var[ci] =
                    (1.0 - self.momentum) * self.running_var[ci] + self.momentum * var[ci];
            }
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let gamma = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap();
        let beta = self.beta.value.view().into_dimensionality::<Ix1>().unwrap();
        let mut normalized = Array4::zeros((n, c, h, w));
        let mut out = Array4::zeros((n, c, h, w));
        for ci in 0..c {
            let (m, s, g, b) = (mean[ci], inv_std[ci], gamma[ci], beta[ci]);
            for ni in 0..n {
                for y in 0..h {
                    for xx in 0..w {
                        let z = (x[[ni, ci, y, xx]] - m) * s;
                        normalized[[ni, ci, y, xx]] = z;
                        out[[ni, ci, y, xx]] = g * z + b;
                    }
                }
            }
        }
        self.normalized = Some(normalized);
        self.inv_std = inv_std;
        self.trained_batch = train;
        out
    }

    pub fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let normalized = self.normalized.take().expect("forward before backward");
        let (n, c, h, w) = grad.dim();
        let count = (n * h * w) as f32;
        let gamma = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap();
        let mut dx = Array4::zeros((n, c, h, w));
        for ci in 0..c {
            let g = grad.index_axis(Axis(1), ci);
            let z = normalized.index_axis(Axis(1), ci);
            let sum_dy: f32 = g.sum();
            let sum_dy_z: f32 = g.iter().zip(z.iter()).map(|(a, b)| a * b).sum();
            self.beta.grad[ci] += sum_dy;
            self.gamma.grad[ci] += sum_dy_z;
            let scale = gamma[ci] * self.inv_std[ci];
            if self.trained_batch {
                for ni in 0..n {
                    for y in 0..h {
                        for xx in 0..w {
                            let dy = grad[[ni, ci, y, xx]];
                            let zz = normalized[[ni, ci, y, xx]];
                            dx[[ni, ci, y, xx]] =
                                scale * (dy - sum_dy / count - zz * sum_dy_z / count);
                        }
                    }
                }
            } else {
                for ni in 0..n {
                    for y in 0..h {
                        for xx in 0..w {
                            dx[[ni, ci, y, xx]] = scale * grad[[ni, ci, y, xx]];
                        }
                    }
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReLU {
    mask: Option<Array4<f32>>,
}

impl ReLU {
    pub fn forward(&mut self, x: &Array4<f32>) -> Array4<f32> {
        let mask = x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let out = x * &mask;
        self.mask = Some(mask);
        out
    }

    pub fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let mask = self.mask.take().expect("forward before backward");
        grad * &mask
    }
}

/// 2x2 max pooling with stride 2; input H and W must be even.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2x2 {
    argmax: Option<Array4<u8>>,
    input_dim: (usize, usize, usize, usize),
}

impl MaxPool2x2 {
    pub fn forward(&mut self, x: &Array4<f32>) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        assert!(h % 2 == 0 && w % 2 == 0, "pool input must have even H, W");
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Array4::zeros((n, c, oh, ow));
        let mut argmax = Array4::zeros((n, c, oh, ow));
        for ni in 0..n {
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f32::NEG_INFINITY;
                        let mut idx = 0u8;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let v = x[[ni, ci, 2 * oy + dy, 2 * ox + dx]];
                                if v > best {
                                    best = v;
                                    idx = (dy * 2 + dx) as u8;
                                }
                            }
                        }
                        out[[ni, ci, oy, ox]] = best;
                        argmax[[ni, ci, oy, ox]] = idx;
                    }
                }
            }
        }
        self.argmax = Some(argmax);
        self.input_dim = (n, c, h, w);
        out
    }

    pub fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let argmax = self.argmax.take().expect("forward before backward");
        let (n, c, h, w) = self.input_dim;
        let mut dx = Array4::zeros((n, c, h, w));
        let (_, _, oh, ow) = grad.dim();
        for ni in 0..n {
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let idx = argmax[[ni, ci, oy, ox]] as usize;
                        let (dy, dx_) = (idx / 2, idx % 2);
                        dx[[ni, ci, 2 * oy + dy, 2 * ox + dx_]] += grad[[ni, ci, oy, ox]];
                    }
                }
            }
        }
        dx
    }
}

/// (N, C, H, W) -> (N, C, 1, 1) mean over the spatial extent.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    input_dim: (usize, usize, usize, usize),
}

impl GlobalAvgPool {
    pub fn forward(&mut self, x: &Array4<f32>) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        self.input_dim = (n, c, h, w);
        let scale = 1.0 / (h * w) as f32;
        let mut out = Array4::zeros((n, c, 1, 1));
        for ni in 0..n {
            for ci in 0..c {
                out[[ni, ci, 0, 0]] = x.index_axis(Axis(0), ni).index_axis(Axis(0), ci).sum() * scale;
            }
        }
        out
    }

    pub fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let (n, c, h, w) = self.input_dim;
        let scale = 1.0 / (h * w) as f32;
        let mut dx = Array4::zeros((n, c, h, w));
        for ni in 0..n {
            for ci in 0..c {
                let g = grad[[ni, ci, 0, 0]] * scale;
                for y in 0..h {
                    for xx in 0..w {
                        dx[[ni, ci, y, xx]] = g;
                    }
                }
            }
        }
        dx
    }
}

/// Fully connected layer over the flattened feature map; emits (N, out, 1, 1).
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    pub in_features: usize,
    pub out_features: usize,
    input: Option<Array2<f32>>,
    input_dim: (usize, usize, usize, usize),
}

impl Linear {
    pub fn new<R: Rng>(rng: &mut R, in_features: usize, out_features: usize) -> Linear {
        Linear {
            weight: Param::new(he_normal(rng, &[out_features, in_features], in_features)),
            bias: Param::new(ArrayD::zeros(vec![out_features])),
            in_features,
            out_features,
            input: None,
            input_dim: (0, 0, 0, 0),
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c * h * w, self.in_features, "linear input features");
        let flat = x
            .to_shape((n, self.in_features))
            .expect("contiguous reshape")
            .to_owned();
        let weight = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let bias = self.bias.value.view().into_dimensionality::<Ix1>().unwrap();
        let mut out = flat.dot(&weight.t());
        for mut row in out.rows_mut() {
            row += &bias;
        }
        self.input = Some(flat);
        self.input_dim = (n, c, h, w);
        // Single-feature inputs make the matmul degenerate to an outer
        // product, which comes back column-major.
        if !out.is_standard_layout() {
            out = out.as_standard_layout().into_owned();
        }
        out.into_shape_with_order((n, self.out_features, 1, 1))
            .expect("reshape to 4-D")
    }

    pub fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let (n, c, h, w) = self.input_dim;
        let grad2 = grad
            .to_shape((n, self.out_features))
            .expect("contiguous reshape")
            .to_owned();
        let input = self.input.take().expect("forward before backward");
        self.weight.grad += &grad2.t().dot(&input).into_dyn();
        self.bias.grad += &grad2.sum_axis(Axis(0)).into_dyn();
        let weight = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let mut dx = grad2.dot(&weight);
        if !dx.is_standard_layout() {
            dx = dx.as_standard_layout().into_owned();
        }
        dx.into_shape_with_order((n, c, h, w))
            .expect("reshape to input dim")
    }
}

/// One computational step in a block.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d(Conv2d),
    BatchNorm2d(BatchNorm2d),
    ReLU(ReLU),
    MaxPool2x2(MaxPool2x2),
    GlobalAvgPool(GlobalAvgPool),
    Linear(Linear),
}

impl Layer {
    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        match self {
            Layer::Conv2d(l) => l.forward(x),
            Layer::BatchNorm2d(l) => l.forward(x, train),
            Layer::ReLU(l) => l.forward(x),
            Layer::MaxPool2x2(l) => l.forward(x),
            Layer::GlobalAvgPool(l) => l.forward(x),
            Layer::Linear(l) => l.forward(x),
        }
    }

    pub fn backward(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        match self {
            Layer::Conv2d(l) => l.backward(grad),
            Layer::BatchNorm2d(l) => l.backward(grad),
            Layer::ReLU(l) => l.backward(grad),
            Layer::MaxPool2x2(l) => l.backward(grad),
            Layer::GlobalAvgPool(l) => l.backward(grad),
            Layer::Linear(l) => l.backward(grad),
        }
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        match self {
            Layer::Conv2d(l) => {
                f(&mut l.weight);
                f(&mut l.bias);
            }
            Layer::BatchNorm2d(l) => {
                f(&mut l.gamma);
                f(&mut l.beta);
            }
            Layer::Linear(l) => {
                f(&mut l.weight);
                f(&mut l.bias);
            }
            _ => {}
        }
    }

    /// Output shape for a (C, H, W) input shape.
    pub fn output_shape(&self, input: (usize, usize, usize)) -> (usize, usize, usize) {
        let (c, h, w) = input;
        match self {
            Layer::Conv2d(l) => {
                let (oh, ow) = (h + 2 * l.padding + 1 - l.kernel, w + 2 * l.padding + 1 - l.kernel);
                (l.out_channels, oh, ow)
            }
            Layer::BatchNorm2d(_) | Layer::ReLU(_) => (c, h, w),
            Layer::MaxPool2x2(_) => (c, h / 2, w / 2),
            Layer::GlobalAvgPool(_) => (c, 1, 1),
            Layer::Linear(l) => (l.out_features, 1, 1),
        }
    }

    pub fn export_tensors(&self, prefix: &str, out: &mut Vec<(String, ArrayD<f32>)>) {
        match self {
            Layer::Conv2d(l) => {
                out.push((format!("{prefix}.weight"), l.weight.value.clone()));
                out.push((format!("{prefix}.bias"), l.bias.value.clone()));
            }
            Layer::BatchNorm2d(l) => {
                out.push((format!("{prefix}.gamma"), l.gamma.value.clone()));
                out.push((format!("{prefix}.beta"), l.beta.value.clone()));
                out.push((format!("{prefix}.running_mean"), l.running_mean.clone().into_dyn()));
                out.push((format!("{prefix}.running_var"), l.running_var.clone().into_dyn()));
            }
            Layer::Linear(l) => {
                out.push((format!("{prefix}.weight"), l.weight.value.clone()));
                out.push((format!("{prefix}.bias"), l.bias.value.clone()));
            }
            _ => {}
        }
    }

    pub fn import_tensors(
        &mut self,
        prefix: &str,
        tensors: &HashMap<String, ArrayD<f32>>,
    ) -> Result<()> {
        let fetch = |name: String, want: &[usize]| -> Result<ArrayD<f32>> {
            let t = tensors
                .get(&name)
                .ok_or_else(|| Error::validation(format!("missing tensor {name}")))?;
            if t.shape() != want {
                return Err(Error::validation(format!(
                    "tensor {name} has shape {:?}, expected {want:?}",
                    t.shape()
                )));
            }
            Ok(t.clone())
        };
        match self {
            Layer::Conv2d(l) => {
                l.weight.value = fetch(format!("{prefix}.weight"), l.weight.value.shape())?;
                l.bias.value = fetch(format!("{prefix}.bias"), l.bias.value.shape())?;
            }
            Layer::BatchNorm2d(l) => {
                l.gamma.value = fetch(format!("{prefix}.gamma"), l.gamma.value.shape())?;
                l.beta.value = fetch(format!("{prefix}.beta"), l.beta.value.shape())?;
                l.running_mean = fetch(format!("{prefix}.running_mean"), &[l.running_mean.len()])?
                    .into_dimensionality::<Ix1>()
                    .expect("1-D by shape check");
                l.running_var = fetch(format!("{prefix}.running_var"), &[l.running_var.len()])?
                    .into_dimensionality::<Ix1>()
                    .expect("1-D by shape check");
            }
            Layer::Linear(l) => {
                l.weight.value = fetch(format!("{prefix}.weight"), l.weight.value.shape())?;
                l.bias.value = fetch(format!("{prefix}.bias"), l.bias.value.shape())?;
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn naive_conv(
        x: &Array4<f32>,
        weight: &ArrayD<f32>,
        bias: &ArrayD<f32>,
        k: usize,
        pad: usize,
        c_out: usize,
    ) -> Array4<f32> {
        let (n, c_in, h, w) = x.dim();
        let (oh, ow) = (h + 2 * pad + 1 - k, w + 2 * pad + 1 - k);
        let mut out = Array4::zeros((n, c_out, oh, ow));
        for ni in 0..n {
            for co in 0..c_out {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias[[co]];
                        for ci in 0..c_in {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = oy as isize + ky as isize - pad as isize;
                                    let ix = ox as isize + kx as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += x[[ni, ci, iy as usize, ix as usize]]
                                        * weight[[co, (ci * k + ky) * k + kx]];
                                }
                            }
                        }
                        out[[ni, co, oy, ox]] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let mut rng = rng_from(5);
        let mut conv = Conv2d::new(&mut rng, 3, 4, 3, 1);
        let x = Array4::from_shape_fn((2, 3, 6, 5), |_| rng.random_range(-1.0f32..1.0));
        let got = conv.forward(&x);
        let want = naive_conv(&x, &conv.weight.value, &conv.bias.value, 3, 1, 4);
        assert_eq!(got.dim(), (2, 4, 6, 5));
        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn conv_identity_init_passes_through() {
        let mut rng = rng_from(6);
        let mut conv = Conv2d::new(&mut rng, 3, 3, 3, 1);
        conv.set_identity();
        let x = Array4::from_shape_fn((1, 3, 4, 4), |_| rng.random_range(-1.0f32..1.0));
        let y = conv.forward(&x);
        for (a, b) in x.iter().zip(y.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    /// Central-difference check of d(sum of squares)/dx through one layer.
    fn grad_check(mut fwd: impl FnMut(&Array4<f32>) -> (Array4<f32>, Array4<f32>), x: &Array4<f32>) {
        let (_, analytic) = fwd(x);
        let h = 1e-2f32;
        let mut worst = 0.0f32;
        for idx in 0..x.len().min(40) {
            let flat = idx * (x.len() / x.len().min(40)).max(1);
            let mut xp = x.clone();
            let mut xm = x.clone();
            {
                let s = xp.as_slice_mut().unwrap();
                s[flat] += h;
            }
            {
                let s = xm.as_slice_mut().unwrap();
                s[flat] -= h;
            }
            let (yp, _) = fwd(&xp);
            let (ym, _) = fwd(&xm);
            let lp: f32 = yp.iter().map(|v| v * v * 0.5).sum();
            let lm: f32 = ym.iter().map(|v| v * v * 0.5).sum();
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic.as_slice().unwrap()[flat];
            let denom = a.abs().max(numeric.abs()).max(1.0);
            worst = worst.max((a - numeric).abs() / denom);
        }
        assert!(worst < 2e-2, "gradient mismatch: {worst}");
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = rng_from(7);
        let conv = Conv2d::new(&mut rng, 2, 3, 3, 1);
        let x = Array4::from_shape_fn((2, 2, 5, 5), |_| rng.random_range(-1.0f32..1.0));
        grad_check(
            |x| {
                let mut c = conv.clone();
                let y = c.forward(x);
                let dx = c.backward(&y);
                (y, dx)
            },
            &x,
        );
    }

    #[test]
    fn batchnorm_backward_matches_finite_differences() {
        let mut rng = rng_from(8);
        let mut bn = BatchNorm2d::new(3);
        bn.gamma.value = ArrayD::from_shape_fn(vec![3], |_| rng.random_range(0.5f32..1.5));
        bn.beta.value = ArrayD::from_shape_fn(vec![3], |_| rng.random_range(-0.5f32..0.5));
        let x = Array4::from_shape_fn((4, 3, 3, 3), |_| rng.random_range(-2.0f32..2.0));
        for train in [true, false] {
            grad_check(
                |x| {
                    let mut b = bn.clone();
                    let y = b.forward(x, train);
                    let dx = b.backward(&y);
                    (y, dx)
                },
                &x,
            );
        }
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = rng_from(9);
        let lin = Linear::new(&mut rng, 12, 5);
        let x = Array4::from_shape_fn((3, 3, 2, 2), |_| rng.random_range(-1.0f32..1.0));
        grad_check(
            |x| {
                let mut l = lin.clone();
                let y = l.forward(x);
                let dx = l.backward(&y);
                (y, dx)
            },
            &x,
        );
    }

    #[test]
    fn pool_backward_routes_to_argmax() {
        let mut pool = MaxPool2x2::default();
        let mut x = Array4::zeros((1, 1, 4, 4));
        x[[0, 0, 1, 1]] = 5.0;
        x[[0, 0, 2, 3]] = 7.0;
        let y = pool.forward(&x);
        assert_eq!(y[[0, 0, 0, 0]], 5.0);
        assert_eq!(y[[0, 0, 1, 1]], 7.0);
        let mut g = Array4::zeros((1, 1, 2, 2));
        g[[0, 0, 0, 0]] = 1.0;
        g[[0, 0, 1, 1]] = 2.0;
        let dx = pool.backward(&g);
        assert_eq!(dx[[0, 0, 1, 1]], 1.0);
        assert_eq!(dx[[0, 0, 2, 3]], 2.0);
        assert_eq!(dx.sum(), 3.0);
    }

    #[test]
    fn gap_averages_and_spreads() {
        let mut gap = GlobalAvgPool::default();
        let x = Array4::from_shape_fn((1, 2, 2, 2), |(_, c, y, xx)| (c * 4 + y * 2 + xx) as f32);
        let y = gap.forward(&x);
        assert!((y[[0, 0, 0, 0]] - 1.5).abs() < 1e-6);
        assert!((y[[0, 1, 0, 0]] - 5.5).abs() < 1e-6);
        let mut g = Array4::zeros((1, 2, 1, 1));
        g[[0, 0, 0, 0]] = 4.0;
        let dx = gap.backward(&g);
        assert!((dx[[0, 0, 1, 1]] - 1.0).abs() < 1e-6);
        assert_eq!(dx[[0, 1, 0, 0]], 0.0);
    }

    #[test]
    fn relu_masks_forward_and_backward() {
        let mut relu = ReLU::default();
        let x = Array4::from_shape_fn((1, 1, 2, 2), |(_, _, y, xx)| {
            if (y + xx) % 2 == 0 { 1.5 } else { -2.0 }
        });
        let y = relu.forward(&x);
        assert_eq!(y[[0, 0, 0, 1]], 0.0);
        assert_eq!(y[[0, 0, 0, 0]], 1.5);
        let g = Array4::ones((1, 1, 2, 2));
        let dx = relu.backward(&g);
        assert_eq!(dx[[0, 0, 0, 1]], 0.0);
        assert_eq!(dx[[0, 0, 0, 0]], 1.0);
    }

    #[test]
    fn export_import_round_trips() {
        let mut rng = rng_from(10);
        let mut layer = Layer::Conv2d(Conv2d::new(&mut rng, 2, 4, 3, 1));
        let mut tensors = Vec::new();
        layer.export_tensors("b0.0", &mut tensors);
        let map: HashMap<_, _> = tensors.into_iter().collect();
        let mut fresh = Layer::Conv2d(Conv2d::new(&mut rng, 2, 4, 3, 1));
        fresh.import_tensors("b0.0", &map).unwrap();
        let x = Array4::from_shape_fn((1, 2, 4, 4), |_| rng.random_range(-1.0f32..1.0));
        let a = layer.forward(&x, false);
        let b = fresh.forward(&x, false);
        assert_eq!(a, b);
        assert!(fresh.import_tensors("missing", &map).is_err());
    }
}
