//! Splitting a classifier into a mobile half and a local half, with an
//! optional channel bottleneck at the boundary and an optional latent codec.

use ndarray::{Array2, Array4, ArrayD};
use serde::{Deserialize, Serialize};

use super::codec::CompressionCodec;
use super::model::{ArchId, ModelGraph};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, Layer, ReLU};
use crate::rng::rng_from;

/// Encoder that projects the split-point feature map down to a smaller
/// channel count, and the decoder that lifts it back. Spatial dimensions
/// pass through unchanged so the channel ratio alone sets the compression
/// factor.
#[derive(Debug, Clone)]
pub struct Bottleneck {
    pub encoder: Vec<Layer>,
    pub decoder: Vec<Layer>,
    pub channels: usize,
    pub native_channels: usize,
}

impl Bottleneck {
    pub fn forward_encoder(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let mut cur = x.clone();
        for layer in &mut self.encoder {
            cur = layer.forward(&cur, train);
        }
        cur
    }

    pub fn forward_decoder(&mut self, z: &Array4<f32>, train: bool) -> Array4<f32> {
        let mut cur = z.clone();
        for layer in &mut self.decoder {
            cur = layer.forward(&cur, train);
        }
        cur
    }

    pub fn backward_decoder(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let mut cur = grad.clone();
        for layer in self.decoder.iter_mut().rev() {
            cur = layer.backward(&cur);
        }
        cur
    }

    pub fn backward_encoder(&mut self, grad: &Array4<f32>) -> Array4<f32> {
        let mut cur = grad.clone();
        for layer in self.encoder.iter_mut().rev() {
            cur = layer.backward(&cur);
        }
        cur
    }

    pub fn export_tensors(&self, out: &mut Vec<(String, ArrayD<f32>)>) {
        for (i, layer) in self.encoder.iter().enumerate() {
            layer.export_tensors(&format!("bottleneck.enc.{i}"), out);
        }
        for (i, layer) in self.decoder.iter().enumerate() {
            layer.export_tensors(&format!("bottleneck.dec.{i}"), out);
        }
    }

    pub fn import_tensors(
        &mut self,
        tensors: &std::collections::HashMap<String, ArrayD<f32>>,
    ) -> Result<()> {
        for (i, layer) in self.encoder.iter_mut().enumerate() {
            layer.import_tensors(&format!("bottleneck.enc.{i}"), tensors)?;
        }
        for (i, layer) in self.decoder.iter_mut().enumerate() {
            layer.import_tensors(&format!("bottleneck.dec.{i}"), tensors)?;
        }
        Ok(())
    }
}

/// Which halves a loaded package can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Full,
    Mobile,
    Local,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Full => "full",
            Role::Mobile => "mobile",
            Role::Local => "local",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SplitModel {
    pub arch: ArchId,
    pub graph: ModelGraph,
    pub split_index: usize,
    pub bottleneck: Option<Bottleneck>,
    pub codec: Option<CompressionCodec>,
    pub role: Role,
    pub seed: u64,
}

/// Partition a graph at a block boundary. The mobile half is
/// blocks[..split_index], the local half blocks[split_index..].
pub fn split_model(arch: ArchId, graph: ModelGraph, split_index: usize, seed: u64) -> Result<SplitModel> {
    if split_index == 0 || split_index >= graph.blocks.len() {
        return Err(Error::validation(format!(
            "split index {split_index} out of range 1..{} for a {}-block graph",
            graph.blocks.len() - 1,
            graph.blocks.len()
        )));
    }
    graph.validate()?;
    Ok(SplitModel {
        arch,
        graph,
        split_index,
        bottleneck: None,
        codec: None,
        role: Role::Full,
        seed,
    })
}

/// Insert an encoder/decoder pair at the split. When `channels` equals the
/// native count the pair starts as an identity map, so the forward pass is
/// unchanged until training moves it.
pub fn attach_bottleneck(mut split: SplitModel, channels: usize) -> Result<SplitModel> {
    if split.role != Role::Full {
        return Err(Error::capability(
            "bottlenecks can only be attached to a full model".to_string(),
        ));
    }
    let (native, _, _) = split.native_latent_shape();
    if channels == 0 || channels > native {
        return Err(Error::validation(format!(
            "bottleneck of {channels} channels, expected 1..={native} at this split"
        )));
    }
    let mut rng = rng_from(split.seed ^ 0xb0771e);
    let mut enc_conv = Conv2d::new(&mut rng, native, channels, 3, 1);
    let mut dec_conv = Conv2d::new(&mut rng, channels, native, 3, 1);
    if channels == native {
        enc_conv.set_identity();
        dec_conv.set_identity();
    }
    split.bottleneck = Some(Bottleneck {
        encoder: vec![
            Layer::Conv2d(enc_conv),
            Layer::BatchNorm2d(BatchNorm2d::new(channels)),
            Layer::ReLU(ReLU::default()),
        ],
        decoder: vec![Layer::Conv2d(dec_conv)],
        channels,
        native_channels: native,
    });
    Ok(split)
}

impl SplitModel {
    /// Split-point feature shape before any bottleneck.
    pub fn native_latent_shape(&self) -> (usize, usize, usize) {
        self.graph.shape_after(self.split_index)
    }

    /// Shape of the transmitted latent for one sample.
    pub fn latent_shape(&self) -> (usize, usize, usize) {
        let (c, h, w) = self.native_latent_shape();
        match &self.bottleneck {
            Some(b) => (b.channels, h, w),
            None => (c, h, w),
        }
    }

    pub fn latent_dim(&self) -> usize {
        let (c, h, w) = self.latent_shape();
        c * h * w
    }

    pub fn num_classes(&self) -> usize {
        self.graph.num_classes
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.graph.input_shape
    }

    /// Run the mobile half: prefix blocks, then the encoder if present.
    /// The result is the latent as transmitted (before any codec).
    pub fn forward_mobile(&mut self, x: &Array4<f32>) -> Result<Array4<f32>> {
        if self.role == Role::Local {
            return Err(Error::capability(
                "this package only carries the local half".to_string(),
            ));
        }
        let (c, h, w) = self.graph.input_shape;
        if (x.dim().1, x.dim().2, x.dim().3) != (c, h, w) {
            return Err(Error::validation(format!(
                "input shape {:?}, expected (_, {c}, {h}, {w})",
                x.dim()
            )));
        }
        let mut cur = self.graph.forward_range(0, self.split_index, x, false);
        if let Some(b) = &mut self.bottleneck {
            cur = b.forward_encoder(&cur, false);
        }
        Ok(cur)
    }

    /// Run the local half: decoder if present, then suffix blocks.
    pub fn forward_local(&mut self, latent: &Array4<f32>) -> Result<Array2<f32>> {
        if self.role == Role::Mobile {
            return Err(Error::capability(
                "this package only carries the mobile half".to_string(),
            ));
        }
        let (c, h, w) = self.latent_shape();
        if (latent.dim().1, latent.dim().2, latent.dim().3) != (c, h, w) {
            return Err(Error::validation(format!(
                "latent shape {:?}, expected (_, {c}, {h}, {w})",
                latent.dim()
            )));
        }
        let mut cur = latent.clone();
        if let Some(b) = &mut self.bottleneck {
            cur = b.forward_decoder(&cur, false);
        }
        let out = self
            .graph
            .forward_range(self.split_index, self.graph.blocks.len(), &cur, false);
        let n = out.dim().0;
        Ok(out
            .into_shape_with_order((n, self.graph.num_classes))
            .expect("head emits (N, K, 1, 1)"))
    }

    /// Rank-checked entry point for callers holding dynamic tensors.
    pub fn forward_local_dyn(&mut self, latent: &ArrayD<f32>) -> Result<Array2<f32>> {
        let four: Array4<f32> = latent
            .clone()
            .into_dimensionality()
            .map_err(|_| Error::validation(format!("latent of rank {}, expected 4", latent.ndim())))?;
        self.forward_local(&four)
    }

    /// End-to-end inference through the transmission path, including the
    /// codec round trip when one is attached.
    pub fn forward_split(&mut self, x: &Array4<f32>) -> Result<Array2<f32>> {
        let latent = self.forward_mobile(x)?;
        let received = match &self.codec {
            Some(codec) => codec.round_trip(&latent)?,
            None => latent,
        };
        self.forward_local(&received)
    }

    pub fn predict(&mut self, x: &Array4<f32>) -> Result<Vec<usize>> {
        Ok(crate::nn::argmax_rows(&self.forward_split(x)?))
    }

    /// Logits as the receiver computes them for a given pre-codec latent:
    /// codec round trip when attached, then the local half.
    pub fn logits_from_latent(&mut self, latent: &Array4<f32>) -> Result<Array2<f32>> {
        let received = match &self.codec {
            Some(codec) => codec.round_trip(latent)?,
            None => latent.clone(),
        };
        self.forward_local(&received)
    }

    /// Differentiable forward from the input, codec excluded, with layer
    /// caches retained for `grad_wrt_input`.
    pub fn logits_diff_input(&mut self, x: &Array4<f32>) -> Result<Array2<f32>> {
        if self.role != Role::Full {
            return Err(Error::capability(
                "input gradients need both halves of the model".to_string(),
            ));
        }
        let latent = self.forward_mobile(x)?;
        self.forward_local(&latent)
    }

    /// Gradient of a scalar loss with respect to the input, given the loss
    /// gradient at the logits. Call straight after `logits_diff_input`.
    pub fn grad_wrt_input(&mut self, dlogits: &Array2<f32>) -> Array4<f32> {
        let grad_latent = self.grad_wrt_latent(dlogits);
        let grad_feature = match &mut self.bottleneck {
            Some(b) => b.backward_encoder(&grad_latent),
            None => grad_latent,
        };
        self.graph.backward_range(0, self.split_index, &grad_feature)
    }

    /// Differentiable forward from the pre-codec latent (codec excluded),
    /// with caches retained for `grad_wrt_latent`.
    pub fn logits_diff_latent(&mut self, latent: &Array4<f32>) -> Result<Array2<f32>> {
        self.forward_local(latent)
    }

    /// Gradient of a scalar loss with respect to the pre-codec latent.
    /// Call straight after `logits_diff_latent` or `logits_diff_input`.
    pub fn grad_wrt_latent(&mut self, dlogits: &Array2<f32>) -> Array4<f32> {
        let n = dlogits.dim().0;
        let grad4 = dlogits
            .clone()
            .into_shape_with_order((n, self.graph.num_classes, 1, 1))
            .expect("logit gradient shape");
        let grad_received = self
            .graph
            .backward_range(self.split_index, self.graph.blocks.len(), &grad4);
        match &mut self.bottleneck {
            Some(b) => b.backward_decoder(&grad_received),
            None => grad_received,
        }
    }

    /// Min/max of the transmitted latent over up to `samples` calibration
    /// images, written into the attached codec.
    pub fn calibrate_codec(&mut self, data: &Dataset, samples: usize) -> Result<(f32, f32)> {
        if self.codec.is_none() {
            return Err(Error::validation("no codec attached".to_string()));
        }
        let count = samples.min(data.len());
        if count == 0 {
            return Err(Error::validation("empty calibration set".to_string()));
        }
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        let mut index = 0;
        while index < count {
            let take = 64.min(count - index);
            let (images, _) = data.batch(index, take);
            let latent = self.forward_mobile(&images)?;
            for &v in latent.iter() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            index += take;
        }
        if !(lo < hi) {
            hi = lo + 1e-3;
        }
        let codec = self.codec.as_mut().expect("checked above");
        codec.value_range = (lo, hi);
        Ok((lo, hi))
    }

    pub fn export_tensors(&self) -> Vec<(String, ArrayD<f32>)> {
        let mut out = self.graph.export_tensors();
        if let Some(b) = &self.bottleneck {
            b.export_tensors(&mut out);
        }
        out
    }

    pub fn weights_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for (name, tensor) in self.export_tensors() {
            hasher.update(name.as_bytes());
            for v in tensor.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        super::model::hex_string(&hasher.finalize())
    }
}

/// First `limit` samples the model classifies correctly through the full
/// transmission path. Attack experiments start from these so that success
/// rates measure flips, not pre-existing mistakes.
pub fn select_correct(
    model: &mut SplitModel,
    data: &Dataset,
    limit: usize,
) -> Result<(Array4<f32>, Vec<usize>)> {
    let mut picked: Vec<usize> = Vec::with_capacity(limit);
    let mut index = 0;
    while picked.len() < limit && index < data.len() {
        let take = 256.min(data.len() - index);
        let (images, labels) = data.batch(index, take);
        let preds = model.predict(&images)?;
        for (row, (&pred, &label)) in preds.iter().zip(&labels).enumerate() {
            if pred == label && picked.len() < limit {
                picked.push(index + row);
            }
        }
        index += take;
    }
    if picked.len() < limit {
        return Err(Error::validation(format!(
            "only {} of the requested {limit} samples are classified correctly",
            picked.len()
        )));
    }
    let images = data.images.select(ndarray::Axis(0), &picked);
    let labels: Vec<usize> = picked.iter().map(|&i| data.labels[i]).collect();
    Ok((images, labels))
}
