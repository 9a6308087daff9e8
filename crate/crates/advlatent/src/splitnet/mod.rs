//! Model construction, splitting, bottlenecks, latent codecs, bottleneck
//! training, and the weight container.

pub mod arith;
pub mod codec;
pub mod model;
pub mod package;
pub mod split;
pub mod train;

pub use arith::{entropy_decode, entropy_encode};
pub use codec::{
    dequantize_latent, entropy_code_latent, entropy_decode_latent, jpeg_code_latent,
    jpeg_decode_latent, quantize_latent, CodecKind, CompressionCodec,
};
pub use model::{
    build_arch, evaluate, mnist_cnn, train_classifier, vgg_cifar, ArchId, ModelGraph, NamedBlock,
    TrainHistory,
};
pub use package::{load_package, save_package, save_package_set, PackageManifest};
pub use split::{attach_bottleneck, select_correct, split_model, Bottleneck, Role, SplitModel};
pub use train::{train_bottleneck, BottleneckTrainReport, StrategyKind, TrainConfig};
