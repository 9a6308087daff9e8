//! Deterministic procedurally generated image classification datasets.
//! Every sample is a pure function of (dataset seed, sample index), so
//! train/test splits are disjoint index ranges and runs are reproducible
//! without any files on disk.

pub mod digits;
pub mod shapes;

use ndarray::Array4;

use crate::error::{Error, Result};

/// An in-memory labeled image set, NCHW in [0,1].
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Array4<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows `index..index+count` as a batch view pair.
    pub fn batch(&self, index: usize, count: usize) -> (Array4<f32>, Vec<usize>) {
        let end = (index + count).min(self.len());
        let images = self
            .images
            .slice(ndarray::s![index..end, .., .., ..])
            .to_owned();
        let labels = self.labels[index..end].to_vec();
        (images, labels)
    }
}

/// Named dataset splits addressable from the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NamedData {
    MnistTrain,
    MnistTest,
    CifarTrain,
    CifarTest,
}

impl std::str::FromStr for NamedData {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist-train" => Ok(NamedData::MnistTrain),
            "mnist-test" => Ok(NamedData::MnistTest),
            "cifar-train" => Ok(NamedData::CifarTrain),
            "cifar-test" => Ok(NamedData::CifarTest),
            other => Err(Error::validation(format!(
                "unknown dataset {other:?}, expected mnist-train|mnist-test|cifar-train|cifar-test"
            ))),
        }
    }
}

/// Default desk-scale split sizes.
pub const TRAIN_SIZE: usize = 4096;
pub const TEST_SIZE: usize = 1024;

/// Materialize a named split at the default desk scale. Test samples use
/// the index range after the train range, so splits never overlap.
pub fn load_named(which: NamedData, seed: u64) -> Dataset {
    match which {
        NamedData::MnistTrain => digits::generate(seed, 0, TRAIN_SIZE),
        NamedData::MnistTest => digits::generate(seed, TRAIN_SIZE, TEST_SIZE),
        NamedData::CifarTrain => shapes::generate(seed, 0, TRAIN_SIZE),
        NamedData::CifarTest => shapes::generate(seed, TRAIN_SIZE, TEST_SIZE),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_the_set() {
        let d = digits::generate(1, 0, 10);
        let (b, l) = d.batch(8, 4);
        assert_eq!(b.dim().0, 2);
        assert_eq!(l.len(), 2);
    }

    #[test]
    fn named_split_parsing() {
        assert_eq!("mnist-test".parse::<NamedData>().unwrap(), NamedData::MnistTest);
        assert!("emnist".parse::<NamedData>().is_err());
    }
}
