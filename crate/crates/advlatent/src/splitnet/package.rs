//! Self-describing weight container.
//!
//! Layout: 8-byte magic, u16 version, u32 manifest length, manifest JSON,
//! u32 tensor count, then per tensor: u16 name length, name, u8 rank,
//! u32 dims, f32 little-endian data. The manifest embeds a hash of its own
//! configuration fields so a mismatched loader fails loudly rather than
//! silently reinterpreting weights.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::codec::CompressionCodec;
use super::model::{build_arch, hex_string, ArchId};
use super::split::{attach_bottleneck, split_model, Role, SplitModel};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ADVLPKG\0";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PackageManifest {
    pub role: Role,
    pub arch: ArchId,
    pub split_index: usize,
    pub bottleneck_channels: Option<usize>,
    pub codec: Option<CompressionCodec>,
    pub input_shape: (usize, usize, usize),
    pub latent_shape: (usize, usize, usize),
    pub num_classes: usize,
    pub seed: u64,
    /// Hash of every field above, in serialized order.
    pub config_sha256: String,
}

impl PackageManifest {
    fn describe(model: &SplitModel, role: Role) -> Self {
        let mut manifest = PackageManifest {
            role,
            arch: model.arch,
            split_index: model.split_index,
            bottleneck_channels: model.bottleneck.as_ref().map(|b| b.channels),
            codec: model.codec,
            input_shape: model.graph.input_shape,
            latent_shape: model.latent_shape(),
            num_classes: model.graph.num_classes,
            seed: model.seed,
            config_sha256: String::new(),
        };
        manifest.config_sha256 = manifest.config_hash();
        manifest
    }

    fn config_hash(&self) -> String {
        let mut clone = self.clone();
        clone.config_sha256 = String::new();
        let json = serde_json::to_vec(&clone).expect("manifest serializes");
        hex_string(&Sha256::digest(&json))
    }
}

fn tensor_names_for_role(model: &SplitModel, role: Role) -> Vec<String> {
    let mobile_blocks: Vec<&str> = model.graph.blocks[..model.split_index]
        .iter()
        .map(|b| b.name.as_str())
        .collect();
    model
        .export_tensors()
        .into_iter()
        .map(|(name, _)| name)
        .filter(|name| {
            let block = name.split('.').next().unwrap_or_default();
            let is_encoder = name.starts_with("bottleneck.enc.");
            let is_mobile = mobile_blocks.contains(&block) || is_encoder;
            match role {
                Role::Full => true,
                Role::Mobile => is_mobile,
                Role::Local => !is_mobile,
            }
        })
        .collect()
}

/// Serialize one role of a split model. `Full` contains everything; the
/// half roles carry only their own tensors and can only run their half.
pub fn save_package(model: &SplitModel, role: Role, path: &Path) -> Result<()> {
    if model.role != Role::Full {
        return Err(Error::capability(
            "only a full model can be exported".to_string(),
        ));
    }
    let manifest = PackageManifest::describe(model, role);
    let manifest_json = serde_json::to_vec(&manifest)?;
    let keep: std::collections::HashSet<String> =
        tensor_names_for_role(model, role).into_iter().collect();
    let tensors: Vec<(String, ArrayD<f32>)> = model
        .export_tensors()
        .into_iter()
        .filter(|(name, _)| keep.contains(name))
        .collect();

    let mut file = std::fs::File::create(path)?;
    file.write_all(MAGIC)?;
    file.write_all(&VERSION.to_le_bytes())?;
    file.write_all(&(manifest_json.len() as u32).to_le_bytes())?;
    file.write_all(&manifest_json)?;
    file.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, tensor) in &tensors {
        let name_bytes = name.as_bytes();
        file.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        file.write_all(name_bytes)?;
        file.write_all(&[tensor.ndim() as u8])?;
        for &d in tensor.shape() {
            file.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(tensor.len() * 4);
        for v in tensor.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        file.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact_at(file: &mut std::fs::File, buf: &mut [u8], offset: &mut usize) -> Result<()> {
    file.read_exact(buf)
        .map_err(|_| Error::protocol(*offset, "package truncated"))?;
    *offset += buf.len();
    Ok(())
}

/// Rebuild a model from a package. Half-role packages come back with the
/// missing half left at its seeded initialization and the role gate set,
/// so only the packaged half is callable.
pub fn load_package(path: &Path) -> Result<SplitModel> {
    let mut file = std::fs::File::open(path)?;
    let mut offset = 0usize;
    let mut magic = [0u8; 8];
    read_exact_at(&mut file, &mut magic, &mut offset)?;
    if &magic != MAGIC {
        return Err(Error::protocol(0, "bad magic, not a model package"));
    }
    let mut two = [0u8; 2];
    read_exact_at(&mut file, &mut two, &mut offset)?;
    let version = u16::from_le_bytes(two);
    if version != VERSION {
        return Err(Error::protocol(8, format!("unsupported version {version}")));
    }
    let mut four = [0u8; 4];
    read_exact_at(&mut file, &mut four, &mut offset)?;
    let manifest_len = u32::from_le_bytes(four) as usize;
    let mut manifest_buf = vec![0u8; manifest_len];
    read_exact_at(&mut file, &mut manifest_buf, &mut offset)?;
    let manifest: PackageManifest = serde_json::from_slice(&manifest_buf)?;
    if manifest.config_hash() != manifest.config_sha256 {
        return Err(Error::validation(
            "manifest config hash mismatch, package corrupted or edited".to_string(),
        ));
    }

    read_exact_at(&mut file, &mut four, &mut offset)?;
    let tensor_count = u32::from_le_bytes(four) as usize;
    let mut tensors: HashMap<String, ArrayD<f32>> = HashMap::new();
    for _ in 0..tensor_count {
        read_exact_at(&mut file, &mut two, &mut offset)?;
        let name_len = u16::from_le_bytes(two) as usize;
        let mut name_buf = vec![0u8; name_len];
        read_exact_at(&mut file, &mut name_buf, &mut offset)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| Error::protocol(offset, "tensor name is not UTF-8"))?;
        let mut one = [0u8; 1];
        read_exact_at(&mut file, &mut one, &mut offset)?;
        let rank = one[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            read_exact_at(&mut file, &mut four, &mut offset)?;
            dims.push(u32::from_le_bytes(four) as usize);
        }
        let len: usize = dims.iter().product();
        let mut data = vec![0u8; len * 4];
        read_exact_at(&mut file, &mut data, &mut offset)?;
        let values: Vec<f32> = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tensor = ArrayD::from_shape_vec(ndarray::IxDyn(&dims), values)
            .map_err(|e| Error::protocol(offset, format!("tensor shape invalid: {e}")))?;
        tensors.insert(name, tensor);
    }

    let graph = build_arch(manifest.arch, manifest.seed);
    let mut model = split_model(manifest.arch, graph, manifest.split_index, manifest.seed)?;
    if let Some(channels) = manifest.bottleneck_channels {
        model = attach_bottleneck(model, channels)?;
    }
    model.codec = manifest.codec;

    let expected = tensor_names_for_role(&model, manifest.role);
    for name in &expected {
        if !tensors.contains_key(name) {
            return Err(Error::validation(format!("package is missing tensor {name}")));
        }
    }
    import_present(&mut model, &tensors)?;
    model.role = manifest.role;
    Ok(model)
}

/// Overlay the packaged tensors on the seeded model; the half a package
/// does not carry keeps its initialization and is gated off by the role.
fn import_present(model: &mut SplitModel, tensors: &HashMap<String, ArrayD<f32>>) -> Result<()> {
    let all = model.export_tensors();
    for (name, current) in &all {
        if let Some(stored) = tensors.get(name) {
            if stored.shape() != current.shape() {
                return Err(Error::validation(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    stored.shape(),
                    current.shape()
                )));
            }
        }
    }
    let mut merged: HashMap<String, ArrayD<f32>> = all.into_iter().collect();
    for (name, stored) in tensors {
        if !merged.contains_key(name) {
            return Err(Error::validation(format!(
                "package carries unknown tensor {name}"
            )));
        }
        merged.insert(name.clone(), stored.clone());
    }
    model.graph.import_tensors(&merged)?;
    if let Some(b) = &mut model.bottleneck {
        b.import_tensors(&merged)?;
    }
    Ok(())
}

/// Write the full package plus the two half packages next to it:
/// `model.pkg`, `model.mobile.pkg`, `model.local.pkg`.
pub fn save_package_set(model: &SplitModel, path: &Path) -> Result<[std::path::PathBuf; 3]> {
    let stem = path.with_extension("");
    let mobile = stem.with_extension("mobile.pkg");
    let local = stem.with_extension("local.pkg");
    save_package(model, Role::Full, path)?;
    save_package(model, Role::Mobile, &mobile)?;
    save_package(model, Role::Local, &local)?;
    Ok([path.to_path_buf(), mobile, local])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::digits;
    use crate::splitnet::model::mnist_cnn;

    fn sample_model() -> SplitModel {
        let split = split_model(ArchId::MnistCnn, mnist_cnn(31), 2, 31).unwrap();
        let mut split = attach_bottleneck(split, 6).unwrap();
        split.codec = Some(CompressionCodec::qt(8));
        split
    }

    #[test]
    fn full_round_trip_preserves_behavior() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.pkg");
        let mut model = sample_model();
        save_package(&model, Role::Full, &path).unwrap();
        let mut loaded = load_package(&path).unwrap();
        assert_eq!(loaded.weights_hash(), model.weights_hash());
        let images = digits::generate(31, 0, 4).images;
        assert_eq!(
            model.forward_split(&images).unwrap(),
            loaded.forward_split(&images).unwrap()
        );
    }

    #[test]
    fn half_packages_expose_only_their_half() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = sample_model();
        let paths = save_package_set(&model, &dir.path().join("model.pkg")).unwrap();
        let images = digits::generate(32, 0, 3).images;
        let latent = model.forward_mobile(&images).unwrap();

        let mut mobile = load_package(&paths[1]).unwrap();
        assert_eq!(mobile.role, Role::Mobile);
        assert_eq!(mobile.forward_mobile(&images).unwrap(), latent);
        assert!(mobile.forward_local(&latent).is_err());

        let mut local = load_package(&paths[2]).unwrap();
        assert_eq!(local.role, Role::Local);
        assert_eq!(
            local.forward_local(&latent).unwrap(),
            model.forward_local(&latent).unwrap()
        );
        assert!(local.forward_mobile(&images).is_err());
    }

    #[test]
    fn corrupted_manifests_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.pkg");
        save_package(&sample_model(), Role::Full, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let pos = bytes
            .windows(4)
            .position(|w| w == b"seed")
            .expect("manifest contains seed field");
        bytes[pos] = b'x';
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_package(&path).is_err());
    }

    #[test]
    fn truncated_packages_error_with_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.pkg");
        save_package(&sample_model(), Role::Full, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        match load_package(&path) {
            Err(Error::Protocol { .. }) => {}
            other => panic!("expected protocol error, got {other:?}"),
        }
    }

    #[test]
    fn non_package_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.pkg");
        std::fs::write(&path, b"definitely not a package").unwrap();
        assert!(load_package(&path).is_err());
    }
}
