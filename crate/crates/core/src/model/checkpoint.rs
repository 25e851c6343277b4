//! TSVC parameter files.
//!
//! Layout (little-endian): magic `TSVC`, u32 version, u64 manifest length,
//! a JSON manifest `[{name, shape, offset}]`, then the f32 blobs. Offsets
//! count bytes from the start of the blob section. The configuration lives
//! in a sidecar `<path>.json`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tensor::Tensor;

use super::classifier::{Classifier, ClassifierConfig};
use super::config::ModelConfig;
use super::net::{Group, ModelBundle};

pub const TSVC_MAGIC: &[u8; 4] = b"TSVC";
pub const TSVC_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

/// Contents of the sidecar file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CheckpointMeta {
    Model { config: ModelConfig },
    Classifier { config: ClassifierConfig },
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Write named tensors in the given order.
pub fn write_tensors<'a>(path: &Path, tensors: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>) -> Result<()> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    let mut offset = 0u64;
    let mut manifest = Vec::with_capacity(tensors.len());
    for (name, t) in &tensors {
        manifest.push(ManifestEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += 4 * t.len() as u64;
    }
    let json = serde_json::to_vec(&manifest)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TSVC_MAGIC)?;
    w.write_all(&TSVC_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, t) in &tensors {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensors(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TSVC_MAGIC {
        return Err(Error::Format(format!("{}: not a TSVC checkpoint", path.display())));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != TSVC_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version}, expected {TSVC_VERSION}"
        )));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let len = usize::try_from(u64::from_le_bytes(b8)).map_err(|_| Error::Format("manifest too large".into()))?;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let manifest: Vec<ManifestEntry> = serde_json::from_slice(&json)?;
    let mut blob = Vec::new();
    r.read_to_end(&mut blob)?;
    let mut out = Vec::with_capacity(manifest.len());
    let mut expected = 0u64;
    for e in manifest {
        let n: usize = e.shape.iter().product();
        if e.offset != expected {
            return Err(Error::Format(format!(
                "{}: offset {} does not follow the previous tensor",
                e.name, e.offset
            )));
        }
        let start = e.offset as usize;
        let bytes = blob
            .get(start..start + 4 * n)
            .ok_or_else(|| Error::Format(format!("{}: blob truncated", e.name)))?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.push((
            e.name,
            Tensor::new(&e.shape, data).map_err(|err| Error::Format(err.to_string()))?,
        ));
        expected += 4 * n as u64;
    }
    if expected as usize != blob.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes",
            blob.len() - expected as usize
        )));
    }
    Ok(out)
}

fn write_meta(path: &Path, meta: &CheckpointMeta) -> Result<()> {
    std::fs::write(sidecar_path(path), serde_json::to_vec_pretty(meta)?)?;
    Ok(())
}

pub fn read_meta(path: &Path) -> Result<CheckpointMeta> {
    Ok(serde_json::from_slice(&std::fs::read(sidecar_path(path))?)?)
}

/// Save content then motion parameters, each in name order.
pub fn save_model(path: &Path, bundle: &ModelBundle<f32>) -> Result<()> {
    let tensors = [Group::Content, Group::Motion]
        .into_iter()
        .flat_map(|g| bundle.params(g).iter().map(|(n, p)| (n.as_str(), &p.value)));
    write_tensors(path, tensors)?;
    write_meta(
        path,
        &CheckpointMeta::Model {
            config: bundle.config().clone(),
        },
    )
}

pub fn load_model(path: &Path) -> Result<ModelBundle<f32>> {
    let CheckpointMeta::Model { config } = read_meta(path)? else {
        return Err(Error::Format(format!("{} is not a model checkpoint", path.display())));
    };
    let template = ModelBundle::<f32>::new(config.clone(), 0)?;
    let mut content = ParamSet::new();
    let mut motion = ParamSet::new();
    for (name, t) in read_tensors(path)? {
        if template.params(Group::Content).value(&name).is_ok() {
            content.insert(name, t)?;
        } else {
            motion.insert(name, t)?;
        }
    }
    ModelBundle::from_params(config, content, motion).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_classifier(path: &Path, classifier: &Classifier) -> Result<()> {
    write_tensors(path, classifier.params().iter().map(|(n, p)| (n.as_str(), &p.value)))?;
    write_meta(
        path,
        &CheckpointMeta::Classifier {
            config: classifier.config().clone(),
        },
    )
}

pub fn load_classifier(path: &Path) -> Result<Classifier> {
    let CheckpointMeta::Classifier { config } = read_meta(path)? else {
        return Err(Error::Format(format!(
            "{} is not a classifier checkpoint",
            path.display()
        )));
    };
    let mut params = ParamSet::new();
    for (name, t) in read_tensors(path)? {
        params.insert(name, t)?;
    }
    Classifier::from_params(config, params).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro() -> ModelConfig {
        ModelConfig {
            ngf: 4,
            content_dim: 8,
            motion_dim: 4,
            image_size: 16,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.tsvc"), dir.path().join("b.tsvc"));
        let m = ModelBundle::<f32>::new(micro(), 4).unwrap();
        save_model(&a, &m).unwrap();
        let loaded = load_model(&a).unwrap();
        assert_eq!(loaded, m);
        save_model(&b, &loaded).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(
            std::fs::read(sidecar_path(&a)).unwrap(),
            std::fs::read(sidecar_path(&b)).unwrap()
        );
        let bytes = std::fs::read(&a).unwrap();
        assert_eq!(&bytes[..4], b"TSVC");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    }

    #[test]
    fn classifier_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.tsvc");
        let c = Classifier::new(ClassifierConfig::default()).unwrap();
        save_classifier(&p, &c).unwrap();
        assert_eq!(load_classifier(&p).unwrap(), c);
        assert!(load_model(&p).is_err());
    }

    #[test]
    fn rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.tsvc");
        let m = ModelBundle::<f32>::new(micro(), 4).unwrap();
        save_model(&p, &m).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[4] = 9;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_tensors(&p), Err(Error::Format(_))));
        bytes[4] = 1;
        bytes.push(0);
        std::fs::write(&p, &bytes).unwrap();
        assert!(read_tensors(&p).is_err());
        assert!(load_model(&dir.path().join("missing")).unwrap_err().is_io());
    }
}
