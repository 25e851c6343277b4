//! SMV1 clip container and its JSON manifest.
//!
//! Layout (little-endian): magic `SMV1`, then u32 `version, num_clips, T, C,
//! H, W, dtype` (`dtype` 0 = f32), then per clip a u16 action label, a u64
//! seed and `T*C*H*W` f32 values in frame, channel, row order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{check_classes, gen_clip, Action, ActionLabel, BackgroundKind, ClipSpec, ShapeKind, VideoClip};
use crate::error::{Error, Result};
use crate::rng::split_seed;
use crate::tensor::Tensor;

pub const SMV1_MAGIC: &[u8; 4] = b"SMV1";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub id: usize,
    pub action: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub classes: Vec<String>,
    pub clips: Vec<ClipEntry>,
    pub split: Split,
}

/// The manifest sits next to the container with a `.json` extension.
pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Per-class 80/20 split. Clip ids are grouped by class, `per_class` each;
/// the first `round(0.8 * per_class)` of every class go to training.
pub fn split_ids(classes: usize, per_class: usize) -> Split {
    let n_train = (0.8 * per_class as f64).round() as usize;
    let mut split = Split {
        train: Vec::new(),
        test: Vec::new(),
    };
    for k in 0..classes {
        for i in 0..per_class {
            let id = k * per_class + i;
            if i < n_train {
                split.train.push(id);
            } else {
                split.test.push(id);
            }
        }
    }
    split
}

/// Generate a balanced dataset and write it with its manifest. Clip `id` has
/// class `id / clips_per_class` and seed `split_seed(seed, id)`.
pub fn gen_dataset(
    classes: usize,
    clips_per_class: usize,
    seed: u64,
    spec: &ClipSpec,
    path: &Path,
) -> Result<Manifest> {
    check_classes(classes)?;
    spec.validate()?;
    if clips_per_class == 0 {
        return Err(Error::invalid("clips per class must be positive"));
    }
    let entries: Vec<ClipEntry> = (0..classes * clips_per_class)
        .map(|id| ClipEntry {
            id,
            action: id / clips_per_class,
            seed: split_seed(seed, id as u64),
        })
        .collect();
    let mut clips = Vec::with_capacity(entries.len());
    for e in &entries {
        clips.push(gen_clip(ActionLabel::new(e.action, classes)?, e.seed, spec)?);
    }
    let manifest = Manifest {
        classes: Action::names(classes)?,
        clips: entries,
        split: split_ids(classes, clips_per_class),
    };
    write_clips(path, spec, &clips)?;
    std::fs::write(manifest_path(path), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn write_clips(path: &Path, spec: &ClipSpec, clips: &[VideoClip]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SMV1_MAGIC)?;
    let [c, h, ww] = spec.frame_shape();
    for v in [
        VERSION,
        clips.len() as u32,
        spec.frames as u32,
        c as u32,
        h as u32,
        ww as u32,
        0,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for clip in clips {
        if clip.spec() != *spec {
            return Err(Error::invalid(format!(
                "clip {:?} does not match {:?}",
                clip.spec(),
                spec
            )));
        }
        let label = u16::try_from(clip.action).map_err(|_| Error::invalid("action label exceeds u16"))?;
        w.write_all(&label.to_le_bytes())?;
        w.write_all(&clip.seed.to_le_bytes())?;
        for v in clip.frames.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Raw records: `(spec, [(action, seed, frames)])`.
pub fn read_clips(path: &Path) -> Result<(ClipSpec, Vec<(usize, u64, Tensor<f32>)>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SMV1_MAGIC {
        return Err(Error::Format(format!("{}: not an SMV1 file", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported SMV1 version {version}")));
    }
    let n = read_u32(&mut r)? as usize;
    let dims: Vec<usize> = (0..4)
        .map(|_| read_u32(&mut r).map(|v| v as usize))
        .collect::<Result<_>>()?;
    let dtype = read_u32(&mut r)?;
    if dtype != 0 {
        return Err(Error::Format(format!("unsupported dtype {dtype}")));
    }
    let (t, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
    if h != w {
        return Err(Error::Format(format!("non-square frames {h}x{w}")));
    }
    let spec = ClipSpec {
        frames: t,
        size: h,
        channels: c,
    };
    let len = t * c * h * w;
    let mut out = Vec::with_capacity(n);
    let mut buf = vec![0u8; len * 4];
    for _ in 0..n {
        let mut lb = [0u8; 2];
        r.read_exact(&mut lb)?;
        let mut sb = [0u8; 8];
        r.read_exact(&mut sb)?;
        r.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.push((
            u16::from_le_bytes(lb) as usize,
            u64::from_le_bytes(sb),
            Tensor::new(&[t, c, h, w], data)?,
        ));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", rest.len())));
    }
    Ok((spec, out))
}

/// A loaded container plus manifest.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub spec: ClipSpec,
    pub manifest: Manifest,
    pub clips: Vec<VideoClip>,
}

impl Dataset {
    pub fn load(path: &Path) -> Result<Dataset> {
        let (spec, records) = read_clips(path)?;
        let mpath = manifest_path(path);
        let manifest: Manifest = serde_json::from_slice(&std::fs::read(&mpath)?)?;
        if manifest.clips.len() != records.len() {
            return Err(Error::Format(format!(
                "manifest lists {} clips, container has {}",
                manifest.clips.len(),
                records.len()
            )));
        }
        let k = manifest.classes.len();
        let mut clips = Vec::with_capacity(records.len());
        for (entry, (action, seed, frames)) in manifest.clips.iter().zip(records) {
            if entry.action != action || entry.seed != seed {
                return Err(Error::Format(format!(
                    "manifest entry {} disagrees with container",
                    entry.id
                )));
            }
            let scene = super::scene_for(ActionLabel::new(action, k)?, seed, &spec)?;
            clips.push(VideoClip {
                frames,
                action,
                shape_id: ShapeKind::ALL.iter().position(|&s| s == scene.shape).unwrap(),
                background_id: BackgroundKind::ALL.iter().position(|&b| b == scene.background).unwrap(),
                seed,
            });
        }
        Ok(Dataset { spec, manifest, clips })
    }

    pub fn classes(&self) -> usize {
        self.manifest.classes.len()
    }

    pub fn train(&self) -> Vec<&VideoClip> {
        self.manifest.split.train.iter().map(|&i| &self.clips[i]).collect()
    }

    pub fn test(&self) -> Vec<&VideoClip> {
        self.manifest.split.test.iter().map(|&i| &self.clips[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.smv");
        let spec = ClipSpec {
            frames: 3,
            size: 16,
            channels: 1,
        };
        let m = gen_dataset(4, 5, 7, &spec, &path).unwrap();
        assert_eq!(m.clips.len(), 20);
        let mut hist = [0; 4];
        for c in &m.clips {
            hist[c.action] += 1;
        }
        assert_eq!(hist, [5; 4]);
        assert_eq!(m.split.train.len(), 16);
        assert_eq!(m.split.test.len(), 4);
        let ds = Dataset::load(&path).unwrap();
        assert_eq!(ds.spec, spec);
        assert_eq!(ds.manifest, m);
        for (e, c) in m.clips.iter().zip(&ds.clips) {
            let fresh = gen_clip(ActionLabel::new(e.action, 4).unwrap(), e.seed, &spec).unwrap();
            assert_eq!(&fresh, c);
        }
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"SMV1");
        assert_eq!(bytes.len(), 4 + 7 * 4 + 20 * (2 + 8 + 3 * 16 * 16 * 4));
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.smv");
        std::fs::write(&path, b"NOPE0000").unwrap();
        assert!(read_clips(&path).unwrap_err().is_io());
        assert!(read_clips(&dir.path().join("missing.smv")).unwrap_err().is_io());
    }

    #[test]
    fn split_is_a_partition() {
        let s = split_ids(4, 50);
        assert_eq!(s.train.len(), 160);
        assert_eq!(s.test.len(), 40);
        let mut all: Vec<_> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..200).collect::<Vec<_>>());
    }
}
