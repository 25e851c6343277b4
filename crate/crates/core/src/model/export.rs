//! Binary PGM/PPM frame export.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::synth::VideoClip;
use crate::tensor::Tensor;

/// Map `[-1, 1]` to `[0, 255]`, rounding halves up and clamping.
pub fn to_byte(v: f32) -> u8 {
    let s = (v as f64 + 1.0) * 0.5 * 255.0;
    (s + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Encode one `(C, H, W)` or `(1, C, H, W)` frame as P5 (C = 1) or P6 (C = 3).
pub fn encode_frame(frame: &Tensor<f32>) -> Result<Vec<u8>> {
    let (c, h, w) = match *frame.shape() {
        [c, h, w] | [1, c, h, w] => (c, h, w),
        _ => {
            return Err(Error::invalid(format!(
                "frame must be (C, H, W), got {:?}",
                frame.shape()
            )))
        }
    };
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::invalid(format!("cannot export {c}-channel frames"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let d = frame.data();
    for p in 0..h * w {
        for ch in 0..c {
            out.push(to_byte(d[ch * h * w + p]));
        }
    }
    Ok(out)
}

/// Write every frame of `clip` to `dir` as `<prefix>_<t>.pgm|ppm`.
pub fn export_frames(clip: &VideoClip, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let ext = if clip.spec().channels == 3 { "ppm" } else { "pgm" };
    let mut paths = Vec::with_capacity(clip.num_frames());
    for t in 0..clip.num_frames() {
        let path = dir.join(format!("{prefix}_{t:03}.{ext}"));
        std::fs::write(&path, encode_frame(&clip.frame(t)?)?)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_mapping() {
        assert_eq!(to_byte(-1.0), 0);
        assert_eq!(to_byte(1.0), 255);
        // 127.5 rounds up
        assert_eq!(to_byte(0.0), 128);
        assert_eq!(to_byte(-2.0), 0);
        assert_eq!(to_byte(3.0), 255);
    }

    #[test]
    fn pgm_and_ppm_headers() {
        let g = Tensor::<f32>::from_f64(&[1, 2, 3], &[-1.0, 0.0, 1.0, -1.0, 0.0, 1.0]).unwrap();
        let b = encode_frame(&g).unwrap();
        assert_eq!(&b[..11], b"P5\n3 2\n255\n");
        assert_eq!(&b[11..], &[0, 128, 255, 0, 128, 255]);
        let rgb = Tensor::<f32>::from_f64(&[3, 1, 1], &[1.0, -1.0, 0.0]).unwrap();
        let b = encode_frame(&rgb).unwrap();
        assert_eq!(&b[..11], b"P6\n1 1\n255\n");
        assert_eq!(&b[11..], &[255, 0, 128]);
    }
}
