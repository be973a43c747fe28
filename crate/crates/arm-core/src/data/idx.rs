//! IDX container parsing (the standard MNIST file format), with optional
//! gzip decompression.
//!
//! Images arrive as big-endian magic `2051`, three u32 dimensions, then
//! row-major pixel bytes; labels as magic `2049`, one dimension, then label
//! bytes. Pixels are scaled by 1/256 so values lie in `[0, 1)`. Byte
//! offsets in errors refer to the decompressed stream.

use std::path::Path;

use crate::data::ImagePool;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 2051;
const LABELS_MAGIC: u32 = 2049;

/// Reads a file, transparently gunzipping if it carries the gzip magic.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        let mut dec = flate2::read::GzDecoder::new(raw.as_slice());
        std::io::Read::read_to_end(&mut dec, &mut out)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn read_u32_be(buf: &[u8], offset: usize, path: &Path, what: &str) -> Result<u32> {
    let bytes: [u8; 4] = buf
        .get(offset..offset + 4)
        .and_then(|s| s.try_into().ok())
        .ok_or_else(|| Error::Format {
            path: path.display().to_string(),
            offset: buf.len() as u64,
            detail: format!("truncated while reading {what}"),
        })?;
    Ok(u32::from_be_bytes(bytes))
}

/// Loads an IDX image file as a `(n, 1, h, w)` tensor scaled into `[0, 1)`.
pub fn load_images(path: &Path) -> Result<Tensor<f32>> {
    let buf = read_maybe_gz(path)?;
    let magic = read_u32_be(&buf, 0, path, "magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            path: path.display().to_string(),
            offset: 0,
            detail: format!("magic {magic:#010x}, expected {IMAGES_MAGIC} (images)"),
        });
    }
    let n = read_u32_be(&buf, 4, path, "image count")? as usize;
    let h = read_u32_be(&buf, 8, path, "image rows")? as usize;
    let w = read_u32_be(&buf, 12, path, "image cols")? as usize;
    let expected = 16 + n * h * w;
    if buf.len() < expected {
        return Err(Error::Format {
            path: path.display().to_string(),
            offset: buf.len() as u64,
            detail: format!("payload ends early: expected {expected} bytes, found {}", buf.len()),
        });
    }
    let data: Vec<f32> = buf[16..expected].iter().map(|&b| b as f32 / 256.0).collect();
    Tensor::from_vec(&[n, 1, h, w], data)
}

/// Loads an IDX label file; every label must be a digit class (0–9).
pub fn load_labels(path: &Path) -> Result<Vec<u32>> {
    let buf = read_maybe_gz(path)?;
    let magic = read_u32_be(&buf, 0, path, "magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format {
            path: path.display().to_string(),
            offset: 0,
            detail: format!("magic {magic:#010x}, expected {LABELS_MAGIC} (labels)"),
        });
    }
    let n = read_u32_be(&buf, 4, path, "label count")? as usize;
    let expected = 8 + n;
    if buf.len() < expected {
        return Err(Error::Format {
            path: path.display().to_string(),
            offset: buf.len() as u64,
            detail: format!("payload ends early: expected {expected} bytes, found {}", buf.len()),
        });
    }
    for (i, &b) in buf[8..expected].iter().enumerate() {
        if b > 9 {
            return Err(Error::Format {
                path: path.display().to_string(),
                offset: (8 + i) as u64,
                detail: format!("label byte {b} exceeds the digit range 0–9"),
            });
        }
    }
    Ok(buf[8..expected].iter().map(|&b| b as u32).collect())
}

/// Loads a matching image/label pair into a pool.
pub fn load_pool(images_path: &Path, labels_path: &Path) -> Result<ImagePool> {
    let images = load_images(images_path)?;
    let labels = load_labels(labels_path)?;
    if images.shape()[0] != labels.len() {
        return Err(Error::Contract(format!(
            "{} has {} images but {} has {} labels",
            images_path.display(),
            images.shape()[0],
            labels_path.display(),
            labels.len()
        )));
    }
    Ok(ImagePool { images, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn image_blob(n: usize, h: usize, w: usize, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        b.extend_from_slice(&(n as u32).to_be_bytes());
        b.extend_from_slice(&(h as u32).to_be_bytes());
        b.extend_from_slice(&(w as u32).to_be_bytes());
        b.extend_from_slice(pixels);
        b
    }

    fn label_blob(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    fn write_tmp(dir: &tempfile::TempDir, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn hand_built_two_image_blob_parses() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..2 * 28 * 28).map(|i| (i % 256) as u8).collect();
        let p = write_tmp(&dir, "imgs", &image_blob(2, 28, 28, &pixels));
        let t = load_images(&p).unwrap();
        assert_eq!(t.shape(), &[2, 1, 28, 28]);
        assert_eq!(t.data()[0], 0.0);
        assert_eq!(t.data()[255], 255.0 / 256.0);
        assert!(t.data().iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn corrupt_magic_fails_at_offset_zero() {
        let dir = tempfile::tempdir().unwrap();
        let mut blob = image_blob(1, 2, 2, &[0; 4]);
        blob[..4].copy_from_slice(&[0, 0, 0, 0]);
        let p = write_tmp(&dir, "bad", &blob);
        match load_images(&p).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 0),
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn truncated_payload_reports_buffer_end() {
        let dir = tempfile::tempdir().unwrap();
        let blob = image_blob(2, 28, 28, &[0; 100]);
        let p = write_tmp(&dir, "short", &blob);
        match load_images(&p).unwrap_err() {
            Error::Format { offset, detail, .. } => {
                assert_eq!(offset, 116);
                assert!(detail.contains("ends early"));
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn out_of_range_label_reports_its_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "labels", &label_blob(&[3, 9, 10, 0]));
        match load_labels(&p).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 8 + 2),
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn gzipped_files_load_transparently() {
        let dir = tempfile::tempdir().unwrap();
        let blob = label_blob(&[1, 2, 3]);
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
        enc.write_all(&blob).unwrap();
        let p = write_tmp(&dir, "labels.gz", &enc.finish().unwrap());
        assert_eq!(load_labels(&p).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn pool_rejects_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let pi = write_tmp(&dir, "i", &image_blob(2, 2, 2, &[0; 8]));
        let pl = write_tmp(&dir, "l", &label_blob(&[1]));
        assert!(load_pool(&pi, &pl).is_err());
    }
}
