//! IDX tensor files as distributed with MNIST.
//!
//! Layout (big-endian): a 4-byte magic `00 00 08 nd` (`08` = unsigned byte
//! payload, `nd` = number of dimensions), then `nd` u32 dimension sizes, then
//! the payload. Only the two MNIST shapes are accepted: `0x00000803` images
//! (count, rows, cols) and `0x00000801` label vectors.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC_IMAGES: u32 = 0x0000_0803;
pub const MAGIC_LABELS: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub payload: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        return Err(Error::Length {
            expected: 4,
            found: bytes.len(),
        });
    }
    let magic = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
    let ndims = match magic {
        MAGIC_IMAGES => 3,
        MAGIC_LABELS => 1,
        other => return Err(Error::Format(format!("unsupported IDX magic {other:#010x}"))),
    };
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::Length {
            expected: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|d| u32::from_be_bytes(bytes[4 + 4 * d..8 + 4 * d].try_into().unwrap()) as usize)
        .collect();
    let payload_len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("IDX dimensions overflow".into()))?;
    let expected = header + payload_len;
    if bytes.len() != expected {
        return Err(Error::Length {
            expected,
            found: bytes.len(),
        });
    }
    Ok(IdxTensor {
        magic,
        dims,
        payload: bytes[header..].to_vec(),
    })
}

pub fn serialize_idx(t: &IdxTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * t.dims.len() + t.payload.len());
    out.extend_from_slice(&t.magic.to_be_bytes());
    for &d in &t.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&t.payload);
    out
}

/// Gunzips when the buffer starts with the gzip magic `1f 8b`.
pub fn maybe_gunzip(bytes: Vec<u8>) -> Result<Vec<u8>> {
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(bytes.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

pub fn read_idx_file(path: &Path) -> Result<IdxTensor> {
    parse_idx(&maybe_gunzip(std::fs::read(path)?)?)
}

/// Images and labels from one MNIST split.
#[derive(Debug, Clone)]
pub struct MnistSplit {
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

impl MnistSplit {
    pub fn from_tensors(images: IdxTensor, labels: IdxTensor) -> Result<Self> {
        if images.magic != MAGIC_IMAGES || labels.magic != MAGIC_LABELS {
            return Err(Error::Format("expected an image tensor and a label vector".into()));
        }
        if images.dims[0] != labels.dims[0] {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                images.dims[0], labels.dims[0]
            )));
        }
        Ok(Self {
            rows: images.dims[1],
            cols: images.dims[2],
            images: images.payload,
            labels: labels.payload,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let sz = self.rows * self.cols;
        &self.images[i * sz..(i + 1) * sz]
    }
}

/// Looks for the standard MNIST file names (optionally `.gz`) in `dir`.
pub fn load_mnist_dir(dir: &Path) -> Result<(MnistSplit, MnistSplit)> {
    let find = |stem: &str| -> Result<IdxTensor> {
        for cand in [stem.to_string(), format!("{stem}.gz")] {
            let p = dir.join(&cand);
            if p.exists() {
                return read_idx_file(&p);
            }
        }
        Err(Error::Data(format!("{stem} not found in {}", dir.display())))
    };
    let train = MnistSplit::from_tensors(
        find("train-images-idx3-ubyte")?,
        find("train-labels-idx1-ubyte")?,
    )?;
    let test = MnistSplit::from_tensors(
        find("t10k-images-idx3-ubyte")?,
        find("t10k-labels-idx1-ubyte")?,
    )?;
    Ok((train, test))
}
