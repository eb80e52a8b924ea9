//! MNIST IDX files: big-endian u32 magic and dims, then raw bytes.

use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format(format!("IDX {what}: truncated header")))
}

fn body<'a>(bytes: &'a [u8], header: usize, len: usize, what: &str) -> Result<&'a [u8]> {
    let have = bytes.len() - header;
    if have != len {
        return Err(Error::Format(format!(
            "IDX {what}: header promises {len} data bytes, file has {have}"
        )));
    }
    Ok(&bytes[header..])
}

pub fn read_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!("IDX images: magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let count = be_u32(bytes, 4, "images")? as usize;
    let rows = be_u32(bytes, 8, "images")? as usize;
    let cols = be_u32(bytes, 12, "images")? as usize;
    let len = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Format("IDX images: dims overflow".into()))?;
    let pixels = body(bytes, 16, len, "images")?.to_vec();
    Ok(IdxImages { count, rows, cols, pixels })
}

pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!("IDX labels: magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let count = be_u32(bytes, 4, "labels")? as usize;
    Ok(body(bytes, 8, count, "labels")?.to_vec())
}

fn u32_of(v: usize) -> Result<[u8; 4]> {
    u32::try_from(v)
        .map(u32::to_be_bytes)
        .map_err(|_| Error::Size(format!("{v} does not fit an IDX dimension")))
}

pub fn write_idx_images(images: &IdxImages) -> Result<Vec<u8>> {
    if images.pixels.len() != images.count * images.rows * images.cols {
        return Err(Error::Shape("pixel count disagrees with dims".into()));
    }
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [images.count, images.rows, images.cols] {
        out.extend_from_slice(&u32_of(d)?);
    }
    out.extend_from_slice(&images.pixels);
    Ok(out)
}

pub fn write_idx_labels(labels: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&u32_of(labels.len())?);
    out.extend_from_slice(labels);
    Ok(out)
}

/// Builds a dataset from IDX bytes; pixels become `byte/255`.
pub fn mnist_from_bytes(name: &str, images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let img = read_idx_images(images)?;
    let lab = read_idx_labels(labels)?;
    if img.count != lab.len() {
        return Err(Error::Format(format!("{} images but {} labels", img.count, lab.len())));
    }
    if img.count == 0 {
        return Err(Error::Format("IDX files contain no examples".into()));
    }
    let shape = Shape4::new(img.count, 1, img.rows, img.cols).map_err(|e| Error::Format(e.to_string()))?;
    let data = img.pixels.iter().map(|&b| b as f32 / 255.0).collect();
    let labels = lab.into_iter().map(usize::from).collect();
    Dataset::new(name, Tensor4::from_vec(shape, data)?, labels, 10)
}

pub fn load_mnist(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = std::fs::read(images_path.as_ref())?;
    let labels = std::fs::read(labels_path.as_ref())?;
    mnist_from_bytes("mnist", &images, &labels)
}

/// Loads the standard file names from `dir`.
pub fn load_mnist_dir(dir: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let dir = dir.as_ref();
    let mut d = load_mnist(
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )?;
    d.meta.name = format!("mnist-{prefix}");
    Ok(d)
}

impl Dataset {
    /// Re-encodes an unnormalized single-channel set as IDX bytes
    /// `(images, labels)`.
    pub fn to_idx(&self) -> Result<(Vec<u8>, Vec<u8>)> {
        let s = self.images.shape();
        if self.meta.normalized || s.c != 1 {
            return Err(Error::Argument("IDX export needs unnormalized single-channel images".into()));
        }
        let pixels = self.images.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
        let labels: Vec<u8> = self
            .labels
            .iter()
            .map(|&l| u8::try_from(l).map_err(|_| Error::Argument(format!("label {l} exceeds a byte"))))
            .collect::<Result<_>>()?;
        let images = IdxImages {
            count: s.n,
            rows: s.h,
            cols: s.w,
            pixels,
        };
        Ok((write_idx_images(&images)?, write_idx_labels(&labels)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (Vec<u8>, Vec<u8>) {
        let images = IdxImages {
            count: 3,
            rows: 2,
            cols: 2,
            pixels: vec![0, 255, 1, 128, 7, 8, 9, 10, 200, 201, 202, 203],
        };
        (write_idx_images(&images).unwrap(), write_idx_labels(&[3, 1, 9]).unwrap())
    }

    #[test]
    fn scaling_and_round_trip() {
        let (i, l) = sample();
        let d = mnist_from_bytes("t", &i, &l).unwrap();
        assert_eq!(d.images.data()[0], 0.0);
        assert_eq!(d.images.data()[1], 1.0);
        assert_eq!(d.labels, vec![3, 1, 9]);
        assert_eq!(d.to_idx().unwrap(), (i, l));
    }

    #[test]
    fn malformed_inputs_are_format_errors() {
        let (i, l) = sample();
        let fmt = |r: Result<Dataset>| matches!(r, Err(Error::Format(_)));
        let mut bad = i.clone();
        bad[3] = 0x04;
        assert!(fmt(mnist_from_bytes("t", &bad, &l)));
        assert!(fmt(mnist_from_bytes("t", &l, &l)));
        for cut in [0, 3, 15, 16, i.len() - 1] {
            assert!(fmt(mnist_from_bytes("t", &i[..cut], &l)), "cut {cut}");
        }
        assert!(fmt(mnist_from_bytes("t", &i, &l[..l.len() - 1])));
        let two = write_idx_labels(&[3, 1]).unwrap();
        assert!(fmt(mnist_from_bytes("t", &i, &two)));
        let eleven = write_idx_labels(&[3, 1, 11]).unwrap();
        assert!(fmt(mnist_from_bytes("t", &i, &eleven)));
    }
}
