//! CIFAR-10 binary batches: records of one label byte followed by 3072
//! pixel bytes, red plane then green then blue, each row-major 32×32.

use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;
pub const CIFAR_BATCH_BYTES: usize = 10_000 * CIFAR_RECORD_BYTES;

/// Appends the records in `bytes` to `pixels` (scaled to [0, 1]) and `labels`.
pub fn parse_cifar_records(bytes: &[u8], pixels: &mut Vec<f32>, labels: &mut Vec<usize>) -> Result<usize> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD_BYTES) {
        return Err(Error::Format(format!(
            "CIFAR-10 data of {} bytes is not a whole number of {CIFAR_RECORD_BYTES}-byte records",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    pixels.reserve(n * (CIFAR_RECORD_BYTES - 1));
    labels.reserve(n);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        if rec[0] > 9 {
            return Err(Error::Format(format!("record {i}: label byte {} > 9", rec[0])));
        }
        labels.push(rec[0] as usize);
        pixels.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok(n)
}

fn assemble(name: &str, pixels: Vec<f32>, labels: Vec<usize>) -> Result<Dataset> {
    let shape = Shape4::new(labels.len(), 3, 32, 32)?;
    Dataset::new(name, Tensor4::from_vec(shape, pixels)?, labels, 10)
}

/// Concatenates any number of record files.
pub fn load_cifar10<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    let (mut pixels, mut labels) = (Vec::new(), Vec::new());
    for p in paths {
        let bytes = std::fs::read(p.as_ref())?;
        parse_cifar_records(&bytes, &mut pixels, &mut labels)
            .map_err(|e| Error::Format(format!("{}: {e}", p.as_ref().display())))?;
    }
    if labels.is_empty() {
        return Err(Error::Argument("no CIFAR-10 files given".into()));
    }
    assemble("cifar10", pixels, labels)
}

/// Standard batch files from `dir`; each must be exactly one full batch.
pub fn load_cifar10_dir(dir: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let dir = dir.as_ref();
    let files: Vec<_> = match split {
        Split::Train => (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
        Split::Test => vec![dir.join("test_batch.bin")],
    };
    for f in &files {
        let len = std::fs::metadata(f)?.len();
        if len != CIFAR_BATCH_BYTES as u64 {
            return Err(Error::Format(format!(
                "{}: {len} bytes, a CIFAR-10 batch is {CIFAR_BATCH_BYTES}",
                f.display()
            )));
        }
    }
    let mut d = load_cifar10(&files)?;
    d.meta.name = match split {
        Split::Train => "cifar10-train".into(),
        Split::Test => "cifar10-test".into(),
    };
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        assert_eq!(CIFAR_BATCH_BYTES, 30_730_000);
        let mut rec = vec![0u8; CIFAR_RECORD_BYTES * 2];
        rec[0] = 7;
        rec[1] = 255; // R(0,0) of record 0
        rec[1 + 1024] = 51; // G(0,0)
        rec[CIFAR_RECORD_BYTES] = 2;
        let (mut px, mut lab) = (Vec::new(), Vec::new());
        assert_eq!(parse_cifar_records(&rec, &mut px, &mut lab).unwrap(), 2);
        let d = assemble("t", px, lab).unwrap();
        assert_eq!(d.labels, vec![7, 2]);
        assert_eq!(d.images.get(0, 0, 0, 0), 1.0);
        assert_eq!(d.images.get(0, 1, 0, 0), 0.2);
    }

    #[test]
    fn malformed() {
        let (mut px, mut lab) = (Vec::new(), Vec::new());
        assert!(matches!(parse_cifar_records(&[0u8; 3072], &mut px, &mut lab), Err(Error::Format(_))));
        let mut rec = vec![0u8; CIFAR_RECORD_BYTES];
        rec[0] = 10;
        assert!(matches!(parse_cifar_records(&rec, &mut px, &mut lab), Err(Error::Format(_))));
    }
}
