//! In-memory labelled image sets, loaders and batching.

mod augment;
mod cifar;
mod mnist;

pub use augment::{apply_augment, augment, draw_augment, AugmentDraw, AugmentPolicy};
pub use cifar::{load_cifar10, load_cifar10_dir, parse_cifar_records, CIFAR_BATCH_BYTES, CIFAR_RECORD_BYTES};
pub use mnist::{
    load_mnist, load_mnist_dir, mnist_from_bytes, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels, IdxImages,
    IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::tensor::{ImageShape, Shape4, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetMeta {
    pub name: String,
    pub num_classes: usize,
    /// Per-channel statistics the images were normalized with, if any.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub normalized: bool,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Tensor4<f32>,
    pub labels: Vec<usize>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(name: impl Into<String>, images: Tensor4<f32>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.shape().n != labels.len() {
            return Err(Error::Format(format!(
                "{} images but {} labels",
                images.shape().n,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Format(format!("label {bad} outside [0, {num_classes})")));
        }
        Ok(Self {
            images,
            labels,
            meta: DatasetMeta {
                name: name.into(),
                num_classes,
                mean: Vec::new(),
                std: Vec::new(),
                normalized: false,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> ImageShape {
        self.images.shape().into()
    }

    /// The first `n` examples (all of them if `n` is larger).
    pub fn subset(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        if n == 0 {
            return Err(Error::Argument("subset must keep at least one example".into()));
        }
        let s = self.images.shape();
        let images = Tensor4::from_vec(Shape4::new(n, s.c, s.h, s.w)?, self.images.data()[..n * s.sample_len()].to_vec())?;
        Ok(Self {
            images,
            labels: self.labels[..n].to_vec(),
            meta: self.meta.clone(),
        })
    }

    /// Per-channel mean and (population) standard deviation.
    pub fn channel_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let s = self.images.shape();
        let mut sum = vec![0.0f64; s.c];
        let mut sq = vec![0.0f64; s.c];
        for (idx, plane) in self.images.data().chunks(s.plane()).enumerate() {
            let c = idx % s.c;
            for &v in plane {
                let v = v as f64;
                sum[c] += v;
                sq[c] += v * v;
            }
        }
        let count = (s.n * s.plane()) as f64;
        let mean: Vec<f64> = sum.iter().map(|v| v / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / count - m * m).max(0.0).sqrt())
            .collect();
        (mean, std)
    }

    /// `(x − mean)/std` per channel. Zero-variance channels are only centred.
    pub fn normalize_with(&mut self, mean: &[f64], std: &[f64]) -> Result<()> {
        let s = self.images.shape();
        if mean.len() != s.c || std.len() != s.c {
            return Err(Error::Shape(format!("normalization stats for {} channels, images have {}", mean.len(), s.c)));
        }
        if self.meta.normalized {
            return Err(Error::Argument(format!("{} is already normalized", self.meta.name)));
        }
        let plane = s.plane();
        for (idx, chunk) in self.images.data_mut().chunks_mut(plane).enumerate() {
            let c = idx % s.c;
            let (m, sd) = (mean[c], if std[c] > 0.0 { std[c] } else { 1.0 });
            for v in chunk {
                *v = ((*v as f64 - m) / sd) as f32;
            }
        }
        self.meta.mean = mean.to_vec();
        self.meta.std = std.to_vec();
        self.meta.normalized = true;
        Ok(())
    }

    /// Fits statistics on `self` and applies them; returns them for reuse on
    /// the matching test split.
    pub fn normalize(&mut self) -> Result<(Vec<f64>, Vec<f64>)> {
        let (mean, std) = self.channel_stats();
        self.normalize_with(&mean, &std)?;
        Ok((mean, std))
    }

    /// Copies the given examples into one batch tensor.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor4<f32>, Vec<usize>)> {
        let s = self.images.shape();
        let len = s.sample_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Argument(format!("example {i} out of {} ", self.len())));
            }
            data.extend_from_slice(self.images.sample(i));
            labels.push(self.labels[i]);
        }
        Ok((Tensor4::from_vec(Shape4::new(indices.len(), s.c, s.h, s.w)?, data)?, labels))
    }

    /// Index batches for one epoch. The order is a permutation drawn from
    /// `(seed, epoch)`; the last batch may be short.
    pub fn batch_indices(&self, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
        batch_indices(self.len(), batch_size, Some(CounterRng::new(seed).derive(&[epoch])))
    }

    /// Unshuffled batches in dataset order.
    pub fn sequential_batches(&self, batch_size: usize) -> Result<Vec<Vec<usize>>> {
        batch_indices(self.len(), batch_size, None)
    }
}

/// Fisher–Yates permutation of `0..n`.
pub fn permutation(n: usize, rng: &CounterRng) -> Vec<usize> {
    let mut rng = rng.clone();
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.below(i + 1);
        p.swap(i, j);
    }
    p
}

pub fn batch_indices(n: usize, batch_size: usize, shuffle: Option<CounterRng>) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Argument("batch size must be >= 1".into()));
    }
    let order = match shuffle {
        Some(rng) => permutation(n, &rng),
        None => (0..n).collect(),
    };
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
