use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, split_seed, Tensor};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::fs::File;
use std::io::Read;
use std::path::Path;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// A set of labeled samples: `inputs` is `[n, dims]`, `labels` holds class
/// ids below the class count.
#[derive(Clone, Debug)]
pub struct LabeledBatch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.shape().len() != 2 || inputs.rows() != labels.len() || labels.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "inputs {:?} vs {} labels",
                inputs.shape(),
                labels.len()
            )));
        }
        Ok(LabeledBatch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.inputs.cols()
    }

    /// Copy out the subset at `idx` (order preserved).
    pub fn subset(&self, idx: &[usize]) -> LabeledBatch {
        LabeledBatch {
            inputs: self.inputs.gather_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Concatenate two batches with equal dims.
    pub fn concat(&self, other: &LabeledBatch) -> Result<LabeledBatch> {
        if self.dims() != other.dims() {
            return Err(Error::ShapeMismatch(format!("{} vs {}", self.dims(), other.dims())));
        }
        let mut data = self.inputs.data().to_vec();
        data.extend_from_slice(other.inputs.data());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let n = labels.len();
        Ok(LabeledBatch { inputs: Tensor::from_vec(&[n, self.dims()], data)?, labels })
    }
}

/// Train/test split of a task.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: LabeledBatch,
    pub test: LabeledBatch,
}

fn read_u32_be(buf: &[u8], off: usize) -> Result<u32> {
    if off + 4 > buf.len() {
        return Err(Error::TruncatedFile { needed: off + 4 - buf.len() });
    }
    Ok(u32::from_be_bytes([buf[off], buf[off + 1], buf[off + 2], buf[off + 3]]))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

fn load_idx_images(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let buf = read_file(path)?;
    let magic = read_u32_be(&buf, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            expected: format!("{IDX_IMAGES_MAGIC:#010x}"),
            found: format!("{magic:#010x}"),
        });
    }
    let count = read_u32_be(&buf, 4)? as usize;
    let rows = read_u32_be(&buf, 8)? as usize;
    let cols = read_u32_be(&buf, 12)? as usize;
    let pixels = count * rows * cols;
    if buf.len() < 16 + pixels {
        return Err(Error::TruncatedFile { needed: 16 + pixels - buf.len() });
    }
    Ok((count, rows * cols, buf[16..16 + pixels].to_vec()))
}

fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let buf = read_file(path)?;
    let magic = read_u32_be(&buf, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            expected: format!("{IDX_LABELS_MAGIC:#010x}"),
            found: format!("{magic:#010x}"),
        });
    }
    let count = read_u32_be(&buf, 4)? as usize;
    if buf.len() < 8 + count {
        return Err(Error::TruncatedFile { needed: 8 + count - buf.len() });
    }
    Ok(buf[8..8 + count].to_vec())
}

fn idx_pair_to_batch(images: &Path, labels: &Path) -> Result<LabeledBatch> {
    let (count, dim, pixels) = load_idx_images(images)?;
    let raw_labels = load_idx_labels(labels)?;
    if raw_labels.len() != count {
        return Err(Error::CountMismatch { images: count, labels: raw_labels.len() });
    }
    let data: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    LabeledBatch::new(Tensor::from_vec(&[count, dim], data)?, raw_labels.iter().map(|&l| l as usize).collect())
}

/// Load the MNIST IDX files from a directory holding the four standard
/// files (`train-images-idx3-ubyte`, `train-labels-idx1-ubyte`,
/// `t10k-images-idx3-ubyte`, `t10k-labels-idx1-ubyte`). Pixels are scaled
/// to [0,1].
pub fn load_mnist(dir: &Path) -> Result<Dataset> {
    let train = idx_pair_to_batch(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )?;
    let test = idx_pair_to_batch(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    )?;
    Ok(Dataset { train, test })
}

/// Cluster centers used by [`synth_blobs`]: each class sits on a seeded
/// signed coordinate axis at a magnitude growing with the class index, so
/// all pairwise separations are at least 4 standard deviations.
pub fn synth_blob_centers(seed: u64, dims: usize, classes: usize) -> Vec<Vec<f64>> {
    let mut rng = seeded_rng(split_seed(seed, 0xb10b));
    let mut axes: Vec<usize> = (0..dims).collect();
    for i in (1..dims).rev() {
        let j = rng.gen_range(0..=i);
        axes.swap(i, j);
    }
    (0..classes)
        .map(|c| {
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let mut v = vec![0.0; dims];
            v[axes[c % dims]] = sign * 4.0 * (1.0 + (c / dims) as f64);
            v
        })
        .collect()
}

/// Gaussian clusters (σ = 1 per component) at seeded centers; deterministic
/// per seed. Labels cycle through the classes so every class appears when
/// `n ≥ classes`.
pub fn synth_blobs(seed: u64, n: usize, dims: usize, classes: usize) -> LabeledBatch {
    assert!(n >= classes, "need at least one sample per class");
    let centers = synth_blob_centers(seed, dims, classes);
    let mut rng = seeded_rng(split_seed(seed, 0xda7a));
    let mut data = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        labels.push(c);
        for d in 0..dims {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(centers[c][d] + z);
        }
    }
    LabeledBatch::new(Tensor::from_vec(&[n, dims], data).unwrap(), labels).unwrap()
}

/// Split a batch into (rest, held-out) by a seeded permutation; `fraction`
/// of items go to the held-out side.
pub fn split_holdout(batch: &LabeledBatch, fraction: f64, seed: u64) -> (LabeledBatch, LabeledBatch) {
    let n = batch.len();
    let k = ((n as f64) * fraction).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = seeded_rng(seed);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let held = batch.subset(&idx[..k]);
    let rest = batch.subset(&idx[k..]);
    (rest, held)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic_per_seed() {
        let a = synth_blobs(3, 40, 5, 3);
        let b = synth_blobs(3, 40, 5, 3);
        assert_eq!(a.inputs, b.inputs);
        assert_eq!(a.labels, b.labels);
        let c = synth_blobs(4, 40, 5, 3);
        assert_ne!(a.inputs, c.inputs);
    }

    #[test]
    fn single_class_blobs() {
        let b = synth_blobs(1, 10, 2, 1);
        assert!(b.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn cluster_means_near_centers() {
        // law of large numbers: per-class sample mean within 3σ/√n_c of the
        // true center in every coordinate
        let n = 3000;
        let classes = 3;
        let dims = 4;
        let batch = synth_blobs(7, n, dims, classes);
        let centers = synth_blob_centers(7, dims, classes);
        for c in 0..classes {
            let idx: Vec<usize> =
                (0..n).filter(|&i| batch.labels[i] == c).collect();
            let nc = idx.len() as f64;
            let bound = 3.0 / nc.sqrt();
            for d in 0..dims {
                let mean: f64 = idx.iter().map(|&i| batch.inputs.at(i, d)).sum::<f64>() / nc;
                assert!(
                    (mean - centers[c][d]).abs() <= bound,
                    "class {c} dim {d}: mean {mean} vs center {} (bound {bound})",
                    centers[c][d]
                );
            }
        }
    }

    #[test]
    fn idx_loader_rejects_bad_magic_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("train-images-idx3-ubyte");
        let lbl = dir.path().join("train-labels-idx1-ubyte");
        // 2 images of 2x2, but 3 labels
        let mut ibuf = Vec::new();
        ibuf.extend_from_slice(&0x0803u32.to_be_bytes());
        ibuf.extend_from_slice(&2u32.to_be_bytes());
        ibuf.extend_from_slice(&2u32.to_be_bytes());
        ibuf.extend_from_slice(&2u32.to_be_bytes());
        ibuf.extend_from_slice(&[0u8; 8]);
        std::fs::write(&img, &ibuf).unwrap();
        let mut lbuf = Vec::new();
        lbuf.extend_from_slice(&0x0801u32.to_be_bytes());
        lbuf.extend_from_slice(&3u32.to_be_bytes());
        lbuf.extend_from_slice(&[0u8; 3]);
        std::fs::write(&lbl, &lbuf).unwrap();
        assert!(matches!(
            idx_pair_to_batch(&img, &lbl),
            Err(Error::CountMismatch { images: 2, labels: 3 })
        ));
        // corrupt the image magic
        ibuf[3] = 0x99;
        std::fs::write(&img, &ibuf).unwrap();
        assert!(matches!(idx_pair_to_batch(&img, &lbl), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn truncated_image_file_detected() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("imgs");
        let mut ibuf = Vec::new();
        ibuf.extend_from_slice(&0x0803u32.to_be_bytes());
        ibuf.extend_from_slice(&10u32.to_be_bytes());
        ibuf.extend_from_slice(&28u32.to_be_bytes());
        ibuf.extend_from_slice(&28u32.to_be_bytes());
        ibuf.extend_from_slice(&[0u8; 100]); // far less than 10*784
        std::fs::write(&img, &ibuf).unwrap();
        assert!(matches!(load_idx_images(&img), Err(Error::TruncatedFile { .. })));
    }

    #[test]
    fn holdout_split_partitions() {
        let b = synth_blobs(5, 100, 3, 4);
        let (rest, held) = split_holdout(&b, 0.1, 9);
        assert_eq!(held.len(), 10);
        assert_eq!(rest.len(), 90);
    }
}
