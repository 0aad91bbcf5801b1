//! Dataset resolution shared by the experiment commands: MNIST from IDX
//! files, or seeded synthetic blobs for quick runs.

use edgepress::error::{Error, Result};
use edgepress::io::ExperimentConfig;
use edgepress::model::{load_mnist, split_holdout, synth_blobs, Dataset, LabeledBatch};
use edgepress::numerics::split_seed;
use std::path::PathBuf;

pub struct ResolvedData {
    pub train: LabeledBatch,
    pub val: LabeledBatch,
    pub test: LabeledBatch,
    pub input_dim: usize,
    pub classes: usize,
}

pub const DATA_KEYS: [&str; 7] = [
    "dataset",
    "mnist_dir",
    "val_fraction",
    "blob_n",
    "blob_dims",
    "blob_classes",
    "seed",
];

/// Load the dataset named by `dataset` (default `mnist`) and carve a
/// seeded validation split off the training set; the test set stays
/// intact.
pub fn resolve(cfg: &ExperimentConfig) -> Result<ResolvedData> {
    let seed = cfg.u64_or("seed", 1)?;
    let val_fraction = cfg.f64_or("val_fraction", 0.1)?;
    let dataset = cfg.str_or("dataset", "mnist");
    let (train_full, test, input_dim, classes) = match dataset.as_str() {
        "mnist" => {
            let dir = PathBuf::from(cfg.str_or("mnist_dir", "data/mnist"));
            if !dir.join("train-images-idx3-ubyte").exists() {
                return Err(Error::Config(format!(
                    "MNIST IDX files not found under '{}'; set mnist_dir or see the README",
                    dir.display()
                )));
            }
            let ds: Dataset = load_mnist(&dir)?;
            (ds.train, ds.test, 784, 10)
        }
        "blobs" => {
            let n = cfg.usize_or("blob_n", 600)?;
            let dims = cfg.usize_or("blob_dims", 8)?;
            let classes = cfg.usize_or("blob_classes", 3)?;
            // one draw from one task, split so train and test share centers
            let n_test = n / 4 + classes;
            let pool = synth_blobs(split_seed(seed, 0xb1), n + n_test, dims, classes);
            let train = pool.subset(&(0..n).collect::<Vec<_>>());
            let test = pool.subset(&(n..n + n_test).collect::<Vec<_>>());
            (train, test, dims, classes)
        }
        other => return Err(Error::Config(format!("unknown dataset '{other}'"))),
    };
    let (train, val) = split_holdout(&train_full, val_fraction, split_seed(seed, 0x7a));
    Ok(ResolvedData { train, val, test, input_dim, classes })
}

/// Model dims from config (`dims=784,128,128,10`), defaulting to the
/// dataset's input/output widths around a 2×128 hidden stack.
pub fn model_dims(cfg: &ExperimentConfig, data: &ResolvedData) -> Result<Vec<usize>> {
    let default = vec![data.input_dim, 128, 128, data.classes];
    let dims = cfg.usize_list_or("dims", &default)?;
    if dims.len() < 2 || dims[0] != data.input_dim || *dims.last().unwrap() != data.classes {
        return Err(Error::Config(format!(
            "dims {dims:?} incompatible with dataset ({} -> {})",
            data.input_dim, data.classes
        )));
    }
    Ok(dims)
}
