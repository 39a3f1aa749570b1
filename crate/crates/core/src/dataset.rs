//! MNIST ingestion, 7×7 downsampling, train/test split and the preprocessed
//! cache file.
//!
//! Pixels are rescaled to `[0, 1]` by dividing the raw byte by 255, then each
//! aligned 4×4 block of the 28×28 image is averaged into one output pixel.
//!
//! # Cache file (`mnist7x7.bin`)
//!
//! All integers and floats are little-endian.
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `SHRP7X7\0` |
//! | 4 | version (1) |
//! | 4 | `dim` (49) |
//! | 4 | `classes` (10) |
//! | 4 | `n_train` |
//! | 4 | `n_test` |
//! | 8 | split seed |
//! | 4·n_train | source index of each train row (u32) |
//! | 4·n_test | source index of each test row (u32) |
//! | n_train | train labels (u8) |
//! | n_test | test labels (u8) |
//! | 8·n_train·dim | train pixels (f64, row-major) |
//! | 8·n_test·dim | test pixels (f64, row-major) |

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::numkit::{Matrix, Rng};
use crate::{Error, Result};

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
pub const SIDE: usize = 28;
pub const SMALL_SIDE: usize = 7;
pub const PIXELS: usize = SIDE * SIDE;
pub const SMALL_PIXELS: usize = SMALL_SIDE * SMALL_SIDE;
pub const CLASSES: usize = 10;
pub const CACHE_MAGIC: &[u8; 8] = b"SHRP7X7\0";
const CACHE_VERSION: u32 = 1;

/// Preprocessed, split dataset. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train_x: Matrix,
    pub train_y_onehot: Matrix,
    pub train_y: Vec<u8>,
    pub test_x: Matrix,
    pub test_y_onehot: Matrix,
    pub test_y: Vec<u8>,
    /// Source row of each train example; train rows follow the seeded shuffle,
    /// so any prefix is itself a seeded random subsample.
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.train_x.cols()
    }

    pub fn n_train(&self) -> usize {
        self.train_x.rows()
    }

    pub fn n_test(&self) -> usize {
        self.test_x.rows()
    }
}

/// Inflates gzip input, passes anything else through unchanged.
pub fn maybe_gunzip(bytes: Vec<u8>) -> Result<Vec<u8>> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or(Error::Length {
            expected: at + 4,
            actual: bytes.len(),
        })
}

/// Parses an IDX3 image file into an `n x 784` matrix with values in `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Matrix> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "image file magic is {magic:#010x}, expected {IMAGE_MAGIC:#010x}"
        )));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    if (rows, cols) != (SIDE, SIDE) {
        return Err(Error::Format(format!("images are {rows}x{cols}, expected 28x28")));
    }
    let expected = 16 + n * PIXELS;
    if bytes.len() < expected {
        return Err(Error::Length {
            expected,
            actual: bytes.len(),
        });
    }
    let data = bytes[16..expected].iter().map(|&b| b as f64 / 255.0).collect();
    Matrix::from_vec(n, PIXELS, data)
}

/// Parses an IDX1 label file; every label must be a digit.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!(
            "label file magic is {magic:#010x}, expected {LABEL_MAGIC:#010x}"
        )));
    }
    let n = be_u32(bytes, 4)? as usize;
    let expected = 8 + n;
    if bytes.len() < expected {
        return Err(Error::Length {
            expected,
            actual: bytes.len(),
        });
    }
    let labels = bytes[8..expected].to_vec();
    if let Some((i, &bad)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= CLASSES) {
        return Err(Error::Format(format!("label {i} is {bad}, outside 0..=9")));
    }
    Ok(labels)
}

/// Averages each aligned 4×4 block of a 28×28 image.
pub fn downsample_7x7(image: &[f64]) -> Result<Vec<f64>> {
    if image.len() != PIXELS {
        return Err(Error::Shape(format!(
            "image has {} pixels, expected {PIXELS}",
            image.len()
        )));
    }
    const BLOCK: usize = SIDE / SMALL_SIDE;
    let mut out = vec![0.0; SMALL_PIXELS];
    for (bi, o) in out.iter_mut().enumerate() {
        let (by, bx) = (bi / SMALL_SIDE, bi % SMALL_SIDE);
        let mut sum = 0.0;
        for dy in 0..BLOCK {
            let row = (by * BLOCK + dy) * SIDE + bx * BLOCK;
            sum += image[row..row + BLOCK].iter().sum::<f64>();
        }
        *o = sum / (BLOCK * BLOCK) as f64;
    }
    Ok(out)
}

/// Downsamples every row of an `n x 784` matrix.
pub fn downsample_all(images: &Matrix) -> Result<Matrix> {
    let mut data = Vec::with_capacity(images.rows() * SMALL_PIXELS);
    for r in 0..images.rows() {
        data.extend(downsample_7x7(images.row(r))?);
    }
    Matrix::from_vec(images.rows(), SMALL_PIXELS, data)
}

pub fn one_hot(labels: &[u8]) -> Matrix {
    Matrix::from_fn(labels.len(), CLASSES, |r, c| {
        if labels[r] as usize == c {
            1.0
        } else {
            0.0
        }
    })
}

/// Seeded shuffle split: the first `train_size` entries of a random
/// permutation of the rows form the training set, the rest the test set.
pub fn make_split(images: &Matrix, labels: &[u8], train_size: usize, seed: u64) -> Result<Dataset> {
    let n = images.rows();
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} images but {} labels", labels.len())));
    }
    if train_size == 0 || train_size >= n {
        return Err(Error::Parameter(format!(
            "train size must be in 1..{n}, got {train_size}"
        )));
    }
    let perm = Rng::new(seed).permutation(n);
    let (train_indices, test_indices) = perm.split_at(train_size);
    let pick = |idx: &[usize]| -> (Matrix, Vec<u8>) {
        (images.select_rows(idx), idx.iter().map(|&i| labels[i]).collect())
    };
    let (train_x, train_y) = pick(train_indices);
    let (test_x, test_y) = pick(test_indices);
    Ok(Dataset {
        train_y_onehot: one_hot(&train_y),
        test_y_onehot: one_hot(&test_y),
        train_x,
        train_y,
        test_x,
        test_y,
        train_indices: train_indices.to_vec(),
        test_indices: test_indices.to_vec(),
        seed,
    })
}

fn find_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(&name);
        if p.is_file() {
            return Ok(p);
        }
    }
    // The official archives also ship with a dot before "idx".
    let dotted = stem.replacen("-idx", ".idx", 1);
    for name in [dotted.clone(), format!("{dotted}.gz")] {
        let p = dir.join(&name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::io(
        dir.join(stem),
        std::io::Error::new(std::io::ErrorKind::NotFound, "IDX file not found (plain or .gz)"),
    ))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    maybe_gunzip(std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Reads `train-images-idx3-ubyte` and `train-labels-idx1-ubyte` (optionally
/// gzipped) from `dir`.
pub fn load_mnist_dir(dir: &Path) -> Result<(Matrix, Vec<u8>)> {
    let images = parse_idx_images(&read_file(&find_file(dir, "train-images-idx3-ubyte")?)?)?;
    let labels = parse_idx_labels(&read_file(&find_file(dir, "train-labels-idx1-ubyte")?)?)?;
    if images.rows() != labels.len() {
        return Err(Error::Format(format!(
            "{} images but {} labels",
            images.rows(),
            labels.len()
        )));
    }
    Ok((images, labels))
}

/// Full pipeline: read IDX files, downsample, split.
pub fn prepare(mnist_dir: &Path, train_size: usize, seed: u64) -> Result<Dataset> {
    let (images, labels) = load_mnist_dir(mnist_dir)?;
    make_split(&downsample_all(&images)?, &labels, train_size, seed)
}

pub fn write_cache(ds: &Dataset) -> Vec<u8> {
    let dim = ds.dim();
    let mut out = Vec::with_capacity(48 + 8 * dim * (ds.n_train() + ds.n_test()));
    out.extend_from_slice(CACHE_MAGIC);
    for v in [CACHE_VERSION, dim as u32, CLASSES as u32, ds.n_train() as u32, ds.n_test() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&ds.seed.to_le_bytes());
    for &i in ds.train_indices.iter().chain(&ds.test_indices) {
        out.extend_from_slice(&(i as u32).to_le_bytes());
    }
    out.extend_from_slice(&ds.train_y);
    out.extend_from_slice(&ds.test_y);
    for v in ds.train_x.as_slice().iter().chain(ds.test_x.as_slice()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_cache(bytes: &[u8]) -> Result<Dataset> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos + n;
        let s = bytes.get(pos..end).ok_or(Error::Length {
            expected: end,
            actual: bytes.len(),
        })?;
        pos = end;
        Ok(s)
    };
    if take(8)? != CACHE_MAGIC {
        return Err(Error::Format("not a sharplab dataset cache (bad magic)".into()));
    }
    let mut header = [0u32; 5];
    for h in &mut header {
        *h = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
    }
    let [version, dim, classes, n_train, n_test] = header.map(|v| v as usize);
    if version != CACHE_VERSION as usize || classes != CLASSES {
        return Err(Error::Format(format!(
            "unsupported cache version {version} / class count {classes}"
        )));
    }
    let seed = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
    let indices = |b: &[u8]| -> Vec<usize> {
        b.chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
            .collect()
    };
    let train_indices = indices(take(4 * n_train)?);
    let test_indices = indices(take(4 * n_test)?);
    let train_y = take(n_train)?.to_vec();
    let test_y = take(n_test)?.to_vec();
    let floats = |b: &[u8]| -> Vec<f64> {
        b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect()
    };
    let train_x = Matrix::from_vec(n_train, dim, floats(take(8 * n_train * dim)?))?;
    let test_x = Matrix::from_vec(n_test, dim, floats(take(8 * n_test * dim)?))?;
    if pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes in cache", bytes.len() - pos)));
    }
    if train_y.iter().chain(&test_y).any(|&l| l as usize >= CLASSES) {
        return Err(Error::Format("cache holds a label outside 0..=9".into()));
    }
    Ok(Dataset {
        train_y_onehot: one_hot(&train_y),
        test_y_onehot: one_hot(&test_y),
        train_x,
        train_y,
        test_x,
        test_y,
        train_indices,
        test_indices,
        seed,
    })
}

pub fn save_cache(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, write_cache(ds)).map_err(|e| Error::io(path, e))
}

pub fn load_cache(path: &Path) -> Result<Dataset> {
    read_cache(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Writes `split,source_index,label,p0..p48` rows for every example.
pub fn export_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let header: Vec<String> = ["split", "source_index", "label"]
        .iter()
        .map(|s| s.to_string())
        .chain((0..ds.dim()).map(|i| format!("p{i}")))
        .collect();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    let parts = [
        ("train", &ds.train_x, &ds.train_y, &ds.train_indices),
        ("test", &ds.test_x, &ds.test_y, &ds.test_indices),
    ];
    for (name, x, y, idx) in parts {
        for r in 0..x.rows() {
            write!(w, "{name},{},{}", idx[r], y[r]).map_err(io)?;
            for v in x.row(r) {
                write!(w, ",{v:?}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}
