//! Binary model files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `SHRPMLP\0` |
//! | 4     | format version, currently 1 |
//! | 4     | number of layer sizes `L + 1` |
//! | 4·(L+1) | layer sizes `N(0) .. N(L)` |
//! | 1     | hidden activation tag (0 identity, 1 relu, 2 tanh, 3 softmax) |
//! | 1     | output activation tag |
//! | …     | for `l = 1..=L`: `W⁽ˡ⁾` row-major as f64, then `b⁽ˡ⁾` as f64 |
//!
//! A JSON sidecar (`<file>.json`) carries the same shape information plus free
//! form metadata; the binary file alone is enough to reload the network.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Activation, Mlp};
use crate::numkit::Matrix;
use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"SHRPMLP\0";
const MODEL_VERSION: u32 = 1;

/// Contents of the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub format: String,
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
    pub parameter_count: usize,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub extra: serde_json::Value,
}

impl ModelMetadata {
    pub fn describe(net: &Mlp, extra: serde_json::Value) -> Self {
        ModelMetadata {
            format: "sharplab-mlp".into(),
            version: MODEL_VERSION,
            layer_sizes: net.layer_sizes().to_vec(),
            hidden: net.hidden_activation(),
            output: net.output_activation(),
            parameter_count: net.parameter_count(),
            extra,
        }
    }
}

/// Serializes `net` into the binary layout above.
pub fn write_model(net: &Mlp) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 8 * net.parameter_count());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(net.layer_sizes().len() as u32).to_le_bytes());
    for &n in net.layer_sizes() {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    out.push(net.hidden_activation().tag());
    out.push(net.output_activation().tag());
    for (w, b) in net.weights().iter().zip(net.biases()) {
        for v in w.as_slice().iter().chain(b) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Length {
                expected: end,
                actual: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(8 * n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn read_model(bytes: &[u8]) -> Result<Mlp> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != MODEL_MAGIC {
        return Err(Error::Format("not a sharplab model file (bad magic)".into()));
    }
    let version = cur.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let count = cur.u32()? as usize;
    if !(2..=64).contains(&count) {
        return Err(Error::Format(format!("implausible layer count {count}")));
    }
    let sizes = (0..count)
        .map(|_| cur.u32().map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let tags = cur.take(2)?;
    let activation = |t: u8| {
        Activation::from_tag(t).ok_or_else(|| Error::Format(format!("unknown activation tag {t}")))
    };
    let (hidden, output) = (activation(tags[0])?, activation(tags[1])?);
    let mut weights = Vec::with_capacity(count - 1);
    let mut biases = Vec::with_capacity(count - 1);
    for w in sizes.windows(2) {
        weights.push(Matrix::from_vec(w[0], w[1], cur.f64s(w[0] * w[1])?)?);
        biases.push(cur.f64s(w[1])?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after model payload",
            bytes.len() - cur.pos
        )));
    }
    Mlp::from_parts(&sizes, weights, biases, hidden, output)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the binary model to `path` and its JSON sidecar to `<path>.json`.
pub fn save_model(net: &Mlp, path: &Path, extra: serde_json::Value) -> Result<()> {
    std::fs::write(path, write_model(net)).map_err(|e| Error::io(path, e))?;
    let meta = ModelMetadata::describe(net, extra);
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&meta)?;
    std::fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))
}

pub fn load_model(path: &Path) -> Result<Mlp> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), sizes in proptest::collection::vec(1usize..12, 2..5), relu in any::<bool>()) {
            let hidden = if relu { Activation::Relu } else { Activation::Tanh };
            let net = Mlp::init(&sizes, hidden, Activation::Softmax, seed).unwrap();
            let back = read_model(&write_model(&net)).unwrap();
            prop_assert_eq!(&back, &net);
            let same_bits = back.weights().iter().zip(net.weights()).all(|(a, b)| {
                a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits())
            });
            prop_assert!(same_bits);
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let net = Mlp::init(&[3, 2], Activation::Tanh, Activation::Identity, 1).unwrap();
        let mut bytes = write_model(&net);
        assert!(matches!(read_model(&bytes[..bytes.len() - 3]), Err(Error::Length { .. })));
        bytes[0] = b'X';
        assert!(matches!(read_model(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn save_and_load_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let net = Mlp::init(&[4, 3, 2], Activation::Relu, Activation::Identity, 5).unwrap();
        save_model(&net, &path, serde_json::json!({"seed": 5})).unwrap();
        assert_eq!(load_model(&path).unwrap(), net);
        let meta: ModelMetadata =
            serde_json::from_str(&std::fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(meta.layer_sizes, vec![4, 3, 2]);
        assert_eq!(meta.parameter_count, net.parameter_count());
        assert_eq!(meta.extra["seed"], 5);
    }
}
