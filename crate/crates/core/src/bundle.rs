//! On-disk tensor bundles: `<stem>.json` header plus `<stem>.bin` payload of
//! interleaved little-endian (re, im) f64 pairs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::tensor::{Axis, CTensor, C64};

pub const DTYPE: &str = "complex128";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BundleHeader {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub axes: Vec<Axis>,
    pub byte_order: String,
    #[serde(default)]
    pub meta: Map<String, Value>,
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn header_path(stem: &Path) -> PathBuf {
    with_ext(stem, "json")
}

pub fn payload_path(stem: &Path) -> PathBuf {
    with_ext(stem, "bin")
}

pub fn encode_payload(x: &CTensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 * x.len());
    for v in x.data() {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    buf
}

pub fn decode(header: &BundleHeader, payload: &[u8]) -> Result<CTensor> {
    if header.dtype != DTYPE {
        return Err(Error::UnknownDtype(header.dtype.clone()));
    }
    if header.byte_order != "little" {
        return Err(Error::ByteOrder(header.byte_order.clone()));
    }
    let n: usize = header.shape.iter().product();
    if payload.len() != 16 * n {
        return Err(Error::LengthMismatch { expected: 16 * n, found: payload.len() });
    }
    let data = payload
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            C64::new(re, im)
        })
        .collect();
    CTensor::new_unchecked_finite(header.axes.clone(), header.shape.clone(), data)
}

pub fn header_for(x: &CTensor, meta: Map<String, Value>) -> BundleHeader {
    BundleHeader {
        dtype: DTYPE.to_string(),
        shape: x.shape().to_vec(),
        axes: x.axes().to_vec(),
        byte_order: "little".to_string(),
        meta,
    }
}

/// Writes `<stem>.json` and `<stem>.bin`.
pub fn save_bundle(x: &CTensor, stem: impl AsRef<Path>, meta: Map<String, Value>) -> Result<()> {
    let stem = stem.as_ref();
    if let Some(dir) = stem.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let header = header_for(x, meta);
    let mut text = serde_json::to_string_pretty(&header)?;
    text.push('\n');
    fs::write(header_path(stem), text)?;
    fs::write(payload_path(stem), encode_payload(x))?;
    Ok(())
}

pub fn load_bundle(stem: impl AsRef<Path>) -> Result<(CTensor, Map<String, Value>)> {
    let stem = stem.as_ref();
    let header: BundleHeader = serde_json::from_str(&fs::read_to_string(header_path(stem))?)?;
    let payload = fs::read(payload_path(stem))?;
    let tensor = decode(&header, &payload)?;
    Ok((tensor, header.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(shape: Vec<usize>) -> BundleHeader {
        let axes = [Axis::Coil, Axis::Kx, Axis::Ky, Axis::Kz][..shape.len()].to_vec();
        BundleHeader { dtype: DTYPE.into(), shape, axes, byte_order: "little".into(), meta: Map::new() }
    }

    #[test]
    fn length_checks() {
        let h = header(vec![2, 3]);
        assert!(decode(&h, &[0u8; 96]).is_ok());
        assert!(matches!(decode(&h, &[0u8; 80]), Err(Error::LengthMismatch { expected: 96, found: 80 })));
        assert!(matches!(decode(&h, &[0u8; 95]), Err(Error::LengthMismatch { .. })));
        let mut bad = h.clone();
        bad.dtype = "float32".into();
        assert!(matches!(decode(&bad, &[0u8; 96]), Err(Error::UnknownDtype(_))));
        let mut be = h;
        be.byte_order = "big".into();
        assert!(matches!(decode(&be, &[0u8; 96]), Err(Error::ByteOrder(_))));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("x");
        let x = CTensor::new(vec![Axis::Kx], vec![3], vec![C64::new(1.0, 2.0); 3]).unwrap();
        save_bundle(&x, &stem, Map::new()).unwrap();
        let mut bytes = fs::read(payload_path(&stem)).unwrap();
        bytes.pop();
        fs::write(payload_path(&stem), bytes).unwrap();
        assert!(matches!(load_bundle(&stem), Err(Error::LengthMismatch { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn save_load_bit_exact(vals in proptest::collection::vec(any::<(f64, f64)>(), 128)) {
            let dir = tempfile::tempdir().unwrap();
            let stem = dir.path().join("t");
            let data: Vec<C64> = vals.iter().map(|&(a, b)| C64::new(a, b)).collect();
            let x = CTensor::new_unchecked_finite(
                vec![Axis::Coil, Axis::Kx, Axis::Ky, Axis::Kz], vec![2, 4, 4, 4], data).unwrap();
            let mut meta = Map::new();
            meta.insert("k".into(), Value::from(3));
            save_bundle(&x, &stem, meta.clone()).unwrap();
            let (y, m) = load_bundle(&stem).unwrap();
            prop_assert_eq!(m, meta);
            for (a, b) in x.data().iter().zip(y.data()) {
                prop_assert_eq!(a.re.to_bits(), b.re.to_bits());
                prop_assert_eq!(a.im.to_bits(), b.im.to_bits());
            }
        }
    }
}
