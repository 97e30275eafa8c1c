//! Flat parameter files: a plain-text header followed by raw `f64` LE data.
//!
//! ```text
//! megsim-params 1
//! name = policy
//! shape = 3x64x64x4
//! len = 4676
//! checksum = <sha256 of the data bytes, hex>
//!
//! <len × 8 bytes>
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &str = "megsim-params 1";

#[derive(Debug, Clone, PartialEq)]
pub struct ParamFile {
    pub name: String,
    pub shape: String,
    pub values: Vec<f64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ParamFile {
    pub fn new(name: impl Into<String>, shape: impl Into<String>, values: Vec<f64>) -> Self {
        ParamFile {
            name: name.into(),
            shape: shape.into(),
            values,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let data: Vec<u8> = self.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        let mut out = format!(
            "{MAGIC}\nname = {}\nshape = {}\nlen = {}\nchecksum = {}\n\n",
            self.name,
            self.shape,
            self.values.len(),
            sha256_hex(&data)
        )
        .into_bytes();
        out.extend_from_slice(&data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            what: "parameter file",
            reason: reason.to_string(),
        };
        let split = bytes
            .windows(2)
            .position(|w| w == b"\n\n")
            .ok_or_else(|| bad("missing header terminator"))?;
        let header =
            std::str::from_utf8(&bytes[..split]).map_err(|_| bad("header is not UTF-8"))?;
        let data = &bytes[split + 2..];
        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("bad magic line"));
        }
        let mut fields = std::collections::HashMap::new();
        for line in lines {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| bad("bad header line"))?;
            fields.insert(k, v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| bad(&format!("missing `{k}`")))
        };
        let len: usize = get("len")?.parse().map_err(|_| bad("bad len"))?;
        if data.len() != len * 8 {
            return Err(bad("data length does not match header"));
        }
        let name = get("name")?.to_string();
        if sha256_hex(data) != get("checksum")? {
            return Err(Error::Checksum(name));
        }
        let values = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(ParamFile {
            name,
            shape: get("shape")?.to_string(),
            values,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        ParamFile::from_bytes(&bytes)
    }
}

/// Renders MLP layer sizes as `a x b x c` shape text.
pub fn shape_of(sizes: &[usize]) -> String {
    sizes
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join("x")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip(values in proptest::collection::vec(-1e6f64..1e6, 0..64)) {
            let f = ParamFile::new("net", "2x3", values);
            prop_assert_eq!(ParamFile::from_bytes(&f.to_bytes()).unwrap(), f);
        }
    }

    #[test]
    fn tampering_is_detected() {
        let mut bytes = ParamFile::new("net", "1", vec![1.0, 2.0]).to_bytes();
        *bytes.last_mut().unwrap() ^= 1;
        assert!(matches!(
            ParamFile::from_bytes(&bytes),
            Err(Error::Checksum(_))
        ));
        assert!(ParamFile::from_bytes(b"garbage").is_err());
    }
}
