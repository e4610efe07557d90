//! `RFMW` weights container.
//!
//! Layout: the 4 magic bytes `RFMW`, a little-endian `u32` manifest length,
//! a UTF-8 JSON manifest `[{"name", "shape", "offset"}, ...]`, then the raw
//! little-endian `f32` blobs. `offset` is in bytes from the start of the blob
//! section. Tensors are packed contiguously in manifest order.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RFMW";

/// Named tensors in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    tensors: IndexMap<String, Tensor>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    shape: [usize; 4],
    offset: usize,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::DuplicateName(name));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    /// Replaces an existing tensor, keeping its position.
    pub fn replace(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        match self.tensors.get_mut(name) {
            Some(slot) => {
                *slot = tensor;
                Ok(())
            }
            None => Err(Error::MissingWeight(name.to_string())),
        }
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.shift_remove(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let manifest: Vec<ManifestEntry> = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let entry = ManifestEntry {
                    name: name.clone(),
                    shape: t.shape(),
                    offset,
                };
                offset += t.len() * 4;
                entry
            })
            .collect();
        let manifest = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(8 + manifest.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        for t in self.tensors.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<WeightStore> {
        if bytes.len() < 4 {
            return Err(Error::Truncated(format!("{} bytes, no magic", bytes.len())));
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if &magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        if bytes.len() < 8 {
            return Err(Error::Truncated("missing manifest length".into()));
        }
        let manifest_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let blob_start = 8 + manifest_len;
        if bytes.len() < blob_start {
            return Err(Error::Truncated(format!(
                "manifest declares {manifest_len} bytes, only {} available",
                bytes.len() - 8
            )));
        }
        let manifest: Vec<ManifestEntry> = serde_json::from_slice(&bytes[8..blob_start])
            .map_err(|e| Error::MalformedManifest(e.to_string()))?;
        let blobs = &bytes[blob_start..];

        let mut store = WeightStore::new();
        for (i, entry) in manifest.iter().enumerate() {
            let start = entry.offset;
            let count: usize = entry.shape.iter().product();
            let needed = count * 4;
            // Extent implied by the next offset (or the end of the file for the last tensor).
            let end = match manifest.get(i + 1) {
                Some(next) => next.offset,
                None => blobs.len(),
            };
            if start % 4 != 0 || start > end {
                return Err(Error::MalformedManifest(format!(
                    "tensor `{}` has offset {start}, next boundary {end}",
                    entry.name
                )));
            }
            if end > blobs.len() {
                return Err(Error::Truncated(format!(
                    "tensor `{}` extends to byte {end}, blob section has {}",
                    entry.name,
                    blobs.len()
                )));
            }
            if end - start != needed {
                if i + 1 == manifest.len() && end - start < needed {
                    return Err(Error::Truncated(format!(
                        "tensor `{}` needs {needed} bytes, {} remain",
                        entry.name,
                        end - start
                    )));
                }
                return Err(Error::LengthMismatch {
                    name: entry.name.clone(),
                    expected: needed,
                    found: end - start,
                });
            }
            if i == 0 && start != 0 {
                return Err(Error::MalformedManifest(format!(
                    "first tensor starts at {start}, not 0"
                )));
            }
            let data = blobs[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            store.insert(entry.name.clone(), Tensor::new(entry.shape, data)?)?;
        }
        if manifest.is_empty() && !blobs.is_empty() {
            return Err(Error::MalformedManifest(format!(
                "{} trailing bytes with empty manifest",
                blobs.len()
            )));
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<WeightStore> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> WeightStore {
        let mut s = WeightStore::new();
        s.insert(
            "a.weight",
            Tensor::from_fn([2, 1, 3, 3], |[o, _, y, x]| {
                (o * 9 + y * 3 + x) as f32 - 4.5
            }),
        )
        .unwrap();
        s.insert("a.bias", Tensor::vector(vec![0.25, -1e-30]))
            .unwrap();
        s.insert("nan.is.kept", Tensor::vector(vec![f32::NAN]))
            .unwrap();
        s
    }

    fn manifest_bytes(manifest: &str, blobs: &[u8]) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        out.extend_from_slice(blobs);
        out
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = sample();
        let bytes = s.to_bytes();
        let back = WeightStore::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        for ((n1, t1), (n2, t2)) in s.iter().zip(back.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(t1), bits(t2));
        }
    }

    #[test]
    fn bad_magic() {
        let mut bytes = sample().to_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(
            matches!(WeightStore::from_bytes(&bytes), Err(Error::BadMagic(m)) if &m == b"XXXX")
        );
    }

    #[test]
    fn truncated_blob() {
        let bytes = sample().to_bytes();
        let cut = &bytes[..bytes.len() - 2];
        assert!(matches!(
            WeightStore::from_bytes(cut),
            Err(Error::Truncated(_))
        ));
        assert!(matches!(
            WeightStore::from_bytes(&bytes[..6]),
            Err(Error::Truncated(_))
        ));
    }

    #[test]
    fn shape_product_disagrees_with_blob() {
        let m = r#"[{"name":"x","shape":[1,1,1,3],"offset":0},{"name":"y","shape":[1,1,1,1],"offset":8}]"#;
        let bytes = manifest_bytes(m, &[0u8; 12]);
        match WeightStore::from_bytes(&bytes) {
            Err(Error::LengthMismatch {
                name,
                expected,
                found,
            }) => {
                assert_eq!((name.as_str(), expected, found), ("x", 12, 8));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_are_a_length_error() {
        let m = r#"[{"name":"x","shape":[1,1,1,1],"offset":0}]"#;
        let bytes = manifest_bytes(m, &[0u8; 8]);
        assert!(matches!(
            WeightStore::from_bytes(&bytes),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn duplicate_and_malformed() {
        let m = r#"[{"name":"x","shape":[1,1,1,1],"offset":0},{"name":"x","shape":[1,1,1,1],"offset":4}]"#;
        assert!(matches!(
            WeightStore::from_bytes(&manifest_bytes(m, &[0u8; 8])),
            Err(Error::DuplicateName(n)) if n == "x"
        ));
        let bad = manifest_bytes("[{\"name\":1}]", &[]);
        assert!(matches!(
            WeightStore::from_bytes(&bad),
            Err(Error::MalformedManifest(_))
        ));
        let not_json = manifest_bytes("{{{", &[]);
        assert!(matches!(
            WeightStore::from_bytes(&not_json),
            Err(Error::MalformedManifest(_))
        ));
    }

    proptest! {
        #[test]
        fn arbitrary_stores_round_trip(tensors in prop::collection::vec(
            (prop::array::uniform4(1usize..4), any::<u32>()), 0..6)
        ) {
            let mut s = WeightStore::new();
            for (i, (shape, seed)) in tensors.iter().enumerate() {
                let mut state = *seed;
                let t = Tensor::from_fn(*shape, |_| {
                    state = state.wrapping_mul(1_664_525).wrapping_add(1_013_904_223);
                    f32::from_bits(state)
                });
                s.insert(format!("t{i}"), t).unwrap();
            }
            let bytes = s.to_bytes();
            prop_assert_eq!(WeightStore::from_bytes(&bytes).unwrap().to_bytes(), bytes);
        }
    }
}
