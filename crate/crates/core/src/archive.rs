//! Versioned artifact persistence.
//!
//! Model archives are binary:
//!
//! ```text
//! magic    8 bytes  "CRTARCH\0"
//! version  u32 LE
//! hlen     u32 LE   length of the JSON header
//! header   hlen bytes of UTF-8 JSON (ArchiveHeader)
//! tensors  f64 LE, row-major, in header order
//! ```
//!
//! Structured artifacts (datasets, labels, counterfactuals, reports) are
//! pretty-printed JSON objects `{ "meta": ArtifactMeta, "body": ... }`.
//! Both carry the schema hash they were built against; loading with a
//! different expected hash is refused.

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{hex, Mat, ParamStore};

pub const MAGIC: &[u8; 8] = b"CRTARCH\0";
pub const ARCHIVE_VERSION: u32 = 1;
pub const ARTIFACT_VERSION: u32 = 1;

/// Provenance stamped on every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub kind: String,
    pub format_version: u32,
    pub schema_hash: String,
    pub config_digest: String,
    pub seed: u64,
}

impl ArtifactMeta {
    pub fn new(kind: &str, schema_hash: &str, config_digest: &str, seed: u64) -> Self {
        Self {
            kind: kind.to_owned(),
            format_version: ARTIFACT_VERSION,
            schema_hash: schema_hash.to_owned(),
            config_digest: config_digest.to_owned(),
            seed,
        }
    }

    pub fn check_schema(&self, expected: &str) -> Result<()> {
        if self.schema_hash != expected {
            return Err(Error::SchemaHashMismatch {
                artifact: self.kind.clone(),
                expected: expected.to_owned(),
                found: self.schema_hash.clone(),
            });
        }
        Ok(())
    }

    pub fn check_config(&self, expected_digest: &str) -> Result<()> {
        if self.config_digest != expected_digest {
            return Err(Error::StaleArtifact {
                artifact: self.kind.clone(),
            });
        }
        Ok(())
    }
}

/// SHA-256 of a value's JSON serialization, truncated to 16 bytes.
pub fn digest_of<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config is serializable");
    hex(&Sha256::digest(&json)[..16])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    group: String,
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArchiveHeader {
    meta: ArtifactMeta,
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Parameter groups plus the config that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArchive {
    pub meta: ArtifactMeta,
    pub config: serde_json::Value,
    pub groups: Vec<(String, ParamStore)>,
}

impl ModelArchive {
    pub fn new<C: Serialize>(meta: ArtifactMeta, config: &C) -> Result<Self> {
        Ok(Self {
            meta,
            config: serde_json::to_value(config)?,
            groups: Vec::new(),
        })
    }

    pub fn with_group(mut self, name: &str, store: &ParamStore) -> Self {
        self.groups.push((name.to_owned(), store.clone()));
        self
    }

    pub fn group(&self, name: &str) -> Result<&ParamStore> {
        self.groups
            .iter()
            .find(|(g, _)| g == name)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Archive(format!("missing parameter group `{name}`")))
    }

    pub fn config<C: DeserializeOwned>(&self) -> Result<C> {
        Ok(serde_json::from_value(self.config.clone())?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self
            .groups
            .iter()
            .flat_map(|(g, store)| {
                store.iter().map(move |(name, t)| TensorEntry {
                    group: g.clone(),
                    name: name.to_owned(),
                    rows: t.nrows(),
                    cols: t.ncols(),
                })
            })
            .collect();
        let header = serde_json::to_vec(&ArchiveHeader {
            meta: self.meta.clone(),
            config: self.config.clone(),
            tensors,
        })?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, store) in &self.groups {
            for (_, t) in store.iter() {
                for x in t.iter() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(&mut bytes, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Archive("bad magic".into()));
        }
        let version = read_u32(&mut bytes)?;
        if version != ARCHIVE_VERSION {
            return Err(Error::Archive(format!("unsupported archive version {version}")));
        }
        let hlen = read_u32(&mut bytes)? as usize;
        if bytes.len() < hlen {
            return Err(Error::Archive("truncated header".into()));
        }
        let header: ArchiveHeader = serde_json::from_slice(&bytes[..hlen])?;
        bytes = &bytes[hlen..];

        let mut groups: Vec<(String, Vec<String>, Vec<Mat>)> = Vec::new();
        for e in header.tensors {
            let mut data = Vec::with_capacity(e.rows * e.cols);
            for _ in 0..e.rows * e.cols {
                let mut b = [0u8; 8];
                read_exact(&mut bytes, &mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            let t = Mat::from_shape_vec((e.rows, e.cols), data).map_err(|err| Error::Archive(err.to_string()))?;
            match groups.last_mut() {
                Some((g, names, ts)) if *g == e.group => {
                    names.push(e.name);
                    ts.push(t);
                }
                _ => groups.push((e.group, vec![e.name], vec![t])),
            }
        }
        if !bytes.is_empty() {
            return Err(Error::Archive("trailing bytes".into()));
        }
        Ok(Self {
            meta: header.meta,
            config: header.config,
            groups: groups
                .into_iter()
                .map(|(g, n, t)| (g, ParamStore::from_parts(n, t)))
                .collect(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_owned()));
        }
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Load and refuse on a schema-hash mismatch.
    pub fn load_checked(path: impl AsRef<Path>, schema_hash: &str) -> Result<Self> {
        let a = Self::load(path)?;
        a.meta.check_schema(schema_hash)?;
        Ok(a)
    }
}

fn read_exact(bytes: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    bytes
        .read_exact(buf)
        .map_err(|_| Error::Archive("unexpected end of archive".into()))
}

fn read_u32(bytes: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(bytes, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[derive(Serialize, Deserialize)]
struct JsonArtifact<T> {
    meta: ArtifactMeta,
    body: T,
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, meta: &ArtifactMeta, body: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(&JsonArtifact {
        meta: meta.clone(),
        body,
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<(ArtifactMeta, T)> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_owned()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let a: JsonArtifact<T> = serde_json::from_str(&text)?;
    if a.meta.format_version != ARTIFACT_VERSION {
        return Err(Error::Archive(format!(
            "unsupported artifact version {} in {}",
            a.meta.format_version,
            path.display()
        )));
    }
    Ok((a.meta, a.body))
}
