//! EMB1 embedding files.
//!
//! Little-endian layout:
//!
//! ```text
//! "EMB1" | u32 dim | u32 count | u32 n_classes | count x ( u32 class_id | dim x f32 )
//! ```
//!
//! `n_classes` is the number of distinct class ids among the records. An
//! optional sidecar `<path>.labels.txt` holds `class_id<TAB>name` lines.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use protoshot_core::EmbeddingSet;

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const HEADER_LEN: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("bad magic {found:?} at byte 0, expected \"EMB1\"")]
    BadMagic { found: [u8; 4] },
    #[error("truncated {what} at byte {offset}: need {needed} more bytes, {available} available")]
    Truncated {
        what: &'static str,
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("dimension must be positive (header byte 4)")]
    ZeroDim,
    #[error("non-finite value in record {record}, component {component} at byte {offset}")]
    NonFinite {
        record: usize,
        component: usize,
        offset: usize,
    },
    #[error("header declares {declared} classes (byte 12) but records use {actual}")]
    ClassCount { declared: u32, actual: usize },
    #[error("{extra} trailing bytes after the last record at byte {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("record {record} has {actual} components, expected {expected}")]
    DimensionMismatch {
        record: usize,
        expected: usize,
        actual: usize,
    },
    #[error("{count} exceeds the u32 range of the header")]
    TooLarge { count: usize },
    #[error("labels file line {line}: {reason}")]
    Labels { line: usize, reason: String },
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(FormatError::Truncated {
                what,
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8]) -> Result<EmbeddingSet, FormatError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic {
            found: [magic[0], magic[1], magic[2], magic[3]],
        });
    }
    let dim = cur.u32("header")? as usize;
    let count = cur.u32("header")? as usize;
    let declared = cur.u32("header")?;
    if dim == 0 {
        return Err(FormatError::ZeroDim);
    }

    let mut set = EmbeddingSet::new(dim).expect("dim is positive");
    let mut vector = vec![0f32; dim];
    for record in 0..count {
        let class_id = cur.u32("record class id")?;
        let start = cur.pos;
        let payload = cur.take(4 * dim, "record vector")?;
        for (component, (v, b)) in vector.iter_mut().zip(payload.chunks_exact(4)).enumerate() {
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            if !v.is_finite() {
                return Err(FormatError::NonFinite {
                    record,
                    component,
                    offset: start + 4 * component,
                });
            }
        }
        set.push(&vector, class_id)
            .expect("length and finiteness checked above");
    }
    if cur.pos != bytes.len() {
        return Err(FormatError::TrailingBytes {
            offset: cur.pos,
            extra: bytes.len() - cur.pos,
        });
    }
    if declared as usize != set.n_classes() {
        return Err(FormatError::ClassCount {
            declared,
            actual: set.n_classes(),
        });
    }
    Ok(set)
}

fn header_u32(count: usize) -> Result<[u8; 4], FormatError> {
    u32::try_from(count)
        .map(u32::to_le_bytes)
        .map_err(|_| FormatError::TooLarge { count })
}

pub fn encode(set: &EmbeddingSet) -> Result<Vec<u8>, FormatError> {
    let mut out = Vec::with_capacity(HEADER_LEN + set.len() * (4 + 4 * set.dim()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&header_u32(set.dim())?);
    out.extend_from_slice(&header_u32(set.len())?);
    out.extend_from_slice(&header_u32(set.n_classes())?);
    for (vector, class_id) in set.records() {
        out.extend_from_slice(&class_id.to_le_bytes());
        for v in vector {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Encodes raw records, rejecting bad ones before any byte is produced.
pub fn encode_records(dim: usize, records: &[(Vec<f32>, u32)]) -> Result<Vec<u8>, FormatError> {
    if dim == 0 {
        return Err(FormatError::ZeroDim);
    }
    let mut set = EmbeddingSet::new(dim).expect("dim is positive");
    for (record, (v, class_id)) in records.iter().enumerate() {
        if v.len() != dim {
            return Err(FormatError::DimensionMismatch {
                record,
                expected: dim,
                actual: v.len(),
            });
        }
        if let Some(component) = v.iter().position(|x| !x.is_finite()) {
            return Err(FormatError::NonFinite {
                record,
                component,
                offset: HEADER_LEN + record * (4 + 4 * dim) + 4 + 4 * component,
            });
        }
        set.push(v, *class_id).expect("validated above");
    }
    encode(&set)
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn load_embedding_set(path: &Path) -> Result<EmbeddingSet, FormatError> {
    decode(&fs::read(path).map_err(io_err(path))?)
}

pub fn save_embedding_set(set: &EmbeddingSet, path: &Path) -> Result<(), FormatError> {
    let bytes = encode(set)?;
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn labels_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".labels.txt");
    PathBuf::from(s)
}

pub fn parse_labels(text: &str) -> Result<BTreeMap<u32, String>, FormatError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: &str| FormatError::Labels {
            line: i + 1,
            reason: reason.to_string(),
        };
        let (id, name) = line
            .split_once('\t')
            .ok_or_else(|| err("missing tab separator"))?;
        let id: u32 = id
            .trim()
            .parse()
            .map_err(|_| err("class id is not a u32"))?;
        if out.insert(id, name.to_string()).is_some() {
            return Err(err("duplicate class id"));
        }
    }
    Ok(out)
}

/// Reads the labels sidecar of `path` if there is one.
pub fn load_labels(path: &Path) -> Result<Option<BTreeMap<u32, String>>, FormatError> {
    let sidecar = labels_path(path);
    match fs::read_to_string(&sidecar) {
        Ok(text) => parse_labels(&text).map(Some),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(&sidecar)(e)),
    }
}

pub fn save_labels(path: &Path, labels: &BTreeMap<u32, String>) -> Result<(), FormatError> {
    let sidecar = labels_path(path);
    let mut text = String::new();
    for (id, name) in labels {
        text.push_str(&format!("{id}\t{name}\n"));
    }
    fs::write(&sidecar, text).map_err(io_err(&sidecar))
}
