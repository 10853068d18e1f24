//! Exact flat top-k cosine retrieval over embedded LCA activities.
//!
//! # File format
//!
//! All integers are little-endian `u32`.
//!
//! ```text
//! magic        8 bytes  "ECLKIDX\0"
//! version      u32      1
//! dim          u32
//! count        u32
//! fp_len       u32
//! fingerprint  fp_len bytes, UTF-8
//! checksum     u32      CRC-32 of every other byte in the file
//! ids          count x (u32 length + UTF-8 bytes)
//! vectors      count x dim x f32 (IEEE-754, little-endian)
//! ```

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::embedding::{EmbedError, Embedding, EmbeddingBackend};
use crate::model::{ActivityId, Candidate, LcaActivity};
use crate::scalar::{dot, Scalar};

pub const INDEX_MAGIC: &[u8; 8] = b"ECLKIDX\0";
pub const INDEX_VERSION: u32 = 1;

const BUILD_CHUNK: usize = 64;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index from zero activities")]
    Empty,
    #[error("duplicate activity id {0}")]
    DuplicateId(ActivityId),
    #[error("embedding failed for activity {activity_id}: {source}")]
    Embed {
        activity_id: ActivityId,
        #[source]
        source: EmbedError,
    },
    #[error("query dimension {found} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding for {0} is not unit length")]
    NotNormalized(ActivityId),
    #[error("index file integrity error: {0}")]
    Integrity(String),
    #[error("index file i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry<T> {
    pub activity_id: ActivityId,
    pub embedding: Embedding<T>,
}

/// Normalized activity embeddings plus the fingerprint of the backend that
/// produced them. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityIndex<T> {
    entries: Vec<IndexEntry<T>>,
    dim: usize,
    fingerprint: String,
}

/// Text embedded for an activity: name, a single newline, description.
pub fn activity_text(activity: &LcaActivity) -> String {
    format!("{}\n{}", activity.name, activity.description)
}

impl<T: Scalar> ActivityIndex<T> {
    /// Assembles an index from precomputed entries, checking invariants.
    pub fn from_entries(
        entries: Vec<IndexEntry<T>>,
        fingerprint: impl Into<String>,
    ) -> Result<Self, IndexError> {
        let first = entries.first().ok_or(IndexError::Empty)?;
        let dim = first.embedding.dim();
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(&e.activity_id) {
                return Err(IndexError::DuplicateId(e.activity_id.clone()));
            }
            if e.embedding.dim() != dim {
                return Err(IndexError::DimensionMismatch {
                    expected: dim,
                    found: e.embedding.dim(),
                });
            }
            if !e.embedding.is_normalized() {
                return Err(IndexError::NotNormalized(e.activity_id.clone()));
            }
        }
        Ok(Self {
            entries,
            dim,
            fingerprint: fingerprint.into(),
        })
    }

    pub fn entries(&self) -> &[IndexEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn contains(&self, id: &ActivityId) -> bool {
        self.entries.iter().any(|e| &e.activity_id == id)
    }

    /// The `k` best activities for `query`, best first. Ties go to the
    /// smaller activity id. The query need not be normalized.
    pub fn top_k(
        &self,
        query: &Embedding<T>,
        k: usize,
    ) -> Result<Vec<(ActivityId, T)>, IndexError> {
        if query.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                found: query.dim(),
            });
        }
        let q = query
            .clone()
            .into_normalized()
            .map_err(|source| IndexError::Embed {
                activity_id: ActivityId::from("<query>"),
                source,
            })?;
        let mut scored: Vec<(usize, T)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (i, clamp_unit(dot(q.values(), e.embedding.values()))))
            .collect();
        let order = |a: &(usize, T), b: &(usize, T)| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| {
                    self.entries[a.0]
                        .activity_id
                        .cmp(&self.entries[b.0].activity_id)
                })
        };
        let k = k.min(scored.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);
        Ok(scored
            .into_iter()
            .map(|(i, s)| (self.entries[i].activity_id.clone(), s))
            .collect())
    }

    /// [`Self::top_k`] with scores widened to `f64` candidates.
    pub fn candidates(&self, query: &Embedding<T>, k: usize) -> Result<Vec<Candidate>, IndexError> {
        Ok(self
            .top_k(query, k)?
            .into_iter()
            .map(|(activity_id, s)| Candidate {
                activity_id,
                score: s.to_f64_lossless(),
            })
            .collect())
    }
}

fn clamp_unit<T: Scalar>(s: T) -> T {
    s.max(-T::one()).min(T::one())
}

/// Embeds every activity (name + newline + description) in input order.
pub fn build_index<T: Scalar>(
    activities: &[LcaActivity],
    backend: &dyn EmbeddingBackend<T>,
) -> Result<ActivityIndex<T>, IndexError> {
    if activities.is_empty() {
        return Err(IndexError::Empty);
    }
    let mut entries = Vec::with_capacity(activities.len());
    for chunk in activities.chunks(BUILD_CHUNK) {
        let texts: Vec<String> = chunk.iter().map(activity_text).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let embeddings = backend.embed(&refs).map_err(|source| {
            let at = match source {
                EmbedError::EmptyText { index } => index,
                _ => 0,
            };
            IndexError::Embed {
                activity_id: chunk[at].id.clone(),
                source,
            }
        })?;
        entries.extend(
            chunk
                .iter()
                .zip(embeddings)
                .map(|(a, embedding)| IndexEntry {
                    activity_id: a.id.clone(),
                    embedding,
                }),
        );
    }
    ActivityIndex::from_entries(entries, backend.fingerprint())
}

/// Result of loading an index for use with a particular live backend.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedIndex {
    pub index: ActivityIndex<f32>,
    /// Set when the index was built by a different backend than the caller's.
    pub fingerprint_warning: Option<FingerprintMismatch>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FingerprintMismatch {
    pub stored: String,
    pub live: String,
}

impl std::fmt::Display for FingerprintMismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "index was built with `{}` but the live embedding backend is `{}`; scores will be meaningless",
            self.stored, self.live
        )
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn len_u32(n: usize, what: &str) -> Result<u32, IndexError> {
    u32::try_from(n).map_err(|_| IndexError::Integrity(format!("{what} too large: {n}")))
}

/// Serializes to the versioned binary format described in the module docs.
pub fn encode_index(index: &ActivityIndex<f32>) -> Result<Vec<u8>, IndexError> {
    let mut header = Vec::new();
    header.extend_from_slice(INDEX_MAGIC);
    put_u32(&mut header, INDEX_VERSION);
    put_u32(&mut header, len_u32(index.dim, "dim")?);
    put_u32(&mut header, len_u32(index.len(), "count")?);
    put_u32(
        &mut header,
        len_u32(index.fingerprint.len(), "fingerprint")?,
    );
    header.extend_from_slice(index.fingerprint.as_bytes());

    let mut body = Vec::with_capacity(index.len() * (index.dim * 4 + 8));
    for e in &index.entries {
        put_u32(
            &mut body,
            len_u32(e.activity_id.as_str().len(), "activity id")?,
        );
        body.extend_from_slice(e.activity_id.as_str().as_bytes());
    }
    for e in &index.entries {
        for v in e.embedding.values() {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&header);
    hasher.update(&body);
    let mut out = header;
    put_u32(&mut out, hasher.finalize());
    out.extend_from_slice(&body);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                IndexError::Integrity(format!("truncated at byte {} (wanted {n} more)", self.pos))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self, n: usize) -> Result<String, IndexError> {
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| IndexError::Integrity("string is not valid UTF-8".into()))
    }
}

pub fn decode_index(bytes: &[u8]) -> Result<ActivityIndex<f32>, IndexError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != INDEX_MAGIC {
        return Err(IndexError::Integrity("bad magic".into()));
    }
    let version = r.u32()?;
    if version != INDEX_VERSION {
        return Err(IndexError::Integrity(format!(
            "unsupported version {version}"
        )));
    }
    let dim = r.u32()? as usize;
    let count = r.u32()? as usize;
    let fp_len = r.u32()? as usize;
    let fingerprint = r.string(fp_len)?;
    let header_end = r.pos;
    let stored_crc = r.u32()?;

    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&bytes[..header_end]);
    hasher.update(&bytes[r.pos..]);
    if hasher.finalize() != stored_crc {
        return Err(IndexError::Integrity("checksum mismatch".into()));
    }

    let mut ids = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let n = r.u32()? as usize;
        ids.push(ActivityId(r.string(n)?));
    }
    let mut entries = Vec::with_capacity(ids.len());
    for activity_id in ids {
        let raw = r.take(
            dim.checked_mul(4)
                .ok_or_else(|| IndexError::Integrity("dim overflow".into()))?,
        )?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let embedding = Embedding::new(values).map_err(|e| IndexError::Integrity(e.to_string()))?;
        entries.push(IndexEntry {
            activity_id,
            embedding,
        });
    }
    if r.pos != bytes.len() {
        return Err(IndexError::Integrity(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let index = ActivityIndex::from_entries(entries, fingerprint)?;
    if index.dim != dim {
        return Err(IndexError::Integrity(
            "dim header disagrees with vectors".into(),
        ));
    }
    Ok(index)
}

pub fn save_index(index: &ActivityIndex<f32>, path: &Path) -> Result<(), IndexError> {
    let bytes = encode_index(index)?;
    fs::write(path, bytes).map_err(|source| IndexError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_index(path: &Path) -> Result<ActivityIndex<f32>, IndexError> {
    let bytes = fs::read(path).map_err(|source| IndexError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_index(&bytes)
}

/// Loads an index and compares its fingerprint with the live backend's.
pub fn load_index_for(path: &Path, live_fingerprint: &str) -> Result<LoadedIndex, IndexError> {
    let index = load_index(path)?;
    let fingerprint_warning =
        (index.fingerprint() != live_fingerprint).then(|| FingerprintMismatch {
            stored: index.fingerprint().to_owned(),
            live: live_fingerprint.to_owned(),
        });
    Ok(LoadedIndex {
        index,
        fingerprint_warning,
    })
}
