//! Shared binary container for model checkpoints and result batches.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "SVDA"
//! version u32      1
//! count   u32      number of entries
//! entry:  u16      name length
//!         ..       name bytes (UTF-8)
//!         u8       dtype tag: 0 = f32, 1 = raw bytes, 2 = u32
//!         u8       rank (number of dimensions)
//!         rank*u32 dimensions
//!         ..       payload, row-major, little-endian
//! ```
//!
//! Writes go to a sibling temp file first and rename into place, so a
//! crash never leaves a half-written artifact under the final name.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"SVDA";
pub const VERSION: u32 = 1;

// ── Errors ──────────────────────────────────────────────────────────────

#[derive(Debug)]
pub enum ContainerError {
    Io(std::io::Error),
    /// File does not start with the container magic.
    BadMagic { got: [u8; 4] },
    /// Major version is unknown to this reader.
    BadVersion { got: u32 },
    /// Reader hit end-of-file inside a structure.
    Truncated { while_reading: &'static str },
    /// Unknown dtype tag in an entry header.
    BadDtype { name: String, tag: u8 },
    /// Entry name is not valid UTF-8.
    BadName,
    /// Declared dimensions overflow or disagree with the payload.
    BadDims { name: String, dims: Vec<u32> },
    /// An expected entry is missing.
    MissingEntry { name: String },
    /// An entry exists but with the wrong dtype or shape.
    EntryMismatch { name: String, detail: String },
}

impl std::fmt::Display for ContainerError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ContainerError::Io(e) => write!(f, "i/o error: {e}"),
            ContainerError::BadMagic { got } => {
                write!(f, "bad magic {:?}, expected {:?}", got, MAGIC)
            }
            ContainerError::BadVersion { got } => {
                write!(f, "unsupported container version {got}, expected {VERSION}")
            }
            ContainerError::Truncated { while_reading } => {
                write!(f, "file truncated while reading {while_reading}")
            }
            ContainerError::BadDtype { name, tag } => {
                write!(f, "entry '{name}' has unknown dtype tag {tag}")
            }
            ContainerError::BadName => write!(f, "entry name is not valid UTF-8"),
            ContainerError::BadDims { name, dims } => {
                write!(f, "entry '{name}' has invalid dims {dims:?}")
            }
            ContainerError::MissingEntry { name } => {
                write!(f, "container is missing entry '{name}'")
            }
            ContainerError::EntryMismatch { name, detail } => {
                write!(f, "entry '{name}': {detail}")
            }
        }
    }
}

impl std::error::Error for ContainerError {}

impl From<std::io::Error> for ContainerError {
    fn from(e: std::io::Error) -> Self {
        ContainerError::Io(e)
    }
}

// ── Entries ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub enum EntryData {
    F32(Vec<f32>),
    Bytes(Vec<u8>),
    U32(Vec<u32>),
}

impl EntryData {
    fn tag(&self) -> u8 {
        match self {
            EntryData::F32(_) => 0,
            EntryData::Bytes(_) => 1,
            EntryData::U32(_) => 2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            EntryData::F32(v) => v.len(),
            EntryData::Bytes(v) => v.len(),
            EntryData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: EntryData,
}

impl Entry {
    pub fn f32(name: &str, dims: &[usize], data: Vec<f32>) -> Self {
        Entry {
            name: name.to_string(),
            dims: dims.iter().map(|&d| d as u32).collect(),
            data: EntryData::F32(data),
        }
    }

    pub fn bytes(name: &str, data: Vec<u8>) -> Self {
        let n = data.len() as u32;
        Entry { name: name.to_string(), dims: vec![n], data: EntryData::Bytes(data) }
    }

    pub fn u32s(name: &str, data: Vec<u32>) -> Self {
        let n = data.len() as u32;
        Entry { name: name.to_string(), dims: vec![n], data: EntryData::U32(data) }
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }
}

/// An ordered set of named entries; order is preserved on disk so writes
/// are byte-reproducible.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub entries: Vec<Entry>,
}

impl Container {
    pub fn new() -> Self {
        Container { entries: Vec::new() }
    }

    pub fn push(&mut self, entry: Entry) {
        self.entries.push(entry);
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Entry, ContainerError> {
        self.get(name).ok_or_else(|| ContainerError::MissingEntry { name: name.to_string() })
    }

    pub fn require_f32(&self, name: &str) -> Result<(&[u32], &[f32]), ContainerError> {
        let e = self.require(name)?;
        match &e.data {
            EntryData::F32(v) => Ok((&e.dims, v)),
            other => Err(ContainerError::EntryMismatch {
                name: name.to_string(),
                detail: format!("expected f32 data, found tag {}", other.tag()),
            }),
        }
    }

    pub fn require_bytes(&self, name: &str) -> Result<&[u8], ContainerError> {
        let e = self.require(name)?;
        match &e.data {
            EntryData::Bytes(v) => Ok(v),
            other => Err(ContainerError::EntryMismatch {
                name: name.to_string(),
                detail: format!("expected byte data, found tag {}", other.tag()),
            }),
        }
    }

    pub fn require_u32(&self, name: &str) -> Result<&[u32], ContainerError> {
        let e = self.require(name)?;
        match &e.data {
            EntryData::U32(v) => Ok(v),
            other => Err(ContainerError::EntryMismatch {
                name: name.to_string(),
                detail: format!("expected u32 data, found tag {}", other.tag()),
            }),
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), ContainerError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            let name = e.name.as_bytes();
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&[e.data.tag(), e.dims.len() as u8])?;
            for &d in &e.dims {
                w.write_all(&d.to_le_bytes())?;
            }
            match &e.data {
                EntryData::F32(v) => {
                    for &x in v {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
                EntryData::Bytes(v) => w.write_all(v)?,
                EntryData::U32(v) => {
                    for &x in v {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, ContainerError> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(ContainerError::BadMagic { got: magic });
        }
        let version = read_u32(r, "version")?;
        if version != VERSION {
            return Err(ContainerError::BadVersion { got: version });
        }
        let count = read_u32(r, "entry count")? as usize;
        let mut entries = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = read_u16(r, "name length")? as usize;
            let mut name_buf = vec![0u8; name_len];
            read_exact(r, &mut name_buf, "entry name")?;
            let name = String::from_utf8(name_buf).map_err(|_| ContainerError::BadName)?;
            let mut head = [0u8; 2];
            read_exact(r, &mut head, "entry header")?;
            let (tag, rank) = (head[0], head[1] as usize);
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(read_u32(r, "entry dims")?);
            }
            let numel = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
            let numel = match numel {
                Some(n) => n,
                None => return Err(ContainerError::BadDims { name, dims }),
            };
            let data = match tag {
                0 => {
                    let mut buf = vec![0u8; numel * 4];
                    read_exact(r, &mut buf, "f32 payload")?;
                    EntryData::F32(
                        buf.chunks_exact(4)
                            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                            .collect(),
                    )
                }
                1 => {
                    let mut buf = vec![0u8; numel];
                    read_exact(r, &mut buf, "byte payload")?;
                    EntryData::Bytes(buf)
                }
                2 => {
                    let mut buf = vec![0u8; numel * 4];
                    read_exact(r, &mut buf, "u32 payload")?;
                    EntryData::U32(
                        buf.chunks_exact(4)
                            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                            .collect(),
                    )
                }
                t => return Err(ContainerError::BadDtype { name, tag: t }),
            };
            entries.push(Entry { name, dims, data });
        }
        Ok(Container { entries })
    }

    /// Writes atomically: temp file in the same directory, then rename.
    pub fn save(&self, path: &Path) -> Result<(), ContainerError> {
        let tmp = tmp_sibling(path);
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            self.write_to(&mut w)?;
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ContainerError> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

/// Temp-file name next to the target so the rename stays on one filesystem.
pub fn tmp_sibling(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &'static str) -> Result<(), ContainerError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            ContainerError::Truncated { while_reading: what }
        } else {
            ContainerError::Io(e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R, what: &'static str) -> Result<u32, ContainerError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u16<R: Read>(r: &mut R, what: &'static str) -> Result<u16, ContainerError> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b, what)?;
    Ok(u16::from_le_bytes(b))
}

// ── Key-value metadata helpers ──────────────────────────────────────────

/// Serializes string pairs as `key=value` lines (sorted by key) for a
/// bytes entry, so metadata round-trips byte-identically.
pub fn meta_to_bytes(pairs: &[(String, String)]) -> Vec<u8> {
    let mut sorted: Vec<&(String, String)> = pairs.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out = String::new();
    for (k, v) in sorted {
        out.push_str(k);
        out.push('=');
        out.push_str(v);
        out.push('\n');
    }
    out.into_bytes()
}

pub fn meta_from_bytes(data: &[u8]) -> Result<Vec<(String, String)>, ContainerError> {
    let text = std::str::from_utf8(data).map_err(|_| ContainerError::BadName)?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                return Err(ContainerError::EntryMismatch {
                    name: "meta".to_string(),
                    detail: format!("metadata line without '=': {line}"),
                })
            }
        }
    }
    Ok(out)
}

pub fn meta_get<'a>(pairs: &'a [(String, String)], key: &str) -> Option<&'a str> {
    pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

// ── Tests ───────────────────────────────────────────────────────────────
