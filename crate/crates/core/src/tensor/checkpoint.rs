//! Versioned binary parameter container.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic        8 bytes  "DMXCKPT\0"
//! version      u32
//! global step  u64
//! meta_len     u32, then meta_len bytes of UTF-8 (free-form, JSON by convention)
//! count        u32
//! count × { name_len u32, name bytes, ndim u32, ndim × u64 dims, Π dims × f64 }
//! crc32        u32 over every preceding byte
//! ```

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DMXCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub metadata: String,
    entries: BTreeMap<String, Tensor>,
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl Checkpoint {
    pub fn new(step: u64) -> Self {
        Self {
            step,
            ..Self::default()
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.write_u32::<LittleEndian>(CHECKPOINT_VERSION).unwrap();
        buf.write_u64::<LittleEndian>(self.step).unwrap();
        buf.write_u32::<LittleEndian>(self.metadata.len() as u32).unwrap();
        buf.extend_from_slice(self.metadata.as_bytes());
        buf.write_u32::<LittleEndian>(self.entries.len() as u32).unwrap();
        for (name, t) in &self.entries {
            buf.write_u32::<LittleEndian>(name.len() as u32).unwrap();
            buf.extend_from_slice(name.as_bytes());
            buf.write_u32::<LittleEndian>(t.shape().len() as u32).unwrap();
            for &d in t.shape() {
                buf.write_u64::<LittleEndian>(d as u64).unwrap();
            }
            for &v in t.data() {
                buf.write_f64::<LittleEndian>(v).unwrap();
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.write_u32::<LittleEndian>(crc).unwrap();
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() + 4 + 8 + 4 + 4 + 4 {
            return Err(fmt_err("file too short to be a checkpoint"));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(fmt_err("bad magic bytes"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(fmt_err("checksum mismatch (truncated or corrupt file)"));
        }
        let mut cur = Cursor::new(&body[8..]);
        let truncated = |_| fmt_err("unexpected end of data");
        let version = cur.read_u32::<LittleEndian>().map_err(truncated)?;
        if version != CHECKPOINT_VERSION {
            return Err(fmt_err(format!(
                "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let step = cur.read_u64::<LittleEndian>().map_err(truncated)?;
        let meta_len = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let metadata = read_string(&mut cur, meta_len)?;
        let count = cur.read_u32::<LittleEndian>().map_err(truncated)?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let name_len = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
            let name = read_string(&mut cur, name_len)?;
            let ndim = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
            if ndim > 8 {
                return Err(fmt_err(format!("{name}: implausible rank {ndim}")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(cur.read_u64::<LittleEndian>().map_err(truncated)? as usize);
            }
            let len: usize = shape.iter().product();
            let remaining = body.len() - 8 - cur.position() as usize;
            if len.saturating_mul(8) > remaining {
                return Err(fmt_err(format!("{name}: data runs past end of file")));
            }
            let mut data = vec![0.0; len];
            cur.read_f64_into::<LittleEndian>(&mut data).map_err(truncated)?;
            let t = Tensor::from_vec(&shape, data).map_err(|e| fmt_err(format!("{name}: {e}")))?;
            entries.insert(name, t);
        }
        if (cur.position() as usize) != body.len() - 8 {
            return Err(fmt_err("trailing bytes after last entry"));
        }
        Ok(Self {
            step,
            metadata,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn read_string(cur: &mut Cursor<&[u8]>, len: usize) -> Result<String> {
    let start = cur.position() as usize;
    let buf = cur.get_ref();
    if start + len > buf.len() {
        return Err(fmt_err("string runs past end of data"));
    }
    let s = std::str::from_utf8(&buf[start..start + len])
        .map_err(|_| fmt_err("invalid UTF-8 in name or metadata"))?
        .to_string();
    cur.set_position((start + len) as u64);
    Ok(s)
}
