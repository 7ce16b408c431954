//! Binary container for named parameter tensors.
//!
//! Layout: magic, format version, kind tag, schema hash, then a table of
//! (name, shape, row-major little-endian f64 payload) entries. Round
//! trips are bit-exact; truncated or mismatched files load as clean
//! errors without producing a partial model.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"GMAR";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct TensorArchive {
    pub kind: String,
    pub schema_hash: u64,
    entries: Vec<(String, Tensor)>,
}

impl TensorArchive {
    pub fn new(kind: &str, schema_hash: u64) -> Self {
        Self { kind: kind.to_string(), schema_hash, entries: Vec::new() }
    }

    pub fn push(&mut self, name: &str, tensor: Tensor) {
        debug_assert!(self.get(name).is_none(), "duplicate archive entry {name}");
        self.entries.push((name.to_string(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn take(&mut self, name: &str) -> Option<Tensor> {
        let pos = self.entries.iter().position(|(n, _)| n == name)?;
        Some(self.entries.remove(pos).1)
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        write_str(&mut out, &self.kind)?;
        out.write_all(&self.schema_hash.to_le_bytes())?;
        out.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (name, t) in &self.entries {
            write_str(&mut out, name)?;
            out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                out.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut input = std::io::BufReader::new(std::fs::File::open(path)?);
        let ctx = |what: &str| CoreError::Checkpoint(format!("{}: {what}", path.display()));

        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(|_| ctx("missing header"))?;
        if &magic != MAGIC {
            return Err(ctx("not a parameter archive"));
        }
        let version = read_u32(&mut input).map_err(|_| ctx("truncated header"))?;
        if version != VERSION {
            return Err(ctx(&format!("unsupported format version {version}")));
        }
        let kind = read_str(&mut input).map_err(|_| ctx("truncated kind tag"))?;
        let schema_hash = read_u64(&mut input).map_err(|_| ctx("truncated schema hash"))?;
        let n = read_u64(&mut input).map_err(|_| ctx("truncated entry count"))? as usize;

        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let name = read_str(&mut input).map_err(|_| ctx("truncated entry name"))?;
            let rank = read_u32(&mut input).map_err(|_| ctx("truncated shape"))? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut input).map_err(|_| ctx("truncated shape"))? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            let mut buf = [0u8; 8];
            for _ in 0..numel {
                input.read_exact(&mut buf).map_err(|_| ctx("truncated payload"))?;
                data.push(f64::from_le_bytes(buf));
            }
            let tensor = Tensor::from_vec(shape, data)
                .map_err(|e| ctx(&format!("bad tensor {name}: {e}")))?;
            entries.push((name, tensor));
        }
        Ok(Self { kind, schema_hash, entries })
    }
}

fn write_str<W: Write>(out: &mut W, s: &str) -> std::io::Result<()> {
    out.write_all(&(s.len() as u32).to_le_bytes())?;
    out.write_all(s.as_bytes())
}

fn read_str<R: Read>(input: &mut R) -> std::io::Result<String> {
    let len = read_u32(input)? as usize;
    let mut buf = vec![0u8; len];
    input.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| std::io::ErrorKind::InvalidData.into())
}

fn read_u32<R: Read>(input: &mut R) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(input: &mut R) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// FNV-1a over byte slices; used for schema hashes and freeze checks.
pub fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// Order-sensitive hash of tensor contents (bit-exact).
pub fn hash_tensors<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for t in tensors {
        for &d in t.shape() {
            h = fnv1a(&[&h.to_le_bytes(), &(d as u64).to_le_bytes()]);
        }
        for &v in t.data() {
            h = fnv1a(&[&h.to_le_bytes(), &v.to_bits().to_le_bytes()]);
        }
    }
    h
}
