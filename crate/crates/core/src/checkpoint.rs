//! Container format shared by every saved model.
//!
//! ```text
//! capsdec-checkpoint 1\n
//! key=value\n          (zero or more header lines, in insertion order)
//! tensors=<count>\n
//! \n
//! <count> records: u32 name length, UTF-8 name, u32 rank, u32 dims…,
//!                  then the data as little-endian f32
//! ```
//!
//! All integers are little-endian. Tensors are stored as `f32` and round-trip
//! bit-exactly.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &str = "capsdec-checkpoint 1";

/// Header key/value pairs plus named `f32` tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    header: Vec<(String, String)>,
    tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets a header entry, replacing an existing value for `key`.
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        let key = key.into();
        let value = value.to_string();
        assert!(
            !key.is_empty() && !key.contains(['=', '\n']) && key != "tensors",
            "invalid header key {key:?}"
        );
        assert!(!value.contains('\n'), "header values are single-line");
        match self.header.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.header.push((key, value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Parses a required header value.
    pub fn parse<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::Config(format!("checkpoint header lacks {key}")))?;
        raw.parse()
            .map_err(|_| Error::Config(format!("checkpoint header {key}={raw:?} is malformed")))
    }

    pub fn header(&self) -> &[(String, String)] {
        &self.header
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, tensor: Tensor<f32>) {
        let name = name.into();
        assert!(self.tensor(&name).is_none(), "duplicate tensor {name}");
        let mut tensor = tensor;
        tensor.set_requires_grad(false);
        self.tensors.push((name, tensor));
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// A required tensor with an expected shape.
    pub fn expect_tensor(&self, name: &str, shape: &[usize]) -> Result<&Tensor<f32>> {
        let t = self
            .tensor(name)
            .ok_or_else(|| Error::Config(format!("checkpoint lacks tensor {name}")))?;
        if t.shape() != shape {
            return Err(Error::Config(format!(
                "tensor {name} has shape {:?}, architecture expects {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    }

    pub fn tensors(&self) -> &[(String, Tensor<f32>)] {
        &self.tensors
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC.as_bytes());
        out.push(b'\n');
        for (k, v) in &self.header {
            out.extend_from_slice(format!("{k}={v}\n").as_bytes());
        }
        out.extend_from_slice(format!("tensors={}\n\n", self.tensors.len()).as_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], source_name: &str) -> Result<Self> {
        let fail = |offset: usize, msg: &str| Error::format(source_name, format!("byte {offset}"), msg);
        let mut pos = 0usize;
        let next_line = |pos: &mut usize| -> Result<String> {
            let rest = &bytes[*pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| fail(*pos, "unterminated header line"))?;
            let line = std::str::from_utf8(&rest[..end])
                .map_err(|_| fail(*pos, "header is not UTF-8"))?
                .to_string();
            *pos += end + 1;
            Ok(line)
        };
        if next_line(&mut pos)? != MAGIC {
            return Err(fail(0, "not a capsdec checkpoint"));
        }
        let mut header = Vec::new();
        let mut count = None;
        loop {
            let at = pos;
            let line = next_line(&mut pos)?;
            if line.is_empty() {
                break;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| fail(at, "header line without '='"))?;
            if k == "tensors" {
                count = Some(v.parse::<usize>().map_err(|_| fail(at, "bad tensor count"))?);
            } else {
                header.push((k.to_string(), v.to_string()));
            }
        }
        let count = count.ok_or_else(|| fail(pos, "missing tensor count"))?;

        let read_u32 = |pos: &mut usize| -> Result<u32> {
            let chunk = bytes
                .get(*pos..*pos + 4)
                .ok_or_else(|| fail(*pos, "truncated record"))?;
            *pos += 4;
            Ok(u32::from_le_bytes(chunk.try_into().expect("four bytes")))
        };
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(&mut pos)? as usize;
            let name = bytes
                .get(pos..pos + name_len)
                .and_then(|b| std::str::from_utf8(b).ok())
                .ok_or_else(|| fail(pos, "bad tensor name"))?
                .to_string();
            pos += name_len;
            let rank = read_u32(&mut pos)? as usize;
            let shape = (0..rank)
                .map(|_| read_u32(&mut pos).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = bytes
                .get(pos..pos + 4 * numel)
                .ok_or_else(|| fail(pos, "truncated tensor data"))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
                .collect();
            let tensor = Tensor::new(&shape, data).map_err(|e| fail(pos, &e.to_string()))?;
            pos += 4 * numel;
            tensors.push((name, tensor));
        }
        if pos != bytes.len() {
            return Err(fail(pos, "trailing bytes after last tensor"));
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}
