//! Binary container files: a JSON header plus raw little-endian sections.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Result, TemplateError};

const MAGIC: &[u8; 8] = b"SRFDAT01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub(crate) enum Dtype {
    F64,
    I64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SectionDesc {
    name: String,
    dtype: Dtype,
    /// Element count, not bytes.
    len: u64,
    /// Byte offset from the start of the payload.
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    sections: Vec<SectionDesc>,
}

/// An in-memory container of named numeric sections plus JSON metadata.
#[derive(Debug)]
pub(crate) struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    sections: BTreeMap<String, (Dtype, Vec<u8>)>,
}

impl Container {
    pub fn new(kind: &str, meta: serde_json::Value) -> Container {
        Container { kind: kind.to_string(), meta, sections: BTreeMap::new() }
    }

    pub fn put_f64(&mut self, name: &str, data: &[f64]) {
        let bytes = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.sections.insert(name.to_string(), (Dtype::F64, bytes));
    }

    pub fn put_i64(&mut self, name: &str, data: &[i64]) {
        let bytes = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.sections.insert(name.to_string(), (Dtype::I64, bytes));
    }

    pub fn put_usize(&mut self, name: &str, data: &[usize]) {
        let as_i64: Vec<i64> = data.iter().map(|&v| v as i64).collect();
        self.put_i64(name, &as_i64);
    }

    pub fn take_f64(&self, name: &str, path: &Path) -> Result<Vec<f64>> {
        let (dtype, bytes) = self.section(name, path)?;
        if dtype != Dtype::F64 {
            return Err(TemplateError::format(path, format!("section {name} is not f64")));
        }
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn take_i64(&self, name: &str, path: &Path) -> Result<Vec<i64>> {
        let (dtype, bytes) = self.section(name, path)?;
        if dtype != Dtype::I64 {
            return Err(TemplateError::format(path, format!("section {name} is not i64")));
        }
        Ok(bytes.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn take_usize(&self, name: &str, path: &Path) -> Result<Vec<usize>> {
        let raw = self.take_i64(name, path)?;
        raw.iter()
            .map(|&v| {
                usize::try_from(v)
                    .map_err(|_| TemplateError::format(path, format!("section {name} holds negative index {v}")))
            })
            .collect()
    }

    fn section(&self, name: &str, path: &Path) -> Result<(Dtype, &[u8])> {
        match self.sections.get(name) {
            Some((dtype, bytes)) => Ok((*dtype, bytes)),
            None => Err(TemplateError::format(path, format!("missing section {name}"))),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut descs = Vec::with_capacity(self.sections.len());
        let mut offset = 0u64;
        for (name, (dtype, bytes)) in &self.sections {
            descs.push(SectionDesc {
                name: name.clone(),
                dtype: *dtype,
                len: (bytes.len() / 8) as u64,
                offset,
            });
            offset += bytes.len() as u64;
        }
        let header = Header { kind: self.kind.clone(), meta: self.meta.clone(), sections: descs };
        let header_bytes = serde_json::to_vec(&header)
            .map_err(|e| TemplateError::format(path, format!("cannot encode header: {e}")))?;
        let file = std::fs::File::create(path).map_err(|e| TemplateError::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let write = |out: &mut std::io::BufWriter<std::fs::File>, bytes: &[u8]| {
            out.write_all(bytes).map_err(|e| TemplateError::io(path, e))
        };
        write(&mut out, MAGIC)?;
        write(&mut out, &(header_bytes.len() as u64).to_le_bytes())?;
        write(&mut out, &header_bytes)?;
        for (_, (_, bytes)) in &self.sections {
            write(&mut out, bytes)?;
        }
        out.flush().map_err(|e| TemplateError::io(path, e))
    }

    pub fn read(path: &Path, expect_kind: &str) -> Result<Container> {
        let bytes = std::fs::read(path).map_err(|e| TemplateError::io(path, e))?;
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(TemplateError::format(path, "not a template data container"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let payload_start = 16 + header_len;
        if bytes.len() < payload_start {
            return Err(TemplateError::format(path, "truncated header"));
        }
        let header: Header = serde_json::from_slice(&bytes[16..payload_start])
            .map_err(|e| TemplateError::format(path, format!("invalid header: {e}")))?;
        if header.kind != expect_kind {
            return Err(TemplateError::format(
                path,
                format!("container holds {:?}, expected {expect_kind:?}", header.kind),
            ));
        }
        let payload = &bytes[payload_start..];
        let mut sections = BTreeMap::new();
        for desc in header.sections {
            let start = desc.offset as usize;
            let end = start + desc.len as usize * 8;
            if end > payload.len() {
                return Err(TemplateError::format(path, format!("section {} out of bounds", desc.name)));
            }
            sections.insert(desc.name, (desc.dtype, payload[start..end].to_vec()));
        }
        Ok(Container { kind: header.kind, meta: header.meta, sections })
    }
}
