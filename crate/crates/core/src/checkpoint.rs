//! Parameter files: a short text header followed by raw little-endian `f64` blocks.
//!
//! ```text
//! GRADTTS-CHECKPOINT 1
//! kind scorenet
//! dim 8
//! section scorenet 6152
//! end
//! <6152 × 8 bytes>
//! ```
//!
//! Header lines are `key value` pairs; `section <name> <count>` lines declare the binary
//! blocks in the order they follow the `end` line.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &str = "GRADTTS-CHECKPOINT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub sections: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn with_section(mut self, name: &str, values: Vec<f64>) -> Self {
        self.sections.push((name.to_string(), values));
        self
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("checkpoint header lacks `{key}`")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta(key)?;
        raw.parse().map_err(|_| Error::Format(format!("checkpoint header `{key}` has invalid value `{raw}`")))
    }

    pub fn section(&self, name: &str) -> Result<&[f64]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Format(format!("checkpoint has no section `{name}`")))
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let mut out = BufWriter::new(out);
        writeln!(out, "{MAGIC} {FORMAT_VERSION}")?;
        for (k, v) in &self.meta {
            if k.contains(char::is_whitespace) || v.contains('\n') || k == "section" || k == "end" {
                return Err(Error::Format(format!("header entry `{k}` cannot be encoded")));
            }
            writeln!(out, "{k} {v}")?;
        }
        for (name, values) in &self.sections {
            writeln!(out, "section {name} {}", values.len())?;
        }
        writeln!(out, "end")?;
        for (_, values) in &self.sections {
            for v in values {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut input = BufReader::new(input);
        let mut line = String::new();
        input.read_line(&mut line)?;
        let mut first = line.split_whitespace();
        if first.next() != Some(MAGIC) {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version: u32 = first
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Format("missing checkpoint version".into()))?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mut meta = BTreeMap::new();
        let mut declared = Vec::new();
        loop {
            line.clear();
            if input.read_line(&mut line)? == 0 {
                return Err(Error::Format("checkpoint header is not terminated".into()));
            }
            let trimmed = line.trim_end_matches(['\n', '\r']);
            if trimmed == "end" {
                break;
            }
            let (key, value) = trimmed.split_once(' ').unwrap_or((trimmed, ""));
            if key == "section" {
                let (name, count) = value
                    .rsplit_once(' ')
                    .ok_or_else(|| Error::Format(format!("malformed section line `{trimmed}`")))?;
                let count: usize =
                    count.parse().map_err(|_| Error::Format(format!("malformed section count `{count}`")))?;
                declared.push((name.to_string(), count));
            } else {
                meta.insert(key.to_string(), value.to_string());
            }
        }
        let mut sections = Vec::with_capacity(declared.len());
        let mut buf = [0u8; 8];
        for (name, count) in declared {
            let mut values = Vec::with_capacity(count);
            for _ in 0..count {
                input
                    .read_exact(&mut buf)
                    .map_err(|_| Error::Format(format!("section `{name}` is truncated")))?;
                values.push(f64::from_le_bytes(buf));
            }
            sections.push((name, values));
        }
        if input.read(&mut buf)? != 0 {
            return Err(Error::Format("trailing bytes after the last section".into()));
        }
        Ok(Self { meta, sections })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(File::open(path)?)
    }
}
