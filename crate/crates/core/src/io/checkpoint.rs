//! Checkpoint files: a UTF-8 manifest, the line `DATA`, then every tensor as
//! little-endian `f64` values in manifest order.
//!
//! ```text
//! FUSIONSORT-CHECKPOINT 1
//! config <key=value ...>
//! tensor <name> <param|buffer> <d0>x<d1>x...
//! ...
//! DATA
//! <blob>
//! ```
//!
//! Manifest entries are sorted lexicographically by name.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &str = "FUSIONSORT-CHECKPOINT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    Param,
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub entries: BTreeMap<String, (EntryKind, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(config: &str, store: &ParamStore) -> Self {
        let mut entries = BTreeMap::new();
        for (_, p) in store.iter() {
            entries.insert(p.name.clone(), (EntryKind::Param, p.value.clone()));
        }
        for (name, t) in store.buffers() {
            entries.insert(name.to_string(), (EntryKind::Buffer, t.clone()));
        }
        Checkpoint {
            config: config.to_string(),
            entries,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\nconfig {}\n", self.config);
        for (name, (kind, t)) in &self.entries {
            let kind = match kind {
                EntryKind::Param => "param",
                EntryKind::Buffer => "buffer",
            };
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            manifest.push_str(&format!("tensor {name} {kind} {}\n", dims.join("x")));
        }
        manifest.push_str("DATA\n");
        let mut out = manifest.into_bytes();
        for (_, t) in self.entries.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        fn line_at<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
            let rest = &bytes[*pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::format(bytes.len(), "manifest ends without a DATA line"))?;
            let line = std::str::from_utf8(&rest[..end]).map_err(|_| Error::format(*pos, "manifest is not UTF-8"))?;
            *pos += end + 1;
            Ok(line)
        }
        let next_line = |pos: &mut usize| line_at(bytes, pos);
        let mut pos = 0usize;
        let header = next_line(&mut pos)?;
        if header != format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}") {
            return Err(Error::format(0, format!("unsupported checkpoint header '{header}'")));
        }
        let at = pos;
        let config = next_line(&mut pos)?
            .strip_prefix("config ")
            .ok_or_else(|| Error::format(at, "expected a config line"))?
            .to_string();
        let mut specs: Vec<(String, EntryKind, Vec<usize>)> = Vec::new();
        loop {
            let at = pos;
            let line = next_line(&mut pos)?;
            if line == "DATA" {
                break;
            }
            let parts: Vec<&str> = line.split(' ').collect();
            let [tag, name, kind, dims] = parts[..] else {
                return Err(Error::format(at, format!("malformed manifest line '{line}'")));
            };
            if tag != "tensor" {
                return Err(Error::format(at, format!("malformed manifest line '{line}'")));
            }
            let kind = match kind {
                "param" => EntryKind::Param,
                "buffer" => EntryKind::Buffer,
                other => return Err(Error::format(at, format!("unknown entry kind '{other}'"))),
            };
            let shape = dims
                .split('x')
                .map(|d| d.parse::<usize>().ok().filter(|&d| d > 0))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::format(at, format!("bad shape '{dims}'")))?;
            if let Some((prev, _, _)) = specs.last() {
                if prev.as_str() >= name {
                    return Err(Error::format(at, "manifest entries are not in lexicographic order"));
                }
            }
            specs.push((name.to_string(), kind, shape));
        }
        let total: usize = specs.iter().map(|(_, _, s)| s.iter().product::<usize>()).sum();
        let expected = pos + 8 * total;
        if bytes.len() != expected {
            return Err(Error::format(
                bytes.len().min(expected),
                format!(
                    "payload holds {} bytes, manifest needs {}",
                    bytes.len() - pos,
                    8 * total
                ),
            ));
        }
        let mut values = bytes[pos..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut entries = BTreeMap::new();
        for (name, kind, shape) in specs {
            let n = shape.iter().product();
            let data: Vec<f64> = values.by_ref().take(n).collect();
            entries.insert(name, (kind, Tensor::new(&shape, data)?));
        }
        Ok(Checkpoint { config, entries })
    }

    /// Copy every entry into `store`. All names, kinds and shapes are
    /// verified before the first value is written.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        let expected = Checkpoint::from_store(&self.config, store);
        if expected.entries.len() != self.entries.len() {
            return Err(Error::Mismatch(format!(
                "checkpoint has {} tensors, network has {}",
                self.entries.len(),
                expected.entries.len()
            )));
        }
        for ((name, (kind, t)), (ename, (ekind, et))) in self.entries.iter().zip(&expected.entries) {
            if name != ename || kind != ekind || t.shape() != et.shape() {
                return Err(Error::Mismatch(format!(
                    "checkpoint entry {name} {:?} does not match network entry {ename} {:?}",
                    t.shape(),
                    et.shape()
                )));
            }
        }
        for (name, (kind, t)) in &self.entries {
            match kind {
                EntryKind::Param => {
                    let id = store.id(name).expect("verified above");
                    store.get_mut(id).value = t.clone();
                }
                EntryKind::Buffer => store.set_buffer(name, t.clone())?,
            }
        }
        Ok(())
    }
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    super::write_atomic(path, &ckpt.to_bytes())
}
