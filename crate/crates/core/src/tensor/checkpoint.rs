//! `JOVA-CKPT v1`: a text manifest followed by raw little-endian `f32` data.
//!
//! ```text
//! JOVA-CKPT v1
//! meta latent_dim=64
//! tensor name=attn.0.wq.0 dtype=f32 shape=64x16 offset=0
//! end
//! <bytes>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, Cursor, Read};
use std::path::Path;

use thiserror::Error;

use super::{ParamStore, Real, Tensor};

pub const CHECKPOINT_MAGIC: &str = "JOVA-CKPT v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint: {0}")]
    BadHeader(String),
    #[error("malformed manifest line {line}: {reason}")]
    BadManifest { line: usize, reason: String },
    #[error("checkpoint data is truncated")]
    Truncated,
    #[error("checkpoint has no parameter `{0}`")]
    MissingTensor(String),
    #[error("parameter `{name}` has shape {expected:?} but the checkpoint stores {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Parameter arrays plus free-form string metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<StoredTensor>,
}

impl Checkpoint {
    pub fn from_params<T: Real>(params: &ParamStore<T>) -> Self {
        let tensors = params
            .iter()
            .map(|(_, p)| StoredTensor {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().iter().map(|v| v.as_f64() as f32).collect(),
            })
            .collect();
        Self {
            meta: BTreeMap::new(),
            tensors,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&StoredTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Copies stored values into every parameter of `params` by name.
    pub fn load_into<T: Real>(&self, params: &mut ParamStore<T>) -> Result<(), CheckpointError> {
        let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
        for id in ids {
            let p = params.get_mut(id);
            let stored = self
                .tensor(&p.name)
                .ok_or_else(|| CheckpointError::MissingTensor(p.name.clone()))?;
            if stored.shape != p.value.shape() {
                return Err(CheckpointError::ShapeMismatch {
                    name: p.name.clone(),
                    expected: p.value.shape().to_vec(),
                    found: stored.shape.clone(),
                });
            }
            let values = stored.data.iter().map(|&v| T::lit(f64::from(v))).collect();
            p.value = Tensor {
                shape: stored.shape.clone(),
                data: values,
            };
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = String::new();
        head.push_str(CHECKPOINT_MAGIC);
        head.push('\n');
        for (k, v) in &self.meta {
            head.push_str(&format!("meta {}={}\n", escape(k), escape(v)));
        }
        let mut offset = 0usize;
        for t in &self.tensors {
            head.push_str(&format!(
                "tensor name={} dtype=f32 shape={} offset={offset}\n",
                escape(&t.name),
                format_shape(&t.shape)
            ));
            offset += t.data.len() * 4;
        }
        head.push_str("end\n");
        let mut out = head.into_bytes();
        out.reserve(offset);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut cur = Cursor::new(bytes);
        let mut line = String::new();
        cur.read_line(&mut line)?;
        if line.trim_end() != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadHeader(line.trim_end().to_string()));
        }
        let mut meta = BTreeMap::new();
        let mut specs = Vec::new();
        let mut lineno = 1;
        loop {
            line.clear();
            lineno += 1;
            if cur.read_line(&mut line)? == 0 {
                return Err(CheckpointError::Truncated);
            }
            let l = line.trim_end_matches('\n');
            let bad = |reason: &str| CheckpointError::BadManifest {
                line: lineno,
                reason: reason.to_string(),
            };
            if l == "end" {
                break;
            } else if let Some(rest) = l.strip_prefix("meta ") {
                let (k, v) = rest.split_once('=').ok_or_else(|| bad("meta needs key=value"))?;
                meta.insert(unescape(k), unescape(v));
            } else if let Some(rest) = l.strip_prefix("tensor ") {
                let fields = parse_fields(rest);
                let name = fields.get("name").ok_or_else(|| bad("missing name"))?;
                if fields.get("dtype").map(String::as_str) != Some("f32") {
                    return Err(bad("only dtype=f32 is supported"));
                }
                let shape = parse_shape(fields.get("shape").ok_or_else(|| bad("missing shape"))?)
                    .ok_or_else(|| bad("bad shape"))?;
                let offset: usize = fields
                    .get("offset")
                    .and_then(|o| o.parse().ok())
                    .ok_or_else(|| bad("bad offset"))?;
                specs.push((unescape(name), shape, offset));
            } else {
                return Err(bad("unknown record"));
            }
        }
        let mut data = Vec::new();
        cur.read_to_end(&mut data)?;
        let mut tensors = Vec::with_capacity(specs.len());
        for (name, shape, offset) in specs {
            let n: usize = shape.iter().product();
            let bytes = data.get(offset..offset + n * 4).ok_or(CheckpointError::Truncated)?;
            let values = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(StoredTensor {
                name,
                shape,
                data: values,
            });
        }
        Ok(Self { meta, tensors })
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

/// Escapes backslash, space and line breaks so values fit in one
/// space-separated manifest field.
pub(crate) fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            ' ' => out.push_str("\\s"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '=' => out.push_str("\\e"),
            c => out.push(c),
        }
    }
    out
}

pub(crate) fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('s') => out.push(' '),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('e') => out.push('='),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

/// Splits `k=v k=v` into a map; values stay escaped.
pub(crate) fn parse_fields(s: &str) -> BTreeMap<String, String> {
    s.split(' ')
        .filter_map(|f| f.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

pub(crate) fn format_shape(shape: &[usize]) -> String {
    if shape.is_empty() {
        return "scalar".into();
    }
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

pub(crate) fn parse_shape(s: &str) -> Option<Vec<usize>> {
    if s == "scalar" {
        return Some(Vec::new());
    }
    s.split('x').map(|d| d.parse().ok()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escape_round_trip() {
        for s in ["plain", "a b", "x=y\\z\nw", ""] {
            assert_eq!(unescape(&escape(s)), s);
            assert!(!escape(s).contains(' '));
        }
    }

    #[test]
    fn bytes_round_trip() {
        let mut store = ParamStore::<f32>::new();
        store
            .add("w", Tensor::new(vec![2, 2], vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5]).unwrap())
            .unwrap();
        store.add("b", Tensor::scalar(0.25)).unwrap();
        let mut ck = Checkpoint::from_params(&store);
        ck.meta.insert("note".into(), "two words".into());
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rejects_wrong_magic() {
        assert!(matches!(
            Checkpoint::from_bytes(b"JOVA-FEAT v1\nend\n"),
            Err(CheckpointError::BadHeader(_))
        ));
    }
}
