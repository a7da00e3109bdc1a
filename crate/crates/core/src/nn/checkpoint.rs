//! Plain-text container of named tensors.
//!
//! ```text
//! mcgoppo-checkpoint v1
//! meta <key> <value to end of line>
//! tensor <name> <rows> <cols>
//! <cols values, LowerExp formatted, space separated>   (one line per row)
//! end
//! ```
//!
//! Values use Rust's shortest round-trip `{:e}` formatting, so reading a file
//! and writing it back reproduces it byte for byte. Optimizer state is not
//! stored.

use std::fmt::Write as _;
use std::path::Path;

use super::matrix::Matrix;
use super::params::ParamStore;
use crate::error::{Error, Result};

pub const MAGIC: &str = "mcgoppo-checkpoint v1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        assert!(
            !key.contains(char::is_whitespace) && !value.contains('\n'),
            "meta key must be one token and value one line"
        );
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some((_, v)) => *v = value,
            None => self.meta.push((key.to_string(), value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Appends every tensor of `store` under `prefix/`.
    pub fn add_store(&mut self, prefix: &str, store: &ParamStore) {
        for p in store.iter() {
            self.tensors
                .push((format!("{prefix}/{}", p.name), p.value.clone()));
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Matrix> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
    }

    /// Names of tensors under `prefix/`, prefix stripped.
    pub fn names_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> {
        self.tensors.iter().filter_map(move |(n, _)| {
            n.strip_prefix(prefix)
                .and_then(|rest| rest.strip_prefix('/'))
        })
    }

    /// Overwrites the values of `store` from tensors under `prefix/`. Every
    /// parameter must be present with a matching shape.
    pub fn load_store(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        let expected = store.len();
        let found = self.names_with_prefix(prefix).count();
        if found != expected {
            return Err(Error::Checkpoint(format!(
                "{prefix}: checkpoint has {found} tensors, model expects {expected}"
            )));
        }
        for p in store.iter_mut() {
            let key = format!("{prefix}/{}", p.name);
            let m = self
                .tensor(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
            if m.shape() != p.value.shape() {
                return Err(Error::shape(
                    "checkpoint tensor",
                    format!("{key} {:?}", p.value.shape()),
                    format!("{:?}", m.shape()),
                ));
            }
            p.value = m.clone();
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(MAGIC);
        s.push('\n');
        for (k, v) in &self.meta {
            let _ = writeln!(s, "meta {k} {v}");
        }
        for (name, m) in &self.tensors {
            let _ = writeln!(s, "tensor {name} {} {}", m.rows(), m.cols());
            for r in 0..m.rows() {
                let row = m.row(r);
                for (i, x) in row.iter().enumerate() {
                    if i > 0 {
                        s.push(' ');
                    }
                    let _ = write!(s, "{x:e}");
                }
                s.push('\n');
            }
        }
        s.push_str("end\n");
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Checkpoint(format!("line {}: {msg}", line + 1));
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l == MAGIC => {}
            _ => return Err(Error::Checkpoint(format!("missing header {MAGIC:?}"))),
        }
        let mut ck = Checkpoint::new();
        let mut saw_end = false;
        while let Some((ln, line)) = lines.next() {
            if line == "end" {
                saw_end = true;
                break;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ck.meta.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let parts: Vec<&str> = rest.split(' ').collect();
                if parts.len() != 3 {
                    return Err(bad(ln, "tensor header needs name rows cols"));
                }
                let rows: usize = parts[1].parse().map_err(|_| bad(ln, "bad row count"))?;
                let cols: usize = parts[2].parse().map_err(|_| bad(ln, "bad col count"))?;
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    let (rl, row) = lines.next().ok_or_else(|| bad(ln, "truncated tensor"))?;
                    let before = data.len();
                    if cols > 0 {
                        for tok in row.split(' ') {
                            data.push(tok.parse::<f64>().map_err(|_| bad(rl, "bad number"))?);
                        }
                    }
                    if data.len() - before != cols {
                        return Err(bad(rl, "wrong number of values in row"));
                    }
                }
                ck.tensors
                    .push((parts[0].to_string(), Matrix::from_vec(rows, cols, data)?));
            } else {
                return Err(bad(ln, "unrecognised line"));
            }
        }
        if !saw_end {
            return Err(Error::Checkpoint("missing end marker".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
