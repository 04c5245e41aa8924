//! Versioned text checkpoint of named tensors.
//!
//! ```text
//! graphyr-checkpoint 1
//! meta <key> <value...>
//! tensor <name> <rows> <cols>
//! <rows*cols whitespace-separated values>
//! end
//! ```
//!
//! Values are written with the shortest round-trip representation, so a
//! write/read cycle is bit-exact.

use std::io::{BufRead, BufReader, Read, Write};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &str = "graphyr-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn push_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.push((key.into(), value.into()));
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{MAGIC} {VERSION}")?;
        for (k, v) in &self.meta {
            if k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(Error::Checkpoint(format!("unwritable meta entry `{k}`")));
            }
            writeln!(out, "meta {k} {v}")?;
        }
        for (name, t) in &self.tensors {
            if name.contains(char::is_whitespace) {
                return Err(Error::Checkpoint(format!("tensor name `{name}` contains whitespace")));
            }
            writeln!(out, "tensor {name} {} {}", t.rows(), t.cols())?;
            let line: Vec<String> = t.data().iter().map(|x| x.to_string()).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        writeln!(out, "end")?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut lines = BufReader::new(input).lines().enumerate();
        let bad = |n: usize, msg: String| Error::Checkpoint(format!("line {}: {msg}", n + 1));
        let (n0, header) = lines
            .next()
            .ok_or_else(|| Error::Checkpoint("empty checkpoint".into()))?;
        let header = header?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(MAGIC) {
            return Err(bad(n0, "not a checkpoint file".into()));
        }
        match parts.next().and_then(|v| v.parse::<u32>().ok()) {
            Some(VERSION) => {}
            Some(v) => return Err(bad(n0, format!("unsupported version {v}"))),
            None => return Err(bad(n0, "missing version".into())),
        }
        let mut ck = Checkpoint::default();
        while let Some((n, line)) = lines.next() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if trimmed == "end" {
                return Ok(ck);
            }
            if let Some(rest) = trimmed.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ck.meta.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = trimmed.strip_prefix("tensor ") {
                let f: Vec<&str> = rest.split_whitespace().collect();
                if f.len() != 3 {
                    return Err(bad(n, "tensor header needs name, rows, cols".into()));
                }
                let dims: std::result::Result<Vec<usize>, _> = f[1..].iter().map(|s| s.parse()).collect();
                let dims = dims.map_err(|_| bad(n, "bad tensor shape".into()))?;
                let (dn, body) = lines
                    .next()
                    .ok_or_else(|| bad(n, "missing tensor values".into()))?;
                let body = body?;
                let vals: std::result::Result<Vec<f64>, _> = body.split_whitespace().map(str::parse).collect();
                let vals = vals.map_err(|_| bad(dn, "bad tensor value".into()))?;
                if vals.len() != dims[0] * dims[1] {
                    return Err(bad(dn, format!("expected {} values, found {}", dims[0] * dims[1], vals.len())));
                }
                ck.tensors.push((f[0].to_string(), Tensor::new(dims[0], dims[1], vals)));
            } else {
                return Err(bad(n, format!("unexpected `{trimmed}`")));
            }
        }
        Err(Error::Checkpoint("truncated checkpoint (no `end`)".into()))
    }
}
