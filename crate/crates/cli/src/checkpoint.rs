//! Self-describing checkpoint files.
//!
//! Layout: UTF-8 header lines, then a little-endian `f64` blob.
//!
//! ```text
//! orgmol-checkpoint 1
//! kind diffusion
//! fingerprint <vocabulary sha-256>
//! config <key> = <value>        (one per setting)
//! meta <key> = <value>
//! tensor <name> <d0>x<d1>...    (blob order)
//! data <number of floats>
//! <blob>
//! ```

use std::path::Path;

use orgmol_core::tensor::{ParamSet, Tensor};

const MAGIC: &str = "orgmol-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint format version {0} is not supported")]
    Version(u32),
    #[error("expected a {expected} checkpoint, found {found}")]
    Kind { expected: String, found: String },
    #[error("blob holds {found} floats, manifest promises {expected}")]
    BlobLength { expected: usize, found: usize },
    #[error("tensor manifest does not match the configured network: {0}")]
    Layout(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointFile {
    pub kind: String,
    pub fingerprint: String,
    pub config: Vec<(String, String)>,
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

fn malformed(m: impl Into<String>) -> CheckpointError {
    CheckpointError::Malformed(m.into())
}

impl CheckpointFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = format!("{MAGIC} {VERSION}\nkind {}\nfingerprint {}\n", self.kind, self.fingerprint);
        for (k, v) in &self.config {
            head.push_str(&format!("config {k} = {v}\n"));
        }
        for (k, v) in &self.meta {
            head.push_str(&format!("meta {k} = {v}\n"));
        }
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            head.push_str(&format!("tensor {name} {}\n", dims.join("x")));
        }
        let total: usize = self.tensors.iter().map(|(_, t)| t.numel()).sum();
        head.push_str(&format!("data {total}\n"));
        let mut out = head.into_bytes();
        out.reserve(total * 8);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<CheckpointFile, CheckpointError> {
        let mut pos = 0;
        let mut next_line = || -> Result<&str, CheckpointError> {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| malformed("header ends without a data line"))?;
            let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| malformed("header is not UTF-8"))?;
            pos += end + 1;
            Ok(line)
        };
        let first = next_line()?;
        let version = first
            .strip_prefix(MAGIC)
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or_else(|| malformed("missing magic line"))?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let mut file = CheckpointFile {
            kind: String::new(),
            fingerprint: String::new(),
            config: Vec::new(),
            meta: Vec::new(),
            tensors: Vec::new(),
        };
        let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
        let total = loop {
            let line = next_line()?;
            let (tag, rest) = line.split_once(' ').ok_or_else(|| malformed(format!("bad line {line:?}")))?;
            let pair = |rest: &str| {
                rest.split_once(" = ")
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| malformed(format!("bad pair {rest:?}")))
            };
            match tag {
                "kind" => file.kind = rest.to_string(),
                "fingerprint" => file.fingerprint = rest.to_string(),
                "config" => file.config.push(pair(rest)?),
                "meta" => file.meta.push(pair(rest)?),
                "tensor" => {
                    let (name, dims) = rest.rsplit_once(' ').ok_or_else(|| malformed(format!("bad tensor line {rest:?}")))?;
                    let shape = dims
                        .split('x')
                        .map(|d| d.parse::<usize>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|_| malformed(format!("bad shape {dims:?}")))?;
                    shapes.push((name.to_string(), shape));
                }
                "data" => break rest.parse::<usize>().map_err(|_| malformed("bad data count"))?,
                other => return Err(malformed(format!("unknown header tag {other:?}"))),
            }
        };
        let expected: usize = shapes.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        if expected != total {
            return Err(CheckpointError::BlobLength { expected, found: total });
        }
        let blob = &bytes[pos..];
        if blob.len() != total * 8 {
            return Err(CheckpointError::BlobLength {
                expected: total,
                found: blob.len() / 8,
            });
        }
        let mut floats = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        for (name, shape) in shapes {
            let n = shape.iter().product();
            let data: Vec<f64> = floats.by_ref().take(n).collect();
            let t = Tensor::new(&shape, data).map_err(|e| malformed(e.to_string()))?;
            file.tensors.push((name, t));
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<CheckpointFile, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        CheckpointFile::from_bytes(&bytes)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), CheckpointError> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(CheckpointError::Kind {
                expected: kind.to_string(),
                found: self.kind.clone(),
            })
        }
    }

    pub fn meta(&self, key: &str) -> Result<&str, CheckpointError> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| malformed(format!("missing meta {key}")))
    }

    /// Appends `params` with `prefix.` on every name.
    pub fn push_params(&mut self, prefix: &str, params: &ParamSet) {
        self.tensors
            .extend(params.iter().map(|(n, t)| (format!("{prefix}.{n}"), t.clone())));
    }

    /// Fills a freshly built `template` from the tensors named `prefix.*`,
    /// requiring identical names, order and shapes.
    pub fn take_params(&self, prefix: &str, template: &ParamSet) -> Result<ParamSet, CheckpointError> {
        let p = format!("{prefix}.");
        let stored: Vec<(&str, &Tensor)> = self
            .tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(&p).map(|n| (n, t)))
            .collect();
        if stored.len() != template.len() {
            return Err(CheckpointError::Layout(format!(
                "{prefix}: {} tensors stored, {} expected",
                stored.len(),
                template.len()
            )));
        }
        let mut out = ParamSet::new();
        for ((name, t), (want, shape)) in stored.into_iter().zip(template.iter()) {
            if name != want || t.shape() != shape.shape() {
                return Err(CheckpointError::Layout(format!(
                    "{prefix}.{name} {:?} where {want} {:?} was expected",
                    t.shape(),
                    shape.shape()
                )));
            }
            out.push(name, t.clone());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CheckpointFile {
        let mut ps = ParamSet::new();
        ps.push("w", Tensor::new(&[2, 3], vec![1.0, -2.5, 3.0, f64::MIN_POSITIVE, 0.1, -0.0]).unwrap());
        ps.push("b", Tensor::new(&[1], vec![7.0]).unwrap());
        let mut f = CheckpointFile {
            kind: "bonds".into(),
            fingerprint: "abc".into(),
            config: vec![("seed".into(), "3".into())],
            meta: vec![("atom_types".into(), "4".into())],
            tensors: Vec::new(),
        };
        f.push_params("net", &ps);
        f
    }

    #[test]
    fn round_trip_is_exact() {
        let f = sample();
        let bytes = f.to_bytes();
        let back = CheckpointFile::from_bytes(&bytes).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.meta("atom_types").unwrap(), "4");
        let mut template = ParamSet::new();
        template.push("w", Tensor::zeros(&[2, 3]));
        template.push("b", Tensor::zeros(&[1]));
        let ps = back.take_params("net", &template).unwrap();
        assert_eq!(ps.get("w").unwrap().data()[1], -2.5);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample().to_bytes();
        assert!(matches!(
            CheckpointFile::from_bytes(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::BlobLength { .. })
        ));
        assert!(matches!(CheckpointFile::from_bytes(b"junk\n"), Err(CheckpointError::Malformed(_))));
        let v2 = String::from_utf8_lossy(&bytes).replacen("orgmol-checkpoint 1", "orgmol-checkpoint 2", 1);
        assert!(matches!(CheckpointFile::from_bytes(v2.as_bytes()), Err(CheckpointError::Version(2))));
        let mut template = ParamSet::new();
        template.push("w", Tensor::zeros(&[3, 2]));
        template.push("b", Tensor::zeros(&[1]));
        assert!(matches!(
            sample().take_params("net", &template),
            Err(CheckpointError::Layout(_))
        ));
        assert!(sample().expect_kind("diffusion").is_err());
    }
}
