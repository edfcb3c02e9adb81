//! Model checkpoint container.
//!
//! A text manifest followed by a binary section of concatenated EMB1
//! blocks, one per tensor:
//!
//! ```text
//! TARA-CKPT 1
//! meta <key> <value>
//! tensor <name> <rows> <cols> <offset>
//! ...
//! end
//! <EMB1 block><EMB1 block>...
//! ```
//!
//! Offsets are relative to the first byte after the `end` line. Vectors are
//! stored as `1 × len` blocks. Values are float32, like the embeddings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::calib::{CalibrationHead, HeadMode, PARAM_NAMES};
use crate::error::{Error, Result};
use crate::hyperbolic::{AnchorSet, DistanceKind};
use crate::matrix::Matrix;
use crate::store::emb1;

const MAGIC_LINE: &str = "TARA-CKPT 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub head: CalibrationHead,
    pub anchors: AnchorSet,
    pub distance: DistanceKind,
    /// Free-form metadata (variant, seed, ...).
    pub meta: BTreeMap<String, String>,
}

fn as_matrix(data: &[f64], rows: usize, cols: usize) -> Matrix {
    Matrix::new(rows, cols, data.to_vec()).expect("finite parameters")
}

impl Checkpoint {
    fn tensors(&self) -> Vec<(&'static str, Matrix)> {
        let h = &self.head;
        let (k, d) = h.rotation.shape();
        let mut out: Vec<(&'static str, Matrix)> = Vec::new();
        let shapes = [
            (k, d),
            (k, d),
            (1, k),
            (k, d),
            (1, d),
            (h.num_fine(), d),
        ];
        for ((name, data), (r, c)) in PARAM_NAMES.iter().zip(h.tensors()).zip(shapes) {
            out.push((name, as_matrix(data, r, c)));
        }
        out.push(("anchors", self.anchors.anchors().clone()));
        out
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        if !self.head.is_finite() || !self.anchors.anchors().is_finite() {
            return Err(Error::Value("cannot save non-finite parameters".into()));
        }
        let mut manifest = String::new();
        let _ = writeln!(manifest, "{MAGIC_LINE}");
        let _ = writeln!(manifest, "meta mode {}", self.head.mode);
        let _ = writeln!(manifest, "meta distance {}", self.distance);
        let _ = writeln!(manifest, "meta eps_ball {:e}", self.anchors.eps_ball());
        for (k, v) in &self.meta {
            if k.contains(char::is_whitespace) || v.contains(char::is_whitespace) {
                return Err(Error::Argument(format!("invalid meta entry {k:?}")));
            }
            let _ = writeln!(manifest, "meta {k} {v}");
        }
        let mut blob = Vec::new();
        for (name, m) in self.tensors() {
            let _ = writeln!(manifest, "tensor {name} {} {} {}", m.rows(), m.cols(), blob.len());
            blob.extend(emb1::encode(&m));
        }
        manifest.push_str("end\n");
        let mut out = manifest.into_bytes();
        out.extend(blob);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut lines = Vec::new();
        loop {
            let rest = &bytes[pos..];
            let nl = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::Format("checkpoint manifest not terminated".into()))?;
            let line = std::str::from_utf8(&rest[..nl])
                .map_err(|_| Error::Format("manifest is not UTF-8".into()))?
                .to_string();
            pos += nl + 1;
            if line == "end" {
                break;
            }
            lines.push(line);
        }
        let blob = &bytes[pos..];
        if lines.first().map(String::as_str) != Some(MAGIC_LINE) {
            return Err(Error::Format("not a checkpoint file".into()));
        }

        let mut meta = BTreeMap::new();
        let mut tensors: BTreeMap<String, Matrix> = BTreeMap::new();
        let mut end = 0;
        for line in &lines[1..] {
            let parts: Vec<&str> = line.split(' ').collect();
            match parts.as_slice() {
                ["meta", k, v] => {
                    meta.insert(k.to_string(), v.to_string());
                }
                ["tensor", name, rows, cols, offset] => {
                    let parse = |s: &str| {
                        s.parse::<usize>()
                            .map_err(|_| Error::Format(format!("bad number in {line:?}")))
                    };
                    let (rows, cols, offset) = (parse(rows)?, parse(cols)?, parse(offset)?);
                    if offset > blob.len() {
                        return Err(Error::Format(format!("offset out of range in {line:?}")));
                    }
                    let (m, used) = emb1::decode(&blob[offset..])?;
                    if m.shape() != (rows, cols) {
                        return Err(Error::Consistency(format!(
                            "tensor {name}: manifest shape {rows}x{cols}, block {:?}",
                            m.shape()
                        )));
                    }
                    end = end.max(offset + used);
                    tensors.insert(name.to_string(), m);
                }
                _ => return Err(Error::Format(format!("unrecognized manifest line {line:?}"))),
            }
        }
        if end != blob.len() {
            return Err(Error::Format("trailing bytes after last tensor".into()));
        }

        let mut take = |name: &str| {
            tensors
                .remove(name)
                .ok_or_else(|| Error::Format(format!("missing tensor {name}")))
        };
        let rotation = take("rotation")?;
        let scaling = take("scaling")?;
        let ratio_bias = take("ratio_bias")?.into_vec();
        let decoder = take("decoder")?;
        let decoder_bias = take("decoder_bias")?.into_vec();
        let verbalizer = take("verbalizer")?;
        let anchors = take("anchors")?;

        let mut take_meta = |k: &str| {
            meta.remove(k)
                .ok_or_else(|| Error::Format(format!("missing meta {k}")))
        };
        let mode: HeadMode = take_meta("mode")?.parse()?;
        let distance: DistanceKind = take_meta("distance")?.parse()?;
        let eps_ball: f64 = take_meta("eps_ball")?
            .parse()
            .map_err(|_| Error::Format("bad eps_ball".into()))?;

        let head = CalibrationHead::from_parts(
            mode,
            rotation,
            scaling,
            ratio_bias,
            decoder,
            decoder_bias,
            verbalizer,
        )?;
        if anchors.cols() != head.dim() {
            return Err(Error::Consistency("anchor dimension differs from head".into()));
        }
        Ok(Self {
            head,
            // float32 rounding can nudge a boundary anchor past the radius
            anchors: AnchorSet::new(anchors, 0.0)?.with_eps_ball(eps_ball)?,
            distance,
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}
