//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "KNGR"  u32 version
//! u32 len, UTF-8 config: one key=value per line (metadata keys prefixed "meta.")
//! per parameter, in registry order:
//!     u32 len, UTF-8 name   u32 rank   u64 dim × rank   f64 value × Π dims
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

pub const MAGIC: &[u8; 4] = b"KNGR";
pub const FORMAT_VERSION: u32 = 1;
const META_PREFIX: &str = "meta.";

/// A decoded checkpoint: the model plus free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: Model,
    /// `key=value` metadata stored alongside the model configuration.
    pub meta: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn check_text(s: &str, what: &str) -> Result<()> {
    if s.contains('\n') || s.contains('\r') {
        return Err(Error::Checkpoint(format!("{what} {s:?} contains a line break")));
    }
    Ok(())
}

fn push_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

pub fn encode_checkpoint(model: &Model, meta: &[(String, String)]) -> Result<Vec<u8>> {
    let mut config = String::new();
    for (k, v) in model.config().to_pairs() {
        writeln!(config, "{k}={v}").expect("writing to a String");
    }
    for (k, v) in meta {
        check_text(k, "metadata key")?;
        check_text(v, "metadata value")?;
        if k.contains('=') {
            return Err(Error::Checkpoint(format!("metadata key {k:?} contains '='")));
        }
        writeln!(config, "{META_PREFIX}{k}={v}").expect("writing to a String");
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    push_str(&mut buf, &config);
    for (spec, values) in model.param_specs().iter().zip(model.param_slices()) {
        push_str(&mut buf, &spec.name);
        buf.extend_from_slice(&(spec.shape.len() as u32).to_le_bytes());
        for &d in &spec.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated file: expected {n} bytes of {what} at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<&'a str> {
        let len = self.u32(what)? as usize;
        std::str::from_utf8(self.take(len, what)?).map_err(|_| Error::Checkpoint(format!("{what} is not valid UTF-8")))
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

type RawParam = (String, Vec<usize>, Vec<f64>);

fn decode_parts(bytes: &[u8]) -> Result<(u32, String, Vec<RawParam>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic (not a kangura checkpoint)".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let config = r.string("config")?.to_string();
    let mut params = Vec::new();
    while !r.at_end() {
        let name = r.string("parameter name")?.to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u64("dimension")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(|| Error::Checkpoint(format!("parameter {name} has an absurd shape {shape:?}")))?;
        let raw = r.take(count, "parameter values")?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.push((name, shape, values));
    }
    Ok((version, config, params))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let (format_version, config_text, params) = decode_parts(bytes)?;
    let mut config = ModelConfig::default();
    let mut meta = Vec::new();
    for line in config_text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("config line {line:?} is not key=value")))?;
        if let Some(key) = k.strip_prefix(META_PREFIX) {
            meta.push((key.to_string(), v.to_string()));
        } else if !config.set(k, v).map_err(|e| Error::Checkpoint(e.to_string()))? {
            return Err(Error::Checkpoint(format!("unknown config key {k:?}")));
        }
    }
    let mut model = Model::new(config).map_err(|e| Error::Checkpoint(format!("invalid stored config: {e}")))?;
    model.load_params(&params)?;
    Ok(Checkpoint {
        format_version,
        model,
        meta,
    })
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    save_checkpoint_with_meta(model, &[], path)
}

pub fn save_checkpoint_with_meta(model: &Model, meta: &[(String, String)], path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model, meta)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Human-readable listing: header, config lines, then one line per
/// parameter with its shape and summary statistics.
pub fn dump_checkpoint(bytes: &[u8]) -> Result<String> {
    let (version, config, params) = decode_parts(bytes)?;
    let mut out = format!("format_version={version}\n{config}");
    if !config.ends_with('\n') && !config.is_empty() {
        out.push('\n');
    }
    for (name, shape, values) in params {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        writeln!(out, "{name} {shape:?} min={min:.6e} max={max:.6e} mean={mean:.6e}").expect("writing to a String");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Matrix, SeededRng};
    use crate::pointcloud::{normalize_unit_sphere, PointCloud};

    fn model() -> Model {
        Model::new(ModelConfig {
            num_points: 16,
            num_classes: 3,
            seed: 4,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let meta = vec![("class_names".to_string(), "a,b,c".to_string())];
        let bytes = encode_checkpoint(&m, &meta).unwrap();
        let ck = decode_checkpoint(&bytes).unwrap();
        assert_eq!(ck.model, m);
        assert_eq!(ck.meta("class_names"), Some("a,b,c"));
        let mut rng = SeededRng::new(1);
        let pts = Matrix::from_fn(16, 3, |_, _| rng.uniform(-1.0, 1.0));
        let cloud = normalize_unit_sphere(&PointCloud::new(pts, None).unwrap()).unwrap();
        let a = m.forward(&cloud).unwrap().logits;
        let b = ck.model.forward(&cloud).unwrap().logits;
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = encode_checkpoint(&model(), &[]).unwrap();
        for cut in [0, 3, 7, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(decode_checkpoint(&bytes[..cut]).is_err(), "cut {cut}");
        }
    }

    #[test]
    fn version_and_magic_checked() {
        let mut bytes = encode_checkpoint(&model(), &[]).unwrap();
        bytes[4] = 2;
        match decode_checkpoint(&bytes) {
            Err(Error::VersionMismatch { found: 2, expected: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn dump_lists_parameters() {
        let m = model();
        let text = dump_checkpoint(&encode_checkpoint(&m, &[]).unwrap()).unwrap();
        assert!(text.starts_with("format_version=1\n"));
        assert!(text.contains("num_classes=3\n"));
        assert!(text.contains("head.bias [3]"));
        assert_eq!(
            text.lines().filter(|l| l.contains(" min=")).count(),
            m.param_specs().len()
        );
    }

    #[test]
    fn metadata_must_be_single_line() {
        let bad = vec![("k".to_string(), "a\nb".to_string())];
        assert!(encode_checkpoint(&model(), &bad).is_err());
    }
}
