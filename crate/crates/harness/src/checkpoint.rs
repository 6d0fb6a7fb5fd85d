//! Binary parameter files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "AMRCKPT\0"
//! version  u32      FORMAT_VERSION
//! kind     u8       0 binary linear, 1 multiclass linear, 2 MLP
//! tensors  u32      number of entries in the shape table
//! shapes   tensors × (tag u8, rows u64, cols u64)
//! payload  f64 LE, tensors in shape-table order, row-major
//! ```
//!
//! Tags name the tensor role so that optional biases can be absent.

use std::path::Path;

use amr_core::models::{BinaryLinear, LinearParams, MlpParams, Model};
use amr_core::ndops::Matrix;

use crate::error::{format_err, io_err, Result};

pub const MAGIC: [u8; 8] = *b"AMRCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

const KIND_BINARY: u8 = 0;
const KIND_LINEAR: u8 = 1;
const KIND_MLP: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tag {
    Weights = 0,
    Bias = 1,
    HiddenWeights = 2,
    HiddenBias = 3,
}

impl Tag {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => Tag::Weights,
            1 => Tag::Bias,
            2 => Tag::HiddenWeights,
            3 => Tag::HiddenBias,
            _ => return None,
        })
    }
}

struct Entry<'a> {
    tag: Tag,
    rows: usize,
    cols: usize,
    data: &'a [f64],
}

fn vector(tag: Tag, v: &[f64]) -> Entry<'_> {
    Entry { tag, rows: 1, cols: v.len(), data: v }
}

fn matrix(tag: Tag, m: &Matrix) -> Entry<'_> {
    Entry { tag, rows: m.rows(), cols: m.cols(), data: m.as_slice() }
}

fn entries(model: &Model) -> (u8, Vec<Entry<'_>>) {
    match model {
        Model::Binary(p) => {
            let mut e = vec![vector(Tag::Weights, &p.w)];
            if let Some(b) = &p.bias {
                e.push(vector(Tag::Bias, std::slice::from_ref(b)));
            }
            (KIND_BINARY, e)
        }
        Model::Linear(p) => {
            let mut e = vec![matrix(Tag::Weights, &p.weights)];
            if let Some(b) = &p.bias {
                e.push(vector(Tag::Bias, b));
            }
            (KIND_LINEAR, e)
        }
        Model::Mlp(p) => {
            let mut e = vec![matrix(Tag::HiddenWeights, &p.w1)];
            if let Some(b) = &p.b1 {
                e.push(vector(Tag::HiddenBias, b));
            }
            e.push(matrix(Tag::Weights, &p.w2));
            if let Some(b) = &p.b2 {
                e.push(vector(Tag::Bias, b));
            }
            (KIND_MLP, e)
        }
    }
}

pub fn encode(model: &Model) -> Vec<u8> {
    let (kind, entries) = entries(model);
    let payload: usize = entries.iter().map(|e| e.data.len()).sum();
    let mut out = Vec::with_capacity(17 + entries.len() * 17 + payload * 8);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(kind);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in &entries {
        out.push(e.tag as u8);
        out.extend_from_slice(&(e.rows as u64).to_le_bytes());
        out.extend_from_slice(&(e.cols as u64).to_le_bytes());
    }
    for e in &entries {
        for v in e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(format_err(self.path, format!("corrupt checkpoint: truncated {what} at byte {}", self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint; `path` is only used in error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Model> {
    let corrupt = |reason: String| format_err(path, format!("corrupt checkpoint: {reason}"));
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(format_err(path, "not a checkpoint file (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(format_err(path, format!("unsupported checkpoint version {version}, expected {FORMAT_VERSION}")));
    }
    let kind = r.u8("model kind")?;
    let count = r.u32("shape table")? as usize;
    if count > 8 {
        return Err(corrupt(format!("{count} tensors in shape table")));
    }
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let tag = r.u8("shape table")?;
        let tag = Tag::from_u8(tag).ok_or_else(|| corrupt(format!("unknown tensor tag {tag}")))?;
        let rows = r.u64("shape table")?;
        let cols = r.u64("shape table")?;
        let len = rows.checked_mul(cols).filter(|&n| n <= (bytes.len() / 8) as u64);
        let len = len.ok_or_else(|| corrupt(format!("tensor of shape {rows} × {cols} exceeds the file")))?;
        shapes.push((tag, rows as usize, cols as usize, len as usize));
    }
    let mut tensors = Vec::with_capacity(count);
    for &(tag, rows, cols, len) in &shapes {
        let raw = r.take(len * 8, "payload")?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push((tag, rows, cols, data));
    }
    if r.pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let tags: Vec<Tag> = tensors.iter().map(|t| t.0).collect();
    let mut it = tensors.into_iter();
    let mut next_matrix = || -> Result<Matrix> {
        let (_, rows, cols, data) = it.next().unwrap();
        Ok(Matrix::from_vec(rows, cols, data)?)
    };
    let model = match (kind, tags.as_slice()) {
        (KIND_BINARY, [Tag::Weights]) | (KIND_BINARY, [Tag::Weights, Tag::Bias]) => {
            let w = next_matrix()?;
            if w.rows() != 1 {
                return Err(corrupt("binary weights must be a single row".into()));
            }
            let bias = if tags.len() == 2 {
                let b = next_matrix()?;
                if b.as_slice().len() != 1 {
                    return Err(corrupt("binary bias must be a scalar".into()));
                }
                Some(b.as_slice()[0])
            } else {
                None
            };
            Model::Binary(BinaryLinear { w: w.into_vec(), bias })
        }
        (KIND_LINEAR, [Tag::Weights]) | (KIND_LINEAR, [Tag::Weights, Tag::Bias]) => {
            let weights = next_matrix()?;
            let bias = if tags.len() == 2 { Some(next_matrix()?.into_vec()) } else { None };
            Model::Linear(LinearParams { weights, bias })
        }
        (KIND_MLP, t) if is_mlp_layout(t) => {
            let w1 = next_matrix()?;
            let b1 = if t.contains(&Tag::HiddenBias) { Some(next_matrix()?.into_vec()) } else { None };
            let w2 = next_matrix()?;
            let b2 = if t.contains(&Tag::Bias) { Some(next_matrix()?.into_vec()) } else { None };
            Model::Mlp(MlpParams { w1, b1, w2, b2 })
        }
        _ => return Err(corrupt(format!("shape table {tags:?} does not fit model kind {kind}"))),
    };
    model.validate().map_err(|e| corrupt(e.to_string()))?;
    Ok(model)
}

fn is_mlp_layout(t: &[Tag]) -> bool {
    use Tag::*;
    matches!(
        t,
        [HiddenWeights, Weights] | [HiddenWeights, HiddenBias, Weights] | [HiddenWeights, Weights, Bias] | [HiddenWeights, HiddenBias, Weights, Bias]
    )
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(model)).map_err(io_err(path))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use amr_core::models::ModelKind;

    fn bits(m: &Model) -> Vec<u64> {
        m.tensors().iter().flat_map(|t| t.iter().map(|v| v.to_bits())).collect()
    }

    #[test]
    fn round_trip_every_kind() {
        let p = Path::new("mem");
        for (kind, bias) in [
            (ModelKind::BinaryLinear, false),
            (ModelKind::BinaryLinear, true),
            (ModelKind::Linear, true),
            (ModelKind::Linear, false),
            (ModelKind::Mlp { hidden: 7 }, true),
            (ModelKind::Mlp { hidden: 3 }, false),
        ] {
            let classes = if kind == ModelKind::BinaryLinear { 2 } else { 4 };
            let m = Model::init(kind, 5, classes, bias, 11).unwrap();
            let back = decode(&encode(&m), p).unwrap();
            assert_eq!(back.kind(), m.kind());
            assert_eq!(bits(&back), bits(&m));
        }
    }

    #[test]
    fn special_values_survive() {
        let m = Model::Binary(BinaryLinear { w: vec![-0.0, f64::MIN_POSITIVE / 2.0, 1e308], bias: Some(-1.5) });
        let back = decode(&encode(&m), Path::new("mem")).unwrap();
        assert_eq!(bits(&back), bits(&m));
    }

    #[test]
    fn rejects_bad_headers() {
        let p = Path::new("mem");
        let good = encode(&Model::init(ModelKind::Linear, 3, 3, true, 0).unwrap());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode(&bad, p).unwrap_err().to_string().contains("magic"));
        let mut bad = good.clone();
        bad[8] = 9;
        assert!(decode(&bad, p).unwrap_err().to_string().contains("version"));
        let mut bad = good.clone();
        bad[12] = KIND_MLP;
        assert!(decode(&bad, p).unwrap_err().to_string().contains("corrupt"));
        for cut in [0, 5, 20, good.len() - 1] {
            assert!(decode(&good[..cut], p).unwrap_err().to_string().contains("corrupt"));
        }
        let mut long = good;
        long.push(0);
        assert!(decode(&long, p).unwrap_err().to_string().contains("trailing"));
    }
}
