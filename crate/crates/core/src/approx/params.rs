//! Flat named parameter vectors and bit-exact binary checkpoints.
//!
//! Every learnable component (planner, inverse dynamics, critic, discriminator)
//! stores its parameters as one contiguous `Vec<f64>` described by a [`Layout`]
//! of named, non-overlapping slices.  A [`Checkpoint`] bundles several named
//! parameter vectors into a versioned little-endian binary file that round-trips
//! to the exact same bytes, which is what makes transfer experiments able to
//! prove the reloaded planner is bitwise identical to the saved one.

use super::ApproxError;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

/// One named slice of a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceDef {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Ordered, non-overlapping, exhaustive slice map over a flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    slices: Vec<SliceDef>,
    total: usize,
}

impl Layout {
    /// Builds a layout from `(name, len)` pairs laid out contiguously in order.
    /// Panics on duplicate names (a programming error in model definitions).
    pub fn new(parts: &[(&str, usize)]) -> Self {
        let mut slices = Vec::with_capacity(parts.len());
        let mut offset = 0;
        for (name, len) in parts {
            assert!(
                !slices.iter().any(|s: &SliceDef| s.name == *name),
                "duplicate slice name `{name}`"
            );
            slices.push(SliceDef {
                name: (*name).to_string(),
                offset,
                len: *len,
            });
            offset += len;
        }
        Layout {
            slices,
            total: offset,
        }
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn slices(&self) -> &[SliceDef] {
        &self.slices
    }

    /// Byte-free index range of a named slice.
    pub fn range(&self, name: &str) -> Result<std::ops::Range<usize>, ApproxError> {
        self.slices
            .iter()
            .find(|s| s.name == name)
            .map(|s| s.offset..s.offset + s.len)
            .ok_or_else(|| ApproxError::UnknownSlice {
                name: name.to_string(),
            })
    }

    pub fn has(&self, name: &str) -> bool {
        self.slices.iter().any(|s| s.name == name)
    }
}

/// Flat `f64` parameter vector plus its [`Layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub layout: Layout,
    pub values: Vec<f64>,
}

impl ParamVector {
    /// Zero-initialized vector for a layout.
    pub fn zeros(layout: Layout) -> Self {
        let n = layout.total_len();
        ParamVector {
            layout,
            values: vec![0.0; n],
        }
    }

    /// Vector from existing values; errors if the length disagrees with the layout.
    pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self, ApproxError> {
        if values.len() != layout.total_len() {
            return Err(ApproxError::DimensionMismatch {
                context: "ParamVector::from_values",
                expected: layout.total_len().to_string(),
                got: values.len().to_string(),
            });
        }
        Ok(ParamVector { layout, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Borrow a named slice.
    pub fn slice(&self, name: &str) -> Result<&[f64], ApproxError> {
        Ok(&self.values[self.layout.range(name)?])
    }

    /// Mutably borrow a named slice.
    pub fn slice_mut(&mut self, name: &str) -> Result<&mut [f64], ApproxError> {
        let r = self.layout.range(name)?;
        Ok(&mut self.values[r])
    }

    /// Errors if any entry is non-finite.
    pub fn check_finite(&self, context: &'static str) -> Result<(), ApproxError> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(ApproxError::NonFinite { context })
        }
    }
}

/// Named collection of parameter vectors with bit-exact binary round-trip.
///
/// File format (all integers little-endian):
///
/// ```text
/// magic  "DPC1"                          4 bytes
/// meta   u32 length + UTF-8 payload      free-form description text
/// count  u32 number of sections
/// per section:
///   name        u32 length + UTF-8
///   slice count u32
///   per slice:  u32 name length + UTF-8, u64 element count
///   values      u64 element count + that many f64 bit patterns
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Free-form metadata (environment id, policy mode, dimensions) consulted
    /// by loaders to validate compatibility before touching parameters.
    pub meta: String,
    pub sections: Vec<(String, ParamVector)>,
}

const MAGIC: &[u8; 4] = b"DPC1";

impl Checkpoint {
    pub fn new(meta: String) -> Self {
        Checkpoint {
            meta,
            sections: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, params: ParamVector) {
        self.sections.push((name.to_string(), params));
    }

    /// Looks up a section by name.
    pub fn section(&self, name: &str) -> Option<&ParamVector> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p)
    }

    /// Serializes to bytes. The encoding is canonical: equal checkpoints always
    /// produce equal bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        write_str(&mut out, &self.meta);
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, pv) in &self.sections {
            write_str(&mut out, name);
            out.extend_from_slice(&(pv.layout.slices().len() as u32).to_le_bytes());
            for s in pv.layout.slices() {
                write_str(&mut out, &s.name);
                out.extend_from_slice(&(s.len as u64).to_le_bytes());
            }
            out.extend_from_slice(&(pv.values.len() as u64).to_le_bytes());
            for v in &pv.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Decodes from bytes, validating structure exhaustively.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ApproxError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4)?;
        if magic != MAGIC {
            return Err(ApproxError::MalformedCheckpoint {
                reason: "bad magic".to_string(),
            });
        }
        let meta = cur.read_str()?;
        let n_sections = cur.read_u32()? as usize;
        let mut sections = Vec::with_capacity(n_sections);
        for _ in 0..n_sections {
            let name = cur.read_str()?;
            let n_slices = cur.read_u32()? as usize;
            let mut parts: Vec<(String, usize)> = Vec::with_capacity(n_slices);
            for _ in 0..n_slices {
                let sname = cur.read_str()?;
                let len = cur.read_u64()? as usize;
                parts.push((sname, len));
            }
            let borrowed: Vec<(&str, usize)> =
                parts.iter().map(|(n, l)| (n.as_str(), *l)).collect();
            let layout = Layout::new(&borrowed);
            let n_values = cur.read_u64()? as usize;
            if n_values != layout.total_len() {
                return Err(ApproxError::MalformedCheckpoint {
                    reason: format!(
                        "section `{name}`: {n_values} values but layout wants {}",
                        layout.total_len()
                    ),
                });
            }
            let mut values = Vec::with_capacity(n_values);
            for _ in 0..n_values {
                values.push(f64::from_le_bytes(cur.take(8)?.try_into().unwrap()));
            }
            sections.push((name, ParamVector { layout, values }));
        }
        if cur.pos != bytes.len() {
            return Err(ApproxError::MalformedCheckpoint {
                reason: "trailing bytes".to_string(),
            });
        }
        Ok(Checkpoint { meta, sections })
    }

    pub fn write_to(&self, path: &Path) -> Result<(), ApproxError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self, ApproxError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Human-readable structural summary (section names, slice names, lengths,
    /// and value digests) for the checkpoint-inspection command.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "meta: {}", self.meta.replace('\n', " | "));
        let _ = writeln!(out, "sections: {}", self.sections.len());
        for (name, pv) in &self.sections {
            let norm: f64 = pv.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            let _ = writeln!(out, "  [{name}] {} parameters, l2 norm {:.6e}", pv.len(), norm);
            for s in pv.layout.slices() {
                let _ = writeln!(out, "    {} : offset {}, len {}", s.name, s.offset, s.len);
            }
        }
        out
    }
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ApproxError> {
        if self.pos + n > self.bytes.len() {
            return Err(ApproxError::MalformedCheckpoint {
                reason: "unexpected end of data".to_string(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn read_u32(&mut self) -> Result<u32, ApproxError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn read_u64(&mut self) -> Result<u64, ApproxError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn read_str(&mut self) -> Result<String, ApproxError> {
        let n = self.read_u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| ApproxError::MalformedCheckpoint {
            reason: "invalid UTF-8 in name".to_string(),
        })
    }
}
