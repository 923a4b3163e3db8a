//! Binary artifact formats.
//!
//! Two little-endian layouts share one versioning scheme:
//!
//! **Matrix files** (features, d-vectors, embeddings):
//!
//! ```text
//! magic        4 bytes  "DSVF"
//! version      u16
//! kind tag     u16 length + UTF-8 ("fbank", "mfcc_e_dd", "spliced:4", "dvector", ...)
//! rows (T)     u32
//! cols (D)     u32
//! frame_period f64      seconds per row; 0 for vector sets
//! data         T*D f32, row-major
//! ids          vector sets only: T entries of u16 length + UTF-8
//! ```
//!
//! **Archives** (networks, back-ends):
//!
//! ```text
//! magic        4 bytes  "DSVA"
//! version      u16
//! kind tag     u16 length + UTF-8 ("dvector-net", "e2e-net", "lda", "plda")
//! sections     u32 count, then per section:
//!   name       u16 length + UTF-8
//!   dtype      u8 (0 = f64, 1 = UTF-8 text)
//!   ndims      u8, then ndims x u64 shape
//!   payload    product(shape) f64, or shape[0] bytes of text
//! ```
//!
//! All writes go to a temporary sibling and are renamed into place.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::frontend::{FeatureKind, FeatureMatrix};

pub const FORMAT_VERSION: u16 = 1;
const MATRIX_MAGIC: &[u8; 4] = b"DSVF";
const ARCHIVE_MAGIC: &[u8; 4] = b"DSVA";

/// Writes `bytes` to `path` via a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

struct Writer(Vec<u8>);

impl Writer {
    fn new(magic: &[u8; 4], kind: &str) -> Self {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(magic);
        w.u16(FORMAT_VERSION);
        w.str(kind);
        w
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic and version, returns the reader and the kind tag.
    fn open(buf: &'a [u8], magic: &[u8; 4]) -> Result<(Self, String)> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != magic {
            return Err(Error::format("bad magic bytes"));
        }
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let kind = r.str()?;
        Ok((r, kind))
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format("truncated artifact"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format("invalid UTF-8"))
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format("trailing bytes after artifact payload"));
        }
        Ok(())
    }
}

fn encode_matrix(kind: &str, rows: &Array2<f64>, frame_period: f64, ids: Option<&[String]>) -> Vec<u8> {
    let mut w = Writer::new(MATRIX_MAGIC, kind);
    w.u32(rows.nrows() as u32);
    w.u32(rows.ncols() as u32);
    w.f64(frame_period);
    for v in rows.iter() {
        w.f32(*v as f32);
    }
    if let Some(ids) = ids {
        for id in ids {
            w.str(id);
        }
    }
    w.0
}

fn decode_matrix(buf: &[u8]) -> Result<(String, Array2<f64>, f64, Reader<'_>)> {
    let (mut r, kind) = Reader::open(buf, MATRIX_MAGIC)?;
    let t = r.u32()? as usize;
    let d = r.u32()? as usize;
    let frame_period = r.f64()?;
    let mut data = Vec::with_capacity(t.saturating_mul(d).min(buf.len()));
    for _ in 0..t * d {
        data.push(r.f32()? as f64);
    }
    let m = Array2::from_shape_vec((t, d), data).map_err(|e| Error::format(e.to_string()))?;
    Ok((kind, m, frame_period, r))
}

pub fn encode_features(feat: &FeatureMatrix) -> Vec<u8> {
    encode_matrix(&feat.kind().tag(), feat.frames(), feat.frame_period(), None)
}

pub fn decode_features(buf: &[u8]) -> Result<FeatureMatrix> {
    let (kind, frames, period, r) = decode_matrix(buf)?;
    r.finish()?;
    FeatureMatrix::new(frames, period, FeatureKind::from_tag(&kind)?)
        .map_err(|e| Error::format(e.to_string()))
}

pub fn write_features(path: &Path, feat: &FeatureMatrix) -> Result<()> {
    write_atomic(path, &encode_features(feat))
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    decode_features(&read_file(path)?)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

/// Utterance-level vectors with their ids (d-vectors or embeddings).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSet {
    pub kind: String,
    pub ids: Vec<String>,
    pub vectors: Array2<f64>,
}

impl VectorSet {
    pub fn encode(&self) -> Vec<u8> {
        encode_matrix(&self.kind, &self.vectors, 0.0, Some(&self.ids))
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let (kind, vectors, _, mut r) = decode_matrix(buf)?;
        let ids = (0..vectors.nrows()).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Ok(Self { kind, ids, vectors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SectionData {
    Real { shape: Vec<usize>, values: Vec<f64> },
    Text(String),
}

/// Named sections of reals or text under one kind tag.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Archive {
    pub kind: String,
    pub sections: Vec<(String, SectionData)>,
}

impl Archive {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            sections: Vec::new(),
        }
    }

    pub fn push_real(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.sections
            .push((name.into(), SectionData::Real { shape, values }));
    }

    pub fn push_text(&mut self, name: impl Into<String>, text: impl Into<String>) {
        self.sections.push((name.into(), SectionData::Text(text.into())));
    }

    fn get(&self, name: &str) -> Result<&SectionData> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d)
            .ok_or_else(|| Error::format(format!("{} archive lacks section `{name}`", self.kind)))
    }

    pub fn real(&self, name: &str) -> Result<(&[usize], &[f64])> {
        match self.get(name)? {
            SectionData::Real { shape, values } => Ok((shape, values)),
            SectionData::Text(_) => Err(Error::format(format!("section `{name}` is not numeric"))),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.get(name)? {
            SectionData::Text(t) => Ok(t),
            SectionData::Real { .. } => Err(Error::format(format!("section `{name}` is not text"))),
        }
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::format(format!(
                "expected a `{kind}` artifact, found `{}`",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(ARCHIVE_MAGIC, &self.kind);
        w.u32(self.sections.len() as u32);
        for (name, data) in &self.sections {
            w.str(name);
            match data {
                SectionData::Real { shape, values } => {
                    w.u8(0);
                    w.u8(shape.len() as u8);
                    shape.iter().for_each(|&s| w.u64(s as u64));
                    values.iter().for_each(|&v| w.f64(v));
                }
                SectionData::Text(t) => {
                    w.u8(1);
                    w.u8(1);
                    w.u64(t.len() as u64);
                    w.0.extend_from_slice(t.as_bytes());
                }
            }
        }
        w.0
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let (mut r, kind) = Reader::open(buf, ARCHIVE_MAGIC)?;
        let n = r.u32()?;
        let mut sections = Vec::new();
        for _ in 0..n {
            let name = r.str()?;
            let dtype = r.u8()?;
            let ndims = r.u8()? as usize;
            let shape = (0..ndims)
                .map(|_| r.u64().map(|v| v as usize))
                .collect::<Result<Vec<_>>>()?;
            let data = match dtype {
                0 => {
                    let count: usize = shape.iter().product();
                    if count > buf.len() {
                        return Err(Error::format("section larger than file"));
                    }
                    let values = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                    SectionData::Real { shape, values }
                }
                1 => {
                    let len = *shape.first().ok_or_else(|| Error::format("text without length"))?;
                    let bytes = r.take(len)?;
                    SectionData::Text(
                        String::from_utf8(bytes.to_vec())
                            .map_err(|_| Error::format("invalid UTF-8"))?,
                    )
                }
                other => return Err(Error::format(format!("unknown section dtype {other}"))),
            };
            sections.push((name, data));
        }
        r.finish()?;
        Ok(Self { kind, sections })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
