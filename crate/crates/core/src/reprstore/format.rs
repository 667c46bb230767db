//! The `.prst` layer store container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "PRST"
//! 4       4     version (u32) = 1
//! 8       4     model_id byte length L (u32)
//! 12      L     model_id (UTF-8)
//! 12+L    4     layer_id (i32)
//! 16+L    4     dim D (u32)
//! 20+L    8     hop_s (f64)
//! 28+L    8     offset_s (f64)
//! 36+L    8     utterance count U (u64)
//! then U records:
//!         4     utterance id byte length K (u32)
//!         K     utterance id (UTF-8)
//!         4     n_frames N (u32)
//!         4·N·D frames, row-major binary32
//! ```

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"PRST";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a layer store: {0}")]
    Format(String),
    #[error("corrupt layer store at byte {offset}: {message}")]
    Corrupt { offset: u64, message: String },
    #[error("invalid layer store: {0}")]
    Invalid(String),
    #[error("utterance '{0}' is not in the store")]
    UnknownUtterance(String),
    #[error("no target rows could be pooled ({skipped} skipped)")]
    EmptyMatrix { skipped: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreHeader {
    pub model_id: String,
    /// CNN layers are negative, the log-mel baseline is 0, transformer
    /// blocks are positive.
    pub layer_id: i32,
    pub dim: usize,
    pub hop_s: f64,
    pub offset_s: f64,
}

impl StoreHeader {
    pub fn validate(&self) -> Result<(), StoreError> {
        if self.dim == 0 || self.dim > u32::MAX as usize {
            return Err(StoreError::Invalid(format!("dim {} out of range", self.dim)));
        }
        if !(self.hop_s.is_finite() && self.hop_s > 0.0) {
            return Err(StoreError::Invalid(format!("hop_s {} must be positive", self.hop_s)));
        }
        if !(self.offset_s.is_finite() && self.offset_s >= 0.0) {
            return Err(StoreError::Invalid(format!(
                "offset_s {} must be nonnegative",
                self.offset_s
            )));
        }
        Ok(())
    }

    /// Start and end time of frame `t`.
    pub fn frame_span(&self, t: usize) -> (f64, f64) {
        (
            self.offset_s + t as f64 * self.hop_s,
            self.offset_s + (t + 1) as f64 * self.hop_s,
        )
    }
}

/// Row-major `n_frames × dim` binary32 frames of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    n_frames: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FrameMatrix {
    pub fn new(n_frames: usize, dim: usize, data: Vec<f32>) -> Result<Self, StoreError> {
        if n_frames == 0 {
            return Err(StoreError::Invalid("utterance with zero frames".into()));
        }
        if data.len() != n_frames * dim {
            return Err(StoreError::Invalid(format!(
                "frame payload has {} values, expected {n_frames}×{dim}",
                data.len()
            )));
        }
        Ok(Self { n_frames, dim, data })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// True when both matrices hold identical bit patterns.
    pub fn bit_eq(&self, other: &FrameMatrix) -> bool {
        self.n_frames == other.n_frames
            && self.dim == other.dim
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Per-utterance frame matrices of one model layer.
#[derive(Debug, Clone)]
pub struct LayerStore {
    header: StoreHeader,
    records: Vec<(String, FrameMatrix)>,
    index: HashMap<String, usize>,
}

impl PartialEq for LayerStore {
    fn eq(&self, other: &Self) -> bool {
        self.header == other.header && self.records == other.records
    }
}

impl LayerStore {
    pub fn new(header: StoreHeader, records: Vec<(String, FrameMatrix)>) -> Result<Self, StoreError> {
        header.validate()?;
        let mut index = HashMap::with_capacity(records.len());
        for (i, (id, frames)) in records.iter().enumerate() {
            if frames.dim() != header.dim {
                return Err(StoreError::Invalid(format!(
                    "utterance '{id}' has dim {}, header says {}",
                    frames.dim(),
                    header.dim
                )));
            }
            if frames.n_frames() > u32::MAX as usize {
                return Err(StoreError::Invalid(format!("utterance '{id}' has too many frames")));
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(StoreError::Invalid(format!("duplicate utterance '{id}'")));
            }
        }
        Ok(Self { header, records, index })
    }

    pub fn header(&self) -> &StoreHeader {
        &self.header
    }

    pub fn dim(&self) -> usize {
        self.header.dim
    }

    pub fn layer_id(&self) -> i32 {
        self.header.layer_id
    }

    pub fn records(&self) -> &[(String, FrameMatrix)] {
        &self.records
    }

    pub fn get(&self, utterance_id: &str) -> Option<&FrameMatrix> {
        self.index.get(utterance_id).map(|&i| &self.records[i].1)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Applies `f` to every frame row, producing a store of dimension `dim`.
    pub fn map_frames(&self, dim: usize, mut f: impl FnMut(&[f32]) -> Vec<f32>) -> Result<LayerStore, StoreError> {
        let header = StoreHeader {
            dim,
            ..self.header.clone()
        };
        let records = self
            .records
            .iter()
            .map(|(id, m)| {
                let data: Vec<f32> = (0..m.n_frames()).flat_map(|t| f(m.row(t))).collect();
                FrameMatrix::new(m.n_frames(), dim, data).map(|fm| (id.clone(), fm))
            })
            .collect::<Result<Vec<_>, _>>()?;
        LayerStore::new(header, records)
    }

    /// Exact byte length of the encoded store.
    pub fn encoded_len(&self) -> u64 {
        let header = 4 + 4 + 4 + self.header.model_id.len() + 4 + 4 + 8 + 8 + 8;
        let body: usize = self
            .records
            .iter()
            .map(|(id, m)| 4 + id.len() + 4 + 4 * m.data().len())
            .sum();
        (header + body) as u64
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), StoreError> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_str(&mut w, &self.header.model_id)?;
        w.write_all(&self.header.layer_id.to_le_bytes())?;
        w.write_all(&(self.header.dim as u32).to_le_bytes())?;
        w.write_all(&self.header.hop_s.to_le_bytes())?;
        w.write_all(&self.header.offset_s.to_le_bytes())?;
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        for (id, m) in &self.records {
            write_str(&mut w, id)?;
            w.write_all(&(m.n_frames() as u32).to_le_bytes())?;
            for v in m.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<LayerStore, StoreError> {
        let mut c = Cursor { inner: r, offset: 0 };
        let (header, count) = read_header(&mut c)?;
        let dim = header.dim;

        let mut records = Vec::new();
        for _ in 0..count {
            let id = c.string()?;
            let at = c.offset;
            let n_frames = u32::from_le_bytes(c.array()?) as usize;
            if n_frames == 0 {
                return Err(c.corrupt_at(at, format!("utterance '{id}' has zero frames")));
            }
            let n_values = n_frames
                .checked_mul(dim)
                .ok_or_else(|| c.corrupt_at(at, "frame count overflow".into()))?;
            let mut bytes = vec![0u8; n_values * 4];
            c.fill(&mut bytes)?;
            let data = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            records.push((id, FrameMatrix::new(n_frames, dim, data)?));
        }
        let mut probe = [0u8; 1];
        match c.inner.read(&mut probe) {
            Ok(0) => {}
            Ok(_) => return Err(c.corrupt_at(c.offset, "trailing bytes after last record".into())),
            Err(e) => return Err(e.into()),
        }
        LayerStore::new(header, records)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let path = path.as_ref();
        let tmp = path.with_extension("prst.tmp");
        {
            let file = std::fs::File::create(&tmp)?;
            self.write_to(BufWriter::new(file))?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<LayerStore, StoreError> {
        let file = std::fs::File::open(path)?;
        LayerStore::read_from(BufReader::new(file))
    }

    /// Reads only the header of a store file.
    pub fn load_header(path: impl AsRef<Path>) -> Result<StoreHeader, StoreError> {
        let file = std::fs::File::open(path)?;
        let mut c = Cursor {
            inner: BufReader::new(file),
            offset: 0,
        };
        Ok(read_header(&mut c)?.0)
    }
}

fn read_header<R: Read>(c: &mut Cursor<R>) -> Result<(StoreHeader, u64), StoreError> {
    let magic: [u8; 4] = c.array()?;
    if magic != MAGIC {
        return Err(StoreError::Format(format!("bad magic {magic:?}")));
    }
    let version = u32::from_le_bytes(c.array()?);
    if version != VERSION {
        return Err(StoreError::Format(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let model_id = c.string()?;
    let layer_id = i32::from_le_bytes(c.array()?);
    let dim = u32::from_le_bytes(c.array()?) as usize;
    let hop_s = f64::from_le_bytes(c.array()?);
    let offset_s = f64::from_le_bytes(c.array()?);
    let count = u64::from_le_bytes(c.array()?);
    let header = StoreHeader {
        model_id,
        layer_id,
        dim,
        hop_s,
        offset_s,
    };
    header.validate().map_err(|e| StoreError::Format(e.to_string()))?;
    Ok((header, count))
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    let len = u32::try_from(s.len()).map_err(|_| std::io::Error::other("string too long"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(s.as_bytes())
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn corrupt_at(&self, offset: u64, message: String) -> StoreError {
        StoreError::Corrupt { offset, message }
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<(), StoreError> {
        let mut done = 0;
        while done < buf.len() {
            match self.inner.read(&mut buf[done..]) {
                Ok(0) => {
                    return Err(self.corrupt_at(
                        self.offset + done as u64,
                        format!("truncated: needed {} more bytes", buf.len() - done),
                    ))
                }
                Ok(n) => done += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], StoreError> {
        let mut b = [0u8; N];
        self.fill(&mut b)?;
        Ok(b)
    }

    fn string(&mut self) -> Result<String, StoreError> {
        let at = self.offset;
        let len = u32::from_le_bytes(self.array()?) as usize;
        if len > 1 << 20 {
            return Err(self.corrupt_at(at, format!("implausible string length {len}")));
        }
        let mut bytes = vec![0u8; len];
        self.fill(&mut bytes)?;
        String::from_utf8(bytes).map_err(|_| self.corrupt_at(at, "string is not UTF-8".into()))
    }
}

/// Reads a manifest CSV (`utterance_id,audio_path`).
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<(String, String)>, StoreError> {
    let mut r = csv::Reader::from_path(path).map_err(std::io::Error::other)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(std::io::Error::other)?;
        if rec.len() != 2 {
            return Err(StoreError::Invalid(format!(
                "manifest row {:?} must have 2 fields",
                rec.position().map(|p| p.line())
            )));
        }
        out.push((rec[0].to_string(), rec[1].to_string()));
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, rows: &[(String, String)]) -> Result<(), StoreError> {
    let mut w = csv::Writer::from_path(path).map_err(std::io::Error::other)?;
    w.write_record(["utterance_id", "audio_path"])
        .map_err(std::io::Error::other)?;
    for (id, p) in rows {
        w.write_record([id, p]).map_err(std::io::Error::other)?;
    }
    w.flush()?;
    Ok(())
}
