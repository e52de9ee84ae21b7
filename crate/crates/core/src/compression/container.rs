//! The `PSNV1` model file.
//!
//! All integers little-endian:
//!
//! ```text
//! magic      5 bytes   "PSNV1"
//! version    u16
//! arch_len   u32, then arch_len bytes of UTF-8 JSON (ArchConfig)
//! count      u32       number of tensor records
//! records    count x record
//! crc32      u32       over every preceding byte
//!
//! record:
//!   name_len u16, name bytes
//!   ndim u8, ndim x u32 dims
//!   bits u8                      0 = raw f32 payload follows
//!   raw:    numel x f32
//!   quantized:
//!     theta_min f64, scale f64
//!     entries u32, entries x (symbol u16, length u8)   0 entries = previous record's table
//!     symbols u32, stream_len u32, stream bytes
//! ```

use serde::Serialize;

use super::huffman::HuffmanTable;
use super::quant::{dequantize, QuantTensor};
use crate::arch::ArchConfig;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numerics::{Parameter, Tensor};

pub const MAGIC: &[u8; 5] = b"PSNV1";
pub const VERSION: u16 = 1;

/// Payload of one tensor record.
pub(crate) enum RecordBody<'a> {
    Raw(&'a Tensor<f32>),
    Quantized {
        q: &'a QuantTensor,
        /// `None` reuses the previous record's table.
        table: Option<&'a HuffmanTable>,
        stream: &'a [u8],
    },
}

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub(crate) fn new(arch: &ArchConfig, tensors: usize) -> Result<Self> {
        let json = serde_json::to_vec(arch).map_err(|e| Error::config(format!("cannot serialize arch: {e}")))?;
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
        buf.extend_from_slice(&json);
        buf.extend_from_slice(&(tensors as u32).to_le_bytes());
        Ok(Self { buf })
    }

    pub(crate) fn record(&mut self, name: &str, shape: &[usize], body: RecordBody<'_>) {
        let b = &mut self.buf;
        b.extend_from_slice(&(name.len() as u16).to_le_bytes());
        b.extend_from_slice(name.as_bytes());
        b.push(shape.len() as u8);
        for &d in shape {
            b.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match body {
            RecordBody::Raw(t) => {
                b.push(0);
                for v in t.data() {
                    b.extend_from_slice(&v.to_le_bytes());
                }
            }
            RecordBody::Quantized { q, table, stream } => {
                b.push(q.bits);
                b.extend_from_slice(&q.theta_min.to_le_bytes());
                b.extend_from_slice(&q.scale.to_le_bytes());
                match table {
                    Some(t) => {
                        b.extend_from_slice(&(t.lengths().len() as u32).to_le_bytes());
                        for &(s, l) in t.lengths() {
                            b.extend_from_slice(&s.to_le_bytes());
                            b.push(l);
                        }
                    }
                    None => b.extend_from_slice(&0u32.to_le_bytes()),
                }
                b.extend_from_slice(&(q.codes.len() as u32).to_le_bytes());
                b.extend_from_slice(&(stream.len() as u32).to_le_bytes());
                b.extend_from_slice(stream);
            }
        }
    }

    pub(crate) fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

/// Byte accounting and header facts for one tensor record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    /// `None` for raw 32-bit storage.
    pub bits: Option<u8>,
    pub numel: usize,
    pub zeros: usize,
    pub table_entries: usize,
    pub header_bytes: usize,
    pub table_bytes: usize,
    pub payload_bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FileInfo {
    pub version: u16,
    pub arch: ArchConfig,
    pub param_count: usize,
    pub zeros: usize,
    /// Quantization bits shared by every record, `None` for a raw checkpoint.
    pub bits: Option<u8>,
    /// magic + version + arch JSON + tensor count.
    pub header_bytes: usize,
    pub checksum_bytes: usize,
    pub total_bytes: usize,
    pub tensors: Vec<TensorInfo>,
}

impl FileInfo {
    /// Sum of every accounted region; equals `total_bytes` for a well-formed file.
    pub fn accounted_bytes(&self) -> usize {
        self.header_bytes
            + self.checksum_bytes
            + self.tensors.iter().map(|t| t.header_bytes + t.table_bytes + t.payload_bytes).sum::<usize>()
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::corrupt(field, format!("needs {n} bytes at offset {}, file ends first", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, field: &'static str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u16(&mut self, field: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().unwrap()))
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn f64(&mut self, field: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
}

/// Parsed file: architecture, dequantized parameters, and byte accounting.
pub struct Parsed {
    pub arch: ArchConfig,
    pub params: ModelParams<f32>,
    pub info: FileInfo,
}

pub fn parse(bytes: &[u8]) -> Result<Parsed> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::corrupt("magic", "file does not start with PSNV1"));
    }
    let mut r = Reader { buf: bytes, pos: MAGIC.len() };
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::corrupt("version", format!("unsupported version {version}, expected {VERSION}")));
    }
    if bytes.len() < MAGIC.len() + 2 + 4 {
        return Err(Error::corrupt("checksum", "file too short to hold a checksum"));
    }
    let body_end = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let actual = crc32fast::hash(&bytes[..body_end]);
    if stored != actual {
        return Err(Error::corrupt("checksum", format!("stored {stored:08x}, computed {actual:08x}")));
    }
    let mut r = Reader { buf: &bytes[..body_end], pos: r.pos };
    let arch_len = r.u32("arch length")? as usize;
    let arch_json = r.take(arch_len, "arch")?;
    let arch: ArchConfig = serde_json::from_slice(arch_json).map_err(|e| Error::corrupt("arch", e.to_string()))?;
    let count = r.u32("tensor count")? as usize;
    let header_bytes = r.pos;

    let mut params = Vec::with_capacity(count.min(1024));
    let mut tensors = Vec::with_capacity(count.min(1024));
    let mut table: Option<HuffmanTable> = None;
    let mut all_bits = Vec::new();
    for _ in 0..count {
        let start = r.pos;
        let name_len = r.u16("tensor name")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::corrupt("tensor name", "not valid UTF-8"))?
            .to_string();
        let ndim = r.u8("tensor shape")? as usize;
        let shape = (0..ndim).map(|_| r.u32("tensor shape").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        if ndim == 0 || numel == 0 {
            return Err(Error::corrupt("tensor shape", format!("{name} has empty shape {shape:?}")));
        }
        let bits = r.u8("bits")?;
        let (value, table_entries, table_bytes, payload_bytes, header) = if bits == 0 {
            let header = r.pos - start;
            let raw = r.take(numel * 4, "raw payload")?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            (Tensor::new(shape.clone(), data)?, 0, 0, numel * 4, header)
        } else {
            if bits > 16 {
                return Err(Error::corrupt("bits", format!("{name} declares {bits} bits")));
            }
            let theta_min = r.f64("theta_min")?;
            let scale = r.f64("scale")?;
            let header = r.pos - start;
            let tstart = r.pos;
            let entries = r.u32("code-length table")? as usize;
            if entries > 0 {
                let lengths = (0..entries)
                    .map(|_| Ok((r.u16("code-length table")?, r.u8("code-length table")?)))
                    .collect::<Result<Vec<_>>>()?;
                table = Some(
                    HuffmanTable::from_lengths(lengths)
                        .map_err(|e| Error::corrupt("code-length table", e.to_string()))?,
                );
            }
            let t = table.as_ref().ok_or_else(|| {
                Error::corrupt("code-length table", format!("{name} reuses a table but none precedes it"))
            })?;
            let table_bytes = r.pos - tstart;
            let pstart = r.pos;
            let symbols = r.u32("symbol count")? as usize;
            if symbols != numel {
                return Err(Error::corrupt("symbol count", format!("{name}: {symbols} symbols for {numel} elements")));
            }
            let stream_len = r.u32("bitstream length")? as usize;
            let stream = r.take(stream_len, "bitstream")?;
            let codes = t.decode(stream, numel)?;
            let top = (1u32 << bits) - 1;
            if let Some(c) = codes.iter().find(|&&c| c as u32 > top) {
                return Err(Error::corrupt("bitstream", format!("{name}: code {c} exceeds {bits} bits")));
            }
            let q = QuantTensor { shape: shape.clone(), bits, theta_min, scale, codes };
            all_bits.push(bits);
            (dequantize(&q)?, entries, table_bytes, r.pos - pstart, header)
        };
        tensors.push(TensorInfo {
            name: name.clone(),
            shape,
            bits: (bits > 0).then_some(bits),
            numel,
            zeros: value.data().iter().filter(|&&v| v == 0.0).count(),
            table_entries,
            header_bytes: header,
            table_bytes,
            payload_bytes,
        });
        params.push(Parameter::new(name, value));
    }
    if r.pos != body_end {
        return Err(Error::corrupt("records", format!("{} trailing bytes after the last record", body_end - r.pos)));
    }
    let bits = match all_bits.first() {
        Some(&b) if all_bits.len() == tensors.len() && all_bits.iter().all(|&x| x == b) => Some(b),
        _ => None,
    };
    let params = ModelParams { params };
    let info = FileInfo {
        version,
        arch: arch.clone(),
        param_count: params.count(),
        zeros: tensors.iter().map(|t| t.zeros).sum(),
        bits,
        header_bytes,
        checksum_bytes: 4,
        total_bytes: bytes.len(),
        tensors,
    };
    Ok(Parsed { arch, params, info })
}
