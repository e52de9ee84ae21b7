//! Model compression: global pruning, per-tensor affine quantization, and
//! canonical Huffman coding into a checksummed container.

mod container;
mod huffman;
mod prune;
mod quant;

use serde::{Deserialize, Serialize};

pub use container::{FileInfo, TensorInfo, MAGIC, VERSION};
pub use huffman::{entropy, frequencies, HuffmanTable, MAX_CODE_LEN};
pub use prune::{prune_global, PruneMask, TensorMask};
pub use quant::{check_bits, dequantize, quantize, QuantTensor};

use crate::arch::ArchConfig;
use crate::error::Result;
use crate::model::ModelParams;
use container::{RecordBody, Writer};

/// How Huffman tables are shared between tensors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableMode {
    /// One table built from the symbol statistics of every tensor.
    #[default]
    Global,
    /// A separate table per tensor.
    PerTensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressOptions {
    pub bits: u8,
    pub sparsity: f64,
    pub table_mode: TableMode,
}

impl Default for CompressOptions {
    fn default() -> Self {
        Self { bits: 8, sparsity: 0.0, table_mode: TableMode::Global }
    }
}

impl CompressOptions {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if check_bits(self.bits).is_err() {
            errs.push(format!("bits must lie in 1..=16, got {}", self.bits));
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            errs.push(format!("sparsity must lie in [0, 1), got {}", self.sparsity));
        }
        errs
    }
}

/// Byte counts per pipeline stage, plus pruning totals.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompressionReport {
    pub param_count: usize,
    pub prunable: usize,
    pub pruned: usize,
    pub sparsity: f64,
    pub bits: u8,
    pub table_mode: TableMode,
    /// Size of the parameters stored as raw 32-bit floats.
    pub raw_bytes: usize,
    /// `param_count * bits / 8`, before entropy coding.
    pub quantized_bytes: usize,
    pub header_bytes: usize,
    pub table_bytes: usize,
    pub record_header_bytes: usize,
    pub payload_bytes: usize,
    pub checksum_bytes: usize,
    pub total_bytes: usize,
    /// Mean Huffman code length over all symbols.
    pub bits_per_symbol: f64,
    /// Empirical entropy of all symbols, in bits.
    pub entropy_bits: f64,
}

/// Output of [`compress`].
pub struct Compressed {
    pub bytes: Vec<u8>,
    pub report: CompressionReport,
    pub mask: PruneMask,
}

/// The parameters a compressed file decodes to: prune, quantize, dequantize.
pub fn reconstruct(params: &ModelParams<f32>, bits: u8, sparsity: f64) -> Result<ModelParams<f32>> {
    let (pruned, _) = prune_global(params, sparsity)?;
    let mut out = pruned.clone();
    for p in &mut out.params {
        p.value = dequantize(&quantize(&p.value, bits)?)?;
    }
    Ok(out)
}

pub fn compress(arch: &ArchConfig, params: &ModelParams<f32>, opts: &CompressOptions) -> Result<Compressed> {
    check_bits(opts.bits)?;
    let (pruned, mask) = prune_global(params, opts.sparsity)?;
    let quantized = pruned.params.iter().map(|p| quantize(&p.value, opts.bits)).collect::<Result<Vec<_>>>()?;

    let all: Vec<u16> = quantized.iter().flat_map(|q| q.codes.iter().copied()).collect();
    let global_freqs = frequencies(&all);
    let tables: Vec<Option<HuffmanTable>> = match opts.table_mode {
        TableMode::Global => {
            let t = HuffmanTable::build(&global_freqs)?;
            std::iter::once(Some(t)).chain(std::iter::repeat_n(None, quantized.len().saturating_sub(1))).collect()
        }
        TableMode::PerTensor => {
            quantized.iter().map(|q| HuffmanTable::build(&frequencies(&q.codes)).map(Some)).collect::<Result<_>>()?
        }
    };

    let mut w = Writer::new(arch, quantized.len())?;
    let mut current: Option<&HuffmanTable> = None;
    let mut coded_bits = 0u64;
    for ((p, q), table) in pruned.params.iter().zip(&quantized).zip(&tables) {
        if let Some(t) = table {
            current = Some(t);
        }
        let t = current.expect("first record always carries a table");
        coded_bits += t.encoded_bits(&q.codes)?;
        let stream = t.encode(&q.codes)?;
        w.record(&p.name, p.value.shape(), RecordBody::Quantized { q, table: table.as_ref(), stream: &stream });
    }
    let bytes = w.finish();
    let info = container::parse(&bytes)?.info;

    let param_count = params.count();
    let report = CompressionReport {
        param_count,
        prunable: mask.prunable,
        pruned: mask.pruned,
        sparsity: opts.sparsity,
        bits: opts.bits,
        table_mode: opts.table_mode,
        raw_bytes: param_count * 4,
        quantized_bytes: (param_count * opts.bits as usize).div_ceil(8),
        header_bytes: info.header_bytes,
        table_bytes: info.tensors.iter().map(|t| t.table_bytes).sum(),
        record_header_bytes: info.tensors.iter().map(|t| t.header_bytes).sum(),
        payload_bytes: info.tensors.iter().map(|t| t.payload_bytes).sum(),
        checksum_bytes: info.checksum_bytes,
        total_bytes: bytes.len(),
        bits_per_symbol: if all.is_empty() { 0.0 } else { coded_bits as f64 / all.len() as f64 },
        entropy_bits: entropy(&global_freqs),
    };
    Ok(Compressed { bytes, report, mask })
}

/// An uncompressed checkpoint: every tensor stored as raw `f32`.
pub fn save_raw(arch: &ArchConfig, params: &ModelParams<f32>) -> Result<Vec<u8>> {
    let mut w = Writer::new(arch, params.params.len())?;
    for p in &params.params {
        w.record(&p.name, p.value.shape(), RecordBody::Raw(&p.value));
    }
    Ok(w.finish())
}

/// Parse a raw or compressed file into its architecture and (dequantized) parameters.
pub fn load(bytes: &[u8]) -> Result<(ArchConfig, ModelParams<f32>)> {
    let parsed = container::parse(bytes)?;
    Ok((parsed.arch, parsed.params))
}

pub fn inspect(bytes: &[u8]) -> Result<FileInfo> {
    Ok(container::parse(bytes)?.info)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::ArchConfig;
    use crate::error::Error;
    use crate::model::PsNerv;

    fn small() -> (ArchConfig, ModelParams<f32>) {
        let mut arch = ArchConfig::for_video(2, 16, 16, 2).unwrap();
        arch.encoding.levels = 4;
        arch.stem_hidden = 8;
        arch.base_channels = 8;
        arch.min_channels = 4;
        let m = PsNerv::<f32>::new(arch.clone(), 3).unwrap();
        (arch, m.into_params())
    }

    #[test]
    fn raw_round_trip() {
        let (arch, params) = small();
        let bytes = save_raw(&arch, &params).unwrap();
        let (a, p) = load(&bytes).unwrap();
        assert_eq!(a, arch);
        assert_eq!(p.params.len(), params.params.len());
        for (x, y) in p.params.iter().zip(&params.params) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.value, y.value);
        }
        let info = inspect(&bytes).unwrap();
        assert_eq!(info.bits, None);
        assert_eq!(info.param_count, params.count());
        assert_eq!(info.accounted_bytes(), bytes.len());
    }

    #[test]
    fn compressed_round_trip_matches_pipeline() {
        let (arch, params) = small();
        for mode in [TableMode::Global, TableMode::PerTensor] {
            let opts = CompressOptions { bits: 6, sparsity: 0.3, table_mode: mode };
            let c = compress(&arch, &params, &opts).unwrap();
            let (_, p) = load(&c.bytes).unwrap();
            let expect = reconstruct(&params, 6, 0.3).unwrap();
            for (x, y) in p.params.iter().zip(&expect.params) {
                assert_eq!(x.value, y.value, "{}", x.name);
            }
            assert_eq!(c.report.total_bytes, c.bytes.len());
            let info = inspect(&c.bytes).unwrap();
            assert_eq!(info.accounted_bytes(), c.bytes.len());
            assert_eq!(info.bits, Some(6));
            assert_eq!(compress(&arch, &params, &opts).unwrap().bytes, c.bytes);
        }
    }

    #[test]
    fn corruption_names_the_field() {
        let (arch, params) = small();
        let bytes = compress(&arch, &params, &CompressOptions::default()).unwrap().bytes;
        let field = |b: &[u8]| match load(b) {
            Err(Error::Corrupt { field, .. }) => field,
            other => panic!("expected corruption, got {:?}", other.map(|_| ())),
        };
        let mut b = bytes.clone();
        b[0] = b'X';
        assert_eq!(field(&b), "magic");
        let mut b = bytes.clone();
        b[5] = 9;
        assert_eq!(field(&b), "version");
        let mut b = bytes.clone();
        let mid = b.len() - 10;
        b[mid] ^= 0x40;
        assert_eq!(field(&b), "checksum");
        assert_eq!(field(&bytes[..bytes.len() - 1]), "checksum");
    }

    #[test]
    fn options_validation() {
        assert!(CompressOptions::default().validate().is_empty());
        let bad = CompressOptions { bits: 0, sparsity: 1.0, table_mode: TableMode::Global };
        assert_eq!(bad.validate().len(), 2);
    }
}
