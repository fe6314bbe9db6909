//! Binary activation and attention dumps (`.rsd`).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! header:  "RSD1" | version u32 | kind u8 | model_id str | n_layers u16
//!          | hidden_dim u32 (kind 0) or n_heads u16 (kind 1)
//!          | frame_stride_ms u16 | n_utterances u32
//! record:  utterance_id str | n_frames u32 | payload f32 LE
//! str:     byte length u32 | UTF-8 bytes
//! ```
//!
//! Activation payloads are `L x T x d` (layer-major, then frame-major).
//! Attention payloads are `L x H x T x T`; row `r` of a head map is the
//! distribution of query frame `r` over key frames.

use std::fmt;
use std::io::{self, Read, Seek, SeekFrom, Write};

use serde::Serialize;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"RSD1";
pub const FORMAT_VERSION: u32 = 1;

pub(crate) const KIND_ACTIVATIONS: u8 = 0;
pub(crate) const KIND_ATTENTION: u8 = 1;
pub(crate) const KIND_MOMENTS: u8 = 2;

/// Attention rows must sum to one within this tolerance.
pub const ATTENTION_ROW_TOLERANCE: f64 = 1e-3;

// Block size for float conversion; keeps scratch memory independent of record size.
const IO_BLOCK: usize = 1 << 16;
// Records below this many values are allocated up front.
const MAX_EAGER_VALUES: u64 = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DumpKind {
    Activations { hidden_dim: u32 },
    Attention { n_heads: u16 },
}

impl DumpKind {
    pub fn name(&self) -> &'static str {
        match self {
            DumpKind::Activations { .. } => "activations",
            DumpKind::Attention { .. } => "attention",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DumpHeader {
    pub format_version: u32,
    pub kind: DumpKind,
    pub model_id: String,
    pub n_layers: u16,
    pub frame_stride_ms: u16,
    pub n_utterances: u32,
}

impl DumpHeader {
    pub fn activations(model_id: impl Into<String>, n_layers: u16, hidden_dim: u32, n_utterances: u32) -> Self {
        DumpHeader {
            format_version: FORMAT_VERSION,
            kind: DumpKind::Activations { hidden_dim },
            model_id: model_id.into(),
            n_layers,
            frame_stride_ms: 20,
            n_utterances,
        }
    }

    pub fn attention(model_id: impl Into<String>, n_layers: u16, n_heads: u16, n_utterances: u32) -> Self {
        DumpHeader {
            format_version: FORMAT_VERSION,
            kind: DumpKind::Attention { n_heads },
            model_id: model_id.into(),
            n_layers,
            frame_stride_ms: 20,
            n_utterances,
        }
    }

    pub fn hidden_dim(&self) -> Option<usize> {
        match self.kind {
            DumpKind::Activations { hidden_dim } => Some(hidden_dim as usize),
            DumpKind::Attention { .. } => None,
        }
    }

    pub fn n_heads(&self) -> Option<usize> {
        match self.kind {
            DumpKind::Attention { n_heads } => Some(n_heads as usize),
            DumpKind::Activations { .. } => None,
        }
    }

    /// Number of f32 values one layer occupies in a record of `n_frames` frames.
    pub fn layer_len(&self, n_frames: u32) -> u64 {
        let t = n_frames as u64;
        match self.kind {
            DumpKind::Activations { hidden_dim } => t * hidden_dim as u64,
            DumpKind::Attention { n_heads } => n_heads as u64 * t * t,
        }
    }

    pub fn record_len(&self, n_frames: u32) -> u64 {
        self.n_layers as u64 * self.layer_len(n_frames)
    }

    fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(self.format_version));
        }
        if self.n_layers == 0 {
            return Err(Error::MalformedHeader("n_layers must be > 0".into()));
        }
        match self.kind {
            DumpKind::Activations { hidden_dim: 0 } => Err(Error::MalformedHeader("hidden_dim must be > 0".into())),
            DumpKind::Attention { n_heads: 0 } => Err(Error::MalformedHeader("n_heads must be > 0".into())),
            _ => Ok(()),
        }
    }

    pub(crate) fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.model_id.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.format_version.to_le_bytes());
        match self.kind {
            DumpKind::Activations { .. } => out.push(KIND_ACTIVATIONS),
            DumpKind::Attention { .. } => out.push(KIND_ATTENTION),
        }
        put_str(&mut out, &self.model_id);
        out.extend_from_slice(&self.n_layers.to_le_bytes());
        match self.kind {
            DumpKind::Activations { hidden_dim } => out.extend_from_slice(&hidden_dim.to_le_bytes()),
            DumpKind::Attention { n_heads } => out.extend_from_slice(&n_heads.to_le_bytes()),
        }
        out.extend_from_slice(&self.frame_stride_ms.to_le_bytes());
        out.extend_from_slice(&self.n_utterances.to_le_bytes());
        out
    }
}

/// One utterance: `n_frames` frames of every layer, payload laid out per [`DumpHeader`].
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub n_frames: u32,
    pub payload: Vec<f32>,
}

impl UtteranceRecord {
    pub fn new(utterance_id: impl Into<String>, n_frames: u32, payload: Vec<f32>) -> Self {
        UtteranceRecord { utterance_id: utterance_id.into(), n_frames, payload }
    }

    /// The `T x d` (activations) or `H x T x T` (attention) block of one layer.
    pub fn layer<'a>(&'a self, header: &DumpHeader, layer: usize) -> &'a [f32] {
        let len = header.layer_len(self.n_frames) as usize;
        &self.payload[layer * len..(layer + 1) * len]
    }
}

/// A subset of layers read out of one record.
#[derive(Debug, Clone)]
pub struct LayerSlab {
    pub utterance_id: String,
    pub n_frames: u32,
    pub layers: Vec<u16>,
    pub layer_len: usize,
    pub data: Vec<f32>,
}

impl LayerSlab {
    /// Values of the `i`-th selected layer (index into `layers`, not the layer number).
    pub fn layer(&self, i: usize) -> &[f32] {
        &self.data[i * self.layer_len..(i + 1) * self.layer_len]
    }

    pub fn position(&self, layer: u16) -> Option<usize> {
        self.layers.iter().position(|&l| l == layer)
    }
}

/// Location of one record inside a seekable dump.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordEntry {
    pub utterance_id: String,
    pub n_frames: u32,
    pub payload_offset: u64,
}

pub(crate) fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Streaming writer. The header is written on construction; [`DumpWriter::finish`]
/// checks that exactly `n_utterances` records were written.
pub struct DumpWriter<W: Write> {
    sink: W,
    header: DumpHeader,
    written: u32,
    bytes: u64,
    scratch: Vec<u8>,
}

impl<W: Write> DumpWriter<W> {
    pub fn new(mut sink: W, header: DumpHeader) -> Result<Self> {
        header.validate()?;
        let encoded = header.encode();
        sink.write_all(&encoded)?;
        Ok(DumpWriter { sink, header, written: 0, bytes: encoded.len() as u64, scratch: Vec::new() })
    }

    pub fn header(&self) -> &DumpHeader {
        &self.header
    }

    pub fn write_record(&mut self, record: &UtteranceRecord) -> Result<()> {
        if self.written >= self.header.n_utterances {
            return Err(Error::RecordCount { declared: self.header.n_utterances, actual: self.written + 1 });
        }
        if record.n_frames == 0 {
            return Err(Error::MalformedRecord {
                utterance_id: record.utterance_id.clone(),
                reason: "n_frames must be >= 1".into(),
            });
        }
        let expected = self.header.record_len(record.n_frames);
        if record.payload.len() as u64 != expected {
            return Err(Error::DimensionMismatch(format!(
                "utterance {:?}: payload has {} values, header implies {}",
                record.utterance_id,
                record.payload.len(),
                expected
            )));
        }
        let mut prefix = Vec::with_capacity(8 + record.utterance_id.len());
        put_str(&mut prefix, &record.utterance_id);
        prefix.extend_from_slice(&record.n_frames.to_le_bytes());
        self.sink.write_all(&prefix)?;
        for block in record.payload.chunks(IO_BLOCK / 4) {
            self.scratch.clear();
            for v in block {
                self.scratch.extend_from_slice(&v.to_le_bytes());
            }
            self.sink.write_all(&self.scratch)?;
        }
        self.written += 1;
        self.bytes += prefix.len() as u64 + 4 * expected;
        Ok(())
    }

    /// Flushes and returns the total number of bytes written.
    pub fn finish(mut self) -> Result<u64> {
        if self.written != self.header.n_utterances {
            return Err(Error::RecordCount { declared: self.header.n_utterances, actual: self.written });
        }
        self.sink.flush()?;
        Ok(self.bytes)
    }
}

/// Writes a complete dump and returns the byte count.
pub fn write_dump<'a, W, I>(header: &DumpHeader, records: I, destination: W) -> Result<u64>
where
    W: Write,
    I: IntoIterator<Item = &'a UtteranceRecord>,
{
    let mut writer = DumpWriter::new(destination, header.clone())?;
    for record in records {
        writer.write_record(record)?;
    }
    writer.finish()
}

/// Reads magic, version and kind tag. Shared with the moments format.
pub(crate) fn read_preamble<R: Read>(src: &mut R) -> Result<u8> {
    let mut magic = [0u8; 4];
    src.read_exact(&mut magic).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::MalformedHeader("stream shorter than header".into()),
        _ => Error::Io(e),
    })?;
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let version = read_u32(src).map_err(header_eof)?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let mut kind = [0u8; 1];
    src.read_exact(&mut kind).map_err(header_eof)?;
    Ok(kind[0])
}

fn header_eof(e: io::Error) -> Error {
    match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::MalformedHeader("truncated header".into()),
        _ => Error::Io(e),
    }
}

pub(crate) fn read_u16<R: Read>(src: &mut R) -> io::Result<u16> {
    let mut b = [0u8; 2];
    src.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

pub(crate) fn read_u32<R: Read>(src: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    src.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(src: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    src.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

// Strings longer than this are treated as corruption rather than allocated.
const MAX_STR_LEN: u32 = 1 << 20;

pub(crate) fn read_str<R: Read>(src: &mut R) -> Result<String> {
    let len = read_u32(src)?;
    if len > MAX_STR_LEN {
        return Err(Error::MalformedHeader(format!("string length {len} exceeds limit")));
    }
    let mut buf = vec![0u8; len as usize];
    src.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::MalformedHeader("string is not valid UTF-8".into()))
}

/// Reads `n` little-endian f32 values, converting block by block.
pub(crate) fn read_f32s<R: Read>(src: &mut R, n: u64, out: &mut Vec<f32>) -> io::Result<()> {
    if n <= MAX_EAGER_VALUES {
        out.reserve_exact(n as usize);
    }
    let mut scratch = vec![0u8; IO_BLOCK.min(4 * n as usize).max(4)];
    let mut left = n;
    while left > 0 {
        let take = (left as usize).min(scratch.len() / 4);
        let bytes = &mut scratch[..4 * take];
        src.read_exact(bytes)?;
        out.extend(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])));
        left -= take as u64;
    }
    Ok(())
}

/// Streaming reader. Holds at most one record in memory at a time.
pub struct DumpReader<R> {
    src: R,
    header: DumpHeader,
    data_start: u64,
    consumed: u32,
    done: bool,
}

impl<R> DumpReader<R> {
    pub fn header(&self) -> &DumpHeader {
        &self.header
    }

    pub fn into_inner(self) -> R {
        self.src
    }
}

impl<R: Read> DumpReader<R> {
    pub fn new(mut src: R) -> Result<Self> {
        let kind_tag = read_preamble(&mut src)?;
        let model_id = read_str(&mut src)?;
        let n_layers = read_u16(&mut src).map_err(header_eof)?;
        let kind = match kind_tag {
            KIND_ACTIVATIONS => DumpKind::Activations { hidden_dim: read_u32(&mut src).map_err(header_eof)? },
            KIND_ATTENTION => DumpKind::Attention { n_heads: read_u16(&mut src).map_err(header_eof)? },
            KIND_MOMENTS => {
                return Err(Error::WrongKind { expected: "activations or attention", found: "moments" })
            }
            other => return Err(Error::MalformedHeader(format!("unknown kind tag {other}"))),
        };
        let frame_stride_ms = read_u16(&mut src).map_err(header_eof)?;
        let n_utterances = read_u32(&mut src).map_err(header_eof)?;
        let header = DumpHeader { format_version: FORMAT_VERSION, kind, model_id, n_layers, frame_stride_ms, n_utterances };
        header.validate()?;
        let data_start = header.encode().len() as u64;
        Ok(DumpReader { src, header, data_start, consumed: 0, done: false })
    }

    fn read_prefix(&mut self) -> Result<(String, u32)> {
        let id = read_str(&mut self.src).map_err(|e| match e {
            Error::Io(io) if io.kind() == io::ErrorKind::UnexpectedEof => Error::TruncatedRecord {
                utterance_id: format!("<record {}>", self.consumed),
            },
            other => other,
        })?;
        let n_frames = read_u32(&mut self.src).map_err(|e| Error::truncated_or(e, &id))?;
        Ok((id, n_frames))
    }

    /// Reads the next record without applying the `n_frames >= 1` check.
    pub(crate) fn next_raw(&mut self) -> Result<Option<UtteranceRecord>> {
        if self.consumed == self.header.n_utterances {
            let mut probe = [0u8; 1];
            return match self.src.read(&mut probe)? {
                0 => Ok(None),
                _ => Err(Error::MalformedRecord {
                    utterance_id: "<after last record>".into(),
                    reason: "trailing data after declared records".into(),
                }),
            };
        }
        let (utterance_id, n_frames) = self.read_prefix()?;
        let len = self.header.record_len(n_frames);
        let mut payload = Vec::new();
        read_f32s(&mut self.src, len, &mut payload).map_err(|e| Error::truncated_or(e, &utterance_id))?;
        self.consumed += 1;
        Ok(Some(UtteranceRecord { utterance_id, n_frames, payload }))
    }

    pub fn next_record(&mut self) -> Result<Option<UtteranceRecord>> {
        match self.next_raw()? {
            Some(r) if r.n_frames == 0 => Err(Error::MalformedRecord {
                utterance_id: r.utterance_id,
                reason: "n_frames must be >= 1".into(),
            }),
            other => Ok(other),
        }
    }
}

impl<R: Read> Iterator for DumpReader<R> {
    type Item = Result<UtteranceRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_record() {
            Ok(Some(r)) => Some(Ok(r)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

impl<R: Read + Seek> DumpReader<R> {
    /// Scans record prefixes, seeking over payloads. Leaves the stream at the first record.
    pub fn index(&mut self) -> Result<Vec<RecordEntry>> {
        let end = self.src.seek(SeekFrom::End(0))?;
        self.src.seek(SeekFrom::Start(self.data_start))?;
        self.consumed = 0;
        let mut entries = Vec::with_capacity(self.header.n_utterances as usize);
        for _ in 0..self.header.n_utterances {
            let (utterance_id, n_frames) = self.read_prefix()?;
            if n_frames == 0 {
                return Err(Error::MalformedRecord { utterance_id, reason: "n_frames must be >= 1".into() });
            }
            let payload_offset = self.src.stream_position()?;
            let payload_end = payload_offset + 4 * self.header.record_len(n_frames);
            if payload_end > end {
                return Err(Error::TruncatedRecord { utterance_id });
            }
            self.src.seek(SeekFrom::Start(payload_end))?;
            self.consumed += 1;
            entries.push(RecordEntry { utterance_id, n_frames, payload_offset });
        }
        if self.src.stream_position()? != end {
            return Err(Error::MalformedRecord {
                utterance_id: "<after last record>".into(),
                reason: "trailing data after declared records".into(),
            });
        }
        self.src.seek(SeekFrom::Start(self.data_start))?;
        self.consumed = 0;
        self.done = false;
        Ok(entries)
    }

    /// Reads the given layers of one indexed record, in the order given.
    pub fn read_layers(&mut self, entry: &RecordEntry, layers: &[u16]) -> Result<LayerSlab> {
        let layer_len = self.header.layer_len(entry.n_frames);
        let mut data = Vec::with_capacity((layer_len as usize).saturating_mul(layers.len()));
        for &l in layers {
            if l >= self.header.n_layers {
                return Err(Error::InvalidArgument(format!(
                    "layer {l} out of range for model {:?} with {} layers",
                    self.header.model_id, self.header.n_layers
                )));
            }
            self.src.seek(SeekFrom::Start(entry.payload_offset + 4 * layer_len * l as u64))?;
            read_f32s(&mut self.src, layer_len, &mut data).map_err(|e| Error::truncated_or(e, &entry.utterance_id))?;
        }
        Ok(LayerSlab {
            utterance_id: entry.utterance_id.clone(),
            n_frames: entry.n_frames,
            layers: layers.to_vec(),
            layer_len: layer_len as usize,
            data,
        })
    }
}

/// Opens a dump file with a buffered reader.
pub fn open_dump(path: &std::path::Path) -> Result<DumpReader<io::BufReader<std::fs::File>>> {
    let file = std::fs::File::open(path).map_err(Error::at(path))?;
    DumpReader::new(io::BufReader::with_capacity(1 << 20, file))
}

/// Reads the header and returns a streaming iterator over records.
pub fn read_dump<R: Read>(source: R) -> Result<(DumpHeader, DumpReader<R>)> {
    let reader = DumpReader::new(source)?;
    Ok((reader.header().clone(), reader))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    NonFiniteValue,
    NegativeAttention,
    AttentionRowNotNormalized,
    ZeroFrames,
    TruncatedRecord,
    TrailingData,
    RecordCountMismatch,
    MalformedRecord,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationKind::NonFiniteValue => "non-finite value",
            ViolationKind::NegativeAttention => "negative attention weight",
            ViolationKind::AttentionRowNotNormalized => "attention row not normalized",
            ViolationKind::ZeroFrames => "zero frames",
            ViolationKind::TruncatedRecord => "truncated record",
            ViolationKind::TrailingData => "trailing data",
            ViolationKind::RecordCountMismatch => "record count mismatch",
            ViolationKind::MalformedRecord => "malformed record",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub utterance_id: Option<String>,
    pub kind: ViolationKind,
    /// Number of offending values or rows in the record.
    pub count: u64,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.utterance_id {
            Some(id) => write!(f, "{id}: {} ({})", self.kind, self.detail),
            None => write!(f, "{} ({})", self.kind, self.detail),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub header: DumpHeader,
    pub n_records: u32,
    pub n_frames: u64,
    pub n_values: u64,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every record invariant. Only an unreadable header is an error;
/// everything past it is reported as a violation.
pub fn validate_dump<R: Read>(source: R) -> Result<ValidationReport> {
    let mut reader = DumpReader::new(source)?;
    let header = reader.header().clone();
    let mut report = ValidationReport { header: header.clone(), n_records: 0, n_frames: 0, n_values: 0, violations: Vec::new() };
    loop {
        let record = match reader.next_raw() {
            Ok(Some(r)) => r,
            Ok(None) => break,
            Err(e) => {
                let (kind, id) = match &e {
                    Error::TruncatedRecord { utterance_id } => (ViolationKind::TruncatedRecord, Some(utterance_id.clone())),
                    Error::MalformedRecord { reason, .. } if reason.starts_with("trailing") => (ViolationKind::TrailingData, None),
                    Error::Io(io) if io.kind() != io::ErrorKind::InvalidData => return Err(e),
                    _ => (ViolationKind::MalformedRecord, None),
                };
                report.violations.push(Violation { utterance_id: id, kind, count: 1, detail: e.to_string() });
                break;
            }
        };
        report.n_records += 1;
        report.n_frames += record.n_frames as u64;
        report.n_values += record.payload.len() as u64;
        check_record(&header, &record, &mut report.violations);
    }
    if report.n_records != header.n_utterances
        && !report.violations.iter().any(|v| v.kind == ViolationKind::TruncatedRecord)
    {
        report.violations.push(Violation {
            utterance_id: None,
            kind: ViolationKind::RecordCountMismatch,
            count: 1,
            detail: format!("header declares {}, found {}", header.n_utterances, report.n_records),
        });
    }
    Ok(report)
}

fn check_record(header: &DumpHeader, record: &UtteranceRecord, out: &mut Vec<Violation>) {
    let id = Some(record.utterance_id.clone());
    if record.n_frames == 0 {
        out.push(Violation { utterance_id: id.clone(), kind: ViolationKind::ZeroFrames, count: 1, detail: "n_frames = 0".into() });
    }
    let non_finite = record.payload.iter().filter(|v| !v.is_finite()).count() as u64;
    if non_finite > 0 {
        let first = record.payload.iter().position(|v| !v.is_finite()).unwrap_or(0);
        out.push(Violation {
            utterance_id: id.clone(),
            kind: ViolationKind::NonFiniteValue,
            count: non_finite,
            detail: format!("{non_finite} values, first at offset {first}"),
        });
    }
    if let DumpKind::Attention { .. } = header.kind {
        let t = record.n_frames as usize;
        if t == 0 {
            return;
        }
        let (mut negative, mut unnormalized) = (0u64, 0u64);
        let mut worst = 0.0f64;
        for row in record.payload.chunks_exact(t) {
            if row.iter().any(|&v| v < 0.0) {
                negative += 1;
            }
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            // NaN sums are already reported as non-finite values.
            if sum.is_finite() && (sum - 1.0).abs() > ATTENTION_ROW_TOLERANCE {
                unnormalized += 1;
                if (sum - 1.0).abs() > (worst - 1.0).abs() {
                    worst = sum;
                }
            }
        }
        if negative > 0 {
            out.push(Violation {
                utterance_id: id.clone(),
                kind: ViolationKind::NegativeAttention,
                count: negative,
                detail: format!("{negative} rows with negative weights"),
            });
        }
        if unnormalized > 0 {
            out.push(Violation {
                utterance_id: id,
                kind: ViolationKind::AttentionRowNotNormalized,
                count: unnormalized,
                detail: format!("{unnormalized} rows, worst sum {worst}"),
            });
        }
    }
}
