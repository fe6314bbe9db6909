//! Seeded synthetic corpora and models.
//!
//! Every value is a pure function of its coordinates (seed, utterance, layer,
//! frame, unit), so a [`VirtualDump`] can serve any byte range of a
//! multi-gigabyte `.rsd` stream without materializing it.
//!
//! A layer's activations are a fixed random projection of a window of latent
//! factors plus unit noise. Latents are partly shared by every model over the
//! same corpus and partly private to a model; the window slides by `drift`
//! latents per layer, so neighbouring layers overlap most.

use std::io::{self, Read, Seek, SeekFrom};
use std::sync::Arc;

use crate::dumpio::{put_str, DumpHeader, UtteranceRecord};
use crate::error::{Error, Result};

fn splitmix(z: u64) -> u64 {
    let mut z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn key(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6A09_E667_F3BC_C909, |h, &p| splitmix(h ^ p))
}

/// Approximately standard normal: the sum of four 16-bit uniforms, rescaled.
fn gauss(h: u64) -> f32 {
    let s = (h & 0xFFFF) + ((h >> 16) & 0xFFFF) + ((h >> 32) & 0xFFFF) + (h >> 48);
    ((s as f32 + 2.0) / 65536.0 - 2.0) * 1.732_050_8
}

const TAG_FRAMES: u64 = 1;
const TAG_SHARED: u64 = 2;
const TAG_PRIVATE: u64 = 3;
const TAG_WEIGHT: u64 = 4;
const TAG_NOISE: u64 = 5;
const TAG_JITTER: u64 = 6;
const TAG_HEAD: u64 = 7;

/// Utterance ids and lengths shared by every model run over it.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub seed: u64,
    pub utterances: Vec<(String, u32)>,
}

impl SynthCorpus {
    /// Utterances of 50 to 299 frames until exactly `total_frames` frames exist.
    pub fn new(seed: u64, total_frames: u64) -> Self {
        let mut utterances = Vec::new();
        let mut left = total_frames;
        while left > 0 {
            let i = utterances.len() as u64;
            let t = (50 + key(&[seed, TAG_FRAMES, i]) % 250).min(left);
            utterances.push((format!("utt{i:06}"), t as u32));
            left -= t;
        }
        SynthCorpus { seed, utterances }
    }

    pub fn n_frames(&self) -> u64 {
        self.utterances.iter().map(|u| u.1 as u64).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthModel {
    pub model_id: String,
    pub seed: u64,
    pub n_layers: u16,
    pub hidden_dim: u32,
    /// Latent factors feeding each layer.
    pub latent_dim: usize,
    /// Window shift between consecutive layers.
    pub drift: usize,
    /// Weight of corpus-shared latents; private ones get `1 - shared`.
    pub shared: f32,
    pub noise: f32,
    /// Drop the last frame of roughly half the utterances.
    pub frame_jitter: bool,
    /// Layers from this index on draw fresh weights, noise and latents, as if
    /// retrained; lower layers match the model with the same seed.
    pub diverge_from: Option<u16>,
}

impl SynthModel {
    pub fn new(model_id: impl Into<String>, seed: u64, n_layers: u16, hidden_dim: u32) -> Self {
        SynthModel {
            model_id: model_id.into(),
            seed,
            n_layers,
            hidden_dim,
            latent_dim: 16,
            drift: 2,
            shared: 0.7,
            noise: 0.5,
            frame_jitter: false,
            diverge_from: None,
        }
    }

    /// Seed and latent offset used by one layer.
    fn layer_source(&self, layer: u16) -> (u64, usize) {
        match self.diverge_from {
            Some(from) if layer >= from => (splitmix(self.seed ^ 0xD1E5), 1 << 20),
            _ => (self.seed, 0),
        }
    }

    fn frames(&self, utt: usize, t: u32) -> u32 {
        if self.frame_jitter && t > 1 && key(&[self.seed, TAG_JITTER, utt as u64]) & 1 == 1 {
            t - 1
        } else {
            t
        }
    }

    /// Projection weights of one layer, `latent_dim x hidden_dim` row-major.
    fn weights(&self, layer: u16) -> Vec<f32> {
        let r = self.latent_dim;
        let scale = 1.0 / (r as f32).sqrt();
        let (seed, _) = self.layer_source(layer);
        (0..self.hidden_dim as usize * r)
            .map(|i| gauss(key(&[seed, TAG_WEIGHT, layer as u64, i as u64])) * scale)
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn fill_row(&self, w: &[f32], corpus_seed: u64, utt: usize, layer: u16, t: u32, z: &mut Vec<f32>, row: &mut [f32]) {
        let r = self.latent_dim;
        let (seed, offset) = self.layer_source(layer);
        let base = offset + layer as usize * self.drift;
        z.clear();
        z.extend((0..r).map(|j| {
            let f = (base + j) as u64;
            let s = gauss(key(&[corpus_seed, TAG_SHARED, utt as u64, t as u64, f]));
            let p = gauss(key(&[seed, TAG_PRIVATE, utt as u64, t as u64, f]));
            self.shared * s + (1.0 - self.shared) * p
        }));
        let nkey = key(&[seed, TAG_NOISE, utt as u64, layer as u64, t as u64]);
        for (k, out) in row.iter_mut().enumerate() {
            *out = self.noise * gauss(splitmix(nkey ^ k as u64));
        }
        let d = row.len();
        for (j, &zj) in z.iter().enumerate() {
            for (out, &wjk) in row.iter_mut().zip(&w[j * d..(j + 1) * d]) {
                *out += zj * wjk;
            }
        }
    }

    pub fn header(&self, corpus: &SynthCorpus) -> DumpHeader {
        DumpHeader::activations(self.model_id.clone(), self.n_layers, self.hidden_dim, corpus.utterances.len() as u32)
    }

    /// Builds every record in memory. Meant for small corpora.
    pub fn records(&self, corpus: &SynthCorpus) -> Vec<UtteranceRecord> {
        let d = self.hidden_dim as usize;
        let weights: Vec<Vec<f32>> = (0..self.n_layers).map(|l| self.weights(l)).collect();
        let mut z = Vec::new();
        corpus
            .utterances
            .iter()
            .enumerate()
            .map(|(u, (id, t))| {
                let t = self.frames(u, *t);
                let mut payload = vec![0f32; self.n_layers as usize * t as usize * d];
                for (l, w) in weights.iter().enumerate() {
                    for f in 0..t {
                        let at = (l * t as usize + f as usize) * d;
                        self.fill_row(w, corpus.seed, u, l as u16, f, &mut z, &mut payload[at..at + d]);
                    }
                }
                UtteranceRecord::new(id.clone(), t, payload)
            })
            .collect()
    }
}

/// A read-only `.rsd` byte stream generated on demand.
pub struct VirtualDump {
    model: SynthModel,
    corpus: Arc<SynthCorpus>,
    weights: Vec<Vec<f32>>,
    header_bytes: Vec<u8>,
    /// Per record: start offset, encoded prefix, frame count.
    records: Vec<(u64, Vec<u8>, u32)>,
    len: u64,
    pos: u64,
    cached: Option<(usize, u16, u32)>,
    row: Vec<f32>,
    row_bytes: Vec<u8>,
    z: Vec<f32>,
}

impl VirtualDump {
    pub fn new(model: SynthModel, corpus: Arc<SynthCorpus>) -> Result<Self> {
        if model.hidden_dim == 0 || model.n_layers == 0 || model.latent_dim == 0 {
            return Err(Error::InvalidArgument("synthetic model needs layers, units and latents".into()));
        }
        let header_bytes = model.header(&corpus).encode();
        let mut records = Vec::with_capacity(corpus.utterances.len());
        let mut off = header_bytes.len() as u64;
        for (u, (id, t)) in corpus.utterances.iter().enumerate() {
            let t = model.frames(u, *t);
            let mut prefix = Vec::with_capacity(8 + id.len());
            put_str(&mut prefix, id);
            prefix.extend_from_slice(&t.to_le_bytes());
            let body = model.n_layers as u64 * t as u64 * model.hidden_dim as u64 * 4;
            let start = off;
            off += prefix.len() as u64 + body;
            records.push((start, prefix, t));
        }
        let weights = (0..model.n_layers).map(|l| model.weights(l)).collect();
        let d = model.hidden_dim as usize;
        Ok(VirtualDump {
            model,
            corpus,
            weights,
            header_bytes,
            records,
            len: off,
            pos: 0,
            cached: None,
            row: vec![0.0; d],
            row_bytes: vec![0; d * 4],
            z: Vec::new(),
        })
    }

    /// Total stream length in bytes.
    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn model(&self) -> &SynthModel {
        &self.model
    }

    fn row_at(&mut self, rec: usize, layer: u16, t: u32) -> &[u8] {
        if self.cached != Some((rec, layer, t)) {
            let w = &self.weights[layer as usize];
            self.model.fill_row(w, self.corpus.seed, rec, layer, t, &mut self.z, &mut self.row);
            for (b, v) in self.row_bytes.chunks_exact_mut(4).zip(&self.row) {
                b.copy_from_slice(&v.to_le_bytes());
            }
            self.cached = Some((rec, layer, t));
        }
        &self.row_bytes
    }
}

impl Read for VirtualDump {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let mut done = 0;
        while done < buf.len() && self.pos < self.len {
            let pos = self.pos;
            let n = if pos < self.header_bytes.len() as u64 {
                let src = &self.header_bytes[pos as usize..];
                let n = src.len().min(buf.len() - done);
                buf[done..done + n].copy_from_slice(&src[..n]);
                n
            } else {
                let rec = self.records.partition_point(|r| r.0 <= pos) - 1;
                let (start, ref prefix, t) = self.records[rec];
                let within = pos - start;
                if within < prefix.len() as u64 {
                    let src = &prefix[within as usize..];
                    let n = src.len().min(buf.len() - done);
                    buf[done..done + n].copy_from_slice(&src[..n]);
                    n
                } else {
                    let row_len = self.model.hidden_dim as u64 * 4;
                    let body = within - prefix.len() as u64;
                    let row_idx = body / row_len;
                    let in_row = (body % row_len) as usize;
                    let layer = (row_idx / t as u64) as u16;
                    let frame = (row_idx % t as u64) as u32;
                    let src = &self.row_at(rec, layer, frame)[in_row..];
                    let n = src.len().min(buf.len() - done);
                    buf[done..done + n].copy_from_slice(&src[..n]);
                    n
                }
            };
            done += n;
            self.pos += n as u64;
        }
        Ok(done)
    }
}

impl Seek for VirtualDump {
    fn seek(&mut self, to: SeekFrom) -> io::Result<u64> {
        let target = match to {
            SeekFrom::Start(p) => Some(p),
            SeekFrom::End(d) => self.len.checked_add_signed(d),
            SeekFrom::Current(d) => self.pos.checked_add_signed(d),
        };
        match target {
            Some(p) => {
                self.pos = p;
                Ok(p)
            }
            None => Err(io::Error::new(io::ErrorKind::InvalidInput, "seek before start")),
        }
    }
}

/// Row-softmax attention for every utterance, capped at `max_frames` queries.
/// Each head attends around a head-specific offset with a head-specific width;
/// heads of models with the same `seed` share these patterns.
pub fn attention_records(model: &SynthModel, corpus: &SynthCorpus, n_heads: u16, max_frames: u32) -> Vec<UtteranceRecord> {
    let heads: Vec<(f32, f32)> = (0..model.n_layers as u64)
        .flat_map(|l| (0..n_heads as u64).map(move |h| (l, h)))
        .map(|(l, h)| {
            let k = key(&[model.seed, TAG_HEAD, l, h]);
            let width = 0.5 + (k % 8) as f32;
            let offset = ((k >> 8) % 5) as f32 - 2.0;
            (width, offset)
        })
        .collect();
    corpus
        .utterances
        .iter()
        .enumerate()
        .map(|(u, (id, t))| {
            let t = model.frames(u, *t).min(max_frames).max(1) as usize;
            let mut payload = Vec::with_capacity(heads.len() * t * t);
            let mut logits = vec![0f32; t];
            for (hi, &(width, offset)) in heads.iter().enumerate() {
                for q in 0..t {
                    for (k, lg) in logits.iter_mut().enumerate() {
                        let dist = (q as f32 + offset - k as f32).abs() / width;
                        let n = gauss(key(&[model.seed, TAG_NOISE, u as u64, hi as u64, (q * t + k) as u64]));
                        *lg = -dist + model.noise * n;
                    }
                    let m = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                    let s: f32 = logits.iter().map(|v| (v - m).exp()).sum();
                    payload.extend(logits.iter().map(|v| (v - m).exp() / s));
                }
            }
            UtteranceRecord::new(id.clone(), t as u32, payload)
        })
        .collect()
}
