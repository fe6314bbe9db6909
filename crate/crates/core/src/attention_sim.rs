//! Attention-head similarity.
//!
//! Each head of a layer is turned into one long sample series: for every shared
//! utterance, both dumps are cut to the common `T = min(T_x, T_y)` queries and
//! keys, and the head's `T x T` block is flattened query-major (optionally keeping
//! only every `s`-th query row). Heads are then compared by Pearson correlation
//! over these identically indexed series, and each source head is matched to its
//! best target head as for neurons.

use std::io::{Read, Seek};

use crate::dumpio::{DumpKind, DumpReader};
use crate::error::{Error, Result};
use crate::measure::Score;
use crate::neuron_sim::{corr_matrix, max_match, CorrMatrix};
use crate::stats::{align_utterances, MomentSet, PairMeta, PassAccumulator};

#[derive(Debug, Clone, Copy)]
pub struct AttentionOptions {
    /// Keep every `query_stride`-th query row (1 keeps all).
    pub query_stride: usize,
}

impl Default for AttentionOptions {
    fn default() -> Self {
        AttentionOptions { query_stride: 1 }
    }
}

/// Head-by-head correlations of one layer pair.
#[derive(Debug, Clone)]
pub struct HeadCorr {
    pub meta: PairMeta,
    /// Number of aligned samples each head contributed.
    pub n_samples: u64,
    pub corr: CorrMatrix,
}

fn expect_attention<R>(reader: &DumpReader<R>) -> Result<usize> {
    match reader.header().kind {
        DumpKind::Attention { n_heads } => Ok(n_heads as usize),
        DumpKind::Activations { .. } => Err(Error::WrongKind { expected: "attention", found: "activations" }),
    }
}

/// Flattens the aligned `t x t` block of every head into a `samples x H` row-major matrix.
fn head_samples(layer: &[f32], n_heads: usize, stored_t: usize, t: usize, stride: usize, out: &mut Vec<f32>) {
    out.clear();
    for q in (0..t).step_by(stride) {
        for k in 0..t {
            for h in 0..n_heads {
                out.push(layer[h * stored_t * stored_t + q * stored_t + k]);
            }
        }
    }
}

/// Streaming per-head moments for the given layer pairs. Units of each
/// returned [`MomentSet`] are heads; samples are flattened attention weights.
pub fn attention_moments<R1, R2>(
    dump_x: &mut DumpReader<R1>,
    dump_y: &mut DumpReader<R2>,
    pairs: &[(u16, u16)],
    options: AttentionOptions,
) -> Result<Vec<MomentSet>>
where
    R1: Read + Seek,
    R2: Read + Seek,
{
    if options.query_stride == 0 {
        return Err(Error::InvalidArgument("query_stride must be >= 1".into()));
    }
    let hx = expect_attention(dump_x)?;
    let hy = expect_attention(dump_y)?;
    let aligned = align_utterances(&dump_x.index()?, &dump_y.index()?)?;
    let mut x_layers: Vec<u16> = Vec::new();
    let mut y_layers: Vec<u16> = Vec::new();
    let mut idx_pairs = Vec::with_capacity(pairs.len());
    for &(a, b) in pairs {
        let i = x_layers.iter().position(|&l| l == a).unwrap_or_else(|| {
            x_layers.push(a);
            x_layers.len() - 1
        });
        let j = y_layers.iter().position(|&l| l == b).unwrap_or_else(|| {
            y_layers.push(b);
            y_layers.len() - 1
        });
        idx_pairs.push((i, j));
    }
    let longest = aligned.iter().map(|u| u.frames as usize).max().unwrap_or(1);
    let capacity = longest.div_ceil(options.query_stride) * longest;
    let mut acc = PassAccumulator::new(vec![hx; x_layers.len()], vec![hy; y_layers.len()], idx_pairs, capacity);
    let mut bufs_x = vec![Vec::new(); x_layers.len()];
    let mut bufs_y = vec![Vec::new(); y_layers.len()];
    for utt in &aligned {
        let t = utt.frames as usize;
        let sx = dump_x.read_layers(&utt.x, &x_layers)?;
        let sy = dump_y.read_layers(&utt.y, &y_layers)?;
        for (i, buf) in bufs_x.iter_mut().enumerate() {
            head_samples(sx.layer(i), hx, utt.x.n_frames as usize, t, options.query_stride, buf);
        }
        for (j, buf) in bufs_y.iter_mut().enumerate() {
            head_samples(sy.layer(j), hy, utt.y.n_frames as usize, t, options.query_stride, buf);
        }
        let samples = t.div_ceil(options.query_stride) * t;
        let xs: Vec<&[f32]> = bufs_x.iter().map(|b| b.as_slice()).collect();
        let ys: Vec<&[f32]> = bufs_y.iter().map(|b| b.as_slice()).collect();
        acc.push_f32(&xs, &ys, samples);
        // One utterance already yields T² samples; flush per utterance.
        acc.flush();
    }
    if acc.n() == 0 {
        return Err(Error::NoAlignedFrames);
    }
    let model_x = dump_x.header().model_id.clone();
    let model_y = dump_y.header().model_id.clone();
    Ok(acc.finish(|i, j| PairMeta::new(model_x.clone(), x_layers[i], model_y.clone(), y_layers[j])))
}

/// Pearson correlation of every head pair for each requested layer pair.
pub fn attention_corr<R1, R2>(
    dump_x: &mut DumpReader<R1>,
    dump_y: &mut DumpReader<R2>,
    pairs: &[(u16, u16)],
    options: AttentionOptions,
) -> Result<Vec<HeadCorr>>
where
    R1: Read + Seek,
    R2: Read + Seek,
{
    attention_moments(dump_x, dump_y, pairs, options)?
        .iter()
        .map(|m| Ok(HeadCorr { meta: m.meta.clone(), n_samples: m.n(), corr: corr_matrix(m)? }))
        .collect()
}

/// Mean over unmasked source heads of the best target-head correlation.
pub fn attention_sm(corr: &CorrMatrix, use_abs: bool) -> Score {
    max_match(corr, use_abs)
}
