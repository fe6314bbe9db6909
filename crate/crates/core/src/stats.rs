//! Joint first and second moments of layer pairs, accumulated in one streaming pass.
//!
//! Every non-attention measure is a function of the means, self covariances and
//! cross covariance of two layers. These are accumulated in f64 as centered
//! co-moment sums: each chunk of aligned frames is shifted by the first frame
//! ever seen, centered on its own mean, multiplied out with a GEMM, and folded
//! into the running sums with the pairwise (Chan et al.) update
//!
//! ```text
//! M2 = M2_a + M2_b + (n_a n_b / n) * delta_x delta_y^T
//! ```
//!
//! Covariances use the 1/(n-1) normalization.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Seek, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::dumpio::{self, DumpKind, DumpReader, RecordEntry, KIND_MOMENTS, MAGIC, FORMAT_VERSION};
use crate::error::{Error, Result};

/// Absolute mean and co-moment matrix of one layer, shared between pairs.
type SelfBlock = (Arc<DVector<f64>>, Arc<DMatrix<f64>>);

/// Identifies the two layers a [`MomentSet`] describes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct PairMeta {
    pub model_x: String,
    pub layer_x: u16,
    pub model_y: String,
    pub layer_y: u16,
}

impl PairMeta {
    pub fn new(model_x: impl Into<String>, layer_x: u16, model_y: impl Into<String>, layer_y: u16) -> Self {
        PairMeta { model_x: model_x.into(), layer_x, model_y: model_y.into(), layer_y }
    }

    pub fn transposed(&self) -> PairMeta {
        PairMeta { model_x: self.model_y.clone(), layer_x: self.layer_y, model_y: self.model_x.clone(), layer_y: self.layer_x }
    }
}

impl std::fmt::Display for PairMeta {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{} x {}:{}", self.model_x, self.layer_x, self.model_y, self.layer_y)
    }
}

/// Means and centered co-moment sums for one layer pair.
///
/// Self blocks are reference counted so the sets of one pass share them.
#[derive(Debug, Clone)]
pub struct MomentSet {
    pub meta: PairMeta,
    n: u64,
    mean_x: Arc<DVector<f64>>,
    mean_y: Arc<DVector<f64>>,
    m2_xx: Arc<DMatrix<f64>>,
    m2_yy: Arc<DMatrix<f64>>,
    m2_xy: Arc<DMatrix<f64>>,
}

impl MomentSet {
    /// Builds a set from raw co-moment sums (not covariances).
    pub fn from_comoments(
        meta: PairMeta,
        n: u64,
        mean_x: DVector<f64>,
        mean_y: DVector<f64>,
        m2_xx: DMatrix<f64>,
        m2_yy: DMatrix<f64>,
        m2_xy: DMatrix<f64>,
    ) -> Result<Self> {
        Self::from_shared(meta, n, Arc::new(mean_x), Arc::new(mean_y), Arc::new(m2_xx), Arc::new(m2_yy), Arc::new(m2_xy))
    }

    fn from_shared(
        meta: PairMeta,
        n: u64,
        mean_x: Arc<DVector<f64>>,
        mean_y: Arc<DVector<f64>>,
        m2_xx: Arc<DMatrix<f64>>,
        m2_yy: Arc<DMatrix<f64>>,
        m2_xy: Arc<DMatrix<f64>>,
    ) -> Result<Self> {
        let (dx, dy) = (mean_x.len(), mean_y.len());
        if m2_xx.shape() != (dx, dx) || m2_yy.shape() != (dy, dy) || m2_xy.shape() != (dx, dy) {
            return Err(Error::DimensionMismatch(format!(
                "moment blocks {:?} {:?} {:?} do not match dims ({dx}, {dy})",
                m2_xx.shape(),
                m2_yy.shape(),
                m2_xy.shape()
            )));
        }
        Ok(MomentSet { meta, n, mean_x, mean_y, m2_xx, m2_yy, m2_xy })
    }

    /// The identity element for [`MomentSet::merge`].
    pub fn empty(meta: PairMeta, dx: usize, dy: usize) -> Self {
        MomentSet {
            meta,
            n: 0,
            mean_x: Arc::new(DVector::zeros(dx)),
            mean_y: Arc::new(DVector::zeros(dy)),
            m2_xx: Arc::new(DMatrix::zeros(dx, dx)),
            m2_yy: Arc::new(DMatrix::zeros(dy, dy)),
            m2_xy: Arc::new(DMatrix::zeros(dx, dy)),
        }
    }

    /// Moments of two in-memory frame matrices (`n x dx` and `n x dy`, one frame per row).
    pub fn from_frames(meta: PairMeta, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::DimensionMismatch(format!("{} frames vs {} frames", x.nrows(), y.nrows())));
        }
        let rows = |m: &DMatrix<f64>| -> Vec<f64> { m.transpose().as_slice().to_vec() };
        Self::from_rows(meta, &rows(x), &rows(y), x.nrows(), x.ncols(), y.ncols())
    }

    /// Moments of row-major frame buffers holding `n` frames of `dx` and `dy` values.
    pub fn from_rows(meta: PairMeta, x: &[f64], y: &[f64], n: usize, dx: usize, dy: usize) -> Result<Self> {
        if x.len() != n * dx || y.len() != n * dy {
            return Err(Error::DimensionMismatch(format!(
                "buffers of {} and {} values do not hold {n} frames of {dx} and {dy}",
                x.len(),
                y.len()
            )));
        }
        if dx == 0 || dy == 0 {
            return Err(Error::DimensionMismatch("layers need at least one unit".into()));
        }
        if n == 0 {
            return Ok(Self::empty(meta, dx, dy));
        }
        let mut acc = PassAccumulator::new(vec![dx], vec![dy], vec![(0, 0)], AccumulateOptions::default().min_chunk_frames);
        acc.push_f64(&[x], &[y], n);
        acc.flush();
        let mut sets = acc.finish(|_, _| meta.clone());
        Ok(sets.remove(0))
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn dx(&self) -> usize {
        self.mean_x.len()
    }

    pub fn dy(&self) -> usize {
        self.mean_y.len()
    }

    pub fn mean_x(&self) -> &DVector<f64> {
        &self.mean_x
    }

    pub fn mean_y(&self) -> &DVector<f64> {
        &self.mean_y
    }

    pub fn comoment_xx(&self) -> &DMatrix<f64> {
        &self.m2_xx
    }

    pub fn comoment_yy(&self) -> &DMatrix<f64> {
        &self.m2_yy
    }

    pub fn comoment_xy(&self) -> &DMatrix<f64> {
        &self.m2_xy
    }

    fn scale(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            1.0 / (self.n - 1) as f64
        }
    }

    /// Sample covariance of x (zero when n < 2).
    pub fn cov_xx(&self) -> DMatrix<f64> {
        self.m2_xx.as_ref() * self.scale()
    }

    pub fn cov_yy(&self) -> DMatrix<f64> {
        self.m2_yy.as_ref() * self.scale()
    }

    pub fn cov_xy(&self) -> DMatrix<f64> {
        self.m2_xy.as_ref() * self.scale()
    }

    pub fn var_x(&self) -> DVector<f64> {
        self.m2_xx.diagonal() * self.scale()
    }

    pub fn var_y(&self) -> DVector<f64> {
        self.m2_yy.diagonal() * self.scale()
    }

    /// Swaps the roles of x and y.
    pub fn transpose(&self) -> MomentSet {
        MomentSet {
            meta: self.meta.transposed(),
            n: self.n,
            mean_x: self.mean_y.clone(),
            mean_y: self.mean_x.clone(),
            m2_xx: self.m2_yy.clone(),
            m2_yy: self.m2_xx.clone(),
            m2_xy: Arc::new(self.m2_xy.transpose()),
        }
    }

    /// Combines statistics of two disjoint frame sets of the same layer pair.
    pub fn merge(&self, other: &MomentSet) -> Result<MomentSet> {
        if self.meta != other.meta {
            return Err(Error::MetadataMismatch(format!("cannot merge {} with {}", self.meta, other.meta)));
        }
        if (self.dx(), self.dy()) != (other.dx(), other.dy()) {
            return Err(Error::MetadataMismatch(format!(
                "cannot merge dims ({}, {}) with ({}, {})",
                self.dx(),
                self.dy(),
                other.dx(),
                other.dy()
            )));
        }
        if other.n == 0 {
            return Ok(self.clone());
        }
        if self.n == 0 {
            return Ok(other.clone());
        }
        let n = self.n + other.n;
        let (na, nb) = (self.n as f64, other.n as f64);
        let coef = na * nb / n as f64;
        let dx = other.mean_x.as_ref() - self.mean_x.as_ref();
        let dy = other.mean_y.as_ref() - self.mean_y.as_ref();
        let m2_xx = self.m2_xx.as_ref() + other.m2_xx.as_ref() + &dx * dx.transpose() * coef;
        let m2_yy = self.m2_yy.as_ref() + other.m2_yy.as_ref() + &dy * dy.transpose() * coef;
        let m2_xy = self.m2_xy.as_ref() + other.m2_xy.as_ref() + &dx * dy.transpose() * coef;
        let mean_x = self.mean_x.as_ref() + dx * (nb / n as f64);
        let mean_y = self.mean_y.as_ref() + dy * (nb / n as f64);
        MomentSet::from_comoments(self.meta.clone(), n, mean_x, mean_y, m2_xx, m2_yy, m2_xy)
    }
}

/// Running statistics of one block of variables (one layer).
struct BlockState {
    dim: usize,
    shift: Option<Vec<f64>>,
    mean: Vec<f64>,
    m2: DMatrix<f64>,
    // Pending frames, shifted, row-major.
    buf: Vec<f64>,
    // Per-chunk scratch: chunk mean minus running mean, in shifted coordinates.
    delta: Vec<f64>,
}

impl BlockState {
    fn new(dim: usize) -> Self {
        BlockState { dim, shift: None, mean: vec![0.0; dim], m2: DMatrix::zeros(dim, dim), buf: Vec::new(), delta: vec![0.0; dim] }
    }

    fn push_f32(&mut self, rows: &[f32]) {
        if rows.is_empty() {
            return;
        }
        let shift = self.shift.get_or_insert_with(|| rows[..self.dim].iter().map(|&v| v as f64).collect());
        for row in rows.chunks_exact(self.dim) {
            self.buf.extend(row.iter().zip(shift.iter()).map(|(&v, &s)| v as f64 - s));
        }
    }

    fn push_f64(&mut self, rows: &[f64]) {
        if rows.is_empty() {
            return;
        }
        let shift = self.shift.get_or_insert_with(|| rows[..self.dim].to_vec());
        for row in rows.chunks_exact(self.dim) {
            self.buf.extend(row.iter().zip(shift.iter()).map(|(&v, &s)| v - s));
        }
    }

    /// Centers the pending chunk in place and records its mean offset.
    fn center(&mut self, t: usize) {
        let d = self.dim;
        let mut chunk_mean = vec![0.0; d];
        for row in self.buf.chunks_exact(d) {
            for (m, v) in chunk_mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in chunk_mean.iter_mut() {
            *m /= t as f64;
        }
        for row in self.buf.chunks_exact_mut(d) {
            for (v, m) in row.iter_mut().zip(&chunk_mean) {
                *v -= m;
            }
        }
        for ((dl, cm), rm) in self.delta.iter_mut().zip(&chunk_mean).zip(&self.mean) {
            *dl = cm - rm;
        }
    }

    fn absolute_mean(&self) -> DVector<f64> {
        match &self.shift {
            Some(s) => DVector::from_iterator(self.dim, self.mean.iter().zip(s).map(|(m, s)| m + s)),
            None => DVector::zeros(self.dim),
        }
    }
}

/// `c += a^T b` for row-major `a` (t x m) and `b` (t x n); `c` is column-major m x n.
fn gemm_tn_acc(c: &mut DMatrix<f64>, a: &[f64], b: &[f64], t: usize) {
    let (m, n) = c.shape();
    debug_assert_eq!(a.len(), t * m);
    debug_assert_eq!(b.len(), t * n);
    if t == 0 || m == 0 || n == 0 {
        return;
    }
    // SAFETY: the slices hold t*m and t*n values and `c` holds m*n; strides
    // describe a^T (m x t), b (t x n) and c (m x n) within those bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            t,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            1,
            m as isize,
        );
    }
}

fn rank1_acc(c: &mut DMatrix<f64>, u: &[f64], v: &[f64], coef: f64) {
    if coef == 0.0 {
        return;
    }
    for (j, mut col) in c.column_iter_mut().enumerate() {
        let f = coef * v[j];
        if f == 0.0 {
            continue;
        }
        for (ci, ui) in col.iter_mut().zip(u) {
            *ci += f * ui;
        }
    }
}

/// Accumulates self blocks for every x and y layer of a pass and cross blocks
/// for the requested (x index, y index) pairs. All blocks see the same frames.
pub(crate) struct PassAccumulator {
    n: u64,
    pending: usize,
    capacity: usize,
    xs: Vec<BlockState>,
    ys: Vec<BlockState>,
    cross: Vec<(usize, usize, DMatrix<f64>)>,
}

impl PassAccumulator {
    /// Chunks are folded into the sums whenever `capacity` frames are pending.
    pub(crate) fn new(x_dims: Vec<usize>, y_dims: Vec<usize>, pairs: Vec<(usize, usize)>, capacity: usize) -> Self {
        let capacity = capacity.max(1);
        let cross = pairs.into_iter().map(|(i, j)| (i, j, DMatrix::zeros(x_dims[i], y_dims[j]))).collect();
        let block = |d: usize| {
            let mut b = BlockState::new(d);
            b.buf = Vec::with_capacity(capacity * d);
            b
        };
        PassAccumulator {
            n: 0,
            pending: 0,
            capacity,
            xs: x_dims.into_iter().map(block).collect(),
            ys: y_dims.into_iter().map(block).collect(),
            cross,
        }
    }

    /// Appends `t` aligned frames; each slice holds at least `t` rows of its block.
    pub(crate) fn push_f32(&mut self, xs: &[&[f32]], ys: &[&[f32]], t: usize) {
        let mut at = 0;
        while at < t {
            let take = (self.capacity - self.pending).min(t - at);
            for (b, rows) in self.xs.iter_mut().zip(xs).chain(self.ys.iter_mut().zip(ys)) {
                let d = b.dim;
                b.push_f32(&rows[at * d..(at + take) * d]);
            }
            self.pending += take;
            at += take;
            if self.pending == self.capacity {
                self.flush();
            }
        }
    }

    pub(crate) fn push_f64(&mut self, xs: &[&[f64]], ys: &[&[f64]], t: usize) {
        let mut at = 0;
        while at < t {
            let take = (self.capacity - self.pending).min(t - at);
            for (b, rows) in self.xs.iter_mut().zip(xs).chain(self.ys.iter_mut().zip(ys)) {
                let d = b.dim;
                b.push_f64(&rows[at * d..(at + take) * d]);
            }
            self.pending += take;
            at += take;
            if self.pending == self.capacity {
                self.flush();
            }
        }
    }

    /// Folds the pending chunk into the running sums.
    pub(crate) fn flush(&mut self) {
        let t = self.pending;
        if t == 0 {
            return;
        }
        let na = self.n as f64;
        let nb = t as f64;
        let coef = na * nb / (na + nb);
        self.xs.par_iter_mut().chain(self.ys.par_iter_mut()).for_each(|b| {
            b.center(t);
            let BlockState { m2, buf, delta, .. } = b;
            gemm_tn_acc(m2, buf, buf, t);
            rank1_acc(m2, delta, delta, coef);
        });
        let (xs, ys) = (&self.xs, &self.ys);
        self.cross.par_iter_mut().for_each(|(i, j, m2)| {
            let (bx, by) = (&xs[*i], &ys[*j]);
            gemm_tn_acc(m2, &bx.buf, &by.buf, t);
            rank1_acc(m2, &bx.delta, &by.delta, coef);
        });
        let w = nb / (na + nb);
        for b in self.xs.iter_mut().chain(self.ys.iter_mut()) {
            for (m, dl) in b.mean.iter_mut().zip(&b.delta) {
                *m += dl * w;
            }
            b.buf.clear();
        }
        self.n += t as u64;
        self.pending = 0;
    }

    pub(crate) fn n(&self) -> u64 {
        self.n
    }

    /// Converts into moment sets, one per cross pair, sharing self blocks.
    pub(crate) fn finish(mut self, meta: impl Fn(usize, usize) -> PairMeta) -> Vec<MomentSet> {
        self.flush();
        let n = self.n;
        let share = |blocks: Vec<BlockState>| -> Vec<SelfBlock> {
            blocks.into_iter().map(|b| (Arc::new(b.absolute_mean()), Arc::new(b.m2))).collect()
        };
        let xs = share(self.xs);
        let ys = share(self.ys);
        self.cross
            .into_iter()
            .map(|(i, j, m2)| MomentSet {
                meta: meta(i, j),
                n,
                mean_x: xs[i].0.clone(),
                mean_y: ys[j].0.clone(),
                m2_xx: xs[i].1.clone(),
                m2_yy: ys[j].1.clone(),
                m2_xy: Arc::new(m2),
            })
            .collect()
    }
}

/// Layer pairs accumulated together in one data pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PairPlan {
    pub pairs: Vec<(u16, u16)>,
    pub budget_bytes: u64,
    /// Co-moment blocks alone, per [`plan_cost`].
    pub blocks_bytes: u64,
    /// Blocks plus a working set of [`PLAN_CHUNK_FRAMES`] frames and the fixed workspace.
    pub estimated_bytes: u64,
}

impl PairPlan {
    fn new(pairs: Vec<(u16, u16)>, budget_bytes: u64, dx: u64, dy: u64) -> Self {
        let blocks_bytes = plan_cost(&pairs, dx, dy);
        let estimated_bytes = blocks_bytes + working_bytes(&pairs, dx, dy, PLAN_CHUNK_FRAMES) + workspace_bytes();
        PairPlan { pairs, budget_bytes, blocks_bytes, estimated_bytes }
    }

    /// A plan for explicit pairs with no budget constraint.
    pub fn unbounded(pairs: Vec<(u16, u16)>, dx: usize, dy: usize) -> Self {
        Self::new(pairs, u64::MAX, dx as u64, dy as u64)
    }

    pub fn x_layers(&self) -> Vec<u16> {
        distinct(self.pairs.iter().map(|p| p.0))
    }

    pub fn y_layers(&self) -> Vec<u16> {
        distinct(self.pairs.iter().map(|p| p.1))
    }
}

fn distinct(it: impl Iterator<Item = u16>) -> Vec<u16> {
    let mut seen = HashSet::new();
    it.filter(|l| seen.insert(*l)).collect()
}

/// Bytes of a dx x dy f64 block.
pub fn block_bytes(dx: u64, dy: u64) -> u64 {
    8 * dx * dy
}

/// Cost model: every cross block plus one self block per distinct layer on each side.
pub fn plan_cost(pairs: &[(u16, u16)], dx: u64, dy: u64) -> u64 {
    let nx = distinct(pairs.iter().map(|p| p.0)).len() as u64;
    let ny = distinct(pairs.iter().map(|p| p.1)).len() as u64;
    pairs.len() as u64 * block_bytes(dx, dy) + nx * block_bytes(dx, dx) + ny * block_bytes(dy, dy)
}

/// Frames of working buffer the planner leaves room for in every pass.
pub const PLAN_CHUNK_FRAMES: u64 = 256;

/// Allowance per worker thread for matrix-multiply packing buffers and bookkeeping.
pub const WORKSPACE_BYTES_PER_THREAD: u64 = 4 << 20;

pub fn workspace_bytes() -> u64 {
    WORKSPACE_BYTES_PER_THREAD * rayon::current_num_threads() as u64
}

/// Buffers for `frames` frames of every layer in a pass: the f64 chunk rows
/// plus the f32 rows read from the dumps.
pub fn working_bytes(pairs: &[(u16, u16)], dx: u64, dy: u64, frames: u64) -> u64 {
    let nx = distinct(pairs.iter().map(|p| p.0)).len() as u64;
    let ny = distinct(pairs.iter().map(|p| p.1)).len() as u64;
    frames * (nx * dx + ny * dy) * (8 + 4)
}

/// Every (x, y) layer pair in row-major order.
pub fn all_pairs(lx: u16, ly: u16) -> Vec<(u16, u16)> {
    (0..lx).flat_map(|i| (0..ly).map(move |j| (i, j))).collect()
}

/// Splits the requested pairs into passes whose estimated memory fits the budget.
/// Pairs are packed greedily in request order. The estimate covers the blocks
/// of [`plan_cost`] plus room for a working chunk of [`PLAN_CHUNK_FRAMES`]
/// frames; [`accumulate`] sizes its chunks to whatever the budget leaves.
pub fn plan_pairs(
    lx: u16,
    dx: usize,
    ly: u16,
    dy: usize,
    budget_bytes: u64,
    requested: &[(u16, u16)],
) -> Result<Vec<PairPlan>> {
    let (dx, dy) = (dx as u64, dy as u64);
    let single = PairPlan::new(vec![(0, 0)], budget_bytes, dx, dy).estimated_bytes;
    if single > budget_bytes {
        return Err(Error::BudgetTooSmall { budget: budget_bytes, required: single });
    }
    let mut seen = HashSet::new();
    for &(x, y) in requested {
        if x >= lx || y >= ly {
            return Err(Error::InvalidArgument(format!("pair ({x}, {y}) outside {lx} x {ly} layers")));
        }
        if !seen.insert((x, y)) {
            return Err(Error::InvalidArgument(format!("pair ({x}, {y}) requested twice")));
        }
    }
    let mut plans = Vec::new();
    let mut current: Vec<(u16, u16)> = Vec::new();
    for &pair in requested {
        current.push(pair);
        if PairPlan::new(current.clone(), budget_bytes, dx, dy).estimated_bytes > budget_bytes {
            current.pop();
            plans.push(PairPlan::new(std::mem::take(&mut current), budget_bytes, dx, dy));
            current.push(pair);
        }
    }
    if !current.is_empty() {
        plans.push(PairPlan::new(current, budget_bytes, dx, dy));
    }
    Ok(plans)
}

/// Tuning for [`accumulate`].
#[derive(Debug, Clone, Copy)]
pub struct AccumulateOptions {
    /// Frames buffered before they are folded into the running sums. A pass
    /// uses fewer when its memory budget leaves no room for this many.
    pub min_chunk_frames: usize,
}

impl Default for AccumulateOptions {
    fn default() -> Self {
        AccumulateOptions { min_chunk_frames: 2048 }
    }
}

/// An utterance present in both dumps, with its aligned frame count.
#[derive(Debug, Clone)]
pub struct AlignedUtterance {
    pub x: RecordEntry,
    pub y: RecordEntry,
    pub frames: u32,
}

/// Joins two record indexes on utterance id, in the order of `x`.
/// Frames are aligned by truncating both to the shorter utterance.
pub fn align_utterances(x: &[RecordEntry], y: &[RecordEntry]) -> Result<Vec<AlignedUtterance>> {
    let mut by_id: HashMap<&str, &RecordEntry> = HashMap::with_capacity(y.len());
    for e in y {
        if by_id.insert(e.utterance_id.as_str(), e).is_some() {
            return Err(Error::MalformedRecord { utterance_id: e.utterance_id.clone(), reason: "duplicate utterance id".into() });
        }
    }
    let mut seen = HashSet::with_capacity(x.len());
    let mut out = Vec::new();
    for e in x {
        if !seen.insert(e.utterance_id.as_str()) {
            return Err(Error::MalformedRecord { utterance_id: e.utterance_id.clone(), reason: "duplicate utterance id".into() });
        }
        if let Some(ey) = by_id.get(e.utterance_id.as_str()) {
            out.push(AlignedUtterance { x: e.clone(), y: (*ey).clone(), frames: e.n_frames.min(ey.n_frames) });
        }
    }
    if out.is_empty() {
        return Err(Error::NoSharedUtterances);
    }
    Ok(out)
}

/// Largest chunk, up to `options.min_chunk_frames`, that fits the plan's budget
/// next to its blocks, one utterance of rows read from each dump and the workspace.
fn chunk_frames(plan: &PairPlan, aligned: &[AlignedUtterance], dx: u64, dy: u64, options: AccumulateOptions) -> Result<usize> {
    let wanted = options.min_chunk_frames.max(1) as u64;
    if plan.budget_bytes == u64::MAX {
        return Ok(wanted as usize);
    }
    let nx = plan.x_layers().len() as u64;
    let ny = plan.y_layers().len() as u64;
    let longest_x = aligned.iter().map(|u| u.x.n_frames as u64).max().unwrap_or(0);
    let longest_y = aligned.iter().map(|u| u.y.n_frames as u64).max().unwrap_or(0);
    let fixed = plan.blocks_bytes + 4 * (longest_x * nx * dx + longest_y * ny * dy) + workspace_bytes();
    let per_frame = 8 * (nx * dx + ny * dy);
    let room = plan.budget_bytes.saturating_sub(fixed) / per_frame.max(1);
    if room == 0 {
        return Err(Error::BudgetTooSmall { budget: plan.budget_bytes, required: fixed + per_frame });
    }
    Ok(wanted.min(room) as usize)
}

fn expect_activations<R>(reader: &DumpReader<R>) -> Result<usize> {
    match reader.header().kind {
        DumpKind::Activations { hidden_dim } => Ok(hidden_dim as usize),
        DumpKind::Attention { .. } => Err(Error::WrongKind { expected: "activations", found: "attention" }),
    }
}

/// One streaming pass over two activation dumps, producing a [`MomentSet`] per planned pair
/// (in plan order). Only the plan's layers are read; at most one record per dump is resident.
pub fn accumulate<R1, R2>(
    dump_x: &mut DumpReader<R1>,
    dump_y: &mut DumpReader<R2>,
    plan: &PairPlan,
    options: AccumulateOptions,
) -> Result<Vec<MomentSet>>
where
    R1: Read + Seek,
    R2: Read + Seek,
{
    let dx = expect_activations(dump_x)?;
    let dy = expect_activations(dump_y)?;
    let aligned = align_utterances(&dump_x.index()?, &dump_y.index()?)?;
    let x_layers = plan.x_layers();
    let y_layers = plan.y_layers();
    let pairs: Vec<(usize, usize)> = plan
        .pairs
        .iter()
        .map(|(a, b)| (x_layers.iter().position(|l| l == a).unwrap(), y_layers.iter().position(|l| l == b).unwrap()))
        .collect();
    let chunk = chunk_frames(plan, &aligned, dx as u64, dy as u64, options)?;
    let mut acc = PassAccumulator::new(vec![dx; x_layers.len()], vec![dy; y_layers.len()], pairs, chunk);
    for utt in &aligned {
        let sx = dump_x.read_layers(&utt.x, &x_layers)?;
        let sy = dump_y.read_layers(&utt.y, &y_layers)?;
        let xs: Vec<&[f32]> = (0..x_layers.len()).map(|i| sx.layer(i)).collect();
        let ys: Vec<&[f32]> = (0..y_layers.len()).map(|i| sy.layer(i)).collect();
        acc.push_f32(&xs, &ys, utt.frames as usize);
    }
    acc.flush();
    if acc.n() == 0 {
        return Err(Error::NoAlignedFrames);
    }
    let model_x = dump_x.header().model_id.clone();
    let model_y = dump_y.header().model_id.clone();
    Ok(acc.finish(|i, j| PairMeta::new(model_x.clone(), x_layers[i], model_y.clone(), y_layers[j])))
}

// ---------------------------------------------------------------------------
// `.rsm` persistence
//
// "RSD1" | version u32 | kind u8 = 2 | model_x str | model_y str | n u64 | dx u32 | dy u32
// | n_x u16 | n_x * (layer u16 | mean f64*dx | m2 f64*dx*dx)
// | n_y u16 | n_y * (layer u16 | mean f64*dy | m2 f64*dy*dy)
// | n_pairs u32 | n_pairs * (layer_x u16 | layer_y u16 | m2_xy f64*dx*dy)
//
// Matrices are row-major; the values are co-moment sums, not covariances.

fn put_f64s(out: &mut impl Write, vals: impl Iterator<Item = f64>) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(1 << 16);
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
        if buf.len() >= 1 << 16 {
            out.write_all(&buf)?;
            buf.clear();
        }
    }
    out.write_all(&buf)
}

fn row_major(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)]))
}

fn put_str(out: &mut impl Write, s: &str) -> std::io::Result<()> {
    out.write_all(&(s.len() as u32).to_le_bytes())?;
    out.write_all(s.as_bytes())
}

/// Writes moment sets from one pass (shared n, models and dims). Returns bytes written.
pub fn write_moments<W: Write>(sets: &[MomentSet], mut out: W) -> Result<u64> {
    let first = sets.first().ok_or_else(|| Error::InvalidArgument("no moment sets to write".into()))?;
    let (dx, dy) = (first.dx(), first.dy());
    for s in sets {
        if s.meta.model_x != first.meta.model_x || s.meta.model_y != first.meta.model_y || s.n != first.n || s.dx() != dx || s.dy() != dy {
            return Err(Error::MetadataMismatch(format!("{} does not belong with {}", s.meta, first.meta)));
        }
    }
    let mut xs: BTreeMap<u16, &MomentSet> = BTreeMap::new();
    let mut ys: BTreeMap<u16, &MomentSet> = BTreeMap::new();
    for s in sets {
        xs.entry(s.meta.layer_x).or_insert(s);
        ys.entry(s.meta.layer_y).or_insert(s);
    }
    let mut w = CountingWriter { inner: &mut out, count: 0 };
    w.write_all(&MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[KIND_MOMENTS])?;
    put_str(&mut w, &first.meta.model_x)?;
    put_str(&mut w, &first.meta.model_y)?;
    w.write_all(&first.n.to_le_bytes())?;
    w.write_all(&(dx as u32).to_le_bytes())?;
    w.write_all(&(dy as u32).to_le_bytes())?;
    w.write_all(&(xs.len() as u16).to_le_bytes())?;
    for (l, s) in &xs {
        w.write_all(&l.to_le_bytes())?;
        put_f64s(&mut w, s.mean_x.iter().copied())?;
        put_f64s(&mut w, row_major(&s.m2_xx))?;
    }
    w.write_all(&(ys.len() as u16).to_le_bytes())?;
    for (l, s) in &ys {
        w.write_all(&l.to_le_bytes())?;
        put_f64s(&mut w, s.mean_y.iter().copied())?;
        put_f64s(&mut w, row_major(&s.m2_yy))?;
    }
    w.write_all(&(sets.len() as u32).to_le_bytes())?;
    for s in sets {
        w.write_all(&s.meta.layer_x.to_le_bytes())?;
        w.write_all(&s.meta.layer_y.to_le_bytes())?;
        put_f64s(&mut w, row_major(&s.m2_xy))?;
    }
    w.flush()?;
    Ok(w.count)
}

struct CountingWriter<W> {
    inner: W,
    count: u64,
}

impl<W: Write> Write for CountingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.count += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

fn get_f64s<R: Read>(src: &mut R, n: usize) -> std::io::Result<Vec<f64>> {
    let mut bytes = vec![0u8; 8 * n];
    src.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn get_block<R: Read>(src: &mut R, dim: usize) -> Result<(u16, SelfBlock)> {
    let layer = dumpio::read_u16(src)?;
    let mean = DVector::from_vec(get_f64s(src, dim)?);
    let m2 = DMatrix::from_row_slice(dim, dim, &get_f64s(src, dim * dim)?);
    Ok((layer, (Arc::new(mean), Arc::new(m2))))
}

/// Reads a `.rsm` file written by [`write_moments`].
pub fn read_moments<R: Read>(mut src: R) -> Result<Vec<MomentSet>> {
    let kind = dumpio::read_preamble(&mut src)?;
    if kind != KIND_MOMENTS {
        return Err(Error::WrongKind { expected: "moments", found: if kind == 1 { "attention" } else { "activations" } });
    }
    let truncated = |e: std::io::Error| Error::truncated_or(e, "<moments>");
    let model_x = dumpio::read_str(&mut src)?;
    let model_y = dumpio::read_str(&mut src)?;
    let n = dumpio::read_u64(&mut src).map_err(truncated)?;
    let dx = dumpio::read_u32(&mut src).map_err(truncated)? as usize;
    let dy = dumpio::read_u32(&mut src).map_err(truncated)? as usize;
    let read_side = |src: &mut R, dim: usize| -> Result<HashMap<u16, SelfBlock>> {
        let count = dumpio::read_u16(src).map_err(truncated)?;
        let mut out = HashMap::new();
        for _ in 0..count {
            let (l, block) = get_block(src, dim).map_err(|e| match e {
                Error::Io(io) => truncated(io),
                other => other,
            })?;
            out.insert(l, block);
        }
        Ok(out)
    };
    let xs = read_side(&mut src, dx)?;
    let ys = read_side(&mut src, dy)?;
    let n_pairs = dumpio::read_u32(&mut src).map_err(truncated)?;
    let mut sets = Vec::with_capacity(n_pairs as usize);
    for _ in 0..n_pairs {
        let lx = dumpio::read_u16(&mut src).map_err(truncated)?;
        let ly = dumpio::read_u16(&mut src).map_err(truncated)?;
        let m2_xy = DMatrix::from_row_slice(dx, dy, &get_f64s(&mut src, dx * dy).map_err(truncated)?);
        let (mx, sxx) = xs.get(&lx).ok_or_else(|| Error::MalformedHeader(format!("no x self block for layer {lx}")))?;
        let (my, syy) = ys.get(&ly).ok_or_else(|| Error::MalformedHeader(format!("no y self block for layer {ly}")))?;
        sets.push(MomentSet::from_shared(
            PairMeta::new(model_x.clone(), lx, model_y.clone(), ly),
            n,
            mx.clone(),
            my.clone(),
            sxx.clone(),
            syy.clone(),
            Arc::new(m2_xy),
        )?);
    }
    Ok(sets)
}
