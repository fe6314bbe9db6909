//! Brute-force oracles over materialized frame matrices, plus seeded data.
//!
//! Nothing here goes through co-moments or covariance eigendecompositions:
//! correlations are two-pass, regressions are least squares on the design
//! matrix, and CCA uses QR of the centered data.

#![allow(dead_code, clippy::needless_range_loop)]

use std::io::Cursor;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use reprsim::dumpio::{write_dump, DumpHeader, DumpReader, UtteranceRecord};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Two layers driven by `k` shared latent factors plus private noise.
pub fn correlated_pair(seed: u64, n: usize, dx: usize, dy: usize, k: usize, noise: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut r = rng(seed);
    let z = normal(&mut r, n, k);
    let a = normal(&mut r, k, dx);
    let b = normal(&mut r, k, dy);
    let x = &z * a + normal(&mut r, n, dx) * noise;
    let y = &z * b + normal(&mut r, n, dy) * noise;
    (x, y)
}

/// A well-conditioned random invertible matrix (diagonally dominant).
pub fn invertible(seed: u64, d: usize) -> DMatrix<f64> {
    let mut r = rng(seed);
    let mut m = normal(&mut r, d, d) * (0.5 / (d as f64).sqrt());
    for i in 0..d {
        m[(i, i)] += if r.random::<bool>() { 2.0 } else { -2.0 };
    }
    m
}

pub fn orthogonal(seed: u64, d: usize) -> DMatrix<f64> {
    let mut r = rng(seed);
    normal(&mut r, d, d).qr().q()
}

pub fn centered(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mut c = x.clone();
    for mut col in c.column_iter_mut() {
        let mean = col.iter().sum::<f64>() / n;
        col.add_scalar_mut(-mean);
    }
    c
}

/// Column means and co-moment sums `Σ (a - ā)(b - b̄)` by two passes.
pub struct BatchMoments {
    pub mean_x: DVector<f64>,
    pub mean_y: DVector<f64>,
    pub m2_xx: DMatrix<f64>,
    pub m2_yy: DMatrix<f64>,
    pub m2_xy: DMatrix<f64>,
}

pub fn batch_moments(x: &DMatrix<f64>, y: &DMatrix<f64>) -> BatchMoments {
    let n = x.nrows() as f64;
    let mean = |m: &DMatrix<f64>| DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.iter().sum::<f64>() / n));
    let (xc, yc) = (centered(x), centered(y));
    let dot = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
        DMatrix::from_fn(a.ncols(), b.ncols(), |i, j| a.column(i).iter().zip(b.column(j).iter()).map(|(p, q)| p * q).sum())
    };
    BatchMoments { mean_x: mean(x), mean_y: mean(y), m2_xx: dot(&xc, &xc), m2_yy: dot(&yc, &yc), m2_xy: dot(&xc, &yc) }
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (p, q) in a.iter().zip(b) {
        let (u, v) = (p - ma, q - mb);
        sab += u * v;
        saa += u * u;
        sbb += v * v;
    }
    sab / (saa * sbb).sqrt()
}

fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

/// Mean over x columns of the best (absolute) Pearson correlation with a y column.
pub fn neu_neu(x: &DMatrix<f64>, y: &DMatrix<f64>, use_abs: bool) -> f64 {
    let (xs, ys) = (columns(x), columns(y));
    let total: f64 = xs
        .iter()
        .map(|a| {
            ys.iter()
                .map(|b| {
                    let r = pearson(a, b);
                    if use_abs {
                        r.abs()
                    } else {
                        r
                    }
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    total / xs.len() as f64
}

/// Mean over x columns of the r-value of an ordinary least-squares fit on `[1, y]`.
pub fn neu_lay(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let n = y.nrows();
    let design = DMatrix::from_fn(n, y.ncols() + 1, |i, j| if j == 0 { 1.0 } else { y[(i, j - 1)] });
    let svd = design.clone().svd(true, true);
    let xc = centered(x);
    let total: f64 = (0..x.ncols())
        .map(|k| {
            let target = x.column(k).into_owned();
            let beta = svd.solve(&target, 1e-12).unwrap();
            let resid = &target - &design * beta;
            let ss_res = resid.norm_squared();
            let ss_tot = xc.column(k).norm_squared();
            (1.0 - ss_res / ss_tot).max(0.0).sqrt()
        })
        .sum();
    total / x.ncols() as f64
}

/// Canonical correlations (descending) and PWCCA weights from the x side, via
/// QR of the centered data and an SVD of `Qxᵀ Qy`.
pub fn cca(x: &DMatrix<f64>, y: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let (xc, yc) = (centered(x), centered(y));
    let qx = xc.clone().qr().q();
    let qy = yc.qr().q();
    let svd = (qx.transpose() * &qy).svd(true, false);
    let u = svd.u.unwrap();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let p = x.ncols().min(y.ncols());
    order.truncate(p);
    let rho: Vec<f64> = order.iter().map(|&i| svd.singular_values[i].min(1.0)).collect();
    // Canonical variates of x and their loadings on the x neurons.
    let h = &qx * u;
    let loadings = xc.transpose() * h;
    let raw: Vec<f64> = order.iter().map(|&i| loadings.column(i).iter().map(|v| v.abs()).sum()).collect();
    let total: f64 = raw.iter().sum();
    (rho, raw.iter().map(|v| v / total).collect())
}

pub fn pwcca(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let (rho, alpha) = cca(x, y);
    rho.iter().zip(&alpha).map(|(r, a)| r * a).sum()
}

/// Projects centered data on the top right singular vectors holding `threshold` of the variance.
pub fn principal(x: &DMatrix<f64>, threshold: f64) -> DMatrix<f64> {
    let xc = centered(x);
    let svd = xc.clone().svd(false, true);
    let vt = svd.v_t.unwrap();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let energy: Vec<f64> = order.iter().map(|&i| svd.singular_values[i].powi(2)).collect();
    let total: f64 = energy.iter().sum();
    let mut acc = 0.0;
    let mut k = 0;
    while k < energy.len() {
        acc += energy[k];
        k += 1;
        if acc >= threshold * total {
            break;
        }
    }
    let basis = DMatrix::from_fn(x.ncols(), k, |r, c| vt[(order[c], r)]);
    xc * basis
}

pub fn svcca(x: &DMatrix<f64>, y: &DMatrix<f64>, threshold: f64) -> f64 {
    let (rho, _) = cca(&principal(x, threshold), &principal(y, threshold));
    rho.iter().sum::<f64>() / rho.len() as f64
}

/// Attention maps of one layer for every utterance, `[head][query][key]`.
pub type Maps = Vec<Vec<Vec<Vec<f64>>>>;

/// Samples × heads matrix: every (query, key) weight of every utterance,
/// truncated to the shorter utterance of the two dumps.
pub fn attention_samples(maps: &Maps, lengths: &[usize]) -> DMatrix<f64> {
    let heads = maps[0].len();
    let mut rows = Vec::new();
    for (u, &t) in lengths.iter().enumerate() {
        for q in 0..t {
            for k in 0..t {
                rows.push((0..heads).map(|h| maps[u][h][q][k]).collect::<Vec<_>>());
            }
        }
    }
    DMatrix::from_fn(rows.len(), heads, |i, j| rows[i][j])
}

/// Row-softmax of `logits` (`[head][query][key]`).
pub fn softmax_rows(logits: &[Vec<Vec<f64>>]) -> Vec<Vec<Vec<f64>>> {
    logits
        .iter()
        .map(|head| {
            head.iter()
                .map(|row| {
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
                    let s: f64 = e.iter().sum();
                    e.iter().map(|v| v / s).collect()
                })
                .collect()
        })
        .collect()
}

/// Rounds through f32, as a dump would store the values.
pub fn as_stored(maps: &Maps) -> Maps {
    maps.iter().map(|u| u.iter().map(|h| h.iter().map(|r| r.iter().map(|&v| v as f32 as f64).collect()).collect()).collect()).collect()
}

/// One-layer attention dump from maps.
pub fn attention_dump(model: &str, maps: &Maps) -> DumpReader<Cursor<Vec<u8>>> {
    let heads = maps[0].len() as u16;
    let records: Vec<UtteranceRecord> = maps
        .iter()
        .enumerate()
        .map(|(u, m)| {
            let t = m[0].len();
            let payload = m.iter().flat_map(|h| h.iter().flat_map(|r| r.iter().map(|&v| v as f32))).collect();
            UtteranceRecord::new(format!("u{u:04}"), t as u32, payload)
        })
        .collect();
    let header = DumpHeader::attention(model, 1, heads, records.len() as u32);
    let mut buf = Vec::new();
    write_dump(&header, &records, &mut buf).unwrap();
    DumpReader::new(Cursor::new(buf)).unwrap()
}

/// Activation dump from per-utterance `[layer] -> frames x d` matrices.
pub fn activation_dump(model: &str, utterances: &[Vec<DMatrix<f64>>]) -> Vec<u8> {
    let layers = utterances[0].len();
    let d = utterances[0][0].ncols();
    let records: Vec<UtteranceRecord> = utterances
        .iter()
        .enumerate()
        .map(|(u, ls)| {
            let t = ls[0].nrows();
            let payload = ls.iter().flat_map(|m| (0..t).flat_map(move |i| (0..d).map(move |j| m[(i, j)] as f32))).collect();
            UtteranceRecord::new(format!("u{u:04}"), t as u32, payload)
        })
        .collect();
    let header = DumpHeader::activations(model, layers as u16, d as u32, records.len() as u32);
    let mut buf = Vec::new();
    write_dump(&header, &records, &mut buf).unwrap();
    buf
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}
