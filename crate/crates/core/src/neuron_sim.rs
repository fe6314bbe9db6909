//! Neuron-level similarity.
//!
//! * `neu_neu`: for each neuron of the source layer, the best Pearson
//!   correlation with any single neuron of the target layer, averaged over the
//!   source layer. High values mean concepts are localized in matching neurons.
//! * `neu_lay`: for each source neuron, the r-value of a least-squares fit on
//!   the whole target layer, averaged over the source layer. High values mean
//!   the information is present as a linear combination (distributed).
//!
//! Both are computed exactly from a [`MomentSet`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::measure::{Direction, Flags, Score};
use crate::stats::MomentSet;

/// Default relative ridge term for `neu_lay`.
pub const DEFAULT_RIDGE_EPS: f64 = 1e-8;

/// Regularization whose first-order effect on any R² exceeds this is flagged.
const RIDGE_EFFECT_FLAG: f64 = 1e-6;

/// Pearson correlations between every unit of x (rows) and of y (columns).
/// Entries involving a zero-variance unit are 0 and the unit is masked.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrMatrix {
    pub rho: DMatrix<f64>,
    pub mask_x: Vec<bool>,
    pub mask_y: Vec<bool>,
}

pub type NeuronCorrMatrix = CorrMatrix;

impl CorrMatrix {
    /// Wraps a bare correlation matrix with nothing masked.
    pub fn from_matrix(rho: DMatrix<f64>) -> Self {
        let (r, c) = rho.shape();
        CorrMatrix { rho, mask_x: vec![false; r], mask_y: vec![false; c] }
    }

    pub fn transpose(&self) -> Self {
        CorrMatrix { rho: self.rho.transpose(), mask_x: self.mask_y.clone(), mask_y: self.mask_x.clone() }
    }

    /// Builds correlations from co-moment blocks (any common scale).
    pub(crate) fn from_blocks(var_x: &DVector<f64>, var_y: &DVector<f64>, cross: &DMatrix<f64>) -> Self {
        let mask_x: Vec<bool> = var_x.iter().map(|&v| !(v > 0.0)).collect();
        let mask_y: Vec<bool> = var_y.iter().map(|&v| !(v > 0.0)).collect();
        let sx: Vec<f64> = var_x.iter().map(|v| v.max(0.0).sqrt()).collect();
        let sy: Vec<f64> = var_y.iter().map(|v| v.max(0.0).sqrt()).collect();
        let rho = DMatrix::from_fn(cross.nrows(), cross.ncols(), |i, j| {
            if mask_x[i] || mask_y[j] {
                0.0
            } else {
                (cross[(i, j)] / (sx[i] * sy[j])).clamp(-1.0, 1.0)
            }
        });
        CorrMatrix { rho, mask_x, mask_y }
    }
}

/// Pearson correlation matrix of a moment set.
pub fn corr_matrix(m: &MomentSet) -> Result<CorrMatrix> {
    if m.n() < 2 {
        return Err(Error::Numerical(format!("{}: need at least 2 frames, have {}", m.meta, m.n())));
    }
    Ok(CorrMatrix::from_blocks(&m.comoment_xx().diagonal(), &m.comoment_yy().diagonal(), m.comoment_xy()))
}

/// For each unmasked row, the max over unmasked columns (of |rho| when
/// `use_abs`), averaged over unmasked rows.
pub fn max_match(corr: &CorrMatrix, use_abs: bool) -> Score {
    let mut flags = Flags::NONE;
    if corr.mask_x.iter().chain(&corr.mask_y).any(|&m| m) {
        flags |= Flags::MASKED;
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, _) in corr.mask_x.iter().enumerate().filter(|(_, &m)| !m) {
        let best = corr
            .rho
            .row(i)
            .iter()
            .zip(&corr.mask_y)
            .filter(|(_, &m)| !m)
            .map(|(&r, _)| if use_abs { r.abs() } else { r })
            .fold(f64::NEG_INFINITY, f64::max);
        sum += if best.is_finite() { best } else { 0.0 };
        count += 1;
    }
    if count == 0 {
        log::warn!("every source unit is masked; score is 0");
        return Score::new(0.0, flags | Flags::ALL_MASKED);
    }
    Score::new(sum / count as f64, flags)
}

/// Mean over source neurons of the best matching target neuron correlation.
pub fn neu_neu(m: &MomentSet, use_abs: bool, direction: Direction) -> Result<Score> {
    let corr = corr_matrix(m)?;
    Ok(match direction {
        Direction::XToY => max_match(&corr, use_abs),
        Direction::YToX => max_match(&corr.transpose(), use_abs),
    })
}

/// Per-neuron regression fit of each x neuron on the whole y layer.
#[derive(Debug, Clone)]
pub struct RegressionFit {
    /// r-value per x neuron; masked neurons hold 0.
    pub r: Vec<f64>,
    pub mask: Vec<bool>,
    pub flags: Flags,
}

/// Least-squares fit (with intercept) of every x neuron on all y neurons.
///
/// `R²_k = c_k^T (S_yy + λI)^{-1} c_k / var_k` with `λ = ridge_eps * tr(S_yy) / d_y`.
pub fn regression_fit(m: &MomentSet, ridge_eps: f64) -> Result<RegressionFit> {
    if m.n() < 2 {
        return Err(Error::Numerical(format!("{}: need at least 2 frames, have {}", m.meta, m.n())));
    }
    if !(ridge_eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge_eps must be >= 0, got {ridge_eps}")));
    }
    let mut flags = Flags::NONE;
    let dy = m.dy();
    if m.n() < dy as u64 + 2 {
        log::warn!("{}: {} frames for a {}-dimensional target; fit is underdetermined", m.meta, m.n(), dy);
        flags |= Flags::UNDERDETERMINED;
    }
    let cov_yy = m.cov_yy();
    let cov_xy = m.cov_xy();
    let var_x = m.var_x();
    let mask: Vec<bool> = var_x.iter().map(|&v| !(v > 0.0)).collect();
    let keep_y: Vec<usize> = (0..dy).filter(|&j| cov_yy[(j, j)] > 0.0).collect();
    if mask.iter().any(|&b| b) || keep_y.len() < dy {
        flags |= Flags::MASKED;
    }
    let mut r = vec![0.0; m.dx()];
    if keep_y.is_empty() {
        if mask.iter().all(|&b| b) {
            flags |= Flags::ALL_MASKED;
        }
        return Ok(RegressionFit { r, mask, flags });
    }
    let lambda = ridge_eps * cov_yy.trace() / dy as f64;
    let k = keep_y.len();
    let gram = DMatrix::from_fn(k, k, |a, b| cov_yy[(keep_y[a], keep_y[b])] + if a == b { lambda } else { 0.0 });
    let cross = DMatrix::from_fn(k, m.dx(), |a, i| cov_xy[(i, keep_y[a])]);
    let chol = gram.cholesky().ok_or_else(|| {
        Error::Numerical(format!("{}: target covariance is not positive definite (raise ridge_eps)", m.meta))
    })?;
    let z = chol.solve(&cross);
    let mut worst_effect = 0.0f64;
    for i in 0..m.dx() {
        if mask[i] {
            continue;
        }
        let zi = z.column(i);
        let explained = cross.column(i).dot(&zi);
        let r2 = (explained / var_x[i]).clamp(0.0, 1.0);
        r[i] = r2.sqrt();
        worst_effect = worst_effect.max(lambda * zi.norm_squared() / var_x[i]);
    }
    if worst_effect > RIDGE_EFFECT_FLAG {
        flags |= Flags::REGULARIZED;
    }
    Ok(RegressionFit { r, mask, flags })
}

/// Mean regression r-value of x neurons fitted on the full y layer.
pub fn neu_lay(m: &MomentSet, ridge_eps: f64) -> Result<Score> {
    let fit = regression_fit(m, ridge_eps)?;
    let live: Vec<f64> = fit.r.iter().zip(&fit.mask).filter(|(_, &mk)| !mk).map(|(&r, _)| r).collect();
    if live.is_empty() {
        log::warn!("{}: every source neuron is masked; score is 0", m.meta);
        return Ok(Score::new(0.0, fit.flags | Flags::ALL_MASKED));
    }
    Ok(Score::new(live.iter().sum::<f64>() / live.len() as f64, fit.flags))
}
