//! Representation-level similarity by canonical correlation analysis.
//!
//! Everything is computed from covariance blocks. Each layer is whitened
//! through the eigendecomposition of its covariance (eigenvalues below
//! `eig_floor * max` are dropped), and the canonical correlations are the
//! singular values of
//!
//! ```text
//! T = Λx^{-1/2} Ux^T  Σxy  Uy Λy^{-1/2}
//! ```
//!
//! SVCCA first truncates each layer to the principal directions that keep a
//! given fraction of its variance and reports the mean canonical correlation.
//! PWCCA reports a weighted mean, weighting canonical direction `i` by
//! `Σ_j |<h_i, x_j>|`, which equals `Σ_j |(Σxx a_i)_j|` for canonical weights `a_i`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::measure::{Direction, Flags, Score};
use crate::stats::MomentSet;

pub const DEFAULT_EIG_FLOOR: f64 = 1e-10;
pub const DEFAULT_VAR_THRESHOLD: f64 = 0.99;

/// Eigendecomposition of a layer covariance, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: DVector<f64>,
    /// Eigenvectors as columns, in the order of `values`.
    pub vectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn of(cov: &DMatrix<f64>) -> Spectrum {
        let d = cov.nrows();
        if d == 0 {
            return Spectrum { values: DVector::zeros(0), vectors: DMatrix::zeros(0, 0) };
        }
        let sym = (cov + cov.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = DVector::from_iterator(d, order.iter().map(|&i| eig.eigenvalues[i]));
        let vectors = DMatrix::from_fn(d, d, |r, c| eig.eigenvectors[(r, order[c])]);
        Spectrum { values, vectors }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Number of eigenvalues above `eig_floor * max` (0 for an all-zero spectrum).
    pub fn rank(&self, eig_floor: f64) -> usize {
        let max = self.values.iter().copied().fold(0.0, f64::max);
        if !(max > 0.0) {
            return 0;
        }
        self.values.iter().take_while(|&&v| v > eig_floor * max).count()
    }

    /// Smallest number of leading directions holding at least `threshold` of the total variance.
    pub fn retained_for_variance(&self, threshold: f64) -> usize {
        let total: f64 = self.values.iter().filter(|&&v| v > 0.0).sum();
        if !(total > 0.0) {
            return 0;
        }
        let mut acc = 0.0;
        for (i, &v) in self.values.iter().enumerate() {
            if v <= 0.0 {
                return i;
            }
            acc += v;
            if acc >= threshold * total {
                return i + 1;
            }
        }
        self.dim()
    }

    /// `U_r Λ_r^{-1/2}` over the eigenvalues that survive the floor.
    fn whitener(&self, eig_floor: f64) -> DMatrix<f64> {
        let r = self.rank(eig_floor);
        let mut w = self.vectors.columns(0, r).into_owned();
        for (j, mut col) in w.column_iter_mut().enumerate() {
            col /= self.values[j].sqrt();
        }
        w
    }
}

#[derive(Debug, Clone)]
pub struct CcaResult {
    /// Canonical correlations, descending, clamped to [0, 1].
    pub rho_cca: Vec<f64>,
    /// `dx x p` canonical directions; variates have unit variance.
    pub weights_x: DMatrix<f64>,
    pub weights_y: DMatrix<f64>,
    /// Projection weights derived from the x layer (sum to 1).
    pub pw_alpha: Vec<f64>,
    /// Projection weights derived from the y layer (sum to 1).
    pub pw_alpha_y: Vec<f64>,
    pub effective_ranks: (usize, usize),
    pub flags: Flags,
}

impl CcaResult {
    pub fn p(&self) -> usize {
        self.rho_cca.len()
    }

    pub fn mean_rho(&self) -> f64 {
        if self.rho_cca.is_empty() {
            0.0
        } else {
            self.rho_cca.iter().sum::<f64>() / self.rho_cca.len() as f64
        }
    }
}

fn projection_weights(cov: &DMatrix<f64>, weights: &DMatrix<f64>) -> Vec<f64> {
    let proj = cov * weights;
    let raw: Vec<f64> = proj.column_iter().map(|c| c.iter().map(|v| v.abs()).sum()).collect();
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        raw.iter().map(|v| v / total).collect()
    } else {
        raw
    }
}

/// CCA of two covariance blocks with precomputed spectra.
pub fn cca_from_blocks(
    cov_xx: &DMatrix<f64>,
    cov_yy: &DMatrix<f64>,
    cov_xy: &DMatrix<f64>,
    spec_x: &Spectrum,
    spec_y: &Spectrum,
    eig_floor: f64,
) -> Result<CcaResult> {
    if !(eig_floor >= 0.0) {
        return Err(Error::InvalidArgument(format!("eig_floor must be >= 0, got {eig_floor}")));
    }
    let wx = spec_x.whitener(eig_floor);
    let wy = spec_y.whitener(eig_floor);
    let (rx, ry) = (wx.ncols(), wy.ncols());
    if rx == 0 && ry == 0 {
        return Err(Error::Numerical("both layers have zero variance".into()));
    }
    let mut flags = Flags::NONE;
    if rx < spec_x.dim() || ry < spec_y.dim() {
        flags |= Flags::RANK_DEFICIENT;
    }
    let p = rx.min(ry);
    if p == 0 {
        log::warn!("one layer has zero variance; no canonical directions");
        return Ok(CcaResult {
            rho_cca: Vec::new(),
            weights_x: DMatrix::zeros(cov_xx.nrows(), 0),
            weights_y: DMatrix::zeros(cov_yy.nrows(), 0),
            pw_alpha: Vec::new(),
            pw_alpha_y: Vec::new(),
            effective_ranks: (rx, ry),
            flags: flags | Flags::EMPTY,
        });
    }
    let t = wx.transpose() * cov_xy * &wy;
    let svd = t.svd(true, true);
    let u = svd.u.as_ref().ok_or_else(|| Error::Numerical("SVD did not produce U".into()))?;
    let v_t = svd.v_t.as_ref().ok_or_else(|| Error::Numerical("SVD did not produce V".into()))?;
    if svd.singular_values.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numerical("non-finite canonical correlation".into()));
    }
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    order.truncate(p);
    let rho_cca: Vec<f64> = order.iter().map(|&i| svd.singular_values[i].clamp(0.0, 1.0)).collect();
    let pu = DMatrix::from_fn(rx, p, |r, c| u[(r, order[c])]);
    let pv = DMatrix::from_fn(ry, p, |r, c| v_t[(order[c], r)]);
    let weights_x = wx * pu;
    let weights_y = wy * pv;
    let pw_alpha = projection_weights(cov_xx, &weights_x);
    let pw_alpha_y = projection_weights(cov_yy, &weights_y);
    Ok(CcaResult { rho_cca, weights_x, weights_y, pw_alpha, pw_alpha_y, effective_ranks: (rx, ry), flags })
}

fn require_frames(m: &MomentSet) -> Result<()> {
    if m.n() < 2 {
        return Err(Error::Numerical(format!("{}: need at least 2 frames, have {}", m.meta, m.n())));
    }
    Ok(())
}

/// Canonical correlation analysis of the two layers of a moment set.
pub fn cca(m: &MomentSet, eig_floor: f64) -> Result<CcaResult> {
    require_frames(m)?;
    let (cxx, cyy) = (m.cov_xx(), m.cov_yy());
    let (sx, sy) = (Spectrum::of(&cxx), Spectrum::of(&cyy));
    cca_from_blocks(&cxx, &cyy, &m.cov_xy(), &sx, &sy, eig_floor)
}

/// Same as [`cca`] with layer spectra computed elsewhere (shared across pairs).
pub fn cca_with(m: &MomentSet, spec_x: &Spectrum, spec_y: &Spectrum, eig_floor: f64) -> Result<CcaResult> {
    require_frames(m)?;
    cca_from_blocks(&m.cov_xx(), &m.cov_yy(), &m.cov_xy(), spec_x, spec_y, eig_floor)
}

/// Weighted mean of canonical correlations with weights from the chosen layer.
pub fn pwcca_from(result: &CcaResult, direction: Direction) -> Score {
    if result.p() == 0 {
        return Score::new(0.0, result.flags | Flags::EMPTY);
    }
    let alpha = match direction {
        Direction::XToY => &result.pw_alpha,
        Direction::YToX => &result.pw_alpha_y,
    };
    let value = alpha.iter().zip(&result.rho_cca).map(|(a, r)| a * r).sum::<f64>();
    Score::new(value, result.flags)
}

pub fn pwcca_score(m: &MomentSet, direction: Direction, eig_floor: f64) -> Result<Score> {
    Ok(pwcca_from(&cca(m, eig_floor)?, direction))
}

/// SVCCA details: the truncated CCA and how many directions each side kept.
#[derive(Debug, Clone)]
pub struct SvccaResult {
    pub kept: (usize, usize),
    pub cca: CcaResult,
}

impl SvccaResult {
    pub fn score(&self) -> Score {
        let mut flags = self.cca.flags;
        if self.cca.p() == 0 {
            flags |= Flags::EMPTY;
        }
        Score::new(self.cca.mean_rho(), flags)
    }
}

pub fn svcca_with(
    m: &MomentSet,
    spec_x: &Spectrum,
    spec_y: &Spectrum,
    var_threshold: f64,
    eig_floor: f64,
) -> Result<SvccaResult> {
    require_frames(m)?;
    if !(var_threshold > 0.0 && var_threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!("var_threshold must be in (0, 1], got {var_threshold}")));
    }
    let kx = spec_x.retained_for_variance(var_threshold);
    let ky = spec_y.retained_for_variance(var_threshold);
    let px = spec_x.vectors.columns(0, kx);
    let py = spec_y.vectors.columns(0, ky);
    let cov_xy = px.transpose() * m.cov_xy() * py;
    let cov_xx = DMatrix::from_diagonal(&spec_x.values.rows(0, kx).into_owned());
    let cov_yy = DMatrix::from_diagonal(&spec_y.values.rows(0, ky).into_owned());
    // The truncated blocks are diagonal, so their spectra are the identity basis.
    let sub_x = Spectrum { values: spec_x.values.rows(0, kx).into_owned(), vectors: DMatrix::identity(kx, kx) };
    let sub_y = Spectrum { values: spec_y.values.rows(0, ky).into_owned(), vectors: DMatrix::identity(ky, ky) };
    let cca = cca_from_blocks(&cov_xx, &cov_yy, &cov_xy, &sub_x, &sub_y, eig_floor)?;
    Ok(SvccaResult { kept: (kx, ky), cca })
}

/// Mean canonical correlation after truncating each layer to the principal
/// directions that retain `var_threshold` of its variance.
pub fn svcca_score(m: &MomentSet, var_threshold: f64, eig_floor: f64) -> Result<Score> {
    require_frames(m)?;
    let sx = Spectrum::of(&m.cov_xx());
    let sy = Spectrum::of(&m.cov_yy());
    Ok(svcca_with(m, &sx, &sy, var_threshold, eig_floor)?.score())
}
