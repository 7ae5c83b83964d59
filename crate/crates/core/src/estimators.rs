//! Latent-basis estimators.
//!
//! First- and second-order Stein estimators, their semi-supervised variants,
//! and the PCA / reduced-rank-regression baselines. Every estimator returns a
//! column-orthonormal `p x r` [`LatentBasis`].

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    leading_abs_eigen, leading_eigen, leading_left_singular, lstsq, second_moment, Leading,
};
use crate::scores::{ScoreField, SecondOrderMoment};

/// Multiples of the Monte Carlo standard error below which a second-order
/// moment is treated as zero.
pub const NEAR_ZERO_SE_MULTIPLE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FitWarning {
    /// Selected values `r` and `r + 1` coincide; the subspace is not unique.
    DegenerateSpectrum { position: usize, gap: f64 },
    /// Second-order estimator run with `n <= p²`.
    FewSamples { n: usize, p: usize },
    /// Fewer rows than columns; a pseudo-inverse was used.
    RankDeficientDesign { n: usize, p: usize },
    /// Second-order moment indistinguishable from zero, fitted anyway under
    /// [`NearZeroPolicy::Warn`].
    NearZeroMatrix {
        max_abs_eigenvalue: f64,
        frobenius: f64,
        standard_error: f64,
    },
}

impl FitWarning {
    pub fn tag(&self) -> &'static str {
        match self {
            FitWarning::DegenerateSpectrum { .. } => "degenerate-spectrum",
            FitWarning::FewSamples { .. } => "few-samples",
            FitWarning::RankDeficientDesign { .. } => "rank-deficient-design",
            FitWarning::NearZeroMatrix { .. } => "near-zero-matrix",
        }
    }
}

#[derive(Debug, Clone)]
pub struct LatentBasis {
    /// `p x r`, orthonormal columns.
    pub matrix: DMatrix<f64>,
    /// Spectrum the columns were selected from, in selection order.
    pub values: Vec<f64>,
    pub warnings: Vec<FitWarning>,
}

impl LatentBasis {
    fn from_leading(l: Leading) -> Self {
        let warnings = l
            .degeneracy
            .map(|d| FitWarning::DegenerateSpectrum {
                position: d.position,
                gap: d.gap,
            })
            .into_iter()
            .collect();
        Self {
            matrix: l.basis,
            values: l.values,
            warnings,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn rank(&self) -> usize {
        self.matrix.ncols()
    }

    /// `X B`, the `n x r` embedding of the rows of `x`.
    pub fn embed(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::shape("embedding input columns", self.dim(), x.ncols()));
        }
        Ok(x * &self.matrix)
    }
}

/// Labeled rows plus an unlabeled pool for the semi-supervised estimators.
#[derive(Debug, Clone)]
pub struct SemiSupervisedData {
    pub x_labeled: DMatrix<f64>,
    /// `n x m` labels; `m` may be zero.
    pub y_labeled: DMatrix<f64>,
    /// `N x p` pool, normally including the labeled rows.
    pub x_all: DMatrix<f64>,
    /// Scalar on the labeled block.
    pub label_weight: f64,
}

impl SemiSupervisedData {
    pub fn new(x_labeled: DMatrix<f64>, y_labeled: DMatrix<f64>, x_all: DMatrix<f64>) -> Result<Self> {
        let data = Self {
            x_labeled,
            y_labeled,
            x_all,
            label_weight: 1.0,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn with_label_weight(mut self, w: f64) -> Result<Self> {
        if !w.is_finite() {
            return Err(Error::InvalidParameter(format!("label weight must be finite, got {w}")));
        }
        self.label_weight = w;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let p = self.x_all.ncols();
        if p == 0 {
            return Err(Error::InvalidDimension {
                what: "feature dimension",
                value: 0,
            });
        }
        if self.x_all.nrows() == 0 {
            return Err(Error::InvalidDimension {
                what: "pool size",
                value: 0,
            });
        }
        if self.x_labeled.ncols() != p {
            return Err(Error::shape("labeled feature columns", p, self.x_labeled.ncols()));
        }
        if self.y_labeled.nrows() != self.x_labeled.nrows() {
            return Err(Error::shape(
                "label rows",
                self.x_labeled.nrows(),
                self.y_labeled.nrows(),
            ));
        }
        if self.x_labeled.nrows() > self.x_all.nrows() {
            return Err(Error::shape(
                "labeled rows (at most the pool size)",
                self.x_all.nrows(),
                self.x_labeled.nrows(),
            ));
        }
        if self.x_labeled.nrows() == 0 && self.y_labeled.ncols() > 0 {
            return Err(Error::InvalidDimension {
                what: "labeled sample size",
                value: 0,
            });
        }
        Ok(())
    }
}

fn check_rank(r: usize, max: usize) -> Result<()> {
    if r == 0 || r > max {
        return Err(Error::InvalidRank { r, max });
    }
    Ok(())
}

fn check_xy(x: &DMatrix<f64>, y: &DMatrix<f64>, field: Option<&ScoreField>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::InvalidDimension {
            what: "sample size",
            value: 0,
        });
    }
    if y.nrows() != x.nrows() {
        return Err(Error::shape("response rows", x.nrows(), y.nrows()));
    }
    if let Some(f) = field {
        if f.dim() != x.ncols() {
            return Err(Error::shape("score field dimension", x.ncols(), f.dim()));
        }
    }
    Ok(())
}

/// `(1/n) Σᵢ s(xᵢ) yᵢᵀ`, `p x q`.
pub fn first_order_moment(x: &DMatrix<f64>, y: &DMatrix<f64>, field: &ScoreField) -> Result<DMatrix<f64>> {
    check_xy(x, y, Some(field))?;
    Ok(field.score1_rows(x)?.tr_mul(y) / x.nrows() as f64)
}

/// `(1/(nq)) Σᵢ Σⱼ y_ij T(xᵢ)` with its standard error.
pub fn second_order_moment(x: &DMatrix<f64>, y: &DMatrix<f64>, field: &ScoreField) -> Result<SecondOrderMoment> {
    check_xy(x, y, Some(field))?;
    if y.ncols() == 0 {
        return Err(Error::InvalidDimension {
            what: "response dimension",
            value: 0,
        });
    }
    let q = y.ncols() as f64;
    let weights: Vec<f64> = y.row_iter().map(|row| row.sum() / q).collect();
    field.weighted_second_order(x, &weights)
}

/// Top-`r` left singular vectors of `(1/n) Σᵢ s(xᵢ) yᵢᵀ`.
///
/// Ties at `r` are broken by the design second moment `(1/n) XᵀX`, which makes
/// the plug-in estimator on `Y = X` coincide with PCA.
pub fn first_order_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, r: usize, field: &ScoreField) -> Result<LatentBasis> {
    check_rank(r, x.ncols().min(y.ncols()))?;
    let m = first_order_moment(x, y, field)?;
    let reference = second_moment(x);
    Ok(LatentBasis::from_leading(leading_left_singular(&m, r, Some(&reference))?))
}

/// What the second-order estimators do with a moment matrix that cannot be
/// told apart from zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NearZeroPolicy {
    /// Return [`Error::NearZeroMatrix`].
    #[default]
    Fail,
    /// Fit anyway and attach [`FitWarning::NearZeroMatrix`].
    Warn,
}

fn near_zero_check(m: &DMatrix<f64>, standard_error: f64) -> Option<FitWarning> {
    let p = m.nrows() as f64;
    let max_abs = m.symmetric_eigenvalues().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let frob = m.norm();
    (max_abs <= 1e-10 * p || frob <= NEAR_ZERO_SE_MULTIPLE * standard_error).then_some(FitWarning::NearZeroMatrix {
        max_abs_eigenvalue: max_abs,
        frobenius: frob,
        standard_error,
    })
}

fn finish_second_order(
    m: &DMatrix<f64>,
    standard_error: f64,
    r: usize,
    reference: &DMatrix<f64>,
    n: usize,
    policy: NearZeroPolicy,
) -> Result<LatentBasis> {
    let near_zero = near_zero_check(m, standard_error);
    if let (
        Some(FitWarning::NearZeroMatrix {
            max_abs_eigenvalue,
            frobenius,
            standard_error,
        }),
        NearZeroPolicy::Fail,
    ) = (&near_zero, policy)
    {
        return Err(Error::NearZeroMatrix {
            max_abs_eigenvalue: *max_abs_eigenvalue,
            frobenius: *frobenius,
            standard_error: *standard_error,
        });
    }
    let mut basis = LatentBasis::from_leading(leading_abs_eigen(m, r, Some(reference)));
    basis.warnings.extend(near_zero);
    let p = m.nrows();
    if n <= p * p {
        basis.warnings.push(FitWarning::FewSamples { n, p });
    }
    Ok(basis)
}

/// Top-`r` eigenvectors, by absolute eigenvalue, of
/// `(1/(nq)) Σᵢ Σⱼ y_ij T(xᵢ)`.
///
/// Fails with [`Error::NearZeroMatrix`] when the moment cannot be told apart
/// from zero: either every eigenvalue is below `1e-10 p`, or its Frobenius
/// norm is within [`NEAR_ZERO_SE_MULTIPLE`] standard errors of zero.
pub fn second_order_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, r: usize, field: &ScoreField) -> Result<LatentBasis> {
    second_order_fit_with(x, y, r, field, NearZeroPolicy::Fail)
}

pub fn second_order_fit_with(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    r: usize,
    field: &ScoreField,
    policy: NearZeroPolicy,
) -> Result<LatentBasis> {
    check_rank(r, x.ncols())?;
    let mom = second_order_moment(x, y, field)?;
    finish_second_order(&mom.mean, mom.standard_error, r, &second_moment(x), x.nrows(), policy)
}

/// Left singular vectors of `[ (w/n) Σ s(xᵢ)ỹᵢᵀ , (1/N) Σ s(xᵢ)xᵢᵀ ]`.
pub fn semi_first_order_fit(data: &SemiSupervisedData, r: usize, field: &ScoreField) -> Result<LatentBasis> {
    data.validate()?;
    let p = data.x_all.ncols();
    check_rank(r, p)?;
    let pool = first_order_moment(&data.x_all, &data.x_all, field)?;
    let m = if data.y_labeled.ncols() > 0 {
        let labeled = first_order_moment(&data.x_labeled, &data.y_labeled, field)? * data.label_weight;
        let mut joined = DMatrix::zeros(p, labeled.ncols() + p);
        joined.columns_mut(0, labeled.ncols()).copy_from(&labeled);
        joined.columns_mut(labeled.ncols(), p).copy_from(&pool);
        joined
    } else {
        pool
    };
    let reference = second_moment(&data.x_all);
    Ok(LatentBasis::from_leading(leading_left_singular(&m, r, Some(&reference))?))
}

/// Eigenvectors of `(w/(nm)) ΣΣ ỹ_ij T(xᵢ) + (1/(Np)) ΣΣ x_ij T(xᵢ)`.
pub fn semi_second_order_fit(data: &SemiSupervisedData, r: usize, field: &ScoreField) -> Result<LatentBasis> {
    semi_second_order_fit_with(data, r, field, NearZeroPolicy::Fail)
}

pub fn semi_second_order_fit_with(
    data: &SemiSupervisedData,
    r: usize,
    field: &ScoreField,
    policy: NearZeroPolicy,
) -> Result<LatentBasis> {
    data.validate()?;
    check_rank(r, data.x_all.ncols())?;
    let pool = second_order_moment(&data.x_all, &data.x_all, field)?;
    let (mut m, mut var) = (pool.mean, pool.standard_error.powi(2));
    if data.y_labeled.ncols() > 0 {
        let labeled = second_order_moment(&data.x_labeled, &data.y_labeled, field)?;
        m += labeled.mean * data.label_weight;
        var += (labeled.standard_error * data.label_weight).powi(2);
    }
    finish_second_order(&m, var.sqrt(), r, &second_moment(&data.x_all), data.x_all.nrows(), policy)
}

/// Top-`r` eigenvectors of the uncentered second moment `(1/n) XᵀX`.
pub fn pca_fit(x: &DMatrix<f64>, r: usize) -> Result<LatentBasis> {
    if x.nrows() == 0 {
        return Err(Error::InvalidDimension {
            what: "sample size",
            value: 0,
        });
    }
    check_rank(r, x.ncols())?;
    Ok(LatentBasis::from_leading(leading_eigen(&second_moment(x), r, None)))
}

/// Reduced-rank regression: `Ĉ = Ĉ_ols V_r V_rᵀ` with `V_r` the top-`r`
/// right singular vectors of `X Ĉ_ols`; returns the left singular frame of
/// `Ĉ`.
pub fn rrr_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, r: usize) -> Result<LatentBasis> {
    check_xy(x, y, None)?;
    let (n, p) = x.shape();
    check_rank(r, p.min(y.ncols()))?;
    let c_ols = lstsq(x, y)?;
    let fitted = x * &c_ols;
    let v_r = leading_left_singular(&fitted.transpose(), r, None)?.basis;
    let c = &c_ols * &v_r * v_r.transpose();
    let mut basis = LatentBasis::from_leading(leading_left_singular(&c, r, None)?);
    if n < p {
        basis.warnings.push(FitWarning::RankDeficientDesign { n, p });
    }
    Ok(basis)
}

/// Affine least-squares map from embeddings to labels.
#[derive(Debug, Clone)]
pub struct LinearDecoder {
    /// `r x m`.
    pub coefficients: DMatrix<f64>,
    pub intercept: DVector<f64>,
}

impl LinearDecoder {
    pub fn predict(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if z.ncols() != self.coefficients.nrows() {
            return Err(Error::shape("decoder input columns", self.coefficients.nrows(), z.ncols()));
        }
        let mut out = z * &self.coefficients;
        for mut row in out.row_iter_mut() {
            row += self.intercept.transpose();
        }
        Ok(out)
    }
}

/// Minimum-norm least squares of `Ỹ` on `[Z, 1]`.
pub fn fit_linear_decoder(z: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<LinearDecoder> {
    let (n, r) = z.shape();
    if n <= r {
        return Err(Error::InvalidDimension {
            what: "decoder training rows (must exceed embedding dimension)",
            value: n,
        });
    }
    if y.nrows() != n {
        return Err(Error::shape("label rows", n, y.nrows()));
    }
    let mut design = DMatrix::from_element(n, r + 1, 1.0);
    design.columns_mut(0, r).copy_from(z);
    let w = lstsq(&design, y)?;
    Ok(LinearDecoder {
        coefficients: w.rows(0, r).into_owned(),
        intercept: w.row(r).transpose(),
    })
}
