//! Design distributions: zero-mean Gaussian, Student-t and multivariate
//! hyperbolic, each parameterized by a dispersion matrix `Σ`.
//!
//! The Student-t family uses the `(ν − 2)` parameterization
//!
//! ```text
//! P(x) = (ν−2)^{ν/2} Γ((ν+p)/2) / (π^{p/2} |Σ|^{1/2} Γ(ν/2)) · (ν − 2 + xᵀΣ⁻¹x)^{−(ν+p)/2}
//! ```
//!
//! under which `Cov(x) = Σ`. The hyperbolic family is the normal variance
//! mixture `x = √w · A z` with `AAᵀ = Σ` and `w ~ GIG((p+1)/2, χ, ψ)`.

mod gig;

pub use gig::{sample_gig, Gig};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{ln_bessel_k, ln_gamma};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DistributionKind {
    Gaussian,
    StudentT { nu: f64 },
    Hyperbolic { chi: f64, psi: f64 },
}

impl DistributionKind {
    pub fn label(&self) -> &'static str {
        match self {
            DistributionKind::Gaussian => "gaussian",
            DistributionKind::StudentT { .. } => "student-t",
            DistributionKind::Hyperbolic { .. } => "hyperbolic",
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            DistributionKind::Gaussian => Ok(()),
            DistributionKind::StudentT { nu } => {
                if nu > 2.0 && nu.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!("student-t requires nu > 2, got {nu}")))
                }
            }
            DistributionKind::Hyperbolic { chi, psi } => {
                if chi > 0.0 && psi > 0.0 && chi.is_finite() && psi.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "hyperbolic requires chi > 0 and psi > 0, got chi={chi}, psi={psi}"
                    )))
                }
            }
        }
    }
}

/// A validated zero-mean design distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "SpecRecord", into = "SpecRecord")]
pub struct DistributionSpec {
    kind: DistributionKind,
    dispersion: DMatrix<f64>,
    /// Lower Cholesky factor of `Σ`.
    factor: DMatrix<f64>,
    precision: DMatrix<f64>,
    ln_det: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecRecord {
    family: DistributionKind,
    dispersion: Vec<Vec<f64>>,
}

impl TryFrom<SpecRecord> for DistributionSpec {
    type Error = Error;

    fn try_from(rec: SpecRecord) -> Result<Self> {
        let p = rec.dispersion.len();
        if rec.dispersion.iter().any(|row| row.len() != p) {
            return Err(Error::shape("dispersion", format!("{p}x{p}"), "ragged rows"));
        }
        let flat: Vec<f64> = rec.dispersion.into_iter().flatten().collect();
        DistributionSpec::new(rec.family, DMatrix::from_row_slice(p, p, &flat))
    }
}

impl From<DistributionSpec> for SpecRecord {
    fn from(spec: DistributionSpec) -> Self {
        let d = &spec.dispersion;
        SpecRecord {
            family: spec.kind,
            dispersion: (0..d.nrows()).map(|i| d.row(i).iter().copied().collect()).collect(),
        }
    }
}

impl DistributionSpec {
    pub fn new(kind: DistributionKind, dispersion: DMatrix<f64>) -> Result<Self> {
        kind.validate()?;
        let p = dispersion.nrows();
        if p == 0 {
            return Err(Error::InvalidDimension {
                what: "distribution",
                value: 0,
            });
        }
        if dispersion.ncols() != p {
            return Err(Error::shape(
                "dispersion",
                format!("{p}x{p}"),
                format!("{}x{}", p, dispersion.ncols()),
            ));
        }
        let scale = dispersion.amax().max(f64::MIN_POSITIVE);
        let asym = (&dispersion - dispersion.transpose()).amax() / scale;
        if asym > 1e-12 {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        let mut sym = dispersion;
        crate::linalg::symmetrize(&mut sym);
        let min_eig = SymmetricEigen::new(sym.clone()).eigenvalues.min();
        let chol = match sym.clone().cholesky() {
            Some(c) if min_eig > 0.0 => c,
            _ => return Err(Error::NotPositiveDefinite { min_eigenvalue: min_eig }),
        };
        let factor = chol.l();
        let ln_det = 2.0 * factor.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let mut precision = chol.inverse();
        crate::linalg::symmetrize(&mut precision);
        Ok(Self {
            kind,
            dispersion: sym,
            factor,
            precision,
            ln_det,
        })
    }

    pub fn gaussian(dispersion: DMatrix<f64>) -> Result<Self> {
        Self::new(DistributionKind::Gaussian, dispersion)
    }

    pub fn student_t(dispersion: DMatrix<f64>, nu: f64) -> Result<Self> {
        Self::new(DistributionKind::StudentT { nu }, dispersion)
    }

    pub fn hyperbolic(dispersion: DMatrix<f64>, chi: f64, psi: f64) -> Result<Self> {
        Self::new(DistributionKind::Hyperbolic { chi, psi }, dispersion)
    }

    pub fn kind(&self) -> DistributionKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dispersion.nrows()
    }

    pub fn dispersion(&self) -> &DMatrix<f64> {
        &self.dispersion
    }

    /// `Σ⁻¹`
    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// GIG index of the hyperbolic mixing law, always `(p + 1) / 2`.
    pub fn gig_lambda(&self) -> f64 {
        (self.dim() as f64 + 1.0) / 2.0
    }

    /// `xᵀΣ⁻¹x`
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.precision * x))
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::shape("point", self.dim(), x.len()));
        }
        Ok(())
    }

    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        let p = self.dim() as f64;
        let q = self.quad_form(x);
        Ok(match self.kind {
            DistributionKind::Gaussian => -0.5 * p * LN_2PI - 0.5 * self.ln_det - 0.5 * q,
            DistributionKind::StudentT { nu } => {
                0.5 * nu * (nu - 2.0).ln() + ln_gamma(0.5 * (nu + p))
                    - 0.5 * p * std::f64::consts::PI.ln()
                    - 0.5 * self.ln_det
                    - ln_gamma(0.5 * nu)
                    - 0.5 * (nu + p) * (nu - 2.0 + q).ln()
            }
            DistributionKind::Hyperbolic { chi, psi } => {
                let lambda = self.gig_lambda();
                // K_{1/2}(u)·u^{1/2} = √(π/2)·e^{−u}
                let u = ((chi + q) * psi).sqrt();
                0.5 * lambda * (psi / chi).ln() - 0.5 * p * LN_2PI - 0.5 * self.ln_det - 0.5 * psi.ln()
                    - ln_bessel_k(lambda, (chi * psi).sqrt())
                    + 0.5 * (std::f64::consts::PI / 2.0).ln()
                    - u
            }
        })
    }

    /// `n` i.i.d. rows.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        if n == 0 {
            return Err(Error::InvalidDimension {
                what: "sample size",
                value: 0,
            });
        }
        let p = self.dim();
        let mixing: Option<Gig> = match self.kind {
            DistributionKind::Hyperbolic { chi, psi } => Some(Gig::new(self.gig_lambda(), chi, psi)?),
            _ => None,
        };
        let chi2 = match self.kind {
            DistributionKind::StudentT { nu } => Some(
                ChiSquared::new(nu).map_err(|e| Error::InvalidParameter(format!("chi-squared: {e}")))?,
            ),
            _ => None,
        };
        let mut out = DMatrix::zeros(n, p);
        let mut z = DVector::zeros(p);
        for i in 0..n {
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let scale = match self.kind {
                DistributionKind::Gaussian => 1.0,
                DistributionKind::StudentT { nu } => {
                    let g: f64 = chi2.as_ref().expect("built for student-t").sample(rng);
                    ((nu - 2.0) / g).sqrt()
                }
                DistributionKind::Hyperbolic { .. } => {
                    mixing.as_ref().expect("built for hyperbolic").sample(rng).sqrt()
                }
            };
            let row = &self.factor * &z * scale;
            out.set_row(i, &row.transpose());
        }
        Ok(out)
    }
}

/// Recipe for a random dispersion `Σ = QΛQᵀ` with `Q` Haar-orthogonal and
/// `Λᵢᵢ = |z| + shift`, `z ~ N(0, scale²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispersionRecipe {
    pub dim: usize,
    pub shift: f64,
    pub scale: f64,
}

impl DispersionRecipe {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            shift: 1.0,
            scale: 1.0,
        }
    }
}

/// Haar-distributed `p x p` orthogonal matrix: QR of a Gaussian matrix with
/// the columns of `Q` multiplied by `sign(R_jj)`.
pub fn sample_haar_orthogonal<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if p == 0 {
        return Err(Error::InvalidDimension {
            what: "orthogonal matrix",
            value: 0,
        });
    }
    let g = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..p {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

pub fn generate_dispersion<R: Rng + ?Sized>(recipe: &DispersionRecipe, rng: &mut R) -> Result<DMatrix<f64>> {
    if !(recipe.shift > 0.0) || !recipe.shift.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "dispersion shift must be > 0, got {}",
            recipe.shift
        )));
    }
    if !(recipe.scale >= 0.0) || !recipe.scale.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "dispersion scale must be >= 0, got {}",
            recipe.scale
        )));
    }
    let q = sample_haar_orthogonal(recipe.dim, rng)?;
    let diag = DVector::from_fn(recipe.dim, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        (recipe.scale * z).abs() + recipe.shift
    });
    let mut sigma = &q * DMatrix::from_diagonal(&diag) * q.transpose();
    crate::linalg::symmetrize(&mut sigma);
    Ok(sigma)
}
