//! Subspace distance and downstream reconstruction / prediction metrics.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::svd;

#[derive(Debug, Clone)]
pub struct SubspaceDistance {
    pub distance: f64,
    /// Orthogonal `V` minimizing `‖Θ₁ − Θ₂V‖_F`.
    pub rotation: DMatrix<f64>,
}

/// `inf_V ‖Θ₁ − Θ₂V‖_F` over `r x r` orthogonal `V` (orthogonal Procrustes).
///
/// `V = UWᵀ` where `Θ₂ᵀΘ₁ = USWᵀ`. The distance is evaluated as the residual
/// norm at the optimum rather than from `‖Θ₁‖² + ‖Θ₂‖² − 2 tr S`, which loses
/// half the significant digits when the frames nearly coincide.
pub fn subspace_dist(theta1: &DMatrix<f64>, theta2: &DMatrix<f64>) -> Result<SubspaceDistance> {
    if theta1.shape() != theta2.shape() {
        return Err(Error::shape(
            "subspace_dist operands",
            format!("{:?}", theta1.shape()),
            format!("{:?}", theta2.shape()),
        ));
    }
    let dec = svd(&theta2.tr_mul(theta1), false)?;
    let rotation = dec.u * dec.v.transpose();
    let distance = (theta1 - theta2 * &rotation).norm();
    Ok(SubspaceDistance { distance, rotation })
}

/// Mean over rows of `‖x̂ᵢ − xᵢ‖ / ‖xᵢ‖`.
pub fn nrse(estimate: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<f64> {
    if estimate.shape() != reference.shape() {
        return Err(Error::shape(
            "nrse operands",
            format!("{:?}", reference.shape()),
            format!("{:?}", estimate.shape()),
        ));
    }
    let n = reference.nrows();
    if n == 0 {
        return Err(Error::InvalidDimension {
            what: "nrse rows",
            value: 0,
        });
    }
    let mut total = 0.0;
    for i in 0..n {
        let denom = reference.row(i).norm();
        if denom == 0.0 {
            return Err(Error::ZeroReferenceRow { row: i });
        }
        total += (estimate.row(i) - reference.row(i)).norm() / denom;
    }
    Ok(total / n as f64)
}

/// Global-statistics structural similarity,
/// `(2μₐμ_b + c₁)(2σₐ_b + c₂) / ((μₐ² + μ_b² + c₂)(σₐ² + σ_b² + c₂))`
/// with `c₁ = (0.01R)²`, `c₂ = (0.03R)²` and population moments.
///
/// Note the `c₂` in the first denominator factor: `ssim(A, A)` is exactly 1
/// only when `μ = 0`.
pub fn ssim(a: &DMatrix<f64>, b: &DMatrix<f64>, range: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "ssim operands",
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    if a.is_empty() {
        return Err(Error::InvalidDimension {
            what: "ssim image size",
            value: 0,
        });
    }
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::InvalidParameter(format!("ssim range must be > 0, got {range}")));
    }
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let n = a.len() as f64;
    let (ma, mb) = (a.mean(), b.mean());
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        let (dx, dy) = (x - ma, y - mb);
        va += dx * dx;
        vb += dy * dy;
        cov += dx * dy;
    }
    let (va, vb, cov) = (va / n, vb / n, cov / n);
    Ok((2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c2) * (va + vb + c2)))
}

/// Mean over rows of `‖ỹᵢ − ŷᵢ‖²`.
pub fn pmse(truth: &DMatrix<f64>, prediction: &DMatrix<f64>) -> Result<f64> {
    if truth.shape() != prediction.shape() {
        return Err(Error::shape(
            "pmse operands",
            format!("{:?}", truth.shape()),
            format!("{:?}", prediction.shape()),
        ));
    }
    if truth.nrows() == 0 {
        return Err(Error::InvalidDimension {
            what: "pmse rows",
            value: 0,
        });
    }
    Ok((truth - prediction).norm_squared() / truth.nrows() as f64)
}
