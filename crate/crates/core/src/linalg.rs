//! Spectral helpers shared by the estimators and metrics.
//!
//! Everything here works on dense `nalgebra` matrices. Bases come back with a
//! canonical column order (descending by the requested key) and sign (largest
//! magnitude entry positive), so serialized results are stable.
//!
//! Singular value decompositions go through `faer`: nalgebra 0.35's SVD
//! returns inaccurate factors for some rank-deficient inputs, which are routine
//! here (reduced-rank coefficient matrices, duplicated embedding columns).

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative width of a tied cluster in a sorted spectrum.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// A tie straddling the selection boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Degeneracy {
    /// Selected rank `r`.
    pub position: usize,
    /// Half-open index range of the tied cluster in the sorted spectrum.
    pub cluster: (usize, usize),
    /// `key[r-1] - key[r]`.
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct Leading {
    /// `p x r`, column-orthonormal.
    pub basis: DMatrix<f64>,
    /// Full sorted spectrum (singular values, or signed eigenvalues ordered by magnitude).
    pub values: Vec<f64>,
    pub degeneracy: Option<Degeneracy>,
}

/// `(1/n) XᵀX`.
pub fn second_moment(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows().max(1) as f64;
    let mut m = x.tr_mul(x) / n;
    symmetrize(&mut m);
    m
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Moore-Penrose inverse of a symmetric matrix. Eigenvalues with magnitude
/// below `max(rows, p) * eps * |λ|max` are treated as zero.
pub fn pinv_symmetric(a: &DMatrix<f64>, rows: usize) -> DMatrix<f64> {
    let p = a.nrows();
    let eig = SymmetricEigen::new(a.clone());
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = rows.max(p) as f64 * f64::EPSILON * lmax;
    let mut out = DMatrix::zeros(p, p);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() > cutoff {
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / lam;
        }
    }
    symmetrize(&mut out);
    out
}

/// `A = U diag(s) Vᵀ` with `s` descending.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `rows x rows` when the full decomposition was requested, otherwise
    /// `rows x min(rows, cols)`.
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    /// `cols x min(rows, cols)`.
    pub v: DMatrix<f64>,
}

pub fn svd(a: &DMatrix<f64>, full_u: bool) -> Result<Svd> {
    let (rows, cols) = a.shape();
    let k = rows.min(cols);
    if k == 0 {
        return Ok(Svd {
            u: DMatrix::identity(rows, if full_u { rows } else { 0 }),
            singular_values: vec![],
            v: DMatrix::zeros(cols, 0),
        });
    }
    let m = faer::Mat::<f64>::from_fn(rows, cols, |i, j| a[(i, j)]);
    let dec = if full_u { m.svd() } else { m.thin_svd() }
        .map_err(|e| Error::Numerical(format!("singular value decomposition failed: {e:?}")))?;
    let (u, v) = (dec.U(), dec.V());
    Ok(Svd {
        u: DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)]),
        singular_values: dec.S().column_vector().iter().copied().collect(),
        v: DMatrix::from_fn(cols, k, |i, j| v[(i, j)]),
    })
}

/// Minimum-norm least-squares solution of `A W = B`. Singular values below
/// `max(rows, cols) * eps * σ_max` are treated as zero.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dec = svd(a, false)?;
    let smax = dec.singular_values.first().copied().unwrap_or(0.0);
    let cutoff = a.nrows().max(a.ncols()) as f64 * f64::EPSILON * smax;
    let mut utb = dec.u.tr_mul(b);
    for (k, &s) in dec.singular_values.iter().enumerate() {
        let scale = if s > cutoff { 1.0 / s } else { 0.0 };
        utb.row_mut(k).scale_mut(scale);
    }
    Ok(&dec.v * utb)
}

/// `‖BᵀB − I‖_F`.
pub fn orthonormality_error(b: &DMatrix<f64>) -> f64 {
    (b.tr_mul(b) - DMatrix::identity(b.ncols(), b.ncols())).norm()
}

/// Flip each column so its largest-magnitude entry is positive.
pub fn canonical_signs(b: &mut DMatrix<f64>) {
    for mut col in b.column_iter_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for v in col.iter() {
            if v.abs() > best {
                best = v.abs();
                sign = v.signum();
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
    }
}

/// Top-`r` left singular vectors of `m` (`p x k`).
///
/// `reference`, when given, is a `p x p` symmetric matrix used to order
/// directions inside a tied singular cluster straddling `r` (larger
/// `vᵀ R v` first).
pub fn leading_left_singular(
    m: &DMatrix<f64>,
    r: usize,
    reference: Option<&DMatrix<f64>>,
) -> Result<Leading> {
    let p = m.nrows();
    // Full U, with zero singular values for the directions beyond min(p, k).
    let dec = svd(m, true)?;
    let mut vals = dec.singular_values;
    vals.resize(p, 0.0);
    let keys = vals.clone();
    Ok(select(dec.u, keys, vals, r, reference))
}

/// Top-`r` eigenvectors of a symmetric matrix, ranked by |eigenvalue|.
pub fn leading_abs_eigen(
    sym: &DMatrix<f64>,
    r: usize,
    reference: Option<&DMatrix<f64>>,
) -> Leading {
    let eig = SymmetricEigen::new(sym.clone());
    let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let keys = vals.iter().map(|v| v.abs()).collect();
    select(eig.eigenvectors, keys, vals, r, reference)
}

/// Top-`r` eigenvectors of a symmetric matrix, ranked by signed eigenvalue.
pub fn leading_eigen(sym: &DMatrix<f64>, r: usize, reference: Option<&DMatrix<f64>>) -> Leading {
    let eig = SymmetricEigen::new(sym.clone());
    let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    select(eig.eigenvectors, vals.clone(), vals, r, reference)
}

fn select(
    vectors: DMatrix<f64>,
    keys: Vec<f64>,
    values: Vec<f64>,
    r: usize,
    reference: Option<&DMatrix<f64>>,
) -> Leading {
    let p = vectors.nrows();
    let m = keys.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));

    let mut sorted = DMatrix::zeros(p, m);
    for (dst, &src) in order.iter().enumerate() {
        sorted.set_column(dst, &vectors.column(src));
    }
    let keys: Vec<f64> = order.iter().map(|&i| keys[i]).collect();
    let values: Vec<f64> = order.iter().map(|&i| values[i]).collect();

    let degeneracy = find_tie(&keys, r);
    if let (Some(d), Some(reference)) = (degeneracy, reference) {
        let (lo, hi) = d.cluster;
        let w = sorted.columns(lo, hi - lo).into_owned();
        let mut local = w.tr_mul(&(reference * &w));
        symmetrize(&mut local);
        let inner = leading_eigen(&local, hi - lo, None);
        let rotated = &w * inner.basis;
        sorted.columns_mut(lo, hi - lo).copy_from(&rotated);
    }

    let mut basis = sorted.columns(0, r.min(m)).into_owned();
    canonical_signs(&mut basis);
    Leading {
        basis,
        values,
        degeneracy,
    }
}

fn find_tie(keys: &[f64], r: usize) -> Option<Degeneracy> {
    if r == 0 || r >= keys.len() {
        return None;
    }
    let scale = keys[0].abs().max(f64::MIN_POSITIVE);
    let tol = TIE_TOLERANCE * scale;
    let gap = keys[r - 1] - keys[r];
    if gap > tol {
        return None;
    }
    let pivot = keys[r - 1];
    let mut lo = r - 1;
    while lo > 0 && keys[lo - 1] - pivot <= tol {
        lo -= 1;
    }
    let mut hi = r;
    while hi < keys.len() && pivot - keys[hi] <= tol {
        hi += 1;
    }
    Some(Degeneracy {
        position: r,
        cluster: (lo, hi),
        gap,
    })
}
