//! First- and second-order Stein score fields.
//!
//! With `s(x) = −∇ln P(x)` and `T(x) = ∇²P(x)/P(x) = s sᵀ − ∇s`, every field
//! supported here has the radial form
//!
//! ```text
//! s(x) = γ(Q)·u,   T(x) = α(Q)·u uᵀ − β(Q)·P,   u = P x,  Q = xᵀ P x
//! ```
//!
//! where `P` is `Σ⁻¹` (closed forms) or `Σ̂†` (plug-in Gaussian). Batch
//! evaluation exploits this so the second-order moment is a weighted Gram
//! matrix rather than a sum of `n` dense `p x p` matrices.

use nalgebra::{DMatrix, DVector};

use crate::distributions::{DistributionKind, DistributionSpec};
use crate::error::{Error, Result};
use crate::linalg::{pinv_symmetric, symmetrize};

#[derive(Debug, Clone)]
pub enum ScoreSource {
    ClosedForm(DistributionSpec),
    /// Gaussian score with moment-estimated covariance.
    PluginGaussian {
        covariance: DMatrix<f64>,
        mean: Option<DVector<f64>>,
    },
}

#[derive(Debug, Clone)]
pub struct ScoreField {
    source: ScoreSource,
    precision: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Radial {
    gamma: f64,
    alpha: f64,
    beta: f64,
}

/// `(1/n) Σᵢ wᵢ T(xᵢ)` together with its Monte Carlo standard error.
#[derive(Debug, Clone)]
pub struct SecondOrderMoment {
    pub mean: DMatrix<f64>,
    /// `√(Σᵢ ‖wᵢT(xᵢ) − M‖²_F / (n(n−1)))`
    pub standard_error: f64,
    pub n: usize,
}

impl ScoreField {
    pub fn closed_form(spec: DistributionSpec) -> Self {
        let precision = spec.precision().clone();
        Self {
            source: ScoreSource::ClosedForm(spec),
            precision,
        }
    }

    /// Plug-in Gaussian field from the rows of `x`. The covariance is the
    /// uncentered second moment unless `center` is set.
    pub fn plugin_gaussian(x: &DMatrix<f64>, center: bool) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::InvalidDimension {
                what: "plug-in sample size",
                value: 0,
            });
        }
        let mean = center.then(|| DVector::from_fn(x.ncols(), |j, _| x.column(j).mean()));
        let covariance = match &mean {
            Some(m) => {
                let mut c = x.clone();
                for mut row in c.row_iter_mut() {
                    row -= m.transpose();
                }
                crate::linalg::second_moment(&c)
            }
            None => crate::linalg::second_moment(x),
        };
        let precision = pinv_symmetric(&covariance, n);
        Ok(Self {
            source: ScoreSource::PluginGaussian { covariance, mean },
            precision,
        })
    }

    pub fn source(&self) -> &ScoreSource {
        &self.source
    }

    pub fn dim(&self) -> usize {
        self.precision.nrows()
    }

    /// `Σ⁻¹` or `Σ̂†`.
    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    fn centered(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.dim() {
            return Err(Error::shape("score argument", self.dim(), x.len()));
        }
        Ok(match &self.source {
            ScoreSource::PluginGaussian { mean: Some(m), .. } => x - m,
            _ => x.clone(),
        })
    }

    fn radial(&self, q: f64) -> Radial {
        let p = self.dim() as f64;
        match &self.source {
            ScoreSource::PluginGaussian { .. } => Radial {
                gamma: 1.0,
                alpha: 1.0,
                beta: 1.0,
            },
            ScoreSource::ClosedForm(spec) => match spec.kind() {
                DistributionKind::Gaussian => Radial {
                    gamma: 1.0,
                    alpha: 1.0,
                    beta: 1.0,
                },
                DistributionKind::StudentT { nu } => {
                    let d = nu - 2.0 + q;
                    Radial {
                        gamma: (p + nu) / d,
                        alpha: (p + nu) * (p + nu + 2.0) / (d * d),
                        beta: (p + nu) / d,
                    }
                }
                DistributionKind::Hyperbolic { chi, psi } => {
                    let r = (chi + q).sqrt();
                    let sp = psi.sqrt();
                    Radial {
                        gamma: sp / r,
                        alpha: (psi + sp / r) / (r * r),
                        beta: sp / r,
                    }
                }
            },
        }
    }

    pub fn score1(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let x = self.centered(x)?;
        let u = &self.precision * &x;
        let rad = self.radial(x.dot(&u));
        Ok(u * rad.gamma)
    }

    pub fn score2(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let x = self.centered(x)?;
        let u = &self.precision * &x;
        let rad = self.radial(x.dot(&u));
        let mut t = &u * u.transpose() * rad.alpha - &self.precision * rad.beta;
        symmetrize(&mut t);
        Ok(t)
    }

    fn rows_prepared(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<Radial>)> {
        if x.ncols() != self.dim() {
            return Err(Error::shape("design columns", self.dim(), x.ncols()));
        }
        let centered = match &self.source {
            ScoreSource::PluginGaussian { mean: Some(m), .. } => {
                let mut c = x.clone();
                for mut row in c.row_iter_mut() {
                    row -= m.transpose();
                }
                c
            }
            _ => x.clone(),
        };
        // rows of U are uᵢᵀ = xᵢᵀ P (P symmetric)
        let u = &centered * &self.precision;
        let radials = (0..x.nrows())
            .map(|i| self.radial(u.row(i).dot(&centered.row(i))))
            .collect();
        Ok((u, radials))
    }

    /// Scores of every row of `x`, returned as an `n x p` matrix.
    pub fn score1_rows(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (mut u, radials) = self.rows_prepared(x)?;
        for (i, rad) in radials.iter().enumerate() {
            u.row_mut(i).scale_mut(rad.gamma);
        }
        Ok(u)
    }

    /// `(1/n) Σᵢ wᵢ T(xᵢ)` over the rows of `x`.
    pub fn weighted_second_order(&self, x: &DMatrix<f64>, weights: &[f64]) -> Result<SecondOrderMoment> {
        if weights.len() != x.nrows() {
            return Err(Error::shape("second-order weights", x.nrows(), weights.len()));
        }
        let n = x.nrows();
        if n == 0 {
            return Err(Error::InvalidDimension {
                what: "sample size",
                value: 0,
            });
        }
        let (u, radials) = self.rows_prepared(x)?;
        let mut scaled = u.clone();
        let mut beta_sum = 0.0;
        for (i, (rad, &w)) in radials.iter().zip(weights).enumerate() {
            scaled.row_mut(i).scale_mut(w * rad.alpha);
            beta_sum += w * rad.beta;
        }
        let mut mean = (u.tr_mul(&scaled) - &self.precision * beta_sum) / n as f64;
        symmetrize(&mut mean);

        let prec_sq = self.precision.norm_squared();
        let mut sum_sq = 0.0;
        for (i, (rad, &w)) in radials.iter().zip(weights).enumerate() {
            let ui = u.row(i).transpose();
            let uu = ui.norm_squared();
            let upu = ui.dot(&(&self.precision * &ui));
            let g2 = rad.alpha * rad.alpha * uu * uu - 2.0 * rad.alpha * rad.beta * upu
                + rad.beta * rad.beta * prec_sq;
            sum_sq += w * w * g2;
        }
        let dev = (sum_sq - n as f64 * mean.norm_squared()).max(0.0);
        let standard_error = if n > 1 {
            (dev / (n as f64 * (n as f64 - 1.0))).sqrt()
        } else {
            f64::INFINITY
        };
        Ok(SecondOrderMoment {
            mean,
            standard_error,
            n,
        })
    }
}

/// Central-difference approximation of `s(x) = −∇ln P(x)`.
pub fn finite_diff_score1(spec: &DistributionSpec, x: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("step must be > 0, got {h}")));
    }
    let p = spec.dim();
    if x.len() != p {
        return Err(Error::shape("point", p, x.len()));
    }
    let mut out = DVector::zeros(p);
    for i in 0..p {
        let mut fwd = x.clone();
        let mut bwd = x.clone();
        fwd[i] += h;
        bwd[i] -= h;
        out[i] = -(spec.log_density(&fwd)? - spec.log_density(&bwd)?) / (2.0 * h);
    }
    Ok(out)
}

/// Central-difference approximation of `∇²P(x)/P(x)`, built from density
/// ratios `P(x + δ)/P(x) = exp(ln P(x + δ) − ln P(x))`.
pub fn finite_diff_score2(spec: &DistributionSpec, x: &DVector<f64>, h: f64) -> Result<DMatrix<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("step must be > 0, got {h}")));
    }
    let p = spec.dim();
    if x.len() != p {
        return Err(Error::shape("point", p, x.len()));
    }
    let base = spec.log_density(x)?;
    let ratio = |di: usize, si: f64, dj: usize, sj: f64| -> Result<f64> {
        let mut y = x.clone();
        y[di] += si * h;
        y[dj] += sj * h;
        Ok((spec.log_density(&y)? - base).exp())
    };
    let mut out = DMatrix::zeros(p, p);
    for i in 0..p {
        let mut y = x.clone();
        y[i] += h;
        let fwd = (spec.log_density(&y)? - base).exp();
        y[i] -= 2.0 * h;
        let bwd = (spec.log_density(&y)? - base).exp();
        out[(i, i)] = (fwd - 2.0 + bwd) / (h * h);
        for j in (i + 1)..p {
            let v = (ratio(i, 1.0, j, 1.0)? - ratio(i, 1.0, j, -1.0)? - ratio(i, -1.0, j, 1.0)?
                + ratio(i, -1.0, j, -1.0)?)
                / (4.0 * h * h);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn standard_normal_score_is_identity_map() {
        let f = ScoreField::closed_form(DistributionSpec::gaussian(DMatrix::identity(3, 3)).unwrap());
        let s = f.score1(&v(&[1.0, -2.0, 3.0])).unwrap();
        assert!((s - v(&[1.0, -2.0, 3.0])).norm() < 1e-15);
        let t0 = f.score2(&v(&[0.0, 0.0, 0.0])).unwrap();
        assert!((t0 + DMatrix::<f64>::identity(3, 3)).norm() < 1e-15);
        let t1 = f.score2(&v(&[1.0, 0.0, 0.0])).unwrap();
        let mut want = -DMatrix::<f64>::identity(3, 3);
        want[(0, 0)] = 0.0;
        assert!((t1 - want).norm() < 1e-15);
    }

    #[test]
    fn student_t_and_hyperbolic_scalar_values() {
        let t = ScoreField::closed_form(DistributionSpec::student_t(DMatrix::identity(1, 1), 10.0).unwrap());
        assert!((t.score1(&v(&[2.0])).unwrap()[0] - 11.0 / 6.0).abs() < 1e-14);
        let h = ScoreField::closed_form(DistributionSpec::hyperbolic(DMatrix::identity(1, 1), 3.0, 1.0).unwrap());
        assert!((h.score1(&v(&[2.0])).unwrap()[0] - 2.0 / 7f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn gaussian_second_order_identity() {
        let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0]);
        let f = ScoreField::closed_form(DistributionSpec::gaussian(sigma).unwrap());
        let x = v(&[0.3, -1.1]);
        let s = f.score1(&x).unwrap();
        let t = f.score2(&x).unwrap();
        assert!((t - (&s * s.transpose() - f.precision())).norm() < 1e-14);
    }

    #[test]
    fn plugin_identity_and_rank_one() {
        let n = 4;
        let x = DMatrix::<f64>::identity(n, n) * (n as f64).sqrt();
        let f = ScoreField::plugin_gaussian(&x, false).unwrap();
        let pt = v(&[0.5, -1.0, 2.0, 0.0]);
        assert!((f.score1(&pt).unwrap() - &pt).norm() < 1e-12);

        let row = [1.0, 2.0, -2.0];
        let rep = DMatrix::from_fn(6, 3, |_, j| row[j]);
        let f = ScoreField::plugin_gaussian(&rep, false).unwrap();
        let vv = v(&row);
        let s = f.score1(&vv).unwrap();
        assert!((s - &vv / 9.0).norm() < 1e-12);
        // Moore-Penrose: Σ̂ Σ̂† Σ̂ = Σ̂
        if let ScoreSource::PluginGaussian { covariance, .. } = f.source() {
            let back = covariance * f.precision() * covariance;
            assert!((back - covariance).norm() <= 1e-8 * covariance.norm());
        } else {
            unreachable!()
        }
    }

    #[test]
    fn batch_matches_pointwise() {
        let sigma = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.5, -0.2, 0.0, -0.2, 1.0]);
        let x = DMatrix::from_row_slice(4, 3, &[0.1, 0.2, 0.3, -1.0, 0.5, 2.0, 0.0, 0.0, 0.0, 3.0, -2.0, 1.0]);
        let w = [0.5, -1.0, 2.0, 0.25];
        for spec in [
            DistributionSpec::gaussian(sigma.clone()).unwrap(),
            DistributionSpec::student_t(sigma.clone(), 7.0).unwrap(),
            DistributionSpec::hyperbolic(sigma.clone(), 7.0, 3.0).unwrap(),
        ] {
            let f = ScoreField::closed_form(spec);
            let rows = f.score1_rows(&x).unwrap();
            let mut mean = DMatrix::zeros(3, 3);
            let mut sq = 0.0;
            for (i, wi) in w.iter().enumerate() {
                let xi = x.row(i).transpose();
                assert!((rows.row(i).transpose() - f.score1(&xi).unwrap()).norm() < 1e-13);
                let g = f.score2(&xi).unwrap() * *wi;
                sq += g.norm_squared();
                mean += g;
            }
            mean /= 4.0;
            let m = f.weighted_second_order(&x, &w).unwrap();
            assert!((&m.mean - &mean).norm() < 1e-12);
            let se = ((sq - 4.0 * mean.norm_squared()) / 12.0).sqrt();
            assert!((m.standard_error - se).abs() < 1e-10);
        }
    }

    #[test]
    fn finite_difference_converges_on_gaussian() {
        let f = DistributionSpec::gaussian(DMatrix::identity(2, 2)).unwrap();
        let x = v(&[0.3, -0.7]);
        let fd = finite_diff_score1(&f, &x, 1e-5).unwrap();
        assert!((fd - &x).amax() < 1e-6);
        let mut errs = vec![];
        for h in [1e-1, 1e-2, 1e-3] {
            let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 2.0]);
            let spec = DistributionSpec::student_t(sigma, 5.0).unwrap();
            let exact = ScoreField::closed_form(spec.clone()).score1(&x).unwrap();
            errs.push((finite_diff_score1(&spec, &x, h).unwrap() - exact).amax());
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        assert!(finite_diff_score1(&f, &x, 0.0).is_err());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let f = ScoreField::closed_form(DistributionSpec::gaussian(DMatrix::identity(2, 2)).unwrap());
        assert!(f.score1(&v(&[1.0])).is_err());
        assert!(f.score2(&v(&[1.0, 2.0, 3.0])).is_err());
    }
}
