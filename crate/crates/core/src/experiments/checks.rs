//! Fast invariant battery: closed-form scores against finite differences,
//! Procrustes distance against brute force, and the plug-in / PCA
//! equivalence.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::check_pca_equivalence;
use crate::distributions::{generate_dispersion, sample_haar_orthogonal, DispersionRecipe, DistributionSpec};
use crate::error::Result;
use crate::metrics::subspace_dist;
use crate::scores::{finite_diff_score1, finite_diff_score2, ScoreField};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Worst-case score errors over a set of points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreErrors {
    /// `max ‖s − FD‖_∞`
    pub first: f64,
    /// `max |T − FD|` entrywise
    pub second: f64,
}

/// Compare `field` with finite differences of `spec`'s log density at
/// `points` (`h = 1e-5` for `s`, `1e-4` for `T`).
pub fn score_errors(spec: &DistributionSpec, field: &ScoreField, points: &[DVector<f64>]) -> Result<ScoreErrors> {
    let mut e = ScoreErrors { first: 0.0, second: 0.0 };
    for x in points {
        let s = field.score1(x)?;
        e.first = e.first.max((s - finite_diff_score1(spec, x, 1e-5)?).amax());
        let t = field.score2(x)?;
        e.second = e.second.max((t - finite_diff_score2(spec, x, 1e-4)?).amax());
    }
    Ok(e)
}

/// Draws from `spec` with `xᵀΣ⁻¹x < max_q`.
pub fn moderate_points<R: Rng + ?Sized>(spec: &DistributionSpec, count: usize, max_q: f64, rng: &mut R) -> Result<Vec<DVector<f64>>> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x = spec.sample(1, rng)?.row(0).transpose();
        if spec.quad_form(&x) < max_q {
            out.push(x);
        }
    }
    Ok(out)
}

/// Brute-force `min_V ‖Θ₁ − Θ₂V‖_F`: sign enumeration for `r = 1`, a grid of
/// `steps` rotation angles times both reflections for `r = 2`.
pub fn brute_force_dist(theta1: &DMatrix<f64>, theta2: &DMatrix<f64>, steps: usize) -> f64 {
    match theta1.ncols() {
        1 => [1.0, -1.0]
            .iter()
            .map(|s| (theta1 - theta2 * *s).norm())
            .fold(f64::INFINITY, f64::min),
        2 => {
            let mut best = f64::INFINITY;
            for k in 0..steps {
                let a = 2.0 * std::f64::consts::PI * k as f64 / steps as f64;
                let (c, s) = (a.cos(), a.sin());
                for v in [
                    DMatrix::from_row_slice(2, 2, &[c, -s, s, c]),
                    DMatrix::from_row_slice(2, 2, &[c, s, s, -c]),
                ] {
                    best = best.min((theta1 - theta2 * v).norm());
                }
            }
            best
        }
        r => panic!("brute force implemented for r <= 2, got {r}"),
    }
}

/// A random `p x r` orthonormal frame.
pub fn random_frame<R: Rng + ?Sized>(p: usize, r: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    Ok(sample_haar_orthogonal(p, rng)?.columns(0, r).into_owned())
}

fn outcome(name: &str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name: name.into(),
        passed,
        detail,
    }
}

/// Run the battery. Returns one outcome per check; the battery passes when
/// all do.
pub fn run_checks(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let p = 3;
    let sigma = generate_dispersion(&DispersionRecipe::new(p), &mut rng)?;
    let specs = [
        DistributionSpec::gaussian(sigma.clone())?,
        DistributionSpec::student_t(sigma.clone(), 10.0)?,
        DistributionSpec::hyperbolic(sigma, 2.0 * p as f64 + 1.0, p as f64)?,
    ];
    for spec in &specs {
        let pts = moderate_points(spec, 20, 25.0, &mut rng)?;
        let e = score_errors(spec, &ScoreField::closed_form(spec.clone()), &pts)?;
        out.push(outcome(
            &format!("score-finite-difference/{}", spec.kind().label()),
            e.first < 1e-5 && e.second < 1e-4,
            format!("max first-order error {:e}, max second-order error {:e}", e.first, e.second),
        ));
    }

    let mut worst_gap = 0.0f64;
    let mut undershoot = false;
    for k in 0..20 {
        let r = 1 + k % 2;
        let t1 = random_frame(5, r, &mut rng)?;
        let t2 = random_frame(5, r, &mut rng)?;
        let d = subspace_dist(&t1, &t2)?.distance;
        let oracle = brute_force_dist(&t1, &t2, 1800);
        undershoot |= d > oracle + 1e-12;
        worst_gap = worst_gap.max((oracle - d).abs());
    }
    out.push(outcome(
        "procrustes-oracle",
        !undershoot && worst_gap < 1e-3,
        format!("largest gap to brute force {worst_gap:e}"),
    ));

    let mut worst = 0.0f64;
    for _ in 0..3 {
        let x = DMatrix::from_fn(500, 10, |_, _| rng.sample::<f64, _>(StandardNormal));
        let eq = check_pca_equivalence(&x, 3)?;
        if !eq.degenerate {
            worst = worst.max(eq.distance);
        }
    }
    out.push(outcome(
        "plug-in-first-order-equals-pca",
        worst < 1e-8,
        format!("largest distance {worst:e}"),
    ));
    Ok(out)
}
