//! Downstream comparison of semi-supervised, unsupervised and labeled-only
//! first-order estimators.
//!
//! Features are Gaussian with covariance `Σ_bg + κ BBᵀ`, where `Σ_bg` is a
//! random dispersion, so `B` shows up in the features as well as in the labels
//! `ỹ = F(Bᵀx) + ε`. Rows are split into a test set, a decoder-training set
//! and a small labeled set; every non-test row is in the unlabeled pool. Each
//! estimated basis feeds a linear decoder trained on the training rows and is
//! scored by PMSE on the test rows.
//!
//! The default design has about as many labeled rows as features, which is
//! where the pool pays off. With plentiful labels the labeled-only arm is
//! ordinary least squares and is hard to beat.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::child_seed;
use crate::distributions::{generate_dispersion, DispersionRecipe, DistributionSpec};
use crate::error::{Error, Result};
use crate::estimators::{fit_linear_decoder, first_order_fit, semi_first_order_fit, LatentBasis, SemiSupervisedData};
use crate::metrics::{pmse, subspace_dist};
use crate::scores::ScoreField;
use crate::simulation::{
    generate_basis, generate_dataset, make_links, select_rows, split_semi_supervised, LinkOptions, Mechanism,
    SplitProtocol,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemiSupervisedStudy {
    pub p: usize,
    pub r: usize,
    /// Label dimension.
    pub m: usize,
    /// `κ` in `Σ_bg + κ BBᵀ`.
    pub spike: f64,
    pub sigma_eps: f64,
    pub mechanism: Mechanism,
    pub n_test: usize,
    pub n_train: usize,
    pub n_labeled: usize,
    /// Rows outside the test set; all of them form the unlabeled pool.
    pub n_pool: usize,
    pub repetitions: usize,
    pub master_seed: u64,
}

impl Default for SemiSupervisedStudy {
    fn default() -> Self {
        Self {
            p: 100,
            r: 3,
            m: 2,
            spike: 1.0,
            sigma_eps: 1.0,
            mechanism: Mechanism::Linear,
            n_test: 500,
            n_train: 200,
            n_labeled: 100,
            n_pool: 1000,
            repetitions: 50,
            master_seed: 20240601,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArmResult {
    pub pmse: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SemiTrial {
    pub rep: usize,
    pub seed: u64,
    /// Labeled block plus the whole pool.
    pub semi: ArmResult,
    /// `Y = X` on the pool.
    pub unsupervised: ArmResult,
    /// The semi-supervised estimator restricted to the labeled rows.
    pub labeled_only: ArmResult,
}

impl SemiSupervisedStudy {
    pub fn validate(&self) -> Result<()> {
        if self.r == 0 || self.r > self.p {
            return Err(Error::InvalidRank { r: self.r, max: self.p });
        }
        if self.n_train + self.n_labeled > self.n_pool {
            return Err(Error::Oversubscribed {
                requested: self.n_train + self.n_labeled,
                available: self.n_pool,
            });
        }
        if self.n_train <= self.r {
            return Err(Error::Config("n_train must exceed r".into()));
        }
        if self.repetitions == 0 || self.m == 0 || self.n_test == 0 || self.n_labeled == 0 {
            return Err(Error::Config("m, n_test, n_labeled and repetitions must be positive".into()));
        }
        if self.mechanism != Mechanism::Linear && !self.m.is_multiple_of(2) {
            return Err(Error::Config(format!("q must be even for nonlinear mechanisms, got m={}", self.m)));
        }
        Ok(())
    }

    pub fn trial(&self, rep: usize) -> Result<SemiTrial> {
        let seed = child_seed(self.master_seed, "semi-supervised", rep);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = generate_basis(self.p, self.r, 0.0, 1.0, &mut rng)?;
        let mut sigma = generate_dispersion(&DispersionRecipe::new(self.p), &mut rng)?;
        sigma += &b * b.transpose() * self.spike;
        crate::linalg::symmetrize(&mut sigma);
        let spec = DistributionSpec::gaussian(sigma)?;
        let links = make_links(self.mechanism, self.m, self.r, &LinkOptions::default(), &mut rng)?;
        let total = self.n_test + self.n_pool;
        let data = generate_dataset(&spec, &links, &b, total, self.sigma_eps, &mut rng)?;
        let split = split_semi_supervised(
            total,
            &SplitProtocol {
                n_test: self.n_test,
                n_train: self.n_train,
                n_labeled: self.n_labeled,
            },
            &mut rng,
        )?;
        let mut pool_idx: Vec<usize> = (0..total).filter(|i| !split.test.contains(i)).collect();
        pool_idx.sort_unstable();

        let pool = select_rows(&data.x, &pool_idx);
        let x_lab = select_rows(&data.x, &split.labeled);
        let y_lab = select_rows(&data.y, &split.labeled);
        let x_train = select_rows(&data.x, &split.train);
        let y_train = select_rows(&data.y, &split.train);
        let x_test = select_rows(&data.x, &split.test);
        let y_test = select_rows(&data.y, &split.test);

        let pool_field = ScoreField::plugin_gaussian(&pool, false)?;
        let lab_field = ScoreField::plugin_gaussian(&x_lab, false)?;

        let semi = semi_first_order_fit(
            &SemiSupervisedData::new(x_lab.clone(), y_lab.clone(), pool.clone())?,
            self.r,
            &pool_field,
        )?;
        let unsupervised = first_order_fit(&pool, &pool, self.r, &pool_field)?;
        let labeled_only = semi_first_order_fit(
            &SemiSupervisedData::new(x_lab.clone(), y_lab, x_lab)?,
            self.r,
            &lab_field,
        )?;

        let arm = |basis: &LatentBasis| -> Result<ArmResult> {
            let dec = fit_linear_decoder(&basis.embed(&x_train)?, &y_train)?;
            let pred = dec.predict(&basis.embed(&x_test)?)?;
            Ok(ArmResult {
                pmse: pmse(&y_test, &pred)?,
                distance: subspace_dist(&basis.matrix, &b)?.distance,
            })
        };
        Ok(SemiTrial {
            rep,
            seed,
            semi: arm(&semi)?,
            unsupervised: arm(&unsupervised)?,
            labeled_only: arm(&labeled_only)?,
        })
    }

    pub fn run(&self) -> Result<Vec<SemiTrial>> {
        self.validate()?;
        (0..self.repetitions).into_par_iter().map(|rep| self.trial(rep)).collect()
    }
}
