//! Synthetic data for the multi-index model `y = F(Bᵀx) + ε`.
//!
//! Covers the latent basis, the three link-generating mechanisms built from
//! ten elementary functions, Gaussian noise, and the test / train / labeled
//! split used for downstream evaluation.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distributions::{generate_dispersion, DispersionRecipe, DistributionKind, DistributionSpec};
use crate::error::{Error, Result};
use crate::linalg::leading_left_singular;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElementaryFn {
    #[serde(rename = "m1")]
    M1,
    #[serde(rename = "m2")]
    M2,
    #[serde(rename = "m3")]
    M3,
    #[serde(rename = "m4")]
    M4,
    #[serde(rename = "m5")]
    M5,
    #[serde(rename = "m6")]
    M6,
    #[serde(rename = "m7")]
    M7,
    #[serde(rename = "m8")]
    M8,
    #[serde(rename = "m9")]
    M9,
    #[serde(rename = "m10")]
    M10,
}

impl ElementaryFn {
    pub const ALL: [ElementaryFn; 10] = [
        ElementaryFn::M1,
        ElementaryFn::M2,
        ElementaryFn::M3,
        ElementaryFn::M4,
        ElementaryFn::M5,
        ElementaryFn::M6,
        ElementaryFn::M7,
        ElementaryFn::M8,
        ElementaryFn::M9,
        ElementaryFn::M10,
    ];

    pub fn eval(self, x: f64) -> f64 {
        let s = x - 1.0;
        match self {
            ElementaryFn::M1 => s.sin(),
            ElementaryFn::M2 => s.cosh(),
            ElementaryFn::M3 => s.cos(),
            ElementaryFn::M4 => s.tanh(),
            ElementaryFn::M5 => s.atan(),
            ElementaryFn::M6 => s.powi(3),
            ElementaryFn::M7 => s.powi(5),
            ElementaryFn::M8 => 1.0 / (1.0 + (-x).exp()),
            ElementaryFn::M9 => (s * s + 1.0).sqrt(),
            ElementaryFn::M10 => x.exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    /// `f_j(z) = a_jᵀz`.
    Linear,
    /// First half `m_j`, second half `m_j + m_{j+1}` with wrap.
    NonlinearFixed,
    /// First half `m_j`, second half `m_{j₁} + m_{j₂}`, `j₁ ≠ j₂` random.
    NonlinearRandomPairs,
}

impl Mechanism {
    pub fn label(self) -> &'static str {
        match self {
            Mechanism::Linear => "linear",
            Mechanism::NonlinearFixed => "nonlinear-fixed",
            Mechanism::NonlinearRandomPairs => "nonlinear-random-pairs",
        }
    }
}

/// One response: `f(z) = Σₖ aₖ Σ_{m ∈ terms} m(zₖ)`, or `aᵀz` when `terms`
/// is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseLink {
    pub coefficients: Vec<f64>,
    pub terms: Vec<ElementaryFn>,
}

impl ResponseLink {
    pub fn eval(&self, z: &[f64]) -> f64 {
        self.coefficients
            .iter()
            .zip(z)
            .map(|(a, &zk)| {
                if self.terms.is_empty() {
                    a * zk
                } else {
                    a * self.terms.iter().map(|m| m.eval(zk)).sum::<f64>()
                }
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub mechanism: Mechanism,
    pub rank: usize,
    pub responses: Vec<ResponseLink>,
}

impl LinkSpec {
    pub fn q(&self) -> usize {
        self.responses.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkOptions {
    /// Elementary functions available to the nonlinear mechanisms, in order.
    pub palette: Vec<ElementaryFn>,
    /// Reuse one coefficient vector for every response.
    pub shared_coefficients: bool,
}

impl Default for LinkOptions {
    fn default() -> Self {
        Self {
            palette: ElementaryFn::ALL.to_vec(),
            shared_coefficients: false,
        }
    }
}

pub fn make_links<R: Rng + ?Sized>(
    mechanism: Mechanism,
    q: usize,
    r: usize,
    options: &LinkOptions,
    rng: &mut R,
) -> Result<LinkSpec> {
    if q == 0 {
        return Err(Error::InvalidDimension {
            what: "response dimension q",
            value: 0,
        });
    }
    if r == 0 {
        return Err(Error::InvalidDimension {
            what: "latent rank r",
            value: 0,
        });
    }
    let half = q / 2;
    if mechanism != Mechanism::Linear {
        if !q.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "q must be even for the {} mechanism, got q={q}",
                mechanism.label()
            )));
        }
        if half > options.palette.len() {
            return Err(Error::Config(format!(
                "q/2 = {half} exceeds the {} available elementary functions",
                options.palette.len()
            )));
        }
        if mechanism == Mechanism::NonlinearRandomPairs && half < 2 {
            return Err(Error::Config(format!(
                "the {} mechanism needs q >= 4 to draw two distinct functions, got q={q}",
                mechanism.label()
            )));
        }
    }

    let linear_law = Normal::new(0.0, 0.5).expect("fixed parameters");
    let draw = |rng: &mut R| -> Vec<f64> {
        (0..r)
            .map(|_| match mechanism {
                Mechanism::Linear => linear_law.sample(rng),
                _ => rng.sample::<f64, _>(StandardNormal).abs() + 3.0,
            })
            .collect()
    };
    let shared = options.shared_coefficients.then(|| draw(rng));
    let mut responses = Vec::with_capacity(q);
    for j in 0..q {
        let terms = match mechanism {
            Mechanism::Linear => vec![],
            _ if j < half => vec![options.palette[j]],
            Mechanism::NonlinearFixed => {
                let k = j - half;
                vec![options.palette[k], options.palette[(k + 1) % half]]
            }
            Mechanism::NonlinearRandomPairs => {
                let j1 = rng.random_range(0..half);
                let mut j2 = rng.random_range(0..half - 1);
                if j2 >= j1 {
                    j2 += 1;
                }
                vec![options.palette[j1], options.palette[j2]]
            }
        };
        let coefficients = match &shared {
            Some(a) => a.clone(),
            None => draw(rng),
        };
        responses.push(ResponseLink { coefficients, terms });
    }
    Ok(LinkSpec {
        mechanism,
        rank: r,
        responses,
    })
}

/// Row-wise `F(z)`, `n x q`. Overflow in `cosh`/`exp` propagates as infinity.
pub fn apply_links(links: &LinkSpec, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if z.ncols() != links.rank {
        return Err(Error::shape("latent columns", links.rank, z.ncols()));
    }
    let mut out = DMatrix::zeros(z.nrows(), links.q());
    let mut buf = vec![0.0; links.rank];
    for i in 0..z.nrows() {
        for (k, b) in buf.iter_mut().enumerate() {
            *b = z[(i, k)];
        }
        for (j, link) in links.responses.iter().enumerate() {
            out[(i, j)] = link.eval(&buf);
        }
    }
    Ok(out)
}

/// Top-`r` left singular vectors of a `p x r` matrix with i.i.d.
/// `N(μ_o, σ_o²)` entries.
pub fn generate_basis<R: Rng + ?Sized>(p: usize, r: usize, mu: f64, sd: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    if r == 0 || r > p {
        return Err(Error::InvalidRank { r, max: p });
    }
    if !(sd >= 0.0) || !sd.is_finite() || !mu.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "basis entries need finite mean and sd >= 0, got mean={mu}, sd={sd}"
        )));
    }
    let raw = DMatrix::from_fn(p, r, |_, _| mu + sd * rng.sample::<f64, _>(StandardNormal));
    Ok(leading_left_singular(&raw, r, None)?.basis)
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub b_true: DMatrix<f64>,
    pub spec: DistributionSpec,
    pub links: LinkSpec,
    pub sigma_eps: f64,
    /// Present when the dataset was realized from a [`SimulationConfig`].
    pub provenance: Option<Provenance>,
}

/// `X ~ dist`, `Y = F(XB) + N(0, σ_ε²)`.
pub fn generate_dataset<R: Rng + ?Sized>(
    dist: &DistributionSpec,
    links: &LinkSpec,
    b: &DMatrix<f64>,
    n: usize,
    sigma_eps: f64,
    rng: &mut R,
) -> Result<SyntheticDataset> {
    if b.nrows() != dist.dim() {
        return Err(Error::shape("basis rows", dist.dim(), b.nrows()));
    }
    if b.ncols() != links.rank {
        return Err(Error::shape("basis columns", links.rank, b.ncols()));
    }
    if !(sigma_eps >= 0.0) || !sigma_eps.is_finite() {
        return Err(Error::InvalidParameter(format!("sigma_eps must be >= 0, got {sigma_eps}")));
    }
    let x = dist.sample(n, rng)?;
    let mut y = apply_links(links, &(&x * b))?;
    if sigma_eps > 0.0 {
        for v in y.iter_mut() {
            *v += sigma_eps * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(SyntheticDataset {
        x,
        y,
        b_true: b.clone(),
        spec: dist.clone(),
        links: links.clone(),
        sigma_eps,
        provenance: None,
    })
}

/// Design family with parameters defaulting to the simulation-study values
/// (`ν = 10`, `χ = 2p + 1`, `ψ = p`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DistributionChoice {
    Gaussian,
    StudentT {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nu: Option<f64>,
    },
    Hyperbolic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        chi: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        psi: Option<f64>,
    },
}

impl DistributionChoice {
    pub fn resolve(self, p: usize) -> DistributionKind {
        match self {
            DistributionChoice::Gaussian => DistributionKind::Gaussian,
            DistributionChoice::StudentT { nu } => DistributionKind::StudentT { nu: nu.unwrap_or(10.0) },
            DistributionChoice::Hyperbolic { chi, psi } => DistributionKind::Hyperbolic {
                chi: chi.unwrap_or(2.0 * p as f64 + 1.0),
                psi: psi.unwrap_or(p as f64),
            },
        }
    }

    /// The same family with every parameter filled in.
    pub fn resolved(self, p: usize) -> Self {
        match self.resolve(p) {
            DistributionKind::Gaussian => DistributionChoice::Gaussian,
            DistributionKind::StudentT { nu } => DistributionChoice::StudentT { nu: Some(nu) },
            DistributionKind::Hyperbolic { chi, psi } => DistributionChoice::Hyperbolic {
                chi: Some(chi),
                psi: Some(psi),
            },
        }
    }

    pub fn label(self) -> &'static str {
        self.resolve(1).label()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DispersionChoice {
    Identity,
    /// `QΛQᵀ` with Haar `Q` and `Λᵢᵢ = |z| + shift`, `z ~ N(0, scale²)`.
    Random { shift: f64, scale: f64 },
}

/// Everything needed to regenerate a dataset from a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub p: usize,
    pub q: usize,
    pub r: usize,
    pub n: usize,
    pub sigma_eps: f64,
    pub distribution: DistributionChoice,
    pub dispersion: DispersionChoice,
    pub mechanism: Mechanism,
    #[serde(default)]
    pub links: LinkOptions,
    #[serde(default)]
    pub basis_mean: f64,
    #[serde(default = "one")]
    pub basis_sd: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub config: SimulationConfig,
    pub seed: u64,
}

impl SimulationConfig {
    /// Simulation-study parameters: `q = 20`, `r = 3`, `σ_ε = 0.5`, `p = 30`,
    /// random dispersion with `b = σ = 1`.
    pub fn paper_default() -> Self {
        Self {
            p: 30,
            q: 20,
            r: 3,
            n: 1000,
            sigma_eps: 0.5,
            distribution: DistributionChoice::Gaussian,
            dispersion: DispersionChoice::Random { shift: 1.0, scale: 1.0 },
            mechanism: Mechanism::NonlinearFixed,
            links: LinkOptions::default(),
            basis_mean: 0.0,
            basis_sd: 1.0,
        }
    }

    /// Small-scale variant: `p = q = 10`, `r = 2`.
    pub fn desk() -> Self {
        Self {
            p: 10,
            q: 10,
            r: 2,
            ..Self::paper_default()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "paper-default" => Some(Self::paper_default()),
            "desk" => Some(Self::desk()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.q == 0 || self.n == 0 {
            return Err(Error::Config(format!(
                "p, q and n must be positive (p={}, q={}, n={})",
                self.p, self.q, self.n
            )));
        }
        if self.r == 0 || self.r > self.p {
            return Err(Error::Config(format!("r must satisfy 1 <= r <= p, got r={} p={}", self.r, self.p)));
        }
        if self.mechanism != Mechanism::Linear && !self.q.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "q must be even for the {} mechanism, got q={}",
                self.mechanism.label(),
                self.q
            )));
        }
        if !(self.sigma_eps >= 0.0) {
            return Err(Error::Config(format!("sigma_eps must be >= 0, got {}", self.sigma_eps)));
        }
        if let DispersionChoice::Random { shift, scale } = self.dispersion {
            if !(shift > 0.0) || !(scale >= 0.0) {
                return Err(Error::Config(format!(
                    "dispersion needs shift > 0 and scale >= 0, got shift={shift}, scale={scale}"
                )));
            }
        }
        Ok(())
    }

    /// Same configuration with distribution defaults made explicit.
    pub fn resolved(&self) -> Self {
        Self {
            distribution: self.distribution.resolved(self.p),
            ..self.clone()
        }
    }

    /// Build the dataset for `seed`. Basis, dispersion, links, design and
    /// noise are drawn in that order from one ChaCha8 stream.
    pub fn realize(&self, seed: u64) -> Result<SyntheticDataset> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = generate_basis(self.p, self.r, self.basis_mean, self.basis_sd, &mut rng)?;
        let sigma = match self.dispersion {
            DispersionChoice::Identity => DMatrix::identity(self.p, self.p),
            DispersionChoice::Random { shift, scale } => generate_dispersion(
                &DispersionRecipe {
                    dim: self.p,
                    shift,
                    scale,
                },
                &mut rng,
            )?,
        };
        let spec = DistributionSpec::new(self.distribution.resolve(self.p), sigma)?;
        let links = make_links(self.mechanism, self.q, self.r, &self.links, &mut rng)?;
        let mut data = generate_dataset(&spec, &links, &b, self.n, self.sigma_eps, &mut rng)?;
        data.provenance = Some(Provenance {
            config: self.resolved(),
            seed,
        });
        Ok(data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitProtocol {
    pub n_test: usize,
    pub n_train: usize,
    pub n_labeled: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub test: Vec<usize>,
    pub train: Vec<usize>,
    pub labeled: Vec<usize>,
}

/// Disjoint uniformly random index sets of the requested sizes.
pub fn split_semi_supervised<R: Rng + ?Sized>(n: usize, protocol: &SplitProtocol, rng: &mut R) -> Result<SplitIndices> {
    let requested = protocol.n_test + protocol.n_train + protocol.n_labeled;
    if requested > n {
        return Err(Error::Oversubscribed {
            requested,
            available: n,
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let (test, rest) = idx.split_at(protocol.n_test);
    let (train, rest) = rest.split_at(protocol.n_train);
    Ok(SplitIndices {
        test: test.to_vec(),
        train: train.to_vec(),
        labeled: rest[..protocol.n_labeled].to_vec(),
    })
}

/// Rows of `m` at `idx`, in order.
pub fn select_rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
}

/// Column means of `m`.
pub fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(m.ncols(), |j, _| m.column(j).mean())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elementary_values() {
        assert!((ElementaryFn::M1.eval(0.0) - (-1f64).sin()).abs() < 1e-15);
        assert!((ElementaryFn::M9.eval(0.0) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(ElementaryFn::M6.eval(1.0), 0.0);
        assert_eq!(ElementaryFn::M10.eval(0.0), 1.0);
    }

    #[test]
    fn mechanism_two_wraps() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = make_links(Mechanism::NonlinearFixed, 20, 3, &LinkOptions::default(), &mut rng).unwrap();
        assert_eq!(l.responses[0].terms, vec![ElementaryFn::M1]);
        assert_eq!(l.responses[9].terms, vec![ElementaryFn::M10]);
        assert_eq!(l.responses[10].terms, vec![ElementaryFn::M1, ElementaryFn::M2]);
        assert_eq!(l.responses[19].terms, vec![ElementaryFn::M10, ElementaryFn::M1]);
        assert!(l.responses.iter().flat_map(|r| &r.coefficients).all(|&a| a >= 3.0));
    }

    #[test]
    fn odd_q_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = make_links(Mechanism::NonlinearFixed, 5, 2, &LinkOptions::default(), &mut rng).unwrap_err();
        assert!(e.to_string().contains("q must be even"));
        assert!(make_links(Mechanism::Linear, 5, 2, &LinkOptions::default(), &mut rng).is_ok());
        assert!(make_links(Mechanism::NonlinearRandomPairs, 2, 1, &LinkOptions::default(), &mut rng).is_err());
        assert!(make_links(Mechanism::NonlinearFixed, 22, 1, &LinkOptions::default(), &mut rng).is_err());
    }

    #[test]
    fn constant_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = generate_basis(4, 1, 1.0, 0.0, &mut rng).unwrap();
        for v in b.iter() {
            assert!((v - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn split_partitions_when_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = split_semi_supervised(
            10,
            &SplitProtocol {
                n_test: 3,
                n_train: 3,
                n_labeled: 4,
            },
            &mut rng,
        )
        .unwrap();
        let mut all: Vec<usize> = s.test.iter().chain(&s.train).chain(&s.labeled).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(matches!(
            split_semi_supervised(
                2,
                &SplitProtocol {
                    n_test: 1,
                    n_train: 1,
                    n_labeled: 1
                },
                &mut rng
            ),
            Err(Error::Oversubscribed { requested: 3, available: 2 })
        ));
    }
}
