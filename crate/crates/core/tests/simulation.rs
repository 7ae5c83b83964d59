use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stein_subspace::distributions::DistributionSpec;
use stein_subspace::simulation::{
    apply_links, generate_basis, generate_dataset, make_links, split_semi_supervised, DispersionChoice,
    DistributionChoice, ElementaryFn, LinkOptions, Mechanism, Provenance, SimulationConfig, SplitProtocol,
};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn elementary_function_table() {
    let e = std::f64::consts::E;
    let table: [(ElementaryFn, [f64; 3]); 10] = [
        (ElementaryFn::M1, [(-1f64).sin(), 0.0, 1f64.sin()]),
        (ElementaryFn::M2, [1f64.cosh(), 1.0, 1f64.cosh()]),
        (ElementaryFn::M3, [1f64.cos(), 1.0, 1f64.cos()]),
        (ElementaryFn::M4, [(-1f64).tanh(), 0.0, 1f64.tanh()]),
        (ElementaryFn::M5, [-std::f64::consts::FRAC_PI_4, 0.0, std::f64::consts::FRAC_PI_4]),
        (ElementaryFn::M6, [-1.0, 0.0, 1.0]),
        (ElementaryFn::M7, [-1.0, 0.0, 1.0]),
        (ElementaryFn::M8, [0.5, 1.0 / (1.0 + 1.0 / e), 1.0 / (1.0 + 1.0 / (e * e))]),
        (ElementaryFn::M9, [2f64.sqrt(), 1.0, 2f64.sqrt()]),
        (ElementaryFn::M10, [1.0, e, e * e]),
    ];
    for (f, expected) in table {
        for (z, want) in [0.0, 1.0, 2.0].into_iter().zip(expected) {
            assert!((f.eval(z) - want).abs() < 1e-14, "{f:?}({z}) = {} vs {want}", f.eval(z));
        }
    }
}

#[test]
fn linear_links_on_identity_return_coefficients() {
    let (q, r) = (5, 3);
    let links = make_links(Mechanism::Linear, q, r, &LinkOptions::default(), &mut rng(1)).unwrap();
    let out = apply_links(&links, &DMatrix::identity(r, r)).unwrap();
    for j in 0..q {
        for k in 0..r {
            assert_eq!(out[(k, j)], links.responses[j].coefficients[k]);
        }
    }
}

#[test]
fn cubic_link_vanishes_at_one() {
    let options = LinkOptions {
        palette: vec![ElementaryFn::M6],
        shared_coefficients: false,
    };
    let links = make_links(Mechanism::NonlinearFixed, 2, 2, &options, &mut rng(2)).unwrap();
    let out = apply_links(&links, &DMatrix::from_element(1, 2, 1.0)).unwrap();
    assert_eq!(out[(0, 0)], 0.0);
    assert_eq!(out[(0, 1)], 0.0);
}

#[test]
fn fixed_mechanism_sums_neighbouring_functions() {
    let links = make_links(Mechanism::NonlinearFixed, 6, 2, &LinkOptions::default(), &mut rng(3)).unwrap();
    let z = [0.4, -1.3];
    for k in 0..3 {
        let second = &links.responses[3 + k];
        let (f, g) = (ElementaryFn::ALL[k], ElementaryFn::ALL[(k + 1) % 3]);
        let expected: f64 = second
            .coefficients
            .iter()
            .zip(z)
            .map(|(a, zi)| a * (f.eval(zi) + g.eval(zi)))
            .sum();
        assert!((second.eval(&z) - expected).abs() < 1e-12);
        let first = &links.responses[k];
        let expected: f64 = first.coefficients.iter().zip(z).map(|(a, zi)| a * f.eval(zi)).sum();
        assert!((first.eval(&z) - expected).abs() < 1e-12);
    }
}

#[test]
fn random_pair_mechanism_draws_distinct_functions() {
    let q = 10;
    let options = LinkOptions::default();
    for seed in 0..50 {
        let links = make_links(Mechanism::NonlinearRandomPairs, q, 2, &options, &mut rng(seed)).unwrap();
        for (j, resp) in links.responses.iter().enumerate() {
            if j < q / 2 {
                assert_eq!(resp.terms, vec![options.palette[j]]);
            } else {
                assert_eq!(resp.terms.len(), 2);
                assert_ne!(resp.terms[0], resp.terms[1]);
                assert!(resp.terms.iter().all(|t| options.palette[..q / 2].contains(t)));
            }
        }
    }
}

#[test]
fn coefficient_laws() {
    let draws = |mechanism| -> Vec<f64> {
        (0..400)
            .flat_map(|s| {
                make_links(mechanism, 10, 5, &LinkOptions::default(), &mut rng(s))
                    .unwrap()
                    .responses
                    .into_iter()
                    .flat_map(|r| r.coefficients)
            })
            .collect()
    };
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
    };

    let (m, sd) = stats(&draws(Mechanism::Linear));
    assert!(m.abs() < 0.02 && (sd - 0.5).abs() < 0.02, "linear: {m} {sd}");

    let folded = draws(Mechanism::NonlinearFixed);
    assert!(folded.iter().all(|&a| a >= 3.0));
    let (m, sd) = stats(&folded);
    let half_normal_sd = (1.0 - 2.0 / std::f64::consts::PI).sqrt();
    assert!((m - 3.0 - (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.02, "nonlinear mean {m}");
    assert!((sd - half_normal_sd).abs() < 0.02, "nonlinear sd {sd}");
}

#[test]
fn shared_coefficients_are_reused() {
    let options = LinkOptions {
        shared_coefficients: true,
        ..LinkOptions::default()
    };
    let links = make_links(Mechanism::NonlinearFixed, 8, 3, &options, &mut rng(4)).unwrap();
    assert!(links.responses.iter().all(|r| r.coefficients == links.responses[0].coefficients));
}

#[test]
fn linear_response_covariance_identity() {
    // Cov(y) = Aᵀ Bᵀ Σ B A + σ² I for linear links with coefficient matrix A.
    let (p, q, r, n, sigma_eps) = (5, 4, 2, 100_000, 0.5);
    let mut g = rng(5);
    let b = generate_basis(p, r, 0.0, 1.0, &mut g).unwrap();
    let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 1.0, 0.5, 1.5, 1.0]));
    let spec = DistributionSpec::gaussian(sigma.clone()).unwrap();
    let links = make_links(Mechanism::Linear, q, r, &LinkOptions::default(), &mut g).unwrap();
    let data = generate_dataset(&spec, &links, &b, n, sigma_eps, &mut g).unwrap();

    let a = DMatrix::from_fn(r, q, |k, j| links.responses[j].coefficients[k]);
    let expected = a.transpose() * b.transpose() * &sigma * &b * &a + DMatrix::identity(q, q) * sigma_eps.powi(2);
    let cov = data.y.tr_mul(&data.y) / n as f64;
    let rel = (&cov - &expected).norm() / expected.norm();
    assert!(rel < 0.05, "relative error {rel}");
}

#[test]
fn noise_is_uncorrelated_with_design_and_across_responses() {
    let (p, q, r, n) = (4, 4, 2, 50_000);
    let mut g = rng(6);
    let b = generate_basis(p, r, 0.0, 1.0, &mut g).unwrap();
    let spec = DistributionSpec::gaussian(DMatrix::identity(p, p)).unwrap();
    let links = make_links(Mechanism::NonlinearFixed, q, r, &LinkOptions::default(), &mut g).unwrap();
    let data = generate_dataset(&spec, &links, &b, n, 1.0, &mut g).unwrap();
    let eps = &data.y - apply_links(&links, &(&data.x * &b)).unwrap();

    let corr = |u: nalgebra::DVectorView<f64>, v: nalgebra::DVectorView<f64>| {
        let (mu, mv) = (u.mean(), v.mean());
        let (du, dv) = (u.add_scalar(-mu), v.add_scalar(-mv));
        du.dot(&dv) / (du.norm() * dv.norm())
    };
    for j in 0..q {
        let sd = (eps.column(j).norm_squared() / n as f64).sqrt();
        assert!((sd - 1.0).abs() < 0.02);
        for k in 0..q {
            if k != j {
                assert!(corr(eps.column(j), eps.column(k)).abs() < 0.05);
            }
        }
        for k in 0..p {
            assert!(corr(eps.column(j), data.x.column(k)).abs() < 0.05);
        }
    }
}

#[test]
fn split_membership_is_uniform() {
    let n = 20;
    let protocol = SplitProtocol {
        n_test: 5,
        n_train: 6,
        n_labeled: 4,
    };
    let trials = 10_000;
    let mut counts = vec![[0usize; 3]; n];
    let mut g = rng(7);
    for _ in 0..trials {
        let s = split_semi_supervised(n, &protocol, &mut g).unwrap();
        for (set, idx) in [&s.test, &s.train, &s.labeled].into_iter().enumerate() {
            for &i in idx {
                counts[i][set] += 1;
            }
        }
        let mut all: Vec<usize> = s.test.iter().chain(&s.train).chain(&s.labeled).copied().collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 15);
    }
    let expected = [5.0 / 20.0, 6.0 / 20.0, 4.0 / 20.0];
    for c in &counts {
        for set in 0..3 {
            let freq = c[set] as f64 / trials as f64;
            assert!((freq - expected[set]).abs() < 0.02, "{freq} vs {}", expected[set]);
        }
    }
}

#[test]
fn realize_is_deterministic_and_regenerable() {
    let cfg = SimulationConfig {
        distribution: DistributionChoice::Hyperbolic { chi: None, psi: None },
        n: 300,
        ..SimulationConfig::desk()
    };
    let a = cfg.realize(11).unwrap();
    let b = cfg.realize(11).unwrap();
    assert_eq!(a.x, b.x);
    assert_eq!(a.y, b.y);
    assert_eq!(a.b_true, b.b_true);
    assert_ne!(cfg.realize(12).unwrap().x, a.x);

    let json = serde_json::to_string(a.provenance.as_ref().unwrap()).unwrap();
    let prov: Provenance = serde_json::from_str(&json).unwrap();
    let c = prov.config.realize(prov.seed).unwrap();
    assert_eq!(a.x, c.x);
    assert_eq!(a.y, c.y);
    assert_eq!(a.links, c.links);
}

#[test]
fn identity_dispersion_is_used_verbatim() {
    let cfg = SimulationConfig {
        dispersion: DispersionChoice::Identity,
        ..SimulationConfig::desk()
    };
    let data = cfg.realize(1).unwrap();
    assert_eq!(data.spec.dispersion(), &DMatrix::<f64>::identity(10, 10));
}

#[test]
fn basis_generation() {
    let b = generate_basis(6, 1, 2.0, 0.0, &mut rng(8)).unwrap();
    for v in b.iter() {
        assert!((v - 1.0 / 6f64.sqrt()).abs() < 1e-14);
    }
    let b1 = generate_basis(8, 3, 0.0, 1.0, &mut rng(9)).unwrap();
    let b2 = generate_basis(8, 3, 0.0, 1.0, &mut rng(10)).unwrap();
    assert!((b1.tr_mul(&b1) - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
    assert!((&b1 - &b2).amax() > 1e-3);
    assert!(generate_basis(3, 4, 0.0, 1.0, &mut rng(1)).is_err());
}
