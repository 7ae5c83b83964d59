//! Generalized inverse Gaussian sampling.
//!
//! `GIG(λ, χ, ψ)` has density proportional to
//! `w^{λ−1} exp(−(χ/w + ψw)/2)` on `w > 0`. Writing `ω = √(χψ)` and
//! `α = √(χ/ψ)`, a draw is `α·Y` with `Y ~ GIG(|λ|, ω, ω)`, inverted when
//! `λ < 0`. `Y` is produced by one of three rejection samplers (Hörmann and
//! Leydold, 2014): ratio-of-uniforms with mode shift for `λ > 2` or `ω > 3`,
//! plain ratio-of-uniforms for the moderate region, and a piecewise
//! dominating density for the remaining non-log-concave corner.

use rand::Rng;
use rand_distr::Distribution;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct Gig {
    lambda: f64,
    /// `√(χ/ψ)`
    alpha: f64,
    method: Method,
}

#[derive(Debug, Clone, Copy)]
enum Method {
    /// Ratio-of-uniforms around the mode.
    ShiftedRou {
        t: f64,
        s: f64,
        mode: f64,
        nc: f64,
        u_minus: f64,
        u_plus: f64,
    },
    /// Ratio-of-uniforms on `[0, u_max] x [0, 1]`.
    PlainRou {
        t: f64,
        s: f64,
        nc: f64,
        u_max: f64,
    },
    /// Three-piece hat for `0 <= λ < 1`, small `ω`.
    PiecewiseHat {
        lambda: f64,
        omega: f64,
        x0: f64,
        k0: f64,
        k1: f64,
        k2: f64,
        areas: [f64; 3],
    },
}

impl Gig {
    pub fn new(lambda: f64, chi: f64, psi: f64) -> Result<Self> {
        if !(chi > 0.0 && chi.is_finite()) || !(psi > 0.0 && psi.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "GIG requires chi > 0 and psi > 0 (got chi={chi}, psi={psi})"
            )));
        }
        if !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("GIG lambda must be finite, got {lambda}")));
        }
        let omega = (chi * psi).sqrt();
        let alpha = (chi / psi).sqrt();
        let l = lambda.abs();
        let method = if l > 2.0 || omega > 3.0 {
            shifted_rou(l, omega)
        } else if l >= 1.0 - 2.25 * omega * omega || omega > 0.2 {
            plain_rou(l, omega)
        } else {
            piecewise_hat(l, omega)
        };
        Ok(Self {
            lambda,
            alpha,
            method,
        })
    }
}

/// Mode of `y^{λ−1} exp(−ω(y + 1/y)/2)`.
fn mode(lambda: f64, omega: f64) -> f64 {
    if lambda >= 1.0 {
        (((lambda - 1.0).powi(2) + omega * omega).sqrt() + (lambda - 1.0)) / omega
    } else {
        omega / (((1.0 - lambda).powi(2) + omega * omega).sqrt() + (1.0 - lambda))
    }
}

fn shifted_rou(lambda: f64, omega: f64) -> Method {
    let t = 0.5 * (lambda - 1.0);
    let s = 0.25 * omega;
    let xm = mode(lambda, omega);
    let nc = t * xm.ln() - s * (xm + 1.0 / xm);

    // Extremes of (x − m)·√g(x) are the two positive roots of
    // x³ + a x² + b x + c = 0.
    let a = -(2.0 * (lambda + 1.0) / omega + xm);
    let b = 2.0 * (lambda - 1.0) * xm / omega - 1.0;
    let c = xm;
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let fi = (-q / (2.0 * (-(p * p * p) / 27.0).sqrt())).clamp(-1.0, 1.0).acos();
    let fak = 2.0 * (-p / 3.0).sqrt();
    let y1 = fak * (fi / 3.0).cos() - a / 3.0;
    let y2 = fak * (fi / 3.0 + 4.0 / 3.0 * std::f64::consts::PI).cos() - a / 3.0;

    let u_plus = (y1 - xm) * (t * y1.ln() - s * (y1 + 1.0 / y1) - nc).exp();
    let u_minus = (y2 - xm) * (t * y2.ln() - s * (y2 + 1.0 / y2) - nc).exp();
    Method::ShiftedRou {
        t,
        s,
        mode: xm,
        nc,
        u_minus,
        u_plus,
    }
}

fn plain_rou(lambda: f64, omega: f64) -> Method {
    let t = 0.5 * (lambda - 1.0);
    let s = 0.25 * omega;
    let xm = mode(lambda, omega);
    let nc = t * xm.ln() - s * (xm + 1.0 / xm);
    // maximiser of x·√g(x)
    let ym = ((lambda + 1.0) + ((lambda + 1.0).powi(2) + omega * omega).sqrt()) / omega;
    let u_max = (0.5 * (lambda + 1.0) * ym.ln() - s * (ym + 1.0 / ym) - nc).exp();
    Method::PlainRou { t, s, nc, u_max }
}

fn piecewise_hat(lambda: f64, omega: f64) -> Method {
    let xm = mode(lambda, omega);
    let x0 = omega / (1.0 - lambda);
    let k0 = ((lambda - 1.0) * xm.ln() - 0.5 * omega * (xm + 1.0 / xm)).exp();
    let a0 = k0 * x0;
    let (k1, a1, k2, a2);
    if x0 >= 2.0 / omega {
        k1 = 0.0;
        a1 = 0.0;
        k2 = x0.powf(lambda - 1.0);
        a2 = k2 * 2.0 * (-omega * x0 / 2.0).exp() / omega;
    } else {
        k1 = (-omega).exp();
        a1 = if lambda == 0.0 {
            k1 * (2.0 / (omega * omega)).ln()
        } else {
            k1 / lambda * ((2.0 / omega).powf(lambda) - x0.powf(lambda))
        };
        k2 = (2.0 / omega).powf(lambda - 1.0);
        a2 = k2 * 2.0 * (-1.0f64).exp() / omega;
    }
    Method::PiecewiseHat {
        lambda,
        omega,
        x0,
        k0,
        k1,
        k2,
        areas: [a0, a1, a2],
    }
}

impl Distribution<f64> for Gig {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let y = match self.method {
            Method::ShiftedRou {
                t,
                s,
                mode,
                nc,
                u_minus,
                u_plus,
            } => loop {
                let u = u_minus + rng.random::<f64>() * (u_plus - u_minus);
                let v: f64 = rng.random();
                let x = u / v + mode;
                if x <= 0.0 || !x.is_finite() {
                    continue;
                }
                if v.ln() <= t * x.ln() - s * (x + 1.0 / x) - nc {
                    break x;
                }
            },
            Method::PlainRou { t, s, nc, u_max } => loop {
                let u = u_max * rng.random::<f64>();
                let v: f64 = rng.random();
                let x = u / v;
                if x <= 0.0 || !x.is_finite() {
                    continue;
                }
                if v.ln() <= t * x.ln() - s * (x + 1.0 / x) - nc {
                    break x;
                }
            },
            Method::PiecewiseHat {
                lambda,
                omega,
                x0,
                k0,
                k1,
                k2,
                areas,
            } => loop {
                let total = areas[0] + areas[1] + areas[2];
                let mut v = total * rng.random::<f64>();
                let (x, hx);
                if v <= areas[0] {
                    x = x0 * v / areas[0];
                    hx = k0;
                } else if v <= areas[0] + areas[1] {
                    v -= areas[0];
                    if lambda == 0.0 {
                        x = omega * (omega.exp() * v).exp();
                        hx = k1 / x;
                    } else {
                        x = (x0.powf(lambda) + lambda / k1 * v).powf(1.0 / lambda);
                        hx = k1 * x.powf(lambda - 1.0);
                    }
                } else {
                    v -= areas[0] + areas[1];
                    let a = x0.max(2.0 / omega);
                    x = -2.0 / omega * ((-omega / 2.0 * a).exp() - omega / (2.0 * k2) * v).ln();
                    hx = k2 * (-omega / 2.0 * x).exp();
                }
                if x <= 0.0 || !x.is_finite() {
                    continue;
                }
                let u = rng.random::<f64>() * hx;
                if u.ln() <= (lambda - 1.0) * x.ln() - omega / 2.0 * (x + 1.0 / x) {
                    break x;
                }
            },
        };
        if self.lambda < 0.0 {
            self.alpha / y
        } else {
            self.alpha * y
        }
    }
}

/// One draw from `GIG(λ, χ, ψ)`.
pub fn sample_gig<R: Rng + ?Sized>(lambda: f64, chi: f64, psi: f64, rng: &mut R) -> Result<f64> {
    Ok(Gig::new(lambda, chi, psi)?.sample(rng))
}
