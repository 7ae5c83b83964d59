//! Special functions needed by the hyperbolic density.

/// Natural log of the gamma function.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Natural log of the modified Bessel function of the second kind `K_ν(z)`,
/// `z > 0`.
///
/// Evaluated from `K_ν(z) = ∫₀^∞ exp(−z cosh t) cosh(νt) dt`. The integrand is
/// even and analytic in `t`, so the trapezoid rule converges geometrically;
/// the step is halved until successive sums agree to near machine precision.
/// Work happens in log space around the peak `t* = asinh(ν/z)` so large
/// orders and arguments do not overflow.
pub fn ln_bessel_k(nu: f64, z: f64) -> f64 {
    assert!(z > 0.0, "K_nu(z) requires z > 0, got {z}");
    let nu = nu.abs();
    let t_peak = (nu / z).asinh();
    let phi = |t: f64| -z * t.cosh() + nu * t;
    let peak = phi(t_peak);
    // cosh(νt) e^{-z cosh t} = e^{φ(t)} (1 + e^{-2νt}) / 2
    let f = |t: f64| (phi(t) - peak).exp() * 0.5 * (1.0 + (-2.0 * nu * t).exp());

    // φ is concave: walk right until the integrand is negligible.
    let width = 1.0 / (z * t_peak.cosh()).sqrt();
    let mut t_max = t_peak + width;
    while phi(t_max) - peak > -60.0 {
        t_max += width.max(0.05);
    }

    let mut h = (width / 2.0).min(0.5);
    let mut total = trapezoid_even(&f, h, t_max);
    for _ in 0..20 {
        h *= 0.5;
        let refined = trapezoid_even(&f, h, t_max);
        let converged = (refined - total).abs() <= 1e-15 * refined.abs();
        total = refined;
        if converged {
            break;
        }
    }
    peak + total.ln()
}

/// `K_ν(z)`; underflows to zero for large `z`, prefer [`ln_bessel_k`].
pub fn bessel_k(nu: f64, z: f64) -> f64 {
    ln_bessel_k(nu, z).exp()
}

fn trapezoid_even(f: &impl Fn(f64) -> f64, h: f64, t_max: f64) -> f64 {
    let n = (t_max / h).ceil() as usize;
    let mut s = 0.5 * f(0.0);
    for k in 1..=n {
        s += f(k as f64 * h);
    }
    s * h
}
