//! Antipodal von Mises-Fisher orientation kernels on unit quaternions.
//!
//! The kernel treats `q` and `-q` as the same rotation:
//!
//! ```text
//! theta(q | mu, sigma) = C4(sigma) * (exp(sigma mu.q) + exp(-sigma mu.q)) / 2
//! ```
//!
//! `C4` is the normalizer of the plain von Mises-Fisher density on the unit
//! 3-sphere, so `theta` integrates to 1 over the sphere and hence once over
//! the rotation group through the double cover.

use nalgebra::{Quaternion, UnitQuaternion, Vector3, Vector4};
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::geometry::quat_dot;
use crate::rng::{uniform_direction, uniform_quaternion};

/// Modified Bessel function of the first kind, order 1, for `x >= 0`.
///
/// All-positive power series below the switch point, asymptotic expansion
/// above it; both agree to full precision near the switch.
pub fn bessel_i1(x: f64) -> f64 {
    if x <= 100.0 {
        bessel_i1_series(x)
    } else {
        log_bessel_i1_asymptotic(x).exp()
    }
}

/// Natural log of [`bessel_i1`], stable for large arguments.
pub fn log_bessel_i1(x: f64) -> f64 {
    if x <= 100.0 {
        bessel_i1_series(x).ln()
    } else {
        log_bessel_i1_asymptotic(x)
    }
}

fn bessel_i1_series(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for m in 1..500 {
        term *= q / (m as f64 * (m as f64 + 1.0));
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    0.5 * x * sum
}

fn log_bessel_i1_asymptotic(x: f64) -> f64 {
    // I1(x) ~ e^x / sqrt(2 pi x) * sum_k (-1)^k a_k / x^k,
    // a_k = prod_{j=1..k} (4 - (2j-1)^2) / (8k) * a_{k-1}.
    let mut a = 1.0;
    let mut sum = 1.0;
    let mut sign = 1.0;
    for k in 1..16 {
        let j = (2 * k - 1) as f64;
        a *= (4.0 - j * j) / (8.0 * k as f64);
        sign = -sign;
        let term = sign * a / x.powi(k as i32);
        sum += term;
        if term.abs() < 1e-17 {
            break;
        }
    }
    x - 0.5 * (2.0 * std::f64::consts::PI * x).ln() + sum.ln()
}

/// Log-normalizer `ln C4(sigma)` of the von Mises-Fisher density on the unit
/// 3-sphere: `C4 = sigma / ((2 pi)^2 I1(sigma))`. As `sigma -> 0` this tends
/// to the uniform density `1 / (2 pi^2)`.
pub fn log_c4(sigma: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    sigma.ln() - 2.0 * two_pi.ln() - log_bessel_i1(sigma)
}

pub fn c4(sigma: f64) -> f64 {
    log_c4(sigma).exp()
}

/// `ln cosh(y)` without overflow for large `y`.
fn log_cosh(y: f64) -> f64 {
    let a = y.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Log-density of the antipodal pair kernel. Invariant under `q -> -q`.
pub fn log_vmf_pair(q: &UnitQuaternion<f64>, mu: &UnitQuaternion<f64>, sigma: f64) -> f64 {
    log_c4(sigma) + log_cosh(sigma * quat_dot(q, mu))
}

/// Density of the antipodal pair kernel.
pub fn eval_vmf_pair(
    q: &UnitQuaternion<f64>,
    mu: &UnitQuaternion<f64>,
    sigma: f64,
) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!(
            "orientation concentration must be positive and finite, got {sigma}"
        )));
    }
    Ok(log_vmf_pair(q, mu, sigma).exp())
}

fn as_vec4(q: &UnitQuaternion<f64>) -> Vector4<f64> {
    let c = q.coords;
    Vector4::new(c.w, c.x, c.y, c.z)
}

fn from_vec4(v: Vector4<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(v.x, v.y, v.z, v.w))
}

/// Draws from the plain von Mises-Fisher density on the unit 3-sphere
/// (rejection construction; exact). `kappa = 0` gives the uniform law.
pub fn sample_vmf<R: Rng + ?Sized>(
    rng: &mut R,
    mu: &UnitQuaternion<f64>,
    kappa: f64,
) -> UnitQuaternion<f64> {
    if kappa < 1e-12 {
        return uniform_quaternion(rng);
    }
    // Wood's construction on S^3: m = 4, cosine marginal via Beta(1.5, 1.5).
    let b = 3.0 / (2.0 * kappa + (4.0 * kappa * kappa + 9.0).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    // ln(1 - x0^2) = ln(4b / (1+b)^2), cancellation-free.
    let log_1m_x02 = (4.0 * b / ((1.0 + b) * (1.0 + b))).ln();
    let c = kappa * x0 + 3.0 * log_1m_x02;
    let beta = Beta::new(1.5, 1.5).expect("valid Beta parameters");

    let w = loop {
        let z: f64 = beta.sample(rng);
        let u: f64 = 1.0 - rng.random::<f64>();
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        if kappa * w + 3.0 * (1.0 - x0 * w).ln() - c >= u.ln() {
            break w;
        }
    };

    let v: Vector3<f64> = uniform_direction(rng);
    let s = (1.0 - w * w).max(0.0).sqrt();
    let y = Vector4::new(w, s * v.x, s * v.y, s * v.z);

    // Householder reflection taking e1 to mu.
    let u = Vector4::new(1.0, 0.0, 0.0, 0.0) - as_vec4(mu);
    let uu = u.norm_squared();
    let reflected = if uu < 1e-24 {
        y
    } else {
        y - u * (2.0 * u.dot(&y) / uu)
    };
    from_vec4(reflected)
}

/// Draws from the antipodal pair kernel: a von Mises-Fisher draw with the
/// hemisphere chosen uniformly.
pub fn sample_vmf_pair<R: Rng + ?Sized>(
    rng: &mut R,
    mu: &UnitQuaternion<f64>,
    kappa: f64,
) -> UnitQuaternion<f64> {
    let q = sample_vmf(rng, mu, kappa);
    if rng.random::<bool>() {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}
