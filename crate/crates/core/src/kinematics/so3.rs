//! Rotation-vector (axis-angle) helpers.
//!
//! Joint velocities are time derivatives of rotation vectors, so the body
//! angular velocity of a joint is `right_jacobian(theta) * theta_dot`.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Rotation3, Vector3};

const SERIES_THRESHOLD: f64 = 0.1;

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential map from a rotation vector to a rotation matrix.
pub fn exp(r: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::new(*r).into_inner()
}

/// `(1 - cos a) / a^2` and `(a - sin a) / a^3`.
fn coefficients(a: f64) -> (f64, f64) {
    if a < SERIES_THRESHOLD {
        let a2 = a * a;
        let c1 = 0.5 - a2 / 24.0 + a2 * a2 / 720.0 - a2 * a2 * a2 / 40320.0;
        let c2 = 1.0 / 6.0 - a2 / 120.0 + a2 * a2 / 5040.0 - a2 * a2 * a2 / 362_880.0;
        (c1, c2)
    } else {
        let s = (0.5 * a).sin();
        (2.0 * s * s / (a * a), (a - a.sin()) / (a * a * a))
    }
}

/// Derivatives of the coefficients divided by `a`: `c1'(a)/a`, `c2'(a)/a`.
fn coefficient_slopes(a: f64) -> (f64, f64) {
    if a < SERIES_THRESHOLD {
        let a2 = a * a;
        let d1 = -1.0 / 12.0 + a2 / 180.0 - a2 * a2 / 6720.0 + a2 * a2 * a2 / 453_600.0;
        let d2 = -1.0 / 60.0 + a2 / 1260.0 - a2 * a2 / 60480.0 + a2 * a2 * a2 / 4_989_600.0;
        (d1, d2)
    } else {
        let s = (0.5 * a).sin();
        let one_minus_cos = 2.0 * s * s;
        let a4 = a * a * a * a;
        let d1 = (a * a.sin() - 2.0 * one_minus_cos) / a4;
        let d2 = (one_minus_cos * a - 3.0 * (a - a.sin())) / (a4 * a);
        (d1, d2)
    }
}

/// Right Jacobian of the exponential map: `R(r)^T dR(r)/dt = hat(J_r(r) r_dot)`.
pub fn right_jacobian(r: &Vector3<f64>) -> Matrix3<f64> {
    let (c1, c2) = coefficients(r.norm());
    let k = hat(r);
    Matrix3::identity() - k * c1 + k * k * c2
}

/// Time derivative of the right Jacobian along `r_dot`.
pub fn right_jacobian_dot(r: &Vector3<f64>, r_dot: &Vector3<f64>) -> Matrix3<f64> {
    let a = r.norm();
    let (c1, c2) = coefficients(a);
    let (d1, d2) = coefficient_slopes(a);
    let rate = r.dot(r_dot);
    let k = hat(r);
    let kd = hat(r_dot);
    -k * (d1 * rate) - kd * c1 + k * k * (d2 * rate) + (kd * k + k * kd) * c2
}

/// Map a rotation vector onto the equivalent one with magnitude in `[0, pi]`.
pub fn canonicalize(r: &Vector3<f64>) -> Vector3<f64> {
    let mut out = *r;
    let mut a = out.norm();
    while a > PI {
        out *= 1.0 - TAU / a;
        a = out.norm();
    }
    out
}

/// Among rotation vectors equivalent to `r`, pick the one closest to `reference`.
pub fn unwrap_near(r: &Vector3<f64>, reference: &Vector3<f64>) -> Vector3<f64> {
    let a = r.norm();
    if a < 1e-12 {
        return *r;
    }
    let axis = r / a;
    let mut best = *r;
    let mut best_dist = (r - reference).norm();
    for k in -3i32..=3 {
        if k == 0 {
            continue;
        }
        let candidate = axis * (a + TAU * f64::from(k));
        let dist = (candidate - reference).norm();
        if dist < best_dist {
            best = candidate;
            best_dist = dist;
        }
    }
    best
}
