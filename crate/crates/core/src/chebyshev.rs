//! Chebyshev interpolation on [-1, 1] and scalar Clenshaw evaluation.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

/// Interpolation coefficients of `f` at the `degree + 1` Chebyshev nodes of
/// the first kind. The returned series is `c[0] + sum_j c[j] T_j(x)`.
pub fn interpolate<F: Fn(f64) -> f64>(f: F, degree: usize) -> Vec<f64> {
    let n = degree + 1;
    let nf = n as f64;
    let samples: Vec<f64> = (0..n)
        .map(|k| f((PI * (k as f64 + 0.5) / nf).cos()))
        .collect();
    let mut coeffs: Vec<f64> = (0..n)
        .map(|j| {
            let acc: f64 = samples
                .iter()
                .enumerate()
                .map(|(k, y)| y * (j as f64 * PI * (k as f64 + 0.5) / nf).cos())
                .sum();
            2.0 * acc / nf
        })
        .collect();
    coeffs[0] *= 0.5;
    coeffs
}

/// Evaluates a Chebyshev series at `x` with the Clenshaw recurrence.
pub fn clenshaw(coeffs: &[f64], x: f64) -> f64 {
    match coeffs.len() {
        0 => 0.0,
        1 => coeffs[0],
        _ => {
            let two_x = 2.0 * x;
            let mut b1 = 0.0;
            let mut b2 = 0.0;
            for &c in coeffs[1..].iter().rev() {
                let b0 = two_x * b1 - b2 + c;
                b2 = b1;
                b1 = b0;
            }
            x * b1 - b2 + coeffs[0]
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Interpolant of `sign` of the given degree. Even-index coefficients are
/// zeroed so the series is exactly odd.
pub fn sign_coefficients(degree: usize) -> Arc<[f64]> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<[f64]>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("sign coefficient cache poisoned");
    guard
        .entry(degree)
        .or_insert_with(|| {
            let mut c = interpolate(sign, degree);
            for (j, v) in c.iter_mut().enumerate() {
                if j % 2 == 0 {
                    *v = 0.0;
                }
            }
            c.into()
        })
        .clone()
}
