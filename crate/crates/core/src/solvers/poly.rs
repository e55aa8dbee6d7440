//! Small dense polynomial helpers. Coefficients are stored lowest degree
//! first.

use nalgebra::DMatrix;

pub(crate) fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|k| a.get(k).copied().unwrap_or(0.0) - b.get(k).copied().unwrap_or(0.0))
        .collect()
}

pub(crate) fn eval(a: &[f64], x: f64) -> f64 {
    a.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Real roots via eigenvalues of the companion matrix. Leading coefficients
/// that are negligible relative to the largest one are dropped first. Roots
/// with an imaginary part below `1e-8 · |re|` are treated as real.
pub(crate) fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let max = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if max == 0.0 {
        return Vec::new();
    }
    let mut deg = coeffs.len() - 1;
    while deg > 0 && coeffs[deg].abs() <= 1e-14 * max {
        deg -= 1;
    }
    if deg == 0 {
        return Vec::new();
    }
    let lead = coeffs[deg];
    let mut comp = DMatrix::<f64>::zeros(deg, deg);
    for k in 0..deg {
        comp[(0, k)] = -coeffs[deg - 1 - k] / lead;
    }
    for k in 1..deg {
        comp[(k, k - 1)] = 1.0;
    }
    let eig = comp.complex_eigenvalues();
    let mut out: Vec<f64> = eig
        .iter()
        .filter(|z| z.im.abs() <= 1e-8 * z.re.abs().max(1e-300) || z.im == 0.0)
        .map(|z| z.re)
        .collect();
    // Newton polish on the original polynomial.
    let deriv: Vec<f64> = (1..=deg).map(|k| coeffs[k] * k as f64).collect();
    for r in out.iter_mut() {
        for _ in 0..3 {
            let d = eval(&deriv, *r);
            if d == 0.0 {
                break;
            }
            let step = eval(&coeffs[..=deg], *r) / d;
            if !step.is_finite() {
                break;
            }
            *r -= step;
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}
