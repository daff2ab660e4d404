//! Polynomial roots as eigenvalues of the companion matrix.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::scalar::Real;

fn eval(coeffs: &[f64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &c in coeffs {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

/// Roots of `coeffs[0] s^n + ... + coeffs[n]`, sorted by real part and then
/// imaginary part. Leading zeros are ignored. Each eigenvalue is polished
/// with a few Newton steps on the polynomial.
pub fn roots<T: Real>(coeffs: &[T]) -> Vec<Complex64> {
    let c: Vec<f64> = coeffs
        .iter()
        .map(|x| x.as_f64())
        .skip_while(|x| *x == 0.0)
        .collect();
    let n = c.len().saturating_sub(1);
    if n == 0 {
        return Vec::new();
    }
    let mut companion = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        companion[(0, j)] = -c[j + 1] / c[0];
    }
    for i in 1..n {
        companion[(i, i - 1)] = 1.0;
    }
    let mut out: Vec<Complex64> = companion
        .complex_eigenvalues()
        .iter()
        .map(|&z| {
            let mut z = z;
            for _ in 0..3 {
                let (p, dp) = eval(&c, z);
                if dp.norm() == 0.0 {
                    break;
                }
                let next = z - p / dp;
                if !next.re.is_finite() || !next.im.is_finite() || eval(&c, next).0.norm() > p.norm() {
                    break;
                }
                z = next;
            }
            z
        })
        .collect();
    out.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    out
}

/// `a`, `a ± jb` style rendering used by the CLI.
pub fn format_root(z: Complex64) -> String {
    let im = if z.im.abs() < 1e-12 { 0.0 } else { z.im };
    if im == 0.0 {
        format!("{:.6}", z.re)
    } else if im > 0.0 {
        format!("{:.6} + j{:.6}", z.re, im)
    } else {
        format!("{:.6} - j{:.6}", z.re, -im)
    }
}

/// Largest relative residual `|p(z)| / Σ |c_k| |z|^(n-k)` over the roots.
pub fn max_residual<T: Real>(coeffs: &[T], roots: &[Complex64]) -> f64 {
    let c: Vec<f64> = coeffs
        .iter()
        .map(|x| x.as_f64())
        .skip_while(|x| *x == 0.0)
        .collect();
    roots
        .iter()
        .map(|&z| {
            let scale = c.iter().fold(0.0, |acc, &ck| acc * z.norm() + ck.abs());
            eval(&c, z).0.norm() / scale
        })
        .fold(0.0, f64::max)
}
