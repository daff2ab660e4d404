//! Single-input single-output LTI systems: transfer functions, state-space
//! realizations and conversions between them.

use crate::linalg::{Lu, Matrix};
use crate::scalar::Real;

use super::DynamicsError;

/// `num(s) / den(s)`, coefficients in descending powers of `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction<T> {
    pub num: Vec<T>,
    pub den: Vec<T>,
}

/// Evaluates a polynomial (descending coefficients) with Horner's rule.
pub fn polyval<T: Real>(coeffs: &[T], s: T) -> T {
    coeffs.iter().fold(T::zero(), |acc, &c| acc * s + c)
}

fn strip_leading_zeros<T: Real>(coeffs: &[T]) -> &[T] {
    let first = coeffs.iter().position(|c| *c != T::zero()).unwrap_or(coeffs.len());
    &coeffs[first..]
}

impl<T: Real> TransferFunction<T> {
    pub fn new(num: Vec<T>, den: Vec<T>) -> Result<Self, DynamicsError> {
        if den.is_empty() {
            return Err(DynamicsError::EmptyDenominator);
        }
        if den[0] == T::zero() {
            return Err(DynamicsError::ZeroLeadingCoefficient);
        }
        if num.is_empty() {
            return Err(DynamicsError::EmptyNumerator);
        }
        Ok(Self { num, den })
    }

    /// Degree of the numerator after dropping leading zeros. `None` for the
    /// zero polynomial.
    pub fn num_degree(&self) -> Option<usize> {
        let n = strip_leading_zeros(&self.num).len();
        n.checked_sub(1)
    }

    pub fn den_degree(&self) -> usize {
        self.den.len() - 1
    }

    pub fn is_proper(&self) -> bool {
        self.num_degree().is_none_or(|d| d <= self.den_degree())
    }

    pub fn is_strictly_proper(&self) -> bool {
        self.num_degree().is_none_or(|d| d < self.den_degree())
    }

    /// `G(0) = num(0) / den(0)`.
    pub fn dc_gain(&self) -> Result<T, DynamicsError> {
        let den0 = *self.den.last().expect("validated non-empty");
        if den0 == T::zero() {
            return Err(DynamicsError::PoleAtOrigin { node: None });
        }
        Ok(*self.num.last().expect("validated non-empty") / den0)
    }

    /// Controllable canonical realization.
    pub fn to_state_space(&self) -> Result<StateSpace<T>, DynamicsError> {
        tf_to_ss(&self.num, &self.den)
    }
}

/// SISO state space `x' = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace<T> {
    pub a: Matrix<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
    pub d: T,
}

/// Realizes `num/den` in controllable canonical form: `A` is the companion
/// matrix of the monic denominator with the negated coefficients in its last
/// row, `B` is the last unit vector.
pub fn tf_to_ss<T: Real>(num: &[T], den: &[T]) -> Result<StateSpace<T>, DynamicsError> {
    let tf = TransferFunction::new(num.to_vec(), den.to_vec())?;
    if !tf.is_proper() {
        return Err(DynamicsError::Improper {
            num_degree: tf.num_degree().unwrap_or(0),
            den_degree: tf.den_degree(),
        });
    }
    let n = tf.den_degree();
    let lead = den[0];
    let a_coef: Vec<T> = den.iter().map(|&c| c / lead).collect();
    let num = strip_leading_zeros(num);
    // pad to n + 1 coefficients
    let mut b_coef = vec![T::zero(); n + 1 - num.len()];
    b_coef.extend(num.iter().map(|&c| c / lead));

    let d = b_coef[0];
    let mut a = Matrix::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        a[(i, i + 1)] = T::one();
    }
    for j in 0..n {
        // last row: [-a_n, ..., -a_1]
        a[(n - 1, j)] = -a_coef[n - j];
    }
    let mut b = vec![T::zero(); n];
    if n > 0 {
        b[n - 1] = T::one();
    }
    let c = (0..n).map(|j| b_coef[n - j] - a_coef[n - j] * d).collect();
    Ok(StateSpace { a, b, c, d })
}

impl<T: Real> StateSpace<T> {
    pub fn new(a: Matrix<T>, b: Vec<T>, c: Vec<T>, d: T) -> Result<Self, DynamicsError> {
        let n = a.nrows();
        if !a.is_square() || b.len() != n || c.len() != n {
            return Err(DynamicsError::DimensionMismatch {
                detail: format!(
                    "A is {}x{}, B has {} rows, C has {} columns",
                    a.nrows(),
                    a.ncols(),
                    b.len(),
                    c.len()
                ),
            });
        }
        Ok(Self { a, b, c, d })
    }

    pub fn order(&self) -> usize {
        self.b.len()
    }

    pub fn derivative(&self, x: &[T], u: T) -> Vec<T> {
        self.a
            .mul_vec(x)
            .into_iter()
            .zip(&self.b)
            .map(|(ax, &b)| ax + b * u)
            .collect()
    }

    pub fn output(&self, x: &[T], u: T) -> T {
        self.c.iter().zip(x).fold(self.d * u, |acc, (&c, &x)| acc + c * x)
    }

    /// `C (-A)^{-1} B + D`.
    pub fn dc_gain(&self) -> Result<T, DynamicsError> {
        let n = self.order();
        if n == 0 {
            return Ok(self.d);
        }
        let neg_a = self.a.scaled(-T::one());
        let lu = Lu::factor(&neg_a);
        let scale = neg_a.max_abs().max(T::one());
        if lu.min_pivot() <= T::epsilon() * T::lit(n as f64) * scale {
            return Err(DynamicsError::PoleAtOrigin { node: None });
        }
        let z = lu
            .solve(&self.b)
            .ok_or(DynamicsError::PoleAtOrigin { node: None })?;
        Ok(self.output(&z, T::zero()) + self.d)
    }

    /// Expands `C (sI - A)^{-1} B + D` into a transfer function via the
    /// Faddeev-LeVerrier recursion. The denominator is monic of degree `n`.
    pub fn to_transfer_function(&self) -> TransferFunction<T> {
        let n = self.order();
        let ident = Matrix::identity(n);
        // den[k] is the coefficient of s^(n-k)
        let mut den = vec![T::zero(); n + 1];
        den[0] = T::one();
        // num_strict[k - 1] is the coefficient of s^(n-k) in C adj(sI - A) B
        let mut num_strict = vec![T::zero(); n];
        let mut m = Matrix::zeros(n, n);
        for k in 1..=n {
            m = self.a.mul(&m).add(&ident.scaled(den[k - 1]));
            let mb = m.mul_vec(&self.b);
            num_strict[k - 1] = self.c.iter().zip(&mb).fold(T::zero(), |acc, (&c, &v)| acc + c * v);
            let am = self.a.mul(&m);
            den[k] = -am.trace() / T::lit(k as f64);
        }
        let mut num: Vec<T> = den.iter().map(|&c| c * self.d).collect();
        for (k, v) in num_strict.into_iter().enumerate() {
            num[k + 1] = num[k + 1] + v;
        }
        TransferFunction { num, den }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn third_order_plant_realization() {
        let ss = tf_to_ss(&[1.0], &[1.0, 6.0, 11.0, 6.0]).unwrap();
        assert_eq!(
            ss.a.to_rows(),
            vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![-6.0, -11.0, -6.0]]
        );
        assert_eq!(ss.b, vec![0.0, 0.0, 1.0]);
        assert_eq!(ss.c, vec![1.0, 0.0, 0.0]);
        assert_eq!(ss.d, 0.0);
    }

    #[test]
    fn unit_gain_has_no_state() {
        let ss = tf_to_ss(&[1.0], &[1.0]).unwrap();
        assert_eq!(ss.order(), 0);
        assert_eq!(ss.d, 1.0);
        assert_eq!(ss.dc_gain().unwrap(), 1.0);
    }

    #[test]
    fn reference_model_round_trip() {
        let num = [1.0f64, 1200.0, 900.0];
        let den = [1.0f64, 100.0, 600.0, 1500.0, 1800.0, 900.0];
        let ss = tf_to_ss(&num, &den).unwrap();
        assert_eq!(ss.order(), 5);
        let tf = ss.to_transfer_function();
        for (got, want) in tf.den.iter().zip(&den) {
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0));
        }
        assert_eq!(tf.num[..3], [0.0, 0.0, 0.0]);
        for (got, want) in tf.num[3..].iter().zip(&num) {
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0));
        }
    }

    #[test]
    fn improper_is_rejected() {
        assert!(matches!(
            tf_to_ss(&[1.0, 0.0], &[1.0]),
            Err(DynamicsError::Improper { num_degree: 1, den_degree: 0 })
        ));
        // leading zeros do not count toward the degree
        assert!(tf_to_ss(&[0.0, 0.0, 2.0], &[1.0, 3.0]).is_ok());
    }

    #[test]
    fn biproper_feedthrough() {
        // (2s + 3) / (s + 1) = 2 + 1 / (s + 1)
        let ss = tf_to_ss(&[2.0, 3.0], &[1.0, 1.0]).unwrap();
        assert_eq!(ss.d, 2.0);
        assert_eq!(ss.c, vec![1.0]);
        assert_relative_eq!(ss.dc_gain().unwrap(), 3.0, max_relative = 1e-15);
    }

    #[test]
    fn dc_gains() {
        let g1 = TransferFunction::<f64>::new(vec![1.0], vec![1.0, 6.0, 11.0, 6.0]).unwrap();
        assert!((g1.dc_gain().unwrap() - 1.0 / 6.0).abs() < 1e-15);
        let g2 = TransferFunction::<f64>::new(vec![1.0], vec![1.0, 6.0, 11.0, -6.0]).unwrap();
        assert!((g2.dc_gain().unwrap() + 1.0 / 6.0).abs() < 1e-15);
        let integrator = TransferFunction::new(vec![1.0], vec![1.0, 0.0]).unwrap();
        assert!(matches!(integrator.dc_gain(), Err(DynamicsError::PoleAtOrigin { .. })));
        let ss = integrator.to_state_space().unwrap();
        assert!(matches!(ss.dc_gain(), Err(DynamicsError::PoleAtOrigin { .. })));
        let g1_ss = g1.to_state_space().unwrap();
        assert!((g1_ss.dc_gain().unwrap() - 1.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn single_precision_realization() {
        let ss = tf_to_ss(&[1.0_f32], &[2.0, 4.0]).unwrap();
        assert_eq!(ss.a.to_rows(), vec![vec![-2.0_f32]]);
        assert_eq!(ss.c, vec![0.5]);
        assert_eq!(ss.dc_gain().unwrap(), 0.25);
    }

    // Random stable polynomials as products of (s + p) factors.
    fn stable_den() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.2f64..5.0, 1..=6).prop_map(|roots| {
            roots.iter().fold(vec![1.0], |poly, &p| {
                let mut next = vec![0.0; poly.len() + 1];
                for (i, &c) in poly.iter().enumerate() {
                    next[i] += c;
                    next[i + 1] += c * p;
                }
                next
            })
        })
    }

    proptest! {
        #[test]
        fn realization_reproduces_coefficients(
            den in stable_den(),
            num_raw in prop::collection::vec(-3.0f64..3.0, 1..=7),
            lead in 0.5f64..3.0,
        ) {
            let n = den.len() - 1;
            let num: Vec<f64> = num_raw.into_iter().take(n + 1).collect();
            let den: Vec<f64> = den.iter().map(|c| c * lead).collect();
            let ss = tf_to_ss(&num, &den).unwrap();
            let tf = ss.to_transfer_function();
            let mut padded = vec![0.0; n + 1 - num.len()];
            padded.extend(num.iter().map(|c| c / lead));
            for (got, want) in tf.den.iter().zip(den.iter().map(|c| c / lead)) {
                prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0));
            }
            for (got, want) in tf.num.iter().zip(&padded) {
                prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0));
            }
        }
    }
}
