use crate::linalg::Matrix;
use crate::scalar::Real;

use super::{DynamicsError, OdeSystem, StateSpace};

/// Central-difference step for a component of magnitude `|v|`.
pub fn fd_step<T: Real>(v: T) -> T {
    let base = T::lit(1e-6);
    base.max(base * v.abs())
}

fn fault(detail: impl Into<String>) -> DynamicsError {
    DynamicsError::LinearizationFault {
        detail: detail.into(),
    }
}

fn finite_or_fault<T: Real>(values: Vec<T>, at: &str) -> Result<Vec<T>, DynamicsError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(values)
    } else {
        Err(fault(format!("non-finite value while perturbing {at}")))
    }
}

/// Jacobians of `f` and `h` at `(x0, u0)` by central differences.
pub fn linearize<T: Real>(ode: &OdeSystem<T>, x0: &[T], u0: T) -> Result<StateSpace<T>, DynamicsError> {
    let n = ode.states();
    if x0.len() != n {
        return Err(fault(format!("expected {n} state values, got {}", x0.len())));
    }
    let eval = |x: &[T], u: T, at: &str| -> Result<(Vec<T>, T), DynamicsError> {
        let f = ode.rhs(x, u).map_err(|e| fault(format!("{e} while perturbing {at}")))?;
        let h = ode.output(x, u).map_err(|e| fault(format!("{e} while perturbing {at}")))?;
        let f = finite_or_fault(f, at)?;
        let h = finite_or_fault(vec![h], at)?[0];
        Ok((f, h))
    };
    let two = T::lit(2.0);

    let mut a = Matrix::zeros(n, n);
    let mut c = vec![T::zero(); n];
    let mut x = x0.to_vec();
    for j in 0..n {
        let h = fd_step(x0[j]);
        let label = format!("x{}", j + 1);
        x[j] = x0[j] + h;
        let (fp, hp) = eval(&x, u0, &label)?;
        x[j] = x0[j] - h;
        let (fm, hm) = eval(&x, u0, &label)?;
        x[j] = x0[j];
        for i in 0..n {
            a[(i, j)] = (fp[i] - fm[i]) / (two * h);
        }
        c[j] = (hp - hm) / (two * h);
    }

    let h = fd_step(u0);
    let (fp, hp) = eval(x0, u0 + h, "u")?;
    let (fm, hm) = eval(x0, u0 - h, "u")?;
    let b = (0..n).map(|i| (fp[i] - fm[i]) / (two * h)).collect();
    let d = (hp - hm) / (two * h);
    StateSpace::new(a, b, c, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn plant() -> OdeSystem<f64> {
        OdeSystem::new(
            vec![
                parse("-x1 + 0.5*sin(x1) + u").unwrap(),
                parse("-2*x2 - x2^3 + x1").unwrap(),
                parse("-3*x3 - 0.2*tan(x3) + x2").unwrap(),
            ],
            parse("x3").unwrap(),
            vec![0.0; 3],
        )
        .unwrap()
    }

    #[test]
    fn nonlinear_plant_at_origin() {
        let lin = linearize(&plant(), &[0.0; 3], 0.0).unwrap();
        // hand differentiation: -1 + 0.5 cos 0, -2 - 3 x2^2, -3 - 0.2 sec^2 0
        let expected = [[-0.5, 0.0, 0.0], [1.0, -2.0, 0.0], [0.0, 1.0, -3.2]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((lin.a[(i, j)] - expected[i][j]).abs() < 1e-8, "A[{i}][{j}]");
            }
        }
        assert_eq!(lin.b.iter().map(|v| (v * 1e6).round() / 1e6).collect::<Vec<_>>(), vec![1.0, 0.0, 0.0]);
        assert!((lin.c[2] - 1.0).abs() < 1e-8 && lin.c[0].abs() < 1e-12 && lin.c[1].abs() < 1e-12);
        assert!(lin.d.abs() < 1e-12);
        // cascade of first-order gains (1/0.5)(1/2)(1/3.2)
        assert!((lin.dc_gain().unwrap() - 0.3125).abs() < 1e-7);
    }

    #[test]
    fn away_from_origin_matches_analytic_jacobian() {
        let x = [0.4, -0.3, 0.2];
        let lin = linearize(&plant(), &x, 0.7).unwrap();
        let sec2 = 1.0 / (0.2f64.cos().powi(2));
        assert!((lin.a[(0, 0)] - (-1.0 + 0.5 * 0.4f64.cos())).abs() < 1e-8);
        assert!((lin.a[(1, 1)] - (-2.0 - 3.0 * 0.09)).abs() < 1e-8);
        assert!((lin.a[(2, 2)] - (-3.0 - 0.2 * sec2)).abs() < 1e-8);
    }

    #[test]
    fn linear_system_is_recovered() {
        let ode = OdeSystem::<f64>::new(
            vec![parse("x2").unwrap(), parse("-3*x1 - 0.5*x2 + 2*u").unwrap()],
            parse("x1 - u").unwrap(),
            vec![0.0, 0.0],
        )
        .unwrap();
        let lin = linearize(&ode, &[1.3, -0.7], 0.2).unwrap();
        let expected_a = [[0.0, 1.0], [-3.0, -0.5]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((lin.a[(i, j)] - expected_a[i][j]).abs() < 1e-6);
            }
        }
        assert!((lin.b[0]).abs() < 1e-6 && (lin.b[1] - 2.0).abs() < 1e-6);
        assert!((lin.c[0] - 1.0).abs() < 1e-6 && lin.c[1].abs() < 1e-6);
        assert!((lin.d + 1.0).abs() < 1e-6);
    }

    #[test]
    fn singular_point_is_a_fault() {
        let ode = OdeSystem::new(vec![parse("1/x1").unwrap()], parse("x1").unwrap(), vec![0.0]).unwrap();
        assert!(matches!(
            linearize(&ode, &[1e-6], 0.0),
            Err(DynamicsError::LinearizationFault { .. })
        ));
    }
}
