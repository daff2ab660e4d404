//! Fixed-step explicit integrators with zero-order hold on the input.

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    Euler,
    #[default]
    Rk4,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Euler => "euler",
            Scheme::Rk4 => "rk4",
        }
    }
}

fn axpy<T: Real>(x: &[T], k: &[T], h: T) -> Vec<T> {
    x.iter().zip(k).map(|(&xi, &ki)| xi + h * ki).collect()
}

/// Advances `x' = f(x)` by one step of size `dt`.
pub fn step<T, E, F>(scheme: Scheme, x: &[T], dt: T, mut f: F) -> Result<Vec<T>, E>
where
    T: Real,
    F: FnMut(&[T]) -> Result<Vec<T>, E>,
{
    match scheme {
        Scheme::Euler => Ok(axpy(x, &f(x)?, dt)),
        Scheme::Rk4 => {
            let half = dt / T::lit(2.0);
            let k1 = f(x)?;
            let k2 = f(&axpy(x, &k1, half))?;
            let k3 = f(&axpy(x, &k2, half))?;
            let k4 = f(&axpy(x, &k3, dt))?;
            let sixth = dt / T::lit(6.0);
            let two = T::lit(2.0);
            Ok(x
                .iter()
                .enumerate()
                .map(|(i, &xi)| xi + sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]))
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn decay(scheme: Scheme, dt: f64) -> f64 {
        let steps = (1.0 / dt).round() as usize;
        let mut x = vec![1.0];
        for _ in 0..steps {
            x = step(scheme, &x, dt, |x| Ok::<_, Infallible>(vec![-x[0]])).unwrap();
        }
        x[0]
    }

    #[test]
    fn euler_is_first_order() {
        let exact = (-1.0f64).exp();
        let ratio = (decay(Scheme::Euler, 0.01) - exact) / (decay(Scheme::Euler, 0.005) - exact);
        assert!((ratio - 2.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn rk4_is_fourth_order() {
        let exact = (-1.0f64).exp();
        let ratio = (decay(Scheme::Rk4, 0.1) - exact) / (decay(Scheme::Rk4, 0.05) - exact);
        assert!((ratio - 16.0).abs() < 1.0, "{ratio}");
    }
}
