use crate::expr::{Env, Expr, ExprError};
use crate::scalar::Real;

/// Command signal shared by the reference model and the controlled graph.
#[derive(Debug, Clone, PartialEq)]
pub enum SignalSpec<T> {
    Step { amplitude: T },
    /// `+A` during the first half of each period, `-A` during the second.
    Square { amplitude: T, period: T },
    /// Ramps from `-A` to `+A` over each period.
    Sawtooth { amplitude: T, period: T },
    /// `A sin(2π f t)`, frequency in Hz.
    Sine { amplitude: T, frequency: T },
    /// Arbitrary expression in `t`.
    Expr(Expr),
}

impl<T: Real> Default for SignalSpec<T> {
    fn default() -> Self {
        SignalSpec::Square {
            amplitude: T::one(),
            period: T::lit(20.0),
        }
    }
}

impl<T: Real> SignalSpec<T> {
    pub fn kind_name(&self) -> &'static str {
        match self {
            SignalSpec::Step { .. } => "step",
            SignalSpec::Square { .. } => "square",
            SignalSpec::Sawtooth { .. } => "sawtooth",
            SignalSpec::Sine { .. } => "sine",
            SignalSpec::Expr(_) => "expr",
        }
    }
}

fn phase<T: Real>(t: T, period: T) -> T {
    let r = t % period;
    if r < T::zero() {
        r + period
    } else {
        r
    }
}

/// Value of the signal at time `t`.
pub fn signal<T: Real>(spec: &SignalSpec<T>, t: T) -> Result<T, ExprError> {
    let two = T::lit(2.0);
    Ok(match spec {
        SignalSpec::Step { amplitude } => *amplitude,
        SignalSpec::Square { amplitude, period } => {
            if phase(t, *period) < *period / two {
                *amplitude
            } else {
                -*amplitude
            }
        }
        SignalSpec::Sawtooth { amplitude, period } => {
            *amplitude * (two * phase(t, *period) / *period - T::one())
        }
        SignalSpec::Sine {
            amplitude,
            frequency,
        } => *amplitude * (two * T::PI() * *frequency * t).sin(),
        SignalSpec::Expr(e) => e.eval(&Env::time(t))?,
    })
}
