use crate::expr::{Env, Var};
use crate::scalar::Real;

use super::{
    dc_gain, linearize, step_response_value, DynamicsError, DynamicsKind, FrechetStrategy, Node,
    NodeState, FALLBACK_HORIZON,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrechetOutcome<T> {
    pub value: T,
    /// Set when a DC-gain request hit a pole at the origin and the
    /// finite-horizon step response was used instead.
    pub fell_back: bool,
}

impl<T> FrechetOutcome<T> {
    fn exact(value: T) -> Self {
        Self {
            value,
            fell_back: false,
        }
    }
}

/// Fréchet-derivative approximation of a node at its current state and
/// input `u`.
pub fn frechet_value<T: Real>(node: &Node<T>, u: T) -> Result<FrechetOutcome<T>, DynamicsError> {
    let id = node.id();
    let dynamics = &node.spec.dynamics;
    let result = match (&node.spec.frechet, dynamics) {
        (FrechetStrategy::Constant(v), _) => Ok(FrechetOutcome::exact(*v)),
        (FrechetStrategy::StepResponse { horizon }, _) => {
            step_response_value(dynamics, *horizon, node.dt()).map(FrechetOutcome::exact)
        }
        (_, DynamicsKind::Identity) => Ok(FrechetOutcome::exact(T::one())),
        (_, DynamicsKind::Static(f)) => f
            .eval_with_derivative(&Env::input(u), &Var::Input)
            .map(|(_, d)| FrechetOutcome::exact(d))
            .map_err(Into::into),
        (FrechetStrategy::Linearize { .. }, DynamicsKind::Ode(ode)) => {
            let NodeState::Ode { x } = &node.state else {
                unreachable!("ODE dynamics without ODE state")
            };
            linearize(ode, x, u)
                .and_then(|lin| lin.dc_gain())
                .map(FrechetOutcome::exact)
        }
        (FrechetStrategy::DcGain | FrechetStrategy::Linearize { .. }, _) => match dc_gain(dynamics) {
            Err(DynamicsError::PoleAtOrigin { .. }) => {
                step_response_value(dynamics, T::lit(FALLBACK_HORIZON), node.dt()).map(|value| {
                    FrechetOutcome {
                        value,
                        fell_back: true,
                    }
                })
            }
            other => other.map(FrechetOutcome::exact),
        },
    };
    result.map_err(|e| e.at_node(id))
}

/// Caches Fréchet values that do not change during a run and re-evaluates
/// the ones that do (static functions every step, linearizations every
/// `stride` steps).
#[derive(Debug, Clone, Default)]
pub struct FrechetTracker<T> {
    cached: Option<T>,
    calls: usize,
}

impl<T: Real> FrechetTracker<T> {
    pub fn new() -> Self {
        Self {
            cached: None,
            calls: 0,
        }
    }

    pub fn value(&mut self, node: &Node<T>, u: T) -> Result<FrechetOutcome<T>, DynamicsError> {
        let call = self.calls;
        self.calls += 1;
        let refresh = match (&node.spec.frechet, &node.spec.dynamics) {
            (FrechetStrategy::Constant(_) | FrechetStrategy::StepResponse { .. }, _) => false,
            (_, DynamicsKind::Static(_)) => true,
            (FrechetStrategy::Linearize { stride }, DynamicsKind::Ode(_)) => call.is_multiple_of((*stride).max(1)),
            _ => false,
        };
        if let (Some(v), false) = (self.cached, refresh) {
            return Ok(FrechetOutcome::exact(v));
        }
        let outcome = frechet_value(node, u)?;
        self.cached = Some(outcome.value);
        Ok(outcome)
    }
}
