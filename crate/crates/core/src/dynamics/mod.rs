//! Per-node dynamics and their Fréchet-derivative approximations.
//!
//! A node maps its input signal `u` to its output `y`. Memoryless nodes
//! (identity, static functions, the backward-difference derivative) are
//! direct feedthrough; state-carrying nodes emit an output determined by
//! their state, plus `D u` for biproper linear systems.

mod frechet;
pub mod integrate;
mod linearize;
pub mod lti;

use std::collections::VecDeque;

use thiserror::Error;

use crate::expr::{Env, Expr, ExprError, Var};
use crate::graph::NodeId;
use crate::scalar::Real;

pub use frechet::{frechet_value, FrechetOutcome, FrechetTracker};
pub use integrate::Scheme;
pub use linearize::{fd_step, linearize};
pub use lti::{tf_to_ss, StateSpace, TransferFunction};

/// Threshold past which a signal counts as diverged.
pub const DEFAULT_BLOWUP: f64 = 1e12;

/// Horizon used when a DC-gain request hits a pole at the origin.
pub const FALLBACK_HORIZON: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("empty denominator")]
    EmptyDenominator,
    #[error("empty numerator")]
    EmptyNumerator,
    #[error("denominator leading coefficient is zero")]
    ZeroLeadingCoefficient,
    #[error("improper transfer function (numerator degree {num_degree} > denominator degree {den_degree})")]
    Improper { num_degree: usize, den_degree: usize },
    #[error("dimension mismatch: {detail}")]
    DimensionMismatch { detail: String },
    #[error("pole at the origin{}", node_suffix(*node))]
    PoleAtOrigin { node: Option<NodeId> },
    #[error("response diverged at t = {t}{} (|y| = {value:e})", node_suffix(*node))]
    Diverged { node: Option<NodeId>, t: f64, value: f64 },
    #[error("delay {tau} s is shorter than one step of {dt} s")]
    DelayTooShort { tau: f64, dt: f64 },
    #[error("{what} is not applicable to {kind} dynamics")]
    NotApplicable { what: &'static str, kind: &'static str },
    #[error("expression evaluation failed{}: {source}", node_suffix(*node))]
    Expression {
        node: Option<NodeId>,
        #[source]
        source: ExprError,
    },
    #[error("non-finite value at t = {t}{}", node_suffix(*node))]
    NonFinite { node: Option<NodeId>, t: f64 },
    #[error("linearization failed: {detail}")]
    LinearizationFault { detail: String },
}

fn node_suffix(node: Option<NodeId>) -> String {
    node.map(|n| format!(" in node {n}")).unwrap_or_default()
}

impl DynamicsError {
    /// Attaches a node id to errors that carry one.
    pub fn at_node(self, id: NodeId) -> Self {
        match self {
            DynamicsError::PoleAtOrigin { .. } => DynamicsError::PoleAtOrigin { node: Some(id) },
            DynamicsError::Diverged { t, value, .. } => DynamicsError::Diverged {
                node: Some(id),
                t,
                value,
            },
            DynamicsError::Expression { source, .. } => DynamicsError::Expression {
                node: Some(id),
                source,
            },
            DynamicsError::NonFinite { t, .. } => DynamicsError::NonFinite { node: Some(id), t },
            other => other,
        }
    }
}

impl From<ExprError> for DynamicsError {
    fn from(source: ExprError) -> Self {
        DynamicsError::Expression { node: None, source }
    }
}

/// `x' = f(x, u)`, `y = h(x, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeSystem<T> {
    pub f: Vec<Expr>,
    pub h: Expr,
    pub x0: Vec<T>,
}

impl<T: Real> OdeSystem<T> {
    pub fn new(f: Vec<Expr>, h: Expr, x0: Vec<T>) -> Result<Self, DynamicsError> {
        if x0.len() != f.len() {
            return Err(DynamicsError::DimensionMismatch {
                detail: format!("{} state equations but {} initial values", f.len(), x0.len()),
            });
        }
        for e in f.iter().chain(std::iter::once(&h)) {
            e.check_variables(f.len(), true, false)?;
        }
        Ok(Self { f, h, x0 })
    }

    pub fn states(&self) -> usize {
        self.f.len()
    }

    pub fn rhs(&self, x: &[T], u: T) -> Result<Vec<T>, DynamicsError> {
        let env = Env::state(x, u);
        self.f.iter().map(|e| e.eval(&env).map_err(Into::into)).collect()
    }

    pub fn output(&self, x: &[T], u: T) -> Result<T, DynamicsError> {
        Ok(self.h.eval(&Env::state(x, u))?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DynamicsKind<T> {
    Identity,
    /// `y = f(u)`.
    Static(Expr),
    TransferFunction(TransferFunction<T>),
    StateSpace { system: StateSpace<T>, x0: Vec<T> },
    Ode(OdeSystem<T>),
    /// Pure transport delay of `tau` seconds.
    Delay { tau: T },
    /// Differentiator: backward difference `(u_k - u_{k-1}) / dt`, or
    /// `s / (tau s + 1)` when a filter constant is given.
    Derivative { filter_tau: Option<T> },
}

impl<T: Real> DynamicsKind<T> {
    pub fn kind_name(&self) -> &'static str {
        match self {
            DynamicsKind::Identity => "identity",
            DynamicsKind::Static(_) => "static",
            DynamicsKind::TransferFunction(_) => "tf",
            DynamicsKind::StateSpace { .. } => "ss",
            DynamicsKind::Ode(_) => "ode",
            DynamicsKind::Delay { .. } => "delay",
            DynamicsKind::Derivative { .. } => "derivative",
        }
    }

    /// True when the output at time `t` depends algebraically on the input
    /// at time `t`.
    pub fn is_feedthrough(&self) -> bool {
        match self {
            DynamicsKind::Identity | DynamicsKind::Static(_) | DynamicsKind::Derivative { .. } => {
                true
            }
            DynamicsKind::TransferFunction(tf) => !tf.is_strictly_proper(),
            DynamicsKind::StateSpace { system, .. } => system.d != T::zero(),
            DynamicsKind::Ode(ode) => ode.h.references(&Var::Input),
            DynamicsKind::Delay { .. } => false,
        }
    }

    /// Static structural checks that do not depend on the step size.
    pub fn check(&self) -> Result<(), DynamicsError> {
        match self {
            DynamicsKind::Static(e) => Ok(e.check_variables(0, true, false)?),
            DynamicsKind::TransferFunction(tf) => tf.to_state_space().map(|_| ()),
            DynamicsKind::StateSpace { system, x0 } => {
                if x0.len() != system.order() {
                    return Err(DynamicsError::DimensionMismatch {
                        detail: format!("x0 has {} entries for order {}", x0.len(), system.order()),
                    });
                }
                Ok(())
            }
            DynamicsKind::Derivative { filter_tau: Some(tau) } if *tau <= T::zero() => {
                Err(DynamicsError::DimensionMismatch {
                    detail: "derivative filter constant must be positive".into(),
                })
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FrechetStrategy<T> {
    /// `lim_{s -> 0} G(s)`.
    DcGain,
    /// Unit-step response evaluated at a finite horizon.
    StepResponse { horizon: T },
    /// Jacobian linearization at the current state and input, re-evaluated
    /// every `stride` steps, followed by its DC gain.
    Linearize { stride: usize },
    Constant(T),
}

impl<T: Real> FrechetStrategy<T> {
    pub fn name(&self) -> &'static str {
        match self {
            FrechetStrategy::DcGain => "dc_gain",
            FrechetStrategy::StepResponse { .. } => "step_response",
            FrechetStrategy::Linearize { .. } => "linearize",
            FrechetStrategy::Constant(_) => "constant",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec<T> {
    pub id: NodeId,
    pub dynamics: DynamicsKind<T>,
    pub frechet: FrechetStrategy<T>,
}

impl<T: Real> NodeSpec<T> {
    pub fn new(id: impl Into<NodeId>, dynamics: DynamicsKind<T>) -> Self {
        let frechet = match dynamics {
            DynamicsKind::Ode(_) => FrechetStrategy::Linearize { stride: 1 },
            _ => FrechetStrategy::DcGain,
        };
        Self {
            id: id.into(),
            dynamics,
            frechet,
        }
    }

    pub fn identity(id: impl Into<NodeId>) -> Self {
        Self::new(id, DynamicsKind::Identity)
    }

    pub fn with_frechet(mut self, frechet: FrechetStrategy<T>) -> Self {
        self.frechet = frechet;
        self
    }
}

/// Mutable per-node state owned by one simulation.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeState<T> {
    Memoryless,
    Linear { system: StateSpace<T>, x: Vec<T> },
    Ode { x: Vec<T> },
    Delay { buffer: VecDeque<T> },
    Difference { previous: T },
}

/// A node together with its running state and fixed step size.
#[derive(Debug, Clone)]
pub struct Node<T> {
    pub spec: NodeSpec<T>,
    pub state: NodeState<T>,
    dt: T,
}

fn delay_len<T: Real>(tau: T, dt: T) -> Result<usize, DynamicsError> {
    let n = (tau / dt).round().to_usize().unwrap_or(0);
    if n < 1 {
        return Err(DynamicsError::DelayTooShort {
            tau: tau.as_f64(),
            dt: dt.as_f64(),
        });
    }
    Ok(n)
}

impl<T: Real> Node<T> {
    /// Prepares the node for fixed-step simulation with step `dt`, starting
    /// from the configured initial state (zero unless given).
    pub fn new(spec: NodeSpec<T>, dt: T) -> Result<Self, DynamicsError> {
        Self::build(spec, dt, false)
    }

    /// Same as [`Node::new`] but ignores configured initial states.
    pub fn at_rest(spec: NodeSpec<T>, dt: T) -> Result<Self, DynamicsError> {
        Self::build(spec, dt, true)
    }

    fn build(spec: NodeSpec<T>, dt: T, zero_state: bool) -> Result<Self, DynamicsError> {
        spec.dynamics.check().map_err(|e| e.at_node(spec.id))?;
        let state = match &spec.dynamics {
            DynamicsKind::Identity | DynamicsKind::Static(_) => NodeState::Memoryless,
            DynamicsKind::TransferFunction(tf) => {
                let system = tf.to_state_space()?;
                let x = vec![T::zero(); system.order()];
                NodeState::Linear { system, x }
            }
            DynamicsKind::StateSpace { system, x0 } => NodeState::Linear {
                system: system.clone(),
                x: if zero_state { vec![T::zero(); x0.len()] } else { x0.clone() },
            },
            DynamicsKind::Ode(ode) => NodeState::Ode {
                x: if zero_state { vec![T::zero(); ode.states()] } else { ode.x0.clone() },
            },
            DynamicsKind::Delay { tau } => NodeState::Delay {
                buffer: std::iter::repeat_n(T::zero(), delay_len(*tau, dt)?).collect(),
            },
            DynamicsKind::Derivative { filter_tau: None } => NodeState::Difference {
                previous: T::zero(),
            },
            DynamicsKind::Derivative {
                filter_tau: Some(tau),
            } => {
                let system = tf_to_ss(&[T::one(), T::zero()], &[*tau, T::one()])?;
                NodeState::Linear {
                    system,
                    x: vec![T::zero()],
                }
            }
        };
        Ok(Self { spec, state, dt })
    }

    pub fn id(&self) -> NodeId {
        self.spec.id
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn is_feedthrough(&self) -> bool {
        self.spec.dynamics.is_feedthrough()
    }

    /// Current state vector for state-carrying nodes.
    pub fn state_vector(&self) -> Option<&[T]> {
        match &self.state {
            NodeState::Linear { x, .. } | NodeState::Ode { x } => Some(x),
            _ => None,
        }
    }

    /// Output at the current instant for input `u`. State-determined nodes
    /// ignore `u`.
    pub fn output(&self, u: T) -> Result<T, DynamicsError> {
        let id = self.id();
        let y = match (&self.state, &self.spec.dynamics) {
            (NodeState::Memoryless, DynamicsKind::Static(f)) => {
                f.eval(&Env::input(u)).map_err(|e| DynamicsError::from(e).at_node(id))?
            }
            (NodeState::Memoryless, _) => u,
            (NodeState::Linear { system, x }, _) => system.output(x, u),
            (NodeState::Ode { x }, DynamicsKind::Ode(ode)) => {
                ode.output(x, u).map_err(|e| e.at_node(id))?
            }
            (NodeState::Delay { buffer }, _) => *buffer.front().expect("delay length >= 1"),
            (NodeState::Difference { previous }, _) => (u - *previous) / self.dt,
            (NodeState::Ode { .. }, _) => unreachable!("ODE state without ODE dynamics"),
        };
        Ok(y)
    }

    /// Advances the state by one step with `u` held constant.
    pub fn advance(&mut self, u: T, scheme: Scheme) -> Result<(), DynamicsError> {
        let dt = self.dt;
        let id = self.spec.id;
        match &mut self.state {
            NodeState::Memoryless => {}
            NodeState::Linear { system, x } => {
                let sys = &*system;
                *x = integrate::step(scheme, x, dt, |x| {
                    Ok::<_, DynamicsError>(sys.derivative(x, u))
                })?;
            }
            NodeState::Ode { x } => {
                let DynamicsKind::Ode(ode) = &self.spec.dynamics else {
                    unreachable!("ODE state without ODE dynamics")
                };
                *x = integrate::step(scheme, x, dt, |x| ode.rhs(x, u)).map_err(|e| e.at_node(id))?;
            }
            NodeState::Delay { buffer } => {
                buffer.pop_front();
                buffer.push_back(u);
            }
            NodeState::Difference { previous } => *previous = u,
        }
        Ok(())
    }

    /// One standalone step: memoryless nodes respond immediately, delays
    /// emit the sample from `tau` ago while storing `u`, and state-carrying
    /// nodes advance first and then emit.
    pub fn step(&mut self, u: T, scheme: Scheme) -> Result<T, DynamicsError> {
        match self.state {
            NodeState::Memoryless | NodeState::Difference { .. } | NodeState::Delay { .. } => {
                let y = self.output(u)?;
                self.advance(u, scheme)?;
                Ok(y)
            }
            NodeState::Linear { .. } | NodeState::Ode { .. } => {
                self.advance(u, scheme)?;
                self.output(u)
            }
        }
    }
}

/// Steady-state gain of linear (or linearizable-at-rest) dynamics.
pub fn dc_gain<T: Real>(dynamics: &DynamicsKind<T>) -> Result<T, DynamicsError> {
    match dynamics {
        DynamicsKind::Identity | DynamicsKind::Delay { .. } => Ok(T::one()),
        DynamicsKind::TransferFunction(tf) => tf.dc_gain(),
        DynamicsKind::StateSpace { system, .. } => system.dc_gain(),
        DynamicsKind::Derivative { .. } => Ok(T::zero()),
        DynamicsKind::Static(_) => Err(DynamicsError::NotApplicable {
            what: "dc gain",
            kind: "static",
        }),
        DynamicsKind::Ode(_) => Err(DynamicsError::NotApplicable {
            what: "dc gain",
            kind: "ode (linearize first)",
        }),
    }
}

/// Unit-step response `p(T)` from rest, integrated with RK4 at step `dt`.
pub fn step_response_value<T: Real>(
    dynamics: &DynamicsKind<T>,
    horizon: T,
    dt: T,
) -> Result<T, DynamicsError> {
    let blowup = T::lit(DEFAULT_BLOWUP);
    let mut node = Node::at_rest(NodeSpec::new(NodeId(0), dynamics.clone()), dt)?;
    let steps = (horizon / dt).round().to_usize().unwrap_or(0);
    let one = T::one();
    for k in 0..steps {
        node.advance(one, Scheme::Rk4)?;
        let y = node.output(one)?;
        if !(y.abs() <= blowup) {
            return Err(DynamicsError::Diverged {
                node: None,
                t: (dt * T::lit((k + 1) as f64)).as_f64(),
                value: y.abs().as_f64(),
            });
        }
    }
    node.output(one)
}
