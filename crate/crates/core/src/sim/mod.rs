//! Fixed-step co-simulation of a graph, its reference model and the
//! weight adaptation.
//!
//! Each step `k` at `t = k dt`:
//!
//! 1. evaluate the command `v(t)`;
//! 2. read the reference output `ỹ = C x_r + D v`;
//! 3. read state-determined node outputs, then evaluate direct-feedthrough
//!    nodes in topological order (`u_n = Σ ω_mn y_m`, plus `v` at the input
//!    node);
//! 4. form `E` and `∂E/∂y`;
//! 5. evaluate Fréchet values;
//! 6. compute weight rates in the configured mode;
//! 7. advance node and reference states by `dt` with `u` held;
//! 8. integrate adaptive weights by explicit Euler.

mod metrics;
mod signal;

use thiserror::Error;

use crate::dynamics::{
    DynamicsError, FrechetTracker, Node, Scheme, StateSpace, TransferFunction,
};
use crate::expr::ExprError;
use crate::graph::{GsfgGraph, NodeId, Snapshot, ValidationReport};
use crate::learning::{
    apply_rates, error_and_partials, weight_rates, LearningError, LearningState,
};
use crate::scalar::Real;
use crate::scenario::Scenario;

pub use metrics::{metrics, Metrics, MetricsError};
pub use signal::{signal, SignalSpec};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid graph: {0}")]
    InvalidGraph(ValidationReport),
    #[error("algebraic loop through direct-feedthrough nodes {0:?}")]
    AlgebraicLoop(Vec<NodeId>),
    #[error("cannot pick the input node: candidates {0:?}; set `input_node`")]
    AmbiguousInput(Vec<NodeId>),
    #[error("input node {0} does not exist")]
    UnknownInput(NodeId),
    #[error("bad timing: dt = {dt}, duration = {duration}")]
    BadTiming { dt: f64, duration: f64 },
    #[error("diverged at t = {t}{} (value {value:e}); last valid t = {last_valid_t}", node.map(|n| format!(" at node {n}")).unwrap_or_default())]
    Diverged {
        t: f64,
        node: Option<NodeId>,
        value: f64,
        last_valid_t: f64,
    },
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("input signal: {0}")]
    Signal(#[from] ExprError),
}

impl SimError {
    /// Short status word for summaries.
    pub fn status(&self) -> &'static str {
        match self {
            SimError::Diverged { .. } | SimError::Learning(LearningError::WeightBlowup { .. }) => {
                "diverged"
            }
            SimError::Dynamics(DynamicsError::Diverged { .. }) => "diverged",
            SimError::Learning(LearningError::SingularSystem { .. }) => "singular",
            _ => "failed",
        }
    }

    /// Time of the fault, when it happened during stepping.
    pub fn time(&self) -> Option<f64> {
        match self {
            SimError::Diverged { t, .. } => Some(*t),
            SimError::Dynamics(DynamicsError::Diverged { t, .. })
            | SimError::Dynamics(DynamicsError::NonFinite { t, .. }) => Some(*t),
            _ => None,
        }
    }
}

/// Reference model `H(s)` realized in controllable canonical form.
#[derive(Debug, Clone)]
pub struct ReferenceModel<T> {
    pub tf: TransferFunction<T>,
    pub system: StateSpace<T>,
    pub x: Vec<T>,
}

impl<T: Real> ReferenceModel<T> {
    pub fn new(tf: TransferFunction<T>) -> Result<Self, DynamicsError> {
        let system = tf.to_state_space()?;
        let x = vec![T::zero(); system.order()];
        Ok(Self { tf, system, x })
    }

    pub fn output(&self, v: T) -> T {
        self.system.output(&self.x, v)
    }

    pub fn advance(&mut self, v: T, dt: T, scheme: Scheme) {
        let sys = &self.system;
        self.x = crate::dynamics::integrate::step(scheme, &self.x, dt, |x| {
            Ok::<_, std::convert::Infallible>(sys.derivative(x, v))
        })
        .unwrap_or_else(|e| match e {});
    }
}

/// Everything recorded during a run. Per-node series are indexed by node
/// index, per-branch series by branch index; all share the time grid.
#[derive(Debug, Clone, Default)]
pub struct SimulationTrace<T> {
    pub node_ids: Vec<NodeId>,
    pub branch_keys: Vec<(NodeId, NodeId)>,
    pub branch_names: Vec<String>,
    pub adaptive: Vec<bool>,
    /// Node whose tracking error is reported.
    pub primary_output: Option<NodeId>,
    /// Nodes selected for CSV output.
    pub logged_nodes: Vec<NodeId>,
    pub t: Vec<T>,
    pub v: Vec<T>,
    pub reference: Vec<T>,
    /// `y - ỹ` at the primary output.
    pub error: Vec<T>,
    pub e_value: Vec<T>,
    pub u: Vec<Vec<T>>,
    pub y: Vec<Vec<T>>,
    pub frechet: Vec<Vec<T>>,
    /// Weights after the update of each step.
    pub weights: Vec<Vec<T>>,
    pub rates: Vec<Vec<T>>,
    pub diagnostics: Vec<String>,
}

impl<T: Real> SimulationTrace<T> {
    fn new(graph: &GsfgGraph<T>, logged: Vec<NodeId>, capacity: usize, record: Record) -> Self {
        let n = graph.node_count();
        let l = graph.branch_count();
        let series = |count: usize| vec![Vec::with_capacity(capacity); count];
        let node_series = |count: usize| match record {
            Record::Full => series(count),
            Record::Light => vec![Vec::new(); count],
        };
        Self {
            node_ids: graph.nodes().iter().map(|n| n.id).collect(),
            branch_keys: graph.branches().iter().map(|b| b.key()).collect(),
            branch_names: graph.branches().iter().map(|b| b.name()).collect(),
            adaptive: graph.branches().iter().map(|b| b.adaptive).collect(),
            primary_output: graph.outputs().iter().next().copied(),
            logged_nodes: logged,
            t: Vec::with_capacity(capacity),
            v: Vec::with_capacity(capacity),
            reference: Vec::with_capacity(capacity),
            error: Vec::with_capacity(capacity),
            e_value: Vec::with_capacity(capacity),
            u: node_series(n),
            y: node_series(n),
            frechet: node_series(n),
            weights: series(l),
            rates: series(l),
            diagnostics: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        self.node_ids.iter().position(|n| *n == id)
    }

    /// Output series of a node.
    pub fn y_of(&self, id: NodeId) -> Option<&[T]> {
        self.node_index(id).map(|j| self.y[j].as_slice())
    }

    /// Weight series of the branch with the given label or `w_i_j` name.
    pub fn weight_of(&self, name: &str) -> Option<&[T]> {
        self.branch_names
            .iter()
            .position(|n| n == name)
            .map(|l| self.weights[l].as_slice())
    }

    /// True when no recorded value is NaN or infinite.
    pub fn is_finite(&self) -> bool {
        let flat = |s: &Vec<T>| s.iter().all(|v| v.is_finite());
        [&self.t, &self.v, &self.reference, &self.error, &self.e_value]
            .into_iter()
            .all(flat)
            && [&self.u, &self.y, &self.frechet, &self.weights, &self.rates]
                .into_iter()
                .all(|group| group.iter().all(flat))
    }
}

/// How much of each step to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Record {
    /// Every series of [`SimulationTrace`].
    #[default]
    Full,
    /// Skips per-node `u`, `y` and Fréchet series.
    Light,
}

/// Stepping state of one run.
pub struct Simulation<'a, T> {
    scenario: &'a Scenario<T>,
    nodes: Vec<Node<T>>,
    trackers: Vec<FrechetTracker<T>>,
    reference: Option<ReferenceModel<T>>,
    learning: LearningState<T>,
    feedthrough_order: Vec<usize>,
    state_nodes: Vec<usize>,
    incoming: Vec<Vec<(usize, usize)>>,
    input: Option<usize>,
    adapting: bool,
    warned: Vec<bool>,
    record: Record,
    steps: usize,
    k: usize,
    pub trace: SimulationTrace<T>,
}

impl<'a, T: Real> Simulation<'a, T> {
    pub fn new(scenario: &'a Scenario<T>) -> Result<Self, SimError> {
        Self::with_record(scenario, Record::Full)
    }

    pub fn with_record(scenario: &'a Scenario<T>, record: Record) -> Result<Self, SimError> {
        let graph = &scenario.graph;
        let report = graph.validate();
        if !report.is_ok() {
            return Err(SimError::InvalidGraph(report));
        }
        let (dt, duration) = (scenario.dt, scenario.duration);
        if !(dt > T::zero()) || !(duration >= dt) {
            return Err(SimError::BadTiming {
                dt: dt.as_f64(),
                duration: duration.as_f64(),
            });
        }
        let feedthrough_order = graph
            .topological_order_where(|n| n.dynamics.is_feedthrough())
            .map_err(SimError::AlgebraicLoop)?;
        let nodes = graph
            .nodes()
            .iter()
            .map(|spec| Node::new(spec.clone(), dt))
            .collect::<Result<Vec<_>, _>>()?;
        let state_nodes = (0..nodes.len()).filter(|&j| !nodes[j].is_feedthrough()).collect();
        let index = |id| graph.node_index(id).expect("validated graph");
        let mut incoming = vec![Vec::new(); graph.node_count()];
        for (l, b) in graph.branches().iter().enumerate() {
            incoming[index(b.to)].push((l, index(b.from)));
        }
        let input = match scenario.input_node {
            Some(id) => Some(graph.node_index(id).ok_or(SimError::UnknownInput(id))?),
            None => {
                let candidates: Vec<NodeId> = graph.input_nodes().into_iter().collect();
                match candidates.len() {
                    0 => None,
                    1 => Some(index(candidates[0])),
                    _ => return Err(SimError::AmbiguousInput(candidates)),
                }
            }
        };
        let reference = scenario
            .reference
            .clone()
            .map(ReferenceModel::new)
            .transpose()?;
        let steps = (duration / dt).round().to_usize().unwrap_or(0);
        let logged = if scenario.log.is_empty() {
            graph.outputs().iter().copied().collect()
        } else {
            scenario.log.clone()
        };
        Ok(Self {
            scenario,
            trackers: vec![FrechetTracker::new(); nodes.len()],
            warned: vec![false; nodes.len()],
            nodes,
            reference,
            learning: LearningState::new(graph),
            feedthrough_order,
            state_nodes,
            incoming,
            input,
            adapting: graph.has_adaptive() && !graph.outputs().is_empty(),
            record,
            steps,
            k: 0,
            trace: SimulationTrace::new(graph, logged, steps, record),
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.k >= self.steps
    }

    fn time(&self, k: usize) -> T {
        T::lit(k as f64) * self.scenario.dt
    }

    fn diverged(&self, t: T, node: Option<NodeId>, value: T) -> SimError {
        SimError::Diverged {
            t: t.as_f64(),
            node,
            value: value.as_f64(),
            last_valid_t: if self.k == 0 {
                0.0
            } else {
                self.time(self.k - 1).as_f64()
            },
        }
    }

    fn input_sum(&self, j: usize, y: &[T], v: T) -> T {
        let mut sum = if self.input == Some(j) { v } else { T::zero() };
        for &(l, i) in &self.incoming[j] {
            sum = sum + self.learning.weights[l] * y[i];
        }
        sum
    }

    /// Performs one step and appends it to the trace.
    pub fn step(&mut self) -> Result<(), SimError> {
        let graph = &self.scenario.graph;
        let learning = &self.scenario.learning;
        let blowup = learning.blowup_threshold;
        let t = self.time(self.k);
        let n = self.nodes.len();

        let v = signal(&self.scenario.input, t)?;
        let target = self.reference.as_ref().map_or(T::zero(), |r| r.output(v));
        if !(v.abs() <= blowup) || !(target.abs() <= blowup) {
            return Err(self.diverged(t, None, if v.is_finite() { target } else { v }));
        }

        let mut y = vec![T::zero(); n];
        let mut u = vec![T::zero(); n];
        for &j in &self.state_nodes {
            y[j] = self.nodes[j].output(T::zero())?;
        }
        for &j in &self.feedthrough_order {
            u[j] = self.input_sum(j, &y, v);
            y[j] = self.nodes[j].output(u[j])?;
        }
        for &j in &self.state_nodes {
            u[j] = self.input_sum(j, &y, v);
        }
        for j in 0..n {
            for value in [y[j], u[j]] {
                if !(value.abs() <= blowup) {
                    return Err(self.diverged(t, Some(graph.nodes()[j].id), value));
                }
            }
        }

        let targets = graph.outputs().iter().map(|&o| (o, target)).collect();
        let (e_value, partials) = error_and_partials(graph, &y, &targets)?;

        let mut frechet = vec![T::zero(); n];
        for j in 0..n {
            let outcome = self.trackers[j].value(&self.nodes[j], u[j])?;
            if outcome.fell_back && !self.warned[j] {
                self.warned[j] = true;
                let note = format!(
                    "node {}: pole at the origin, using the step response at 1 s for the Fréchet value",
                    graph.nodes()[j].id
                );
                log::warn!("{note}");
                self.trace.diagnostics.push(note);
            }
            frechet[j] = outcome.value;
        }

        if self.adapting {
            let snap = Snapshot {
                weights: &self.learning.weights,
                y: &y,
                frechet: &frechet,
                partials: &partials,
            };
            self.learning.rates = weight_rates(graph, snap, learning)?;
        }
        self.learning.error_value = e_value;

        for (node, &uj) in self.nodes.iter_mut().zip(&u) {
            node.advance(uj, self.scenario.scheme)?;
        }
        if let Some(r) = self.reference.as_mut() {
            r.advance(v, self.scenario.dt, self.scenario.scheme);
        }
        apply_rates(&mut self.learning, graph, self.scenario.dt, blowup)?;

        let tr = &mut self.trace;
        tr.t.push(t);
        tr.v.push(v);
        tr.reference.push(target);
        let primary = tr.primary_output.and_then(|o| graph.node_index(o));
        tr.error.push(primary.map_or(T::zero(), |j| y[j] - target));
        tr.e_value.push(e_value);
        if self.record == Record::Full {
            for j in 0..n {
                tr.u[j].push(u[j]);
                tr.y[j].push(y[j]);
                tr.frechet[j].push(frechet[j]);
            }
        }
        for l in 0..graph.branch_count() {
            tr.weights[l].push(self.learning.weights[l]);
            tr.rates[l].push(self.learning.rates[l]);
        }
        self.k += 1;
        Ok(())
    }
}

/// Runs the scenario to completion, returning whatever was recorded along
/// with the fault that stopped it, if any.
pub fn run_partial<T: Real>(scenario: &Scenario<T>) -> (SimulationTrace<T>, Option<SimError>) {
    run_recording(scenario, Record::Full)
}

pub fn run_recording<T: Real>(
    scenario: &Scenario<T>,
    record: Record,
) -> (SimulationTrace<T>, Option<SimError>) {
    let mut sim = match Simulation::with_record(scenario, record) {
        Ok(sim) => sim,
        Err(e) => return (SimulationTrace::default(), Some(e)),
    };
    while !sim.is_done() {
        if let Err(e) = sim.step() {
            return (sim.trace, Some(e));
        }
    }
    (sim.trace, None)
}

pub fn run<T: Real>(scenario: &Scenario<T>) -> Result<SimulationTrace<T>, SimError> {
    match run_partial(scenario) {
        (trace, None) => Ok(trace),
        (_, Some(e)) => Err(e),
    }
}
