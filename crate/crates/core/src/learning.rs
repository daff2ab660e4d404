//! Branch-weight adaptation by gradient flow computed from downstream
//! weights and their rates.
//!
//! For a branch `ω_ij`,
//!
//! ```text
//! ω̇_ij = G'_j (y_i / y_j) (-γ y_j ∂E/∂y_j + Σ_m ω_jm ω̇_jm)
//! ```
//!
//! which on graphs where the linear system is uniquely solvable equals
//! `-γ dE/dω_ij`. Two evaluation modes are provided: a recursive one that
//! stops at output nodes, and a full linear solve of `(I - Φ) ω̇ = μ`.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::dynamics::DynamicsKind;
use crate::expr::{Env, ExprError, Var};
use crate::graph::{assemble_phi, GsfgGraph, NodeId, PhiOptions, PhiSystem, Snapshot};
use crate::linalg::{norm_inf, residual_inf, Lu};
use crate::scalar::{floored, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LearningMode {
    /// Recursion in reverse topological order that stops at output nodes.
    #[default]
    Truncated,
    /// LU solve of the complete coupled system.
    FullSolve,
}

impl LearningMode {
    pub fn name(self) -> &'static str {
        match self {
            LearningMode::Truncated => "truncated",
            LearningMode::FullSolve => "full",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningConfig<T> {
    pub gamma: T,
    pub mode: LearningMode,
    pub y_floor: T,
    /// Singularity threshold on `|det(I - Φ)|`; `None` means `1e-9 · L`.
    pub det_tol: Option<T>,
    pub blowup_threshold: T,
}

impl<T: Real> LearningConfig<T> {
    pub fn new(gamma: T) -> Self {
        Self {
            gamma,
            mode: LearningMode::Truncated,
            y_floor: T::lit(1e-6),
            det_tol: None,
            blowup_threshold: T::lit(1e12),
        }
    }

    pub fn with_mode(mut self, mode: LearningMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn det_tol_for(&self, branches: usize) -> T {
        self.det_tol
            .unwrap_or_else(|| T::lit(1e-9) * T::lit(branches.max(1) as f64))
    }

    fn phi_options(&self, truncate_at_outputs: bool) -> PhiOptions<T> {
        PhiOptions {
            gamma: self.gamma,
            y_floor: self.y_floor,
            truncate_at_outputs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearningError {
    #[error("branch {from}→{to} reaches a cycle that does not pass through an output node; use full-solve mode")]
    CycleBeyondOutput { from: NodeId, to: NodeId },
    #[error("learning system is singular: det(I - Φ) = {determinant:e} (tolerance {tolerance:e}); {detail}")]
    SingularSystem {
        determinant: f64,
        tolerance: f64,
        detail: String,
    },
    #[error("solver residual {residual:e} exceeds bound {bound:e}")]
    Residual { residual: f64, bound: f64 },
    #[error("weight of branch {from}→{to} blew up to {value:e}")]
    WeightBlowup { from: NodeId, to: NodeId, value: f64 },
    #[error("no target for output node {0}")]
    MissingTarget(NodeId),
    #[error("node {0} is not static (identity or static function required)")]
    NotStatic(NodeId),
    #[error("graph has a cycle through nodes {0:?}")]
    Cyclic(Vec<NodeId>),
    #[error("expression evaluation failed: {0}")]
    Expression(#[from] ExprError),
}

/// Weights, their rates and the current error value.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningState<T> {
    pub weights: Vec<T>,
    /// Rates for every branch; only adaptive ones are ever applied.
    pub rates: Vec<T>,
    pub error_value: T,
}

impl<T: Real> LearningState<T> {
    pub fn new(graph: &GsfgGraph<T>) -> Self {
        Self {
            weights: graph.initial_weights(),
            rates: vec![T::zero(); graph.branch_count()],
            error_value: T::zero(),
        }
    }
}

/// `E = ½ Σ_{m∈O} (y_m - ỹ_m)²` and `∂E/∂y` per node index.
pub fn error_and_partials<T: Real>(
    graph: &GsfgGraph<T>,
    y: &[T],
    targets: &BTreeMap<NodeId, T>,
) -> Result<(T, Vec<T>), LearningError> {
    let mut partials = vec![T::zero(); graph.node_count()];
    let mut error = T::zero();
    let half = T::lit(0.5);
    for &o in graph.outputs() {
        let target = *targets.get(&o).ok_or(LearningError::MissingTarget(o))?;
        let j = graph.node_index(o).ok_or(LearningError::MissingTarget(o))?;
        let e = y[j] - target;
        partials[j] = e;
        error = error + half * e * e;
    }
    Ok((error, partials))
}

#[derive(Clone, Copy)]
enum Visit<T> {
    Pending,
    Active,
    Done(T),
}

struct Truncated<'a, T> {
    graph: &'a GsfgGraph<T>,
    snap: Snapshot<'a, T>,
    config: &'a LearningConfig<T>,
    outgoing: Vec<Vec<usize>>,
    heads: Vec<usize>,
    tails: Vec<usize>,
    visit: Vec<Visit<T>>,
}

impl<T: Real> Truncated<'_, T> {
    fn rate(&mut self, l: usize) -> Result<T, usize> {
        match self.visit[l] {
            Visit::Done(v) => return Ok(v),
            Visit::Active => return Err(l),
            Visit::Pending => {}
        }
        self.visit[l] = Visit::Active;
        let (i, j) = (self.tails[l], self.heads[l]);
        let slope = self.snap.frechet[j];
        let value = if self.graph.is_output(self.graph.nodes()[j].id) {
            -self.config.gamma * self.snap.y[i] * slope * self.snap.partials[j]
        } else {
            let mut downstream = T::zero();
            for k in 0..self.outgoing[j].len() {
                let m = self.outgoing[j][k];
                downstream = downstream + self.snap.weights[m] * self.rate(m)?;
            }
            slope * self.snap.y[i] / floored(self.snap.y[j], self.config.y_floor) * downstream
        };
        self.visit[l] = Visit::Done(value);
        Ok(value)
    }
}

/// Rates by recursion from output nodes upstream. Branches ending at an
/// output node use `-γ y_i G'_j ∂E/∂y_j`; interior branches combine the
/// already-computed rates of the branches leaving their head. Non-adaptive
/// branches that only feed a cycle not passing through an output get rate 0.
pub fn weight_rates_truncated<T: Real>(
    graph: &GsfgGraph<T>,
    snap: Snapshot<'_, T>,
    config: &LearningConfig<T>,
) -> Result<Vec<T>, LearningError> {
    let index = |id| graph.node_index(id).expect("validated graph");
    let mut walk = Truncated {
        graph,
        snap,
        config,
        outgoing: graph.outgoing(),
        heads: graph.branches().iter().map(|b| index(b.to)).collect(),
        tails: graph.branches().iter().map(|b| index(b.from)).collect(),
        visit: vec![Visit::Pending; graph.branch_count()],
    };
    let order: Vec<usize> = (0..graph.branch_count())
        .filter(|&l| graph.branches()[l].adaptive)
        .chain((0..graph.branch_count()).filter(|&l| !graph.branches()[l].adaptive))
        .collect();
    for l in order {
        if let Err(m) = walk.rate(l) {
            let b = &graph.branches()[l];
            if b.adaptive {
                let culprit = &graph.branches()[m];
                return Err(LearningError::CycleBeyondOutput {
                    from: culprit.from,
                    to: culprit.to,
                });
            }
            for v in walk.visit.iter_mut() {
                if matches!(v, Visit::Active) {
                    *v = Visit::Done(T::zero());
                }
            }
        }
    }
    Ok(walk
        .visit
        .into_iter()
        .map(|v| match v {
            Visit::Done(x) => x,
            _ => T::zero(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullSolution<T> {
    pub rates: Vec<T>,
    pub determinant: T,
    pub residual: T,
}

/// Solves `(I - Φ) ω̇ = μ` by LU with partial pivoting.
pub fn weight_rates_full<T: Real>(
    system: &PhiSystem<T>,
    config: &LearningConfig<T>,
) -> Result<FullSolution<T>, LearningError> {
    let a = system.system_matrix();
    let lu = Lu::factor(&a);
    let determinant = lu.determinant();
    let tolerance = config.det_tol_for(system.len());
    let singular = |detail: String| LearningError::SingularSystem {
        determinant: determinant.as_f64(),
        tolerance: tolerance.as_f64(),
        detail,
    };
    if !(determinant.abs() > tolerance) {
        let loops: Vec<String> = (0..system.len())
            .filter(|&l| system.phi[(l, l)] != T::zero())
            .map(|l| {
                let (i, j) = system.branch_order[l];
                format!("{i}→{j}")
            })
            .collect();
        let detail = if loops.is_empty() {
            "feedback through the branch coupling".to_string()
        } else {
            format!("self-coupled branches {}", loops.join(", "))
        };
        return Err(singular(detail));
    }
    let rates = lu
        .solve(&system.mu)
        .ok_or_else(|| singular("zero pivot".to_string()))?;
    let residual = residual_inf(&a, &rates, &system.mu);
    let bound = T::lit(1e-9) * (T::one() + norm_inf(&system.mu));
    if !(residual <= bound) {
        return Err(LearningError::Residual {
            residual: residual.as_f64(),
            bound: bound.as_f64(),
        });
    }
    Ok(FullSolution {
        rates,
        determinant,
        residual,
    })
}

/// Rates under the configured mode.
pub fn weight_rates<T: Real>(
    graph: &GsfgGraph<T>,
    snap: Snapshot<'_, T>,
    config: &LearningConfig<T>,
) -> Result<Vec<T>, LearningError> {
    match config.mode {
        LearningMode::Truncated => weight_rates_truncated(graph, snap, config),
        LearningMode::FullSolve => {
            let system = assemble_phi(graph, snap, config.phi_options(false));
            weight_rates_full(&system, config).map(|s| s.rates)
        }
    }
}

/// `Φ` and `μ` as seen by the given mode (truncated rows for
/// [`LearningMode::Truncated`]).
pub fn phi_for_mode<T: Real>(
    graph: &GsfgGraph<T>,
    snap: Snapshot<'_, T>,
    config: &LearningConfig<T>,
) -> PhiSystem<T> {
    assemble_phi(
        graph,
        snap,
        config.phi_options(config.mode == LearningMode::Truncated),
    )
}

/// Explicit Euler on adaptive weights only.
pub fn apply_rates<T: Real>(
    state: &mut LearningState<T>,
    graph: &GsfgGraph<T>,
    dt: T,
    blowup_threshold: T,
) -> Result<(), LearningError> {
    for (l, b) in graph.branches().iter().enumerate() {
        if !b.adaptive {
            continue;
        }
        let w = state.weights[l] + state.rates[l] * dt;
        if !(w.abs() <= blowup_threshold) {
            return Err(LearningError::WeightBlowup {
                from: b.from,
                to: b.to,
                value: w.as_f64(),
            });
        }
        state.weights[l] = w;
    }
    Ok(())
}

fn sigmoid<T: Real>(p: T) -> T {
    T::one() / (T::one() + (-p).exp())
}

/// The neural-network form of the law for sigmoid neurons:
/// `ẇ_ij = σ'(p_j) (r_i / r_j) (-γ r_j (r_j - r̄_j) + Σ_m w_jm ẇ_jm)`,
/// with the target term present only at output neurons. `rates` and
/// `potentials` are indexed by node index; input neurons' potentials are
/// ignored.
pub fn nn_weight_rates<T: Real>(
    network: &GsfgGraph<T>,
    weights: &[T],
    rates: &[T],
    potentials: &[T],
    targets: &BTreeMap<NodeId, T>,
    gamma: T,
    y_floor: T,
) -> Result<Vec<T>, LearningError> {
    let order = network.topological_order().map_err(LearningError::Cyclic)?;
    let outgoing = network.outgoing();
    let mut node_sum = vec![T::zero(); network.node_count()];
    let mut out = vec![T::zero(); network.branch_count()];
    // heads before tails: process nodes in reverse topological order and
    // fill the rates of branches entering each node
    let incoming = network.incoming();
    for &j in order.iter().rev() {
        let id = network.nodes()[j].id;
        let mut drive: T = outgoing[j]
            .iter()
            .map(|&m| weights[m] * out[m])
            .sum();
        if network.is_output(id) {
            let target = *targets.get(&id).ok_or(LearningError::MissingTarget(id))?;
            drive = drive - gamma * rates[j] * (rates[j] - target);
        }
        node_sum[j] = drive;
        let s = sigmoid(potentials[j]);
        let slope = s * (T::one() - s);
        for &l in &incoming[j] {
            let i = network
                .node_index(network.branches()[l].from)
                .expect("validated network");
            out[l] = slope * rates[i] / floored(rates[j], y_floor) * drive;
        }
    }
    Ok(out)
}

/// Node inputs and outputs of a static graph for the given weights.
pub fn evaluate_static<T: Real>(
    graph: &GsfgGraph<T>,
    weights: &[T],
    external: &BTreeMap<NodeId, T>,
) -> Result<(Vec<T>, Vec<T>), LearningError> {
    let order = graph.topological_order().map_err(LearningError::Cyclic)?;
    let incoming = graph.incoming();
    let n = graph.node_count();
    let (mut u, mut y) = (vec![T::zero(); n], vec![T::zero(); n]);
    for j in order {
        let spec = &graph.nodes()[j];
        let mut sum = external.get(&spec.id).copied().unwrap_or_else(T::zero);
        for &l in &incoming[j] {
            let i = graph.node_index(graph.branches()[l].from).expect("validated graph");
            sum = sum + weights[l] * y[i];
        }
        u[j] = sum;
        y[j] = match &spec.dynamics {
            DynamicsKind::Identity => sum,
            DynamicsKind::Static(f) => f.eval(&Env::input(sum))?,
            _ => return Err(LearningError::NotStatic(spec.id)),
        };
    }
    Ok((u, y))
}

/// Fréchet values of static nodes: 1 for identities, `f'(u)` otherwise.
pub fn static_slopes<T: Real>(graph: &GsfgGraph<T>, u: &[T]) -> Result<Vec<T>, LearningError> {
    graph
        .nodes()
        .iter()
        .zip(u)
        .map(|(spec, &uj)| match &spec.dynamics {
            DynamicsKind::Identity => Ok(T::one()),
            DynamicsKind::Static(f) => Ok(f.eval_with_derivative(&Env::input(uj), &Var::Input)?.1),
            _ => Err(LearningError::NotStatic(spec.id)),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub from: NodeId,
    pub to: NodeId,
    /// Rate from the learning law.
    pub engine: f64,
    /// `-γ` times the central difference of `E`.
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub rows: Vec<GradcheckRow>,
    pub max_rel_error: f64,
}

impl std::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<10} {:>22} {:>22} {:>12}", "branch", "engine", "-gamma*fd", "rel_error")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<10} {:>22.15e} {:>22.15e} {:>12.3e}",
                format!("{}->{}", r.from, r.to),
                r.engine,
                r.numeric,
                r.rel_error
            )?;
        }
        write!(f, "max_rel_error {:.3e}", self.max_rel_error)
    }
}

/// Relative difference with the denominator floored at `1e-4 · γ`, so that
/// rates that are numerically zero compare on an absolute scale.
pub fn relative_error(a: f64, b: f64, gamma: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(1e-4 * gamma.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions<T> {
    pub gamma: T,
    pub h: T,
    pub y_floor: T,
}

/// Compares the learning law (full solve) against `-γ` times central
/// differences of `E` for every adaptive branch of a static acyclic graph.
pub fn gradcheck<T: Real>(
    graph: &GsfgGraph<T>,
    external: &BTreeMap<NodeId, T>,
    targets: &BTreeMap<NodeId, T>,
    opts: GradcheckOptions<T>,
) -> Result<GradcheckReport, LearningError> {
    let weights = graph.initial_weights();
    let (u, y) = evaluate_static(graph, &weights, external)?;
    let frechet = static_slopes(graph, &u)?;
    let (_, partials) = error_and_partials(graph, &y, targets)?;
    let config = LearningConfig {
        y_floor: opts.y_floor,
        ..LearningConfig::new(opts.gamma)
    };
    let system = assemble_phi(
        graph,
        Snapshot {
            weights: &weights,
            y: &y,
            frechet: &frechet,
            partials: &partials,
        },
        config.phi_options(false),
    );
    let engine = weight_rates_full(&system, &config)?.rates;

    let error_at = |w: &[T]| -> Result<T, LearningError> {
        let (_, y) = evaluate_static(graph, w, external)?;
        Ok(error_and_partials(graph, &y, targets)?.0)
    };
    let mut rows = Vec::new();
    for (l, b) in graph.branches().iter().enumerate() {
        if !b.adaptive {
            continue;
        }
        let mut w = weights.clone();
        w[l] = weights[l] + opts.h;
        let ep = error_at(&w)?;
        w[l] = weights[l] - opts.h;
        let em = error_at(&w)?;
        let numeric = (-opts.gamma * (ep - em) / (T::lit(2.0) * opts.h)).as_f64();
        let engine_rate = engine[l].as_f64();
        rows.push(GradcheckRow {
            from: b.from,
            to: b.to,
            engine: engine_rate,
            numeric,
            rel_error: relative_error(engine_rate, numeric, opts.gamma.as_f64()),
        });
    }
    let max_rel_error = rows.iter().fold(0.0f64, |m, r| m.max(r.rel_error));
    Ok(GradcheckReport {
        rows,
        max_rel_error,
    })
}
