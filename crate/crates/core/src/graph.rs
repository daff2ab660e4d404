//! Generalized signal-flow graphs: nodes with (possibly dynamic) behavior
//! connected by weighted branches, some of which adapt.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::dynamics::NodeSpec;
use crate::linalg::{Lu, Matrix};
use crate::scalar::{floored, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

impl From<u32> for NodeId {
    fn from(v: u32) -> Self {
        NodeId(v)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Branch `from -> to` with gain `ω`. Non-adaptive branches keep their
/// initial weight forever.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch<T> {
    pub from: NodeId,
    pub to: NodeId,
    pub initial_weight: T,
    pub adaptive: bool,
    pub label: Option<String>,
}

impl<T: Real> Branch<T> {
    pub fn fixed(from: u32, to: u32, weight: T) -> Self {
        Self {
            from: NodeId(from),
            to: NodeId(to),
            initial_weight: weight,
            adaptive: false,
            label: None,
        }
    }

    pub fn adaptive(from: u32, to: u32, weight: T) -> Self {
        Self {
            adaptive: true,
            ..Self::fixed(from, to, weight)
        }
    }

    pub fn labeled(mut self, label: &str) -> Self {
        self.label = Some(label.to_string());
        self
    }

    pub fn key(&self) -> (NodeId, NodeId) {
        (self.from, self.to)
    }

    /// Label if set, otherwise `w_<from>_<to>`.
    pub fn name(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| format!("w_{}_{}", self.from, self.to))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateNode(NodeId),
    NonContiguousIds { expected: usize, missing: Vec<NodeId> },
    UnknownNode { from: NodeId, to: NodeId, missing: NodeId },
    DuplicateBranch { from: NodeId, to: NodeId },
    UnknownOutput(NodeId),
    NoOutputs,
    InvalidDynamics { node: NodeId, message: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateNode(id) => write!(f, "node {id}: duplicate id"),
            Violation::NonContiguousIds { expected, missing } => {
                let missing: Vec<String> = missing.iter().map(ToString::to_string).collect();
                write!(f, "node ids must be 1..{expected}; missing {}", missing.join(", "))
            }
            Violation::UnknownNode { from, to, .. } => write!(f, "branch {from}→{to}: unknown node"),
            Violation::DuplicateBranch { from, to } => write!(f, "duplicate branch ({from},{to})"),
            Violation::UnknownOutput(id) => write!(f, "output node {id}: unknown node"),
            Violation::NoOutputs => f.write_str("adaptive branches present but no output node"),
            Violation::InvalidDynamics { node, message } => write!(f, "node {node}: {message}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("ok");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GsfgGraph<T> {
    nodes: Vec<NodeSpec<T>>,
    branches: Vec<Branch<T>>,
    outputs: BTreeSet<NodeId>,
    index: BTreeMap<NodeId, usize>,
}

impl<T: Real> GsfgGraph<T> {
    /// Nodes keep their given order; branches are sorted by `(to, from)`,
    /// which fixes the row order of the learning system.
    pub fn new(
        nodes: Vec<NodeSpec<T>>,
        mut branches: Vec<Branch<T>>,
        outputs: impl IntoIterator<Item = NodeId>,
    ) -> Self {
        branches.sort_by_key(|b| (b.to, b.from));
        let mut index = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            index.entry(n.id).or_insert(i);
        }
        Self {
            nodes,
            branches,
            outputs: outputs.into_iter().collect(),
            index,
        }
    }

    pub fn nodes(&self) -> &[NodeSpec<T>] {
        &self.nodes
    }

    pub fn branches(&self) -> &[Branch<T>] {
        &self.branches
    }

    pub fn outputs(&self) -> &BTreeSet<NodeId> {
        &self.outputs
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeSpec<T>> {
        self.node_index(id).map(|i| &self.nodes[i])
    }

    pub fn branch_index(&self, from: NodeId, to: NodeId) -> Option<usize> {
        self.branches.iter().position(|b| b.key() == (from, to))
    }

    pub fn is_output(&self, id: NodeId) -> bool {
        self.outputs.contains(&id)
    }

    pub fn initial_weights(&self) -> Vec<T> {
        self.branches.iter().map(|b| b.initial_weight).collect()
    }

    pub fn has_adaptive(&self) -> bool {
        self.branches.iter().any(|b| b.adaptive)
    }

    /// Reports every invariant violation; an empty report means valid.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if !seen.insert(n.id) {
                violations.push(Violation::DuplicateNode(n.id));
            }
        }
        let count = seen.len();
        let missing: Vec<NodeId> = (1..=count as u32)
            .map(NodeId)
            .filter(|id| !seen.contains(id))
            .collect();
        if !missing.is_empty() {
            violations.push(Violation::NonContiguousIds {
                expected: count,
                missing,
            });
        }
        for n in &self.nodes {
            if let Err(e) = n.dynamics.check() {
                violations.push(Violation::InvalidDynamics {
                    node: n.id,
                    message: e.to_string(),
                });
            }
        }
        let mut keys = BTreeSet::new();
        for b in &self.branches {
            for end in [b.from, b.to] {
                if !seen.contains(&end) {
                    violations.push(Violation::UnknownNode {
                        from: b.from,
                        to: b.to,
                        missing: end,
                    });
                    break;
                }
            }
            if !keys.insert(b.key()) {
                violations.push(Violation::DuplicateBranch {
                    from: b.from,
                    to: b.to,
                });
            }
        }
        for o in &self.outputs {
            if !seen.contains(o) {
                violations.push(Violation::UnknownOutput(*o));
            }
        }
        if self.outputs.is_empty() && self.has_adaptive() {
            violations.push(Violation::NoOutputs);
        }
        ValidationReport { violations }
    }

    /// Nodes without incoming branches.
    pub fn input_nodes(&self) -> BTreeSet<NodeId> {
        let heads: BTreeSet<NodeId> = self.branches.iter().map(|b| b.to).collect();
        self.nodes
            .iter()
            .map(|n| n.id)
            .filter(|id| !heads.contains(id))
            .collect()
    }

    /// Branch indices entering each node, by node index.
    pub fn incoming(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for (l, b) in self.branches.iter().enumerate() {
            if let Some(j) = self.node_index(b.to) {
                out[j].push(l);
            }
        }
        out
    }

    /// Branch indices leaving each node, by node index.
    pub fn outgoing(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for (l, b) in self.branches.iter().enumerate() {
            if let Some(i) = self.node_index(b.from) {
                out[i].push(l);
            }
        }
        out
    }

    /// Topological order of the node indices selected by `keep`, using only
    /// branches between kept nodes. On a cycle, returns the ids of the nodes
    /// left unordered.
    pub fn topological_order_where(
        &self,
        keep: impl Fn(&NodeSpec<T>) -> bool,
    ) -> Result<Vec<usize>, Vec<NodeId>> {
        let kept: Vec<bool> = self.nodes.iter().map(&keep).collect();
        let mut indegree = vec![0usize; self.nodes.len()];
        let outgoing = self.outgoing();
        let mut edges = Vec::new();
        for b in &self.branches {
            if let (Some(i), Some(j)) = (self.node_index(b.from), self.node_index(b.to)) {
                if kept[i] && kept[j] {
                    indegree[j] += 1;
                    edges.push((i, j));
                }
            }
        }
        let mut ready: Vec<usize> = (0..self.nodes.len())
            .filter(|&i| kept[i] && indegree[i] == 0)
            .rev()
            .collect();
        let mut order = Vec::new();
        while let Some(i) = ready.pop() {
            order.push(i);
            for &l in &outgoing[i] {
                let Some(j) = self.node_index(self.branches[l].to) else { continue };
                if !kept[j] {
                    continue;
                }
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    ready.push(j);
                }
            }
        }
        let total = kept.iter().filter(|k| **k).count();
        if order.len() == total {
            Ok(order)
        } else {
            let placed: BTreeSet<usize> = order.into_iter().collect();
            Err((0..self.nodes.len())
                .filter(|i| kept[*i] && !placed.contains(i))
                .map(|i| self.nodes[i].id)
                .collect())
        }
    }

    pub fn topological_order(&self) -> Result<Vec<usize>, Vec<NodeId>> {
        self.topological_order_where(|_| true)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_ok()
    }
}

/// Signals at one instant, all indexed by node index except `weights`
/// (indexed by branch).
#[derive(Debug, Clone, Copy)]
pub struct Snapshot<'a, T> {
    pub weights: &'a [T],
    pub y: &'a [T],
    pub frechet: &'a [T],
    /// `∂E/∂y` per node.
    pub partials: &'a [T],
}

/// `ω̇ = Φ ω̇ + μ` over all branches.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiSystem<T> {
    pub phi: Matrix<T>,
    pub mu: Vec<T>,
    pub branch_order: Vec<(NodeId, NodeId)>,
}

impl<T: Real> PhiSystem<T> {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// `I - Φ`.
    pub fn system_matrix(&self) -> Matrix<T> {
        Matrix::identity(self.len()).sub(&self.phi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiOptions<T> {
    pub gamma: T,
    pub y_floor: T,
    /// Zero the rows of branches that end at output nodes, stopping the
    /// downstream recursion there.
    pub truncate_at_outputs: bool,
}

/// Assembles `Φ` and `μ`. For branch `l = ω_ij` and `m = ω_i'j'`,
/// `φ_lm = G'_j (y_i / y_j) ω_jj'` when `j = i'` and zero otherwise;
/// `μ_l = -γ y_i G'_j ∂E/∂y_j`.
pub fn assemble_phi<T: Real>(
    graph: &GsfgGraph<T>,
    snap: Snapshot<'_, T>,
    opts: PhiOptions<T>,
) -> PhiSystem<T> {
    let count = graph.branch_count();
    let outgoing = graph.outgoing();
    let mut phi = Matrix::zeros(count, count);
    let mut mu = vec![T::zero(); count];
    for (l, b) in graph.branches().iter().enumerate() {
        let (Some(i), Some(j)) = (graph.node_index(b.from), graph.node_index(b.to)) else {
            continue;
        };
        let slope = snap.frechet[j];
        mu[l] = -opts.gamma * snap.y[i] * slope * snap.partials[j];
        if opts.truncate_at_outputs && graph.is_output(b.to) {
            continue;
        }
        let ratio = snap.y[i] / floored(snap.y[j], opts.y_floor);
        for &m in &outgoing[j] {
            phi[(l, m)] = slope * ratio * snap.weights[m];
        }
    }
    PhiSystem {
        phi,
        mu,
        branch_order: graph.branches().iter().map(Branch::key).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Uniqueness<T> {
    pub determinant: T,
    pub unique: bool,
}

/// `det(I - Φ)` by LU with partial pivoting; unique iff `|det| > tol`.
pub fn uniqueness_check<T: Real>(system: &PhiSystem<T>, tol: T) -> Uniqueness<T> {
    let determinant = Lu::factor(&system.system_matrix()).determinant();
    Uniqueness {
        determinant,
        unique: determinant.abs() > tol,
    }
}
