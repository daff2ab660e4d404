//! Scenario files and result writers.
//!
//! A scenario is a line-oriented sectioned file:
//!
//! ```text
//! # comment
//! [scenario]
//! name = "stable_plant"
//!
//! [node 4]
//! kind = tf                 # identity | static | tf | ss | ode | delay | derivative
//! num = [1]
//! den = [1, 6, 11, 6]
//! output = true
//! frechet = dc_gain         # dc_gain | step_response | linearize | constant
//!
//! [branch 2 4]
//! weight = 12
//! adaptive = true
//! label = "K_P"
//!
//! [reference]
//! num = [1, 1200, 900]
//! den = [1, 100, 600, 1500, 1800, 900]
//!
//! [input]
//! signal = square           # step | square | sawtooth | sine | expr
//! amplitude = 1
//! period = 20
//! node = 5
//!
//! [learning]
//! gamma = 2
//! mode = truncated          # truncated | full
//!
//! [sim]
//! dt = 0.001
//! duration = 200
//! scheme = rk4              # rk4 | euler
//! log = [4]
//! ```
//!
//! Node keys by kind: `static` takes `f` (an expression in `u`); `tf` takes
//! `num`, `den`; `ss` takes `a` (list of rows), `b`, `c`, `d`, `x0`; `ode`
//! takes `f1`..`fn`, `h` (expressions in `x1`..`xn`, `u`) and `x0`; `delay`
//! takes `tau`; `derivative` takes an optional `filter` time constant.
//! Fréchet options are `horizon` (step_response), `stride` (linearize) and
//! `value` (constant).
//!
//! Optional sections: `[gradcheck]` with `h`, `inputs = [[id, value], ...]`
//! and `targets = [[id, value], ...]`; `[check]` with `window`,
//! `final_over_first_max`, `rate_ratio_max`, `peak_before` and
//! `final_over_peak_max`.

mod output;
mod value;

use std::collections::HashSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::dynamics::{
    DynamicsKind, FrechetStrategy, NodeSpec, OdeSystem, Scheme, StateSpace, TransferFunction,
};
use crate::expr::{parse, Expr};
use crate::graph::{Branch, GsfgGraph, NodeId, ValidationReport};
use crate::learning::{LearningConfig, LearningMode};
use crate::linalg::Matrix;
use crate::scalar::Real;
use crate::sim::SignalSpec;

pub use output::{read_csv, summary, write_csv, CsvTable, Summary};
pub use value::{parse_value, Value, ValueError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{}{message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Semantic { line: Option<usize>, message: String },
    #[error("invalid graph:\n{0}")]
    Invalid(ValidationReport),
}

fn semantic(line: usize, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Semantic {
        line: Some(line),
        message: message.into(),
    }
}

/// Static inputs and targets for the finite-difference check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckSpec<T> {
    pub h: T,
    pub inputs: Vec<(NodeId, T)>,
    pub targets: Vec<(NodeId, T)>,
}

/// Thresholds reported as pass/fail flags in run summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckSpec {
    /// Length in seconds of the first and final windows.
    pub window: f64,
    pub final_over_first_max: Option<f64>,
    pub rate_ratio_max: Option<f64>,
    pub peak_before: Option<f64>,
    pub final_over_peak_max: Option<f64>,
}

impl Default for CheckSpec {
    fn default() -> Self {
        Self {
            window: 20.0,
            final_over_first_max: None,
            rate_ratio_max: None,
            peak_before: None,
            final_over_peak_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T> {
    pub name: String,
    pub graph: GsfgGraph<T>,
    pub reference: Option<TransferFunction<T>>,
    pub input: SignalSpec<T>,
    /// Node that receives the command; defaults to the only node without
    /// incoming branches.
    pub input_node: Option<NodeId>,
    pub duration: T,
    pub dt: T,
    pub scheme: Scheme,
    pub learning: LearningConfig<T>,
    /// Nodes written to CSV; empty means the output nodes.
    pub log: Vec<NodeId>,
    pub gradcheck: Option<GradcheckSpec<T>>,
    pub check: CheckSpec,
}

impl<T: Real> Scenario<T> {
    /// Scenario with default timing (dt 1 ms, 200 s), a square-wave command
    /// of amplitude 1 and period 20 s, and `γ = 1`.
    pub fn new(name: &str, graph: GsfgGraph<T>) -> Self {
        Self {
            name: name.to_string(),
            graph,
            reference: None,
            input: SignalSpec::default(),
            input_node: None,
            duration: T::lit(200.0),
            dt: T::lit(1e-3),
            scheme: Scheme::Rk4,
            learning: LearningConfig::new(T::one()),
            log: Vec::new(),
            gradcheck: None,
            check: CheckSpec::default(),
        }
    }

    /// Every transfer function in the file, labeled by where it appears.
    pub fn transfer_functions(&self) -> Vec<(String, TransferFunction<T>)> {
        let mut out = Vec::new();
        if let Some(r) = &self.reference {
            out.push(("reference".to_string(), r.clone()));
        }
        for n in self.graph.nodes() {
            if let DynamicsKind::TransferFunction(tf) = &n.dynamics {
                out.push((format!("node {}", n.id), tf.clone()));
            }
        }
        out
    }
}

struct Entry {
    key: String,
    value: Value,
    line: usize,
}

struct Section {
    name: String,
    args: Vec<String>,
    line: usize,
    entries: Vec<Entry>,
}

fn split_sections(text: &str) -> Result<Vec<Section>, ScenarioError> {
    let mut sections: Vec<Section> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let body = value::strip_comment(raw);
        let trimmed = body.trim();
        if trimmed.is_empty() {
            continue;
        }
        let indent = body.len() - body.trim_start().len();
        let column_of = |byte: usize| body[..byte].chars().count() + 1;
        if let Some(rest) = trimmed.strip_prefix('[') {
            let Some(inner) = rest.strip_suffix(']') else {
                return Err(ScenarioError::Parse {
                    line,
                    column: column_of(indent + trimmed.len()),
                    message: "expected ']' to close the section header".into(),
                });
            };
            let mut words = inner.split_whitespace().map(str::to_string);
            let Some(name) = words.next() else {
                return Err(ScenarioError::Parse {
                    line,
                    column: column_of(indent + 1),
                    message: "empty section header".into(),
                });
            };
            sections.push(Section {
                name,
                args: words.collect(),
                line,
                entries: Vec::new(),
            });
            continue;
        }
        let Some(eq) = body.find('=') else {
            return Err(ScenarioError::Parse {
                line,
                column: column_of(indent),
                message: "expected `key = value` or a [section] header".into(),
            });
        };
        let key = body[..eq].trim();
        let valid_key = key
            .chars()
            .next()
            .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
            && key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !valid_key {
            return Err(ScenarioError::Parse {
                line,
                column: column_of(indent),
                message: format!("invalid key '{key}'"),
            });
        }
        let value_text = &body[eq + 1..];
        let value = value::parse_value(value_text).map_err(|e| ScenarioError::Parse {
            line,
            column: column_of(eq + 1) + e.offset,
            message: e.message,
        })?;
        let Some(section) = sections.last_mut() else {
            return Err(ScenarioError::Parse {
                line,
                column: column_of(indent),
                message: "key outside of any section".into(),
            });
        };
        if section.entries.iter().any(|e| e.key == key) {
            return Err(semantic(line, format!("duplicate key '{key}'")));
        }
        section.entries.push(Entry {
            key: key.to_string(),
            value,
            line,
        });
    }
    Ok(sections)
}

/// Typed access to the entries of one section, remembering which keys were
/// used so that leftovers can be reported.
struct Fields<'a> {
    section: &'a Section,
    used: HashSet<&'a str>,
}

impl<'a> Fields<'a> {
    fn new(section: &'a Section) -> Self {
        Self {
            section,
            used: HashSet::new(),
        }
    }

    fn get(&mut self, key: &str) -> Option<&'a Entry> {
        let entry = self.section.entries.iter().find(|e| e.key == key)?;
        self.used.insert(entry.key.as_str());
        Some(entry)
    }

    fn missing(&self, key: &str) -> ScenarioError {
        semantic(
            self.section.line,
            format!("[{}] requires `{key}`", self.title()),
        )
    }

    fn title(&self) -> String {
        std::iter::once(self.section.name.as_str())
            .chain(self.section.args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn number(&mut self, key: &str) -> Result<Option<f64>, ScenarioError> {
        match self.get(key) {
            None => Ok(None),
            Some(Entry {
                value: Value::Number(x),
                ..
            }) => Ok(Some(*x)),
            Some(e) => Err(semantic(e.line, format!("`{key}` must be a number, found a {}", e.value.describe()))),
        }
    }

    fn require_number(&mut self, key: &str) -> Result<f64, ScenarioError> {
        self.number(key)?.ok_or_else(|| self.missing(key))
    }

    fn count(&mut self, key: &str) -> Result<Option<usize>, ScenarioError> {
        let line = self.section.entries.iter().find(|e| e.key == key).map(|e| e.line);
        match self.number(key)? {
            Some(x) if x >= 0.0 && x.fract() == 0.0 => Ok(Some(x as usize)),
            Some(_) => Err(semantic(line.unwrap_or(0), format!("`{key}` must be a non-negative integer"))),
            None => Ok(None),
        }
    }

    fn word(&mut self, key: &str) -> Result<Option<(String, usize)>, ScenarioError> {
        match self.get(key) {
            None => Ok(None),
            Some(Entry {
                value: Value::Word(w),
                line,
                ..
            }) => Ok(Some((w.clone(), *line))),
            Some(e) => Err(semantic(e.line, format!("`{key}` must be a bare word, found a {}", e.value.describe()))),
        }
    }

    fn boolean(&mut self, key: &str) -> Result<Option<bool>, ScenarioError> {
        match self.word(key)? {
            None => Ok(None),
            Some((w, _)) if w == "true" => Ok(Some(true)),
            Some((w, _)) if w == "false" => Ok(Some(false)),
            Some((_, line)) => Err(semantic(line, format!("`{key}` must be true or false"))),
        }
    }

    fn string(&mut self, key: &str) -> Result<Option<(String, usize)>, ScenarioError> {
        match self.get(key) {
            None => Ok(None),
            Some(Entry {
                value: Value::Str(s),
                line,
                ..
            }) => Ok(Some((s.clone(), *line))),
            Some(e) => Err(semantic(e.line, format!("`{key}` must be a quoted string, found a {}", e.value.describe()))),
        }
    }

    fn expr(&mut self, key: &str) -> Result<Option<(Expr, usize)>, ScenarioError> {
        match self.string(key)? {
            None => Ok(None),
            Some((text, line)) => parse(&text)
                .map(|e| Some((e, line)))
                .map_err(|e| semantic(line, format!("`{key}`: {e}"))),
        }
    }

    fn numbers(&mut self, key: &str) -> Result<Option<Vec<f64>>, ScenarioError> {
        match self.get(key) {
            None => Ok(None),
            Some(e) => number_list(&e.value)
                .map(Some)
                .ok_or_else(|| semantic(e.line, format!("`{key}` must be a list of numbers"))),
        }
    }

    fn require_numbers(&mut self, key: &str) -> Result<Vec<f64>, ScenarioError> {
        self.numbers(key)?.ok_or_else(|| self.missing(key))
    }

    fn line_of(&self, key: &str) -> usize {
        self.section
            .entries
            .iter()
            .find(|e| e.key == key)
            .map_or(self.section.line, |e| e.line)
    }

    fn finish(self) -> Result<(), ScenarioError> {
        match self.section.entries.iter().find(|e| !self.used.contains(e.key.as_str())) {
            Some(e) => Err(semantic(e.line, format!("unknown key `{}` in [{}]", e.key, self.title()))),
            None => Ok(()),
        }
    }
}

fn number_list(v: &Value) -> Option<Vec<f64>> {
    match v {
        Value::List(items) => items
            .iter()
            .map(|i| match i {
                Value::Number(x) => Some(*x),
                _ => None,
            })
            .collect(),
        _ => None,
    }
}

fn node_id(text: &str, line: usize) -> Result<NodeId, ScenarioError> {
    match text.parse::<u32>() {
        Ok(n) if n >= 1 => Ok(NodeId(n)),
        _ => Err(semantic(line, format!("invalid node id '{text}'"))),
    }
}

fn id_from_number(x: f64, line: usize) -> Result<NodeId, ScenarioError> {
    if x >= 1.0 && x.fract() == 0.0 && x <= u32::MAX as f64 {
        Ok(NodeId(x as u32))
    } else {
        Err(semantic(line, format!("invalid node id {x}")))
    }
}

fn lits<T: Real>(xs: &[f64]) -> Vec<T> {
    xs.iter().map(|&x| T::lit(x)).collect()
}

fn transfer_function<T: Real>(
    f: &mut Fields<'_>,
    what: &str,
) -> Result<TransferFunction<T>, ScenarioError> {
    let num = f.require_numbers("num")?;
    let den = f.require_numbers("den")?;
    let line = f.line_of("den");
    TransferFunction::new(lits(&num), lits(&den)).map_err(|e| semantic(line, format!("{what}: {e}")))
}

fn node_section<T: Real>(section: &Section) -> Result<(NodeSpec<T>, bool), ScenarioError> {
    let [arg] = section.args.as_slice() else {
        return Err(semantic(section.line, "expected [node <id>]"));
    };
    let id = node_id(arg, section.line)?;
    let mut f = Fields::new(section);
    let what = format!("node {id}");
    let (kind, kind_line) = f.word("kind")?.ok_or_else(|| f.missing("kind"))?;
    let dynamics = match kind.as_str() {
        "identity" => DynamicsKind::Identity,
        "static" => {
            let (e, line) = f.expr("f")?.ok_or_else(|| f.missing("f"))?;
            e.check_variables(0, true, false)
                .map_err(|err| semantic(line, format!("{what}: {err}")))?;
            DynamicsKind::Static(e)
        }
        "tf" => DynamicsKind::TransferFunction(transfer_function(&mut f, &what)?),
        "ss" => {
            let line = f.line_of("a");
            let rows = match f.get("a") {
                None => return Err(f.missing("a")),
                Some(e) => match &e.value {
                    Value::List(rows) => rows
                        .iter()
                        .map(number_list)
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| semantic(e.line, "`a` must be a list of rows"))?,
                    _ => return Err(semantic(e.line, "`a` must be a list of rows")),
                },
            };
            let b = f.require_numbers("b")?;
            let c = f.require_numbers("c")?;
            let d = f.number("d")?.unwrap_or(0.0);
            let n = rows.len();
            if rows.iter().any(|r| r.len() != n) {
                return Err(semantic(line, format!("{what}: `a` must be square")));
            }
            let a = Matrix::from_rows(&rows.iter().map(|r| lits::<T>(r)).collect::<Vec<_>>());
            let system = StateSpace::new(a, lits(&b), lits(&c), T::lit(d))
                .map_err(|e| semantic(line, format!("{what}: {e}")))?;
            let x0 = f.numbers("x0")?.unwrap_or_else(|| vec![0.0; n]);
            DynamicsKind::StateSpace {
                system,
                x0: lits(&x0),
            }
        }
        "ode" => {
            let mut rhs = Vec::new();
            while let Some((e, _)) = f.expr(&format!("f{}", rhs.len() + 1))? {
                rhs.push(e);
            }
            if rhs.is_empty() {
                return Err(f.missing("f1"));
            }
            let (h, _) = f.expr("h")?.ok_or_else(|| f.missing("h"))?;
            let x0 = f.numbers("x0")?.unwrap_or_else(|| vec![0.0; rhs.len()]);
            if x0.len() != rhs.len() {
                return Err(semantic(
                    f.line_of("x0"),
                    format!("{what}: x0 has {} entries for {} states", x0.len(), rhs.len()),
                ));
            }
            let ode = OdeSystem::new(rhs, h, lits(&x0))
                .map_err(|e| semantic(section.line, format!("{what}: {e}")))?;
            DynamicsKind::Ode(ode)
        }
        "delay" => {
            let tau = f.require_number("tau")?;
            if !(tau > 0.0) {
                return Err(semantic(f.line_of("tau"), format!("{what}: tau must be positive")));
            }
            DynamicsKind::Delay { tau: T::lit(tau) }
        }
        "derivative" => DynamicsKind::Derivative {
            filter_tau: f.number("filter")?.map(T::lit),
        },
        other => return Err(semantic(kind_line, format!("{what}: unknown kind '{other}'"))),
    };
    dynamics
        .check()
        .map_err(|e| semantic(section.line, format!("{what}: {e}")))?;
    let mut spec = NodeSpec::new(id, dynamics);
    if let Some((strategy, line)) = f.word("frechet")? {
        spec.frechet = match strategy.as_str() {
            "dc_gain" => FrechetStrategy::DcGain,
            "step_response" => FrechetStrategy::StepResponse {
                horizon: T::lit(f.number("horizon")?.unwrap_or(1.0)),
            },
            "linearize" => FrechetStrategy::Linearize {
                stride: f.count("stride")?.unwrap_or(1).max(1),
            },
            "constant" => FrechetStrategy::Constant(T::lit(f.require_number("value")?)),
            other => return Err(semantic(line, format!("{what}: unknown frechet strategy '{other}'"))),
        };
    }
    let output = f.boolean("output")?.unwrap_or(false);
    f.finish()?;
    Ok((spec, output))
}

fn branch_section<T: Real>(section: &Section) -> Result<Branch<T>, ScenarioError> {
    let [from, to] = section.args.as_slice() else {
        return Err(semantic(section.line, "expected [branch <from> <to>]"));
    };
    let (from, to) = (node_id(from, section.line)?, node_id(to, section.line)?);
    let mut f = Fields::new(section);
    let weight = T::lit(f.require_number("weight")?);
    let adaptive = f.boolean("adaptive")?.unwrap_or(false);
    let mut branch = if adaptive {
        Branch::adaptive(from.0, to.0, weight)
    } else {
        Branch::fixed(from.0, to.0, weight)
    };
    if let Some((label, line)) = f.string("label")? {
        if label.is_empty() || !label.chars().all(|c| c.is_alphanumeric() || c == '_') {
            return Err(semantic(line, "labels may contain only letters, digits and '_'"));
        }
        branch = branch.labeled(&label);
    }
    f.finish()?;
    Ok(branch)
}

fn input_section<T: Real>(section: &Section, s: &mut Scenario<T>) -> Result<(), ScenarioError> {
    let mut f = Fields::new(section);
    let (kind, line) = f.word("signal")?.unwrap_or_else(|| ("square".into(), section.line));
    let amplitude = T::lit(f.number("amplitude")?.unwrap_or(1.0));
    let positive = |f: &mut Fields<'_>, key: &str, default: Option<f64>| -> Result<T, ScenarioError> {
        let v = match f.number(key)? {
            Some(v) => v,
            None => default.ok_or_else(|| f.missing(key))?,
        };
        if v > 0.0 {
            Ok(T::lit(v))
        } else {
            Err(semantic(f.line_of(key), format!("`{key}` must be positive")))
        }
    };
    s.input = match kind.as_str() {
        "step" => SignalSpec::Step { amplitude },
        "square" => SignalSpec::Square {
            amplitude,
            period: positive(&mut f, "period", Some(20.0))?,
        },
        "sawtooth" => SignalSpec::Sawtooth {
            amplitude,
            period: positive(&mut f, "period", Some(20.0))?,
        },
        "sine" => SignalSpec::Sine {
            amplitude,
            frequency: positive(&mut f, "frequency", None)?,
        },
        "expr" => {
            let (e, line) = f.expr("expr")?.ok_or_else(|| f.missing("expr"))?;
            e.check_variables(0, false, true)
                .map_err(|err| semantic(line, format!("input: {err}")))?;
            SignalSpec::Expr(e)
        }
        other => return Err(semantic(line, format!("unknown signal '{other}'"))),
    };
    if let Some(x) = f.number("node")? {
        s.input_node = Some(id_from_number(x, f.line_of("node"))?);
    }
    f.finish()
}

fn learning_section<T: Real>(section: &Section, s: &mut Scenario<T>) -> Result<(), ScenarioError> {
    let mut f = Fields::new(section);
    let cfg = &mut s.learning;
    if let Some(g) = f.number("gamma")? {
        if !(g >= 0.0) {
            return Err(semantic(f.line_of("gamma"), "`gamma` must be non-negative"));
        }
        cfg.gamma = T::lit(g);
    }
    if let Some((mode, line)) = f.word("mode")? {
        cfg.mode = parse_mode(&mode).ok_or_else(|| semantic(line, format!("unknown mode '{mode}'")))?;
    }
    if let Some(x) = f.number("y_floor")? {
        cfg.y_floor = T::lit(x);
    }
    if let Some(x) = f.number("det_tol")? {
        cfg.det_tol = Some(T::lit(x));
    }
    if let Some(x) = f.number("blowup")? {
        cfg.blowup_threshold = T::lit(x);
    }
    f.finish()
}

/// `truncated` or `full`.
pub fn parse_mode(text: &str) -> Option<LearningMode> {
    match text {
        "truncated" => Some(LearningMode::Truncated),
        "full" => Some(LearningMode::FullSolve),
        _ => None,
    }
}

fn sim_section<T: Real>(section: &Section, s: &mut Scenario<T>) -> Result<(), ScenarioError> {
    let mut f = Fields::new(section);
    if let Some(dt) = f.number("dt")? {
        s.dt = T::lit(dt);
    }
    if let Some(d) = f.number("duration")? {
        s.duration = T::lit(d);
    }
    if !(s.dt > T::zero()) || !(s.duration >= s.dt) {
        return Err(semantic(section.line, "need dt > 0 and duration >= dt"));
    }
    if let Some((scheme, line)) = f.word("scheme")? {
        s.scheme = match scheme.as_str() {
            "rk4" => Scheme::Rk4,
            "euler" => Scheme::Euler,
            other => return Err(semantic(line, format!("unknown scheme '{other}'"))),
        };
    }
    if let Some(ids) = f.numbers("log")? {
        let line = f.line_of("log");
        s.log = ids
            .into_iter()
            .map(|x| id_from_number(x, line))
            .collect::<Result<_, _>>()?;
    }
    f.finish()
}

fn pairs<T: Real>(f: &mut Fields<'_>, key: &str) -> Result<Vec<(NodeId, T)>, ScenarioError> {
    let Some(entry) = f.get(key) else {
        return Ok(Vec::new());
    };
    let bad = || semantic(entry.line, format!("`{key}` must be a list of [node, value] pairs"));
    let Value::List(items) = &entry.value else {
        return Err(bad());
    };
    items
        .iter()
        .map(|item| match number_list(item).as_deref() {
            Some([id, v]) => Ok((id_from_number(*id, entry.line)?, T::lit(*v))),
            _ => Err(bad()),
        })
        .collect()
}

/// Parses and validates a scenario.
pub fn load_scenario<T: Real>(text: &str) -> Result<Scenario<T>, ScenarioError> {
    let sections = split_sections(text)?;
    let mut nodes = Vec::new();
    let mut outputs = Vec::new();
    let mut branches = Vec::new();
    let mut seen = HashSet::new();
    for s in &sections {
        if matches!(s.name.as_str(), "scenario" | "reference" | "input" | "learning" | "sim" | "gradcheck" | "check")
            && !seen.insert(s.name.clone())
        {
            return Err(semantic(s.line, format!("duplicate [{}] section", s.name)));
        }
    }
    let mut scenario_name = String::from("scenario");
    for s in &sections {
        match s.name.as_str() {
            "node" => {
                let (spec, output) = node_section::<T>(s)?;
                if output {
                    outputs.push(spec.id);
                }
                nodes.push(spec);
            }
            "branch" => branches.push(branch_section::<T>(s)?),
            "scenario" => {
                let mut f = Fields::new(s);
                if let Some((name, _)) = f.string("name")? {
                    scenario_name = name;
                }
                f.finish()?;
            }
            "reference" | "input" | "learning" | "sim" | "gradcheck" | "check" => {}
            other => return Err(semantic(s.line, format!("unknown section [{other}]"))),
        }
    }
    nodes.sort_by_key(|n| n.id);
    let graph = GsfgGraph::new(nodes, branches, outputs);
    let report = graph.validate();
    if !report.is_ok() {
        return Err(ScenarioError::Invalid(report));
    }
    let mut scenario = Scenario::new(&scenario_name, graph);
    for s in &sections {
        match s.name.as_str() {
            "reference" => {
                let mut f = Fields::new(s);
                scenario.reference = Some(transfer_function(&mut f, "reference")?);
                f.finish()?;
            }
            "input" => input_section(s, &mut scenario)?,
            "learning" => learning_section(s, &mut scenario)?,
            "sim" => sim_section(s, &mut scenario)?,
            "gradcheck" => {
                let mut f = Fields::new(s);
                scenario.gradcheck = Some(GradcheckSpec {
                    h: T::lit(f.number("h")?.unwrap_or(1e-5)),
                    inputs: pairs(&mut f, "inputs")?,
                    targets: pairs(&mut f, "targets")?,
                });
                f.finish()?;
            }
            "check" => {
                let mut f = Fields::new(s);
                let c = &mut scenario.check;
                c.window = f.number("window")?.unwrap_or(c.window);
                c.final_over_first_max = f.number("final_over_first_max")?;
                c.rate_ratio_max = f.number("rate_ratio_max")?;
                c.peak_before = f.number("peak_before")?;
                c.final_over_peak_max = f.number("final_over_peak_max")?;
                f.finish()?;
            }
            _ => {}
        }
    }
    let known = |id: &NodeId| scenario.graph.node_index(*id).is_some();
    if let Some(id) = scenario.input_node.filter(|id| !known(id)) {
        return Err(ScenarioError::Semantic {
            line: None,
            message: format!("input node {id}: unknown node"),
        });
    }
    if let Some(id) = scenario.log.iter().find(|id| !known(id)) {
        return Err(ScenarioError::Semantic {
            line: None,
            message: format!("log: unknown node {id}"),
        });
    }
    if let Some(gc) = &scenario.gradcheck {
        if let Some((id, _)) = gc.inputs.iter().chain(&gc.targets).find(|(id, _)| !known(id)) {
            return Err(ScenarioError::Semantic {
                line: None,
                message: format!("gradcheck: unknown node {id}"),
            });
        }
    }
    Ok(scenario)
}

fn num<T: Real>(x: T) -> Value {
    Value::Number(x.as_f64())
}

fn list<T: Real>(xs: &[T]) -> Value {
    Value::List(xs.iter().map(|&x| num(x)).collect())
}

fn line(out: &mut String, key: &str, value: Value) {
    let _ = writeln!(out, "{key} = {value}");
}

impl<T: Real> Scenario<T> {
    /// Canonical text form; loading it yields an equal scenario.
    pub fn to_canonical_string(&self) -> String {
        let mut out = String::new();
        out.push_str("[scenario]\n");
        line(&mut out, "name", Value::Str(self.name.clone()));
        for n in self.graph.nodes() {
            let _ = writeln!(out, "\n[node {}]", n.id);
            line(&mut out, "kind", Value::Word(n.dynamics.kind_name().into()));
            match &n.dynamics {
                DynamicsKind::Identity => {}
                DynamicsKind::Static(e) => line(&mut out, "f", Value::Str(e.to_string())),
                DynamicsKind::TransferFunction(tf) => {
                    line(&mut out, "num", list(&tf.num));
                    line(&mut out, "den", list(&tf.den));
                }
                DynamicsKind::StateSpace { system, x0 } => {
                    let rows = system.a.to_rows().iter().map(|r| list(r)).collect();
                    line(&mut out, "a", Value::List(rows));
                    line(&mut out, "b", list(&system.b));
                    line(&mut out, "c", list(&system.c));
                    line(&mut out, "d", num(system.d));
                    line(&mut out, "x0", list(x0));
                }
                DynamicsKind::Ode(ode) => {
                    for (i, f) in ode.f.iter().enumerate() {
                        line(&mut out, &format!("f{}", i + 1), Value::Str(f.to_string()));
                    }
                    line(&mut out, "h", Value::Str(ode.h.to_string()));
                    line(&mut out, "x0", list(&ode.x0));
                }
                DynamicsKind::Delay { tau } => line(&mut out, "tau", num(*tau)),
                DynamicsKind::Derivative { filter_tau } => {
                    if let Some(tau) = filter_tau {
                        line(&mut out, "filter", num(*tau));
                    }
                }
            }
            line(&mut out, "frechet", Value::Word(n.frechet.name().into()));
            match &n.frechet {
                FrechetStrategy::StepResponse { horizon } => line(&mut out, "horizon", num(*horizon)),
                FrechetStrategy::Linearize { stride } => line(&mut out, "stride", Value::Number(*stride as f64)),
                FrechetStrategy::Constant(v) => line(&mut out, "value", num(*v)),
                FrechetStrategy::DcGain => {}
            }
            if self.graph.is_output(n.id) {
                line(&mut out, "output", Value::Word("true".into()));
            }
        }
        for b in self.graph.branches() {
            let _ = writeln!(out, "\n[branch {} {}]", b.from, b.to);
            line(&mut out, "weight", num(b.initial_weight));
            line(&mut out, "adaptive", Value::Word(b.adaptive.to_string()));
            if let Some(label) = &b.label {
                line(&mut out, "label", Value::Str(label.clone()));
            }
        }
        if let Some(r) = &self.reference {
            out.push_str("\n[reference]\n");
            line(&mut out, "num", list(&r.num));
            line(&mut out, "den", list(&r.den));
        }
        out.push_str("\n[input]\n");
        line(&mut out, "signal", Value::Word(self.input.kind_name().into()));
        match &self.input {
            SignalSpec::Step { amplitude } => line(&mut out, "amplitude", num(*amplitude)),
            SignalSpec::Square { amplitude, period } | SignalSpec::Sawtooth { amplitude, period } => {
                line(&mut out, "amplitude", num(*amplitude));
                line(&mut out, "period", num(*period));
            }
            SignalSpec::Sine {
                amplitude,
                frequency,
            } => {
                line(&mut out, "amplitude", num(*amplitude));
                line(&mut out, "frequency", num(*frequency));
            }
            SignalSpec::Expr(e) => line(&mut out, "expr", Value::Str(e.to_string())),
        }
        if let Some(id) = self.input_node {
            line(&mut out, "node", Value::Number(id.0 as f64));
        }
        let l = &self.learning;
        out.push_str("\n[learning]\n");
        line(&mut out, "gamma", num(l.gamma));
        line(&mut out, "mode", Value::Word(l.mode.name().into()));
        line(&mut out, "y_floor", num(l.y_floor));
        if let Some(tol) = l.det_tol {
            line(&mut out, "det_tol", num(tol));
        }
        line(&mut out, "blowup", num(l.blowup_threshold));
        out.push_str("\n[sim]\n");
        line(&mut out, "dt", num(self.dt));
        line(&mut out, "duration", num(self.duration));
        line(&mut out, "scheme", Value::Word(self.scheme.name().into()));
        if !self.log.is_empty() {
            let ids = self.log.iter().map(|id| Value::Number(id.0 as f64)).collect();
            line(&mut out, "log", Value::List(ids));
        }
        if let Some(gc) = &self.gradcheck {
            out.push_str("\n[gradcheck]\n");
            line(&mut out, "h", num(gc.h));
            let pairs = |items: &[(NodeId, T)]| {
                Value::List(
                    items
                        .iter()
                        .map(|(id, v)| Value::List(vec![Value::Number(id.0 as f64), num(*v)]))
                        .collect(),
                )
            };
            line(&mut out, "inputs", pairs(&gc.inputs));
            line(&mut out, "targets", pairs(&gc.targets));
        }
        let c = &self.check;
        if *c != CheckSpec::default() {
            out.push_str("\n[check]\n");
            line(&mut out, "window", Value::Number(c.window));
            for (key, v) in [
                ("final_over_first_max", c.final_over_first_max),
                ("rate_ratio_max", c.rate_ratio_max),
                ("peak_before", c.peak_before),
                ("final_over_peak_max", c.final_over_peak_max),
            ] {
                if let Some(v) = v {
                    line(&mut out, key, Value::Number(v));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PID: &str = r#"
[scenario]
name = "pid"

[node 1]
kind = tf
num = [1]
den = [1, 0]
[node 2]
kind = tf
num = [1]
den = [1]
[node 3]
kind = derivative
[node 4]
kind = tf
num = [1]
den = [1, 6, 11, 6]   # G1
output = true
[node 5]
kind = identity
[node 6]
kind = identity
[node 7]
kind = identity
[node 8]
kind = identity

[branch 1 4]
weight = 8
adaptive = true
label = "K_I"
[branch 2 4]
weight = 12
adaptive = true
label = "K_P"
[branch 3 4]
weight = 4
adaptive = true
label = "K_D"
[branch 5 6]
weight = 1
[branch 4 6]
weight = -1
[branch 6 7]
weight = 1
[branch 7 1]
weight = 1
[branch 7 2]
weight = 1
[branch 7 3]
weight = 1
[branch 4 8]
weight = 1

[reference]
num = [1, 1200, 900]
den = [1, 100, 600, 1500, 1800, 900]

[learning]
gamma = 2
"#;

    #[test]
    fn loads_pid_scenario() {
        let s = load_scenario::<f64>(PID).unwrap();
        assert_eq!(s.name, "pid");
        assert_eq!(s.graph.node_count(), 8);
        assert_eq!(s.graph.branch_count(), 10);
        assert_eq!(s.learning.gamma, 2.0);
        assert_eq!(s.dt, 1e-3);
        assert!(s.graph.is_output(NodeId(4)));
        assert!(matches!(
            &s.graph.node(NodeId(4)).unwrap().dynamics,
            DynamicsKind::TransferFunction(tf) if tf.den == vec![1.0, 6.0, 11.0, 6.0]
        ));
        assert!(matches!(s.input, SignalSpec::Square { .. }));
    }

    #[test]
    fn canonical_print_is_a_fixed_point() {
        let s = load_scenario::<f64>(PID).unwrap();
        let printed = s.to_canonical_string();
        let again = load_scenario::<f64>(&printed).unwrap();
        assert_eq!(again, s);
        assert_eq!(again.to_canonical_string(), printed);
    }

    #[test]
    fn empty_denominator_is_semantic() {
        let text = "[node 1]\nkind = tf\nnum = [1]\nden = []\n";
        match load_scenario::<f64>(text) {
            Err(ScenarioError::Semantic { line, message }) => {
                assert_eq!(line, Some(4));
                assert!(message.contains("empty denominator"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_errors_have_positions() {
        match load_scenario::<f64>("[node 1]\nkind = identity\nweight = [1, 2\n") {
            Err(ScenarioError::Parse { line, column, .. }) => assert_eq!((line, column), (3, 15)),
            other => panic!("{other:?}"),
        }
        match load_scenario::<f64>("kind = identity\n") {
            Err(ScenarioError::Parse { line: 1, message, .. }) => assert!(message.contains("outside")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            load_scenario::<f64>("[node 1\n"),
            Err(ScenarioError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn semantic_errors() {
        for (text, needle) in [
            ("[node 1]\nkind = warp\n", "unknown kind"),
            ("[node 1]\nkind = identity\ncolour = 3\n", "unknown key"),
            ("[node 1]\nkind = tf\nnum = [1, 2, 3]\nden = [1, 1]\n", "improper"),
            ("[node 1]\nkind = static\nf = \"sin(x1)\"\n", "x1"),
            ("[node 1]\nkind = identity\n[node 1]\nkind = identity\n", "duplicate"),
            ("[node 1]\nkind = identity\n[input]\nnode = 4\n", "unknown node"),
            ("[wat]\n", "unknown section"),
        ] {
            let err = load_scenario::<f64>(text).unwrap_err().to_string();
            assert!(err.contains(needle), "{text:?}: {err}");
        }
        let err = load_scenario::<f64>("[node 1]\nkind = identity\n[branch 1 9]\nweight = 1\n").unwrap_err();
        assert_eq!(err.to_string().trim(), "invalid graph:\nbranch 1→9: unknown node");
    }

    #[test]
    fn every_kind_round_trips() {
        let text = r#"
[node 1]
kind = static
f = "1/(1+exp(-u))"
[node 2]
kind = ss
a = [[0, 1], [-2, -3]]
b = [0, 1]
c = [1, 0]
d = 0.5
x0 = [0.1, 0]
frechet = constant
value = 0.25
[node 3]
kind = ode
f1 = "-x1 + u"
h = "x1"
frechet = linearize
stride = 5
[node 4]
kind = delay
tau = 0.03
frechet = step_response
horizon = 2
[node 5]
kind = derivative
filter = 0.01
output = true
[branch 1 2]
weight = 0.1
[input]
signal = expr
expr = "sin(t) + 2"
node = 1
[learning]
mode = full
det_tol = 1e-12
[sim]
scheme = euler
log = [5, 2]
[gradcheck]
inputs = [[1, 0.5]]
targets = [[5, 1]]
[check]
final_over_first_max = 0.1
"#;
        let s = load_scenario::<f64>(text).unwrap();
        assert_eq!(s.learning.mode, LearningMode::FullSolve);
        assert_eq!(s.log, vec![NodeId(5), NodeId(2)]);
        let again = load_scenario::<f64>(&s.to_canonical_string()).unwrap();
        assert_eq!(again, s);
        let single = load_scenario::<f32>(&s.to_canonical_string()).unwrap();
        assert_eq!(load_scenario::<f32>(&single.to_canonical_string()).unwrap(), single);
    }
}
