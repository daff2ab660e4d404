use std::fmt;
use std::io::{Read, Write};

use crate::scalar::Real;
use crate::sim::{metrics, Metrics, SimError, SimulationTrace};

use super::Scenario;

/// Header and numeric rows of a trace CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }
}

/// Writes `t, y_<id>..., w_<i>_<j>..., E` with one row per step: logged
/// nodes and adaptive branches. Values carry 17 significant digits so they
/// read back exactly. Returns the number of data rows.
pub fn write_csv<T: Real, W: Write>(trace: &SimulationTrace<T>, out: W) -> csv::Result<usize> {
    let mut w = csv::Writer::from_writer(out);
    let nodes: Vec<usize> = trace
        .logged_nodes
        .iter()
        .filter_map(|&id| trace.node_index(id))
        .collect();
    let branches: Vec<usize> = (0..trace.adaptive.len()).filter(|&l| trace.adaptive[l]).collect();
    let mut header = vec!["t".to_string()];
    header.extend(nodes.iter().map(|&j| format!("y_{}", trace.node_ids[j])));
    header.extend(branches.iter().map(|&l| {
        let (i, j) = trace.branch_keys[l];
        format!("w_{i}_{j}")
    }));
    header.push("E".to_string());
    w.write_record(&header)?;
    let fmt = |v: T| format!("{:.16e}", v.as_f64());
    for k in 0..trace.len() {
        let mut row = Vec::with_capacity(header.len());
        row.push(fmt(trace.t[k]));
        row.extend(nodes.iter().map(|&j| fmt(trace.y[j][k])));
        row.extend(branches.iter().map(|&l| fmt(trace.weights[l][k])));
        row.push(fmt(trace.e_value[k]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(trace.len())
}

/// Reads a CSV written by [`write_csv`].
pub fn read_csv<R: Read>(input: R) -> Result<CsvTable, Box<dyn std::error::Error + Send + Sync>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record?;
        rows.push(record.iter().map(str::parse::<f64>).collect::<Result<Vec<_>, _>>()?);
    }
    Ok(CsvTable { header, rows })
}

/// Ordered `key: value` document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub entries: Vec<(String, String)>,
}

impl Summary {
    pub fn push(&mut self, key: impl Into<String>, value: impl fmt::Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Parses the text form back into entries.
    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .filter_map(|l| l.split_once(": "))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Self { entries }
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}: {v}")?;
        }
        Ok(())
    }
}

fn flag(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

/// Summary of a (possibly interrupted) run: configuration, status, final
/// adaptive weights, first/final window statistics and the scenario's
/// check flags. `overrides` are echoed as `override_<key>` entries.
pub fn summary<T: Real>(
    scenario: &Scenario<T>,
    trace: &SimulationTrace<T>,
    fault: Option<&SimError>,
    overrides: &[(String, String)],
) -> Summary {
    let mut s = Summary::default();
    s.push("scenario", &scenario.name);
    s.push("status", fault.map_or("ok", SimError::status));
    if let Some(e) = fault {
        let at = e.time().or_else(|| trace.t.last().map(|t| t.as_f64()));
        if let Some(t) = at.filter(|_| e.status() == "diverged") {
            s.push("diverged_at", t);
        }
        s.push("error", e.to_string().replace('\n', "; "));
    }
    s.push("gamma", scenario.learning.gamma);
    s.push("mode", scenario.learning.mode.name());
    s.push("dt", scenario.dt);
    s.push("duration", scenario.duration);
    s.push("scheme", scenario.scheme.name());
    for (k, v) in overrides {
        s.push(format!("override_{k}"), v);
    }
    s.push("steps", trace.len());
    for (l, name) in trace.branch_names.iter().enumerate() {
        if trace.adaptive[l] {
            if let Some(w) = trace.weights[l].last() {
                s.push(format!("final_{name}"), w);
            }
        }
    }
    for note in &trace.diagnostics {
        s.push("warning", note);
    }
    let Some(end) = trace.t.last().map(|t| t.as_f64()) else {
        return s;
    };
    let window = scenario.check.window;
    let whole = metrics(trace, 0.0, end);
    let first = metrics(trace, 0.0, window);
    let last = metrics(trace, end - window, end);
    let (Ok(whole), Ok(first), Ok(last)) = (whole, first, last) else {
        return s;
    };
    s.push("window", window);
    s.push("first_window_rms", first.rms_error);
    s.push("final_window_rms", last.rms_error);
    s.push("max_abs_error", whole.max_abs_error);
    s.push("max_abs_error_at", whole.max_abs_error_at);
    s.push("first_window_rate_norm", first.mean_rate_norm);
    s.push("final_window_rate_norm", last.mean_rate_norm);
    let complete = fault.is_none();
    checks(&mut s, scenario, &first, &last, &whole, complete);
    s
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        a / b
    }
}

fn checks<T: Real>(s: &mut Summary, scenario: &Scenario<T>, first: &Metrics, last: &Metrics, whole: &Metrics, complete: bool) {
    let c = &scenario.check;
    let mut all = complete;
    let mut any = false;
    let mut record = |s: &mut Summary, key: &str, value: f64, ok: bool| {
        s.push(key, value);
        s.push(format!("check_{key}"), flag(ok && complete));
        all &= ok;
        any = true;
    };
    if let Some(max) = c.final_over_first_max {
        let r = ratio(last.rms_error, first.rms_error);
        record(s, "final_over_first", r, r <= max);
    }
    if let Some(max) = c.rate_ratio_max {
        let r = ratio(last.mean_rate_norm, first.mean_rate_norm);
        record(s, "rate_ratio", r, r <= max);
    }
    if let Some(before) = c.peak_before {
        record(s, "peak_time", whole.max_abs_error_at, whole.max_abs_error_at < before);
    }
    if let Some(max) = c.final_over_peak_max {
        let r = ratio(last.rms_error, whole.max_abs_error);
        record(s, "final_over_peak", r, r <= max);
    }
    if any {
        s.push("checks", flag(all));
    }
}
