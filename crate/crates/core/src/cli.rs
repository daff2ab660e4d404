//! Command-line front end. Exit status: 0 success, 1 the scenario failed
//! (divergence, singular learning system, gradcheck over tolerance), 2 usage or input
//! errors.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::learning::{gradcheck, GradcheckOptions, LearningMode};
use crate::poles::{format_root, roots};
use crate::scenario::{load_scenario, parse_mode, summary, write_csv, Scenario};
use crate::sim::{metrics, run_partial, run_recording, Record, Simulation};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Largest relative error accepted by `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "gsfg", version, about = "Signal-flow graph simulation with online gain adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Overrides {
    /// Adaptation rate
    #[arg(long)]
    gamma: Option<f64>,
    /// Step size in seconds
    #[arg(long)]
    dt: Option<f64>,
    /// Simulated time in seconds
    #[arg(long)]
    duration: Option<f64>,
    /// Learning mode: truncated or full
    #[arg(long, value_parser = mode_arg)]
    mode: Option<LearningMode>,
}

fn mode_arg(s: &str) -> Result<LearningMode, String> {
    parse_mode(s).ok_or_else(|| format!("unknown mode '{s}' (expected truncated or full)"))
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a scenario and check its structure
    Validate { file: PathBuf },
    /// Simulate a scenario
    Run {
        file: PathBuf,
        /// Trace output
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Summary output (stdout when omitted)
        #[arg(long)]
        summary: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Compare the learning law against finite differences of E
    Gradcheck {
        file: PathBuf,
        /// Perturbation size
        #[arg(long)]
        h: Option<f64>,
    },
    /// Print the poles of every transfer function in the scenario
    Poles { file: PathBuf },
    /// Run the scenario over a range of adaptation rates
    Sweep {
        file: PathBuf,
        #[arg(long)]
        gamma_from: f64,
        #[arg(long)]
        gamma_to: f64,
        #[arg(long)]
        steps: usize,
        /// Concurrent runs (defaults to the available parallelism)
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long, value_parser = mode_arg)]
        mode: Option<LearningMode>,
    },
}

struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

fn load(path: &Path, io: &mut Io<'_>) -> Result<Scenario<f64>, i32> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        let _ = writeln!(io.err, "error: cannot read {}: {e}", path.display());
        EXIT_USAGE
    })?;
    load_scenario(&text).map_err(|e| {
        let _ = writeln!(io.err, "error: {}: {e}", path.display());
        EXIT_USAGE
    })
}

fn apply(s: &mut Scenario<f64>, o: &Overrides) -> Result<Vec<(String, String)>, String> {
    let mut echoed = Vec::new();
    if let Some(g) = o.gamma {
        if !(g >= 0.0) {
            return Err("--gamma must be non-negative".into());
        }
        s.learning.gamma = g;
        echoed.push(("gamma".into(), g.to_string()));
    }
    if let Some(dt) = o.dt {
        if !(dt > 0.0) {
            return Err("--dt must be positive".into());
        }
        s.dt = dt;
        echoed.push(("dt".into(), dt.to_string()));
    }
    if let Some(d) = o.duration {
        if !(d >= s.dt) {
            return Err("--duration must be at least dt".into());
        }
        s.duration = d;
        echoed.push(("duration".into(), d.to_string()));
    }
    if let Some(m) = o.mode {
        s.learning.mode = m;
        echoed.push(("mode".into(), m.name().into()));
    }
    Ok(echoed)
}

fn create(path: &Path, io: &mut Io<'_>) -> Result<BufWriter<File>, i32> {
    File::create(path).map(BufWriter::new).map_err(|e| {
        let _ = writeln!(io.err, "error: cannot write {}: {e}", path.display());
        EXIT_USAGE
    })
}

fn validate(file: &Path, io: &mut Io<'_>) -> Result<i32, i32> {
    let s = load(file, io)?;
    if let Err(e) = Simulation::new(&s) {
        let _ = writeln!(io.err, "error: {}: {e}", file.display());
        return Ok(EXIT_FAILURE);
    }
    let g = &s.graph;
    let adaptive = g.branches().iter().filter(|b| b.adaptive).count();
    let outputs: Vec<String> = g.outputs().iter().map(|o| o.to_string()).collect();
    let _ = writeln!(
        io.out,
        "{}: ok ({} nodes, {} branches, {} adaptive, outputs [{}])",
        s.name,
        g.node_count(),
        g.branch_count(),
        adaptive,
        outputs.join(", ")
    );
    Ok(EXIT_OK)
}

fn run(
    file: &Path,
    csv: Option<&Path>,
    summary_path: Option<&Path>,
    overrides: &Overrides,
    io: &mut Io<'_>,
) -> Result<i32, i32> {
    let mut s = load(file, io)?;
    let echoed = apply(&mut s, overrides).map_err(|e| {
        let _ = writeln!(io.err, "error: {e}");
        EXIT_USAGE
    })?;
    let (trace, fault) = run_partial(&s);
    if let Some(e) = &fault {
        let _ = writeln!(io.err, "error: {e}");
    }
    if let Some(path) = csv {
        let mut w = create(path, io)?;
        if let Err(e) = write_csv(&trace, &mut w).map(|_| ()).and_then(|_| Ok(w.flush()?)) {
            let _ = writeln!(io.err, "error: cannot write {}: {e}", path.display());
            return Err(EXIT_USAGE);
        }
    }
    let doc = summary(&s, &trace, fault.as_ref(), &echoed);
    match summary_path {
        Some(path) => {
            let mut w = create(path, io)?;
            if let Err(e) = write!(w, "{doc}").and_then(|_| w.flush()) {
                let _ = writeln!(io.err, "error: cannot write {}: {e}", path.display());
                return Err(EXIT_USAGE);
            }
        }
        None => {
            let _ = write!(io.out, "{doc}");
        }
    }
    Ok(if fault.is_some() { EXIT_FAILURE } else { EXIT_OK })
}

fn gradcheck_cmd(file: &Path, h: Option<f64>, io: &mut Io<'_>) -> Result<i32, i32> {
    let s = load(file, io)?;
    let Some(spec) = &s.gradcheck else {
        let _ = writeln!(io.err, "error: {} has no [gradcheck] section", file.display());
        return Err(EXIT_USAGE);
    };
    let inputs: BTreeMap<_, _> = spec.inputs.iter().copied().collect();
    let targets: BTreeMap<_, _> = spec.targets.iter().copied().collect();
    let opts = GradcheckOptions {
        gamma: s.learning.gamma,
        h: h.unwrap_or(spec.h),
        y_floor: s.learning.y_floor,
    };
    match gradcheck(&s.graph, &inputs, &targets, opts) {
        Ok(report) => {
            let _ = writeln!(io.out, "{report}");
            Ok(if report.max_rel_error < GRADCHECK_TOLERANCE {
                EXIT_OK
            } else {
                EXIT_FAILURE
            })
        }
        Err(e) => {
            let _ = writeln!(io.err, "error: {e}");
            Ok(EXIT_FAILURE)
        }
    }
}

fn poles_cmd(file: &Path, io: &mut Io<'_>) -> Result<i32, i32> {
    let s = load(file, io)?;
    for (label, tf) in s.transfer_functions() {
        let _ = writeln!(io.out, "{label}:");
        let r = roots(&tf.den);
        if r.is_empty() {
            let _ = writeln!(io.out, "  (none)");
        }
        for z in r {
            let _ = writeln!(io.out, "  {}", format_root(z));
        }
    }
    Ok(EXIT_OK)
}

/// `steps` evenly spaced values from `a` to `b` inclusive.
fn grid(a: f64, b: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![a],
        n => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

struct SweepRow {
    gamma: f64,
    status: String,
    first: f64,
    last: f64,
    weights: Vec<(String, f64)>,
}

fn sweep_one(base: &Scenario<f64>, gamma: f64) -> SweepRow {
    let mut s = base.clone();
    s.learning.gamma = gamma;
    let (trace, fault) = run_recording(&s, Record::Light);
    let window = s.check.window;
    let end = trace.t.last().copied().unwrap_or(0.0);
    let first = metrics(&trace, 0.0, window).map_or(f64::NAN, |m| m.rms_error);
    let last = metrics(&trace, end - window, end).map_or(f64::NAN, |m| m.rms_error);
    let weights = metrics(&trace, 0.0, end).map_or_else(|_| Vec::new(), |m| m.final_weights);
    SweepRow {
        gamma,
        status: fault.map_or_else(|| "ok".to_string(), |e| e.status().to_string()),
        first,
        last,
        weights,
    }
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    file: &Path,
    from: f64,
    to: f64,
    steps: usize,
    jobs: Option<usize>,
    overrides: &Overrides,
    io: &mut Io<'_>,
) -> Result<i32, i32> {
    let mut base = load(file, io)?;
    apply(&mut base, overrides).map_err(|e| {
        let _ = writeln!(io.err, "error: {e}");
        EXIT_USAGE
    })?;
    if steps == 0 || !from.is_finite() || !to.is_finite() || from < 0.0 || to < 0.0 {
        let _ = writeln!(io.err, "error: need --steps >= 1 and non-negative gamma bounds");
        return Err(EXIT_USAGE);
    }
    let mut gammas = grid(from, to, steps);
    gammas.sort_by(f64::total_cmp);
    let jobs = jobs
        .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
        .unwrap_or(1)
        .clamp(1, gammas.len());
    let mut rows: Vec<Option<SweepRow>> = (0..gammas.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let base = &base;
        let handles: Vec<_> = (0..jobs)
            .map(|w| {
                let mine: Vec<(usize, f64)> = gammas
                    .iter()
                    .copied()
                    .enumerate()
                    .filter(|(i, _)| i % jobs == w)
                    .collect();
                scope.spawn(move || {
                    mine.into_iter()
                        .map(|(i, g)| (i, sweep_one(base, g)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, row) in h.join().expect("sweep worker panicked") {
                rows[i] = Some(row);
            }
        }
    });
    let rows: Vec<SweepRow> = rows.into_iter().map(|r| r.expect("every gamma ran")).collect();
    let names: Vec<String> = rows
        .iter()
        .find(|r| !r.weights.is_empty())
        .map(|r| r.weights.iter().map(|(n, _)| n.clone()).collect())
        .unwrap_or_default();
    let mut header = format!("{:>12} {:>9} {:>14} {:>14} {:>10}", "gamma", "status", "first_rms", "final_rms", "ratio");
    for n in &names {
        header.push_str(&format!(" {:>12}", format!("final_{n}")));
    }
    let _ = writeln!(io.out, "{header}");
    for r in &rows {
        let ratio = r.last / r.first;
        let mut line = format!(
            "{:>12.6} {:>9} {:>14.6e} {:>14.6e} {:>10.4}",
            r.gamma, r.status, r.first, r.last, ratio
        );
        for (_, w) in &r.weights {
            line.push_str(&format!(" {:>12.6}", w));
        }
        let _ = writeln!(io.out, "{line}");
    }
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name) and runs the command,
/// writing results to `out` and diagnostics to `err`.
pub fn dispatch_to<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    let mut io = Io { out, err };
    let result = match &cli.command {
        Command::Validate { file } => validate(file, &mut io),
        Command::Run {
            file,
            csv,
            summary,
            overrides,
        } => run(file, csv.as_deref(), summary.as_deref(), overrides, &mut io),
        Command::Gradcheck { file, h } => gradcheck_cmd(file, *h, &mut io),
        Command::Poles { file } => poles_cmd(file, &mut io),
        Command::Sweep {
            file,
            gamma_from,
            gamma_to,
            steps,
            jobs,
            dt,
            duration,
            mode,
        } => {
            let overrides = Overrides {
                gamma: None,
                dt: *dt,
                duration: *duration,
                mode: *mode,
            };
            sweep(file, *gamma_from, *gamma_to, *steps, *jobs, &overrides, &mut io)
        }
    };
    result.unwrap_or_else(|code| code)
}

/// [`dispatch_to`] on the process's standard streams.
pub fn dispatch<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    // stderr stays unlocked so worker threads can still log
    dispatch_to(args, &mut std::io::stdout().lock(), &mut std::io::stderr())
}
