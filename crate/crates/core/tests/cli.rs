use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gsfg::scenario::{read_csv, Summary};

fn gsfg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsfg")).args(args).output().unwrap()
}

fn scenario(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.gsfg"))
        .to_string_lossy()
        .into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const LAG: &str = "\
[node 1]
kind = identity

[node 2]
kind = tf
num = [1]
den = [1, 1]
output = true

[branch 1 2]
weight = 0.5
adaptive = true
label = \"K\"

[reference]
num = [1]
den = [1, 1]

[input]
signal = step

[sim]
dt = 0.01
duration = 5
";

#[test]
fn validate_reports_counts() {
    let o = gsfg(&["validate", &scenario("delayed_plant")]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        stdout(&o).trim(),
        "delayed_plant: ok (9 nodes, 11 branches, 3 adaptive, outputs [4])"
    );
}

#[test]
fn validate_flags_algebraic_loops() {
    let dir = tempfile::tempdir().unwrap();
    let looped = write(
        dir.path(),
        "loop.gsfg",
        "[node 1]\nkind = identity\n\n[node 2]\nkind = identity\noutput = true\n\n[node 3]\nkind = identity\n\n\
         [branch 1 2]\nweight = 1\n\n[branch 2 3]\nweight = 0.5\n\n[branch 3 2]\nweight = 1\n\n\
         [reference]\nnum = [1]\nden = [1, 1]\n",
    );
    let o = gsfg(&["validate", &looped]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("algebraic loop"));
}

#[test]
fn dangling_branch_is_rejected_at_load() {
    let dir = tempfile::tempdir().unwrap();
    let dangling = write(
        dir.path(),
        "dangling.gsfg",
        "[node 1]\nkind = identity\noutput = true\n\n[branch 1 7]\nweight = 1\n",
    );
    let o = gsfg(&["validate", &dangling]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains('7'));
}

#[test]
fn parse_errors_exit_two_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.gsfg", "[node 1]\nkind = identity\nweight = = 3\n");
    let o = gsfg(&["run", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn run_converging_lag_passes() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "lag.gsfg", LAG);
    let csv = dir.path().join("lag.csv");
    let summary = dir.path().join("lag.txt");
    let o = gsfg(&[
        "run",
        &file,
        "--csv",
        csv.to_str().unwrap(),
        "--summary",
        summary.to_str().unwrap(),
        "--gamma",
        "4",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).is_empty());
    let doc = Summary::parse(&std::fs::read_to_string(&summary).unwrap());
    assert_eq!(doc.get("status"), Some("ok"));
    assert_eq!(doc.get("gamma"), Some("4"));
    let k: f64 = doc.get("final_K").unwrap().parse().unwrap();
    assert!((k - 1.0).abs() < 0.1, "{k}");
    let table = read_csv(std::fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(table.header, ["t", "y_2", "w_1_2", "E"]);
    assert_eq!(table.rows.len(), 500);
}

#[test]
fn frozen_gains_run_exits_zero() {
    let o = gsfg(&["run", &scenario("stable_plant"), "--gamma", "0", "--duration", "40"]);
    assert_eq!(o.status.code(), Some(0));
    let doc = Summary::parse(&stdout(&o));
    assert_eq!(doc.get("status"), Some("ok"));
    assert_eq!(doc.get("final_K_P"), Some("12"));
    assert_eq!(doc.get("final_K_I"), Some("8"));
    assert_eq!(doc.get("final_K_D"), Some("4"));
    assert_eq!(doc.get("override_gamma"), Some("0"));
    assert_eq!(doc.get("override_duration"), Some("40"));
    // the check flags are reported, not enforced through the exit status
    assert_eq!(doc.get("checks"), Some("fail"));
}

#[test]
fn divergence_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "lag.gsfg", &LAG.replace("den = [1, 1]\noutput", "den = [1, -5]\noutput"));
    let o = gsfg(&["run", &file, "--duration", "20"]);
    assert_eq!(o.status.code(), Some(1));
    let doc = Summary::parse(&stdout(&o));
    assert_eq!(doc.get("status"), Some("diverged"));
    assert!(doc.get("diverged_at").unwrap().parse::<f64>().unwrap() < 20.0);
}

#[test]
fn gradcheck_passes_on_sigmoid_network() {
    let o = gsfg(&["gradcheck", &scenario("sigmoid_221")]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 8);
    let max: f64 = text
        .lines()
        .last()
        .unwrap()
        .trim_start_matches("max_rel_error ")
        .parse()
        .unwrap();
    assert!(max < 1e-6);
}

#[test]
fn gradcheck_without_section_is_usage_error() {
    let o = gsfg(&["gradcheck", &scenario("stable_plant")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn poles_lists_every_transfer_function() {
    let o = gsfg(&["poles", &scenario("unstable_plant")]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with("reference:\n  -93.769773\n"));
    assert!(text.contains("node 4:\n"));
    // s^3 + 6s^2 + 11s - 6 has one root in the right half plane
    let node4: Vec<f64> = text
        .split("node 4:\n")
        .nth(1)
        .unwrap()
        .lines()
        .take_while(|l| l.starts_with("  "))
        .map(|l| l.split_whitespace().next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(node4.len(), 3);
    assert_eq!(node4.iter().filter(|&&re| re > 0.0).count(), 1);
}

#[test]
fn sweep_is_sorted_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "lag.gsfg", LAG);
    let args = ["sweep", &file, "--gamma-from", "3", "--gamma-to", "0", "--steps", "4"];
    let a = gsfg(&args);
    let b = gsfg(&[&args[..], &["--jobs", "1"]].concat());
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(stdout(&a), stdout(&b));
    let gammas: Vec<f64> = stdout(&a)
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(gammas, [0.0, 1.0, 2.0, 3.0]);
}

#[test]
fn sweep_rejects_empty_grid() {
    let o = gsfg(&["sweep", &scenario("stable_plant"), "--gamma-from", "0", "--gamma-to", "1", "--steps", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_workers_can_log_warnings() {
    // the integrator's Fréchet fallback warns from inside each worker
    let o = gsfg(&["sweep", &scenario("stable_plant"), "--gamma-from", "0", "--gamma-to", "1", "--steps", "2", "--duration", "1"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pole at the origin"));
    assert_eq!(stdout(&o).lines().count(), 3);
}
