use std::path::PathBuf;

use gsfg::graph::NodeId;
use gsfg::scenario::{load_scenario, Scenario};
use gsfg::sim::{Simulation, SignalSpec};

fn shipped() -> Vec<PathBuf> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "gsfg"))
        .collect();
    files.sort();
    files
}

fn load(path: &PathBuf) -> Scenario<f64> {
    load_scenario(&std::fs::read_to_string(path).unwrap())
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn every_shipped_file_loads_and_validates() {
    let files = shipped();
    assert!(files.len() >= 5);
    for path in &files {
        let s = load(path);
        assert!(s.graph.validate().is_ok(), "{}", path.display());
        if s.reference.is_some() {
            Simulation::new(&s).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        }
        let printed = s.to_canonical_string();
        let again: Scenario<f64> = load_scenario(&printed).unwrap();
        assert_eq!(again.to_canonical_string(), printed, "{}", path.display());
    }
}

#[test]
fn pid_scenarios_share_reference_and_initial_gains() {
    for name in ["stable_plant", "unstable_plant", "delayed_plant", "nonlinear_plant"] {
        let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
            .join("../../scenarios")
            .join(format!("{name}.gsfg"));
        let s = load(&path);
        assert_eq!(s.name, name);
        let h = s.reference.as_ref().unwrap();
        assert_eq!(h.num, [1.0, 1200.0, 900.0]);
        assert_eq!(h.den, [1.0, 100.0, 600.0, 1500.0, 1800.0, 900.0]);
        let gains: Vec<(String, f64)> = s
            .graph
            .branches()
            .iter()
            .filter(|b| b.adaptive)
            .map(|b| (b.name(), b.initial_weight))
            .collect();
        assert_eq!(
            gains,
            [("K_I".to_string(), 8.0), ("K_P".to_string(), 12.0), ("K_D".to_string(), 4.0)],
            "{name}"
        );
        assert!(s.graph.is_output(NodeId(4)));
        assert_eq!(
            s.input,
            SignalSpec::Square {
                amplitude: 1.0,
                period: 20.0
            }
        );
        assert_eq!(s.duration, 200.0);
    }
}
