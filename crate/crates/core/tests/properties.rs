use std::collections::BTreeMap;

use gsfg::dynamics::{
    dc_gain, linearize, step_response_value, DynamicsKind, Node, NodeSpec, OdeSystem, Scheme,
    TransferFunction,
};
use gsfg::expr::{parse, Env, Var};
use gsfg::graph::{assemble_phi, Branch, GsfgGraph, NodeId, PhiOptions, Snapshot};
use gsfg::learning::{
    apply_rates, error_and_partials, evaluate_static, static_slopes, weight_rates,
    weight_rates_full, weight_rates_truncated, LearningConfig, LearningMode, LearningState,
};
use gsfg::scenario::{load_scenario, Scenario};
use gsfg::sim::run;
use proptest::prelude::*;

const FUNCS: [&str; 4] = ["tanh(u)", "1/(1 + exp(-u))", "0.5*u + 0.1*u^3", "sin(u) + 1.5"];

#[derive(Debug, Clone)]
struct Dag {
    n: u32,
    edges: Vec<(u32, u32, f64, bool)>,
    kinds: Vec<usize>,
    input: f64,
}

/// Node 1 is the only input; every other node gets an edge from a lower id.
fn dag() -> impl Strategy<Value = Dag> {
    (3u32..=8).prop_flat_map(|n| {
        let pairs: Vec<(u32, u32)> = (2..=n).flat_map(|j| (1..j).map(move |i| (i, j))).collect();
        let count = pairs.len();
        (
            Just(n),
            Just(pairs),
            prop::collection::vec((any::<bool>(), -1.5f64..1.5, prop::bool::weighted(0.7)), count),
            prop::collection::vec(0usize..=FUNCS.len(), n as usize),
            0.3f64..1.2,
        )
            .prop_map(|(n, pairs, picks, kinds, input)| {
                let mut edges: Vec<(u32, u32, f64, bool)> = pairs
                    .iter()
                    .zip(&picks)
                    .filter(|((i, j), (keep, _, _))| *keep || *i == j - 1)
                    .map(|(&(i, j), &(_, w, adaptive))| (i, j, w, adaptive))
                    .collect();
                edges.sort_by_key(|e| (e.1, e.0));
                Dag {
                    n,
                    edges,
                    kinds,
                    input,
                }
            })
    })
}

struct Built {
    graph: GsfgGraph<f64>,
    y: Vec<f64>,
    frechet: Vec<f64>,
    partials: Vec<f64>,
}

fn build(d: &Dag) -> Built {
    let nodes = (1..=d.n)
        .map(|j| {
            let k = d.kinds[j as usize - 1];
            if j == 1 || k == FUNCS.len() {
                NodeSpec::identity(j)
            } else {
                NodeSpec::new(j, DynamicsKind::Static(parse(FUNCS[k]).unwrap()))
            }
        })
        .collect();
    let branches = d
        .edges
        .iter()
        .map(|&(i, j, w, a)| if a { Branch::adaptive(i, j, w) } else { Branch::fixed(i, j, w) })
        .collect();
    let sinks: Vec<NodeId> = (2..=d.n)
        .filter(|&j| d.edges.iter().all(|e| e.0 != j))
        .map(NodeId)
        .collect();
    let graph = GsfgGraph::new(nodes, branches, sinks.clone());
    let external = BTreeMap::from([(NodeId(1), d.input)]);
    let targets: BTreeMap<NodeId, f64> = sinks.iter().map(|&o| (o, 0.25)).collect();
    let w = graph.initial_weights();
    let (u, y) = evaluate_static(&graph, &w, &external).unwrap();
    let frechet = static_slopes(&graph, &u).unwrap();
    let (_, partials) = error_and_partials(&graph, &y, &targets).unwrap();
    Built {
        graph,
        y,
        frechet,
        partials,
    }
}

impl Built {
    fn snapshot<'a>(&'a self, w: &'a [f64]) -> Snapshot<'a, f64> {
        Snapshot {
            weights: w,
            y: &self.y,
            frechet: &self.frechet,
            partials: &self.partials,
        }
    }
}

fn stable_den() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.3f64..4.0, 1..=4).prop_map(|poles| {
        poles.iter().fold(vec![1.0], |poly, &p| {
            let mut next = vec![0.0; poly.len() + 1];
            for (i, &c) in poly.iter().enumerate() {
                next[i] += c;
                next[i + 1] += c * p;
            }
            next
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn full_and_truncated_agree_on_dags(d in dag(), gamma in 0.1f64..3.0) {
        let b = build(&d);
        let w = b.graph.initial_weights();
        let truncated = weight_rates_truncated(&b.graph, b.snapshot(&w), &LearningConfig::new(gamma)).unwrap();
        let cfg = LearningConfig::new(gamma).with_mode(LearningMode::FullSolve);
        let full = weight_rates(&b.graph, b.snapshot(&w), &cfg).unwrap();
        for (a, f) in truncated.iter().zip(&full) {
            prop_assert!((a - f).abs() <= 1e-10, "{} vs {}", a, f);
        }
    }

    #[test]
    fn rates_scale_linearly_with_gamma(d in dag(), gamma in 0.1f64..2.0, c in 0.25f64..4.0) {
        let b = build(&d);
        let w = b.graph.initial_weights();
        for mode in [LearningMode::Truncated, LearningMode::FullSolve] {
            let base = weight_rates(&b.graph, b.snapshot(&w), &LearningConfig::new(gamma).with_mode(mode)).unwrap();
            let scaled = weight_rates(&b.graph, b.snapshot(&w), &LearningConfig::new(c * gamma).with_mode(mode)).unwrap();
            for (r, s) in base.iter().zip(&scaled) {
                prop_assert!((s - c * r).abs() <= 1e-12 * (c * r).abs().max(1e-300), "{} vs {}", s, c * r);
            }
        }
    }

    #[test]
    fn full_solve_residual_is_bounded(d in dag(), gamma in 0.1f64..3.0) {
        let b = build(&d);
        let w = b.graph.initial_weights();
        let cfg = LearningConfig::new(gamma).with_mode(LearningMode::FullSolve);
        let opts = PhiOptions { gamma, y_floor: cfg.y_floor, truncate_at_outputs: false };
        let system = assemble_phi(&b.graph, b.snapshot(&w), opts);
        let sol = weight_rates_full(&system, &cfg).unwrap();
        let mu_norm = system.mu.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(sol.residual <= 1e-9 * (1.0 + mu_norm));
    }

    #[test]
    fn fixed_weights_never_move(d in dag(), steps in 1usize..40) {
        let b = build(&d);
        let mut state = LearningState::new(&b.graph);
        let before = state.weights.clone();
        let cfg = LearningConfig::new(1.0);
        for _ in 0..steps {
            let w = state.weights.clone();
            state.rates = weight_rates(&b.graph, b.snapshot(&w), &cfg).unwrap();
            apply_rates(&mut state, &b.graph, 0.01, 1e12).unwrap();
        }
        for (l, br) in b.graph.branches().iter().enumerate() {
            if !br.adaptive {
                prop_assert_eq!(state.weights[l].to_bits(), before[l].to_bits());
            }
        }
    }

    #[test]
    fn step_response_settles_to_dc_gain(den in stable_den(), k in 0.2f64..5.0) {
        let tf = DynamicsKind::TransferFunction(TransferFunction::new(vec![k], den).unwrap());
        let dc = dc_gain(&tf).unwrap();
        let p = step_response_value(&tf, 60.0, 1e-2).unwrap();
        prop_assert!((p - dc).abs() <= 1e-4, "{} vs {}", p, dc);
    }

    #[test]
    fn delay_is_a_pure_shift(samples in 1usize..6, input in prop::collection::vec(-5.0f64..5.0, 1..50)) {
        let dt = 0.01;
        let spec = NodeSpec::new(1, DynamicsKind::Delay { tau: samples as f64 * dt });
        let mut node = Node::new(spec, dt).unwrap();
        let out: Vec<f64> = input.iter().map(|&u| node.step(u, Scheme::Rk4).unwrap()).collect();
        for (k, y) in out.iter().enumerate() {
            let want = if k >= samples { input[k - samples] } else { 0.0 };
            prop_assert_eq!(*y, want);
        }
    }

    #[test]
    fn linearize_recovers_linear_systems(
        a in prop::collection::vec(-3.0f64..3.0, 4),
        b in prop::collection::vec(-2.0f64..2.0, 2),
        c in prop::collection::vec(-2.0f64..2.0, 2),
        x0 in prop::collection::vec(-1.0f64..1.0, 2),
        u0 in -1.0f64..1.0,
    ) {
        let f1 = format!("({})*x1 + ({})*x2 + ({})*u", a[0], a[1], b[0]);
        let f2 = format!("({})*x1 + ({})*x2 + ({})*u", a[2], a[3], b[1]);
        let h = format!("({})*x1 + ({})*x2", c[0], c[1]);
        let ode = OdeSystem::new(
            vec![parse(&f1).unwrap(), parse(&f2).unwrap()],
            parse(&h).unwrap(),
            vec![0.0, 0.0],
        ).unwrap();
        let lin = linearize(&ode, &x0, u0).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                prop_assert!((lin.a[(i, j)] - a[2 * i + j]).abs() <= 1e-6);
            }
            prop_assert!((lin.b[i] - b[i]).abs() <= 1e-6);
            prop_assert!((lin.c[i] - c[i]).abs() <= 1e-6);
        }
        prop_assert!(lin.d.abs() <= 1e-6);
    }

    #[test]
    fn builtin_derivatives_match_central_differences(x in -1.2f64..1.2, k in 0usize..6) {
        let text = ["sin(u)", "cos(u)", "tan(u)", "exp(u)", "tanh(u)", "u^3 - 2*u"][k];
        let e = parse(text).unwrap();
        let (_, d) = e.eval_with_derivative(&Env::input(x), &Var::Input).unwrap();
        let h = 1e-5;
        let fp: f64 = e.eval(&Env::input(x + h)).unwrap();
        let fm: f64 = e.eval(&Env::input(x - h)).unwrap();
        let fd = (fp - fm) / (2.0 * h);
        prop_assert!((d - fd).abs() <= 1e-6 * d.abs().max(1.0), "{}: {} vs {}", text, d, fd);
    }

    #[test]
    fn scenario_canonical_form_is_a_fixed_point(
        gains in prop::collection::vec(-20.0f64..20.0, 3),
        gamma in 0.0f64..10.0,
        dt in 1e-4f64..1e-2,
        full in any::<bool>(),
    ) {
        let mode = if full { "full" } else { "truncated" };
        let text = format!(
            "[scenario]\nname = \"p\"\n\n[node 1]\nkind = identity\n\n[node 2]\nkind = tf\nnum = [1]\nden = [1, 3, 2]\noutput = true\n\n\
             [node 3]\nkind = static\nf = \"tanh(u)\"\n\n\
             [branch 1 3]\nweight = {}\nadaptive = true\n\n[branch 3 2]\nweight = {}\nadaptive = true\n\n[branch 2 3]\nweight = {}\n\n\
             [reference]\nnum = [1]\nden = [1, 1]\n\n[learning]\ngamma = {gamma}\nmode = {mode}\n\n[sim]\ndt = {dt}\nduration = 1\n",
            gains[0], gains[1], gains[2],
        );
        let first: Scenario<f64> = load_scenario(&text).unwrap();
        let printed = first.to_canonical_string();
        let second: Scenario<f64> = load_scenario(&printed).unwrap();
        prop_assert_eq!(&second.to_canonical_string(), &printed);
        prop_assert_eq!(second.graph.branches(), first.graph.branches());
        prop_assert_eq!(second.learning, first.learning);
        prop_assert_eq!(second.dt, first.dt);
    }
}

#[test]
fn fixed_weights_are_bit_identical_through_a_run() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/stable_plant.gsfg")).unwrap();
    let mut s: Scenario<f64> = load_scenario(&text).unwrap();
    s.duration = 5.0;
    let trace = run(&s).unwrap();
    for (l, w) in trace.weights.iter().enumerate() {
        if !trace.adaptive[l] {
            let first = w[0].to_bits();
            assert!(w.iter().all(|v| v.to_bits() == first), "{}", trace.branch_names[l]);
        }
    }
}
