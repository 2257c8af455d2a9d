//! End-to-end acceptance gate. Each test covers one numbered criterion
//! and prints a single pass line; tolerances and time budgets are part
//! of the assertions.

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use whcert::cert::{Cert, CertStatus, GbfVariant};
use whcert::error::Error;
use whcert::graph::WhGraph;
use whcert::problem::Problem;
use whcert::schedule::Schedule;
use whcert::wh::{LossWord, WhConstraint};
use whcert::{lmi, simulate, sos, validate};

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn load(name: &str) -> Problem {
    let text = fs::read_to_string(config(name)).unwrap();
    Problem::from_json_str(&text).unwrap()
}

fn graph(r: u32, s: u32) -> WhGraph {
    WhGraph::build(WhConstraint::new(r, s).unwrap())
}

#[test]
fn criterion_1_graph_shapes() {
    let start = Instant::now();

    let g = graph(2, 4);
    assert_eq!(g.node_count(), 3);
    let edges: BTreeSet<_> = g.edges().into_iter().collect();
    let expect: BTreeSet<_> =
        [(0, 0, 0), (0, 1, 1), (0, 2, 2), (1, 0, 0), (1, 1, 1), (2, 0, 0)].into_iter().collect();
    assert_eq!(edges, expect, "K(2,4) edge set");

    let g = graph(3, 5);
    assert_eq!(g.node_count(), 6);
    let edges: BTreeSet<_> = g.edges().into_iter().collect();
    let expect: BTreeSet<_> = [
        (0, 0, 0),
        (0, 1, 1),
        (0, 2, 2),
        (1, 0, 3),
        (1, 1, 4),
        (2, 0, 5),
        (3, 0, 0),
        (3, 1, 1),
        (4, 0, 3),
        (5, 0, 0),
    ]
    .into_iter()
    .collect();
    assert_eq!(edges, expect, "K(3,5) edge set");

    assert_eq!(graph(3, 7).node_count(), 15);

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 3.0, "graph builds took {elapsed:?}, budget 1 s each");
    println!("criterion 1 (graph shapes): pass in {elapsed:?}");
}

#[test]
fn criterion_2_language_equivalence() {
    let start = Instant::now();
    let mut checked = 0u64;
    for s in 1..=8u32 {
        for r in 1..=s {
            let constraint = WhConstraint::new(r, s).unwrap();
            let g = WhGraph::build(constraint);
            for len in 1..=12usize {
                let mut bits = vec![false; len];
                for mask in 0u64..(1 << len) {
                    for (i, b) in bits.iter_mut().enumerate() {
                        *b = mask >> i & 1 == 1;
                    }
                    let word = LossWord::new(bits.clone());
                    // The graph language starts every word at a delivery,
                    // so the oracle joins window satisfaction with that
                    // normal form.
                    let oracle = bits[0] && constraint.satisfies(&word);
                    assert_eq!(
                        g.accepts(&word),
                        oracle,
                        "K({r},{s}) disagrees with the window oracle on {word}"
                    );
                    checked += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "equivalence sweep took {elapsed:?}, budget 30 s");
    println!("criterion 2 (language equivalence, {checked} words): pass in {elapsed:?}");
}

#[test]
fn criterion_3_case_study_1() {
    let start = Instant::now();
    let problem = load("cs1.json");
    let sched = Schedule::default();

    for (variant, want) in [
        (GbfVariant::Gbf, CertStatus::Certified),
        (GbfVariant::DGbf, CertStatus::Certified),
        (GbfVariant::OneDGbf, CertStatus::Infeasible),
    ] {
        let rep = lmi::verify(&problem, variant, &sched).unwrap();
        assert_eq!(rep.status, want, "case study 1, {variant:?}: {:?}", rep.note);
        if want == CertStatus::Certified {
            let cert = rep.cert.unwrap();
            let val = validate::validate_cert(&problem, &cert, 100_000, 1e-6, 0).unwrap();
            assert!(val.pass, "validation failed for {variant:?}");
            assert!(
                val.max_violation <= 1e-6,
                "{variant:?} max violation {}",
                val.max_violation
            );
        }
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "case study 1 took {elapsed:?}, budget 2 min");
    println!("criterion 3 (case study 1): pass in {elapsed:?}");
}

#[test]
fn criterion_4_case_study_2() {
    let start = Instant::now();
    let problem = load("cs2.json");
    let sched = Schedule::default();

    for (variant, want) in [
        (GbfVariant::Gbf, CertStatus::Certified),
        (GbfVariant::DGbf, CertStatus::Certified),
        (GbfVariant::OneDGbf, CertStatus::Infeasible),
    ] {
        let rep = lmi::verify(&problem, variant, &sched).unwrap();
        assert_eq!(rep.status, want, "case study 2, {variant:?}: {:?}", rep.note);
    }

    // Level-set containment: the zero-sublevel sets of a barrier
    // certificate built around the tighter decrease-form one must
    // cover them on every sampled state.
    let inner = lmi::verify(&problem, GbfVariant::DGbf, &sched).unwrap();
    let inner = inner.cert.unwrap();
    let outer = lmi::verify_enclosing(&problem, GbfVariant::Gbf, &sched, &inner).unwrap();
    assert_eq!(outer.status, CertStatus::Certified, "enclosing gbf: {:?}", outer.note);
    let nodes: Vec<String> = ["v1", "v2", "v3"].map(String::from).into();
    let counts = validate::sublevel_containment(
        &problem,
        &inner,
        outer.cert.as_ref().unwrap(),
        &nodes,
        100_000,
        0,
    )
    .unwrap();
    for (node, violations) in &counts {
        assert_eq!(*violations, 0, "containment failed at {node}");
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 300.0, "case study 2 took {elapsed:?}, budget 5 min");
    println!("criterion 4 (case study 2): pass in {elapsed:?}");
}

#[test]
fn criterion_5_case_study_3() {
    let start = Instant::now();
    let problem = load("cs3.json");
    let sched = Schedule { sos_degree: 3, ..Schedule::default() };

    let rep = sos::verify_sos(&problem, GbfVariant::OneDGbf, &sched).unwrap();
    assert_eq!(rep.status, CertStatus::Certified, "platoon sos: {:?}", rep.note);
    let cert = rep.cert.unwrap();
    let val = validate::validate_cert(&problem, &cert, 100_000, 1e-5, 0).unwrap();
    assert!(val.pass, "platoon validation failed");
    assert!(val.max_violation <= 1e-5, "platoon max violation {}", val.max_violation);

    // Flipping the unsafe half-plane above the diagonal makes it meet
    // the initial set, which configuration validation must reject.
    let text = fs::read_to_string(config("cs3_unsafe_above.json")).unwrap();
    match Problem::from_json_str(&text) {
        Err(Error::Config { path, .. }) => assert!(path.contains("x0"), "path {path}"),
        other => panic!("expected a config rejection, got {other:?}"),
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 600.0, "case study 3 took {elapsed:?}, budget 10 min");
    println!("criterion 5 (case study 3): pass in {elapsed:?}");
}

#[test]
fn criterion_6_case_study_4_synthesis() {
    let start = Instant::now();
    let problem = load("cs4.json");
    let sched = Schedule::default();

    let hunt = simulate::falsify(&problem, 10, 200, 0).unwrap();
    let cx = hunt.counterexample.expect("enlarged initial set must admit a counterexample");
    assert!(cx.time <= 10);

    let (k, rep) = lmi::synthesize(&problem, &sched, None).unwrap();
    assert_eq!(rep.status, CertStatus::Certified, "synthesis: {:?}", rep.note);

    let safe = lmi::problem_with_gain(&problem, &k).unwrap();
    let recheck = simulate::falsify(&safe, 12, 10_000, 0).unwrap();
    assert!(
        recheck.counterexample.is_none(),
        "synthesized gain still unsafe: {:?}",
        recheck.counterexample
    );

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 600.0, "case study 4 took {elapsed:?}, budget 10 min");
    println!(
        "criterion 6 (case study 4 synthesis, gain {:?}): pass in {elapsed:?}",
        k.as_slice()
    );
}

/// A small contractive loop where every variant is feasible.
fn ordering_problem() -> Problem {
    let text = r#"{
        "system": {"type": "linear", "a": [[0.5]], "b": [[1.0]]},
        "controller": {"type": "linear", "k": [[-0.25]]},
        "sets": {
            "x": {"type": "ball", "center": [0.0], "radius": 2.0},
            "x0": {"type": "ball", "center": [0.0], "radius": 0.5},
            "xu": {"type": "box", "lo": [1.5], "hi": [2.0]},
            "u": {"type": "box", "lo": [-2.0], "hi": [2.0]}
        },
        "constraint": {"r": 2, "s": 4},
        "strategy": "zero"
    }"#;
    Problem::from_json_str(text).unwrap()
}

fn with_variant(cert: &Cert, variant: GbfVariant) -> Cert {
    match cert {
        Cert::Quad(q) => {
            let mut q = q.clone();
            q.variant = variant;
            Cert::Quad(q)
        }
        Cert::Poly(p) => {
            let mut p = p.clone();
            p.variant = variant;
            Cert::Poly(p)
        }
    }
}

#[test]
fn criterion_7i_conservatism_ordering() {
    let start = Instant::now();
    let problem = ordering_problem();
    let sched = Schedule::default();

    // A certificate for a stricter variant must satisfy every weaker
    // variant's conditions at the sampled level with the same data.
    let one_d = lmi::verify(&problem, GbfVariant::OneDGbf, &sched).unwrap();
    assert_eq!(one_d.status, CertStatus::Certified, "{:?}", one_d.note);
    let cert = one_d.cert.unwrap();
    for weaker in [GbfVariant::OneGbf, GbfVariant::Gbf] {
        let val =
            validate::validate_cert(&problem, &with_variant(&cert, weaker), 20_000, 1e-7, 0)
                .unwrap();
        assert!(val.pass, "1dgbf data fails {weaker:?} conditions: {}", val.max_violation);
    }

    let one = lmi::verify(&problem, GbfVariant::OneGbf, &sched).unwrap();
    assert_eq!(one.status, CertStatus::Certified, "{:?}", one.note);
    let cert = one.cert.unwrap();
    let val =
        validate::validate_cert(&problem, &with_variant(&cert, GbfVariant::Gbf), 20_000, 1e-7, 0)
            .unwrap();
    assert!(val.pass, "1gbf data fails gbf conditions: {}", val.max_violation);

    let elapsed = start.elapsed();
    println!("criterion 7.i (conservatism ordering): pass in {elapsed:?}");
}

#[test]
fn criterion_7ii_certified_implies_safe() {
    let start = Instant::now();

    let cases: &[(&str, usize)] = &[("cs1.json", 1_000), ("cs2.json", 1_000), ("cs3.json", 500)];
    for (name, samples) in cases {
        let problem = load(name);
        let rep = simulate::falsify(&problem, 12, *samples, 0).unwrap();
        assert!(
            rep.counterexample.is_none(),
            "{name} is certified but falsification found {:?}",
            rep.counterexample
        );
    }

    // The synthesized case study 4 gain is certified, so it must also
    // survive the same sweep.
    let problem = load("cs4.json");
    let (k, rep) = lmi::synthesize(&problem, &Schedule::default(), None).unwrap();
    assert_eq!(rep.status, CertStatus::Certified);
    let safe = lmi::problem_with_gain(&problem, &k).unwrap();
    let hunt = simulate::falsify(&safe, 12, 1_000, 0).unwrap();
    assert!(hunt.counterexample.is_none());

    let elapsed = start.elapsed();
    println!("criterion 7.ii (certified implies safe): pass in {elapsed:?}");
}

#[test]
fn criterion_7iii_monitor_ledger() {
    let start = Instant::now();
    let sched = Schedule::default();

    let mut cases: Vec<(Problem, Cert)> = Vec::new();
    for (name, variants) in [
        ("cs1.json", [GbfVariant::Gbf, GbfVariant::DGbf]),
        ("cs2.json", [GbfVariant::Gbf, GbfVariant::DGbf]),
    ] {
        for variant in variants {
            let problem = load(name);
            let rep = lmi::verify(&problem, variant, &sched).unwrap();
            cases.push((problem, rep.cert.unwrap()));
        }
    }
    let platoon = load("cs3.json");
    let rep = sos::verify_sos(
        &platoon,
        GbfVariant::OneDGbf,
        &Schedule { sos_degree: 3, ..Schedule::default() },
    )
    .unwrap();
    cases.push((platoon, rep.cert.unwrap()));

    for (problem, cert) in &cases {
        let graph = WhGraph::build(problem.constraint);
        let x0s = problem.scan_initial(100);
        assert!(!x0s.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for i in 0..100 {
            let word = graph.sample_path(16, &mut rng).label_word().expand();
            let x0 = &x0s[i % x0s.len()];
            let traj = simulate::simulate(problem, &word, x0).unwrap();
            let report = simulate::monitor(problem, cert, &traj, 1e-7).unwrap();
            assert!(
                report.pass,
                "monitor rejected word {word} from {x0:?}: {:?}",
                report.violations
            );
        }
    }

    let elapsed = start.elapsed();
    println!("criterion 7.iii (monitor ledger, 100 runs x {} certs): pass in {elapsed:?}", cases.len());
}

#[test]
fn criterion_7iv_strategy_agreement() {
    let start = Instant::now();

    // With a zero gain the held input is always zero, so the hold and
    // zero strategies must produce identical rollouts.
    let mut spec: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(config("cs1.json")).unwrap()).unwrap();
    spec["controller"]["k"] = serde_json::json!([[0.0, 0.0]]);
    let mut variants = Vec::new();
    for strategy in ["hold", "zero"] {
        spec["strategy"] = serde_json::json!(strategy);
        variants.push(Problem::from_json_str(&spec.to_string()).unwrap());
    }

    let graph = WhGraph::build(variants[0].constraint);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x0 = DVector::from_vec(vec![0.3, -0.1]);
    for _ in 0..20 {
        let word = graph.sample_path(12, &mut rng).label_word().expand();
        let held = simulate::simulate(&variants[0], &word, &x0).unwrap();
        let zeroed = simulate::simulate(&variants[1], &word, &x0).unwrap();
        assert_eq!(held.states, zeroed.states, "strategies diverged on {word}");
    }

    let elapsed = start.elapsed();
    println!("criterion 7.iv (zero/hold agreement): pass in {elapsed:?}");
}

#[test]
fn criterion_7v_gram_reconstruction() {
    let start = Instant::now();
    let problem = load("cs3.json");
    let sched = Schedule { sos_degree: 3, ..Schedule::default() };

    let rep = sos::verify_sos(&problem, GbfVariant::OneDGbf, &sched).unwrap();
    assert_eq!(rep.status, CertStatus::Certified, "{:?}", rep.note);
    let cert = match rep.cert.unwrap() {
        Cert::Poly(p) => p,
        Cert::Quad(_) => panic!("sos path must return a polynomial certificate"),
    };
    let (recon, min_eig) = sos::check_poly_cert(&problem, &cert, &sched).unwrap();
    assert!(recon < 1e-9, "gram reconstruction residual {recon:.3e}");
    assert!(min_eig >= -1e-7, "gram minimum eigenvalue {min_eig:.3e}");

    let elapsed = start.elapsed();
    println!("criterion 7.v (gram reconstruction {recon:.2e}): pass in {elapsed:?}");
}
