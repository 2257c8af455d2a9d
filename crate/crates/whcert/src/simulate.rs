//! Closed-loop trajectory rollout under a loss word, runtime
//! monitoring of a certificate along a trajectory, and exhaustive
//! falsification over all admissible words up to a horizon.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cert::Cert;
use crate::error::Error;
use crate::graph::WhGraph;
use crate::problem::Problem;
use crate::sets::sample_region;
use crate::systems::Strategy;
use crate::wh::LossWord;

const FALSIFY_HORIZON_CAP: u32 = 20;

/// One rollout. States run from `x_0` to `x_T` where `T` is the word
/// length; `inputs[t]` is the actuation applied when stepping from
/// `states[t]`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub word: LossWord,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    /// Input the hold register exposes to state `t`: the actuation
    /// applied at `t - 1`, seeded with `g(x_0)` for the initial state.
    pub held: Vec<DVector<f64>>,
    /// Graph node aligned with each state: the head of the edge whose
    /// block the state lies in, with the initial node for `x_0`.
    pub nodes: Vec<String>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word.is_empty()
    }

    /// CSV dump, one row per state. The delivery bit and input columns
    /// describe the step taken from that state, so they are empty on
    /// the final row. With a certificate the barrier of the aligned
    /// node is appended.
    pub fn to_csv(&self, cert: Option<&Cert>) -> Result<String, Error> {
        let n = self.states[0].len();
        let mu = self.inputs.first().map_or(0, |u| u.len());
        let mut out = String::from("t");
        for i in 1..=n {
            out.push_str(&format!(",x{i}"));
        }
        for i in 1..=mu {
            out.push_str(&format!(",u{i}"));
        }
        out.push_str(",delivered,node");
        if cert.is_some() {
            out.push_str(",psi");
        }
        out.push('\n');
        for (t, x) in self.states.iter().enumerate() {
            out.push_str(&t.to_string());
            for v in x.iter() {
                out.push_str(&format!(",{v}"));
            }
            if t < self.inputs.len() {
                for v in self.inputs[t].iter() {
                    out.push_str(&format!(",{v}"));
                }
                out.push_str(if self.word.bits()[t] { ",1" } else { ",0" });
            } else {
                for _ in 0..mu {
                    out.push(',');
                }
                out.push(',');
            }
            out.push_str(&format!(",{}", self.nodes[t]));
            if let Some(c) = cert {
                let u = c.augmented().then_some(&self.held[t]);
                out.push_str(&format!(",{}", c.eval(&self.nodes[t], x, u)?));
            }
            out.push('\n');
        }
        Ok(out)
    }
}

/// Rolls the closed loop forward under `word`. The word must trace a
/// path in the constraint's graph; in particular it starts with a
/// delivery.
pub fn simulate(problem: &Problem, word: &LossWord, x0: &DVector<f64>) -> Result<Trajectory, Error> {
    let n = problem.model.state_dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "initial state has {} entries, plant has {n}",
            x0.len()
        )));
    }
    let law = problem.law_required()?;
    let graph = WhGraph::build(problem.constraint);
    let bits = word.bits();
    let mut nodes = vec![graph.node_name(graph.initial())];
    if let Some(&first) = bits.first() {
        if !first {
            return Err(Error::WordStartsWithLoss);
        }
    }

    // Walk the block decomposition, assigning every state after a
    // delivery to the head of the edge being traversed.
    let mut node = graph.initial();
    let mut pending = 0u32;
    let mut close_block = |node: &mut usize, label: u32| -> Result<(), Error> {
        match graph.step(*node, label) {
            Some(next) => {
                let name = graph.node_name(next);
                for _ in 0..=label {
                    nodes.push(name.clone());
                }
                *node = next;
                Ok(())
            }
            None => Err(Error::WordRejected(format!(
                "no continuation with {label} losses from {} under K({}, {})",
                graph.node_name(*node),
                problem.constraint.r(),
                problem.constraint.s()
            ))),
        }
    };
    for &b in bits.iter().skip(1) {
        if b {
            close_block(&mut node, pending)?;
            pending = 0;
        } else {
            pending += 1;
        }
    }
    if !bits.is_empty() {
        close_block(&mut node, pending)?;
    }

    let mut states = vec![x0.clone()];
    let mut inputs = Vec::with_capacity(bits.len());
    let mut held = vec![law.output(x0)];
    let mut reg = held[0].clone();
    for (t, &b) in bits.iter().enumerate() {
        let x = &states[t];
        let u = if b {
            reg = law.output(x);
            reg.clone()
        } else {
            match problem.strategy {
                Strategy::Zero => DVector::zeros(problem.model.input_dim()),
                Strategy::Hold => reg.clone(),
            }
        };
        states.push(problem.model.step(x, &u));
        held.push(u.clone());
        inputs.push(u);
    }
    Ok(Trajectory { word: word.clone(), states, inputs, held, nodes })
}

/// One monitored obligation: after the delivery at `time - m - 1` the
/// barrier of the edge's head must sit below `bound` at state `time`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonitorEntry {
    pub time: usize,
    pub src: String,
    pub label: u32,
    pub m: u32,
    pub node: String,
    pub psi: f64,
    pub bound: f64,
    /// Certificate conditions are stated on the operating region, so
    /// the bound is owed only while the states it was derived from
    /// stay inside it.
    pub in_region: bool,
    pub ok: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonitorReport {
    pub entries: Vec<MonitorEntry>,
    pub violations: usize,
    pub pass: bool,
}

/// Replays the certificate's per-edge decrease ledger along a
/// trajectory. Each traversed edge with `l` losses owes, at its m-th
/// post-delivery state, a barrier value of at most `-(l - m) * eps`
/// (offset by the anchor value for difference variants); implication
/// variants only owe it when the barrier was nonpositive at the
/// delivery, and every bound lapses once the trajectory leaves the
/// operating region.
pub fn monitor(
    problem: &Problem,
    cert: &Cert,
    traj: &Trajectory,
    tol: f64,
) -> Result<MonitorReport, Error> {
    if cert.graph().constraint != problem.constraint {
        return Err(Error::CertMismatch(format!(
            "certificate is for constraint ({}, {}), problem uses ({}, {})",
            cert.graph().constraint.r(),
            cert.graph().constraint.s(),
            problem.constraint.r(),
            problem.constraint.s()
        )));
    }
    if cert.strategy() != problem.strategy {
        return Err(Error::CertMismatch(
            "certificate and problem disagree on the actuation strategy".into(),
        ));
    }
    let augmented = cert.augmented();
    let decrease = cert.variant().is_decrease();
    let one_step = cert.variant().is_one_step();
    let bits = traj.word.bits();
    let deliveries: Vec<usize> = (0..bits.len()).filter(|&t| bits[t]).collect();
    let mut entries = Vec::new();
    for (j, &t) in deliveries.iter().enumerate() {
        let end = deliveries.get(j + 1).copied().unwrap_or(bits.len());
        let label = (end - t - 1) as u32;
        let src = traj.nodes[t].clone();
        let head = traj.nodes[t + 1].clone();
        let anchor_u = augmented.then_some(&traj.held[t]);
        let anchor = cert.eval(&src, &traj.states[t], anchor_u)?;
        let eps = cert.eps_of(&head)?;
        // One-shot conditions quantify over the delivery state alone;
        // one-step chains also pass through each intermediate state.
        let mut in_region = problem.contains_x(&traj.states[t]);
        for m in 0..=label {
            let idx = t + 1 + m as usize;
            if one_step && m > 0 {
                in_region = in_region && problem.contains_x(&traj.states[idx - 1]);
            }
            let u = augmented.then_some(&traj.held[idx]);
            let psi = cert.eval(&head, &traj.states[idx], u)?;
            let slack = (label - m) as f64 * eps;
            let bound = if decrease { anchor - slack } else { -slack };
            let applies = in_region && (decrease || anchor <= tol);
            let ok = !applies || psi <= bound + tol;
            entries.push(MonitorEntry {
                time: idx,
                src: src.clone(),
                label,
                m,
                node: head.clone(),
                psi,
                bound,
                in_region,
                ok,
            });
        }
    }
    let violations = entries.iter().filter(|e| !e.ok).count();
    Ok(MonitorReport { entries, violations, pass: violations == 0 })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Counterexample {
    pub x0: Vec<f64>,
    pub word: LossWord,
    /// State index at which the trajectory sits in the unsafe set.
    pub time: usize,
    pub state: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FalsificationReport {
    pub horizon: usize,
    pub words: usize,
    pub initial_points: usize,
    pub trajectories: u64,
    pub counterexample: Option<Counterexample>,
    pub wall_ms: u128,
}

/// Exhaustive search for an unsafe rollout: every admissible loss word
/// up to `horizon` (as prefixes of the exact-length path expansions)
/// against initial states drawn from the initial set's axis extremes
/// plus `samples` seeded interior points. The first hit in enumeration
/// order is returned, so a rerun with the same seed reproduces it.
pub fn falsify(
    problem: &Problem,
    horizon: usize,
    samples: usize,
    seed: u64,
) -> Result<FalsificationReport, Error> {
    if horizon as u32 > FALSIFY_HORIZON_CAP {
        return Err(Error::HorizonTooLarge { got: horizon as u32, cap: FALSIFY_HORIZON_CAP });
    }
    let started = Instant::now();
    let law = problem.law_required()?;
    let n = problem.model.state_dim();
    let mut x0s: Vec<DVector<f64>> = problem
        .spec
        .sets
        .x0
        .axis_extremes(n)
        .into_iter()
        .filter(|p| problem.contains_x0(p))
        .collect();
    let (lo, hi) = problem
        .spec
        .sets
        .x0
        .bbox(n)
        .or_else(|| problem.spec.sets.x.bbox(n))
        .expect("state set has a bounding box");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    x0s.extend(sample_region(
        (lo.as_slice(), hi.as_slice()),
        |p| problem.contains_x0(p),
        samples,
        &mut rng,
    ));
    let graph = WhGraph::build(problem.constraint);
    let words: Vec<LossWord> =
        graph.enumerate_paths(horizon).map(|p| p.label_word().expand()).collect();
    let trajectories = AtomicU64::new(0);
    let strategy = problem.strategy;
    let mu = problem.model.input_dim();
    let counterexample = words.par_iter().find_map_first(|word| {
        let bits = word.bits();
        x0s.iter().find_map(|x0| {
            trajectories.fetch_add(1, Ordering::Relaxed);
            if problem.contains_xu(x0) {
                return Some(Counterexample {
                    x0: x0.iter().copied().collect(),
                    word: word.clone(),
                    time: 0,
                    state: x0.iter().copied().collect(),
                });
            }
            let mut x = x0.clone();
            let mut reg = law.output(&x);
            for (t, &b) in bits.iter().enumerate() {
                let u = if b {
                    reg = law.output(&x);
                    reg.clone()
                } else {
                    match strategy {
                        Strategy::Zero => DVector::zeros(mu),
                        Strategy::Hold => reg.clone(),
                    }
                };
                x = problem.model.step(&x, &u);
                if problem.contains_xu(&x) {
                    return Some(Counterexample {
                        x0: x0.iter().copied().collect(),
                        word: word.clone(),
                        time: t + 1,
                        state: x.iter().copied().collect(),
                    });
                }
            }
            None
        })
    });
    Ok(FalsificationReport {
        horizon,
        words: words.len(),
        initial_points: x0s.len(),
        trajectories: trajectories.into_inner(),
        counterexample,
        wall_ms: started.elapsed().as_millis(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cert::{GbfVariant, QuadCert};
    use crate::lmi::verify;
    use crate::schedule::Schedule;
    use crate::systems::Strategy;
    use nalgebra::DMatrix;

    fn word(bits: &str) -> LossWord {
        LossWord::new(bits.chars().map(|c| c == '1').collect())
    }

    fn toy(a: f64, k: f64, r: u32, s: u32, strategy: &str, x0_box: (f64, f64)) -> Problem {
        let text = serde_json::json!({
            "system": {"type": "linear", "a": [[a]], "b": [[1.0]]},
            "controller": {"type": "linear", "k": [[k]]},
            "sets": {
                "x": {"type": "ball", "center": [0.0], "radius": 6.0},
                "x0": {"type": "box", "lo": [x0_box.0], "hi": [x0_box.1]},
                "xu": {"type": "box", "lo": [3.0], "hi": [9.0]},
                "u": {"type": "box", "lo": [-4.0], "hi": [4.0]}
            },
            "constraint": {"r": r, "s": s},
            "strategy": strategy
        })
        .to_string();
        Problem::from_json_str(&text).unwrap()
    }

    #[test]
    fn rollout_matches_hand_computation_for_both_strategies() {
        let x0 = DVector::from_element(1, 1.0);
        let w = word("10011");

        let zero = toy(2.0, -1.5, 2, 4, "zero", (0.9, 1.1));
        let traj = simulate(&zero, &w, &x0).unwrap();
        let xs: Vec<f64> = traj.states.iter().map(|x| x[0]).collect();
        assert_eq!(xs, vec![1.0, 0.5, 1.0, 2.0, 1.0, 0.5]);
        let us: Vec<f64> = traj.inputs.iter().map(|u| u[0]).collect();
        assert_eq!(us, vec![-1.5, 0.0, 0.0, -3.0, -1.5]);
        assert_eq!(traj.nodes, vec!["v1", "v3", "v3", "v3", "v1", "v1"]);

        let hold = toy(2.0, -1.5, 2, 4, "hold", (0.9, 1.1));
        let traj = simulate(&hold, &w, &x0).unwrap();
        let xs: Vec<f64> = traj.states.iter().map(|x| x[0]).collect();
        assert_eq!(xs, vec![1.0, 0.5, -0.5, -2.5, -1.25, -0.625]);
        let us: Vec<f64> = traj.inputs.iter().map(|u| u[0]).collect();
        assert_eq!(us, vec![-1.5, -1.5, -1.5, 3.75, 1.875]);
        assert_eq!(traj.held[0][0], -1.5);
    }

    #[test]
    fn inadmissible_words_are_rejected() {
        let problem = toy(0.5, 0.0, 2, 4, "zero", (0.9, 1.1));
        let x0 = DVector::from_element(1, 0.1);
        assert!(matches!(
            simulate(&problem, &word("01"), &x0),
            Err(Error::WordStartsWithLoss)
        ));
        // 10100 puts two deliveries and three losses in one window of
        // four attempts.
        assert!(matches!(
            simulate(&problem, &word("10100"), &x0),
            Err(Error::WordRejected(_))
        ));
    }

    #[test]
    fn csv_has_one_row_per_state_and_barrier_column() {
        let problem = toy(0.5, 0.0, 1, 2, "zero", (0.9, 1.1));
        let sched = Schedule { verify_samples: 200, ..Schedule::default() };
        let cert = verify(&problem, GbfVariant::Gbf, &sched).unwrap().cert.unwrap();
        let traj = simulate(&problem, &word("1010"), &DVector::from_element(1, 1.0)).unwrap();
        let csv = traj.to_csv(Some(&cert)).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,x1,u1,delivered,node,psi");
        assert_eq!(lines.len(), 6);
        assert!(lines[1].starts_with("0,1,"));
        let last = lines[5].split(',').collect::<Vec<_>>();
        assert_eq!(last[2], "");
        assert_eq!(last[3], "");
        let bare = traj.to_csv(None).unwrap();
        assert_eq!(bare.lines().next().unwrap(), "t,x1,u1,delivered,node");
    }

    #[test]
    fn monitor_accepts_solver_certificates_on_admissible_rollouts() {
        for (strategy, variant) in [
            ("zero", GbfVariant::Gbf),
            ("zero", GbfVariant::DGbf),
            ("hold", GbfVariant::OneGbf),
        ] {
            let problem = toy(0.5, 0.0, 2, 4, strategy, (-0.2, 0.2));
            let sched = Schedule { verify_samples: 200, ..Schedule::default() };
            let cert = verify(&problem, variant, &sched).unwrap().cert.unwrap();
            let traj =
                simulate(&problem, &word("100110011"), &DVector::from_element(1, 0.2)).unwrap();
            let report = monitor(&problem, &cert, &traj, 1e-9).unwrap();
            assert!(report.pass, "{variant} under {strategy}: {:?}", report.entries);
            assert_eq!(report.entries.len(), 9);
        }
    }

    #[test]
    fn monitor_flags_certificate_with_inflated_eps() {
        // x+ = x keeps the barrier constant, so the margin claimed per
        // residual loss is exactly what the monitor can check: the
        // rollout meets eps = 0.1 with room but not eps = 0.2.
        let problem = toy(1.0, 0.0, 1, 2, "zero", (0.9, 1.1));
        let graph = WhGraph::build(problem.constraint);
        let names = vec![graph.node_name(0)];
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let mut quad = QuadCert::from_blocks(
            GbfVariant::Gbf,
            Strategy::Zero,
            graph.to_json(),
            1,
            0,
            &names,
            &[p],
            &[0.1],
        );
        let x0 = DVector::from_element(1, 0.85f64.sqrt());
        let traj = simulate(&problem, &word("1010"), &x0).unwrap();
        let report = monitor(&problem, &Cert::Quad(quad.clone()), &traj, 1e-9).unwrap();
        assert!(report.pass);
        quad.eps.insert(names[0].clone(), 0.2);
        let report = monitor(&problem, &Cert::Quad(quad), &traj, 1e-9).unwrap();
        assert!(!report.pass);
        assert_eq!(report.violations, 2);
    }

    #[test]
    fn falsification_finds_the_loss_burst_that_escapes() {
        // Deliveries contract by 0.5, losses double: only the maximal
        // admissible burst pattern 100100 reaches the unsafe interval,
        // and only at its last step.
        let problem = toy(2.0, -1.5, 1, 3, "zero", (0.9, 1.1));
        let report = falsify(&problem, 6, 50, 7).unwrap();
        let cx = report.counterexample.expect("burst pattern escapes");
        assert_eq!(cx.word, word("100100"));
        assert_eq!(cx.time, 6);
        assert!(problem.contains_xu(&DVector::from_row_slice(&cx.state)));

        // Replay through the rollout API lands on the same state.
        let traj = simulate(&problem, &cx.word, &DVector::from_row_slice(&cx.x0)).unwrap();
        assert_eq!(traj.states[cx.time][0], cx.state[0]);

        // Same seed, same counterexample.
        let again = falsify(&problem, 6, 50, 7).unwrap();
        let cx2 = again.counterexample.unwrap();
        assert_eq!(cx2.x0, cx.x0);
        assert_eq!(cx2.word, cx.word);

        // One step short of the escape, everything stays clear.
        let clear = falsify(&problem, 5, 50, 7).unwrap();
        assert!(clear.counterexample.is_none());
        assert!(clear.trajectories >= (clear.words * clear.initial_points) as u64);
    }

    #[test]
    fn falsification_horizon_is_capped() {
        let problem = toy(0.5, 0.0, 1, 2, "zero", (0.9, 1.1));
        assert!(matches!(
            falsify(&problem, 21, 10, 0),
            Err(Error::HorizonTooLarge { got: 21, cap: 20 })
        ));
    }
}
