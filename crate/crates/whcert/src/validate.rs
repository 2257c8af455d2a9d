//! Encoder-independent certificate validation.
//!
//! Every barrier condition is re-evaluated semantically, by dense
//! sampling of the relevant sets, from nothing but the certificate and
//! the problem description. Implications are checked as written: when
//! the antecedent holds at a sample, the consequent must hold up to
//! the stated tolerance.

use crate::cert::{Cert, GbfVariant};
use crate::error::Error;
use crate::graph::WhGraph;
use crate::problem::Problem;
use crate::sets::halton;
use crate::systems::{iterate_open, step_closed, Strategy};
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionStats {
    pub name: String,
    /// Samples at which the condition actually applied (for
    /// implications, those where the antecedent held).
    pub samples: usize,
    /// Worst signed violation: positive means the condition failed by
    /// that amount beyond the tolerance budget.
    pub max_violation: f64,
    /// For the strict unsafe-set condition: samples where the barrier
    /// failed to be strictly positive.
    pub strict_failures: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub variant: GbfVariant,
    pub n_samples: usize,
    pub tol: f64,
    pub conditions: Vec<ConditionStats>,
    pub max_violation: f64,
    pub strict_failures: usize,
    pub pass: bool,
}

/// Deterministic, prefix-stable point sequence in a bounding box with
/// membership rejection: even indices come from a seeded uniform
/// stream, odd indices from the Halton sequence, so a longer run
/// extends a shorter one.
fn sample_members(
    lo: &[f64],
    hi: &[f64],
    member: impl Fn(&DVector<f64>) -> bool,
    count: usize,
    seed: u64,
) -> Vec<DVector<f64>> {
    use rand::SeedableRng;
    let dim = lo.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut halton_idx = 1usize;
    let mut attempts = 0usize;
    let budget = count.saturating_mul(1000).max(100_000);
    let mut use_uniform = true;
    while out.len() < count && attempts < budget {
        attempts += 1;
        let p = if use_uniform {
            DVector::from_iterator(dim, (0..dim).map(|k| rng.gen_range(lo[k]..=hi[k])))
        } else {
            let h = halton(halton_idx, dim);
            halton_idx += 1;
            DVector::from_iterator(dim, (0..dim).map(|k| lo[k] + h[k] * (hi[k] - lo[k])))
        };
        // Alternate streams per accepted point, so prefixes are stable
        // regardless of the rejection pattern within each stream.
        if member(&p) {
            out.push(p);
            use_uniform = !use_uniform;
        }
    }
    out
}

struct Domains {
    x: Vec<DVector<f64>>,
    x0: Vec<DVector<f64>>,
    xu: Vec<DVector<f64>>,
    u: Vec<DVector<f64>>,
}

fn build_domains(problem: &Problem, n_samples: usize, seed: u64, need_u: bool) -> Domains {
    let (lo, hi) = problem.x_bbox();
    let x = sample_members(&lo, &hi, |p| problem.contains_x(p), n_samples, seed);
    let n = problem.model.state_dim();
    let (lo0, hi0) = problem
        .spec
        .sets
        .x0
        .bbox(n)
        .unwrap_or_else(|| problem.x_bbox());
    let mut x0 = sample_members(&lo0, &hi0, |p| problem.contains_x0(p), n_samples / 4, seed ^ 1);
    for p in problem.spec.sets.x0.axis_extremes(n) {
        if problem.contains_x0(&p) {
            x0.push(p);
        }
    }
    let xu = sample_members(
        &lo,
        &hi,
        |p| problem.contains_x(p) && problem.contains_xu(p),
        n_samples / 4,
        seed ^ 2,
    );
    let u = if need_u {
        match problem.u_bbox() {
            Some((ulo, uhi)) => {
                sample_members(&ulo, &uhi, |p| problem.contains_u(p), n_samples / 4, seed ^ 3)
            }
            None => Vec::new(),
        }
    } else {
        Vec::new()
    };
    Domains { x, x0, xu, u }
}

struct CondCheck {
    stats: ConditionStats,
}

impl CondCheck {
    fn new(name: String) -> Self {
        CondCheck {
            stats: ConditionStats {
                name,
                samples: 0,
                max_violation: f64::NEG_INFINITY,
                strict_failures: 0,
            },
        }
    }

    fn record(&mut self, violation: f64) {
        self.stats.samples += 1;
        if violation > self.stats.max_violation {
            self.stats.max_violation = violation;
        }
    }

    fn finish(mut self) -> ConditionStats {
        if self.stats.samples == 0 {
            self.stats.max_violation = 0.0;
        }
        self.stats
    }
}

/// Re-checks every condition of the certificate's variant at sampled
/// points of the problem sets.
pub fn validate_cert(
    problem: &Problem,
    cert: &Cert,
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> Result<ValidationReport, Error> {
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
    let variant = cert.variant();
    let graph = WhGraph::build(problem.constraint);
    if graph.to_json().edges != cert.graph().edges {
        return Err(Error::CertMismatch(
            "certificate edge list does not match the constraint's graph".into(),
        ));
    }
    let law = problem.law_required()?;
    let strategy = problem.strategy;
    let augmented = cert.augmented();
    if augmented && strategy != Strategy::Hold {
        return Err(Error::CertMismatch(
            "augmented certificate for a zero-strategy problem".into(),
        ));
    }

    let domains = build_domains(problem, n_samples, seed, augmented);
    if augmented && domains.u.is_empty() {
        return Err(Error::CertMismatch(
            "augmented certificate but no admissible held inputs to sample".into(),
        ));
    }
    let model = &problem.model;
    let names: Vec<String> = (0..graph.node_count()).map(|i| graph.node_name(i)).collect();
    let mut conditions: Vec<ConditionStats> = Vec::new();

    // Initial-set condition: barrier nonpositive on X0 at every node.
    // Augmented certificates are restricted to the manifold u = g(x).
    for name in &names {
        let mut check = CondCheck::new(format!("init/{name}"));
        for x in &domains.x0 {
            let val = if augmented {
                cert.eval(name, x, Some(&law.output(x)))?
            } else {
                cert.eval(name, x, None)?
            };
            check.record(val);
        }
        conditions.push(check.finish());
    }

    // Unsafe-set condition: barrier strictly positive on Xu.
    for name in &names {
        let mut check = CondCheck::new(format!("unsafe/{name}"));
        if augmented {
            // Pair unsafe states with held inputs diagonally: the
            // product space is sampled without quadratic blowup.
            for (i, x) in domains.xu.iter().enumerate() {
                for k in 0..3usize {
                    let u = &domains.u[(i + k * 17) % domains.u.len()];
                    let val = cert.eval(name, x, Some(u))?;
                    check.record(-val);
                    if val <= 0.0 {
                        check.stats.strict_failures += 1;
                    }
                }
            }
        } else {
            for x in &domains.xu {
                let val = cert.eval(name, x, None)?;
                check.record(-val);
                if val <= 0.0 {
                    check.stats.strict_failures += 1;
                }
            }
        }
        conditions.push(check.finish());
    }

    // Edge conditions, per variant.
    for (v, l, vp) in graph.edges() {
        let vn = &names[v];
        let vpn = &names[vp];
        let eps = cert.eps_of(vpn)?;
        match variant {
            GbfVariant::Gbf => {
                for m in 0..=l {
                    let mut check = CondCheck::new(format!("step/{vn}-{l}-{vpn}/m{m}"));
                    for x in &domains.x {
                        let ant = cert.eval(vn, x, None)?;
                        if ant <= 0.0 {
                            let y = iterate_open(model, law, strategy, x, m);
                            let val = cert.eval(vpn, &y, None)?;
                            check.record(val + (l - m) as f64 * eps);
                        }
                    }
                    conditions.push(check.finish());
                }
            }
            GbfVariant::DGbf => {
                for m in 0..=l {
                    let mut check = CondCheck::new(format!("step/{vn}-{l}-{vpn}/m{m}"));
                    for x in &domains.x {
                        let base = cert.eval(vn, x, None)?;
                        let y = iterate_open(model, law, strategy, x, m);
                        let val = cert.eval(vpn, &y, None)?;
                        check.record(val - base + (l - m) as f64 * eps);
                    }
                    conditions.push(check.finish());
                }
            }
            GbfVariant::OneGbf | GbfVariant::OneDGbf => {
                let decrease = variant == GbfVariant::OneDGbf;
                if augmented {
                    let mut step = CondCheck::new(format!("step/{vn}-{l}-{vpn}"));
                    let mut between: Vec<CondCheck> = if decrease {
                        vec![CondCheck::new(format!("between/{vpn}"))]
                    } else {
                        (1..=l)
                            .map(|m| CondCheck::new(format!("between/{vpn}/m{m}")))
                            .collect()
                    };
                    for (xi, x) in domains.x.iter().enumerate() {
                        let u = &domains.u[xi % domains.u.len().max(1)];
                        let ant = cert.eval(vn, x, Some(u))?;
                        let xc = step_closed(model, law, x);
                        let uc = law.output(x);
                        let cons = cert.eval(vpn, &xc, Some(&uc))?;
                        if decrease {
                            step.record(cons - ant + l as f64 * eps);
                        } else if ant <= 0.0 {
                            step.record(cons + l as f64 * eps);
                        }
                        let xo = model.step(x, u);
                        let after = cert.eval(vpn, &xo, Some(u))?;
                        let here = cert.eval(vpn, x, Some(u))?;
                        if decrease {
                            if l >= 1 {
                                between[0].record(after - here - eps);
                            }
                        } else {
                            for m in 1..=l {
                                if here <= -(m as f64) * eps {
                                    between[m as usize - 1]
                                        .record(after + (m - 1) as f64 * eps);
                                }
                            }
                        }
                    }
                    conditions.push(step.finish());
                    if l >= 1 {
                        for b in between {
                            conditions.push(b.finish());
                        }
                    }
                } else {
                    let mut step = CondCheck::new(format!("step/{vn}-{l}-{vpn}"));
                    let mut between: Vec<CondCheck> = if decrease {
                        vec![CondCheck::new(format!("between/{vpn}"))]
                    } else {
                        (1..=l)
                            .map(|m| CondCheck::new(format!("between/{vpn}/m{m}")))
                            .collect()
                    };
                    for x in &domains.x {
                        let ant = cert.eval(vn, x, None)?;
                        let xc = step_closed(model, law, x);
                        let cons = cert.eval(vpn, &xc, None)?;
                        if decrease {
                            step.record(cons - ant + l as f64 * eps);
                        } else if ant <= 0.0 {
                            step.record(cons + l as f64 * eps);
                        }
                        let xo = model.step(x, &DVector::zeros(model.input_dim()));
                        let after = cert.eval(vpn, &xo, None)?;
                        let here = cert.eval(vpn, x, None)?;
                        if decrease {
                            if l >= 1 {
                                between[0].record(after - here - eps);
                            }
                        } else {
                            for m in 1..=l {
                                if here <= -(m as f64) * eps {
                                    between[m as usize - 1]
                                        .record(after + (m - 1) as f64 * eps);
                                }
                            }
                        }
                    }
                    conditions.push(step.finish());
                    if l >= 1 {
                        for b in between {
                            conditions.push(b.finish());
                        }
                    }
                }
            }
        }
    }

    // Duplicate names can appear when several edges induce the same
    // one-step condition; merge them.
    conditions.sort_by(|a, b| a.name.cmp(&b.name));
    conditions.dedup_by(|b, a| {
        if a.name == b.name {
            a.samples += b.samples;
            a.max_violation = a.max_violation.max(b.max_violation);
            a.strict_failures += b.strict_failures;
            true
        } else {
            false
        }
    });

    let max_violation = conditions
        .iter()
        .map(|c| c.max_violation)
        .fold(f64::NEG_INFINITY, f64::max);
    let strict_failures: usize = conditions.iter().map(|c| c.strict_failures).sum();
    let pass = max_violation <= tol && strict_failures == 0;
    Ok(ValidationReport {
        variant,
        n_samples,
        tol,
        conditions,
        max_violation,
        strict_failures,
        pass,
    })
}

/// Counts sampled points of X where the `inner` barrier is nonpositive
/// but the `outer` barrier is positive, per node. Zero everywhere
/// means the inner zero-sublevel sets sit inside the outer ones at the
/// sampled resolution.
pub fn sublevel_containment(
    problem: &Problem,
    inner: &Cert,
    outer: &Cert,
    nodes: &[String],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<(String, usize)>, Error> {
    let (lo, hi) = problem.x_bbox();
    let pts = sample_members(&lo, &hi, |p| problem.contains_x(p), n_samples, seed);
    let mut out = Vec::new();
    for name in nodes {
        let mut violations = 0usize;
        for x in &pts {
            let vi = inner.eval(name, x, None)?;
            let vo = outer.eval(name, x, None)?;
            if vi <= 0.0 && vo > 0.0 {
                violations += 1;
            }
        }
        out.push((name.clone(), violations));
    }
    Ok(out)
}

/// Evaluates the barrier of one node on a rectangular grid and emits
/// CSV rows `x1,..,xd,psi,sign`.
pub fn levelset_csv(
    cert: &Cert,
    node: &str,
    grid: &[(f64, f64, usize)],
) -> Result<String, Error> {
    let dim = match cert {
        Cert::Quad(c) => c.state_dim + c.aug_input_dim,
        Cert::Poly(c) => c.nvars(),
    };
    if grid.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "grid has {} axes, certificate needs {dim}",
            grid.len()
        )));
    }
    let aug = cert.augmented();
    let state_dim = match cert {
        Cert::Quad(c) => c.state_dim,
        Cert::Poly(c) => c.state_dim,
    };
    let mut header: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    header.push("psi".into());
    header.push("sign".into());
    let mut out = header.join(",");
    out.push('\n');

    let counts: Vec<usize> = grid.iter().map(|g| g.2.max(1)).collect();
    let total: usize = counts.iter().product();
    let mut idx = vec![0usize; dim];
    for _ in 0..total {
        let point: Vec<f64> = (0..dim)
            .map(|k| {
                let (lo, hi, n) = grid[k];
                if n <= 1 {
                    lo
                } else {
                    lo + idx[k] as f64 / (n - 1) as f64 * (hi - lo)
                }
            })
            .collect();
        let x = DVector::from_vec(point[..state_dim].to_vec());
        let val = if aug {
            let u = DVector::from_vec(point[state_dim..].to_vec());
            cert.eval(node, &x, Some(&u))?
        } else {
            cert.eval(node, &x, None)?
        };
        let sign = if val > 1e-12 {
            1
        } else if val < -1e-12 {
            -1
        } else {
            0
        };
        for c in &point {
            out.push_str(&format!("{c},"));
        }
        out.push_str(&format!("{val},{sign}\n"));
        for k in (0..dim).rev() {
            idx[k] += 1;
            if idx[k] < counts[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok(out)
}

/// Parallel sweep used by the verification hook: cheap version of
/// `validate_cert` returning only the headline numbers.
pub fn quick_check(
    problem: &Problem,
    cert: &Cert,
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> Result<bool, Error> {
    let report = validate_cert(problem, cert, n_samples, tol, seed)?;
    Ok(report.pass)
}

/// Evaluates many points in parallel; used by larger validation runs.
pub fn par_max<F>(points: &[DVector<f64>], f: F) -> f64
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    points
        .par_iter()
        .map(|p| f(p))
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cert::QuadCert;
    use crate::graph::WhGraph;
    use crate::wh::WhConstraint;
    use nalgebra::DMatrix;

    fn toy_problem() -> Problem {
        let v = serde_json::json!({
            "system": {"type": "linear", "a": [[0.5]], "b": [[1.0]]},
            "controller": {"type": "linear", "k": [[0.0]]},
            "sets": {
                "x": {"type": "ball", "center": [0.0], "radius": 2.0},
                "x0": {"type": "ball", "center": [0.0], "radius": 0.3},
                "xu": {"type": "box", "lo": [1.5], "hi": [2.0]}
            },
            "constraint": {"r": 1, "s": 1},
            "strategy": "zero"
        });
        Problem::from_json_str(&v.to_string()).unwrap()
    }

    fn hand_cert(problem: &Problem, variant: GbfVariant, scale: f64) -> Cert {
        let g = WhGraph::build(problem.constraint);
        // Psi(x) = x^2 - 1: nonpositive on X0, positive on Xu, and
        // decreasing under x+ = 0.5x.
        let block = DMatrix::from_row_slice(2, 2, &[scale, 0.0, 0.0, -scale]);
        let names: Vec<String> = (0..g.node_count()).map(|i| g.node_name(i)).collect();
        let cert = QuadCert::from_blocks(
            variant,
            Strategy::Zero,
            g.to_json(),
            1,
            0,
            &names,
            &[block],
            &[0.01],
        );
        Cert::Quad(cert)
    }

    #[test]
    fn valid_certificate_passes() {
        let problem = toy_problem();
        for variant in [GbfVariant::Gbf, GbfVariant::OneGbf] {
            let cert = hand_cert(&problem, variant, 1.0);
            let report = validate_cert(&problem, &cert, 2000, 1e-6, 7).unwrap();
            assert!(report.pass, "{variant}: {report:?}");
        }
    }

    #[test]
    fn zero_certificate_fails_unsafe_condition() {
        let problem = toy_problem();
        let cert = hand_cert(&problem, GbfVariant::Gbf, 0.0);
        let report = validate_cert(&problem, &cert, 2000, 1e-6, 7).unwrap();
        assert!(!report.pass);
        assert!(report.strict_failures > 0);
        let unsafe_cond = report.conditions.iter().find(|c| c.name == "unsafe/v1").unwrap();
        assert!(unsafe_cond.strict_failures > 0);
    }

    #[test]
    fn decrease_variant_checked_unconditionally() {
        let problem = toy_problem();
        // Psi(x) = x^2 - 1 under x+ = 0.5x decreases everywhere except
        // x = 0, where the change is 0; with the decrease requirement
        // -l eps and l = 0 this still passes.
        let cert = hand_cert(&problem, GbfVariant::DGbf, 1.0);
        let report = validate_cert(&problem, &cert, 2000, 1e-6, 7).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn mismatched_constraint_rejected() {
        let problem = toy_problem();
        let mut g2 = WhGraph::build(WhConstraint::new(2, 4).unwrap()).to_json();
        g2.nodes.truncate(1);
        let block = DMatrix::identity(2, 2);
        let cert = Cert::Quad(QuadCert::from_blocks(
            GbfVariant::Gbf,
            Strategy::Zero,
            g2,
            1,
            0,
            &["v1".to_string()],
            &[block],
            &[0.01],
        ));
        assert!(matches!(
            validate_cert(&problem, &cert, 100, 1e-6, 7),
            Err(Error::CertMismatch(_))
        ));
    }

    #[test]
    fn prefix_stability_makes_violation_monotone() {
        let problem = toy_problem();
        let cert = hand_cert(&problem, GbfVariant::Gbf, 1.0);
        let small = validate_cert(&problem, &cert, 500, 1e-6, 7).unwrap();
        let large = validate_cert(&problem, &cert, 2000, 1e-6, 7).unwrap();
        assert!(large.max_violation >= small.max_violation - 1e-15);
    }

    #[test]
    fn levelset_grid() {
        let problem = toy_problem();
        let cert = hand_cert(&problem, GbfVariant::Gbf, 1.0);
        let csv = levelset_csv(&cert, "v1", &[(-2.0, 2.0, 5)]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines[0] == "x1,psi,sign");
        // Center point x = 0 has psi = -1.
        assert!(lines[3].starts_with("0,-1"));
        assert!(levelset_csv(&cert, "v1", &[(-1.0, 1.0, 3), (-1.0, 1.0, 3)]).is_err());
    }
}
