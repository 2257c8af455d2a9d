//! Sum-of-squares certification of the decrease variants for
//! polynomial dynamics.
//!
//! Each condition `target >= 0 on {g_j >= 0}` is discharged through
//! the identity `target = sum_j lambda_j g_j + z' Q z` with every
//! multiplier and the tail sum of squares. The identity is imposed
//! coefficient by coefficient, and after solving the tiny equality
//! residual is folded back into the tail Gram matrix so the stored
//! certificate reproduces the target to machine precision.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DMatrix;

use crate::cert::{Cert, CertReport, CertStatus, GbfVariant, PolyCert, PolyJson, SosBlock, SosMultiplier};
use crate::conic::{min_eig, ConicProblem, MatId, MatTerm, ScalarEq, ScalarId, SolveStatus};
use crate::error::Error;
use crate::graph::WhGraph;
use crate::poly::{monomial_basis, Mono, Poly64};
use crate::problem::Problem;
use crate::schedule::Schedule;
use crate::systems::{closed_poly_map, iterated_poly_map, open_zero_poly_map, Strategy};
use crate::validate;

const COEFF_BOUND: f64 = 1e4;
const EPS_HI: f64 = 1e3;
const RECON_TOL: f64 = 1e-9;
const GRAM_EIG_TOL: f64 = 1e-7;

/// One polynomial condition `target >= 0` on the region cut out by
/// `gs`. The target is linear in the barrier coefficients: a signed
/// sum of barrier templates composed with state maps, plus a multiple
/// of the shared offset and a constant.
struct SosCond {
    name: String,
    /// (node index, sign, substitution for the template variables).
    terms: Vec<(usize, f64, Vec<Poly64>)>,
    eps_coef: f64,
    constant: f64,
    gs: Vec<(String, Poly64)>,
}

fn identity_map(n: usize) -> Vec<Poly64> {
    (0..n).map(|i| Poly64::var(n, i)).collect()
}

fn build_conditions(
    problem: &Problem,
    variant: GbfVariant,
    sched: &Schedule,
) -> Result<(WhGraph, Vec<SosCond>), Error> {
    if !variant.is_decrease() {
        return Err(Error::UnsupportedVariant(format!(
            "{variant} has implication-shaped conditions; the sum-of-squares \
             encoding needs the conjunctive decrease variants (1dgbf, dgbf)"
        )));
    }
    if problem.strategy != Strategy::Zero {
        return Err(Error::UnsupportedVariant(
            "sum-of-squares certification covers the zero strategy; hold needs the \
             input-augmented quadratic encoding"
                .into(),
        ));
    }
    let law = problem.law_required()?;
    let sys = problem.model.as_poly();
    let n = sys.n;
    let graph = WhGraph::build(problem.constraint);
    let id = identity_map(n);
    let fc = closed_poly_map(&sys, law)?;
    let x_gs: Vec<(String, Poly64)> = problem
        .x_poly
        .ineqs
        .iter()
        .enumerate()
        .map(|(i, g)| (format!("x/{i}"), g.clone()))
        .collect();

    let mut conds = Vec::new();
    for v in 0..graph.node_count() {
        let name = graph.node_name(v);
        conds.push(SosCond {
            name: format!("init/{name}"),
            terms: vec![(v, -1.0, id.clone())],
            eps_coef: 0.0,
            constant: -sched.sos_init_margin,
            gs: problem
                .x0_poly
                .ineqs
                .iter()
                .enumerate()
                .map(|(i, g)| (format!("x0/{i}"), g.clone()))
                .collect(),
        });
        let mut gs: Vec<(String, Poly64)> = problem
            .xu_poly
            .ineqs
            .iter()
            .enumerate()
            .map(|(i, g)| (format!("xu/{i}"), g.clone()))
            .collect();
        gs.extend(x_gs.iter().cloned());
        conds.push(SosCond {
            name: format!("unsafe/{name}"),
            terms: vec![(v, 1.0, id.clone())],
            eps_coef: 0.0,
            constant: -sched.sos_unsafe_margin,
            gs,
        });
    }
    match variant {
        GbfVariant::OneDGbf => {
            for (v, l, w) in graph.edges() {
                conds.push(SosCond {
                    name: format!("step/{}-{}-{}", graph.node_name(v), l, graph.node_name(w)),
                    terms: vec![(v, 1.0, id.clone()), (w, -1.0, fc.clone())],
                    eps_coef: -(l as f64),
                    constant: 0.0,
                    gs: x_gs.clone(),
                });
            }
            let fo = open_zero_poly_map(&sys)?;
            let mut heads: Vec<usize> =
                graph.edges().iter().filter(|(_, l, _)| *l >= 1).map(|&(_, _, w)| w).collect();
            heads.sort_unstable();
            heads.dedup();
            for w in heads {
                conds.push(SosCond {
                    name: format!("between/{}", graph.node_name(w)),
                    terms: vec![(w, 1.0, id.clone()), (w, -1.0, fo.clone())],
                    eps_coef: 1.0,
                    constant: 0.0,
                    gs: x_gs.clone(),
                });
            }
        }
        GbfVariant::DGbf => {
            for (v, l, w) in graph.edges() {
                for m in 0..=l {
                    let map = iterated_poly_map(&sys, law, Strategy::Zero, m, sched.degree_cap)?;
                    conds.push(SosCond {
                        name: format!(
                            "step/{}-{}-{}/m{m}",
                            graph.node_name(v),
                            l,
                            graph.node_name(w)
                        ),
                        terms: vec![(v, 1.0, id.clone()), (w, -1.0, map)],
                        eps_coef: -((l - m) as f64),
                        constant: 0.0,
                        gs: x_gs.clone(),
                    });
                }
            }
        }
        _ => unreachable!(),
    }
    Ok((graph, conds))
}

fn round_up_even(d: usize) -> usize {
    d + d % 2
}

/// Degree of the condition target for degree-`np` templates.
fn target_degree(cond: &SosCond, np: usize) -> usize {
    cond.terms
        .iter()
        .map(|(_, _, map)| np * map.iter().map(|p| p.degree()).max().unwrap_or(1).max(1))
        .max()
        .unwrap_or(np)
}

/// Gram degrees for one condition: the identity degree and one
/// multiplier degree per set inequality.
fn gram_degrees(cond: &SosCond, np: usize) -> (usize, Vec<usize>) {
    let dt = target_degree(cond, np);
    let mult: Vec<usize> =
        cond.gs.iter().map(|(_, g)| round_up_even(dt.saturating_sub(g.degree()))).collect();
    let id_deg = round_up_even(
        cond.gs
            .iter()
            .zip(&mult)
            .map(|((_, g), d)| d + g.degree())
            .max()
            .unwrap_or(dt)
            .max(dt),
    );
    (id_deg, mult)
}

fn gram_to_poly(basis: &[Mono], q: &DMatrix<f64>) -> Poly64 {
    let n = basis.first().map_or(0, |m| m.0.len());
    let mut p = Poly64::zero(n);
    for i in 0..basis.len() {
        for j in 0..basis.len() {
            p.add_term(basis[i].mul(&basis[j]), q[(i, j)]);
        }
    }
    p
}

/// Folds a small polynomial into a Gram matrix over a dense basis by
/// splitting each monomial into two basis halves.
fn absorb_into_gram(
    r: &Poly64,
    basis: &[Mono],
    index: &BTreeMap<Mono, usize>,
    q: &mut DMatrix<f64>,
) {
    let _ = basis;
    for (m, &c) in r.terms() {
        if c == 0.0 {
            continue;
        }
        // Split the exponent so both halves stay within the basis half
        // degree: greedily move floor(deg/2) of the total into `lo`.
        let mut budget = m.degree() as u32 / 2;
        let mut lo = vec![0u32; m.0.len()];
        for (slot, &e) in lo.iter_mut().zip(&m.0) {
            let take = e.min(budget);
            *slot = take;
            budget -= take;
        }
        let lo = Mono(lo);
        let hi = Mono(m.0.iter().zip(&lo.0).map(|(&e, &l)| e - l).collect());
        let i = index[&lo];
        let j = index[&hi];
        if i == j {
            q[(i, i)] += c;
        } else {
            q[(i, j)] += c / 2.0;
            q[(j, i)] += c / 2.0;
        }
    }
}

/// Assembles the condition target as a concrete polynomial from solved
/// barrier coefficients and offset.
fn target_poly(
    cond: &SosCond,
    tmpl: &[Mono],
    psi: &[Poly64],
    eps: f64,
    n: usize,
    degree_cap: usize,
) -> Result<Poly64, Error> {
    let _ = tmpl;
    let mut out = Poly64::constant(n, cond.constant + cond.eps_coef * eps);
    for (node, sign, map) in &cond.terms {
        out = out.add(&psi[*node].compose(map, degree_cap)?.scale(sign));
    }
    Ok(out)
}

struct SosVars {
    psi: Vec<Vec<ScalarId>>,
    eps: ScalarId,
    /// Per condition: the tail Gram and one Gram per multiplier.
    grams: Vec<(MatId, Vec<MatId>)>,
}

fn sos_problem(
    conds: &[SosCond],
    node_count: usize,
    tmpl: &[Mono],
    n: usize,
    sched: &Schedule,
    variant: GbfVariant,
) -> Result<(ConicProblem, SosVars, Vec<Vec<Mono>>, Vec<Vec<Vec<Mono>>>), Error> {
    let mut cp = ConicProblem::new();
    let psi: Vec<Vec<ScalarId>> = (0..node_count)
        .map(|v| {
            tmpl.iter()
                .enumerate()
                .map(|(i, _)| {
                    cp.scalar_with_bounds(
                        &format!("psi/{v}/{i}"),
                        Some(-COEFF_BOUND),
                        Some(COEFF_BOUND),
                    )
                })
                .collect()
        })
        .collect();
    let eps = cp.scalar_with_bounds("eps", Some(sched.eps_min(variant.is_decrease())), Some(EPS_HI));

    let np = sched.sos_degree;
    let mut bases = Vec::new();
    let mut mult_bases = Vec::new();
    let mut grams = Vec::new();
    for cond in conds {
        let (id_deg, mult_degs) = gram_degrees(cond, np);
        if id_deg > sched.degree_cap {
            return Err(Error::DegreeOverflow { got: id_deg, cap: sched.degree_cap });
        }
        let basis = monomial_basis(n, id_deg / 2);
        let q0 = cp.sym(&format!("{}/gram", cond.name), basis.len());
        cp.psd(
            &format!("{}/gram", cond.name),
            basis.len(),
            vec![MatTerm::Conj {
                var: q0,
                left: DMatrix::identity(basis.len(), basis.len()),
                scale: 1.0,
            }],
        );
        let mut mids = Vec::new();
        let mut mbs = Vec::new();
        for ((label, _), deg) in cond.gs.iter().zip(&mult_degs) {
            let mb = monomial_basis(n, deg / 2);
            let q = cp.sym(&format!("{}/{label}", cond.name), mb.len());
            cp.psd(
                &format!("{}/{label}", cond.name),
                mb.len(),
                vec![MatTerm::Conj {
                    var: q,
                    left: DMatrix::identity(mb.len(), mb.len()),
                    scale: 1.0,
                }],
            );
            mids.push(q);
            mbs.push(mb);
        }

        // Coefficient rows: target - sum lambda_j g_j - tail = 0 for
        // every monomial up to the identity degree.
        let mut rows: BTreeMap<Mono, (BTreeMap<usize, f64>, BTreeMap<(usize, usize, usize), f64>, f64)> =
            monomial_basis(n, id_deg)
                .into_iter()
                .map(|m| (m, (BTreeMap::new(), BTreeMap::new(), 0.0)))
                .collect();
        let constant = Mono::constant(n);
        rows.get_mut(&constant).unwrap().2 = -cond.constant;
        if cond.eps_coef != 0.0 {
            *rows.get_mut(&constant).unwrap().0.entry(eps.0).or_insert(0.0) += cond.eps_coef;
        }
        for (node, sign, map) in &cond.terms {
            for (i, beta) in tmpl.iter().enumerate() {
                let mut bp = Poly64::zero(n);
                bp.add_term(beta.clone(), 1.0);
                let comp = bp.compose(map, sched.degree_cap)?;
                for (m, c) in comp.terms() {
                    if let Some(row) = rows.get_mut(m) {
                        *row.0.entry(psi[*node][i].0).or_insert(0.0) += sign * c;
                    } else if c.abs() > 0.0 {
                        return Err(Error::DegreeOverflow { got: m.degree(), cap: id_deg });
                    }
                }
            }
        }
        for (j, ((_, g), mb)) in cond.gs.iter().zip(&mbs).enumerate() {
            for a in 0..mb.len() {
                for b in a..mb.len() {
                    let mult = if a == b { 1.0 } else { 2.0 };
                    let mu = mb[a].mul(&mb[b]);
                    for (gm, gc) in g.terms() {
                        let alpha = mu.mul(gm);
                        let row = rows.get_mut(&alpha).expect("multiplier stays in degree");
                        *row.1.entry((mids[j].0, a, b)).or_insert(0.0) -= mult * gc;
                    }
                }
            }
        }
        for a in 0..basis.len() {
            for b in a..basis.len() {
                let mult = if a == b { 1.0 } else { 2.0 };
                let alpha = basis[a].mul(&basis[b]);
                let row = rows.get_mut(&alpha).expect("tail stays in degree");
                *row.1.entry((q0.0, a, b)).or_insert(0.0) -= mult;
            }
        }
        for (_, (scalars, entries, rhs)) in rows {
            cp.eq(ScalarEq {
                scalar_terms: scalars.into_iter().map(|(id, c)| (ScalarId(id), c)).collect(),
                entry_terms: entries
                    .into_iter()
                    .map(|((id, a, b), c)| (MatId(id), a, b, c))
                    .collect(),
                rhs,
            });
        }
        grams.push((q0, mids));
        bases.push(basis);
        mult_bases.push(mbs);
    }
    cp.minimize(vec![(eps, -1.0)]);
    Ok((cp, SosVars { psi, eps, grams }, bases, mult_bases))
}

/// Certifies a decrease-variant barrier for a polynomial closed loop.
pub fn verify_sos(
    problem: &Problem,
    variant: GbfVariant,
    sched: &Schedule,
) -> Result<CertReport, Error> {
    let started = Instant::now();
    let (graph, conds) = build_conditions(problem, variant, sched)?;
    let n = problem.model.state_dim();
    let tmpl = monomial_basis(n, sched.sos_degree);
    let (cp, vars, bases, mult_bases) =
        sos_problem(&conds, graph.node_count(), &tmpl, n, sched, variant)?;
    let out = cp.solve(sched.feas_tol)?;
    match out.status {
        SolveStatus::Feasible => {}
        SolveStatus::Infeasible => {
            return Ok(CertReport {
                status: CertStatus::Infeasible,
                cert: None,
                residual: f64::NAN,
                solver_status: out.solver_status.clone(),
                wall_ms: started.elapsed().as_millis(),
                note: Some("coefficient identities admit no feasible Gram data".into()),
            });
        }
        _ => {
            return Ok(CertReport {
                status: CertStatus::Unknown,
                cert: None,
                residual: f64::NAN,
                solver_status: out.solver_status.clone(),
                wall_ms: started.elapsed().as_millis(),
                note: None,
            });
        }
    }

    let eps = out.scalar(vars.eps).max(0.0);
    let psi: Vec<Poly64> = vars
        .psi
        .iter()
        .map(|ids| {
            let mut p = Poly64::zero(n);
            for (i, id) in ids.iter().enumerate() {
                p.add_term(tmpl[i].clone(), out.scalar(*id));
            }
            p
        })
        .collect();

    let mut sos = BTreeMap::new();
    let mut residuals = BTreeMap::new();
    for (k, cond) in conds.iter().enumerate() {
        let basis = &bases[k];
        let index: BTreeMap<Mono, usize> =
            basis.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        let mut q0 = out.mat(vars.grams[k].0).clone();
        let mut mults = Vec::new();
        let mut acc = target_poly(cond, &tmpl, &psi, eps, n, sched.degree_cap)?;
        for (j, (label, g)) in cond.gs.iter().enumerate() {
            let mb = &mult_bases[k][j];
            let q = out.mat(vars.grams[k].1[j]);
            let lam = gram_to_poly(mb, q);
            acc = acc.add(&lam.mul(g).scale(&-1.0));
            mults.push(SosMultiplier {
                label: label.clone(),
                poly: PolyJson::from_poly(&lam),
                basis: mb.iter().map(|m| m.0.clone()).collect(),
                gram: (0..q.nrows())
                    .map(|r| (0..q.ncols()).map(|c| q[(r, c)]).collect())
                    .collect(),
            });
        }
        let r = acc.add(&gram_to_poly(basis, &q0).scale(&-1.0));
        absorb_into_gram(&r, basis, &index, &mut q0);
        sos.insert(
            cond.name.clone(),
            SosBlock {
                basis: basis.iter().map(|m| m.0.clone()).collect(),
                gram: (0..q0.nrows())
                    .map(|r| (0..q0.ncols()).map(|c| q0[(r, c)]).collect())
                    .collect(),
                multipliers: mults,
            },
        );
        residuals.insert(format!("eig/{}", cond.name), min_eig(&q0));
    }

    let names: Vec<String> = (0..graph.node_count()).map(|i| graph.node_name(i)).collect();
    let cert = PolyCert {
        variant,
        strategy: problem.strategy,
        graph: graph.to_json(),
        state_dim: n,
        aug_input_dim: 0,
        degree: sched.sos_degree,
        eps: names.iter().map(|s| (s.clone(), eps)).collect(),
        psi: names
            .iter()
            .zip(&psi)
            .map(|(s, p)| (s.clone(), PolyJson::from_poly(p)))
            .collect(),
        sos,
        residuals,
    };

    let (recon, gram_eig) = check_poly_cert(problem, &cert, sched)?;
    let cert = Cert::Poly(cert);
    if recon < RECON_TOL
        && gram_eig >= -GRAM_EIG_TOL
        && validate::quick_check(problem, &cert, sched.verify_samples, sched.sample_tol, sched.seed)?
    {
        Ok(CertReport {
            status: CertStatus::Certified,
            cert: Some(cert),
            residual: gram_eig,
            solver_status: out.solver_status.clone(),
            wall_ms: started.elapsed().as_millis(),
            note: None,
        })
    } else {
        Ok(CertReport {
            status: CertStatus::Unknown,
            cert: Some(cert),
            residual: gram_eig,
            solver_status: out.solver_status.clone(),
            wall_ms: started.elapsed().as_millis(),
            note: Some(format!(
                "solver returned Gram data that fails the independent re-check \
                 (reconstruction {recon:.2e}, min eigenvalue {gram_eig:.2e})"
            )),
        })
    }
}

/// Re-derives every condition target from the problem and checks the
/// stored Gram identity: returns the worst coefficient reconstruction
/// error and the smallest eigenvalue over all Gram blocks.
pub fn check_poly_cert(
    problem: &Problem,
    cert: &PolyCert,
    sched: &Schedule,
) -> Result<(f64, f64), Error> {
    let (graph, conds) = build_conditions(problem, cert.variant, sched)?;
    let n = problem.model.state_dim();
    let names: Vec<String> = (0..graph.node_count()).map(|i| graph.node_name(i)).collect();
    let psi: Vec<Poly64> =
        names.iter().map(|s| cert.psi_poly(s)).collect::<Result<Vec<_>, _>>()?;
    let eps = cert.eps_of(&names[0])?;
    let mut worst = 0.0f64;
    let mut eig = f64::INFINITY;
    for cond in &conds {
        let block = cert
            .sos
            .get(&cond.name)
            .ok_or_else(|| Error::CertMismatch(format!("certificate lacks block {}", cond.name)))?;
        let basis: Vec<Mono> = block.basis.iter().map(|m| Mono(m.clone())).collect();
        let q0 = DMatrix::from_fn(basis.len(), basis.len(), |i, j| block.gram[i][j]);
        eig = eig.min(min_eig(&q0));
        let mut acc = target_poly(cond, &[], &psi, eps, n, sched.degree_cap)?;
        if block.multipliers.len() != cond.gs.len() {
            return Err(Error::CertMismatch(format!(
                "block {} carries {} multipliers for {} set inequalities",
                cond.name,
                block.multipliers.len(),
                cond.gs.len()
            )));
        }
        for (sm, (_, g)) in block.multipliers.iter().zip(&cond.gs) {
            let mb: Vec<Mono> = sm.basis.iter().map(|m| Mono(m.clone())).collect();
            let q = DMatrix::from_fn(mb.len(), mb.len(), |i, j| sm.gram[i][j]);
            eig = eig.min(min_eig(&q));
            let lam = sm.poly.to_poly(n)?;
            let from_gram = gram_to_poly(&mb, &q);
            for (m, c) in lam.add(&from_gram.scale(&-1.0)).terms() {
                let _ = m;
                worst = worst.max(c.abs());
            }
            acc = acc.add(&lam.mul(g).scale(&-1.0));
        }
        let r = acc.add(&gram_to_poly(&basis, &q0).scale(&-1.0));
        for (_, c) in r.terms() {
            worst = worst.max(c.abs());
        }
    }
    Ok((worst, eig))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi;

    fn toy(a: f64, k: f64) -> Problem {
        let text = serde_json::json!({
            "system": {"type": "linear", "a": [[a]], "b": [[1.0]]},
            "controller": {"type": "linear", "k": [[k]]},
            "sets": {
                "x": {"type": "ball", "center": [0.0], "radius": 4.0},
                "x0": {"type": "box", "lo": [-0.3], "hi": [0.3]},
                "xu": {"type": "box", "lo": [3.0], "hi": [4.0]},
                "u": {"type": "box", "lo": [-2.0], "hi": [2.0]}
            },
            "constraint": {"r": 1, "s": 2},
            "strategy": "zero"
        })
        .to_string();
        Problem::from_json_str(&text).unwrap()
    }

    fn contraction() -> Problem {
        // x+ = 0.9 x - 0.02 x^2 + u with u = -0.5 x stays inside
        // [0, 3] and shrinks toward the origin whether or not the
        // packet arrives.
        let text = serde_json::json!({
            "system": {
                "type": "polynomial",
                "state_dim": 1,
                "input_dim": 1,
                "dynamics": [{"terms": [
                    {"coef": 0.9, "powers": [1, 0]},
                    {"coef": -0.02, "powers": [2, 0]},
                    {"coef": 1.0, "powers": [0, 1]}
                ]}]
            },
            "controller": {"type": "polynomial", "outputs": [{"terms": [
                {"coef": -0.5, "powers": [1]}
            ]}]},
            "sets": {
                "x": {"type": "box", "lo": [0.0], "hi": [3.0]},
                "x0": {"type": "box", "lo": [0.0], "hi": [1.0]},
                "xu": {"type": "box", "lo": [2.5], "hi": [3.0]}
            },
            "constraint": {"r": 1, "s": 2},
            "strategy": "zero"
        })
        .to_string();
        Problem::from_json_str(&text).unwrap()
    }

    #[test]
    fn linear_toy_agrees_with_quadratic_pipeline() {
        let problem = toy(0.5, 0.0);
        let sched = Schedule { verify_samples: 500, ..Schedule::default() };
        for variant in [GbfVariant::OneDGbf, GbfVariant::DGbf] {
            let sos_rep = verify_sos(&problem, variant, &sched).unwrap();
            assert_eq!(sos_rep.status, CertStatus::Certified, "{variant}: {:?}", sos_rep.note);
            let lmi_rep = lmi::verify(&problem, variant, &sched).unwrap();
            assert_eq!(lmi_rep.status, CertStatus::Certified);
            let report = validate::validate_cert(
                &problem,
                sos_rep.cert.as_ref().unwrap(),
                2_000,
                sched.sample_tol,
                1,
            )
            .unwrap();
            assert!(report.pass, "{variant}: {:?}", report.conditions);
        }
    }

    #[test]
    fn doubling_map_is_infeasible() {
        let problem = toy(2.0, 0.0);
        let sched = Schedule::default();
        let rep = verify_sos(&problem, GbfVariant::OneDGbf, &sched).unwrap();
        assert_eq!(rep.status, CertStatus::Infeasible, "{:?}", rep.solver_status);
    }

    #[test]
    fn nonlinear_contraction_certified_and_reconstructs() {
        let problem = contraction();
        let sched = Schedule { verify_samples: 500, ..Schedule::default() };
        let rep = verify_sos(&problem, GbfVariant::OneDGbf, &sched).unwrap();
        assert_eq!(rep.status, CertStatus::Certified, "{:?} {:?}", rep.solver_status, rep.note);
        let Cert::Poly(cert) = rep.cert.unwrap() else { panic!("sos path returns poly certs") };
        let (recon, eig) = check_poly_cert(&problem, &cert, &sched).unwrap();
        assert!(recon < RECON_TOL, "reconstruction residual {recon:.3e}");
        assert!(eig >= -GRAM_EIG_TOL, "gram eigenvalue {eig:.3e}");
    }

    #[test]
    fn corrupted_gram_is_caught_by_recheck() {
        let problem = toy(0.5, 0.0);
        let sched = Schedule { verify_samples: 500, ..Schedule::default() };
        let rep = verify_sos(&problem, GbfVariant::OneDGbf, &sched).unwrap();
        let Cert::Poly(mut cert) = rep.cert.unwrap() else { unreachable!() };
        let block = cert.sos.values_mut().next().unwrap();
        block.gram[0][0] += 1e-6;
        let (recon, _) = check_poly_cert(&problem, &cert, &sched).unwrap();
        assert!(recon > RECON_TOL);
    }

    #[test]
    fn implication_variants_and_hold_are_rejected() {
        let problem = toy(0.5, 0.0);
        let sched = Schedule::default();
        for variant in [GbfVariant::Gbf, GbfVariant::OneGbf] {
            assert!(matches!(
                verify_sos(&problem, variant, &sched),
                Err(Error::UnsupportedVariant(_))
            ));
        }
        let text = serde_json::json!({
            "system": {"type": "linear", "a": [[0.5]], "b": [[1.0]]},
            "controller": {"type": "linear", "k": [[0.0]]},
            "sets": {
                "x": {"type": "ball", "center": [0.0], "radius": 4.0},
                "x0": {"type": "box", "lo": [-0.3], "hi": [0.3]},
                "xu": {"type": "box", "lo": [3.0], "hi": [4.0]},
                "u": {"type": "box", "lo": [-2.0], "hi": [2.0]}
            },
            "constraint": {"r": 1, "s": 2},
            "strategy": "hold"
        })
        .to_string();
        let hold = Problem::from_json_str(&text).unwrap();
        assert!(matches!(
            verify_sos(&hold, GbfVariant::OneDGbf, &sched),
            Err(Error::UnsupportedVariant(_))
        ));
    }

    #[test]
    fn degree_cap_stops_deep_compositions() {
        let problem = contraction();
        let sched = Schedule { sos_degree: 7, ..Schedule::default() };
        assert!(matches!(
            verify_sos(&problem, GbfVariant::OneDGbf, &sched),
            Err(Error::DegreeOverflow { .. })
        ));
    }
}
