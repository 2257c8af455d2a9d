//! Quadratic barrier certification by semidefinite programming.
//!
//! Each quantified barrier condition becomes a matrix inequality by
//! the S-procedure: set membership enters through nonnegative
//! multipliers on the quadratic forms describing the sets. The
//! decrease-form variants are single feasibility problems. The
//! implication-form variants multiply the antecedent by a free
//! multiplier, which makes the problem bilinear; those are attacked by
//! sweeping a shared antecedent multiplier over a grid and then
//! alternating between the multiplier block and the certificate block.
//!
//! A `Certified` answer is never taken from the solver alone: the
//! returned blocks are re-assembled numerically, their eigenvalues
//! checked, and the certificate is additionally run through the
//! sampling validator before it is reported.

use crate::cert::{Cert, CertReport, CertStatus, GbfVariant, QuadCert};
use crate::conic::{min_eig, ConicProblem, MatId, MatTerm, ScalarEq, ScalarId, SolveOutcome, SolveStatus};
use crate::error::Error;
use crate::graph::WhGraph;
use crate::problem::{ControllerSpec, Problem};
use crate::schedule::Schedule;
use crate::systems::{ControlLaw, Strategy, SystemModel};
use crate::validate;
use nalgebra::DMatrix;
use rayon::prelude::*;
use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

const MULT_BOUND: f64 = 1e6;
const SLACK_LO: f64 = -1e3;
const EPS_HI: f64 = 1e3;
const K_BOUND: f64 = 1e2;

#[derive(Clone, Debug)]
enum CondKind {
    /// Antecedent `Ψ_ant(z) + ant_eps·ε_tgt ≤ 0` guards the step bound.
    Imp { ant: usize, ant_eps: f64 },
    /// Unconditional decrease relative to `Ψ_base(z)`.
    Dec { base: usize },
}

/// One step condition: `Ψ_tgt(T z) [− Ψ_base(z)] ≤ −rhs_eps·ε_tgt`
/// for all z in X (or X×U when augmented).
#[derive(Clone, Debug)]
struct StepCond {
    name: String,
    map: DMatrix<f64>,
    tgt: usize,
    rhs_eps: f64,
    kind: CondKind,
    /// Number of open-loop steps composed into `map`; drives the
    /// controller linearization during synthesis.
    m: u32,
}

/// Value of the antecedent multiplier for each implication condition.
#[derive(Clone, Debug)]
enum GammaAssign {
    Zero,
    Shared(f64),
    PerCond(BTreeMap<String, f64>),
}

impl GammaAssign {
    fn value(&self, name: &str) -> f64 {
        match self {
            GammaAssign::Zero => 0.0,
            GammaAssign::Shared(g) => *g,
            GammaAssign::PerCond(map) => map.get(name).copied().unwrap_or(0.0),
        }
    }
}

struct LmiContext {
    variant: GbfVariant,
    strategy: Strategy,
    graph: WhGraph,
    names: Vec<String>,
    n: usize,
    mu: usize,
    aug: bool,
    /// Side of each certificate block: n+1, or n+mu+1 when augmented.
    d: usize,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    /// Forms nonnegative on the respective set, lifted to dimension d.
    x_forms: Vec<(String, DMatrix<f64>)>,
    u_forms: Vec<(String, DMatrix<f64>)>,
    xu_forms: Vec<(String, DMatrix<f64>)>,
    /// Initial-set forms in the (n+1)-dimensional cone of condition (a).
    x0_forms: Vec<(String, DMatrix<f64>)>,
    /// Embeds [x;1] into the evaluation point of condition (a):
    /// identity normally, the manifold u = Kx when augmented.
    t_init: DMatrix<f64>,
    steps: Vec<StepCond>,
}

/// Homogenized state map: z = [x;1] goes to [Mx;1].
fn hom(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut t = DMatrix::zeros(n + 1, n + 1);
    t.view_mut((0, 0), (n, n)).copy_from(m);
    t[(n, n)] = 1.0;
    t
}

/// Matrix with a single 1 in the homogenizing corner.
fn e_hom(dim: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(dim, dim);
    e[(dim - 1, dim - 1)] = 1.0;
    e
}

/// Lifts a form over [y;1] into the block coordinates z = [x;u;1].
/// `offset` is where y sits inside z.
fn lift_form(mat: &DMatrix<f64>, y_dim: usize, offset: usize, d: usize) -> DMatrix<f64> {
    let mut sel = DMatrix::zeros(y_dim + 1, d);
    for i in 0..y_dim {
        sel[(i, offset + i)] = 1.0;
    }
    sel[(y_dim, d - 1)] = 1.0;
    sel.transpose() * mat * sel
}

fn labeled(prefix: &str, mats: Vec<DMatrix<f64>>) -> Vec<(String, DMatrix<f64>)> {
    mats.into_iter().enumerate().map(|(i, m)| (format!("{prefix}{i}"), m)).collect()
}

impl LmiContext {
    fn build(problem: &Problem, variant: GbfVariant) -> Result<LmiContext, Error> {
        let (a, b) = match &problem.model {
            SystemModel::Linear(sys) => (sys.a.clone(), sys.b.clone()),
            SystemModel::Poly(_) => {
                return Err(Error::Other(
                    "the semidefinite certifier handles linear dynamics only; \
                     use the sum-of-squares certifier for polynomial systems"
                        .into(),
                ))
            }
        };
        let law = problem.law_required()?;
        let k = match law {
            ControlLaw::Linear(c) => c.k.clone(),
            ControlLaw::Poly(_) => {
                return Err(Error::Other(
                    "the semidefinite certifier needs a linear feedback gain".into(),
                ))
            }
        };
        LmiContext::build_with(problem, variant, a, b, k)
    }

    fn build_with(
        problem: &Problem,
        variant: GbfVariant,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        k: DMatrix<f64>,
    ) -> Result<LmiContext, Error> {
        let n = a.nrows();
        let mu = b.ncols();
        let strategy = problem.strategy;
        let aug = variant.augmented(strategy);
        let d = if aug { n + mu + 1 } else { n + 1 };
        let graph = WhGraph::build(problem.constraint);
        let names: Vec<String> = (0..graph.node_count()).map(|i| graph.node_name(i)).collect();
        let sets = problem.quad_sets()?;

        let lift_x = |m: &DMatrix<f64>| lift_form(m, n, 0, d);
        let x_forms = labeled("x", sets.x.forms.iter().map(|f| lift_x(&f.mat)).collect());
        let xu_forms = labeled("xu", sets.xu.forms.iter().map(|f| lift_x(&f.mat)).collect());
        let x0_forms = labeled("x0", sets.x0.forms.iter().map(|f| f.mat.clone()).collect());
        let u_forms = if aug {
            let us = sets.u.as_ref().ok_or(Error::Other(
                "augmented certification needs an admissible input set".into(),
            ))?;
            labeled("u", us.forms.iter().map(|f| lift_form(&f.mat, mu, n, d)).collect())
        } else {
            Vec::new()
        };

        let t_init = if aug {
            let mut t = DMatrix::zeros(d, n + 1);
            t.view_mut((0, 0), (n, n)).copy_from(&DMatrix::identity(n, n));
            t.view_mut((n, 0), (mu, n)).copy_from(&k);
            t[(d - 1, n)] = 1.0;
            t
        } else {
            DMatrix::identity(d, d)
        };

        let acl = &a + &b * &k;
        let max_label = problem.constraint.max_label();

        let mut steps: Vec<StepCond> = Vec::new();
        if variant.is_one_step() {
            let (t_c, t_o) = if aug {
                let mut tc = DMatrix::zeros(d, d);
                tc.view_mut((0, 0), (n, n)).copy_from(&acl);
                tc.view_mut((n, 0), (mu, n)).copy_from(&k);
                tc[(d - 1, d - 1)] = 1.0;
                let mut to = DMatrix::zeros(d, d);
                to.view_mut((0, 0), (n, n)).copy_from(&a);
                to.view_mut((0, n), (n, mu)).copy_from(&b);
                to.view_mut((n, n), (mu, mu)).copy_from(&DMatrix::identity(mu, mu));
                to[(d - 1, d - 1)] = 1.0;
                (tc, to)
            } else {
                (hom(&acl), hom(&a))
            };
            let mut seen = BTreeSet::new();
            for (v, l, vp) in graph.edges() {
                let name = format!("step/{}-{l}-{}", names[v], names[vp]);
                match variant {
                    GbfVariant::OneGbf => steps.push(StepCond {
                        name,
                        map: t_c.clone(),
                        tgt: vp,
                        rhs_eps: l as f64,
                        kind: CondKind::Imp { ant: v, ant_eps: 0.0 },
                        m: 0,
                    }),
                    GbfVariant::OneDGbf => steps.push(StepCond {
                        name,
                        map: t_c.clone(),
                        tgt: vp,
                        rhs_eps: l as f64,
                        kind: CondKind::Dec { base: v },
                        m: 0,
                    }),
                    _ => unreachable!(),
                }
                match variant {
                    GbfVariant::OneGbf => {
                        for m in 1..=l {
                            let bname = format!("between/{}/m{m}", names[vp]);
                            if seen.insert(bname.clone()) {
                                steps.push(StepCond {
                                    name: bname,
                                    map: t_o.clone(),
                                    tgt: vp,
                                    rhs_eps: (m - 1) as f64,
                                    kind: CondKind::Imp { ant: vp, ant_eps: m as f64 },
                                    m: 0,
                                });
                            }
                        }
                    }
                    GbfVariant::OneDGbf => {
                        if l >= 1 {
                            let bname = format!("between/{}", names[vp]);
                            if seen.insert(bname.clone()) {
                                steps.push(StepCond {
                                    name: bname,
                                    map: t_o.clone(),
                                    tgt: vp,
                                    rhs_eps: -1.0,
                                    kind: CondKind::Dec { base: vp },
                                    m: 0,
                                });
                            }
                        }
                    }
                    _ => unreachable!(),
                }
            }
        } else {
            // Composed maps for one transmission followed by m losses.
            let mut maps: Vec<DMatrix<f64>> = Vec::with_capacity(max_label as usize + 1);
            let mut cur = acl.clone();
            maps.push(cur.clone());
            for _ in 0..max_label {
                cur = match strategy {
                    Strategy::Zero => &a * &cur,
                    Strategy::Hold => &a * &cur + &b * &k,
                };
                maps.push(cur.clone());
            }
            for (v, l, vp) in graph.edges() {
                for m in 0..=l {
                    let name = format!("step/{}-{l}-{}/m{m}", names[v], names[vp]);
                    let kind = match variant {
                        GbfVariant::Gbf => CondKind::Imp { ant: v, ant_eps: 0.0 },
                        GbfVariant::DGbf => CondKind::Dec { base: v },
                        _ => unreachable!(),
                    };
                    steps.push(StepCond {
                        name,
                        map: hom(&maps[m as usize]),
                        tgt: vp,
                        rhs_eps: (l - m) as f64,
                        kind,
                        m,
                    });
                }
            }
        }

        Ok(LmiContext {
            variant,
            strategy,
            graph,
            names,
            n,
            mu,
            aug,
            d,
            a,
            b,
            x_forms,
            u_forms,
            xu_forms,
            x0_forms,
            t_init,
            steps,
        })
    }

    fn node_count(&self) -> usize {
        self.names.len()
    }

    fn domain_forms(&self) -> Vec<(String, DMatrix<f64>)> {
        let mut forms = self.x_forms.clone();
        forms.extend(self.u_forms.iter().cloned());
        forms
    }

    /// Feasibility problem over the certificate blocks with the
    /// antecedent multipliers held fixed.
    fn p_problem(&self, sched: &Schedule, gamma: &GammaAssign, opts: &POpts) -> (ConicProblem, PVars) {
        let mut cp = ConicProblem::new();
        let d = self.d;
        let a_dim = self.t_init.ncols();
        let eta = sched.strict_margin;
        let eta_u = sched.unsafe_margin;
        let eps_lo = sched.eps_min(self.variant.is_decrease());

        let p: Vec<MatId> =
            self.names.iter().map(|nm| cp.sym(&format!("P/{nm}"), d)).collect();
        let mut aux: Vec<(String, ScalarId)> = Vec::new();
        let eps: Vec<ScalarId> = self
            .names
            .iter()
            .map(|nm| {
                let id = cp.scalar_with_bounds(&format!("eps/{nm}"), Some(eps_lo), Some(EPS_HI));
                aux.push((format!("eps/{nm}"), id));
                id
            })
            .collect();
        let slack = if opts.slack {
            Some(cp.scalar_with_bounds("t", Some(SLACK_LO), opts.slack_cap))
        } else {
            None
        };
        let mut mult: Vec<(String, ScalarId)> = Vec::new();

        let add_cond = |cp: &mut ConicProblem,
                        mult: &mut Vec<(String, ScalarId)>,
                            name: String,
                            dim: usize,
                            mut terms: Vec<MatTerm>,
                            forms: &[(String, DMatrix<f64>)]| {
            for (label, form) in forms {
                let id =
                    cp.scalar_with_bounds(&format!("{name}/{label}"), Some(0.0), Some(MULT_BOUND));
                mult.push((format!("{name}/{label}"), id));
                terms.push(MatTerm::Scaled { var: id, coef: -form });
            }
            if let Some(t) = slack {
                terms.push(MatTerm::Scaled { var: t, coef: DMatrix::identity(dim, dim) });
            }
            cp.psd(&name, dim, terms);
        };

        let domain = self.domain_forms();
        let mut unsafe_forms = self.xu_forms.clone();
        unsafe_forms.extend(domain.iter().cloned());

        for (v, nm) in self.names.iter().enumerate() {
            add_cond(
                &mut cp,
                &mut mult,
                format!("init/{nm}"),
                a_dim,
                vec![
                    MatTerm::Conj { var: p[v], left: self.t_init.clone(), scale: -1.0 },
                    MatTerm::Const(-eta * e_hom(a_dim)),
                ],
                &self.x0_forms,
            );
            add_cond(
                &mut cp,
                &mut mult,
                format!("unsafe/{nm}"),
                d,
                vec![
                    MatTerm::Conj { var: p[v], left: DMatrix::identity(d, d), scale: 1.0 },
                    MatTerm::Const(-eta_u * e_hom(d)),
                ],
                &unsafe_forms,
            );
        }

        for cond in &self.steps {
            let mut terms = vec![MatTerm::Conj {
                var: p[cond.tgt],
                left: cond.map.clone(),
                scale: -1.0,
            }];
            let mut eps_coef = -cond.rhs_eps;
            match &cond.kind {
                CondKind::Imp { ant, ant_eps } => {
                    let g = gamma.value(&cond.name);
                    if g != 0.0 {
                        terms.push(MatTerm::Conj {
                            var: p[*ant],
                            left: DMatrix::identity(d, d),
                            scale: g,
                        });
                        eps_coef += g * ant_eps;
                    }
                }
                CondKind::Dec { base } => {
                    terms.push(MatTerm::Conj {
                        var: p[*base],
                        left: DMatrix::identity(d, d),
                        scale: 1.0,
                    });
                }
            }
            if eps_coef != 0.0 {
                terms.push(MatTerm::Scaled { var: eps[cond.tgt], coef: eps_coef * e_hom(d) });
            }
            add_cond(&mut cp, &mut mult, cond.name.clone(), d, terms, &domain);
        }

        for (v, nm) in self.names.iter().enumerate() {
            let rho = sched.p_bound;
            cp.psd(
                &format!("pbound_hi/{nm}"),
                d,
                vec![
                    MatTerm::Const(rho * DMatrix::identity(d, d)),
                    MatTerm::Conj { var: p[v], left: DMatrix::identity(d, d), scale: -1.0 },
                ],
            );
            cp.psd(
                &format!("pbound_lo/{nm}"),
                d,
                vec![
                    MatTerm::Const(rho * DMatrix::identity(d, d)),
                    MatTerm::Conj { var: p[v], left: DMatrix::identity(d, d), scale: 1.0 },
                ],
            );
            if let Some(floor) = opts.p1_floor {
                let mut top = DMatrix::zeros(d, self.n);
                top.view_mut((0, 0), (self.n, self.n))
                    .copy_from(&DMatrix::identity(self.n, self.n));
                cp.psd(
                    &format!("p1floor/{nm}"),
                    self.n,
                    vec![
                        MatTerm::Conj { var: p[v], left: top, scale: 1.0 },
                        MatTerm::Const(-floor * DMatrix::identity(self.n, self.n)),
                    ],
                );
            }
            if let Some(caps) = &opts.ceiling {
                // Cap the block from above so this barrier never
                // exceeds the reference one, which nests the zero
                // sublevel sets.
                cp.psd(
                    &format!("ceiling/{nm}"),
                    d,
                    vec![
                        MatTerm::Const(caps[v].clone()),
                        MatTerm::Conj { var: p[v], left: DMatrix::identity(d, d), scale: -1.0 },
                    ],
                );
            }
        }

        match opts.polish {
            Some(sign) => {
                let mut obj = Vec::new();
                for (v, nm) in self.names.iter().enumerate() {
                    let tau = cp.scalar(&format!("tau/{nm}"));
                    let mut eq = ScalarEq {
                        scalar_terms: vec![(tau, -1.0)],
                        entry_terms: Vec::new(),
                        rhs: 0.0,
                    };
                    for i in 0..d {
                        eq.entry_terms.push((p[v], i, i, 1.0));
                    }
                    cp.eq(eq);
                    obj.push((tau, sign));
                }
                cp.minimize(obj);
            }
            None => {
                if let Some(t) = slack {
                    cp.minimize(vec![(t, 1.0)]);
                }
            }
        }

        (cp, PVars { p, eps, slack, mult })
    }

    /// Initial/unsafe/bound conditions only. Infeasibility here is
    /// independent of the antecedent multipliers, so it transfers to
    /// the full problem of any variant.
    fn core_problem(&self, sched: &Schedule) -> ConicProblem {
        let mut cp = ConicProblem::new();
        let d = self.d;
        let a_dim = self.t_init.ncols();
        let eta = sched.strict_margin;
        let eta_u = sched.unsafe_margin;
        let domain = self.domain_forms();
        let mut unsafe_forms = self.xu_forms.clone();
        unsafe_forms.extend(domain.iter().cloned());
        for nm in &self.names {
            let pv = cp.sym(&format!("P/{nm}"), d);
            let mut terms = vec![
                MatTerm::Conj { var: pv, left: self.t_init.clone(), scale: -1.0 },
                MatTerm::Const(-eta * e_hom(a_dim)),
            ];
            for (label, form) in &self.x0_forms {
                let id = cp
                    .scalar_with_bounds(&format!("init/{nm}/{label}"), Some(0.0), Some(MULT_BOUND));
                terms.push(MatTerm::Scaled { var: id, coef: -form });
            }
            cp.psd(&format!("init/{nm}"), a_dim, terms);
            let mut terms = vec![
                MatTerm::Conj { var: pv, left: DMatrix::identity(d, d), scale: 1.0 },
                MatTerm::Const(-eta_u * e_hom(d)),
            ];
            for (label, form) in &unsafe_forms {
                let id = cp.scalar_with_bounds(
                    &format!("unsafe/{nm}/{label}"),
                    Some(0.0),
                    Some(MULT_BOUND),
                );
                terms.push(MatTerm::Scaled { var: id, coef: -form });
            }
            cp.psd(&format!("unsafe/{nm}"), d, terms);
            cp.psd(
                &format!("pbound_hi/{nm}"),
                d,
                vec![
                    MatTerm::Const(sched.p_bound * DMatrix::identity(d, d)),
                    MatTerm::Conj { var: pv, left: DMatrix::identity(d, d), scale: -1.0 },
                ],
            );
            cp.psd(
                &format!("pbound_lo/{nm}"),
                d,
                vec![
                    MatTerm::Const(sched.p_bound * DMatrix::identity(d, d)),
                    MatTerm::Conj { var: pv, left: DMatrix::identity(d, d), scale: 1.0 },
                ],
            );
        }
        cp
    }

    /// Multiplier block with the certificate held fixed: antecedent
    /// multipliers and set multipliers are re-solved jointly.
    fn gamma_problem(
        &self,
        sched: &Schedule,
        p_hat: &[DMatrix<f64>],
        eps_hat: &[f64],
    ) -> (ConicProblem, GVars) {
        let mut cp = ConicProblem::new();
        let d = self.d;
        let a_dim = self.t_init.ncols();
        let eta = sched.strict_margin;
        let eta_u = sched.unsafe_margin;
        let slack = cp.scalar_with_bounds("t", Some(SLACK_LO), None);
        let mut gammas: Vec<(String, ScalarId)> = Vec::new();

        let domain = self.domain_forms();
        let mut unsafe_forms = self.xu_forms.clone();
        unsafe_forms.extend(domain.iter().cloned());

        let add_cond = |cp: &mut ConicProblem,
                        name: String,
                            dim: usize,
                            mut terms: Vec<MatTerm>,
                            forms: &[(String, DMatrix<f64>)]| {
            for (label, form) in forms {
                let id =
                    cp.scalar_with_bounds(&format!("{name}/{label}"), Some(0.0), Some(MULT_BOUND));
                terms.push(MatTerm::Scaled { var: id, coef: -form });
            }
            terms.push(MatTerm::Scaled { var: slack, coef: DMatrix::identity(dim, dim) });
            cp.psd(&name, dim, terms);
        };

        for (v, nm) in self.names.iter().enumerate() {
            add_cond(
                &mut cp,
                format!("init/{nm}"),
                a_dim,
                vec![MatTerm::Const(
                    -self.t_init.transpose() * &p_hat[v] * &self.t_init - eta * e_hom(a_dim),
                )],
                &self.x0_forms,
            );
            add_cond(
                &mut cp,
                format!("unsafe/{nm}"),
                d,
                vec![MatTerm::Const(&p_hat[v] - eta_u * e_hom(d))],
                &unsafe_forms,
            );
        }
        for cond in &self.steps {
            let base = -cond.map.transpose() * &p_hat[cond.tgt] * &cond.map
                - cond.rhs_eps * eps_hat[cond.tgt] * e_hom(d);
            let mut terms = vec![MatTerm::Const(base)];
            match &cond.kind {
                CondKind::Imp { ant, ant_eps } => {
                    let g = cp.scalar_with_bounds(
                        &format!("{}/g", cond.name),
                        Some(0.0),
                        Some(MULT_BOUND),
                    );
                    gammas.push((cond.name.clone(), g));
                    terms.push(MatTerm::Scaled {
                        var: g,
                        coef: &p_hat[*ant] + ant_eps * eps_hat[cond.tgt] * e_hom(d),
                    });
                }
                CondKind::Dec { base: b } => {
                    terms.push(MatTerm::Const(p_hat[*b].clone()));
                }
            }
            add_cond(&mut cp, cond.name.clone(), d, terms, &domain);
        }
        cp.minimize(vec![(slack, 1.0)]);
        (cp, GVars { gammas, slack })
    }

    /// Controller block for synthesis: the certificate is fixed and
    /// the step conditions become linear in the gain through a Schur
    /// complement on the quadratic part of each target block.
    fn k_problem(
        &self,
        sched: &Schedule,
        p_hat: &[DMatrix<f64>],
        gamma: &GammaAssign,
    ) -> Result<(ConicProblem, KVars), Error> {
        assert_eq!(self.variant, GbfVariant::Gbf);
        assert_eq!(self.strategy, Strategy::Zero);
        let n = self.n;
        let mu = self.mu;
        let d = self.d;
        let mut cp = ConicProblem::new();
        let slack = cp.scalar_with_bounds("t", Some(SLACK_LO), None);
        let mut kvar = vec![vec![ScalarId(0); n]; mu];
        for r in 0..mu {
            for c in 0..n {
                kvar[r][c] =
                    cp.scalar_with_bounds(&format!("k/{r}{c}"), Some(-K_BOUND), Some(K_BOUND));
            }
        }
        // The decrease offsets enter linearly; letting them move gives
        // the controller step extra slack to trade away.
        let mut aux: Vec<(String, ScalarId)> = Vec::new();
        let eps_lo = sched.eps_min(self.variant.is_decrease());
        let eps: Vec<ScalarId> = self
            .names
            .iter()
            .map(|nm| {
                let id = cp.scalar_with_bounds(&format!("eps/{nm}"), Some(eps_lo), Some(EPS_HI));
                aux.push((format!("eps/{nm}"), id));
                id
            })
            .collect();

        // Powers of A up to the largest composed step.
        let max_m = self.steps.iter().map(|s| s.m).max().unwrap_or(0) as usize;
        let mut a_pow: Vec<DMatrix<f64>> = vec![DMatrix::identity(n, n)];
        for _ in 0..=max_m {
            let next = &self.a * a_pow.last().unwrap();
            a_pow.push(next);
        }

        let domain = self.domain_forms();
        let nd = n + d;

        let embed_br = |m: &DMatrix<f64>| {
            let mut out = DMatrix::zeros(nd, nd);
            out.view_mut((n, n), (d, d)).copy_from(m);
            out
        };
        let embed_w = |w: &DMatrix<f64>| {
            let mut out = DMatrix::zeros(nd, nd);
            out.view_mut((0, n), (n, d)).copy_from(w);
            out.view_mut((n, 0), (d, n)).copy_from(&w.transpose());
            out
        };
        let mut vrow = DMatrix::zeros(1, d);
        vrow[(0, d - 1)] = 1.0;

        for cond in &self.steps {
            let m = cond.m as usize;
            let pt = &p_hat[cond.tgt];
            let p1 = pt.view((0, 0), (n, n)).into_owned();
            let p2 = pt.view((0, n), (n, d - n)).into_owned();
            let p3 = pt.view((n, n), (d - n, d - n)).into_owned();
            let p1_inv = p1.clone().try_inverse().ok_or_else(|| {
                Error::Solver(format!(
                    "quadratic block of {} is singular; cannot take the controller step",
                    self.names[cond.tgt]
                ))
            })?;

            // W(K) = [A^{m+1} + A^m B K, 0] as an n x d block.
            let mut w0 = DMatrix::zeros(n, d);
            w0.view_mut((0, 0), (n, n)).copy_from(&a_pow[m + 1]);
            let amb = &a_pow[m] * &self.b;

            let sym_br = |w: &DMatrix<f64>| {
                // -(Wᵀ p2 V + Vᵀ p2ᵀ W) contribution to the lower block.
                let cross = w.transpose() * &p2 * &vrow;
                embed_br(&(-(&cross + cross.transpose())))
            };

            let mut cmat = DMatrix::zeros(nd, nd);
            cmat.view_mut((0, 0), (n, n)).copy_from(&p1_inv);
            cmat += embed_w(&w0);
            cmat += sym_br(&w0);
            cmat += embed_br(&(-(vrow.transpose() * &p3 * &vrow)));
            let mut terms = vec![MatTerm::Const(cmat)];
            if cond.rhs_eps != 0.0 {
                terms.push(MatTerm::Scaled {
                    var: eps[cond.tgt],
                    coef: embed_br(&(-cond.rhs_eps * e_hom(d))),
                });
            }

            for r in 0..mu {
                for c in 0..n {
                    let mut dw = DMatrix::zeros(n, d);
                    for i in 0..n {
                        dw[(i, c)] = amb[(i, r)];
                    }
                    let coef = embed_w(&dw) + sym_br(&dw);
                    terms.push(MatTerm::Scaled { var: kvar[r][c], coef });
                }
            }

            match &cond.kind {
                CondKind::Imp { ant, ant_eps } => {
                    // The antecedent multiplier stays at its value from
                    // the certificate step. Freeing it here would let
                    // multiplier growth absorb the slack and decouple
                    // the gain from the objective.
                    debug_assert_eq!(*ant_eps, 0.0);
                    let g = gamma.value(&cond.name);
                    if g != 0.0 {
                        terms.push(MatTerm::Const(embed_br(&(g * &p_hat[*ant]))));
                    }
                }
                CondKind::Dec { base } => {
                    terms.push(MatTerm::Const(embed_br(&p_hat[*base])));
                }
            }
            for (label, form) in &domain {
                let id = cp.scalar_with_bounds(
                    &format!("{}/{label}", cond.name),
                    Some(0.0),
                    Some(MULT_BOUND),
                );
                aux.push((format!("{}/{label}", cond.name), id));
                terms.push(MatTerm::Scaled { var: id, coef: embed_br(&(-form)) });
            }
            terms.push(MatTerm::Scaled {
                var: slack,
                coef: embed_br(&DMatrix::identity(d, d)),
            });
            cp.psd(&cond.name, nd, terms);
        }
        cp.minimize(vec![(slack, 1.0)]);
        Ok((cp, KVars { k: kvar, slack, aux }))
    }

    /// Re-assembles every condition numerically from certificate
    /// values and reports the smallest eigenvalue of each.
    fn residuals(
        &self,
        sched: &Schedule,
        p: &[DMatrix<f64>],
        eps: &[f64],
        mults: &BTreeMap<String, f64>,
    ) -> (f64, BTreeMap<String, f64>) {
        let d = self.d;
        let a_dim = self.t_init.ncols();
        let eta = sched.strict_margin;
        let eta_u = sched.unsafe_margin;
        let get = |key: String| mults.get(&key).copied().unwrap_or(0.0);
        let mut out = BTreeMap::new();

        let domain = self.domain_forms();
        let mut unsafe_forms = self.xu_forms.clone();
        unsafe_forms.extend(domain.iter().cloned());

        for (v, nm) in self.names.iter().enumerate() {
            let mut m = -self.t_init.transpose() * &p[v] * &self.t_init - eta * e_hom(a_dim);
            for (label, form) in &self.x0_forms {
                m -= get(format!("init/{nm}/{label}")) * form;
            }
            out.insert(format!("init/{nm}"), min_eig(&m));

            let mut m = p[v].clone() - eta_u * e_hom(d);
            for (label, form) in &unsafe_forms {
                m -= get(format!("unsafe/{nm}/{label}")) * form;
            }
            out.insert(format!("unsafe/{nm}"), min_eig(&m));

            let hi = sched.p_bound * DMatrix::identity(d, d) - &p[v];
            let lo = sched.p_bound * DMatrix::identity(d, d) + &p[v];
            out.insert(format!("pbound_hi/{nm}"), min_eig(&hi));
            out.insert(format!("pbound_lo/{nm}"), min_eig(&lo));
        }
        for cond in &self.steps {
            let mut m = -cond.map.transpose() * &p[cond.tgt] * &cond.map
                - cond.rhs_eps * eps[cond.tgt] * e_hom(d);
            match &cond.kind {
                CondKind::Imp { ant, ant_eps } => {
                    let g = get(format!("{}/g", cond.name));
                    m += g * (&p[*ant] + *ant_eps * eps[cond.tgt] * e_hom(d));
                }
                CondKind::Dec { base } => m += &p[*base],
            }
            for (label, form) in &domain {
                m -= get(format!("{}/{label}", cond.name)) * form;
            }
            out.insert(cond.name.clone(), min_eig(&m));
        }
        let min = out.values().cloned().fold(f64::INFINITY, f64::min);
        (min, out)
    }

    /// Extracts candidate certificate values from a solve.
    fn candidate(
        &self,
        out: &SolveOutcome,
        vars: &PVars,
        gamma: &GammaAssign,
    ) -> (Vec<DMatrix<f64>>, Vec<f64>, BTreeMap<String, f64>) {
        let p: Vec<DMatrix<f64>> = vars.p.iter().map(|id| out.mat(*id).clone()).collect();
        let eps: Vec<f64> = vars.eps.iter().map(|id| out.scalar(*id).max(0.0)).collect();
        let mut mults = BTreeMap::new();
        for (name, id) in &vars.mult {
            mults.insert(name.clone(), out.scalar(*id).max(0.0));
        }
        for cond in &self.steps {
            if matches!(cond.kind, CondKind::Imp { .. }) {
                mults.insert(format!("{}/g", cond.name), gamma.value(&cond.name));
            }
        }
        (p, eps, mults)
    }

    fn make_cert(
        &self,
        p: Vec<DMatrix<f64>>,
        eps: Vec<f64>,
        mults: BTreeMap<String, f64>,
        residuals: BTreeMap<String, f64>,
    ) -> QuadCert {
        let mut cert = QuadCert::from_blocks(
            self.variant,
            self.strategy,
            self.graph.to_json(),
            self.n,
            if self.aug { self.mu } else { 0 },
            &self.names,
            &p,
            &eps,
        );
        cert.multipliers = mults;
        cert.residuals = residuals;
        cert
    }

    /// Residual re-check plus sampling validation; only both passing
    /// yields a certificate.
    fn try_certify(
        &self,
        problem: &Problem,
        sched: &Schedule,
        out: &SolveOutcome,
        vars: &PVars,
        gamma: &GammaAssign,
    ) -> Option<(Cert, f64)> {
        if out.status == SolveStatus::Infeasible || out.mats.is_empty() {
            return None;
        }
        let (p, eps, mults) = self.candidate(out, vars, gamma);
        let (min_res, residuals) = self.residuals(sched, &p, &eps, &mults);
        if !min_res.is_finite() || min_res < -sched.feas_tol {
            return None;
        }
        let cert = Cert::Quad(self.make_cert(p, eps, mults, residuals));
        match validate::quick_check(problem, &cert, sched.verify_samples, sched.sample_tol, sched.seed)
        {
            Ok(true) => Some((cert, min_res)),
            _ => None,
        }
    }
}

struct POpts {
    slack: bool,
    slack_cap: Option<f64>,
    p1_floor: Option<f64>,
    /// Objective weight on the trace of the blocks: positive drives the
    /// traces down, which grows the zero-sublevel sets.
    polish: Option<f64>,
    /// Per-node upper bounds on the blocks in the semidefinite order.
    ceiling: Option<Vec<DMatrix<f64>>>,
}

impl POpts {
    fn slack_min() -> POpts {
        POpts { slack: true, slack_cap: None, p1_floor: None, polish: None, ceiling: None }
    }

    fn feasibility() -> POpts {
        POpts { slack: false, slack_cap: None, p1_floor: None, polish: None, ceiling: None }
    }

    fn capped(mut self, ceiling: Option<&[DMatrix<f64>]>) -> POpts {
        self.ceiling = ceiling.map(|c| c.to_vec());
        self
    }
}

struct PVars {
    p: Vec<MatId>,
    eps: Vec<ScalarId>,
    slack: Option<ScalarId>,
    mult: Vec<(String, ScalarId)>,
}

struct GVars {
    gammas: Vec<(String, ScalarId)>,
    slack: ScalarId,
}

struct KVars {
    k: Vec<Vec<ScalarId>>,
    slack: ScalarId,
    /// Remaining variables by name, for inspection in tests.
    /// Auxiliary scalars by name; read back by the encoding
    /// consistency tests.
    #[cfg_attr(not(test), allow(dead_code))]
    aux: Vec<(String, ScalarId)>,
}

fn report(
    status: CertStatus,
    cert: Option<Cert>,
    residual: f64,
    solver_status: String,
    start: Instant,
    note: Option<String>,
) -> CertReport {
    CertReport {
        status,
        cert,
        residual,
        solver_status,
        wall_ms: start.elapsed().as_millis(),
        note,
    }
}

/// Searches for a quadratic certificate of the requested variant.
pub fn verify(problem: &Problem, variant: GbfVariant, sched: &Schedule) -> Result<CertReport, Error> {
    let start = Instant::now();
    let ctx = LmiContext::build(problem, variant)?;
    if variant.is_decrease() {
        verify_decrease(&ctx, problem, sched, start, None, None)
    } else {
        verify_implication(&ctx, problem, sched, start, None, None)
    }
}

/// Like `verify`, but when a certificate exists, re-solves with the
/// slack pinned and the trace of the blocks as objective. Growing
/// pushes the zero-sublevel sets outward, shrinking pulls them in;
/// useful when two certificates are compared by their level sets.
pub fn verify_shaped(
    problem: &Problem,
    variant: GbfVariant,
    sched: &Schedule,
    grow: bool,
) -> Result<CertReport, Error> {
    let start = Instant::now();
    let ctx = LmiContext::build(problem, variant)?;
    let polish = Some(if grow { 1.0 } else { -1.0 });
    if variant.is_decrease() {
        verify_decrease(&ctx, problem, sched, start, polish, None)
    } else {
        verify_implication(&ctx, problem, sched, start, polish, None)
    }
}

/// Searches for a certificate of `variant` whose zero-sublevel sets
/// contain those of `inner` at every node: each block is capped by the
/// inner one in the semidefinite order, so `inner`'s barrier dominates
/// pointwise. The blocks are then grown as far as the conditions
/// allow.
pub fn verify_enclosing(
    problem: &Problem,
    variant: GbfVariant,
    sched: &Schedule,
    inner: &Cert,
) -> Result<CertReport, Error> {
    let start = Instant::now();
    let ctx = LmiContext::build(problem, variant)?;
    let quad = match inner {
        Cert::Quad(q) => q,
        Cert::Poly(_) => {
            return Err(Error::CertMismatch(
                "enclosing search needs a quadratic reference certificate".into(),
            ))
        }
    };
    if quad.graph.constraint != problem.constraint {
        return Err(Error::CertMismatch(
            "reference certificate was built for a different constraint".into(),
        ));
    }
    let mut caps = Vec::with_capacity(ctx.names.len());
    for nm in &ctx.names {
        let rows = quad.p.get(nm).ok_or_else(|| Error::UnknownNode(nm.clone()))?;
        if rows.len() != ctx.d {
            return Err(Error::CertMismatch(format!(
                "reference block for {nm} is {}x{}, expected {}x{}",
                rows.len(),
                rows.first().map_or(0, Vec::len),
                ctx.d,
                ctx.d
            )));
        }
        caps.push(DMatrix::from_fn(ctx.d, ctx.d, |i, j| rows[i][j]));
    }
    // When the reference satisfies decrease conditions, the capped
    // system is feasible at the reference blocks with a unit
    // antecedent multiplier, so the sweep grid is aligned to hit
    // gamma = 1 exactly.
    let mut sched = sched.clone();
    sched.gamma_grid_points =
        (sched.gamma_log2_max - sched.gamma_log2_min).round().max(1.0) as usize + 1;
    if variant.is_decrease() {
        verify_decrease(&ctx, problem, &sched, start, Some(1.0), Some(&caps))
    } else {
        verify_implication(&ctx, problem, &sched, start, Some(1.0), Some(&caps))
    }
}

fn polish_pass(
    ctx: &LmiContext,
    problem: &Problem,
    sched: &Schedule,
    gamma: &GammaAssign,
    slack_at_cert: f64,
    polish: f64,
    ceiling: Option<&[DMatrix<f64>]>,
) -> Option<(Cert, f64, String)> {
    let opts = POpts {
        slack: true,
        slack_cap: Some(slack_at_cert.max(0.0) + sched.slack_tol),
        p1_floor: None,
        polish: Some(polish),
        ceiling: ceiling.map(|c| c.to_vec()),
    };
    let (cp, vars) = ctx.p_problem(sched, gamma, &opts);
    let out = cp.solve(sched.feas_tol).ok()?;
    let (cert, res) = ctx.try_certify(problem, sched, &out, &vars, gamma)?;
    Some((cert, res, out.solver_status))
}

fn verify_decrease(
    ctx: &LmiContext,
    problem: &Problem,
    sched: &Schedule,
    start: Instant,
    polish: Option<f64>,
    ceiling: Option<&[DMatrix<f64>]>,
) -> Result<CertReport, Error> {
    let gamma = GammaAssign::Zero;
    let (cp, vars) = ctx.p_problem(sched, &gamma, &POpts::slack_min().capped(ceiling));
    let out = cp.solve(sched.feas_tol)?;
    if let Some((cert, res)) = ctx.try_certify(problem, sched, &out, &vars, &gamma) {
        let slack = vars.slack.map(|t| out.scalar(t)).unwrap_or(0.0);
        if let Some(sign) = polish {
            if let Some((cert2, res2, status2)) =
                polish_pass(ctx, problem, sched, &gamma, slack, sign, ceiling)
            {
                return Ok(report(CertStatus::Certified, Some(cert2), res2, status2, start, None));
            }
        }
        return Ok(report(CertStatus::Certified, Some(cert), res, out.solver_status, start, None));
    }
    let (cp2, _) = ctx.p_problem(sched, &gamma, &POpts::feasibility().capped(ceiling));
    let out2 = cp2.solve(sched.feas_tol)?;
    match out2.status {
        SolveStatus::Infeasible => Ok(report(
            CertStatus::Infeasible,
            None,
            out.psd_residual,
            out2.solver_status,
            start,
            Some("solver certified primal infeasibility of the condition system".into()),
        )),
        _ => Ok(report(
            CertStatus::Unknown,
            None,
            out.psd_residual,
            out2.solver_status,
            start,
            out.worst_constraint.clone().map(|w| format!("worst condition: {w}")),
        )),
    }
}

fn verify_implication(
    ctx: &LmiContext,
    problem: &Problem,
    sched: &Schedule,
    start: Instant,
    polish: Option<f64>,
    ceiling: Option<&[DMatrix<f64>]>,
) -> Result<CertReport, Error> {
    // The initial/unsafe conditions do not involve the antecedent
    // multipliers; their infeasibility settles the question outright.
    let core = ctx.core_problem(sched);
    let core_out = core.solve(sched.feas_tol)?;
    if core_out.status == SolveStatus::Infeasible {
        return Ok(report(
            CertStatus::Infeasible,
            None,
            f64::NAN,
            core_out.solver_status,
            start,
            Some("initial and unsafe set conditions are jointly infeasible".into()),
        ));
    }

    let grid = sched.gamma_grid();
    let solves: Vec<(f64, Result<(SolveOutcome, PVars), Error>)> = grid
        .par_iter()
        .map(|&g| {
            let gamma = GammaAssign::Shared(g);
            let (cp, vars) = ctx.p_problem(sched, &gamma, &POpts::slack_min().capped(ceiling));
            (g, cp.solve(sched.feas_tol).map(|out| (out, vars)))
        })
        .collect();

    let mut best: Option<(f64, SolveOutcome, PVars)> = None;
    for (g, solved) in solves {
        let (out, vars) = solved?;
        let gamma = GammaAssign::Shared(g);
        if let Some((cert, res)) = ctx.try_certify(problem, sched, &out, &vars, &gamma) {
            let slack = vars.slack.map(|t| out.scalar(t)).unwrap_or(0.0);
            if let Some(sign) = polish {
                if let Some((cert2, res2, status2)) =
                    polish_pass(ctx, problem, sched, &gamma, slack, sign, ceiling)
                {
                    return Ok(report(
                        CertStatus::Certified,
                        Some(cert2),
                        res2,
                        status2,
                        start,
                        None,
                    ));
                }
            }
            return Ok(report(
                CertStatus::Certified,
                Some(cert),
                res,
                out.solver_status,
                start,
                None,
            ));
        }
        if out.status != SolveStatus::Infeasible {
            let this_obj = out.objective;
            let better = match &best {
                Some((obj, _, _)) => this_obj < *obj,
                None => true,
            };
            if better {
                best = Some((this_obj, out, vars));
            }
        }
    }

    // Coordinate alternation from the best sweep point.
    let Some((mut t_prev, best_out, best_vars)) = best else {
        return Ok(report(
            CertStatus::Unknown,
            None,
            f64::NAN,
            "no usable sweep point".into(),
            start,
            Some("every sweep subproblem failed".into()),
        ));
    };
    let mut p_hat: Vec<DMatrix<f64>> =
        best_vars.p.iter().map(|id| best_out.mat(*id).clone()).collect();
    let mut eps_hat: Vec<f64> =
        best_vars.eps.iter().map(|id| best_out.scalar(*id).max(0.0)).collect();
    let mut stagnant = 0u32;
    for _ in 0..sched.alternation_rounds {
        let (gp, gvars) = ctx.gamma_problem(sched, &p_hat, &eps_hat);
        let gout = gp.solve(sched.feas_tol)?;
        if gout.status == SolveStatus::Infeasible {
            break;
        }
        let mut assign = BTreeMap::new();
        for (name, id) in &gvars.gammas {
            assign.insert(name.clone(), gout.scalar(*id).max(0.0));
        }
        let _ = gvars.slack;
        let gamma = GammaAssign::PerCond(assign);
        let (pp, pvars) = ctx.p_problem(sched, &gamma, &POpts::slack_min().capped(ceiling));
        let pout = pp.solve(sched.feas_tol)?;
        if let Some((cert, res)) = ctx.try_certify(problem, sched, &pout, &pvars, &gamma) {
            let slack = pvars.slack.map(|t| pout.scalar(t)).unwrap_or(0.0);
            if let Some(sign) = polish {
                if let Some((cert2, res2, status2)) =
                    polish_pass(ctx, problem, sched, &gamma, slack, sign, ceiling)
                {
                    return Ok(report(
                        CertStatus::Certified,
                        Some(cert2),
                        res2,
                        status2,
                        start,
                        None,
                    ));
                }
            }
            return Ok(report(
                CertStatus::Certified,
                Some(cert),
                res,
                pout.solver_status,
                start,
                None,
            ));
        }
        if pout.status == SolveStatus::Infeasible {
            break;
        }
        let t_new = pout.objective;
        if t_new > t_prev - 1e-12 {
            stagnant += 1;
            if stagnant >= 2 {
                break;
            }
        } else {
            stagnant = 0;
        }
        p_hat = pvars.p.iter().map(|id| pout.mat(*id).clone()).collect();
        eps_hat = pvars.eps.iter().map(|id| pout.scalar(*id).max(0.0)).collect();
        t_prev = t_new;
    }
    Ok(report(
        CertStatus::Unknown,
        None,
        f64::NAN,
        "alternation budget exhausted".into(),
        start,
        Some(format!("best remaining slack {t_prev:.3e}")),
    ))
}

/// Re-runs the eigenvalue check of a stored quadratic certificate
/// against the problem it claims to certify.
pub fn check_quad_cert(
    problem: &Problem,
    cert: &QuadCert,
    sched: &Schedule,
) -> Result<(f64, BTreeMap<String, f64>), Error> {
    let ctx = LmiContext::build(problem, cert.variant)?;
    if ctx.graph.to_json().edges != cert.graph.edges {
        return Err(Error::CertMismatch(
            "certificate graph does not match the problem constraint".into(),
        ));
    }
    let mut p = Vec::with_capacity(ctx.node_count());
    let mut eps = Vec::with_capacity(ctx.node_count());
    for nm in &ctx.names {
        p.push(cert.p_matrix(nm)?);
        eps.push(cert.eps_of(nm)?);
    }
    Ok(ctx.residuals(sched, &p, &eps, &cert.multipliers))
}

/// Alternates certificate and controller solves for the recursive
/// implication variant under the zero strategy. Returns the final gain
/// together with the verification report for it; a gain that certifies
/// as given is returned unchanged.
pub fn synthesize(
    problem: &Problem,
    sched: &Schedule,
    k_init: Option<DMatrix<f64>>,
) -> Result<(DMatrix<f64>, CertReport), Error> {
    let start = Instant::now();
    if problem.strategy != Strategy::Zero {
        return Err(Error::Other(
            "controller synthesis is implemented for the zero strategy".into(),
        ));
    }
    let (a, b) = match &problem.model {
        SystemModel::Linear(sys) => (sys.a.clone(), sys.b.clone()),
        SystemModel::Poly(_) => {
            return Err(Error::Other("controller synthesis needs linear dynamics".into()))
        }
    };
    let n = a.nrows();
    let mu = b.ncols();
    let k0 = match k_init {
        Some(k) => k,
        None => match &problem.law {
            Some(ControlLaw::Linear(c)) => c.k.clone(),
            Some(ControlLaw::Poly(_)) => {
                return Err(Error::Other("controller synthesis needs a linear initial gain".into()))
            }
            None => return Err(Error::ControllerMissing),
        },
    };
    if k0.nrows() != mu || k0.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "initial gain is {}x{}, system needs {}x{}",
            k0.nrows(),
            k0.ncols(),
            mu,
            n
        )));
    }

    let mut k_cur = k0;
    for _ in 0..sched.synth_rounds {
        let prob_k = problem_with_gain(problem, &k_cur)?;
        let ctx = LmiContext::build_with(
            &prob_k,
            GbfVariant::Gbf,
            a.clone(),
            b.clone(),
            k_cur.clone(),
        )?;
        let floored =
            POpts {
                slack: true,
                slack_cap: None,
                p1_floor: Some(sched.p1_floor),
                polish: None,
                ceiling: None,
            };

        // Certificate step: full sweep each round, since the useful
        // multiplier range moves along with the gain.
        let mut best: Option<(f64, SolveOutcome, PVars, GammaAssign)> = None;
        let gammas: Vec<GammaAssign> =
            sched.gamma_grid().into_iter().map(GammaAssign::Shared).collect();
        let solved: Vec<(GammaAssign, Result<(SolveOutcome, PVars), Error>)> = gammas
            .into_par_iter()
            .map(|gamma| {
                let (cp, vars) = ctx.p_problem(sched, &gamma, &floored);
                (gamma, cp.solve(sched.feas_tol).map(|o| (o, vars)))
            })
            .collect();
        for (gamma, res) in solved {
            let (out, vars) = res?;
            if let Some((cert, resid)) = ctx.try_certify(&prob_k, sched, &out, &vars, &gamma) {
                let rep = report(
                    CertStatus::Certified,
                    Some(cert),
                    resid,
                    out.solver_status,
                    start,
                    None,
                );
                return Ok((k_cur, rep));
            }
            if out.status != SolveStatus::Infeasible {
                let better = match &best {
                    Some((obj, ..)) => out.objective < *obj,
                    None => true,
                };
                if better {
                    best = Some((out.objective, out, vars, gamma.clone()));
                }
            }
        }
        let Some((_, out, vars, gamma)) = best else { break };
        let p_hat: Vec<DMatrix<f64>> = vars.p.iter().map(|id| out.mat(*id).clone()).collect();

        // Controller step.
        let (kp, kvars) = ctx.k_problem(sched, &p_hat, &gamma)?;
        let kout = kp.solve(sched.feas_tol)?;
        if kout.status == SolveStatus::Infeasible {
            break;
        }
        let _ = kvars.slack;
        let k_next = DMatrix::from_fn(mu, n, |r, c| kout.scalar(kvars.k[r][c]));
        if (&k_next - &k_cur).norm() < 1e-10 {
            break;
        }
        k_cur = k_next;
    }

    let prob_k = problem_with_gain(problem, &k_cur)?;
    let rep = verify(&prob_k, GbfVariant::Gbf, sched)?;
    Ok((k_cur, rep))
}

/// Problem with the controller replaced by the given gain; everything
/// else, including set validation, is rebuilt from the stored input
/// data.
pub fn problem_with_gain(problem: &Problem, k: &DMatrix<f64>) -> Result<Problem, Error> {
    let mut spec = problem.spec.clone();
    let rows: Vec<Vec<f64>> =
        (0..k.nrows()).map(|r| (0..k.ncols()).map(|c| k[(r, c)]).collect()).collect();
    spec.controller = Some(ControllerSpec::Linear { k: rows });
    Problem::from_spec(spec)
}
