//! Thin semidefinite programming layer over Clarabel.
//!
//! Problems are stated with named scalar and symmetric-matrix
//! variables, affine positive-semidefinite constraints, and linear
//! equalities. Solutions are re-checked here from the original
//! constraint data, independent of the solver's own termination
//! report, before anything is reported feasible.

use crate::error::Error;
use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus,
    SupportedConeT::{self, NonnegativeConeT, PSDTriangleConeT, ZeroConeT},
};
use nalgebra::{DMatrix, SymmetricEigen};

pub const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScalarId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MatId(pub usize);

/// One linear term of a matrix-valued affine expression.
#[derive(Clone, Debug)]
pub enum MatTerm {
    /// A constant symmetric matrix.
    Const(DMatrix<f64>),
    /// `coef` scaled by a scalar variable.
    Scaled { var: ScalarId, coef: DMatrix<f64> },
    /// `scale * leftᵀ X left` for a matrix variable X.
    Conj { var: MatId, left: DMatrix<f64>, scale: f64 },
}

#[derive(Clone, Debug)]
pub struct PsdConstraint {
    pub name: String,
    pub dim: usize,
    pub terms: Vec<MatTerm>,
}

/// Linear equality over scalar variables and individual matrix
/// entries. Entry terms address the upper triangle (`i <= j`); a
/// coefficient on an off-diagonal entry applies to the single shared
/// value X[i,j] = X[j,i].
#[derive(Clone, Debug, Default)]
pub struct ScalarEq {
    pub scalar_terms: Vec<(ScalarId, f64)>,
    pub entry_terms: Vec<(MatId, usize, usize, f64)>,
    pub rhs: f64,
}

#[derive(Clone, Debug, Default)]
pub struct ConicProblem {
    scalar_names: Vec<String>,
    scalar_lo: Vec<Option<f64>>,
    scalar_hi: Vec<Option<f64>>,
    mat_names: Vec<String>,
    mat_dims: Vec<usize>,
    psd: Vec<PsdConstraint>,
    eqs: Vec<ScalarEq>,
    objective: Vec<(ScalarId, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Feasible,
    Infeasible,
    Unknown,
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    pub scalars: Vec<f64>,
    pub mats: Vec<DMatrix<f64>>,
    pub objective: f64,
    /// Most negative eigenvalue across all PSD constraints at the
    /// returned point; nonnegative means exactly feasible.
    pub psd_residual: f64,
    pub eq_residual: f64,
    pub bound_residual: f64,
    pub solver_status: String,
    pub iterations: u32,
    /// Name of the PSD constraint attaining `psd_residual`.
    pub worst_constraint: Option<String>,
}

impl SolveOutcome {
    pub fn scalar(&self, id: ScalarId) -> f64 {
        self.scalars[id.0]
    }

    pub fn mat(&self, id: MatId) -> &DMatrix<f64> {
        &self.mats[id.0]
    }
}

impl ConicProblem {
    pub fn new() -> Self {
        ConicProblem::default()
    }

    pub fn scalar(&mut self, name: &str) -> ScalarId {
        self.scalar_with_bounds(name, None, None)
    }

    pub fn nonneg(&mut self, name: &str) -> ScalarId {
        self.scalar_with_bounds(name, Some(0.0), None)
    }

    pub fn scalar_with_bounds(&mut self, name: &str, lo: Option<f64>, hi: Option<f64>) -> ScalarId {
        self.scalar_names.push(name.to_string());
        self.scalar_lo.push(lo);
        self.scalar_hi.push(hi);
        ScalarId(self.scalar_names.len() - 1)
    }

    pub fn sym(&mut self, name: &str, dim: usize) -> MatId {
        assert!(dim >= 1, "matrix variables must be at least 1x1");
        self.mat_names.push(name.to_string());
        self.mat_dims.push(dim);
        MatId(self.mat_names.len() - 1)
    }

    /// Requires the affine sum of `terms` to be positive semidefinite.
    pub fn psd(&mut self, name: &str, dim: usize, terms: Vec<MatTerm>) {
        for t in &terms {
            match t {
                MatTerm::Const(c) => {
                    assert_eq!((c.nrows(), c.ncols()), (dim, dim), "constant term shape");
                }
                MatTerm::Scaled { coef, .. } => {
                    assert_eq!((coef.nrows(), coef.ncols()), (dim, dim), "scaled term shape");
                }
                MatTerm::Conj { var, left, .. } => {
                    assert_eq!(left.nrows(), self.mat_dims[var.0], "conjugation rows");
                    assert_eq!(left.ncols(), dim, "conjugation columns");
                }
            }
        }
        self.psd.push(PsdConstraint { name: name.to_string(), dim, terms });
    }

    pub fn eq(&mut self, eq: ScalarEq) {
        self.eqs.push(eq);
    }

    /// Sets the (linear) objective; the solver minimizes.
    pub fn minimize(&mut self, terms: Vec<(ScalarId, f64)>) {
        self.objective = terms;
    }

    pub fn num_scalars(&self) -> usize {
        self.scalar_names.len()
    }

    pub fn num_mats(&self) -> usize {
        self.mat_names.len()
    }

    fn nvars(&self) -> usize {
        self.scalar_names.len() + self.mat_dims.iter().map(|d| svec_len(*d)).sum::<usize>()
    }

    fn mat_offset(&self, id: usize) -> usize {
        self.scalar_names.len()
            + self.mat_dims[..id].iter().map(|d| svec_len(*d)).sum::<usize>()
    }

    /// Evaluates the affine matrix expression of PSD constraint `k` at
    /// a solution.
    pub fn eval_psd(&self, k: usize, scalars: &[f64], mats: &[DMatrix<f64>]) -> DMatrix<f64> {
        let c = &self.psd[k];
        let mut acc = DMatrix::zeros(c.dim, c.dim);
        for t in &c.terms {
            match t {
                MatTerm::Const(m) => acc += m,
                MatTerm::Scaled { var, coef } => acc += coef * scalars[var.0],
                MatTerm::Conj { var, left, scale } => {
                    acc += left.transpose() * &mats[var.0] * left * *scale;
                }
            }
        }
        // Guard against asymmetric drift in the terms.
        let sym = (&acc + acc.transpose()) * 0.5;
        sym
    }

    pub fn solve(&self, feas_tol: f64) -> Result<SolveOutcome, Error> {
        let nvars = self.nvars();
        let mut rows_i: Vec<usize> = Vec::new();
        let mut cols_j: Vec<usize> = Vec::new();
        let mut vals: Vec<f64> = Vec::new();
        let mut b: Vec<f64> = Vec::new();
        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
        let mut row = 0usize;

        // Equalities.
        if !self.eqs.is_empty() {
            for eq in &self.eqs {
                for (sid, c) in &eq.scalar_terms {
                    rows_i.push(row);
                    cols_j.push(sid.0);
                    vals.push(*c);
                }
                for (mid, i, j, c) in &eq.entry_terms {
                    assert!(i <= j, "entry terms address the upper triangle");
                    assert!(*j < self.mat_dims[mid.0], "entry index in range");
                    let col = self.mat_offset(mid.0) + svec_index(*i, *j);
                    let scale = if i == j { 1.0 } else { 1.0 / SQRT2 };
                    rows_i.push(row);
                    cols_j.push(col);
                    vals.push(c * scale);
                }
                b.push(eq.rhs);
                row += 1;
            }
            cones.push(ZeroConeT(self.eqs.len()));
        }

        // Scalar bounds.
        let mut bound_rows = 0usize;
        for (idx, (lo, hi)) in self.scalar_lo.iter().zip(&self.scalar_hi).enumerate() {
            if let Some(lo) = lo {
                rows_i.push(row);
                cols_j.push(idx);
                vals.push(-1.0);
                b.push(-lo);
                row += 1;
                bound_rows += 1;
            }
            if let Some(hi) = hi {
                rows_i.push(row);
                cols_j.push(idx);
                vals.push(1.0);
                b.push(*hi);
                row += 1;
                bound_rows += 1;
            }
        }
        if bound_rows > 0 {
            cones.push(NonnegativeConeT(bound_rows));
        }

        // PSD constraints: s = svec(M(x)) with M(x) = C + L(x), so the
        // slack rows read svec(C) - (-svec of each linear coefficient).
        for c in &self.psd {
            let len = svec_len(c.dim);
            let mut const_acc = DMatrix::zeros(c.dim, c.dim);
            for t in &c.terms {
                match t {
                    MatTerm::Const(m) => const_acc += m,
                    MatTerm::Scaled { var, coef } => {
                        let sv = svec(coef);
                        for (k, v) in sv.iter().enumerate() {
                            if *v != 0.0 {
                                rows_i.push(row + k);
                                cols_j.push(var.0);
                                vals.push(-v);
                            }
                        }
                    }
                    MatTerm::Conj { var, left, scale } => {
                        let d = self.mat_dims[var.0];
                        let base = self.mat_offset(var.0);
                        for q in 0..d {
                            for p in 0..=q {
                                let lp = left.row(p);
                                let lq = left.row(q);
                                // Derivative of leftᵀ X left in the
                                // svec coordinate (p, q) of X.
                                let contrib: DMatrix<f64> = if p == q {
                                    lp.transpose() * lp * *scale
                                } else {
                                    (lp.transpose() * lq + lq.transpose() * lp)
                                        * (*scale / SQRT2)
                                };
                                let sv = svec(&contrib);
                                let col = base + svec_index(p, q);
                                for (k, v) in sv.iter().enumerate() {
                                    if *v != 0.0 {
                                        rows_i.push(row + k);
                                        cols_j.push(col);
                                        vals.push(-v);
                                    }
                                }
                            }
                        }
                    }
                }
            }
            let sv = svec(&((&const_acc + const_acc.transpose()) * 0.5));
            b.extend_from_slice(sv.as_slice());
            cones.push(PSDTriangleConeT(c.dim));
            row += len;
        }

        let a = CscMatrix::new_from_triplets(row, nvars, rows_i, cols_j, vals);
        let p = CscMatrix::spalloc((nvars, nvars), 0);
        let mut q = vec![0.0; nvars];
        for (sid, c) in &self.objective {
            q[sid.0] += c;
        }

        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .build()
            .map_err(|e| Error::Solver(e.to_string()))?;
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings);
        solver.solve();

        let raw_status = solver.solution.status;
        let x = &solver.solution.x;
        let scalars: Vec<f64> = x[..self.scalar_names.len()].to_vec();
        let mut mats = Vec::with_capacity(self.mat_dims.len());
        for (id, d) in self.mat_dims.iter().enumerate() {
            let off = self.mat_offset(id);
            mats.push(unsvec(&x[off..off + svec_len(*d)], *d));
        }

        let mut outcome = SolveOutcome {
            status: SolveStatus::Unknown,
            objective: solver.solution.obj_val,
            psd_residual: 0.0,
            eq_residual: 0.0,
            bound_residual: 0.0,
            solver_status: format!("{raw_status:?}"),
            iterations: solver.solution.iterations,
            worst_constraint: None,
            scalars,
            mats,
        };

        match raw_status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => {
                self.fill_residuals(&mut outcome);
                let ok = outcome.psd_residual >= -feas_tol
                    && outcome.eq_residual <= feas_tol.max(1e-7)
                    && outcome.bound_residual <= feas_tol.max(1e-7);
                outcome.status = if ok { SolveStatus::Feasible } else { SolveStatus::Unknown };
            }
            SolverStatus::PrimalInfeasible => {
                outcome.status = SolveStatus::Infeasible;
            }
            _ => {
                self.fill_residuals(&mut outcome);
            }
        }
        Ok(outcome)
    }

    /// Independent residual check at the returned point.
    fn fill_residuals(&self, outcome: &mut SolveOutcome) {
        let mut worst = f64::INFINITY;
        let mut worst_name = None;
        for k in 0..self.psd.len() {
            let m = self.eval_psd(k, &outcome.scalars, &outcome.mats);
            let eig = SymmetricEigen::new(m);
            let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            if min < worst {
                worst = min;
                worst_name = Some(self.psd[k].name.clone());
            }
        }
        outcome.psd_residual = if worst.is_finite() { worst } else { 0.0 };
        outcome.worst_constraint = worst_name;

        let mut eq_res = 0.0f64;
        for eq in &self.eqs {
            let mut acc = -eq.rhs;
            for (sid, c) in &eq.scalar_terms {
                acc += c * outcome.scalars[sid.0];
            }
            for (mid, i, j, c) in &eq.entry_terms {
                acc += c * outcome.mats[mid.0][(*i, *j)];
            }
            eq_res = eq_res.max(acc.abs());
        }
        outcome.eq_residual = eq_res;

        let mut bound_res = 0.0f64;
        for (idx, (lo, hi)) in self.scalar_lo.iter().zip(&self.scalar_hi).enumerate() {
            if let Some(lo) = lo {
                bound_res = bound_res.max(lo - outcome.scalars[idx]);
            }
            if let Some(hi) = hi {
                bound_res = bound_res.max(outcome.scalars[idx] - hi);
            }
        }
        outcome.bound_residual = bound_res;
    }
}

pub fn svec_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Index of upper-triangle entry (i, j), i <= j, in column-major
/// scaled-vector order.
pub fn svec_index(i: usize, j: usize) -> usize {
    debug_assert!(i <= j);
    j * (j + 1) / 2 + i
}

/// Scaled upper-triangle vectorization: off-diagonal entries are
/// multiplied by sqrt(2) so that inner products of svecs equal trace
/// inner products of the matrices.
pub fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    debug_assert_eq!(d, m.ncols());
    let mut out = Vec::with_capacity(svec_len(d));
    for j in 0..d {
        for i in 0..=j {
            if i == j {
                out.push(m[(i, j)]);
            } else {
                out.push(SQRT2 * 0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
    }
    out
}

pub fn unsvec(v: &[f64], dim: usize) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), svec_len(dim));
    let mut m = DMatrix::zeros(dim, dim);
    let mut k = 0;
    for j in 0..dim {
        for i in 0..=j {
            if i == j {
                m[(i, j)] = v[k];
            } else {
                m[(i, j)] = v[k] / SQRT2;
                m[(j, i)] = v[k] / SQRT2;
            }
            k += 1;
        }
    }
    m
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn svec_roundtrip_and_inner_product() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.5, 1.0, 3.0, -1.0, 0.5, -1.0, 4.0]);
        let n = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, -2.0, 1.5, 0.0, 1.5, 0.7]);
        let sm = svec(&m);
        let back = unsvec(&sm, 3);
        assert_abs_diff_eq!(back, m, epsilon = 1e-12);
        let dot: f64 = sm.iter().zip(svec(&n)).map(|(a, b)| a * b).sum();
        let tr = (m * n).trace();
        assert_abs_diff_eq!(dot, tr, epsilon = 1e-12);
        assert_eq!(svec_index(0, 0), 0);
        assert_eq!(svec_index(0, 1), 1);
        assert_eq!(svec_index(1, 1), 2);
        assert_eq!(svec_index(2, 2), 5);
    }

    #[test]
    fn psd_with_trace_equality() {
        // min X00 subject to trace(X) = 1, X psd.
        let mut p = ConicProblem::new();
        let x = p.sym("x", 2);
        p.psd("x_psd", 2, vec![MatTerm::Conj {
            var: x,
            left: DMatrix::identity(2, 2),
            scale: 1.0,
        }]);
        p.eq(ScalarEq {
            scalar_terms: vec![],
            entry_terms: vec![(x, 0, 0, 1.0), (x, 1, 1, 1.0)],
            rhs: 1.0,
        });
        let t = p.scalar("t");
        p.eq(ScalarEq {
            scalar_terms: vec![(t, 1.0)],
            entry_terms: vec![(x, 0, 0, -1.0)],
            rhs: 0.0,
        });
        p.minimize(vec![(t, 1.0)]);
        let out = p.solve(1e-7).unwrap();
        assert_eq!(out.status, SolveStatus::Feasible);
        let xm = out.mat(x);
        assert_abs_diff_eq!(xm.trace(), 1.0, epsilon = 1e-6);
        assert!(xm[(0, 0)].abs() < 1e-6, "got {}", xm[(0, 0)]);
    }

    #[test]
    fn off_diagonal_equality_scaling() {
        // X psd with X00 = 2 and X01 = 1; minimizing X11 gives the
        // rank-one completion X11 = 1/2.
        let mut p = ConicProblem::new();
        let x = p.sym("x", 2);
        p.psd("x_psd", 2, vec![MatTerm::Conj {
            var: x,
            left: DMatrix::identity(2, 2),
            scale: 1.0,
        }]);
        p.eq(ScalarEq {
            scalar_terms: vec![],
            entry_terms: vec![(x, 0, 0, 1.0)],
            rhs: 2.0,
        });
        p.eq(ScalarEq {
            scalar_terms: vec![],
            entry_terms: vec![(x, 0, 1, 1.0)],
            rhs: 1.0,
        });
        let t = p.scalar("t");
        p.eq(ScalarEq {
            scalar_terms: vec![(t, 1.0)],
            entry_terms: vec![(x, 1, 1, -1.0)],
            rhs: 0.0,
        });
        p.minimize(vec![(t, 1.0)]);
        let out = p.solve(1e-7).unwrap();
        assert_eq!(out.status, SolveStatus::Feasible);
        assert_abs_diff_eq!(out.mat(x)[(0, 1)], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(out.mat(x)[(1, 1)], 0.5, epsilon = 1e-4);
    }

    #[test]
    fn lyapunov_decrease() {
        // Stable map: P - AᵀPA - 0.1 I psd with I ⪯ P ⪯ 100 I.
        let a = DMatrix::from_row_slice(2, 2, &[0.4, 0.3, -0.2, 0.5]);
        let id = DMatrix::identity(2, 2);
        let mut p = ConicProblem::new();
        let pv = p.sym("p", 2);
        p.psd("lower", 2, vec![
            MatTerm::Conj { var: pv, left: id.clone(), scale: 1.0 },
            MatTerm::Const(-&id),
        ]);
        p.psd("upper", 2, vec![
            MatTerm::Conj { var: pv, left: id.clone(), scale: -1.0 },
            MatTerm::Const(&id * 100.0),
        ]);
        p.psd("decrease", 2, vec![
            MatTerm::Conj { var: pv, left: id.clone(), scale: 1.0 },
            MatTerm::Conj { var: pv, left: a.clone(), scale: -1.0 },
            MatTerm::Const(-&id * 0.1),
        ]);
        let out = p.solve(1e-7).unwrap();
        assert_eq!(out.status, SolveStatus::Feasible);
        let pm = out.mat(pv).clone();
        assert!(min_eig(&(&pm - &id)) >= -1e-7);
        let dec = &pm - a.transpose() * &pm * &a - &id * 0.1;
        assert!(min_eig(&dec) >= -1e-7, "residual {}", min_eig(&dec));
        assert!(out.psd_residual >= -1e-7);
    }

    #[test]
    fn infeasible_psd_pair() {
        // X ⪰ I and X ⪯ -I cannot hold together.
        let id = DMatrix::identity(2, 2);
        let mut p = ConicProblem::new();
        let x = p.sym("x", 2);
        p.psd("ge_one", 2, vec![
            MatTerm::Conj { var: x, left: id.clone(), scale: 1.0 },
            MatTerm::Const(-&id),
        ]);
        p.psd("le_minus_one", 2, vec![
            MatTerm::Conj { var: x, left: id.clone(), scale: -1.0 },
            MatTerm::Const(-&id),
        ]);
        let out = p.solve(1e-7).unwrap();
        assert_eq!(out.status, SolveStatus::Infeasible);
    }

    #[test]
    fn scalar_bounds_and_objective() {
        let mut p = ConicProblem::new();
        let s = p.scalar_with_bounds("s", Some(3.0), Some(10.0));
        p.minimize(vec![(s, 1.0)]);
        let out = p.solve(1e-7).unwrap();
        assert_eq!(out.status, SolveStatus::Feasible);
        assert_abs_diff_eq!(out.scalar(s), 3.0, epsilon = 1e-6);
    }

    #[test]
    fn rectangular_conjugation() {
        // Embed a 2x2 variable on the top-left block of a 3x3 cone via
        // a rectangular left factor.
        let mut p = ConicProblem::new();
        let x = p.sym("x", 2);
        let mut left = DMatrix::zeros(2, 3);
        left[(0, 0)] = 1.0;
        left[(1, 1)] = 1.0;
        let mut corner = DMatrix::zeros(3, 3);
        corner[(2, 2)] = 1.0;
        p.psd("embed", 3, vec![
            MatTerm::Conj { var: x, left, scale: 1.0 },
            MatTerm::Const(corner),
        ]);
        // Force X11 = -1: the embedded block then has a negative
        // eigenvalue, so the only way out is infeasibility.
        p.eq(ScalarEq {
            scalar_terms: vec![],
            entry_terms: vec![(x, 1, 1, 1.0)],
            rhs: -1.0,
        });
        let out = p.solve(1e-7).unwrap();
        assert_eq!(out.status, SolveStatus::Infeasible);
    }
}
