//! Discrete-time plant models, controllers, and the two packet-loss
//! actuation strategies.
//!
//! On a delivered packet the loop applies u = g(x); on a loss the
//! zero strategy applies u = 0 while the hold strategy replays the last
//! delivered input, which augments the state with the held register.

use crate::error::Error;
use crate::poly::{Poly, Poly64, COMPOSE_DEGREE_CAP};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Zero,
    Hold,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self, Error> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "state matrix must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "input matrix must be {}xm with m >= 1, got {}x{}",
                a.nrows(),
                b.nrows(),
                b.ncols()
            )));
        }
        Ok(LinearSystem { a, b })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearController {
    pub k: DMatrix<f64>,
}

impl LinearController {
    pub fn new(k: DMatrix<f64>) -> Self {
        LinearController { k }
    }

    pub fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.k * x
    }
}

/// Polynomial plant x+ = f(x, u), each component a polynomial in the
/// variables [x_1 .. x_n, u_1 .. u_m].
#[derive(Clone, Debug, PartialEq)]
pub struct PolynomialSystem {
    pub n: usize,
    pub m: usize,
    pub f: Vec<Poly64>,
}

impl PolynomialSystem {
    pub fn new(n: usize, m: usize, f: Vec<Poly64>) -> Result<Self, Error> {
        if f.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "expected {n} dynamics components, got {}",
                f.len()
            )));
        }
        if f.iter().any(|p| p.nvars() != n + m) {
            return Err(Error::DimensionMismatch(format!(
                "dynamics components must use {} variables (state then input)",
                n + m
            )));
        }
        Ok(PolynomialSystem { n, m, f })
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut point = Vec::with_capacity(self.n + self.m);
        point.extend(x.iter().copied());
        point.extend(u.iter().copied());
        DVector::from_iterator(self.n, self.f.iter().map(|p| p.eval(&point)))
    }

    pub fn from_linear(sys: &LinearSystem) -> Self {
        let (n, m) = (sys.state_dim(), sys.input_dim());
        let f = (0..n)
            .map(|i| {
                let mut p = Poly64::zero(n + m);
                for j in 0..n {
                    p.add_term(crate::poly::Mono::var(n + m, j), sys.a[(i, j)]);
                }
                for j in 0..m {
                    p.add_term(crate::poly::Mono::var(n + m, n + j), sys.b[(i, j)]);
                }
                p
            })
            .collect();
        PolynomialSystem { n, m, f }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SystemModel {
    Linear(LinearSystem),
    Poly(PolynomialSystem),
}

impl SystemModel {
    pub fn state_dim(&self) -> usize {
        match self {
            SystemModel::Linear(s) => s.state_dim(),
            SystemModel::Poly(s) => s.n,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            SystemModel::Linear(s) => s.input_dim(),
            SystemModel::Poly(s) => s.m,
        }
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        match self {
            SystemModel::Linear(s) => &s.a * x + &s.b * u,
            SystemModel::Poly(s) => s.step(x, u),
        }
    }

    pub fn as_poly(&self) -> PolynomialSystem {
        match self {
            SystemModel::Linear(s) => PolynomialSystem::from_linear(s),
            SystemModel::Poly(s) => s.clone(),
        }
    }
}

/// Feedback law u = g(x), linear or polynomial in the state.
#[derive(Clone, Debug, PartialEq)]
pub enum ControlLaw {
    Linear(LinearController),
    Poly(Vec<Poly64>),
}

impl ControlLaw {
    pub fn input_dim(&self) -> usize {
        match self {
            ControlLaw::Linear(c) => c.k.nrows(),
            ControlLaw::Poly(p) => p.len(),
        }
    }

    pub fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            ControlLaw::Linear(c) => c.output(x),
            ControlLaw::Poly(polys) => {
                let point: Vec<f64> = x.iter().copied().collect();
                DVector::from_iterator(polys.len(), polys.iter().map(|p| p.eval(&point)))
            }
        }
    }

    pub fn as_linear(&self) -> Option<&LinearController> {
        match self {
            ControlLaw::Linear(c) => Some(c),
            ControlLaw::Poly(_) => None,
        }
    }

    /// Output components as polynomials in the state variables.
    pub fn to_polys(&self, n: usize) -> Vec<Poly64> {
        match self {
            ControlLaw::Poly(p) => p.clone(),
            ControlLaw::Linear(c) => (0..c.k.nrows())
                .map(|i| {
                    let mut p = Poly64::zero(n);
                    for j in 0..n {
                        p.add_term(crate::poly::Mono::var(n, j), c.k[(i, j)]);
                    }
                    p
                })
                .collect(),
        }
    }
}

/// Plant state together with the hold register.
#[derive(Clone, Debug, PartialEq)]
pub struct AugState {
    pub x: DVector<f64>,
    pub u_held: DVector<f64>,
}

/// One closed-loop step, u = g(x).
pub fn step_closed(model: &SystemModel, law: &ControlLaw, x: &DVector<f64>) -> DVector<f64> {
    model.step(x, &law.output(x))
}

/// One open-loop step under the zero strategy.
pub fn step_open_zero(model: &SystemModel, x: &DVector<f64>) -> DVector<f64> {
    model.step(x, &DVector::zeros(model.input_dim()))
}

/// One open-loop step under the hold strategy.
pub fn step_open_hold(model: &SystemModel, aug: &AugState) -> AugState {
    AugState { x: model.step(&aug.x, &aug.u_held), u_held: aug.u_held.clone() }
}

/// m open-loop steps after one closed-loop step from `x`. For the hold
/// strategy the register carries g(x) through the losses.
pub fn iterate_open(
    model: &SystemModel,
    law: &ControlLaw,
    strategy: Strategy,
    x: &DVector<f64>,
    m: u32,
) -> DVector<f64> {
    let u = law.output(x);
    let mut cur = model.step(x, &u);
    for _ in 0..m {
        cur = match strategy {
            Strategy::Zero => step_open_zero(model, &cur),
            Strategy::Hold => model.step(&cur, &u),
        };
    }
    cur
}

/// Closed-loop map as state polynomials: f(x, g(x)).
pub fn closed_poly_map(sys: &PolynomialSystem, law: &ControlLaw) -> Result<Vec<Poly64>, Error> {
    let subs = state_substitution(sys, law);
    sys.f
        .iter()
        .map(|p| p.compose(&subs, COMPOSE_DEGREE_CAP))
        .collect()
}

/// Open-loop map under zero actuation as state polynomials: f(x, 0).
pub fn open_zero_poly_map(sys: &PolynomialSystem) -> Result<Vec<Poly64>, Error> {
    let n = sys.n;
    let mut subs: Vec<Poly64> = (0..n).map(|i| Poly::var(n, i)).collect();
    subs.extend((0..sys.m).map(|_| Poly64::zero(n)));
    sys.f
        .iter()
        .map(|p| p.compose(&subs, COMPOSE_DEGREE_CAP))
        .collect()
}

/// The m-fold open-loop composition after one closed step, as state
/// polynomials. For hold, the substituted input stays g(x0) where x0 is
/// the pre-delivery state.
pub fn iterated_poly_map(
    sys: &PolynomialSystem,
    law: &ControlLaw,
    strategy: Strategy,
    m: u32,
    degree_cap: usize,
) -> Result<Vec<Poly64>, Error> {
    let n = sys.n;
    let held = law.to_polys(n);
    let mut cur = closed_poly_map(sys, law)?;
    for _ in 0..m {
        let mut subs = cur.clone();
        match strategy {
            Strategy::Zero => subs.extend((0..sys.m).map(|_| Poly64::zero(n))),
            Strategy::Hold => subs.extend(held.iter().cloned()),
        }
        cur = sys
            .f
            .iter()
            .map(|p| p.compose(&subs, degree_cap))
            .collect::<Result<Vec<_>, _>>()?;
    }
    Ok(cur)
}

fn state_substitution(sys: &PolynomialSystem, law: &ControlLaw) -> Vec<Poly64> {
    let n = sys.n;
    let mut subs: Vec<Poly64> = (0..n).map(|i| Poly::var(n, i)).collect();
    subs.extend(law.to_polys(n));
    subs
}
