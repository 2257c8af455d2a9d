//! State-space regions described by polynomial inequalities, plus
//! deterministic sampling helpers.
//!
//! The conic certifiers work with conjunctions of quadratic forms
//! g(x) = [x; 1]^T S [x; 1] >= 0; the sum-of-squares path accepts
//! general polynomial inequalities. Set descriptions in problem files
//! lower to either representation.

use crate::error::Error;
use crate::poly::{Mono, Poly64};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const MEMBERSHIP_SLACK: f64 = 1e-12;
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Quadratic form over homogenized coordinates [x; 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadForm {
    pub mat: DMatrix<f64>,
}

impl QuadForm {
    /// Validates shape and symmetry (within 1e-12), storing the
    /// symmetrized matrix.
    pub fn new(mat: DMatrix<f64>) -> Result<Self, Error> {
        if mat.nrows() != mat.ncols() || mat.nrows() < 1 {
            return Err(Error::DimensionMismatch(format!(
                "quadratic form must be square and nonempty, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        let asym = (&mat - mat.transpose()).abs().max();
        if asym > SYMMETRY_TOL {
            return Err(Error::DimensionMismatch(format!(
                "quadratic form not symmetric: max asymmetry {asym:.3e}"
            )));
        }
        let sym = (&mat + mat.transpose()) * 0.5;
        Ok(QuadForm { mat: sym })
    }

    /// State dimension (matrix is (dim + 1) x (dim + 1)).
    pub fn dim(&self) -> usize {
        self.mat.nrows() - 1
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        let d = self.dim();
        let mut acc = self.mat[(d, d)];
        for i in 0..d {
            acc += 2.0 * self.mat[(i, d)] * x[i];
            for j in 0..d {
                acc += self.mat[(i, j)] * x[i] * x[j];
            }
        }
        acc
    }

    pub fn to_poly(&self) -> Poly64 {
        let d = self.dim();
        let mut p = Poly64::zero(d);
        p.add_term(Mono::constant(d), self.mat[(d, d)]);
        for i in 0..d {
            p.add_term(Mono::var(d, i), 2.0 * self.mat[(i, d)]);
            for j in i..d {
                let c = if i == j { self.mat[(i, i)] } else { 2.0 * self.mat[(i, j)] };
                let mut e = vec![0u32; d];
                e[i] += 1;
                e[j] += 1;
                p.add_term(Mono(e), c);
            }
        }
        p
    }

    /// Quadratic form of a polynomial of degree <= 2, if it is one.
    pub fn from_poly(p: &Poly64) -> Result<Self, Error> {
        let d = p.nvars();
        if p.degree() > 2 {
            return Err(Error::DimensionMismatch(format!(
                "polynomial of degree {} is not quadratic",
                p.degree()
            )));
        }
        let mut mat = DMatrix::zeros(d + 1, d + 1);
        for (m, &c) in p.terms() {
            let support: Vec<usize> = m
                .0
                .iter()
                .enumerate()
                .filter(|(_, &e)| e > 0)
                .map(|(i, _)| i)
                .collect();
            match support.len() {
                0 => mat[(d, d)] += c,
                1 => {
                    let i = support[0];
                    if m.0[i] == 1 {
                        mat[(i, d)] += c / 2.0;
                        mat[(d, i)] += c / 2.0;
                    } else {
                        mat[(i, i)] += c;
                    }
                }
                2 => {
                    let (i, j) = (support[0], support[1]);
                    mat[(i, j)] += c / 2.0;
                    mat[(j, i)] += c / 2.0;
                }
                _ => unreachable!("degree <= 2"),
            }
        }
        QuadForm::new(mat)
    }
}

/// Intersection of quadratic-form inequalities g_i(x) >= 0.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadSet {
    pub forms: Vec<QuadForm>,
}

impl QuadSet {
    pub fn dim(&self) -> usize {
        self.forms.first().map_or(0, |f| f.dim())
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.forms.iter().all(|f| f.eval(x) >= -MEMBERSHIP_SLACK)
    }

    pub fn min_margin(&self, x: &DVector<f64>) -> f64 {
        self.forms
            .iter()
            .map(|f| f.eval(x))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Intersection of polynomial inequalities g_i(x) >= 0.
#[derive(Clone, Debug, PartialEq)]
pub struct PolySet {
    pub ineqs: Vec<Poly64>,
}

impl PolySet {
    pub fn contains(&self, x: &[f64]) -> bool {
        self.ineqs
            .iter()
            .all(|g| g.eval(&x.to_vec()) >= -MEMBERSHIP_SLACK)
    }
}

/// Sparse polynomial term used by set and dynamics descriptions.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TermSpec {
    pub coef: serde_json::Value,
    pub powers: Vec<u32>,
}

/// Polynomial description: a list of terms over fixed variables.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PolySpec {
    pub terms: Vec<TermSpec>,
}

/// Set description as written in problem files.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SetSpec {
    Ball { center: Vec<f64>, radius: f64 },
    Ellipsoid { center: Vec<f64>, semi_axes: Vec<f64> },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Quadratic { matrix: Vec<Vec<f64>> },
    Polys { ineqs: Vec<PolySpec> },
}

impl SetSpec {
    /// Lowers to quadratic forms in `dim` variables. `path` labels
    /// errors with the config location. Polynomial entries must have
    /// degree <= 2 on this route.
    pub fn to_quadset(&self, dim: usize, path: &str) -> Result<QuadSet, Error> {
        let forms = match self {
            SetSpec::Ball { center, radius } => {
                check_len(center.len(), dim, path, "center")?;
                if *radius <= 0.0 {
                    return Err(Error::Config {
                        path: format!("{path}.radius"),
                        msg: "radius must be positive".into(),
                    });
                }
                vec![ellipsoid_form(center, &vec![*radius; dim])?]
            }
            SetSpec::Ellipsoid { center, semi_axes } => {
                check_len(center.len(), dim, path, "center")?;
                check_len(semi_axes.len(), dim, path, "semi_axes")?;
                if semi_axes.iter().any(|&a| a <= 0.0) {
                    return Err(Error::Config {
                        path: format!("{path}.semi_axes"),
                        msg: "semi-axes must be positive".into(),
                    });
                }
                vec![ellipsoid_form(center, semi_axes)?]
            }
            SetSpec::Box { lo, hi } => {
                check_len(lo.len(), dim, path, "lo")?;
                check_len(hi.len(), dim, path, "hi")?;
                let mut forms = Vec::with_capacity(dim);
                for i in 0..dim {
                    if lo[i] >= hi[i] {
                        return Err(Error::Config {
                            path: format!("{path}.lo[{i}]"),
                            msg: "box bounds must satisfy lo < hi".into(),
                        });
                    }
                    // (x_i - lo)(hi - x_i) >= 0
                    let mut m = DMatrix::zeros(dim + 1, dim + 1);
                    m[(i, i)] = -1.0;
                    m[(i, dim)] = (lo[i] + hi[i]) / 2.0;
                    m[(dim, i)] = (lo[i] + hi[i]) / 2.0;
                    m[(dim, dim)] = -lo[i] * hi[i];
                    forms.push(QuadForm::new(m)?);
                }
                forms
            }
            SetSpec::Quadratic { matrix } => {
                let rows = matrix.len();
                if rows != dim + 1 || matrix.iter().any(|r| r.len() != dim + 1) {
                    return Err(Error::Config {
                        path: format!("{path}.matrix"),
                        msg: format!("expected a {}x{} matrix", dim + 1, dim + 1),
                    });
                }
                let m = DMatrix::from_fn(dim + 1, dim + 1, |i, j| matrix[i][j]);
                vec![QuadForm::new(m).map_err(|e| Error::Config {
                    path: format!("{path}.matrix"),
                    msg: e.to_string(),
                })?]
            }
            SetSpec::Polys { ineqs } => {
                let polys = self.to_polyset(dim, path)?;
                let mut forms = Vec::with_capacity(ineqs.len());
                for (i, g) in polys.ineqs.iter().enumerate() {
                    forms.push(QuadForm::from_poly(g).map_err(|_| Error::Config {
                        path: format!("{path}.ineqs[{i}]"),
                        msg: "inequality exceeds degree 2; only the polynomial \
                              certifier accepts it"
                            .into(),
                    })?);
                }
                forms
            }
        };
        Ok(QuadSet { forms })
    }

    /// Lowers to polynomial inequalities in `dim` variables.
    pub fn to_polyset(&self, dim: usize, path: &str) -> Result<PolySet, Error> {
        match self {
            SetSpec::Polys { ineqs } => {
                let mut out = Vec::with_capacity(ineqs.len());
                for (i, spec) in ineqs.iter().enumerate() {
                    out.push(poly_from_spec(spec, dim, &format!("{path}.ineqs[{i}]"), None)?);
                }
                if out.is_empty() {
                    return Err(Error::Config {
                        path: path.to_string(),
                        msg: "set needs at least one inequality".into(),
                    });
                }
                Ok(PolySet { ineqs: out })
            }
            _ => {
                let quad = self.to_quadset(dim, path)?;
                Ok(PolySet { ineqs: quad.forms.iter().map(|f| f.to_poly()).collect() })
            }
        }
    }

    /// Axis-aligned bounding box, when one is derivable from the shape.
    pub fn bbox(&self, dim: usize) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            SetSpec::Ball { center, radius } => Some((
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            )),
            SetSpec::Ellipsoid { center, semi_axes } => Some((
                center.iter().zip(semi_axes).map(|(c, a)| c - a).collect(),
                center.iter().zip(semi_axes).map(|(c, a)| c + a).collect(),
            )),
            SetSpec::Box { lo, hi } => Some((lo.clone(), hi.clone())),
            SetSpec::Quadratic { .. } | SetSpec::Polys { .. } => {
                let _ = dim;
                None
            }
        }
    }

    /// Exact axis-extreme points for shapes with a closed form; used to
    /// seed falsification with boundary states.
    pub fn axis_extremes(&self, dim: usize) -> Vec<DVector<f64>> {
        match self {
            SetSpec::Ball { center, radius } => {
                let c = DVector::from_vec(center.clone());
                let mut out = vec![c.clone()];
                for i in 0..dim {
                    for sign in [-1.0, 1.0] {
                        let mut p = c.clone();
                        p[i] += sign * radius;
                        out.push(p);
                    }
                }
                out
            }
            SetSpec::Ellipsoid { center, semi_axes } => {
                let c = DVector::from_vec(center.clone());
                let mut out = vec![c.clone()];
                for i in 0..dim {
                    for sign in [-1.0, 1.0] {
                        let mut p = c.clone();
                        p[i] += sign * semi_axes[i];
                        out.push(p);
                    }
                }
                out
            }
            SetSpec::Box { lo, hi } => {
                let mut out = Vec::new();
                // Corners (capped) and the center.
                let corners = 1usize << dim.min(10);
                for mask in 0..corners {
                    let p = DVector::from_fn(dim, |i, _| {
                        if mask >> i & 1 == 1 {
                            hi[i]
                        } else {
                            lo[i]
                        }
                    });
                    out.push(p);
                }
                out.push(DVector::from_fn(dim, |i, _| (lo[i] + hi[i]) / 2.0));
                out
            }
            _ => Vec::new(),
        }
    }
}

fn ellipsoid_form(center: &[f64], semi_axes: &[f64]) -> Result<QuadForm, Error> {
    let d = center.len();
    let mut m = DMatrix::zeros(d + 1, d + 1);
    m[(d, d)] = 1.0;
    for i in 0..d {
        let w = 1.0 / (semi_axes[i] * semi_axes[i]);
        m[(i, i)] = -w;
        m[(i, d)] = w * center[i];
        m[(d, i)] = w * center[i];
        m[(d, d)] -= w * center[i] * center[i];
    }
    QuadForm::new(m)
}

fn check_len(got: usize, want: usize, path: &str, field: &str) -> Result<(), Error> {
    if got != want {
        return Err(Error::Config {
            path: format!("{path}.{field}"),
            msg: format!("expected {want} entries, got {got}"),
        });
    }
    Ok(())
}

/// Builds a polynomial from its term list. Coefficients are numbers or
/// arithmetic expressions over named parameters.
pub fn poly_from_spec(
    spec: &PolySpec,
    nvars: usize,
    path: &str,
    params: Option<&std::collections::BTreeMap<String, f64>>,
) -> Result<Poly64, Error> {
    let empty = std::collections::BTreeMap::new();
    let params = params.unwrap_or(&empty);
    let mut p = Poly64::zero(nvars);
    for (t, term) in spec.terms.iter().enumerate() {
        if term.powers.len() != nvars {
            return Err(Error::Config {
                path: format!("{path}.terms[{t}].powers"),
                msg: format!("expected {nvars} exponents, got {}", term.powers.len()),
            });
        }
        let coef = match &term.coef {
            serde_json::Value::Number(n) => n.as_f64().ok_or_else(|| Error::Config {
                path: format!("{path}.terms[{t}].coef"),
                msg: "coefficient is not a finite number".into(),
            })?,
            serde_json::Value::String(expr) => {
                crate::problem::eval_param_expr(expr, params).map_err(|msg| Error::Config {
                    path: format!("{path}.terms[{t}].coef"),
                    msg,
                })?
            }
            _ => {
                return Err(Error::Config {
                    path: format!("{path}.terms[{t}].coef"),
                    msg: "coefficient must be a number or a parameter expression".into(),
                })
            }
        };
        p.add_term(Mono(term.powers.clone()), coef);
    }
    Ok(p)
}

/// Deterministic Halton sequence point in [0, 1)^dim.
pub(crate) fn halton(index: usize, dim: usize) -> Vec<f64> {
    const PRIMES: [usize; 8] = [2, 3, 5, 7, 11, 13, 17, 19];
    assert!(dim <= PRIMES.len(), "halton dimension too large");
    (0..dim)
        .map(|d| {
            let base = PRIMES[d];
            let mut f = 1.0;
            let mut r = 0.0;
            let mut i = index + 1;
            while i > 0 {
                f /= base as f64;
                r += f * (i % base) as f64;
                i /= base;
            }
            r
        })
        .collect()
}

/// Mixed sample inside a membership predicate: half uniform from a
/// seeded generator, half low-discrepancy Halton, both drawn in the
/// bounding box and rejected against the predicate.
pub fn sample_region(
    bbox: (&[f64], &[f64]),
    member: impl Fn(&DVector<f64>) -> bool,
    count: usize,
    rng: &mut impl Rng,
) -> Vec<DVector<f64>> {
    let (lo, hi) = bbox;
    let dim = lo.len();
    let mut out = Vec::with_capacity(count);
    let uniform_target = count / 2;
    let mut attempts = 0usize;
    let max_attempts = count.saturating_mul(500).max(100_000);
    while out.len() < uniform_target && attempts < max_attempts {
        attempts += 1;
        let p = DVector::from_fn(dim, |i, _| rng.gen_range(lo[i]..hi[i]));
        if member(&p) {
            out.push(p);
        }
    }
    let mut index = 0usize;
    attempts = 0;
    while out.len() < count && attempts < max_attempts {
        attempts += 1;
        let u = halton(index, dim);
        index += 1;
        let p = DVector::from_fn(dim, |i, _| lo[i] + u[i] * (hi[i] - lo[i]));
        if member(&p) {
            out.push(p);
        }
    }
    out
}
