//! Problem files: JSON descriptions of a plant, controller, sets, and
//! weakly-hard constraint, with validation that reports the offending
//! JSON path.

use crate::error::Error;
use crate::sets::{poly_from_spec, PolySet, PolySpec, QuadSet, SetSpec};
use crate::systems::{
    ControlLaw, LinearController, LinearSystem, PolynomialSystem, Strategy, SystemModel,
};
use crate::wh::WhConstraint;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SystemSpec {
    Linear {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
    },
    Polynomial {
        state_dim: usize,
        input_dim: usize,
        #[serde(default)]
        params: BTreeMap<String, f64>,
        dynamics: Vec<PolySpec>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ControllerSpec {
    Linear { k: Vec<Vec<f64>> },
    Polynomial { outputs: Vec<PolySpec> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SetsSpec {
    pub x: SetSpec,
    pub x0: SetSpec,
    pub xu: SetSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<SetSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub system: SystemSpec,
    pub controller: Option<ControllerSpec>,
    pub sets: SetsSpec,
    pub constraint: WhConstraint,
    pub strategy: Strategy,
}

/// A validated problem instance.
#[derive(Clone, Debug)]
pub struct Problem {
    pub model: SystemModel,
    pub law: Option<ControlLaw>,
    pub constraint: WhConstraint,
    pub strategy: Strategy,
    pub spec: ProblemSpec,
    pub x_poly: PolySet,
    pub x0_poly: PolySet,
    pub xu_poly: PolySet,
    pub u_poly: Option<PolySet>,
}

/// Quadratic-form views of the problem sets, for the conic certifiers.
#[derive(Clone, Debug)]
pub struct QuadSets {
    pub x: QuadSet,
    pub x0: QuadSet,
    pub xu: QuadSet,
    pub u: Option<QuadSet>,
}

impl Problem {
    pub fn from_json_str(text: &str) -> Result<Problem, Error> {
        let spec: ProblemSpec = serde_json::from_str(text).map_err(|e| Error::Config {
            path: "problem".into(),
            msg: e.to_string(),
        })?;
        Problem::from_spec(spec)
    }

    pub fn from_spec(spec: ProblemSpec) -> Result<Problem, Error> {
        let model = build_model(&spec.system)?;
        let n = model.state_dim();
        let m = model.input_dim();

        let law = match &spec.controller {
            None => None,
            Some(ControllerSpec::Linear { k }) => {
                let mat = matrix_from_rows(k, "problem.controller.k")?;
                if mat.nrows() != m || mat.ncols() != n {
                    return Err(Error::Config {
                        path: "problem.controller.k".into(),
                        msg: format!("expected a {m}x{n} gain, got {}x{}", mat.nrows(), mat.ncols()),
                    });
                }
                Some(ControlLaw::Linear(LinearController::new(mat)))
            }
            Some(ControllerSpec::Polynomial { outputs }) => {
                if outputs.len() != m {
                    return Err(Error::Config {
                        path: "problem.controller.outputs".into(),
                        msg: format!("expected {m} outputs, got {}", outputs.len()),
                    });
                }
                let polys = outputs
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        poly_from_spec(p, n, &format!("problem.controller.outputs[{i}]"), None)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Some(ControlLaw::Poly(polys))
            }
        };

        let x_poly = spec.sets.x.to_polyset(n, "problem.sets.x")?;
        let x0_poly = spec.sets.x0.to_polyset(n, "problem.sets.x0")?;
        let xu_poly = spec.sets.xu.to_polyset(n, "problem.sets.xu")?;
        let u_poly = match &spec.sets.u {
            Some(u) => Some(u.to_polyset(m, "problem.sets.u")?),
            None => None,
        };

        if spec.sets.x.bbox(n).is_none() {
            return Err(Error::Config {
                path: "problem.sets.x".into(),
                msg: "state set must have a derivable bounding box (ball, ellipsoid, or box)"
                    .into(),
            });
        }
        if spec.strategy == Strategy::Hold && spec.sets.u.is_none() {
            return Err(Error::Config {
                path: "problem.sets.u".into(),
                msg: "hold strategy requires a bounded input set".into(),
            });
        }
        if let Some(u) = &spec.sets.u {
            if u.bbox(m).is_none() {
                return Err(Error::Config {
                    path: "problem.sets.u".into(),
                    msg: "input set must have a derivable bounding box (ball, ellipsoid, or box)"
                        .into(),
                });
            }
        }

        let problem = Problem {
            model,
            law,
            constraint: spec.constraint,
            strategy: spec.strategy,
            spec,
            x_poly,
            x0_poly,
            xu_poly,
            u_poly,
        };
        problem.check_disjoint()?;
        Ok(problem)
    }

    /// Initial and unsafe sets must not intersect; checked on a
    /// deterministic scan of the initial region.
    fn check_disjoint(&self) -> Result<(), Error> {
        for p in self.scan_initial(4096) {
            if self.contains_xu(&p) {
                let coords: Vec<String> = p.iter().map(|v| format!("{v:.6}")).collect();
                return Err(Error::Config {
                    path: "problem.sets.x0".into(),
                    msg: format!(
                        "initial set intersects unsafe set, witness x = [{}]",
                        coords.join(", ")
                    ),
                });
            }
        }
        Ok(())
    }

    /// Deterministic points of the initial set: axis extremes plus a
    /// Halton scan of its bounding box filtered by membership.
    pub fn scan_initial(&self, budget: usize) -> Vec<DVector<f64>> {
        let n = self.model.state_dim();
        let mut pts: Vec<DVector<f64>> = self
            .spec
            .sets
            .x0
            .axis_extremes(n)
            .into_iter()
            .filter(|p| self.contains_x0(p))
            .collect();
        let (lo, hi) = self
            .spec
            .sets
            .x0
            .bbox(n)
            .or_else(|| self.spec.sets.x.bbox(n))
            .expect("state set has a bounding box");
        let mut grid = crate::sets::sample_region(
            (lo.as_slice(), hi.as_slice()),
            |p| self.contains_x0(p),
            budget,
            // The uniform half also needs determinism here, so seed it
            // from a constant.
            &mut seeded(0x5eed),
        );
        pts.append(&mut grid);
        pts
    }

    pub fn contains_x(&self, p: &DVector<f64>) -> bool {
        let v: Vec<f64> = p.iter().copied().collect();
        self.x_poly.contains(&v)
    }

    pub fn contains_x0(&self, p: &DVector<f64>) -> bool {
        let v: Vec<f64> = p.iter().copied().collect();
        self.x0_poly.contains(&v)
    }

    pub fn contains_xu(&self, p: &DVector<f64>) -> bool {
        let v: Vec<f64> = p.iter().copied().collect();
        self.xu_poly.contains(&v)
    }

    pub fn contains_u(&self, p: &DVector<f64>) -> bool {
        match &self.u_poly {
            Some(set) => {
                let v: Vec<f64> = p.iter().copied().collect();
                set.contains(&v)
            }
            None => true,
        }
    }

    /// Quadratic-form views for the conic certifiers. Errors when a set
    /// uses inequalities above degree 2.
    pub fn quad_sets(&self) -> Result<QuadSets, Error> {
        let n = self.model.state_dim();
        let m = self.model.input_dim();
        Ok(QuadSets {
            x: self.spec.sets.x.to_quadset(n, "problem.sets.x")?,
            x0: self.spec.sets.x0.to_quadset(n, "problem.sets.x0")?,
            xu: self.spec.sets.xu.to_quadset(n, "problem.sets.xu")?,
            u: match &self.spec.sets.u {
                Some(u) => Some(u.to_quadset(m, "problem.sets.u")?),
                None => None,
            },
        })
    }

    pub fn law_required(&self) -> Result<&ControlLaw, Error> {
        self.law.as_ref().ok_or(Error::ControllerMissing)
    }

    /// Bounding box of the state set, guaranteed present.
    pub fn x_bbox(&self) -> (Vec<f64>, Vec<f64>) {
        self.spec
            .sets
            .x
            .bbox(self.model.state_dim())
            .expect("validated at construction")
    }

    pub fn u_bbox(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        self.spec
            .sets
            .u
            .as_ref()
            .and_then(|u| u.bbox(self.model.input_dim()))
    }
}

fn seeded(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

fn build_model(spec: &SystemSpec) -> Result<SystemModel, Error> {
    match spec {
        SystemSpec::Linear { a, b } => {
            let a = matrix_from_rows(a, "problem.system.a")?;
            let b = matrix_from_rows(b, "problem.system.b")?;
            let sys = LinearSystem::new(a, b).map_err(|e| Error::Config {
                path: "problem.system".into(),
                msg: e.to_string(),
            })?;
            Ok(SystemModel::Linear(sys))
        }
        SystemSpec::Polynomial { state_dim, input_dim, params, dynamics } => {
            if dynamics.len() != *state_dim {
                return Err(Error::Config {
                    path: "problem.system.dynamics".into(),
                    msg: format!(
                        "expected {state_dim} components, got {}",
                        dynamics.len()
                    ),
                });
            }
            let nv = state_dim + input_dim;
            let f = dynamics
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    poly_from_spec(p, nv, &format!("problem.system.dynamics[{i}]"), Some(params))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let sys = PolynomialSystem::new(*state_dim, *input_dim, f).map_err(|e| {
                Error::Config { path: "problem.system".into(), msg: e.to_string() }
            })?;
            Ok(SystemModel::Poly(sys))
        }
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], path: &str) -> Result<DMatrix<f64>, Error> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config {
            path: path.to_string(),
            msg: "matrix rows must be nonempty and of equal length".into(),
        });
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Evaluates an arithmetic expression over named parameters. Supports
/// numbers, identifiers, + - * /, unary minus, and parentheses.
pub fn eval_param_expr(expr: &str, params: &BTreeMap<String, f64>) -> Result<f64, String> {
    let tokens = tokenize(expr)?;
    let mut parser = ExprParser { tokens, pos: 0, params };
    let value = parser.expr()?;
    if parser.pos != parser.tokens.len() {
        return Err(format!("trailing input in expression {expr:?}"));
    }
    if !value.is_finite() {
        return Err(format!("expression {expr:?} does not evaluate to a finite number"));
    }
    Ok(value)
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Open,
    Close,
}

fn tokenize(expr: &str) -> Result<Vec<Token>, String> {
    let mut out = Vec::new();
    let chars: Vec<char> = expr.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' => i += 1,
            '+' => {
                out.push(Token::Plus);
                i += 1;
            }
            '-' => {
                out.push(Token::Minus);
                i += 1;
            }
            '*' => {
                out.push(Token::Star);
                i += 1;
            }
            '/' => {
                out.push(Token::Slash);
                i += 1;
            }
            '(' => {
                out.push(Token::Open);
                i += 1;
            }
            ')' => {
                out.push(Token::Close);
                i += 1;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_digit()
                        || chars[i] == '.'
                        || chars[i] == 'e'
                        || chars[i] == 'E'
                        || ((chars[i] == '+' || chars[i] == '-')
                            && i > start
                            && (chars[i - 1] == 'e' || chars[i - 1] == 'E')))
                {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                let num = text
                    .parse::<f64>()
                    .map_err(|_| format!("bad number {text:?} in expression"))?;
                out.push(Token::Num(num));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token::Ident(chars[start..i].iter().collect()));
            }
            other => return Err(format!("unexpected character {other:?} in expression")),
        }
    }
    Ok(out)
}

struct ExprParser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    params: &'a BTreeMap<String, f64>,
}

impl ExprParser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn expr(&mut self) -> Result<f64, String> {
        let mut acc = self.term()?;
        while let Some(tok) = self.peek() {
            match tok {
                Token::Plus => {
                    self.pos += 1;
                    acc += self.term()?;
                }
                Token::Minus => {
                    self.pos += 1;
                    acc -= self.term()?;
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<f64, String> {
        let mut acc = self.factor()?;
        while let Some(tok) = self.peek() {
            match tok {
                Token::Star => {
                    self.pos += 1;
                    acc *= self.factor()?;
                }
                Token::Slash => {
                    self.pos += 1;
                    acc /= self.factor()?;
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<f64, String> {
        match self.peek().cloned() {
            Some(Token::Minus) => {
                self.pos += 1;
                Ok(-self.factor()?)
            }
            Some(Token::Num(v)) => {
                self.pos += 1;
                Ok(v)
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                self.params
                    .get(&name)
                    .copied()
                    .ok_or_else(|| format!("unknown parameter {name:?}"))
            }
            Some(Token::Open) => {
                self.pos += 1;
                let v = self.expr()?;
                match self.peek() {
                    Some(Token::Close) => {
                        self.pos += 1;
                        Ok(v)
                    }
                    _ => Err("missing closing parenthesis".into()),
                }
            }
            _ => Err("unexpected end of expression".into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_json() -> serde_json::Value {
        serde_json::json!({
            "system": {"type": "linear", "a": [[0.0, 1.0], [1.0, 1.0]], "b": [[1.0], [1.0]]},
            "controller": {"type": "linear", "k": [[-0.5, -0.7]]},
            "sets": {
                "x": {"type": "ball", "center": [0.0, 0.0], "radius": 3.0},
                "x0": {"type": "ball", "center": [0.0, 0.0], "radius": 0.4},
                "xu": {"type": "quadratic", "matrix": [[-0.2, 0.0, 0.3], [0.0, 0.0, 0.5], [0.3, 0.5, -1.0]]},
                "u": {"type": "box", "lo": [-3.0], "hi": [3.0]}
            },
            "constraint": {"r": 2, "s": 4},
            "strategy": "hold"
        })
    }

    #[test]
    fn parses_valid_problem() {
        let p = Problem::from_json_str(&base_json().to_string()).unwrap();
        assert_eq!(p.model.state_dim(), 2);
        assert_eq!(p.constraint.s(), 4);
        assert!(p.contains_x0(&DVector::from_vec(vec![0.1, 0.1])));
        assert!(p.contains_xu(&DVector::from_vec(vec![0.0, 1.5])));
        assert!(!p.contains_xu(&DVector::from_vec(vec![0.0, 0.0])));
        p.quad_sets().unwrap();
    }

    #[test]
    fn rejects_bad_gain_shape() {
        let mut v = base_json();
        v["controller"]["k"] = serde_json::json!([[1.0, 2.0], [3.0, 4.0]]);
        let err = Problem::from_json_str(&v.to_string()).unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "problem.controller.k"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn rejects_overlapping_initial_and_unsafe() {
        let mut v = base_json();
        v["sets"]["x0"] = serde_json::json!({"type": "ball", "center": [0.0, 1.2], "radius": 0.4});
        let err = Problem::from_json_str(&v.to_string()).unwrap_err();
        match err {
            Error::Config { path, msg } => {
                assert_eq!(path, "problem.sets.x0");
                assert!(msg.contains("witness"));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn hold_requires_input_set() {
        let mut v = base_json();
        v["sets"].as_object_mut().unwrap().remove("u");
        let err = Problem::from_json_str(&v.to_string()).unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "problem.sets.u"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn unbounded_state_set_rejected() {
        let mut v = base_json();
        v["sets"]["x"] =
            serde_json::json!({"type": "quadratic", "matrix": [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]]});
        let err = Problem::from_json_str(&v.to_string()).unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "problem.sets.x"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn polynomial_system_with_params() {
        let v = serde_json::json!({
            "system": {
                "type": "polynomial",
                "state_dim": 1,
                "input_dim": 1,
                "params": {"a": 0.5, "c": 2.0},
                "dynamics": [{"terms": [
                    {"coef": "a * c", "powers": [1, 0]},
                    {"coef": 1.0, "powers": [0, 1]}
                ]}]
            },
            "controller": {"type": "linear", "k": [[0.0]]},
            "sets": {
                "x": {"type": "box", "lo": [-1.0], "hi": [1.0]},
                "x0": {"type": "box", "lo": [-0.1], "hi": [0.1]},
                "xu": {"type": "box", "lo": [0.9], "hi": [0.99]}
            },
            "constraint": {"r": 1, "s": 2},
            "strategy": "zero"
        });
        let p = Problem::from_json_str(&v.to_string()).unwrap();
        let x = DVector::from_vec(vec![0.5]);
        let u = DVector::from_vec(vec![0.25]);
        // x+ = 1.0 * x + u.
        let next = p.model.step(&x, &u);
        assert!((next[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn expression_evaluator() {
        let mut params = BTreeMap::new();
        params.insert("tau".to_string(), 2.0);
        params.insert("alpha1".to_string(), 0.02);
        assert_eq!(eval_param_expr("3 + 4 * 2", &params).unwrap(), 11.0);
        assert_eq!(eval_param_expr("-tau * alpha1", &params).unwrap(), -0.04);
        assert_eq!(eval_param_expr("(1 - tau) / 2", &params).unwrap(), -0.5);
        assert_eq!(eval_param_expr("1.5e-2", &params).unwrap(), 0.015);
        assert!(eval_param_expr("missing + 1", &params).is_err());
        assert!(eval_param_expr("1 +", &params).is_err());
    }
}
