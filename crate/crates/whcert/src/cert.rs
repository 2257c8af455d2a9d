//! Certificate data model: what a successful certification run emits,
//! serialized with deterministic field ordering so reruns produce
//! byte-identical JSON.

use crate::error::Error;
use crate::graph::GraphJson;
use crate::systems::Strategy;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

/// The four barrier condition families. `Gbf` is the recursive
/// implication form, `OneGbf` drops the recursion, `OneDGbf` further
/// replaces implications by unconditional decrease, and `DGbf` keeps
/// the recursion but uses decrease form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GbfVariant {
    #[serde(rename = "gbf")]
    Gbf,
    #[serde(rename = "1gbf")]
    OneGbf,
    #[serde(rename = "1dgbf")]
    OneDGbf,
    #[serde(rename = "dgbf")]
    DGbf,
}

impl GbfVariant {
    pub const ALL: [GbfVariant; 4] =
        [GbfVariant::Gbf, GbfVariant::OneGbf, GbfVariant::OneDGbf, GbfVariant::DGbf];

    /// Decrease-form conditions (no logical implications).
    pub fn is_decrease(&self) -> bool {
        matches!(self, GbfVariant::OneDGbf | GbfVariant::DGbf)
    }

    /// One-step conditions (no recursive composition of the open map).
    pub fn is_one_step(&self) -> bool {
        matches!(self, GbfVariant::OneGbf | GbfVariant::OneDGbf)
    }

    /// One-step variants under hold work on the augmented state (x, u).
    pub fn augmented(&self, strategy: Strategy) -> bool {
        self.is_one_step() && strategy == Strategy::Hold
    }
}

impl fmt::Display for GbfVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            GbfVariant::Gbf => "gbf",
            GbfVariant::OneGbf => "1gbf",
            GbfVariant::OneDGbf => "1dgbf",
            GbfVariant::DGbf => "dgbf",
        };
        f.write_str(s)
    }
}

impl FromStr for GbfVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gbf" => Ok(GbfVariant::Gbf),
            "1gbf" => Ok(GbfVariant::OneGbf),
            "1dgbf" => Ok(GbfVariant::OneDGbf),
            "dgbf" => Ok(GbfVariant::DGbf),
            other => Err(Error::UnsupportedVariant(other.to_string())),
        }
    }
}

/// Quadratic certificate: one symmetric matrix per node over the
/// homogenized (and possibly input-augmented) state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuadCert {
    pub variant: GbfVariant,
    pub strategy: Strategy,
    pub graph: GraphJson,
    /// State dimension n of the plant.
    pub state_dim: usize,
    /// Input dimension carried by augmented certificates, 0 otherwise.
    pub aug_input_dim: usize,
    pub eps: BTreeMap<String, f64>,
    pub p: BTreeMap<String, Vec<Vec<f64>>>,
    pub multipliers: BTreeMap<String, f64>,
    pub residuals: BTreeMap<String, f64>,
}

impl QuadCert {
    /// Side length of each P block: n + 1, or n + m + 1 when augmented.
    pub fn block_dim(&self) -> usize {
        self.state_dim + self.aug_input_dim + 1
    }

    pub fn p_matrix(&self, node: &str) -> Result<DMatrix<f64>, Error> {
        let rows = self.p.get(node).ok_or_else(|| Error::UnknownNode(node.to_string()))?;
        let d = self.block_dim();
        if rows.len() != d || rows.iter().any(|r| r.len() != d) {
            return Err(Error::CertMismatch(format!(
                "barrier block for {node} is not {d}x{d}"
            )));
        }
        Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn eps_of(&self, node: &str) -> Result<f64, Error> {
        self.eps.get(node).copied().ok_or_else(|| Error::UnknownNode(node.to_string()))
    }

    /// Evaluates the barrier of `node` at plant state `x` (and held
    /// input `u` for augmented certificates).
    pub fn eval(&self, node: &str, x: &DVector<f64>, u: Option<&DVector<f64>>) -> Result<f64, Error> {
        let p = self.p_matrix(node)?;
        let d = self.block_dim();
        if x.len() != self.state_dim {
            return Err(Error::CertMismatch(format!(
                "state dimension {} does not match certificate ({})",
                x.len(),
                self.state_dim
            )));
        }
        let mut z = DVector::zeros(d);
        z.rows_mut(0, self.state_dim).copy_from(x);
        if self.aug_input_dim > 0 {
            let u = u.ok_or_else(|| {
                Error::CertMismatch("augmented certificate needs a held input".into())
            })?;
            if u.len() != self.aug_input_dim {
                return Err(Error::CertMismatch(format!(
                    "held input dimension {} does not match certificate ({})",
                    u.len(),
                    self.aug_input_dim
                )));
            }
            z.rows_mut(self.state_dim, self.aug_input_dim).copy_from(u);
        }
        z[d - 1] = 1.0;
        Ok((z.transpose() * p * z)[(0, 0)])
    }

    pub fn from_blocks(
        variant: GbfVariant,
        strategy: Strategy,
        graph: GraphJson,
        state_dim: usize,
        aug_input_dim: usize,
        node_names: &[String],
        blocks: &[DMatrix<f64>],
        eps: &[f64],
    ) -> QuadCert {
        let mut p = BTreeMap::new();
        let mut em = BTreeMap::new();
        for (i, name) in node_names.iter().enumerate() {
            let b = &blocks[i];
            let rows: Vec<Vec<f64>> =
                (0..b.nrows()).map(|r| (0..b.ncols()).map(|c| b[(r, c)]).collect()).collect();
            p.insert(name.clone(), rows);
            em.insert(name.clone(), eps[i]);
        }
        QuadCert {
            variant,
            strategy,
            graph,
            state_dim,
            aug_input_dim,
            eps: em,
            p,
            multipliers: BTreeMap::new(),
            residuals: BTreeMap::new(),
        }
    }
}

/// Polynomial in serialized form: exponent rows aligned with
/// coefficient entries, graded-lex order.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PolyJson {
    pub monomials: Vec<Vec<u32>>,
    pub coeffs: Vec<f64>,
}

impl PolyJson {
    pub fn from_poly(p: &crate::poly::Poly64) -> PolyJson {
        let mut monomials = Vec::new();
        let mut coeffs = Vec::new();
        for (m, c) in p.terms() {
            monomials.push(m.0.clone());
            coeffs.push(*c);
        }
        PolyJson { monomials, coeffs }
    }

    pub fn to_poly(&self, nvars: usize) -> Result<crate::poly::Poly64, Error> {
        if self.monomials.len() != self.coeffs.len() {
            return Err(Error::CertMismatch(
                "monomial and coefficient lists differ in length".into(),
            ));
        }
        let mut p = crate::poly::Poly::zero(nvars);
        for (m, c) in self.monomials.iter().zip(&self.coeffs) {
            if m.len() != nvars {
                return Err(Error::CertMismatch(format!(
                    "monomial arity {} does not match {nvars} variables",
                    m.len()
                )));
            }
            p.add_term(crate::poly::Mono(m.clone()), *c);
        }
        Ok(p)
    }
}

/// Gram data for one sum-of-squares condition, kept so the identity
/// target = Σ λ_j g_j + zᵀ Q z can be re-checked from the certificate
/// alone.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SosBlock {
    /// Monomial basis z of the Gram form.
    pub basis: Vec<Vec<u32>>,
    pub gram: Vec<Vec<f64>>,
    /// One multiplier polynomial per set inequality, paired with its
    /// own Gram data for the multiplier's SOS proof.
    pub multipliers: Vec<SosMultiplier>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SosMultiplier {
    pub label: String,
    pub poly: PolyJson,
    pub basis: Vec<Vec<u32>>,
    pub gram: Vec<Vec<f64>>,
}

/// Polynomial certificate from the sum-of-squares pipeline.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolyCert {
    pub variant: GbfVariant,
    pub strategy: Strategy,
    pub graph: GraphJson,
    pub state_dim: usize,
    pub aug_input_dim: usize,
    /// Degree of the barrier templates.
    pub degree: usize,
    pub eps: BTreeMap<String, f64>,
    pub psi: BTreeMap<String, PolyJson>,
    pub sos: BTreeMap<String, SosBlock>,
    pub residuals: BTreeMap<String, f64>,
}

impl PolyCert {
    pub fn nvars(&self) -> usize {
        self.state_dim + self.aug_input_dim
    }

    pub fn psi_poly(&self, node: &str) -> Result<crate::poly::Poly64, Error> {
        self.psi
            .get(node)
            .ok_or_else(|| Error::UnknownNode(node.to_string()))?
            .to_poly(self.nvars())
    }

    pub fn eps_of(&self, node: &str) -> Result<f64, Error> {
        self.eps.get(node).copied().ok_or_else(|| Error::UnknownNode(node.to_string()))
    }

    pub fn eval(&self, node: &str, x: &DVector<f64>, u: Option<&DVector<f64>>) -> Result<f64, Error> {
        let p = self.psi_poly(node)?;
        let mut point: Vec<f64> = x.iter().copied().collect();
        if self.aug_input_dim > 0 {
            let u = u.ok_or_else(|| {
                Error::CertMismatch("augmented certificate needs a held input".into())
            })?;
            point.extend(u.iter().copied());
        }
        if point.len() != self.nvars() {
            return Err(Error::CertMismatch(format!(
                "evaluation point has {} coordinates, certificate expects {}",
                point.len(),
                self.nvars()
            )));
        }
        Ok(p.eval(&point))
    }
}

/// Either certificate kind, as stored on disk.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cert {
    Quad(QuadCert),
    Poly(PolyCert),
}

impl Cert {
    pub fn variant(&self) -> GbfVariant {
        match self {
            Cert::Quad(c) => c.variant,
            Cert::Poly(c) => c.variant,
        }
    }

    pub fn strategy(&self) -> Strategy {
        match self {
            Cert::Quad(c) => c.strategy,
            Cert::Poly(c) => c.strategy,
        }
    }

    pub fn graph(&self) -> &GraphJson {
        match self {
            Cert::Quad(c) => &c.graph,
            Cert::Poly(c) => &c.graph,
        }
    }

    pub fn eval(&self, node: &str, x: &DVector<f64>, u: Option<&DVector<f64>>) -> Result<f64, Error> {
        match self {
            Cert::Quad(c) => c.eval(node, x, u),
            Cert::Poly(c) => c.eval(node, x, u),
        }
    }

    pub fn eps_of(&self, node: &str) -> Result<f64, Error> {
        match self {
            Cert::Quad(c) => c.eps_of(node),
            Cert::Poly(c) => c.eps_of(node),
        }
    }

    pub fn augmented(&self) -> bool {
        match self {
            Cert::Quad(c) => c.aug_input_dim > 0,
            Cert::Poly(c) => c.aug_input_dim > 0,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Cert, Error> {
        serde_json::from_str(text).map_err(|e| Error::Config {
            path: "certificate".into(),
            msg: e.to_string(),
        })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificates serialize")
    }
}

/// Verification outcome plus the evidence behind it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertReport {
    pub status: CertStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cert: Option<Cert>,
    /// Worst conic residual over all conditions, when a solve ran.
    pub residual: f64,
    pub solver_status: String,
    pub wall_ms: u128,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CertStatus {
    Certified,
    Infeasible,
    Unknown,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::WhGraph;
    use crate::wh::WhConstraint;

    fn sample_cert() -> QuadCert {
        let g = WhGraph::build(WhConstraint::new(2, 4).unwrap());
        let names: Vec<String> = (0..g.node_count()).map(|i| g.node_name(i)).collect();
        let blocks: Vec<DMatrix<f64>> = (0..g.node_count())
            .map(|i| DMatrix::identity(3, 3) * (i as f64 + 1.0))
            .collect();
        let eps = vec![0.5; g.node_count()];
        QuadCert::from_blocks(
            GbfVariant::Gbf,
            Strategy::Hold,
            g.to_json(),
            2,
            0,
            &names,
            &blocks,
            &eps,
        )
    }

    #[test]
    fn variant_strings_round_trip() {
        for v in GbfVariant::ALL {
            let s = v.to_string();
            assert_eq!(s.parse::<GbfVariant>().unwrap(), v);
            let j = serde_json::to_string(&v).unwrap();
            assert_eq!(j, format!("\"{s}\""));
        }
        assert!("2gbf".parse::<GbfVariant>().is_err());
    }

    #[test]
    fn quad_eval_matches_form() {
        let cert = sample_cert();
        let x = DVector::from_vec(vec![1.0, 2.0]);
        // P_v2 = 2 I, so the value is 2 (1 + 4 + 1).
        let v = cert.eval("v2", &x, None).unwrap();
        assert!((v - 12.0).abs() < 1e-12);
        assert!(cert.eval("v9", &x, None).is_err());
    }

    #[test]
    fn serialization_is_deterministic() {
        let cert = Cert::Quad(sample_cert());
        let a = cert.to_json_string();
        let b = Cert::from_json_str(&a).unwrap().to_json_string();
        assert_eq!(a, b);
    }

    #[test]
    fn poly_json_round_trip() {
        let mut p = crate::poly::Poly::zero(2);
        p.add_term(crate::poly::Mono(vec![2, 0]), 1.5);
        p.add_term(crate::poly::Mono(vec![0, 1]), -0.25);
        let j = PolyJson::from_poly(&p);
        assert_eq!(j.to_poly(2).unwrap(), p);
    }

    #[test]
    fn augmented_eval_requires_input() {
        let mut cert = sample_cert();
        cert.aug_input_dim = 1;
        cert.p = BTreeMap::new();
        cert.p.insert("v1".into(), vec![vec![0.0; 4]; 4]);
        let x = DVector::from_vec(vec![0.0, 0.0]);
        assert!(cert.eval("v1", &x, None).is_err());
        let u = DVector::from_vec(vec![0.0]);
        assert!(cert.eval("v1", &x, Some(&u)).is_ok());
    }
}
