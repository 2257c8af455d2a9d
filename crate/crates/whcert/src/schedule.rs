//! Tunable numeric settings for certification, synthesis, and
//! validation. All fields have defaults, so a settings file may
//! override any subset.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    /// Residual tolerance when re-checking returned certificates.
    pub feas_tol: f64,
    /// Margin added to the initial-set condition so the solved
    /// inequality is strict.
    pub strict_margin: f64,
    /// Margin making the barrier strictly positive on the unsafe set.
    /// Large enough that infeasible condition systems are infeasible
    /// by a gap the solver can certify.
    pub unsafe_margin: f64,
    /// Lower bound on the per-node decrease offsets for implication
    /// variants.
    pub eps_min_implication: f64,
    /// Lower bound on the per-node decrease offsets for decrease
    /// variants. Zero: a cycle with a lossy edge forces the offsets to
    /// zero at any fixed point of the closed loop.
    pub eps_min_decrease: f64,
    /// Bound on the eigenvalues of every certificate block.
    pub p_bound: f64,
    /// Log2 range and resolution of the gamma sweep used for the
    /// bilinear variants.
    pub gamma_log2_min: f64,
    pub gamma_log2_max: f64,
    pub gamma_grid_points: usize,
    /// Rounds of coordinate alternation after the gamma sweep.
    pub alternation_rounds: u32,
    /// Rounds of controller/certificate alternation during synthesis.
    pub synth_rounds: u32,
    /// Floor on the quadratic block of the certificate during the
    /// controller step of synthesis.
    pub p1_floor: f64,
    /// Slack below which an alternation round counts as feasible.
    pub slack_tol: f64,
    /// Sample count and tolerance for certificate cross-validation.
    pub verify_samples: usize,
    pub sample_tol: f64,
    /// Margins for the sum-of-squares certifier.
    pub sos_init_margin: f64,
    pub sos_unsafe_margin: f64,
    /// Maximum total degree accepted when composing dynamics.
    pub degree_cap: usize,
    /// Degree of the polynomial certificate templates.
    pub sos_degree: usize,
    pub seed: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            feas_tol: 1e-7,
            strict_margin: 1e-6,
            unsafe_margin: 1e-3,
            eps_min_implication: 1e-3,
            eps_min_decrease: 0.0,
            p_bound: 100.0,
            gamma_log2_min: -6.0,
            gamma_log2_max: 3.0,
            gamma_grid_points: 20,
            alternation_rounds: 30,
            synth_rounds: 30,
            p1_floor: 1e-2,
            slack_tol: 1e-9,
            verify_samples: 10_000,
            sample_tol: 1e-6,
            sos_init_margin: 1e-6,
            sos_unsafe_margin: 1e-4,
            degree_cap: crate::poly::COMPOSE_DEGREE_CAP,
            sos_degree: 2,
            seed: 0,
        }
    }
}

impl Schedule {
    pub fn gamma_grid(&self) -> Vec<f64> {
        let k = self.gamma_grid_points.max(2);
        (0..k)
            .map(|i| {
                let t = i as f64 / (k - 1) as f64;
                let log2 = self.gamma_log2_min + t * (self.gamma_log2_max - self.gamma_log2_min);
                log2.exp2()
            })
            .collect()
    }

    /// Smallest admissible decrease offset for the given variant family.
    pub fn eps_min(&self, decrease_variant: bool) -> f64 {
        if decrease_variant {
            self.eps_min_decrease
        } else {
            self.eps_min_implication
        }
    }
}
