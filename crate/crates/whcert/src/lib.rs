//! Safety certification for discrete-time control loops that drop
//! actuation packets under a weakly-hard constraint.
//!
//! The toolkit builds the minimal graph of admissible loss patterns,
//! searches for a graph-indexed barrier function by semidefinite or
//! sum-of-squares programming, and cross-checks any certificate it
//! returns by independent sampling and adversarial simulation.

pub mod cert;
pub mod conic;
pub mod error;
pub mod graph;
pub mod lmi;
pub mod poly;
pub mod problem;
pub mod schedule;
pub mod sets;
pub mod simulate;
pub mod sos;
pub mod systems;
pub mod validate;
pub mod wh;

pub use cert::{Cert, CertReport, CertStatus, GbfVariant};
pub use error::Error;
pub use graph::WhGraph;
pub use problem::Problem;
pub use schedule::Schedule;
pub use systems::Strategy;
pub use wh::{LossWord, WhConstraint};
