//! District heating networks with stratified storage, decentralized control
//! and trajectory certificates.
//!
//! The crate is organised bottom-up:
//!
//! * [`network`]: two-layer graph and mass-balance flow resolution,
//! * [`plant`]: thermal and volume dynamics of every component,
//! * [`control`]: local control laws and storage outflow policies,
//! * [`integrate`]: RK4 closed-loop simulation with timed events,
//! * [`analysis`]: Lyapunov and bound certificates evaluated on traces,
//! * [`scenario`] and [`trace`]: file formats.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod control;
pub mod integrate;
pub mod network;
pub mod plant;
pub mod scenario;
pub mod trace;

pub use analysis::{run_checks, CertificateRegistry, CertificateReport, Status, Verdict};
pub use integrate::{simulate, simulate_with_policy, SimError};
pub use scenario::{load_scenario, parse_scenario, Scenario, ScenarioError};
pub use trace::{SimulationTrace, TraceError};
