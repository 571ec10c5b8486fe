//! Non-iterative co-simulation with flexible-order estimated outputs,
//! error-driven asynchronous macro-steps and optional C1 input smoothing.
//!
//! The building blocks are usable on their own: [`poly`] fits the small
//! polynomials exchanged between subsystems, [`order_select`] picks their
//! degree, [`stepper`] sizes the next macro-step and [`scheduler`] turns the
//! per-subsystem proposals into a consistent communication plan. The
//! [`orchestrator`] ties them together; [`harness`] adds configuration files,
//! CSV output and the comparison matrix.

pub mod coupling;
pub mod error;
pub mod harness;
pub mod input_builder;
pub mod models;
pub mod orchestrator;
pub mod order_select;
pub mod poly;
pub mod scheduler;
pub mod stepper;
pub mod subsystem;

pub use coupling::{classify, CouplingGraph, Port, SampleHistory, TopologyTag};
pub use error::{Error, Result};
pub use models::{build_car, build_two_mass, monolithic_reference, CarParams, CoSimModel, TwoMassParams};
pub use orchestrator::{run_f3ornits, run_jacobi, MasterOptions, RunTrace};
pub use order_select::CalibrationMode;
pub use poly::Polynomial;
pub use stepper::{ErrorNorm, Tolerances};
pub use subsystem::{Capabilities, Dynamics, MicroSolver, SubsystemSpec};
