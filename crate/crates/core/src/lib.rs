//! Neural-network model predictive control for a polymer electrolyte fuel
//! cell stack.
//!
//! The pipeline mirrors how the controller is built and exercised:
//!
//! 1. [`plant`] is a lumped-parameter stack model (anode/cathode gas balances
//!    and a static polarization curve) integrated with RK4.
//! 2. [`datagen`] draws Latin hypercube samples of the plant inputs and
//!    records one-step state transitions.
//! 3. [`nn`] trains a `(5, 16, 32, 8, 2)` ReLU network on those transitions.
//! 4. [`autodiff`] linearizes the network with forward-mode dual numbers.
//! 5. [`ssm`] assembles the augmented incremental state-space model.
//! 6. [`mpc`] condenses the receding-horizon problem into a dense QP with
//!    soft pressure constraints, solved by [`qp`].
//! 7. [`harness`] runs closed-loop scenarios, writes traces, compares
//!    controllers and renders plots.

pub mod autodiff;
pub mod datagen;
pub mod harness;
pub mod mpc;
pub mod nn;
pub mod plant;
pub mod qp;
pub mod ssm;

pub use autodiff::{jacobian, Dual, Jacobian};
pub use datagen::{collect, lhs_sample, Dataset, Record, SampleBounds};
pub use mpc::{build_qp, ControllerState, MpcConfig, StepDecision};
pub use nn::{Network, Scaler, TrainConfig};
pub use plant::{Measurement, PlantInputs, PlantParams, PlantState};
pub use qp::{QpProblem, QpSettings, QpSolution, QpStatus};
pub use ssm::StateSpaceModel;
