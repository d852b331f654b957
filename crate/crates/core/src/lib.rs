//! Heterogeneous urban traffic networks with signalized and all-way-stop
//! intersections: a mixed-rate simulator and a MILP signal controller.

pub mod control;
pub mod error;
pub mod export;
pub mod fcfs;
pub mod micro;
pub mod milp;
pub mod network;
pub mod plan;
pub mod scenario;
pub mod signal;
pub mod sim;
pub mod study;

pub use error::{Error, Result};
pub use network::{Level, NetworkModel};
pub use plan::SignalPlan;
pub use scenario::{parse_scenario, validate_network, ScenarioConfig};
pub use sim::{run_scenario, total_delay, SimState, Simulator, Trajectory};
