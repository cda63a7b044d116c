//! Packet-level simulation of a lossless RoCEv2 fabric with PFC and
//! reactive congestion marking.

pub mod config;
pub mod host;
pub mod kernel;
pub mod link;
pub mod packet;
pub mod sim;
pub mod stats;
pub mod switch;

pub use config::{parse_scenario, render_scenario, ConfigError, Scenario};
pub use kernel::SimTime;
pub use sim::{run_scenario, RunOutput, SimError, SimOptions, Simulation};
pub use stats::{Report, ReportFormat};
