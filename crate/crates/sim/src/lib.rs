//! Deterministic multi-client simulator.
//!
//! Scripted bots connect to a real [`blocks_server::Hub`] through a simulated
//! network with latency, jitter, message loss and forced reconnects, all on a
//! virtual clock. A run yields the server's event log, every bot's final
//! replica, and the script's own counters to check analytics against.

pub mod behavior;
pub mod fuzz;
pub mod run;
pub mod scenario;
pub mod truth;

pub use behavior::{Action, Behavior, BotView, Registry};
pub use run::{run_scenario, run_with, BotOutcome, NetStats, SimError, SimOutcome};
pub use scenario::{CollabMode, Scenario, ScenarioInvalid, WorldMode};
pub use truth::GroundTruth;
