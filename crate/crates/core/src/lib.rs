//! Deterministic discrete-event simulator for opportunistic networks with an
//! SDN-style control layer.
//!
//! Nodes count the data messages their buffers drop, report the counts to
//! controller nodes as metric messages, and controllers answer with
//! directives that retune the replication degree used for newly created
//! messages. Epidemic and fixed-budget spray-and-wait routing are included
//! as baselines.
//!
//! ```
//! use oppsim_core::{run, Scenario, SimParams, StrategyKind};
//! use oppsim_core::trace::parse_contact_trace;
//!
//! let trace = parse_contact_trace("10 CONN 0 1 up\n400 CONN 0 1 down\n").unwrap();
//! let scenario = Scenario::new(trace, StrategyKind::Epidemic, SimParams::default(), 7);
//! let report = run(&scenario).unwrap();
//! assert!(report.delivery_ratio <= 1.0);
//! ```

pub mod config;
pub mod control;
pub mod engine;
pub mod model;
pub mod report;
pub mod routing;
pub mod trace;

pub use config::{parse_config, ConfigError, RunConfig};
pub use control::{ewma, Alpha, ControlParams, ControllerState, UpdateMode};
pub use engine::{run, run_with_log, Scenario, ScenarioError, SimParams, Simulation};
pub use model::{Buffer, Copies, DropPolicy, Message, MessageId, MessageKind, NodeId, SimTime};
pub use report::{compare, quantiles, ComparisonTable, RunReport};
pub use routing::StrategyKind;
pub use trace::{ContactTrace, TraceError};
