//! Configuration files, snapshots, run directories and scenario orchestration.

pub mod config;
pub mod output;
pub mod scenario;
pub mod snapshot;

pub use config::{load_config, load_config_with, parse_config, ConfigError, ScenarioConfig, Violation};
pub use output::{Certificate, DiagnosticsRow};
pub use scenario::{simulate, verify_trajectory, ScenarioError, ScenarioSummary, VerifyOptions};
pub use snapshot::{read_snapshot, write_snapshot, Snapshot, SnapshotError};
