//! Built-in scenarios, configuration files, sweeps and result tables.

pub mod config;
pub mod results;
pub mod sweep;
pub mod topology;

pub use config::{parse_config, ScenarioConfig, DEFAULT_BERS, DEFAULT_SEEDS};
pub use results::{
    baselines_in, gain_table, read_runs_csv, render_gain_table, summarize, write_gains_csv, write_runs_csv,
    write_summary_csv, GainRow, RunRow, SummaryRow,
};
pub use sweep::{cells, run_sweep, Cell, CellResult, SweepResult};
pub use topology::{build_topology, check_eight_node, default_flows, TopologyKind};
