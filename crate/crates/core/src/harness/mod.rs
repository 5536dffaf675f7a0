//! Scenario configuration, metrics, AP-count sweeps and CSV output.

mod config;
mod metrics;
mod sweep;

pub use config::{
    default_ap_layout, default_ue_layout, parse_config, ApConfig, CodebookConfig, ConfigError, LpGridConfig,
    ScenarioConfig,
};
pub use metrics::{compute_metrics, drop_rate_pct, ApMetrics, MetricsReport};
pub use sweep::{
    emit_csv, mean_std, read_csv, run_sweep, simulate, write_csv, PreparedSubset, SweepRow, SweepSpec, CSV_HEADER,
};
