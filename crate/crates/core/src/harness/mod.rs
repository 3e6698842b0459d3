//! Seeded Monte-Carlo campaigns over noise levels and device speeds.

pub mod config;
pub mod output;
pub mod run;
pub mod scenario;

pub use config::{CampaignConfig, Method};
pub use output::{emit_results, read_results, summary_table};
pub use run::{run_campaign, run_one, run_speed_sweep, CellResult, MethodStats, RunRecord};
pub use scenario::{cube_anchors, sample_scenario};
