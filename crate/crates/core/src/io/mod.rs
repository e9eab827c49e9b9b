//! Data files, synthetic scenarios and run configuration.

pub mod config;
pub mod data;
pub mod synth;

pub use config::{DataSource, EvalSettings, ScenarioConfig};
pub use data::{aggregate, load_csv, write_csv, LoadedSeries, WindSeries};
pub use synth::{bundled_scenario, generate_synthetic, RegimeScenario, SyntheticData};
