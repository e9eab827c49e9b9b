//! Scenario configuration files (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::consensus::{ConsensusConfig, Topology};
use crate::error::{Error, Result};
use crate::io::data::{self, WindSeries};
use crate::io::synth::{self, BUNDLED_COORDINATES, BUNDLED_PRIOR_SCALE, BUNDLED_THRESHOLD_KM};
use crate::map::{FitConfig, HyperOverrides};

/// Where the farm series come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    /// One CSV per farm in a directory, with an optional held-out directory
    /// in the same layout.
    Csv {
        dir: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_dir: Option<PathBuf>,
    },
    /// The bundled ten-farm scenario, `n_points` hours drawn with the run seed.
    Bundled { n_points: usize },
}

/// Evaluation settings shared by the scoring subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    /// Histogram bins of empirical densities.
    pub hist_bins: usize,
    /// Forecast-level bins of the conditional analysis.
    pub forecast_bins: usize,
    /// Held-out hours drawn for synthetic scenarios.
    pub test_points: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            hist_bins: 30,
            forecast_bins: 9,
            test_points: 2400,
        }
    }
}

fn default_components() -> usize {
    20
}

fn default_key_fraction() -> f64 {
    0.3
}

/// Everything one run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Topology file; the bundled sites when absent.
    #[serde(default)]
    pub topology: Option<PathBuf>,
    pub data: DataSource,
    #[serde(default = "default_components")]
    pub components: usize,
    #[serde(default)]
    pub hyper: HyperOverrides,
    #[serde(default)]
    pub consensus: ConsensusConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default = "default_key_fraction")]
    pub key_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    /// Links to remove before fitting, as pairs of farm ids.
    #[serde(default)]
    pub cut_links: Vec<[usize; 2]>,
    #[serde(default)]
    pub eval: EvalSettings,
}

impl ScenarioConfig {
    /// Bundled scenario with `n_points` training hours and its prior scale.
    pub fn bundled(n_points: usize) -> Self {
        ScenarioConfig {
            topology: None,
            data: DataSource::Bundled { n_points },
            components: default_components(),
            hyper: HyperOverrides {
                scale_factor: Some(BUNDLED_PRIOR_SCALE),
                ..HyperOverrides::default()
            },
            consensus: ConsensusConfig::default(),
            fit: FitConfig::default(),
            key_fraction: default_key_fraction(),
            seed: 0,
            cut_links: Vec::new(),
            eval: EvalSettings::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(t) = &mut cfg.topology {
            if t.is_relative() {
                *t = base.join(&*t);
            }
        }
        if let DataSource::Csv { dir, test_dir } = &mut cfg.data {
            for d in std::iter::once(dir).chain(test_dir.as_mut()) {
                if d.is_relative() {
                    *d = base.join(&*d);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(Error::InvalidConfig("components must be positive".into()));
        }
        if !(self.key_fraction > 0.0 && self.key_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "key fraction {} outside (0, 1]",
                self.key_fraction
            )));
        }
        self.fit.validate()?;
        if let Some(t) = &self.topology {
            if !t.is_file() {
                return Err(Error::InvalidConfig(format!(
                    "topology file {} not found",
                    t.display()
                )));
            }
        }
        match &self.data {
            DataSource::Csv { dir, test_dir } => {
                if let Some(d) = std::iter::once(dir).chain(test_dir).find(|d| !d.is_dir()) {
                    return Err(Error::InvalidConfig(format!(
                        "data directory {} not found",
                        d.display()
                    )));
                }
            }
            DataSource::Bundled { n_points: 0 } => {
                return Err(Error::InvalidConfig(
                    "bundled scenario needs n_points > 0".into(),
                ))
            }
            _ => {}
        }
        if self.cut_links.iter().flatten().any(|&id| id == 0) {
            return Err(Error::InvalidConfig("link ids start at 1".into()));
        }
        if self.eval.hist_bins == 0 || self.eval.forecast_bins == 0 || self.eval.test_points < 2 {
            return Err(Error::InvalidConfig(
                "evaluation bins and test size must be positive".into(),
            ));
        }
        Ok(())
    }

    /// The communication graph with the configured links removed.
    pub fn load_topology(&self) -> Result<Topology> {
        let base = match &self.topology {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                Topology::from_toml(&text)?
            }
            None => Topology::build(BUNDLED_COORDINATES.to_vec(), BUNDLED_THRESHOLD_KM)?,
        };
        let cuts: Vec<(usize, usize)> =
            self.cut_links.iter().map(|[a, b]| (a - 1, b - 1)).collect();
        if cuts.is_empty() {
            Ok(base)
        } else {
            base.without_edges(&cuts)
        }
    }

    /// Training series and the number of rows lost to timestamp alignment.
    pub fn load_training(&self) -> Result<(Vec<WindSeries>, usize)> {
        match &self.data {
            DataSource::Csv { dir, .. } => {
                let loaded = data::load_csv(dir)?;
                let dropped = loaded.total_dropped();
                Ok((loaded.series, dropped))
            }
            DataSource::Bundled { n_points } => Ok((
                synth::bundled_scenario()
                    .generate(*n_points, self.seed)?
                    .series,
                0,
            )),
        }
    }

    /// Held-out series: the configured test directory, or for the bundled
    /// scenario a draw from an independent stream.
    pub fn load_test(&self) -> Result<Option<Vec<WindSeries>>> {
        match &self.data {
            DataSource::Csv { test_dir: None, .. } => Ok(None),
            DataSource::Csv {
                test_dir: Some(d), ..
            } => Ok(Some(data::load_csv(d)?.series)),
            DataSource::Bundled { .. } => Ok(Some(
                synth::bundled_scenario()
                    .generate(self.eval.test_points, test_seed(self.seed))?
                    .series,
            )),
        }
    }
}

/// Seed of the held-out draw that accompanies training seed `seed`.
pub fn test_seed(seed: u64) -> u64 {
    seed ^ 0x5eed_7e57_0000_0000
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ScenarioConfig::from_toml("[data]\nkind = \"bundled\"\nn_points = 48\n").unwrap();
        assert_eq!(cfg.components, 20);
        assert_eq!(cfg.key_fraction, 0.3);
        assert_eq!(cfg.eval.forecast_bins, 9);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ScenarioConfig::from_toml(
            "colour = 1\n[data]\nkind = \"bundled\"\nn_points = 4\n"
        )
        .is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ScenarioConfig::bundled(24);
        cfg.cut_links = vec![[1, 2]];
        cfg.fit.tol = 1e-7;
        cfg.consensus.eta = Some(0.05);
        assert_eq!(ScenarioConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn relative_paths_resolve_against_config() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("data")).unwrap();
        let path = dir.path().join("scenario.toml");
        fs::write(
            &path,
            "[data]\nkind = \"csv\"\ndir = \"data\"\ntest_dir = \"data\"\n",
        )
        .unwrap();
        let cfg = ScenarioConfig::load(&path).unwrap();
        assert_eq!(
            cfg.data,
            DataSource::Csv {
                dir: dir.path().join("data"),
                test_dir: Some(dir.path().join("data")),
            }
        );
    }

    #[test]
    fn missing_files_fail_validation() {
        let mut cfg = ScenarioConfig::bundled(24);
        cfg.topology = Some(PathBuf::from("/nonexistent/topology.toml"));
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn bundled_data_and_cuts() {
        let mut cfg = ScenarioConfig::bundled(30);
        cfg.cut_links = vec![[4, 8]];
        let t = cfg.load_topology().unwrap();
        assert!(!t.has_edge(3, 7));
        let (train, dropped) = cfg.load_training().unwrap();
        assert_eq!((train.len(), train[0].len(), dropped), (10, 30, 0));
        let test = cfg.load_test().unwrap().unwrap();
        assert_eq!(test[0].len(), 2400);
        assert_ne!(test[0].observations[0], train[0].observations[0]);
    }
}
