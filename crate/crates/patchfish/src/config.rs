//! Run configuration: one TOML file shared by every command. Command-line
//! flags override file values.

use std::path::{Path, PathBuf};

use patchfish_core::patch_model::{DispersionMatrix, RowSumConvention};
use patchfish_core::pipeline::EstimationOptions;
use patchfish_core::simulator::{desk_scenario, Scenario};
use patchfish_core::stage1::{Stage1Options, YearPooling};
use patchfish_core::stage2::StructuralMapping;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const LEVELS: [f64; 3] = [0.80, 0.90, 0.95];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub paths: PathsConfig,
    pub estimation: EstimationConfig,
    pub montecarlo: MonteCarloConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            scenario: ScenarioConfig::default(),
            paths: PathsConfig::default(),
            estimation: EstimationConfig::default(),
            montecarlo: MonteCarloConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowSum {
    ConservativeZero,
    PaperOne,
    Unconstrained,
}

impl From<RowSum> for RowSumConvention {
    fn from(r: RowSum) -> Self {
        match r {
            RowSum::ConservativeZero => RowSumConvention::ConservativeZero,
            RowSum::PaperOne => RowSumConvention::PaperOne,
            RowSum::Unconstrained => RowSumConvention::Unconstrained,
        }
    }
}

/// The desk scenario with optional overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub horizon: usize,
    /// Vessels per port, one entry per port.
    pub vessels: Vec<u32>,
    pub row_sum: RowSum,
    /// Expected-value choices instead of sampled ones.
    pub noiseless: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self { horizon: 48, vessels: vec![30; 4], row_sum: RowSum::ConservativeZero, noiseless: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Simulator output and estimation input.
    pub data_dir: PathBuf,
    /// Reports.
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { data_dir: "data".into(), out_dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    /// Two-sided level of the capacity fallback.
    pub level: f64,
    pub paper_mapping: bool,
    /// Add observed harvest to the second-stage response.
    pub harvest: bool,
    /// Fixed `β`; when absent, `β` is calibrated to annual totals.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Annual totals file; defaults to `annual_totals.csv` in the data directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration_file: Option<PathBuf>,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub vessel_fuel_rate: f64,
    pub expected_catch_per_trip: f64,
    /// Laplace-style count added to every alternative before computing shares.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pseudo_count: Option<f64>,
    pub pool_price: bool,
    pub pool_effort: bool,
    /// Abort on the first malformed input row instead of skipping and reporting.
    pub strict: bool,
    /// Also write a comparison against the configured scenario's truth.
    pub compare_truth: bool,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        let s = desk_scenario(2);
        Self {
            level: 0.80,
            paper_mapping: false,
            harvest: true,
            beta: None,
            calibration_file: None,
            grid_rows: 4,
            grid_cols: 2,
            vessel_fuel_rate: s.cost.vessel_fuel_rate,
            expected_catch_per_trip: s.cost.expected_catch_per_trip,
            pseudo_count: None,
            pool_price: false,
            pool_effort: false,
            strict: true,
            compare_truth: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub reps: usize,
    /// Worker threads; 0 uses every available processor.
    pub threads: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self { reps: 100, threads: 0 }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| e.with_file(path))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.estimation;
        if !LEVELS.iter().any(|l| (l - e.level).abs() < 1e-12) {
            return Err(CliError::config(format!("estimation.level {} must be one of 0.80, 0.90, 0.95", e.level)));
        }
        if self.scenario.horizon < 2 {
            return Err(CliError::config("scenario.horizon must be >= 2"));
        }
        if self.scenario.vessels.len() != 4 {
            return Err(CliError::config(format!(
                "scenario.vessels needs one entry per port (4), got {}",
                self.scenario.vessels.len()
            )));
        }
        if self.scenario.vessels.iter().all(|v| *v == 0) {
            return Err(CliError::config("scenario.vessels: at least one port needs a vessel"));
        }
        if e.grid_rows * e.grid_cols < 2 {
            return Err(CliError::config("estimation grid needs at least two patches"));
        }
        if let Some(b) = e.beta {
            if !(b > 0.0 && b.is_finite()) {
                return Err(CliError::config(format!("estimation.beta {b} must be > 0")));
            }
        }
        if let Some(c) = e.pseudo_count {
            if !(c > 0.0 && c.is_finite()) {
                return Err(CliError::config(format!("estimation.pseudo_count {c} must be > 0")));
            }
        }
        if !(e.vessel_fuel_rate >= 0.0 && e.expected_catch_per_trip > 0.0) {
            return Err(CliError::config("cost model needs fuel rate >= 0 and expected catch > 0"));
        }
        if self.montecarlo.reps < 2 {
            return Err(CliError::config("montecarlo.reps must be >= 2"));
        }
        Ok(())
    }

    /// The simulated truth implied by the scenario section.
    pub fn scenario(&self) -> Result<Scenario> {
        let mut s = desk_scenario(self.scenario.horizon);
        s.seed = self.seed;
        for (port, v) in s.ports.iter_mut().zip(&self.scenario.vessels) {
            port.vessels = *v;
        }
        let convention = RowSumConvention::from(self.scenario.row_sum);
        if convention != s.dispersion.convention() {
            let n = s.n_patches();
            let off: Vec<((usize, usize), f64)> = s
                .graph
                .edges()
                .into_iter()
                .flat_map(|(h, k)| [((h, k), s.dispersion.rate(h, k)), ((k, h), s.dispersion.rate(k, h))])
                .collect();
            let diagonal: Vec<f64> = (0..n).map(|k| s.dispersion.rate(k, k)).collect();
            s.dispersion = DispersionMatrix::from_rates(&s.graph, &off, convention, Some(&diagonal))
                .map_err(|e| CliError::config(e.to_string()))?;
        }
        s.validate().map_err(|e| CliError::config(e.to_string()))?;
        Ok(s)
    }

    pub fn estimation_options(&self) -> EstimationOptions {
        let e = &self.estimation;
        EstimationOptions {
            stage1: Stage1Options {
                pooling: YearPooling { price: e.pool_price, effort: e.pool_effort },
                ..Stage1Options::default()
            },
            level: e.level,
            mapping: if e.paper_mapping { StructuralMapping::Paper } else { StructuralMapping::Expansion },
            harvest: e.harvest,
        }
    }

    pub fn calibration_file(&self) -> PathBuf {
        self.estimation.calibration_file.clone().unwrap_or_else(|| self.paths.data_dir.join("annual_totals.csv"))
    }
}
