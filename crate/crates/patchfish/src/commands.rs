//! The simulate, estimate and montecarlo commands as library functions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use patchfish_core::econ::critical_value;
use patchfish_core::panel::{build_panel, BuildOptions, CellMap, CostModel, MarketPanel};
use patchfish_core::patch_model::PatchGraph;
use patchfish_core::pipeline::{compare_with_truth, estimate, recovery_score, Estimation, ParameterRecovery, RecoveryScore};
use patchfish_core::simulator::{run, run_expected, Scenario, SimOutput};
use patchfish_core::stage1::BetaSource;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{in_module, CliError, Result};
use crate::ingest;
use crate::report;

/// Tolerances of the recovery score: absolute for `d_hk`, relative for `K_k`.
pub const D_TOLERANCE: f64 = 0.1;
pub const K_TOLERANCE: f64 = 0.15;

pub struct DataFiles {
    pub trips: PathBuf,
    pub roster: PathBuf,
    pub prices: PathBuf,
    pub distances: PathBuf,
    pub truth: PathBuf,
    pub annual_totals: PathBuf,
}

impl DataFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            trips: dir.join("trips.csv"),
            roster: dir.join("roster.csv"),
            prices: dir.join("prices.csv"),
            distances: dir.join("distances.csv"),
            truth: dir.join("truth.csv"),
            annual_totals: dir.join("annual_totals.csv"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSummary {
    pub records: usize,
    pub periods: usize,
    pub depleted: bool,
    pub collapsed: bool,
}

impl SimulateSummary {
    pub fn line(&self) -> String {
        format!(
            "simulated {} records over {} months; depletion: {}; collapse: {}",
            self.records, self.periods, self.depleted, self.collapsed
        )
    }
}

pub fn true_biomass(out: &SimOutput, n_patches: usize) -> CellMap<f64> {
    let mut m = CellMap::new();
    for t in 0..out.months() {
        for k in 0..n_patches {
            m.insert((out.period(t), k), out.biomass[t][k]);
        }
    }
    m
}

/// Writes trip records, roster, prices, distances, the true biomass
/// trajectory and its annual totals to the data directory.
pub fn simulate(cfg: &RunConfig) -> Result<SimulateSummary> {
    if cfg.scenario.noiseless {
        return Err(CliError::config(
            "noiseless runs have fractional choice counts and no trip records; use montecarlo",
        ));
    }
    let s = cfg.scenario()?;
    let out = run(&s).map_err(in_module("simulator"))?;
    let dir = &cfg.paths.data_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let files = DataFiles::in_dir(dir);
    ingest::write_trips(&files.trips, &out.records)?;
    ingest::write_roster(&files.roster, &s.roster())?;
    ingest::write_prices(&files.prices, &s.prices())?;
    ingest::write_distances(&files.distances, s.graph.port_distances())?;
    ingest::write_biomass(&files.truth, &true_biomass(&out, s.n_patches()))?;
    ingest::write_annual_totals(&files.annual_totals, &out.annual_totals())?;
    Ok(SimulateSummary {
        records: out.records.len(),
        periods: out.months(),
        depleted: out.any_depletion(),
        collapsed: out.collapsed,
    })
}

/// Reads the data directory into a market panel.
pub fn load_panel(cfg: &RunConfig) -> Result<(MarketPanel, PatchGraph, Vec<String>)> {
    let e = &cfg.estimation;
    let files = DataFiles::in_dir(&cfg.paths.data_dir);
    let n_patches = e.grid_rows * e.grid_cols;
    let mut warnings = Vec::new();
    let distances = ingest::read_distances(&files.distances, n_patches)?;
    let graph = PatchGraph::grid(e.grid_rows, e.grid_cols, distances)
        .map_err(|err| CliError::core("ingest", err).with_file(&files.distances))?;
    let mut take = |parsed_issues: usize, path: &Path| {
        if parsed_issues > 0 {
            warnings.push(format!("{}: skipped {parsed_issues} malformed row(s)", path.display()));
        }
    };
    let trips = ingest::parse_trips(&files.trips, e.strict)?;
    take(trips.issues.len(), &files.trips);
    let roster = ingest::parse_roster(&files.roster, e.strict)?;
    take(roster.issues.len(), &files.roster);
    let prices = ingest::parse_prices(&files.prices, e.strict)?;
    take(prices.issues.len(), &files.prices);
    let cost = CostModel { vessel_fuel_rate: e.vessel_fuel_rate, expected_catch_per_trip: e.expected_catch_per_trip };
    let panel = build_panel(
        &trips.rows,
        &roster.rows,
        &prices.rows,
        cost,
        &graph,
        CellMap::new(),
        BuildOptions { pseudo_count: e.pseudo_count },
    )
    .map_err(in_module("ingest"))?;
    Ok((panel, graph, warnings))
}

fn beta_source(cfg: &RunConfig) -> Result<BetaSource> {
    match cfg.estimation.beta {
        Some(b) => Ok(BetaSource::Fixed(b)),
        None => Ok(BetaSource::Calibrate(ingest::read_annual_totals(&cfg.calibration_file())?)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub markets: usize,
    pub flagged_markets: usize,
    pub zero_share_cells: usize,
    pub zero_outside_markets: usize,
    pub demand_rows: usize,
    pub capture_rows: usize,
    pub stage1_sigma_projected: bool,
    pub stage2_sigma_projected: bool,
    pub beta: f64,
    pub calibration_objective: Option<f64>,
    pub migration_rows_dropped: usize,
    pub capacity_scale: f64,
    pub fallback_patches: Vec<usize>,
    pub unidentified_patches: Vec<usize>,
    pub warnings: Vec<String>,
}

fn diagnostics(panel: &MarketPanel, est: &Estimation, warnings: Vec<String>) -> Diagnostics {
    let s = &est.structure;
    Diagnostics {
        markets: panel.diagnostics.markets,
        flagged_markets: panel.diagnostics.flagged_markets,
        zero_share_cells: panel.diagnostics.zero_share_cells,
        zero_outside_markets: panel.diagnostics.zero_outside_markets,
        demand_rows: est.stage1.inversion.rows.len(),
        capture_rows: est.stage1.capture_cells,
        stage1_sigma_projected: est.stage1.estimates.sigma_projected,
        stage2_sigma_projected: est.reduced.sigma_projected,
        beta: est.biomass.beta,
        calibration_objective: match &est.biomass.calibration {
            patchfish_core::stage1::Calibration::Annual { objective, .. } => Some(*objective),
            patchfish_core::stage1::Calibration::Fixed => None,
        },
        migration_rows_dropped: est.migration_rows.iter().map(|r| r.dropped.len()).sum(),
        capacity_scale: s.scale,
        fallback_patches: s.fallback_patches().iter().map(|k| k + 1).collect(),
        unidentified_patches: s.capacity.iter().filter(|c| c.chosen.is_none()).map(|c| c.patch + 1).collect(),
        warnings,
    }
}

pub fn recovery_csv(rows: &[ParameterRecovery]) -> String {
    let mut out = String::from("parameter,truth,estimate,std_error,error\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{},{:?}",
            r.name,
            r.truth,
            r.estimate,
            if r.se.is_nan() { String::new() } else { format!("{:?}", r.se) },
            r.error()
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct EstimateOutcome {
    pub estimation: Estimation,
    pub diagnostics: Diagnostics,
    /// Present when the config asks for a comparison with its scenario.
    pub score: Option<RecoveryScore>,
    pub files: Vec<PathBuf>,
}

impl EstimateOutcome {
    pub fn line(&self) -> String {
        let s = &self.estimation.structure;
        let mut line = format!(
            "estimated beta {:.4}, r {:.5}, K_total {:.1}; fallback patches {:?}",
            self.diagnostics.beta, s.r.value, s.k_total, self.diagnostics.fallback_patches
        );
        if let Some(score) = &self.score {
            let _ = write!(
                line,
                "; d within {D_TOLERANCE}: {}/{}, K within {:.0}%: {}/{}",
                score.d_within,
                score.d_total,
                K_TOLERANCE * 100.0,
                score.k_within,
                score.k_total
            );
        }
        line
    }
}

/// Runs both stages on the data directory and writes every report.
pub fn estimate_files(cfg: &RunConfig) -> Result<EstimateOutcome> {
    let (panel, graph, warnings) = load_panel(cfg)?;
    let beta = beta_source(cfg)?;
    let est = estimate(&panel, &graph, &beta, &cfg.estimation_options()).map_err(in_module("estimate"))?;
    let diag = diagnostics(&panel, &est, warnings);
    let out = &cfg.paths.out_dir;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut files = Vec::new();
    let mut put = |name: &str, text: &str| -> Result<()> {
        let path = out.join(name);
        ingest::write_text(&path, text)?;
        files.push(path);
        Ok(())
    };
    let n = graph.n_patches();
    let (t2, eq1) = report::stage1_table(&est.stage1);
    put("stage1_parameters.csv", &t2.csv)?;
    put("stage1_parameters.txt", &t2.text)?;
    put("stage1_equations.csv", &eq1)?;
    let (t3, eq2) = report::reduced_table(&est.reduced, n);
    put("stage2_reduced.csv", &t3.csv)?;
    put("stage2_reduced.txt", &t3.text)?;
    put("stage2_equations.csv", &eq2)?;
    let t4 = report::capture_table(&est);
    put("capture.csv", &t4.csv)?;
    put("capture.txt", &t4.text)?;
    let t5 = report::structural_table(&est.structure);
    put("structural.csv", &t5.csv)?;
    put("structural.txt", &t5.text)?;
    let t6 = report::capacity_report(&est.structure);
    put("capacity_table.csv", &t6.csv)?;
    put("capacity_table.txt", &t6.text)?;
    put("capacity.csv", &report::capacity_detail_csv(&est.structure))?;
    let json = serde_json::to_string_pretty(&diag).expect("diagnostics serialize");
    put("diagnostics.json", &(json + "\n"))?;
    let mut score = None;
    if cfg.estimation.compare_truth {
        let s = cfg.scenario()?;
        put("recovery.csv", &recovery_csv(&compare_with_truth(&s, &est)))?;
        score = Some(recovery_score(&s, &est.structure, D_TOLERANCE, K_TOLERANCE));
    }
    let biomass_path = out.join("biomass.csv");
    ingest::write_biomass(&biomass_path, &est.biomass.biomass)?;
    files.push(biomass_path);
    Ok(EstimateOutcome { estimation: est, diagnostics: diag, score, files })
}

/// One simulated and estimated replication, entirely in memory.
pub fn replicate(scenario: &Scenario, noiseless: bool, cfg: &RunConfig) -> patchfish_core::Result<(Estimation, SimOutput)> {
    let out = if noiseless { run_expected(scenario)? } else { run(scenario)? };
    let panel = out.panel(
        scenario,
        BuildOptions { pseudo_count: cfg.estimation.pseudo_count },
    )?;
    let beta = match cfg.estimation.beta {
        Some(b) => BetaSource::Fixed(b),
        None => BetaSource::Calibrate(out.annual_totals()),
    };
    let est = estimate(&panel, &scenario.graph, &beta, &cfg.estimation_options())?;
    Ok((est, out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub seed: u64,
    pub result: std::result::Result<(Vec<ParameterRecovery>, RecoveryScore), String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSummary {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub rmse: f64,
    /// Share of replications whose 90 % interval covers the truth; NaN when
    /// the parameter has no standard error.
    pub coverage90: f64,
    pub n_ok: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub replications: Vec<Replication>,
    pub parameters: Vec<ParameterSummary>,
}

impl MonteCarloReport {
    pub fn n_ok(&self) -> usize {
        self.replications.iter().filter(|r| r.result.is_ok()).count()
    }

    /// Replications meeting both recovery thresholds at `share`.
    pub fn n_passing(&self, share: f64) -> usize {
        self.replications
            .iter()
            .filter(|r| matches!(&r.result, Ok((_, s)) if s.d_fraction() >= share && s.k_fraction() >= share))
            .count()
    }

    pub fn calibration_csv(&self) -> String {
        let mut out = String::from("parameter,truth,mean,bias,rmse,coverage90,n_ok\n");
        let num = |v: f64| if v.is_nan() { String::new() } else { format!("{v:?}") };
        for p in &self.parameters {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                p.name,
                num(p.truth),
                num(p.mean),
                num(p.bias),
                num(p.rmse),
                num(p.coverage90),
                p.n_ok
            );
        }
        out
    }

    pub fn replications_csv(&self) -> String {
        let mut out = String::from("seed,status,d_within,d_total,k_within,k_total,error\n");
        for r in &self.replications {
            match &r.result {
                Ok((_, s)) => {
                    let _ = writeln!(out, "{},ok,{},{},{},{},", r.seed, s.d_within, s.d_total, s.k_within, s.k_total);
                }
                Err(e) => {
                    let _ = writeln!(out, "{},failed,,,,,\"{}\"", r.seed, e.replace('"', "'"));
                }
            }
        }
        out
    }

    pub fn line(&self) -> String {
        format!(
            "montecarlo: {}/{} replications succeeded; {} met both recovery thresholds at 80%",
            self.n_ok(),
            self.replications.len(),
            self.n_passing(0.8)
        )
    }
}

fn summarize(replications: &[Replication]) -> Result<Vec<ParameterSummary>> {
    let z90 = critical_value(0.90).map_err(in_module("montecarlo"))?;
    let mut order: Vec<String> = Vec::new();
    let mut by_name: BTreeMap<String, Vec<&ParameterRecovery>> = BTreeMap::new();
    for r in replications {
        if let Ok((rows, _)) = &r.result {
            for p in rows {
                if !by_name.contains_key(&p.name) {
                    order.push(p.name.clone());
                }
                by_name.entry(p.name.clone()).or_default().push(p);
            }
        }
    }
    Ok(order
        .into_iter()
        .map(|name| {
            let rows = &by_name[&name];
            let finite: Vec<&&ParameterRecovery> = rows.iter().filter(|p| p.estimate.is_finite()).collect();
            let n = finite.len();
            let truth = rows[0].truth;
            let mean = finite.iter().map(|p| p.estimate).sum::<f64>() / n as f64;
            let rmse = (finite.iter().map(|p| p.error().powi(2)).sum::<f64>() / n as f64).sqrt();
            let with_se: Vec<&&&ParameterRecovery> = finite.iter().filter(|p| p.se.is_finite()).collect();
            let coverage90 = if with_se.is_empty() {
                f64::NAN
            } else {
                with_se.iter().filter(|p| p.error().abs() <= z90 * p.se).count() as f64 / with_se.len() as f64
            };
            ParameterSummary { name, truth, mean, bias: mean - truth, rmse, coverage90, n_ok: n }
        })
        .collect())
}

/// Replications over seeds `1..=reps` on a worker pool; results are in seed
/// order regardless of scheduling.
pub fn montecarlo(cfg: &RunConfig) -> Result<MonteCarloReport> {
    let base = cfg.scenario()?;
    let threads = if cfg.montecarlo.threads == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        cfg.montecarlo.threads
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::config(format!("worker pool: {e}")))?;
    let noiseless = cfg.scenario.noiseless;
    let replications: Vec<Replication> = pool.install(|| {
        (1..=cfg.montecarlo.reps as u64)
            .into_par_iter()
            .map(|seed| {
                let mut s = base.clone();
                s.seed = seed;
                let result = replicate(&s, noiseless, cfg)
                    .map(|(est, _)| {
                        let score = recovery_score(&s, &est.structure, D_TOLERANCE, K_TOLERANCE);
                        (compare_with_truth(&s, &est), score)
                    })
                    .map_err(|e| e.to_string());
                Replication { seed, result }
            })
            .collect()
    });
    if replications.iter().all(|r| r.result.is_err()) {
        let first = replications[0].result.as_ref().err().cloned().unwrap_or_default();
        return Err(CliError::new(
            crate::error::Class::Numerical,
            "montecarlo",
            format!("all {} replications failed; first: {first}", replications.len()),
        ));
    }
    let parameters = summarize(&replications)?;
    Ok(MonteCarloReport { replications, parameters })
}

/// Runs the Monte Carlo and writes `calibration.csv` and `replications.csv`.
pub fn montecarlo_files(cfg: &RunConfig) -> Result<MonteCarloReport> {
    let report = montecarlo(cfg)?;
    let out = &cfg.paths.out_dir;
    ingest::write_text(&out.join("calibration.csv"), &report.calibration_csv())?;
    ingest::write_text(&out.join("replications.csv"), &report.replications_csv())?;
    Ok(report)
}
