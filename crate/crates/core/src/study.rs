//! Scenario-grid harness: simulate replicates, run every estimator at every
//! bandwidth, and aggregate per-cell rows.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{generate_default_stream, CohortError, CohortParams};
use crate::inference::window::window_with_min;
use crate::inference::{estimate_window, rd_points, EstimateSummary, Estimator, InferenceSettings, McmcConfig};
use crate::io::{read_json, write_csv_file, write_json_atomic, DataError};
use crate::numerics::{mix64, RngStream};
use crate::simulate::{ConfoundingLevel, IvStrength, PreparedCohort, SimulationError};

/// A cell whose share of failed replicates exceeds this is invalid.
pub const MAX_FAILURE_SHARE: f64 = 0.2;

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error("invalid study config: {0}")]
    Config(String),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub iv_strengths: Vec<IvStrength>,
    pub confounding_levels: Vec<ConfoundingLevel>,
    pub taus: Vec<f64>,
    pub bandwidths: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    pub min_side: usize,
    pub cohort: CohortParams,
    pub mcmc: McmcConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self::preset("full").expect("known preset")
    }
}

impl StudyConfig {
    pub const PRESETS: [&'static str; 3] = ["smoke", "paper-tables", "full"];

    /// `smoke`: 2 cells × 5 replicates. `paper-tables`: the τ = 2 grid at
    /// h ∈ {0.05, 0.25}. `full`: adds τ ∈ {0.5, 1.09} and h = 0.15.
    pub fn preset(name: &str) -> Result<Self, StudyError> {
        let base = Self {
            iv_strengths: vec![IvStrength::Strong, IvStrength::Weak],
            confounding_levels: ConfoundingLevel::ALL.to_vec(),
            taus: vec![2.0],
            bandwidths: vec![0.05, 0.25],
            replicates: 100,
            seed: 1,
            estimators: Estimator::ALL.to_vec(),
            min_side: crate::inference::window::DEFAULT_MIN_SIDE,
            cohort: CohortParams::default(),
            mcmc: McmcConfig::default(),
        };
        match name {
            "smoke" => Ok(Self {
                iv_strengths: vec![IvStrength::Strong],
                confounding_levels: vec![ConfoundingLevel::ALL[0]],
                replicates: 5,
                ..base
            }),
            "paper-tables" => Ok(base),
            "full" => Ok(Self {
                taus: vec![0.5, 1.09, 2.0],
                bandwidths: vec![0.05, 0.15, 0.25],
                ..base
            }),
            other => Err(StudyError::Config(format!(
                "unknown preset `{other}`; valid: {}",
                Self::PRESETS.join(", ")
            ))),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, StudyError> {
        let cfg: Self = toml::from_str(text).map_err(|e| StudyError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), StudyError> {
        let bad = |m: String| Err(StudyError::Config(m));
        if self.iv_strengths.is_empty() || self.confounding_levels.is_empty() || self.taus.is_empty() || self.bandwidths.is_empty() {
            return bad("grid must have at least one value per factor".into());
        }
        if self.estimators.is_empty() {
            return bad("at least one estimator is required".into());
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if let Some(t) = self.taus.iter().find(|t| !t.is_finite()) {
            return bad(format!("tau must be finite (got {t})"));
        }
        if let Some(h) = self.bandwidths.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
            return bad(format!("bandwidth must be positive (got {h})"));
        }
        self.cohort.validate()?;
        self.mcmc.validate().map_err(|e| StudyError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn settings(&self) -> InferenceSettings {
        InferenceSettings {
            mcmc: self.mcmc.clone(),
            min_side: self.min_side,
            ..InferenceSettings::default()
        }
    }

    /// Cells in output order: iv, confounding, τ, then bandwidth.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for &iv in &self.iv_strengths {
            for &confounding in &self.confounding_levels {
                for &tau in &self.taus {
                    for &bandwidth in &self.bandwidths {
                        out.push(CellKey { iv, confounding, tau, bandwidth });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub iv: IvStrength,
    pub confounding: ConfoundingLevel,
    pub tau: f64,
    pub bandwidth: f64,
}

impl CellKey {
    fn scenario(&self) -> (IvStrength, ConfoundingLevel, u64) {
        (self.iv, self.confounding, self.tau.to_bits())
    }

    /// Seed shared by every bandwidth of a scenario, so all bandwidths see the
    /// same simulated datasets.
    pub fn scenario_seed(&self, base_seed: u64) -> u64 {
        let iv = match self.iv {
            IvStrength::Strong => 1,
            IvStrength::Weak => 2,
        };
        let mut h = mix64(base_seed);
        for part in [iv, u64::from(self.confounding.level()), self.tau.to_bits()] {
            h = mix64(h ^ part);
        }
        h
    }

    pub fn file_stem(&self) -> String {
        format!("{}_c{}_tau{}_h{}", self.iv, self.confounding.level(), self.tau, self.bandwidth)
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}:{}", self.iv, self.confounding.level(), self.tau, self.bandwidth)
    }
}

/// `iv:level:tau:h`, each part either a value or `*`.
#[derive(Clone, Debug, PartialEq)]
pub struct CellFilter {
    iv: Option<IvStrength>,
    level: Option<u8>,
    tau: Option<f64>,
    bandwidth: Option<f64>,
}

impl CellFilter {
    pub fn matches(&self, k: &CellKey) -> bool {
        self.iv.is_none_or(|v| v == k.iv)
            && self.level.is_none_or(|v| v == k.confounding.level())
            && self.tau.is_none_or(|v| v == k.tau)
            && self.bandwidth.is_none_or(|v| v == k.bandwidth)
    }
}

impl FromStr for CellFilter {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 4 {
            return Err(format!("cell filter `{s}` must look like iv:level:tau:h (use * as a wildcard)"));
        }
        fn part<T: FromStr>(p: &str, what: &str) -> Result<Option<T>, String> {
            if p == "*" {
                return Ok(None);
            }
            p.parse().map(Some).map_err(|_| format!("bad {what} `{p}` in cell filter"))
        }
        Ok(Self {
            iv: part(parts[0], "iv strength")?,
            level: part(parts[1], "confounding level")?,
            tau: part(parts[2], "tau")?,
            bandwidth: part(parts[3], "bandwidth")?,
        })
    }
}

/// One estimator's outcome on one replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateEntry {
    pub replicate: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<EstimateSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorCell {
    pub estimator: Estimator,
    pub entries: Vec<ReplicateEntry>,
}

impl EstimatorCell {
    pub fn failures(&self) -> usize {
        self.entries.iter().filter(|e| e.summary.is_none()).count()
    }

    pub fn is_valid(&self) -> bool {
        self.failures() as f64 <= MAX_FAILURE_SHARE * self.entries.len() as f64
    }

    pub fn summaries(&self) -> impl Iterator<Item = &EstimateSummary> {
        self.entries.iter().filter_map(|e| e.summary.as_ref())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub key: CellKey,
    pub scenario_seed: u64,
    pub estimators: Vec<EstimatorCell>,
}

impl CellResult {
    pub fn estimator(&self, e: Estimator) -> Option<&EstimatorCell> {
        self.estimators.iter().find(|c| c.estimator == e)
    }
}

/// Everything that changes a cell's results; resumed artifacts must match it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFingerprint {
    pub base_seed: u64,
    pub replicates: usize,
    pub estimators: Vec<Estimator>,
    pub min_side: usize,
    pub cohort: CohortParams,
    pub mcmc: McmcConfig,
}

#[derive(Serialize, Deserialize)]
struct CellArtifact {
    fingerprint: CellFingerprint,
    cell: CellResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyResults {
    pub base_seed: u64,
    pub replicates: usize,
    pub build: String,
    pub cells: Vec<CellResult>,
}

pub fn build_id() -> String {
    format!("rdlab {}", env!("CARGO_PKG_VERSION"))
}

#[derive(Clone, Debug, Default)]
pub struct StudyOptions {
    /// Worker threads; 0 means one per logical core.
    pub jobs: usize,
    pub cells: Vec<CellFilter>,
    /// Per-cell JSON artifacts go here when set.
    pub artifact_dir: Option<PathBuf>,
    /// Reuse matching artifacts from `artifact_dir` instead of recomputing.
    pub resume: bool,
    /// Write each simulated dataset as CSV here when set.
    pub dataset_dir: Option<PathBuf>,
}

impl StudyOptions {
    fn selected(&self, k: &CellKey) -> bool {
        self.cells.is_empty() || self.cells.iter().any(|f| f.matches(k))
    }
}

fn artifact_path(dir: &Path, key: &CellKey) -> PathBuf {
    dir.join(format!("cell_{}.json", key.file_stem()))
}

fn load_artifact(dir: &Path, key: &CellKey, fp: &CellFingerprint) -> Option<CellResult> {
    let a: CellArtifact = read_json(&artifact_path(dir, key)).ok()?;
    (a.fingerprint == *fp && a.cell.key == *key).then_some(a.cell)
}

type Outcomes = Vec<(Estimator, Result<EstimateSummary, String>)>;

pub fn run_study(config: &StudyConfig, options: &StudyOptions) -> Result<StudyResults, StudyError> {
    config.validate()?;
    let fp = CellFingerprint {
        base_seed: config.seed,
        replicates: config.replicates,
        estimators: config.estimators.clone(),
        min_side: config.min_side,
        cohort: config.cohort.clone(),
        mcmc: config.mcmc.clone(),
    };
    let keys: Vec<CellKey> = config.cells().into_iter().filter(|k| options.selected(k)).collect();
    if keys.is_empty() {
        return Err(StudyError::Config("no cells match the --cells filter".into()));
    }

    let mut done: BTreeMap<usize, CellResult> = BTreeMap::new();
    if options.resume {
        if let Some(dir) = &options.artifact_dir {
            for (i, k) in keys.iter().enumerate() {
                if let Some(c) = load_artifact(dir, k, &fp) {
                    done.insert(i, c);
                }
            }
        }
    }

    // Scenarios (iv, level, τ) with at least one pending bandwidth.
    let mut scenarios: Vec<(CellKey, Vec<usize>)> = Vec::new();
    for (i, k) in keys.iter().enumerate() {
        if done.contains_key(&i) {
            continue;
        }
        match scenarios.iter_mut().find(|(s, _)| s.scenario() == k.scenario()) {
            Some((_, idx)) => idx.push(i),
            None => scenarios.push((*k, vec![i])),
        }
    }

    if !scenarios.is_empty() {
        let base = generate_default_stream(&config.cohort)?;
        let mut prepared: BTreeMap<u8, PreparedCohort> = BTreeMap::new();
        for (k, _) in &scenarios {
            if let std::collections::btree_map::Entry::Vacant(slot) = prepared.entry(k.confounding.level()) {
                slot.insert(PreparedCohort::new(&base, k.confounding)?);
            }
        }
        if let Some(dir) = &options.dataset_dir {
            std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        }
        if let Some(dir) = &options.artifact_dir {
            std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        }

        let units: Vec<(usize, u64)> = (0..scenarios.len())
            .flat_map(|s| (0..config.replicates as u64).map(move |r| (s, r)))
            .collect();
        let settings = config.settings();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.jobs)
            .build()
            .map_err(|e| StudyError::Pool(e.to_string()))?;
        let results: Vec<Result<Vec<Outcomes>, StudyError>> = pool.install(|| {
            units
                .par_iter()
                .map(|&(s, r)| {
                    let (key, idx) = &scenarios[s];
                    let bandwidths: Vec<f64> = idx.iter().map(|&i| keys[i].bandwidth).collect();
                    run_unit(key, r, &bandwidths, config, &settings, &prepared[&key.confounding.level()], options)
                })
                .collect()
        });

        let mut cells: BTreeMap<usize, CellResult> = BTreeMap::new();
        for ((s, r), outcome) in units.iter().zip(results) {
            let (key, idx) = &scenarios[*s];
            let per_bw = outcome?;
            for (&i, outcomes) in idx.iter().zip(per_bw) {
                let cell = cells.entry(i).or_insert_with(|| CellResult {
                    key: keys[i],
                    scenario_seed: key.scenario_seed(config.seed),
                    estimators: config
                        .estimators
                        .iter()
                        .map(|&e| EstimatorCell { estimator: e, entries: Vec::new() })
                        .collect(),
                });
                for (e, res) in outcomes {
                    let slot = cell.estimators.iter_mut().find(|c| c.estimator == e).expect("requested estimator");
                    let (summary, error) = match res {
                        Ok(s) => (Some(s), None),
                        Err(m) => (None, Some(m)),
                    };
                    slot.entries.push(ReplicateEntry { replicate: *r, summary, error });
                }
            }
        }
        for (i, cell) in cells {
            if let Some(dir) = &options.artifact_dir {
                let artifact = CellArtifact { fingerprint: fp.clone(), cell };
                write_json_atomic(&artifact_path(dir, &keys[i]), &artifact)?;
                done.insert(i, artifact.cell);
            } else {
                done.insert(i, cell);
            }
        }
    }

    Ok(StudyResults {
        base_seed: config.seed,
        replicates: config.replicates,
        build: build_id(),
        cells: done.into_values().collect(),
    })
}

/// Simulate one replicate of a scenario and estimate at each bandwidth.
/// Simulation and estimation failures become per-estimator errors.
fn run_unit(
    key: &CellKey,
    replicate: u64,
    bandwidths: &[f64],
    config: &StudyConfig,
    settings: &InferenceSettings,
    prepared: &PreparedCohort,
    options: &StudyOptions,
) -> Result<Vec<Outcomes>, StudyError> {
    let seed = key.scenario_seed(config.seed);
    let fail_all = |msg: String| {
        let row: Outcomes = config.estimators.iter().map(|&e| (e, Err(msg.clone()))).collect();
        vec![row; bandwidths.len()]
    };
    let data = match prepared.simulate(key.iv, key.tau, seed, replicate) {
        Ok(d) => d,
        Err(e) => return Ok(fail_all(format!("simulation: {e}"))),
    };
    if let Some(dir) = &options.dataset_dir {
        let stem = format!("{}_c{}_tau{}", key.iv, key.confounding.level(), key.tau);
        let path = dir.join(format!("{stem}_r{replicate:03}.csv"));
        write_csv_file(&path, &data.records)?;
    }
    let points = rd_points(&data.records);
    let stream = RngStream::for_replicate(seed, replicate, 0);
    Ok(bandwidths
        .iter()
        .map(|&h| match window_with_min(&points, h, settings.min_side) {
            Ok(w) => estimate_window(&w, &config.estimators, settings, &stream, false).results,
            Err(e) => config.estimators.iter().map(|&e2| (e2, Err(e.to_string()))).collect(),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub iv: IvStrength,
    pub confounding: u8,
    pub tau: f64,
    pub bandwidth: f64,
    pub estimator: Estimator,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub sd_points: Option<f64>,
    pub frac_unstable: f64,
    pub n_ok: usize,
}

/// Mean point and mean interval endpoints over successful replicates, plus
/// the sd of points and the unstable share. Invalid cells produce no row.
pub fn aggregate(results: &StudyResults) -> Vec<TableRow> {
    let mut rows = Vec::new();
    for cell in &results.cells {
        for ec in &cell.estimators {
            if !ec.is_valid() {
                continue;
            }
            if let Some(row) = aggregate_cell(&cell.key, ec) {
                rows.push(row);
            }
        }
    }
    rows
}

pub fn aggregate_cell(key: &CellKey, ec: &EstimatorCell) -> Option<TableRow> {
    // Sum in replicate order so the result does not depend on entry order.
    let mut ok: Vec<(u64, &EstimateSummary)> = ec
        .entries
        .iter()
        .filter_map(|e| e.summary.as_ref().map(|s| (e.replicate, s)))
        .collect();
    if ok.is_empty() {
        return None;
    }
    ok.sort_by_key(|(r, _)| *r);
    let n = ok.len() as f64;
    // Shifted by the first value, which keeps identical replicates exact.
    let mean_of = |f: fn(&EstimateSummary) -> f64| {
        let shift = f(ok[0].1);
        shift + ok.iter().map(|(_, s)| f(s) - shift).sum::<f64>() / n
    };
    let point = mean_of(|s| s.point);
    let sd_points = (ok.len() > 1).then(|| {
        let ss: f64 = ok.iter().map(|(_, s)| (s.point - point).powi(2)).sum();
        (ss / (n - 1.0)).sqrt()
    });
    Some(TableRow {
        iv: key.iv,
        confounding: key.confounding.level(),
        tau: key.tau,
        bandwidth: key.bandwidth,
        estimator: ec.estimator,
        point,
        lower: mean_of(|s| s.lower),
        upper: mean_of(|s| s.upper),
        sd_points,
        frac_unstable: ok.iter().filter(|(_, s)| s.unstable).count() as f64 / n,
        n_ok: ok.len(),
    })
}

pub fn write_table(path: &Path, rows: &[TableRow]) -> Result<(), DataError> {
    write_csv_file(path, rows)
}
