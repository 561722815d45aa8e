//! End-to-end runs: load, estimate, bootstrap, diagnose and write every
//! artifact to an output directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_csv, ColumnConfig, LoadReport, Sample};
use crate::diagnostics::{bootstrap_tolerances, diagnose, support_report, CellView, DiagnosticConfig, DiagnosticReport};
use crate::error::{MteError, Result};
use crate::inference::{bootstrap_pipeline, PipelineBootstrap};
use crate::output::{self, CoefficientTable, Summary};
use crate::pipeline::{run_pipeline, Bandwidths, EstimationConfig, Estimates};
use crate::propensity::{fit_propensity, PropensityFit};
use crate::separate::CurveGrid;
use crate::simulate::{generate, oracle_params, DgpSpec, OracleMte, OracleParams};

/// How the diagnostics run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSettings {
    pub enabled: bool,
    /// Values of the discrete covariates (as written in the input file)
    /// selecting the cell to examine; defaults to the largest cell.
    pub cell: Option<Vec<String>>,
    pub checks: DiagnosticConfig,
    /// Replace the fixed tolerances with twice the bootstrap standard
    /// errors when the bootstrap is on.
    pub bootstrap_tolerance: bool,
    /// In the diagnose command, fail with exit code 4 when no nonlinearity
    /// condition is detected.
    pub strict: bool,
}

impl Default for DiagnoseSettings {
    fn default() -> Self {
        Self { enabled: true, cell: None, checks: DiagnosticConfig::default(), bootstrap_tolerance: true, strict: false }
    }
}

/// Everything a run needs. Read from JSON; command-line flags override
/// individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: PathBuf,
    pub columns: ColumnConfig,
    #[serde(default)]
    pub estimation: EstimationConfig,
    /// Bootstrap replications; 0 disables the bootstrap.
    #[serde(default)]
    pub bootstrap: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub diagnostics: DiagnoseSettings,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_seed() -> u64 {
    1
}

fn default_level() -> f64 {
    0.9
}

fn default_output() -> PathBuf {
    PathBuf::from("mte-output")
}

fn default_bins() -> usize {
    20
}

impl RunConfig {
    pub fn new(input: impl Into<PathBuf>, columns: ColumnConfig, output: impl Into<PathBuf>) -> Self {
        Self {
            input: input.into(),
            columns,
            estimation: EstimationConfig::default(),
            bootstrap: 0,
            seed: default_seed(),
            level: default_level(),
            output: output.into(),
            diagnostics: DiagnoseSettings::default(),
            histogram_bins: default_bins(),
            threads: None,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| MteError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.bootstrap == 1 {
            return Err(MteError::Config("bootstrap needs at least 2 replications (0 disables it)".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(MteError::Config(format!("confidence level must lie in (0, 1), got {}", self.level)));
        }
        if self.histogram_bins == 0 {
            return Err(MteError::Config("histogram_bins must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(MteError::Config("threads must be positive".into()));
        }
        let c = &self.diagnostics.checks;
        if !(c.tolerance > 0.0 && c.slope_tolerance > 0.0 && c.stencil > 0.0 && c.stencil < 0.5) {
            return Err(MteError::Config("diagnostic tolerances and stencil must be positive".into()));
        }
        if !(0.0..0.5).contains(&c.margin) || c.grid_points < 3 {
            return Err(MteError::Config("diagnostic margin must lie in [0, 0.5) with at least 3 grid points".into()));
        }
        Ok(())
    }
}

/// Rows sorted by `(d, y, covariates)`, so results do not depend on the
/// order of the input file.
pub fn canonical_order(sample: &Sample) -> Result<Sample> {
    let mut rows: Vec<usize> = (0..sample.len()).collect();
    rows.sort_by(|&a, &b| {
        sample.d()[a]
            .cmp(&sample.d()[b])
            .then(sample.y()[a].total_cmp(&sample.y()[b]))
            .then_with(|| {
                let (ca, cb) = (sample.cont_row(a), sample.cont_row(b));
                ca.iter().zip(cb).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
            })
            .then_with(|| sample.disc_row(a).cmp(sample.disc_row(b)))
    });
    sample.select_rows(&rows)
}

fn load(config: &RunConfig) -> Result<(Sample, LoadReport)> {
    let (sample, report) = load_csv(&config.input, &config.columns)?;
    log::info!("loaded {} rows ({} dropped for missing values)", sample.len(), report.rows_dropped);
    Ok((canonical_order(&sample)?, report))
}

fn cell_view(sample: &Sample, report: &LoadReport, cell: &Option<Vec<String>>) -> Result<CellView> {
    match cell {
        None => CellView::largest(sample),
        Some(labels) => {
            if labels.len() != report.discrete_levels.len() {
                return Err(MteError::Config(format!(
                    "diagnostic cell has {} values for {} discrete covariates",
                    labels.len(),
                    report.discrete_levels.len()
                )));
            }
            let key = labels
                .iter()
                .zip(&report.discrete_levels)
                .map(|(label, levels)| {
                    levels
                        .iter()
                        .position(|l| l == label)
                        .map(|p| p as i64)
                        .ok_or_else(|| MteError::Config(format!("discrete value {label:?} does not occur")))
                })
                .collect::<Result<Vec<_>>>()?;
            CellView::with_key(sample, &key)
        }
    }
}

fn run_diagnostics(
    sample: &Sample,
    load_report: &LoadReport,
    fit: &PropensityFit,
    config: &RunConfig,
    controls: Option<(&CurveGrid, &CurveGrid)>,
) -> Result<DiagnosticReport> {
    let settings = &config.diagnostics;
    let view = cell_view(sample, load_report, &settings.cell)?;
    let mut checks = settings.checks.clone();
    let mut notes = Vec::new();
    if config.bootstrap >= 2 && settings.bootstrap_tolerance && sample.n_cont() > 0 {
        match bootstrap_tolerances(sample, &config.estimation.propensity, &view, 0, &checks, config.bootstrap, config.seed)
        {
            Ok((tol, slope_tol)) => {
                checks.tolerance = tol;
                checks.slope_tolerance = slope_tol;
                notes.push(format!("tolerances from {} bootstrap replications", config.bootstrap));
            }
            Err(e) => notes.push(format!("bootstrap tolerances unavailable ({e}); fixed tolerances used")),
        }
    }
    let mut report = diagnose(fit, &view, &checks, controls)?;
    report.notes.extend(notes);
    report.support = Some(support_report(fit, config.histogram_bins));
    Ok(report)
}

fn write_diagnostics(dir: &Path, report: &DiagnosticReport) -> Result<()> {
    output::write_json(&dir.join("diagnostics.json"), report)?;
    std::fs::write(dir.join("diagnostics.txt"), output::diagnostics_text(report))?;
    output::write_nl1_curve(&dir.join("nl1_curve.csv"), report)
}

#[derive(Debug, Clone, Serialize)]
struct Software {
    name: &'static str,
    version: &'static str,
}

const SOFTWARE: Software = Software { name: env!("CARGO_PKG_NAME"), version: env!("CARGO_PKG_VERSION") };

#[derive(Debug, Clone, Serialize)]
struct Trimming {
    lower_fraction: f64,
    upper_fraction: f64,
    trimmed_lower: usize,
    trimmed_upper: usize,
    kept: usize,
    support: (f64, f64),
    dropped_cells: Vec<Vec<i64>>,
}

#[derive(Debug, Clone, Serialize)]
struct BootstrapMeta {
    requested: usize,
    succeeded: usize,
    failed_replications: Vec<usize>,
    level: f64,
    seed: u64,
}

#[derive(Debug, Clone, Serialize)]
struct FlaggedPoints {
    g0: Vec<f64>,
    g1: Vec<f64>,
    liv: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct Metadata<'a> {
    software: Software,
    command: &'static str,
    config: &'a RunConfig,
    input: &'a LoadReport,
    n: usize,
    n_treated: usize,
    bandwidths: &'a Bandwidths,
    trimming: Trimming,
    grid: [f64; 2],
    grid_points: usize,
    profile: &'a [f64],
    pi_x: f64,
    separate_extrapolated: Option<bool>,
    liv_extrapolated: Option<bool>,
    flagged_points: FlaggedPoints,
    bootstrap: Option<BootstrapMeta>,
    diagnostics_error: Option<String>,
    threads: usize,
    files: Vec<String>,
}

fn flagged(grid: &CurveGrid) -> Vec<f64> {
    grid.p.iter().zip(&grid.flagged).filter(|(_, &f)| f).map(|(&p, _)| p).collect()
}

/// Results of [`estimate`], besides the files it writes.
#[derive(Debug, Clone)]
pub struct EstimateRun {
    pub sample: Sample,
    pub estimates: Estimates,
    pub bootstrap: Option<PipelineBootstrap>,
    pub diagnostics: Option<DiagnosticReport>,
    pub files: Vec<PathBuf>,
}

/// The estimate command: every artifact of a full run.
pub fn estimate(config: &RunConfig) -> Result<EstimateRun> {
    config.validate()?;
    let (sample, load_report) = load(config)?;
    let est = run_pipeline(&sample, &config.estimation)?;
    let boot = if config.bootstrap >= 2 {
        log::info!("bootstrap with {} replications", config.bootstrap);
        Some(bootstrap_pipeline(&sample, &config.estimation, &est, config.bootstrap, config.seed, config.level)?)
    } else {
        None
    };
    let (diagnostics, diagnostics_error) = if config.diagnostics.enabled {
        let controls = est.separate.as_ref().map(|s| (&s.untreated.grid, &s.treated.grid));
        match run_diagnostics(&sample, &load_report, &est.propensity, config, controls) {
            Ok(r) => (Some(r), None),
            Err(e) => {
                log::warn!("diagnostics skipped: {e}");
                (None, Some(e.to_string()))
            }
        }
    } else {
        (None, None)
    };

    let dir = &config.output;
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut add = |name: &str| {
        let p = dir.join(name);
        files.push(p.clone());
        p
    };
    let b = boot.as_ref();
    let block = |name: &str| b.and_then(|b| b.block(name));

    for (liv, stem) in [(false, "coefficients"), (true, "coefficients_liv")] {
        if let Some(table) = CoefficientTable::new(&est, b, liv) {
            std::fs::write(add(&format!("{stem}.txt")), table.to_text())?;
            table.write_csv(&add(&format!("{stem}.csv")))?;
        }
    }
    if let Some(sep) = &est.separate {
        output::write_mte_csv(&add("mte.csv"), &sep.mte, block("mte").as_ref())?;
        output::write_g_curves(&add("g_curves.csv"), &sep.untreated.grid, &sep.treated.grid)?;
        output::write_structural(
            &add("structural.csv"),
            &sep.structural,
            block("structural_untreated").as_ref(),
            block("structural_treated").as_ref(),
        )?;
        output::write_response(&add("response.csv"), &sep.response, block("response_outcome").as_ref())?;
    }
    if let Some(liv) = &est.liv {
        let name = if est.separate.is_some() { "mte_liv.csv" } else { "mte.csv" };
        output::write_mte_csv(&add(name), &liv.mte, block("liv_mte").as_ref())?;
        output::write_liv_curves(&add("liv_curves.csv"), &liv.fit.curve)?;
    }
    if let (Some(sep), Some(liv)) = (&est.separate, &est.liv) {
        output::write_mte_comparison(&add("mte_comparison.csv"), &sep.mte, &liv.mte)?;
    }
    output::write_histogram(&add("score_histogram.csv"), &est.propensity.histogram(config.histogram_bins))?;
    output::write_json(&add("summary.json"), &Summary::new(&est, b))?;
    if let Some(report) = &diagnostics {
        write_diagnostics(dir, report)?;
        for name in ["diagnostics.json", "diagnostics.txt", "nl1_curve.csv"] {
            add(name);
        }
    }
    let metadata_path = add("metadata.json");

    let (trimmed_lower, trimmed_upper) = est.propensity.trimmed_counts();
    let metadata = Metadata {
        software: SOFTWARE,
        command: "estimate",
        config,
        input: &load_report,
        n: sample.len(),
        n_treated: sample.count_treated(),
        bandwidths: &est.bandwidths,
        trimming: Trimming {
            lower_fraction: config.estimation.trim_lower,
            upper_fraction: config.estimation.trim_upper,
            trimmed_lower,
            trimmed_upper,
            kept: est.propensity.kept_rows().len(),
            support: est.propensity.support(),
            dropped_cells: est.propensity.dropped_cells().to_vec(),
        },
        grid: [est.grid[0], est.grid[est.grid.len() - 1]],
        grid_points: est.grid.len(),
        profile: &est.profile,
        pi_x: est.pi_x,
        separate_extrapolated: est.separate.as_ref().map(|s| s.summary.extrapolated),
        liv_extrapolated: est.liv.as_ref().map(|l| l.summary.extrapolated),
        flagged_points: FlaggedPoints {
            g0: est.separate.as_ref().map(|s| flagged(&s.untreated.grid)).unwrap_or_default(),
            g1: est.separate.as_ref().map(|s| flagged(&s.treated.grid)).unwrap_or_default(),
            liv: est.liv.as_ref().map(|l| flagged(&l.fit.curve)).unwrap_or_default(),
        },
        bootstrap: b.map(|b| BootstrapMeta {
            requested: b.result.requested,
            succeeded: b.result.replications(),
            failed_replications: b.result.failed.clone(),
            level: b.result.level,
            seed: config.seed,
        }),
        diagnostics_error,
        threads: rayon::current_num_threads(),
        files: files.iter().filter_map(|p| p.file_name()).map(|f| f.to_string_lossy().into_owned()).collect(),
    };
    output::write_json(&metadata_path, &metadata)?;
    Ok(EstimateRun { sample, estimates: est, bootstrap: boot, diagnostics, files })
}

/// The diagnose command: first step, trimming and identification checks.
pub fn diagnose_only(config: &RunConfig) -> Result<DiagnosticReport> {
    config.validate()?;
    config.estimation.validate(config.columns.continuous.len() + config.columns.discrete.len())?;
    let (sample, load_report) = load(config)?;
    sample.require_both_arms()?;
    let fit = fit_propensity(&sample, &config.estimation.propensity)?
        .trim(config.estimation.trim_lower, config.estimation.trim_upper)?;
    let report = run_diagnostics(&sample, &load_report, &fit, config, None)?;
    std::fs::create_dir_all(&config.output)?;
    write_diagnostics(&config.output, &report)?;
    output::write_histogram(&config.output.join("score_histogram.csv"), &fit.histogram(config.histogram_bins))?;
    Ok(report)
}

/// Contents of `oracle.json`.
#[derive(Debug, Clone, Serialize)]
pub struct OracleFile {
    pub spec: DgpSpec,
    pub oracle: OracleMte,
    pub names: Vec<String>,
    /// Design means of the generated covariates.
    pub mean_x: Vec<f64>,
    /// Mean of `π(X)` over the sample.
    pub mean_propensity: f64,
    /// True parameters at `mean_x` with `π(x) = mean_propensity` and
    /// LATE bounds 0.25 and 0.75.
    pub params_at_mean: Option<OracleParams>,
    /// True MTE at `mean_x` on a 99-point grid of `v`.
    pub mte_at_mean: Vec<[f64; 2]>,
}

/// The simulate command: writes `sample.csv` and `oracle.json` to `dir`.
pub fn simulate(spec: &DgpSpec, dir: &Path) -> Result<(Sample, OracleFile)> {
    let (sample, oracle) = generate(spec)?;
    let mean_x = sample.design_means();
    let mean_propensity = (0..sample.len())
        .map(|i| spec.propensity(sample.cont_row(i), sample.disc_row(i)))
        .sum::<f64>()
        / sample.len() as f64;
    let params_at_mean = oracle_params(spec, &mean_x, mean_propensity, 0.25, 0.75).ok();
    let mte_at_mean = (1..=99).map(|i| i as f64 / 100.0).map(|v| [v, oracle.mte(&mean_x, v)]).collect();
    let file = OracleFile {
        spec: spec.clone(),
        oracle,
        names: sample.names().to_vec(),
        mean_x,
        mean_propensity,
        params_at_mean,
        mte_at_mean,
    };
    std::fs::create_dir_all(dir)?;
    output::write_sample(&dir.join("sample.csv"), &sample)?;
    output::write_json(&dir.join("oracle.json"), &file)?;
    Ok((sample, file))
}

/// Column mapping of a file written by [`simulate`].
pub fn simulated_columns(spec: &DgpSpec) -> ColumnConfig {
    let cont: Vec<String> = (1..=spec.continuous.len()).map(|k| format!("xc{k}")).collect();
    let disc: Vec<String> = (1..=spec.discrete.len()).map(|k| format!("xd{k}")).collect();
    ColumnConfig {
        continuous: cont,
        discrete: disc,
        ..ColumnConfig::new("y", "d", &[], &[])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_ignores_input_order() {
        let (sample, _) = generate(&DgpSpec::preset("separable", 50, 2).unwrap()).unwrap();
        let reversed: Vec<usize> = (0..50).rev().collect();
        let a = canonical_order(&sample).unwrap();
        let b = canonical_order(&sample.select_rows(&reversed).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn run_config_defaults() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"input":"a.csv","columns":{"outcome":"y","treatment":"d"}}"#).unwrap();
        assert_eq!(cfg.bootstrap, 0);
        assert_eq!(cfg.level, 0.9);
        assert!(cfg.diagnostics.enabled);
        cfg.validate().unwrap();
        let bad = RunConfig { bootstrap: 1, ..cfg };
        assert_eq!(bad.validate().unwrap_err().exit_code(), 2);
    }
}
