//! Tables and plot-ready CSV files.
//!
//! Every CSV has a header row and one record per grid point or bin; the
//! column schemas are listed in `docs/formats.md`. Numbers are written with
//! twelve significant digits, empty fields mean "not available".

use std::fmt::Write as _;
use std::fs::File;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::data::Sample;
use crate::diagnostics::DiagnosticReport;
use crate::effects::{CausalSummary, MteCurve, ResponseCurves};
use crate::error::Result;
use crate::inference::{BlockSummary, PipelineBootstrap};
use crate::pipeline::{Estimates, StructuralCurves};
use crate::propensity::HistogramBin;
use crate::separate::CurveGrid;

/// Shortest representation of `v` rounded to twelve significant digits.
pub fn num(v: f64) -> String {
    if !v.is_finite() {
        return "NaN".into();
    }
    let rounded: f64 = format!("{v:.11e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Significance stars from a two-sided normal test of `estimate = 0`.
pub fn stars(estimate: f64, se: f64) -> &'static str {
    if !(se > 0.0) {
        return "";
    }
    let t = (estimate / se).abs();
    if t >= 2.576 {
        "***"
    } else if t >= 1.96 {
        "**"
    } else if t >= 1.645 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Entry {
    pub estimate: f64,
    pub se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub label: String,
    pub treated: Option<Entry>,
    pub untreated: Option<Entry>,
    pub difference: Option<Entry>,
}

/// Coefficients per arm and their difference, followed by ATE, TT and TUT
/// in the difference column.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientTable {
    pub title: String,
    pub rows: Vec<TableRow>,
    /// Kept observations: treated, untreated, total.
    pub observations: [usize; 3],
    pub replications: Option<usize>,
}

const EFFECT_LABELS: [&str; 3] = ["ATE", "TT", "TUT"];

impl CoefficientTable {
    /// Table of the separate procedure (`liv = false`) or the LIV procedure.
    /// Returns `None` when that procedure did not run.
    pub fn new(est: &Estimates, bootstrap: Option<&PipelineBootstrap>, liv: bool) -> Option<Self> {
        let (prefix, title) = if liv { ("liv_", "LIV procedure") } else { ("", "separate procedure") };
        let values = est.statistic_blocks();
        let block = |name: &str| values.iter().find(|(n, _)| *n == name).map(|(_, v)| v.clone());
        let treated = block(&format!("{prefix}beta_treated"))?;
        let untreated = block(&format!("{prefix}beta_untreated"))?;
        let delta = block(&format!("{prefix}delta"))?;
        let effects = block(&format!("{prefix}effects"))?;
        let se = |name: &str| bootstrap.and_then(|b| b.block(&format!("{prefix}{name}"))).map(|s| s.se);
        let (se1, se0, sed, see) = (se("beta_treated"), se("beta_untreated"), se("delta"), se("effects"));
        let entry = |v: &[f64], s: &Option<Vec<f64>>, i: usize| Entry { estimate: v[i], se: s.as_ref().map(|s| s[i]) };
        let mut rows: Vec<TableRow> = est
            .names
            .iter()
            .enumerate()
            .map(|(i, name)| TableRow {
                label: name.clone(),
                treated: Some(entry(&treated, &se1, i)),
                untreated: Some(entry(&untreated, &se0, i)),
                difference: Some(entry(&delta, &sed, i)),
            })
            .collect();
        for (i, label) in EFFECT_LABELS.iter().enumerate() {
            rows.push(TableRow {
                label: label.to_string(),
                treated: None,
                untreated: None,
                difference: Some(entry(&effects, &see, i)),
            });
        }
        let kept = est.propensity.kept_rows();
        let n1 = kept.iter().filter(|&&i| est.propensity.treatment()[i]).count();
        Some(Self {
            title: format!("Coefficient estimates, {title}"),
            rows,
            observations: [n1, kept.len() - n1, kept.len()],
            replications: bootstrap.map(|b| b.result.replications()),
        })
    }

    pub fn to_text(&self) -> String {
        const W: usize = 16;
        let label_w = self.rows.iter().map(|r| r.label.chars().count()).max().unwrap_or(0).max(12) + 2;
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.title);
        let _ = writeln!(out, "{:label_w$}{:>W$}{:>W$}{:>W$}", "", "Treated   ", "Untreated   ", "Difference   ");
        let estimate = |e: &Option<Entry>| match e {
            Some(e) => format!("{:.4}{:<3}", e.estimate, e.se.map_or("", |s| stars(e.estimate, s))),
            None => String::new(),
        };
        let se = |e: &Option<Entry>| match e.and_then(|e| e.se) {
            Some(s) => format!("({s:.4})  "),
            None => String::new(),
        };
        for row in &self.rows {
            let cells = [&row.treated, &row.untreated, &row.difference];
            let _ = write!(out, "{:label_w$}", row.label);
            for c in cells {
                let _ = write!(out, "{:>W$}", estimate(c));
            }
            out.push('\n');
            if cells.iter().any(|c| c.and_then(|e| e.se).is_some()) {
                let _ = write!(out, "{:label_w$}", "");
                for c in cells {
                    let _ = write!(out, "{:>W$}", se(c));
                }
                out.push('\n');
            }
        }
        let [n1, n0, n] = self.observations;
        let _ = writeln!(out, "{:label_w$}{:>W$}{:>W$}{:>W$}", "Observations", format!("{n1}   "), format!("{n0}   "), format!("{n}   "));
        match self.replications {
            Some(b) => {
                let _ = writeln!(
                    out,
                    "Bootstrapped standard errors from {b} replications in parentheses. \
                     *** p<0.01, ** p<0.05, * p<0.1."
                );
            }
            None => {
                let _ = writeln!(out, "No standard errors: bootstrap disabled.");
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let pair = |e: &Option<Entry>| [opt(e.map(|e| e.estimate)), opt(e.and_then(|e| e.se))];
        let rows = self.rows.iter().map(|r| {
            let mut v = vec![r.label.clone()];
            for c in [&r.treated, &r.untreated, &r.difference] {
                v.extend(pair(c));
            }
            v
        });
        let [n1, n0, n] = self.observations;
        let obs = vec!["observations".into(), n1.to_string(), String::new(), n0.to_string(), String::new(), n.to_string(), String::new()];
        write_csv(
            path,
            &["row", "treated", "treated_se", "untreated", "untreated_se", "difference", "difference_se"],
            rows.chain(std::iter::once(obs)),
        )
    }
}

/// `v, mte, se, ci_lo, ci_hi, flagged`.
pub fn write_mte_csv(path: &Path, curve: &MteCurve, band: Option<&BlockSummary>) -> Result<()> {
    let rows = (0..curve.v.len()).map(|i| {
        vec![
            num(curve.v[i]),
            num(curve.values[i]),
            opt(band.map(|b| b.se[i])),
            opt(band.map(|b| b.ci_lo[i])),
            opt(band.map(|b| b.ci_hi[i])),
            (curve.flagged[i] as u8).to_string(),
        ]
    });
    write_csv(path, &["v", "mte", "se", "ci_lo", "ci_hi", "flagged"], rows)
}

/// `p, g0, g0_slope, g1, g1_slope, g0_flagged, g1_flagged`.
pub fn write_g_curves(path: &Path, g0: &CurveGrid, g1: &CurveGrid) -> Result<()> {
    let rows = (0..g0.p.len()).map(|i| {
        vec![
            num(g0.p[i]),
            num(g0.level[i]),
            num(g0.slope[i]),
            num(g1.level[i]),
            num(g1.slope[i]),
            (g0.flagged[i] as u8).to_string(),
            (g1.flagged[i] as u8).to_string(),
        ]
    });
    write_csv(path, &["p", "g0", "g0_slope", "g1", "g1_slope", "g0_flagged", "g1_flagged"], rows)
}

/// `p, r, r_slope, flagged`.
pub fn write_liv_curves(path: &Path, curve: &CurveGrid) -> Result<()> {
    let rows = (0..curve.p.len()).map(|i| {
        vec![num(curve.p[i]), num(curve.level[i]), num(curve.slope[i]), (curve.flagged[i] as u8).to_string()]
    });
    write_csv(path, &["p", "r", "r_slope", "flagged"], rows)
}

/// `v, separate, liv, difference`.
pub fn write_mte_comparison(path: &Path, separate: &MteCurve, liv: &MteCurve) -> Result<()> {
    let rows = (0..separate.v.len()).map(|i| {
        let (a, b) = (separate.values[i], liv.values[i]);
        vec![num(separate.v[i]), num(a), num(b), num(a - b)]
    });
    write_csv(path, &["v", "separate", "liv", "difference"], rows)
}

/// `v, untreated, untreated_ci_lo, untreated_ci_hi, treated, treated_ci_lo, treated_ci_hi`.
pub fn write_structural(
    path: &Path,
    curves: &StructuralCurves,
    untreated: Option<&BlockSummary>,
    treated: Option<&BlockSummary>,
) -> Result<()> {
    let rows = (0..curves.v.len()).map(|i| {
        vec![
            num(curves.v[i]),
            num(curves.untreated[i]),
            opt(untreated.map(|b| b.ci_lo[i])),
            opt(untreated.map(|b| b.ci_hi[i])),
            num(curves.treated[i]),
            opt(treated.map(|b| b.ci_lo[i])),
            opt(treated.map(|b| b.ci_hi[i])),
        ]
    });
    write_csv(
        path,
        &["v", "untreated", "untreated_ci_lo", "untreated_ci_hi", "treated", "treated_ci_lo", "treated_ci_hi"],
        rows,
    )
}

/// `v, participation, outcome, outcome_ci_lo, outcome_ci_hi`.
pub fn write_response(path: &Path, curves: &ResponseCurves, band: Option<&BlockSummary>) -> Result<()> {
    let rows = (0..curves.v.len()).map(|i| {
        vec![
            num(curves.v[i]),
            num(curves.participation[i]),
            num(curves.outcome[i]),
            opt(band.map(|b| b.ci_lo[i])),
            opt(band.map(|b| b.ci_hi[i])),
        ]
    });
    write_csv(path, &["v", "participation", "outcome", "outcome_ci_lo", "outcome_ci_hi"], rows)
}

/// `bin, lo, hi, count_treated, count_untreated`.
pub fn write_histogram(path: &Path, bins: &[HistogramBin]) -> Result<()> {
    let rows = bins.iter().enumerate().map(|(i, b)| {
        vec![i.to_string(), num(b.lo), num(b.hi), b.count_treated.to_string(), b.count_untreated.to_string()]
    });
    write_csv(path, &["bin", "lo", "hi", "count_treated", "count_untreated"], rows)
}

/// `covariate, x, score`: the level-matching curves of the diagnostics.
pub fn write_nl1_curve(path: &Path, report: &DiagnosticReport) -> Result<()> {
    let rows = report
        .nl1
        .iter()
        .flat_map(|f| f.curve.iter().map(move |[x, p]| vec![f.covariate.to_string(), num(*x), num(*p)]));
    write_csv(path, &["covariate", "x", "score"], rows)
}

/// The sample as CSV: `y, d`, then the covariates under their names.
pub fn write_sample(path: &Path, sample: &Sample) -> Result<()> {
    let mut header = vec!["y".to_string(), "d".to_string()];
    header.extend(sample.names().iter().cloned());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = (0..sample.len()).map(|i| {
        let mut r = vec![num(sample.y()[i]), (sample.d()[i] as u8).to_string()];
        r.extend(sample.cont_row(i).iter().map(|&v| num(v)));
        r.extend(sample.disc_row(i).iter().map(|v| v.to_string()));
        r
    });
    write_csv(path, &header, rows)
}

/// Estimate with optional bootstrap standard error and interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reported {
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

fn reported(values: &[f64], band: Option<&BlockSummary>) -> Vec<Reported> {
    values
        .iter()
        .enumerate()
        .map(|(i, &estimate)| Reported {
            estimate,
            se: band.map(|b| b.se[i]),
            ci_lo: band.map(|b| b.ci_lo[i]),
            ci_hi: band.map(|b| b.ci_hi[i]),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProcedureSummary {
    pub beta_untreated: Vec<Reported>,
    pub beta_treated: Vec<Reported>,
    pub delta: Vec<Reported>,
    pub ate: Reported,
    pub tt: Reported,
    pub tut: Reported,
    pub late: Reported,
    pub late_bounds: [f64; 2],
    /// Some parameter needed the control functions outside the grid.
    pub extrapolated: bool,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub names: Vec<String>,
    pub n: usize,
    pub profile: Vec<f64>,
    pub pi_x: f64,
    pub confidence_level: Option<f64>,
    pub separate: Option<ProcedureSummary>,
    pub liv: Option<ProcedureSummary>,
}

impl Summary {
    pub fn new(est: &Estimates, bootstrap: Option<&PipelineBootstrap>) -> Self {
        let values = est.statistic_blocks();
        let build = |prefix: &str, s: &CausalSummary| {
            let get = |name: &str| {
                let full = format!("{prefix}{name}");
                let v = values.iter().find(|(n, _)| *n == full).map(|(_, v)| v.clone()).unwrap_or_default();
                let band = bootstrap.and_then(|b| b.block(&full));
                reported(&v, band.as_ref())
            };
            let mut effects = get("effects").into_iter();
            let mut next = || effects.next().expect("four effects");
            ProcedureSummary {
                beta_untreated: get("beta_untreated"),
                beta_treated: get("beta_treated"),
                delta: get("delta"),
                ate: next(),
                tt: next(),
                tut: next(),
                late: next(),
                late_bounds: [s.v1, s.v2],
                extrapolated: s.extrapolated,
            }
        };
        Self {
            names: est.names.clone(),
            n: est.n,
            profile: est.profile.clone(),
            pi_x: est.pi_x,
            confidence_level: bootstrap.map(|b| b.result.level),
            separate: est.separate.as_ref().map(|s| build("", &s.summary)),
            liv: est.liv.as_ref().map(|l| build("liv_", &l.summary)),
        }
    }
}

/// Human-readable diagnostics block.
pub fn diagnostics_text(report: &DiagnosticReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Identification diagnostics, cell {:?} ({} rows)", report.cell, report.cell_size);
    let _ = writeln!(out, "tolerance {:.4}, slope tolerance {:.4}", report.tolerance, report.slope_tolerance);
    for f in &report.nl1 {
        let verdict = if f.degenerate {
            "detected (degenerate: constant score)".to_string()
        } else if f.detected {
            let [a, b] = f.witness.expect("witness");
            format!("detected, witnesses x = {a:.4} and {b:.4}, score gap {:.2e}", f.score_gap.unwrap_or(0.0))
        } else {
            "not detected (monotone on the grid)".to_string()
        };
        let _ = writeln!(out, "NL1 covariate {}: {verdict}", f.covariate);
    }
    if let Some(f) = &report.nl2 {
        let ratio = |r: Option<f64>| r.map_or("undefined".to_string(), |r| format!("{r:.4}"));
        let _ = writeln!(
            out,
            "NL2 covariates ({}, {}): {}, ratios {} and {}, clauses {:?}",
            f.k,
            f.j,
            if f.detected { "detected" } else { "not detected" },
            ratio(f.ratios[0]),
            ratio(f.ratios[1]),
            f.clauses
        );
    }
    for s in &report.stationary {
        let verdict = match (s.detected, s.degenerate, s.location) {
            (true, true, _) => "detected (degenerate: constant score)".to_string(),
            (true, false, Some(x)) => format!("detected near x = {x:.4}"),
            _ => format!("not detected, smallest |slope| above tolerance (max |slope| {:.4})", s.max_abs_slope),
        };
        let _ = writeln!(out, "Stationary point covariate {}: {verdict}", s.covariate);
    }
    if let Some(points) = &report.variants.flat_controls {
        let _ = writeln!(out, "Flat control functions at {} grid points", points.len());
    }
    if let Some(s) = &report.support {
        let _ = writeln!(
            out,
            "Common support [{:.4}, {:.4}], {} rows kept, {} trimmed below, {} trimmed above",
            s.support.0, s.support.1, s.kept, s.trimmed_lower, s.trimmed_upper
        );
    }
    for note in &report.notes {
        let _ = writeln!(out, "note: {note}");
    }
    let _ = writeln!(
        out,
        "Nonlinearity assumption: {}",
        if report.identified { "supported" } else { "not supported" }
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip_cleanly() {
        assert_eq!(num(0.1 + 0.2), "0.3");
        assert_eq!(num(-1.5), "-1.5");
        assert_eq!(num(1e-20), "0.00000000000000000001");
        assert_eq!(num(f64::NAN), "NaN");
        assert_eq!(num(123_456_789.123_456_79), "123456789.123");
    }

    #[test]
    fn star_thresholds() {
        assert_eq!(stars(1.0, 1.0), "");
        assert_eq!(stars(1.7, 1.0), "*");
        assert_eq!(stars(-2.0, 1.0), "**");
        assert_eq!(stars(3.0, 1.0), "***");
        assert_eq!(stars(3.0, 0.0), "");
    }
}
