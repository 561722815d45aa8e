//! First-step propensity scores: a Nadaraya–Watson regression of `D` on the
//! continuous covariates inside each discrete-covariate cell, followed by
//! common-support trimming.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_cells, Sample};
use crate::error::{MteError, Result};
use crate::smoothing::{BandwidthSpec, Kernel};

/// First-step settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropensityConfig {
    pub kernel: Kernel,
    /// Applied to every continuous covariate; the rule of thumb resolves
    /// one bandwidth per column over the full sample.
    pub bandwidth: BandwidthSpec,
    /// Exclude observation `i` from its own fitted score.
    pub leave_one_out: bool,
    /// Cells with fewer rows are not fitted and their rows are excluded
    /// from the second step.
    pub min_cell_size: usize,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        Self {
            kernel: Kernel::Gaussian,
            bandwidth: BandwidthSpec::RuleOfThumb,
            leave_one_out: false,
            min_cell_size: 10,
        }
    }
}

/// Training data of one cell, sorted by the first continuous covariate so
/// compact kernels only visit a window.
#[derive(Debug, Clone)]
struct CellModel {
    x: Vec<f64>,
    d: Vec<f64>,
    /// original row index of each sorted position
    rows: Vec<usize>,
}

#[derive(Debug, Clone)]
struct ScoreModel {
    n_cont: usize,
    kernel: Kernel,
    bandwidths: Vec<f64>,
    cells: BTreeMap<Vec<i64>, CellModel>,
}

impl ScoreModel {
    fn evaluate(&self, x: &[f64], key: &[i64], skip_row: Option<usize>) -> Result<f64> {
        let cell = self.cells.get(key).ok_or_else(|| {
            MteError::NoLocalData(format!("no fitted cell for discrete covariates {key:?}"))
        })?;
        let p = self.n_cont;
        let n = cell.d.len();
        let (start, end) = match (p, self.kernel.support_radius()) {
            (0, _) | (_, None) => (0, n),
            (_, Some(r)) => {
                let lo = x[0] - r * self.bandwidths[0];
                let hi = x[0] + r * self.bandwidths[0];
                let start = partition_point(n, |i| cell.x[i * p] <= lo);
                let end = partition_point(n, |i| cell.x[i * p] < hi);
                (start, end.max(start))
            }
        };
        let mut num = 0.0;
        let mut den = 0.0;
        for i in start..end {
            if skip_row == Some(cell.rows[i]) {
                continue;
            }
            let mut w = 1.0;
            for (l, (&xl, &hl)) in x.iter().zip(&self.bandwidths).enumerate() {
                w *= self.kernel.eval((cell.x[i * p + l] - xl) / hl);
                if w == 0.0 {
                    break;
                }
            }
            num += w * cell.d[i];
            den += w;
        }
        if den > 0.0 {
            Ok((num / den).clamp(0.0, 1.0))
        } else {
            Err(MteError::NoLocalData(format!(
                "zero kernel mass at x = {x:?}, cell {key:?}"
            )))
        }
    }
}

fn partition_point(n: usize, pred: impl Fn(usize) -> bool) -> usize {
    let (mut lo, mut hi) = (0, n);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if pred(mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Fitted propensity scores with their evaluator and common support.
#[derive(Debug, Clone)]
pub struct PropensityFit {
    scores: Vec<f64>,
    d: Vec<bool>,
    /// rows that belong to a fitted cell
    eligible: Vec<bool>,
    kept: Vec<bool>,
    support: (f64, f64),
    bandwidths: Vec<f64>,
    dropped_cells: Vec<Vec<i64>>,
    trimmed: (usize, usize),
    model: Option<ScoreModel>,
}

/// One bin of the score histogram by treatment status.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count_treated: usize,
    pub count_untreated: usize,
}

impl PropensityFit {
    /// Wraps externally computed scores. The fit has no evaluator, every
    /// row is kept and the support is the full score range.
    pub fn from_scores(scores: Vec<f64>, d: Vec<bool>) -> Result<Self> {
        if scores.len() != d.len() || scores.is_empty() {
            return Err(MteError::InvalidArgument(format!(
                "{} scores for {} treatment indicators",
                scores.len(),
                d.len()
            )));
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(MteError::InvalidArgument(format!("score {s} outside [0, 1]")));
        }
        let n = scores.len();
        let support = score_range(&scores, &vec![true; n]);
        Ok(Self {
            scores,
            d,
            eligible: vec![true; n],
            kept: vec![true; n],
            support,
            bandwidths: Vec::new(),
            dropped_cells: Vec::new(),
            trimmed: (0, 0),
            model: None,
        })
    }

    /// Fitted score `P̂_i` for every row of the sample.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn treatment(&self) -> &[bool] {
        &self.d
    }

    /// Rows that survive cell dropping and trimming.
    pub fn kept(&self) -> &[bool] {
        &self.kept
    }

    pub fn kept_rows(&self) -> Vec<usize> {
        (0..self.kept.len()).filter(|&i| self.kept[i]).collect()
    }

    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    /// First-step bandwidths, one per continuous covariate.
    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn dropped_cells(&self) -> &[Vec<i64>] {
        &self.dropped_cells
    }

    /// Number of rows trimmed from the lower and upper tails.
    pub fn trimmed_counts(&self) -> (usize, usize) {
        self.trimmed
    }

    pub fn kernel(&self) -> Option<Kernel> {
        self.model.as_ref().map(|m| m.kernel)
    }

    /// Range of the kept scores within one arm.
    pub fn arm_range(&self, arm: bool) -> Option<(f64, f64)> {
        let mask: Vec<bool> = (0..self.kept.len()).map(|i| self.kept[i] && self.d[i] == arm).collect();
        mask.iter().any(|&m| m).then(|| score_range(&self.scores, &mask))
    }

    /// `π̂(x)` at an arbitrary covariate value.
    pub fn evaluate(&self, x_cont: &[f64], x_disc: &[i64]) -> Result<f64> {
        let model = self.model.as_ref().ok_or_else(|| {
            MteError::NoLocalData("fit was built from external scores and has no evaluator".into())
        })?;
        if x_cont.len() != model.n_cont {
            return Err(MteError::InvalidArgument(format!(
                "expected {} continuous covariates, got {}",
                model.n_cont,
                x_cont.len()
            )));
        }
        model.evaluate(x_cont, x_disc, None)
    }

    /// Marks the `⌈lower·n⌉` smallest and `⌈upper·n⌉` largest scores as
    /// excluded, `n` being the number of rows in fitted cells. Ties are
    /// broken by `(score, row index)`. Trimming always starts from the
    /// untrimmed fit.
    pub fn trim(&self, lower: f64, upper: f64) -> Result<PropensityFit> {
        if !(0.0..0.5).contains(&lower) || !(0.0..0.5).contains(&upper) {
            return Err(MteError::InvalidArgument(format!(
                "trimming fractions must lie in [0, 0.5), got {lower} and {upper}"
            )));
        }
        let mut order: Vec<usize> = (0..self.scores.len()).filter(|&i| self.eligible[i]).collect();
        order.sort_by(|&a, &b| self.scores[a].total_cmp(&self.scores[b]).then(a.cmp(&b)));
        let n = order.len();
        let n_lo = ((lower * n as f64) - 1e-9).ceil().max(0.0) as usize;
        let n_hi = ((upper * n as f64) - 1e-9).ceil().max(0.0) as usize;
        if n_lo + n_hi >= n {
            return Err(MteError::EmptyArm { arm: 1 });
        }
        let mut kept = vec![false; self.scores.len()];
        for &i in &order[n_lo..n - n_hi] {
            kept[i] = true;
        }
        for arm in [false, true] {
            if !(0..kept.len()).any(|i| kept[i] && self.d[i] == arm) {
                return Err(MteError::EmptyArm { arm: arm as u8 });
            }
        }
        let support = score_range(&self.scores, &kept);
        Ok(PropensityFit { kept, support, trimmed: (n_lo, n_hi), ..self.clone() })
    }

    /// Equal-width histogram of the eligible scores over [0, 1].
    pub fn histogram(&self, bins: usize) -> Vec<HistogramBin> {
        let bins = bins.max(1);
        let width = 1.0 / bins as f64;
        let mut out: Vec<HistogramBin> = (0..bins)
            .map(|b| HistogramBin {
                lo: b as f64 * width,
                hi: (b + 1) as f64 * width,
                count_treated: 0,
                count_untreated: 0,
            })
            .collect();
        for i in (0..self.scores.len()).filter(|&i| self.eligible[i]) {
            let b = ((self.scores[i] / width) as usize).min(bins - 1);
            if self.d[i] {
                out[b].count_treated += 1;
            } else {
                out[b].count_untreated += 1;
            }
        }
        out
    }
}

fn score_range(scores: &[f64], mask: &[bool]) -> (f64, f64) {
    scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&s, _)| (lo.min(s), hi.max(s)))
}

/// Fits `π̂` cell by cell and scores every row. No trimming is applied; see
/// [`PropensityFit::trim`].
pub fn fit_propensity(sample: &Sample, config: &PropensityConfig) -> Result<PropensityFit> {
    let n_cont = sample.n_cont();
    let bandwidths = (0..n_cont)
        .map(|k| config.bandwidth.resolve(&sample.cont_column(k)))
        .collect::<Result<Vec<_>>>()?;

    let mut cells = BTreeMap::new();
    let mut dropped_cells = Vec::new();
    let mut eligible = vec![true; sample.len()];
    for cell in split_cells(sample) {
        if cell.len() < config.min_cell_size.max(1) {
            log::warn!(
                "cell {:?} has {} rows (< {}); excluded from estimation",
                cell.key,
                cell.len(),
                config.min_cell_size
            );
            for &i in &cell.row_indices {
                eligible[i] = false;
            }
            dropped_cells.push(cell.key.clone());
        }
        let mut rows = cell.row_indices.clone();
        if n_cont > 0 {
            rows.sort_by(|&a, &b| {
                sample.cont_row(a)[0].total_cmp(&sample.cont_row(b)[0]).then(a.cmp(&b))
            });
        }
        let model = CellModel {
            x: rows.iter().flat_map(|&i| sample.cont_row(i).iter().copied()).collect(),
            d: rows.iter().map(|&i| if sample.d()[i] { 1.0 } else { 0.0 }).collect(),
            rows,
        };
        cells.insert(cell.key, model);
    }
    let model = ScoreModel { n_cont, kernel: config.kernel, bandwidths: bandwidths.clone(), cells };

    let scores = (0..sample.len())
        .into_par_iter()
        .map(|i| {
            let skip = (config.leave_one_out && eligible[i]).then_some(i);
            model.evaluate(sample.cont_row(i), sample.disc_row(i), skip)
        })
        .collect::<Result<Vec<f64>>>()?;

    if !eligible.iter().any(|&e| e) {
        return Err(MteError::NoLocalData(format!(
            "every cell has fewer than {} rows",
            config.min_cell_size
        )));
    }
    let support = score_range(&scores, &eligible);
    Ok(PropensityFit {
        scores,
        d: sample.d().to_vec(),
        kept: eligible.clone(),
        eligible,
        support,
        bandwidths,
        dropped_cells,
        trimmed: (0, 0),
        model: Some(model),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn config(min_cell: usize) -> PropensityConfig {
        PropensityConfig { min_cell_size: min_cell, ..Default::default() }
    }

    fn small_sample() -> Sample {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let d: Vec<bool> = (0..20).map(|i| (i * 7) % 3 == 0).collect();
        let disc: Vec<i64> = (0..20).map(|i| (i % 2) as i64).collect();
        Sample::from_parts(vec![0.0; 20], d, x, 1, disc, 1).unwrap()
    }

    #[test]
    fn all_treated_cell_scores_one() {
        let x = vec![0.1, 0.5, 0.9, 0.2, 0.6, 0.8];
        let d = vec![true, true, true, false, true, false];
        let disc = vec![0, 0, 0, 1, 1, 1];
        let s = Sample::from_parts(vec![0.0; 6], d, x, 1, disc, 1).unwrap();
        let fit = fit_propensity(&s, &config(2)).unwrap();
        for i in 0..3 {
            assert_eq!(fit.scores()[i], 1.0);
        }
        assert_eq!(fit.evaluate(&[0.33], &[0]).unwrap(), 1.0);
    }

    #[test]
    fn constant_covariate_gives_cell_mean() {
        let d = vec![true, false, false, true, true];
        let s = Sample::from_parts(vec![0.0; 5], d, vec![2.0; 5], 1, vec![], 0);
        // constant covariate: the rule of thumb cannot resolve, fix the bandwidth
        let s = s.unwrap();
        let cfg = PropensityConfig { bandwidth: BandwidthSpec::Fixed(0.5), min_cell_size: 2, ..Default::default() };
        let fit = fit_propensity(&s, &cfg).unwrap();
        for &p in fit.scores() {
            assert_abs_diff_eq!(p, 0.6, epsilon = 1e-15);
        }
    }

    #[test]
    fn no_continuous_covariates_gives_cell_means() {
        let d = vec![true, false, false, true];
        let s = Sample::from_parts(vec![0.0; 4], d, vec![], 0, vec![0, 0, 1, 1], 1).unwrap();
        let fit = fit_propensity(&s, &config(2)).unwrap();
        assert_eq!(fit.scores(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn fitted_scores_match_evaluator_exactly() {
        let s = small_sample();
        for kernel in [Kernel::Gaussian, Kernel::Epanechnikov] {
            let fit = fit_propensity(&s, &PropensityConfig { kernel, ..config(2) }).unwrap();
            for i in 0..s.len() {
                assert_eq!(fit.scores()[i], fit.evaluate(s.cont_row(i), s.disc_row(i)).unwrap());
                assert!((0.0..=1.0).contains(&fit.scores()[i]));
            }
        }
    }

    #[test]
    fn unknown_cell_and_zero_mass_errors() {
        let s = small_sample();
        let fit = fit_propensity(
            &s,
            &PropensityConfig { kernel: Kernel::Epanechnikov, bandwidth: BandwidthSpec::Fixed(0.05), ..config(2) },
        )
        .unwrap();
        assert!(matches!(fit.evaluate(&[0.5], &[7]), Err(MteError::NoLocalData(_))));
        let err = fit.evaluate(&[100.0], &[0]).unwrap_err();
        assert!(err.to_string().contains("no local data"));
    }

    #[test]
    fn leave_one_out_excludes_self() {
        let d = vec![true, false, false, false];
        let s = Sample::from_parts(vec![0.0; 4], d, vec![], 0, vec![], 0).unwrap();
        let cfg = PropensityConfig { leave_one_out: true, ..config(2) };
        let fit = fit_propensity(&s, &cfg).unwrap();
        assert_eq!(fit.scores()[0], 0.0);
        assert_abs_diff_eq!(fit.scores()[1], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn sparse_cells_are_dropped() {
        let s = small_sample();
        let mut disc: Vec<i64> = (0..20).map(|i| (i % 2) as i64).collect();
        disc[19] = 5;
        let s = Sample::from_parts(s.y().to_vec(), s.d().to_vec(), s.cont_column(0), 1, disc, 1).unwrap();
        let fit = fit_propensity(&s, &config(3)).unwrap();
        assert_eq!(fit.dropped_cells(), &[vec![5]]);
        assert!(!fit.kept()[19]);
        assert_eq!(fit.kept().iter().filter(|&&k| k).count(), 19);
    }

    fn fit_with_scores(scores: Vec<f64>) -> PropensityFit {
        let d = (0..scores.len()).map(|i| i % 2 == 0).collect();
        PropensityFit::from_scores(scores, d).unwrap()
    }

    #[test]
    fn trim_one_percent_each_tail() {
        let scores: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        let fit = fit_with_scores(scores).trim(0.01, 0.01).unwrap();
        assert_eq!(fit.trimmed_counts(), (1, 1));
        assert!(!fit.kept()[0] && !fit.kept()[99]);
        assert_eq!(fit.kept().iter().filter(|&&k| k).count(), 98);
        assert_abs_diff_eq!(fit.support().0, 0.015);
        assert_abs_diff_eq!(fit.support().1, 0.985);
    }

    #[test]
    fn zero_trim_is_identity() {
        let scores: Vec<f64> = (0..10).map(|i| 0.05 + i as f64 * 0.09).collect();
        let base = fit_with_scores(scores);
        let fit = base.trim(0.0, 0.0).unwrap();
        assert!(fit.kept().iter().all(|&k| k));
        assert_eq!(fit.support(), base.support());
    }

    #[test]
    fn ties_broken_by_row_index() {
        let mut scores = vec![0.5; 10];
        scores[3] = 0.1;
        scores[6] = 0.1;
        // ceil(0.1 * 10) = 1 row trimmed per tail: the lowest-index 0.1 and
        // the highest-index 0.5
        let fit = fit_with_scores(scores).trim(0.1, 0.1).unwrap();
        assert!(!fit.kept()[3]);
        assert!(fit.kept()[6]);
        assert!(!fit.kept()[9]);
        assert!(fit.kept()[8]);
    }

    #[test]
    fn trimming_cannot_empty_an_arm() {
        let scores = vec![0.1, 0.9, 0.2, 0.8];
        let d = vec![true, false, false, false];
        let fit = PropensityFit::from_scores(scores, d).unwrap();
        assert!(matches!(fit.trim(0.25, 0.0), Err(MteError::EmptyArm { arm: 1 })));
        assert!(fit.trim(0.5, 0.0).is_err());
    }

    #[test]
    fn histogram_counts_by_arm() {
        let fit = PropensityFit::from_scores(vec![0.05, 0.15, 0.15, 1.0], vec![true, false, true, false]).unwrap();
        let h = fit.histogram(10);
        assert_eq!(h[0].count_treated, 1);
        assert_eq!((h[1].count_treated, h[1].count_untreated), (1, 1));
        assert_eq!(h[9].count_untreated, 1);
    }

    #[test]
    fn permutation_permutes_scores() {
        let s = small_sample();
        let perm: Vec<usize> = (0..20).map(|i| (i * 7) % 20).collect();
        let sp = s.select_rows(&perm).unwrap();
        let a = fit_propensity(&s, &config(2)).unwrap();
        let b = fit_propensity(&sp, &config(2)).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_abs_diff_eq!(b.scores()[k], a.scores()[i], epsilon = 1e-14);
        }
    }
}
