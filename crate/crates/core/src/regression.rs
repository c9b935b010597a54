//! Linear mAP regression over dataset-level scores, leave-one-out
//! evaluation, the piecewise variant and error/correlation statistics.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::MapTarget;
use crate::scoring::{DatasetSummary, FEATURE_NAMES};

const INTERCEPT: &str = "intercept";
const RANK_TOL: f64 = 1e-10;

/// Regime split of a piecewise model. Inference routes on the global model's
/// estimate since true mAP is unknown at test time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSplit {
    pub split_feature: String,
    pub threshold: f64,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

/// `estimate = weights[0] + sum_t weights[t+1] * feature_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<RegimeSplit>,
}

fn affine(weights: &[f64], features: &[f64]) -> f64 {
    weights[0] + weights[1..].iter().zip(features).map(|(w, x)| w * x).sum::<f64>()
}

impl RegressionModel {
    /// Raw (unclamped) estimate from feature values in `feature_names` order.
    pub fn predict_features(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.feature_names.len() {
            return Err(Error::LengthMismatch(features.len(), self.feature_names.len()));
        }
        let global = affine(&self.weights, features);
        Ok(match &self.split {
            None => global,
            Some(s) if global < s.threshold => affine(&s.low, features),
            Some(s) => affine(&s.high, features),
        })
    }

    pub fn features_of(&self, summary: &DatasetSummary) -> Result<Vec<f64>> {
        self.feature_names
            .iter()
            .map(|n| summary.feature(n).ok_or_else(|| Error::MissingFeature(n.clone())))
            .collect()
    }

    /// Raw estimate for a dataset summary.
    pub fn predict(&self, summary: &DatasetSummary) -> Result<f64> {
        self.predict_features(&self.features_of(summary)?)
    }
}

/// Estimates are reported inside the valid mAP range.
pub fn clamp_estimate(raw: f64) -> f64 {
    raw.clamp(0.0, 1.0)
}

/// Ordinary least squares with intercept via Householder QR.
/// `rows[i]` holds the feature values of sample `i`.
pub fn fit(rows: &[Vec<f64>], targets: &[f64], feature_names: &[String]) -> Result<RegressionModel> {
    let n_features = feature_names.len();
    if rows.len() != targets.len() {
        return Err(Error::LengthMismatch(rows.len(), targets.len()));
    }
    if rows.len() < n_features + 2 {
        return Err(Error::TooFewSamples {
            needed: n_features + 2,
            features: n_features,
            got: rows.len(),
        });
    }
    for (t, name) in feature_names.iter().enumerate() {
        if rows.iter().any(|r| r.len() != n_features || !r[t].is_finite()) {
            return Err(Error::NonFinite(name.clone()));
        }
    }
    if targets.iter().any(|y| !y.is_finite()) {
        return Err(Error::NonFinite("target".into()));
    }

    let n = rows.len();
    let p = n_features + 1;
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(p);
    columns.push(vec![1.0; n]);
    for t in 0..n_features {
        columns.push(rows.iter().map(|r| r[t]).collect());
    }
    let names: Vec<String> = std::iter::once(INTERCEPT.to_string())
        .chain(feature_names.iter().cloned())
        .collect();
    let weights = solve_least_squares(columns, targets.to_vec(), &names)?;
    Ok(RegressionModel {
        feature_names: feature_names.to_vec(),
        weights,
        split: None,
    })
}

/// Solves `min |A w - b|` for full-column-rank `A` given as columns.
fn solve_least_squares(mut a: Vec<Vec<f64>>, mut b: Vec<f64>, names: &[String]) -> Result<Vec<f64>> {
    let n = b.len();
    let p = a.len();
    let col_norms: Vec<f64> = a.iter().map(|c| norm(c)).collect();

    for k in 0..p {
        let alpha = norm(&a[k][k..]);
        if alpha <= RANK_TOL * col_norms[k] || col_norms[k] == 0.0 {
            return Err(rank_error(&a, k, names));
        }
        let alpha = if a[k][k] > 0.0 { -alpha } else { alpha };
        // v = x - alpha e1, stored in place of column k below the diagonal
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let v_norm_sq: f64 = v.iter().map(|x| x * x).sum();
        let reflect = |x: &mut [f64]| {
            let dot: f64 = v.iter().zip(x.iter()).map(|(vi, xi)| vi * xi).sum();
            let f = 2.0 * dot / v_norm_sq;
            for (xi, vi) in x.iter_mut().zip(&v) {
                *xi -= f * vi;
            }
        };
        for col in a.iter_mut().skip(k + 1) {
            reflect(&mut col[k..n]);
        }
        reflect(&mut b[k..n]);
        a[k][k] = alpha;
        for x in a[k][k + 1..].iter_mut() {
            *x = 0.0;
        }
    }

    let mut w = vec![0.0; p];
    for k in (0..p).rev() {
        let s: f64 = (k + 1..p).map(|j| a[j][k] * w[j]).sum();
        w[k] = (b[k] - s) / a[k][k];
    }
    Ok(w)
}

fn norm(x: &[f64]) -> f64 {
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    scale * x.iter().map(|v| (v / scale).powi(2)).sum::<f64>().sqrt()
}

/// Names column `k` and the earlier columns it is a combination of, using
/// the triangular factor built so far.
fn rank_error(a: &[Vec<f64>], k: usize, names: &[String]) -> Error {
    // R[0..k,0..k] z = R[0..k, k]
    let mut z = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = (i + 1..k).map(|j| a[j][i] * z[j]).sum();
        z[i] = (a[k][i] - s) / a[i][i];
    }
    let scale = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let others = (0..k)
        .filter(|&i| scale > 0.0 && z[i].abs() > 1e-8 * scale)
        .map(|i| names[i].clone())
        .collect();
    Error::RankDeficient {
        column: names[k].clone(),
        others,
    }
}

/// Extracts feature rows and targets from summaries.
pub fn design(summaries: &[&DatasetSummary], feature_names: &[String], target: MapTarget) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut rows = Vec::with_capacity(summaries.len());
    let mut targets = Vec::with_capacity(summaries.len());
    for s in summaries {
        rows.push(
            feature_names
                .iter()
                .map(|n| s.feature(n).ok_or_else(|| Error::MissingFeature(n.clone())))
                .collect::<Result<Vec<_>>>()?,
        );
        targets.push(s.target(target).ok_or_else(|| Error::MissingTarget(s.dataset_id.clone()))?);
    }
    Ok((rows, targets))
}

pub fn fit_summaries(summaries: &[&DatasetSummary], feature_names: &[String], target: MapTarget) -> Result<RegressionModel> {
    let (rows, targets) = design(summaries, feature_names, target)?;
    fit(&rows, &targets, feature_names)
}

/// Fits a global model plus separate low/high models split at `threshold`
/// on the true target. A regime with too few samples to fit reuses the
/// global weights.
pub fn fit_piecewise(rows: &[Vec<f64>], targets: &[f64], feature_names: &[String], threshold: f64) -> Result<RegressionModel> {
    let global = fit(rows, targets, feature_names)?;
    let regime = |low: bool| -> Result<Vec<f64>> {
        let (r, t): (Vec<Vec<f64>>, Vec<f64>) = rows
            .iter()
            .zip(targets)
            .filter(|(_, &y)| (y < threshold) == low)
            .map(|(r, &y)| (r.clone(), y))
            .unzip();
        match fit(&r, &t, feature_names) {
            Ok(m) => Ok(m.weights),
            Err(Error::TooFewSamples { .. }) => Ok(global.weights.clone()),
            Err(e) => Err(e),
        }
    };
    let split = RegimeSplit {
        split_feature: "true_map_regime".into(),
        threshold,
        low: regime(true)?,
        high: regime(false)?,
    };
    Ok(RegressionModel {
        split: Some(split),
        ..global
    })
}

/// Regime threshold used by the piecewise protocol (5% mAP).
pub const PIECEWISE_THRESHOLD: f64 = 0.05;

/// A named feature set to regress on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Method {
    pub name: String,
    pub features: Vec<String>,
}

impl Method {
    pub fn new(name: impl Into<String>, features: &[&str]) -> Self {
        Self {
            name: name.into(),
            features: features.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Full PCR: consistency and reliability.
    pub fn pcr() -> Self {
        Self::new("pcr", &["consistency", "reliability"])
    }

    /// Five-method comparison: PCR and the four confidence baselines.
    pub fn standard() -> Vec<Self> {
        ["pcr", "ps", "es", "ac", "atc"].iter().map(|n| n.parse().unwrap()).collect()
    }

    /// Every named method.
    pub fn all() -> Vec<Self> {
        [
            "pcr",
            "pcr-iou-only",
            "pcr-unscaled",
            "consistency",
            "consistency-iou",
            "consistency-unscaled",
            "reliability",
            "ps",
            "es",
            "ac",
            "atc",
        ]
        .iter()
        .map(|n| n.parse().unwrap())
        .collect()
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    /// Accepts a named method or a `+`-joined list of feature names.
    fn from_str(s: &str) -> Result<Self> {
        let features: &[&str] = match s {
            "pcr" => &["consistency", "reliability"],
            "pcr-iou-only" => &["consistency_iou", "reliability"],
            "pcr-unscaled" => &["consistency_unscaled", "reliability"],
            "consistency" => &["consistency"],
            "consistency-iou" => &["consistency_iou"],
            "consistency-unscaled" => &["consistency_unscaled"],
            "reliability" => &["reliability"],
            "ps" => &["ps"],
            "es" => &["es"],
            "ac" => &["ac"],
            "atc" => &["atc"],
            custom => {
                let parts: Vec<&str> = custom.split('+').map(str::trim).collect();
                if parts.is_empty() || parts.iter().any(|p| !FEATURE_NAMES.contains(p)) {
                    return Err(Error::UnknownMethod(custom.to_string()));
                }
                return Ok(Method::new(custom, &parts));
            }
        };
        Ok(Method::new(s, features))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statistics {
    pub rmse: f64,
    /// `None` when either input has zero variance.
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
}

pub fn rmse(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    check_lengths(estimates, truths)?;
    let sq: f64 = estimates.iter().zip(truths).map(|(e, t)| (e - t).powi(2)).sum();
    Ok((sq / estimates.len() as f64).sqrt())
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    check_lengths(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

/// 1-based ranks, ties share their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    check_lengths(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

pub fn statistics(estimates: &[f64], truths: &[f64]) -> Result<Statistics> {
    Ok(Statistics {
        rmse: rmse(estimates, truths)?,
        pearson: pearson(estimates, truths)?,
        spearman: spearman(estimates, truths)?,
    })
}

/// Leave-one-out settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LooOptions {
    pub target: MapTarget,
    /// Train only on transformed (severity > 0) summaries.
    pub exclude_untransformed: bool,
    /// Fit a piecewise model split at this true-mAP threshold.
    pub piecewise: Option<f64>,
    /// Train only on summaries of this severity.
    pub severity: Option<u8>,
}

impl Default for LooOptions {
    fn default() -> Self {
        Self {
            target: MapTarget::Map,
            exclude_untransformed: false,
            piecewise: None,
            severity: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOut {
    pub source: String,
    pub dataset_id: String,
    pub estimate_raw: f64,
    pub estimate: f64,
    pub true_map: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub features: Vec<String>,
    pub target: MapTarget,
    pub held_out: Vec<HeldOut>,
    /// Over raw estimates.
    pub rmse: f64,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
}

fn source_of(s: &DatasetSummary) -> Result<&str> {
    s.source.as_deref().ok_or_else(|| Error::MissingSource(s.dataset_id.clone()))
}

fn canonical_key(s: &DatasetSummary) -> (Option<&str>, Option<&str>, Option<u8>, &str) {
    (s.source.as_deref(), s.variant.as_deref(), s.severity, s.dataset_id.as_str())
}

/// Fits on every source but one and estimates the held-out source's
/// untransformed (severity 0) test set, for each source in turn.
pub fn leave_one_out(summaries: &[DatasetSummary], method: &Method, options: &LooOptions) -> Result<EvalReport> {
    let mut groups: BTreeMap<&str, Vec<&DatasetSummary>> = BTreeMap::new();
    for s in summaries {
        groups.entry(source_of(s)?).or_default().push(s);
    }
    if groups.len() < 3 {
        return Err(Error::TooFewSources {
            needed: 3,
            got: groups.len(),
        });
    }
    let mut tests = Vec::with_capacity(groups.len());
    for (source, members) in &groups {
        let test = members
            .iter()
            .filter(|s| s.severity == Some(0))
            .min_by(|a, b| canonical_key(a).cmp(&canonical_key(b)))
            .ok_or_else(|| Error::MissingTestSummary(source.to_string()))?;
        tests.push((*source, *test));
    }

    let held_out: Vec<HeldOut> = tests
        .par_iter()
        .map(|&(source, test)| {
            let mut train: Vec<&DatasetSummary> = summaries
                .iter()
                .filter(|s| s.source.as_deref() != Some(source))
                .filter(|s| !(options.exclude_untransformed && s.severity == Some(0)))
                .filter(|s| options.severity.map_or(true, |sev| s.severity == Some(sev)))
                .collect();
            train.sort_by(|a, b| canonical_key(a).cmp(&canonical_key(b)));
            let (rows, targets) = design(&train, &method.features, options.target)?;
            let model = match options.piecewise {
                Some(t) => fit_piecewise(&rows, &targets, &method.features, t)?,
                None => fit(&rows, &targets, &method.features)?,
            };
            let raw = model.predict(test)?;
            let truth = test
                .target(options.target)
                .ok_or_else(|| Error::MissingTarget(test.dataset_id.clone()))?;
            Ok(HeldOut {
                source: source.to_string(),
                dataset_id: test.dataset_id.clone(),
                estimate_raw: raw,
                estimate: clamp_estimate(raw),
                true_map: truth,
                abs_error: (raw - truth).abs(),
            })
        })
        .collect::<Result<_>>()?;

    let est: Vec<f64> = held_out.iter().map(|h| h.estimate_raw).collect();
    let truth: Vec<f64> = held_out.iter().map(|h| h.true_map).collect();
    let stats = statistics(&est, &truth)?;
    Ok(EvalReport {
        method: method.name.clone(),
        features: method.features.clone(),
        target: options.target,
        held_out,
        rmse: stats.rmse,
        pearson: stats.pearson,
        spearman: stats.spearman,
    })
}

/// One row of the method-comparison grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    /// RMSE per column (run).
    pub rmse: Vec<f64>,
    pub avg_rmse: f64,
    pub avg_rank: f64,
}

/// Methods x runs grid of leave-one-out RMSE with averages and average rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl ReportTable {
    /// `rmse[m][c]` is method `m`'s RMSE on column `c`. Within each column,
    /// methods are ranked from 1 (lowest RMSE), ties sharing the average rank.
    pub fn new(columns: Vec<String>, methods: &[String], rmse: Vec<Vec<f64>>) -> Self {
        let n_cols = columns.len();
        let mut rank_sum = vec![0.0; methods.len()];
        for c in 0..n_cols {
            let col: Vec<f64> = rmse.iter().map(|r| r[c]).collect();
            for (m, r) in average_ranks(&col).into_iter().enumerate() {
                rank_sum[m] += r;
            }
        }
        let rows = methods
            .iter()
            .zip(rmse)
            .zip(rank_sum)
            .map(|((name, values), rank_sum)| ReportRow {
                method: name.clone(),
                avg_rmse: values.iter().sum::<f64>() / n_cols.max(1) as f64,
                avg_rank: rank_sum / n_cols.max(1) as f64,
                rmse: values,
            })
            .collect();
        Self { columns, rows }
    }

    pub fn row(&self, method: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

impl fmt::Display for ReportTable {
    /// RMSE values are printed in mAP points (x100).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.columns.iter().map(|c| c.len()).max().unwrap_or(0).max(9) + 2;
        let name_w = self.rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max(8) + 2;
        write!(f, "{:<name_w$}", "Method")?;
        for c in &self.columns {
            write!(f, "{:>width$}", c)?;
        }
        writeln!(f, "{:>10}{:>10}", "Avg.RMSE", "Avg.Rank")?;
        for r in &self.rows {
            write!(f, "{:<name_w$}", r.method)?;
            for v in &r.rmse {
                write!(f, "{:>width$.2}", v * 100.0)?;
            }
            writeln!(f, "{:>10.2}{:>10.2}", r.avg_rmse * 100.0, r.avg_rank)?;
        }
        Ok(())
    }
}
