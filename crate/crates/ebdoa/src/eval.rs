//! Evaluation: matching predicted against true arrival directions, the
//! aggregate metrics of localization quality, experiment orchestration over
//! datasets, and heatmap emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::{DatasetRecord, covariance_from_feature};
use crate::dcnn::{Model, model_forward};
use crate::ebdsp::{
    SteeringTable, default_music_dimension, eb_music_spectrum_with_table,
    eb_mvdr_spectrum_with_table,
};
use crate::error::{Error, Result};
use crate::roomsim::DoaSet;
use crate::sphharm::{Direction, GridSpec, angular_distance, build_grid, channel_count};
use crate::sps::{DEFAULT_PEAK_THRESHOLD, SpsGrid, extract_peaks, normalize_map};

/// Success threshold in degrees: an estimate counts as correct when it lies
/// within about half the beamformer main-lobe width of a true direction.
pub const MATCH_THRESHOLD_DEG: f64 = 25.0;

/// One prediction paired with the true direction it localized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub pred: Direction,
    pub truth: Direction,
    pub error_deg: f64,
}

/// The outcome of matching one record's predictions against its truth.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_pred: Vec<Direction>,
    pub unmatched_truth: Vec<Direction>,
}

impl MatchResult {
    pub fn truth_count(&self) -> usize {
        self.pairs.len() + self.unmatched_truth.len()
    }

    pub fn pred_count(&self) -> usize {
        self.pairs.len() + self.unmatched_pred.len()
    }
}

/// Greedy globally-nearest matching: repeatedly pair the closest remaining
/// (prediction, truth) pair while the distance stays below `threshold_deg`.
/// Each direction participates in at most one pair.
pub fn match_doas(pred: &DoaSet, truth: &DoaSet, threshold_deg: f64) -> MatchResult {
    let preds: Vec<Direction> = pred.directions().collect();
    let truths: Vec<Direction> = truth.directions().collect();
    let mut pred_used = vec![false; preds.len()];
    let mut truth_used = vec![false; truths.len()];
    let mut pairs = Vec::new();

    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, &p) in preds.iter().enumerate() {
            if pred_used[i] {
                continue;
            }
            for (j, &t) in truths.iter().enumerate() {
                if truth_used[j] {
                    continue;
                }
                let d = angular_distance(p, t);
                if d < threshold_deg && best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        let Some((d, i, j)) = best else { break };
        pred_used[i] = true;
        truth_used[j] = true;
        pairs.push(MatchedPair { pred: preds[i], truth: truths[j], error_deg: d });
    }

    MatchResult {
        pairs,
        unmatched_pred: preds
            .iter()
            .zip(&pred_used)
            .filter(|&(_, &used)| !used)
            .map(|(&p, _)| p)
            .collect(),
        unmatched_truth: truths
            .iter()
            .zip(&truth_used)
            .filter(|&(_, &used)| !used)
            .map(|(&t, _)| t)
            .collect(),
    }
}

/// Aggregate localization quality over a collection of match results.
///
/// `e_spread` is the standard-deviation-style spread of the matched errors
/// (reported in degrees alongside the mean). Ratios are absent when their
/// denominators are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub e_mean: Option<f64>,
    pub e_spread: Option<f64>,
    pub matched: usize,
    pub total_truth: usize,
    pub total_pred: usize,
}

/// Pools matched pairs across records into recall, precision, and the error
/// statistics of the matched estimates.
pub fn compute_metrics<'a>(results: impl IntoIterator<Item = &'a MatchResult>) -> MetricsReport {
    let mut matched = 0usize;
    let mut total_truth = 0usize;
    let mut total_pred = 0usize;
    let mut errors: Vec<f64> = Vec::new();
    for r in results {
        matched += r.pairs.len();
        total_truth += r.truth_count();
        total_pred += r.pred_count();
        errors.extend(r.pairs.iter().map(|p| p.error_deg));
    }
    let recall = (total_truth > 0).then(|| matched as f64 / total_truth as f64);
    let precision = (total_pred > 0).then(|| matched as f64 / total_pred as f64);
    let (e_mean, e_spread) = if errors.is_empty() {
        (None, None)
    } else {
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / errors.len() as f64;
        (Some(mean), Some(var.sqrt()))
    };
    MetricsReport { recall, precision, e_mean, e_spread, matched, total_truth, total_pred }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(v) => format!("{v:.digits$}"),
        None => "-".into(),
    }
}

impl MetricsReport {
    /// A one-line human-readable table row:
    /// `R_rec R_acc E_mean E_var` with ratios to two decimals and errors in
    /// degrees.
    pub fn render_row(&self) -> String {
        format!(
            "{:<8}{:<8}{:<8}{:<8}",
            fmt_opt(self.recall, 2),
            fmt_opt(self.precision, 2),
            fmt_opt(self.e_mean, 2),
            fmt_opt(self.e_spread, 2),
        )
    }

    /// Machine-readable `key=value` lines, one metric per line, with an
    /// optional key prefix.
    pub fn render_kv(&self, prefix: &str) -> String {
        let mut out = String::new();
        let opt = |v: Option<f64>| match v {
            Some(v) => format!("{v:.6}"),
            None => "none".into(),
        };
        let _ = writeln!(out, "{prefix}r_rec={}", opt(self.recall));
        let _ = writeln!(out, "{prefix}r_acc={}", opt(self.precision));
        let _ = writeln!(out, "{prefix}e_mean={}", opt(self.e_mean));
        let _ = writeln!(out, "{prefix}e_var={}", opt(self.e_spread));
        let _ = writeln!(out, "{prefix}matched={}", self.matched);
        let _ = writeln!(out, "{prefix}truths={}", self.total_truth);
        let _ = writeln!(out, "{prefix}preds={}", self.total_pred);
        out
    }
}

/// Output encodings for [`emit_heatmap`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapFormat {
    /// 60 text rows of 120 comma-separated values, row 0 = lowest
    /// elevation.
    Csv,
    /// Binary 8-bit PGM (P5) of the min-max normalized grid.
    Pgm,
}

/// Writes a pseudo-spectrum to disk for display. CSV carries the raw values
/// losslessly; PGM rescales to [0, 255] through min-max normalization.
pub fn emit_heatmap(sps: &SpsGrid, path: &Path, format: HeatmapFormat) -> Result<()> {
    let bytes = match format {
        HeatmapFormat::Csv => {
            let mut out = String::new();
            for row in 0..sps.rows() {
                for col in 0..sps.cols() {
                    if col > 0 {
                        out.push(',');
                    }
                    let _ = write!(out, "{}", sps.value(row, col));
                }
                out.push('\n');
            }
            out.into_bytes()
        }
        HeatmapFormat::Pgm => {
            let normalized = normalize_map(sps);
            let mut out = format!("P5\n{} {}\n255\n", sps.cols(), sps.rows()).into_bytes();
            out.extend(normalized.values().iter().map(|&v| (255.0 * v).round() as u8));
            out
        }
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Writes the true arrival directions as `azimuth,elevation` CSV lines, for
/// overlaying on a heatmap.
pub fn emit_truth_overlay(truth: &DoaSet, path: &Path) -> Result<()> {
    let mut out = String::from("azimuth_deg,elevation_deg,source_id\n");
    for e in truth.entries() {
        let _ = writeln!(out, "{},{},{}", e.direction.azimuth(), e.direction.elevation(), e.source_id);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// How a record's pseudo-spectrum is rebuilt during evaluation.
#[derive(Clone, Copy)]
pub enum EvalMethod<'a> {
    /// Forward pass of a trained network on the stored feature.
    Dcnn(&'a Model),
    /// EB-MVDR on the covariance reconstructed from the stored feature.
    EbMvdr,
    /// EB-MUSIC on the reconstructed covariance.
    EbMusic,
}

impl EvalMethod<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            EvalMethod::Dcnn(_) => "dcnn",
            EvalMethod::EbMvdr => "eb-mvdr",
            EvalMethod::EbMusic => "eb-music",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Angular gate for prediction/truth pairing, degrees.
    pub match_threshold_deg: f64,
    /// Minimum normalized map value for a cell to count as a peak.
    pub peak_threshold: f64,
    /// Also aggregate metrics per 0.1 s reverberation-time bucket.
    pub by_t60: bool,
    /// Source count assumed by MUSIC when picking the subspace dimension.
    /// `None` uses each record's own source count.
    pub music_sources: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            match_threshold_deg: MATCH_THRESHOLD_DEG,
            peak_threshold: DEFAULT_PEAK_THRESHOLD,
            by_t60: false,
            music_sources: None,
        }
    }
}

/// Per-record evaluation log: what was predicted and how it paired up.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordEval {
    pub index: usize,
    pub seed: u64,
    pub t60: f64,
    pub predictions: DoaSet,
    pub truth: DoaSet,
    pub matching: MatchResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub overall: MetricsReport,
    /// Bucket label ("0.3-0.4") paired with the pooled metrics of the records
    /// whose T60 falls inside. Empty unless requested.
    pub by_t60: Vec<(String, MetricsReport)>,
    pub records: Vec<RecordEval>,
}

impl EvalReport {
    /// Human-readable table, one row overall plus one per T60 bucket.
    pub fn render_text(&self, method: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "method: {method}");
        let _ = writeln!(out, "records: {}", self.records.len());
        let _ = writeln!(out, "{:<8}{:<8}{:<8}{:<8}", "R_rec", "R_acc", "E_mean", "E_var");
        let _ = writeln!(out, "{}", self.overall.render_row());
        if !self.by_t60.is_empty() {
            out.push('\n');
            let _ = writeln!(out, "{:<10}{:<8}{:<8}{:<8}{:<8}", "t60", "R_rec", "R_acc", "E_mean", "E_var");
            for (label, metrics) in &self.by_t60 {
                let _ = writeln!(out, "{label:<10}{}", metrics.render_row());
            }
        }
        out
    }

    /// Machine-readable `key=value` lines mirroring [`render_text`](Self::render_text).
    pub fn render_kv(&self, method: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "method={method}");
        let _ = writeln!(out, "records={}", self.records.len());
        out.push_str(&self.overall.render_kv("overall."));
        for (label, metrics) in &self.by_t60 {
            out.push_str(&metrics.render_kv(&format!("t60.{label}.")));
        }
        out
    }
}

/// Infers the ambisonic order whose squared channel count matches a stored
/// feature length (625 values imply order 4, for example).
pub fn order_for_feature(len: usize) -> Result<usize> {
    (1..=crate::sphharm::MAX_ORDER)
        .find(|&order| {
            let m = channel_count(order);
            m * m == len
        })
        .ok_or_else(|| {
            Error::invalid(format!("feature length {len} does not match any supported ambisonic order"))
        })
}

/// Evaluates one localization method over a slice of dataset records.
///
/// Each record's pseudo-spectrum is rebuilt from its stored feature, peaks are
/// extracted from the normalized map, and the resulting directions are paired
/// against the stored truth. Metrics are pooled over all records, and
/// optionally per reverberation-time bucket.
pub fn run_eval(
    method: EvalMethod<'_>,
    records: &[DatasetRecord],
    options: &EvalOptions,
) -> Result<EvalReport> {
    if !options.match_threshold_deg.is_finite() || options.match_threshold_deg <= 0.0 {
        return Err(Error::invalid(format!(
            "match threshold must be positive, got {}",
            options.match_threshold_deg
        )));
    }
    if !options.peak_threshold.is_finite() {
        return Err(Error::invalid("peak threshold must be finite"));
    }
    let grid = match method {
        EvalMethod::Dcnn(model) => build_grid(model.config().grid),
        _ => build_grid(GridSpec::default()),
    };
    // Steering vectors are shared across records of the same order.
    let mut tables: Vec<(usize, SteeringTable)> = Vec::new();
    let mut evals = Vec::with_capacity(records.len());
    for (index, record) in records.iter().enumerate() {
        let feature = record.feature_f64();
        let sps = match method {
            EvalMethod::Dcnn(model) => {
                model.check_feature_len(feature.len())?;
                model_forward(model, &feature)?
            }
            EvalMethod::EbMvdr | EvalMethod::EbMusic => {
                let order = order_for_feature(feature.len())?;
                let cov = covariance_from_feature(&feature, order)?;
                if !tables.iter().any(|&(o, _)| o == order) {
                    tables.push((order, SteeringTable::new(&grid, order)?));
                }
                let table = &tables.iter().find(|&&(o, _)| o == order).unwrap().1;
                match method {
                    EvalMethod::EbMvdr => eb_mvdr_spectrum_with_table(&cov, &grid, table)?,
                    _ => {
                        let sources = options.music_sources.unwrap_or(record.sources.len());
                        let d = default_music_dimension(sources, cov.dim());
                        eb_music_spectrum_with_table(&cov, &grid, table, d)?
                    }
                }
            }
        };
        let normalized = normalize_map(&sps);
        let predictions = extract_peaks(&normalized, options.peak_threshold);
        let matching = match_doas(&predictions, &record.truth, options.match_threshold_deg);
        evals.push(RecordEval {
            index,
            seed: record.seed,
            t60: f64::from(record.t60),
            predictions,
            truth: record.truth.clone(),
            matching,
        });
    }
    let overall = compute_metrics(evals.iter().map(|e| &e.matching));
    let by_t60 = if options.by_t60 {
        let mut buckets: BTreeMap<i64, Vec<&MatchResult>> = BTreeMap::new();
        for e in &evals {
            buckets.entry((e.t60 * 10.0).floor() as i64).or_default().push(&e.matching);
        }
        buckets
            .into_iter()
            .map(|(key, group)| {
                let label = format!("{:.1}-{:.1}", key as f64 / 10.0, (key + 1) as f64 / 10.0);
                (label, compute_metrics(group))
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(EvalReport { overall, by_t60, records: evals })
}
