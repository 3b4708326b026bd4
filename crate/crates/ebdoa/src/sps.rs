//! Spatial pseudo-spectra: training labels, network outputs, and beamformer
//! maps over the elevation x azimuth grid, plus peak extraction back to
//! directions of arrival.

use crate::error::{Error, Result};
use crate::roomsim::DoaSet;
use crate::sphharm::{GridSpec, build_grid, wrap_azimuth};

/// Default Gaussian label variance in squared degrees.
pub const DEFAULT_SIGMA2: f64 = 5.0;

/// Default decision threshold for peak extraction.
pub const DEFAULT_PEAK_THRESHOLD: f64 = 0.5;

/// What a spatial pseudo-spectrum represents, so consumers can tell
/// supervision targets, model outputs, and raw beamformer powers apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpsKind {
    /// Training target built from ground-truth directions; values in [0, 1].
    Label,
    /// Sigmoid output of the network; values in (0, 1).
    NetworkOutput,
    /// Classical beamformer powers; arbitrary positive scale until
    /// normalized.
    Beamformer,
}

/// A scalar field over the direction grid, stored row-major to match
/// [`build_grid`]'s layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SpsGrid {
    spec: GridSpec,
    kind: SpsKind,
    values: Vec<f64>,
}

impl SpsGrid {
    pub fn new(spec: GridSpec, kind: SpsKind, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.el_bins * spec.az_bins {
            return Err(Error::invalid(format!(
                "grid of {}x{} cells cannot hold {} values",
                spec.el_bins,
                spec.az_bins,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite pseudo-spectrum value {bad}")));
        }
        Ok(Self { spec, kind, values })
    }

    pub fn zeros(spec: GridSpec, kind: SpsKind) -> Self {
        Self { spec, kind, values: vec![0.0; spec.el_bins * spec.az_bins] }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn kind(&self) -> SpsKind {
        self.kind
    }

    pub fn rows(&self) -> usize {
        self.spec.el_bins
    }

    pub fn cols(&self) -> usize {
        self.spec.az_bins
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.spec.az_bins + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.spec.az_bins + col] = v;
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Builds the supervision target for a set of ground-truth arrivals: a 0-1
/// map with a one at each truth's nearest bin, smoothed by the Gaussian
/// `exp(-(d_az^2 + d_el^2) / (2 sigma2))` over bin-center offsets in
/// degrees, with azimuth wraparound. Overlapping sources combine by per-cell
/// maximum and the result is rescaled to a global peak of exactly 1. An
/// empty truth set produces an all-zero grid.
pub fn gaussian_label(truth: &DoaSet, spec: GridSpec, sigma2: f64) -> Result<SpsGrid> {
    if !sigma2.is_finite() || sigma2 <= 0.0 {
        return Err(Error::invalid(format!("label variance must be finite and positive, got {sigma2}")));
    }
    let mut out = SpsGrid::zeros(spec, SpsKind::Label);
    if truth.is_empty() {
        return Ok(out);
    }

    let grid = build_grid(spec);
    let res = spec.res_deg;
    let inv = 1.0 / (2.0 * sigma2);
    // The kernel is separable in the two angular offsets, so one pass per
    // axis covers the whole grid without truncation.
    let mut el_kernel = vec![0.0; spec.el_bins];
    let mut az_kernel = vec![0.0; spec.az_bins];
    for entry in truth.entries() {
        let (r0, c0) = grid.nearest_cell(entry.direction);
        for (r, k) in el_kernel.iter_mut().enumerate() {
            let d = res * (r as f64 - r0 as f64);
            *k = (-d * d * inv).exp();
        }
        for (c, k) in az_kernel.iter_mut().enumerate() {
            let d = wrap_azimuth(res * (c as f64 - c0 as f64));
            *k = (-d * d * inv).exp();
        }
        for (r, &ek) in el_kernel.iter().enumerate() {
            let row = &mut out.values[r * spec.az_bins..(r + 1) * spec.az_bins];
            for (cell, &ak) in row.iter_mut().zip(az_kernel.iter()) {
                *cell = cell.max(ek * ak);
            }
        }
    }

    let peak = out.max_value();
    if peak > 0.0 {
        for v in &mut out.values {
            *v /= peak;
        }
    }
    Ok(out)
}

/// Rescales values affinely onto [0, 1]; a constant grid maps to all zeros.
pub fn normalize_map(sps: &SpsGrid) -> SpsGrid {
    let min = sps.values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = sps.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = sps.clone();
    if max > min {
        let scale = 1.0 / (max - min);
        for v in &mut out.values {
            *v = (*v - min) * scale;
        }
    } else {
        out.values.fill(0.0);
    }
    out
}

/// True when cell `a` wins against neighbor `b`: strictly larger value, or
/// an equal value with a smaller linear index (so a flat plateau yields
/// exactly one peak).
fn beats(values: &[f64], a: usize, b: usize) -> bool {
    values[a] > values[b] || (values[a] == values[b] && a < b)
}

/// Finds all cells that exceed `threshold` and dominate their
/// 8-neighborhood (azimuth wraps around, elevation edges use the neighbors
/// that exist), returned as bin-center directions sorted by descending
/// value. Ties in value are ordered by linear cell index.
pub fn extract_peaks(sps: &SpsGrid, threshold: f64) -> DoaSet {
    let rows = sps.rows() as isize;
    let cols = sps.cols() as isize;
    let grid = build_grid(sps.spec);
    let mut peaks: Vec<(f64, usize)> = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let idx = (r * cols + c) as usize;
            if !(sps.values[idx] > threshold) {
                continue;
            }
            let mut is_peak = true;
            'neighbors: for dr in -1..=1isize {
                let rr = r + dr;
                if rr < 0 || rr >= rows {
                    continue;
                }
                for dc in -1..=1isize {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let cc = (c + dc).rem_euclid(cols);
                    let nidx = (rr * cols + cc) as usize;
                    if nidx != idx && !beats(&sps.values, idx, nidx) {
                        is_peak = false;
                        break 'neighbors;
                    }
                }
            }
            if is_peak {
                peaks.push((sps.values[idx], idx));
            }
        }
    }
    peaks.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    DoaSet::from_directions(peaks.iter().map(|&(_, idx)| grid.directions()[idx]))
}
